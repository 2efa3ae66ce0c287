/// Exponentially decayed learning rate: `base_lr * decay_factor^(step / decay_steps)`.
///
/// The exponent is continuous, so the rate falls smoothly between decay
/// boundaries rather than in stairs.
pub fn lr_at(step: u64, base_lr: f64, decay_factor: f64, decay_steps: u64) -> f64 {
    debug_assert!(base_lr > 0.0 && decay_factor > 0.0 && decay_factor <= 1.0);
    debug_assert!(decay_steps > 0);
    base_lr * decay_factor.powf(step as f64 / decay_steps as f64)
}
