use rand::Rng;

/// `n` ascending depths in `[t_near, t_far]`: one per equal-width bin,
/// drawn uniformly within the bin when `rng` is given, else the bin midpoint.
pub fn stratified_sample<R: Rng + ?Sized>(
    t_near: f64,
    t_far: f64,
    n: usize,
    rng: Option<&mut R>,
) -> Vec<f64> {
    assert!(n >= 1, "stratified_sample needs at least one bin");
    let width = (t_far - t_near) / n as f64;
    match rng {
        Some(rng) => (0..n)
            .map(|i| t_near + (i as f64 + rng.gen::<f64>()) * width)
            .collect(),
        None => (0..n)
            .map(|i| t_near + (i as f64 + 0.5) * width)
            .collect(),
    }
}

/// Spacing between adjacent depths; the last interval is capped at `(t_far - t_near) / n`.
pub fn sample_deltas(depths: &[f64], t_near: f64, t_far: f64) -> Vec<f64> {
    let cap = (t_far - t_near) / depths.len() as f64;
    let mut deltas: Vec<f64> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    deltas.push(cap);
    deltas
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn midpoints_without_jitter() {
        let d = stratified_sample::<ChaCha8Rng>(0.0, 1.0, 4, None);
        assert_eq!(d, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn jittered_depths_stay_in_their_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = stratified_sample(2.0, 6.0, 64, Some(&mut rng));
        for (i, &x) in d.iter().enumerate() {
            let lo = 2.0 + i as f64 * 4.0 / 64.0;
            assert!(x >= lo && x < lo + 4.0 / 64.0);
        }
        assert!(d.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn seeded_jitter_is_reproducible() {
        let a = stratified_sample(0.0, 1.0, 8, Some(&mut ChaCha8Rng::seed_from_u64(9)));
        let b = stratified_sample(0.0, 1.0, 8, Some(&mut ChaCha8Rng::seed_from_u64(9)));
        assert_eq!(a, b);
    }

    #[test]
    fn last_delta_is_capped() {
        let d = stratified_sample::<ChaCha8Rng>(0.0, 1.0, 4, None);
        assert_eq!(sample_deltas(&d, 0.0, 1.0), vec![0.25; 4]);
    }
}
