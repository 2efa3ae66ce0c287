//! Moving points through time along a velocity field.
//!
//! The pointwise solvers run in `f64` and serve inference and oracle checks.
//! [`integrate_graph`] unrolls fixed-step RK4 inside a computation graph so
//! training can differentiate through the trajectory.

use dynrf_autodiff::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::BoundFlow;
use crate::geometry::Vec3;

pub const DEFAULT_RTOL: f64 = 1e-4;
pub const DEFAULT_ATOL: f64 = 1e-5;
pub const DEFAULT_STEP_BUDGET: usize = 10_000;

/// Velocity `dx/dt` at `(p, t)`.
pub trait VectorField {
    fn velocity(&self, p: Vec3, t: f64) -> Result<Vec3>;
}

impl<F: Fn(Vec3, f64) -> Vec3> VectorField for F {
    fn velocity(&self, p: Vec3, t: f64) -> Result<Vec3> {
        Ok(self(p, t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum IntegrationMode {
    FixedRk4 { step_count: usize },
    AdaptiveRk45 { rtol: f64, atol: f64, step_budget: usize },
}

impl IntegrationMode {
    pub fn adaptive() -> Self {
        IntegrationMode::AdaptiveRk45 {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

impl Default for IntegrationMode {
    fn default() -> Self {
        Self::adaptive()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrationSpec {
    pub t_start: f64,
    pub t_end: f64,
    pub mode: IntegrationMode,
}

impl IntegrationSpec {
    fn validate(&self) -> Result<()> {
        if !self.t_start.is_finite() || !self.t_end.is_finite() {
            return Err(Error::InvalidInput("integration times must be finite".into()));
        }
        match self.mode {
            IntegrationMode::FixedRk4 { step_count: 0 } => {
                Err(Error::InvalidInput("fixed RK4 needs at least one step".into()))
            }
            IntegrationMode::AdaptiveRk45 { rtol, atol, step_budget } => {
                if !(rtol > 0.0 && atol > 0.0) || step_budget == 0 {
                    return Err(Error::InvalidInput("adaptive tolerances and budget must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<Vec3>,
}

impl Trajectory {
    pub fn end(&self) -> Vec3 {
        *self.positions.last().expect("trajectory is never empty")
    }
}

/// Fixed RK4 step count used for an interval of length `dt`.
pub fn fixed_step_count(dt: f64) -> usize {
    ((dt.abs() * 32.0).ceil() as usize).max(4)
}

fn checked(v: Vec3) -> Result<Vec3> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("flow field output".into()))
    }
}

pub fn rk4_step(field: &impl VectorField, p: Vec3, t: f64, h: f64) -> Result<Vec3> {
    if h == 0.0 {
        return Ok(p);
    }
    let k1 = checked(field.velocity(p, t)?)?;
    let k2 = checked(field.velocity(p + k1 * (0.5 * h), t + 0.5 * h)?)?;
    let k3 = checked(field.velocity(p + k2 * (0.5 * h), t + 0.5 * h)?)?;
    let k4 = checked(field.velocity(p + k3 * h, t + h)?)?;
    Ok(p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince step: fifth-order solution and the embedded error vector.
fn dopri_step(field: &impl VectorField, p: Vec3, t: f64, h: f64) -> Result<(Vec3, Vec3)> {
    let mut k = [Vec3::ZERO; 7];
    for s in 0..7 {
        let mut y = p;
        for (j, kj) in k.iter().enumerate().take(s) {
            y += *kj * (h * A[s][j]);
        }
        k[s] = checked(field.velocity(y, t + C[s] * h)?)?;
    }
    let mut hi = p;
    let mut err = Vec3::ZERO;
    for s in 0..7 {
        hi += k[s] * (h * B5[s]);
        err += k[s] * (h * (B5[s] - B4[s]));
    }
    Ok((hi, err))
}

pub fn integrate(field: &impl VectorField, p: Vec3, spec: &IntegrationSpec) -> Result<Trajectory> {
    spec.validate()?;
    if !p.is_finite() {
        return Err(Error::NonFinite("integration start point".into()));
    }
    let mut traj = Trajectory {
        times: vec![spec.t_start],
        positions: vec![p],
    };
    let span = spec.t_end - spec.t_start;
    if span == 0.0 {
        return Ok(traj);
    }
    match spec.mode {
        IntegrationMode::FixedRk4 { step_count } => {
            let h = span / step_count as f64;
            let mut y = p;
            for i in 0..step_count {
                let t = spec.t_start + i as f64 * h;
                y = rk4_step(field, y, t, h)?;
                traj.times.push(if i + 1 == step_count { spec.t_end } else { t + h });
                traj.positions.push(y);
            }
        }
        IntegrationMode::AdaptiveRk45 { rtol, atol, step_budget } => {
            let dir = span.signum();
            let mut h = span.abs().min(0.1) * dir;
            let mut t = spec.t_start;
            let mut y = p;
            let mut attempts = 0;
            while (spec.t_end - t) * dir > 0.0 {
                if attempts == step_budget {
                    return Err(Error::StiffFlow(step_budget));
                }
                attempts += 1;
                let remaining = spec.t_end - t;
                let last = h.abs() >= remaining.abs();
                let step = if last { remaining } else { h };
                let (y_new, err) = dopri_step(field, y, t, step)?;
                let tol = atol + rtol * y.norm().max(y_new.norm());
                let e = err.norm();
                if e > tol {
                    h = step * 0.5;
                    continue;
                }
                t = if last { spec.t_end } else { t + step };
                y = y_new;
                traj.times.push(t);
                traj.positions.push(y);
                if e < tol / 32.0 {
                    h = step * 2.0;
                }
            }
        }
    }
    Ok(traj)
}

/// Position at `t_g` of the point that sits at `x_s` at time `t_s`.
///
/// Backward intervals integrate with a negative step.
pub fn predict_correspondence(
    field: &impl VectorField,
    x_s: Vec3,
    t_s: f64,
    t_g: f64,
    mode: IntegrationMode,
) -> Result<Vec3> {
    Ok(integrate(
        field,
        x_s,
        &IntegrationSpec {
            t_start: t_s,
            t_end: t_g,
            mode,
        },
    )?
    .end())
}

/// Differentiable batched RK4: advances `points: [B, 3]` from `t_start[i]` to `t_end[i]`.
///
/// The whole batch shares the step count of its longest interval,
/// `max(4, ceil(|dt| * 32))`, with a per-row step length.
pub fn integrate_graph(
    g: &mut Graph,
    flow: &BoundFlow,
    points: Var,
    t_start: &[f32],
    t_end: &[f32],
) -> Result<Var> {
    let b = t_start.len();
    if t_end.len() != b || g.shape(points) != [b, 3] {
        return Err(Error::InvalidInput("integration batch shapes disagree".into()));
    }
    let steps = t_start
        .iter()
        .zip(t_end)
        .map(|(s, e)| fixed_step_count((e - s) as f64))
        .max()
        .unwrap_or(4);
    let h: Vec<f32> = t_start
        .iter()
        .zip(t_end)
        .map(|(s, e)| (e - s) / steps as f32)
        .collect();
    let col = |g: &mut Graph, v: Vec<f32>| -> Result<Var> { Ok(g.constant(Tensor::new([b, 1], v)?)) };
    let h_full = col(g, h.clone())?;
    let h_half = col(g, h.iter().map(|x| 0.5 * x).collect())?;
    let h_sixth = col(g, h.iter().map(|x| x / 6.0).collect())?;
    let mut y = points;
    for i in 0..steps {
        let at = |frac: f32| -> Vec<f32> {
            t_start
                .iter()
                .zip(&h)
                .map(|(s, h)| s + (i as f32 + frac) * h)
                .collect()
        };
        let t0 = col(g, at(0.0))?;
        let t_mid = col(g, at(0.5))?;
        let t1 = col(g, at(1.0))?;
        let k1 = flow.at(g, y, t0)?;
        let d = g.mul(k1, h_half)?;
        let y2 = g.add(y, d)?;
        let k2 = flow.at(g, y2, t_mid)?;
        let d = g.mul(k2, h_half)?;
        let y3 = g.add(y, d)?;
        let k3 = flow.at(g, y3, t_mid)?;
        let d = g.mul(k3, h_full)?;
        let y4 = g.add(y, d)?;
        let k4 = flow.at(g, y4, t1)?;
        let k23 = g.add(k2, k3)?;
        let k23 = g.scale(k23, 2.0);
        let s = g.add(k1, k23)?;
        let s = g.add(s, k4)?;
        let d = g.mul(s, h_sixth)?;
        y = g.add(y, d)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(p: Vec3, _t: f64) -> Vec3 {
        p
    }

    #[test]
    fn constant_field_single_step() {
        let f = |_: Vec3, _: f64| Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(rk4_step(&f, Vec3::ZERO, 0.0, 1.0).unwrap(), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn linear_field_truncated_taylor() {
        let p = rk4_step(&linear, Vec3::new(1.0, 0.0, 0.0), 0.0, 1.0).unwrap();
        let expect = 1.0 + 1.0 + 0.5 + 1.0 / 6.0 + 1.0 / 24.0;
        assert!((p.x - expect).abs() < 1e-15);
        assert_eq!((p.y, p.z), (0.0, 0.0));
    }

    #[test]
    fn zero_step_is_identity() {
        let p = Vec3::new(0.3, -2.0, 5.0);
        assert_eq!(rk4_step(&linear, p, 0.0, 0.0).unwrap(), p);
    }

    #[test]
    fn rk4_exact_for_cubic_in_time() {
        let f = |_: Vec3, t: f64| Vec3::new(t * t * t, 3.0 * t * t, 1.0);
        let p = rk4_step(&f, Vec3::ZERO, 0.5, 0.7).unwrap();
        let (a, b) = (0.5f64, 1.2f64);
        let x = (b.powi(4) - a.powi(4)) / 4.0;
        let y = b.powi(3) - a.powi(3);
        assert!((p.x - x).abs() < 1e-14 && (p.y - y).abs() < 1e-14 && (p.z - 0.7).abs() < 1e-14);
    }

    #[test]
    fn constant_field_integrates_exactly() {
        let v = Vec3::new(0.25, -0.5, 2.0);
        let f = move |_: Vec3, _: f64| v;
        let p = Vec3::new(1.0, 2.0, 3.0);
        for mode in [IntegrationMode::FixedRk4 { step_count: 7 }, IntegrationMode::adaptive()] {
            let end = predict_correspondence(&f, p, -0.4, 0.6, mode).unwrap();
            assert!((end - (p + v)).norm() < 1e-12);
        }
    }

    #[test]
    fn adaptive_exponential() {
        let spec = IntegrationSpec {
            t_start: 0.0,
            t_end: 1.0,
            mode: IntegrationMode::adaptive(),
        };
        let tr = integrate(&linear, Vec3::new(1.0, 1.0, 1.0), &spec).unwrap();
        let e = std::f64::consts::E;
        for c in tr.end().to_array() {
            assert!(((c - e) / e).abs() < 1e-4);
        }
        assert_eq!(tr.times[0], 0.0);
        assert_eq!(*tr.times.last().unwrap(), 1.0);
        assert!(tr.times.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn reversal_returns_to_start() {
        let f = |p: Vec3, t: f64| Vec3::new((p.y + t).sin(), 0.5 * p.x.cos(), -0.3 * p.z);
        let p = Vec3::new(0.2, -0.4, 0.9);
        let fwd = predict_correspondence(&f, p, -0.5, 0.8, IntegrationMode::adaptive()).unwrap();
        let back = predict_correspondence(&f, fwd, 0.8, -0.5, IntegrationMode::adaptive()).unwrap();
        assert!((back - p).norm() < 1e-3);
    }

    #[test]
    fn stiff_flow_exhausts_budget() {
        let f = |p: Vec3, _: f64| p * -1e7;
        let spec = IntegrationSpec {
            t_start: 0.0,
            t_end: 1.0,
            mode: IntegrationMode::AdaptiveRk45 {
                rtol: DEFAULT_RTOL,
                atol: DEFAULT_ATOL,
                step_budget: 200,
            },
        };
        assert!(matches!(
            integrate(&f, Vec3::new(1.0, 1.0, 1.0), &spec),
            Err(Error::StiffFlow(200))
        ));
    }

    #[test]
    fn non_finite_field_rejected() {
        let f = |_: Vec3, _: f64| Vec3::new(f64::NAN, 0.0, 0.0);
        assert!(rk4_step(&f, Vec3::ZERO, 0.0, 0.1).is_err());
    }

    #[test]
    fn step_count_rule() {
        assert_eq!(fixed_step_count(0.0), 4);
        assert_eq!(fixed_step_count(0.1), 4);
        assert_eq!(fixed_step_count(0.5), 16);
        assert_eq!(fixed_step_count(-2.0), 64);
    }
}
