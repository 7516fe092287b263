//! Adam with bias correction, step-decay learning-rate schedules and a
//! central-difference gradient checker.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfmError};

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state with the canonical defaults (0.9, 0.999, 1e-8).
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != state.len() || grads.len() != state.len() {
        return Err(SfmError::DimensionMismatch {
            what: "adam parameter/gradient length",
            expected: state.len(),
            actual: if params.len() != state.len() {
                params.len()
            } else {
                grads.len()
            },
        });
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(SfmError::InvalidConfig(format!("learning rate {lr} must be positive")));
    }
    if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
        return Err(SfmError::NonFinite(format!("gradient entry {k}")));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let t = state.t as i32;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g;
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g;
        let m_hat = state.m[k] / bc1;
        let v_hat = state.v[k] / bc2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Whether a schedule counts epochs or optimizer iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleUnit {
    Epochs,
    Iterations,
}

/// Step decay: `base_lr * decay_factor ^ floor(step / decay_every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub decay_factor: f64,
    pub decay_every: u64,
    pub unit: ScheduleUnit,
}

impl Schedule {
    pub fn new(decay_factor: f64, decay_every: u64, unit: ScheduleUnit) -> Result<Self> {
        if !(decay_factor > 0.0 && decay_factor <= 1.0) {
            return Err(SfmError::InvalidConfig(format!(
                "decay factor {decay_factor} must be in (0, 1]"
            )));
        }
        if decay_every == 0 {
            return Err(SfmError::InvalidConfig("decay interval must be positive".into()));
        }
        Ok(Self {
            decay_factor,
            decay_every,
            unit,
        })
    }

    /// One tenth every 20 epochs.
    pub fn training_default() -> Self {
        Self::new(0.1, 20, ScheduleUnit::Epochs).unwrap()
    }

    /// Halved every 128 iterations.
    pub fn fitting_default() -> Self {
        Self::new(0.5, 128, ScheduleUnit::Iterations).unwrap()
    }
}

/// A named learning-rate group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub base_lr: f64,
    pub schedule: Schedule,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, base_lr: f64, schedule: Schedule) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(SfmError::InvalidConfig(format!(
                "base learning rate {base_lr} must be positive"
            )));
        }
        Ok(Self {
            name: name.into(),
            base_lr,
            schedule,
        })
    }
}

pub fn scheduled_lr(group: &ParamGroup, step: u64) -> f64 {
    let decays = step / group.schedule.decay_every;
    group.base_lr * group.schedule.decay_factor.powi(decays.min(i32::MAX as u64) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares the analytic gradient returned by `f` at `point` with central
/// differences of step `h` along every coordinate.
pub fn check_gradients<F>(f: F, point: &[f64], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(SfmError::InvalidConfig(format!("step {h} must be positive")));
    }
    let (_, analytic) = f(point)?;
    if analytic.len() != point.len() {
        return Err(SfmError::DimensionMismatch {
            what: "analytic gradient length",
            expected: point.len(),
            actual: analytic.len(),
        });
    }
    let mut probe = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        probe[k] = point[k] + h;
        let (plus, _) = f(&probe)?;
        probe[k] = point[k] - h;
        let (minus, _) = f(&probe)?;
        probe[k] = point[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(SfmError::NonFinite(format!("loss at probe coordinate {k}")));
        }
        numeric.push((plus - minus) / (2.0 * h));
    }
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (k, e)| if e > best.1 { (k, e) } else { best });
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
        tol,
    })
}
