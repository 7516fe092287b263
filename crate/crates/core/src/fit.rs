//! Fitting codes of a frozen model to meshes with Adam.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledCorpus;
use crate::error::{Result, SfmError};
use crate::mesh::Mesh;
use crate::model::{ShapeCode, SphereFaceModel, EPS_NORM};
use crate::optim::{adam_step, scheduled_lr, AdamState, ParamGroup, Schedule, ScheduleUnit};

/// Loss samples are recorded at this iteration stride.
pub const TRAJECTORY_STRIDE: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub iterations: usize,
    /// Recorded for provenance; the fit itself draws no random numbers.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            decay_factor: 0.5,
            decay_every: 128,
            iterations: 1000,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn group(&self) -> Result<ParamGroup> {
        let schedule = Schedule::new(self.decay_factor, self.decay_every, ScheduleUnit::Iterations)?;
        ParamGroup::new("code", self.lr, schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    /// Mean squared per-vertex distance, i.e. RMSE squared.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub code: ShapeCode,
    pub final_rmse: f64,
    /// Loss of the closed-form projection the fit started from.
    pub projection_loss: f64,
    pub final_loss: f64,
    pub trajectory: Vec<TrajectoryPoint>,
}

struct Objective<'a> {
    model: &'a SphereFaceModel,
    /// `target - mean`.
    centered: DVector<f64>,
    inv_n: f64,
}

impl Objective<'_> {
    /// Loss and gradient in the packed `[x..., s]` layout.
    fn eval(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = self.model.dim();
        let x = DVector::from_column_slice(&params[..d]);
        let s = params[d];
        let norm = x.norm();
        if norm.is_nan() || norm <= EPS_NORM {
            return Err(SfmError::NearZeroNorm {
                what: "identity vector",
                norm,
                eps: EPS_NORM,
            });
        }
        let u = &x / norm;
        let e = self.model.basis() * (&u * s) - &self.centered;
        let loss = e.norm_squared() * self.inv_n;
        if !loss.is_finite() {
            return Err(SfmError::NonFinite("fit loss".into()));
        }
        let g_p = self.model.basis().tr_mul(&e) * (2.0 * self.inv_n);
        let g_s = g_p.dot(&u);
        let g_x = (&g_p - &u * g_s) * (s / norm);
        grad[..d].copy_from_slice(g_x.as_slice());
        grad[d] = g_s;
        Ok(loss)
    }
}

/// Adam on `||reconstruct(x, s) - target||^2 / n`, started from the
/// closed-form projection. The best iterate seen is returned, so the result
/// is never worse than the projection.
pub fn fit_mesh(model: &SphereFaceModel, target: &Mesh, config: &FitConfig) -> Result<FitResult> {
    let group = config.group()?;
    let init = crate::model::project(model, target)?;
    let d = model.dim();
    let objective = Objective {
        model,
        centered: DVector::from_column_slice(target.vertices()) - model.mean(),
        inv_n: 1.0 / model.vertex_count() as f64,
    };

    let mut params: Vec<f64> = init.x.iter().copied().collect();
    params.push(init.s);
    let mut grad = vec![0.0; d + 1];
    let mut state = AdamState::new(d + 1);

    let projection_loss = objective.eval(&params, &mut grad)?;
    let mut best = (projection_loss, params.clone());
    let mut trajectory = vec![TrajectoryPoint {
        iteration: 0,
        loss: projection_loss,
    }];

    for it in 0..config.iterations {
        let lr = scheduled_lr(&group, it as u64);
        adam_step(&mut state, &mut params, &grad, lr)?;
        let loss = objective.eval(&params, &mut grad)?;
        if loss < best.0 {
            best = (loss, params.clone());
        }
        let done = it + 1;
        if done % TRAJECTORY_STRIDE == 0 || done == config.iterations {
            trajectory.push(TrajectoryPoint { iteration: done, loss });
        }
    }

    let (final_loss, params) = best;
    let code = ShapeCode::new(DVector::from_column_slice(&params[..d]), params[d]);
    Ok(FitResult {
        code,
        final_rmse: final_loss.max(0.0).sqrt(),
        projection_loss,
        final_loss,
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub index: usize,
    pub message: String,
}

/// Per-mesh outcomes in input order.
#[derive(Debug, Clone)]
pub struct FitBatch {
    pub results: Vec<Option<FitResult>>,
    pub failures: Vec<FitFailure>,
}

impl FitBatch {
    pub fn succeeded(&self) -> usize {
        self.results.iter().filter(|r| r.is_some()).count()
    }

    /// Mean of the per-mesh RMSE over successful fits.
    pub fn mean_rmse(&self) -> Option<f64> {
        let ok: Vec<f64> = self.results.iter().flatten().map(|r| r.final_rmse).collect();
        (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
    }
}

/// Independent fits, possibly in parallel. A failing mesh is recorded and the
/// others continue.
pub fn fit_meshes(model: &SphereFaceModel, meshes: &[Mesh], config: &FitConfig) -> Result<FitBatch> {
    if meshes.is_empty() {
        return Err(SfmError::InvalidConfig("nothing to fit: no meshes".into()));
    }
    config.group()?;
    let outcomes: Vec<Result<FitResult>> = meshes.par_iter().map(|m| fit_mesh(model, m, config)).collect();
    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => results.push(Some(r)),
            Err(e) => {
                failures.push(FitFailure {
                    index,
                    message: e.to_string(),
                });
                results.push(None);
            }
        }
    }
    Ok(FitBatch { results, failures })
}

pub fn fit_corpus(model: &SphereFaceModel, corpus: &LabeledCorpus, config: &FitConfig) -> Result<FitBatch> {
    fit_meshes(model, corpus.meshes(), config)
}
