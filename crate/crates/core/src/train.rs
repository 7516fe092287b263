//! Stage-one training on a labeled 3D corpus.
//!
//! The basis, the per-sample codes `(x_i, s_i)`, the classifier weights and
//! the class centers are optimized jointly with Adam. Codes are free
//! variables in the auto-decoder style: a sample's code and its optimizer
//! state only change in batches that contain it. The mean shape stays frozen
//! at the corpus mean.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::corpus::LabeledCorpus;
use crate::error::{Result, SfmError};
use crate::losses::{total_stage1_loss, CenterDenominator, ClassCenters, ClassifierWeights, LossWeights, Stage1Inputs};
use crate::mesh::rmse_point_to_point;
use crate::model::{fit_pca, orthonormality_error, orthonormalize, project, reconstruct, ShapeCode, SphereFaceModel};
use crate::optim::{adam_step, scheduled_lr, AdamState, ParamGroup, Schedule, ScheduleUnit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    pub lr_code: f64,
    pub lr_basis: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub decay_factor: f64,
    pub decay_every_epochs: u64,
    pub lambdas: LossWeights,
    pub seed: u64,
    pub center_denominator: CenterDenominator,
    pub logit_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 199,
            lr_code: 0.02,
            lr_basis: 0.005,
            batch_size: 512,
            epochs: 60,
            decay_factor: 0.1,
            decay_every_epochs: 20,
            lambdas: LossWeights::default(),
            seed: 0,
            center_denominator: CenterDenominator::PairMean,
            logit_scale: 1.0,
        }
    }
}

impl TrainConfig {
    fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.decay_factor, self.decay_every_epochs, ScheduleUnit::Epochs)
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.d == 0 {
            issues.push("d must be positive".to_string());
        }
        if self.batch_size == 0 {
            issues.push("batch_size must be positive".to_string());
        }
        for (name, v) in [
            ("lr_code", self.lr_code),
            ("lr_basis", self.lr_basis),
            ("logit_scale", self.logit_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                issues.push(format!("{name} must be positive, got {v}"));
            }
        }
        let l = self.lambdas;
        for (name, v) in [
            ("lambda_m", l.lambda_m),
            ("lambda_c", l.lambda_c),
            ("lambda_s", l.lambda_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                issues.push(format!("{name} must be non-negative, got {v}"));
            }
        }
        if let Err(e) = self.schedule() {
            issues.push(e.to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(SfmError::InvalidConfig(issues.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_m: f64,
    pub l_c: f64,
    pub l_s: f64,
    pub l_f: f64,
    pub lr_code: f64,
    pub lr_basis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Mean per-mesh RMSE of the PCA initialization.
    pub initial_rmse: f64,
    /// Mean per-mesh RMSE after the final orthonormalization and re-projection.
    pub final_rmse: f64,
    /// `||A^T A - I||_F` right before the closing orthonormalization.
    pub ortho_error_before_finalize: f64,
    pub ortho_error_final: f64,
    /// Kept out of the JSON so reports are byte-identical across runs.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: SphereFaceModel,
    pub codes: Vec<ShapeCode>,
    pub weights: ClassifierWeights,
    pub centers: ClassCenters,
    pub report: TrainReport,
}

/// Mean per-mesh point-to-point RMSE of `codes` reconstructed through `model`.
pub fn mean_rmse(model: &SphereFaceModel, corpus: &LabeledCorpus, codes: &[ShapeCode]) -> Result<f64> {
    let mut total = 0.0;
    for (mesh, code) in corpus.meshes().iter().zip(codes) {
        total += rmse_point_to_point(&reconstruct(model, code)?, mesh)?;
    }
    Ok(total / corpus.len() as f64)
}

fn project_all(model: &SphereFaceModel, corpus: &LabeledCorpus) -> Result<Vec<ShapeCode>> {
    corpus.meshes().iter().map(|m| project(model, m)).collect()
}

/// Trains the basis from a PCA start. With `epochs == 0` the PCA model and
/// its projections are returned as is.
pub fn train_stage1(corpus: &LabeledCorpus, config: &TrainConfig) -> Result<TrainOutput> {
    let started = Instant::now();
    corpus.validate()?;
    config.validate()?;
    let d = config.d;
    let pca = fit_pca(corpus.meshes(), d)?;
    let init_codes = project_all(&pca, corpus)?;
    let initial_rmse = mean_rmse(&pca, corpus, &init_codes)?;

    let n = corpus.len();
    let k = corpus.n_classes();
    let mut x = DMatrix::zeros(n, d);
    let mut s = DVector::zeros(n);
    for (i, c) in init_codes.iter().enumerate() {
        x.set_row(i, &c.x.transpose());
        s[i] = c.s;
    }
    let (weights, centers) = initial_classifier(&init_codes, corpus.labels(), k, d)?;

    if config.epochs == 0 {
        let ortho = orthonormality_error(pca.basis());
        return Ok(TrainOutput {
            model: pca,
            codes: init_codes,
            weights,
            centers,
            report: TrainReport {
                seed: config.seed,
                epochs: Vec::new(),
                initial_rmse,
                final_rmse: initial_rmse,
                ortho_error_before_finalize: ortho,
                ortho_error_final: ortho,
                wall_time_secs: started.elapsed().as_secs_f64(),
            },
        });
    }

    let mean = pca.mean().clone();
    let mut basis = pca.basis().clone();
    let mut w = weights.0;
    let mut c = centers.0;
    let targets = corpus.targets();
    let labels = corpus.labels();

    let schedule = config.schedule()?;
    let code_group = ParamGroup::new("code", config.lr_code, schedule)?;
    let basis_group = ParamGroup::new("basis", config.lr_basis, schedule)?;
    let mut basis_state = AdamState::new(basis.len());
    let mut weight_state = AdamState::new(w.len());
    let mut center_state = AdamState::new(c.len());
    let mut code_states: Vec<AdamState> = (0..n).map(|_| AdamState::new(d + 1)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut batch_index = 0usize;

    for epoch in 0..config.epochs {
        let lr_code = scheduled_lr(&code_group, epoch as u64);
        let lr_basis = scheduled_lr(&basis_group, epoch as u64);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for batch in order.chunks(config.batch_size) {
            let bx = x.select_rows(batch);
            let bs = DVector::from_iterator(batch.len(), batch.iter().map(|&i| s[i]));
            let bl: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let bt = targets.select_rows(batch);
            let cw = ClassifierWeights(w.clone());
            let cc = ClassCenters(c.clone());
            let inputs = Stage1Inputs {
                basis: &basis,
                mean: &mean,
                x: &bx,
                s: &bs,
                labels: &bl,
                targets: &bt,
                weights: &cw,
                centers: &cc,
                logit_scale: config.logit_scale,
                center_denominator: config.center_denominator,
            };
            let loss = total_stage1_loss(&inputs, &config.lambdas).map_err(|e| match e {
                SfmError::NonFinite(what) => SfmError::NonFinite(format!("epoch {epoch}, batch {batch_index}: {what}")),
                other => other,
            })?;
            let m = batch.len() as f64;
            sums[0] += loss.l_m * m;
            sums[1] += loss.l_c * m;
            sums[2] += loss.l_s * m;
            sums[3] += loss.total.value * m;

            let g = &loss.total.grads;
            if let Some(gx) = &g.x {
                let gs = g.s.as_ref();
                for (row, &i) in batch.iter().enumerate() {
                    let mut params: Vec<f64> = x.row(i).iter().copied().collect();
                    params.push(s[i]);
                    let mut grad: Vec<f64> = gx.row(row).iter().copied().collect();
                    grad.push(gs.map_or(0.0, |gs| gs[row]));
                    adam_step(&mut code_states[i], &mut params, &grad, lr_code)?;
                    s[i] = params[d];
                    params.truncate(d);
                    x.set_row(i, &DVector::from_vec(params).transpose());
                }
            }
            if let Some(gb) = &g.basis {
                adam_step(&mut basis_state, basis.as_mut_slice(), gb.as_slice(), lr_basis)?;
            }
            if let Some(gw) = &g.weights {
                adam_step(&mut weight_state, w.as_mut_slice(), gw.as_slice(), lr_code)?;
            }
            if let Some(gc) = &g.centers {
                adam_step(&mut center_state, c.as_mut_slice(), gc.as_slice(), lr_code)?;
            }
            batch_index += 1;
        }
        let inv = 1.0 / n as f64;
        records.push(EpochRecord {
            epoch,
            l_m: sums[0] * inv,
            l_c: sums[1] * inv,
            l_s: sums[2] * inv,
            l_f: sums[3] * inv,
            lr_code,
            lr_basis,
        });
    }

    let ortho_error_before_finalize = orthonormality_error(&basis);
    let final_basis = orthonormalize(&basis)?;
    let model = SphereFaceModel::new(mean, final_basis, pca.faces().map(<[_]>::to_vec))?;
    let codes = project_all(&model, corpus)?;
    let final_rmse = mean_rmse(&model, corpus, &codes)?;
    let ortho_error_final = orthonormality_error(model.basis());

    Ok(TrainOutput {
        model,
        codes,
        weights: ClassifierWeights(w),
        centers: ClassCenters(c),
        report: TrainReport {
            seed: config.seed,
            epochs: records,
            initial_rmse,
            final_rmse,
            ortho_error_before_finalize,
            ortho_error_final,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    })
}

/// Weights: normalized class means of the identities. Centers: class means of
/// the shape parameters.
fn initial_classifier(
    codes: &[ShapeCode],
    labels: &[usize],
    k: usize,
    d: usize,
) -> Result<(ClassifierWeights, ClassCenters)> {
    let mut id_sum = DMatrix::zeros(k, d);
    let mut p_sum = DMatrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (code, &l) in codes.iter().zip(labels) {
        let u = code.identity()?;
        let mut row = id_sum.row_mut(l);
        row += u.transpose();
        let mut row = p_sum.row_mut(l);
        row += (u * code.s).transpose();
        counts[l] += 1;
    }
    for (j, &cnt) in counts.iter().enumerate() {
        let mut row = p_sum.row_mut(j);
        row /= cnt as f64;
        let norm = id_sum.row(j).norm();
        if norm <= crate::model::EPS_NORM {
            return Err(SfmError::Degenerate(format!(
                "class {j}: identities cancel out, cannot initialize its weight"
            )));
        }
        let mut row = id_sum.row_mut(j);
        row /= norm;
    }
    Ok((ClassifierWeights(id_sum), ClassCenters(p_sum)))
}

/// Writes `label,s,x_0..x_{d-1}` rows. The stored `x` is the unit identity.
pub fn export_codes_csv(codes: &[ShapeCode], labels: &[i64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if codes.len() != labels.len() {
        return Err(SfmError::DimensionMismatch {
            what: "labels for codes",
            expected: codes.len(),
            actual: labels.len(),
        });
    }
    let text = codes_csv_string(codes, labels)?;
    let mut f = fs::File::create(path).map_err(|e| SfmError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| SfmError::io(path, e))
}

pub fn codes_csv_string(codes: &[ShapeCode], labels: &[i64]) -> Result<String> {
    let d = codes.first().map_or(0, ShapeCode::dim);
    let mut out = String::from("label,s");
    for j in 0..d {
        out.push_str(&format!(",x_{j}"));
    }
    out.push('\n');
    for (code, label) in codes.iter().zip(labels) {
        if code.dim() != d {
            return Err(SfmError::DimensionMismatch {
                what: "code dimension",
                expected: d,
                actual: code.dim(),
            });
        }
        // Display prints the shortest decimal that round-trips exactly.
        out.push_str(&format!("{label},{}", code.s));
        for v in code.identity()?.iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads a codes CSV back into `(labels, codes)`; `x` is the stored identity.
pub fn read_codes_csv(path: impl AsRef<Path>) -> Result<(Vec<i64>, Vec<ShapeCode>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SfmError::io(path, e))?;
    let err = |line: usize, message: String| SfmError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 2 || cols[0] != "label" || cols[1] != "s" {
        return Err(err(1, "expected header 'label,s,x_0,...'".into()));
    }
    for (j, name) in cols[2..].iter().enumerate() {
        if *name != format!("x_{j}") {
            return Err(err(1, format!("column {} should be x_{j}, got '{name}'", j + 2)));
        }
    }
    let d = cols.len() - 2;
    let mut labels = Vec::new();
    let mut codes = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let label = record
            .get(0)
            .unwrap_or("")
            .parse::<i64>()
            .map_err(|e| err(line, format!("label: {e}")))?;
        let num = |k: usize| -> Result<f64> {
            let raw = record.get(k).unwrap_or("");
            let v = raw
                .parse::<f64>()
                .map_err(|_| err(line, format!("column {}: invalid number '{raw}'", k + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(line, format!("column {}: non-finite value", k + 1)))
            }
        };
        let s = num(1)?;
        let x = (0..d).map(|j| num(j + 2)).collect::<Result<Vec<_>>>()?;
        labels.push(label);
        codes.push(ShapeCode::new(DVector::from_vec(x), s));
    }
    Ok((labels, codes))
}
