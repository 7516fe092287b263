//! Seeded synthetic corpora with known ground truth.
//!
//! All randomness comes from one `ChaCha8Rng` seeded with `config.seed` and
//! is drawn in a fixed order: mean surface, basis, identity centers, then per
//! sample (identity perturbation, scale, vertex noise) in sample order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{sample_name, LabeledCorpus};
use crate::error::{Result, SfmError};
use crate::mesh::{grid_faces, rmse_point_to_point};
use crate::metrics::{build_report, ReportOptions, SeparabilityReport};
use crate::model::{orthonormalize, reconstruct, write_container, ShapeCode, SphereFaceModel};
use crate::train::export_codes_csv;

pub const MAX_CENTER_ATTEMPTS: usize = 100_000;
const MAX_SCALE_ATTEMPTS: usize = 10_000;
/// Grid spacing of the mean surface, in millimeters.
const GRID_SPACING: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub vertex_count: usize,
    pub d_true: usize,
    pub n_identities: usize,
    pub samples_per_identity: usize,
    /// Radians.
    pub within_identity_angle: f64,
    pub scale_mean: f64,
    pub scale_std: f64,
    pub vertex_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vertex_count: 500,
            d_true: 16,
            n_identities: 20,
            samples_per_identity: 10,
            within_identity_angle: 0.1,
            scale_mean: 5.0,
            scale_std: 1.0,
            vertex_noise: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        for (name, v) in [
            ("vertex_count", self.vertex_count),
            ("d_true", self.d_true),
            ("n_identities", self.n_identities),
            ("samples_per_identity", self.samples_per_identity),
        ] {
            if v == 0 {
                issues.push(format!("{name} must be positive"));
            }
        }
        if self.d_true > 3 * self.vertex_count {
            issues.push(format!("d_true {} exceeds 3n = {}", self.d_true, 3 * self.vertex_count));
        }
        if grid_shape(self.vertex_count).is_none() {
            issues.push(format!(
                "vertex_count {} does not factor into a grid with at least 2 rows",
                self.vertex_count
            ));
        }
        for (name, v) in [
            ("within_identity_angle", self.within_identity_angle),
            ("scale_std", self.scale_std),
            ("vertex_noise", self.vertex_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                issues.push(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.scale_mean > 0.0 && self.scale_mean.is_finite()) {
            issues.push(format!("scale_mean must be positive, got {}", self.scale_mean));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(SfmError::InvalidConfig(issues.join("; ")))
        }
    }
}

/// `rows x cols` with `rows <= cols`, rows as large as possible and at least 2.
pub fn grid_shape(n: usize) -> Option<(usize, usize)> {
    (2..=n.isqrt()).rev().find(|r| n % r == 0).map(|r| (r, n / r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub model: SphereFaceModel,
    /// Unit identity center per identity.
    pub centers: Vec<DVector<f64>>,
    /// Per-sample code with unit `x`.
    pub codes: Vec<ShapeCode>,
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Low-frequency height field over a centered grid.
fn mean_surface(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DVector<f64> {
    let waves: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            [
                rng.random_range(3.0..12.0),
                rng.random_range(0.5..2.0),
                rng.random_range(0.5..2.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let mut v = DVector::zeros(3 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let u = c as f64 / (cols - 1).max(1) as f64;
            let w = r as f64 / (rows - 1) as f64;
            let z: f64 = waves
                .iter()
                .map(|[amp, fu, fw, phase]| amp * (std::f64::consts::PI * (fu * u + fw * w) + phase).sin())
                .sum();
            let i = 3 * (r * cols + c);
            v[i] = (c as f64 - (cols - 1) as f64 / 2.0) * GRID_SPACING;
            v[i + 1] = (r as f64 - (rows - 1) as f64 / 2.0) * GRID_SPACING;
            v[i + 2] = z;
        }
    }
    v
}

fn angle(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Samples are ordered identity by identity; identity `k` has label `k`.
pub fn generate(config: &SynthConfig) -> Result<(LabeledCorpus, SynthTruth)> {
    config.validate()?;
    let (rows, cols) = grid_shape(config.vertex_count).expect("validated");
    let dim = 3 * config.vertex_count;
    let d = config.d_true;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mean = mean_surface(&mut rng, rows, cols);
    let raw_basis = DMatrix::from_fn(dim, d, |_, _| rng.sample(StandardNormal));
    let basis = orthonormalize(&raw_basis)?;
    let model = SphereFaceModel::new(mean, basis, Some(grid_faces(rows, cols)))?;

    let min_angle = 2.0 * config.within_identity_angle;
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(config.n_identities);
    let mut attempts = 0usize;
    while centers.len() < config.n_identities {
        if attempts == MAX_CENTER_ATTEMPTS {
            return Err(SfmError::Synth(format!(
                "placed only {} of {} identity centers with pairwise angle >= {min_angle} after {MAX_CENTER_ATTEMPTS} attempts",
                centers.len(),
                config.n_identities
            )));
        }
        attempts += 1;
        let g = gaussian_vector(&mut rng, d);
        let norm = g.norm();
        if norm == 0.0 {
            continue;
        }
        let candidate = g / norm;
        if centers.iter().all(|c| angle(c, &candidate) >= min_angle) {
            centers.push(candidate);
        }
    }

    let scale = Normal::new(config.scale_mean, config.scale_std)
        .map_err(|e| SfmError::Synth(format!("scale distribution: {e}")))?;
    let noise =
        Normal::new(0.0, config.vertex_noise).map_err(|e| SfmError::Synth(format!("noise distribution: {e}")))?;
    let n_samples = config.n_identities * config.samples_per_identity;
    let mut meshes = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    let mut codes = Vec::with_capacity(n_samples);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..config.samples_per_identity {
            let g = gaussian_vector(&mut rng, d);
            let tangent = &g - center * center.dot(&g);
            let u = (center + tangent * config.within_identity_angle).normalize();
            let s = truncated_positive(&mut rng, &scale)?;
            let code = ShapeCode::new(u, s);
            let clean = reconstruct(&model, &code)?;
            let vertices: Vec<f64> = clean.vertices().iter().map(|v| v + noise.sample(&mut rng)).collect();
            meshes.push(clean.with_vertices(vertices)?);
            labels.push(k);
            codes.push(code);
        }
    }
    let corpus = LabeledCorpus::new(meshes, labels)?;
    Ok((corpus, SynthTruth { model, centers, codes }))
}

fn truncated_positive(rng: &mut ChaCha8Rng, dist: &Normal<f64>) -> Result<f64> {
    for _ in 0..MAX_SCALE_ATTEMPTS {
        let s = dist.sample(rng);
        if s > 0.0 {
            return Ok(s);
        }
    }
    Err(SfmError::Synth("scale distribution yields no positive samples".into()))
}

/// Metrics of the true codes; `rmse` is the mean distance of the corpus to
/// the noise-free reconstructions.
pub fn oracle_report(truth: &SynthTruth, corpus: &LabeledCorpus) -> Result<SeparabilityReport> {
    if truth.codes.len() != corpus.len() {
        return Err(SfmError::DimensionMismatch {
            what: "true codes for corpus",
            expected: corpus.len(),
            actual: truth.codes.len(),
        });
    }
    let mut rmse = 0.0;
    for (code, mesh) in truth.codes.iter().zip(corpus.meshes()) {
        rmse += rmse_point_to_point(&reconstruct(&truth.model, code)?, mesh)?;
    }
    let labels: Vec<i64> = (0..corpus.len()).map(|i| corpus.identity_of(i)).collect();
    build_report(
        &truth.codes,
        &labels,
        Some(rmse / corpus.len() as f64),
        ReportOptions::default(),
    )
}

pub const TRUTH_MODEL_FILE: &str = "truth.sfmb";
pub const TRUTH_CODES_FILE: &str = "truth_codes.csv";

/// Corpus directory plus `truth.sfmb` and `truth_codes.csv`.
pub fn write_synthetic(dir: impl AsRef<Path>, corpus: &LabeledCorpus, truth: &SynthTruth) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SfmError::io(dir, e))?;
    corpus.write_dir(dir)?;
    write_container(&truth.model, dir.join(TRUTH_MODEL_FILE))?;
    let labels: Vec<i64> = (0..corpus.len()).map(|i| corpus.identity_of(i)).collect();
    export_codes_csv(&truth.codes, &labels, dir.join(TRUTH_CODES_FILE))
}

/// File names [`write_synthetic`] produces, in write order.
pub fn synthetic_file_names(corpus: &LabeledCorpus) -> Vec<String> {
    let mut names: Vec<String> = (0..corpus.len()).map(sample_name).collect();
    names.push(crate::corpus::LABELS_FILE.into());
    names.push(TRUTH_MODEL_FILE.into());
    names.push(TRUTH_CODES_FILE.into());
    names
}
