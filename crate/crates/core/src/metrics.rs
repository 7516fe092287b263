//! Clustering separability of latent codes: silhouette (Euclidean and
//! cosine) and Calinski-Harabasz.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfmError};
use crate::model::{ShapeCode, EPS_NORM};

/// Vectors with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVectors {
    vectors: Vec<DVector<f64>>,
    labels: Vec<i64>,
}

impl LabeledVectors {
    pub fn new(vectors: Vec<DVector<f64>>, labels: Vec<i64>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(SfmError::DimensionMismatch {
                what: "labels for vectors",
                expected: vectors.len(),
                actual: labels.len(),
            });
        }
        if let Some(first) = vectors.first() {
            if let Some(v) = vectors.iter().find(|v| v.len() != first.len()) {
                return Err(SfmError::DimensionMismatch {
                    what: "vector dimension",
                    expected: first.len(),
                    actual: v.len(),
                });
            }
        }
        if vectors.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(SfmError::NonFinite("metric input vector".into()));
        }
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// Dense class index per sample and the class count.
    fn dense_labels(&self) -> (Vec<usize>, usize) {
        let mut index = BTreeMap::new();
        for &l in &self.labels {
            let next = index.len();
            index.entry(l).or_insert(next);
        }
        (self.labels.iter().map(|l| index[l]).collect(), index.len())
    }

    pub fn n_classes(&self) -> usize {
        self.dense_labels().1
    }

    fn require_classes(&self) -> Result<(Vec<usize>, usize)> {
        let (dense, k) = self.dense_labels();
        if k < 2 {
            return Err(SfmError::TooFewClasses { found: k });
        }
        Ok((dense, k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    Cosine,
}

impl FromStr for Distance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            other => Err(format!("unknown distance '{other}' (euclidean|cosine)")),
        }
    }
}

/// How per-sample silhouette values are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SilhouetteForm {
    /// Mean of `(b - a) / max(a, b)`.
    #[default]
    Standard,
    /// Sum of `(a - b) / max(a, b)`.
    Summed,
}

fn pair_distance(distance: Distance, u: &DVector<f64>, v: &DVector<f64>, norms: (f64, f64)) -> f64 {
    match distance {
        Distance::Euclidean => (u - v).norm(),
        Distance::Cosine => 1.0 - u.dot(v) / (norms.0 * norms.1),
    }
}

/// Standard silhouette in `[-1, 1]`.
pub fn silhouette(data: &LabeledVectors, distance: Distance) -> Result<f64> {
    silhouette_with(data, distance, SilhouetteForm::Standard)
}

pub fn silhouette_with(data: &LabeledVectors, distance: Distance, form: SilhouetteForm) -> Result<f64> {
    let (dense, k) = data.require_classes()?;
    let vectors = data.vectors();
    let norms: Vec<f64> = vectors.iter().map(|v| v.norm()).collect();
    if distance == Distance::Cosine {
        if let Some(i) = norms.iter().position(|&n| n <= EPS_NORM) {
            return Err(SfmError::NearZeroNorm {
                what: "vector under cosine distance",
                norm: norms[i],
                eps: EPS_NORM,
            });
        }
    }
    let mut sizes = vec![0usize; k];
    for &c in &dense {
        sizes[c] += 1;
    }

    // Per-sample values are computed in parallel and summed in index order.
    let values: Vec<f64> = (0..vectors.len())
        .into_par_iter()
        .map(|i| {
            let own = dense[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, v) in vectors.iter().enumerate() {
                if j != i {
                    sums[dense[j]] += pair_distance(distance, &vectors[i], v, (norms[i], norms[j]));
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                return 0.0;
            }
            match form {
                SilhouetteForm::Standard => (b - a) / denom,
                SilhouetteForm::Summed => (a - b) / denom,
            }
        })
        .collect();
    let sum: f64 = values.iter().sum();
    Ok(match form {
        SilhouetteForm::Standard => sum / values.len() as f64,
        SilhouetteForm::Summed => sum,
    })
}

/// `tr(W)` at or below this fraction of the total scatter counts as collapsed.
pub const CH_COLLAPSE_RTOL: f64 = 1e-24;

/// `tr(B) / tr(W) * (n - k) / (k - 1)`.
pub fn calinski_harabasz(data: &LabeledVectors) -> Result<f64> {
    let (dense, k) = data.require_classes()?;
    let vectors = data.vectors();
    let n = vectors.len();
    let dim = vectors[0].len();
    let mut centers = vec![DVector::<f64>::zeros(dim); k];
    let mut sizes = vec![0usize; k];
    for (v, &c) in vectors.iter().zip(&dense) {
        centers[c] += v;
        sizes[c] += 1;
    }
    for (c, &size) in centers.iter_mut().zip(&sizes) {
        *c /= size as f64;
    }
    let global = vectors.iter().fold(DVector::zeros(dim), |acc, v| acc + v) / n as f64;
    let tr_w: f64 = vectors
        .iter()
        .zip(&dense)
        .map(|(v, &c)| (v - &centers[c]).norm_squared())
        .sum();
    let tr_b: f64 = centers
        .iter()
        .zip(&sizes)
        .map(|(c, &size)| size as f64 * (c - &global).norm_squared())
        .sum();
    if tr_w <= CH_COLLAPSE_RTOL * (tr_w + tr_b) || tr_w == 0.0 {
        return Err(SfmError::InfiniteCh);
    }
    Ok(tr_b / tr_w * (n - k) as f64 / (k - 1) as f64)
}

/// Which code representation the metrics see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// The stored `x`.
    Raw,
    /// `x / ||x||`.
    Identity,
    /// `s * x / ||x||`.
    #[default]
    Scaled,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Raw => "raw",
            Space::Identity => "identity",
            Space::Scaled => "scaled",
        }
    }

    pub fn embed(self, code: &ShapeCode) -> Result<DVector<f64>> {
        match self {
            Space::Raw => Ok(code.x.clone()),
            Space::Identity => code.identity(),
            Space::Scaled => code.shape_param(),
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Space {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "raw" => Ok(Space::Raw),
            "identity" => Ok(Space::Identity),
            "scaled" => Ok(Space::Scaled),
            other => Err(format!("unknown space '{other}' (raw|identity|scaled)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChStatus {
    #[serde(rename = "ok")]
    Ok,
    #[serde(rename = "+inf")]
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub rmse: Option<f64>,
    pub sce: f64,
    pub scc: f64,
    /// `None` when the within-class scatter vanishes; see `ch_status`.
    pub ch: Option<f64>,
    pub ch_status: ChStatus,
    pub n_samples: usize,
    pub n_classes: usize,
    pub space: Space,
}

impl SeparabilityReport {
    /// `RMSE | SCE | SCC | CH` table row.
    pub fn table_row(&self, name: &str) -> String {
        let rmse = self.rmse.map_or("-".to_string(), |r| format!("{r:.4}"));
        let ch = self.ch.map_or("+inf".to_string(), |c| format!("{c:.4}"));
        format!("{name:<14} {rmse:>10} {:>9.4} {:>9.4} {ch:>12}", self.sce, self.scc)
    }

    pub fn table_header() -> String {
        format!("{:<14} {:>10} {:>9} {:>9} {:>12}", "model", "RMSE", "SCE", "SCC", "CH")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReportOptions {
    pub space: Space,
    pub silhouette_form: SilhouetteForm,
}

/// Metrics of `codes` in the chosen space; `rmse` is the mean per-mesh RMSE
/// when known.
pub fn build_report(
    codes: &[ShapeCode],
    labels: &[i64],
    rmse: Option<f64>,
    options: ReportOptions,
) -> Result<SeparabilityReport> {
    if codes.is_empty() {
        return Err(SfmError::InvalidConfig("no codes to evaluate".into()));
    }
    let vectors = codes
        .iter()
        .map(|c| options.space.embed(c))
        .collect::<Result<Vec<_>>>()?;
    let data = LabeledVectors::new(vectors, labels.to_vec())?;
    let sce = silhouette_with(&data, Distance::Euclidean, options.silhouette_form)?;
    let scc = silhouette_with(&data, Distance::Cosine, options.silhouette_form)?;
    let (ch, ch_status) = match calinski_harabasz(&data) {
        Ok(v) => (Some(v), ChStatus::Ok),
        Err(SfmError::InfiniteCh) => (None, ChStatus::Infinite),
        Err(e) => return Err(e),
    };
    Ok(SeparabilityReport {
        rmse,
        sce,
        scc,
        ch,
        ch_status,
        n_samples: data.len(),
        n_classes: data.n_classes(),
        space: options.space,
    })
}
