//! Stage-one training losses with analytic gradients.
//!
//! Batches are row-major in the sense that row `i` of `x` is the raw latent
//! vector of sample `i`; `s[i]` is its scale and `labels[i]` its class.
//! Every loss returns its value together with gradients for each optimizable
//! input. Gradients through `x / ||x||` use the exact Jacobian
//! `(I - x̂ x̂^T) / ||x||`.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfmError};
use crate::model::EPS_NORM;

/// Class weight rows of the normalized softmax classifier (`n_classes x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights(pub DMatrix<f64>);

/// Learnable class centers in shape-parameter space (`n_classes x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters(pub DMatrix<f64>);

impl ClassifierWeights {
    pub fn n_classes(&self) -> usize {
        self.0.nrows()
    }
}

impl ClassCenters {
    pub fn n_classes(&self) -> usize {
        self.0.nrows()
    }
}

/// Margins of the generalized softmax: the target logit becomes
/// `logit_scale * cos(alpha * theta + beta) - gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub logit_scale: f64,
}

impl Default for MarginParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            logit_scale: 1.0,
        }
    }
}

impl MarginParams {
    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0 && self.beta >= 0.0 && self.gamma >= 0.0 && self.logit_scale > 0.0) {
            return Err(SfmError::InvalidConfig(format!(
                "margins need alpha >= 1, beta >= 0, gamma >= 0, logit_scale > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Denominator of the center loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterDenominator {
    /// Mean squared distance over unordered distinct center pairs.
    #[default]
    PairMean,
    /// `(1/n) * sum over ordered pairs i != j`.
    OrderedPairs,
}

/// Gradient buffers; `None` for inputs a loss does not depend on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    /// `m x d`, one row per sample.
    pub x: Option<DMatrix<f64>>,
    pub s: Option<DVector<f64>>,
    pub weights: Option<DMatrix<f64>>,
    pub centers: Option<DMatrix<f64>>,
    /// `3n x d`.
    pub basis: Option<DMatrix<f64>>,
    pub mean: Option<DVector<f64>>,
}

impl Gradients {
    /// `self += k * other`, field by field.
    pub fn add_scaled(&mut self, other: &Gradients, k: f64) {
        fn merge_m(dst: &mut Option<DMatrix<f64>>, src: &Option<DMatrix<f64>>, k: f64) {
            if let Some(src) = src {
                match dst {
                    Some(d) => *d += src * k,
                    None => *dst = Some(src * k),
                }
            }
        }
        fn merge_v(dst: &mut Option<DVector<f64>>, src: &Option<DVector<f64>>, k: f64) {
            if let Some(src) = src {
                match dst {
                    Some(d) => *d += src * k,
                    None => *dst = Some(src * k),
                }
            }
        }
        merge_m(&mut self.x, &other.x, k);
        merge_v(&mut self.s, &other.s, k);
        merge_m(&mut self.weights, &other.weights, k);
        merge_m(&mut self.centers, &other.centers, k);
        merge_m(&mut self.basis, &other.basis, k);
        merge_v(&mut self.mean, &other.mean, k);
    }

    fn all_finite(&self) -> bool {
        let m = |o: &Option<DMatrix<f64>>| o.as_ref().is_none_or(|a| a.iter().all(|v| v.is_finite()));
        let v = |o: &Option<DVector<f64>>| o.as_ref().is_none_or(|a| a.iter().all(|v| v.is_finite()));
        m(&self.x) && v(&self.s) && m(&self.weights) && m(&self.centers) && m(&self.basis) && v(&self.mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueAndGrads {
    pub value: f64,
    pub grads: Gradients,
}

impl LossValueAndGrads {
    fn checked(self, what: &str) -> Result<Self> {
        if !self.value.is_finite() || !self.grads.all_finite() {
            return Err(SfmError::NonFinite(format!("{what} value or gradient")));
        }
        Ok(self)
    }
}

/// Unit rows of `m` plus their original norms.
fn normalize_rows(m: &DMatrix<f64>, what: &'static str) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.nrows());
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if !n.is_finite() {
            return Err(SfmError::NonFinite(format!("{what} row {i}")));
        }
        if n <= EPS_NORM {
            return Err(SfmError::NearZeroNorm {
                what,
                norm: n,
                eps: EPS_NORM,
            });
        }
        row /= n;
        norms.push(n);
    }
    Ok((out, norms))
}

/// Pulls a gradient w.r.t. unit rows back to the raw rows:
/// `g_raw = (g - (g . u) u) / ||raw||`.
fn backprop_normalize(g_unit: &DMatrix<f64>, unit: &DMatrix<f64>, norms: &[f64]) -> DMatrix<f64> {
    let mut out = g_unit.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let u = unit.row(i);
        let radial = row.dot(&u);
        row -= u * radial;
        row /= norms[i];
    }
    out
}

fn check_labels(labels: &[usize], rows: usize, n_classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(SfmError::DimensionMismatch {
            what: "label count",
            expected: rows,
            actual: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(SfmError::LabelOutOfRange { label, n_classes });
    }
    Ok(())
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Shared softmax-over-cosines engine. `target` maps the target cosine of
/// sample `i` to `(logit, d logit / d cos)`; other classes use `scale * cos`.
fn cosine_softmax(
    x: &DMatrix<f64>,
    labels: &[usize],
    weights: &ClassifierWeights,
    scale: f64,
    mut target: impl FnMut(usize, f64) -> Result<(f64, f64)>,
) -> Result<LossValueAndGrads> {
    let n_classes = weights.n_classes();
    check_labels(labels, x.nrows(), n_classes)?;
    if weights.0.ncols() != x.ncols() {
        return Err(SfmError::DimensionMismatch {
            what: "classifier weight width",
            expected: x.ncols(),
            actual: weights.0.ncols(),
        });
    }
    let m = x.nrows();
    if m == 0 {
        return Err(SfmError::InvalidConfig("empty batch".into()));
    }
    let (xu, xn) = normalize_rows(x, "sample latent")?;
    let (wu, wn) = normalize_rows(&weights.0, "classifier weight")?;
    let cos = &xu * wu.transpose();

    let inv_m = 1.0 / m as f64;
    let mut value = 0.0;
    // d loss / d cos, m x n_classes.
    let mut dcos = DMatrix::zeros(m, n_classes);
    let mut z = vec![0.0; n_classes];
    for i in 0..m {
        let y = labels[i];
        let mut dz_target = 0.0;
        for j in 0..n_classes {
            if j == y {
                let (logit, slope) = target(i, cos[(i, j)])?;
                z[j] = logit;
                dz_target = slope;
            } else {
                z[j] = scale * cos[(i, j)];
            }
        }
        let lse = log_sum_exp(&z);
        value += lse - z[y];
        for j in 0..n_classes {
            let p = (z[j] - lse).exp();
            let dz = (p - if j == y { 1.0 } else { 0.0 }) * inv_m;
            dcos[(i, j)] = dz * if j == y { dz_target } else { scale };
        }
    }
    value *= inv_m;

    let g_xu = &dcos * &wu;
    let g_wu = dcos.transpose() * &xu;
    let grads = Gradients {
        x: Some(backprop_normalize(&g_xu, &xu, &xn)),
        weights: Some(backprop_normalize(&g_wu, &wu, &wn)),
        ..Default::default()
    };
    LossValueAndGrads { value, grads }.checked("softmax loss")
}

/// Normalized softmax over cosines between unit latents and unit class
/// weights, `logit = logit_scale * cos`.
pub fn norm_softmax_loss(
    x: &DMatrix<f64>,
    labels: &[usize],
    weights: &ClassifierWeights,
    logit_scale: f64,
) -> Result<LossValueAndGrads> {
    if !(logit_scale > 0.0 && logit_scale.is_finite()) {
        return Err(SfmError::InvalidConfig(format!(
            "logit_scale {logit_scale} must be positive"
        )));
    }
    cosine_softmax(x, labels, weights, logit_scale, |_, c| {
        Ok((logit_scale * c, logit_scale))
    })
}

/// Softmax with multiplicative angular (`alpha`), additive angular (`beta`)
/// and additive cosine (`gamma`) margins on the target logit.
pub fn margin_softmax_loss(
    x: &DMatrix<f64>,
    labels: &[usize],
    weights: &ClassifierWeights,
    margins: &MarginParams,
) -> Result<LossValueAndGrads> {
    margins.validate()?;
    let MarginParams {
        alpha,
        beta,
        gamma,
        logit_scale: scale,
    } = *margins;
    cosine_softmax(x, labels, weights, scale, |i, c| {
        let theta = c.clamp(-1.0, 1.0).acos();
        let angle = alpha * theta + beta;
        if angle > std::f64::consts::PI * (1.0 + 1e-12) {
            return Err(SfmError::MarginOutOfRange { sample: i, angle });
        }
        let sin_theta = theta.sin();
        // d/dc cos(alpha*acos(c) + beta) = alpha * sin(angle) / sin(theta)
        let slope = if sin_theta > 1e-12 {
            alpha * angle.sin() / sin_theta
        } else if beta == 0.0 {
            alpha * alpha
        } else {
            return Err(SfmError::NonFinite(format!(
                "margin gradient at theta = {theta} for sample {i}"
            )));
        };
        Ok((scale * angle.cos() - gamma, scale * slope))
    })
}

/// Squared distance of each scaled identity `s x̂` to its class center,
/// averaged over the batch and divided by the mean squared distance between
/// centers.
pub fn center_loss(
    x: &DMatrix<f64>,
    s: &DVector<f64>,
    labels: &[usize],
    centers: &ClassCenters,
    mode: CenterDenominator,
) -> Result<LossValueAndGrads> {
    let c = &centers.0;
    let n = c.nrows();
    if n < 2 {
        return Err(SfmError::TooFewClasses { found: n });
    }
    check_labels(labels, x.nrows(), n)?;
    if s.len() != x.nrows() {
        return Err(SfmError::DimensionMismatch {
            what: "scale count",
            expected: x.nrows(),
            actual: s.len(),
        });
    }
    if c.ncols() != x.ncols() {
        return Err(SfmError::DimensionMismatch {
            what: "center width",
            expected: x.ncols(),
            actual: c.ncols(),
        });
    }
    let m = x.nrows();
    if m == 0 {
        return Err(SfmError::InvalidConfig("empty batch".into()));
    }

    // sum_{a<b} ||c_a - c_b||^2 = n * sum_a ||c_a - c̄||^2
    let centroid: RowDVector<f64> = c.row_mean();
    let mut deviations = c.clone();
    for mut row in deviations.row_iter_mut() {
        row -= &centroid;
    }
    let pair_sum = n as f64 * deviations.norm_squared();
    let kappa = match mode {
        CenterDenominator::PairMean => 2.0 / (n as f64 * (n as f64 - 1.0)),
        CenterDenominator::OrderedPairs => 2.0 / n as f64,
    };
    let denom = kappa * pair_sum;
    if denom.is_nan() || denom <= 0.0 {
        return Err(SfmError::Degenerate(
            "all class centers coincide (zero center-loss denominator)".into(),
        ));
    }

    let (xu, xn) = normalize_rows(x, "sample latent")?;
    let inv_m = 1.0 / m as f64;
    let mut numer = 0.0;
    let mut g_xu = DMatrix::zeros(m, x.ncols());
    let mut g_s = DVector::zeros(m);
    let mut g_c = DMatrix::zeros(n, x.ncols());
    for i in 0..m {
        let y = labels[i];
        let r = xu.row(i) * s[i] - c.row(y);
        numer += r.norm_squared();
        let dr = &r * (2.0 * inv_m / denom);
        g_s[i] = dr.dot(&xu.row(i));
        g_xu.set_row(i, &(&dr * s[i]));
        let mut cy = g_c.row_mut(y);
        cy -= &dr;
    }
    numer *= inv_m;
    let value = numer / denom;
    // d/dc_a of the denominator: kappa * 2n (c_a - c̄)
    g_c -= &deviations * (numer / (denom * denom) * kappa * 2.0 * n as f64);

    let grads = Gradients {
        x: Some(backprop_normalize(&g_xu, &xu, &xn)),
        s: Some(g_s),
        centers: Some(g_c),
        ..Default::default()
    };
    LossValueAndGrads { value, grads }.checked("center loss")
}

/// Shape parameters `s_i x̂_i` as rows, plus the pieces needed to pull
/// gradients back to `x` and `s`.
struct ShapeParams {
    p: DMatrix<f64>,
    xu: DMatrix<f64>,
    xn: Vec<f64>,
}

impl ShapeParams {
    fn new(x: &DMatrix<f64>, s: &DVector<f64>) -> Result<Self> {
        if s.len() != x.nrows() {
            return Err(SfmError::DimensionMismatch {
                what: "scale count",
                expected: x.nrows(),
                actual: s.len(),
            });
        }
        let (xu, xn) = normalize_rows(x, "sample latent")?;
        let mut p = xu.clone();
        for (i, mut row) in p.row_iter_mut().enumerate() {
            row *= s[i];
        }
        Ok(Self { p, xu, xn })
    }

    /// Gradient w.r.t. `p` rows -> gradients w.r.t. `x` rows and `s`.
    fn pull_back(&self, g_p: &DMatrix<f64>, s: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut g_s = DVector::zeros(s.len());
        let mut g_xu = g_p.clone();
        for (i, mut row) in g_xu.row_iter_mut().enumerate() {
            g_s[i] = row.dot(&self.xu.row(i));
            row *= s[i];
        }
        (backprop_normalize(&g_xu, &self.xu, &self.xn), g_s)
    }
}

/// Batch mean of `||M_i - (mean + A s_i x̂_i)||^2` plus `||A^T A - I||_F^2`.
///
/// `targets` holds one flattened target mesh per row (`m x 3n`).
pub fn recon_ortho_loss(
    basis: &DMatrix<f64>,
    mean: &DVector<f64>,
    x: &DMatrix<f64>,
    s: &DVector<f64>,
    targets: &DMatrix<f64>,
) -> Result<LossValueAndGrads> {
    let (dim, d) = basis.shape();
    if mean.len() != dim {
        return Err(SfmError::DimensionMismatch {
            what: "mean length",
            expected: dim,
            actual: mean.len(),
        });
    }
    if x.ncols() != d {
        return Err(SfmError::DimensionMismatch {
            what: "latent width",
            expected: d,
            actual: x.ncols(),
        });
    }
    if targets.nrows() != x.nrows() || targets.ncols() != dim {
        return Err(SfmError::DimensionMismatch {
            what: "target batch shape",
            expected: x.nrows() * dim,
            actual: targets.nrows() * targets.ncols(),
        });
    }
    let m = x.nrows();
    if m == 0 {
        return Err(SfmError::InvalidConfig("empty batch".into()));
    }
    let sp = ShapeParams::new(x, s)?;

    // Residual rows: mean + A p_i - M_i.
    let mut e = &sp.p * basis.transpose() - targets;
    for mut row in e.row_iter_mut() {
        row += mean.transpose();
    }
    let gram_dev = basis.tr_mul(basis) - DMatrix::<f64>::identity(d, d);
    let inv_m = 1.0 / m as f64;
    let value = e.norm_squared() * inv_m + gram_dev.norm_squared();

    let g_basis = e.tr_mul(&sp.p) * (2.0 * inv_m) + basis * &gram_dev * 4.0;
    let g_p = &e * basis * (2.0 * inv_m);
    let g_mean = e.row_sum().transpose() * (2.0 * inv_m);
    let (g_x, g_s) = sp.pull_back(&g_p, s);

    let grads = Gradients {
        x: Some(g_x),
        s: Some(g_s),
        basis: Some(g_basis),
        mean: Some(g_mean),
        ..Default::default()
    };
    LossValueAndGrads { value, grads }.checked("reconstruction loss")
}

/// Per-term weights of the stage-one objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_m: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_m: 1.0,
            lambda_c: 1.0,
            lambda_s: 1.0,
        }
    }
}

/// Everything the stage-one objective reads for one batch.
#[derive(Debug, Clone, Copy)]
pub struct Stage1Inputs<'a> {
    pub basis: &'a DMatrix<f64>,
    pub mean: &'a DVector<f64>,
    pub x: &'a DMatrix<f64>,
    pub s: &'a DVector<f64>,
    pub labels: &'a [usize],
    pub targets: &'a DMatrix<f64>,
    pub weights: &'a ClassifierWeights,
    pub centers: &'a ClassCenters,
    pub logit_scale: f64,
    pub center_denominator: CenterDenominator,
}

/// Unweighted component values alongside the weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Loss {
    pub l_m: f64,
    pub l_c: f64,
    pub l_s: f64,
    pub total: LossValueAndGrads,
}

/// `lambda_m L_m + lambda_c L_c + lambda_s L_s`. Components with a zero weight
/// are not evaluated and report 0.
pub fn total_stage1_loss(inputs: &Stage1Inputs<'_>, lambdas: &LossWeights) -> Result<Stage1Loss> {
    let mut grads = Gradients::default();
    let mut total = 0.0;
    let mut component = |lambda: f64, eval: &dyn Fn() -> Result<LossValueAndGrads>| -> Result<f64> {
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let part = eval()?;
        total += lambda * part.value;
        grads.add_scaled(&part.grads, lambda);
        Ok(part.value)
    };
    let l_m = component(lambdas.lambda_m, &|| {
        norm_softmax_loss(inputs.x, inputs.labels, inputs.weights, inputs.logit_scale)
    })?;
    let l_c = component(lambdas.lambda_c, &|| {
        center_loss(
            inputs.x,
            inputs.s,
            inputs.labels,
            inputs.centers,
            inputs.center_denominator,
        )
    })?;
    let l_s = component(lambdas.lambda_s, &|| {
        recon_ortho_loss(inputs.basis, inputs.mean, inputs.x, inputs.s, inputs.targets)
    })?;
    Ok(Stage1Loss {
        l_m,
        l_c,
        l_s,
        total: LossValueAndGrads { value: total, grads },
    })
}
