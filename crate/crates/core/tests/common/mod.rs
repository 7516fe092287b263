//! Independent reference implementations shared by the integration tests:
//! central differences, random loss instances and brute-force metrics.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfm_core::losses::{
    center_loss, margin_softmax_loss, norm_softmax_loss, recon_ortho_loss, total_stage1_loss, CenterDenominator,
    ClassCenters, ClassifierWeights, Gradients, LossValueAndGrads, LossWeights, MarginParams, Stage1Inputs,
};

pub const FD_STEP: f64 = 1e-6;

/// Entries below this fraction of `max(1, |f|)` are compared on that floor,
/// which keeps central-difference roundoff (about `1e-10 |f|`) out of the
/// relative error of near-zero partials.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// Central difference of `f` along every coordinate.
pub fn central_differences(f: &dyn Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut p = point.to_vec();
    (0..point.len())
        .map(|k| {
            p[k] = point[k] + h;
            let plus = f(&p);
            p[k] = point[k] - h;
            let minus = f(&p);
            p[k] = point[k];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], value: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let floor = REL_FLOOR * value.abs().max(1.0);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Named blocks of a flat parameter vector.
#[derive(Clone)]
pub struct Packed {
    pub blocks: Vec<(&'static str, usize, usize)>,
    pub data: Vec<f64>,
}

impl Packed {
    pub fn new() -> Self {
        Self {
            blocks: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn push_matrix(&mut self, name: &'static str, m: &DMatrix<f64>) {
        self.blocks.push((name, m.nrows(), m.ncols()));
        self.data.extend_from_slice(m.as_slice());
    }

    pub fn push_vector(&mut self, name: &'static str, v: &DVector<f64>) {
        self.blocks.push((name, v.len(), 1));
        self.data.extend_from_slice(v.as_slice());
    }

    fn offset(&self, name: &str) -> (usize, usize, usize) {
        let mut off = 0;
        for &(n, r, c) in &self.blocks {
            if n == name {
                return (off, r, c);
            }
            off += r * c;
        }
        panic!("no block {name}");
    }

    pub fn matrix(&self, data: &[f64], name: &str) -> DMatrix<f64> {
        let (o, r, c) = self.offset(name);
        DMatrix::from_column_slice(r, c, &data[o..o + r * c])
    }

    pub fn vector(&self, data: &[f64], name: &str) -> DVector<f64> {
        let (o, r, _) = self.offset(name);
        DVector::from_column_slice(&data[o..o + r])
    }

    /// Analytic gradient flattened in block order; a missing buffer is an
    /// error in the loss under test.
    pub fn flatten(&self, g: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for &(name, _, _) in &self.blocks {
            let slice: &[f64] = match name {
                "x" => g.x.as_ref().expect("x gradient").as_slice(),
                "s" => g.s.as_ref().expect("s gradient").as_slice(),
                "weights" => g.weights.as_ref().expect("weights gradient").as_slice(),
                "centers" => g.centers.as_ref().expect("centers gradient").as_slice(),
                "basis" => g.basis.as_ref().expect("basis gradient").as_slice(),
                "mean" => g.mean.as_ref().expect("mean gradient").as_slice(),
                other => panic!("unknown block {other}"),
            };
            out.extend_from_slice(slice);
        }
        out
    }
}

/// One finite-difference comparison.
pub struct GradCase {
    pub name: &'static str,
    pub value: f64,
    pub max_rel_error: f64,
}

fn run_case(name: &'static str, packed: &Packed, eval: &dyn Fn(&[f64]) -> LossValueAndGrads) -> GradCase {
    let base = eval(&packed.data);
    let analytic = packed.flatten(&base.grads);
    let numeric = central_differences(&|p| eval(p).value, &packed.data, FD_STEP);
    GradCase {
        name,
        value: base.value,
        max_rel_error: max_relative_error(&analytic, &numeric, base.value),
    }
}

/// Labels covering every class at least once when `m >= k`.
pub fn labels(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<usize> {
    (0..m).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect()
}

/// Latents whose direction sits within a cone around the target weight, so
/// margin angles stay inside the monotone range.
fn near_targets(rng: &mut ChaCha8Rng, w: &DMatrix<f64>, labels: &[usize]) -> DMatrix<f64> {
    let d = w.ncols();
    let mut x = DMatrix::zeros(labels.len(), d);
    for (i, &l) in labels.iter().enumerate() {
        let dir = w.row(l).transpose().normalize();
        let noise = uniform_vector(rng, d, -0.5, 0.5);
        let v = (dir + noise) * rng.random_range(0.5..2.0);
        x.set_row(i, &v.transpose());
    }
    x
}

pub fn norm_softmax_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let (m, k, d) = (4 + (seed % 3) as usize, 3, 5);
    let y = labels(&mut r, m, k);
    let x = uniform_matrix(&mut r, m, d, -1.0, 1.0);
    let w = uniform_matrix(&mut r, k, d, -1.0, 1.0);
    let scale = r.random_range(0.5..4.0);
    let mut p = Packed::new();
    p.push_matrix("x", &x);
    p.push_matrix("weights", &w);
    let q = p.clone();
    run_case("norm_softmax", &p, &move |data| {
        norm_softmax_loss(
            &q.matrix(data, "x"),
            &y,
            &ClassifierWeights(q.matrix(data, "weights")),
            scale,
        )
        .expect("valid instance")
    })
}

pub fn margin_softmax_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let (m, k, d) = (5, 3, 4);
    let y = labels(&mut r, m, k);
    let w = uniform_matrix(&mut r, k, d, -1.0, 1.0);
    let x = near_targets(&mut r, &w, &y);
    let margins = MarginParams {
        alpha: [1.0, 1.5, 2.0][(seed % 3) as usize],
        beta: r.random_range(0.0..0.3),
        gamma: r.random_range(0.0..0.4),
        logit_scale: r.random_range(1.0..8.0),
    };
    let mut p = Packed::new();
    p.push_matrix("x", &x);
    p.push_matrix("weights", &w);
    let q = p.clone();
    run_case("margin_softmax", &p, &move |data| {
        margin_softmax_loss(
            &q.matrix(data, "x"),
            &y,
            &ClassifierWeights(q.matrix(data, "weights")),
            &margins,
        )
        .expect("valid instance")
    })
}

pub fn center_case(seed: u64, mode: CenterDenominator) -> GradCase {
    let mut r = rng(seed);
    let (m, k, d) = (6, 3, 4);
    let y = labels(&mut r, m, k);
    let x = uniform_matrix(&mut r, m, d, -1.0, 1.0);
    let s = uniform_vector(&mut r, m, 0.5, 2.0);
    let c = uniform_matrix(&mut r, k, d, -1.5, 1.5);
    let mut p = Packed::new();
    p.push_matrix("x", &x);
    p.push_vector("s", &s);
    p.push_matrix("centers", &c);
    let q = p.clone();
    let name = match mode {
        CenterDenominator::PairMean => "center_pair_mean",
        CenterDenominator::OrderedPairs => "center_ordered_pairs",
    };
    run_case(name, &p, &move |data| {
        center_loss(
            &q.matrix(data, "x"),
            &q.vector(data, "s"),
            &y,
            &ClassCenters(q.matrix(data, "centers")),
            mode,
        )
        .expect("valid instance")
    })
}

pub fn recon_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let (n3, d, m) = (12, 3, 4);
    let basis = uniform_matrix(&mut r, n3, d, -0.6, 0.6);
    let mean = uniform_vector(&mut r, n3, -1.0, 1.0);
    let x = uniform_matrix(&mut r, m, d, -1.0, 1.0);
    let s = uniform_vector(&mut r, m, 0.5, 2.0);
    let targets = uniform_matrix(&mut r, m, n3, -1.0, 1.0);
    let mut p = Packed::new();
    p.push_matrix("basis", &basis);
    p.push_vector("mean", &mean);
    p.push_matrix("x", &x);
    p.push_vector("s", &s);
    let q = p.clone();
    run_case("recon_ortho", &p, &move |data| {
        recon_ortho_loss(
            &q.matrix(data, "basis"),
            &q.vector(data, "mean"),
            &q.matrix(data, "x"),
            &q.vector(data, "s"),
            &targets,
        )
        .expect("valid instance")
    })
}

pub fn total_case(seed: u64) -> GradCase {
    let mut r = rng(seed);
    let (n3, d, m, k) = (9, 3, 5, 3);
    let y = labels(&mut r, m, k);
    let basis = uniform_matrix(&mut r, n3, d, -0.6, 0.6);
    let mean = uniform_vector(&mut r, n3, -1.0, 1.0);
    let x = uniform_matrix(&mut r, m, d, -1.0, 1.0);
    let s = uniform_vector(&mut r, m, 0.5, 2.0);
    let w = uniform_matrix(&mut r, k, d, -1.0, 1.0);
    let c = uniform_matrix(&mut r, k, d, -1.5, 1.5);
    let targets = uniform_matrix(&mut r, m, n3, -1.0, 1.0);
    let lambdas = LossWeights {
        lambda_m: r.random_range(0.1..2.0),
        lambda_c: r.random_range(0.1..2.0),
        lambda_s: r.random_range(0.1..2.0),
    };
    let scale = r.random_range(0.5..4.0);
    let mut p = Packed::new();
    p.push_matrix("basis", &basis);
    p.push_vector("mean", &mean);
    p.push_matrix("x", &x);
    p.push_vector("s", &s);
    p.push_matrix("weights", &w);
    p.push_matrix("centers", &c);
    let q = p.clone();
    run_case("total_stage1", &p, &move |data| {
        let (b, mu, xx, ss) = (
            q.matrix(data, "basis"),
            q.vector(data, "mean"),
            q.matrix(data, "x"),
            q.vector(data, "s"),
        );
        let (ww, cc) = (
            ClassifierWeights(q.matrix(data, "weights")),
            ClassCenters(q.matrix(data, "centers")),
        );
        let inputs = Stage1Inputs {
            basis: &b,
            mean: &mu,
            x: &xx,
            s: &ss,
            labels: &y,
            targets: &targets,
            weights: &ww,
            centers: &cc,
            logit_scale: scale,
            center_denominator: CenterDenominator::PairMean,
        };
        total_stage1_loss(&inputs, &lambdas).expect("valid instance").total
    })
}

/// Every loss checked on one seed.
pub fn all_grad_cases(seed: u64) -> Vec<GradCase> {
    vec![
        norm_softmax_case(seed),
        margin_softmax_case(seed),
        center_case(seed, CenterDenominator::PairMean),
        center_case(seed, CenterDenominator::OrderedPairs),
        recon_case(seed),
        total_case(seed),
    ]
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += (a[k] - b[k]) * (a[k] - b[k]);
    }
    acc.sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for k in 0..a.len() {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}

/// O(n^2) silhouette straight from the definition.
pub fn brute_silhouette(points: &[Vec<f64>], labels: &[i64], use_cosine: bool) -> f64 {
    let dist = |i: usize, j: usize| {
        if use_cosine {
            cosine(&points[i], &points[j])
        } else {
            euclid(&points[i], &points[j])
        }
    };
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let same: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if same.is_empty() {
            continue;
        }
        let a = same.iter().map(|&j| dist(i, j)).sum::<f64>() / same.len() as f64;
        let mut b = f64::INFINITY;
        for &c in &classes {
            if c == labels[i] {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            let mean = members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64;
            b = b.min(mean);
        }
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Calinski-Harabasz from explicit scatter matrices.
pub fn brute_ch(points: &[Vec<f64>], labels: &[i64]) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let k = classes.len();
    let mean_of = |idx: &[usize]| {
        let mut m = vec![0.0; d];
        for &i in idx {
            for t in 0..d {
                m[t] += points[i][t];
            }
        }
        m.iter().map(|v| v / idx.len() as f64).collect::<Vec<_>>()
    };
    let all: Vec<usize> = (0..n).collect();
    let global = mean_of(&all);
    let mut w = vec![vec![0.0; d]; d];
    let mut b = vec![vec![0.0; d]; d];
    for &c in &classes {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        let center = mean_of(&idx);
        for &i in &idx {
            for r in 0..d {
                for q in 0..d {
                    w[r][q] += (points[i][r] - center[r]) * (points[i][q] - center[q]);
                }
            }
        }
        for r in 0..d {
            for q in 0..d {
                b[r][q] += idx.len() as f64 * (center[r] - global[r]) * (center[q] - global[q]);
            }
        }
    }
    let tr_w: f64 = (0..d).map(|t| w[t][t]).sum();
    let tr_b: f64 = (0..d).map(|t| b[t][t]).sum();
    tr_b / tr_w * (n - k) as f64 / (k - 1) as f64
}

/// Random labeled point cloud: `k` Gaussian-ish blobs in `d` dimensions.
pub fn random_dataset(seed: u64, max_points: usize) -> (Vec<Vec<f64>>, Vec<i64>) {
    let mut r = rng(seed);
    let k = r.random_range(2..6usize);
    let n = r.random_range((2 * k)..=max_points);
    let d = r.random_range(1..6usize);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| r.random_range(-5.0..5.0)).collect())
        .collect();
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = if i < k { i } else { r.random_range(0..k) };
        points.push(centers[c].iter().map(|v| v + r.random_range(-2.0..2.0)).collect());
        labels.push(c as i64 * 3 - 1);
    }
    (points, labels)
}
