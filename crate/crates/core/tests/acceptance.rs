//! End-to-end acceptance checks. Runs without the libtest harness so every
//! line is printed; exits non-zero if any check fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::DVector;
use rand::Rng;
use sfm_core::fit::{fit_corpus, fit_mesh, FitConfig};
use sfm_core::losses::LossWeights;
use sfm_core::metrics::{ChStatus, ReportOptions};
use sfm_core::model::{container, slerp_identity};
use sfm_core::train::export_codes_csv;
use sfm_core::*;
use sha2::{Digest, Sha256};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn labels_of(c: &LabeledCorpus) -> Vec<i64> {
    (0..c.len()).map(|i| c.identity_of(i)).collect()
}

fn flat(m: &mesh::Mesh) -> DVector<f64> {
    DVector::from_column_slice(m.vertices())
}

fn ch_of(r: &SeparabilityReport) -> f64 {
    match r.ch_status {
        ChStatus::Ok => r.ch.unwrap_or(f64::NAN),
        ChStatus::Infinite => f64::INFINITY,
    }
}

fn report(codes: &[ShapeCode], labels: &[i64]) -> SeparabilityReport {
    build_report(codes, labels, None, ReportOptions::default()).expect("report")
}

fn finalized_model(seed: u64, n: usize, d: usize) -> SphereFaceModel {
    let mut r = rng(seed);
    let basis = uniform_matrix(&mut r, 3 * n, d, -1.0, 1.0);
    SphereFaceModel::finalize(uniform_vector(&mut r, 3 * n, -50.0, 50.0), &basis, None).unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "", 0u64);
    let mut cases = 0;
    for seed in 0..100 {
        for case in all_grad_cases(seed) {
            cases += 1;
            if case.max_rel_error > worst.0 || case.max_rel_error.is_nan() {
                worst = (case.max_rel_error, case.name, seed);
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst.0 < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{cases} cases, worst rel error {:.2e} ({} seed {}), {:.1}s",
            worst.0,
            worst.1,
            worst.2,
            elapsed.as_secs_f64()
        ),
    )
}

fn isometry() -> Outcome {
    let model = finalized_model(11, 200, 12);
    let mut r = rng(12);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p1 = uniform_vector(&mut r, 12, -30.0, 30.0);
        let p2 = uniform_vector(&mut r, 12, -30.0, 30.0);
        let g1 = flat(&model.reconstruct_param(&p1).unwrap());
        let g2 = flat(&model.reconstruct_param(&p2).unwrap());
        worst = worst.max(((g1 - g2).norm() - (p1 - p2).norm()).abs());
    }

    let points: Vec<DVector<f64>> = (0..40).map(|_| uniform_vector(&mut r, 12, -30.0, 30.0)).collect();
    let geometry: Vec<DVector<f64>> = points
        .iter()
        .map(|p| flat(&model.reconstruct_param(p).unwrap()))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (i + 1..points.len()).map(move |j| (i, j)))
        .collect();
    let order = |v: &[DVector<f64>]| {
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        let dist: Vec<f64> = pairs.iter().map(|&(i, j)| (&v[i] - &v[j]).norm()).collect();
        idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
        idx
    };
    let same_order = order(&points) == order(&geometry);
    Outcome::new(
        worst < 1e-8 && same_order,
        format!(
            "max distance gap {worst:.2e} over 1000 pairs, ordering of {} distances identical: {same_order}",
            pairs.len()
        ),
    )
}

struct SeedRun {
    pca_rmse: f64,
    sfm_rmse: f64,
    pca: SeparabilityReport,
    sfm: SeparabilityReport,
    linear: SeparabilityReport,
}

fn directional_runs() -> (Vec<SeedRun>, Duration) {
    let start = Instant::now();
    let runs = SEEDS
        .iter()
        .map(|&seed| {
            let (corpus, _) = generate(&SynthConfig {
                seed,
                ..Default::default()
            })
            .unwrap();
            let labels = labels_of(&corpus);
            let base = TrainConfig {
                d: 16,
                seed,
                ..Default::default()
            };
            let pca = train_stage1(
                &corpus,
                &TrainConfig {
                    epochs: 0,
                    ..base.clone()
                },
            )
            .unwrap();
            let sfm = train_stage1(&corpus, &base).unwrap();
            let linear_cfg = TrainConfig {
                lambdas: LossWeights {
                    lambda_m: 0.0,
                    lambda_c: 0.0,
                    lambda_s: 1.0,
                },
                ..base
            };
            let linear = train_stage1(&corpus, &linear_cfg).unwrap();
            SeedRun {
                pca_rmse: pca.report.final_rmse,
                sfm_rmse: sfm.report.final_rmse,
                pca: report(&pca.codes, &labels),
                sfm: report(&sfm.codes, &labels),
                linear: report(&linear.codes, &labels),
            }
        })
        .collect();
    (runs, start.elapsed())
}

fn directional(runs: &[SeedRun], elapsed: Duration) -> Outcome {
    let n = runs.len() as f64;
    let pca_rmse = runs.iter().map(|r| r.pca_rmse).sum::<f64>() / n;
    let sfm_rmse = runs.iter().map(|r| r.sfm_rmse).sum::<f64>() / n;
    let wins = runs
        .iter()
        .filter(|r| r.sfm.sce > r.pca.sce && r.sfm.scc > r.pca.scc && ch_of(&r.sfm) > ch_of(&r.pca))
        .count();
    let mean = |f: &dyn Fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
    Outcome::new(
        sfm_rmse <= 1.10 * pca_rmse && wins == runs.len() && elapsed < Duration::from_secs(600),
        format!(
            "rmse sfm {sfm_rmse:.4} vs pca {pca_rmse:.4}; mean sce {:.4}/{:.4} scc {:.4}/{:.4} ch {:.3}/{:.3}; all three higher on {wins}/{} seeds; {:.1}s",
            mean(&|r| r.sfm.sce),
            mean(&|r| r.pca.sce),
            mean(&|r| r.sfm.scc),
            mean(&|r| r.pca.scc),
            mean(&|r| ch_of(&r.sfm)),
            mean(&|r| ch_of(&r.pca)),
            runs.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn sphere_linear(runs: &[SeedRun]) -> Outcome {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for r in runs {
        worst.0 = worst.0.max((r.linear.sce - r.pca.sce).abs());
        worst.1 = worst.1.max((r.linear.scc - r.pca.scc).abs());
        worst.2 = worst.2.max((ch_of(&r.linear) - ch_of(&r.pca)).abs() / ch_of(&r.pca));
    }
    Outcome::new(
        worst.0 < 0.05 && worst.1 < 0.05 && worst.2 < 0.10,
        format!(
            "max |dSCE| {:.2e}, max |dSCC| {:.2e}, max relative dCH {:.2e}",
            worst.0, worst.1, worst.2
        ),
    )
}

fn fitting() -> Outcome {
    let (_, truth) = generate(&SynthConfig::default()).unwrap();
    let model = &truth.model;
    let cfg = FitConfig::default();
    let mut r = rng(5);
    let (mut worst_param, mut worst_excess, mut slowest) = (0.0f64, f64::NEG_INFINITY, Duration::ZERO);
    for _ in 0..20 {
        let x = uniform_vector(&mut r, model.dim(), -1.0, 1.0);
        let code = ShapeCode::new(x, r.random_range(1.0..10.0));
        let target = reconstruct(model, &code).unwrap();
        let start = Instant::now();
        let fit = fit_mesh(model, &target, &cfg).unwrap();
        slowest = slowest.max(start.elapsed());
        let got = fit.code.shape_param().unwrap();
        worst_param = worst_param.max((got - code.shape_param().unwrap()).amax());
        worst_excess = worst_excess.max(fit.final_loss - fit.projection_loss);
    }
    Outcome::new(
        worst_param < 1e-4 && worst_excess <= 1e-8 && slowest < Duration::from_secs(1),
        format!(
            "max |s*x - truth| {worst_param:.2e}, max loss above projection {worst_excess:.2e}, slowest fit {:.3}s",
            slowest.as_secs_f64()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut worst_sil = 0.0f64;
    let mut worst_ch = 0.0f64;
    for seed in 0..50 {
        let (points, labels) = random_dataset(1000 + seed, 200);
        let vectors = points.iter().map(|p| DVector::from_vec(p.clone())).collect();
        let data = LabeledVectors::new(vectors, labels.clone()).unwrap();
        for (dist, cos) in [(Distance::Euclidean, false), (Distance::Cosine, true)] {
            let got = silhouette(&data, dist).unwrap();
            worst_sil = worst_sil.max((got - brute_silhouette(&points, &labels, cos)).abs());
        }
        let want = brute_ch(&points, &labels);
        worst_ch = worst_ch.max((calinski_harabasz(&data).unwrap() - want).abs() / want.max(1.0));
    }
    let square = [(0.0, 0.0), (0.0, 2.0), (10.0, 0.0), (10.0, 2.0)]
        .iter()
        .map(|&(a, b)| DVector::from_vec(vec![a, b]))
        .collect();
    let hand = calinski_harabasz(&LabeledVectors::new(square, vec![0, 0, 1, 1]).unwrap()).unwrap();
    Outcome::new(
        worst_sil < 1e-10 && worst_ch < 1e-10 && (hand - 50.0).abs() < 1e-10,
        format!("50 datasets: silhouette gap {worst_sil:.2e}, CH gap {worst_ch:.2e}; hand case CH {hand}"),
    )
}

fn interpolation() -> Outcome {
    let model = finalized_model(21, 100, 10);
    let mean = model.mean().clone();
    let mut r = rng(22);
    let (mut unit_gap, mut mid_gap) = (0.0f64, 0.0f64);
    let mut endpoints = true;
    for _ in 0..200 {
        let a = uniform_vector(&mut r, 10, -1.0, 1.0).normalize();
        let b = uniform_vector(&mut r, 10, -1.0, 1.0).normalize();
        for k in 0..=20 {
            let v = slerp_identity(&a, &b, k as f64 / 20.0).unwrap();
            unit_gap = unit_gap.max((v.norm() - 1.0).abs());
        }
        endpoints &= slerp_identity(&a, &b, 0.0).unwrap() == a && slerp_identity(&a, &b, 1.0).unwrap() == b;
        let (s1, s2) = (r.random_range(0.5..20.0), r.random_range(0.5..20.0));
        let c1 = ShapeCode::new(a.clone() * 3.0, s1);
        let c2 = ShapeCode::new(b.clone(), s2);
        let mid = interpolate_codes(&c1, &c2, 0.5).unwrap();
        let dist = (flat(&reconstruct(&model, &mid).unwrap()) - &mean).norm();
        mid_gap = mid_gap.max((dist - 0.5 * (s1 + s2)).abs());
    }
    Outcome::new(
        unit_gap < 1e-9 && endpoints && mid_gap < 1e-6,
        format!("max unit-norm gap {unit_gap:.2e}, endpoints exact: {endpoints}, midpoint distance gap {mid_gap:.2e}"),
    )
}

fn hash_dir(dir: &Path) -> String {
    let mut names: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&p).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn determinism_run(dir: &Path) {
    let synth = SynthConfig {
        vertex_count: 200,
        n_identities: 8,
        samples_per_identity: 6,
        seed: 3,
        ..Default::default()
    };
    let (corpus, _) = generate(&synth).unwrap();
    let labels = labels_of(&corpus);
    let out = train_stage1(
        &corpus,
        &TrainConfig {
            d: 10,
            epochs: 12,
            batch_size: 16,
            seed: 9,
            ..Default::default()
        },
    )
    .unwrap();
    container::write_container(&out.model, dir.join("model.sfmb")).unwrap();
    export_codes_csv(&out.codes, &labels, dir.join("codes.csv")).unwrap();
    std::fs::write(dir.join("train.json"), serde_json::to_vec_pretty(&out.report).unwrap()).unwrap();
    let rep = build_report(
        &out.codes,
        &labels,
        Some(out.report.final_rmse),
        ReportOptions::default(),
    )
    .unwrap();
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&rep).unwrap()).unwrap();
}

fn determinism() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let hashes: Vec<String> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            pool.install(|| determinism_run(dir.path()));
            hash_dir(dir.path())
        })
        .collect();
    Outcome::new(
        hashes[0] == hashes[1],
        format!("sha256 {} / {}", &hashes[0][..16], &hashes[1][..16]),
    )
}

fn generalization() -> Outcome {
    let mut wins = 0;
    let mut margins = Vec::new();
    for &seed in &SEEDS {
        let (corpus, _) = generate(&SynthConfig {
            seed,
            ..Default::default()
        })
        .unwrap();
        let train = corpus.filter_identities(|id| id < 15).unwrap();
        let held = corpus.filter_identities(|id| id >= 15).unwrap();
        let labels = labels_of(&held);
        let base = TrainConfig {
            d: 16,
            seed,
            ..Default::default()
        };
        let pca = train_stage1(
            &train,
            &TrainConfig {
                epochs: 0,
                ..base.clone()
            },
        )
        .unwrap();
        let sfm = train_stage1(&train, &base).unwrap();
        let fit = FitConfig {
            seed,
            ..Default::default()
        };
        let scc = |model: &SphereFaceModel| {
            let batch = fit_corpus(model, &held, &fit).unwrap();
            let codes: Vec<ShapeCode> = batch.results.into_iter().map(|r| r.unwrap().code).collect();
            report(&codes, &labels).scc
        };
        let (a, b) = (scc(&sfm.model), scc(&pca.model));
        if a > b {
            wins += 1;
        }
        margins.push(format!("{:+.4}", a - b));
    }
    Outcome::new(
        wins >= 4,
        format!(
            "held-out SCC higher for SFM on {wins}/5 seeds (margins {})",
            margins.join(" ")
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradients match finite differences", gradients()),
        ("reconstruction is an isometry", isometry()),
    ];
    let (runs, elapsed) = directional_runs();
    results.push(("directional ordering vs PCA", directional(&runs, elapsed)));
    results.push(("sphere-linear matches PCA", sphere_linear(&runs)));
    results.push(("fitting recovers self-generated codes", fitting()));
    results.push(("metrics match brute force", metric_oracles()));
    results.push(("interpolation", interpolation()));
    results.push(("determinism", determinism()));
    results.push(("held-out identities", generalization()));

    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{}] {name}: {}", i + 1, outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
