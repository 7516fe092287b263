use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use sfm_core::corpus::{read_labels, LABELS_FILE};
use sfm_core::fit::{fit_meshes, FitConfig, TrajectoryPoint};
use sfm_core::losses::LossWeights;
use sfm_core::mesh::{load_obj, save_obj, Mesh};
use sfm_core::metrics::{ReportOptions, SilhouetteForm};
use sfm_core::model::{read_container, write_container};
use sfm_core::synth::{synthetic_file_names, write_synthetic};
use sfm_core::train::{export_codes_csv, read_codes_csv, TrainReport};
use sfm_core::{
    build_report, generate, interpolate_codes, oracle_report, reconstruct, train_stage1, Distance, LabeledCorpus,
    SeparabilityReport, ShapeCode, SynthConfig, TrainConfig,
};

use crate::args::{EvalArgs, FitArgs, InterpArgs, SynthArgs, TrainArgs, TrainMode};
use crate::error::{usage, CliError};
use crate::manifest::write_json;

pub const MODEL_FILE: &str = "model.sfmb";
pub const CODES_FILE: &str = "codes.csv";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const EVAL_REPORT_FILE: &str = "report.json";

/// What a command did, for the manifest.
pub struct RunRecord {
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

fn to_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn identities(corpus: &LabeledCorpus) -> Vec<i64> {
    (0..corpus.len()).map(|i| corpus.identity_of(i)).collect()
}

pub fn synth(args: &SynthArgs, seed: u64) -> Result<RunRecord, CliError> {
    let config = SynthConfig {
        vertex_count: args.vertices,
        d_true: args.dim,
        n_identities: args.identities,
        samples_per_identity: args.per_id,
        within_identity_angle: args.sigma_theta,
        scale_mean: args.scale_mean,
        scale_std: args.scale_std,
        vertex_noise: args.noise,
        seed,
    };
    config.validate().map_err(usage)?;
    let (corpus, truth) = generate(&config)?;
    write_synthetic(&args.out, &corpus, &truth)?;

    let oracle = oracle_report(&truth, &corpus)?;
    println!("{}", SeparabilityReport::table_header());
    println!("{}", oracle.table_row("truth"));
    eprintln!("wrote {} meshes to {}", corpus.len(), args.out.display());
    Ok(RunRecord {
        config: to_value(&config),
        inputs: vec![],
        outputs: synthetic_file_names(&corpus).iter().map(|n| args.out.join(n)).collect(),
    })
}

#[derive(Serialize)]
struct TrainReportFile<'a> {
    mode: TrainMode,
    config: &'a TrainConfig,
    training: &'a TrainReport,
    separability: &'a SeparabilityReport,
}

pub fn train(args: &TrainArgs, seed: u64) -> Result<RunRecord, CliError> {
    let mut config = TrainConfig {
        d: args.dim,
        lr_code: args.lr_code,
        lr_basis: args.lr_basis,
        batch_size: args.batch_size,
        epochs: args.epochs,
        decay_factor: args.decay_factor,
        decay_every_epochs: args.decay_every,
        lambdas: LossWeights {
            lambda_m: args.lambda_m,
            lambda_c: args.lambda_c,
            lambda_s: args.lambda_s,
        },
        seed,
        center_denominator: args.center_denominator.into(),
        logit_scale: args.logit_scale,
    };
    match args.mode {
        TrainMode::Sfm => {}
        TrainMode::SphereLinear => {
            config.lambdas.lambda_m = 0.0;
            config.lambdas.lambda_c = 0.0;
        }
        TrainMode::Pca => config.epochs = 0,
    }
    config.validate().map_err(usage)?;
    let corpus = LabeledCorpus::load_dir(&args.corpus)?;
    eprintln!(
        "training {:?} on {} meshes ({} identities, {} vertices), d = {}",
        args.mode,
        corpus.len(),
        corpus.n_classes(),
        corpus.vertex_count(),
        config.d
    );
    let out = train_stage1(&corpus, &config)?;

    create_dir(&args.out)?;
    let labels = identities(&corpus);
    let model_path = args.out.join(MODEL_FILE);
    let codes_path = args.out.join(CODES_FILE);
    let report_path = args.out.join(TRAIN_REPORT_FILE);
    write_container(&out.model, &model_path)?;
    export_codes_csv(&out.codes, &labels, &codes_path)?;
    let separability = build_report(
        &out.codes,
        &labels,
        Some(out.report.final_rmse),
        ReportOptions::default(),
    )?;
    write_json(
        &report_path,
        &TrainReportFile {
            mode: args.mode,
            config: &config,
            training: &out.report,
            separability: &separability,
        },
    )?;

    let name = match args.mode {
        TrainMode::Sfm => "sfm",
        TrainMode::SphereLinear => "sphere-linear",
        TrainMode::Pca => "pca",
    };
    println!("{}", SeparabilityReport::table_header());
    println!("{}", separability.table_row(name));
    Ok(RunRecord {
        config: to_value(&config),
        inputs: vec![args.corpus.clone()],
        outputs: vec![model_path, codes_path, report_path],
    })
}

#[derive(Serialize)]
struct FitEntry {
    file: String,
    identity: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    projection_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trajectory: Option<Vec<TrajectoryPoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct FitReportFile<'a> {
    config: &'a FitConfig,
    meshes: usize,
    succeeded: usize,
    failed: usize,
    mean_rmse: Option<f64>,
    results: Vec<FitEntry>,
}

/// `(file, identity)` pairs: from labels.csv when present, else every OBJ in
/// name order with its position as identity.
fn mesh_listing(dir: &Path) -> Result<Vec<(String, i64)>, CliError> {
    if dir.join(LABELS_FILE).is_file() {
        return Ok(read_labels(dir)?
            .into_iter()
            .map(|e| (e.filename, e.identity))
            .collect());
    }
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".obj"))
        .collect();
    names.sort();
    Ok(names.into_iter().enumerate().map(|(i, n)| (n, i as i64)).collect())
}

pub fn fit(args: &FitArgs, seed: u64) -> Result<RunRecord, CliError> {
    let config = FitConfig {
        lr: args.lr,
        decay_factor: args.decay_factor,
        decay_every: args.decay_every,
        iterations: args.iters,
        seed,
    };
    let bad_lr = !(config.lr.is_finite() && config.lr > 0.0);
    if bad_lr || config.decay_factor.is_nan() || config.decay_factor <= 0.0 || config.decay_every == 0 {
        return Err(CliError::Usage(format!(
            "fit needs lr > 0, decay factor > 0 and decay every >= 1; got {config:?}"
        )));
    }
    let model = read_container(&args.model)?;
    let listing = mesh_listing(&args.meshes)?;
    if listing.is_empty() {
        return Err(CliError::Run(format!("no OBJ files in {}", args.meshes.display())));
    }

    let mut entries: Vec<FitEntry> = Vec::with_capacity(listing.len());
    let mut loaded: Vec<Mesh> = Vec::new();
    let mut loaded_at: Vec<usize> = Vec::new();
    for (i, (file, identity)) in listing.iter().enumerate() {
        let mut entry = FitEntry {
            file: file.clone(),
            identity: *identity,
            rmse: None,
            projection_loss: None,
            final_loss: None,
            trajectory: None,
            error: None,
        };
        match load_obj(args.meshes.join(file)) {
            Ok(m) => {
                loaded.push(m);
                loaded_at.push(i);
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        entries.push(entry);
    }

    let mut codes = Vec::new();
    let mut labels = Vec::new();
    if !loaded.is_empty() {
        let batch = fit_meshes(&model, &loaded, &config)?;
        for (k, result) in batch.results.into_iter().enumerate() {
            let entry = &mut entries[loaded_at[k]];
            if let Some(r) = result {
                entry.rmse = Some(r.final_rmse);
                entry.projection_loss = Some(r.projection_loss);
                entry.final_loss = Some(r.final_loss);
                entry.trajectory = Some(r.trajectory);
                labels.push(entry.identity);
                codes.push(r.code);
            }
        }
        for failure in batch.failures {
            entries[loaded_at[failure.index]].error = Some(failure.message);
        }
    }

    create_dir(&args.out)?;
    let rmses: Vec<f64> = entries.iter().filter_map(|e| e.rmse).collect();
    let succeeded = rmses.len();
    let report = FitReportFile {
        config: &config,
        meshes: entries.len(),
        succeeded,
        failed: entries.len() - succeeded,
        mean_rmse: (succeeded > 0).then(|| rmses.iter().sum::<f64>() / succeeded as f64),
        results: entries,
    };
    let report_path = args.out.join(FIT_REPORT_FILE);
    write_json(&report_path, &report)?;
    for e in report.results.iter().filter(|e| e.error.is_some()) {
        eprintln!("{}: {}", e.file, e.error.as_deref().unwrap_or_default());
    }
    if succeeded == 0 {
        return Err(CliError::Run(format!("all {} fits failed", report.meshes)));
    }
    let codes_path = args.out.join(CODES_FILE);
    export_codes_csv(&codes, &labels, &codes_path)?;
    println!(
        "fitted {succeeded}/{} meshes, mean RMSE {:.6}",
        report.meshes,
        report.mean_rmse.unwrap_or(f64::NAN)
    );
    Ok(RunRecord {
        config: to_value(&config),
        inputs: vec![args.model.clone(), args.meshes.clone()],
        outputs: vec![codes_path, report_path],
    })
}

#[derive(Serialize)]
struct EvalReportFile<'a> {
    name: &'a str,
    distance: Distance,
    silhouette_form: SilhouetteForm,
    /// Silhouette under `distance`.
    silhouette: f64,
    report: &'a SeparabilityReport,
}

pub fn eval(args: &EvalArgs) -> Result<RunRecord, CliError> {
    let (labels, codes) = read_codes_csv(&args.codes)?;
    let options = ReportOptions {
        space: args.space,
        silhouette_form: if args.summed_silhouette {
            SilhouetteForm::Summed
        } else {
            SilhouetteForm::Standard
        },
    };
    let report = build_report(&codes, &labels, args.rmse, options)?;
    let silhouette = match args.distance {
        Distance::Euclidean => report.sce,
        Distance::Cosine => report.scc,
    };
    create_dir(&args.out)?;
    let path = args.out.join(EVAL_REPORT_FILE);
    write_json(
        &path,
        &EvalReportFile {
            name: &args.name,
            distance: args.distance,
            silhouette_form: options.silhouette_form,
            silhouette,
            report: &report,
        },
    )?;
    println!("{}", SeparabilityReport::table_header());
    println!("{}", report.table_row(&args.name));
    Ok(RunRecord {
        config: serde_json::json!({
            "space": args.space,
            "distance": args.distance,
            "silhouette_form": options.silhouette_form,
            "rmse": args.rmse,
        }),
        inputs: vec![args.codes.clone()],
        outputs: vec![path],
    })
}

fn parse_inline(text: &str) -> Result<ShapeCode, CliError> {
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| CliError::Usage(format!("inline code '{text}': {e}")))?;
    if values.len() < 2 {
        return Err(CliError::Usage(format!(
            "inline code '{text}' needs s and at least one x value"
        )));
    }
    Ok(ShapeCode::new(DVector::from_column_slice(&values[1..]), values[0]))
}

fn endpoints(args: &InterpArgs) -> Result<(ShapeCode, ShapeCode), CliError> {
    match (&args.codes, args.from, args.to, &args.inline_from, &args.inline_to) {
        (Some(path), Some(a), Some(b), None, None) => {
            let (_, codes) = read_codes_csv(path)?;
            let pick = |i: usize| {
                codes.get(i).cloned().ok_or_else(|| {
                    CliError::Usage(format!(
                        "row {i} out of range: {} has {} codes",
                        path.display(),
                        codes.len()
                    ))
                })
            };
            Ok((pick(a)?, pick(b)?))
        }
        (None, None, None, Some(a), Some(b)) => Ok((parse_inline(a)?, parse_inline(b)?)),
        _ => Err(CliError::Usage(
            "give endpoints as --codes FILE --from I --to J, or --inline-from and --inline-to".into(),
        )),
    }
}

pub fn frame_name(i: u64) -> String {
    format!("frame_{i:03}.obj")
}

pub fn interp(args: &InterpArgs) -> Result<RunRecord, CliError> {
    let (a, b) = endpoints(args)?;
    let model = read_container(&args.model)?;
    create_dir(&args.out)?;
    let last = args.frames - 1;
    let mut outputs = Vec::with_capacity(args.frames as usize);
    for i in 0..args.frames {
        let t = i as f64 / last as f64;
        let code = interpolate_codes(&a, &b, t)?;
        let path = args.out.join(frame_name(i));
        save_obj(&reconstruct(&model, &code)?, &path)?;
        outputs.push(path);
    }
    eprintln!("wrote {} frames to {}", args.frames, args.out.display());
    let mut inputs = vec![args.model.clone()];
    inputs.extend(args.codes.clone());
    Ok(RunRecord {
        config: serde_json::json!({ "frames": args.frames }),
        inputs,
        outputs,
    })
}
