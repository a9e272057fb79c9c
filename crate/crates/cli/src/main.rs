use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use recourse_core::data::synth;
use recourse_core::evaluators::build_ensemble;
use recourse_core::pipeline::{run, DataSource, EpsilonScale, ExperimentConfig};
use recourse_core::{EnsembleSpec, Error, ModelFile, RashomonEllipsoid, Result, TrainConfig};

/// Exit status of a run that finished with budget overruns or failed cells.
const EXIT_PARTIAL: u8 = 2;
/// Exit status of `certify` when the point is not robust.
const EXIT_NOT_ROBUST: u8 = 3;

#[derive(Parser)]
#[command(name = "recourse", version, about = "Certified robust counterfactual explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a cross-validated experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run only the first `k` folds of the split.
        #[arg(long)]
        folds: Option<usize>,
        /// Override the split and training seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Keep complete cells from an earlier run with the same config.
        #[arg(long)]
        resume: bool,
    },
    /// Check whether a point is robust under an ellipsoid.
    Certify {
        /// Ellipsoid JSON as exported by the service.
        #[arg(long)]
        ellipsoid: PathBuf,
        /// JSON array, inline or as a file path. Without `--model` it is
        /// the lifted vector (features then a trailing 1).
        #[arg(long)]
        point: String,
        /// Decision threshold on the logit; the model's own by default.
        #[arg(long, allow_negative_numbers = true)]
        t: Option<f64>,
        /// Model file used to lift an input-space point.
        #[arg(long)]
        model: Option<PathBuf>,
        /// The point is in raw units; standardize it with the model file's scaler.
        #[arg(long, requires = "model")]
        raw: bool,
        /// Certify at this ε instead of the file's.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Build an evaluator ensemble from a JSON job spec.
    Ensemble {
        #[arg(long)]
        spec: PathBuf,
        /// Where to write the ensemble; overrides the spec's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Per-request limit on generation, in seconds.
        #[arg(long, default_value_t = 10.0)]
        timeout: f64,
    },
    /// Write the synthetic credit table and its schema.
    Synth {
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Job file read by `ensemble`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleJob {
    data: DataSource,
    #[serde(default = "yes")]
    balance: bool,
    #[serde(default)]
    balance_seed: u64,
    /// Training settings for the base model and for retrain members.
    #[serde(default)]
    model: TrainConfig,
    /// Use this base model instead of training one.
    #[serde(default)]
    model_file: Option<PathBuf>,
    /// How `ensemble.epsilon_target` is read.
    #[serde(default)]
    epsilon_scale: EpsilonScale,
    ensemble: EnsembleSpec,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize)]
struct CertifyReport {
    robust: bool,
    robust_logit: f64,
    nominal_logit: f64,
    penalty: f64,
    threshold: f64,
    epsilon: f64,
}

#[derive(Debug, Serialize)]
struct EnsembleReport {
    kind: &'static str,
    members: usize,
    shortfall: usize,
    epsilon_target: f64,
    base_objective: Option<f64>,
    variance: Option<f64>,
    stalled: usize,
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run {
            config,
            out,
            folds,
            seed,
            resume,
        } => run_experiment(&config, &out, folds, seed, resume),
        Command::Certify {
            ellipsoid,
            point,
            t,
            model,
            raw,
            epsilon,
        } => certify(&ellipsoid, &point, t, model.as_deref(), raw, epsilon),
        Command::Ensemble { spec, out } => ensemble(&spec, out),
        Command::Serve { addr, timeout } => serve(addr, timeout),
        Command::Synth { rows, seed, out } => write_synth(rows, seed, &out),
    }
}

fn run_experiment(
    config: &Path,
    out: &Path,
    folds: Option<usize>,
    seed: Option<u64>,
    resume: bool,
) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(k) = folds {
        if k == 0 {
            return Err(Error::Config("--folds must be at least 1".into()));
        }
        cfg.max_folds = Some(k);
    }
    if let Some(s) = seed {
        cfg.split.seed = s;
        cfg.model.seed = s;
    }
    let result = run(&cfg, out, resume)?;
    let failed = result.cells.iter().filter(|c| !c.is_complete()).count();
    log::info!(
        "{} cells written to {} ({failed} incomplete), config {}",
        result.cells.len(),
        out.display(),
        &result.config_hash[..12]
    );
    Ok(if result.partial {
        ExitCode::from(EXIT_PARTIAL)
    } else {
        ExitCode::SUCCESS
    })
}

/// A JSON array given inline or as a file path.
fn read_point(arg: &str) -> Result<Vec<f64>> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        fs::read_to_string(arg)?
    };
    let v: Vec<f64> = serde_json::from_str(&text)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("point coordinates must be finite".into()));
    }
    Ok(v)
}

fn certify(
    ellipsoid: &Path,
    point: &str,
    t: Option<f64>,
    model: Option<&Path>,
    raw: bool,
    epsilon: Option<f64>,
) -> Result<ExitCode> {
    let mut ell = RashomonEllipsoid::from_json(&fs::read_to_string(ellipsoid)?)?;
    if let Some(e) = epsilon {
        ell = ell.with_epsilon(e)?;
    }
    let mut x = DVector::from_vec(read_point(point)?);
    let (lifted, threshold) = match model {
        Some(path) => {
            let file = ModelFile::from_json(&fs::read_to_string(path)?)?;
            let id = file.model.id();
            if let Some(expected) = &ell.provenance().model_id {
                if *expected != id {
                    return Err(Error::InvalidInput(format!(
                        "ellipsoid was built for model {expected}, model file is {id}"
                    )));
                }
            }
            if raw {
                let scaler = file
                    .scaler
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("model file has no scaler for --raw".into()))?;
                scaler.transform_row(&mut x);
            }
            (file.model.lift(&x)?, t.unwrap_or_else(|| file.model.threshold()))
        }
        None => {
            let t = t.ok_or_else(|| Error::InvalidInput("--t is required without --model".into()))?;
            (x, t)
        }
    };
    let wc = ell.worst_case(&lifted)?;
    let report = CertifyReport {
        robust: wc.robust_logit >= threshold,
        robust_logit: wc.robust_logit,
        nominal_logit: wc.nominal_logit,
        penalty: wc.penalty,
        threshold,
        epsilon: ell.epsilon(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.robust {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NOT_ROBUST)
    })
}

fn ensemble(spec_path: &Path, out: Option<PathBuf>) -> Result<ExitCode> {
    let mut job: EnsembleJob = serde_json::from_str(&fs::read_to_string(spec_path)?)?;
    job.ensemble.validate()?;
    job.model.validate()?;
    let base_dir = spec_path.parent().unwrap_or(Path::new("."));
    if let DataSource::Csv { path, schema } = &mut job.data {
        for p in [path, schema] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
    }
    let (raw, _) = job.data.load()?;
    let raw = if job.balance {
        raw.balance(job.balance_seed)
    } else {
        raw
    };
    let all: Vec<usize> = (0..raw.n()).collect();
    let ds = raw.preprocess(&all)?;
    let base = match &job.model_file {
        Some(p) => {
            let p = if p.is_relative() { base_dir.join(p) } else { p.clone() };
            let file = ModelFile::from_json(&fs::read_to_string(p)?)?;
            if file.model.input_dim() != ds.d() {
                return Err(Error::DimensionMismatch {
                    expected: ds.d(),
                    got: file.model.input_dim(),
                });
            }
            file.model
        }
        None => recourse_core::models::train(&ds, &job.model)?.model,
    };
    let objective = base.objective(&ds)?;
    let mut spec = job.ensemble.clone();
    spec.epsilon_target = job.epsilon_scale.resolve(spec.epsilon_target, objective);
    let ens = build_ensemble(&base, &ds, None, &job.model, &spec)?;
    let out = out.or(job.out);
    if let Some(p) = &out {
        fs::write(p, ens.to_json())?;
    }
    let report = EnsembleReport {
        kind: spec.kind.name(),
        members: ens.len(),
        shortfall: ens.shortfall,
        epsilon_target: spec.epsilon_target,
        base_objective: ens.base_objective.or(Some(objective)),
        variance: ens.variance,
        stalled: ens.stalled,
        out,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn serve(addr: SocketAddr, timeout: f64) -> Result<ExitCode> {
    if !(timeout > 0.0 && timeout.is_finite()) {
        return Err(Error::Config("--timeout must be positive".into()));
    }
    let config = recourse_service::ServiceConfig {
        timeout: Duration::from_secs_f64(timeout),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(recourse_service::serve(addr, config))?;
    Ok(ExitCode::SUCCESS)
}

fn write_synth(rows: usize, seed: u64, out: &Path) -> Result<ExitCode> {
    fs::create_dir_all(out)?;
    let csv = out.join("credit.csv");
    let schema = out.join("credit.schema.json");
    fs::write(&csv, synth::german_credit_csv(rows, seed))?;
    fs::write(&schema, serde_json::to_string_pretty(&synth::german_credit_schema())?)?;
    log::info!("wrote {} and {}", csv.display(), schema.display());
    Ok(ExitCode::SUCCESS)
}
