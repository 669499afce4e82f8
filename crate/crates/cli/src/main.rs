use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use lbo_core::bench::{bench_csv_rows, bench_suite, BenchEnvironment, BenchRow, BENCH_CSV_HEADER};
use lbo_core::datagen::default_protocols;
use lbo_core::detection::{aggregate_confusion, calibrate, evaluate_protocol, CurvePoint, TransitionThreshold};
use lbo_core::io::{read_json, write_csv, write_json, write_protocol, Manifest};
use lbo_core::neural::ModelKind;
use lbo_core::pipeline::{
    fit_hmm, fit_neural, fit_trans_error, metric_curve, prepare_reference, Detector, DetectorCheckpoint,
    DetectorReport, RunConfig,
};
use lbo_core::series::{chrono_split, ratio_eq, Protocol};

const EXIT_CONFIG: u8 = 2;
const EXIT_FS: u8 = 3;
const EXIT_TRAINING: u8 = 4;
const EXIT_DATA: u8 = 5;

#[derive(Parser)]
#[command(name = "lbo", version, about = "Lean blowout transition detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic reference and test protocols.
    Generate(GenerateArgs),
    /// Fit a detector on the blowout record of a reference protocol.
    Train(TrainArgs),
    /// Compute the reference metric curve and the transition threshold.
    Calibrate(CalibrateArgs),
    /// Classify every record of the test protocols.
    Evaluate(EvaluateArgs),
    /// Time per-record inference of saved detectors.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Samples per record.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Lstm,
    Rnn,
    Hmm,
    TransError,
}

impl Kind {
    fn detector_name(self) -> &'static str {
        match self {
            Kind::Lstm => "lstm",
            Kind::Rnn => "rnn",
            Kind::Hmm => "hmm",
            Kind::TransError => "trans_error",
        }
    }
}

/// Overrides for the JSON config; every flag wins over the file.
#[derive(Args, Default)]
struct Overrides {
    /// Seeds every stage: splits, initialization, shuffling, EM and anchors.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_x: Option<usize>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    hidden1: Option<usize>,
    #[arg(long)]
    hidden2: Option<usize>,
    #[arg(long)]
    dense: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    keep_best_val: bool,
    #[arg(long)]
    n_min: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    em_iters: Option<usize>,
    #[arg(long)]
    tau_d: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    anchors: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Saved detector; optional with `--detector trans-error`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    detector: Option<Kind>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Saved detector; may be omitted when the threshold file embeds one.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    threshold: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    tests: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Saved detectors or threshold files with an embedded detector.
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    tests: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Outcome<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => read_json(p).map_err(|e| Failure::new(EXIT_CONFIG, e)),
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.split.seed = s;
            cfg.train.seed = s;
            cfg.hmm.seed = s;
            cfg.trans_error.seed = s;
        }
        set(&mut cfg.split.t_x, self.t_x);
        set(&mut cfg.split.train_frac, self.train_frac);
        set(&mut cfg.split.val_frac, self.val_frac);
        set(&mut cfg.train.epochs, self.epochs);
        set(&mut cfg.train.batch_size, self.batch_size);
        set(&mut cfg.train.learning_rate, self.learning_rate);
        set(&mut cfg.train.hidden1, self.hidden1);
        set(&mut cfg.train.hidden2, self.hidden2);
        set(&mut cfg.train.dense, self.dense);
        if self.clip_norm.is_some() {
            cfg.train.clip_norm = self.clip_norm;
        }
        cfg.train.keep_best_val |= self.keep_best_val;
        set(&mut cfg.hmm.n_min, self.n_min);
        set(&mut cfg.hmm.n_max, self.n_max);
        set(&mut cfg.hmm.max_iters, self.em_iters);
        if self.tau_d.is_some() {
            cfg.trans_error.tau_d = self.tau_d;
        }
        if self.dim.is_some() {
            cfg.trans_error.dim = self.dim;
        }
        set(&mut cfg.trans_error.k_neighbors, self.neighbors);
        set(&mut cfg.trans_error.n_anchors, self.anchors);
        set(&mut cfg.trans_error.n_runs, self.runs);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Output of `calibrate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ThresholdFile {
    detector: String,
    reference: String,
    threshold: TransitionThreshold,
    curve: Vec<CurvePoint>,
    /// Present when the detector was fitted during calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<DetectorCheckpoint>,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    fn msg(code: u8, message: impl fmt::Display) -> Self {
        Self::new(code, anyhow::anyhow!("{message}"))
    }
}

impl From<lbo_core::Error> for Failure {
    fn from(e: lbo_core::Error) -> Self {
        use lbo_core::Error as E;
        let code = match &e {
            E::Io { .. } => EXIT_FS,
            E::ConfigInvalid(_) => EXIT_CONFIG,
            E::TrainingFailed(_) | E::DegenerateFit(_) => EXIT_TRAINING,
            _ => EXIT_DATA,
        };
        Self::new(code, e)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// `model.json` → `model.<suffix>` in the same directory.
fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn load_protocol(path: &Path) -> Outcome<Protocol> {
    Ok(Manifest::load(path)?)
}

fn generate(args: GenerateArgs) -> Outcome {
    let mut cfg = load_config(args.config.as_deref())?;
    set(&mut cfg.synth.seed, args.seed);
    set(&mut cfg.synth.samples_per_record, args.samples);
    cfg.synth.validate().map_err(|e| Failure::new(EXIT_CONFIG, e))?;

    if args.out.exists() && !args.force {
        let occupied = std::fs::read_dir(&args.out)
            .map_err(|e| Failure::new(EXIT_FS, e))?
            .next()
            .is_some();
        if occupied {
            return Err(Failure::msg(
                EXIT_FS,
                format!("{} is not empty; pass --force to overwrite", args.out.display()),
            ));
        }
    }

    let protocols = default_protocols(&cfg.synth)?;
    let mut manifests = Vec::new();
    for p in &protocols {
        let name = format!("{}.json", p.name);
        write_protocol(&args.out.join(&name), p, false)?;
        log::info!("wrote {name} with {} records", p.records().len());
        manifests.push(name);
    }
    write_json(
        &args.out.join("run.json"),
        &json!({
            "verb": "generate",
            "seed": cfg.synth.seed,
            "synth": cfg.synth,
            "reference": manifests[0],
            "tests": manifests[1..],
        }),
    )?;
    Ok(())
}

fn train(args: TrainArgs) -> Outcome {
    let mut cfg = load_config(args.config.as_deref())?;
    args.overrides.apply(&mut cfg);

    let manifest = Manifest::read(&args.reference)?;
    if !manifest.records.iter().any(|r| ratio_eq(r.phi_ratio, 1.0)) {
        return Err(Failure::msg(
            EXIT_TRAINING,
            format!("{} has no blowout record to train on", args.reference.display()),
        ));
    }
    let protocol = load_protocol(&args.reference)?;
    let reference = prepare_reference(&protocol, &cfg.split)?;

    let mut run = json!({
        "verb": "train",
        "kind": args.kind.detector_name(),
        "reference": path_str(&args.reference),
        "split": cfg.split,
    });
    let detector = match args.kind {
        Kind::Lstm | Kind::Rnn => {
            let kind = if args.kind == Kind::Lstm {
                ModelKind::Lstm
            } else {
                ModelKind::Rnn
            };
            let fit = fit_neural(kind, &reference, &cfg.train)?;
            let rows: Vec<Vec<String>> = fit
                .history
                .iter()
                .map(|h| vec![h.epoch.to_string(), h.train_loss.to_string(), h.val_loss.to_string()])
                .collect();
            write_csv(
                &sidecar(&args.out, "history.csv"),
                &["epoch", "train_loss", "val_loss"],
                &rows,
            )?;
            run["train"] = json!(cfg.train);
            fit.detector
        }
        Kind::Hmm => {
            let fit = fit_hmm(&reference, &cfg.hmm)?;
            let rows: Vec<Vec<String>> = fit
                .bic
                .iter()
                .map(|b| vec![b.n_states.to_string(), b.loglik.to_string(), b.bic.to_string()])
                .collect();
            write_csv(&sidecar(&args.out, "bic.csv"), &["n_states", "loglik", "bic"], &rows)?;
            run["hmm"] = json!(cfg.hmm);
            run["skipped_states"] = json!(fit.skipped);
            fit.detector
        }
        Kind::TransError => {
            let fit = fit_trans_error(&reference, &cfg.trans_error)?;
            run["trans_error"] = json!(cfg.trans_error);
            run["dimension"] = json!(fit.dimension.map(|d| json!({
                "dim": d.dim,
                "fnn_fractions": d.fractions,
                "capped": d.capped,
            })));
            fit.detector
        }
    };
    write_json(&args.out, &DetectorCheckpoint::from_detector(&detector))?;
    run["model"] = json!(path_str(&args.out));
    write_json(&sidecar(&args.out, "run.json"), &run)?;
    Ok(())
}

/// Reads a detector checkpoint, or the detector embedded in a threshold file.
fn load_detector(path: &Path) -> Outcome<Detector> {
    let value: serde_json::Value = read_json(path)?;
    let checkpoint = if value.get("threshold").is_some() {
        let file: ThresholdFile = serde_json::from_value(value).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
        file.model
            .ok_or_else(|| Failure::msg(EXIT_CONFIG, format!("{} embeds no detector", path.display())))?
    } else {
        serde_json::from_value(value).map_err(|e| {
            Failure::msg(
                EXIT_CONFIG,
                format!("{}: not a detector checkpoint: {e}", path.display()),
            )
        })?
    };
    Ok(checkpoint.into_detector()?)
}

fn calibrate_cmd(args: CalibrateArgs) -> Outcome {
    let mut cfg = load_config(args.config.as_deref())?;
    args.overrides.apply(&mut cfg);
    let protocol = load_protocol(&args.reference)?;

    let (detector, embedded) = match (&args.model, args.detector) {
        (Some(path), wanted) => {
            let d = load_detector(path)?;
            if let Some(k) = wanted {
                if k.detector_name() != d.name() {
                    return Err(Failure::msg(
                        EXIT_CONFIG,
                        format!(
                            "{} holds a {} detector, not {}",
                            path.display(),
                            d.name(),
                            k.detector_name()
                        ),
                    ));
                }
            }
            (d, false)
        }
        (None, Some(Kind::TransError)) => {
            let reference = prepare_reference(&protocol, &cfg.split)?;
            (fit_trans_error(&reference, &cfg.trans_error)?.detector, true)
        }
        (None, _) => {
            return Err(Failure::msg(
                EXIT_CONFIG,
                "--model is required unless --detector trans-error",
            ))
        }
    };

    let (_, holdout) = chrono_split(&protocol.blowout_record().series, cfg.split.train_frac)?;
    let curve = metric_curve(&detector, &protocol, Some(&holdout))?;
    let threshold = calibrate(&curve, protocol.transition_ratio, detector.direction())?;
    let rows: Vec<Vec<String>> = curve
        .points()
        .iter()
        .map(|p| vec![p.phi_ratio.to_string(), p.value.to_string()])
        .collect();
    let curve_path = sidecar(&args.out, "curve.csv");
    write_csv(&curve_path, &["phi_ratio", "value"], &rows)?;

    let file = ThresholdFile {
        detector: detector.name().into(),
        reference: protocol.name.clone(),
        threshold,
        curve: curve.points().to_vec(),
        model: embedded.then(|| DetectorCheckpoint::from_detector(&detector)),
    };
    write_json(&args.out, &file)?;
    write_json(
        &sidecar(&args.out, "run.json"),
        &json!({
            "verb": "calibrate",
            "detector": detector.name(),
            "model": args.model.as_deref().map(path_str),
            "reference": path_str(&args.reference),
            "split": cfg.split,
            "trans_error": embedded.then_some(cfg.trans_error),
            "threshold": path_str(&args.out),
            "curve": path_str(&curve_path),
        }),
    )?;
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Outcome {
    let file: ThresholdFile = read_json(&args.threshold).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let detector = match (&args.model, &file.model) {
        (Some(path), _) => load_detector(path)?,
        (None, Some(embedded)) => embedded.clone().into_detector()?,
        (None, None) => return Err(Failure::msg(EXIT_CONFIG, "--model is required for this threshold file")),
    };
    if detector.name() != file.detector {
        return Err(Failure::msg(
            EXIT_CONFIG,
            format!(
                "threshold was calibrated for {}, model is {}",
                file.detector,
                detector.name()
            ),
        ));
    }

    let mut per_protocol = Vec::with_capacity(args.tests.len());
    let mut curves = Vec::new();
    for path in &args.tests {
        let protocol = load_protocol(path)?;
        if let Some(r) = protocol.records().iter().find(|r| r.label.is_none()) {
            return Err(Failure::msg(
                EXIT_DATA,
                format!("{}: record {} has no label", path.display(), r.phi_ratio),
            ));
        }
        let curve = metric_curve(&detector, &protocol, None)?;
        let eval = evaluate_protocol(&protocol, &curve, &file.threshold)?;
        let rows: Vec<Vec<String>> = eval
            .predictions
            .iter()
            .map(|p| {
                vec![
                    p.phi_ratio.to_string(),
                    p.value.to_string(),
                    p.actual.to_string(),
                    p.predicted.to_string(),
                ]
            })
            .collect();
        let curve_path = sidecar(&args.out, &format!("{}.curve.csv", eval.name));
        write_csv(&curve_path, &["phi_ratio", "value", "actual", "predicted"], &rows)?;
        curves.push(path_str(&curve_path));
        per_protocol.push(eval);
    }
    let overall = aggregate_confusion(&per_protocol.iter().map(|e| e.confusion).collect::<Vec<_>>())?;
    let report = DetectorReport {
        detector: detector.name().into(),
        threshold: file.threshold,
        per_protocol,
        overall_confusion: overall,
        overall_accuracy: overall.accuracy(),
    };
    write_json(&args.out, &report)?;
    write_json(
        &sidecar(&args.out, "run.json"),
        &json!({
            "verb": "evaluate",
            "model": args.model.as_deref().map(path_str),
            "threshold": path_str(&args.threshold),
            "tests": args.tests.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
            "report": path_str(&args.out),
            "curves": curves,
        }),
    )?;
    Ok(())
}

fn bench(args: BenchArgs) -> Outcome {
    let detectors = args
        .models
        .iter()
        .map(|p| load_detector(p))
        .collect::<Outcome<Vec<_>>>()?;
    let protocols = args
        .tests
        .iter()
        .map(|p| load_protocol(p))
        .collect::<Outcome<Vec<_>>>()?;
    let rows: Vec<BenchRow> = bench_suite(&detectors, &protocols, args.repeats)?;
    write_csv(&args.out, &BENCH_CSV_HEADER, &bench_csv_rows(&rows))?;
    write_json(
        &sidecar(&args.out, "env.json"),
        &json!({
            "environment": BenchEnvironment::capture(args.repeats),
            "models": args.models.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
            "tests": args.tests.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
            "rows": rows,
        }),
    )?;
    Ok(())
}
