//! Command-line driver: seeded simulation, fitting, staging, evaluation.
//!
//! Every command is a pure function of its inputs, flags, and `--seed`;
//! output files are written atomically and re-running a command with the
//! same inputs produces byte-identical files.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data validation
//! or I/O error, 4 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ebmkit::datamodel::{
    atomic_write, load_dataset, load_ground_truth, load_labels, save_dataset, save_ground_truth,
    DataError, SubjectLabel,
};
use ebmkit::eval::{
    auc, bootstrap_event_centers, crossval, kendall_distance_normalized, BootstrapReport,
    CrossvalOptions, CrossvalReport, EvalError,
};
use ebmkit::model::{FitOptions, FittedModel, Method, PipelineError};
use ebmkit::simbiote::{simulate_dataset, SimError, SimulationConfig};

#[derive(Parser)]
#[command(
    name = "ebmkit",
    version,
    about = "Event-based disease progression modeling toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with known ground truth.
    Simulate(SimulateArgs),
    /// Fit an event ordering model to a dataset directory.
    Fit(FitArgs),
    /// Stage subjects with a fitted model.
    Stage(StageArgs),
    /// Compare a model against ground truth, or score staged subjects.
    Evaluate(EvaluateArgs),
    /// Cross-validate out-of-sample staging quality.
    Crossval(CrossvalArgs),
    /// Bootstrap the spread of event centers and positions.
    Bootstrap(BootstrapArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory to create.
    #[arg(long, required_unless_present = "print_default_config")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the default config as JSON and exit.
    #[arg(long)]
    print_default_config: bool,
}

#[derive(Args)]
struct FitArgs {
    /// One of: ebm, debm, ndebm.
    #[arg(long)]
    method: String,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Model JSON to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random restarts of the ebm likelihood ascent.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
}

#[derive(Args)]
struct StageArgs {
    /// Fitted model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Stages CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Append normalized stage-weight columns w0..wN.
    #[arg(long)]
    include_weights: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Fitted model JSON (ordering-recovery mode, with --truth).
    #[arg(long, requires = "truth", conflicts_with_all = ["stages", "labels"])]
    model: Option<PathBuf>,
    /// Ground truth JSON written by simulate.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Stages CSV written by stage (staging-quality mode, with --labels).
    #[arg(long, requires = "labels")]
    stages: Option<PathBuf>,
    /// labels.csv with diagnostic labels and optional tags.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Metrics CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CrossvalArgs {
    /// One of: ebm, debm, ndebm.
    #[arg(long)]
    method: String,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics CSV to write; a JSON report lands next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    /// One of: ebm, debm, ndebm.
    #[arg(long)]
    method: String,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Number of bootstrap resamples.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Spread CSV to write; a JSON report lands next to it.
    #[arg(long)]
    out: PathBuf,
}

/// A command failure with its exit code category.
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<DataError> for Failure {
    fn from(err: DataError) -> Failure {
        Failure::Data(err.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(err: SimError) -> Failure {
        match err {
            SimError::InvalidConfig(_) => Failure::Usage(err.to_string()),
            SimError::DegenerateGeometry => Failure::Numeric(err.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(err: PipelineError) -> Failure {
        match err {
            PipelineError::UnknownMethod(_) | PipelineError::InvalidOptions(_) => {
                Failure::Usage(err.to_string())
            }
            PipelineError::Mixture { .. } | PipelineError::Region { .. } => {
                Failure::Numeric(err.to_string())
            }
            _ => Failure::Data(err.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(err: EvalError) -> Failure {
        match err {
            EvalError::TooFewFolds(_) | EvalError::NoRepeats | EvalError::NoResamples => {
                Failure::Usage(err.to_string())
            }
            EvalError::NoUsableFolds { .. } | EvalError::ResampleExhausted { .. } => {
                Failure::Numeric(err.to_string())
            }
            EvalError::Pipeline(inner) => inner.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Stage(args) => cmd_stage(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Crossval(args) => cmd_crossval(args),
        Command::Bootstrap(args) => cmd_bootstrap(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn parse_method(token: &str) -> Result<Method, Failure> {
    token.parse::<Method>().map_err(|e| Failure::Usage(e.to_string()))
}

fn pretty_json<T: serde::Serialize>(value: &T) -> String {
    let mut json = serde_json::to_string_pretty(value).expect("reports always serialize");
    json.push('\n');
    json
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Data(format!("reading {path:?}: {e}")))?;
            serde_json::from_str::<SimulationConfig>(&text)
                .map_err(|e| Failure::Usage(format!("invalid config {path:?}: {e}")))?
        }
        None => SimulationConfig::default(),
    };
    if args.print_default_config {
        print!("{}", pretty_json(&SimulationConfig::default()));
        return Ok(());
    }
    let out = args.out.expect("clap enforces --out unless printing the default config");
    let (dataset, truth) = simulate_dataset(&config, args.seed)?;
    save_dataset(&dataset, &out)?;
    save_ground_truth(&truth, &out.join("groundtruth.json"))?;
    println!(
        "simulated {} subjects x {} biomarkers into {}",
        dataset.n_subjects(),
        dataset.n_biomarkers(),
        out.display()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<(), Failure> {
    let method = parse_method(&args.method)?;
    let dataset = load_dataset(&args.data)?;
    let options = FitOptions {
        seed: args.seed,
        ebm_restarts: args.restarts,
        ..FitOptions::default()
    };
    let model = FittedModel::fit(method, &dataset, &options)?;
    model.save(&args.out)?;
    let ordered_names: Vec<&str> = model
        .ordering
        .order()
        .iter()
        .map(|&e| model.biomarker_names[e].as_str())
        .collect();
    println!("fitted {method} on {} subjects", dataset.n_subjects());
    println!("ordering: {}", ordered_names.join(" -> "));
    println!("objective: {}", model.objective);
    Ok(())
}

fn cmd_stage(args: StageArgs) -> Result<(), Failure> {
    let model = FittedModel::load(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    let posteriors = model.posterior_matrix(&dataset)?;
    let stages = model.stage_posteriors(&posteriors);
    let mut csv = String::from("subject_id,stage");
    if args.include_weights {
        for k in 0..=model.ordering.n_events() {
            write!(csv, ",w{k}").expect("writing to a string cannot fail");
        }
    }
    csv.push('\n');
    let distributions = args
        .include_weights
        .then(|| model.stage_distributions(&posteriors));
    for (j, stage) in stages.iter().enumerate() {
        write!(csv, "{},{stage}", dataset.subject_ids[j]).expect("string write");
        if let Some(dists) = &distributions {
            for w in dists[j].normalized() {
                write!(csv, ",{w}").expect("string write");
            }
        }
        csv.push('\n');
    }
    atomic_write(&args.out, csv.as_bytes())?;
    println!("staged {} subjects into {}", stages.len(), args.out.display());
    Ok(())
}

/// One metrics.csv row; empty context fields stay empty.
fn metric_row(csv: &mut String, method: &str, repeat: &str, fold: &str, metric: &str, value: f64) {
    writeln!(csv, "{method},{repeat},{fold},{metric},{value}").expect("string write");
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let mut csv = String::from("method,repeat,fold,metric,value\n");
    match (&args.model, &args.truth, &args.stages, &args.labels) {
        (Some(model_path), Some(truth_path), None, None) => {
            let model = FittedModel::load(model_path)?;
            let truth = load_ground_truth(truth_path)?;
            if truth.true_order.len() != model.ordering.n_events() {
                return Err(Failure::Data(format!(
                    "model has {} events but ground truth has {}",
                    model.ordering.n_events(),
                    truth.true_order.len()
                )));
            }
            let method = model.method.token();
            let distance =
                kendall_distance_normalized(model.ordering.order(), &truth.true_order);
            metric_row(&mut csv, method, "", "", "kendall_distance", distance);
            metric_row(
                &mut csv,
                method,
                "",
                "",
                "n_events",
                model.ordering.n_events() as f64,
            );
        }
        (None, None, Some(stages_path), Some(labels_path)) => {
            let stages = read_stages(stages_path)?;
            let (ids, labels, tags) = load_labels(labels_path)?;
            if ids != stages.0 {
                return Err(Failure::Data(format!(
                    "subject ids in {} do not match {}",
                    stages_path.display(),
                    labels_path.display()
                )));
            }
            let values = stages.1;
            let of_label = |wanted: SubjectLabel| -> Vec<f64> {
                labels
                    .iter()
                    .zip(&values)
                    .filter(|(&l, _)| l == wanted)
                    .map(|(_, &s)| s)
                    .collect()
            };
            let de_cn = auc(&of_label(SubjectLabel::Cn), &of_label(SubjectLabel::De))
                .ok_or_else(|| {
                    Failure::Data("need at least one CN and one DE subject".to_string())
                })?;
            metric_row(&mut csv, "", "", "", "auc_de_cn", de_cn);
            let of_tag = |wanted: &str| -> Vec<f64> {
                tags.iter()
                    .zip(&values)
                    .filter(|(t, _)| t.as_deref() == Some(wanted))
                    .map(|(_, &s)| s)
                    .collect()
            };
            if let Some(conv) = auc(&of_tag("nonconverter"), &of_tag("converter")) {
                metric_row(&mut csv, "", "", "", "auc_converters", conv);
            }
            metric_row(&mut csv, "", "", "", "n_subjects", values.len() as f64);
        }
        _ => {
            return Err(Failure::Usage(
                "evaluate needs either --model with --truth, or --stages with --labels"
                    .to_string(),
            ))
        }
    }
    atomic_write(&args.out, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn cmd_crossval(args: CrossvalArgs) -> Result<(), Failure> {
    let method = parse_method(&args.method)?;
    let dataset = load_dataset(&args.data)?;
    let options = CrossvalOptions {
        folds: args.folds,
        repeats: args.repeats,
        fit: FitOptions {
            seed: args.seed,
            ..FitOptions::default()
        },
    };
    let report = crossval(method, &dataset, &options)?;
    write_crossval_outputs(&report, &args.out)?;
    for m in &report.metrics {
        println!(
            "repeat {}: auc_de_cn {}{}",
            m.repeat,
            m.auc_de_cn,
            m.auc_converters
                .map(|a| format!(", auc_converters {a}"))
                .unwrap_or_default()
        );
    }
    if !report.warnings.is_empty() {
        println!("{} folds skipped; see the JSON report", report.warnings.len());
    }
    Ok(())
}

fn write_crossval_outputs(report: &CrossvalReport, out: &Path) -> Result<(), Failure> {
    let method = report.method.token();
    let mut csv = String::from("method,repeat,fold,metric,value\n");
    for m in &report.metrics {
        let repeat = m.repeat.to_string();
        metric_row(&mut csv, method, &repeat, "", "auc_de_cn", m.auc_de_cn);
        if let Some(conv) = m.auc_converters {
            metric_row(&mut csv, method, &repeat, "", "auc_converters", conv);
        }
        metric_row(&mut csv, method, &repeat, "", "folds_used", m.folds_used as f64);
        metric_row(
            &mut csv,
            method,
            &repeat,
            "",
            "subjects_staged",
            m.subjects_staged as f64,
        );
    }
    for w in &report.warnings {
        metric_row(
            &mut csv,
            method,
            &w.repeat.to_string(),
            &w.fold.to_string(),
            "skipped",
            1.0,
        );
    }
    atomic_write(out, csv.as_bytes())?;
    atomic_write(&out.with_extension("json"), pretty_json(report).as_bytes())?;
    Ok(())
}

fn cmd_bootstrap(args: BootstrapArgs) -> Result<(), Failure> {
    let method = parse_method(&args.method)?;
    let dataset = load_dataset(&args.data)?;
    let options = FitOptions {
        seed: args.seed,
        ..FitOptions::default()
    };
    let report = bootstrap_event_centers(method, &dataset, &options, args.n)?;
    write_bootstrap_outputs(&report, &args.out)?;
    println!(
        "bootstrapped {} resamples over {} events into {}",
        report.resamples,
        report.rows.len(),
        args.out.display()
    );
    Ok(())
}

fn write_bootstrap_outputs(report: &BootstrapReport, out: &Path) -> Result<(), Failure> {
    let mut csv = String::from(
        "method,event,name,mean_center,std_center,mean_position,std_position\n",
    );
    for row in &report.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            report.method.token(),
            row.event,
            row.name,
            row.mean_center,
            row.std_center,
            row.mean_position,
            row.std_position
        )
        .expect("string write");
    }
    atomic_write(out, csv.as_bytes())?;
    atomic_write(&out.with_extension("json"), pretty_json(report).as_bytes())?;
    Ok(())
}

/// Reads a stages CSV written by `stage`, tolerating the weight columns.
fn read_stages(path: &Path) -> Result<(Vec<String>, Vec<f64>), Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("reading {path:?}: {e}")))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Failure::Data(format!("{}: empty file", path.display())))?;
    if header != "subject_id,stage" && !header.starts_with("subject_id,stage,w0") {
        return Err(Failure::Data(format!(
            "{}: unexpected header `{header}`",
            path.display()
        )));
    }
    let mut ids = Vec::new();
    let mut stages = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or_default();
        let stage = fields.next().ok_or_else(|| {
            Failure::Data(format!("{}: line {} has no stage", path.display(), idx + 2))
        })?;
        let stage: f64 = stage.parse().map_err(|e| {
            Failure::Data(format!("{}: line {}: {e}", path.display(), idx + 2))
        })?;
        ids.push(id.to_string());
        stages.push(stage);
    }
    Ok((ids, stages))
}
