//! Command-line front end for the simulated photonic extreme learning machine.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure, 1 anything else (I/O, reports).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pelm::features::{write_features_binary, write_features_csv};
use pelm::harness::{
    compute_features, emit_report, evaluate_saved, load_data, run_experiment, run_sweep_on, ExperimentConfig,
    FailureClass, HarnessError, ReportFormat, RunRecord, RunReport, RunStatus, SavedModel, SweepSpec,
};
use pelm::readout::Metrics;

#[derive(Parser)]
#[command(name = "pelm", version, about = "Simulated photonic extreme learning machine")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a configuration, load its data and print a summary.
    LoadCheck {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run one experiment.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        output: OutputArgs,
        /// Save the trained model as `model.json` in the output directory.
        #[arg(long)]
        save_model: bool,
    },
    /// Run every cell of a sweep file.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Score a saved model on its own test split or on another data file.
    Eval {
        model: PathBuf,
        /// Delimited file, or a directory holding the MNIST test files.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write the train and test feature matrices of a configuration.
    ExportFeatures {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Destination directory (`train.<ext>`, `test.<ext>`).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FeatureFormat::Bin)]
        format: FeatureFormat,
    },
}

#[derive(Args, Default)]
struct Overrides {
    /// Override any configuration value, e.g. `--set detector.noise_sigma=0.01`.
    /// Values are parsed as TOML, falling back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// `numerical` or `hardware-faithful`.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    m_channels: Option<usize>,
    /// Fixed regularization instead of the configured grid.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    feature_cache: Option<PathBuf>,
    /// Run the per-sample loops on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct OutputArgs {
    /// Report directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report formats.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Json])]
    format: Vec<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureFormat {
    Bin,
    Csv,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Failure {
        Failure {
            code: exit_code(e.class()),
            message: e.to_string(),
        }
    }
}

fn exit_code(class: FailureClass) -> u8 {
    match class {
        FailureClass::Config => 2,
        FailureClass::Data => 3,
        FailureClass::Numeric => 4,
        FailureClass::Io => 1,
    }
}

fn config_failure(message: String) -> Failure {
    Failure { code: 2, message }
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(p).map_err(|e| Failure {
        code: 1,
        message: format!("{}: {e}", p.display()),
    })
}

/// Parse `text` as a TOML value, or keep it as a string.
fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// Set a dotted key, creating intermediate tables.
fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), Failure> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_failure(format!("bad override key '{key}'")));
    }
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for part in path {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_failure(format!("override '{key}': '{part}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl Overrides {
    fn apply(&self, table: &mut toml::Table) -> Result<(), Failure> {
        for item in &self.set {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| config_failure(format!("override '{item}' is not KEY=VALUE")))?;
            set_key(table, key.trim(), parse_value(value.trim()))?;
        }
        let s = toml::Value::String;
        let int = |v: usize| toml::Value::Integer(v as i64);
        if let Some(p) = &self.profile {
            set_key(table, "profile", s(p.clone()))?;
        }
        if let Some(n) = self.n_train {
            set_key(table, "split.n_train", int(n))?;
        }
        if let Some(n) = self.n_test {
            set_key(table, "split.n_test", int(n))?;
        }
        if let Some(m) = self.m_channels {
            set_key(table, "detector.channels.m_channels", int(m))?;
        }
        if let Some(l) = self.lambda {
            set_key(table, "readout.lambda", toml::Value::Float(l))?;
        }
        if let Some(d) = &self.feature_cache {
            set_key(table, "output.feature_cache", s(absolute(d)?.display().to_string()))?;
        }
        if self.sequential {
            set_key(table, "execution", s("sequential".into()))?;
        }
        Ok(())
    }
}

/// An experiment file, or a sweep file (one with a `[sweep]` table).
enum Loaded {
    Experiment(ExperimentConfig),
    Sweep(SweepSpec),
}

impl Loaded {
    fn base(&self) -> &ExperimentConfig {
        match self {
            Loaded::Experiment(c) => c,
            Loaded::Sweep(s) => &s.base,
        }
    }
}

fn load_config(path: &Path, overrides: &Overrides, out: Option<&Path>) -> Result<Loaded, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| config_failure(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| config_failure(format!("{}: {e}", path.display())))?;
    overrides.apply(&mut table)?;
    if let Some(out) = out {
        set_key(
            &mut table,
            "output.dir",
            toml::Value::String(absolute(out)?.display().to_string()),
        )?;
    }
    let text = toml::to_string(&table).map_err(|e| config_failure(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    if table.contains_key("sweep") {
        let mut spec = SweepSpec::from_toml_str(&text)?;
        spec.base.resolve_paths(base);
        Ok(Loaded::Sweep(spec))
    } else {
        let mut cfg = ExperimentConfig::from_toml_str(&text)?;
        cfg.resolve_paths(base);
        Ok(Loaded::Experiment(cfg))
    }
}

fn formats(f: &[Format]) -> Vec<ReportFormat> {
    f.iter()
        .map(|f| match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        })
        .collect()
}

fn describe(m: &Metrics) -> String {
    match (m.accuracy, m.nrmsd) {
        (Some(a), _) => format!("accuracy {a:.4}"),
        (None, Some(n)) => format!("rmsd {:.4}, nrmsd {n:.4}", m.rmsd),
        (None, None) => format!("rmsd {:.4}", m.rmsd),
    }
}

fn print_run(r: &RunRecord) {
    let label = match (&r.axis, r.axis_value) {
        (Some(axis), Some(v)) => format!("{} {axis}={v} repeat {}", r.name, r.repeat),
        _ => r.name.clone(),
    };
    match &r.status {
        RunStatus::Ok => {
            let mut line = format!("{label}: M={} N={}/{}", r.m_channels, r.n_train, r.n_test);
            if let Some(m) = &r.train {
                line += &format!(", train {}", describe(m));
            }
            if let Some(m) = &r.test {
                line += &format!(", test {}", describe(m));
            }
            if let Some(l) = r.lambda {
                line += &format!(", lambda {l:e}");
            }
            line += &format!(", {:.1} s", r.timing.total_s);
            println!("{line}");
        }
        RunStatus::Failed { stage, message, .. } => println!("{label}: FAILED at {stage}: {message}"),
    }
}

/// Write reports when a directory is known, otherwise print the JSON report.
fn publish(report: &RunReport, dir: Option<&Path>, fmts: &[Format]) -> Result<(), Failure> {
    match dir {
        Some(dir) => {
            for path in emit_report(report, dir, &formats(fmts))? {
                log::info!("wrote {}", path.display());
            }
        }
        None => println!("{}", serde_json::to_string_pretty(report).expect("report serializes")),
    }
    Ok(())
}

/// Exit status of a report: the class of the first failed run.
fn report_status(report: &RunReport) -> Result<(), Failure> {
    match report.runs.iter().find_map(|r| match &r.status {
        RunStatus::Failed { class, message, .. } => Some((*class, message)),
        RunStatus::Ok => None,
    }) {
        None => Ok(()),
        Some((class, message)) => Err(Failure {
            code: exit_code(class),
            message: message.clone(),
        }),
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::LoadCheck { config, overrides } => {
            let loaded = load_config(&config, &overrides, None)?;
            let cfg = loaded.base();
            let data = load_data(cfg)?;
            println!("config {}", cfg.config_hash());
            println!("features {}", cfg.feature_hash());
            println!(
                "train {} rows, test {} rows, {} attributes, task {:?}",
                data.train.len(),
                data.test.len(),
                data.train.n_features(),
                data.train.task
            );
            if let Loaded::Sweep(spec) = &loaded {
                println!(
                    "sweep {} over {} values x {} repeats",
                    spec.sweep.axis.name(),
                    spec.sweep.values.len(),
                    spec.sweep.repeats
                );
            }
            Ok(())
        }
        Command::Run {
            config,
            overrides,
            output,
            save_model,
        } => {
            let cfg = match load_config(&config, &overrides, output.out.as_deref())? {
                Loaded::Experiment(mut cfg) => {
                    cfg.output.save_model |= save_model;
                    cfg
                }
                Loaded::Sweep(_) => return Err(config_failure("this is a sweep file; use `pelm sweep`".into())),
            };
            let (report, _) = run_experiment(&cfg)?;
            report.runs.iter().for_each(print_run);
            publish(&report, cfg.output.dir.as_deref(), &output.format)?;
            report_status(&report)
        }
        Command::Sweep {
            config,
            overrides,
            output,
        } => {
            let Loaded::Sweep(spec) = load_config(&config, &overrides, output.out.as_deref())? else {
                return Err(config_failure("no [sweep] table; use `pelm run`".into()));
            };
            let data = load_data(&spec.base)?;
            let report = run_sweep_on(&spec, &data);
            report.runs.iter().for_each(print_run);
            if let Some(summary) = &report.sweep {
                println!(
                    "{:>12} {:>5} {:>6} {:>10} {:>10}",
                    summary.axis.name(),
                    "runs",
                    "failed",
                    "mean",
                    "std"
                );
                for row in &summary.rows {
                    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                    println!(
                        "{:>12.4} {:>5} {:>6} {:>10} {:>10}",
                        row.axis_value,
                        row.runs,
                        row.failed,
                        f(row.mean_error),
                        f(row.std_error)
                    );
                }
            }
            publish(&report, spec.base.output.dir.as_deref(), &output.format)?;
            report_status(&report)
        }
        Command::Eval { model, data } => {
            let saved = SavedModel::load(&model)?;
            let metrics = evaluate_saved(&saved, data.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
            Ok(())
        }
        Command::ExportFeatures {
            config,
            overrides,
            out,
            format,
        } => {
            let Loaded::Experiment(cfg) = load_config(&config, &overrides, None)? else {
                return Err(config_failure("export-features takes an experiment file".into()));
            };
            let data = load_data(&cfg)?;
            let set = compute_features(&cfg, &data, cfg.execution)?;
            std::fs::create_dir_all(&out).map_err(|source| HarnessError::Io {
                path: out.clone(),
                source,
            })?;
            for (name, features) in [("train", &set.train), ("test", &set.test)] {
                let path = match format {
                    FeatureFormat::Bin => out.join(format!("{name}.bin")),
                    FeatureFormat::Csv => out.join(format!("{name}.csv")),
                };
                match format {
                    FeatureFormat::Bin => write_features_binary(&path, features),
                    FeatureFormat::Csv => write_features_csv(&path, features),
                }
                .map_err(HarnessError::from)?;
                println!("{} ({} x {})", path.display(), features.rows(), features.channels());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
