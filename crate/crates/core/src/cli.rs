//! `trialign` command line.
//!
//! Exit codes: 0 success, 1 domain or data error, 2 usage error (bad flags,
//! missing input files). Output is JSON unless `--format text` is given.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cascade::{CascadeConfig, CascadeEngine};
use crate::error::{Error, Result};
use crate::evalstats::{self, Averaging, CochranInput, ConfusionMatrix};
use crate::features::{extract_vector, FruitSample, SyntheticExtractor};
use crate::metrics::{self, TtiInputs, TtiWeights};
use crate::premap::{self, Credential};
use crate::rgid::{self, Repository, VarietyId};
use crate::simgen::{self, ScenarioConfig};

/// Environment variable naming the default dictionary file.
pub const DICT_ENV: &str = "TRIALIGN_DICT";

#[derive(Debug, Parser)]
#[command(name = "trialign", version, about = "Variety-aware produce grading toolkit")]
pub struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write output here instead of standard output.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// Print warnings to standard error.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario through the simulated pipeline.
    Simulate(SimulateArgs),
    /// Grade samples with the cascade and print one trace per line.
    Grade(GradeArgs),
    /// Evaluate the trust index from a JSON inputs file.
    Tti(TtiArgs),
    /// Agreement and classification statistics
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Issue and check consumer-facing credentials
    #[command(subcommand)]
    Credential(CredentialCommand),
    /// Validate or extend a grading dictionary
    #[command(subcommand)]
    Dict(DictCommand),
}

#[derive(Debug, Args)]
pub struct DictArg {
    /// Dictionary TOML; falls back to $TRIALIGN_DICT, then the built-in one.
    #[arg(long, env = DICT_ENV)]
    pub dict: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Also write per-sample traces as CSV.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Dictionary overriding the scenario's.
    #[arg(long)]
    pub dict: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradeArgs {
    /// Samples as JSON lines, concatenated JSON objects or a JSON array.
    pub samples: PathBuf,
    #[command(flatten)]
    pub dict: DictArg,
    #[arg(long)]
    pub lambda: VarietyId,
    #[arg(long, default_value_t = 0.15)]
    pub tau_low: f64,
    #[arg(long, default_value_t = 0.95)]
    pub tau_high: f64,
}

#[derive(Debug, Args)]
pub struct TtiArgs {
    #[arg(long)]
    pub inputs: PathBuf,
    /// Weights as `w_I,w_E,w_C`.
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<TtiWeights>,
}

fn parse_weights(s: &str) -> std::result::Result<TtiWeights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [i, e, c] => TtiWeights::new(*i, *e, *c).map_err(|e| e.to_string()),
        _ => Err("expected three comma-separated weights".into()),
    }
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Cochran's Q from an aggregate table or a 0/1 response matrix.
    Cochran { csv: PathBuf },
    /// Accuracy, precision, recall and F1 from a confusion matrix.
    Metrics {
        csv: PathBuf,
        #[arg(long, value_enum, default_value_t = AveragingArg::Weighted)]
        averaging: AveragingArg,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AveragingArg {
    Weighted,
    Macro,
}

#[derive(Debug, Subcommand)]
pub enum CredentialCommand {
    /// Grade one sample and issue its credential.
    Encode {
        /// One sample as JSON.
        sample: PathBuf,
        #[command(flatten)]
        dict: DictArg,
        #[arg(long)]
        lambda: VarietyId,
        /// Number of feature codes to embed (defaults to all features).
        #[arg(long)]
        k: Option<usize>,
        /// Issue time, unix seconds.
        #[arg(long, default_value_t = 0)]
        t_issue: u64,
        /// Write the binary record here.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Check a QR payload against a binary record.
    Verify {
        #[arg(long)]
        qr: String,
        #[arg(long)]
        record: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DictCommand {
    /// Load, resolve and validate every variety.
    Validate { file: PathBuf },
    /// Derive an entry for a new variety from labelled calibration samples.
    Adapt {
        #[command(flatten)]
        dict: DictArg,
        #[arg(long)]
        base: VarietyId,
        #[arg(long = "new")]
        new_lambda: VarietyId,
        /// JSON lines of `{"sample": …, "label": …}`.
        #[arg(long)]
        calibration: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn need_file(path: &Path, flag: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{flag}: no such file `{}`", path.display())))
    }
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Domain(e.into()))
}

fn load_repo(arg: Option<&Path>) -> CliResult<Repository> {
    match arg {
        Some(p) => {
            need_file(p, "--dict")?;
            Ok(rgid::load_dictionary(&read(p)?)?)
        }
        None => Ok(crate::default_repository()?),
    }
}

fn same_variety(sample: &FruitSample, lambda: &VarietyId) -> Result<()> {
    if &sample.lambda == lambda {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "sample `{}` is {}, not {lambda}",
            sample.id, sample.lambda
        )))
    }
}

fn read_json_items<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    let t = text.trim_start();
    if t.starts_with('[') {
        return Ok(serde_json::from_str(t)?);
    }
    // JSON lines, or any run of whitespace-separated documents
    serde_json::Deserializer::from_str(t)
        .into_iter::<T>()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// `path: value` lines for a JSON document.
fn render_text(v: &Value, prefix: &str, out: &mut String) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                render_text(x, &p, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                render_text(x, &format!("{prefix}[{i}]"), out);
            }
        }
        _ => {
            out.push_str(prefix);
            out.push_str(": ");
            out.push_str(&v.to_string());
            out.push('\n');
        }
    }
}

struct Output {
    format: Format,
    text: String,
}

impl Output {
    fn doc<T: Serialize>(&mut self, value: &T) -> CliResult<()> {
        let v = serde_json::to_value(value).map_err(Error::from)?;
        match self.format {
            Format::Json => {
                self.text
                    .push_str(&serde_json::to_string_pretty(&v).map_err(Error::from)?);
                self.text.push('\n');
            }
            Format::Text => render_text(&v, "", &mut self.text),
        }
        Ok(())
    }

    fn line<T: Serialize>(&mut self, value: &T) -> CliResult<()> {
        match self.format {
            Format::Json => {
                self.text.push_str(&serde_json::to_string(value).map_err(Error::from)?);
                self.text.push('\n');
            }
            Format::Text => {
                let v = serde_json::to_value(value).map_err(Error::from)?;
                render_text(&v, "", &mut self.text);
                self.text.push('\n');
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct CochranOut {
    q: f64,
    df: u32,
    p: f64,
    k: usize,
    sum_l: u64,
    sum_l2: u64,
    /// Option indices by descending selection count.
    ordering: Vec<usize>,
}

#[derive(Serialize)]
struct EncodeOut<'a> {
    credential: &'a Credential,
    payload_hex: String,
    qr_text: &'a str,
}

#[derive(Deserialize)]
struct CalibrationRow {
    sample: FruitSample,
    label: String,
}

fn execute(cli: &Cli, out: &mut Output, warn: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => {
            need_file(&a.scenario, "<scenario>")?;
            let mut sc = ScenarioConfig::from_toml(&read(&a.scenario)?)?;
            if let Some(s) = a.seed {
                sc.params.seed = s;
            }
            if let Some(n) = a.n {
                sc.params.n = n;
            }
            let dict = a.dict.clone().or_else(|| {
                sc.dictionary
                    .as_ref()
                    .map(|d| a.scenario.parent().map(|p| p.join(d)).unwrap_or_else(|| d.clone()))
            });
            let dict = dict.or_else(|| std::env::var_os(DICT_ENV).map(PathBuf::from));
            let repo = load_repo(dict.as_deref())?;
            let entry = repo.lookup(&sc.lambda)?;
            let (report, rows) = simgen::run_pipeline(entry, &sc.profile()?, &sc.params)?;
            if cli.verbose > 0 {
                for w in &report.tti.warnings {
                    let _ = writeln!(warn, "warning: {w}");
                }
            }
            if let Some(path) = &a.traces {
                let f = fs::File::create(path).map_err(|e| Failure::Domain(e.into()))?;
                simgen::write_trace_csv(f, &rows)?;
            }
            out.doc(&report)
        }
        Command::Grade(a) => {
            need_file(&a.samples, "<samples>")?;
            let repo = load_repo(a.dict.dict.as_deref())?;
            let entry = repo.lookup(&a.lambda)?;
            let samples: Vec<FruitSample> = read_json_items(&read(&a.samples)?)?;
            let cfg = CascadeConfig::sound(entry, a.tau_low, a.tau_high)?;
            let engine = CascadeEngine::new(entry, cfg)?;
            for s in &samples {
                s.validate()?;
                same_variety(s, &a.lambda)?;
                out.line(&engine.run(s, &SyntheticExtractor)?)?;
            }
            Ok(())
        }
        Command::Tti(a) => {
            need_file(&a.inputs, "--inputs")?;
            let inputs: TtiInputs = serde_json::from_str(&read(&a.inputs)?).map_err(Error::from)?;
            let report = metrics::evaluate_inputs(inputs, a.weights.unwrap_or_default())?;
            if cli.verbose > 0 {
                for w in &report.warnings {
                    let _ = writeln!(warn, "warning: {w}");
                }
            }
            out.doc(&report)
        }
        Command::Stats(StatsCommand::Cochran { csv }) => {
            need_file(csv, "<csv>")?;
            let input = CochranInput::from_csv(read(csv)?.as_bytes())?;
            let r = evalstats::cochran_q(&input)?;
            let (g, sum_l, sum_l2) = input.aggregates()?;
            let mut ordering: Vec<usize> = (0..g.len()).collect();
            ordering.sort_by(|&a, &b| g[b].cmp(&g[a]).then(a.cmp(&b)));
            out.doc(&CochranOut {
                q: r.q,
                df: r.df,
                p: r.p,
                k: g.len(),
                sum_l,
                sum_l2,
                ordering,
            })
        }
        Command::Stats(StatsCommand::Metrics { csv, averaging }) => {
            need_file(csv, "<csv>")?;
            let m = ConfusionMatrix::from_csv(read(csv)?.as_bytes())?;
            let avg = match averaging {
                AveragingArg::Weighted => Averaging::Weighted,
                AveragingArg::Macro => Averaging::Macro,
            };
            out.doc(&evalstats::classification_metrics(&m, avg)?)
        }
        Command::Credential(CredentialCommand::Encode {
            sample,
            dict,
            lambda,
            k,
            t_issue,
            record,
        }) => {
            need_file(sample, "<sample>")?;
            let repo = load_repo(dict.dict.as_deref())?;
            let entry = repo.lookup(lambda)?;
            let s: FruitSample = serde_json::from_str(&read(sample)?).map_err(Error::from)?;
            s.validate()?;
            same_variety(&s, lambda)?;
            let engine = CascadeEngine::new(entry, CascadeConfig::sound(entry, 0.15, 0.95)?)?;
            let trace = engine.run(&s, &SyntheticExtractor)?;
            let features = extract_vector(&s, entry, &SyntheticExtractor)?;
            let k = k.unwrap_or(entry.phi.len());
            if k == 0 || k > entry.phi.len() {
                return Err(Failure::Usage(format!("--k: must lie in 1..={}", entry.phi.len())));
            }
            // a single sample carries no entropy; take the first k features
            let selected: Vec<usize> = (0..k).collect();
            let enc = premap::encode_credential(&trace, &s, entry, &features, &selected, *t_issue)?;
            if let Some(path) = record {
                fs::write(path, &enc.bytes).map_err(|e| Failure::Domain(e.into()))?;
            }
            out.doc(&EncodeOut {
                credential: &enc.credential,
                payload_hex: hex::encode(&enc.bytes),
                qr_text: &enc.qr_text,
            })
        }
        Command::Credential(CredentialCommand::Verify { qr, record }) => {
            need_file(record, "--record")?;
            let bytes = fs::read(record).map_err(|e| Failure::Domain(e.into()))?;
            let cred = premap::decode_credential(&bytes)?;
            let valid = premap::verify(qr, &cred)?;
            out.doc(&serde_json::json!({ "valid": valid }))
        }
        Command::Dict(DictCommand::Validate { file }) => {
            need_file(file, "<file>")?;
            let repo = rgid::load_dictionary(&read(file)?)?;
            let varieties: Vec<String> = repo.varieties().map(|v| v.to_string()).collect();
            out.doc(&serde_json::json!({ "valid": true, "varieties": varieties }))
        }
        Command::Dict(DictCommand::Adapt {
            dict,
            base,
            new_lambda,
            calibration,
        }) => {
            need_file(calibration, "--calibration")?;
            let repo = load_repo(dict.dict.as_deref())?;
            let rows: Vec<CalibrationRow> = read_json_items(&read(calibration)?)?;
            let cal: Vec<(FruitSample, String)> = rows.into_iter().map(|r| (r.sample, r.label)).collect();
            let adapted = rgid::adapt_entry(&repo, base, new_lambda, &cal, &SyntheticExtractor)?;
            let changed = repo.lookup(base)?.changed_scalars(&adapted);
            out.doc(&serde_json::json!({ "entry": adapted, "changed": changed }))
        }
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_with(argv: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    return 0;
                }
                _ => 2,
            };
            let _ = write!(stderr, "{}", e.render());
            return code;
        }
    };
    let mut out = Output {
        format: cli.format,
        text: String::new(),
    };
    match execute(&cli, &mut out, stderr) {
        Ok(()) => {
            let written = match &cli.out {
                Some(path) => fs::write(path, &out.text),
                None => stdout.write_all(out.text.as_bytes()),
            };
            match written {
                Ok(()) => 0,
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    1
                }
            }
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Domain(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

pub fn run(argv: &[String]) -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
