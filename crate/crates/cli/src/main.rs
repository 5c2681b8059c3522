mod report;
mod samples;

use std::fmt;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use boxprob::io::{parse_uncertainty, UncertaintyFile};
use boxprob::robustness::{Analyzer, Query, DEFAULT_MAX_BOXES};
use boxprob::{build_threshold_sets, mc_robustness, parse_model, seed, Error, Model};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use report::{Agreement, Failure, ModelSummary, Report, Row};

#[derive(Parser)]
#[command(name = "boxprob", version, about = "Exact probabilistic robustness for tree ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Robustness of every sample under one method.
    Compute {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MethodKind::Full)]
        method: MethodKind,
        #[arg(long, default_value_t = 0.99)]
        prune_level: f64,
        #[arg(long, default_value_t = 1_000_000)]
        mc_samples: u64,
    },
    /// Run several methods per sample and report their agreement.
    ///
    /// R² is measured against the identity line, 1 - Σ(y-x)²/Σ(y-ȳ)², with x
    /// the first method's values. For each pruned method, full - pruned must
    /// lie in [0, 1 - level] when `full` is also listed; violations are
    /// flagged.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list such as `full,pruned:0.99,mc:1000000`.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
    },
    /// Tree count, depth, threshold counts and number of boxes.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    uncertainty: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_BOXES)]
    max_boxes: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Include per-box masses of the matching boxes.
    #[arg(long)]
    verbose: bool,
    /// Leave wall-clock timings out so repeated runs are byte-identical.
    #[arg(long)]
    no_timings: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodKind {
    Full,
    Pruned,
    Mc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Method {
    Full,
    Pruned(f64),
    Mc(u64),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Full => write!(f, "full"),
            Method::Pruned(l) => write!(f, "pruned:{l}"),
            Method::Mc(n) => write!(f, "mc:{n}"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("full", None) => Ok(Method::Full),
            ("pruned", None) => Ok(Method::Pruned(0.99)),
            ("pruned", Some(a)) => match a.parse::<f64>() {
                Ok(l) if l > 0.0 && l < 1.0 => Ok(Method::Pruned(l)),
                _ => Err(format!("pruning level must be in (0, 1), got '{a}'")),
            },
            ("mc", None) => Ok(Method::Mc(1_000_000)),
            ("mc", Some(a)) => match a.parse::<u64>() {
                Ok(n) if n > 0 => Ok(Method::Mc(n)),
                _ => Err(format!("sample count must be a positive integer, got '{a}'")),
            },
            _ => Err(format!("unknown method '{s}' (expected full, pruned:<level> or mc:<n>)")),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Compute {
            common,
            method,
            prune_level,
            mc_samples,
        } => {
            let m = match method {
                MethodKind::Full => Method::Full,
                MethodKind::Pruned => Method::Pruned(prune_level),
                MethodKind::Mc => Method::Mc(mc_samples),
            };
            run("compute", &common, &[m])
        }
        Command::Compare { common, methods } => {
            if methods.len() < 2 {
                Err(anyhow!("compare needs at least two methods"))
            } else {
                run("compare", &common, &methods)
            }
        }
        Command::Inspect { model } => inspect(&model).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("BOXPROB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("BOXPROB_THREADS must be a positive integer, got '{v}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn load_model(path: &std::path::Path) -> Result<Model> {
    let text = samples::read_text(path, "model")?;
    parse_model(&text).with_context(|| format!("model file {}", path.display()))
}

/// Returns `Ok(false)` when some sample failed.
fn run(command: &'static str, c: &Common, methods: &[Method]) -> Result<bool> {
    if let Some(t) = c.abs_tol {
        if !(t > 0.0 && t.is_finite()) {
            bail!("--abs-tol must be positive, got {t}");
        }
    }
    let model = load_model(&c.model)?;
    let unc_text = samples::read_text(&c.uncertainty, "uncertainty")?;
    let unc = parse_uncertainty(&unc_text).with_context(|| format!("uncertainty file {}", c.uncertainty.display()))?;
    let rows_in = samples::read_samples(&c.samples)?;
    if let UncertaintyFile::PerSample(v) = &unc {
        if v.len() != rows_in.len() {
            eprintln!(
                "warning: {} uncertainty entries for {} samples",
                v.len(),
                rows_in.len()
            );
        }
    }
    let analyzer = Analyzer::new(&model).with_context(|| format!("model file {}", c.model.display()))?;

    let per_sample: Vec<(Vec<Row>, Vec<Failure>)> = rows_in
        .par_iter()
        .enumerate()
        .map(|(i, row)| run_sample(&analyzer, &unc, c, methods, i, row))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_sample {
        rows.extend(r);
        failures.extend(f);
    }
    for f in &failures {
        match &f.method {
            Some(m) => eprintln!("sample {} ({m}): {}", f.sample, f.error),
            None => eprintln!("sample {}: {}", f.sample, f.error),
        }
    }
    let agreement = agreement(methods, &rows);
    let report = Report {
        command,
        model: ModelSummary {
            kind: model.kind_name(),
            n_features: model.n_features,
            n_classes: model.n_classes,
            n_trees: model.trees().len(),
        },
        methods: methods.iter().map(Method::to_string).collect(),
        seed: c.seed,
        n_samples: rows_in.len(),
        rows,
        failures,
        agreement,
    };
    let mut buf = Vec::new();
    match c.format {
        Format::Json => report::write_json(&report, &mut buf)?,
        Format::Csv => report::write_csv(&report, &mut buf)?,
    }
    match &c.output {
        Some(p) => std::fs::write(p, &buf).with_context(|| format!("cannot write {}", p.display()))?,
        None => io::stdout().lock().write_all(&buf)?,
    }
    Ok(report.failures.is_empty())
}

fn run_sample(
    analyzer: &Analyzer<'_>,
    unc: &UncertaintyFile,
    c: &Common,
    methods: &[Method],
    i: usize,
    row: &samples::SampleRow,
) -> (Vec<Row>, Vec<Failure>) {
    let fail = |method: Option<&Method>, error: String| Failure {
        sample: i,
        method: method.map(Method::to_string),
        error,
    };
    let sample = match &row.values {
        Ok(v) => v.clone(),
        Err(e) => return (vec![], vec![fail(None, e.clone())]),
    };
    let uncertainty = match unc.for_sample(i).and_then(|s| s.resolve(&sample)) {
        Ok(u) => u,
        Err(e) => return (vec![], vec![fail(None, format!("line {}: {e}", row.line))]),
    };
    let mut base = Query::new(sample, uncertainty).with_seed(c.seed);
    base.max_boxes = c.max_boxes;
    base.verbose = c.verbose;
    if let Some(t) = c.abs_tol {
        base.integrator.abs_tol = t;
    }
    let timing = |d: std::time::Duration| (!c.no_timings).then(|| d.as_secs_f64() * 1e3);

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for m in methods {
        let out: Result<Row, Error> = match *m {
            Method::Full | Method::Pruned(_) => {
                let q = match *m {
                    Method::Pruned(l) => base.clone().pruned(l),
                    _ => base.clone(),
                };
                analyzer.compute(&q).map(|r| Row {
                    sample: i,
                    method: m.to_string(),
                    label: r.label,
                    robustness: r.robustness,
                    misclassification_probability: r.misclassification_probability,
                    boxes_enumerated: r.boxes_enumerated,
                    boxes_matching: r.boxes_matching,
                    integration_err: Some(r.integration_err),
                    unconverged_boxes: Some(r.unconverged_boxes),
                    prune_error_bound: q.prune_level.map(|_| r.prune_error_bound),
                    std_error: None,
                    n_samples: None,
                    wall_time_ms: timing(r.wall_time),
                    box_masses: r.box_masses,
                })
            }
            Method::Mc(n) => {
                let start = std::time::Instant::now();
                let mc_seed = seed::derive(c.seed, &[i]);
                mc_robustness(analyzer.model(), &base, n, mc_seed).map(|e| Row {
                    sample: i,
                    method: m.to_string(),
                    label: analyzer.model().predict(&base.sample),
                    robustness: e.robustness_hat,
                    misclassification_probability: 1.0 - e.robustness_hat,
                    boxes_enumerated: 0,
                    boxes_matching: 0,
                    integration_err: None,
                    unconverged_boxes: None,
                    prune_error_bound: None,
                    std_error: Some(e.std_error),
                    n_samples: Some(e.n_samples),
                    wall_time_ms: timing(start.elapsed()),
                    box_masses: None,
                })
            }
        };
        match out {
            Ok(r) => rows.push(r),
            Err(e) => failures.push(fail(Some(m), format!("line {}: {e}", row.line))),
        }
    }
    (rows, failures)
}

fn agreement(methods: &[Method], rows: &[Row]) -> Vec<Agreement> {
    if methods.len() < 2 {
        return vec![];
    }
    let table = report::by_method(rows);
    let empty = Default::default();
    let col = |m: &Method| table.get(m.to_string().as_str()).unwrap_or(&empty);
    let reference = &methods[0];
    let full = methods.iter().find(|m| **m == Method::Full).map(col);
    methods[1..]
        .iter()
        .map(|m| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = col(reference)
                .iter()
                .filter_map(|(s, x)| col(m).get(s).map(|y| (x.robustness, y.robustness)))
                .unzip();
            let bound_violations = match (*m, full) {
                (Method::Pruned(level), Some(full)) => Some(
                    col(m)
                        .iter()
                        .filter_map(|(s, p)| full.get(s).map(|f| (s, f, p)))
                        .filter(|(_, f, p)| {
                            let tol = f.integration_err.unwrap_or(0.0) + p.integration_err.unwrap_or(0.0) + 1e-12;
                            let d = f.robustness - p.robustness;
                            d < -tol || d > 1.0 - level + tol
                        })
                        .map(|(s, _, _)| *s)
                        .collect(),
                ),
                _ => None,
            };
            Agreement {
                reference: reference.to_string(),
                method: m.to_string(),
                n: xs.len(),
                r_squared: report::r_squared(&xs, &ys),
                max_abs_diff: report::max_abs_diff(&xs, &ys),
                bound_violations,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct Inspection {
    kind: &'static str,
    n_features: usize,
    n_classes: usize,
    n_trees: usize,
    max_depth: usize,
    thresholds_per_feature: Vec<usize>,
    n_boxes: Option<u64>,
    overflow: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn inspect(path: &std::path::Path) -> Result<()> {
    let model = load_model(path)?;
    let sets = build_threshold_sets(&model).with_context(|| format!("model file {}", path.display()))?;
    let count = sets.count_boxes();
    let out = Inspection {
        kind: model.kind_name(),
        n_features: model.n_features,
        n_classes: model.n_classes,
        n_trees: model.trees().len(),
        max_depth: model.trees().iter().map(|t| t.depth()).max().unwrap_or(0),
        thresholds_per_feature: (0..sets.n_features()).map(|i| sets.tau(i).len()).collect(),
        n_boxes: count.as_ref().ok().copied(),
        overflow: count.is_err(),
        note: count.err().map(|e| e.to_string()),
    };
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &out)?;
    writeln!(stdout)?;
    Ok(())
}
