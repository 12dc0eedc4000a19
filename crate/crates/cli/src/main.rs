//! `hiring-sim`: run hiring-game experiments, replay score tables, trace
//! n-ticket disparity curves and compare manipulation models.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime
//! failure, 3 a checked property or lemma was violated.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use hiring_sim::harness::config::{Experiment, ExperimentConfig, OutputFormat};
use hiring_sim::harness::experiment::{replay, run_experiment, SplitSettings};
use hiring_sim::harness::nticket::run_nticket_curve;
use hiring_sim::harness::replay::ScoreTable;
use hiring_sim::harness::report::{curve_csv, write_meta};
use hiring_sim::law::Law;
use hiring_sim::manipulation::{
    dominates_analytic, dominates_empirical, ManipulationModel, DEFAULT_EMPIRICAL_SAMPLES, DEFAULT_EMPIRICAL_TOLERANCE,
};
use hiring_sim::metrics::{DecayFit, SplitMode};
use hiring_sim::model::{sample_population, Label};
use hiring_sim::schemes::SchemeKind;
use hiring_sim::threshold::{check_threshold_consistency, learn_threshold};
use hiring_sim::{harness, Error, SeedStream};

#[derive(Parser, Debug)]
#[command(
    name = "hiring-sim",
    version,
    about = "Hiring games under stochastic LLM resume manipulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "HIRING_SIM_OUTPUT")]
    output: Option<PathBuf>,
    /// json, csv or both.
    #[arg(long)]
    format: Option<String>,
    /// Overrides the configuration's Monte Carlo replications.
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads; output does not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a configured experiment and write its report.
    Simulate(Common),
    /// Re-run thresholds and metrics on a score table.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Score table CSV.
        #[arg(long)]
        table: PathBuf,
        /// Comma-separated schemes (default: traditional,two-ticket when hirer draws exist).
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<String>,
        /// Report name; defaults to the configuration's name or `replay`.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long)]
        train_fraction: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Trace TPR disparity against the number of hirer tickets.
    Nticket {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_max: Option<usize>,
        /// Candidates streamed for the curve.
        #[arg(long)]
        candidates: Option<usize>,
    },
    /// Compare two manipulation models, e.g. `uniform(1,3)` or `null`;
    /// separate style dimensions with `;`.
    Dominance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        /// Also compare one-dimensional models through empirical CDFs.
        #[arg(long)]
        empirical: bool,
        #[arg(long, default_value_t = DEFAULT_EMPIRICAL_TOLERANCE)]
        tolerance: f64,
        #[arg(long, default_value_t = DEFAULT_EMPIRICAL_SAMPLES)]
        samples: usize,
    },
    /// Learn a threshold from a score table, or check threshold consistency
    /// across hirer models for a configuration.
    Threshold {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "config")]
        table: Option<PathBuf>,
        /// Manipulation draws per negative and channel.
        #[arg(long, default_value_t = 1)]
        draws: usize,
        /// Allowed excess of a hirer maximum over the P maximum.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
    /// Validate a configuration without running it.
    ValidateConfig(Common),
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::LemmaViolation(_)) => 3,
            Some(e) if e.is_user_error() => 1,
            _ => 2,
        };
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        error: anyhow::anyhow!(msg.into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = match &cli.command {
        Command::Simulate(c) | Command::ValidateConfig(c) => c,
        Command::Replay { common, .. }
        | Command::Nticket { common, .. }
        | Command::Dominance { common, .. }
        | Command::Threshold { common, .. } => common,
    };
    if let Some(jobs) = common.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Simulate(c) => simulate(&c),
        Command::ValidateConfig(c) => validate_config(&c),
        Command::Replay {
            common,
            table,
            schemes,
            name,
            splits,
            train_fraction,
            epsilon,
        } => replay_cmd(&common, &table, &schemes, name, splits, train_fraction, epsilon),
        Command::Nticket {
            common,
            n_max,
            candidates,
        } => nticket(&common, n_max, candidates),
        Command::Dominance {
            a,
            b,
            empirical,
            tolerance,
            samples,
            common,
        } => dominance(&common, &a, &b, empirical, tolerance, samples),
        Command::Threshold {
            common,
            table,
            draws,
            tolerance,
        } => threshold(&common, table.as_deref(), draws, tolerance),
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let path = common.config.as_ref().ok_or_else(|| usage("--config is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(r) = common.replications {
        cfg.replications = r;
    }
    if let Some(f) = &common.format {
        cfg.output.format = f.parse::<OutputFormat>()?;
    }
    Ok(cfg)
}

fn load_experiment(common: &Common) -> Result<Experiment, Failure> {
    Ok(load(common)?.validate()?)
}

fn output_dir(common: &Common, cfg: Option<&ExperimentConfig>) -> PathBuf {
    common
        .output
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn simulate(common: &Common) -> Result<(), Failure> {
    let exp = load_experiment(common)?;
    let run = run_experiment(&exp)?;
    let dir = output_dir(common, Some(&exp.config));
    let format = exp.config.output.format;
    run.report.persist(&dir, format)?;
    if format.csv() {
        let f = fs::File::create(dir.join("score_table.csv")).context("writing score table")?;
        run.table.write(f)?;
    }
    print!("{}", run.report.summary());
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn validate_config(common: &Common) -> Result<(), Failure> {
    let exp = load_experiment(common)?;
    println!(
        "configuration ok: {} scheme(s), {} candidates, seed {}, digest {}",
        exp.schemes.len(),
        exp.config.population.count,
        exp.config.seed,
        exp.config.digest()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn replay_cmd(
    common: &Common,
    table_path: &Path,
    schemes: &[String],
    name: Option<String>,
    splits: Option<usize>,
    train_fraction: Option<f64>,
    epsilon: Option<f64>,
) -> Result<(), Failure> {
    let cfg = match &common.config {
        Some(_) => Some(load(common)?),
        None => None,
    };
    let file = fs::File::open(table_path).map_err(|e| usage(format!("cannot open {}: {e}", table_path.display())))?;
    let table = ScoreTable::read(file)?;
    let schemes: Vec<SchemeKind> = if schemes.is_empty() {
        match &cfg {
            Some(c) => c.validate()?.schemes,
            None if table.hirer_columns > 0 => vec![SchemeKind::Traditional, SchemeKind::TwoTicket],
            None => vec![SchemeKind::Traditional],
        }
    } else {
        harness::config::parse_scheme_list(schemes).map_err(Error::Validation)?
    };
    let mut settings = match &cfg {
        Some(c) => SplitSettings::from_config(c),
        None => SplitSettings {
            train_fraction: 0.7,
            splits: 500,
            confidence: 0.95,
            epsilon: hiring_sim::threshold::DEFAULT_EPSILON,
            target_fpr: 0.0,
            split_mode: SplitMode::RandomSplit,
            fixed_threshold: None,
        },
    };
    if let Some(s) = splits {
        settings.splits = s;
    }
    if let Some(t) = train_fraction {
        if !(t > 0.0 && t < 1.0) {
            return Err(usage("--train-fraction must lie strictly inside (0, 1)"));
        }
        settings.train_fraction = t;
    }
    if let Some(e) = epsilon {
        settings.epsilon = e;
    }
    let seed = common
        .seed
        .or(cfg.as_ref().map(|c| c.seed))
        .ok_or_else(|| usage("--seed is required without --config"))?;
    let name = name
        .or(cfg.as_ref().map(|c| c.name.clone()))
        .unwrap_or_else(|| "replay".into());
    let report = replay(&table, &schemes, &settings, seed, &name)?;
    let dir = output_dir(common, cfg.as_ref());
    let format = match &common.format {
        Some(f) => f.parse::<OutputFormat>()?,
        None => cfg.as_ref().map(|c| c.output.format).unwrap_or_default(),
    };
    report.persist(&dir, format)?;
    print!("{}", report.summary());
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn nticket(common: &Common, n_max: Option<usize>, candidates: Option<usize>) -> Result<(), Failure> {
    let exp = load_experiment(common)?;
    let n_max = n_max.unwrap_or(exp.config.nticket.n_max);
    if n_max < 2 {
        return Err(usage("--n-max must be at least 2"));
    }
    let candidates = candidates.unwrap_or(exp.config.nticket.candidates);
    let curve = run_nticket_curve(&exp, n_max, candidates)?;
    let dir = output_dir(common, Some(&exp.config));
    fs::create_dir_all(&dir).context("creating output directory")?;
    fs::write(dir.join("disparity_curve.csv"), curve_csv(&curve.rows)?).context("writing curve")?;
    if exp.config.output.format.json() {
        fs::write(dir.join("nticket.json"), curve.json()?).context("writing curve report")?;
    }
    write_meta(&dir, exp.config.seed, Some(&exp.config.digest()), &exp.config.name)?;

    println!(
        "tau = {:.4}, analytic k = {:.4}, {} candidates",
        curve.tau, curve.k, curve.candidates
    );
    println!("{:>4} {:>14} {:>18}", "n", "|delta_TPR|", "analytic envelope");
    for r in &curve.rows {
        println!(
            "{:>4} {:>14.4} {:>18}",
            r.n,
            r.delta_tpr_abs,
            r.analytic_envelope.map(|e| format!("{e:.4}")).unwrap_or_default()
        );
    }
    match &curve.fit {
        Some(DecayFit::Fitted { rate, r2, .. }) => println!("fitted k = {rate:.4} (r2 = {r2:.4})"),
        Some(DecayFit::AlreadyConverged) => println!("converged: disparity is zero for every n >= 1"),
        None => println!(
            "no decay fit: {}",
            curve.note.as_deref().unwrap_or("too few non-zero points")
        ),
    }
    Ok(())
}

fn parse_model(spec: &str, flag: &str) -> Result<ManipulationModel, Failure> {
    let spec = spec.trim();
    if spec.eq_ignore_ascii_case("null") {
        return Ok(ManipulationModel::Null);
    }
    let laws = spec
        .split(';')
        .map(|s| s.trim().parse::<Law>())
        .collect::<hiring_sim::Result<Vec<Law>>>()
        .map_err(|e| usage(format!("{flag}: {e}")))?;
    for (i, l) in laws.iter().enumerate() {
        l.validate(&format!("{flag}[{i}]"))?;
    }
    Ok(ManipulationModel::independent(laws)?)
}

fn dominance(
    common: &Common,
    a: &str,
    b: &str,
    empirical: bool,
    tolerance: f64,
    samples: usize,
) -> Result<(), Failure> {
    let ma = parse_model(a, "--a")?;
    let mb = parse_model(b, "--b")?;
    if let (Some(da), Some(db)) = (ma.style_dims(), mb.style_dims()) {
        if da != db {
            return Err(usage(format!("--a has {da} style dimension(s), --b has {db}")));
        }
    }
    println!("{}", dominates_analytic(&ma, &mb)?);
    if empirical {
        let (Some([la]), Some([lb])) = (ma.independent_laws(), mb.independent_laws()) else {
            return Err(usage("--empirical compares one-dimensional parametric models"));
        };
        let stream = SeedStream::new(common.seed.unwrap_or(0)).named("dominance");
        let draw = |law: &Law, s: SeedStream| {
            let mut rng = s.rng();
            (0..samples).map(|_| law.sample(&mut rng)).collect::<Vec<f64>>()
        };
        let xs = draw(la, stream.child(0));
        let ys = draw(lb, stream.child(1));
        println!("{}", dominates_empirical(&xs, &ys, tolerance)?);
    }
    Ok(())
}

fn threshold(common: &Common, table: Option<&Path>, draws: usize, tolerance: f64) -> Result<(), Failure> {
    if let Some(path) = table {
        let file = fs::File::open(path).map_err(|e| usage(format!("cannot open {}: {e}", path.display())))?;
        let table = ScoreTable::read(file)?;
        for (kind, tickets) in [("traditional", 0usize), ("two-ticket", 1)] {
            if tickets > table.hirer_columns {
                continue;
            }
            let scores: Vec<(f64, Label)> = table
                .rows
                .iter()
                .map(|r| (r.considered_score(tickets), r.label))
                .collect();
            let d = learn_threshold(&scores, hiring_sim::threshold::DEFAULT_EPSILON, 0.0)?;
            println!(
                "{kind}: tau* = {:.4}, max negative = {:.4}, training TPR = {}{}",
                d.tau_star,
                d.max_negative_score,
                d.tpr.map(|t| format!("{t:.4}")).unwrap_or_else(|| "n/a".into()),
                if d.no_negatives {
                    " (no negatives: accept all)"
                } else {
                    ""
                }
            );
        }
        return Ok(());
    }
    let exp = load_experiment(common)?;
    let root = SeedStream::new(exp.config.seed);
    let pop = sample_population(&exp.population, exp.config.population.count, &root.named("population"))?;
    let hirers = [ManipulationModel::Null, exp.hirer.clone()];
    let report = check_threshold_consistency(
        &exp.scorer,
        &pop,
        &exp.models.p,
        &exp.models.u,
        &hirers,
        draws,
        tolerance,
        &root.named("consistency"),
    )?;
    let m = &report.maxima;
    println!("M = {:.4}, M_P = {:.4}, M_U = {:.4}", m.m, m.m_p, m.m_u);
    for (i, (h, t)) in m.m_h.iter().zip(&report.tau_star).enumerate() {
        let label = if i == 0 { "traditional" } else { "two-ticket" };
        println!("{label}: M_H = {h:.4}, tau* = {t:.4}");
    }
    println!(
        "max |tau* difference| = {:.4}; dominance precondition {}",
        report.max_abs_difference,
        if report.lemma_applies {
            "holds"
        } else {
            "does not hold (report only)"
        }
    );
    Ok(())
}
