//! Scenario files, experiment orchestration and CSV output.

mod scenario;

pub use scenario::{parse_scenario, serialize_scenario};

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{
    canonicalize, generator_pair, grid, run_method, verify_optimal_discriminator, verify_reminding_convergence,
    Method, MetricRow, Normal1d, OptimalDiscConfig, RemindingConfig,
};
use crate::federation::Scenario;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "TDGAN_THREADS";

pub const CSV_HEADER: &str = "method,seed,task,label,metric,value";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario_path: PathBuf,
    pub methods: Vec<Method>,
    /// Empty means "the seed named in the scenario file".
    pub seeds: Vec<u64>,
    pub out_path: PathBuf,
    pub iters_scale: f64,
    /// Worker cap; `None` reads the environment, then falls back to rayon's default.
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iters_scale > 0.0 && self.iters_scale.is_finite()) {
            return Err(Error::Config(format!("--iters-scale must be > 0, got {}", self.iters_scale)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("thread count must be >= 1".into()));
        }
        Ok(())
    }
}

fn env_threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario(&fs::read_to_string(path)?)
}

/// Trains and evaluates every `(method, seed)` pair, in parallel, and
/// returns the rows in canonical order.
pub fn collect_rows(
    s: &Scenario,
    methods: &[Method],
    seeds: &[u64],
    iters_scale: f64,
    threads: Option<usize>,
) -> Result<Vec<MetricRow>> {
    let jobs: Vec<(Method, u64)> = methods
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&seed| (m, seed)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let per_job: Vec<Vec<MetricRow>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, seed)| run_method(s, m, seed, iters_scale))
            .collect::<Result<_>>()
    })?;
    let mut rows: Vec<MetricRow> = per_job.into_iter().flatten().collect();
    canonicalize(&mut rows);
    Ok(rows)
}

/// `value` with 9 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn to_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::with_capacity(48 * (rows.len() + 1)));
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(CSV_HEADER.split(',')).map_err(io)?;
    for r in rows {
        w.write_record([
            r.method.as_str(),
            &r.seed.to_string(),
            &r.task.to_string(),
            &r.label.to_string(),
            r.metric.as_str(),
            &format_value(r.value),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn write_or_remove(path: &Path, bytes: &[u8]) -> Result<()> {
    let result = fs::File::create(path).and_then(|mut f| {
        f.write_all(bytes)?;
        f.sync_all()
    });
    if let Err(e) = result {
        let _ = fs::remove_file(path);
        return Err(e.into());
    }
    Ok(())
}

/// Runs the experiment and writes the CSV. Returns the number of rows.
pub fn run(cfg: &RunConfig) -> Result<usize> {
    cfg.validate()?;
    let threads = match cfg.threads {
        Some(n) => Some(n),
        None => env_threads()?,
    };
    let s = load_scenario(&cfg.scenario_path)?;
    let seeds = if cfg.seeds.is_empty() { vec![s.seed] } else { cfg.seeds.clone() };
    let rows = match collect_rows(&s, &cfg.methods, &seeds, cfg.iters_scale, threads) {
        Ok(rows) => rows,
        Err(e) => {
            // Never leave a stale file behind that looks like this run's output.
            let _ = fs::remove_file(&cfg.out_path);
            return Err(e);
        }
    };
    write_or_remove(&cfg.out_path, &to_csv(&rows)?)?;
    Ok(rows.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifySuite {
    /// Reminding-loss convergence to the frozen generator.
    Lemma1,
    /// Trained discriminator against the density ratio.
    Lemma2,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub seconds: f64,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.value <= self.threshold
    }
}

/// Trailing window used for the monotonicity part of the reminding check.
pub const REMINDING_WINDOW: usize = 100;

/// Largest increase between consecutive trailing-window means.
pub fn worst_window_increase(means: &[f64]) -> f64 {
    means.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

pub fn verify_lemma1() -> Result<Vec<VerifyOutcome>> {
    let start = Instant::now();
    let (frozen, fresh) = generator_pair(0, 2, 3, 1, &[8])?;
    let report = verify_reminding_convergence(&frozen, fresh, &RemindingConfig::default())?;
    let seconds = start.elapsed().as_secs_f64();
    let means = report.held_out_window_means(REMINDING_WINDOW);
    Ok(vec![
        VerifyOutcome {
            name: "reminding final loss",
            value: report.final_loss,
            threshold: 1e-3,
            seconds,
        },
        VerifyOutcome {
            name: "reminding window-mean increase",
            value: worst_window_increase(&means),
            threshold: 0.0,
            seconds,
        },
    ])
}

pub fn verify_lemma2() -> Result<Vec<VerifyOutcome>> {
    let start = Instant::now();
    let p = Normal1d { mean: 0.0, sd: 1.0 };
    let q = Normal1d { mean: 1.0, sd: 1.0 };
    let err = verify_optimal_discriminator(&p, &q, &OptimalDiscConfig::default(), &grid(-4.0, 5.0, 201))?;
    Ok(vec![VerifyOutcome {
        name: "discriminator vs p/(p+q)",
        value: err,
        threshold: 0.05,
        seconds: start.elapsed().as_secs_f64(),
    }])
}

pub fn verify(suite: VerifySuite) -> Result<Vec<VerifyOutcome>> {
    Ok(match suite {
        VerifySuite::Lemma1 => verify_lemma1()?,
        VerifySuite::Lemma2 => verify_lemma2()?,
        VerifySuite::All => {
            let mut v = verify_lemma1()?;
            v.extend(verify_lemma2()?);
            v
        }
    })
}

pub fn format_verify_table(outcomes: &[VerifyOutcome]) -> String {
    let mut out = format!("{:<34} {:>12} {:>10} {:>8}  result\n", "check", "value", "threshold", "secs");
    for o in outcomes {
        let _ = writeln!(
            out,
            "{:<34} {:>12.4e} {:>10.1e} {:>8.1}  {}",
            o.name,
            o.value,
            o.threshold,
            o.seconds,
            if o.passed() { "PASS" } else { "FAIL" }
        );
    }
    out
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Command-line interface of the `tdgan` binary.
#[derive(Debug, Parser)]
#[command(name = "tdgan", version, about = "Federated continual conditional-GAN experiments")]
pub struct Cli {
    /// Scenario file.
    #[arg(long, required_unless_present = "verify")]
    pub scenario: Option<PathBuf>,
    /// Comma-separated subset of tdgan,finetune,joint,local.
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "tdgan")]
    pub methods: Vec<Method>,
    /// Comma-separated run seeds; defaults to the scenario's seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Output CSV path.
    #[arg(long, required_unless_present = "verify")]
    pub out: Option<PathBuf>,
    /// Multiplier on every task's iteration count.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub iters_scale: f64,
    /// Run a numerical verification suite instead of an experiment.
    #[arg(long, value_enum)]
    pub verify: Option<VerifySuite>,
}

impl Cli {
    pub fn run_config(&self) -> Option<RunConfig> {
        Some(RunConfig {
            scenario_path: self.scenario.clone()?,
            methods: self.methods.clone(),
            seeds: self.seeds.clone(),
            out_path: self.out.clone()?,
            iters_scale: self.iters_scale,
            threads: None,
        })
    }
}

/// Entry point shared by the binary: parses `args` and returns an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(suite) = cli.verify {
        return match verify(suite) {
            Ok(outcomes) => {
                print!("{}", format_verify_table(&outcomes));
                if outcomes.iter().all(VerifyOutcome::passed) {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        };
    }
    let cfg = cli.run_config().expect("clap enforces --scenario and --out");
    match run(&cfg) {
        Ok(n) => {
            eprintln!("wrote {n} rows to {}", cfg.out_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelId;
    use crate::eval::Metric;

    #[test]
    fn values_have_nine_significant_digits() {
        assert_eq!(format_value(0.0), "0.00000000e0");
        assert_eq!(format_value(0.0123456789123), "1.23456789e-2");
        assert_eq!(format_value(2.0), "2.00000000e0");
    }

    #[test]
    fn csv_layout() {
        let rows = vec![MetricRow {
            method: Method::Local,
            seed: 3,
            task: 2,
            label: LabelId(1),
            metric: Metric::EnergyDistance,
            value: 0.5,
        }];
        assert_eq!(String::from_utf8(to_csv(&rows).unwrap()).unwrap(), "method,seed,task,label,metric,value\nlocal,3,2,1,energy_distance,5.00000000e-1\n");
    }

    #[test]
    fn config_validation() {
        let cfg = RunConfig {
            scenario_path: "x".into(),
            methods: vec![Method::Tdgan],
            seeds: vec![1],
            out_path: "y".into(),
            iters_scale: 0.0,
            threads: None,
        };
        assert!(cfg.validate().is_err());
        assert!(RunConfig { iters_scale: f64::NAN, ..cfg.clone() }.validate().is_err());
        assert!(RunConfig { iters_scale: 1.0, methods: vec![], ..cfg.clone() }.validate().is_err());
        assert!(RunConfig { iters_scale: 1.0, threads: Some(0), ..cfg.clone() }.validate().is_err());
        assert!(RunConfig { iters_scale: 1.0, ..cfg }.validate().is_ok());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "tdgan", "--scenario", "s.txt", "--methods", "tdgan,finetune", "--seeds", "1,2", "--out", "o.csv",
            "--iters-scale", "0.5",
        ])
        .unwrap();
        assert_eq!(cli.methods, vec![Method::Tdgan, Method::Finetune]);
        assert_eq!(cli.seeds, vec![1, 2]);
        assert_eq!(cli.iters_scale, 0.5);
        assert!(cli.run_config().is_some());
        assert!(Cli::try_parse_from(["tdgan", "--methods", "bogus", "--scenario", "a", "--out", "b"]).is_err());
        assert!(Cli::try_parse_from(["tdgan", "--scenario", "a"]).is_err());
        let v = Cli::try_parse_from(["tdgan", "--verify", "lemma2"]).unwrap();
        assert_eq!(v.verify, Some(VerifySuite::Lemma2));
        assert!(Cli::try_parse_from(["tdgan", "--scenario", "a", "--out", "b", "--iters-scale", "-1"]).is_ok());
    }

    #[test]
    fn window_increase() {
        assert_eq!(worst_window_increase(&[3.0, 2.0, 1.0]), 0.0);
        assert_eq!(worst_window_increase(&[3.0, 3.5, 1.0]), 0.5);
        assert_eq!(worst_window_increase(&[]), 0.0);
    }
}
