//! `ppthin`: simulate, thin, summarize, bound and certify point patterns.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ppthin::bounds::BoundReport;
use ppthin::distances::{certify_bound, tv_counts_lower, Certificate};
use ppthin::experiment::{compute_bounds, run_experiment, ExperimentConfig, ExperimentKind};
use ppthin::simulate::{sample_poisson, sample_strauss_chain, BooleanModel, StraussParams};
use ppthin::summaries::{estimate_g, estimate_g2, estimate_k, DEFAULT_G2_TOLERANCE};
use ppthin::thinning::{realize_retention, thin, RetentionField};
use ppthin::{par, Norm, PointPattern, RngStream, Window};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Environment variable that sizes the worker pool.
const THREADS_ENV: &str = "PPTHIN_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ppthin", version, about = "Dependent thinnings of point processes and their Poisson approximation bounds")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of Monte Carlo replicates.
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate ground patterns, one CSV per replicate.
    Simulate(SimulateArgs),
    /// Thin a pattern; writes the parent points with a `retained` column.
    Thin(ThinArgs),
    /// Estimate K, G or G2 from a directory of pattern CSVs.
    Summaries(SummariesArgs),
    /// Evaluate the bounds of an experiment config without sampling.
    Bound(ConfigArgs),
    /// Certify a bound against observed retained counts.
    Certify(CertifyArgs),
    /// Run an experiment end to end.
    Experiment(ConfigArgs),
}

#[derive(Args, Debug, Clone)]
struct WindowArgs {
    /// Lower corner of the window, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.0])]
    lo: Vec<f64>,
    /// Upper corner of the window, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 1.0])]
    hi: Vec<f64>,
    /// Halo around the window; patterns live on the haloed window.
    #[arg(long, default_value_t = 0.0)]
    halo: f64,
    #[arg(long, value_enum, default_value_t = NormArg::Euclidean)]
    norm: NormArg,
}

impl WindowArgs {
    fn window(&self) -> Result<Window> {
        Ok(Window::new(self.lo.clone(), self.hi.clone())?.haloed(self.halo)?)
    }

    fn norm(&self) -> Norm {
        match self.norm {
            NormArg::Euclidean => Norm::Euclidean,
            NormArg::Sup => Norm::Sup,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum NormArg {
    Euclidean,
    Sup,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Process {
    Poisson,
    Strauss,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(value_enum)]
    process: Process,
    /// Poisson intensity, or the Strauss activity.
    #[arg(long)]
    intensity: f64,
    /// Strauss interaction parameter.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Strauss interaction range.
    #[arg(long, default_value_t = 0.0)]
    range: f64,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Field {
    Constant,
    Matern,
    Boolean,
}

#[derive(Args, Debug)]
struct ThinArgs {
    /// Pattern CSV with header x1,...,xD.
    input: PathBuf,
    #[arg(long, value_enum)]
    field: Field,
    /// Retention probability of the constant field, or `q` of the others.
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Matérn deletion radius.
    #[arg(long, default_value_t = 0.0)]
    r: f64,
    /// Intensity of the Boolean germs.
    #[arg(long, default_value_t = 0.0)]
    l1: f64,
    /// Radius of the Boolean grains.
    #[arg(long, default_value_t = 0.0)]
    radius: f64,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Stat {
    K,
    G,
    G2,
}

#[derive(Args, Debug)]
struct SummariesArgs {
    /// Directory of pattern CSVs.
    input: PathBuf,
    #[arg(long, value_enum)]
    stat: Stat,
    /// Radii, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    r: Vec<f64>,
    /// Ground intensity, needed for K.
    #[arg(long)]
    intensity: Option<f64>,
    /// Displacement for G2, comma separated.
    #[arg(long, value_delimiter = ',')]
    y: Vec<f64>,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML experiment config.
    config: Option<PathBuf>,
    /// Use a canned config instead of a file.
    #[arg(long, conflicts_with = "config")]
    canned: Option<String>,
}

impl ConfigArgs {
    fn load(&self, cli: &Cli) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.canned) {
            (Some(p), _) => ExperimentConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?,
            (None, Some(name)) => ExperimentConfig::canned(ExperimentKind::parse(name)?),
            (None, None) => bail!("give a config file or --canned <name>"),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(r) = cli.replicates {
            cfg.replicates = r;
        }
        if let Some(o) = &cli.out {
            cfg.output_dir = Some(o.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct CertifyArgs {
    /// Bound report JSON.
    #[arg(long)]
    bound: PathBuf,
    /// Retained counts, one integer per line.
    #[arg(long)]
    counts: PathBuf,
    /// Config hash the counts were produced under.
    #[arg(long)]
    config_hash: Option<String>,
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                par::set_threads(n);
            }
            _ => eprintln!("ignoring {THREADS_ENV}={v}: expected a positive integer"),
        }
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every certificate passed.
fn run(cli: &Cli) -> Result<bool> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Simulate(a) => simulate(a, seed, cli.replicates.unwrap_or(1), cli.out.as_deref()),
        Command::Thin(a) => thin_cmd(a, seed, cli.out.as_deref()),
        Command::Summaries(a) => summaries(a, cli.out.as_deref()),
        Command::Bound(a) => bound_cmd(&a.load(cli)?, cli.out.as_deref()),
        Command::Certify(a) => certify_cmd(a, seed, cli.out.as_deref()),
        Command::Experiment(a) => experiment_cmd(&a.load(cli)?),
    }
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn simulate(a: &SimulateArgs, seed: u64, replicates: usize, out: Option<&Path>) -> Result<bool> {
    let out = out.context("simulate needs --out <directory>")?;
    fs::create_dir_all(out)?;
    let window = a.window.window()?;
    let stream = RngStream::new(seed, 0);
    let patterns: Vec<PointPattern> = match a.process {
        Process::Poisson => par::replicates(replicates, stream, |_, rng| sample_poisson(&window, a.intensity, rng)).into_iter().collect::<ppthin::Result<_>>()?,
        Process::Strauss => {
            let mut params = StraussParams::new(a.intensity, a.gamma, a.range, window)?;
            params.norm = a.window.norm();
            let (pats, diag) = sample_strauss_chain(&params, replicates, &mut stream.rng())?;
            if let Some(w) = diag.warning {
                eprintln!("warning: {w}");
            }
            pats
        }
    };
    for (i, p) in patterns.iter().enumerate() {
        p.write_csv(BufWriter::new(File::create(out.join(format!("pattern-{i:05}.csv")))?))?;
    }
    println!("wrote {} patterns to {}", patterns.len(), out.display());
    Ok(true)
}

fn thin_cmd(a: &ThinArgs, seed: u64, out: Option<&Path>) -> Result<bool> {
    let pattern = PointPattern::read_csv(File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?)?;
    let window = a.window.window()?;
    let norm = a.window.norm();
    let field = match a.field {
        Field::Constant => RetentionField::Constant { p: a.q },
        Field::Matern => RetentionField::MaternI { r: a.r, q: a.q, norm },
        Field::Boolean => RetentionField::IndependentBooleanCover { model: BooleanModel::deterministic(a.l1, a.radius, norm)?, q: a.q },
    };
    let mut rng = RngStream::new(seed, 0).rng();
    let probs = realize_retention(&field, &pattern, &window, &mut rng)?;
    let outcome = thin(&pattern, &probs, &mut rng)?;
    outcome.write_csv(output(out)?)?;
    Ok(true)
}

fn summaries(a: &SummariesArgs, out: Option<&Path>) -> Result<bool> {
    let mut files: Vec<PathBuf> = fs::read_dir(&a.input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no CSV patterns in {}", a.input.display());
    }
    let patterns = files.iter().map(|f| Ok(PointPattern::read_csv(File::open(f)?)?)).collect::<Result<Vec<_>>>()?;
    let window = a.window.window()?;
    let norm = a.window.norm();
    let est = match a.stat {
        Stat::K => estimate_k(&patterns, &window, a.intensity.context("K needs --intensity")?, &a.r, norm)?,
        Stat::G => estimate_g(&patterns, &window, &a.r, norm)?,
        Stat::G2 => estimate_g2(&patterns, &window, &a.y, &a.r, norm, DEFAULT_G2_TOLERANCE)?,
    };
    est.write_csv(output(out)?)?;
    Ok(true)
}

fn bound_cmd(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<bool> {
    let bounds = compute_bounds(cfg)?;
    let mut ok = true;
    for (i, (point, b)) in bounds.iter().enumerate() {
        match b {
            Ok(b) => match out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    b.write_json(BufWriter::new(File::create(dir.join(format!("bound-{i:03}.json")))?))?;
                    println!("point {i} {point:?}: total_tv {} total_d2 {}", b.total_tv, b.total_d2);
                }
                None => {
                    b.write_json(io::stdout().lock())?;
                    println!();
                }
            },
            Err(e) => {
                eprintln!("point {i} {point:?}: {e}");
                ok = false;
            }
        }
    }
    if !ok {
        bail!("some bounds could not be evaluated");
    }
    Ok(true)
}

fn certify_cmd(a: &CertifyArgs, seed: u64, out: Option<&Path>) -> Result<bool> {
    let bound = BoundReport::read_json(File::open(&a.bound).with_context(|| format!("opening {}", a.bound.display()))?)?;
    let text = fs::read_to_string(&a.counts)?;
    let counts = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && *l != "count")
        .map(|l| l.parse::<usize>().with_context(|| format!("bad count `{l}`")))
        .collect::<Result<Vec<_>>>()?;
    let mut tv = tv_counts_lower(&counts, bound.total_mass, RngStream::new(seed, 1))?;
    if let Some(h) = &a.config_hash {
        tv = tv.with_config_hash(h.clone());
    }
    let certs = certify_bound(&bound, &[tv])?;
    let mut w = output(out)?;
    for c in &certs {
        c.write_json(&mut w)?;
        writeln!(w)?;
    }
    w.flush()?;
    report(&certs);
    Ok(certs.iter().all(Certificate::passed))
}

fn report(certs: &[Certificate]) {
    for c in certs {
        let flag = if c.uninformative { " (uninformative)" } else { "" };
        eprintln!("{} {}: estimate {:.5} ± {:.5} vs bound {:.5}{flag}", c.verdict, c.metric, c.estimate, c.se, c.bound);
    }
}

fn experiment_cmd(cfg: &ExperimentConfig) -> Result<bool> {
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(format!("out-{}", cfg.experiment.name())));
    let report_ = run_experiment(cfg, &out)?;
    let m = &report_.manifest;
    println!("{} config {} seed {} -> {}", m.experiment.name(), m.config_hash, m.seed, out.display());
    for (p, o) in m.points.iter().zip(&report_.outcomes) {
        let verdict = if p.passed { "PASS" } else { "FAIL" };
        match o {
            Ok(o) => {
                println!("point {} {:?}: {verdict}", p.index, p.params);
                report(&o.certificates);
                for c in o.checks.iter().filter(|c| !c.passed) {
                    eprintln!("check {} failed: gap {:.2} SE", c.name, c.check.gap);
                }
            }
            Err(e) => println!("point {} {:?}: ERROR {e}", p.index, p.params),
        }
    }
    for (k, v) in &m.extras {
        println!("{k} = {v}");
    }
    Ok(m.all_passed)
}
