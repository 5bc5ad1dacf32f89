//! Configuration-driven experiments: simulation, thinning, bounds and
//! certification for a grid of parameter values, written as JSON and CSV.

use crate::bounds::{
    bound_boolean, bound_boolean_contracted, bound_matern, bound_matern_poisson, contracted_radius, strauss_m_bound_window,
    BooleanBoundInput, BoundReport, ContractedBooleanInput, GroundMoments, MaternBoundInput, PairIntegral, ReducedMoment,
};
use crate::distances::{
    certify_bound, check_slivnyak_mecke, d2_witness_from_values, tv_counts_lower, Certificate, EmpiricalDistance, MeckeFunction,
    CERTIFY_SIGMAS, MIN_COUNT_SAMPLES,
};
use crate::error::{ConfigIssue, Error, Result};
use crate::par;
use crate::rng::RngStream;
use crate::simulate::{
    estimate_strauss_kappa, poisson_density, sample_poisson, sample_strauss_chain, BooleanModel, RadiusLaw, StraussParams,
    MIN_KAPPA_REPLICATES,
};
use crate::space::{d1_distance, BoundedMetric, Norm, PointPattern, Window};
use crate::stats::{linear_fit, ratio_estimate, Estimate, IdentityCheck};
use crate::summaries::{estimate_g, estimate_g2, estimate_k, DEFAULT_G2_TOLERANCE};
use crate::thinning::{check_thinning_moments, realize_retention, thin, thinned_density_mc, RetentionField};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// The canned experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Matérn I thinning of a Poisson process, certified in TV and `d2`.
    MaternPoisson,
    /// Boolean-cover thinning of a Poisson process, certified in TV and `d2`.
    BooleanPoisson,
    /// Contracted Boolean-cover bound over a grid of `n`.
    RateSweep,
    /// Monte Carlo identity checks.
    Identities,
    /// Matérn I thinning of a Strauss process.
    StraussMatern,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::MaternPoisson,
        ExperimentKind::BooleanPoisson,
        ExperimentKind::RateSweep,
        ExperimentKind::Identities,
        ExperimentKind::StraussMatern,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::MaternPoisson => "matern-poisson",
            ExperimentKind::BooleanPoisson => "boolean-poisson",
            ExperimentKind::RateSweep => "rate-sweep",
            ExperimentKind::Identities => "identities",
            ExperimentKind::StraussMatern => "strauss-matern",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown experiment `{s}`")))
    }
}

/// The ground process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundSpec {
    Poisson { intensity: f64 },
    Strauss { lambda: f64, gamma: f64, range: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] }
    }
}

/// Parameter grids. Sweep points are the Cartesian product of the nonempty grids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub n: Vec<f64>,
    #[serde(default)]
    pub r: Vec<f64>,
    #[serde(default)]
    pub q: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
}

/// Parameter overrides of one sweep point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl Sweep {
    pub fn points(&self) -> Vec<SweepPoint> {
        let axis = |v: &[f64]| -> Vec<Option<f64>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        };
        let mut out = Vec::new();
        for &n in &axis(&self.n) {
            for &r in &axis(&self.r) {
                for &q in &axis(&self.q) {
                    for &lambda in &axis(&self.lambda) {
                        for &gamma in &axis(&self.gamma) {
                            out.push(SweepPoint { n, r, q, lambda, gamma });
                        }
                    }
                }
            }
        }
        out
    }
}

fn default_replicates() -> usize {
    100_000
}

/// A complete, reproducible experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub norm: Norm,
    #[serde(default)]
    pub window: WindowSpec,
    pub ground: GroundSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention: Option<RetentionField>,
    /// Pair neighbourhood radius `r̄`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_bar: Option<f64>,
    /// Width of the simulation halo around the window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halo: Option<f64>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_replicates: Option<usize>,
    /// Where reports go; not part of the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    /// Defaults for each canned experiment.
    pub fn canned(kind: ExperimentKind) -> Self {
        let base = |ground, retention| ExperimentConfig {
            experiment: kind,
            seed: 1,
            replicates: 100_000,
            norm: Norm::Euclidean,
            window: WindowSpec::default(),
            ground,
            retention: Some(retention),
            r_bar: None,
            halo: None,
            sweep: Sweep::default(),
            kappa_replicates: None,
            output_dir: None,
        };
        let matern = RetentionField::MaternI { r: 0.1, q: 1.0, norm: Norm::Euclidean };
        let boolean = |radius| RetentionField::IndependentBooleanCover {
            model: BooleanModel::deterministic(5.0, radius, Norm::Euclidean).expect("valid model"),
            q: 1.0,
        };
        match kind {
            ExperimentKind::MaternPoisson => base(GroundSpec::Poisson { intensity: 0.5 }, matern),
            ExperimentKind::BooleanPoisson => {
                let mut c = base(GroundSpec::Poisson { intensity: 2.0 }, boolean(0.05));
                c.r_bar = Some(0.1);
                c
            }
            ExperimentKind::RateSweep => {
                let retention = RetentionField::IndependentBooleanCover {
                    model: BooleanModel::deterministic(1.0, 0.0, Norm::Euclidean).expect("valid model"),
                    q: 1.0,
                };
                let mut c = base(GroundSpec::Poisson { intensity: 1.0 }, retention);
                c.replicates = 1;
                c.sweep.n = vec![1e2, 1e3, 1e4, 1e5, 1e6];
                c
            }
            ExperimentKind::Identities => {
                let mut c = base(GroundSpec::Poisson { intensity: 2.0 }, RetentionField::MaternI { r: 0.05, q: 0.7, norm: Norm::Euclidean });
                c.r_bar = Some(0.1);
                c
            }
            ExperimentKind::StraussMatern => {
                let mut c = base(GroundSpec::Strauss { lambda: 0.5, gamma: 0.5, range: 0.05 }, RetentionField::MaternI { r: 0.1, q: 1.0, norm: Norm::Euclidean });
                c.replicates = 20_000;
                c
            }
        }
    }
}

/// Model parameters after applying one sweep point.
#[derive(Debug, Clone, PartialEq)]
struct Resolved {
    ground: GroundSpec,
    retention: RetentionField,
    n: Option<f64>,
}

fn resolve(cfg: &ExperimentConfig, point: &SweepPoint) -> Option<Resolved> {
    let mut ground = cfg.ground.clone();
    let mut retention = cfg.retention.clone()?;
    if let Some(l) = point.lambda {
        match &mut ground {
            GroundSpec::Poisson { intensity } => *intensity = l,
            GroundSpec::Strauss { lambda, .. } => *lambda = l,
        }
    }
    if let (Some(g), GroundSpec::Strauss { gamma, .. }) = (point.gamma, &mut ground) {
        *gamma = g;
    }
    if let Some(new_r) = point.r {
        match &mut retention {
            RetentionField::MaternI { r, .. } => *r = new_r,
            RetentionField::IndependentBooleanCover { model, .. } => model.radius = RadiusLaw::Deterministic { radius: new_r },
            RetentionField::Constant { .. } => {}
        }
    }
    if let Some(new_q) = point.q {
        match &mut retention {
            RetentionField::MaternI { q, .. } | RetentionField::IndependentBooleanCover { q, .. } => *q = new_q,
            RetentionField::Constant { p } => *p = new_q,
        }
    }
    Some(Resolved { ground, retention, n: point.n })
}

struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, path: &str, message: impl Into<String>) {
        let issue = ConfigIssue { path: path.into(), message: message.into() };
        if !self.0.contains(&issue) {
            self.0.push(issue);
        }
    }

    fn check(&mut self, cond: bool, path: &str, message: impl FnOnce() -> String) {
        if !cond {
            self.push(path, message());
        }
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// The density of `Po(a)` relative to the unit-rate process has second moment
/// `e^{(a−1)²|𝒳|}`; beyond this exponent Monte Carlo checks of it are useless.
const MAX_DENSITY_SPREAD: f64 = 4.0;

/// Checks every precondition the run depends on; each issue names its config path.
pub fn validate_config(cfg: &ExperimentConfig) -> std::result::Result<(), Vec<ConfigIssue>> {
    let mut is = Issues(Vec::new());
    let kind = cfg.experiment;
    let d = cfg.window.lo.len();
    is.check(d >= 1, "window.lo", || "window needs at least one dimension".into());
    is.check(cfg.window.hi.len() == d, "window.hi", || format!("has {} coordinates, window.lo has {d}", cfg.window.hi.len()));
    if cfg.window.hi.len() == d && Window::new(cfg.window.lo.clone(), cfg.window.hi.clone()).is_err() {
        is.push("window", "needs finite lo < hi in every coordinate");
    }
    is.check(cfg.replicates >= 1, "replicates", || "must be at least 1".into());
    if matches!(kind, ExperimentKind::MaternPoisson | ExperimentKind::BooleanPoisson | ExperimentKind::StraussMatern) {
        is.check(cfg.replicates >= MIN_COUNT_SAMPLES, "replicates", || {
            format!("certification needs at least {MIN_COUNT_SAMPLES} replicates, got {}", cfg.replicates)
        });
    }
    if let Some(h) = cfg.halo {
        is.check(h.is_finite() && h >= 0.0, "halo", || format!("must be >= 0, got {h}"));
    }
    if let Some(k) = cfg.kappa_replicates {
        is.check(k >= MIN_KAPPA_REPLICATES, "kappa_replicates", || format!("must be at least {MIN_KAPPA_REPLICATES}, got {k}"));
    }
    if let Some(rb) = cfg.r_bar {
        is.check(rb.is_finite() && rb >= 0.0, "r_bar", || format!("must be >= 0, got {rb}"));
    }
    let Some(retention) = &cfg.retention else {
        is.push("retention", "is required");
        return Err(is.0);
    };
    if let RetentionField::MaternI { norm, .. } | RetentionField::IndependentBooleanCover { model: BooleanModel { norm, .. }, .. } = retention {
        is.check(*norm == cfg.norm, "retention.norm", || format!("{norm:?} differs from norm {:?}", cfg.norm));
    }
    let ground_ok = match (kind, &cfg.ground) {
        (ExperimentKind::StraussMatern, GroundSpec::Strauss { .. }) => true,
        (ExperimentKind::StraussMatern, _) => false,
        (_, GroundSpec::Poisson { .. }) => true,
        _ => false,
    };
    is.check(ground_ok, "ground.kind", || format!("{} needs a {} ground process", kind.name(), if kind == ExperimentKind::StraussMatern { "strauss" } else { "poisson" }));
    let field_ok = match (kind, retention) {
        (ExperimentKind::MaternPoisson | ExperimentKind::StraussMatern, RetentionField::MaternI { .. }) => true,
        (ExperimentKind::BooleanPoisson | ExperimentKind::RateSweep, RetentionField::IndependentBooleanCover { .. }) => true,
        (ExperimentKind::Identities, _) => true,
        _ => false,
    };
    is.check(field_ok, "retention.kind", || format!("{} does not support this retention field", kind.name()));
    if kind == ExperimentKind::RateSweep {
        is.check(!cfg.sweep.n.is_empty(), "sweep.n", || "rate-sweep needs a grid of n".into());
    } else {
        is.check(cfg.sweep.n.is_empty(), "sweep.n", || format!("{} has no contraction parameter", kind.name()));
    }

    let volume: f64 = cfg.window.lo.iter().zip(&cfg.window.hi).map(|(a, b)| b - a).product();
    for point in cfg.sweep.points() {
        let Some(res) = resolve(cfg, &point) else { continue };
        let at = |field: &str, over: Option<f64>| match over {
            Some(_) => format!("sweep.{}", field.rsplit('.').next().unwrap_or(field)),
            None => field.to_string(),
        };
        match &res.ground {
            GroundSpec::Poisson { intensity } => {
                is.check(intensity.is_finite() && *intensity >= 0.0, &at("ground.intensity", point.lambda), || format!("must be >= 0, got {intensity}"));
                if kind == ExperimentKind::Identities {
                    let spread = (intensity - 1.0).powi(2) * volume;
                    is.check(spread <= MAX_DENSITY_SPREAD, &at("ground.intensity", point.lambda), || {
                        format!("density checks need (intensity - 1)^2 |window| <= {MAX_DENSITY_SPREAD}, got {spread}")
                    });
                }
            }
            GroundSpec::Strauss { lambda, gamma, range } => {
                is.check(positive(*lambda), &at("ground.lambda", point.lambda), || format!("must be > 0, got {lambda}"));
                is.check(*gamma > 0.0 && *gamma <= 1.0, &at("ground.gamma", point.gamma), || {
                    format!("must lie in (0, 1] for the density-ratio bound, got {gamma}")
                });
                is.check(range.is_finite() && *range >= 0.0, "ground.range", || format!("must be >= 0, got {range}"));
            }
        }
        if let Err(e) = res.retention.validate() {
            is.push(&at("retention", point.r.or(point.q)), e.to_string());
        }
        match &res.retention {
            RetentionField::MaternI { r, q, .. } => {
                if let Some(h) = cfg.halo {
                    is.check(h >= *r, "halo", || format!("the simulation window must contain the r-neighbourhood of the window: halo {h} < r = {r}"));
                }
                if kind == ExperimentKind::MaternPoisson {
                    is.check(*q == 1.0, &at("retention.q", point.q), || format!("matern-poisson bound needs q = 1, got {q}"));
                    is.check(positive(*r), &at("retention.r", point.r), || format!("must be > 0, got {r}"));
                }
            }
            RetentionField::IndependentBooleanCover { model, q } => {
                let sup = model.radius.sup();
                if kind == ExperimentKind::BooleanPoisson {
                    let rb = cfg.r_bar.unwrap_or(2.0 * sup);
                    is.check(rb >= 2.0 * sup, "r_bar", || format!("must be at least 2‖R‖∞ = {} for the Boolean-cover bound, got {rb}", 2.0 * sup));
                }
                if let (ExperimentKind::RateSweep, Some(n)) = (kind, res.n) {
                    is.check(n >= 1.0 && n.is_finite(), "sweep.n", || format!("must be >= 1, got {n}"));
                    is.check(positive(model.intensity), "retention.model.intensity", || "rate-sweep needs l1 > 0".into());
                    if d >= 1 && n >= 1.0 {
                        let lo = n.powi(-(d as i32));
                        is.check(*q >= lo * (1.0 - 1e-12) && *q <= 1.0, &at("retention.q", point.q), || {
                            format!("q_n must lie in [n^-D, 1] = [{lo:e}, 1] at n = {n}, got {q}")
                        });
                    }
                }
            }
            RetentionField::Constant { .. } => {}
        }
    }
    if is.0.is_empty() {
        Ok(())
    } else {
        Err(is.0)
    }
}

/// A named Monte Carlo identity check and whether it passed at 3 SE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCheck {
    pub name: String,
    pub check: IdentityCheck,
    pub passed: bool,
}

impl NamedCheck {
    fn new(name: &str, check: IdentityCheck) -> Self {
        Self { name: name.into(), passed: check.passes(CERTIFY_SIGMAS), check }
    }
}

/// Everything computed at one sweep point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    pub bound: Option<BoundReport>,
    pub distances: Vec<EmpiricalDistance>,
    pub certificates: Vec<Certificate>,
    pub checks: Vec<NamedCheck>,
    pub extras: BTreeMap<String, f64>,
}

impl PointOutcome {
    pub fn passed(&self) -> bool {
        self.certificates.iter().all(|c| c.passed()) && self.checks.iter().all(|c| c.passed)
    }
}

/// Manifest entry for one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub index: usize,
    pub params: SweepPoint,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub passed: bool,
    pub directory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub replicates: usize,
    pub points: Vec<PointSummary>,
    pub extras: BTreeMap<String, f64>,
    pub all_passed: bool,
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: Manifest,
    pub outcomes: Vec<Result<PointOutcome>>,
    pub manifest_path: PathBuf,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    hash: String,
    window: Window,
    stream: RngStream,
}

/// Streams per sweep point.
const GROUND: u64 = 0;
const BOOTSTRAP: u64 = 1;
const REFERENCE: u64 = 2;
const KAPPA: u64 = 3;
const CHECKS: u64 = 4;

/// Runs every sweep point and writes its reports under `out_dir`. The manifest
/// is written even when some points fail.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    validate_config(cfg).map_err(Error::InvalidConfig)?;
    fs::create_dir_all(out_dir)?;
    let window = Window::new(cfg.window.lo.clone(), cfg.window.hi.clone())?;
    let hash = cfg.config_hash();
    let points = cfg.sweep.points();
    let base = RngStream::new(cfg.seed, 0);
    let outcomes: Vec<Result<PointOutcome>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let ctx = Ctx { cfg, hash: hash.clone(), window: window.clone(), stream: base.substream(i as u64) };
            let res = resolve(cfg, p).ok_or_else(|| Error::Undefined("retention is required".into()))?;
            run_point(&ctx, &res)
        })
        .collect();

    let mut extras = BTreeMap::new();
    if cfg.experiment == ExperimentKind::RateSweep {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points
            .iter()
            .zip(&outcomes)
            .filter_map(|(p, o)| {
                let n = p.n?;
                let b = o.as_ref().ok()?.bound.as_ref()?.total_tv;
                (n > std::f64::consts::E && b > 0.0).then(|| (n.ln().ln(), b.ln()))
            })
            .unzip();
        if xs.len() >= 2 {
            let (slope, intercept) = linear_fit(&xs, &ys);
            extras.insert("loglog_slope".into(), slope);
            extras.insert("loglog_intercept".into(), intercept);
        }
    }

    let mut summaries = Vec::new();
    let mut plot = String::from("point,n,r,q,lambda,gamma,metric,bound,looser_bound,estimate,stderr,verdict\n");
    for (i, (p, outcome)) in points.iter().zip(&outcomes).enumerate() {
        let dir_name = format!("point-{i:03}");
        let dir = out_dir.join(&dir_name);
        fs::create_dir_all(&dir)?;
        let written = match outcome {
            Ok(o) => write_point(&dir, o).map(|_| o),
            Err(e) => Err(e.clone()),
        };
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let params = format!("{},{},{},{},{}", opt(p.n), opt(p.r), opt(p.q), opt(p.lambda), opt(p.gamma));
        match written {
            Ok(o) => {
                if let Some(b) = &o.bound {
                    if o.certificates.is_empty() {
                        plot += &format!("{i},{params},tv,{},{},,,\n", b.total_tv, opt(b.looser_total_tv));
                        plot += &format!("{i},{params},d2,{},,,,\n", b.total_d2);
                    }
                }
                for c in &o.certificates {
                    let looser = if c.metric == crate::distances::Metric::Tv { o.bound.as_ref().and_then(|b| b.looser_total_tv) } else { None };
                    plot += &format!("{i},{params},{},{},{},{},{},{}\n", c.metric, c.bound, opt(looser), c.estimate, c.se, c.verdict);
                }
                summaries.push(PointSummary { index: i, params: p.clone(), status: "ok".into(), error: None, passed: o.passed(), directory: dir_name });
            }
            Err(e) => {
                fs::write(dir.join("error.txt"), format!("{e}\n"))?;
                summaries.push(PointSummary { index: i, params: p.clone(), status: "error".into(), error: Some(e.to_string()), passed: false, directory: dir_name });
            }
        }
    }
    fs::write(out_dir.join("plot.csv"), plot)?;
    let manifest = Manifest {
        experiment: cfg.experiment,
        config_hash: hash,
        seed: cfg.seed,
        replicates: cfg.replicates,
        all_passed: summaries.iter().all(|s| s.passed),
        points: summaries,
        extras,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;
    Ok(RunReport { manifest, outcomes, manifest_path })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn write_point(dir: &Path, o: &PointOutcome) -> Result<()> {
    if let Some(b) = &o.bound {
        write_json(&dir.join("bound.json"), b)?;
    }
    if !o.distances.is_empty() {
        let mut s = format!("{}\n", EmpiricalDistance::CSV_HEADER);
        for d in &o.distances {
            s += &d.csv_row();
            s.push('\n');
        }
        fs::write(dir.join("distances.csv"), s)?;
    }
    if !o.certificates.is_empty() {
        write_json(&dir.join("certificates.json"), &o.certificates)?;
    }
    if !o.checks.is_empty() {
        let mut s = String::from("check,lhs,lhs_stderr,rhs,rhs_stderr,gap_se,replicates,passed\n");
        for c in &o.checks {
            let k = &c.check;
            s += &format!("{},{},{},{},{},{},{},{}\n", c.name, k.lhs.value, k.lhs.std_error, k.rhs.value, k.rhs.std_error, k.gap, k.replicates, c.passed);
        }
        fs::write(dir.join("checks.csv"), s)?;
    }
    if !o.extras.is_empty() {
        write_json(&dir.join("extras.json"), &o.extras)?;
    }
    Ok(())
}

/// Bounds for every sweep point without sampling. The Strauss pipeline needs
/// sampled summaries and is refused.
pub fn compute_bounds(cfg: &ExperimentConfig) -> Result<Vec<(SweepPoint, Result<BoundReport>)>> {
    validate_config(cfg).map_err(Error::InvalidConfig)?;
    let window = Window::new(cfg.window.lo.clone(), cfg.window.hi.clone())?;
    let hash = cfg.config_hash();
    Ok(cfg
        .sweep
        .points()
        .into_iter()
        .map(|p| {
            let bound = (|| {
                let res = resolve(cfg, &p).ok_or_else(|| Error::Undefined("retention is required".into()))?;
                let ctx = Ctx { cfg, hash: hash.clone(), window: window.clone(), stream: RngStream::new(cfg.seed, 0) };
                let b = match cfg.experiment {
                    ExperimentKind::MaternPoisson => {
                        let RetentionField::MaternI { r, .. } = res.retention else { unreachable!("validated") };
                        bound_matern_poisson(window.volume(), poisson_intensity(&res)?, r, window.dim(), cfg.norm)?
                    }
                    ExperimentKind::BooleanPoisson => boolean_bound(&ctx, &res)?,
                    ExperimentKind::RateSweep => rate_sweep(&ctx, &res)?.bound.expect("rate sweep yields a bound"),
                    kind => return Err(Error::Unsupported(format!("{} has no sample-free bound", kind.name()))),
                };
                Ok(b.with_config_hash(hash.clone()))
            })();
            (p, bound)
        })
        .collect())
}

fn run_point(ctx: &Ctx, res: &Resolved) -> Result<PointOutcome> {
    match ctx.cfg.experiment {
        ExperimentKind::MaternPoisson => matern_poisson(ctx, res),
        ExperimentKind::BooleanPoisson => boolean_poisson(ctx, res),
        ExperimentKind::RateSweep => rate_sweep(ctx, res),
        ExperimentKind::Identities => identities(ctx, res),
        ExperimentKind::StraussMatern => strauss_matern(ctx, res),
    }
}

fn poisson_intensity(res: &Resolved) -> Result<f64> {
    match res.ground {
        GroundSpec::Poisson { intensity } => Ok(intensity),
        _ => Err(Error::Unsupported("expected a Poisson ground process".into())),
    }
}

/// The `d2` witness anchor: one point at the window centre.
fn anchor(window: &Window) -> PointPattern {
    let c: Vec<f64> = window.lo().iter().zip(window.hi()).map(|(a, b)| 0.5 * (a + b)).collect();
    PointPattern::new(window.dim(), vec![c]).expect("finite centre")
}

/// Per replicate: retained count and witness value.
type ThinnedRow = (usize, f64);

/// TV and `d2` evidence against `Po(mass/|𝒳| Leb|𝒳|)`, then certificates.
fn certify(ctx: &Ctx, bound: BoundReport, rows: Vec<ThinnedRow>, out: &mut PointOutcome) -> Result<()> {
    let bound = bound.with_config_hash(ctx.hash.clone());
    let counts: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let fp: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let tv = tv_counts_lower(&counts, bound.total_mass, ctx.stream.substream(BOOTSTRAP))?.with_config_hash(ctx.hash.clone());
    let rate = bound.total_mass / ctx.window.volume();
    let (w, a, d0) = (ctx.window.clone(), anchor(&ctx.window), BoundedMetric::new(ctx.cfg.norm));
    let fq: Vec<f64> = par::replicates(rows.len(), ctx.stream.substream(REFERENCE), |_, rng| {
        let p = sample_poisson(&w, rate, rng)?;
        d1_distance(&p, &a, d0)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let d2 = d2_witness_from_values(&fp, &fq)?.with_config_hash(ctx.hash.clone());
    out.certificates = certify_bound(&bound, &[tv.clone(), d2.clone()])?;
    out.distances = vec![tv, d2];
    out.bound = Some(bound);
    Ok(())
}

fn matern_poisson(ctx: &Ctx, res: &Resolved) -> Result<PointOutcome> {
    let m1 = poisson_intensity(res)?;
    let RetentionField::MaternI { r, .. } = res.retention else { unreachable!("validated") };
    let norm = ctx.cfg.norm;
    let d = ctx.window.dim();
    let bound = bound_matern_poisson(ctx.window.volume(), m1, r, d, norm)?;
    let outer = ctx.window.haloed(ctx.cfg.halo.unwrap_or(r).max(r))?;
    let rows = thinned_rows(ctx, &outer, &res.retention, |rng| sample_poisson(&outer, m1, rng))?;
    let mut out = PointOutcome::default();
    certify(ctx, bound, rows.into_iter().map(|r| (r.0, r.1)).collect(), &mut out)?;
    Ok(out)
}

/// Thins `replicates` ground samples. Rows: retained count in the window,
/// witness value, and ground count in the window.
fn thinned_rows<S>(ctx: &Ctx, outer: &Window, field: &RetentionField, sampler: S) -> Result<Vec<(usize, f64, usize)>>
where
    S: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<PointPattern> + Sync + Send,
{
    let inner = ctx.window.clone();
    let (a, d0) = (anchor(&inner), BoundedMetric::new(ctx.cfg.norm));
    par::replicates(ctx.cfg.replicates, ctx.stream.substream(GROUND), |_, rng| {
        let xi = sampler(rng)?;
        thin_row(&xi, field, outer, &inner, &a, d0, rng)
    })
    .into_iter()
    .collect()
}

fn thin_row(
    xi: &PointPattern,
    field: &RetentionField,
    outer: &Window,
    inner: &Window,
    anchor: &PointPattern,
    d0: BoundedMetric,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(usize, f64, usize)> {
    let probs = realize_retention(field, xi, outer, rng)?;
    let kept = thin(xi, &probs, rng)?.retained.filter(|x| inner.contains(x));
    let ground = xi.points().filter(|x| inner.contains(x)).count();
    Ok((kept.len(), d1_distance(&kept, anchor, d0)?, ground))
}

fn boolean_poisson(ctx: &Ctx, res: &Resolved) -> Result<PointOutcome> {
    let m1 = poisson_intensity(res)?;
    let RetentionField::IndependentBooleanCover { model, q } = &res.retention else { unreachable!("validated") };
    let bound = boolean_bound(ctx, res)?;
    let w = ctx.window.clone();
    let rows = thinned_rows(ctx, &w, &res.retention, |rng| sample_poisson(&w, m1, rng))?;
    let mut out = PointOutcome::default();
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.0 as f64, r.2 as f64)).collect();
    if let Some(frac) = ratio_estimate(&pairs) {
        let expected = q * model.vacancy(ctx.window.dim());
        out.extras.insert("retained_fraction".into(), frac.value);
        out.extras.insert("retained_fraction_expected".into(), expected);
        out.checks.push(NamedCheck::new("retained_fraction", IdentityCheck::from_independent(frac, Estimate::exact(expected), rows.len() as u64)));
    }
    certify(ctx, bound, rows.into_iter().map(|r| (r.0, r.1)).collect(), &mut out)?;
    Ok(out)
}

fn boolean_bound(ctx: &Ctx, res: &Resolved) -> Result<BoundReport> {
    let m1 = poisson_intensity(res)?;
    let RetentionField::IndependentBooleanCover { model, q } = &res.retention else { unreachable!("validated") };
    let input = BooleanBoundInput {
        window: ctx.window.clone(),
        moments: GroundMoments::Stationary { m1, k: ReducedMoment::Lebesgue },
        model: model.clone(),
        q: *q,
        r_bar: ctx.cfg.r_bar.unwrap_or(2.0 * model.radius.sup()),
        beta_sup: 0.0,
    };
    bound_boolean(&input)
}

fn rate_sweep(ctx: &Ctx, res: &Resolved) -> Result<PointOutcome> {
    let m1 = poisson_intensity(res)?;
    let RetentionField::IndependentBooleanCover { model, q } = &res.retention else { unreachable!("validated") };
    let n = res.n.expect("validated");
    let d = ctx.window.dim();
    let r_n = contracted_radius(model.intensity, *q, n, d, model.norm)?;
    let model_n = BooleanModel::deterministic(model.intensity, r_n, model.norm)?;
    let input = ContractedBooleanInput {
        window: ctx.window.clone(),
        n,
        q_n: *q,
        model: model_n,
        r_bar: ctx.cfg.r_bar.map_or(2.0 * r_n, |rb| rb.max(2.0 * r_n)),
        m1,
        k: ReducedMoment::Lebesgue,
        beta_sup: 0.0,
    };
    let bound = bound_boolean_contracted(&input)?.with_config_hash(ctx.hash.clone());
    let mut out = PointOutcome { bound: Some(bound), ..Default::default() };
    out.extras.insert("r_n".into(), r_n);
    Ok(out)
}

fn identities(ctx: &Ctx, res: &Resolved) -> Result<PointOutcome> {
    let m1 = poisson_intensity(res)?;
    let (w, norm, reps) = (&ctx.window, ctx.cfg.norm, ctx.cfg.replicates);
    let s = ctx.stream.substream(CHECKS);
    let radius = ctx.cfg.r_bar.unwrap_or(0.1);
    let mut out = PointOutcome::default();
    let catalog = [
        ("slivnyak_mecke_one", MeckeFunction::One),
        ("slivnyak_mecke_total_count", MeckeFunction::TotalCount),
        ("slivnyak_mecke_empty_ball", MeckeFunction::EmptyBall { radius }),
    ];
    for (i, (name, h)) in catalog.into_iter().enumerate() {
        out.checks.push(NamedCheck::new(name, check_slivnyak_mecke(m1, w, h, norm, reps, s.substream(i as u64))?));
    }

    let halo = match &res.retention {
        RetentionField::MaternI { r, .. } => ctx.cfg.halo.unwrap_or(*r).max(*r),
        _ => ctx.cfg.halo.unwrap_or(0.0),
    };
    let outer = w.haloed(halo)?;
    let sampler = |rng: &mut rand_chacha::ChaCha8Rng| sample_poisson(&outer, m1, rng).expect("validated intensity");
    let moments = check_thinning_moments(sampler, &res.retention, &outer, w, radius, norm, reps, s.substream(3))?;
    out.checks.push(NamedCheck::new("thinning_first_moment", moments.first));
    out.checks.push(NamedCheck::new("thinning_second_moment", moments.second));

    let norm_rows: Vec<(f64, f64)> = par::replicates(reps, s.substream(4), |_, rng| {
        let eta = sample_poisson(w, 1.0, rng).expect("unit rate");
        (poisson_density(&eta, m1, w).expect("validated intensity"), 1.0)
    });
    out.checks.push(NamedCheck::new("poisson_density_normalization", IdentityCheck::from_pairs(norm_rows)));

    let p = match res.retention {
        RetentionField::Constant { p } => p,
        RetentionField::MaternI { q, .. } | RetentionField::IndependentBooleanCover { q, .. } => q,
    };
    let at = |t: f64| -> Vec<f64> { w.lo().iter().zip(w.hi()).map(|(a, b)| a + t * (b - a)).collect() };
    let rho = PointPattern::new(w.dim(), vec![at(0.3), at(0.7)])?;
    let est = thinned_density_mc(&rho, |s| poisson_density(s, m1, w).unwrap_or(0.0), &RetentionField::Constant { p }, w, reps, s.substream(5))?;
    let exact = poisson_density(&rho, p * m1, w)?;
    out.checks.push(NamedCheck::new("thinned_density", IdentityCheck::from_independent(est.estimate(), Estimate::exact(exact), reps as u64)));
    Ok(out)
}

/// Number of radial cells used for the two-point integral of the Strauss pipeline.
const PAIR_CELLS: usize = 4;
/// Ground samples used for the summary statistics.
const SUMMARY_SAMPLES: usize = 4000;
/// Independent Markov chains for the Strauss sampler.
const CHAINS: usize = 16;

fn strauss_matern(ctx: &Ctx, res: &Resolved) -> Result<PointOutcome> {
    let GroundSpec::Strauss { lambda, gamma, range } = res.ground else { unreachable!("validated") };
    let RetentionField::MaternI { r, q, .. } = res.retention else { unreachable!("validated") };
    let (norm, d, vol) = (ctx.cfg.norm, ctx.window.dim(), ctx.window.volume());
    let need = (1.0 + DEFAULT_G2_TOLERANCE) * 2.0 * r + r;
    let outer = ctx.window.haloed(ctx.cfg.halo.unwrap_or(need).max(need))?;
    let mut params = StraussParams::new(lambda, gamma, range, outer.clone())?;
    params.norm = norm;
    let mut out = PointOutcome::default();

    let kappa = estimate_strauss_kappa(&params, ctx.cfg.kappa_replicates.unwrap_or(MIN_KAPPA_REPLICATES), ctx.stream.substream(KAPPA))?;
    out.extras.insert("kappa".into(), kappa.kappa);
    out.extras.insert("kappa_stderr".into(), kappa.std_error);
    if gamma == 1.0 {
        let exact = ((1.0 - lambda) * outer.volume()).exp();
        let est = Estimate { value: kappa.kappa, std_error: kappa.std_error };
        out.checks.push(NamedCheck::new("kappa_no_interaction", IdentityCheck::from_independent(est, Estimate::exact(exact), kappa.replicates as u64)));
    }
    let m_bound = strauss_m_bound_window(lambda, kappa.kappa, outer.volume())?;
    out.extras.insert("m_bound".into(), m_bound);

    let per_chain = ctx.cfg.replicates.div_ceil(CHAINS);
    let chains = par::replicates(CHAINS, ctx.stream.substream(GROUND), |_, rng| sample_strauss_chain(&params, per_chain, rng));
    let mut ground = Vec::with_capacity(CHAINS * per_chain);
    for c in chains {
        let (pats, diag) = c?;
        if let Some(w) = diag.warning {
            out.extras.entry("mcmc_warnings".into()).and_modify(|x| *x += 1.0).or_insert(1.0);
            let _ = w;
        }
        ground.extend(pats);
    }
    ground.truncate(ctx.cfg.replicates);

    let inner = ctx.window.clone();
    let (a, d0) = (anchor(&inner), BoundedMetric::new(norm));
    let thin_stream = ctx.stream.substream(CHECKS);
    let rows: Vec<(usize, f64, usize)> = par::replicates(ground.len(), thin_stream, |i, rng| thin_row(&ground[i], &res.retention, &outer, &inner, &a, d0, rng))
        .into_iter()
        .collect::<Result<_>>()?;
    let m1 = rows.iter().map(|r| r.2 as f64).sum::<f64>() / (rows.len() as f64 * vol);
    out.extras.insert("m1".into(), m1);

    let summary = &ground[..ground.len().min(SUMMARY_SAMPLES)];
    let g_r = if m1 > 0.0 { estimate_g(summary, &outer, &[r], norm).map(|g| g.values[0]).unwrap_or(0.0) } else { 0.0 };
    out.extras.insert("g_r".into(), g_r);
    let edges: Vec<f64> = (0..=PAIR_CELLS).map(|i| r + r * i as f64 / PAIR_CELLS as f64).collect();
    let pair_integral = if m1 > 0.0 {
        let k = estimate_k(summary, &outer, m1, &edges, norm)?;
        let mut one_minus = Vec::new();
        let mut weights = Vec::new();
        for i in 0..PAIR_CELLS {
            let mut y = vec![0.0; d];
            y[0] = 0.5 * (edges[i] + edges[i + 1]);
            let g2 = estimate_g2(summary, &outer, &y, &[r], norm, DEFAULT_G2_TOLERANCE).map(|g| g.values[0]).unwrap_or(0.0);
            one_minus.push((1.0 - g2).clamp(0.0, 1.0));
            weights.push((k.values[i + 1] - k.values[i]).max(0.0));
        }
        PairIntegral::Weighted { one_minus_g2: one_minus, weights }
    } else {
        PairIntegral::Value { value: 0.0 }
    };
    let last_term = m1 * vol * q * (1.0 - g_r) * m_bound;
    let input = MaternBoundInput { volume: vol, dim: d, norm, m1, q, r, g_r, pair_integral, last_term };
    let bound = bound_matern(&input)?;
    certify(ctx, bound, rows.into_iter().map(|r| (r.0, r.1)).collect(), &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::canned(kind);
        c.replicates = MIN_COUNT_SAMPLES;
        c
    }

    #[test]
    fn canned_configs_validate_and_round_trip() {
        for kind in ExperimentKind::ALL {
            let c = ExperimentConfig::canned(kind);
            validate_config(&c).unwrap_or_else(|e| panic!("{kind:?}: {e:?}"));
            let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.config_hash(), c.config_hash());
            assert_eq!(ExperimentKind::parse(kind.name()).unwrap(), kind);
        }
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::canned(ExperimentKind::MaternPoisson);
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed += 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn validation_itemizes_violations() {
        let mut c = ExperimentConfig::canned(ExperimentKind::BooleanPoisson);
        c.r_bar = Some(0.05);
        c.ground = GroundSpec::Poisson { intensity: -1.0 };
        let issues = validate_config(&c).unwrap_err();
        assert!(issues.iter().any(|i| i.path == "r_bar" && i.message.contains("2‖R‖∞")), "{issues:?}");
        assert!(issues.iter().any(|i| i.path == "ground.intensity"), "{issues:?}");

        let mut c = ExperimentConfig::canned(ExperimentKind::RateSweep);
        c.sweep.q = vec![1e-9];
        let issues = validate_config(&c).unwrap_err();
        assert!(issues.iter().any(|i| i.path == "sweep.q" && i.message.contains("n^-D")), "{issues:?}");

        let mut c = ExperimentConfig::canned(ExperimentKind::MaternPoisson);
        c.halo = Some(0.01);
        assert!(validate_config(&c).unwrap_err().iter().any(|i| i.path == "halo"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let s = "experiment = \"matern-poisson\"\nbogus = 1\n[ground]\nkind = \"poisson\"\nintensity = 1.0\n";
        assert!(matches!(ExperimentConfig::from_toml_str(s), Err(Error::Parse(_))));
    }

    #[test]
    fn sample_free_bounds() {
        let b = compute_bounds(&ExperimentConfig::canned(ExperimentKind::MaternPoisson)).unwrap();
        let direct = bound_matern_poisson(1.0, 0.5, 0.1, 2, Norm::Euclidean).unwrap();
        assert_eq!(b[0].1.as_ref().unwrap().total_tv, direct.total_tv);
        let b = compute_bounds(&ExperimentConfig::canned(ExperimentKind::StraussMatern)).unwrap();
        assert!(matches!(b[0].1, Err(Error::Unsupported(_))));
    }

    #[test]
    fn sweep_is_a_cartesian_product() {
        let s = Sweep { r: vec![0.1, 0.2], q: vec![0.5, 1.0, 0.3], ..Default::default() };
        assert_eq!(s.points().len(), 6);
        assert_eq!(Sweep::default().points(), vec![SweepPoint::default()]);
    }

    #[test]
    fn rate_sweep_writes_a_slope() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&ExperimentConfig::canned(ExperimentKind::RateSweep), dir.path()).unwrap();
        let slope = report.manifest.extras["loglog_slope"];
        assert!((slope + 1.0).abs() <= 0.3, "{slope}");
        assert!(report.manifest.all_passed);
        assert!(dir.path().join("point-004/bound.json").exists());
    }

    #[test]
    fn matern_poisson_is_reproducible_and_passes() {
        let c = small(ExperimentKind::MaternPoisson);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run_experiment(&c, a.path()).unwrap();
        run_experiment(&c, b.path()).unwrap();
        assert!(ra.manifest.all_passed, "{:?}", ra.outcomes);
        for f in ["manifest.json", "plot.csv", "point-000/bound.json", "point-000/certificates.json", "point-000/distances.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn failing_points_are_isolated() {
        let mut c = small(ExperimentKind::MaternPoisson);
        // Euclidean overlap quadrature is unavailable in D = 4; only the empty
        // ground process avoids it.
        c.ground = GroundSpec::Poisson { intensity: 0.5 };
        c.window = WindowSpec { lo: vec![0.0; 4], hi: vec![1.0; 4] };
        c.sweep.lambda = vec![0.0, 0.5];
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&c, dir.path()).unwrap();
        assert_eq!(report.manifest.points[0].status, "ok");
        assert_eq!(report.manifest.points[1].status, "error");
        assert!(!report.manifest.all_passed);
        assert!(dir.path().join("manifest.json").exists());
        assert!(dir.path().join("point-001/error.txt").exists());
    }
}
