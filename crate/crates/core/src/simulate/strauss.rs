//! Strauss process: density, normalizing constant and a birth–death sampler.

use super::poisson::sample_poisson;
use crate::error::{ensure, Result};
use crate::par;
use crate::rng::RngStream;
use crate::space::{pair_count, Norm, PointPattern, Window};
use crate::stats::Moments;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fewest replicates accepted by [`estimate_strauss_kappa`].
pub const MIN_KAPPA_REPLICATES: usize = 10_000;

/// Parameters of the density `κ λ^{|ϱ|} γ^{c(ϱ)}` relative to the unit-rate
/// Poisson process on `window`, where `c` counts unordered pairs within `range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StraussParams {
    pub lambda: f64,
    pub gamma: f64,
    pub range: f64,
    pub window: Window,
    #[serde(default)]
    pub norm: Norm,
}

impl StraussParams {
    pub fn new(lambda: f64, gamma: f64, range: f64, window: Window) -> Result<Self> {
        let p = Self { lambda, gamma, range, window, norm: Norm::Euclidean };
        p.validate()?;
        Ok(p)
    }

    /// Accepts `γ ∈ [0, 1]`; `γ = 0` is the hard-core limit.
    pub fn validate(&self) -> Result<()> {
        ensure(self.lambda > 0.0 && self.lambda.is_finite(), "lambda", || format!("must be > 0, got {}", self.lambda))?;
        ensure((0.0..=1.0).contains(&self.gamma), "gamma", || format!("must lie in [0, 1], got {}", self.gamma))?;
        ensure(self.range >= 0.0 && self.range.is_finite(), "range", || format!("must be >= 0, got {}", self.range))?;
        ensure(self.window.is_admissible(), "window", || "must have positive volume".into())
    }

    /// Refuses the hard-core limit, whose density is not strictly positive.
    pub fn require_positive_density(&self) -> Result<()> {
        self.validate()?;
        ensure(self.gamma > 0.0, "gamma", || "the hard-core limit has no strictly positive density".into())
    }

    pub fn is_hard_core(&self) -> bool {
        self.gamma == 0.0
    }

    /// Default burn-in, `⌈10 λ vol⌉` steps.
    pub fn default_burn_in(&self) -> usize {
        (10.0 * self.lambda * self.window.volume()).ceil().max(1.0) as usize
    }

    /// Default spacing between retained chain states, `⌈λ vol⌉` steps.
    pub fn thinning_interval(&self) -> usize {
        (self.lambda * self.window.volume()).ceil().max(1.0) as usize
    }
}

/// Number of unordered pairs within distance `range`.
pub fn close_pairs(pattern: &PointPattern, range: f64, norm: Norm) -> usize {
    pair_count(pattern, range, norm).expect("range validated nonnegative") / 2
}

/// `|ϱ| log λ + c(ϱ) log γ`.
pub fn strauss_log_density_unnormalized(pattern: &PointPattern, params: &StraussParams) -> Result<f64> {
    params.validate()?;
    let n = pattern.len() as f64;
    let c = close_pairs(pattern, params.range, params.norm);
    let interaction = if c == 0 { 0.0 } else { c as f64 * params.gamma.ln() };
    Ok(n * params.lambda.ln() + interaction)
}

/// Estimated normalizing constant with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub kappa: f64,
    pub std_error: f64,
    pub replicates: usize,
    /// The sampled unnormalized densities were all equal.
    pub degenerate_variance: bool,
}

/// `κ̂ = 1 / mean_η exp(log f(η))` over `η` from the unit-rate process.
pub fn estimate_strauss_kappa(params: &StraussParams, replicates: usize, stream: RngStream) -> Result<KappaEstimate> {
    params.require_positive_density()?;
    ensure(replicates >= MIN_KAPPA_REPLICATES, "replicates", || {
        format!("need at least {MIN_KAPPA_REPLICATES}, got {replicates}")
    })?;
    let values = par::replicates(replicates, stream, |_, rng| {
        let eta = sample_poisson(&params.window, 1.0, rng).expect("validated window");
        strauss_log_density_unnormalized(&eta, params).expect("validated params").exp()
    });
    let m: Moments = values.iter().copied().collect();
    let mean = m.mean();
    ensure(mean > 0.0 && mean.is_finite(), "kappa", || format!("unnormalized mean {mean} is not positive and finite"))?;
    Ok(KappaEstimate {
        kappa: 1.0 / mean,
        std_error: m.std_error() / (mean * mean),
        replicates,
        degenerate_variance: m.variance() == 0.0,
    })
}

/// Chain statistics of a sampler run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    pub steps: usize,
    pub burn_in: usize,
    pub acceptance_rate: f64,
    /// Set when the acceptance rate falls outside `[0.05, 0.95]`.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StraussSample {
    pub pattern: PointPattern,
    pub diagnostics: McmcDiagnostics,
}

/// Birth–death Metropolis–Hastings chain started from the empty pattern.
struct Chain<'a> {
    params: &'a StraussParams,
    coords: Vec<f64>,
    volume: f64,
    proposals: usize,
    accepted: usize,
}

impl<'a> Chain<'a> {
    fn new(params: &'a StraussParams) -> Self {
        Self { params, coords: Vec::new(), volume: params.window.volume(), proposals: 0, accepted: 0 }
    }

    fn len(&self) -> usize {
        self.coords.len() / self.params.window.dim()
    }

    fn neighbours(&self, x: &[f64], skip: Option<usize>) -> i32 {
        let d = self.params.window.dim();
        self.coords
            .chunks_exact(d)
            .enumerate()
            .filter(|(j, p)| Some(*j) != skip && self.params.norm.within(x, p, self.params.range))
            .count() as i32
    }

    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let p = self.params;
        let d = p.window.dim();
        let n = self.len();
        self.proposals += 1;
        if rng.random::<bool>() {
            let mut x = vec![0.0; d];
            p.window.sample_uniform(rng, &mut x);
            let t = self.neighbours(&x, None);
            let ratio = p.lambda * p.gamma.powi(t) * self.volume / (n + 1) as f64;
            if rng.random::<f64>() < ratio {
                self.coords.extend_from_slice(&x);
                self.accepted += 1;
            }
        } else if n > 0 {
            let i = rng.random_range(0..n);
            let t = self.neighbours(&self.coords[i * d..(i + 1) * d], Some(i));
            let papangelou = p.lambda * p.gamma.powi(t);
            let ratio = n as f64 / (self.volume * papangelou);
            if rng.random::<f64>() < ratio {
                let last = n - 1;
                for k in 0..d {
                    self.coords[i * d + k] = self.coords[last * d + k];
                }
                self.coords.truncate(last * d);
                self.accepted += 1;
            }
        }
    }

    fn snapshot(&self) -> PointPattern {
        PointPattern::canonical(self.params.window.dim(), self.coords.clone())
    }

    fn diagnostics(&self, burn_in: usize) -> McmcDiagnostics {
        let rate = if self.proposals == 0 { 0.0 } else { self.accepted as f64 / self.proposals as f64 };
        let warning = (!(0.05..=0.95).contains(&rate)).then(|| format!("acceptance rate {rate:.3} outside [0.05, 0.95]"));
        McmcDiagnostics { steps: self.proposals, burn_in, acceptance_rate: rate, warning }
    }
}

/// Runs `steps` chain steps and returns the final state. `steps` must cover
/// the default burn-in.
pub fn sample_strauss<R: Rng + ?Sized>(params: &StraussParams, steps: usize, rng: &mut R) -> Result<StraussSample> {
    params.validate()?;
    let burn_in = params.default_burn_in();
    ensure(steps >= burn_in, "mcmc_steps", || format!("must be at least the burn-in {burn_in}, got {steps}"))?;
    let mut chain = Chain::new(params);
    for _ in 0..steps {
        chain.step(rng);
    }
    Ok(StraussSample { pattern: chain.snapshot(), diagnostics: chain.diagnostics(burn_in) })
}

/// After the default burn-in, records `count` states spaced by the thinning interval.
pub fn sample_strauss_chain<R: Rng + ?Sized>(
    params: &StraussParams,
    count: usize,
    rng: &mut R,
) -> Result<(Vec<PointPattern>, McmcDiagnostics)> {
    params.validate()?;
    let burn_in = params.default_burn_in();
    let every = params.thinning_interval();
    let mut chain = Chain::new(params);
    for _ in 0..burn_in {
        chain.step(rng);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..every {
            chain.step(rng);
        }
        out.push(chain.snapshot());
    }
    Ok((out, chain.diagnostics(burn_in)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, gamma: f64, range: f64, side: f64) -> StraussParams {
        StraussParams::new(lambda, gamma, range, Window::cube(2, side).unwrap()).unwrap()
    }

    #[test]
    fn log_density_examples() {
        let p = params(2.0, 0.5, 0.2, 1.0);
        assert_eq!(strauss_log_density_unnormalized(&PointPattern::empty(2), &p).unwrap(), 0.0);
        let two = PointPattern::new(2, vec![vec![0.3, 0.3], vec![0.4, 0.3]]).unwrap();
        let want = 2.0 * 2f64.ln() + 0.5f64.ln();
        assert!((strauss_log_density_unnormalized(&two, &p).unwrap() - want).abs() < 1e-15);
        let poisson = params(2.0, 1.0, 0.2, 1.0);
        assert!((strauss_log_density_unnormalized(&two, &poisson).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!(StraussParams::new(1.0, 1.5, 0.1, Window::unit(2)).is_err());
    }

    #[test]
    fn kappa_is_exact_without_interaction() {
        let unit = params(1.0, 1.0, 0.1, 1.0);
        let k = estimate_strauss_kappa(&unit, 10_000, RngStream::new(1, 0)).unwrap();
        assert_eq!(k.kappa, 1.0);
        assert!(k.degenerate_variance);
        let p = params(1.8, 1.0, 0.1, 1.0);
        let k = estimate_strauss_kappa(&p, 20_000, RngStream::new(1, 1)).unwrap();
        let want = (1.0f64 - 1.8).exp();
        assert!((k.kappa - want).abs() < 3.0 * k.std_error, "{k:?} vs {want}");
        assert!(estimate_strauss_kappa(&p, 100, RngStream::new(1, 1)).is_err());
    }

    #[test]
    fn kappa_is_stable_across_seeds() {
        let p = params(1.5, 0.5, 0.3, 1.0);
        let a = estimate_strauss_kappa(&p, 20_000, RngStream::new(20, 0)).unwrap();
        let b = estimate_strauss_kappa(&p, 20_000, RngStream::new(21, 0)).unwrap();
        let joint = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.kappa - b.kappa).abs() < 3.0 * joint, "{a:?} {b:?}");
    }

    #[test]
    fn steps_below_burn_in_are_refused() {
        let p = params(50.0, 0.5, 0.05, 1.0);
        assert!(sample_strauss(&p, 10, &mut RngStream::new(0, 0).rng()).is_err());
    }

    #[test]
    fn poisson_reduction_matches_count_mean() {
        let p = params(30.0, 1.0, 0.1, 1.0);
        let mut rng = RngStream::new(4, 0).rng();
        let (pats, diag) = sample_strauss_chain(&p, 4000, &mut rng).unwrap();
        assert!(diag.warning.is_none(), "{diag:?}");
        let counts: Moments = pats.iter().map(|q| q.len() as f64).collect();
        // Spaced chain states are close to independent; allow for mild autocorrelation.
        let se = (30.0f64 / 4000.0).sqrt();
        assert!((counts.mean() - 30.0).abs() < 3.0 * 2.0 * se, "mean {}", counts.mean());
    }

    #[test]
    fn hard_core_limit_never_has_close_pairs() {
        let p = params(60.0, 0.0, 0.08, 1.0);
        let mut rng = RngStream::new(5, 0).rng();
        let (pats, _) = sample_strauss_chain(&p, 300, &mut rng).unwrap();
        assert!(pats.iter().all(|q| close_pairs(q, 0.08, Norm::Euclidean) == 0));
        assert!(pats.iter().any(|q| q.len() > 10));
        assert!(p.require_positive_density().is_err());
    }

    #[test]
    fn close_pairs_decrease_with_gamma() {
        let mut means = Vec::new();
        for (k, gamma) in [1.0, 0.5, 0.1].into_iter().enumerate() {
            let p = params(50.0, gamma, 0.1, 1.0);
            let mut rng = RngStream::new(6, k as u64).rng();
            let (pats, _) = sample_strauss_chain(&p, 1500, &mut rng).unwrap();
            means.push(pats.iter().map(|q| close_pairs(q, 0.1, Norm::Euclidean) as f64).sum::<f64>() / pats.len() as f64);
        }
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }
}
