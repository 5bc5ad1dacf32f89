//! Empirical certification: exact TV on finite laws, TV lower bounds from the
//! count projection, `d2` lower bounds from a Lipschitz witness, the
//! Slivnyak–Mecke identity as a Monte Carlo check, and bound certificates.

use crate::bounds::BoundReport;
use crate::error::{ensure, Error, Result};
use crate::par;
use crate::rng::RngStream;
use crate::simulate::sample_poisson;
use crate::space::{d1_distance, BoundedMetric, CellGrid, Norm, PointPattern, Window};
use crate::stats::{IdentityCheck, Moments};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Poisson count laws are truncated once the remaining tail mass drops below this.
pub const POISSON_TAIL_CUTOFF: f64 = 1e-12;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const MIN_COUNT_SAMPLES: usize = 10_000;

/// Law of a nonnegative integer count, with the mass beyond the table in `tail`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountLaw {
    pub probabilities: Vec<f64>,
    pub tail: f64,
}

impl CountLaw {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        check_law(&probabilities)?;
        Ok(Self { probabilities, tail: 0.0 })
    }

    /// `Po(mean)` truncated where the tail mass falls below [`POISSON_TAIL_CUTOFF`].
    pub fn poisson(mean: f64) -> Result<Self> {
        ensure(mean.is_finite() && mean >= 0.0, "mean", || format!("must be finite and >= 0, got {mean}"))?;
        if mean == 0.0 {
            return Ok(Self { probabilities: vec![1.0], tail: 0.0 });
        }
        let mut probs = Vec::new();
        let mut cum = 0.0;
        let mut k = 0u64;
        loop {
            let lp = -mean + k as f64 * mean.ln() - ln_factorial(k);
            let p = lp.exp();
            probs.push(p);
            cum += p;
            k += 1;
            if k as f64 > mean && 1.0 - cum < POISSON_TAIL_CUTOFF {
                break;
            }
        }
        Ok(Self { probabilities: probs, tail: (1.0 - cum).max(0.0) })
    }

    /// Empirical law of observed counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        ensure(!counts.is_empty(), "counts", || "need at least one sample".into())?;
        let max = *counts.iter().max().unwrap();
        let mut hist = vec![0.0; max + 1];
        for &c in counts {
            hist[c] += 1.0;
        }
        let n = counts.len() as f64;
        Ok(Self { probabilities: hist.into_iter().map(|h| h / n).collect(), tail: 0.0 })
    }

    pub fn probability(&self, k: usize) -> f64 {
        self.probabilities.get(k).copied().unwrap_or(0.0)
    }
}

fn ln_factorial(k: u64) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

fn check_law(p: &[f64]) -> Result<()> {
    ensure(!p.is_empty(), "law", || "must have nonempty support".into())?;
    ensure(p.iter().all(|x| x.is_finite() && *x >= 0.0), "law", || "probabilities must be >= 0".into())?;
    let s: f64 = p.iter().sum();
    ensure((s - 1.0).abs() <= 1e-9, "law", || format!("probabilities sum to {s}, not 1"))
}

/// `½ Σ |p_i − q_i|` for two laws on the same finite outcome space.
pub fn tv_exact_small(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    check_law(p)?;
    check_law(q)?;
    Ok(half_l1(p, q))
}

fn half_l1(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    (0..n).map(|i| (get(p, i) - get(q, i)).abs()).sum::<f64>() * 0.5
}

/// TV between two count laws over the union of their tables. Tail mass is
/// ignored, so the result never exceeds the true distance by more than
/// half the larger tail.
pub fn tv_count_laws(a: &CountLaw, b: &CountLaw) -> f64 {
    half_l1(&a.probabilities, &b.probabilities).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tv,
    D2,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Tv => "tv",
            Metric::D2 => "d2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBound,
    Exact,
    UpperBound,
}

/// An empirical statement about a distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistance {
    pub metric: Metric,
    pub direction: Direction,
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EmpiricalDistance {
    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }

    pub const CSV_HEADER: &'static str = "metric,direction,value,stderr,samples";

    pub fn csv_row(&self) -> String {
        let dir = match self.direction {
            Direction::LowerBound => "lower_bound",
            Direction::Exact => "exact",
            Direction::UpperBound => "upper_bound",
        };
        format!("{},{},{},{},{}", self.metric, dir, self.value, self.std_error, self.samples)
    }
}

/// Lower bound on `d_TV(L(ξ_π), Po(μ^{(π)}))`: exact TV between the empirical
/// law of `|ξ_π|` and `Po(|μ^{(π)}|)`, with a multinomial bootstrap SE.
pub fn tv_counts_lower(counts: &[usize], poisson_mean: f64, stream: RngStream) -> Result<EmpiricalDistance> {
    ensure(counts.len() >= MIN_COUNT_SAMPLES, "samples", || {
        format!("need at least {MIN_COUNT_SAMPLES} samples, got {}", counts.len())
    })?;
    let poisson = CountLaw::poisson(poisson_mean)?;
    let empirical = CountLaw::from_counts(counts)?;
    let value = tv_count_laws(&empirical, &poisson);

    let n = counts.len() as u64;
    let mut rng = stream.rng();
    let mut boot = Moments::default();
    let mut resampled = vec![0.0; empirical.probabilities.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        multinomial(n, &empirical.probabilities, &mut resampled, &mut rng);
        boot.push(half_l1(&resampled, &poisson.probabilities).min(1.0));
    }
    Ok(EmpiricalDistance {
        metric: Metric::Tv,
        direction: Direction::LowerBound,
        value,
        std_error: boot.variance().sqrt(),
        samples: counts.len(),
        config_hash: None,
    })
}

/// Multinomial draw by sequential conditional binomials, stored as frequencies.
fn multinomial<R: Rng + ?Sized>(n: u64, p: &[f64], out: &mut [f64], rng: &mut R) {
    let mut left = n;
    let mut mass = 1.0;
    for (o, &pi) in out.iter_mut().zip(p) {
        let k = if left == 0 || pi <= 0.0 {
            0
        } else if pi >= mass {
            left
        } else {
            Binomial::new(left, (pi / mass).min(1.0)).expect("valid binomial").sample(rng)
        };
        *o = k as f64 / n as f64;
        left -= k;
        mass -= pi;
    }
}

/// Lower bound on `d2(P, Q)` from the 1-Lipschitz witness `f(ϱ) = d1(ϱ, ϱ0)`.
/// The anchor must be fixed before the samples are drawn.
pub fn d2_lower_witness(samples_p: &[PointPattern], samples_q: &[PointPattern], anchor: &PointPattern, d0: BoundedMetric) -> Result<EmpiricalDistance> {
    let eval = |s: &[PointPattern]| -> Result<Vec<f64>> { par::map_items(s, |p| d1_distance(p, anchor, d0)).into_iter().collect() };
    d2_witness_from_values(&eval(samples_p)?, &eval(samples_q)?)
}

/// [`d2_lower_witness`] from precomputed witness values `f(ϱ)` on each side.
pub fn d2_witness_from_values(values_p: &[f64], values_q: &[f64]) -> Result<EmpiricalDistance> {
    ensure(values_p.len() >= 2 && values_q.len() >= 2, "samples", || "need at least two samples per side".into())?;
    let mp: Moments = values_p.iter().copied().collect();
    let mq: Moments = values_q.iter().copied().collect();
    let se = (mp.variance() / mp.count() as f64 + mq.variance() / mq.count() as f64).sqrt();
    Ok(EmpiricalDistance {
        metric: Metric::D2,
        direction: Direction::LowerBound,
        value: (mp.mean() - mq.mean()).abs().min(1.0),
        std_error: se,
        samples: values_p.len().min(values_q.len()),
        config_hash: None,
    })
}

/// Test functions `h(x, σ)` for the Slivnyak–Mecke check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeckeFunction {
    /// `h ≡ 1`.
    One,
    /// `h(x, σ) = σ(𝒳)`.
    TotalCount,
    /// `h(x, σ) = 1{σ(𝔹(x, radius)) = 0}`.
    EmptyBall { radius: f64 },
}

/// Compares `E Σ_{x∈η} h(x, η − δ_x)` with `λ ∫_𝒳 E h(x, η) dx` for `η ~ Po(λ Leb|𝒳)`.
/// Both sides are evaluated on the same replicate; the right side uses one
/// uniform location per replicate where no closed form is used.
pub fn check_slivnyak_mecke(intensity: f64, window: &Window, h: MeckeFunction, norm: Norm, replicates: usize, stream: RngStream) -> Result<IdentityCheck> {
    ensure(intensity.is_finite() && intensity >= 0.0, "intensity", || format!("must be >= 0, got {intensity}"))?;
    ensure(replicates >= 2, "replicates", || "need at least two".into())?;
    if let MeckeFunction::EmptyBall { radius } = h {
        ensure(radius.is_finite() && radius >= 0.0, "radius", || format!("must be >= 0, got {radius}"))?;
    }
    let vol = window.volume();
    let mass = intensity * vol;
    let pairs = par::replicates(replicates, stream, |_, rng| {
        let eta = sample_poisson(window, intensity, rng).expect("validated intensity");
        let n = eta.len() as f64;
        match h {
            MeckeFunction::One => (n, mass),
            MeckeFunction::TotalCount => (n * (n - 1.0).max(0.0), mass * n),
            MeckeFunction::EmptyBall { radius } => {
                let grid = CellGrid::new(&eta, radius);
                let lhs = (0..eta.len()).filter(|&i| !grid.any_within_except(eta.point(i), radius, norm, Some(i))).count() as f64;
                let mut x = vec![0.0; window.dim()];
                window.sample_uniform(rng, &mut x);
                let empty = !grid.any_within_except(&x, radius, norm, None);
                (lhs, if empty { mass } else { 0.0 })
            }
        }
    });
    Ok(IdentityCheck::from_pairs(pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

/// Outcome of comparing one empirical lower bound with a bound total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub config_hash: String,
    pub metric: Metric,
    pub bound: f64,
    pub estimate: f64,
    pub se: f64,
    pub verdict: Verdict,
    /// The bound is at least 1 and therefore holds trivially.
    #[serde(default)]
    pub uninformative: bool,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Number of standard errors of slack granted to the empirical estimate.
pub const CERTIFY_SIGMAS: f64 = 3.0;

/// One certificate per piece of evidence: PASS iff `estimate ≤ bound + 3 SE`,
/// comparing TV evidence with `total_tv` and `d2` evidence with `total_d2`.
pub fn certify_bound(bound: &BoundReport, evidence: &[EmpiricalDistance]) -> Result<Vec<Certificate>> {
    ensure(!evidence.is_empty(), "evidence", || "need at least one empirical distance".into())?;
    let hash = bound.config_hash.clone().unwrap_or_default();
    evidence
        .iter()
        .map(|e| {
            if let (Some(b), Some(s)) = (&bound.config_hash, &e.config_hash) {
                if b != s {
                    return Err(Error::ConfigMismatch { bound: b.clone(), samples: s.clone() });
                }
            }
            if e.direction == Direction::UpperBound {
                return Err(Error::Unsupported("upper-bound evidence cannot refute a bound".into()));
            }
            let total = match e.metric {
                Metric::Tv => bound.total_tv,
                Metric::D2 => bound.total_d2,
            };
            let uninformative = total >= 1.0;
            let ok = uninformative || e.value <= total + CERTIFY_SIGMAS * e.std_error;
            Ok(Certificate {
                config_hash: hash.clone(),
                metric: e.metric,
                bound: total,
                estimate: e.value,
                se: e.std_error,
                verdict: if ok { Verdict::Pass } else { Verdict::Fail },
                uninformative,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::assemble_main_bound;
    use crate::simulate::poisson_count;
    use proptest::prelude::*;

    #[test]
    fn tv_examples() {
        assert_eq!(tv_exact_small(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(tv_exact_small(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_exact_small(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(tv_exact_small(&[1.0], &[0.5, 0.5]).is_err());
        assert!(tv_exact_small(&[0.7, 0.7], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn poisson_law_is_normalized() {
        for mean in [0.0, 0.3, 1.0, 7.5, 120.0] {
            let law = CountLaw::poisson(mean).unwrap();
            let s: f64 = law.probabilities.iter().sum();
            assert!((s + law.tail - 1.0).abs() < 1e-12);
            assert!(law.tail < POISSON_TAIL_CUTOFF);
        }
    }

    #[test]
    fn counts_from_the_poisson_law_are_close_to_it() {
        let counts = par::replicates(100_000, RngStream::new(1, 0), |_, rng| poisson_count(2.0, rng));
        let d = tv_counts_lower(&counts, 2.0, RngStream::new(1, 1)).unwrap();
        assert!(d.value < 0.02, "{}", d.value);
        assert!(d.std_error > 0.0 && d.value <= 1.0);
        assert_eq!(d.direction, Direction::LowerBound);
    }

    #[test]
    fn count_tv_against_series_oracle() {
        // Oracle: the series ½ Σ |Po(1)(k) − Po(2)(k)| summed to k = 60.
        let mut oracle = 0.0;
        let (mut p1, mut p2) = ((-1.0f64).exp(), (-2.0f64).exp());
        for k in 0..60 {
            if k > 0 {
                p1 *= 1.0 / k as f64;
                p2 *= 2.0 / k as f64;
            }
            oracle += 0.5 * (p1 - p2).abs();
        }
        let exact = tv_count_laws(&CountLaw::poisson(1.0).unwrap(), &CountLaw::poisson(2.0).unwrap());
        assert!((exact - oracle).abs() < 1e-12);
        let counts = par::replicates(100_000, RngStream::new(2, 0), |_, rng| poisson_count(1.0, rng));
        let d = tv_counts_lower(&counts, 2.0, RngStream::new(2, 1)).unwrap();
        assert!((d.value - oracle).abs() < 3.0 * d.std_error, "{} vs {oracle} se {}", d.value, d.std_error);
    }

    #[test]
    fn too_few_count_samples_are_refused() {
        assert!(tv_counts_lower(&[1, 2, 3], 1.0, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn witness_on_identical_sample_sets_is_zero() {
        let w = Window::unit(2);
        let pats = par::replicates(500, RngStream::new(3, 0), |_, rng| sample_poisson(&w, 2.0, rng).unwrap());
        let anchor = PointPattern::new(2, vec![vec![0.5, 0.5]]).unwrap();
        let d = d2_lower_witness(&pats, &pats, &anchor, BoundedMetric::new(Norm::Euclidean)).unwrap();
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn witness_separates_different_intensities() {
        let w = Window::unit(2);
        let p = par::replicates(2000, RngStream::new(4, 0), |_, rng| sample_poisson(&w, 0.5, rng).unwrap());
        let q = par::replicates(2000, RngStream::new(4, 1), |_, rng| sample_poisson(&w, 3.0, rng).unwrap());
        let d = d2_lower_witness(&p, &q, &PointPattern::empty(2), BoundedMetric::new(Norm::Euclidean)).unwrap();
        // With the empty anchor the witness is P(ϱ ≠ ∅): e^{-0.5} vs e^{-3}.
        let exact = (-0.5f64).exp() - (-3.0f64).exp();
        assert!((d.value - exact).abs() < 3.0 * d.std_error);
        assert!(d.value <= 1.0);
    }

    #[test]
    fn slivnyak_mecke_catalog() {
        let w = Window::unit(2);
        for h in [MeckeFunction::One, MeckeFunction::TotalCount, MeckeFunction::EmptyBall { radius: 0.1 }] {
            let c = check_slivnyak_mecke(20.0, &w, h, Norm::Euclidean, 20_000, RngStream::new(5, 0)).unwrap();
            assert!(c.passes(3.0), "{h:?}: {c:?}");
        }
        let c = check_slivnyak_mecke(20.0, &w, MeckeFunction::One, Norm::Euclidean, 20_000, RngStream::new(5, 1)).unwrap();
        assert_eq!(c.rhs.value, 20.0);
        let c = check_slivnyak_mecke(4.0, &w, MeckeFunction::TotalCount, Norm::Euclidean, 50_000, RngStream::new(5, 2)).unwrap();
        assert!((c.lhs.value - 16.0).abs() < 3.0 * c.lhs.std_error);
    }

    #[test]
    fn certificates() {
        let bound = assemble_main_bound(0.05, 0.01, 0.0, 0.0, 0.5).unwrap().with_config_hash("abc");
        let ev = |v, se| EmpiricalDistance { metric: Metric::Tv, direction: Direction::LowerBound, value: v, std_error: se, samples: 10, config_hash: None };
        let c = certify_bound(&bound, &[ev(0.05, 0.001)]).unwrap();
        assert!(c[0].passed() && !c[0].uninformative);
        let c = certify_bound(&bound, &[ev(0.2, 0.01)]).unwrap();
        assert_eq!(c[0].verdict, Verdict::Fail);
        assert!(certify_bound(&bound, &[ev(0.0, 0.0).with_config_hash("xyz")]).is_err());
        let big = assemble_main_bound(2.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        let c = certify_bound(&big, &[ev(0.9, 0.0)]).unwrap();
        assert!(c[0].passed() && c[0].uninformative);
        let json = serde_json::to_value(&c[0]).unwrap();
        for key in ["config_hash", "metric", "bound", "estimate", "se", "verdict"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["verdict"], "PASS");
    }

    fn law(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn tv_is_a_metric(a in prop::collection::vec(0.01f64..1.0, 5), b in prop::collection::vec(0.01f64..1.0, 5), c in prop::collection::vec(0.01f64..1.0, 5)) {
            let (p, q, r) = (law(&a), law(&b), law(&c));
            let pq = tv_exact_small(&p, &q).unwrap();
            prop_assert!((pq - tv_exact_small(&q, &p).unwrap()).abs() < 1e-15);
            prop_assert!(tv_exact_small(&p, &p).unwrap() == 0.0);
            prop_assert!(pq <= tv_exact_small(&p, &r).unwrap() + tv_exact_small(&r, &q).unwrap() + 1e-12);
            prop_assert!((0.0..=1.0).contains(&pq));
        }
    }
}
