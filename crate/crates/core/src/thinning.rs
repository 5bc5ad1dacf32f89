//! Retention fields, the thinning operator, exact subset laws and Monte Carlo
//! checks of the thinned process's moments and density.

use crate::error::{ensure, Error, Result};
use crate::par;
use crate::rng::RngStream;
use crate::simulate::{sample_boolean_model, sample_poisson, BooleanModel};
use crate::space::{CellGrid, Norm, PointPattern, Window};
use crate::stats::{Estimate, IdentityCheck, Moments};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Largest pattern accepted by [`exact_thinning_distribution`].
pub const EXACT_SUBSET_LIMIT: usize = 20;

/// Replicate count below which density estimates are flagged.
pub const MIN_STABLE_REPLICATES: usize = 1_000;

/// How retention probabilities are assigned to the points of a pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetentionField {
    /// Every point kept with probability `p`.
    Constant { p: f64 },
    /// A point is kept with probability `q` unless it is covered by an
    /// independently drawn Boolean model.
    IndependentBooleanCover { model: BooleanModel, q: f64 },
    /// A point is kept with probability `q` if it lies in the inner window and
    /// has no other point within distance `r`.
    MaternI {
        r: f64,
        q: f64,
        #[serde(default)]
        norm: Norm,
    },
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    ensure((0.0..=1.0).contains(&p), name, || format!("must lie in [0, 1], got {p}"))
}

impl RetentionField {
    pub fn validate(&self) -> Result<()> {
        match self {
            RetentionField::Constant { p } => check_probability("p", *p),
            RetentionField::IndependentBooleanCover { model, q } => {
                model.validate()?;
                check_probability("q", *q)
            }
            RetentionField::MaternI { r, q, .. } => {
                ensure(*r >= 0.0 && r.is_finite(), "r", || format!("must be >= 0, got {r}"))?;
                check_probability("q", *q)
            }
        }
    }
}

/// Matérn I probabilities for the points of `pattern` living on `window`,
/// whose inner window is the retention region.
fn matern_probabilities(pattern: &PointPattern, window: &Window, r: f64, q: f64, norm: Norm) -> Vec<f64> {
    let inner = window.inner();
    let grid = CellGrid::new(pattern, r);
    (0..pattern.len())
        .map(|i| {
            let x = pattern.point(i);
            if !inner.contains(x) || grid.any_within_except(x, r, norm, Some(i)) {
                0.0
            } else {
                q
            }
        })
        .collect()
}

/// Retention probabilities for the points of `pattern`, which lives on `window`.
///
/// The Boolean field draws a fresh grain set on `𝔹(window, ‖R‖_∞)`. The Matérn
/// field needs `window` to be haloed by at least `r` around its inner window.
pub fn realize_retention<R: Rng + ?Sized>(
    field: &RetentionField,
    pattern: &PointPattern,
    window: &Window,
    rng: &mut R,
) -> Result<Vec<f64>> {
    field.validate()?;
    match field {
        RetentionField::Constant { p } => Ok(vec![*p; pattern.len()]),
        RetentionField::IndependentBooleanCover { model, q } => {
            let region = window.haloed(model.radius.sup())?;
            let grains = sample_boolean_model(model, &region, rng)?;
            Ok(grains.covered(pattern).into_iter().map(|c| if c { 0.0 } else { *q }).collect())
        }
        RetentionField::MaternI { r, q, norm } => {
            window.require_halo(*r)?;
            Ok(matern_probabilities(pattern, window, *r, *q, *norm))
        }
    }
}

/// Result of thinning a pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinningOutcome {
    pub retained: PointPattern,
    pub parent: PointPattern,
    pub decisions: Vec<bool>,
}

impl ThinningOutcome {
    /// Parent rows in `x1,...,xD,retained` format.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.parent.write_csv_with(w, Some(("retained", &self.decisions)))
    }
}

/// Keeps point `i` iff a fresh uniform falls below `probabilities[i]`; one
/// draw per point in canonical order.
pub fn thin<R: Rng + ?Sized>(pattern: &PointPattern, probabilities: &[f64], rng: &mut R) -> Result<ThinningOutcome> {
    if probabilities.len() != pattern.len() {
        return Err(Error::LengthMismatch(pattern.len(), probabilities.len()));
    }
    for &p in probabilities {
        check_probability("probabilities", p)?;
    }
    let decisions: Vec<bool> = probabilities.iter().map(|&p| rng.random::<f64>() < p).collect();
    Ok(ThinningOutcome { retained: pattern.select(&decisions), parent: pattern.clone(), decisions })
}

/// Law of the retained subset: entry `mask` is the probability of keeping
/// exactly the points whose bits are set (bit `i` is point `i`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetLaw {
    pub size: usize,
    pub probabilities: Vec<f64>,
}

impl SubsetLaw {
    pub fn probability(&self, mask: usize) -> f64 {
        self.probabilities[mask]
    }

    pub fn mask_of(decisions: &[bool]) -> usize {
        decisions.iter().enumerate().filter(|(_, &d)| d).map(|(i, _)| 1usize << i).sum()
    }
}

/// Enumerates all `2^n` retained subsets with their product-law probabilities.
pub fn exact_thinning_distribution(pattern: &PointPattern, probabilities: &[f64]) -> Result<SubsetLaw> {
    let n = pattern.len();
    if n > EXACT_SUBSET_LIMIT {
        return Err(Error::TooLarge { len: n, limit: EXACT_SUBSET_LIMIT });
    }
    if probabilities.len() != n {
        return Err(Error::LengthMismatch(n, probabilities.len()));
    }
    for &p in probabilities {
        check_probability("probabilities", p)?;
    }
    let mut law = vec![1.0];
    for &p in probabilities {
        // Point i is bit i: the new half of the table holds the "kept" subsets.
        let mut next = Vec::with_capacity(law.len() * 2);
        next.extend(law.iter().map(|w| w * (1.0 - p)));
        next.extend(law.iter().map(|w| w * p));
        law = next;
    }
    Ok(SubsetLaw { size: n, probabilities: law })
}

/// Monte Carlo density estimate with a stability flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub value: f64,
    pub std_error: f64,
    pub replicates: usize,
    /// Set when fewer than [`MIN_STABLE_REPLICATES`] replicates or fewer than
    /// ten nonzero terms entered the average.
    pub unstable: bool,
}

impl DensityEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.value, std_error: self.std_error }
    }
}

/// `q(ϱ | σ)`: probability that thinning `σ` keeps exactly the tagged points.
fn conditional_retention<R: Rng + ?Sized>(
    field: &RetentionField,
    sigma: &PointPattern,
    tagged: &[bool],
    window: &Window,
    rng: &mut R,
) -> Result<f64> {
    let probs = realize_retention(field, sigma, window, rng)?;
    Ok(probs.iter().zip(tagged).map(|(&p, &keep)| if keep { p } else { 1.0 - p }).product())
}

/// Estimates the density of the thinned process at `ϱ` relative to the
/// unit-rate Poisson process on `window`:
/// `e^{vol} · E_η[q(ϱ | ϱ + η) f(ϱ + η)]` with `η` unit-rate Poisson.
///
/// For the Boolean field each replicate draws one grain set, which keeps the
/// average unbiased for the grain-averaged `q`.
pub fn thinned_density_mc<F>(
    pattern: &PointPattern,
    base_density: F,
    field: &RetentionField,
    window: &Window,
    replicates: usize,
    stream: RngStream,
) -> Result<DensityEstimate>
where
    F: Fn(&PointPattern) -> f64 + Sync + Send,
{
    field.validate()?;
    ensure(replicates > 0, "replicates", || "must be positive".into())?;
    if let RetentionField::MaternI { r, .. } = field {
        window.require_halo(*r)?;
    }
    let d = window.dim();
    let scale = window.volume().exp();
    let terms = par::replicates(replicates, stream, |_, rng| -> Result<f64> {
        let eta = sample_poisson(window, 1.0, rng)?;
        let mut coords = pattern.coords().to_vec();
        coords.extend_from_slice(eta.coords());
        let mut tags = vec![true; pattern.len()];
        tags.resize(pattern.len() + eta.len(), false);
        let (sigma, tagged) = PointPattern::canonical_tagged(d, coords, tags);
        let q = conditional_retention(field, &sigma, &tagged, window, rng)?;
        Ok(if q == 0.0 { 0.0 } else { scale * q * base_density(&sigma) })
    });
    let mut m = Moments::default();
    let mut nonzero = 0;
    for t in terms {
        let t = t?;
        nonzero += (t != 0.0) as usize;
        m.push(t);
    }
    Ok(DensityEstimate {
        value: m.mean(),
        std_error: m.std_error(),
        replicates,
        unstable: replicates < MIN_STABLE_REPLICATES || nonzero < 10,
    })
}

/// First and second factorial moment identities of a thinning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThinningMomentReport {
    /// `E ξ_π(A)` against `E Λ(A)`.
    pub first: IdentityCheck,
    /// `E ξ_π^{[2]}(B)` against `E Λ^{[2]}(B)` for pairs in `A` within `r̄`.
    pub second: IdentityCheck,
}

/// Compares the moments of the thinned process with those of the random
/// measure `Λ = π·ξ` on a box `region`, pairing both sides per replicate.
#[allow(clippy::too_many_arguments)]
pub fn check_thinning_moments<S>(
    sampler: S,
    field: &RetentionField,
    window: &Window,
    region: &Window,
    r_bar: f64,
    norm: Norm,
    replicates: usize,
    stream: RngStream,
) -> Result<ThinningMomentReport>
where
    S: Fn(&mut ChaCha8Rng) -> PointPattern + Sync + Send,
{
    field.validate()?;
    ensure(r_bar >= 0.0, "r_bar", || format!("must be >= 0, got {r_bar}"))?;
    let rows = par::replicates(replicates, stream, |_, rng| -> Result<[f64; 4]> {
        let xi = sampler(rng);
        let probs = realize_retention(field, &xi, window, rng)?;
        let outcome = thin(&xi, &probs, rng)?;
        let inside: Vec<usize> = (0..xi.len()).filter(|&i| region.contains(xi.point(i))).collect();
        let kept_first = inside.iter().filter(|&&i| outcome.decisions[i]).count() as f64;
        let lambda_first: f64 = inside.iter().map(|&i| probs[i]).sum();
        let (mut kept_pairs, mut lambda_pairs) = (0.0, 0.0);
        for (a, &i) in inside.iter().enumerate() {
            for &j in &inside[a + 1..] {
                if norm.within(xi.point(i), xi.point(j), r_bar) {
                    kept_pairs += 2.0 * (outcome.decisions[i] && outcome.decisions[j]) as u8 as f64;
                    lambda_pairs += 2.0 * probs[i] * probs[j];
                }
            }
        }
        Ok([kept_first, lambda_first, kept_pairs, lambda_pairs])
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ThinningMomentReport {
        first: IdentityCheck::from_pairs(rows.iter().map(|r| (r[0], r[1]))),
        second: IdentityCheck::from_pairs(rows.iter().map(|r| (r[2], r[3]))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{poisson_density, Grains};

    fn pat(points: &[&[f64]]) -> PointPattern {
        PointPattern::new(points[0].len(), points.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn matern_probability_examples() {
        let window = Window::unit(2).haloed(0.1).unwrap();
        let field = RetentionField::MaternI { r: 0.1, q: 0.7, norm: Norm::Euclidean };
        let p = pat(&[&[0.5, 0.5], &[0.2, 0.2], &[0.2, 0.25], &[-0.05, 0.5]]);
        let probs = realize_retention(&field, &p, &window, &mut RngStream::new(0, 0).rng()).unwrap();
        // Canonical order: (-0.05,0.5), (0.2,0.2), (0.2,0.25), (0.5,0.5).
        assert_eq!(probs, vec![0.0, 0.0, 0.0, 0.7]);
        let bare = realize_retention(&field, &p, &Window::unit(2), &mut RngStream::new(0, 0).rng());
        assert!(matches!(bare, Err(Error::MissingHalo { .. })));
    }

    #[test]
    fn boolean_field_does_not_depend_on_pattern() {
        let model = BooleanModel::deterministic(30.0, 0.08, Norm::Euclidean).unwrap();
        let region = Window::unit(2).haloed(0.08).unwrap();
        let grains: Grains = sample_boolean_model(&model, &region, &mut RngStream::new(3, 0).rng()).unwrap();
        let a = pat(&[&[0.3, 0.3], &[0.6, 0.1], &[0.9, 0.9]]);
        let b = pat(&[&[0.3, 0.3], &[0.31, 0.3], &[0.6, 0.1], &[0.9, 0.9]]);
        let ca = grains.covered(&a);
        let cb = grains.covered(&b);
        assert_eq!(ca[0], cb[0]);
        assert_eq!(ca[1], cb[2]);
        assert_eq!(ca[2], cb[3]);
    }

    #[test]
    fn thin_extremes() {
        let p = pat(&[&[0.1], &[0.4], &[0.9]]);
        let mut rng = RngStream::new(1, 0).rng();
        assert_eq!(thin(&p, &[1.0; 3], &mut rng).unwrap().retained, p);
        assert!(thin(&p, &[0.0; 3], &mut rng).unwrap().retained.is_empty());
        assert!(thin(&p, &[0.5; 2], &mut rng).is_err());
        assert!(thin(&p, &[0.5, 1.5, 0.0], &mut rng).is_err());
    }

    #[test]
    fn exact_law_examples() {
        let one = pat(&[&[0.3]]);
        let law = exact_thinning_distribution(&one, &[0.3]).unwrap();
        assert_eq!(law.probabilities, vec![0.7, 0.3]);
        let two = pat(&[&[0.3], &[0.6]]);
        let law = exact_thinning_distribution(&two, &[0.2, 0.9]).unwrap();
        let want = [0.8 * 0.1, 0.2 * 0.1, 0.8 * 0.9, 0.2 * 0.9];
        for (got, want) in law.probabilities.iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
        let big = PointPattern::new(1, (0..21).map(|i| vec![i as f64]).collect()).unwrap();
        assert!(matches!(exact_thinning_distribution(&big, &[0.5; 21]), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn exact_law_sums_to_one() {
        let p = PointPattern::new(1, (0..12).map(|i| vec![i as f64]).collect()).unwrap();
        let probs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).fract()).collect();
        let law = exact_thinning_distribution(&p, &probs).unwrap();
        assert!((law.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matern_close_pair_deletes_everything() {
        let window = Window::unit(2).haloed(0.2).unwrap();
        let field = RetentionField::MaternI { r: 0.2, q: 1.0, norm: Norm::Euclidean };
        let p = pat(&[&[0.4, 0.4], &[0.45, 0.4]]);
        let probs = realize_retention(&field, &p, &window, &mut RngStream::new(0, 0).rng()).unwrap();
        let law = exact_thinning_distribution(&p, &probs).unwrap();
        assert_eq!(law.probability(0), 1.0);
    }

    #[test]
    fn half_thinning_of_two_points_is_uniform_over_subsets() {
        let p = pat(&[&[0.2], &[0.7]]);
        let n = 100_000;
        let masks = par::replicates(n, RngStream::new(2, 0), |_, rng| SubsetLaw::mask_of(&thin(&p, &[0.5, 0.5], rng).unwrap().decisions));
        for mask in 0..4 {
            let hits: Moments = masks.iter().map(|&m| (m == mask) as u8 as f64).collect();
            assert!(hits.estimate().gap_to(0.25) < 3.0);
        }
    }

    #[test]
    fn outcome_csv_has_retained_column() {
        let p = pat(&[&[0.2, 0.1], &[0.7, 0.3]]);
        let o = ThinningOutcome { retained: p.select(&[false, true]), parent: p, decisions: vec![false, true] };
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,x2,retained\n0.2,0.1,0\n0.7,0.3,1\n");
    }

    #[test]
    fn thinned_density_of_constant_field_is_poisson() {
        let window = Window::unit(2);
        let (lambda, p) = (2.0, 0.4);
        let base = |s: &PointPattern| poisson_density(s, lambda, &window).unwrap();
        let field = RetentionField::Constant { p };
        let rho = pat(&[&[0.3, 0.3], &[0.8, 0.1]]);
        let est = thinned_density_mc(&rho, base, &field, &window, 100_000, RngStream::new(4, 0)).unwrap();
        let want = poisson_density(&rho, p * lambda, &window).unwrap();
        assert!(!est.unstable);
        assert!(est.estimate().gap_to(want) < 3.0, "{est:?} vs {want}");

        let none = RetentionField::Constant { p: 0.0 };
        let e0 = thinned_density_mc(&PointPattern::empty(2), base, &none, &window, 20_000, RngStream::new(4, 1)).unwrap();
        assert!(e0.estimate().gap_to(1f64.exp()) < 3.0, "{e0:?}");
        let e1 = thinned_density_mc(&rho, base, &none, &window, 2000, RngStream::new(4, 2)).unwrap();
        assert_eq!(e1.value, 0.0);
        assert!(e1.unstable);

        let all = RetentionField::Constant { p: 1.0 };
        let e = thinned_density_mc(&rho, base, &all, &window, 20_000, RngStream::new(4, 3)).unwrap();
        assert!(e.estimate().gap_to(base(&rho)) < 3.0, "{e:?}");
    }

    #[test]
    fn moment_identities_hold_for_constant_and_matern_fields() {
        let window = Window::unit(2).haloed(0.05).unwrap();
        let sampler = |rng: &mut ChaCha8Rng| sample_poisson(&window, 40.0, rng).unwrap();
        let region = Window::unit(2);
        for field in [
            RetentionField::Constant { p: 0.3 },
            RetentionField::MaternI { r: 0.05, q: 0.8, norm: Norm::Euclidean },
        ] {
            let rep = check_thinning_moments(sampler, &field, &window, &region, 0.1, Norm::Euclidean, 20_000, RngStream::new(5, 0)).unwrap();
            assert!(rep.first.gap < 3.0 && rep.second.gap < 3.0, "{field:?}: {rep:?}");
        }
        let rep = check_thinning_moments(sampler, &RetentionField::Constant { p: 0.3 }, &window, &region, 0.1, Norm::Euclidean, 20_000, RngStream::new(5, 1)).unwrap();
        assert!(rep.first.lhs.gap_to(0.3 * 40.0) < 3.0);
    }
}
