//! Poisson-approximation bounds in total variation and `d2`.
//!
//! Every bound is reported as three nonnegative terms: the basic term
//! `(EΛ)²(N)`, the strong-dependence term `EΛ^{[2]}(N)`, and the weak-dependence
//! term `∫β̆ + 2∫γ̆`. The Stein factors `M1`, `M2` weight them in `d2`.

use crate::error::{ensure, Error, Result};
use crate::quad::DEFAULT_TOL;
use crate::simulate::BooleanModel;
use crate::space::{integrate_over_shell, intersection_ball_volume, union_ball_volume, Norm, Window};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Itemized bound with totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub basic_term: f64,
    pub strong_dependence_term: f64,
    /// `∫β̆ + 2∫γ̆`.
    pub weak_dependence_term: f64,
    pub beta_integral: f64,
    pub gamma_integral: f64,
    pub m1: f64,
    pub m2: f64,
    pub total_tv: f64,
    pub total_d2: f64,
    /// `|μ^{(π)}| = EΛ(𝒳)`.
    pub total_mass: f64,
    /// A looser closed form of the total variation bound, where one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub looser_total_tv: Option<f64>,
    /// Which construction produced the bound.
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl BoundReport {
    /// A total-variation bound of at least 1 says nothing.
    pub fn is_informative(&self) -> bool {
        self.total_tv < 1.0
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self> {
        serde_json::from_reader(r).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn nonnegative(name: &'static str, v: f64) -> Result<()> {
    ensure(v.is_finite() && v >= 0.0, name, || format!("must be finite and >= 0, got {v}"))
}

/// `M1(μ) = min(1, 1.647 / √|μ|)`.
pub fn m1_factor(total_mass: f64) -> Result<f64> {
    nonnegative("total_mass", total_mass)?;
    if total_mass == 0.0 {
        return Ok(1.0);
    }
    Ok((1.647 / total_mass.sqrt()).min(1.0))
}

/// `M2(μ) = min(1, 11/(6|μ|) (1 + 2 log⁺(6|μ|/11)))`.
pub fn m2_factor(total_mass: f64) -> Result<f64> {
    nonnegative("total_mass", total_mass)?;
    if total_mass == 0.0 {
        return Ok(1.0);
    }
    let log_plus = (6.0 * total_mass / 11.0).ln().max(0.0);
    Ok((11.0 / (6.0 * total_mass) * (1.0 + 2.0 * log_plus)).min(1.0))
}

/// Combines the terms into both totals:
/// `tv = basic + strong + β + 2γ`, `d2 = M2 (basic + strong) + M1 (β + 2γ)`.
pub fn assemble_main_bound(basic: f64, strong: f64, beta_integral: f64, gamma_integral: f64, total_mass: f64) -> Result<BoundReport> {
    nonnegative("basic", basic)?;
    nonnegative("strong", strong)?;
    nonnegative("beta_integral", beta_integral)?;
    nonnegative("gamma_integral", gamma_integral)?;
    let m1 = m1_factor(total_mass)?;
    let m2 = m2_factor(total_mass)?;
    let weak = beta_integral + 2.0 * gamma_integral;
    Ok(BoundReport {
        basic_term: basic,
        strong_dependence_term: strong,
        weak_dependence_term: weak,
        beta_integral,
        gamma_integral,
        m1,
        m2,
        total_tv: basic + strong + weak,
        total_d2: m2 * (basic + strong) + m1 * weak,
        total_mass,
        looser_total_tv: None,
        provenance: "main".into(),
        config_hash: None,
    })
}

fn with_provenance(mut r: BoundReport, tag: &str, looser: Option<f64>) -> BoundReport {
    r.provenance = tag.into();
    r.looser_total_tv = looser;
    r
}

/// Second reduced moment measure `𝒦` of a stationary ground process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReducedMoment {
    /// `𝒦 = Leb^D`, as for a Poisson process.
    Lebesgue,
    /// Isotropic `𝒦` given by `K(r_i) = 𝒦(𝔹(0, r_i))` on an increasing grid
    /// (`K(0) = 0` is implied).
    Tabulated { r: Vec<f64>, k: Vec<f64> },
}

impl ReducedMoment {
    fn validate(&self) -> Result<()> {
        if let ReducedMoment::Tabulated { r, k } = self {
            if r.len() != k.len() {
                return Err(Error::LengthMismatch(r.len(), k.len()));
            }
            ensure(!r.is_empty(), "K", || "table must not be empty".into())?;
            ensure(r.windows(2).all(|w| w[0] < w[1]) && r[0] > 0.0, "K", || "radii must be positive and increasing".into())?;
            ensure(k.windows(2).all(|w| w[0] <= w[1]) && k[0] >= 0.0, "K", || "values must be nonnegative and nondecreasing".into())?;
        }
        Ok(())
    }

    /// `K(ρ) = 𝒦(𝔹(0, ρ))`; tables must reach `ρ`.
    pub fn k_of(&self, norm: Norm, d: usize, rho: f64) -> Result<f64> {
        self.validate()?;
        match self {
            ReducedMoment::Lebesgue => Ok(norm.unit_ball_volume(d) * rho.powi(d as i32)),
            ReducedMoment::Tabulated { r, k } => {
                let i = r.partition_point(|&x| x < rho - 1e-12 * rho);
                ensure(i < r.len(), "K", || format!("table ends at {} before radius {rho}", r[r.len() - 1]))?;
                Ok(k[i])
            }
        }
    }

    /// `∫_{𝔹(0,ρ)} g(‖y‖) 𝒦(dy)` for a nonincreasing profile `g`. Tables use
    /// left-endpoint Stieltjes sums, which over-estimate the integral.
    fn integrate_radial(&self, norm: Norm, d: usize, rho: f64, g: impl Fn(&[f64]) -> f64, breaks: &[f64]) -> Result<f64> {
        self.validate()?;
        match self {
            ReducedMoment::Lebesgue => Ok(integrate_over_shell(norm, d, 0.0, rho, g, breaks, DEFAULT_TOL)),
            ReducedMoment::Tabulated { r, k } => {
                let _ = self.k_of(norm, d, rho)?;
                let mut total = 0.0;
                let (mut r_prev, mut k_prev) = (0.0, 0.0);
                for (&ri, &ki) in r.iter().zip(k) {
                    if r_prev >= rho {
                        break;
                    }
                    let mut y = vec![0.0; d];
                    y[0] = r_prev;
                    total += g(&y) * (ki - k_prev);
                    r_prev = ri;
                    k_prev = ki;
                }
                Ok(total)
            }
        }
    }
}

/// First and second moments of the ground process for the Boolean-cover bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundMoments {
    /// Second-order stationary with intensity `m1` and reduced moment measure `𝒦`.
    /// The basic term uses the exact `μ1²(N_r̄(𝒳))` of the box window; the
    /// strong term uses `m1² |𝒳| ∫_{𝔹(0,r̄)} … 𝒦(dy)`.
    Stationary { m1: f64, k: ReducedMoment },
    /// Moments from simulation: `μ1(𝒳)`, `μ1²(N_r̄(𝒳))`, and the displacements
    /// `x̃ − x` of all ordered close pairs pooled over `replicates` patterns.
    Empirical {
        mu1_mass: f64,
        mu1_product_mass: f64,
        displacements: Vec<Vec<f64>>,
        replicates: usize,
    },
}

/// Inputs for the Boolean-cover bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BooleanBoundInput {
    pub window: Window,
    pub moments: GroundMoments,
    pub model: BooleanModel,
    pub q: f64,
    pub r_bar: f64,
    /// `β^{(sup)}_{r̄}`; zero for a Poisson ground process.
    pub beta_sup: f64,
}

fn radius_breaks(model: &BooleanModel) -> Vec<f64> {
    model.radius.atoms().iter().filter(|a| a.1 > 0.0).map(|a| 2.0 * a.0).collect()
}

fn b_value(model: &BooleanModel, y: &[f64]) -> f64 {
    let d = y.len();
    let denom = model.mean_grain_volume(d);
    let inter: f64 = model
        .radius
        .atoms()
        .iter()
        .filter(|a| a.1 > 0.0 && a.0 > 0.0)
        .map(|(r, p)| p * intersection_ball_volume(model.norm, y, *r).expect("validated radius").value)
        .sum();
    ((denom - inter) / denom).clamp(0.0, 1.0)
}

fn require_closed_form_geometry(norm: Norm, d: usize) -> Result<()> {
    ensure(norm == Norm::Sup || d <= 3, "dimension", || {
        format!("quadrature of Euclidean overlaps needs D <= 3, got {d}")
    })
}

/// Boolean-cover bound: `q² e^{−2 l1 α r^D} μ1²(N_r̄)`,
/// `q² ∫_{N_r̄} e^{−l1 (1+b(x̃−x)) α r^D} dμ_{[2]}`, and
/// `2 q e^{−l1 α r^D} |𝒳| β^{(sup)}`, with `α r^D = E|𝔹(0,R)|`.
pub fn bound_boolean(input: &BooleanBoundInput) -> Result<BoundReport> {
    let BooleanBoundInput { window, moments, model, q, r_bar, beta_sup } = input;
    model.validate()?;
    ensure((0.0..=1.0).contains(q), "q", || format!("must lie in [0, 1], got {q}"))?;
    nonnegative("beta_sup", *beta_sup)?;
    let rsup = model.radius.sup();
    ensure(*r_bar >= 2.0 * rsup, "r_bar", || format!("must be at least 2‖R‖∞ = {}, got {r_bar}", 2.0 * rsup))?;
    let d = window.dim();
    let vol = window.volume();
    let grain = model.mean_grain_volume(d);
    let vacancy = (-model.intensity * grain).exp();
    let pair_weight = |y: &[f64]| -> f64 {
        if grain == 0.0 {
            1.0
        } else {
            (-model.intensity * (1.0 + b_value(model, y)) * grain).exp()
        }
    };
    let (mu1_mass, product_mass, pair_integral) = match moments {
        GroundMoments::Stationary { m1, k } => {
            nonnegative("m1", *m1)?;
            if *q == 0.0 || *m1 == 0.0 {
                (m1 * vol, 0.0, 0.0)
            } else {
                require_closed_form_geometry(model.norm, d)?;
                let integral = k.integrate_radial(model.norm, d, *r_bar, pair_weight, &radius_breaks(model))?;
                (m1 * vol, m1 * m1 * window.pair_volume(model.norm, *r_bar), m1 * m1 * vol * integral)
            }
        }
        GroundMoments::Empirical { mu1_mass, mu1_product_mass, displacements, replicates } => {
            nonnegative("mu1_mass", *mu1_mass)?;
            nonnegative("mu1_product_mass", *mu1_product_mass)?;
            ensure(*replicates > 0, "replicates", || "must be positive".into())?;
            let mut sum = 0.0;
            for y in displacements {
                if y.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: y.len() });
                }
                if model.norm.norm(y) <= *r_bar {
                    sum += pair_weight(y);
                }
            }
            (*mu1_mass, *mu1_product_mass, sum / *replicates as f64)
        }
    };
    let basic = q * q * vacancy * vacancy * product_mass;
    let strong = q * q * pair_integral;
    let beta = 2.0 * q * vacancy * vol * beta_sup;
    let report = assemble_main_bound(basic, strong, beta, 0.0, q * vacancy * mu1_mass)?;
    Ok(with_provenance(report, "boolean-cover", None))
}

/// `r_n = ((1/(l1 α_D)) log(q_n n^D))^{1/D}`.
pub fn contracted_radius(l1: f64, q_n: f64, n: f64, d: usize, norm: Norm) -> Result<f64> {
    ensure(l1 > 0.0, "l1", || format!("must be > 0, got {l1}"))?;
    check_qn(q_n, n, d)?;
    let arg = (q_n * n.powi(d as i32)).ln().max(0.0);
    Ok((arg / (l1 * norm.unit_ball_volume(d))).powf(1.0 / d as f64))
}

fn check_qn(q_n: f64, n: f64, d: usize) -> Result<()> {
    ensure(n >= 1.0, "n", || format!("must be >= 1, got {n}"))?;
    let lo = n.powi(-(d as i32));
    ensure(q_n >= lo * (1.0 - 1e-12) && q_n <= 1.0, "q_n", || format!("must lie in [n^-D, 1] = [{lo}, 1], got {q_n}"))
}

/// Inputs for the bound on the contracted Boolean-cover thinning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractedBooleanInput {
    /// The target window `J`.
    pub window: Window,
    pub n: f64,
    pub q_n: f64,
    /// Grain model whose moment radius must equal the contracted radius `r_n`.
    pub model: BooleanModel,
    pub r_bar: f64,
    pub m1: f64,
    pub k: ReducedMoment,
    pub beta_sup: f64,
}

/// Bound on the contracted thinning against `Po(m1 Leb|J)`:
/// `m1² |J| α (r̄/n)^D + m1² |J| q_n ∫_{𝔹(0,r̄)} (q_n n^D)^{−b(y)} 𝒦(dy) + 2|J| β^{(sup)}`.
/// The looser closed form replaces the integral by `K(r̄)`.
pub fn bound_boolean_contracted(input: &ContractedBooleanInput) -> Result<BoundReport> {
    let ContractedBooleanInput { window, n, q_n, model, r_bar, m1, k, beta_sup } = input;
    model.validate()?;
    nonnegative("m1", *m1)?;
    nonnegative("beta_sup", *beta_sup)?;
    let d = window.dim();
    check_qn(*q_n, *n, d)?;
    let r_n = contracted_radius(model.intensity, *q_n, *n, d, model.norm)?;
    let moment = model.moment_radius(d);
    ensure((moment - r_n).abs() <= 1e-9 * r_n.max(1e-300) || (r_n == 0.0 && moment == 0.0), "radius_law", || {
        format!("moment radius {moment} differs from the contracted radius {r_n}")
    })?;
    let rsup = model.radius.sup();
    ensure(*r_bar >= 2.0 * rsup, "r_bar", || format!("must be at least 2‖R‖∞ = {}, got {r_bar}", 2.0 * rsup))?;
    let j = window.volume();
    let alpha = model.norm.unit_ball_volume(d);
    let base = q_n * n.powi(d as i32);
    let k_total = k.k_of(model.norm, d, *r_bar)?;
    let integral = if base <= 1.0 || r_n == 0.0 {
        // The integrand is 1 when q_n n^D = 1.
        k_total
    } else {
        require_closed_form_geometry(model.norm, d)?;
        let ln_base = base.ln();
        k.integrate_radial(model.norm, d, *r_bar, |y| (-b_value(model, y) * ln_base).exp(), &radius_breaks(model))?
    };
    let basic = m1 * m1 * j * alpha * (r_bar / n).powi(d as i32);
    let strong = m1 * m1 * j * q_n * integral;
    let beta = 2.0 * j * beta_sup;
    let looser = basic + m1 * m1 * j * q_n * k_total + beta;
    let report = assemble_main_bound(basic, strong, beta, 0.0, m1 * j)?;
    Ok(with_provenance(report, "boolean-cover-contracted", Some(looser)))
}

/// `∫_{B} (1 − G_{2,y}(r)) 𝒦(dy)` over the shell `B = 𝔹(0,2r) ∖ 𝔹(0,r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairIntegral {
    Value { value: f64 },
    /// Cells of the shell: `1 − G_{2,y_i}(r)` at a point of cell `i` and the
    /// `𝒦` mass of that cell.
    Weighted { one_minus_g2: Vec<f64>, weights: Vec<f64> },
}

impl PairIntegral {
    pub fn value(&self) -> Result<f64> {
        match self {
            PairIntegral::Value { value } => {
                nonnegative("pair_integral", *value)?;
                Ok(*value)
            }
            PairIntegral::Weighted { one_minus_g2, weights } => {
                if one_minus_g2.len() != weights.len() {
                    return Err(Error::LengthMismatch(one_minus_g2.len(), weights.len()));
                }
                for (&g, &w) in one_minus_g2.iter().zip(weights) {
                    ensure((0.0..=1.0).contains(&g), "one_minus_g2", || format!("must lie in [0, 1], got {g}"))?;
                    nonnegative("weights", w)?;
                }
                Ok(one_minus_g2.iter().zip(weights).map(|(g, w)| g * w).sum())
            }
        }
    }
}

/// Inputs for the Matérn I bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaternBoundInput {
    /// `|𝒳|`, the inner window volume.
    pub volume: f64,
    pub dim: usize,
    #[serde(default)]
    pub norm: Norm,
    pub m1: f64,
    pub q: f64,
    pub r: f64,
    /// `G(r)`.
    pub g_r: f64,
    pub pair_integral: PairIntegral,
    /// Conditional-density term; zero for a Poisson ground process, and
    /// `m1 |𝒳| q (1 − G(r)) M` under a uniform bound `M`.
    pub last_term: f64,
}

/// Matérn I bound: `m1² |𝒳| 2^D α r^D q² (1 − G(r))²`,
/// `m1² |𝒳| q² ∫ (1 − G_{2,y}(r)) 𝒦(dy)`, and the conditional-density term,
/// with `|μ^{(π)}| = m1 q (1 − G(r)) |𝒳|`.
pub fn bound_matern(input: &MaternBoundInput) -> Result<BoundReport> {
    let MaternBoundInput { volume, dim, norm, m1, q, r, g_r, pair_integral, last_term } = input;
    nonnegative("volume", *volume)?;
    nonnegative("m1", *m1)?;
    nonnegative("r", *r)?;
    nonnegative("last_term", *last_term)?;
    ensure(*dim >= 1, "dim", || "must be >= 1".into())?;
    ensure((0.0..=1.0).contains(q), "q", || format!("must lie in [0, 1], got {q}"))?;
    ensure((0.0..=1.0).contains(g_r), "G(r)", || format!("must lie in [0, 1], got {g_r}"))?;
    let alpha = norm.unit_ball_volume(*dim);
    let survive = 1.0 - g_r;
    let basic = m1 * m1 * volume * 2f64.powi(*dim as i32) * alpha * r.powi(*dim as i32) * q * q * survive * survive;
    let strong = m1 * m1 * volume * q * q * pair_integral.value()?;
    let report = assemble_main_bound(basic, strong, *last_term, 0.0, m1 * q * survive * volume)?;
    Ok(with_provenance(report, "matern-i", None))
}

/// `∫_{𝔹(0,2r) ∖ 𝔹(0,r)} e^{−m1 |𝔹(0,r) ∪ 𝔹(y,r)|} dy`.
pub fn matern_poisson_pair_integral(m1: f64, r: f64, d: usize, norm: Norm) -> Result<f64> {
    nonnegative("m1", m1)?;
    nonnegative("r", r)?;
    require_closed_form_geometry(norm, d)?;
    if r == 0.0 {
        return Ok(0.0);
    }
    let f = |y: &[f64]| (-m1 * union_ball_volume(norm, y, r).expect("validated radius").value).exp();
    Ok(integrate_over_shell(norm, d, r, 2.0 * r, f, &[], DEFAULT_TOL))
}

/// Matérn I thinning of a Poisson process with `q = 1`, against
/// `Po(l1 Leb|𝒳)` with `l1 = m1 e^{−m1 α r^D}`. The report holds the integral
/// form; `looser_total_tv` holds `|𝒳| 2^D α r^D l1² (1 + e^{m1 α r^D / 2})`.
pub fn bound_matern_poisson(volume: f64, m1: f64, r: f64, d: usize, norm: Norm) -> Result<BoundReport> {
    nonnegative("volume", volume)?;
    nonnegative("m1", m1)?;
    ensure(r > 0.0 && r.is_finite(), "r", || format!("must be > 0, got {r}"))?;
    let ball = norm.unit_ball_volume(d) * r.powi(d as i32);
    let l1 = m1 * (-m1 * ball).exp();
    let basic = volume * 2f64.powi(d as i32) * ball * l1 * l1;
    let strong = if m1 == 0.0 { 0.0 } else { m1 * m1 * volume * matern_poisson_pair_integral(m1, r, d, norm)? };
    let looser = basic * (1.0 + (0.5 * m1 * ball).exp());
    let report = assemble_main_bound(basic, strong, 0.0, 0.0, l1 * volume)?;
    Ok(with_provenance(report, "matern-i-poisson", Some(looser)))
}

/// Uniform bound for the Strauss conditional-density ratio, `max(1, κ e^{λ−1} − 1)`.
pub fn strauss_m_bound(lambda: f64, kappa: f64) -> Result<f64> {
    strauss_m_bound_window(lambda, kappa, 1.0)
}

/// `max(1, κ e^{(λ−1)·vol} − 1)`: the same bound when the reference process
/// lives on a window of volume `vol`. Agrees with [`strauss_m_bound`] at `vol = 1`.
pub fn strauss_m_bound_window(lambda: f64, kappa: f64, volume: f64) -> Result<f64> {
    ensure(lambda > 0.0, "lambda", || format!("must be > 0, got {lambda}"))?;
    ensure(kappa > 0.0 && kappa.is_finite(), "kappa", || format!("must be > 0, got {kappa}"))?;
    nonnegative("volume", volume)?;
    Ok((kappa * ((lambda - 1.0) * volume).exp() - 1.0).max(1.0))
}
