//! Closed-form evaluation of the structural constants and sample-size
//! formulas: the gradient Lipschitz constant, the compact-set constants, the
//! sub-Gaussian deviation scale, the expectation and tail sample sizes, and
//! the expectation-bound curve over the sample size.
//!
//! Every input carries a provenance tag; any heuristic input marks every
//! derived output heuristic. The covering-number proportionality constant has
//! no known value and defaults to one with a mandatory warning: planner
//! outputs are bound evaluations, not certified guarantees, whenever any
//! input is heuristic.

use crate::error::{Error, Result};
use crate::fields::{
    estimate_lipschitz_x, estimate_sup_abs, estimate_sup_l2_x, ControlWeight, ForcingTerm,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    ClosedForm,
    User,
    Heuristic,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Provenance::ClosedForm => "closed-form",
            Provenance::User => "user",
            Provenance::Heuristic => "heuristic",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Provenance {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "closed-form" => Ok(Provenance::ClosedForm),
            "user" => Ok(Provenance::User),
            "heuristic" => Ok(Provenance::Heuristic),
            _ => Err(()),
        }
    }
}

/// A scalar constant with its provenance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tagged {
    pub value: f64,
    pub provenance: Provenance,
}

impl Tagged {
    pub fn closed(value: f64) -> Self {
        Tagged { value, provenance: Provenance::ClosedForm }
    }
    pub fn user(value: f64) -> Self {
        Tagged { value, provenance: Provenance::User }
    }
    pub fn heuristic(value: f64) -> Self {
        Tagged { value, provenance: Provenance::Heuristic }
    }
}

/// The scalar bundle feeding the Lipschitz, compact-set, and sample-size
/// formulas.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConstants {
    /// Coercivity lower bound of the diffusion operator.
    pub kappa_min: Tagged,
    /// Uniform dual-norm bound of the forcing term.
    pub b_max: Tagged,
    /// Uniform Lipschitz-norm bound of the control weight.
    pub g_max: Tagged,
    /// Radius of the feasible set in L2.
    pub r_ad: Tagged,
    /// Growth constants of the second derivative of the nonlinearity:
    /// |q''(t)| <= c_q + d_q |t|^{p-3}.
    pub c_q: Tagged,
    pub d_q: Tagged,
    pub growth_p: Tagged,
    /// Friedrichs constant of the domain.
    pub friedrichs: Tagged,
    /// Embedding constant of H1_0 into L^p.
    pub embedding_cp: Tagged,
    pub domain_measure: Tagged,
    /// L2 norm of the tracking target.
    pub target_norm: Tagged,
    pub alpha: Tagged,
    pub dim: u32,
    /// Covering-number proportionality constant (no published value).
    pub covering_rho: Tagged,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kappa_min", self.kappa_min),
            ("b_max", self.b_max),
            ("g_max", self.g_max),
            ("r_ad", self.r_ad),
            ("p", self.growth_p),
            ("c_d", self.friedrichs),
            ("c_p", self.embedding_cp),
            ("domain_measure", self.domain_measure),
            ("alpha", self.alpha),
        ];
        for (name, t) in positive {
            if !(t.value > 0.0) || !t.value.is_finite() {
                return Err(Error::invalid(format!("{name} must be strictly positive, got {}", t.value)));
            }
        }
        for (name, t) in [("c_q", self.c_q), ("d_q", self.d_q), ("yd_norm", self.target_norm), ("rho", self.covering_rho)] {
            if !(t.value >= 0.0) || !t.value.is_finite() {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {}", t.value)));
            }
        }
        let p = self.growth_p.value;
        match self.dim {
            2 => {
                if p <= 3.0 {
                    return Err(Error::invalid("growth exponent p must exceed 3 in dimension 2"));
                }
            }
            3 => {
                if p <= 3.0 || p > 6.0 {
                    return Err(Error::invalid("growth exponent p must lie in (3, 6] in dimension 3"));
                }
            }
            d => return Err(Error::invalid(format!("dimension {d} unsupported (2 or 3)"))),
        }
        Ok(())
    }

    /// True when any entry is heuristic; propagated to all derived outputs.
    pub fn any_heuristic(&self) -> bool {
        [
            self.kappa_min,
            self.b_max,
            self.g_max,
            self.r_ad,
            self.c_q,
            self.d_q,
            self.growth_p,
            self.friedrichs,
            self.embedding_cp,
            self.domain_measure,
            self.target_norm,
            self.alpha,
            self.covering_rho,
        ]
        .iter()
        .any(|t| t.provenance == Provenance::Heuristic)
    }

    /// All structural constants set to one; the usual starting point for
    /// hand-checked evaluations.
    pub fn all_ones(dim: u32) -> Self {
        ProblemConstants {
            kappa_min: Tagged::user(1.0),
            b_max: Tagged::user(1.0),
            g_max: Tagged::user(1.0),
            r_ad: Tagged::user(1.0),
            c_q: Tagged::user(0.0),
            d_q: Tagged::user(1.0),
            growth_p: Tagged::user(4.0),
            friedrichs: Tagged::user(1.0),
            embedding_cp: Tagged::user(1.0),
            domain_measure: Tagged::user(1.0),
            target_norm: Tagged::user(0.0),
            alpha: Tagged::user(1.0),
            dim,
            covering_rho: Tagged::user(1.0),
        }
    }
}

/// Friedrichs constant of the unit cube: 1 / (pi sqrt(d)), the reciprocal
/// square root of the smallest Dirichlet Laplacian eigenvalue d pi^2.
pub fn friedrichs_constant(dim: u32) -> Result<f64> {
    match dim {
        2 | 3 => Ok(1.0 / (std::f64::consts::PI * (dim as f64).sqrt())),
        d => Err(Error::invalid(format!("dimension {d} unsupported (2 or 3)"))),
    }
}

/// Analytic infimum of the case-study diffusion coefficient.
pub fn kappa_min_case_study() -> f64 {
    crate::fields::diffusion_lower_bound()
}

/// Upper bound for the embedding constant of H1_0 into L4 on a planar
/// domain, via the Ladyzhenskaya inequality ||v||_4^2 <= sqrt(2) ||v|| |v|_H1
/// combined with the Friedrichs inequality.
pub fn embedding_constant_p4(friedrichs: f64, dim: u32) -> Result<f64> {
    if dim != 2 {
        return Err(Error::invalid("the L4 embedding bound is implemented for dimension 2 only"));
    }
    Ok(2.0f64.powf(0.25) * friedrichs.sqrt())
}

/// Deterministic Lipschitz constant of the per-sample gradient on the
/// feasible set.
pub fn lipschitz_grad(c: &ProblemConstants) -> Result<f64> {
    c.validate()?;
    let k = c.kappa_min.value;
    let cd = c.friedrichs.value;
    let g = c.g_max.value;
    let cp = c.embedding_cp.value;
    let p = c.growth_p.value;
    let state_bound = c.b_max.value / k + 3.0 * cd / k * g * c.r_ad.value;
    let growth = c.c_q.value * c.domain_measure.value.powf((p - 3.0) / p)
        + c.d_q.value * cp.powf(p - 3.0) * state_bound.powf(p - 3.0);
    let misfit = cd * cd / (k * k) * c.b_max.value
        + cd.powi(3) / (k * k) * g * c.r_ad.value
        + cd / k * c.target_norm.value;
    let bracket = cd / (k * k) * cp.powi(3) * g * growth * misfit;
    Ok(cd * g * (cd.powi(3) / (k * k) * g + bracket))
}

/// Compact-set constants: the uniform misfit bound and the H1 radius of the
/// ball containing the normal-map roots (before division by alpha).
pub fn compact_radius(c: &ProblemConstants) -> (f64, f64) {
    let k = c.kappa_min.value;
    let cd = c.friedrichs.value;
    let misfit = cd / k * c.b_max.value + cd * cd / k * c.g_max.value * c.r_ad.value + c.target_norm.value;
    let radius = (cd + 1.0) * (cd + 1.0) * cd / k * c.g_max.value * misfit;
    (misfit, radius)
}

/// Sub-Gaussian deviation scale of the per-sample gradients:
/// 2 (C_D^2 / kappa) g_max times the misfit bound.
pub fn tau_bound(c: &ProblemConstants) -> f64 {
    let (misfit, _) = compact_radius(c);
    let cd = c.friedrichs.value;
    2.0 * cd * cd / c.kappa_min.value * c.g_max.value * misfit
}

/// Integer sample size, or the real-valued bound when it exceeds u64 range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleCount {
    Count(u64),
    Astronomical(f64),
}

impl std::fmt::Display for SampleCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SampleCount::Count(n) => write!(f, "{n}"),
            SampleCount::Astronomical(x) => write!(f, "astronomical({x:.6e})"),
        }
    }
}

/// Ceiling with a guard against float noise pushing an exact integer up.
fn ceil_guarded(x: f64) -> SampleCount {
    let y = (x - x.abs() * 1e-12).ceil();
    if y.is_finite() && y < 9.22e18 {
        SampleCount::Count(y.max(1.0) as u64)
    } else {
        SampleCount::Astronomical(x)
    }
}

/// Sample size guaranteeing the expectation bound at accuracy eps:
/// 12 ln(2) tau^2 / eps^2 * [rho (4 max(L,1) R / (alpha eps))^d + 1].
pub fn sample_size_expectation(c: &ProblemConstants, eps: f64) -> Result<SampleCount> {
    c.validate()?;
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let tau = tau_bound(c);
    let (_, radius) = compact_radius(c);
    let l = lipschitz_grad(c)?.max(1.0);
    let covering = c.covering_rho.value
        * (4.0 * l * radius / (c.alpha.value * eps)).powi(c.dim as i32);
    let bound = 12.0 * std::f64::consts::LN_2 * tau * tau / (eps * eps) * (covering + 1.0);
    Ok(ceil_guarded(bound))
}

/// Sample size guaranteeing the exponential tail bound at accuracy eps and
/// failure probability delta:
/// 48 tau^2 / eps^2 * [ln(2) rho (4 L R / (alpha eps))^d + ln(2/delta)].
pub fn sample_size_tail(c: &ProblemConstants, eps: f64, delta: f64) -> Result<SampleCount> {
    c.validate()?;
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0,1), got {delta}")));
    }
    let tau = tau_bound(c);
    let (_, radius) = compact_radius(c);
    let l = lipschitz_grad(c)?;
    let covering = std::f64::consts::LN_2
        * c.covering_rho.value
        * (4.0 * l * radius / (c.alpha.value * eps)).powi(c.dim as i32);
    let bound = 48.0 * tau * tau / (eps * eps) * (covering + (2.0 / delta).ln());
    Ok(ceil_guarded(bound))
}

/// Right side of the expectation bound on the criticality measure for a
/// given accuracy parameter eps and sample size.
fn expectation_bound_at(c: &ProblemConstants, n: f64, eps: f64) -> f64 {
    let tau = tau_bound(c);
    let (_, radius) = compact_radius(c);
    let l = match lipschitz_grad(c) {
        Ok(l) => l.max(1.0),
        Err(_) => 1.0,
    };
    let alpha = c.alpha.value;
    let covering = c.covering_rho.value * (4.0 * l * radius / (alpha * eps)).powi(c.dim as i32);
    eps / (2.0 * alpha)
        + 3.0f64.sqrt() * tau / (alpha * n.sqrt()) * (std::f64::consts::LN_2 * (covering + 1.0)).sqrt()
}

/// Best expectation bound on the criticality measure per sample size,
/// minimizing over eps on a logarithmic grid (64 points per decade, 8
/// decades centered at tau / sqrt(N)).
pub fn expectation_bound_curve(c: &ProblemConstants, n_grid: &[u64]) -> Result<Vec<f64>> {
    c.validate()?;
    if n_grid.is_empty() {
        return Err(Error::invalid("sample-size grid must be nonempty"));
    }
    let tau = tau_bound(c);
    let mut out = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let nf = n as f64;
        let center = (tau / nf.sqrt()).max(1e-300);
        let mut best = f64::INFINITY;
        let per_decade = 64;
        let decades = 8;
        let total = per_decade * decades;
        for k in 0..=total {
            let exponent = -(decades as f64) / 2.0 + k as f64 / per_decade as f64;
            let eps = center * 10f64.powf(exponent);
            let val = expectation_bound_at(c, nf, eps);
            if val < best {
                best = val;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Plan output: sample sizes, intermediate constants, provenance notes.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub eps: f64,
    pub delta: f64,
    pub n_expectation: SampleCount,
    pub n_tail: SampleCount,
    pub lipschitz: f64,
    pub misfit_bound: f64,
    pub h1_radius: f64,
    pub tau: f64,
    pub heuristic: bool,
    pub notes: Vec<String>,
}

pub fn plan(c: &ProblemConstants, eps: f64, delta: f64) -> Result<PlanResult> {
    let n_expectation = sample_size_expectation(c, eps)?;
    let n_tail = sample_size_tail(c, eps, delta)?;
    let (misfit, radius) = compact_radius(c);
    let mut notes = Vec::new();
    if c.covering_rho.provenance != Provenance::ClosedForm {
        notes.push(format!(
            "covering constant rho = {} has no published value ({}); sample sizes scale linearly with it",
            c.covering_rho.value, c.covering_rho.provenance
        ));
    }
    let heuristic = c.any_heuristic();
    if heuristic {
        notes.push(
            "heuristic inputs present: outputs are bound evaluations rather than certified guarantees"
                .to_string(),
        );
    }
    Ok(PlanResult {
        eps,
        delta,
        n_expectation,
        n_tail,
        lipschitz: lipschitz_grad(c)?,
        misfit_bound: misfit,
        h1_radius: radius,
        tau: tau_bound(c),
        heuristic,
        notes,
    })
}

impl PlanResult {
    /// Machine-readable key,value lines (losslessly round-trips through
    /// `from_csv`).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        let count = |c: &SampleCount| match c {
            SampleCount::Count(n) => format!("{n}"),
            SampleCount::Astronomical(x) => format!("astronomical:{x}"),
        };
        s.push_str(&format!("eps,{}\n", self.eps));
        s.push_str(&format!("delta,{}\n", self.delta));
        s.push_str(&format!("N_expectation,{}\n", count(&self.n_expectation)));
        s.push_str(&format!("N_tail,{}\n", count(&self.n_tail)));
        s.push_str(&format!("lipschitz,{}\n", self.lipschitz));
        s.push_str(&format!("misfit_bound,{}\n", self.misfit_bound));
        s.push_str(&format!("h1_radius,{}\n", self.h1_radius));
        s.push_str(&format!("tau,{}\n", self.tau));
        s.push_str(&format!("heuristic,{}\n", self.heuristic));
        for n in &self.notes {
            s.push_str(&format!("note,{}\n", n.replace(',', ";")));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<PlanResult> {
        let mut map = std::collections::HashMap::new();
        let mut notes = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if ln == 0 || line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(',').ok_or(Error::Parse {
                line: ln + 1,
                message: "expected key,value".into(),
            })?;
            if k == "note" {
                notes.push(v.to_string());
            } else {
                map.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| -> Result<String> {
            map.get(k).cloned().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing key {k}"),
            })
        };
        let parse_f = |k: &str| -> Result<f64> {
            get(k)?.parse::<f64>().map_err(|e| Error::Parse {
                line: 0,
                message: format!("bad float for {k}: {e}"),
            })
        };
        let parse_count = |k: &str| -> Result<SampleCount> {
            let v = get(k)?;
            if let Some(rest) = v.strip_prefix("astronomical:") {
                Ok(SampleCount::Astronomical(rest.parse().map_err(|e| Error::Parse {
                    line: 0,
                    message: format!("bad value for {k}: {e}"),
                })?))
            } else {
                Ok(SampleCount::Count(v.parse().map_err(|e| Error::Parse {
                    line: 0,
                    message: format!("bad value for {k}: {e}"),
                })?))
            }
        };
        Ok(PlanResult {
            eps: parse_f("eps")?,
            delta: parse_f("delta")?,
            n_expectation: parse_count("N_expectation")?,
            n_tail: parse_count("N_tail")?,
            lipschitz: parse_f("lipschitz")?,
            misfit_bound: parse_f("misfit_bound")?,
            h1_radius: parse_f("h1_radius")?,
            tau: parse_f("tau")?,
            heuristic: get("heuristic")? == "true",
            notes,
        })
    }
}

/// Seed for the deterministic heuristic grid estimates of the case study.
pub const CASE_STUDY_ESTIMATE_SEED: u64 = 0xC0FFEE;


/// Case-study constants: closed forms where available, seeded grid estimates
/// (inflated by 1.1 and tagged heuristic) for the field bounds.
pub fn case_study_constants(alpha: f64) -> Result<ProblemConstants> {
    let cd = friedrichs_constant(2)?;
    let grid = 64;
    let n_xi = 64;
    let g = ControlWeight;
    let g_sup = estimate_sup_abs(&g, grid, n_xi, CASE_STUDY_ESTIMATE_SEED);
    let g_lip = estimate_lipschitz_x(&g, grid, n_xi, CASE_STUDY_ESTIMATE_SEED + 1);
    let b = ForcingTerm;
    let b_l2 = estimate_sup_l2_x(&b, grid, n_xi, CASE_STUDY_ESTIMATE_SEED + 2);
    let c = ProblemConstants {
        kappa_min: Tagged::closed(kappa_min_case_study()),
        // Dual norm bounded through the L2 norm and the Friedrichs constant.
        b_max: Tagged::heuristic(1.1 * cd * b_l2),
        g_max: Tagged::heuristic(1.1 * (g_sup + g_lip)),
        // |u| <= 10 on a unit-measure domain.
        r_ad: Tagged::closed(10.0),
        // q(t) = t^3: |q''(t)| = 6|t|, so c_q = 0, d_q = 6, p = 4.
        c_q: Tagged::closed(0.0),
        d_q: Tagged::closed(6.0),
        growth_p: Tagged::closed(4.0),
        friedrichs: Tagged::closed(cd),
        embedding_cp: Tagged::closed(embedding_constant_p4(cd, 2)?),
        domain_measure: Tagged::closed(1.0),
        // |y_d| = 1 everywhere on a unit-measure domain.
        target_norm: Tagged::closed(1.0),
        alpha: Tagged::user(alpha),
        dim: 2,
        covering_rho: Tagged::heuristic(1.0),
    };
    c.validate()?;
    Ok(c)
}
