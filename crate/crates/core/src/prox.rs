//! Proximity operator of (gamma |.|_L1 + box indicator) / alpha, the normal
//! map residual built from it, and the associated criticality measure.
//!
//! For a box containing zero the proximity operator factors into soft
//! shrinkage followed by clamping; cellwise application is exact because the
//! piecewise-constant L2 inner product is diagonal.

use crate::error::{Error, Result};

/// Weights of the nonsmooth term and the quadratic regularizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerParams {
    pub gamma: f64,
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
}

/// Sentinel bounds for the "no box" configuration; one code path serves both.
pub const NO_BOX: f64 = 1e300;

impl RegularizerParams {
    pub fn new(gamma: f64, lo: f64, hi: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !(gamma >= 0.0) {
            return Err(Error::invalid(format!("gamma must be nonnegative, got {gamma}")));
        }
        if !(lo <= 0.0 && hi >= 0.0) {
            return Err(Error::invalid(format!(
                "the box [{lo}, {hi}] must contain zero for the shrink-then-clamp composition"
            )));
        }
        Ok(RegularizerParams { gamma, lo, hi, alpha })
    }

    pub fn without_box(gamma: f64, alpha: f64) -> Result<Self> {
        Self::new(gamma, -NO_BOX, NO_BOX, alpha)
    }

    /// Shrinkage threshold gamma / alpha.
    pub fn threshold(&self) -> f64 {
        self.gamma / self.alpha
    }
}

#[inline]
fn soft_shrink(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// prox of (t |.| + box indicator) at v: clamp(soft_shrink(v, t), lo, hi).
/// Requires lo <= 0 <= hi.
pub fn prox_scalar(v: f64, threshold: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(threshold >= 0.0 && lo <= 0.0 && hi >= 0.0);
    soft_shrink(v, threshold).clamp(lo, hi)
}

/// Cellwise proximity operator of psi / alpha.
pub fn prox_field(v: &[f64], p: &RegularizerParams) -> Vec<f64> {
    let t = p.threshold();
    v.iter().map(|&vi| prox_scalar(vi, t, p.lo, p.hi)).collect()
}

/// Elementwise generalized derivative of the prox: true where the shrunk
/// value moves with v (|v| > threshold and strictly inside the box). Ties are
/// deterministically assigned to the inactive (false) branch.
pub fn prox_active(v: &[f64], p: &RegularizerParams) -> Vec<bool> {
    let t = p.threshold();
    v.iter()
        .map(|&vi| {
            let s = soft_shrink(vi, t);
            vi.abs() > t && s > p.lo && s < p.hi
        })
        .collect()
}

/// Normal-map residual: gradient(prox(v)) + alpha v.
pub fn normal_map_residual(
    v: &[f64],
    gradient_at: impl FnOnce(&[f64]) -> Result<Vec<f64>>,
    p: &RegularizerParams,
) -> Result<Vec<f64>> {
    let u = prox_field(v, p);
    let mut g = gradient_at(&u)?;
    for (gi, vi) in g.iter_mut().zip(v) {
        *gi += p.alpha * vi;
    }
    Ok(g)
}

/// Criticality measure: the L2 distance between u and the prox of its scaled
/// negative gradient; zero exactly at critical points.
pub fn criticality(
    u: &[f64],
    gradient_at: impl FnOnce(&[f64]) -> Result<Vec<f64>>,
    p: &RegularizerParams,
    cell_area: f64,
) -> Result<f64> {
    let g = gradient_at(u)?;
    let step: Vec<f64> = g.iter().map(|&gi| -gi / p.alpha).collect();
    let pu = prox_field(&step, p);
    let mut acc = 0.0;
    for (ui, pi) in u.iter().zip(&pu) {
        let d = ui - pi;
        acc += d * d;
    }
    Ok((cell_area * acc).sqrt())
}
