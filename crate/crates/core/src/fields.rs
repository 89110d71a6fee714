//! The random-field case study on the unit square: a log-sine/absolute-cosine
//! diffusion coefficient, an oscillatory forcing term with a random branch
//! threshold, a control weight clipped below at one, and a piecewise-constant
//! tracking target. Parameters live in the cube [-1,1]^100.

use crate::error::{Error, Result};
use crate::rng::CounterRng;

pub const PARAM_DIM: usize = 100;

/// A point in the parameter cube [-1,1]^100.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    components: [f64; PARAM_DIM],
}

impl ParamVector {
    pub fn new(components: [f64; PARAM_DIM]) -> Result<Self> {
        for (k, c) in components.iter().enumerate() {
            if !(*c >= -1.0 && *c <= 1.0) {
                return Err(Error::invalid(format!(
                    "parameter component {} out of [-1,1]: {}",
                    k + 1,
                    c
                )));
            }
        }
        Ok(ParamVector { components })
    }

    pub fn zero() -> Self {
        ParamVector { components: [0.0; PARAM_DIM] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.components
    }

    /// 1-based component access matching the usual subscript convention.
    #[inline]
    fn c(&self, k: usize) -> f64 {
        self.components[k - 1]
    }
}

/// Scalar random field on the closed unit square.
pub trait RandomField: Send + Sync {
    fn eval(&self, x: [f64; 2], xi: &ParamVector) -> f64;
}

impl<F> RandomField for F
where
    F: Fn([f64; 2], &ParamVector) -> f64 + Send + Sync,
{
    fn eval(&self, x: [f64; 2], xi: &ParamVector) -> f64 {
        self(x, xi)
    }
}

/// Diffusion coefficient: exponential of a sine sum left of x1 = 1/2, and
/// 3/2 plus an absolute cosine sum to the right. Strictly positive.
pub struct DiffusionCoefficient;

impl RandomField for DiffusionCoefficient {
    fn eval(&self, x: [f64; 2], xi: &ParamVector) -> f64 {
        let pi = std::f64::consts::PI;
        let value = if x[0] <= 0.5 {
            let mut s = 0.0;
            for k in 1..=25 {
                let kf = k as f64;
                s += 5.0 / (2.0 * kf * kf)
                    * (4.0 * kf * xi.c(k) * pi * x[0]).sin()
                    * (4.0 * kf * pi * xi.c(25 + k) * x[1]).sin();
            }
            s.exp()
        } else {
            let mut s = 1.5;
            for k in 1..=25 {
                let kf = k as f64;
                s += (10.0 / (kf * kf) * xi.c(25 + k) * ((10.0 + xi.c(25 + k)) * x[0] * x[1]).cos()).abs();
            }
            s
        };
        debug_assert!(value > 0.0, "diffusion coefficient must stay positive");
        value
    }
}

/// Closed-form lower bound for the diffusion coefficient: the left branch is
/// at least exp(-(5/2) sum_{k<=25} k^-2) and the right branch at least 3/2.
pub fn diffusion_lower_bound() -> f64 {
    let s: f64 = (1..=25).map(|k| 1.0 / (k as f64 * k as f64)).sum();
    (-2.5 * s).exp()
}

/// Forcing term with a branch threshold at x1 = 3/4 + xi_76/2.
pub struct ForcingTerm;

impl ForcingTerm {
    /// The x1 value separating the two branches for a given parameter.
    pub fn branch_threshold(xi: &ParamVector) -> f64 {
        0.75 + xi.c(76) / 2.0
    }
}

impl RandomField for ForcingTerm {
    fn eval(&self, x: [f64; 2], xi: &ParamVector) -> f64 {
        let pi = std::f64::consts::PI;
        if x[0] <= Self::branch_threshold(xi) {
            let mut s = 1.0;
            for k in 1..=25 {
                let kf = k as f64;
                s += 5.0 / (kf * kf)
                    * xi.c(75 + k)
                    * x[0]
                    * x[1]
                    * (4.0 * pi * kf * x[0]).cos()
                    * (4.0 * pi * kf * x[1]).sin();
            }
            s
        } else {
            let mut s = 0.0;
            for k in 1..=25 {
                let kf = k as f64;
                s += 3.0 / (kf * kf)
                    * x[1]
                    * xi.c(75 + k)
                    * (3.0 * pi * x[1]).sin()
                    * (3.0 * pi * (x[0] - kf * x[1] * xi.c(75 + k) * x[1])).cos();
            }
            1.0 + s.abs()
        }
    }
}

/// Control weight, clipped below at one.
pub struct ControlWeight;

impl RandomField for ControlWeight {
    fn eval(&self, x: [f64; 2], xi: &ParamVector) -> f64 {
        let mut s = 0.0;
        for k in 1..=25 {
            let kf = k as f64;
            s += 10.0 / (kf * kf)
                * xi.c(50 + k)
                * ((4.0 + kf) * xi.c(50 + k) * x[0] * xi.c(2)).sin()
                * ((4.0 + kf) * xi.c(50 + k) * x[0] * x[1]).cos();
        }
        s.max(1.0)
    }
}

/// Tracking target: -1 on the closed square [1/4,3/4]^2, +1 elsewhere.
pub fn target_profile(x: [f64; 2]) -> f64 {
    if (0.25..=0.75).contains(&x[0]) && (0.25..=0.75).contains(&x[1]) {
        -1.0
    } else {
        1.0
    }
}

/// Seeded sampler of independent uniform parameter vectors. Counter-based:
/// identical seeds give identical streams in any evaluation order.
#[derive(Clone, Debug)]
pub struct UniformSampler {
    rng: CounterRng,
}

impl UniformSampler {
    pub fn new(seed: u64) -> Self {
        UniformSampler { rng: CounterRng::new(seed) }
    }

    pub fn draw_one(&mut self) -> ParamVector {
        let mut c = [0.0; PARAM_DIM];
        for v in &mut c {
            *v = self.rng.next_symmetric();
        }
        ParamVector { components: c }
    }

    pub fn draw(&mut self, count: usize) -> Vec<ParamVector> {
        (0..count).map(|_| self.draw_one()).collect()
    }

    /// Scalars consumed so far (advances by 100 per vector).
    pub fn position(&self) -> u64 {
        self.rng.position()
    }
}

/// Grid/random-sampling estimate of sup |field| over the closed square and
/// the parameter cube. A heuristic stand-in where no closed form exists.
pub fn estimate_sup_abs(field: &dyn RandomField, grid: usize, n_xi: usize, seed: u64) -> f64 {
    let mut sampler = UniformSampler::new(seed);
    let mut best = 0.0f64;
    let mut xis = vec![ParamVector::zero()];
    xis.extend(sampler.draw(n_xi));
    for xi in &xis {
        for i in 0..=grid {
            for j in 0..=grid {
                let x = [i as f64 / grid as f64, j as f64 / grid as f64];
                best = best.max(field.eval(x, xi).abs());
            }
        }
    }
    best
}

/// Finite-difference estimate of the spatial Lipschitz seminorm, maximized
/// over grid edges and sampled parameters.
pub fn estimate_lipschitz_x(field: &dyn RandomField, grid: usize, n_xi: usize, seed: u64) -> f64 {
    let mut sampler = UniformSampler::new(seed);
    let h = 1.0 / grid as f64;
    let mut best = 0.0f64;
    let mut xis = vec![ParamVector::zero()];
    xis.extend(sampler.draw(n_xi));
    for xi in &xis {
        for i in 0..=grid {
            for j in 0..=grid {
                let x = [i as f64 * h, j as f64 * h];
                let v = field.eval(x, xi);
                if i < grid {
                    let vr = field.eval([(i + 1) as f64 * h, x[1]], xi);
                    best = best.max((vr - v).abs() / h);
                }
                if j < grid {
                    let vu = field.eval([x[0], (j + 1) as f64 * h], xi);
                    best = best.max((vu - v).abs() / h);
                }
            }
        }
    }
    best
}

/// Grid estimate of the largest spatial L2 norm over sampled parameters.
pub fn estimate_sup_l2_x(field: &dyn RandomField, grid: usize, n_xi: usize, seed: u64) -> f64 {
    let mut sampler = UniformSampler::new(seed);
    let cell = 1.0 / (grid as f64 * grid as f64);
    let mut best = 0.0f64;
    let mut xis = vec![ParamVector::zero()];
    xis.extend(sampler.draw(n_xi));
    for xi in &xis {
        let mut acc = 0.0;
        for i in 0..grid {
            for j in 0..grid {
                // Cell midpoints.
                let x = [(i as f64 + 0.5) / grid as f64, (j as f64 + 0.5) / grid as f64];
                let v = field.eval(x, xi);
                acc += cell * v * v;
            }
        }
        best = best.max(acc.sqrt());
    }
    best
}
