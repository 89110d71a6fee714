//! Sample average approximation over a frozen sample set and the semismooth
//! Newton-CG solver on the associated normal map.
//!
//! The solver works in the normal-map variable v. At each iterate it
//! partitions cells by the 0/1 generalized derivative of the prox: inactive
//! cells enter a reduced Hessian system (H_II + alpha I) d_I = -r_I solved
//! matrix-free by conjugate gradients with negative-curvature truncation;
//! active cells get the closed-form step d_A = -(r_A + H_AI d_I)/alpha.
//! Globalization backtracks on the residual norm, with a proximal-gradient
//! fallback when the line search stalls.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{ParamVector, UniformSampler};
use crate::pde::{Discretization, SampleOperators, SampleSolution};
use crate::prox::{prox_active, prox_field, RegularizerParams};
use crate::sparse::{dot, norm2};

/// A frozen SAA problem: samples, their assembled operators, mesh-level
/// discretization, and the regularizer. Immutable and shareable.
pub struct SaaInstance {
    pub disc: Arc<Discretization>,
    pub reg: RegularizerParams,
    samples: Vec<ParamVector>,
    ops: Vec<SampleOperators>,
}

/// Per-sample solves cached at one control iterate, plus the averaged
/// gradient. Hessian products at the same control reuse the factorizations.
pub struct EvalPoint {
    pub u: Vec<f64>,
    pub gradient: Vec<f64>,
    solutions: Vec<SampleSolution>,
}

impl SaaInstance {
    pub fn new(
        disc: Arc<Discretization>,
        reg: RegularizerParams,
        samples: Vec<ParamVector>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("an SAA instance needs at least one sample"));
        }
        let ops = samples
            .par_iter()
            .enumerate()
            .map(|(i, xi)| disc.sample_operators(xi).map_err(|e| e.at_sample(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SaaInstance { disc, reg, samples, ops })
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[ParamVector] {
        &self.samples
    }

    pub fn operators(&self) -> &[SampleOperators] {
        &self.ops
    }

    pub fn num_cells(&self) -> usize {
        self.disc.num_cells()
    }

    /// Sample mean of the tracking objectives (no quadratic or nonsmooth
    /// terms). Reduction is in fixed sample order.
    pub fn objective(&self, u: &[f64]) -> Result<f64> {
        let vals = self
            .ops
            .par_iter()
            .enumerate()
            .map(|(i, ops)| self.disc.objective_sample(ops, u).map_err(|e| e.at_sample(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Solves all per-sample states and adjoints at u and averages the
    /// gradients in fixed order.
    pub fn evaluate(&self, u: &[f64]) -> Result<EvalPoint> {
        let solutions = self
            .ops
            .par_iter()
            .enumerate()
            .map(|(i, ops)| self.disc.solve_sample(ops, u).map_err(|e| e.at_sample(i)))
            .collect::<Result<Vec<_>>>()?;
        let n = solutions.len() as f64;
        let mut gradient = vec![0.0; self.num_cells()];
        for (ops, sol) in self.ops.iter().zip(&solutions) {
            let g = self.disc.grad_from_adjoint(ops, &sol.z);
            for (acc, gi) in gradient.iter_mut().zip(&g) {
                *acc += gi / n;
            }
        }
        Ok(EvalPoint { u: u.to_vec(), gradient, solutions })
    }

    pub fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.evaluate(u)?.gradient)
    }

    /// Averaged Hessian-vector product at a previously evaluated point.
    pub fn hvp_at(&self, point: &EvalPoint, w: &[f64]) -> Result<Vec<f64>> {
        let results = self
            .ops
            .par_iter()
            .zip(point.solutions.par_iter())
            .enumerate()
            .map(|(i, (ops, sol))| self.disc.hvp_with(ops, sol, w).map_err(|e| e.at_sample(i)))
            .collect::<Result<Vec<_>>>()?;
        let n = results.len() as f64;
        let mut out = vec![0.0; self.num_cells()];
        for r in &results {
            for (acc, ri) in out.iter_mut().zip(r) {
                *acc += ri / n;
            }
        }
        Ok(out)
    }

    pub fn hvp(&self, u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let point = self.evaluate(u)?;
        self.hvp_at(&point, w)
    }

    /// L2 norm of a P0 field on this mesh.
    pub fn l2_p0(&self, v: &[f64]) -> f64 {
        self.disc.norms.l2_p0(v)
    }

    /// Normal-map residual gradient(prox(v)) + alpha v together with the
    /// evaluation point at prox(v).
    fn residual_at(&self, v: &[f64]) -> Result<(Vec<f64>, EvalPoint)> {
        let u = prox_field(v, &self.reg);
        let point = self.evaluate(&u)?;
        let mut phi = point.gradient.clone();
        for (pi, vi) in phi.iter_mut().zip(v) {
            *pi += self.reg.alpha * vi;
        }
        Ok((phi, point))
    }

    /// Membership check for the compact-set bound: the H1 norm of the P1
    /// interpolant representing -(1/alpha) grad at the converged point,
    /// compared against a radius.
    pub fn compact_set_check(&self, point: &EvalPoint, radius: f64) -> (bool, f64) {
        let n = point.solutions.len() as f64;
        let mut rep = vec![0.0; self.disc.mesh.num_vertices()];
        for (ops, sol) in self.ops.iter().zip(&point.solutions) {
            let gh1 = self.disc.grad_sample_h1(&ops.xi, &sol.z);
            for (acc, gi) in rep.iter_mut().zip(&gh1) {
                *acc += gi / n;
            }
        }
        for ri in &mut rep {
            *ri *= -1.0 / self.reg.alpha;
        }
        let norm = self.disc.norms.h1_full(&rep);
        (norm <= radius, norm)
    }
}

/// Semismooth Newton controls.
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Tolerance on the L2 norm of the normal-map residual.
    pub tol: f64,
    pub max_outer: usize,
    /// Relative CG forcing term; None selects min(0.5, sqrt(residual)).
    pub forcing: Option<f64>,
    pub cg_max_iter: usize,
    pub max_halvings: usize,
    pub max_fallback: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_outer: 50,
            forcing: None,
            cg_max_iter: 500,
            max_halvings: 30,
            max_fallback: 20,
        }
    }
}

/// Per-run diagnostics of the semismooth Newton solver.
#[derive(Clone, Debug, Default)]
pub struct SolverReport {
    pub outer_iterations: usize,
    pub residual_history: Vec<f64>,
    pub cg_iterations: Vec<usize>,
    pub active_cells: Vec<usize>,
    pub fallback_steps: usize,
    pub wall_seconds: f64,
    pub converged: bool,
}

/// Result of a converged solve: the normal-map root, the critical control
/// prox(v), and diagnostics.
pub struct SolveOutcome {
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    pub report: SolverReport,
    pub point: EvalPoint,
}

/// Conjugate gradients on the reduced system, matrix-free, with truncation
/// on nonpositive curvature. Returns (solution, iterations).
fn cg_reduced(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    rhs: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = rhs.len();
    let rhs_norm = norm2(rhs);
    let mut x = vec![0.0; n];
    if rhs_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 1..=max_iter {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if pap <= 1e-14 * dot(&p, &p) {
            // Nonpositive curvature: truncate; fall back to the steepest
            // descent direction on the very first iteration.
            if it == 1 {
                return Ok((rhs.to_vec(), 1));
            }
            return Ok((x, it));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= rel_tol * rhs_norm {
            return Ok((x, it));
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok((x, max_iter))
}

/// Largest-eigenvalue estimate of the averaged Hessian by power iteration,
/// used to size the proximal-gradient fallback step.
fn estimate_hessian_norm(inst: &SaaInstance, point: &EvalPoint) -> Result<f64> {
    let cells = inst.num_cells();
    let mut v: Vec<f64> = (0..cells)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let mut lambda = 0.0f64;
    for _ in 0..15 {
        let nv = norm2(&v);
        if nv == 0.0 {
            break;
        }
        for vi in &mut v {
            *vi /= nv;
        }
        let hv = inst.hvp_at(point, &v)?;
        lambda = dot(&v, &hv).abs();
        v = hv;
    }
    Ok(lambda.max(0.0))
}

/// Semismooth Newton-CG on the normal map of the SAA problem.
pub fn solve_semismooth_newton(
    inst: &SaaInstance,
    v0: &[f64],
    opts: &SolverOptions,
) -> Result<SolveOutcome> {
    let start = Instant::now();
    let cells = inst.num_cells();
    assert_eq!(v0.len(), cells);
    let alpha = inst.reg.alpha;

    let mut v = v0.to_vec();
    let (mut phi, mut point) = inst.residual_at(&v)?;
    let mut res = inst.l2_p0(&phi);
    let mut report = SolverReport {
        residual_history: vec![res],
        ..Default::default()
    };

    for outer in 0..opts.max_outer {
        if res <= opts.tol {
            report.outer_iterations = outer;
            report.converged = true;
            report.wall_seconds = start.elapsed().as_secs_f64();
            let u = prox_field(&v, &inst.reg);
            return Ok(SolveOutcome { v, u, report, point });
        }

        // Active set from the prox derivative at v; ties go inactive.
        let active = prox_active(&v, &inst.reg);
        let inactive_ix: Vec<usize> = (0..cells).filter(|&i| active[i]).collect();
        let active_ix: Vec<usize> = (0..cells).filter(|&i| !active[i]).collect();
        report.active_cells.push(active_ix.len());

        // Reduced Newton system (H_II + alpha I) d_I = -phi_I.
        let mut d = vec![0.0; cells];
        let mut cg_iters = 0usize;
        if !inactive_ix.is_empty() {
            let rhs: Vec<f64> = inactive_ix.iter().map(|&i| -phi[i]).collect();
            let forcing = opts
                .forcing
                .unwrap_or_else(|| res.sqrt().min(0.5))
                .clamp(1e-14, 0.5);
            let apply = |w: &[f64]| -> Result<Vec<f64>> {
                let mut full = vec![0.0; cells];
                for (k, &i) in inactive_ix.iter().enumerate() {
                    full[i] = w[k];
                }
                let hw = inst.hvp_at(&point, &full)?;
                Ok(inactive_ix
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| hw[i] + alpha * w[k])
                    .collect())
            };
            let (d_i, iters) = cg_reduced(apply, &rhs, forcing, opts.cg_max_iter)?;
            cg_iters = iters;
            for (k, &i) in inactive_ix.iter().enumerate() {
                d[i] = d_i[k];
            }
        }
        // Closed-form step on the active cells, coupled to d_I through H.
        if !active_ix.is_empty() {
            let hd = if inactive_ix.is_empty() {
                vec![0.0; cells]
            } else {
                inst.hvp_at(&point, &d)?
            };
            for &i in &active_ix {
                d[i] = (-phi[i] - hd[i]) / alpha;
            }
        }
        report.cg_iterations.push(cg_iters);

        // Backtracking on the residual norm.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let v_try: Vec<f64> = v.iter().zip(&d).map(|(vi, di)| vi + step * di).collect();
            let (phi_try, point_try) = inst.residual_at(&v_try)?;
            let res_try = inst.l2_p0(&phi_try);
            if res_try <= (1.0 - 1e-4 * step) * res {
                accepted = Some((v_try, phi_try, point_try, res_try));
                break;
            }
            step *= 0.5;
        }

        if let Some((v_new, phi_new, point_new, res_new)) = accepted {
            v = v_new;
            phi = phi_new;
            point = point_new;
            res = res_new;
        } else {
            // Proximal-gradient fallback with step 1/(L_est + alpha).
            if report.fallback_steps >= opts.max_fallback {
                return Err(Error::OuterSolve {
                    reason: format!("line search stalled after {} fallback steps", opts.max_fallback),
                    history: report.residual_history.clone(),
                });
            }
            report.fallback_steps += 1;
            let l_est = estimate_hessian_norm(inst, &point)?;
            let mut t = 1.0 / (l_est + alpha);
            let mut improved = None;
            for _ in 0..8 {
                // u = prox(v); descend the smooth-part gradient + alpha u,
                // then apply prox of t*psi (threshold t*gamma, same box).
                let u_cur = prox_field(&v, &inst.reg);
                let trial: Vec<f64> = u_cur
                    .iter()
                    .zip(&point.gradient)
                    .map(|(ui, gi)| ui - t * (gi + alpha * ui))
                    .collect();
                let scaled = RegularizerParams {
                    gamma: inst.reg.gamma * t,
                    lo: inst.reg.lo,
                    hi: inst.reg.hi,
                    alpha: 1.0,
                };
                let u_next = prox_field(&trial, &scaled);
                let g_next = inst.gradient(&u_next)?;
                let v_next: Vec<f64> = g_next.iter().map(|gi| -gi / alpha).collect();
                let (phi_next, point_next) = inst.residual_at(&v_next)?;
                let res_next = inst.l2_p0(&phi_next);
                if res_next < res {
                    improved = Some((v_next, phi_next, point_next, res_next));
                    break;
                }
                t *= 0.5;
            }
            match improved {
                Some((v_new, phi_new, point_new, res_new)) => {
                    v = v_new;
                    phi = phi_new;
                    point = point_new;
                    res = res_new;
                }
                None => {
                    return Err(Error::OuterSolve {
                        reason: "proximal-gradient fallback could not reduce the residual".into(),
                        history: report.residual_history.clone(),
                    });
                }
            }
        }
        report.residual_history.push(res);
    }

    if res <= opts.tol {
        report.outer_iterations = opts.max_outer;
        report.converged = true;
        report.wall_seconds = start.elapsed().as_secs_f64();
        let u = prox_field(&v, &inst.reg);
        return Ok(SolveOutcome { v, u, report, point });
    }
    Err(Error::OuterSolve {
        reason: format!("no convergence in {} outer iterations", opts.max_outer),
        history: report.residual_history,
    })
}

/// Calibration value for the L1 weight: the sup-norm of the SAA gradient at
/// zero control with ten uniform samples on the reference mesh.
pub fn gamma_max_estimate(seed: u64) -> Result<f64> {
    let disc = Arc::new(Discretization::case_study(64)?);
    gamma_max_estimate_on(disc, seed)
}

/// Same calibration on a caller-supplied discretization (tests use coarser
/// meshes and modified data).
pub fn gamma_max_estimate_on(disc: Arc<Discretization>, seed: u64) -> Result<f64> {
    let samples = UniformSampler::new(seed).draw(10);
    let reg = RegularizerParams::without_box(0.0, 1.0)?;
    let inst = SaaInstance::new(disc, reg, samples)?;
    let grad = inst.gradient(&vec![0.0; inst.num_cells()])?;
    Ok(grad.iter().fold(0.0f64, |m, g| m.max(g.abs())))
}
