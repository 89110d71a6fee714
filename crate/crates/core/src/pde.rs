//! Per-sample semilinear state solves, adjoint solves, tracking objective,
//! control gradient, and Hessian-vector products.
//!
//! The state equation is A(xi) y + Q(y) = b(xi) + B(xi) u with a monotone
//! superposition nonlinearity Q. Newton's method with residual backtracking
//! handles the state solve; every linearized system shares the operator
//! A(xi) + Q'(y), which is SPD and solved by a banded Cholesky factorization
//! that is reused for the adjoint and for Hessian-vector products.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_bilinear_superposition_load, assemble_control_coupling, assemble_load,
    assemble_stiffness, assemble_superposition_load, Norms,
};
use crate::fields::{
    target_profile, ControlWeight, DiffusionCoefficient, ForcingTerm, ParamVector, RandomField,
};
use crate::mesh::{QuadRule, StructuredMesh};
use crate::sparse::{dot, norm2, BandCholesky, CsrMatrix};

/// Superposition nonlinearity as a (q, q', q'') triple. Only the cubic and
/// the disabled variant ship; the solver requires q nondecreasing with
/// q(0) = 0.
#[derive(Clone, Copy)]
pub struct Nonlinearity {
    pub value: fn(f64) -> f64,
    pub derivative: fn(f64) -> f64,
    pub second: fn(f64) -> f64,
    pub active: bool,
}

impl Nonlinearity {
    pub fn cubic() -> Self {
        Nonlinearity {
            value: |t| t * t * t,
            derivative: |t| 3.0 * t * t,
            second: |t| 6.0 * t,
            active: true,
        }
    }

    pub fn disabled() -> Self {
        Nonlinearity {
            value: |_| 0.0,
            derivative: |_| 0.0,
            second: |_| 0.0,
            active: false,
        }
    }
}

impl std::fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Nonlinearity").field("active", &self.active).finish()
    }
}

/// Problem data: random fields, tracking target, and nonlinearity.
#[derive(Clone)]
pub struct ProblemData {
    pub diffusion: Arc<dyn RandomField>,
    pub forcing: Arc<dyn RandomField>,
    pub control_weight: Arc<dyn RandomField>,
    pub target: Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>,
    pub nonlinearity: Nonlinearity,
}

impl ProblemData {
    /// The random-field case study with the cubic nonlinearity.
    pub fn case_study() -> Self {
        ProblemData {
            diffusion: Arc::new(DiffusionCoefficient),
            forcing: Arc::new(ForcingTerm),
            control_weight: Arc::new(ControlWeight),
            target: Arc::new(target_profile),
            nonlinearity: Nonlinearity::cubic(),
        }
    }

    /// Linear configuration (unit coefficient and weight, nonlinearity off)
    /// used by oracle tests.
    pub fn linear_unit() -> Self {
        ProblemData {
            diffusion: Arc::new(|_: [f64; 2], _: &ParamVector| 1.0),
            forcing: Arc::new(|_: [f64; 2], _: &ParamVector| 0.0),
            control_weight: Arc::new(|_: [f64; 2], _: &ParamVector| 1.0),
            target: Arc::new(target_profile),
            nonlinearity: Nonlinearity::disabled(),
        }
    }
}

/// State Newton controls.
#[derive(Clone, Copy, Debug)]
pub struct StateTolerances {
    /// Euclidean residual tolerance of the reduced nonlinear system.
    pub newton_abs: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
}

impl Default for StateTolerances {
    fn default() -> Self {
        StateTolerances { newton_abs: 1e-10, max_newton: 50, max_halvings: 30 }
    }
}

/// Mesh-level discretization of a problem: shared matrices, the target
/// projection, and solver tolerances. Immutable after construction.
pub struct Discretization {
    pub mesh: Arc<StructuredMesh>,
    pub data: ProblemData,
    pub norms: Norms,
    pub tolerances: StateTolerances,
    mass_red: CsrMatrix,
    stiff_unit_red: CsrMatrix,
    target_load_red: Vec<f64>,
    target_projection: Vec<f64>,
    /// Per-triangle positions of the 3x3 vertex couplings inside the reduced
    /// stiffness value array (usize::MAX where a vertex is on the boundary).
    /// Lets the linearized operator be rebuilt without re-sorting triplets.
    jac_scatter: Vec<[usize; 9]>,
}

impl Discretization {
    pub fn new(mesh: Arc<StructuredMesh>, data: ProblemData) -> Result<Self> {
        let norms = Norms::new(&mesh);
        let rule2 = QuadRule::degree2();
        let target = data.target.clone();
        let target_load = assemble_load(&mesh, &rule2, &mut |x| target(x))?;
        let target_load_red = mesh.reduce_vec(&target_load)?;
        let target_projection = norms.l2_projection(&mesh, &rule2, &mut |x| target(x))?;
        let mass_red = mesh.reduce_matrix(norms.mass())?;
        let stiff_unit_red = mesh.reduce_matrix(norms.stiff_unit())?;
        let position = mesh.interior_position();
        let mut jac_scatter = Vec::with_capacity(mesh.num_triangles());
        for t in 0..mesh.num_triangles() {
            let verts = mesh.triangle(t);
            let mut entry = [usize::MAX; 9];
            for a in 0..3 {
                for b in 0..3 {
                    if let (Some(ia), Some(ib)) = (position[verts[a]], position[verts[b]]) {
                        entry[3 * a + b] = stiff_unit_red
                            .entry_position(ia, ib)
                            .expect("stiffness stencil covers all vertex pairs of a triangle");
                    }
                }
            }
            jac_scatter.push(entry);
        }
        Ok(Discretization {
            mesh,
            data,
            norms,
            tolerances: StateTolerances::default(),
            mass_red,
            stiff_unit_red,
            target_load_red,
            target_projection,
            jac_scatter,
        })
    }

    pub fn case_study(n: usize) -> Result<Self> {
        Discretization::new(Arc::new(StructuredMesh::new(n)?), ProblemData::case_study())
    }

    pub fn num_cells(&self) -> usize {
        self.mesh.num_triangles()
    }

    pub fn num_interior(&self) -> usize {
        self.mesh.num_interior()
    }

    /// Quadrature L2 projection of the target onto P1.
    pub fn target_projection(&self) -> &[f64] {
        &self.target_projection
    }

    pub fn mass_reduced(&self) -> &CsrMatrix {
        &self.mass_red
    }

    pub fn stiff_unit_reduced(&self) -> &CsrMatrix {
        &self.stiff_unit_red
    }

    /// Assembles the parameter-dependent operators for one sample: reduced
    /// stiffness, control coupling, and forcing load.
    pub fn sample_operators(&self, xi: &ParamVector) -> Result<SampleOperators> {
        let rule2 = QuadRule::degree2();
        let diffusion = &self.data.diffusion;
        let stiffness = assemble_stiffness(&self.mesh, &rule2, &mut |x| diffusion.eval(x, xi))?;
        let weight = &self.data.control_weight;
        let coupling = assemble_control_coupling(&self.mesh, &rule2, &mut |x| weight.eval(x, xi))?;
        let forcing = &self.data.forcing;
        let load = assemble_load(&self.mesh, &rule2, &mut |x| forcing.eval(x, xi))?;
        Ok(SampleOperators {
            xi: xi.clone(),
            stiffness_red: self.mesh.reduce_matrix(&stiffness)?,
            coupling_red: self.mesh.reduce_rows(&coupling)?,
            load_red: self.mesh.reduce_vec(&load)?,
        })
    }

    fn q_load_red(&self, y_full: &[f64], rule4: &QuadRule) -> Result<Vec<f64>> {
        let q = self.data.nonlinearity.value;
        let full = assemble_superposition_load(&self.mesh, rule4, y_full, q);
        self.mesh.reduce_vec(&full)
    }

    /// Nonlinear residual A y + Q(y) - rhs on the interior.
    fn state_residual(
        &self,
        ops: &SampleOperators,
        y_red: &[f64],
        y_full: &[f64],
        rhs: &[f64],
        rule4: &QuadRule,
    ) -> Result<Vec<f64>> {
        let mut r = ops.stiffness_red.matvec(y_red);
        if self.data.nonlinearity.active {
            let qv = self.q_load_red(y_full, rule4)?;
            for (ri, qi) in r.iter_mut().zip(&qv) {
                *ri += qi;
            }
        }
        for (ri, bi) in r.iter_mut().zip(rhs) {
            *ri -= bi;
        }
        Ok(r)
    }

    /// Linearized state operator A + Q'(y) at a given state, factored. The
    /// superposition term is scattered into a clone of the sample stiffness
    /// values; both matrices share the mesh-determined sparsity pattern.
    pub fn linearize(&self, ops: &SampleOperators, y_full: &[f64]) -> Result<LinearizedState> {
        let mut jac_red = ops.stiffness_red.clone();
        if self.data.nonlinearity.active {
            let rule4 = QuadRule::degree4();
            let dq = self.data.nonlinearity.derivative;
            let vals = jac_red.values_mut();
            for t in 0..self.mesh.num_triangles() {
                let area = self.mesh.cell_area();
                let verts = self.mesh.triangle(t);
                let yv = [y_full[verts[0]], y_full[verts[1]], y_full[verts[2]]];
                let entries = &self.jac_scatter[t];
                for (p, w) in rule4.points.iter().zip(&rule4.weights) {
                    let yq = yv[0] * p[0] + yv[1] * p[1] + yv[2] * p[2];
                    let c = dq(yq) * area * w;
                    if c == 0.0 {
                        continue;
                    }
                    for a in 0..3 {
                        let ca = c * p[a];
                        for b in 0..3 {
                            let pos = entries[3 * a + b];
                            if pos != usize::MAX {
                                vals[pos] += ca * p[b];
                            }
                        }
                    }
                }
            }
        }
        let factor = BandCholesky::factor(&jac_red)?;
        Ok(LinearizedState { jac_red, factor })
    }

    /// Solves the semilinear state equation by damped Newton from y = 0.
    pub fn solve_state(&self, ops: &SampleOperators, u: &[f64], tol_abs: f64) -> Result<StateSolution> {
        assert_eq!(u.len(), self.num_cells());
        let rule4 = QuadRule::degree4();
        let mut rhs = ops.coupling_red.matvec(u);
        for (ri, bi) in rhs.iter_mut().zip(&ops.load_red) {
            *ri += bi;
        }

        let dim = self.num_interior();
        let mut y_red = vec![0.0; dim];
        let mut y_full = vec![0.0; self.mesh.num_vertices()];
        let mut residual = self.state_residual(ops, &y_red, &y_full, &rhs, &rule4)?;
        let mut res_norm = norm2(&residual);
        let mut history = vec![res_norm];

        let tols = self.tolerances;
        let mut iterations = 0;
        while res_norm > tol_abs {
            if iterations >= tols.max_newton {
                return Err(Error::StateSolve {
                    reason: format!("no convergence in {} Newton iterations", tols.max_newton),
                    history,
                });
            }
            let lin = self.linearize(ops, &y_full)?;
            let neg_res: Vec<f64> = residual.iter().map(|r| -r).collect();
            let step = lin.factor.solve(&neg_res);

            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..=tols.max_halvings {
                let mut y_try = y_red.clone();
                for (yi, di) in y_try.iter_mut().zip(&step) {
                    *yi += s * di;
                }
                let y_try_full = self.mesh.expand_vec(&y_try);
                let r_try = self.state_residual(ops, &y_try, &y_try_full, &rhs, &rule4)?;
                let n_try = norm2(&r_try);
                if n_try <= (1.0 - 1e-4 * s) * res_norm {
                    y_red = y_try;
                    y_full = y_try_full;
                    residual = r_try;
                    res_norm = n_try;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                return Err(Error::StateSolve {
                    reason: "line search failed to reduce the residual".to_string(),
                    history,
                });
            }
            iterations += 1;
            history.push(res_norm);
        }
        Ok(StateSolution {
            y: y_full,
            newton_iterations: iterations,
            residual: res_norm,
            residual_history: history,
        })
    }

    /// One SPD solve of (A + Q'(y)) z = target_load - M y.
    pub fn solve_adjoint(&self, lin: &LinearizedState, y_full: &[f64]) -> Result<AdjointSolution> {
        let y_red = self.mesh.reduce_vec(y_full)?;
        let my = self.mass_red.matvec(&y_red);
        let rhs: Vec<f64> = self
            .target_load_red
            .iter()
            .zip(&my)
            .map(|(t, m)| t - m)
            .collect();
        let z_red = lin.factor.solve(&rhs);
        let mut r = lin.jac_red.matvec(&z_red);
        for (ri, bi) in r.iter_mut().zip(&rhs) {
            *ri -= bi;
        }
        Ok(AdjointSolution { z: self.mesh.expand_vec(&z_red), residual: norm2(&r) })
    }

    /// Tracking objective (1/2) || y - P(target) ||_L2^2 for a state field.
    pub fn objective_from_state(&self, y_full: &[f64]) -> f64 {
        let e: Vec<f64> = y_full
            .iter()
            .zip(&self.target_projection)
            .map(|(y, p)| y - p)
            .collect();
        0.5 * dot(&e, &self.norms.mass().matvec(&e))
    }

    pub fn objective_sample(&self, ops: &SampleOperators, u: &[f64]) -> Result<f64> {
        let state = self.solve_state(ops, u, self.tolerances.newton_abs)?;
        Ok(self.objective_from_state(&state.y))
    }

    /// Piecewise-constant gradient representative: cell averages of the
    /// weighted adjoint, -B^T z / |cell|.
    pub fn grad_from_adjoint(&self, ops: &SampleOperators, z_full: &[f64]) -> Vec<f64> {
        let z_red = self
            .mesh
            .interior_vertices()
            .iter()
            .map(|&v| z_full[v])
            .collect::<Vec<_>>();
        let mut g = ops.coupling_red.matvec_transpose(&z_red);
        let inv_area = -1.0 / self.mesh.cell_area();
        for gi in &mut g {
            *gi *= inv_area;
        }
        g
    }

    /// Full per-sample pipeline: state, linearization, adjoint.
    pub fn solve_sample(&self, ops: &SampleOperators, u: &[f64]) -> Result<SampleSolution> {
        let state = self.solve_state(ops, u, self.tolerances.newton_abs)?;
        let lin = self.linearize(ops, &state.y)?;
        let adjoint = self.solve_adjoint(&lin, &state.y)?;
        Ok(SampleSolution {
            newton_iterations: state.newton_iterations,
            state_residual: state.residual,
            y: state.y,
            z: adjoint.z,
            lin,
        })
    }

    pub fn grad_sample(&self, ops: &SampleOperators, u: &[f64]) -> Result<Vec<f64>> {
        let sol = self.solve_sample(ops, u)?;
        Ok(self.grad_from_adjoint(ops, &sol.z))
    }

    /// Nodal interpolant of the weighted adjoint -g(x, xi) z(x): the H1
    /// representative of the per-sample gradient, used for diagnostics.
    pub fn grad_sample_h1(&self, xi: &ParamVector, z_full: &[f64]) -> Vec<f64> {
        let g = &self.data.control_weight;
        self.mesh
            .vertices()
            .iter()
            .zip(z_full)
            .map(|(&x, &z)| -g.eval(x, xi) * z)
            .collect()
    }

    /// Hessian-vector product of the per-sample tracking objective at the
    /// point underlying `sol`: two linearized solves against the cached
    /// factorization.
    pub fn hvp_with(&self, ops: &SampleOperators, sol: &SampleSolution, w: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(w.len(), self.num_cells());
        let bw = ops.coupling_red.matvec(w);
        let dy_red = sol.lin.factor.solve(&bw);
        let dy_full = self.mesh.expand_vec(&dy_red);

        let mut rhs: Vec<f64> = self.mass_red.matvec(&dy_red).iter().map(|v| -v).collect();
        if self.data.nonlinearity.active {
            let rule4 = QuadRule::degree4();
            let wload = assemble_bilinear_superposition_load(
                &self.mesh,
                &rule4,
                &sol.y,
                &sol.z,
                &dy_full,
                self.data.nonlinearity.second,
            );
            let wload_red = self.mesh.reduce_vec(&wload)?;
            for (ri, wi) in rhs.iter_mut().zip(&wload_red) {
                *ri -= wi;
            }
        }
        let dz_red = sol.lin.factor.solve(&rhs);
        let mut out = ops.coupling_red.matvec_transpose(&dz_red);
        let inv_area = -1.0 / self.mesh.cell_area();
        for oi in &mut out {
            *oi *= inv_area;
        }
        Ok(out)
    }

    pub fn hvp_sample(&self, ops: &SampleOperators, u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let sol = self.solve_sample(ops, u)?;
        self.hvp_with(ops, &sol, w)
    }

    /// Discrete dual-norm estimate of the forcing term via one Poisson solve
    /// with unit coefficient.
    pub fn forcing_dual_norm(&self, ops: &SampleOperators) -> Result<f64> {
        let w = BandCholesky::factor(&self.stiff_unit_red)?.solve(&ops.load_red);
        Ok(dot(&ops.load_red, &w).max(0.0).sqrt())
    }

    /// Evaluates both sides of the state stability and Lipschitz estimates
    /// for a pair of controls at one parameter, with the dual norm of the
    /// forcing estimated numerically and the supplied structural constants.
    pub fn check_stability(
        &self,
        u1: &[f64],
        u2: &[f64],
        xi: &ParamVector,
        constants: &StabilityConstants,
    ) -> Result<StabilityReport> {
        let ops = self.sample_operators(xi)?;
        let s1 = self.solve_state(&ops, u1, self.tolerances.newton_abs)?;
        let s2 = self.solve_state(&ops, u2, self.tolerances.newton_abs)?;
        let b_dual = self.forcing_dual_norm(&ops)?;
        let u1_l2 = self.norms.l2_p0(u1);
        let bound_state = b_dual / constants.kappa_min
            + constants.friedrichs / constants.kappa_min * constants.weight_c01 * u1_l2;
        let state_norm = self.norms.h1_semi(&s1.y);

        let diff: Vec<f64> = s2.y.iter().zip(&s1.y).map(|(a, b)| a - b).collect();
        let du: Vec<f64> = u2.iter().zip(u1).map(|(a, b)| a - b).collect();
        let diff_norm = self.norms.h1_semi(&diff);
        let bound_diff =
            constants.friedrichs / constants.kappa_min * constants.weight_c01 * self.norms.l2_p0(&du);

        Ok(StabilityReport {
            state_norm,
            state_bound: bound_state,
            state_ok: state_norm <= bound_state * (1.0 + 1e-9),
            lipschitz_lhs: diff_norm,
            lipschitz_rhs: bound_diff,
            lipschitz_ok: diff_norm <= bound_diff * (1.0 + 1e-9),
            forcing_dual_norm: b_dual,
        })
    }
}

/// Parameter-dependent operators for one sample, assembled once and reused
/// across Newton iterations, adjoint solves, and Hessian products.
#[derive(Clone, Debug)]
pub struct SampleOperators {
    pub xi: ParamVector,
    pub stiffness_red: CsrMatrix,
    /// Interior-vertex by cell coupling (acts on P0 coefficient vectors).
    pub coupling_red: CsrMatrix,
    pub load_red: Vec<f64>,
}

/// Converged semilinear state.
#[derive(Clone, Debug)]
pub struct StateSolution {
    /// Full P1 coefficient vector with homogeneous Dirichlet trace.
    pub y: Vec<f64>,
    pub newton_iterations: usize,
    pub residual: f64,
    /// Euclidean residual per Newton iterate, starting at the initial guess.
    pub residual_history: Vec<f64>,
}

/// Adjoint state (full P1 vector, homogeneous trace).
#[derive(Clone, Debug)]
pub struct AdjointSolution {
    pub z: Vec<f64>,
    pub residual: f64,
}

/// Factored linearized operator A + Q'(y) on the interior.
pub struct LinearizedState {
    pub jac_red: CsrMatrix,
    pub factor: BandCholesky,
}

/// Per-sample state/adjoint bundle with the factored linearization.
pub struct SampleSolution {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub newton_iterations: usize,
    pub state_residual: f64,
    pub lin: LinearizedState,
}

/// Structural constants supplied to the stability check.
#[derive(Clone, Copy, Debug)]
pub struct StabilityConstants {
    pub kappa_min: f64,
    pub friedrichs: f64,
    /// Bound (or heuristic estimate) of the Lipschitz norm of the control
    /// weight.
    pub weight_c01: f64,
}

/// Both sides of the stability and Lipschitz estimates at one parameter.
#[derive(Clone, Copy, Debug)]
pub struct StabilityReport {
    pub state_norm: f64,
    pub state_bound: f64,
    pub state_ok: bool,
    pub lipschitz_lhs: f64,
    pub lipschitz_rhs: f64,
    pub lipschitz_ok: bool,
    pub forcing_dual_norm: f64,
}
