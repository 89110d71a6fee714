//! P1/P0 finite element assembly on structured triangulations.
//!
//! States are continuous piecewise linear (one coefficient per vertex,
//! homogeneous Dirichlet data handled by row/column reduction); controls are
//! piecewise constant (one coefficient per triangle). Coefficient, load, and
//! coupling terms use the degree-2 rule; the cubic nonlinearity uses the
//! degree-4 rule so its quartic integrands are integrated exactly.

use crate::error::{Error, Result};
use crate::mesh::{QuadRule, StructuredMesh};
use crate::sparse::{cg_solve, CsrMatrix, CG_DEFAULT_MAX_ITER, CG_DEFAULT_TOL};

/// Gradients of the three barycentric basis functions on a triangle, plus its
/// area. Gradients are constant per triangle.
fn p1_gradients(coords: &[[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let [p0, p1, p2] = coords;
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let area = 0.5 * det;
    let g = [
        [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
        [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
        [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
    ];
    (g, area)
}

fn quad_point(coords: &[[f64; 2]; 3], bary: &[f64; 3]) -> [f64; 2] {
    [
        bary[0] * coords[0][0] + bary[1] * coords[1][0] + bary[2] * coords[2][0],
        bary[0] * coords[0][1] + bary[1] * coords[1][1] + bary[2] * coords[2][1],
    ]
}

/// P1 stiffness matrix with a spatially varying coefficient sampled at the
/// quadrature points of `rule`. Aborts if the coefficient evaluates to a
/// non-finite value, reporting the location.
pub fn assemble_stiffness(
    mesh: &StructuredMesh,
    rule: &QuadRule,
    coeff: &mut dyn FnMut([f64; 2]) -> f64,
) -> Result<CsrMatrix> {
    let nv = mesh.num_vertices();
    let mut triplets = Vec::with_capacity(mesh.num_triangles() * 9);
    for t in 0..mesh.num_triangles() {
        let coords = mesh.triangle_coords(t);
        let (grads, area) = p1_gradients(&coords);
        let mut cbar = 0.0;
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let x = quad_point(&coords, p);
            let c = coeff(x);
            if !c.is_finite() {
                return Err(Error::NonFiniteCoefficient { x: x[0], y: x[1], value: c });
            }
            cbar += w * c;
        }
        let verts = mesh.triangle(t);
        for a in 0..3 {
            for b in 0..3 {
                let k = cbar * area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                triplets.push((verts[a], verts[b], k));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(nv, nv, &triplets))
}

/// Consistent P1 mass matrix (closed form, exact for quadratics).
pub fn assemble_mass_p1(mesh: &StructuredMesh) -> CsrMatrix {
    let nv = mesh.num_vertices();
    let mut triplets = Vec::with_capacity(mesh.num_triangles() * 9);
    for t in 0..mesh.num_triangles() {
        let area = mesh.signed_area(t);
        let verts = mesh.triangle(t);
        for a in 0..3 {
            for b in 0..3 {
                let m = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                triplets.push((verts[a], verts[b], m));
            }
        }
    }
    CsrMatrix::from_triplets(nv, nv, &triplets)
}

/// Rectangular coupling matrix taking P0 coefficients to the P1 load of
/// ∫ g·u·v, assembled with `rule`. Rows are vertices, columns are triangles.
pub fn assemble_control_coupling(
    mesh: &StructuredMesh,
    rule: &QuadRule,
    weight: &mut dyn FnMut([f64; 2]) -> f64,
) -> Result<CsrMatrix> {
    let nv = mesh.num_vertices();
    let nt = mesh.num_triangles();
    let mut triplets = Vec::with_capacity(nt * 3);
    for t in 0..nt {
        let coords = mesh.triangle_coords(t);
        let area = mesh.signed_area(t);
        let verts = mesh.triangle(t);
        let mut acc = [0.0f64; 3];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let x = quad_point(&coords, p);
            let g = weight(x);
            if !g.is_finite() {
                return Err(Error::NonFiniteCoefficient { x: x[0], y: x[1], value: g });
            }
            for a in 0..3 {
                acc[a] += w * g * p[a];
            }
        }
        for a in 0..3 {
            triplets.push((verts[a], t, area * acc[a]));
        }
    }
    Ok(CsrMatrix::from_triplets(nv, nt, &triplets))
}

/// P1 load vector of ∫ f·v via quadrature. Discontinuous integrands are
/// handled by sampling only; no interface fitting.
pub fn assemble_load(
    mesh: &StructuredMesh,
    rule: &QuadRule,
    f: &mut dyn FnMut([f64; 2]) -> f64,
) -> Result<Vec<f64>> {
    let mut load = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_triangles() {
        let coords = mesh.triangle_coords(t);
        let area = mesh.signed_area(t);
        let verts = mesh.triangle(t);
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let x = quad_point(&coords, p);
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NonFiniteCoefficient { x: x[0], y: x[1], value: v });
            }
            for a in 0..3 {
                load[verts[a]] += area * w * v * p[a];
            }
        }
    }
    Ok(load)
}

/// P1 load of a pointwise superposition s(y_h(x)) of a P1 field, i.e. the
/// vector with entries ∫ s(y_h)·v_a. Used for the nonlinearity q(y).
pub fn assemble_superposition_load(
    mesh: &StructuredMesh,
    rule: &QuadRule,
    y: &[f64],
    s: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_triangles() {
        let area = mesh.signed_area(t);
        let verts = mesh.triangle(t);
        let yv = [y[verts[0]], y[verts[1]], y[verts[2]]];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let yq = yv[0] * p[0] + yv[1] * p[1] + yv[2] * p[2];
            let sv = s(yq);
            for a in 0..3 {
                load[verts[a]] += area * w * sv * p[a];
            }
        }
    }
    load
}

/// P1 matrix of a pointwise weight c(y_h(x)): entries ∫ c(y_h)·v_a·v_b.
/// Used for the linearized nonlinearity q'(y).
pub fn assemble_superposition_matrix(
    mesh: &StructuredMesh,
    rule: &QuadRule,
    y: &[f64],
    c: impl Fn(f64) -> f64,
) -> CsrMatrix {
    let nv = mesh.num_vertices();
    let mut triplets = Vec::with_capacity(mesh.num_triangles() * 9);
    for t in 0..mesh.num_triangles() {
        let area = mesh.signed_area(t);
        let verts = mesh.triangle(t);
        let yv = [y[verts[0]], y[verts[1]], y[verts[2]]];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let yq = yv[0] * p[0] + yv[1] * p[1] + yv[2] * p[2];
            let cv = c(yq) * area * w;
            for a in 0..3 {
                for b in 0..3 {
                    triplets.push((verts[a], verts[b], cv * p[a] * p[b]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(nv, nv, &triplets)
}

/// Load with entries ∫ c(y_h)·z_h·d_h·v_a for P1 fields z, d. Used for the
/// second derivative q''(y) z δy in Hessian-vector products.
pub fn assemble_bilinear_superposition_load(
    mesh: &StructuredMesh,
    rule: &QuadRule,
    y: &[f64],
    z: &[f64],
    d: &[f64],
    c: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_triangles() {
        let area = mesh.signed_area(t);
        let verts = mesh.triangle(t);
        let yv = [y[verts[0]], y[verts[1]], y[verts[2]]];
        let zv = [z[verts[0]], z[verts[1]], z[verts[2]]];
        let dv = [d[verts[0]], d[verts[1]], d[verts[2]]];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let yq = yv[0] * p[0] + yv[1] * p[1] + yv[2] * p[2];
            let zq = zv[0] * p[0] + zv[1] * p[1] + zv[2] * p[2];
            let dq = dv[0] * p[0] + dv[1] * p[1] + dv[2] * p[2];
            let v = c(yq) * zq * dq * area * w;
            for a in 0..3 {
                load[verts[a]] += v * p[a];
            }
        }
    }
    load
}

/// Quadrature integral of (y_h(x) - f(x))^2 with a given rule; used for
/// discretization-error measurements against manufactured solutions.
pub fn l2_error_against(
    mesh: &StructuredMesh,
    rule: &QuadRule,
    y: &[f64],
    f: impl Fn([f64; 2]) -> f64,
) -> f64 {
    let mut acc = 0.0;
    for t in 0..mesh.num_triangles() {
        let coords = mesh.triangle_coords(t);
        let area = mesh.signed_area(t);
        let verts = mesh.triangle(t);
        let yv = [y[verts[0]], y[verts[1]], y[verts[2]]];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let x = quad_point(&coords, p);
            let yq = yv[0] * p[0] + yv[1] * p[1] + yv[2] * p[2];
            let d = yq - f(x);
            acc += area * w * d * d;
        }
    }
    acc.sqrt()
}

/// Quadrature integral of p(x)^4 for a P1 field (exact with the degree-4
/// rule); used by the L4 embedding spot checks.
pub fn l4_norm_p1(mesh: &StructuredMesh, y: &[f64]) -> f64 {
    let rule = QuadRule::degree4();
    let mut acc = 0.0;
    for t in 0..mesh.num_triangles() {
        let area = mesh.signed_area(t);
        let verts = mesh.triangle(t);
        let yv = [y[verts[0]], y[verts[1]], y[verts[2]]];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let yq = yv[0] * p[0] + yv[1] * p[1] + yv[2] * p[2];
            acc += area * w * yq.powi(4);
        }
    }
    acc.powf(0.25)
}

/// Nodal interpolant of x mapped through a function.
pub fn interpolate(mesh: &StructuredMesh, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    mesh.vertices().iter().map(|&p| f(p)).collect()
}

/// Point evaluation of a P1 field anywhere in the closed unit square (cell
/// lookup is O(1) on the structured mesh).
pub fn eval_p1(mesh: &StructuredMesh, y: &[f64], x: [f64; 2]) -> f64 {
    let n = mesh.subdivisions();
    let nf = n as f64;
    let i = ((x[0] * nf).floor() as usize).min(n - 1);
    let j = ((x[1] * nf).floor() as usize).min(n - 1);
    let cell = j * n + i;
    // Local coordinates in the cell; the diagonal runs lower-left to
    // upper-right, so the lower triangle has xi >= eta.
    let xi = x[0] * nf - i as f64;
    let eta = x[1] * nf - j as f64;
    let t = 2 * cell + if xi >= eta { 0 } else { 1 };
    let coords = mesh.triangle_coords(t);
    let verts = mesh.triangle(t);
    let det = (coords[1][0] - coords[0][0]) * (coords[2][1] - coords[0][1])
        - (coords[2][0] - coords[0][0]) * (coords[1][1] - coords[0][1]);
    let l1 = ((x[0] - coords[0][0]) * (coords[2][1] - coords[0][1])
        - (coords[2][0] - coords[0][0]) * (x[1] - coords[0][1]))
        / det;
    let l2 = ((coords[1][0] - coords[0][0]) * (x[1] - coords[0][1])
        - (x[0] - coords[0][0]) * (coords[1][1] - coords[0][1]))
        / det;
    let l0 = 1.0 - l1 - l2;
    l0 * y[verts[0]] + l1 * y[verts[1]] + l2 * y[verts[2]]
}

/// Norm bundle for a fixed mesh: the P1 mass matrix and the unit-coefficient
/// stiffness matrix it needs are assembled once and reused.
#[derive(Clone, Debug)]
pub struct Norms {
    mass: CsrMatrix,
    stiff_unit: CsrMatrix,
    cell_area: f64,
}

impl Norms {
    pub fn new(mesh: &StructuredMesh) -> Self {
        let rule = QuadRule::degree2();
        let stiff_unit = assemble_stiffness(mesh, &rule, &mut |_| 1.0).expect("constant coefficient");
        Norms {
            mass: assemble_mass_p1(mesh),
            stiff_unit,
            cell_area: mesh.cell_area(),
        }
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiff_unit(&self) -> &CsrMatrix {
        &self.stiff_unit
    }

    /// L2 norm of a P1 field (full vertex vector).
    pub fn l2_p1(&self, y: &[f64]) -> f64 {
        let my = self.mass.matvec(y);
        crate::sparse::dot(y, &my).max(0.0).sqrt()
    }

    /// H1 seminorm of a P1 field.
    pub fn h1_semi(&self, y: &[f64]) -> f64 {
        let ky = self.stiff_unit.matvec(y);
        crate::sparse::dot(y, &ky).max(0.0).sqrt()
    }

    /// Full H1 norm (L2^2 + seminorm^2)^(1/2).
    pub fn h1_full(&self, y: &[f64]) -> f64 {
        let l2 = self.l2_p1(y);
        let h1 = self.h1_semi(y);
        (l2 * l2 + h1 * h1).sqrt()
    }

    /// L2 norm of a P0 field.
    pub fn l2_p0(&self, u: &[f64]) -> f64 {
        (self.cell_area * crate::sparse::dot(u, u)).sqrt()
    }

    /// Maximum absolute coefficient (either field type).
    pub fn linf(&self, v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// L2 projection of a function onto P1 via the quadrature load and a mass
    /// solve at the conjugate gradient default tolerance.
    pub fn l2_projection(
        &self,
        mesh: &StructuredMesh,
        rule: &QuadRule,
        f: &mut dyn FnMut([f64; 2]) -> f64,
    ) -> Result<Vec<f64>> {
        let load = assemble_load(mesh, rule, f)?;
        let (proj, _) = cg_solve(&self.mass, &load, CG_DEFAULT_TOL, CG_DEFAULT_MAX_ITER)?;
        Ok(proj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn mesh(n: usize) -> StructuredMesh {
        StructuredMesh::new(n).unwrap()
    }

    #[test]
    fn stiffness_five_point_stencil_diagonal() {
        // Unit coefficient on the n=2 mesh: the single interior vertex carries
        // the classical 5-point stencil value 4.
        let m = mesh(2);
        let k = assemble_stiffness(&m, &QuadRule::degree2(), &mut |_| 1.0).unwrap();
        let center = m.interior_vertices()[0];
        assert!((k.get(center, center) - 4.0).abs() < 1e-13);
        // Diagonal neighbors of the center are not coupled for this diagonal
        // direction; axis neighbors carry -1.
        let vid = |i: usize, j: usize| j * 3 + i;
        assert!((k.get(center, vid(0, 1)) + 1.0).abs() < 1e-13);
        assert!((k.get(center, vid(1, 0)) + 1.0).abs() < 1e-13);
        assert!(k.get(center, vid(0, 2)).abs() < 1e-13);
    }

    #[test]
    fn stiffness_energy_converges_to_exact_seminorm() {
        // Interpolant of x1(1-x1)x2(1-x2); exact Dirichlet energy 1/45
        // (two identical terms (1/3)(1/30) from each partial derivative).
        let exact = 1.0 / 45.0;
        let bump = |p: [f64; 2]| p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]);
        let mut errs = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let m = mesh(n);
            let k = assemble_stiffness(&m, &QuadRule::degree2(), &mut |_| 1.0).unwrap();
            let v = interpolate(&m, bump);
            let energy = crate::sparse::dot(&v, &k.matvec(&v));
            errs.push((energy - exact).abs());
        }
        assert!(errs[3] < 1e-5, "energy error {:.3e}", errs[3]);
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "no convergence: {errs:?}");
        // Second-order convergence: each refinement divides the error by ~4.
        assert!(errs[3] < errs[2] / 3.0, "rate too slow: {errs:?}");
    }

    #[test]
    fn stiffness_constant_coefficient_scales_linearly() {
        let m = mesh(3);
        let k1 = assemble_stiffness(&m, &QuadRule::degree2(), &mut |_| 1.0).unwrap();
        let kc = assemble_stiffness(&m, &QuadRule::degree2(), &mut |_| 2.5).unwrap();
        for i in 0..k1.nrows() {
            let (cols, vals) = k1.row(i);
            for (c, v) in cols.iter().zip(vals) {
                assert!((kc.get(i, *c) - 2.5 * v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn stiffness_rejects_non_finite_coefficient() {
        let m = mesh(2);
        let err = assemble_stiffness(&m, &QuadRule::degree2(), &mut |p| {
            if p[0] > 0.5 {
                f64::NAN
            } else {
                1.0
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteCoefficient { .. }));
    }

    #[test]
    fn mass_partition_of_unity() {
        let m = mesh(5);
        let mm = assemble_mass_p1(&m);
        let ones = vec![1.0; m.num_vertices()];
        let total: f64 = mm.matvec(&ones).iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn mass_integrates_p1_fields() {
        // 1^T M y = ∫ y_h for any P1 field; check against the vertex-average
        // closed form sum_T area * mean(vertex values).
        let m = mesh(4);
        let mm = assemble_mass_p1(&m);
        let mut rng = CounterRng::new(5);
        let y: Vec<f64> = (0..m.num_vertices()).map(|_| rng.next_symmetric()).collect();
        let ones = vec![1.0; m.num_vertices()];
        let lhs = crate::sparse::dot(&ones, &mm.matvec(&y));
        let mut exact = 0.0;
        for t in 0..m.num_triangles() {
            let v = m.triangle(t);
            exact += m.signed_area(t) * (y[v[0]] + y[v[1]] + y[v[2]]) / 3.0;
        }
        assert!((lhs - exact).abs() < 1e-14);
    }

    #[test]
    fn mass_spd_probe() {
        let m = mesh(4);
        let mm = assemble_mass_p1(&m);
        let mut rng = CounterRng::new(17);
        for _ in 0..100 {
            let x: Vec<f64> = (0..m.num_vertices()).map(|_| rng.next_symmetric()).collect();
            if x.iter().all(|&v| v == 0.0) {
                continue;
            }
            assert!(crate::sparse::dot(&x, &mm.matvec(&x)) > 0.0);
        }
    }

    #[test]
    fn coupling_unit_weight_total_mass() {
        // g = 1, u = 1: the load pairs to 1 against the constant P1 field.
        let m = mesh(3);
        let b = assemble_control_coupling(&m, &QuadRule::degree2(), &mut |_| 1.0).unwrap();
        let u = vec![1.0; m.num_triangles()];
        let load = b.matvec(&u);
        let total: f64 = load.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn coupling_zero_weight_zero_matrix() {
        let m = mesh(2);
        let b = assemble_control_coupling(&m, &QuadRule::degree2(), &mut |_| 0.0).unwrap();
        assert!(b.matvec(&vec![1.0; m.num_triangles()]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coupling_transpose_gives_cell_averages() {
        // With g = 1 the transpose action on a P1 field v returns, per cell,
        // area times the vertex mean of v (∫_T v for linear v).
        let m = mesh(2);
        let b = assemble_control_coupling(&m, &QuadRule::degree2(), &mut |_| 1.0).unwrap();
        let mut rng = CounterRng::new(9);
        let v: Vec<f64> = (0..m.num_vertices()).map(|_| rng.next_symmetric()).collect();
        let bt = b.matvec_transpose(&v);
        for t in 0..m.num_triangles() {
            let vs = m.triangle(t);
            let exact = m.signed_area(t) * (v[vs[0]] + v[vs[1]] + v[vs[2]]) / 3.0;
            assert!((bt[t] - exact).abs() < 1e-14, "cell {t}");
        }
    }

    #[test]
    fn load_constant_sums_to_measure() {
        let m = mesh(6);
        let load = assemble_load(&m, &QuadRule::degree2(), &mut |_| 1.0).unwrap();
        let total: f64 = load.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn load_zero_is_zero() {
        let m = mesh(3);
        let load = assemble_load(&m, &QuadRule::degree2(), &mut |_| 0.0).unwrap();
        assert!(load.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn load_of_target_profile_integrates_to_half() {
        // The -1 on [1/4,3/4]^2, +1 elsewhere profile integrates to 1/2.
        // Aligned meshes (4 | n) are exact; others are O(1/n).
        let target = |p: [f64; 2]| {
            if (0.25..=0.75).contains(&p[0]) && (0.25..=0.75).contains(&p[1]) {
                -1.0
            } else {
                1.0
            }
        };
        let m8 = mesh(8);
        let l8 = assemble_load(&m8, &QuadRule::degree2(), &mut |p| target(p)).unwrap();
        let s8: f64 = l8.iter().sum();
        assert!((s8 - 0.5).abs() < 1e-13, "aligned mesh sum {s8}");

        let m10 = mesh(10);
        let l10 = assemble_load(&m10, &QuadRule::degree2(), &mut |p| target(p)).unwrap();
        let s10: f64 = l10.iter().sum();
        assert!((s10 - 0.5).abs() < 2.0 / 10.0, "unaligned mesh sum {s10}");
    }

    #[test]
    fn norms_of_sine_interpolant() {
        let pi = std::f64::consts::PI;
        let wave = move |p: [f64; 2]| (pi * p[0]).sin() * (pi * p[1]).sin();
        let m = mesh(64);
        let norms = Norms::new(&m);
        let v = interpolate(&m, wave);
        // ||w||_L2 = 1/2 and |w|_H1^2 = pi^2/2 for the exact field.
        assert!((norms.l2_p1(&v) - 0.5).abs() < 0.5 * 0.01);
        let h1sq = norms.h1_semi(&v).powi(2);
        assert!((h1sq - pi * pi / 2.0).abs() < pi * pi / 2.0 * 0.01);
        // Coarser mesh is farther from the exact values.
        let mc = mesh(8);
        let vc = interpolate(&mc, wave);
        let nc = Norms::new(&mc);
        assert!((nc.l2_p1(&vc) - 0.5).abs() > (norms.l2_p1(&v) - 0.5).abs());
    }

    #[test]
    fn p0_norm_of_constant() {
        let m = mesh(7);
        let norms = Norms::new(&m);
        let u = vec![-3.0; m.num_triangles()];
        assert!((norms.l2_p0(&u) - 3.0).abs() < 1e-13);
        assert_eq!(norms.linf(&u), 3.0);
        assert_eq!(norms.linf(&[0.5, -4.25, 1.0]), 4.25);
    }

    #[test]
    fn stiffness_symmetric_and_spd_after_reduction() {
        let m = mesh(8);
        let k = assemble_stiffness(&m, &QuadRule::degree2(), &mut |p| 1.0 + p[0] + p[1] * p[1]).unwrap();
        assert!(k.asymmetry() < 1e-14);
        let kr = m.reduce_matrix(&k).unwrap();
        let mut rng = CounterRng::new(23);
        for _ in 0..100 {
            let x: Vec<f64> = (0..kr.nrows()).map(|_| rng.next_symmetric()).collect();
            let e = crate::sparse::dot(&x, &kr.matvec(&x));
            assert!(e > 0.0, "reduced stiffness not positive definite: {e}");
        }
    }

    #[test]
    fn patch_test_linear_fields_reproduced() {
        // Unit coefficient, Dirichlet data from a global linear function:
        // the discrete solution matches the linear interpolant exactly.
        let m = mesh(5);
        let k = assemble_stiffness(&m, &QuadRule::degree2(), &mut |_| 1.0).unwrap();
        let lin = |p: [f64; 2]| 0.3 + 1.7 * p[0] - 0.9 * p[1];
        let nodal = interpolate(&m, lin);
        // Interior rows of K * nodal must vanish (zero Laplacian, P1-exact).
        let r = k.matvec(&nodal);
        for &v in m.interior_vertices() {
            assert!(r[v].abs() < 1e-13, "interior residual {}", r[v]);
        }
        // Equivalent solve formulation: K_II y_I = -K_IB g_B reproduces the
        // interior values.
        let kr = m.reduce_matrix(&k).unwrap();
        let mut rhs = vec![0.0; m.num_interior()];
        for (row, &v) in m.interior_vertices().iter().enumerate() {
            let (cols, vals) = k.row(v);
            let mut acc = 0.0;
            for (c, kv) in cols.iter().zip(vals) {
                if m.is_boundary(*c) {
                    acc -= kv * nodal[*c];
                }
            }
            rhs[row] = acc;
        }
        let (y, _) = cg_solve(&kr, &rhs, 1e-13, 1000).unwrap();
        for (row, &v) in m.interior_vertices().iter().enumerate() {
            assert!((y[row] - nodal[v]).abs() < 1e-11);
        }
    }

    #[test]
    fn assembly_is_deterministic() {
        let m = mesh(6);
        let coeff = |p: [f64; 2]| 1.0 + 0.5 * (3.0 * p[0]).sin() * (2.0 * p[1]).cos();
        let a = assemble_stiffness(&m, &QuadRule::degree2(), &mut { coeff }).unwrap();
        let b = assemble_stiffness(&m, &QuadRule::degree2(), &mut { coeff }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cg_meets_residual_contract_on_stiffness() {
        let m = mesh(32);
        let k = assemble_stiffness(&m, &QuadRule::degree2(), &mut |p| 1.0 + p[0]).unwrap();
        let kr = m.reduce_matrix(&k).unwrap();
        let mut rng = CounterRng::new(3);
        let b: Vec<f64> = (0..kr.nrows()).map(|_| rng.next_symmetric()).collect();
        let (x, out) = cg_solve(&kr, &b, 1e-12, CG_DEFAULT_MAX_ITER).unwrap();
        let mut r = kr.matvec(&x);
        for (ri, bi) in r.iter_mut().zip(&b) {
            *ri -= bi;
        }
        let bnorm = crate::sparse::norm2(&b);
        assert!(crate::sparse::norm2(&r) <= 1e-12 * bnorm * 1.01);
        assert!(out.iterations > 0);
    }

    #[test]
    fn grisvard_product_bound_spot_check() {
        // || I_h(g w) ||_H1 <= (C_D + 1) ||g||_C01 ||w||_H10 (1 + eps) for
        // Lipschitz g and P1 fields w vanishing on the boundary; eps <= 0.1
        // at n = 64. The norm of g = c0 + c1 sin(pi x) cos(pi y) with
        // c0, c1 > 0 is exactly c0 + c1 + c1 pi.
        let pi = std::f64::consts::PI;
        let c_d = 1.0 / (pi * 2.0f64.sqrt());
        let m = mesh(64);
        let norms = Norms::new(&m);
        let mut rng = CounterRng::new(77);
        for case in 0..50 {
            let c0 = 0.2 + rng.next_unit();
            let c1 = 0.2 + rng.next_unit();
            let g = move |p: [f64; 2]| c0 + c1 * (pi * p[0]).sin() * (pi * p[1]).cos();
            let g_norm = c0 + c1 + c1 * pi;
            let mut w = vec![0.0; m.num_vertices()];
            if case % 5 == 0 {
                // Smooth low-frequency field.
                let a = rng.next_symmetric();
                for (v, p) in m.vertices().iter().enumerate() {
                    w[v] = a * (pi * p[0]).sin() * (pi * p[1]).sin();
                }
            } else {
                for &v in m.interior_vertices() {
                    w[v] = rng.next_symmetric();
                }
            }
            let gw: Vec<f64> = m
                .vertices()
                .iter()
                .zip(&w)
                .map(|(&p, &wv)| g(p) * wv)
                .collect();
            let lhs = norms.h1_full(&gw);
            let rhs = (c_d + 1.0) * g_norm * norms.h1_semi(&w) * 1.1;
            assert!(lhs <= rhs, "case {case}: {lhs} > {rhs}");
        }
    }
}
