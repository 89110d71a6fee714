//! Structured triangulation of the unit square.
//!
//! The square is divided into n x n cells, each split along the same diagonal
//! (lower-left to upper-right) into two triangles, for 2n^2 triangles and
//! (n+1)^2 vertices in total. The fixed diagonal direction keeps meshes
//! reproducible across runs.

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Uniform right-triangle mesh on (0,1)^2. Immutable after construction.
#[derive(Clone, Debug)]
pub struct StructuredMesh {
    n: usize,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    cell_area: f64,
    interior: Vec<usize>,
    interior_position: Vec<Option<usize>>,
}

impl StructuredMesh {
    /// Builds the mesh with `n` subdivisions per axis. Only d = 2 is
    /// supported; `n = 0` is rejected.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("mesh subdivision count must be at least 1"));
        }
        let verts_per_side = n + 1;
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity(verts_per_side * verts_per_side);
        let mut boundary = Vec::with_capacity(vertices.capacity());
        for j in 0..verts_per_side {
            for i in 0..verts_per_side {
                vertices.push([i as f64 * h, j as f64 * h]);
                boundary.push(i == 0 || j == 0 || i == n || j == n);
            }
        }
        let vid = |i: usize, j: usize| j * verts_per_side + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = vid(i, j);
                let v10 = vid(i + 1, j);
                let v01 = vid(i, j + 1);
                let v11 = vid(i + 1, j + 1);
                // Diagonal v00 -> v11, both triangles counterclockwise.
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        let mut interior = Vec::new();
        let mut interior_position = vec![None; vertices.len()];
        for (v, &b) in boundary.iter().enumerate() {
            if !b {
                interior_position[v] = Some(interior.len());
                interior.push(v);
            }
        }
        Ok(StructuredMesh {
            n,
            vertices,
            triangles,
            boundary,
            cell_area: 0.5 * h * h,
            interior,
            interior_position,
        })
    }

    pub fn subdivisions(&self) -> usize {
        self.n
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_position(&self) -> &[Option<usize>] {
        &self.interior_position
    }

    pub fn triangle_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_coords(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    /// Removes boundary rows/columns of a square vertex matrix.
    pub fn reduce_matrix(&self, full: &CsrMatrix) -> Result<CsrMatrix> {
        self.check_reducible()?;
        assert_eq!(full.nrows(), self.num_vertices());
        assert_eq!(full.ncols(), self.num_vertices());
        Ok(full.restrict(&self.interior_position, self.interior.len()))
    }

    /// Keeps only interior rows of a vertex-by-anything matrix.
    pub fn reduce_rows(&self, full: &CsrMatrix) -> Result<CsrMatrix> {
        self.check_reducible()?;
        assert_eq!(full.nrows(), self.num_vertices());
        Ok(full.restrict_rows(&self.interior_position, self.interior.len()))
    }

    pub fn reduce_vec(&self, full: &[f64]) -> Result<Vec<f64>> {
        self.check_reducible()?;
        assert_eq!(full.len(), self.num_vertices());
        Ok(self.interior.iter().map(|&v| full[v]).collect())
    }

    /// Re-expands an interior vector with zeros on the boundary.
    pub fn expand_vec(&self, reduced: &[f64]) -> Vec<f64> {
        assert_eq!(reduced.len(), self.interior.len());
        let mut full = vec![0.0; self.num_vertices()];
        for (k, &v) in self.interior.iter().enumerate() {
            full[v] = reduced[k];
        }
        full
    }

    fn check_reducible(&self) -> Result<()> {
        if self.interior.is_empty() {
            return Err(Error::invalid(
                "mesh has no interior vertices; homogeneous Dirichlet reduction is empty",
            ));
        }
        Ok(())
    }
}

/// Quadrature rule on the reference triangle in barycentric coordinates.
/// Weights are normalized to sum to one (multiply by the physical area).
#[derive(Clone, Debug)]
pub struct QuadRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadRule {
    /// Interior 3-point rule, exact for polynomials of degree 2.
    pub fn degree2() -> Self {
        let a = 2.0 / 3.0;
        let b = 1.0 / 6.0;
        QuadRule {
            points: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
            degree: 2,
        }
    }

    /// 6-point rule, exact for polynomials of degree 4 (used for the cubic
    /// nonlinearity, whose integrands are quartic in the P1 coefficients).
    pub fn degree4() -> Self {
        let a1 = 0.445948490915965;
        let w1 = 0.223381589678011;
        let a2 = 0.091576213509771;
        let w2 = 0.109951743655322;
        let perm = |a: f64| {
            let c = 1.0 - 2.0 * a;
            vec![[c, a, a], [a, c, a], [a, a, c]]
        };
        let mut points = perm(a1);
        points.extend(perm(a2));
        QuadRule {
            points,
            weights: vec![w1, w1, w1, w2, w2, w2],
            degree: 4,
        }
    }
}
