//! Uniform square meshes of the unit square and their 2×2 macro partition.
//!
//! Indexing (all ids are 0-based, `n` elements per side):
//!
//! * element `(j, k)`, `1 <= j, k <= n`, occupies `[(j-1)h, jh] × [(k-1)h, kh]`
//!   and has id `(j-1) + (k-1)·n`;
//! * vertex `(a, b)`, `0 <= a, b <= n`, sits at `(a·h, b·h)` and has id `a + b·(n+1)`;
//! * edges are numbered row by row in blocks of `2n+1`: block `k` holds the
//!   horizontal edges on `y = k·h` (`id = k(2n+1) + (j-1)`) followed by the
//!   vertical edges of element row `k+1` (`id = k(2n+1) + n + a`, on `x = a·h`).
//!   The last block only has its horizontal part, giving `2n(n+1)` edges.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub orientation: Orientation,
    pub vertices: [usize; 2],
    pub midpoint: [f64; 2],
    /// Below/above for horizontal edges, left/right for vertical ones.
    pub elements: [Option<usize>; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.elements[0].is_none() || self.elements[1].is_none()
    }
}

/// A 2×2 block of elements. `(j, k)` are the odd indices of its lower-left child.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacroElement {
    pub j: usize,
    pub k: usize,
    /// Children in the order `(j,k), (j+1,k), (j,k+1), (j+1,k+1)`.
    pub children: [usize; 4],
}

#[derive(Debug, Clone)]
pub struct UniformMesh {
    n: usize,
    h: f64,
    coords: Vec<f64>,
    edges: Vec<Edge>,
}

pub fn build_uniform_mesh(n: usize) -> Result<UniformMesh> {
    UniformMesh::new(n)
}

impl UniformMesh {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidMeshSize(n));
        }
        let h = 1.0 / n as f64;
        let coords: Vec<f64> = (0..=n).map(|a| a as f64 / n as f64).collect();
        let mut edges = Vec::with_capacity(2 * n * (n + 1));
        let vid = |a: usize, b: usize| a + b * (n + 1);
        let eid = |j: usize, k: usize| (j - 1) + (k - 1) * n;
        for k in 0..=n {
            for j in 1..=n {
                let below = (k >= 1).then(|| eid(j, k));
                let above = (k < n).then(|| eid(j, k + 1));
                edges.push(Edge {
                    orientation: Orientation::Horizontal,
                    vertices: [vid(j - 1, k), vid(j, k)],
                    midpoint: [0.5 * (coords[j - 1] + coords[j]), coords[k]],
                    elements: [below, above],
                });
            }
            if k < n {
                for a in 0..=n {
                    let left = (a >= 1).then(|| eid(a, k + 1));
                    let right = (a < n).then(|| eid(a + 1, k + 1));
                    edges.push(Edge {
                        orientation: Orientation::Vertical,
                        vertices: [vid(a, k), vid(a, k + 1)],
                        midpoint: [coords[a], 0.5 * (coords[k] + coords[k + 1])],
                        elements: [left, right],
                    });
                }
            }
        }
        debug_assert_eq!(edges.len(), 2 * n * (n + 1));
        Ok(Self {
            n,
            h,
            coords,
            edges,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_elements(&self) -> usize {
        self.n * self.n
    }

    pub fn num_vertices(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn num_interior_vertices(&self) -> usize {
        (self.n - 1) * (self.n - 1)
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    /// Grid coordinate `a·h`, `0 <= a <= n`.
    pub fn coord(&self, a: usize) -> f64 {
        self.coords[a]
    }

    pub fn element_id(&self, j: usize, k: usize) -> usize {
        debug_assert!((1..=self.n).contains(&j) && (1..=self.n).contains(&k));
        (j - 1) + (k - 1) * self.n
    }

    /// 1-based `(j, k)` of an element id.
    pub fn element_index(&self, id: usize) -> (usize, usize) {
        (id % self.n + 1, id / self.n + 1)
    }

    pub fn vertex_id(&self, a: usize, b: usize) -> usize {
        a + b * (self.n + 1)
    }

    pub fn vertex_index(&self, id: usize) -> (usize, usize) {
        (id % (self.n + 1), id / (self.n + 1))
    }

    pub fn vertex_coords(&self, id: usize) -> [f64; 2] {
        let (a, b) = self.vertex_index(id);
        [self.coords[a], self.coords[b]]
    }

    pub fn is_boundary_vertex(&self, id: usize) -> bool {
        let (a, b) = self.vertex_index(id);
        a == 0 || b == 0 || a == self.n || b == self.n
    }

    /// Corners in reference order `(-1,-1), (1,-1), (1,1), (-1,1)`.
    pub fn element_vertices(&self, id: usize) -> [usize; 4] {
        let (j, k) = self.element_index(id);
        [
            self.vertex_id(j - 1, k - 1),
            self.vertex_id(j, k - 1),
            self.vertex_id(j, k),
            self.vertex_id(j - 1, k),
        ]
    }

    /// Edges in reference order bottom, right, top, left.
    pub fn element_edges(&self, id: usize) -> [usize; 4] {
        let (j, k) = self.element_index(id);
        let n = self.n;
        let row = (k - 1) * (2 * n + 1);
        [
            row + (j - 1),
            row + n + j,
            row + (2 * n + 1) + (j - 1),
            row + n + (j - 1),
        ]
    }

    /// Lower-left corner of an element.
    pub fn element_origin(&self, id: usize) -> [f64; 2] {
        let (j, k) = self.element_index(id);
        [self.coords[j - 1], self.coords[k - 1]]
    }

    /// Affine map from the reference square `[-1,1]²` onto an element.
    pub fn map_to_physical(&self, id: usize, xi: f64, eta: f64) -> [f64; 2] {
        let [x0, y0] = self.element_origin(id);
        let half = 0.5 * self.h;
        [x0 + half * (xi + 1.0), y0 + half * (eta + 1.0)]
    }

    /// Element containing a physical point (points on shared edges go to the upper/right element).
    pub fn locate(&self, x: f64, y: f64) -> usize {
        let clamp =
            |t: f64| ((t * self.n as f64).floor() as isize).clamp(0, self.n as isize - 1) as usize;
        self.element_id(clamp(x) + 1, clamp(y) + 1)
    }

    pub fn macro_partition(&self) -> Result<Vec<MacroElement>> {
        if self.n % 2 != 0 {
            return Err(Error::OddMacroPartition(self.n));
        }
        let mut out = Vec::with_capacity(self.n * self.n / 4);
        for k in (1..self.n).step_by(2) {
            for j in (1..self.n).step_by(2) {
                out.push(self.macro_element(j, k)?);
            }
        }
        Ok(out)
    }

    pub fn macro_element(&self, j: usize, k: usize) -> Result<MacroElement> {
        if self.n % 2 != 0 {
            return Err(Error::OddMacroPartition(self.n));
        }
        if j % 2 == 0 || k % 2 == 0 || j + 1 > self.n || k + 1 > self.n || j == 0 || k == 0 {
            return Err(Error::InvalidMacroIndex(j, k));
        }
        Ok(MacroElement {
            j,
            k,
            children: [
                self.element_id(j, k),
                self.element_id(j + 1, k),
                self.element_id(j, k + 1),
                self.element_id(j + 1, k + 1),
            ],
        })
    }
}

pub fn macro_partition(mesh: &UniformMesh) -> Result<Vec<MacroElement>> {
    mesh.macro_partition()
}
