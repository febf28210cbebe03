//! Elementwise quadrature assembly of `a_h`, `b_h`, the pressure mass matrix
//! and load vectors.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use crate::elements::{gauss_legendre, gauss_rule, QuadratureRule, Tabulation};
use crate::error::{Error, Result};
use crate::spaces::{
    FeSpace, LocalFunction, PressureConstraints, ShapeSource, SpaceKind, VelocityBasis,
};
use crate::sparse::{CsrMatrix, TripletBuilder};

pub const DEFAULT_QUADRATURE_ORDER: usize = 4;

/// Everything needed to set up one saddle-point problem.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    /// `ν (∇u, ∇v)` over the velocity basis.
    pub a: CsrMatrix,
    /// `(div v, q)`, rows = pressure dofs, columns = velocity dofs.
    pub b: CsrMatrix,
    pub pressure_mass: CsrMatrix,
    pub load: Vec<f64>,
    pub constraints: PressureConstraints,
}

impl AssembledSystem {
    /// Write `A.mtx`, `B.mtx` and `Mp.mtx` into `dir`, each with a comment block
    /// describing the row and column numbering.
    pub fn write_matrix_market(&self, dir: &Path, description: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let velocity = "velocity dof 2*s + c for scalar dof s and component c; bubble, when present, is the last dof";
        let files = [
            (
                "A.mtx",
                &self.a,
                ["A = nu (grad u, grad v), broken over elements", velocity],
            ),
            (
                "B.mtx",
                &self.b,
                [
                    "B = (div v, q); row = pressure dof = element id (j-1) + (k-1) n",
                    velocity,
                ],
            ),
            (
                "Mp.mtx",
                &self.pressure_mass,
                [
                    "Mp = (p, q) on piecewise constants",
                    "row/column = element id",
                ],
            ),
        ];
        for (name, m, lines) in files {
            let out = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
            m.write_matrix_market(out, &[description, lines[0], lines[1]])?;
        }
        Ok(())
    }
}

/// Assembly driver holding the quadrature rule and element visitation order.
#[derive(Debug, Clone)]
pub struct Assembler {
    rule: QuadratureRule,
    order: usize,
    element_order: Option<Vec<usize>>,
}

impl Default for Assembler {
    fn default() -> Self {
        Self::new(DEFAULT_QUADRATURE_ORDER).expect("default rule is valid")
    }
}

struct ElementTables {
    main: Tabulation,
    bubble: Option<Tabulation>,
}

impl ElementTables {
    fn get(&self, s: ShapeSource) -> &Tabulation {
        match s {
            ShapeSource::Main => &self.main,
            ShapeSource::Bubble => self.bubble.as_ref().expect("bubble tabulated"),
        }
    }
}

impl Assembler {
    pub fn new(points_per_axis: usize) -> Result<Self> {
        Ok(Self {
            rule: gauss_rule(points_per_axis)?,
            order: points_per_axis,
            element_order: None,
        })
    }

    /// Visit elements in the given order instead of by id.
    pub fn with_element_order(mut self, order: Vec<usize>) -> Self {
        self.element_order = Some(order);
        self
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn elements(&self, count: usize) -> Vec<usize> {
        match &self.element_order {
            Some(o) => {
                assert_eq!(o.len(), count, "element order must cover every element");
                o.clone()
            }
            None => (0..count).collect(),
        }
    }

    fn tables(&self, v: &VelocityBasis) -> ElementTables {
        ElementTables {
            main: Tabulation::new(v.shape(ShapeSource::Main), &self.rule),
            bubble: v
                .bubble()
                .map(|_| Tabulation::new(v.shape(ShapeSource::Bubble), &self.rule)),
        }
    }

    pub fn grad_grad(&self, v: &VelocityBasis, nu: f64) -> Result<CsrMatrix> {
        if nu.is_nan() || nu <= 0.0 {
            return Err(Error::InvalidViscosity(nu));
        }
        let mesh = v.mesh();
        let n = v.ndofs();
        let tables = self.tables(v);
        let scale = 2.0 / mesh.h();
        let jac = 0.25 * mesh.h() * mesh.h();
        let nq = self.rule.len();
        let mut builder = TripletBuilder::new(n, n);
        let mut pieces = Vec::new();
        let mut grads: Vec<[f64; 2]> = Vec::new();
        for e in self.elements(mesh.num_elements()) {
            v.local_functions(e, &mut pieces);
            physical_gradients(&pieces, &tables, nq, scale, &mut grads);
            for a in 0..pieces.len() {
                for b in a..pieces.len() {
                    if pieces[a].comp != pieces[b].comp {
                        continue;
                    }
                    let mut s = 0.0;
                    for q in 0..nq {
                        let (ga, gb) = (grads[a * nq + q], grads[b * nq + q]);
                        s += self.rule.weights[q] * (ga[0] * gb[0] + ga[1] * gb[1]);
                    }
                    let val = nu * jac * s;
                    let (i, j) = (pieces[a].dof, pieces[b].dof);
                    builder.push(i, j, val);
                    if a != b {
                        builder.push(j, i, val);
                    }
                }
            }
        }
        Ok(builder.build())
    }

    pub fn div_pressure(&self, v: &VelocityBasis, p: &FeSpace) -> Result<CsrMatrix> {
        p.require_kind(SpaceKind::P0, "P0")?;
        let mesh = v.mesh();
        if p.mesh().n() != mesh.n() {
            return Err(Error::MeshMismatch(mesh.n(), p.mesh().n()));
        }
        let tables = self.tables(v);
        let scale = 2.0 / mesh.h();
        let jac = 0.25 * mesh.h() * mesh.h();
        let nq = self.rule.len();
        let mut builder = TripletBuilder::new(p.ndofs(), v.ndofs());
        let mut pieces = Vec::new();
        let mut grads = Vec::new();
        for e in self.elements(mesh.num_elements()) {
            v.local_functions(e, &mut pieces);
            physical_gradients(&pieces, &tables, nq, scale, &mut grads);
            let row = p.element_scalar_dofs(e)[0].expect("every element carries a P0 dof");
            for (a, f) in pieces.iter().enumerate() {
                let s: f64 = (0..nq)
                    .map(|q| self.rule.weights[q] * grads[a * nq + q][f.comp])
                    .sum();
                builder.push(row, f.dof, jac * s);
            }
        }
        Ok(builder.build())
    }

    /// Diagonal `h²` on P0.
    pub fn pressure_mass(&self, p: &FeSpace) -> Result<CsrMatrix> {
        p.require_kind(SpaceKind::P0, "P0")?;
        let h = p.mesh().h();
        Ok(CsrMatrix::diagonal(&vec![h * h; p.ndofs()]))
    }

    /// `(f, v)` for a pointwise forcing evaluated at mapped quadrature points.
    pub fn load(&self, v: &VelocityBasis, f: &(dyn Fn(f64, f64) -> [f64; 2] + Sync)) -> Vec<f64> {
        let mesh = v.mesh();
        let tables = self.tables(v);
        let jac = 0.25 * mesh.h() * mesh.h();
        let mut out = vec![0.0; v.ndofs()];
        let mut pieces = Vec::new();
        let mut fq = vec![[0.0; 2]; self.rule.len()];
        for e in self.elements(mesh.num_elements()) {
            for (slot, &[xi, eta]) in fq.iter_mut().zip(&self.rule.points) {
                let [x, y] = mesh.map_to_physical(e, xi, eta);
                *slot = f(x, y);
            }
            v.local_functions(e, &mut pieces);
            for piece in &pieces {
                let tab = tables.get(piece.source);
                let s: f64 = (0..self.rule.len())
                    .map(|q| {
                        let phi: f64 = (0..4).map(|i| piece.weights[i] * tab.values[q][i]).sum();
                        self.rule.weights[q] * fq[q][piece.comp] * phi
                    })
                    .sum();
                out[piece.dof] += jac * s;
            }
        }
        out
    }

    /// `(f, v)` for forcing tabulated at the Gauss points of a (possibly finer) mesh.
    /// The tabulation mesh must be a refinement of `v`'s mesh by an integer factor.
    pub fn load_tabulated(
        &self,
        v: &VelocityBasis,
        forcing: &TabulatedForcing,
    ) -> Result<Vec<f64>> {
        let mesh = v.mesh();
        if forcing.n % mesh.n() != 0 {
            return Err(Error::ForcingMismatch(format!(
                "forcing mesh n = {} is not a refinement of n = {}",
                forcing.n,
                mesh.n()
            )));
        }
        let fine = crate::mesh::UniformMesh::new(forcing.n)?;
        let rule = gauss_rule(forcing.order)?;
        let jac = 0.25 * fine.h() * fine.h();
        let mut out = vec![0.0; v.ndofs()];
        let mut pieces = Vec::new();
        for ef in 0..fine.num_elements() {
            let [cx, cy] = fine.map_to_physical(ef, 0.0, 0.0);
            let ec = mesh.locate(cx, cy);
            let [x0, y0] = mesh.element_origin(ec);
            v.local_functions(ec, &mut pieces);
            for (q, ([xi, eta], w)) in rule.iter().enumerate() {
                let [x, y] = fine.map_to_physical(ef, xi, eta);
                let cxi = 2.0 * (x - x0) / mesh.h() - 1.0;
                let ceta = 2.0 * (y - y0) / mesh.h() - 1.0;
                let fval = forcing.values[ef * rule.len() + q];
                for piece in &pieces {
                    let shape = v.shape(piece.source).values(cxi, ceta);
                    let phi: f64 = (0..4).map(|i| piece.weights[i] * shape[i]).sum();
                    out[piece.dof] += jac * w * fval[piece.comp] * phi;
                }
            }
        }
        Ok(out)
    }

    pub fn system(
        &self,
        v: &VelocityBasis,
        p: &FeSpace,
        constraints: PressureConstraints,
        nu: f64,
        load: Vec<f64>,
    ) -> Result<AssembledSystem> {
        Ok(AssembledSystem {
            a: self.grad_grad(v, nu)?,
            b: self.div_pressure(v, p)?,
            pressure_mass: self.pressure_mass(p)?,
            load,
            constraints,
        })
    }
}

fn physical_gradients(
    pieces: &[LocalFunction],
    tables: &ElementTables,
    nq: usize,
    scale: f64,
    out: &mut Vec<[f64; 2]>,
) {
    out.clear();
    for piece in pieces {
        let tab = tables.get(piece.source);
        for q in 0..nq {
            let mut g = [0.0; 2];
            for i in 0..4 {
                g[0] += piece.weights[i] * tab.gradients[q][i][0];
                g[1] += piece.weights[i] * tab.gradients[q][i][1];
            }
            out.push([scale * g[0], scale * g[1]]);
        }
    }
}

pub fn assemble_grad_grad(space: &Arc<FeSpace>, nu: f64) -> Result<CsrMatrix> {
    Assembler::default().grad_grad(&VelocityBasis::new(Arc::clone(space))?, nu)
}

pub fn assemble_div_pressure(vspace: &Arc<FeSpace>, pspace: &FeSpace) -> Result<CsrMatrix> {
    Assembler::default().div_pressure(&VelocityBasis::new(Arc::clone(vspace))?, pspace)
}

pub fn assemble_pressure_mass(pspace: &FeSpace) -> Result<CsrMatrix> {
    Assembler::default().pressure_mass(pspace)
}

pub fn assemble_load(
    f: &(dyn Fn(f64, f64) -> [f64; 2] + Sync),
    vspace: &Arc<FeSpace>,
) -> Result<Vec<f64>> {
    Ok(Assembler::default().load(&VelocityBasis::new(Arc::clone(vspace))?, f))
}

/// Body force sampled at the tensor Gauss points of every element of an `n × n` mesh.
///
/// CSV layout: an optional `# n=<n> order=<points per axis>` line, a header
/// `j,k,q,fx,fy`, then one row per element and point with 1-based element
/// indices and 0-based point index (`x` fastest within the rule).
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedForcing {
    pub n: usize,
    pub order: usize,
    /// `[element id · points + q]`
    pub values: Vec<[f64; 2]>,
}

impl TabulatedForcing {
    pub fn sample(n: usize, order: usize, f: impl Fn(f64, f64) -> [f64; 2]) -> Result<Self> {
        let mesh = crate::mesh::UniformMesh::new(n)?;
        let rule = gauss_rule(order)?;
        let mut values = Vec::with_capacity(mesh.num_elements() * rule.len());
        for e in 0..mesh.num_elements() {
            for &[xi, eta] in &rule.points {
                let [x, y] = mesh.map_to_physical(e, xi, eta);
                values.push(f(x, y));
            }
        }
        Ok(Self { n, order, values })
    }

    /// Value at `(x, y)` of the piecewise tensor Lagrange interpolant through the
    /// tabulated Gauss-point values. Lets data declared on one mesh drive another.
    pub fn evaluate(&self, x: f64, y: f64) -> [f64; 2] {
        let (nodes, _) = gauss_legendre(self.order).expect("order validated at construction");
        let h = 1.0 / self.n as f64;
        let j = ((x / h).floor().max(0.0) as usize).min(self.n - 1);
        let k = ((y / h).floor().max(0.0) as usize).min(self.n - 1);
        let xi = 2.0 * (x / h - j as f64) - 1.0;
        let eta = 2.0 * (y / h - k as f64) - 1.0;
        let lx = lagrange_weights(&nodes, xi);
        let ly = lagrange_weights(&nodes, eta);
        let base = (j + k * self.n) * self.order * self.order;
        let mut out = [0.0; 2];
        for (b, wy) in ly.iter().enumerate() {
            for (a, wx) in lx.iter().enumerate() {
                let v = self.values[base + a + b * self.order];
                out[0] += wx * wy * v[0];
                out[1] += wx * wy * v[1];
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let per = self.order * self.order;
        writeln!(out, "# n={} order={}", self.n, self.order)?;
        writeln!(out, "j,k,q,fx,fy")?;
        for (idx, [fx, fy]) in self.values.iter().enumerate() {
            let e = idx / per;
            let (j, k) = (e % self.n + 1, e / self.n + 1);
            writeln!(out, "{},{},{},{:e},{:e}", j, k, idx % per, fx, fy)?;
        }
        Ok(())
    }

    /// Parse the CSV layout above. `expected` overrides or checks the declared `(n, order)`.
    pub fn read_csv<R: BufRead>(input: R, expected: Option<(usize, usize)>) -> Result<Self> {
        let mut declared = None;
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            let t = line.trim();
            if let Some(rest) = t.strip_prefix('#') {
                let mut n = None;
                let mut order = None;
                for kv in rest.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("n", v)) => n = v.parse().ok(),
                        Some(("order", v)) => order = v.parse().ok(),
                        _ => {}
                    }
                }
                if let (Some(n), Some(o)) = (n, order) {
                    declared = Some((n, o));
                }
            } else if !t.is_empty() {
                body.push_str(t);
                body.push('\n');
            }
        }
        let (n, order) = match (declared, expected) {
            (Some(d), Some(e)) if d != e => {
                return Err(Error::ForcingMismatch(format!(
                    "file declares n={} order={}, expected n={} order={}",
                    d.0, d.1, e.0, e.1
                )))
            }
            (Some(d), _) => d,
            (None, Some(e)) => e,
            (None, None) => {
                return Err(Error::ForcingMismatch(
                    "no `# n=.. order=..` declaration".into(),
                ))
            }
        };
        gauss_rule(order)?;
        if n == 0 {
            return Err(Error::ForcingMismatch("n must be positive".into()));
        }
        let per = order * order;
        let total = n * n * per;
        let mut values = vec![[f64::NAN; 2]; total];
        let mut seen = vec![false; total];
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(body.as_bytes());
        for rec in reader.deserialize::<(usize, usize, usize, f64, f64)>() {
            let (j, k, q, fx, fy) = rec?;
            if !(1..=n).contains(&j) || !(1..=n).contains(&k) || q >= per {
                return Err(Error::ForcingMismatch(format!(
                    "row ({j},{k},{q}) out of range"
                )));
            }
            let idx = ((j - 1) + (k - 1) * n) * per + q;
            if seen[idx] {
                return Err(Error::ForcingMismatch(format!(
                    "duplicate row ({j},{k},{q})"
                )));
            }
            seen[idx] = true;
            values[idx] = [fx, fy];
        }
        let missing = seen.iter().filter(|s| !**s).count();
        if missing > 0 {
            return Err(Error::ForcingMismatch(format!(
                "{missing} of {total} rows missing"
            )));
        }
        Ok(Self { n, order, values })
    }
}

fn lagrange_weights(nodes: &[f64], t: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|i| {
            nodes
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != i)
                .map(|(_, xm)| (t - xm) / (nodes[i] - xm))
                .product()
        })
        .collect()
}
