//! Saddle-point solves for the Stokes pairs.
//!
//! The velocity block is factored once with an envelope (skyline) Cholesky
//! factorization; the pressure is then found by conjugate gradients on the
//! Schur complement `B A⁻¹ Bᵀ`, restricted to the constrained pressure
//! subspace. The Lagrange multipliers of the constraints are recovered
//! afterwards and the residual of the full augmented system
//!
//! ```text
//! [  A  -Bᵀ  0  ] [u]   [F]
//! [ -B   0   Gᵀ ] [p] = [0]
//! [  0   G   0  ] [λ]   [0]
//! ```
//!
//! is checked against the solution.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::assembly::{AssembledSystem, Assembler, TabulatedForcing, DEFAULT_QUADRATURE_ORDER};
use crate::elements::ThetaOrder;
use crate::error::{Error, Result};
use crate::mesh::UniformMesh;
use crate::spaces::{
    dot, macro_bubble, DiscreteField, FeSpace, PressureConstraints, SpaceKind, VelocityBasis,
};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Envelope Cholesky factor `A = L Lᵀ`. Row `i` of `L` is stored densely from
/// its first structurally nonzero column up to the diagonal.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

pub fn factor_spd(a: &CsrMatrix) -> Result<SkylineCholesky> {
    SkylineCholesky::factor(a)
}

pub fn apply_inverse(handle: &SkylineCholesky, x: &[f64]) -> Vec<f64> {
    handle.solve(x)
}

impl SkylineCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        assert_eq!(a.nrows(), a.ncols(), "matrix must be square");
        let n = a.nrows();
        let first: Vec<usize> = (0..n)
            .map(|i| {
                a.row(i)
                    .map(|(j, _)| j)
                    .filter(|&j| j <= i)
                    .min()
                    .unwrap_or(i)
            })
            .collect();
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for i in 0..n {
            start.push(total);
            total += i - first[i] + 1;
        }
        start.push(total);
        let mut data = vec![0.0; total];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    data[start[i] + j - first[i]] += v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let diag_in = data[start[i] + i - fi];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let (head, tail) = data.split_at_mut(start[i]);
                let row_i = &tail[..i - fi + 1];
                let row_j = &head[start[j]..start[j] + j - fj + 1];
                let s: f64 = row_i[k0 - fi..j - fi]
                    .iter()
                    .zip(&row_j[k0 - fj..j - fj])
                    .map(|(x, y)| x * y)
                    .sum();
                let ljj = row_j[j - fj];
                tail[j - fi] = (tail[j - fi] - s) / ljj;
            }
            let row_i = &mut data[start[i]..start[i] + i - fi + 1];
            let s: f64 = row_i[..i - fi].iter().map(|x| x * x).sum();
            let d = row_i[i - fi] - s;
            if !(d > 1e-14 * diag_in.abs()) {
                return Err(Error::NotPositiveDefinite { index: i, pivot: d });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(Self { first, start, data })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    /// Stored entries of `L`.
    pub fn stored(&self) -> usize {
        self.data.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.start[i]..self.start[i + 1]]
    }

    /// Forward substitution `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let row = self.row(i);
            let fi = self.first[i];
            let s: f64 = row[..i - fi]
                .iter()
                .zip(&y[fi..i])
                .map(|(l, v)| l * v)
                .sum();
            y[i] = (y[i] - s) / row[i - fi];
        }
        y
    }

    /// Back substitution `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let row = self.row(i);
            let fi = self.first[i];
            x[i] /= row[i - fi];
            let xi = x[i];
            if xi != 0.0 {
                for (xk, l) in x[fi..i].iter_mut().zip(&row[..i - fi]) {
                    *xk -= l * xi;
                }
            }
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim());
        self.solve_upper(&self.solve_lower(b))
    }
}

/// The element pairs the solver knows how to set up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pair {
    /// P1NC × P̃₀ (mean and checkerboard removed).
    #[serde(rename = "p1nc-p0t")]
    P1ncReduced,
    /// (P1NC ⊕ macro bubble) × P₀ (mean removed).
    #[serde(rename = "p1ncb-p0")]
    P1ncBubble,
    /// Conforming Q1 × P̃₀.
    #[serde(rename = "q1-p0t")]
    Q1Reduced,
    /// DSSY × P₀.
    #[serde(rename = "dssy-p0")]
    DssyP0,
}

impl Pair {
    pub const ALL: [Pair; 4] = [
        Pair::P1ncReduced,
        Pair::P1ncBubble,
        Pair::Q1Reduced,
        Pair::DssyP0,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Pair::P1ncReduced => "p1nc-p0t",
            Pair::P1ncBubble => "p1ncb-p0",
            Pair::Q1Reduced => "q1-p0t",
            Pair::DssyP0 => "dssy-p0",
        }
    }

    pub fn removes_checkerboard(self) -> bool {
        matches!(self, Pair::P1ncReduced | Pair::Q1Reduced)
    }

    pub fn needs_macros(self) -> bool {
        matches!(self, Pair::P1ncReduced | Pair::P1ncBubble)
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Pair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pair::ALL
            .into_iter()
            .find(|p| p.id() == s)
            .ok_or_else(|| Error::UnknownPair(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairSpec {
    pub pair: Pair,
    pub n: usize,
    pub nu: f64,
    pub quadrature_order: usize,
    #[serde(skip)]
    pub theta: ThetaOrder,
}

impl PairSpec {
    pub fn new(pair: Pair, n: usize) -> Self {
        Self {
            pair,
            n,
            nu: 1.0,
            quadrature_order: DEFAULT_QUADRATURE_ORDER,
            theta: ThetaOrder::One,
        }
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn with_quadrature(mut self, order: usize) -> Self {
        self.quadrature_order = order;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::ReducedPressureTooSmall(self.n));
        }
        if self.pair.needs_macros() && self.n % 2 != 0 {
            return Err(Error::OddMacroPartition(self.n));
        }
        if self.nu.is_nan() || self.nu <= 0.0 {
            return Err(Error::InvalidViscosity(self.nu));
        }
        Ok(())
    }
}

/// Spaces, constraints and assembler for one `PairSpec`.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub spec: PairSpec,
    pub mesh: Arc<UniformMesh>,
    pub velocity: Arc<VelocityBasis>,
    pub pressure: Arc<FeSpace>,
    pub constraints: PressureConstraints,
    pub assembler: Assembler,
}

/// Body force for a solve.
#[derive(Clone, Copy)]
pub enum Forcing<'a> {
    Zero,
    Pointwise(&'a (dyn Fn(f64, f64) -> [f64; 2] + Sync)),
    Tabulated(&'a TabulatedForcing),
}

impl Discretization {
    pub fn new(spec: PairSpec) -> Result<Self> {
        spec.validate()?;
        let mesh = Arc::new(UniformMesh::new(spec.n)?);
        let pressure = Arc::new(FeSpace::new(&mesh, SpaceKind::P0)?);
        let velocity = match spec.pair {
            Pair::P1ncReduced => {
                VelocityBasis::new(Arc::new(FeSpace::new(&mesh, SpaceKind::P1ncVec0)?))?
            }
            Pair::Q1Reduced => {
                VelocityBasis::new(Arc::new(FeSpace::new(&mesh, SpaceKind::Q1Vec0)?))?
            }
            Pair::DssyP0 => VelocityBasis::new(Arc::new(FeSpace::new(
                &mesh,
                SpaceKind::DssyVec0(spec.theta),
            )?))?,
            Pair::P1ncBubble => {
                let dssy = Arc::new(FeSpace::new(&mesh, SpaceKind::DssyVec0(spec.theta))?);
                let psi = macro_bubble(&dssy)?;
                VelocityBasis::with_bubble(
                    Arc::new(FeSpace::new(&mesh, SpaceKind::P1ncVec0)?),
                    psi,
                )?
            }
        };
        let constraints = if spec.pair.removes_checkerboard() {
            PressureConstraints::reduced(&mesh)?
        } else {
            PressureConstraints::mean_zero(&mesh)
        };
        Ok(Self {
            spec,
            mesh,
            velocity: Arc::new(velocity),
            pressure,
            constraints,
            assembler: Assembler::new(spec.quadrature_order)?,
        })
    }

    pub fn load(&self, forcing: Forcing<'_>) -> Result<Vec<f64>> {
        match forcing {
            Forcing::Zero => Ok(vec![0.0; self.velocity.ndofs()]),
            Forcing::Pointwise(f) => Ok(self.assembler.load(&self.velocity, f)),
            Forcing::Tabulated(t) => self.assembler.load_tabulated(&self.velocity, t),
        }
    }

    pub fn assemble(&self, forcing: Forcing<'_>) -> Result<AssembledSystem> {
        let load = self.load(forcing)?;
        self.assembler.system(
            &self.velocity,
            &self.pressure,
            self.constraints.clone(),
            self.spec.nu,
            load,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostics {
    /// `‖K x − rhs‖∞` of the augmented system.
    pub residual_inf: f64,
    pub rhs_inf: f64,
    pub cg_iterations: usize,
    /// Relative Schur-complement residual at exit.
    pub schur_residual: f64,
    pub factor_entries: usize,
    /// `max |b_h(u_h, q)|` over the orthonormal constrained-pressure directions.
    pub divergence_residual: f64,
    pub pressure_mean: f64,
    pub pressure_checkerboard: f64,
    pub timings: Timings,
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Timings {
    pub assemble: f64,
    pub factor: f64,
    pub solve: f64,
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub spec: PairSpec,
    pub velocity_basis: Arc<VelocityBasis>,
    /// Velocity coefficients over `velocity_basis` (bubble last, when present).
    pub u: Vec<f64>,
    pub p: DiscreteField,
    /// `(constraint name, multiplier)`.
    pub multipliers: Vec<(&'static str, f64)>,
    pub diagnostics: SolveDiagnostics,
}

impl SaddleSolution {
    /// `dof,value` rows over the velocity basis (bubble last, when present).
    pub fn write_velocity_csv<W: Write>(&self, out: W) -> Result<()> {
        write_dof_csv(out, &self.u)
    }

    /// `dof,value` rows over the P₀ coefficients (dof = element id).
    pub fn write_pressure_csv<W: Write>(&self, out: W) -> Result<()> {
        write_dof_csv(out, self.p.coeffs())
    }

    pub fn diagnostics_json(&self) -> serde_json::Value {
        let multipliers: serde_json::Map<String, serde_json::Value> = self
            .multipliers
            .iter()
            .map(|(name, v)| (name.to_string(), serde_json::json!(v)))
            .collect();
        serde_json::json!({
            "schema": 1,
            "pair": self.spec.pair,
            "n": self.spec.n,
            "nu": self.spec.nu,
            "quadrature_order": self.spec.quadrature_order,
            "multipliers": multipliers,
            "bubble_coefficient": self.bubble_coefficient(),
            "diagnostics": self.diagnostics,
        })
    }

    pub fn bubble_coefficient(&self) -> Option<f64> {
        self.velocity_basis.bubble_dof().map(|d| self.u[d])
    }

    /// Velocity without the bubble component, as a field of the underlying space.
    pub fn velocity_field(&self) -> DiscreteField {
        let space = Arc::clone(self.velocity_basis.space());
        let n = space.ndofs();
        DiscreteField::new(space, self.u[..n].to_vec())
    }

    pub fn evaluate_velocity(&self, e: usize, xi: f64, eta: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        self.velocity_basis.evaluate(&self.u, e, xi, eta)
    }
}

/// Reusable factorization of one discretization's velocity block.
pub struct SaddleSolver {
    pub system: AssembledSystem,
    pub factor: SkylineCholesky,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl SaddleSolver {
    pub fn new(system: AssembledSystem) -> Result<Self> {
        let factor = SkylineCholesky::factor(&system.a)?;
        let np = system.b.nrows();
        Ok(Self {
            system,
            factor,
            tolerance: 1e-13,
            max_iterations: 20 * np + 100,
        })
    }

    /// `q ↦ P B A⁻¹ Bᵀ P q`
    pub fn schur_apply(&self, q: &[f64]) -> Vec<f64> {
        let mut q = q.to_vec();
        self.system.constraints.project(&mut q);
        let bt = self.system.b.tr_mul_vec(&q);
        let w = self.factor.solve(&bt);
        let mut out = self.system.b.mul_vec(&w);
        self.system.constraints.project(&mut out);
        out
    }

    /// Solve `P S p = rhs` on the constrained subspace by conjugate gradients.
    pub fn schur_solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, usize, f64)> {
        let np = rhs.len();
        let mut r = rhs.to_vec();
        self.system.constraints.project(&mut r);
        let mut p = vec![0.0; np];
        let rhs_norm = dot(&r, &r).sqrt();
        if rhs_norm == 0.0 {
            return Ok((p, 0, 0.0));
        }
        let mut d = r.clone();
        let mut rr = dot(&r, &r);
        let mut curvature_scale: f64 = 0.0;
        for it in 0..self.max_iterations {
            let sd = self.schur_apply(&d);
            let dsd = dot(&d, &sd);
            let dd = dot(&d, &d);
            curvature_scale = curvature_scale.max(dsd / dd);
            if dsd <= 1e-12 * curvature_scale * dd {
                let norm = dd.sqrt();
                return Err(Error::Singular {
                    curvature: dsd / dd,
                    near_null: d.iter().map(|x| x / norm).collect(),
                });
            }
            let alpha = rr / dsd;
            for i in 0..np {
                p[i] += alpha * d[i];
                r[i] -= alpha * sd[i];
            }
            let rr_new = dot(&r, &r);
            let rel = rr_new.sqrt() / rhs_norm;
            if rel <= self.tolerance {
                return Ok((p, it + 1, rel));
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..np {
                d[i] = r[i] + beta * d[i];
            }
        }
        Err(Error::NotConverged {
            iterations: self.max_iterations,
            residual: rr.sqrt() / rhs_norm,
        })
    }

    /// Returns `(u, p, λ, cg iterations, schur residual)`.
    pub fn solve(&self) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize, f64)> {
        let sys = &self.system;
        let a_inv_f = self.factor.solve(&sys.load);
        let g: Vec<f64> = sys.b.mul_vec(&a_inv_f).into_iter().map(|x| -x).collect();
        let (p, iters, rel) = self.schur_solve(&g)?;
        let mut rhs = sys.b.tr_mul_vec(&p);
        rhs.iter_mut().zip(&sys.load).for_each(|(x, f)| *x += f);
        let u = self.factor.solve(&rhs);
        let lambda = self.multipliers(&u);
        Ok((u, p, lambda, iters, rel))
    }

    /// Least-squares `λ` with `Gᵀ λ = B u`.
    fn multipliers(&self, u: &[f64]) -> Vec<f64> {
        let rows = self.system.constraints.rows();
        let bu = self.system.b.mul_vec(u);
        let k = rows.len();
        let gram = nalgebra::DMatrix::from_fn(k, k, |i, j| dot(&rows[i], &rows[j]));
        let rhs = nalgebra::DVector::from_fn(k, |i, _| dot(&rows[i], &bu));
        match gram.cholesky() {
            Some(ch) => ch.solve(&rhs).iter().copied().collect(),
            None => vec![0.0; k],
        }
    }

    /// The augmented matrix `K` in the layout documented on this module.
    pub fn augmented_matrix(&self) -> CsrMatrix {
        augmented_matrix(&self.system)
    }
}

fn write_dof_csv<W: Write>(out: W, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dof", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn augmented_matrix(sys: &AssembledSystem) -> CsrMatrix {
    let nv = sys.a.nrows();
    let np = sys.b.nrows();
    let nc = sys.constraints.len();
    let n = nv + np + nc;
    let mut t = TripletBuilder::new(n, n);
    for (i, j, v) in sys.a.iter() {
        t.push(i, j, v);
    }
    for (i, j, v) in sys.b.iter() {
        t.push(nv + i, j, -v);
        t.push(j, nv + i, -v);
    }
    for (c, row) in sys.constraints.rows().iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            t.push(nv + np + c, nv + i, *v);
            t.push(nv + i, nv + np + c, *v);
        }
    }
    t.build()
}

pub fn solve_stokes(spec: PairSpec, forcing: Forcing<'_>) -> Result<SaddleSolution> {
    let disc = Discretization::new(spec)?;
    solve_discretization(&disc, forcing)
}

pub fn solve_discretization(disc: &Discretization, forcing: Forcing<'_>) -> Result<SaddleSolution> {
    let clock = Instant::now();
    let system = disc.assemble(forcing)?;
    let assemble = clock.elapsed().as_secs_f64();
    let solver = SaddleSolver::new(system)?;
    let factor = clock.elapsed().as_secs_f64() - assemble;
    let (u, p, lambda, cg_iterations, schur_residual) = solver.solve()?;
    let timings = Timings {
        assemble,
        factor,
        solve: clock.elapsed().as_secs_f64() - assemble - factor,
    };
    let sys = &solver.system;

    let k = solver.augmented_matrix();
    let mut x = u.clone();
    x.extend_from_slice(&p);
    x.extend_from_slice(&lambda);
    let kx = k.mul_vec(&x);
    let nv = u.len();
    let residual_inf = kx
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if i < nv {
                (v - sys.load[i]).abs()
            } else {
                v.abs()
            }
        })
        .fold(0.0, f64::max);
    let rhs_inf = sys.load.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let bu = sys.b.mul_vec(&u);
    let mut bu_free = bu.clone();
    sys.constraints.project(&mut bu_free);
    let divergence_residual = bu_free.iter().fold(0.0_f64, |m, v| m.max(v.abs()));

    let h2 = disc.mesh.h() * disc.mesh.h();
    let pressure_mean = h2 * p.iter().sum::<f64>();
    let sigma = crate::spaces::checkerboard(&disc.mesh);
    let pressure_checkerboard = h2 * dot(&p, &sigma);

    let multipliers = sys
        .constraints
        .names()
        .iter()
        .copied()
        .zip(lambda.iter().copied())
        .collect();
    Ok(SaddleSolution {
        spec: disc.spec,
        velocity_basis: Arc::clone(&disc.velocity),
        u,
        p: DiscreteField::new(Arc::clone(&disc.pressure), p),
        multipliers,
        diagnostics: SolveDiagnostics {
            residual_inf,
            rhs_inf,
            cg_iterations,
            schur_residual,
            factor_entries: solver.factor.stored(),
            divergence_residual,
            pressure_mean,
            pressure_checkerboard,
            timings,
        },
    })
}
