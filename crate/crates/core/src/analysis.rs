//! Inf-sup estimates, spurious pressure modes, error norms, convergence
//! studies and the velocity/pressure equivalence check between the two
//! stable pairs.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::{Assembler, TabulatedForcing};
use crate::elements::{gauss_rule, QuadratureRule};
use crate::error::{Error, Result};
use crate::mesh::UniformMesh;
use crate::solver::{
    solve_discretization, Discretization, Forcing, Pair, PairSpec, SaddleSolution, SaddleSolver,
};
use crate::spaces::{checkerboard, dot, interpolate_p1nc, FeSpace, SpaceKind, VelocityBasis};

const TWO_PI: f64 = 2.0 * PI;

/// `s(t) = sin(2πt)(t² − t)`
pub fn s(t: f64) -> f64 {
    (TWO_PI * t).sin() * (t * t - t)
}

pub fn ds(t: f64) -> f64 {
    let (sn, cs) = (TWO_PI * t).sin_cos();
    TWO_PI * cs * (t * t - t) + sn * (2.0 * t - 1.0)
}

pub fn d2s(t: f64) -> f64 {
    let (sn, cs) = (TWO_PI * t).sin_cos();
    let w = TWO_PI;
    -w * w * sn * (t * t - t) + 2.0 * w * cs * (2.0 * t - 1.0) + 2.0 * sn
}

pub fn d3s(t: f64) -> f64 {
    let (sn, cs) = (TWO_PI * t).sin_cos();
    let w = TWO_PI;
    -w * w * w * cs * (t * t - t) - 3.0 * w * w * sn * (2.0 * t - 1.0) + 6.0 * w * cs
}

/// Pressure profile `f(y)` in `p = sin(2πx) f(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FCase {
    /// `1 / (3 − tan² y)`
    One,
    /// `1 / (25 − 10 tan² y) + 3/10`, steep near `y = 1`
    Two,
}

impl FCase {
    pub fn f(self, y: f64) -> f64 {
        let t2 = y.tan().powi(2);
        match self {
            FCase::One => 1.0 / (3.0 - t2),
            FCase::Two => 1.0 / (25.0 - 10.0 * t2) + 0.3,
        }
    }

    pub fn df(self, y: f64) -> f64 {
        let t = y.tan();
        let sec2 = 1.0 + t * t;
        match self {
            FCase::One => 2.0 * t * sec2 / (3.0 - t * t).powi(2),
            FCase::Two => 20.0 * t * sec2 / (25.0 - 10.0 * t * t).powi(2),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            FCase::One => 1,
            FCase::Two => 2,
        }
    }
}

impl fmt::Display for FCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl FromStr for FCase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "1" => Ok(FCase::One),
            "2" => Ok(FCase::Two),
            other => Err(format!("f-case must be 1 or 2 (got `{other}`)")),
        }
    }
}

/// Exact fields an error norm can be measured against.
pub trait ExactSolution: Sync {
    fn velocity(&self, x: f64, y: f64) -> [f64; 2];
    /// `[component][direction]`
    fn velocity_gradient(&self, x: f64, y: f64) -> [[f64; 2]; 2];
    fn pressure(&self, x: f64, y: f64) -> f64;
}

/// `u = (s(x)s′(y), −s(y)s′(x))`, `p = sin(2πx) f(y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub f_case: FCase,
    pub nu: f64,
}

impl ManufacturedCase {
    pub fn new(f_case: FCase) -> Self {
        Self { f_case, nu: 1.0 }
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn velocity_laplacian(&self, x: f64, y: f64) -> [f64; 2] {
        [
            d2s(x) * ds(y) + s(x) * d3s(y),
            -s(y) * d3s(x) - d2s(y) * ds(x),
        ]
    }

    pub fn pressure_gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let (sn, cs) = (TWO_PI * x).sin_cos();
        [TWO_PI * cs * self.f_case.f(y), sn * self.f_case.df(y)]
    }

    /// `−ν Δu + ∇p`
    pub fn forcing(&self, x: f64, y: f64) -> [f64; 2] {
        let l = self.velocity_laplacian(x, y);
        let g = self.pressure_gradient(x, y);
        [-self.nu * l[0] + g[0], -self.nu * l[1] + g[1]]
    }

    pub fn divergence(&self, x: f64, y: f64) -> f64 {
        let g = self.velocity_gradient(x, y);
        g[0][0] + g[1][1]
    }
}

impl ExactSolution for ManufacturedCase {
    fn velocity(&self, x: f64, y: f64) -> [f64; 2] {
        [s(x) * ds(y), -s(y) * ds(x)]
    }

    fn velocity_gradient(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        [
            [ds(x) * ds(y), s(x) * d2s(y)],
            [-s(y) * d2s(x), -ds(y) * ds(x)],
        ]
    }

    fn pressure(&self, x: f64, y: f64) -> f64 {
        (TWO_PI * x).sin() * self.f_case.f(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    /// `|u − u_h|_{1,h}`
    pub h1_semi: f64,
    /// `‖u − u_h‖₀`
    pub l2_velocity: f64,
    /// `‖p − p_h‖₀`
    pub l2_pressure: f64,
}

/// Elementwise quadrature of the squared differences between `discrete`
/// (value, gradient and pressure at reference coordinates of an element) and
/// `exact`.
pub fn error_norms_with<D>(
    mesh: &UniformMesh,
    rule: &QuadratureRule,
    discrete: D,
    exact: &dyn ExactSolution,
) -> ErrorNorms
where
    D: Fn(usize, f64, f64) -> ([f64; 2], [[f64; 2]; 2], f64),
{
    let jac = mesh.h() * mesh.h() / 4.0;
    let (mut e1, mut e0, mut ep) = (0.0, 0.0, 0.0);
    for e in 0..mesh.num_elements() {
        for (&[xi, eta], w) in rule.points.iter().zip(&rule.weights) {
            let [x, y] = mesh.map_to_physical(e, xi, eta);
            let (uh, gh, ph) = discrete(e, xi, eta);
            let u = exact.velocity(x, y);
            let g = exact.velocity_gradient(x, y);
            let p = exact.pressure(x, y);
            let wj = w * jac;
            for c in 0..2 {
                e0 += wj * (u[c] - uh[c]).powi(2);
                e1 += wj * ((g[c][0] - gh[c][0]).powi(2) + (g[c][1] - gh[c][1]).powi(2));
            }
            ep += wj * (p - ph).powi(2);
        }
    }
    ErrorNorms {
        h1_semi: e1.sqrt(),
        l2_velocity: e0.sqrt(),
        l2_pressure: ep.sqrt(),
    }
}

/// Errors of a discrete solution, measured with the quadrature rule it was solved with.
pub fn error_norms(solution: &SaddleSolution, exact: &dyn ExactSolution) -> Result<ErrorNorms> {
    let rule = gauss_rule(solution.spec.quadrature_order)?;
    let mesh = solution.velocity_basis.mesh();
    Ok(error_norms_with(
        mesh,
        &rule,
        |e, xi, eta| {
            let (v, g) = solution.evaluate_velocity(e, xi, eta);
            (v, g, solution.p.value(e, xi, eta)[0])
        },
        exact,
    ))
}

/// Errors of `solution` against a discrete `reference` on a mesh that nests it;
/// the quadrature runs over the reference elements.
pub fn reference_errors(
    solution: &SaddleSolution,
    reference: &SaddleSolution,
) -> Result<ErrorNorms> {
    let coarse = solution.velocity_basis.mesh();
    let fine = reference.velocity_basis.mesh();
    if fine.n() % coarse.n() != 0 {
        return Err(Error::MeshMismatch(coarse.n(), fine.n()));
    }
    let rule = gauss_rule(reference.spec.quadrature_order)?;
    let jac = fine.h() * fine.h() / 4.0;
    let hc = coarse.h();
    let (mut e1, mut e0, mut ep) = (0.0, 0.0, 0.0);
    for e in 0..fine.num_elements() {
        for (&[xi, eta], w) in rule.points.iter().zip(&rule.weights) {
            let [x, y] = fine.map_to_physical(e, xi, eta);
            let (ur, gr) = reference.evaluate_velocity(e, xi, eta);
            let pr = reference.p.value(e, xi, eta)[0];
            let ec = coarse.locate(x, y);
            let [ox, oy] = coarse.element_origin(ec);
            let (cx, cy) = (2.0 * (x - ox) / hc - 1.0, 2.0 * (y - oy) / hc - 1.0);
            let (uc, gc) = solution.evaluate_velocity(ec, cx, cy);
            let pc = solution.p.value(ec, cx, cy)[0];
            let wj = w * jac;
            for c in 0..2 {
                e0 += wj * (ur[c] - uc[c]).powi(2);
                e1 += wj * ((gr[c][0] - gc[c][0]).powi(2) + (gr[c][1] - gc[c][1]).powi(2));
            }
            ep += wj * (pr - pc).powi(2);
        }
    }
    Ok(ErrorNorms {
        h1_semi: e1.sqrt(),
        l2_velocity: e0.sqrt(),
        l2_pressure: ep.sqrt(),
    })
}

/// `log₂(e_{2h} / e_h)`
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Levels must be strictly increasing, each twice the previous.
pub fn validate_levels(ns: &[usize]) -> Result<()> {
    if ns.is_empty() {
        return Err(Error::InvalidLevels("empty level list".into()));
    }
    for w in ns.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(Error::InvalidLevels(format!(
                "{} does not follow {} by a halving of h",
                w[1], w[0]
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelRecord {
    pub n: usize,
    pub h: f64,
    pub errors: ErrorNorms,
    pub order_h1: Option<f64>,
    pub order_l2_velocity: Option<f64>,
    pub order_l2_pressure: Option<f64>,
    pub cg_iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub pair: Pair,
    /// What the errors are measured against.
    pub target: String,
    pub levels: Vec<LevelRecord>,
}

impl ConvergenceReport {
    fn from_errors(pair: Pair, target: String, rows: Vec<(usize, ErrorNorms, usize, f64)>) -> Self {
        let mut levels: Vec<LevelRecord> = Vec::with_capacity(rows.len());
        for (n, errors, cg_iterations, relative_residual) in rows {
            let prev = levels.last().map(|l| l.errors);
            levels.push(LevelRecord {
                n,
                h: 1.0 / n as f64,
                errors,
                order_h1: prev.map(|p| observed_order(p.h1_semi, errors.h1_semi)),
                order_l2_velocity: prev.map(|p| observed_order(p.l2_velocity, errors.l2_velocity)),
                order_l2_pressure: prev.map(|p| observed_order(p.l2_pressure, errors.l2_pressure)),
                cg_iterations,
                relative_residual,
            });
        }
        Self {
            pair,
            target,
            levels,
        }
    }
}

/// Run `job` for every level on its own thread; results come back in level order.
fn per_level<T: Send>(ns: &[usize], job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = ns
            .iter()
            .map(|&n| {
                let job = &job;
                scope.spawn(move || job(n))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("level worker panicked"))
            .collect()
    })
}

fn residual_ratio(sol: &SaddleSolution) -> f64 {
    let d = &sol.diagnostics;
    if d.rhs_inf > 0.0 {
        d.residual_inf / d.rhs_inf
    } else {
        d.residual_inf
    }
}

/// Solve the manufactured problem on every level of `ns` and tabulate errors and orders.
pub fn convergence_study(
    template: PairSpec,
    case: &ManufacturedCase,
    ns: &[usize],
) -> Result<ConvergenceReport> {
    validate_levels(ns)?;
    let case = case.with_nu(template.nu);
    let rows = per_level(ns, |n| {
        let spec = PairSpec { n, ..template };
        let disc = Discretization::new(spec)?;
        let f = |x: f64, y: f64| case.forcing(x, y);
        let sol = solve_discretization(&disc, Forcing::Pointwise(&f))?;
        let errors = error_norms(&sol, &case)?;
        Ok((
            n,
            errors,
            sol.diagnostics.cg_iterations,
            residual_ratio(&sol),
        ))
    })?;
    Ok(ConvergenceReport::from_errors(
        template.pair,
        format!("manufactured f-case {}", case.f_case),
        rows,
    ))
}

/// Convergence against a DSSY × P₀ solution on a finer mesh for tabulated forcing.
pub fn convergence_against_reference(
    template: PairSpec,
    forcing: &TabulatedForcing,
    ns: &[usize],
    reference_n: usize,
) -> Result<ConvergenceReport> {
    validate_levels(ns)?;
    let interpolated = |x: f64, y: f64| forcing.evaluate(x, y);
    let solve_on = |spec: PairSpec| -> Result<SaddleSolution> {
        let disc = Discretization::new(spec)?;
        if forcing.n == spec.n && forcing.order == spec.quadrature_order {
            solve_discretization(&disc, Forcing::Tabulated(forcing))
        } else {
            solve_discretization(&disc, Forcing::Pointwise(&interpolated))
        }
    };
    let reference = solve_on(PairSpec {
        pair: Pair::DssyP0,
        n: reference_n,
        ..template
    })?;
    for &n in ns {
        if reference_n % n != 0 {
            return Err(Error::MeshMismatch(n, reference_n));
        }
    }
    let rows = per_level(ns, |n| {
        let sol = solve_on(PairSpec { n, ..template })?;
        let errors = reference_errors(&sol, &reference)?;
        Ok((
            n,
            errors,
            sol.diagnostics.cg_iterations,
            residual_ratio(&sol),
        ))
    })?;
    Ok(ConvergenceReport::from_errors(
        template.pair,
        format!("dssy-p0 reference at n = {reference_n}"),
        rows,
    ))
}

/// `|u − Π_h u|_{1,h}` and `‖u − Π_h u‖₀` for the P1NC interpolant of the
/// manufactured velocity.
pub fn interpolation_errors(
    case: &ManufacturedCase,
    n: usize,
    points_per_axis: usize,
) -> Result<(f64, f64)> {
    let mesh = Arc::new(UniformMesh::new(n)?);
    let space = Arc::new(FeSpace::new(&mesh, SpaceKind::P1ncVec0)?);
    let pi_u = interpolate_p1nc(|x, y| case.velocity(x, y), &space)?;
    let rule = gauss_rule(points_per_axis)?;
    let e = error_norms_with(
        &mesh,
        &rule,
        |e, xi, eta| (pi_u.value(e, xi, eta), pi_u.gradient(e, xi, eta), 0.0),
        case,
    );
    Ok((e.h1_semi, e.l2_velocity))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenMethod {
    Dense,
    Lanczos,
}

/// Largest `n` for which the automatic choice uses the dense eigensolver.
pub const DENSE_INFSUP_LIMIT: usize = 32;

#[derive(Debug, Clone, Serialize)]
pub struct InfSupEstimate {
    pub pair: Pair,
    pub n: usize,
    pub h: f64,
    pub beta: f64,
    pub lambda_min: f64,
    pub method: EigenMethod,
    pub iterations: usize,
    /// `‖S q − λ q‖` for the returned unit mode (pressure-mass scaled operator).
    pub residual: f64,
    pub constrained_dim: usize,
    /// Pressure mode attaining the minimum, unit Euclidean norm.
    #[serde(skip)]
    pub mode: Vec<f64>,
}

/// Mass-scaled Schur operator `q ↦ P M^{-1/2} B A⁻¹ Bᵀ M^{-1/2} P q` on the constrained pressures.
struct SchurOperator {
    solver: SaddleSolver,
    inv_sqrt_mass: Vec<f64>,
    nu: f64,
}

impl SchurOperator {
    fn new(spec: PairSpec) -> Result<Self> {
        let disc = Discretization::new(spec)?;
        let system = disc.assemble(Forcing::Zero)?;
        let inv_sqrt_mass = system
            .pressure_mass
            .diagonal_values()
            .iter()
            .map(|m| 1.0 / m.sqrt())
            .collect();
        Ok(Self {
            solver: SaddleSolver::new(system)?,
            inv_sqrt_mass,
            nu: spec.nu,
        })
    }

    fn dim(&self) -> usize {
        self.inv_sqrt_mass.len()
    }

    fn constrained_dim(&self) -> usize {
        self.dim() - self.solver.system.constraints.len()
    }

    fn project(&self, q: &mut [f64]) {
        self.solver.system.constraints.project(q);
    }

    /// Applied with the viscosity scaled out, so eigenvalues refer to `|v|²_{1,h}`.
    fn apply(&self, q: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = q
            .iter()
            .zip(&self.inv_sqrt_mass)
            .map(|(a, b)| a * b)
            .collect();
        let mut out = self.solver.schur_apply(&scaled);
        out.iter_mut()
            .zip(&self.inv_sqrt_mass)
            .for_each(|(a, b)| *a *= b * self.nu);
        self.project(&mut out);
        out
    }

    /// All columns at once, spread over threads.
    fn dense(&self) -> DMatrix<f64> {
        let np = self.dim();
        let threads = std::thread::available_parallelism()
            .map_or(1, |t| t.get())
            .min(np.max(1));
        let chunk = np.div_ceil(threads);
        let columns: Vec<Vec<f64>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    scope.spawn(move || {
                        (t * chunk..((t + 1) * chunk).min(np))
                            .map(|i| {
                                let mut e = vec![0.0; np];
                                e[i] = 1.0;
                                self.apply(&e)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        let mut m = DMatrix::from_fn(np, np, |i, j| columns[j][i]);
        let sym = (&m + m.transpose()) * 0.5;
        m.copy_from(&sym);
        m
    }
}

pub fn infsup_constant(spec: PairSpec) -> Result<InfSupEstimate> {
    let method = if spec.n <= DENSE_INFSUP_LIMIT {
        EigenMethod::Dense
    } else {
        EigenMethod::Lanczos
    };
    infsup_constant_with(spec, method)
}

pub fn infsup_constant_with(spec: PairSpec, method: EigenMethod) -> Result<InfSupEstimate> {
    infsup_constant_seeded(spec, method, 0x5eed)
}

/// `seed` picks the Lanczos starting vector; the dense path ignores it.
pub fn infsup_constant_seeded(
    spec: PairSpec,
    method: EigenMethod,
    seed: u64,
) -> Result<InfSupEstimate> {
    let op = SchurOperator::new(spec)?;
    if op.constrained_dim() == 0 {
        return Err(Error::EmptyConstrainedSpace);
    }
    let (lambda, mode, iterations) = match method {
        EigenMethod::Dense => {
            let (l, v) = dense_smallest(&op);
            (l, v, 1)
        }
        EigenMethod::Lanczos => lanczos_smallest(&op, seed, 3000)?,
    };
    let sq = op.apply(&mode);
    let residual = sq
        .iter()
        .zip(&mode)
        .map(|(a, b)| (a - lambda * b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(InfSupEstimate {
        pair: spec.pair,
        n: spec.n,
        h: 1.0 / spec.n as f64,
        beta: lambda.max(0.0).sqrt(),
        lambda_min: lambda,
        method,
        iterations,
        residual,
        constrained_dim: op.constrained_dim(),
        mode,
    })
}

/// Smallest eigenpair on the constrained subspace: the removed directions are
/// lifted far above the spectrum before a full symmetric eigensolve.
fn dense_smallest(op: &SchurOperator) -> (f64, Vec<f64>) {
    let mut s = op.dense();
    let lift = 10.0 * s.diagonal().iter().map(|d| d.abs()).sum::<f64>().max(1.0);
    for b in op.solver.system.constraints.basis() {
        for i in 0..b.len() {
            for j in 0..b.len() {
                s[(i, j)] += lift * b[i] * b[j];
            }
        }
    }
    let eig = SymmetricEigen::new(s);
    let (k, lambda) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty spectrum");
    let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    op.project(&mut v);
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    (lambda, v)
}

/// Number of eigenvalues of the symmetric tridiagonal `(alpha, beta)` below `x`.
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..alpha.len() {
        let off = if i == 0 {
            0.0
        } else {
            beta[i - 1] * beta[i - 1]
        };
        d = alpha[i] - x - if i == 0 { 0.0 } else { off / d };
        if d == 0.0 {
            d = -f64::EPSILON * (alpha[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

fn tridiagonal_smallest(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let radius = |i: usize| {
        (if i > 0 { beta[i - 1].abs() } else { 0.0 })
            + (if i + 1 < k { beta[i].abs() } else { 0.0 })
    };
    let mut lo = (0..k)
        .map(|i| alpha[i] - radius(i))
        .fold(f64::INFINITY, f64::min);
    let mut hi = (0..k)
        .map(|i| alpha[i] + radius(i))
        .fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(alpha, beta, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Lanczos with full reorthogonalization for the smallest eigenpair.
fn lanczos_smallest(
    op: &SchurOperator,
    seed: u64,
    max_iter: usize,
) -> Result<(f64, Vec<f64>, usize)> {
    let dim = op.constrained_dim();
    let max_iter = max_iter.min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    op.project(&mut q);
    let norm = dot(&q, &q).sqrt();
    q.iter_mut().for_each(|x| *x /= norm);

    let mut basis = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut previous = f64::INFINITY;
    let mut best = (f64::INFINITY, Vec::new(), f64::INFINITY);
    for k in 0..max_iter {
        let mut w = op.apply(&basis[k]);
        let a = dot(&w, &basis[k]);
        alpha.push(a);
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        op.project(&mut w);
        let b = dot(&w, &w).sqrt();
        let scale = alpha.iter().map(|x| x.abs()).fold(0.0, f64::max).max(b);
        let exhausted = b <= 1e-13 * scale || k + 1 == max_iter;
        if (k + 1) % 10 == 0 || exhausted {
            let theta = tridiagonal_smallest(&alpha, &beta);
            if (theta - previous).abs() <= 1e-12 * scale || exhausted {
                let (theta, x) = ritz_pair(&alpha, &beta, &basis);
                let r = op.apply(&x);
                let res = r
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - theta * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if res < best.2 {
                    best = (theta, x, res);
                }
                if res <= 1e-7 * scale || exhausted {
                    if res > 1e-5 * scale {
                        return Err(Error::NotConverged {
                            iterations: k + 1,
                            residual: res,
                        });
                    }
                    return Ok((best.0, best.1, k + 1));
                }
            }
            previous = theta;
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(w);
    }
    unreachable!("loop returns once the Krylov space is exhausted")
}

fn ritz_pair(alpha: &[f64], beta: &[f64], basis: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let (m, theta) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty");
    let z = eig.eigenvectors.column(m);
    let mut x = vec![0.0; basis[0].len()];
    for (i, v) in basis.iter().take(k).enumerate() {
        x.iter_mut().zip(v).for_each(|(a, b)| *a += z[i] * b);
    }
    let norm = dot(&x, &x).sqrt();
    x.iter_mut().for_each(|a| *a /= norm);
    (theta, x)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpuriousReport {
    pub velocity: String,
    pub n: usize,
    pub dimension: usize,
    /// Length of the projection of the unit checkerboard onto the kernel.
    pub checkerboard_alignment: f64,
    /// Smallest eigenvalue of `B Bᵀ` on mean-zero pressures, relative to the largest.
    pub smallest_relative: f64,
    /// Orthonormal kernel basis over the P₀ coefficients.
    #[serde(skip)]
    pub basis: Vec<Vec<f64>>,
}

/// Mean-zero pressures `q` with `b_h(v, q) = 0` for every `v` of the velocity basis.
pub fn spurious_modes(velocity: &VelocityBasis, pressure: &FeSpace) -> Result<SpuriousReport> {
    let b = Assembler::default().div_pressure(velocity, pressure)?;
    let np = b.nrows();
    let bd = b.to_dense();
    let mut g = &bd * bd.transpose();
    let top = SymmetricEigen::new(g.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let lift = top.max(1.0);
    // lift the constant direction out of the way
    for i in 0..np {
        for j in 0..np {
            g[(i, j)] += lift / np as f64;
        }
    }
    let eig = SymmetricEigen::new(g);
    let tol = 1e-10 * lift;
    let mut basis = Vec::new();
    let mut smallest = f64::INFINITY;
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        smallest = smallest.min(l / lift);
        if l <= tol {
            basis.push(
                eig.eigenvectors
                    .column(k)
                    .iter()
                    .copied()
                    .collect::<Vec<f64>>(),
            );
        }
    }
    let sigma = checkerboard(velocity.mesh());
    let sn = dot(&sigma, &sigma).sqrt();
    let alignment = basis
        .iter()
        .map(|v| (dot(v, &sigma) / sn).powi(2))
        .fold(0.0, |a, b| a + b)
        .sqrt();
    let label = match (velocity.space().kind(), velocity.bubble()) {
        (k, Some(_)) => format!("{k}+bubble"),
        (k, None) => k.to_string(),
    };
    Ok(SpuriousReport {
        velocity: label,
        n: velocity.mesh().n(),
        dimension: basis.len(),
        checkerboard_alignment: alignment,
        smallest_relative: smallest,
        basis,
    })
}

/// Spurious modes for the velocity space of `pair` against unconstrained P₀.
pub fn spurious_modes_for_pair(pair: Pair, n: usize) -> Result<SpuriousReport> {
    let disc = Discretization::new(PairSpec::new(pair, n))?;
    spurious_modes(&disc.velocity, &disc.pressure)
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub n: usize,
    pub h: f64,
    /// `max |u − u′|` over the P1NC coefficients.
    pub max_velocity_difference: f64,
    /// `(f, ψ_b)` from the bubble row of the load vector.
    pub bubble_load: f64,
    /// `−h (f, ψ_b)`
    pub predicted_alpha: f64,
    /// `(p′ − p, σ) / (σ, σ)`
    pub observed_alpha: f64,
    /// `max |p′ − p − observed α σ|`
    pub checkerboard_residual: f64,
    pub bubble_coefficient: f64,
    /// `h · b_h(ψ_b, σ)`
    pub bubble_checkerboard_pairing: f64,
    pub passed: bool,
}

/// Solve with both stable pairs and compare velocities and pressures.
pub fn equivalence_report(forcing: Forcing<'_>, n: usize) -> Result<EquivalenceReport> {
    let reduced = Discretization::new(PairSpec::new(Pair::P1ncReduced, n))?;
    let enriched = Discretization::new(PairSpec::new(Pair::P1ncBubble, n))?;
    let sol = solve_discretization(&reduced, forcing)?;
    let sol_b = solve_discretization(&enriched, forcing)?;
    let h = reduced.mesh.h();
    let bubble_dof = enriched
        .velocity
        .bubble_dof()
        .expect("enriched pair has a bubble");

    let max_velocity_difference = sol
        .u
        .iter()
        .zip(&sol_b.u)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let bubble_load = enriched.load(forcing)?[bubble_dof];
    let predicted_alpha = -h * bubble_load;

    let sigma = checkerboard(&reduced.mesh);
    let diff: Vec<f64> = sol_b
        .p
        .coeffs()
        .iter()
        .zip(sol.p.coeffs())
        .map(|(a, b)| a - b)
        .collect();
    let observed_alpha = dot(&diff, &sigma) / dot(&sigma, &sigma);
    let checkerboard_residual = diff
        .iter()
        .zip(&sigma)
        .map(|(d, s)| (d - observed_alpha * s).abs())
        .fold(0.0, f64::max);
    let b = enriched
        .assembler
        .div_pressure(&enriched.velocity, &enriched.pressure)?;
    let pairing = h
        * (0..b.nrows())
            .map(|i| b.get(i, bubble_dof) * sigma[i])
            .sum::<f64>();
    let bubble_coefficient = sol_b.u[bubble_dof];

    let passed = max_velocity_difference <= 1e-9
        && (observed_alpha - predicted_alpha).abs() <= 1e-9
        && checkerboard_residual <= 1e-9
        && bubble_coefficient.abs() <= 1e-10;
    Ok(EquivalenceReport {
        n,
        h,
        max_velocity_difference,
        bubble_load,
        predicted_alpha,
        observed_alpha,
        checkerboard_residual,
        bubble_coefficient,
        bubble_checkerboard_pairing: pairing,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, t: f64) -> f64 {
        let d = 1e-5;
        (f(t + d) - f(t - d)) / (2.0 * d)
    }

    #[test]
    fn profile_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.0..1.0);
            assert!((ds(t) - central(s, t)).abs() < 1e-6);
            assert!((d2s(t) - central(ds, t)).abs() < 1e-6);
            assert!((d3s(t) - central(d2s, t)).abs() < 1e-6);
            for c in [FCase::One, FCase::Two] {
                let fd = central(|y| c.f(y), t);
                assert!((c.df(t) - fd).abs() < 1e-6 * fd.abs().max(1.0), "{c} {t}");
            }
        }
    }

    #[test]
    fn manufactured_fields() {
        let case = ManufacturedCase::new(FCase::One);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t: f64 = rng.random_range(0.0..1.0);
            for (x, y) in [(0.0, t), (1.0, t), (t, 0.0), (t, 1.0)] {
                let u = case.velocity(x, y);
                assert!(u[0].abs() < 1e-15 && u[1].abs() < 1e-15);
            }
            let (x, y) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            assert!(case.divergence(x, y).abs() < 1e-14);
            // gradient and laplacian against differences of the closed forms
            let g = case.velocity_gradient(x, y);
            for c in 0..2 {
                assert!((g[c][0] - central(|x| case.velocity(x, y)[c], x)).abs() < 1e-6);
                assert!((g[c][1] - central(|y| case.velocity(x, y)[c], y)).abs() < 1e-6);
            }
            let lap = case.velocity_laplacian(x, y);
            for c in 0..2 {
                let fd = central(|x| case.velocity_gradient(x, y)[c][0], x)
                    + central(|y| case.velocity_gradient(x, y)[c][1], y);
                assert!((lap[c] - fd).abs() < 1e-5);
            }
        }
        let rule = gauss_rule(10).unwrap();
        let mesh = UniformMesh::new(8).unwrap();
        let mean: f64 = (0..mesh.num_elements())
            .map(|e| {
                rule.integrate(|xi, eta| {
                    let [x, y] = mesh.map_to_physical(e, xi, eta);
                    case.pressure(x, y)
                }) * mesh.h()
                    * mesh.h()
                    / 4.0
            })
            .sum();
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn exact_fields_have_zero_error() {
        let case = ManufacturedCase::new(FCase::Two);
        let mesh = UniformMesh::new(4).unwrap();
        let rule = gauss_rule(4).unwrap();
        let e = error_norms_with(
            &mesh,
            &rule,
            |e, xi, eta| {
                let [x, y] = mesh.map_to_physical(e, xi, eta);
                (
                    case.velocity(x, y),
                    case.velocity_gradient(x, y),
                    case.pressure(x, y),
                )
            },
            &case,
        );
        assert_eq!((e.h1_semi, e.l2_velocity, e.l2_pressure), (0.0, 0.0, 0.0));
    }

    #[test]
    fn seminorm_of_exact_velocity_is_rule_independent() {
        let case = ManufacturedCase::new(FCase::One);
        let mesh = UniformMesh::new(16).unwrap();
        let zero = |_e: usize, _xi: f64, _eta: f64| ([0.0; 2], [[0.0; 2]; 2], 0.0);
        let a = error_norms_with(&mesh, &gauss_rule(4).unwrap(), zero, &case);
        let b = error_norms_with(&mesh, &gauss_rule(10).unwrap(), zero, &case);
        assert!((a.h1_semi - b.h1_semi).abs() < 1e-6);
    }

    #[test]
    fn level_lists() {
        assert!(validate_levels(&[4, 8, 16]).is_ok());
        assert!(validate_levels(&[4]).is_ok());
        assert!(validate_levels(&[]).is_err());
        assert!(validate_levels(&[4, 12]).is_err());
        assert!(validate_levels(&[8, 4]).is_err());
    }

    #[test]
    fn single_level_report_has_no_orders() {
        let r = convergence_study(
            PairSpec::new(Pair::P1ncReduced, 4),
            &ManufacturedCase::new(FCase::One),
            &[4],
        )
        .unwrap();
        assert_eq!(r.levels.len(), 1);
        assert!(r.levels[0].order_h1.is_none());
        assert!(r.levels[0].order_l2_pressure.is_none());
    }

    #[test]
    fn sturm_bisection_matches_dense() {
        let alpha = [2.0, -1.0, 0.5, 3.0, 1.0];
        let beta = [0.3, 1.2, -0.7, 0.1];
        let t = DMatrix::from_fn(5, 5, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let dense = SymmetricEigen::new(t).eigenvalues.min();
        assert!((tridiagonal_smallest(&alpha, &beta) - dense).abs() < 1e-13);
    }

    /// `β` from the smallest singular value of `L⁻¹ Bᵀ Z / h` with a dense
    /// Cholesky `A = L Lᵀ` and an orthonormal basis `Z` of the constrained pressures.
    fn svd_oracle(pair: Pair, n: usize) -> f64 {
        let disc = Discretization::new(PairSpec::new(pair, n)).unwrap();
        let sys = disc.assemble(Forcing::Zero).unwrap();
        let a = sys.a.to_dense();
        let l = a.cholesky().unwrap().l();
        let np = sys.b.nrows();
        let mut cols = Vec::new();
        for i in 0..np {
            let mut e = vec![0.0; np];
            e[i] = 1.0;
            cols.push(e);
        }
        // Gram-Schmidt of the constraint basis followed by the unit vectors
        let mut z: Vec<Vec<f64>> = sys.constraints.basis().to_vec();
        let fixed = z.len();
        for mut v in cols {
            for _ in 0..2 {
                for b in &z {
                    let c = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let nv = dot(&v, &v).sqrt();
            if nv > 1e-8 {
                v.iter_mut().for_each(|x| *x /= nv);
                z.push(v);
            }
        }
        let z = &z[fixed..];
        let zm = DMatrix::from_fn(np, z.len(), |i, j| z[j][i]);
        let bt = sys.b.to_dense().transpose();
        let g = l.solve_lower_triangular(&(bt * zm)).unwrap() / disc.mesh.h();
        g.singular_values().min()
    }

    #[test]
    fn dense_estimate_matches_svd_oracle() {
        for pair in [
            Pair::P1ncReduced,
            Pair::P1ncBubble,
            Pair::Q1Reduced,
            Pair::DssyP0,
        ] {
            for n in [2, 4] {
                let est = infsup_constant(PairSpec::new(pair, n)).unwrap();
                let oracle = svd_oracle(pair, n);
                assert!(
                    (est.lambda_min - oracle * oracle).abs() < 1e-8,
                    "{pair} n={n}: {} vs {}",
                    est.beta,
                    oracle
                );
            }
        }
    }

    #[test]
    fn lanczos_matches_dense() {
        for pair in [Pair::P1ncReduced, Pair::Q1Reduced] {
            let spec = PairSpec::new(pair, 8);
            let d = infsup_constant_with(spec, EigenMethod::Dense).unwrap();
            let l = infsup_constant_with(spec, EigenMethod::Lanczos).unwrap();
            assert!(
                (d.beta - l.beta).abs() < 1e-8,
                "{pair}: {} vs {}",
                d.beta,
                l.beta
            );
        }
    }

    #[test]
    fn viscosity_is_scaled_out() {
        let a = infsup_constant(PairSpec::new(Pair::P1ncBubble, 4)).unwrap();
        let b = infsup_constant(PairSpec::new(Pair::P1ncBubble, 4).with_nu(3.5)).unwrap();
        assert!((a.beta - b.beta).abs() < 1e-12);
    }

    #[test]
    fn spurious_dimensions() {
        for n in [2, 4] {
            let r = spurious_modes_for_pair(Pair::P1ncReduced, n).unwrap();
            assert_eq!(r.dimension, 1);
            assert!(r.checkerboard_alignment >= 1.0 - 1e-10);
            assert_eq!(
                spurious_modes_for_pair(Pair::P1ncBubble, n)
                    .unwrap()
                    .dimension,
                0
            );
            assert_eq!(
                spurious_modes_for_pair(Pair::DssyP0, n).unwrap().dimension,
                0
            );
        }
    }

    #[test]
    fn constant_force_bubble_load_matches_direct_quadrature() {
        let f = |_: f64, _: f64| [1.0, 0.0];
        let r = equivalence_report(Forcing::Pointwise(&f), 4).unwrap();
        let disc = Discretization::new(PairSpec::new(Pair::P1ncBubble, 4)).unwrap();
        let psi = disc.velocity.bubble().unwrap();
        let rule = gauss_rule(6).unwrap();
        let jac = disc.mesh.h() * disc.mesh.h() / 4.0;
        let direct: f64 = (0..disc.mesh.num_elements())
            .map(|e| rule.integrate(|xi, eta| psi.value(e, xi, eta)[0]) * jac)
            .sum();
        assert!((r.bubble_load - direct).abs() < 1e-12);
        assert!((r.predicted_alpha + disc.mesh.h() * direct).abs() < 1e-12);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn zero_force_equivalence_is_trivial() {
        let r = equivalence_report(Forcing::Zero, 4).unwrap();
        assert_eq!(r.predicted_alpha, 0.0);
        assert_eq!(r.max_velocity_difference, 0.0);
        assert!(r.passed);
        assert!((r.bubble_checkerboard_pairing - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_errors_vanish_against_itself() {
        let f = |x: f64, y: f64| [y, x * x];
        let disc = Discretization::new(PairSpec::new(Pair::DssyP0, 4)).unwrap();
        let sol = solve_discretization(&disc, Forcing::Pointwise(&f)).unwrap();
        let e = reference_errors(&sol, &sol).unwrap();
        assert!(e.h1_semi < 1e-14 && e.l2_velocity < 1e-14 && e.l2_pressure < 1e-14);
        let fine = Discretization::new(PairSpec::new(Pair::DssyP0, 6)).unwrap();
        let fine = solve_discretization(&fine, Forcing::Pointwise(&f)).unwrap();
        assert!(reference_errors(&sol, &fine).is_err());
    }

    #[test]
    fn bubble_is_energy_orthogonal_to_p1nc() {
        for n in [2, 4, 8] {
            let disc = Discretization::new(PairSpec::new(Pair::P1ncBubble, n)).unwrap();
            let a = disc.assembler.grad_grad(&disc.velocity, 1.0).unwrap();
            let b = disc.velocity.bubble_dof().unwrap();
            let off = a
                .row(b)
                .filter(|(j, _)| *j != b)
                .map(|(_, v)| v.abs())
                .fold(0.0, f64::max);
            assert!(off < 1e-13, "n={n}: {off}");
        }
    }

    #[test]
    fn enriched_constant_is_min_of_reduced_and_bubble_direction() {
        // with a(v, ψ) = 0 and b(ψ, q) = (q, σ)/h the two estimates are tied
        for n in [4, 8] {
            let disc = Discretization::new(PairSpec::new(Pair::P1ncBubble, n)).unwrap();
            let a = disc.assembler.grad_grad(&disc.velocity, 1.0).unwrap();
            let b = disc.velocity.bubble_dof().unwrap();
            let bubble_beta = 1.0 / (disc.mesh.h() * a.get(b, b).sqrt());
            let reduced = infsup_constant(PairSpec::new(Pair::P1ncReduced, n))
                .unwrap()
                .beta;
            let enriched = infsup_constant(PairSpec::new(Pair::P1ncBubble, n))
                .unwrap()
                .beta;
            assert!((enriched - reduced.min(bubble_beta)).abs() < 1e-10);
        }
    }
}
