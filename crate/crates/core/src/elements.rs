//! Reference-cell shape functions on `[-1,1]²` and tensor Gauss–Legendre rules.
//!
//! Local numbering shared by every element:
//! corners `c0 = (-1,-1), c1 = (1,-1), c2 = (1,1), c3 = (-1,1)`;
//! edges `e0` bottom, `e1` right, `e2` top, `e3` left, with `e_i` joining
//! `c_i` and `c_{i+1}`.

use nalgebra::Matrix4;

use crate::error::{Error, Result};

pub const CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
pub const EDGE_MIDPOINTS: [[f64; 2]; 4] = [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];

/// Which `θ_k` enriches the DSSY space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThetaOrder {
    One,
    Two,
}

impl ThetaOrder {
    pub fn new(k: u32) -> Result<Self> {
        match k {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            _ => Err(Error::InvalidThetaOrder(k)),
        }
    }

    pub fn theta(self, t: f64) -> f64 {
        let t2 = t * t;
        match self {
            Self::One => t2 - 5.0 / 3.0 * t2 * t2,
            Self::Two => t2 - 25.0 / 6.0 * t2 * t2 + 3.5 * t2 * t2 * t2,
        }
    }

    pub fn theta_prime(self, t: f64) -> f64 {
        let t2 = t * t;
        match self {
            Self::One => 2.0 * t - 20.0 / 3.0 * t2 * t,
            Self::Two => 2.0 * t - 50.0 / 3.0 * t2 * t + 21.0 * t2 * t2 * t,
        }
    }
}

impl Default for ThetaOrder {
    fn default() -> Self {
        Self::One
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    /// P1 nonconforming quadrilateral, written with one function per corner.
    P1nc,
    Dssy(ThetaOrder),
    Q1,
    P0,
}

/// A shape-function set on the reference square.
#[derive(Debug, Clone)]
pub struct LocalElement {
    kind: ElementKind,
    /// DSSY only: `coeffs[(m, i)]` is the weight of monomial `m` in nodal function `i`,
    /// monomials ordered `1, x, y, θ(x) − θ(y)`.
    coeffs: Matrix4<f64>,
}

pub fn p1nc_local_basis() -> LocalElement {
    LocalElement::new(ElementKind::P1nc)
}

pub fn dssy_local_basis(k: u32) -> Result<LocalElement> {
    Ok(LocalElement::new(ElementKind::Dssy(ThetaOrder::new(k)?)))
}

pub fn q1_local_basis() -> LocalElement {
    LocalElement::new(ElementKind::Q1)
}

pub fn p0_local_basis() -> LocalElement {
    LocalElement::new(ElementKind::P0)
}

impl LocalElement {
    pub fn new(kind: ElementKind) -> Self {
        let coeffs = match kind {
            ElementKind::Dssy(order) => dssy_nodal_coefficients(order),
            _ => Matrix4::identity(),
        };
        Self { kind, coeffs }
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    pub fn dof_count(&self) -> usize {
        match self.kind {
            ElementKind::P0 => 1,
            _ => 4,
        }
    }

    pub fn value(&self, i: usize, x: f64, y: f64) -> f64 {
        match self.kind {
            ElementKind::P1nc => {
                let [sx, sy] = CORNERS[i];
                0.25 * (1.0 + sx * x + sy * y)
            }
            ElementKind::Q1 => {
                let [sx, sy] = CORNERS[i];
                0.25 * (1.0 + sx * x) * (1.0 + sy * y)
            }
            ElementKind::P0 => 1.0,
            ElementKind::Dssy(order) => {
                let c = self.coeffs.column(i);
                c[0] + c[1] * x + c[2] * y + c[3] * (order.theta(x) - order.theta(y))
            }
        }
    }

    pub fn gradient(&self, i: usize, x: f64, y: f64) -> [f64; 2] {
        match self.kind {
            ElementKind::P1nc => {
                let [sx, sy] = CORNERS[i];
                [0.25 * sx, 0.25 * sy]
            }
            ElementKind::Q1 => {
                let [sx, sy] = CORNERS[i];
                [0.25 * sx * (1.0 + sy * y), 0.25 * sy * (1.0 + sx * x)]
            }
            ElementKind::P0 => [0.0, 0.0],
            ElementKind::Dssy(order) => {
                let c = self.coeffs.column(i);
                [
                    c[1] + c[3] * order.theta_prime(x),
                    c[2] - c[3] * order.theta_prime(y),
                ]
            }
        }
    }

    pub fn values(&self, x: f64, y: f64) -> [f64; 4] {
        std::array::from_fn(|i| {
            if i < self.dof_count() {
                self.value(i, x, y)
            } else {
                0.0
            }
        })
    }

    pub fn gradients(&self, x: f64, y: f64) -> [[f64; 2]; 4] {
        std::array::from_fn(|i| {
            if i < self.dof_count() {
                self.gradient(i, x, y)
            } else {
                [0.0; 2]
            }
        })
    }
}

fn dssy_nodal_coefficients(order: ThetaOrder) -> Matrix4<f64> {
    // rows: midpoints, columns: monomials
    let eval = Matrix4::from_fn(|i, m| {
        let [x, y] = EDGE_MIDPOINTS[i];
        match m {
            0 => 1.0,
            1 => x,
            2 => y,
            _ => order.theta(x) - order.theta(y),
        }
    });
    eval.try_inverse()
        .expect("DSSY midpoint evaluation matrix is invertible")
}

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        self.points
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.iter().map(|([x, y], w)| w * f(x, y)).sum()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=16).contains(&n) {
        return Err(Error::QuadratureOrder(n));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Tensor Gauss rule on `[-1,1]²`, `x` running fastest.
pub fn gauss_rule(points_per_axis: usize) -> Result<QuadratureRule> {
    let (nodes, weights) = gauss_legendre(points_per_axis)?;
    let mut points = Vec::with_capacity(nodes.len() * nodes.len());
    let mut w = Vec::with_capacity(nodes.len() * nodes.len());
    for (y, wy) in nodes.iter().zip(&weights) {
        for (x, wx) in nodes.iter().zip(&weights) {
            points.push([*x, *y]);
            w.push(wx * wy);
        }
    }
    Ok(QuadratureRule { points, weights: w })
}

/// Shape values and reference gradients tabulated at the points of a rule.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub values: Vec<[f64; 4]>,
    pub gradients: Vec<[[f64; 2]; 4]>,
}

impl Tabulation {
    pub fn new(element: &LocalElement, rule: &QuadratureRule) -> Self {
        Self {
            values: rule
                .points
                .iter()
                .map(|&[x, y]| element.values(x, y))
                .collect(),
            gradients: rule
                .points
                .iter()
                .map(|&[x, y]| element.gradients(x, y))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_elements() -> Vec<LocalElement> {
        vec![
            p1nc_local_basis(),
            dssy_local_basis(1).unwrap(),
            dssy_local_basis(2).unwrap(),
            q1_local_basis(),
            p0_local_basis(),
        ]
    }

    #[test]
    fn p1nc_midpoint_semantics() {
        let el = p1nc_local_basis();
        // corner (1,1) is c2
        assert_eq!(el.value(2, 1.0, 0.0), 0.5);
        assert_eq!(el.value(2, -1.0, 0.0), 0.0);
        for (i, &[cx, cy]) in CORNERS.iter().enumerate() {
            for &[mx, my] in &EDGE_MIDPOINTS {
                let adjacent = (mx == cx) || (my == cy);
                let want = if adjacent { 0.5 } else { 0.0 };
                assert_eq!(el.value(i, mx, my), want);
            }
        }
    }

    #[test]
    fn p1nc_linear_relation() {
        let el = p1nc_local_basis();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (x, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let v = el.values(x, y);
            assert!((v[2] + v[0] - v[1] - v[3]).abs() < 1e-15);
        }
    }

    #[test]
    fn p1nc_reference_stiffness() {
        let el = p1nc_local_basis();
        let rule = gauss_rule(4).unwrap();
        let k = |a: usize, b: usize| {
            rule.integrate(|x, y| {
                let ga = el.gradient(a, x, y);
                let gb = el.gradient(b, x, y);
                ga[0] * gb[0] + ga[1] * gb[1]
            })
        };
        for v in 0..4 {
            assert!((k(v, v) - 0.5).abs() < 1e-15);
            assert!((k(v, (v + 2) % 4) + 0.5).abs() < 1e-15);
            assert!(k(v, (v + 1) % 4).abs() < 1e-15);
        }
    }

    #[test]
    fn theta_values() {
        let t = ThetaOrder::One;
        assert!((t.theta(1.0) + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.theta(0.0), 0.0);
        assert!(ThetaOrder::new(3).is_err());
        assert!(dssy_local_basis(0).is_err());
    }

    #[test]
    fn dssy_bubble_edge_mean() {
        // ∫_{-1}^{1} θ_1 = 2/3 − 2/3 = 0, so mean over x = 1 is θ(1) − 0
        let t = ThetaOrder::One;
        let (nodes, weights) = gauss_legendre(4).unwrap();
        let mean: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(s, w)| w * (t.theta(1.0) - t.theta(*s)))
            .sum::<f64>()
            / 2.0;
        assert!((mean - (-2.0 / 3.0)).abs() < 1e-15);
        assert!((mean - (t.theta(1.0) - t.theta(0.0))).abs() < 1e-15);
    }

    #[test]
    fn dssy_is_nodal_at_midpoints() {
        for k in [1, 2] {
            let el = dssy_local_basis(k).unwrap();
            for i in 0..4 {
                for (m, &[x, y]) in EDGE_MIDPOINTS.iter().enumerate() {
                    let want = if i == m { 1.0 } else { 0.0 };
                    assert!((el.value(i, x, y) - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn dssy_edge_mean_property() {
        let (nodes, weights) = gauss_legendre(4).unwrap();
        for k in [1, 2] {
            let el = dssy_local_basis(k).unwrap();
            for i in 0..4 {
                for e in 0..4 {
                    let [a, b] = [CORNERS[e], CORNERS[(e + 1) % 4]];
                    let mean = nodes
                        .iter()
                        .zip(&weights)
                        .map(|(s, w)| {
                            let t = 0.5 * (1.0 + s);
                            let x = a[0] + t * (b[0] - a[0]);
                            let y = a[1] + t * (b[1] - a[1]);
                            w * el.value(i, x, y)
                        })
                        .sum::<f64>()
                        / 2.0;
                    let [mx, my] = EDGE_MIDPOINTS[e];
                    assert!(
                        (mean - el.value(i, mx, my)).abs() <= 1e-13,
                        "k={k} i={i} e={e}"
                    );
                }
            }
        }
    }

    #[test]
    fn reproduces_constants_and_linears() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for el in all_elements() {
            for _ in 0..10 {
                let (x, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let v = el.values(x, y);
                let s: f64 = v[..el.dof_count()].iter().sum();
                assert!((s - 1.0).abs() < 1e-14);
                if matches!(el.kind(), ElementKind::P1nc | ElementKind::Dssy(_)) {
                    // interpolate x̂, ŷ through midpoint values
                    let ix: f64 = (0..4).map(|i| dof_node(&el, i)[0] * v[i]).sum();
                    let iy: f64 = (0..4).map(|i| dof_node(&el, i)[1] * v[i]).sum();
                    assert!((ix - x).abs() < 1e-14 && (iy - y).abs() < 1e-14);
                }
            }
        }
    }

    // node a DOF is attached to
    fn dof_node(el: &LocalElement, i: usize) -> [f64; 2] {
        match el.kind() {
            ElementKind::Dssy(_) => EDGE_MIDPOINTS[i],
            _ => CORNERS[i],
        }
    }

    #[test]
    fn q1_and_p0_nodal() {
        let el = q1_local_basis();
        for i in 0..4 {
            for (c, &[x, y]) in CORNERS.iter().enumerate() {
                assert_eq!(el.value(i, x, y), if i == c { 1.0 } else { 0.0 });
            }
        }
        let s: f64 = el.values(0.3, -0.7).iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        let p0 = p0_local_basis();
        assert_eq!(p0.value(0, 0.42, -0.9), 1.0);
        assert_eq!(p0.dof_count(), 1);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 1e-6;
        for el in all_elements() {
            for _ in 0..10 {
                let (x, y) = (rng.random_range(-0.99..0.99), rng.random_range(-0.99..0.99));
                for i in 0..el.dof_count() {
                    let g = el.gradient(i, x, y);
                    let gx = (el.value(i, x + d, y) - el.value(i, x - d, y)) / (2.0 * d);
                    let gy = (el.value(i, x, y + d) - el.value(i, x, y - d)) / (2.0 * d);
                    assert!((g[0] - gx).abs() < 1e-6 && (g[1] - gy).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn gauss_rules() {
        let one = gauss_rule(1).unwrap();
        assert_eq!(one.points, vec![[0.0, 0.0]]);
        assert!((one.weights[0] - 4.0).abs() < 1e-15);

        let four = gauss_rule(4).unwrap();
        assert!((four.weights.iter().sum::<f64>() - 4.0).abs() < 1e-14);
        let got = four.integrate(|x, y| x.powi(6) * y.powi(4));
        assert!((got - (2.0 / 7.0) * (2.0 / 5.0)).abs() < 1e-14);

        assert!(gauss_rule(0).is_err());
        assert!(gauss_rule(17).is_err());
    }

    #[test]
    fn gauss_exactness_all_orders() {
        for n in 1..=16 {
            let (x, w) = gauss_legendre(n).unwrap();
            assert!(w.iter().all(|&w| w > 0.0));
            for i in 0..n {
                assert!((x[i] + x[n - 1 - i]).abs() < 1e-15);
            }
            for deg in 0..2 * n {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let want = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((got - want).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }
}
