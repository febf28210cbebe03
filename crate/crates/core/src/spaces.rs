//! Global discrete spaces, pressure constraints, checkerboard patterns, the
//! macro bubble and the two interpolation operators.
//!
//! Vector spaces interleave components: global dof `2·s + c` is component `c`
//! of scalar dof `s`. Scalar dofs are numbered in increasing order of the mesh
//! entity they live on (interior vertices for P1NC/Q1, interior edges for DSSY,
//! elements for P0).

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use crate::elements::{ElementKind, LocalElement, QuadratureRule, ThetaOrder};
use crate::error::{Error, Result};
use crate::mesh::UniformMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    /// Vector P1 nonconforming, vanishing at boundary midpoints.
    P1ncVec0,
    /// Vector conforming bilinear, vanishing on the boundary.
    Q1Vec0,
    /// Vector DSSY, vanishing at boundary midpoints.
    DssyVec0(ThetaOrder),
    /// Scalar piecewise constants (no constraints).
    P0,
}

impl SpaceKind {
    pub fn is_velocity(self) -> bool {
        !matches!(self, SpaceKind::P0)
    }
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceKind::P1ncVec0 => write!(f, "p1nc"),
            SpaceKind::Q1Vec0 => write!(f, "q1"),
            SpaceKind::DssyVec0(ThetaOrder::One) => write!(f, "dssy"),
            SpaceKind::DssyVec0(ThetaOrder::Two) => write!(f, "dssy2"),
            SpaceKind::P0 => write!(f, "p0"),
        }
    }
}

impl FromStr for SpaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1nc" => Ok(SpaceKind::P1ncVec0),
            "q1" => Ok(SpaceKind::Q1Vec0),
            "dssy" | "dssy1" => Ok(SpaceKind::DssyVec0(ThetaOrder::One)),
            "dssy2" => Ok(SpaceKind::DssyVec0(ThetaOrder::Two)),
            "p0" => Ok(SpaceKind::P0),
            other => Err(Error::UnknownSpaceKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: Arc<UniformMesh>,
    kind: SpaceKind,
    element: LocalElement,
    components: usize,
    entity_to_scalar: Vec<Option<usize>>,
    scalar_to_entity: Vec<usize>,
}

pub fn build_space(mesh: &Arc<UniformMesh>, kind: SpaceKind) -> Result<FeSpace> {
    FeSpace::new(mesh, kind)
}

impl FeSpace {
    pub fn new(mesh: &Arc<UniformMesh>, kind: SpaceKind) -> Result<Self> {
        let (element, components, entities): (_, _, Vec<bool>) = match kind {
            SpaceKind::P1ncVec0 | SpaceKind::Q1Vec0 => {
                let el = if kind == SpaceKind::P1ncVec0 {
                    ElementKind::P1nc
                } else {
                    ElementKind::Q1
                };
                let free = (0..mesh.num_vertices())
                    .map(|v| !mesh.is_boundary_vertex(v))
                    .collect();
                (LocalElement::new(el), 2, free)
            }
            SpaceKind::DssyVec0(order) => {
                let free = mesh.edges().iter().map(|e| !e.is_boundary()).collect();
                (LocalElement::new(ElementKind::Dssy(order)), 2, free)
            }
            SpaceKind::P0 => (
                LocalElement::new(ElementKind::P0),
                1,
                vec![true; mesh.num_elements()],
            ),
        };
        let mut entity_to_scalar = vec![None; entities.len()];
        let mut scalar_to_entity = Vec::new();
        for (id, free) in entities.into_iter().enumerate() {
            if free {
                entity_to_scalar[id] = Some(scalar_to_entity.len());
                scalar_to_entity.push(id);
            }
        }
        Ok(Self {
            mesh: Arc::clone(mesh),
            kind,
            element,
            components,
            entity_to_scalar,
            scalar_to_entity,
        })
    }

    pub fn mesh(&self) -> &Arc<UniformMesh> {
        &self.mesh
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn element(&self) -> &LocalElement {
        &self.element
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn num_scalar_dofs(&self) -> usize {
        self.scalar_to_entity.len()
    }

    pub fn ndofs(&self) -> usize {
        self.components * self.scalar_to_entity.len()
    }

    pub fn dof(&self, scalar: usize, component: usize) -> usize {
        self.components * scalar + component
    }

    /// Mesh entity (vertex, edge or element id) carrying a scalar dof.
    pub fn entity_of(&self, scalar: usize) -> usize {
        self.scalar_to_entity[scalar]
    }

    pub fn scalar_dof_of_entity(&self, entity: usize) -> Option<usize> {
        self.entity_to_scalar[entity]
    }

    /// Local-to-global scalar map of one element; `None` marks a constrained
    /// (boundary) local function. Only the first `element().dof_count()` entries are meaningful.
    pub fn element_scalar_dofs(&self, e: usize) -> [Option<usize>; 4] {
        let entities = match self.kind {
            SpaceKind::P1ncVec0 | SpaceKind::Q1Vec0 => self.mesh.element_vertices(e),
            SpaceKind::DssyVec0(_) => self.mesh.element_edges(e),
            SpaceKind::P0 => [e, usize::MAX, usize::MAX, usize::MAX],
        };
        let count = self.element.dof_count();
        std::array::from_fn(|i| {
            if i < count {
                self.entity_to_scalar[entities[i]]
            } else {
                None
            }
        })
    }

    pub(crate) fn require_velocity(&self) -> Result<()> {
        if self.kind.is_velocity() {
            Ok(())
        } else {
            Err(Error::SpaceKindMismatch {
                expected: "velocity",
                found: self.kind.to_string(),
            })
        }
    }

    pub(crate) fn require_kind(&self, want: SpaceKind, name: &'static str) -> Result<()> {
        let ok = match (want, self.kind) {
            (SpaceKind::DssyVec0(_), SpaceKind::DssyVec0(_)) => true,
            (a, b) => a == b,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::SpaceKindMismatch {
                expected: name,
                found: self.kind.to_string(),
            })
        }
    }
}

/// Coefficient vector over a space.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    space: Arc<FeSpace>,
    coeffs: Vec<f64>,
}

impl DiscreteField {
    pub fn new(space: Arc<FeSpace>, coeffs: Vec<f64>) -> Self {
        assert_eq!(
            coeffs.len(),
            space.ndofs(),
            "coefficient length must match the space"
        );
        Self { space, coeffs }
    }

    pub fn zeros(space: Arc<FeSpace>) -> Self {
        let n = space.ndofs();
        Self::new(space, vec![0.0; n])
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Local coefficients of one element, `[component][local function]`.
    pub fn local_coeffs(&self, e: usize) -> [[f64; 4]; 2] {
        let dofs = self.space.element_scalar_dofs(e);
        let mut out = [[0.0; 4]; 2];
        for (i, d) in dofs.iter().enumerate() {
            if let Some(s) = d {
                for (c, row) in out.iter_mut().enumerate().take(self.space.components) {
                    row[i] = self.coeffs[self.space.dof(*s, c)];
                }
            }
        }
        out
    }

    /// Value at reference coordinates of element `e`; scalar fields use slot 0.
    pub fn value(&self, e: usize, xi: f64, eta: f64) -> [f64; 2] {
        let local = self.local_coeffs(e);
        let shape = self.space.element.values(xi, eta);
        let mut out = [0.0; 2];
        for c in 0..self.space.components {
            out[c] = (0..4).map(|i| local[c][i] * shape[i]).sum();
        }
        out
    }

    /// Physical gradient `[component][direction]` at reference coordinates of element `e`.
    pub fn gradient(&self, e: usize, xi: f64, eta: f64) -> [[f64; 2]; 2] {
        let local = self.local_coeffs(e);
        let grads = self.space.element.gradients(xi, eta);
        let scale = 2.0 / self.space.mesh.h();
        let mut out = [[0.0; 2]; 2];
        for c in 0..self.space.components {
            for d in 0..2 {
                out[c][d] = scale * (0..4).map(|i| local[c][i] * grads[i][d]).sum::<f64>();
            }
        }
        out
    }

    pub fn dot(&self, other: &DiscreteField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// CSV with columns `entity,c0[,c1]`: `entity` is the vertex, edge or element id
    /// that carries the scalar dof, followed by one column per component.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let comps = self.space.components;
        if comps == 1 {
            writeln!(out, "entity,c0")?;
        } else {
            writeln!(out, "entity,c0,c1")?;
        }
        for s in 0..self.space.num_scalar_dofs() {
            write!(out, "{}", self.space.entity_of(s))?;
            for c in 0..comps {
                write!(out, ",{:e}", self.coeffs[self.space.dof(s, c)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Global checkerboard pattern on P0: `+1` on element (1,1), alternating with `j + k`.
/// Its L² norm is 1 on the unit square.
pub fn checkerboard(mesh: &UniformMesh) -> Vec<f64> {
    (0..mesh.num_elements())
        .map(|e| {
            let (j, k) = mesh.element_index(e);
            if (j + k) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// Checkerboard supported on one macro element: `+1` on the lower-left and
/// upper-right children, `-1` on the other two.
pub fn macro_checkerboard(mesh: &UniformMesh, j: usize, k: usize) -> Result<Vec<f64>> {
    let m = mesh.macro_element(j, k)?;
    let mut out = vec![0.0; mesh.num_elements()];
    for (child, sign) in m.children.iter().zip([1.0, -1.0, -1.0, 1.0]) {
        out[*child] = sign;
    }
    Ok(out)
}

pub fn checkerboard_field(space: &Arc<FeSpace>) -> Result<DiscreteField> {
    space.require_kind(SpaceKind::P0, "P0")?;
    Ok(DiscreteField::new(
        Arc::clone(space),
        checkerboard(space.mesh()),
    ))
}

/// Global macro bubble `ψ_b` as a DSSY field. On each macro element its x-component
/// is `+1` at the midpoint of the lower interior vertical edge and `-1` at the upper
/// one; every other midpoint value is zero.
pub fn macro_bubble(dssy: &Arc<FeSpace>) -> Result<DiscreteField> {
    dssy.require_kind(SpaceKind::DssyVec0(ThetaOrder::One), "DSSY")?;
    let mesh = dssy.mesh();
    let mut coeffs = vec![0.0; dssy.ndofs()];
    for m in mesh.macro_partition()? {
        let lower = mesh.element_edges(m.children[0])[1];
        let upper = mesh.element_edges(m.children[2])[1];
        for (edge, value) in [(lower, 1.0), (upper, -1.0)] {
            let s = dssy
                .scalar_dof_of_entity(edge)
                .expect("macro-interior edge is never on the boundary");
            coeffs[dssy.dof(s, 0)] = value;
        }
    }
    Ok(DiscreteField::new(Arc::clone(dssy), coeffs))
}

/// `Π_h w` into the zero-BC P1NC space. The local interpolant takes the average of
/// the two vertex values at each edge midpoint, which in the corner basis means the
/// coefficient of vertex `v` is `w(v)`.
pub fn interpolate_p1nc(
    w: impl Fn(f64, f64) -> [f64; 2],
    space: &Arc<FeSpace>,
) -> Result<DiscreteField> {
    space.require_kind(SpaceKind::P1ncVec0, "P1NC")?;
    Ok(nodal_interpolant(w, space))
}

/// Nodal interpolation into Q1, used to build conforming test fields.
pub fn interpolate_q1(
    w: impl Fn(f64, f64) -> [f64; 2],
    space: &Arc<FeSpace>,
) -> Result<DiscreteField> {
    space.require_kind(SpaceKind::Q1Vec0, "Q1")?;
    Ok(nodal_interpolant(w, space))
}

fn nodal_interpolant(w: impl Fn(f64, f64) -> [f64; 2], space: &Arc<FeSpace>) -> DiscreteField {
    let mesh = space.mesh();
    let mut coeffs = vec![0.0; space.ndofs()];
    for s in 0..space.num_scalar_dofs() {
        let [x, y] = mesh.vertex_coords(space.entity_of(s));
        let val = w(x, y);
        coeffs[space.dof(s, 0)] = val[0];
        coeffs[space.dof(s, 1)] = val[1];
    }
    DiscreteField::new(Arc::clone(space), coeffs)
}

/// `Π_h` applied to a Q1 field: both spaces carry one dof per interior vertex,
/// so the coefficients carry over unchanged.
pub fn interpolate_q1_field(field: &DiscreteField, p1nc: &Arc<FeSpace>) -> Result<DiscreteField> {
    field.space().require_kind(SpaceKind::Q1Vec0, "Q1")?;
    p1nc.require_kind(SpaceKind::P1ncVec0, "P1NC")?;
    if field.space().mesh().n() != p1nc.mesh().n() {
        return Err(Error::MeshMismatch(
            field.space().mesh().n(),
            p1nc.mesh().n(),
        ));
    }
    Ok(DiscreteField::new(
        Arc::clone(p1nc),
        field.coeffs().to_vec(),
    ))
}

/// Local `Π_Q` on the reference square: scalar corner values → `(a, b, c)` of `a + b x̂ + c ŷ`.
pub fn local_p1nc_interpolant(corner_values: [f64; 4]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (v, [sx, sy]) in corner_values.iter().zip(crate::elements::CORNERS) {
        out[0] += 0.25 * v;
        out[1] += 0.25 * sx * v;
        out[2] += 0.25 * sy * v;
    }
    out
}

/// Linear constraints carried by the pressure: always zero mean, optionally
/// orthogonality to the checkerboard.
#[derive(Debug, Clone)]
pub struct PressureConstraints {
    /// Raw constraint rows (entries `h²` and `±h²`).
    rows: Vec<Vec<f64>>,
    names: Vec<&'static str>,
    /// Euclidean-orthonormal basis of the span of `rows`.
    basis: Vec<Vec<f64>>,
}

impl PressureConstraints {
    pub fn mean_zero(mesh: &UniformMesh) -> Self {
        let h2 = mesh.h() * mesh.h();
        Self::from_rows(vec![vec![h2; mesh.num_elements()]], vec!["mean"])
    }

    /// Zero mean and orthogonal to the checkerboard (the reduced space P̃₀).
    pub fn reduced(mesh: &UniformMesh) -> Result<Self> {
        if mesh.n() < 2 {
            return Err(Error::ReducedPressureTooSmall(mesh.n()));
        }
        let h2 = mesh.h() * mesh.h();
        let c = checkerboard(mesh).into_iter().map(|s| s * h2).collect();
        Ok(Self::from_rows(
            vec![vec![h2; mesh.num_elements()], c],
            vec!["mean", "checkerboard"],
        ))
    }

    fn from_rows(rows: Vec<Vec<f64>>, names: Vec<&'static str>) -> Self {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for row in &rows {
            let mut v = row.clone();
            for _ in 0..2 {
                for b in &basis {
                    let d = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
        Self { rows, names, basis }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn names(&self) -> &[&'static str] {
        &self.names
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_checkerboard(&self) -> bool {
        self.rows.len() > 1
    }

    /// Orthogonal projection onto the constrained subspace (in place).
    pub fn project(&self, q: &mut [f64]) {
        for b in &self.basis {
            let d = dot(q, b);
            q.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
    }

    /// Largest constraint violation `max |row · q|`.
    pub fn violation(&self, q: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| dot(r, q).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `S_h q`: L² projection of a scalar function onto P0 followed by removal of
/// the constrained directions.
pub fn project_pressure(
    q: impl Fn(f64, f64) -> f64,
    space: &Arc<FeSpace>,
    constraints: &PressureConstraints,
    rule: &QuadratureRule,
) -> Result<DiscreteField> {
    space.require_kind(SpaceKind::P0, "P0")?;
    let mesh = space.mesh();
    let mut coeffs: Vec<f64> = (0..mesh.num_elements())
        .map(|e| {
            rule.iter()
                .map(|([xi, eta], w)| {
                    let [x, y] = mesh.map_to_physical(e, xi, eta);
                    w * q(x, y)
                })
                .sum::<f64>()
                / 4.0
        })
        .collect();
    constraints.project(&mut coeffs);
    Ok(DiscreteField::new(Arc::clone(space), coeffs))
}

/// One piece of a velocity basis function restricted to an element: component
/// `comp` equals `Σ_i weights[i] N_i` for the local shapes `N_i` of `source`.
#[derive(Debug, Clone, Copy)]
pub struct LocalFunction {
    pub dof: usize,
    pub comp: usize,
    pub source: ShapeSource,
    pub weights: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeSource {
    Main,
    Bubble,
}

/// A velocity space optionally enriched by the single global macro bubble,
/// which is appended as the last dof.
#[derive(Debug, Clone)]
pub struct VelocityBasis {
    space: Arc<FeSpace>,
    bubble: Option<DiscreteField>,
}

impl VelocityBasis {
    pub fn new(space: Arc<FeSpace>) -> Result<Self> {
        space.require_velocity()?;
        Ok(Self {
            space,
            bubble: None,
        })
    }

    /// P1NC enriched by `ψ_b`.
    pub fn with_bubble(space: Arc<FeSpace>, bubble: DiscreteField) -> Result<Self> {
        space.require_kind(SpaceKind::P1ncVec0, "P1NC")?;
        if bubble.space().mesh().n() != space.mesh().n() {
            return Err(Error::MeshMismatch(
                space.mesh().n(),
                bubble.space().mesh().n(),
            ));
        }
        Ok(Self {
            space,
            bubble: Some(bubble),
        })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn mesh(&self) -> &Arc<UniformMesh> {
        self.space.mesh()
    }

    pub fn bubble(&self) -> Option<&DiscreteField> {
        self.bubble.as_ref()
    }

    pub fn ndofs(&self) -> usize {
        self.space.ndofs() + usize::from(self.bubble.is_some())
    }

    pub fn bubble_dof(&self) -> Option<usize> {
        self.bubble.as_ref().map(|_| self.space.ndofs())
    }

    pub fn shape(&self, source: ShapeSource) -> &LocalElement {
        match source {
            ShapeSource::Main => self.space.element(),
            ShapeSource::Bubble => self
                .bubble
                .as_ref()
                .expect("bubble shape requested without a bubble")
                .space()
                .element(),
        }
    }

    /// All basis pieces that are nonzero on element `e`.
    pub fn local_functions(&self, e: usize, out: &mut Vec<LocalFunction>) {
        out.clear();
        let dofs = self.space.element_scalar_dofs(e);
        for (i, d) in dofs
            .iter()
            .enumerate()
            .take(self.space.element().dof_count())
        {
            if let Some(s) = d {
                for comp in 0..2 {
                    let mut weights = [0.0; 4];
                    weights[i] = 1.0;
                    out.push(LocalFunction {
                        dof: self.space.dof(*s, comp),
                        comp,
                        source: ShapeSource::Main,
                        weights,
                    });
                }
            }
        }
        if let (Some(b), Some(dof)) = (&self.bubble, self.bubble_dof()) {
            let local = b.local_coeffs(e);
            for (comp, weights) in local.into_iter().enumerate() {
                if weights.iter().any(|w| *w != 0.0) {
                    out.push(LocalFunction {
                        dof,
                        comp,
                        source: ShapeSource::Bubble,
                        weights,
                    });
                }
            }
        }
    }

    /// Value and physical gradient of the velocity with coefficients `u` at
    /// reference coordinates of element `e`.
    pub fn evaluate(&self, u: &[f64], e: usize, xi: f64, eta: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut pieces = Vec::with_capacity(10);
        self.local_functions(e, &mut pieces);
        let scale = 2.0 / self.mesh().h();
        let mut val = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for f in &pieces {
            let shape = self.shape(f.source);
            let v = shape.values(xi, eta);
            let g = shape.gradients(xi, eta);
            let c = u[f.dof];
            for i in 0..4 {
                let w = c * f.weights[i];
                val[f.comp] += w * v[i];
                grad[f.comp][0] += scale * w * g[i][0];
                grad[f.comp][1] += scale * w * g[i][1];
            }
        }
        (val, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::{gauss_rule, CORNERS, EDGE_MIDPOINTS};
    use crate::mesh::Orientation;

    fn mesh(n: usize) -> Arc<UniformMesh> {
        Arc::new(UniformMesh::new(n).unwrap())
    }

    fn space(n: usize, kind: SpaceKind) -> Arc<FeSpace> {
        Arc::new(FeSpace::new(&mesh(n), kind).unwrap())
    }

    #[test]
    fn dof_counts() {
        assert_eq!(space(4, SpaceKind::P1ncVec0).ndofs(), 18);
        assert_eq!(space(4, SpaceKind::Q1Vec0).ndofs(), 18);
        assert_eq!(space(4, SpaceKind::P0).ndofs(), 16);
        assert_eq!(space(4, SpaceKind::DssyVec0(ThetaOrder::One)).ndofs(), 48);
        assert!("rt".parse::<SpaceKind>().is_err());
        assert_eq!(
            "dssy".parse::<SpaceKind>().unwrap(),
            SpaceKind::DssyVec0(ThetaOrder::One)
        );
    }

    // Local coordinates of an edge midpoint seen from one of its elements.
    fn local_midpoint(m: &UniformMesh, e: usize, edge: usize) -> [f64; 2] {
        let i = m.element_edges(e).iter().position(|&x| x == edge).unwrap();
        EDGE_MIDPOINTS[i]
    }

    #[test]
    fn midpoint_continuity_and_boundary_values() {
        for kind in [
            SpaceKind::P1ncVec0,
            SpaceKind::DssyVec0(ThetaOrder::One),
            SpaceKind::Q1Vec0,
        ] {
            let sp = space(4, kind);
            let m = sp.mesh().clone();
            for d in 0..sp.ndofs() {
                let mut c = vec![0.0; sp.ndofs()];
                c[d] = 1.0;
                let f = DiscreteField::new(sp.clone(), c);
                for (id, edge) in m.edges().iter().enumerate() {
                    match edge.elements {
                        [Some(a), Some(b)] => {
                            let [xa, ya] = local_midpoint(&m, a, id);
                            let [xb, yb] = local_midpoint(&m, b, id);
                            let va = f.value(a, xa, ya);
                            let vb = f.value(b, xb, yb);
                            assert!(
                                (va[0] - vb[0]).abs() <= 1e-13 && (va[1] - vb[1]).abs() <= 1e-13
                            );
                        }
                        [Some(a), None] | [None, Some(a)] => {
                            let [x, y] = local_midpoint(&m, a, id);
                            let v = f.value(a, x, y);
                            assert!(v[0].abs() <= 1e-13 && v[1].abs() <= 1e-13);
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
    }

    #[test]
    fn q1_vanishes_on_boundary_nodes() {
        let sp = space(3, SpaceKind::Q1Vec0);
        let m = sp.mesh().clone();
        let f = DiscreteField::new(sp.clone(), vec![1.0; sp.ndofs()]);
        for e in 0..m.num_elements() {
            for (i, v) in m.element_vertices(e).into_iter().enumerate() {
                if m.is_boundary_vertex(v) {
                    let [x, y] = CORNERS[i];
                    assert_eq!(f.value(e, x, y), [0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn checkerboard_examples() {
        assert_eq!(checkerboard(&mesh(2)), vec![1.0, -1.0, -1.0, 1.0]);
        for n in 1..9 {
            let m = mesh(n);
            let h2 = m.h() * m.h();
            let norm: f64 = checkerboard(&m).iter().map(|s| h2 * s * s).sum();
            assert!((norm - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn macro_checkerboards_sum_to_global() {
        let m = mesh(2);
        assert_eq!(macro_checkerboard(&m, 1, 1).unwrap(), checkerboard(&m));
        let m = mesh(4);
        let a = macro_checkerboard(&m, 1, 1).unwrap();
        let b = macro_checkerboard(&m, 3, 1).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x * y == 0.0));
        let mut sum = vec![0.0; m.num_elements()];
        for me in m.macro_partition().unwrap() {
            for (s, v) in sum
                .iter_mut()
                .zip(macro_checkerboard(&m, me.j, me.k).unwrap())
            {
                *s += v;
            }
        }
        assert_eq!(sum, checkerboard(&m));
        assert!(macro_checkerboard(&m, 2, 1).is_err());
    }

    #[test]
    fn bubble_edge_values() {
        let sp = space(4, SpaceKind::DssyVec0(ThetaOrder::One));
        let psi = macro_bubble(&sp).unwrap();
        let m = sp.mesh().clone();
        let designated: Vec<usize> = m
            .macro_partition()
            .unwrap()
            .iter()
            .flat_map(|me| {
                [
                    m.element_edges(me.children[0])[1],
                    m.element_edges(me.children[2])[1],
                ]
            })
            .collect();
        for (id, edge) in m.edges().iter().enumerate() {
            for e in edge.elements.iter().flatten() {
                let [x, y] = local_midpoint(&m, *e, id);
                let v = psi.value(*e, x, y);
                if let Some(pos) = designated.iter().position(|&d| d == id) {
                    assert_eq!(edge.orientation, Orientation::Vertical);
                    let want = if pos % 2 == 0 { 1.0 } else { -1.0 };
                    assert!((v[0] - want).abs() < 1e-13 && v[1].abs() < 1e-13);
                } else {
                    assert!(v[0].abs() < 1e-13 && v[1].abs() < 1e-13);
                }
            }
        }
        assert!(macro_bubble(&space(3, SpaceKind::DssyVec0(ThetaOrder::One))).is_err());
        assert!(macro_bubble(&space(4, SpaceKind::P1ncVec0)).is_err());
    }

    #[test]
    fn interpolation_reproduces_linears() {
        let sp = space(4, SpaceKind::P1ncVec0);
        // zero on the boundary is not needed for the per-element identity
        let w = |x: f64, y: f64| [2.0 * x - y + 0.5, x + 3.0 * y];
        let f = interpolate_p1nc(|x, y| w(x, y), &sp).unwrap();
        let m = sp.mesh().clone();
        for e in 0..m.num_elements() {
            let interior = m
                .element_vertices(e)
                .iter()
                .all(|&v| !m.is_boundary_vertex(v));
            if interior {
                for &[xi, eta] in &[[0.1, 0.3], [-0.7, 0.2]] {
                    let [x, y] = m.map_to_physical(e, xi, eta);
                    let got = f.value(e, xi, eta);
                    let want = w(x, y);
                    assert!((got[0] - want[0]).abs() < 1e-14 && (got[1] - want[1]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn local_interpolant_examples() {
        // w = x̂ŷ: corner values alternate, all midpoint averages vanish
        let xy = CORNERS.map(|[x, y]| x * y);
        assert_eq!(local_p1nc_interpolant(xy), [0.0, 0.0, 0.0]);
        // w = x̂ + x̂ŷ → x̂
        let w = CORNERS.map(|[x, y]| x + x * y);
        assert_eq!(local_p1nc_interpolant(w), [0.0, 1.0, 0.0]);
        // ∫ div Π w over [-1,1]² = 1·4 = ∫ div w = ∫ (1 + ŷ)
        let rule = gauss_rule(4).unwrap();
        let div_w = rule.integrate(|_, y| 1.0 + y);
        assert!((div_w - 4.0).abs() < 1e-14);
    }

    #[test]
    fn pressure_projection() {
        let m = mesh(2);
        let sp = Arc::new(FeSpace::new(&m, SpaceKind::P0).unwrap());
        let rule = gauss_rule(4).unwrap();
        let red = PressureConstraints::reduced(&m).unwrap();
        let c = project_pressure(|_, _| 3.5, &sp, &red, &rule).unwrap();
        assert!(c.coeffs().iter().all(|v| v.abs() < 1e-14));
        let sigma = checkerboard(&m);
        let c = project_pressure(|x, y| sigma[m.locate(x, y)], &sp, &red, &rule).unwrap();
        assert!(c.coeffs().iter().all(|v| v.abs() < 1e-14));
        let c = project_pressure(|x, _| x, &sp, &red, &rule).unwrap();
        let want = [-0.25, 0.25, -0.25, 0.25];
        for (a, b) in c.coeffs().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(PressureConstraints::reduced(&mesh(1)).is_err());
    }

    #[test]
    fn reduced_constraints_are_independent() {
        for n in 2..8 {
            let m = mesh(n);
            let red = PressureConstraints::reduced(&m).unwrap();
            let b = red.basis();
            assert!((dot(&b[0], &b[1])).abs() < 1e-13);
            assert!((dot(&b[1], &b[1]) - 1.0).abs() < 1e-13);
            let mut q: Vec<f64> = (0..m.num_elements()).map(|i| (i as f64).sin()).collect();
            red.project(&mut q);
            assert!(red.violation(&q) < 1e-14);
        }
    }
}
