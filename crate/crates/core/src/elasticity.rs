//! Plane-strain equilibrium with phase-field degraded stiffness, spectral
//! energy split and the history variable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::element::ReferenceElement;
use crate::error::{Error, Result};
use crate::linalg::{self, LinearSolver, SymmetricBand};
use crate::mesh::{BoundarySide, StructuredMesh};
use crate::scalar::Scalar;

/// Residual stiffness fraction kept at `phi = 1`.
pub const DEFAULT_RESIDUAL_STIFFNESS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams<T> {
    /// First Lamé constant (N/mm²).
    pub lambda: T,
    /// Shear modulus (N/mm²).
    pub mu: T,
    /// Critical energy release rate (N/mm).
    pub gc: T,
    /// Characteristic length (mm).
    pub lc: T,
}

impl<T: Scalar> MaterialParams<T> {
    pub fn new(lambda: T, mu: T, gc: T, lc: T) -> Result<Self> {
        let m = Self { lambda, mu, gc, lc };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let two_thirds = T::lit(2.0 / 3.0);
        if !(self.mu > T::zero()) {
            return Err(Error::Config(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !(self.lambda > -two_thirds * self.mu) {
            return Err(Error::Config(format!(
                "lambda must exceed -2/3 mu, got {}",
                self.lambda
            )));
        }
        if !(self.gc > T::zero()) || !(self.lc > T::zero()) {
            return Err(Error::Config(format!(
                "gc and lc must be positive, got {} and {}",
                self.gc, self.lc
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> MaterialParams<U> {
        MaterialParams {
            lambda: U::lit(self.lambda.as_f64()),
            mu: U::lit(self.mu.as_f64()),
            gc: U::lit(self.gc.as_f64()),
            lc: U::lit(self.lc.as_f64()),
        }
    }

    /// Plane-strain modulus `E / (1 - nu^2)`.
    pub fn plane_strain_modulus(&self) -> T {
        let four = T::lit(4.0);
        four * self.mu * (self.lambda + self.mu) / (self.lambda + T::lit(2.0) * self.mu)
    }

    fn d_matrix(&self) -> [[T; 3]; 3] {
        let c11 = self.lambda + T::lit(2.0) * self.mu;
        let z = T::zero();
        [
            [c11, self.lambda, z],
            [self.lambda, c11, z],
            [z, z, self.mu],
        ]
    }
}

/// Small-strain tensor in 2D; `xy` is the tensor (not engineering) shear component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Strain<T> {
    pub xx: T,
    pub yy: T,
    pub xy: T,
}

impl<T: Scalar> Strain<T> {
    pub fn new(xx: T, yy: T, xy: T) -> Self {
        Self { xx, yy, xy }
    }

    pub fn trace(&self) -> T {
        self.xx + self.yy
    }

    /// Principal strains, largest first.
    pub fn principal(&self) -> (T, T) {
        let half = T::lit(0.5);
        let m = half * (self.xx + self.yy);
        let d = half * (self.xx - self.yy);
        let r = d.hypot(self.xy);
        (m + r, m - r)
    }

    /// The tensor expressed in axes rotated by `theta`.
    pub fn rotated(&self, theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        let xx = c * c * self.xx + s * s * self.yy + T::lit(2.0) * s * c * self.xy;
        let yy = s * s * self.xx + c * c * self.yy - T::lit(2.0) * s * c * self.xy;
        let xy = (c * c - s * s) * self.xy + s * c * (self.yy - self.xx);
        Self { xx, yy, xy }
    }

    /// Undamaged strain energy density.
    pub fn energy(&self, mat: &MaterialParams<T>) -> T {
        let tr = self.trace();
        let contraction = self.xx * self.xx + self.yy * self.yy + T::lit(2.0) * self.xy * self.xy;
        T::lit(0.5) * mat.lambda * tr * tr + mat.mu * contraction
    }
}

#[inline]
fn macaulay_pos<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

#[inline]
fn macaulay_neg<T: Scalar>(x: T) -> T {
    x.min(T::zero())
}

/// Tensile and compressive strain energy densities from the spectral split.
///
/// The out-of-plane principal strain is zero under plane strain and does not contribute.
pub fn spectral_split<T: Scalar>(strain: &Strain<T>, mat: &MaterialParams<T>) -> (T, T) {
    let tr = strain.trace();
    let (e1, e2) = strain.principal();
    let half_lambda = T::lit(0.5) * mat.lambda;
    let tp = macaulay_pos(tr);
    let tn = macaulay_neg(tr);
    let (p1, p2) = (macaulay_pos(e1), macaulay_pos(e2));
    let (n1, n2) = (macaulay_neg(e1), macaulay_neg(e2));
    let plus = half_lambda * tp * tp + mat.mu * (p1 * p1 + p2 * p2);
    let minus = half_lambda * tn * tn + mat.mu * (n1 * n1 + n2 * n2);
    (plus, minus)
}

/// Degradation `(1 - k)(1 - phi)^2 + k`.
#[inline]
pub fn degradation<T: Scalar>(phi: T, k_res: T) -> T {
    let one = T::one();
    (one - k_res) * (one - phi) * (one - phi) + k_res
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletBc<T> {
    pub node: usize,
    pub axis: Axis,
    pub value: T,
}

/// Global equation number of a node DOF in the banded ordering.
#[inline]
pub fn dof<T: Scalar>(mesh: &StructuredMesh<T>, node: usize, axis: usize) -> usize {
    2 * mesh.node_rank[node] + axis
}

/// Assembled equilibrium system with Dirichlet rows eliminated symmetrically.
#[derive(Debug, Clone)]
pub struct EquilibriumSystem<T> {
    pub matrix: SymmetricBand<T>,
    pub rhs: Vec<T>,
    /// Constrained equations and their prescribed values, sorted by equation.
    pub constraints: Vec<(usize, T)>,
    /// Rows of the unconstrained stiffness for every constrained equation.
    pub constrained_rows: Vec<Vec<(usize, T)>>,
}

fn element_stiffness_per_gp<T: Scalar>(
    reference: &ReferenceElement<T>,
    mat: &MaterialParams<T>,
) -> [[[T; 8]; 8]; 4] {
    let d = mat.d_matrix();
    let mut out = [[[T::zero(); 8]; 8]; 4];
    for (g, b) in reference.b.iter().enumerate() {
        for i in 0..8 {
            for j in 0..8 {
                let mut s = T::zero();
                for p in 0..3 {
                    for q in 0..3 {
                        s += b[p][i] * d[p][q] * b[q][j];
                    }
                }
                out[g][i][j] = s * reference.weight;
            }
        }
    }
    out
}

/// Element stiffness for given per-Gauss-point degradation factors.
pub fn element_stiffness<T: Scalar>(
    mesh: &StructuredMesh<T>,
    mat: &MaterialParams<T>,
    factors: [T; 4],
) -> [[T; 8]; 8] {
    let per_gp = element_stiffness_per_gp(&ReferenceElement::new(mesh.elem_size), mat);
    combine(&per_gp, factors)
}

fn combine<T: Scalar>(per_gp: &[[[T; 8]; 8]; 4], factors: [T; 4]) -> [[T; 8]; 8] {
    let mut ke = [[T::zero(); 8]; 8];
    for (g, kg) in per_gp.iter().enumerate() {
        for i in 0..8 {
            for j in 0..8 {
                ke[i][j] += factors[g] * kg[i][j];
            }
        }
    }
    ke
}

fn element_dofs<T: Scalar>(mesh: &StructuredMesh<T>, elem: usize) -> [usize; 8] {
    let conn = mesh.elem_connectivity[elem];
    let mut dofs = [0; 8];
    for (a, &node) in conn.iter().enumerate() {
        dofs[2 * a] = dof(mesh, node, 0);
        dofs[2 * a + 1] = dof(mesh, node, 1);
    }
    dofs
}

/// Assembles the degraded stiffness `g(phi) [lambda tr(eps) I + 2 mu eps]` and applies constraints.
pub fn assemble_equilibrium<T: Scalar>(
    mesh: &StructuredMesh<T>,
    mat: &MaterialParams<T>,
    phi_gp: &[T],
    dirichlet: &[DirichletBc<T>],
    k_res: T,
) -> Result<EquilibriumSystem<T>> {
    if phi_gp.len() != mesh.num_gauss_points() {
        return Err(Error::Shape(format!(
            "phase field has {} values for {} Gauss points",
            phi_gp.len(),
            mesh.num_gauss_points()
        )));
    }
    let n = 2 * mesh.num_nodes();
    let bw = 2 * mesh.node_bandwidth() + 1;
    let mut matrix = SymmetricBand::zeros(n, bw);
    let per_gp = element_stiffness_per_gp(&ReferenceElement::new(mesh.elem_size), mat);
    for elem in 0..mesh.num_elements() {
        let g0 = StructuredMesh::<T>::gp_index(elem, 0);
        let factors = [0, 1, 2, 3].map(|l| degradation(phi_gp[g0 + l], k_res));
        let ke = combine(&per_gp, factors);
        let dofs = element_dofs(mesh, elem);
        for a in 0..8 {
            for b in 0..=a {
                matrix.add(dofs[a], dofs[b], ke[a][b]);
            }
        }
    }
    let rhs = vec![T::zero(); n];
    apply_constraints(mesh, matrix, rhs, dirichlet)
}

fn apply_constraints<T: Scalar>(
    mesh: &StructuredMesh<T>,
    mut matrix: SymmetricBand<T>,
    mut rhs: Vec<T>,
    dirichlet: &[DirichletBc<T>],
) -> Result<EquilibriumSystem<T>> {
    let mut prescribed: BTreeMap<usize, T> = BTreeMap::new();
    for bc in dirichlet {
        if bc.node >= mesh.num_nodes() {
            return Err(Error::Config(format!(
                "constraint on missing node {}",
                bc.node
            )));
        }
        let eq = dof(mesh, bc.node, bc.axis.index());
        if let Some(&old) = prescribed.get(&eq) {
            if old != bc.value {
                return Err(Error::Config(format!(
                    "node {} axis {:?} prescribed twice ({old} and {})",
                    bc.node, bc.axis, bc.value
                )));
            }
        }
        prescribed.insert(eq, bc.value);
    }
    let constraints: Vec<(usize, T)> = prescribed.into_iter().collect();
    let constrained_rows: Vec<Vec<(usize, T)>> = constraints
        .iter()
        .map(|&(c, _)| {
            matrix
                .row_range(c)
                .filter_map(|j| {
                    let v = matrix.get(c, j);
                    (!v.is_zero()).then_some((j, v))
                })
                .collect()
        })
        .collect();
    for &(c, value) in &constraints {
        for j in matrix.row_range(c) {
            if j == c {
                continue;
            }
            let kjc = matrix.get(j, c);
            if !kjc.is_zero() {
                rhs[j] -= kjc * value;
                matrix.set(j, c, T::zero());
            }
        }
    }
    // Unit diagonal scaled like the rest of the matrix keeps the conditioning sane.
    let scale = {
        let d = matrix.diagonal();
        let s: T = d.iter().copied().sum();
        s / T::from_usize(d.len().max(1)).unwrap()
    };
    for &(c, value) in &constraints {
        matrix.set(c, c, scale);
        rhs[c] = scale * value;
    }
    Ok(EquilibriumSystem {
        matrix,
        rhs,
        constraints,
        constrained_rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementState<T> {
    /// Nodal displacements `[u0x, u0y, u1x, ...]` in node order.
    pub u: Vec<T>,
    pub dirichlet: Vec<DirichletBc<T>>,
    /// Resultant reaction `[Fx, Fy]` over the constrained DOFs of each boundary set.
    pub reactions: BTreeMap<BoundarySide, [T; 2]>,
    /// Sum of all reactions over constrained DOFs, each counted once.
    pub total_reaction: [T; 2],
    pub relative_residual: T,
}

impl<T: Scalar> DisplacementState<T> {
    pub fn reaction(&self, side: BoundarySide, axis: Axis) -> T {
        self.reactions
            .get(&side)
            .map_or(T::zero(), |r| r[axis.index()])
    }
}

pub fn solve_equilibrium<T: Scalar>(
    mesh: &StructuredMesh<T>,
    system: &EquilibriumSystem<T>,
    dirichlet: &[DirichletBc<T>],
    solver: LinearSolver,
) -> Result<DisplacementState<T>> {
    let (mut x, residual) = linalg::solve(&system.matrix, &system.rhs, solver, 1e-10)?;
    for &(c, value) in &system.constraints {
        x[c] = value;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "displacement solution".into(),
            increment: None,
        });
    }
    let mut u = vec![T::zero(); x.len()];
    for node in 0..mesh.num_nodes() {
        for axis in 0..2 {
            u[2 * node + axis] = x[dof(mesh, node, axis)];
        }
    }
    let mut reaction_of: BTreeMap<usize, T> = BTreeMap::new();
    let mut total = [T::zero(); 2];
    for (&(c, _), row) in system.constraints.iter().zip(&system.constrained_rows) {
        let r: T = row.iter().map(|&(j, k)| k * x[j]).sum();
        reaction_of.insert(c, r);
        total[c % 2] += r;
    }
    let mut reactions = BTreeMap::new();
    for side in BoundarySide::ALL {
        let mut f = [T::zero(); 2];
        for &node in mesh.boundary_sets.get(side) {
            for (axis, fa) in f.iter_mut().enumerate() {
                if let Some(&r) = reaction_of.get(&dof(mesh, node, axis)) {
                    *fa += r;
                }
            }
        }
        reactions.insert(side, f);
    }
    Ok(DisplacementState {
        u,
        dirichlet: dirichlet.to_vec(),
        reactions,
        total_reaction: total,
        relative_residual: residual,
    })
}

/// Strains at every Gauss point for nodal displacements `u` (node order).
pub fn gauss_strains<T: Scalar>(mesh: &StructuredMesh<T>, u: &[T]) -> Vec<Strain<T>> {
    let reference = ReferenceElement::new(mesh.elem_size);
    let mut out = Vec::with_capacity(mesh.num_gauss_points());
    for conn in &mesh.elem_connectivity {
        let mut ue = [T::zero(); 8];
        for (a, &node) in conn.iter().enumerate() {
            ue[2 * a] = u[2 * node];
            ue[2 * a + 1] = u[2 * node + 1];
        }
        for b in &reference.b {
            let e: [T; 3] = [0, 1, 2].map(|p| (0..8).map(|k| b[p][k] * ue[k]).sum());
            out.push(Strain::new(e[0], e[1], T::lit(0.5) * e[2]));
        }
    }
    out
}

/// Per-Gauss-point elastic fields.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GpElasticFields<T> {
    pub strain: Vec<Strain<T>>,
    pub psi_plus: Vec<T>,
    pub psi_minus: Vec<T>,
    pub history: Vec<T>,
}

impl<T: Scalar> GpElasticFields<T> {
    pub fn with_history(history: Vec<T>) -> Self {
        Self {
            history,
            ..Default::default()
        }
    }

    /// Recomputes strains and energies from `u`, leaving the history untouched.
    pub fn evaluate(&mut self, mesh: &StructuredMesh<T>, mat: &MaterialParams<T>, u: &[T]) {
        self.strain = gauss_strains(mesh, u);
        let (plus, minus): (Vec<T>, Vec<T>) =
            self.strain.iter().map(|s| spectral_split(s, mat)).unzip();
        self.psi_plus = plus;
        self.psi_minus = minus;
    }
}

/// `history <- max(history, psi_plus_new)` elementwise.
pub fn update_history<T: Scalar>(
    mut fields: GpElasticFields<T>,
    psi_plus_new: &[T],
) -> Result<GpElasticFields<T>> {
    if fields.history.is_empty() {
        fields.history = vec![T::zero(); psi_plus_new.len()];
    }
    if fields.history.len() != psi_plus_new.len() {
        return Err(Error::Shape(format!(
            "history has {} entries, new energies {}",
            fields.history.len(),
            psi_plus_new.len()
        )));
    }
    for (h, &p) in fields.history.iter_mut().zip(psi_plus_new) {
        if p > *h {
            *h = p;
        }
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    fn steel() -> MaterialParams<f64> {
        MaterialParams::new(121154.0, 80770.0, 2.7, 0.03).unwrap()
    }

    #[test]
    fn zero_strain_has_no_energy() {
        assert_eq!(spectral_split(&Strain::default(), &steel()), (0.0, 0.0));
    }

    #[test]
    fn uniaxial_tension_energy() {
        // (lambda / 2 + mu) e^2 evaluated by hand.
        let (p, m) = spectral_split(&Strain::new(1e-3, 0.0, 0.0), &steel());
        assert!((p - 0.141347).abs() < 1e-12, "{p}");
        assert_eq!(m, 0.0);
    }

    #[test]
    fn pure_shear_splits_evenly() {
        let (p, m) = spectral_split(&Strain::new(0.0, 0.0, 5e-4), &steel());
        assert!((p - 2.01925e-2).abs() < 1e-12);
        assert!((m - 2.01925e-2).abs() < 1e-12);
    }

    #[test]
    fn material_validation() {
        assert!(MaterialParams::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(MaterialParams::new(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(MaterialParams::new(-0.5, 1.0, 1.0, 1.0).is_ok());
        assert!(MaterialParams::new(1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn history_is_elementwise_max_and_idempotent() {
        let f = GpElasticFields::with_history(vec![1.0, 5.0]);
        let f = update_history(f, &[3.0, 2.0]).unwrap();
        assert_eq!(f.history, vec![3.0, 5.0]);
        let g = update_history(f.clone(), &[3.0, 2.0]).unwrap();
        assert_eq!(g.history, f.history);
        assert!(update_history(g, &[1.0]).is_err());
    }

    #[test]
    fn degradation_limits() {
        assert_eq!(degradation(0.0, 1e-6), 1.0);
        assert!((degradation(1.0f64, 1e-6) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn single_element_matches_hand_assembly() {
        // Independent oracle: integrate B^T D B with explicit shape function
        // derivatives of the unit square, lambda = 0, mu = 1.
        let mesh = build_mesh(2.0_f64, 2.0, 2, 2, &[]).unwrap();
        let mat = MaterialParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let ke = element_stiffness(&mesh, &mat, [1.0; 4]);
        let g = 1.0 / 3f64.sqrt();
        let nodes = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let mut oracle = [[0.0; 8]; 8];
        for &(xi, eta) in &[(-g, -g), (g, -g), (-g, g), (g, g)] {
            let (x, y) = ((xi + 1.0) / 2.0, (eta + 1.0) / 2.0);
            // N_a for the unit square: products of (1 - x | x) and (1 - y | y).
            let dn: Vec<(f64, f64)> = nodes
                .iter()
                .map(|&(nx, ny): &(f64, f64)| {
                    let fx = if nx == 0.0 { 1.0 - x } else { x };
                    let fy = if ny == 0.0 { 1.0 - y } else { y };
                    let dfx = if nx == 0.0 { -1.0 } else { 1.0 };
                    let dfy = if ny == 0.0 { -1.0 } else { 1.0 };
                    (dfx * fy, fx * dfy)
                })
                .collect();
            let w = 0.25; // unit weights times |J| of the unit square.
            for a in 0..4 {
                for b in 0..4 {
                    let (ax, ay) = dn[a];
                    let (bx, by) = dn[b];
                    // sigma = 2 eps with lambda = 0, mu = 1.
                    oracle[2 * a][2 * b] += w * (2.0 * ax * bx + ay * by);
                    oracle[2 * a][2 * b + 1] += w * (ay * bx);
                    oracle[2 * a + 1][2 * b] += w * (ax * by);
                    oracle[2 * a + 1][2 * b + 1] += w * (2.0 * ay * by + ax * bx);
                }
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                assert!(
                    (ke[i][j] - oracle[i][j]).abs() < 1e-14,
                    "({i},{j}) {} vs {}",
                    ke[i][j],
                    oracle[i][j]
                );
            }
        }
        // 2 * 1/3 + 1/3 for the corner node.
        assert!((ke[0][0] - 1.0).abs() < 1e-14);
    }
}
