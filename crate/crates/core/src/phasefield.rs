//! Finite-element solve of the AT2 phase-field equation driven by the history field.
//!
//! With `g(phi) = (1 - phi)^2` the equation is linear in `phi`:
//! `(gc / lc + 2 H) phi - gc lc lap(phi) = 2 H`, with zero normal flux on the boundary.

use crate::elasticity::MaterialParams;
use crate::element::ReferenceElement;
use crate::error::{Error, Result};
use crate::linalg::{self, LinearSolver, SymmetricBand};
use crate::mesh::StructuredMesh;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct PhaseFieldSystem<T> {
    pub matrix: SymmetricBand<T>,
    pub rhs: Vec<T>,
    pub constraints: Vec<(usize, T)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseFieldState<T> {
    pub phi_nodal: Vec<T>,
    pub phi_gp: Vec<T>,
    /// Extremes of the nodal solution before clamping to `[0, 1]`.
    pub raw_min: T,
    pub raw_max: T,
}

impl<T: Scalar> PhaseFieldState<T> {
    pub fn intact(mesh: &StructuredMesh<T>) -> Self {
        Self {
            phi_nodal: vec![T::zero(); mesh.num_nodes()],
            phi_gp: vec![T::zero(); mesh.num_gauss_points()],
            raw_min: T::zero(),
            raw_max: T::zero(),
        }
    }

    pub fn max_nodal(&self) -> T {
        self.phi_nodal.iter().copied().fold(T::zero(), T::max)
    }
}

pub fn assemble_phasefield<T: Scalar>(
    mesh: &StructuredMesh<T>,
    mat: &MaterialParams<T>,
    history: &[T],
) -> Result<PhaseFieldSystem<T>> {
    if history.len() != mesh.num_gauss_points() {
        return Err(Error::Shape(format!(
            "history has {} values for {} Gauss points",
            history.len(),
            mesh.num_gauss_points()
        )));
    }
    let reference = ReferenceElement::new(mesh.elem_size);
    let w = reference.weight;
    let mut mass = [[[T::zero(); 4]; 4]; 4];
    let mut diffusion = [[[T::zero(); 4]; 4]; 4];
    for g in 0..4 {
        for a in 0..4 {
            for b in 0..4 {
                mass[g][a][b] = w * reference.n[g][a] * reference.n[g][b];
                let (ga, gb) = (reference.grad[g][a], reference.grad[g][b]);
                diffusion[g][a][b] = w * (ga[0] * gb[0] + ga[1] * gb[1]);
            }
        }
    }
    let n = mesh.num_nodes();
    let mut matrix = SymmetricBand::zeros(n, mesh.node_bandwidth());
    let mut rhs = vec![T::zero(); n];
    let reaction = mat.gc / mat.lc;
    let diff = mat.gc * mat.lc;
    let two = T::lit(2.0);
    for (elem, conn) in mesh.elem_connectivity.iter().enumerate() {
        let eqs = conn.map(|node| mesh.node_rank[node]);
        let mut ke = [[T::zero(); 4]; 4];
        let mut fe = [T::zero(); 4];
        for g in 0..4 {
            let h = history[StructuredMesh::<T>::gp_index(elem, g)];
            let coef = reaction + two * h;
            for a in 0..4 {
                for b in 0..4 {
                    ke[a][b] += coef * mass[g][a][b] + diff * diffusion[g][a][b];
                }
                fe[a] += two * h * w * reference.n[g][a];
            }
        }
        for a in 0..4 {
            for b in 0..=a {
                matrix.add(eqs[a], eqs[b], ke[a][b]);
            }
            rhs[eqs[a]] += fe[a];
        }
    }
    Ok(PhaseFieldSystem {
        matrix,
        rhs,
        constraints: Vec::new(),
    })
}

/// Prescribes nodal values, eliminating the rows symmetrically.
pub fn prescribe<T: Scalar>(
    mesh: &StructuredMesh<T>,
    mut system: PhaseFieldSystem<T>,
    values: &[(usize, T)],
) -> PhaseFieldSystem<T> {
    let diag_scale = {
        let d = system.matrix.diagonal();
        d.iter().copied().sum::<T>() / T::from_usize(d.len().max(1)).unwrap()
    };
    for &(node, value) in values {
        let c = mesh.node_rank[node];
        for j in system.matrix.row_range(c) {
            if j != c {
                let k = system.matrix.get(j, c);
                system.rhs[j] -= k * value;
                system.matrix.set(j, c, T::zero());
            }
        }
        system.matrix.set(c, c, diag_scale);
        system.rhs[c] = diag_scale * value;
        system.constraints.push((c, value));
    }
    system
}

/// Interpolates nodal values to the Gauss points.
pub fn nodal_to_gauss<T: Scalar>(mesh: &StructuredMesh<T>, nodal: &[T]) -> Vec<T> {
    let reference = ReferenceElement::new(mesh.elem_size);
    let mut out = Vec::with_capacity(mesh.num_gauss_points());
    for conn in &mesh.elem_connectivity {
        for g in 0..4 {
            out.push((0..4).map(|a| reference.n[g][a] * nodal[conn[a]]).sum());
        }
    }
    out
}

pub fn solve_phasefield<T: Scalar>(
    mesh: &StructuredMesh<T>,
    system: &PhaseFieldSystem<T>,
    solver: LinearSolver,
) -> Result<PhaseFieldState<T>> {
    let (mut x, _) = linalg::solve(&system.matrix, &system.rhs, solver, 1e-10)?;
    for &(c, v) in &system.constraints {
        x[c] = v;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "phase-field solution".into(),
            increment: None,
        });
    }
    let mut raw_min = T::infinity();
    let mut raw_max = T::neg_infinity();
    let phi_nodal: Vec<T> = (0..mesh.num_nodes())
        .map(|node| {
            let v = x[mesh.node_rank[node]];
            raw_min = raw_min.min(v);
            raw_max = raw_max.max(v);
            v.max(T::zero()).min(T::one())
        })
        .collect();
    let phi_gp = nodal_to_gauss(mesh, &phi_nodal);
    Ok(PhaseFieldState {
        phi_nodal,
        phi_gp,
        raw_min,
        raw_max,
    })
}
