//! Displacement-driven simulations: FEM-only runs and hybrid runs where the
//! network replaces the phase-field solve once a crack has formed.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::elasticity::{
    assemble_equilibrium, solve_equilibrium, update_history, Axis, DirichletBc, GpElasticFields,
    MaterialParams, DEFAULT_RESIDUAL_STIFFNESS,
};
use crate::error::{Error, Result};
use crate::linalg::LinearSolver;
use crate::mesh::{
    gauss_grid, BoundarySide, GaussGrid, NotchRepresentation, Orientation, StructuredMesh,
};
use crate::phasefield::{assemble_phasefield, solve_phasefield, PhaseFieldState};
use crate::picnn::{ForwardCache, PicnnModel};
use crate::pixel::{
    cap_field, enforce_irreversibility, gaussian_smooth, gp_to_pixels, pixels_to_gp,
    ConditioningConfig, PixelGrid,
};
use crate::scalar::Scalar;

/// History value seeded next to induced-history notches (N/mm²).
pub const INDUCED_HISTORY: f64 = 1e6;

/// Phase-field level that marks a pixel as cracked.
pub const CRACK_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSegment {
    pub count: usize,
    /// Displacement added per increment (mm).
    pub delta_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSchedule {
    pub segments: Vec<LoadSegment>,
    /// Boundary set that carries the imposed displacement.
    #[serde(default = "default_loaded_side")]
    pub loaded_side: BoundarySide,
    #[serde(default = "default_axis")]
    pub axis: Axis,
}

fn default_loaded_side() -> BoundarySide {
    BoundarySide::Top
}

fn default_axis() -> Axis {
    Axis::Y
}

impl LoadSchedule {
    pub fn uniform(count: usize, delta_u: f64) -> Self {
        Self {
            segments: vec![LoadSegment { count, delta_u }],
            loaded_side: BoundarySide::Top,
            axis: Axis::Y,
        }
    }

    pub fn total_increments(&self) -> usize {
        self.segments.iter().map(|s| s.count).sum()
    }

    /// Imposed displacement after increment `n` (1-based); `n = 0` is the unloaded state.
    pub fn displacement_at(&self, n: usize) -> f64 {
        let mut left = n;
        let mut u = 0.0;
        for s in &self.segments {
            let k = left.min(s.count);
            // Multiplying instead of accumulating keeps the values reproducible across schedules.
            u += k as f64 * s.delta_u;
            left -= k;
            if left == 0 {
                break;
            }
        }
        u
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.delta_u > 0.0 && s.delta_u.is_finite()) {
                return Err(Error::Config(format!(
                    "schedule segment {i}: delta_u must be positive, got {}",
                    s.delta_u
                )));
            }
        }
        Ok(())
    }
}

/// One family of Dirichlet constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    /// Constrain every node of a boundary set ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<BoundarySide>,
    /// ... or the single grid node closest to a point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 2]>,
    pub axis: Axis,
    /// Prescribe the scheduled displacement instead of zero.
    #[serde(default)]
    pub loaded: bool,
}

impl BoundarySpec {
    pub fn fixed(side: BoundarySide, axis: Axis) -> Self {
        Self {
            side: Some(side),
            point: None,
            axis,
            loaded: false,
        }
    }

    pub fn loaded(side: BoundarySide, axis: Axis) -> Self {
        Self {
            side: Some(side),
            point: None,
            axis,
            loaded: true,
        }
    }

    pub fn pinned(point: [f64; 2], axis: Axis) -> Self {
        Self {
            side: None,
            point: Some(point),
            axis,
            loaded: false,
        }
    }
}

/// Bottom clamped, top pulled along y with the horizontal motion held.
pub fn tension_boundary() -> Vec<BoundarySpec> {
    vec![
        BoundarySpec::fixed(BoundarySide::Bottom, Axis::X),
        BoundarySpec::fixed(BoundarySide::Bottom, Axis::Y),
        BoundarySpec::fixed(BoundarySide::Top, Axis::X),
        BoundarySpec::loaded(BoundarySide::Top, Axis::Y),
    ]
}

/// Constraints resolved to nodes; values are filled per increment.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedBoundary {
    entries: Vec<(usize, Axis, bool)>,
}

impl ResolvedBoundary {
    pub fn new<T: Scalar>(mesh: &StructuredMesh<T>, specs: &[BoundarySpec]) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            match (spec.side, spec.point) {
                (Some(side), None) => entries.extend(
                    mesh.boundary_sets
                        .get(side)
                        .iter()
                        .map(|&n| (n, spec.axis, spec.loaded)),
                ),
                (None, Some(p)) => {
                    let node = nearest_grid_node(mesh, p)?;
                    entries.push((node, spec.axis, spec.loaded));
                }
                _ => {
                    return Err(Error::Config(format!(
                        "boundary entry {i} needs exactly one of `side` or `point`"
                    )))
                }
            }
        }
        if entries.is_empty() {
            return Err(Error::Config("no displacement constraints given".into()));
        }
        Ok(Self { entries })
    }

    pub fn at<T: Scalar>(&self, u: T) -> Vec<DirichletBc<T>> {
        self.entries
            .iter()
            .map(|&(node, axis, loaded)| DirichletBc {
                node,
                axis,
                value: if loaded { u } else { T::zero() },
            })
            .collect()
    }
}

fn nearest_grid_node<T: Scalar>(mesh: &StructuredMesh<T>, p: [f64; 2]) -> Result<usize> {
    let h = mesh.elem_size.as_f64();
    let i = (p[0] / h).round();
    let j = (p[1] / h).round();
    if i < 0.0 || j < 0.0 || i > mesh.nx as f64 || j > mesh.ny as f64 {
        return Err(Error::Config(format!(
            "pinned point {p:?} lies outside the domain"
        )));
    }
    Ok(j as usize * (mesh.nx + 1) + i as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    FemOnly,
    Ifenn,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Staggered {
    /// One equilibrium solve followed by one phase-field update.
    #[default]
    SinglePass,
    /// Repeat until the largest Gauss-point change of the phase field drops to `tol`.
    Iterate {
        #[serde(default = "default_stag_tol")]
        tol: f64,
        #[serde(default = "default_stag_iters")]
        max_iters: usize,
    },
}

fn default_stag_tol() -> f64 {
    1e-3
}

fn default_stag_iters() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    /// Largest nodal phase field that switches the run to the network.
    pub activation_phi: f64,
    pub staggered: Staggered,
    pub conditioning: ConditioningConfig,
    pub solver: LinearSolver,
    pub residual_stiffness: f64,
    /// Increments whose fields are written to disk by the commands.
    pub snapshot_increments: Vec<usize>,
    /// Also write fields every `k` increments (0 disables).
    pub snapshot_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::FemOnly,
            activation_phi: 0.99,
            staggered: Staggered::SinglePass,
            conditioning: ConditioningConfig::default(),
            solver: LinearSolver::Direct,
            residual_stiffness: DEFAULT_RESIDUAL_STIFFNESS,
            snapshot_increments: Vec::new(),
            snapshot_every: 0,
        }
    }
}

impl RunConfig {
    pub fn wants_snapshot(&self, increment: usize) -> bool {
        self.snapshot_increments.contains(&increment)
            || (self.snapshot_every > 0 && increment % self.snapshot_every == 0)
    }

    pub fn validate(&self) -> Result<()> {
        // Values above 1 are allowed and simply never trigger the switch.
        if !(self.activation_phi > 0.0) {
            return Err(Error::Config(format!(
                "activation_phi must be positive, got {}",
                self.activation_phi
            )));
        }
        if let Staggered::Iterate { tol, max_iters } = self.staggered {
            if !(tol > 0.0) || max_iters == 0 {
                return Err(Error::Config(
                    "staggered iteration needs tol > 0 and max_iters >= 1".into(),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.residual_stiffness) {
            return Err(Error::Config(format!(
                "residual_stiffness must lie in [0, 1), got {}",
                self.residual_stiffness
            )));
        }
        if let LinearSolver::Cg { tol, max_iters } = self.solver {
            if !(tol > 0.0) || max_iters == 0 {
                return Err(Error::Config(
                    "cg solver needs tol > 0 and max_iters >= 1".into(),
                ));
            }
        }
        self.conditioning.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    Fem,
    Ifenn,
}

impl SolverMode {
    pub fn name(self) -> &'static str {
        match self {
            SolverMode::Fem => "fem",
            SolverMode::Ifenn => "ifenn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementRow {
    pub increment: usize,
    /// Imposed displacement (mm).
    pub displacement: f64,
    /// Reaction on the loaded boundary along the loading axis (N), tension positive.
    pub reaction: f64,
    /// Largest phase field: nodal in FEM mode, Gauss-point in hybrid mode.
    pub max_phi: f64,
    pub mode: SolverMode,
    pub stag_iters: usize,
    /// Rightmost cracked pixel column on the crack row, if a crack row is defined.
    pub tip_col: Option<usize>,
    pub t_equilibrium: f64,
    pub t_phase: f64,
    pub t_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<IncrementRow>,
    /// First increment solved with the network.
    pub activation_increment: Option<usize>,
    /// Pixel row used for crack-tip tracking.
    pub crack_row: Option<usize>,
}

impl RunRecord {
    pub fn peak_reaction(&self) -> f64 {
        self.rows.iter().map(|r| r.reaction).fold(0.0, f64::max)
    }

    /// Increment with the largest reaction.
    pub fn peak_increment(&self) -> Option<usize> {
        self.rows
            .iter()
            .max_by(|a, b| {
                a.reaction
                    .total_cmp(&b.reaction)
                    .then(b.increment.cmp(&a.increment))
            })
            .map(|r| r.increment)
    }
}

/// `(u, F)` pairs of a run.
pub fn reaction_curve(record: &RunRecord) -> Vec<(f64, f64)> {
    record
        .rows
        .iter()
        .map(|r| (r.displacement, r.reaction))
        .collect()
}

/// Rightmost column of `row` where the field exceeds the crack threshold.
pub fn crack_tip_column<T: Scalar>(phi: &PixelGrid<T>, row: usize) -> Option<usize> {
    if row >= phi.rows {
        return None;
    }
    (0..phi.cols)
        .rev()
        .find(|&c| phi.at(row, c).as_f64() > CRACK_THRESHOLD)
}

/// Pixel row just above the first horizontal notch.
pub fn default_crack_row<T: Scalar>(mesh: &StructuredMesh<T>) -> Option<usize> {
    mesh.notches
        .iter()
        .find(|n| n.orientation == Orientation::Horizontal)
        .map(|n| 2 * n.line)
}

/// Initial history: a large value on the Gauss points of elements touching
/// induced-history notches, zero elsewhere.
pub fn initial_history<T: Scalar>(mesh: &StructuredMesh<T>) -> Vec<T> {
    let mut h = vec![T::zero(); mesh.num_gauss_points()];
    for notch in mesh
        .notches
        .iter()
        .filter(|n| n.representation == NotchRepresentation::InducedHistory)
    {
        for elem in 0..mesh.num_elements() {
            let (ex, ey) = (elem % mesh.nx, elem / mesh.nx);
            let (across, along) = match notch.orientation {
                Orientation::Horizontal => (ey, ex),
                Orientation::Vertical => (ex, ey),
            };
            let touches_line = across + 1 == notch.line || across == notch.line;
            if touches_line && along >= notch.from && along < notch.to {
                for l in 0..4 {
                    h[StructuredMesh::<T>::gp_index(elem, l)] = T::lit(INDUCED_HISTORY);
                }
            }
        }
    }
    h
}

/// Fields visible to the per-increment observer.
pub struct IncrementView<'a, T> {
    pub row: &'a IncrementRow,
    pub mesh: &'a StructuredMesh<T>,
    pub grid: &'a GaussGrid<T>,
    pub phi_gp: &'a [T],
    pub history: &'a [T],
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub record: RunRecord,
    pub phi_gp: Vec<T>,
    pub history: Vec<T>,
}

pub fn run_fem<T: Scalar>(
    mesh: &StructuredMesh<T>,
    mat: &MaterialParams<T>,
    schedule: &LoadSchedule,
    boundary: &[BoundarySpec],
    cfg: &RunConfig,
    observer: &mut dyn FnMut(&IncrementView<T>) -> Result<()>,
) -> Result<RunOutput<T>> {
    let cfg = RunConfig {
        mode: RunMode::FemOnly,
        ..cfg.clone()
    };
    run(mesh, mat, schedule, boundary, &cfg, None, observer)
}

pub fn run_ifenn<T: Scalar>(
    mesh: &StructuredMesh<T>,
    mat: &MaterialParams<T>,
    schedule: &LoadSchedule,
    boundary: &[BoundarySpec],
    cfg: &RunConfig,
    model: &PicnnModel<T>,
    observer: &mut dyn FnMut(&IncrementView<T>) -> Result<()>,
) -> Result<RunOutput<T>> {
    let cfg = RunConfig {
        mode: RunMode::Ifenn,
        ..cfg.clone()
    };
    run(mesh, mat, schedule, boundary, &cfg, Some(model), observer)
}

/// Network stage of a hybrid increment: capped history map in, conditioned phase-field map out.
fn network_phase<T: Scalar>(
    model: &PicnnModel<T>,
    cache: &mut ForwardCache<T>,
    history: &[T],
    grid: &GaussGrid<T>,
    stored: &PixelGrid<T>,
    cond: &ConditioningConfig,
) -> Result<PixelGrid<T>> {
    let h_map = cap_field(&gp_to_pixels(history, grid)?, T::lit(cond.h_cap));
    model.forward_into(&h_map, cache)?;
    let mut phi = PixelGrid {
        values: cache.output().to_vec(),
        ..h_map
    };
    let smooth = |p: &PixelGrid<T>| -> Result<PixelGrid<T>> {
        if cond.smooth {
            gaussian_smooth(p, cond.smooth_kernel_size, T::lit(cond.smooth_sigma))
        } else {
            Ok(p.clone())
        }
    };
    if cond.irreversibility_before_smoothing {
        if cond.enforce_irreversibility {
            phi = enforce_irreversibility(&phi, stored)?;
        }
        phi = smooth(&phi)?;
    } else {
        phi = smooth(&phi)?;
        if cond.enforce_irreversibility {
            phi = enforce_irreversibility(&phi, stored)?;
        }
    }
    Ok(phi)
}

fn run<T: Scalar>(
    mesh: &StructuredMesh<T>,
    mat: &MaterialParams<T>,
    schedule: &LoadSchedule,
    boundary: &[BoundarySpec],
    cfg: &RunConfig,
    model: Option<&PicnnModel<T>>,
    observer: &mut dyn FnMut(&IncrementView<T>) -> Result<()>,
) -> Result<RunOutput<T>> {
    cfg.validate()?;
    schedule.validate()?;
    mat.validate()?;
    if cfg.mode == RunMode::Ifenn {
        let model =
            model.ok_or_else(|| Error::Config("hybrid mode needs a trained model".into()))?;
        model.architecture.validate()?;
    }
    let bcs = ResolvedBoundary::new(mesh, boundary)?;
    let grid = gauss_grid(mesh);
    let crack_row = default_crack_row(mesh);
    let k_res = T::lit(cfg.residual_stiffness);
    let cond = &cfg.conditioning;

    let mut fields = GpElasticFields::with_history(initial_history(mesh));
    let mut phase = PhaseFieldState::intact(mesh);
    if fields.history.iter().any(|&h| h > T::zero()) {
        let sys = assemble_phasefield(mesh, mat, &fields.history)?;
        phase = solve_phasefield(mesh, &sys, cfg.solver)?;
    }
    let mut phi_gp = phase.phi_gp.clone();
    let mut stored_map: Option<PixelGrid<T>> = None;
    let mut cache = ForwardCache::new();
    let mut record = RunRecord {
        crack_row,
        ..RunRecord::default()
    };
    let mut hybrid = false;

    for n in 1..=schedule.total_increments() {
        let start = Instant::now();
        let u = schedule.displacement_at(n);
        let dirichlet = bcs.at(T::lit(u));
        let committed_history = fields.history.clone();
        let (max_iters, tol) = match cfg.staggered {
            Staggered::SinglePass => (1, 0.0),
            Staggered::Iterate { tol, max_iters } => (max_iters, tol),
        };
        let mut t_eq = 0.0;
        let mut t_phase = 0.0;
        let mut iters = 0;
        let mut reaction = 0.0;
        let mut new_map = None;
        let step = |e: Error| e.at_increment(n);
        while iters < max_iters {
            iters += 1;
            let t0 = Instant::now();
            let system =
                assemble_equilibrium(mesh, mat, &phi_gp, &dirichlet, k_res).map_err(step)?;
            let disp = solve_equilibrium(mesh, &system, &dirichlet, cfg.solver).map_err(step)?;
            reaction = disp.reaction(schedule.loaded_side, schedule.axis).as_f64();
            fields.evaluate(mesh, mat, &disp.u);
            let mut psi = fields.psi_plus.clone();
            if cond.cap_before_history && hybrid {
                let cap = T::lit(cond.h_cap);
                psi.iter_mut().for_each(|v| *v = v.min(cap));
            }
            fields.history = committed_history.clone();
            fields = update_history(fields, &psi).map_err(step)?;
            t_eq += t0.elapsed().as_secs_f64();

            let t1 = Instant::now();
            let previous = phi_gp.clone();
            if hybrid {
                let stored = stored_map.as_ref().expect("stored map set at activation");
                let map = network_phase(
                    model.unwrap(),
                    &mut cache,
                    &fields.history,
                    &grid,
                    stored,
                    cond,
                )
                .map_err(step)?;
                phi_gp = pixels_to_gp(&map, &grid).map_err(step)?;
                new_map = Some(map);
            } else {
                let sys = assemble_phasefield(mesh, mat, &fields.history).map_err(step)?;
                phase = solve_phasefield(mesh, &sys, cfg.solver).map_err(step)?;
                phi_gp = phase.phi_gp.clone();
            }
            t_phase += t1.elapsed().as_secs_f64();
            if phi_gp.iter().any(|v| !v.is_finite()) {
                return Err(step(Error::NonFinite {
                    what: "phase field".into(),
                    increment: None,
                }));
            }
            let change = phi_gp
                .iter()
                .zip(&previous)
                .map(|(a, b)| (*a - *b).abs().as_f64())
                .fold(0.0, f64::max);
            if change <= tol {
                break;
            }
        }
        let mode = if hybrid {
            SolverMode::Ifenn
        } else {
            SolverMode::Fem
        };
        let max_phi = if hybrid {
            phi_gp.iter().map(|v| v.as_f64()).fold(0.0, f64::max)
        } else {
            phase.max_nodal().as_f64()
        };
        if let Some(map) = new_map {
            stored_map = Some(map);
        }
        let tip_col = crack_row.and_then(|r| {
            let map = match &stored_map {
                Some(m) if hybrid => m.clone(),
                _ => gp_to_pixels(&phi_gp, &grid).ok()?,
            };
            crack_tip_column(&map, r)
        });
        let row = IncrementRow {
            increment: n,
            displacement: u,
            reaction,
            max_phi,
            mode,
            stag_iters: iters,
            tip_col,
            t_equilibrium: t_eq,
            t_phase,
            t_total: start.elapsed().as_secs_f64(),
        };
        observer(&IncrementView {
            row: &row,
            mesh,
            grid: &grid,
            phi_gp: &phi_gp,
            history: &fields.history,
        })?;
        record.rows.push(row);

        if !hybrid && cfg.mode == RunMode::Ifenn && max_phi >= cfg.activation_phi {
            hybrid = true;
            record.activation_increment = Some(n + 1);
            stored_map = Some(gp_to_pixels(&phi_gp, &grid)?);
        }
    }
    Ok(RunOutput {
        record,
        phi_gp,
        history: fields.history,
    })
}
