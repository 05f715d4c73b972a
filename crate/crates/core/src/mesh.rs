//! Structured meshes of square bilinear quadrilaterals and their Gauss-point layout.
//!
//! Nodes of the regular grid are numbered row-major from the minimum corner,
//! `id = j * (nx + 1) + i`. Nodes duplicated along seam notches are appended
//! after the grid nodes in the order the seams are processed.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Local coordinate of the 2x2 Gauss rule, `1/sqrt(3)`.
pub const GAUSS_COORD: f64 = 0.577_350_269_189_625_8;

/// Local Gauss point coordinates in storage order `2 * eta_index + xi_index`.
pub const GAUSS_POINTS: [[f64; 2]; 4] = [
    [-GAUSS_COORD, -GAUSS_COORD],
    [GAUSS_COORD, -GAUSS_COORD],
    [-GAUSS_COORD, GAUSS_COORD],
    [GAUSS_COORD, GAUSS_COORD],
];

/// Local node coordinates of the counter-clockwise bilinear quad.
pub const NODE_LOCAL: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NotchRepresentation {
    /// Nodes along the notch line are duplicated so the two faces separate.
    #[default]
    Seam,
    /// No geometric cut; Gauss points next to the segment start with a large history value.
    InducedHistory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotchSpec<T> {
    pub start: [T; 2],
    pub end: [T; 2],
    pub orientation: Orientation,
    pub representation: NotchRepresentation,
}

impl<T: Scalar> NotchSpec<T> {
    pub fn horizontal(x0: T, x1: T, y: T) -> Self {
        Self {
            start: [x0, y],
            end: [x1, y],
            orientation: Orientation::Horizontal,
            representation: NotchRepresentation::Seam,
        }
    }

    pub fn vertical(x: T, y0: T, y1: T) -> Self {
        Self {
            start: [x, y0],
            end: [x, y1],
            orientation: Orientation::Vertical,
            representation: NotchRepresentation::Seam,
        }
    }

    pub fn with_representation(mut self, representation: NotchRepresentation) -> Self {
        self.representation = representation;
        self
    }
}

/// A notch snapped to the grid: it runs along grid line `line` (a row index
/// `j` for horizontal notches, a column index `i` for vertical ones) between
/// grid positions `from < to` along the other axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnappedNotch {
    pub orientation: Orientation,
    pub representation: NotchRepresentation,
    pub line: usize,
    pub from: usize,
    pub to: usize,
}

/// Nodes duplicated along one seam notch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeamRecord {
    pub notch: SnappedNotch,
    /// `(original, duplicate)` node pairs, ordered along the seam.
    pub duplicated: Vec<(usize, usize)>,
    /// Notch end points strictly inside the domain. They stay shared.
    pub tips: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundarySide {
    Bottom,
    Top,
    Left,
    Right,
}

impl BoundarySide {
    pub const ALL: [BoundarySide; 4] = [
        BoundarySide::Bottom,
        BoundarySide::Top,
        BoundarySide::Left,
        BoundarySide::Right,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundarySide::Bottom => "bottom",
            BoundarySide::Top => "top",
            BoundarySide::Left => "left",
            BoundarySide::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BoundarySets {
    pub bottom: Vec<usize>,
    pub top: Vec<usize>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl BoundarySets {
    pub fn get(&self, side: BoundarySide) -> &[usize] {
        match side {
            BoundarySide::Bottom => &self.bottom,
            BoundarySide::Top => &self.top,
            BoundarySide::Left => &self.left,
            BoundarySide::Right => &self.right,
        }
    }

    fn get_mut(&mut self, side: BoundarySide) -> &mut Vec<usize> {
        match side {
            BoundarySide::Bottom => &mut self.bottom,
            BoundarySide::Top => &mut self.top,
            BoundarySide::Left => &mut self.left,
            BoundarySide::Right => &mut self.right,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StructuredMesh<T> {
    pub lx: T,
    pub ly: T,
    pub nx: usize,
    pub ny: usize,
    pub elem_size: T,
    pub node_coords: Vec<[T; 2]>,
    pub elem_connectivity: Vec<[usize; 4]>,
    pub boundary_sets: BoundarySets,
    pub notch_seams: Vec<SeamRecord>,
    /// All notches after snapping, including induced-history ones.
    pub notches: Vec<SnappedNotch>,
    /// Position of every node in a bandwidth-friendly ordering: row- or
    /// column-major grid order, with each seam duplicate right after its original.
    pub node_rank: Vec<usize>,
}

impl<T: Scalar> StructuredMesh<T> {
    pub fn num_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elem_connectivity.len()
    }

    pub fn num_gauss_points(&self) -> usize {
        4 * self.num_elements()
    }

    /// Gauss point index of local point `local` (see [`GAUSS_POINTS`]) in element `elem`.
    #[inline]
    pub fn gp_index(elem: usize, local: usize) -> usize {
        4 * elem + local
    }

    /// Grid index `(i, j)` of a node; duplicates report their original's position.
    pub fn grid_position(&self, node: usize) -> (usize, usize) {
        let n = self.grid_node_count();
        let original = if node < n {
            node
        } else {
            self.original_of(node)
        };
        (original % (self.nx + 1), original / (self.nx + 1))
    }

    pub fn grid_node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    fn original_of(&self, dup: usize) -> usize {
        self.notch_seams
            .iter()
            .flat_map(|s| s.duplicated.iter())
            .find(|&&(_, d)| d == dup)
            .map(|&(o, _)| o)
            .expect("duplicate node has an original")
    }

    /// Largest rank difference between two nodes of one element.
    pub fn node_bandwidth(&self) -> usize {
        rank_bandwidth(&self.node_rank, &self.elem_connectivity)
    }

    /// Physical coordinates of the Gauss points of one element.
    pub fn element_gauss_coords(&self, elem: usize) -> [[T; 2]; 4] {
        let ex = elem % self.nx;
        let ey = elem / self.nx;
        let half = self.elem_size * T::lit(0.5);
        let cx = T::from_usize(ex).unwrap() * self.elem_size + half;
        let cy = T::from_usize(ey).unwrap() * self.elem_size + half;
        GAUSS_POINTS.map(|[xi, eta]| [cx + half * T::lit(xi), cy + half * T::lit(eta)])
    }

    /// Plain-text summary for debugging.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "structured-mesh");
        let _ = writeln!(s, "domain {} x {}", self.lx, self.ly);
        let _ = writeln!(
            s,
            "elements {} x {} = {}",
            self.nx,
            self.ny,
            self.num_elements()
        );
        let _ = writeln!(s, "elem_size {}", self.elem_size);
        let _ = writeln!(
            s,
            "nodes {} (grid {}, duplicated {})",
            self.num_nodes(),
            self.grid_node_count(),
            self.num_nodes() - self.grid_node_count()
        );
        let _ = writeln!(s, "bbox [0, {}] x [0, {}]", self.lx, self.ly);
        for side in BoundarySide::ALL {
            let _ = writeln!(
                s,
                "boundary {} {}",
                side.name(),
                self.boundary_sets.get(side).len()
            );
        }
        for n in &self.notches {
            let kind = match n.representation {
                NotchRepresentation::Seam => "seam",
                NotchRepresentation::InducedHistory => "induced-history",
            };
            let dir = match n.orientation {
                Orientation::Horizontal => "horizontal",
                Orientation::Vertical => "vertical",
            };
            let _ = writeln!(
                s,
                "notch {dir} {kind} line {} from {} to {}",
                n.line, n.from, n.to
            );
        }
        s
    }
}

fn snap(value: f64, size: f64, max_index: usize, what: &str) -> Result<usize> {
    let k = (value / size).round();
    if (value - k * size).abs() > 0.5 * size + 1e-12 * size || k < 0.0 || k > max_index as f64 {
        return Err(Error::Mesh(format!(
            "{what} {value} does not snap to the grid"
        )));
    }
    Ok(k as usize)
}

fn snap_notch<T: Scalar>(
    notch: &NotchSpec<T>,
    size: f64,
    nx: usize,
    ny: usize,
) -> Result<SnappedNotch> {
    let [x0, y0] = notch.start.map(|v| v.as_f64());
    let [x1, y1] = notch.end.map(|v| v.as_f64());
    for v in [x0, y0, x1, y1] {
        if !v.is_finite() {
            return Err(Error::Mesh("notch coordinates must be finite".into()));
        }
    }
    let (line, a, b, line_max, along_max) = match notch.orientation {
        Orientation::Horizontal => {
            if (y0 - y1).abs() > 0.5 * size {
                return Err(Error::Mesh(format!(
                    "horizontal notch ({x0}, {y0}) -> ({x1}, {y1}) is not on one grid line"
                )));
            }
            let line = snap(0.5 * (y0 + y1), size, ny, "notch y")?;
            (
                line,
                snap(x0, size, nx, "notch x")?,
                snap(x1, size, nx, "notch x")?,
                ny,
                nx,
            )
        }
        Orientation::Vertical => {
            if (x0 - x1).abs() > 0.5 * size {
                return Err(Error::Mesh(format!(
                    "vertical notch ({x0}, {y0}) -> ({x1}, {y1}) is not on one grid line"
                )));
            }
            let line = snap(0.5 * (x0 + x1), size, nx, "notch x")?;
            (
                line,
                snap(y0, size, ny, "notch y")?,
                snap(y1, size, ny, "notch y")?,
                nx,
                ny,
            )
        }
    };
    let (from, to) = if a <= b { (a, b) } else { (b, a) };
    if from == to {
        return Err(Error::Mesh(
            "notch has zero length after snapping to the grid".into(),
        ));
    }
    if notch.representation == NotchRepresentation::Seam && (line == 0 || line == line_max) {
        return Err(Error::Mesh("seam notch lies on the domain boundary".into()));
    }
    debug_assert!(to <= along_max);
    Ok(SnappedNotch {
        orientation: notch.orientation,
        representation: notch.representation,
        line,
        from,
        to,
    })
}

fn ranks_for(keys: &[(usize, usize, usize)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&n| keys[n]);
    let mut rank = vec![0; keys.len()];
    for (r, &n) in order.iter().enumerate() {
        rank[n] = r;
    }
    rank
}

fn rank_bandwidth(rank: &[usize], conn: &[[usize; 4]]) -> usize {
    conn.iter()
        .map(|c| {
            let r = c.map(|n| rank[n]);
            r.iter().max().unwrap() - r.iter().min().unwrap()
        })
        .max()
        .unwrap_or(0)
}

/// Builds a structured mesh of `nx * ny` square elements on `[0, lx] x [0, ly]`.
pub fn build_mesh<T: Scalar>(
    lx: T,
    ly: T,
    nx: usize,
    ny: usize,
    notches: &[NotchSpec<T>],
) -> Result<StructuredMesh<T>> {
    if !(lx > T::zero() && ly > T::zero()) {
        return Err(Error::Mesh(format!(
            "domain size must be positive, got {lx} x {ly}"
        )));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::Mesh(format!(
            "need at least 2 x 2 elements, got {nx} x {ny}"
        )));
    }
    let hx = lx.as_f64() / nx as f64;
    let hy = ly.as_f64() / ny as f64;
    if ((hx - hy) / hx).abs() > 1e-12 {
        return Err(Error::Mesh(format!(
            "elements are not square: lx/nx = {hx}, ly/ny = {hy}"
        )));
    }
    let elem_size = lx / T::from_usize(nx).unwrap();
    let stride = nx + 1;

    let mut node_coords = Vec::with_capacity(stride * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx {
                lx
            } else {
                T::from_usize(i).unwrap() * elem_size
            };
            let y = if j == ny {
                ly
            } else {
                T::from_usize(j).unwrap() * elem_size
            };
            node_coords.push([x, y]);
        }
    }
    let mut elem_connectivity = Vec::with_capacity(nx * ny);
    for ey in 0..ny {
        for ex in 0..nx {
            let n0 = ey * stride + ex;
            elem_connectivity.push([n0, n0 + 1, n0 + 1 + stride, n0 + stride]);
        }
    }

    let mut boundary_sets = BoundarySets {
        bottom: (0..=nx).collect(),
        top: (0..=nx).map(|i| ny * stride + i).collect(),
        left: (0..=ny).map(|j| j * stride).collect(),
        right: (0..=ny).map(|j| j * stride + nx).collect(),
    };

    let mut snapped = Vec::with_capacity(notches.len());
    for notch in notches {
        snapped.push(snap_notch(notch, elem_size.as_f64(), nx, ny)?);
    }

    let mut duplicated_nodes = vec![false; stride * (ny + 1)];
    let mut notch_seams = Vec::new();
    let mut rank_key: Vec<(usize, usize, usize)> = (0..stride * (ny + 1))
        .map(|n| (n / stride, n % stride, 0))
        .collect();
    for notch in snapped
        .iter()
        .filter(|n| n.representation == NotchRepresentation::Seam)
    {
        let mut record = SeamRecord {
            notch: notch.clone(),
            duplicated: Vec::new(),
            tips: Vec::new(),
        };
        let (along_max, node_at): (usize, Box<dyn Fn(usize) -> usize>) = match notch.orientation {
            Orientation::Horizontal => (nx, Box::new(|k| notch.line * stride + k)),
            Orientation::Vertical => (ny, Box::new(|k| k * stride + notch.line)),
        };
        for k in notch.from..=notch.to {
            let node = node_at(k);
            let on_boundary = k == 0 || k == along_max;
            let is_end = k == notch.from || k == notch.to;
            if is_end && !on_boundary {
                record.tips.push(node);
                continue;
            }
            if duplicated_nodes[node] {
                return Err(Error::Mesh("seam notches overlap".into()));
            }
            duplicated_nodes[node] = true;
            let dup = node_coords.len();
            node_coords.push(node_coords[node]);
            rank_key.push((rank_key[node].0, rank_key[node].1, 1));
            record.duplicated.push((node, dup));
            for side in BoundarySide::ALL {
                if boundary_sets.get(side).contains(&node) {
                    boundary_sets.get_mut(side).push(dup);
                }
            }
        }
        // Elements above (horizontal) or right of (vertical) the seam use the duplicates.
        let (e_from, e_to) = (notch.from, notch.to);
        for k in e_from..e_to {
            let elem = match notch.orientation {
                Orientation::Horizontal => notch.line * nx + k,
                Orientation::Vertical => k * nx + notch.line,
            };
            for slot in elem_connectivity[elem].iter_mut() {
                if let Some(&(_, dup)) = record.duplicated.iter().find(|&&(o, _)| o == *slot) {
                    *slot = dup;
                }
            }
        }
        notch_seams.push(record);
    }

    // Row-major or column-major levels, whichever gives the narrower band.
    let by_rows = ranks_for(&rank_key);
    let by_cols = ranks_for(
        &rank_key
            .iter()
            .map(|&(j, i, d)| (i, j, d))
            .collect::<Vec<_>>(),
    );
    let node_rank = if rank_bandwidth(&by_cols, &elem_connectivity)
        < rank_bandwidth(&by_rows, &elem_connectivity)
    {
        by_cols
    } else {
        by_rows
    };

    Ok(StructuredMesh {
        lx,
        ly,
        nx,
        ny,
        elem_size,
        node_coords,
        elem_connectivity,
        boundary_sets,
        notch_seams,
        notches: snapped,
        node_rank,
    })
}

/// Gauss-point grid that doubles as the network's pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussGrid<T> {
    /// Pixel columns, `2 * nx`.
    pub px: usize,
    /// Pixel rows, `2 * ny`.
    pub py: usize,
    pub gp_coords: Vec<[T; 2]>,
    /// `(row, col)` of every Gauss point; row 0 sits at the minimum-y edge.
    pub gp_to_pixel: Vec<(usize, usize)>,
    /// Row-major pixel index to Gauss point index.
    pub pixel_to_gp: Vec<usize>,
    /// Nominal pixel spacing, `elem_size / 2`.
    pub h_px: T,
}

pub fn gauss_grid<T: Scalar>(mesh: &StructuredMesh<T>) -> GaussGrid<T> {
    let (px, py) = (2 * mesh.nx, 2 * mesh.ny);
    let n = mesh.num_gauss_points();
    let mut gp_coords = Vec::with_capacity(n);
    let mut gp_to_pixel = Vec::with_capacity(n);
    let mut pixel_to_gp = vec![0; n];
    for elem in 0..mesh.num_elements() {
        let (ex, ey) = (elem % mesh.nx, elem / mesh.nx);
        let coords = mesh.element_gauss_coords(elem);
        for (local, xy) in coords.into_iter().enumerate() {
            let row = 2 * ey + local / 2;
            let col = 2 * ex + local % 2;
            gp_coords.push(xy);
            gp_to_pixel.push((row, col));
            pixel_to_gp[row * px + col] = StructuredMesh::<T>::gp_index(elem, local);
        }
    }
    GaussGrid {
        px,
        py,
        gp_coords,
        gp_to_pixel,
        pixel_to_gp,
        h_px: mesh.elem_size * T::lit(0.5),
    }
}
