//! Uniform node lattices over bounded domains in one and two dimensions.
//!
//! A [`Grid`] stores the nodes of the bounding box of the domain. Nodes that
//! lie strictly inside the declared shape are the unknowns; every other node,
//! and the exterior collar around the box, carries the value zero. The collar
//! is never stored node by node: quadrature over it is done from offsets.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on lattice nodes per axis, per dimension.
const MAX_NODES_1D: usize = 1 << 14;
const MAX_NODES_2D: usize = 513;
/// Upper bound on collar width measured in cells.
const MAX_COLLAR_CELLS: usize = 1 << 12;

/// Shape of the domain inside its bounding box. Disks and annuli are centred
/// at the box centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Interval,
    Rectangle,
    Disk { radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

/// Everything needed to rebuild a grid. This is also the serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub shape: Shape,
    /// One `[lo, hi]` pair per axis.
    pub bounds: Vec<[f64; 2]>,
    pub nodes_per_axis: usize,
    /// Radius of the exterior region represented around the domain.
    pub collar: f64,
}

impl DomainSpec {
    pub fn interval(lo: f64, hi: f64, nodes_per_axis: usize) -> Self {
        DomainSpec {
            shape: Shape::Interval,
            bounds: vec![[lo, hi]],
            nodes_per_axis,
            collar: hi - lo,
        }
    }

    pub fn disk(radius: f64, nodes_per_axis: usize) -> Self {
        DomainSpec {
            shape: Shape::Disk { radius },
            bounds: vec![[-radius, radius], [-radius, radius]],
            nodes_per_axis,
            collar: 2.0 * radius,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn diameter(&self) -> f64 {
        let len = |k: usize| self.bounds[k][1] - self.bounds[k][0];
        match &self.shape {
            Shape::Interval => len(0),
            Shape::Rectangle => len(0).hypot(len(1)),
            Shape::Disk { radius } => 2.0 * radius,
            Shape::Annulus { outer, .. } => 2.0 * outer,
        }
    }

    fn validate(&self) -> Result<()> {
        let want_dim = match self.shape {
            Shape::Interval => 1,
            _ => 2,
        };
        if self.bounds.len() != want_dim {
            return Err(Error::Domain(format!(
                "shape {:?} needs {} axis bounds, got {}",
                self.shape,
                want_dim,
                self.bounds.len()
            )));
        }
        for (k, b) in self.bounds.iter().enumerate() {
            if !(b[0].is_finite() && b[1].is_finite()) {
                return Err(Error::Domain(format!("axis {k} has non-finite bounds")));
            }
            if b[1] - b[0] <= 0.0 {
                return Err(Error::Domain(format!("axis {k} has zero or negative length")));
            }
        }
        if want_dim == 2 {
            let (lx, ly) = (
                self.bounds[0][1] - self.bounds[0][0],
                self.bounds[1][1] - self.bounds[1][0],
            );
            if ((lx - ly) / lx).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "axes have different lengths ({lx} vs {ly}); spacing must be uniform"
                )));
            }
        }
        let max_nodes = if want_dim == 1 { MAX_NODES_1D } else { MAX_NODES_2D };
        if self.nodes_per_axis < 3 {
            return Err(Error::Domain(format!(
                "nodes_per_axis must be at least 3, got {}",
                self.nodes_per_axis
            )));
        }
        if self.nodes_per_axis > max_nodes {
            return Err(Error::Domain(format!(
                "nodes_per_axis {} exceeds the limit {max_nodes}",
                self.nodes_per_axis
            )));
        }
        let half = 0.5 * (self.bounds[0][1] - self.bounds[0][0]);
        match self.shape {
            Shape::Disk { radius } => {
                if !(radius > 0.0 && radius <= half * (1.0 + 1e-12)) {
                    return Err(Error::Domain(format!(
                        "disk radius {radius} must lie in (0, {half}]"
                    )));
                }
            }
            Shape::Annulus { inner, outer } => {
                if !(inner > 0.0 && inner < outer && outer <= half * (1.0 + 1e-12)) {
                    return Err(Error::Domain(format!(
                        "annulus radii ({inner}, {outer}) must satisfy 0 < inner < outer <= {half}"
                    )));
                }
            }
            _ => {}
        }
        let diam = self.diameter();
        if !self.collar.is_finite() || self.collar < diam * (1.0 - 1e-12) {
            return Err(Error::Domain(format!(
                "collar {} must be at least the domain diameter {diam}",
                self.collar
            )));
        }
        let h = 2.0 * half / (self.nodes_per_axis - 1) as f64;
        if self.collar / h > MAX_COLLAR_CELLS as f64 {
            return Err(Error::Domain(format!(
                "collar spans {:.0} cells, limit is {MAX_COLLAR_CELLS}",
                self.collar / h
            )));
        }
        Ok(())
    }
}

/// Uniform lattice over the bounding box of a domain.
#[derive(Debug, Clone)]
pub struct Grid {
    spec: DomainSpec,
    dim: usize,
    n: usize,
    h: f64,
    center: [f64; 2],
    interior: Vec<bool>,
    unknown_of: Vec<Option<usize>>,
    node_of: Vec<usize>,
    /// Chebyshev distance, in cells, from each node to the nearest exterior node.
    depth: Vec<usize>,
    collar_cells: usize,
}

impl Grid {
    pub fn new(spec: DomainSpec) -> Result<Arc<Grid>> {
        spec.validate()?;
        let dim = spec.dim();
        let n = spec.nodes_per_axis;
        let len = spec.bounds[0][1] - spec.bounds[0][0];
        let h = len / (n - 1) as f64;
        let mut center = [0.0; 2];
        for (k, b) in spec.bounds.iter().enumerate() {
            center[k] = 0.5 * (b[0] + b[1]);
        }
        let total = n.pow(dim as u32);
        let mut grid = Grid {
            collar_cells: (spec.collar / h).ceil() as usize,
            spec,
            dim,
            n,
            h,
            center,
            interior: vec![false; total],
            unknown_of: vec![None; total],
            node_of: Vec::new(),
            depth: vec![0; total],
        };
        for node in 0..total {
            if grid.inside_shape(node) {
                grid.interior[node] = true;
                grid.unknown_of[node] = Some(grid.node_of.len());
                grid.node_of.push(node);
            }
        }
        if grid.node_of.is_empty() {
            return Err(Error::Domain("no lattice node lies inside the domain".into()));
        }
        grid.depth = grid.depth_transform();
        Ok(Arc::new(grid))
    }

    fn inside_shape(&self, node: usize) -> bool {
        // box-edge nodes are decided by index so rounding never admits them
        let idx = self.axis_index(node);
        if (0..self.dim).any(|k| idx[k] == 0 || idx[k] == self.n - 1) {
            return false;
        }
        let off = self.offset(node);
        match self.spec.shape {
            Shape::Interval | Shape::Rectangle => true,
            Shape::Disk { radius } => off[0].hypot(off[1]) < radius,
            Shape::Annulus { inner, outer } => {
                let r = off[0].hypot(off[1]);
                r > inner && r < outer
            }
        }
    }

    fn depth_transform(&self) -> Vec<usize> {
        let total = self.node_count();
        let mut depth = vec![usize::MAX; total];
        let mut queue = VecDeque::new();
        for node in 0..total {
            if !self.interior[node] {
                depth[node] = 0;
                queue.push_back(node);
            }
        }
        while let Some(node) = queue.pop_front() {
            let d = depth[node];
            for nb in self.chebyshev_neighbors(node) {
                if depth[nb] == usize::MAX {
                    depth[nb] = d + 1;
                    queue.push_back(nb);
                }
            }
        }
        depth
    }

    fn chebyshev_neighbors(&self, node: usize) -> Vec<usize> {
        let idx = self.axis_index(node);
        let n = self.n as isize;
        let mut out = Vec::with_capacity(8);
        let range_y: &[isize] = if self.dim == 2 { &[-1, 0, 1] } else { &[0] };
        for &dy in range_y {
            for dx in [-1isize, 0, 1] {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (i, j) = (idx[0] as isize + dx, idx[1] as isize + dy);
                if i >= 0 && i < n && j >= 0 && (self.dim == 1 || j < n) {
                    out.push(self.node_at([i as usize, j as usize]));
                }
            }
        }
        out
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn shape(&self) -> &Shape {
        &self.spec.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n
    }

    /// Lattice spacing `h`.
    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Volume `h^N` of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn node_count(&self) -> usize {
        self.interior.len()
    }

    pub fn interior_count(&self) -> usize {
        self.node_of.len()
    }

    /// Discrete measure of the domain: interior nodes times the cell volume.
    pub fn measure(&self) -> f64 {
        self.interior_count() as f64 * self.cell_volume()
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.interior[node]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.interior
    }

    pub fn unknown_of(&self, node: usize) -> Option<usize> {
        self.unknown_of[node]
    }

    /// Lattice node of the given unknown.
    pub fn node_of(&self, unknown: usize) -> usize {
        self.node_of[unknown]
    }

    pub fn collar_radius(&self) -> f64 {
        self.spec.collar
    }

    /// Collar width in whole cells (`ceil(R / h)`).
    pub fn collar_cells(&self) -> usize {
        self.collar_cells
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    pub fn axis_index(&self, node: usize) -> [usize; 2] {
        if self.dim == 1 {
            [node, 0]
        } else {
            [node % self.n, node / self.n]
        }
    }

    pub fn node_at(&self, idx: [usize; 2]) -> usize {
        idx[0] + self.n * idx[1]
    }

    /// Position of a node relative to the box centre. Computed from the
    /// centred index so that mirror nodes get exactly negated offsets.
    fn offset(&self, node: usize) -> [f64; 2] {
        let idx = self.axis_index(node);
        let mid = 0.5 * (self.n - 1) as f64;
        let mut off = [0.0; 2];
        for k in 0..self.dim {
            off[k] = (idx[k] as f64 - mid) * self.h;
        }
        off
    }

    /// Node coordinates; the second entry is zero in one dimension.
    pub fn coords(&self, node: usize) -> [f64; 2] {
        let off = self.offset(node);
        let mut x = [0.0; 2];
        for k in 0..self.dim {
            x[k] = self.center[k] + off[k];
        }
        x
    }

    /// Neighbour along `axis` in direction `step` (±1), or `None` when it
    /// falls outside the bounding box (and therefore in the zero collar).
    pub fn neighbor(&self, node: usize, axis: usize, step: isize) -> Option<usize> {
        let mut idx = self.axis_index(node);
        let moved = idx[axis] as isize + step;
        if moved < 0 || moved >= self.n as isize {
            return None;
        }
        idx[axis] = moved as usize;
        Some(self.node_at(idx))
    }

    pub fn mirror_node(&self, node: usize, axis: usize) -> usize {
        let mut idx = self.axis_index(node);
        idx[axis] = self.n - 1 - idx[axis];
        self.node_at(idx)
    }

    /// Cells between the node and the nearest non-interior node (Chebyshev).
    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Unknowns lying more than `margin` cells inside the domain.
    pub fn compact_unknowns(&self, margin: usize) -> Vec<usize> {
        (0..self.interior_count())
            .filter(|&k| self.depth[self.node_of[k]] > margin)
            .collect()
    }

    /// Errors unless the interior mask is invariant under reflection.
    pub fn check_symmetric(&self, axis: usize) -> Result<()> {
        if axis >= self.dim {
            return Err(Error::AsymmetricGrid(axis));
        }
        let symmetric =
            (0..self.node_count()).all(|v| self.interior[v] == self.interior[self.mirror_node(v, axis)]);
        if symmetric {
            Ok(())
        } else {
            Err(Error::AsymmetricGrid(axis))
        }
    }

    /// Structured-text form of the grid (shape, bounds, resolution, collar).
    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("domain spec serializes")
    }

    pub fn from_document(doc: &str) -> Result<Arc<Grid>> {
        let spec: DomainSpec = serde_json::from_str(doc)?;
        Grid::new(spec)
    }
}

/// Nodal values on a grid, zero at every node outside the domain.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl PartialEq for GridFunction {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) && self.values == other.values
    }
}

impl GridFunction {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        GridFunction {
            grid: Arc::clone(grid),
            values: vec![0.0; grid.node_count()],
        }
    }

    /// Places one value per unknown on the lattice and zeros the rest.
    pub fn zero_extend(grid: &Arc<Grid>, interior: &[f64]) -> Result<Self> {
        if interior.len() != grid.interior_count() {
            return Err(Error::Length {
                expected: grid.interior_count(),
                got: interior.len(),
            });
        }
        if let Some(k) = interior.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite value at unknown {k}")));
        }
        let mut values = vec![0.0; grid.node_count()];
        for (k, &v) in interior.iter().enumerate() {
            values[grid.node_of(k)] = v;
        }
        Ok(GridFunction {
            grid: Arc::clone(grid),
            values,
        })
    }

    /// Samples `f` at interior nodes.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let vals: Vec<f64> = (0..grid.interior_count())
            .map(|k| f(grid.coords(grid.node_of(k))))
            .collect();
        GridFunction::zero_extend(grid, &vals)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// All lattice values, including the zeros outside the domain.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interior_values(&self) -> Vec<f64> {
        (0..self.grid.interior_count())
            .map(|k| self.values[self.grid.node_of(k)])
            .collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_interior(&self) -> f64 {
        (0..self.grid.interior_count())
            .map(|k| self.values[self.grid.node_of(k)])
            .fold(f64::INFINITY, f64::min)
    }

    /// Applies `f` to every interior value.
    pub fn map_interior(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let vals: Vec<f64> = self.interior_values().into_iter().map(f).collect();
        GridFunction::zero_extend(&self.grid, &vals)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        GridFunction {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Sup-norm distance to another function on the same grid.
    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Mirror image across the midplane of `axis`.
    pub fn reflect(&self, axis: usize) -> Result<Self> {
        self.grid.check_symmetric(axis)?;
        let values = (0..self.values.len())
            .map(|v| self.values[self.grid.mirror_node(v, axis)])
            .collect();
        Ok(GridFunction {
            grid: Arc::clone(&self.grid),
            values,
        })
    }

    /// CSV rows `node,x[,y],value` for every lattice node.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::new();
        if g.dim() == 1 {
            out.push_str("node,x,value\n");
        } else {
            out.push_str("node,x,y,value\n");
        }
        for (node, v) in self.values.iter().enumerate() {
            let x = g.coords(node);
            if g.dim() == 1 {
                let _ = writeln!(out, "{node},{},{v}", x[0]);
            } else {
                let _ = writeln!(out, "{node},{},{},{v}", x[0], x[1]);
            }
        }
        out
    }

    /// Parses the CSV layout written by [`GridFunction::to_csv`]. Rows may
    /// come in any order but every lattice node must appear exactly once,
    /// with coordinates matching the grid. Values at non-interior nodes are
    /// discarded.
    pub fn from_csv(grid: &Arc<Grid>, text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let want_cols = grid.dim() + 2;
        let mut values = vec![f64::NAN; grid.node_count()];
        let tol = 1e-9 * (1.0 + grid.spacing() * grid.nodes_per_axis() as f64);
        for (row_no, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != want_cols {
                return Err(Error::param(format!(
                    "row {row_no}: expected {want_cols} columns, got {}",
                    record.len()
                )));
            }
            let parse = |k: usize| -> Result<f64> {
                record[k]
                    .parse::<f64>()
                    .map_err(|e| Error::param(format!("row {row_no} column {k}: {e}")))
            };
            let node: usize = record[0]
                .parse()
                .map_err(|e| Error::param(format!("row {row_no}: bad node index: {e}")))?;
            if node >= grid.node_count() {
                return Err(Error::param(format!("row {row_no}: node {node} out of range")));
            }
            let x = grid.coords(node);
            for k in 0..grid.dim() {
                let c = parse(1 + k)?;
                if !((c - x[k]).abs() <= tol) {
                    return Err(Error::param(format!(
                        "row {row_no}: coordinate {c} does not match node {node} ({})",
                        x[k]
                    )));
                }
            }
            let v = parse(want_cols - 1)?;
            if !v.is_finite() {
                return Err(Error::param(format!("row {row_no}: non-finite value")));
            }
            if !values[node].is_nan() {
                return Err(Error::param(format!("row {row_no}: node {node} repeated")));
            }
            values[node] = v;
        }
        if let Some(missing) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::param(format!("node {missing} missing from csv")));
        }
        for (node, v) in values.iter_mut().enumerate() {
            if !grid.is_interior(node) {
                *v = 0.0;
            }
        }
        Ok(GridFunction {
            grid: Arc::clone(grid),
            values,
        })
    }
}
