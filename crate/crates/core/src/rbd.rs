//! Density / center / network urban-growth cellular automaton.
//!
//! Each step develops `patches_per_step` cells drawn without replacement with
//! probability proportional to a cell value: the weighted average of
//! normalized local density, closeness to the center and closeness to the
//! network. The network is a graph of grid nodes rooted at the center; every
//! `network_connect_interval` steps, cells developed since the last extension
//! that lie farther than `connection_threshold` from the network are linked to
//! their nearest node by a straight chain of unit-spaced nodes.
//!
//! Distance to the network is the Euclidean distance to the nearest node.
//! Distance to the center is measured through the network: the walk to the
//! nearest node plus the network path length from that node to the center.

use petgraph::algo::{connected_components, dijkstra};
use petgraph::graph::{NodeIndex, UnGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stfield::{Dims, FieldError, SpatioTemporalField};

pub const VARIABLES: [&str; 3] = ["dens", "ctr", "rd"];
pub const DENSITY: usize = 0;
pub const CENTER_DISTANCE: usize = 1;
pub const NETWORK_DISTANCE: usize = 2;

#[derive(Debug, Error)]
pub enum RbdError {
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },
    #[error("grid saturated: {remaining} undeveloped cells left, {requested} requested")]
    Saturated { remaining: usize, requested: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RbdParams {
    pub w_d: f64,
    pub w_c: f64,
    pub w_r: f64,
    pub grid_size: usize,
    pub steps: usize,
    pub patches_per_step: usize,
    pub density_radius: usize,
    pub network_connect_interval: usize,
    pub connection_threshold: f64,
    /// Selection probability is proportional to `value^selection_exponent`.
    pub selection_exponent: f64,
    pub seed: u64,
}

impl Default for RbdParams {
    fn default() -> Self {
        Self {
            w_d: 1.0,
            w_c: 1.0,
            w_r: 1.0,
            grid_size: 30,
            steps: 50,
            patches_per_step: 10,
            density_radius: 3,
            network_connect_interval: 1,
            connection_threshold: 2.0,
            selection_exponent: 1.0,
            seed: 0,
        }
    }
}

impl RbdParams {
    pub fn with_weights(mut self, w_d: f64, w_c: f64, w_r: f64) -> Self {
        self.w_d = w_d;
        self.w_c = w_c;
        self.w_r = w_r;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), RbdError> {
        let bad = |field, reason: String| Err(RbdError::Parameter { field, reason });
        for (field, w) in [("w_d", self.w_d), ("w_c", self.w_c), ("w_r", self.w_r)] {
            if !(0.0..=1.0).contains(&w) {
                return bad(field, format!("{w} is outside [0, 1]"));
            }
        }
        if self.grid_size < 5 {
            return bad("grid_size", format!("{} is below 5", self.grid_size));
        }
        if self.steps < 2 {
            return bad("steps", format!("{} is below 2", self.steps));
        }
        if self.patches_per_step < 1 {
            return bad("patches_per_step", "must be at least 1".into());
        }
        if self.network_connect_interval < 1 {
            return bad("network_connect_interval", "must be at least 1".into());
        }
        if !(self.connection_threshold >= 0.0 && self.connection_threshold.is_finite()) {
            return bad(
                "connection_threshold",
                format!(
                    "{} is not a finite non-negative distance",
                    self.connection_threshold
                ),
            );
        }
        if !(self.selection_exponent > 0.0 && self.selection_exponent.is_finite()) {
            return bad(
                "selection_exponent",
                format!(
                    "{} is not a finite positive exponent",
                    self.selection_exponent
                ),
            );
        }
        Ok(())
    }

    fn weights(&self) -> [f64; 3] {
        [self.w_d, self.w_c, self.w_r]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    fn distance(&self, other: &Cell) -> f64 {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        dr.hypot(dc)
    }
}

/// Weighted average of explanatory terms; uniform 0.5 when every weight is zero.
pub fn weighted_value(weights: [f64; 3], terms: [f64; 3]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.5;
    }
    let v: f64 = weights.iter().zip(terms).map(|(w, x)| w * x).sum::<f64>() / total;
    v.clamp(0.0, 1.0)
}

fn normalize(values: &[f64], closer_is_higher: bool) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|&v| {
            if closer_is_higher {
                (hi - v) / span
            } else {
                (v - lo) / span
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RbdState {
    size: usize,
    radius: usize,
    developed: Vec<bool>,
    undeveloped: usize,
    neighbourhood_count: Vec<u32>,
    network: UnGraph<Cell, f64>,
    node_at: Vec<Option<NodeIndex>>,
    network_distance_to_center: Vec<f64>,
    nearest_node: Vec<NodeIndex>,
    distance_to_network: Vec<f64>,
    center: Cell,
    center_node: NodeIndex,
    /// Cells developed since the last network extension, in development order.
    pending: Vec<usize>,
    time: usize,
}

impl RbdState {
    pub fn init(params: &RbdParams) -> Result<Self, RbdError> {
        params.validate()?;
        let size = params.grid_size;
        let n = size * size;
        let center = Cell::new(size / 2, size / 2);
        let mut network = UnGraph::new_undirected();
        let center_node = network.add_node(center);
        let mut state = Self {
            size,
            radius: params.density_radius,
            developed: vec![false; n],
            undeveloped: n,
            neighbourhood_count: vec![0; n],
            network,
            node_at: vec![None; n],
            network_distance_to_center: vec![0.0],
            nearest_node: vec![center_node; n],
            distance_to_network: vec![0.0; n],
            center,
            center_node,
            pending: Vec::new(),
            time: 0,
        };
        let c = state.index(center);
        state.node_at[c] = Some(center_node);
        for idx in 0..n {
            state.distance_to_network[idx] = state.cell(idx).distance(&center);
        }
        state.develop(c);
        state.pending.clear();
        Ok(state)
    }

    #[inline]
    fn index(&self, cell: Cell) -> usize {
        cell.row * self.size + cell.col
    }

    #[inline]
    fn cell(&self, idx: usize) -> Cell {
        Cell::new(idx / self.size, idx % self.size)
    }

    pub fn grid_size(&self) -> usize {
        self.size
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn center(&self) -> Cell {
        self.center
    }

    pub fn is_developed(&self, cell: Cell) -> bool {
        self.developed[self.index(cell)]
    }

    pub fn developed_count(&self) -> usize {
        self.developed.len() - self.undeveloped
    }

    pub fn undeveloped_count(&self) -> usize {
        self.undeveloped
    }

    /// Developed cells within the Chebyshev neighbourhood over its full size.
    pub fn density(&self, cell: Cell) -> f64 {
        self.density_at(self.index(cell))
    }

    fn density_at(&self, idx: usize) -> f64 {
        let side = (2 * self.radius + 1) as f64;
        self.neighbourhood_count[idx] as f64 / (side * side)
    }

    pub fn distance_to_network(&self, cell: Cell) -> f64 {
        self.distance_to_network[self.index(cell)]
    }

    pub fn distance_to_center(&self, cell: Cell) -> f64 {
        self.center_distance_at(self.index(cell))
    }

    fn center_distance_at(&self, idx: usize) -> f64 {
        self.distance_to_network[idx]
            + self.network_distance_to_center[self.nearest_node[idx].index()]
    }

    pub fn network_nodes(&self) -> Vec<Cell> {
        self.network.node_weights().copied().collect()
    }

    pub fn network_edges(&self) -> Vec<(Cell, Cell)> {
        self.network
            .edge_indices()
            .filter_map(|e| self.network.edge_endpoints(e))
            .map(|(a, b)| (self.network[a], self.network[b]))
            .collect()
    }

    pub fn network_is_connected(&self) -> bool {
        connected_components(&self.network) == 1
    }

    /// Per-cell `(dens, ctr, rd)` in row-major order.
    pub fn variables(&self) -> Vec<[f64; 3]> {
        (0..self.developed.len())
            .map(|idx| {
                [
                    self.density_at(idx),
                    self.center_distance_at(idx),
                    self.distance_to_network[idx],
                ]
            })
            .collect()
    }

    /// Values of every cell in row-major order, each in `[0, 1]`.
    pub fn cell_values(&self, params: &RbdParams) -> Vec<f64> {
        let n = self.developed.len();
        let density: Vec<f64> = (0..n).map(|i| self.density_at(i)).collect();
        let center: Vec<f64> = (0..n).map(|i| self.center_distance_at(i)).collect();
        let d = normalize(&density, false);
        let c = normalize(&center, true);
        let r = normalize(&self.distance_to_network, true);
        let w = params.weights();
        (0..n)
            .map(|i| weighted_value(w, [d[i], c[i], r[i]]))
            .collect()
    }

    pub fn cell_value(&self, cell: Cell, params: &RbdParams) -> f64 {
        self.cell_values(params)[self.index(cell)]
    }

    fn develop(&mut self, idx: usize) {
        debug_assert!(!self.developed[idx]);
        self.developed[idx] = true;
        self.undeveloped -= 1;
        self.pending.push(idx);
        let cell = self.cell(idx);
        let r = self.radius;
        let rows = cell.row.saturating_sub(r)..=(cell.row + r).min(self.size - 1);
        for row in rows {
            for col in cell.col.saturating_sub(r)..=(cell.col + r).min(self.size - 1) {
                self.neighbourhood_count[row * self.size + col] += 1;
            }
        }
    }

    fn node_for(&mut self, cell: Cell) -> NodeIndex {
        let idx = self.index(cell);
        if let Some(node) = self.node_at[idx] {
            return node;
        }
        let node = self.network.add_node(cell);
        self.node_at[idx] = Some(node);
        self.network_distance_to_center.push(f64::INFINITY);
        // strict improvement keeps the lowest node id on ties
        for i in 0..self.developed.len() {
            let d = self.cell(i).distance(&cell);
            if d < self.distance_to_network[i] {
                self.distance_to_network[i] = d;
                self.nearest_node[i] = node;
            }
        }
        node
    }

    fn connect(&mut self, target: usize) {
        let from_node = self.nearest_node[target];
        let from = self.network[from_node];
        let to = self.cell(target);
        let length = from.distance(&to);
        let segments = length.ceil().max(1.0) as usize;
        let mut prev = from_node;
        for s in 1..=segments {
            let f = s as f64 / segments as f64;
            let row = (from.row as f64 + (to.row as f64 - from.row as f64) * f).round() as usize;
            let col = (from.col as f64 + (to.col as f64 - from.col as f64) * f).round() as usize;
            let node = self.node_for(Cell::new(row, col));
            if node != prev && self.network.find_edge(prev, node).is_none() {
                let w = self.network[prev].distance(&self.network[node]);
                self.network.add_edge(prev, node, w);
            }
            prev = node;
        }
    }

    fn extend_network(&mut self, threshold: f64) {
        let pending = std::mem::take(&mut self.pending);
        let mut grew = false;
        for idx in pending {
            if self.distance_to_network[idx] > threshold {
                self.connect(idx);
                grew = true;
            }
        }
        if grew {
            let dist = dijkstra(&self.network, self.center_node, None, |e| *e.weight());
            for (node, d) in dist {
                self.network_distance_to_center[node.index()] = d;
            }
        }
    }

    /// Advances one step: network extension (on interval steps) for earlier
    /// developments, then growth of new patches.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        params: &RbdParams,
        rng: &mut R,
    ) -> Result<(), RbdError> {
        if self.undeveloped < params.patches_per_step {
            return Err(RbdError::Saturated {
                remaining: self.undeveloped,
                requested: params.patches_per_step,
            });
        }
        self.time += 1;
        if self.time % params.network_connect_interval == 0 {
            self.extend_network(params.connection_threshold);
        }
        let values = self.cell_values(params);
        let mut weights: Vec<f64> = values
            .iter()
            .zip(&self.developed)
            .map(|(&v, &d)| {
                if d {
                    0.0
                } else {
                    v.powf(params.selection_exponent)
                }
            })
            .collect();
        for _ in 0..params.patches_per_step {
            let idx = draw_proportional(&mut weights, &self.developed, rng);
            weights[idx] = 0.0;
            self.develop(idx);
        }
        Ok(())
    }
}

/// Index drawn with probability proportional to `weights`, uniformly among
/// undeveloped cells when all weights vanish.
fn draw_proportional<R: Rng + ?Sized>(
    weights: &mut [f64],
    developed: &[bool],
    rng: &mut R,
) -> usize {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut last = None;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                last = Some(i);
                if u < acc {
                    return i;
                }
            }
        }
        if let Some(i) = last {
            return i;
        }
    }
    let free: Vec<usize> = (0..developed.len())
        .filter(|&i| !developed[i] && weights[i] == 0.0)
        .collect();
    free[rng.random_range(0..free.len())]
}

/// Runs a realization, calling `observe` on the initial state and after every step.
/// A saturated grid freezes: remaining steps repeat the last state.
pub fn run_observed<F>(params: &RbdParams, mut observe: F) -> Result<(), RbdError>
where
    F: FnMut(&RbdState),
{
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut state = RbdState::init(params)?;
    observe(&state);
    for _ in 1..params.steps {
        match state.step(params, &mut rng) {
            Ok(()) => {}
            Err(RbdError::Saturated { .. }) => {}
            Err(e) => return Err(e),
        }
        observe(&state);
    }
    Ok(())
}

/// One realization as a field with `I = grid_size²` (row-major cells),
/// variables `dens, ctr, rd`, `T = steps` and a single replication.
pub fn run(params: &RbdParams) -> Result<SpatioTemporalField, RbdError> {
    params.validate()?;
    let units = params.grid_size * params.grid_size;
    let dims = Dims::new(units, VARIABLES.len(), params.steps, 1);
    let names = VARIABLES.iter().map(|s| s.to_string()).collect();
    let mut field = SpatioTemporalField::empty(dims, names)?;
    let mut t = 0;
    let mut result = Ok(());
    run_observed(params, |state| {
        if result.is_err() {
            return;
        }
        for (i, vars) in state.variables().iter().enumerate() {
            for (j, &v) in vars.iter().enumerate() {
                if let Err(e) = field.set(i, j, t, 0, v) {
                    result = Err(e);
                    return;
                }
            }
        }
        t += 1;
    })?;
    result?;
    Ok(field)
}
