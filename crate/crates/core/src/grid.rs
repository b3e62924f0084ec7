//! Uniform grids on the closed unit square, node sets, mesh functions and
//! the discrete norms used throughout the crate.
//!
//! Nodes are stored row-major: node `(i, j)` sits at `(i h, j h)` and has
//! flat index `j * N + i` with `N = 1/h + 1`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat2;

/// Smallest admissible number of cells per axis (h <= 1/4).
pub const MIN_CELLS: usize = 4;

/// Uniform mesh of (0,1)^2 with mesh size `h = 1 / cells`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    cells: usize,
}

impl GridSpec {
    pub fn new(cells: usize) -> Result<Self> {
        if cells < MIN_CELLS {
            return Err(Error::Grid(format!(
                "1/h = {cells} is below the minimum of {MIN_CELLS} (h must be at most 1/4)"
            )));
        }
        Ok(Self { cells })
    }

    /// Builds a grid from a mesh size, insisting that 1/h is an integer.
    pub fn from_h(h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Grid(format!("mesh size h = {h} must be positive and finite")));
        }
        let inv = 1.0 / h;
        let cells = inv.round();
        if (inv - cells).abs() > 1e-9 * inv.max(1.0) {
            return Err(Error::Grid(format!(
                "1/h must be an integer (1/h ∈ ℤ), got h = {h} (1/h = {inv})"
            )));
        }
        Self::new(cells as usize)
    }

    /// Spatial dimension. Only the planar case is implemented.
    pub fn dim(&self) -> usize {
        2
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// Nodes per axis, `1/h + 1`.
    pub fn n(&self) -> usize {
        self.cells + 1
    }

    /// Total number of nodes of the closed grid.
    pub fn len(&self) -> usize {
        self.n() * self.n()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate `i h` of grid line `i`.
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / self.cells as f64
    }

    pub fn point(&self, x: NodeIndex) -> [f64; 2] {
        [self.coord(x.i), self.coord(x.j)]
    }

    pub fn index(&self, x: NodeIndex) -> usize {
        x.j * self.n() + x.i
    }

    pub fn node(&self, k: usize) -> NodeIndex {
        NodeIndex::new(k % self.n(), k / self.n())
    }

    pub fn in_grid(&self, i: isize, j: isize) -> bool {
        let n = self.n() as isize;
        (0..n).contains(&i) && (0..n).contains(&j)
    }

    /// `x + (di, dj)` when it lies on the grid.
    pub fn offset(&self, x: NodeIndex, di: isize, dj: isize) -> Option<NodeIndex> {
        let i = x.i as isize + di;
        let j = x.j as isize + dj;
        self.in_grid(i, j).then(|| NodeIndex::new(i as usize, j as usize))
    }

    pub fn is_boundary(&self, x: NodeIndex) -> bool {
        x.i == 0 || x.j == 0 || x.i == self.cells || x.j == self.cells
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeIndex> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    /// Ω^h, every node of the closed square.
    pub fn all(&self) -> NodeSet {
        NodeSet::from_fn(*self, |_| true)
    }

    /// Ω_0^h, the interior nodes.
    pub fn interior(&self) -> NodeSet {
        NodeSet::from_fn(*self, |x| !self.is_boundary(x))
    }

    /// ∂Ω^h = Ω^h \ Ω_0^h.
    pub fn boundary(&self) -> NodeSet {
        NodeSet::from_fn(*self, |x| self.is_boundary(x))
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h=1/{}", self.cells)
    }
}

/// Integer grid coordinates in units of h.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeIndex {
    pub i: usize,
    pub j: usize,
}

impl NodeIndex {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

impl fmt::Display for NodeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// Membership mask over the nodes of a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSet {
    grid: GridSpec,
    mask: Vec<bool>,
}

impl NodeSet {
    pub fn empty(grid: GridSpec) -> Self {
        Self { grid, mask: vec![false; grid.len()] }
    }

    pub fn from_fn(grid: GridSpec, mut pred: impl FnMut(NodeIndex) -> bool) -> Self {
        let mask = (0..grid.len()).map(|k| pred(grid.node(k))).collect();
        Self { grid, mask }
    }

    pub fn from_nodes(grid: GridSpec, nodes: impl IntoIterator<Item = NodeIndex>) -> Self {
        let mut set = Self::empty(grid);
        for x in nodes {
            set.insert(x);
        }
        set
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn contains(&self, x: NodeIndex) -> bool {
        self.mask[self.grid.index(x)]
    }

    pub fn contains_index(&self, k: usize) -> bool {
        self.mask[k]
    }

    pub fn insert(&mut self, x: NodeIndex) {
        let k = self.grid.index(x);
        self.mask[k] = true;
    }

    pub fn remove(&mut self, x: NodeIndex) {
        let k = self.grid.index(x);
        self.mask[k] = false;
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeIndex> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| self.grid.node(k))
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        let mask = self.mask.iter().zip(&other.mask).map(|(a, b)| *a || *b).collect();
        NodeSet { grid: self.grid, mask }
    }

    pub fn difference(&self, other: &NodeSet) -> NodeSet {
        let mask = self.mask.iter().zip(&other.mask).map(|(a, b)| *a && !*b).collect();
        NodeSet { grid: self.grid, mask }
    }

    pub fn intersection(&self, other: &NodeSet) -> NodeSet {
        let mask = self.mask.iter().zip(&other.mask).map(|(a, b)| *a && *b).collect();
        NodeSet { grid: self.grid, mask }
    }
}

/// One real value per node of Ω^h.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshFunction {
    grid: GridSpec,
    values: Vec<f64>,
}

impl MeshFunction {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Wraps a raw row-major value vector. Non-finite entries are rejected.
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} values for {grid}, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value {} at node {}",
                values[k],
                grid.node(k)
            )));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_values_unchecked(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    /// Node-wise construction without the finiteness check; callers that can
    /// produce NaN (iterates) check with [`MeshFunction::is_finite`].
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(NodeIndex) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.node(k))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: NodeIndex) -> f64 {
        self.values[self.grid.index(x)]
    }

    /// Value at `x + (di, dj)`; the caller guarantees the node is on the grid.
    #[inline]
    pub fn at(&self, x: NodeIndex, di: isize, dj: isize) -> f64 {
        let n = self.grid.n() as isize;
        let k = (x.j as isize + dj) * n + x.i as isize + di;
        self.values[k as usize]
    }

    pub fn set(&mut self, x: NodeIndex, v: f64) {
        let k = self.grid.index(x);
        self.values[k] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + a * other`
    pub fn add_scaled(&self, a: f64, other: &MeshFunction) -> MeshFunction {
        debug_assert_eq!(self.grid, other.grid);
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect();
        MeshFunction { grid: self.grid, values }
    }

    pub fn scaled(&self, a: f64) -> MeshFunction {
        MeshFunction { grid: self.grid, values: self.values.iter().map(|x| a * x).collect() }
    }

    pub fn sub(&self, other: &MeshFunction) -> MeshFunction {
        self.add_scaled(-1.0, other)
    }

    /// Copy of `self` with entries outside `set` replaced by zero.
    pub fn masked(&self, set: &NodeSet) -> MeshFunction {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, v)| if set.contains_index(k) { *v } else { 0.0 })
            .collect();
        MeshFunction { grid: self.grid, values }
    }
}

/// Values attached to the nodes of a stated node set. Entries outside the
/// domain hold `T::default()` and carry no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    domain: NodeSet,
    data: Vec<T>,
}

pub type ScalarField = Field<f64>;
pub type VectorField = Field<[f64; 2]>;
pub type MatrixField = Field<Mat2>;

impl<T: Copy + Default> Field<T> {
    pub fn from_fn(domain: NodeSet, mut f: impl FnMut(NodeIndex) -> T) -> Self {
        let grid = domain.grid();
        let data = (0..grid.len())
            .map(|k| if domain.contains_index(k) { f(grid.node(k)) } else { T::default() })
            .collect();
        Self { domain, data }
    }

    pub fn domain(&self) -> &NodeSet {
        &self.domain
    }

    pub fn grid(&self) -> GridSpec {
        self.domain.grid()
    }

    pub fn get(&self, x: NodeIndex) -> Option<T> {
        self.domain.contains(x).then(|| self.data[self.grid().index(x)])
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeIndex, T)> + '_ {
        self.domain.iter().map(move |x| (x, self.data[self.grid().index(x)]))
    }
}

impl ScalarField {
    /// Extends to a full mesh function, zero off the domain.
    pub fn to_mesh_function(&self) -> MeshFunction {
        MeshFunction { grid: self.grid(), values: self.data.clone() }
    }
}

impl MatrixField {
    /// Largest |A_12 - A_21| over the domain.
    pub fn max_asymmetry(&self) -> f64 {
        self.iter().map(|(_, m)| (m.0[0][1] - m.0[1][0]).abs()).fold(0.0, f64::max)
    }
}

/// Pointwise sampling `r_h(v)(x) = v(x)` at every node.
pub fn restrict(v: impl Fn(f64, f64) -> f64, grid: GridSpec) -> Result<MeshFunction> {
    restrict_on(v, &grid.all())
}

/// Samples `v` on the nodes of `set`, zero elsewhere.
pub fn restrict_on(v: impl Fn(f64, f64) -> f64, set: &NodeSet) -> Result<MeshFunction> {
    let grid = set.grid();
    let mut values = vec![0.0; grid.len()];
    for x in set.iter() {
        let [px, py] = grid.point(x);
        let val = v(px, py);
        if !val.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sample at node {x} = ({px}, {py}) is not finite ({val})"
            )));
        }
        values[grid.index(x)] = val;
    }
    Ok(MeshFunction { grid, values })
}

/// `|v|_T = max_{x ∈ T} |v(x)|`.
pub fn max_norm(v: &MeshFunction, set: &NodeSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Domain("max norm over an empty node set".into()));
    }
    Ok(set.iter().map(|x| v.get(x).abs()).fold(0.0, f64::max))
}

/// `h^2 Σ_{x ∈ S} v(x) w(x)`.
pub fn l2_inner(v: &MeshFunction, w: &MeshFunction, set: &NodeSet) -> f64 {
    let h = v.grid().h();
    h * h * set.iter().map(|x| v.get(x) * w.get(x)).sum::<f64>()
}

/// Forward edges `(x, x + e_i)` with at least one endpoint in `set`.
///
/// Both endpoints must be on the grid. Counting every edge that touches the
/// set makes `Σ_edges ∂v ∂w = <-Δ_h v, w>` exact for mesh functions vanishing
/// off the set.
fn touching_edges(set: &NodeSet) -> Result<Vec<(NodeIndex, NodeIndex)>> {
    let grid = set.grid();
    let mut edges = Vec::new();
    for x in grid.nodes() {
        for (di, dj) in [(1isize, 0isize), (0, 1)] {
            let y = grid.offset(x, di, dj);
            let touches = set.contains(x) || y.is_some_and(|y| set.contains(y));
            if !touches {
                continue;
            }
            match y {
                Some(y) => edges.push((x, y)),
                None => {
                    return Err(Error::Domain(format!(
                        "forward neighbour of node {x} along ({di}, {dj}) is off the grid"
                    )))
                }
            }
        }
    }
    // Nodes of the set on the low edge of the grid would need an off-grid
    // backward endpoint.
    for x in set.iter() {
        if x.i == 0 || x.j == 0 {
            return Err(Error::Domain(format!("backward neighbour of node {x} is off the grid")));
        }
    }
    Ok(edges)
}

/// `Σ_i <∂_+^i v, ∂_+^i w>` summed over the edges touching `set`.
pub fn h1_inner(v: &MeshFunction, w: &MeshFunction, set: &NodeSet) -> Result<f64> {
    let edges = touching_edges(set)?;
    // h^2 (dv/h)(dw/h) in two dimensions
    Ok(edges
        .iter()
        .map(|&(x, y)| (v.get(y) - v.get(x)) * (w.get(y) - w.get(x)))
        .sum())
}

/// `|v|_{1,h} = (Σ_i ||∂_+^i v||^2_{0,h})^{1/2}` over the edges touching `set`.
pub fn h1_seminorm(v: &MeshFunction, set: &NodeSet) -> Result<f64> {
    Ok(h1_inner(v, v, set)?.max(0.0).sqrt())
}
