//! Partition of the interior into a regular core, where the divergence-form
//! operator `M_r` is used, and a singular set, where the monotone `M_s^+` is
//! used; the hybrid residual `F_h`, discrete convexity, the hybrid norm and
//! the preconditioner `L_h`.

use std::fmt;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffops::{hessian_at, m_r_many, M_R_FOOTPRINT};
use crate::error::{Error, Result};
use crate::grid::{h1_seminorm, GridSpec, MeshFunction, NodeIndex, NodeSet};
use crate::monotone::{lambda1_h, DirectionSet, StencilAtNode};
use crate::poisson::{poincare_constant, DirichletFactor};

/// Axis-aligned box `[x0, x1] × [y0, y1]` in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl SingularBox {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.x0..=self.x1).contains(&p[0]) && (self.y0..=self.y1).contains(&p[1])
    }
}

/// Rules that flag nodes as singular before interface normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHeuristics {
    pub f_min: f64,
    pub f_max: f64,
    /// nodes at most this many cells from the boundary are flagged
    pub boundary_margin: f64,
    pub user_boxes: Vec<SingularBox>,
}

impl Default for MaskHeuristics {
    fn default() -> Self {
        Self { f_min: 1e-3, f_max: 1e3, boundary_margin: 0.0, user_boxes: Vec::new() }
    }
}

impl MaskHeuristics {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_min < self.f_max) {
            return Err(Error::InvalidInput(format!(
                "mask thresholds need 0 < f_min < f_max (got f_min = {}, f_max = {})",
                self.f_min, self.f_max
            )));
        }
        if !(self.boundary_margin >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "boundary margin must be nonnegative (got {})",
                self.boundary_margin
            )));
        }
        for b in &self.user_boxes {
            if !(b.x0 <= b.x1 && b.y0 <= b.y1) {
                return Err(Error::InvalidInput(format!("empty singular box {b:?}")));
            }
        }
        Ok(())
    }

    fn in_user_box(&self, p: [f64; 2]) -> bool {
        self.user_boxes.iter().any(|b| b.contains(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Boundary,
    Singular,
    Regular,
}

impl Label {
    pub fn as_char(self) -> char {
        match self {
            Label::Boundary => 'b',
            Label::Singular => 's',
            Label::Regular => 'r',
        }
    }

    fn from_char(c: char) -> Option<Self> {
        match c {
            'b' => Some(Label::Boundary),
            's' => Some(Label::Singular),
            'r' => Some(Label::Regular),
            _ => None,
        }
    }
}

/// Per-node labels. Regular nodes form the regular core `Ω_{r,0}^h`; all
/// other interior nodes are singular.
#[derive(Debug, Clone)]
pub struct RegionMask {
    grid: GridSpec,
    labels: Vec<Label>,
    /// nodes flagged by heuristics; the normalisation input
    flagged: NodeSet,
    poincare: OnceLock<Result<f64>>,
    factor: OnceLock<Result<DirichletFactor>>,
}

impl PartialEq for RegionMask {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.labels == other.labels && self.flagged == other.flagged
    }
}

/// Whether `x` can sit in the regular core given the flagged set.
fn core_eligible(grid: GridSpec, flagged: &NodeSet, x: NodeIndex) -> bool {
    if grid.is_boundary(x) || flagged.contains(x) {
        return false;
    }
    M_R_FOOTPRINT
        .nodes(grid, x)
        .all(|y| y.is_some_and(|y| !flagged.contains(y)))
}

impl RegionMask {
    /// Labels every interior node regular unless it is flagged or the
    /// `M_r` footprint at it leaves the grid or reads a flagged node.
    pub fn normalize(flagged: &NodeSet) -> Self {
        let grid = flagged.grid();
        let labels = grid
            .nodes()
            .map(|x| {
                if grid.is_boundary(x) {
                    Label::Boundary
                } else if core_eligible(grid, flagged, x) {
                    Label::Regular
                } else {
                    Label::Singular
                }
            })
            .collect();
        Self::with_labels(grid, labels, flagged.clone())
    }

    fn with_labels(grid: GridSpec, labels: Vec<Label>, flagged: NodeSet) -> Self {
        Self { grid, labels, flagged, poincare: OnceLock::new(), factor: OnceLock::new() }
    }

    pub fn all_singular(grid: GridSpec) -> Self {
        Self::normalize(&grid.interior())
    }

    /// The largest regular core the grid allows.
    pub fn all_regular(grid: GridSpec) -> Self {
        Self::normalize(&NodeSet::empty(grid))
    }

    /// Explicit labels, e.g. from a mask file. Boundary labels must sit
    /// exactly on the boundary and the `M_r` footprint of every regular
    /// node must stay on the grid.
    pub fn from_labels(grid: GridSpec, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::MaskFormat(format!(
                "expected {} labels for {grid}, got {}",
                grid.len(),
                labels.len()
            )));
        }
        for x in grid.nodes() {
            let l = labels[grid.index(x)];
            if grid.is_boundary(x) != (l == Label::Boundary) {
                return Err(Error::MaskFormat(format!(
                    "node {x} is labelled '{}' but {} a boundary node",
                    l.as_char(),
                    if grid.is_boundary(x) { "is" } else { "is not" }
                )));
            }
            if l == Label::Regular && !M_R_FOOTPRINT.fits(grid, x) {
                return Err(Error::MaskFormat(format!(
                    "regular node {x} is too close to the boundary for the divergence-form stencil"
                )));
            }
        }
        Ok(Self::with_labels(grid, labels, NodeSet::empty(grid)))
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn label(&self, x: NodeIndex) -> Label {
        self.labels[self.grid.index(x)]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn flagged(&self) -> &NodeSet {
        &self.flagged
    }

    pub fn regular_core(&self) -> NodeSet {
        NodeSet::from_fn(self.grid, |x| self.label(x) == Label::Regular)
    }

    pub fn singular(&self) -> NodeSet {
        NodeSet::from_fn(self.grid, |x| self.label(x) == Label::Singular)
    }

    /// Number of nodes whose label would change on normalising again with
    /// the same flagged set.
    pub fn reclassifications(&self) -> usize {
        let again = Self::normalize(&self.flagged);
        self.labels.iter().zip(&again.labels).filter(|(a, b)| a != b).count()
    }

    /// Discrete Poincaré constant of the regular core, computed once.
    pub fn poincare_constant(&self) -> Result<f64> {
        self.poincare
            .get_or_init(|| poincare_constant(&self.regular_core()))
            .clone()
    }

    /// Factorised Dirichlet Laplacian on the regular core, computed once.
    pub fn core_factor(&self) -> Result<&DirichletFactor> {
        self.factor
            .get_or_init(|| DirichletFactor::new(&self.regular_core()))
            .as_ref()
            .map_err(|e| e.clone())
    }

    /// One character per node, rows from `y = 1` down to `y = 0`, each row
    /// terminated by a line feed.
    pub fn to_text(&self) -> String {
        let n = self.grid.n();
        let mut out = String::with_capacity(n * (n + 1));
        for j in (0..n).rev() {
            for i in 0..n {
                out.push(self.label(NodeIndex::new(i, j)).as_char());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').ok_or_else(|| {
            Error::MaskFormat("mask file must end with a line feed".into())
        })?;
        let rows: Vec<&str> = body.split('\n').collect();
        let n = rows.len();
        if n < 2 {
            return Err(Error::MaskFormat("mask file has too few rows".into()));
        }
        let grid = GridSpec::new(n - 1).map_err(|e| Error::MaskFormat(format!("{n} rows: {e}")))?;
        let mut labels = vec![Label::Boundary; grid.len()];
        for (r, row) in rows.iter().enumerate() {
            let j = n - 1 - r;
            let chars: Vec<char> = row.chars().collect();
            if chars.len() != n {
                return Err(Error::MaskFormat(format!(
                    "row {} has {} characters, expected {n}",
                    r + 1,
                    chars.len()
                )));
            }
            for (i, c) in chars.into_iter().enumerate() {
                let label = Label::from_char(c).ok_or_else(|| {
                    Error::MaskFormat(format!("row {} column {}: unexpected character {c:?}", r + 1, i + 1))
                })?;
                labels[grid.index(NodeIndex::new(i, j))] = label;
            }
        }
        Self::from_labels(grid, labels)
    }

    pub fn summary(&self) -> MaskSummary {
        MaskSummary {
            cells: self.grid.cells(),
            regular: self.labels.iter().filter(|&&l| l == Label::Regular).count(),
            singular: self.labels.iter().filter(|&&l| l == Label::Singular).count(),
            flagged: self.flagged.len(),
        }
    }
}

impl fmt::Display for RegionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub cells: usize,
    pub regular: usize,
    pub singular: usize,
    pub flagged: usize,
}

/// Flags nodes where `f` leaves `[f_min, f_max]`, lies in a user box or is
/// within the boundary margin, then normalises.
///
/// `f` must be positive at every interior node outside the user boxes.
pub fn build_mask(f: &MeshFunction, heur: &MaskHeuristics) -> Result<RegionMask> {
    heur.validate()?;
    let grid = f.grid();
    let cells = grid.cells();
    let mut flagged = NodeSet::empty(grid);
    for x in grid.interior().iter() {
        let p = grid.point(x);
        let fx = f.get(x);
        let boxed = heur.in_user_box(p);
        if !boxed && !(fx > 0.0) {
            return Err(Error::RejectedProblem(format!(
                "f = {fx} at node {x} = ({}, {}); the equation needs f > 0 outside singular boxes",
                p[0], p[1]
            )));
        }
        let depth = x.i.min(x.j).min(cells - x.i).min(cells - x.j) as f64;
        if boxed || fx < heur.f_min || fx > heur.f_max || depth <= heur.boundary_margin {
            flagged.insert(x);
        }
    }
    Ok(RegionMask::normalize(&flagged))
}

/// The hybrid operator for fixed mask and right-hand side, with the
/// monotone stencils of the singular nodes prepared once.
#[derive(Debug, Clone)]
pub struct HybridScheme {
    mask: RegionMask,
    f: MeshFunction,
    stencils: Vec<StencilAtNode>,
    core_set: NodeSet,
    core: Vec<usize>,
    singular: Vec<usize>,
}

impl HybridScheme {
    pub fn new(mask: RegionMask, f: MeshFunction, dirs: &DirectionSet) -> Result<Self> {
        let grid = mask.grid();
        if f.grid() != grid {
            return Err(Error::InvalidInput(format!("f lives on {} but the mask on {grid}", f.grid())));
        }
        let singular_set = mask.singular();
        let stencils: Vec<_> = singular_set.iter().map(|x| dirs.at(grid, x)).collect();
        let singular = singular_set.iter().map(|x| grid.index(x)).collect();
        let core_set = mask.regular_core();
        let core = core_set.iter().map(|x| grid.index(x)).collect();
        Ok(Self { mask, f, stencils, core_set, core, singular })
    }

    pub fn mask(&self) -> &RegionMask {
        &self.mask
    }

    pub fn f(&self) -> &MeshFunction {
        &self.f
    }

    pub fn stencils(&self) -> &[StencilAtNode] {
        &self.stencils
    }

    /// `F_h(v)` on the singular nodes, in [`Self::singular_nodes`] order.
    pub fn singular_residual(&self, v: &MeshFunction) -> Vec<f64> {
        let grid = self.mask.grid();
        let h = grid.h();
        let fv = self.f.values();
        self.stencils
            .par_iter()
            .map(|st| {
                let x = st.node();
                let vals: Vec<f64> = st.nodes().into_iter().map(|y| v.get(y)).collect();
                let sd = st.second_differences_local(&vals, h);
                st.pair_min(&sd, true).map(|(m, _)| m).unwrap_or(f64::NAN) - fv[grid.index(x)]
            })
            .collect()
    }

    /// `F_h(v)` on the interior; zero on the boundary.
    pub fn residual(&self, v: &MeshFunction) -> MeshFunction {
        let grid = self.mask.grid();
        let fv = self.f.values();
        let mut out = vec![0.0; grid.len()];
        let sing = self.singular_residual(v);
        for (&k, r) in self.singular.iter().zip(sing) {
            out[k] = r;
        }
        for (&k, m) in self.core.iter().zip(m_r_many(v, &self.core)) {
            out[k] = m - fv[k];
        }
        MeshFunction::from_values_unchecked(grid, out)
    }

    pub fn singular_nodes(&self) -> &[usize] {
        &self.singular
    }

    pub fn core_set(&self) -> &NodeSet {
        &self.core_set
    }

    pub fn core_nodes(&self) -> &[usize] {
        &self.core
    }
}

/// `F_h(v)`: `M_s^+[v] − f` on singular nodes, `M_r[v] − f` on the regular
/// core, zero on the boundary.
pub fn f_h(v: &MeshFunction, mask: &RegionMask, f: &MeshFunction, dirs: &DirectionSet) -> Result<MeshFunction> {
    Ok(HybridScheme::new(mask.clone(), f.clone(), dirs)?.residual(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub ok: bool,
    /// smallest `λ1^h` over singular nodes (`None` without singular nodes)
    pub worst_lambda1: Option<f64>,
    /// smallest eigenvalue of `sym H_d` over the regular core
    pub worst_hessian_eigenvalue: Option<f64>,
    pub offending: Vec<NodeIndex>,
}

/// `λ1^h[v] ≥ −tol` on singular nodes and `sym H_d v ≥ −tol` on the core.
pub fn is_discrete_convex(v: &MeshFunction, mask: &RegionMask, dirs: &DirectionSet, tol: f64) -> ConvexityReport {
    let grid = mask.grid();
    let mut report = ConvexityReport { ok: true, worst_lambda1: None, worst_hessian_eigenvalue: None, offending: Vec::new() };
    for x in grid.interior().iter() {
        let (value, slot) = match mask.label(x) {
            Label::Singular => (lambda1_h(v, &dirs.at(grid, x)), &mut report.worst_lambda1),
            Label::Regular => (hessian_at(v, x).map(|m| m.sym_eigenvalues()[0]), &mut report.worst_hessian_eigenvalue),
            Label::Boundary => continue,
        };
        let value = value.unwrap_or(f64::NAN);
        *slot = Some(slot.map_or(value, |w: f64| w.min(value)));
        if !(value >= -tol) {
            report.ok = false;
            report.offending.push(x);
        }
    }
    report
}

/// `max{ |v|_{Ω_s}, |v|_{1,h} / (h C_p) }` with the seminorm over the core.
pub fn hybrid_norm(v: &MeshFunction, mask: &RegionMask, c_p: f64) -> Result<f64> {
    if !(c_p > 0.0) {
        return Err(Error::InvalidInput(format!("Poincaré constant must be positive (got {c_p})")));
    }
    let singular = mask.singular();
    let sing = singular.iter().map(|x| v.get(x).abs()).fold(0.0, f64::max);
    let core = mask.regular_core();
    let reg = if core.is_empty() {
        0.0
    } else {
        h1_seminorm(v, &core)? / (mask.grid().h() * c_p)
    };
    Ok(sing.max(reg))
}

/// Hybrid norm with the mask's cached Poincaré constant; the singular max
/// norm alone when the core is empty.
pub fn hybrid_norm_cached(v: &MeshFunction, mask: &RegionMask) -> Result<f64> {
    if mask.regular_core().is_empty() {
        return Ok(mask.singular().iter().map(|x| v.get(x).abs()).fold(0.0, f64::max));
    }
    hybrid_norm(v, mask, mask.poincare_constant()?)
}

/// `L_h v`: `v` on singular nodes; on the core the solution `w` of
/// `Δ_h w = v` with `w = 0` off the core; zero on the boundary.
pub fn l_h(v: &MeshFunction, mask: &RegionMask) -> Result<MeshFunction> {
    let grid = mask.grid();
    let mut out = MeshFunction::zeros(grid);
    let core = mask.regular_core();
    if !core.is_empty() {
        let rhs = v.masked(&core);
        out = mask.core_factor()?.solve_homogeneous(&rhs);
    }
    for x in mask.singular().iter() {
        out.set(x, v.get(x));
    }
    Ok(out)
}
