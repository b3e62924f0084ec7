//! Wide-stencil monotone operators: the smallest directional second
//! difference `λ1^h`, the orthogonal-pair determinant `M_s` and its clipped
//! form `M_s^+`, plus randomized probes for monotonicity and Lipschitz
//! bounds of a scheme.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MeshFunction, NodeIndex};

/// Lattice direction `(p, q)` in grid units.
pub type Direction = (isize, isize);

pub const DEFAULT_RADIUS: usize = 3;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `(−q, p)` brought to canonical orientation (`p > 0`, or `p = 0, q > 0`).
fn canonical((p, q): Direction) -> Direction {
    if p > 0 || (p == 0 && q > 0) {
        (p, q)
    } else {
        (-p, -q)
    }
}

/// Primitive lattice directions of length at most `R` (one per line
/// through the origin) and the orthogonal pairs among them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionSet {
    radius: usize,
    directions: Vec<Direction>,
    /// index pairs `(a, b)` into `directions` with `a < b` and the two
    /// directions perpendicular
    pairs: Vec<(usize, usize)>,
}

impl DirectionSet {
    pub fn new(radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidInput("stencil radius must be at least 1".into()));
        }
        let r = radius as isize;
        let mut directions = Vec::new();
        for p in 0..=r {
            for q in -r..=r {
                let d = (p, q);
                if canonical(d) != d || p * p + q * q > r * r {
                    continue;
                }
                if gcd(p.unsigned_abs(), q.unsigned_abs()) == 1 {
                    directions.push(d);
                }
            }
        }
        // axes first, then by length, then lexicographically
        directions.sort_by_key(|&(p, q)| (p != 0 && q != 0, p * p + q * q, p, q));
        let mut pairs = Vec::new();
        for (a, &(p, q)) in directions.iter().enumerate() {
            if let Some(b) = directions.iter().position(|&d| d == canonical((-q, p))) {
                if a < b {
                    pairs.push((a, b));
                }
            }
        }
        Ok(Self { radius, directions, pairs })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    /// Orthogonal pairs as direction values.
    pub fn pairs(&self) -> impl Iterator<Item = (Direction, Direction)> + '_ {
        self.pairs.iter().map(|&(a, b)| (self.directions[a], self.directions[b]))
    }

    /// The directions and pairs usable at `x`, i.e. with `x ± α` on the grid.
    pub fn at(&self, grid: GridSpec, x: NodeIndex) -> StencilAtNode {
        let fits = |&(p, q): &Direction| {
            let (i, j) = (x.i as isize, x.j as isize);
            grid.in_grid(i + p, j + q) && grid.in_grid(i - p, j - q)
        };
        let mut index = vec![usize::MAX; self.directions.len()];
        let mut directions = Vec::new();
        for (k, d) in self.directions.iter().enumerate() {
            if fits(d) {
                index[k] = directions.len();
                directions.push(*d);
            }
        }
        let pairs = self
            .pairs
            .iter()
            .filter(|&&(a, b)| index[a] != usize::MAX && index[b] != usize::MAX)
            .map(|&(a, b)| (index[a], index[b]))
            .collect();
        StencilAtNode { node: x, directions, pairs }
    }
}

impl Default for DirectionSet {
    fn default() -> Self {
        Self::new(DEFAULT_RADIUS).expect("default radius is valid")
    }
}

/// The part of a [`DirectionSet`] admissible at one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StencilAtNode {
    node: NodeIndex,
    directions: Vec<Direction>,
    pairs: Vec<(usize, usize)>,
}

impl StencilAtNode {
    pub fn node(&self) -> NodeIndex {
        self.node
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn pairs(&self) -> impl Iterator<Item = (Direction, Direction)> + '_ {
        self.pairs.iter().map(|&(a, b)| (self.directions[a], self.directions[b]))
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Nodes read by the stencil: the centre, then `x + α`, `x − α` for each
    /// admissible direction in order.
    pub fn nodes(&self) -> Vec<NodeIndex> {
        let x = self.node;
        let mut out = vec![x];
        for &(p, q) in &self.directions {
            out.push(NodeIndex::new((x.i as isize + p) as usize, (x.j as isize + q) as usize));
            out.push(NodeIndex::new((x.i as isize - p) as usize, (x.j as isize - q) as usize));
        }
        out
    }

    /// Second differences along each admissible direction from values laid
    /// out as in [`StencilAtNode::nodes`].
    pub fn second_differences_local(&self, values: &[f64], h: f64) -> Vec<f64> {
        let c = values[0];
        self.directions
            .iter()
            .enumerate()
            .map(|(k, &(p, q))| (values[1 + 2 * k] - 2.0 * c + values[2 + 2 * k]) / (h * h * (p * p + q * q) as f64))
            .collect()
    }

    fn second_differences(&self, v: &MeshFunction) -> Vec<f64> {
        let h = v.grid().h();
        let x = self.node;
        let c = v.get(x);
        self.directions
            .iter()
            .map(|&(p, q)| (v.at(x, p, q) - 2.0 * c + v.at(x, -p, -q)) / (h * h * (p * p + q * q) as f64))
            .collect()
    }

    /// Minimum over admissible pairs of the product of the pair's second
    /// differences (clipped at zero when `clip`), with the first minimising
    /// pair.
    pub fn pair_min(&self, sd: &[f64], clip: bool) -> Result<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (k, &(a, b)) in self.pairs.iter().enumerate() {
            let (da, db) = if clip { (sd[a].max(0.0), sd[b].max(0.0)) } else { (sd[a], sd[b]) };
            let val = da * db;
            if best.is_none_or(|(m, _)| val < m) {
                best = Some((val, k));
            }
        }
        best.ok_or_else(|| Error::Domain(format!("no admissible orthogonal pair at node {}", self.node)))
    }

    fn check(&self, v: &MeshFunction) -> Result<()> {
        let g = v.grid();
        if !g.in_grid(self.node.i as isize, self.node.j as isize) {
            return Err(Error::Domain(format!("stencil node {} is off the grid {g}", self.node)));
        }
        Ok(())
    }
}

/// `(v(x + hα) − 2v(x) + v(x − hα)) / (h²|α|²)`.
pub fn second_difference(v: &MeshFunction, x: NodeIndex, alpha: Direction) -> Result<f64> {
    let g = v.grid();
    let (p, q) = alpha;
    if (p, q) == (0, 0) {
        return Err(Error::InvalidInput("second difference along the zero vector".into()));
    }
    if g.offset(x, p, q).is_none() || g.offset(x, -p, -q).is_none() {
        return Err(Error::Domain(format!("second difference along ({p}, {q}) at node {x} leaves the grid")));
    }
    let h = g.h();
    Ok((v.at(x, p, q) - 2.0 * v.get(x) + v.at(x, -p, -q)) / (h * h * (p * p + q * q) as f64))
}

/// Smallest directional second difference over the stencil.
pub fn lambda1_h(v: &MeshFunction, stencil: &StencilAtNode) -> Result<f64> {
    stencil.check(v)?;
    let sd = stencil.second_differences(v);
    sd.into_iter()
        .reduce(f64::min)
        .ok_or_else(|| Error::Domain(format!("empty stencil at node {}", stencil.node)))
}

/// `min` over admissible orthogonal pairs of the product of second differences.
pub fn m_s(v: &MeshFunction, stencil: &StencilAtNode) -> Result<f64> {
    stencil.check(v)?;
    stencil.pair_min(&stencil.second_differences(v), false).map(|(m, _)| m)
}

/// As [`m_s`] with each factor replaced by its positive part.
pub fn m_s_plus(v: &MeshFunction, stencil: &StencilAtNode) -> Result<f64> {
    stencil.check(v)?;
    stencil.pair_min(&stencil.second_differences(v), true).map(|(m, _)| m)
}

/// The orthogonal pair attaining [`m_s_plus`] (first in enumeration order).
pub fn m_s_plus_argmin(v: &MeshFunction, stencil: &StencilAtNode) -> Result<(Direction, Direction)> {
    stencil.check(v)?;
    let (_, k) = stencil.pair_min(&stencil.second_differences(v), true)?;
    let (a, b) = stencil.pairs[k];
    Ok((stencil.directions[a], stencil.directions[b]))
}

/// A bump that lowered the scheme value.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub v: MeshFunction,
    pub node: NodeIndex,
    pub bump: MeshFunction,
    pub base: f64,
    pub bumped: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub violations: usize,
    /// most negative `bumped − base` seen (0 when never negative)
    pub worst_change: f64,
    pub counterexample: Option<Counterexample>,
}

impl MonotonicityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub const MONOTONICITY_SLACK: f64 = 1e-12;

/// Adds `trials` random nonnegative bumps to `v` away from `x` and checks
/// that `scheme(v + bump, x) >= scheme(v, x) - 1e-12` every time.
///
/// Bumps alternate between dense random fields, sparse fields near `x`,
/// single-node spikes and constants.
pub fn monotonicity_probe(
    scheme: impl Fn(&MeshFunction, NodeIndex) -> f64,
    v: &MeshFunction,
    x: NodeIndex,
    trials: usize,
    seed: u64,
) -> MonotonicityReport {
    let g = v.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = scheme(v, x);
    let mut report = MonotonicityReport { trials, violations: 0, worst_change: 0.0, counterexample: None };
    let h2 = g.h() * g.h();
    for t in 0..trials {
        let scale = h2 * 10f64.powf(rng.gen_range(-4.0..1.0));
        let near = |y: NodeIndex| y.i.abs_diff(x.i).max(y.j.abs_diff(x.j)) <= 4;
        let mut bump = match t % 4 {
            0 => MeshFunction::from_fn(g, |_| rng.gen_range(0.0..scale)),
            1 => MeshFunction::from_fn(g, |y| {
                if near(y) && rng.gen_bool(0.3) {
                    rng.gen_range(0.0..scale)
                } else {
                    0.0
                }
            }),
            2 => {
                let mut b = MeshFunction::zeros(g);
                let i = (x.i as isize + rng.gen_range(-3..=3)).clamp(0, g.cells() as isize) as usize;
                let j = (x.j as isize + rng.gen_range(-3..=3)).clamp(0, g.cells() as isize) as usize;
                b.set(NodeIndex::new(i, j), scale);
                b
            }
            _ => MeshFunction::constant(g, scale),
        };
        bump.set(x, 0.0);
        let bumped = scheme(&v.add_scaled(1.0, &bump), x);
        let change = bumped - base;
        report.worst_change = report.worst_change.min(change);
        if change < -MONOTONICITY_SLACK {
            report.violations += 1;
            if report.counterexample.is_none() {
                report.counterexample = Some(Counterexample { v: v.clone(), node: x, bump, base, bumped });
            }
        }
    }
    report
}

fn random_point(rng: &mut ChaCha8Rng, center: &[f64], half_width: f64) -> Vec<f64> {
    center.iter().map(|c| c + rng.gen_range(-half_width..=half_width)).collect()
}

/// Largest observed `|F(a) − F(b)| / |a − b|_∞` for a scalar scheme on the
/// box `center ± half_width`.
///
/// Each sample compares a random pair, then runs a greedy search over box
/// vertices for the steepest short secant `(a, a + t·s)`, where `s` is the
/// sign pattern of the central slopes at `a` and `t = 1e-3 · half_width`.
/// For a linear map this is exactly its max-norm Lipschitz constant. The
/// short steps may leave the box by `t`.
pub fn lipschitz_probe(
    scheme: impl Fn(&[f64]) -> f64,
    center: &[f64],
    half_width: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = center.len();
    let t = 1e-3 * half_width;
    let ratio = |a: &[f64], b: &[f64]| {
        let d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if d == 0.0 {
            return 0.0;
        }
        let r = (scheme(a) - scheme(b)).abs() / d;
        if r.is_finite() {
            r
        } else {
            f64::INFINITY
        }
    };
    let steepest = |a: &[f64]| {
        let mut e = a.to_vec();
        let step: Vec<f64> = (0..n)
            .map(|i| {
                e[i] = a[i] + t;
                let fp = scheme(&e);
                e[i] = a[i] - t;
                let up = fp >= scheme(&e);
                e[i] = a[i];
                if up {
                    a[i] + t
                } else {
                    a[i] - t
                }
            })
            .collect();
        ratio(a, &step)
    };
    let mut k = 0.0f64;
    for _ in 0..samples {
        let a = random_point(&mut rng, center, half_width);
        let b = random_point(&mut rng, center, half_width);
        k = k.max(ratio(&a, &b)).max(steepest(&a));
        // steepest-ascent coordinate search over five levels per coordinate
        let mut x: Vec<f64> =
            center.iter().map(|c| if rng.gen_bool(0.5) { c + half_width } else { c - half_width }).collect();
        let mut best = steepest(&x);
        loop {
            let mut step = None;
            for i in 0..n {
                let keep = x[i];
                for level in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                    x[i] = center[i] + level * half_width;
                    let g = steepest(&x);
                    if g > best {
                        best = g;
                        step = Some((i, x[i]));
                    }
                }
                x[i] = keep;
            }
            match step {
                Some((i, val)) => x[i] = val,
                None => break,
            }
        }
        k = k.max(best);
    }
    k
}

/// Largest observed `|F(a) − F(b)|_∞ / |a − b|_∞` for a vector-valued map
/// over random pairs in `center ± half_width`.
pub fn lipschitz_probe_map(
    op: impl Fn(&[f64]) -> Vec<f64>,
    center: &[f64],
    half_width: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = 0.0f64;
    for _ in 0..samples {
        let a = random_point(&mut rng, center, half_width);
        let b = random_point(&mut rng, center, half_width);
        let d = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if d == 0.0 {
            continue;
        }
        let (fa, fb) = (op(&a), op(&b));
        let num = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let r = num / d;
        k = if r.is_finite() { k.max(r) } else { f64::INFINITY };
    }
    k
}
