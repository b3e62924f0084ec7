//! Dirichlet problems for the five-point Laplacian on a node region, and the
//! discrete Poincaré constant of such a region.
//!
//! The region `S` is a set of interior nodes; values off `S` are Dirichlet
//! data. Internally we work with the SPD matrix `A = -h² Δ_h` restricted to
//! `S` (diagonal 4, off-diagonal -1 between neighbouring region nodes).

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MeshFunction, NodeSet};

const NEIGHBOURS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Relative tolerance of [`poisson_solve`]: the max-norm residual of the
/// linear system must end below `POISSON_TOL * (|rhs|_∞ + 1)`.
pub const POISSON_TOL: f64 = 1e-10;

/// Row structure of `A` on a region.
#[derive(Debug, Clone)]
struct RegionSystem {
    grid: GridSpec,
    /// flat grid index of each unknown, ascending
    nodes: Vec<usize>,
    /// for each unknown, the unknown numbers of its region neighbours
    neighbours: Vec<Vec<usize>>,
}

impl RegionSystem {
    fn new(region: &NodeSet) -> Result<Self> {
        let grid = region.grid();
        let mut position = vec![usize::MAX; grid.len()];
        let mut nodes = Vec::with_capacity(region.len());
        for x in region.iter() {
            if grid.is_boundary(x) {
                return Err(Error::Domain(format!(
                    "Dirichlet region contains boundary node {x}; region nodes must be interior"
                )));
            }
            position[grid.index(x)] = nodes.len();
            nodes.push(grid.index(x));
        }
        let neighbours = nodes
            .iter()
            .map(|&k| {
                let x = grid.node(k);
                NEIGHBOURS
                    .iter()
                    .filter_map(|&(di, dj)| grid.offset(x, di, dj))
                    .map(|y| position[grid.index(y)])
                    .filter(|&p| p != usize::MAX)
                    .collect()
            })
            .collect();
        Ok(Self { grid, nodes, neighbours })
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    /// `y = A x`
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (p, nb) in self.neighbours.iter().enumerate() {
            let mut s = 4.0 * x[p];
            for &q in nb {
                s -= x[q];
            }
            y[p] = s;
        }
    }

    /// Right-hand side of `A w = -h² rhs + (Dirichlet neighbours)`.
    fn load(&self, rhs: &MeshFunction, boundary: &MeshFunction, region: &NodeSet) -> Vec<f64> {
        let g = self.grid;
        let h2 = g.h() * g.h();
        self.nodes
            .iter()
            .map(|&k| {
                let x = g.node(k);
                let mut b = -h2 * rhs.values()[k];
                for &(di, dj) in &NEIGHBOURS {
                    if let Some(y) = g.offset(x, di, dj) {
                        if !region.contains(y) {
                            b += boundary.get(y);
                        }
                    }
                }
                b
            })
            .collect()
    }

    fn scatter(&self, w: &[f64], boundary: &MeshFunction) -> MeshFunction {
        let mut out = boundary.clone();
        let vals = out.values_mut();
        for (p, &k) in self.nodes.iter().enumerate() {
            vals[k] = w[p];
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Outcome of a conjugate gradient run.
#[derive(Debug, Clone, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// max-norm residual after each iteration, starting with the initial one
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Conjugate gradients for an SPD operator given by `apply`, stopping once
/// the max-norm residual drops to `tol`. `observe` sees every iterate.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(&[f64]),
) -> CgReport {
    let n = b.len();
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut history = vec![max_abs(&r)];
    let mut iterations = 0;
    while *history.last().unwrap() > tol && iterations < max_iter && rr > 0.0 {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        iterations += 1;
        history.push(max_abs(&r));
        observe(x);
    }
    let converged = *history.last().unwrap() <= tol;
    CgReport { iterations, residual_history: history, converged }
}

/// Solves `Δ_h w = rhs` on `region` with `w = boundary` off the region, by
/// matrix-free conjugate gradients.
pub fn poisson_solve(rhs: &MeshFunction, boundary: &MeshFunction, region: &NodeSet) -> Result<MeshFunction> {
    poisson_solve_report(rhs, boundary, region).map(|(w, _)| w)
}

pub fn poisson_solve_report(
    rhs: &MeshFunction,
    boundary: &MeshFunction,
    region: &NodeSet,
) -> Result<(MeshFunction, CgReport)> {
    let sys = RegionSystem::new(region)?;
    let g = sys.grid;
    let h2 = g.h() * g.h();
    let scale = region.iter().map(|x| rhs.get(x).abs()).fold(0.0, f64::max) + 1.0;
    let target = POISSON_TOL * scale;
    let b = sys.load(rhs, boundary, region);
    let mut w = vec![0.0; sys.len()];
    // Residuals of A w = b are h² times residuals of the Laplacian system;
    // aim a decade below the target so the final check has headroom.
    let max_iter = (4 * sys.len()).max(200);
    let report = conjugate_gradient(|x, y| sys.apply(x, y), &b, &mut w, 0.1 * target * h2, max_iter, |_| {});
    let out = sys.scatter(&w, boundary);
    let achieved = dirichlet_residual(&out, rhs, region);
    if achieved > target {
        return Err(Error::SolverFailure { residual: achieved, iterations: report.iterations });
    }
    Ok((out, report))
}

/// `max_{x ∈ S} |Δ_h w(x) - rhs(x)|`
pub fn dirichlet_residual(w: &MeshFunction, rhs: &MeshFunction, region: &NodeSet) -> f64 {
    let h = w.grid().h();
    region
        .iter()
        .map(|x| {
            let lap = (w.at(x, 1, 0) + w.at(x, -1, 0) + w.at(x, 0, 1) + w.at(x, 0, -1) - 4.0 * w.at(x, 0, 0))
                / (h * h);
            (lap - rhs.get(x)).abs()
        })
        .fold(0.0, f64::max)
}

/// Banded Cholesky factor of `-h² Δ_h` on a fixed region, for problems that
/// solve against the same region many times.
#[derive(Debug, Clone)]
pub struct DirichletFactor {
    sys: RegionSystem,
    region: NodeSet,
    band: usize,
    /// row-major lower band, `l[p * (band + 1) + (p - q)] = L[p][q]`
    l: Vec<f64>,
}

impl DirichletFactor {
    pub fn new(region: &NodeSet) -> Result<Self> {
        let sys = RegionSystem::new(region)?;
        let n = sys.len();
        let band = sys
            .neighbours
            .iter()
            .enumerate()
            .flat_map(|(p, nb)| nb.iter().map(move |&q| p.abs_diff(q)))
            .max()
            .unwrap_or(0);
        let w = band + 1;
        let mut l = vec![0.0f64; n * w];
        for (p, nb) in sys.neighbours.iter().enumerate() {
            l[p * w] = 4.0;
            for &q in nb {
                if q < p {
                    l[p * w + (p - q)] = -1.0;
                }
            }
        }
        for p in 0..n {
            let lo = p.saturating_sub(band);
            for q in lo..=p {
                let mut s = l[p * w + (p - q)];
                let lo2 = lo.max(q.saturating_sub(band));
                for k in lo2..q {
                    s -= l[p * w + (p - k)] * l[q * w + (q - k)];
                }
                if q == p {
                    if s <= 0.0 {
                        return Err(Error::Domain("Dirichlet Laplacian is not positive definite".into()));
                    }
                    l[p * w] = s.sqrt();
                } else {
                    l[p * w + (p - q)] = s / l[q * w];
                }
            }
        }
        Ok(Self { sys, region: region.clone(), band, l })
    }

    pub fn region(&self) -> &NodeSet {
        &self.region
    }

    pub fn len(&self) -> usize {
        self.sys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sys.len() == 0
    }

    /// In place `A x = b`.
    fn solve_scaled(&self, x: &mut [f64]) {
        let n = x.len();
        let w = self.band + 1;
        for p in 0..n {
            let lo = p.saturating_sub(self.band);
            let mut s = x[p];
            for q in lo..p {
                s -= self.l[p * w + (p - q)] * x[q];
            }
            x[p] = s / self.l[p * w];
        }
        for p in (0..n).rev() {
            let hi = (p + self.band).min(n - 1);
            let mut s = x[p];
            for q in p + 1..=hi {
                s -= self.l[q * w + (q - p)] * x[q];
            }
            x[p] = s / self.l[p * w];
        }
    }

    /// Solves `Δ_h w = rhs` on the region with `w = boundary` off it.
    pub fn solve(&self, rhs: &MeshFunction, boundary: &MeshFunction) -> MeshFunction {
        let mut b = self.sys.load(rhs, boundary, &self.region);
        self.solve_scaled(&mut b);
        self.sys.scatter(&b, boundary)
    }

    /// Solve with zero Dirichlet data; entries off the region are zero.
    pub fn solve_homogeneous(&self, rhs: &MeshFunction) -> MeshFunction {
        self.solve(rhs, &MeshFunction::zeros(rhs.grid()))
    }
}

/// Smallest eigenvalue of `-Δ_h` on `region` with zero Dirichlet data, and
/// an eigenvector normalised to unit max norm.
pub fn dirichlet_ground_state(region: &NodeSet, rel_tol: f64) -> Result<(f64, MeshFunction)> {
    if region.is_empty() {
        return Err(Error::Domain("Poincaré constant of an empty region".into()));
    }
    let factor = DirichletFactor::new(region)?;
    let sys = &factor.sys;
    let h2 = sys.grid.h() * sys.grid.h();
    let n = sys.len();
    let mut v = vec![1.0; n];
    let mut av = vec![0.0; n];
    let mut last = f64::INFINITY;
    let mut rayleigh = f64::NAN;
    const MAX_SWEEPS: usize = 500;
    for _ in 0..MAX_SWEEPS {
        factor.solve_scaled(&mut v);
        let norm = dot(&v, &v).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Stagnation { rayleigh });
        }
        v.iter_mut().for_each(|x| *x /= norm);
        sys.apply(&v, &mut av);
        rayleigh = dot(&v, &av) / h2;
        if (rayleigh - last).abs() <= rel_tol * rayleigh {
            let peak = max_abs(&v);
            let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            let scaled: Vec<f64> = v.iter().map(|x| sign * x / peak).collect();
            let vec = sys.scatter(&scaled, &MeshFunction::zeros(sys.grid));
            return Ok((rayleigh, vec));
        }
        last = rayleigh;
    }
    Err(Error::Stagnation { rayleigh })
}

/// Optimal constant `C_p` in `|v|_{1,h} >= C_p ||v||_{0,h}` for mesh
/// functions vanishing off `region`: the square root of the smallest
/// Dirichlet eigenvalue of `-Δ_h`, by inverse power iteration.
pub fn poincare_constant(region: &NodeSet) -> Result<f64> {
    // The eigenvalue converges geometrically; a tight tolerance costs a few
    // extra sweeps and leaves C_p accurate well past 1e-8.
    dirichlet_ground_state(region, 1e-13).map(|(lambda, _)| lambda.sqrt())
}
