//! Damped, preconditioned fixed-point iteration for `F_h(u) = 0` with
//! Dirichlet data, starting from a Poisson initial guess.
//!
//! Each sweep updates singular nodes by `u += ν₁ F_h(u)` and regular-core
//! nodes by `u −= ν₂ Δ_h⁻¹ F_h(u)` (zero data off the core). Boundary values
//! are never written.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MeshFunction};
use crate::hybrid::{hybrid_norm_cached, is_discrete_convex, ConvexityReport, HybridScheme, MaskSummary, RegionMask};
use crate::monotone::{lipschitz_probe, lipschitz_probe_map, DirectionSet, DEFAULT_RADIUS};
use crate::poisson::poisson_solve;
use crate::problems::{errors_vs_exact, ErrorMetrics, Problem};

/// Consecutive residual increases, with backtracking off, that end a run.
pub const DIVERGENCE_WINDOW: usize = 10;
/// Iterations remembered by the backtracking test. The coupled iteration
/// can rise transiently for over a hundred steps before settling.
pub const BACKTRACK_MEMORY: usize = 200;
/// Shrinks allowed within one iteration before the step is taken anyway.
pub const MAX_SHRINKS_PER_STEP: usize = 30;
/// Fraction of `1/K` used as step size by [`estimate_steps`].
pub const STEP_SAFETY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub nu_singular: f64,
    pub nu_regular: f64,
    /// replace the step sizes by [`estimate_steps`] before iterating
    pub auto_steps: bool,
    pub tol: f64,
    pub hybrid_tol: Option<f64>,
    pub max_iter: usize,
    pub backtracking: bool,
    pub shrink: f64,
    pub radius: usize,
    pub convexity_tol: f64,
    /// seed of the Lipschitz probes behind [`estimate_steps`]
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            nu_singular: 1e-4,
            nu_regular: 0.5,
            auto_steps: true,
            tol: 1e-8,
            hybrid_tol: None,
            max_iter: 20_000,
            backtracking: true,
            shrink: 0.5,
            radius: DEFAULT_RADIUS,
            convexity_tol: 1e-8,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive and finite (got {v})")))
            }
        };
        positive("nu_singular", self.nu_singular)?;
        positive("nu_regular", self.nu_regular)?;
        positive("tol", self.tol)?;
        if let Some(t) = self.hybrid_tol {
            positive("hybrid_tol", t)?;
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidInput(format!("shrink factor must lie in (0, 1) (got {})", self.shrink)));
        }
        if self.radius == 0 {
            return Err(Error::InvalidInput("stencil radius must be at least 1".into()));
        }
        if !(self.convexity_tol >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "convexity tolerance must be nonnegative (got {})",
                self.convexity_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    /// iteration budget exhausted
    Budget,
    /// residual rose for [`DIVERGENCE_WINDOW`] consecutive iterations, or
    /// backtracking ran out of shrinks that many iterations in a row
    Diverged,
    /// a NaN or infinity appeared in the iterate or residual
    NonFinite,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::Budget => "budget",
            Termination::Diverged => "diverged",
            Termination::NonFinite => "non_finite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub max_norm: f64,
    pub hybrid_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Singular,
    Regular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkEvent {
    pub iteration: usize,
    pub branch: Branch,
    pub nu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub nu_singular: f64,
    pub nu_regular: f64,
    /// probed Lipschitz bounds; zero when a branch is empty
    pub k_singular: f64,
    pub k_regular: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub termination: Termination,
    /// residuals of every iterate, the initial guess first
    pub residual_history: Vec<Residuals>,
    pub final_residual: Residuals,
    pub steps: StepSizes,
    pub shrink_events: Vec<ShrinkEvent>,
    pub convexity: ConvexityReport,
    /// `max |u_h|` over interior nodes
    pub solution_bound: f64,
    pub errors: Option<ErrorMetrics>,
    pub mask: MaskSummary,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Solution of `Δ_h w = 2√f` inside with `w = g` on the boundary.
pub fn initial_guess(problem: &Problem, grid: GridSpec) -> Result<MeshFunction> {
    let f = problem.f_mesh(grid)?;
    let interior = grid.interior();
    if let Some(x) = interior.iter().find(|&x| !(f.get(x) >= 0.0)) {
        return Err(Error::RejectedProblem(format!("f = {} < 0 at node {x}", f.get(x))));
    }
    let rhs = MeshFunction::from_fn(grid, |x| if interior.contains(x) { 2.0 * f.get(x).sqrt() } else { 0.0 });
    poisson_solve(&rhs, &problem.g_mesh(grid)?, &interior)
}

fn branch_max(r: &MeshFunction, nodes: &[usize]) -> f64 {
    // NaN-propagating, unlike f64::max
    let vals = r.values();
    nodes.iter().map(|&k| vals[k].abs()).fold(0.0, |m, a| if a > m || a.is_nan() { a } else { m })
}

fn measure(r: &MeshFunction, scheme: &HybridScheme) -> Result<Residuals> {
    let max_norm = branch_max(r, scheme.singular_nodes()).max(branch_max(r, scheme.core_nodes()));
    Ok(Residuals { max_norm, hybrid_norm: hybrid_norm_cached(r, scheme.mask())? })
}

/// `u + ν₁F` on singular nodes and `u − ν₂ correction` on the core.
fn advance(
    u: &MeshFunction,
    r: &MeshFunction,
    correction: &MeshFunction,
    sing: &[usize],
    core: &[usize],
    nu1: f64,
    nu2: f64,
) -> MeshFunction {
    let mut next = u.clone();
    let vals = next.values_mut();
    for &k in sing {
        vals[k] += nu1 * r.values()[k];
    }
    for &k in core {
        vals[k] -= nu2 * correction.values()[k];
    }
    next
}

/// Max-norm and hybrid-norm size of `F_h(v)`.
pub fn residuals(v: &MeshFunction, mask: &RegionMask, problem: &Problem, radius: usize) -> Result<Residuals> {
    let dirs = DirectionSet::new(radius)?;
    let scheme = HybridScheme::new(mask.clone(), problem.f_mesh(mask.grid())?, &dirs)?;
    measure(&scheme.residual(v), &scheme)
}

/// `0.5 / K`, or `fallback` when the probe found no usable bound.
pub fn step_from_lipschitz(k: f64, fallback: f64) -> f64 {
    if k > 0.0 && k.is_finite() {
        STEP_SAFETY / k
    } else {
        fallback
    }
}

/// Most singular nodes whose local scheme is probed.
const PROBED_NODES: usize = 64;

fn probe_half_width(grid: GridSpec) -> f64 {
    // perturbations that move second differences by O(1)
    0.125 * grid.h() * grid.h()
}

fn estimate_with(scheme: &HybridScheme, u0: &MeshFunction, cfg: &SolverConfig) -> Result<StepSizes> {
    let grid = scheme.mask().grid();
    let h = grid.h();
    let w = probe_half_width(grid);
    let fv = scheme.f().values();

    // Singular branch: the local scheme at a spread of singular nodes, plus
    // the node with the largest f.
    let stencils = scheme.stencils();
    let mut picks: Vec<usize> = if stencils.len() <= PROBED_NODES {
        (0..stencils.len()).collect()
    } else {
        (0..PROBED_NODES).map(|k| k * stencils.len() / PROBED_NODES).collect()
    };
    if let Some(top) = (0..stencils.len()).max_by(|&a, &b| {
        let (fa, fb) = (fv[grid.index(stencils[a].node())], fv[grid.index(stencils[b].node())]);
        fa.total_cmp(&fb)
    }) {
        if !picks.contains(&top) {
            picks.push(top);
        }
    }
    let mut k_singular = 0.0f64;
    for (n, &p) in picks.iter().enumerate() {
        let st = &stencils[p];
        let center: Vec<f64> = st.nodes().into_iter().map(|y| u0.get(y)).collect();
        let fx = fv[grid.index(st.node())];
        let local = |vals: &[f64]| {
            let sd = st.second_differences_local(vals, h);
            st.pair_min(&sd, true).map(|(m, _)| m).unwrap_or(f64::NAN) - fx
        };
        k_singular = k_singular.max(lipschitz_probe(local, &center, w, 2, cfg.seed.wrapping_add(n as u64)));
    }

    // Regular branch: core values ↦ L_h F_h on the core.
    let core = scheme.core_nodes();
    let mut k_regular = 0.0;
    if !core.is_empty() {
        let factor = scheme.mask().core_factor()?;
        let center: Vec<f64> = core.iter().map(|&k| u0.values()[k]).collect();
        let op = |vals: &[f64]| {
            let mut v = u0.clone();
            for (&k, &val) in core.iter().zip(vals) {
                v.values_mut()[k] = val;
            }
            let r = scheme.residual(&v).masked(scheme.core_set());
            let w = factor.solve_homogeneous(&r);
            core.iter().map(|&k| w.values()[k]).collect()
        };
        k_regular = lipschitz_probe_map(op, &center, w, 8, cfg.seed.wrapping_add(1 << 32));
    }
    Ok(StepSizes {
        nu_singular: step_from_lipschitz(k_singular, cfg.nu_singular),
        nu_regular: step_from_lipschitz(k_regular, cfg.nu_regular),
        k_singular,
        k_regular,
    })
}

/// Step sizes `0.5 / K` per branch, with `K` probed around the initial
/// guess; config values where a probe gives nothing usable.
pub fn estimate_steps(problem: &Problem, mask: &RegionMask, cfg: &SolverConfig) -> Result<StepSizes> {
    let dirs = DirectionSet::new(cfg.radius)?;
    let scheme = HybridScheme::new(mask.clone(), problem.f_mesh(mask.grid())?, &dirs)?;
    let u0 = initial_guess(problem, mask.grid())?;
    estimate_with(&scheme, &u0, cfg)
}

/// Runs the iteration from the Poisson initial guess.
pub fn solve(problem: &Problem, mask: &RegionMask, cfg: &SolverConfig) -> Result<(MeshFunction, SolveReport)> {
    let u0 = initial_guess(problem, mask.grid())?;
    solve_from(problem, mask, cfg, u0)
}

/// Runs the iteration from `u0`; boundary values are reset to `g` first.
pub fn solve_from(
    problem: &Problem,
    mask: &RegionMask,
    cfg: &SolverConfig,
    u0: MeshFunction,
) -> Result<(MeshFunction, SolveReport)> {
    cfg.validate()?;
    let grid = mask.grid();
    if u0.grid() != grid {
        return Err(Error::InvalidInput(format!("initial guess lives on {} but the mask on {grid}", u0.grid())));
    }
    let dirs = DirectionSet::new(cfg.radius)?;
    let scheme = HybridScheme::new(mask.clone(), problem.f_mesh(grid)?, &dirs)?;
    let g = problem.g_mesh(grid)?;
    let mut u = u0;
    for x in grid.boundary().iter() {
        u.set(x, g.get(x));
    }

    let steps = if cfg.auto_steps {
        estimate_with(&scheme, &u, cfg)?
    } else {
        StepSizes { nu_singular: cfg.nu_singular, nu_regular: cfg.nu_regular, k_singular: 0.0, k_regular: 0.0 }
    };
    let (mut nu1, mut nu2) = (steps.nu_singular, steps.nu_regular);
    let factor = if scheme.core_nodes().is_empty() { None } else { Some(mask.core_factor()?) };
    let sing = scheme.singular_nodes();
    let core = scheme.core_nodes();
    // increases below this are treated as noise
    let noise = 0.1 * cfg.tol;

    let mut r = scheme.residual(&u);
    let mut res = measure(&r, &scheme)?;
    let mut history = vec![res];
    let mut shrink_events = Vec::new();
    let mut rises = 0;
    let mut exhausted = 0;
    let mut recent = VecDeque::from([res.max_norm]);
    let mut iterations = 0;
    let termination = loop {
        if !(u.is_finite() && r.is_finite() && res.max_norm.is_finite()) {
            break Termination::NonFinite;
        }
        if res.max_norm <= cfg.tol && cfg.hybrid_tol.is_none_or(|t| res.hybrid_norm <= t) {
            break Termination::Converged;
        }
        if iterations >= cfg.max_iter {
            break Termination::Budget;
        }
        let correction = match factor {
            Some(fac) => fac.solve_homogeneous(&r.masked(scheme.core_set())),
            None => MeshFunction::zeros(grid),
        };
        // the regular branch is judged nonmonotonically: the residual may
        // rise above its current value but not above its recent maximum
        let reference = recent.iter().copied().fold(0.0, f64::max);
        let old_s = branch_max(&r, sing);
        let mut shrinks = 0;
        let (cand, r_cand) = loop {
            if cfg.backtracking && shrinks < MAX_SHRINKS_PER_STEP && !sing.is_empty() {
                // with the core frozen, a small enough step on the monotone
                // branch cannot raise its own max residual
                let solo = scheme.singular_residual(&advance(&u, &r, &correction, sing, &[], nu1, 0.0));
                let size = solo.iter().fold(0.0, |m: f64, a| if a.abs() > m || a.is_nan() { a.abs() } else { m });
                if !(size <= old_s + noise) {
                    nu1 *= cfg.shrink;
                    shrink_events.push(ShrinkEvent { iteration: iterations, branch: Branch::Singular, nu: nu1 });
                    shrinks += 1;
                    continue;
                }
            }
            let cand = advance(&u, &r, &correction, sing, core, nu1, nu2);
            let r_cand = scheme.residual(&cand);
            if cfg.backtracking && shrinks < MAX_SHRINKS_PER_STEP && !core.is_empty() {
                let size = branch_max(&r_cand, sing).max(branch_max(&r_cand, core));
                if !(size <= reference + noise) {
                    nu2 *= cfg.shrink;
                    shrink_events.push(ShrinkEvent { iteration: iterations, branch: Branch::Regular, nu: nu2 });
                    shrinks += 1;
                    continue;
                }
            }
            break (cand, r_cand);
        };
        u = cand;
        r = r_cand;
        iterations += 1;
        let prev = res.max_norm;
        res = if r.is_finite() {
            measure(&r, &scheme)?
        } else {
            Residuals { max_norm: f64::NAN, hybrid_norm: f64::NAN }
        };
        history.push(res);
        if recent.len() == BACKTRACK_MEMORY {
            recent.pop_front();
        }
        recent.push_back(res.max_norm);
        if cfg.backtracking {
            exhausted = if shrinks >= MAX_SHRINKS_PER_STEP { exhausted + 1 } else { 0 };
            if exhausted >= DIVERGENCE_WINDOW {
                break Termination::Diverged;
            }
        } else {
            rises = if res.max_norm > prev + noise { rises + 1 } else { 0 };
            if rises >= DIVERGENCE_WINDOW {
                break Termination::Diverged;
            }
        }
    };

    let interior = grid.interior();
    let solution_bound = interior.iter().map(|x| u.get(x).abs()).fold(0.0, f64::max);
    let errors = match &problem.exact {
        Some(_) if u.is_finite() => Some(errors_vs_exact(&u, problem, mask)?),
        _ => None,
    };
    let report = SolveReport {
        iterations,
        termination,
        final_residual: res,
        residual_history: history,
        steps: StepSizes { nu_singular: nu1, nu_regular: nu2, ..steps },
        shrink_events,
        convexity: is_discrete_convex(&u, mask, &dirs, cfg.convexity_tol),
        solution_bound,
        errors,
        mask: mask.summary(),
    };
    Ok((u, report))
}
