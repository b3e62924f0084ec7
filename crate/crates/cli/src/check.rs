//! Property-check suite: monotonicity of the singular-branch operator,
//! consistency order of the regular-branch Hessian, and the discrete
//! Poincaré inequality.

use std::f64::consts::PI;

use ma_hybrid::diffops::hessian_errors;
use ma_hybrid::grid::{h1_seminorm, l2_inner};
use ma_hybrid::monotone::{m_s_plus, monotonicity_probe, DirectionSet, MONOTONICITY_SLACK};
use ma_hybrid::poisson::poincare_constant;
use ma_hybrid::problems::problem_by_name;
use ma_hybrid::solver::initial_guess;
use ma_hybrid::{GridSpec, Mat2, MeshFunction, NodeIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CliError, RunConfig};

/// Nodes probed by the monotonicity check.
pub const PROBE_NODES: usize = 100;
/// Random functions tested against the Poincaré inequality.
pub const POINCARE_SAMPLES: usize = 1000;
/// Accepted window for the observed Hessian consistency order.
pub const ORDER_WINDOW: [f64; 2] = [1.8, 2.2];
pub const POINCARE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleOut {
    pub node: NodeIndex,
    pub base: f64,
    pub bumped: f64,
    /// row-major values of the base function
    pub v: Vec<f64>,
    /// row-major values of the nonnegative bump
    pub bump: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityCheck {
    pub passed: bool,
    pub nodes: usize,
    pub trials_per_node: usize,
    pub violations: usize,
    pub worst_change: f64,
    pub slack: f64,
    /// fewer interior nodes than requested probe sites
    pub small_sample: bool,
    pub counterexample: Option<CounterexampleOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianLevel {
    pub h: f64,
    pub err_raw: f64,
    pub err_sym: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HessianCheck {
    pub passed: bool,
    pub window: [f64; 2],
    /// endpoint order of the symmetrised Hessian error
    pub order_sym: f64,
    /// endpoint order of the entrywise error of the raw Hessian
    pub order_raw: f64,
    pub levels: Vec<HessianLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareCheck {
    pub passed: bool,
    pub c_p: f64,
    pub analytic: f64,
    pub abs_diff: f64,
    pub samples: usize,
    /// smallest `|v|_{1,h} / (C_p ||v||_{0,h})` over the samples
    pub min_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub config: RunConfig,
    pub passed: bool,
    pub monotonicity: MonotonicityCheck,
    pub hessian: HessianCheck,
    pub poincare: PoincareCheck,
}

/// Runs the suite against the library's `m_s_plus`.
pub fn run_check(cfg: &RunConfig) -> Result<CheckReport, CliError> {
    let dirs = DirectionSet::new(cfg.solver.radius)?;
    let scheme = |v: &MeshFunction, x: NodeIndex| m_s_plus(v, &dirs.at(v.grid(), x)).unwrap_or(f64::NAN);
    run_check_with(cfg, &scheme)
}

/// Runs the suite with `scheme` standing in for the singular-branch operator.
pub fn run_check_with(
    cfg: &RunConfig,
    scheme: &(dyn Fn(&MeshFunction, NodeIndex) -> f64 + Sync),
) -> Result<CheckReport, CliError> {
    let cells = *cfg.cells.first().ok_or_else(|| CliError::Usage("check needs a mesh size".into()))?;
    let grid = GridSpec::new(cells)?;
    let monotonicity = check_monotonicity(cfg, grid, scheme)?;
    let hessian = check_hessian(cells)?;
    let poincare = check_poincare(grid, cfg.solver.seed)?;
    Ok(CheckReport {
        config: cfg.clone(),
        passed: monotonicity.passed && hessian.passed && poincare.passed,
        monotonicity,
        hessian,
        poincare,
    })
}

fn check_monotonicity(
    cfg: &RunConfig,
    grid: GridSpec,
    scheme: &(dyn Fn(&MeshFunction, NodeIndex) -> f64 + Sync),
) -> Result<MonotonicityCheck, CliError> {
    let problem = problem_by_name(&cfg.problem)?;
    let smooth = match problem.exact {
        Some(_) => problem.exact_mesh(grid)?,
        None => initial_guess(&problem, grid)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.solver.seed);
    let h2 = grid.h() * grid.h();
    // small noise keeps most second differences positive, so clipping does not hide a sign error
    let v = MeshFunction::from_fn(grid, |x| smooth.get(x) + if grid.is_boundary(x) { 0.0 } else { rng.gen_range(-0.01..0.01) * h2 });
    let interior: Vec<NodeIndex> = grid.interior().iter().collect();
    let count = interior.len().min(PROBE_NODES);
    let mut picks: Vec<usize> = sample(&mut rng, interior.len(), count).into_vec();
    picks.sort_unstable();
    let seed = cfg.solver.seed;
    let reports: Vec<_> = picks
        .par_iter()
        .map(|&k| monotonicity_probe(scheme, &v, interior[k], cfg.trials, seed.wrapping_add(k as u64 + 1)))
        .collect();
    let violations = reports.iter().map(|r| r.violations).sum();
    let worst_change = reports.iter().map(|r| r.worst_change).fold(0.0, f64::min);
    let counterexample = reports.into_iter().find_map(|r| r.counterexample).map(|c| CounterexampleOut {
        node: c.node,
        base: c.base,
        bumped: c.bumped,
        v: c.v.values().to_vec(),
        bump: c.bump.values().to_vec(),
    });
    Ok(MonotonicityCheck {
        passed: violations == 0,
        nodes: count,
        trials_per_node: cfg.trials,
        violations,
        worst_change,
        slack: MONOTONICITY_SLACK,
        small_sample: interior.len() < PROBE_NODES,
        counterexample,
    })
}

fn check_hessian(cells: usize) -> Result<HessianCheck, CliError> {
    let v = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
    let d2v = |x: f64, y: f64| {
        let (sx, cx, sy, cy) = ((PI * x).sin(), (PI * x).cos(), (PI * y).sin(), (PI * y).cos());
        let p2 = PI * PI;
        Mat2::new(-p2 * sx * sy, p2 * cx * cy, p2 * cx * cy, -p2 * sx * sy)
    };
    let mut levels = Vec::new();
    for k in [1, 2, 4, 8] {
        let grid = GridSpec::new(cells * k)?;
        let e = hessian_errors(grid, v, d2v)?;
        levels.push(HessianLevel { h: grid.h(), err_raw: e.raw, err_sym: e.sym });
    }
    let (first, last) = (&levels[0], &levels[levels.len() - 1]);
    let span = (first.h / last.h).log2();
    let order_sym = (first.err_sym / last.err_sym).log2() / span;
    let order_raw = (first.err_raw / last.err_raw).log2() / span;
    Ok(HessianCheck {
        passed: order_sym >= ORDER_WINDOW[0] && order_sym <= ORDER_WINDOW[1],
        window: ORDER_WINDOW,
        order_sym,
        order_raw,
        levels,
    })
}

fn check_poincare(grid: GridSpec, seed: u64) -> Result<PoincareCheck, CliError> {
    let interior = grid.interior();
    let c_p = poincare_constant(&interior)?;
    let h = grid.h();
    let analytic = ((8.0 / (h * h)) * (PI * h / 2.0).sin().powi(2)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut min_ratio = f64::INFINITY;
    for t in 0..POINCARE_SAMPLES {
        // alternate rough fields with smooth low modes, where the bound is nearly tight
        let v = if t % 2 == 0 {
            MeshFunction::from_fn(grid, |x| if interior.contains(x) { rng.gen_range(-1.0..1.0) } else { 0.0 })
        } else {
            let (a, b) = (rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            MeshFunction::from_fn(grid, |x| {
                if !interior.contains(x) {
                    return 0.0;
                }
                let [px, py] = grid.point(x);
                (PI * px).sin() * (PI * py).sin() + a * (2.0 * PI * px).sin() * (PI * py).sin() + b * (PI * px).sin() * (2.0 * PI * py).sin()
            })
        };
        let l2 = l2_inner(&v, &v, &interior).sqrt();
        if l2 > 0.0 {
            min_ratio = min_ratio.min(h1_seminorm(&v, &interior)? / (c_p * l2));
        }
    }
    let abs_diff = (c_p - analytic).abs();
    Ok(PoincareCheck {
        passed: abs_diff <= POINCARE_TOL && min_ratio >= 1.0 - 1e-12,
        c_p,
        analytic,
        abs_diff,
        samples: POINCARE_SAMPLES,
        min_ratio,
    })
}
