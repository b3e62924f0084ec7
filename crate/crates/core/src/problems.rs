//! Catalog of Dirichlet problems for `det D²u = f` on the unit square and
//! error evaluation against their exact solutions.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{h1_seminorm, restrict_on, GridSpec, MeshFunction, NodeSet};
use crate::hybrid::{hybrid_norm_cached, MaskHeuristics, RegionMask, SingularBox};
use crate::linalg::Mat2;

pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Where a problem's data or solution loses regularity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Locus {
    Point([f64; 2]),
    Circle { center: [f64; 2], radius: f64 },
}

impl Locus {
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match *self {
            Locus::Point(q) => (p[0] - q[0]).hypot(p[1] - q[1]),
            Locus::Circle { center, radius } => ((p[0] - center[0]).hypot(p[1] - center[1]) - radius).abs(),
        }
    }
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub description: String,
    pub f: ScalarFn,
    pub g: ScalarFn,
    pub exact: Option<ScalarFn>,
    pub heuristics: MaskHeuristics,
    /// false when `f` is not bounded below by a positive constant
    pub satisfies_hypotheses: bool,
    pub loci: Vec<Locus>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("description", &self.description)
            .field("has_exact", &self.exact.is_some())
            .field("heuristics", &self.heuristics)
            .field("satisfies_hypotheses", &self.satisfies_hypotheses)
            .field("loci", &self.loci)
            .finish()
    }
}

impl Problem {
    /// `f` at the interior nodes, zero on the boundary.
    pub fn f_mesh(&self, grid: GridSpec) -> Result<MeshFunction> {
        restrict_on(|x, y| (self.f)(x, y), &grid.interior())
    }

    /// `g` on the boundary nodes, zero inside.
    pub fn g_mesh(&self, grid: GridSpec) -> Result<MeshFunction> {
        restrict_on(|x, y| (self.g)(x, y), &grid.boundary())
    }

    pub fn exact_mesh(&self, grid: GridSpec) -> Result<MeshFunction> {
        let u = self
            .exact
            .as_ref()
            .ok_or_else(|| Error::Domain(format!("problem {} has no exact solution", self.name)))?;
        restrict_on(|x, y| u(x, y), &grid.all())
    }

    /// A copy with a different right-hand side.
    pub fn with_f(&self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Problem {
        Problem { f: Arc::new(f), ..self.clone() }
    }

    /// Builds the auto mask from the problem's heuristics.
    pub fn auto_mask(&self, grid: GridSpec) -> Result<RegionMask> {
        crate::hybrid::build_mask(&self.f_mesh(grid)?, &self.heuristics)
    }
}

fn radial(x: f64, y: f64) -> f64 {
    x * x + y * y
}

pub fn p1() -> Problem {
    let u = |x: f64, y: f64| 0.5 * radial(x, y);
    Problem {
        name: "P1".into(),
        description: "u = |x|²/2, f = 1 (quadratic)".into(),
        f: Arc::new(|_, _| 1.0),
        g: Arc::new(u),
        exact: Some(Arc::new(u)),
        heuristics: MaskHeuristics::default(),
        satisfies_hypotheses: true,
        loci: Vec::new(),
    }
}

pub fn p2() -> Problem {
    let u = |x: f64, y: f64| (0.5 * radial(x, y)).exp();
    Problem {
        name: "P2".into(),
        description: "u = exp(|x|²/2), f = (1 + |x|²) exp(|x|²) (smooth)".into(),
        f: Arc::new(|x, y| (1.0 + radial(x, y)) * radial(x, y).exp()),
        g: Arc::new(u),
        exact: Some(Arc::new(u)),
        heuristics: MaskHeuristics::default(),
        satisfies_hypotheses: true,
        loci: Vec::new(),
    }
}

pub const P3_CENTER: [f64; 2] = [0.5, 0.5];
pub const P3_RADIUS: f64 = 0.2;

pub fn p3() -> Problem {
    let rho = |x: f64, y: f64| (x - P3_CENTER[0]).hypot(y - P3_CENTER[1]);
    let u = move |x: f64, y: f64| 0.5 * (rho(x, y) - P3_RADIUS).max(0.0).powi(2);
    let f = move |x: f64, y: f64| {
        let r = rho(x, y);
        if r <= P3_RADIUS {
            0.0
        } else {
            1.0 - P3_RADIUS / r
        }
    };
    let pad = P3_RADIUS + 0.08;
    Problem {
        name: "P3".into(),
        description: "u = ((|x - x0| - 0.2)^+)²/2, f = (1 - 0.2/|x - x0|)^+ (C¹, f = 0 on a disc)".into(),
        f: Arc::new(f),
        g: Arc::new(u),
        exact: Some(Arc::new(u)),
        heuristics: MaskHeuristics {
            user_boxes: vec![SingularBox {
                x0: P3_CENTER[0] - pad,
                x1: P3_CENTER[0] + pad,
                y0: P3_CENTER[1] - pad,
                y1: P3_CENTER[1] + pad,
            }],
            ..MaskHeuristics::default()
        },
        satisfies_hypotheses: false,
        loci: vec![Locus::Circle { center: P3_CENTER, radius: P3_RADIUS }],
    }
}

pub fn p4() -> Problem {
    let u = |x: f64, y: f64| -(2.0 - radial(x, y)).max(0.0).sqrt();
    Problem {
        name: "P4".into(),
        description: "u = -sqrt(2 - |x|²), f = 2/(2 - |x|²)² (gradient blows up at (1, 1))".into(),
        f: Arc::new(|x, y| 2.0 / (2.0 - radial(x, y)).powi(2)),
        g: Arc::new(u),
        exact: Some(Arc::new(u)),
        heuristics: MaskHeuristics { f_max: 20.0, ..MaskHeuristics::default() },
        satisfies_hypotheses: true,
        loci: vec![Locus::Point([1.0, 1.0])],
    }
}

pub fn catalog() -> Vec<Problem> {
    vec![p1(), p2(), p3(), p4()]
}

pub fn problem_by_name(name: &str) -> Result<Problem> {
    catalog()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| {
            let known: Vec<String> = catalog().into_iter().map(|p| p.name).collect();
            Error::InvalidInput(format!("unknown problem '{name}' (known: {})", known.join(", ")))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub err_max_singular: f64,
    pub err_h1_regular: f64,
    pub err_hybrid: f64,
    pub err_max_global: f64,
}

/// Errors of `u_h − r_h(u)`: max norm on the singular set, `|·|_{1,h}` on
/// the regular core, the hybrid norm, and max norm on all interior nodes.
/// Empty regions contribute zero.
pub fn errors_vs_exact(u_h: &MeshFunction, problem: &Problem, mask: &RegionMask) -> Result<ErrorMetrics> {
    let grid = mask.grid();
    let e = u_h.sub(&problem.exact_mesh(grid)?);
    let max_on = |set: &NodeSet| set.iter().map(|x| e.get(x).abs()).fold(0.0, f64::max);
    let core = mask.regular_core();
    Ok(ErrorMetrics {
        err_max_singular: max_on(&mask.singular()),
        err_h1_regular: if core.is_empty() { 0.0 } else { h1_seminorm(&e, &core)? },
        err_hybrid: hybrid_norm_cached(&e, mask)?,
        err_max_global: max_on(&grid.interior()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub samples: usize,
    pub seed: u64,
    /// base step of the Richardson-extrapolated central differences
    pub step: f64,
    pub rel_tol: f64,
    /// sample points closer than this to a singular locus are skipped
    pub exclusion: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { samples: 1000, seed: 0, step: 1e-3, rel_tol: 1e-6, exclusion: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub point: [f64; 2],
    pub det: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub skipped: usize,
    /// points where `det D²u` and `f` disagree beyond tolerance
    pub failures: Vec<SampleFailure>,
    /// points where the sampled Hessian has an eigenvalue below −1e−8
    pub nonconvex: Vec<[f64; 2]>,
    pub max_rel_err: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.nonconvex.is_empty()
    }
}

/// Central-difference Hessian of `u` at `p` with step `s`.
fn fd_hessian(u: &dyn Fn(f64, f64) -> f64, p: [f64; 2], s: f64) -> Mat2 {
    let [x, y] = p;
    let c = u(x, y);
    let uxx = (u(x + s, y) - 2.0 * c + u(x - s, y)) / (s * s);
    let uyy = (u(x, y + s) - 2.0 * c + u(x, y - s)) / (s * s);
    let uxy = (u(x + s, y + s) - u(x + s, y - s) - u(x - s, y + s) + u(x - s, y - s)) / (4.0 * s * s);
    Mat2::new(uxx, uxy, uxy, uyy)
}

/// Checks `det D²u = f` and convexity of the exact solution at random
/// interior points, using Richardson-extrapolated central differences.
pub fn verify_problem(problem: &Problem, opts: &VerifyOptions) -> Result<VerifyReport> {
    let u = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Domain(format!("problem {} has no exact solution", problem.name)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let s = opts.step;
    let mut report = VerifyReport { checked: 0, skipped: 0, failures: Vec::new(), nonconvex: Vec::new(), max_rel_err: 0.0 };
    for _ in 0..opts.samples {
        let p = [rng.gen_range(2.0 * s..1.0 - 2.0 * s), rng.gen_range(2.0 * s..1.0 - 2.0 * s)];
        if problem.loci.iter().any(|l| l.distance(p) < opts.exclusion) {
            report.skipped += 1;
            continue;
        }
        let coarse = fd_hessian(u.as_ref(), p, s);
        let fine = fd_hessian(u.as_ref(), p, 0.5 * s);
        let hess = fine * (4.0 / 3.0) - coarse * (1.0 / 3.0);
        let det = hess.det();
        let f = (problem.f)(p[0], p[1]);
        let rel = (det - f).abs() / (1.0 + f.abs());
        report.checked += 1;
        report.max_rel_err = report.max_rel_err.max(rel);
        if !(rel <= opts.rel_tol) {
            report.failures.push(SampleFailure { point: p, det, f });
        }
        if !(hess.sym_eigenvalues()[0] >= -1e-8) {
            report.nonconvex.push(p);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{max_norm, NodeIndex};
    use crate::hybrid::Label;

    fn grid(cells: usize) -> GridSpec {
        GridSpec::new(cells).unwrap()
    }

    #[test]
    fn catalog_names_and_lookup() {
        let names: Vec<_> = catalog().into_iter().map(|p| p.name).collect();
        assert_eq!(names, ["P1", "P2", "P3", "P4"]);
        assert_eq!(problem_by_name("p2").unwrap().name, "P2");
        assert!(matches!(problem_by_name("P9"), Err(Error::InvalidInput(_))));
        assert!(!p3().satisfies_hypotheses);
    }

    #[test]
    fn boundary_data_is_exact_trace() {
        for p in catalog() {
            let g = grid(16);
            let gm = p.g_mesh(g).unwrap();
            let ex = p.exact_mesh(g).unwrap();
            for x in g.boundary().iter() {
                assert!((gm.get(x) - ex.get(x)).abs() <= 1e-12, "{}", p.name);
            }
        }
    }

    #[test]
    fn f_positive_at_nodes_unless_flagged() {
        for p in catalog() {
            for cells in [8usize, 16, 32, 64] {
                let f = p.f_mesh(grid(cells)).unwrap();
                let pos = grid(cells).interior().iter().all(|x| f.get(x) > 0.0);
                assert_eq!(pos, p.satisfies_hypotheses, "{} at {cells}", p.name);
            }
        }
    }

    #[test]
    fn p2_and_p3_closed_forms() {
        let p = p2();
        assert_eq!((p.f)(0.0, 0.0), 1.0);
        // radial identity for P3: u''(ρ) u'(ρ)/ρ = (1 − r0/ρ)^+
        let q = p3();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let rho: f64 = rng.gen_range(0.01..0.7);
            let (du, ddu) = if rho > P3_RADIUS { (rho - P3_RADIUS, 1.0) } else { (0.0, 0.0) };
            let t: f64 = rng.gen_range(0.0..6.28);
            let (x, y) = (P3_CENTER[0] + rho * t.cos(), P3_CENTER[1] + rho * t.sin());
            assert!((ddu * du / rho - (q.f)(x, y)).abs() < 1e-12);
        }
    }

    #[test]
    fn catalog_passes_verification() {
        for p in catalog() {
            let rep = verify_problem(&p, &VerifyOptions { samples: 2000, ..Default::default() }).unwrap();
            assert!(rep.passed(), "{}: {:?}", p.name, &rep.failures[..rep.failures.len().min(3)]);
            assert!(rep.checked > 1500);
        }
        let rep = verify_problem(&p2(), &VerifyOptions { samples: 10_000, ..Default::default() }).unwrap();
        assert!(rep.passed() && rep.checked == 10_000);
    }

    #[test]
    fn verification_detects_corrupted_f() {
        let p = p2();
        let f = p.f.clone();
        let bad = p.with_f(move |x, y| 1.01 * f(x, y));
        let rep = verify_problem(&bad, &VerifyOptions::default()).unwrap();
        assert!(rep.failures.len() as f64 >= 0.99 * rep.checked as f64);
    }

    #[test]
    fn errors_vs_exact_examples() {
        let g = grid(4);
        let mask = RegionMask::all_regular(g);
        let p = p2();
        let exact = p.exact_mesh(g).unwrap();
        let zero = errors_vs_exact(&exact, &p, &mask).unwrap();
        assert_eq!(zero, ErrorMetrics { err_max_singular: 0.0, err_h1_regular: 0.0, err_hybrid: 0.0, err_max_global: 0.0 });

        let x = NodeIndex::new(1, 1);
        assert_eq!(mask.label(x), Label::Singular);
        let mut u = exact.clone();
        u.set(x, u.get(x) + 0.25);
        let m = errors_vs_exact(&u, &p, &mask).unwrap();
        assert!((m.err_max_singular - 0.25).abs() < 1e-15);
        assert_eq!(m.err_h1_regular, 0.0);
        assert!((m.err_max_global - 0.25).abs() < 1e-15);

        let g = grid(8);
        let mask = p.auto_mask(g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let exact = p.exact_mesh(g).unwrap();
        let u = MeshFunction::from_fn(g, |x| exact.get(x) + if g.is_boundary(x) { 0.0 } else { rng.gen_range(-0.1..0.1) });
        let m = errors_vs_exact(&u, &p, &mask).unwrap();
        let e = u.sub(&exact);
        assert_eq!(m.err_max_singular, max_norm(&e, &mask.singular()).unwrap());
        assert_eq!(m.err_h1_regular, h1_seminorm(&e, &mask.regular_core()).unwrap());
        assert_eq!(m.err_max_global, max_norm(&e, &g.interior()).unwrap());
        assert_eq!(m.err_hybrid, crate::hybrid::hybrid_norm(&e, &mask, mask.poincare_constant().unwrap()).unwrap());
    }

    #[test]
    fn p3_auto_mask_forces_the_disc_singular() {
        for cells in [16usize, 32] {
            let g = grid(cells);
            let mask = p3().auto_mask(g).unwrap();
            for x in g.interior().iter() {
                let [a, b] = g.point(x);
                if (a - 0.5).hypot(b - 0.5) <= P3_RADIUS {
                    assert_eq!(mask.label(x), Label::Singular);
                }
            }
            assert!(!mask.regular_core().is_empty());
        }
    }
}
