//! The acceptance criteria, one test each. Every test prints a single
//! `criterion N ... PASS|FAIL` line with the measured numbers, then asserts.
//! Run with `--nocapture` to see the lines.

use std::f64::consts::PI;
use std::sync::Mutex;
use std::time::Instant;

use ma_hybrid::diffops::hessian_errors;
use ma_hybrid::grid::restrict;
use ma_hybrid::hybrid::{is_discrete_convex, Label, RegionMask};
use ma_hybrid::monotone::{lambda1_h, m_s, m_s_plus, monotonicity_probe, DirectionSet};
use ma_hybrid::poisson::poincare_constant;
use ma_hybrid::problems::{catalog, p1, p2, p3, Problem};
use ma_hybrid::solver::{solve, SolveReport, SolverConfig};
use ma_hybrid::{GridSpec, Mat2, MeshFunction, NodeIndex, NodeSet};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Keeps timings honest by running one criterion at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: usize, title: &str, pass: bool, detail: &str) {
    println!("criterion {n:>2} {title}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn grid(cells: usize) -> GridSpec {
    GridSpec::new(cells).unwrap()
}

fn run(problem: &Problem, mask: &RegionMask, cfg: &SolverConfig) -> (MeshFunction, SolveReport) {
    solve(problem, mask, cfg).unwrap()
}

fn err_global(r: &SolveReport) -> f64 {
    r.errors.expect("exact solution").err_max_global
}

fn order(e_coarse: f64, e_fine: f64, levels: f64) -> f64 {
    (e_coarse / e_fine).log2() / levels
}

#[test]
fn criterion_01_quadratic_exactness() {
    let _g = serial();
    let g = grid(8);
    let p = p1();
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, mask) in [("singular", RegionMask::all_singular(g)), ("auto", p.auto_mask(g).unwrap())] {
        let t = Instant::now();
        let (_, r) = run(&p, &mask, &SolverConfig::default());
        let secs = t.elapsed().as_secs_f64();
        let e = err_global(&r);
        pass &= r.converged() && e <= 1e-7 && r.iterations <= 200 && secs < 1.0;
        detail.push(format!("{name}: err={e:.2e} iters={} time={secs:.3}s {}", r.iterations, r.termination.as_str()));
    }
    verdict(1, "quadratic exactness", pass, &detail.join("; "));
}

fn sin_sin(x: f64, y: f64) -> f64 {
    (PI * x).sin() * (PI * y).sin()
}

fn sin_sin_hessian(x: f64, y: f64) -> Mat2 {
    let p2 = PI * PI;
    let (s, c) = (sin_sin(x, y), (PI * x).cos() * (PI * y).cos());
    Mat2::new(-p2 * s, p2 * c, p2 * c, -p2 * s)
}

#[test]
fn criterion_02_hessian_consistency() {
    let _g = serial();
    let t = Instant::now();
    let levels = [8, 16, 32, 64];
    let errs: Vec<_> = levels.iter().map(|&c| hessian_errors(grid(c), sin_sin, sin_sin_hessian).unwrap()).collect();
    let secs = t.elapsed().as_secs_f64();
    let last = errs.len() - 1;
    let raw = order(errs[0].raw, errs[last].raw, 3.0);
    let sym = order(errs[0].sym, errs[last].sym, 3.0);
    let pairs: Vec<String> = (1..errs.len()).map(|k| format!("{:.3}", order(errs[k - 1].raw, errs[k].raw, 1.0))).collect();
    let pass = (1.8..=2.2).contains(&raw) && secs < 1.0;
    let detail = format!(
        "order of max entrywise H_d error {raw:.3} (pairs {}), symmetrised {sym:.3}, time={secs:.3}s",
        pairs.join(", ")
    );
    verdict(2, "Hessian consistency order", pass, &detail);
}

#[test]
fn criterion_03_monotonicity() {
    let _g = serial();
    let t = Instant::now();
    let g = grid(16);
    let dirs = DirectionSet::default();
    let scheme = |v: &MeshFunction, x: NodeIndex| m_s_plus(v, &dirs.at(g, x)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let smooth = p2().exact_mesh(g).unwrap();
    let h2 = g.h() * g.h();
    let v = MeshFunction::from_fn(g, |x| smooth.get(x) + rng.gen_range(-0.01..0.01) * h2);
    let interior: Vec<NodeIndex> = g.interior().iter().collect();
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for (k, idx) in sample(&mut rng, interior.len(), 100).into_iter().enumerate() {
        let rep = monotonicity_probe(scheme, &v, interior[idx], 1000, 100 + k as u64);
        violations += rep.violations;
        worst = worst.min(rep.worst_change);
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = violations == 0 && secs < 5.0;
    let detail = format!("100 nodes x 1000 trials: violations={violations} worst change={worst:.3e} time={secs:.3}s");
    verdict(3, "monotonicity of the singular branch", pass, &detail);
}

/// `|v|_{1,h}` over all grid edges and `||v||_{0,h}`.
fn norms(v: &MeshFunction) -> (f64, f64) {
    let g = v.grid();
    let n = g.cells();
    let (mut h1, mut l2) = (0.0, 0.0);
    for x in g.nodes() {
        l2 += v.get(x).powi(2);
        if x.i < n {
            h1 += (v.get(NodeIndex::new(x.i + 1, x.j)) - v.get(x)).powi(2);
        }
        if x.j < n {
            h1 += (v.get(NodeIndex::new(x.i, x.j + 1)) - v.get(x)).powi(2);
        }
    }
    (h1.sqrt(), (l2 * g.h() * g.h()).sqrt())
}

#[test]
fn criterion_04_discrete_poincare() {
    let _g = serial();
    let t = Instant::now();
    // dense five-point matrix on the interior of the h = 1/4 grid
    let g4 = grid(4);
    let inner: Vec<NodeIndex> = g4.interior().iter().collect();
    let h2 = g4.h() * g4.h();
    let a = DMatrix::from_fn(inner.len(), inner.len(), |r, c| {
        let (x, y) = (inner[r], inner[c]);
        let d = x.i.abs_diff(y.i) + x.j.abs_diff(y.j);
        match d {
            0 => 4.0 / h2,
            1 => -1.0 / h2,
            _ => 0.0,
        }
    });
    let oracle = SymmetricEigen::new(a).eigenvalues.min().sqrt();
    let c4 = poincare_constant(&g4.interior()).unwrap();
    let mut pass = (c4 - oracle).abs() <= 1e-8;
    let mut detail = vec![format!("h=1/4 |C_p - dense| = {:.1e}", (c4 - oracle).abs())];
    for cells in [8, 16] {
        let g = grid(cells);
        let h = g.h();
        let analytic = ((8.0 / (h * h)) * (PI * h / 2.0).sin().powi(2)).sqrt();
        let c = poincare_constant(&g.interior()).unwrap();
        pass &= (c - analytic).abs() <= 1e-8;
        detail.push(format!("h=1/{cells} |C_p - analytic| = {:.1e}", (c - analytic).abs()));
    }
    let g = grid(16);
    let c = poincare_constant(&g.interior()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut min_ratio = f64::INFINITY;
    for k in 0..1000 {
        let amp = 10f64.powf(rng.gen_range(-3.0..3.0));
        let smooth = k % 2 == 1;
        let (a, b) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let v = MeshFunction::from_fn(g, |x| {
            if g.is_boundary(x) {
                0.0
            } else if smooth {
                let [px, py] = g.point(x);
                amp * (sin_sin(px, py) + 0.3 * a * sin_sin(2.0 * px, py) + 0.3 * b * sin_sin(px, 3.0 * py))
            } else {
                amp * rng.gen_range(-1.0..1.0)
            }
        });
        let (h1, l2) = norms(&v);
        min_ratio = min_ratio.min(h1 / (c * l2));
    }
    pass &= min_ratio >= 1.0 - 1e-12;
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 5.0;
    detail.push(format!("1000 random functions: min |v|_1/(C_p||v||_0) = {min_ratio:.6}"));
    detail.push(format!("time={secs:.3}s"));
    verdict(4, "discrete Poincare constant", pass, &detail.join("; "));
}

#[test]
fn criterion_05_smooth_convergence() {
    let _g = serial();
    let t = Instant::now();
    let p = p2();
    let levels = [8usize, 16, 32, 64];
    let reports: Vec<SolveReport> =
        levels.iter().map(|&c| run(&p, &p.auto_mask(grid(c)).unwrap(), &SolverConfig::default()).1).collect();
    let secs = t.elapsed().as_secs_f64();
    let glob: Vec<f64> = reports.iter().map(err_global).collect();
    let h1: Vec<f64> = reports.iter().map(|r| r.errors.unwrap().err_h1_regular).collect();
    let converged = reports.iter().all(SolveReport::converged);
    let decreasing = glob.windows(2).all(|w| w[1] < w[0]);
    let order_glob = order(glob[0], glob[3], 3.0);
    let order_h1 = order(h1[0], h1[3], 3.0);
    let pass = converged && decreasing && order_glob >= 0.9 && order_h1 >= 0.9 && secs < 60.0;
    let rows: Vec<String> = levels
        .iter()
        .zip(&reports)
        .map(|(c, r)| {
            let e = r.errors.unwrap();
            format!("1/{c}: {} it={} max={:.3e} h1={:.3e}", r.termination.as_str(), r.iterations, e.err_max_global, e.err_h1_regular)
        })
        .collect();
    let pair = |e: &[f64]| (1..e.len()).map(|k| format!("{:.2}", order(e[k - 1], e[k], 1.0))).collect::<Vec<_>>().join("/");
    let detail = format!(
        "{}; order max {order_glob:.3} (pairs {}), order h1 {order_h1:.3} (pairs {}), time={secs:.1}s",
        rows.join("; "),
        pair(&glob),
        pair(&h1)
    );
    verdict(5, "smooth-problem convergence", pass, &detail);
}

#[test]
fn criterion_06_discrete_convexity() {
    let _g = serial();
    let g = grid(16);
    let dirs = DirectionSet::default();
    let mut pass = true;
    let mut detail = Vec::new();
    for p in catalog().into_iter().filter(|p| ["P1", "P2", "P4"].contains(&p.name.as_str())) {
        let mask = p.auto_mask(g).unwrap();
        let (u, r) = run(&p, &mask, &SolverConfig::default());
        let conv = is_discrete_convex(&u, &mask, &dirs, 1e-8);
        pass &= r.converged() && conv.ok;
        detail.push(format!(
            "{}: {} convex={} min lambda1={:?} min eig={:?}",
            p.name,
            r.termination.as_str(),
            conv.ok,
            conv.worst_lambda1,
            conv.worst_hessian_eigenvalue
        ));
    }
    verdict(6, "discrete convexity of solutions", pass, &detail.join("; "));
}

#[test]
fn criterion_07_stability() {
    let _g = serial();
    let levels = [8usize, 16, 32, 64];
    let mut pass = true;
    let mut detail = Vec::new();
    for p in catalog() {
        let mut bounds = Vec::new();
        let mut exact_bounds = Vec::new();
        let mut status = Vec::new();
        for &c in &levels {
            let g = grid(c);
            let (_, r) = run(&p, &p.auto_mask(g).unwrap(), &SolverConfig::default());
            pass &= r.converged();
            status.push(r.termination.as_str());
            bounds.push(r.solution_bound);
            let exact = p.exact_mesh(g).unwrap();
            exact_bounds.push(g.interior().iter().map(|x| exact.get(x).abs()).fold(0.0, f64::max));
        }
        let within = bounds.iter().all(|b| (b - bounds[0]).abs() <= 0.1 * bounds[0]);
        pass &= within;
        let fmt = |v: &[f64]| v.iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>().join("/");
        detail.push(format!(
            "{}: |u_h| {} [{}], exact restriction {}",
            p.name,
            fmt(&bounds),
            status.join(","),
            fmt(&exact_bounds)
        ));
    }
    verdict(7, "stability of max|u_h| within 10%", pass, &detail.join("; "));
}

#[test]
fn criterion_08_degenerate_robustness() {
    let _g = serial();
    let p = p3();
    let cfg = SolverConfig { tol: 1e-6, ..SolverConfig::default() };
    let mut pass = true;
    let mut errs = Vec::new();
    let mut detail = Vec::new();
    for c in [16usize, 32] {
        let g = grid(c);
        let mask = p.auto_mask(g).unwrap();
        let f = p.f_mesh(g).unwrap();
        let disc_singular = g.interior().iter().filter(|&x| f.get(x) == 0.0).all(|x| mask.label(x) == Label::Singular);
        let (_, r) = run(&p, &mask, &cfg);
        pass &= disc_singular && r.converged() && r.final_residual.max_norm <= 1e-6;
        errs.push(err_global(&r));
        detail.push(format!(
            "1/{c}: disc singular={disc_singular} {} it={} res={:.2e} err={:.3e}",
            r.termination.as_str(),
            r.iterations,
            r.final_residual.max_norm,
            errs[errs.len() - 1]
        ));
    }
    pass &= errs[1] < errs[0];
    verdict(8, "degenerate problem with forced singular disc", pass, &detail.join("; "));
}

/// Second difference straight from mesh values along any lattice vector.
fn sd(v: &MeshFunction, x: NodeIndex, p: isize, q: isize) -> f64 {
    let h = v.grid().h();
    let at = |s: isize| v.get(NodeIndex::new((x.i as isize + s * p) as usize, (x.j as isize + s * q) as usize));
    (at(1) - 2.0 * at(0) + at(-1)) / (h * h * (p * p + q * q) as f64)
}

/// Brute-force `(λ1, m_s, m_s⁺)` over every lattice vector and every
/// perpendicular lattice vector of length at most `radius`.
fn oracle(v: &MeshFunction, x: NodeIndex, radius: isize) -> (f64, f64, f64) {
    let g = v.grid();
    let fits = |p: isize, q: isize| {
        let (i, j) = (x.i as isize, x.j as isize);
        g.in_grid(i + p, j + q) && g.in_grid(i - p, j - q)
    };
    let vecs: Vec<(isize, isize)> = (-radius..=radius)
        .flat_map(|p| (-radius..=radius).map(move |q| (p, q)))
        .filter(|&(p, q)| (p, q) != (0, 0) && p * p + q * q <= radius * radius && fits(p, q))
        .collect();
    let (mut lam, mut ms, mut msp) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for &(p, q) in &vecs {
        let a = sd(v, x, p, q);
        lam = lam.min(a);
        for &(s, t) in vecs.iter().filter(|&&(s, t)| p * s + q * t == 0) {
            let b = sd(v, x, s, t);
            ms = ms.min(a * b);
            msp = msp.min(a.max(0.0) * b.max(0.0));
        }
    }
    (lam, ms, msp)
}

fn centred_quadratic(a: Mat2, g: GridSpec, x: NodeIndex) -> MeshFunction {
    let [cx, cy] = g.point(x);
    restrict(move |px, py| 0.5 * a.quad_form([px - cx, py - cy]), g).unwrap()
}

#[test]
fn criterion_09_quadratic_oracle() {
    let _g = serial();
    let g = grid(16);
    let dirs = DirectionSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut hadamard_gap = f64::INFINITY;
    for _ in 0..50 {
        let (p, q, r) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let a = Mat2::new(p, q, q, r);
        let x = NodeIndex::new(rng.gen_range(1..16), rng.gen_range(1..16));
        let v = centred_quadratic(a, g, x);
        let st = dirs.at(g, x);
        let (lam, ms, msp) = oracle(&v, x, 3);
        worst = worst
            .max((lambda1_h(&v, &st).unwrap() - lam).abs())
            .max((m_s(&v, &st).unwrap() - ms).abs())
            .max((m_s_plus(&v, &st).unwrap() - msp).abs());
        // convex quadratic from a random factor
        let (b11, b12, b22) = (rng.gen_range(0.2..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.2..2.0));
        let spd = Mat2::new(b11 * b11, b11 * b12, b11 * b12, b12 * b12 + b22 * b22);
        let w = centred_quadratic(spd, g, x);
        hadamard_gap = hadamard_gap.min(m_s(&w, &st).unwrap() - spd.det());
    }
    // eigenbasis along each admissible pair at the centre
    let x = NodeIndex::new(8, 8);
    let st = dirs.at(g, x);
    let mut equality: f64 = 0.0;
    for ((p, q), _) in st.pairs() {
        let n = ((p * p + q * q) as f64).sqrt();
        let (e, f) = ([p as f64 / n, q as f64 / n], [-(q as f64) / n, p as f64 / n]);
        let (l1, l2) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
        let a = Mat2::new(
            l1 * e[0] * e[0] + l2 * f[0] * f[0],
            l1 * e[0] * e[1] + l2 * f[0] * f[1],
            l1 * e[0] * e[1] + l2 * f[0] * f[1],
            l1 * e[1] * e[1] + l2 * f[1] * f[1],
        );
        let v = centred_quadratic(a, g, x);
        equality = equality.max((m_s(&v, &st).unwrap() - a.det()).abs());
    }
    let pass = worst <= 1e-12 && hadamard_gap >= -1e-12 && equality <= 1e-12;
    let detail = format!(
        "max |scheme - oracle| = {worst:.1e}, min (m_s - det A) on convex = {hadamard_gap:.3e}, eigenbasis |m_s - det A| = {equality:.1e}"
    );
    verdict(9, "quadratic oracle equivalence", pass, &detail);
}

fn study_csv() -> (i32, String) {
    let args = ["ma-hybrid", "study", "--problem", "P2", "--refine", "1/8,1/16,1/32"].map(String::from);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = ma_hybrid_cli::run(args, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn criterion_10_determinism_and_interfaces() {
    let _g = serial();
    let (code_a, a) = study_csv();
    let (code_b, b) = study_csv();
    let identical = a == b && code_a == code_b && !a.is_empty();

    let mut masks = Vec::new();
    for p in catalog() {
        masks.push(p.auto_mask(grid(16)).unwrap());
    }
    masks.push(RegionMask::all_singular(grid(8)));
    masks.push(RegionMask::all_regular(grid(8)));
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for cells in [4, 9, 20] {
        let g = grid(cells);
        masks.push(RegionMask::normalize(&NodeSet::from_fn(g, |x| !g.is_boundary(x) && rng.gen_bool(0.2))));
    }
    let round_trips = masks.iter().all(|m| {
        let text = m.to_text();
        let back = RegionMask::from_text(&text).unwrap();
        back.to_text().as_bytes() == text.as_bytes() && back.labels() == m.labels() && back.grid() == m.grid()
    });
    let pass = identical && round_trips;
    let detail = format!(
        "study output identical={identical} ({} bytes, exit {code_a}); {} masks round-trip={round_trips}",
        a.len(),
        masks.len()
    );
    verdict(10, "determinism and mask round-trip", pass, &detail);
}
