//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any of them fails.

use std::path::PathBuf;

use fbflow::analysis::{analyze, check_monotonicity, dry_region_chi_law, modulus_report, ResolutionProfile};
use fbflow::flow::{alpha_plus_prime, flow_state, integrate_orbit, inverse_chart, FlowOptions};
use fbflow::geometry::{Domain, Label};
use fbflow::io::{self, Command, Resolved, RunConfig, Solved};
use fbflow::problem::{FieldSources, ProblemData};
use fbflow::solver::{assemble, residuals, solve_linear, SolverParams};
use fbflow::transform::{build_grid, coefficients, NodeTag, TLowMode};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use Label::{Gamma2 as G2, Gamma3 as G3, Neutral as N};

struct Ledger(Vec<(usize, bool)>);

impl Ledger {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!("criterion {id:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.0.push((id, pass));
    }
}

fn problem(x1: (f64, f64), x2: (f64, f64), labels: [Label; 4], h1: &str, h2: &str, phi: &str) -> ProblemData {
    ProblemData::new(
        Domain::rectangle(x1, x2, labels).unwrap(),
        &FieldSources {
            h1,
            h2,
            a: [["1", "0"], ["0", "1"]],
            beta: "z",
            phi,
        },
    )
    .unwrap()
}

/// A drift field with a closed-form chart Jacobian `Y(t)` along the orbit from `(w, h)`.
struct TestField {
    name: &'static str,
    pd: ProblemData,
    h: f64,
    w_range: (f64, f64),
    exact: fn(f64, f64, f64) -> f64,
}

fn test_fields() -> Vec<TestField> {
    vec![
        TestField {
            name: "H=(0,1)",
            pd: problem((0.0, 1.0), (0.0, 1.0), [G2, G2, G3, G2], "0", "1", "0.2"),
            h: 0.5,
            w_range: (0.05, 0.95),
            exact: |_, _, _| -1.0,
        },
        TestField {
            name: "H=(0,x2)",
            pd: problem((0.0, 1.0), (0.25, 1.0), [G2, N, G3, N], "0", "x2", "0.2"),
            h: 0.5,
            w_range: (0.05, 0.95),
            exact: |_, h, t| -h * t.exp(),
        },
        TestField {
            name: "H=(x1,x2)",
            pd: problem((0.25, 2.0), (0.25, 2.0), [G2, G3, G3, G2], "x1", "x2", "0.2"),
            h: 0.5,
            w_range: (0.6, 1.5),
            exact: |_, h, t| -h * (2.0 * t).exp(),
        },
    ]
}

fn position(pd: &ProblemData, w: f64, h: f64, t: f64) -> [f64; 2] {
    let y = flow_state(pd, w, h, t, &FlowOptions::default()).unwrap();
    [y[0], y[1]]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn criterion_1(ledger: &mut Ledger) {
    let mut rng = StdRng::seed_from_u64(1);
    let opts = FlowOptions::default();
    let (mut closed, mut direct, mut fd) = (0.0_f64, 0.0_f64, 0.0_f64);
    for f in test_fields() {
        for _ in 0..200 {
            let w = rng.gen_range(f.w_range.0..f.w_range.1);
            let orbit = integrate_orbit(&f.pd, w, f.h, &opts).unwrap();
            let pad = 1e-3 * (orbit.alpha_plus - orbit.alpha_minus);
            let t = rng.gen_range(orbit.alpha_minus + pad..orbit.alpha_plus - pad);
            let want = (f.exact)(w, f.h, t);
            closed = closed.max(rel(orbit.jacobian_closed(&f.pd, t).unwrap(), want));
            direct = direct.max(rel(orbit.jacobian_direct(&f.pd, t).unwrap(), want));
            let d = 1e-5;
            let (tp, tm) = (position(&f.pd, w, f.h, t + d), position(&f.pd, w, f.h, t - d));
            let (wp, wm) = (position(&f.pd, w + d, f.h, t), position(&f.pd, w - d, f.h, t));
            let xt = [(tp[0] - tm[0]) / (2.0 * d), (tp[1] - tm[1]) / (2.0 * d)];
            let xw = [(wp[0] - wm[0]) / (2.0 * d), (wp[1] - wm[1]) / (2.0 * d)];
            fd = fd.max(rel(xt[0] * xw[1] - xt[1] * xw[0], want));
        }
    }
    ledger.record(
        1,
        closed <= 1e-8 && direct <= 1e-6 && fd <= 1e-6,
        format!("chart Jacobian, 600 points: closed {closed:.2e} (<=1e-8), direct {direct:.2e}, finite difference {fd:.2e} (<=1e-6)"),
    );
}

fn criterion_2(ledger: &mut Ledger) {
    let mut rng = StdRng::seed_from_u64(2);
    let opts = FlowOptions::default();
    let mut worst = 0.0_f64;
    for f in test_fields() {
        let diam = f.pd.domain.diameter();
        for _ in 0..500 {
            let w = rng.gen_range(f.w_range.0..f.w_range.1);
            let orbit = integrate_orbit(&f.pd, w, f.h, &opts).unwrap();
            let t = rng.gen_range(orbit.alpha_minus..orbit.alpha_plus);
            let p = position(&f.pd, w, f.h, t);
            let guess = (t + 0.05 * rng.gen_range(-1.0..1.0), w + 0.03 * rng.gen_range(-1.0..1.0));
            let (t2, w2) = inverse_chart(&f.pd, f.h, p, guess, &opts).unwrap();
            // chart distance in physical units
            let speed = f.pd.drift(p).unwrap();
            let err = (w2 - w).abs().max((t2 - t).abs() * speed[0].hypot(speed[1]));
            worst = worst.max(err / diam);
        }
    }
    ledger.record(2, worst <= 1e-9, format!("inverse chart round trip, 1500 points: {worst:.2e} x diameter (<=1e-9)"));
}

fn criterion_3(ledger: &mut Ledger) {
    let opts = FlowOptions::default();
    let mut fields = test_fields();
    fields.push(TestField {
        name: "H=(0,(1+x1/2)x2)",
        pd: problem((0.0, 1.0), (0.25, 2.0), [G2, N, G3, N], "0", "(1 + 0.5*x1)*x2", "1"),
        h: 0.25,
        w_range: (0.0, 1.0),
        exact: |_, _, _| f64::NAN,
    });
    let mut worst = 0.0_f64;
    let mut names = Vec::new();
    for f in &fields {
        names.push(f.name);
        for c in 0..100 {
            let w = f.w_range.0 + 0.005 + (f.w_range.1 - f.w_range.0 - 0.01) * c as f64 / 99.0;
            let orbit = integrate_orbit(&f.pd, w, f.h, &opts).unwrap();
            let got = alpha_plus_prime(&f.pd, &orbit).unwrap();
            let d = 1e-5;
            let ap = |w: f64| integrate_orbit(&f.pd, w, f.h, &opts).unwrap().alpha_plus;
            let fd = (ap(w + d) - ap(w - d)) / (2.0 * d);
            worst = worst.max((got - fd).abs());
        }
    }
    ledger.record(
        3,
        worst <= 1e-6,
        format!("exit-time derivative vs central difference, 100 columns on {}: {worst:.2e} absolute (<=1e-6)", names.join(", ")),
    );
}

/// Dense Q1 matrices on the uniform `n × n` grid of the unit square, built
/// directly in physical coordinates. Diffusion uses the 2×2 Gauss rule; the
/// transport term is nodal in `x1` and 2-point Gauss in `x2`.
struct DirectQ1 {
    k: DMatrix<f64>,
    l: DMatrix<f64>,
    m: Vec<f64>,
}

fn direct_q1(n: usize) -> DirectQ1 {
    let d = 1.0 / (n - 1) as f64;
    let idx = |i: usize, j: usize| i * n + j;
    let g = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let shape = |a: usize, s: f64| if a == 0 { 1.0 - s } else { s };
    let slope = |a: usize| if a == 0 { -1.0 } else { 1.0 };
    let mut k = DMatrix::zeros(n * n, n * n);
    let mut l = DMatrix::zeros(n * n, n * n);
    for ci in 0..n - 1 {
        for cj in 0..n - 1 {
            let corners = [(0, 0), (0, 1), (1, 0), (1, 1)];
            for &(pa, pb) in &corners {
                for &(qa, qb) in &corners {
                    let (p, q) = (idx(ci + pa, cj + pb), idx(ci + qa, cj + qb));
                    let grad = |a: usize, b: usize, x: f64, y: f64| {
                        [slope(a) * shape(b, y) / d, shape(a, x) * slope(b) / d]
                    };
                    for &x in &g {
                        for &y in &g {
                            let (gp, gq) = (grad(pa, pb, x, y), grad(qa, qb, x, y));
                            k[(p, q)] += 0.25 * (gp[0] * gq[0] + gp[1] * gq[1]) * d * d;
                        }
                    }
                    for x in [0.0, 1.0] {
                        for &y in &g {
                            let nq = shape(qa, x) * shape(qb, y);
                            l[(p, q)] += 0.25 * nq * grad(pa, pb, x, y)[1] * d * d;
                        }
                    }
                }
            }
        }
    }
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[idx(i, n - 1)] = if i == 0 || i == n - 1 { 0.5 * d } else { d };
    }
    DirectQ1 { k, l, m }
}

fn criterion_4(ledger: &mut Ledger) {
    let n = 9;
    let dq = direct_q1(n);
    let opts = FlowOptions::default();
    let mut worst_matrix = 0.0_f64;
    let mut worst_pair = 0.0_f64;
    let mut worst_wet = 0.0_f64;
    for phi in ["0.2", "1 + 0.5*x1"] {
        let pd = problem((0.0, 1.0), (0.0, 1.0), [G2, G2, G3, G2], "0", "1", phi);
        let grid = build_grid(&pd, 0.5, (0.0, 1.0), n, n, TLowMode::AlphaMinus, &opts).unwrap();
        let sys = assemble(&grid, &coefficients(&grid, &pd).unwrap()).unwrap();
        let d = 1.0 / (n - 1) as f64;
        for i in 0..n {
            for j in 0..n {
                let x = grid.nodes[grid.index(i, j)].x;
                worst_matrix = worst_matrix.max((x[0] - i as f64 * d).abs()).max((x[1] - j as f64 * d).abs());
            }
        }
        let free: Vec<usize> = (0..sys.len()).filter(|&k| sys.is_free(k)).collect();
        for &k in &free {
            let (i, j) = (k / n, k % n);
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                        continue;
                    }
                    let o = ((di + 1) * 3 + dj + 1) as usize;
                    let c = ni as usize * n + nj as usize;
                    worst_matrix = worst_matrix
                        .max((sys.stiffness[k][o] - dq.k[(k, c)]).abs())
                        .max((sys.load[k][o] - dq.l[(k, c)]).abs());
                }
            }
            worst_matrix = worst_matrix.max((sys.boundary_weight[k] - dq.m[k]).abs());
        }
        let datum: Vec<f64> = grid
            .nodes
            .iter()
            .map(|nd| if nd.tag == NodeTag::Neumann { pd.datum(nd.x).unwrap() } else { 0.0 })
            .collect();
        if phi == "0.2" {
            // the dry pair (0, 0.2) satisfies the direct equations and is what the solver returns
            let pair = fbflow::solver::outer_fixed_point(&pd, &grid, &sys, &SolverParams::default()).unwrap();
            let chi = DVector::from_element(n * n, 0.2);
            let r = &dq.l * &chi;
            for &k in &free {
                worst_pair = worst_pair.max((r[k] - dq.m[k] * datum[k]).abs());
            }
            for k in 0..sys.len() {
                worst_pair = worst_pair.max(pair.u[k].abs()).max((pair.chi[k] - 0.2).abs());
            }
        } else {
            // fully wet linear problem: (K + M) u = M φ - L·1 on the free nodes
            let nf = free.len();
            let mut a = DMatrix::zeros(nf, nf);
            let mut b = DVector::zeros(nf);
            let ones = DVector::from_element(n * n, 1.0);
            let l1 = &dq.l * &ones;
            for (r, &k) in free.iter().enumerate() {
                for (c, &m) in free.iter().enumerate() {
                    a[(r, c)] = dq.k[(k, m)];
                }
                a[(r, r)] += dq.m[k];
                b[r] = dq.m[k] * datum[k] - l1[k];
            }
            let u = a.lu().solve(&b).unwrap();
            let params = SolverParams {
                lcp_tol: 1e-14,
                sweep_factor: 200,
                ..SolverParams::default()
            };
            let chi = vec![1.0; n * n];
            let out = solve_linear(&sys, &grid, &pd, &chi, &vec![0.0; n * n], &params).unwrap();
            for (r, &k) in free.iter().enumerate() {
                worst_wet = worst_wet.max((out.u[k] - u[r]).abs());
            }
        }
    }
    ledger.record(
        4,
        worst_matrix <= 1e-10 && worst_pair <= 1e-10 && worst_wet <= 1e-10,
        format!(
            "unit square vs direct Q1: matrices {worst_matrix:.2e}, dry pair {worst_pair:.2e}, wet solve {worst_wet:.2e} (all <=1e-10)"
        ),
    );
}

const CONFIGS: [&str; 4] = ["gravity_square", "dam", "dry_law", "clamped"];

fn resolved(name: &str, n: Option<usize>) -> Resolved {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", &format!("{name}.json")].iter().collect();
    let mut cfg = RunConfig::load(&path).unwrap();
    if let Some(n) = n {
        cfg.grid.n_w = n;
        cfg.grid.n_s = n;
    }
    cfg.resolve().unwrap()
}

struct Run {
    name: &'static str,
    n: usize,
    resolved: Resolved,
    solved: Solved,
}

fn solve(name: &'static str, n: usize) -> Run {
    let resolved = resolved(name, Some(n));
    let solved = io::solve(&resolved).unwrap();
    Run { name, n, resolved, solved }
}

fn criterion_5(ledger: &mut Ledger, runs: &[Run]) {
    let mut ok = true;
    let mut worst = 0.0_f64;
    for r in runs {
        let p = &r.solved.pair;
        let u_max = p.u.iter().copied().fold(0.0, f64::max);
        let bounds = p.u.iter().all(|u| *u >= 0.0) && p.chi.iter().all(|c| (0.0..=1.0).contains(c));
        let support = p.u.iter().zip(&p.chi).all(|(u, c)| *u <= p.theta_tol || *c == 1.0);
        let defect = p.u.iter().zip(&p.chi).map(|(u, c)| (u * (1.0 - c)).abs()).fold(0.0, f64::max);
        let comp = if u_max > 0.0 { defect / u_max } else { defect };
        worst = worst.max(comp);
        ok &= bounds && support && p.converged && comp <= 1e-8;
    }
    ledger.record(5, ok, format!("bounds, support inclusion and max |u(1-chi)|/max u on {} runs: worst {worst:.2e} (<=1e-8)", runs.len()));
}

fn criterion_6(ledger: &mut Ledger, runs: &[Run]) {
    let worst = runs
        .iter()
        .map(|r| check_monotonicity(&r.solved.grid, &r.solved.pair.chi, 50).min_bump_integral)
        .fold(f64::INFINITY, f64::min);
    ledger.record(6, worst >= -1e-8, format!("smallest of 50 bump integrals of d(chi)/dt: {worst:.2e} (>=-1e-8)"));
}

fn criterion_7(ledger: &mut Ledger, runs: &[Run]) {
    let res: Vec<(usize, f64)> = runs
        .iter()
        .filter(|r| r.name == "dry_law")
        .map(|r| {
            let s = &r.solved;
            (r.n, dry_region_chi_law(&s.grid, &r.resolved.problem, &s.system, &s.pair).unwrap().max_residual)
        })
        .collect();
    let orders: Vec<f64> = res.windows(2).map(|w| (w[0].1 / w[1].1).log2()).collect();
    let exact = res.iter().all(|(_, r)| *r <= 1e-12);
    let ordered = !orders.is_empty() && orders.iter().all(|o| *o >= 1.7);
    let listed: Vec<String> = res.iter().map(|(n, r)| format!("{n}: {r:.2e}")).collect();
    ledger.record(
        7,
        exact || ordered,
        format!("dry-region law residual [{}], observed orders {orders:.2?} (residual <=1e-12 or order >=1.7)", listed.join(", ")),
    );
}

fn criterion_8(ledger: &mut Ledger, runs: &[Run]) {
    let mut profiles = Vec::new();
    let mut margins = Vec::new();
    let mut holds = true;
    for r in runs.iter().filter(|r| r.name == "dam") {
        let s = &r.solved;
        let a = analyze(&s.grid, &r.resolved.problem, &s.system, &s.pair, 50).unwrap();
        holds &= a.criterion_holds;
        margins.push(a.min_margin.unwrap_or(f64::NEG_INFINITY));
        profiles.push(ResolutionProfile {
            dw: s.grid.dw(),
            phi: s.pair.phi.clone(),
            holds: a.columns.iter().map(|c| c.verdict.as_ref().is_some_and(|v| v.holds)).collect(),
        });
    }
    let modulus = modulus_report(&profiles);
    // refinement: the free boundary moves by at most two coarse cells
    let dams: Vec<&Run> = runs.iter().filter(|r| r.name == "dam").collect();
    let mut drift_cells = 0.0_f64;
    for pair in dams.windows(2) {
        let (c, f) = (&pair[0].solved, &pair[1].solved);
        for i in 0..c.grid.n_w {
            let col = &c.grid.columns[i];
            let cell = (col.alpha_plus - col.t_low) / (c.grid.n_s - 1) as f64;
            match (c.pair.phi[i], f.pair.phi[2 * i]) {
                (Some(a), Some(b)) => drift_cells = drift_cells.max((a - b).abs() / cell),
                (None, None) => {}
                _ => drift_cells = f64::INFINITY,
            }
        }
    }
    let clamped = runs.iter().find(|r| r.name == "clamped").unwrap();
    let s = &clamped.solved;
    let ca = analyze(&s.grid, &clamped.resolved.problem, &s.system, &s.pair, 50).unwrap();
    let violation = !ca.criterion_holds && !s.pair.clamped_columns.is_empty();
    let min_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    ledger.record(
        8,
        holds && min_margin >= 0.5 && modulus.continuity_witness && drift_cells <= 2.0 && violation,
        format!(
            "dam margins {margins:.3?} (>=0.5), jump spread {:.2} (witness {}), refinement drift {drift_cells:.2} cells (<=2); clamped: {} clamped columns, criterion holds {}",
            modulus.spread,
            modulus.continuity_witness,
            s.pair.clamped_columns.len(),
            ca.criterion_holds
        ),
    );
}

fn criterion_9(ledger: &mut Ledger, runs: &[Run]) {
    let (mut eq, mut sign) = (0.0_f64, f64::INFINITY);
    for r in runs {
        let rep = residuals(&r.solved.pair, &r.solved.system, &r.solved.grid);
        eq = eq.max(rep.equation_max);
        sign = sign.min(rep.sign_min);
    }
    ledger.record(
        9,
        eq <= 1e-7 && sign >= -1e-8,
        format!("discrete residuals on {} runs: equation {eq:.2e} x scale (<=1e-7), sign {sign:.2e} (>=-1e-8)", runs.len()),
    );
}

fn criterion_10(ledger: &mut Ledger) {
    let mut ok = true;
    let mut files = 0;
    for name in CONFIGS {
        let r = resolved(name, None);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let first = io::run(r.clone(), Command::All, a.path()).unwrap();
        let second = io::run(r, Command::All, b.path()).unwrap();
        let hashes = |rep: &io::RunReport| rep.artifacts.iter().map(|x| (x.name.clone(), x.sha256.clone())).collect::<Vec<_>>();
        ok &= !first.artifacts.is_empty() && hashes(&first) == hashes(&second) && first.exit_code() == 0;
        files += first.artifacts.len();
    }
    ledger.record(10, ok, format!("two full runs per config give identical artifact hashes ({files} artifacts)"));
}

fn main() {
    let mut ledger = Ledger(Vec::new());
    criterion_1(&mut ledger);
    criterion_2(&mut ledger);
    criterion_3(&mut ledger);
    criterion_4(&mut ledger);
    let mut runs: Vec<Run> = CONFIGS.iter().map(|c| solve(c, 33)).collect();
    for n in [65, 129] {
        runs.push(solve("dry_law", n));
        runs.push(solve("dam", n));
    }
    criterion_5(&mut ledger, &runs);
    criterion_6(&mut ledger, &runs);
    runs.sort_by_key(|r| (r.name, r.n));
    criterion_7(&mut ledger, &runs);
    criterion_8(&mut ledger, &runs);
    criterion_9(&mut ledger, &runs);
    criterion_10(&mut ledger);
    let failed: Vec<usize> = ledger.0.iter().filter(|(_, p)| !p).map(|(i, _)| *i).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
