use rand::{rngs::StdRng, Rng, SeedableRng};

use super::*;
use crate::expr::parse;
use crate::geometry::{BoundaryArc, Domain};
use crate::problem::FieldSources;

fn problem(domain: Domain, h1: &str, h2: &str) -> ProblemData {
    ProblemData::new(
        domain,
        &FieldSources {
            h1,
            h2,
            a: [["1", "0"], ["0", "1"]],
            beta: "z",
            phi: "0.5",
        },
    )
    .unwrap()
}

use Label::{Gamma2 as G2, Gamma3 as G3, Neutral as N};

/// `H = (0, 1)` on the unit square.
fn f1() -> ProblemData {
    problem(Domain::rectangle((0.0, 1.0), (0.0, 1.0), [G2, G2, G3, G2]).unwrap(), "0", "1")
}

/// `H = (0, x2)` on `(0,1)×(0.25,1)`.
fn f2() -> ProblemData {
    problem(Domain::rectangle((0.0, 1.0), (0.25, 1.0), [G2, N, G3, N]).unwrap(), "0", "x2")
}

/// `H = (x1, x2)` on `(0.5,1.5)²`, Neumann part right and top.
fn f3() -> ProblemData {
    problem(Domain::rectangle((0.5, 1.5), (0.5, 1.5), [G2, G3, G3, G2]).unwrap(), "x1", "x2")
}

/// Curved top `x2 = 1 + 0.2 sin(π x1)`, sheared drift.
fn f4() -> ProblemData {
    let top = BoundaryArc::curve(
        parse("1 - s").unwrap(),
        parse("1 + 0.2*sin(3.141592653589793*(1 - s))").unwrap(),
        G3,
    )
    .unwrap();
    let d = Domain::new(vec![
        BoundaryArc::segment([0.0, 0.0], [1.0, 0.0], G2),
        BoundaryArc::segment([1.0, 0.0], [1.0, 1.0], N),
        top,
        BoundaryArc::segment([0.0, 1.0], [0.0, 0.0], N),
    ])
    .unwrap();
    problem(d, "0.3*x2", "1 + 0.5*x1 + 0.2*x2")
}

fn opts() -> FlowOptions {
    FlowOptions::default()
}

#[test]
fn straight_orbit() {
    let pd = f1();
    let o = integrate_orbit(&pd, 0.3, 0.5, &opts()).unwrap();
    assert!((o.alpha_plus - 0.5).abs() < 1e-12);
    assert!((o.alpha_minus + 0.5).abs() < 1e-12);
    assert_eq!(o.position(0.0), [0.3, 0.5]);
    assert_eq!(o.exit_plus.label, G3);
    assert_eq!(o.exit_minus.label, G2);
    assert_eq!(o.sensitivity(0.2), [1.0, 0.0]);
    assert_eq!(o.jacobian_closed(&pd, 0.2).unwrap(), -1.0);
    assert_eq!(o.jacobian_direct(&pd, 0.2).unwrap(), -1.0);
}

#[test]
fn exponential_orbit() {
    let pd = f2();
    let o = integrate_orbit(&pd, 0.3, 0.5, &opts()).unwrap();
    assert!((o.alpha_plus - 2f64.ln()).abs() < 1e-9);
    assert!((o.alpha_minus - 0.5f64.ln()).abs() < 1e-9);
    let e = o.exit_plus.point;
    assert!((e[0] - 0.3).abs() < 1e-12 && (e[1] - 1.0).abs() < 1e-12);
    for t in [-0.5, 0.0, 0.3, 0.69] {
        let y = o.jacobian_closed(&pd, t).unwrap();
        assert!((y + 0.5 * t.exp()).abs() < 1e-9, "t = {t}");
        let p = o.position(t);
        assert!((p[1] - 0.5 * t.exp()).abs() < 1e-9);
    }
}

#[test]
fn radial_orbit() {
    let pd = f3();
    let o = integrate_orbit(&pd, 0.7, 0.6, &opts()).unwrap();
    assert!((o.alpha_plus - (1.5f64 / 0.7).ln()).abs() < 1e-9);
    assert!((o.exit_plus.point[0] - 1.5).abs() < 1e-12);
    for t in [0.1, 0.4, 0.7] {
        let q = o.sensitivity(t);
        assert!((q[0] - t.exp()).abs() <= 1e-8 * t.exp() && q[1].abs() < 1e-10);
        let y = o.jacobian_closed(&pd, t).unwrap();
        assert!((y + 0.6 * (2.0 * t).exp()).abs() <= 1e-8 * y.abs());
    }
}

#[test]
fn start_on_boundary_has_zero_backward_time() {
    let pd = f1();
    let o = integrate_orbit(&pd, 0.4, 0.0, &opts()).unwrap();
    assert_eq!(o.alpha_minus, 0.0);
    assert!((o.alpha_plus - 1.0).abs() < 1e-12);
    assert!(integrate_orbit(&pd, 0.4, -0.1, &opts()).is_err());
}

#[test]
fn direct_and_closed_jacobians_agree() {
    let mut rng = StdRng::seed_from_u64(7);
    for (pd, h, wr) in [(f1(), 0.5, (0.05, 0.95)), (f2(), 0.5, (0.05, 0.95)), (f3(), 0.6, (0.55, 1.45)), (f4(), 0.4, (0.05, 0.95))] {
        for _ in 0..200 {
            let w = rng.gen_range(wr.0..wr.1);
            let o = integrate_orbit(&pd, w, h, &opts()).unwrap();
            let t = rng.gen_range(o.alpha_minus..o.alpha_plus);
            let yc = o.jacobian_closed(&pd, t).unwrap();
            let yd = o.jacobian_direct(&pd, t).unwrap();
            assert!((yc - yd).abs() <= 1e-8 * yc.abs(), "w={w} t={t}: {yc} vs {yd}");
            assert!(yc < 0.0);
        }
    }
}

#[test]
fn chart_jacobian_matches_finite_differences() {
    let mut rng = StdRng::seed_from_u64(11);
    let d = 1e-5;
    for (pd, h, wr) in [(f2(), 0.5, (0.1, 0.9)), (f3(), 0.6, (0.6, 1.4)), (f4(), 0.4, (0.1, 0.9))] {
        for _ in 0..10 {
            let w = rng.gen_range(wr.0..wr.1);
            let o = integrate_orbit(&pd, w, h, &opts()).unwrap();
            let t = rng.gen_range(0.5 * o.alpha_minus..0.5 * o.alpha_plus);
            let xp = flow_point(&pd, [w + d, h], t, &opts()).unwrap();
            let xm = flow_point(&pd, [w - d, h], t, &opts()).unwrap();
            let dxw = [(xp[0] - xm[0]) / (2.0 * d), (xp[1] - xm[1]) / (2.0 * d)];
            let (pa, pb) = (o.position(t + d), o.position(t - d));
            let dxt = [(pa[0] - pb[0]) / (2.0 * d), (pa[1] - pb[1]) / (2.0 * d)];
            let fd = dxt[0] * dxw[1] - dxt[1] * dxw[0];
            let y = o.jacobian_direct(&pd, t).unwrap();
            assert!((fd - y).abs() <= 1e-6 * y.abs(), "{fd} vs {y}");
        }
    }
}

fn alpha_plus(pd: &ProblemData, w: f64, h: f64) -> f64 {
    integrate_orbit(pd, w, h, &opts()).unwrap().alpha_plus
}

#[test]
fn alpha_plus_prime_matches_closed_forms() {
    let pd = f1();
    assert_eq!(alpha_plus_prime(&pd, &integrate_orbit(&pd, 0.3, 0.5, &opts()).unwrap()).unwrap(), 0.0);
    let pd = f2();
    let a = alpha_plus_prime(&pd, &integrate_orbit(&pd, 0.3, 0.5, &opts()).unwrap()).unwrap();
    assert!(a.abs() < 1e-12);
    // right edge of the radial field: α₊ = ln(1.5/w), vertical boundary
    let pd = f3();
    let a = alpha_plus_prime(&pd, &integrate_orbit(&pd, 0.9, 0.6, &opts()).unwrap()).unwrap();
    assert!((a + 1.0 / 0.9).abs() < 1e-8);
}

#[test]
fn alpha_plus_prime_matches_finite_differences() {
    let d = 1e-5;
    for (pd, h, ws) in [(f3(), 0.6, vec![0.7, 0.9, 1.3]), (f4(), 0.4, vec![0.15, 0.5, 0.8])] {
        for w in ws {
            let o = integrate_orbit(&pd, w, h, &opts()).unwrap();
            let a = alpha_plus_prime(&pd, &o).unwrap();
            let fd = (alpha_plus(&pd, w + d, h) - alpha_plus(&pd, w - d, h)) / (2.0 * d);
            assert!((a - fd).abs() < 1e-6, "w={w}: {a} vs {fd}");
        }
    }
}

#[test]
fn theta_prime_matches_finite_differences() {
    let d = 1e-5;
    let pd = f1();
    let o = integrate_orbit(&pd, 0.3, 0.5, &opts()).unwrap();
    assert!((theta_prime(&pd, &o).unwrap() - 1.0).abs() < 1e-12);
    let pd = f2();
    let o = integrate_orbit(&pd, 0.3, 0.5, &opts()).unwrap();
    assert!((theta_prime(&pd, &o).unwrap() - 1.0).abs() < 1e-9);
    let pd = f4();
    let theta = |w: f64| {
        let o = integrate_orbit(&pd, w, 0.4, &opts()).unwrap();
        o.position(o.alpha_plus)[0]
    };
    for w in [0.15, 0.5, 0.8] {
        let o = integrate_orbit(&pd, w, 0.4, &opts()).unwrap();
        let tp = theta_prime(&pd, &o).unwrap();
        let fd = (theta(w + d) - theta(w - d)) / (2.0 * d);
        assert!((tp - fd).abs() < 1e-6, "w={w}: {tp} vs {fd}");
    }
    // vertical exit has no graph over x1
    let pd = f3();
    let o = integrate_orbit(&pd, 0.9, 0.6, &opts()).unwrap();
    assert_eq!(theta_prime(&pd, &o), Err(FlowError::NotGraphOverX1 { w: 0.9 }));
}

#[test]
fn exit_off_gamma3_is_rejected() {
    let pd = problem(Domain::rectangle((0.0, 1.0), (0.0, 1.0), [G2, G3, N, G2]).unwrap(), "0", "1");
    let o = integrate_orbit(&pd, 0.3, 0.5, &opts()).unwrap();
    assert!(matches!(alpha_plus_prime(&pd, &o), Err(FlowError::NotOnGamma3 { .. })));
}

#[test]
fn semigroup() {
    let mut rng = StdRng::seed_from_u64(3);
    for (pd, h) in [(f3(), 0.6), (f4(), 0.4)] {
        let diam = pd.domain.diameter();
        for _ in 0..20 {
            let w = rng.gen_range(0.6..0.9);
            let o = integrate_orbit(&pd, w, h, &opts()).unwrap();
            let t = rng.gen_range(0.0..0.5 * o.alpha_plus);
            let s = rng.gen_range(0.0..(o.alpha_plus - t));
            let two = flow_point(&pd, o.position(t), s, &opts()).unwrap();
            let one = o.position(t + s);
            assert!(norm([two[0] - one[0], two[1] - one[1]]) <= 1e-9 * diam);
        }
    }
}

#[test]
fn jacobian_ode_and_monotonicity() {
    let mut rng = StdRng::seed_from_u64(5);
    let d = 1e-5;
    for (pd, h) in [(f2(), 0.5), (f3(), 0.6), (f4(), 0.4)] {
        for _ in 0..10 {
            let w = rng.gen_range(0.6..0.9);
            let o = integrate_orbit(&pd, w, h, &opts()).unwrap();
            let t = rng.gen_range(0.5 * o.alpha_minus..0.5 * o.alpha_plus);
            let y = o.jacobian_closed(&pd, t).unwrap();
            let dy = (o.jacobian_closed(&pd, t + d).unwrap() - o.jacobian_closed(&pd, t - d).unwrap()) / (2.0 * d);
            let rhs = y * pd.divergence(o.position(t)).unwrap();
            assert!((dy - rhs).abs() <= 1e-6 * y.abs().max(rhs.abs()));
            let nodes = o.nodes();
            for pair in nodes.windows(2) {
                assert!(pair[1].0 > pair[0].0);
                assert!(pair[1].1[1] > pair[0].1[1], "x2 increases along orbits");
                let (ya, yb) = (pair[0].1[4], pair[1].1[4]);
                assert!(yb >= ya - 1e-14, "|Y| nondecreasing");
            }
        }
    }
}

#[test]
fn chart_round_trip() {
    let mut rng = StdRng::seed_from_u64(9);
    for (pd, h) in [(f3(), 0.6), (f4(), 0.4)] {
        for _ in 0..20 {
            let w = rng.gen_range(0.6..0.9);
            let o = integrate_orbit(&pd, w, h, &opts()).unwrap();
            let t = rng.gen_range(o.alpha_minus..o.alpha_plus);
            let p = o.position(t);
            let guess = (t + 0.05, w - 0.03);
            let (ti, wi) = inverse_chart(&pd, h, p, guess, &opts()).unwrap();
            assert!((ti - t).abs() < 1e-9 && (wi - w).abs() < 1e-9, "({t}, {w}) -> ({ti}, {wi})");
        }
    }
}

#[test]
fn chart_is_deterministic_and_ordered() {
    let pd = f4();
    let a = FlowChart::build(&pd, 0.4, (0.1, 0.9), 9, &opts()).unwrap();
    let b = FlowChart::build(&pd, 0.4, (0.1, 0.9), 9, &opts()).unwrap();
    for (x, y) in a.orbits.iter().zip(&b.orbits) {
        assert_eq!(x.w, y.w);
        assert_eq!(x.alpha_plus, y.alpha_plus);
    }
    assert!(a.orbits.windows(2).all(|p| p[0].w < p[1].w));
}


#[test]
fn orbit_along_a_side_exits_through_the_top() {
    let pd = f1();
    let o = integrate_orbit(&pd, 0.0, 0.5, &opts()).unwrap();
    assert!((o.alpha_plus - 0.5).abs() < 1e-12 && (o.alpha_minus + 0.5).abs() < 1e-12);
    assert_eq!(o.exit_plus.label, G3);
    assert_eq!(o.exit_plus.flux, 1.0);
    assert_eq!(o.exit_minus.label, G2);
    let o = integrate_orbit(&pd, 1.0, 0.0, &opts()).unwrap();
    assert_eq!(o.alpha_minus, 0.0);
    assert!((o.alpha_plus - 1.0).abs() < 1e-12);
}
