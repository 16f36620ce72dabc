use fbflow::flow::{flow_state, integrate_orbit, inverse_chart, FlowOptions};
use fbflow::geometry::{Domain, Label};
use fbflow::problem::{FieldSources, ProblemData};
use proptest::prelude::*;
use Label::{Gamma2 as G2, Gamma3 as G3, Neutral as N};

fn tilted(c: [f64; 3]) -> ProblemData {
    let h1 = format!("{:.6}", c[0]);
    let h2 = format!("1 + {:.6}*x1 + {:.6}*sin(3*x2)", c[1], c[2]);
    ProblemData::new(
        Domain::rectangle((0.0, 1.0), (0.0, 1.0), [G2, N, G3, N]).unwrap(),
        &FieldSources {
            h1: &h1,
            h2: &h2,
            a: [["1", "0"], ["0", "1"]],
            beta: "z",
            phi: "0.5",
        },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jacobian_forms_agree(c in prop::array::uniform3(-0.3..0.3f64), w in 0.2..0.8f64, s in 0.0..1.0f64) {
        let pd = tilted(c);
        let orbit = integrate_orbit(&pd, w, 0.4, &FlowOptions::default()).unwrap();
        let t = orbit.alpha_minus + s * (orbit.alpha_plus - orbit.alpha_minus);
        let closed = orbit.jacobian_closed(&pd, t).unwrap();
        let direct = orbit.jacobian_direct(&pd, t).unwrap();
        prop_assert!(closed < 0.0);
        prop_assert!((closed - direct).abs() <= 1e-7 * closed.abs(), "{} vs {}", closed, direct);
    }

    #[test]
    fn chart_inverts(c in prop::array::uniform3(-0.3..0.3f64), w in 0.3..0.7f64, s in 0.05..0.95f64) {
        let pd = tilted(c);
        let opts = FlowOptions::default();
        let orbit = integrate_orbit(&pd, w, 0.4, &opts).unwrap();
        let t = orbit.alpha_minus + s * (orbit.alpha_plus - orbit.alpha_minus);
        let y = flow_state(&pd, w, 0.4, t, &opts).unwrap();
        let (t2, w2) = inverse_chart(&pd, 0.4, [y[0], y[1]], (t + 0.02, w - 0.02), &opts).unwrap();
        prop_assert!((t2 - t).abs() < 1e-9 && (w2 - w).abs() < 1e-9, "({}, {}) vs ({}, {})", t2, w2, t, w);
    }
}
