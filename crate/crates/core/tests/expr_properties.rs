use fbflow::expr::{parse, Bindings, Var};
use proptest::prelude::*;

/// Smooth expressions in `x1`, `x2` that stay finite on `[-1, 1]²`.
fn smooth() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x1".to_string()),
        Just("x2".to_string()),
        (-3.0..3.0f64).prop_map(|v| format!("{v:.3}")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) + ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) - ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) * ({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) / (2 + sin({b}))")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("exp(0.2*sin({a}))")),
            inner.clone().prop_map(|a| format!("log(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.prop_map(|a| format!("-({a})")),
        ]
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn display_round_trips(src in smooth()) {
        let e = parse(&src).unwrap();
        let again = parse(&e.to_string()).unwrap();
        prop_assert_eq!(again, e);
    }

    #[test]
    fn symbolic_and_dual_derivatives_agree(src in smooth(), x1 in -1.0..1.0f64, x2 in -1.0..1.0f64) {
        let e = parse(&src).unwrap();
        let b = Bindings::xy(x1, x2);
        let dual = e.eval_dual(&b, &[Var::X1, Var::X2]).unwrap();
        prop_assert!(close(dual.value, e.eval(&b).unwrap(), 1e-12));
        for (i, v) in [Var::X1, Var::X2].into_iter().enumerate() {
            let sym = e.derive(v).eval(&b).unwrap();
            prop_assert!(close(sym, dual.partials[i], 1e-10), "{} vs {}", sym, dual.partials[i]);
        }
    }

    #[test]
    fn derivatives_match_central_differences(src in smooth(), x1 in -0.9..0.9f64, x2 in -0.9..0.9f64) {
        let e = parse(&src).unwrap();
        let f = |a: f64, b: f64| e.eval(&Bindings::xy(a, b)).unwrap();
        let d = 1e-5;
        let fd = [(f(x1 + d, x2) - f(x1 - d, x2)) / (2.0 * d), (f(x1, x2 + d) - f(x1, x2 - d)) / (2.0 * d)];
        let b = Bindings::xy(x1, x2);
        for (i, v) in [Var::X1, Var::X2].into_iter().enumerate() {
            let sym = e.derive(v).eval(&b).unwrap();
            prop_assert!(close(sym, fd[i], 1e-5), "d/d{}: {} vs {}", v.name(), sym, fd[i]);
        }
    }

    #[test]
    fn product_and_quotient_rules(a in smooth(), b in smooth(), x1 in -1.0..1.0f64, x2 in -1.0..1.0f64) {
        let (ea, eb) = (parse(&a).unwrap(), parse(&b).unwrap());
        let bind = Bindings::xy(x1, x2);
        let (va, vb) = (ea.eval(&bind).unwrap(), eb.eval(&bind).unwrap());
        let (da, db) = (ea.derive(Var::X1).eval(&bind).unwrap(), eb.derive(Var::X1).eval(&bind).unwrap());
        let prod = parse(&format!("({a}) * ({b})")).unwrap().derive(Var::X1).eval(&bind).unwrap();
        prop_assert!(close(prod, da * vb + va * db, 1e-10));
        let den = 2.0 + vb.sin();
        let dden = vb.cos() * db;
        let quot = parse(&format!("({a}) / (2 + sin({b}))")).unwrap().derive(Var::X1).eval(&bind).unwrap();
        prop_assert!(close(quot, (da * den - va * dden) / (den * den), 1e-10));
    }
}
