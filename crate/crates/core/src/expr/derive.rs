use super::{BinOp, Expr, Func, Var};

fn is_zero(e: &Expr) -> bool {
    e.as_lit() == Some(0.0)
}

fn is_one(e: &Expr) -> bool {
    e.as_lit() == Some(1.0)
}

// Constructors with constant folding for 0 and 1 only; enough to keep
// derivative trees from growing with dead branches.
pub(super) fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_lit(), b.as_lit()) {
        (Some(x), Some(y)) => Expr::Lit(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::Bin(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

pub(super) fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_lit(), b.as_lit()) {
        (Some(x), Some(y)) => Expr::Lit(x - y),
        (_, Some(y)) if y == 0.0 => a,
        (Some(x), _) if x == 0.0 => neg(b),
        _ => Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

pub(super) fn mul(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) || is_zero(&b) {
        return Expr::Lit(0.0);
    }
    if is_one(&a) {
        return b;
    }
    if is_one(&b) {
        return a;
    }
    match (a.as_lit(), b.as_lit()) {
        (Some(x), Some(y)) => Expr::Lit(x * y),
        _ => Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    if is_zero(&a) {
        return Expr::Lit(0.0);
    }
    if is_one(&b) {
        return a;
    }
    Expr::Bin(BinOp::Div, Box::new(a), Box::new(b))
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Lit(v) => Expr::Lit(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, vec![a])
}

fn pow(a: Expr, b: Expr) -> Expr {
    if is_one(&b) {
        return a;
    }
    Expr::Bin(BinOp::Pow, Box::new(a), Box::new(b))
}

pub(super) fn derive(e: &Expr, v: Var) -> Expr {
    match e {
        Expr::Lit(_) => Expr::Lit(0.0),
        Expr::Var(w) => Expr::Lit(if *w == v { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(derive(a, v)),
        Expr::Bin(op, l, r) => {
            let (a, b) = (l.as_ref(), r.as_ref());
            let da = derive(a, v);
            let db = derive(b, v);
            match op {
                BinOp::Add => add(da, db),
                BinOp::Sub => sub(da, db),
                BinOp::Mul => add(mul(da, b.clone()), mul(a.clone(), db)),
                BinOp::Div => div(
                    sub(mul(da, b.clone()), mul(a.clone(), db)),
                    pow(b.clone(), Expr::Lit(2.0)),
                ),
                BinOp::Pow => {
                    if !b.uses(v) {
                        // d(a^c) = c a^(c-1) a'
                        mul(
                            mul(b.clone(), pow(a.clone(), sub(b.clone(), Expr::Lit(1.0)))),
                            da,
                        )
                    } else {
                        // d(a^b) = a^b (b' ln a + b a'/a)
                        mul(
                            e.clone(),
                            add(
                                mul(db, call(Func::Log, a.clone())),
                                div(mul(b.clone(), da), a.clone()),
                            ),
                        )
                    }
                }
            }
        }
        Expr::Call(f, args) => {
            let a = &args[0];
            let da = derive(a, v);
            match f {
                Func::Exp => mul(e.clone(), da),
                Func::Log => div(da, a.clone()),
                Func::Sin => mul(call(Func::Cos, a.clone()), da),
                Func::Cos => neg(mul(call(Func::Sin, a.clone()), da)),
                Func::Sqrt => div(da, mul(Expr::Lit(2.0), e.clone())),
                Func::Abs => mul(call(Func::Sign, a.clone()), da),
                Func::Sign => Expr::Lit(0.0),
                Func::Max | Func::Min => {
                    // max(a,b)' = (a'+b')/2 + sign(a-b)(a'-b')/2, min flips the sign term
                    let b = &args[1];
                    let db = derive(b, v);
                    if is_zero(&da) && is_zero(&db) {
                        return Expr::Lit(0.0);
                    }
                    let half = Expr::Lit(0.5);
                    let mean = mul(half.clone(), add(da.clone(), db.clone()));
                    let switch = mul(
                        mul(half, call(Func::Sign, sub(a.clone(), b.clone()))),
                        sub(da, db),
                    );
                    if *f == Func::Max {
                        add(mean, switch)
                    } else {
                        sub(mean, switch)
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::expr::{parse, Bindings, Var};

    fn d_at(src: &str, v: Var, b: Bindings) -> f64 {
        parse(src).unwrap().derive(v).eval(&b).unwrap()
    }

    #[test]
    fn trivial_derivatives() {
        assert_eq!(parse("x2").unwrap().derive(Var::X2), crate::expr::Expr::Lit(1.0));
        assert_eq!(parse("x1").unwrap().derive(Var::X2), crate::expr::Expr::Lit(0.0));
        let v = d_at("exp(x2)", Var::X2, Bindings::xy(0.0, 0.5));
        assert!((v - 1.6487212707001282).abs() < 1e-15);
    }

    #[test]
    fn quotient_and_power_rules() {
        let b = Bindings::xy(0.7, 1.3);
        assert!((d_at("x1/x2", Var::X2, b) - (-0.7 / (1.3 * 1.3))).abs() < 1e-15);
        assert!((d_at("x1^3", Var::X1, b) - 3.0 * 0.49).abs() < 1e-14);
        let exact = 0.7f64.powf(1.3) * 0.7f64.ln();
        assert!((d_at("x1^x2", Var::X2, b) - exact).abs() < 1e-14);
        assert!((d_at("sqrt(x1)", Var::X1, b) - 0.5 / 0.7f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn nonsmooth_derivatives() {
        assert_eq!(d_at("abs(z)", Var::Z, Bindings::xyz(0.0, 0.0, -2.0)), -1.0);
        assert_eq!(d_at("max(z, 0)", Var::Z, Bindings::xyz(0.0, 0.0, 2.0)), 1.0);
        assert_eq!(d_at("max(z, 0)", Var::Z, Bindings::xyz(0.0, 0.0, -2.0)), 0.0);
        assert_eq!(d_at("min(z, 0)", Var::Z, Bindings::xyz(0.0, 0.0, -2.0)), 1.0);
        // at the kink the average of the one-sided slopes
        assert_eq!(d_at("max(z, 0)", Var::Z, Bindings::xyz(0.0, 0.0, 0.0)), 0.5);
    }
}
