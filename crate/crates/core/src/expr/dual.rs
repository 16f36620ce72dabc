use super::{sign, BinOp, Bindings, Expr, ExprError, Func, Var};

/// A value together with its partial derivatives with respect to a fixed list
/// of variables (forward-mode automatic differentiation).
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub value: f64,
    pub partials: Vec<f64>,
}

impl DualValue {
    fn constant(value: f64, n: usize) -> Self {
        DualValue {
            value,
            partials: vec![0.0; n],
        }
    }

    fn map(self, value: f64, scale: f64) -> Self {
        DualValue {
            value,
            partials: self.partials.into_iter().map(|p| p * scale).collect(),
        }
    }

    fn combine(a: &Self, b: &Self, value: f64, da: f64, db: f64) -> Self {
        DualValue {
            value,
            partials: a
                .partials
                .iter()
                .zip(&b.partials)
                .map(|(x, y)| da * x + db * y)
                .collect(),
        }
    }
}

pub(super) fn eval_dual(e: &Expr, b: &Bindings, vars: &[Var]) -> Result<DualValue, ExprError> {
    let n = vars.len();
    let out = match e {
        Expr::Lit(v) => DualValue::constant(*v, n),
        Expr::Var(v) => {
            let value = b.get(*v).ok_or(ExprError::Unbound(v.name()))?;
            DualValue {
                value,
                partials: vars.iter().map(|w| if w == v { 1.0 } else { 0.0 }).collect(),
            }
        }
        Expr::Neg(a) => {
            let a = eval_dual(a, b, vars)?;
            let v = -a.value;
            a.map(v, -1.0)
        }
        Expr::Bin(op, l, r) => {
            let x = eval_dual(l, b, vars)?;
            let y = eval_dual(r, b, vars)?;
            match op {
                BinOp::Add => DualValue::combine(&x, &y, x.value + y.value, 1.0, 1.0),
                BinOp::Sub => DualValue::combine(&x, &y, x.value - y.value, 1.0, -1.0),
                BinOp::Mul => DualValue::combine(&x, &y, x.value * y.value, y.value, x.value),
                BinOp::Div => {
                    if y.value == 0.0 {
                        return Err(ExprError::Domain("division by zero".into()));
                    }
                    let q = x.value / y.value;
                    DualValue::combine(&x, &y, q, 1.0 / y.value, -q / y.value)
                }
                BinOp::Pow => {
                    let v = e.eval(b)?;
                    let da = if y.value == 0.0 {
                        0.0
                    } else {
                        y.value * x.value.powf(y.value - 1.0)
                    };
                    let db = if y.partials.iter().all(|p| *p == 0.0) {
                        0.0
                    } else {
                        v * x.value.ln()
                    };
                    DualValue::combine(&x, &y, v, da, db)
                }
            }
        }
        Expr::Call(f, args) => {
            let a = eval_dual(&args[0], b, vars)?;
            let v = e.eval(b)?;
            match f {
                Func::Exp => a.map(v, v),
                Func::Log => {
                    let s = 1.0 / a.value;
                    a.map(v, s)
                }
                Func::Sin => {
                    let s = a.value.cos();
                    a.map(v, s)
                }
                Func::Cos => {
                    let s = -a.value.sin();
                    a.map(v, s)
                }
                Func::Sqrt => a.map(v, 0.5 / v),
                Func::Abs => {
                    let s = sign(a.value);
                    a.map(v, s)
                }
                Func::Sign => a.map(v, 0.0),
                Func::Max | Func::Min => {
                    let c = eval_dual(&args[1], b, vars)?;
                    let s = sign(a.value - c.value) * if *f == Func::Max { 0.5 } else { -0.5 };
                    DualValue::combine(&a, &c, v, 0.5 + s, 0.5 - s)
                }
            }
        }
    };
    Ok(out)
}
