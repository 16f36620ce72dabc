//! A small arithmetic expression language for field definitions.
//!
//! Expressions are written over the coordinates `x1`, `x2`, the boundary-law
//! argument `z`, and the arc parameter `s` used by parametric boundary arcs.
//! They are parsed once, then evaluated many times; [`derive`] produces exact
//! symbolic partial derivatives so that quantities like `div H` never carry
//! finite-difference noise.
//!
//! ```
//! use fbflow::expr::{parse, Bindings, Var};
//!
//! let e = parse("exp(x2)*x1 + 1").unwrap();
//! let v = e.eval(&Bindings::xy(2.0, 0.0)).unwrap();
//! assert_eq!(v, 3.0);
//!
//! let d = e.derive(Var::X2);
//! assert!((d.eval(&Bindings::xy(1.0, 0.5)).unwrap() - 0.5f64.exp()).abs() < 1e-15);
//! ```

mod derive;
mod dual;
mod parse;

use std::fmt;

pub use dual::DualValue;
pub use parse::parse;

/// Free variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X1,
    X2,
    Z,
    /// Arc parameter, only meaningful inside boundary curve definitions.
    S,
}

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::Z => "z",
            Var::S => "s",
        }
    }

    pub(crate) fn from_name(name: &str) -> Option<Var> {
        match name {
            "x1" => Some(Var::X1),
            "x2" => Some(Var::X2),
            "z" => Some(Var::Z),
            "s" => Some(Var::S),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Built-in functions. `Sign` is not differentiable anywhere it matters and
/// exists so that derivatives of `abs`, `max` and `min` stay closed in the
/// language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Sign,
    Max,
    Min,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Max => "max",
            Func::Min => "min",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Max | Func::Min => 2,
            _ => 1,
        }
    }

    /// Functions with a kink: allowed in the boundary law only.
    pub fn is_nonsmooth(self) -> bool {
        matches!(self, Func::Abs | Func::Sign | Func::Max | Func::Min)
    }

    pub(crate) fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            "max" => Func::Max,
            "min" => Func::Min,
            _ => return None,
        })
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("unbound variable `{0}`")]
    Unbound(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Variable values for one evaluation. Unset variables are unbound.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    pub x1: Option<f64>,
    pub x2: Option<f64>,
    pub z: Option<f64>,
    pub s: Option<f64>,
}

impl Bindings {
    pub fn xy(x1: f64, x2: f64) -> Self {
        Bindings {
            x1: Some(x1),
            x2: Some(x2),
            ..Default::default()
        }
    }

    pub fn xyz(x1: f64, x2: f64, z: f64) -> Self {
        Bindings {
            z: Some(z),
            ..Self::xy(x1, x2)
        }
    }

    pub fn param(s: f64) -> Self {
        Bindings {
            s: Some(s),
            ..Default::default()
        }
    }

    pub fn get(&self, v: Var) -> Option<f64> {
        match v {
            Var::X1 => self.x1,
            Var::X2 => self.x2,
            Var::Z => self.z,
            Var::S => self.s,
        }
    }
}

fn domain(msg: impl Into<String>) -> ExprError {
    ExprError::Domain(msg.into())
}

impl Expr {
    pub fn lit(v: f64) -> Expr {
        Expr::Lit(v)
    }

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    /// Evaluates in IEEE double precision. Division by zero, logarithms and
    /// square roots outside their domain, and non-finite results are errors.
    pub fn eval(&self, b: &Bindings) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Lit(v) => *v,
            Expr::Var(v) => b.get(*v).ok_or(ExprError::Unbound(v.name()))?,
            Expr::Neg(e) => -e.eval(b)?,
            Expr::Bin(op, l, r) => {
                let a = l.eval(b)?;
                let c = r.eval(b)?;
                match op {
                    BinOp::Add => a + c,
                    BinOp::Sub => a - c,
                    BinOp::Mul => a * c,
                    BinOp::Div => {
                        if c == 0.0 {
                            return Err(domain("division by zero"));
                        }
                        a / c
                    }
                    BinOp::Pow => pow(a, c)?,
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(b)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(domain(format!("log of non-positive value {a}")));
                        }
                        a.ln()
                    }
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(domain(format!("sqrt of negative value {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Sign => sign(a),
                    Func::Max => a.max(args[1].eval(b)?),
                    Func::Min => a.min(args[1].eval(b)?),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(domain("non-finite result"))
        }
    }

    /// Exact symbolic partial derivative.
    pub fn derive(&self, v: Var) -> Expr {
        derive::derive(self, v)
    }

    /// Forward-mode evaluation: value plus partials with respect to `vars`.
    pub fn eval_dual(&self, b: &Bindings, vars: &[Var]) -> Result<DualValue, ExprError> {
        dual::eval_dual(self, b, vars)
    }

    pub fn uses(&self, v: Var) -> bool {
        match self {
            Expr::Lit(_) => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(e) => e.uses(v),
            Expr::Bin(_, l, r) => l.uses(v) || r.uses(v),
            Expr::Call(_, args) => args.iter().any(|a| a.uses(v)),
        }
    }

    /// First non-smooth function used, if any.
    pub fn nonsmooth_function(&self) -> Option<Func> {
        match self {
            Expr::Lit(_) | Expr::Var(_) => None,
            Expr::Neg(e) => e.nonsmooth_function(),
            Expr::Bin(_, l, r) => l.nonsmooth_function().or_else(|| r.nonsmooth_function()),
            Expr::Call(f, args) => {
                if f.is_nonsmooth() {
                    Some(*f)
                } else {
                    args.iter().find_map(|a| a.nonsmooth_function())
                }
            }
        }
    }

    /// True when some `abs`/`max`/`min`/`sign` sits exactly on its kink at
    /// `b`; derivatives evaluated there are one-sided averages.
    pub fn at_kink(&self, b: &Bindings) -> bool {
        match self {
            Expr::Lit(_) | Expr::Var(_) => false,
            Expr::Neg(e) => e.at_kink(b),
            Expr::Bin(_, l, r) => l.at_kink(b) || r.at_kink(b),
            Expr::Call(f, args) => {
                let here = match f {
                    Func::Abs | Func::Sign => matches!(args[0].eval(b), Ok(a) if a == 0.0),
                    Func::Max | Func::Min => {
                        matches!((args[0].eval(b), args[1].eval(b)), (Ok(x), Ok(y)) if x == y)
                    }
                    _ => false,
                };
                here || args.iter().any(|a| a.at_kink(b))
            }
        }
    }

    pub fn as_lit(&self) -> Option<f64> {
        match self {
            Expr::Lit(v) => Some(*v),
            _ => None,
        }
    }
}

pub(crate) fn sign(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn pow(a: f64, c: f64) -> Result<f64, ExprError> {
    if a < 0.0 && c.fract() != 0.0 {
        return Err(domain(format!("non-integer power {c} of negative value {a}")));
    }
    if a == 0.0 && c < 0.0 {
        return Err(domain("negative power of zero"));
    }
    Ok(a.powf(c))
}

// Binary nodes are always parenthesized so printing never depends on
// precedence; this is what makes print/parse round-trips structural.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) if *v < 0.0 => write!(f, "(-{:?})", -v),
            Expr::Lit(v) => write!(f, "{v:?}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        let e = parse("exp(x2)").unwrap();
        assert_eq!(e.eval(&Bindings::xy(7.0, 0.0)).unwrap(), 1.0);
        let e = parse("x1*x2").unwrap();
        assert_eq!(e.eval(&Bindings::xy(0.3, 0.5)).unwrap(), 0.3 * 0.5);
    }

    #[test]
    fn domain_errors_are_reported() {
        let e = parse("1/x1").unwrap();
        assert!(matches!(e.eval(&Bindings::xy(0.0, 1.0)), Err(ExprError::Domain(_))));
        let e = parse("log(x1)").unwrap();
        assert!(matches!(e.eval(&Bindings::xy(-1.0, 1.0)), Err(ExprError::Domain(_))));
        let e = parse("sqrt(x2)").unwrap();
        assert!(e.eval(&Bindings::xy(0.0, -1.0)).is_err());
    }

    #[test]
    fn unbound_variable() {
        let e = parse("x1 + z").unwrap();
        assert_eq!(e.eval(&Bindings::xy(1.0, 2.0)), Err(ExprError::Unbound("z")));
        assert_eq!(e.eval(&Bindings::xyz(1.0, 2.0, 3.0)).unwrap(), 4.0);
    }

    #[test]
    fn kink_detection() {
        let e = parse("max(z, 0)").unwrap();
        assert!(e.at_kink(&Bindings::xyz(0.0, 0.0, 0.0)));
        assert!(!e.at_kink(&Bindings::xyz(0.0, 0.0, 0.5)));
        assert_eq!(e.nonsmooth_function(), Some(Func::Max));
        assert_eq!(parse("exp(x1)").unwrap().nonsmooth_function(), None);
    }

    #[test]
    fn display_is_reparseable() {
        let e = parse("-x1^2 * sin(x2) / (1 + exp(-x1))").unwrap();
        assert_eq!(parse(&e.to_string()).unwrap(), e);
    }
}
