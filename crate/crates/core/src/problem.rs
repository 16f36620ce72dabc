//! Input data of the free-boundary problem: domain, drift field `H`,
//! diffusion matrix `a`, boundary law `β` and boundary datum `φ`.

use crate::expr::{parse, Bindings, Expr, ExprError, Var};
use crate::geometry::{Domain, Point};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProblemError {
    #[error("field `{field}`: {source}")]
    Expr {
        field: &'static str,
        #[source]
        source: ExprError,
    },
    #[error("field `{field}` uses `{func}`, which is only allowed in beta")]
    Nonsmooth { field: &'static str, func: &'static str },
    #[error("field `{field}` may not depend on `{var}`")]
    ForbiddenVariable { field: &'static str, var: &'static str },
}

/// Source strings for the scalar fields.
#[derive(Debug, Clone)]
pub struct FieldSources<'a> {
    pub h1: &'a str,
    pub h2: &'a str,
    pub a: [[&'a str; 2]; 2],
    pub beta: &'a str,
    pub phi: &'a str,
}

#[derive(Debug, Clone)]
pub struct ProblemData {
    pub domain: Domain,
    pub h: [Expr; 2],
    pub a: [[Expr; 2]; 2],
    pub beta: Expr,
    pub phi: Expr,
    /// `dh[i][j] = ∂H_i/∂x_j`
    pub dh: [[Expr; 2]; 2],
    pub div_h: Expr,
    pub beta_dz: Expr,
    /// `da[i][j] = ∂a_ij/∂x_i`, used by the `div(a(x)(x-y))` bound.
    pub da: [[Expr; 2]; 2],
}

fn parse_field(field: &'static str, src: &str, allowed: &[Var], smooth: bool) -> Result<Expr, ProblemError> {
    let e = parse(src).map_err(|source| ProblemError::Expr { field, source })?;
    for v in [Var::X1, Var::X2, Var::Z, Var::S] {
        if !allowed.contains(&v) && e.uses(v) {
            return Err(ProblemError::ForbiddenVariable { field, var: v.name() });
        }
    }
    if smooth {
        if let Some(f) = e.nonsmooth_function() {
            return Err(ProblemError::Nonsmooth { field, func: f.name() });
        }
    }
    Ok(e)
}

impl ProblemData {
    pub fn new(domain: Domain, src: &FieldSources<'_>) -> Result<Self, ProblemError> {
        let xy = [Var::X1, Var::X2];
        let xyz = [Var::X1, Var::X2, Var::Z];
        let h = [
            parse_field("H1", src.h1, &xy, true)?,
            parse_field("H2", src.h2, &xy, true)?,
        ];
        let a = [
            [
                parse_field("a11", src.a[0][0], &xy, true)?,
                parse_field("a12", src.a[0][1], &xy, true)?,
            ],
            [
                parse_field("a21", src.a[1][0], &xy, true)?,
                parse_field("a22", src.a[1][1], &xy, true)?,
            ],
        ];
        let beta = parse_field("beta", src.beta, &xyz, false)?;
        let phi = parse_field("phi", src.phi, &xy, true)?;
        let dh = [
            [h[0].derive(Var::X1), h[0].derive(Var::X2)],
            [h[1].derive(Var::X1), h[1].derive(Var::X2)],
        ];
        let div_h = parse(&format!("({}) + ({})", dh[0][0], dh[1][1])).expect("printed expressions reparse");
        let beta_dz = beta.derive(Var::Z);
        let da = [
            [a[0][0].derive(Var::X1), a[0][1].derive(Var::X1)],
            [a[1][0].derive(Var::X2), a[1][1].derive(Var::X2)],
        ];
        Ok(ProblemData {
            domain,
            h,
            a,
            beta,
            phi,
            dh,
            div_h,
            beta_dz,
            da,
        })
    }

    fn ev(e: &Expr, p: Point) -> Result<f64, ExprError> {
        e.eval(&Bindings::xy(p[0], p[1]))
    }

    pub fn drift(&self, p: Point) -> Result<Point, ExprError> {
        Ok([Self::ev(&self.h[0], p)?, Self::ev(&self.h[1], p)?])
    }

    pub fn drift_jacobian(&self, p: Point) -> Result<[[f64; 2]; 2], ExprError> {
        Ok([
            [Self::ev(&self.dh[0][0], p)?, Self::ev(&self.dh[0][1], p)?],
            [Self::ev(&self.dh[1][0], p)?, Self::ev(&self.dh[1][1], p)?],
        ])
    }

    pub fn divergence(&self, p: Point) -> Result<f64, ExprError> {
        Self::ev(&self.div_h, p)
    }

    pub fn diffusion(&self, p: Point) -> Result<[[f64; 2]; 2], ExprError> {
        Ok([
            [Self::ev(&self.a[0][0], p)?, Self::ev(&self.a[0][1], p)?],
            [Self::ev(&self.a[1][0], p)?, Self::ev(&self.a[1][1], p)?],
        ])
    }

    pub fn boundary_law(&self, p: Point, z: f64) -> Result<f64, ExprError> {
        self.beta.eval(&Bindings::xyz(p[0], p[1], z))
    }

    pub fn boundary_law_dz(&self, p: Point, z: f64) -> Result<f64, ExprError> {
        self.beta_dz.eval(&Bindings::xyz(p[0], p[1], z))
    }

    pub fn datum(&self, p: Point) -> Result<f64, ExprError> {
        Self::ev(&self.phi, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Label;

    fn square() -> Domain {
        Domain::rectangle(
            (0.0, 1.0),
            (0.0, 1.0),
            [Label::Gamma2, Label::Gamma2, Label::Gamma3, Label::Gamma2],
        )
        .unwrap()
    }

    fn sources<'a>(h1: &'a str, h2: &'a str, beta: &'a str) -> FieldSources<'a> {
        FieldSources {
            h1,
            h2,
            a: [["1", "0"], ["0", "1"]],
            beta,
            phi: "0.2",
        }
    }

    #[test]
    fn divergence_is_symbolic() {
        let pd = ProblemData::new(square(), &sources("x1*x2", "x2^2", "z")).unwrap();
        assert_eq!(pd.divergence([0.5, 0.25]).unwrap(), 0.25 + 0.5);
    }

    #[test]
    fn kinks_only_in_beta() {
        assert!(ProblemData::new(square(), &sources("0", "1", "max(z, 0)")).is_ok());
        let err = ProblemData::new(square(), &sources("abs(x1)", "1", "z")).unwrap_err();
        assert_eq!(err, ProblemError::Nonsmooth { field: "H1", func: "abs" });
    }

    #[test]
    fn z_only_in_beta() {
        let err = ProblemData::new(square(), &sources("z", "1", "z")).unwrap_err();
        assert_eq!(err, ProblemError::ForbiddenVariable { field: "H1", var: "z" });
    }
}
