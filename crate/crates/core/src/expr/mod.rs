//! Arithmetic expressions over time, state and control with exact
//! forward-mode derivatives.

mod ast;
mod parse;
mod tape;

pub use ast::{Expr, ExprAst, Func};
pub use parse::parse_expression;
pub use tape::Wrt;

use nalgebra::{DMatrix, DVector};
use tape::Tape;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {position}: expected {}", expected.join(" or "))]
    Syntax {
        position: usize,
        expected: Vec<String>,
    },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("variable `{0}` is outside the declared dimensions")]
    IndexOutOfRange(String),
    #[error("domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: String },
    #[error("max2 is not allowed in a {0} field")]
    NonSmooth(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// What a field is used for. Constraint, dynamics and potential fields must
/// be `C^{1,1}`, so `max2` is rejected there; cost fields may use it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Constraint,
    Dynamics,
    Potential,
    Cost,
}

impl FieldKind {
    fn label(self) -> &'static str {
        match self {
            FieldKind::Constraint => "constraint",
            FieldKind::Dynamics => "dynamics",
            FieldKind::Potential => "potential",
            FieldKind::Cost => "cost",
        }
    }
}

/// Result of [`ScalarField::eval`]; `grad`/`hess` are present iff requested.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEval {
    pub value: f64,
    pub grad: Option<DVector<f64>>,
    pub hess: Option<DMatrix<f64>>,
}

/// Differentiable scalar function of `(t, x, u)`.
///
/// Immutable once built; evaluation allocates its own scratch space and may
/// run from many threads at once.
#[derive(Debug, Clone)]
pub struct ScalarField {
    ast: ExprAst,
    kind: FieldKind,
    tape: Tape,
}

impl ScalarField {
    pub fn parse(src: &str, n: usize, m: usize, kind: FieldKind) -> Result<Self, ExprError> {
        let ast = parse_expression(src, n, m)?;
        Self::from_ast(ast, kind)
    }

    pub fn from_ast(ast: ExprAst, kind: FieldKind) -> Result<Self, ExprError> {
        if kind != FieldKind::Cost && ast.root.contains_max2() {
            return Err(ExprError::NonSmooth(kind.label()));
        }
        let (ni, mi) = ast.root.max_indices();
        if ni > ast.n {
            return Err(ExprError::IndexOutOfRange(format!("x{ni}")));
        }
        if mi > ast.m {
            return Err(ExprError::IndexOutOfRange(format!("u{mi}")));
        }
        let tape = Tape::compile(&ast.root);
        Ok(ScalarField { ast, kind, tape })
    }

    pub fn constant(c: f64, n: usize, m: usize, kind: FieldKind) -> Self {
        Self::from_ast(
            ExprAst {
                root: Expr::Const(c),
                n,
                m,
            },
            kind,
        )
        .expect("constant field is always valid")
    }

    pub fn ast(&self) -> &ExprAst {
        &self.ast
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.ast.n
    }

    pub fn m(&self) -> usize {
        self.ast.m
    }

    pub fn source(&self) -> String {
        self.ast.root.to_string()
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<(), ExprError> {
        if x.len() != self.ast.n {
            return Err(ExprError::Dimension {
                expected: self.ast.n,
                got: x.len(),
            });
        }
        if u.len() != self.ast.m {
            return Err(ExprError::Dimension {
                expected: self.ast.m,
                got: u.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, t: f64, x: &[f64], u: &[f64]) -> Result<f64, ExprError> {
        self.check_dims(x, u)?;
        Ok(self.tape.eval(t, x, u, Wrt::State, 0)?.value)
    }

    /// Value with optional gradient and Hessian in `x`.
    pub fn eval(&self, t: f64, x: &[f64], u: &[f64], order: u8) -> Result<FieldEval, ExprError> {
        self.eval_wrt(t, x, u, Wrt::State, order)
    }

    /// Like [`eval`](Self::eval) but differentiating against `(x, u)`
    /// stacked, so the gradient has `n + m` entries.
    pub fn eval_wrt(
        &self,
        t: f64,
        x: &[f64],
        u: &[f64],
        wrt: Wrt,
        order: u8,
    ) -> Result<FieldEval, ExprError> {
        self.check_dims(x, u)?;
        let order = order.min(2);
        let jet = self.tape.eval(t, x, u, wrt, order)?;
        let d = jet.grad.len();
        Ok(FieldEval {
            value: jet.value,
            grad: (order >= 1).then(|| DVector::from_vec(jet.grad)),
            hess: (order >= 2).then(|| DMatrix::from_row_slice(d, d, &jet.hess)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_constraint_at_initial_point() {
        let psi1 = ScalarField::parse("x1^2 + x2^2 + x3", 3, 0, FieldKind::Constraint).unwrap();
        let e = psi1.eval(0.0, &[0.0, 1.0, -1.0], &[], 2).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.grad.unwrap().as_slice(), &[0.0, 2.0, 1.0]);
        let h = e.hess.unwrap();
        assert_eq!(h, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 0.0])));
    }

    #[test]
    fn constant_field() {
        let f = ScalarField::parse("5", 3, 0, FieldKind::Potential).unwrap();
        let e = f.eval(0.0, &[1.0, 2.0, 3.0], &[], 2).unwrap();
        assert_eq!(e.value, 5.0);
        assert_eq!(e.grad.unwrap(), DVector::zeros(3));
        assert_eq!(e.hess.unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn second_constraint_on_the_optimal_arc() {
        let psi2 =
            ScalarField::parse("x1^2 + (x2 - 2)^2 + x3", 3, 0, FieldKind::Constraint).unwrap();
        let t: f64 = 0.3;
        let x = [t, 1.0, -1.0 - t * t];
        let e = psi2.eval(t, &x, &[], 1).unwrap();
        assert!(e.value.abs() < 1e-15);
        let g = e.grad.unwrap();
        let want = [0.6, -2.0, 1.0];
        for k in 0..3 {
            assert!((g[k] - want[k]).abs() < 1e-15);
            // central differences as an independent check
            let mut xp = x;
            let mut xm = x;
            xp[k] += 1e-6;
            xm[k] -= 1e-6;
            let fd = (psi2.value(t, &xp, &[]).unwrap() - psi2.value(t, &xm, &[]).unwrap()) / 2e-6;
            assert!((fd - want[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn order_controls_presence() {
        let f = ScalarField::parse("x1*u1", 1, 1, FieldKind::Dynamics).unwrap();
        let e0 = f.eval(0.0, &[2.0], &[3.0], 0).unwrap();
        assert!(e0.grad.is_none() && e0.hess.is_none());
        let e1 = f.eval_wrt(0.0, &[2.0], &[3.0], Wrt::StateControl, 2).unwrap();
        assert_eq!(e1.grad.unwrap().as_slice(), &[3.0, 2.0]);
        assert_eq!(e1.hess.unwrap(), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn domain_errors_name_the_subexpression() {
        let f = ScalarField::parse("1 + ln(x1 - 1)", 1, 0, FieldKind::Dynamics).unwrap();
        match f.value(0.0, &[0.5], &[]) {
            Err(ExprError::Domain { subexpr, .. }) => assert_eq!(subexpr, "ln((x1 - 1.0))"),
            other => panic!("{other:?}"),
        }
        let g = ScalarField::parse("1 / x1", 1, 0, FieldKind::Dynamics).unwrap();
        assert!(matches!(g.value(0.0, &[0.0], &[]), Err(ExprError::Domain { .. })));
        let s = ScalarField::parse("sqrt(x1)", 1, 0, FieldKind::Dynamics).unwrap();
        assert!(matches!(s.value(0.0, &[-1.0], &[]), Err(ExprError::Domain { .. })));
        assert_eq!(s.value(0.0, &[0.0], &[]).unwrap(), 0.0);
        assert!(s.eval(0.0, &[0.0], &[], 1).is_err());
    }

    #[test]
    fn max2_only_in_costs() {
        assert!(matches!(
            ScalarField::parse("max2(x1, 0)", 1, 0, FieldKind::Constraint),
            Err(ExprError::NonSmooth(_))
        ));
        let g = ScalarField::parse("max2(x1, 0)", 1, 0, FieldKind::Cost).unwrap();
        assert_eq!(g.eval(0.0, &[-2.0], &[], 1).unwrap().grad.unwrap()[0], 0.0);
        assert_eq!(g.eval(0.0, &[2.0], &[], 1).unwrap().grad.unwrap()[0], 1.0);
    }

    #[test]
    fn evaluation_is_bit_identical() {
        let f = ScalarField::parse("sin(x1*x2) / (1 + exp(-x2)) + cos(t)^3", 2, 0, FieldKind::Dynamics)
            .unwrap();
        let a = f.eval(0.7, &[0.3, -1.2], &[], 2).unwrap();
        for _ in 0..10 {
            assert_eq!(f.eval(0.7, &[0.3, -1.2], &[], 2).unwrap(), a);
        }
    }
}
