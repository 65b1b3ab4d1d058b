use proptest::prelude::*;
use sweep_core::expr::{parse_expression, Expr, FieldKind, Func, ScalarField, Wrt};

const N: usize = 3;
const M: usize = 2;

fn literal() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-1000i32..1000).prop_map(|k| k as f64 / 8.0),
        -1e6f64..1e6,
        prop::num::f64::NORMAL,
    ]
}

fn neg(e: Expr) -> Expr {
    // a negated literal reparses as a signed literal
    match e {
        Expr::Const(c) => Expr::Const(-c),
        e => Expr::Neg(Box::new(e)),
    }
}

fn any_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        literal().prop_map(Expr::Const),
        Just(Expr::Time),
        (0..N).prop_map(Expr::State),
        (0..M).prop_map(Expr::Control),
    ];
    let funcs = prop_oneof![
        Just(Func::Exp),
        Just(Func::Ln),
        Just(Func::Sqrt),
        Just(Func::Sin),
        Just(Func::Cos)
    ];
    leaf.prop_recursive(6, 64, 2, move |inner| {
        prop_oneof![
            inner.clone().prop_map(neg),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Div(Box::new(a), Box::new(b))),
            (inner.clone(), -5i32..6).prop_map(|(a, k)| Expr::pow(a, k)),
            (funcs.clone(), inner.clone()).prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::Max2(Box::new(a), Box::new(b))),
        ]
    })
}

/// Smooth trees whose evaluation is total and moderately scaled.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-2.0f64..2.0).prop_map(Expr::Const),
        (0..N).prop_map(Expr::State),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(neg),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Div(
                Box::new(a),
                Box::new(Expr::add(Expr::Const(1.0), Expr::pow(b, 2)))
            )),
            (inner.clone(), 2i32..4).prop_map(|(a, k)| Expr::pow(a, k)),
            inner.clone().prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
            inner.clone().prop_map(|a| Expr::Call(Func::Cos, Box::new(a))),
            inner.clone().prop_map(|a| Expr::Call(
                Func::Exp,
                Box::new(Expr::Call(Func::Sin, Box::new(a)))
            )),
            inner.prop_map(|a| Expr::Call(
                Func::Ln,
                Box::new(Expr::add(Expr::Const(1.0), Expr::pow(a, 2)))
            )),
        ]
    })
}

fn field(e: Expr) -> ScalarField {
    let ast = parse_expression(&e.to_string(), N, M).unwrap();
    ScalarField::from_ast(ast, FieldKind::Dynamics).unwrap()
}

fn point() -> impl Strategy<Value = [f64; N]> {
    [-1.5f64..1.5, -1.5f64..1.5, -1.5f64..1.5]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn print_then_parse_is_identity(e in any_expr()) {
        let text = e.to_string();
        let back = parse_expression(&text, N, M).unwrap();
        prop_assert_eq!(&back.root, &e);
        prop_assert_eq!(back.root.to_string(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn gradient_matches_central_differences(e in smooth_expr(), x in point()) {
        let f = field(e);
        let v = f.value(0.0, &x, &[0.0, 0.0]).unwrap();
        prop_assume!(v.abs() < 1e3);
        let ad = f.eval(0.0, &x, &[0.0, 0.0], 1).unwrap().grad.unwrap();
        let h = 1e-5;
        let mut fd = [0.0; N];
        for k in 0..N {
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            fd[k] = (f.value(0.0, &xp, &[0.0, 0.0]).unwrap()
                - f.value(0.0, &xm, &[0.0, 0.0]).unwrap()) / (2.0 * h);
        }
        let fd_norm = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
        let gap = (0..N).map(|k| (ad[k] - fd[k]).powi(2)).sum::<f64>().sqrt();
        prop_assert!(gap <= 1e-6 * (1.0 + fd_norm), "gap {gap} fd {fd:?} ad {ad:?}");
    }

    #[test]
    fn hessian_matches_differenced_gradient(e in smooth_expr(), x in point()) {
        let f = field(e);
        let v = f.value(0.0, &x, &[0.0, 0.0]).unwrap();
        prop_assume!(v.abs() < 1e3);
        let hess = f.eval(0.0, &x, &[0.0, 0.0], 2).unwrap().hess.unwrap();
        let h = 1e-5;
        let mut fd = nalgebra::DMatrix::zeros(N, N);
        for k in 0..N {
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let gp = f.eval(0.0, &xp, &[0.0, 0.0], 1).unwrap().grad.unwrap();
            let gm = f.eval(0.0, &xm, &[0.0, 0.0], 1).unwrap().grad.unwrap();
            fd.set_column(k, &((gp - gm) / (2.0 * h)));
        }
        let gap = (&hess - &fd).norm();
        prop_assert!(gap <= 1e-4 * (1.0 + fd.norm()), "gap {gap}");
        prop_assert!((&hess - hess.transpose()).norm() <= 1e-12 * (1.0 + hess.norm()));
    }

    #[test]
    fn control_gradient_extends_state_gradient(e in smooth_expr(), x in point()) {
        let f = field(e);
        let gx = f.eval(0.3, &x, &[0.1, -0.2], 2).unwrap();
        let gxu = f.eval_wrt(0.3, &x, &[0.1, -0.2], Wrt::StateControl, 2).unwrap();
        prop_assert_eq!(gx.value, gxu.value);
        let (a, b) = (gx.grad.unwrap(), gxu.grad.unwrap());
        prop_assert_eq!(a.as_slice(), &b.as_slice()[..N]);
        prop_assert_eq!(gx.hess.unwrap(), gxu.hess.unwrap().view((0, 0), (N, N)).into_owned());
    }

    #[test]
    fn repeated_evaluation_is_bit_identical(e in any_expr(), x in point()) {
        let f = ScalarField::from_ast(
            parse_expression(&e.to_string(), N, M).unwrap(),
            FieldKind::Cost,
        ).unwrap();
        let first = f.eval(0.25, &x, &[0.5, -0.5], 2);
        for _ in 0..3 {
            let again = f.eval(0.25, &x, &[0.5, -0.5], 2);
            match (&first, &again) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
                    let ga: Vec<u64> = a.grad.as_ref().unwrap().iter().map(|v| v.to_bits()).collect();
                    let gb: Vec<u64> = b.grad.as_ref().unwrap().iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(ga, gb);
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false, "outcome changed between calls"),
            }
        }
    }
}
