//! Flattened evaluation order with forward-mode first and second derivatives.
//!
//! Every node carries a truncated Taylor jet: value, gradient and full
//! Hessian with respect to the active variables. Jets are propagated with
//! the exact chain rule, so derivatives are exact for the expression.

use super::ast::{Expr, Func};
use super::ExprError;

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Time,
    State(usize),
    Control(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Pow(usize, i32),
    Call(Func, usize),
    Max2(usize, usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Tape {
    ops: Vec<Op>,
}

/// Which variables derivatives are taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    /// `x1..xn`
    State,
    /// `x1..xn` followed by `u1..um`
    StateControl,
}

pub(crate) struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl Tape {
    pub(crate) fn compile(root: &Expr) -> Tape {
        let mut ops = Vec::with_capacity(root.node_count());
        push(root, &mut ops);
        Tape { ops }
    }

    fn render(&self, idx: usize) -> String {
        match self.ops[idx] {
            Op::Const(c) => {
                if c.is_sign_negative() {
                    format!("(-{:?})", -c)
                } else {
                    format!("{:?}", c)
                }
            }
            Op::Time => "t".into(),
            Op::State(i) => format!("x{}", i + 1),
            Op::Control(j) => format!("u{}", j + 1),
            Op::Neg(a) => format!("(-{})", self.render(a)),
            Op::Add(a, b) => format!("({} + {})", self.render(a), self.render(b)),
            Op::Sub(a, b) => format!("({} - {})", self.render(a), self.render(b)),
            Op::Mul(a, b) => format!("({} * {})", self.render(a), self.render(b)),
            Op::Div(a, b) => format!("({} / {})", self.render(a), self.render(b)),
            Op::Pow(a, k) => format!("({}^{})", self.render(a), k),
            Op::Call(f, a) => format!("{}({})", f.name(), self.render(a)),
            Op::Max2(a, b) => format!("max2({}, {})", self.render(a), self.render(b)),
        }
    }

    fn domain(&self, idx: usize, reason: &str) -> ExprError {
        ExprError::Domain {
            subexpr: self.render(idx),
            reason: reason.to_string(),
        }
    }

    /// Evaluate the jet of the root. `order` is 0, 1 or 2.
    pub(crate) fn eval(
        &self,
        t: f64,
        x: &[f64],
        u: &[f64],
        wrt: Wrt,
        order: u8,
    ) -> Result<Jet, ExprError> {
        let n = x.len();
        let d = match wrt {
            Wrt::State => n,
            Wrt::StateControl => n + u.len(),
        };
        let len = self.ops.len();
        let gd = if order >= 1 { d } else { 0 };
        let hd = if order >= 2 { d * d } else { 0 };
        let mut val = vec![0.0; len];
        let mut grad = vec![0.0; len * gd];
        let mut hess = vec![0.0; len * hd];

        for i in 0..len {
            // children always precede parents in the tape
            let (done_g, cur_g) = grad.split_at_mut(i * gd);
            let cur_g = &mut cur_g[..gd];
            let (done_h, cur_h) = hess.split_at_mut(i * hd);
            let cur_h = &mut cur_h[..hd];
            let g = |k: usize| &done_g[k * gd..(k + 1) * gd];
            let h = |k: usize| &done_h[k * hd..(k + 1) * hd];

            let v = match self.ops[i] {
                Op::Const(c) => c,
                Op::Time => t,
                Op::State(k) => {
                    if gd > 0 {
                        cur_g[k] = 1.0;
                    }
                    x[k]
                }
                Op::Control(k) => {
                    if gd > 0 && wrt == Wrt::StateControl {
                        cur_g[n + k] = 1.0;
                    }
                    u[k]
                }
                Op::Neg(a) => {
                    neg_into(cur_g, g(a));
                    neg_into(cur_h, h(a));
                    -val[a]
                }
                Op::Add(a, b) => {
                    sum_into(cur_g, g(a), g(b), 1.0);
                    sum_into(cur_h, h(a), h(b), 1.0);
                    val[a] + val[b]
                }
                Op::Sub(a, b) => {
                    sum_into(cur_g, g(a), g(b), -1.0);
                    sum_into(cur_h, h(a), h(b), -1.0);
                    val[a] - val[b]
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val[a], val[b]);
                    for k in 0..gd {
                        cur_g[k] = g(a)[k] * vb + va * g(b)[k];
                    }
                    if hd > 0 {
                        let (ga, gb, ha, hb) = (g(a), g(b), h(a), h(b));
                        for r in 0..d {
                            for c in 0..d {
                                let k = r * d + c;
                                cur_h[k] = ha[k] * vb + va * hb[k] + ga[r] * gb[c] + gb[r] * ga[c];
                            }
                        }
                    }
                    va * vb
                }
                Op::Div(a, b) => {
                    let vb = val[b];
                    if vb == 0.0 {
                        return Err(self.domain(i, "division by zero"));
                    }
                    let va = val[a];
                    let q = va / vb;
                    if gd > 0 {
                        // q = a/b: dq = (da - q db)/b
                        let (ga, gb) = (g(a), g(b));
                        for k in 0..d {
                            cur_g[k] = (ga[k] - q * gb[k]) / vb;
                        }
                        if hd > 0 {
                            let (ha, hb) = (h(a), h(b));
                            let gq: Vec<f64> = cur_g.to_vec();
                            for r in 0..d {
                                for c in 0..d {
                                    let k = r * d + c;
                                    cur_h[k] = (ha[k] - q * hb[k] - gq[r] * gb[c] - gb[r] * gq[c]) / vb;
                                }
                            }
                        }
                    }
                    q
                }
                Op::Pow(a, k) => {
                    let va = val[a];
                    if k < 0 && va == 0.0 {
                        return Err(self.domain(i, "negative power of zero"));
                    }
                    let kf = k as f64;
                    let (f0, f1, f2) = match k {
                        0 => (1.0, 0.0, 0.0),
                        1 => (va, 1.0, 0.0),
                        2 => (va * va, 2.0 * va, 2.0),
                        _ => (
                            va.powi(k),
                            kf * va.powi(k - 1),
                            kf * (kf - 1.0) * va.powi(k - 2),
                        ),
                    };
                    chain(cur_g, cur_h, g(a), h(a), d, f1, f2);
                    f0
                }
                Op::Call(func, a) => {
                    let va = val[a];
                    let (f0, f1, f2) = match func {
                        Func::Exp => {
                            let e = va.exp();
                            (e, e, e)
                        }
                        Func::Ln => {
                            if va <= 0.0 {
                                return Err(self.domain(i, "logarithm of a non-positive value"));
                            }
                            (va.ln(), 1.0 / va, -1.0 / (va * va))
                        }
                        Func::Sqrt => {
                            if va < 0.0 {
                                return Err(self.domain(i, "square root of a negative value"));
                            }
                            let s = va.sqrt();
                            if order >= 1 && s == 0.0 {
                                return Err(self.domain(i, "square root is not differentiable at 0"));
                            }
                            if order >= 1 {
                                (s, 0.5 / s, -0.25 / (s * va))
                            } else {
                                (s, 0.0, 0.0)
                            }
                        }
                        Func::Sin => (va.sin(), va.cos(), -va.sin()),
                        Func::Cos => (va.cos(), -va.sin(), -va.cos()),
                    };
                    chain(cur_g, cur_h, g(a), h(a), d, f1, f2);
                    f0
                }
                Op::Max2(a, b) => {
                    // subgradient selection: first argument wins ties
                    let pick = if val[a] >= val[b] { a } else { b };
                    cur_g.copy_from_slice(g(pick));
                    cur_h.copy_from_slice(h(pick));
                    val[pick]
                }
            };
            val[i] = v;
        }

        let last = len - 1;
        Ok(Jet {
            value: val[last],
            grad: grad[last * gd..].to_vec(),
            hess: hess[last * hd..].to_vec(),
        })
    }
}

fn push(e: &Expr, ops: &mut Vec<Op>) -> usize {
    let op = match e {
        Expr::Const(c) => Op::Const(*c),
        Expr::Time => Op::Time,
        Expr::State(i) => Op::State(*i),
        Expr::Control(j) => Op::Control(*j),
        Expr::Neg(a) => Op::Neg(push(a, ops)),
        Expr::Add(a, b) => {
            let (ia, ib) = (push(a, ops), push(b, ops));
            Op::Add(ia, ib)
        }
        Expr::Sub(a, b) => {
            let (ia, ib) = (push(a, ops), push(b, ops));
            Op::Sub(ia, ib)
        }
        Expr::Mul(a, b) => {
            let (ia, ib) = (push(a, ops), push(b, ops));
            Op::Mul(ia, ib)
        }
        Expr::Div(a, b) => {
            let (ia, ib) = (push(a, ops), push(b, ops));
            Op::Div(ia, ib)
        }
        Expr::Pow(a, k) => Op::Pow(push(a, ops), *k),
        Expr::Call(f, a) => Op::Call(*f, push(a, ops)),
        Expr::Max2(a, b) => {
            let (ia, ib) = (push(a, ops), push(b, ops));
            Op::Max2(ia, ib)
        }
    };
    ops.push(op);
    ops.len() - 1
}

fn neg_into(dst: &mut [f64], a: &[f64]) {
    for (d, s) in dst.iter_mut().zip(a) {
        *d = -s;
    }
}

fn sum_into(dst: &mut [f64], a: &[f64], b: &[f64], sb: f64) {
    for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
        *d = x + sb * y;
    }
}

/// Jet of `phi(a)` given `phi'(a)` and `phi''(a)`.
fn chain(cur_g: &mut [f64], cur_h: &mut [f64], ga: &[f64], ha: &[f64], d: usize, f1: f64, f2: f64) {
    for (c, a) in cur_g.iter_mut().zip(ga) {
        *c = f1 * a;
    }
    if !cur_h.is_empty() {
        for r in 0..d {
            for c in 0..d {
                let k = r * d + c;
                cur_h[k] = f1 * ha[k] + f2 * ga[r] * ga[c];
            }
        }
    }
}
