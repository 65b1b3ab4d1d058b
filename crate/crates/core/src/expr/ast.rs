use std::fmt;

/// Elementary functions callable with `name(arg)` syntax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    pub(crate) fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }
}

/// Expression tree over `t`, `x1..xn` and `u1..um`.
///
/// Variable indices are zero-based internally; `State(0)` prints as `x1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Time,
    State(usize),
    Control(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
    Max2(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn state(i: usize) -> Expr {
        Expr::State(i)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, k: i32) -> Expr {
        Expr::Pow(Box::new(a), k)
    }

    /// True if a `max2` node appears anywhere in the tree.
    pub fn contains_max2(&self) -> bool {
        match self {
            Expr::Max2(..) => true,
            Expr::Const(_) | Expr::Time | Expr::State(_) | Expr::Control(_) => false,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.contains_max2(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.contains_max2() || b.contains_max2()
            }
        }
    }

    /// Largest state and control index referenced, as counts (`x3` gives 3).
    pub fn max_indices(&self) -> (usize, usize) {
        match self {
            Expr::State(i) => (i + 1, 0),
            Expr::Control(j) => (0, j + 1),
            Expr::Const(_) | Expr::Time => (0, 0),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.max_indices(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Max2(a, b) => {
                let (na, ma) = a.max_indices();
                let (nb, mb) = b.max_indices();
                (na.max(nb), ma.max(mb))
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Time | Expr::State(_) | Expr::Control(_) => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => 1 + a.node_count(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Max2(a, b) => 1 + a.node_count() + b.node_count(),
        }
    }
}

/// Fully parenthesized form; parsing it back yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{:?}", c)
                }
            }
            Expr::Time => f.write_str("t"),
            Expr::State(i) => write!(f, "x{}", i + 1),
            Expr::Control(j) => write!(f, "u{}", j + 1),
            Expr::Neg(a) => write!(f, "(-{})", a),
            Expr::Add(a, b) => write!(f, "({} + {})", a, b),
            Expr::Sub(a, b) => write!(f, "({} - {})", a, b),
            Expr::Mul(a, b) => write!(f, "({} * {})", a, b),
            Expr::Div(a, b) => write!(f, "({} / {})", a, b),
            Expr::Pow(a, k) => write!(f, "({}^{})", a, k),
            Expr::Call(func, a) => write!(f, "{}({})", func.name(), a),
            Expr::Max2(a, b) => write!(f, "max2({}, {})", a, b),
        }
    }
}

/// A parsed expression together with the dimensions it was checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprAst {
    pub root: Expr,
    pub n: usize,
    pub m: usize,
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}
