use super::ast::{Expr, ExprAst, Func};
use super::ExprError;

/// Parse `src` into an expression over `t`, `x1..xn`, `u1..um`.
///
/// Precedence from tightest: `^` (constant integer exponent, left-assoc),
/// unary `-`, `* /`, `+ -`. Error positions are byte offsets into `src`.
pub fn parse_expression(src: &str, n: usize, m: usize) -> Result<ExprAst, ExprError> {
    let mut p = Parser {
        src,
        bytes: src.as_bytes(),
        pos: 0,
        n,
        m,
    };
    p.skip_ws();
    if p.at_end() {
        return Err(p.syntax(&["expression"]));
    }
    let root = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.syntax(&["operator", "end of input"]));
    }
    Ok(ExprAst { root, n, m })
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    n: usize,
    m: usize,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn syntax(&self, expected: &[&str]) -> ExprError {
        ExprError::Syntax {
            position: self.pos,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8, what: &str) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&[what]))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            // fold signed literals so printing and reparsing is lossless
            return Ok(match self.unary()? {
                Expr::Const(c) => Expr::Const(-c),
                inner => Expr::Neg(Box::new(inner)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let mut base = self.primary()?;
        while self.eat(b'^') {
            let k = self.int_exponent()?;
            base = Expr::Pow(Box::new(base), k);
        }
        Ok(base)
    }

    fn int_exponent(&mut self) -> Result<i32, ExprError> {
        let parens = self.eat(b'(');
        let neg = self.eat(b'-');
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if start == self.pos || matches!(self.peek(), Some(b'.' | b'e' | b'E')) {
            self.pos = start;
            return Err(self.syntax(&["integer exponent"]));
        }
        let mut k: i32 = self.src[start..self.pos]
            .parse()
            .map_err(|_| ExprError::Syntax {
                position: start,
                expected: vec!["integer exponent".into()],
            })?;
        if neg {
            k = -k;
        }
        if parens {
            self.expect(b')', "')'")?;
        }
        Ok(k)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')', "')'")?;
                Ok(e)
            }
            Some(b'0'..=b'9' | b'.') => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            _ => Err(self.syntax(&["number", "identifier", "'('"])),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while matches!(p.peek(), Some(b'0'..=b'9')) {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut count = digits(self);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            count += digits(self);
        }
        if count == 0 {
            self.pos = start;
            return Err(self.syntax(&["number"]));
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            position: start,
            expected: vec!["number".into()],
        })?;
        Ok(Expr::Const(value))
    }

    fn ident(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if name == "t" {
            return Ok(Expr::Time);
        }
        if let Some(func) = Func::from_name(name) {
            self.expect(b'(', "'('")?;
            let arg = self.expr()?;
            self.expect(b')', "')'")?;
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        if name == "max2" {
            self.expect(b'(', "'('")?;
            let a = self.expr()?;
            self.expect(b',', "','")?;
            let b = self.expr()?;
            self.expect(b')', "')'")?;
            return Ok(Expr::Max2(Box::new(a), Box::new(b)));
        }
        let (prefix, rest) = name.split_at(1);
        if (prefix == "x" || prefix == "u")
            && !rest.is_empty()
            && rest.bytes().all(|b| b.is_ascii_digit())
        {
            let idx: usize = rest
                .parse()
                .map_err(|_| ExprError::UnknownIdentifier(name.to_string()))?;
            let bound = if prefix == "x" { self.n } else { self.m };
            if idx == 0 || idx > bound {
                return Err(ExprError::IndexOutOfRange(name.to_string()));
            }
            return Ok(if prefix == "x" {
                Expr::State(idx - 1)
            } else {
                Expr::Control(idx - 1)
            });
        }
        Err(ExprError::UnknownIdentifier(name.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_constraint_parses() {
        let ast = parse_expression("x1^2 + x2^2 + x3", 3, 1).unwrap();
        let expected = Expr::add(
            Expr::add(Expr::pow(Expr::state(0), 2), Expr::pow(Expr::state(1), 2)),
            Expr::state(2),
        );
        assert_eq!(ast.root, expected);
    }

    #[test]
    fn zero_constant() {
        assert_eq!(parse_expression("0", 3, 0).unwrap().root, Expr::Const(0.0));
    }

    #[test]
    fn dangling_operator_reports_end_position() {
        match parse_expression("x1 +", 3, 1) {
            Err(ExprError::Syntax { position, .. }) => assert_eq!(position, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_out_of_range() {
        assert!(matches!(
            parse_expression("y1", 2, 0),
            Err(ExprError::UnknownIdentifier(s)) if s == "y1"
        ));
        assert!(matches!(
            parse_expression("x3", 2, 0),
            Err(ExprError::IndexOutOfRange(s)) if s == "x3"
        ));
        assert!(matches!(
            parse_expression("u1", 2, 0),
            Err(ExprError::IndexOutOfRange(_))
        ));
        assert!(matches!(
            parse_expression("x0", 2, 0),
            Err(ExprError::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn precedence() {
        // unary minus binds looser than ^
        let a = parse_expression("-x1^2", 1, 0).unwrap().root;
        assert_eq!(a, Expr::Neg(Box::new(Expr::pow(Expr::state(0), 2))));
        let b = parse_expression("1 - 2 * x1 / 3", 1, 0).unwrap().root;
        assert_eq!(b.to_string(), "(1.0 - ((2.0 * x1) / 3.0))");
        let c = parse_expression("x1^-2", 1, 0).unwrap().root;
        assert_eq!(c, Expr::pow(Expr::state(0), -2));
    }

    #[test]
    fn non_integer_exponent_rejected() {
        assert!(matches!(
            parse_expression("x1^2.5", 1, 0),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            parse_expression("x1^x1", 1, 0),
            Err(ExprError::Syntax { .. })
        ));
    }

    #[test]
    fn calls_and_scientific_literals() {
        let e = parse_expression("max2(exp(x1), 1.5e-3) + sqrt(t)", 1, 0).unwrap();
        assert_eq!(e.root.to_string(), "(max2(exp(x1), 0.0015) + sqrt(t))");
        assert!(parse_expression("exp x1", 1, 0).is_err());
        assert!(parse_expression("", 1, 0).is_err());
        assert!(parse_expression("(x1", 1, 0).is_err());
    }
}
