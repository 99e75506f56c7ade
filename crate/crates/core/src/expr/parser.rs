use super::{BinOp, Expr, ExprError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(i64),
    Str(String),
    Word(String),
    Var(String),
    True,
    False,
    And,
    Or,
    Not,
    In,
    Op(BinOp),
    Minus,
    LParen,
    RParen,
}

fn syntax(offset: usize, message: impl Into<String>) -> ExprError {
    ExprError::Syntax {
        offset,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let peek = chars.get(i + 1).map(|&(_, c)| c);
        let (tok, width) = match c {
            '(' => (Tok::LParen, 1),
            ')' => (Tok::RParen, 1),
            '+' => (Tok::Op(BinOp::Add), 1),
            '-' => (Tok::Minus, 1),
            '*' => (Tok::Op(BinOp::Mul), 1),
            '=' if peek == Some('=') => (Tok::Op(BinOp::Eq), 2),
            '!' if peek == Some('=') => (Tok::Op(BinOp::Ne), 2),
            '<' if peek == Some('=') => (Tok::Op(BinOp::Le), 2),
            '>' if peek == Some('=') => (Tok::Op(BinOp::Ge), 2),
            '<' => (Tok::Op(BinOp::Lt), 1),
            '>' => (Tok::Op(BinOp::Gt), 1),
            '\'' | '"' => {
                let mut j = i + 1;
                let mut s = String::new();
                while j < chars.len() && chars[j].1 != c {
                    s.push(chars[j].1);
                    j += 1;
                }
                if j == chars.len() {
                    return Err(syntax(pos, "unterminated string"));
                }
                (Tok::Str(s), j + 1 - i)
            }
            '{' => {
                let mut j = i + 1;
                let mut name = String::new();
                while j < chars.len() && chars[j].1 != '}' {
                    name.push(chars[j].1);
                    j += 1;
                }
                if j == chars.len() || !crate::script::is_var_name(&name) {
                    return Err(syntax(pos, "bad placeholder"));
                }
                (Tok::Var(name), j + 1 - i)
            }
            c if c.is_alphanumeric() || c == '_' => {
                let mut j = i;
                let mut word = String::new();
                while j < chars.len() && (chars[j].1.is_alphanumeric() || chars[j].1 == '_') {
                    word.push(chars[j].1);
                    j += 1;
                }
                let tok = match word.as_str() {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    "in" => Tok::In,
                    "True" => Tok::True,
                    "False" => Tok::False,
                    w if w.bytes().all(|b| b.is_ascii_digit()) => Tok::Number(
                        w.parse()
                            .map_err(|_| syntax(pos, "integer literal out of range"))?,
                    ),
                    _ => Tok::Word(word),
                };
                (tok, j - i)
            }
            other => return Err(syntax(pos, format!("unexpected character {other:?}"))),
        };
        toks.push((pos, tok));
        i += width;
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let tok = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        tok
    }

    fn or_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.and_expr()?;
        while self.peek() == Some(&Tok::Or) {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::binary(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.not_expr()?;
        while self.peek() == Some(&Tok::And) {
            self.bump();
            let rhs = self.not_expr()?;
            lhs = Expr::binary(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(&Tok::Not) {
            self.bump();
            return Ok(Expr::Not(Box::new(self.not_expr()?)));
        }
        self.cmp_expr()
    }

    fn cmp_op(&self) -> Option<BinOp> {
        match self.peek() {
            Some(Tok::Op(op)) if op.is_comparison() => Some(*op),
            _ => None,
        }
    }

    fn cmp_expr(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.in_expr()?;
        let Some(op) = self.cmp_op() else {
            return Ok(lhs);
        };
        self.bump();
        let rhs = self.in_expr()?;
        if self.cmp_op().is_some() {
            return Err(syntax(
                self.offset(),
                "chained comparisons are not supported",
            ));
        }
        Ok(Expr::binary(op, lhs, rhs))
    }

    fn in_expr(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.add_expr()?;
        if self.peek() != Some(&Tok::In) {
            return Ok(lhs);
        }
        self.bump();
        let rhs = self.add_expr()?;
        if self.peek() == Some(&Tok::In) {
            return Err(syntax(self.offset(), "chained 'in' is not supported"));
        }
        Ok(Expr::binary(BinOp::In, lhs, rhs))
    }

    fn add_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(BinOp::Add)) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::Op(BinOp::Mul)) {
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(BinOp::Mul, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        match self.bump() {
            Some(Tok::Number(n)) => Ok(Expr::Number(n)),
            Some(Tok::Str(s)) => Ok(Expr::Text(s)),
            Some(Tok::Var(name)) => Ok(Expr::Var(name)),
            Some(Tok::True) => Ok(Expr::Bool(true)),
            Some(Tok::False) => Ok(Expr::Bool(false)),
            Some(Tok::Word(first)) => {
                // adjacent bare words form one multi-word text atom ("top left")
                let mut text = first;
                while let Some(Tok::Word(next)) = self.peek() {
                    text.push(' ');
                    text.push_str(next);
                    self.pos += 1;
                }
                Ok(Expr::Text(text))
            }
            Some(Tok::LParen) => {
                let inner = self.or_expr()?;
                match self.bump() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(syntax(offset, "unbalanced '('")),
                }
            }
            Some(tok) => Err(syntax(offset, format!("unexpected token {tok:?}"))),
            None => Err(syntax(offset, "unexpected end of expression")),
        }
    }
}

/// Parses an EVAL expression. Precedence, loosest first: `or`, `and`, `not`,
/// comparisons, `in`, `+ -`, `*`, unary minus.
pub fn parse_expr(text: &str) -> Result<Expr, ExprError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(syntax(0, "empty expression"));
    }
    let mut parser = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let expr = parser.or_expr()?;
    if parser.pos < parser.toks.len() {
        return Err(syntax(parser.offset(), "unexpected trailing tokens"));
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(v: i64) -> Expr {
        Expr::Number(v)
    }

    #[test]
    fn arithmetic_comparison() {
        assert_eq!(
            parse_expr("2 + 3 < 4").unwrap(),
            Expr::binary(BinOp::Lt, Expr::binary(BinOp::Add, n(2), n(3)), n(4))
        );
    }

    #[test]
    fn bare_word_equality() {
        assert_eq!(
            parse_expr("yes == True").unwrap(),
            Expr::binary(BinOp::Eq, Expr::text("yes"), Expr::Bool(true))
        );
    }

    #[test]
    fn precedence() {
        assert_eq!(
            parse_expr("not a == b and c or d").unwrap(),
            Expr::binary(
                BinOp::Or,
                Expr::binary(
                    BinOp::And,
                    Expr::Not(Box::new(Expr::binary(
                        BinOp::Eq,
                        Expr::text("a"),
                        Expr::text("b")
                    ))),
                    Expr::text("c"),
                ),
                Expr::text("d"),
            )
        );
        assert_eq!(
            parse_expr("1 + 2 * 3 - -1").unwrap(),
            Expr::binary(
                BinOp::Sub,
                Expr::binary(BinOp::Add, n(1), Expr::binary(BinOp::Mul, n(2), n(3))),
                Expr::Neg(Box::new(n(1))),
            )
        );
        assert_eq!(
            parse_expr("'a' in 'b' == True").unwrap(),
            Expr::binary(
                BinOp::Eq,
                Expr::binary(BinOp::In, Expr::text("a"), Expr::text("b")),
                Expr::Bool(true)
            )
        );
    }

    #[test]
    fn multiword_atoms_and_placeholders() {
        assert_eq!(
            parse_expr("top left == {ANSWER1}").unwrap(),
            Expr::binary(
                BinOp::Eq,
                Expr::text("top left"),
                Expr::Var("ANSWER1".into())
            )
        );
    }

    #[test]
    fn syntax_errors() {
        for bad in [
            "== True",
            "== yes",
            "1 < 2 < 3",
            "(1 + 2",
            "1 +",
            "",
            "'open",
            "a in b in c",
            "1 / 2",
            "{lower} == 1",
            "1 2",
        ] {
            assert!(
                matches!(parse_expr(bad), Err(ExprError::Syntax { .. })),
                "{bad:?} should not parse"
            );
        }
    }
}
