use super::{coerce, BinOp, CoercedValue, Expr, ExprError};

fn mismatch(op: &str, lhs: &CoercedValue, rhs: Option<&CoercedValue>) -> ExprError {
    let msg = match rhs {
        Some(rhs) => format!("{op} applied to {lhs:?} and {rhs:?}"),
        None => format!("{op} applied to {lhs:?}"),
    };
    ExprError::TypeMismatch(msg)
}

/// Evaluates a fully substituted expression; placeholders are unbound.
pub fn eval_expr(expr: &Expr) -> Result<CoercedValue, ExprError> {
    eval_expr_with(expr, &|_| None)
}

/// Evaluates with `{NAME}` placeholders resolved through `lookup`; the looked
/// up text is coerced like any other string atom.
pub fn eval_expr_with(
    expr: &Expr,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> Result<CoercedValue, ExprError> {
    match expr {
        Expr::Number(n) => Ok(CoercedValue::Number(*n)),
        Expr::Bool(b) => Ok(CoercedValue::Boolean(*b)),
        Expr::Text(t) => Ok(coerce(t)),
        Expr::Var(name) => lookup(name)
            .map(|raw| coerce(&raw))
            .ok_or_else(|| ExprError::UnboundVariable(name.clone())),
        Expr::Not(inner) => match eval_expr_with(inner, lookup)? {
            CoercedValue::Boolean(b) => Ok(CoercedValue::Boolean(!b)),
            other => Err(mismatch("not", &other, None)),
        },
        Expr::Neg(inner) => match eval_expr_with(inner, lookup)? {
            CoercedValue::Number(n) => n
                .checked_neg()
                .map(CoercedValue::Number)
                .ok_or(ExprError::Overflow("negation")),
            other => Err(mismatch("unary -", &other, None)),
        },
        Expr::Binary(op @ (BinOp::And | BinOp::Or), lhs, rhs) => {
            let short_on = *op == BinOp::Or;
            match eval_expr_with(lhs, lookup)? {
                CoercedValue::Boolean(b) if b == short_on => Ok(CoercedValue::Boolean(b)),
                CoercedValue::Boolean(_) => match eval_expr_with(rhs, lookup)? {
                    CoercedValue::Boolean(b) => Ok(CoercedValue::Boolean(b)),
                    other => Err(mismatch(
                        op.symbol(),
                        &CoercedValue::Boolean(!short_on),
                        Some(&other),
                    )),
                },
                other => Err(mismatch(op.symbol(), &other, None)),
            }
        }
        Expr::Binary(op, lhs, rhs) => {
            let l = eval_expr_with(lhs, lookup)?;
            let r = eval_expr_with(rhs, lookup)?;
            apply(*op, l, r)
        }
    }
}

fn apply(op: BinOp, l: CoercedValue, r: CoercedValue) -> Result<CoercedValue, ExprError> {
    use CoercedValue::*;
    match op {
        BinOp::Eq => Ok(Boolean(l == r)),
        BinOp::Ne => Ok(Boolean(l != r)),
        BinOp::Lt | BinOp::Gt | BinOp::Le | BinOp::Ge => match (&l, &r) {
            (Number(a), Number(b)) => Ok(Boolean(match op {
                BinOp::Lt => a < b,
                BinOp::Gt => a > b,
                BinOp::Le => a <= b,
                _ => a >= b,
            })),
            _ => Err(mismatch(op.symbol(), &l, Some(&r))),
        },
        BinOp::Add | BinOp::Sub | BinOp::Mul => match (&l, &r) {
            (Number(a), Number(b)) => {
                let out = match op {
                    BinOp::Add => a.checked_add(*b),
                    BinOp::Sub => a.checked_sub(*b),
                    _ => a.checked_mul(*b),
                };
                out.map(Number).ok_or(ExprError::Overflow(op.symbol()))
            }
            _ => Err(mismatch(op.symbol(), &l, Some(&r))),
        },
        BinOp::In => match (&l, &r) {
            (Text(needle), Text(hay)) => Ok(Boolean(hay.contains(needle.as_str()))),
            _ => Err(mismatch("in", &l, Some(&r))),
        },
        BinOp::And | BinOp::Or => unreachable!("short-circuit operators handled by caller"),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_expr;
    use super::*;

    fn run(text: &str) -> Result<CoercedValue, ExprError> {
        eval_expr(&parse_expr(text)?)
    }

    #[test]
    fn documented_examples() {
        assert_eq!(run("2 + 3 < 4"), Ok(CoercedValue::Boolean(false)));
        assert_eq!(run("yes == True"), Ok(CoercedValue::Boolean(true)));
        assert_eq!(run("'left' in 'top left'"), Ok(CoercedValue::Boolean(true)));
        assert_eq!(run("2 < 4 and 3 < 4"), Ok(CoercedValue::Boolean(true)));
    }

    #[test]
    fn cross_kind_equality_after_coercion() {
        assert_eq!(run("'3' == 3"), Ok(CoercedValue::Boolean(true)));
        assert_eq!(run("no != False"), Ok(CoercedValue::Boolean(false)));
        assert_eq!(run("1 == True"), Ok(CoercedValue::Boolean(false)));
        assert_eq!(run("male == female"), Ok(CoercedValue::Boolean(false)));
    }

    #[test]
    fn type_errors() {
        assert!(matches!(run("cat < dog"), Err(ExprError::TypeMismatch(_))));
        assert!(matches!(run("1 and True"), Err(ExprError::TypeMismatch(_))));
        assert!(matches!(run("cat + 1"), Err(ExprError::TypeMismatch(_))));
        assert!(matches!(
            run("yes in 'yes sir'"),
            Err(ExprError::TypeMismatch(_))
        ));
        assert!(matches!(run("not 3"), Err(ExprError::TypeMismatch(_))));
    }

    #[test]
    fn short_circuit_skips_bad_rhs() {
        assert_eq!(run("False and cat < dog"), Ok(CoercedValue::Boolean(false)));
        assert_eq!(run("True or cat < dog"), Ok(CoercedValue::Boolean(true)));
        assert!(run("True and cat < dog").is_err());
    }

    #[test]
    fn placeholders_resolve_through_lookup() {
        let expr = parse_expr("{A} + {B} < 4").unwrap();
        let got = eval_expr_with(&expr, &|n| match n {
            "A" => Some("2".into()),
            "B" => Some("3".into()),
            _ => None,
        });
        assert_eq!(got, Ok(CoercedValue::Boolean(false)));
        assert_eq!(
            eval_expr(&expr),
            Err(ExprError::UnboundVariable("A".into()))
        );
    }

    #[test]
    fn overflow_is_reported() {
        assert_eq!(
            run("9223372036854775807 + 1"),
            Err(ExprError::Overflow("+"))
        );
    }
}
