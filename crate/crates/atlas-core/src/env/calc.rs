//! Arithmetic evaluator behind the calculator tool.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '×' | '/' | '÷') factor)*
//! factor := ('-' | '+') factor | power
//! power  := atom ('^' factor)?          // right-associative
//! atom   := number | '(' expr ')'
//! ```
//!
//! `-2^2` is `-(2^2) = -4` and `2^-3` is `0.125`, matching the usual
//! conventions. Results render through [`render_result`]: with a precision,
//! fixed-point with Rust's round-half-even tie rule; without one, the
//! shortest exact decimal (so integral results print without a fraction).

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CalcError {
    #[error("empty expression")]
    Empty,
    #[error("unexpected character {found:?} at byte {at}")]
    UnexpectedChar { found: char, at: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("expected ')' at byte {at}")]
    UnbalancedParen { at: usize },
    #[error("trailing input starting at byte {at}")]
    TrailingInput { at: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("result is not a finite number")]
    NonFinite,
    #[error("invalid precision {0:?}")]
    BadPrecision(String),
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Parser<'a> {
        Parser { bytes: text.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        let rest = std::str::from_utf8(&self.bytes[self.pos.min(self.bytes.len())..]).ok()?;
        rest.chars().next()
    }

    fn bump(&mut self, c: char) {
        self.pos += c.len_utf8();
    }

    fn expr(&mut self) -> Result<f64, CalcError> {
        let mut value = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.bump('+');
                    value += self.term()?;
                }
                Some('-') => {
                    self.bump('-');
                    value -= self.term()?;
                }
                _ => return Ok(value),
            }
        }
    }

    fn term(&mut self) -> Result<f64, CalcError> {
        let mut value = self.factor()?;
        loop {
            match self.peek() {
                Some(op @ ('*' | '×')) => {
                    self.bump(op);
                    value *= self.factor()?;
                }
                Some(op @ ('/' | '÷')) => {
                    self.bump(op);
                    let divisor = self.factor()?;
                    if divisor == 0.0 {
                        return Err(CalcError::DivisionByZero);
                    }
                    value /= divisor;
                }
                _ => return Ok(value),
            }
        }
    }

    fn factor(&mut self) -> Result<f64, CalcError> {
        match self.peek() {
            Some('-') => {
                self.bump('-');
                Ok(-self.factor()?)
            }
            Some('+') => {
                self.bump('+');
                self.factor()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<f64, CalcError> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.bump('^');
            let exponent = self.factor()?;
            Ok(base.powf(exponent))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<f64, CalcError> {
        match self.peek() {
            Some('(') => {
                self.bump('(');
                let value = self.expr()?;
                if self.peek() == Some(')') {
                    self.bump(')');
                    Ok(value)
                } else {
                    Err(CalcError::UnbalancedParen { at: self.pos })
                }
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) => Err(CalcError::UnexpectedChar { found: c, at: self.pos }),
            None => Err(CalcError::UnexpectedEnd),
        }
    }

    fn number(&mut self) -> Result<f64, CalcError> {
        let start = self.pos;
        let mut seen_digit = false;
        let mut seen_dot = false;
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'0'..=b'9' => {
                    seen_digit = true;
                    self.pos += 1;
                }
                b'.' if !seen_dot => {
                    seen_dot = true;
                    self.pos += 1;
                }
                _ => break,
            }
        }
        if !seen_digit {
            return Err(CalcError::UnexpectedChar { found: '.', at: start });
        }
        let token = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii number token");
        token.parse::<f64>().map_err(|_| CalcError::UnexpectedChar { found: '.', at: start })
    }
}

/// Evaluates an arithmetic expression to a finite number.
pub fn evaluate(expression: &str) -> Result<f64, CalcError> {
    let mut parser = Parser::new(expression);
    if parser.peek().is_none() {
        return Err(CalcError::Empty);
    }
    let value = parser.expr()?;
    parser.skip_ws();
    if parser.pos < parser.bytes.len() {
        return Err(CalcError::TrailingInput { at: parser.pos });
    }
    if !value.is_finite() {
        return Err(CalcError::NonFinite);
    }
    Ok(value)
}

/// Renders a result at an optional fixed decimal precision.
pub fn render_result(value: f64, precision: Option<u32>) -> String {
    match precision {
        Some(digits) => format!("{:.*}", digits as usize, value),
        None => format!("{value}"),
    }
}

#[derive(Deserialize, Default)]
struct CalcToolConfig {
    precision: Option<u32>,
}

const PRECISION_PREFIX: &str = "precision=";
const MAX_PRECISION: u32 = 12;

/// Splits an optional `precision=N;` request prefix off the expression.
fn split_precision_prefix(input: &str) -> Result<(Option<u32>, &str), CalcError> {
    let trimmed = input.trim_start();
    let Some(rest) = trimmed.strip_prefix(PRECISION_PREFIX) else {
        return Ok((None, input));
    };
    let Some((digits, expr)) = rest.split_once(';') else {
        return Err(CalcError::BadPrecision(format!("{PRECISION_PREFIX}{rest}")));
    };
    let precision: u32 =
        digits.trim().parse().map_err(|_| CalcError::BadPrecision(digits.trim().to_string()))?;
    if precision > MAX_PRECISION {
        return Err(CalcError::BadPrecision(format!("{precision} exceeds {MAX_PRECISION}")));
    }
    Ok((Some(precision), expr))
}

/// Full calculator behavior: precision comes from a `precision=N;` prefix on
/// the input, falling back to a `{"precision": N}` entry in the tool's
/// configuration, falling back to shortest-exact rendering.
pub fn calculator_output(input: &str, tool_config: &serde_json::Value) -> Result<String, CalcError> {
    let (requested, expression) = split_precision_prefix(input)?;
    let configured = CalcToolConfig::deserialize(tool_config).unwrap_or_default().precision;
    let value = evaluate(expression)?;
    Ok(render_result(value, requested.or(configured)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn evaluates_basic_arithmetic() {
        assert_eq!(evaluate("12*7+1").unwrap(), 85.0);
        assert_eq!(evaluate("2+3*4").unwrap(), 14.0);
        assert_eq!(evaluate("(2+3)*4").unwrap(), 20.0);
        assert_eq!(evaluate("10-4-3").unwrap(), 3.0);
        assert_eq!(evaluate("100/5/2").unwrap(), 10.0);
        assert_eq!(evaluate(" 1.5 + 2.25 ").unwrap(), 3.75);
        assert_eq!(evaluate(".5*4").unwrap(), 2.0);
    }

    #[test]
    fn unicode_operators_work() {
        assert_eq!(evaluate("6×7").unwrap(), 42.0);
        assert_eq!(evaluate("9÷2").unwrap(), 4.5);
    }

    #[test]
    fn exponent_is_right_associative_and_binds_over_unary() {
        assert_eq!(evaluate("2^3^2").unwrap(), 512.0);
        assert_eq!(evaluate("-2^2").unwrap(), -4.0);
        assert_eq!(evaluate("2^-3").unwrap(), 0.125);
        assert_eq!(evaluate("(1+1)^10").unwrap(), 1024.0);
    }

    #[test]
    fn division_by_zero_and_overflow_are_errors() {
        assert_eq!(evaluate("1/0"), Err(CalcError::DivisionByZero));
        assert_eq!(evaluate("5/(3-3)"), Err(CalcError::DivisionByZero));
        assert_eq!(evaluate("10^400"), Err(CalcError::NonFinite));
    }

    #[test]
    fn parse_errors_carry_positions() {
        assert!(matches!(evaluate("2+"), Err(CalcError::UnexpectedEnd)));
        assert!(matches!(evaluate("(1+2"), Err(CalcError::UnbalancedParen { .. })));
        assert!(matches!(evaluate("2 3"), Err(CalcError::TrailingInput { at: 2 })));
        assert!(matches!(evaluate("abc"), Err(CalcError::UnexpectedChar { found: 'a', at: 0 })));
        assert!(matches!(evaluate(""), Err(CalcError::Empty)));
        assert!(matches!(evaluate("1..2"), Err(CalcError::TrailingInput { .. })));
    }

    #[test]
    fn rendering_without_precision_is_shortest_exact() {
        assert_eq!(render_result(85.0, None), "85");
        assert_eq!(render_result(2.5, None), "2.5");
        assert_eq!(render_result(-0.125, None), "-0.125");
    }

    #[test]
    fn rendering_with_precision_rounds_half_even() {
        assert_eq!(render_result(2.5, Some(2)), "2.50");
        assert_eq!(render_result(0.5, Some(0)), "0");
        assert_eq!(render_result(1.5, Some(0)), "2");
        assert_eq!(render_result(2.5, Some(0)), "2");
        assert_eq!(render_result(0.25, Some(1)), "0.2");
        assert_eq!(render_result(0.75, Some(1)), "0.8");
    }

    #[test]
    fn calculator_output_matches_contract_examples() {
        assert_eq!(calculator_output("12*7+1", &serde_json::Value::Null).unwrap(), "85");
        assert_eq!(calculator_output("precision=2;10/4", &serde_json::Value::Null).unwrap(), "2.50");
    }

    #[test]
    fn precision_prefix_overrides_tool_config() {
        let config = json!({"precision": 4});
        assert_eq!(calculator_output("10/4", &config).unwrap(), "2.5000");
        assert_eq!(calculator_output("precision=1;10/4", &config).unwrap(), "2.5");
        assert_eq!(calculator_output("10/4", &serde_json::Value::Null).unwrap(), "2.5");
    }

    #[test]
    fn bad_precision_requests_are_rejected() {
        assert!(matches!(
            calculator_output("precision=abc;1+1", &serde_json::Value::Null),
            Err(CalcError::BadPrecision(_))
        ));
        assert!(matches!(
            calculator_output("precision=2 2+2", &serde_json::Value::Null),
            Err(CalcError::BadPrecision(_))
        ));
        assert!(matches!(
            calculator_output("precision=99;1", &serde_json::Value::Null),
            Err(CalcError::BadPrecision(_))
        ));
    }

    #[test]
    fn long_division_matches_decimal_oracle() {
        // 1/7 to 12 places, rounded half-even on the exact binary value.
        assert_eq!(calculator_output("precision=6;1/7", &serde_json::Value::Null).unwrap(), "0.142857");
        assert_eq!(calculator_output("precision=3;22/7", &serde_json::Value::Null).unwrap(), "3.143");
    }
}
