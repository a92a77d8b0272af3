//! Derived columns declared as `derive.<name> = <expression>`.
//!
//! Expressions are nested calls over column names and numeric literals:
//! `log(x)`, `standardize(x)`, `ratio(a, b)`, `logit_ratio(a, b)`,
//! `expected(cases, population)` (internal standardization) and
//! `indicator(column, level)`. Missing inputs propagate as missing.

use crate::dataset::{Column, ColumnData, DatasetFile};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column(String),
    Number(f64),
    Call(String, Vec<Expr>),
}

pub fn parse_expr(text: &str) -> Result<Expr> {
    let tokens = tokenize(text)?;
    let mut pos = 0;
    let e = parse_at(&tokens, &mut pos, text)?;
    if pos != tokens.len() {
        return Err(CliError::Config(format!("trailing input in expression `{text}`")));
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Open,
    Close,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, out: &mut Vec<Token>| {
        if !cur.is_empty() {
            out.push(Token::Ident(std::mem::take(cur)));
        }
    };
    for c in text.chars() {
        match c {
            '(' | ')' | ',' => {
                flush(&mut cur, &mut out);
                out.push(match c {
                    '(' => Token::Open,
                    ')' => Token::Close,
                    _ => Token::Comma,
                });
            }
            c if c.is_whitespace() => flush(&mut cur, &mut out),
            c => cur.push(c),
        }
    }
    flush(&mut cur, &mut out);
    if out.is_empty() {
        return Err(CliError::Config("empty expression".into()));
    }
    Ok(out)
}

fn parse_at(tokens: &[Token], pos: &mut usize, text: &str) -> Result<Expr> {
    let bad = || CliError::Config(format!("malformed expression `{text}`"));
    let Some(Token::Ident(name)) = tokens.get(*pos) else { return Err(bad()) };
    *pos += 1;
    if tokens.get(*pos) != Some(&Token::Open) {
        return Ok(match name.parse::<f64>() {
            Ok(v) => Expr::Number(v),
            Err(_) => Expr::Column(name.clone()),
        });
    }
    *pos += 1;
    let mut args = Vec::new();
    if tokens.get(*pos) == Some(&Token::Close) {
        *pos += 1;
        return Ok(Expr::Call(name.clone(), args));
    }
    loop {
        args.push(parse_at(tokens, pos, text)?);
        match tokens.get(*pos) {
            Some(Token::Comma) => *pos += 1,
            Some(Token::Close) => {
                *pos += 1;
                return Ok(Expr::Call(name.clone(), args));
            }
            _ => return Err(bad()),
        }
    }
}

#[derive(Debug, Clone)]
enum Value {
    Numeric(Vec<Option<f64>>),
    Labels(Vec<Option<String>>),
    Scalar(f64),
}

fn numeric(v: Value, n: usize, what: &str) -> Result<Vec<Option<f64>>> {
    match v {
        Value::Numeric(x) => Ok(x),
        Value::Scalar(s) => Ok(vec![Some(s); n]),
        Value::Labels(_) => Err(CliError::Config(format!("`{what}` needs a numeric argument"))),
    }
}

fn map1(x: &[Option<f64>], f: impl Fn(f64) -> f64) -> Vec<Option<f64>> {
    x.iter().map(|v| v.map(&f)).collect()
}

fn map2(a: &[Option<f64>], b: &[Option<f64>], f: impl Fn(f64, f64) -> f64) -> Vec<Option<f64>> {
    a.iter().zip(b).map(|(x, y)| Some(f((*x)?, (*y)?))).collect()
}

/// Mean and `n − 1` standard deviation of the observed values.
pub fn observed_moments(x: &[Option<f64>]) -> Option<(f64, f64)> {
    let obs: Vec<f64> = x.iter().flatten().copied().collect();
    if obs.len() < 2 {
        return None;
    }
    let m = obs.iter().sum::<f64>() / obs.len() as f64;
    let v = obs.iter().map(|o| (o - m).powi(2)).sum::<f64>() / (obs.len() - 1) as f64;
    Some((m, v.sqrt()))
}

fn eval(e: &Expr, data: &DatasetFile) -> Result<Value> {
    let n = data.n_rows;
    match e {
        Expr::Number(v) => Ok(Value::Scalar(*v)),
        Expr::Column(name) => {
            let c = data.require(name)?;
            Ok(match c.numeric() {
                Some(v) => Value::Numeric(v),
                None => Value::Labels(c.labels()),
            })
        }
        Expr::Call(f, args) => {
            let arity = |k: usize| {
                if args.len() == k {
                    Ok(())
                } else {
                    Err(CliError::Config(format!("`{f}` takes {k} argument(s), {} given", args.len())))
                }
            };
            let num = |i: usize| -> Result<Vec<Option<f64>>> { numeric(eval(&args[i], data)?, n, f) };
            let out = match f.as_str() {
                "log" => {
                    arity(1)?;
                    let x = num(0)?;
                    if x.iter().flatten().any(|&v| v <= 0.0) {
                        return Err(CliError::Config("log of a nonpositive value".into()));
                    }
                    map1(&x, f64::ln)
                }
                "standardize" => {
                    arity(1)?;
                    let x = num(0)?;
                    let (m, sd) = observed_moments(&x)
                        .filter(|(_, sd)| *sd > 0.0)
                        .ok_or_else(|| CliError::Config("standardize needs two distinct observed values".into()))?;
                    map1(&x, |v| (v - m) / sd)
                }
                "ratio" => {
                    arity(2)?;
                    map2(&num(0)?, &num(1)?, |a, b| a / b)
                }
                "logit_ratio" => {
                    arity(2)?;
                    let r = map2(&num(0)?, &num(1)?, |a, b| a / b);
                    if r.iter().flatten().any(|&p| !(p > 0.0 && p < 1.0)) {
                        return Err(CliError::Config("logit_ratio needs proportions strictly inside (0, 1)".into()));
                    }
                    map1(&r, |p| (p / (1.0 - p)).ln())
                }
                "expected" => {
                    arity(2)?;
                    let (o, pop) = (num(0)?, num(1)?);
                    let total_o: f64 = o.iter().flatten().sum();
                    let total_n: f64 = pop.iter().flatten().sum();
                    if o.iter().chain(&pop).any(Option::is_none) || total_n <= 0.0 {
                        return Err(CliError::Config("expected needs complete counts".into()));
                    }
                    map1(&pop, |v| v * total_o / total_n)
                }
                "indicator" => {
                    arity(2)?;
                    let labels = match eval(&args[0], data)? {
                        Value::Labels(l) => l,
                        Value::Numeric(x) => x.iter().map(|v| v.map(|f| f.to_string())).collect(),
                        Value::Scalar(_) => return Err(CliError::Config("indicator needs a column".into())),
                    };
                    let level = match &args[1] {
                        Expr::Column(s) => s.clone(),
                        Expr::Number(v) => v.to_string(),
                        Expr::Call(..) => return Err(CliError::Config("indicator level must be a literal".into())),
                    };
                    labels.iter().map(|l| l.as_ref().map(|s| if *s == level { 1.0 } else { 0.0 })).collect()
                }
                other => return Err(CliError::Config(format!("unknown function `{other}`"))),
            };
            Ok(Value::Numeric(out))
        }
    }
}

/// Evaluates an expression into a real column named `name`.
pub fn derive_column(name: &str, expr: &str, data: &DatasetFile) -> Result<Column> {
    let e = parse_expr(expr)?;
    let values = numeric(eval(&e, data)?, data.n_rows, name)?;
    Ok(Column { name: name.to_string(), data: ColumnData::Real(values) })
}
