//! Exact multivariate polynomials with rational coefficients.
//!
//! Parameter counts and operation counts of a templated architecture are
//! polynomials in the architectural variables (hidden width, depth, ...).
//! Keeping them symbolic lets the search sort candidates by asymptotic cost
//! and lets the dominance checks compare per-variable degrees exactly, with
//! no floating point involved.
//!
//! A [`PolyExpr`] carries its own variable list; the position of a variable
//! in that list is its precedence for the graded lexicographic term order
//! (earlier = more significant). Polynomials built from the same template
//! share the template's declaration order, so "leading term" is well defined
//! and stable across runs.
//!
//! The string syntax accepted by [`PolyExpr::parse`] and produced by
//! `Display` is a sum of terms like `3*H*p + H*J + 3*H + J`, with integer or
//! `a/b` rational coefficients and `^` for powers.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// One `coeff * v1^e1 * v2^e2 * ...` term of a polynomial, with exponents
/// keyed by variable name. This is the public, order-independent view;
/// internally terms are stored as exponent vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Monomial {
    pub coeff: BigRational,
    pub exponents: BTreeMap<String, u32>,
}

impl Monomial {
    /// Total degree of the monomial.
    pub fn degree(&self) -> u64 {
        self.exponents.values().map(|&e| u64::from(e)).sum()
    }
}

/// Internal term representation: exponents aligned with `PolyExpr::vars`.
#[derive(Debug, Clone)]
struct Term {
    coeff: BigRational,
    exps: Vec<u32>,
}

fn term_degree(exps: &[u32]) -> u64 {
    exps.iter().map(|&e| u64::from(e)).sum()
}

/// Graded lexicographic comparison of two exponent vectors of equal length:
/// higher total degree wins; ties fall to the first position (highest
/// precedence variable) where the exponents differ.
fn cmp_graded_lex(a: &[u32], b: &[u32]) -> Ordering {
    debug_assert_eq!(a.len(), b.len());
    term_degree(a)
        .cmp(&term_degree(b))
        .then_with(|| a.cmp(b))
}

/// A multivariate polynomial in canonical form: distinct exponent vectors,
/// no zero coefficients, terms sorted in descending graded-lex order.
#[derive(Debug, Clone)]
pub struct PolyExpr {
    /// Variable names in precedence order (index 0 is most significant).
    vars: Vec<String>,
    terms: Vec<Term>,
}

impl PolyExpr {
    /// The zero polynomial with an empty variable context.
    pub fn zero() -> Self {
        PolyExpr { vars: Vec::new(), terms: Vec::new() }
    }

    /// The zero polynomial carrying a fixed variable precedence. Summing
    /// layer polynomials onto this anchor keeps the template's declaration
    /// order as the term-order precedence regardless of which variables the
    /// individual layers mention.
    pub fn zero_with_vars<S: AsRef<str>>(vars: &[S]) -> Self {
        PolyExpr {
            vars: vars.iter().map(|v| v.as_ref().to_string()).collect(),
            terms: Vec::new(),
        }
    }

    pub fn one() -> Self {
        Self::constant(1)
    }

    pub fn constant(c: i64) -> Self {
        Self::constant_rational(BigRational::from_integer(BigInt::from(c)))
    }

    pub fn constant_rational(c: BigRational) -> Self {
        let mut p = PolyExpr { vars: Vec::new(), terms: Vec::new() };
        if !c.is_zero() {
            p.terms.push(Term { coeff: c, exps: Vec::new() });
        }
        p
    }

    /// The polynomial consisting of the single variable `name`.
    pub fn var(name: &str) -> Self {
        PolyExpr {
            vars: vec![name.to_string()],
            terms: vec![Term { coeff: BigRational::one(), exps: vec![1] }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Variable names in precedence order.
    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// Whether `name` actually occurs (with a positive exponent) in some term.
    pub fn mentions(&self, name: &str) -> bool {
        match self.vars.iter().position(|v| v == name) {
            None => false,
            Some(i) => self.terms.iter().any(|t| t.exps[i] > 0),
        }
    }

    /// All terms as order-independent [`Monomial`]s, in descending
    /// graded-lex order.
    pub fn monomials(&self) -> Vec<Monomial> {
        self.terms
            .iter()
            .map(|t| Monomial {
                coeff: t.coeff.clone(),
                exponents: self
                    .vars
                    .iter()
                    .zip(&t.exps)
                    .filter(|(_, &e)| e > 0)
                    .map(|(v, &e)| (v.clone(), e))
                    .collect(),
            })
            .collect()
    }

    /// The graded-lex maximal term. Errors on the zero polynomial, whose
    /// leading term is undefined.
    pub fn leading_term(&self) -> Result<Monomial> {
        self.monomials()
            .into_iter()
            .next()
            .ok_or_else(|| Error::Precondition("leading term of the zero polynomial".into()))
    }

    /// Highest power of `name` appearing in any term (0 if absent).
    pub fn degree_in(&self, name: &str) -> u32 {
        match self.vars.iter().position(|v| v == name) {
            None => 0,
            Some(i) => self.terms.iter().map(|t| t.exps[i]).max().unwrap_or(0),
        }
    }

    /// Total degree (0 for the zero polynomial).
    pub fn total_degree(&self) -> u64 {
        self.terms.first().map_or(0, |t| term_degree(&t.exps))
    }

    fn canonicalize(vars: Vec<String>, acc: BTreeMap<Vec<u32>, BigRational>) -> PolyExpr {
        let mut terms: Vec<Term> = acc
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(exps, coeff)| Term { coeff, exps })
            .collect();
        terms.sort_by(|a, b| cmp_graded_lex(&b.exps, &a.exps));
        PolyExpr { vars, terms }
    }

    /// Merge the variable contexts of two polynomials: `self`'s order first,
    /// then any new variables of `other` in their own order. Returns the
    /// merged list and both term lists remapped onto it.
    fn align(&self, other: &PolyExpr) -> (Vec<String>, Vec<Term>, Vec<Term>) {
        if self.vars == other.vars {
            return (self.vars.clone(), self.terms.clone(), other.terms.clone());
        }
        let mut vars = self.vars.clone();
        for v in &other.vars {
            if !vars.contains(v) {
                vars.push(v.clone());
            }
        }
        let remap = |p: &PolyExpr| -> Vec<Term> {
            let positions: Vec<usize> = p
                .vars
                .iter()
                .map(|v| vars.iter().position(|w| w == v).expect("merged var"))
                .collect();
            p.terms
                .iter()
                .map(|t| {
                    let mut exps = vec![0u32; vars.len()];
                    for (src, &dst) in positions.iter().enumerate() {
                        exps[dst] = t.exps[src];
                    }
                    Term { coeff: t.coeff.clone(), exps }
                })
                .collect()
        };
        let a = remap(self);
        let b = remap(other);
        (vars, a, b)
    }

    pub fn add(&self, other: &PolyExpr) -> PolyExpr {
        let (vars, a, b) = self.align(other);
        let mut acc: BTreeMap<Vec<u32>, BigRational> = BTreeMap::new();
        for t in a.into_iter().chain(b) {
            let entry = acc.entry(t.exps).or_insert_with(BigRational::zero);
            *entry += t.coeff;
        }
        Self::canonicalize(vars, acc)
    }

    pub fn sub(&self, other: &PolyExpr) -> PolyExpr {
        self.add(&other.scale(&BigRational::from_integer(BigInt::from(-1))))
    }

    pub fn mul(&self, other: &PolyExpr) -> PolyExpr {
        let (vars, a, b) = self.align(other);
        let mut acc: BTreeMap<Vec<u32>, BigRational> = BTreeMap::new();
        for ta in &a {
            for tb in &b {
                let exps: Vec<u32> = ta
                    .exps
                    .iter()
                    .zip(&tb.exps)
                    .map(|(&x, &y)| x.checked_add(y).expect("exponent overflow"))
                    .collect();
                let entry = acc.entry(exps).or_insert_with(BigRational::zero);
                *entry += &ta.coeff * &tb.coeff;
            }
        }
        Self::canonicalize(vars, acc)
    }

    /// Multiply every coefficient by a rational constant.
    pub fn scale(&self, c: &BigRational) -> PolyExpr {
        if c.is_zero() {
            return PolyExpr { vars: self.vars.clone(), terms: Vec::new() };
        }
        PolyExpr {
            vars: self.vars.clone(),
            terms: self
                .terms
                .iter()
                .map(|t| Term { coeff: &t.coeff * c, exps: t.exps.clone() })
                .collect(),
        }
    }

    pub fn scale_int(&self, c: i64) -> PolyExpr {
        self.scale(&BigRational::from_integer(BigInt::from(c)))
    }

    pub fn pow(&self, k: u32) -> PolyExpr {
        let mut out = PolyExpr::one();
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// Replace `name` by the constant `value`, eliminating the variable.
    pub fn substitute(&self, name: &str, value: u64) -> PolyExpr {
        let Some(pos) = self.vars.iter().position(|v| v == name) else {
            return self.clone();
        };
        let vars: Vec<String> =
            self.vars.iter().filter(|v| v.as_str() != name).cloned().collect();
        let base = BigInt::from(value);
        let mut acc: BTreeMap<Vec<u32>, BigRational> = BTreeMap::new();
        for t in &self.terms {
            let factor = BigRational::from_integer(base.pow(t.exps[pos]));
            let mut exps = t.exps.clone();
            exps.remove(pos);
            let entry = acc.entry(exps).or_insert_with(BigRational::zero);
            *entry += &t.coeff * factor;
        }
        Self::canonicalize(vars, acc)
    }

    /// Evaluate over the rationals. Total except for unresolved variables.
    pub fn evaluate_rational<F>(&self, lookup: F) -> Result<BigRational>
    where
        F: Fn(&str) -> Option<BigRational>,
    {
        // Only variables that actually occur need a value; the context may
        // carry unused names purely for precedence.
        let values: Vec<Option<BigRational>> = self
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let used = self.terms.iter().any(|t| t.exps[i] > 0);
                match (used, lookup(v)) {
                    (false, _) => Ok(None),
                    (true, Some(x)) => Ok(Some(x)),
                    (true, None) => {
                        Err(Error::Schema(format!("no value for variable `{v}` in evaluation")))
                    }
                }
            })
            .collect::<Result<_>>()?;
        let mut sum = BigRational::zero();
        for t in &self.terms {
            let mut prod = t.coeff.clone();
            for (val, &e) in values.iter().zip(&t.exps) {
                for _ in 0..e {
                    prod *= val.as_ref().expect("used variable has a value");
                }
            }
            sum += prod;
        }
        Ok(sum)
    }

    /// Evaluate at a positive-integer point and demand a representable
    /// non-negative integer back. Count polynomials must satisfy this on
    /// their whole domain; a non-integer or negative value means the
    /// polynomial is not the count it claims to be.
    pub fn evaluate<F>(&self, lookup: F) -> Result<u64>
    where
        F: Fn(&str) -> Option<u64>,
    {
        let val = self.evaluate_rational(|v| lookup(v).map(|x| BigRational::from_integer(BigInt::from(x))))?;
        if !val.is_integer() {
            return Err(Error::Consistency(format!(
                "polynomial `{self}` evaluated to non-integer {val}"
            )));
        }
        if val.is_negative() {
            return Err(Error::Consistency(format!(
                "polynomial `{self}` evaluated to negative {val}"
            )));
        }
        val.to_integer().to_u64().ok_or_else(|| {
            Error::SizeLimit(format!("polynomial `{self}` evaluation exceeds u64"))
        })
    }

    /// Parse the `term ± term` syntax. Every identifier must be one of
    /// `declared`; the result's precedence order is exactly `declared`.
    pub fn parse<S: AsRef<str>>(src: &str, declared: &[S]) -> Result<PolyExpr> {
        let declared: Vec<&str> = declared.iter().map(|s| s.as_ref()).collect();
        Parser::new(src, &declared)?.parse_expr()
    }
}

impl PartialEq for PolyExpr {
    /// Semantic equality: same set of (exponent map, coefficient) pairs,
    /// regardless of variable precedence or unused context variables.
    fn eq(&self, other: &Self) -> bool {
        let key = |p: &PolyExpr| -> Vec<(BTreeMap<String, u32>, BigRational)> {
            let mut k: Vec<_> = p
                .monomials()
                .into_iter()
                .map(|m| (m.exponents, m.coeff))
                .collect();
            k.sort();
            k
        };
        key(self) == key(other)
    }
}

impl Eq for PolyExpr {}

impl fmt::Display for PolyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            let neg = t.coeff.is_negative();
            if i == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mag = t.coeff.abs();
            let mut factors: Vec<String> = Vec::new();
            for (v, &e) in self.vars.iter().zip(&t.exps) {
                match e {
                    0 => {}
                    1 => factors.push(v.clone()),
                    _ => factors.push(format!("{v}^{e}")),
                }
            }
            if factors.is_empty() {
                write!(f, "{mag}")?;
            } else {
                if !mag.is_one() {
                    write!(f, "{mag}*")?;
                }
                write!(f, "{}", factors.join("*"))?;
            }
        }
        Ok(())
    }
}

impl Serialize for PolyExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl Add for &PolyExpr {
    type Output = PolyExpr;
    fn add(self, rhs: &PolyExpr) -> PolyExpr {
        PolyExpr::add(self, rhs)
    }
}

impl Sub for &PolyExpr {
    type Output = PolyExpr;
    fn sub(self, rhs: &PolyExpr) -> PolyExpr {
        PolyExpr::sub(self, rhs)
    }
}

impl Mul for &PolyExpr {
    type Output = PolyExpr;
    fn mul(self, rhs: &PolyExpr) -> PolyExpr {
        PolyExpr::mul(self, rhs)
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(BigRational),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    declared: &'a [&'a str],
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, declared: &'a [&'a str]) -> Result<Self> {
        let mut tokens = Vec::new();
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            match c {
                ' ' | '\t' | '\n' | '\r' => i += 1,
                '+' => {
                    tokens.push(Token::Plus);
                    i += 1;
                }
                '-' => {
                    tokens.push(Token::Minus);
                    i += 1;
                }
                '*' => {
                    tokens.push(Token::Star);
                    i += 1;
                }
                '^' => {
                    tokens.push(Token::Caret);
                    i += 1;
                }
                '0'..='9' => {
                    let start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    let numer: BigInt = src[start..i]
                        .parse()
                        .map_err(|_| Error::Schema(format!("bad number in `{src}`")))?;
                    let denom = if i < bytes.len() && bytes[i] == b'/' {
                        i += 1;
                        let dstart = i;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                        if dstart == i {
                            return Err(Error::Schema(format!(
                                "expected denominator after `/` in `{src}`"
                            )));
                        }
                        let d: BigInt = src[dstart..i]
                            .parse()
                            .map_err(|_| Error::Schema(format!("bad number in `{src}`")))?;
                        if d.is_zero() {
                            return Err(Error::Schema(format!("zero denominator in `{src}`")));
                        }
                        d
                    } else {
                        BigInt::one()
                    };
                    tokens.push(Token::Number(BigRational::new(numer, denom)));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    while i < bytes.len()
                        && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                    {
                        i += 1;
                    }
                    tokens.push(Token::Ident(src[start..i].to_string()));
                }
                other => {
                    return Err(Error::Schema(format!(
                        "unexpected character `{other}` in expression `{src}`"
                    )))
                }
            }
        }
        Ok(Parser { tokens, pos: 0, declared, src })
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn parse_expr(&mut self) -> Result<PolyExpr> {
        if self.tokens.is_empty() {
            return Err(Error::Schema("empty expression".into()));
        }
        let mut negate = false;
        if self.peek() == Some(&Token::Minus) {
            negate = true;
            self.pos += 1;
        }
        let declared_owned: Vec<String> = self.declared.iter().map(|s| s.to_string()).collect();
        let mut acc = PolyExpr::zero_with_vars(&declared_owned);
        let mut term = self.parse_term()?;
        if negate {
            term = term.scale_int(-1);
        }
        acc = acc.add(&term);
        while let Some(tok) = self.peek() {
            let negate = match tok {
                Token::Plus => false,
                Token::Minus => true,
                other => {
                    return Err(Error::Schema(format!(
                        "expected `+` or `-` before {other:?} in `{}`",
                        self.src
                    )))
                }
            };
            self.pos += 1;
            let mut term = self.parse_term()?;
            if negate {
                term = term.scale_int(-1);
            }
            acc = acc.add(&term);
        }
        Ok(acc)
    }

    fn parse_term(&mut self) -> Result<PolyExpr> {
        let mut prod = self.parse_factor()?;
        while self.peek() == Some(&Token::Star) {
            self.pos += 1;
            let f = self.parse_factor()?;
            prod = prod.mul(&f);
        }
        Ok(prod)
    }

    fn parse_factor(&mut self) -> Result<PolyExpr> {
        match self.tokens.get(self.pos).cloned() {
            Some(Token::Number(n)) => {
                self.pos += 1;
                Ok(PolyExpr::constant_rational(n))
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if !self.declared.contains(&name.as_str()) {
                    return Err(Error::Schema(format!(
                        "unknown variable `{name}` in expression `{}`",
                        self.src
                    )));
                }
                let base = PolyExpr::var(&name);
                if self.peek() == Some(&Token::Caret) {
                    self.pos += 1;
                    match self.tokens.get(self.pos).cloned() {
                        Some(Token::Number(n)) if n.is_integer() && !n.is_negative() => {
                            self.pos += 1;
                            let e = n.to_integer().to_u32().ok_or_else(|| {
                                Error::Schema(format!("exponent too large in `{}`", self.src))
                            })?;
                            Ok(base.pow(e))
                        }
                        _ => Err(Error::Schema(format!(
                            "expected non-negative integer exponent after `^` in `{}`",
                            self.src
                        ))),
                    }
                } else {
                    Ok(base)
                }
            }
            other => Err(Error::Schema(format!(
                "expected number or variable, found {other:?} in `{}`",
                self.src
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
