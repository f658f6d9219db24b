//! Graded-commutative polynomial algebra with exact rational coefficients.
//!
//! A chart declares three blocks of generators: `x^i` of degree 0, `e^mu` of
//! degree 1 (anticommuting), and `p_I` of degree 2. Elements are kept in a
//! canonical normal form: a sorted term map from monomials to nonzero
//! rational coefficients, with each monomial's odd factors stored as a
//! strictly increasing index set. Reordering odd factors contributes the
//! Koszul sign `(-1)^{inversions}`, and repeated odd factors vanish.

use crate::rat::{fmt_q, is_negative, q, Q};
use num::traits::Zero;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GradedError {
    #[error("chart error: {0}")]
    Chart(String),
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("substitution error: {0}")]
    Substitution(String),
    #[error("expected a homogeneous element of degree {expected}, found {found}")]
    Degree { expected: String, found: String },
}

/// A generator of the chart: `X(i)` has degree 0, `E(i)` degree 1,
/// `P(i)` degree 2. Indices are zero-based positions within each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Gen {
    X(usize),
    E(usize),
    P(usize),
}

impl Gen {
    pub fn degree(&self) -> usize {
        match self {
            Gen::X(_) => 0,
            Gen::E(_) => 1,
            Gen::P(_) => 2,
        }
    }
}

/// Named generators for one graded chart. At most 64 odd generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chart {
    x: Vec<String>,
    e: Vec<String>,
    p: Vec<String>,
}

impl Chart {
    pub fn new(
        x: Vec<String>,
        e: Vec<String>,
        p: Vec<String>,
    ) -> Result<Arc<Chart>, GradedError> {
        if e.len() > 64 {
            return Err(GradedError::Chart("at most 64 odd generators supported".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in x.iter().chain(e.iter()).chain(p.iter()) {
            if name.is_empty()
                || !name.chars().next().unwrap().is_ascii_alphabetic()
                || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            {
                return Err(GradedError::Chart(format!("invalid generator name `{name}`")));
            }
            if !seen.insert(name.clone()) {
                return Err(GradedError::Chart(format!("duplicate generator name `{name}`")));
            }
        }
        Ok(Arc::new(Chart { x, e, p }))
    }

    /// Chart `x1..xn, e1..em, p1..pn` with the default naming scheme.
    pub fn default_names(n_x: usize, n_e: usize, n_p: usize) -> Arc<Chart> {
        Chart::new(
            (1..=n_x).map(|i| format!("x{i}")).collect(),
            (1..=n_e).map(|i| format!("e{i}")).collect(),
            (1..=n_p).map(|i| format!("p{i}")).collect(),
        )
        .expect("default chart names are valid")
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn n_e(&self) -> usize {
        self.e.len()
    }

    pub fn n_p(&self) -> usize {
        self.p.len()
    }

    pub fn name(&self, g: Gen) -> &str {
        match g {
            Gen::X(i) => &self.x[i],
            Gen::E(i) => &self.e[i],
            Gen::P(i) => &self.p[i],
        }
    }

    pub fn lookup(&self, name: &str) -> Option<Gen> {
        if let Some(i) = self.x.iter().position(|n| n == name) {
            return Some(Gen::X(i));
        }
        if let Some(i) = self.e.iter().position(|n| n == name) {
            return Some(Gen::E(i));
        }
        self.p.iter().position(|n| n == name).map(Gen::P)
    }

    pub fn x_names(&self) -> &[String] {
        &self.x
    }

    pub fn e_names(&self) -> &[String] {
        &self.e
    }

    pub fn p_names(&self) -> &[String] {
        &self.p
    }
}

/// Monomial in canonical form: exponents for the even generators and a
/// bitmask (ascending index order) for the odd ones.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Monomial {
    pub x: Vec<u32>,
    pub e: u64,
    pub p: Vec<u32>,
}

impl Monomial {
    pub fn unit(chart: &Chart) -> Monomial {
        Monomial { x: vec![0; chart.n_x()], e: 0, p: vec![0; chart.n_p()] }
    }

    pub fn degree(&self) -> usize {
        self.e.count_ones() as usize + 2 * self.p.iter().map(|&k| k as usize).sum::<usize>()
    }

    pub fn parity(&self) -> usize {
        (self.e.count_ones() & 1) as usize
    }

    fn x_degree(&self) -> usize {
        self.x.iter().map(|&k| k as usize).sum()
    }

    /// Sign and product of two canonical odd masks; `None` when a factor
    /// repeats. The sign counts inversions when interleaving `b` into `a`.
    fn e_mul(a: u64, b: u64) -> Option<(i32, u64)> {
        if a & b != 0 {
            return None;
        }
        let mut inversions = 0u32;
        let mut rest = b;
        while rest != 0 {
            let bit = rest.trailing_zeros();
            inversions += (a >> (bit + 1)).count_ones();
            rest &= rest - 1;
        }
        let sign = if inversions % 2 == 0 { 1 } else { -1 };
        Some((sign, a | b))
    }

    fn mul(&self, other: &Monomial) -> Option<(i32, Monomial)> {
        let (sign, e) = Monomial::e_mul(self.e, other.e)?;
        let x = self.x.iter().zip(&other.x).map(|(a, b)| a + b).collect();
        let p = self.p.iter().zip(&other.p).map(|(a, b)| a + b).collect();
        Some((sign, Monomial { x, e, p }))
    }
}

/// Graded-commutative polynomial in a fixed chart, in normal form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradedPoly {
    chart: Arc<Chart>,
    terms: BTreeMap<Monomial, Q>,
}

fn assert_same_chart(a: &GradedPoly, b: &GradedPoly) {
    assert!(
        Arc::ptr_eq(&a.chart, &b.chart) || a.chart == b.chart,
        "operands live in different charts"
    );
}

impl GradedPoly {
    pub fn zero(chart: &Arc<Chart>) -> GradedPoly {
        GradedPoly { chart: Arc::clone(chart), terms: BTreeMap::new() }
    }

    pub fn constant(chart: &Arc<Chart>, c: Q) -> GradedPoly {
        let mut p = GradedPoly::zero(chart);
        if !c.is_zero() {
            p.terms.insert(Monomial::unit(chart), c);
        }
        p
    }

    pub fn one(chart: &Arc<Chart>) -> GradedPoly {
        GradedPoly::constant(chart, q(1))
    }

    pub fn generator(chart: &Arc<Chart>, g: Gen) -> GradedPoly {
        let mut m = Monomial::unit(chart);
        match g {
            Gen::X(i) => m.x[i] += 1,
            Gen::E(i) => m.e |= 1 << i,
            Gen::P(i) => m.p[i] += 1,
        }
        let mut p = GradedPoly::zero(chart);
        p.terms.insert(m, q(1));
        p
    }

    /// Normalizes a raw sum of generator words into canonical form,
    /// applying Koszul signs and dropping squares of odd generators.
    pub fn normalize(chart: &Arc<Chart>, raw: &[(Vec<Gen>, Q)]) -> GradedPoly {
        let mut out = GradedPoly::zero(chart);
        for (word, coeff) in raw {
            if coeff.is_zero() {
                continue;
            }
            let mut mono = Monomial::unit(chart);
            let mut sign = 1i32;
            let mut dead = false;
            for g in word {
                match *g {
                    Gen::X(i) => mono.x[i] += 1,
                    Gen::P(i) => mono.p[i] += 1,
                    Gen::E(i) => {
                        let bit = 1u64 << i;
                        if mono.e & bit != 0 {
                            dead = true;
                            break;
                        }
                        // Appending e_i on the right: move it left past
                        // every present odd factor with a larger index.
                        let above = (mono.e >> (i + 1)).count_ones();
                        if above % 2 == 1 {
                            sign = -sign;
                        }
                        mono.e |= bit;
                    }
                }
            }
            if dead {
                continue;
            }
            let signed = if sign == 1 { coeff.clone() } else { -coeff.clone() };
            out.add_term(mono, signed);
        }
        out
    }

    fn add_term(&mut self, mono: Monomial, coeff: Q) {
        if coeff.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(mono) {
            Entry::Vacant(v) => {
                v.insert(coeff);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += coeff;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Q)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> Q {
        self.terms.get(m).cloned().unwrap_or_else(Q::zero)
    }

    /// The common degree of all terms; `Some(0)` for zero, `None` when mixed.
    pub fn degree(&self) -> Option<usize> {
        let mut it = self.terms.keys();
        let Some(first) = it.next() else { return Some(0) };
        let d = first.degree();
        if it.all(|m| m.degree() == d) {
            Some(d)
        } else {
            None
        }
    }

    pub fn is_homogeneous_of(&self, d: usize) -> bool {
        self.is_zero() || self.degree() == Some(d)
    }

    /// Largest total degree in the even base variables across terms.
    pub fn x_degree(&self) -> usize {
        self.terms.keys().map(|m| m.x_degree()).max().unwrap_or(0)
    }

    pub fn max_e_degree(&self) -> usize {
        self.terms.keys().map(|m| m.e.count_ones() as usize).max().unwrap_or(0)
    }

    pub fn max_p_degree(&self) -> usize {
        self.terms
            .keys()
            .map(|m| m.p.iter().map(|&k| k as usize).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn scale(&self, s: &Q) -> GradedPoly {
        if s.is_zero() {
            return GradedPoly::zero(&self.chart);
        }
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v = &*v * s;
        }
        out
    }

    /// Splits into (even-parity part, odd-parity part).
    pub fn split_parity(&self) -> (GradedPoly, GradedPoly) {
        let mut even = GradedPoly::zero(&self.chart);
        let mut odd = GradedPoly::zero(&self.chart);
        for (m, c) in &self.terms {
            if m.parity() == 0 {
                even.terms.insert(m.clone(), c.clone());
            } else {
                odd.terms.insert(m.clone(), c.clone());
            }
        }
        (even, odd)
    }

    /// Left partial derivative along a generator. For an odd generator the
    /// factor is pulled to the front first, contributing its Koszul sign.
    pub fn partial_derivative(&self, g: Gen) -> GradedPoly {
        let mut out = GradedPoly::zero(&self.chart);
        for (m, c) in &self.terms {
            match g {
                Gen::X(i) => {
                    if m.x[i] > 0 {
                        let mut m2 = m.clone();
                        m2.x[i] -= 1;
                        out.add_term(m2, c * q(m.x[i] as i64));
                    }
                }
                Gen::P(i) => {
                    if m.p[i] > 0 {
                        let mut m2 = m.clone();
                        m2.p[i] -= 1;
                        out.add_term(m2, c * q(m.p[i] as i64));
                    }
                }
                Gen::E(i) => {
                    let bit = 1u64 << i;
                    if m.e & bit != 0 {
                        let below = (m.e & (bit - 1)).count_ones();
                        let mut m2 = m.clone();
                        m2.e &= !bit;
                        let signed = if below % 2 == 0 { c.clone() } else { -c.clone() };
                        out.add_term(m2, signed);
                    }
                }
            }
        }
        out
    }

    /// Substitutes generators by replacement polynomials. Every replacement
    /// must be homogeneous of the generator's degree (the zero polynomial is
    /// allowed for any generator). Untouched generators map to themselves.
    pub fn substitute(
        &self,
        map: &BTreeMap<Gen, GradedPoly>,
    ) -> Result<GradedPoly, GradedError> {
        for (g, rep) in map {
            assert_same_chart(self, rep);
            if !rep.is_homogeneous_of(g.degree()) {
                return Err(GradedError::Substitution(format!(
                    "replacement for `{}` must be homogeneous of degree {}",
                    self.chart.name(*g),
                    g.degree()
                )));
            }
        }
        let mut out = GradedPoly::zero(&self.chart);
        for (m, c) in &self.terms {
            let mut acc = GradedPoly::constant(&self.chart, c.clone());
            let expand = |acc: &GradedPoly, g: Gen, power: u32| -> GradedPoly {
                let factor = match map.get(&g) {
                    Some(rep) => rep.clone(),
                    None => GradedPoly::generator(&self.chart, g),
                };
                let mut r = acc.clone();
                for _ in 0..power {
                    r = &r * &factor;
                }
                r
            };
            // Canonical order: x block, then e block ascending, then p block.
            for (i, &k) in m.x.iter().enumerate() {
                if k > 0 {
                    acc = expand(&acc, Gen::X(i), k);
                }
            }
            let mut rest = m.e;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                acc = expand(&acc, Gen::E(i), 1);
            }
            for (i, &k) in m.p.iter().enumerate() {
                if k > 0 {
                    acc = expand(&acc, Gen::P(i), k);
                }
            }
            out = &out + &acc;
        }
        Ok(out)
    }

    /// Kills every term containing one of the listed base variables
    /// (substitution `x^a := 0`).
    pub fn kill_x(&self, indices: &[usize]) -> GradedPoly {
        let mut out = GradedPoly::zero(&self.chart);
        for (m, c) in &self.terms {
            if indices.iter().all(|&a| m.x[a] == 0) {
                out.terms.insert(m.clone(), c.clone());
            }
        }
        out
    }

    /// Evaluates the base variables at a rational point, keeping the odd and
    /// degree-2 generators symbolic.
    pub fn eval_x(&self, point: &[Q]) -> GradedPoly {
        assert_eq!(point.len(), self.chart.n_x(), "point dimension mismatch");
        let mut out = GradedPoly::zero(&self.chart);
        for (m, c) in &self.terms {
            let mut coeff = c.clone();
            for (i, &k) in m.x.iter().enumerate() {
                for _ in 0..k {
                    coeff = &coeff * &point[i];
                }
            }
            let mut m2 = m.clone();
            m2.x.iter_mut().for_each(|k| *k = 0);
            out.add_term(m2, coeff);
        }
        out
    }

    /// For a degree-1 element, the coefficient polynomial of each odd
    /// generator (a vector of degree-0 polynomials).
    pub fn e_components(&self) -> Result<Vec<GradedPoly>, GradedError> {
        if !self.is_homogeneous_of(1) {
            return Err(GradedError::Degree {
                expected: "1".into(),
                found: format!("{:?}", self.degree()),
            });
        }
        let mut comps = vec![GradedPoly::zero(&self.chart); self.chart.n_e()];
        for (m, c) in &self.terms {
            let i = m.e.trailing_zeros() as usize;
            let mut m2 = m.clone();
            m2.e = 0;
            comps[i].add_term(m2, c.clone());
        }
        Ok(comps)
    }

    /// True when the polynomial uses none of the given generators.
    pub fn avoids(&self, gens: &[Gen]) -> bool {
        self.terms.keys().all(|m| {
            gens.iter().all(|g| match *g {
                Gen::X(i) => m.x[i] == 0,
                Gen::E(i) => m.e & (1 << i) == 0,
                Gen::P(i) => m.p[i] == 0,
            })
        })
    }

    /// The coefficient of a degree-2 element on `p_I`, and its pure-odd
    /// quadratic remainder, as `(p-components, e-quadratic part)`.
    pub fn p_components_and_e_part(
        &self,
    ) -> Result<(Vec<GradedPoly>, GradedPoly), GradedError> {
        if !self.is_homogeneous_of(2) {
            return Err(GradedError::Degree {
                expected: "2".into(),
                found: format!("{:?}", self.degree()),
            });
        }
        let mut p_comps = vec![GradedPoly::zero(&self.chart); self.chart.n_p()];
        let mut e_part = GradedPoly::zero(&self.chart);
        for (m, c) in &self.terms {
            if m.e == 0 {
                let i = m.p.iter().position(|&k| k > 0).expect("degree-2 monomial");
                let mut m2 = m.clone();
                m2.p[i] -= 1;
                p_comps[i].add_term(m2, c.clone());
            } else {
                e_part.add_term(m.clone(), c.clone());
            }
        }
        Ok((p_comps, e_part))
    }

    /// Renders in the expression grammar accepted by [`parse_expr`].
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl Add for &GradedPoly {
    type Output = GradedPoly;
    fn add(self, rhs: &GradedPoly) -> GradedPoly {
        assert_same_chart(self, rhs);
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl Sub for &GradedPoly {
    type Output = GradedPoly;
    fn sub(self, rhs: &GradedPoly) -> GradedPoly {
        assert_same_chart(self, rhs);
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl Neg for &GradedPoly {
    type Output = GradedPoly;
    fn neg(self) -> GradedPoly {
        self.scale(&q(-1))
    }
}

impl Mul for &GradedPoly {
    type Output = GradedPoly;
    fn mul(self, rhs: &GradedPoly) -> GradedPoly {
        assert_same_chart(self, rhs);
        let mut out = GradedPoly::zero(&self.chart);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                if let Some((sign, m)) = ma.mul(mb) {
                    let c = ca * cb;
                    out.add_term(m, if sign == 1 { c } else { -c });
                }
            }
        }
        out
    }
}

impl fmt::Display for GradedPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            let neg = is_negative(c);
            let mag = if neg { -c.clone() } else { c.clone() };
            if first {
                if neg {
                    write!(f, "-")?;
                }
                first = false;
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut factors: Vec<String> = Vec::new();
            for (i, &k) in m.x.iter().enumerate() {
                match k {
                    0 => {}
                    1 => factors.push(self.chart.x[i].clone()),
                    _ => factors.push(format!("{}^{}", self.chart.x[i], k)),
                }
            }
            let mut rest = m.e;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                factors.push(self.chart.e[i].clone());
            }
            for (i, &k) in m.p.iter().enumerate() {
                match k {
                    0 => {}
                    1 => factors.push(self.chart.p[i].clone()),
                    _ => factors.push(format!("{}^{}", self.chart.p[i], k)),
                }
            }
            use num::traits::One;
            if factors.is_empty() {
                write!(f, "{}", fmt_q(&mag))?;
            } else if mag.is_one() {
                write!(f, "{}", factors.join("*"))?;
            } else {
                write!(f, "{}*{}", fmt_q(&mag), factors.join("*"))?;
            }
        }
        Ok(())
    }
}

/// Parses the expression grammar: sums of terms, each term a `*`-separated
/// product of an optional rational coefficient and powers of generators,
/// e.g. `3/2*x1^2*e1*e3*p2 - v1*p1`.
pub fn parse_expr(chart: &Arc<Chart>, input: &str) -> Result<GradedPoly, GradedError> {
    let tokens = tokenize(input)?;
    let mut parser = Parser { tokens, pos: 0 };
    let poly = parser.expr(chart)?;
    if parser.pos != parser.tokens.len() {
        let (tpos, _) = parser.tokens[parser.pos].clone();
        return Err(GradedError::Parse { pos: tpos, msg: "unexpected trailing input".into() });
    }
    Ok(poly)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Plus,
    Minus,
    Star,
    Caret,
    Number(String),
    Name(String),
}

fn tokenize(input: &str) -> Result<Vec<(usize, Tok)>, GradedError> {
    let mut out = Vec::new();
    let bytes = input.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push((i, Tok::Plus));
                i += 1;
            }
            '-' => {
                out.push((i, Tok::Minus));
                i += 1;
            }
            '*' => {
                out.push((i, Tok::Star));
                i += 1;
            }
            '^' => {
                out.push((i, Tok::Caret));
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'/' {
                    let mut j = i + 1;
                    while j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        j += 1;
                    }
                    if j == i + 1 {
                        return Err(GradedError::Parse {
                            pos: i,
                            msg: "expected denominator after '/'".into(),
                        });
                    }
                    i = j;
                }
                out.push((start, Tok::Number(input[start..i].to_string())));
            }
            _ if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((start, Tok::Name(input[start..i].to_string())));
            }
            _ => {
                return Err(GradedError::Parse { pos: i, msg: format!("unexpected character `{c}`") })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn bump(&mut self) -> Option<(usize, Tok)> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self, chart: &Arc<Chart>) -> Result<GradedPoly, GradedError> {
        let mut negate = false;
        match self.peek() {
            Some(Tok::Minus) => {
                self.bump();
                negate = true;
            }
            Some(Tok::Plus) => {
                self.bump();
            }
            _ => {}
        }
        let mut acc = self.term(chart, negate)?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    let t = self.term(chart, false)?;
                    acc = &acc + &t;
                }
                Some(Tok::Minus) => {
                    self.bump();
                    let t = self.term(chart, true)?;
                    acc = &acc + &t;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self, chart: &Arc<Chart>, negate: bool) -> Result<GradedPoly, GradedError> {
        let mut acc = GradedPoly::constant(chart, if negate { q(-1) } else { q(1) });
        let mut saw_factor = false;
        loop {
            match self.peek() {
                Some(Tok::Number(_)) | Some(Tok::Name(_)) => {
                    let f = self.factor(chart)?;
                    acc = &acc * &f;
                    saw_factor = true;
                    if let Some(Tok::Star) = self.peek() {
                        self.bump();
                        continue;
                    }
                    break;
                }
                Some(_) | None => break,
            }
        }
        if !saw_factor {
            let pos = self.tokens.get(self.pos).map_or(0, |(p, _)| *p);
            return Err(GradedError::Parse { pos, msg: "expected a factor".into() });
        }
        Ok(acc)
    }

    fn factor(&mut self, chart: &Arc<Chart>) -> Result<GradedPoly, GradedError> {
        let (pos, tok) = self.bump().expect("factor called with a token available");
        match tok {
            Tok::Number(text) => {
                let value = parse_rational(&text)
                    .ok_or(GradedError::Parse { pos, msg: format!("bad number `{text}`") })?;
                Ok(GradedPoly::constant(chart, value))
            }
            Tok::Name(name) => {
                let g = chart
                    .lookup(&name)
                    .ok_or_else(|| GradedError::UnknownGenerator(name.clone()))?;
                let base = GradedPoly::generator(chart, g);
                if let Some(Tok::Caret) = self.peek() {
                    self.bump();
                    let (epos, etok) = self
                        .bump()
                        .ok_or(GradedError::Parse { pos, msg: "expected exponent".into() })?;
                    let Tok::Number(digits) = etok else {
                        return Err(GradedError::Parse { pos: epos, msg: "expected exponent".into() });
                    };
                    let k: u32 = digits.parse().map_err(|_| GradedError::Parse {
                        pos: epos,
                        msg: format!("bad exponent `{digits}`"),
                    })?;
                    let mut acc = GradedPoly::one(chart);
                    for _ in 0..k {
                        acc = &acc * &base;
                    }
                    Ok(acc)
                } else {
                    Ok(base)
                }
            }
            other => Err(GradedError::Parse { pos, msg: format!("unexpected token {other:?}") }),
        }
    }
}

fn parse_rational(text: &str) -> Option<Q> {
    use num::bigint::BigInt;
    if let Some((n, d)) = text.split_once('/') {
        let num: BigInt = n.parse().ok()?;
        let den: BigInt = d.parse().ok()?;
        if den.is_zero() {
            return None;
        }
        Some(Q::new(num, den))
    } else {
        let num: BigInt = text.parse().ok()?;
        Some(Q::from_integer(num))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::qq;

    fn chart3() -> Arc<Chart> {
        Chart::default_names(3, 3, 3)
    }

    #[test]
    fn normalize_reorders_odd_factors() {
        let ch = chart3();
        // e2*e1 -> -e1*e2
        let p = GradedPoly::normalize(&ch, &[(vec![Gen::E(1), Gen::E(0)], q(1))]);
        let expected = GradedPoly::normalize(&ch, &[(vec![Gen::E(0), Gen::E(1)], q(-1))]);
        assert_eq!(p, expected);
        assert_eq!(p.to_string(), "-e1*e2");
    }

    #[test]
    fn normalize_kills_odd_squares() {
        let ch = chart3();
        let p = GradedPoly::normalize(&ch, &[(vec![Gen::E(0), Gen::E(0)], q(5))]);
        assert!(p.is_zero());
        assert_eq!(p.to_string(), "0");
    }

    #[test]
    fn multiplication_collects_and_signs() {
        let ch = chart3();
        // (x1*e1) * (x1*e2) = x1^2*e1*e2
        let a = parse_expr(&ch, "x1*e1").unwrap();
        let b = parse_expr(&ch, "x1*e2").unwrap();
        assert_eq!((&a * &b).to_string(), "x1^2*e1*e2");
        // (e2) * (e1) = -e1*e2
        let e1 = parse_expr(&ch, "e1").unwrap();
        let e2 = parse_expr(&ch, "e2").unwrap();
        assert_eq!((&e2 * &e1).to_string(), "-e1*e2");
        // graded commutativity on odd-even mixes
        let m = parse_expr(&ch, "x2*p3").unwrap();
        assert_eq!(&m * &e1, &e1 * &m);
    }

    #[test]
    fn degree_bookkeeping() {
        let ch = chart3();
        assert_eq!(parse_expr(&ch, "x1^4").unwrap().degree(), Some(0));
        assert_eq!(parse_expr(&ch, "e1*e2*p1").unwrap().degree(), Some(4));
        assert_eq!(parse_expr(&ch, "x1 + e1").unwrap().degree(), None);
        assert_eq!(GradedPoly::zero(&ch).degree(), Some(0));
    }

    #[test]
    fn left_derivative_signs() {
        let ch = chart3();
        let p = parse_expr(&ch, "e1*e2").unwrap();
        // d/de2 (e1 e2) = -e1 under the left-derivative convention.
        assert_eq!(p.partial_derivative(Gen::E(1)).to_string(), "-e1");
        assert_eq!(p.partial_derivative(Gen::E(0)).to_string(), "e2");
        // Even powers behave classically.
        let f = parse_expr(&ch, "3/2*x1^2*p2").unwrap();
        assert_eq!(f.partial_derivative(Gen::X(0)).to_string(), "3*x1*p2");
        assert_eq!(f.partial_derivative(Gen::P(1)).to_string(), "3/2*x1^2");
        // Odd derivative twice along the same direction is zero.
        let w = parse_expr(&ch, "e1*e2*e3").unwrap();
        assert!(w.partial_derivative(Gen::E(2)).partial_derivative(Gen::E(2)).is_zero());
    }

    #[test]
    fn substitute_respects_signs() {
        let ch = chart3();
        let p = parse_expr(&ch, "e1*e2").unwrap();
        // e1 -> e2 collapses to e2*e2 = 0.
        let mut map = BTreeMap::new();
        map.insert(Gen::E(0), parse_expr(&ch, "e2").unwrap());
        assert!(p.substitute(&map).unwrap().is_zero());
        // e1 -> e3 keeps the sign of the reordering: e3*e2 = -e2*e3.
        let mut map2 = BTreeMap::new();
        map2.insert(Gen::E(0), parse_expr(&ch, "e3").unwrap());
        assert_eq!(p.substitute(&map2).unwrap().to_string(), "-e2*e3");
        // Degree mismatch is rejected.
        let mut bad = BTreeMap::new();
        bad.insert(Gen::E(0), parse_expr(&ch, "x1").unwrap());
        assert!(p.substitute(&bad).is_err());
        // Zero replacements are allowed for any generator.
        let mut z = BTreeMap::new();
        z.insert(Gen::E(0), GradedPoly::zero(&ch));
        assert!(p.substitute(&z).unwrap().is_zero());
    }

    #[test]
    fn parse_round_trip() {
        let ch = chart3();
        for text in [
            "3/2*x1^2*e1*e3*p2",
            "x1*p1 - x2*p2 + 5",
            "-e1*e2 + 1/3*x3^3",
            "p1^2*x2",
        ] {
            let p = parse_expr(&ch, text).unwrap();
            let rendered = p.to_string();
            let reparsed = parse_expr(&ch, &rendered).unwrap();
            assert_eq!(p, reparsed, "round trip failed for `{text}` -> `{rendered}`");
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        let ch = chart3();
        assert!(matches!(
            parse_expr(&ch, "q7"),
            Err(GradedError::UnknownGenerator(_))
        ));
        assert!(parse_expr(&ch, "x1 +").is_err());
        assert!(parse_expr(&ch, "x1 ^ e1").is_err());
        assert!(parse_expr(&ch, "3//2").is_err());
    }

    #[test]
    fn eval_and_kill_x() {
        let ch = chart3();
        let p = parse_expr(&ch, "x1^2*e1 + x2*e2 + e3").unwrap();
        let at = p.eval_x(&[q(2), q(0), q(7)]);
        assert_eq!(at.to_string(), "4*e1 + e3");
        let killed = p.kill_x(&[0]);
        assert_eq!(killed.to_string(), "e3 + x2*e2");
    }

    #[test]
    fn coefficients_are_exact() {
        let ch = chart3();
        let p = parse_expr(&ch, "1/3*x1 + 1/6*x1").unwrap();
        assert_eq!(p, parse_expr(&ch, "1/2*x1").unwrap());
        let half = parse_expr(&ch, "1/2*x1").unwrap();
        assert_eq!(half.coeff(half.terms().next().unwrap().0), qq(1, 2));
    }
}
