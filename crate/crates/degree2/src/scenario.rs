//! Scenario files and the batch runner.
//!
//! A scenario file is a line-oriented, versioned description of one
//! hamiltonian structure (standard, twisted, algebroid double, or an
//! explicit chart/metric/hamiltonian triple), optional reduction data
//! (coisotropic frames or explicit ideal generators, group actions,
//! lagrangian frames, quadratic structures), and an ordered list of
//! tasks. Running a scenario produces a report whose rendering is
//! byte-deterministic for a fixed input: all orderings are stable and
//! every sampling seed is recorded in the report itself.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use num::bigint::BigInt;
use num::traits::Zero;
use thiserror::Error;

use crate::coiso::{
    ideal_from_data, reduce, reduce_dirac, reduce_quadratic, reducible_geometric,
    reducible_symbolic, CoisoError, CoisotropicIdeal, GeometricCoisoData, Reduction,
};
use crate::courant::{
    algebroid_chart, complex_j, standard_chart, standard_theta, symplectic_j,
    theta_from_lie_algebroid, twisted_theta, AtiyahExpr, CourantError, CourantScenario,
    ScenarioKind, SectionExpr,
};
use crate::graded::{parse_expr, Chart, GradedError, GradedPoly};
use crate::linalg::Mat;
use crate::moment::{
    self, courant_algebra_to_dgla, dgla_to_courant_algebra, extended_action_check,
    from_reduction_data, ham_reduce, regular_zero, validate_chain, validate_comoment,
    validate_courant_algebra, validate_dgla, validate_gla, AxiomCheck, DGLA2Data, HamAction,
    HamReduceOptions, LieAlgebra, MomentError,
};
use crate::rat::{q, Q};

/// Version tag expected in the `version` header line.
pub const FORMAT_VERSION: u32 = 1;
/// Version tag emitted in the first line of every report.
pub const REPORT_VERSION: u32 = 1;

/// The engine version recorded in reports.
pub fn engine_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// 64-bit FNV-1a digest; used to fingerprint scenario sources in reports
/// and to derive a default seed from the scenario label.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{origin}: {msg}")]
    Io { origin: String, msg: String },
    #[error("{origin}:{line}:{col}: parse error: {msg}")]
    Parse { origin: String, line: usize, col: usize, msg: String },
    #[error("{origin}:{line}: in `{block}`: {msg}")]
    Semantic { origin: String, line: usize, block: String, msg: String },
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// Reject any declared polynomial whose coordinate degree exceeds
    /// this bound (a guard for untrusted inputs).
    pub max_degree: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides the scenario's seed (which in turn defaults to the
    /// label digest).
    pub seed: Option<u64>,
    /// Extra sample points for the zero-level rank checks.
    pub samples: usize,
}

impl Default for RunOptions {
    fn default() -> RunOptions {
        RunOptions { seed: None, samples: 3 }
    }
}

/// The operations a scenario file can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskName {
    ValidateTheta,
    Axioms,
    ValidateCoiso,
    Reduce,
    ValidateGcs,
    ReduceGcs,
    ReduceDirac,
    ValidateAction,
    HamReduce,
    ExtendedAction,
    ValidateAlgebra,
}

impl TaskName {
    pub fn parse(name: &str) -> Option<TaskName> {
        Some(match name {
            "validate-theta" => TaskName::ValidateTheta,
            "axioms" => TaskName::Axioms,
            "validate-coiso" => TaskName::ValidateCoiso,
            "reduce" => TaskName::Reduce,
            "validate-gcs" => TaskName::ValidateGcs,
            "reduce-gcs" => TaskName::ReduceGcs,
            "reduce-dirac" => TaskName::ReduceDirac,
            "validate-action" => TaskName::ValidateAction,
            "ham-reduce" => TaskName::HamReduce,
            "extended-action" => TaskName::ExtendedAction,
            "validate-algebra" => TaskName::ValidateAlgebra,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::ValidateTheta => "validate-theta",
            TaskName::Axioms => "axioms",
            TaskName::ValidateCoiso => "validate-coiso",
            TaskName::Reduce => "reduce",
            TaskName::ValidateGcs => "validate-gcs",
            TaskName::ReduceGcs => "reduce-gcs",
            TaskName::ReduceDirac => "reduce-dirac",
            TaskName::ValidateAction => "validate-action",
            TaskName::HamReduce => "ham-reduce",
            TaskName::ExtendedAction => "extended-action",
            TaskName::ValidateAlgebra => "validate-algebra",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TaskSpec {
    pub name: TaskName,
    /// Declared expectation; recorded in the report and compared in the
    /// summary's mismatch count.
    pub expect_pass: bool,
}

/// Reduction input: either classical frame data or explicit triangular
/// ideal generators.
#[derive(Debug, Clone)]
pub enum CoisoBlock {
    Geometric(GeometricCoisoData),
    Explicit {
        drop_x: Vec<usize>,
        e_gens: Vec<(usize, GradedPoly)>,
        p_gens: Vec<(usize, GradedPoly)>,
    },
}

/// How the ham block describes the comoment data.
#[derive(Debug, Clone)]
pub enum HamRoute {
    /// Isotropic lifts of the group generators; the degree-2 and the
    /// remaining degree-1 images are derived from the hamiltonian.
    Psi(Vec<GradedPoly>),
    /// Fully explicit degree-2 and degree-1 images.
    Explicit { phi: Vec<GradedPoly>, rho: Vec<GradedPoly> },
}

#[derive(Debug, Clone)]
pub struct HamBlock {
    pub algebra: LieAlgebra,
    pub action: Vec<Mat>,
    pub dim_h: usize,
    pub route: Option<HamRoute>,
    pub mu: Vec<GradedPoly>,
}

#[derive(Debug, Clone)]
pub struct ExtendedBlock {
    pub algebra: LieAlgebra,
    pub action: Vec<Mat>,
    pub dim_h: usize,
    pub psi: Vec<GradedPoly>,
    pub mu: Vec<GradedPoly>,
}

/// A fully type-checked scenario: every expression is resolved against
/// the chart and every structural count is verified before any task
/// runs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub seed: Option<u64>,
    pub digest: u64,
    pub max_degree: Option<usize>,
    pub scenario: CourantScenario,
    pub coiso: Option<CoisoBlock>,
    pub ham: Option<HamBlock>,
    pub extended: Option<ExtendedBlock>,
    pub dirac: Option<Vec<SectionExpr>>,
    pub gcs: Option<AtiyahExpr>,
    pub tasks: Vec<TaskSpec>,
}

impl Scenario {
    /// Seed precedence: explicit override, then the file's `seed` line,
    /// then the label digest.
    pub fn effective_seed(&self, over: Option<u64>) -> u64 {
        over.or(self.seed).unwrap_or_else(|| fnv1a64(self.label.as_bytes()))
    }
}

// ---------------------------------------------------------------------------
// Parsing.

#[derive(Debug, Clone)]
struct Spanned {
    line: usize,
    col: usize,
    text: String,
}

#[derive(Debug, Clone, Copy)]
enum RawKind {
    Standard(usize),
    Twisted(usize),
    Algebroid(usize, usize),
    Explicit,
}

#[derive(Debug, Default)]
struct RawCoiso {
    drop_x: Vec<(usize, usize)>,
    k: Vec<Spanned>,
    f_index: Vec<(usize, usize)>,
    flat: Vec<Spanned>,
    e_gens: Vec<(usize, usize, Option<Spanned>)>,
    p_gens: Vec<(usize, usize, Option<Spanned>)>,
}

#[derive(Debug, Default)]
struct RawAction {
    line: usize,
    algebra: Option<LieAlgebra>,
    dim_h: Option<usize>,
    action: Vec<Vec<Q>>,
    psi: Vec<Spanned>,
    phi: Vec<Spanned>,
    rho: Vec<Spanned>,
    mu: Vec<Spanned>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GcsForm {
    Symplectic,
    Complex,
}

#[derive(Debug, Default)]
struct RawGcs {
    line: usize,
    j: Option<Spanned>,
    form: Option<GcsForm>,
    rows: Vec<Vec<Q>>,
}

#[derive(Debug, Default)]
struct Raw {
    label: Option<(usize, String)>,
    seed: Option<u64>,
    kind: Option<(usize, RawKind)>,
    chi: Vec<(usize, usize, usize, Spanned)>,
    rho: Vec<(usize, usize, Spanned)>,
    c: Vec<(usize, usize, usize, Spanned)>,
    chart_x: Option<Vec<String>>,
    chart_e: Option<Vec<String>>,
    chart_p: Option<Vec<String>>,
    metric_hyperbolic: Option<usize>,
    metric_rows: Vec<Vec<Q>>,
    theta: Option<Spanned>,
    bfield: Option<Spanned>,
    coiso: Option<(usize, RawCoiso)>,
    ham: Option<RawAction>,
    extended: Option<RawAction>,
    dirac: Option<(usize, Vec<Spanned>)>,
    gcs: Option<RawGcs>,
    tasks: Option<(usize, Vec<TaskSpec>)>,
}

struct Line<'a> {
    no: usize,
    raw: &'a str,
    toks: Vec<(usize, &'a str)>,
}

impl<'a> Line<'a> {
    fn key(&self) -> &'a str {
        self.toks[0].1
    }

    fn arg(&self, k: usize) -> Option<(usize, &'a str)> {
        self.toks.get(k).copied()
    }

    /// The tail of the line starting at token `from`, with its column.
    fn tail(&self, from: usize) -> Option<(usize, &'a str)> {
        self.toks.get(from).map(|&(off, _)| (off, self.raw[off..].trim_end()))
    }

    fn spanned(&self, from: usize) -> Option<Spanned> {
        self.tail(from).map(|(off, text)| Spanned {
            line: self.no,
            col: off + 1,
            text: text.to_string(),
        })
    }
}

fn tokenize_line(raw: &str) -> Vec<(usize, &str)> {
    let bytes = raw.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        toks.push((start, &raw[start..i]));
    }
    toks
}

struct Parser<'a> {
    origin: &'a str,
    lines: Vec<Line<'a>>,
    idx: usize,
    last_line_no: usize,
}

impl<'a> Parser<'a> {
    fn perr(&self, line: usize, col: usize, msg: impl Into<String>) -> ScenarioError {
        ScenarioError::Parse { origin: self.origin.to_string(), line, col, msg: msg.into() }
    }

    fn serr(&self, line: usize, block: &str, msg: impl Into<String>) -> ScenarioError {
        ScenarioError::Semantic {
            origin: self.origin.to_string(),
            line,
            block: block.to_string(),
            msg: msg.into(),
        }
    }

    /// Consumes the next significant line, returning its index so the
    /// caller can re-borrow it immutably.
    fn take_line(&mut self) -> Option<usize> {
        if self.idx < self.lines.len() {
            self.idx += 1;
            Some(self.idx - 1)
        } else {
            None
        }
    }

    fn parse_usize(&self, line: usize, tok: Option<(usize, &str)>, what: &str) -> Result<usize, ScenarioError> {
        let (col, text) = tok.ok_or_else(|| self.perr(line, 1, format!("expected {what}")))?;
        text.parse::<usize>().map_err(|_| self.perr(line, col + 1, format!("bad {what} `{text}`")))
    }

    fn parse_u64(&self, line: usize, tok: Option<(usize, &str)>, what: &str) -> Result<u64, ScenarioError> {
        let (col, text) = tok.ok_or_else(|| self.perr(line, 1, format!("expected {what}")))?;
        text.parse::<u64>().map_err(|_| self.perr(line, col + 1, format!("bad {what} `{text}`")))
    }

    fn parse_rational(&self, line: usize, col: usize, text: &str) -> Result<Q, ScenarioError> {
        let bad = || self.perr(line, col + 1, format!("bad rational `{text}`"));
        if let Some((n, d)) = text.split_once('/') {
            let num: BigInt = n.parse().map_err(|_| bad())?;
            let den: BigInt = d.parse().map_err(|_| bad())?;
            if den.is_zero() {
                return Err(bad());
            }
            Ok(Q::new(num, den))
        } else {
            let num: BigInt = text.parse().map_err(|_| bad())?;
            Ok(Q::from_integer(num))
        }
    }

    fn rational_row(&self, l: &Line<'a>, from: usize) -> Result<Vec<Q>, ScenarioError> {
        let mut row = Vec::new();
        for &(off, text) in &l.toks[from..] {
            row.push(self.parse_rational(l.no, off, text)?);
        }
        if row.is_empty() {
            return Err(self.perr(l.no, 1, format!("`{}` requires at least one entry", l.key())));
        }
        Ok(row)
    }

    fn index_list(&self, l: &Line<'a>, what: &str) -> Result<Vec<(usize, usize)>, ScenarioError> {
        let mut out = Vec::new();
        for &(off, text) in &l.toks[1..] {
            let v: usize = text
                .parse()
                .map_err(|_| self.perr(l.no, off + 1, format!("bad {what} `{text}`")))?;
            if v == 0 {
                return Err(self.perr(l.no, off + 1, format!("{what} indices are 1-based")));
            }
            out.push((l.no, v));
        }
        if out.is_empty() {
            return Err(self.perr(l.no, 1, format!("`{}` requires at least one index", l.key())));
        }
        Ok(out)
    }

    fn required_tail(&self, l: &Line<'a>, from: usize, what: &str) -> Result<Spanned, ScenarioError> {
        l.spanned(from).ok_or_else(|| self.perr(l.no, 1, format!("expected {what}")))
    }

    fn unique<T>(&self, slot: &Option<T>, line: usize, what: &str) -> Result<(), ScenarioError> {
        if slot.is_some() {
            return Err(self.perr(line, 1, format!("duplicate `{what}`")));
        }
        Ok(())
    }

    fn parse_algebra(&self, l: &Line<'a>) -> Result<LieAlgebra, ScenarioError> {
        let (col, name) = l
            .arg(1)
            .ok_or_else(|| self.perr(l.no, 1, "expected an algebra name"))?;
        match name {
            "abelian" => {
                let n = self.parse_usize(l.no, l.arg(2), "algebra dimension")?;
                Ok(LieAlgebra::abelian(n))
            }
            "so3" => Ok(LieAlgebra::so3()),
            "solvable2" => Ok(LieAlgebra::solvable2()),
            "heisenberg3" => Ok(LieAlgebra::heisenberg3()),
            other => Err(self.perr(l.no, col + 1, format!("unknown algebra `{other}`"))),
        }
    }

    fn parse_coiso_block(&mut self) -> Result<RawCoiso, ScenarioError> {
        let mut out = RawCoiso::default();
        loop {
            let Some(li) = self.take_line() else {
                return Err(self.perr(self.last_line_no + 1, 1, "unterminated `coiso` block (missing `end`)"));
            };
            let l = &self.lines[li];
            match l.key() {
                "end" => return Ok(out),
                "drop-x" => out.drop_x.extend(self.index_list(l, "coordinate index")?),
                "f-index" => out.f_index.extend(self.index_list(l, "coordinate index")?),
                "k" => {
                    let sp = self.required_tail(l, 1, "a section expression")?;
                    out.k.push(sp);
                }
                "flat" => {
                    let sp = self.required_tail(l, 1, "a section expression")?;
                    out.flat.push(sp);
                }
                "e-gen" | "p-gen" => {
                    let no = l.no;
                    let idx = self.parse_usize(no, l.arg(1), "generator index")?;
                    if idx == 0 {
                        return Err(self.perr(no, 1, "generator indices are 1-based"));
                    }
                    let tail = l.spanned(2);
                    if l.key() == "e-gen" {
                        out.e_gens.push((no, idx, tail));
                    } else {
                        out.p_gens.push((no, idx, tail));
                    }
                }
                other => {
                    return Err(self.perr(l.no, l.toks[0].0 + 1, format!("unknown `coiso` directive `{other}`")))
                }
            }
        }
    }

    fn parse_action_block(&mut self, kind: &str, start: usize) -> Result<RawAction, ScenarioError> {
        let mut out = RawAction { line: start, ..RawAction::default() };
        loop {
            let Some(li) = self.take_line() else {
                return Err(self.perr(
                    self.last_line_no + 1,
                    1,
                    format!("unterminated `{kind}` block (missing `end`)"),
                ));
            };
            let l = &self.lines[li];
            match l.key() {
                "end" => return Ok(out),
                "algebra" => {
                    self.unique(&out.algebra, l.no, "algebra")?;
                    out.algebra = Some(self.parse_algebra(l)?);
                }
                "dim-h" => {
                    self.unique(&out.dim_h, l.no, "dim-h")?;
                    out.dim_h = Some(self.parse_usize(l.no, l.arg(1), "module dimension")?);
                }
                "action" => out.action.push(self.rational_row(l, 1)?),
                "psi" => out.psi.push(self.required_tail(l, 1, "a section expression")?),
                "phi" if kind == "ham" => {
                    out.phi.push(self.required_tail(l, 1, "a degree-2 expression")?)
                }
                "rho" if kind == "ham" => {
                    out.rho.push(self.required_tail(l, 1, "a section expression")?)
                }
                "mu" => out.mu.push(self.required_tail(l, 1, "a degree-0 expression")?),
                other => {
                    return Err(self.perr(l.no, l.toks[0].0 + 1, format!("unknown `{kind}` directive `{other}`")))
                }
            }
        }
    }

    fn parse_dirac_block(&mut self) -> Result<Vec<Spanned>, ScenarioError> {
        let mut out = Vec::new();
        loop {
            let Some(li) = self.take_line() else {
                return Err(self.perr(self.last_line_no + 1, 1, "unterminated `dirac` block (missing `end`)"));
            };
            let l = &self.lines[li];
            match l.key() {
                "end" => return Ok(out),
                "l" => out.push(self.required_tail(l, 1, "a section expression")?),
                other => {
                    return Err(self.perr(l.no, l.toks[0].0 + 1, format!("unknown `dirac` directive `{other}`")))
                }
            }
        }
    }

    fn parse_gcs_block(&mut self, start: usize) -> Result<RawGcs, ScenarioError> {
        let mut out = RawGcs { line: start, ..RawGcs::default() };
        loop {
            let Some(li) = self.take_line() else {
                return Err(self.perr(self.last_line_no + 1, 1, "unterminated `gcs` block (missing `end`)"));
            };
            let l = &self.lines[li];
            match l.key() {
                "end" => return Ok(out),
                "j" => {
                    self.unique(&out.j, l.no, "j")?;
                    out.j = Some(self.required_tail(l, 1, "a quadratic expression")?);
                }
                "j-symplectic" => {
                    self.unique(&out.form, l.no, "j-symplectic")?;
                    out.form = Some(GcsForm::Symplectic);
                }
                "j-complex" => {
                    self.unique(&out.form, l.no, "j-complex")?;
                    out.form = Some(GcsForm::Complex);
                }
                "row" => out.rows.push(self.rational_row(l, 1)?),
                other => {
                    return Err(self.perr(l.no, l.toks[0].0 + 1, format!("unknown `gcs` directive `{other}`")))
                }
            }
        }
    }

    fn parse_tasks_block(&mut self) -> Result<Vec<TaskSpec>, ScenarioError> {
        let mut out = Vec::new();
        loop {
            let Some(li) = self.take_line() else {
                return Err(self.perr(self.last_line_no + 1, 1, "unterminated `tasks` block (missing `end`)"));
            };
            let l = &self.lines[li];
            if l.key() == "end" {
                return Ok(out);
            }
            let Some(name) = TaskName::parse(l.key()) else {
                return Err(self.perr(l.no, l.toks[0].0 + 1, format!("unknown task `{}`", l.key())));
            };
            let expect_pass = match l.arg(1) {
                None => true,
                Some((col, "expect")) => match l.arg(2) {
                    Some((_, "pass")) => true,
                    Some((_, "fail")) => false,
                    _ => return Err(self.perr(l.no, col + 1, "expected `expect pass` or `expect fail`")),
                },
                Some((col, other)) => {
                    return Err(self.perr(l.no, col + 1, format!("unexpected token `{other}` after task name")))
                }
            };
            out.push(TaskSpec { name, expect_pass });
        }
    }

    fn collect(&mut self) -> Result<Raw, ScenarioError> {
        let mut raw = Raw::default();
        let Some(fi) = self.take_line() else {
            return Err(self.perr(1, 1, "empty scenario file (expected `version 1`)"));
        };
        let first = &self.lines[fi];
        if first.key() != "version" {
            return Err(self.perr(first.no, first.toks[0].0 + 1, "expected `version 1` header"));
        }
        let (vcol, vtext) = first
            .arg(1)
            .ok_or_else(|| self.perr(first.no, 1, "expected a format version"))?;
        let first_no = first.no;
        if vtext.parse::<u32>().ok() != Some(FORMAT_VERSION) {
            return Err(self.perr(first_no, vcol + 1, format!("unsupported format version `{vtext}`")));
        }
        while let Some(li) = self.take_line() {
            let l = &self.lines[li];
            let no = l.no;
            let keycol = l.toks[0].0 + 1;
            let key = l.key();
            match key {
                "label" => {
                    self.unique(&raw.label, no, "label")?;
                    let sp = self.required_tail(l, 1, "a label text")?;
                    raw.label = Some((no, sp.text));
                }
                "seed" => {
                    if raw.seed.is_some() {
                        return Err(self.perr(no, keycol, "duplicate `seed`"));
                    }
                    raw.seed = Some(self.parse_u64(no, l.arg(1), "seed")?);
                }
                "scenario" => {
                    self.unique(&raw.kind, no, "scenario")?;
                    let (col, which) = l
                        .arg(1)
                        .ok_or_else(|| self.perr(no, 1, "expected a scenario kind"))?;
                    let kind = match which {
                        "standard" => RawKind::Standard(self.parse_usize(no, l.arg(2), "dimension")?),
                        "twisted" => RawKind::Twisted(self.parse_usize(no, l.arg(2), "dimension")?),
                        "algebroid" => {
                            let base = self.parse_usize(no, l.arg(2), "base dimension")?;
                            let fiber = self.parse_usize(no, l.arg(3), "fiber rank")?;
                            RawKind::Algebroid(base, fiber)
                        }
                        "explicit" => RawKind::Explicit,
                        other => {
                            return Err(self.perr(no, col + 1, format!("unknown scenario kind `{other}`")))
                        }
                    };
                    raw.kind = Some((no, kind));
                }
                "chi" => {
                    let i = self.parse_usize(no, l.arg(1), "twist index")?;
                    let j = self.parse_usize(no, l.arg(2), "twist index")?;
                    let k = self.parse_usize(no, l.arg(3), "twist index")?;
                    let sp = self.required_tail(l, 4, "a twist coefficient")?;
                    raw.chi.push((i, j, k, sp));
                }
                "rho" => {
                    let a = self.parse_usize(no, l.arg(1), "fiber index")?;
                    let i = self.parse_usize(no, l.arg(2), "base index")?;
                    let sp = self.required_tail(l, 3, "an anchor coefficient")?;
                    raw.rho.push((a, i, sp));
                }
                "c" => {
                    let cc = self.parse_usize(no, l.arg(1), "fiber index")?;
                    let a = self.parse_usize(no, l.arg(2), "fiber index")?;
                    let b = self.parse_usize(no, l.arg(3), "fiber index")?;
                    let sp = self.required_tail(l, 4, "a structure coefficient")?;
                    raw.c.push((cc, a, b, sp));
                }
                "chart-x" | "chart-e" | "chart-p" => {
                    let names: Vec<String> = l.toks[1..].iter().map(|&(_, t)| t.to_string()).collect();
                    let slot = match key {
                        "chart-x" => &mut raw.chart_x,
                        "chart-e" => &mut raw.chart_e,
                        _ => &mut raw.chart_p,
                    };
                    if slot.is_some() {
                        return Err(self.perr(no, keycol, format!("duplicate `{key}`")));
                    }
                    *slot = Some(names);
                }
                "metric" => {
                    if raw.metric_hyperbolic.is_some() {
                        return Err(self.perr(no, keycol, "duplicate `metric`"));
                    }
                    match l.arg(1) {
                        Some((_, "hyperbolic")) => raw.metric_hyperbolic = Some(no),
                        Some((col, other)) => {
                            return Err(self.perr(no, col + 1, format!("unknown metric `{other}`")))
                        }
                        None => return Err(self.perr(no, 1, "expected a metric kind")),
                    }
                }
                "metric-row" => raw.metric_rows.push(self.rational_row(l, 1)?),
                "theta" => {
                    self.unique(&raw.theta, no, "theta")?;
                    raw.theta = Some(self.required_tail(l, 1, "a hamiltonian expression")?);
                }
                "bfield" => {
                    self.unique(&raw.bfield, no, "bfield")?;
                    raw.bfield = Some(self.required_tail(l, 1, "a quadratic expression")?);
                }
                "coiso" => {
                    self.unique(&raw.coiso, no, "coiso")?;
                    let block = self.parse_coiso_block()?;
                    raw.coiso = Some((no, block));
                }
                "ham" => {
                    self.unique(&raw.ham, no, "ham")?;
                    raw.ham = Some(self.parse_action_block("ham", no)?);
                }
                "extended" => {
                    self.unique(&raw.extended, no, "extended")?;
                    raw.extended = Some(self.parse_action_block("extended", no)?);
                }
                "dirac" => {
                    self.unique(&raw.dirac, no, "dirac")?;
                    let frame = self.parse_dirac_block()?;
                    raw.dirac = Some((no, frame));
                }
                "gcs" => {
                    self.unique(&raw.gcs, no, "gcs")?;
                    raw.gcs = Some(self.parse_gcs_block(no)?);
                }
                "tasks" => {
                    self.unique(&raw.tasks, no, "tasks")?;
                    let tasks = self.parse_tasks_block()?;
                    raw.tasks = Some((no, tasks));
                }
                other => return Err(self.perr(no, keycol, format!("unknown directive `{other}`"))),
            }
        }
        Ok(raw)
    }
}

/// Parses and fully type-checks a scenario from source text. `origin`
/// names the input in error messages (usually the file path).
pub fn parse_str(origin: &str, src: &str, opts: &ParseOptions) -> Result<Scenario, ScenarioError> {
    let mut lines = Vec::new();
    let mut last_line_no = 0;
    for (i, raw_line) in src.lines().enumerate() {
        let noc = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        };
        let toks = tokenize_line(noc);
        if toks.is_empty() {
            continue;
        }
        last_line_no = i + 1;
        lines.push(Line { no: i + 1, raw: noc, toks });
    }
    let mut parser = Parser { origin, lines, idx: 0, last_line_no };
    let raw = parser.collect()?;
    build(&parser, raw, src, opts)
}

/// Reads and parses a scenario file.
pub fn parse_file(path: &Path, opts: &ParseOptions) -> Result<Scenario, ScenarioError> {
    let origin = path.display().to_string();
    let src = fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { origin: origin.clone(), msg: e.to_string() })?;
    parse_str(&origin, &src, opts)
}

fn resolve_poly(
    p: &Parser<'_>,
    chart: &Arc<Chart>,
    sp: &Spanned,
    block: &str,
    max_degree: Option<usize>,
) -> Result<GradedPoly, ScenarioError> {
    let poly = parse_expr(chart, &sp.text).map_err(|e| match e {
        GradedError::Parse { pos, msg } => p.perr(sp.line, sp.col + pos, msg),
        GradedError::UnknownGenerator(g) => {
            p.serr(sp.line, block, format!("unknown generator `{g}`"))
        }
        other => p.serr(sp.line, block, other.to_string()),
    })?;
    if let Some(d) = max_degree {
        if poly.x_degree() > d {
            return Err(p.serr(
                sp.line,
                block,
                format!("coordinate degree {} exceeds the configured maximum {d}", poly.x_degree()),
            ));
        }
    }
    Ok(poly)
}

fn want_homogeneous(
    p: &Parser<'_>,
    sp: &Spanned,
    block: &str,
    poly: &GradedPoly,
    degree: usize,
    allow_zero: bool,
) -> Result<(), ScenarioError> {
    if poly.is_zero() && allow_zero {
        return Ok(());
    }
    if !poly.is_homogeneous_of(degree) {
        return Err(p.serr(sp.line, block, format!("expected a homogeneous element of degree {degree}")));
    }
    Ok(())
}

fn hyperbolic_metric(n_e: usize) -> Option<Mat> {
    if n_e % 2 != 0 {
        return None;
    }
    let h = n_e / 2;
    let mut g = Mat::zeros(n_e, n_e);
    for i in 0..h {
        g.set(i, h + i, q(1));
        g.set(h + i, i, q(1));
    }
    Some(g)
}

fn check_index(
    p: &Parser<'_>,
    entries: &[(usize, usize)],
    bound: usize,
    block: &str,
    what: &str,
) -> Result<Vec<usize>, ScenarioError> {
    let mut out = Vec::new();
    for &(line, v) in entries {
        if v > bound {
            return Err(p.serr(line, block, format!("{what} index {v} out of range (1..={bound})")));
        }
        out.push(v - 1);
    }
    Ok(out)
}

fn resolve_action_matrices(
    p: &Parser<'_>,
    rawact: &RawAction,
    block: &str,
    dim_g: usize,
    dim_h: usize,
) -> Result<Vec<Mat>, ScenarioError> {
    if rawact.action.is_empty() {
        return Ok((0..dim_g).map(|_| Mat::zeros(dim_h, dim_h)).collect());
    }
    if rawact.action.len() != dim_g {
        return Err(p.serr(
            rawact.line,
            block,
            format!("expected {dim_g} `action` lines, found {}", rawact.action.len()),
        ));
    }
    let mut out = Vec::new();
    for row in &rawact.action {
        if row.len() != dim_h * dim_h {
            return Err(p.serr(
                rawact.line,
                block,
                format!("each `action` line needs {} entries (row-major {dim_h} x {dim_h})", dim_h * dim_h),
            ));
        }
        let rows: Vec<Vec<Q>> = row.chunks(dim_h).map(|c| c.to_vec()).collect();
        out.push(Mat::from_rows(rows));
    }
    Ok(out)
}

fn build(
    p: &Parser<'_>,
    raw: Raw,
    src: &str,
    opts: &ParseOptions,
) -> Result<Scenario, ScenarioError> {
    let (_, label) = raw
        .label
        .clone()
        .ok_or_else(|| p.serr(1, "file", "missing `label` line"))?;
    let (kind_line, kind) = raw
        .kind
        .ok_or_else(|| p.serr(1, "file", "missing `scenario` line"))?;
    let md = opts.max_degree;

    let mut built = match kind {
        RawKind::Standard(n) => {
            if n == 0 {
                return Err(p.serr(kind_line, "scenario", "dimension must be positive"));
            }
            if !raw.chi.is_empty() {
                return Err(p.serr(raw.chi[0].3.line, "chi", "chi lines require a twisted scenario"));
            }
            standard_theta(n)
        }
        RawKind::Twisted(n) => {
            if n == 0 {
                return Err(p.serr(kind_line, "scenario", "dimension must be positive"));
            }
            let chart = standard_chart(n);
            let mut triples = Vec::new();
            for (i, j, k, sp) in &raw.chi {
                for &v in [i, j, k].iter() {
                    if *v == 0 || *v > n {
                        return Err(p.serr(sp.line, "chi", format!("twist index {v} out of range (1..={n})")));
                    }
                }
                let coeff = resolve_poly(p, &chart, sp, "chi", md)?;
                triples.push((i - 1, j - 1, k - 1, coeff));
            }
            twisted_theta(n, &triples).map_err(|e| p.serr(kind_line, "chi", e.to_string()))?
        }
        RawKind::Algebroid(base, fiber) => {
            if fiber == 0 {
                return Err(p.serr(kind_line, "scenario", "fiber rank must be positive"));
            }
            let chart = algebroid_chart(base, fiber);
            let zero = GradedPoly::zero(&chart);
            let mut rho = vec![vec![zero.clone(); base]; fiber];
            let mut rho_seen = BTreeSet::new();
            for (a, i, sp) in &raw.rho {
                if *a == 0 || *a > fiber || *i == 0 || *i > base {
                    return Err(p.serr(sp.line, "rho", format!("anchor entry ({a},{i}) out of range")));
                }
                if !rho_seen.insert((*a, *i)) {
                    return Err(p.serr(sp.line, "rho", format!("duplicate anchor entry ({a},{i})")));
                }
                rho[a - 1][i - 1] = resolve_poly(p, &chart, sp, "rho", md)?;
            }
            let mut c = vec![vec![vec![zero.clone(); fiber]; fiber]; fiber];
            let mut c_seen = BTreeSet::new();
            for (cc, a, b, sp) in &raw.c {
                for &v in [cc, a, b].iter() {
                    if *v == 0 || *v > fiber {
                        return Err(p.serr(sp.line, "c", format!("structure index {v} out of range (1..={fiber})")));
                    }
                }
                if a == b {
                    return Err(p.serr(sp.line, "c", "structure entries need distinct lower indices"));
                }
                if !c_seen.insert((*cc, a.min(b), a.max(b))) {
                    return Err(p.serr(sp.line, "c", format!("duplicate structure entry ({cc},{a},{b})")));
                }
                let coeff = resolve_poly(p, &chart, sp, "c", md)?;
                c[cc - 1][a - 1][b - 1] = coeff.clone();
                c[cc - 1][b - 1][a - 1] = -&coeff;
            }
            theta_from_lie_algebroid(base, fiber, &rho, &c)
                .map_err(|e| p.serr(kind_line, "scenario", e.to_string()))?
        }
        RawKind::Explicit => {
            let e_names = raw
                .chart_e
                .clone()
                .ok_or_else(|| p.serr(kind_line, "scenario", "explicit scenarios need a `chart-e` line"))?;
            let x_names = raw.chart_x.clone().unwrap_or_default();
            let p_names = raw.chart_p.clone().unwrap_or_default();
            let chart = Chart::new(x_names, e_names, p_names)
                .map_err(|e| p.serr(kind_line, "scenario", e.to_string()))?;
            let metric = if let Some(line) = raw.metric_hyperbolic {
                if !raw.metric_rows.is_empty() {
                    return Err(p.serr(line, "metric", "`metric hyperbolic` excludes `metric-row` lines"));
                }
                hyperbolic_metric(chart.n_e()).ok_or_else(|| {
                    p.serr(line, "metric", "hyperbolic metric needs an even number of degree-1 generators")
                })?
            } else {
                let n = chart.n_e();
                if raw.metric_rows.len() != n || raw.metric_rows.iter().any(|r| r.len() != n) {
                    return Err(p.serr(kind_line, "metric", format!("expected {n} `metric-row` lines of {n} entries")));
                }
                Mat::from_rows(raw.metric_rows.clone())
            };
            let bracket = crate::poisson::BracketData::new(chart.clone(), metric)
                .map_err(|e| p.serr(kind_line, "metric", e.to_string()))?;
            let theta_sp = raw
                .theta
                .as_ref()
                .ok_or_else(|| p.serr(kind_line, "scenario", "explicit scenarios need a `theta` line"))?;
            let theta = resolve_poly(p, &chart, theta_sp, "theta", md)?;
            CourantScenario::new(bracket, theta, label.clone(), ScenarioKind::Explicit)
                .map_err(|e| p.serr(theta_sp.line, "theta", e.to_string()))?
        }
    };
    if !matches!(kind, RawKind::Explicit) {
        if let Some(sp) = &raw.theta {
            return Err(p.serr(sp.line, "theta", "theta lines require an explicit scenario"));
        }
        if raw.chart_x.is_some() || raw.chart_e.is_some() || raw.chart_p.is_some() {
            return Err(p.serr(kind_line, "scenario", "chart lines require an explicit scenario"));
        }
        if raw.metric_hyperbolic.is_some() || !raw.metric_rows.is_empty() {
            return Err(p.serr(kind_line, "scenario", "metric lines require an explicit scenario"));
        }
    }
    if !matches!(kind, RawKind::Algebroid(..)) && (!raw.rho.is_empty() || !raw.c.is_empty()) {
        return Err(p.serr(kind_line, "scenario", "rho/c lines require an algebroid scenario"));
    }
    built = built.with_label(label.clone());
    if let Some(sp) = &raw.bfield {
        let poly = resolve_poly(p, built.chart(), sp, "bfield", md)?;
        let b = AtiyahExpr::new(poly).map_err(|e| p.serr(sp.line, "bfield", e.to_string()))?;
        built = built
            .bfield_transform(&b)
            .map_err(|e| p.serr(sp.line, "bfield", e.to_string()))?;
    }
    let chart = built.chart().clone();

    let coiso = match &raw.coiso {
        None => None,
        Some((line, c)) => {
            let explicit = !c.e_gens.is_empty() || !c.p_gens.is_empty();
            if explicit && (!c.k.is_empty() || !c.flat.is_empty() || !c.f_index.is_empty()) {
                return Err(p.serr(
                    *line,
                    "coiso",
                    "explicit generators (e-gen/p-gen) cannot be mixed with frame data (k/flat/f-index)",
                ));
            }
            let drop_x = check_index(p, &c.drop_x, chart.n_x(), "coiso", "coordinate")?;
            if explicit {
                let mut e_gens = Vec::new();
                for (line_no, idx, tail) in &c.e_gens {
                    if *idx > chart.n_e() {
                        return Err(p.serr(*line_no, "coiso", format!("e-generator index {idx} out of range")));
                    }
                    let tail_poly = match tail {
                        Some(sp) => {
                            let poly = resolve_poly(p, &chart, sp, "coiso", md)?;
                            want_homogeneous(p, sp, "coiso", &poly, 1, true)?;
                            poly
                        }
                        None => GradedPoly::zero(&chart),
                    };
                    e_gens.push((*idx - 1, tail_poly));
                }
                let mut p_gens = Vec::new();
                for (line_no, idx, tail) in &c.p_gens {
                    if *idx > chart.n_p() {
                        return Err(p.serr(*line_no, "coiso", format!("p-generator index {idx} out of range")));
                    }
                    let tail_poly = match tail {
                        Some(sp) => {
                            let poly = resolve_poly(p, &chart, sp, "coiso", md)?;
                            want_homogeneous(p, sp, "coiso", &poly, 2, true)?;
                            poly
                        }
                        None => GradedPoly::zero(&chart),
                    };
                    p_gens.push((*idx - 1, tail_poly));
                }
                Some(CoisoBlock::Explicit { drop_x, e_gens, p_gens })
            } else {
                let f_index = check_index(p, &c.f_index, chart.n_x(), "coiso", "leaf")?;
                let mut k_frame = Vec::new();
                for sp in &c.k {
                    let poly = resolve_poly(p, &chart, sp, "coiso", md)?;
                    let s = SectionExpr::new(poly).map_err(|e| p.serr(sp.line, "coiso", e.to_string()))?;
                    k_frame.push(s);
                }
                let mut flat_frame = Vec::new();
                for sp in &c.flat {
                    let poly = resolve_poly(p, &chart, sp, "coiso", md)?;
                    let s = SectionExpr::new(poly).map_err(|e| p.serr(sp.line, "coiso", e.to_string()))?;
                    flat_frame.push(s);
                }
                Some(CoisoBlock::Geometric(GeometricCoisoData { drop_x, k_frame, f_index, flat_frame }))
            }
        }
    };

    let ham = match &raw.ham {
        None => None,
        Some(h) => Some(resolve_ham(p, h, &chart, md)?),
    };
    let extended = match &raw.extended {
        None => None,
        Some(h) => Some(resolve_extended(p, h, &chart, md)?),
    };

    let dirac = match &raw.dirac {
        None => None,
        Some((_, frame)) => {
            let mut out = Vec::new();
            for sp in frame {
                let poly = resolve_poly(p, &chart, sp, "dirac", md)?;
                let s = SectionExpr::new(poly).map_err(|e| p.serr(sp.line, "dirac", e.to_string()))?;
                out.push(s);
            }
            Some(out)
        }
    };

    let gcs = match &raw.gcs {
        None => None,
        Some(g) => Some(resolve_gcs(p, g, &built, md)?),
    };

    let tasks = raw.tasks.clone().map(|(_, t)| t).unwrap_or_default();
    let tasks_line = raw.tasks.as_ref().map_or(1, |(l, _)| *l);
    for t in &tasks {
        let name = t.name.as_str();
        let need = |cond: bool, what: &str| -> Result<(), ScenarioError> {
            if cond {
                Ok(())
            } else {
                Err(p.serr(tasks_line, "tasks", format!("task `{name}` requires {what}")))
            }
        };
        match t.name {
            TaskName::ValidateCoiso | TaskName::Reduce => need(coiso.is_some(), "a `coiso` block")?,
            TaskName::ValidateGcs => need(gcs.is_some(), "a `gcs` block")?,
            TaskName::ReduceGcs => {
                need(matches!(coiso, Some(CoisoBlock::Geometric(_))), "a `coiso` block with frame data")?;
                need(gcs.is_some(), "a `gcs` block")?;
            }
            TaskName::ReduceDirac => {
                need(matches!(coiso, Some(CoisoBlock::Geometric(_))), "a `coiso` block with frame data")?;
                need(dirac.is_some(), "a `dirac` block")?;
            }
            TaskName::ValidateAction | TaskName::HamReduce => {
                need(ham.as_ref().is_some_and(|h| h.route.is_some()), "a `ham` block with psi or phi/rho lines")?;
            }
            TaskName::ExtendedAction => need(extended.is_some(), "an `extended` block")?,
            TaskName::ValidateAlgebra => need(ham.is_some(), "a `ham` block")?,
            TaskName::ValidateTheta | TaskName::Axioms => {}
        }
    }

    Ok(Scenario {
        label,
        seed: raw.seed,
        digest: fnv1a64(src.as_bytes()),
        max_degree: opts.max_degree,
        scenario: built,
        coiso,
        ham,
        extended,
        dirac,
        gcs,
        tasks,
    })
}

fn resolve_ham(
    p: &Parser<'_>,
    h: &RawAction,
    chart: &Arc<Chart>,
    md: Option<usize>,
) -> Result<HamBlock, ScenarioError> {
    let algebra = h
        .algebra
        .clone()
        .ok_or_else(|| p.serr(h.line, "ham", "missing `algebra` line"))?;
    let dim_g = algebra.dim();
    let dim_h = match h.dim_h {
        Some(d) => {
            if !h.mu.is_empty() && h.mu.len() != d {
                return Err(p.serr(h.line, "ham", format!("dim-h {d} disagrees with {} `mu` lines", h.mu.len())));
            }
            d
        }
        None => h.mu.len(),
    };
    let action = resolve_action_matrices(p, h, "ham", dim_g, dim_h)?;
    let mut mu = Vec::new();
    for sp in &h.mu {
        let poly = resolve_poly(p, chart, sp, "ham", md)?;
        if !poly.is_homogeneous_of(0) {
            return Err(p.serr(sp.line, "ham", "`mu` entries must have degree 0"));
        }
        mu.push(poly);
    }
    let has_psi = !h.psi.is_empty();
    let has_explicit = !h.phi.is_empty() || !h.rho.is_empty();
    if has_psi && has_explicit {
        return Err(p.serr(h.line, "ham", "`psi` lines cannot be combined with `phi`/`rho` lines"));
    }
    let route = if has_explicit {
        if h.phi.len() != dim_g {
            return Err(p.serr(h.line, "ham", format!("expected {dim_g} `phi` lines, found {}", h.phi.len())));
        }
        if h.rho.len() != dim_g + dim_h {
            return Err(p.serr(
                h.line,
                "ham",
                format!("expected {} `rho` lines, found {}", dim_g + dim_h, h.rho.len()),
            ));
        }
        let mut phi = Vec::new();
        for sp in &h.phi {
            let poly = resolve_poly(p, chart, sp, "ham", md)?;
            want_homogeneous(p, sp, "ham", &poly, 2, true)?;
            phi.push(poly);
        }
        let mut rho = Vec::new();
        for sp in &h.rho {
            let poly = resolve_poly(p, chart, sp, "ham", md)?;
            want_homogeneous(p, sp, "ham", &poly, 1, true)?;
            rho.push(poly);
        }
        Some(HamRoute::Explicit { phi, rho })
    } else if has_psi || (dim_g == 0 && !mu.is_empty()) {
        if h.psi.len() != dim_g {
            return Err(p.serr(h.line, "ham", format!("expected {dim_g} `psi` lines, found {}", h.psi.len())));
        }
        let mut psi = Vec::new();
        for sp in &h.psi {
            let poly = resolve_poly(p, chart, sp, "ham", md)?;
            want_homogeneous(p, sp, "ham", &poly, 1, true)?;
            psi.push(poly);
        }
        Some(HamRoute::Psi(psi))
    } else {
        None
    };
    if route.is_some() && mu.len() != dim_h {
        return Err(p.serr(h.line, "ham", format!("expected {dim_h} `mu` lines, found {}", mu.len())));
    }
    Ok(HamBlock { algebra, action, dim_h, route, mu })
}

fn resolve_extended(
    p: &Parser<'_>,
    h: &RawAction,
    chart: &Arc<Chart>,
    md: Option<usize>,
) -> Result<ExtendedBlock, ScenarioError> {
    let algebra = h
        .algebra
        .clone()
        .ok_or_else(|| p.serr(h.line, "extended", "missing `algebra` line"))?;
    let dim_g = algebra.dim();
    let dim_h = match h.dim_h {
        Some(d) => {
            if !h.mu.is_empty() && h.mu.len() != d {
                return Err(p.serr(h.line, "extended", format!("dim-h {d} disagrees with {} `mu` lines", h.mu.len())));
            }
            d
        }
        None => h.mu.len(),
    };
    let action = resolve_action_matrices(p, h, "extended", dim_g, dim_h)?;
    if h.psi.len() != dim_g + dim_h {
        return Err(p.serr(
            h.line,
            "extended",
            format!("expected {} `psi` lines, found {}", dim_g + dim_h, h.psi.len()),
        ));
    }
    let mut psi = Vec::new();
    for sp in &h.psi {
        let poly = resolve_poly(p, chart, sp, "extended", md)?;
        want_homogeneous(p, sp, "extended", &poly, 1, true)?;
        psi.push(poly);
    }
    let mut mu = Vec::new();
    for sp in &h.mu {
        let poly = resolve_poly(p, chart, sp, "extended", md)?;
        if !poly.is_homogeneous_of(0) {
            return Err(p.serr(sp.line, "extended", "`mu` entries must have degree 0"));
        }
        mu.push(poly);
    }
    if mu.len() != dim_h {
        return Err(p.serr(h.line, "extended", format!("expected {dim_h} `mu` lines, found {}", mu.len())));
    }
    Ok(ExtendedBlock { algebra, action, dim_h, psi, mu })
}

fn resolve_gcs(
    p: &Parser<'_>,
    g: &RawGcs,
    built: &CourantScenario,
    md: Option<usize>,
) -> Result<AtiyahExpr, ScenarioError> {
    match (&g.j, g.form) {
        (Some(_), Some(_)) => Err(p.serr(g.line, "gcs", "`j` excludes `j-symplectic`/`j-complex`")),
        (Some(sp), None) => {
            if !g.rows.is_empty() {
                return Err(p.serr(g.line, "gcs", "`j` excludes `row` lines"));
            }
            let poly = resolve_poly(p, built.chart(), sp, "gcs", md)?;
            AtiyahExpr::new(poly).map_err(|e| p.serr(sp.line, "gcs", e.to_string()))
        }
        (None, Some(form)) => {
            if !matches!(built.kind(), ScenarioKind::Standard { .. } | ScenarioKind::Twisted { .. }) {
                return Err(p.serr(g.line, "gcs", "matrix forms require a standard or twisted scenario"));
            }
            let n = built.chart().n_x();
            if g.rows.len() != n || g.rows.iter().any(|r| r.len() != n) {
                return Err(p.serr(g.line, "gcs", format!("expected {n} `row` lines of {n} entries")));
            }
            let m = Mat::from_rows(g.rows.clone());
            let built_j = match form {
                GcsForm::Symplectic => symplectic_j(built, &m),
                GcsForm::Complex => complex_j(built, &m),
            };
            built_j.map_err(|e| p.serr(g.line, "gcs", e.to_string()))
        }
        (None, None) => Err(p.serr(g.line, "gcs", "expected `j`, `j-symplectic`, or `j-complex`")),
    }
}

// ---------------------------------------------------------------------------
// Running.

type Detail = Vec<(String, String)>;

#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub name: TaskName,
    pub expect_pass: bool,
    pub pass: bool,
    /// Ordered key/value lines for the report body.
    pub detail: Detail,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub label: String,
    pub digest: u64,
    pub seed: u64,
    pub samples: usize,
    pub max_degree: Option<usize>,
    pub kind: String,
    pub chart: String,
    pub theta: String,
    pub outcomes: Vec<TaskOutcome>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }

    /// Tasks whose verdict differs from the declared expectation.
    pub fn mismatches(&self) -> usize {
        self.outcomes.iter().filter(|o| o.pass != o.expect_pass).count()
    }

    /// Byte-deterministic rendering: same scenario and options, same
    /// bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "report-version {REPORT_VERSION}");
        let _ = writeln!(out, "engine degree2 {}", engine_version());
        let _ = writeln!(out, "label {}", self.label);
        let _ = writeln!(out, "digest fnv1a64:{:016x}", self.digest);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "samples {}", self.samples);
        match self.max_degree {
            Some(d) => {
                let _ = writeln!(out, "max-degree {d}");
            }
            None => {
                let _ = writeln!(out, "max-degree none");
            }
        }
        let _ = writeln!(out, "kind {}", self.kind);
        let _ = writeln!(out, "chart {}", self.chart);
        let _ = writeln!(out, "theta {}", self.theta);
        let mut npass = 0;
        let mut nfail = 0;
        for o in &self.outcomes {
            let _ = writeln!(out);
            let _ = writeln!(out, "task {}", o.name.as_str());
            let _ = writeln!(out, "  expect {}", pf(o.expect_pass));
            for (k, v) in &o.detail {
                let _ = writeln!(out, "  {k} {v}");
            }
            let _ = writeln!(out, "  verdict {}", pf(o.pass));
            if o.pass {
                npass += 1;
            } else {
                nfail += 1;
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "summary tasks {} pass {npass} fail {nfail} mismatch {}",
            self.outcomes.len(),
            self.mismatches()
        );
        out
    }
}

fn pf(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

fn tf(v: bool) -> &'static str {
    if v {
        "true"
    } else {
        "false"
    }
}

fn pv(d: &mut Detail, key: &str, value: impl Into<String>) {
    d.push((key.to_string(), value.into()));
}

fn pb(d: &mut Detail, key: &str, pass: bool) {
    pv(d, key, pf(pass));
}

fn clean_ws(s: &str) -> String {
    s.replace('\n', "; ")
}

fn check(d: &mut Detail, key: &str, c: &AxiomCheck) {
    pb(d, key, c.pass);
    if let Some(w) = &c.witness {
        pv(d, &format!("{key}-witness"), clean_ws(w));
    }
}

fn names_or_dash(names: &[String]) -> String {
    if names.is_empty() {
        "-".to_string()
    } else {
        names.join(" ")
    }
}

fn picked_names(all: &[String], idx: &[usize]) -> String {
    let names: Vec<String> = idx.iter().map(|&i| all[i].clone()).collect();
    names_or_dash(&names)
}

fn chart_string(chart: &Chart) -> String {
    format!(
        "x: {} | e: {} | p: {}",
        names_or_dash(chart.x_names()),
        names_or_dash(chart.e_names()),
        names_or_dash(chart.p_names())
    )
}

fn kind_string(kind: &ScenarioKind) -> String {
    match kind {
        ScenarioKind::Standard { n } => format!("standard {n}"),
        ScenarioKind::Twisted { n } => format!("twisted {n}"),
        ScenarioKind::Algebroid { base_dim, fiber_dim } => format!("algebroid {base_dim} {fiber_dim}"),
        ScenarioKind::Explicit => "explicit".to_string(),
    }
}

fn metric_string(m: &Mat) -> String {
    let mut rows = Vec::new();
    for r in 0..m.rows {
        let row: Vec<String> = (0..m.cols).map(|c| m.at(r, c).to_string()).collect();
        rows.push(row.join(" "));
    }
    rows.join(" | ")
}

fn frame_string(frame: &[SectionExpr]) -> String {
    if frame.is_empty() {
        return "-".to_string();
    }
    let parts: Vec<String> = frame.iter().map(|s| s.poly().to_string()).collect();
    parts.join(" | ")
}

fn courant_internal(e: &CourantError) -> bool {
    matches!(e, CourantError::Internal(_))
}

fn coiso_internal(e: &CoisoError) -> bool {
    match e {
        CoisoError::Internal(_) => true,
        CoisoError::Courant(c) => courant_internal(c),
        _ => false,
    }
}

fn moment_internal(e: &MomentError) -> bool {
    match e {
        MomentError::Internal(_) => true,
        MomentError::Coiso(c) => coiso_internal(c),
        MomentError::Courant(c) => courant_internal(c),
        _ => false,
    }
}

/// Records an error under `key` and signals early return with `None`,
/// except engine-internal failures, which abort the whole run.
fn step<T, E: std::fmt::Display>(
    d: &mut Detail,
    key: &str,
    res: Result<T, E>,
    internal: impl Fn(&E) -> bool,
) -> Result<Option<T>, ScenarioError> {
    match res {
        Ok(v) => Ok(Some(v)),
        Err(e) if internal(&e) => Err(ScenarioError::Internal(e.to_string())),
        Err(e) => {
            pv(d, key, clean_ws(&e.to_string()));
            Ok(None)
        }
    }
}

fn coiso_block(sc: &Scenario) -> Result<&CoisoBlock, ScenarioError> {
    sc.coiso
        .as_ref()
        .ok_or_else(|| ScenarioError::Internal("task requires a coiso block past parse".into()))
}

fn geometric_data(sc: &Scenario) -> Result<&GeometricCoisoData, ScenarioError> {
    match coiso_block(sc)? {
        CoisoBlock::Geometric(d) => Ok(d),
        CoisoBlock::Explicit { .. } => {
            Err(ScenarioError::Internal("task requires frame data past parse".into()))
        }
    }
}

fn ham_block(sc: &Scenario) -> Result<&HamBlock, ScenarioError> {
    sc.ham
        .as_ref()
        .ok_or_else(|| ScenarioError::Internal("task requires a ham block past parse".into()))
}

fn build_ideal(sc: &Scenario, seed: u64) -> Result<Result<CoisotropicIdeal, CoisoError>, ScenarioError> {
    let s = &sc.scenario;
    Ok(match coiso_block(sc)? {
        CoisoBlock::Geometric(d) => ideal_from_data(s.bracket(), d, seed),
        CoisoBlock::Explicit { drop_x, e_gens, p_gens } => CoisotropicIdeal::new(
            s.bracket().clone(),
            drop_x.clone(),
            e_gens.clone(),
            p_gens.clone(),
        ),
    })
}

fn build_action(sc: &Scenario) -> Result<Result<HamAction, MomentError>, ScenarioError> {
    let h = ham_block(sc)?;
    let s = &sc.scenario;
    let route = h
        .route
        .as_ref()
        .ok_or_else(|| ScenarioError::Internal("task requires a comoment route past parse".into()))?;
    Ok(match route {
        HamRoute::Psi(psi) => from_reduction_data(s, h.algebra.clone(), psi, &h.action, &h.mu),
        HamRoute::Explicit { phi, rho } => {
            match DGLA2Data::hemisemidirect(h.algebra.clone(), h.dim_h, &h.action) {
                Ok(dgla) => HamAction::new(s.clone(), dgla, phi.clone(), rho.clone(), h.mu.clone()),
                Err(e) => Err(e),
            }
        }
    })
}

fn dump_ideal(d: &mut Detail, i: &CoisotropicIdeal, chart: &Chart) {
    pv(d, "ideal-x", picked_names(chart.x_names(), i.drop_x()));
    pv(d, "ideal-e", picked_names(chart.e_names(), &i.e_indices()));
    pv(d, "ideal-p", picked_names(chart.p_names(), &i.p_indices()));
    let gens: Vec<String> = i.generators().iter().map(|g| g.to_string()).collect();
    pv(d, "ideal-generators", if gens.is_empty() { "-".to_string() } else { gens.join(" | ") });
}

fn dump_data(d: &mut Detail, data: &GeometricCoisoData, chart: &Chart) {
    pv(d, "data-drop-x", picked_names(chart.x_names(), &data.drop_x));
    pv(d, "data-k", frame_string(&data.k_frame));
    pv(d, "data-f", picked_names(chart.x_names(), &data.f_index));
    pv(d, "data-flat", frame_string(&data.flat_frame));
}

fn dump_reduced(d: &mut Detail, r: &Reduction) {
    let sc = r.scenario();
    pv(d, "reduced-label", sc.label());
    pv(d, "reduced-chart", chart_string(sc.chart()));
    pv(d, "reduced-metric", metric_string(sc.bracket().metric()));
    pv(d, "reduced-theta", sc.theta().to_string());
    pv(d, "reduced-master", tf(sc.master_equation()));
}

fn full_frame(s: &CourantScenario) -> Vec<SectionExpr> {
    let chart = s.chart();
    (0..chart.n_e())
        .map(|i| {
            SectionExpr::new(GradedPoly::generator(chart, crate::graded::Gen::E(i)))
                .expect("generators are sections")
        })
        .collect()
}

fn task_validate_theta(s: &CourantScenario) -> (bool, Detail) {
    let mut d = Detail::new();
    let degree_ok = s.theta().is_homogeneous_of(3);
    pv(&mut d, "degree-3", tf(degree_ok));
    let master = s.master_equation();
    pv(&mut d, "master-equation", tf(master));
    if !master {
        pv(&mut d, "master-residual", s.master_residual().to_string());
    }
    let chart = s.chart().clone();
    let mut left_central = true;
    for i in 0..chart.n_x() {
        let xi = GradedPoly::generator(&chart, crate::graded::Gen::X(i));
        let half = s.bracket().poisson(s.theta(), &xi);
        let r = s.bracket().poisson(s.theta(), &half);
        if !r.is_zero() {
            left_central = false;
            pv(&mut d, "left-central-witness", format!("{} brackets to {r}", chart.x_names()[i]));
            break;
        }
    }
    pv(&mut d, "left-central", tf(left_central));
    (degree_ok && master && left_central, d)
}

const AXIOM_NAMES: [&str; 5] =
    ["jacobi", "leibniz", "pairing-derivation", "anchor-morphism", "symmetric-defect"];

fn task_axioms(s: &CourantScenario) -> Result<(bool, Detail), ScenarioError> {
    let mut d = Detail::new();
    let chart = s.chart().clone();
    let sections = full_frame(s);
    let functions: Vec<GradedPoly> = (0..chart.n_x())
        .map(|i| GradedPoly::generator(&chart, crate::graded::Gen::X(i)))
        .collect();
    let report = s
        .verify_axioms(&sections, &functions)
        .map_err(|e| ScenarioError::Internal(e.to_string()))?;
    for (k, name) in AXIOM_NAMES.iter().enumerate() {
        pb(&mut d, &format!("axiom-{name}"), report.passes[k]);
        if let Some(w) = &report.counterexamples[k] {
            pv(&mut d, &format!("axiom-{name}-witness"), clean_ws(w));
        }
    }
    Ok((report.all_pass(), d))
}

fn task_validate_coiso(sc: &Scenario, seed: u64) -> Result<(bool, Detail), ScenarioError> {
    let mut d = Detail::new();
    let s = &sc.scenario;
    match coiso_block(sc)? {
        CoisoBlock::Geometric(data) => {
            if let Err(e) = data.validate(s.bracket(), seed) {
                if coiso_internal(&e) {
                    return Err(ScenarioError::Internal(e.to_string()));
                }
                pb(&mut d, "data-valid", false);
                pv(&mut d, "data-error", clean_ws(&e.to_string()));
                return Ok((false, d));
            }
            pb(&mut d, "data-valid", true);
            let Some(ideal) = step(&mut d, "ideal-error", build_ideal(sc, seed)?, coiso_internal)?
            else {
                return Ok((false, d));
            };
            let coisotropic = ideal.is_coisotropic();
            pb(&mut d, "coisotropic", coisotropic);
            if let Some(w) = ideal.coisotropy_witness() {
                pv(&mut d, "coisotropic-witness", clean_ws(&w));
            }
            let symbolic = reducible_symbolic(s, &ideal);
            pb(&mut d, "normalizer", symbolic);
            if let Some(w) = ideal.normalizer_witness(s.theta()) {
                pv(&mut d, "normalizer-witness", clean_ws(&w));
            }
            let Some(geo) =
                step(&mut d, "geometric-error", reducible_geometric(s, data, seed), coiso_internal)?
            else {
                return Ok((false, d));
            };
            pb(&mut d, "geo-anchor-perp-tangent", geo.anchor_perp_tangent);
            pb(&mut d, "geo-anchor-k-in-leaves", geo.anchor_k_in_leaves);
            pb(&mut d, "geo-flat-normalizes", geo.flat_normalizes_leaves);
            pb(&mut d, "geo-flat-involutive", geo.flat_involutive);
            if symbolic != geo.all() {
                return Err(ScenarioError::Internal(format!(
                    "symbolic reducibility ({symbolic}) disagrees with the classical verdict ({})",
                    geo.all()
                )));
            }
            pv(&mut d, "verdicts-agree", "true");
            Ok((coisotropic && symbolic && geo.all(), d))
        }
        CoisoBlock::Explicit { .. } => {
            let Some(ideal) = step(&mut d, "ideal-error", build_ideal(sc, seed)?, coiso_internal)?
            else {
                return Ok((false, d));
            };
            let coisotropic = ideal.is_coisotropic();
            pb(&mut d, "coisotropic", coisotropic);
            if let Some(w) = ideal.coisotropy_witness() {
                pv(&mut d, "coisotropic-witness", clean_ws(&w));
            }
            let symbolic = reducible_symbolic(s, &ideal);
            pb(&mut d, "normalizer", symbolic);
            if let Some(w) = ideal.normalizer_witness(s.theta()) {
                pv(&mut d, "normalizer-witness", clean_ws(&w));
            }
            Ok((coisotropic && symbolic, d))
        }
    }
}

fn task_reduce(sc: &Scenario, seed: u64) -> Result<(bool, Detail), ScenarioError> {
    let mut d = Detail::new();
    let s = &sc.scenario;
    let Some(ideal) = step(&mut d, "ideal-error", build_ideal(sc, seed)?, coiso_internal)? else {
        return Ok((false, d));
    };
    dump_ideal(&mut d, &ideal, s.chart());
    let Some(r) = step(&mut d, "reduce-error", reduce(s, &ideal), coiso_internal)? else {
        return Ok((false, d));
    };
    dump_reduced(&mut d, &r);
    Ok((true, d))
}

fn task_validate_gcs(sc: &Scenario) -> Result<(bool, Detail), ScenarioError> {
    let mut d = Detail::new();
    let s = &sc.scenario;
    let j = sc
        .gcs
        .as_ref()
        .ok_or_else(|| ScenarioError::Internal("task requires a gcs block past parse".into()))?;
    pv(&mut d, "j", j.poly().to_string());
    let Some(out) = step(&mut d, "gcs-error", s.gcs_check(j, &full_frame(s)), courant_internal)?
    else {
        return Ok((false, d));
    };
    pb(&mut d, "j-squared", out.j_squared);
    pb(&mut d, "torsion", out.torsion);
    match out.super_check {
        Some(v) => pb(&mut d, "super-check", v),
        None => pv(&mut d, "super-check", "n/a"),
    }
    Ok((out.ok(), d))
}

fn task_reduce_gcs(sc: &Scenario, seed: u64) -> Result<(bool, Detail), ScenarioError> {
    let mut d = Detail::new();
    let s = &sc.scenario;
    let data = geometric_data(sc)?;
    let j = sc
        .gcs
        .as_ref()
        .ok_or_else(|| ScenarioError::Internal("task requires a gcs block past parse".into()))?;
    let Some(upstream) = step(&mut d, "gcs-error", s.gcs_check(j, &full_frame(s)), courant_internal)?
    else {
        return Ok((false, d));
    };
    pb(&mut d, "upstream-j-squared", upstream.j_squared);
    pb(&mut d, "upstream-torsion", upstream.torsion);
    let Some(ideal) = step(&mut d, "ideal-error", build_ideal(sc, seed)?, coiso_internal)? else {
        return Ok((false, d));
    };
    let Some(r) = step(&mut d, "reduce-error", reduce(s, &ideal), coiso_internal)? else {
        return Ok((false, d));
    };
    dump_reduced(&mut d, &r);
    let Some(qr) = step(&mut d, "quadratic-error", reduce_quadratic(s, data, j, &r), coiso_internal)?
    else {
        return Ok((false, d));
    };
    pb(&mut d, "preserves-k", qr.preserves_k);
    pb(&mut d, "preserves-flat", qr.preserves_flat);
    pv(&mut d, "reduced-j", qr.j_red.poly().to_string());
    pb(&mut d, "reduced-j-squared", qr.outcome.j_squared);
    pb(&mut d, "reduced-torsion", qr.outcome.torsion);
    match qr.outcome.super_check {
        Some(v) => pb(&mut d, "reduced-super-check", v),
        None => pv(&mut d, "reduced-super-check", "n/a"),
    }
    Ok((upstream.ok() && qr.preserves_k && qr.preserves_flat && qr.outcome.ok(), d))
}

fn task_reduce_dirac(sc: &Scenario, seed: u64) -> Result<(bool, Detail), ScenarioError> {
    let mut d = Detail::new();
    let s = &sc.scenario;
    let data = geometric_data(sc)?;
    let l_frame = sc
        .dirac
        .as_ref()
        .ok_or_else(|| ScenarioError::Internal("task requires a dirac block past parse".into()))?;
    pv(&mut d, "l-frame", frame_string(l_frame));
    let Some(ideal) = step(&mut d, "ideal-error", build_ideal(sc, seed)?, coiso_internal)? else {
        return Ok((false, d));
    };
    let Some(r) = step(&mut d, "reduce-error", reduce(s, &ideal), coiso_internal)? else {
        return Ok((false, d));
    };
    dump_reduced(&mut d, &r);
    let Some(out) =
        step(&mut d, "dirac-error", reduce_dirac(s, data, l_frame, &r, seed), coiso_internal)?
    else {
        return Ok((false, d));
    };
    pv(&mut d, "clean-rank", out.clean.rank.to_string());
    pb(&mut d, "clean-constant-rank", out.clean.constant_rank);
    pb(&mut d, "clean-invariant", out.clean.nabla_invariant);
    for f in &out.frame {
        pv(&mut d, "l-red", f.poly().to_string());
    }
    Ok((out.clean.ok(), d))
}

fn task_validate_action(sc: &Scenario, seed: u64, samples: usize) -> Result<(bool, Detail), ScenarioError> {
    let mut d = Detail::new();
    let Some(a) = step(&mut d, "action-error", build_action(sc)?, moment_internal)? else {
        return Ok((false, d));
    };
    let com = validate_comoment(&a);
    check(&mut d, "comoment-symbolic", &com.symbolic_morphism);
    check(&mut d, "comoment-phi-morphism", &com.phi_morphism);
    check(&mut d, "comoment-rho-equivariant", &com.rho_equivariant);
    check(&mut d, "comoment-mu-equivariant", &com.mu_equivariant);
    check(&mut d, "comoment-pairing", &com.pairing_matches_varpi);
    if !com.verdicts_agree {
        return Err(ScenarioError::Internal(
            "symbolic comoment verdict disagrees with the classical conditions".into(),
        ));
    }
    let ch = validate_chain(&a);
    check(&mut d, "chain-symbolic", &ch.symbolic_chain);
    check(&mut d, "chain-rho-delta-h", &ch.rho_delta_h);
    check(&mut d, "chain-phi-delta-a", &ch.phi_delta_a);
    check(&mut d, "chain-phi-automorphism", &ch.phi_automorphism);
    if !ch.verdicts_agree {
        return Err(ScenarioError::Internal(
            "symbolic chain verdict disagrees with the classical conditions".into(),
        ));
    }
    let Some(rz) = step(&mut d, "zero-error", regular_zero(&a, seed, samples), moment_internal)?
    else {
        return Ok((false, d));
    };
    check(&mut d, "zero-mu-regular", &rz.mu_regular);
    check(&mut d, "zero-rho-injective", &rz.rho_injective);
    check(&mut d, "zero-locally-free", &rz.locally_free);
    pv(&mut d, "zero-samples", rz.samples.to_string());
    pv(&mut d, "zero-constant-certificate", tf(rz.constant_certificate));
    Ok((com.all_pass() && ch.all_pass() && rz.all_pass(), d))
}

fn task_ham_reduce(sc: &Scenario, seed: u64) -> Result<(bool, Detail), ScenarioError> {
    let mut d = Detail::new();
    let Some(a) = step(&mut d, "action-error", build_action(sc)?, moment_internal)? else {
        return Ok((false, d));
    };
    let options = HamReduceOptions { j: sc.gcs.clone(), l_frame: sc.dirac.clone(), seed };
    let Some(hr) = step(&mut d, "reduce-error", ham_reduce(&a, &options), moment_internal)? else {
        return Ok((false, d));
    };
    let chart = sc.scenario.chart();
    dump_data(&mut d, &hr.data, chart);
    dump_ideal(&mut d, &hr.ideal, chart);
    dump_reduced(&mut d, &hr.reduction);
    if let Some(qr) = &hr.quadratic {
        pb(&mut d, "preserves-k", qr.preserves_k);
        pb(&mut d, "preserves-flat", qr.preserves_flat);
        pv(&mut d, "reduced-j", qr.j_red.poly().to_string());
        pb(&mut d, "reduced-j-squared", qr.outcome.j_squared);
        pb(&mut d, "reduced-torsion", qr.outcome.torsion);
    }
    if let Some(dr) = &hr.dirac {
        pv(&mut d, "clean-rank", dr.clean.rank.to_string());
        for f in &dr.frame {
            pv(&mut d, "l-red", f.poly().to_string());
        }
    }
    pv(&mut d, "exact-upstream", tf(hr.exactness.upstream_exact));
    pv(&mut d, "exact-rank-balance", tf(hr.exactness.rank_balance));
    pv(&mut d, "exact-anchor-intersection", tf(hr.exactness.anchor_intersection));
    pv(&mut d, "exact-anchor-spans-locus", tf(hr.exactness.anchor_spans_locus));
    pv(&mut d, "exact-anchor-matches-leaves", tf(hr.exactness.anchor_matches_leaves));
    pv(&mut d, "exact", tf(hr.exactness.exact()));
    Ok((true, d))
}

fn task_extended_action(sc: &Scenario, seed: u64) -> Result<(bool, Detail), ScenarioError> {
    let mut d = Detail::new();
    let s = &sc.scenario;
    let ext = sc
        .extended
        .as_ref()
        .ok_or_else(|| ScenarioError::Internal("task requires an extended block past parse".into()))?;
    let Some(ca) = step(
        &mut d,
        "algebra-error",
        moment::hemisemidirect(ext.algebra.clone(), ext.dim_h, &ext.action),
        moment_internal,
    )?
    else {
        return Ok((false, d));
    };
    let Some(report) = step(
        &mut d,
        "action-error",
        extended_action_check(s, &ca, &ext.psi, &ext.mu, seed),
        moment_internal,
    )?
    else {
        return Ok((false, d));
    };
    check(&mut d, "ext-bracket-preserving", &report.bracket_preserving);
    check(&mut d, "ext-h-compatible", &report.h_compatible);
    check(&mut d, "ext-isotropy", &report.isotropy_condition);
    check(&mut d, "ext-isotropic-on-zero", &report.isotropic_on_zero);
    check(&mut d, "ext-differential-closed", &report.differential_closed);
    if !report.equivalence_agrees {
        return Err(ScenarioError::Internal(
            "polynomial isotropy verdict disagrees with the sampled equivalence".into(),
        ));
    }
    pv(&mut d, "equivalence-agrees", "true");
    Ok((report.all_pass(), d))
}

fn task_validate_algebra(sc: &Scenario) -> Result<(bool, Detail), ScenarioError> {
    let mut d = Detail::new();
    let h = ham_block(sc)?;
    let Some(dgla) = step(
        &mut d,
        "algebra-error",
        DGLA2Data::hemisemidirect(h.algebra.clone(), h.dim_h, &h.action),
        moment_internal,
    )?
    else {
        return Ok((false, d));
    };
    let gla = validate_gla(&dgla);
    check(&mut d, "gla-antisymmetry", &gla.antisymmetry);
    check(&mut d, "gla-jacobi", &gla.jacobi);
    check(&mut d, "gla-tau-representation", &gla.tau_representation);
    check(&mut d, "gla-lambda-representation", &gla.lambda_representation);
    check(&mut d, "gla-varpi-symmetric", &gla.varpi_symmetric);
    check(&mut d, "gla-varpi-equivariant", &gla.varpi_equivariant);
    let dr = validate_dgla(&dgla);
    check(&mut d, "dgla-chain", &dr.chain);
    check(&mut d, "dgla-delta-equivariant", &dr.delta_equivariant);
    check(&mut d, "dgla-varpi-delta", &dr.varpi_delta);
    check(&mut d, "dgla-lambda-delta", &dr.lambda_delta);
    let Some(ca) = step(
        &mut d,
        "algebra-error",
        moment::hemisemidirect(h.algebra.clone(), h.dim_h, &h.action),
        moment_internal,
    )?
    else {
        return Ok((false, d));
    };
    let cr = validate_courant_algebra(&ca);
    check(&mut d, "courant-leibniz", &cr.leibniz);
    check(&mut d, "courant-p-morphism", &cr.p_morphism);
    check(&mut d, "courant-p-surjective", &cr.p_surjective);
    check(&mut d, "courant-kernel-left-central", &cr.kernel_left_central);
    let Some(forward) = step(&mut d, "round-trip-error", dgla_to_courant_algebra(&dgla), moment_internal)?
    else {
        return Ok((false, d));
    };
    let forward_ok = forward == ca;
    pv(&mut d, "round-trip-forward", tf(forward_ok));
    let Some(back) = step(&mut d, "round-trip-error", courant_algebra_to_dgla(&ca), moment_internal)?
    else {
        return Ok((false, d));
    };
    let back_ok = back == dgla;
    pv(&mut d, "round-trip-back", tf(back_ok));
    Ok((gla.all_pass() && dr.all_pass() && cr.all_pass() && forward_ok && back_ok, d))
}

fn run_task(sc: &Scenario, spec: TaskSpec, seed: u64, samples: usize) -> Result<TaskOutcome, ScenarioError> {
    let s = &sc.scenario;
    let (pass, detail) = match spec.name {
        TaskName::ValidateTheta => task_validate_theta(s),
        TaskName::Axioms => task_axioms(s)?,
        TaskName::ValidateCoiso => task_validate_coiso(sc, seed)?,
        TaskName::Reduce => task_reduce(sc, seed)?,
        TaskName::ValidateGcs => task_validate_gcs(sc)?,
        TaskName::ReduceGcs => task_reduce_gcs(sc, seed)?,
        TaskName::ReduceDirac => task_reduce_dirac(sc, seed)?,
        TaskName::ValidateAction => task_validate_action(sc, seed, samples)?,
        TaskName::HamReduce => task_ham_reduce(sc, seed)?,
        TaskName::ExtendedAction => task_extended_action(sc, seed)?,
        TaskName::ValidateAlgebra => task_validate_algebra(sc)?,
    };
    Ok(TaskOutcome { name: spec.name, expect_pass: spec.expect_pass, pass, detail })
}

fn report_shell(sc: &Scenario, opts: &RunOptions, outcomes: Vec<TaskOutcome>) -> RunReport {
    RunReport {
        label: sc.label.clone(),
        digest: sc.digest,
        seed: sc.effective_seed(opts.seed),
        samples: opts.samples,
        max_degree: sc.max_degree,
        kind: kind_string(sc.scenario.kind()),
        chart: chart_string(sc.scenario.chart()),
        theta: sc.scenario.theta().to_string(),
        outcomes,
    }
}

/// Runs the scenario's own task list.
pub fn run(sc: &Scenario, opts: &RunOptions) -> Result<RunReport, ScenarioError> {
    let seed = sc.effective_seed(opts.seed);
    let mut outcomes = Vec::new();
    for spec in &sc.tasks {
        outcomes.push(run_task(sc, *spec, seed, opts.samples)?);
    }
    Ok(report_shell(sc, opts, outcomes))
}

/// Checks that the scenario carries the blocks a task needs; tasks in
/// the file's own list were checked at parse, but callers may request
/// tasks the file never mentioned.
pub fn task_available(sc: &Scenario, name: TaskName) -> Result<(), ScenarioError> {
    let available = |cond: bool, what: &str| -> Result<(), ScenarioError> {
        if cond {
            Ok(())
        } else {
            Err(ScenarioError::Semantic {
                origin: sc.label.clone(),
                line: 1,
                block: "tasks".to_string(),
                msg: format!("task `{}` requires {what}", name.as_str()),
            })
        }
    };
    match name {
        TaskName::ValidateCoiso | TaskName::Reduce => available(sc.coiso.is_some(), "a `coiso` block"),
        TaskName::ValidateGcs => available(sc.gcs.is_some(), "a `gcs` block"),
        TaskName::ReduceGcs => {
            available(matches!(sc.coiso, Some(CoisoBlock::Geometric(_))), "a `coiso` block with frame data")?;
            available(sc.gcs.is_some(), "a `gcs` block")
        }
        TaskName::ReduceDirac => {
            available(matches!(sc.coiso, Some(CoisoBlock::Geometric(_))), "a `coiso` block with frame data")?;
            available(sc.dirac.is_some(), "a `dirac` block")
        }
        TaskName::ValidateAction | TaskName::HamReduce => available(
            sc.ham.as_ref().is_some_and(|h| h.route.is_some()),
            "a `ham` block with psi or phi/rho lines",
        ),
        TaskName::ExtendedAction => available(sc.extended.is_some(), "an `extended` block"),
        TaskName::ValidateAlgebra => available(sc.ham.is_some(), "a `ham` block"),
        TaskName::ValidateTheta | TaskName::Axioms => Ok(()),
    }
}

/// Runs an explicit task list against the scenario, ignoring the list
/// declared in the file. Every task is expected to pass.
pub fn run_tasks(sc: &Scenario, names: &[TaskName], opts: &RunOptions) -> Result<RunReport, ScenarioError> {
    let seed = sc.effective_seed(opts.seed);
    let mut outcomes = Vec::new();
    for &name in names {
        task_available(sc, name)?;
        outcomes.push(run_task(sc, TaskSpec { name, expect_pass: true }, seed, opts.samples)?);
    }
    Ok(report_shell(sc, opts, outcomes))
}

/// Runs a single task against the scenario, ignoring its task list.
pub fn run_one(sc: &Scenario, name: TaskName, opts: &RunOptions) -> Result<RunReport, ScenarioError> {
    run_tasks(sc, &[name], opts)
}

// ---------------------------------------------------------------------------
// Bundled corpus.

macro_rules! corpus_files {
    ($($name:literal),* $(,)?) => {
        pub fn corpus() -> &'static [(&'static str, &'static str)] {
            &[$(($name, include_str!(concat!("../corpus/", $name, ".scn")))),*]
        }

        pub fn corpus_golden() -> &'static [(&'static str, &'static str)] {
            &[$(($name, include_str!(concat!("../corpus/golden/", $name, ".report")))),*]
        }
    };
}

corpus_files![
    "bfield_r3",
    "explicit_broken_r2",
    "extended_action_r2",
    "ham_dirac_r4",
    "hemisemi_so3",
    "holomorphic_r4",
    "mw_gcs_r4",
    "poisson_dirac_r3",
    "presymplectic_dirac_r3",
    "restriction_r3",
    "so3_action_algebroid_r3",
    "so3_action_r3",
    "so3_double",
    "std_r3",
    "translation_direct_r4",
    "translation_ham_r4",
    "translation_reduce_r4",
    "twisted_closed_r3",
    "twisted_nonclosed_r4",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Result<Scenario, ScenarioError> {
        parse_str("test.scn", src, &ParseOptions::default())
    }

    fn run_default(sc: &Scenario) -> RunReport {
        run(sc, &RunOptions::default()).unwrap()
    }

    const STD3: &str = "\
version 1
label standard check
scenario standard 3
tasks
  validate-theta
  axioms
end
";

    #[test]
    fn standard_scenario_runs_and_renders_deterministically() {
        let sc = parse(STD3).unwrap();
        assert_eq!(sc.label, "standard check");
        assert_eq!(sc.tasks.len(), 2);
        assert_eq!(sc.effective_seed(None), fnv1a64(b"standard check"));
        let r1 = run_default(&sc);
        assert!(r1.all_pass());
        assert_eq!(r1.mismatches(), 0);
        let text = r1.render();
        assert!(text.starts_with("report-version 1\n"));
        assert!(text.contains("task validate-theta"));
        assert!(text.contains("  master-equation true"));
        assert!(text.contains("  axiom-jacobi pass"));
        assert!(text.contains("summary tasks 2 pass 2 fail 0 mismatch 0"));
        let r2 = run_default(&sc);
        assert_eq!(text, r2.render());
    }

    #[test]
    fn version_header_is_required() {
        let err = parse("label x\nscenario standard 2\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn malformed_rational_is_a_positioned_parse_error() {
        let src = "\
version 1
label twist
scenario twisted 3
chi 1 2 3 1/0*x1
";
        let err = parse(src).unwrap_err();
        match err {
            ScenarioError::Parse { line, col, msg, .. } => {
                assert_eq!(line, 4);
                assert_eq!(col, 11);
                assert!(msg.contains("bad number"), "{msg}");
            }
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn unknown_generator_is_a_semantic_error() {
        let src = "\
version 1
label bad section
scenario standard 2
coiso
  k e9
end
";
        let err = parse(src).unwrap_err();
        match err {
            ScenarioError::Semantic { line, block, msg, .. } => {
                assert_eq!(line, 5);
                assert_eq!(block, "coiso");
                assert!(msg.contains("`e9`"), "{msg}");
            }
            other => panic!("expected a semantic error, got {other}"),
        }
    }

    #[test]
    fn unterminated_block_is_rejected() {
        let err = parse("version 1\nlabel x\nscenario standard 2\ncoiso\n  k xi1\n").unwrap_err();
        assert!(err.to_string().contains("unterminated"), "{err}");
    }

    #[test]
    fn structural_requirements_are_checked_at_parse() {
        let missing_block = "\
version 1
label no data
scenario standard 2
tasks
  reduce
end
";
        let err = parse(missing_block).unwrap_err();
        assert!(err.to_string().contains("requires a `coiso` block"), "{err}");

        let dup = "version 1\nlabel a\nlabel b\nscenario standard 2\n";
        assert!(parse(dup).is_err());
        assert!(parse("version 1\nlabel x\n").is_err());
    }

    #[test]
    fn max_degree_guard_rejects_large_inputs() {
        let src = "\
version 1
label big twist
scenario twisted 3
chi 1 2 3 x1^2*x2
";
        assert!(parse_str("t", src, &ParseOptions { max_degree: Some(3) }).is_ok());
        let err = parse_str("t", src, &ParseOptions { max_degree: Some(1) }).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
    }

    #[test]
    fn explicit_scenario_round_trips() {
        let src = "\
version 1
label explicit line
scenario explicit
chart-x x1
chart-e v1 xi1
chart-p p1
metric hyperbolic
theta v1*p1
tasks
  validate-theta
end
";
        let sc = parse(src).unwrap();
        let r = run_default(&sc);
        assert!(r.all_pass());
        assert!(r.render().contains("kind explicit"));
    }

    #[test]
    fn twisted_seed_and_expectations() {
        let src = "\
version 1
label nonclosed twist
seed 11
scenario twisted 4
chi 1 2 3 x4
tasks
  validate-theta expect fail
end
";
        let sc = parse(src).unwrap();
        assert_eq!(sc.effective_seed(None), 11);
        assert_eq!(sc.effective_seed(Some(7)), 7);
        let r = run_default(&sc);
        assert!(!r.all_pass());
        assert_eq!(r.mismatches(), 0);
        assert!(r.render().contains("master-residual"));
    }

    const TRANSLATION: &str = "\
version 1
label translation quotient
seed 37
scenario standard 4
coiso
  drop-x 2
  k xi1
  k v2
  f-index 1
  flat v3
  flat v4
  flat xi3
  flat xi4
end
tasks
  validate-coiso
  reduce
end
";

    #[test]
    fn translation_reduction_dump_matches_engine_output() {
        let sc = parse(TRANSLATION).unwrap();
        let r = run_default(&sc);
        assert!(r.all_pass(), "{}", r.render());

        let s = &sc.scenario;
        let CoisoBlock::Geometric(data) = sc.coiso.as_ref().unwrap() else {
            panic!("expected frame data")
        };
        let ideal = ideal_from_data(s.bracket(), data, 37).unwrap();
        let red = reduce(s, &ideal).unwrap();
        let reduce_detail = &r.outcomes[1].detail;
        let get = |key: &str| {
            reduce_detail
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| panic!("missing `{key}`"))
        };
        assert_eq!(get("reduced-theta"), red.scenario().theta().to_string());
        assert_eq!(get("reduced-chart"), chart_string(red.scenario().chart()));
        assert!(get("reduced-chart").contains("x: x3 x4"));
        assert_eq!(get("reduced-master"), "true");
    }

    #[test]
    fn explicit_ideal_route_matches_frame_route() {
        let src = "\
version 1
label translation quotient direct
seed 37
scenario standard 4
coiso
  drop-x 2
  e-gen 5
  e-gen 2
  p-gen 1
end
tasks
  validate-coiso
  reduce
end
";
        let sc = parse(src).unwrap();
        let r = run_default(&sc);
        assert!(r.all_pass(), "{}", r.render());
        let via_frames = parse(TRANSLATION).unwrap();
        let rf = run_default(&via_frames);
        let theta_of = |rep: &RunReport| {
            rep.outcomes[1]
                .detail
                .iter()
                .find(|(k, _)| k == "reduced-theta")
                .map(|(_, v)| v.clone())
                .unwrap()
        };
        assert_eq!(theta_of(&r), theta_of(&rf));
    }

    #[test]
    fn run_one_checks_block_requirements() {
        let sc = parse(STD3).unwrap();
        let r = run_one(&sc, TaskName::ValidateTheta, &RunOptions::default()).unwrap();
        assert!(r.all_pass());
        assert!(run_one(&sc, TaskName::Reduce, &RunOptions::default()).is_err());
    }

    #[test]
    fn corpus_entries_parse_and_declare_tasks() {
        let names: Vec<&str> = corpus().iter().map(|&(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        assert_eq!(names, sorted, "corpus must stay sorted by name");
        assert!(corpus().len() >= 10);
        for &(name, src) in corpus() {
            let sc = parse_str(name, src, &ParseOptions::default())
                .unwrap_or_else(|e| panic!("corpus scenario {name} failed to parse: {e}"));
            assert!(!sc.tasks.is_empty(), "corpus scenario {name} declares no tasks");
            assert!(sc.seed.is_some(), "corpus scenario {name} must pin its seed");
        }
    }
}
