//! Courant structures as degree-3 hamiltonians.
//!
//! A degree-3 function `theta` with `{theta, theta} = 0` on a canonical
//! chart encodes a Courant algebroid on the pseudo-euclidean bundle whose
//! sections are the degree-1 functions: the anchor and bracket are the
//! derived expressions `rho(e)f = {{theta,e},f}` and
//! `[[e1,e2]] = {{theta,e1},e2}`, and the fiber pairing is `{e1,e2}`.
//!
//! The section/function dictionary in standard charts pairs the vector
//! field `d/dx^i` with the generator `xi_i` and the 1-form `dx^i` with
//! `v^i`; this is forced by `{f_s, f_t} = <s,t>` together with the chart
//! relations, and every helper below follows it.

use crate::graded::{Chart, Gen, GradedError, GradedPoly};
use crate::linalg::Mat;
use crate::poisson::{BracketData, PoissonError};
use crate::rat::{q, Q};
use num::traits::Zero;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CourantError {
    #[error("expected a homogeneous element of degree {expected}")]
    WrongDegree { expected: usize },
    #[error("twist coefficients are not alternating: {0}")]
    NotAlternating(String),
    #[error("malformed structure data: {0}")]
    MalformedStructure(String),
    #[error("not a quadratic expression (degree-2, free of the p generators)")]
    NotQuadratic,
    #[error("frame does not span the degree-1 generators at the base point")]
    FrameDoesNotSpan,
    #[error("endomorphism is not skew-adjoint for the chart pairing")]
    NotSkew,
    #[error("expression has non-constant coefficients where constants are required")]
    NotConstant,
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Graded(#[from] GradedError),
    #[error("internal consistency failure: {0}")]
    Internal(String),
}

/// A degree-1 function, i.e. a section of the underlying bundle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionExpr(GradedPoly);

impl SectionExpr {
    pub fn new(p: GradedPoly) -> Result<SectionExpr, CourantError> {
        if p.is_homogeneous_of(1) {
            Ok(SectionExpr(p))
        } else {
            Err(CourantError::WrongDegree { expected: 1 })
        }
    }

    pub fn poly(&self) -> &GradedPoly {
        &self.0
    }

    pub fn into_poly(self) -> GradedPoly {
        self.0
    }
}

/// A degree-2 function: an infinitesimal pairing-preserving bundle
/// derivation (in particular, quadratic expressions like generalized
/// complex structures and B-fields live here).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtiyahExpr(GradedPoly);

impl AtiyahExpr {
    pub fn new(p: GradedPoly) -> Result<AtiyahExpr, CourantError> {
        if p.is_homogeneous_of(2) {
            Ok(AtiyahExpr(p))
        } else {
            Err(CourantError::WrongDegree { expected: 2 })
        }
    }

    pub fn poly(&self) -> &GradedPoly {
        &self.0
    }

    pub fn into_poly(self) -> GradedPoly {
        self.0
    }

    /// True when the expression involves no `p` generator, i.e. it is a
    /// purely quadratic expression in the degree-1 generators.
    pub fn is_quadratic(&self) -> bool {
        self.0.terms().all(|(m, _)| m.p.iter().all(|&k| k == 0))
    }
}

/// How the scenario's chart and hamiltonian were built. Standard and
/// twisted scenarios live on the chart `(x^i; v^i, xi_i; p_i)` with the
/// hyperbolic pairing `{v^i, xi_j} = delta_ij`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioKind {
    Standard { n: usize },
    Twisted { n: usize },
    Algebroid { base_dim: usize, fiber_dim: usize },
    Explicit,
}

/// A chart, a bracket, and a degree-3 hamiltonian.
#[derive(Debug, Clone)]
pub struct CourantScenario {
    bracket: BracketData,
    theta: GradedPoly,
    label: String,
    kind: ScenarioKind,
}

/// The standard chart `(x1..xn; v1..vn, xi1..xin; p1..pn)`.
pub fn standard_chart(n: usize) -> Arc<Chart> {
    Chart::new(
        (1..=n).map(|i| format!("x{i}")).collect(),
        (1..=n)
            .map(|i| format!("v{i}"))
            .chain((1..=n).map(|i| format!("xi{i}")))
            .collect(),
        (1..=n).map(|i| format!("p{i}")).collect(),
    )
    .expect("standard chart names are valid")
}

/// The hyperbolic pairing `{v^i, xi_j} = delta_ij` on the standard chart.
pub fn standard_bracket(n: usize) -> BracketData {
    let mut g = Mat::zeros(2 * n, 2 * n);
    for i in 0..n {
        g.set(i, n + i, q(1));
        g.set(n + i, i, q(1));
    }
    BracketData::new(standard_chart(n), g).expect("standard bracket data is valid")
}

/// `theta = sum_i v^i p_i` on the standard chart: the Courant structure of
/// the double `TM + T*M` over affine n-space.
pub fn standard_theta(n: usize) -> CourantScenario {
    let bracket = standard_bracket(n);
    let chart = bracket.chart().clone();
    let mut theta = GradedPoly::zero(&chart);
    for i in 0..n {
        let v = GradedPoly::generator(&chart, Gen::E(i));
        let p = GradedPoly::generator(&chart, Gen::P(i));
        theta = &theta + &(&v * &p);
    }
    CourantScenario {
        bracket,
        theta,
        label: format!("standard R^{n}"),
        kind: ScenarioKind::Standard { n },
    }
}

/// `theta = sum v^i p_i + sum_{i<j<k} chi_ijk v^i v^j v^k` for an
/// alternating family of degree-0 coefficients. Entries may be given with
/// indices in any order; they must be consistent under the alternating
/// rule, and entries with a repeated index must be zero. Indices are
/// 0-based. The master equation holds iff the 3-form is closed.
pub fn twisted_theta(
    n: usize,
    chi: &[(usize, usize, usize, GradedPoly)],
) -> Result<CourantScenario, CourantError> {
    let base = standard_theta(n);
    let chart = base.chart().clone();
    // Canonical slots keyed by sorted index triple.
    let mut slots: std::collections::BTreeMap<(usize, usize, usize), GradedPoly> =
        std::collections::BTreeMap::new();
    for (i, j, k, coeff) in chi {
        if !coeff.is_homogeneous_of(0) {
            return Err(CourantError::MalformedStructure(
                "twist coefficients must have degree 0".into(),
            ));
        }
        if *i >= n || *j >= n || *k >= n {
            return Err(CourantError::MalformedStructure(format!(
                "twist index ({i},{j},{k}) out of range for n={n}"
            )));
        }
        if i == j || j == k || i == k {
            if !coeff.is_zero() {
                return Err(CourantError::NotAlternating(format!(
                    "repeated index ({i},{j},{k}) with nonzero coefficient"
                )));
            }
            continue;
        }
        let mut perm = [(*i, 0usize), (*j, 1), (*k, 2)];
        perm.sort_by_key(|t| t.0);
        let parity = permutation_parity(&[perm[0].1, perm[1].1, perm[2].1]);
        let sorted = (perm[0].0, perm[1].0, perm[2].0);
        let canonical = if parity == 0 { coeff.clone() } else { -coeff };
        match slots.entry(sorted) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(canonical);
            }
            std::collections::btree_map::Entry::Occupied(o) => {
                if *o.get() != canonical {
                    return Err(CourantError::NotAlternating(format!(
                        "inconsistent values for the triple {sorted:?}"
                    )));
                }
            }
        }
    }
    let mut theta = base.theta.clone();
    let mut twisted = false;
    for ((i, j, k), coeff) in &slots {
        if coeff.is_zero() {
            continue;
        }
        twisted = true;
        let vvv = &(&GradedPoly::generator(&chart, Gen::E(*i))
            * &GradedPoly::generator(&chart, Gen::E(*j)))
            * &GradedPoly::generator(&chart, Gen::E(*k));
        theta = &theta + &(&vvv * coeff);
    }
    Ok(CourantScenario {
        bracket: base.bracket,
        theta,
        label: format!("twisted R^{n}"),
        kind: if twisted { ScenarioKind::Twisted { n } } else { ScenarioKind::Standard { n } },
    })
}

fn permutation_parity(perm: &[usize]) -> usize {
    let mut inv = 0;
    for a in 0..perm.len() {
        for b in a + 1..perm.len() {
            if perm[a] > perm[b] {
                inv += 1;
            }
        }
    }
    inv % 2
}

/// The chart of the double of a rank-`fiber_dim` algebroid over an
/// `base_dim`-dimensional base: `(x^i; v^a, xi_a; p_i)` where `xi_a`
/// corresponds to the `a`-th frame section and `v^a` to its dual.
pub fn algebroid_chart(base_dim: usize, fiber_dim: usize) -> Arc<Chart> {
    Chart::new(
        (1..=base_dim).map(|i| format!("x{i}")).collect(),
        (1..=fiber_dim)
            .map(|a| format!("v{a}"))
            .chain((1..=fiber_dim).map(|a| format!("xi{a}")))
            .collect(),
        (1..=base_dim).map(|i| format!("p{i}")).collect(),
    )
    .expect("algebroid chart names are valid")
}

/// The fiberwise-linear hamiltonian of an anchored bracket structure:
///
/// ```text
/// theta = sum_{i,a} rho[a][i] v^a p_i - sum_{a<b,c} c[c][a][b] v^a v^b xi_c
/// ```
///
/// `rho[a][i]` and `c[c][a][b]` are degree-0 polynomials on the chart
/// [`algebroid_chart`]`(base_dim, fiber_dim)`; `c` must be antisymmetric
/// in its lower indices. The master equation holds iff the data satisfies
/// the Lie algebroid axioms; the sign of the `c` term is pinned so that
/// `[[xi_a, xi_b]] = sum_c c[c][a][b] xi_c` over a point.
pub fn theta_from_lie_algebroid(
    base_dim: usize,
    fiber_dim: usize,
    rho: &[Vec<GradedPoly>],
    c: &[Vec<Vec<GradedPoly>>],
) -> Result<CourantScenario, CourantError> {
    let chart = algebroid_chart(base_dim, fiber_dim);
    if rho.len() != fiber_dim || rho.iter().any(|r| r.len() != base_dim) {
        return Err(CourantError::MalformedStructure(format!(
            "anchor must be {fiber_dim} x {base_dim}"
        )));
    }
    if c.len() != fiber_dim
        || c.iter().any(|m| m.len() != fiber_dim || m.iter().any(|r| r.len() != fiber_dim))
    {
        return Err(CourantError::MalformedStructure(format!(
            "structure coefficients must be {fiber_dim}^3"
        )));
    }
    let entries = rho
        .iter()
        .flatten()
        .chain(c.iter().flatten().flatten());
    for entry in entries {
        if !entry.is_homogeneous_of(0) {
            return Err(CourantError::MalformedStructure(
                "anchor and structure coefficients must have degree 0".into(),
            ));
        }
    }
    for cc in 0..fiber_dim {
        for a in 0..fiber_dim {
            for b in 0..fiber_dim {
                if c[cc][a][b] != -&c[cc][b][a] {
                    return Err(CourantError::MalformedStructure(format!(
                        "structure coefficients not antisymmetric at [{cc}][{a}][{b}]"
                    )));
                }
            }
        }
    }
    let mut g = Mat::zeros(2 * fiber_dim, 2 * fiber_dim);
    for a in 0..fiber_dim {
        g.set(a, fiber_dim + a, q(1));
        g.set(fiber_dim + a, a, q(1));
    }
    let bracket = BracketData::new(chart.clone(), g)?;
    let mut theta = GradedPoly::zero(&chart);
    for a in 0..fiber_dim {
        let va = GradedPoly::generator(&chart, Gen::E(a));
        for i in 0..base_dim {
            if rho[a][i].is_zero() {
                continue;
            }
            let pi = GradedPoly::generator(&chart, Gen::P(i));
            theta = &theta + &(&(&rho[a][i] * &va) * &pi);
        }
    }
    for a in 0..fiber_dim {
        for b in a + 1..fiber_dim {
            let vab = &GradedPoly::generator(&chart, Gen::E(a))
                * &GradedPoly::generator(&chart, Gen::E(b));
            for cc in 0..fiber_dim {
                if c[cc][a][b].is_zero() {
                    continue;
                }
                let xic = GradedPoly::generator(&chart, Gen::E(fiber_dim + cc));
                theta = &theta - &(&(&c[cc][a][b] * &vab) * &xic);
            }
        }
    }
    Ok(CourantScenario {
        bracket,
        theta,
        label: format!("algebroid double (base {base_dim}, rank {fiber_dim})"),
        kind: ScenarioKind::Algebroid { base_dim, fiber_dim },
    })
}

/// Per-axiom verification outcome; `counterexamples[k]` describes the
/// first failing instance of axiom `k+1`, if any.
#[derive(Debug, Clone)]
pub struct AxiomReport {
    pub passes: [bool; 5],
    pub counterexamples: [Option<String>; 5],
}

impl AxiomReport {
    pub fn all_pass(&self) -> bool {
        self.passes.iter().all(|&b| b)
    }
}

/// Outcome of a generalized-complex check: the almost-complex condition,
/// the torsion condition, and (on standard scenarios) the agreement of the
/// graded shortcut `{{theta,J},J} = -theta` with the classical checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GcsOutcome {
    pub j_squared: bool,
    pub torsion: bool,
    pub super_check: Option<bool>,
}

impl GcsOutcome {
    pub fn ok(&self) -> bool {
        self.j_squared && self.torsion
    }
}

impl CourantScenario {
    /// Wraps an explicit hamiltonian. The element must be homogeneous of
    /// degree 3; whether it satisfies the master equation is a separate
    /// query ([`CourantScenario::master_equation`]).
    pub fn new(
        bracket: BracketData,
        theta: GradedPoly,
        label: impl Into<String>,
        kind: ScenarioKind,
    ) -> Result<CourantScenario, CourantError> {
        if !theta.is_homogeneous_of(3) {
            return Err(CourantError::WrongDegree { expected: 3 });
        }
        Ok(CourantScenario { bracket, theta, label: label.into(), kind })
    }

    pub fn bracket(&self) -> &BracketData {
        &self.bracket
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.bracket.chart()
    }

    pub fn theta(&self) -> &GradedPoly {
        &self.theta
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> &ScenarioKind {
        &self.kind
    }

    pub fn with_label(mut self, label: impl Into<String>) -> CourantScenario {
        self.label = label.into();
        self
    }

    /// `{theta, theta} == 0`.
    pub fn master_equation(&self) -> bool {
        self.master_residual().is_zero()
    }

    /// The normalized value of `{theta, theta}` (zero iff the master
    /// equation holds); reported verbatim by the scenario runner.
    pub fn master_residual(&self) -> GradedPoly {
        self.bracket.poisson(&self.theta, &self.theta)
    }

    /// The action of the anchor of `e` on a degree-0 function:
    /// `{{theta, e}, f}`.
    pub fn anchor_apply(
        &self,
        e: &SectionExpr,
        f: &GradedPoly,
    ) -> Result<GradedPoly, CourantError> {
        if !f.is_homogeneous_of(0) {
            return Err(CourantError::WrongDegree { expected: 0 });
        }
        let half = self.bracket.poisson(&self.theta, e.poly());
        Ok(self.bracket.poisson(&half, f))
    }

    /// The derived bracket `[[e1, e2]] = {{theta, e1}, e2}`.
    pub fn derived_bracket(&self, e1: &SectionExpr, e2: &SectionExpr) -> SectionExpr {
        let half = self.bracket.poisson(&self.theta, e1.poly());
        SectionExpr(self.bracket.poisson(&half, e2.poly()))
    }

    /// The fiber pairing `<e1, e2> = {e1, e2}`.
    pub fn pairing(&self, e1: &SectionExpr, e2: &SectionExpr) -> GradedPoly {
        self.bracket.poisson(e1.poly(), e2.poly())
    }

    /// Checks the five bracket/anchor/pairing compatibility laws on every
    /// combination drawn from the supplied sections and functions, exactly.
    pub fn verify_axioms(
        &self,
        sections: &[SectionExpr],
        functions: &[GradedPoly],
    ) -> Result<AxiomReport, CourantError> {
        for f in functions {
            if !f.is_homogeneous_of(0) {
                return Err(CourantError::WrongDegree { expected: 0 });
            }
        }
        let mut passes = [true; 5];
        let mut ce: [Option<String>; 5] = Default::default();
        let fail = |axiom: usize, passes: &mut [bool; 5], ce: &mut [Option<String>; 5], msg: String| {
            if passes[axiom] {
                passes[axiom] = false;
                ce[axiom] = Some(msg);
            }
        };

        // (1) left Jacobi for the derived bracket.
        'c1: for (i, e1) in sections.iter().enumerate() {
            for (j, e2) in sections.iter().enumerate() {
                for (k, e3) in sections.iter().enumerate() {
                    let lhs = self.derived_bracket(e1, &self.derived_bracket(e2, e3));
                    let rhs1 = self.derived_bracket(&self.derived_bracket(e1, e2), e3);
                    let rhs2 = self.derived_bracket(e2, &self.derived_bracket(e1, e3));
                    if lhs.poly() != &(rhs1.poly() + rhs2.poly()) {
                        fail(0, &mut passes, &mut ce, format!("sections #{i},#{j},#{k}"));
                        break 'c1;
                    }
                }
            }
        }

        // (2) Leibniz in the second slot against the anchor.
        'c2: for (i, e1) in sections.iter().enumerate() {
            for (j, e2) in sections.iter().enumerate() {
                for (k, f) in functions.iter().enumerate() {
                    let fe2 = SectionExpr(f * e2.poly());
                    let lhs = self.derived_bracket(e1, &fe2);
                    let anchor_f = self.anchor_apply(e1, f)?;
                    let rhs = &(f * self.derived_bracket(e1, e2).poly())
                        + &(&anchor_f * e2.poly());
                    if lhs.poly() != &rhs {
                        fail(1, &mut passes, &mut ce, format!("sections #{i},#{j}, function #{k}"));
                        break 'c2;
                    }
                }
            }
        }

        // (3) the anchor of e1 differentiates the pairing.
        'c3: for (i, e1) in sections.iter().enumerate() {
            for (j, e2) in sections.iter().enumerate() {
                for (k, e3) in sections.iter().enumerate() {
                    let pairing = self.pairing(e2, e3);
                    let lhs = self.anchor_apply(e1, &pairing)?;
                    let rhs = &self.pairing(&self.derived_bracket(e1, e2), e3)
                        + &self.pairing(e2, &self.derived_bracket(e1, e3));
                    if lhs != rhs {
                        fail(2, &mut passes, &mut ce, format!("sections #{i},#{j},#{k}"));
                        break 'c3;
                    }
                }
            }
        }

        // (4) the anchor intertwines the derived bracket and the
        // commutator of first-order operators.
        'c4: for (i, e1) in sections.iter().enumerate() {
            for (j, e2) in sections.iter().enumerate() {
                for (k, f) in functions.iter().enumerate() {
                    let lhs = self.anchor_apply(&self.derived_bracket(e1, e2), f)?;
                    let rhs = &self.anchor_apply(e1, &self.anchor_apply(e2, f)?)?
                        - &self.anchor_apply(e2, &self.anchor_apply(e1, f)?)?;
                    if lhs != rhs {
                        fail(3, &mut passes, &mut ce, format!("sections #{i},#{j}, function #{k}"));
                        break 'c4;
                    }
                }
            }
        }

        // (5) the symmetric defect of the bracket pairs to half the
        // anchor derivative of the squared norm.
        'c5: for (i, e1) in sections.iter().enumerate() {
            for (j, e2) in sections.iter().enumerate() {
                let lhs = self.pairing(e1, &self.derived_bracket(e2, e2));
                let sq = self.pairing(e2, e2);
                let rhs = self.anchor_apply(e1, &sq)?.scale(&crate::rat::qq(1, 2));
                if lhs != rhs {
                    fail(4, &mut passes, &mut ce, format!("sections #{i},#{j}"));
                    break 'c5;
                }
            }
        }

        Ok(AxiomReport { passes, counterexamples: ce })
    }

    /// Applies the flow of a quadratic `B` supported on the `v` block of a
    /// standard or twisted scenario: the new hamiltonian is
    /// `exp(ad_B)(theta)`, again of (possibly) twisted form.
    pub fn bfield_transform(&self, b: &AtiyahExpr) -> Result<CourantScenario, CourantError> {
        let n = match self.kind {
            ScenarioKind::Standard { n } | ScenarioKind::Twisted { n } => n,
            _ => {
                return Err(CourantError::MalformedStructure(
                    "B-field transforms require a standard or twisted scenario".into(),
                ))
            }
        };
        let pure_v = b.poly().terms().all(|(m, _)| {
            m.p.iter().all(|&k| k == 0)
                && m.e.count_ones() == 2
                && (m.e >> n) == 0
        });
        if !pure_v && !b.poly().is_zero() {
            return Err(CourantError::MalformedStructure(
                "B must be quadratic in the v generators".into(),
            ));
        }
        let theta = self.bracket.exp_adjoint(b.poly(), &self.theta)?;
        let kind = if theta == self.theta {
            self.kind.clone()
        } else {
            ScenarioKind::Twisted { n }
        };
        Ok(CourantScenario {
            bracket: self.bracket.clone(),
            theta,
            label: format!("{} (B-field)", self.label),
            kind,
        })
    }

    /// Generalized-complex check for a quadratic `J` against a frame of
    /// sections: almost-complex (`{J,{J,w}} = -w` on the frame), vanishing
    /// torsion of the derived bracket on frame pairs, and on standard
    /// scenarios the graded shortcut `{{theta,J},J} = -theta`, which must
    /// agree with the classical verdict.
    pub fn gcs_check(
        &self,
        j: &AtiyahExpr,
        frame: &[SectionExpr],
    ) -> Result<GcsOutcome, CourantError> {
        if !j.is_quadratic() {
            return Err(CourantError::NotQuadratic);
        }
        let chart = self.chart();
        let n_e = chart.n_e();
        let origin = vec![Q::zero(); chart.n_x()];
        let mut frame_mat = Mat::zeros(n_e, frame.len());
        for (col, w) in frame.iter().enumerate() {
            let comps = w.poly().e_components()?;
            for (row, comp) in comps.iter().enumerate() {
                let at0 = comp.eval_x(&origin);
                let val = at0.coeff(&crate::graded::Monomial::unit(chart));
                frame_mat.set(row, col, val);
            }
        }
        if frame_mat.rank() != n_e {
            return Err(CourantError::FrameDoesNotSpan);
        }

        let apply_j = |e: &GradedPoly| self.bracket.poisson(j.poly(), e);

        let mut j_squared = true;
        for w in frame {
            if apply_j(&apply_j(w.poly())) != -w.poly() {
                j_squared = false;
                break;
            }
        }

        let mut torsion = true;
        'outer: for w1 in frame {
            for w2 in frame {
                let jw1 = SectionExpr(apply_j(w1.poly()));
                let jw2 = SectionExpr(apply_j(w2.poly()));
                let t = &(&(&self.derived_bracket(&jw1, &jw2).into_poly()
                    - &apply_j(self.derived_bracket(&jw1, w2).poly()))
                    - &apply_j(self.derived_bracket(w1, &jw2).poly()))
                    - self.derived_bracket(w1, w2).poly();
                if !t.is_zero() {
                    torsion = false;
                    break 'outer;
                }
            }
        }

        let super_check = if matches!(self.kind, ScenarioKind::Standard { .. }) {
            let tj = self.bracket.poisson(&self.theta, j.poly());
            let tjj = self.bracket.poisson(&tj, j.poly());
            let holds = tjj == -&self.theta;
            if holds != (j_squared && torsion) {
                return Err(CourantError::Internal(format!(
                    "graded and classical generalized-complex verdicts disagree \
                     (shortcut: {holds}, almost-complex: {j_squared}, torsion: {torsion})"
                )));
            }
            Some(holds)
        } else {
            None
        };

        Ok(GcsOutcome { j_squared, torsion, super_check })
    }
}

/// The quadratic function whose adjoint action realizes a given constant
/// skew-adjoint endomorphism `a` of the degree-1 block (`e^k -> sum_l
/// a[l][k] e^l`). Solved exactly from the chart's own bracket relations.
pub fn quadratic_from_endo(b: &BracketData, a: &Mat) -> Result<AtiyahExpr, CourantError> {
    let chart = b.chart().clone();
    let n = chart.n_e();
    if a.rows != n || a.cols != n {
        return Err(CourantError::MalformedStructure(format!(
            "endomorphism must be {n}x{n}"
        )));
    }
    let skew = &a.transpose().mul(b.metric()).add(&b.metric().mul(a));
    if !skew.is_zero() {
        return Err(CourantError::NotSkew);
    }
    let mut pairs = Vec::new();
    for alpha in 0..n {
        for beta in alpha + 1..n {
            pairs.push((alpha, beta));
        }
    }
    // Row (kappa, lambda): coefficient of e^lambda in {e^alpha e^beta, e^kappa}.
    let mut system = Mat::zeros(n * n, pairs.len());
    for (t, (alpha, beta)) in pairs.iter().enumerate() {
        let basis = &GradedPoly::generator(&chart, Gen::E(*alpha))
            * &GradedPoly::generator(&chart, Gen::E(*beta));
        for kappa in 0..n {
            let img = b.poisson(&basis, &GradedPoly::generator(&chart, Gen::E(kappa)));
            for (lambda, comp) in img.e_components()?.iter().enumerate() {
                let val = comp.coeff(&crate::graded::Monomial::unit(&chart));
                system.set(kappa * n + lambda, t, val);
            }
        }
    }
    let mut rhs = vec![Q::zero(); n * n];
    for kappa in 0..n {
        for lambda in 0..n {
            rhs[kappa * n + lambda] = a.at(lambda, kappa).clone();
        }
    }
    let coeffs = system.solve(&rhs).ok_or_else(|| {
        CourantError::Internal("no quadratic realizes this skew endomorphism".into())
    })?;
    let mut out = GradedPoly::zero(&chart);
    for (t, (alpha, beta)) in pairs.iter().enumerate() {
        if coeffs[t].is_zero() {
            continue;
        }
        let basis = &GradedPoly::generator(&chart, Gen::E(*alpha))
            * &GradedPoly::generator(&chart, Gen::E(*beta));
        out = &out + &basis.scale(&coeffs[t]);
    }
    let q = AtiyahExpr::new(out)?;
    let check = endo_from_quadratic(b, &q)?;
    if &check != a {
        return Err(CourantError::Internal(
            "endomorphism round trip failed after solving".into(),
        ));
    }
    Ok(q)
}

/// The constant endomorphism matrix of the degree-1 block induced by a
/// constant-coefficient quadratic: column `k` holds `{q, e^k}`.
pub fn endo_from_quadratic(b: &BracketData, qd: &AtiyahExpr) -> Result<Mat, CourantError> {
    let chart = b.chart().clone();
    if !qd.is_quadratic() {
        return Err(CourantError::NotQuadratic);
    }
    if qd.poly().x_degree() > 0 {
        return Err(CourantError::NotConstant);
    }
    let n = chart.n_e();
    let mut out = Mat::zeros(n, n);
    for kappa in 0..n {
        let img = b.poisson(qd.poly(), &GradedPoly::generator(&chart, Gen::E(kappa)));
        for (lambda, comp) in img.e_components()?.iter().enumerate() {
            out.set(lambda, kappa, comp.coeff(&crate::graded::Monomial::unit(&chart)));
        }
    }
    Ok(out)
}

/// The quadratic function of the generalized structure attached to a
/// constant symplectic matrix `omega` (`omega[i][j]` antisymmetric,
/// invertible) on a standard scenario: the section map sends `d/dx^i` to
/// `sum_j omega[i][j] dx^j` and `dx^j` to minus the inverse image.
pub fn symplectic_j(s: &CourantScenario, omega: &Mat) -> Result<AtiyahExpr, CourantError> {
    let n = match s.kind() {
        ScenarioKind::Standard { n } | ScenarioKind::Twisted { n } => *n,
        _ => {
            return Err(CourantError::MalformedStructure(
                "symplectic structures require a standard chart".into(),
            ))
        }
    };
    if omega.rows != n || omega.cols != n {
        return Err(CourantError::MalformedStructure(format!("omega must be {n}x{n}")));
    }
    if !omega.add(&omega.transpose()).is_zero() {
        return Err(CourantError::MalformedStructure("omega must be antisymmetric".into()));
    }
    let inv = omega
        .inverse()
        .ok_or_else(|| CourantError::MalformedStructure("omega must be invertible".into()))?;
    let mut endo = Mat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for jj in 0..n {
            // xi_i -> sum_j omega[i][j] v^j.
            endo.set(jj, n + i, omega.at(i, jj).clone());
            // v^j -> -sum_k inv[j][k] xi_k.
            endo.set(n + jj, i, -inv.at(i, jj).clone());
        }
    }
    quadratic_from_endo(s.bracket(), &endo)
}

/// The quadratic function of the generalized structure attached to a
/// constant complex-structure matrix `j` (`j*j = -Id`, columns are images
/// of the coordinate vector fields) on a standard scenario.
pub fn complex_j(s: &CourantScenario, j: &Mat) -> Result<AtiyahExpr, CourantError> {
    let n = match s.kind() {
        ScenarioKind::Standard { n } | ScenarioKind::Twisted { n } => *n,
        _ => {
            return Err(CourantError::MalformedStructure(
                "complex structures require a standard chart".into(),
            ))
        }
    };
    if j.rows != n || j.cols != n {
        return Err(CourantError::MalformedStructure(format!("j must be {n}x{n}")));
    }
    let mut sq = j.mul(j);
    for i in 0..n {
        *sq.at_mut(i, i) += q(1);
    }
    if !sq.is_zero() {
        return Err(CourantError::MalformedStructure("j*j must be -Id".into()));
    }
    let mut endo = Mat::zeros(2 * n, 2 * n);
    for k in 0..n {
        for i in 0..n {
            // xi_i -> sum_k j[k][i] xi_k (the tangent block).
            endo.set(n + k, n + i, j.at(k, i).clone());
            // v^k -> -sum_i j[k][i] v^i (minus the adjoint on forms).
            endo.set(i, k, -j.at(k, i).clone());
        }
    }
    quadratic_from_endo(s.bracket(), &endo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graded::parse_expr;

    fn section(s: &CourantScenario, text: &str) -> SectionExpr {
        SectionExpr::new(parse_expr(s.chart(), text).unwrap()).unwrap()
    }

    fn func(s: &CourantScenario, text: &str) -> GradedPoly {
        parse_expr(s.chart(), text).unwrap()
    }

    #[test]
    fn standard_master_and_shape() {
        let s = standard_theta(3);
        assert!(s.master_equation());
        assert_eq!(s.theta().to_string(), "v1*p1 + v2*p2 + v3*p3");
    }

    #[test]
    fn twisted_master_tracks_closedness() {
        // Constant twist on R^3 is closed.
        let s3 = standard_theta(3);
        let one = func(&s3, "1");
        let closed = twisted_theta(3, &[(0, 1, 2, one)]).unwrap();
        assert!(closed.master_equation());
        assert_eq!(closed.theta().to_string(), "v1*p1 + v2*p2 + v3*p3 + v1*v2*v3");
        // chi_123 = x4 on R^4 is not closed; the residual is the frozen
        // value -2 v1v2v3v4.
        let s4 = standard_theta(4);
        let x4 = func(&s4, "x4");
        let open = twisted_theta(4, &[(0, 1, 2, x4)]).unwrap();
        assert!(!open.master_equation());
        assert_eq!(open.master_residual().to_string(), "-2*v1*v2*v3*v4");
    }

    #[test]
    fn twist_input_is_alternating() {
        let s3 = standard_theta(3);
        let one = func(&s3, "1");
        // Giving (0,1,2) -> 1 and (1,0,2) -> 1 is inconsistent.
        let bad = twisted_theta(3, &[(0, 1, 2, one.clone()), (1, 0, 2, one.clone())]);
        assert!(matches!(bad, Err(CourantError::NotAlternating(_))));
        // The alternating completion is accepted.
        let good = twisted_theta(3, &[(0, 1, 2, one.clone()), (1, 0, 2, -&one)]).unwrap();
        assert!(good.master_equation());
        // Repeated indices must carry zero.
        let rep = twisted_theta(3, &[(0, 0, 2, one)]);
        assert!(matches!(rep, Err(CourantError::NotAlternating(_))));
    }

    #[test]
    fn anchor_values() {
        let s = standard_theta(2);
        let x1 = func(&s, "x1");
        // Sections d/dx^i correspond to xi_i: the anchor acts as d/dx^i.
        assert_eq!(s.anchor_apply(&section(&s, "xi1"), &x1).unwrap(), func(&s, "1"));
        // 1-forms are killed by the anchor.
        assert!(s.anchor_apply(&section(&s, "v1"), &x1).unwrap().is_zero());
        // Module structure: rho(x2 d/dx1) x1 = x2.
        assert_eq!(
            s.anchor_apply(&section(&s, "x2*xi1"), &x1).unwrap(),
            func(&s, "x2")
        );
    }

    #[test]
    fn derived_bracket_values() {
        let s = standard_theta(2);
        // [d/dx1, x1 d/dx2] = d/dx2.
        assert_eq!(
            s.derived_bracket(&section(&s, "xi1"), &section(&s, "x1*xi2")),
            section(&s, "xi2")
        );
        // Lie derivative of the 1-form x1 dx1 along d/dx1 is dx1.
        assert_eq!(
            s.derived_bracket(&section(&s, "xi1"), &section(&s, "x1*v1")),
            section(&s, "v1")
        );
        // Constant 1-forms bracket to zero.
        assert!(s
            .derived_bracket(&section(&s, "v1"), &section(&s, "v2"))
            .poly()
            .is_zero());
        // Pairing of a vector and a covector is the natural one, with no
        // half: {xi1 + v1, xi1 + v1} = 2 <dx1, d/dx1>... = 2.
        let e = section(&s, "xi1 + v1");
        assert_eq!(s.pairing(&e, &e), func(&s, "2"));
    }

    #[test]
    fn twisted_bracket_picks_up_the_form_term() {
        let s3 = standard_theta(3);
        let one = func(&s3, "1");
        let tw = twisted_theta(3, &[(0, 1, 2, one)]).unwrap();
        // [[d/dx1, d/dx2]] acquires the contraction of the twist: -dx3
        // under the pinned sign conventions.
        assert_eq!(
            tw.derived_bracket(&section(&tw, "xi1"), &section(&tw, "xi2")),
            section(&tw, "-v3")
        );
    }

    #[test]
    fn axioms_pass_on_standard() {
        let s = standard_theta(2);
        let sections = [
            section(&s, "xi1"),
            section(&s, "v1"),
            section(&s, "x1*xi2"),
            section(&s, "x2*v1 + xi2"),
        ];
        let functions = [func(&s, "x1"), func(&s, "x2"), func(&s, "x1*x2")];
        let report = s.verify_axioms(&sections, &functions).unwrap();
        assert!(report.all_pass(), "{:?}", report.counterexamples);
        // Empty lists pass vacuously.
        let empty = s.verify_axioms(&[], &[]).unwrap();
        assert!(empty.all_pass());
    }

    #[test]
    fn jacobi_fails_without_master() {
        let s4 = standard_theta(4);
        let x4 = func(&s4, "x4");
        let open = twisted_theta(4, &[(0, 1, 2, x4)]).unwrap();
        let sections = [
            section(&open, "xi1"),
            section(&open, "xi2"),
            section(&open, "xi3"),
        ];
        let report = open.verify_axioms(&sections, &[]).unwrap();
        assert!(!report.passes[0], "the bracket Jacobi law should fail");
        assert!(report.counterexamples[0].is_some());
    }

    #[test]
    fn tangent_double_is_standard() {
        let n = 2;
        let chart = algebroid_chart(n, n);
        let zero = GradedPoly::zero(&chart);
        let one = GradedPoly::one(&chart);
        let rho: Vec<Vec<GradedPoly>> = (0..n)
            .map(|a| (0..n).map(|i| if a == i { one.clone() } else { zero.clone() }).collect())
            .collect();
        let c = vec![vec![vec![zero.clone(); n]; n]; n];
        let s = theta_from_lie_algebroid(n, n, &rho, &c).unwrap();
        assert!(s.master_equation());
        assert_eq!(s.theta(), standard_theta(n).theta());
    }

    #[test]
    fn rotation_algebra_over_a_point() {
        // Structure constants eps_abc of so(3); over a point the master
        // equation is the Jacobi identity.
        let chart = algebroid_chart(0, 3);
        let zero = GradedPoly::zero(&chart);
        let one = GradedPoly::one(&chart);
        let mut c = vec![vec![vec![zero.clone(); 3]; 3]; 3];
        let eps: [(usize, usize, usize, i64); 6] = [
            (0, 1, 2, 1),
            (0, 2, 1, -1),
            (1, 2, 0, 1),
            (1, 0, 2, -1),
            (2, 0, 1, 1),
            (2, 1, 0, -1),
        ];
        for (cc, a, b, sgn) in eps {
            c[cc][a][b] = if sgn == 1 { one.clone() } else { -&one };
        }
        let rho: Vec<Vec<GradedPoly>> = vec![vec![]; 3];
        let s = theta_from_lie_algebroid(0, 3, &rho, &c).unwrap();
        assert!(s.master_equation());
        // [[xi_a, xi_b]] = eps_abc xi_c with the pinned sign.
        assert_eq!(
            s.derived_bracket(&section(&s, "xi1"), &section(&s, "xi2")),
            section(&s, "xi3")
        );
        assert_eq!(
            s.derived_bracket(&section(&s, "xi2"), &section(&s, "xi1")),
            section(&s, "-xi3")
        );
    }

    #[test]
    fn broken_jacobi_is_detected() {
        // [e1,e2] = e3 and [e1,e3] = e1 violate the Jacobi identity.
        let chart = algebroid_chart(0, 3);
        let zero = GradedPoly::zero(&chart);
        let one = GradedPoly::one(&chart);
        let mut c = vec![vec![vec![zero.clone(); 3]; 3]; 3];
        c[2][0][1] = one.clone();
        c[2][1][0] = -&one;
        c[0][0][2] = one.clone();
        c[0][2][0] = -&one;
        let rho: Vec<Vec<GradedPoly>> = vec![vec![]; 3];
        let s = theta_from_lie_algebroid(0, 3, &rho, &c).unwrap();
        assert!(!s.master_equation());
        // Non-antisymmetric input is rejected up front.
        let mut bad = vec![vec![vec![zero.clone(); 3]; 3]; 3];
        bad[0][1][2] = one;
        assert!(matches!(
            theta_from_lie_algebroid(0, 3, &rho, &bad),
            Err(CourantError::MalformedStructure(_))
        ));
    }

    #[test]
    fn bfield_twists_by_minus_db() {
        let s = standard_theta(3);
        // B = x1 v2 v3 corresponds to the 2-form x1 dx2 dx3 with
        // (dB)_123 = 1; the flow lands on the twist -dB.
        let b = AtiyahExpr::new(func(&s, "x1*v2*v3")).unwrap();
        let moved = s.bfield_transform(&b).unwrap();
        assert!(moved.master_equation());
        assert_eq!(
            moved.theta().to_string(),
            "v1*p1 + v2*p2 + v3*p3 - v1*v2*v3"
        );
        assert!(matches!(moved.kind(), ScenarioKind::Twisted { n: 3 }));
        // Constant B is closed: theta is unchanged.
        let flat = AtiyahExpr::new(func(&s, "v1*v2")).unwrap();
        let same = s.bfield_transform(&flat).unwrap();
        assert_eq!(same.theta(), s.theta());
        assert!(matches!(same.kind(), ScenarioKind::Standard { n: 3 }));
        // Sections of the xi block are rejected.
        let bad = AtiyahExpr::new(func(&s, "v1*xi2")).unwrap();
        assert!(s.bfield_transform(&bad).is_err());
    }

    #[test]
    fn symplectic_j_is_generalized_complex() {
        let s = standard_theta(2);
        let mut omega = Mat::zeros(2, 2);
        omega.set(0, 1, q(1));
        omega.set(1, 0, q(-1));
        let j = symplectic_j(&s, &omega).unwrap();
        assert_eq!(j.poly().to_string(), "-v1*v2 - xi1*xi2");
        let frame = [
            section(&s, "v1"),
            section(&s, "v2"),
            section(&s, "xi1"),
            section(&s, "xi2"),
            section(&s, "x1*xi2"),
            section(&s, "x2*v1 + xi1"),
        ];
        let outcome = s.gcs_check(&j, &frame).unwrap();
        assert!(outcome.ok());
        assert_eq!(outcome.super_check, Some(true));
    }

    #[test]
    fn complex_j_is_generalized_complex() {
        let s = standard_theta(4);
        let mut jm = Mat::zeros(4, 4);
        jm.set(1, 0, q(1));
        jm.set(0, 1, q(-1));
        jm.set(3, 2, q(1));
        jm.set(2, 3, q(-1));
        let j = complex_j(&s, &jm).unwrap();
        let mut frame = Vec::new();
        for name in ["v1", "v2", "v3", "v4", "xi1", "xi2", "xi3", "xi4"] {
            frame.push(section(&s, name));
        }
        frame.push(section(&s, "x1*xi3"));
        frame.push(section(&s, "x3*v1"));
        let outcome = s.gcs_check(&j, &frame).unwrap();
        assert!(outcome.ok());
        assert_eq!(outcome.super_check, Some(true));
    }

    #[test]
    fn zero_j_fails_almost_complex() {
        let s = standard_theta(2);
        let zero = AtiyahExpr::new(GradedPoly::zero(s.chart())).unwrap();
        let frame = [
            section(&s, "v1"),
            section(&s, "v2"),
            section(&s, "xi1"),
            section(&s, "xi2"),
        ];
        let outcome = s.gcs_check(&zero, &frame).unwrap();
        assert!(!outcome.ok());
        assert!(!outcome.j_squared);
        assert_eq!(outcome.super_check, Some(false));
    }

    #[test]
    fn endo_round_trip() {
        let s = standard_theta(2);
        let b = s.bracket();
        // A generic skew-adjoint endomorphism for the hyperbolic pairing:
        // block [[A, B], [C, -A^T]] with B, C antisymmetric.
        let m = Mat::from_int_rows(&[
            &[1, 2, 0, 3],
            &[4, -1, -3, 0],
            &[0, 5, -1, -4],
            &[-5, 0, -2, 1],
        ]);
        let quad = quadratic_from_endo(b, &m).unwrap();
        assert_eq!(endo_from_quadratic(b, &quad).unwrap(), m);
        // Non-skew input is rejected.
        let bad = Mat::identity(4);
        assert!(matches!(quadratic_from_endo(b, &bad), Err(CourantError::NotSkew)));
    }

    #[test]
    fn gcs_rejects_bad_inputs() {
        let s = standard_theta(2);
        // p-terms are not quadratic expressions.
        let with_p = AtiyahExpr::new(func(&s, "p1")).unwrap();
        let frame = [
            section(&s, "v1"),
            section(&s, "v2"),
            section(&s, "xi1"),
            section(&s, "xi2"),
        ];
        assert!(matches!(s.gcs_check(&with_p, &frame), Err(CourantError::NotQuadratic)));
        // A frame that does not span is rejected.
        let j = AtiyahExpr::new(func(&s, "v1*v2 + xi1*xi2")).unwrap();
        let small = [section(&s, "v1"), section(&s, "v2")];
        assert!(matches!(s.gcs_check(&j, &small), Err(CourantError::FrameDoesNotSpan)));
    }
}
