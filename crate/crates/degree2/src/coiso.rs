//! Coisotropic ideals in triangular form and the reductions they induce.
//!
//! An ideal is presented by three blocks of generators in a fixed chart:
//! base constraints `x^a` (the zero locus `N`), odd generators
//! `e^b + beta_b` (the isotropic subbundle `K`), and degree-2 generators
//! `p_c + gamma_c` (leaf directions of a foliation of `N` together with a
//! flat connection on `K^perp / K`). The triangular shape gives a normal
//! form by substitution, hence decidable membership. On top of that the
//! module provides the normalizer test, symbolic and geometric
//! reducibility of a hamiltonian (cross-checked against each other), and
//! reduction of hamiltonians, quadratic (generalized complex) structures,
//! and lagrangian frames.

use crate::courant::{AtiyahExpr, CourantError, CourantScenario, GcsOutcome, ScenarioKind, SectionExpr};
use crate::graded::{Chart, Gen, GradedError, GradedPoly, Monomial};
use crate::linalg::{Mat, QuadraticSpace, Subspace};
use crate::poisson::{BracketData, PoissonError};
use crate::rat::{q, Q};
use crate::sampling::sample_points_on;
use num::traits::Zero;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoisoError {
    #[error("invalid reduction data: {0}")]
    InvalidData(String),
    #[error("frame cannot be brought to triangular form: {0}")]
    NotTriangularizable(String),
    #[error("no flat connection correction exists for `{0}`")]
    NoConnectionCorrection(String),
    #[error("ideal is not coisotropic: {0}")]
    NotCoisotropic(String),
    #[error("structure does not descend: {0}")]
    NotReducible(String),
    #[error("reduced expression depends on eliminated generator `{0}`")]
    EliminatedGenerator(String),
    #[error("reduced pairing is degenerate: {0}")]
    DegeneratePairing(String),
    #[error("frame is not lagrangian: {0}")]
    NotLagrangian(String),
    #[error("frame is not involutive: {0}")]
    NotInvolutive(String),
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("sampling degeneracy: {0}")]
    SamplingDegeneracy(String),
    #[error(transparent)]
    Courant(#[from] CourantError),
    #[error(transparent)]
    Graded(#[from] GradedError),
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

/// A finitely generated ideal in triangular form: generators `x^a` for
/// `a` in `drop_x`, `e^b + beta_b` with `beta_b` free of eliminated odd
/// generators, and `p_c + gamma_c` with `gamma_c` a pure odd quadratic
/// (no `p`) free of eliminated odd generators. Corrections are stored
/// with the `x^a` already set to zero, which keeps the normal-form
/// substitution a one-pass retraction.
#[derive(Debug, Clone)]
pub struct CoisotropicIdeal {
    bracket: BracketData,
    drop_x: Vec<usize>,
    e_gens: Vec<(usize, GradedPoly)>,
    p_gens: Vec<(usize, GradedPoly)>,
}

impl CoisotropicIdeal {
    pub fn new(
        bracket: BracketData,
        drop_x: Vec<usize>,
        e_gens: Vec<(usize, GradedPoly)>,
        p_gens: Vec<(usize, GradedPoly)>,
    ) -> Result<CoisotropicIdeal, CoisoError> {
        let chart = bracket.chart().clone();
        let mut drop_x = drop_x;
        drop_x.sort_unstable();
        drop_x.dedup();
        if drop_x.iter().any(|&a| a >= chart.n_x()) {
            return Err(CoisoError::InvalidData("base constraint index out of range".into()));
        }
        let mut e_gens = e_gens;
        e_gens.sort_by_key(|(b, _)| *b);
        let mut p_gens = p_gens;
        p_gens.sort_by_key(|(c, _)| *c);
        let e_set: Vec<usize> = e_gens.iter().map(|(b, _)| *b).collect();
        let p_set: Vec<usize> = p_gens.iter().map(|(c, _)| *c).collect();
        if e_set.windows(2).any(|w| w[0] == w[1]) || p_set.windows(2).any(|w| w[0] == w[1]) {
            return Err(CoisoError::InvalidData("duplicate generator index".into()));
        }
        if e_set.iter().any(|&b| b >= chart.n_e()) || p_set.iter().any(|&c| c >= chart.n_p()) {
            return Err(CoisoError::InvalidData("generator index out of range".into()));
        }
        let eliminated_e: Vec<Gen> = e_set.iter().map(|&b| Gen::E(b)).collect();
        let all_p: Vec<Gen> = (0..chart.n_p()).map(Gen::P).collect();
        let check_chart = |p: &GradedPoly| -> Result<(), CoisoError> {
            if p.chart() != &chart {
                return Err(CoisoError::InvalidData("correction lives in a different chart".into()));
            }
            Ok(())
        };
        let e_gens: Vec<(usize, GradedPoly)> = e_gens
            .into_iter()
            .map(|(b, corr)| -> Result<(usize, GradedPoly), CoisoError> {
                check_chart(&corr)?;
                if !corr.is_homogeneous_of(1) {
                    return Err(CoisoError::InvalidData(format!(
                        "correction of `{}` must be homogeneous of degree 1",
                        chart.name(Gen::E(b))
                    )));
                }
                let corr = corr.kill_x(&drop_x);
                if !corr.avoids(&eliminated_e) {
                    return Err(CoisoError::InvalidData(format!(
                        "correction of `{}` uses an eliminated odd generator",
                        chart.name(Gen::E(b))
                    )));
                }
                Ok((b, corr))
            })
            .collect::<Result<_, _>>()?;
        let p_gens: Vec<(usize, GradedPoly)> = p_gens
            .into_iter()
            .map(|(c, corr)| -> Result<(usize, GradedPoly), CoisoError> {
                check_chart(&corr)?;
                if !corr.is_homogeneous_of(2) {
                    return Err(CoisoError::InvalidData(format!(
                        "correction of `{}` must be homogeneous of degree 2",
                        chart.name(Gen::P(c))
                    )));
                }
                let corr = corr.kill_x(&drop_x);
                if !corr.avoids(&eliminated_e) || !corr.avoids(&all_p) {
                    return Err(CoisoError::InvalidData(format!(
                        "correction of `{}` must be a pure odd quadratic in surviving generators",
                        chart.name(Gen::P(c))
                    )));
                }
                Ok((c, corr))
            })
            .collect::<Result<_, _>>()?;
        Ok(CoisotropicIdeal { bracket, drop_x, e_gens, p_gens })
    }

    pub fn bracket(&self) -> &BracketData {
        &self.bracket
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.bracket.chart()
    }

    /// Indices of the base constraints `x^a`.
    pub fn drop_x(&self) -> &[usize] {
        &self.drop_x
    }

    /// Indices of the eliminated odd generators.
    pub fn e_indices(&self) -> Vec<usize> {
        self.e_gens.iter().map(|(b, _)| *b).collect()
    }

    /// Indices of the eliminated degree-2 generators.
    pub fn p_indices(&self) -> Vec<usize> {
        self.p_gens.iter().map(|(c, _)| *c).collect()
    }

    pub fn e_gens(&self) -> &[(usize, GradedPoly)] {
        &self.e_gens
    }

    pub fn p_gens(&self) -> &[(usize, GradedPoly)] {
        &self.p_gens
    }

    /// All generators as polynomials, degree 0 then 1 then 2 blocks.
    pub fn generators(&self) -> Vec<GradedPoly> {
        let chart = self.chart();
        let mut out: Vec<GradedPoly> = self
            .drop_x
            .iter()
            .map(|&a| GradedPoly::generator(chart, Gen::X(a)))
            .collect();
        for (b, corr) in &self.e_gens {
            out.push(&GradedPoly::generator(chart, Gen::E(*b)) + corr);
        }
        for (c, corr) in &self.p_gens {
            out.push(&GradedPoly::generator(chart, Gen::P(*c)) + corr);
        }
        out
    }

    /// Normal form: substitute every eliminated generator by minus its
    /// correction, then set the constrained base variables to zero. A
    /// polynomial lies in the ideal exactly when its normal form is zero.
    pub fn normal_form(&self, f: &GradedPoly) -> GradedPoly {
        let mut map: BTreeMap<Gen, GradedPoly> = BTreeMap::new();
        for (b, corr) in &self.e_gens {
            map.insert(Gen::E(*b), -corr);
        }
        for (c, corr) in &self.p_gens {
            map.insert(Gen::P(*c), -corr);
        }
        f.substitute(&map)
            .expect("corrections are homogeneous of the right degree by construction")
            .kill_x(&self.drop_x)
    }

    /// Ideal membership.
    pub fn contains(&self, f: &GradedPoly) -> bool {
        self.normal_form(f).is_zero()
    }

    /// True when `{f, I} ⊆ I`.
    pub fn in_normalizer(&self, f: &GradedPoly) -> bool {
        self.normalizer_witness(f).is_none()
    }

    /// A generator whose bracket with `f` escapes the ideal, if any.
    pub fn normalizer_witness(&self, f: &GradedPoly) -> Option<String> {
        for g in self.generators() {
            let br = self.bracket.poisson(f, &g);
            if !self.contains(&br) {
                return Some(format!("{{f, {g}}} = {br} is not in the ideal"));
            }
        }
        None
    }

    /// True when the ideal is closed under the bracket.
    pub fn is_coisotropic(&self) -> bool {
        self.coisotropy_witness().is_none()
    }

    /// A pair of generators whose bracket escapes the ideal, if any. The
    /// diagonal is checked for odd generators (even elements self-bracket
    /// to zero identically).
    pub fn coisotropy_witness(&self) -> Option<String> {
        let gens = self.generators();
        for i in 0..gens.len() {
            for j in i..gens.len() {
                if i == j && gens[i].degree() != Some(1) {
                    continue;
                }
                let br = self.bracket.poisson(&gens[i], &gens[j]);
                if !self.contains(&br) {
                    return Some(format!(
                        "{{{}, {}}} = {} is not in the ideal",
                        gens[i], gens[j], br
                    ));
                }
            }
        }
        None
    }
}

/// True when the hamiltonian normalizes the ideal, i.e. the bracket flow
/// of `theta` preserves the constraint set and the reduction exists at
/// the symbolic level.
pub fn reducible_symbolic(s: &CourantScenario, i: &CoisotropicIdeal) -> bool {
    assert_eq!(s.chart(), i.chart(), "scenario and ideal must share a chart");
    i.in_normalizer(s.theta())
}

/// Classical-geometry input for a reduction: the zero locus `{x^a = 0}`,
/// a frame of the isotropic subbundle `K`, leaf directions of the
/// foliation (coordinate indices), and a frame of flat sections spanning
/// `K^perp / K`.
#[derive(Debug, Clone)]
pub struct GeometricCoisoData {
    pub drop_x: Vec<usize>,
    pub k_frame: Vec<SectionExpr>,
    pub f_index: Vec<usize>,
    pub flat_frame: Vec<SectionExpr>,
}

impl GeometricCoisoData {
    /// Shape and nondegeneracy checks: indices in range and disjoint,
    /// `K` isotropic over the zero locus, the flat frame orthogonal to
    /// `K` and of complementary rank, with ranks verified at the origin,
    /// at unit points, and at seeded random points of the locus.
    pub fn validate(&self, b: &BracketData, seed: u64) -> Result<(), CoisoError> {
        let chart = b.chart();
        let mut seen = BTreeSet::new();
        for &a in &self.drop_x {
            if a >= chart.n_x() {
                return Err(CoisoError::InvalidData("drop_x index out of range".into()));
            }
            if !seen.insert(a) {
                return Err(CoisoError::InvalidData("duplicate drop_x index".into()));
            }
        }
        let mut seen_f = BTreeSet::new();
        for &c in &self.f_index {
            if c >= chart.n_x() {
                return Err(CoisoError::InvalidData("f_index out of range".into()));
            }
            if !seen_f.insert(c) {
                return Err(CoisoError::InvalidData("duplicate f_index".into()));
            }
            if seen.contains(&c) {
                return Err(CoisoError::InvalidData(
                    "leaf direction coincides with a constrained coordinate".into(),
                ));
            }
        }
        for w in self.k_frame.iter().chain(self.flat_frame.iter()) {
            if w.poly().chart() != chart {
                return Err(CoisoError::InvalidData("frame lives in a different chart".into()));
            }
        }
        for (i, ki) in self.k_frame.iter().enumerate() {
            for kj in &self.k_frame[i..] {
                let pair = b.poisson(ki.poly(), kj.poly()).kill_x(&self.drop_x);
                if !pair.is_zero() {
                    return Err(CoisoError::InvalidData(format!(
                        "k-frame is not isotropic over the locus: <{}, {}> = {}",
                        ki.poly(),
                        kj.poly(),
                        pair
                    )));
                }
            }
        }
        for w in &self.flat_frame {
            for k in &self.k_frame {
                let pair = b.poisson(w.poly(), k.poly()).kill_x(&self.drop_x);
                if !pair.is_zero() {
                    return Err(CoisoError::InvalidData(format!(
                        "flat frame is not orthogonal to K: <{}, {}> = {}",
                        w.poly(),
                        k.poly(),
                        pair
                    )));
                }
            }
        }
        if self.flat_frame.len() + 2 * self.k_frame.len() != chart.n_e() {
            return Err(CoisoError::InvalidData(format!(
                "flat frame has {} elements, expected {}",
                self.flat_frame.len(),
                chart.n_e() as isize - 2 * self.k_frame.len() as isize
            )));
        }
        for point in sample_points_on(chart.n_x(), &self.drop_x, seed, 5) {
            let k_vecs: Vec<Vec<Q>> = self
                .k_frame
                .iter()
                .map(|k| e_vector_at(k.poly(), &point))
                .collect::<Result<_, _>>()?;
            let k_rank = Subspace::from_vectors(chart.n_e(), &k_vecs).dim();
            if k_rank != self.k_frame.len() {
                return Err(CoisoError::SamplingDegeneracy(format!(
                    "k-frame drops rank at {point:?}"
                )));
            }
            let mut all = k_vecs;
            for w in &self.flat_frame {
                all.push(e_vector_at(w.poly(), &point)?);
            }
            if Subspace::from_vectors(chart.n_e(), &all).dim()
                != self.k_frame.len() + self.flat_frame.len()
            {
                return Err(CoisoError::SamplingDegeneracy(format!(
                    "flat frame is not independent of K at {point:?}"
                )));
            }
        }
        Ok(())
    }
}

/// The fiber components of a degree-1 element at a base point.
fn e_vector_at(f: &GradedPoly, point: &[Q]) -> Result<Vec<Q>, CoisoError> {
    let chart = f.chart().clone();
    let comps = f.e_components()?;
    Ok(comps
        .iter()
        .map(|c| c.eval_x(point).coeff(&Monomial::unit(&chart)))
        .collect())
}

/// The fiber components of a constant degree-1 element, if constant.
fn constant_e_vector(f: &GradedPoly) -> Result<Option<Vec<Q>>, CoisoError> {
    if f.x_degree() > 0 {
        return Ok(None);
    }
    let chart = f.chart().clone();
    let comps = f.e_components()?;
    Ok(Some(comps.iter().map(|c| c.coeff(&Monomial::unit(&chart))).collect()))
}

fn poly_from_e_vector(chart: &Arc<Chart>, v: &[Q]) -> GradedPoly {
    let mut out = GradedPoly::zero(chart);
    for (k, c) in v.iter().enumerate() {
        if !c.is_zero() {
            out = &out + &GradedPoly::generator(chart, Gen::E(k)).scale(c);
        }
    }
    out
}

/// Exponent vectors of all monomials supported on `allowed` with total
/// degree at most `max_deg`.
fn x_monomials(n_x: usize, allowed: &[usize], max_deg: u32) -> Vec<Vec<u32>> {
    fn rec(
        pos: usize,
        allowed: &[usize],
        budget: u32,
        cur: &mut Vec<u32>,
        out: &mut Vec<Vec<u32>>,
    ) {
        if pos == allowed.len() {
            out.push(cur.clone());
            return;
        }
        for k in 0..=budget {
            cur[allowed[pos]] = k;
            rec(pos + 1, allowed, budget - k, cur, out);
        }
        cur[allowed[pos]] = 0;
    }
    let mut out = Vec::new();
    rec(0, allowed, max_deg, &mut vec![0; n_x], &mut out);
    out
}

fn monomial_poly(chart: &Arc<Chart>, expo: &[u32]) -> GradedPoly {
    let word: Vec<Gen> = expo
        .iter()
        .enumerate()
        .flat_map(|(i, &k)| std::iter::repeat(Gen::X(i)).take(k as usize))
        .collect();
    GradedPoly::normalize(chart, &[(word, q(1))])
}

/// A frame element of a module-span problem: coefficients range over
/// polynomials supported on `allowed_x` of degree at most `max_deg`.
pub(crate) struct SpanFrame<'a> {
    pub poly: &'a GradedPoly,
    pub allowed_x: Vec<usize>,
    pub max_deg: u32,
}

/// Decides `target = sum_k c_k(x) * frame_k` exactly, with each
/// coefficient constrained as described by its frame entry. Returns the
/// coefficients on success.
pub(crate) fn in_module_span(
    target: &GradedPoly,
    frames: &[SpanFrame<'_>],
) -> Option<Vec<GradedPoly>> {
    let chart = target.chart().clone();
    if target.is_zero() {
        return Some(vec![GradedPoly::zero(&chart); frames.len()]);
    }
    if frames.is_empty() {
        return None;
    }
    let mut cols: Vec<(usize, GradedPoly, GradedPoly)> = Vec::new();
    for (fi, fr) in frames.iter().enumerate() {
        for expo in x_monomials(chart.n_x(), &fr.allowed_x, fr.max_deg) {
            let mono = monomial_poly(&chart, &expo);
            let prod = &mono * fr.poly;
            if !prod.is_zero() {
                cols.push((fi, mono, prod));
            }
        }
    }
    let mut row_ix: BTreeMap<Monomial, usize> = BTreeMap::new();
    for (_, _, p) in &cols {
        for (m, _) in p.terms() {
            let next = row_ix.len();
            row_ix.entry(m.clone()).or_insert(next);
        }
    }
    for (m, _) in target.terms() {
        let next = row_ix.len();
        row_ix.entry(m.clone()).or_insert(next);
    }
    let mut a = Mat::zeros(row_ix.len(), cols.len());
    let mut rhs = vec![Q::zero(); row_ix.len()];
    for (j, (_, _, p)) in cols.iter().enumerate() {
        for (m, c) in p.terms() {
            a.set(row_ix[m], j, c.clone());
        }
    }
    for (m, c) in target.terms() {
        rhs[row_ix[m]] = c.clone();
    }
    let sol = a.solve(&rhs)?;
    let mut coeffs = vec![GradedPoly::zero(&chart); frames.len()];
    for (j, (fi, mono, _)) in cols.iter().enumerate() {
        if !sol[j].is_zero() {
            coeffs[*fi] = &coeffs[*fi] + &mono.scale(&sol[j]);
        }
    }
    Some(coeffs)
}

/// Builds the triangular ideal determined by classical reduction data:
/// triangularizes the `K`-frame over constant pivots, then solves for
/// the quadratic connection corrections of the leaf generators so that
/// the flat frame is parallel. Fails loudly when no correction exists or
/// the resulting ideal is not coisotropic.
pub fn ideal_from_data(
    b: &BracketData,
    d: &GeometricCoisoData,
    seed: u64,
) -> Result<CoisotropicIdeal, CoisoError> {
    d.validate(b, seed)?;
    let chart = b.chart().clone();
    let n_e = chart.n_e();
    let drop_x = {
        let mut a = d.drop_x.clone();
        a.sort_unstable();
        a
    };

    // Triangularize the K-frame with constant pivots.
    let mut rows: Vec<Vec<GradedPoly>> = d
        .k_frame
        .iter()
        .map(|k| -> Result<Vec<GradedPoly>, CoisoError> {
            Ok(k.poly()
                .e_components()?
                .into_iter()
                .map(|c| c.kill_x(&drop_x))
                .collect())
        })
        .collect::<Result<_, _>>()?;
    let mut pivot_cols: BTreeSet<usize> = BTreeSet::new();
    let mut pivot_of_row: Vec<usize> = Vec::new();
    for r in 0..rows.len() {
        let unit = Monomial::unit(&chart);
        let col = (0..n_e).find(|&j| {
            !pivot_cols.contains(&j)
                && !rows[r][j].is_zero()
                && rows[r][j].x_degree() == 0
        });
        let Some(col) = col else {
            return Err(CoisoError::NotTriangularizable(format!(
                "k-frame row {r} has no constant pivot"
            )));
        };
        let inv = q(1) / rows[r][col].coeff(&unit);
        for j in 0..n_e {
            rows[r][j] = rows[r][j].scale(&inv);
        }
        for r2 in 0..rows.len() {
            if r2 == r || rows[r2][col].is_zero() {
                continue;
            }
            let factor = rows[r2][col].clone();
            for j in 0..n_e {
                rows[r2][j] = &rows[r2][j] - &(&factor * &rows[r][j]);
            }
        }
        pivot_cols.insert(col);
        pivot_of_row.push(col);
    }
    let e_gens: Vec<(usize, GradedPoly)> = pivot_of_row
        .iter()
        .enumerate()
        .map(|(r, &b_idx)| {
            let mut corr = GradedPoly::zero(&chart);
            for j in 0..n_e {
                if j != b_idx && !rows[r][j].is_zero() {
                    corr = &corr + &(&rows[r][j] * &GradedPoly::generator(&chart, Gen::E(j)));
                }
            }
            (b_idx, corr)
        })
        .collect();

    // Connection corrections: for each leaf direction c, find a pure odd
    // quadratic q_c with p_c + q_c bracketing every flat section and
    // every K-generator back into the ideal.
    let e_sub: BTreeMap<Gen, GradedPoly> = e_gens
        .iter()
        .map(|(b_idx, corr)| (Gen::E(*b_idx), -corr))
        .collect();
    let nf1 = |f: &GradedPoly| -> GradedPoly {
        f.substitute(&e_sub)
            .expect("triangular corrections are degree-1 homogeneous")
            .kill_x(&drop_x)
    };
    let gen_polys: Vec<GradedPoly> = e_gens
        .iter()
        .map(|(b_idx, corr)| &GradedPoly::generator(&chart, Gen::E(*b_idx)) + corr)
        .collect();
    let conditions: Vec<GradedPoly> = d
        .flat_frame
        .iter()
        .map(|w| w.poly().clone())
        .chain(gen_polys.iter().cloned())
        .collect();
    let allowed_x: Vec<usize> = (0..chart.n_x()).filter(|i| !drop_x.contains(i)).collect();
    let mut p_gens: Vec<(usize, GradedPoly)> = Vec::new();
    let mut f_sorted = d.f_index.clone();
    f_sorted.sort_unstable();
    for &c in &f_sorted {
        let p_poly = GradedPoly::generator(&chart, Gen::P(c));
        let targets: Vec<GradedPoly> =
            conditions.iter().map(|u| nf1(&b.poisson(&p_poly, u))).collect();
        if targets.iter().all(|t| t.is_zero()) {
            p_gens.push((c, GradedPoly::zero(&chart)));
            continue;
        }
        let max_deg = 1 + conditions
            .iter()
            .map(|u| u.x_degree())
            .chain(targets.iter().map(|t| t.x_degree()))
            .max()
            .unwrap_or(0) as u32;
        let free_e: Vec<usize> = (0..n_e).filter(|j| !pivot_cols.contains(j)).collect();
        let monos = x_monomials(chart.n_x(), &allowed_x, max_deg);
        let mut basis: Vec<GradedPoly> = Vec::new();
        for (si, &s) in free_e.iter().enumerate() {
            for &t in &free_e[si + 1..] {
                for expo in &monos {
                    let word: Vec<Gen> = expo
                        .iter()
                        .enumerate()
                        .flat_map(|(i, &k)| std::iter::repeat(Gen::X(i)).take(k as usize))
                        .chain([Gen::E(s), Gen::E(t)])
                        .collect();
                    basis.push(GradedPoly::normalize(&chart, &[(word, q(1))]));
                }
            }
        }
        if basis.len() > 2000 {
            return Err(CoisoError::Unsupported(format!(
                "connection ansatz too large ({} unknowns)",
                basis.len()
            )));
        }
        // Row space: pairs (condition index, result monomial).
        let mut row_ix: BTreeMap<(usize, Monomial), usize> = BTreeMap::new();
        let mut cols: Vec<Vec<(usize, Q)>> = Vec::new();
        for bp in &basis {
            let mut col = Vec::new();
            for (ui, u) in conditions.iter().enumerate() {
                let contrib = nf1(&b.poisson(bp, u));
                for (m, coeff) in contrib.terms() {
                    let next = row_ix.len();
                    let ix = *row_ix.entry((ui, m.clone())).or_insert(next);
                    col.push((ix, coeff.clone()));
                }
            }
            cols.push(col);
        }
        for (ui, t) in targets.iter().enumerate() {
            for (m, _) in t.terms() {
                let next = row_ix.len();
                row_ix.entry((ui, m.clone())).or_insert(next);
            }
        }
        let mut a = Mat::zeros(row_ix.len(), basis.len());
        for (j, col) in cols.iter().enumerate() {
            for (ix, coeff) in col {
                a.set(*ix, j, coeff.clone());
            }
        }
        let mut rhs = vec![Q::zero(); row_ix.len()];
        for (ui, t) in targets.iter().enumerate() {
            for (m, coeff) in t.terms() {
                rhs[row_ix[&(ui, m.clone())]] = -coeff;
            }
        }
        let Some(sol) = a.solve(&rhs) else {
            return Err(CoisoError::NoConnectionCorrection(
                chart.name(Gen::P(c)).to_string(),
            ));
        };
        let mut corr = GradedPoly::zero(&chart);
        for (j, lambda) in sol.iter().enumerate() {
            if !lambda.is_zero() {
                corr = &corr + &basis[j].scale(lambda);
            }
        }
        p_gens.push((c, corr));
    }

    let ideal = CoisotropicIdeal::new(b.clone(), drop_x, e_gens, p_gens)?;
    if let Some(w) = ideal.coisotropy_witness() {
        return Err(CoisoError::NotCoisotropic(w));
    }
    Ok(ideal)
}

/// The four classical reducibility conditions, checked independently of
/// the symbolic normalizer test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeometricVerdict {
    /// The anchor maps `K^perp` into vectors tangent to the zero locus.
    pub anchor_perp_tangent: bool,
    /// The anchor maps `K` into the leaf distribution.
    pub anchor_k_in_leaves: bool,
    /// Flat sections anchor to vector fields normalizing the leaves.
    pub flat_normalizes_leaves: bool,
    /// Flat sections are involutive modulo `K` over the locus.
    pub flat_involutive: bool,
}

impl GeometricVerdict {
    pub fn all(&self) -> bool {
        self.anchor_perp_tangent
            && self.anchor_k_in_leaves
            && self.flat_normalizes_leaves
            && self.flat_involutive
    }
}

/// Evaluates the classical reducibility conditions for the hamiltonian
/// of `s` against the reduction data, exactly (no sampling shortcuts in
/// the verdict itself; sample points only guard the data validation).
pub fn reducible_geometric(
    s: &CourantScenario,
    d: &GeometricCoisoData,
    seed: u64,
) -> Result<GeometricVerdict, CoisoError> {
    d.validate(s.bracket(), seed)?;
    let chart = s.chart().clone();
    let drop = &d.drop_x;
    let x_poly = |i: usize| GradedPoly::generator(&chart, Gen::X(i));
    let anchor = |u: &SectionExpr, i: usize| -> Result<GradedPoly, CoisoError> {
        Ok(s.anchor_apply(u, &x_poly(i))?)
    };

    let mut anchor_perp_tangent = true;
    'r1: for u in d.k_frame.iter().chain(d.flat_frame.iter()) {
        for &a in drop {
            if !anchor(u, a)?.kill_x(drop).is_zero() {
                anchor_perp_tangent = false;
                break 'r1;
            }
        }
    }

    let mut anchor_k_in_leaves = true;
    'r2: for k in &d.k_frame {
        for i in 0..chart.n_x() {
            if d.f_index.contains(&i) {
                continue;
            }
            if !anchor(k, i)?.kill_x(drop).is_zero() {
                anchor_k_in_leaves = false;
                break 'r2;
            }
        }
    }

    let mut flat_normalizes_leaves = true;
    'r3: for w in &d.flat_frame {
        for i in 0..chart.n_x() {
            if d.f_index.contains(&i) {
                continue;
            }
            let comp = anchor(w, i)?;
            for &c in &d.f_index {
                if !comp.partial_derivative(Gen::X(c)).kill_x(drop).is_zero() {
                    flat_normalizes_leaves = false;
                    break 'r3;
                }
            }
        }
    }

    let basic_x: Vec<usize> = (0..chart.n_x())
        .filter(|i| !drop.contains(i) && !d.f_index.contains(i))
        .collect();
    let on_locus_x: Vec<usize> = (0..chart.n_x()).filter(|i| !drop.contains(i)).collect();
    let flat_killed: Vec<GradedPoly> =
        d.flat_frame.iter().map(|w| w.poly().kill_x(drop)).collect();
    let k_killed: Vec<GradedPoly> = d.k_frame.iter().map(|k| k.poly().kill_x(drop)).collect();
    let frame_deg = flat_killed
        .iter()
        .chain(k_killed.iter())
        .map(|p| p.x_degree())
        .max()
        .unwrap_or(0) as u32;

    let mut flat_involutive = true;
    'r4: for (i, wi) in d.flat_frame.iter().enumerate() {
        for wj in &d.flat_frame[i..] {
            let target = s.derived_bracket(wi, wj).into_poly().kill_x(drop);
            let bound = target.x_degree() as u32 + frame_deg + 1;
            let frames: Vec<SpanFrame<'_>> = flat_killed
                .iter()
                .map(|p| SpanFrame { poly: p, allowed_x: basic_x.clone(), max_deg: bound })
                .chain(k_killed.iter().map(|p| SpanFrame {
                    poly: p,
                    allowed_x: on_locus_x.clone(),
                    max_deg: bound,
                }))
                .collect();
            if in_module_span(&target, &frames).is_none() {
                flat_involutive = false;
                break 'r4;
            }
        }
    }

    Ok(GeometricVerdict {
        anchor_perp_tangent,
        anchor_k_in_leaves,
        flat_normalizes_leaves,
        flat_involutive,
    })
}

/// The reduced scenario together with the index maps back into the
/// original chart.
#[derive(Debug, Clone)]
pub struct Reduction {
    ideal: CoisotropicIdeal,
    scenario: CourantScenario,
    x_survivors: Vec<usize>,
    e_survivors: Vec<usize>,
}

impl Reduction {
    pub fn scenario(&self) -> &CourantScenario {
        &self.scenario
    }

    pub fn into_scenario(self) -> CourantScenario {
        self.scenario
    }

    pub fn ideal(&self) -> &CoisotropicIdeal {
        &self.ideal
    }

    /// Original indices of the surviving base coordinates (also the
    /// surviving degree-2 generators).
    pub fn x_survivors(&self) -> &[usize] {
        &self.x_survivors
    }

    /// Original indices of the surviving odd generators.
    pub fn e_survivors(&self) -> &[usize] {
        &self.e_survivors
    }

    /// Normal form followed by renaming into the reduced chart. Errors
    /// when the normal form still involves an eliminated generator.
    pub fn project(&self, f: &GradedPoly) -> Result<GradedPoly, CoisoError> {
        let nf = self.ideal.normal_form(f);
        let from = self.ideal.chart();
        let to = self.scenario.chart();
        let x_map = index_map(from.n_x(), &self.x_survivors);
        let e_map = index_map(from.n_e(), &self.e_survivors);
        let mut raw: Vec<(Vec<Gen>, Q)> = Vec::new();
        for (m, c) in nf.terms() {
            let mut word: Vec<Gen> = Vec::new();
            for (i, &k) in m.x.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                let Some(ni) = x_map[i] else {
                    return Err(CoisoError::EliminatedGenerator(
                        from.name(Gen::X(i)).to_string(),
                    ));
                };
                word.extend(std::iter::repeat(Gen::X(ni)).take(k as usize));
            }
            let mut rest = m.e;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let Some(ni) = e_map[i] else {
                    return Err(CoisoError::EliminatedGenerator(
                        from.name(Gen::E(i)).to_string(),
                    ));
                };
                word.push(Gen::E(ni));
            }
            for (i, &k) in m.p.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                let Some(ni) = x_map[i] else {
                    return Err(CoisoError::EliminatedGenerator(
                        from.name(Gen::P(i)).to_string(),
                    ));
                };
                word.extend(std::iter::repeat(Gen::P(ni)).take(k as usize));
            }
            raw.push((word, c.clone()));
        }
        Ok(GradedPoly::normalize(to, &raw))
    }
}

fn index_map(n: usize, survivors: &[usize]) -> Vec<Option<usize>> {
    let mut map = vec![None; n];
    for (new, &old) in survivors.iter().enumerate() {
        map[old] = Some(new);
    }
    map
}

/// Reduces the hamiltonian along a coisotropic ideal: keeps the base
/// coordinates transverse to both the constraints and the leaves, keeps
/// the odd generators orthogonal to `K` and independent of it, and takes
/// the normal form of `theta` in the surviving chart. The result is
/// verified to satisfy the master equation.
pub fn reduce(s: &CourantScenario, i: &CoisotropicIdeal) -> Result<Reduction, CoisoError> {
    if s.chart() != i.chart() {
        return Err(CoisoError::InvalidData("scenario and ideal charts differ".into()));
    }
    let chart = s.chart().clone();
    if let Some(w) = i.normalizer_witness(s.theta()) {
        return Err(CoisoError::NotReducible(format!("hamiltonian: {w}")));
    }
    if let Some(w) = i.coisotropy_witness() {
        return Err(CoisoError::NotCoisotropic(w));
    }

    let b_set: BTreeSet<usize> = i.e_indices().into_iter().collect();
    let dead_x: BTreeSet<usize> =
        i.drop_x().iter().copied().chain(i.p_indices()).collect();
    let gen_polys: Vec<GradedPoly> = i
        .e_gens()
        .iter()
        .map(|(b_idx, corr)| &GradedPoly::generator(&chart, Gen::E(*b_idx)) + corr)
        .collect();
    let mut e_survivors = Vec::new();
    for s_idx in 0..chart.n_e() {
        if b_set.contains(&s_idx) {
            continue;
        }
        let e_poly = GradedPoly::generator(&chart, Gen::E(s_idx));
        let orthogonal = gen_polys
            .iter()
            .all(|g| i.bracket().poisson(&e_poly, g).kill_x(i.drop_x()).is_zero());
        if orthogonal {
            e_survivors.push(s_idx);
        }
    }
    let expected = chart.n_e() as isize - 2 * b_set.len() as isize;
    if e_survivors.len() as isize != expected {
        return Err(CoisoError::DegeneratePairing(format!(
            "{} odd generators survive, expected {}",
            e_survivors.len(),
            expected
        )));
    }
    let x_survivors: Vec<usize> = (0..chart.n_x()).filter(|k| !dead_x.contains(k)).collect();

    let g = i.bracket().metric();
    let mut g_red = Mat::zeros(e_survivors.len(), e_survivors.len());
    for (a, &sa) in e_survivors.iter().enumerate() {
        for (b, &sb) in e_survivors.iter().enumerate() {
            g_red.set(a, b, g.at(sa, sb).clone());
        }
    }
    if !e_survivors.is_empty() && g_red.det().is_zero() {
        return Err(CoisoError::DegeneratePairing(
            "pairing restricted to the surviving odd generators is singular".into(),
        ));
    }

    let name = |g: Gen| chart.name(g).to_string();
    let red_chart = Chart::new(
        x_survivors.iter().map(|&k| name(Gen::X(k))).collect(),
        e_survivors.iter().map(|&k| name(Gen::E(k))).collect(),
        x_survivors.iter().map(|&k| name(Gen::P(k))).collect(),
    )?;
    let red_bracket = BracketData::new(red_chart, g_red)?;

    let partial = Reduction {
        ideal: i.clone(),
        scenario: CourantScenario::new(
            red_bracket.clone(),
            GradedPoly::zero(red_bracket.chart()),
            format!("{} (reduced)", s.label()),
            ScenarioKind::Explicit,
        )?,
        x_survivors,
        e_survivors,
    };
    let theta_red = partial.project(s.theta())?;
    let scenario = CourantScenario::new(
        red_bracket,
        theta_red,
        format!("{} (reduced)", s.label()),
        ScenarioKind::Explicit,
    )?;
    if !scenario.master_equation() {
        return Err(CoisoError::Internal(
            "reduced hamiltonian violates the master equation".into(),
        ));
    }
    Ok(Reduction { scenario, ..partial })
}

/// Outcome of reducing a quadratic (generalized complex) structure: the
/// reduced quadratic, the classical frame conditions, and the
/// integrability report on the reduced scenario.
#[derive(Debug)]
pub struct QuadraticReduction {
    pub j_red: AtiyahExpr,
    /// `J` maps `K` into `K` over the locus.
    pub preserves_k: bool,
    /// `J` maps flat sections to flat sections modulo `K` over the locus.
    pub preserves_flat: bool,
    pub outcome: GcsOutcome,
}

/// Reduces an integrable quadratic structure along the reduction `r`.
/// Requires integrability upstream, the normalizer condition (which is
/// cross-checked against the classical frame conditions), and verifies
/// integrability downstream.
pub fn reduce_quadratic(
    s: &CourantScenario,
    d: &GeometricCoisoData,
    j: &AtiyahExpr,
    r: &Reduction,
) -> Result<QuadraticReduction, CoisoError> {
    let chart = s.chart().clone();
    let frame = coordinate_frame(&chart);
    let upstream = s.gcs_check(j, &frame)?;
    if !upstream.ok() {
        return Err(CoisoError::NotReducible(format!(
            "quadratic structure is not integrable upstream (J^2: {}, torsion: {})",
            upstream.j_squared, upstream.torsion
        )));
    }

    let i = &r.ideal;
    let drop = i.drop_x();
    let in_normalizer = i.in_normalizer(j.poly());

    let k_killed: Vec<GradedPoly> = d.k_frame.iter().map(|k| k.poly().kill_x(drop)).collect();
    let flat_killed: Vec<GradedPoly> =
        d.flat_frame.iter().map(|w| w.poly().kill_x(drop)).collect();
    let on_locus_x: Vec<usize> = (0..chart.n_x()).filter(|ix| !drop.contains(ix)).collect();
    let basic_x: Vec<usize> = on_locus_x
        .iter()
        .copied()
        .filter(|ix| !d.f_index.contains(ix))
        .collect();
    let frame_deg = flat_killed
        .iter()
        .chain(k_killed.iter())
        .map(|p| p.x_degree())
        .max()
        .unwrap_or(0) as u32;

    let mut preserves_k = true;
    for k in &d.k_frame {
        let target = i.bracket().poisson(j.poly(), k.poly()).kill_x(drop);
        let bound = target.x_degree() as u32 + frame_deg + 1;
        let frames: Vec<SpanFrame<'_>> = k_killed
            .iter()
            .map(|p| SpanFrame { poly: p, allowed_x: on_locus_x.clone(), max_deg: bound })
            .collect();
        if in_module_span(&target, &frames).is_none() {
            preserves_k = false;
            break;
        }
    }
    let mut preserves_flat = true;
    for w in &d.flat_frame {
        let target = i.bracket().poisson(j.poly(), w.poly()).kill_x(drop);
        let bound = target.x_degree() as u32 + frame_deg + 1;
        let frames: Vec<SpanFrame<'_>> = flat_killed
            .iter()
            .map(|p| SpanFrame { poly: p, allowed_x: basic_x.clone(), max_deg: bound })
            .chain(k_killed.iter().map(|p| SpanFrame {
                poly: p,
                allowed_x: on_locus_x.clone(),
                max_deg: bound,
            }))
            .collect();
        if in_module_span(&target, &frames).is_none() {
            preserves_flat = false;
            break;
        }
    }

    if (preserves_k && preserves_flat) != in_normalizer {
        return Err(CoisoError::Internal(format!(
            "normalizer test ({in_normalizer}) disagrees with the frame conditions \
             (K: {preserves_k}, flat: {preserves_flat})"
        )));
    }
    if !in_normalizer {
        return Err(CoisoError::NotReducible(
            "quadratic structure does not normalize the ideal".into(),
        ));
    }

    let j_red = AtiyahExpr::new(r.project(j.poly())?)?;
    let red_frame = coordinate_frame(r.scenario.chart());
    let outcome = r.scenario.gcs_check(&j_red, &red_frame)?;
    if !outcome.ok() {
        return Err(CoisoError::Internal(format!(
            "reduced quadratic structure fails integrability (J^2: {}, torsion: {})",
            outcome.j_squared, outcome.torsion
        )));
    }
    Ok(QuadraticReduction { j_red, preserves_k, preserves_flat, outcome })
}

fn coordinate_frame(chart: &Arc<Chart>) -> Vec<SectionExpr> {
    (0..chart.n_e())
        .map(|k| {
            SectionExpr::new(GradedPoly::generator(chart, Gen::E(k)))
                .expect("odd generators are degree-1 sections")
        })
        .collect()
}

/// Whether a lagrangian frame meets the reduction data cleanly: constant
/// intersection rank with `K` across sample points, and invariance of
/// its image modulo `K` under the leaf connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanIntersection {
    pub constant_rank: bool,
    pub nabla_invariant: bool,
    pub rank: usize,
}

impl CleanIntersection {
    pub fn ok(&self) -> bool {
        self.constant_rank && self.nabla_invariant
    }
}

/// Checks clean intersection of a constant lagrangian frame with the
/// reduction data. Only constant frames (for both `L` and `K`) are
/// supported; x-dependent frames are rejected loudly.
pub fn clean_intersection(
    s: &CourantScenario,
    d: &GeometricCoisoData,
    i: &CoisotropicIdeal,
    l_frame: &[SectionExpr],
    seed: u64,
) -> Result<CleanIntersection, CoisoError> {
    let chart = s.chart().clone();
    let n_e = chart.n_e();
    let l_vecs = constant_frame_vectors(l_frame, "lagrangian frame")?;
    let k_vecs = constant_frame_vectors(&d.k_frame, "k-frame")?;
    let qs = QuadraticSpace::new(s.bracket().metric().clone())
        .map_err(|e| CoisoError::Internal(format!("bracket pairing rejected: {e}")))?;
    let l_sub = Subspace::from_vectors(n_e, &l_vecs);
    if !qs.is_lagrangian(&l_sub) {
        return Err(CoisoError::NotLagrangian(format!(
            "frame spans a subspace of dimension {} with nonzero pairing or wrong rank",
            l_sub.dim()
        )));
    }
    let k_sub = Subspace::from_vectors(n_e, &k_vecs);

    let mut ranks = Vec::new();
    for _point in sample_points_on(chart.n_x(), &d.drop_x, seed, 5) {
        // Constant frames: the fiber data does not vary along the locus,
        // but the rank comparison across samples is kept as the contract.
        ranks.push(l_sub.intersect(&k_sub).dim());
    }
    let rank = ranks[0];
    let constant_rank = ranks.iter().all(|&r| r == rank);

    let lk = l_sub.intersect(&qs.orthogonal(&k_sub));
    let lk_polys: Vec<GradedPoly> = lk
        .basis_vectors()
        .iter()
        .map(|v| poly_from_e_vector(&chart, v))
        .collect();
    let k_polys: Vec<GradedPoly> =
        k_vecs.iter().map(|v| poly_from_e_vector(&chart, v)).collect();
    let on_locus_x: Vec<usize> =
        (0..chart.n_x()).filter(|ix| !d.drop_x.contains(ix)).collect();
    let mut nabla_invariant = true;
    'outer: for (c, corr) in i.p_gens() {
        let p_gen = &GradedPoly::generator(&chart, Gen::P(*c)) + corr;
        for l in &lk_polys {
            let target = i.bracket().poisson(&p_gen, l).kill_x(&d.drop_x);
            let bound = target.x_degree() as u32 + 1;
            let frames: Vec<SpanFrame<'_>> = lk_polys
                .iter()
                .chain(k_polys.iter())
                .map(|p| SpanFrame { poly: p, allowed_x: on_locus_x.clone(), max_deg: bound })
                .collect();
            if in_module_span(&target, &frames).is_none() {
                nabla_invariant = false;
                break 'outer;
            }
        }
    }
    Ok(CleanIntersection { constant_rank, nabla_invariant, rank })
}

fn constant_frame_vectors(
    frame: &[SectionExpr],
    what: &str,
) -> Result<Vec<Vec<Q>>, CoisoError> {
    frame
        .iter()
        .map(|w| {
            constant_e_vector(w.poly())?.ok_or_else(|| {
                CoisoError::Unsupported(format!(
                    "{what} must have constant coefficients, got {}",
                    w.poly()
                ))
            })
        })
        .collect()
}

/// The reduced lagrangian frame together with the clean-intersection
/// report that justified it.
#[derive(Debug)]
pub struct DiracReduction {
    pub frame: Vec<SectionExpr>,
    pub clean: CleanIntersection,
}

/// Pushes a constant lagrangian frame through the reduction: intersects
/// with `K^perp`, takes normal forms, renames into the reduced chart,
/// and verifies the result is lagrangian and involutive there.
pub fn reduce_dirac(
    s: &CourantScenario,
    d: &GeometricCoisoData,
    l_frame: &[SectionExpr],
    r: &Reduction,
    seed: u64,
) -> Result<DiracReduction, CoisoError> {
    let chart = s.chart().clone();
    let i = &r.ideal;
    let clean = clean_intersection(s, d, i, l_frame, seed)?;
    if !clean.ok() {
        return Err(CoisoError::NotReducible(format!(
            "intersection with K is not clean (constant rank: {}, invariance: {})",
            clean.constant_rank, clean.nabla_invariant
        )));
    }

    // Involutivity of L modulo the ideal over the locus.
    let l_killed: Vec<GradedPoly> =
        l_frame.iter().map(|l| l.poly().kill_x(&d.drop_x)).collect();
    let k_killed: Vec<GradedPoly> =
        d.k_frame.iter().map(|k| k.poly().kill_x(&d.drop_x)).collect();
    let on_locus_x: Vec<usize> =
        (0..chart.n_x()).filter(|ix| !d.drop_x.contains(ix)).collect();
    for (a, la) in l_frame.iter().enumerate() {
        for lb in &l_frame[a..] {
            let target = s.derived_bracket(la, lb).into_poly().kill_x(&d.drop_x);
            let bound = target.x_degree() as u32 + 1;
            let frames: Vec<SpanFrame<'_>> = l_killed
                .iter()
                .chain(k_killed.iter())
                .map(|p| SpanFrame { poly: p, allowed_x: on_locus_x.clone(), max_deg: bound })
                .collect();
            if in_module_span(&target, &frames).is_none() {
                return Err(CoisoError::NotInvolutive(format!(
                    "[[{}, {}]] = {} escapes L + K over the locus",
                    la.poly(),
                    lb.poly(),
                    target
                )));
            }
        }
    }

    let l_vecs = constant_frame_vectors(l_frame, "lagrangian frame")?;
    let k_vecs = constant_frame_vectors(&d.k_frame, "k-frame")?;
    let qs = QuadraticSpace::new(s.bracket().metric().clone())
        .map_err(|e| CoisoError::Internal(format!("bracket pairing rejected: {e}")))?;
    let l_sub = Subspace::from_vectors(chart.n_e(), &l_vecs);
    let k_sub = Subspace::from_vectors(chart.n_e(), &k_vecs);
    let lk = l_sub.intersect(&qs.orthogonal(&k_sub));

    let red_chart = r.scenario.chart().clone();
    let mut projected: Vec<Vec<Q>> = Vec::new();
    for v in lk.basis_vectors() {
        let down = r.project(&poly_from_e_vector(&chart, &v))?;
        if down.is_zero() {
            continue;
        }
        let Some(vec) = constant_e_vector(&down)? else {
            return Err(CoisoError::Unsupported(format!(
                "projected lagrangian section is not constant: {down}"
            )));
        };
        projected.push(vec);
    }
    let red_sub = Subspace::from_vectors(red_chart.n_e(), &projected);
    if 2 * red_sub.dim() != red_chart.n_e() {
        return Err(CoisoError::Internal(format!(
            "projected frame has rank {}, expected {}",
            red_sub.dim(),
            red_chart.n_e() / 2
        )));
    }
    let red_qs = QuadraticSpace::new(r.scenario.bracket().metric().clone())
        .map_err(|e| CoisoError::Internal(format!("reduced pairing rejected: {e}")))?;
    if !red_qs.is_lagrangian(&red_sub) {
        return Err(CoisoError::Internal(
            "projected frame is not lagrangian in the reduced chart".into(),
        ));
    }
    let frame: Vec<SectionExpr> = red_sub
        .basis_vectors()
        .iter()
        .map(|v| {
            SectionExpr::new(poly_from_e_vector(&red_chart, v))
                .expect("basis vectors give degree-1 sections")
        })
        .collect();

    // Involutivity downstream.
    let red_polys: Vec<GradedPoly> = frame.iter().map(|f| f.poly().clone()).collect();
    let all_red_x: Vec<usize> = (0..red_chart.n_x()).collect();
    for (a, la) in frame.iter().enumerate() {
        for lb in &frame[a..] {
            let target = r.scenario.derived_bracket(la, lb).into_poly();
            let bound = target.x_degree() as u32 + 1;
            let frames: Vec<SpanFrame<'_>> = red_polys
                .iter()
                .map(|p| SpanFrame { poly: p, allowed_x: all_red_x.clone(), max_deg: bound })
                .collect();
            if in_module_span(&target, &frames).is_none() {
                return Err(CoisoError::Internal(format!(
                    "reduced frame is not involutive: [[{}, {}]] = {}",
                    la.poly(),
                    lb.poly(),
                    target
                )));
            }
        }
    }
    Ok(DiracReduction { frame, clean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::courant::{complex_j, standard_theta, symplectic_j};
    use crate::graded::parse_expr;

    fn zero(chart: &Arc<Chart>) -> GradedPoly {
        GradedPoly::zero(chart)
    }

    fn section(chart: &Arc<Chart>, src: &str) -> SectionExpr {
        SectionExpr::new(parse_expr(chart, src).unwrap()).unwrap()
    }

    /// I = <xi1, p1> on standard R^3: reduction along the x^1
    /// translation flow.
    fn translation_ideal() -> (CourantScenario, CoisotropicIdeal) {
        let s = standard_theta(3);
        let chart = s.chart().clone();
        let i = CoisotropicIdeal::new(
            s.bracket().clone(),
            vec![],
            vec![(3, zero(&chart))],
            vec![(0, zero(&chart))],
        )
        .unwrap();
        (s, i)
    }

    #[test]
    fn normal_form_and_membership() {
        let (s, i) = translation_ideal();
        let chart = s.chart();
        let inside = parse_expr(chart, "p1 + x2*xi1").unwrap();
        assert!(i.contains(&inside));
        assert!(i.contains(&parse_expr(chart, "v1*xi1").unwrap()));
        let outside = parse_expr(chart, "p2").unwrap();
        assert_eq!(i.normal_form(&outside), outside);
        assert!(!i.contains(&outside));
        // NF is idempotent.
        let f = parse_expr(chart, "x1*p1 + v2*xi1*xi2 + x2^2").unwrap();
        let nf = i.normal_form(&f);
        assert_eq!(i.normal_form(&nf), nf);
    }

    #[test]
    fn coisotropy_examples() {
        let (s, i) = translation_ideal();
        assert!(i.is_coisotropic());
        let chart = s.chart().clone();
        // <x1, p1>: the constraint and its conjugate momentum.
        let bad = CoisotropicIdeal::new(
            s.bracket().clone(),
            vec![0],
            vec![],
            vec![(0, zero(&chart))],
        )
        .unwrap();
        assert!(!bad.is_coisotropic());
        // <v1, xi1>: a non-isotropic odd pair.
        let bad2 = CoisotropicIdeal::new(
            s.bracket().clone(),
            vec![],
            vec![(0, zero(&chart)), (3, zero(&chart))],
            vec![],
        )
        .unwrap();
        assert!(!bad2.is_coisotropic());
    }

    #[test]
    fn normalizer_examples() {
        let (s, i) = translation_ideal();
        let chart = s.chart();
        assert!(i.in_normalizer(&parse_expr(chart, "x2").unwrap()));
        assert!(!i.in_normalizer(&parse_expr(chart, "x1").unwrap()));
        assert!(reducible_symbolic(&s, &i));
    }

    #[test]
    fn normalizer_closed_under_bracket() {
        let (s, i) = translation_ideal();
        let chart = s.chart();
        let elems = [
            parse_expr(chart, "x2*p2 + v2*xi2").unwrap(),
            parse_expr(chart, "x3*v2 + 2*xi3").unwrap(),
            parse_expr(chart, "x2^2*x3").unwrap(),
            s.theta().clone(),
        ];
        for f in &elems {
            assert!(i.in_normalizer(f), "not in normalizer: {f}");
        }
        for f in &elems {
            for g in &elems {
                let br = s.bracket().poisson(f, g);
                assert!(i.in_normalizer(&br), "{{{f}, {g}}} = {br} left the normalizer");
            }
        }
    }

    #[test]
    fn reduce_translation_to_plane() {
        let (s, i) = translation_ideal();
        let r = reduce(&s, &i).unwrap();
        let red = r.scenario();
        assert_eq!(red.chart().n_x(), 2);
        assert_eq!(red.chart().x_names(), &["x2".to_string(), "x3".to_string()]);
        assert_eq!(
            red.chart().e_names(),
            &["v2".to_string(), "v3".to_string(), "xi2".to_string(), "xi3".to_string()]
        );
        let expected = parse_expr(red.chart(), "v2*p2 + v3*p3").unwrap();
        assert_eq!(red.theta(), &expected);
        assert!(red.master_equation());
    }

    #[test]
    fn reduce_lagrangian_ideal_to_point() {
        // <x1, xi2, v1, p2> on standard R^2 eliminates everything.
        let s = standard_theta(2);
        let chart = s.chart().clone();
        let i = CoisotropicIdeal::new(
            s.bracket().clone(),
            vec![0],
            vec![(0, zero(&chart)), (3, zero(&chart))],
            vec![(1, zero(&chart))],
        )
        .unwrap();
        assert!(i.is_coisotropic());
        let r = reduce(&s, &i).unwrap();
        assert_eq!(r.scenario().chart().n_x(), 0);
        assert_eq!(r.scenario().chart().n_e(), 0);
        assert!(r.scenario().theta().is_zero());
        // dimension bookkeeping: x-drop + e-drop/2 accounts for all of it
        let totdim = |c: &Arc<Chart>| c.n_x() + c.n_e() / 2;
        assert_eq!(
            totdim(&chart) - totdim(r.scenario().chart()),
            i.drop_x().len() + i.e_indices().len() + i.p_indices().len()
        );
    }

    #[test]
    fn reduce_restriction_to_line() {
        // <x1, v1> on standard R^2 restricts to the x^2 line.
        let s = standard_theta(2);
        let chart = s.chart().clone();
        let i = CoisotropicIdeal::new(
            s.bracket().clone(),
            vec![0],
            vec![(0, zero(&chart))],
            vec![],
        )
        .unwrap();
        assert!(i.is_coisotropic());
        let r = reduce(&s, &i).unwrap();
        let red = r.scenario();
        assert_eq!(red.chart().x_names(), &["x2".to_string()]);
        assert_eq!(red.chart().e_names(), &["v2".to_string(), "xi2".to_string()]);
        assert_eq!(red.theta(), &parse_expr(red.chart(), "v2*p2").unwrap());
    }

    #[test]
    fn reduce_rejects_non_normalizing_ideal() {
        // <xi1> alone: {theta, xi1} = p1 is not in the ideal.
        let s = standard_theta(3);
        let chart = s.chart().clone();
        let i = CoisotropicIdeal::new(s.bracket().clone(), vec![], vec![(3, zero(&chart))], vec![])
            .unwrap();
        assert!(i.is_coisotropic());
        assert!(!reducible_symbolic(&s, &i));
        assert!(matches!(reduce(&s, &i), Err(CoisoError::NotReducible(_))));
    }

    #[test]
    fn ideal_from_data_translation() {
        let s = standard_theta(3);
        let chart = s.chart().clone();
        let d = GeometricCoisoData {
            drop_x: vec![],
            k_frame: vec![section(&chart, "xi1")],
            f_index: vec![0],
            flat_frame: vec![
                section(&chart, "v2"),
                section(&chart, "v3"),
                section(&chart, "xi2"),
                section(&chart, "xi3"),
            ],
        };
        let i = ideal_from_data(s.bracket(), &d, 11).unwrap();
        assert_eq!(i.e_indices(), vec![3]);
        assert_eq!(i.p_indices(), vec![0]);
        assert!(i.e_gens()[0].1.is_zero());
        assert!(i.p_gens()[0].1.is_zero());
        assert!(i.is_coisotropic());
        let verdict = reducible_geometric(&s, &d, 11).unwrap();
        assert!(verdict.all(), "{verdict:?}");
        assert_eq!(verdict.all(), reducible_symbolic(&s, &i));
    }

    #[test]
    fn ideal_from_data_solves_connection_correction() {
        // Foliation of R^2 by the x^2 direction with a flat frame whose
        // form part shears into the vector part along the leaves (the
        // frame of a leafwise-closed 2-form -x^2 dx^1 ^ dx^2). The leaf
        // generator needs the quadratic correction p2 - v1*v2.
        let s = standard_theta(2);
        let chart = s.chart().clone();
        let d = GeometricCoisoData {
            drop_x: vec![],
            k_frame: vec![],
            f_index: vec![1],
            flat_frame: vec![
                section(&chart, "v1"),
                section(&chart, "v2"),
                section(&chart, "xi1 - x2*v2"),
                section(&chart, "xi2 + x2*v1"),
            ],
        };
        let i = ideal_from_data(s.bracket(), &d, 13).unwrap();
        assert_eq!(i.p_indices(), vec![1]);
        let expected = parse_expr(&chart, "-1*v1*v2").unwrap();
        assert_eq!(i.p_gens()[0].1, expected);
        assert!(i.is_coisotropic());
        // The corrected generator is parallel to every flat section.
        let gen = &GradedPoly::generator(&chart, Gen::P(1)) + &expected;
        for w in &d.flat_frame {
            assert!(i.contains(&s.bracket().poisson(&gen, w.poly())));
        }
        // The sheared foliation still reduces the standard hamiltonian,
        // and the classical verdict agrees with the symbolic one.
        assert!(reducible_symbolic(&s, &i));
        let verdict = reducible_geometric(&s, &d, 13).unwrap();
        assert!(verdict.all(), "{verdict:?}");
        let r = reduce(&s, &i).unwrap();
        assert_eq!(r.scenario().chart().n_x(), 1);
        assert_eq!(r.scenario().chart().n_e(), 4);
        assert_eq!(
            r.scenario().theta(),
            &parse_expr(r.scenario().chart(), "v1*p1").unwrap()
        );
    }

    #[test]
    fn geometric_and_symbolic_disagreeing_twist_both_fail() {
        // Standard twist chi_123 = x^1 on R^3 is closed, but the
        // translation data fails involutivity of the flat frame, exactly
        // as the normalizer test fails symbolically.
        let chart = standard_chart_3();
        let one_poly = parse_expr(&chart, "x1").unwrap();
        let s = crate::courant::twisted_theta(3, &[(0, 1, 2, one_poly)]).unwrap();
        assert!(s.master_equation());
        let d = GeometricCoisoData {
            drop_x: vec![],
            k_frame: vec![section(&chart, "xi1")],
            f_index: vec![0],
            flat_frame: vec![
                section(&chart, "v2"),
                section(&chart, "v3"),
                section(&chart, "xi2"),
                section(&chart, "xi3"),
            ],
        };
        let i = CoisotropicIdeal::new(
            s.bracket().clone(),
            vec![],
            vec![(3, zero(&chart))],
            vec![(0, zero(&chart))],
        )
        .unwrap();
        let verdict = reducible_geometric(&s, &d, 17).unwrap();
        assert!(!verdict.flat_involutive);
        assert!(verdict.anchor_perp_tangent);
        assert!(verdict.anchor_k_in_leaves);
        assert!(verdict.flat_normalizes_leaves);
        assert_eq!(verdict.all(), reducible_symbolic(&s, &i));
    }

    fn standard_chart_3() -> Arc<Chart> {
        crate::courant::standard_chart(3)
    }

    #[test]
    fn marsden_weinstein_reduces_symplectic_structure() {
        // omega = dx^1 ^ dx^3 + dx^2 ^ dx^4 on R^4; moment x^3 for the
        // x^1 translation flow. The reduced structure is the symplectic
        // one of omega restricted to the (x^2, x^4) plane.
        let s = standard_theta(4);
        let chart = s.chart().clone();
        let mut omega = Mat::zeros(4, 4);
        omega.set(0, 2, q(1));
        omega.set(2, 0, q(-1));
        omega.set(1, 3, q(1));
        omega.set(3, 1, q(-1));
        let j = symplectic_j(&s, &omega).unwrap();
        let d = GeometricCoisoData {
            drop_x: vec![2],
            k_frame: vec![section(&chart, "xi1"), section(&chart, "v3")],
            f_index: vec![0],
            flat_frame: vec![
                section(&chart, "v2"),
                section(&chart, "v4"),
                section(&chart, "xi2"),
                section(&chart, "xi4"),
            ],
        };
        let i = ideal_from_data(s.bracket(), &d, 19).unwrap();
        assert!(reducible_symbolic(&s, &i));
        let verdict = reducible_geometric(&s, &d, 19).unwrap();
        assert!(verdict.all(), "{verdict:?}");
        let r = reduce(&s, &i).unwrap();
        assert_eq!(r.scenario().chart().x_names(), &["x2".to_string(), "x4".to_string()]);
        let qr = reduce_quadratic(&s, &d, &j, &r).unwrap();
        assert!(qr.preserves_k && qr.preserves_flat);
        assert!(qr.outcome.ok());
        let expected = parse_expr(r.scenario().chart(), "-1*v2*v4 - xi2*xi4").unwrap();
        assert_eq!(qr.j_red.poly(), &expected);
    }

    #[test]
    fn quadratic_reduction_rejects_non_normalizing_structure() {
        // Restriction ideal <x1, v1> on R^2 is transverse to the
        // symplectic structure of dx^1 ^ dx^2: J does not descend.
        let s = standard_theta(2);
        let chart = s.chart().clone();
        let mut omega = Mat::zeros(2, 2);
        omega.set(0, 1, q(1));
        omega.set(1, 0, q(-1));
        let j = symplectic_j(&s, &omega).unwrap();
        let d = GeometricCoisoData {
            drop_x: vec![0],
            k_frame: vec![section(&chart, "v1")],
            f_index: vec![],
            flat_frame: vec![section(&chart, "v2"), section(&chart, "xi2")],
        };
        let i = ideal_from_data(s.bracket(), &d, 23).unwrap();
        let r = reduce(&s, &i).unwrap();
        let err = reduce_quadratic(&s, &d, &j, &r).unwrap_err();
        assert!(matches!(err, CoisoError::NotReducible(_)), "{err}");
    }

    #[test]
    fn holomorphic_reduction_of_complex_structure() {
        // J del_1 = del_2, J del_3 = del_4 on R^4, reduced along the
        // (x^1, x^2) leaves: the complex structure survives on the
        // (x^3, x^4) plane.
        let s = standard_theta(4);
        let chart = s.chart().clone();
        let mut jm = Mat::zeros(4, 4);
        jm.set(1, 0, q(1));
        jm.set(0, 1, q(-1));
        jm.set(3, 2, q(1));
        jm.set(2, 3, q(-1));
        let j = complex_j(&s, &jm).unwrap();
        let d = GeometricCoisoData {
            drop_x: vec![],
            k_frame: vec![section(&chart, "xi1"), section(&chart, "xi2")],
            f_index: vec![0, 1],
            flat_frame: vec![
                section(&chart, "v3"),
                section(&chart, "v4"),
                section(&chart, "xi3"),
                section(&chart, "xi4"),
            ],
        };
        let i = ideal_from_data(s.bracket(), &d, 29).unwrap();
        assert!(reducible_symbolic(&s, &i));
        let r = reduce(&s, &i).unwrap();
        assert_eq!(r.scenario().chart().x_names(), &["x3".to_string(), "x4".to_string()]);
        let qr = reduce_quadratic(&s, &d, &j, &r).unwrap();
        assert!(qr.outcome.ok());
        let red_chart = r.scenario().chart();
        // J xi_3 = xi_4, J xi_4 = -xi_3, J v^3 = v^4, J v^4 = -v^3.
        let apply = |f: &str| {
            r.scenario()
                .bracket()
                .poisson(qr.j_red.poly(), &parse_expr(red_chart, f).unwrap())
        };
        let p = |f: &str| parse_expr(red_chart, f).unwrap();
        assert_eq!(apply("xi3"), p("xi4"));
        assert_eq!(apply("xi4"), p("-1*xi3"));
        assert_eq!(apply("v3"), p("v4"));
        assert_eq!(apply("v4"), p("-1*v3"));
    }

    #[test]
    fn presymplectic_dirac_reduction() {
        // L = graph of dx^1 ^ dx^2 on R^3 (a presymplectic form with
        // kernel del_3); reducing along <xi3, p3> yields the graph of
        // the symplectic form dx^1 ^ dx^2 on R^2.
        let s = standard_theta(3);
        let chart = s.chart().clone();
        let l_frame = vec![
            section(&chart, "xi1 + v2"),
            section(&chart, "xi2 - v1"),
            section(&chart, "xi3"),
        ];
        let d = GeometricCoisoData {
            drop_x: vec![],
            k_frame: vec![section(&chart, "xi3")],
            f_index: vec![2],
            flat_frame: vec![
                section(&chart, "v1"),
                section(&chart, "v2"),
                section(&chart, "xi1"),
                section(&chart, "xi2"),
            ],
        };
        let i = ideal_from_data(s.bracket(), &d, 31).unwrap();
        assert_eq!(i.e_indices(), vec![5]);
        assert_eq!(i.p_indices(), vec![2]);
        let r = reduce(&s, &i).unwrap();
        let out = reduce_dirac(&s, &d, &l_frame, &r, 31).unwrap();
        assert_eq!(out.clean.rank, 1);
        assert!(out.clean.ok());
        assert_eq!(out.frame.len(), 2);
        let red_chart = r.scenario().chart();
        let span: Vec<Vec<Q>> = out
            .frame
            .iter()
            .map(|f| constant_e_vector(f.poly()).unwrap().unwrap())
            .collect();
        let got = Subspace::from_vectors(4, &span);
        let want = Subspace::from_vectors(
            4,
            &[
                constant_e_vector(&parse_expr(red_chart, "xi1 + v2").unwrap())
                    .unwrap()
                    .unwrap(),
                constant_e_vector(&parse_expr(red_chart, "xi2 - v1").unwrap())
                    .unwrap()
                    .unwrap(),
            ],
        );
        assert_eq!(got.basis(), want.basis());
    }

    #[test]
    fn dirac_reduction_rejects_non_involutive_frame() {
        // On R^4 with constant twist chi_123 = 1, reduce along the x^4
        // leaves (K = 0, trivial connection). The graph of dx^1 ^ dx^2
        // is lagrangian and meets K cleanly, but the twist obstructs its
        // involutivity: [[xi1 + v2, xi2 - v1]] = -v3 escapes the frame.
        let chart = crate::courant::standard_chart(4);
        let one = GradedPoly::one(&chart);
        let s = crate::courant::twisted_theta(4, &[(0, 1, 2, one)]).unwrap();
        let l_frame = vec![
            section(&chart, "xi1 + v2"),
            section(&chart, "xi2 - v1"),
            section(&chart, "xi3"),
            section(&chart, "xi4"),
        ];
        let d = GeometricCoisoData {
            drop_x: vec![],
            k_frame: vec![],
            f_index: vec![3],
            flat_frame: (0..8)
                .map(|k| {
                    SectionExpr::new(GradedPoly::generator(&chart, Gen::E(k))).unwrap()
                })
                .collect(),
        };
        let i = CoisotropicIdeal::new(
            s.bracket().clone(),
            vec![],
            vec![],
            vec![(3, zero(&chart))],
        )
        .unwrap();
        let r = reduce(&s, &i).unwrap();
        let err = reduce_dirac(&s, &d, &l_frame, &r, 37).unwrap_err();
        assert!(matches!(err, CoisoError::NotInvolutive(_)), "{err}");
    }

    #[test]
    fn poisson_dirac_reduction() {
        // The graph of the Poisson bivector del_1 ^ del_2 on R^4,
        // restricted to {x^3 = 0} and reduced along K = span(v3).
        let s = standard_theta(4);
        let chart = s.chart().clone();
        // Graph frame: v^i + pi(xi_i): pi(xi_1) = s*xi_2 with the sign
        // fixed by the engine's pairing conventions; both signs give a
        // lagrangian, use the involutive one.
        let l_frame = vec![
            section(&chart, "v1 + xi2"),
            section(&chart, "v2 - xi1"),
            section(&chart, "v3"),
            section(&chart, "v4"),
        ];
        let d = GeometricCoisoData {
            drop_x: vec![2],
            k_frame: vec![section(&chart, "v3")],
            f_index: vec![],
            flat_frame: vec![
                section(&chart, "v1"),
                section(&chart, "v2"),
                section(&chart, "v4"),
                section(&chart, "xi1"),
                section(&chart, "xi2"),
                section(&chart, "xi4"),
            ],
        };
        let i = ideal_from_data(s.bracket(), &d, 41).unwrap();
        let r = reduce(&s, &i).unwrap();
        assert_eq!(
            r.scenario().chart().x_names(),
            &["x1".to_string(), "x2".to_string(), "x4".to_string()]
        );
        let out = reduce_dirac(&s, &d, &l_frame, &r, 41).unwrap();
        assert_eq!(out.clean.rank, 1);
        assert_eq!(out.frame.len(), 3);
        let red_chart = r.scenario().chart();
        let got = Subspace::from_vectors(
            6,
            &out.frame
                .iter()
                .map(|f| constant_e_vector(f.poly()).unwrap().unwrap())
                .collect::<Vec<_>>(),
        );
        let want = Subspace::from_vectors(
            6,
            &["v1 + xi2", "v2 - xi1", "v4"]
                .iter()
                .map(|src| {
                    constant_e_vector(&parse_expr(red_chart, src).unwrap()).unwrap().unwrap()
                })
                .collect::<Vec<_>>(),
        );
        assert_eq!(got.basis(), want.basis());
    }

    #[test]
    fn span_solver_handles_polynomial_coefficients() {
        let chart = standard_chart_3();
        let v1 = parse_expr(&chart, "v1").unwrap();
        let xi2 = parse_expr(&chart, "xi2").unwrap();
        let target = parse_expr(&chart, "x2^2*v1 + 3*xi2 - x1*x2*xi2").unwrap();
        let frames = [
            SpanFrame { poly: &v1, allowed_x: vec![0, 1, 2], max_deg: 2 },
            SpanFrame { poly: &xi2, allowed_x: vec![0, 1, 2], max_deg: 2 },
        ];
        let coeffs = in_module_span(&target, &frames).unwrap();
        assert_eq!(coeffs[0], parse_expr(&chart, "x2^2").unwrap());
        assert_eq!(coeffs[1], parse_expr(&chart, "3 - x1*x2").unwrap());
        // Restricting the allowed variables makes it unsolvable.
        let frames_restricted = [
            SpanFrame { poly: &v1, allowed_x: vec![2], max_deg: 2 },
            SpanFrame { poly: &xi2, allowed_x: vec![2], max_deg: 2 },
        ];
        assert!(in_module_span(&target, &frames_restricted).is_none());
    }
}
