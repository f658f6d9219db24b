//! Degree-2 graded Lie algebras, exact Courant algebras, and hamiltonian
//! actions on Courant scenarios.
//!
//! A degree-2 graded Lie algebra lives on `h[2] + a[1] + g` and is packaged
//! as structure data: a Lie bracket on `g`, representations of `g` on `a`
//! and `h`, and a symmetric pairing `a x a -> h`.  With a differential it
//! becomes a three-term complex `h -> a -> g`; the exact ones correspond
//! one-to-one with exact Courant algebras `p: a -> g`.  Acting on a Courant
//! scenario through a comoment map (`mu*`, `rho`, `phi` in degrees 0, 1, 2)
//! such an algebra cuts out the zero level of its moment map, and reduction
//! along that level delegates to the coisotropic pipeline.

use std::sync::Arc;

use num::traits::Zero;
use thiserror::Error;

use crate::coiso::{
    self, in_module_span, CoisoError, CoisotropicIdeal, DiracReduction, GeometricCoisoData,
    QuadraticReduction, Reduction, SpanFrame,
};
use crate::courant::{AtiyahExpr, CourantError, CourantScenario, ScenarioKind, SectionExpr};
use crate::graded::{Chart, Gen, GradedError, GradedPoly, Monomial};
use crate::linalg::{exactness_conditions, Mat, Subspace};
use crate::rat::{q, Q};
use crate::sampling::{sample_points_on, Sampler};

#[derive(Debug, Error)]
pub enum MomentError {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("algebra is not exact: {0}")]
    NotExact(String),
    #[error("left-centrality fails: {0}")]
    NotLeftCentral(String),
    #[error("action data rejected: {0}")]
    ActionInvalid(String),
    #[error("zero level is not regular: {0}")]
    NotRegular(String),
    #[error("not reducible: {0}")]
    NotReducible(String),
    #[error("unsupported input class: {0}")]
    Unsupported(String),
    #[error("frame degeneracy: {0}")]
    FrameDegeneracy(String),
    #[error("sampling degeneracy: {0}")]
    SamplingDegeneracy(String),
    #[error(transparent)]
    Coiso(#[from] CoisoError),
    #[error(transparent)]
    Courant(#[from] CourantError),
    #[error(transparent)]
    Graded(#[from] GradedError),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// Verdict of a single axiom check with a witness tuple on failure.
#[derive(Debug, Clone)]
pub struct AxiomCheck {
    pub pass: bool,
    pub witness: Option<String>,
}

impl AxiomCheck {
    fn ok() -> AxiomCheck {
        AxiomCheck { pass: true, witness: None }
    }

    fn fail(witness: String) -> AxiomCheck {
        AxiomCheck { pass: false, witness: Some(witness) }
    }

    fn record(&mut self, witness: String) {
        if self.pass {
            *self = AxiomCheck::fail(witness);
        }
    }
}

// ---------------------------------------------------------------------------
// Linear-algebra helpers over coordinate vectors.

fn vec_add(a: &[Q], b: &[Q]) -> Vec<Q> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn vec_scale(a: &[Q], s: &Q) -> Vec<Q> {
    a.iter().map(|x| x * s).collect()
}

fn vec_is_zero(a: &[Q]) -> bool {
    a.iter().all(|x| x.is_zero())
}

fn basis_vec(dim: usize, i: usize) -> Vec<Q> {
    let mut v = vec![q(0); dim];
    v[i] = q(1);
    v
}

fn fmt_vec(v: &[Q]) -> String {
    let parts: Vec<String> = v.iter().map(|c| c.to_string()).collect();
    format!("({})", parts.join(", "))
}

/// `sum_i coeffs[i] * polys[i]` in the given chart.
fn combine(chart: &Arc<Chart>, polys: &[GradedPoly], coeffs: &[Q]) -> GradedPoly {
    let mut out = GradedPoly::zero(chart);
    for (p, c) in polys.iter().zip(coeffs) {
        if !c.is_zero() {
            out = &out + &p.scale(c);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Lie algebras by structure constants.

/// A finite-dimensional Lie algebra over the rationals: `bracket[i][j]`
/// holds the coordinates of `[u_i, u_j]` in the defining basis.  The
/// constructor checks shape only; the axioms are the business of
/// [`validate_gla`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LieAlgebra {
    dim: usize,
    bracket: Vec<Vec<Vec<Q>>>,
}

impl LieAlgebra {
    pub fn new(dim: usize, bracket: Vec<Vec<Vec<Q>>>) -> Result<LieAlgebra, MomentError> {
        if bracket.len() != dim
            || bracket.iter().any(|row| row.len() != dim || row.iter().any(|v| v.len() != dim))
        {
            return Err(MomentError::InvalidData(
                "structure constants must form a dim x dim table of coordinate vectors".into(),
            ));
        }
        Ok(LieAlgebra { dim, bracket })
    }

    pub fn abelian(dim: usize) -> LieAlgebra {
        LieAlgebra { dim, bracket: vec![vec![vec![q(0); dim]; dim]; dim] }
    }

    /// `[u_1,u_2] = u_3` and cyclic permutations.
    pub fn so3() -> LieAlgebra {
        let mut g = LieAlgebra::abelian(3);
        for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            g.bracket[i][j][k] = q(1);
            g.bracket[j][i][k] = q(-1);
        }
        g
    }

    /// The 2-dimensional solvable algebra `[u_1, u_2] = u_2`.
    pub fn solvable2() -> LieAlgebra {
        let mut g = LieAlgebra::abelian(2);
        g.bracket[0][1][1] = q(1);
        g.bracket[1][0][1] = q(-1);
        g
    }

    /// The Heisenberg algebra `[u_1, u_2] = u_3` with `u_3` central.
    pub fn heisenberg3() -> LieAlgebra {
        let mut g = LieAlgebra::abelian(3);
        g.bracket[0][1][2] = q(1);
        g.bracket[1][0][2] = q(-1);
        g
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn structure_constants(&self) -> &[Vec<Vec<Q>>] {
        &self.bracket
    }

    /// Bilinear extension of the bracket to coordinate vectors.
    pub fn bracket_vec(&self, x: &[Q], y: &[Q]) -> Vec<Q> {
        let mut out = vec![q(0); self.dim];
        for (i, xi) in x.iter().enumerate() {
            if xi.is_zero() {
                continue;
            }
            for (j, yj) in y.iter().enumerate() {
                if yj.is_zero() {
                    continue;
                }
                let s = xi * yj;
                out = vec_add(&out, &vec_scale(&self.bracket[i][j], &s));
            }
        }
        out
    }

    /// The matrix of `ad(u_k)` in the defining basis.
    pub fn adjoint(&self, k: usize) -> Mat {
        let mut m = Mat::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            for (i, c) in self.bracket[k][j].iter().enumerate() {
                m.set(i, j, c.clone());
            }
        }
        m
    }

    fn antisymmetry_witness(&self) -> Option<String> {
        for i in 0..self.dim {
            for j in i..self.dim {
                let sum = vec_add(&self.bracket[i][j], &self.bracket[j][i]);
                if !vec_is_zero(&sum) {
                    return Some(format!(
                        "[u_{}, u_{}] + [u_{}, u_{}] = {}",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1,
                        fmt_vec(&sum)
                    ));
                }
            }
        }
        None
    }

    fn jacobi_witness(&self) -> Option<String> {
        for i in 0..self.dim {
            for j in 0..self.dim {
                for k in 0..self.dim {
                    let ei = basis_vec(self.dim, i);
                    let ej = basis_vec(self.dim, j);
                    let ek = basis_vec(self.dim, k);
                    let mut s = self.bracket_vec(&self.bracket_vec(&ei, &ej), &ek);
                    s = vec_add(&s, &self.bracket_vec(&self.bracket_vec(&ej, &ek), &ei));
                    s = vec_add(&s, &self.bracket_vec(&self.bracket_vec(&ek, &ei), &ej));
                    if !vec_is_zero(&s) {
                        return Some(format!(
                            "jacobiator on (u_{}, u_{}, u_{}) = {}",
                            i + 1,
                            j + 1,
                            k + 1,
                            fmt_vec(&s)
                        ));
                    }
                }
            }
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Degree-2 graded Lie algebras with differential.

/// Structure data of a graded Lie algebra on `h[2] + a[1] + g`, together
/// with the two components of a differential `h -> a -> g`.  `tau[k]` and
/// `lambda[k]` are the actions of the k-th `g` generator on `a` and `h`;
/// `varpi[i][j]` holds the `h`-coordinates of the symmetric pairing of the
/// i-th and j-th `a` generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DGLA2Data {
    g: LieAlgebra,
    dim_a: usize,
    dim_h: usize,
    tau: Vec<Mat>,
    lambda: Vec<Mat>,
    varpi: Vec<Vec<Vec<Q>>>,
    delta_h_a: Mat,
    delta_a_g: Mat,
}

impl DGLA2Data {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        g: LieAlgebra,
        dim_a: usize,
        dim_h: usize,
        tau: Vec<Mat>,
        lambda: Vec<Mat>,
        varpi: Vec<Vec<Vec<Q>>>,
        delta_h_a: Mat,
        delta_a_g: Mat,
    ) -> Result<DGLA2Data, MomentError> {
        let dim_g = g.dim();
        let square = |ms: &[Mat], n: usize| ms.len() == dim_g && ms.iter().all(|m| m.rows == n && m.cols == n);
        if !square(&tau, dim_a) {
            return Err(MomentError::InvalidData(format!(
                "tau must be {dim_g} square matrices of size {dim_a}"
            )));
        }
        if !square(&lambda, dim_h) {
            return Err(MomentError::InvalidData(format!(
                "lambda must be {dim_g} square matrices of size {dim_h}"
            )));
        }
        if varpi.len() != dim_a
            || varpi.iter().any(|row| row.len() != dim_a || row.iter().any(|v| v.len() != dim_h))
        {
            return Err(MomentError::InvalidData(
                "varpi must be a dim_a x dim_a table of h-coordinate vectors".into(),
            ));
        }
        if delta_h_a.rows != dim_a || delta_h_a.cols != dim_h {
            return Err(MomentError::InvalidData("delta_h_a must map h into a".into()));
        }
        if delta_a_g.rows != dim_g || delta_a_g.cols != dim_a {
            return Err(MomentError::InvalidData("delta_a_g must map a into g".into()));
        }
        Ok(DGLA2Data { g, dim_a, dim_h, tau, lambda, varpi, delta_h_a, delta_a_g })
    }

    /// The data on `(g + h)[1] + h[2] + g` induced by a `g`-module `h`:
    /// `g` acts diagonally on `a = g + h` through the adjoint action and
    /// the module action, the pairing polarizes the module action, and the
    /// differential is inclusion followed by projection.
    pub fn hemisemidirect(
        g: LieAlgebra,
        dim_h: usize,
        action: &[Mat],
    ) -> Result<DGLA2Data, MomentError> {
        check_module(&g, dim_h, action)?;
        let dim_g = g.dim();
        let dim_a = dim_g + dim_h;
        let mut tau = Vec::with_capacity(dim_g);
        for k in 0..dim_g {
            let mut t = Mat::zeros(dim_a, dim_a);
            let ad = g.adjoint(k);
            for i in 0..dim_g {
                for j in 0..dim_g {
                    t.set(i, j, ad.at(i, j).clone());
                }
            }
            for i in 0..dim_h {
                for j in 0..dim_h {
                    t.set(dim_g + i, dim_g + j, action[k].at(i, j).clone());
                }
            }
            tau.push(t);
        }
        let mut varpi = vec![vec![vec![q(0); dim_h]; dim_a]; dim_a];
        for i in 0..dim_g {
            for l in 0..dim_h {
                let col: Vec<Q> = (0..dim_h).map(|r| action[i].at(r, l).clone()).collect();
                varpi[i][dim_g + l] = col.clone();
                varpi[dim_g + l][i] = col;
            }
        }
        let mut delta_h_a = Mat::zeros(dim_a, dim_h);
        for l in 0..dim_h {
            delta_h_a.set(dim_g + l, l, q(1));
        }
        let mut delta_a_g = Mat::zeros(dim_g, dim_a);
        for k in 0..dim_g {
            delta_a_g.set(k, k, q(1));
        }
        DGLA2Data::new(g, dim_a, dim_h, tau, action.to_vec(), varpi, delta_h_a, delta_a_g)
    }

    pub fn g(&self) -> &LieAlgebra {
        &self.g
    }

    pub fn dim_a(&self) -> usize {
        self.dim_a
    }

    pub fn dim_h(&self) -> usize {
        self.dim_h
    }

    pub fn tau(&self) -> &[Mat] {
        &self.tau
    }

    pub fn lambda(&self) -> &[Mat] {
        &self.lambda
    }

    pub fn varpi(&self) -> &[Vec<Vec<Q>>] {
        &self.varpi
    }

    pub fn delta_h_a(&self) -> &Mat {
        &self.delta_h_a
    }

    pub fn delta_a_g(&self) -> &Mat {
        &self.delta_a_g
    }

    pub fn tau_apply(&self, u: &[Q], a: &[Q]) -> Vec<Q> {
        let mut out = vec![q(0); self.dim_a];
        for (k, uk) in u.iter().enumerate() {
            if !uk.is_zero() {
                out = vec_add(&out, &vec_scale(&self.tau[k].mul_vec(a), uk));
            }
        }
        out
    }

    pub fn lambda_apply(&self, u: &[Q], h: &[Q]) -> Vec<Q> {
        let mut out = vec![q(0); self.dim_h];
        for (k, uk) in u.iter().enumerate() {
            if !uk.is_zero() {
                out = vec_add(&out, &vec_scale(&self.lambda[k].mul_vec(h), uk));
            }
        }
        out
    }

    pub fn varpi_apply(&self, a1: &[Q], a2: &[Q]) -> Vec<Q> {
        let mut out = vec![q(0); self.dim_h];
        for (i, x) in a1.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            for (j, y) in a2.iter().enumerate() {
                if !y.is_zero() {
                    out = vec_add(&out, &vec_scale(&self.varpi[i][j], &(x * y)));
                }
            }
        }
        out
    }

    /// Witness against exactness of `0 -> h -> a -> g -> 0`, if any.
    pub fn exactness_witness(&self) -> Option<String> {
        if self.delta_a_g.rank() != self.g.dim() {
            return Some("delta: a -> g is not surjective".into());
        }
        if self.delta_h_a.rank() != self.dim_h {
            return Some("delta: h -> a is not injective".into());
        }
        let ker = Subspace::from_columns(self.dim_a, &self.delta_a_g.kernel());
        let img = Subspace::from_columns(self.dim_a, &self.delta_h_a);
        if ker != img {
            return Some("image of h in a differs from the kernel of a -> g".into());
        }
        None
    }
}

fn check_module(g: &LieAlgebra, dim: usize, action: &[Mat]) -> Result<(), MomentError> {
    if action.len() != g.dim() || action.iter().any(|m| m.rows != dim || m.cols != dim) {
        return Err(MomentError::InvalidData(format!(
            "module action must be {} square matrices of size {dim}",
            g.dim()
        )));
    }
    for i in 0..g.dim() {
        for j in 0..g.dim() {
            let mut lhs = Mat::zeros(dim, dim);
            for (k, c) in g.structure_constants()[i][j].iter().enumerate() {
                if !c.is_zero() {
                    lhs = lhs.add(&action[k].scale(c));
                }
            }
            let rhs = action[i].mul(&action[j]).sub(&action[j].mul(&action[i]));
            if lhs != rhs {
                return Err(MomentError::InvalidData(format!(
                    "action of [u_{}, u_{}] differs from the commutator of the actions",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(())
}

/// Per-axiom report for the graded Lie algebra structure data.
#[derive(Debug, Clone)]
pub struct GlaReport {
    pub antisymmetry: AxiomCheck,
    pub jacobi: AxiomCheck,
    pub tau_representation: AxiomCheck,
    pub lambda_representation: AxiomCheck,
    pub varpi_symmetric: AxiomCheck,
    pub varpi_equivariant: AxiomCheck,
}

impl GlaReport {
    pub fn all_pass(&self) -> bool {
        self.antisymmetry.pass
            && self.jacobi.pass
            && self.tau_representation.pass
            && self.lambda_representation.pass
            && self.varpi_symmetric.pass
            && self.varpi_equivariant.pass
    }
}

/// Report for the differential on top of the graded Lie algebra data.
#[derive(Debug, Clone)]
pub struct DglaReport {
    pub gla: GlaReport,
    /// `delta . delta = 0`.
    pub chain: AxiomCheck,
    /// Both components of `delta` intertwine the `g`-actions.
    pub delta_equivariant: AxiomCheck,
    /// `delta varpi(a_1, a_2) = tau(delta a_1)(a_2) + tau(delta a_2)(a_1)`.
    pub varpi_delta: AxiomCheck,
    /// `lambda(delta a)(h) = varpi(a, delta h)`.
    pub lambda_delta: AxiomCheck,
}

impl DglaReport {
    pub fn all_pass(&self) -> bool {
        self.gla.all_pass()
            && self.chain.pass
            && self.delta_equivariant.pass
            && self.varpi_delta.pass
            && self.lambda_delta.pass
    }
}

fn representation_witness(g: &LieAlgebra, action: &[Mat], name: &str) -> Option<String> {
    for i in 0..g.dim() {
        for j in 0..g.dim() {
            let mut lhs = Mat::zeros(action[i].rows, action[i].cols);
            for (k, c) in g.structure_constants()[i][j].iter().enumerate() {
                if !c.is_zero() {
                    lhs = lhs.add(&action[k].scale(c));
                }
            }
            let rhs = action[i].mul(&action[j]).sub(&action[j].mul(&action[i]));
            if lhs != rhs {
                return Some(format!(
                    "{name}([u_{}, u_{}]) differs from the commutator",
                    i + 1,
                    j + 1
                ));
            }
        }
    }
    None
}

/// Checks the graded-Lie-algebra axioms of the structure data exactly on
/// basis tuples: antisymmetry and Jacobi for `g`, the representation laws
/// for `tau` and `lambda`, and symmetry plus `g`-equivariance of `varpi`.
pub fn validate_gla(d: &DGLA2Data) -> GlaReport {
    let g = &d.g;
    let antisymmetry = match g.antisymmetry_witness() {
        None => AxiomCheck::ok(),
        Some(w) => AxiomCheck::fail(w),
    };
    let jacobi = match g.jacobi_witness() {
        None => AxiomCheck::ok(),
        Some(w) => AxiomCheck::fail(w),
    };
    let tau_representation = match representation_witness(g, &d.tau, "tau") {
        None => AxiomCheck::ok(),
        Some(w) => AxiomCheck::fail(w),
    };
    let lambda_representation = match representation_witness(g, &d.lambda, "lambda") {
        None => AxiomCheck::ok(),
        Some(w) => AxiomCheck::fail(w),
    };

    let mut varpi_symmetric = AxiomCheck::ok();
    'sym: for i in 0..d.dim_a {
        for j in 0..d.dim_a {
            if d.varpi[i][j] != d.varpi[j][i] {
                varpi_symmetric.record(format!("varpi(a_{}, a_{}) is not symmetric", i + 1, j + 1));
                break 'sym;
            }
        }
    }

    let mut varpi_equivariant = AxiomCheck::ok();
    'equ: for k in 0..g.dim() {
        let u = basis_vec(g.dim(), k);
        for i in 0..d.dim_a {
            for j in 0..d.dim_a {
                let ai = basis_vec(d.dim_a, i);
                let aj = basis_vec(d.dim_a, j);
                let lhs = d.lambda_apply(&u, &d.varpi[i][j]);
                let rhs = vec_add(
                    &d.varpi_apply(&d.tau_apply(&u, &ai), &aj),
                    &d.varpi_apply(&ai, &d.tau_apply(&u, &aj)),
                );
                if lhs != rhs {
                    varpi_equivariant.record(format!(
                        "equivariance fails on (u_{}, a_{}, a_{})",
                        k + 1,
                        i + 1,
                        j + 1
                    ));
                    break 'equ;
                }
            }
        }
    }

    GlaReport {
        antisymmetry,
        jacobi,
        tau_representation,
        lambda_representation,
        varpi_symmetric,
        varpi_equivariant,
    }
}

/// Checks the differential conditions on top of [`validate_gla`]: the
/// chain property, equivariance of both components, the polarization law
/// for `varpi`, and the compatibility of `lambda` with `delta`.
pub fn validate_dgla(d: &DGLA2Data) -> DglaReport {
    let gla = validate_gla(d);

    let composite = d.delta_a_g.mul(&d.delta_h_a);
    let chain = if composite.is_zero() {
        AxiomCheck::ok()
    } else {
        AxiomCheck::fail("delta . delta is nonzero on h".into())
    };

    let mut delta_equivariant = AxiomCheck::ok();
    for k in 0..d.g.dim() {
        let lhs = d.delta_h_a.mul(&d.lambda[k]);
        let rhs = d.tau[k].mul(&d.delta_h_a);
        if lhs != rhs {
            delta_equivariant
                .record(format!("delta: h -> a is not equivariant for u_{}", k + 1));
            break;
        }
        let lhs2 = d.delta_a_g.mul(&d.tau[k]);
        let rhs2 = d.g.adjoint(k).mul(&d.delta_a_g);
        if lhs2 != rhs2 {
            delta_equivariant
                .record(format!("delta: a -> g is not equivariant for u_{}", k + 1));
            break;
        }
    }

    let mut varpi_delta = AxiomCheck::ok();
    'vd: for i in 0..d.dim_a {
        for j in 0..d.dim_a {
            let ai = basis_vec(d.dim_a, i);
            let aj = basis_vec(d.dim_a, j);
            let lhs = d.delta_h_a.mul_vec(&d.varpi[i][j]);
            let rhs = vec_add(
                &d.tau_apply(&d.delta_a_g.mul_vec(&ai), &aj),
                &d.tau_apply(&d.delta_a_g.mul_vec(&aj), &ai),
            );
            if lhs != rhs {
                varpi_delta.record(format!(
                    "polarization fails on (a_{}, a_{}): delta varpi = {}, expected {}",
                    i + 1,
                    j + 1,
                    fmt_vec(&lhs),
                    fmt_vec(&rhs)
                ));
                break 'vd;
            }
        }
    }

    let mut lambda_delta = AxiomCheck::ok();
    'ld: for i in 0..d.dim_a {
        for l in 0..d.dim_h {
            let ai = basis_vec(d.dim_a, i);
            let hl = basis_vec(d.dim_h, l);
            let lhs = d.lambda_apply(&d.delta_a_g.mul_vec(&ai), &hl);
            let rhs = d.varpi_apply(&ai, &d.delta_h_a.mul_vec(&hl));
            if lhs != rhs {
                lambda_delta.record(format!(
                    "lambda(delta a_{})(h_{}) = {} but varpi(a_{}, delta h_{}) = {}",
                    i + 1,
                    l + 1,
                    fmt_vec(&lhs),
                    i + 1,
                    l + 1,
                    fmt_vec(&rhs)
                ));
                break 'ld;
            }
        }
    }

    DglaReport { gla, chain, delta_equivariant, varpi_delta, lambda_delta }
}

// ---------------------------------------------------------------------------
// Courant algebras.

/// A vector space `a` with a bilinear bracket and a map `p` to a Lie
/// algebra: `bracket[i][j]` holds the `a`-coordinates of `[[a_i, a_j]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CourantAlgebraData {
    g: LieAlgebra,
    dim_a: usize,
    bracket: Vec<Vec<Vec<Q>>>,
    p: Mat,
}

impl CourantAlgebraData {
    pub fn new(
        g: LieAlgebra,
        dim_a: usize,
        bracket: Vec<Vec<Vec<Q>>>,
        p: Mat,
    ) -> Result<CourantAlgebraData, MomentError> {
        if bracket.len() != dim_a
            || bracket.iter().any(|row| row.len() != dim_a || row.iter().any(|v| v.len() != dim_a))
        {
            return Err(MomentError::InvalidData(
                "bracket must be a dim_a x dim_a table of coordinate vectors".into(),
            ));
        }
        if p.rows != g.dim() || p.cols != dim_a {
            return Err(MomentError::InvalidData("p must map a into g".into()));
        }
        Ok(CourantAlgebraData { g, dim_a, bracket, p })
    }

    pub fn g(&self) -> &LieAlgebra {
        &self.g
    }

    pub fn dim_a(&self) -> usize {
        self.dim_a
    }

    pub fn bracket_table(&self) -> &[Vec<Vec<Q>>] {
        &self.bracket
    }

    pub fn p(&self) -> &Mat {
        &self.p
    }

    pub fn bracket_vec(&self, x: &[Q], y: &[Q]) -> Vec<Q> {
        let mut out = vec![q(0); self.dim_a];
        for (i, xi) in x.iter().enumerate() {
            if xi.is_zero() {
                continue;
            }
            for (j, yj) in y.iter().enumerate() {
                if !yj.is_zero() {
                    out = vec_add(&out, &vec_scale(&self.bracket[i][j], &(xi * yj)));
                }
            }
        }
        out
    }

    /// Basis of `ker p` as matrix columns.
    pub fn kernel(&self) -> Mat {
        self.p.kernel()
    }

    /// Conjugates the bracket and `p` by a basis change `t` of `a`.
    pub fn change_basis(&self, t: &Mat) -> Result<CourantAlgebraData, MomentError> {
        if t.rows != self.dim_a || t.cols != self.dim_a {
            return Err(MomentError::InvalidData("basis change must be square on a".into()));
        }
        let t_inv = t
            .inverse()
            .ok_or_else(|| MomentError::InvalidData("basis change must be invertible".into()))?;
        let cols: Vec<Vec<Q>> = (0..self.dim_a).map(|j| t.col(j)).collect();
        let mut bracket = vec![vec![vec![q(0); self.dim_a]; self.dim_a]; self.dim_a];
        for i in 0..self.dim_a {
            for j in 0..self.dim_a {
                bracket[i][j] = t_inv.mul_vec(&self.bracket_vec(&cols[i], &cols[j]));
            }
        }
        CourantAlgebraData::new(self.g.clone(), self.dim_a, bracket, self.p.mul(t))
    }
}

/// Per-axiom report for Courant algebra data, including the exactness
/// conditions (surjectivity of `p` and left-centrality of its kernel).
#[derive(Debug, Clone)]
pub struct CourantAlgebraReport {
    pub leibniz: AxiomCheck,
    pub p_morphism: AxiomCheck,
    pub p_surjective: AxiomCheck,
    pub kernel_left_central: AxiomCheck,
}

impl CourantAlgebraReport {
    pub fn all_pass(&self) -> bool {
        self.leibniz.pass
            && self.p_morphism.pass
            && self.p_surjective.pass
            && self.kernel_left_central.pass
    }
}

/// Checks the Leibniz identity and bracket-compatibility of `p` on basis
/// tuples, plus the exactness conditions.
pub fn validate_courant_algebra(c: &CourantAlgebraData) -> CourantAlgebraReport {
    let mut leibniz = AxiomCheck::ok();
    'l: for i in 0..c.dim_a {
        for j in 0..c.dim_a {
            for k in 0..c.dim_a {
                let ei = basis_vec(c.dim_a, i);
                let ej = basis_vec(c.dim_a, j);
                let ek = basis_vec(c.dim_a, k);
                let lhs = c.bracket_vec(&ei, &c.bracket_vec(&ej, &ek));
                let rhs = vec_add(
                    &c.bracket_vec(&c.bracket_vec(&ei, &ej), &ek),
                    &c.bracket_vec(&ej, &c.bracket_vec(&ei, &ek)),
                );
                if lhs != rhs {
                    leibniz.record(format!(
                        "Leibniz fails on (a_{}, a_{}, a_{})",
                        i + 1,
                        j + 1,
                        k + 1
                    ));
                    break 'l;
                }
            }
        }
    }

    let mut p_morphism = AxiomCheck::ok();
    'm: for i in 0..c.dim_a {
        for j in 0..c.dim_a {
            let ei = basis_vec(c.dim_a, i);
            let ej = basis_vec(c.dim_a, j);
            let lhs = c.p.mul_vec(&c.bracket_vec(&ei, &ej));
            let rhs = c.g.bracket_vec(&c.p.mul_vec(&ei), &c.p.mul_vec(&ej));
            if lhs != rhs {
                p_morphism.record(format!(
                    "p([[a_{}, a_{}]]) = {} but [p a_{}, p a_{}] = {}",
                    i + 1,
                    j + 1,
                    fmt_vec(&lhs),
                    i + 1,
                    j + 1,
                    fmt_vec(&rhs)
                ));
                break 'm;
            }
        }
    }

    let p_surjective = if c.p.rank() == c.g.dim() {
        AxiomCheck::ok()
    } else {
        AxiomCheck::fail(format!("rank p = {} < dim g = {}", c.p.rank(), c.g.dim()))
    };

    let mut kernel_left_central = AxiomCheck::ok();
    let ker = c.kernel();
    'c: for l in 0..ker.cols {
        let h = ker.col(l);
        for j in 0..c.dim_a {
            let br = c.bracket_vec(&h, &basis_vec(c.dim_a, j));
            if !vec_is_zero(&br) {
                kernel_left_central.record(format!(
                    "[[{}, a_{}]] = {} for a kernel element",
                    fmt_vec(&h),
                    j + 1,
                    fmt_vec(&br)
                ));
                break 'c;
            }
        }
    }

    CourantAlgebraReport { leibniz, p_morphism, p_surjective, kernel_left_central }
}

/// The exact Courant algebra on `a = g + h` with bracket
/// `[[(u_1,h_1),(u_2,h_2)]] = ([u_1,u_2], u_1 . h_2)` and `p` the
/// projection onto `g`.
pub fn hemisemidirect(
    g: LieAlgebra,
    dim_h: usize,
    action: &[Mat],
) -> Result<CourantAlgebraData, MomentError> {
    check_module(&g, dim_h, action)?;
    let dim_g = g.dim();
    let dim_a = dim_g + dim_h;
    let mut bracket = vec![vec![vec![q(0); dim_a]; dim_a]; dim_a];
    for i in 0..dim_g {
        for j in 0..dim_g {
            for (k, c) in g.structure_constants()[i][j].iter().enumerate() {
                bracket[i][j][k] = c.clone();
            }
        }
        for l in 0..dim_h {
            for r in 0..dim_h {
                bracket[i][dim_g + l][dim_g + r] = action[i].at(r, l).clone();
            }
        }
    }
    let mut p = Mat::zeros(dim_g, dim_a);
    for k in 0..dim_g {
        p.set(k, k, q(1));
    }
    CourantAlgebraData::new(g, dim_a, bracket, p)
}

/// Converts an exact differential graded Lie algebra into the Courant
/// algebra on `a` with bracket `[[a_1, a_2]] = tau(delta a_1)(a_2)` and
/// `p = delta`.
pub fn dgla_to_courant_algebra(d: &DGLA2Data) -> Result<CourantAlgebraData, MomentError> {
    if let Some(w) = d.exactness_witness() {
        return Err(MomentError::NotExact(w));
    }
    let mut bracket = vec![vec![vec![q(0); d.dim_a]; d.dim_a]; d.dim_a];
    for i in 0..d.dim_a {
        let di = d.delta_a_g.mul_vec(&basis_vec(d.dim_a, i));
        for j in 0..d.dim_a {
            bracket[i][j] = d.tau_apply(&di, &basis_vec(d.dim_a, j));
        }
    }
    CourantAlgebraData::new(d.g.clone(), d.dim_a, bracket, d.delta_a_g.clone())
}

/// Reconstructs the differential graded Lie algebra of an exact Courant
/// algebra: `h` is the kernel of `p` in its canonical basis, a linear
/// section of `p` induces the `g`-actions (well defined by
/// left-centrality), and `varpi` is the symmetrized bracket.
pub fn courant_algebra_to_dgla(c: &CourantAlgebraData) -> Result<DGLA2Data, MomentError> {
    let report = validate_courant_algebra(c);
    if !report.p_surjective.pass {
        return Err(MomentError::NotExact(report.p_surjective.witness.unwrap()));
    }
    if !report.kernel_left_central.pass {
        return Err(MomentError::NotExact(report.kernel_left_central.witness.unwrap()));
    }
    let dim_g = c.g.dim();
    let kernel = c.kernel();
    let dim_h = kernel.cols;

    // A linear section of p, columnwise.
    let mut section = Mat::zeros(c.dim_a, dim_g);
    for k in 0..dim_g {
        let s = c
            .p
            .solve(&basis_vec(dim_g, k))
            .ok_or_else(|| MomentError::NotExact("p admits no linear section".into()))?;
        for (i, v) in s.iter().enumerate() {
            section.set(i, k, v.clone());
        }
    }
    let lift = |u: usize| section.col(u);

    let in_kernel_coords = |v: &[Q], what: &str| -> Result<Vec<Q>, MomentError> {
        if !vec_is_zero(&c.p.mul_vec(v)) {
            return Err(MomentError::NotExact(format!("{what} escapes the kernel of p")));
        }
        kernel
            .solve(v)
            .ok_or_else(|| MomentError::Internal(format!("{what} is not in the kernel basis span")))
    };

    let mut tau = Vec::with_capacity(dim_g);
    let mut lambda = Vec::with_capacity(dim_g);
    for k in 0..dim_g {
        let mut t = Mat::zeros(c.dim_a, c.dim_a);
        for j in 0..c.dim_a {
            let col = c.bracket_vec(&lift(k), &basis_vec(c.dim_a, j));
            for (i, v) in col.into_iter().enumerate() {
                t.set(i, j, v);
            }
        }
        tau.push(t);
        let mut l = Mat::zeros(dim_h, dim_h);
        for j in 0..dim_h {
            let col = in_kernel_coords(
                &c.bracket_vec(&lift(k), &kernel.col(j)),
                "the g-action on the kernel",
            )?;
            for (i, v) in col.into_iter().enumerate() {
                l.set(i, j, v);
            }
        }
        lambda.push(l);
    }

    let mut varpi = vec![vec![vec![q(0); dim_h]; c.dim_a]; c.dim_a];
    for i in 0..c.dim_a {
        for j in 0..c.dim_a {
            let ei = basis_vec(c.dim_a, i);
            let ej = basis_vec(c.dim_a, j);
            let sym = vec_add(&c.bracket_vec(&ei, &ej), &c.bracket_vec(&ej, &ei));
            varpi[i][j] = in_kernel_coords(&sym, "the symmetrized bracket")?;
        }
    }

    DGLA2Data::new(c.g.clone(), c.dim_a, dim_h, tau, lambda, varpi, kernel, c.p.clone())
}

/// A random exact Courant algebra: a hemisemidirect product of a seed Lie
/// algebra with a compatible module, conjugated by a random basis change
/// of `a`.  Total dimension of `h + a + g` stays within `max_total`.
pub fn sample_exact_courant_algebra(
    s: &mut Sampler,
    max_total: usize,
) -> Result<CourantAlgebraData, MomentError> {
    let budget = (max_total / 2).max(2);
    let pick = s.small_int(5).unsigned_abs() as usize;
    let (g, dim_h, action) = match pick {
        0 => {
            let g = LieAlgebra::so3();
            (g.clone(), 3, (0..3).map(|k| g.adjoint(k)).collect::<Vec<_>>())
        }
        1 => {
            let g = LieAlgebra::heisenberg3();
            (g.clone(), 3, (0..3).map(|k| g.adjoint(k)).collect::<Vec<_>>())
        }
        2 => {
            let g = LieAlgebra::solvable2();
            (g.clone(), 2, (0..2).map(|k| g.adjoint(k)).collect::<Vec<_>>())
        }
        3 => {
            let dim_g = 1 + s.small_int(2).unsigned_abs() as usize;
            let dim_h = 1 + s.small_int(2).unsigned_abs() as usize;
            let g = LieAlgebra::abelian(dim_g);
            // Commuting diagonal actions on h.
            let action = (0..dim_g)
                .map(|_| {
                    let mut m = Mat::zeros(dim_h, dim_h);
                    for i in 0..dim_h {
                        m.set(i, i, q(s.small_int(3)));
                    }
                    m
                })
                .collect();
            (g, dim_h, action)
        }
        _ => {
            let g = LieAlgebra::so3();
            let dim_h = 1 + s.small_int(2).unsigned_abs() as usize;
            (g, dim_h, vec![Mat::zeros(dim_h, dim_h); 3])
        }
    };
    let (g, dim_h, action) = if g.dim() + dim_h > budget {
        let g = LieAlgebra::abelian(1);
        (g, 1, vec![Mat::zeros(1, 1)])
    } else {
        (g, dim_h, action)
    };
    let c = hemisemidirect(g, dim_h, &action)?;
    let t = s.invertible(c.dim_a(), 2);
    c.change_basis(&t)
}

// ---------------------------------------------------------------------------
// Hamiltonian actions on scenarios.

/// A comoment map for a degree-2 graded Lie algebra acting on a scenario:
/// `phi`, `rho_a`, `mu_star` are the images of the `g`, `a`, `h` bases in
/// degrees 2, 1, 0.
#[derive(Debug, Clone)]
pub struct HamAction {
    scenario: CourantScenario,
    dgla: DGLA2Data,
    phi: Vec<GradedPoly>,
    rho_a: Vec<GradedPoly>,
    mu_star: Vec<GradedPoly>,
}

impl HamAction {
    pub fn new(
        scenario: CourantScenario,
        dgla: DGLA2Data,
        phi: Vec<GradedPoly>,
        rho_a: Vec<GradedPoly>,
        mu_star: Vec<GradedPoly>,
    ) -> Result<HamAction, MomentError> {
        let chart = scenario.chart();
        let shape = [
            (phi.len(), dgla.g().dim(), "phi"),
            (rho_a.len(), dgla.dim_a(), "rho"),
            (mu_star.len(), dgla.dim_h(), "mu*"),
        ];
        for (got, want, name) in shape {
            if got != want {
                return Err(MomentError::InvalidData(format!(
                    "{name} must list one image per basis element ({want}), got {got}"
                )));
            }
        }
        for (polys, deg, name) in
            [(&phi, 2usize, "phi"), (&rho_a, 1, "rho"), (&mu_star, 0, "mu*")]
        {
            for p in polys.iter() {
                if p.chart() != chart {
                    return Err(MomentError::InvalidData(format!(
                        "{name} images must live in the scenario chart"
                    )));
                }
                if !p.is_homogeneous_of(deg) {
                    return Err(MomentError::InvalidData(format!(
                        "{name} images must be homogeneous of degree {deg}"
                    )));
                }
            }
        }
        Ok(HamAction { scenario, dgla, phi, rho_a, mu_star })
    }

    pub fn scenario(&self) -> &CourantScenario {
        &self.scenario
    }

    pub fn dgla(&self) -> &DGLA2Data {
        &self.dgla
    }

    pub fn phi(&self) -> &[GradedPoly] {
        &self.phi
    }

    pub fn rho_a(&self) -> &[GradedPoly] {
        &self.rho_a
    }

    pub fn mu_star(&self) -> &[GradedPoly] {
        &self.mu_star
    }

    fn phi_of(&self, u: &[Q]) -> GradedPoly {
        combine(self.scenario.chart(), &self.phi, u)
    }

    fn rho_of(&self, a: &[Q]) -> GradedPoly {
        combine(self.scenario.chart(), &self.rho_a, a)
    }

    fn mu_of(&self, h: &[Q]) -> GradedPoly {
        combine(self.scenario.chart(), &self.mu_star, h)
    }
}

/// Report of [`validate_comoment`]: the direct bracket-morphism property
/// of the comoment map against its four classical components, which must
/// agree.
#[derive(Debug, Clone)]
pub struct ComomentReport {
    /// Poisson brackets of comoment images match the graded Lie bracket
    /// on every basis pair.
    pub symbolic_morphism: AxiomCheck,
    /// The degree-2 images act as a `g`-representation by derivations.
    pub phi_morphism: AxiomCheck,
    /// The degree-1 images are equivariant for the derivations.
    pub rho_equivariant: AxiomCheck,
    /// The degree-0 images are equivariant for the symbol vector fields.
    pub mu_equivariant: AxiomCheck,
    /// The pairing of degree-1 images realizes `mu* . varpi`.
    pub pairing_matches_varpi: AxiomCheck,
    /// The symbolic verdict equals the conjunction of the four classical
    /// conditions.
    pub verdicts_agree: bool,
}

impl ComomentReport {
    pub fn all_pass(&self) -> bool {
        self.symbolic_morphism.pass
            && self.phi_morphism.pass
            && self.rho_equivariant.pass
            && self.mu_equivariant.pass
            && self.pairing_matches_varpi.pass
            && self.verdicts_agree
    }

    pub fn first_failure(&self) -> Option<&str> {
        [
            &self.symbolic_morphism,
            &self.phi_morphism,
            &self.rho_equivariant,
            &self.mu_equivariant,
            &self.pairing_matches_varpi,
        ]
        .into_iter()
        .find(|c| !c.pass)
        .and_then(|c| c.witness.as_deref())
    }
}

fn coordinate_sections(chart: &Arc<Chart>) -> Vec<GradedPoly> {
    (0..chart.n_e()).map(|m| GradedPoly::generator(chart, Gen::E(m))).collect()
}

fn coordinate_functions(chart: &Arc<Chart>) -> Vec<GradedPoly> {
    (0..chart.n_x()).map(|k| GradedPoly::generator(chart, Gen::X(k))).collect()
}

/// Pairing of two degree-1 polynomials through the scenario metric.
fn metric_pairing(
    s: &CourantScenario,
    f: &GradedPoly,
    g: &GradedPoly,
) -> Result<GradedPoly, MomentError> {
    let a = SectionExpr::new(f.clone())?;
    let b = SectionExpr::new(g.clone())?;
    Ok(s.pairing(&a, &b))
}

/// Checks that the comoment map preserves graded Lie brackets, both
/// directly on basis pairs via the Poisson bracket and through the four
/// classical conditions (derivation representation, equivariance of the
/// section and moment components, pairing realization of `varpi`).  The
/// two verdicts are equivalent and the report asserts their agreement.
pub fn validate_comoment(a: &HamAction) -> ComomentReport {
    let s = &a.scenario;
    let b = s.bracket();
    let chart = s.chart();
    let d = &a.dgla;
    let dim_g = d.g().dim();
    let dim_a = d.dim_a();
    let dim_h = d.dim_h();

    let mut symbolic = AxiomCheck::ok();
    // g x g.
    for i in 0..dim_g {
        for j in i..dim_g {
            let lhs = b.poisson(&a.phi[i], &a.phi[j]);
            let rhs = a.phi_of(&d.g().structure_constants()[i][j]);
            if lhs != rhs {
                symbolic.record(format!("{{phi u_{}, phi u_{}}} differs", i + 1, j + 1));
            }
        }
    }
    // g x a.
    for i in 0..dim_g {
        for j in 0..dim_a {
            let lhs = b.poisson(&a.phi[i], &a.rho_a[j]);
            let rhs = a.rho_of(&d.tau_apply(&basis_vec(dim_g, i), &basis_vec(dim_a, j)));
            if lhs != rhs {
                symbolic.record(format!("{{phi u_{}, rho a_{}}} differs", i + 1, j + 1));
            }
        }
    }
    // g x h.
    for i in 0..dim_g {
        for l in 0..dim_h {
            let lhs = b.poisson(&a.phi[i], &a.mu_star[l]);
            let rhs = a.mu_of(&d.lambda_apply(&basis_vec(dim_g, i), &basis_vec(dim_h, l)));
            if lhs != rhs {
                symbolic.record(format!("{{phi u_{}, mu* h_{}}} differs", i + 1, l + 1));
            }
        }
    }
    // a x a.
    for i in 0..dim_a {
        for j in i..dim_a {
            let lhs = b.poisson(&a.rho_a[i], &a.rho_a[j]);
            let rhs = a.mu_of(&d.varpi()[i][j]);
            if lhs != rhs {
                symbolic.record(format!("{{rho a_{}, rho a_{}}} differs", i + 1, j + 1));
            }
        }
    }
    // a x h and h x h brackets vanish in the algebra; the Poisson side
    // lands in negative degree and must vanish identically.
    for i in 0..dim_a {
        for l in 0..dim_h {
            if !b.poisson(&a.rho_a[i], &a.mu_star[l]).is_zero() {
                symbolic.record(format!("{{rho a_{}, mu* h_{}}} is nonzero", i + 1, l + 1));
            }
        }
    }

    // Classical (a): nested derivation actions on all chart generators.
    let sections = coordinate_sections(chart);
    let functions = coordinate_functions(chart);
    let generators: Vec<&GradedPoly> = sections.iter().chain(functions.iter()).collect();
    let mut phi_morphism = AxiomCheck::ok();
    'pm: for i in 0..dim_g {
        for j in 0..dim_g {
            let br = a.phi_of(&d.g().structure_constants()[i][j]);
            for w in &generators {
                let lhs = &b.poisson(&a.phi[i], &b.poisson(&a.phi[j], w))
                    - &b.poisson(&a.phi[j], &b.poisson(&a.phi[i], w));
                let rhs = b.poisson(&br, w);
                if lhs != rhs {
                    phi_morphism.record(format!(
                        "derivation commutator of (u_{}, u_{}) differs on {}",
                        i + 1,
                        j + 1,
                        w
                    ));
                    break 'pm;
                }
            }
        }
    }

    // Classical (b): equivariance of the degree-1 images, detected with
    // the metric pairing against the coordinate frame.
    let mut rho_equivariant = AxiomCheck::ok();
    'rq: for i in 0..dim_g {
        for j in 0..dim_a {
            let acted = b.poisson(&a.phi[i], &a.rho_a[j]);
            let expect = a.rho_of(&d.tau_apply(&basis_vec(dim_g, i), &basis_vec(dim_a, j)));
            let diff = &acted - &expect;
            for e in &sections {
                match metric_pairing(s, &diff, e) {
                    Ok(p) if p.is_zero() => {}
                    _ => {
                        rho_equivariant.record(format!(
                            "phi(u_{}) . rho(a_{}) is not rho(tau(u_{}) a_{})",
                            i + 1,
                            j + 1,
                            i + 1,
                            j + 1
                        ));
                        break 'rq;
                    }
                }
            }
        }
    }

    // Classical (c): Lie derivative along the symbol vector field.
    let mut mu_equivariant = AxiomCheck::ok();
    'mq: for i in 0..dim_g {
        let symbol: Vec<GradedPoly> =
            functions.iter().map(|x| b.poisson(&a.phi[i], x)).collect();
        for l in 0..dim_h {
            let mut lie = GradedPoly::zero(chart);
            for (k, sk) in symbol.iter().enumerate() {
                lie = &lie + &(sk * &a.mu_star[l].partial_derivative(Gen::X(k)));
            }
            let expect = a.mu_of(&d.lambda_apply(&basis_vec(dim_g, i), &basis_vec(dim_h, l)));
            if lie != expect {
                mu_equivariant.record(format!(
                    "symbol of phi(u_{}) applied to mu*(h_{}) gives {}, expected {}",
                    i + 1,
                    l + 1,
                    lie,
                    expect
                ));
                break 'mq;
            }
        }
    }

    // Classical (d): the metric pairing realizes mu* of the symmetric
    // pairing.
    let mut pairing_matches_varpi = AxiomCheck::ok();
    'pv: for i in 0..dim_a {
        for j in i..dim_a {
            let lhs = match metric_pairing(s, &a.rho_a[i], &a.rho_a[j]) {
                Ok(p) => p,
                Err(_) => {
                    pairing_matches_varpi
                        .record(format!("rho(a_{}) is not a section", i + 1));
                    break 'pv;
                }
            };
            let rhs = a.mu_of(&d.varpi()[i][j]);
            if lhs != rhs {
                pairing_matches_varpi.record(format!(
                    "<rho a_{}, rho a_{}> = {} but mu*(varpi) = {}",
                    i + 1,
                    j + 1,
                    lhs,
                    rhs
                ));
                break 'pv;
            }
        }
    }

    let classical = phi_morphism.pass
        && rho_equivariant.pass
        && mu_equivariant.pass
        && pairing_matches_varpi.pass;
    let verdicts_agree = symbolic.pass == classical;

    ComomentReport {
        symbolic_morphism: symbolic,
        phi_morphism,
        rho_equivariant,
        mu_equivariant,
        pairing_matches_varpi,
        verdicts_agree,
    }
}

/// Report of [`validate_chain`]: the comoment map intertwines the algebra
/// differential with `{Theta, .}`, against the classical conditions.
#[derive(Debug, Clone)]
pub struct ChainReport {
    /// `{Theta, image(xi)} = image(delta xi)` on every basis element.
    pub symbolic_chain: AxiomCheck,
    /// The degree-1 image of `delta h` is the hamiltonian lift of `mu* h`.
    pub rho_delta_h: AxiomCheck,
    /// The degree-2 image of `delta a` acts as the adjoint of `rho(a)`.
    pub phi_delta_a: AxiomCheck,
    /// Each degree-2 image is an infinitesimal bracket automorphism.
    pub phi_automorphism: AxiomCheck,
    pub verdicts_agree: bool,
}

impl ChainReport {
    pub fn all_pass(&self) -> bool {
        self.symbolic_chain.pass
            && self.rho_delta_h.pass
            && self.phi_delta_a.pass
            && self.phi_automorphism.pass
            && self.verdicts_agree
    }

    pub fn first_failure(&self) -> Option<&str> {
        [&self.symbolic_chain, &self.rho_delta_h, &self.phi_delta_a, &self.phi_automorphism]
            .into_iter()
            .find(|c| !c.pass)
            .and_then(|c| c.witness.as_deref())
    }
}

/// Checks that the comoment map is a chain map for `{Theta, .}` on basis
/// elements, and cross-checks against the classical formulation: the
/// moment component feeds the hamiltonian lift, the section component
/// feeds the adjoint action, and the degree-2 images act as bracket
/// automorphisms.  Sections with linear coefficients are enough to
/// separate the degree-3 obstruction, so those are the test vectors.
pub fn validate_chain(a: &HamAction) -> ChainReport {
    let s = &a.scenario;
    let b = s.bracket();
    let chart = s.chart();
    let d = &a.dgla;
    let theta = s.theta();
    let dim_g = d.g().dim();
    let dim_a = d.dim_a();
    let dim_h = d.dim_h();

    let mut symbolic = AxiomCheck::ok();
    for l in 0..dim_h {
        let lhs = b.poisson(theta, &a.mu_star[l]);
        let rhs = a.rho_of(&d.delta_h_a().col(l));
        if lhs != rhs {
            symbolic.record(format!("{{Theta, mu* h_{}}} differs from rho(delta h)", l + 1));
        }
    }
    for j in 0..dim_a {
        let lhs = b.poisson(theta, &a.rho_a[j]);
        let rhs = a.phi_of(&d.delta_a_g().col(j));
        if lhs != rhs {
            symbolic.record(format!("{{Theta, rho a_{}}} differs from phi(delta a)", j + 1));
        }
    }
    for i in 0..dim_g {
        let res = b.poisson(theta, &a.phi[i]);
        if !res.is_zero() {
            symbolic.record(format!("{{Theta, phi u_{}}} = {}", i + 1, res));
        }
    }

    // Classical (a): rho(delta h) is the hamiltonian lift of mu* h.
    let mut rho_delta_h = AxiomCheck::ok();
    for l in 0..dim_h {
        let lift = b.poisson(theta, &a.mu_star[l]);
        let expect = a.rho_of(&d.delta_h_a().col(l));
        if lift != expect {
            rho_delta_h.record(format!(
                "rho(delta h_{}) = {} but the lift of mu* h_{} is {}",
                l + 1,
                expect,
                l + 1,
                lift
            ));
        }
    }

    // Classical (b): phi(delta a) acts as the derived bracket with rho(a),
    // verified on every chart generator.
    let sections = coordinate_sections(chart);
    let functions = coordinate_functions(chart);
    let mut phi_delta_a = AxiomCheck::ok();
    'da: for j in 0..dim_a {
        let phi_da = a.phi_of(&d.delta_a_g().col(j));
        let rho_j = match SectionExpr::new(a.rho_a[j].clone()) {
            Ok(e) => e,
            Err(_) => {
                phi_delta_a.record(format!("rho(a_{}) is not a section", j + 1));
                break 'da;
            }
        };
        for e in &sections {
            let lhs = b.poisson(&phi_da, e);
            let rhs = s.derived_bracket(&rho_j, &SectionExpr::new(e.clone()).unwrap());
            if lhs != *rhs.poly() {
                phi_delta_a.record(format!(
                    "phi(delta a_{}) and [[rho a_{}, .]] differ on {}",
                    j + 1,
                    j + 1,
                    e
                ));
                break 'da;
            }
        }
        for x in &functions {
            let lhs = b.poisson(&phi_da, x);
            let rhs = match s.anchor_apply(&rho_j, x) {
                Ok(p) => p,
                Err(_) => {
                    phi_delta_a.record(format!("anchor of rho(a_{}) undefined", j + 1));
                    break 'da;
                }
            };
            if lhs != rhs {
                phi_delta_a.record(format!(
                    "phi(delta a_{}) and the anchor of rho a_{} differ on {}",
                    j + 1,
                    j + 1,
                    x
                ));
                break 'da;
            }
        }
    }

    // Classical (c): each phi(u) is a derivation of the derived bracket.
    // Constant sections alone cannot see the momentum components of the
    // obstruction, so coordinate-weighted sections join the test set.
    let mut enriched: Vec<GradedPoly> = sections.clone();
    for e in &sections {
        for x in &functions {
            enriched.push(x * e);
        }
    }
    let mut phi_automorphism = AxiomCheck::ok();
    'au: for i in 0..dim_g {
        for w1 in &enriched {
            let s1 = SectionExpr::new(w1.clone()).unwrap();
            for w2 in &sections {
                let s2 = SectionExpr::new(w2.clone()).unwrap();
                let acted = b.poisson(&a.phi[i], s.derived_bracket(&s1, &s2).poly());
                let lhs1 = SectionExpr::new(b.poisson(&a.phi[i], w1)).unwrap();
                let lhs2 = SectionExpr::new(b.poisson(&a.phi[i], w2)).unwrap();
                let leibniz = &s.derived_bracket(&lhs1, &s2).into_poly()
                    + &s.derived_bracket(&s1, &lhs2).into_poly();
                if acted != leibniz {
                    phi_automorphism.record(format!(
                        "phi(u_{}) fails the bracket derivation law on ({}, {})",
                        i + 1,
                        w1,
                        w2
                    ));
                    break 'au;
                }
            }
        }
    }

    let classical = rho_delta_h.pass && phi_delta_a.pass && phi_automorphism.pass;
    let verdicts_agree = symbolic.pass == classical;

    ChainReport {
        symbolic_chain: symbolic,
        rho_delta_h,
        phi_delta_a,
        phi_automorphism,
        verdicts_agree,
    }
}

/// Report of [`regular_zero`]: the three regularity conditions at the
/// zero level of the moment map.
#[derive(Debug, Clone)]
pub struct RegularZeroReport {
    /// The moment differential has full rank along the zero level.
    pub mu_regular: AxiomCheck,
    /// The degree-1 images are fiberwise independent there.
    pub rho_injective: AxiomCheck,
    /// The symbol vector fields are fiberwise independent there (a
    /// locally free action).
    pub locally_free: AxiomCheck,
    /// Number of zero-level sample points used.
    pub samples: usize,
    /// All three matrices were constant, so the ranks hold everywhere.
    pub constant_certificate: bool,
}

impl RegularZeroReport {
    pub fn all_pass(&self) -> bool {
        self.mu_regular.pass && self.rho_injective.pass && self.locally_free.pass
    }
}

/// Coordinates that occur in any of the given degree-0 polynomials.
fn mu_support(chart: &Arc<Chart>, mu_star: &[GradedPoly]) -> Vec<usize> {
    (0..chart.n_x())
        .filter(|&k| mu_star.iter().any(|m| !m.avoids(&[Gen::X(k)])))
        .collect()
}

/// Exact sample points on the common zero set of the moment components:
/// candidates with the supporting coordinates zeroed, filtered through
/// exact evaluation.
fn zero_level_samples(
    chart: &Arc<Chart>,
    mu_star: &[GradedPoly],
    seed: u64,
    extra: usize,
) -> Result<Vec<Vec<Q>>, MomentError> {
    let support = mu_support(chart, mu_star);
    let unit = Monomial::unit(chart);
    let points: Vec<Vec<Q>> = sample_points_on(chart.n_x(), &support, seed, extra)
        .into_iter()
        .filter(|pt| mu_star.iter().all(|m| m.eval_x(pt).coeff(&unit).is_zero()))
        .collect();
    if points.is_empty() {
        return Err(MomentError::SamplingDegeneracy(
            "no sample points found on the zero level of the moment map".into(),
        ));
    }
    Ok(points)
}

/// Evaluates a polynomial matrix at a point; entries must be degree 0.
fn eval_matrix(rows: &[Vec<GradedPoly>], chart: &Arc<Chart>, pt: &[Q]) -> Mat {
    let unit = Monomial::unit(chart);
    let mut m = Mat::zeros(rows.len(), rows.first().map_or(0, |r| r.len()));
    for (i, row) in rows.iter().enumerate() {
        for (j, p) in row.iter().enumerate() {
            m.set(i, j, p.eval_x(pt).coeff(&unit));
        }
    }
    m
}

/// Checks the regularity of the zero level: full rank of the moment
/// differential, fiberwise independence of the degree-1 images, and
/// fiberwise independence of the action symbols, all exactly at sampled
/// zero-level points (a single symbolic certificate when the matrices
/// are constant).
pub fn regular_zero(a: &HamAction, seed: u64, extra: usize) -> Result<RegularZeroReport, MomentError> {
    let s = &a.scenario;
    let b = s.bracket();
    let chart = s.chart();
    let d = &a.dgla;
    let points = zero_level_samples(chart, &a.mu_star, seed, extra)?;

    // Rows of the three matrices as degree-0 polynomials.
    let jacobian: Vec<Vec<GradedPoly>> = a
        .mu_star
        .iter()
        .map(|m| (0..chart.n_x()).map(|k| m.partial_derivative(Gen::X(k))).collect())
        .collect();
    let rho_rows: Vec<Vec<GradedPoly>> = (0..chart.n_e())
        .map(|mu| {
            a.rho_a
                .iter()
                .map(|r| r.e_components().map(|c| c[mu].clone()))
                .collect::<Result<_, _>>()
        })
        .collect::<Result<_, _>>()?;
    let symbol_rows: Vec<Vec<GradedPoly>> = (0..chart.n_x())
        .map(|k| {
            let xk = GradedPoly::generator(chart, Gen::X(k));
            a.phi.iter().map(|p| b.poisson(p, &xk)).collect()
        })
        .collect();

    let constant = |rows: &[Vec<GradedPoly>]| {
        rows.iter().all(|r| r.iter().all(|p| p.x_degree() == 0))
    };
    let all_constant =
        constant(&jacobian) && constant(&rho_rows) && constant(&symbol_rows);

    let rank_check = |rows: &[Vec<GradedPoly>], want: usize, label: &str| -> AxiomCheck {
        if want == 0 {
            return AxiomCheck::ok();
        }
        let pts: &[Vec<Q>] =
            if constant(rows) { &points[..1] } else { &points[..] };
        for pt in pts {
            let m = eval_matrix(rows, chart, pt);
            let r = m.rank();
            if r != want {
                return AxiomCheck::fail(format!(
                    "{label} has rank {r} (expected {want}) at {}",
                    fmt_vec(pt)
                ));
            }
        }
        AxiomCheck::ok()
    };

    let mu_regular = rank_check(&jacobian, d.dim_h(), "the moment differential");
    let rho_injective = rank_check(&rho_rows, d.dim_a(), "the section map");
    let locally_free = rank_check(&symbol_rows, d.g().dim(), "the symbol map");

    Ok(RegularZeroReport {
        mu_regular,
        rho_injective,
        locally_free,
        samples: points.len(),
        constant_certificate: all_constant,
    })
}

/// Derives classical coisotropic data from the zero level of a
/// hamiltonian action: the locus drops the coordinates cut out by the
/// moment components, the isotropic frame is the image of the `a`-basis,
/// the leaf directions are the action symbols, and the flat frame
/// collects constant invariant sections orthogonal to the frame.
///
/// The supported input class keeps the construction exact: each moment
/// component must be a nonzero multiple of a coordinate, and the action
/// symbols must be constant along the locus and span coordinate
/// directions.
pub fn zero_level_data(a: &HamAction, seed: u64) -> Result<GeometricCoisoData, MomentError> {
    let s = &a.scenario;
    let b = s.bracket();
    let chart = s.chart();
    let d = &a.dgla;

    // Locus coordinates from the moment components.
    let mut drop_x = Vec::new();
    for (l, m) in a.mu_star.iter().enumerate() {
        let coord = single_coordinate(chart, m).ok_or_else(|| {
            MomentError::Unsupported(format!(
                "moment component {} is not a multiple of a single coordinate: {}",
                l + 1,
                m
            ))
        })?;
        if drop_x.contains(&coord) {
            return Err(MomentError::Unsupported(format!(
                "moment components share the coordinate x{}",
                coord + 1
            )));
        }
        drop_x.push(coord);
    }
    drop_x.sort_unstable();

    // Isotropic frame: images of the a-basis.
    let k_frame: Vec<SectionExpr> = a
        .rho_a
        .iter()
        .map(|r| SectionExpr::new(r.clone()))
        .collect::<Result<_, _>>()?;

    // Leaf directions: the action symbols restricted to the locus must be
    // constant and span coordinate directions.
    let mut symbol = Mat::zeros(chart.n_x(), d.g().dim());
    let unit = Monomial::unit(chart);
    for (i, p) in a.phi.iter().enumerate() {
        for k in 0..chart.n_x() {
            let entry = b.poisson(p, &GradedPoly::generator(chart, Gen::X(k))).kill_x(&drop_x);
            if entry.x_degree() > 0 {
                return Err(MomentError::Unsupported(format!(
                    "the symbol of phi(u_{}) is not constant along the locus",
                    i + 1
                )));
            }
            symbol.set(k, i, entry.coeff(&unit));
        }
    }
    let f_index: Vec<usize> =
        (0..chart.n_x()).filter(|&k| !symbol.row(k).iter().all(|c| c.is_zero())).collect();
    if f_index.len() != d.g().dim() {
        return Err(MomentError::FrameDegeneracy(format!(
            "action symbols span {} coordinate directions for a {}-dimensional algebra",
            f_index.len(),
            d.g().dim()
        )));
    }
    let restricted: Vec<Vec<Q>> = f_index.iter().map(|&k| symbol.row(k)).collect();
    if Subspace::from_vectors(d.g().dim().max(1), &restricted).dim() != d.g().dim() {
        return Err(MomentError::FrameDegeneracy(
            "action symbols are dependent along the locus".into(),
        ));
    }

    // Flat frame: constant sections orthogonal to the frame over the
    // locus and invariant under the action modulo the frame.
    let n_e = chart.n_e();
    let metric = b.metric();
    let k_killed: Vec<GradedPoly> =
        k_frame.iter().map(|k| k.poly().kill_x(&drop_x)).collect();
    let on_locus: Vec<usize> = (0..chart.n_x()).filter(|k| !drop_x.contains(k)).collect();

    // Orthogonality: linear constraints on a constant coefficient vector.
    let mut constraints: Vec<Vec<Q>> = Vec::new();
    for k in &k_killed {
        let comps = k.e_components()?;
        // <w, k> = sum_mu w_mu g^{mu nu} k_nu as a polynomial in x; every
        // x-monomial coefficient is one linear constraint.
        let mut coeff_polys: Vec<GradedPoly> = Vec::with_capacity(n_e);
        for mu in 0..n_e {
            let mut acc = GradedPoly::zero(chart);
            for nu in 0..n_e {
                let g = metric.at(mu, nu);
                if !g.is_zero() {
                    acc = &acc + &comps[nu].scale(g);
                }
            }
            coeff_polys.push(acc);
        }
        let mut monos = std::collections::BTreeSet::new();
        for p in &coeff_polys {
            for (m, _) in p.terms() {
                monos.insert(m.clone());
            }
        }
        for m in monos {
            constraints.push(coeff_polys.iter().map(|p| p.coeff(&m)).collect());
        }
    }
    let ortho = if constraints.is_empty() {
        Subspace::full(n_e)
    } else {
        Subspace::from_columns(n_e, &Mat::from_rows(constraints).kernel())
    };

    // Invariance: residual of the acted section modulo the span of the
    // frame over the locus, as further linear constraints.
    let frame_deg = k_killed.iter().map(|p| p.x_degree()).max().unwrap_or(0) as u32;
    let mut candidates: Vec<Vec<Q>> = Vec::new();
    for w in ortho.basis_vectors() {
        let poly = poly_from_constant_e(chart, &w);
        let invariant = a.phi.iter().all(|p| {
            let acted = b.poisson(p, &poly).kill_x(&drop_x);
            let frames: Vec<SpanFrame<'_>> = k_killed
                .iter()
                .map(|kp| SpanFrame {
                    poly: kp,
                    allowed_x: on_locus.clone(),
                    max_deg: acted.x_degree() as u32 + frame_deg + 1,
                })
                .collect();
            in_module_span(&acted, &frames).is_some()
        });
        if invariant {
            candidates.push(w);
        }
    }

    // Greedy completion: keep candidates independent of the frame at
    // every sampled locus point.
    let expected = n_e as isize - 2 * d.dim_a() as isize;
    if expected < 0 {
        return Err(MomentError::FrameDegeneracy(
            "the isotropic frame exceeds half the fiber rank".into(),
        ));
    }
    let points = sample_points_on(chart.n_x(), &drop_x, seed, 5);
    let k_vectors: Vec<Vec<Vec<Q>>> = points
        .iter()
        .map(|pt| {
            k_killed
                .iter()
                .map(|kp| {
                    kp.e_components()
                        .map(|c| c.iter().map(|p| p.eval_x(pt).coeff(&unit)).collect())
                })
                .collect::<Result<_, _>>()
        })
        .collect::<Result<_, _>>()?;
    let mut flat_vecs: Vec<Vec<Q>> = Vec::new();
    for w in candidates {
        if flat_vecs.len() == expected as usize {
            break;
        }
        let ok = points.iter().enumerate().all(|(pi, _)| {
            let mut all = k_vectors[pi].clone();
            all.extend(flat_vecs.iter().cloned());
            all.push(w.clone());
            Subspace::from_vectors(n_e, &all).dim() == all.len()
        });
        if ok {
            flat_vecs.push(w);
        }
    }
    if flat_vecs.len() != expected as usize {
        return Err(MomentError::FrameDegeneracy(format!(
            "found {} flat sections, expected {}",
            flat_vecs.len(),
            expected
        )));
    }
    let flat_frame: Vec<SectionExpr> = flat_vecs
        .iter()
        .map(|w| SectionExpr::new(poly_from_constant_e(chart, w)))
        .collect::<Result<_, _>>()?;

    let data = GeometricCoisoData { drop_x, k_frame, f_index, flat_frame };
    data.validate(b, seed)?;
    Ok(data)
}

/// Index of the coordinate when the polynomial is a nonzero multiple of a
/// single one.
fn single_coordinate(chart: &Arc<Chart>, m: &GradedPoly) -> Option<usize> {
    if m.is_zero() || m.num_terms() != 1 || m.x_degree() != 1 {
        return None;
    }
    (0..chart.n_x()).find(|&k| !m.avoids(&[Gen::X(k)]))
}

fn poly_from_constant_e(chart: &Arc<Chart>, w: &[Q]) -> GradedPoly {
    let mut out = GradedPoly::zero(chart);
    for (mu, c) in w.iter().enumerate() {
        if !c.is_zero() {
            out = &out + &GradedPoly::generator(chart, Gen::E(mu)).scale(c);
        }
    }
    out
}

/// Builds a hamiltonian action out of reduction data: a bracket-preserving
/// isotropic lift of a `g`-action plus an equivariant moment for a
/// `g`-module `h`.  The algebra is the hemisemidirect product, the
/// degree-2 images are the hamiltonian lifts of the degree-1 ones, and
/// the moment components feed the remaining degree-1 images.
///
/// The scenario must have left-central hamiltonian lifts of functions,
/// which is checked on the coordinate basis.
pub fn from_reduction_data(
    scenario: &CourantScenario,
    g: LieAlgebra,
    psi: &[GradedPoly],
    h_action: &[Mat],
    mu_star: &[GradedPoly],
) -> Result<HamAction, MomentError> {
    let b = scenario.bracket();
    let chart = scenario.chart();
    let theta = scenario.theta();
    let dim_g = g.dim();
    let dim_h = mu_star.len();
    if psi.len() != dim_g {
        return Err(MomentError::InvalidData(format!(
            "the lift must list one section per g generator ({dim_g}), got {}",
            psi.len()
        )));
    }
    for p in psi {
        if p.chart() != chart || !p.is_homogeneous_of(1) {
            return Err(MomentError::InvalidData(
                "lift images must be degree-1 elements of the scenario chart".into(),
            ));
        }
    }
    for m in mu_star {
        if m.chart() != chart || !m.is_homogeneous_of(0) {
            return Err(MomentError::InvalidData(
                "moment components must be degree-0 elements of the scenario chart".into(),
            ));
        }
    }

    // Left-centrality of hamiltonian lifts, on the coordinate basis.
    for k in 0..chart.n_x() {
        let xk = GradedPoly::generator(chart, Gen::X(k));
        let res = b.poisson(theta, &b.poisson(theta, &xk));
        if !res.is_zero() {
            return Err(MomentError::NotLeftCentral(format!(
                "the lift of x{} generates a nonzero adjoint action: {}",
                k + 1,
                res
            )));
        }
    }

    let sections: Vec<SectionExpr> =
        psi.iter().map(|p| SectionExpr::new(p.clone())).collect::<Result<_, _>>()?;

    // Bracket preservation and isotropy of the lift.
    for i in 0..dim_g {
        for j in 0..dim_g {
            let lhs = scenario.derived_bracket(&sections[i], &sections[j]);
            let rhs = combine(chart, psi, &g.structure_constants()[i][j]);
            if *lhs.poly() != rhs {
                return Err(MomentError::ActionInvalid(format!(
                    "the lift does not preserve brackets on (u_{}, u_{}): got {}, expected {}",
                    i + 1,
                    j + 1,
                    lhs.poly(),
                    rhs
                )));
            }
        }
    }
    for i in 0..dim_g {
        for j in i..dim_g {
            let pair = scenario.pairing(&sections[i], &sections[j]);
            if !pair.is_zero() {
                return Err(MomentError::ActionInvalid(format!(
                    "the lift is not isotropic: <psi u_{}, psi u_{}> = {}",
                    i + 1,
                    j + 1,
                    pair
                )));
            }
        }
    }

    // Equivariance of the moment for the induced base action.
    for (i, e) in sections.iter().enumerate() {
        for (l, m) in mu_star.iter().enumerate() {
            let lhs = scenario.anchor_apply(e, m)?;
            let rhs = {
                let coeffs: Vec<Q> = (0..dim_h).map(|r| h_action[i].at(r, l).clone()).collect();
                combine(chart, mu_star, &coeffs)
            };
            if lhs != rhs {
                return Err(MomentError::ActionInvalid(format!(
                    "the moment is not equivariant on (u_{}, h_{}): action gives {}, module expects {}",
                    i + 1,
                    l + 1,
                    lhs,
                    rhs
                )));
            }
        }
    }

    let dgla = DGLA2Data::hemisemidirect(g, dim_h, h_action)?;
    let phi: Vec<GradedPoly> = psi.iter().map(|p| b.poisson(theta, p)).collect();
    let mut rho_a = psi.to_vec();
    for m in mu_star {
        rho_a.push(b.poisson(theta, m));
    }
    let action = HamAction::new(scenario.clone(), dgla, phi, rho_a, mu_star.to_vec())?;

    // The construction is guaranteed to produce a valid comoment chain;
    // anything else is an engine bug.
    let com = validate_comoment(&action);
    if !com.all_pass() {
        return Err(MomentError::Internal(format!(
            "reduction data produced an invalid comoment map: {}",
            com.first_failure().unwrap_or("verdicts disagree")
        )));
    }
    let ch = validate_chain(&action);
    if !ch.all_pass() {
        return Err(MomentError::Internal(format!(
            "reduction data produced a broken chain map: {}",
            ch.first_failure().unwrap_or("verdicts disagree")
        )));
    }
    Ok(action)
}

/// Report of [`extended_action_check`].
#[derive(Debug, Clone)]
pub struct ExtendedActionReport {
    /// The degree-1 map preserves brackets on basis pairs.
    pub bracket_preserving: AxiomCheck,
    /// The kernel images are hamiltonian lifts of the moment components.
    pub h_compatible: AxiomCheck,
    /// `mu*` of the symmetrized bracket equals the pairing (the isotropy
    /// condition in its polynomial form).
    pub isotropy_condition: AxiomCheck,
    /// The frame pairing vanishes at sampled zero-level points.
    pub isotropic_on_zero: AxiomCheck,
    /// The difference of the two sides has vanishing differential.
    pub differential_closed: AxiomCheck,
    /// The polynomial form holds exactly when the sampled form holds and
    /// the difference is closed (connectedness of the chart domain).
    pub equivalence_agrees: bool,
}

impl ExtendedActionReport {
    pub fn all_pass(&self) -> bool {
        self.bracket_preserving.pass
            && self.h_compatible.pass
            && self.isotropy_condition.pass
            && self.isotropic_on_zero.pass
            && self.differential_closed.pass
            && self.equivalence_agrees
    }
}

/// Checks an extended action of an exact Courant algebra on an exact
/// scenario: bracket preservation of the degree-1 map, compatibility of
/// the kernel images with the moment components, and the isotropy
/// condition in both its polynomial and its sampled zero-level form,
/// asserting their equivalence.
pub fn extended_action_check(
    scenario: &CourantScenario,
    c: &CourantAlgebraData,
    psi: &[GradedPoly],
    mu_star: &[GradedPoly],
    seed: u64,
) -> Result<ExtendedActionReport, MomentError> {
    match scenario.kind() {
        ScenarioKind::Standard { .. } | ScenarioKind::Twisted { .. } => {}
        _ => {
            return Err(MomentError::Unsupported(
                "extended actions require an exact scenario".into(),
            ))
        }
    }
    let b = scenario.bracket();
    let chart = scenario.chart();
    let kernel = c.kernel();
    if psi.len() != c.dim_a() {
        return Err(MomentError::InvalidData(format!(
            "the action must list one section per a generator ({}), got {}",
            c.dim_a(),
            psi.len()
        )));
    }
    if mu_star.len() != kernel.cols {
        return Err(MomentError::InvalidData(format!(
            "the moment must list one component per kernel element ({}), got {}",
            kernel.cols,
            mu_star.len()
        )));
    }
    for p in psi {
        if p.chart() != chart || !p.is_homogeneous_of(1) {
            return Err(MomentError::InvalidData(
                "action images must be degree-1 elements of the scenario chart".into(),
            ));
        }
    }
    for m in mu_star {
        if m.chart() != chart || !m.is_homogeneous_of(0) {
            return Err(MomentError::InvalidData(
                "moment components must be degree-0 elements of the scenario chart".into(),
            ));
        }
    }

    let sections: Vec<SectionExpr> =
        psi.iter().map(|p| SectionExpr::new(p.clone())).collect::<Result<_, _>>()?;

    let mut bracket_preserving = AxiomCheck::ok();
    'bp: for i in 0..c.dim_a() {
        for j in 0..c.dim_a() {
            let lhs = scenario.derived_bracket(&sections[i], &sections[j]);
            let rhs = combine(chart, psi, &c.bracket_vec(&basis_vec(c.dim_a(), i), &basis_vec(c.dim_a(), j)));
            if *lhs.poly() != rhs {
                bracket_preserving.record(format!(
                    "[[Psi a_{}, Psi a_{}]] = {} but Psi of the bracket is {}",
                    i + 1,
                    j + 1,
                    lhs.poly(),
                    rhs
                ));
                break 'bp;
            }
        }
    }

    let mut h_compatible = AxiomCheck::ok();
    for l in 0..kernel.cols {
        let img = combine(chart, psi, &kernel.col(l));
        let lift = b.poisson(scenario.theta(), &mu_star[l]);
        if img != lift {
            h_compatible.record(format!(
                "the kernel image {} differs from the lift {} of its moment component",
                img, lift
            ));
        }
    }

    let mut isotropy_condition = AxiomCheck::ok();
    let mut diffs: Vec<GradedPoly> = Vec::new();
    'ic: for i in 0..c.dim_a() {
        for j in i..c.dim_a() {
            let ei = basis_vec(c.dim_a(), i);
            let ej = basis_vec(c.dim_a(), j);
            let sym = vec_add(&c.bracket_vec(&ei, &ej), &c.bracket_vec(&ej, &ei));
            if !vec_is_zero(&c.p().mul_vec(&sym)) {
                isotropy_condition.record(format!(
                    "the symmetrized bracket of (a_{}, a_{}) escapes the kernel of p",
                    i + 1,
                    j + 1
                ));
                break 'ic;
            }
            let Some(coords) = kernel.solve(&sym) else {
                isotropy_condition.record(format!(
                    "the symmetrized bracket of (a_{}, a_{}) is outside the kernel span",
                    i + 1,
                    j + 1
                ));
                break 'ic;
            };
            let lhs = combine(chart, mu_star, &coords);
            let rhs = scenario.pairing(&sections[i], &sections[j]);
            diffs.push(&lhs - &rhs);
            if lhs != rhs {
                isotropy_condition.record(format!(
                    "mu* of the symmetrized bracket of (a_{}, a_{}) is {} but the pairing is {}",
                    i + 1,
                    j + 1,
                    lhs,
                    rhs
                ));
            }
        }
    }

    let mut isotropic_on_zero = AxiomCheck::ok();
    let points = zero_level_samples(chart, mu_star, seed, 3)?;
    let unit = Monomial::unit(chart);
    'iz: for i in 0..c.dim_a() {
        for j in i..c.dim_a() {
            let pair = scenario.pairing(&sections[i], &sections[j]);
            for pt in &points {
                if !pair.eval_x(pt).coeff(&unit).is_zero() {
                    isotropic_on_zero.record(format!(
                        "<Psi a_{}, Psi a_{}> is nonzero at {}",
                        i + 1,
                        j + 1,
                        fmt_vec(pt)
                    ));
                    break 'iz;
                }
            }
        }
    }

    let mut differential_closed = AxiomCheck::ok();
    'dc: for d in &diffs {
        for k in 0..chart.n_x() {
            if !d.partial_derivative(Gen::X(k)).is_zero() {
                differential_closed.record(format!(
                    "the defect {} has nonvanishing derivative in x{}",
                    d,
                    k + 1
                ));
                break 'dc;
            }
        }
    }

    let equivalence_agrees =
        isotropy_condition.pass == (isotropic_on_zero.pass && differential_closed.pass);

    Ok(ExtendedActionReport {
        bracket_preserving,
        h_compatible,
        isotropy_condition,
        isotropic_on_zero,
        differential_closed,
        equivalence_agrees,
    })
}

/// Options for [`ham_reduce`].
#[derive(Debug, Clone, Default)]
pub struct HamReduceOptions {
    /// Reduce this integrable quadratic structure alongside the scenario.
    pub j: Option<AtiyahExpr>,
    /// Push this constant lagrangian frame through the reduction.
    pub l_frame: Option<Vec<SectionExpr>>,
    /// Seed for zero-level and locus sampling.
    pub seed: u64,
}

/// Exactness of the reduced algebroid per the rank criteria: the
/// dimension balance and the anchor-intersection condition, evaluated at
/// sampled zero-level points, plus the stronger sufficient pair.
#[derive(Debug, Clone)]
pub struct ExactnessReport {
    /// The scenario being reduced is itself exact (standard or twisted).
    pub upstream_exact: bool,
    /// `dim N - rank rho(K-perp) = rank F - rank rho(K)`.
    pub rank_balance: bool,
    /// `rho(K-perp) meets the leaves exactly in rho(K)`.
    pub anchor_intersection: bool,
    /// `rho(K-perp)` spans the tangent space of the locus.
    pub anchor_spans_locus: bool,
    /// `rho(K)` equals the leaf distribution.
    pub anchor_matches_leaves: bool,
}

impl ExactnessReport {
    /// The reduced algebroid is exact.
    pub fn exact(&self) -> bool {
        self.upstream_exact && self.rank_balance && self.anchor_intersection
    }
}

/// Result of the full hamiltonian reduction pipeline.
#[derive(Debug)]
pub struct HamReduction {
    pub data: GeometricCoisoData,
    pub ideal: CoisotropicIdeal,
    pub reduction: Reduction,
    pub quadratic: Option<QuadraticReduction>,
    pub dirac: Option<DiracReduction>,
    pub exactness: ExactnessReport,
}

/// Marsden-Weinstein reduction of a scenario along a hamiltonian action:
/// validates the comoment chain and zero-level regularity, derives the
/// coisotropic data and its triangular ideal, requires the symbolic and
/// classical reducibility verdicts to agree, reduces, and optionally
/// carries a quadratic structure (checked for action invariance) or a
/// lagrangian frame (likewise) across.  The report includes the rank
/// criteria for exactness of the reduced algebroid.
pub fn ham_reduce(a: &HamAction, options: &HamReduceOptions) -> Result<HamReduction, MomentError> {
    let s = &a.scenario;
    let b = s.bracket();
    let seed = options.seed;

    let com = validate_comoment(a);
    if !com.all_pass() {
        return Err(MomentError::ActionInvalid(format!(
            "comoment validation failed: {}",
            com.first_failure().unwrap_or("verdicts disagree")
        )));
    }
    let ch = validate_chain(a);
    if !ch.all_pass() {
        return Err(MomentError::ActionInvalid(format!(
            "chain validation failed: {}",
            ch.first_failure().unwrap_or("verdicts disagree")
        )));
    }
    let rz = regular_zero(a, seed, 3)?;
    if !rz.all_pass() {
        let witness = [&rz.mu_regular, &rz.rho_injective, &rz.locally_free]
            .into_iter()
            .find(|c| !c.pass)
            .and_then(|c| c.witness.clone())
            .unwrap_or_default();
        return Err(MomentError::NotRegular(witness));
    }

    let data = zero_level_data(a, seed)?;
    let ideal = coiso::ideal_from_data(b, &data, seed)?;

    let symbolic = coiso::reducible_symbolic(s, &ideal);
    let classical = coiso::reducible_geometric(s, &data, seed)?;
    if symbolic != classical.all() {
        return Err(MomentError::Internal(format!(
            "reducibility routes disagree: symbolic {symbolic}, classical {classical:?}"
        )));
    }
    if !symbolic {
        return Err(MomentError::NotReducible(
            "the hamiltonian does not descend to the quotient".into(),
        ));
    }

    let reduction = coiso::reduce(s, &ideal)?;

    let quadratic = match &options.j {
        None => None,
        Some(j) => {
            for (i, p) in a.phi.iter().enumerate() {
                let moved = b.poisson(p, j.poly());
                if !ideal.contains(&moved) {
                    return Err(MomentError::ActionInvalid(format!(
                        "the quadratic structure is not invariant under phi(u_{}): residue {}",
                        i + 1,
                        ideal.normal_form(&moved)
                    )));
                }
            }
            let qr = coiso::reduce_quadratic(s, &data, j, &reduction)?;
            if !qr.preserves_k {
                return Err(MomentError::ActionInvalid(
                    "the quadratic structure does not preserve the isotropic frame".into(),
                ));
            }
            Some(qr)
        }
    };

    let dirac = match &options.l_frame {
        None => None,
        Some(frame) => {
            let max_deg = frame.iter().map(|l| l.poly().x_degree()).max().unwrap_or(0) as u32;
            let all_x: Vec<usize> = (0..s.chart().n_x()).collect();
            for (i, p) in a.phi.iter().enumerate() {
                for l in frame {
                    let moved = b.poisson(p, l.poly());
                    let frames: Vec<SpanFrame<'_>> = frame
                        .iter()
                        .map(|f| SpanFrame {
                            poly: f.poly(),
                            allowed_x: all_x.clone(),
                            max_deg: moved.x_degree() as u32 + max_deg + 1,
                        })
                        .collect();
                    if in_module_span(&moved, &frames).is_none() {
                        return Err(MomentError::ActionInvalid(format!(
                            "the lagrangian frame is not invariant under phi(u_{})",
                            i + 1
                        )));
                    }
                }
            }
            Some(coiso::reduce_dirac(s, &data, frame, &reduction, seed)?)
        }
    };

    let exactness = exactness_report(a, &data, seed)?;

    Ok(HamReduction { data, ideal, reduction, quadratic, dirac, exactness })
}

fn exactness_report(
    a: &HamAction,
    data: &GeometricCoisoData,
    seed: u64,
) -> Result<ExactnessReport, MomentError> {
    let s = &a.scenario;
    let chart = s.chart();
    let n_x = chart.n_x();
    let dim_n = n_x - data.drop_x.len();
    let unit = Monomial::unit(chart);
    let upstream_exact =
        matches!(s.kind(), ScenarioKind::Standard { .. } | ScenarioKind::Twisted { .. });

    let anchor_vec = |e: &SectionExpr, pt: &[Q]| -> Result<Vec<Q>, MomentError> {
        let mut v = Vec::with_capacity(n_x);
        for k in 0..n_x {
            let xk = GradedPoly::generator(chart, Gen::X(k));
            v.push(s.anchor_apply(e, &xk)?.eval_x(pt).coeff(&unit));
        }
        Ok(v)
    };

    let leaf_vectors: Vec<Vec<Q>> =
        data.f_index.iter().map(|&c| basis_vec(n_x, c)).collect();
    let leaves = Subspace::from_vectors(n_x, &leaf_vectors);
    let locus_vectors: Vec<Vec<Q>> = (0..n_x)
        .filter(|k| !data.drop_x.contains(k))
        .map(|k| basis_vec(n_x, k))
        .collect();
    let locus_tangent = Subspace::from_vectors(n_x, &locus_vectors);

    let mut rank_balance = true;
    let mut anchor_intersection = true;
    let mut anchor_spans_locus = true;
    let mut anchor_matches_leaves = true;
    for pt in sample_points_on(n_x, &data.drop_x, seed, 3) {
        let mut k_anchors = Vec::new();
        for e in &data.k_frame {
            k_anchors.push(anchor_vec(e, &pt)?);
        }
        let rho_k = Subspace::from_vectors(n_x, &k_anchors);
        let mut perp_anchors = k_anchors;
        for e in &data.flat_frame {
            perp_anchors.push(anchor_vec(e, &pt)?);
        }
        let rho_kperp = Subspace::from_vectors(n_x, &perp_anchors);
        let (balance, cap) = exactness_conditions(dim_n, &leaves, &rho_k, &rho_kperp);
        rank_balance &= balance;
        anchor_intersection &= cap;
        anchor_spans_locus &= rho_kperp == locus_tangent;
        anchor_matches_leaves &= rho_k == leaves;
    }

    Ok(ExactnessReport {
        upstream_exact,
        rank_balance,
        anchor_intersection,
        anchor_spans_locus,
        anchor_matches_leaves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::courant::{standard_theta, symplectic_j};
    use crate::graded::parse_expr;

    fn pe(chart: &Arc<Chart>, src: &str) -> GradedPoly {
        parse_expr(chart, src).unwrap()
    }

    fn section(chart: &Arc<Chart>, src: &str) -> SectionExpr {
        SectionExpr::new(pe(chart, src)).unwrap()
    }

    fn adjoint_action(g: &LieAlgebra) -> Vec<Mat> {
        (0..g.dim()).map(|k| g.adjoint(k)).collect()
    }

    fn const_e_vec(p: &GradedPoly) -> Vec<Q> {
        let unit = Monomial::unit(p.chart());
        p.e_components().unwrap().iter().map(|c| c.coeff(&unit)).collect()
    }

    /// The scaling action of `R` on the `x^2` axis of standard `R^2`:
    /// lift `x^2 xi_2`, moment `x^2`, module weight 1.
    fn scaling_action() -> HamAction {
        let s = standard_theta(2);
        let chart = s.chart().clone();
        from_reduction_data(
            &s,
            LieAlgebra::abelian(1),
            &[pe(&chart, "x2*xi2")],
            &[Mat::from_int_rows(&[&[1]])],
            &[pe(&chart, "x2")],
        )
        .unwrap()
    }

    #[test]
    fn lie_algebra_tables() {
        let g = LieAlgebra::so3();
        let e1 = basis_vec(3, 0);
        let e2 = basis_vec(3, 1);
        assert_eq!(g.bracket_vec(&e1, &e2), basis_vec(3, 2));
        assert_eq!(g.bracket_vec(&e2, &e1), vec_scale(&basis_vec(3, 2), &q(-1)));
        // ad(u_1): u_2 -> u_3, u_3 -> -u_2.
        let ad = g.adjoint(0);
        assert_eq!(*ad.at(2, 1), q(1));
        assert_eq!(*ad.at(1, 2), q(-1));
        assert_eq!(*ad.at(0, 0), q(0));
        let h = LieAlgebra::heisenberg3();
        assert_eq!(h.bracket_vec(&e1, &e2), basis_vec(3, 2));
        assert!(vec_is_zero(&h.bracket_vec(&e2, &basis_vec(3, 2))));
        let r2 = LieAlgebra::solvable2();
        assert_eq!(r2.bracket_vec(&basis_vec(2, 0), &basis_vec(2, 1)), basis_vec(2, 1));
        assert!(LieAlgebra::new(2, vec![vec![vec![q(0); 2]; 2]; 1]).is_err());
    }

    #[test]
    fn hemisemidirect_dgla_passes_all_axioms() {
        let g = LieAlgebra::so3();
        let d = DGLA2Data::hemisemidirect(g.clone(), 3, &adjoint_action(&g)).unwrap();
        let report = validate_dgla(&d);
        assert!(report.all_pass(), "{report:?}");
        assert!(d.exactness_witness().is_none());
    }

    #[test]
    fn differential_placement_matters() {
        // a = h = adjoint so(3), varpi = 0. Putting the identity on
        // h -> a satisfies every condition; putting it on a -> g breaks
        // only the lambda/varpi compatibility.
        let g = LieAlgebra::so3();
        let ad = adjoint_action(&g);
        let varpi = vec![vec![vec![q(0); 3]; 3]; 3];
        let incl = DGLA2Data::new(
            g.clone(),
            3,
            3,
            ad.clone(),
            ad.clone(),
            varpi.clone(),
            Mat::identity(3),
            Mat::zeros(3, 3),
        )
        .unwrap();
        assert!(validate_dgla(&incl).all_pass());

        let proj = DGLA2Data::new(
            g.clone(),
            3,
            3,
            ad.clone(),
            ad,
            varpi,
            Mat::zeros(3, 3),
            Mat::identity(3),
        )
        .unwrap();
        let report = validate_dgla(&proj);
        assert!(report.gla.all_pass());
        assert!(report.chain.pass);
        assert!(report.delta_equivariant.pass);
        assert!(report.varpi_delta.pass);
        assert!(!report.lambda_delta.pass, "{report:?}");
    }

    #[test]
    fn broken_jacobi_is_reported() {
        // sl(2)-like table with the sign of [h, f] flipped: the
        // jacobiator on (h, e, f) is 4h.
        let mut bracket = vec![vec![vec![q(0); 3]; 3]; 3];
        bracket[0][1][1] = q(2);
        bracket[1][0][1] = q(-2);
        bracket[0][2][2] = q(2);
        bracket[2][0][2] = q(-2);
        bracket[1][2][0] = q(1);
        bracket[2][1][0] = q(-1);
        let g = LieAlgebra::new(3, bracket).unwrap();
        let d = DGLA2Data::new(
            g,
            0,
            0,
            vec![Mat::zeros(0, 0); 3],
            vec![Mat::zeros(0, 0); 3],
            Vec::new(),
            Mat::zeros(0, 0),
            Mat::zeros(3, 0),
        )
        .unwrap();
        let report = validate_gla(&d);
        assert!(report.antisymmetry.pass);
        assert!(!report.jacobi.pass);
        let w = report.jacobi.witness.unwrap();
        assert!(w.contains("u_1, u_2, u_3"), "{w}");
    }

    #[test]
    fn hemisemidirect_rejects_non_modules() {
        let g = LieAlgebra::so3();
        let bad = vec![Mat::identity(3); 3];
        assert!(matches!(
            DGLA2Data::hemisemidirect(g.clone(), 3, &bad),
            Err(MomentError::InvalidData(_))
        ));
        assert!(matches!(hemisemidirect(g, 3, &bad), Err(MomentError::InvalidData(_))));
    }

    #[test]
    fn hemisemidirect_round_trips_literally() {
        let g = LieAlgebra::abelian(1);
        let action = vec![Mat::from_int_rows(&[&[1]])];
        let c = hemisemidirect(g.clone(), 1, &action).unwrap();
        assert_eq!(c.bracket_vec(&basis_vec(2, 0), &basis_vec(2, 1)), basis_vec(2, 1));
        assert!(vec_is_zero(&c.bracket_vec(&basis_vec(2, 1), &basis_vec(2, 0))));
        let report = validate_courant_algebra(&c);
        assert!(report.all_pass(), "{report:?}");

        let d = courant_algebra_to_dgla(&c).unwrap();
        assert_eq!(d, DGLA2Data::hemisemidirect(g.clone(), 1, &action).unwrap());
        assert_eq!(dgla_to_courant_algebra(&d).unwrap(), c);
        assert_eq!(
            dgla_to_courant_algebra(&DGLA2Data::hemisemidirect(g, 1, &action).unwrap()).unwrap(),
            c
        );
    }

    #[test]
    fn sampled_algebras_round_trip() {
        let mut sampler = Sampler::new(2024);
        for _ in 0..10 {
            let c = sample_exact_courant_algebra(&mut sampler, 12).unwrap();
            let report = validate_courant_algebra(&c);
            assert!(report.all_pass(), "{report:?}");
            let d = courant_algebra_to_dgla(&c).unwrap();
            assert!(d.exactness_witness().is_none());
            let dr = validate_dgla(&d);
            assert!(dr.all_pass(), "{dr:?}");
            assert_eq!(dgla_to_courant_algebra(&d).unwrap(), c);
        }
    }

    #[test]
    fn conversion_requires_exactness() {
        // Zero differential: a -> g is not surjective.
        let d = DGLA2Data::new(
            LieAlgebra::abelian(1),
            1,
            1,
            vec![Mat::zeros(1, 1)],
            vec![Mat::zeros(1, 1)],
            vec![vec![vec![q(0)]]],
            Mat::zeros(1, 1),
            Mat::zeros(1, 1),
        )
        .unwrap();
        assert!(matches!(dgla_to_courant_algebra(&d), Err(MomentError::NotExact(_))));

        // Kernel acting nontrivially on the left.
        let mut bracket = vec![vec![vec![q(0); 2]; 2]; 2];
        bracket[1][0][1] = q(1);
        let mut p = Mat::zeros(1, 2);
        p.set(0, 0, q(1));
        let c = CourantAlgebraData::new(LieAlgebra::abelian(1), 2, bracket, p).unwrap();
        let report = validate_courant_algebra(&c);
        assert!(!report.kernel_left_central.pass);
        assert!(matches!(courant_algebra_to_dgla(&c), Err(MomentError::NotExact(_))));
    }

    #[test]
    fn translation_action_validates() {
        let s = standard_theta(4);
        let chart = s.chart().clone();
        let a = from_reduction_data(
            &s,
            LieAlgebra::abelian(1),
            &[pe(&chart, "xi1")],
            &[Mat::zeros(1, 1)],
            &[pe(&chart, "x2")],
        )
        .unwrap();
        assert_eq!(a.phi(), &[pe(&chart, "p1")]);
        assert_eq!(a.rho_a(), &[pe(&chart, "xi1"), pe(&chart, "v2")]);
        let com = validate_comoment(&a);
        assert!(com.all_pass(), "{com:?}");
        let ch = validate_chain(&a);
        assert!(ch.all_pass(), "{ch:?}");
        let rz = regular_zero(&a, 5, 3).unwrap();
        assert!(rz.all_pass(), "{rz:?}");
        assert!(rz.constant_certificate);
    }

    #[test]
    fn translation_zero_level_data() {
        let s = standard_theta(4);
        let chart = s.chart().clone();
        let a = from_reduction_data(
            &s,
            LieAlgebra::abelian(1),
            &[pe(&chart, "xi1")],
            &[Mat::zeros(1, 1)],
            &[pe(&chart, "x2")],
        )
        .unwrap();
        let d = zero_level_data(&a, 5).unwrap();
        assert_eq!(d.drop_x, vec![1]);
        assert_eq!(d.f_index, vec![0]);
        assert_eq!(d.k_frame.len(), 2);
        assert_eq!(d.k_frame[0].poly(), &pe(&chart, "xi1"));
        assert_eq!(d.k_frame[1].poly(), &pe(&chart, "v2"));
        assert_eq!(d.flat_frame.len(), 4);
    }

    #[test]
    fn translation_ham_reduce_matches_direct_route() {
        let s = standard_theta(4);
        let chart = s.chart().clone();
        let a = from_reduction_data(
            &s,
            LieAlgebra::abelian(1),
            &[pe(&chart, "xi1")],
            &[Mat::zeros(1, 1)],
            &[pe(&chart, "x2")],
        )
        .unwrap();
        let hr = ham_reduce(&a, &HamReduceOptions { seed: 11, ..Default::default() }).unwrap();

        // Direct route: the triangular ideal <x2, xi1, v2, p1>.
        let zero = GradedPoly::zero(&chart);
        let ideal = CoisotropicIdeal::new(
            s.bracket().clone(),
            vec![1],
            vec![(4, zero.clone()), (1, zero.clone())],
            vec![(0, zero)],
        )
        .unwrap();
        let direct = coiso::reduce(&s, &ideal).unwrap();
        assert_eq!(hr.reduction.scenario().theta(), direct.scenario().theta());
        assert_eq!(
            hr.reduction.scenario().chart().x_names(),
            &["x3".to_string(), "x4".to_string()]
        );

        let ex = &hr.exactness;
        assert!(ex.exact(), "{ex:?}");
        assert!(ex.anchor_spans_locus);
        assert!(ex.anchor_matches_leaves);
    }

    #[test]
    fn restriction_action_reduces() {
        // No symmetry directions, one moment component: reduction is
        // restriction to the zero level x^1 = 0.
        let s = standard_theta(3);
        let chart = s.chart().clone();
        let a = from_reduction_data(
            &s,
            LieAlgebra::abelian(0),
            &[],
            &[],
            &[pe(&chart, "x1")],
        )
        .unwrap();
        let d = zero_level_data(&a, 9).unwrap();
        assert_eq!(d.drop_x, vec![0]);
        assert!(d.f_index.is_empty());
        assert_eq!(d.k_frame.len(), 1);
        assert_eq!(d.k_frame[0].poly(), &pe(&chart, "v1"));
        assert_eq!(d.flat_frame.len(), 4);

        let hr = ham_reduce(&a, &HamReduceOptions { seed: 9, ..Default::default() }).unwrap();
        let zero = GradedPoly::zero(&chart);
        let ideal =
            CoisotropicIdeal::new(s.bracket().clone(), vec![0], vec![(0, zero)], vec![]).unwrap();
        let direct = coiso::reduce(&s, &ideal).unwrap();
        assert_eq!(hr.reduction.scenario().theta(), direct.scenario().theta());
        assert!(hr.exactness.exact());
    }

    #[test]
    fn scaling_action_has_fixed_point_on_zero_level() {
        let a = scaling_action();
        let rz = regular_zero(&a, 13, 3).unwrap();
        assert!(rz.mu_regular.pass);
        assert!(!rz.rho_injective.pass);
        assert!(!rz.locally_free.pass);
        assert!(!rz.constant_certificate);
        // The symbols vanish along the locus, so no leaf data exists.
        assert!(matches!(zero_level_data(&a, 13), Err(MomentError::FrameDegeneracy(_))));
    }

    #[test]
    fn comoment_detects_wrong_section_image() {
        // Scaling data with the kernel image replaced by v1: the pairing
        // no longer realizes varpi and the equivariance of the degree-1
        // map breaks, in both formulations.
        let s = standard_theta(2);
        let chart = s.chart().clone();
        let b = s.bracket();
        let dgla =
            DGLA2Data::hemisemidirect(LieAlgebra::abelian(1), 1, &[Mat::from_int_rows(&[&[1]])])
                .unwrap();
        let phi = b.poisson(s.theta(), &pe(&chart, "x2*xi2"));
        let a = HamAction::new(
            s.clone(),
            dgla,
            vec![phi],
            vec![pe(&chart, "x2*xi2"), pe(&chart, "v1")],
            vec![pe(&chart, "x2")],
        )
        .unwrap();
        let report = validate_comoment(&a);
        assert!(!report.symbolic_morphism.pass);
        assert!(report.phi_morphism.pass);
        assert!(!report.rho_equivariant.pass);
        assert!(report.mu_equivariant.pass);
        assert!(!report.pairing_matches_varpi.pass);
        assert!(report.verdicts_agree, "{report:?}");
        assert!(!report.all_pass());
    }

    #[test]
    fn chain_detects_non_lifted_section() {
        // rho(a) = x^2 v^1 is isotropic and commutes with phi = p1, so
        // the comoment conditions hold; but {Theta, x^2 v^1} = -v1 v2 is
        // not phi(delta a) = 0, and the classical adjoint comparison
        // sees the same defect.
        let s = standard_theta(3);
        let chart = s.chart().clone();
        let dgla = DGLA2Data::new(
            LieAlgebra::abelian(1),
            1,
            0,
            vec![Mat::zeros(1, 1)],
            vec![Mat::zeros(0, 0)],
            vec![vec![Vec::new()]],
            Mat::zeros(1, 0),
            Mat::zeros(1, 1),
        )
        .unwrap();
        let a = HamAction::new(
            s.clone(),
            dgla,
            vec![pe(&chart, "p1")],
            vec![pe(&chart, "x2*v1")],
            vec![],
        )
        .unwrap();
        let com = validate_comoment(&a);
        assert!(com.all_pass(), "{com:?}");
        let ch = validate_chain(&a);
        assert!(!ch.symbolic_chain.pass);
        assert!(ch.rho_delta_h.pass);
        assert!(!ch.phi_delta_a.pass);
        assert!(ch.phi_automorphism.pass);
        assert!(ch.verdicts_agree, "{ch:?}");
    }

    #[test]
    fn automorphism_check_needs_weighted_sections() {
        // phi = xi1 xi2 preserves every bracket of constant sections but
        // fails the derivation law on (x^1 v^1, xi1); the symbolic test
        // {Theta, phi} != 0 sees the same failure.
        let s = standard_theta(2);
        let chart = s.chart().clone();
        let dgla = DGLA2Data::new(
            LieAlgebra::abelian(1),
            0,
            0,
            vec![Mat::zeros(0, 0)],
            vec![Mat::zeros(0, 0)],
            Vec::new(),
            Mat::zeros(0, 0),
            Mat::zeros(1, 0),
        )
        .unwrap();
        let a = HamAction::new(
            s.clone(),
            dgla,
            vec![pe(&chart, "xi1*xi2")],
            vec![],
            vec![],
        )
        .unwrap();
        let com = validate_comoment(&a);
        assert!(com.all_pass(), "{com:?}");
        let ch = validate_chain(&a);
        assert!(!ch.symbolic_chain.pass);
        assert!(ch.rho_delta_h.pass);
        assert!(ch.phi_delta_a.pass);
        assert!(!ch.phi_automorphism.pass, "{ch:?}");
        assert!(ch.verdicts_agree);
    }

    #[test]
    fn reduction_data_is_vetted() {
        let s = standard_theta(3);
        let chart = s.chart().clone();
        // The moment x^1 moves along the lifted flow of xi1.
        let err = from_reduction_data(
            &s,
            LieAlgebra::abelian(1),
            &[pe(&chart, "xi1")],
            &[Mat::zeros(1, 1)],
            &[pe(&chart, "x1")],
        )
        .unwrap_err();
        assert!(matches!(&err, MomentError::ActionInvalid(m) if m.contains("equivariant")), "{err}");

        // xi1 + v1 pairs with itself.
        let err = from_reduction_data(
            &s,
            LieAlgebra::abelian(1),
            &[pe(&chart, "xi1 + v1")],
            &[Mat::zeros(1, 1)],
            &[pe(&chart, "x2")],
        )
        .unwrap_err();
        assert!(matches!(&err, MomentError::ActionInvalid(m) if m.contains("isotropic")), "{err}");

        // A hamiltonian violating the master equation has non-central
        // lifts of functions.
        let base = standard_theta(2);
        let bad = CourantScenario::new(
            base.bracket().clone(),
            pe(base.chart(), "x2*v1*p1 + x1*v2*p2"),
            "sheared",
            ScenarioKind::Explicit,
        )
        .unwrap();
        let err = from_reduction_data(&bad, LieAlgebra::abelian(0), &[], &[], &[]).unwrap_err();
        assert!(matches!(err, MomentError::NotLeftCentral(_)));
    }

    #[test]
    fn marsden_weinstein_quadratic_reduction() {
        // omega = dx^1 ^ dx^3 + dx^2 ^ dx^4; the x^1 translation with
        // moment x^3 reduces J_omega to the symplectic structure of
        // dx^2 ^ dx^4 on the (x^2, x^4) plane.
        let s = standard_theta(4);
        let chart = s.chart().clone();
        let mut omega = Mat::zeros(4, 4);
        omega.set(0, 2, q(1));
        omega.set(2, 0, q(-1));
        omega.set(1, 3, q(1));
        omega.set(3, 1, q(-1));
        let j = symplectic_j(&s, &omega).unwrap();
        let a = from_reduction_data(
            &s,
            LieAlgebra::abelian(1),
            &[pe(&chart, "xi1")],
            &[Mat::zeros(1, 1)],
            &[pe(&chart, "x3")],
        )
        .unwrap();
        let hr = ham_reduce(
            &a,
            &HamReduceOptions { j: Some(j), seed: 19, ..Default::default() },
        )
        .unwrap();
        let qr = hr.quadratic.unwrap();
        assert!(qr.preserves_k && qr.preserves_flat);
        assert!(qr.outcome.ok());
        let red_chart = hr.reduction.scenario().chart();
        assert_eq!(qr.j_red.poly(), &pe(red_chart, "-1*v2*v4 - xi2*xi4"));
        assert!(hr.exactness.exact());
    }

    #[test]
    fn hamiltonian_dirac_reduction() {
        // L = graph of dx^1 ^ dx^2 + dx^3 ^ dx^4; reducing the x^1
        // translation with moment x^2 keeps the graph of dx^3 ^ dx^4.
        let s = standard_theta(4);
        let chart = s.chart().clone();
        let l_frame = vec![
            section(&chart, "xi1 + v2"),
            section(&chart, "xi2 - v1"),
            section(&chart, "xi3 + v4"),
            section(&chart, "xi4 - v3"),
        ];
        let a = from_reduction_data(
            &s,
            LieAlgebra::abelian(1),
            &[pe(&chart, "xi1")],
            &[Mat::zeros(1, 1)],
            &[pe(&chart, "x2")],
        )
        .unwrap();
        let hr = ham_reduce(
            &a,
            &HamReduceOptions { l_frame: Some(l_frame), seed: 23, ..Default::default() },
        )
        .unwrap();
        let dr = hr.dirac.unwrap();
        assert_eq!(dr.frame.len(), 2);
        let red_chart = hr.reduction.scenario().chart().clone();
        let got = Subspace::from_vectors(
            4,
            &dr.frame.iter().map(|f| const_e_vec(f.poly())).collect::<Vec<_>>(),
        );
        let want = Subspace::from_vectors(
            4,
            &[
                const_e_vec(&pe(&red_chart, "xi3 + v4")),
                const_e_vec(&pe(&red_chart, "xi4 - v3")),
            ],
        );
        assert_eq!(got, want);
    }

    #[test]
    fn extended_action_equivalence() {
        let s = standard_theta(2);
        let chart = s.chart().clone();
        let c = hemisemidirect(LieAlgebra::abelian(1), 1, &[Mat::from_int_rows(&[&[1]])]).unwrap();

        let good = extended_action_check(
            &s,
            &c,
            &[pe(&chart, "x2*xi2"), pe(&chart, "v2")],
            &[pe(&chart, "x2")],
            7,
        )
        .unwrap();
        assert!(good.all_pass(), "{good:?}");

        // Dropping the kernel image breaks the polynomial isotropy
        // condition; on the zero level the pairing still vanishes, and
        // the defect x^2 is seen by its nonvanishing differential.
        let bad = extended_action_check(
            &s,
            &c,
            &[pe(&chart, "xi1"), GradedPoly::zero(&chart)],
            &[pe(&chart, "x2")],
            7,
        )
        .unwrap();
        assert!(bad.bracket_preserving.pass);
        assert!(!bad.h_compatible.pass);
        assert!(!bad.isotropy_condition.pass);
        assert!(bad.isotropic_on_zero.pass);
        assert!(!bad.differential_closed.pass);
        assert!(bad.equivalence_agrees, "{bad:?}");
        assert!(!bad.all_pass());
    }

    #[test]
    fn unsupported_moments_are_rejected() {
        let s = standard_theta(2);
        let chart = s.chart().clone();
        let dgla =
            DGLA2Data::hemisemidirect(LieAlgebra::abelian(0), 1, &[]).unwrap();
        // mu* = (x^2)^2 is not a coordinate multiple, and its zero level
        // is critical.
        let mu = pe(&chart, "x2^2");
        let b = s.bracket();
        let a = HamAction::new(
            s.clone(),
            dgla,
            vec![],
            vec![b.poisson(s.theta(), &mu)],
            vec![mu],
        )
        .unwrap();
        let rz = regular_zero(&a, 3, 3).unwrap();
        assert!(!rz.mu_regular.pass, "{rz:?}");
        assert!(matches!(zero_level_data(&a, 3), Err(MomentError::Unsupported(_))));
    }
}
