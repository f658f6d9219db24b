//! Exact-arithmetic engine for degree-2 graded symplectic geometry.
//!
//! The engine works in charts with generators of degree 0 (`x^i`), degree 1
//! (`e^mu`, anticommuting), and degree 2 (`p_I`), carrying the canonical
//! degree `-2` Poisson bracket with `{p_I, x^i} = delta` and
//! `{e^mu, e^nu} = g^{mu nu}` for a fixed symmetric invertible pairing `g`.
//! Degree-3 hamiltonians `theta` with `{theta, theta} = 0` encode Courant
//! structures; derived brackets recover anchors, Courant brackets, and the
//! fiber pairing. On top of that the crate implements:
//!
//! * normal forms for graded-commutative polynomials with exact rational
//!   coefficients ([`graded`]),
//! * the canonical bracket, hamiltonian fields, and nilpotent adjoint flows
//!   ([`poisson`]),
//! * Courant scenarios: standard, 3-form twisted, Lie-algebroid doubles,
//!   B-field transforms, and generalized complex checks ([`courant`]),
//! * exact pseudo-euclidean linear algebra: isotropic subspaces, quotients,
//!   split decompositions, derivation lifts ([`linalg`]),
//! * coisotropic ideals, reducibility tests, and reduction of Courant,
//!   Dirac, and generalized complex structures ([`coiso`]),
//! * graded Lie algebra / moment map machinery and Marsden-Weinstein style
//!   reduction ([`moment`]),
//! * a deterministic scenario-file runner with a bundled corpus
//!   ([`scenario`]).
//!
//! All arithmetic is exact (arbitrary-precision rationals); nothing is
//! floating point. Operations that sample points or sections draw them from
//! a seeded generator and report the seed.

pub mod rat;
pub mod linalg;
pub mod graded;
pub mod poisson;
pub mod courant;
pub mod sampling;
pub mod coiso;
pub mod moment;
pub mod scenario;
