//! Discrete multisymplectic field theory on a 1+1 dimensional lattice.
//!
//! Given a first-order Lagrangian on a periodic-in-space, finite-in-time
//! grid, this crate derives the whole chain of covariant phase space
//! structures and exposes each link as a checkable operation:
//!
//! * jet-bundle coordinate calculus with chart transformation laws
//!   ([`jet`], [`affine`]),
//! * Lagrangian/Hamiltonian models with exact pointwise partials from
//!   second-order forward automatic differentiation ([`ad`], [`models`]),
//! * Euler-Lagrange and De Donder-Weyl operators, Cauchy solvers and the
//!   linearized (Jacobi) operators ([`dynamics`]),
//! * retarded, advanced and causal Green functions of the Jacobi operator
//!   ([`green`]),
//! * the symplectic current, canonical and symplectic forms on time slices
//!   ([`symplectic`]),
//! * localized functionals, Hamiltonian vector fields and the
//!   Peierls-DeWitt bracket ([`peierls`]).
//!
//! The crate is `no_std` + `alloc`; all IO, configuration and reporting
//! live in the companion `multisym` CLI crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod ad;
pub mod affine;
pub mod dynamics;
pub mod error;
pub mod green;
pub mod jet;
pub mod lattice;
pub mod linalg;
pub mod models;
pub mod peierls;
pub mod rng;
pub mod symplectic;
pub mod verify;

pub use error::{Error, Result};
