//! Construction and analysis of the slowest operator of the mixed-field
//! quantum Ising chain `H = -sum Z Z + h sum Z + g sum X`.
//!
//! The slowest operator minimizes `-ntr([H, O]^2)` under either the local
//! definition (support on `N` consecutive sites, traceless, Hermitian, unit
//! norm) or the translationally-invariant one (a cyclic sum of shifted
//! identical cells with a first-site Pauli gauge and `ntr(H O) = 0`). Both
//! definitions are solved exactly in the Pauli-coefficient space ([`exact`])
//! and variationally over operator-valued matrix product states ([`dmrg`]).
//! Downstream analysis covers probe overlaps and scaling ([`probes`]),
//! operator entanglement ([`mps`]), and time evolution ([`dynamics`]).
//!
//! All traces are normalized: `ntr(A) = Tr(A) / 2^n`. This makes Pauli words
//! orthonormal, identity embeddings isometric, and every reported value of
//! `-ntr([H,O]^2)` independent of the chain length `L` once `L >= N + 2`.

// Force the BLAS backend link.
extern crate blas_src;
extern crate openblas_src;

pub mod dmrg;
pub mod dynamics;
pub mod exact;
pub mod ising;
pub(crate) mod linalg;
pub mod mps;
pub mod pauli;
pub mod probes;

pub use exact::Definition;
pub use ising::IsingParams;
pub use pauli::{PauliString, PauliSum};
