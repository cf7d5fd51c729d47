//! Classical simulation of fidelity estimation under purified query access.
//!
//! Given unitaries `U`, `V` preparing purifications of `ρ` and of a pure
//! state `|ψ⟩` (or a mixed `σ`), the encoding circuit
//! `W = (V†_AB ⊗ I)·SWAP_BB′·(U_AB ⊗ V_A′B′)` places `F(ρ,|ψ⟩) = √⟨ψ|ρ|ψ⟩`
//! (resp. `√tr(ρσ²)`) in the amplitude of `|0⟩_A|0⟩_B`. Square-root amplitude
//! estimation then reads it out with `O(1/ε)` queries, against `O(1/ε²)` for
//! the SWAP-test baseline.
//!
//! Modules, bottom-up:
//! - [`numerics`]: dense complex linear algebra.
//! - [`qstate`]: purifications, oracle synthesis, random instances.
//! - [`circuit`]: register layouts, circuit builders, statevector execution.
//! - [`estimate`]: Grover operator, phase estimation, amplitude estimation.
//! - [`fidelity`]: estimators, exact references, lower-bound instances.
//! - [`cli`]: experiment harness behind the `fidest` binary.

pub mod circuit;
pub mod cli;
pub mod error;
pub mod estimate;
pub mod fidelity;
pub mod numerics;
pub mod qstate;
pub mod rng;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
