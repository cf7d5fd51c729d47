//! State preparation oracles.
//!
//! A [`PreparationOracle`] is a unitary `U` on `system ⊗ ancilla` with
//! `U|0⟩ = |ρ⟩`, a purification of the target state `ρ`. The oracle keeps a
//! tally of how often it has been applied, split by invocation kind.

use std::cell::Cell;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    c, clamp_psd_spectrum, kron, reduced_state_of_pure, CMatrix, CVector, DensityMatrix,
    MatrixJson, C64, ONE, STRUCTURAL_TOL, ZERO,
};
use crate::rng::{complex_gaussian, rng_from_seed};

/// How an oracle was invoked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryKind {
    Plain,
    Inverse,
    Controlled,
    ControlledInverse,
}

impl QueryKind {
    pub fn inverted(self) -> Self {
        match self {
            QueryKind::Plain => QueryKind::Inverse,
            QueryKind::Inverse => QueryKind::Plain,
            QueryKind::Controlled => QueryKind::ControlledInverse,
            QueryKind::ControlledInverse => QueryKind::Controlled,
        }
    }

    pub fn with_control(self) -> Self {
        match self {
            QueryKind::Plain | QueryKind::Controlled => QueryKind::Controlled,
            QueryKind::Inverse | QueryKind::ControlledInverse => QueryKind::ControlledInverse,
        }
    }

    pub fn is_inverse(self) -> bool {
        matches!(self, QueryKind::Inverse | QueryKind::ControlledInverse)
    }

    pub fn is_controlled(self) -> bool {
        matches!(self, QueryKind::Controlled | QueryKind::ControlledInverse)
    }
}

/// Per-kind invocation counts for one oracle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCounts {
    pub plain: u64,
    pub inverse: u64,
    pub controlled: u64,
    pub controlled_inverse: u64,
}

impl QueryCounts {
    pub fn total(&self) -> u64 {
        self.plain + self.inverse + self.controlled + self.controlled_inverse
    }

    pub fn get(&self, kind: QueryKind) -> u64 {
        match kind {
            QueryKind::Plain => self.plain,
            QueryKind::Inverse => self.inverse,
            QueryKind::Controlled => self.controlled,
            QueryKind::ControlledInverse => self.controlled_inverse,
        }
    }

    pub fn add(&mut self, kind: QueryKind, n: u64) {
        match kind {
            QueryKind::Plain => self.plain += n,
            QueryKind::Inverse => self.inverse += n,
            QueryKind::Controlled => self.controlled += n,
            QueryKind::ControlledInverse => self.controlled_inverse += n,
        }
    }

    /// Counts for the adjoint of a circuit that made these queries.
    pub fn inverted(&self) -> Self {
        Self {
            plain: self.inverse,
            inverse: self.plain,
            controlled: self.controlled_inverse,
            controlled_inverse: self.controlled,
        }
    }

    /// Counts for the controlled version of a circuit that made these queries.
    pub fn controlled(&self) -> Self {
        Self {
            plain: 0,
            inverse: 0,
            controlled: self.plain + self.controlled,
            controlled_inverse: self.inverse + self.controlled_inverse,
        }
    }

    pub fn scaled(&self, n: u64) -> Self {
        Self {
            plain: self.plain * n,
            inverse: self.inverse * n,
            controlled: self.controlled * n,
            controlled_inverse: self.controlled_inverse * n,
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self {
            plain: self.plain + other.plain,
            inverse: self.inverse + other.inverse,
            controlled: self.controlled + other.controlled,
            controlled_inverse: self.controlled_inverse + other.controlled_inverse,
        }
    }
}

/// A pure bipartite state whose system marginal is a given density matrix.
#[derive(Debug, Clone)]
pub struct Purification {
    pub system_qubits: usize,
    pub ancilla_qubits: usize,
    pub vector: CVector,
}

impl Purification {
    pub fn reduced_state(&self) -> CMatrix {
        reduced_state_of_pure(
            &self.vector,
            1 << self.system_qubits,
            1 << self.ancilla_qubits,
        )
        .expect("purification dims are consistent")
    }
}

/// Canonical purification `Σᵢ √λᵢ |vᵢ⟩_A |i⟩_B` with as many ancilla qubits as
/// system qubits. Eigenvalues are labelled in descending order, so the
/// dominant eigenvector pairs with `|0⟩_B`.
pub fn purify(rho: &DensityMatrix) -> Purification {
    purify_with_ancilla(rho, rho.num_qubits()).expect("ancilla as large as the system suffices")
}

/// Canonical purification onto an ancilla of `ancilla_qubits` qubits.
///
/// Errors if the ancilla dimension is smaller than the rank of `rho`.
pub fn purify_with_ancilla(rho: &DensityMatrix, ancilla_qubits: usize) -> Result<Purification> {
    let eig = rho.eigen();
    let spectrum = clamp_psd_spectrum(&eig.eigenvalues)?;
    let d = rho.dim();
    let db = 1usize << ancilla_qubits;
    let support: Vec<usize> = (0..d).rev().filter(|&i| spectrum[i] > 0.0).collect();
    if support.len() > db {
        return Err(Error::DimensionMismatch(format!(
            "rank {} does not fit in {ancilla_qubits} ancilla qubits",
            support.len()
        )));
    }
    let mut v = CVector::zeros(d * db);
    for (label, &i) in support.iter().enumerate() {
        let w = spectrum[i].sqrt();
        for a in 0..d {
            v[a * db + label] = eig.eigenvectors.get(a, i) * w;
        }
    }
    // renormalize away the clamped mass so the vector is a unit state
    let v = v.normalized()?;
    Ok(Purification {
        system_qubits: rho.num_qubits(),
        ancilla_qubits,
        vector: v,
    })
}

/// Unitary whose first column is `column`.
///
/// The phase `e^{iα}` of the largest-magnitude entry `column[j]` (first index
/// on ties) is factored out, a Householder reflection `H` maps `e_j` onto the
/// phase-corrected column, and the result is `e^{iα} H P` with `P` the
/// transposition of `e_0` and `e_j`. The construction is deterministic and
/// yields the identity for `|0⟩`.
pub fn complete_to_unitary(column: &CVector) -> Result<CMatrix> {
    column.check_normalized()?;
    let col = column.normalized()?;
    let n = col.dim();

    let mut pivot = 0;
    let mut best = col[0].norm();
    for (i, z) in col.iter().enumerate().skip(1) {
        if z.norm() > best {
            best = z.norm();
            pivot = i;
        }
    }
    let phase = col[pivot] / best;
    let target = col.scale(phase.conj());

    // w = e_pivot - target, with the pivot entry computed without cancellation
    let off_pivot: f64 = target
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pivot)
        .map(|(_, z)| z.norm_sqr())
        .sum();
    let mut reflection = CMatrix::identity(n);
    if off_pivot > 0.0 {
        let mut w = target.scale(c(-1.0, 0.0));
        w[pivot] = c(off_pivot / (1.0 + target[pivot].re), 0.0);
        let w_norm_sqr = w.norm_sqr();
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { ONE } else { ZERO };
                reflection.set(i, j, delta - w[i] * w[j].conj() * (2.0 / w_norm_sqr));
            }
        }
    }

    let mut u = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let src = if j == 0 {
                pivot
            } else if j == pivot {
                0
            } else {
                j
            };
            u.set(i, j, phase * reflection.get(i, src));
        }
    }
    Ok(u)
}

/// Unitary oracle providing purified query access to a state.
#[derive(Clone)]
pub struct PreparationOracle {
    unitary: CMatrix,
    system_qubits: usize,
    ancilla_qubits: usize,
    label: String,
    reduced: DensityMatrix,
    counter: Cell<QueryCounts>,
}

impl fmt::Debug for PreparationOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PreparationOracle")
            .field("label", &self.label)
            .field("system_qubits", &self.system_qubits)
            .field("ancilla_qubits", &self.ancilla_qubits)
            .field("queries", &self.counter.get())
            .finish()
    }
}

impl PreparationOracle {
    /// Wraps `unitary`, acting on `system_qubits` followed by the remaining
    /// ancilla qubits.
    pub fn new(unitary: CMatrix, system_qubits: usize, label: impl Into<String>) -> Result<Self> {
        let total = unitary.rows();
        if !unitary.is_square() || !total.is_power_of_two() {
            return Err(Error::DimensionMismatch(format!(
                "oracle must be a square power-of-two matrix, got {}x{}",
                unitary.rows(),
                unitary.cols()
            )));
        }
        let total_qubits = total.trailing_zeros() as usize;
        if system_qubits == 0 || system_qubits > total_qubits {
            return Err(Error::DimensionMismatch(format!(
                "{system_qubits} system qubits in a {total_qubits}-qubit oracle"
            )));
        }
        unitary.check_unitary()?;
        let ancilla_qubits = total_qubits - system_qubits;
        let prepared = unitary.column(0);
        let reduced = DensityMatrix::new(reduced_state_of_pure(
            &prepared,
            1 << system_qubits,
            1 << ancilla_qubits,
        )?)?;
        Ok(Self {
            unitary,
            system_qubits,
            ancilla_qubits,
            label: label.into(),
            reduced,
            counter: Cell::new(QueryCounts::default()),
        })
    }

    /// Oracle for `rho` from its canonical purification.
    pub fn from_density(rho: &DensityMatrix, label: impl Into<String>) -> Result<Self> {
        Self::from_purification(&purify(rho), label)
    }

    pub fn from_purification(p: &Purification, label: impl Into<String>) -> Result<Self> {
        Self::new(complete_to_unitary(&p.vector)?, p.system_qubits, label)
    }

    /// Oracle preparing `|ψ⟩_A |0⟩_B` with an ancilla of `ancilla_qubits`.
    pub fn from_pure_state(
        psi: &CVector,
        ancilla_qubits: usize,
        label: impl Into<String>,
    ) -> Result<Self> {
        if !psi.dim().is_power_of_two() || psi.dim() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "state dimension {} is not a power of two",
                psi.dim()
            )));
        }
        let system_qubits = psi.dim().trailing_zeros() as usize;
        let full = psi.kron(&CVector::basis(1 << ancilla_qubits, 0));
        Self::new(complete_to_unitary(&full)?, system_qubits, label)
    }

    pub fn unitary(&self) -> &CMatrix {
        &self.unitary
    }

    pub fn system_qubits(&self) -> usize {
        self.system_qubits
    }

    pub fn ancilla_qubits(&self) -> usize {
        self.ancilla_qubits
    }

    pub fn total_qubits(&self) -> usize {
        self.system_qubits + self.ancilla_qubits
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `U|0…0⟩`.
    pub fn prepared_state(&self) -> CVector {
        self.unitary.column(0)
    }

    /// System marginal of the prepared state.
    pub fn reduced_state(&self) -> &DensityMatrix {
        &self.reduced
    }

    /// `I ⊕ U`, the control being a new most-significant qubit.
    pub fn controlled(&self) -> CMatrix {
        self.unitary.controlled()
    }

    /// `U†`.
    pub fn inverse(&self) -> CMatrix {
        self.unitary.adjoint()
    }

    /// Matrix of the requested invocation kind.
    pub fn matrix_for(&self, kind: QueryKind) -> CMatrix {
        match kind {
            QueryKind::Plain => self.unitary.clone(),
            QueryKind::Inverse => self.inverse(),
            QueryKind::Controlled => self.controlled(),
            QueryKind::ControlledInverse => self.inverse().controlled(),
        }
    }

    /// `U ⊗ I` on `extra` fresh ancilla qubits appended after the existing ones.
    pub fn padded(&self, extra: usize) -> PreparationOracle {
        if extra == 0 {
            return self.clone();
        }
        let unitary = kron(&self.unitary, &CMatrix::identity(1 << extra));
        PreparationOracle {
            unitary,
            system_qubits: self.system_qubits,
            ancilla_qubits: self.ancilla_qubits + extra,
            label: self.label.clone(),
            reduced: self.reduced.clone(),
            counter: Cell::new(self.counter.get()),
        }
    }

    pub fn is_pure(&self) -> bool {
        self.reduced.is_pure()
    }

    pub fn record(&self, kind: QueryKind) {
        let mut counts = self.counter.get();
        counts.add(kind, 1);
        self.counter.set(counts);
    }

    pub fn counts(&self) -> QueryCounts {
        self.counter.get()
    }

    pub fn reset_counts(&self) {
        self.counter.set(QueryCounts::default());
    }

    /// Max entrywise unitarity deviation and reduced-state reconstruction
    /// error against `rho`.
    pub fn soundness(&self, rho: &DensityMatrix) -> Result<(f64, f64)> {
        if rho.dim() != self.reduced.dim() {
            return Err(Error::DimensionMismatch(format!(
                "oracle system dim {} vs state dim {}",
                self.reduced.dim(),
                rho.dim()
            )));
        }
        Ok((
            self.unitary.unitarity_deviation(),
            self.reduced.matrix().max_abs_diff(rho.matrix()),
        ))
    }
}

/// Oracle from a purified channel: the prepared state is `U|0⟩_A|0⟩_B`.
pub fn purified_channel_oracle(
    channel_unitary: &CMatrix,
    system_qubits: usize,
) -> Result<PreparationOracle> {
    channel_unitary.check_unitary()?;
    PreparationOracle::new(channel_unitary.clone(), system_qubits, "channel")
}

/// Haar-random unit vector (normalized complex Gaussian).
pub fn haar_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CVector {
    let v: Vec<C64> = (0..dim).map(|_| complex_gaussian(rng)).collect();
    CVector::new(v)
        .normalized()
        .expect("Gaussian vector is nonzero almost surely")
}

/// Haar-random unitary via Gram-Schmidt on a complex Ginibre matrix.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let mut columns: Vec<CVector> = Vec::with_capacity(dim);
    while columns.len() < dim {
        let mut v = CVector::new((0..dim).map(|_| complex_gaussian(rng)).collect());
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for q in &columns {
                let overlap = q.inner(&v);
                v = v.sub(&q.scale(overlap));
            }
        }
        if let Ok(q) = v.normalized() {
            columns.push(q);
        }
    }
    CMatrix::from_columns(&columns).expect("columns share a dimension")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    HaarPure,
    GinibreMixed,
    /// Eigenvalues of length `rank`, placed in a Haar-random eigenbasis.
    FixedSpectrum(Vec<f64>),
}

impl InstanceKind {
    pub fn name(&self) -> &'static str {
        match self {
            InstanceKind::HaarPure => "haar_pure",
            InstanceKind::GinibreMixed => "ginibre_mixed",
            InstanceKind::FixedSpectrum(_) => "fixed_spectrum",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomInstanceSpec {
    pub k: usize,
    pub rank: usize,
    pub seed: u64,
    pub kind: InstanceKind,
}

impl RandomInstanceSpec {
    pub fn new(k: usize, rank: usize, seed: u64, kind: InstanceKind) -> Self {
        Self {
            k,
            rank,
            seed,
            kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > 10 {
            return Err(Error::InvalidInstance(format!(
                "k = {} must be in [1, 10]",
                self.k
            )));
        }
        let d = 1usize << self.k;
        if self.rank == 0 || self.rank > d {
            return Err(Error::InvalidInstance(format!(
                "rank {} out of range [1, {d}]",
                self.rank
            )));
        }
        match &self.kind {
            InstanceKind::HaarPure if self.rank != 1 => Err(Error::InvalidInstance(format!(
                "haar_pure instances have rank 1, got {}",
                self.rank
            ))),
            InstanceKind::FixedSpectrum(spectrum) => {
                if spectrum.len() != self.rank {
                    return Err(Error::InvalidInstance(format!(
                        "spectrum has {} entries, rank is {}",
                        spectrum.len(),
                        self.rank
                    )));
                }
                if spectrum.iter().any(|&l| l.is_nan() || l <= 0.0) {
                    return Err(Error::InvalidInstance(
                        "spectrum entries must be positive".into(),
                    ));
                }
                let sum: f64 = spectrum.iter().sum();
                if (sum - 1.0).abs() > STRUCTURAL_TOL {
                    return Err(Error::InvalidInstance(format!(
                        "spectrum sums to {sum}, expected 1"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Draws the density matrix described by `spec` and an oracle for it.
///
/// `haar_pure` and `ginibre_mixed` oracles carry `k` ancilla qubits;
/// `fixed_spectrum` oracles use the minimal ancilla `⌈log₂ rank⌉` (at least one).
pub fn sample_instance(spec: &RandomInstanceSpec) -> Result<(DensityMatrix, PreparationOracle)> {
    spec.validate()?;
    let d = 1usize << spec.k;
    let mut rng = rng_from_seed(spec.seed);
    let label = format!("{}-k{}-r{}-s{}", spec.kind.name(), spec.k, spec.rank, spec.seed);
    match &spec.kind {
        InstanceKind::HaarPure => {
            let psi = haar_state(d, &mut rng);
            let rho = DensityMatrix::from_pure(&psi)?;
            let oracle = PreparationOracle::from_pure_state(&psi, spec.k, label)?;
            Ok((rho, oracle))
        }
        InstanceKind::GinibreMixed => {
            let joint = haar_state(d * spec.rank, &mut rng);
            let reduced = reduced_state_of_pure(&joint, d, spec.rank)?;
            let rho = DensityMatrix::new(hermitize(&reduced))?;
            let oracle = PreparationOracle::from_density(&rho, label)?;
            Ok((rho, oracle))
        }
        InstanceKind::FixedSpectrum(spectrum) => {
            let basis = haar_unitary(d, &mut rng);
            let mut weights = spectrum.clone();
            weights.resize(d, 0.0);
            let diag = CMatrix::diagonal_real(&weights);
            let m = basis.matmul(&diag)?.matmul(&basis.adjoint())?;
            let rho = DensityMatrix::new(hermitize(&m))?;
            let ancilla = (usize::BITS - (spec.rank - 1).leading_zeros()).max(1) as usize;
            let p = purify_with_ancilla(&rho, ancilla)?;
            let oracle = PreparationOracle::from_purification(&p, label)?;
            Ok((rho, oracle))
        }
    }
}

fn hermitize(m: &CMatrix) -> CMatrix {
    let n = m.rows();
    CMatrix::from_fn(n, n, |i, j| (m.get(i, j) + m.get(j, i).conj()) * 0.5)
}

/// Stored instance: `{"k","rank","seed","kind","rho"}` plus the spectrum for
/// `fixed_spectrum` instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub k: usize,
    pub rank: usize,
    pub seed: u64,
    pub kind: String,
    pub rho: MatrixJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
}

impl InstanceFile {
    pub fn new(spec: &RandomInstanceSpec, rho: &DensityMatrix) -> Self {
        Self {
            k: spec.k,
            rank: spec.rank,
            seed: spec.seed,
            kind: spec.kind.name().to_string(),
            rho: MatrixJson::from(rho.matrix()),
            spectrum: match &spec.kind {
                InstanceKind::FixedSpectrum(s) => Some(s.clone()),
                _ => None,
            },
        }
    }

    pub fn spec(&self) -> Result<RandomInstanceSpec> {
        let kind = match (self.kind.as_str(), &self.spectrum) {
            ("haar_pure", _) => InstanceKind::HaarPure,
            ("ginibre_mixed", _) => InstanceKind::GinibreMixed,
            ("fixed_spectrum", Some(s)) => InstanceKind::FixedSpectrum(s.clone()),
            ("fixed_spectrum", None) => {
                return Err(Error::InvalidInstance(
                    "fixed_spectrum instance without spectrum".into(),
                ))
            }
            (other, _) => return Err(Error::InvalidInstance(format!("unknown kind {other:?}"))),
        };
        Ok(RandomInstanceSpec::new(self.k, self.rank, self.seed, kind))
    }

    pub fn density(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(CMatrix::try_from(&self.rho)?)
    }
}
