//! Fidelity estimators, exact references and the lower-bound instance family.

use std::fmt;

use serde::Serialize;

use crate::circuit::{build_swap_test, build_w_prime, Circuit, Register};
use crate::error::{Error, Result};
use crate::estimate::{amp_est_with, sqrt_amp_est_with, AmplitudeProblem, EstimationResult, EstimatorOptions};
use crate::numerics::{clamp_psd_spectrum, herm_eig, matrix_sqrt_psd, CVector, DensityMatrix};
use crate::qstate::{complete_to_unitary, PreparationOracle};

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("dimensions {a} and {b}")));
    }
    Ok(())
}

/// `√⟨ψ|ρ|ψ⟩`.
pub fn exact_fidelity_to_pure(rho: &DensityMatrix, psi: &CVector) -> Result<f64> {
    check_dims(rho.dim(), psi.dim())?;
    psi.check_normalized()?;
    Ok(rho.expectation(psi)?.clamp(0.0, 1.0).sqrt())
}

/// `tr(ρσ²)`.
pub fn exact_tr_rho_sigma2(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho.dim(), sigma.dim())?;
    let s = sigma.matrix();
    let v = rho.matrix().matmul(&s.matmul(s)?)?.trace().re;
    Ok(v.clamp(0.0, 1.0))
}

/// Uhlmann fidelity `tr√(√σ ρ √σ)`.
pub fn uhlmann_fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho.dim(), sigma.dim())?;
    let root = matrix_sqrt_psd(sigma.matrix())?;
    let inner = root.matmul(&rho.matrix().matmul(&root)?)?;
    let eig = herm_eig(&inner)?;
    let f: f64 = clamp_psd_spectrum(&eig.eigenvalues)?.iter().map(|l| l.sqrt()).sum();
    Ok(f.clamp(0.0, 1.0))
}

/// Inputs shared by every estimator: purified access to `ρ` and to a second
/// state, a target error `ε` and a seed.
#[derive(Debug, Clone)]
pub struct FidelityTask {
    pub rho_oracle: PreparationOracle,
    pub second_oracle: PreparationOracle,
    /// Read off the second oracle's known reduced state, never used by the
    /// estimators themselves beyond precondition checks.
    pub second_is_pure: bool,
    pub epsilon: f64,
    pub seed: u64,
    pub options: EstimatorOptions,
}

impl FidelityTask {
    pub fn new(
        rho_oracle: PreparationOracle,
        second_oracle: PreparationOracle,
        epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::OutOfRange(format!("epsilon = {epsilon} not in (0, 1)")));
        }
        if rho_oracle.system_qubits() != second_oracle.system_qubits() {
            return Err(Error::DimensionMismatch(format!(
                "system sizes differ: {} vs {} qubits",
                rho_oracle.system_qubits(),
                second_oracle.system_qubits()
            )));
        }
        let second_is_pure = second_oracle.is_pure();
        Ok(Self {
            rho_oracle,
            second_oracle,
            second_is_pure,
            epsilon,
            seed,
            options: EstimatorOptions::default(),
        })
    }

    pub fn with_options(mut self, options: EstimatorOptions) -> Self {
        self.options = options;
        self
    }

    fn capped(&self, circuit: Circuit) -> Circuit {
        match self.options.qubit_cap {
            Some(cap) => circuit.with_qubit_cap(cap),
            None => circuit,
        }
    }

    fn require_pure_second(&self) -> Result<()> {
        if !self.second_is_pure {
            return Err(Error::NotPure {
                purity: self.second_oracle.reduced_state().purity(),
            });
        }
        Ok(())
    }
}

/// SWAP-test baseline: estimates `p = (1 + F²)/2` to `δ = ε²/4` and returns
/// `√max(2p̂ − 1, 0)`.
pub fn swap_test_estimate(task: &FidelityTask) -> Result<EstimationResult> {
    task.require_pure_second()?;
    let circuit = task.capped(build_swap_test(&task.rho_oracle, &task.second_oracle)?);
    let problem = AmplitudeProblem::new(circuit, Register::C)?;
    let delta = task.epsilon * task.epsilon / 4.0;
    let mut r = amp_est_with(&problem, delta, task.seed, &task.options)?;
    let readout = |p: f64| (2.0 * p - 1.0).max(0.0).sqrt();
    r.estimate = readout(r.estimate);
    for s in &mut r.samples {
        *s = readout(*s);
    }
    r.target_error = task.epsilon;
    Ok(r)
}

fn w_prime_pipeline(task: &FidelityTask) -> Result<EstimationResult> {
    let circuit = task.capped(build_w_prime(&task.rho_oracle, &task.second_oracle)?);
    let problem = AmplitudeProblem::new(circuit, Register::C)?;
    sqrt_amp_est_with(&problem, task.epsilon, task.seed, &task.options)
}

/// Estimates `F(ρ, |ψ⟩)` with `O(1/ε)` queries by square-root amplitude
/// estimation on `W′`.
pub fn fidelity_to_pure(task: &FidelityTask) -> Result<EstimationResult> {
    task.require_pure_second()?;
    w_prime_pipeline(task)
}

/// Estimates `√tr(ρσ²)` for a mixed `σ` with the same pipeline.
pub fn sqrt_tr_rho_sigma2_estimate(task: &FidelityTask) -> Result<EstimationResult> {
    w_prime_pipeline(task)
}

/// `|⟨φ|ψ⟩|` for two pure states, each possibly carrying its own ancilla.
pub fn pure_pure_fidelity(task: &FidelityTask) -> Result<EstimationResult> {
    if !task.rho_oracle.is_pure() {
        return Err(Error::NotPure {
            purity: task.rho_oracle.reduced_state().purity(),
        });
    }
    fidelity_to_pure(task)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

/// One member `ρ±` of the indistinguishable pair: diagonal with weights
/// `p ± ε` on `|0⟩` and `(1 − p ∓ ε)/(r − 1)` on the next `r − 1` basis states.
#[derive(Debug, Clone)]
pub struct HardInstance {
    pub p: f64,
    pub eps: f64,
    pub rank: usize,
    pub sign: Sign,
    pub k: usize,
    pub distribution: Vec<f64>,
    pub rho: DensityMatrix,
    /// Prepares `Σ_j √p_j |j⟩_A|j⟩_B`.
    pub oracle: PreparationOracle,
    pub target: CVector,
}

impl HardInstance {
    /// `F(ρ±, |0⟩) = √(p ± ε)`.
    pub fn fidelity(&self) -> f64 {
        (self.p + self.sign.value() * self.eps).sqrt()
    }
}

pub fn hard_distribution(p: f64, eps: f64, r: usize, sign: Sign, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > 10 {
        return Err(Error::InvalidInstance(format!("k = {k} not in 1..=10")));
    }
    if r < 2 || r > 1 << k {
        return Err(Error::InvalidInstance(format!("rank {r} not in 2..=2^{k}")));
    }
    if eps.is_nan() || eps < 0.0 || !(p - eps > 0.0 && p + eps < 1.0) {
        return Err(Error::InvalidInstance(format!(
            "p ± eps = {p} ± {eps} leaves (0, 1)"
        )));
    }
    let head = p + sign.value() * eps;
    let tail = (1.0 - head) / (r - 1) as f64;
    let mut dist = vec![0.0; 1 << k];
    dist[0] = head;
    for w in &mut dist[1..r] {
        *w = tail;
    }
    Ok(dist)
}

pub fn hard_instance(p: f64, eps: f64, r: usize, sign: Sign, k: usize) -> Result<HardInstance> {
    let distribution = hard_distribution(p, eps, r, sign, k)?;
    let rho = DensityMatrix::diagonal(&distribution)?;
    let b = (usize::BITS - (r - 1).leading_zeros()) as usize;
    let mut column = vec![0.0; 1 << (k + b)];
    for (j, w) in distribution.iter().enumerate().take(r) {
        column[(j << b) | j] = w.sqrt();
    }
    let unitary = complete_to_unitary(&CVector::from_real(&column))?;
    let label = format!("hard{sign}-p{p}-e{eps}-r{r}-k{k}");
    let oracle = PreparationOracle::new(unitary, k, label)?;
    Ok(HardInstance {
        p,
        eps,
        rank: r,
        sign,
        k,
        distribution,
        rho,
        oracle,
        target: CVector::basis(1 << k, 0),
    })
}

/// Closed form of `d_H(p⁺, p⁻)`.
pub fn hellinger_closed_form(p: f64, eps: f64) -> f64 {
    let q = 1.0 - p;
    (1.0 - (p * p - eps * eps).sqrt() - (q * q - eps * eps).sqrt())
        .max(0.0)
        .sqrt()
}

/// `d_H(a, b) = √(½ Σ (√a_i − √b_i)²)`.
pub fn hellinger_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2))
        .sum();
    Ok((s / 2.0).sqrt())
}
