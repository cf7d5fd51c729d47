//! Amplitude estimation by phase estimation on the Grover operator.
//!
//! For a preparer `A` with `A|0⟩ = √p|0⟩_flag|φ₀⟩ + √(1−p)|1⟩_flag|φ₁⟩`, the
//! operator `Q = −A S₀ A† S_good` has eigenphases `±2θ` on the span of the two
//! branches, with `sin²θ = p`. Phase estimation with `m` qubits yields
//! `y ≈ 2^m θ/π`, read out as `sin²(πy/2^m)` ([`amp_est`]) or
//! `sin(πy/2^m)` ([`sqrt_amp_est`]).

use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rustfft::FftPlanner;
use serde::Serialize;

use crate::circuit::{Circuit, Projector, QueryTally, Register};
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, C64, DECOMPOSITION_TOL, STRUCTURAL_TOL, ZERO};
use crate::rng::{derive_seed, rng_from_seed};

pub const DEFAULT_REPETITIONS: usize = 15;
pub const DENSE_GROVER_QUBIT_CAP: usize = 12;
/// Largest `m` accepted by [`phase_estimate`] on a dense operator.
pub const MAX_DENSE_PE_QUBITS: usize = 14;
/// Largest `m` accepted once `Q` has been reduced to its invariant plane.
pub const MAX_REDUCED_PE_QUBITS: usize = 22;
/// Upper bound on `2^m · dim` for the explicit register simulation.
const PE_REGISTER_BUDGET: usize = 1 << 23;

/// State preparation `A` plus the single flag qubit whose `|0⟩` marks the
/// good branch.
#[derive(Debug, Clone)]
pub struct AmplitudeProblem {
    preparer: Circuit,
    flag: Register,
    prepared: CVector,
}

impl AmplitudeProblem {
    pub fn new(preparer: Circuit, flag: Register) -> Result<Self> {
        let size = preparer.layout().size(flag)?;
        if size != 1 {
            return Err(Error::InvalidCircuit(format!(
                "flag register {flag} has {size} qubits, expected 1"
            )));
        }
        let prepared = preparer.execute()?;
        let norm = prepared.norm();
        if (norm - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self {
            preparer,
            flag,
            prepared,
        })
    }

    pub fn preparer(&self) -> &Circuit {
        &self.preparer
    }

    pub fn flag(&self) -> Register {
        self.flag
    }

    pub fn total_qubits(&self) -> usize {
        self.preparer.total_qubits()
    }

    pub fn good_projector(&self) -> Projector {
        Projector::zeros(&[self.flag])
    }

    /// `A|0⟩`.
    pub fn prepared_state(&self) -> &CVector {
        &self.prepared
    }

    /// Exact `p = ‖Π_good A|0⟩‖²`.
    pub fn probability(&self) -> f64 {
        self.good_projector()
            .apply(&self.prepared, self.preparer.layout())
            .map(|g| g.norm_sqr())
            .unwrap_or(0.0)
    }

    fn good_mask(&self) -> usize {
        self.preparer
            .layout()
            .mask(&[self.flag])
            .expect("flag register checked at construction")
    }

    /// `Q x` without materializing `Q`.
    fn apply_grover(&self, x: &CVector) -> Result<CVector> {
        let mask = self.good_mask();
        let mut v = x.clone();
        for (i, z) in v.as_mut_slice().iter_mut().enumerate() {
            if i & mask == 0 {
                *z = -*z;
            }
        }
        let mut v = self.preparer.execute_inverse_from(v)?;
        v[0] = -v[0];
        let v = self.preparer.execute_from(v)?;
        Ok(v.scale(C64::new(-1.0, 0.0)))
    }
}

/// Dense `Q = −A S₀ A† S_good`.
pub fn grover_operator(problem: &AmplitudeProblem) -> Result<CMatrix> {
    grover_operator_with_cap(problem, DENSE_GROVER_QUBIT_CAP)
}

pub fn grover_operator_with_cap(problem: &AmplitudeProblem, cap: usize) -> Result<CMatrix> {
    let n = problem.total_qubits();
    if n > cap {
        return Err(Error::QubitCapExceeded {
            what: "dense Grover operator",
            requested: n,
            cap,
        });
    }
    let a = problem.preparer.unitary()?;
    let dim = a.rows();
    let mask = problem.good_mask();
    let s_good: Vec<C64> = (0..dim)
        .map(|i| if i & mask == 0 { C64::new(-1.0, 0.0) } else { C64::new(1.0, 0.0) })
        .collect();
    let mut s0 = vec![C64::new(1.0, 0.0); dim];
    s0[0] = C64::new(-1.0, 0.0);
    let left = a.matmul(&CMatrix::diagonal(&s0))?;
    let right = a.adjoint().matmul(&CMatrix::diagonal(&s_good))?;
    Ok(left.matmul(&right)?.scale(C64::new(-1.0, 0.0)))
}

/// `Q` restricted to `span{good, bad}` of `A|0⟩`, with the start vector in
/// that basis.
#[derive(Debug, Clone)]
pub struct ReducedGrover {
    pub matrix: CMatrix,
    pub initial: CVector,
    pub invariance_residual: f64,
}

/// Below this norm a branch of `A|0⟩` is treated as absent.
const BRANCH_FLOOR: f64 = 1e-12;

pub fn reduce_grover(problem: &AmplitudeProblem) -> Result<ReducedGrover> {
    let layout = problem.preparer.layout();
    let psi = problem.prepared_state();
    let good = problem.good_projector().apply(psi, layout)?;
    let bad = psi.sub(&good);
    let (g, b) = (good.norm(), bad.norm());

    let (basis, initial) = if g < BRANCH_FLOOR || b < BRANCH_FLOOR {
        (vec![psi.normalized()?], CVector::from_real(&[1.0]))
    } else {
        (
            vec![good.scale(C64::new(1.0 / g, 0.0)), bad.scale(C64::new(1.0 / b, 0.0))],
            CVector::from_real(&[g, b]),
        )
    };
    let r = basis.len();
    let mut matrix = CMatrix::zeros(r, r);
    let mut residual: f64 = 0.0;
    for (j, e) in basis.iter().enumerate() {
        let qe = problem.apply_grover(e)?;
        let mut rest = qe.clone();
        for (i, f) in basis.iter().enumerate() {
            let coeff = f.inner(&qe);
            matrix.set(i, j, coeff);
            rest = rest.sub(&f.scale(coeff));
        }
        residual = residual.max(rest.norm());
    }
    if residual > DECOMPOSITION_TOL {
        return Err(Error::Numerical(format!(
            "Grover plane not invariant (residual {residual:e})"
        )));
    }
    Ok(ReducedGrover {
        matrix,
        initial,
        invariance_residual: residual,
    })
}

/// Exact outcome distribution of `m`-qubit phase estimation of `q` on
/// `initial`.
///
/// The register is simulated explicitly: the uniform superposition over `y`
/// receives controlled `q^{2^t}` on bit `t`, then the inverse QFT.
pub fn qpe_distribution(q: &CMatrix, initial: &CVector, m: usize) -> Result<Vec<f64>> {
    let d = q.rows();
    if !q.is_square() || initial.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "operator {}x{} with initial vector of dim {}",
            q.rows(),
            q.cols(),
            initial.dim()
        )));
    }
    if m == 0 {
        return Err(Error::OutOfRange("phase estimation needs m ≥ 1".into()));
    }
    if m >= usize::BITS as usize - 1 || (d << m) > PE_REGISTER_BUDGET {
        return Err(Error::QubitCapExceeded {
            what: "phase-estimation register",
            requested: m,
            cap: (PE_REGISTER_BUDGET / d.max(1)).ilog2() as usize,
        });
    }
    q.check_unitary()?;
    let big_m = 1usize << m;

    let mut reg: Vec<C64> = Vec::with_capacity(big_m * d);
    for _ in 0..big_m {
        reg.extend_from_slice(initial.as_slice());
    }
    let mut power = q.clone();
    let qs = |p: &CMatrix, row: &mut [C64], buf: &mut [C64]| {
        let s = p.as_slice();
        for (i, out) in buf.iter_mut().enumerate() {
            *out = s[i * d..(i + 1) * d].iter().zip(row.iter()).map(|(a, b)| a * b).sum();
        }
        row.copy_from_slice(buf);
    };
    let mut buf = vec![ZERO; d];
    for t in 0..m {
        for y in (0..big_m).filter(|y| y >> t & 1 == 1) {
            qs(&power, &mut reg[y * d..(y + 1) * d], &mut buf);
        }
        if t + 1 < m {
            power = power.matmul(&power)?;
        }
    }

    let fft = FftPlanner::<f64>::new().plan_fft_forward(big_m);
    let mut probs = vec![0.0; big_m];
    let mut column = vec![ZERO; big_m];
    let norm = 1.0 / (big_m as f64 * big_m as f64);
    for j in 0..d {
        for (y, slot) in column.iter_mut().enumerate() {
            *slot = reg[y * d + j];
        }
        fft.process(&mut column);
        for (p, z) in probs.iter_mut().zip(&column) {
            *p += z.norm_sqr() * norm;
        }
    }
    Ok(probs)
}

fn sample_outcome(dist: &WeightedIndex<f64>, seed: u64) -> usize {
    dist.sample(&mut rng_from_seed(seed))
}

fn weighted(probs: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(probs.iter().map(|p| p.max(0.0)))
        .map_err(|e| Error::Numerical(format!("outcome distribution: {e}")))
}

/// One phase-estimation outcome `y ∈ [0, 2^m)` for `q` on `initial`.
pub fn phase_estimate(q: &CMatrix, initial: &CVector, m: usize, seed: u64) -> Result<usize> {
    if m > MAX_DENSE_PE_QUBITS {
        return Err(Error::QubitCapExceeded {
            what: "dense phase estimation",
            requested: m,
            cap: MAX_DENSE_PE_QUBITS,
        });
    }
    let probs = qpe_distribution(q, initial, m)?;
    Ok(sample_outcome(&weighted(&probs)?, seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub repetitions: usize,
    pub max_pe_qubits: usize,
    /// Overrides the circuit qubit cap when set.
    pub qubit_cap: Option<usize>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            repetitions: DEFAULT_REPETITIONS,
            max_pe_qubits: MAX_REDUCED_PE_QUBITS,
            qubit_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    pub estimate: f64,
    /// Target additive error of `estimate`.
    #[serde(rename = "delta")]
    pub target_error: f64,
    pub m: usize,
    #[serde(rename = "reps")]
    pub repetitions: usize,
    pub seed: u64,
    pub queries: QueryTally,
    pub grover_applications: u64,
    /// Per-repetition estimates in repetition order.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl EstimationResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("estimation result serializes")
    }
}

/// `m = ⌈log₂(π/δ)⌉ + extra`.
pub fn pe_qubits_for(delta: f64, extra: usize) -> usize {
    (PI / delta).log2().ceil().max(0.0) as usize + extra
}

/// Oracle queries of `reps` phase-estimation runs with `m` qubits: one `A`
/// for the input plus `2^m − 1` controlled `Q`, each holding controlled `A`
/// and controlled `A†`.
pub fn estimation_queries(preparer: &QueryTally, m: usize, reps: usize) -> QueryTally {
    let grovers = (1u64 << m) - 1;
    let per_q = preparer.controlled().plus(&preparer.inverted().controlled());
    preparer.plus(&per_q.scaled(grovers)).scaled(reps as u64)
}

#[derive(Debug, Clone, Copy)]
enum Readout {
    Squared,
    Root,
}

/// Lower median under `total_cmp`.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v[(v.len() - 1) / 2]
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::OutOfRange(format!("delta = {delta} not in (0, 1)")));
    }
    Ok(())
}

fn run_estimation(
    problem: &AmplitudeProblem,
    delta: f64,
    m: usize,
    seed: u64,
    options: &EstimatorOptions,
    readout: Readout,
) -> Result<EstimationResult> {
    if options.repetitions == 0 {
        return Err(Error::OutOfRange("zero repetitions".into()));
    }
    if m > options.max_pe_qubits {
        return Err(Error::QubitCapExceeded {
            what: "phase estimation",
            requested: m,
            cap: options.max_pe_qubits,
        });
    }
    let reduced = reduce_grover(problem)?;
    let probs = qpe_distribution(&reduced.matrix, &reduced.initial, m)?;
    let dist = weighted(&probs)?;
    let big_m = (1u64 << m) as f64;
    let samples: Vec<f64> = (0..options.repetitions)
        .map(|r| {
            let y = sample_outcome(&dist, derive_seed(seed, r as u64));
            let s = (PI * y as f64 / big_m).sin();
            let v = match readout {
                Readout::Squared => s * s,
                Readout::Root => s,
            };
            v.clamp(0.0, 1.0)
        })
        .collect();
    let reps = options.repetitions as u64;
    Ok(EstimationResult {
        estimate: lower_median(&samples),
        target_error: delta,
        m,
        repetitions: options.repetitions,
        seed,
        queries: estimation_queries(&problem.preparer.query_tally(), m, options.repetitions),
        grover_applications: reps * ((1u64 << m) - 1),
        samples,
    })
}

/// Estimates `p` to additive error `delta`.
pub fn amp_est(problem: &AmplitudeProblem, delta: f64, seed: u64) -> Result<EstimationResult> {
    amp_est_with(problem, delta, seed, &EstimatorOptions::default())
}

pub fn amp_est_with(
    problem: &AmplitudeProblem,
    delta: f64,
    seed: u64,
    options: &EstimatorOptions,
) -> Result<EstimationResult> {
    check_delta(delta)?;
    run_estimation(problem, delta, pe_qubits_for(delta, 2), seed, options, Readout::Squared)
}

/// Estimates `√p` to additive error `delta`.
pub fn sqrt_amp_est(problem: &AmplitudeProblem, delta: f64, seed: u64) -> Result<EstimationResult> {
    sqrt_amp_est_with(problem, delta, seed, &EstimatorOptions::default())
}

pub fn sqrt_amp_est_with(
    problem: &AmplitudeProblem,
    delta: f64,
    seed: u64,
    options: &EstimatorOptions,
) -> Result<EstimationResult> {
    check_delta(delta)?;
    run_estimation(problem, delta, pe_qubits_for(delta, 1), seed, options, Readout::Root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Op, OracleSlot, RegisterLayout};
    use crate::numerics::c;
    use crate::qstate::PreparationOracle;
    use proptest::prelude::*;

    /// Preparer on `C ⊗ A` putting weight `p` on `C = 0`, with random
    /// branch states on `A`.
    fn flagged_problem(p: f64, seed: u64) -> AmplitudeProblem {
        let phi = crate::test_util::random_unit_vector(4, seed);
        let top = (phi[0].norm_sqr() + phi[1].norm_sqr()).sqrt();
        let bottom = (phi[2].norm_sqr() + phi[3].norm_sqr()).sqrt();
        let amps: Vec<C64> = (0..4)
            .map(|i| if i < 2 { phi[i] * (p.sqrt() / top) } else { phi[i] * ((1.0 - p).sqrt() / bottom) })
            .collect();
        let u = crate::qstate::complete_to_unitary(&CVector::new(amps)).unwrap();
        let o = PreparationOracle::new(u, 1, "flagged").unwrap();
        let layout = RegisterLayout::new(vec![(Register::C, 1), (Register::A, 1)]).unwrap();
        let mut circ = Circuit::new(layout, o.clone(), o);
        circ.push(Op::oracle(OracleSlot::U, Register::C, Register::A)).unwrap();
        AmplitudeProblem::new(circ, Register::C).unwrap()
    }

    #[test]
    fn probability_of_flagged_problem() {
        for &p in &[0.0, 0.2, 0.5, 1.0] {
            assert!((flagged_problem(p, 3).probability() - p).abs() <= 1e-12);
        }
    }

    #[test]
    fn grover_trivial_phases() {
        let q0 = grover_operator(&flagged_problem(0.0, 1)).unwrap();
        let psi = flagged_problem(0.0, 1).prepared_state().clone();
        assert!(q0.apply(&psi).unwrap().max_abs_diff(&psi) <= 1e-12);

        let prob = flagged_problem(1.0, 1);
        let q1 = grover_operator(&prob).unwrap();
        let psi = prob.prepared_state().clone();
        assert!(q1.apply(&psi).unwrap().max_abs_diff(&psi.scale(c(-1.0, 0.0))) <= 1e-12);
    }

    #[test]
    fn grover_eigenphases_on_plane() {
        let p = 0.3;
        let prob = flagged_problem(p, 5);
        let q = grover_operator(&prob).unwrap();
        assert!(q.unitarity_deviation() <= 1e-12);
        // independent plane basis {ψ, Qψ} by Gram-Schmidt on the dense Q
        let psi = prob.prepared_state().clone();
        let qpsi = q.apply(&psi).unwrap();
        let e2 = qpsi.sub(&psi.scale(psi.inner(&qpsi))).normalized().unwrap();
        let basis = [psi, e2];
        let r = CMatrix::from_fn(2, 2, |i, j| basis[i].inner(&q.apply(&basis[j]).unwrap()));
        let tr = r.trace();
        let det = r.get(0, 0) * r.get(1, 1) - r.get(0, 1) * r.get(1, 0);
        let disc = (tr * tr / 4.0 - det).sqrt();
        let mut phases = [(tr / 2.0 + disc).arg(), (tr / 2.0 - disc).arg()];
        phases.sort_by(f64::total_cmp);
        let theta = p.sqrt().asin();
        assert!((phases[0] + 2.0 * theta).abs() <= 1e-8, "{phases:?}");
        assert!((phases[1] - 2.0 * theta).abs() <= 1e-8, "{phases:?}");
        // the matrix-free plane restriction has the same spectrum
        let m = reduce_grover(&prob).unwrap().matrix;
        assert!((m.trace() - tr).norm() <= 1e-10);
        assert!(q.apply(&basis[0]).unwrap().max_abs_diff(&prob.apply_grover(&basis[0]).unwrap()) <= 1e-12);
    }

    #[test]
    fn grover_cap() {
        let prob = flagged_problem(0.4, 2);
        assert!(matches!(
            grover_operator_with_cap(&prob, 1),
            Err(Error::QubitCapExceeded { .. })
        ));
    }

    #[test]
    fn qpe_exact_phase() {
        let q = CMatrix::diagonal(&[c(1.0, 0.0), C64::from_polar(1.0, 2.0 * PI * 3.0 / 8.0)]);
        let probs = qpe_distribution(&q, &CVector::basis(2, 1), 3).unwrap();
        assert!((probs[3] - 1.0).abs() <= 1e-12);
        for seed in 0..20 {
            assert_eq!(phase_estimate(&q, &CVector::basis(2, 1), 3, seed).unwrap(), 3);
        }
    }

    #[test]
    fn qpe_identity() {
        let probs = qpe_distribution(&CMatrix::identity(4), &CVector::basis(4, 2), 5).unwrap();
        assert!((probs[0] - 1.0).abs() <= 1e-12);
    }

    /// Closed-form QPE distribution for a single eigenphase `φ`:
    /// `Pr[y] = |Σ_k e^{2πik(φ − y/M)}|² / M²`.
    fn qpe_oracle(phi: f64, m: usize) -> Vec<f64> {
        let big_m = 1usize << m;
        (0..big_m)
            .map(|y| {
                let d = phi - y as f64 / big_m as f64;
                let s: C64 = (0..big_m).map(|k| C64::from_polar(1.0, 2.0 * PI * k as f64 * d)).sum();
                s.norm_sqr() / (big_m * big_m) as f64
            })
            .collect()
    }

    #[test]
    fn qpe_one_third() {
        let phi = 1.0 / 3.0;
        let q = CMatrix::diagonal(&[C64::from_polar(1.0, 2.0 * PI * phi)]);
        let probs = qpe_distribution(&q, &CVector::basis(1, 0), 6).unwrap();
        let oracle = qpe_oracle(phi, 6);
        for (a, b) in probs.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12);
        }
        let near: f64 = (0..64)
            .filter(|&y| {
                let d = (y as f64 / 64.0 - phi).rem_euclid(1.0);
                d.min(1.0 - d) <= 1.0 / 64.0 + 1e-12
            })
            .map(|y| probs[y])
            .sum();
        assert!(near >= 8.0 / (PI * PI));
        // frozen from the closed-form oracle above
        assert!((probs[21] - 0.683_979_028_010_359_3).abs() <= 1e-10, "{}", probs[21]);
    }

    #[test]
    fn qpe_rejects_large_register() {
        assert!(phase_estimate(&CMatrix::identity(2), &CVector::basis(2, 0), 15, 0).is_err());
    }

    #[test]
    fn amp_est_extremes() {
        for (p, want) in [(0.0, 0.0), (1.0, 1.0)] {
            let prob = flagged_problem(p, 7);
            let r = amp_est(&prob, 0.05, 11).unwrap();
            assert!((r.estimate - want).abs() <= 1e-12);
            let s = sqrt_amp_est(&prob, 0.05, 11).unwrap();
            assert!((s.estimate - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn amp_est_grid_aligned() {
        let p = (PI * 5.0 / 32.0).sin().powi(2);
        let prob = flagged_problem(p, 8);
        // delta = 0.3 gives m = ⌈log₂(π/0.3)⌉ + 2 = 6
        let r = amp_est(&prob, 0.3, 3).unwrap();
        assert_eq!(r.m, 6);
        for s in &r.samples {
            assert!((s - p).abs() <= 1e-10);
        }
    }

    #[test]
    fn sqrt_amp_est_half() {
        let prob = flagged_problem(0.5, 9);
        let r = sqrt_amp_est(&prob, 0.1, 4).unwrap();
        for s in &r.samples {
            assert!((s - 0.5f64.sqrt()).abs() <= 1e-10);
        }
    }

    #[test]
    fn sqrt_amp_est_success_rate() {
        let prob = flagged_problem(0.139, 13);
        let truth = prob.probability().sqrt();
        let ok = (0..200)
            .filter(|&seed| (sqrt_amp_est(&prob, 0.02, seed).unwrap().estimate - truth).abs() <= 0.02)
            .count();
        assert!(ok >= 120, "{ok}/200");
    }

    #[test]
    fn amp_est_success_rate() {
        let prob = flagged_problem(0.61, 14);
        let truth = prob.probability();
        let ok = (0..200)
            .filter(|&seed| (amp_est(&prob, 0.02, seed).unwrap().estimate - truth).abs() <= 0.02)
            .count();
        assert!(ok >= 134, "{ok}/200");
    }

    #[test]
    fn per_repetition_success_rate() {
        let prob = flagged_problem(0.37, 15);
        let truth = prob.probability().sqrt();
        let r = sqrt_amp_est_with(
            &prob,
            0.01,
            0,
            &EstimatorOptions {
                repetitions: 400,
                ..Default::default()
            },
        )
        .unwrap();
        let ok = r.samples.iter().filter(|s| (*s - truth).abs() <= 0.01).count();
        assert!(ok as f64 / 400.0 >= 0.75, "{ok}");
    }

    #[test]
    fn delta_range() {
        let prob = flagged_problem(0.5, 1);
        for d in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(amp_est(&prob, d, 0), Err(Error::OutOfRange(_))));
            assert!(matches!(sqrt_amp_est(&prob, d, 0), Err(Error::OutOfRange(_))));
        }
    }

    #[test]
    fn query_accounting() {
        let prob = flagged_problem(0.3, 1);
        let r = amp_est(&prob, 0.1, 0).unwrap();
        let grovers = (1u64 << r.m) - 1;
        assert_eq!(r.grover_applications, 15 * grovers);
        assert_eq!(r.queries.u.plain, 15);
        assert_eq!(r.queries.u.controlled, 15 * grovers);
        assert_eq!(r.queries.u.controlled_inverse, 15 * grovers);
        assert_eq!(r.queries.u.inverse, 0);
        assert_eq!(r.queries.v.total(), 0);
    }

    #[test]
    fn grover_count_slope() {
        let xs: Vec<f64> = (3..=8).map(|k| (2f64.powi(k)).ln()).collect();
        let prob = flagged_problem(0.3, 1);
        let ys: Vec<f64> = (3..=8)
            .map(|k| {
                let r = amp_est(&prob, 2f64.powi(-k), 0).unwrap();
                (r.grover_applications as f64).ln()
            })
            .collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope - 1.0).abs() <= 0.1, "{slope}");
    }

    #[test]
    fn result_json_keys() {
        let prob = flagged_problem(0.3, 1);
        let r = sqrt_amp_est(&prob, 0.1, 42).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["estimate", "delta", "m", "reps", "seed", "queries", "grover_applications"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        for kind in ["plain", "inverse", "controlled", "controlled_inverse"] {
            assert!(v["queries"]["U"].get(kind).is_some());
            assert!(v["queries"]["V"].get(kind).is_some());
        }
        assert_eq!(v["seed"], 42);
    }

    #[test]
    fn lower_median_picks_lower() {
        assert_eq!(lower_median(&[3.0, 1.0, 2.0, 4.0]), 2.0);
        assert_eq!(lower_median(&[5.0]), 5.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn estimates_in_range_and_deterministic(p in 0.0f64..=1.0, seed in any::<u64>()) {
            let prob = flagged_problem(p, 2);
            let a = amp_est(&prob, 0.05, seed).unwrap();
            let b = amp_est(&prob, 0.05, seed).unwrap();
            prop_assert!((0.0..=1.0).contains(&a.estimate));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn sqrt_squared_matches_amp(p in 0.0f64..=1.0, seed in any::<u64>()) {
            let delta = 0.05;
            let prob = flagged_problem(p, 3);
            let a = amp_est(&prob, delta, seed).unwrap();
            let s = sqrt_amp_est(&prob, delta, seed).unwrap();
            let ok_a = (a.estimate - p).abs() <= delta;
            let ok_s = (s.estimate - p.sqrt()).abs() <= delta;
            if ok_a && ok_s {
                prop_assert!((s.estimate.powi(2) - a.estimate).abs() <= 2.0 * delta);
            }
        }
    }
}
