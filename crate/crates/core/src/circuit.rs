//! Register-level circuits and exact statevector execution.
//!
//! Circuits act on up to five named registers `C, A, B, A′, B′` laid out in
//! that order (first = most significant). Each circuit owns two oracle slots:
//! `U` (the ρ side) and `V` (the ψ or σ side).

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, C64, STRUCTURAL_TOL, ZERO};
use crate::qstate::{PreparationOracle, QueryCounts, QueryKind};

pub const DEFAULT_QUBIT_CAP: usize = 22;
pub const QUBIT_CAP_ENV: &str = "FIDEST_QUBIT_CAP";

/// Qubit cap from `FIDEST_QUBIT_CAP`, or [`DEFAULT_QUBIT_CAP`].
pub fn default_qubit_cap() -> usize {
    std::env::var(QUBIT_CAP_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_QUBIT_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Register {
    C,
    A,
    B,
    #[serde(rename = "A'")]
    APrime,
    #[serde(rename = "B'")]
    BPrime,
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Register::C => "C",
            Register::A => "A",
            Register::B => "B",
            Register::APrime => "A'",
            Register::BPrime => "B'",
        })
    }
}

/// Ordered registers with qubit counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegisterLayout {
    registers: Vec<(Register, usize)>,
}

impl RegisterLayout {
    pub fn new(registers: Vec<(Register, usize)>) -> Result<Self> {
        for (i, (r, size)) in registers.iter().enumerate() {
            if *size == 0 {
                return Err(Error::InvalidCircuit(format!("register {r} is empty")));
            }
            if registers[..i].iter().any(|(other, _)| other == r) {
                return Err(Error::InvalidCircuit(format!("register {r} listed twice")));
            }
        }
        let layout = Self { registers };
        for (primed, plain) in [(Register::APrime, Register::A), (Register::BPrime, Register::B)] {
            if let (Ok(x), Ok(y)) = (layout.size(primed), layout.size(plain)) {
                if x != y {
                    return Err(Error::InvalidCircuit(format!(
                        "{plain} has {y} qubits but {primed} has {x}"
                    )));
                }
            }
        }
        Ok(layout)
    }

    /// `[C:1?] A:k B:b A′:k B′:b`.
    pub fn bipartite_pair(system: usize, ancilla: usize, with_flag: bool) -> Result<Self> {
        let mut regs = Vec::with_capacity(5);
        if with_flag {
            regs.push((Register::C, 1));
        }
        regs.extend([
            (Register::A, system),
            (Register::B, ancilla),
            (Register::APrime, system),
            (Register::BPrime, ancilla),
        ]);
        Self::new(regs)
    }

    pub fn total_qubits(&self) -> usize {
        self.registers.iter().map(|(_, s)| s).sum()
    }

    pub fn registers(&self) -> &[(Register, usize)] {
        &self.registers
    }

    pub fn contains(&self, r: Register) -> bool {
        self.registers.iter().any(|(x, _)| *x == r)
    }

    pub fn size(&self, r: Register) -> Result<usize> {
        self.registers
            .iter()
            .find(|(x, _)| *x == r)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::UnknownRegister(r.to_string()))
    }

    /// Global position of the register's first qubit.
    pub fn offset(&self, r: Register) -> Result<usize> {
        let mut off = 0;
        for (x, s) in &self.registers {
            if *x == r {
                return Ok(off);
            }
            off += s;
        }
        Err(Error::UnknownRegister(r.to_string()))
    }

    /// Global positions of every qubit in `r`, most significant first.
    pub fn positions(&self, r: Register) -> Result<Vec<usize>> {
        let off = self.offset(r)?;
        Ok((off..off + self.size(r)?).collect())
    }

    pub fn qubit(&self, q: QubitRef) -> Result<usize> {
        let size = self.size(q.register)?;
        if q.index >= size {
            return Err(Error::InvalidCircuit(format!(
                "qubit {} out of range for {}-qubit register {}",
                q.index, size, q.register
            )));
        }
        Ok(self.offset(q.register)? + q.index)
    }

    /// Bit mask of all qubits in `registers` within a basis index.
    pub fn mask(&self, registers: &[Register]) -> Result<usize> {
        let n = self.total_qubits();
        let mut mask = 0;
        for &r in registers {
            for p in self.positions(r)? {
                mask |= 1 << (n - 1 - p);
            }
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QubitRef {
    pub register: Register,
    pub index: usize,
}

impl QubitRef {
    pub fn new(register: Register, index: usize) -> Self {
        Self { register, index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum OracleSlot {
    U,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Gate {
    H,
    X,
}

impl Gate {
    fn matrix(self) -> CMatrix {
        match self {
            Gate::H => CMatrix::hadamard(),
            Gate::X => CMatrix::pauli_x(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    /// One oracle invocation on `system ⊗ ancilla`.
    Oracle {
        slot: OracleSlot,
        inverse: bool,
        control: Option<QubitRef>,
        system: Register,
        ancilla: Register,
    },
    Swap {
        a: Register,
        b: Register,
    },
    ControlledSwap {
        control: QubitRef,
        a: Register,
        b: Register,
    },
    Gate {
        gate: Gate,
        target: QubitRef,
    },
    /// `I_flag ⊗ |0⟩⟨0|_zero + X_flag ⊗ (I − |0⟩⟨0|)_zero`.
    Flag {
        flag: QubitRef,
        zero: Vec<Register>,
    },
}

impl Op {
    pub fn oracle(slot: OracleSlot, system: Register, ancilla: Register) -> Self {
        Op::Oracle {
            slot,
            inverse: false,
            control: None,
            system,
            ancilla,
        }
    }

    pub fn oracle_inverse(slot: OracleSlot, system: Register, ancilla: Register) -> Self {
        Op::Oracle {
            slot,
            inverse: true,
            control: None,
            system,
            ancilla,
        }
    }

    fn query_kind(&self) -> Option<(OracleSlot, QueryKind)> {
        match self {
            Op::Oracle {
                slot,
                inverse,
                control,
                ..
            } => {
                let kind = match (*inverse, control.is_some()) {
                    (false, false) => QueryKind::Plain,
                    (true, false) => QueryKind::Inverse,
                    (false, true) => QueryKind::Controlled,
                    (true, true) => QueryKind::ControlledInverse,
                };
                Some((*slot, kind))
            }
            _ => None,
        }
    }

    fn inverted(&self) -> Op {
        match self {
            Op::Oracle {
                slot,
                inverse,
                control,
                system,
                ancilla,
            } => Op::Oracle {
                slot: *slot,
                inverse: !inverse,
                control: *control,
                system: *system,
                ancilla: *ancilla,
            },
            // swaps, H, X and the flag step are involutions
            other => other.clone(),
        }
    }
}

/// Query counts for both oracle slots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct QueryTally {
    #[serde(rename = "U")]
    pub u: QueryCounts,
    #[serde(rename = "V")]
    pub v: QueryCounts,
}

impl QueryTally {
    pub fn slot(&self, slot: OracleSlot) -> &QueryCounts {
        match slot {
            OracleSlot::U => &self.u,
            OracleSlot::V => &self.v,
        }
    }

    fn slot_mut(&mut self, slot: OracleSlot) -> &mut QueryCounts {
        match slot {
            OracleSlot::U => &mut self.u,
            OracleSlot::V => &mut self.v,
        }
    }

    pub fn total(&self) -> u64 {
        self.u.total() + self.v.total()
    }

    pub fn inverted(&self) -> Self {
        Self {
            u: self.u.inverted(),
            v: self.v.inverted(),
        }
    }

    pub fn controlled(&self) -> Self {
        Self {
            u: self.u.controlled(),
            v: self.v.controlled(),
        }
    }

    pub fn scaled(&self, n: u64) -> Self {
        Self {
            u: self.u.scaled(n),
            v: self.v.scaled(n),
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self {
            u: self.u.plus(&other.u),
            v: self.v.plus(&other.v),
        }
    }
}

/// An ordered operation list over a register layout with two oracle slots.
#[derive(Debug, Clone)]
pub struct Circuit {
    layout: RegisterLayout,
    u: PreparationOracle,
    v: PreparationOracle,
    u_inverse: CMatrix,
    v_inverse: CMatrix,
    ops: Vec<Op>,
    qubit_cap: usize,
}

impl Circuit {
    pub fn new(layout: RegisterLayout, u: PreparationOracle, v: PreparationOracle) -> Self {
        let u_inverse = u.inverse();
        let v_inverse = v.inverse();
        Self {
            layout,
            u,
            v,
            u_inverse,
            v_inverse,
            ops: Vec::new(),
            qubit_cap: default_qubit_cap(),
        }
    }

    pub fn with_qubit_cap(mut self, cap: usize) -> Self {
        self.qubit_cap = cap;
        self
    }

    pub fn qubit_cap(&self) -> usize {
        self.qubit_cap
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn oracle(&self, slot: OracleSlot) -> &PreparationOracle {
        match slot {
            OracleSlot::U => &self.u,
            OracleSlot::V => &self.v,
        }
    }

    pub fn total_qubits(&self) -> usize {
        self.layout.total_qubits()
    }

    /// Counter readings of both oracles.
    pub fn oracle_counts(&self) -> QueryTally {
        QueryTally {
            u: self.u.counts(),
            v: self.v.counts(),
        }
    }

    pub fn reset_counts(&self) {
        self.u.reset_counts();
        self.v.reset_counts();
    }

    /// Appends `op` after checking it against the layout.
    pub fn push(&mut self, op: Op) -> Result<&mut Self> {
        self.validate(&op)?;
        self.ops.push(op);
        Ok(self)
    }

    fn validate(&self, op: &Op) -> Result<()> {
        let l = &self.layout;
        match op {
            Op::Oracle {
                slot,
                control,
                system,
                ancilla,
                ..
            } => {
                let oracle = self.oracle(*slot);
                if l.size(*system)? != oracle.system_qubits()
                    || l.size(*ancilla)? != oracle.ancilla_qubits()
                {
                    return Err(Error::InvalidCircuit(format!(
                        "oracle {:?} ({}+{} qubits) does not fit registers {system}+{ancilla}",
                        slot,
                        oracle.system_qubits(),
                        oracle.ancilla_qubits()
                    )));
                }
                if system == ancilla {
                    return Err(Error::InvalidCircuit("oracle registers coincide".into()));
                }
                if let Some(q) = control {
                    l.qubit(*q)?;
                    if q.register == *system || q.register == *ancilla {
                        return Err(Error::InvalidCircuit("control overlaps target".into()));
                    }
                }
            }
            Op::Swap { a, b } | Op::ControlledSwap { a, b, .. } => {
                if a == b || l.size(*a)? != l.size(*b)? {
                    return Err(Error::InvalidCircuit(format!(
                        "cannot swap {a} with {b}"
                    )));
                }
                if let Op::ControlledSwap { control, .. } = op {
                    l.qubit(*control)?;
                    if control.register == *a || control.register == *b {
                        return Err(Error::InvalidCircuit("control overlaps swap".into()));
                    }
                }
            }
            Op::Gate { target, .. } => {
                l.qubit(*target)?;
            }
            Op::Flag { flag, zero } => {
                l.qubit(*flag)?;
                for r in zero {
                    l.size(*r)?;
                    if *r == flag.register {
                        return Err(Error::InvalidCircuit("flag inside its own condition".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Queries made by one execution, counted from the op list.
    pub fn query_tally(&self) -> QueryTally {
        let mut tally = QueryTally::default();
        for (slot, kind) in self.ops.iter().filter_map(Op::query_kind) {
            tally.slot_mut(slot).add(kind, 1);
        }
        tally
    }

    /// Runs the circuit on `|0…0⟩`.
    pub fn execute(&self) -> Result<CVector> {
        Ok(self.execute_counted()?.0)
    }

    /// Runs on `|0…0⟩`, returning the executor's own count of oracle calls.
    pub fn execute_counted(&self) -> Result<(CVector, QueryTally)> {
        self.check_cap()?;
        let dim = 1usize << self.total_qubits();
        self.run(CVector::basis(dim, 0), false)
    }

    /// Applies the circuit to an arbitrary input.
    pub fn execute_from(&self, state: CVector) -> Result<CVector> {
        self.check_cap()?;
        Ok(self.run(state, false)?.0)
    }

    /// Applies the adjoint circuit to an arbitrary input.
    pub fn execute_inverse_from(&self, state: CVector) -> Result<CVector> {
        self.check_cap()?;
        Ok(self.run(state, true)?.0)
    }

    /// Dense unitary of the whole circuit (one execution per basis state).
    pub fn unitary(&self) -> Result<CMatrix> {
        self.check_cap()?;
        let dim = 1usize << self.total_qubits();
        let mut columns = Vec::with_capacity(dim);
        for j in 0..dim {
            columns.push(self.run(CVector::basis(dim, j), false)?.0);
        }
        CMatrix::from_columns(&columns)
    }

    fn check_cap(&self) -> Result<()> {
        let n = self.total_qubits();
        if n > self.qubit_cap {
            return Err(Error::QubitCapExceeded {
                what: "circuit execution",
                requested: n,
                cap: self.qubit_cap,
            });
        }
        Ok(())
    }

    fn run(&self, state: CVector, inverse: bool) -> Result<(CVector, QueryTally)> {
        let n = self.total_qubits();
        if state.dim() != 1 << n {
            return Err(Error::DimensionMismatch(format!(
                "input of dim {} for a {n}-qubit circuit",
                state.dim()
            )));
        }
        let mut amps = state.into_inner();
        let mut shadow = QueryTally::default();
        let mut step = |op: &Op| -> Result<()> {
            self.apply(op, &mut amps, n)?;
            if let Some((slot, kind)) = op.query_kind() {
                self.oracle(slot).record(kind);
                shadow.slot_mut(slot).add(kind, 1);
            }
            Ok(())
        };
        if inverse {
            for op in self.ops.iter().rev() {
                step(&op.inverted())?;
            }
        } else {
            for op in &self.ops {
                step(op)?;
            }
        }
        Ok((CVector::new(amps), shadow))
    }

    fn apply(&self, op: &Op, amps: &mut [C64], n: usize) -> Result<()> {
        let l = &self.layout;
        match op {
            Op::Oracle {
                slot,
                inverse,
                control,
                system,
                ancilla,
            } => {
                let matrix = match (slot, inverse) {
                    (OracleSlot::U, false) => self.u.unitary(),
                    (OracleSlot::U, true) => &self.u_inverse,
                    (OracleSlot::V, false) => self.v.unitary(),
                    (OracleSlot::V, true) => &self.v_inverse,
                };
                let mut targets = l.positions(*system)?;
                targets.extend(l.positions(*ancilla)?);
                let controls = match control {
                    Some(q) => vec![l.qubit(*q)?],
                    None => vec![],
                };
                apply_matrix(amps, n, &targets, matrix, &controls);
            }
            Op::Swap { a, b } => {
                swap_registers(amps, n, &l.positions(*a)?, &l.positions(*b)?, None);
            }
            Op::ControlledSwap { control, a, b } => {
                swap_registers(
                    amps,
                    n,
                    &l.positions(*a)?,
                    &l.positions(*b)?,
                    Some(l.qubit(*control)?),
                );
            }
            Op::Gate { gate, target } => {
                apply_matrix(amps, n, &[l.qubit(*target)?], &gate.matrix(), &[]);
            }
            Op::Flag { flag, zero } => {
                let flag_bit = 1usize << (n - 1 - l.qubit(*flag)?);
                let zero_mask = l.mask(zero)?;
                for idx in 0..amps.len() {
                    if idx & flag_bit == 0 && idx & zero_mask != 0 {
                        amps.swap(idx, idx | flag_bit);
                    }
                }
            }
        }
        Ok(())
    }

    /// Op list as JSON, for debugging.
    pub fn dump_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            layout: &'a RegisterLayout,
            ops: &'a [Op],
        }
        serde_json::to_string_pretty(&Dump {
            layout: &self.layout,
            ops: &self.ops,
        })
        .expect("circuit dump serializes")
    }
}

/// Applies `matrix` to the qubits at `targets` (first = most significant
/// within the gate) wherever every qubit in `controls` is 1.
pub fn apply_matrix(amps: &mut [C64], n: usize, targets: &[usize], matrix: &CMatrix, controls: &[usize]) {
    let g = 1usize << targets.len();
    debug_assert_eq!(matrix.rows(), g);
    let bit = |p: usize| 1usize << (n - 1 - p);
    let target_mask: usize = targets.iter().map(|&p| bit(p)).sum();
    let control_mask: usize = controls.iter().map(|&p| bit(p)).sum();
    let offsets: Vec<usize> = (0..g)
        .map(|j| {
            targets
                .iter()
                .enumerate()
                .filter(|(t, _)| j >> (targets.len() - 1 - t) & 1 == 1)
                .map(|(_, &p)| bit(p))
                .sum()
        })
        .collect();
    let m = matrix.as_slice();
    let mut gathered = vec![ZERO; g];
    for base in 0..amps.len() {
        if base & target_mask != 0 || base & control_mask != control_mask {
            continue;
        }
        for (slot, &off) in gathered.iter_mut().zip(&offsets) {
            *slot = amps[base | off];
        }
        for (i, &off) in offsets.iter().enumerate() {
            let row = &m[i * g..(i + 1) * g];
            amps[base | off] = row.iter().zip(&gathered).map(|(a, b)| a * b).sum();
        }
    }
}

/// Exchanges two equally sized registers, optionally conditioned on a qubit.
fn swap_registers(amps: &mut [C64], n: usize, a: &[usize], b: &[usize], control: Option<usize>) {
    let bit = |p: usize| 1usize << (n - 1 - p);
    let control_bit = control.map_or(0, bit);
    for (&pa, &pb) in a.iter().zip(b) {
        let (ba, bb) = (bit(pa), bit(pb));
        for idx in 0..amps.len() {
            if idx & control_bit == control_bit && idx & ba != 0 && idx & bb == 0 {
                amps.swap(idx, idx ^ ba ^ bb);
            }
        }
    }
}

fn pad_pair(u: &PreparationOracle, v: &PreparationOracle) -> Result<(PreparationOracle, PreparationOracle)> {
    if u.system_qubits() != v.system_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "system sizes differ: {} vs {} qubits",
            u.system_qubits(),
            v.system_qubits()
        )));
    }
    let b = u.ancilla_qubits().max(v.ancilla_qubits());
    let u = u.padded(b - u.ancilla_qubits());
    let v = v.padded(b - v.ancilla_qubits());
    u.reset_counts();
    v.reset_counts();
    Ok((u, v))
}

/// SWAP test: both states prepared once, then `H_C`, controlled-`SWAP_{AA′}`, `H_C`.
pub fn build_swap_test(rho_oracle: &PreparationOracle, psi_oracle: &PreparationOracle) -> Result<Circuit> {
    let (u, v) = pad_pair(rho_oracle, psi_oracle)?;
    let layout = RegisterLayout::bipartite_pair(u.system_qubits(), u.ancilla_qubits(), true)?;
    let control = QubitRef::new(Register::C, 0);
    let mut c = Circuit::new(layout, u, v);
    c.push(Op::oracle(OracleSlot::U, Register::A, Register::B))?
        .push(Op::oracle(OracleSlot::V, Register::APrime, Register::BPrime))?
        .push(Op::Gate { gate: Gate::H, target: control })?
        .push(Op::ControlledSwap {
            control,
            a: Register::A,
            b: Register::APrime,
        })?
        .push(Op::Gate { gate: Gate::H, target: control })?;
    Ok(c)
}

fn push_encoding(c: &mut Circuit) -> Result<()> {
    c.push(Op::oracle(OracleSlot::U, Register::A, Register::B))?
        .push(Op::oracle(OracleSlot::V, Register::APrime, Register::BPrime))?
        .push(Op::Swap {
            a: Register::B,
            b: Register::BPrime,
        })?
        .push(Op::oracle_inverse(OracleSlot::V, Register::A, Register::B))?;
    Ok(())
}

/// Encoding unitary `W = (V†_AB ⊗ I)·SWAP_BB′·(U_AB ⊗ V_A′B′)`.
pub fn build_w(u: &PreparationOracle, v: &PreparationOracle) -> Result<Circuit> {
    let (u, v) = pad_pair(u, v)?;
    let layout = RegisterLayout::bipartite_pair(u.system_qubits(), u.ancilla_qubits(), false)?;
    let mut c = Circuit::new(layout, u, v);
    push_encoding(&mut c)?;
    Ok(c)
}

/// `W` followed by the flag step onto `C`, so that
/// `W′|0⟩ = F|0⟩_C|0⟩_AB|φ⟩ + √(1−F²)|1⟩_C|φ⊥⟩`.
pub fn build_w_prime(u: &PreparationOracle, v: &PreparationOracle) -> Result<Circuit> {
    let (u, v) = pad_pair(u, v)?;
    let layout = RegisterLayout::bipartite_pair(u.system_qubits(), u.ancilla_qubits(), true)?;
    let mut c = Circuit::new(layout, u, v);
    push_encoding(&mut c)?;
    c.push(Op::Flag {
        flag: QubitRef::new(Register::C, 0),
        zero: vec![Register::A, Register::B],
    })?;
    Ok(c)
}

/// `V_A′B′`, `SWAP_AA′`, `V†_A′B′` after `U_AB`: post-selecting `A′B′ = 0`
/// leaves `(σ_A ⊗ I_B)|ρ⟩_AB`.
pub fn build_restructured(u: &PreparationOracle, v: &PreparationOracle) -> Result<Circuit> {
    let (u, v) = pad_pair(u, v)?;
    let layout = RegisterLayout::bipartite_pair(u.system_qubits(), u.ancilla_qubits(), false)?;
    let mut c = Circuit::new(layout, u, v);
    c.push(Op::oracle(OracleSlot::U, Register::A, Register::B))?
        .push(Op::oracle(OracleSlot::V, Register::APrime, Register::BPrime))?
        .push(Op::Swap {
            a: Register::A,
            b: Register::APrime,
        })?
        .push(Op::oracle_inverse(OracleSlot::V, Register::APrime, Register::BPrime))?;
    Ok(c)
}

/// The subspace where every listed register is `|0…0⟩`. No registers means
/// the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Projector {
    pub zero: Vec<Register>,
}

impl Projector {
    pub fn identity() -> Self {
        Self { zero: vec![] }
    }

    pub fn zeros(registers: &[Register]) -> Self {
        Self {
            zero: registers.to_vec(),
        }
    }

    fn mask(&self, layout: &RegisterLayout) -> Result<usize> {
        layout.mask(&self.zero)
    }

    /// `(Π ⊗ I)|state⟩`.
    pub fn apply(&self, state: &CVector, layout: &RegisterLayout) -> Result<CVector> {
        check_dim(state, layout)?;
        let mask = self.mask(layout)?;
        Ok(CVector::new(
            state
                .iter()
                .enumerate()
                .map(|(i, &z)| if i & mask == 0 { z } else { ZERO })
                .collect(),
        ))
    }

    /// `((I − Π) ⊗ I)|state⟩`.
    pub fn apply_complement(&self, state: &CVector, layout: &RegisterLayout) -> Result<CVector> {
        Ok(state.sub(&self.apply(state, layout)?))
    }

    /// Unnormalized vector on the remaining registers after projecting the
    /// listed registers onto `|0…0⟩`.
    pub fn postselect(&self, state: &CVector, layout: &RegisterLayout) -> Result<CVector> {
        check_dim(state, layout)?;
        let mask = self.mask(layout)?;
        Ok(CVector::new(
            state
                .iter()
                .enumerate()
                .filter(|(i, _)| i & mask == 0)
                .map(|(_, &z)| z)
                .collect(),
        ))
    }
}

fn check_dim(state: &CVector, layout: &RegisterLayout) -> Result<()> {
    if state.dim() != 1 << layout.total_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "state of dim {} for a {}-qubit layout",
            state.dim(),
            layout.total_qubits()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedAmplitudeAnalysis {
    pub flagged_amplitude: f64,
    pub good_projector: Projector,
    pub residual_norm: f64,
}

/// Norms of the good and residual components of `state` for `projector`.
pub fn analyze_flagged(
    state: &CVector,
    layout: &RegisterLayout,
    projector: &Projector,
) -> Result<FlaggedAmplitudeAnalysis> {
    let good = projector.apply(state, layout)?;
    let residual = state.sub(&good);
    Ok(FlaggedAmplitudeAnalysis {
        flagged_amplitude: good.norm(),
        good_projector: projector.clone(),
        residual_norm: residual.norm(),
    })
}

/// Joint outcome distribution of measuring `registers` in the computational
/// basis; outcome bits are ordered as the registers are listed.
pub fn marginal_distribution(
    state: &CVector,
    layout: &RegisterLayout,
    registers: &[Register],
) -> Result<Vec<f64>> {
    check_dim(state, layout)?;
    let n = layout.total_qubits();
    let mut positions = Vec::new();
    for &r in registers {
        positions.extend(layout.positions(r)?);
    }
    let mut probs = vec![0.0; 1 << positions.len()];
    for (idx, z) in state.iter().enumerate() {
        let outcome = positions
            .iter()
            .fold(0usize, |acc, &p| (acc << 1) | ((idx >> (n - 1 - p)) & 1));
        probs[outcome] += z.norm_sqr();
    }
    Ok(probs)
}

/// Errors unless `state` has unit norm.
pub fn check_unit_norm(state: &CVector) -> Result<()> {
    let norm = state.norm();
    if (norm - 1.0).abs() > STRUCTURAL_TOL {
        return Err(Error::NotNormalized { norm });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{kron, DensityMatrix};
    use crate::qstate::{sample_instance, InstanceKind, RandomInstanceSpec};
    use crate::test_util::random_unit_vector;

    fn mixed(k: usize, rank: usize, seed: u64) -> (DensityMatrix, PreparationOracle) {
        sample_instance(&RandomInstanceSpec::new(k, rank, seed, InstanceKind::GinibreMixed)).unwrap()
    }

    fn pure(k: usize, seed: u64) -> (DensityMatrix, PreparationOracle, CVector) {
        let psi = random_unit_vector(1 << k, seed);
        let oracle = PreparationOracle::from_pure_state(&psi, k, "psi").unwrap();
        (DensityMatrix::from_pure(&psi).unwrap(), oracle, psi)
    }

    fn trivial_circuit(qubits: usize) -> Circuit {
        let (_, o, _) = pure(1, 0);
        let layout = RegisterLayout::new(vec![(Register::C, qubits)]).unwrap();
        Circuit::new(layout, o.clone(), o)
    }

    #[test]
    fn empty_circuit_returns_zero_state() {
        let c = trivial_circuit(3);
        assert_eq!(c.execute().unwrap(), CVector::basis(8, 0));
    }

    #[test]
    fn single_hadamard() {
        let mut circ = trivial_circuit(1);
        circ.push(Op::Gate { gate: Gate::H, target: QubitRef::new(Register::C, 0) })
            .unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(circ.execute().unwrap().max_abs_diff(&CVector::from_real(&[s, s])) <= 1e-15);
    }

    #[test]
    fn qubit_cap_is_enforced() {
        let c = trivial_circuit(5).with_qubit_cap(4);
        assert!(matches!(
            c.execute(),
            Err(Error::QubitCapExceeded { requested: 5, cap: 4, .. })
        ));
    }

    #[test]
    fn apply_matrix_matches_kron() {
        // 3 qubits, gate on qubits (2, 0): ordering inside the gate matters
        let g = crate::test_util::random_matrix(4, 4, 8);
        let psi = random_unit_vector(8, 1);
        let mut amps = psi.clone().into_inner();
        apply_matrix(&mut amps, 3, &[0, 1], &g, &[]);
        let expected = kron(&g, &CMatrix::identity(2)).apply(&psi).unwrap();
        assert!(CVector::new(amps).max_abs_diff(&expected) <= 1e-14);

        let mut amps = psi.clone().into_inner();
        apply_matrix(&mut amps, 3, &[1, 2], &g, &[0]);
        let expected = g.controlled().apply(&psi).unwrap();
        assert!(CVector::new(amps).max_abs_diff(&expected) <= 1e-14);
    }

    #[test]
    fn register_layout_rules() {
        assert!(RegisterLayout::new(vec![(Register::A, 1), (Register::APrime, 2)]).is_err());
        assert!(RegisterLayout::new(vec![(Register::A, 1), (Register::A, 1)]).is_err());
        let l = RegisterLayout::bipartite_pair(2, 2, true).unwrap();
        assert_eq!(l.total_qubits(), 9);
        assert_eq!(l.offset(Register::APrime).unwrap(), 5);
        assert_eq!(l.positions(Register::B).unwrap(), vec![3, 4]);
    }

    #[test]
    fn swap_test_identical_pure_states() {
        let (_, v, _) = pure(1, 4);
        let c = build_swap_test(&v, &v).unwrap();
        let p = marginal_distribution(&c.execute().unwrap(), c.layout(), &[Register::C]).unwrap();
        assert!((p[0] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn swap_test_orthogonal_states() {
        let a = PreparationOracle::from_pure_state(&CVector::basis(2, 0), 1, "a").unwrap();
        let b = PreparationOracle::from_pure_state(&CVector::basis(2, 1), 1, "b").unwrap();
        let c = build_swap_test(&a, &b).unwrap();
        let p = marginal_distribution(&c.execute().unwrap(), c.layout(), &[Register::C]).unwrap();
        assert!((p[0] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn swap_test_law_on_random_pair() {
        for seed in 0..10 {
            let (rho, u) = mixed(2, 3, seed);
            let (_, v, psi) = pure(2, 100 + seed);
            let c = build_swap_test(&u, &v).unwrap();
            let p = marginal_distribution(&c.execute().unwrap(), c.layout(), &[Register::C]).unwrap();
            let expected = (1.0 + rho.expectation(&psi).unwrap()) / 2.0;
            assert!((p[0] - expected).abs() <= 1e-10);
        }
    }

    #[test]
    fn swap_test_rejects_size_mismatch() {
        let (_, u) = mixed(1, 2, 0);
        let (_, v, _) = pure(2, 0);
        assert!(matches!(build_swap_test(&u, &v), Err(Error::DimensionMismatch(_))));
        assert!(build_w(&u, &v).is_err());
    }

    #[test]
    fn w_on_equal_pure_states_has_unit_amplitude() {
        let (_, v, _) = pure(2, 9);
        let c = build_w(&v, &v).unwrap();
        let a = analyze_flagged(
            &c.execute().unwrap(),
            c.layout(),
            &Projector::zeros(&[Register::A, Register::B]),
        )
        .unwrap();
        assert!((a.flagged_amplitude - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn w_amplitude_is_fidelity_to_pure() {
        for seed in 0..10 {
            let (rho, u) = mixed(2, 1 + (seed as usize % 4), seed);
            let (_, v, psi) = pure(2, 50 + seed);
            let c = build_w(&u, &v).unwrap();
            let a = analyze_flagged(
                &c.execute().unwrap(),
                c.layout(),
                &Projector::zeros(&[Register::A, Register::B]),
            )
            .unwrap();
            let f2 = rho.expectation(&psi).unwrap();
            assert!((a.flagged_amplitude.powi(2) - f2).abs() <= 1e-10);
            assert!((a.flagged_amplitude.powi(2) + a.residual_norm.powi(2) - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn w_query_tally() {
        let (_, u) = mixed(1, 2, 1);
        let (_, v, _) = pure(1, 2);
        let c = build_w(&u, &v).unwrap();
        let t = c.query_tally();
        assert_eq!((t.u.plain, t.u.total()), (1, 1));
        assert_eq!((t.v.plain, t.v.inverse, t.v.total()), (1, 1, 2));
        let (_, shadow) = c.execute_counted().unwrap();
        assert_eq!(shadow, t);
        assert_eq!(c.oracle_counts(), t);
    }

    #[test]
    fn w_prime_flag_distribution() {
        let (rho, u) = mixed(1, 2, 3);
        let (_, v, psi) = pure(1, 4);
        let c = build_w_prime(&u, &v).unwrap();
        let state = c.execute().unwrap();
        let p = marginal_distribution(&state, c.layout(), &[Register::C]).unwrap();
        assert!((p[0] - rho.expectation(&psi).unwrap()).abs() <= 1e-10);
        // C = 0 exactly on A,B = 0
        let good = Projector::zeros(&[Register::C]).apply(&state, c.layout()).unwrap();
        let ab = Projector::zeros(&[Register::A, Register::B])
            .apply_complement(&good, c.layout())
            .unwrap();
        assert!(ab.norm() <= 1e-12);
    }

    #[test]
    fn w_prime_deterministic_extremes() {
        let (_, v, _) = pure(1, 5);
        let c = build_w_prime(&v, &v).unwrap();
        let p = marginal_distribution(&c.execute().unwrap(), c.layout(), &[Register::C]).unwrap();
        assert!((p[0] - 1.0).abs() <= 1e-10);

        let zero = PreparationOracle::from_pure_state(&CVector::basis(2, 0), 1, "zero").unwrap();
        let one = PreparationOracle::from_pure_state(&CVector::basis(2, 1), 1, "one").unwrap();
        let c = build_w_prime(&zero, &one).unwrap();
        let p = marginal_distribution(&c.execute().unwrap(), c.layout(), &[Register::C]).unwrap();
        assert!((p[1] - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn restructured_with_maximally_mixed_sigma() {
        let (_, u) = mixed(1, 2, 6);
        let sigma = DensityMatrix::maximally_mixed(1);
        let v = PreparationOracle::from_density(&sigma, "sigma").unwrap();
        let c = build_restructured(&u, &v).unwrap();
        let a = analyze_flagged(
            &c.execute().unwrap(),
            c.layout(),
            &Projector::zeros(&[Register::APrime, Register::BPrime]),
        )
        .unwrap();
        assert!((a.flagged_amplitude.powi(2) - 0.25).abs() <= 1e-10);
    }

    #[test]
    fn restructured_postselection_is_sigma_on_purification() {
        let (_, u) = mixed(1, 2, 7);
        let (sigma, v) = mixed(1, 2, 8);
        let c = build_restructured(&u, &v).unwrap();
        let out = Projector::zeros(&[Register::APrime, Register::BPrime])
            .postselect(&c.execute().unwrap(), c.layout())
            .unwrap();
        let expected = kron(sigma.matrix(), &CMatrix::identity(2))
            .apply(&u.prepared_state())
            .unwrap();
        assert!(out.max_abs_diff(&expected) <= 1e-10);
    }

    #[test]
    fn inverse_execution_undoes_circuit() {
        let (_, u) = mixed(1, 2, 9);
        let (_, v, _) = pure(1, 10);
        let c = build_w_prime(&u, &v).unwrap();
        let forward = c.execute().unwrap();
        let back = c.execute_inverse_from(forward).unwrap();
        assert!(back.max_abs_diff(&CVector::basis(32, 0)) <= 1e-12);
        let inverse_tally = c.oracle_counts();
        assert_eq!(inverse_tally.v.plain, 2);
        assert_eq!(inverse_tally.v.inverse, 2);
        assert_eq!(inverse_tally.u.inverse, 1);
    }

    #[test]
    fn circuit_unitary_is_unitary() {
        let (_, u) = mixed(1, 2, 11);
        let (_, v, _) = pure(1, 12);
        let m = build_w_prime(&u, &v).unwrap().unitary().unwrap();
        assert!(m.unitarity_deviation() <= 1e-10);
    }

    #[test]
    fn padding_mismatched_ancillas() {
        let phi = random_unit_vector(2, 3);
        let narrow = PreparationOracle::from_pure_state(&phi, 1, "narrow").unwrap();
        let wide = PreparationOracle::from_pure_state(&phi, 3, "wide").unwrap();
        let c = build_w(&narrow, &wide).unwrap();
        assert_eq!(c.layout().size(Register::B).unwrap(), 3);
        let a = analyze_flagged(
            &c.execute().unwrap(),
            c.layout(),
            &Projector::zeros(&[Register::A, Register::B]),
        )
        .unwrap();
        assert!((a.flagged_amplitude - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn identity_projector_keeps_everything() {
        let state = random_unit_vector(16, 2);
        let layout = RegisterLayout::bipartite_pair(1, 1, false).unwrap();
        let a = analyze_flagged(&state, &layout, &Projector::identity()).unwrap();
        assert!((a.flagged_amplitude - 1.0).abs() <= 1e-12);
        assert!(a.residual_norm <= 1e-12);
    }

    #[test]
    fn invalid_ops_rejected() {
        let mut c = trivial_circuit(2);
        assert!(c
            .push(Op::Gate { gate: Gate::X, target: QubitRef::new(Register::C, 2) })
            .is_err());
        assert!(c
            .push(Op::Gate { gate: Gate::X, target: QubitRef::new(Register::A, 0) })
            .is_err());
        assert!(c.push(Op::Swap { a: Register::C, b: Register::C }).is_err());
    }

    #[test]
    fn dump_lists_ops() {
        let (_, v, _) = pure(1, 0);
        let text = build_w(&v, &v).unwrap().dump_json();
        assert!(text.contains("\"op\": \"swap\""));
        assert!(text.contains("\"B'\""));
    }
}
