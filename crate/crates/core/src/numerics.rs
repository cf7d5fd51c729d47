//! Dense complex linear algebra.
//!
//! Everything here is row-major with the big-endian qubit convention: in an
//! `n`-qubit vector, qubit 0 is the most significant bit of the basis index.
//! Matrices are small (at most a few hundred rows) so all operations are
//! straightforward dense loops.

use std::fmt;
use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance for structural invariants (Hermiticity, unit trace, unitarity, norms).
pub const STRUCTURAL_TOL: f64 = 1e-10;
/// Tolerance for decomposition residuals (eigen-reconstruction, `S*S = M`).
pub const DECOMPOSITION_TOL: f64 = 1e-8;
/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as roundoff and set to zero.
pub const PSD_CLAMP: f64 = 1e-10;
/// Nonnegative eigenvalues below this fraction of the spectral radius are
/// indistinguishable from eigensolver noise and are zeroed before square roots.
pub const RANK_FLOOR: f64 = 1e-13;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// A dense complex column vector.
#[derive(Clone, PartialEq)]
pub struct CVector {
    data: Vec<C64>,
}

impl CVector {
    pub fn new(data: Vec<C64>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![ZERO; dim],
        }
    }

    /// Computational basis vector `|index⟩`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[index] = ONE;
        v
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self {
            data: values.iter().map(|&x| c(x, 0.0)).collect(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_inner(self) -> Vec<C64> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, C64> {
        self.data.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `⟨self|other⟩`, antilinear in `self`.
    pub fn inner(&self, other: &CVector) -> C64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scale(&self, s: C64) -> CVector {
        CVector::new(self.data.iter().map(|z| z * s).collect())
    }

    pub fn add(&self, other: &CVector) -> CVector {
        CVector::new(self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &CVector) -> CVector {
        CVector::new(self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect())
    }

    pub fn normalized(&self) -> Result<CVector> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numerical("cannot normalize a zero vector".into()));
        }
        Ok(self.scale(c(1.0 / n, 0.0)))
    }

    /// Errors unless the Euclidean norm is within [`STRUCTURAL_TOL`] of 1.
    pub fn check_normalized(&self) -> Result<()> {
        let norm = self.norm();
        if (norm - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::NotNormalized { norm });
        }
        Ok(())
    }

    /// `|self⟩ ⊗ |other⟩`.
    pub fn kron(&self, other: &CVector) -> CVector {
        let mut out = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.data {
            for b in &other.data {
                out.push(a * b);
            }
        }
        CVector::new(out)
    }

    /// `|self⟩⟨self|`.
    pub fn outer(&self) -> CMatrix {
        let n = self.dim();
        CMatrix::from_fn(n, n, |i, j| self.data[i] * self.data[j].conj())
    }

    pub fn max_abs_diff(&self, other: &CVector) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl fmt::Debug for CVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.data.iter()).finish()
    }
}

impl Index<usize> for CVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for CVector {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.data[i]
    }
}

/// A dense complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Ok(Self {
            rows: r,
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn diagonal(entries: &[C64]) -> Self {
        let n = entries.len();
        Self::from_fn(n, n, |i, j| if i == j { entries[i] } else { ZERO })
    }

    pub fn diagonal_real(entries: &[f64]) -> Self {
        let n = entries.len();
        Self::from_fn(n, n, |i, j| if i == j { c(entries[i], 0.0) } else { ZERO })
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[CVector]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, CVector::dim);
        if columns.iter().any(|v| v.dim() != rows) {
            return Err(Error::DimensionMismatch("columns of unequal length".into()));
        }
        Ok(Self::from_fn(rows, cols, |i, j| columns[j][i]))
    }

    pub fn pauli_x() -> Self {
        Self::from_rows(&[vec![ZERO, ONE], vec![ONE, ZERO]]).unwrap()
    }

    pub fn pauli_z() -> Self {
        Self::diagonal_real(&[1.0, -1.0])
    }

    pub fn hadamard() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_rows(&[vec![c(s, 0.0), c(s, 0.0)], vec![c(s, 0.0), c(-s, 0.0)]]).unwrap()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn column(&self, j: usize) -> CVector {
        CVector::new((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &CMatrix) -> Result<CMatrix> {
        self.check_same_shape(other)?;
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &CMatrix) -> Result<CMatrix> {
        self.check_same_shape(other)?;
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    fn check_same_shape(&self, other: &CMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, a) in row.iter().enumerate() {
                if *a == ZERO {
                    continue;
                }
                let other_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(other_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn apply(&self, v: &CVector) -> Result<CVector> {
        if self.cols != v.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot apply {}x{} matrix to vector of dim {}",
                self.rows,
                self.cols,
                v.dim()
            )));
        }
        Ok(CVector::new(
            (0..self.rows)
                .map(|i| {
                    self.data[i * self.cols..(i + 1) * self.cols]
                        .iter()
                        .zip(v.iter())
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect(),
        ))
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Entrywise max `|self - other|`.
    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Entrywise max `|M - M†|`.
    pub fn hermiticity_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// Entrywise max `|U†U - I|`.
    pub fn unitarity_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += self.get(k, i).conj() * self.get(k, j);
                }
                if i == j {
                    acc -= ONE;
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }

    pub fn check_unitary(&self) -> Result<()> {
        let deviation = self.unitarity_deviation();
        if deviation > STRUCTURAL_TOL {
            return Err(Error::NotUnitary { deviation });
        }
        Ok(())
    }

    /// Block-diagonal `I ⊕ self`: the control is a new most-significant qubit.
    pub fn controlled(&self) -> CMatrix {
        let n = self.rows;
        CMatrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
            (true, true) => {
                if i == j {
                    ONE
                } else {
                    ZERO
                }
            }
            (false, false) => self.get(i - n, j - n),
            _ => ZERO,
        })
    }

    fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self.get(i, j);
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (br, bc) = (b.rows, b.cols);
    CMatrix::from_fn(a.rows * br, a.cols * bc, |i, j| {
        a.get(i / br, j / bc) * b.get(i % br, j % bc)
    })
}

/// Reduced matrix over the subsystems listed in `keep`.
///
/// `dims` are the subsystem dimensions in order (first = most significant).
/// `keep` must be strictly increasing; the result orders the kept subsystems
/// as they appear in `dims`.
pub fn partial_trace(state: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    let total: usize = dims.iter().product();
    if !state.is_square() || state.rows != total {
        return Err(Error::DimensionMismatch(format!(
            "subsystem dims {dims:?} (product {total}) do not match {}x{} matrix",
            state.rows, state.cols
        )));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) || keep.iter().any(|&k| k >= dims.len()) {
        return Err(Error::DimensionMismatch(format!(
            "keep list {keep:?} must be strictly increasing indices into {} subsystems",
            dims.len()
        )));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|i| !keep.contains(i)).collect();
    let keep_dims: Vec<usize> = keep.iter().map(|&i| dims[i]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&i| dims[i]).collect();
    let dk: usize = keep_dims.iter().product();
    let dt: usize = traced_dims.iter().product();

    // strides of each subsystem in the full index
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let offset = |subsystems: &[usize], sub_dims: &[usize], mut idx: usize| -> usize {
        let mut full = 0;
        for (pos, &s) in subsystems.iter().enumerate().rev() {
            let d = sub_dims[pos];
            full += (idx % d) * strides[s];
            idx /= d;
        }
        full
    };
    let keep_off: Vec<usize> = (0..dk).map(|i| offset(keep, &keep_dims, i)).collect();
    let traced_off: Vec<usize> = (0..dt).map(|t| offset(&traced, &traced_dims, t)).collect();

    let mut out = CMatrix::zeros(dk, dk);
    for i in 0..dk {
        for j in 0..dk {
            let mut acc = ZERO;
            for &t in &traced_off {
                acc += state.get(keep_off[i] + t, keep_off[j] + t);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// `tr_B |v⟩⟨v|` for a bipartite pure vector with `A` the leading factor.
pub fn reduced_state_of_pure(v: &CVector, dim_a: usize, dim_b: usize) -> Result<CMatrix> {
    if v.dim() != dim_a * dim_b {
        return Err(Error::DimensionMismatch(format!(
            "vector of dim {} is not {dim_a}x{dim_b}",
            v.dim()
        )));
    }
    let s = v.as_slice();
    Ok(CMatrix::from_fn(dim_a, dim_a, |i, j| {
        (0..dim_b)
            .map(|b| s[i * dim_b + b] * s[j * dim_b + b].conj())
            .sum()
    }))
}

/// Eigendecomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the eigenvector for `eigenvalues[i]`.
    pub eigenvectors: CMatrix,
}

impl HermitianEigen {
    /// `Σ f(λᵢ) vᵢvᵢ†`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let weights: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        CMatrix::from_fn(n, n, |i, j| {
            (0..n)
                .filter(|&k| weights[k] != 0.0)
                .map(|k| v.get(i, k) * v.get(j, k).conj() * weights[k])
                .sum()
        })
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.reconstruct_with(|l| l)
    }
}

/// Hermitian eigendecomposition with eigenvalues in ascending order.
pub fn herm_eig(m: &CMatrix) -> Result<HermitianEigen> {
    let deviation = m.hermiticity_deviation();
    if deviation > STRUCTURAL_TOL {
        return Err(Error::NotHermitian { deviation });
    }
    let n = m.rows;
    // symmetrize so the solver sees an exactly Hermitian input
    let sym = CMatrix::from_fn(n, n, |i, j| (m.get(i, j) + m.get(j, i).conj()) * 0.5);
    let eig = nalgebra::SymmetricEigen::new(sym.to_nalgebra());

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(HermitianEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Clamps roundoff-level eigenvalues of a PSD spectrum to zero.
///
/// Errors if an eigenvalue is below `-PSD_CLAMP`.
pub fn clamp_psd_spectrum(eigenvalues: &[f64]) -> Result<Vec<f64>> {
    let radius = eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let floor = RANK_FLOOR * radius.max(1.0);
    eigenvalues
        .iter()
        .map(|&l| {
            if l < -PSD_CLAMP {
                Err(Error::NotPositiveSemidefinite { min_eigenvalue: l })
            } else if l < floor {
                Ok(0.0)
            } else {
                Ok(l)
            }
        })
        .collect()
}

/// Principal square root of a PSD matrix.
pub fn matrix_sqrt_psd(m: &CMatrix) -> Result<CMatrix> {
    let mut eig = herm_eig(m)?;
    eig.eigenvalues = clamp_psd_spectrum(&eig.eigenvalues)?;
    Ok(eig.reconstruct_with(f64::sqrt))
}

/// A validated density matrix on `k` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    num_qubits: usize,
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidDensityMatrix(format!(
                "not square ({}x{})",
                matrix.rows, matrix.cols
            )));
        }
        let dim = matrix.rows;
        if dim == 0 || !dim.is_power_of_two() {
            return Err(Error::InvalidDensityMatrix(format!(
                "dimension {dim} is not a power of two"
            )));
        }
        let deviation = matrix.hermiticity_deviation();
        if deviation > STRUCTURAL_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        let trace = matrix.trace().re;
        if (trace - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::BadTrace { trace });
        }
        let eig = herm_eig(&matrix)?;
        let min = eig.eigenvalues[0];
        if min < -PSD_CLAMP {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min,
            });
        }
        Ok(Self {
            num_qubits: dim.trailing_zeros() as usize,
            matrix,
        })
    }

    pub fn from_pure(psi: &CVector) -> Result<Self> {
        psi.check_normalized()?;
        Self::new(psi.outer())
    }

    pub fn maximally_mixed(num_qubits: usize) -> Self {
        let d = 1usize << num_qubits;
        Self {
            num_qubits,
            matrix: CMatrix::identity(d).scale(c(1.0 / d as f64, 0.0)),
        }
    }

    pub fn diagonal(weights: &[f64]) -> Result<Self> {
        Self::new(CMatrix::diagonal_real(weights))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.matrix.rows
    }

    #[inline]
    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn eigen(&self) -> HermitianEigen {
        herm_eig(&self.matrix).expect("validated density matrix is Hermitian")
    }

    /// `tr(ρ²)`.
    pub fn purity(&self) -> f64 {
        let m = &self.matrix;
        let n = m.rows;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (m.get(i, j) * m.get(j, i)).re;
            }
        }
        acc
    }

    /// Number of eigenvalues above 1e-12.
    pub fn rank(&self) -> usize {
        let eig = self.eigen();
        let floor = 1e-12;
        eig.eigenvalues.iter().filter(|&&l| l > floor).count()
    }

    pub fn is_pure(&self) -> bool {
        self.purity() >= 1.0 - 1e-9
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn expectation(&self, psi: &CVector) -> Result<f64> {
        let rho_psi = self.matrix.apply(psi)?;
        Ok(psi.inner(&rho_psi).re)
    }
}

/// Wire format for matrices and vectors: `{"rows","cols","re","im"}`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&CMatrix> for MatrixJson {
    fn from(m: &CMatrix) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            re: m.data.iter().map(|z| z.re).collect(),
            im: m.data.iter().map(|z| z.im).collect(),
        }
    }
}

impl From<&CVector> for MatrixJson {
    fn from(v: &CVector) -> Self {
        Self {
            rows: v.dim(),
            cols: 1,
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
    }
}

impl TryFrom<&MatrixJson> for CMatrix {
    type Error = Error;
    fn try_from(j: &MatrixJson) -> Result<Self> {
        if j.re.len() != j.im.len() {
            return Err(Error::DimensionMismatch(
                "re and im arrays differ in length".into(),
            ));
        }
        CMatrix::new(
            j.rows,
            j.cols,
            j.re.iter().zip(&j.im).map(|(&r, &i)| c(r, i)).collect(),
        )
    }
}

impl TryFrom<&MatrixJson> for CVector {
    type Error = Error;
    fn try_from(j: &MatrixJson) -> Result<Self> {
        if j.cols != 1 {
            return Err(Error::DimensionMismatch(format!(
                "vector must have one column, got {}",
                j.cols
            )));
        }
        Ok(CMatrix::try_from(j)?.column(0))
    }
}

impl Serialize for CMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for CMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = MatrixJson::deserialize(d)?;
        CMatrix::try_from(&j).map_err(serde::de::Error::custom)
    }
}
