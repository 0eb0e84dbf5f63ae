//! Exact dense linear algebra on small registers.
//!
//! Basis index bit `q` is the computational value of qubit `q`, so a tensor
//! product `ops[0] ⊗ ops[1] ⊗ …` in register order is `… ⊗ ops[1] ⊗ ops[0]`
//! in Kronecker order (see [`kron_registers`]).

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::pauli::PauliString;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Qubit cap for pure global states handled by the protocol engine.
pub const PURE_STATE_CAP: usize = 20;
/// Qubit cap for dense density matrices and Q construction.
pub const MIXED_STATE_CAP: usize = 12;

const NORM_TOL: f64 = 1e-10;
const HERMITIAN_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-9;
// Full PSD check via eigendecomposition only below this side length.
const PSD_CHECK_MAX_DIM: usize = 256;

pub(crate) fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::dimension(format!("{dim} is not a power of two")));
    }
    Ok(dim.trailing_zeros() as usize)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && max_abs(&(m - m.adjoint())) <= tol
}

pub fn is_unitary(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && max_abs(&(m.adjoint() * m - CMatrix::identity(m.nrows(), m.ncols()))) <= tol
}

/// Tensor product in register order: `ops[0]` acts on the lowest qubits.
pub fn kron_registers(ops: &[CMatrix]) -> CMatrix {
    let mut acc = CMatrix::from_element(1, 1, c(1.0, 0.0));
    for op in ops {
        acc = op.kronecker(&acc);
    }
    acc
}

pub fn kron_vectors(parts: &[CVector]) -> CVector {
    let mut acc = CVector::from_element(1, c(1.0, 0.0));
    for v in parts {
        acc = v.kronecker(&acc);
    }
    acc
}

/// Normalised pure state of `2^q` amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(CVector);

impl StateVector {
    pub fn new(amps: CVector) -> Result<Self> {
        qubits_for_dim(amps.len())?;
        let norm = amps.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::validation(format!("state norm {norm} is not 1")));
        }
        Ok(StateVector(amps))
    }

    /// Normalises `amps`; fails on the zero vector.
    pub fn normalized(amps: CVector) -> Result<Self> {
        qubits_for_dim(amps.len())?;
        let norm = amps.norm();
        if norm < 1e-300 {
            return Err(Error::validation("cannot normalise the zero vector"));
        }
        Ok(StateVector(amps / c(norm, 0.0)))
    }

    pub fn basis(qubits: usize, index: usize) -> Self {
        let mut v = CVector::zeros(1 << qubits);
        v[index] = c(1.0, 0.0);
        StateVector(v)
    }

    /// `|+⟩^⊗q`.
    pub fn plus(qubits: usize) -> Self {
        let dim = 1usize << qubits;
        StateVector(CVector::from_element(dim, c(1.0 / (dim as f64).sqrt(), 0.0)))
    }

    pub fn tensor(parts: &[StateVector]) -> Self {
        let vs: Vec<CVector> = parts.iter().map(|s| s.0.clone()).collect();
        StateVector(kron_vectors(&vs))
    }

    pub fn num_qubits(&self) -> usize {
        self.0.len().trailing_zeros() as usize
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.0
    }

    pub fn into_amplitudes(self) -> CVector {
        self.0
    }

    pub fn projector(&self) -> CMatrix {
        &self.0 * self.0.adjoint()
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix(self.projector())
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.0.dotc(&other.0)
    }
}

/// Unit-trace positive semidefinite matrix on `q` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dimension("density matrix must be square"));
        }
        qubits_for_dim(m.nrows())?;
        if !is_hermitian(&m, HERMITIAN_TOL) {
            return Err(Error::validation("density matrix is not Hermitian"));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > NORM_TOL || tr.im.abs() > NORM_TOL {
            return Err(Error::validation(format!("density matrix trace {tr} is not 1")));
        }
        if m.nrows() <= PSD_CHECK_MAX_DIM {
            let (vals, _) = eig_hermitian(&m)?;
            if vals[0] < -PSD_TOL {
                return Err(Error::validation(format!(
                    "density matrix has negative eigenvalue {}",
                    vals[0]
                )));
            }
        }
        Ok(DensityMatrix(m))
    }

    /// Wraps without validation. Callers guarantee the invariants.
    pub(crate) fn from_raw(m: CMatrix) -> Self {
        DensityMatrix(m)
    }

    pub fn maximally_mixed(qubits: usize) -> Self {
        let dim = 1usize << qubits;
        DensityMatrix(CMatrix::identity(dim, dim) * c(1.0 / dim as f64, 0.0))
    }

    pub fn tensor(parts: &[DensityMatrix]) -> Self {
        let ms: Vec<CMatrix> = parts.iter().map(|d| d.0.clone()).collect();
        DensityMatrix(kron_registers(&ms))
    }

    /// Convex combination `Σ w_i ρ_i`; weights must sum to one.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::validation("empty mixture"))?;
        let dim = first.1.dim();
        let mut acc = CMatrix::zeros(dim, dim);
        let mut total = 0.0;
        for (w, d) in parts {
            if d.dim() != dim {
                return Err(Error::dimension("mixture components differ in size"));
            }
            if *w < 0.0 {
                return Err(Error::validation("negative mixture weight"));
            }
            acc += &d.0 * c(*w, 0.0);
            total += w;
        }
        if (total - 1.0).abs() > NORM_TOL {
            return Err(Error::validation("mixture weights do not sum to 1"));
        }
        Ok(DensityMatrix(acc))
    }

    pub fn num_qubits(&self) -> usize {
        self.0.nrows().trailing_zeros() as usize
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn expectation_pure(&self, psi: &StateVector) -> f64 {
        psi.0.dotc(&(&self.0 * &psi.0)).re
    }

    pub fn expectation(&self, op: &CMatrix) -> C64 {
        (&self.0 * op).trace()
    }

    pub fn conjugate_by(&self, u: &CMatrix) -> DensityMatrix {
        DensityMatrix(u * &self.0 * u.adjoint())
    }
}

/// Either a pure or a mixed state.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl QuantumState {
    pub fn num_qubits(&self) -> usize {
        match self {
            QuantumState::Pure(v) => v.num_qubits(),
            QuantumState::Mixed(d) => d.num_qubits(),
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        match self {
            QuantumState::Pure(v) => v.to_density(),
            QuantumState::Mixed(d) => d.clone(),
        }
    }
}

/// A `±1`-valued observable.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    Pauli(PauliString),
    Dense(CMatrix),
}

impl Observable {
    /// Validates a dense matrix as an involutive Hermitian observable.
    pub fn dense(m: CMatrix) -> Result<Self> {
        if !is_hermitian(&m, 1e-9) {
            return Err(Error::validation("observable is not Hermitian"));
        }
        let sq = &m * &m;
        if max_abs(&(sq - CMatrix::identity(m.nrows(), m.ncols()))) > 1e-9 {
            return Err(Error::validation("observable does not square to identity"));
        }
        Ok(Observable::Dense(m))
    }

    pub fn pauli(p: PauliString) -> Result<Self> {
        if !p.is_hermitian() {
            return Err(Error::validation(format!("{p} is not Hermitian")));
        }
        Ok(Observable::Pauli(p))
    }

    pub fn num_qubits(&self) -> usize {
        match self {
            Observable::Pauli(p) => p.num_qubits(),
            Observable::Dense(m) => m.nrows().trailing_zeros() as usize,
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        match self {
            Observable::Pauli(p) => p.to_matrix(),
            Observable::Dense(m) => Ok(m.clone()),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            Observable::Pauli(p) => p.is_identity_up_to_phase() && p.phase_exponent() == 0,
            Observable::Dense(m) => max_abs(&(m - CMatrix::identity(m.nrows(), m.ncols()))) < 1e-12,
        }
    }

    pub fn apply_vec(&self, v: &CVector) -> CVector {
        match self {
            Observable::Pauli(p) => apply_pauli_vec(p, v),
            Observable::Dense(m) => m * v,
        }
    }

    /// `O · m`.
    pub fn apply_left(&self, m: &CMatrix) -> CMatrix {
        match self {
            Observable::Pauli(p) => apply_pauli_left(p, m),
            Observable::Dense(o) => o * m,
        }
    }

    /// Embeds an observable on copy-local qubits `offset..offset+k` of a `total`-qubit register.
    pub fn embed(&self, offset: usize, total: usize) -> Result<Observable> {
        match self {
            Observable::Pauli(p) => Ok(Observable::Pauli(p.embed(offset, total)?)),
            Observable::Dense(m) => {
                let k = self.num_qubits();
                if offset + k > total {
                    return Err(Error::dimension("embedding exceeds register"));
                }
                let lo = 1usize << offset;
                let hi = 1usize << (total - offset - k);
                Ok(Observable::Dense(kron_registers(&[
                    CMatrix::identity(lo, lo),
                    m.clone(),
                    CMatrix::identity(hi, hi),
                ])))
            }
        }
    }
}

pub fn apply_pauli_vec(p: &PauliString, v: &CVector) -> CVector {
    let mut out = CVector::zeros(v.len());
    for (b, amp) in v.iter().enumerate() {
        let (b2, ph) = p.apply_to_basis(b);
        out[b2] = ph * amp;
    }
    out
}

/// `P · m` without forming `P`.
pub fn apply_pauli_left(p: &PauliString, m: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(m.nrows(), m.ncols());
    for row in 0..m.nrows() {
        let (r2, ph) = p.apply_to_basis(row);
        for col in 0..m.ncols() {
            out[(r2, col)] = ph * m[(row, col)];
        }
    }
    out
}

/// Applies a 2×2 operator on qubit `q` to every column of `m` (`op · m`).
pub fn apply_1q_left(m: &CMatrix, op: &CMatrix, q: usize) -> CMatrix {
    let bit = 1usize << q;
    let mut out = CMatrix::zeros(m.nrows(), m.ncols());
    for row in 0..m.nrows() {
        if row & bit != 0 {
            continue;
        }
        let (r0, r1) = (row, row | bit);
        for col in 0..m.ncols() {
            let (a0, a1) = (m[(r0, col)], m[(r1, col)]);
            out[(r0, col)] = op[(0, 0)] * a0 + op[(0, 1)] * a1;
            out[(r1, col)] = op[(1, 0)] * a0 + op[(1, 1)] * a1;
        }
    }
    out
}

/// `op ρ op†` for a 2×2 `op` on qubit `q`.
pub fn conjugate_1q(m: &CMatrix, op: &CMatrix, q: usize) -> CMatrix {
    let left = apply_1q_left(m, op, q);
    apply_1q_left(&left.adjoint(), op, q).adjoint()
}

/// Reorders qubits so that new qubit `j` is old qubit `order[j]`.
pub fn permute_qubits(m: &CMatrix, order: &[usize]) -> CMatrix {
    let map = |b: usize| order.iter().enumerate().fold(0, |acc, (j, &q)| acc | (((b >> q) & 1) << j));
    let mut out = CMatrix::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for col in 0..m.ncols() {
            out[(map(r), map(col))] = m[(r, col)];
        }
    }
    out
}

/// Outcome of a projective `±1` measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub outcome: i8,
    pub probability: f64,
    pub post_state: QuantumState,
}

/// Projects onto the `sign` eigenspace of `obs`; returns (unnormalised state, probability).
pub fn project(state: &QuantumState, obs: &Observable, sign: i8) -> (QuantumState, f64) {
    let s = c(sign as f64, 0.0);
    match state {
        QuantumState::Pure(v) => {
            let w = (&v.0 + obs.apply_vec(&v.0) * s) * c(0.5, 0.0);
            let p = w.norm_squared();
            (QuantumState::Pure(StateVector(w)), p)
        }
        QuantumState::Mixed(d) => {
            // Π ρ Π with Π = (I + sO)/2, using ρ O = (O ρ)† for Hermitian ρ and O.
            let half = (&d.0 + obs.apply_left(&d.0) * s) * c(0.5, 0.0);
            let out = (&half + obs.apply_left(&half.adjoint()).adjoint() * s) * c(0.5, 0.0);
            let p = out.trace().re;
            (QuantumState::Mixed(DensityMatrix(out)), p)
        }
    }
}

fn renormalize(state: QuantumState, p: f64) -> QuantumState {
    match state {
        QuantumState::Pure(v) => QuantumState::Pure(StateVector(v.0 / c(p.sqrt(), 0.0))),
        QuantumState::Mixed(d) => QuantumState::Mixed(DensityMatrix(d.0 / c(p, 0.0))),
    }
}

/// Probability of the `+1` outcome of `obs`.
pub fn plus_probability(state: &QuantumState, obs: &Observable) -> f64 {
    let exp = match state {
        QuantumState::Pure(v) => v.0.dotc(&obs.apply_vec(&v.0)).re,
        QuantumState::Mixed(d) => obs.apply_left(&d.0).trace().re,
    };
    ((1.0 + exp) / 2.0).clamp(0.0, 1.0)
}

/// Samples a projective measurement of a `±1` observable.
pub fn measure_observable<R: Rng + ?Sized>(
    state: &QuantumState,
    obs: &Observable,
    rng: &mut R,
) -> Result<Measurement> {
    if state.num_qubits() != obs.num_qubits() {
        return Err(Error::dimension(format!(
            "observable on {} qubits, state on {}",
            obs.num_qubits(),
            state.num_qubits()
        )));
    }
    let p_plus = plus_probability(state, obs);
    let outcome = if rng.random::<f64>() < p_plus { 1 } else { -1 };
    let (post, p) = project(state, obs, outcome);
    if p <= 0.0 {
        return Err(Error::Internal("sampled a zero-probability branch".into()));
    }
    Ok(Measurement {
        outcome,
        probability: p,
        post_state: renormalize(post, p),
    })
}

/// Measures a Hermitian Pauli string one qubit at a time and multiplies the
/// single-qubit outcomes, as separate players holding one qubit each would.
pub fn measure_pauli_locally<R: Rng + ?Sized>(
    state: &QuantumState,
    p: &PauliString,
    rng: &mut R,
) -> Result<Measurement> {
    if !p.is_hermitian() {
        return Err(Error::validation("non-Hermitian Pauli string"));
    }
    let n = p.num_qubits();
    let mut current = state.clone();
    let mut outcome: i8 = if p.phase_exponent() == 2 { -1 } else { 1 };
    let mut probability = 1.0;
    for q in 0..n {
        let letter = p.get(q);
        if letter == crate::pauli::Pauli::I {
            continue;
        }
        let local = Observable::Pauli(PauliString::single(n, q, letter));
        let m = measure_observable(&current, &local, rng)?;
        outcome *= m.outcome;
        probability *= m.probability;
        current = m.post_state;
    }
    Ok(Measurement {
        outcome,
        probability,
        post_state: current,
    })
}

/// `F(ρ, |ψ⟩) = √⟨ψ|ρ|ψ⟩`.
pub fn fidelity(rho: &DensityMatrix, target: &StateVector) -> Result<f64> {
    Ok(fidelity_sq(rho, target)?.sqrt())
}

/// `⟨ψ|ρ|ψ⟩`, the squared fidelity.
pub fn fidelity_sq(rho: &DensityMatrix, target: &StateVector) -> Result<f64> {
    if rho.dim() != target.0.len() {
        return Err(Error::dimension("fidelity operands differ in size"));
    }
    Ok(rho.expectation_pure(target).clamp(0.0, 1.0))
}

fn check_keep(keep: &[usize], q: usize) -> Result<Vec<usize>> {
    let mut k = keep.to_vec();
    k.sort_unstable();
    k.dedup();
    if k.len() != keep.len() || k.iter().any(|&i| i >= q) {
        return Err(Error::validation(format!("bad qubit subset {keep:?} for {q} qubits")));
    }
    Ok(k)
}

fn split_index(keep: &[usize], rest: &[usize], ik: usize, ir: usize) -> usize {
    let mut b = 0usize;
    for (j, &q) in keep.iter().enumerate() {
        b |= ((ik >> j) & 1) << q;
    }
    for (j, &q) in rest.iter().enumerate() {
        b |= ((ir >> j) & 1) << q;
    }
    b
}

/// Reduced state on `keep`; kept qubits are renumbered in ascending order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let q = rho.num_qubits();
    let keep = check_keep(keep, q)?;
    let rest: Vec<usize> = (0..q).filter(|i| !keep.contains(i)).collect();
    let dk = 1usize << keep.len();
    let dr = 1usize << rest.len();
    let mut out = CMatrix::zeros(dk, dk);
    for i in 0..dk {
        for j in 0..dk {
            let mut acc = c(0.0, 0.0);
            for e in 0..dr {
                acc += rho.0[(split_index(&keep, &rest, i, e), split_index(&keep, &rest, j, e))];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(DensityMatrix(out))
}

/// Reduced state of a (possibly unnormalised) pure vector.
pub fn partial_trace_pure(v: &CVector, keep: &[usize]) -> Result<CMatrix> {
    let q = qubits_for_dim(v.len())?;
    let keep = check_keep(keep, q)?;
    let rest: Vec<usize> = (0..q).filter(|i| !keep.contains(i)).collect();
    let dk = 1usize << keep.len();
    let dr = 1usize << rest.len();
    // Reshape into a dk × dr matrix A, reduced state = A A†.
    let a = CMatrix::from_fn(dk, dr, |i, e| v[split_index(&keep, &rest, i, e)]);
    Ok(&a * a.adjoint())
}

/// Reduced state of a general (possibly unnormalised) state as a raw matrix.
pub fn reduce(state: &QuantumState, keep: &[usize]) -> Result<CMatrix> {
    match state {
        QuantumState::Pure(v) => partial_trace_pure(&v.0, keep),
        QuantumState::Mixed(d) => Ok(partial_trace(d, keep)?.0),
    }
}

/// Hermitian eigendecomposition: ascending eigenvalues and matching
/// orthonormal eigenvector columns.
pub fn eig_hermitian(h: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    if !h.is_square() {
        return Err(Error::dimension("eigendecomposition of a non-square matrix"));
    }
    if !is_hermitian(h, 1e-9 * max_abs(h).max(1.0)) {
        return Err(Error::validation("matrix is not Hermitian"));
    }
    // Symmetrise so the solver sees an exactly Hermitian input.
    let sym = (h + h.adjoint()) * c(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..h.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMatrix::from_fn(h.nrows(), h.ncols(), |r, col| eig.eigenvectors[(r, order[col])]);
    Ok((vals, vecs))
}

/// Square root of a positive semidefinite matrix; small negative eigenvalues are clipped.
pub fn sqrt_psd(m: &CMatrix) -> Result<CMatrix> {
    let (vals, vecs) = eig_hermitian(m)?;
    let d = CMatrix::from_diagonal(&CVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| c(v.max(0.0).sqrt(), 0.0)),
    ));
    Ok(&vecs * d * vecs.adjoint())
}

/// Uhlmann fidelity `Tr √(√ρ σ √ρ)` between two mixed states.
pub fn fidelity_mixed(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::dimension("fidelity operands differ in size"));
    }
    let s = sqrt_psd(rho.matrix())?;
    let inner = &s * sigma.matrix() * &s;
    let (vals, _) = eig_hermitian(&inner)?;
    Ok(vals.iter().map(|v| v.max(0.0).sqrt()).sum::<f64>().clamp(0.0, 1.0))
}
