//! Accept projectors, the `Q` operator and its spectrum.
//!
//! With `A = (I + |G⟩⟨G|)/2` and `B = I − |G⟩⟨G|` on one copy,
//! `Q = Σ_r A ⊗ … ⊗ B_r ⊗ … ⊗ A` and `Tr(P_fail ρ_out) = Tr(Q ρ)/M`.
//! Every product vector with `|G'⟩ ⟂ |G⟩` on `k` copies and `|G⟩` on the rest
//! is an eigenvector with eigenvalue `k/2^(k-1)`.

use crate::dense::{
    c, eig_hermitian, is_hermitian, kron_registers, kron_vectors, max_abs, CMatrix, CVector, StateVector,
    MIXED_STATE_CAP,
};
use crate::error::{Error, Result};
use crate::protocol::{Key, Target};

fn check_size(target: &Target, copies: usize) -> Result<()> {
    if copies < 2 {
        return Err(Error::validation("need at least two copies"));
    }
    Error::check_cap("Q operator qubits (M·n)", target.num_qubits() * copies, MIXED_STATE_CAP)
}

/// `⊗_{i≠r} (I + T_{t_i})/2 ⊗ I_r`, copy 1 on the lowest qubits.
pub fn build_accept_projector(target: &Target, key: &Key) -> Result<CMatrix> {
    let copies = key.copies();
    check_size(target, copies)?;
    let dim = target.state().amplitudes().len();
    let id = CMatrix::identity(dim, dim);
    let factors = (1..=copies)
        .map(|copy| match key.test_for_copy(copy) {
            Some(t) => Ok((&id + target.tests()[t - 1].to_matrix()?) * c(0.5, 0.0)),
            None => Ok(id.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(kron_registers(&factors))
}

/// The `Q` operator for a target and copy count.
#[derive(Debug, Clone, PartialEq)]
pub struct QOperator {
    pub qubits_per_copy: usize,
    pub copies: usize,
    pub matrix: CMatrix,
}

impl QOperator {
    pub fn expectation(&self, rho: &CMatrix) -> Result<f64> {
        if rho.nrows() != self.matrix.nrows() {
            return Err(Error::dimension("state and Q differ in size"));
        }
        Ok((&self.matrix * rho).trace().re)
    }

    pub fn is_valid(&self) -> bool {
        is_hermitian(&self.matrix, 1e-10)
    }
}

fn single_copy_ops(target: &Target) -> (CMatrix, CMatrix) {
    let dim = target.state().amplitudes().len();
    let id = CMatrix::identity(dim, dim);
    let proj = target.state().projector();
    let a = (&id + &proj) * c(0.5, 0.0);
    let b = &id - &proj;
    (a, b)
}

/// `Q` from the projector form `Σ_r ⊗_{i≠r} A_i ⊗ B_r`.
pub fn build_q(target: &Target, copies: usize) -> Result<QOperator> {
    check_size(target, copies)?;
    let (a, b) = single_copy_ops(target);
    let total = a.nrows().pow(copies as u32);
    let mut q = CMatrix::zeros(total, total);
    for r in 0..copies {
        let factors: Vec<CMatrix> = (0..copies).map(|i| if i == r { b.clone() } else { a.clone() }).collect();
        q += kron_registers(&factors);
    }
    Ok(QOperator {
        qubits_per_copy: target.num_qubits(),
        copies,
        matrix: q,
    })
}

/// `Q` from the explicit key sum `Σ_r Σ_t |S|^{-(M-1)} ⊗_{i≠r} (T_{t_i}+I)/2 ⊗ B_r`.
pub fn build_q_from_keys(target: &Target, copies: usize) -> Result<CMatrix> {
    check_size(target, copies)?;
    let group = target.num_tests();
    let key_count = (group as f64).powi(copies as i32 - 1);
    if key_count * copies as f64 > crate::protocol::EXACT_KEY_CAP as f64 {
        return Err(Error::Capacity {
            what: "key-sum Q construction",
            cap: crate::protocol::EXACT_KEY_CAP,
            got: (key_count * copies as f64) as usize,
        });
    }
    let (_, b) = single_copy_ops(target);
    let dim = b.nrows();
    let id = CMatrix::identity(dim, dim);
    let halves: Vec<CMatrix> = target
        .tests()
        .iter()
        .map(|t| Ok((&id + t.to_matrix()?) * c(0.5, 0.0)))
        .collect::<Result<_>>()?;
    let total = dim.pow(copies as u32);
    let mut q = CMatrix::zeros(total, total);
    let mut digits = vec![0usize; copies - 1];
    for r in 0..copies {
        digits.iter_mut().for_each(|d| *d = 0);
        loop {
            let mut it = digits.iter();
            let factors: Vec<CMatrix> = (0..copies)
                .map(|i| if i == r { b.clone() } else { halves[*it.next().unwrap()].clone() })
                .collect();
            q += kron_registers(&factors);
            // Odometer over t.
            let mut pos = 0;
            while pos < digits.len() {
                digits[pos] += 1;
                if digits[pos] < group {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
            if pos == digits.len() {
                break;
            }
        }
    }
    Ok(q / c(key_count, 0.0))
}

/// Applies a single-copy operator to copy `copy` (0-based) of an `M`-copy vector.
fn apply_on_copy(v: &CVector, op: &CMatrix, copy: usize, n: usize) -> CVector {
    let d = 1usize << n;
    let lo = 1usize << (copy * n);
    let mut out = CVector::zeros(v.len());
    for idx in 0..v.len() {
        let local = (idx / lo) % d;
        let base = idx - local * lo;
        let amp = v[idx];
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        for row in 0..d {
            let e = op[(row, local)];
            if e.norm_sqr() != 0.0 {
                out[base + row * lo] += e * amp;
            }
        }
    }
    out
}

/// `Q v` without forming `Q`.
pub fn apply_q(target: &Target, copies: usize, v: &CVector) -> Result<CVector> {
    let n = target.num_qubits();
    if v.len() != 1usize << (n * copies) {
        return Err(Error::dimension("vector size does not match M copies"));
    }
    let (a, b) = single_copy_ops(target);
    let mut out = CVector::zeros(v.len());
    for r in 0..copies {
        let mut w = v.clone();
        for i in 0..copies {
            w = apply_on_copy(&w, if i == r { &b } else { &a }, i, n);
        }
        out += w;
    }
    Ok(out)
}

/// `k / 2^(k-1)`, zero for `k = 0`.
pub fn eigenvalue_for_k(k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 / 2f64.powi(k as i32 - 1)
    }
}

/// Orthonormal basis of the complement of the target state, by Gram–Schmidt
/// over computational basis vectors.
pub fn complement_basis(target: &Target) -> Vec<StateVector> {
    let dim = target.state().amplitudes().len();
    let mut basis: Vec<CVector> = vec![target.state().amplitudes().clone()];
    for e in 0..dim {
        if basis.len() == dim {
            break;
        }
        let mut v = CVector::zeros(dim);
        v[e] = c(1.0, 0.0);
        for b in &basis {
            let proj = b.dotc(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / c(norm, 0.0));
        }
    }
    basis
        .into_iter()
        .skip(1)
        .map(|v| StateVector::normalized(v).expect("nonzero after Gram–Schmidt"))
        .collect()
}

/// `|G'⟩` on the copies in `positions` (1-based), `|G⟩` on the rest.
pub fn build_appendix_eigenvector(
    target: &Target,
    copies: usize,
    positions: &[usize],
    gprime: &StateVector,
) -> Result<StateVector> {
    check_size(target, copies)?;
    if gprime.num_qubits() != target.num_qubits() {
        return Err(Error::dimension("|G'⟩ and target differ in size"));
    }
    if target.state().inner(gprime).norm() > 1e-10 {
        return Err(Error::validation("|G'⟩ is not orthogonal to the target"));
    }
    if let Some(&bad) = positions.iter().find(|&&p| p == 0 || p > copies) {
        return Err(Error::validation(format!("position {bad} outside [1, {copies}]")));
    }
    let parts: Vec<CVector> = (1..=copies)
        .map(|i| {
            if positions.contains(&i) {
                gprime.amplitudes().clone()
            } else {
                target.state().amplitudes().clone()
            }
        })
        .collect();
    StateVector::new(kron_vectors(&parts))
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Predicted spectrum: `(k, k/2^(k-1), C(M,k)(2^n-1)^k)` for `k = 0..=M`.
pub fn expected_spectrum(qubits: usize, copies: usize) -> Vec<(usize, f64, u128)> {
    let other = (1u128 << qubits) - 1;
    (0..=copies)
        .map(|k| (k, eigenvalue_for_k(k), binomial(copies, k) * other.pow(k as u32)))
        .collect()
}

/// Result of diagonalising `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct QBoundCheck {
    pub max_eigenvalue: f64,
    pub pass: bool,
    pub eigenvalues: Vec<f64>,
}

pub fn verify_q_bound(target: &Target, copies: usize) -> Result<QBoundCheck> {
    let q = build_q(target, copies)?;
    let (eigenvalues, _) = eig_hermitian(&q.matrix)?;
    let max_eigenvalue = *eigenvalues.last().expect("nonempty spectrum");
    Ok(QBoundCheck {
        max_eigenvalue,
        pass: max_eigenvalue <= 1.0 + 1e-9,
        eigenvalues,
    })
}

/// One CSV row of the spectrum report.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub k: usize,
    pub eigenvalue: f64,
    pub expected_multiplicity: u128,
    /// Weight of the numerical eigenspace for this eigenvalue inside the `k`-family
    /// subspace (`|G'⟩` on exactly `k` copies).
    pub observed_multiplicity: f64,
}

/// Splits `v` by how many copies lie in the complement of the target; returns squared norms per `k`.
fn family_weights(target: &Target, copies: usize, v: &CVector) -> Vec<f64> {
    let n = target.num_qubits();
    let (_, b) = single_copy_ops(target);
    let p = target.state().projector();
    let mut weights = vec![0.0; copies + 1];
    let mut stack = vec![(v.clone(), 0usize, 0usize)];
    while let Some((w, copy, k)) = stack.pop() {
        if copy == copies {
            weights[k] += w.norm_squared();
            continue;
        }
        stack.push((apply_on_copy(&w, &p, copy, n), copy + 1, k));
        stack.push((apply_on_copy(&w, &b, copy, n), copy + 1, k + 1));
    }
    weights
}

/// Full spectral report for `Q`.
pub fn spectrum_report(target: &Target, copies: usize) -> Result<(Vec<SpectrumRow>, QBoundCheck)> {
    let q = build_q(target, copies)?;
    let (vals, vecs) = eig_hermitian(&q.matrix)?;
    let expected = expected_spectrum(target.num_qubits(), copies);
    let mut rows = Vec::with_capacity(expected.len());
    for &(k, ev, mult) in &expected {
        let mut observed = 0.0;
        for (i, &l) in vals.iter().enumerate() {
            if (l - ev).abs() < 1e-6 {
                let col: CVector = vecs.column(i).into_owned();
                observed += family_weights(target, copies, &col)[k];
            }
        }
        rows.push(SpectrumRow {
            k,
            eigenvalue: ev,
            expected_multiplicity: mult,
            observed_multiplicity: observed,
        });
    }
    let max_eigenvalue = *vals.last().expect("nonempty spectrum");
    Ok((
        rows,
        QBoundCheck {
            max_eigenvalue,
            pass: max_eigenvalue <= 1.0 + 1e-9,
            eigenvalues: vals,
        },
    ))
}

/// Largest entrywise deviation between numerical eigenvalues and the predicted multiset.
pub fn spectrum_deviation(qubits: usize, copies: usize, eigenvalues: &[f64]) -> Result<f64> {
    let mut expected: Vec<f64> = expected_spectrum(qubits, copies)
        .into_iter()
        .flat_map(|(_, ev, m)| std::iter::repeat_n(ev, m as usize))
        .collect();
    if expected.len() != eigenvalues.len() {
        return Err(Error::dimension(format!(
            "predicted {} eigenvalues, got {}",
            expected.len(),
            eigenvalues.len()
        )));
    }
    expected.sort_by(f64::total_cmp);
    let mut got = eigenvalues.to_vec();
    got.sort_by(f64::total_cmp);
    Ok(expected.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Max deviation of `Q v = λ v` over a random-free family: every position set of
/// size `k` combined with every complement basis vector (matrix-free `Q`).
pub fn eigen_relation_residual(target: &Target, copies: usize) -> Result<f64> {
    let comp = complement_basis(target);
    let mut worst: f64 = 0.0;
    for mask in 0u32..(1 << copies) {
        let positions: Vec<usize> = (0..copies).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect();
        let ev = eigenvalue_for_k(positions.len());
        for g in &comp {
            let v = build_appendix_eigenvector(target, copies, &positions, g)?;
            let qv = apply_q(target, copies, v.amplitudes())?;
            let resid = (qv - v.amplitudes() * c(ev, 0.0)).norm();
            worst = worst.max(resid);
        }
    }
    Ok(worst)
}

pub fn max_entry_difference(a: &CMatrix, b: &CMatrix) -> f64 {
    max_abs(&(a - b))
}
