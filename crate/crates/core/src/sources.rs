//! Ready-made adversarial sources and random states.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dense::{apply_pauli_vec, c, CMatrix, CVector, DensityMatrix, QuantumState, StateVector};
use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString};
use crate::protocol::{SourceStrategy, Target};

/// Haar-random pure state on `qubits` qubits.
pub fn random_pure_state<R: Rng + ?Sized>(qubits: usize, rng: &mut R) -> StateVector {
    let dim = 1usize << qubits;
    let v = CVector::from_fn(dim, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    StateVector::normalized(v).expect("Gaussian vector is nonzero")
}

/// Random mixed state of full rank from a Ginibre matrix.
pub fn random_density<R: Rng + ?Sized>(qubits: usize, rng: &mut R) -> DensityMatrix {
    let dim = 1usize << qubits;
    let g = CMatrix::from_fn(dim, dim, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::new(m / c(tr, 0.0)).expect("Ginibre product is a density matrix")
}

/// `Z₀|ψ⟩`: orthogonal to any target whose tests include an `X` on qubit 0.
pub fn orthogonal_state(target: &Target) -> Result<StateVector> {
    let z0 = PauliString::single(target.num_qubits(), 0, Pauli::Z);
    let v = StateVector::new(apply_pauli_vec(&z0, target.state().amplitudes()))?;
    if v.inner(target.state()).norm() > 1e-10 {
        return Err(Error::validation("Z on qubit 0 does not produce an orthogonal state for this target"));
    }
    Ok(v)
}

/// `√f|ψ⟩ + √(1−f) Z₀|ψ⟩`, with fidelity² `f` to the target.
pub fn partial_state(target: &Target, fidelity_sq: f64) -> Result<StateVector> {
    if !(0.0..=1.0).contains(&fidelity_sq) {
        return Err(Error::validation(format!("fidelity² {fidelity_sq} outside [0, 1]")));
    }
    let perp = orthogonal_state(target)?;
    let v = target.state().amplitudes() * c(fidelity_sq.sqrt(), 0.0)
        + perp.amplitudes() * c((1.0 - fidelity_sq).sqrt(), 0.0);
    StateVector::new(v)
}

/// Honest copies except `position`, which holds the orthogonal state.
pub fn replace_orthogonal(target: &Target, position: usize) -> Result<SourceStrategy> {
    Ok(SourceStrategy::SingleCopyReplace {
        position,
        state: orthogonal_state(target)?.to_density(),
    })
}

/// Honest copies except `position`, which has fidelity² `f` with the target.
pub fn replace_partial(target: &Target, position: usize, fidelity_sq: f64) -> Result<SourceStrategy> {
    Ok(SourceStrategy::SingleCopyReplace {
        position,
        state: partial_state(target, fidelity_sq)?.to_density(),
    })
}

/// Independent random mixed state on every copy.
pub fn random_product_source<R: Rng + ?Sized>(qubits: usize, copies: usize, rng: &mut R) -> SourceStrategy {
    SourceStrategy::ProductState((0..copies).map(|_| random_density(qubits, rng)).collect())
}

/// Random pure state entangled across all copies.
pub fn random_coherent_source<R: Rng + ?Sized>(qubits: usize, copies: usize, rng: &mut R) -> SourceStrategy {
    SourceStrategy::Coherent(QuantumState::Pure(random_pure_state(qubits * copies, rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::fidelity_sq;
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn replacements_have_requested_fidelity() {
        for g in ["line:3", "ring:4", "star:4", "complete:3"] {
            let t = Target::from_graph(&g.parse::<Graph>().unwrap()).unwrap();
            let o = orthogonal_state(&t).unwrap();
            assert!(fidelity_sq(&o.to_density(), t.state()).unwrap() < 1e-20);
            for f in [0.0, 0.3, 0.9, 1.0] {
                let p = partial_state(&t, f).unwrap();
                assert!((fidelity_sq(&p.to_density(), t.state()).unwrap() - f).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_states_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for q in 1..4 {
            let rho = random_density(q, &mut rng);
            assert!(DensityMatrix::new(rho.into_matrix()).is_ok());
            assert!((random_pure_state(q, &mut rng).amplitudes().norm() - 1.0).abs() < 1e-12);
        }
    }
}
