//! Unitary ensembles: Haar sampling, frame potentials and the certified fidelity bound.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::mbqc::{induced_unitary, MeasurementPattern, UnitaryEnsembleSample};
use crate::dense::{c, fidelity_sq, is_unitary, CMatrix, DensityMatrix, StateVector};
use crate::error::{Error, Result};

/// Haar-random unitary from the QR decomposition of a complex Ginibre matrix.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        c(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s)
    });
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix the column phases so the distribution is exactly Haar.
    let mut u = q;
    for j in 0..dim {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / c(d.norm(), 0.0) } else { c(1.0, 0.0) };
        for i in 0..dim {
            u[(i, j)] *= ph;
        }
    }
    u
}

fn check_samples(samples: &[CMatrix], t: usize) -> Result<usize> {
    if samples.len() < 2 {
        return Err(Error::validation("frame potential needs at least two samples"));
    }
    if t == 0 {
        return Err(Error::validation("moment order t must be at least 1"));
    }
    let d = samples[0].nrows();
    if samples.iter().any(|u| u.nrows() != d || u.ncols() != d) {
        return Err(Error::dimension("samples differ in dimension"));
    }
    Ok(d)
}

fn pair_value(a: &CMatrix, b: &CMatrix, t: usize) -> f64 {
    // Tr(A†B) as a flat inner product.
    let tr = a.iter().zip(b.iter()).fold(c(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y);
    tr.norm_sqr().powi(t as i32)
}

/// Frame potential estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePotential {
    pub value: f64,
    pub stderr: f64,
}

/// Mean of `|Tr(U_a† U_b)|^{2t}` over ordered pairs `a ≠ b`.
pub fn frame_potential(samples: &[CMatrix], t: usize) -> Result<f64> {
    Ok(frame_potential_with_error(samples, t)?.value)
}

/// Frame potential plus the standard error of the pair average.
pub fn frame_potential_with_error(samples: &[CMatrix], t: usize) -> Result<FramePotential> {
    check_samples(samples, t)?;
    let n = samples.len();
    let row_means: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|a| {
            let s: f64 = (0..n).filter(|&b| b != a).map(|b| pair_value(&samples[a], &samples[b], t)).sum();
            s / (n - 1) as f64
        })
        .collect();
    let value = row_means.iter().sum::<f64>() / n as f64;
    let var = row_means.iter().map(|m| (m - value).powi(2)).sum::<f64>() / (n - 1).max(1) as f64;
    Ok(FramePotential {
        value,
        stderr: 2.0 * (var / n as f64).sqrt(),
    })
}

/// Exact frame potential `Σ_{a,b} p_a p_b |Tr(U_a† U_b)|^{2t}` of a weighted ensemble.
pub fn ensemble_frame_potential(ensemble: &[(f64, CMatrix)], t: usize) -> Result<f64> {
    if ensemble.is_empty() || t == 0 {
        return Err(Error::validation("need a nonempty ensemble and t ≥ 1"));
    }
    let d = ensemble[0].1.nrows();
    if ensemble.iter().any(|(p, u)| *p < 0.0 || u.nrows() != d || u.ncols() != d) {
        return Err(Error::validation("ensemble weights must be nonnegative and dimensions equal"));
    }
    let mut total = 0.0;
    for (pa, a) in ensemble {
        for (pb, b) in ensemble {
            total += pa * pb * pair_value(a, b, t);
        }
    }
    Ok(total)
}

/// Haar frame potential for `d ≥ t`: `t!`.
pub fn haar_frame_potential(t: usize) -> f64 {
    (1..=t).map(|k| k as f64).product()
}

/// Lower bound `1 − 1/(P_acc·M)` on the squared fidelity of the accepted ensemble.
pub fn certified_ensemble_fidelity(p_acc: f64, copies: usize) -> Result<f64> {
    if !(p_acc > 0.0 && p_acc <= 1.0 + 1e-9) {
        return Err(Error::validation(format!("P_acc must lie in (0, 1], got {p_acc}")));
    }
    let p_acc = p_acc.min(1.0);
    if copies < 2 {
        return Err(Error::validation("M must be at least 2"));
    }
    Ok(1.0 - 1.0 / (p_acc * copies as f64))
}

/// Weighted ensemble from exhaustive enumeration of the uncorrected pattern.
pub fn pattern_ensemble(pattern: &MeasurementPattern) -> Result<Vec<UnitaryEnsembleSample>> {
    super::mbqc::enumerate_ensemble(pattern)
}

/// Per-outcome fidelity `F(Γ^{m̄}(ρ_ACC), U^{m̄}|+⟩)²` together with `p_m̄` under `ρ_ACC`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchFidelity {
    pub outcomes: Vec<u8>,
    pub probability: f64,
    pub fidelity_sq: f64,
}

/// Evaluates every branch of the uncorrected pattern on an accepted-average state.
pub fn branch_fidelities(pattern: &MeasurementPattern, rho_acc: &DensityMatrix) -> Result<Vec<BranchFidelity>> {
    let k = pattern.measurements().len();
    let n_in = pattern.inputs().len();
    let mut out = Vec::with_capacity(1 << k);
    for idx in 0..1usize << k {
        let bits: Vec<u8> = (0..k).map(|i| ((idx >> i) & 1) as u8).collect();
        let sample = induced_unitary(pattern, &bits)?;
        debug_assert!(is_unitary(&sample.unitary, 1e-8));
        let ideal = StateVector::normalized(&sample.unitary * StateVector::plus(n_in).amplitudes())?;
        let branch = super::mbqc::branch_state(rho_acc, pattern, &bits)?;
        let p = branch.trace().re;
        let f = if p > 1e-14 {
            fidelity_sq(&DensityMatrix::from_raw(&branch / c(p, 0.0)), &ideal)?
        } else {
            1.0
        };
        out.push(BranchFidelity {
            outcomes: bits,
            probability: p,
            fidelity_sq: f,
        });
    }
    Ok(out)
}
