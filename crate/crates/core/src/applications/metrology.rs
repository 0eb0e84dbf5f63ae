//! Phase estimation with GHZ probes: quantum Fisher information and certified bounds.

use crate::dense::{c, eig_hermitian, is_hermitian, CMatrix, CVector, DensityMatrix, StateVector};
use crate::error::{Error, Result};
use crate::graph::{Graph, LocalRotation};
use crate::protocol::{
    certify_trial, exact_evaluation, run_trials, MonteCarlo, ProtocolConfig, SourceStrategy, Target, TrialRecord,
};

/// Eigenvalue-sum cutoff below which QFI terms are dropped.
pub const QFI_CUTOFF: f64 = 1e-12;

/// `J_z = ½ Σ_k Z_k` on `n` qubits.
pub fn jz(n: usize) -> CMatrix {
    let dim = 1usize << n;
    CMatrix::from_diagonal(&CVector::from_fn(dim, |b, _| {
        c(0.5 * (n as f64 - 2.0 * (b as u32).count_ones() as f64), 0.0)
    }))
}

/// Quantum Fisher information of `rho` for the generator `h`.
pub fn qfi(rho: &DensityMatrix, h: &CMatrix) -> Result<f64> {
    if h.nrows() != rho.dim() || h.ncols() != rho.dim() {
        return Err(Error::dimension("generator and state differ in size"));
    }
    if !is_hermitian(h, 1e-10) {
        return Err(Error::validation("generator is not Hermitian"));
    }
    let (vals, vecs) = eig_hermitian(rho.matrix())?;
    let hv = vecs.adjoint() * h * &vecs;
    let mut f = 0.0;
    for i in 0..vals.len() {
        for j in 0..vals.len() {
            let s = vals[i] + vals[j];
            if s > QFI_CUTOFF {
                f += (vals[i] - vals[j]).powi(2) / s * hv[(i, j)].norm_sqr();
            }
        }
    }
    Ok(2.0 * f)
}

/// `4 Var_ψ(H)`, the pure-state QFI.
pub fn qfi_pure(psi: &StateVector, h: &CMatrix) -> Result<f64> {
    if h.nrows() != psi.amplitudes().len() {
        return Err(Error::dimension("generator and state differ in size"));
    }
    let v = psi.amplitudes();
    let hv = h * v;
    let mean = v.dotc(&hv).re;
    let sq = hv.dotc(&hv).re;
    Ok(4.0 * (sq - mean * mean))
}

/// Quantum Cramér-Rao bound `1/(ν F_Q)`.
pub fn cramer_rao(nu: usize, fq: f64) -> Result<f64> {
    if nu == 0 {
        return Err(Error::validation("need at least one repetition"));
    }
    if fq <= 0.0 || !fq.is_finite() {
        return Err(Error::validation(format!("Fisher information must be positive, got {fq}")));
    }
    Ok(1.0 / (nu as f64 * fq))
}

/// `N²(1 − 6/(P_acc·M))`; negative values mean the bound is vacuous.
pub fn certified_qfi_bound(n: usize, p_acc: f64, copies: usize) -> Result<f64> {
    if !(p_acc > 0.0 && p_acc <= 1.0 + 1e-9) {
        return Err(Error::validation(format!("P_acc must lie in (0, 1], got {p_acc}")));
    }
    let p_acc = p_acc.min(1.0);
    if copies < 2 {
        return Err(Error::validation("M must be at least 2"));
    }
    Ok((n * n) as f64 * (1.0 - 6.0 / (p_acc * copies as f64)))
}

/// The rotated protocol testing `GHZ_n`: star graph with Hadamards on the leaves.
pub fn ghz_target(n: usize) -> Result<Target> {
    Target::rotated(&Graph::star(n)?, &LocalRotation::ghz_from_star(n))
}

/// One certified-metrology comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MetrologyCheck {
    pub p_acc: f64,
    /// QFI of the accepted-average output; `None` when nothing was accepted.
    pub qfi: Option<f64>,
    pub bound: Option<f64>,
    pub pass: bool,
    /// Per-trial records of the Monte Carlo route; empty for the exact route.
    pub records: Vec<TrialRecord>,
}

fn check(n: usize, copies: usize, p_acc: f64, rho_acc: Option<DensityMatrix>) -> Result<MetrologyCheck> {
    let Some(rho) = rho_acc else {
        return Ok(MetrologyCheck {
            p_acc,
            qfi: None,
            bound: None,
            pass: true,
            records: Vec::new(),
        });
    };
    let f = qfi(&rho, &jz(n))?;
    let bound = certified_qfi_bound(n, p_acc, copies)?;
    Ok(MetrologyCheck {
        p_acc,
        qfi: Some(f),
        bound: Some(bound),
        pass: f >= bound - 1e-9,
        records: Vec::new(),
    })
}

/// Exact check: `ρ_ACC` from the exact accept branch.
pub fn metrology_check_exact(
    n: usize,
    copies: usize,
    source: &SourceStrategy,
    cfg: &ProtocolConfig,
) -> Result<MetrologyCheck> {
    let target = ghz_target(n)?;
    let ev = exact_evaluation(&target, copies, source, cfg)?;
    check(n, copies, ev.p_acc, ev.conditional_output())
}

/// Monte Carlo check: `ρ_ACC` is the average of accepted outputs.
pub fn metrology_check(
    n: usize,
    copies: usize,
    source: &SourceStrategy,
    mc: &MonteCarlo,
    cfg: &ProtocolConfig,
) -> Result<MetrologyCheck> {
    let target = ghz_target(n)?;
    let prepared = source.prepare(&target, copies)?;
    let rows = run_trials(mc, |i, rng| {
        let (rec, verdict) = certify_trial(&target, &prepared, copies, cfg, i, rng)?;
        Ok((rec, verdict.output))
    })?;
    let dim = 1usize << n;
    let mut sum = CMatrix::zeros(dim, dim);
    let mut accepted = 0usize;
    for out in rows.iter().filter_map(|r| r.1.as_ref()) {
        sum += out.matrix();
        accepted += 1;
    }
    let p_acc = accepted as f64 / mc.trials as f64;
    let rho = (accepted > 0).then(|| DensityMatrix::from_raw(sum / c(accepted as f64, 0.0)));
    let mut chk = check(n, copies, p_acc, rho)?;
    chk.records = rows.into_iter().map(|r| r.0).collect();
    Ok(chk)
}
