//! The certification protocol: key sampling, sources, per-copy stabiliser
//! tests, verdicts, and exact and Monte Carlo evaluation of the failure
//! probability `Tr(P_fail ρ_out)`.
//!
//! Copies and key entries use 1-based indices (`r ∈ [1, M]`, `t_i ∈ [1, |S|]`).
//! Test index 1 is always the identity element.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dense::{
    c, kron_registers, partial_trace_pure, plus_probability, project, reduce, CMatrix,
    DensityMatrix, Observable, QuantumState, StateVector, MIXED_STATE_CAP, PURE_STATE_CAP,
};
use crate::error::{Error, Result};
use crate::graph::{rotated_target, Graph, LocalRotation};
use crate::pauli::{Pauli, PauliString, DENSE_CAP};

/// Upper bound on `M · |tests|^(M-1)` for exact coherent evaluation.
pub const EXACT_KEY_CAP: usize = 1 << 22;

/// The state to certify together with its test observables.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    state: StateVector,
    tests: Vec<Observable>,
}

impl Target {
    /// Graph state tested with its full stabiliser group.
    pub fn from_graph(g: &Graph) -> Result<Self> {
        let state = g.state_vector()?;
        let tests = g
            .stabilizer_group()
            .elements()?
            .into_iter()
            .map(Observable::Pauli)
            .collect();
        Ok(Target { state, tests })
    }

    /// `(⊗U)|G⟩` tested with the rotated group `U S U†`.
    pub fn rotated(g: &Graph, rot: &LocalRotation) -> Result<Self> {
        let rt = rotated_target(g, rot)?;
        let tests = g
            .stabilizer_group()
            .elements()?
            .iter()
            .map(|s| rot.conjugate(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Target {
            state: rt.state,
            tests,
        })
    }

    /// Arbitrary target; `tests[0]` must be the identity and every test must fix `state`.
    pub fn from_parts(state: StateVector, tests: Vec<Observable>) -> Result<Self> {
        let n = state.num_qubits();
        match tests.first() {
            Some(t) if t.is_identity() => {}
            _ => return Err(Error::validation("first test must be the identity")),
        }
        for t in &tests {
            if t.num_qubits() != n {
                return Err(Error::dimension("test and target differ in qubit count"));
            }
            let moved = t.apply_vec(state.amplitudes()) - state.amplitudes();
            if moved.norm() > 1e-9 {
                return Err(Error::validation("test observable does not fix the target"));
            }
        }
        Ok(Target { state, tests })
    }

    /// Keeps only the tests supported on qubits in `allowed` (bit mask).
    pub fn restricted_to(&self, allowed: u64) -> Result<Target> {
        let tests: Vec<Observable> = self
            .tests
            .iter()
            .filter(|t| match t {
                Observable::Pauli(p) => p.support_mask() & !allowed == 0,
                Observable::Dense(_) => false,
            })
            .cloned()
            .collect();
        if tests.is_empty() {
            return Err(Error::Internal("identity missing from test set".into()));
        }
        Ok(Target {
            state: self.state.clone(),
            tests,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.state.num_qubits()
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn tests(&self) -> &[Observable] {
        &self.tests
    }

    pub fn num_tests(&self) -> usize {
        self.tests.len()
    }

    /// 1-based indices of the tests a key may draw.
    pub fn allowed_tests(&self, exclude_identity: bool) -> Vec<usize> {
        let first = if exclude_identity { 2 } else { 1 };
        (first..=self.tests.len()).collect()
    }

    /// 1-based index of the test equal to `p`, if present.
    pub fn test_index(&self, p: &PauliString) -> Option<usize> {
        self.tests
            .iter()
            .position(|t| matches!(t, Observable::Pauli(q) if q == p))
            .map(|i| i + 1)
    }
}

/// Secret classical key `{r, t}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Key {
    copies: usize,
    r: usize,
    t: Vec<usize>,
}

impl Key {
    /// `t[j]` is the test index for the `j`-th copy other than `r`, ascending.
    pub fn new(copies: usize, r: usize, t: Vec<usize>, group_size: usize) -> Result<Self> {
        if copies < 2 {
            return Err(Error::validation("need at least two copies"));
        }
        if r == 0 || r > copies {
            return Err(Error::validation(format!("r = {r} outside [1, {copies}]")));
        }
        if t.len() != copies - 1 {
            return Err(Error::validation(format!("key has {} tests, expected {}", t.len(), copies - 1)));
        }
        if let Some(bad) = t.iter().find(|&&ti| ti == 0 || ti > group_size) {
            return Err(Error::validation(format!("test index {bad} outside [1, {group_size}]")));
        }
        Ok(Key { copies, r, t })
    }

    pub fn copies(&self) -> usize {
        self.copies
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn tests(&self) -> &[usize] {
        &self.t
    }

    /// Test index for 1-based `copy`, or `None` for the output copy.
    pub fn test_for_copy(&self, copy: usize) -> Option<usize> {
        match copy.cmp(&self.r) {
            std::cmp::Ordering::Less => Some(self.t[copy - 1]),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(self.t[copy - 2]),
        }
    }

    /// Little-endian byte encoding: `M`, `r`, then each `t_i`, all as `u32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        std::iter::once(self.copies)
            .chain(std::iter::once(self.r))
            .chain(self.t.iter().copied())
            .flat_map(|v| (v as u32).to_le_bytes())
            .collect()
    }

    pub fn from_bytes(bytes: &[u8], group_size: usize) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) || bytes.len() < 8 {
            return Err(Error::Parse("key bytes have the wrong length".into()));
        }
        let words: Vec<usize> = bytes
            .chunks_exact(4)
            .map(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]]) as usize)
            .collect();
        Key::new(words[0], words[1], words[2..].to_vec(), group_size)
    }
}

/// Draws `r` uniformly from `[1, M]` and each `t_i` uniformly from `[1, group_size]`
/// (from `[2, group_size]` when `exclude_identity`).
pub fn sample_key<R: Rng + ?Sized>(
    copies: usize,
    group_size: usize,
    exclude_identity: bool,
    rng: &mut R,
) -> Result<Key> {
    if copies < 2 {
        return Err(Error::validation("need at least two copies"));
    }
    let lo = if exclude_identity { 2 } else { 1 };
    if group_size < lo {
        return Err(Error::validation(format!("test set of size {group_size} is too small")));
    }
    let r = rng.random_range(1..=copies);
    let t = (0..copies - 1).map(|_| rng.random_range(lo..=group_size)).collect();
    Key::new(copies, r, t, group_size)
}

/// Single-copy noise applied independently to each emitted copy.
#[derive(Debug, Clone, PartialEq)]
pub enum Channel {
    /// Per qubit: `ρ → (1-p)ρ + p·(I/2 ⊗ Tr_q ρ)`.
    Depolarizing(f64),
    /// Per qubit: `ρ → (1-p)ρ + p·ZρZ`.
    Dephasing(f64),
    /// Kraus operators on the whole copy.
    Kraus(Vec<CMatrix>),
}

impl Channel {
    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let n = rho.num_qubits();
        match self {
            Channel::Depolarizing(p) | Channel::Dephasing(p) => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::validation(format!("channel probability {p} outside [0,1]")));
                }
                let mut m = rho.matrix().clone();
                for q in 0..n {
                    let letters: &[(Pauli, f64)] = match self {
                        Channel::Depolarizing(_) => &[
                            (Pauli::I, 1.0 - 0.75 * p),
                            (Pauli::X, 0.25 * p),
                            (Pauli::Y, 0.25 * p),
                            (Pauli::Z, 0.25 * p),
                        ],
                        _ => &[(Pauli::I, 1.0 - p), (Pauli::Z, *p)],
                    };
                    let mut next = CMatrix::zeros(m.nrows(), m.ncols());
                    for &(l, w) in letters {
                        let obs = Observable::Pauli(PauliString::single(n, q, l));
                        let pm = obs.apply_left(&m);
                        next += obs.apply_left(&pm.adjoint()).adjoint() * c(w, 0.0);
                    }
                    m = next;
                }
                Ok(DensityMatrix::from_raw(m))
            }
            Channel::Kraus(ops) => {
                let dim = rho.dim();
                let mut sum = CMatrix::zeros(dim, dim);
                let mut out = CMatrix::zeros(dim, dim);
                for k in ops {
                    if k.nrows() != dim || k.ncols() != dim {
                        return Err(Error::dimension("Kraus operator size"));
                    }
                    sum += k.adjoint() * k;
                    out += k * rho.matrix() * k.adjoint();
                }
                if crate::dense::max_abs(&(sum - CMatrix::identity(dim, dim))) > 1e-9 {
                    return Err(Error::validation("Kraus operators are not trace preserving"));
                }
                Ok(DensityMatrix::from_raw(out))
            }
        }
    }
}

/// What the untrusted source emits across all `M` copies.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceStrategy {
    Honest,
    IidChannel(Channel),
    /// Honest except copy `position` (1-based), which is replaced.
    SingleCopyReplace { position: usize, state: DensityMatrix },
    ProductState(Vec<DensityMatrix>),
    /// Arbitrary state on all `M·n` qubits, copy `i` on qubits `(i-1)n..in`.
    Coherent(QuantumState),
}

/// A source resolved against a target and copy count.
#[derive(Debug, Clone)]
pub enum PreparedSource {
    Product(Vec<DensityMatrix>),
    Global(QuantumState),
}

impl SourceStrategy {
    pub fn prepare(&self, target: &Target, copies: usize) -> Result<PreparedSource> {
        let n = target.num_qubits();
        let ideal = target.state().to_density();
        let check = |d: &DensityMatrix| {
            if d.num_qubits() != n {
                Err(Error::dimension(format!(
                    "source copy on {} qubits, target on {n}",
                    d.num_qubits()
                )))
            } else {
                Ok(())
            }
        };
        match self {
            SourceStrategy::Honest => Ok(PreparedSource::Product(vec![ideal; copies])),
            SourceStrategy::IidChannel(ch) => {
                let noisy = ch.apply(&ideal)?;
                Ok(PreparedSource::Product(vec![noisy; copies]))
            }
            SourceStrategy::SingleCopyReplace { position, state } => {
                check(state)?;
                if *position == 0 || *position > copies {
                    return Err(Error::validation(format!(
                        "replacement position {position} outside [1, {copies}]"
                    )));
                }
                let mut v = vec![ideal; copies];
                v[position - 1] = state.clone();
                Ok(PreparedSource::Product(v))
            }
            SourceStrategy::ProductState(states) => {
                if states.len() != copies {
                    return Err(Error::dimension(format!(
                        "{} product factors for {copies} copies",
                        states.len()
                    )));
                }
                for s in states {
                    check(s)?;
                }
                Ok(PreparedSource::Product(states.clone()))
            }
            SourceStrategy::Coherent(state) => {
                let total = n * copies;
                if state.num_qubits() != total {
                    return Err(Error::dimension(format!(
                        "coherent state on {} qubits, expected {total}",
                        state.num_qubits()
                    )));
                }
                match state {
                    QuantumState::Pure(_) => Error::check_cap("coherent pure-state qubits", total, PURE_STATE_CAP)?,
                    QuantumState::Mixed(_) => Error::check_cap("coherent mixed-state qubits", total, MIXED_STATE_CAP)?,
                }
                Ok(PreparedSource::Global(state.clone()))
            }
        }
    }
}

/// Protocol knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    /// Fraction of tests that must pass; `1.0` is the base protocol.
    pub tau: f64,
    pub exclude_identity: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            tau: 1.0,
            exclude_identity: false,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::validation(format!("tau = {} outside (0, 1]", self.tau)));
        }
        Ok(())
    }

    /// `⌈τ·(M-1)⌉`.
    pub fn required_passes(&self, copies: usize) -> usize {
        let raw = self.tau * (copies - 1) as f64;
        (raw - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub accepted: bool,
    pub output: Option<DensityMatrix>,
    pub tests_passed: usize,
    pub tests_total: usize,
}

fn sample_sign<R: Rng + ?Sized>(p_plus: f64, rng: &mut R) -> i8 {
    if rng.random::<f64>() < p_plus {
        1
    } else {
        -1
    }
}

/// One protocol run with a fixed key.
pub fn run_protocol<R: Rng + ?Sized>(
    target: &Target,
    source: &PreparedSource,
    key: &Key,
    cfg: &ProtocolConfig,
    rng: &mut R,
) -> Result<Verdict> {
    cfg.validate()?;
    let copies = key.copies();
    let n = target.num_qubits();
    let mut passed = 0;
    let output = match source {
        PreparedSource::Product(states) => {
            if states.len() != copies {
                return Err(Error::dimension("source prepared for a different copy count"));
            }
            for copy in 1..=copies {
                if let Some(t) = key.test_for_copy(copy) {
                    let obs = &target.tests()[t - 1];
                    let state = QuantumState::Mixed(states[copy - 1].clone());
                    if sample_sign(plus_probability(&state, obs), rng) == 1 {
                        passed += 1;
                    }
                }
            }
            states[key.r() - 1].clone()
        }
        PreparedSource::Global(global) => {
            if global.num_qubits() != n * copies {
                return Err(Error::dimension("source prepared for a different copy count"));
            }
            let total = n * copies;
            let mut state = global.clone();
            let mut norm = 1.0;
            for copy in 1..=copies {
                if let Some(t) = key.test_for_copy(copy) {
                    let obs = target.tests()[t - 1].embed((copy - 1) * n, total)?;
                    // Probabilities are relative to the running (unnormalised) state.
                    let p_plus = unnormalised_plus(&state, &obs) / norm;
                    let sign = sample_sign(p_plus, rng);
                    let (next, p) = project(&state, &obs, sign);
                    if p <= 0.0 {
                        return Err(Error::Internal("sampled a zero-probability branch".into()));
                    }
                    if sign == 1 {
                        passed += 1;
                    }
                    state = next;
                    norm = p;
                }
            }
            let keep: Vec<usize> = ((key.r() - 1) * n..key.r() * n).collect();
            let red = reduce(&state, &keep)?;
            DensityMatrix::from_raw(&red / c(norm, 0.0))
        }
    };
    let accepted = passed >= cfg.required_passes(copies);
    Ok(Verdict {
        accepted,
        output: accepted.then_some(output),
        tests_passed: passed,
        tests_total: copies - 1,
    })
}

fn unnormalised_plus(state: &QuantumState, obs: &Observable) -> f64 {
    let (_, p) = project(state, obs, 1);
    p
}

/// Stream seed for `trial` under `master`: SplitMix64 finaliser of
/// `master ⊕ SplitMix64(trial + γ)` with `γ = 0x9E3779B97F4A7C15`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master ^ mix(trial.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

pub fn trial_rng(master: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(trial_seed(master, trial))
}

/// Monte Carlo run parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; `0` uses the rayon default.
    pub workers: usize,
}

/// Runs `per_trial` for every trial index with its own stream; results are in trial order.
pub fn run_trials<T, F>(mc: &MonteCarlo, per_trial: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    if mc.trials == 0 {
        return Err(Error::validation("need at least one trial"));
    }
    let job = || {
        (0..mc.trials)
            .into_par_iter()
            .map(|i| per_trial(i, &mut trial_rng(mc.seed, i as u64)))
            .collect::<Result<Vec<T>>>()
    };
    if mc.workers == 0 {
        job()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(mc.workers)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(job)
    }
}

/// Per-trial record of a certification run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub key_r: usize,
    pub accepted: bool,
    pub tests_passed: usize,
    /// `⟨G|ρ_out|G⟩`, present when accepted.
    pub fidelity_sq: Option<f64>,
}

impl TrialRecord {
    /// `[accepted]·(1 − F²)`.
    pub fn fail_value(&self) -> f64 {
        self.fidelity_sq.map_or(0.0, |f| 1.0 - f)
    }
}

/// Sample mean and its standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PFailEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub p_acc: f64,
    pub records: Vec<TrialRecord>,
}

/// Runs one trial: fresh key, protocol run, record plus the raw verdict.
pub fn certify_trial<R: Rng + ?Sized>(
    target: &Target,
    source: &PreparedSource,
    copies: usize,
    cfg: &ProtocolConfig,
    trial: usize,
    rng: &mut R,
) -> Result<(TrialRecord, Verdict)> {
    let key = sample_key(copies, target.num_tests(), cfg.exclude_identity, rng)?;
    let verdict = run_protocol(target, source, &key, cfg, rng)?;
    let fidelity_sq = match &verdict.output {
        Some(out) => Some(crate::dense::fidelity_sq(out, target.state())?),
        None => None,
    };
    let record = TrialRecord {
        trial,
        key_r: key.r(),
        accepted: verdict.accepted,
        tests_passed: verdict.tests_passed,
        fidelity_sq,
    };
    Ok((record, verdict))
}

/// Monte Carlo estimate of `Tr(P_fail ρ_out)` over independently sampled keys.
pub fn estimate_p_fail(
    target: &Target,
    copies: usize,
    source: &SourceStrategy,
    mc: &MonteCarlo,
    cfg: &ProtocolConfig,
) -> Result<PFailEstimate> {
    cfg.validate()?;
    let prepared = source.prepare(target, copies)?;
    let records = run_trials(mc, |i, rng| {
        certify_trial(target, &prepared, copies, cfg, i, rng).map(|(rec, _)| rec)
    })?;
    let values: Vec<f64> = records.iter().map(TrialRecord::fail_value).collect();
    let (estimate, stderr) = mean_stderr(&values);
    let p_acc = records.iter().filter(|r| r.accepted).count() as f64 / records.len() as f64;
    Ok(PFailEstimate {
        estimate,
        stderr,
        p_acc,
        records,
    })
}

/// Exact accept-branch quantities averaged over the uniform key distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactEvaluation {
    /// `Tr(P_fail ρ_out)`.
    pub p_fail: f64,
    pub p_acc: f64,
    /// Unnormalised accept block of `ρ_out` on the output copy; trace `p_acc`.
    pub accepted_output: CMatrix,
}

impl ExactEvaluation {
    /// `ρ_ACC`, the output conditioned on acceptance.
    pub fn conditional_output(&self) -> Option<DensityMatrix> {
        (self.p_acc > 0.0).then(|| DensityMatrix::from_raw(&self.accepted_output / c(self.p_acc, 0.0)))
    }
}

/// Probability that at least `need` of the independent events occur.
fn at_least(probs: &[f64], need: usize) -> f64 {
    // dist[k] = P(exactly k successes so far).
    let mut dist = vec![1.0];
    for &p in probs {
        let mut next = vec![0.0; dist.len() + 1];
        for (k, &d) in dist.iter().enumerate() {
            next[k] += d * (1.0 - p);
            next[k + 1] += d * p;
        }
        dist = next;
    }
    dist.iter().skip(need).sum()
}

/// Exact evaluation of the protocol on `source`.
///
/// Product-form sources are evaluated copy by copy with each copy's pass
/// probability averaged over the allowed tests. Coherent sources enumerate
/// every key and outcome branch on the global state.
pub fn exact_evaluation(
    target: &Target,
    copies: usize,
    source: &SourceStrategy,
    cfg: &ProtocolConfig,
) -> Result<ExactEvaluation> {
    cfg.validate()?;
    if copies < 2 {
        return Err(Error::validation("need at least two copies"));
    }
    let prepared = source.prepare(target, copies)?;
    let allowed = target.allowed_tests(cfg.exclude_identity);
    if allowed.is_empty() {
        return Err(Error::validation("no tests available"));
    }
    let need = cfg.required_passes(copies);
    let psi = target.state();
    let accepted_output = match &prepared {
        PreparedSource::Product(states) => {
            let pass: Vec<f64> = states
                .iter()
                .map(|s| {
                    let st = QuantumState::Mixed(s.clone());
                    allowed
                        .iter()
                        .map(|&t| plus_probability(&st, &target.tests()[t - 1]))
                        .sum::<f64>()
                        / allowed.len() as f64
                })
                .collect();
            let dim = psi.amplitudes().len();
            let mut acc = CMatrix::zeros(dim, dim);
            for r in 0..copies {
                let others: Vec<f64> = (0..copies).filter(|&i| i != r).map(|i| pass[i]).collect();
                let w = at_least(&others, need) / copies as f64;
                acc += states[r].matrix() * c(w, 0.0);
            }
            acc
        }
        PreparedSource::Global(global) => {
            let keys = copies as f64 * (allowed.len() as f64).powi(copies as i32 - 1);
            if keys > EXACT_KEY_CAP as f64 {
                return Err(Error::Capacity {
                    what: "exact key enumeration",
                    cap: EXACT_KEY_CAP,
                    got: keys as usize,
                });
            }
            let n = target.num_qubits();
            let ctx = BranchCtx {
                target,
                copies,
                n,
                allowed: &allowed,
                need,
            };
            let dim = 1usize << n;
            let mut acc = CMatrix::zeros(dim, dim);
            for r in 1..=copies {
                let mut part = CMatrix::zeros(dim, dim);
                ctx.branch(global.clone(), r, 1, 0, 1.0, &mut part)?;
                acc += part / c(copies as f64, 0.0);
            }
            acc
        }
    };
    let p_acc = accepted_output.trace().re;
    let good = psi.amplitudes().dotc(&(&accepted_output * psi.amplitudes())).re;
    Ok(ExactEvaluation {
        p_fail: (p_acc - good).max(0.0),
        p_acc,
        accepted_output,
    })
}

struct BranchCtx<'a> {
    target: &'a Target,
    copies: usize,
    n: usize,
    allowed: &'a [usize],
    need: usize,
}

impl BranchCtx<'_> {
    /// Accumulates `weight · Tr_{r^c}(Π ρ Π)` over all accepting branches from `copy` on.
    fn branch(
        &self,
        state: QuantumState,
        r: usize,
        copy: usize,
        passed: usize,
        weight: f64,
        out: &mut CMatrix,
    ) -> Result<()> {
        if copy > self.copies {
            if passed >= self.need {
                let keep: Vec<usize> = ((r - 1) * self.n..r * self.n).collect();
                let red = match &state {
                    QuantumState::Pure(v) => partial_trace_pure(v.amplitudes(), &keep)?,
                    QuantumState::Mixed(_) => reduce(&state, &keep)?,
                };
                *out += red * c(weight, 0.0);
            }
            return Ok(());
        }
        if copy == r {
            return self.branch(state, r, copy + 1, passed, weight, out);
        }
        let remaining = (copy..=self.copies).filter(|&i| i != r).count();
        let total = self.n * self.copies;
        let w = weight / self.allowed.len() as f64;
        for &t in self.allowed {
            let obs = self.target.tests()[t - 1].embed((copy - 1) * self.n, total)?;
            let (plus, p) = project(&state, &obs, 1);
            if p > 1e-300 {
                self.branch(plus, r, copy + 1, passed + 1, w, out)?;
            }
            // A failing outcome only matters if enough tests remain to reach the threshold.
            if passed + remaining > self.need {
                let (minus, p) = project(&state, &obs, -1);
                if p > 1e-300 {
                    self.branch(minus, r, copy + 1, passed, w, out)?;
                }
            }
        }
        Ok(())
    }
}

/// Exact `Tr(P_fail ρ_out)`.
pub fn exact_p_fail(
    target: &Target,
    copies: usize,
    source: &SourceStrategy,
    cfg: &ProtocolConfig,
) -> Result<f64> {
    Ok(exact_evaluation(target, copies, source, cfg)?.p_fail)
}

/// `ρ ↦ P ρ P` for a Pauli string `P` on one copy, used to build adversarial copies.
pub fn pauli_conjugate(rho: &DensityMatrix, p: &PauliString) -> Result<DensityMatrix> {
    if p.num_qubits() != rho.num_qubits() {
        return Err(Error::dimension("Pauli and state differ in qubit count"));
    }
    Error::check_cap("Pauli conjugation qubits", p.num_qubits(), DENSE_CAP)?;
    let obs = Observable::Pauli(p.clone());
    let left = obs.apply_left(rho.matrix());
    Ok(DensityMatrix::from_raw(obs.apply_left(&left.adjoint()).adjoint()))
}

/// `|G⟩^⊗M` as a global pure state.
pub fn honest_global_state(target: &Target, copies: usize) -> Result<QuantumState> {
    Error::check_cap("global pure-state qubits", target.num_qubits() * copies, PURE_STATE_CAP)?;
    Ok(QuantumState::Pure(StateVector::tensor(&vec![target.state().clone(); copies])))
}

/// `ρ_1 ⊗ … ⊗ ρ_M` as a global mixed state.
pub fn product_global_state(parts: &[DensityMatrix]) -> Result<QuantumState> {
    let total: usize = parts.iter().map(DensityMatrix::num_qubits).sum();
    Error::check_cap("global mixed-state qubits", total, MIXED_STATE_CAP)?;
    let ms: Vec<CMatrix> = parts.iter().map(|d| d.matrix().clone()).collect();
    Ok(QuantumState::Mixed(DensityMatrix::from_raw(kron_registers(&ms))))
}
