//! Threshold secret sharing of the classical key and the restricted-test protocol variant.

use rand::Rng;

use crate::dense::{c, CMatrix, DensityMatrix};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::protocol::{
    exact_evaluation, mean_stderr, run_protocol, run_trials, sample_key, Key, MonteCarlo, PreparedSource,
    ProtocolConfig, SourceStrategy, Target, Verdict,
};

/// Field modulus for share arithmetic.
pub const PRIME: u32 = 257;

/// Threshold access structure: any `k` of `n` players are authorised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessStructure {
    n: usize,
    k: usize,
}

impl AccessStructure {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::validation(format!("threshold {k} outside [1, {n}]")));
        }
        Ok(AccessStructure { n, k })
    }

    pub fn players(&self) -> usize {
        self.n
    }

    pub fn threshold(&self) -> usize {
        self.k
    }

    pub fn is_authorized(&self, set: &[usize]) -> bool {
        distinct_players(set, self.n).map(|s| s.len() >= self.k).unwrap_or(false)
    }
}

fn distinct_players(set: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut s = set.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != set.len() || s.iter().any(|&p| p >= n) {
        return Err(Error::validation(format!("invalid player set {set:?} for {n} players")));
    }
    Ok(s)
}

/// Shares held by every player; `shares[p]` has one field element per secret byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassicalShareSet {
    pub k: usize,
    pub n: usize,
    pub shares: Vec<Vec<u16>>,
}

impl ClassicalShareSet {
    /// `(player, share)` pairs for a subset of players.
    pub fn subset(&self, players: &[usize]) -> Vec<(usize, Vec<u16>)> {
        players.iter().map(|&p| (p, self.shares[p].clone())).collect()
    }
}

fn pow_mod(mut b: u32, mut e: u32) -> u32 {
    let mut acc = 1u32;
    b %= PRIME;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % PRIME;
        }
        b = b * b % PRIME;
        e >>= 1;
    }
    acc
}

fn inv_mod(a: u32) -> u32 {
    pow_mod(a, PRIME - 2)
}

/// Evaluates `secret + Σ coeffs[i] x^{i+1}` over GF(257).
pub fn eval_share(secret: u8, coeffs: &[u16], x: u32) -> u16 {
    let mut acc = 0u32;
    for &a in coeffs.iter().rev() {
        acc = (acc + a as u32) * x % PRIME;
    }
    ((acc + secret as u32) % PRIME) as u16
}

/// Splits each byte with a fresh random degree-`k-1` polynomial; player `p` gets `f(p+1)`.
pub fn shamir_share<R: Rng + ?Sized>(secret: &[u8], k: usize, n: usize, rng: &mut R) -> Result<ClassicalShareSet> {
    if k == 0 || k > n || n > 255 {
        return Err(Error::validation(format!("need 1 ≤ k ≤ n ≤ 255, got k={k}, n={n}")));
    }
    let mut shares = vec![Vec::with_capacity(secret.len()); n];
    for &byte in secret {
        let coeffs: Vec<u16> = (1..k).map(|_| rng.random_range(0..PRIME) as u16).collect();
        for (p, share) in shares.iter_mut().enumerate() {
            share.push(eval_share(byte, &coeffs, p as u32 + 1));
        }
    }
    Ok(ClassicalShareSet { k, n, shares })
}

/// Lagrange interpolation at zero using the first `k` of the supplied shares.
pub fn shamir_reconstruct(shares: &[(usize, Vec<u16>)], k: usize) -> Result<Vec<u8>> {
    let mut players: Vec<usize> = shares.iter().map(|s| s.0).collect();
    players.sort_unstable();
    players.dedup();
    if k == 0 || players.len() < k {
        return Err(Error::InsufficientShares {
            needed: k,
            got: players.len(),
        });
    }
    if players.len() != shares.len() {
        return Err(Error::validation("duplicate player in share list"));
    }
    let used = &shares[..k];
    let len = used[0].1.len();
    if used.iter().any(|s| s.1.len() != len) || used.iter().any(|s| s.0 >= 256) {
        return Err(Error::validation("shares have inconsistent lengths"));
    }
    let xs: Vec<u32> = used.iter().map(|s| s.0 as u32 + 1).collect();
    let weights: Vec<u32> = (0..k)
        .map(|i| {
            let (mut num, mut den) = (1u32, 1u32);
            for j in (0..k).filter(|&j| j != i) {
                num = num * xs[j] % PRIME;
                den = den * ((xs[j] + PRIME - xs[i]) % PRIME) % PRIME;
            }
            num * inv_mod(den) % PRIME
        })
        .collect();
    (0..len)
        .map(|b| {
            let v = used
                .iter()
                .zip(&weights)
                .fold(0u32, |acc, (s, w)| (acc + s.1[b] as u32 % PRIME * w) % PRIME);
            u8::try_from(v).map_err(|_| Error::validation("shares are inconsistent: value outside a byte"))
        })
        .collect()
}

/// Qubit mask held by a set of players (player `i` holds qubit `i`).
pub fn player_mask(players: &[usize]) -> u64 {
    players.iter().fold(0, |m, &p| m | (1u64 << p))
}

/// Protocol target whose tests are the stabilisers supported on `authorized`.
pub fn restricted_target(g: &Graph, authorized: &[usize]) -> Result<Target> {
    Target::from_graph(g)?.restricted_to(player_mask(authorized))
}

/// Outcome of one secret-sharing run.
#[derive(Debug, Clone, PartialEq)]
pub struct SsVerdict {
    pub verdict: Verdict,
    /// Only the identity survives the restriction; the claim is rejected.
    pub degenerate: bool,
    /// Number of stabilisers available to the authorised set.
    pub subgroup_size: usize,
}

fn check_authorized(g: &Graph, access: &AccessStructure, authorized: &[usize]) -> Result<()> {
    if access.players() != g.num_vertices() {
        return Err(Error::validation(format!(
            "{} players for a {}-qubit graph state",
            access.players(),
            g.num_vertices()
        )));
    }
    let set = distinct_players(authorized, access.players())?;
    if set.len() < access.threshold() {
        return Err(Error::InsufficientShares {
            needed: access.threshold(),
            got: set.len(),
        });
    }
    Ok(())
}

/// One run of the restricted protocol.
///
/// The key is drawn over the restricted subgroup, shared among all players
/// and reconstructed by `authorized` before the tests are applied.
#[allow(clippy::too_many_arguments)]
pub fn run_ss_variant<R: Rng + ?Sized>(
    g: &Graph,
    copies: usize,
    source: &PreparedSource,
    access: &AccessStructure,
    authorized: &[usize],
    cfg: &ProtocolConfig,
    rng: &mut R,
) -> Result<SsVerdict> {
    check_authorized(g, access, authorized)?;
    let target = restricted_target(g, authorized)?;
    let subgroup_size = target.num_tests();
    if target.allowed_tests(cfg.exclude_identity).iter().all(|&t| t == 1) {
        return Ok(SsVerdict {
            verdict: Verdict {
                accepted: false,
                output: None,
                tests_passed: 0,
                tests_total: copies - 1,
            },
            degenerate: true,
            subgroup_size,
        });
    }
    let key = sample_key(copies, subgroup_size, cfg.exclude_identity, rng)?;
    let shares = shamir_share(&key.to_bytes(), access.threshold(), access.players(), rng)?;
    let recovered = Key::from_bytes(&shamir_reconstruct(&shares.subset(authorized), access.threshold())?, subgroup_size)?;
    if recovered != key {
        return Err(Error::Internal("reconstructed key differs from the dealt key".into()));
    }
    let verdict = run_protocol(&target, source, &recovered, cfg, rng)?;
    Ok(SsVerdict {
        verdict,
        degenerate: false,
        subgroup_size,
    })
}

/// Monte Carlo summary of the restricted protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SsSummary {
    pub p_acc: f64,
    pub p_acc_stderr: f64,
    pub degenerate: bool,
    pub subgroup_size: usize,
    pub accepted: Vec<bool>,
}

pub fn estimate_ss(
    g: &Graph,
    copies: usize,
    source: &SourceStrategy,
    access: &AccessStructure,
    authorized: &[usize],
    mc: &MonteCarlo,
    cfg: &ProtocolConfig,
) -> Result<SsSummary> {
    let target = Target::from_graph(g)?;
    let prepared = source.prepare(&target, copies)?;
    let rows = run_trials(mc, |_, rng| run_ss_variant(g, copies, &prepared, access, authorized, cfg, rng))?;
    let accepted: Vec<bool> = rows.iter().map(|r| r.verdict.accepted).collect();
    let values: Vec<f64> = accepted.iter().map(|&a| a as u8 as f64).collect();
    let (p_acc, p_acc_stderr) = mean_stderr(&values);
    Ok(SsSummary {
        p_acc,
        p_acc_stderr,
        degenerate: rows.first().map(|r| r.degenerate).unwrap_or(false),
        subgroup_size: rows.first().map(|r| r.subgroup_size).unwrap_or(0),
        accepted,
    })
}

/// Projector `(1/|S_A|) Σ_{S ∈ S_A} S` onto the space fixed by the restricted subgroup.
pub fn restricted_projector(target: &Target) -> Result<CMatrix> {
    let dim = 1usize << target.num_qubits();
    let mut acc = CMatrix::zeros(dim, dim);
    for t in target.tests() {
        acc += t.to_matrix()?;
    }
    Ok(acc / c(target.num_tests() as f64, 0.0))
}

/// Exact soundness of the restricted protocol relative to its own projector.
#[derive(Debug, Clone, PartialEq)]
pub struct SsExact {
    /// `Tr((I − Π_A) ρ_out)` on the accept branch.
    pub p_fail: f64,
    pub p_acc: f64,
    pub degenerate: bool,
}

pub fn ss_exact(
    g: &Graph,
    copies: usize,
    source: &SourceStrategy,
    authorized: &[usize],
    cfg: &ProtocolConfig,
) -> Result<SsExact> {
    let full = Target::from_graph(g)?;
    let target = restricted_target(g, authorized)?;
    let degenerate = target.allowed_tests(cfg.exclude_identity).iter().all(|&t| t == 1);
    if degenerate {
        return Ok(SsExact {
            p_fail: 0.0,
            p_acc: 0.0,
            degenerate,
        });
    }
    // The source is resolved against the full target so adversaries see |G⟩.
    let prepared = match source.prepare(&full, copies)? {
        PreparedSource::Product(states) => SourceStrategy::ProductState(states),
        PreparedSource::Global(state) => SourceStrategy::Coherent(state),
    };
    let ev = exact_evaluation(&target, copies, &prepared, cfg)?;
    let pi = restricted_projector(&target)?;
    let kept = DensityMatrix::from_raw(ev.accepted_output.clone()).expectation(&pi).re;
    Ok(SsExact {
        p_fail: ev.p_acc - kept,
        p_acc: ev.p_acc,
        degenerate,
    })
}
