//! Measurement patterns on graph states and delegated-computation soundness.
//!
//! A measured vertex with angle `φ` is projected onto `(|0⟩ ± e^{iφ}|1⟩)/√2`;
//! outcome `0` is the `+` branch. With corrections enabled the angle becomes
//! `(-1)^{s_X} φ + s_Z π`, where `s_X`/`s_Z` are the parities of the earlier
//! outcomes listed in the vertex's X/Z dependency sets. Output vertices
//! receive the byproduct correction `X^{s_X} Z^{s_Z}` the same way.

use std::path::Path;

use rand::Rng;
use serde::Deserialize;

use crate::dense::{
    apply_1q_left, c, conjugate_1q, C64, fidelity_sq, is_hermitian, max_abs, partial_trace, permute_qubits, CMatrix,
    CVector, DensityMatrix, StateVector,
};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::protocol::{
    certify_trial, mean_stderr, run_trials, MonteCarlo, PreparedSource, ProtocolConfig, SourceStrategy, Target,
    TrialRecord,
};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredVertex {
    pub vertex: usize,
    pub angle: f64,
    #[serde(default)]
    pub x_deps: Vec<usize>,
    #[serde(default)]
    pub z_deps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputVertex {
    pub vertex: usize,
    #[serde(default)]
    pub x_deps: Vec<usize>,
    #[serde(default)]
    pub z_deps: Vec<usize>,
}

/// Ordered single-qubit measurements with explicit flow.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPattern {
    graph: Graph,
    inputs: Vec<usize>,
    measurements: Vec<MeasuredVertex>,
    outputs: Vec<OutputVertex>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternFile {
    graph: String,
    #[serde(default)]
    inputs: Vec<usize>,
    measure: Vec<MeasuredVertex>,
    output: Vec<OutputVertex>,
}

/// Resolves a built-in keyword or an edge-list file path.
pub fn resolve_graph(spec: &str, base: Option<&Path>) -> Result<Graph> {
    if let Ok(g) = spec.parse::<Graph>() {
        return Ok(g);
    }
    let path = match base {
        Some(dir) if Path::new(spec).is_relative() => dir.join(spec),
        _ => Path::new(spec).to_path_buf(),
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Parse(format!("graph {spec:?}: not a keyword and unreadable as a file ({e})")))?;
    Graph::parse_edge_list(&text)
}

impl MeasurementPattern {
    pub fn new(
        graph: Graph,
        inputs: Vec<usize>,
        measurements: Vec<MeasuredVertex>,
        outputs: Vec<OutputVertex>,
    ) -> Result<Self> {
        let n = graph.num_vertices();
        let mut seen = vec![false; n];
        let mut in_range = |v: usize, what: &str| -> Result<()> {
            if v >= n {
                return Err(Error::validation(format!("{what} vertex {v} out of range")));
            }
            if seen[v] {
                return Err(Error::validation(format!("vertex {v} appears twice")));
            }
            seen[v] = true;
            Ok(())
        };
        for m in &measurements {
            in_range(m.vertex, "measured")?;
        }
        for o in &outputs {
            in_range(o.vertex, "output")?;
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::validation(format!("vertex {v} is neither measured nor output")));
        }
        let mut sorted_inputs = inputs.clone();
        sorted_inputs.sort_unstable();
        sorted_inputs.dedup();
        if sorted_inputs.len() != inputs.len() || inputs.iter().any(|&v| v >= n) {
            return Err(Error::validation("inputs must be distinct vertices"));
        }
        for (i, m) in measurements.iter().enumerate() {
            let earlier: Vec<usize> = measurements[..i].iter().map(|e| e.vertex).collect();
            for d in m.x_deps.iter().chain(&m.z_deps) {
                if !earlier.contains(d) {
                    return Err(Error::validation(format!(
                        "vertex {} depends on {d}, which is not measured earlier",
                        m.vertex
                    )));
                }
            }
        }
        let measured: Vec<usize> = measurements.iter().map(|e| e.vertex).collect();
        for o in &outputs {
            if let Some(d) = o.x_deps.iter().chain(&o.z_deps).find(|d| !measured.contains(d)) {
                return Err(Error::validation(format!("output {} depends on unmeasured {d}", o.vertex)));
            }
        }
        Ok(MeasurementPattern {
            graph,
            inputs,
            measurements,
            outputs,
        })
    }

    /// Parses the TOML pattern format; `base` resolves relative graph paths.
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let f: PatternFile = toml::from_str(text).map_err(|e| Error::Parse(format!("pattern file: {e}")))?;
        let graph = resolve_graph(&f.graph, base)?;
        MeasurementPattern::new(graph, f.inputs, f.measure, f.output)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        MeasurementPattern::from_toml_str(&text, path.parent())
    }

    /// Linear-cluster pattern: input 0, output `n-1`, vertex `j` measured at `angles[j]`.
    /// Dependencies follow the 1D flow: X on `j-1, j-3, …`, output Z on `n-3, n-5, …`.
    pub fn line(angles: &[f64]) -> Result<Self> {
        let n = angles.len() + 1;
        let graph = Graph::line(n)?;
        let alternating = |from: isize| -> Vec<usize> {
            let mut v = Vec::new();
            let mut j = from;
            while j >= 0 {
                v.push(j as usize);
                j -= 2;
            }
            v
        };
        let measurements = angles
            .iter()
            .enumerate()
            .map(|(j, &angle)| MeasuredVertex {
                vertex: j,
                angle,
                x_deps: alternating(j as isize - 1),
                z_deps: vec![],
            })
            .collect();
        let outputs = vec![OutputVertex {
            vertex: n - 1,
            x_deps: alternating(n as isize - 2),
            z_deps: alternating(n as isize - 3),
        }];
        MeasurementPattern::new(graph, vec![0], measurements, outputs)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    pub fn measurements(&self) -> &[MeasuredVertex] {
        &self.measurements
    }

    pub fn output_vertices(&self) -> Vec<usize> {
        self.outputs.iter().map(|o| o.vertex).collect()
    }

    pub fn num_outcome_strings(&self) -> usize {
        1usize << self.measurements.len()
    }

    fn parity(&self, deps: &[usize], outcomes: &[u8]) -> u8 {
        deps.iter()
            .map(|d| {
                let idx = self.measurements.iter().position(|m| m.vertex == *d).expect("validated");
                outcomes[idx]
            })
            .fold(0, |a, b| a ^ b)
    }

    /// Angle actually used for measurement `i` given earlier outcomes.
    pub fn effective_angle(&self, i: usize, outcomes: &[u8], with_corrections: bool) -> f64 {
        let m = &self.measurements[i];
        if !with_corrections {
            return m.angle;
        }
        let sx = self.parity(&m.x_deps, outcomes);
        let sz = self.parity(&m.z_deps, outcomes);
        let base = if sx == 1 { -m.angle } else { m.angle };
        base + if sz == 1 { std::f64::consts::PI } else { 0.0 }
    }

    fn byproduct(&self, outcomes: &[u8]) -> Vec<(usize, u8, u8)> {
        self.outputs
            .iter()
            .map(|o| (o.vertex, self.parity(&o.x_deps, outcomes), self.parity(&o.z_deps, outcomes)))
            .collect()
    }
}

fn basis_projector(angle: f64, outcome: u8) -> CMatrix {
    // |b⟩⟨b| with |b⟩ = (|0⟩ + s e^{iφ}|1⟩)/√2.
    let s = if outcome == 0 { 1.0 } else { -1.0 };
    let e = expi(angle) * c(s, 0.0);
    CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), e.conj() * c(0.5, 0.0), e * c(0.5, 0.0), c(0.5, 0.0)])
}

fn basis_bra(angle: f64, outcome: u8) -> [C64; 2] {
    let s = if outcome == 0 { 1.0 } else { -1.0 };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [c(h, 0.0), (expi(angle) * c(s * h, 0.0)).conj()]
}

fn expi(a: f64) -> C64 {
    c(a.cos(), a.sin())
}

fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)])
}

fn check_state(rho: &DensityMatrix, pattern: &MeasurementPattern) -> Result<()> {
    if rho.num_qubits() != pattern.graph.num_vertices() {
        return Err(Error::dimension(format!(
            "state on {} qubits, pattern graph has {}",
            rho.num_qubits(),
            pattern.graph.num_vertices()
        )));
    }
    Ok(())
}

/// Unnormalised output on the output vertices for one outcome string.
fn branch_output(
    rho: &CMatrix,
    pattern: &MeasurementPattern,
    outcomes: &[u8],
    with_corrections: bool,
) -> Result<CMatrix> {
    let mut m = rho.clone();
    for (i, meas) in pattern.measurements.iter().enumerate() {
        let angle = pattern.effective_angle(i, &outcomes[..i], with_corrections);
        let proj = basis_projector(angle, outcomes[i]);
        m = apply_1q_left(&m, &proj, meas.vertex);
        m = apply_1q_left(&m.adjoint(), &proj, meas.vertex).adjoint();
    }
    if with_corrections {
        for (v, sx, sz) in pattern.byproduct(outcomes) {
            if sx == 1 {
                m = conjugate_1q(&m, &pauli_x(), v);
            }
            if sz == 1 {
                m = conjugate_1q(&m, &pauli_z(), v);
            }
        }
    }
    reduce_to_outputs(&m, pattern)
}

/// Unnormalised output of the uncorrected pattern for a fixed outcome string;
/// its trace is the outcome probability.
pub fn branch_state(rho: &DensityMatrix, pattern: &MeasurementPattern, outcomes: &[u8]) -> Result<CMatrix> {
    check_state(rho, pattern)?;
    if outcomes.len() != pattern.measurements.len() {
        return Err(Error::dimension("outcome string length"));
    }
    branch_output(rho.matrix(), pattern, outcomes, false)
}

fn reduce_to_outputs(m: &CMatrix, pattern: &MeasurementPattern) -> Result<CMatrix> {
    let outs = pattern.output_vertices();
    let mut sorted = outs.clone();
    sorted.sort_unstable();
    let red = partial_trace(&DensityMatrix::from_raw(m.clone()), &sorted)?.into_matrix();
    let order: Vec<usize> = outs.iter().map(|v| sorted.iter().position(|s| s == v).unwrap()).collect();
    Ok(permute_qubits(&red, &order))
}

/// Result of executing a pattern once.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternRun {
    pub outcomes: Vec<u8>,
    pub output: DensityMatrix,
}

/// Measures every non-output vertex in order, sampling outcomes.
pub fn run_pattern<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    pattern: &MeasurementPattern,
    with_corrections: bool,
    rng: &mut R,
) -> Result<PatternRun> {
    check_state(rho, pattern)?;
    let mut m = rho.matrix().clone();
    let mut outcomes = Vec::with_capacity(pattern.measurements.len());
    for (i, meas) in pattern.measurements.iter().enumerate() {
        let angle = pattern.effective_angle(i, &outcomes, with_corrections);
        let total = m.trace().re;
        let proj0 = basis_projector(angle, 0);
        let p0 = apply_1q_left(&m, &proj0, meas.vertex).trace().re / total;
        let outcome = if rng.random::<f64>() < p0 { 0 } else { 1 };
        let proj = basis_projector(angle, outcome);
        m = apply_1q_left(&m, &proj, meas.vertex);
        m = apply_1q_left(&m.adjoint(), &proj, meas.vertex).adjoint();
        if m.trace().re <= 0.0 {
            return Err(Error::Internal("sampled a zero-probability outcome".into()));
        }
        outcomes.push(outcome);
    }
    if with_corrections {
        for (v, sx, sz) in pattern.byproduct(&outcomes) {
            if sx == 1 {
                m = conjugate_1q(&m, &pauli_x(), v);
            }
            if sz == 1 {
                m = conjugate_1q(&m, &pauli_z(), v);
            }
        }
    }
    let out = reduce_to_outputs(&m, pattern)?;
    let tr = out.trace().re;
    Ok(PatternRun {
        outcomes,
        output: DensityMatrix::from_raw(out / c(tr, 0.0)),
    })
}

fn outcome_bits(index: usize, len: usize) -> Vec<u8> {
    (0..len).map(|i| ((index >> i) & 1) as u8).collect()
}

/// The corrected pattern as a channel: sum of every outcome branch.
pub fn pattern_channel(rho: &DensityMatrix, pattern: &MeasurementPattern) -> Result<DensityMatrix> {
    check_state(rho, pattern)?;
    let k = pattern.measurements.len();
    let mut acc: Option<CMatrix> = None;
    for idx in 0..1usize << k {
        let b = branch_output(rho.matrix(), pattern, &outcome_bits(idx, k), true)?;
        acc = Some(match acc {
            Some(a) => a + b,
            None => b,
        });
    }
    Ok(DensityMatrix::from_raw(acc.expect("at least one branch")))
}

/// Ideal corrected output on the honest graph state; must be pure.
pub fn ideal_output(pattern: &MeasurementPattern) -> Result<StateVector> {
    let rho = pattern_channel(&pattern.graph.state_vector()?.to_density(), pattern)?;
    let (vals, vecs) = crate::dense::eig_hermitian(rho.matrix())?;
    let top = *vals.last().expect("nonempty");
    if (top - 1.0).abs() > 1e-8 {
        return Err(Error::PatternFlow(format!(
            "corrected pattern output is not deterministic (purity eigenvalue {top})"
        )));
    }
    StateVector::normalized(vecs.column(vals.len() - 1).into_owned())
}

/// One element of a measurement-induced ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryEnsembleSample {
    pub outcomes: Vec<u8>,
    pub probability: f64,
    pub unitary: CMatrix,
}

/// Kraus operator mapping the input space to the output space for fixed outcomes.
fn kraus(pattern: &MeasurementPattern, outcomes: &[u8], with_corrections: bool) -> Result<CMatrix> {
    let n = pattern.graph.num_vertices();
    Error::check_cap("pattern qubits", n, crate::pauli::DENSE_CAP)?;
    let k_in = pattern.inputs.len();
    let outs = pattern.output_vertices();
    if outcomes.len() != pattern.measurements.len() {
        return Err(Error::dimension("outcome string length"));
    }
    let edges: Vec<usize> = pattern.graph.edges().map(|(u, v)| (1 << u) | (1 << v)).collect();
    let dim_out = 1usize << outs.len();
    let mut kmat = CMatrix::zeros(dim_out, 1 << k_in);
    let bras: Vec<(usize, [C64; 2])> = pattern
        .measurements
        .iter()
        .enumerate()
        .map(|(i, m)| (m.vertex, basis_bra(pattern.effective_angle(i, &outcomes[..i], with_corrections), outcomes[i])))
        .collect();
    let non_input: Vec<usize> = (0..n).filter(|v| !pattern.inputs.contains(v)).collect();
    let amp_plus = 1.0 / (2f64).powf(non_input.len() as f64 / 2.0);
    for col in 0..1usize << k_in {
        // Inputs fixed to `col`, the rest in |+⟩, then CZ on every edge.
        let mut out = CVector::zeros(dim_out);
        for rest in 0..1usize << non_input.len() {
            let mut b = 0usize;
            for (j, &v) in pattern.inputs.iter().enumerate() {
                b |= ((col >> j) & 1) << v;
            }
            for (j, &v) in non_input.iter().enumerate() {
                b |= ((rest >> j) & 1) << v;
            }
            let sign = if edges.iter().filter(|&&e| b & e == e).count() % 2 == 0 { 1.0 } else { -1.0 };
            let mut amp = c(sign * amp_plus, 0.0);
            for (v, bra) in &bras {
                amp *= bra[(b >> v) & 1];
            }
            let o = outs.iter().enumerate().fold(0, |acc, (j, &v)| acc | (((b >> v) & 1) << j));
            out[o] += amp;
        }
        kmat.set_column(col, &out);
    }
    if with_corrections {
        let byp = pattern.byproduct(outcomes);
        for (j, (_, sx, sz)) in byp.iter().enumerate() {
            if *sx == 1 {
                kmat = apply_1q_left(&kmat, &pauli_x(), j);
            }
            if *sz == 1 {
                kmat = apply_1q_left(&kmat, &pauli_z(), j);
            }
        }
    }
    Ok(kmat)
}

fn unitary_from_kraus(k: CMatrix, outcomes: &[u8]) -> Result<UnitaryEnsembleSample> {
    if k.nrows() != k.ncols() {
        return Err(Error::PatternFlow(format!(
            "{} inputs but {} outputs",
            k.ncols().trailing_zeros(),
            k.nrows().trailing_zeros()
        )));
    }
    let kk = k.adjoint() * &k;
    let d = kk.nrows();
    let p = kk.trace().re / d as f64;
    if max_abs(&(&kk - CMatrix::identity(d, d) * c(p, 0.0))) > 1e-8 {
        return Err(Error::PatternFlow(format!("K†K is not proportional to I for outcomes {outcomes:?}")));
    }
    if p <= 0.0 {
        return Err(Error::PatternFlow("outcome has zero probability".into()));
    }
    Ok(UnitaryEnsembleSample {
        outcomes: outcomes.to_vec(),
        probability: p,
        unitary: k / c(p.sqrt(), 0.0),
    })
}

/// `U^{m̄}` from the uncorrected pattern with outcomes fixed to `outcomes`.
pub fn induced_unitary(pattern: &MeasurementPattern, outcomes: &[u8]) -> Result<UnitaryEnsembleSample> {
    unitary_from_kraus(kraus(pattern, outcomes, false)?, outcomes)
}

/// Same as [`induced_unitary`] with adaptive angles and output byproduct applied.
pub fn corrected_unitary(pattern: &MeasurementPattern, outcomes: &[u8]) -> Result<UnitaryEnsembleSample> {
    unitary_from_kraus(kraus(pattern, outcomes, true)?, outcomes)
}

/// Every outcome string of the uncorrected pattern with its induced unitary.
pub fn enumerate_ensemble(pattern: &MeasurementPattern) -> Result<Vec<UnitaryEnsembleSample>> {
    let k = pattern.measurements.len();
    (0..1usize << k).map(|i| induced_unitary(pattern, &outcome_bits(i, k))).collect()
}

/// Delegated-computation soundness estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DelegatedEstimate {
    /// Mean of `[accepted]·(1 − F(Γ(out), ideal)²)`.
    pub estimate: f64,
    pub stderr: f64,
    pub p_acc: f64,
    /// Per-trial delegated failure values.
    pub values: Vec<f64>,
    /// Certification records on the same streams.
    pub records: Vec<TrialRecord>,
    /// `ρ_ACC`: average of the accepted outputs before the pattern is applied.
    pub accepted_average: Option<DensityMatrix>,
}

/// Runs certification and applies the corrected pattern channel to every accepted output.
pub fn delegated_soundness(
    pattern: &MeasurementPattern,
    copies: usize,
    source: &SourceStrategy,
    mc: &MonteCarlo,
    cfg: &ProtocolConfig,
) -> Result<DelegatedEstimate> {
    let target = Target::from_graph(&pattern.graph)?;
    let prepared = source.prepare(&target, copies)?;
    let ideal = ideal_output(pattern)?;
    let after = |out: &DensityMatrix| -> Result<f64> { Ok(1.0 - fidelity_sq(&pattern_channel(out, pattern)?, &ideal)?) };
    // Product sources emit one of M fixed states on the output copy.
    let cached: Option<Vec<f64>> = match &prepared {
        PreparedSource::Product(states) => Some(states.iter().map(&after).collect::<Result<_>>()?),
        PreparedSource::Global(_) => None,
    };
    let rows = run_trials(mc, |i, rng| {
        let (rec, verdict) = certify_trial(&target, &prepared, copies, cfg, i, rng)?;
        Ok(match (verdict.output, &cached) {
            (None, _) => (rec, 0.0, None),
            (Some(_), Some(c)) => {
                let v = c[rec.key_r - 1];
                (rec, v, None)
            }
            (Some(out), None) => {
                let v = after(&out)?;
                (rec, v, Some(out))
            }
        })
    })?;
    let dim = target.state().amplitudes().len();
    let mut sum = CMatrix::zeros(dim, dim);
    let mut accepted = 0usize;
    let mut records = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (rec, v, out) in rows {
        if rec.accepted {
            accepted += 1;
            match (&prepared, out) {
                (PreparedSource::Product(states), _) => sum += states[rec.key_r - 1].matrix(),
                (_, Some(o)) => sum += o.matrix(),
                _ => return Err(Error::Internal("accepted trial without output".into())),
            }
        }
        records.push(rec);
        values.push(v);
    }
    let (estimate, stderr) = mean_stderr(&values);
    let p_acc = accepted as f64 / records.len() as f64;
    let accepted_average = (accepted > 0).then(|| DensityMatrix::from_raw(sum / c(accepted as f64, 0.0)));
    Ok(DelegatedEstimate {
        estimate,
        stderr,
        p_acc,
        values,
        records,
        accepted_average,
    })
}

/// Checks that a matrix is a valid output state (Hermitian, unit trace).
pub fn is_valid_output(m: &CMatrix) -> bool {
    is_hermitian(m, 1e-9) && (m.trace().re - 1.0).abs() < 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{fidelity_mixed, is_unitary};
    use crate::graph::hadamard;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phase(theta: f64) -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(theta.cos(), theta.sin())])
    }

    /// Direct circuit oracle: each measured vertex applies `H · P(-φ)`.
    fn line_unitary(angles: &[f64]) -> CMatrix {
        angles
            .iter()
            .fold(CMatrix::identity(2, 2), |u, &a| hadamard() * phase(-a) * u)
    }

    fn same_up_to_phase(a: &CMatrix, b: &CMatrix) -> bool {
        let overlap = (a.adjoint() * b).trace().norm() / a.nrows() as f64;
        (overlap - 1.0).abs() < 1e-10
    }

    #[test]
    fn x_measurement_on_k2_leaves_zero() {
        let pattern = MeasurementPattern::new(
            Graph::line(2).unwrap(),
            vec![0],
            vec![MeasuredVertex { vertex: 0, angle: 0.0, x_deps: vec![], z_deps: vec![] }],
            vec![OutputVertex { vertex: 1, x_deps: vec![], z_deps: vec![] }],
        )
        .unwrap();
        let rho = Graph::line(2).unwrap().state_vector().unwrap().to_density();
        let out = branch_output(rho.matrix(), &pattern, &[0], false).unwrap();
        let out = &out / c(out.trace().re, 0.0);
        assert!((out[(0, 0)].re - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let run = run_pattern(&rho, &pattern, false, &mut rng).unwrap();
            let expected = if run.outcomes[0] == 0 { 0 } else { 1 };
            assert!((run.output.matrix()[(expected, expected)].re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hadamard_from_two_qubit_line() {
        let pattern = MeasurementPattern::line(&[0.0]).unwrap();
        let u = induced_unitary(&pattern, &[0]).unwrap();
        assert!(same_up_to_phase(&u.unitary, &hadamard()));
        assert!((u.probability - 0.5).abs() < 1e-12);
    }

    #[test]
    fn five_qubit_line_computes_rotation_sequence() {
        let angles = [0.3, -1.1, 0.7, 2.0];
        let pattern = MeasurementPattern::line(&angles).unwrap();
        let plus = StateVector::plus(1);
        let expected = StateVector::normalized(line_unitary(&angles) * plus.amplitudes()).unwrap();
        let rho = pattern.graph().state_vector().unwrap().to_density();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..40 {
            let run = run_pattern(&rho, &pattern, true, &mut rng).unwrap();
            assert!((fidelity_sq(&run.output, &expected).unwrap() - 1.0).abs() < 1e-8);
        }
        let ideal = ideal_output(&pattern).unwrap();
        assert!((ideal.inner(&expected).norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn corrections_vanish_on_all_zero_outcomes() {
        let pattern = MeasurementPattern::line(&[0.4, 0.9, -0.2]).unwrap();
        let rho = pattern.graph().state_vector().unwrap().to_density();
        let zeros = vec![0u8; 3];
        let a = branch_output(rho.matrix(), &pattern, &zeros, true).unwrap();
        let b = branch_output(rho.matrix(), &pattern, &zeros, false).unwrap();
        assert!(max_abs(&(a - b)) < 1e-14);
    }

    #[test]
    fn byproduct_relation_on_three_qubit_line() {
        let pattern = MeasurementPattern::line(&[0.4, 1.3]).unwrap();
        let reference = induced_unitary(&pattern, &[0, 0]).unwrap().unitary;
        for idx in 0..4 {
            let bits = outcome_bits(idx, 2);
            let corrected = corrected_unitary(&pattern, &bits).unwrap();
            assert!(same_up_to_phase(&corrected.unitary, &reference), "{bits:?}");
            assert!((corrected.probability - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn ensembles_are_unitary_and_complete() {
        for angles in [vec![0.0], vec![0.2, 0.5], vec![0.3, -0.4, 1.0], vec![0.1, 0.2, 0.3, 0.4]] {
            let pattern = MeasurementPattern::line(&angles).unwrap();
            let ens = enumerate_ensemble(&pattern).unwrap();
            let total: f64 = ens.iter().map(|s| s.probability).sum();
            assert!((total - 1.0).abs() < 1e-8);
            assert!(ens.iter().all(|s| is_unitary(&s.unitary, 1e-8)));
            // Γ^{m̄}(|G⟩) ∝ U^{m̄}|+⟩.
            let rho = pattern.graph().state_vector().unwrap().to_density();
            for s in &ens {
                let out = branch_output(rho.matrix(), &pattern, &s.outcomes, false).unwrap();
                assert!((out.trace().re - s.probability).abs() < 1e-10);
                let psi = StateVector::normalized(&s.unitary * StateVector::plus(1).amplitudes()).unwrap();
                let f = fidelity_sq(&DensityMatrix::from_raw(&out / c(out.trace().re, 0.0)), &psi).unwrap();
                assert!((f - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mismatched_io_is_a_flow_error() {
        let pattern = MeasurementPattern::new(
            Graph::line(3).unwrap(),
            vec![0, 1],
            vec![MeasuredVertex { vertex: 0, angle: 0.0, x_deps: vec![], z_deps: vec![] }],
            vec![
                OutputVertex { vertex: 1, x_deps: vec![], z_deps: vec![] },
                OutputVertex { vertex: 2, x_deps: vec![], z_deps: vec![] },
            ],
        )
        .unwrap();
        // Two inputs, two outputs, but a CZ-entangled input measured away: not unitary.
        assert!(matches!(induced_unitary(&pattern, &[0]), Err(Error::PatternFlow(_))));
    }

    #[test]
    fn pattern_validation() {
        let g = Graph::line(3).unwrap();
        let m = |v, deps: Vec<usize>| MeasuredVertex { vertex: v, angle: 0.0, x_deps: deps, z_deps: vec![] };
        let o = |v| OutputVertex { vertex: v, x_deps: vec![], z_deps: vec![] };
        assert!(MeasurementPattern::new(g.clone(), vec![0], vec![m(0, vec![]), m(1, vec![1])], vec![o(2)]).is_err());
        assert!(MeasurementPattern::new(g.clone(), vec![0], vec![m(0, vec![])], vec![o(2)]).is_err());
        assert!(MeasurementPattern::new(g.clone(), vec![0], vec![m(0, vec![]), m(0, vec![])], vec![o(2)]).is_err());
        assert!(MeasurementPattern::new(g, vec![0], vec![m(1, vec![0]), m(0, vec![])], vec![o(2)]).is_err());
    }

    #[test]
    fn toml_pattern_file() {
        let text = r#"
graph = "line:3"
inputs = [0]

[[measure]]
vertex = 0
angle = 0.25

[[measure]]
vertex = 1
angle = -0.5
x_deps = [0]

[[output]]
vertex = 2
x_deps = [1]
z_deps = [0]
"#;
        let p = MeasurementPattern::from_toml_str(text, None).unwrap();
        assert_eq!(p, MeasurementPattern::line(&[0.25, -0.5]).unwrap());
        assert!(MeasurementPattern::from_toml_str("graph = \"line:3\"\nbogus = 1\n", None).is_err());
    }

    fn random_density(rng: &mut ChaCha8Rng, dim: usize) -> DensityMatrix {
        let a = CMatrix::from_fn(dim, dim, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let m = &a * a.adjoint();
        DensityMatrix::new(&m / c(m.trace().re, 0.0)).unwrap()
    }

    #[test]
    fn fidelity_is_monotone_under_patterns() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for i in 0..200 {
            let len = 1 + i % 2;
            let angles: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
            let pattern = MeasurementPattern::line(&angles).unwrap();
            let dim = 1 << (len + 1);
            let rho = random_density(&mut rng, dim);
            let sigma = random_density(&mut rng, dim);
            let before = fidelity_mixed(&rho, &sigma).unwrap();
            let after = fidelity_mixed(
                &pattern_channel(&rho, &pattern).unwrap(),
                &pattern_channel(&sigma, &pattern).unwrap(),
            )
            .unwrap();
            assert!(after >= before - 1e-9, "{after} < {before}");
        }
    }

    #[test]
    fn delegated_soundness_is_dominated_by_certification() {
        let pattern = MeasurementPattern::line(&[0.3, -0.8, 1.2, 0.5]).unwrap();
        let mc = MonteCarlo { trials: 2000, seed: 11, workers: 2 };
        let cfg = ProtocolConfig::default();
        let honest = delegated_soundness(&pattern, 4, &SourceStrategy::Honest, &mc, &cfg).unwrap();
        assert!(honest.estimate.abs() < 1e-12);
        assert_eq!(honest.p_acc, 1.0);
        let target = Target::from_graph(pattern.graph()).unwrap();
        let src = crate::sources::replace_orthogonal(&target, 2).unwrap();
        let d = delegated_soundness(&pattern, 4, &src, &mc, &cfg).unwrap();
        for (v, rec) in d.values.iter().zip(&d.records) {
            assert!(*v <= rec.fail_value() + 1e-9);
        }
        assert!(d.estimate <= 0.25 + 3.0 * d.stderr);
        let rho = d.accepted_average.unwrap();
        let f = fidelity_sq(&rho, target.state()).unwrap();
        let mean_fail = d.records.iter().map(TrialRecord::fail_value).sum::<f64>() / d.records.len() as f64;
        assert!((f - (1.0 - mean_fail / d.p_acc)).abs() < 1e-9);
    }

    #[test]
    fn channel_is_trace_preserving() {
        let pattern = MeasurementPattern::line(&[0.3, 0.8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let rho = random_density(&mut rng, 8);
            let out = pattern_channel(&rho, &pattern).unwrap();
            assert!(is_valid_output(out.matrix()));
        }
    }
}
