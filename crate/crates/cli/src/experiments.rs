use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use graphcert::applications::mbqc::{delegated_soundness, enumerate_ensemble, resolve_graph, MeasurementPattern};
use graphcert::applications::metrology::{cramer_rao, ghz_target, metrology_check, metrology_check_exact};
use graphcert::applications::secret_sharing::{estimate_ss, ss_exact, AccessStructure};
use graphcert::applications::tdesign::{
    branch_fidelities, certified_ensemble_fidelity, ensemble_frame_potential, frame_potential_with_error,
    haar_frame_potential, haar_unitary,
};
use graphcert::dense::{is_unitary, DensityMatrix};
use graphcert::graph::Graph;
use graphcert::protocol::{
    estimate_p_fail, exact_evaluation, mean_stderr, trial_rng, Channel, MonteCarlo, ProtocolConfig, SourceStrategy,
    Target, TrialRecord,
};
use graphcert::sources;
use graphcert::spectral::{eigen_relation_residual, spectrum_deviation, spectrum_report};

use crate::config::{ExperimentConfig, Format, Settings};
use crate::output::{write_records, write_summary};
use crate::{CliError, Experiment, RunOutcome};

const DEFAULT_TRIALS: usize = 1000;
const DEFAULT_SEED: u64 = 0;
/// Stream index reserved for drawing random adversaries.
const SOURCE_STREAM: u64 = u64::MAX;
/// Exact evaluation of coherent sources is attempted up to this many keys.
const EXACT_KEY_LIMIT: u128 = 1 << 14;

pub fn dispatch(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let s = &cfg.settings;
    let dir = s.output_dir();
    let format = s.format.unwrap_or(Format::Csv);
    let (summary, pass) = match cfg.experiment {
        Experiment::Certify => certify(s, &dir, format)?,
        Experiment::Spectrum => spectrum(s, &dir, format)?,
        Experiment::Mbqc => mbqc(s, &dir, format)?,
        Experiment::Tdesign => tdesign(s, &dir, format)?,
        Experiment::Metrology => metrology(s, &dir, format)?,
        Experiment::Secretshare => secretshare(s, &dir, format)?,
    };
    write_summary(&dir, cfg.experiment.name(), summary)?;
    Ok(RunOutcome { dir, pass })
}

fn graph(s: &Settings) -> Result<Graph, CliError> {
    Ok(resolve_graph(&Settings::require(&s.graph, "graph")?, None)?)
}

fn monte_carlo(s: &Settings) -> Result<MonteCarlo, CliError> {
    let trials = s.trials.unwrap_or(DEFAULT_TRIALS);
    if trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    // Runs execute inside a pool already sized by --workers.
    Ok(MonteCarlo {
        trials,
        seed: s.seed.unwrap_or(DEFAULT_SEED),
        workers: 0,
    })
}

fn protocol_config(s: &Settings) -> Result<ProtocolConfig, CliError> {
    let cfg = ProtocolConfig {
        tau: s.tau.unwrap_or(1.0),
        exclude_identity: s.exclude_identity.unwrap_or(false),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn copies(s: &Settings) -> Result<usize, CliError> {
    let m = Settings::require(&s.copies, "copies")?;
    if m < 2 {
        return Err(CliError::Usage("--copies must be at least 2".into()));
    }
    Ok(m)
}

/// Resolves `--source` and its parameters against a target.
pub fn build_source(s: &Settings, target: &Target, copies: usize) -> Result<(SourceStrategy, Value), CliError> {
    let name = s.source.clone().unwrap_or_else(|| "honest".into());
    let position = s.position.unwrap_or(1);
    let mut rng = trial_rng(s.seed.unwrap_or(DEFAULT_SEED), SOURCE_STREAM);
    let n = target.num_qubits();
    let (src, params) = match name.as_str() {
        "honest" => (SourceStrategy::Honest, json!({})),
        "depolarizing" | "dephasing" => {
            let p = Settings::require(&s.p, "p")?;
            let ch = if name == "depolarizing" { Channel::Depolarizing(p) } else { Channel::Dephasing(p) };
            (SourceStrategy::IidChannel(ch), json!({ "p": p }))
        }
        "replace-orthogonal" => (sources::replace_orthogonal(target, position)?, json!({ "position": position })),
        "replace-partial" => {
            let f = Settings::require(&s.fidelity, "fidelity")?;
            (
                sources::replace_partial(target, position, f)?,
                json!({ "position": position, "fidelity_sq": f }),
            )
        }
        "replace-mixed" => (
            SourceStrategy::SingleCopyReplace {
                position,
                state: DensityMatrix::maximally_mixed(n),
            },
            json!({ "position": position }),
        ),
        "product-random" => (sources::random_product_source(n, copies, &mut rng), json!({})),
        "coherent-random" => (sources::random_coherent_source(n, copies, &mut rng), json!({})),
        other => return Err(CliError::Usage(format!("unknown source {other:?}"))),
    };
    Ok((src, json!({ "name": name, "params": params })))
}

fn exact_feasible(source: &SourceStrategy, n: usize, copies: usize) -> bool {
    match source {
        SourceStrategy::Coherent(_) => {
            let keys = (copies as u128).saturating_mul(1u128.checked_shl((n * (copies - 1)) as u32).unwrap_or(u128::MAX));
            keys <= EXACT_KEY_LIMIT
        }
        _ => true,
    }
}

#[derive(Serialize)]
struct CertifyRow {
    trial: usize,
    key_r: usize,
    accepted: bool,
    tests_passed: usize,
    fidelity_sq: Option<f64>,
}

impl From<&TrialRecord> for CertifyRow {
    fn from(r: &TrialRecord) -> Self {
        CertifyRow {
            trial: r.trial,
            key_r: r.key_r,
            accepted: r.accepted,
            tests_passed: r.tests_passed,
            fidelity_sq: r.fidelity_sq,
        }
    }
}

fn common(s: &Settings, cfg: &ProtocolConfig, mc: &MonteCarlo, copies: usize) -> Value {
    json!({
        "graph": s.graph,
        "copies": copies,
        "trials": mc.trials,
        "seed": mc.seed,
        "tau": cfg.tau,
        "exclude_identity": cfg.exclude_identity,
    })
}

fn extend(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut base, extra) {
        a.extend(b);
    }
    base
}

fn certify(s: &Settings, dir: &Path, format: Format) -> Result<(Value, bool), CliError> {
    let g = graph(s)?;
    let m = copies(s)?;
    let mc = monte_carlo(s)?;
    let cfg = protocol_config(s)?;
    let target = Target::from_graph(&g)?;
    let (source, source_json) = build_source(s, &target, m)?;
    let est = estimate_p_fail(&target, m, &source, &mc, &cfg)?;
    let exact = if exact_feasible(&source, g.num_vertices(), m) {
        Some(exact_evaluation(&target, m, &source, &cfg)?)
    } else {
        None
    };
    let rows: Vec<CertifyRow> = est.records.iter().map(CertifyRow::from).collect();
    write_records(dir, "records", format, &rows)?;
    let bound = 1.0 / m as f64;
    let mc_pass = est.estimate <= bound + 3.0 * est.stderr;
    let exact_pass = exact.as_ref().is_none_or(|e| e.p_fail <= bound + 1e-9);
    let summary = extend(
        common(s, &cfg, &mc, m),
        json!({
            "source": source_json,
            "estimate": est.estimate,
            "stderr": est.stderr,
            "p_acc": est.p_acc,
            "exact_p_fail": exact.as_ref().map(|e| e.p_fail),
            "exact_p_acc": exact.as_ref().map(|e| e.p_acc),
            "bound": bound,
            "bound_name": "1/M",
            "pass": mc_pass && exact_pass,
        }),
    );
    Ok((summary, mc_pass && exact_pass))
}

#[derive(Serialize)]
struct SpectrumCsvRow {
    k: usize,
    eigenvalue: f64,
    expected_multiplicity: u64,
    observed_multiplicity: f64,
}

fn spectrum(s: &Settings, dir: &Path, format: Format) -> Result<(Value, bool), CliError> {
    let g = graph(s)?;
    let m = copies(s)?;
    let target = Target::from_graph(&g)?;
    let (rows, check) = spectrum_report(&target, m)?;
    let deviation = spectrum_deviation(g.num_vertices(), m, &check.eigenvalues)?;
    let residual = eigen_relation_residual(&target, m)?;
    let csv_rows = rows
        .iter()
        .map(|r| {
            Ok(SpectrumCsvRow {
                k: r.k,
                eigenvalue: r.eigenvalue,
                expected_multiplicity: u64::try_from(r.expected_multiplicity)
                    .map_err(|_| CliError::Capacity("multiplicity exceeds 64 bits".into()))?,
                observed_multiplicity: r.observed_multiplicity,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_records(dir, "spectrum", format, &csv_rows)?;
    let pass = check.pass && deviation <= 1e-8 && residual <= 1e-8;
    Ok((
        json!({
            "graph": s.graph,
            "copies": m,
            "max_eigenvalue": check.max_eigenvalue,
            "bound": 1.0,
            "bound_name": "max eigenvalue of Q",
            "spectrum_deviation": deviation,
            "eigen_relation_residual": residual,
            "pass": pass,
        }),
        pass,
    ))
}

#[derive(Serialize)]
struct MbqcRow {
    trial: usize,
    key_r: usize,
    accepted: bool,
    tests_passed: usize,
    fidelity_sq: Option<f64>,
    delegated_fail: f64,
}

fn pattern(s: &Settings) -> Result<MeasurementPattern, CliError> {
    match (&s.pattern, &s.angles) {
        (Some(path), _) => Ok(MeasurementPattern::load(path)?),
        (None, Some(angles)) if !angles.is_empty() => Ok(MeasurementPattern::line(angles)?),
        _ => Err(CliError::Usage("missing required --pattern or --angles".into())),
    }
}

fn mbqc(s: &Settings, dir: &Path, format: Format) -> Result<(Value, bool), CliError> {
    let pat = pattern(s)?;
    let m = copies(s)?;
    let mc = monte_carlo(s)?;
    let cfg = protocol_config(s)?;
    let target = Target::from_graph(pat.graph())?;
    let (source, source_json) = build_source(s, &target, m)?;
    let d = delegated_soundness(&pat, m, &source, &mc, &cfg)?;
    let rows: Vec<MbqcRow> = d
        .records
        .iter()
        .zip(&d.values)
        .map(|(r, &v)| MbqcRow {
            trial: r.trial,
            key_r: r.key_r,
            accepted: r.accepted,
            tests_passed: r.tests_passed,
            fidelity_sq: r.fidelity_sq,
            delegated_fail: v,
        })
        .collect();
    write_records(dir, "records", format, &rows)?;

    let certify_values: Vec<f64> = d.records.iter().map(TrialRecord::fail_value).collect();
    let (certify_estimate, certify_stderr) = mean_stderr(&certify_values);
    let dominated = d.values.iter().zip(&certify_values).all(|(a, b)| *a <= b + 1e-9);
    let bound = 1.0 / m as f64;
    let soundness_pass = d.estimate <= bound + 3.0 * d.stderr;
    let monotone_pass = dominated && d.estimate <= certify_estimate + 1e-12;

    // Squared fidelity of the accepted-average state and the matching lower bound.
    let ensemble = if d.p_acc > 0.0 {
        let fsq = 1.0 - certify_estimate / d.p_acc;
        let margin_stderr = certify_stderr / d.p_acc;
        let lower = certified_ensemble_fidelity(d.p_acc, m)?;
        let branch = match &d.accepted_average {
            Some(rho) if pat.inputs().len() == pat.output_vertices().len() => {
                let rows = branch_fidelities(&pat, rho)?;
                let total: f64 = rows.iter().map(|r| r.probability).sum();
                Some(rows.iter().map(|r| r.probability * r.fidelity_sq).sum::<f64>() / total)
            }
            _ => None,
        };
        Some((fsq, margin_stderr, lower, branch))
    } else {
        None
    };
    let ensemble_pass = ensemble.is_none_or(|(f, se, lower, _)| f >= lower - 3.0 * se);
    let pass = soundness_pass && monotone_pass && ensemble_pass;
    let summary = extend(
        common(s, &cfg, &mc, m),
        json!({
            "pattern": s.pattern,
            "angles": s.angles,
            "source": source_json,
            "estimate": d.estimate,
            "stderr": d.stderr,
            "p_acc": d.p_acc,
            "bound": bound,
            "bound_name": "1/M",
            "certify_estimate": certify_estimate,
            "certify_stderr": certify_stderr,
            "dominated_per_trial": dominated,
            "accepted_fidelity_sq": ensemble.map(|e| e.0),
            "accepted_fidelity_sq_stderr": ensemble.map(|e| e.1),
            "ensemble_bound": ensemble.map(|e| e.2),
            "ensemble_bound_name": "1 - 1/(P_acc M)",
            "branch_averaged_fidelity_sq": ensemble.and_then(|e| e.3),
            "soundness_pass": soundness_pass,
            "monotonicity_pass": monotone_pass,
            "ensemble_pass": ensemble_pass,
            "pass": pass,
        }),
    );
    Ok((summary, pass))
}

#[derive(Serialize)]
struct FrameRow {
    t: usize,
    frame_potential: f64,
    stderr: f64,
    haar_value: f64,
    ensemble_frame_potential: Option<f64>,
}

#[derive(Serialize)]
struct EnsembleRow {
    outcomes: String,
    probability: f64,
    unitary: bool,
}

fn tdesign(s: &Settings, dir: &Path, format: Format) -> Result<(Value, bool), CliError> {
    let samples = s.samples.unwrap_or(10_000);
    let t_max = s.t.unwrap_or(2);
    if samples < 2 || t_max == 0 {
        return Err(CliError::Usage("need --samples ≥ 2 and --t ≥ 1".into()));
    }
    let seed = s.seed.unwrap_or(DEFAULT_SEED);
    let dim = 2usize;
    let mut rng = trial_rng(seed, 0);
    let haar: Vec<_> = (0..samples).map(|_| haar_unitary(dim, &mut rng)).collect();

    let pattern_given = s.pattern.is_some() || s.angles.is_some();
    let ensemble = if pattern_given { Some(enumerate_ensemble(&pattern(s)?)?) } else { None };
    let weighted: Option<Vec<_>> =
        ensemble.as_ref().map(|e| e.iter().map(|x| (x.probability, x.unitary.clone())).collect());

    let mut rows = Vec::new();
    let mut haar_pass = true;
    for t in 1..=t_max {
        let fp = frame_potential_with_error(&haar, t)?;
        let hv = haar_frame_potential(t);
        if dim >= t {
            haar_pass &= (fp.value - hv).abs() <= 0.05 * hv;
        }
        rows.push(FrameRow {
            t,
            frame_potential: fp.value,
            stderr: fp.stderr,
            haar_value: hv,
            ensemble_frame_potential: weighted.as_ref().map(|w| ensemble_frame_potential(w, t)).transpose()?,
        });
    }
    write_records(dir, "frame_potential", format, &rows)?;

    let mut summary = json!({
        "seed": seed,
        "samples": samples,
        "dimension": dim,
        "t": t_max,
        "haar_within_5_percent": haar_pass,
    });
    let mut pass = haar_pass;
    if let Some(ens) = &ensemble {
        let total: f64 = ens.iter().map(|e| e.probability).sum();
        let unitary = ens.iter().all(|e| is_unitary(&e.unitary, 1e-8));
        let erows: Vec<EnsembleRow> = ens
            .iter()
            .map(|e| EnsembleRow {
                outcomes: e.outcomes.iter().map(|b| char::from(b'0' + b)).collect(),
                probability: e.probability,
                unitary: is_unitary(&e.unitary, 1e-8),
            })
            .collect();
        write_records(dir, "ensemble", format, &erows)?;
        let ok = unitary && (total - 1.0).abs() < 1e-8;
        pass &= ok;
        summary = extend(
            summary,
            json!({
                "pattern": s.pattern,
                "angles": s.angles,
                "ensemble_size": ens.len(),
                "ensemble_total_probability": total,
                "ensemble_unitary": unitary,
                "ensemble_pass": ok,
            }),
        );
    }
    summary = extend(summary, json!({ "bound_name": "Haar frame potential t!", "pass": pass }));
    Ok((summary, pass))
}

fn metrology(s: &Settings, dir: &Path, format: Format) -> Result<(Value, bool), CliError> {
    let n = s.n.unwrap_or(3);
    if n < 2 {
        return Err(CliError::Usage("--n must be at least 2".into()));
    }
    let m = copies(s)?;
    let mc = monte_carlo(s)?;
    let cfg = protocol_config(s)?;
    let target = ghz_target(n)?;
    let (source, source_json) = build_source(s, &target, m)?;
    let chk = metrology_check(n, m, &source, &mc, &cfg)?;
    let exact = if exact_feasible(&source, n, m) {
        Some(metrology_check_exact(n, m, &source, &cfg)?)
    } else {
        None
    };
    let rows: Vec<CertifyRow> = chk.records.iter().map(CertifyRow::from).collect();
    write_records(dir, "records", format, &rows)?;
    let pass = chk.pass && exact.as_ref().is_none_or(|e| e.pass);
    let summary = extend(
        common(s, &cfg, &mc, m),
        json!({
            "n": n,
            "source": source_json,
            "p_acc": chk.p_acc,
            "qfi": chk.qfi,
            "bound": chk.bound,
            "bound_name": "N^2 (1 - 6/(P_acc M))",
            "heisenberg_limit": (n * n) as f64,
            "cramer_rao_single_shot": chk.qfi.filter(|f| *f > 0.0).map(|f| cramer_rao(1, f)).transpose()?,
            "exact_p_acc": exact.as_ref().map(|e| e.p_acc),
            "exact_qfi": exact.as_ref().and_then(|e| e.qfi),
            "exact_bound": exact.as_ref().and_then(|e| e.bound),
            "pass": pass,
        }),
    );
    Ok((summary, pass))
}

#[derive(Serialize)]
struct ShareRow {
    trial: usize,
    accepted: bool,
}

fn secretshare(s: &Settings, dir: &Path, format: Format) -> Result<(Value, bool), CliError> {
    let g = graph(s)?;
    let m = copies(s)?;
    let mc = monte_carlo(s)?;
    let cfg = protocol_config(s)?;
    let k = Settings::require(&s.access_k, "access-k")?;
    let access = AccessStructure::new(g.num_vertices(), k)?;
    let authorized = s.authorized.clone().unwrap_or_else(|| (0..g.num_vertices()).collect());
    let target = Target::from_graph(&g)?;
    let (source, source_json) = build_source(s, &target, m)?;
    let sum = estimate_ss(&g, m, &source, &access, &authorized, &mc, &cfg)?;
    let exact = if exact_feasible(&source, g.num_vertices(), m) && !sum.degenerate {
        Some(ss_exact(&g, m, &source, &authorized, &cfg)?)
    } else {
        None
    };
    if sum.degenerate {
        eprintln!("warning: only the identity is supported on the authorised set; certification claim rejected");
    }
    let rows: Vec<ShareRow> =
        sum.accepted.iter().enumerate().map(|(trial, &accepted)| ShareRow { trial, accepted }).collect();
    write_records(dir, "records", format, &rows)?;
    let bound = 1.0 / m as f64;
    let pass = exact.as_ref().is_none_or(|e| e.p_fail <= bound + 1e-9);
    let summary = extend(
        common(s, &cfg, &mc, m),
        json!({
            "source": source_json,
            "players": access.players(),
            "threshold": k,
            "authorized": authorized,
            "subgroup_size": sum.subgroup_size,
            "degenerate": sum.degenerate,
            "claim": if sum.degenerate { "rejected" } else { "evaluated" },
            "p_acc": sum.p_acc,
            "stderr": sum.p_acc_stderr,
            "exact_restricted_p_fail": exact.as_ref().map(|e| e.p_fail),
            "exact_p_acc": exact.as_ref().map(|e| e.p_acc),
            "bound": bound,
            "bound_name": "1/M on the restricted projector",
            "pass": pass,
        }),
    );
    Ok((summary, pass))
}
