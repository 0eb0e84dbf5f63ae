//! End-to-end acceptance criteria. Prints one line per criterion and fails if any does.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use graphcert::applications::mbqc::{induced_unitary, MeasurementPattern};
use graphcert::applications::metrology::{ghz_target, jz, metrology_check, metrology_check_exact, qfi};
use graphcert::applications::secret_sharing::{
    estimate_ss, eval_share, shamir_reconstruct, shamir_share, AccessStructure, PRIME,
};
use graphcert::applications::tdesign::{ensemble_frame_potential, frame_potential, frame_potential_with_error, haar_unitary};
use graphcert::dense::{max_abs, CMatrix, DensityMatrix, QuantumState};
use graphcert::graph::{ghz_state, Graph};
use graphcert::pauli::PauliString;
use graphcert::protocol::{
    estimate_p_fail, exact_p_fail, trial_rng, Channel, MonteCarlo, ProtocolConfig, SourceStrategy, Target,
};
use graphcert::sources::{random_coherent_source, random_product_source, replace_orthogonal, replace_partial};
use graphcert::spectral::{build_q, eigen_relation_residual, spectrum_deviation, verify_q_bound};
use graphcert_cli::{Experiment, ExperimentConfig, Settings};
use rand::Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn g(spec: &str) -> Graph {
    spec.parse().unwrap()
}

fn mc(trials: usize, seed: u64) -> MonteCarlo {
    MonteCarlo { trials, seed, workers: 0 }
}

fn completeness() -> Outcome {
    let cfg = ProtocolConfig::default();
    let mut runs = 0;
    for spec in ["line:3", "ring:4", "star:4", "complete:3"] {
        let target = Target::from_graph(&g(spec)).unwrap();
        for m in [2, 5, 10] {
            let est = estimate_p_fail(&target, m, &SourceStrategy::Honest, &mc(10_000, m as u64), &cfg).unwrap();
            check(est.p_acc == 1.0, format!("{spec} M={m}: acceptance {}", est.p_acc))?;
            let worst = est.records.iter().map(|r| (1.0 - r.fidelity_sq.unwrap_or(0.0)).abs()).fold(0.0, f64::max);
            check(worst <= 1e-10, format!("{spec} M={m}: fidelity² off by {worst:e}"))?;
            runs += 1;
        }
    }
    Ok(format!("{runs} runs of 10^4 trials accepted with fidelity² 1"))
}

struct Case {
    label: String,
    copies: usize,
    source: SourceStrategy,
    monte_carlo: bool,
}

fn soundness() -> Outcome {
    let target = Target::from_graph(&g("line:2")).unwrap();
    let cfg = ProtocolConfig::default();
    let mut rng = trial_rng(2, 0);
    let mut cases = Vec::new();
    for m in [2usize, 3] {
        let named = [
            ("replace-orthogonal", replace_orthogonal(&target, 1).unwrap()),
            ("replace-partial", replace_partial(&target, 2, 0.5).unwrap()),
            ("depolarizing 0.05", SourceStrategy::IidChannel(Channel::Depolarizing(0.05))),
            ("depolarizing 0.2", SourceStrategy::IidChannel(Channel::Depolarizing(0.2))),
        ];
        for (label, source) in named {
            cases.push(Case { label: format!("{label} M={m}"), copies: m, source, monte_carlo: true });
        }
        for i in 0..1000 {
            cases.push(Case {
                label: format!("product #{i} M={m}"),
                copies: m,
                source: random_product_source(2, m, &mut rng),
                monte_carlo: i < 5,
            });
        }
        for i in 0..100 {
            cases.push(Case {
                label: format!("coherent #{i} M={m}"),
                copies: m,
                source: random_coherent_source(2, m, &mut rng),
                monte_carlo: i < 5,
            });
        }
    }
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_z: f64 = 0.0;
    let mut compared = 0;
    for (i, case) in cases.iter().enumerate() {
        let exact = exact_p_fail(&target, case.copies, &case.source, &cfg).unwrap();
        let bound = 1.0 / case.copies as f64;
        check(exact <= bound + 1e-9, format!("{}: exact {exact} > 1/M", case.label))?;
        worst_gap = worst_gap.max(exact - bound);
        if case.monte_carlo {
            let est = estimate_p_fail(&target, case.copies, &case.source, &mc(100_000, 1000 + i as u64), &cfg).unwrap();
            let diff = (est.estimate - exact).abs();
            check(
                diff <= 3.0 * est.stderr + 1e-12,
                format!("{}: MC {} vs exact {exact} (stderr {})", case.label, est.estimate, est.stderr),
            )?;
            if est.stderr > 0.0 {
                worst_z = worst_z.max(diff / est.stderr);
            }
            compared += 1;
        }
    }
    Ok(format!(
        "{} sources within 1/M (max exact − 1/M = {worst_gap:.3e}); {compared} MC runs within {worst_z:.2} stderr",
        cases.len()
    ))
}

fn saturation() -> Outcome {
    let cfg = ProtocolConfig::default();
    let mut worst: f64 = 0.0;
    for spec in ["line:3", "ring:4", "star:4"] {
        let target = Target::from_graph(&g(spec)).unwrap();
        for m in [2usize, 4, 8] {
            let p = exact_p_fail(&target, m, &replace_orthogonal(&target, 1).unwrap(), &cfg).unwrap();
            let expected = (1.0 - 0.0) / m as f64;
            worst = worst.max((p - expected).abs());
            check((p - expected).abs() <= 1e-10, format!("{spec} M={m}: {p} vs {expected}"))?;
        }
    }
    Ok(format!("orthogonal replacement gives 1/M exactly (max deviation {worst:.1e})"))
}

fn q_identity() -> Outcome {
    let cfg = ProtocolConfig::default();
    let mut worst: f64 = 0.0;
    for (spec, n, m) in [("empty:1", 1, 2usize), ("empty:1", 1, 3), ("line:2", 2, 2), ("line:2", 2, 3)] {
        let target = Target::from_graph(&g(spec)).unwrap();
        let q = build_q(&target, m).unwrap();
        let mut rng = trial_rng(4, (n * 10 + m) as u64);
        for _ in 0..100 {
            let src = random_coherent_source(n, m, &mut rng);
            let SourceStrategy::Coherent(QuantumState::Pure(psi)) = &src else { unreachable!() };
            let lhs = q.expectation(&psi.projector()).unwrap() / m as f64;
            let rhs = exact_p_fail(&target, m, &src, &cfg).unwrap();
            worst = worst.max((lhs - rhs).abs());
        }
    }
    check(worst <= 1e-9, format!("max |Tr(Qρ)/M − p_fail| = {worst:e}"))?;
    Ok(format!("400 coherent states, max |Tr(Qρ)/M − p_fail| = {worst:.1e}"))
}

fn spectrum() -> Outcome {
    let mut details = Vec::new();
    for (spec, n, m) in [("empty:1", 1, 2usize), ("empty:1", 1, 3), ("line:2", 2, 2), ("line:2", 2, 3)] {
        let target = Target::from_graph(&g(spec)).unwrap();
        let bound = verify_q_bound(&target, m).unwrap();
        let dev = spectrum_deviation(n, m, &bound.eigenvalues).unwrap();
        let res = eigen_relation_residual(&target, m).unwrap();
        check(dev <= 1e-8, format!("n={n} M={m}: spectrum deviation {dev:e}"))?;
        check(bound.max_eigenvalue <= 1.0 + 1e-9, format!("n={n} M={m}: λ_max {}", bound.max_eigenvalue))?;
        check(res <= 1e-8, format!("n={n} M={m}: eigen-relation residual {res:e}"))?;
        details.push(format!("(n={n},M={m}) λmax={:.6}", bound.max_eigenvalue));
    }
    Ok(details.join(", "))
}

fn projector_identity() -> Outcome {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for kind in ["line", "ring", "star", "complete", "empty"] {
        for n in 1..=5 {
            let Ok(graph) = format!("{kind}:{n}").parse::<Graph>() else { continue };
            let avg = graph.stabilizer_group().projector().unwrap();
            let d = max_abs(&(avg - graph.state_vector().unwrap().projector()));
            worst = worst.max(d);
            count += 1;
        }
    }
    check(worst <= 1e-10, format!("max entry difference {worst:e}"))?;
    Ok(format!("{count} built-in graphs, max entry difference {worst:.1e}"))
}

fn mbqc_summary(dir: &Path) -> Value {
    let settings = Settings {
        angles: Some(vec![0.3, -0.8, 1.2, 0.5]),
        copies: Some(8),
        trials: Some(100_000),
        source: Some("replace-orthogonal".into()),
        seed: Some(2024),
        output: Some(dir.to_path_buf()),
        ..Settings::default()
    };
    graphcert_cli::run(&ExperimentConfig { experiment: Experiment::Mbqc, settings }).unwrap();
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn mbqc_soundness(s: &Value) -> Outcome {
    let f = |k: &str| s[k].as_f64().unwrap();
    check(s["soundness_pass"] == true, format!("estimate {} > 1/8 + 3·{}", f("estimate"), f("stderr")))?;
    check(
        s["monotonicity_pass"] == true,
        format!("delegated {} vs certify {}", f("estimate"), f("certify_estimate")),
    )?;
    Ok(format!(
        "delegated {:.5} ± {:.5} ≤ 1/8, certify {:.5}, P_acc {:.5}",
        f("estimate"),
        f("stderr"),
        f("certify_estimate"),
        f("p_acc")
    ))
}

fn ensemble_bound(s: &Value) -> Outcome {
    let f = |k: &str| s[k].as_f64().unwrap();
    let msg = format!(
        "F² = {:.5} ± {:.5} vs 1 − 1/(P_acc·M) = {:.5}",
        f("accepted_fidelity_sq"),
        f("accepted_fidelity_sq_stderr"),
        f("ensemble_bound")
    );
    check(s["ensemble_pass"] == true, msg.clone())?;
    Ok(msg)
}

fn metrology() -> Outcome {
    for n in 2..=5 {
        let f = qfi(&ghz_state(n).to_density(), &jz(n)).unwrap();
        check((f - (n * n) as f64).abs() <= 1e-8, format!("GHZ_{n}: F_Q = {f}"))?;
    }
    let target = ghz_target(3).unwrap();
    let cfg = ProtocolConfig::default();
    let mut checked = 0;
    let mut min_slack = f64::INFINITY;
    for m in [20usize, 100] {
        let mut rng = trial_rng(9, m as u64);
        let suite = [
            SourceStrategy::Honest,
            replace_orthogonal(&target, 1).unwrap(),
            replace_partial(&target, 2, 0.5).unwrap(),
            SourceStrategy::SingleCopyReplace { position: 3, state: DensityMatrix::maximally_mixed(3) },
            SourceStrategy::IidChannel(Channel::Depolarizing(0.05)),
            SourceStrategy::IidChannel(Channel::Depolarizing(0.2)),
            random_product_source(3, m, &mut rng),
        ];
        for (i, src) in suite.iter().enumerate() {
            let exact = metrology_check_exact(3, m, src, &cfg).unwrap();
            let sampled = metrology_check(3, m, src, &mc(20_000, 70 + i as u64), &cfg).unwrap();
            for chk in [&exact, &sampled] {
                check(chk.pass, format!("M={m} source #{i}: {:?} < {:?}", chk.qfi, chk.bound))?;
                if let (Some(q), Some(b)) = (chk.qfi, chk.bound) {
                    min_slack = min_slack.min(q - b);
                }
            }
            checked += 1;
        }
    }
    Ok(format!("F_Q(GHZ_N) = N² for N = 2..5; {checked} adversaries above the bound (min slack {min_slack:.3})"))
}

fn tdesign() -> Outcome {
    let mut rng = trial_rng(10, 0);
    let haar: Vec<CMatrix> = (0..10_000).map(|_| haar_unitary(2, &mut rng)).collect();
    let f1 = frame_potential_with_error(&haar, 1).unwrap();
    let f2 = frame_potential_with_error(&haar, 2).unwrap();
    check((f1.value - 1.0).abs() <= 0.05, format!("t=1: {}", f1.value))?;
    check((f2.value - 2.0).abs() <= 0.10, format!("t=2: {}", f2.value))?;

    let paulis: Vec<CMatrix> =
        ["I", "X", "Y", "Z"].iter().map(|p| p.parse::<PauliString>().unwrap().to_matrix().unwrap()).collect();
    let off_diagonal = frame_potential(&paulis, 1).unwrap();
    let weighted: Vec<(f64, CMatrix)> = paulis.iter().map(|u| (0.25, u.clone())).collect();
    let full = ensemble_frame_potential(&weighted, 1).unwrap();
    check(off_diagonal.abs() <= 1e-12, format!("Pauli pairs a≠b: {off_diagonal}"))?;
    check((full - 1.0).abs() <= 1e-12, format!("Pauli ensemble: {full}"))?;

    let mut angle_rng = trial_rng(10, 1);
    let mut patterns = 0;
    for qubits in 2..=5 {
        for _ in 0..3 {
            let angles: Vec<f64> = (0..qubits - 1).map(|_| angle_rng.random::<f64>() * std::f64::consts::TAU).collect();
            let p = MeasurementPattern::line(&angles).unwrap();
            let mut total = 0.0;
            for idx in 0..p.num_outcome_strings() {
                let bits: Vec<u8> = (0..qubits - 1).map(|i| ((idx >> i) & 1) as u8).collect();
                let s = induced_unitary(&p, &bits).map_err(|e| format!("{angles:?} {bits:?}: {e}"))?;
                total += s.probability;
            }
            check((total - 1.0).abs() <= 1e-8, format!("Σp = {total}"))?;
            patterns += 1;
        }
    }
    Ok(format!(
        "Haar t=1 {:.4}, t=2 {:.4}; Pauli ensemble 1 (pairs a≠b: 0); {patterns} line patterns unitary with Σp = 1",
        f1.value, f2.value
    ))
}

fn secret_sharing() -> Outcome {
    let mut rng = trial_rng(11, 0);
    for (k, n) in [(2usize, 2usize), (2, 3), (3, 3)] {
        let secret: Vec<u8> = (0..=255).collect();
        let shares = shamir_share(&secret, k, n, &mut rng).unwrap();
        for mask in 1u32..1 << n {
            let set: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let r = shamir_reconstruct(&shares.subset(&set), k);
            if set.len() >= k {
                check(r.as_deref() == Ok(&secret[..]), format!("({k},{n}) {set:?} failed to reconstruct"))?;
            } else {
                check(r.is_err(), format!("({k},{n}) {set:?} reconstructed with too few shares"))?;
            }
        }
        let p = PRIME as usize;
        for mask in 1u32..1 << n {
            let coalition: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            if coalition.len() != k - 1 {
                continue;
            }
            for byte in 0..=255u8 {
                let mut hist = vec![0u32; p.pow(coalition.len() as u32)];
                for idx in 0..p.pow(k as u32 - 1) {
                    let coeffs: Vec<u16> = (0..k - 1).map(|i| (idx / p.pow(i as u32) % p) as u16).collect();
                    let view = coalition.iter().fold(0, |acc, &pl| acc * p + eval_share(byte, &coeffs, pl as u32 + 1) as usize);
                    hist[view] += 1;
                }
                check(hist.iter().all(|&h| h == 1), format!("({k},{n}) {coalition:?} view depends on secret"))?;
            }
        }
    }
    let graph = g("star:4");
    let access = AccessStructure::new(4, 3).unwrap();
    let mut sets = 0;
    for mask in 1u32..16 {
        let set: Vec<usize> = (0..4).filter(|i| mask >> i & 1 == 1).collect();
        if set.len() < 3 {
            continue;
        }
        let s = estimate_ss(&graph, 4, &SourceStrategy::Honest, &access, &set, &mc(2000, mask as u64), &ProtocolConfig::default())
            .unwrap();
        check(!s.degenerate && s.p_acc == 1.0, format!("{set:?}: P_acc {}", s.p_acc))?;
        sets += 1;
    }
    Ok(format!("Shamir exhaustive for (2,2),(2,3),(3,3); honest acceptance 1 for {sets} authorised sets"))
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let invocations: [&[&str]; 7] = [
        &["certify", "--graph", "ring:4", "--copies", "5", "--trials", "3000", "--source", "depolarizing", "--p", "0.1"],
        &["certify", "--graph", "line:2", "--copies", "3", "--trials", "2000", "--source", "coherent-random", "--format", "json"],
        &["spectrum", "--graph", "line:2", "--copies", "3"],
        &["mbqc", "--angles", "0.3,-0.8,1.2", "--copies", "4", "--trials", "2000", "--source", "replace-partial", "--fidelity", "0.6"],
        &["tdesign", "--samples", "600", "--t", "2", "--angles", "0.4,1.0"],
        &["metrology", "--n", "3", "--copies", "20", "--trials", "2000", "--source", "product-random"],
        &["secretshare", "--graph", "star:4", "--copies", "3", "--access-k", "3", "--authorized", "0,1,2", "--trials", "2000", "--source", "product-random"],
    ];
    let mut files = 0;
    for (i, args) in invocations.iter().enumerate() {
        let mut outputs = Vec::new();
        for workers in ["1", "8"] {
            let dir = root.path().join(format!("{i}-{workers}"));
            let status = Command::new(env!("CARGO_BIN_EXE_graphcert"))
                .args(*args)
                .args(["--seed", "31337", "--workers", workers, "--output"])
                .arg(&dir)
                .output()
                .unwrap();
            check(status.status.success(), format!("{} exited with {:?}", args[0], status.status.code()))?;
            let mut names: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
            names.sort();
            let contents: Vec<_> = names.iter().map(|n| (n.clone(), std::fs::read(dir.join(n)).unwrap())).collect();
            outputs.push(contents);
        }
        check(outputs[0] == outputs[1], format!("{} differs between 1 and 8 workers", args[0]))?;
        files += outputs[0].len();
    }
    Ok(format!("{} invocations, {files} files byte-identical across 1 and 8 workers", invocations.len()))
}

fn main() {
    let mbqc_dir = tempfile::tempdir().unwrap();
    let mut mbqc: Option<Value> = None;
    let mut failures = 0;
    let mut report = |id: usize, name: &str, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match &result {
            Ok(detail) => println!("criterion {id:>2} PASS {name} [{secs:.1}s]: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {id:>2} FAIL {name} [{secs:.1}s]: {detail}");
            }
        }
    };
    report(1, "completeness", &mut completeness);
    report(2, "soundness bound", &mut soundness);
    report(3, "bound saturation", &mut saturation);
    report(4, "Q identity", &mut q_identity);
    report(5, "Q spectrum", &mut spectrum);
    report(6, "projector identity", &mut projector_identity);
    report(7, "MBQC soundness", &mut || {
        let s = mbqc.get_or_insert_with(|| mbqc_summary(mbqc_dir.path()));
        mbqc_soundness(s)
    });
    report(8, "accepted-ensemble fidelity", &mut || {
        let s = mbqc.get_or_insert_with(|| mbqc_summary(mbqc_dir.path()));
        ensemble_bound(s)
    });
    report(9, "metrology", &mut metrology);
    report(10, "t-design diagnostics", &mut tdesign);
    report(11, "secret sharing", &mut secret_sharing);
    report(12, "determinism", &mut determinism);
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 12 acceptance criteria passed");
}
