//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero
//! exit if any fails. Run with `cargo test -p polyq-cli --test acceptance`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use polyq::lmi::build;
use polyq::synthesis::{lti_controller_gain_forms, lti_observer_gain_forms, observer_gains};
use polyq::verify::{
    check_detect_certificate, controller_vertex_radii, detect_proof_chain, grid_check_stab, monte_carlo_closed_loop,
    monte_carlo_error_system, observer_vertex_radii, slack_proof_chain, young_gap, MonteCarloSpec, StabChoice,
    Structure,
};
use polyq::{
    build_detectability, build_stab_vertex, random_system, Assignment, DetectCertificate, GridSpec, LmiTest,
    LyapunovStructure, Matrix, PolytopicSystem, RandomSystemSpec, SolveStatus, StabCertificate, StabMethod, SymMatrix,
    VerdictConfig, VerdictStatus,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn scalar(b: f64, c: f64, vertices: &[f64]) -> PolytopicSystem {
    PolytopicSystem::new(vertices.iter().map(|&v| Matrix::scalar(v)).collect(), Matrix::scalar(b), Matrix::scalar(c), true)
        .unwrap()
}

fn worked_system() -> PolytopicSystem {
    scalar(1.0, 1.0, &[0.5, 2.0])
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let g = gaussian(rng, n, n);
    let mut m = &g * &g.transpose();
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    SymMatrix::from_symmetric_part(&m)
}

fn rel_gap(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).frobenius_norm() / a.frobenius_norm().max(b.frobenius_norm()).max(1.0)
}

fn max_abs(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn scalar_worked_detect() -> Outcome {
    let sys = worked_system();
    let verdict = polyq::verdict_detect(&sys, &VerdictConfig::default()).map_err(|e| e.to_string())?;
    ensure!(verdict.status == VerdictStatus::Holds, "verdict {:?}", verdict.status);
    let cert = verdict.detect_certificate.ok_or("no certificate")?;
    let check = check_detect_certificate(&sys, &cert, 0.0).map_err(|e| e.to_string())?;
    ensure!(check.min_margin >= 0.05, "certificate minimum {:.3e} < 0.05", check.min_margin);

    let witness = DetectCertificate { p_bar: vec![SymMatrix::scalar(0.3); 2], margin: 0.1, provenance: None };
    let gains = observer_gains(&witness, &sys).map_err(|e| e.to_string())?;
    let (l1, l2) = (gains.vertex[0][(0, 0)], gains.vertex[1][(0, 0)]);
    ensure!((l1 + 5.0 / 13.0).abs() <= 1e-8 && (l2 + 20.0 / 13.0).abs() <= 1e-8, "witness gains {l1}, {l2}");
    Ok(format!("holds, certificate minimum {:.4}, witness gains ({l1:.6}, {l2:.6})", check.min_margin))
}

fn scalar_worked_stab() -> Outcome {
    let sys = worked_system();
    let verdict = polyq::verdict_stab(&sys, &VerdictConfig::default()).map_err(|e| e.to_string())?;
    ensure!(verdict.status == VerdictStatus::Holds, "verdict {:?}", verdict.status);
    let cert = verdict.stab_certificate.ok_or("no certificate")?;
    ensure!(cert.kind == StabMethod::Slack, "certificate from {:?}", cert.kind);
    let grid = grid_check_stab(&sys, &cert, GridSpec::new(20).unwrap(), 0.0).map_err(|e| e.to_string())?;
    ensure!(grid.worst_value > 0.0, "grid minimum {:.3e}", grid.worst_value);
    ensure!(
        grid.worst_xi == [0.0, 1.0] && grid.worst_xi_next == [0.0, 1.0],
        "grid minimum at {:?}, {:?}",
        grid.worst_xi,
        grid.worst_xi_next
    );
    Ok(format!("slack certificate, grid m=20 minimum {:.4e} at (e2, e2)", grid.worst_value))
}

fn lti_reductions() -> Outcome {
    let spec = RandomSystemSpec { states: (1, 6), vertices: (1, 1), inputs: (1, 3), outputs: (1, 3), ..Default::default() };
    let mut worst_assembly = 0.0f64;
    let mut worst_forms = 0.0f64;
    for seed in 0..100u64 {
        let sys = random_system(&spec, seed).map_err(|e| e.to_string())?;
        let a = &sys.vertices[0];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_spd(&mut rng, sys.n_x());
        let pm = p.as_matrix().clone();
        let x = Assignment { values: vec![pm.clone()] };

        let det = build_detectability(&sys).assemble(&x).map_err(|e| e.to_string())?;
        ensure!(det.len() == 2, "seed {seed}: {} detectability constraints", det.len());
        let lti_det = &(&pm - &(&(&a.transpose() * &pm) * a)) + &sys.c.gram();
        let stab = build_stab_vertex(&sys).assemble(&x).map_err(|e| e.to_string())?;
        ensure!(stab.len() == 2, "seed {seed}: {} stabilizability constraints", stab.len());
        let lti_stab = &(&pm - &(&(a * &pm) * &a.transpose())) + &(&sys.b * &sys.b.transpose());
        for (got, want) in [(&det[0], &pm), (&det[1], &lti_det), (&stab[0], &pm), (&stab[1], &lti_stab)] {
            worst_assembly = worst_assembly.max(max_abs(got.as_matrix(), want) / want.frobenius_norm().max(1.0));
        }

        let (d, w) = lti_observer_gain_forms(a, &sys.c, &p).map_err(|e| e.to_string())?;
        worst_forms = worst_forms.max(rel_gap(&d, &w));
        let (d, w) = lti_controller_gain_forms(a, &sys.b, &p).map_err(|e| e.to_string())?;
        worst_forms = worst_forms.max(rel_gap(&d, &w));
    }
    ensure!(worst_assembly <= 1e-12, "assembled problems differ by {worst_assembly:.3e}");
    ensure!(worst_forms <= 1e-10, "gain forms differ by {worst_forms:.3e}");
    Ok(format!("100 systems, assembly gap {worst_assembly:.1e}, gain form gap {worst_forms:.1e}"))
}

fn negative_screens() -> Outcome {
    let unobservable = scalar(1.0, 0.0, &[2.0]);
    let uncontrollable = scalar(0.0, 1.0, &[2.0]);
    let det = polyq::verdict_detect(&unobservable, &VerdictConfig::default()).map_err(|e| e.to_string())?;
    let stab = polyq::verdict_stab(&uncontrollable, &VerdictConfig::default()).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for (name, v) in [("detect", &det), ("stab", &stab)] {
        ensure!(v.status == VerdictStatus::FailsNecessary, "{name}: verdict {:?}", v.status);
        let best = v.reports.last().unwrap().best_margin;
        ensure!(best < -0.1, "{name}: best margin {best:.3e}");
        notes.push(format!("{name} best margin {best:.3}"));
    }
    Ok(format!("both fail necessary conditions, {}", notes.join(", ")))
}

struct Feasible {
    sys: PolytopicSystem,
    detect: Option<DetectCertificate>,
    stab: Option<StabCertificate>,
}

fn feasible_sample(count: usize) -> Vec<Feasible> {
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < count {
        let sys = random_system(&RandomSystemSpec::default(), seed).unwrap();
        seed += 1;
        let det = polyq::verdict_detect(&sys, &VerdictConfig::default()).unwrap();
        let stab = polyq::verdict_stab(&sys, &VerdictConfig::default()).unwrap();
        let detect = det.detect_certificate.filter(|_| det.status == VerdictStatus::Holds);
        let stab = stab.stab_certificate.filter(|_| stab.status == VerdictStatus::Holds);
        if detect.is_some() || stab.is_some() {
            out.push(Feasible { sys, detect, stab });
        }
    }
    out
}

fn descent_soundness(sample: &[Feasible]) -> Outcome {
    let (mut observers, mut controllers, mut worst_radius) = (0, 0, 0.0f64);
    for (k, case) in sample.iter().enumerate() {
        let spec = MonteCarloSpec { trajectories: 1000, steps: 100, seed: k as u64 };
        if let Some(cert) = &case.detect {
            let gains = observer_gains(cert, &case.sys).map_err(|e| e.to_string())?;
            let report = monte_carlo_error_system(&case.sys, &gains, &cert.p_bar, &spec).map_err(|e| e.to_string())?;
            ensure!(report.is_clean(), "system {k}: {} observer descent violations", report.violations.len());
            let radii = observer_vertex_radii(&case.sys, &gains).map_err(|e| e.to_string())?;
            worst_radius = radii.iter().fold(worst_radius, |m, &r| m.max(r));
            observers += 1;
        }
        if let Some(cert) = &case.stab {
            let report = monte_carlo_closed_loop(&case.sys, cert, &spec).map_err(|e| e.to_string())?;
            ensure!(report.is_clean(), "system {k}: {} closed-loop descent violations", report.violations.len());
            let radii = controller_vertex_radii(&case.sys, cert).map_err(|e| e.to_string())?;
            worst_radius = radii.iter().fold(worst_radius, |m, &r| m.max(r));
            controllers += 1;
        }
    }
    ensure!(worst_radius < 1.0, "vertex spectral radius {worst_radius:.6}");
    Ok(format!(
        "{} systems, {observers} observers and {controllers} controllers, 1000x100 runs each, no violations, max vertex radius {worst_radius:.4}",
        sample.len()
    ))
}

fn proof_chains(sample: &[Feasible]) -> Outcome {
    let worked = polyq::verdict_stab(&worked_system(), &VerdictConfig::default()).map_err(|e| e.to_string())?;
    let mut slack: Vec<(&PolytopicSystem, &StabCertificate)> = sample.iter().filter_map(|c| c.stab.as_ref().map(|s| (&c.sys, s))).collect();
    let worked_sys = worked_system();
    if let Some(cert) = worked.stab_certificate.as_ref() {
        slack.push((&worked_sys, cert));
    }
    let (mut interm, mut chains) = (f64::INFINITY, 0);
    for (sys, cert) in slack.into_iter().filter(|(_, c)| c.kind == StabMethod::Slack) {
        let chain = slack_proof_chain(sys, cert).map_err(|e| e.to_string())?;
        ensure!(chain.interm_min > 0.0, "intermediate matrix minimum {:.3e}", chain.interm_min);
        ensure!(chain.vertex_condition_min > 0.0, "vertex condition minimum {:.3e}", chain.vertex_condition_min);
        ensure!(chain.pair_descent_min > 0.0, "pair descent minimum {:.3e}", chain.pair_descent_min);
        interm = interm.min(chain.interm_min);
        chains += 1;
    }
    let mut q = f64::INFINITY;
    for case in sample {
        if let Some(cert) = &case.detect {
            let chain = detect_proof_chain(&case.sys, cert).map_err(|e| e.to_string())?;
            ensure!(chain.q_min > 0.0, "detect-side Q minimum {:.3e}", chain.q_min);
            ensure!(chain.factorization_gap <= 1e-9, "factorization gap {:.3e}", chain.factorization_gap);
            q = q.min(chain.q_min);
            chains += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7072);
    let mut young = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=4);
        let (x, y, s) = (gaussian(&mut rng, n, m), gaussian(&mut rng, n, m), random_spd(&mut rng, n));
        young = young.min(young_gap(&x, &y, &s).map_err(|e| e.to_string())?);
    }
    ensure!(young >= -1e-10, "Young gap {young:.3e}");
    Ok(format!("{chains} chains, min intermediate {interm:.3e}, min Q {q:.3e}; Young min {young:.3e} on 100 triples"))
}

fn duality() -> Outcome {
    let cfg = |method| VerdictConfig { structure: Structure::Common, method, ..VerdictConfig::default() };
    let (mut feasible, mut infeasible) = (0, 0);
    for seed in 0..50u64 {
        let sys = random_system(&RandomSystemSpec::default(), 500 + seed).map_err(|e| e.to_string())?;
        let dual = sys.dual();
        let det_prob = build(&sys, LmiTest::Detectability, LyapunovStructure::Common);
        let stab_prob = build(&dual, LmiTest::StabVertex, LyapunovStructure::Common);
        // Same matrices under different labels.
        ensure!(
            det_prob.constraints.len() == stab_prob.constraints.len()
                && det_prob.constraints.iter().zip(&stab_prob.constraints).all(|(d, s)| d.constant == s.constant && d.terms == s.terms),
            "seed {seed}: assembled problems differ"
        );
        let det = polyq::verdict_detect(&sys, &cfg(StabChoice::Auto)).map_err(|e| e.to_string())?;
        let stab = polyq::verdict_stab(&dual, &cfg(StabChoice::Vertex)).map_err(|e| e.to_string())?;
        let (d, s) = (&det.reports[0], &stab.reports[0]);
        ensure!(d.status == s.status, "seed {seed}: detect {:?} vs stab-vertex {:?}", d.status, s.status);
        let expected = match det.status {
            VerdictStatus::Holds => VerdictStatus::Unknown,
            other => other,
        };
        ensure!(stab.status == expected, "seed {seed}: detect {:?} vs stab-vertex {:?}", det.status, stab.status);
        if d.status == SolveStatus::Feasible {
            feasible += 1;
        } else {
            infeasible += 1;
        }
    }
    Ok(format!("50 systems agree ({feasible} feasible, {infeasible} infeasible)"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn cli_run(dir: &Path) -> Result<(), String> {
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_polyq")).args(args).output().map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "polyq {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr));
        Ok(())
    };
    let system = fixture("two_state.json");
    let system = system.to_str().unwrap();
    for cmd in ["detect", "stab"] {
        let out = dir.join(cmd);
        fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        run(&[cmd, system, "--out-dir", out.to_str().unwrap(), "--seed", "7"])?;
        let cert = out.join("certificate.json");
        run(&["synth", system, "--certificate", cert.to_str().unwrap(), "--out", out.join("synth.json").to_str().unwrap()])?;
        run(&[
            "simulate",
            system,
            "--certificate",
            cert.to_str().unwrap(),
            "--schedule-mode",
            "interior-dirichlet",
            "--seed",
            "11",
            "--out",
            out.join("trajectory.csv").to_str().unwrap(),
        ])?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let first = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    cli_run(first.path())?;
    cli_run(second.path())?;
    let mut compared = 0;
    for cmd in ["detect", "stab"] {
        for file in ["verdict.json", "certificate.json", "gains.json", "synth.json", "trajectory.csv"] {
            let a = fs::read(first.path().join(cmd).join(file)).map_err(|e| format!("{cmd}/{file}: {e}"))?;
            let b = fs::read(second.path().join(cmd).join(file)).map_err(|e| format!("{cmd}/{file}: {e}"))?;
            ensure!(a == b, "{cmd}/{file} differs between runs");
            compared += 1;
        }
    }
    Ok(format!("{compared} files byte-identical across two runs"))
}

fn main() -> ExitCode {
    let started = Instant::now();
    let sample = feasible_sample(50);
    let criteria: Vec<(usize, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, Box::new(scalar_worked_detect)),
        (2, Box::new(scalar_worked_stab)),
        (3, Box::new(lti_reductions)),
        (4, Box::new(negative_screens)),
        (5, Box::new(|| descent_soundness(&sample))),
        (6, Box::new(|| proof_chains(&sample))),
        (7, Box::new(duality)),
        (8, Box::new(determinism)),
    ];
    let mut failed = 0;
    for (n, check) in &criteria {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("criterion {n}: PASS ({detail}; {:.1}s)", t.elapsed().as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL ({why})");
            }
        }
    }
    println!("acceptance: {} of {} criteria passed in {:.1}s", criteria.len() - failed, criteria.len(), started.elapsed().as_secs_f64());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
