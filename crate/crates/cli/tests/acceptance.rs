//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use hopfdelay::averaging::{averaged_matrix, compute_p, compute_q, eigenvalue_real_parts, period_average, Verdict};
use hopfdelay::dde_sim::{integrate, Classification, History, Nonlinearity, SimProblem};
use hopfdelay::delay_measures::{Atom, DensityPiece, MatrixDelayMeasure, ScalarDelayDistribution};
use hopfdelay::distribution_analysis::MuFamily;
use hopfdelay::fde_core::{certify_spectrum, find_hopf_pair, rotation_generator, LinearFde, Rectangle};
use hopfdelay::problem::{FeedbackSpec, Problem, ProblemFile};
use hopfdelay_cli::verify;
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn problem_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name)
}

fn load(name: &str) -> ProblemFile {
    ProblemFile::from_path(&problem_path(name)).expect("shipped problem parses")
}

fn with_c1(mut file: ProblemFile, c1: f64) -> Problem {
    if let FeedbackSpec::Factored { structure_matrix, .. } = &mut file.feedback {
        structure_matrix[1][0] = c1;
    }
    file.build().expect("problem builds")
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn van_der_pol_feedback() -> Check {
    let start = Instant::now();
    for name in ["vdp_fig2.json", "vdp_fig2_c78.json"] {
        let problem = load(name).build().map_err(|e| e.to_string())?;
        let report = verify(&problem, Some(200.0), None).map_err(|e| e.to_string())?;
        ensure(
            report.analysis.verdict == Verdict::Stable && report.simulation.classification == Classification::Decay,
            format!("{name}: {:?} + {:?}", report.analysis.verdict, report.simulation.classification),
        )?;
        let traj = integrate(&problem.sim_problem(Some(200.0), None).map_err(|e| e.to_string())?);
        let fall = traj.amplitude[0] / traj.peak(190.0, 200.0);
        ensure(fall >= 5.0, format!("{name}: amplitude fell only by {fall}"))?;
    }
    let open = load("vdp_open_loop.json").build().map_err(|e| e.to_string())?;
    let report = verify(&open, None, None).map_err(|e| e.to_string())?;
    ensure(
        report.analysis.verdict == Verdict::Unstable && report.simulation.classification == Classification::Sustained,
        format!("open loop: {:?} + {:?}", report.analysis.verdict, report.simulation.classification),
    )?;
    let traj = integrate(&open.sim_problem(None, None).map_err(|e| e.to_string())?);
    let t_end = *traj.times.last().unwrap();
    let amp = traj.peak(t_end - 50.0, t_end);
    ensure((amp - 2.0).abs() <= 0.1, format!("open-loop amplitude {amp}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs <= 10.0, format!("took {secs:.2} s"))?;
    Ok(format!("c1 = 5, 7.8 Stable + Decay; open loop amplitude {amp:.4}; {secs:.2} s"))
}

fn position_threshold() -> Check {
    let base = load("vdp_fig2.json");
    let criterion = |c1: f64| with_c1(base.clone(), c1).analyze().map(|a| a.report.criterion).unwrap();
    let (mut lo, mut hi) = (1.0, 1.4);
    ensure(criterion(lo) > 0.0 && criterion(hi) < 0.0, "criterion does not change sign on [1, 1.4]")?;
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if criterion(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c_star = 0.5 * (lo + hi);
    let expect = 1.0 / 1f64.sin();
    ensure((c_star - expect).abs() <= 1e-6, format!("crossing at {c_star}, expected {expect}"))?;

    let grid: Vec<f64> = (0..=20).map(|k| 1.0 + 0.02 * k as f64).collect();
    let classes: Vec<Classification> = grid
        .par_iter()
        .map(|&c1| {
            let sim = with_c1(base.clone(), c1).sim_problem(Some(1000.0), Some(0.05)).unwrap();
            integrate(&sim).classification
        })
        .collect();
    let first_decay = classes.iter().position(|c| *c == Classification::Decay).ok_or("no Decay up to c1 = 1.4")?;
    ensure(first_decay > 0, "already decaying at c1 = 1.0")?;
    ensure(
        classes[first_decay..].iter().all(|c| *c == Classification::Decay),
        format!("classification not monotone: {classes:?}"),
    )?;
    let flip = grid[first_decay];
    ensure((1.08..=1.30).contains(&flip), format!("simulation flips at c1 = {flip}"))?;
    Ok(format!("criterion zero at c1 = {c_star:.10}; simulation flips at c1 = {flip:.2}"))
}

fn uniform_closed_form() -> Check {
    let mut rng = StdRng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut worst_root = 0.0f64;
    for _ in 0..10 {
        let tau_bar = rng.random_range(11.5..20.0);
        let (tr, tr_j) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let family = MuFamily::new(ScalarDelayDistribution::uniform(tau_bar, 1.0).unwrap(), tr, tr_j).unwrap();
        let p0 = family.p0();
        ensure(p0.abs() > 1e-3, "degenerate draw")?;
        let grid: Vec<f64> = (1..=200).map(|k| k as f64 * 3.5 * PI / 200.0 + 0.001).collect();
        let scan = family.scan(&grid, 1.0, 1.0).map_err(|e| e.to_string())?;
        for (mu, p) in grid.iter().zip(&scan.p_values) {
            worst = worst.max((p - mu.sin() / mu * p0).abs());
        }
        ensure(scan.sign_changes.len() == 3, format!("{} sign changes", scan.sign_changes.len()))?;
        for (k, s) in scan.sign_changes.iter().enumerate() {
            worst_root = worst_root.max((s.mu_root - (k + 1) as f64 * PI).abs());
        }
    }
    ensure(worst <= 1e-10, format!("max |p_mu - sinc p0| = {worst:e}"))?;
    ensure(worst_root <= 1e-6, format!("root error {worst_root:e}"))?;
    Ok(format!("max closed-form error {worst:.1e}, max root error {worst_root:.1e}"))
}

fn random_reference(rng: &mut StdRng) -> ScalarDelayDistribution {
    let tau_bar = rng.random_range(2.0..6.0);
    let width = rng.random_range(0.2..1.0);
    match rng.random_range(0..4) {
        0 => ScalarDelayDistribution::uniform(tau_bar, width).unwrap(),
        1 => ScalarDelayDistribution::triangular(tau_bar, width).unwrap(),
        2 => ScalarDelayDistribution::truncated_gamma(rng.random_range(2.0..6.0), rng.random_range(3.0..5.0), 6.0, 32)
            .unwrap(),
        _ => {
            // skewed mixture: atom plus a uniform piece
            let w = rng.random_range(0.2..0.8);
            let piece = DensityPiece::constant(tau_bar, tau_bar + width, (1.0 - w) / width).unwrap();
            ScalarDelayDistribution::probability(vec![Atom { lag: tau_bar - width, weight: w }], vec![piece]).unwrap()
        }
    }
}

fn local_spread_derivatives() -> Check {
    let mut rng = StdRng::seed_from_u64(4);
    let (mut worst_d1, mut worst_rel) = (0.0f64, 0.0f64);
    let mut done = 0;
    while done < 10 {
        let h = random_reference(&mut rng);
        let family = MuFamily::new(h, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)).unwrap();
        let p0 = family.p0();
        if p0.abs() < 1e-2 {
            continue;
        }
        let analytic = family.local_derivatives();
        let expect = -family.variance() * p0;
        ensure(analytic.d1.abs() < 1e-12, format!("analytic d1 = {}", analytic.d1))?;
        ensure((analytic.d2 - expect).abs() <= 1e-10 * expect.abs().max(1.0), "analytic d2 off the closed form")?;
        let fd = family.finite_differences(1e-3).map_err(|e| e.to_string())?;
        worst_d1 = worst_d1.max(fd.d1.abs());
        worst_rel = worst_rel.max((fd.d2 - expect).abs() / expect.abs());
        done += 1;
    }
    ensure(worst_d1 <= 1e-6, format!("|d1_fd| = {worst_d1:e}"))?;
    ensure(worst_rel <= 1e-4, format!("relative d2 error {worst_rel:e}"))?;
    Ok(format!("max |d1_fd| {worst_d1:.1e}, max relative d2 error {worst_rel:.1e}"))
}

fn random_symmetric(rng: &mut StdRng) -> (ScalarDelayDistribution, f64) {
    let tau_bar = rng.random_range(3.0..8.0);
    let width = rng.random_range(0.2..1.0);
    let h = match rng.random_range(0..3) {
        0 => ScalarDelayDistribution::uniform(tau_bar, width).unwrap(),
        1 => ScalarDelayDistribution::triangular(tau_bar, width).unwrap(),
        _ => {
            let w = rng.random_range(0.05..0.45);
            let atoms = vec![Atom { lag: tau_bar - width, weight: w }, Atom { lag: tau_bar + width, weight: w }];
            let half = 0.5 * width;
            let piece = DensityPiece::constant(tau_bar - half, tau_bar + half, (1.0 - 2.0 * w) / width).unwrap();
            ScalarDelayDistribution::probability(atoms, vec![piece]).unwrap()
        }
    };
    (h, tau_bar / width)
}

fn global_spread_bound() -> Check {
    let mut rng = StdRng::seed_from_u64(5);
    let (mut excess, mut identity) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..24 {
        let (h, mu_max) = random_symmetric(&mut rng);
        let family = MuFamily::new(h, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)).unwrap();
        let mus: Vec<f64> = (1..=100).map(|k| k as f64 / 100.0 * mu_max.min(20.0)).collect();
        let report = family.global_bound_check(&mus).map_err(|e| e.to_string())?;
        ensure(report.holds(1e-12, 1e-10), format!("excess {:e}, identity {:e}", report.max_excess, report.max_identity_residual))?;
        excess = excess.max(report.max_excess);
        identity = identity.max(report.max_identity_residual);
    }
    Ok(format!("24 distributions: max |p_mu| - |p0| = {excess:.1e}, identity residual {identity:.1e}"))
}

fn averaged_internals() -> Check {
    let mut rng = StdRng::seed_from_u64(6);
    let (mut eig, mut avg, mut gauge) = (0.0f64, 0.0f64, 0.0f64);
    for name in ["vdp_fig2.json", "vdp_gamma.json", "uniform_family.json", "delayed_scalar.json"] {
        let problem = load(name).build().map_err(|e| e.to_string())?;
        let n = problem.normalized().map_err(|e| e.to_string())?;
        let g = &n.perturbation.g_lin;
        let f = n.perturbation.feedback.measure().map_err(|e| e.to_string())?;
        let kappa = n.perturbation.kappa;
        let q = compute_q(g, &n.hopf).map_err(|e| e.to_string())?;
        let p = compute_p(&f, &n.hopf).map_err(|e| e.to_string())?;
        let g_bar = averaged_matrix(g, &n.hopf).map_err(|e| e.to_string())?;
        let f_bar = averaged_matrix(&f, &n.hopf).map_err(|e| e.to_string())?;
        for re in eigenvalue_real_parts(&(g_bar + f_bar * kappa)) {
            eig = eig.max((re - 0.5 * (q + kappa * p)).abs());
        }
        for (m, closed) in [(g, g_bar), (&f, f_bar)] {
            let numeric = period_average(m, &n.hopf, 256).map_err(|e| e.to_string())?;
            avg = avg.max((numeric - closed).amax());
        }
        for _ in 0..20 {
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let other = n.hopf.regauge(&n.linear, a, b).map_err(|e| e.to_string())?;
            let q2 = compute_q(g, &other).map_err(|e| e.to_string())?;
            let p2 = compute_p(&f, &other).map_err(|e| e.to_string())?;
            gauge = gauge.max((q2 - q).abs()).max((p2 - p).abs());
        }
    }
    ensure(eig <= 1e-10, format!("eigenvalue mismatch {eig:e}"))?;
    ensure(avg <= 1e-9, format!("average mismatch {avg:e}"))?;
    ensure(gauge <= 1e-10, format!("gauge drift {gauge:e}"))?;
    Ok(format!("eigenvalue {eig:.1e}, average {avg:.1e}, gauge {gauge:.1e}"))
}

fn spectral_layer() -> Check {
    let linear = LinearFde::discrete(vec![(1.0, DMatrix::from_element(1, 1, -PI / 2.0))]).unwrap();
    let omega = find_hopf_pair(&linear, 10.0).map_err(|e| e.to_string())?;
    ensure((omega - PI / 2.0).abs() <= 1e-8, format!("omega = {omega}"))?;
    let rect = Rectangle { re_lo: -0.1, re_hi: 3.0, im_lo: -10.0, im_hi: 10.0 };
    let cert = certify_spectrum(&linear, rect).map_err(|e| e.to_string())?;
    ensure(cert.root_count == 2 && cert.hopf_pair_found, format!("certificate {cert:?}"))?;

    let rotation = |dt: f64| {
        let m = MatrixDelayMeasure::instantaneous(-rotation_generator()).unwrap();
        let hist = History::Constant(DVector::from_vec(vec![1.0, 0.0]));
        integrate(&SimProblem::from_measure(m, 0.0, Nonlinearity::None, hist, 2.0 * PI, dt).unwrap())
    };
    let traj = rotation(0.01);
    let drift = traj.amplitude.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
    ensure(drift <= 1e-6, format!("norm drift {drift:e}"))?;
    let dt = 2.0 * PI / 40.0;
    let reference = rotation(dt / 8.0);
    let err = |h: f64| (rotation(h).final_state() - reference.final_state()).norm();
    let ratio = err(dt) / err(dt / 2.0);
    ensure((ratio - 16.0).abs() <= 3.0, format!("convergence ratio {ratio}"))?;
    Ok(format!("omega = {omega:.12}, 2 roots in Re >= -0.1, norm drift {drift:.1e}, step ratio {ratio:.2}"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("van der Pol delayed feedback", van_der_pol_feedback),
        ("position-feedback threshold", position_threshold),
        ("uniform closed form", uniform_closed_form),
        ("local spread derivatives", local_spread_derivatives),
        ("global spread bound", global_spread_bound),
        ("averaged criterion internals", averaged_internals),
        ("spectral layer and integrator", spectral_layer),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
