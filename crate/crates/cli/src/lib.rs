//! Commands behind the `hopfdelay` binary. Each returns the primary output
//! (JSON or CSV), an optional human summary for stderr, and the exit code.

use std::path::Path;

use hopfdelay::averaging::{StabilityReport, Verdict};
use hopfdelay::dde_sim::{integrate, Classification, ClassificationReport};
use hopfdelay::distribution_analysis::{fmt_num, MuFamily};
use hopfdelay::fde_core::{Feedback, Rectangle};
use hopfdelay::problem::{Problem, DEFAULT_DELTA};
use hopfdelay::{Error, Result};
use serde::{Deserialize, Serialize};

pub const EXIT_STABLE: u8 = 0;
pub const EXIT_UNSTABLE: u8 = 10;
pub const EXIT_INCONCLUSIVE: u8 = 11;
pub const EXIT_PRECONDITION: u8 = 2;
/// `verify` disagreement outside the band, or `certify` without the Hopf pair.
pub const EXIT_FAILED_CHECK: u8 = 1;
/// Half-width of the criterion band where finite-eps disagreement is tolerated.
pub const VERIFY_BAND: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Output {
    pub body: String,
    pub summary: Option<String>,
    pub code: u8,
}

/// `a:b:n`, `n` evenly spaced points including both ends.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("expected A:B:N, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    let h = (b - a) / (n - 1) as f64;
    Ok((0..n).map(|k| if k + 1 == n { b } else { a + h * k as f64 }).collect())
}

/// `reLo:reHi:imLo:imHi`.
pub fn parse_rect(s: &str) -> Result<Rectangle> {
    let v: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("expected reLo:reHi:imLo:imHi, got {s:?}")))?;
    if v.len() != 4 {
        return Err(Error::Config(format!("expected reLo:reHi:imLo:imHi, got {s:?}")));
    }
    Ok(Rectangle { re_lo: v[0], re_hi: v[1], im_lo: v[2], im_hi: v[3] })
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

pub fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Stable => EXIT_STABLE,
        Verdict::Unstable => EXIT_UNSTABLE,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

pub fn cmd_analyze(path: &Path) -> Result<Output> {
    let analysis = Problem::load(path)?.analyze()?;
    Ok(Output {
        body: json(&analysis.report),
        summary: Some(format!("verdict {:?}, q + kappa p = {}", analysis.report.verdict, analysis.report.criterion)),
        code: verdict_code(analysis.report.verdict),
    })
}

pub fn cmd_scan_mu(path: &Path, grid: &[f64]) -> Result<Output> {
    let problem = Problem::load(path)?;
    let normalized = problem.normalized()?;
    let Feedback::Factored { structure, distribution } = &normalized.perturbation.feedback else {
        return Err(Error::NotFactored);
    };
    let family = MuFamily::from_structure(structure, distribution.clone(), &normalized.hopf)?;
    let report = problem.analyze()?.report;
    let scan = family.scan(grid, report.q, report.kappa)?;
    let mut summary = format!("tau_bar = {}, p0 = {}, {} sign change(s)", scan.tau_bar, scan.p0, scan.sign_changes.len());
    for s in &scan.sign_changes {
        summary.push_str(&format!("\n  p_mu = 0 at mu = {}", s.mu_root));
    }
    if !scan.bound_violations.is_empty() {
        summary.push_str(&format!("\n  |p_mu| > |p0| at {} grid point(s)", scan.bound_violations.len()));
    }
    Ok(Output { body: scan.to_csv(), summary: Some(summary), code: 0 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaScan {
    pub q: f64,
    pub p: f64,
    pub kappa: Vec<f64>,
    pub criterion: Vec<f64>,
    /// `-q / p`, absent when `p = 0`.
    pub kappa_star: Option<f64>,
}

impl KappaScan {
    pub fn new(q: f64, p: f64, grid: &[f64]) -> Self {
        let criterion = grid.iter().map(|k| q + k * p).collect();
        let kappa_star = (p != 0.0).then(|| -q / p);
        Self { q, p, kappa: grid.to_vec(), criterion, kappa_star }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kappa,criterion\n");
        for (k, c) in self.kappa.iter().zip(&self.criterion) {
            out.push_str(&format!("{},{}\n", fmt_num(*k), fmt_num(*c)));
        }
        out
    }
}

pub fn cmd_scan_kappa(path: &Path, grid: &[f64]) -> Result<Output> {
    let report = Problem::load(path)?.analyze()?.report;
    let scan = KappaScan::new(report.q, report.p, grid);
    let summary = match scan.kappa_star {
        Some(k) => format!("q = {}, p = {}, critical kappa* = {k}", scan.q, scan.p),
        None => format!("q = {}, p = 0: criterion constant, no critical kappa", scan.q),
    };
    Ok(Output { body: scan.to_csv(), summary: Some(summary), code: 0 })
}

pub fn cmd_simulate(path: &Path, t_end: Option<f64>, dt: Option<f64>) -> Result<Output> {
    let problem = Problem::load(path)?;
    let traj = integrate(&problem.sim_problem(t_end, dt)?);
    Ok(Output {
        body: traj.to_csv(),
        summary: Some(serde_json::to_string(&traj.report()).expect("reports serialize")),
        code: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Agree,
    DisagreeWithinBand,
    Disagree,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub outcome: Agreement,
    pub band: f64,
    pub analysis: StabilityReport,
    pub simulation: ClassificationReport,
}

/// Stable pairs with Decay; Unstable with Sustained or Growth.
pub fn agreement(verdict: Verdict, criterion: f64, sim: Classification) -> Agreement {
    let agree = matches!(
        (verdict, sim),
        (Verdict::Stable, Classification::Decay)
            | (Verdict::Unstable, Classification::Sustained)
            | (Verdict::Unstable, Classification::Growth)
    );
    if agree {
        Agreement::Agree
    } else if criterion.abs() <= VERIFY_BAND {
        Agreement::DisagreeWithinBand
    } else {
        Agreement::Disagree
    }
}

pub fn verify(problem: &Problem, t_end: Option<f64>, dt: Option<f64>) -> Result<VerifyReport> {
    let analysis = problem.analyze()?.report;
    let traj = integrate(&problem.sim_problem(t_end, dt)?);
    let outcome = agreement(analysis.verdict, analysis.criterion, traj.classification);
    Ok(VerifyReport { outcome, band: VERIFY_BAND, analysis, simulation: traj.report() })
}

pub fn cmd_verify(path: &Path, t_end: Option<f64>, dt: Option<f64>) -> Result<Output> {
    let report = verify(&Problem::load(path)?, t_end, dt)?;
    let code = if report.outcome == Agreement::Disagree { EXIT_FAILED_CHECK } else { 0 };
    let summary = format!(
        "{:?} + {:?}: {:?}",
        report.analysis.verdict, report.simulation.classification, report.outcome
    );
    Ok(Output { body: json(&report), summary: Some(summary), code })
}

pub fn cmd_certify(path: &Path, delta: Option<f64>, rect: Option<Rectangle>) -> Result<Output> {
    let problem = Problem::load(path)?;
    let mut rect = rect;
    if let (Some(r), Some(d)) = (rect.as_mut(), delta) {
        r.re_lo = -d;
    }
    let cert = problem.certify(rect, delta.unwrap_or(DEFAULT_DELTA))?;
    let code = if cert.hopf_pair_found { 0 } else { EXIT_FAILED_CHECK };
    Ok(Output {
        body: json(&cert),
        summary: Some(format!("{} root(s) in the rectangle, Hopf pair found: {}", cert.root_count, cert.hopf_pair_found)),
        code,
    })
}
