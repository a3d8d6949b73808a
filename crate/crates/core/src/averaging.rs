//! Averaged linearization on the center eigenspace and the stability criterion.
//!
//! For a matrix measure `M` (the linearizations `G` and `F`) the scalar
//! measures `m1 = tr(Psi(0)^T dM Phi(0))` and `m2 = tr(Psi(0)^T dM Phi(0) J)`
//! give the number `int cos(theta) dm1 + int sin(theta) dm2`. This is `q`
//! for `G` and `p` for `F`. The zero solution is asymptotically stable for
//! small `eps > 0` when `q + kappa p < 0` and unstable when it is positive.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::delay_measures::{MatrixDelayMeasure, ScalarDelayDistribution};
use crate::error::{Error, Result};
use crate::fde_core::{rotation, rotation_generator, Feedback, HopfData, LinearFde, PerturbationSpec};

/// Width of the band `|q + kappa p| <= VERDICT_TOL` reported as inconclusive.
pub const VERDICT_TOL: f64 = 1e-9;
/// Tolerance of the delayed-versus-undelayed comparison.
pub const COMPARE_TOL: f64 = 1e-12;

pub const ASYMPTOTIC_CAVEAT: &str =
    "criterion holds for 0 < eps < eps0 with eps0 unknown; confirm finite eps by simulation";

#[derive(Debug, Clone, PartialEq)]
pub struct HatMeasures {
    pub first: ScalarDelayDistribution,
    pub second: ScalarDelayDistribution,
}

impl HatMeasures {
    /// `int cos(theta) dm1 + int sin(theta) dm2`.
    pub fn projected_value(&self) -> f64 {
        self.first.trig_moments().alpha + self.second.trig_moments().beta
    }
}

pub fn hat_functions(measure: &MatrixDelayMeasure, hopf: &HopfData) -> Result<HatMeasures> {
    if measure.dim() != hopf.dim() {
        return Err(Error::DimensionMismatch { expected: hopf.dim(), found: measure.dim() });
    }
    let psi_t = hopf.psi0().transpose();
    let phi_j = hopf.phi0() * rotation_generator();
    Ok(HatMeasures {
        first: measure.trace_measure(&psi_t, hopf.phi0())?,
        second: measure.trace_measure(&psi_t, &phi_j)?,
    })
}

pub fn compute_q(g_lin: &MatrixDelayMeasure, hopf: &HopfData) -> Result<f64> {
    Ok(hat_functions(g_lin, hopf)?.projected_value())
}

pub fn compute_p(feedback: &MatrixDelayMeasure, hopf: &HopfData) -> Result<f64> {
    Ok(hat_functions(feedback, hopf)?.projected_value())
}

/// `p` and its ingredients for factored feedback `F = C h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StructureQuantities {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `tr(C_hat)` with `C_hat = Psi(0)^T C Phi(0)`.
    pub tr_c_hat: f64,
    /// `tr(C_hat J) = tr(J C_hat)`.
    pub tr_c_hat_j: f64,
}

impl StructureQuantities {
    /// Combines structure traces with trigonometric moments of any distribution.
    pub fn with_moments(tr_c_hat: f64, tr_c_hat_j: f64, alpha: f64, beta: f64) -> Self {
        Self { p: alpha * tr_c_hat + beta * tr_c_hat_j, alpha, beta, tr_c_hat, tr_c_hat_j }
    }

    /// `p` for the same structure without delay (`alpha = 1`, `beta = 0`).
    pub fn undelayed_p(&self) -> f64 {
        self.tr_c_hat
    }
}

/// `(tr C_hat, tr C_hat J)`.
pub fn structure_traces(structure: &DMatrix<f64>, hopf: &HopfData) -> Result<(f64, f64)> {
    let n = hopf.dim();
    if structure.nrows() != n || structure.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: structure.nrows() });
    }
    let c_hat = hopf.psi0().transpose() * structure * hopf.phi0();
    Ok((c_hat.trace(), (&c_hat * rotation_generator()).trace()))
}

pub fn p_from_structure(feedback: &Feedback, hopf: &HopfData) -> Result<StructureQuantities> {
    let Feedback::Factored { structure, distribution } = feedback else {
        return Err(Error::NotFactored);
    };
    let (tr_c_hat, tr_c_hat_j) = structure_traces(structure, hopf)?;
    let t = distribution.trig_moments();
    Ok(StructureQuantities::with_moments(tr_c_hat, tr_c_hat_j, t.alpha, t.beta))
}

/// `K = int dM(s) Phi(-s)`, the measure applied to the center solutions.
fn applied_basis(measure: &MatrixDelayMeasure, hopf: &HopfData) -> DMatrix<f64> {
    measure.integrate_right(2, |s| hopf.phi(-s))
}

/// Closed trace form `1/2 tr(X) I - 1/2 tr(J X) J` with `X = Psi(0)^T K`.
pub fn averaged_matrix(measure: &MatrixDelayMeasure, hopf: &HopfData) -> Result<Matrix2<f64>> {
    if measure.dim() != hopf.dim() {
        return Err(Error::DimensionMismatch { expected: hopf.dim(), found: measure.dim() });
    }
    let x = hopf.psi0().transpose() * applied_basis(measure, hopf);
    let j = rotation_generator();
    let a = 0.5 * x.trace();
    let b = -0.5 * (&j * &x).trace();
    Ok(Matrix2::new(a, -b, b, a))
}

/// One-period average `(1/2pi) int_0^{2pi} e^{-Jt} Psi(0)^T K e^{Jt} dt` by the
/// trapezoid rule, exact for trigonometric polynomials of degree below `nodes`.
pub fn period_average(measure: &MatrixDelayMeasure, hopf: &HopfData, nodes: usize) -> Result<Matrix2<f64>> {
    if measure.dim() != hopf.dim() {
        return Err(Error::DimensionMismatch { expected: hopf.dim(), found: measure.dim() });
    }
    let x = hopf.psi0().transpose() * applied_basis(measure, hopf);
    let mut acc = DMatrix::<f64>::zeros(2, 2);
    for k in 0..nodes {
        let t = std::f64::consts::TAU * k as f64 / nodes as f64;
        acc += rotation(-t) * &x * rotation(t);
    }
    acc /= nodes as f64;
    Ok(Matrix2::new(acc[(0, 0)], acc[(0, 1)], acc[(1, 0)], acc[(1, 1)]))
}

/// Real parts of the eigenvalues of a 2x2 matrix.
pub fn eigenvalue_real_parts(m: &Matrix2<f64>) -> [f64; 2] {
    let ev = m.complex_eigenvalues();
    [ev[0].re, ev[1].re]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackEffect {
    Stabilizing,
    Destabilizing,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub q: f64,
    pub p: f64,
    pub kappa: f64,
    pub criterion: f64,
    pub verdict: Verdict,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "tr_C_hat")]
    pub tr_c_hat: Option<f64>,
    #[serde(rename = "tr_C_hat_J")]
    pub tr_c_hat_j: Option<f64>,
    pub feedback_effect: FeedbackEffect,
    pub omega: f64,
    pub gauge_id: String,
    pub caveat: String,
}

impl StabilityReport {
    fn with_structure(mut self, s: &StructureQuantities) -> Self {
        self.alpha = Some(s.alpha);
        self.beta = Some(s.beta);
        self.tr_c_hat = Some(s.tr_c_hat);
        self.tr_c_hat_j = Some(s.tr_c_hat_j);
        self
    }
}

pub fn verdict(q: f64, p: f64, kappa: f64) -> StabilityReport {
    let criterion = q + kappa * p;
    let verdict = if criterion < -VERDICT_TOL {
        Verdict::Stable
    } else if criterion > VERDICT_TOL {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    };
    let kp = kappa * p;
    let feedback_effect = if kp < 0.0 {
        FeedbackEffect::Stabilizing
    } else if kp > 0.0 {
        FeedbackEffect::Destabilizing
    } else {
        FeedbackEffect::Neutral
    };
    StabilityReport {
        q,
        p,
        kappa,
        criterion,
        verdict,
        alpha: None,
        beta: None,
        tr_c_hat: None,
        tr_c_hat_j: None,
        feedback_effect,
        omega: 1.0,
        gauge_id: String::new(),
        caveat: ASYMPTOTIC_CAVEAT.to_string(),
    }
}

/// `q`, `p` and the verdict for a frequency-normalized system.
pub fn analyze(perturbation: &PerturbationSpec, hopf: &HopfData) -> Result<StabilityReport> {
    let q = compute_q(&perturbation.g_lin, hopf)?;
    let mut report = match &perturbation.feedback {
        f @ Feedback::Factored { .. } => {
            let s = p_from_structure(f, hopf)?;
            verdict(q, s.p, perturbation.kappa).with_structure(&s)
        }
        Feedback::General(m) => verdict(q, compute_p(m, hopf)?, perturbation.kappa),
    };
    report.gauge_id = hopf.gauge().to_string();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    MoreStabilizing,
    MoreDestabilizing,
    Equal,
}

/// Delayed versus instantaneous feedback of the same structure:
/// delayed is more stabilizing iff `(1 - alpha) tr(C_hat) > beta tr(J C_hat)`.
pub fn compare_delayed_undelayed(s: &StructureQuantities) -> Comparison {
    let lhs = (1.0 - s.alpha) * s.tr_c_hat;
    let rhs = s.beta * s.tr_c_hat_j;
    if lhs > rhs + COMPARE_TOL {
        Comparison::MoreStabilizing
    } else if lhs < rhs - COMPARE_TOL {
        Comparison::MoreDestabilizing
    } else {
        Comparison::Equal
    }
}

/// Convenience: linear part, its eigenbasis check, and the report in one call.
/// `linear` and `perturbation` must already be frequency-normalized.
pub fn analyze_normalized(linear: &LinearFde, perturbation: &PerturbationSpec) -> Result<StabilityReport> {
    let hopf = crate::fde_core::eigenbasis(linear)?;
    analyze(perturbation, &hopf)
}
