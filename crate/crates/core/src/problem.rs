//! JSON problem files and the analysis pipeline built on them.
//!
//! Matrices are row-major arrays of arrays and lags are nonnegative.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::averaging::{analyze, StabilityReport};
use crate::dde_sim::{History, Nonlinearity, SimProblem};
use crate::delay_measures::{Atom, DensityPiece, MatrixDelayMeasure, ScalarDelayDistribution};
use crate::fde_core::{
    certify_spectrum, eigenbasis, find_hopf_pair, normalize_frequency, Feedback, HopfData, LinearFde, PerturbationSpec,
    Rectangle, SpectralCertificate,
};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
/// Default half-plane margin for spectral certificates.
pub const DEFAULT_DELTA: f64 = 0.05;
/// Spline segments used for `truncated_gamma` when the file does not say.
pub const DEFAULT_GAMMA_SEGMENTS: usize = 64;

pub type MatrixRows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixAtomSpec {
    pub lag: f64,
    pub matrix: MatrixRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDensitySpec {
    pub interval: [f64; 2],
    /// Cubic coefficients in powers of `s - interval[0]`; missing ones are zero.
    pub coeffs: Vec<f64>,
    pub matrix: MatrixRows,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub atoms: Vec<MatrixAtomSpec>,
    #[serde(default)]
    pub densities: Vec<MatrixDensitySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarDensitySpec {
    pub interval: [f64; 2],
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Discrete {
        lag: f64,
    },
    Uniform {
        mean: f64,
        halfwidth: f64,
    },
    Triangular {
        mean: f64,
        halfwidth: f64,
    },
    TruncatedGamma {
        shape: f64,
        rate: f64,
        support: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        segments: Option<usize>,
    },
    Custom {
        #[serde(default)]
        atoms: Vec<Atom>,
        #[serde(default)]
        densities: Vec<ScalarDensitySpec>,
        #[serde(default = "yes")]
        probability: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeedbackSpec {
    Factored {
        structure_matrix: MatrixRows,
        distribution: DistributionSpec,
        kappa: f64,
    },
    General {
        measure: MeasureSpec,
        kappa: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub builtin: Nonlinearity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub t_end: f64,
    pub dt: f64,
    /// Constant initial function; defaults to `(0.1, 0, ..., 0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema_version: u32,
    pub n: usize,
    pub linear: MeasureSpec,
    #[serde(default)]
    pub g_linearization: MeasureSpec,
    pub feedback: FeedbackSpec,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinearity: Option<NonlinearitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
}

fn schema(field: &str, err: impl std::fmt::Display) -> Error {
    Error::Schema(format!("{field}: {err}"))
}

fn matrix(field: &str, rows: &MatrixRows, n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(schema(field, format!("expected a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn coeffs(field: &str, c: &[f64]) -> Result<[f64; 4]> {
    if c.is_empty() || c.len() > 4 {
        return Err(schema(field, "coeffs must hold 1 to 4 entries"));
    }
    let mut out = [0.0; 4];
    out[..c.len()].copy_from_slice(c);
    Ok(out)
}

impl MeasureSpec {
    pub fn build(&self, field: &str, n: usize) -> Result<MatrixDelayMeasure> {
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for (k, a) in self.atoms.iter().enumerate() {
            let f = format!("{field}.atoms[{k}]");
            if !(a.lag >= 0.0 && a.lag.is_finite()) {
                return Err(schema(&f, format!("lag {} must be nonnegative", a.lag)));
            }
            atoms.push((a.lag, matrix(&format!("{f}.matrix"), &a.matrix, n)?));
        }
        let mut pieces = Vec::with_capacity(self.densities.len());
        for (k, d) in self.densities.iter().enumerate() {
            let f = format!("{field}.densities[{k}]");
            if d.interval[0] < 0.0 {
                return Err(schema(&f, "interval must lie on nonnegative lags"));
            }
            let piece = DensityPiece::new(d.interval[0], d.interval[1], coeffs(&format!("{f}.coeffs"), &d.coeffs)?)
                .map_err(|e| schema(&f, e))?;
            pieces.push((piece, matrix(&format!("{f}.matrix"), &d.matrix, n)?));
        }
        MatrixDelayMeasure::new(n, atoms, pieces).map_err(|e| schema(field, e))
    }
}

impl DistributionSpec {
    pub fn build(&self) -> Result<ScalarDelayDistribution> {
        match *self {
            DistributionSpec::Discrete { lag } => ScalarDelayDistribution::dirac(lag),
            DistributionSpec::Uniform { mean, halfwidth } => ScalarDelayDistribution::uniform(mean, halfwidth),
            DistributionSpec::Triangular { mean, halfwidth } => ScalarDelayDistribution::triangular(mean, halfwidth),
            DistributionSpec::TruncatedGamma { shape, rate, support, segments } => ScalarDelayDistribution::truncated_gamma(
                shape,
                rate,
                support,
                segments.unwrap_or(DEFAULT_GAMMA_SEGMENTS),
            ),
            DistributionSpec::Custom { ref atoms, ref densities, probability } => {
                let pieces = densities
                    .iter()
                    .map(|d| DensityPiece::new(d.interval[0], d.interval[1], coeffs("coeffs", &d.coeffs)?))
                    .collect::<Result<Vec<_>>>()?;
                if probability {
                    ScalarDelayDistribution::probability(atoms.clone(), pieces)
                } else {
                    ScalarDelayDistribution::signed(atoms.clone(), pieces)
                }
            }
        }
    }
}

/// A validated problem ready for analysis and simulation.
#[derive(Debug, Clone)]
pub struct Problem {
    pub linear: LinearFde,
    pub perturbation: PerturbationSpec,
    pub nonlinearity: Nonlinearity,
    pub simulation: Option<SimulationSpec>,
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text).map_err(|e| {
            Error::Schema(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(schema("schema_version", format!("unsupported version {}", file.schema_version)));
        }
        Ok(file)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| schema(&path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files serialize")
    }

    pub fn build(&self) -> Result<Problem> {
        let n = self.n;
        if n == 0 {
            return Err(schema("n", "dimension must be positive"));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(schema("epsilon", "must be finite and nonnegative"));
        }
        let linear = LinearFde::new(self.linear.build("linear", n)?);
        let g_lin = self.g_linearization.build("g_linearization", n)?;
        let (feedback, kappa) = match &self.feedback {
            FeedbackSpec::Factored { structure_matrix, distribution, kappa } => {
                let structure = matrix("feedback.structure_matrix", structure_matrix, n)?;
                let distribution = distribution.build().map_err(|e| schema("feedback.distribution", e))?;
                (Feedback::Factored { structure, distribution }, *kappa)
            }
            FeedbackSpec::General { measure, kappa } => {
                (Feedback::General(measure.build("feedback.measure", n)?), *kappa)
            }
        };
        if !kappa.is_finite() {
            return Err(schema("feedback.kappa", "must be finite"));
        }
        let nonlinearity = self.nonlinearity.as_ref().map_or(Nonlinearity::None, |s| s.builtin);
        if nonlinearity == Nonlinearity::VanDerPol && n != 2 {
            return Err(schema("nonlinearity", "van_der_pol needs n = 2"));
        }
        if let Some(sim) = &self.simulation {
            if let Some(h) = &sim.history {
                if h.len() != n {
                    return Err(schema("simulation.history", format!("expected {n} entries")));
                }
            }
        }
        Ok(Problem {
            linear,
            perturbation: PerturbationSpec { g_lin, feedback, kappa, epsilon: self.epsilon },
            nonlinearity,
            simulation: self.simulation.clone(),
        })
    }
}

/// Everything `analyze` produces: the certificate on the original time scale and
/// the report computed after normalizing the Hopf frequency to 1.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub omega: f64,
    pub certificate: SpectralCertificate,
    pub report: StabilityReport,
}

/// The problem rescaled so the Hopf frequency is 1.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub omega: f64,
    pub linear: LinearFde,
    pub perturbation: PerturbationSpec,
    pub hopf: HopfData,
}

impl Problem {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        ProblemFile::from_path(path)?.build()
    }

    pub fn hopf_frequency(&self) -> Result<f64> {
        let bound = Rectangle::enclosing(&self.linear, 0.0).im_hi;
        find_hopf_pair(&self.linear, bound)
    }

    pub fn certify(&self, rect: Option<Rectangle>, delta: f64) -> Result<SpectralCertificate> {
        let rect = rect.unwrap_or_else(|| Rectangle::enclosing(&self.linear, delta));
        certify_spectrum(&self.linear, rect)
    }

    /// Frequency search and the Hopf data of the frequency-normalized problem.
    pub fn normalized(&self) -> Result<Normalized> {
        let omega = self.hopf_frequency()?;
        let (linear, perturbation, _) = normalize_frequency(&self.linear, &self.perturbation, omega)?;
        let hopf = eigenbasis(&linear)?;
        Ok(Normalized { omega, linear, perturbation, hopf })
    }

    /// Frequency search, certificate, normalization, eigenbasis, averaged criterion.
    pub fn analyze(&self) -> Result<Analysis> {
        let normalized = self.normalized()?;
        let certificate = self.certify(None, DEFAULT_DELTA)?;
        if !certificate.hopf_pair_found {
            return Err(Error::SpectrumNotCertified {
                root_count: certificate.root_count,
                re_lo: certificate.rectangle.re_lo,
            });
        }
        let mut report = analyze(&normalized.perturbation, &normalized.hopf)?;
        report.omega = normalized.omega;
        Ok(Analysis { omega: normalized.omega, certificate, report })
    }

    /// Simulation set up from the file's block, with optional overrides.
    pub fn sim_problem(&self, t_end: Option<f64>, dt: Option<f64>) -> Result<SimProblem> {
        let block = self.simulation.as_ref();
        let t_end = t_end
            .or(block.map(|b| b.t_end))
            .ok_or_else(|| schema("simulation", "missing t_end"))?;
        let dt = dt.or(block.map(|b| b.dt)).ok_or_else(|| schema("simulation", "missing dt"))?;
        let n = self.linear.dim();
        let x0 = match block.and_then(|b| b.history.clone()) {
            Some(h) => DVector::from_vec(h),
            None => {
                let mut x = DVector::zeros(n);
                x[0] = 0.1;
                x
            }
        };
        SimProblem::new(&self.linear, &self.perturbation, self.nonlinearity, History::Constant(x0), t_end, dt)
    }
}
