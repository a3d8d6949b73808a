//! Effect of the delay variance at a fixed mean delay.
//!
//! A reference distribution `h` with mean `tau_bar` and variance `sigma^2`
//! generates the family `h_mu` (variance `mu^2 sigma^2`, same mean). For a
//! fixed structure the feedback number is
//! `p_mu = alpha_mu tr(C_hat) + beta_mu tr(J C_hat)`, and `p_0` belongs to
//! the point mass at `tau_bar`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::averaging::structure_traces;
use crate::delay_measures::ScalarDelayDistribution;
use crate::error::{Error, Result};
use crate::fde_core::HopfData;

/// Target `|p|` at a refined sign change.
pub const ROOT_TOL: f64 = 1e-10;
/// Mirror tolerance used when a symmetric reference is required.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MuFamily {
    reference: ScalarDelayDistribution,
    tau_bar: f64,
    sigma2: f64,
    tr_c_hat: f64,
    tr_c_hat_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignChange {
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub mu_root: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuScan {
    pub tau_bar: f64,
    pub p0: f64,
    pub q: f64,
    pub kappa: f64,
    pub mu_grid: Vec<f64>,
    pub p_values: Vec<f64>,
    /// `q + kappa p_mu`.
    pub criterion_values: Vec<f64>,
    /// `int cos(mu (s - tau_bar)) dh(s)`; present for symmetric references only.
    pub attenuation: Option<Vec<f64>>,
    pub sign_changes: Vec<SignChange>,
    /// Grid values with `|p_mu| > |p_0|` (possible only for asymmetric references).
    pub bound_violations: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalDerivatives {
    pub d1: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteDifferences {
    pub step: f64,
    pub d1: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSample {
    pub mu: f64,
    pub p_mu: f64,
    pub attenuation: f64,
    /// `|p_mu - p_0 * attenuation|`.
    pub identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalBoundReport {
    pub p0: f64,
    pub samples: Vec<BoundSample>,
    pub max_identity_residual: f64,
    /// `max(|p_mu| - |p_0|)` over the samples.
    pub max_excess: f64,
}

impl GlobalBoundReport {
    pub fn holds(&self, bound_tol: f64, identity_tol: f64) -> bool {
        self.max_excess <= bound_tol && self.max_identity_residual <= identity_tol
    }
}

impl MuFamily {
    pub fn new(reference: ScalarDelayDistribution, tr_c_hat: f64, tr_c_hat_j: f64) -> Result<Self> {
        if !reference.is_probability() {
            return Err(Error::InvalidDistribution("scaled family needs a probability distribution".into()));
        }
        let m = reference.moments();
        Ok(Self { reference, tau_bar: m.mean, sigma2: m.variance, tr_c_hat, tr_c_hat_j })
    }

    pub fn from_structure(structure: &DMatrix<f64>, reference: ScalarDelayDistribution, hopf: &HopfData) -> Result<Self> {
        let (tr, tr_j) = structure_traces(structure, hopf)?;
        Self::new(reference, tr, tr_j)
    }

    pub fn reference(&self) -> &ScalarDelayDistribution {
        &self.reference
    }

    pub fn tau_bar(&self) -> f64 {
        self.tau_bar
    }

    pub fn variance(&self) -> f64 {
        self.sigma2
    }

    fn combine(&self, h: &ScalarDelayDistribution) -> f64 {
        let t = h.trig_moments();
        t.alpha * self.tr_c_hat + t.beta * self.tr_c_hat_j
    }

    /// Discrete delay at the mean, `alpha_0 = cos(tau_bar)`.
    pub fn p0(&self) -> f64 {
        let (s, c) = self.tau_bar.sin_cos();
        c * self.tr_c_hat - s * self.tr_c_hat_j
    }

    pub fn p_mu(&self, mu: f64) -> Result<f64> {
        if mu == 0.0 {
            return Ok(self.p0());
        }
        if mu < 0.0 {
            return Err(Error::Config(format!("mu must be nonnegative, got {mu}")));
        }
        Ok(self.combine(&self.reference.scale_family(mu)?))
    }

    /// `p_mu` continued to `mu < 0` by mirroring `h_|mu|` about the mean.
    pub fn p_mu_signed(&self, mu: f64) -> Result<f64> {
        if mu >= 0.0 {
            return self.p_mu(mu);
        }
        Ok(self.combine(&self.reference.affine_image(self.tau_bar, mu)?))
    }

    /// `int cos(mu (s - tau_bar)) dh(s)` over the reference.
    pub fn attenuation(&self, mu: f64) -> f64 {
        let c = self.tau_bar;
        self.reference.stieltjes_integral_oscillatory(mu.abs(), |s| (mu * (s - c)).cos())
    }

    pub fn scan(&self, grid: &[f64], q: f64, kappa: f64) -> Result<MuScan> {
        if grid.windows(2).any(|w| w[0] >= w[1]) || grid.iter().any(|&m| m < 0.0 || !m.is_finite()) {
            return Err(Error::Config("mu grid must be nonnegative and strictly increasing".into()));
        }
        let p_values = grid.par_iter().map(|&mu| self.p_mu(mu)).collect::<Result<Vec<f64>>>()?;
        let criterion_values = p_values.iter().map(|p| q + kappa * p).collect();
        let attenuation = self
            .reference
            .is_symmetric(SYMMETRY_TOL)
            .then(|| grid.par_iter().map(|&mu| self.attenuation(mu)).collect());

        let mut sign_changes = Vec::new();
        for i in 0..grid.len() {
            let zero = |j: usize| p_values[j].abs() <= ROOT_TOL;
            let isolated = (i > 0 && !zero(i - 1)) || (i + 1 < grid.len() && !zero(i + 1));
            if zero(i) && isolated && (i == 0 || !zero(i - 1)) {
                sign_changes.push(SignChange { mu_lo: grid[i], mu_hi: grid[i], mu_root: grid[i] });
            } else if i + 1 < grid.len()
                && p_values[i].abs() > ROOT_TOL
                && p_values[i + 1].abs() > ROOT_TOL
                && p_values[i].signum() != p_values[i + 1].signum()
            {
                let root = self.bisect(grid[i], grid[i + 1], p_values[i])?;
                sign_changes.push(SignChange { mu_lo: grid[i], mu_hi: grid[i + 1], mu_root: root });
            }
        }
        let p0 = self.p0();
        let bound_violations = grid
            .iter()
            .zip(&p_values)
            .filter(|(_, p)| p.abs() > p0.abs() + 1e-12)
            .map(|(mu, _)| *mu)
            .collect();
        Ok(MuScan {
            tau_bar: self.tau_bar,
            p0,
            q,
            kappa,
            mu_grid: grid.to_vec(),
            p_values,
            criterion_values,
            attenuation,
            sign_changes,
            bound_violations,
        })
    }

    fn bisect(&self, mut lo: f64, mut hi: f64, p_lo: f64) -> Result<f64> {
        let sign_lo = p_lo.signum();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let p = self.p_mu(mid)?;
            if p.abs() <= ROOT_TOL && hi - lo <= 1e-12 * mid.max(1.0) {
                return Ok(mid);
            }
            if p.signum() == sign_lo {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// First and second `mu`-derivatives of `p_mu` at `mu = 0` from the moment
    /// integrals `-int sin(tau_bar)(s - tau_bar) dh` and `-int cos(tau_bar)(s - tau_bar)^2 dh`.
    pub fn local_derivatives(&self) -> LocalDerivatives {
        let c = self.tau_bar;
        let (sin_t, cos_t) = c.sin_cos();
        let first = self.reference.stieltjes_integral(|s| s - c);
        let second = self.reference.stieltjes_integral(|s| (s - c) * (s - c));
        // alpha_mu = int cos(c + mu (s - c)) dh, beta_mu = -int sin(c + mu (s - c)) dh
        let d_alpha = -sin_t * first;
        let d_beta = -cos_t * first;
        let dd_alpha = -cos_t * second;
        let dd_beta = sin_t * second;
        LocalDerivatives {
            d1: d_alpha * self.tr_c_hat + d_beta * self.tr_c_hat_j,
            d2: dd_alpha * self.tr_c_hat + dd_beta * self.tr_c_hat_j,
        }
    }

    /// Central differences of `p_mu` about `mu = 0`.
    pub fn finite_differences(&self, step: f64) -> Result<FiniteDifferences> {
        let plus = self.p_mu(step)?;
        let minus = self.p_mu_signed(-step)?;
        let p0 = self.p0();
        Ok(FiniteDifferences {
            step,
            d1: (plus - minus) / (2.0 * step),
            d2: (plus - 2.0 * p0 + minus) / (step * step),
        })
    }

    /// Richardson combination of second differences at `step` and `step / 10`.
    pub fn richardson_d2(&self, step: f64) -> Result<f64> {
        let coarse = self.finite_differences(step)?.d2;
        let fine = self.finite_differences(step / 10.0)?.d2;
        Ok((100.0 * fine - coarse) / 99.0)
    }

    /// Checks `|p_mu| <= |p_0|` and `p_mu = p_0 int cos(mu (s - tau_bar)) dh` for a symmetric reference.
    pub fn global_bound_check(&self, mu_samples: &[f64]) -> Result<GlobalBoundReport> {
        if !self.reference.is_symmetric(SYMMETRY_TOL) {
            return Err(Error::NotSymmetric);
        }
        let p0 = self.p0();
        let samples = mu_samples
            .par_iter()
            .map(|&mu| {
                let p_mu = self.p_mu(mu)?;
                let attenuation = self.attenuation(mu);
                Ok(BoundSample { mu, p_mu, attenuation, identity_residual: (p_mu - p0 * attenuation).abs() })
            })
            .collect::<Result<Vec<_>>>()?;
        let max_identity_residual = samples.iter().map(|s| s.identity_residual).fold(0.0, f64::max);
        let max_excess = samples.iter().map(|s| s.p_mu.abs() - p0.abs()).fold(f64::NEG_INFINITY, f64::max);
        Ok(GlobalBoundReport { p0, samples, max_identity_residual, max_excess })
    }
}

/// 17 significant digits, fixed exponent form.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

impl MuScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mu,p_mu,criterion");
        if self.attenuation.is_some() {
            out.push_str(",attenuation_factor");
        }
        out.push('\n');
        for i in 0..self.mu_grid.len() {
            let _ = write!(
                out,
                "{},{},{}",
                fmt_num(self.mu_grid[i]),
                fmt_num(self.p_values[i]),
                fmt_num(self.criterion_values[i])
            );
            if let Some(att) = &self.attenuation {
                let _ = write!(out, ",{}", fmt_num(att[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scan serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay_measures::Atom;
    use std::f64::consts::PI;

    fn family(h: ScalarDelayDistribution) -> MuFamily {
        MuFamily::new(h, 0.8, -1.3).unwrap()
    }

    #[test]
    fn uniform_family_closed_form() {
        let f = family(ScalarDelayDistribution::uniform(13.0, 1.0).unwrap());
        let p0 = f.p0();
        for mu in [0.3f64, 1.0, 2.5, 7.0, 12.0] {
            let want = mu.sin() / mu * p0;
            assert!((f.p_mu(mu).unwrap() - want).abs() < 1e-12, "mu = {mu}");
        }
    }

    #[test]
    fn p0_from_discrete_moments() {
        let f = family(ScalarDelayDistribution::uniform(2.0, 0.5).unwrap());
        let d = ScalarDelayDistribution::dirac(2.0).unwrap().trig_moments();
        assert!((f.p_mu(0.0).unwrap() - (0.8 * d.alpha - 1.3 * d.beta)).abs() < 1e-15);
    }

    #[test]
    fn point_mass_is_invariant() {
        let f = family(ScalarDelayDistribution::dirac(3.0).unwrap());
        for mu in [0.5, 2.0, 10.0] {
            assert_eq!(f.p_mu(mu).unwrap(), f.p0());
        }
    }

    #[test]
    fn scan_uniform_finds_multiples_of_pi() {
        let f = family(ScalarDelayDistribution::uniform(13.0, 1.0).unwrap());
        let grid: Vec<f64> = (1..=400).map(|k| 4.0 * PI * k as f64 / 400.0).collect();
        // the last grid point lands on 4 pi where p vanishes
        let scan = f.scan(&grid, 1.0, 1.0).unwrap();
        let roots: Vec<f64> = scan.sign_changes.iter().map(|s| s.mu_root).collect();
        assert_eq!(roots.len(), 4, "{roots:?}");
        for (k, r) in roots.iter().enumerate() {
            assert!((r - (k + 1) as f64 * PI).abs() < 1e-9, "{r}");
        }
        assert!(scan.attenuation.is_some());
        assert!(scan.bound_violations.is_empty());
    }

    #[test]
    fn scan_triangular_respects_bound() {
        let f = family(ScalarDelayDistribution::triangular(12.0, 1.0).unwrap());
        let grid: Vec<f64> = (1..=200).map(|k| 11.0 * k as f64 / 200.0).collect();
        let scan = f.scan(&grid, 0.0, 1.0).unwrap();
        assert!(scan.p_values.iter().all(|p| p.abs() <= scan.p0.abs() + 1e-12));
    }

    #[test]
    fn scan_with_null_structure() {
        let f = MuFamily::new(ScalarDelayDistribution::uniform(5.0, 1.0).unwrap(), 0.0, 0.0).unwrap();
        let grid: Vec<f64> = (1..=50).map(|k| k as f64 * 0.1).collect();
        let scan = f.scan(&grid, 0.5, 1.0).unwrap();
        assert!(scan.p_values.iter().all(|&p| p == 0.0));
        assert!(scan.criterion_values.iter().all(|&c| c == 0.5));
        assert!(scan.sign_changes.is_empty());
    }

    #[test]
    fn scan_rejects_bad_grid() {
        let f = family(ScalarDelayDistribution::uniform(5.0, 1.0).unwrap());
        assert!(f.scan(&[1.0, 0.5], 0.0, 1.0).is_err());
        assert!(matches!(f.scan(&[1.0, 6.0], 0.0, 1.0), Err(Error::SupportViolation { .. })));
    }

    #[test]
    fn local_derivatives_uniform() {
        let f = family(ScalarDelayDistribution::uniform(4.0, 1.0).unwrap());
        let d = f.local_derivatives();
        assert!(d.d1.abs() < 1e-14);
        assert!((d.d2 + f.p0() / 3.0).abs() < 1e-13);
        let fd = f.finite_differences(1e-3).unwrap();
        assert!(fd.d1.abs() < 1e-9);
        assert!((fd.d2 - d.d2).abs() < 1e-6);
    }

    #[test]
    fn local_derivatives_degenerate_p0() {
        // tau_bar = pi/2 and tr(C_hat J) = 0 make p0 = 0
        let f = MuFamily::new(ScalarDelayDistribution::uniform(PI / 2.0, 1.0).unwrap(), 1.0, 0.0).unwrap();
        assert!(f.p0().abs() < 1e-15);
        assert!(f.local_derivatives().d2.abs() < 1e-15);
    }

    #[test]
    fn global_bound_examples() {
        let f = family(ScalarDelayDistribution::uniform(12.0, 1.0).unwrap());
        let mus = [0.5, 1.0, 3.0, 10.0];
        let r = f.global_bound_check(&mus).unwrap();
        for s in &r.samples {
            assert!((s.attenuation - s.mu.sin() / s.mu).abs() < 1e-13);
        }
        assert!(r.holds(1e-12, 1e-10));

        let d = 0.7;
        let pair = ScalarDelayDistribution::probability(
            vec![Atom { lag: 9.0 - d, weight: 0.5 }, Atom { lag: 9.0 + d, weight: 0.5 }],
            vec![],
        )
        .unwrap();
        let r = family(pair).global_bound_check(&mus).unwrap();
        for s in &r.samples {
            assert!((s.attenuation - (s.mu * d).cos()).abs() < 1e-14);
        }

        let r = f.global_bound_check(&[1e-6]).unwrap();
        assert!((r.samples[0].attenuation - 1.0).abs() < 1e-12);

        let skew = ScalarDelayDistribution::truncated_gamma(2.0, 1.0, 8.0, 32).unwrap();
        assert!(matches!(family(skew).global_bound_check(&mus), Err(Error::NotSymmetric)));
    }

    #[test]
    fn csv_layout() {
        let f = family(ScalarDelayDistribution::uniform(5.0, 1.0).unwrap());
        let scan = f.scan(&[0.5, 1.0], 1.0, 2.0).unwrap();
        let csv = scan.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("mu,p_mu,criterion,attenuation_factor"));
        assert_eq!(lines.next().unwrap().split(',').count(), 4);
        assert!(csv.ends_with('\n') && !csv.contains('\r'));
        assert_eq!(csv, f.scan(&[0.5, 1.0], 1.0, 2.0).unwrap().to_csv());
    }
}
