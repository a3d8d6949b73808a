//! Delay distributions and matrix-valued delay measures.
//!
//! Lags are stored as nonnegative numbers `s`. Integrals written over the
//! history variable `theta in [-tau, 0]` are evaluated here with
//! `theta = -s`, so `int cos(theta) dh = int cos(s) dh(s)` and
//! `int sin(theta) dh = -int sin(s) dh(s)`. No other module flips signs.
//!
//! A measure is a finite list of atoms plus density pieces. Each density
//! piece is a polynomial of degree at most three on a closed interval,
//! stored in powers of `(s - start)` so that rescaling the lag axis only
//! touches the coefficients.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Mass tolerance for probability distributions.
pub const MASS_TOL: f64 = 1e-12;

/// Longest sub-interval handed to a single Gauss–Legendre rule when the
/// integrand oscillates with unit frequency.
const UNIT_SPLIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub lag: f64,
    pub weight: f64,
}

/// Cubic density on `[start, end]`, `rho(s) = sum_k coeffs[k] (s - start)^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityPiece {
    pub start: f64,
    pub end: f64,
    pub coeffs: [f64; 4],
}

impl DensityPiece {
    pub fn new(start: f64, end: f64, coeffs: [f64; 4]) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start < end) {
            return Err(Error::InvalidDistribution(format!(
                "density interval [{start}, {end}] is empty or not finite"
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidDistribution("density coefficient is not finite".into()));
        }
        Ok(Self { start, end, coeffs })
    }

    pub fn constant(start: f64, end: f64, value: f64) -> Result<Self> {
        Self::new(start, end, [value, 0.0, 0.0, 0.0])
    }

    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        let x = s - self.start;
        let c = &self.coeffs;
        ((c[3] * x + c[2]) * x + c[1]) * x + c[0]
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.start && s <= self.end
    }

    /// Pushes the piece forward under `s -> center + factor (s - center)`.
    /// Mass is preserved; a negative factor mirrors the piece.
    fn affine_image(&self, center: f64, factor: f64) -> DensityPiece {
        let map = |s: f64| center + factor * (s - center);
        let (img_start, img_end) = (map(self.start), map(self.end));
        // rho'(s') = rho(s) / |factor| with s - start = (s' - img_start) / factor
        let mut c = self.coeffs;
        let mut scale = 1.0 / factor.abs();
        for ck in c.iter_mut() {
            *ck *= scale;
            scale /= factor;
        }
        if factor > 0.0 {
            DensityPiece { start: img_start, end: img_end, coeffs: c }
        } else {
            // re-expand about the new left end
            DensityPiece { start: img_end, end: img_start, coeffs: taylor_shift(c, img_end - img_start) }
        }
    }

    /// `int_start^end g(s) rho(s) ds`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, max_len: f64, mut g: F) -> f64 {
        GaussLegendre::standard().integrate_split(self.start, self.end, max_len, |s| g(s) * self.value(s))
    }

    pub fn integrate_complex<F: FnMut(f64) -> Complex64>(&self, max_len: f64, mut g: F) -> Complex64 {
        let rule = GaussLegendre::standard();
        let pieces = crate::quadrature::split_count(self.start, self.end, max_len);
        let h = self.width() / pieces as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..pieces {
            let lo = self.start + h * k as f64;
            let hi = if k + 1 == pieces { self.end } else { lo + h };
            for (s, w) in rule.mapped(lo, hi) {
                acc += g(s) * (w * self.value(s));
            }
        }
        acc
    }
}

/// `q(x) = p(x + d)` for a cubic.
fn taylor_shift(p: [f64; 4], d: f64) -> [f64; 4] {
    [
        p[0] + d * (p[1] + d * (p[2] + d * p[3])),
        p[1] + d * (2.0 * p[2] + 3.0 * d * p[3]),
        p[2] + 3.0 * d * p[3],
        p[3],
    ]
}

/// Scalar delay distribution `h` on lags `[0, tau_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarDelayDistribution {
    atoms: Vec<Atom>,
    pieces: Vec<DensityPiece>,
    tau_max: f64,
    probability: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
}

/// `alpha = int cos(theta) dh`, `beta = int sin(theta) dh` with `theta = -s`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TrigMoments {
    pub alpha: f64,
    pub beta: f64,
}

impl ScalarDelayDistribution {
    /// A signed measure; only checks that the support is a finite subset of `[0, inf)`.
    pub fn signed(atoms: Vec<Atom>, pieces: Vec<DensityPiece>) -> Result<Self> {
        let mut tau_max: f64 = 0.0;
        for a in &atoms {
            if !(a.lag.is_finite() && a.weight.is_finite()) {
                return Err(Error::InvalidDistribution("atom is not finite".into()));
            }
            if a.lag < 0.0 {
                return Err(Error::InvalidDistribution(format!("negative lag {}", a.lag)));
            }
            tau_max = tau_max.max(a.lag);
        }
        for p in &pieces {
            if p.start < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "density piece starts at negative lag {}",
                    p.start
                )));
            }
            tau_max = tau_max.max(p.end);
        }
        Ok(Self { atoms, pieces, tau_max, probability: false })
    }

    /// A probability distribution: nonnegative weights and densities, unit mass.
    pub fn probability(atoms: Vec<Atom>, pieces: Vec<DensityPiece>) -> Result<Self> {
        let mut h = Self::signed(atoms, pieces)?;
        if h.atoms.iter().any(|a| a.weight < 0.0) {
            return Err(Error::InvalidDistribution("negative atom weight".into()));
        }
        for p in &h.pieces {
            let rule = GaussLegendre::standard();
            let negative = [p.start, p.end]
                .into_iter()
                .chain(rule.mapped(p.start, p.end).map(|(s, _)| s))
                .any(|s| p.value(s) < -MASS_TOL);
            if negative {
                return Err(Error::InvalidDistribution(format!(
                    "density on [{}, {}] takes negative values",
                    p.start, p.end
                )));
            }
        }
        let mass = h.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!("total mass {mass} is not 1")));
        }
        h.probability = true;
        Ok(h)
    }

    /// Point mass at `lag`; the `mu -> 0` member of every scaled family with that mean.
    pub fn dirac(lag: f64) -> Result<Self> {
        Self::probability(vec![Atom { lag, weight: 1.0 }], vec![])
    }

    pub fn uniform(mean: f64, halfwidth: f64) -> Result<Self> {
        check_halfwidth(halfwidth)?;
        let piece = DensityPiece::constant(mean - halfwidth, mean + halfwidth, 0.5 / halfwidth)?;
        Self::probability(vec![], vec![piece])
    }

    pub fn triangular(mean: f64, halfwidth: f64) -> Result<Self> {
        check_halfwidth(halfwidth)?;
        let w = halfwidth;
        let peak = 1.0 / w;
        let rising = DensityPiece::new(mean - w, mean, [0.0, peak / w, 0.0, 0.0])?;
        let falling = DensityPiece::new(mean, mean + w, [peak, -peak / w, 0.0, 0.0])?;
        Self::probability(vec![], vec![rising, falling])
    }

    /// Gamma density `s^(shape-1) e^(-rate s)` cut at `support`, fitted by
    /// `segments` cubic Hermite pieces and renormalized to unit mass.
    pub fn truncated_gamma(shape: f64, rate: f64, support: f64, segments: usize) -> Result<Self> {
        if !(shape >= 1.0 && rate > 0.0 && support > 0.0 && segments > 0) {
            return Err(Error::InvalidDistribution(format!(
                "truncated gamma needs shape >= 1, rate > 0, support > 0 (got {shape}, {rate}, {support})"
            )));
        }
        let pdf = |s: f64| s.powf(shape - 1.0) * (-rate * s).exp();
        let dpdf = |s: f64| {
            if s == 0.0 {
                // finite only for shape == 1 or shape >= 2
                if shape == 1.0 {
                    -rate
                } else if shape >= 2.0 {
                    if shape == 2.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    f64::NAN
                }
            } else {
                ((shape - 1.0) / s - rate) * pdf(s)
            }
        };
        let h = support / segments as f64;
        let mut pieces = Vec::with_capacity(segments);
        for k in 0..segments {
            let a = h * k as f64;
            let b = if k + 1 == segments { support } else { a + h };
            let (f0, f1) = (pdf(a), pdf(b));
            let mut d0 = dpdf(a);
            if !d0.is_finite() {
                d0 = (f1 - f0) / (b - a);
            }
            let d1 = dpdf(b);
            let w = b - a;
            let slope = (f1 - f0) / w;
            let c2 = (3.0 * slope - 2.0 * d0 - d1) / w;
            let c3 = (d0 + d1 - 2.0 * slope) / (w * w);
            pieces.push(DensityPiece::new(a, b, [f0, d0, c2, c3])?);
        }
        let raw = Self::signed(vec![], pieces)?;
        let mass = raw.mass();
        let pieces = raw
            .pieces
            .iter()
            .map(|p| DensityPiece { coeffs: p.coeffs.map(|c| c / mass), ..*p })
            .collect();
        Self::probability(vec![], pieces)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn pieces(&self) -> &[DensityPiece] {
        &self.pieces
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    pub fn is_probability(&self) -> bool {
        self.probability
    }

    /// Smallest lag in the support.
    pub fn tau_min(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.lag)
            .chain(self.pieces.iter().map(|p| p.start))
            .fold(f64::INFINITY, f64::min)
    }

    /// `sum_k w_k f(s_k) + sum_j int f(s) rho_j(s) ds`, pieces split to unit length.
    pub fn stieltjes_integral<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.weight * f(a.lag)).sum();
        let dens: f64 = self.pieces.iter().map(|p| p.integrate(UNIT_SPLIT, &mut f)).sum();
        atoms + dens
    }

    /// Same as [`stieltjes_integral`](Self::stieltjes_integral) for integrands
    /// oscillating with angular frequency up to `freq`.
    pub fn stieltjes_integral_oscillatory<F: FnMut(f64) -> f64>(&self, freq: f64, mut f: F) -> f64 {
        let max_len = UNIT_SPLIT / freq.max(1.0);
        let atoms: f64 = self.atoms.iter().map(|a| a.weight * f(a.lag)).sum();
        let dens: f64 = self.pieces.iter().map(|p| p.integrate(max_len, &mut f)).sum();
        atoms + dens
    }

    /// Same as [`stieltjes_integral`](Self::stieltjes_integral) for complex integrands
    /// oscillating with angular frequency up to `freq`.
    pub fn stieltjes_integral_complex<F: FnMut(f64) -> Complex64>(&self, freq: f64, mut f: F) -> Complex64 {
        let max_len = UNIT_SPLIT / freq.max(1.0);
        let mut acc: Complex64 = self.atoms.iter().map(|a| f(a.lag) * a.weight).sum();
        for p in &self.pieces {
            acc += p.integrate_complex(max_len, &mut f);
        }
        acc
    }

    pub fn mass(&self) -> f64 {
        self.stieltjes_integral(|_| 1.0)
    }

    pub fn moments(&self) -> Moments {
        let mass = self.mass();
        let mean = self.stieltjes_integral(|s| s) / mass;
        let variance = self.stieltjes_integral(|s| (s - mean).powi(2)) / mass;
        Moments { mass, mean, variance }
    }

    pub fn mean(&self) -> f64 {
        self.moments().mean
    }

    pub fn trig_moments(&self) -> TrigMoments {
        TrigMoments {
            alpha: self.stieltjes_integral(f64::cos),
            beta: -self.stieltjes_integral(f64::sin),
        }
    }

    /// Density value at `s`, summing every piece whose half-open interval holds `s`.
    pub fn density_at(&self, s: f64) -> f64 {
        self.pieces
            .iter()
            .filter(|p| s >= p.start && s < p.end)
            .map(|p| p.value(s))
            .sum()
    }

    /// Mirror symmetry about the mean, for atoms and (at quadrature nodes) densities.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let center = self.mean();
        let atoms_ok = self.atoms.iter().all(|a| {
            let mirror = 2.0 * center - a.lag;
            let paired: f64 = self
                .atoms
                .iter()
                .filter(|b| (b.lag - mirror).abs() <= tol)
                .map(|b| b.weight)
                .sum();
            let here: f64 = self
                .atoms
                .iter()
                .filter(|b| (b.lag - a.lag).abs() <= tol)
                .map(|b| b.weight)
                .sum();
            (paired - here).abs() <= tol
        });
        if !atoms_ok {
            return false;
        }
        let rule = GaussLegendre::standard();
        self.pieces.iter().all(|p| {
            rule.mapped(p.start, p.end)
                .all(|(s, _)| (self.density_at(s) - self.density_at(2.0 * center - s)).abs() <= tol)
        })
    }

    /// Image under `s -> center + factor (s - center)`, without support checks.
    pub fn affine_image(&self, center: f64, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor != 0.0) {
            return Err(Error::Config(format!("affine factor must be finite and nonzero, got {factor}")));
        }
        let map = |s: f64| center + factor * (s - center);
        let slack = 1e-12 * center.abs().max(1.0);
        for s in self.support_points() {
            let image = map(s);
            if image < -slack {
                return Err(Error::SupportViolation { lag: s, image });
            }
        }
        // images within roundoff of zero land on zero
        let atoms = self.atoms.iter().map(|a| Atom { lag: map(a.lag).max(0.0), weight: a.weight }).collect();
        let pieces = self
            .pieces
            .iter()
            .map(|p| {
                let mut q = p.affine_image(center, factor);
                q.start = q.start.max(0.0);
                q
            })
            .collect();
        let mut h = Self::signed(atoms, pieces)?;
        h.probability = self.probability;
        Ok(h)
    }

    /// Member `h_mu` of the variance-scaled family: same mass and mean, variance
    /// multiplied by `mu^2`.
    pub fn scale_family(&self, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("scale parameter must be positive, got {mu}")));
        }
        self.affine_image(self.mean(), mu)
    }

    /// Lag axis stretched by `factor > 0` about zero (time rescaling).
    pub fn stretch_lags(&self, factor: f64) -> Result<Self> {
        self.affine_image(0.0, factor)
    }

    fn support_points(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms
            .iter()
            .map(|a| a.lag)
            .chain(self.pieces.iter().flat_map(|p| [p.start, p.end]))
    }
}

fn check_halfwidth(halfwidth: f64) -> Result<()> {
    if halfwidth > 0.0 && halfwidth.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDistribution(format!("halfwidth must be positive, got {halfwidth}")))
    }
}

/// Matrix-valued delay measure on lags: atoms `A_k delta(s - s_k)` and
/// pieces `D_j rho_j(s) ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDelayMeasure {
    dim: usize,
    atoms: Vec<(f64, DMatrix<f64>)>,
    pieces: Vec<(DensityPiece, DMatrix<f64>)>,
}

impl MatrixDelayMeasure {
    pub fn zero(dim: usize) -> Self {
        Self { dim, atoms: vec![], pieces: vec![] }
    }

    pub fn new(
        dim: usize,
        atoms: Vec<(f64, DMatrix<f64>)>,
        pieces: Vec<(DensityPiece, DMatrix<f64>)>,
    ) -> Result<Self> {
        for m in atoms.iter().map(|(_, m)| m).chain(pieces.iter().map(|(_, m)| m)) {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.nrows().max(m.ncols()) });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidDistribution("matrix entry is not finite".into()));
            }
        }
        for &(lag, _) in &atoms {
            if !(lag >= 0.0 && lag.is_finite()) {
                return Err(Error::InvalidDistribution(format!("invalid lag {lag}")));
            }
        }
        for (p, _) in &pieces {
            if p.start < 0.0 {
                return Err(Error::InvalidDistribution(format!("negative lag {}", p.start)));
            }
        }
        Ok(Self { dim, atoms, pieces })
    }

    /// Instantaneous term `A x(t)`.
    pub fn instantaneous(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        Self::new(n, vec![(0.0, matrix)], vec![])
    }

    /// `C h(s)`: every atom and piece of `h` carries the matrix `C`.
    pub fn factored(structure: &DMatrix<f64>, h: &ScalarDelayDistribution) -> Result<Self> {
        let n = structure.nrows();
        let atoms = h.atoms().iter().map(|a| (a.lag, structure * a.weight)).collect();
        let pieces = h.pieces().iter().map(|p| (*p, structure.clone())).collect();
        Self::new(n, atoms, pieces)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[(f64, DMatrix<f64>)] {
        &self.atoms
    }

    pub fn pieces(&self) -> &[(DensityPiece, DMatrix<f64>)] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() && self.pieces.is_empty()
    }

    pub fn tau_max(&self) -> f64 {
        self.atoms
            .iter()
            .map(|(s, _)| *s)
            .chain(self.pieces.iter().map(|(p, _)| p.end))
            .fold(0.0, f64::max)
    }

    /// Smallest strictly positive atom lag, if any.
    pub fn min_positive_atom_lag(&self) -> Option<f64> {
        self.atoms.iter().map(|(s, _)| *s).filter(|&s| s > 0.0).reduce(f64::min)
    }

    /// `sum_k A_k f(s_k) + sum_j D_j int f(s) rho_j(s) ds` for complex scalar `f`
    /// oscillating with frequency up to `freq`.
    pub fn integrate_complex<F: FnMut(f64) -> Complex64>(&self, freq: f64, mut f: F) -> DMatrix<Complex64> {
        let mut acc = DMatrix::<Complex64>::zeros(self.dim, self.dim);
        for (lag, a) in &self.atoms {
            let w = f(*lag);
            acc += a.map(|x| w * x);
        }
        let max_len = UNIT_SPLIT / freq.max(1.0);
        for (p, d) in &self.pieces {
            let w = p.integrate_complex(max_len, &mut f);
            acc += d.map(|x| w * x);
        }
        acc
    }

    /// Real matrix-valued integral `int dM(s) K(s)` for a matrix function `K`
    /// with `n` rows, evaluated at atoms and at quadrature nodes.
    pub fn integrate_right<F: FnMut(f64) -> DMatrix<f64>>(&self, cols: usize, mut k: F) -> DMatrix<f64> {
        let mut acc = DMatrix::<f64>::zeros(self.dim, cols);
        for (lag, a) in &self.atoms {
            acc += a * k(*lag);
        }
        let rule = GaussLegendre::standard();
        for (p, d) in &self.pieces {
            let pieces = crate::quadrature::split_count(p.start, p.end, UNIT_SPLIT);
            let h = p.width() / pieces as f64;
            for j in 0..pieces {
                let lo = p.start + h * j as f64;
                let hi = if j + 1 == pieces { p.end } else { lo + h };
                for (s, w) in rule.mapped(lo, hi) {
                    acc += d * k(s) * (w * p.value(s));
                }
            }
        }
        acc
    }

    /// Scalar measure `s -> tr(left * dM(s) * right)` (atoms and pieces keep their support).
    pub fn trace_measure(&self, left: &DMatrix<f64>, right: &DMatrix<f64>) -> Result<ScalarDelayDistribution> {
        if left.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: left.ncols() });
        }
        if right.nrows() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: right.nrows() });
        }
        let tr = |m: &DMatrix<f64>| (left * m * right).trace();
        let atoms = self.atoms.iter().map(|(lag, a)| Atom { lag: *lag, weight: tr(a) }).collect();
        let pieces = self
            .pieces
            .iter()
            .map(|(p, d)| {
                let c = tr(d);
                DensityPiece { coeffs: p.coeffs.map(|x| x * c), ..*p }
            })
            .collect();
        ScalarDelayDistribution::signed(atoms, pieces)
    }

    /// Time rescaling `t' = omega t`: lags multiply by `omega`, the measure divides by `omega`.
    pub fn rescale_time(&self, omega: f64) -> Result<Self> {
        let atoms = self.atoms.iter().map(|(s, a)| (s * omega, a / omega)).collect();
        let pieces = self
            .pieces
            .iter()
            .map(|(p, d)| (p.affine_image(0.0, omega), d / omega))
            .collect();
        Self::new(self.dim, atoms, pieces)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            atoms: self.atoms.iter().map(|(s, a)| (*s, a * factor)).collect(),
            pieces: self.pieces.iter().map(|(p, d)| (*p, d * factor)).collect(),
        }
    }

    /// Sum of two measures over the same dimension.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        let mut pieces = self.pieces.clone();
        pieces.extend(other.pieces.iter().cloned());
        Ok(Self { dim: self.dim, atoms, pieces })
    }

    /// Bound `sum ||A_k|| e^{delta s_k} + int ||D|| |rho| e^{delta s} ds` on `|int e^{-lambda s} dM|`
    /// over the half plane `Re lambda >= -delta` (Frobenius norms).
    pub fn exponential_bound(&self, delta: f64) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|(s, a)| a.norm() * (delta * s).exp()).sum();
        let dens: f64 = self
            .pieces
            .iter()
            .map(|(p, d)| d.norm() * p.integrate(UNIT_SPLIT, |s| (delta * s).exp() * p.value(s).signum()))
            .sum();
        atoms + dens
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TAU_BAR: f64 = 1.0;

    #[test]
    fn atom_evaluation() {
        let h = ScalarDelayDistribution::dirac(1.0).unwrap();
        assert!((h.stieltjes_integral(f64::cos) - 0.5403023058681398).abs() < 1e-15);
    }

    #[test]
    fn uniform_total_mass() {
        let h = ScalarDelayDistribution::uniform(1.0, 1.0).unwrap();
        assert!((h.stieltjes_integral(|_| 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_cosine_closed_form() {
        let h = ScalarDelayDistribution::uniform(TAU_BAR, 1.0).unwrap();
        let want = 1.0f64.sin() * TAU_BAR.cos();
        let got = h.stieltjes_integral(f64::cos);
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.454649).abs() < 1e-6);
    }

    #[test]
    fn moments_examples() {
        let m = ScalarDelayDistribution::dirac(2.0).unwrap().moments();
        assert_eq!((m.mass, m.mean, m.variance), (1.0, 2.0, 0.0));

        let m = ScalarDelayDistribution::uniform(1.0, 1.0).unwrap().moments();
        assert!((m.mass - 1.0).abs() < 1e-14);
        assert!((m.mean - 1.0).abs() < 1e-14);
        assert!((m.variance - 1.0 / 3.0).abs() < 1e-14);

        let two = ScalarDelayDistribution::probability(
            vec![Atom { lag: 0.0, weight: 0.5 }, Atom { lag: 2.0, weight: 0.5 }],
            vec![],
        )
        .unwrap();
        let m = two.moments();
        assert_eq!((m.mass, m.mean, m.variance), (1.0, 1.0, 1.0));
    }

    #[test]
    fn scale_family_uniform_half() {
        let h = ScalarDelayDistribution::uniform(1.0, 1.0).unwrap();
        let hm = h.scale_family(0.5).unwrap();
        let p = hm.pieces()[0];
        assert!((p.start - 0.5).abs() < 1e-15 && (p.end - 1.5).abs() < 1e-15);
        assert!((p.value(1.0) - 1.0).abs() < 1e-15);
        let m = hm.moments();
        assert!((m.variance - 1.0 / 12.0).abs() < 1e-14);
        assert!((m.mean - 1.0).abs() < 1e-14);
    }

    #[test]
    fn scale_family_identity_and_fixed_atom() {
        let h = ScalarDelayDistribution::triangular(2.0, 0.7).unwrap();
        let same = h.scale_family(1.0).unwrap();
        for (a, b) in h.pieces().iter().zip(same.pieces()) {
            assert!((a.start - b.start).abs() < 1e-15);
            for k in 0..4 {
                assert!((a.coeffs[k] - b.coeffs[k]).abs() < 1e-12);
            }
        }
        let d = ScalarDelayDistribution::dirac(1.5).unwrap().scale_family(3.0).unwrap();
        assert_eq!(d.atoms()[0].lag, 1.5);
        assert_eq!(d.moments().variance, 0.0);
    }

    #[test]
    fn scale_family_rejects_negative_support() {
        let h = ScalarDelayDistribution::uniform(1.0, 1.0).unwrap();
        assert!(matches!(h.scale_family(2.0), Err(Error::SupportViolation { .. })));
        assert!(h.scale_family(0.0).is_err());
    }

    #[test]
    fn mirror_of_asymmetric_piece() {
        let piece = DensityPiece::new(1.0, 3.0, [0.1, 0.2, -0.03, 0.01]).unwrap();
        let h = ScalarDelayDistribution::signed(vec![], vec![piece]).unwrap();
        let r = h.affine_image(2.5, -1.0).unwrap();
        for s in [1.2, 1.7, 2.9] {
            assert!((h.density_at(s) - r.density_at(5.0 - s)).abs() < 1e-13);
        }
    }

    #[test]
    fn trig_moments_examples() {
        let t = ScalarDelayDistribution::dirac(0.0).unwrap().trig_moments();
        assert_eq!((t.alpha, t.beta), (1.0, 0.0));
        let t = ScalarDelayDistribution::dirac(1.0).unwrap().trig_moments();
        assert!((t.alpha - 1.0f64.cos()).abs() < 1e-15);
        assert!((t.beta + 1.0f64.sin()).abs() < 1e-15);
        let (tau, mu) = (2.3, 0.8);
        let t = ScalarDelayDistribution::uniform(tau, mu).unwrap().trig_moments();
        let f = mu.sin() / mu;
        assert!((t.alpha - f * tau.cos()).abs() < 1e-14);
        assert!((t.beta + f * tau.sin()).abs() < 1e-14);
    }

    #[test]
    fn symmetry_examples() {
        assert!(ScalarDelayDistribution::uniform(3.0, 0.5).unwrap().is_symmetric(1e-12));
        let lopsided = ScalarDelayDistribution::probability(
            vec![Atom { lag: 0.0, weight: 1.0 / 3.0 }, Atom { lag: 3.0, weight: 2.0 / 3.0 }],
            vec![],
        )
        .unwrap();
        assert!(!lopsided.is_symmetric(1e-12));
        let pair = ScalarDelayDistribution::probability(
            vec![Atom { lag: 1.5, weight: 0.5 }, Atom { lag: 2.5, weight: 0.5 }],
            vec![],
        )
        .unwrap();
        assert!(pair.is_symmetric(1e-12));
        assert!(ScalarDelayDistribution::triangular(2.0, 1.0).unwrap().is_symmetric(1e-12));
        let gamma = ScalarDelayDistribution::truncated_gamma(3.0, 2.0, 6.0, 64).unwrap();
        assert!(!gamma.is_symmetric(1e-6));
    }

    #[test]
    fn truncated_gamma_is_a_probability() {
        let h = ScalarDelayDistribution::truncated_gamma(2.0, 1.5, 10.0, 64).unwrap();
        let m = h.moments();
        assert!((m.mass - 1.0).abs() < 1e-12);
        // untruncated mean shape/rate; the tail beyond 10 is negligible
        assert!((m.mean - 2.0 / 1.5).abs() < 1e-4);
        assert!((m.variance - 2.0 / 2.25).abs() < 1e-3);
    }

    #[test]
    fn probability_validation() {
        assert!(ScalarDelayDistribution::probability(vec![Atom { lag: 1.0, weight: 0.5 }], vec![]).is_err());
        assert!(ScalarDelayDistribution::probability(
            vec![Atom { lag: 1.0, weight: 1.5 }, Atom { lag: 2.0, weight: -0.5 }],
            vec![]
        )
        .is_err());
        assert!(ScalarDelayDistribution::dirac(-1.0).is_err());
        assert!(ScalarDelayDistribution::uniform(0.5, 1.0).is_err());
    }

    #[test]
    fn stretch_lags_keeps_mass() {
        let h = ScalarDelayDistribution::probability(
            vec![Atom { lag: 1.0, weight: 0.5 }],
            vec![DensityPiece::constant(2.0, 3.0, 0.5).unwrap()],
        )
        .unwrap();
        let s = h.stretch_lags(3.0).unwrap();
        assert_eq!(s.atoms()[0].lag, 3.0);
        assert!((s.pieces()[0].start - 6.0).abs() < 1e-15 && (s.pieces()[0].end - 9.0).abs() < 1e-15);
        assert!((s.mass() - 1.0).abs() < 1e-14);
        assert!((s.mean() - 3.0 * h.mean()).abs() < 1e-13);
    }

    fn cubic() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-2.0..2.0f64)
    }

    proptest! {
        #[test]
        fn quadrature_exact_for_degree_seven(
            c in cubic(), g in prop::array::uniform4(-2.0..2.0f64),
            a in 0.0..3.0f64, w in 0.1..4.0f64,
        ) {
            let piece = DensityPiece::new(a, a + w, c).unwrap();
            let h = ScalarDelayDistribution::signed(vec![], vec![piece]).unwrap();
            // integrand g(s) = sum g_j (s - a)^j, product has degree <= 6 in (s - a)
            let got = h.stieltjes_integral(|s| {
                let x = s - a;
                ((g[3] * x + g[2]) * x + g[1]) * x + g[0]
            });
            let mut want = 0.0;
            for (i, ci) in c.iter().enumerate() {
                for (j, gj) in g.iter().enumerate() {
                    let k = (i + j + 1) as i32;
                    want += ci * gj * w.powi(k) / k as f64;
                }
            }
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }

        #[test]
        fn scale_family_moment_laws(
            mean in 8.0..12.0f64,
            hw in 0.05..1.0f64,
            shift in -0.5..0.5f64,
            wa in 0.05..0.5f64,
            mu_idx in 0usize..4,
        ) {
            let mu = [0.1, 0.5, 2.0, 5.0][mu_idx];
            // asymmetric mixture: an atom plus a triangular bump, normalized
            let tri = ScalarDelayDistribution::triangular(mean + shift, hw).unwrap();
            let mut pieces: Vec<DensityPiece> = tri.pieces().to_vec();
            for p in &mut pieces {
                p.coeffs = p.coeffs.map(|c| c * (1.0 - wa));
            }
            let h = ScalarDelayDistribution::probability(
                vec![Atom { lag: mean - 0.7, weight: wa }], pieces).unwrap();
            let m = h.moments();
            let hm = h.scale_family(mu).unwrap();
            let mm = hm.moments();
            prop_assert!((mm.mass - 1.0).abs() <= 1e-12);
            prop_assert!((mm.mean - m.mean).abs() <= 1e-12 * m.mean.max(1.0));
            prop_assert!((mm.variance - mu * mu * m.variance).abs() <= 1e-10);
        }

        #[test]
        fn trig_moments_in_unit_disk(
            lags in prop::collection::vec(0.0..20.0f64, 1..4),
            mean in 2.0..10.0f64, hw in 0.1..2.0f64, split in 0.0..1.0f64,
        ) {
            let k = lags.len() as f64;
            let atoms = lags.iter().map(|&lag| Atom { lag, weight: split / k }).collect();
            let mut pieces = ScalarDelayDistribution::uniform(mean, hw).unwrap().pieces().to_vec();
            pieces[0].coeffs[0] *= 1.0 - split;
            let h = ScalarDelayDistribution::probability(atoms, pieces).unwrap();
            let t = h.trig_moments();
            prop_assert!(t.alpha * t.alpha + t.beta * t.beta <= 1.0 + 1e-12);
        }

        #[test]
        fn symmetric_ratio_identity(
            mean in 6.0..10.0f64, d in 0.1..1.0f64, hw in 0.1..1.0f64,
            wa in 0.0..0.6f64, mu in 0.1..5.0f64,
        ) {
            let mut pieces = ScalarDelayDistribution::triangular(mean, hw).unwrap().pieces().to_vec();
            for p in &mut pieces {
                p.coeffs = p.coeffs.map(|c| c * (1.0 - wa));
            }
            let h = ScalarDelayDistribution::probability(
                vec![Atom { lag: mean - d, weight: wa / 2.0 }, Atom { lag: mean + d, weight: wa / 2.0 }],
                pieces,
            ).unwrap();
            let t0 = ScalarDelayDistribution::dirac(h.mean()).unwrap().trig_moments();
            let t = h.scale_family(mu).unwrap().trig_moments();
            if t0.alpha.abs() > 1e-8 && t0.beta.abs() > 1e-8 {
                prop_assert!((t.alpha / t0.alpha - t.beta / t0.beta).abs() <= 1e-8);
            }
        }
    }
}
