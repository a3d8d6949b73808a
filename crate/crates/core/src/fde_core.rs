//! Linear functional differential equations and their center eigenspace.
//!
//! The linear part is `x'(t) = int dEta(s) x(t - s)` with the lag measure of
//! [`MatrixDelayMeasure`]. Its characteristic matrix is
//! `Delta(lambda) = lambda I - int e^{-lambda s} dEta(s)`.
//!
//! For a simple pair `+-i` (after [`normalize_frequency`]) the real bases
//! are built from complex null vectors, `Delta(i) v = 0` and `u^T Delta(i) = 0`,
//! normalized so that `u^T Delta'(i) v = 1`:
//!
//! ```text
//! Phi(0) = [Re v, -Im v],   Phi(theta) = Phi(0) e^{J theta}
//! Psi(0) = [2 Re u, 2 Im u], Psi(xi)^T = e^{-J xi} Psi(0)^T
//! ```
//!
//! With this choice the bilinear pairing `(Psi, Phi)` is the 2x2 identity.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::delay_measures::{MatrixDelayMeasure, ScalarDelayDistribution};
use crate::error::{Error, Result};
use crate::quadrature::{split_count, GaussLegendre};

/// Grid step of the imaginary-axis scan.
pub const SCAN_STEP: f64 = 0.01;
/// Acceptance bound for `|Re lambda|` and `|det Delta|` at a refined root.
pub const ROOT_TOL: f64 = 1e-10;
/// Minimal gap of the second smallest singular value of `Delta(i)`.
pub const SIMPLE_GAP: f64 = 1e-6;

/// `J = [[0, -1], [1, 0]]`.
pub fn rotation_generator() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

/// `e^{J t} = [[cos t, -sin t], [sin t, cos t]]`.
pub fn rotation(t: f64) -> DMatrix<f64> {
    let (s, c) = t.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFde {
    eta: MatrixDelayMeasure,
}

impl LinearFde {
    pub fn new(eta: MatrixDelayMeasure) -> Self {
        Self { eta }
    }

    /// `x' = A x(t)`.
    pub fn ode(a: DMatrix<f64>) -> Result<Self> {
        Ok(Self::new(MatrixDelayMeasure::instantaneous(a)?))
    }

    /// `x' = sum_k A_k x(t - s_k)`.
    pub fn discrete(terms: Vec<(f64, DMatrix<f64>)>) -> Result<Self> {
        let n = terms.first().map(|(_, m)| m.nrows()).unwrap_or(0);
        Ok(Self::new(MatrixDelayMeasure::new(n, terms, vec![])?))
    }

    pub fn dim(&self) -> usize {
        self.eta.dim()
    }

    pub fn eta(&self) -> &MatrixDelayMeasure {
        &self.eta
    }

    pub fn tau_max(&self) -> f64 {
        self.eta.tau_max()
    }

    /// `Delta(lambda) = lambda I - int e^{-lambda s} dEta(s)`.
    pub fn char_matrix(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let n = self.dim();
        let laplace = self.eta.integrate_complex(lambda.norm(), |s| (-lambda * s).exp());
        DMatrix::<Complex64>::identity(n, n) * lambda - laplace
    }

    /// `Delta'(lambda) = I + int s e^{-lambda s} dEta(s)`.
    pub fn char_matrix_derivative(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let n = self.dim();
        let moment = self.eta.integrate_complex(lambda.norm(), |s| (-lambda * s).exp() * s);
        DMatrix::<Complex64>::identity(n, n) + moment
    }

    pub fn char_det(&self, lambda: Complex64) -> Complex64 {
        self.char_matrix(lambda).determinant()
    }

    /// Radius containing every characteristic root with `Re lambda >= -delta`.
    pub fn root_radius(&self, delta: f64) -> f64 {
        self.eta.exponential_bound(delta)
    }

    /// Newton iteration on `det Delta`, using `(det)'/det = tr(Delta^{-1} Delta')`.
    pub fn refine_root(&self, start: Complex64) -> Complex64 {
        let mut lambda = start;
        for _ in 0..60 {
            let d = self.char_matrix(lambda);
            let Some(inv) = d.clone().try_inverse() else {
                return lambda;
            };
            let log_deriv = (inv * self.char_matrix_derivative(lambda)).trace();
            if !log_deriv.is_finite() || log_deriv.norm() == 0.0 {
                return lambda;
            }
            let step = log_deriv.inv();
            lambda -= step;
            if step.norm() <= 1e-14 * lambda.norm().max(1.0) {
                break;
            }
        }
        lambda
    }
}

/// Feedback linearization `F`.
#[derive(Debug, Clone, PartialEq)]
pub enum Feedback {
    /// `F(theta) = C h(theta)`.
    Factored { structure: DMatrix<f64>, distribution: ScalarDelayDistribution },
    General(MatrixDelayMeasure),
}

impl Feedback {
    pub fn measure(&self) -> Result<MatrixDelayMeasure> {
        match self {
            Feedback::Factored { structure, distribution } => MatrixDelayMeasure::factored(structure, distribution),
            Feedback::General(m) => Ok(m.clone()),
        }
    }

    pub fn is_factored(&self) -> bool {
        matches!(self, Feedback::Factored { .. })
    }
}

/// Linearized perturbation `eps (G + kappa F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub g_lin: MatrixDelayMeasure,
    pub feedback: Feedback,
    pub kappa: f64,
    pub epsilon: f64,
}

/// Multiply original-time rates by `omega` to recover them from normalized time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeScale {
    pub omega: f64,
}

impl TimeScale {
    pub fn to_original_time(&self, t_normalized: f64) -> f64 {
        t_normalized / self.omega
    }

    pub fn to_normalized_time(&self, t: f64) -> f64 {
        t * self.omega
    }
}

/// Rescales time by `t' = omega t` so that the Hopf pair sits at `+-i`.
pub fn normalize_frequency(
    linear: &LinearFde,
    perturbation: &PerturbationSpec,
    omega: f64,
) -> Result<(LinearFde, PerturbationSpec, TimeScale)> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::Config(format!("frequency must be positive, got {omega}")));
    }
    let eta = linear.eta.rescale_time(omega)?;
    let g_lin = perturbation.g_lin.rescale_time(omega)?;
    let feedback = match &perturbation.feedback {
        Feedback::Factored { structure, distribution } => Feedback::Factored {
            structure: structure / omega,
            distribution: distribution.stretch_lags(omega)?,
        },
        Feedback::General(m) => Feedback::General(m.rescale_time(omega)?),
    };
    Ok((
        LinearFde::new(eta),
        PerturbationSpec { g_lin, feedback, kappa: perturbation.kappa, epsilon: perturbation.epsilon },
        TimeScale { omega },
    ))
}

/// Locates the unique positive `omega` with `det Delta(i omega) = 0` in `(0, omega_max]`.
pub fn find_hopf_pair(linear: &LinearFde, omega_max: f64) -> Result<f64> {
    let roots = imaginary_axis_roots(linear, omega_max)?;
    match roots.len() {
        0 => Err(Error::NotFound { omega_max }),
        1 => Ok(roots[0]),
        _ => Err(Error::MultiplePairs(roots)),
    }
}

/// Every positive `omega <= omega_max` with a characteristic root at `i omega`.
pub fn imaginary_axis_roots(linear: &LinearFde, omega_max: f64) -> Result<Vec<f64>> {
    if !(omega_max > 0.0 && omega_max.is_finite()) {
        return Err(Error::Config(format!("omega_max must be positive, got {omega_max}")));
    }
    let steps = (omega_max / SCAN_STEP).ceil() as usize;
    let h = omega_max / steps as f64;
    let mags: Vec<f64> = (0..=steps).map(|k| linear.char_det(c64(0.0, h * k as f64)).norm()).collect();

    let mut candidates = Vec::new();
    for k in 1..=steps {
        let left = mags[k - 1];
        let right = if k < steps { mags[k + 1] } else { f64::INFINITY };
        if mags[k] <= left && mags[k] <= right {
            candidates.push(h * k as f64);
        }
    }

    let mut roots: Vec<f64> = Vec::new();
    for w in candidates {
        let lambda = linear.refine_root(c64(0.0, w));
        let on_axis = lambda.re.abs() <= ROOT_TOL && linear.char_det(lambda).norm() <= ROOT_TOL;
        let in_range = lambda.im > 0.0 && lambda.im <= omega_max * (1.0 + 1e-12);
        if on_axis && in_range && roots.iter().all(|r| (r - lambda.im).abs() > 1e-8) {
            roots.push(lambda.im);
        }
    }
    roots.sort_by(f64::total_cmp);
    Ok(roots)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rectangle {
    pub re_lo: f64,
    pub re_hi: f64,
    pub im_lo: f64,
    pub im_hi: f64,
}

impl Rectangle {
    /// `[-delta, R] x [-R, R]` with `R` one past the root radius of the half plane `Re >= -delta`.
    pub fn enclosing(linear: &LinearFde, delta: f64) -> Self {
        let r = linear.root_radius(delta) + 1.0;
        Self { re_lo: -delta, re_hi: r, im_lo: -r, im_hi: r }
    }

    fn is_valid(&self) -> bool {
        self.re_lo < self.re_hi && self.im_lo < self.im_hi && [self.re_lo, self.re_hi, self.im_lo, self.im_hi]
            .iter()
            .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralCertificate {
    pub rectangle: Rectangle,
    pub root_count: i64,
    pub winding: f64,
    pub hopf_pair_found: bool,
    pub omega: Option<f64>,
    pub samples: usize,
}

const INITIAL_EDGE_SAMPLES: usize = 64;
const MAX_BISECTIONS: u32 = 40;
const MAX_CONTOUR_RETRIES: usize = 5;

/// Counts characteristic roots inside `rect` by the winding number of `det Delta`
/// along its boundary, and checks that exactly the Hopf pair lies in it.
pub fn certify_spectrum(linear: &LinearFde, rect: Rectangle) -> Result<SpectralCertificate> {
    if !rect.is_valid() {
        return Err(Error::Config(format!("invalid rectangle {rect:?}")));
    }
    let mut rect = rect;
    for _ in 0..=MAX_CONTOUR_RETRIES {
        match winding_number(linear, &rect) {
            Ok((winding, samples)) => {
                let count = winding.round();
                if (winding - count).abs() > 0.25 {
                    return Err(Error::ContourFailure);
                }
                let root_count = count as i64;
                let omega = if rect.im_hi > 0.0 {
                    find_hopf_pair(linear, rect.im_hi).ok()
                } else {
                    None
                };
                let pair_inside = omega.is_some_and(|w| {
                    rect.re_lo < 0.0 && rect.re_hi > 0.0 && -w > rect.im_lo && w < rect.im_hi
                });
                return Ok(SpectralCertificate {
                    rectangle: rect,
                    root_count,
                    winding,
                    hopf_pair_found: root_count == 2 && pair_inside,
                    omega,
                    samples,
                });
            }
            Err(RootOnContour) => rect.re_lo -= 1e-6,
        }
    }
    Err(Error::ContourFailure)
}

struct RootOnContour;

fn winding_number(linear: &LinearFde, rect: &Rectangle) -> std::result::Result<(f64, usize), RootOnContour> {
    let corners = [
        c64(rect.re_lo, rect.im_lo),
        c64(rect.re_hi, rect.im_lo),
        c64(rect.re_hi, rect.im_hi),
        c64(rect.re_lo, rect.im_hi),
    ];
    let scale = (rect.re_hi - rect.re_lo).max(rect.im_hi - rect.im_lo).max(1.0);
    let n = linear.dim() as i32;
    let tiny = 1e-12 * scale.powi(n);
    let eval = |z: Complex64| -> std::result::Result<Complex64, RootOnContour> {
        let d = linear.char_det(z);
        if d.norm() <= tiny || !d.is_finite() {
            Err(RootOnContour)
        } else {
            Ok(d)
        }
    };

    let mut total = 0.0;
    let mut samples = 0usize;
    for e in 0..4 {
        let (a, b) = (corners[e], corners[(e + 1) % 4]);
        let mut prev_z = a;
        let mut prev_d = eval(a)?;
        samples += 1;
        for k in 1..=INITIAL_EDGE_SAMPLES {
            let z = a + (b - a) * (k as f64 / INITIAL_EDGE_SAMPLES as f64);
            let d = eval(z)?;
            samples += 1;
            total += arg_increment(&eval, prev_z, prev_d, z, d, 0, &mut samples)?;
            prev_z = z;
            prev_d = d;
        }
    }
    Ok((total / std::f64::consts::TAU, samples))
}

/// Argument change of `det Delta` from `z0` to `z1`, bisecting until every piece turns less than `pi/2`.
fn arg_increment<E>(
    eval: &E,
    z0: Complex64,
    d0: Complex64,
    z1: Complex64,
    d1: Complex64,
    depth: u32,
    samples: &mut usize,
) -> std::result::Result<f64, RootOnContour>
where
    E: Fn(Complex64) -> std::result::Result<Complex64, RootOnContour>,
{
    let inc = (d1 / d0).arg();
    if inc.abs() < std::f64::consts::FRAC_PI_2 {
        return Ok(inc);
    }
    if depth >= MAX_BISECTIONS {
        return Err(RootOnContour);
    }
    let zm = (z0 + z1) * 0.5;
    let dm = eval(zm)?;
    *samples += 1;
    Ok(arg_increment(eval, z0, d0, zm, dm, depth + 1, samples)?
        + arg_increment(eval, zm, dm, z1, d1, depth + 1, samples)?)
}

/// Center-eigenspace data at `+-i`.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfData {
    omega: f64,
    v: DVector<Complex64>,
    u: DVector<Complex64>,
    phi0: DMatrix<f64>,
    psi0: DMatrix<f64>,
    null_residual: f64,
    adjoint_residual: f64,
    normalization_residual: f64,
    solution_residual: f64,
    gauge: String,
}

impl HopfData {
    /// Builds the real bases from null vectors with `u^T Delta'(i) v = 1`.
    fn from_null_vectors(linear: &LinearFde, v: DVector<Complex64>, u: DVector<Complex64>, gauge: String) -> Self {
        let delta = linear.char_matrix(c64(0.0, 1.0));
        let null_residual = (&delta * &v).norm() / v.norm();
        let adjoint_residual = (delta.transpose() * &u).norm() / u.norm();
        let n = v.len();
        let mut phi0 = DMatrix::zeros(n, 2);
        let mut psi0 = DMatrix::zeros(n, 2);
        for k in 0..n {
            phi0[(k, 0)] = v[k].re;
            phi0[(k, 1)] = -v[k].im;
            psi0[(k, 0)] = 2.0 * u[k].re;
            psi0[(k, 1)] = 2.0 * u[k].im;
        }
        let mut data = Self {
            omega: 1.0,
            v,
            u,
            phi0,
            psi0,
            null_residual,
            adjoint_residual,
            normalization_residual: 0.0,
            solution_residual: 0.0,
            gauge,
        };
        data.solution_residual = data.solution_residual(linear);
        data.normalization_residual = (data.bilinear_pairing(linear) - DMatrix::identity(2, 2)).norm();
        data
    }

    /// Wraps caller-chosen real bases; residuals are evaluated against `linear`.
    pub fn from_real_basis(linear: &LinearFde, phi0: DMatrix<f64>, psi0: DMatrix<f64>) -> Result<Self> {
        let n = linear.dim();
        for m in [&phi0, &psi0] {
            if m.nrows() != n || m.ncols() != 2 {
                return Err(Error::DimensionMismatch { expected: n, found: m.nrows() });
            }
        }
        let v = DVector::from_fn(n, |k, _| c64(phi0[(k, 0)], -phi0[(k, 1)]));
        let u = DVector::from_fn(n, |k, _| c64(psi0[(k, 0)], psi0[(k, 1)]) * 0.5);
        let mut data = Self::from_null_vectors(linear, v, u, "caller-supplied real basis".into());
        data.phi0 = phi0;
        data.psi0 = psi0;
        data.solution_residual = data.solution_residual(linear);
        data.normalization_residual = (data.bilinear_pairing(linear) - DMatrix::identity(2, 2)).norm();
        Ok(data)
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn phi0(&self) -> &DMatrix<f64> {
        &self.phi0
    }

    pub fn psi0(&self) -> &DMatrix<f64> {
        &self.psi0
    }

    pub fn v(&self) -> &DVector<Complex64> {
        &self.v
    }

    pub fn u(&self) -> &DVector<Complex64> {
        &self.u
    }

    pub fn gauge(&self) -> &str {
        &self.gauge
    }

    pub fn dim(&self) -> usize {
        self.phi0.nrows()
    }

    /// `||(Psi, Phi) - I||` with the pairing evaluated by quadrature.
    pub fn normalization_residual(&self) -> f64 {
        self.normalization_residual
    }

    /// `||Phi(0) J - int dEta(s) Phi(0) e^{-J s}||`.
    pub fn solution_residual_value(&self) -> f64 {
        self.solution_residual
    }

    /// Relative residuals `||Delta(i) v|| / ||v||` and `||Delta(i)^T u|| / ||u||`.
    pub fn null_residuals(&self) -> (f64, f64) {
        (self.null_residual, self.adjoint_residual)
    }

    /// `Phi(theta) = Phi(0) e^{J theta}`.
    pub fn phi(&self, theta: f64) -> DMatrix<f64> {
        &self.phi0 * rotation(theta)
    }

    fn solution_residual(&self, linear: &LinearFde) -> f64 {
        let lhs = &self.phi0 * rotation_generator();
        let rhs = linear.eta().integrate_right(2, |s| self.phi(-s));
        (lhs - rhs).norm()
    }

    /// The pairing `(Psi, Phi)` evaluated by nested quadrature of
    /// `Psi^T(0) Phi(0) - int_{-tau}^0 int_0^theta Psi^T(zeta - theta) dEta(theta) Phi(zeta) dzeta`.
    pub fn bilinear_pairing(&self, linear: &LinearFde) -> DMatrix<f64> {
        let psi_t = self.psi0.transpose();
        let mut acc = &psi_t * &self.phi0;
        // with theta = -s the inner integral runs over zeta in [-s, 0] with a plus sign
        let inner = |s: f64, a: &DMatrix<f64>| -> DMatrix<f64> {
            let core = &psi_t * a * &self.phi0;
            let mut out = DMatrix::zeros(2, 2);
            if s == 0.0 {
                return out;
            }
            let rule = GaussLegendre::standard();
            let pieces = split_count(-s, 0.0, 1.0);
            let h = s / pieces as f64;
            for j in 0..pieces {
                let lo = -s + h * j as f64;
                let hi = if j + 1 == pieces { 0.0 } else { lo + h };
                for (zeta, w) in rule.mapped(lo, hi) {
                    out += rotation(-(zeta + s)) * &core * rotation(zeta) * w;
                }
            }
            out
        };
        for (s, a) in linear.eta().atoms() {
            acc += inner(*s, a);
        }
        let rule = GaussLegendre::standard();
        for (p, d) in linear.eta().pieces() {
            let pieces = split_count(p.start, p.end, 1.0);
            let h = p.width() / pieces as f64;
            for j in 0..pieces {
                let lo = p.start + h * j as f64;
                let hi = if j + 1 == pieces { p.end } else { lo + h };
                for (s, w) in rule.mapped(lo, hi) {
                    acc += inner(s, d) * (w * p.value(s));
                }
            }
        }
        acc
    }

    /// `u^T Delta'(i) v`, equal to 1 for bases built by [`eigenbasis`].
    pub fn closed_form_pairing(&self, linear: &LinearFde) -> Complex64 {
        let dp = linear.char_matrix_derivative(c64(0.0, 1.0));
        (self.u.transpose() * dp * &self.v)[(0, 0)]
    }

    /// Re-gauges `Phi(0) -> Phi(0) M`, `Psi(0) -> Psi(0) M^{-T}` with `M = a I + b J`.
    pub fn regauge(&self, linear: &LinearFde, a: f64, b: f64) -> Result<Self> {
        let det = a * a + b * b;
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Config("gauge matrix aI + bJ must be invertible".into()));
        }
        let m = DMatrix::identity(2, 2) * a + rotation_generator() * b;
        let m_inv_t = m.clone().try_inverse().expect("aI + bJ is invertible").transpose();
        let c = c64(a, b);
        let mut out = self.clone();
        out.phi0 = &self.phi0 * m;
        out.psi0 = &self.psi0 * m_inv_t;
        out.v = self.v.map(|x| x * c);
        out.u = self.u.map(|x| x / c);
        out.gauge = format!("{} re-gauged by {a} I + {b} J", self.gauge);
        out.solution_residual = out.solution_residual(linear);
        out.normalization_residual = (out.bilinear_pairing(linear) - DMatrix::identity(2, 2)).norm();
        Ok(out)
    }
}

/// Complex null vector of `m` (right singular vector of the smallest singular value)
/// and the two smallest singular values.
fn null_vector(m: &DMatrix<Complex64>) -> (DVector<Complex64>, f64, f64) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^H");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let k = order[0];
    let second = order.get(1).map(|&i| sv[i]).unwrap_or(f64::INFINITY);
    let v = v_t.row(k).transpose().map(|x| x.conj());
    (v, sv[k], second)
}

/// Unit-phase convention: the component of largest modulus is real and positive.
fn fix_phase(v: DVector<Complex64>) -> DVector<Complex64> {
    let pivot = v.iter().copied().fold(c64(0.0, 0.0), |best, x| if x.norm() > best.norm() + 1e-14 { x } else { best });
    if pivot.norm() == 0.0 {
        return v;
    }
    let phase = pivot.conj() / pivot.norm();
    v.map(|x| x * phase)
}

/// Eigenbases `Phi(0)`, `Psi(0)` at `+-i` for a frequency-normalized system.
pub fn eigenbasis(linear: &LinearFde) -> Result<HopfData> {
    let i = c64(0.0, 1.0);
    let delta = linear.char_matrix(i);
    let scale = delta.norm().max(1.0);
    let (v, smallest, second) = null_vector(&delta);
    if smallest > 1e-8 * scale {
        return Err(Error::NotNormalized(smallest));
    }
    if second < SIMPLE_GAP {
        return Err(Error::DegenerateEigenspace(second));
    }
    let (u, _, _) = null_vector(&delta.transpose());
    let v = fix_phase(v);
    let u = fix_phase(u);
    let dp = linear.char_matrix_derivative(i);
    let pairing = (u.transpose() * dp * &v)[(0, 0)];
    if pairing.norm() < 1e-10 {
        return Err(Error::NormalizationFailure(pairing.norm()));
    }
    let u = u.map(|x| x / pairing);
    Ok(HopfData::from_null_vectors(
        linear,
        v,
        u,
        "v: largest component real positive; u: u^T Delta'(i) v = 1".into(),
    ))
}
