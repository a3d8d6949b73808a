//! Fixed-step RK4 integration of the full delayed system by the method of steps.
//!
//! The right-hand side is `int dM(s) x(t - s) + eps N(x(t))` with
//! `M = eta + eps g_lin + eps kappa F` and `N` a built-in nonlinearity.
//! Delayed values come from the stored grid: discrete lags land on nodes or
//! midpoints (cubic Hermite using stored derivatives), distributed terms are
//! trapezoid sums over grid-aligned lags inside each density piece.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::delay_measures::MatrixDelayMeasure;
use crate::fde_core::{LinearFde, PerturbationSpec};
use crate::{Error, Result};

/// States with norm above this stop the integration.
pub const BLOWUP_NORM: f64 = 1e6;
pub const DEFAULT_WINDOW: f64 = 0.25;
pub const DECAY_BELOW: f64 = 0.6;
pub const GROWTH_ABOVE: f64 = 1.67;
pub const SUSTAINED_BAND: (f64, f64) = (0.9, 1.1);
pub const MIN_AMPLITUDE: f64 = 1e-4;
/// Ten periods of the unit-frequency oscillation.
pub const MIN_SPAN: f64 = 20.0 * std::f64::consts::PI;

const GRID_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    None,
    /// Adds `(0, -x1^2 x2)` to the second component, scaled by `eps`.
    VanDerPol,
}

impl Nonlinearity {
    fn apply(&self, x: &DVector<f64>, out: &mut DVector<f64>, eps: f64) {
        match self {
            Nonlinearity::None => {}
            Nonlinearity::VanDerPol => out[1] -= eps * x[0] * x[0] * x[1],
        }
    }
}

#[derive(Clone)]
pub enum History {
    Constant(DVector<f64>),
    Function(Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
}

impl History {
    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            History::Constant(x) => x.clone(),
            History::Function(f) => f(t),
        }
    }
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            History::Constant(x) => f.debug_tuple("Constant").field(&x.as_slice()).finish(),
            History::Function(_) => f.write_str("Function(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Decay,
    Growth,
    Sustained,
    Undetermined,
}

#[derive(Debug, Clone)]
pub struct SimProblem {
    measure: MatrixDelayMeasure,
    epsilon: f64,
    nonlinearity: Nonlinearity,
    history: History,
    t_end: f64,
    dt: f64,
}

impl SimProblem {
    pub fn new(
        linear: &LinearFde,
        pert: &PerturbationSpec,
        nonlinearity: Nonlinearity,
        history: History,
        t_end: f64,
        dt: f64,
    ) -> Result<Self> {
        let eps = pert.epsilon;
        let measure = linear
            .eta()
            .plus(&pert.g_lin.scaled(eps))?
            .plus(&pert.feedback.measure()?.scaled(eps * pert.kappa))?;
        Self::from_measure(measure, eps, nonlinearity, history, t_end, dt)
    }

    /// Direct construction from the combined linear measure.
    pub fn from_measure(
        measure: MatrixDelayMeasure,
        epsilon: f64,
        nonlinearity: Nonlinearity,
        history: History,
        t_end: f64,
        dt: f64,
    ) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be positive, got {t_end}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let n = measure.dim();
        if nonlinearity == Nonlinearity::VanDerPol && n != 2 {
            return Err(Error::DimensionMismatch { expected: 2, found: n });
        }
        let x0 = history.at(0.0);
        if x0.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: x0.len() });
        }
        if let Some(tau_min) = measure.min_positive_atom_lag() {
            if dt > tau_min / 20.0 * (1.0 + GRID_TOL) {
                return Err(Error::Config(format!("dt = {dt} exceeds tau_min / 20 = {}", tau_min / 20.0)));
            }
        }
        for &(lag, _) in measure.atoms() {
            let k = (lag / dt).round();
            if (lag - k * dt).abs() > GRID_TOL * lag.max(1.0) {
                return Err(Error::Config(format!("dt = {dt} does not divide lag {lag}")));
            }
        }
        Ok(Self { measure, epsilon, nonlinearity, history, t_end, dt })
    }

    pub fn dim(&self) -> usize {
        self.measure.dim()
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn with_span(mut self, t_end: f64, dt: f64) -> Result<Self> {
        self.t_end = t_end;
        self.dt = dt;
        Self::from_measure(self.measure, self.epsilon, self.nonlinearity, self.history, t_end, dt)
    }

    /// Lag terms `(s / dt, matrix)` for a stage at fractional offset `c` within a step.
    fn stage_terms(&self, c: f64) -> Vec<(f64, DMatrix<f64>)> {
        let dt = self.dt;
        let mut terms: Vec<(f64, DMatrix<f64>)> =
            self.measure.atoms().iter().map(|(s, a)| (s / dt, a.clone())).collect();
        for (piece, d) in self.measure.pieces() {
            // lags s with (s / dt - c) integral hit stored nodes exactly
            let (a, b) = (piece.start / dt, piece.end / dt);
            let mut pts = vec![a];
            let mut k = (a - c).ceil();
            while k + c < b {
                if k + c > a + 1e-9 && k + c < b - 1e-9 {
                    pts.push(k + c);
                }
                k += 1.0;
            }
            pts.push(b);
            for (i, &u) in pts.iter().enumerate() {
                let left = if i > 0 { u - pts[i - 1] } else { 0.0 };
                let right = if i + 1 < pts.len() { pts[i + 1] - u } else { 0.0 };
                let w = 0.5 * (left + right) * dt * piece.value(u * dt);
                terms.push((u, d * w));
            }
        }
        terms
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub classification: Classification,
    pub decay_ratio: f64,
    pub final_amplitude: f64,
    pub blowup: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub amplitude: Vec<f64>,
    pub classification: Classification,
    pub decay_ratio: f64,
    pub blowup: bool,
    pub diagnostic: Option<String>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_amplitude(&self) -> f64 {
        *self.amplitude.last().expect("trajectory holds the initial state")
    }

    /// Largest amplitude over `[t0, t1]`.
    pub fn peak(&self, t0: f64, t1: f64) -> f64 {
        self.times
            .iter()
            .zip(&self.amplitude)
            .filter(|(t, _)| **t >= t0 && **t <= t1)
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    }

    pub fn report(&self) -> ClassificationReport {
        ClassificationReport {
            classification: self.classification,
            decay_ratio: self.decay_ratio,
            final_amplitude: self.final_amplitude(),
            blowup: self.blowup,
            diagnostic: self.diagnostic.clone(),
        }
    }

    /// Header `t,x1,...,xn,R`, one row per stored node.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let n = self.states.first().map_or(0, |x| x.len());
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",x{i}").unwrap();
        }
        out.push_str(",R\n");
        for ((t, x), r) in self.times.iter().zip(&self.states).zip(&self.amplitude) {
            out.push_str(&crate::distribution_analysis::fmt_num(*t));
            for v in x.iter() {
                out.push(',');
                out.push_str(&crate::distribution_analysis::fmt_num(*v));
            }
            out.push(',');
            out.push_str(&crate::distribution_analysis::fmt_num(*r));
            out.push('\n');
        }
        out
    }
}

struct Grid<'a> {
    history: &'a History,
    xs: Vec<DVector<f64>>,
    fs: Vec<DVector<f64>>,
}

impl Grid<'_> {
    /// State at index-time `u` (time `u dt`); `stage` is the state at the current stage time `u_stage`.
    fn lookup(&self, u: f64, dt: f64, u_stage: f64, stage: &DVector<f64>) -> DVector<f64> {
        if (u - u_stage).abs() <= 1e-9 {
            return stage.clone();
        }
        if u <= 1e-9 {
            return self.history.at(u.min(0.0) * dt);
        }
        let last = self.xs.len() - 1;
        let j = u.round();
        if (u - j).abs() <= 1e-9 && (j as usize) <= last {
            return self.xs[j as usize].clone();
        }
        let j = u.floor() as usize;
        let theta = u - j as f64;
        if j < last && j + 1 < self.fs.len() {
            let t2 = theta * theta;
            let t3 = t2 * theta;
            let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
            let h10 = t3 - 2.0 * t2 + theta;
            let h01 = -2.0 * t3 + 3.0 * t2;
            let h11 = t3 - t2;
            &self.xs[j] * h00 + &self.fs[j] * (h10 * dt) + &self.xs[j + 1] * h01 + &self.fs[j + 1] * (h11 * dt)
        } else if j < last {
            &self.xs[j] * (1.0 - theta) + &self.xs[j + 1] * theta
        } else {
            // inside the step being taken
            let n = last;
            &self.xs[n] + &self.fs.get(n).unwrap_or(&DVector::zeros(stage.len())).scale((u - n as f64) * dt)
        }
    }
}

pub fn integrate(problem: &SimProblem) -> Trajectory {
    let dt = problem.dt;
    let n_dim = problem.dim();
    let full_steps = ((problem.t_end / dt) * (1.0 + 1e-12)).floor() as usize;
    let tail = problem.t_end - full_steps as f64 * dt;
    let has_tail = tail > 1e-9 * dt;

    let offsets = [0.0, 0.5, 1.0];
    let terms: Vec<Vec<(f64, DMatrix<f64>)>> = offsets.iter().map(|&c| problem.stage_terms(c)).collect();

    let x0 = problem.history.at(0.0);
    let mut grid = Grid { history: &problem.history, xs: vec![x0], fs: Vec::new() };
    let mut times = vec![0.0];
    let mut blowup = false;
    let mut diagnostic = None;

    let rhs = |grid: &Grid, terms: &[(f64, DMatrix<f64>)], u_stage: f64, x: &DVector<f64>| {
        let mut out = DVector::zeros(n_dim);
        for (lag, a) in terms {
            let xd = grid.lookup(u_stage - lag, dt, u_stage, x);
            out.gemv(1.0, a, &xd, 1.0);
        }
        problem.nonlinearity.apply(x, &mut out, problem.epsilon);
        out
    };

    let total = full_steps + usize::from(has_tail);
    for step in 0..total {
        let n = step;
        let h = if step < full_steps { dt } else { tail };
        let c = h / dt;
        let un = n as f64;
        let xn = grid.xs[n].clone();
        let (t_half, t_full) = if step < full_steps {
            (terms[1].clone(), terms[2].clone())
        } else {
            (problem.stage_terms(0.5 * c), problem.stage_terms(c))
        };
        let k1 = rhs(&grid, &terms[0], un, &xn);
        grid.fs.push(k1.clone());
        let x2 = &xn + &k1 * (0.5 * h);
        let k2 = rhs(&grid, &t_half, un + 0.5 * c, &x2);
        let x3 = &xn + &k2 * (0.5 * h);
        let k3 = rhs(&grid, &t_half, un + 0.5 * c, &x3);
        let x4 = &xn + &k3 * h;
        let k4 = rhs(&grid, &t_full, un + c, &x4);
        let next = &xn + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
        times.push(if step < full_steps { (n + 1) as f64 * dt } else { problem.t_end });
        let norm = next.norm();
        grid.xs.push(next);
        if !norm.is_finite() {
            diagnostic = Some(format!("non-finite state at t = {}", times.last().unwrap()));
            break;
        }
        if norm > BLOWUP_NORM {
            blowup = true;
            diagnostic = Some(format!("norm exceeded {BLOWUP_NORM:e} at t = {}", times.last().unwrap()));
            break;
        }
    }

    let states = grid.xs;
    let amplitude: Vec<f64> = states.iter().map(|x| x.norm()).collect();
    let mut traj = Trajectory {
        times,
        states,
        amplitude,
        classification: Classification::Undetermined,
        decay_ratio: f64::NAN,
        blowup,
        diagnostic,
    };
    if traj.amplitude.iter().any(|r| !r.is_finite()) {
        return traj;
    }
    if blowup {
        traj.classification = Classification::Growth;
        traj.decay_ratio = f64::INFINITY;
        return traj;
    }
    match window_ratio(&traj, DEFAULT_WINDOW) {
        Ok(ratio) => {
            traj.decay_ratio = ratio;
            traj.classification = classify_ratio(ratio, last_window_peak(&traj, DEFAULT_WINDOW));
        }
        Err(e) => traj.diagnostic = Some(e.to_string()),
    }
    traj
}

fn last_window_peak(traj: &Trajectory, window_fraction: f64) -> f64 {
    let t_end = *traj.times.last().unwrap_or(&0.0);
    traj.peak(t_end * (1.0 - window_fraction), t_end)
}

/// Peak amplitude over the last window divided by the peak over the window half the span earlier.
fn window_ratio(traj: &Trajectory, window_fraction: f64) -> Result<f64> {
    if !(window_fraction > 0.0 && window_fraction <= 0.5) {
        return Err(Error::Config(format!("window fraction {window_fraction} outside (0, 0.5]")));
    }
    let t0 = *traj.times.first().unwrap_or(&0.0);
    let t_end = *traj.times.last().unwrap_or(&0.0);
    let span = t_end - t0;
    if span < MIN_SPAN {
        return Err(Error::TooShort(format!("span {span} < {MIN_SPAN}")));
    }
    let w = window_fraction * span;
    let late = traj.peak(t_end - w, t_end);
    let early = traj.peak(t_end - 0.5 * span - w, t_end - 0.5 * span);
    Ok(late / early)
}

fn classify_ratio(ratio: f64, amplitude: f64) -> Classification {
    if ratio < DECAY_BELOW {
        Classification::Decay
    } else if ratio > GROWTH_ABOVE {
        Classification::Growth
    } else if ratio >= SUSTAINED_BAND.0 && ratio <= SUSTAINED_BAND.1 && amplitude > MIN_AMPLITUDE {
        Classification::Sustained
    } else {
        Classification::Undetermined
    }
}

pub fn classify(traj: &Trajectory, window_fraction: f64) -> Result<Classification> {
    if traj.blowup {
        return Ok(Classification::Growth);
    }
    if traj.amplitude.iter().any(|r| !r.is_finite()) {
        return Ok(Classification::Undetermined);
    }
    let ratio = window_ratio(traj, window_fraction)?;
    Ok(classify_ratio(ratio, last_window_peak(traj, window_fraction)))
}

/// Trajectory from given samples, classified with the default window.
pub fn from_samples(times: Vec<f64>, states: Vec<DVector<f64>>) -> Trajectory {
    let amplitude = states.iter().map(|x| x.norm()).collect();
    let mut traj = Trajectory {
        times,
        states,
        amplitude,
        classification: Classification::Undetermined,
        decay_ratio: f64::NAN,
        blowup: false,
        diagnostic: None,
    };
    match window_ratio(&traj, DEFAULT_WINDOW) {
        Ok(r) => {
            traj.decay_ratio = r;
            traj.classification = classify_ratio(r, last_window_peak(&traj, DEFAULT_WINDOW));
        }
        Err(e) => traj.diagnostic = Some(e.to_string()),
    }
    traj
}
