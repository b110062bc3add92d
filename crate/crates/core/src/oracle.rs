//! Ground-truth exit times. Trajectories of ẋ = Ax are evaluated in closed
//! form as e^{At}x₀; the first exit from R is located by scanning
//! φ(t) = maxᵢ Eᵢ(ξ(t)) on a uniform grid and bisecting the first bracket
//! where φ turns positive.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Region;
use crate::linalg::{expm, SquareMatrix};

pub const DEFAULT_GRID: usize = 100_000;
pub const DEFAULT_TOL: f64 = 1e-10;
/// Start points may sit this far outside the region (boundary round-off).
pub const START_TOL: f64 = 1e-9;

/// Grid points between exact re-evaluations of e^{At}x₀ during a scan.
const RESYNC_EVERY: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    a: SquareMatrix,
    x0: Vec<f64>,
}

impl Trajectory {
    pub fn new(a: SquareMatrix, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != a.dim() {
            return Err(Error::dims(a.dim(), x0.len()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        Ok(Trajectory { a, x0 })
    }

    pub fn a(&self) -> &SquareMatrix {
        &self.a
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// ξ(t, x₀) = e^{At}x₀.
    pub fn state_at(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::Precondition(format!("time must be nonnegative (got {t})")));
        }
        Ok(expm(&self.a, t)?.mul_vec(&self.x0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum EscapeOutcome {
    /// First exit at time `t` through the ellipsoid `crossing_index`.
    ExitsAt { t: f64, crossing_index: usize },
    /// No exit within the searched horizon. `certified_forever` is set when a
    /// certificate guarantees the trajectory never leaves.
    NeverExits { certified_forever: bool },
}

impl EscapeOutcome {
    pub fn exit_time(&self) -> Option<f64> {
        match *self {
            EscapeOutcome::ExitsAt { t, .. } => Some(t),
            EscapeOutcome::NeverExits { .. } => None,
        }
    }

    /// Exit time with the convention that trajectories staying in R forever
    /// have exit time 0.
    pub fn t_star(&self) -> f64 {
        self.exit_time().unwrap_or(0.0)
    }
}

/// Grid size that keeps the step below `0.5/‖A‖₁`, never smaller than `min_grid`
/// and never above `cap`.
pub fn adaptive_grid(a: &SquareMatrix, horizon: f64, min_grid: usize, cap: usize) -> usize {
    let wanted = (horizon * a.norm_one() / 0.5).ceil();
    if !wanted.is_finite() {
        return cap.max(min_grid);
    }
    (wanted as usize).clamp(min_grid, cap.max(min_grid))
}

/// First exit of `tr` from `region` within [0, horizon].
///
/// A grazing contact, where φ comes within `tol` of zero at a grid-local
/// maximum without turning positive, counts as an exit at that grid point.
/// Exits at t = 0 are not reported.
pub fn escape_time(tr: &Trajectory, region: &Region, horizon: f64, grid: usize, tol: f64) -> Result<EscapeOutcome> {
    if region.dim() != tr.a.dim() {
        return Err(Error::dims(tr.a.dim(), region.dim()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Precondition(format!("horizon must be positive and finite (got {horizon})")));
    }
    if grid < 2 {
        return Err(Error::Precondition("grid needs at least two points".into()));
    }
    if !region.contains(&tr.x0, START_TOL)? {
        return Err(Error::Precondition("initial state lies outside the region".into()));
    }

    let step = horizon / (grid - 1) as f64;
    let propagator = expm(&tr.a, step)?;
    let prop = propagator.as_matrix();
    let x0 = DVector::from_column_slice(&tr.x0);
    let mut x = x0.clone();
    let mut phi_prev = region.max_constraint(x.as_slice()).0;
    let mut grazing: Option<(usize, f64)> = None;
    // Contacts only count once φ has been clearly negative, so a start on the
    // boundary is not reported as a graze.
    let mut armed = phi_prev < -tol;

    for k in 1..grid {
        let t = k as f64 * step;
        x = if k % RESYNC_EVERY == 0 { expm(&tr.a, t)?.as_matrix() * &x0 } else { prop * &x };
        let (phi, idx) = region.max_constraint(x.as_slice());
        if phi > 0.0 {
            let t_prev = (k - 1) as f64 * step;
            let (t_exit, index) = bisect_exit(tr, region, t_prev, t, tol)?;
            let _ = idx;
            return Ok(EscapeOutcome::ExitsAt { t: t_exit, crossing_index: index });
        }
        if let Some((gk, gphi)) = grazing.take() {
            // The previous point was a candidate; it is a local maximum if φ fell.
            if phi <= gphi {
                let t_g = gk as f64 * step;
                let state = tr.state_at(t_g)?;
                return Ok(EscapeOutcome::ExitsAt { t: t_g, crossing_index: region.max_constraint(&state).1 });
            }
        }
        if armed && phi > -tol && phi >= phi_prev {
            grazing = Some((k, phi));
        }
        armed |= phi < -tol;
        phi_prev = phi;
    }
    Ok(EscapeOutcome::NeverExits { certified_forever: false })
}

/// Shrinks [lo, hi] with φ(lo) ≤ 0 < φ(hi) to width ≤ tol; returns hi.
fn bisect_exit(tr: &Trajectory, region: &Region, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, usize)> {
    let base = tr.state_at(lo)?;
    let start = lo;
    let phi_at = |t: f64| -> Result<(f64, usize)> {
        let x = expm(&tr.a, t - start)?.mul_vec(&base);
        Ok(region.max_constraint(&x))
    };
    let mut idx = phi_at(hi)?.1;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (phi, i) = phi_at(mid)?;
        if phi > 0.0 {
            hi = mid;
            idx = i;
        } else {
            lo = mid;
        }
    }
    Ok((hi, idx))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub holds: bool,
    pub outcome: EscapeOutcome,
    pub bound: f64,
}

/// Checks `t* ≤ bound` by searching for the first exit on [0, horizon],
/// `horizon ≥ bound`. A trajectory that does not exit within the horizon is
/// taken to stay in R forever (t* = 0), so the horizon must be long enough
/// for that reading to be meaningful.
pub fn verify_bound(tr: &Trajectory, region: &Region, bound: f64, horizon: f64, grid: usize) -> Result<BoundCheck> {
    if !(bound.is_finite() && bound >= 0.0) {
        return Err(Error::Precondition(format!("bound must be finite and nonnegative (got {bound})")));
    }
    let horizon = horizon.max(bound * (1.0 + 1e-6) + 1e-6);
    let outcome = escape_time(tr, region, horizon, grid, DEFAULT_TOL)?;
    let holds = match outcome {
        EscapeOutcome::NeverExits { .. } => true,
        EscapeOutcome::ExitsAt { t, .. } => t <= bound + 1e-6,
    };
    Ok(BoundCheck { holds, outcome, bound })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub phi: f64,
}

/// `samples` evenly spaced states on [0, horizon] with φ(t).
pub fn sample_trace(tr: &Trajectory, region: &Region, horizon: f64, samples: usize) -> Result<Vec<TracePoint>> {
    let samples = samples.max(2);
    let step = horizon / (samples - 1) as f64;
    let prop = expm(&tr.a, step)?;
    let mut x = tr.x0.clone();
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        if k > 0 {
            x = prop.mul_vec(&x);
        }
        out.push(TracePoint { t: k as f64 * step, phi: region.max_constraint(&x).0, x: x.clone() });
    }
    Ok(out)
}

/// CSV with columns `t, x1, …, xn, phi`.
pub fn write_trace_csv<W: Write>(points: &[TracePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = points.first() {
        let mut header = vec!["t".to_string()];
        header.extend((1..=first.x.len()).map(|i| format!("x{i}")));
        header.push("phi".into());
        w.write_record(&header)?;
    }
    for p in points {
        let mut rec = vec![p.t.to_string()];
        rec.extend(p.x.iter().map(|v| v.to_string()));
        rec.push(p.phi.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
