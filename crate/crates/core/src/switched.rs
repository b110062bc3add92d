//! Simulation of autonomous switched affine systems ẋ = Aᵢx + bᵢ on x ∈ Rᵢ.
//!
//! Each mode carries an exit-time certificate computed once by [`prepare`].
//! During [`simulate`] the per-point bound τ gives the finite interval on which
//! the oracle searches for the next switch. After an exit the next mode is the
//! lowest-index region containing the exit state nudged by 1e−9 along the
//! current flow.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::SolverSettings;
use crate::error::{Error, Result};
use crate::escape::{certify, EscapeCertificate, GSpec};
use crate::geometry::{reduce_affine, OriginClass, Region};
use crate::linalg::{expm, stability_margin, SquareMatrix};
use crate::oracle::{adaptive_grid, escape_time, EscapeOutcome, Trajectory, DEFAULT_TOL};

pub const NUDGE: f64 = 1e-9;
pub const DEFAULT_EVENT_CAP: usize = 10_000;
/// Tolerance of the membership test for the initial state.
pub const START_TOL: f64 = 1e-9;

const WINDOW_SLACK: f64 = 1e-6;
const MIN_GRID: usize = 10_000;
const MAX_GRID: usize = 2_000_000;

/// Data cached by [`prepare`], in coordinates centred at the equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedMode {
    pub x_bar: Vec<f64>,
    pub reduced: Region,
    pub origin: OriginClass,
    /// `None` when the solve failed; the mode then searches up to the horizon.
    pub certificate: Option<EscapeCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub a: SquareMatrix,
    pub b_aff: Vec<f64>,
    pub region: Region,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prepared: Option<PreparedMode>,
}

impl Mode {
    pub fn new(a: SquareMatrix, b_aff: Vec<f64>, region: Region) -> Result<Self> {
        let n = a.dim();
        if b_aff.len() != n {
            return Err(Error::dims(n, b_aff.len()));
        }
        if region.dim() != n {
            return Err(Error::dims(n, region.dim()));
        }
        Ok(Mode { a, b_aff, region, prepared: None })
    }

    /// Aₓ + b.
    pub fn flow(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.a.mul_vec(x);
        for (vi, bi) in v.iter_mut().zip(&self.b_aff) {
            *vi += bi;
        }
        v
    }

    /// Worst-case certificate bound, +∞ when missing or unprepared.
    pub fn worst_case_bound(&self) -> f64 {
        self.prepared
            .as_ref()
            .and_then(|p| p.certificate.as_ref())
            .map_or(f64::INFINITY, |c| c.bound_worst_case())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchedSystem {
    modes: Vec<Mode>,
}

impl SwitchedSystem {
    pub fn new(modes: Vec<Mode>) -> Result<Self> {
        let Some(first) = modes.first() else {
            return Err(Error::Config("switched system needs at least one mode".into()));
        };
        let n = first.a.dim();
        if let Some(m) = modes.iter().find(|m| m.a.dim() != n) {
            return Err(Error::dims(n, m.a.dim()));
        }
        Ok(SwitchedSystem { modes })
    }

    pub fn dim(&self) -> usize {
        self.modes[0].a.dim()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn is_prepared(&self) -> bool {
        self.modes.iter().all(|m| m.prepared.is_some())
    }

    /// Lowest-index mode whose region contains x.
    pub fn mode_of(&self, x: &[f64], tol: f64) -> Option<usize> {
        self.modes.iter().position(|m| m.region.contains(x, tol).unwrap_or(false))
    }
}

/// Reduces every mode to its equilibrium and caches a certificate.
pub fn prepare(sys: &SwitchedSystem, g: GSpec, settings: &SolverSettings) -> Result<SwitchedSystem> {
    let modes = sys
        .modes
        .par_iter()
        .enumerate()
        .map(|(i, m)| prepare_mode(i, m, g, settings))
        .collect::<Result<Vec<_>>>()?;
    Ok(SwitchedSystem { modes })
}

fn prepare_mode(i: usize, m: &Mode, g: GSpec, settings: &SolverSettings) -> Result<Mode> {
    let sigma = stability_margin(&m.a)?;
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("mode {i}: A is not strictly stable (σ(A) = {sigma})")));
    }
    let (a, reduced, x_bar) = reduce_affine(&m.a, &m.b_aff, &m.region)?;
    let origin = reduced.classify_origin();
    if origin == OriginClass::Boundary {
        return Err(Error::Config(format!("mode {i}: equilibrium lies on the region boundary")));
    }
    let g = g.resolve(&a)?;
    let certificate = match certify(&a, &reduced, g, settings)? {
        Ok(cert) => Some(cert),
        Err(failure) => {
            log::warn!("mode {i}: no certificate ({failure}); falling back to horizon-limited search");
            None
        }
    };
    Ok(Mode { prepared: Some(PreparedMode { x_bar, reduced, origin, certificate }), ..m.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub mode: usize,
    pub t_entry: f64,
    pub x_entry: Vec<f64>,
    pub t_exit: f64,
    pub x_exit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimStatus {
    /// The final mode ended exactly at the horizon after an exit.
    Completed,
    HorizonReached,
    /// The current mode is certified never to exit.
    Converged,
    EventCapReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub segments: Vec<Segment>,
    pub events: Vec<SwitchEvent>,
    pub status: SimStatus,
}

/// Trajectory of the switched system from x₀ up to `horizon`, with at most
/// `event_cap` switches.
pub fn simulate(sys: &SwitchedSystem, x0: &[f64], horizon: f64, event_cap: usize) -> Result<SimTrace> {
    if !sys.is_prepared() {
        return Err(Error::Precondition("switched system must be prepared before simulation".into()));
    }
    if x0.len() != sys.dim() {
        return Err(Error::dims(sys.dim(), x0.len()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Precondition(format!("horizon must be positive and finite (got {horizon})")));
    }
    let Some(mut mode) = sys.mode_of(x0, START_TOL) else {
        return Err(Error::Coverage { state: x0.to_vec(), time: 0.0 });
    };
    let mut t = 0.0;
    let mut x = x0.to_vec();
    let mut segments = Vec::new();
    let mut events = Vec::new();

    loop {
        let m = &sys.modes[mode];
        let prep = m.prepared.as_ref().expect("prepared");
        let z: Vec<f64> = x.iter().zip(&prep.x_bar).map(|(a, b)| a - b).collect();
        let tr = Trajectory::new(m.a.clone(), z)?;
        let remaining = horizon - t;
        let tau = match &prep.certificate {
            Some(c) => c.bound_at(tr.x0())?,
            None => f64::INFINITY,
        };
        // Entry states sit up to one bisection tolerance inside the region and
        // certificates hold to solver accuracy, hence the slack.
        let window = (tau * (1.0 + 1e-6) + WINDOW_SLACK).min(remaining);
        let bounded = window < remaining;
        let outcome = if window > 0.0 {
            let grid = adaptive_grid(&m.a, window, MIN_GRID, MAX_GRID);
            escape_time(&tr, &prep.reduced, window, grid, DEFAULT_TOL)?
        } else {
            EscapeOutcome::NeverExits { certified_forever: false }
        };
        match outcome {
            EscapeOutcome::ExitsAt { t: s, .. } => {
                let z_exit = tr.state_at(s)?;
                let x_exit: Vec<f64> = z_exit.iter().zip(&prep.x_bar).map(|(a, b)| a + b).collect();
                segments.push(Segment { mode, t_entry: t, x_entry: x.clone(), t_exit: t + s, x_exit: x_exit.clone() });
                t += s;
                let next = next_mode(sys, mode, &x_exit).ok_or_else(|| Error::Coverage { state: x_exit.clone(), time: t })?;
                events.push(SwitchEvent { t, from: mode, to: next, state: x_exit.clone() });
                x = x_exit;
                mode = next;
                if events.len() >= event_cap {
                    return Ok(SimTrace { segments, events, status: SimStatus::EventCapReached });
                }
                if t >= horizon {
                    return Ok(SimTrace { segments, events, status: SimStatus::Completed });
                }
            }
            EscapeOutcome::NeverExits { .. } => {
                if bounded && prep.origin == OriginClass::Exterior {
                    return Err(Error::Invariant(format!(
                        "mode {mode}: no exit within the certified interval {tau} although the equilibrium lies outside the region"
                    )));
                }
                let x_end = state_in_mode(m, prep, &x, remaining)?;
                segments.push(Segment { mode, t_entry: t, x_entry: x, t_exit: horizon, x_exit: x_end });
                let status = if bounded { SimStatus::Converged } else { SimStatus::HorizonReached };
                return Ok(SimTrace { segments, events, status });
            }
        }
    }
}

fn state_in_mode(m: &Mode, prep: &PreparedMode, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    let z: Vec<f64> = x.iter().zip(&prep.x_bar).map(|(a, b)| a - b).collect();
    let z = expm(&m.a, dt)?.mul_vec(&z);
    Ok(z.iter().zip(&prep.x_bar).map(|(a, b)| a + b).collect())
}

/// Membership at the exit state moved by [`NUDGE`] along the unit flow of
/// the mode being left.
fn next_mode(sys: &SwitchedSystem, from: usize, x_exit: &[f64]) -> Option<usize> {
    let f = DVector::from_vec(sys.modes[from].flow(x_exit));
    let norm = f.norm();
    let probe: Vec<f64> = if norm > 0.0 {
        x_exit.iter().zip(f.iter()).map(|(x, v)| x + NUDGE * v / norm).collect()
    } else {
        x_exit.to_vec()
    };
    sys.mode_of(&probe, 0.0)
}

/// Whole-system reference simulation: exact propagation in steps of `step`,
/// with a membership check after every step and bisection of the crossing.
/// Independent of the certificates; used to cross-check [`simulate`].
pub fn dense_simulate(sys: &SwitchedSystem, x0: &[f64], horizon: f64, step: f64, event_cap: usize) -> Result<Vec<SwitchEvent>> {
    if !(step > 0.0 && horizon > 0.0) {
        return Err(Error::Precondition("step and horizon must be positive".into()));
    }
    let n = sys.dim();
    let mut reduced = Vec::with_capacity(sys.modes.len());
    for m in &sys.modes {
        let (_, _, x_bar) = reduce_affine(&m.a, &m.b_aff, &m.region)?;
        reduced.push((x_bar, expm(&m.a, step)?));
    }
    let advance = |mode: usize, x: &[f64], dt: Option<f64>| -> Result<Vec<f64>> {
        let (x_bar, prop) = &reduced[mode];
        let z: Vec<f64> = (0..n).map(|i| x[i] - x_bar[i]).collect();
        let z = match dt {
            None => prop.mul_vec(&z),
            Some(dt) => expm(&sys.modes[mode].a, dt)?.mul_vec(&z),
        };
        Ok((0..n).map(|i| z[i] + x_bar[i]).collect())
    };
    let Some(mut mode) = sys.mode_of(x0, START_TOL) else {
        return Err(Error::Coverage { state: x0.to_vec(), time: 0.0 });
    };
    let mut events = Vec::new();
    let mut x = x0.to_vec();
    let mut t = 0.0;
    while t < horizon && events.len() < event_cap {
        let region = &sys.modes[mode].region;
        let full = advance(mode, &x, None)?;
        if region.max_constraint(&full).0 <= 0.0 {
            x = full;
            t += step;
            continue;
        }
        let (mut lo, mut hi) = (0.0, step);
        while hi - lo > DEFAULT_TOL {
            let mid = 0.5 * (lo + hi);
            if region.max_constraint(&advance(mode, &x, Some(mid))?).0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let x_exit = advance(mode, &x, Some(hi))?;
        t += hi;
        let next = next_mode(sys, mode, &x_exit).ok_or_else(|| Error::Coverage { state: x_exit.clone(), time: t })?;
        events.push(SwitchEvent { t, from: mode, to: next, state: x_exit.clone() });
        x = x_exit;
        mode = next;
    }
    Ok(events)
}

/// CSV with columns `t, x1, …, xn, mode`, `samples_per_segment` points per
/// segment (segment endpoints included).
pub fn write_trace_csv<W: Write>(sys: &SwitchedSystem, trace: &SimTrace, samples_per_segment: usize, out: W) -> Result<()> {
    let n = sys.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("mode".into());
    w.write_record(&header)?;
    let k = samples_per_segment.max(2);
    for seg in &trace.segments {
        let m = &sys.modes[seg.mode];
        let prep = m.prepared.as_ref().ok_or_else(|| Error::Precondition("unprepared system".into()))?;
        let len = seg.t_exit - seg.t_entry;
        for j in 0..k {
            let dt = len * j as f64 / (k - 1) as f64;
            let x = if j == k - 1 { seg.x_exit.clone() } else { state_in_mode(m, prep, &seg.x_entry, dt)? };
            let mut rec = vec![(seg.t_entry + dt).to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            rec.push(seg.mode.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV with columns `k, t_k, from_mode, to_mode`.
pub fn write_events_csv<W: Write>(trace: &SimTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "t_k", "from_mode", "to_mode"])?;
    for (k, e) in trace.events.iter().enumerate() {
        w.write_record([k.to_string(), e.t.to_string(), e.from.to_string(), e.to.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Small systems with known switching behaviour.
pub mod fixtures {
    use super::*;
    use crate::geometry::{box_region, EnclosureMode};

    fn mode(a: SquareMatrix, b: Vec<f64>, lo: &[f64], hi: &[f64]) -> Mode {
        let region = box_region(lo, hi, EnclosureMode::Ball).expect("valid box");
        Mode::new(a, b, region).expect("consistent dimensions")
    }

    /// ẋ = −x + 2 on [0, 1] and ẋ = −x on [1, 3]: both flows push into
    /// x = 1, so trajectories chatter there.
    pub fn chattering_1d() -> SwitchedSystem {
        SwitchedSystem::new(vec![
            mode(SquareMatrix::diag(&[-1.0]), vec![2.0], &[0.0], &[1.0]),
            mode(SquareMatrix::diag(&[-1.0]), vec![0.0], &[1.0], &[3.0]),
        ])
        .expect("fixture")
    }

    /// ẋ = −x + 3 on [0, 2], then ẋ = −x + 3 on [2, 5] where x → 3.
    pub fn single_switch_1d() -> SwitchedSystem {
        SwitchedSystem::new(vec![
            mode(SquareMatrix::diag(&[-1.0]), vec![3.0], &[0.0], &[2.0]),
            mode(SquareMatrix::diag(&[-1.0]), vec![3.0], &[2.0], &[5.0]),
        ])
        .expect("fixture")
    }

    /// A spiral above x₂ = 0 aiming at (0, −1), a node below converging to
    /// (0, −1.5).
    pub fn spiral_to_node_2d() -> SwitchedSystem {
        let spiral = SquareMatrix::from_rows(&[&[-0.5, 1.0], &[-1.0, -0.5]]);
        let b_up = spiral.mul_vec(&[0.0, 1.0]);
        let node = SquareMatrix::diag(&[-1.0, -2.0]);
        SwitchedSystem::new(vec![
            mode(spiral, b_up, &[-6.0, 0.0], &[6.0, 6.0]),
            mode(node, vec![0.0, -3.0], &[-6.0, -6.0], &[6.0, 0.0]),
        ])
        .expect("fixture")
    }

    /// Two spirals whose equilibria sit in each other's half plane, so the
    /// trajectory keeps crossing x₂ = 0.
    pub fn spiral_pair_2d() -> SwitchedSystem {
        let spiral = SquareMatrix::from_rows(&[&[-0.5, 1.0], &[-1.0, -0.5]]);
        let b_up = spiral.mul_vec(&[0.0, 1.0]);
        let b_down = spiral.mul_vec(&[0.0, -1.0]);
        SwitchedSystem::new(vec![
            mode(spiral.clone(), b_up, &[-6.0, 0.0], &[6.0, 6.0]),
            mode(spiral, b_down, &[-6.0, -6.0], &[6.0, 0.0]),
        ])
        .expect("fixture")
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::escape::ModelKind;

    fn prepared(sys: &SwitchedSystem) -> SwitchedSystem {
        prepare(sys, GSpec::Log(None), &SolverSettings::default()).unwrap()
    }

    #[test]
    fn prepare_caches_certificates() {
        let sys = prepared(&chattering_1d());
        for m in sys.modes() {
            let p = m.prepared.as_ref().unwrap();
            assert_eq!(p.origin, OriginClass::Exterior);
            let cert = p.certificate.as_ref().unwrap();
            assert_eq!(cert.model, ModelKind::Out);
            assert!(cert.r > 0.0);
        }
        assert_eq!(sys.modes()[0].prepared.as_ref().unwrap().x_bar, vec![2.0]);
    }

    #[test]
    fn marginal_mode_is_a_config_error() {
        let rot = SquareMatrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let region = crate::geometry::box_region(&[1.0, 1.0], &[2.0, 2.0], crate::geometry::EnclosureMode::Ball).unwrap();
        let sys = SwitchedSystem::new(vec![Mode::new(rot, vec![0.0, 0.0], region).unwrap()]).unwrap();
        assert!(matches!(prepare(&sys, GSpec::One, &SolverSettings::default()), Err(Error::Config(_))));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = Mode::new(SquareMatrix::diag(&[-1.0]), vec![0.0], chattering_1d().modes()[0].region.clone()).unwrap();
        let b = spiral_pair_2d().modes()[0].clone();
        assert!(SwitchedSystem::new(vec![a, b]).is_err());
        assert!(SwitchedSystem::new(Vec::new()).is_err());
    }

    #[test]
    fn single_switch_then_convergence() {
        let sys = prepared(&single_switch_1d());
        let trace = simulate(&sys, &[0.5], 10.0, DEFAULT_EVENT_CAP).unwrap();
        assert_eq!(trace.status, SimStatus::Converged);
        assert_eq!(trace.events.len(), 1);
        // 3 − 2.5e^{−t} = 2.
        assert!((trace.events[0].t - 2.5f64.ln()).abs() < 1e-8);
        assert_eq!(trace.events[0].to, 1);
        assert_eq!(trace.segments.last().unwrap().t_exit, 10.0);
    }

    #[test]
    fn chattering_hits_the_event_cap() {
        let sys = prepared(&chattering_1d());
        let trace = simulate(&sys, &[0.5], 10.0, 3).unwrap();
        assert_eq!(trace.status, SimStatus::EventCapReached);
        assert_eq!(trace.events.len(), 3);
        assert!((trace.events[0].t - 1.5f64.ln()).abs() < 1e-8);
        assert_eq!((trace.events[0].from, trace.events[0].to), (0, 1));
        assert_eq!((trace.events[1].from, trace.events[1].to), (1, 0));
    }

    #[test]
    fn unprepared_system_is_rejected() {
        assert!(matches!(simulate(&chattering_1d(), &[0.5], 1.0, 10), Err(Error::Precondition(_))));
    }

    #[test]
    fn start_outside_every_mode_is_a_coverage_error() {
        let sys = prepared(&single_switch_1d());
        assert!(matches!(simulate(&sys, &[7.0], 1.0, 10), Err(Error::Coverage { .. })));
    }

    #[test]
    fn spiral_to_node_matches_dense_simulation() {
        let sys = prepared(&spiral_to_node_2d());
        let x0 = [2.0, 2.0];
        let trace = simulate(&sys, &x0, 10.0, DEFAULT_EVENT_CAP).unwrap();
        let dense = dense_simulate(&sys, &x0, 10.0, 1e-4, DEFAULT_EVENT_CAP).unwrap();
        assert_eq!(trace.events.len(), dense.len());
        assert_eq!(trace.status, SimStatus::Converged);
        for (a, b) in trace.events.iter().zip(&dense) {
            assert!((a.t - b.t).abs() < 1e-6, "{} vs {}", a.t, b.t);
        }
        for pair in trace.segments.windows(2) {
            assert_eq!(pair[0].x_exit, pair[1].x_entry);
            assert_eq!(pair[0].t_exit, pair[1].t_entry);
        }
    }

    #[test]
    fn csv_exports() {
        let sys = prepared(&single_switch_1d());
        let trace = simulate(&sys, &[0.5], 3.0, DEFAULT_EVENT_CAP).unwrap();
        let mut buf = Vec::new();
        write_events_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("k,t_k,from_mode,to_mode"));
        assert!(text.lines().nth(1).unwrap().ends_with(",0,1"));
        let mut buf = Vec::new();
        write_trace_csv(&sys, &trace, 4, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("t,x1,mode"));
        assert_eq!(text.lines().count(), 1 + 4 * trace.segments.len());
    }
}
