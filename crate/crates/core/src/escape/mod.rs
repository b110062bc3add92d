//! Escape-time certificates for ẋ = Ax leaving a region R.
//!
//! Two semidefinite models are assembled, depending on where the origin sits:
//!
//! * **EscapeIn** (origin in the interior of R) searches for convex quadratics
//!   V and W with
//!   - `V ≤ 1 + λᵢFᵢ` for every enclosure item (R ⊆ Sub₁(V)),
//!   - `V ≥ r + μᵢEᵢ` for every ellipsoid (Sub_r(V) ⊆ R),
//!   - `𝓛_A W ≤ 0` and `W ≥ νᵢEᵢ` (Sub₀(W) is an invariant set inside R),
//!     where `𝓛_A W ≤ 0` is posed as `AᵀQ_W + Q_W A ⪯ 0` with `b_W = 0`,
//!   - `𝓛_A V ≤ G(V) − W` (V decreases at the prescribed rate outside Sub₀(W)).
//! * **EscapeOut** (origin outside R) searches for a convex quadratic V with
//!   - `V ≤ 1 + λᵢFᵢ`,
//!   - `V ≥ r − Σ μᵢEᵢ` (Sub_r(V) misses R),
//!   - `𝓛_A V ≤ G(V) + Σ νᵢEᵢ` (V decreases at the prescribed rate on R).
//!
//! Both maximize r. Each `V₁ ≥ V₂` is the PSD condition on the block matrix of
//! V₁ − V₂. Any feasible point bounds the exit time from x₀ ∈ R by
//! `max(V(x₀) − r, 0)` when G(V) = −1, and by `log⁺(V(x₀)/r) / (2γ)` when
//! G(V) = −2γV and r > 0.
//!
//! In EscapeIn the convexity of V and W is implied by `V ≥ r + μᵢEᵢ` and
//! `W ≥ νᵢEᵢ` (their leading blocks dominate μᵢ·Q_E ⪰ 0), so only EscapeOut
//! carries an explicit `Q_V ⪰ 0` block. Extracted certificates are checked for
//! convexity either way.

mod baseline;
pub(crate) mod lmi;
mod repair;

pub use baseline::{baseline_bound, BaselineBound};

use serde::{Deserialize, Serialize};

use crate::conic::{svec_index, ClarabelBackend, ConicBackend, ConicProblem, ConicSolution, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::geometry::{OriginClass, PsdBlock, QuadraticFunction, Region};
use crate::linalg::{stability_margin, SquareMatrix, SymmetricMatrix};
use lmi::{nonnegative_vars, zero_vars, BlockExpr};

/// Minimum eigenvalue accepted on every constraint block of a certificate.
pub const RESIDUAL_TOL: f64 = 1e-6;
/// Minimum eigenvalue accepted on Q_V and Q_W.
pub const CONVEXITY_TOL: f64 = 1e-7;
/// Most negative multiplier accepted.
pub const MULTIPLIER_TOL: f64 = 1e-9;
/// Solver multipliers in [−CLAMP_TOL, 0) are set to 0 on extraction; the
/// residual check then runs on the clamped values.
pub const CLAMP_TOL: f64 = 1e-6;

/// The decrease template G(V) of the models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GChoice {
    /// G(V) = −1: bounds linear in V(x₀).
    MinusOne,
    /// G(V) = −2γV: logarithmic bounds.
    MinusTwoGammaV { gamma: f64 },
}

impl GChoice {
    pub fn log(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Precondition(format!("γ must be positive (got {gamma})")));
        }
        Ok(GChoice::MinusTwoGammaV { gamma })
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            GChoice::MinusOne => None,
            GChoice::MinusTwoGammaV { gamma } => Some(gamma),
        }
    }

    fn expr(&self, v: &BlockExpr) -> BlockExpr {
        match *self {
            GChoice::MinusOne => BlockExpr::constant(v.dim(), -1.0),
            GChoice::MinusTwoGammaV { gamma } => v.clone().scale(-2.0 * gamma),
        }
    }

    fn apply(&self, v: &QuadraticFunction) -> QuadraticFunction {
        match *self {
            GChoice::MinusOne => QuadraticFunction::constant(v.dim(), -1.0),
            GChoice::MinusTwoGammaV { gamma } => v.scale(-2.0 * gamma),
        }
    }
}

/// G selection before γ is known: `Log(None)` means γ = σ(A)/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GSpec {
    One,
    Log(Option<f64>),
}

impl GSpec {
    pub fn resolve(&self, a: &SquareMatrix) -> Result<GChoice> {
        match *self {
            GSpec::One => Ok(GChoice::MinusOne),
            GSpec::Log(Some(gamma)) => GChoice::log(gamma),
            GSpec::Log(None) => GChoice::log(default_gamma(a)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Origin in the interior of the region.
    In,
    /// Origin outside the region.
    Out,
}

/// Positions of the decision variables in the conic problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub n: usize,
    pub v: usize,
    pub w: Option<usize>,
    pub lambda: usize,
    pub mu: usize,
    pub nu: usize,
    pub r: usize,
    pub m_count: usize,
    pub n_count: usize,
    pub total: usize,
}

impl VarLayout {
    fn new(kind: ModelKind, n: usize, m_count: usize, n_count: usize) -> Self {
        let sym = (n + 1) * (n + 2) / 2;
        let v = 0;
        let (w, next) = match kind {
            ModelKind::In => (Some(sym), 2 * sym),
            ModelKind::Out => (None, sym),
        };
        let lambda = next;
        let mu = lambda + m_count;
        let nu = mu + n_count;
        let r = nu + n_count;
        VarLayout { n, v, w, lambda, mu, nu, r, m_count, n_count, total: r + 1 }
    }

    fn quadratic_at(&self, offset: usize, x: &[f64]) -> QuadraticFunction {
        let d = self.n + 1;
        let mut m = nalgebra::DMatrix::zeros(d, d);
        for j in 0..d {
            for i in 0..=j {
                let val = x[offset + svec_index(i, j)];
                m[(i, j)] = val;
                m[(j, i)] = val;
            }
        }
        QuadraticFunction::from_psd_block(&PsdBlock(SymmetricMatrix::symmetrize(m)))
    }
}

/// One assembled model instance.
#[derive(Debug, Clone)]
pub struct EscapeProblem {
    pub kind: ModelKind,
    pub g: GChoice,
    pub a: SquareMatrix,
    pub region: Region,
    pub layout: VarLayout,
    pub conic: ConicProblem,
}

fn check_dims(a: &SquareMatrix, region: &Region) -> Result<()> {
    if a.dim() != region.dim() {
        return Err(Error::dims(a.dim(), region.dim()));
    }
    Ok(())
}

/// Assembles EscapeIn; requires the origin in the interior of `region`.
pub fn build_escape_in(a: &SquareMatrix, region: &Region, g: GChoice) -> Result<EscapeProblem> {
    check_dims(a, region)?;
    if region.classify_origin() != OriginClass::Interior {
        return Err(Error::Precondition("EscapeIn needs the origin in the interior of the region".into()));
    }
    let n = a.dim();
    let d = n + 1;
    let fs = region.enclosure_quadratics();
    let es = region.inner_quadratics();
    let layout = VarLayout::new(ModelKind::In, n, fs.len(), es.len());
    let w_off = layout.w.expect("EscapeIn has W");

    let v = BlockExpr::symmetric_variable(d, layout.v);
    let w = BlockExpr::symmetric_variable(d, w_off);
    let mut objective = vec![0.0; layout.total];
    objective[layout.r] = 1.0;
    let mut p = ConicProblem::new(layout.total, objective);

    for (i, f) in fs.iter().enumerate() {
        let e = BlockExpr::constant(d, 1.0)
            .plus(BlockExpr::scaled_quadratic(layout.lambda + i, f))
            .minus(v.clone());
        p.push(e.into_psd_block());
    }
    for (i, ei) in es.iter().enumerate() {
        let e = v
            .clone()
            .minus(BlockExpr::scalar(d, layout.r))
            .minus(BlockExpr::scaled_quadratic(layout.mu + i, ei));
        p.push(e.into_psd_block());
    }
    // −𝓛_A W ⪰⪰ 0 has an identically zero corner, so it is posed as
    // −(AᵀQ_W + Q_W A) ⪰ 0 together with b_W = 0 (equivalent for nonsingular A).
    p.push(w.clone().lie(a.as_matrix()).scale(-1.0).leading(n).into_psd_block());
    p.push(zero_vars(&(0..n).map(|i| w_off + svec_index(i, n)).collect::<Vec<_>>()));
    for (i, ei) in es.iter().enumerate() {
        p.push(w.clone().minus(BlockExpr::scaled_quadratic(layout.nu + i, ei)).into_psd_block());
    }
    let decrease = g.expr(&v).minus(w).minus(v.clone().lie(a.as_matrix()));
    p.push(decrease.into_psd_block());
    p.push(nonnegative_vars(layout.lambda, fs.len() + 2 * es.len()));

    Ok(EscapeProblem { kind: ModelKind::In, g, a: a.clone(), region: region.clone(), layout, conic: p })
}

/// Assembles EscapeOut; requires the origin outside `region`.
pub fn build_escape_out(a: &SquareMatrix, region: &Region, g: GChoice) -> Result<EscapeProblem> {
    check_dims(a, region)?;
    if region.classify_origin() != OriginClass::Exterior {
        return Err(Error::Precondition("EscapeOut needs the origin outside the region".into()));
    }
    let n = a.dim();
    let d = n + 1;
    let fs = region.enclosure_quadratics();
    let es = region.inner_quadratics();
    let layout = VarLayout::new(ModelKind::Out, n, fs.len(), es.len());

    let v = BlockExpr::symmetric_variable(d, layout.v);
    let mut objective = vec![0.0; layout.total];
    objective[layout.r] = 1.0;
    let mut p = ConicProblem::new(layout.total, objective);

    for (i, f) in fs.iter().enumerate() {
        let e = BlockExpr::constant(d, 1.0)
            .plus(BlockExpr::scaled_quadratic(layout.lambda + i, f))
            .minus(v.clone());
        p.push(e.into_psd_block());
    }
    let mut outside = v.clone().minus(BlockExpr::scalar(d, layout.r));
    for (i, ei) in es.iter().enumerate() {
        outside = outside.plus(BlockExpr::scaled_quadratic(layout.mu + i, ei));
    }
    p.push(outside.into_psd_block());
    let mut decrease = g.expr(&v).minus(v.clone().lie(a.as_matrix()));
    for (i, ei) in es.iter().enumerate() {
        decrease = decrease.plus(BlockExpr::scaled_quadratic(layout.nu + i, ei));
    }
    p.push(decrease.into_psd_block());
    p.push(v.leading(n).into_psd_block());
    p.push(nonnegative_vars(layout.lambda, fs.len() + 2 * es.len()));

    Ok(EscapeProblem { kind: ModelKind::Out, g, a: a.clone(), region: region.clone(), layout, conic: p })
}

/// Builds whichever model matches the position of the origin.
pub fn build_escape(a: &SquareMatrix, region: &Region, g: GChoice) -> Result<EscapeProblem> {
    match region.classify_origin() {
        OriginClass::Interior => build_escape_in(a, region, g),
        OriginClass::Exterior => build_escape_out(a, region, g),
        OriginClass::Boundary => Err(Error::Precondition("origin lies on the region boundary".into())),
    }
}

/// Smallest eigenvalue of one model constraint, recomputed from the
/// extracted quadratics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub constraint: String,
    pub min_eigenvalue: f64,
}

/// A feasible point of EscapeIn or EscapeOut.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeCertificate {
    pub model: ModelKind,
    pub g: GChoice,
    pub r: f64,
    pub v: QuadraticFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<QuadraticFunction>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub residuals: Vec<Residual>,
    pub solver_status: SolveStatus,
    pub solve_time: f64,
}

/// Recomputes every model constraint of `cert` from its quadratic functions
/// (not from the conic lowering) and returns the block eigenvalue residuals.
/// Fails if a multiplier is negative, V or W is not convex, or a block has
/// minimum eigenvalue below −[`RESIDUAL_TOL`].
pub fn validate_certificate(cert: &EscapeCertificate, a: &SquareMatrix, region: &Region) -> Result<Vec<Residual>> {
    let fs = region.enclosure_quadratics();
    let es = region.inner_quadratics();
    let n = a.dim();
    let invalid = |msg: String| Err(Error::InvalidCertificate(msg));

    if cert.v.dim() != n || cert.lambda.len() != fs.len() || cert.mu.len() != es.len() || cert.nu.len() != es.len() {
        return invalid("certificate shape does not match the problem".into());
    }
    for (name, values) in [("λ", &cert.lambda), ("μ", &cert.mu), ("ν", &cert.nu)] {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, &v)| !(v >= -MULTIPLIER_TOL)) {
            return invalid(format!("multiplier {name}[{i}] = {v} is negative"));
        }
    }
    if !cert.r.is_finite() {
        return invalid("r is not finite".into());
    }

    let mut residuals = Vec::new();
    let mut push = |label: String, f: QuadraticFunction| {
        residuals.push(Residual { constraint: label, min_eigenvalue: f.to_psd_block().min_eigenvalue() });
    };
    let v = &cert.v;
    let lie_v = v.lie_derivative(a)?;
    let g_v = cert.g.apply(v);

    for (i, f) in fs.iter().enumerate() {
        push(format!("V <= 1 + lambda[{i}] F[{i}]"), &f.scale(cert.lambda[i]).add_constant(1.0) - v);
    }
    match cert.model {
        ModelKind::In => {
            let Some(w) = cert.w.as_ref() else {
                return invalid("EscapeIn certificate without W".into());
            };
            for (i, e) in es.iter().enumerate() {
                push(format!("V >= r + mu[{i}] E[{i}]"), &v.add_constant(-cert.r) - &e.scale(cert.mu[i]));
            }
            push("L_A W <= 0".into(), w.lie_derivative(a)?.scale(-1.0));
            for (i, e) in es.iter().enumerate() {
                push(format!("W >= nu[{i}] E[{i}]"), w - &e.scale(cert.nu[i]));
            }
            push("L_A V <= G(V) - W".into(), &(&g_v - w) - &lie_v);
            let conv_w = w.q().min_eigenvalue();
            if !(conv_w >= -CONVEXITY_TOL) {
                return invalid(format!("W is not convex (min eigenvalue {conv_w:e})"));
            }
        }
        ModelKind::Out => {
            let mut outside = v.add_constant(-cert.r);
            let mut decrease = &g_v - &lie_v;
            for (i, e) in es.iter().enumerate() {
                outside = &outside + &e.scale(cert.mu[i]);
                decrease = &decrease + &e.scale(cert.nu[i]);
            }
            push("V >= r - sum mu E".into(), outside);
            push("L_A V <= G(V) + sum nu E".into(), decrease);
        }
    }
    let conv_v = v.q().min_eigenvalue();
    if !(conv_v >= -CONVEXITY_TOL) {
        return invalid(format!("V is not convex (min eigenvalue {conv_v:e})"));
    }
    if let Some(worst) = residuals.iter().find(|r| !(r.min_eigenvalue >= -RESIDUAL_TOL)) {
        return invalid(format!("constraint `{}` violated (min eigenvalue {:e})", worst.constraint, worst.min_eigenvalue));
    }
    Ok(residuals)
}

fn clamp(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| if (-CLAMP_TOL..0.0).contains(&v) { 0.0 } else { v }).collect()
}

/// Reads the decision variables out of a solver point and validates them.
pub fn extract_certificate(problem: &EscapeProblem, sol: &ConicSolution) -> Result<EscapeCertificate> {
    let mut cert = read_certificate(problem, sol)?;
    cert.residuals = validate_certificate(&cert, &problem.a, &problem.region)?;
    Ok(cert)
}

/// The decision variables of a solver point, unvalidated.
fn read_certificate(problem: &EscapeProblem, sol: &ConicSolution) -> Result<EscapeCertificate> {
    if !sol.status.has_primal() {
        return Err(Error::Precondition(format!("no primal point to extract (status {:?})", sol.status)));
    }
    let x = sol.primal.as_ref().expect("primal present for optimal status");
    let lay = &problem.layout;
    if x.len() != lay.total {
        return Err(Error::dims(lay.total, x.len()));
    }
    let cert = EscapeCertificate {
        model: problem.kind,
        g: problem.g,
        r: x[lay.r],
        v: lay.quadratic_at(lay.v, x),
        w: lay.w.map(|off| lay.quadratic_at(off, x)),
        lambda: clamp(&x[lay.lambda..lay.lambda + lay.m_count]),
        mu: clamp(&x[lay.mu..lay.mu + lay.n_count]),
        nu: clamp(&x[lay.nu..lay.nu + lay.n_count]),
        residuals: Vec::new(),
        solver_status: sol.status,
        solve_time: sol.solver_time,
    };
    Ok(cert)
}

/// Outcome of [`certify`] when no certificate could be produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveFailure {
    pub status: SolveStatus,
    pub reason: String,
    pub solve_time: f64,
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "solver status {:?}: {}", self.status, self.reason)
    }
}

/// Solves an assembled model. An accurate point that fails validation is
/// re-solved once with tightened tolerances; a point that still fails, or
/// comes from a stalled run, is repaired by blending it with an explicit
/// strictly feasible point. Repaired certificates carry status NearOptimal.
pub fn solve_problem(
    problem: &EscapeProblem,
    settings: &SolverSettings,
    backend: &dyn ConicBackend,
) -> std::result::Result<EscapeCertificate, SolveFailure> {
    let mut total_time = 0.0;
    let mut candidate = None;
    let mut reason = String::new();
    let mut status = SolveStatus::Failed;
    for (attempt, s) in [*settings, settings.tightened()].iter().enumerate() {
        let sol = backend.solve(&problem.conic, s);
        total_time += sol.solver_time;
        status = sol.status;
        if !sol.status.has_primal() {
            reason = "backend returned no primal point".into();
            break;
        }
        match extract_certificate(problem, &sol) {
            Ok(mut cert) => {
                cert.solve_time = total_time;
                return Ok(cert);
            }
            Err(e) => {
                log::debug!("attempt {attempt}: certificate rejected: {e}");
                reason = e.to_string();
                candidate = read_certificate(problem, &sol).ok();
            }
        }
        if sol.status != SolveStatus::Optimal {
            break;
        }
    }
    if let Some(point) = candidate {
        match repair::repair(&point, &problem.a, &problem.region) {
            Ok(mut cert) => {
                cert.solver_status = SolveStatus::NearOptimal;
                cert.solve_time = total_time;
                return Ok(cert);
            }
            Err(e) => {
                log::debug!("repair failed: {e}");
                reason = format!("{reason}; repair failed: {e}");
                status = SolveStatus::Failed;
            }
        }
    }
    let status = if status.has_primal() { SolveStatus::Failed } else { status };
    Err(SolveFailure { status, reason, solve_time: total_time })
}

/// Builds the model matching the origin position and solves it with the
/// default backend.
pub fn certify(
    a: &SquareMatrix,
    region: &Region,
    g: GChoice,
    settings: &SolverSettings,
) -> Result<std::result::Result<EscapeCertificate, SolveFailure>> {
    let problem = build_escape(a, region, g)?;
    Ok(solve_problem(&problem, settings, &ClarabelBackend))
}

/// log(max(α, 1)).
pub fn log_plus(alpha: f64) -> f64 {
    alpha.max(1.0).ln()
}

impl EscapeCertificate {
    /// Bound on the exit time valid for every x₀ ∈ R; +∞ when the log model
    /// has r ≤ 0.
    pub fn bound_worst_case(&self) -> f64 {
        match self.g {
            GChoice::MinusOne => (1.0 - self.r).max(0.0),
            GChoice::MinusTwoGammaV { gamma } => {
                if self.r > 0.0 {
                    log_plus(1.0 / self.r) / (2.0 * gamma)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Bound on the exit time from x₀ (x₀ ∈ R is the caller's responsibility).
    pub fn bound_at(&self, x0: &[f64]) -> Result<f64> {
        let vx = self.v.evaluate(x0)?;
        Ok(self.bound_from_value(vx))
    }

    pub fn bound_from_value(&self, vx: f64) -> f64 {
        match self.g {
            GChoice::MinusOne => (vx - self.r).max(0.0),
            GChoice::MinusTwoGammaV { gamma } => {
                if self.r > 0.0 {
                    log_plus(vx / self.r) / (2.0 * gamma)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// γ = σ(A)/2.
pub fn default_gamma(a: &SquareMatrix) -> Result<f64> {
    let sigma = stability_margin(a)?;
    if !(sigma > 0.0) {
        return Err(Error::Precondition(format!("matrix is not strictly stable (σ(A) = {sigma})")));
    }
    Ok(sigma / 2.0)
}

#[cfg(test)]
mod tests;
