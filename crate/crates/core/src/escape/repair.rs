//! Recovery of a certificate from an inaccurate solver point.
//!
//! Every model constraint is affine in (r, V, W, λ, μ, ν), so the smallest
//! eigenvalue of each block is concave along a segment. Blending a slightly
//! infeasible point with a strictly feasible one therefore gives valid points
//! on an interval [θ*, 1], and θ* is found by bisection.
//!
//! The strictly feasible point is explicit. With (A + δ'I)ᵀP + P(A + δ'I) = −I,
//! V = α xᵀPx + c_V and W = β xᵀPx − w₀, every leading block is positive
//! definite by construction and the constants are then chosen so that each
//! Schur complement is at least a fixed margin.

use nalgebra::{DMatrix, DVector};

use crate::conic::SolveStatus;
use super::{validate_certificate, EscapeCertificate, GChoice, ModelKind};
use crate::error::{Error, Result};
use crate::geometry::{QuadraticFunction, Region};
use crate::linalg::{solve_lyapunov, stability_margin, SquareMatrix};

const BISECTION_STEPS: usize = 60;

/// The smallest θ ∈ [0, 1] (up to bisection accuracy) for which
/// (1 − θ)·`point` + θ·interior validates, with its residuals filled in.
pub(crate) fn repair(point: &EscapeCertificate, a: &SquareMatrix, region: &Region) -> Result<EscapeCertificate> {
    let interior = interior_point(point.model, point.g, a, region)?;
    let mut point = point.clone();
    for m in [&mut point.lambda, &mut point.mu, &mut point.nu] {
        m.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let check = |theta: f64| {
        let mut c = blend(&point, &interior, theta);
        validate_certificate(&c, a, region).map(|res| {
            c.residuals = res;
            c
        })
    };
    let mut best = check(1.0)?;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        match check(mid) {
            Ok(c) => {
                best = c;
                hi = mid;
            }
            Err(_) => lo = mid,
        }
        if hi - lo <= 1e-3 * hi {
            break;
        }
    }
    log::debug!("repaired certificate with interior weight {hi:e}");
    Ok(best)
}

fn blend(p: &EscapeCertificate, q: &EscapeCertificate, theta: f64) -> EscapeCertificate {
    let mix = |x: f64, y: f64| (1.0 - theta) * x + theta * y;
    let mix_f = |f: &QuadraticFunction, g: &QuadraticFunction| &f.scale(1.0 - theta) + &g.scale(theta);
    let mix_v = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(&a, &b)| mix(a, b)).collect();
    EscapeCertificate {
        r: mix(p.r, q.r),
        v: mix_f(&p.v, &q.v),
        w: match (&p.w, &q.w) {
            (Some(a), Some(b)) => Some(mix_f(a, b)),
            _ => None,
        },
        lambda: mix_v(&p.lambda, &q.lambda),
        mu: mix_v(&p.mu, &q.mu),
        nu: mix_v(&p.nu, &q.nu),
        residuals: Vec::new(),
        ..p.clone()
    }
}

fn sym_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = m.clone().symmetric_eigen().eigenvalues;
    (ev.min(), ev.max())
}

/// bᵀ M⁻¹ b for positive definite M.
fn inverse_form(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<f64> {
    let chol = m.clone().cholesky().ok_or_else(|| Error::Numerical("leading block not positive definite".into()))?;
    Ok(b.dot(&chol.solve(b)))
}

/// λⱼ with λⱼQ_F − Q_V ≻ 0 for every enclosure item, and the largest
/// Schur defect max_j (c_V − λⱼc_F + λⱼ²bᵀ(λⱼQ_F − Q_V)⁻¹b); the block
/// 1 + λⱼFⱼ − V is then PSD with corner margin 1 − defect.
fn enclosure_multipliers(fs: &[QuadraticFunction], q_v: &DMatrix<f64>, c_v: f64) -> Result<(Vec<f64>, f64)> {
    let (_, v_max) = sym_eigen_range(q_v);
    let mut lambda = Vec::with_capacity(fs.len());
    let mut defect = f64::NEG_INFINITY;
    for f in fs {
        let (q_min, _) = sym_eigen_range(f.q().as_matrix());
        if !(q_min > 0.0) {
            return Err(Error::Precondition("enclosure item is not a bounded ellipsoid".into()));
        }
        let l = 2.0 * v_max / q_min;
        let lead = f.q().as_matrix() * l - q_v;
        let b = f.b() * l;
        defect = defect.max(c_v - l * f.c() + inverse_form(&lead, &b)?);
        lambda.push(l);
    }
    Ok((lambda, defect))
}

/// A strictly feasible point of the model selected by `kind` and `g`. For
/// G(V) = −2γV the point has r > 0.
pub(crate) fn interior_point(kind: ModelKind, g: GChoice, a: &SquareMatrix, region: &Region) -> Result<EscapeCertificate> {
    let n = a.dim();
    let sigma = stability_margin(a)?;
    let gamma = g.gamma().unwrap_or(0.0);
    if !(gamma < sigma) {
        return Err(Error::Precondition(format!("no interior point for γ = {gamma} ≥ σ(A) = {sigma}")));
    }
    let shift = 0.5 * (gamma + sigma);
    let delta = shift - gamma;
    let shifted = SquareMatrix::new(a.as_matrix() + DMatrix::identity(n, n) * shift)?;
    let p = solve_lyapunov(&shifted)?;
    let pm = p.as_matrix();
    let (p_min, _) = sym_eigen_range(pm);
    let es = region.inner_quadratics();
    let fs = region.enclosure_quadratics();
    let norm = |f: &QuadraticFunction| f.q().as_matrix().norm().max(f64::MIN_POSITIVE);
    let is_log = gamma > 0.0;

    // Decrease-block data: α, W, ν.
    let (alpha, w, nu, w0) = match kind {
        ModelKind::In => {
            let w0 = 2.0;
            let mut beta: f64 = 1.0;
            let mut nu = Vec::with_capacity(es.len());
            for e in &es {
                if !(e.c() < 0.0) {
                    return Err(Error::Precondition("origin is not interior to every ellipsoid".into()));
                }
                let v = 2.0 * w0 / -e.c();
                beta = beta.max(2.0 * v * norm(e) / p_min).max(4.0 * v * v * e.b().norm_squared() / (w0 * p_min));
                nu.push(v);
            }
            let w = QuadraticFunction::new(pm * beta, vec![0.0; n], -w0)?;
            (beta / delta, Some(w), nu, w0)
        }
        ModelKind::Out => {
            let (k, e) = es
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.c().total_cmp(&y.1.c()))
                .ok_or_else(|| Error::Precondition("region has no ellipsoids".into()))?;
            if !(e.c() > 0.0) {
                return Err(Error::Precondition("origin is not outside any ellipsoid".into()));
            }
            let mut nu = vec![0.0; es.len()];
            // Corner of the decrease block: 1 (G = −1) or 2γ (G = −2γV, c_V = 1).
            let (target, margin) = if is_log { (4.0 * gamma, gamma) } else { (2.0, 0.5) };
            nu[k] = target / e.c();
            let alpha = (nu[k] * nu[k] * e.b().norm_squared() / margin).max(1.0);
            (alpha, None, nu, 0.0)
        }
    };
    let q_v = pm * alpha;

    let mut cert = if is_log {
        // Homogeneous in everything but the enclosure blocks: fix c_V, put
        // r = c_V/2 with μ = 0, then scale down until 1 + λF − V ⪰ 0.
        let c_v = match kind {
            ModelKind::In => w0 / (4.0 * gamma),
            ModelKind::Out => 1.0,
        };
        let (lambda, defect) = enclosure_multipliers(&fs, &q_v, c_v)?;
        let scale = if defect > 0.5 { 0.5 / defect } else { 1.0 };
        EscapeCertificate {
            model: kind,
            g,
            r: 0.5 * c_v * scale,
            v: QuadraticFunction::new(&q_v * scale, vec![0.0; n], c_v * scale)?,
            w: w.map(|w| w.scale(scale)),
            lambda: lambda.iter().map(|l| l * scale).collect(),
            mu: vec![0.0; es.len()],
            nu: nu.iter().map(|v| v * scale).collect(),
            residuals: Vec::new(),
            solver_status: SolveStatus::NearOptimal,
            solve_time: 0.0,
        }
    } else {
        // c_V from the enclosure blocks with corner margin 1, r below every
        // Schur complement of V − r − μE.
        let (lambda, defect) = enclosure_multipliers(&fs, &q_v, 0.0)?;
        let c_v = if fs.is_empty() { 0.0 } else { -defect };
        let (mu, r) = match kind {
            ModelKind::In => {
                let mut mu = Vec::with_capacity(es.len());
                let mut r = f64::INFINITY;
                for e in &es {
                    let m = alpha * p_min / (2.0 * norm(e));
                    let lead = &q_v - e.q().as_matrix() * m;
                    let b = e.b() * m;
                    r = r.min(c_v - m * e.c() - inverse_form(&lead, &b)?);
                    mu.push(m);
                }
                (mu, r - 1.0)
            }
            ModelKind::Out => (vec![0.0; es.len()], c_v - 1.0),
        };
        EscapeCertificate {
            model: kind,
            g,
            r,
            v: QuadraticFunction::new(q_v, vec![0.0; n], c_v)?,
            w,
            lambda,
            mu,
            nu,
            residuals: Vec::new(),
            solver_status: SolveStatus::NearOptimal,
            solve_time: 0.0,
        }
    };
    cert.residuals = validate_certificate(&cert, a, region)?;
    Ok(cert)
}
