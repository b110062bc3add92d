//! Reference bound from the fixed Lyapunov function V_b(x) = xᵀPx with
//! AᵀP + PA = −I.
//!
//! Along trajectories V̇_b = −‖x‖² ≤ −V_b / λ_max(P). Let c be a level such
//! that Sub_c(V_b) ⊆ R (origin inside) or V_b ≥ c on R (origin outside), and
//! let C bound V_b on the enclosure. While the trajectory has V_b ≥ c it loses
//! at least c/λ_max(P) per unit time, so it reaches the level c, and with it
//! either the invariant set inside R or the exit, within
//! (C − c)·λ_max(P)/c. Both levels come from small S-procedure programs.

use std::time::Instant;

use nalgebra::DVector;

use super::lmi::{nonnegative_vars, BlockExpr};
use crate::conic::{solve, ConicProblem, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::geometry::{EnclosureItem, OriginClass, QuadraticFunction, Region};
use crate::linalg::{solve_lyapunov, SquareMatrix, SymmetricMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineBound {
    pub p: SymmetricMatrix,
    pub lambda_max: f64,
    /// Target level of V_b.
    pub c: f64,
    /// Upper bound of V_b over the enclosure.
    pub sup_enclosure: f64,
    pub origin: OriginClass,
    /// Bound valid for every start point in the region.
    pub worst_case: f64,
    /// Wall-clock seconds, Lyapunov solve included.
    pub solve_time: f64,
}

impl BaselineBound {
    /// V_b(x₀) = x₀ᵀPx₀.
    pub fn value(&self, x0: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x0);
        x.dot(&(self.p.as_matrix() * &x))
    }

    /// Bound on the exit time from x₀.
    pub fn at(&self, x0: &[f64]) -> f64 {
        self.bound_from_value(self.value(x0))
    }

    fn bound_from_value(&self, v: f64) -> f64 {
        if !(self.c > 0.0) {
            return f64::INFINITY;
        }
        (v - self.c).max(0.0) * self.lambda_max / self.c
    }
}

/// Largest s with Sub_s(V) ⊆ Eᵢ for every i: max s s.t. V − s − μᵢEᵢ ⩾⩾ 0.
fn inner_level(v: &QuadraticFunction, es: &[QuadraticFunction], settings: &SolverSettings) -> Result<f64> {
    let d = v.dim() + 1;
    let mut objective = vec![0.0; 1 + es.len()];
    objective[0] = 1.0;
    let mut p = ConicProblem::new(objective.len(), objective);
    let vb = BlockExpr::zero(d).plus_constant_block(v);
    for (i, e) in es.iter().enumerate() {
        let block = vb
            .clone()
            .minus(BlockExpr::scalar(d, 0))
            .minus(BlockExpr::scaled_quadratic(1 + i, e));
        p.push(block.into_psd_block());
    }
    p.push(nonnegative_vars(1, es.len()));
    solve_level(&p, settings, "inner level")
}

/// Lower bound of V on ⋂ Eᵢ: max s s.t. V − s + Σ μᵢEᵢ ⩾⩾ 0.
fn outer_level(v: &QuadraticFunction, es: &[QuadraticFunction], settings: &SolverSettings) -> Result<f64> {
    let d = v.dim() + 1;
    let mut objective = vec![0.0; 1 + es.len()];
    objective[0] = 1.0;
    let mut p = ConicProblem::new(objective.len(), objective);
    let mut block = BlockExpr::zero(d).plus_constant_block(v).minus(BlockExpr::scalar(d, 0));
    for (i, e) in es.iter().enumerate() {
        block = block.plus(BlockExpr::scaled_quadratic(1 + i, e));
    }
    p.push(block.into_psd_block());
    p.push(nonnegative_vars(1, es.len()));
    solve_level(&p, settings, "outer level")
}

/// Upper bound of V on the enclosure: V(p) at points, and for ellipsoids
/// min s s.t. s + λⱼFⱼ − V ⩾⩾ 0.
fn enclosure_sup(v: &QuadraticFunction, items: &[EnclosureItem], settings: &SolverSettings) -> Result<f64> {
    let mut sup = f64::NEG_INFINITY;
    let mut ellipsoids = Vec::new();
    for item in items {
        match item {
            EnclosureItem::Point(p) => sup = sup.max(v.evaluate(p)?),
            EnclosureItem::Ellipsoid(e) => ellipsoids.push(e.quadratic().clone()),
        }
    }
    if ellipsoids.is_empty() {
        return Ok(sup);
    }
    let d = v.dim() + 1;
    let mut objective = vec![0.0; 1 + ellipsoids.len()];
    objective[0] = -1.0;
    let mut p = ConicProblem::new(objective.len(), objective);
    for (j, f) in ellipsoids.iter().enumerate() {
        let block = BlockExpr::scalar(d, 0)
            .plus(BlockExpr::scaled_quadratic(1 + j, f))
            .minus(BlockExpr::zero(d).plus_constant_block(v));
        p.push(block.into_psd_block());
    }
    p.push(nonnegative_vars(1, ellipsoids.len()));
    let sol = solve(&p, settings);
    match (sol.status, sol.primal) {
        (s, Some(x)) if s.has_primal() => Ok(sup.max(x[0])),
        // No finite level: V_b is unbounded above on some enclosure item.
        (SolveStatus::Infeasible, _) => Ok(f64::INFINITY),
        (s, _) => Err(Error::Solver(format!("enclosure bound: status {s:?}"))),
    }
}

fn solve_level(p: &ConicProblem, settings: &SolverSettings, what: &str) -> Result<f64> {
    let sol = solve(p, settings);
    match sol.primal {
        Some(x) if sol.status.has_primal() => Ok(x[0]),
        _ => Err(Error::Solver(format!("{what}: status {:?}", sol.status))),
    }
}

impl BlockExpr {
    fn plus_constant_block(self, v: &QuadraticFunction) -> Self {
        self.plus_constant(v.to_psd_block().as_matrix())
    }
}

/// Computes the fixed-Lyapunov-function bound for ẋ = Ax on `region`.
pub fn baseline_bound(a: &SquareMatrix, region: &Region, settings: &SolverSettings) -> Result<BaselineBound> {
    if a.dim() != region.dim() {
        return Err(Error::dims(a.dim(), region.dim()));
    }
    let origin = region.classify_origin();
    if origin == OriginClass::Boundary {
        return Err(Error::Precondition("origin lies on the region boundary".into()));
    }
    let start = Instant::now();
    let settings = &settings.tightened();
    let p = solve_lyapunov(a)?;
    let lambda_max = p.max_eigenvalue();
    // Levels are computed for V_b / λ_max(P), whose block entries are O(1).
    let n = a.dim();
    let normalized = QuadraticFunction::new(p.as_matrix() / lambda_max, vec![0.0; n], 0.0)?;
    let es = region.inner_quadratics();
    let c_norm = match origin {
        OriginClass::Interior => inner_level(&normalized, &es, settings)?,
        _ => outer_level(&normalized, &es, settings)?,
    };
    let sup_norm = enclosure_sup(&normalized, region.enclosure(), settings)?;
    let c = c_norm * lambda_max;
    let sup_enclosure = sup_norm * lambda_max;
    if !(c > 0.0) {
        log::warn!("baseline target level is not positive (c = {c:e}); bound is vacuous");
    }
    let mut out = BaselineBound {
        p,
        lambda_max,
        c,
        sup_enclosure,
        origin,
        worst_case: f64::INFINITY,
        solve_time: 0.0,
    };
    out.worst_case = out.bound_from_value(sup_enclosure);
    out.solve_time = start.elapsed().as_secs_f64();
    Ok(out)
}
