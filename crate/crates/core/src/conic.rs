//! Standard-form cone programs and the interior-point backend that solves them.
//!
//! A [`ConicProblem`] maximizes `objective · x` subject to a list of blocks,
//! each requiring `offset + rows · x` to lie in a cone. Positive semidefinite
//! blocks are stored in the scaled vectorization produced by [`svec`], which
//! lists the upper triangle column by column (equivalently, the lower triangle
//! row by row) and scales off-diagonal entries by √2 so that
//! `svec(A) · svec(B) = trace(AB)`.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymmetricMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// `k` affine expressions constrained to zero.
    Zero(usize),
    Nonnegative(usize),
    /// A d×d symmetric matrix in svec form (length d(d+1)/2).
    Psd(usize),
}

impl Cone {
    pub fn len(&self) -> usize {
        match *self {
            Cone::Zero(k) | Cone::Nonnegative(k) => k,
            Cone::Psd(d) => d * (d + 1) / 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sparse affine map `x ↦ offset + rows · x` constrained to `cone`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBlock {
    pub cone: Cone,
    /// Sparse coefficients `(variable, value)` per output row.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub offset: Vec<f64>,
}

impl ConeBlock {
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.offset)
            .map(|(row, off)| off + row.iter().map(|&(j, v)| v * x[j]).sum::<f64>())
            .collect()
    }

    /// How far `value` (an output of [`ConeBlock::evaluate`]) is from the cone;
    /// zero when inside.
    pub fn violation(&self, value: &[f64]) -> f64 {
        match self.cone {
            Cone::Zero(_) => value.iter().map(|v| v.abs()).fold(0.0, f64::max),
            Cone::Nonnegative(_) => value.iter().map(|v| -v).fold(0.0, f64::max),
            Cone::Psd(d) => (-smat(value, d).min_eigenvalue()).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub num_vars: usize,
    /// Maximized.
    pub objective: Vec<f64>,
    pub blocks: Vec<ConeBlock>,
}

impl ConicProblem {
    pub fn new(num_vars: usize, objective: Vec<f64>) -> Self {
        assert_eq!(objective.len(), num_vars);
        ConicProblem { num_vars, objective, blocks: Vec::new() }
    }

    pub fn push(&mut self, block: ConeBlock) {
        self.blocks.push(block);
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars {
            return Err(Error::dims(self.num_vars, self.objective.len()));
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("conic objective"));
        }
        for b in &self.blocks {
            if b.rows.len() != b.cone.len() || b.offset.len() != b.cone.len() {
                return Err(Error::dims(b.cone.len(), b.rows.len()));
            }
            for row in &b.rows {
                for &(j, v) in row {
                    if j >= self.num_vars {
                        return Err(Error::dims(self.num_vars, j + 1));
                    }
                    if !v.is_finite() {
                        return Err(Error::NonFinite("conic constraint"));
                    }
                }
            }
            if b.offset.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("conic offset"));
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest cone violation over all blocks at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.blocks.iter().map(|b| b.violation(&b.evaluate(x))).fold(0.0, f64::max)
    }

    pub fn num_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.cone.len()).sum()
    }

    /// Plain-text dump for cross-checking with external solvers.
    ///
    /// ```text
    /// conic-problem 1
    /// vars <n>
    /// maximize <c_0> ... <c_{n-1}>
    /// block <zero|nonneg|psd> <size>
    /// offset <o_0> ... <o_{k-1}>
    /// coef <row> <var> <value>      (zero or more)
    /// end
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(out, "conic-problem 1").unwrap();
        writeln!(out, "vars {}", self.num_vars).unwrap();
        writeln!(out, "maximize {}", join(&self.objective)).unwrap();
        for b in &self.blocks {
            let (kind, size) = match b.cone {
                Cone::Zero(k) => ("zero", k),
                Cone::Nonnegative(k) => ("nonneg", k),
                Cone::Psd(d) => ("psd", d),
            };
            writeln!(out, "block {kind} {size}").unwrap();
            writeln!(out, "offset {}", join(&b.offset)).unwrap();
            for (r, row) in b.rows.iter().enumerate() {
                for &(j, v) in row {
                    writeln!(out, "coef {r} {j} {v}").unwrap();
                }
            }
            writeln!(out, "end").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("conic dump: {msg}"));
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
        let parse_u = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad integer `{s}`")));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("conic-problem 1") {
            return Err(bad("missing header"));
        }
        let mut problem: Option<ConicProblem> = None;
        let mut current: Option<ConeBlock> = None;
        for line in lines {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            match key {
                "vars" => {
                    let n = parse_u(rest.first().ok_or_else(|| bad("vars"))?)?;
                    problem = Some(ConicProblem::new(n, vec![0.0; n]));
                }
                "maximize" => {
                    let p = problem.as_mut().ok_or_else(|| bad("maximize before vars"))?;
                    let c = rest.iter().map(|s| parse_f(s)).collect::<Result<Vec<_>>>()?;
                    if c.len() != p.num_vars {
                        return Err(Error::dims(p.num_vars, c.len()));
                    }
                    p.objective = c;
                }
                "block" => {
                    let size = parse_u(rest.get(1).ok_or_else(|| bad("block size"))?)?;
                    let cone = match rest.first().copied() {
                        Some("zero") => Cone::Zero(size),
                        Some("nonneg") => Cone::Nonnegative(size),
                        Some("psd") => Cone::Psd(size),
                        _ => return Err(bad("unknown cone")),
                    };
                    current = Some(ConeBlock { cone, rows: vec![Vec::new(); cone.len()], offset: vec![0.0; cone.len()] });
                }
                "offset" => {
                    let b = current.as_mut().ok_or_else(|| bad("offset outside block"))?;
                    b.offset = rest.iter().map(|s| parse_f(s)).collect::<Result<Vec<_>>>()?;
                }
                "coef" => {
                    let b = current.as_mut().ok_or_else(|| bad("coef outside block"))?;
                    if rest.len() != 3 {
                        return Err(bad("coef needs row, var, value"));
                    }
                    let r = parse_u(rest[0])?;
                    let row = b.rows.get_mut(r).ok_or_else(|| bad("row out of range"))?;
                    row.push((parse_u(rest[1])?, parse_f(rest[2])?));
                }
                "end" => {
                    let b = current.take().ok_or_else(|| bad("end outside block"))?;
                    problem.as_mut().ok_or_else(|| bad("block before vars"))?.push(b);
                }
                other => return Err(bad(&format!("unknown directive `{other}`"))),
            }
        }
        let p = problem.ok_or_else(|| bad("empty"))?;
        p.validate()?;
        Ok(p)
    }
}

/// Scaled vectorization: upper triangle by columns, off-diagonals times √2.
pub fn svec(m: &SymmetricMatrix) -> Vec<f64> {
    let d = m.dim();
    let a = m.as_matrix();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for j in 0..d {
        for i in 0..=j {
            out.push(if i == j { a[(i, j)] } else { a[(i, j)] * std::f64::consts::SQRT_2 });
        }
    }
    out
}

/// Position of entry (i, j) of a symmetric matrix in [`svec`] order.
pub fn svec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], d: usize) -> SymmetricMatrix {
    assert_eq!(v.len(), d * (d + 1) / 2, "svec length does not match dimension");
    let mut m = DMatrix::zeros(d, d);
    for j in 0..d {
        for i in 0..=j {
            let x = v[svec_index(i, j)];
            let x = if i == j { x } else { x / std::f64::consts::SQRT_2 };
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    SymmetricMatrix::symmetrize(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    Failed,
}

impl SolveStatus {
    pub fn has_primal(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Present iff the status carries a primal point.
    pub primal: Option<Vec<f64>>,
    pub objective_value: f64,
    /// Wall-clock seconds spent inside the backend.
    pub solver_time: f64,
    pub iterations: u32,
    /// Largest cone violation of the returned point, measured independently
    /// of the backend.
    pub primal_violation: f64,
}

impl ConicSolution {
    pub fn failed(status: SolveStatus, solver_time: f64, iterations: u32) -> Self {
        ConicSolution {
            status,
            primal: None,
            objective_value: f64::NAN,
            solver_time,
            iterations,
            primal_violation: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: u32,
    /// Violation above which an "optimal" point is downgraded to near-optimal.
    pub accept_violation: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol_feas: 1e-8, tol_gap: 1e-8, max_iter: 200, accept_violation: 1e-7 }
    }
}

impl SolverSettings {
    /// Settings for a retry after a certificate failed validation.
    pub fn tightened(&self) -> Self {
        SolverSettings {
            tol_feas: self.tol_feas * 1e-2,
            tol_gap: self.tol_gap * 1e-2,
            max_iter: self.max_iter * 2,
            ..*self
        }
    }
}

/// Anything that can solve a [`ConicProblem`]. Implementations must be
/// deterministic for a fixed problem and settings.
pub trait ConicBackend: Send + Sync {
    fn solve(&self, problem: &ConicProblem, settings: &SolverSettings) -> ConicSolution;
}

/// Interior-point backend built on the Clarabel solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

impl ConicBackend for ClarabelBackend {
    fn solve(&self, problem: &ConicProblem, settings: &SolverSettings) -> ConicSolution {
        use clarabel::algebra::CscMatrix;
        use clarabel::solver::{
            DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
        };

        if problem.validate().is_err() {
            return ConicSolution::failed(SolveStatus::Failed, 0.0, 0);
        }
        let n = problem.num_vars;
        let m = problem.num_rows();

        // Clarabel: min ½xᵀPx + qᵀx  s.t.  Ax + s = b, s ∈ K.
        // Our blocks read s = offset + G x, hence A = −G and b = offset.
        let (mut ri, mut ci, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        let mut rhs = Vec::with_capacity(m);
        let mut cones = Vec::with_capacity(problem.blocks.len());
        let mut row0 = 0;
        for b in &problem.blocks {
            for (r, row) in b.rows.iter().enumerate() {
                for &(j, v) in row {
                    if v != 0.0 {
                        ri.push(row0 + r);
                        ci.push(j);
                        vals.push(-v);
                    }
                }
            }
            rhs.extend_from_slice(&b.offset);
            row0 += b.cone.len();
            cones.push(match b.cone {
                Cone::Zero(k) => SupportedConeT::ZeroConeT(k),
                Cone::Nonnegative(k) => SupportedConeT::NonnegativeConeT(k),
                Cone::Psd(d) => SupportedConeT::PSDTriangleConeT(d),
            });
        }
        let a = CscMatrix::new_from_triplets(m, n, ri, ci, vals);
        let p = CscMatrix::<f64>::zeros((n, n));
        let q: Vec<f64> = problem.objective.iter().map(|c| -c).collect();

        let clarabel_settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(settings.max_iter)
            .tol_feas(settings.tol_feas)
            .tol_gap_abs(settings.tol_gap)
            .tol_gap_rel(settings.tol_gap)
            .chordal_decomposition_enable(false)
            .build()
            .expect("valid solver settings");

        let start = Instant::now();
        let mut solver = match DefaultSolver::new(&p, &q, &a, &rhs, &cones, clarabel_settings) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("conic backend rejected problem: {e}");
                return ConicSolution::failed(SolveStatus::Failed, start.elapsed().as_secs_f64(), 0);
            }
        };
        solver.solve();
        let elapsed = start.elapsed().as_secs_f64();
        let sol = &solver.solution;
        log::debug!("clarabel: {:?} after {} iterations ({elapsed:.3}s)", sol.status, sol.iterations);

        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::NearOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            // A stalled run keeps its last iterate; callers validate or repair it.
            SolverStatus::MaxIterations | SolverStatus::InsufficientProgress | SolverStatus::NumericalError => {
                SolveStatus::NearOptimal
            }
            _ => SolveStatus::Failed,
        };
        let stalled = status == SolveStatus::NearOptimal && sol.status != SolverStatus::AlmostSolved;
        if !status.has_primal() || sol.x.iter().any(|v| !v.is_finite()) {
            let status = if status.has_primal() { SolveStatus::Failed } else { status };
            return ConicSolution::failed(status, elapsed, sol.iterations);
        }

        let x = sol.x.clone();
        let violation = problem.max_violation(&x);
        if stalled {
            log::debug!("keeping stalled iterate with violation {violation:e}");
        }
        let status = if status == SolveStatus::Optimal && violation > settings.accept_violation {
            SolveStatus::NearOptimal
        } else {
            status
        };
        ConicSolution {
            status,
            objective_value: problem.objective_at(&x),
            primal: Some(x),
            solver_time: elapsed,
            iterations: sol.iterations,
            primal_violation: violation,
        }
    }
}

/// Solves with the default backend.
pub fn solve(problem: &ConicProblem, settings: &SolverSettings) -> ConicSolution {
    ClarabelBackend.solve(problem, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn svec_fixtures() {
        let m = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0])).unwrap();
        let v = svec(&m);
        assert_eq!(v.len(), 3);
        assert_eq!(v[0], 1.0);
        assert_relative_eq!(v[1], 2.0 * 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(v[2], 3.0);
        assert_eq!(svec(&SymmetricMatrix::identity(3)), vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    fn sym(d: usize, entries: Vec<f64>) -> SymmetricMatrix {
        SymmetricMatrix::new(DMatrix::from_vec(d, d, entries)).unwrap()
    }

    proptest! {
        #[test]
        fn svec_preserves_trace_inner_product(
            d in 1usize..6,
            seed_a in proptest::collection::vec(-10.0f64..10.0, 36),
            seed_b in proptest::collection::vec(-10.0f64..10.0, 36),
        ) {
            let a = sym(d, seed_a[..d * d].to_vec());
            let b = sym(d, seed_b[..d * d].to_vec());
            let dot: f64 = svec(&a).iter().zip(svec(&b)).map(|(x, y)| x * y).sum();
            let trace = (a.as_matrix() * b.as_matrix()).trace();
            prop_assert!((dot - trace).abs() <= 1e-12 * (1.0 + trace.abs()));
            // round trip
            let back = smat(&svec(&a), d);
            prop_assert!((back.as_matrix() - a.as_matrix()).amax() <= 1e-14 * (1.0 + a.as_matrix().amax()));
        }
    }

    fn scalar_lp() -> ConicProblem {
        // max r s.t. 1 − r ≥ 0
        let mut p = ConicProblem::new(1, vec![1.0]);
        p.push(ConeBlock { cone: Cone::Nonnegative(1), rows: vec![vec![(0, -1.0)]], offset: vec![1.0] });
        p
    }

    #[test]
    fn scalar_lp_solves_to_one() {
        let sol = solve(&scalar_lp(), &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.primal.unwrap()[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn eigenvalue_bound_in_psd_cone() {
        // max r s.t. (1 − r)·I₂ ⪰ 0
        let mut p = ConicProblem::new(1, vec![1.0]);
        let mut rows = vec![Vec::new(); 3];
        rows[svec_index(0, 0)].push((0, -1.0));
        rows[svec_index(1, 1)].push((0, -1.0));
        p.push(ConeBlock { cone: Cone::Psd(2), rows, offset: svec(&SymmetricMatrix::identity(2)) });
        let sol = solve(&p, &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.primal.unwrap()[0], 1.0, epsilon = 1e-7);
        assert!(sol.primal_violation <= 1e-7);
    }

    /// Distinguishes the (0,1) and (0,2) svec slots, pinning the backend's
    /// triangle ordering to ours.
    #[test]
    fn svec_order_matches_backend() {
        let base = SymmetricMatrix::diag(&[1.0, 4.0, 1.0]);
        let solve_with = |i: usize, j: usize| {
            let mut p = ConicProblem::new(1, vec![1.0]);
            let mut rows = vec![Vec::new(); 6];
            rows[svec_index(i, j)].push((0, std::f64::consts::SQRT_2));
            p.push(ConeBlock { cone: Cone::Psd(3), rows, offset: svec(&base) });
            solve(&p, &SolverSettings::default()).primal.unwrap()[0]
        };
        assert_relative_eq!(solve_with(0, 1), 2.0, epsilon = 1e-6);
        assert_relative_eq!(solve_with(0, 2), 1.0, epsilon = 1e-6);
        assert_relative_eq!(solve_with(1, 2), 2.0, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_and_unbounded_are_values() {
        // x ≥ 1 and −x ≥ 0
        let mut p = ConicProblem::new(1, vec![1.0]);
        p.push(ConeBlock { cone: Cone::Nonnegative(2), rows: vec![vec![(0, 1.0)], vec![(0, -1.0)]], offset: vec![-1.0, 0.0] });
        let sol = solve(&p, &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.primal.is_none());

        let mut p = ConicProblem::new(1, vec![1.0]);
        p.push(ConeBlock { cone: Cone::Nonnegative(1), rows: vec![vec![(0, 1.0)]], offset: vec![0.0] });
        assert_eq!(solve(&p, &SolverSettings::default()).status, SolveStatus::Unbounded);
    }

    #[test]
    fn solving_is_deterministic() {
        let a = solve(&scalar_lp(), &SolverSettings::default());
        let b = solve(&scalar_lp(), &SolverSettings::default());
        assert_eq!(a.status, b.status);
        assert_eq!(a.primal, b.primal);
    }

    #[test]
    fn text_dump_roundtrip() {
        let mut p = scalar_lp();
        let mut rows = vec![Vec::new(); 3];
        rows[0].push((0, -1.0));
        rows[2].push((0, -0.1));
        p.push(ConeBlock { cone: Cone::Psd(2), rows, offset: vec![1.0, 0.0, 1.0 / 3.0] });
        let text = p.to_text();
        assert!(text.starts_with("conic-problem 1\nvars 1\nmaximize 1\n"));
        assert_eq!(ConicProblem::from_text(&text).unwrap(), p);
        assert!(ConicProblem::from_text("nonsense").is_err());
    }

    #[test]
    fn malformed_problem_fails_gracefully() {
        let mut p = scalar_lp();
        p.blocks[0].rows[0].push((5, 1.0));
        assert!(p.validate().is_err());
        assert_eq!(solve(&p, &SolverSettings::default()).status, SolveStatus::Failed);
    }
}
