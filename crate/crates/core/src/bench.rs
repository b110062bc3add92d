//! Random stable matrices, the two box fixtures and the bound comparison
//! experiment.
//!
//! Matrices come from a ChaCha8 stream seeded with `seed_from_u64`; uniform
//! draws use `Rng::random::<f64>()` and Gaussian draws the ziggurat sampler of
//! `rand_distr::StandardNormal`. All matrices of a run are drawn up front, so
//! the stream does not depend on the number of worker threads.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::escape::{baseline_bound, build_escape_in, build_escape_out, solve_problem, GChoice, ModelKind};
use crate::conic::ClarabelBackend;
use crate::geometry::{box_region, EnclosureMode, Region};
use crate::linalg::{condition_number, stability_margin, SquareMatrix};
use crate::oracle::{adaptive_grid, escape_time, EscapeOutcome, Trajectory, DEFAULT_GRID, DEFAULT_TOL};

/// Draws with cond(U) above this are discarded.
const MAX_COND_U: f64 = 1e10;
const MAX_ORACLE_GRID: usize = 2_000_000;
/// Allowed shortfall of a bound below t*.
pub const SOUNDNESS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Roots of λ² + √α λ + β/4 as a real 2×2 block: diagonal for real roots,
/// [[a, b], [−b, a]] for a ± bi. `None` when a root has nonnegative real part.
pub fn stable_block(alpha: f64, beta: f64) -> Option<[[f64; 2]; 2]> {
    let s = alpha.sqrt();
    let disc = alpha - beta;
    let block = if disc >= 0.0 {
        let root = disc.sqrt();
        [[(-s + root) / 2.0, 0.0], [0.0, (-s - root) / 2.0]]
    } else {
        let (a, b) = (-s / 2.0, (-disc).sqrt() / 2.0);
        [[a, b], [-b, a]]
    };
    let largest_re = block[0][0].max(block[1][1]);
    (largest_re < 0.0).then_some(block)
}

/// Block-diagonal D and A = U D U⁻¹ with standard-normal U.
pub fn gen_stable_with_blocks(n: usize, rng: &mut impl Rng) -> Result<(SquareMatrix, SquareMatrix)> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::Config(format!("matrix dimension must be even and at least 2 (got {n})")));
    }
    let mut d = DMatrix::zeros(n, n);
    for k in 0..n / 2 {
        let block = loop {
            let alpha: f64 = rng.random();
            let beta: f64 = rng.random();
            if let Some(b) = stable_block(alpha, beta) {
                break b;
            }
            log::debug!("rejected marginal block (α = {alpha}, β = {beta})");
        };
        for i in 0..2 {
            for j in 0..2 {
                d[(2 * k + i, 2 * k + j)] = block[i][j];
            }
        }
    }
    let mut draws = 0;
    loop {
        draws += 1;
        let u = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u_sq = SquareMatrix::new(u.clone())?;
        if condition_number(&u_sq) > MAX_COND_U {
            log::debug!("redrawing ill-conditioned U (draw {draws})");
            continue;
        }
        let Some(u_inv) = u.clone().try_inverse() else {
            log::debug!("redrawing singular U (draw {draws})");
            continue;
        };
        if draws > 1 {
            log::info!("U accepted after {draws} draws");
        }
        let a = SquareMatrix::new(&u * &d * u_inv)?;
        return Ok((a, SquareMatrix::new(d)?));
    }
}

pub fn gen_stable(n: usize, rng: &mut impl Rng) -> Result<SquareMatrix> {
    Ok(gen_stable_with_blocks(n, rng)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Case {
    /// Origin inside the box.
    I,
    /// Origin outside the box.
    II,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::I => "I",
            Case::II => "II",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub case: Case,
    pub region: Region,
    pub x0: Vec<f64>,
}

/// The two boxes and start points, truncated to the first `n` coordinates for
/// n < 10 and padded with the generic coordinate beyond 10.
pub fn fixtures(n: usize, mode: EnclosureMode) -> Result<[Fixture; 2]> {
    if n == 0 {
        return Err(Error::Config("fixture dimension must be positive".into()));
    }
    let coord = |first: &[(f64, f64, f64)], rest: (f64, f64, f64)| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let all: Vec<(f64, f64, f64)> = (0..n).map(|i| *first.get(i).unwrap_or(&rest)).collect();
        (all.iter().map(|c| c.0).collect(), all.iter().map(|c| c.1).collect(), all.iter().map(|c| c.2).collect())
    };
    let (lo1, hi1, x1) = coord(&[(-2.5, 1.5, -1.5)], (-2.0, 2.0, -1.0));
    let (lo2, hi2, x2) = coord(&[(-6.0, -2.0, -5.0), (-6.0, -2.0, -5.0)], (-2.0, 2.0, -1.0));
    Ok([
        Fixture { case: Case::I, region: box_region(&lo1, &hi1, mode)?, x0: x1 },
        Fixture { case: Case::II, region: box_region(&lo2, &hi2, mode)?, x0: x2 },
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    InOne,
    InLog,
    OutOne,
    OutLog,
    Baseline,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::InOne, Method::InLog, Method::OutOne, Method::OutLog, Method::Baseline];
    pub const SDP: [Method; 4] = [Method::InOne, Method::InLog, Method::OutOne, Method::OutLog];

    pub fn name(self) -> &'static str {
        match self {
            Method::InOne => "in_one",
            Method::InLog => "in_log",
            Method::OutOne => "out_one",
            Method::OutLog => "out_log",
            Method::Baseline => "baseline",
        }
    }

    pub fn model(self) -> Option<ModelKind> {
        match self {
            Method::InOne | Method::InLog => Some(ModelKind::In),
            Method::OutOne | Method::OutLog => Some(ModelKind::Out),
            Method::Baseline => None,
        }
    }

    pub fn is_log(self) -> bool {
        matches!(self, Method::InLog | Method::OutLog)
    }

    /// Whether the method applies to the origin position of `case`.
    pub fn applies_to(self, case: Case) -> bool {
        match self.model() {
            Some(ModelKind::In) => case == Case::I,
            Some(ModelKind::Out) => case == Case::II,
            None => true,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected one of in_one, in_log, out_one, out_log, baseline)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub status: SolveStatus,
    /// Bound at the fixture start point; `None` when the solve failed.
    pub bound: Option<f64>,
    pub worst_case: Option<f64>,
    /// r of the certificate (SDP models only).
    pub r: Option<f64>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub idx: usize,
    pub case: Case,
    pub kappa: f64,
    pub sigma: f64,
    pub results: Vec<(Method, MethodResult)>,
    pub t_star: f64,
    pub exits: bool,
    /// Wall-clock fields are meaningful only for single-worker runs.
    pub timed: bool,
}

impl BenchRecord {
    pub fn result(&self, m: Method) -> Option<&MethodResult> {
        self.results.iter().find(|(k, _)| *k == m).map(|(_, r)| r)
    }

    pub fn bound(&self, m: Method) -> Option<f64> {
        self.result(m).and_then(|r| r.bound)
    }

    /// Bound of `m` divided by the baseline bound.
    pub fn rho(&self, m: Method) -> Option<f64> {
        let (b, base) = (self.bound(m)?, self.bound(Method::Baseline)?);
        (base.is_finite() && base > 0.0 && b.is_finite()).then(|| b / base)
    }

    /// Bound of `m` divided by t*, when t* > 0.
    pub fn abs_ratio(&self, m: Method) -> Option<f64> {
        let b = self.bound(m)?;
        (self.t_star > 0.0 && b.is_finite()).then(|| b / self.t_star)
    }

    pub fn time(&self, m: Method) -> Option<f64> {
        self.timed.then(|| self.result(m).map(|r| r.time)).flatten()
    }

    /// Methods whose finite bound falls below t* − [`SOUNDNESS_TOL`].
    pub fn soundness_violations(&self) -> Vec<Method> {
        self.results
            .iter()
            .filter(|(_, r)| r.bound.is_some_and(|b| b.is_finite() && b < self.t_star - SOUNDNESS_TOL))
            .map(|(m, _)| *m)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub count: usize,
    pub n: usize,
    pub seed: RngSeed,
    pub methods: BTreeSet<Method>,
    pub enclosure: EnclosureMode,
    pub settings: SolverSettings,
    pub jobs: usize,
    pub oracle_grid: usize,
}

impl BenchConfig {
    pub fn new(count: usize, n: usize, seed: u64) -> Self {
        BenchConfig {
            count,
            n,
            seed: RngSeed(seed),
            methods: Method::ALL.into_iter().collect(),
            enclosure: EnclosureMode::Ball,
            settings: SolverSettings::default(),
            jobs: 1,
            oracle_grid: DEFAULT_GRID,
        }
    }
}

/// Draws `count` matrices; the same stream for every worker count.
pub fn draw_matrices(count: usize, n: usize, seed: RngSeed) -> Result<Vec<SquareMatrix>> {
    let mut rng = seed.rng();
    (0..count).map(|_| gen_stable(n, &mut rng)).collect()
}

/// Runs every selected method on both fixtures for `count` random matrices.
/// Records are ordered by (matrix index, case).
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if cfg.count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let matrices = draw_matrices(cfg.count, cfg.n, cfg.seed)?;
    let fx = fixtures(cfg.n, cfg.enclosure)?;
    let timed = cfg.jobs <= 1;
    let run_one = |(idx, a): (usize, &SquareMatrix)| -> Result<Vec<BenchRecord>> {
        fx.iter().map(|f| run_record(idx, a, f, cfg, timed)).collect()
    };
    let nested: Vec<Vec<BenchRecord>> = if timed {
        matrices.iter().enumerate().map(run_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| matrices.par_iter().enumerate().map(run_one).collect::<Result<_>>())?
    };
    Ok(nested.into_iter().flatten().collect())
}

fn run_record(idx: usize, a: &SquareMatrix, f: &Fixture, cfg: &BenchConfig, timed: bool) -> Result<BenchRecord> {
    let sigma = stability_margin(a)?;
    let gamma = sigma / 2.0;
    let mut results = Vec::new();
    for &m in &cfg.methods {
        if !m.applies_to(f.case) {
            continue;
        }
        let res = match m.model() {
            Some(kind) => {
                let g = if m.is_log() { GChoice::log(gamma)? } else { GChoice::MinusOne };
                let problem = match kind {
                    ModelKind::In => build_escape_in(a, &f.region, g)?,
                    ModelKind::Out => build_escape_out(a, &f.region, g)?,
                };
                match solve_problem(&problem, &cfg.settings, &ClarabelBackend) {
                    Ok(cert) => MethodResult {
                        status: cert.solver_status,
                        bound: Some(cert.bound_at(&f.x0)?),
                        worst_case: Some(cert.bound_worst_case()),
                        r: Some(cert.r),
                        time: cert.solve_time,
                    },
                    Err(fail) => {
                        log::warn!("matrix {idx}, case {}: {} failed: {fail}", f.case, m.name());
                        MethodResult { status: fail.status, bound: None, worst_case: None, r: None, time: fail.solve_time }
                    }
                }
            }
            None => {
                let start = Instant::now();
                match baseline_bound(a, &f.region, &cfg.settings) {
                    Ok(b) => MethodResult {
                        status: SolveStatus::Optimal,
                        bound: Some(b.at(&f.x0)),
                        worst_case: Some(b.worst_case),
                        r: None,
                        time: b.solve_time,
                    },
                    Err(e @ (Error::Solver(_) | Error::Numerical(_))) => {
                        log::warn!("matrix {idx}, case {}: baseline failed: {e}", f.case);
                        let time = start.elapsed().as_secs_f64();
                        MethodResult { status: SolveStatus::Failed, bound: None, worst_case: None, r: None, time }
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        results.push((m, res));
    }

    // Each bound claims no exit after it; ten times the tightest one leaves
    // room to catch a violation without forcing a coarse grid.
    let tightest = results
        .iter()
        .filter_map(|(_, r)| r.worst_case)
        .filter(|w| w.is_finite() && *w > 0.0)
        .fold(f64::NAN, f64::min);
    let horizon = if tightest.is_finite() { 10.0 * tightest } else { 100.0 / sigma };
    let grid = adaptive_grid(a, horizon, cfg.oracle_grid, MAX_ORACLE_GRID.max(cfg.oracle_grid));
    let tr = Trajectory::new(a.clone(), f.x0.clone())?;
    let outcome = escape_time(&tr, &f.region, horizon, grid, DEFAULT_TOL)?;
    let record = BenchRecord {
        idx,
        case: f.case,
        kappa: condition_number(a),
        sigma,
        results,
        t_star: outcome.t_star(),
        exits: matches!(outcome, EscapeOutcome::ExitsAt { .. }),
        timed,
    };
    for m in record.soundness_violations() {
        log::error!("matrix {idx}, case {}: {} bound {:?} below t* = {}", f.case, m.name(), record.bound(m), record.t_star);
    }
    Ok(record)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const TIMING_PREFIX: &str = "time_";

/// `records.csv`: identification, bounds, t*, ratios, then timing columns.
pub fn write_records_csv<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["idx", "case", "kappa"].iter().map(|s| s.to_string()).collect();
    header.extend(Method::SDP.iter().map(|m| format!("bound_{}", m.name())));
    header.push("baseline".into());
    header.push("t_star".into());
    header.extend(Method::SDP.iter().map(|m| format!("rho_{}", m.name())));
    header.extend(Method::SDP.iter().map(|m| format!("abs_{}", m.name())));
    header.push("abs_baseline".into());
    header.extend(Method::ALL.iter().map(|m| format!("{TIMING_PREFIX}{}", m.name())));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.idx.to_string(), r.case.to_string(), r.kappa.to_string()];
        row.extend(Method::SDP.iter().map(|&m| fmt_opt(r.bound(m))));
        row.push(fmt_opt(r.bound(Method::Baseline)));
        row.push(r.t_star.to_string());
        row.extend(Method::SDP.iter().map(|&m| fmt_opt(r.rho(m))));
        row.extend(Method::SDP.iter().map(|&m| fmt_opt(r.abs_ratio(m))));
        row.push(fmt_opt(r.abs_ratio(Method::Baseline)));
        row.extend(Method::ALL.iter().map(|&m| fmt_opt(r.time(m))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// (κ, ρ) pairs of one case, one row per record and SDP method.
pub fn write_scatter_csv<W: Write>(records: &[BenchRecord], case: Case, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["idx", "method", "kappa", "rho"])?;
    for r in records.iter().filter(|r| r.case == case) {
        for m in Method::SDP {
            if let Some(rho) = r.rho(m) {
                w.write_record([r.idx.to_string(), m.name().to_string(), r.kappa.to_string(), rho.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub case: Case,
    pub method: Method,
    pub records: usize,
    pub failed: usize,
    pub rho_q25: Option<f64>,
    pub rho_median: Option<f64>,
    pub rho_q75: Option<f64>,
    pub abs_median: Option<f64>,
    pub time_median: Option<f64>,
    pub time_q75: Option<f64>,
    pub spearman_kappa_rho: Option<f64>,
    pub soundness_violations: usize,
}

/// Linear interpolation between order statistics at position τ(n − 1).
pub fn quantile(values: &[f64], tau: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = tau.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Ranks 1..=n with ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && values[order[end]] == values[order[k]] {
            end += 1;
        }
        let avg = (k + end + 1) as f64 / 2.0;
        for &i in &order[k..end] {
            out[i] = avg;
        }
        k = end;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than 3 pairs or constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn summarize(records: &[BenchRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for case in [Case::I, Case::II] {
        let recs: Vec<&BenchRecord> = records.iter().filter(|r| r.case == case).collect();
        for m in Method::ALL {
            if !m.applies_to(case) || !recs.iter().any(|r| r.result(m).is_some()) {
                continue;
            }
            let with: Vec<&&BenchRecord> = recs.iter().filter(|r| r.result(m).is_some()).collect();
            let failed = with.iter().filter(|r| r.bound(m).is_none()).count();
            let pairs: Vec<(f64, f64)> = with.iter().filter_map(|r| r.rho(m).map(|rho| (r.kappa, rho))).collect();
            let rhos: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let abs: Vec<f64> = with.iter().filter_map(|r| r.abs_ratio(m)).collect();
            let times: Vec<f64> = with.iter().filter_map(|r| r.time(m)).collect();
            let kappas: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            rows.push(SummaryRow {
                case,
                method: m,
                records: with.len(),
                failed,
                rho_q25: quantile(&rhos, 0.25),
                rho_median: median(&rhos),
                rho_q75: quantile(&rhos, 0.75),
                abs_median: median(&abs),
                time_median: median(&times),
                time_q75: quantile(&times, 0.75),
                spearman_kappa_rho: spearman(&kappas, &rhos),
                soundness_violations: with.iter().filter(|r| r.soundness_violations().contains(&m)).count(),
            });
        }
    }
    rows
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "case",
        "method",
        "records",
        "failed",
        "rho_q25",
        "rho_median",
        "rho_q75",
        "abs_median",
        "time_median",
        "time_q75",
        "spearman_kappa_rho",
        "soundness_violations",
    ])?;
    for r in rows {
        w.write_record([
            r.case.to_string(),
            r.method.name().to_string(),
            r.records.to_string(),
            r.failed.to_string(),
            fmt_opt(r.rho_q25),
            fmt_opt(r.rho_median),
            fmt_opt(r.rho_q75),
            fmt_opt(r.abs_median),
            fmt_opt(r.time_median),
            fmt_opt(r.time_q75),
            fmt_opt(r.spearman_kappa_rho),
            r.soundness_violations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Log–log scatter of (κ, ρ) for one case as a standalone SVG.
pub fn scatter_svg(records: &[BenchRecord], case: Case) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 48.0;
    let colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"];
    let pts: Vec<(usize, f64, f64)> = records
        .iter()
        .filter(|r| r.case == case)
        .flat_map(|r| {
            Method::SDP.iter().enumerate().filter_map(move |(k, &m)| {
                r.rho(m).filter(|&v| v > 0.0).map(|rho| (k, r.kappa.log10(), rho.log10()))
            })
        })
        .collect();
    let range = |f: fn(&(usize, f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min).floor();
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max).ceil();
        if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) }
    };
    let (x0, x1) = range(|p| p.1);
    let (y0, y1) = range(|p| p.2);
    let sx = |v: f64| PAD + (v - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\">\n");
    s += &format!(
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">log10 kappa (case {case})</text>\n", W / 2.0, H - 12.0);
    s += &format!("<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">log10 rho</text>\n", H / 2.0, H / 2.0);
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        s += &format!("<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"{anchor}\">{v}</text>\n", sx(v), H - PAD + 16.0);
    }
    for v in [y0, y1] {
        s += &format!("<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v}</text>\n", PAD - 4.0, sy(v));
    }
    for (k, x, y) in &pts {
        s += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n", sx(*x), sy(*y), colors[*k]);
    }
    for (k, m) in Method::SDP.iter().enumerate() {
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{}\" font-size=\"11\">{}</text>\n",
            W - PAD - 60.0,
            PAD + 14.0 * (k + 1) as f64,
            colors[k],
            m.name()
        );
    }
    s + "</svg>\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OriginClass;
    use crate::linalg::eigenvalues;

    #[test]
    fn block_fixtures() {
        assert_eq!(stable_block(1.0, 1.0), Some([[-0.5, 0.0], [0.0, -0.5]]));
        assert_eq!(stable_block(0.0, 1.0), None);
        let b = stable_block(0.25, 1.0).unwrap();
        assert_eq!(b[0][0], -0.25);
        assert!((b[0][1] - 0.75f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(b[1][0], -b[0][1]);
    }

    #[test]
    fn generated_matrix_is_similar_to_its_blocks() {
        let mut rng = RngSeed(42).rng();
        let (a, d) = gen_stable_with_blocks(10, &mut rng).unwrap();
        assert!(stability_margin(&a).unwrap() > 0.0);
        let sort = |mut v: Vec<num_complex::Complex64>| {
            v.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
            v
        };
        let (ea, ed) = (sort(eigenvalues(&a).unwrap()), sort(eigenvalues(&d).unwrap()));
        for (x, y) in ea.iter().zip(&ed) {
            assert!((x - y).norm() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn odd_dimension_is_rejected() {
        assert!(gen_stable(3, &mut RngSeed(0).rng()).is_err());
    }

    #[test]
    fn same_seed_same_stream() {
        let a = draw_matrices(3, 4, RngSeed(7)).unwrap();
        let b = draw_matrices(3, 4, RngSeed(7)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, draw_matrices(3, 4, RngSeed(8)).unwrap());
    }

    #[test]
    fn fixture_positions() {
        for n in [2, 4, 6, 8, 10] {
            let [one, two] = fixtures(n, EnclosureMode::Ball).unwrap();
            assert_eq!(one.region.classify_origin(), OriginClass::Interior);
            assert_eq!(two.region.classify_origin(), OriginClass::Exterior);
            assert!(one.region.contains(&one.x0, 0.0).unwrap());
            assert!(two.region.contains(&two.x0, 0.0).unwrap());
        }
        let [one, two] = fixtures(10, EnclosureMode::Ball).unwrap();
        assert_eq!(one.x0, [-1.5, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0]);
        assert_eq!(two.x0, [-5.0, -5.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn spearman_fixtures() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), Some(2.5));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn small_run_is_sound() {
        let cfg = BenchConfig::new(1, 4, 0);
        let records = run_benchmark(&cfg).unwrap();
        assert_eq!(records.len(), 2);
        for r in &records {
            assert!(r.soundness_violations().is_empty(), "{r:?}");
            assert!(r.bound(Method::Baseline).is_some());
        }
        assert!(records[0].bound(Method::InOne).is_some());
        assert!(records[0].result(Method::OutOne).is_none());
        assert!(records[1].bound(Method::OutLog).is_some());
        let rows = summarize(&records);
        assert_eq!(rows.len(), 6);
    }

    #[test]
    fn baseline_only_run() {
        let mut cfg = BenchConfig::new(1, 2, 3);
        cfg.methods = [Method::Baseline].into_iter().collect();
        let records = run_benchmark(&cfg).unwrap();
        for r in &records {
            assert_eq!(r.results.len(), 1);
            assert!(r.bound(Method::Baseline).is_some());
        }
        let mut buf = Vec::new();
        write_records_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("idx,case,kappa,bound_in_one,bound_in_log,bound_out_one,bound_out_log,baseline,t_star,rho_in_one"));
        assert!(header.ends_with("time_baseline"));
        let svg = scatter_svg(&records, Case::I);
        assert!(svg.starts_with("<svg"));
    }
}
