//! Dense linear algebra for the small matrices (n up to a few dozen) that
//! appear in the escape-time models: spectra, the matrix exponential and
//! the Lyapunov equation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real square matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SquareRepr", into = "SquareRepr")]
pub struct SquareMatrix(DMatrix<f64>);

#[derive(Serialize, Deserialize)]
struct SquareRepr {
    n: usize,
    /// Row-major entries.
    entries: Vec<f64>,
}

impl TryFrom<SquareRepr> for SquareMatrix {
    type Error = Error;
    fn try_from(r: SquareRepr) -> Result<Self> {
        SquareMatrix::from_row_major(r.n, &r.entries)
    }
}

impl From<SquareMatrix> for SquareRepr {
    fn from(m: SquareMatrix) -> Self {
        SquareRepr { n: m.dim(), entries: m.to_row_major() }
    }
}

impl SquareMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dims(m.nrows(), m.ncols()));
        }
        if m.nrows() == 0 {
            return Err(Error::Precondition("matrix dimension must be positive".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("square matrix"));
        }
        Ok(SquareMatrix(m))
    }

    pub fn from_row_major(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::dims(n * n, entries.len()));
        }
        Self::new(DMatrix::from_row_slice(n, n, entries))
    }

    /// Builds a matrix from nested rows; panics on ragged or non-finite input.
    /// Intended for literals in tests and fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let flat: Vec<f64> = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), n, "ragged matrix literal");
                r.iter().copied()
            })
            .collect();
        Self::from_row_major(n, &flat).expect("valid matrix literal")
    }

    pub fn identity(n: usize) -> Self {
        SquareMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SquareMatrix(DMatrix::zeros(n, n))
    }

    pub fn diag(d: &[f64]) -> Self {
        SquareMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    pub fn norm_one(&self) -> f64 {
        norm_one(&self.0)
    }
}

/// A real symmetric matrix. Construction symmetrizes its input as (M+Mᵀ)/2,
/// so `m[(i, j)] == m[(j, i)]` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dims(m.nrows(), m.ncols()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric matrix"));
        }
        Ok(Self::symmetrize(m))
    }

    pub(crate) fn symmetrize(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut s = m;
        for j in 0..n {
            for i in (j + 1)..n {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        SymmetricMatrix(s)
    }

    pub fn identity(n: usize) -> Self {
        SymmetricMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymmetricMatrix(DMatrix::zeros(n, n))
    }

    pub fn diag(d: &[f64]) -> Self {
        SymmetricMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return f64::INFINITY;
        }
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return f64::NEG_INFINITY;
        }
        *self.eigenvalues().last().unwrap()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        SymmetricMatrix(&self.0 * alpha)
    }
}

impl std::ops::Add for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn add(self, rhs: Self) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 + &rhs.0)
    }
}

impl std::ops::Sub for &SymmetricMatrix {
    type Output = SymmetricMatrix;
    fn sub(self, rhs: Self) -> SymmetricMatrix {
        SymmetricMatrix(&self.0 - &rhs.0)
    }
}

pub(crate) fn norm_one(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Eigenvalues with multiplicity, computed by a real Schur decomposition of
/// the balanced matrix.
pub fn eigenvalues(m: &SquareMatrix) -> Result<Vec<Complex64>> {
    let mut work = m.0.clone();
    nalgebra::linalg::balancing::balance_parlett_reinsch(&mut work);
    let schur = nalgebra::linalg::Schur::try_new(work, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect())
}

/// σ(A) = min over eigenvalues of −Re(λ); positive iff `m` is Hurwitz.
pub fn stability_margin(m: &SquareMatrix) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min))
}

/// 2-norm condition number σ_max/σ_min; `f64::INFINITY` for singular input.
pub fn condition_number(m: &SquareMatrix) -> f64 {
    let sv = m.0.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= max * f64::EPSILON || min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

// Padé approximant degrees with their 1-norm validity thresholds.
#[allow(clippy::excessive_precision)]
const PADE_THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
];

fn pade_coefficients(m: usize) -> &'static [f64] {
    match m {
        3 => &[120.0, 60.0, 12.0, 1.0],
        5 => &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
        7 => &[17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
        9 => &[
            17643225600.0,
            8821612800.0,
            2075673600.0,
            302702400.0,
            30270240.0,
            2162160.0,
            110880.0,
            3960.0,
            90.0,
            1.0,
        ],
        13 => &[
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ],
        _ => unreachable!("unsupported Padé degree"),
    }
}

/// e^{At} by scaling and squaring with a diagonal Padé approximant.
pub fn expm(m: &SquareMatrix, t: f64) -> Result<SquareMatrix> {
    if !t.is_finite() {
        return Err(Error::NonFinite("expm time"));
    }
    let n = m.dim();
    let a = &m.0 * t;
    let norm = norm_one(&a);
    let ident = DMatrix::<f64>::identity(n, n);
    if norm == 0.0 {
        return Ok(SquareMatrix(ident));
    }

    let (degree, scaled, squarings) = match PADE_THETA.iter().find(|(_, theta)| norm <= *theta) {
        Some(&(deg, _)) => (deg, a, 0),
        None => {
            let theta13 = PADE_THETA[4].1;
            let s = (norm / theta13).log2().ceil().max(0.0) as i32;
            if s > 1000 {
                return Err(Error::Numerical(format!("expm overflow: ‖At‖₁ = {norm:e}")));
            }
            (13, a * 2f64.powi(-s), s as u32)
        }
    };

    let b = pade_coefficients(degree);
    let a2 = &scaled * &scaled;
    let (u, v) = if degree == 13 {
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
            + &a6 * b[7]
            + &a4 * b[5]
            + &a2 * b[3]
            + &ident * b[1];
        let u = &scaled * u_inner;
        let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
            + &a6 * b[6]
            + &a4 * b[4]
            + &a2 * b[2]
            + &ident * b[0];
        (u, v)
    } else {
        let mut powers = vec![ident.clone()];
        for k in 1..=degree / 2 {
            let next = &powers[k - 1] * &a2;
            powers.push(next);
        }
        let mut u_inner = DMatrix::zeros(n, n);
        let mut v = DMatrix::zeros(n, n);
        for (k, p) in powers.iter().enumerate() {
            u_inner += p * b[2 * k + 1];
            v += p * b[2 * k];
        }
        (&scaled * u_inner, v)
    };

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::Numerical("singular Padé denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("expm overflow: ‖At‖₁ = {norm:e}")));
    }
    Ok(SquareMatrix(r))
}

/// Solves AᵀP + PA = −I for the symmetric positive definite P through the
/// Kronecker-vectorized linear system (Aᵀ⊗I + I⊗Aᵀ) vec(P) = −vec(I).
pub fn solve_lyapunov(a: &SquareMatrix) -> Result<SymmetricMatrix> {
    let margin = stability_margin(a)?;
    if margin <= 0.0 {
        return Err(Error::Precondition(format!(
            "Lyapunov equation needs a strictly stable matrix (σ(A) = {margin})"
        )));
    }
    let n = a.dim();
    let at = a.0.transpose();
    let ident = DMatrix::<f64>::identity(n, n);
    let kron = at.kronecker(&ident) + ident.kronecker(&at);
    let rhs = DVector::from_iterator(n * n, (&ident * -1.0).iter().copied());
    let kron_norm = kron.norm();
    let sol = kron
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Kronecker system".into()))?;
    let p = SymmetricMatrix::new(DMatrix::from_column_slice(n, n, sol.as_slice()))?;

    let resid = (&at * p.as_matrix() + p.as_matrix() * &a.0 + &ident).norm();
    let scale = kron_norm * p.as_matrix().norm();
    if !(resid <= 1e-10_f64.max(1e-14 * scale)) {
        return Err(Error::Numerical(format!("Lyapunov residual {resid:e} too large")));
    }
    Ok(p)
}
