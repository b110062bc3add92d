//! Quadratic functions, ellipsoids and regions described as intersections of
//! ellipsoids, together with the block-matrix embedding that turns
//! "V(x) ≥ 0 for all x" into a positive semidefinite constraint.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SquareMatrix, SymmetricMatrix};

/// Tolerance used to decide whether the origin lies on the region boundary.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Largest dimension for which the 2ⁿ-vertex enclosure of a box is built.
pub const MAX_VERTEX_DIM: usize = 12;

/// V(x) = xᵀQx + 2bᵀx + c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadraticRepr", into = "QuadraticRepr")]
pub struct QuadraticFunction {
    q: SymmetricMatrix,
    b: DVector<f64>,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct QuadraticRepr {
    /// Row-major n×n entries.
    q: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

impl TryFrom<QuadraticRepr> for QuadraticFunction {
    type Error = Error;
    fn try_from(r: QuadraticRepr) -> Result<Self> {
        let n = r.b.len();
        if r.q.len() != n * n {
            return Err(Error::dims(n * n, r.q.len()));
        }
        QuadraticFunction::new(DMatrix::from_row_slice(n, n, &r.q), r.b, r.c)
    }
}

impl From<QuadraticFunction> for QuadraticRepr {
    fn from(v: QuadraticFunction) -> Self {
        QuadraticRepr {
            q: v.q.as_matrix().transpose().as_slice().to_vec(),
            b: v.b.as_slice().to_vec(),
            c: v.c,
        }
    }
}

impl QuadraticFunction {
    /// `q` is symmetrized on construction.
    pub fn new(q: DMatrix<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let q = SymmetricMatrix::new(q)?;
        if b.len() != q.dim() {
            return Err(Error::dims(q.dim(), b.len()));
        }
        if b.iter().any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::NonFinite("quadratic function"));
        }
        Ok(QuadraticFunction { q, b: DVector::from_vec(b), c })
    }

    pub fn zero(n: usize) -> Self {
        QuadraticFunction { q: SymmetricMatrix::zeros(n), b: DVector::zeros(n), c: 0.0 }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        QuadraticFunction { c, ..Self::zero(n) }
    }

    /// ‖x − center‖² − radius².
    pub fn ball(center: &[f64], radius: f64) -> Self {
        let n = center.len();
        let b = DVector::from_iterator(n, center.iter().map(|v| -v));
        let c = center.iter().map(|v| v * v).sum::<f64>() - radius * radius;
        QuadraticFunction { q: SymmetricMatrix::identity(n), b, c }
    }

    /// (x[i] − lo)(x[i] − hi), a degenerate ellipsoid whose 0-sublevel set is
    /// the slab lo ≤ x[i] ≤ hi.
    pub fn slab(n: usize, i: usize, lo: f64, hi: f64) -> Self {
        let mut q = DMatrix::zeros(n, n);
        q[(i, i)] = 1.0;
        let mut b = DVector::zeros(n);
        b[i] = -0.5 * (lo + hi);
        QuadraticFunction { q: SymmetricMatrix::symmetrize(q), b, c: lo * hi }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn q(&self) -> &SymmetricMatrix {
        &self.q
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dims(self.dim(), x.len()));
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let q = self.q.as_matrix();
        let mut acc = self.c;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += q[(i, j)] * x[j];
            }
            acc += x[i] * (row + 2.0 * self.b[i]);
        }
        acc
    }

    /// ∇V(x) = 2(Qx + b).
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        ((self.q.as_matrix() * xv + &self.b) * 2.0).as_slice().to_vec()
    }

    /// The (n+1)×(n+1) matrix [[Q, b], [bᵀ, c]], so that V(x) = [x;1]ᵀ M [x;1].
    pub fn to_psd_block(&self) -> PsdBlock {
        let n = self.dim();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(self.q.as_matrix());
        for i in 0..n {
            m[(i, n)] = self.b[i];
            m[(n, i)] = self.b[i];
        }
        m[(n, n)] = self.c;
        PsdBlock(SymmetricMatrix::symmetrize(m))
    }

    pub fn from_psd_block(block: &PsdBlock) -> Self {
        let m = block.0.as_matrix();
        let n = m.nrows() - 1;
        QuadraticFunction {
            q: SymmetricMatrix::symmetrize(m.view((0, 0), (n, n)).into_owned()),
            b: m.view((0, n), (n, 1)).column(0).into_owned(),
            c: m[(n, n)],
        }
    }

    /// V ⩾⩾ 0 (nonnegative everywhere) up to `tol`, decided on the block matrix.
    pub fn is_nonnegative(&self, tol: f64) -> bool {
        self.to_psd_block().min_eigenvalue() >= -tol
    }

    pub fn is_convex(&self, tol: f64) -> bool {
        self.q.min_eigenvalue() >= -tol
    }

    /// Derivative of V along ẋ = Ax: xᵀ(AᵀQ + QA)x + 2bᵀAx.
    pub fn lie_derivative(&self, a: &SquareMatrix) -> Result<Self> {
        if a.dim() != self.dim() {
            return Err(Error::dims(self.dim(), a.dim()));
        }
        let am = a.as_matrix();
        let q = am.transpose() * self.q.as_matrix() + self.q.as_matrix() * am;
        Ok(QuadraticFunction {
            q: SymmetricMatrix::symmetrize(q),
            b: am.transpose() * &self.b,
            c: 0.0,
        })
    }

    /// x ↦ V(x + shift).
    pub fn translate(&self, shift: &[f64]) -> Self {
        let s = DVector::from_column_slice(shift);
        let qs = self.q.as_matrix() * &s;
        QuadraticFunction {
            q: self.q.clone(),
            b: &qs + &self.b,
            c: s.dot(&qs) + 2.0 * self.b.dot(&s) + self.c,
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        QuadraticFunction { q: self.q.scale(alpha), b: &self.b * alpha, c: self.c * alpha }
    }

    pub fn add_constant(&self, delta: f64) -> Self {
        QuadraticFunction { c: self.c + delta, ..self.clone() }
    }
}

impl std::ops::Add for &QuadraticFunction {
    type Output = QuadraticFunction;
    fn add(self, rhs: Self) -> QuadraticFunction {
        QuadraticFunction { q: &self.q + &rhs.q, b: &self.b + &rhs.b, c: self.c + rhs.c }
    }
}

impl std::ops::Sub for &QuadraticFunction {
    type Output = QuadraticFunction;
    fn sub(self, rhs: Self) -> QuadraticFunction {
        QuadraticFunction { q: &self.q - &rhs.q, b: &self.b - &rhs.b, c: self.c - rhs.c }
    }
}

/// The block matrix [[Q, b], [bᵀ, c]] of a quadratic function.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdBlock(pub SymmetricMatrix);

impl PsdBlock {
    pub fn min_eigenvalue(&self) -> f64 {
        self.0.min_eigenvalue()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.0.as_matrix()
    }
}

/// The 0-sublevel set of a convex (possibly degenerate) quadratic function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    defining: QuadraticFunction,
    /// A point strictly inside, when one is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    witness: Option<Vec<f64>>,
}

impl Ellipsoid {
    pub fn new(defining: QuadraticFunction) -> Result<Self> {
        let scale = defining.q.as_matrix().amax().max(1.0);
        if !defining.is_convex(1e-12 * scale) {
            return Err(Error::Precondition("ellipsoid quadratic is not convex".into()));
        }
        Ok(Ellipsoid { defining, witness: None })
    }

    /// Attaches an interior witness, checked to satisfy E(x) < 0.
    pub fn with_witness(mut self, x: Vec<f64>) -> Result<Self> {
        let v = self.defining.evaluate(&x)?;
        if !(v < 0.0) {
            return Err(Error::Precondition(format!("witness is not interior (E(x) = {v})")));
        }
        self.witness = Some(x);
        Ok(self)
    }

    pub fn quadratic(&self) -> &QuadraticFunction {
        &self.defining
    }

    pub fn witness(&self) -> Option<&[f64]> {
        self.witness.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.defining.dim()
    }
}

/// One piece of the outer description conv{F₁, …, F_M} ⊇ R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnclosureItem {
    Ellipsoid(Ellipsoid),
    Point(Vec<f64>),
}

impl EnclosureItem {
    /// The quadratic whose 0-sublevel set is this item; a point p is encoded
    /// as ‖x − p‖².
    pub fn quadratic(&self) -> QuadraticFunction {
        match self {
            EnclosureItem::Ellipsoid(e) => e.defining.clone(),
            EnclosureItem::Point(p) => QuadraticFunction::ball(p, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EnclosureItem::Ellipsoid(e) => e.dim(),
            EnclosureItem::Point(p) => p.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnclosureMode {
    /// The smallest axis-aligned ball around the box.
    Ball,
    /// The 2ⁿ box corners.
    Vertices,
}

impl std::str::FromStr for EnclosureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ball" => Ok(EnclosureMode::Ball),
            "vertices" => Ok(EnclosureMode::Vertices),
            other => Err(Error::Config(format!("unknown enclosure mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OriginClass {
    Interior,
    Exterior,
    Boundary,
}

/// R = E₁ ∩ … ∩ E_N, enclosed in conv{F₁, …, F_M}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    inner: Vec<Ellipsoid>,
    enclosure: Vec<EnclosureItem>,
}

impl Region {
    /// The caller is responsible for conv(enclosure) ⊇ ⋂ inner.
    pub fn new(inner: Vec<Ellipsoid>, enclosure: Vec<EnclosureItem>) -> Result<Self> {
        if inner.is_empty() || enclosure.is_empty() {
            return Err(Error::Precondition("region needs at least one ellipsoid and one enclosure item".into()));
        }
        let n = inner[0].dim();
        for d in inner.iter().map(Ellipsoid::dim).chain(enclosure.iter().map(EnclosureItem::dim)) {
            if d != n {
                return Err(Error::dims(n, d));
            }
        }
        Ok(Region { inner, enclosure })
    }

    pub fn dim(&self) -> usize {
        self.inner[0].dim()
    }

    pub fn inner(&self) -> &[Ellipsoid] {
        &self.inner
    }

    pub fn enclosure(&self) -> &[EnclosureItem] {
        &self.enclosure
    }

    pub fn inner_quadratics(&self) -> Vec<QuadraticFunction> {
        self.inner.iter().map(|e| e.defining.clone()).collect()
    }

    pub fn enclosure_quadratics(&self) -> Vec<QuadraticFunction> {
        self.enclosure.iter().map(EnclosureItem::quadratic).collect()
    }

    /// max over i of Eᵢ(x) together with the index attaining it.
    pub fn max_constraint(&self, x: &[f64]) -> (f64, usize) {
        self.inner
            .iter()
            .enumerate()
            .map(|(i, e)| (e.defining.eval_unchecked(x), i))
            .fold((f64::NEG_INFINITY, 0), |acc, cur| if cur.0 > acc.0 { cur } else { acc })
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(Error::dims(self.dim(), x.len()));
        }
        Ok(self.max_constraint(x).0 <= tol)
    }

    pub fn classify_origin(&self) -> OriginClass {
        let values: Vec<f64> = self.inner.iter().map(|e| e.defining.c).collect();
        if values.iter().all(|&v| v < -BOUNDARY_TOL) {
            OriginClass::Interior
        } else if values.iter().any(|&v| v > BOUNDARY_TOL) {
            OriginClass::Exterior
        } else {
            OriginClass::Boundary
        }
    }

    /// The region shifted so that `shift` becomes the origin: every quadratic
    /// E becomes y ↦ E(y + shift).
    pub fn translate(&self, shift: &[f64]) -> Region {
        let move_point = |p: &[f64]| p.iter().zip(shift).map(|(a, s)| a - s).collect::<Vec<_>>();
        let inner = self
            .inner
            .iter()
            .map(|e| Ellipsoid {
                defining: e.defining.translate(shift),
                witness: e.witness.as_deref().map(move_point),
            })
            .collect();
        let enclosure = self
            .enclosure
            .iter()
            .map(|f| match f {
                EnclosureItem::Ellipsoid(e) => EnclosureItem::Ellipsoid(Ellipsoid {
                    defining: e.defining.translate(shift),
                    witness: e.witness.as_deref().map(move_point),
                }),
                EnclosureItem::Point(p) => EnclosureItem::Point(move_point(p)),
            })
            .collect();
        Region { inner, enclosure }
    }
}

/// The box lo ≤ x ≤ hi as n slab quadratics, with either the bounding ball or
/// the corner points as enclosure.
pub fn box_region(lo: &[f64], hi: &[f64], mode: EnclosureMode) -> Result<Region> {
    let n = lo.len();
    if hi.len() != n {
        return Err(Error::dims(n, hi.len()));
    }
    if n == 0 {
        return Err(Error::Precondition("box must have positive dimension".into()));
    }
    if let Some(i) = (0..n).find(|&i| !(lo[i] < hi[i])) {
        return Err(Error::Precondition(format!("box bounds not increasing in coordinate {i}")));
    }
    let center: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let inner = (0..n)
        .map(|i| {
            Ellipsoid::new(QuadraticFunction::slab(n, i, lo[i], hi[i]))?.with_witness(center.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let enclosure = match mode {
        EnclosureMode::Ball => {
            let radius = lo.iter().zip(hi).map(|(l, h)| (h - l) * (h - l)).sum::<f64>().sqrt() / 2.0;
            let ball = Ellipsoid::new(QuadraticFunction::ball(&center, radius))?.with_witness(center.clone())?;
            vec![EnclosureItem::Ellipsoid(ball)]
        }
        EnclosureMode::Vertices => {
            if n > MAX_VERTEX_DIM {
                return Err(Error::Config(format!(
                    "vertex enclosure limited to n ≤ {MAX_VERTEX_DIM} (got {n})"
                )));
            }
            (0..1usize << n)
                .map(|mask| {
                    EnclosureItem::Point(
                        (0..n).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect(),
                    )
                })
                .collect()
        }
    };
    Region::new(inner, enclosure)
}

/// Moves the equilibrium x̄ = −A⁻¹b of ẋ = Ax + b to the origin. Returns
/// (A, R − x̄, x̄); a trajectory of the affine system from x₀ equals the
/// linear trajectory from x₀ − x̄ shifted back by x̄.
pub fn reduce_affine(a: &SquareMatrix, b_aff: &[f64], region: &Region) -> Result<(SquareMatrix, Region, Vec<f64>)> {
    let n = a.dim();
    if b_aff.len() != n {
        return Err(Error::dims(n, b_aff.len()));
    }
    if region.dim() != n {
        return Err(Error::dims(n, region.dim()));
    }
    let x_bar = if b_aff.iter().all(|&v| v == 0.0) {
        vec![0.0; n]
    } else {
        let lu = a.as_matrix().clone().lu();
        if !lu.is_invertible() {
            return Err(Error::Precondition("affine reduction needs a nonsingular A".into()));
        }
        let sol = lu
            .solve(&DVector::from_column_slice(b_aff))
            .ok_or_else(|| Error::Precondition("affine reduction needs a nonsingular A".into()))?;
        sol.iter().map(|v| -v).collect()
    };
    Ok((a.clone(), region.translate(&x_bar), x_bar))
}
