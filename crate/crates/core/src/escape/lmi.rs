//! Affine expressions in the decision variables whose values are symmetric
//! (n+1)×(n+1) block matrices, lowered into PSD cone blocks.

use nalgebra::DMatrix;

use crate::conic::{svec_index, Cone, ConeBlock};
use crate::geometry::QuadraticFunction;

/// `constant + Σ x[var] · coefficient`, every matrix symmetric.
#[derive(Debug, Clone)]
pub(crate) struct BlockExpr {
    dim: usize,
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl BlockExpr {
    pub fn zero(dim: usize) -> Self {
        BlockExpr { dim, constant: DMatrix::zeros(dim, dim), terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The constant quadratic function `value`.
    pub fn constant(dim: usize, value: f64) -> Self {
        let mut e = Self::zero(dim);
        e.constant[(dim - 1, dim - 1)] = value;
        e
    }

    /// A scalar variable multiplying the block matrix of `f`.
    pub fn scaled_quadratic(var: usize, f: &QuadraticFunction) -> Self {
        let block = f.to_psd_block();
        let mut e = Self::zero(block.as_matrix().nrows());
        e.terms.push((var, block.as_matrix().clone()));
        e
    }

    /// A scalar variable appearing as the constant term of a quadratic.
    pub fn scalar(dim: usize, var: usize) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        m[(dim - 1, dim - 1)] = 1.0;
        let mut e = Self::zero(dim);
        e.terms.push((var, m));
        e
    }

    /// A symmetric matrix variable whose entry (i, j), i ≤ j, is
    /// `x[offset + svec_index(i, j)]`.
    pub fn symmetric_variable(dim: usize, offset: usize) -> Self {
        let mut e = Self::zero(dim);
        for j in 0..dim {
            for i in 0..=j {
                let mut m = DMatrix::zeros(dim, dim);
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
                e.terms.push((offset + svec_index(i, j), m));
            }
        }
        e
    }

    pub fn plus_constant(mut self, m: &DMatrix<f64>) -> Self {
        self.constant += m;
        self
    }

    pub fn scale(mut self, alpha: f64) -> Self {
        self.constant *= alpha;
        for (_, m) in &mut self.terms {
            *m *= alpha;
        }
        self
    }

    pub fn plus(mut self, other: BlockExpr) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        self.constant += other.constant;
        self.terms.extend(other.terms);
        self
    }

    pub fn minus(self, other: BlockExpr) -> Self {
        self.plus(other.scale(-1.0))
    }

    /// Block matrix of the Lie derivative along ẋ = Ax: with Ã = diag(A, 0),
    /// M ↦ ÃᵀM + MÃ maps [[Q,b],[bᵀ,c]] to [[AᵀQ+QA, Aᵀb],[bᵀA, 0]].
    pub fn lie(mut self, a: &DMatrix<f64>) -> Self {
        let n = self.dim - 1;
        let mut ext = DMatrix::zeros(self.dim, self.dim);
        ext.view_mut((0, 0), (n, n)).copy_from(a);
        let ext_t = ext.transpose();
        let map = |m: &DMatrix<f64>| &ext_t * m + m * &ext;
        self.constant = map(&self.constant);
        for (_, m) in &mut self.terms {
            *m = map(m);
        }
        self
    }

    /// Restriction to the leading `k`×`k` principal block.
    pub fn leading(&self, k: usize) -> Self {
        BlockExpr {
            dim: k,
            constant: self.constant.view((0, 0), (k, k)).into_owned(),
            terms: self.terms.iter().map(|(v, m)| (*v, m.view((0, 0), (k, k)).into_owned())).collect(),
        }
    }

    /// `expr ⪰ 0` as a PSD cone block in svec form.
    pub fn into_psd_block(self) -> ConeBlock {
        let d = self.dim;
        let len = d * (d + 1) / 2;
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); len];
        let mut offset = vec![0.0; len];
        let weight = |i: usize, j: usize| if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
        for j in 0..d {
            for i in 0..=j {
                offset[svec_index(i, j)] = self.constant[(i, j)] * weight(i, j);
            }
        }
        for (var, m) in &self.terms {
            for j in 0..d {
                for i in 0..=j {
                    let v = m[(i, j)];
                    if v != 0.0 {
                        rows[svec_index(i, j)].push((*var, v * weight(i, j)));
                    }
                }
            }
        }
        for row in &mut rows {
            merge_duplicates(row);
        }
        ConeBlock { cone: Cone::Psd(d), rows, offset }
    }
}

fn merge_duplicates(row: &mut Vec<(usize, f64)>) {
    row.sort_by_key(|&(j, _)| j);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for &(j, v) in row.iter() {
        match merged.last_mut() {
            Some((last, acc)) if *last == j => *acc += v,
            _ => merged.push((j, v)),
        }
    }
    merged.retain(|&(_, v)| v != 0.0);
    *row = merged;
}

/// `x[i] = 0` for every listed index.
pub(crate) fn zero_vars(indices: &[usize]) -> ConeBlock {
    ConeBlock {
        cone: Cone::Zero(indices.len()),
        rows: indices.iter().map(|&i| vec![(i, 1.0)]).collect(),
        offset: vec![0.0; indices.len()],
    }
}

/// `x[first..first+count] ≥ 0`.
pub(crate) fn nonnegative_vars(first: usize, count: usize) -> ConeBlock {
    ConeBlock {
        cone: Cone::Nonnegative(count),
        rows: (0..count).map(|k| vec![(first + k, 1.0)]).collect(),
        offset: vec![0.0; count],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::svec;
    use crate::geometry::PsdBlock;
    use crate::linalg::{SquareMatrix, SymmetricMatrix};

    /// Evaluates the lowered block at x and compares with a direct computation.
    #[test]
    fn lowered_lie_block_matches_direct_evaluation() {
        let n = 2;
        let d = n + 1;
        let a = SquareMatrix::from_rows(&[&[-1.0, 3.0], &[0.5, -2.0]]);
        let block = BlockExpr::symmetric_variable(d, 0).lie(a.as_matrix()).into_psd_block();
        let x: Vec<f64> = (0..6).map(|k| 0.3 * k as f64 - 0.7).collect();
        let mut raw = nalgebra::DMatrix::zeros(d, d);
        for j in 0..d {
            for i in 0..=j {
                raw[(i, j)] = x[svec_index(i, j)];
                raw[(j, i)] = x[svec_index(i, j)];
            }
        }
        let v = QuadraticFunction::from_psd_block(&PsdBlock(SymmetricMatrix::new(raw).unwrap()));
        let direct = v.lie_derivative(&a).unwrap().to_psd_block();
        let lowered = block.evaluate(&x);
        let expected = svec(&SymmetricMatrix::new(direct.as_matrix().clone()).unwrap());
        for (l, e) in lowered.iter().zip(&expected) {
            assert!((l - e).abs() < 1e-12, "{l} vs {e}");
        }
    }

    #[test]
    fn duplicates_are_merged() {
        let mut row = vec![(3, 1.0), (1, 2.0), (3, -1.0), (1, 0.5)];
        merge_duplicates(&mut row);
        assert_eq!(row, vec![(1, 2.5)]);
    }
}
