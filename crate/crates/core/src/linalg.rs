//! Sparse symmetric factorization and a few vector helpers.

use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{Error, Result};

/// Sparse matrix in compressed-row form.
pub type SparseMat = CsMat<f64>;

/// Accumulates `(row, col, value)` stamps; duplicates are summed.
#[derive(Debug)]
pub struct Stamps {
    tri: TriMat<f64>,
}

impl Stamps {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            tri: TriMat::new((rows, cols)),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        self.tri.add_triplet(row, col, value);
    }

    /// Symmetric off-diagonal coupling `g` between `i` and `j`
    /// (conductance-style: +g on the diagonals, -g off-diagonal).
    pub fn couple(&mut self, i: usize, j: usize, g: f64) {
        self.add(i, i, g);
        self.add(j, j, g);
        self.add(i, j, -g);
        self.add(j, i, -g);
    }

    pub fn to_csr(&self) -> SparseMat {
        self.tri.to_csr()
    }
}

/// LDLᵀ factorization of a symmetric positive definite sparse matrix,
/// with reverse Cuthill–McKee fill reduction.
#[derive(Debug, Clone)]
pub struct SymFactor {
    inner: FactorKind,
}

#[derive(Debug, Clone)]
enum FactorKind {
    Scalar(f64),
    Ldl(Box<LdlNumeric<f64, usize>>),
}

impl SymFactor {
    pub fn new(mat: &SparseMat) -> Result<Self> {
        if mat.rows() <= 1 {
            // The sparse path needs at least two unknowns.
            let d = mat.get(0, 0).copied().unwrap_or(1.0);
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Factorization {
                    context: None,
                    msg: "matrix not positive definite (pivot 0)".into(),
                });
            }
            return Ok(Self {
                inner: FactorKind::Scalar(d),
            });
        }
        let csc = mat.to_csc();
        let ldl = Ldl::new()
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .numeric(csc.view())
            .map_err(|e| Error::Factorization {
                context: None,
                msg: format!("{e:?}"),
            })?;
        if let Some(bad) = ldl.d().iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Factorization {
                context: None,
                msg: format!("matrix not positive definite (pivot {bad})"),
            });
        }
        Ok(Self {
            inner: FactorKind::Ldl(Box::new(ldl)),
        })
    }

    pub fn dim(&self) -> usize {
        match &self.inner {
            FactorKind::Scalar(_) => 1,
            FactorKind::Ldl(l) => l.d().len(),
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match &self.inner {
            FactorKind::Scalar(d) => rhs.iter().map(|r| r / d).collect(),
            FactorKind::Ldl(l) => l.solve(rhs),
        }
    }
}

/// `y = M x` for a CSR matrix.
pub fn spmv(m: &SparseMat, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.rows()];
    for (row, vec) in m.outer_iterator().enumerate() {
        y[row] = vec.iter().map(|(c, v)| v * x[c]).sum();
    }
    y
}

/// `a + s * b` into a new matrix with the union sparsity pattern.
pub fn add_scaled(a: &SparseMat, s: f64, b: &SparseMat) -> SparseMat {
    let scaled = b.map(|v| v * s);
    a + &scaled
}

pub fn diag_matrix(d: &[f64]) -> SparseMat {
    let mut st = Stamps::new(d.len(), d.len());
    for (i, &v) in d.iter().enumerate() {
        st.add(i, i, v);
    }
    st.to_csr()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_and_solve_tridiagonal() {
        let n = 50;
        let mut st = Stamps::new(n, n);
        for i in 0..n - 1 {
            st.couple(i, i + 1, 1.0);
        }
        st.add(0, 0, 1.0);
        let m = st.to_csr();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = spmv(&m, &x);
        let f = SymFactor::new(&m).unwrap();
        let got = f.solve(&b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_laplacian_rejected() {
        let mut st = Stamps::new(3, 3);
        st.couple(0, 1, 1.0);
        st.couple(1, 2, 1.0);
        assert!(SymFactor::new(&st.to_csr()).is_err());
    }
}
