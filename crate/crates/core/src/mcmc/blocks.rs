//! Gaussian block draws from precision-form full conditionals.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Precision system with arrow structure
///
/// ```text
/// [ diag(d)  C       ] [x1]   [b1]
/// [ C^T      diag(e) ] [x2] = [b2]
/// ```
///
/// `C` is stored by row as sparse `(column, value)` lists. The head block
/// `x2` is small and handled densely through its Schur complement.
#[derive(Clone, Debug, Default)]
pub struct ArrowSystem {
    pub d: Vec<f64>,
    pub b1: Vec<f64>,
    pub c: Vec<Vec<(usize, f64)>>,
    pub e: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ArrowSystem {
    pub fn reset(&mut self, rows: usize, head: usize, d0: f64, e0: f64) {
        self.d.clear();
        self.d.resize(rows, d0);
        self.b1.clear();
        self.b1.resize(rows, 0.0);
        self.c.resize_with(rows, Vec::new);
        self.c.truncate(rows);
        self.c.iter_mut().for_each(Vec::clear);
        self.e.clear();
        self.e.resize(head, e0);
        self.b2.clear();
        self.b2.resize(head, 0.0);
    }

    pub fn add_coupling(&mut self, row: usize, col: usize, value: f64) {
        let list = &mut self.c[row];
        match list.iter_mut().find(|(c, _)| *c == col) {
            Some(entry) => entry.1 += value,
            None => list.push((col, value)),
        }
    }

    fn schur(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let h = self.e.len();
        let mut s = DMatrix::from_diagonal(&DVector::from_column_slice(&self.e));
        for (row, list) in self.c.iter().enumerate() {
            let inv = 1.0 / self.d[row];
            for &(a, va) in list {
                for &(b, vb) in list {
                    s[(a, b)] -= va * vb * inv;
                }
            }
        }
        debug_assert_eq!(s.nrows(), h);
        s.cholesky().ok_or_else(|| {
            Error::Invariant("head Schur complement is not positive definite".into())
        })
    }

    fn check(&self) -> Result<()> {
        if let Some(bad) = self.d.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Invariant(format!(
                "nonpositive conditional precision {bad}"
            )));
        }
        Ok(())
    }

    /// Conditional mean `P^{-1} b`.
    pub fn mean(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.solve(None)
    }

    /// One draw from `N(P^{-1} b, P^{-1})`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        self.solve(Some(rng as &mut dyn rand::RngCore))
    }

    // With P = L L^T, L = [[D^{1/2}, 0], [C^T D^{-1/2}, L_S]], the draw is
    // L^{-T} (L^{-1} b + z).
    fn solve(&self, mut rng: Option<&mut dyn rand::RngCore>) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check()?;
        let n = self.d.len();
        let h = self.e.len();
        let sqrt_d: Vec<f64> = self.d.iter().map(|v| v.sqrt()).collect();
        let mut w1: Vec<f64> = (0..n).map(|j| self.b1[j] / sqrt_d[j]).collect();
        let mut x2 = Vec::new();
        if h > 0 {
            let chol = self.schur()?;
            let mut rhs = DVector::from_column_slice(&self.b2);
            for (row, list) in self.c.iter().enumerate() {
                let scaled = self.b1[row] / self.d[row];
                for &(col, v) in list {
                    rhs[col] -= v * scaled;
                }
            }
            let l = chol.l();
            let mut y2 = l.solve_lower_triangular(&rhs).expect("triangular solve");
            if let Some(r) = rng.as_deref_mut() {
                for v in y2.iter_mut() {
                    *v += r.sample::<f64, _>(StandardNormal);
                }
            }
            let sol = l
                .transpose()
                .solve_upper_triangular(&y2)
                .expect("triangular solve");
            x2 = sol.iter().copied().collect();
        }
        if let Some(r) = rng.as_mut() {
            for v in w1.iter_mut() {
                *v += r.sample::<f64, _>(StandardNormal);
            }
        }
        let x1 = (0..n)
            .map(|j| {
                let cx: f64 = self.c[j].iter().map(|&(col, v)| v * x2[col]).sum();
                w1[j] / sqrt_d[j] - cx / self.d[j]
            })
            .collect();
        Ok((x1, x2))
    }
}

/// One draw from `N(P^{-1} b, P^{-1})` for a small dense precision `P`.
pub fn sample_dense<R: Rng + ?Sized>(
    rng: &mut R,
    precision: DMatrix<f64>,
    b: DVector<f64>,
) -> Result<DVector<f64>> {
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::Invariant("conditional precision is not positive definite".into()))?;
    let mean = chol.solve(&b);
    let z = DVector::from_fn(b.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("triangular solve");
    Ok(mean + noise)
}
