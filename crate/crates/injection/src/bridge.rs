use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use runtime::Matrix;
use serde::{Deserialize, Serialize};

use crate::InjectionError;

/// Linear maps from the student residual (width d) to the compiled
/// residual (width m < d). One shared map, or one per checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearBridge {
    pub maps: Vec<Matrix>,
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows, m.cols, &m.data)
}

/// Numerical rank tolerance used for a matrix with singular values `s`.
fn tolerance(rows: usize, cols: usize, largest: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * largest
}

/// Orthonormal basis (as rows) of the row space of `w`, or a rank error.
pub fn row_space(w: &Matrix) -> Result<Matrix, InjectionError> {
    let svd = to_dmatrix(w).svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s = &svd.singular_values;
    let largest = s.iter().cloned().fold(0.0, f64::max);
    let tol = tolerance(w.rows, w.cols, largest);
    let rank = s.iter().filter(|&&x| x > tol).count();
    if rank < w.rows {
        return Err(InjectionError::RankDeficient {
            rank,
            expected: w.rows,
            smallest: s.iter().cloned().fold(f64::INFINITY, f64::min),
            tolerance: tol,
        });
    }
    let mut basis = Matrix::zeros(rank, w.cols);
    let mut r = 0;
    for (i, &sv) in s.iter().enumerate() {
        if sv > tol {
            for c in 0..w.cols {
                basis[(r, c)] = v_t[(i, c)];
            }
            r += 1;
        }
    }
    Ok(basis)
}

/// Numerical rank of a matrix.
pub fn numerical_rank(w: &Matrix) -> usize {
    let s = to_dmatrix(w).singular_values();
    let largest = s.iter().cloned().fold(0.0, f64::max);
    let tol = tolerance(w.rows, w.cols, largest);
    s.iter().filter(|&&x| x > tol).count()
}

/// Orthogonal projector onto the row space of a full-row-rank `w`.
pub fn subspace_projector(w: &Matrix) -> Result<Matrix, InjectionError> {
    let b = row_space(w)?;
    Ok(b.matmul_tn(&b))
}

impl LinearBridge {
    /// Gaussian maps scaled by 1/sqrt(d), checked for full row rank.
    pub fn init(
        student_width: usize,
        compiled_width: usize,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, InjectionError> {
        if compiled_width >= student_width {
            return Err(InjectionError::Width {
                student: student_width,
                compiled: compiled_width,
            });
        }
        let normal = Normal::new(0.0, 1.0 / (student_width as f64).sqrt()).expect("valid std");
        let maps: Vec<Matrix> = (0..count.max(1))
            .map(|_| {
                let data = (0..compiled_width * student_width)
                    .map(|_| normal.sample(rng))
                    .collect();
                Matrix::from_vec(compiled_width, student_width, data)
            })
            .collect();
        let bridge = Self { maps };
        bridge.check_rank()?;
        Ok(bridge)
    }

    pub fn shared(&self) -> bool {
        self.maps.len() == 1
    }

    /// Map used at compiled checkpoint `i`.
    pub fn map(&self, i: usize) -> &Matrix {
        &self.maps[if self.shared() { 0 } else { i }]
    }

    pub fn check_rank(&self) -> Result<(), InjectionError> {
        for m in &self.maps {
            row_space(m)?;
        }
        Ok(())
    }

    /// `W · h` for one student vector.
    pub fn apply(&self, i: usize, h: &[f64]) -> Vec<f64> {
        let w = self.map(i);
        (0..w.rows)
            .map(|r| w.row(r).iter().zip(h).map(|(a, b)| a * b).sum())
            .collect()
    }
}
