//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{AnpgError, Result};

/// Eigen-decomposition based Moore–Penrose pseudoinverse of a symmetric PSD
/// matrix. Eigenvalues at or below `cutoff * max_eigenvalue` are treated as 0.
#[derive(Clone, Debug)]
pub struct SymmetricPinv {
    pub pinv: DMatrix<f64>,
    /// Orthogonal projector onto the retained eigenspace (the row space).
    pub projector: DMatrix<f64>,
    pub rank: usize,
    pub eigenvalues: DVector<f64>,
}

pub fn symmetric_pinv(matrix: &DMatrix<f64>, relative_cutoff: f64) -> Result<SymmetricPinv> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(AnpgError::DimensionMismatch {
            what: "square matrix",
            expected: n,
            got: matrix.ncols(),
        });
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(AnpgError::NonFinite("pseudoinverse input".into()));
    }
    let eig = SymmetricEigen::try_new(matrix.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| AnpgError::Numerical("symmetric eigen-decomposition did not converge".into()))?;
    let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let threshold = relative_cutoff * max_abs;
    let mut pinv = DMatrix::zeros(n, n);
    let mut projector = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if max_abs > 0.0 && lambda.abs() > threshold {
            let u = eig.eigenvectors.column(i);
            let outer = u * u.transpose();
            pinv += &outer / lambda;
            projector += outer;
            rank += 1;
        }
    }
    Ok(SymmetricPinv {
        pinv,
        projector,
        rank,
        eigenvalues: eig.eigenvalues,
    })
}

pub fn min_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(matrix.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue together with its unit eigenvector.
pub fn min_eigenpair(matrix: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(matrix.clone());
    let (idx, value) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    (value, eig.eigenvectors.column(idx).into_owned())
}

/// Orthonormal basis (as columns) of the vectors whose entries sum to zero
/// inside each consecutive block of `block` coordinates.
pub fn blockwise_zero_sum_basis(n_blocks: usize, block: usize) -> DMatrix<f64> {
    let cols = n_blocks * block.saturating_sub(1);
    let mut basis = DMatrix::zeros(n_blocks * block, cols);
    let mut col = 0;
    for b in 0..n_blocks {
        let offset = b * block;
        // Helmert contrasts: (1, ..., 1, -j, 0, ...) / sqrt(j (j + 1)).
        for j in 1..block {
            let norm = ((j * (j + 1)) as f64).sqrt();
            for i in 0..j {
                basis[(offset + i, col)] = 1.0 / norm;
            }
            basis[(offset + j, col)] = -(j as f64) / norm;
            col += 1;
        }
    }
    basis
}

pub fn outer(u: &DVector<f64>) -> DMatrix<f64> {
    u * u.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinv_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let p = symmetric_pinv(&m, 1e-10).unwrap();
        let w = &p.pinv * DVector::from_vec(vec![2.0, 4.0]);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-14);
        assert_eq!(p.rank, 2);
    }

    #[test]
    fn pinv_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        let p = symmetric_pinv(&m, 1e-10).unwrap();
        assert_eq!(p.rank, 1);
        let g = DVector::from_vec(vec![0.3, -0.3]);
        let w = &p.pinv * &g;
        assert_abs_diff_eq!((&m * &w - &g).norm(), 0.0, epsilon = 1e-12);
        // the null direction (1, 1) is projected out
        let ones = DVector::from_vec(vec![1.0, 1.0]);
        assert_abs_diff_eq!((&p.projector * ones).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_matrix_has_zero_pinv() {
        let p = symmetric_pinv(&DMatrix::zeros(3, 3), 1e-10).unwrap();
        assert_eq!(p.rank, 0);
        assert_eq!(p.pinv, DMatrix::zeros(3, 3));
    }

    #[test]
    fn helmert_basis_is_orthonormal_and_zero_sum() {
        let q = blockwise_zero_sum_basis(3, 4);
        assert_eq!(q.shape(), (12, 9));
        let gram = q.transpose() * &q;
        assert_abs_diff_eq!((gram - DMatrix::identity(9, 9)).norm(), 0.0, epsilon = 1e-12);
        for c in 0..9 {
            for b in 0..3 {
                let s: f64 = (0..4).map(|i| q[(b * 4 + i, c)]).sum();
                assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
            }
        }
    }
}
