use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Lowest eigenpair of a dense symmetric matrix.
pub(crate) fn lowest_eigenpair(matrix: DMatrix<f64>) -> (f64, DVector<f64>) {
    let eigen = SymmetricEigen::new(matrix);
    let (idx, &value) = eigen
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    (value, eigen.eigenvectors.column(idx).into_owned())
}

/// Lowest eigenpair of `H x = λ S x` for symmetric `H` and positive
/// semi-definite `S`. Overlap eigenvalues below `floor · max` are dropped and
/// the problem is solved in the remaining subspace; the returned vector is
/// normalized so that `xᵀ S x = 1`.
pub(crate) fn generalized_lowest(
    h: &DMatrix<f64>,
    s: &DMatrix<f64>,
    floor: f64,
) -> Result<(f64, DVector<f64>)> {
    let s_eig = SymmetricEigen::new(s.clone());
    let max = s_eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::DegenerateState(
            "overlap matrix has no positive eigenvalue".into(),
        ));
    }
    let kept: Vec<usize> = (0..s_eig.eigenvalues.len())
        .filter(|&i| s_eig.eigenvalues[i] > floor * max)
        .collect();
    let dim = h.nrows();
    let mut x = DMatrix::zeros(dim, kept.len());
    for (col, &i) in kept.iter().enumerate() {
        let scale = 1.0 / s_eig.eigenvalues[i].sqrt();
        x.set_column(col, &(s_eig.eigenvectors.column(i) * scale));
    }
    let reduced = x.transpose() * h * &x;
    // symmetrize away round-off before the eigensolve
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let (value, y) = lowest_eigenpair(reduced);
    Ok((value, x * y))
}
