//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix with eigenpairs ordered by
/// descending eigenvalue magnitude. Ties keep the solver order, so the
/// result is deterministic for identical input.
pub fn sorted_sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .partial_cmp(&eig.eigenvalues[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Eigenpairs of a symmetric positive (semi)definite matrix ordered by
/// descending eigenvalue (algebraic).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Skew part `(A - A^T) / 2`.
pub fn skew(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m - m.transpose()) * 0.5
}

/// Matrix commutator `AB - BA`.
pub fn commutator(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a * b - b * a
}

/// Largest absolute entry of `A - A^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Largest absolute entry of `A + A^T`.
pub fn skew_defect(m: &DMatrix<f64>) -> f64 {
    (m + m.transpose()).amax()
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Numerical rank with singular values below `rel_tol * sigma_max` counted as zero.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&v| v > rel_tol * smax).count(),
        _ => 0,
    }
}

/// Orthonormal basis of the orthogonal complement of the column span of `v`
/// (assumed orthonormal), returned as an `n x (n - d)` matrix.
pub fn orthogonal_complement(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let d = v.ncols();
    let proj = DMatrix::identity(n, n) - v * v.transpose();
    let (_, vecs) = sym_eigen_desc(&proj);
    vecs.columns(0, n - d).into_owned()
}

/// Moore-Penrose pseudoinverse of a symmetric matrix with eigenvalues below
/// `rel_cutoff * max|lambda|` dropped. Returns the inverse and its rank.
pub fn sym_pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> (DMatrix<f64>, usize) {
    let (vals, vecs) = sorted_sym_eigen(m);
    let n = vals.len();
    let vmax = vals.first().map(|v| v.abs()).unwrap_or(0.0);
    let mut inv_diag = DVector::zeros(n);
    let mut rank = 0;
    for (i, &l) in vals.iter().enumerate() {
        if vmax > 0.0 && l.abs() > rel_cutoff * vmax {
            inv_diag[i] = 1.0 / l;
            rank += 1;
        }
    }
    let inv = &vecs * DMatrix::from_diagonal(&inv_diag) * vecs.transpose();
    (inv, rank)
}

/// Row-stack a sequence of equally wide matrices.
pub fn vstack(frames: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = frames.first().map(|f| f.ncols()).unwrap_or(0);
    let rows: usize = frames.iter().map(|f| f.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for f in frames {
        out.view_mut((r, 0), (f.nrows(), cols)).copy_from(f);
        r += f.nrows();
    }
    out
}

/// Select the given rows of `m`.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}
