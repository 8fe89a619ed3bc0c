//! Small dense helpers shared by the graph, regulator and optimizer modules.

use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue cutoff used for symmetric pseudoinverses.
pub const PINV_REL_TOL: f64 = 1e-9;

/// Moore–Penrose pseudoinverse of a symmetric matrix through its eigendecomposition.
///
/// Eigenvalues with magnitude below `rel_tol * max|eig|` are treated as zero.
/// Returns the pseudoinverse and the numerical rank.
pub fn sym_pinv(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let eig = m.clone().symmetric_eigen();
    let largest = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let cutoff = rel_tol * largest;
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if largest == 0.0 || ev.abs() <= cutoff {
            continue;
        }
        rank += 1;
        let v = eig.eigenvectors.column(k);
        out += (v * v.transpose()) / ev;
    }
    // symmetrize away rounding
    let out = (&out + out.transpose()) * 0.5;
    (out, rank)
}

/// Thin singular value decomposition `M ≈ U diag(σ) Vᵀ`, keeping `σ > rel_tol · σ_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// Eigenpairs of the augmented matrix `[[0, M], [Mᵀ, 0]]`, whose spectrum is `±σ`
/// plus zeros. nalgebra's bidiagonal SVD loses accuracy on some rank-deficient
/// incidence matrices, while its symmetric eigensolver does not.
fn augmented_eigen(m: &DMatrix<f64>) -> nalgebra::SymmetricEigen<f64, nalgebra::Dyn> {
    let (r, c) = m.shape();
    let mut aug = DMatrix::zeros(r + c, r + c);
    aug.view_mut((0, r), (r, c)).copy_from(m);
    aug.view_mut((r, 0), (c, r)).copy_from(&m.transpose());
    aug.symmetric_eigen()
}

pub fn svd(m: &DMatrix<f64>, rel_tol: f64) -> Svd {
    let (r, c) = m.shape();
    if m.is_empty() {
        return Svd {
            u: DMatrix::zeros(r, 0),
            sigma: Vec::new(),
            v: DMatrix::zeros(c, 0),
        };
    }
    let eig = augmented_eigen(m);
    let largest = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
    let mut keep: Vec<usize> = (0..r + c)
        .filter(|&k| largest > 0.0 && eig.eigenvalues[k] > rel_tol * largest)
        .collect();
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let scale = std::f64::consts::SQRT_2;
    Svd {
        u: DMatrix::from_fn(r, keep.len(), |i, j| scale * eig.eigenvectors[(i, keep[j])]),
        sigma: keep.iter().map(|&k| eig.eigenvalues[k]).collect(),
        v: DMatrix::from_fn(c, keep.len(), |i, j| scale * eig.eigenvectors[(r + i, keep[j])]),
    }
}

/// General pseudoinverse `V diag(1/σ) Uᵀ` with the same relative cutoff rule.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let d = svd(m, rel_tol);
    let inv = DMatrix::from_diagonal(&DVector::from_iterator(d.sigma.len(), d.sigma.iter().map(|s| 1.0 / s)));
    d.v * inv * d.u.transpose()
}

/// All `min(rows, cols)` singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = augmented_eigen(m).eigenvalues.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(m.nrows().min(m.ncols()));
    s.iter().map(|v| v.max(0.0)).collect()
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Block-diagonal matrix from a list of blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Column-major vectorization, `vec(X)`.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v)
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
}

pub fn vinf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
}

/// Converts row-major nested rows into a matrix, checking that rows are rectangular.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
