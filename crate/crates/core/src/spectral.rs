//! Linear-algebra primitives: pseudoinverse, row-space membership, a general
//! (complex) eigendecomposition and the simultaneous-diagonalization routine
//! that recovers a shared factor of two matrix products.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex<f64>>;

/// Relative singular-value cutoff used when deciding the rank of `X` in [`decompose`].
pub const DECOMPOSE_RANK_TOL: f64 = 1e-10;
/// Minimum relative gap between eigenvalues accepted by [`decompose`].
pub const EIGEN_SEPARATION_TOL: f64 = 1e-8;
/// Imaginary parts below this (relative) are discarded.
pub const IMAG_TOL: f64 = 1e-9;

/// Singular values below `PINV_RCOND * σ_max` are treated as zero.
pub const PINV_RCOND: f64 = 1e-12;

/// Thin SVD `M = U diag(σ) Vᵀ`, singular values descending.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn to_faer_c(m: &CMatrix) -> faer::Mat<Complex<f64>> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD computed by faer.
pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    if r == 0 {
        return Svd { u: DMatrix::zeros(rows, 0), singular_values: DVector::zeros(0), v: DMatrix::zeros(cols, 0) };
    }
    let f = to_faer(m);
    let dec = f.thin_svd().expect("SVD did not converge");
    let s = dec.S().column_vector();
    Svd {
        u: from_faer(dec.U()),
        singular_values: DVector::from_fn(r, |i, _| s[i]),
        v: from_faer(dec.V()),
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    to_faer(m).singular_values().expect("SVD did not converge")
}

fn singular_values_c(m: &CMatrix) -> Vec<f64> {
    to_faer_c(m).singular_values().expect("SVD did not converge")
}

/// Moore-Penrose pseudoinverse with a relative singular-value cutoff of [`PINV_RCOND`].
pub fn pseudoinverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let dec = svd(m);
    let mut out = DMatrix::zeros(cols, rows);
    let Some(&top) = dec.singular_values.as_slice().first() else {
        return out;
    };
    for (i, &s) in dec.singular_values.iter().enumerate() {
        if s > PINV_RCOND * top {
            out += dec.v.column(i) * dec.u.column(i).transpose() / s;
        }
    }
    out
}

/// Outcome of a row-space membership test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowSpaceCheck {
    pub member: bool,
    /// `‖v - P v‖ / ‖v‖` where `P` projects onto the row space.
    pub residual: f64,
}

/// Whether `v` lies in the row space of `m`, up to relative tolerance `tol`.
pub fn in_rowspace(m: &DMatrix<f64>, v: &DVector<f64>, tol: f64) -> Result<RowSpaceCheck> {
    if v.len() != m.ncols() {
        return Err(Error::Dimension(format!(
            "vector of length {} against a matrix with {} columns",
            v.len(),
            m.ncols()
        )));
    }
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(RowSpaceCheck { member: true, residual: 0.0 });
    }
    let basis = row_space_basis(m);
    let coeffs = basis.transpose() * v;
    let residual = (v - &basis * coeffs).norm() / norm;
    Ok(RowSpaceCheck { member: residual <= tol, residual })
}

/// Orthonormal basis (as columns) of the row space of `m`.
pub fn row_space_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let dec = svd(m);
    let top = dec.singular_values.as_slice().first().copied().unwrap_or(0.0);
    let r = dec.singular_values.iter().filter(|&&s| s > PINV_RCOND * top).count();
    dec.v.columns(0, r).into_owned()
}

/// Eigenvalues and unit-norm eigenvectors (as columns) of a real square matrix.
pub fn eigen_decompose(z: &DMatrix<f64>) -> Result<(Vec<Complex<f64>>, CMatrix)> {
    let k = z.nrows();
    if z.ncols() != k {
        return Err(Error::Dimension(format!("eigendecomposition of a {}x{} matrix", k, z.ncols())));
    }
    if k == 0 {
        return Ok((Vec::new(), CMatrix::zeros(0, 0)));
    }
    let dec = to_faer(z)
        .eigen()
        .map_err(|e| Error::IllConditioned(format!("eigendecomposition failed: {e:?}")))?;
    let s = dec.S().column_vector();
    let u = dec.U();
    let values: Vec<Complex<f64>> = (0..k).map(|i| s[i]).collect();
    let mut vectors = CMatrix::from_fn(k, k, |i, j| u[(i, j)]);
    for mut col in vectors.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col.unscale_mut(n);
        }
    }
    Ok((values, vectors))
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex::new(v, 0.0))
}

/// Largest `|imag|` relative to the largest modulus.
pub fn imaginary_residue(m: &CMatrix) -> f64 {
    let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    m.iter().map(|c| c.im.abs()).fold(0.0, f64::max) / scale
}

/// Rotates each column so its largest-modulus entry is real and positive,
/// then reports the real part and the remaining imaginary residue.
pub fn realify_columns(m: &CMatrix) -> (DMatrix<f64>, f64) {
    let mut rotated = m.clone();
    for mut col in rotated.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or(Complex::new(1.0, 0.0));
        if pivot.norm() > 0.0 {
            let phase = pivot / pivot.norm();
            col.iter_mut().for_each(|c| *c /= phase);
        }
    }
    (rotated.map(|c| c.re), imaginary_residue(&rotated))
}

fn min_singular_value_c(m: &CMatrix) -> f64 {
    singular_values_c(m).last().copied().unwrap_or(0.0)
}

#[derive(Clone, Debug)]
pub struct DecomposeResult {
    /// `M1 Π S` with each column rotated to be real.
    pub recovered: DMatrix<f64>,
    /// The same columns before rotation.
    pub recovered_complex: CMatrix,
    /// Diagonal of `D`, permuted like the recovered columns.
    pub eigenvalues: Vec<Complex<f64>>,
    /// Relative imaginary residue left in `recovered` after rotation.
    pub imag_residue: f64,
    /// Smallest singular value of `U1ᵀ X U2`.
    pub min_sv_projected: f64,
    /// Smallest singular value of the eigenvector matrix.
    pub min_sv_eigenvectors: f64,
    /// Smallest pairwise eigenvalue gap relative to the largest modulus.
    pub separation: f64,
}

/// Given `X = M1 M2ᵀ` and `Y = M1 D M2ᵀ` with rank-`k` factors and distinct
/// diagonal `D`, recovers `M1` up to column permutation and scaling.
pub fn decompose(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<DecomposeResult> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension(format!("X is {:?} but Y is {:?}", x.shape(), y.shape())));
    }
    let (rows, cols) = x.shape();
    if k == 0 || k > rows.min(cols) {
        return Err(Error::RankDeficient(format!(
            "cannot extract {k} components from a {rows}x{cols} matrix"
        )));
    }
    let dec = svd(x);
    let sv = &dec.singular_values;
    if sv[k - 1] <= DECOMPOSE_RANK_TOL * sv[0] || sv[0] == 0.0 {
        return Err(Error::RankDeficient(format!(
            "X has numerical rank below {k} (σ_{k} / σ_1 = {:e})",
            if sv[0] == 0.0 { 0.0 } else { sv[k - 1] / sv[0] }
        )));
    }
    let u1 = dec.u.columns(0, k).into_owned();
    let u2 = dec.v.columns(0, k).into_owned();
    let projected_x = u1.transpose() * x * &u2;
    let projected_y = u1.transpose() * y * &u2;
    let inv = projected_x
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("U1ᵀ X U2 is singular".into()))?;
    let z = projected_y * inv;
    let (eigenvalues, v) = eigen_decompose(&z)?;

    let scale = eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let mut separation = f64::INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            separation = separation.min((eigenvalues[i] - eigenvalues[j]).norm());
        }
    }
    let separation = if scale > 0.0 { separation / scale } else { 0.0 };
    if k > 1 && separation < EIGEN_SEPARATION_TOL {
        return Err(Error::IllConditioned(format!(
            "eigenvalues are not distinct (relative separation {separation:e})"
        )));
    }

    let recovered_complex = to_complex(&u1) * &v;
    let (recovered, imag_residue) = realify_columns(&recovered_complex);
    Ok(DecomposeResult {
        recovered,
        recovered_complex,
        eigenvalues,
        imag_residue,
        min_sv_projected: singular_values(&projected_x).last().copied().unwrap_or(0.0),
        min_sv_eigenvectors: min_singular_value_c(&v),
        separation,
    })
}

/// Divides each column by its sum.
pub fn normalize_columns_to_stochastic(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let s: f64 = col.sum();
        if s.abs() < 1e-300 {
            return Err(Error::IllConditioned(format!("column {j} sums to zero")));
        }
        col /= s;
    }
    Ok(out)
}

/// Clips negative entries to zero and renormalizes columns.
pub fn project_to_stochastic(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.map(|v| v.max(0.0));
    let rows = out.nrows();
    for mut col in out.column_iter_mut() {
        let s: f64 = col.sum();
        if s > 0.0 {
            col /= s;
        } else {
            col.fill(1.0 / rows as f64);
        }
    }
    out
}
