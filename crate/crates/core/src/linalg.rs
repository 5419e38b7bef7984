//! Dense complex matrix helpers shared by the channel model, the precoder
//! design and the simulator.
//!
//! Everything here works on [`ComplexMatrix`], a heap-allocated
//! `nalgebra::DMatrix<Complex64>`. The matrices in this crate are tiny
//! (at most a handful of antennas per side), so the helpers favour clarity
//! over blocking or in-place tricks.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

/// Tolerance used when deciding whether a matrix is Hermitian / PSD.
pub const PSD_TOL: f64 = 1e-10;

/// Largest condition-number estimate accepted by [`solve_hpd`].
pub const MAX_CONDITION: f64 = 1e12;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> ComplexMatrix {
    ComplexMatrix::identity(n, n)
}

pub fn zeros(rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::zeros(rows, cols)
}

/// Builds a complex matrix from a real one.
pub fn from_real(m: &DMatrix<f64>) -> ComplexMatrix {
    m.map(|x| c(x, 0.0))
}

/// The `rows x cols` matrix with ones on the leading diagonal.
pub fn leading_identity(rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(
        rows,
        cols,
        |i, j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) },
    )
}

/// Draws one CN(0, 1) sample: real and imaginary parts are N(0, 1/2).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix of i.i.d. CN(0, 1) entries, filled row-major.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    let mut m = zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = complex_gaussian(rng);
        }
    }
    m
}

pub fn trace_re(m: &ComplexMatrix) -> f64 {
    m.trace().re
}

/// `Tr{A B}` without forming the product.
pub fn trace_of_product(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = c(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn frobenius_sq(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &ComplexMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Frobenius norm of `U^H U - I`.
pub fn unitarity_residual(u: &ComplexMatrix) -> f64 {
    let gram = u.adjoint() * u;
    (gram - identity(u.ncols())).norm()
}

fn check_hermitian(a: &ComplexMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.norm().max(1.0);
    if hermitian_defect(a) > PSD_TOL * scale {
        return Err(Error::InvalidArgument("matrix is not Hermitian".into()));
    }
    Ok(())
}

/// Hermitian square root of a Hermitian PSD matrix via eigen-decomposition.
///
/// Eigenvalues in `[-PSD_TOL, 0)` are clipped to zero; anything more
/// negative is rejected.
pub fn psd_sqrt(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_hermitian(a)?;
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    // Symmetrise first so round-off in the input does not leak into the
    // eigenvectors.
    let sym = (a + a.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut root = zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -PSD_TOL * scale {
            return Err(Error::InvalidArgument(format!(
                "matrix is not positive semidefinite (eigenvalue {lam:.3e})"
            )));
        }
        let s = lam.max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        root += (v * v.adjoint()) * c(s, 0.0);
    }
    Ok(root)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &ComplexMatrix) -> Result<Vec<f64>> {
    check_hermitian(a)?;
    let sym = (a + a.adjoint()) * c(0.5, 0.0);
    let mut vals: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    vals.sort_by(|x, y| x.total_cmp(y));
    Ok(vals)
}

/// Solves `A X = B` for Hermitian positive definite `A` by Cholesky.
///
/// The condition number is estimated from the Cholesky diagonal
/// (`(max l_ii / min l_ii)^2`, a lower bound on the 2-norm condition number)
/// and systems beyond [`MAX_CONDITION`] are refused.
pub fn solve_hpd(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "system is {}x{}, right-hand side has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let chol: Cholesky<Complex64, Dyn> =
        Cholesky::new(a.clone()).ok_or(Error::IllConditioned(f64::INFINITY))?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..l.nrows() {
        let d = l[(i, i)].re;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let cond = (hi / lo).powi(2);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::IllConditioned(cond));
    }
    Ok(chol.solve(b))
}
