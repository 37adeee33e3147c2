//! Thin LAPACK/CBLAS wrappers plus a Lanczos path for operators too large to
//! densify.
//!
//! Row-major arrays are handed to LAPACK as their column-major transpose:
//! harmless for real symmetric input, and for complex Hermitian input the
//! transpose is the conjugate, so eigenvalues are unchanged and eigenvectors
//! come back conjugated (we undo that).

use ndarray::Array2;
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum EigenError {
    #[error("LAPACK {routine} failed with info = {info}")]
    Lapack { routine: &'static str, info: i32 },
    #[error(
        "Lanczos did not reach residual {tol:e} for the {k} lowest pairs within {max_iter} \
         iterations (worst residual {residual:e})"
    )]
    LanczosNoConvergence {
        k: usize,
        max_iter: usize,
        tol: f64,
        residual: f64,
    },
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn eigvalsh_real(a: &Array2<f64>) -> Result<Vec<f64>, EigenError> {
    let (w, _) = dsyevd(a.clone(), false)?;
    Ok(w)
}

/// Eigen-decomposition of a real symmetric matrix; row `i` of the returned
/// matrix is the eigenvector of `w[i]`.
pub fn eigh_real(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>), EigenError> {
    dsyevd(a.clone(), true)
}

fn dsyevd(mut a: Array2<f64>, vectors: bool) -> Result<(Vec<f64>, Array2<f64>), EigenError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert!(a.is_standard_layout());
    let ni = n as i32;
    let jobz = if vectors { b'V' } else { b'N' } as std::ffi::c_char;
    let uplo = b'L' as std::ffi::c_char;
    let mut w = vec![0.0f64; n];
    let mut info = 0i32;
    unsafe {
        let (mut lwork, mut liwork) = (-1i32, -1i32);
        let (mut wkopt, mut iwkopt) = (0.0f64, 0i32);
        lapack_sys::dsyevd_(
            &jobz, &uplo, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(), &mut wkopt, &lwork,
            &mut iwkopt, &liwork, &mut info,
        );
        if info != 0 {
            return Err(EigenError::Lapack { routine: "dsyevd", info });
        }
        lwork = wkopt as i32;
        liwork = iwkopt;
        let mut work = vec![0.0f64; lwork.max(1) as usize];
        let mut iwork = vec![0i32; liwork.max(1) as usize];
        lapack_sys::dsyevd_(
            &jobz, &uplo, &ni, a.as_mut_ptr(), &ni, w.as_mut_ptr(), work.as_mut_ptr(), &lwork,
            iwork.as_mut_ptr(), &liwork, &mut info,
        );
        if info != 0 {
            return Err(EigenError::Lapack { routine: "dsyevd", info });
        }
    }
    Ok((w, a))
}

/// Eigenvalues of a complex Hermitian matrix, ascending.
pub fn eigvalsh_complex(a: &Array2<C64>) -> Result<Vec<f64>, EigenError> {
    let (w, _) = zheevd(a.clone(), false)?;
    Ok(w)
}

/// Eigen-decomposition of a complex Hermitian matrix; row `i` of the
/// returned matrix is the eigenvector of `w[i]`.
pub fn eigh_complex(a: &Array2<C64>) -> Result<(Vec<f64>, Array2<C64>), EigenError> {
    let (w, mut v) = zheevd(a.clone(), true)?;
    // LAPACK saw conj(A), so conjugate the vectors back.
    v.mapv_inplace(|z| z.conj());
    Ok((w, v))
}

fn zheevd(mut a: Array2<C64>, vectors: bool) -> Result<(Vec<f64>, Array2<C64>), EigenError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert!(a.is_standard_layout());
    let ni = n as i32;
    let jobz = if vectors { b'V' } else { b'N' } as std::ffi::c_char;
    let uplo = b'L' as std::ffi::c_char;
    let mut w = vec![0.0f64; n];
    let mut info = 0i32;
    unsafe {
        let (mut lwork, mut lrwork, mut liwork) = (-1i32, -1i32, -1i32);
        let mut wkopt = C64::new(0.0, 0.0);
        let (mut rwkopt, mut iwkopt) = (0.0f64, 0i32);
        lapack_sys::zheevd_(
            &jobz, &uplo, &ni, a.as_mut_ptr() as *mut _, &ni, w.as_mut_ptr(),
            &mut wkopt as *mut _ as *mut _, &lwork, &mut rwkopt, &lrwork, &mut iwkopt, &liwork,
            &mut info,
        );
        if info != 0 {
            return Err(EigenError::Lapack { routine: "zheevd", info });
        }
        lwork = wkopt.re as i32;
        lrwork = rwkopt as i32;
        liwork = iwkopt;
        let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
        let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
        let mut iwork = vec![0i32; liwork.max(1) as usize];
        lapack_sys::zheevd_(
            &jobz, &uplo, &ni, a.as_mut_ptr() as *mut _, &ni, w.as_mut_ptr(),
            work.as_mut_ptr() as *mut _, &lwork, rwork.as_mut_ptr(), &lrwork,
            iwork.as_mut_ptr(), &liwork, &mut info,
        );
        if info != 0 {
            return Err(EigenError::Lapack { routine: "zheevd", info });
        }
    }
    Ok((w, a))
}

/// `a * b` for complex matrices (BLAS zgemm).
pub fn matmul(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "inner dimensions must agree");
    assert!(a.is_standard_layout() && b.is_standard_layout());
    let mut c = Array2::<C64>::zeros((m, n));
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    unsafe {
        cblas_sys::cblas_zgemm(
            cblas_sys::CBLAS_LAYOUT::CblasRowMajor,
            cblas_sys::CBLAS_TRANSPOSE::CblasNoTrans,
            cblas_sys::CBLAS_TRANSPOSE::CblasNoTrans,
            m as i32, n as i32, k as i32,
            &one as *const _ as *const _,
            a.as_ptr() as *const _, k as i32,
            b.as_ptr() as *const _, n as i32,
            &zero as *const _ as *const _,
            c.as_mut_ptr() as *mut _, n as i32,
        );
    }
    c
}

/// Conjugate transpose.
pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    let mut out = Array2::<C64>::zeros((a.ncols(), a.nrows()));
    for ((i, j), v) in a.indexed_iter() {
        out[(j, i)] = v.conj();
    }
    out
}

/// `u^dag * h * u`.
pub fn conjugate_by(h: &Array2<C64>, u: &Array2<C64>) -> Array2<C64> {
    matmul(&dagger(u), &matmul(h, u))
}

/// Max entry magnitude.
pub fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Max entrywise difference.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Deterministic start vector for Lanczos runs.
fn seeded_unit_vector(dim: usize, seed: u64) -> Vec<C64> {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).max(1);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut v: Vec<C64> = (0..dim).map(|_| C64::new(next(), 0.0)).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in &mut v {
        *z /= norm;
    }
    v
}

/// Smallest `k` eigenvalues of a Hermitian operator given only its matvec,
/// by Lanczos with full reorthogonalization. Each returned pair satisfies
/// `|H v - lambda v| <= tol` (estimated through the Lanczos residual bound);
/// failing that after `max_iter` Krylov steps is an error.
pub fn lanczos_smallest(
    matvec: &dyn Fn(&[C64], &mut [C64]),
    dim: usize,
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, EigenError> {
    assert!(k >= 1 && k <= dim);
    let max_iter = max_iter.min(dim);
    let mut basis: Vec<Vec<C64>> = vec![seeded_unit_vector(dim, 0x5eed)];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut work = vec![C64::new(0.0, 0.0); dim];
    let mut worst = f64::INFINITY;

    for m in 1..=max_iter {
        let v = basis.last().unwrap().clone();
        matvec(&v, &mut work);
        // alpha = <v, H v>
        let alpha: f64 = v
            .iter()
            .zip(&work)
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        alphas.push(alpha);
        // w = H v - alpha v - beta v_prev, then full reorthogonalization
        for (w, &vi) in work.iter_mut().zip(&v) {
            *w -= alpha * vi;
        }
        if let Some(beta) = betas.last() {
            let prev = &basis[basis.len() - 2];
            for (w, &pi) in work.iter_mut().zip(prev) {
                *w -= *beta * pi;
            }
        }
        for b in &basis {
            let overlap: C64 = b.iter().zip(&work).map(|(x, y)| x.conj() * y).sum();
            for (w, &bi) in work.iter_mut().zip(b) {
                *w -= overlap * bi;
            }
        }
        let beta = work.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();

        // check Ritz residuals every few steps once we have enough pairs
        if m >= k && (m % 8 == 0 || m == max_iter || beta < 1e-14) {
            let (ritz, svec) = tridiag_eigh(&alphas, &betas)?;
            worst = (0..k)
                .map(|i| beta * svec[(m - 1) * m + i].abs())
                .fold(0.0, f64::max);
            let scale = ritz
                .iter()
                .take(k)
                .map(|x| x.abs())
                .fold(1.0f64, f64::max);
            if worst <= tol * scale || beta < 1e-14 {
                return Ok(ritz.into_iter().take(k).collect());
            }
        }
        if beta < 1e-14 {
            // invariant subspace exhausted before k pairs converged
            let (ritz, _) = tridiag_eigh(&alphas, &betas)?;
            return Ok(ritz.into_iter().take(k).collect());
        }
        if m < max_iter {
            let next: Vec<C64> = work.iter().map(|z| z / beta).collect();
            betas.push(beta);
            basis.push(next);
        }
    }
    Err(EigenError::LanczosNoConvergence {
        k,
        max_iter,
        tol,
        residual: worst,
    })
}

/// Dense eigh of the symmetric tridiagonal (alphas, betas); returns
/// eigenvalues ascending and the dense eigenvector matrix in column-major
/// order as a flat vec (column j = eigenvector j), row-major transposed.
fn tridiag_eigh(alphas: &[f64], betas: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EigenError> {
    let m = alphas.len();
    let mut t = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let (w, v) = eigh_real(&t)?;
    // row i of v is eigenvector i; flatten so that [row * m + i] indexes
    // component `row` of eigenvector i
    let mut flat = vec![0.0f64; m * m];
    for i in 0..m {
        for r in 0..m {
            flat[r * m + i] = v[(i, r)];
        }
    }
    Ok((w, flat))
}
