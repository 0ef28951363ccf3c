//! Small dense linear-algebra kernels used by the factorization and sketch
//! modules: seeded Gaussian matrices, a thin QR orthonormalizer, and a
//! deterministic symmetric eigensolver (Householder tridiagonalization
//! followed by implicit-shift QL).
//!
//! Everything here is serial and bit-reproducible for a fixed input.

use ndarray::{s, Array1, Array2};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Default negligibility tolerance for the QL sweep.
pub const EIG_TOL: f64 = 1e-12;
/// QL iterations allowed per eigenvalue before reporting failure.
pub const EIG_MAX_ITER: usize = 60;

/// Fill a `rows x cols` matrix with i.i.d. `N(0, std^2)` entries, drawn in
/// row-major order so the result depends only on the generator state.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((rows, cols));
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = z * std;
    }
    out
}

/// Orthonormalize the columns of `y` (d x q, d >= q) by classical
/// Gram-Schmidt with a second re-orthogonalization pass.
///
/// Columns that turn out linearly dependent on earlier ones are returned as
/// all-zero columns rather than dropped, so the output keeps the shape of
/// the input and downstream quadratic forms simply ignore them.
pub fn orthonormalize_columns(y: &Array2<f64>) -> Array2<f64> {
    let (d, q) = y.dim();
    debug_assert!(d >= q, "thin QR expects at least as many rows as columns");
    let mut qmat = Array2::<f64>::zeros((d, q));
    for j in 0..q {
        let mut v = y.column(j).to_owned();
        let orig = v.dot(&v).sqrt();
        if orig == 0.0 {
            continue;
        }
        // Two passes of projection against the columns formed so far.
        for _ in 0..2 {
            if j > 0 {
                let prev = qmat.slice(s![.., 0..j]);
                let coeffs = prev.t().dot(&v);
                v -= &prev.dot(&coeffs);
            }
        }
        let nrm = v.dot(&v).sqrt();
        if nrm > 1e-12 * orig {
            v.mapv_inplace(|x| x / nrm);
            qmat.column_mut(j).assign(&v);
        }
    }
    qmat
}

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns, so `a = vecs * diag(vals) * vecs^T` up to the stated tolerance.
pub fn sym_eig(a: &Array2<f64>, tol: f64, max_iter: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols(), "sym_eig expects a square matrix");
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    let mut v = a.clone();
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    ql_implicit(&mut v, &mut d, &mut e, tol, max_iter)?;
    sort_ascending(&mut v, &mut d);
    Ok((Array1::from_vec(d), v))
}

/// Householder reduction of a symmetric matrix to tridiagonal form,
/// accumulating the orthogonal transformation in `v`.
#[allow(clippy::needless_range_loop)]
fn tridiagonalize(v: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
                v[[j, i]] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = 0.0;
            }

            for j in 0..i {
                let f = d[j];
                v[[j, i]] = f;
                let mut g = e[j] + v[[j, j]] * f;
                for k in (j + 1)..i {
                    g += v[[k, j]] * d[k];
                    e[k] += v[[k, j]] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[[k, j]] -= f * e[k] + g * d[k];
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = 0.0;
            }
        }
        d[i] = h;
    }

    // Accumulate the Householder transformations.
    for i in 0..(n - 1) {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for (k, item) in d.iter_mut().enumerate().take(i + 1) {
                *item = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    v[[k, j]] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = 0.0;
    }
    v[[n - 1, n - 1]] = 1.0;
    e[0] = 0.0;
}

/// Implicit-shift QL sweeps on a symmetric tridiagonal matrix, updating the
/// accumulated eigenvector matrix `v` in place.
fn ql_implicit(
    v: &mut Array2<f64>,
    d: &mut [f64],
    e: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= tol * tst1 {
                break;
            }
            m += 1;
        }
        if m >= n {
            m = n - 1;
        }

        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::Numerical(format!(
                        "eigendecomposition did not converge within {max_iter} QL iterations"
                    )));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    for k in 0..n {
                        let h = v[[k, i + 1]];
                        v[[k, i + 1]] = s * v[[k, i]] + c * h;
                        v[[k, i]] = c * v[[k, i]] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;

                if e[l].abs() <= tol * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[allow(clippy::needless_range_loop)]
fn sort_ascending(v: &mut Array2<f64>, d: &mut [f64]) {
    let n = d.len();
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for j in (i + 1)..n {
            if d[j] < p {
                k = j;
                p = d[j];
            }
        }
        if k != i {
            d.swap(i, k);
            for row in 0..n {
                let tmp = v[[row, i]];
                v[[row, i]] = v[[row, k]];
                v[[row, k]] = tmp;
            }
        }
    }
}
