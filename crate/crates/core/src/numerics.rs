//! Dense symmetric eigendecomposition, SVD, and PSD matrix power kernels.
//!
//! Everything here targets small dense matrices (at most a few hundred rows),
//! so the implementations favour robustness over speed: cyclic Jacobi for the
//! symmetric eigenproblem and one-sided Jacobi (Hestenes) for the SVD. Both
//! deliver near machine-precision residuals regardless of conditioning.

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 64;

/// Eigendecomposition of a real symmetric matrix.
///
/// Eigenvalues are sorted in descending order; `eigenvectors` holds the
/// matching orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

/// Thin singular value decomposition `A = U diag(s) Vt` with
/// `r = min(nrows, ncols)` retained components.
#[derive(Debug, Clone)]
pub struct Svd {
    /// N x r, orthonormal columns.
    pub u: Array2<f64>,
    /// Length r, nonnegative, descending.
    pub singular_values: Array1<f64>,
    /// r x M, orthonormal rows.
    pub vt: Array2<f64>,
}

fn max_abs(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

fn check_finite(a: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Flip sign of each column of `u` so its largest-magnitude entry is
/// positive; applies the matching flip to the rows of `vt` when given.
fn fix_column_signs(u: &mut Array2<f64>, mut vt: Option<&mut Array2<f64>>) {
    for j in 0..u.ncols() {
        let col = u.column(j);
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if u[[best, j]] < 0.0 {
            u.column_mut(j).mapv_inplace(|v| -v);
            if let Some(vt) = vt.as_deref_mut() {
                vt.row_mut(j).mapv_inplace(|v| -v);
            }
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input must be square and symmetric within `1e-12` relative asymmetry.
pub fn sym_eig(a: ArrayView2<'_, f64>) -> Result<SymEig> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "sym_eig expects a nonempty square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    check_finite(a, "sym_eig input")?;
    let scale = max_abs(a);
    if scale > 0.0 {
        let mut asym = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((a[[i, j]] - a[[j, i]]).abs());
            }
        }
        let rel = asym / scale;
        if rel > 1e-12 {
            return Err(Error::NotSymmetric {
                asymmetry: rel,
                tolerance: 1e-12,
            });
        }
    }

    // Work on the exactly symmetrized matrix.
    let mut w = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            w[[i, j]] = 0.5 * (a[[i, j]] + a[[j, i]]);
        }
    }
    let mut v = Array2::<f64>::eye(n);
    let frob = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob == 0.0 {
        return Ok(SymEig {
            eigenvalues: Array1::zeros(n),
            eigenvectors: v,
        });
    }
    let tol = (n as f64) * f64::EPSILON * frob;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = {
            let mut s = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    s += 2.0 * w[[i, j]] * w[[i, j]];
                }
            }
            s.sqrt()
        };
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = w[[p, q]];
                if apq.abs() <= f64::EPSILON * frob * 1e-3 {
                    continue;
                }
                let theta = (w[[q, q]] - w[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                let app = w[[p, p]];
                let aqq = w[[q, q]];
                w[[p, p]] = app - t * apq;
                w[[q, q]] = aqq + t * apq;
                w[[p, q]] = 0.0;
                w[[q, p]] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = w[[i, p]];
                        let aiq = w[[i, q]];
                        w[[i, p]] = c * aip - s * aiq;
                        w[[p, i]] = w[[i, p]];
                        w[[i, q]] = s * aip + c * aiq;
                        w[[q, i]] = w[[i, q]];
                    }
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Convergence {
            algorithm: "jacobi eigendecomposition",
            iterations: MAX_SWEEPS,
        });
    }

    // Sort eigenpairs descending by eigenvalue.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[[j, j]].partial_cmp(&w[[i, i]]).unwrap());
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| w[[i, i]]));
    let mut eigenvectors = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.column_mut(dst).assign(&v.column(src));
    }
    fix_column_signs(&mut eigenvectors, None);

    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Thin SVD via one-sided Jacobi orthogonalization.
///
/// The sign ambiguity is resolved by making the largest-magnitude entry of
/// each column of `U` positive, so factorizations are reproducible.
pub fn svd(a: ArrayView2<'_, f64>) -> Result<Svd> {
    let (n, m) = (a.nrows(), a.ncols());
    if n == 0 || m == 0 {
        return Err(Error::ShapeMismatch(format!(
            "svd expects a nonempty matrix, got {}x{}",
            n, m
        )));
    }
    check_finite(a, "svd input")?;

    let transposed = n < m;
    let b = if transposed {
        a.t().to_owned()
    } else {
        a.to_owned()
    };
    let (u_b, sigma, v_b) = one_sided_jacobi(b)?;

    let (mut u, vt) = if transposed {
        (v_b, u_b.reversed_axes())
    } else {
        let mut vt = v_b.reversed_axes();
        // reversed_axes leaves a transposed layout; keep it standard
        vt = vt.as_standard_layout().to_owned();
        (u_b, vt)
    };
    let mut vt = vt.as_standard_layout().to_owned();
    fix_column_signs(&mut u, Some(&mut vt));

    Ok(Svd {
        u,
        singular_values: sigma,
        vt,
    })
}

/// One-sided Jacobi on a tall matrix `b` (nrows >= ncols). Returns
/// `(U, sigma, V)` with `b = U diag(sigma) V^T`, sigma descending.
fn one_sided_jacobi(mut b: Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let n = b.nrows();
    let m = b.ncols();
    debug_assert!(n >= m);
    let mut v = Array2::<f64>::eye(m);

    let mut converged = m < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..m - 1 {
            for q in (p + 1)..m {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..n {
                    let bp = b[[i, p]];
                    let bq = b[[i, q]];
                    alpha += bp * bp;
                    beta += bq * bq;
                    gamma += bp * bq;
                }
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let bp = b[[i, p]];
                    let bq = b[[i, q]];
                    b[[i, p]] = c * bp - s * bq;
                    b[[i, q]] = s * bp + c * bq;
                }
                for i in 0..m {
                    let vp = v[[i, p]];
                    let vq = v[[i, q]];
                    v[[i, p]] = c * vp - s * vq;
                    v[[i, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            algorithm: "one-sided jacobi svd",
            iterations: MAX_SWEEPS,
        });
    }

    // Column norms are the singular values; sort descending.
    let mut norms: Vec<(usize, f64)> = (0..m)
        .map(|j| (j, b.column(j).iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect();
    norms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

    let sigma = Array1::from_iter(norms.iter().map(|&(_, s)| s));
    let mut v_sorted = Array2::<f64>::zeros((m, m));
    let mut u = Array2::<f64>::zeros((n, m));
    let s_max = sigma[0];
    let tiny = s_max * 1e-13;

    let mut deficient = Vec::new();
    for (dst, &(src, s)) in norms.iter().enumerate() {
        v_sorted.column_mut(dst).assign(&v.column(src));
        if s > tiny && s > 0.0 {
            let col = b.column(src).mapv(|x| x / s);
            u.column_mut(dst).assign(&col);
        } else {
            deficient.push(dst);
        }
    }
    // Numerically zero columns get a deterministic orthonormal completion.
    for &j in &deficient {
        complete_orthonormal_column(&mut u, j);
    }

    Ok((u, sigma, v_sorted))
}

/// Fill column `j` of `u` with a unit vector orthogonal to all other nonzero
/// columns, picked deterministically from the canonical basis.
fn complete_orthonormal_column(u: &mut Array2<f64>, j: usize) {
    let n = u.nrows();
    let m = u.ncols();
    let mut best: Option<(f64, Array1<f64>)> = None;
    for k in 0..n {
        let mut cand = Array1::<f64>::zeros(n);
        cand[k] = 1.0;
        // Two Gram-Schmidt passes for numerical safety.
        for _ in 0..2 {
            for c in 0..m {
                if c == j {
                    continue;
                }
                let col = u.column(c);
                let dot = col.dot(&cand);
                if dot != 0.0 {
                    for i in 0..n {
                        cand[i] -= dot * col[i];
                    }
                }
            }
        }
        let norm = cand.dot(&cand).sqrt();
        if norm > 0.5 {
            best = Some((norm, cand));
            break;
        }
        match best {
            Some((bn, _)) if bn >= norm => {}
            _ => best = Some((norm, cand)),
        }
    }
    let (norm, cand) = best.expect("nonempty candidate basis");
    u.column_mut(j).assign(&cand.mapv(|x| x / norm));
}

/// Spectrum of a PSD matrix with the retained index set under relative
/// truncation, shared by the matrix power helpers.
fn truncated_spectrum(eig: &SymEig, rel_tol: f64) -> Result<Vec<usize>> {
    let lambda_max = eig.eigenvalues[0];
    if !(lambda_max > 0.0) {
        return Err(Error::DegenerateCovariance { lambda_max });
    }
    Ok((0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > rel_tol * lambda_max)
        .collect())
}

/// Build `V_r diag(lambda_r^power) V_r^T` over the retained eigenpairs.
fn psd_power_from_eig(eig: &SymEig, power: f64, rel_tol: f64) -> Result<(Array2<f64>, usize)> {
    let retained = truncated_spectrum(eig, rel_tol)?;
    let n = eig.eigenvectors.nrows();
    let mut out = Array2::<f64>::zeros((n, n));
    for &idx in &retained {
        let w = eig.eigenvalues[idx].powf(power);
        let v = eig.eigenvectors.column(idx);
        for i in 0..n {
            let wi = w * v[i];
            for j in 0..n {
                out[[i, j]] += wi * v[j];
            }
        }
    }
    Ok((out, retained.len()))
}

/// Truncated inverse square root of a symmetric PSD matrix.
///
/// Keeps eigenpairs with `lambda > rel_tol * lambda_max` and returns
/// `V_r diag(lambda_r^{-1/2}) V_r^T` together with the retained rank.
pub fn inv_sqrt_truncated(c: ArrayView2<'_, f64>, rel_tol: f64) -> Result<(Array2<f64>, usize)> {
    validate_rel_tol(rel_tol)?;
    let eig = sym_eig(c)?;
    psd_power_from_eig(&eig, -0.5, rel_tol)
}

/// Truncated square root of a symmetric PSD matrix (same retention rule as
/// [`inv_sqrt_truncated`]).
pub fn sqrt_psd(c: ArrayView2<'_, f64>, rel_tol: f64) -> Result<Array2<f64>> {
    validate_rel_tol(rel_tol)?;
    let eig = sym_eig(c)?;
    psd_power_from_eig(&eig, 0.5, rel_tol).map(|(m, _)| m)
}

/// Both PSD powers from a single eigendecomposition, guaranteeing an
/// identical truncation set for a whitener and its inverse.
pub fn sqrt_pair(
    c: ArrayView2<'_, f64>,
    rel_tol: f64,
) -> Result<(Array2<f64>, Array2<f64>, usize)> {
    validate_rel_tol(rel_tol)?;
    let eig = sym_eig(c)?;
    let (inv_sqrt, rank) = psd_power_from_eig(&eig, -0.5, rel_tol)?;
    let (sqrt, _) = psd_power_from_eig(&eig, 0.5, rel_tol)?;
    Ok((inv_sqrt, sqrt, rank))
}

fn validate_rel_tol(rel_tol: f64) -> Result<()> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rel_tol must lie in (0, 1), got {rel_tol}"
        )));
    }
    Ok(())
}

/// Eigenvalues of a general (not necessarily symmetric) real matrix,
/// sorted by modulus in descending order.
pub fn eigenvalues_general(a: ArrayView2<'_, f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "eigenvalues_general expects a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    check_finite(a, "eigenvalues_general input")?;
    let m = nalgebra::DMatrix::from_row_iterator(n, n, a.iter().copied());
    let mut vals: Vec<Complex64> = m
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect();
    vals.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap()
            .then(b.re.partial_cmp(&a.re).unwrap())
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    Ok(vals)
}

/// Principal angles (radians, ascending) between the row spaces of `a` and
/// `b`, which must have the same number of columns.
pub fn principal_angles(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "row spaces live in different dimensions: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let qa = orthonormal_rows(a)?;
    let qb = orthonormal_rows(b)?;
    let m = qa.dot(&qb.t());
    let s = svd(m.view())?;
    let k = qa.nrows().min(qb.nrows());
    Ok(s.singular_values
        .iter()
        .take(k)
        .map(|&c| c.clamp(-1.0, 1.0).acos())
        .collect())
}

fn orthonormal_rows(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let s = svd(a)?;
    let smax = s.singular_values[0];
    let rank = s
        .singular_values
        .iter()
        .filter(|&&x| x > smax * 1e-12 && x > 0.0)
        .count()
        .max(1);
    Ok(s.vt.slice(ndarray::s![..rank, ..]).to_owned())
}
