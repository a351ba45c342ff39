//! Independent reference implementations used as test oracles.
//!
//! Everything here is written directly against the textbook definitions on
//! plain `f64` slices, deliberately sharing no code with the tape-based
//! operations it is used to verify.

/// Naive triple-loop matrix product: a [m,k] · b [k,n] → [m,n].
pub fn matmul_reference(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors stored as the
/// columns of a row-major n×n matrix, so `A = V diag(λ) Vᵀ`.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-18 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m[i * n + p];
                    let miq = m[i * n + q];
                    m[i * n + p] = c * mip - s * miq;
                    m[i * n + q] = s * mip + c * miq;
                }
                for j in 0..n {
                    let mpj = m[p * n + j];
                    let mqj = m[q * n + j];
                    m[p * n + j] = c * mpj - s * mqj;
                    m[q * n + j] = s * mpj + c * mqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    (eig, v)
}

/// Chebyshev polynomial matrices T_0..T_{K−1} of a symmetric matrix,
/// evaluated through the eigendecomposition as cos(k·arccos λ) with the
/// eigenvalues clipped to [−1, 1].
pub fn cheb_matrices_by_eigen(l: &[f64], n: usize, order: usize) -> Vec<Vec<f64>> {
    let (eig, v) = jacobi_eigen(l, n);
    (0..order)
        .map(|k| {
            // V diag(T_k(λ)) Vᵀ
            let tk: Vec<f64> = eig
                .iter()
                .map(|&lam| (k as f64 * lam.clamp(-1.0, 1.0).acos()).cos())
                .collect();
            let mut scaled = vec![0.0; n * n]; // V·diag(tk)
            for i in 0..n {
                for j in 0..n {
                    scaled[i * n + j] = v[i * n + j] * tk[j];
                }
            }
            let mut vt = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    vt[i * n + j] = v[j * n + i];
                }
            }
            matmul_reference(&scaled, &vt, n, n, n)
        })
        .collect()
}

/// Chebyshev polynomial matrices via the three-term recurrence on plain
/// matrices: T_0 = I, T_1 = L, T_k = 2·L·T_{k−1} − T_{k−2}.
pub fn cheb_matrices_by_recurrence(l: &[f64], n: usize, order: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(order);
    for k in 0..order {
        let tk = match k {
            0 => {
                let mut i_mat = vec![0.0; n * n];
                for i in 0..n {
                    i_mat[i * n + i] = 1.0;
                }
                i_mat
            }
            1 => l.to_vec(),
            _ => {
                let prod = matmul_reference(l, &out[k - 1], n, n, n);
                prod.iter()
                    .zip(&out[k - 2])
                    .map(|(&p, &t2)| 2.0 * p - t2)
                    .collect()
            }
        };
        out.push(tk);
    }
    out
}

/// Explicit dense evaluation of Σ_k θ_k · T_k(L) · X · Θ_k.
pub fn cheb_conv_explicit(
    l: &[f64],
    n: usize,
    x: &[f64],
    d_in: usize,
    theta: &[f64],
    weights: &[Vec<f64>],
    d_out: usize,
) -> Vec<f64> {
    let order = theta.len();
    let tks = cheb_matrices_by_recurrence(l, n, order);
    let mut acc = vec![0.0; n * d_out];
    for k in 0..order {
        let tx = matmul_reference(&tks[k], x, n, n, d_in);
        let term = matmul_reference(&tx, &weights[k], n, d_in, d_out);
        for (a, t) in acc.iter_mut().zip(term) {
            *a += theta[k] * t;
        }
    }
    acc
}

/// Brute-force local Moran statistic, written as a literal double loop over
/// the definition M_i = (n−1)·z_i·Σ_j w_ij z_j / Σ_k z_k².
pub fn local_moran_bruteforce(x: &[f64], w: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut den = 0.0;
    for k in 0..n {
        den += (x[k] - mean) * (x[k] - mean);
    }
    let mut out = vec![0.0; n];
    for i in 0..n {
        let zi = x[i] - mean;
        let mut lag = 0.0;
        for j in 0..n {
            lag += w[i * n + j] * (x[j] - mean);
        }
        out[i] = (n as f64 - 1.0) * zi * lag / (den + 1e-12);
    }
    out
}

/// Global Moran's I by the double-sum definition:
/// I = (n / ΣΣ w_ij) · Σ_i Σ_j w_ij z_i z_j / Σ_k z_k².
pub fn global_moran_bruteforce(x: &[f64], w: &[f64]) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut wsum = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        den += (x[i] - mean) * (x[i] - mean);
        for j in 0..n {
            num += w[i * n + j] * (x[i] - mean) * (x[j] - mean);
            wsum += w[i * n + j];
        }
    }
    (n as f64 / wsum) * num / den
}
