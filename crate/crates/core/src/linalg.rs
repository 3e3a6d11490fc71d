//! Small dense routines: Householder least squares and a cyclic Jacobi
//! eigensolver for symmetric matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Least-squares solution of `a · x ≈ b` by Householder QR.
///
/// Fails with `RankDeficient` when a diagonal entry of R falls below
/// `1e-10 ·` the largest one.
pub fn lstsq(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    let (n, p) = a.dim();
    if b.len() != n {
        return Err(Error::invalid(format!("{} responses for {} rows", b.len(), n)));
    }
    if n < p {
        return Err(Error::RankDeficient { rank: n, terms: p });
    }
    let mut r = a.to_owned();
    let mut y = b.to_owned();

    for k in 0..p {
        let norm = (k..n).map(|i| r[[i, k]] * r[[i, k]]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[[k, k]] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| r[[i, k]]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        for j in k..p {
            let dot: f64 = (k..n).map(|i| v[i - k] * r[[i, j]]).sum();
            let s = 2.0 * dot / vv;
            for i in k..n {
                r[[i, j]] -= s * v[i - k];
            }
        }
        let dot: f64 = (k..n).map(|i| v[i - k] * y[i]).sum();
        let s = 2.0 * dot / vv;
        for i in k..n {
            y[i] -= s * v[i - k];
        }
    }

    let diag_max = (0..p).map(|k| r[[k, k]].abs()).fold(0.0, f64::max);
    let rank = (0..p).filter(|&k| r[[k, k]].abs() > 1e-10 * diag_max).count();
    if rank < p || diag_max == 0.0 {
        return Err(Error::RankDeficient { rank, terms: p });
    }

    let mut x = Array1::zeros(p);
    for k in (0..p).rev() {
        let s: f64 = ((k + 1)..p).map(|j| r[[k, j]] * x[j]).sum();
        x[k] = (y[k] - s) / r[[k, k]];
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
///
/// Columns of the returned vector matrix are unit eigenvectors.
pub fn symmetric_eigen(m: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::invalid("eigen-decomposition needs a square matrix"));
    }
    let mut a = m.to_owned();
    let mut v = Array2::<f64>::eye(n);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok((values, vectors))
}
