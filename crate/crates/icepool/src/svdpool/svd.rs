//! Thin singular value decomposition via one-sided Jacobi rotations.
//!
//! Connection blocks are small (cluster size by cluster size), so a
//! Hestenes-style one-sided Jacobi sweep is accurate and fast enough.
//! Columns of the working matrix are rotated pairwise until mutually
//! orthogonal; their norms are the singular values and the accumulated
//! rotations give the right singular vectors.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// A thin SVD `m = u * diag(sigma) * v^T` with `min(r, c)` components.
///
/// `u` is `r x min(r, c)`, `sigma` is length `min(r, c)` in descending
/// order, `v` is `c x min(r, c)`. Both `u` and `v` have orthonormal
/// columns even when `m` is rank deficient; columns beyond the rank pair
/// with zero singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriplet {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub v: Array2<f64>,
}

impl SvdTriplet {
    /// Reassembles `u * diag(sigma) * v^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let weighted = &self.u * &self.sigma;
        weighted.dot(&self.v.t())
    }
}

/// Computes the thin SVD of `m`.
///
/// Singular values are sorted in descending order. Values below
/// `max(r, c) * machine_eps * sigma_max` are snapped to exactly zero and
/// their left singular vectors replaced by a deterministic orthonormal
/// completion, so rank-deficient inputs still yield orthonormal `u`.
/// Signs are canonicalized: in each `u` column the entry of largest
/// magnitude (lowest index on ties) is non-negative.
///
/// `tol` bounds the residual column correlation accepted at convergence;
/// the returned triplet satisfies its invariants to within `tol`.
pub fn svd(m: &Array2<f64>, tol: f64) -> Result<SvdTriplet> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "svd tolerance must be positive, got {tol}"
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(
            "svd input contains a non-finite entry".into(),
        ));
    }
    let (r, c) = m.dim();
    if r == 0 || c == 0 {
        return Ok(SvdTriplet {
            u: Array2::zeros((r, 0)),
            sigma: Array1::zeros(0),
            v: Array2::zeros((c, 0)),
        });
    }
    if r < c {
        let t = svd(&m.t().to_owned(), tol)?;
        return Ok(SvdTriplet {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }

    let mut w = m.clone();
    let mut v = Array2::<f64>::eye(c);
    let eps = (tol * 1e-2).max(2.0 * f64::EPSILON);
    let frob = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tiny_sq = (frob * f64::EPSILON * r.max(c) as f64).powi(2);
    let max_sweeps = 100;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..c {
            for q in (p + 1)..c {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..r {
                    alpha += w[[i, p]] * w[[i, p]];
                    beta += w[[i, q]] * w[[i, q]];
                    gamma += w[[i, p]] * w[[i, q]];
                }
                if alpha <= tiny_sq
                    || beta <= tiny_sq
                    || gamma.abs() <= eps * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..r {
                    let wp = w[[i, p]];
                    let wq = w[[i, q]];
                    w[[i, p]] = cs * wp - sn * wq;
                    w[[i, q]] = sn * wp + cs * wq;
                }
                for i in 0..c {
                    let vp = v[[i, p]];
                    let vq = v[[i, q]];
                    v[[i, p]] = cs * vp - sn * vq;
                    v[[i, q]] = sn * vp + cs * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "svd did not converge within {max_sweeps} sweeps"
        )));
    }

    let mut norms: Vec<f64> = (0..c)
        .map(|j| (0..r).map(|i| w[[i, j]] * w[[i, j]]).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));
    norms = order.iter().map(|&j| norms[j]).collect();

    let sigma_max = norms.first().copied().unwrap_or(0.0);
    let rank_tol = ((r.max(c) as f64) * f64::EPSILON * sigma_max).max(tiny_sq.sqrt());
    let mut u = Array2::<f64>::zeros((r, c));
    let mut sigma = Array1::<f64>::zeros(c);
    let mut v_sorted = Array2::<f64>::zeros((c, c));
    let mut rank = 0;
    for (l, &j) in order.iter().enumerate() {
        for i in 0..c {
            v_sorted[[i, l]] = v[[i, j]];
        }
        if norms[l] > rank_tol {
            sigma[l] = norms[l];
            for i in 0..r {
                u[[i, l]] = w[[i, j]] / norms[l];
            }
            rank = l + 1;
        }
    }
    complete_orthonormal(&mut u, rank);
    canonicalize_signs(&mut u, &mut v_sorted);

    Ok(SvdTriplet {
        u,
        sigma,
        v: v_sorted,
    })
}

/// Fills columns `rank..` of `u` with an orthonormal completion built by
/// Gram-Schmidt over canonical basis vectors, picking at every step the
/// unused basis vector whose residual against the current span is
/// largest (lowest index on ties). The largest residual always has norm
/// at least `1/sqrt(r)`, so the completion never stalls.
fn complete_orthonormal(u: &mut Array2<f64>, rank: usize) {
    let (r, c) = u.dim();
    let mut used = vec![false; r];
    for filled in rank..c {
        let residual = |candidate: usize| -> Vec<f64> {
            let mut col = vec![0.0; r];
            col[candidate] = 1.0;
            for j in 0..filled {
                let dot: f64 = (0..r).map(|i| col[i] * u[[i, j]]).sum();
                for i in 0..r {
                    col[i] -= dot * u[[i, j]];
                }
            }
            col
        };
        let mut best: Option<(usize, f64)> = None;
        for (candidate, &taken) in used.iter().enumerate() {
            if taken {
                continue;
            }
            let col = residual(candidate);
            let norm_sq: f64 = col.iter().map(|x| x * x).sum();
            if best.is_none_or(|(_, b)| norm_sq > b) {
                best = Some((candidate, norm_sq));
            }
        }
        let (candidate, _) = best.expect("fewer filled columns than rows");
        used[candidate] = true;
        let mut col = residual(candidate);
        for j in 0..filled {
            let dot: f64 = (0..r).map(|i| col[i] * u[[i, j]]).sum();
            for i in 0..r {
                col[i] -= dot * u[[i, j]];
            }
        }
        let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..r {
            u[[i, filled]] = col[i] / norm;
        }
    }
}

/// Flips column signs so the largest-magnitude entry of each `u` column
/// (lowest index on ties) is non-negative; `v` columns flip in tandem.
fn canonicalize_signs(u: &mut Array2<f64>, v: &mut Array2<f64>) {
    let (r, cols) = u.dim();
    let vr = v.nrows();
    for l in 0..cols {
        let mut pivot = 0;
        for i in 1..r {
            if u[[i, l]].abs() > u[[pivot, l]].abs() {
                pivot = i;
            }
        }
        if u[[pivot, l]] < 0.0 {
            for i in 0..r {
                u[[i, l]] = -u[[i, l]];
            }
            for i in 0..vr {
                v[[i, l]] = -v[[i, l]];
            }
        }
    }
}
