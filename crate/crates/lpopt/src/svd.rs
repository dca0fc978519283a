//! One-sided Jacobi SVD and the matrix sign operator.
//!
//! The Jacobi routine orthogonalizes columns with plane rotations and serves
//! as the accuracy oracle at desk scale. `msign` maps a matrix to the
//! orthogonal polar-like factor `U V^T`, either exactly through the SVD or
//! with the quintic Newton-Schulz fixed-point iteration used by Muon.

use crate::error::Error;
use crate::mat::{dot, Mat};
use crate::Result;

const MAX_SWEEPS: usize = 60;
const PAIR_TOL: f64 = 1e-12;
/// Singular directions below `sigma_max * RANK_TOL` are treated as null and
/// dropped from `U V^T` (partial isometry).
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// m x r, orthonormal columns.
    pub u: Mat,
    /// r singular values, non-increasing, >= 0.
    pub s: Vec<f64>,
    /// n x r, orthonormal columns.
    pub v: Mat,
}

impl SvdResult {
    /// `U diag(S) V^T`.
    pub fn reconstruct(&self) -> Mat {
        let r = self.s.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..r {
                let v = us.get(i, j) * self.s[j];
                us.set(i, j, v);
            }
        }
        us.matmul(&self.v.transpose()).expect("shapes agree")
    }
}

/// Column-major working storage: `cols` columns of length `len`.
struct ColMat {
    len: usize,
    cols: Vec<Vec<f64>>,
}

impl ColMat {
    fn from_mat_transposed_if(a: &Mat, transpose: bool) -> ColMat {
        // columns of A (or of A^T) as contiguous vectors
        let (len, ncols) = if transpose {
            (a.cols(), a.rows())
        } else {
            (a.rows(), a.cols())
        };
        let mut cols = vec![vec![0.0; len]; ncols];
        if transpose {
            for (i, col) in cols.iter_mut().enumerate() {
                for (j, v) in col.iter_mut().enumerate() {
                    *v = a.get(i, j);
                }
            }
        } else {
            for (j, col) in cols.iter_mut().enumerate() {
                for (i, v) in col.iter_mut().enumerate() {
                    *v = a.get(i, j);
                }
            }
        }
        ColMat { len, cols }
    }

    fn identity(n: usize) -> ColMat {
        let mut cols = vec![vec![0.0; n]; n];
        for (j, c) in cols.iter_mut().enumerate() {
            c[j] = 1.0;
        }
        ColMat { len: n, cols }
    }

    #[inline]
    fn rotate_pair(&mut self, p: usize, q: usize, c: f64, s: f64) {
        debug_assert!(p < q);
        let (head, tail) = self.cols.split_at_mut(q);
        let cp = &mut head[p];
        let cq = &mut tail[0];
        for i in 0..self.len {
            let xp = cp[i];
            let xq = cq[i];
            cp[i] = c * xp - s * xq;
            cq[i] = s * xp + c * xq;
        }
    }
}

/// One-sided Jacobi SVD.
///
/// Caps at 60 sweeps and reports `NoConvergence` for pathological input;
/// intended for `m, n <= 512`.
pub fn jacobi_svd(a: &Mat) -> Result<SvdResult> {
    if a.rows() > 512 || a.cols() > 512 {
        return Err(Error::PreconditionViolated {
            name: "jacobi_svd oracle scale: m, n <= 512".into(),
        });
    }
    if !a.is_finite() {
        return Err(Error::Config("jacobi_svd: non-finite input".into()));
    }
    // work on the tall orientation so columns are the short dimension
    let flip = a.rows() < a.cols();
    let mut b = ColMat::from_mat_transposed_if(a, flip);
    let n = b.cols.len();
    let m = b.len;
    let mut v = ColMat::identity(n);

    let mut sweep = 0;
    loop {
        sweep += 1;
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let cp = &b.cols[p];
                    let cq = &b.cols[q];
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if gamma == 0.0 || gamma.abs() <= PAIR_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                b.rotate_pair(p, q, c, s);
                v.rotate_pair(p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
        if sweep >= MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps: sweep });
        }
    }

    // singular values, sorted non-increasing
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = b.cols.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &j in &order {
        s.push(norms[j]);
        v_cols.push(v.cols[j].clone());
        if norms[j] > 0.0 {
            u_cols.push(b.cols[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(Vec::new()); // filled below
        }
    }
    // complete an orthonormal basis for null directions
    for j in 0..n {
        if !u_cols[j].is_empty() {
            continue;
        }
        let mut best: Option<Vec<f64>> = None;
        let mut best_norm = 0.0;
        for k in 0..m {
            let mut cand = vec![0.0; m];
            cand[k] = 1.0;
            for existing in u_cols.iter().filter(|c| !c.is_empty()) {
                let proj = dot(&cand, existing);
                for (ci, ei) in cand.iter_mut().zip(existing) {
                    *ci -= proj * ei;
                }
            }
            let nrm = dot(&cand, &cand).sqrt();
            if nrm > best_norm {
                best_norm = nrm;
                best = Some(cand);
                if nrm > 0.9 {
                    break;
                }
            }
        }
        let mut col = best.expect("basis completion candidate");
        // second orthogonalization pass for numerical cleanliness
        for existing in u_cols.iter().filter(|c| !c.is_empty()) {
            let proj = dot(&col, existing);
            for (ci, ei) in col.iter_mut().zip(existing) {
                *ci -= proj * ei;
            }
        }
        let nrm = dot(&col, &col).sqrt();
        for x in col.iter_mut() {
            *x /= nrm;
        }
        u_cols[j] = col;
    }

    let pack = |cols: &[Vec<f64>], len: usize| {
        let mut out = Mat::zeros(len, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (i, &x) in c.iter().enumerate() {
                out.set(i, j, x);
            }
        }
        out
    };
    let u = pack(&u_cols, m);
    let vv = pack(&v_cols, n);
    if flip {
        // A^T = U S V^T  =>  A = V S U^T
        Ok(SvdResult { u: vv, s, v: u })
    } else {
        Ok(SvdResult { u, s, v: vv })
    }
}

/// Nuclear norm (sum of singular values) via the Jacobi oracle.
pub fn nuclear_norm(a: &Mat) -> Result<f64> {
    Ok(jacobi_svd(a)?.s.iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrthoMethod {
    ExactSvd,
    NewtonSchulz,
}

impl OrthoMethod {
    pub fn name(self) -> &'static str {
        match self {
            OrthoMethod::ExactSvd => "svd",
            OrthoMethod::NewtonSchulz => "newton_schulz",
        }
    }

    /// Slack in the `||msign(A)||_F^2 <= r (1 + tol)` norm bound. The
    /// Newton-Schulz quintic overshoots singular values up to about 1.2025,
    /// so its squared slack is just under 0.45.
    pub fn norm_tol(self) -> f64 {
        match self {
            OrthoMethod::ExactSvd => 1e-9,
            OrthoMethod::NewtonSchulz => 0.45,
        }
    }
}

/// Default Newton-Schulz quintic coefficients.
pub const NS_COEFFS: [f64; 3] = [3.4445, -4.7750, 2.0315];

/// Matrix sign / orthogonalization operator: `U V^T` of the SVD with all
/// retained singular values set to one.
pub fn msign(a: &Mat, method: OrthoMethod, ns_iters: usize, ns_coeffs: [f64; 3]) -> Result<Mat> {
    let norm = a.frob_norm();
    if norm == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    match method {
        OrthoMethod::ExactSvd => {
            let svd = jacobi_svd(a)?;
            let thresh = svd.s[0] * RANK_TOL;
            let mut u = svd.u.clone();
            for j in 0..svd.s.len() {
                if svd.s[j] < thresh {
                    for i in 0..u.rows() {
                        u.set(i, j, 0.0);
                    }
                }
            }
            u.matmul(&svd.v.transpose())
        }
        OrthoMethod::NewtonSchulz => {
            let [c1, c2, c3] = ns_coeffs;
            let mut x = a.scale(1.0 / norm);
            for _ in 0..ns_iters {
                // grow the Gram matrix on the short side
                if x.rows() <= x.cols() {
                    let g = x.matmul(&x.transpose())?; // m x m
                    let g2 = g.matmul(&g)?;
                    let poly = g.scale(c2).add(&g2.scale(c3))?;
                    x = x.scale(c1).add(&poly.matmul(&x)?)?;
                } else {
                    let g = x.transpose().matmul(&x)?; // n x n
                    let g2 = g.matmul(&g)?;
                    let poly = g.scale(c2).add(&g2.scale(c3))?;
                    x = x.scale(c1).add(&x.matmul(&poly)?)?;
                }
            }
            Ok(x)
        }
    }
}
