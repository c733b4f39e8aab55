//! Deterministic thin SVD via Golub–Kahan bidiagonalization followed by
//! implicit-shift QR on the bidiagonal.
//!
//! Everything runs sequentially in f64 with a fixed sweep order, so identical
//! input bits give identical output bits on every run and at every thread
//! count. Off-diagonal entries deflate when
//! `|e[i]| <= 1e-14 * (|d[i]| + |d[i+1]|)`.

#![allow(clippy::needless_range_loop)]

use super::Mat;
use crate::error::{Error, Result};

const DEFLATE_TOL: f64 = 1e-14;

/// Thin SVD factors of an m×n matrix with m ≥ n enforced by the caller:
/// U is m×n with orthonormal columns, V is n×n orthogonal, and
/// `a = U · diag(s) · Vᵀ`. Singular values are non-negative but unsorted;
/// the caller sorts and canonicalizes signs.
pub(crate) fn golub_kahan_svd(a: &Mat) -> Result<(Mat, Vec<f64>, Mat)> {
    let m = a.rows;
    let n = a.cols;
    assert!(m >= n, "golub_kahan_svd requires rows >= cols");

    if n == 0 {
        return Ok((Mat::zeros(m, 0), Vec::new(), Mat::zeros(0, 0)));
    }

    // The shift computation squares diagonal entries; rescale extreme inputs
    // into a band where squaring can neither overflow nor underflow.
    let amax = a.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let scale = if amax > 0.0 && !(1e-130..=1e130).contains(&amax) {
        amax
    } else {
        1.0
    };

    let mut work = a.clone();
    if scale != 1.0 {
        for v in work.data.iter_mut() {
            *v /= scale;
        }
    }
    let mut d = vec![0.0_f64; n];
    let mut e = vec![0.0_f64; n.saturating_sub(1)];
    let mut beta_left = vec![0.0_f64; n];
    let mut beta_right = vec![0.0_f64; n];

    bidiagonalize(&mut work, &mut d, &mut e, &mut beta_left, &mut beta_right);

    let mut u = accumulate_left(&work, &beta_left, m, n);
    let mut v = accumulate_right(&work, &beta_right, n);

    // Scale reference for treating a diagonal entry as zero. Fixed once so
    // the iteration is a pure function of the input.
    let mut anorm = 0.0_f64;
    for i in 0..n {
        let off = if i + 1 < n { e[i].abs() } else { 0.0 };
        anorm = anorm.max(d[i].abs() + off);
    }

    if anorm > 0.0 {
        reduce_bidiagonal(&mut d, &mut e, &mut u, &mut v, anorm)?;
    }

    // Singular values must be non-negative; flip the U column to compensate.
    for j in 0..n {
        if d[j] < 0.0 {
            d[j] = -d[j];
            for i in 0..m {
                let x = u.at(i, j);
                u.set(i, j, -x);
            }
        }
    }

    if scale != 1.0 {
        for x in d.iter_mut() {
            *x *= scale;
        }
    }

    Ok((u, d, v))
}

// ---------------------------------------------------------------------------
// Householder bidiagonalization
// ---------------------------------------------------------------------------

/// Householder reflector for x with head `x0` and tail squared-norm `sigma`:
/// returns `(beta, v0, r)` where H = I − beta·v·vᵀ (with v normalized so the
/// head is 1), H·x = r·e1 with r ≥ 0, and the stored tail must be divided by
/// `v0`.
fn householder(x0: f64, sigma: f64) -> (f64, f64, f64) {
    if sigma == 0.0 {
        if x0 >= 0.0 {
            (0.0, 1.0, x0)
        } else {
            // v = e1: reflection negates the head.
            (2.0, 1.0, -x0)
        }
    } else {
        let mu = (x0 * x0 + sigma).sqrt();
        let v0 = if x0 <= 0.0 {
            x0 - mu
        } else {
            -sigma / (x0 + mu)
        };
        let beta = 2.0 * v0 * v0 / (sigma + v0 * v0);
        (beta, v0, mu)
    }
}

/// Reduce `work` (m×n, m ≥ n) to upper bidiagonal form. Diagonal lands in
/// `d`, superdiagonal in `e`; reflector tails are stored in the zeroed-out
/// parts of `work` (column j below the diagonal for left reflectors, row j
/// right of the superdiagonal for right reflectors).
fn bidiagonalize(
    work: &mut Mat,
    d: &mut [f64],
    e: &mut [f64],
    beta_left: &mut [f64],
    beta_right: &mut [f64],
) {
    let m = work.rows;
    let n = work.cols;

    for j in 0..n {
        // Left reflector on work[j..m, j].
        let x0 = work.at(j, j);
        let mut sigma = 0.0;
        for i in j + 1..m {
            let t = work.at(i, j);
            sigma += t * t;
        }
        let (beta, v0, r) = householder(x0, sigma);
        beta_left[j] = beta;
        d[j] = r;
        if beta != 0.0 && sigma != 0.0 {
            for i in j + 1..m {
                let t = work.at(i, j) / v0;
                work.set(i, j, t);
            }
        }
        if beta != 0.0 {
            // Apply H = I − beta·v·vᵀ to columns j+1..n.
            for c in j + 1..n {
                let mut w = work.at(j, c);
                for i in j + 1..m {
                    w += work.at(i, j) * work.at(i, c);
                }
                w *= beta;
                let head = work.at(j, c) - w;
                work.set(j, c, head);
                for i in j + 1..m {
                    let t = work.at(i, c) - w * work.at(i, j);
                    work.set(i, c, t);
                }
            }
        }

        if j + 1 < n {
            if j + 2 < n {
                // Right reflector on work[j, j+1..n].
                let y0 = work.at(j, j + 1);
                let mut sigma_r = 0.0;
                for c in j + 2..n {
                    let t = work.at(j, c);
                    sigma_r += t * t;
                }
                let (beta2, w0, r2) = householder(y0, sigma_r);
                beta_right[j] = beta2;
                e[j] = r2;
                if beta2 != 0.0 && sigma_r != 0.0 {
                    for c in j + 2..n {
                        let t = work.at(j, c) / w0;
                        work.set(j, c, t);
                    }
                }
                if beta2 != 0.0 {
                    // Apply from the right to rows j+1..m.
                    for i in j + 1..m {
                        let mut w = work.at(i, j + 1);
                        for c in j + 2..n {
                            w += work.at(j, c) * work.at(i, c);
                        }
                        w *= beta2;
                        let head = work.at(i, j + 1) - w;
                        work.set(i, j + 1, head);
                        for c in j + 2..n {
                            let t = work.at(i, c) - w * work.at(j, c);
                            work.set(i, c, t);
                        }
                    }
                }
            } else {
                e[j] = work.at(j, j + 1);
            }
        }
    }
}

/// U = H_0 · H_1 · … · H_{n-1} applied to the leading n columns of I_m,
/// accumulated backward.
fn accumulate_left(work: &Mat, beta_left: &[f64], m: usize, n: usize) -> Mat {
    let mut u = Mat::zeros(m, n);
    for i in 0..n {
        u.set(i, i, 1.0);
    }
    for j in (0..n).rev() {
        let beta = beta_left[j];
        if beta == 0.0 {
            continue;
        }
        for c in j..n {
            let mut w = u.at(j, c);
            for i in j + 1..m {
                w += work.at(i, j) * u.at(i, c);
            }
            w *= beta;
            let head = u.at(j, c) - w;
            u.set(j, c, head);
            for i in j + 1..m {
                let t = u.at(i, c) - w * work.at(i, j);
                u.set(i, c, t);
            }
        }
    }
    u
}

/// V = R_0 · R_1 · … · R_{n-3} applied to I_n, accumulated backward.
/// Right reflector j has its head at index j+1.
fn accumulate_right(work: &Mat, beta_right: &[f64], n: usize) -> Mat {
    let mut v = Mat::identity(n);
    if n < 3 {
        return v;
    }
    for j in (0..=n - 3).rev() {
        let beta = beta_right[j];
        if beta == 0.0 {
            continue;
        }
        for c in j + 1..n {
            let mut w = v.at(j + 1, c);
            for i in j + 2..n {
                w += work.at(j, i) * v.at(i, c);
            }
            w *= beta;
            let head = v.at(j + 1, c) - w;
            v.set(j + 1, c, head);
            for i in j + 2..n {
                let t = v.at(i, c) - w * work.at(j, i);
                v.set(i, c, t);
            }
        }
    }
    v
}

// ---------------------------------------------------------------------------
// Implicit-shift QR on the bidiagonal
// ---------------------------------------------------------------------------

/// Plane rotation (c, s, r) with c·a + s·b = r and −s·a + c·b = 0.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        (1.0, 0.0, a)
    } else if a == 0.0 {
        (0.0, 1.0, b)
    } else {
        let r = a.hypot(b);
        (a / r, b / r, r)
    }
}

fn rotate_cols(mat: &mut Mat, j1: usize, j2: usize, c: f64, s: f64) {
    for i in 0..mat.rows {
        let x = mat.at(i, j1);
        let y = mat.at(i, j2);
        mat.set(i, j1, c * x + s * y);
        mat.set(i, j2, -s * x + c * y);
    }
}

/// Iterate until every superdiagonal entry deflates to zero.
fn reduce_bidiagonal(
    d: &mut [f64],
    e: &mut [f64],
    u: &mut Mat,
    v: &mut Mat,
    anorm: f64,
) -> Result<()> {
    let n = d.len();
    if n == 1 {
        return Ok(());
    }
    let max_steps = 12 * n * n + 60;
    let mut steps = 0usize;

    loop {
        for i in 0..n - 1 {
            if e[i] != 0.0 && e[i].abs() <= DEFLATE_TOL * (d[i].abs() + d[i + 1].abs()) {
                e[i] = 0.0;
            }
        }

        let mut hi = n - 1;
        while hi > 0 && e[hi - 1] == 0.0 {
            hi -= 1;
        }
        if hi == 0 {
            return Ok(());
        }
        let mut lo = hi - 1;
        while lo > 0 && e[lo - 1] != 0.0 {
            lo -= 1;
        }

        // A numerically zero diagonal inside the block makes the shift step
        // stall; chase its superdiagonal out with left rotations instead.
        let mut cancelled = false;
        for i in lo..hi {
            if d[i].abs() <= DEFLATE_TOL * anorm {
                d[i] = 0.0;
                cancel_row(d, e, u, i, hi);
                cancelled = true;
                break;
            }
        }
        if cancelled {
            continue;
        }

        qr_step(d, e, u, v, lo, hi);
        steps += 1;
        if steps > max_steps {
            return Err(Error::Numerical {
                reason: format!("SVD failed to converge after {max_steps} QR steps"),
            });
        }
    }
}

/// Zero row `z` of the bidiagonal (d[z] == 0, e[z] != 0) by rotating it
/// against rows z+1..=hi. Left rotations, so U absorbs them.
fn cancel_row(d: &mut [f64], e: &mut [f64], u: &mut Mat, z: usize, hi: usize) {
    let mut fill = e[z];
    e[z] = 0.0;
    for k in z + 1..=hi {
        let (c, s, r) = givens(d[k], fill);
        d[k] = r;
        // Row z keeps a zero diagonal; the bulge moves right.
        if k < hi {
            fill = -s * e[k];
            e[k] *= c;
        }
        // B ← G·B with rows (z, k): new row_z = c·row_z − s·row_k. As a
        // column update on U this is (u_z, u_k) ← (c·u_z − s·u_k, s·u_z + c·u_k).
        rotate_cols(u, z, k, c, -s);
    }
}

/// One implicit-shift Golub–Kahan QR step on the block [lo, hi].
fn qr_step(d: &mut [f64], e: &mut [f64], u: &mut Mat, v: &mut Mat, lo: usize, hi: usize) {
    // Wilkinson shift: eigenvalue of the trailing 2×2 of BᵀB closest to its
    // last entry.
    let dm = d[hi - 1];
    let dn = d[hi];
    let em = e[hi - 1];
    let em_prev = if hi - 1 > lo { e[hi - 2] } else { 0.0 };
    let t11 = dm * dm + em_prev * em_prev;
    let t12 = dm * em;
    let t22 = dn * dn + em * em;
    let mu = if t12 == 0.0 {
        t22
    } else {
        let delta = 0.5 * (t11 - t22);
        let sgn = if delta >= 0.0 { 1.0 } else { -1.0 };
        t22 - t12 * t12 / (delta + sgn * delta.hypot(t12))
    };

    let mut y = d[lo] * d[lo] - mu;
    let mut z = d[lo] * e[lo];

    for k in lo..hi {
        // Right rotation zeroing z against y; collapses the previous bulge.
        let (c, s, r) = givens(y, z);
        if k > lo {
            e[k - 1] = r;
        }
        let dk = d[k];
        let ek = e[k];
        let dk1 = d[k + 1];
        d[k] = c * dk + s * ek;
        e[k] = -s * dk + c * ek;
        let bulge = s * dk1;
        d[k + 1] = c * dk1;
        rotate_cols(v, k, k + 1, c, s);

        // Left rotation zeroing the subdiagonal bulge.
        let (c2, s2, r2) = givens(d[k], bulge);
        d[k] = r2;
        let ek_cur = e[k];
        let dk1_cur = d[k + 1];
        e[k] = c2 * ek_cur + s2 * dk1_cur;
        d[k + 1] = -s2 * ek_cur + c2 * dk1_cur;
        if k + 1 < hi {
            let ek1 = e[k + 1];
            e[k + 1] = c2 * ek1;
            y = e[k];
            z = s2 * ek1;
        }
        rotate_cols(u, k, k + 1, c2, s2);
    }
}
