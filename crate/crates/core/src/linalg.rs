//! Small iterative solvers shared by the operator and flow modules.

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Conjugate gradients for a symmetric positive semidefinite operator, with the
/// right-hand side assumed to lie in its range. Stops at `|r| <= tol * |b|`.
pub(crate) fn conjugate_gradient(
    apply: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * bnorm {
            return Ok(x);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    // Recompute the true residual before giving up.
    apply(&x, &mut ap);
    let res: f64 = norm(&b.iter().zip(&ap).map(|(a, c)| a - c).collect::<Vec<_>>());
    if res <= tol * bnorm {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            solver: "conjugate gradient",
            iterations: max_iter,
            residual: res / bnorm,
        })
    }
}

/// Restarted GMRES(m) for a general square operator.
pub(crate) fn gmres(
    apply: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut w = vec![0.0; n];
    let mut total = 0;
    let mut last = f64::INFINITY;
    while total < max_iter {
        apply(&x, &mut w);
        let r: Vec<f64> = b.iter().zip(&w).map(|(a, c)| a - c).collect();
        let beta = norm(&r);
        last = beta / bnorm;
        if beta <= tol * bnorm {
            return Ok(x);
        }
        let m = restart.min(n.max(1));
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|a| a / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            total += 1;
            apply(&v[k], &mut w);
            for (j, vj) in v.iter().enumerate() {
                h[j][k] = dot(&w, vj);
                for i in 0..n {
                    w[i] -= h[j][k] * vj[i];
                }
            }
            h[k + 1][k] = norm(&w);
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            let hk1 = h[k + 1][k];
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / denom;
                sn[k] = hk1 / denom;
            }
            h[k][k] = cs[k] * h[k][k] + sn[k] * hk1;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            last = g[k + 1].abs() / bnorm;
            if g[k + 1].abs() <= tol * bnorm || hk1 == 0.0 || total >= max_iter {
                break;
            }
            v.push(w.iter().map(|a| a / hk1).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| h[i][j] * y[j]).sum();
            y[i] = if h[i][i] != 0.0 {
                (g[i] - s) / h[i][i]
            } else {
                0.0
            };
        }
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yj * v[j][i];
            }
        }
    }
    apply(&x, &mut w);
    let res = norm(&b.iter().zip(&w).map(|(a, c)| a - c).collect::<Vec<_>>()) / bnorm;
    if res <= tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            solver: "GMRES",
            iterations: total,
            residual: res.min(last),
        })
    }
}

/// Deterministic pseudo-random start vector (splitmix64).
pub(crate) fn seeded_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed;
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_spd_system() {
        let a = [[4.0, 1.0], [1.0, 3.0]];
        let apply = |x: &[f64], y: &mut [f64]| {
            y[0] = a[0][0] * x[0] + a[0][1] * x[1];
            y[1] = a[1][0] * x[0] + a[1][1] * x[1];
        };
        let x = conjugate_gradient(&apply, &[1.0, 2.0], 1e-14, 10).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-13);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-13);
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let apply = |x: &[f64], y: &mut [f64]| {
            y[0] = 2.0 * x[0] + 1.0 * x[1];
            y[1] = -x[0] + 3.0 * x[1] + 0.5 * x[2];
            y[2] = x[1] + 4.0 * x[2];
        };
        let b = [1.0, 0.0, -2.0];
        let x = gmres(&apply, &b, None, 1e-13, 2, 50).unwrap();
        let mut y = [0.0; 3];
        apply(&x, &mut y);
        for i in 0..3 {
            assert!((y[i] - b[i]).abs() < 1e-12);
        }
    }
}
