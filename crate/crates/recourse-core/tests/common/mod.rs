//! Shared test oracles, written independently of the library's solvers.
//!
//! Everything here works on raw arrays so that expected values for the
//! production code come from a genuinely different computational path:
//! a projected-gradient method instead of working-set updates, a textbook
//! two-variable SVM solver instead of the generalized one, and Jacobi
//! rotations for eigenvalues.

#![allow(dead_code)] // each integration test crate uses a different subset

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A box- and hyperplane-constrained convex QP in raw form:
/// minimize `0.5 x'Mx + e'x` subject to `a'x = 0`, `l <= x <= u`.
#[derive(Debug, Clone)]
pub struct RawQp {
    pub m: Array2<f64>,
    pub e: Array1<f64>,
    pub a: Array1<f64>,
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
}

impl RawQp {
    pub fn dim(&self) -> usize {
        self.e.len()
    }

    pub fn objective(&self, x: &Array1<f64>) -> f64 {
        0.5 * x.dot(&self.m.dot(x)) + self.e.dot(x)
    }
}

/// Euclidean projection onto `{l <= z <= u, a'z = 0}` by bisection on the
/// hyperplane multiplier. With `a = 0` this degrades to a plain box clip.
pub fn project_box_hyperplane(
    v: &Array1<f64>,
    a: &Array1<f64>,
    lower: &Array1<f64>,
    upper: &Array1<f64>,
) -> Array1<f64> {
    let clip = |tau: f64| -> Array1<f64> {
        Array1::from_iter(
            v.iter()
                .zip(a.iter())
                .zip(lower.iter().zip(upper.iter()))
                .map(|((vi, ai), (li, ui))| (vi - tau * ai).clamp(*li, *ui)),
        )
    };
    if a.iter().all(|ai| *ai == 0.0) {
        return clip(0.0);
    }
    let h = |tau: f64| a.dot(&clip(tau));
    // h is non-increasing in tau; bracket a root by doubling.
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    for _ in 0..200 {
        if h(lo) >= 0.0 {
            break;
        }
        lo *= 2.0;
    }
    for _ in 0..200 {
        if h(hi) <= 0.0 {
            break;
        }
        hi *= 2.0;
    }
    assert!(
        h(lo) >= 0.0 && h(hi) <= 0.0,
        "projection bracket failed; the constraint set is likely empty"
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(0.5 * (lo + hi))
}

/// Solves a [`RawQp`] by accelerated projected gradient (FISTA with adaptive
/// restart). Returns the iterate once the unit-step projected-gradient
/// residual drops below `tol` (infinity norm); panics if the iteration cap is
/// hit first, because a silent low-accuracy oracle would defeat its purpose.
pub fn pgd_solve(qp: &RawQp, tol: f64) -> Array1<f64> {
    let m = qp.dim();
    assert!(m > 0);
    let lip = jacobi_eigenvalues(&qp.m)
        .last()
        .copied()
        .unwrap()
        .max(1e-12);
    let step = 1.0 / lip;
    let proj = |v: &Array1<f64>| project_box_hyperplane(v, &qp.a, &qp.lower, &qp.upper);

    let mut x = proj(&Array1::zeros(m));
    let mut y = x.clone();
    let mut t = 1.0f64;
    let max_iters = 2_000_000usize;
    for iter in 0..max_iters {
        let grad_y = qp.m.dot(&y) + &qp.e;
        let x_next = proj(&(&y - &(step * &grad_y)));
        // Adaptive restart on a momentum direction that stopped descending.
        let momentum_bad = (&y - &x_next).dot(&(&x_next - &x)) > 0.0;
        if momentum_bad {
            t = 1.0;
            y = x_next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x_next + &(((t - 1.0) / t_next) * &(&x_next - &x));
            t = t_next;
        }
        x = x_next;
        if iter % 64 == 0 {
            let grad = qp.m.dot(&x) + &qp.e;
            let res = proj(&(&x - &grad)) - &x;
            let worst = res.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if worst <= tol {
                return x;
            }
        }
    }
    panic!("projected-gradient oracle failed to reach tolerance {tol}");
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    if n == 0 {
        return Vec::new();
    }
    let mut a = m.clone();
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for _sweep in 0..200 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(a[(p, q)].abs());
            }
        }
        if off < 1e-13 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

/// Result of the reference two-variable SVM solver.
pub struct ReferenceSvm {
    pub alpha: Array1<f64>,
    pub bias: f64,
    /// Objective in minimization form: `0.5 a'(yy.K)a - sum(a)`.
    pub objective: f64,
}

/// Textbook sequential two-variable solver for the standard soft-margin SVM
/// dual (labels in {-1,+1}, box [0, c], equality `y'alpha = 0`), using
/// maximal-violating-pair selection and Platt's clipped update.
///
/// `k` is the plain kernel matrix (labels not folded in).
pub fn reference_smo(k: &Array2<f64>, y: &[i8], c: f64, tol: f64) -> ReferenceSvm {
    let n = y.len();
    assert_eq!(k.nrows(), n);
    let yf: Vec<f64> = y.iter().map(|v| *v as f64).collect();
    let mut alpha = vec![0.0f64; n];
    // f[i] = sum_j alpha_j y_j K_ij - y_i
    let mut f: Vec<f64> = yf.iter().map(|yi| -yi).collect();

    let mut b_up;
    let mut b_low;
    for _round in 0..200_000 {
        // Maximal violating pair over the index sets that can still move.
        let mut i_up = usize::MAX;
        let mut i_low = usize::MAX;
        b_up = f64::INFINITY;
        b_low = f64::NEG_INFINITY;
        for i in 0..n {
            let up_ok = (y[i] == 1 && alpha[i] < c - 1e-12) || (y[i] == -1 && alpha[i] > 1e-12);
            let low_ok = (y[i] == -1 && alpha[i] < c - 1e-12) || (y[i] == 1 && alpha[i] > 1e-12);
            if up_ok && f[i] < b_up {
                b_up = f[i];
                i_up = i;
            }
            if low_ok && f[i] > b_low {
                b_low = f[i];
                i_low = i;
            }
        }
        if i_up == usize::MAX || i_low == usize::MAX || b_low - b_up <= tol {
            break;
        }
        let (i, j) = (i_up, i_low);
        let s = yf[i] * yf[j];
        let (lo, hi) = if y[i] != y[j] {
            (
                (alpha[i] - alpha[j]).max(0.0),
                c.min(c + alpha[i] - alpha[j]),
            )
        } else {
            (
                (alpha[i] + alpha[j] - c).max(0.0),
                c.min(alpha[i] + alpha[j]),
            )
        };
        let eta = k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)];
        let mut ai_new = if eta > 1e-14 {
            alpha[i] + yf[i] * (f[j] - f[i]) / eta
        } else {
            // Flat direction: push to whichever end descends.
            if yf[i] * (f[j] - f[i]) > 0.0 {
                hi
            } else {
                lo
            }
        };
        ai_new = ai_new.clamp(lo, hi);
        let aj_new = alpha[j] + s * (alpha[i] - ai_new);
        let (di, dj) = (ai_new - alpha[i], aj_new - alpha[j]);
        if di.abs() < 1e-15 && dj.abs() < 1e-15 {
            break;
        }
        alpha[i] = ai_new;
        alpha[j] = aj_new;
        for t in 0..n {
            f[t] += di * yf[i] * k[(i, t)] + dj * yf[j] * k[(j, t)];
        }
    }

    // Bias from the midpoint of the final violation interval.
    let mut up = f64::INFINITY;
    let mut low = f64::NEG_INFINITY;
    for i in 0..n {
        let up_ok = (y[i] == 1 && alpha[i] < c - 1e-12) || (y[i] == -1 && alpha[i] > 1e-12);
        let low_ok = (y[i] == -1 && alpha[i] < c - 1e-12) || (y[i] == 1 && alpha[i] > 1e-12);
        if up_ok {
            up = up.min(f[i]);
        }
        if low_ok {
            low = low.max(f[i]);
        }
    }
    let bias = -0.5 * (up + low);

    let alpha = Array1::from_vec(alpha);
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * yf[i] * yf[j] * k[(i, j)];
        }
    }
    let objective = 0.5 * quad - alpha.sum();
    ReferenceSvm {
        alpha,
        bias,
        objective,
    }
}

/// Random symmetric PSD matrix `G'G` with `rank` factors of dimension `m`.
pub fn random_psd(rng: &mut ChaCha8Rng, m: usize, rank: usize) -> Array2<f64> {
    let mut g = Array2::zeros((rank, m));
    for v in g.iter_mut() {
        *v = standard_normal(rng);
    }
    g.t().dot(&g)
}

/// Random QP instance whose box contains 0 (hence feasible): PSD quadratic
/// term (sometimes rank-deficient), normal linear term, equality coefficients
/// drawn from {-1, +1} or a continuous distribution with occasional zeros.
pub fn random_feasible_qp(rng: &mut ChaCha8Rng, m: usize) -> RawQp {
    let rank = if rng.random_bool(0.3) {
        (m / 2).max(1)
    } else {
        m + 2
    };
    let mat = random_psd(rng, m, rank);
    let e = Array1::from_iter((0..m).map(|_| 2.0 * standard_normal(rng)));
    let a = if rng.random_bool(0.5) {
        Array1::from_iter((0..m).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }))
    } else {
        Array1::from_iter((0..m).map(|_| {
            if rng.random_bool(0.15) {
                0.0
            } else {
                standard_normal(rng)
            }
        }))
    };
    let lower = Array1::from_iter((0..m).map(|_| {
        if rng.random_bool(0.5) {
            0.0
        } else {
            -rng.random_range(0.1..3.0)
        }
    }));
    let upper = Array1::from_iter((0..m).map(|_| rng.random_range(0.1..4.0)));
    RawQp {
        m: mat,
        e,
        a,
        lower,
        upper,
    }
}

/// Standard normal draw via Box-Muller, so this module only needs `rand`'s
/// uniform source and stays independent of `rand_distr`.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
