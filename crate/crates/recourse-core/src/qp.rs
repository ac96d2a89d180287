//! Convex quadratic programming over a box intersected with one hyperplane:
//!
//! ```text
//! minimize    0.5 mu' M mu + e' mu
//! subject to  a' mu = 0,   lower <= mu <= upper
//! ```
//!
//! This shape covers the classic soft-margin SVM dual (`a` the labels, box
//! `[0, nu]`) and its recourse-regularized extension, whose final variable
//! has an arbitrary equality coefficient and a sign-symmetric box.
//!
//! The main solver is a sequential working-pair method: at each step it picks
//! the pair of variables most violating the optimality conditions and
//! minimizes the objective exactly along the one feasible line through them.
//! Variables whose equality coefficient is zero are unconstrained by the
//! hyperplane and get exact single-coordinate Newton steps instead. A dense
//! active-set solver over the same problem type is provided as an
//! independent cross-check for small instances.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance used to classify a coordinate as sitting on its bound.
fn bound_tol(lower: f64, upper: f64) -> f64 {
    1e-10 * (upper - lower).max(1.0)
}

/// A validated problem instance. `M` must be symmetric; positive
/// semidefiniteness is certified at solve time (with a small jitter retry).
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    m: Array2<f64>,
    e: Array1<f64>,
    a: Array1<f64>,
    lower: Array1<f64>,
    upper: Array1<f64>,
}

/// Knobs for [`QuadraticProgram::solve`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Target for the optimality residual reported by
    /// [`QuadraticProgram::kkt_residual`].
    pub tolerance: f64,
    /// Outer sweep cap; each sweep performs up to `dim` pair/single updates.
    /// Hitting the cap yields a solution flagged `converged: false`, not an
    /// error.
    pub max_sweeps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tolerance: 1e-6,
            max_sweeps: 2000,
        }
    }
}

/// Output of either solver.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub mu: Array1<f64>,
    /// Objective of the *original* problem at `mu` (jitter excluded).
    pub objective: f64,
    /// Final optimality residual against the original problem.
    pub kkt_residual: f64,
    /// Outer sweeps (pair solver) or active-set iterations (dense solver).
    pub iterations: usize,
    pub converged: bool,
    /// Whether the diagonal had to be jittered to certify semidefiniteness.
    pub jitter_applied: bool,
}

impl QuadraticProgram {
    /// Validates shapes, symmetry (to `1e-10` of the largest entry), finite
    /// entries, and box ordering.
    pub fn new(
        m: Array2<f64>,
        e: Array1<f64>,
        a: Array1<f64>,
        lower: Array1<f64>,
        upper: Array1<f64>,
    ) -> Result<Self> {
        let dim = e.len();
        if dim == 0 {
            return Err(Error::InvalidInput("empty quadratic program".into()));
        }
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::InvalidInput(format!(
                "quadratic term is {}x{}, expected {dim}x{dim}",
                m.nrows(),
                m.ncols()
            )));
        }
        for (name, len) in [
            ("a", a.len()),
            ("lower", lower.len()),
            ("upper", upper.len()),
        ] {
            if len != dim {
                return Err(Error::InvalidInput(format!(
                    "vector {name} has length {len}, expected {dim}"
                )));
            }
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in M".into()));
        }
        for (name, arr) in [("e", &e), ("a", &a)] {
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite entry in {name}")));
            }
        }
        let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
        let asym = linalg::max_asymmetry(&m);
        if asym > 1e-10 * scale {
            return Err(Error::InvalidInput(format!(
                "quadratic term is asymmetric by {asym:.3e} (scale {scale:.3e})"
            )));
        }
        for i in 0..dim {
            if !(lower[i].is_finite() && upper[i].is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite bound at index {i}"
                )));
            }
            if lower[i] > upper[i] {
                return Err(Error::Infeasible(format!(
                    "empty box at index {i}: [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(QuadraticProgram {
            m,
            e,
            a,
            lower,
            upper,
        })
    }

    pub fn dim(&self) -> usize {
        self.e.len()
    }

    pub fn quadratic(&self) -> &Array2<f64> {
        &self.m
    }

    pub fn linear(&self) -> &Array1<f64> {
        &self.e
    }

    pub fn equality(&self) -> &Array1<f64> {
        &self.a
    }

    pub fn bounds(&self) -> (&Array1<f64>, &Array1<f64>) {
        (&self.lower, &self.upper)
    }

    /// Objective value `0.5 mu'M mu + e'mu`.
    pub fn objective(&self, mu: &Array1<f64>) -> f64 {
        0.5 * mu.dot(&self.m.dot(mu)) + self.e.dot(mu)
    }

    /// Quadratic form `mu' M mu` alone (the squared weight-vector norm of an
    /// SVM dual built from this problem).
    pub fn quad_form(&self, mu: &Array1<f64>) -> f64 {
        mu.dot(&self.m.dot(mu))
    }

    fn is_fixed(&self, i: usize) -> bool {
        self.upper[i] - self.lower[i] <= 0.0
    }

    /// Optimality residual at `mu`: the smallest, over the hyperplane
    /// multiplier, of the worst per-coordinate stationarity violation, plus
    /// the equality violation `|a'mu|`. Zero exactly at solutions.
    ///
    /// Coordinates on their bound contribute only the infeasible side of
    /// their gradient; fixed coordinates (`lower == upper`) contribute
    /// nothing.
    pub fn kkt_residual(&self, mu: &Array1<f64>) -> Result<f64> {
        if mu.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "point has length {}, expected {}",
                mu.len(),
                self.dim()
            )));
        }
        for i in 0..self.dim() {
            let slack = bound_tol(self.lower[i], self.upper[i]).max(1e-6);
            if mu[i] < self.lower[i] - slack || mu[i] > self.upper[i] + slack {
                return Err(Error::InvalidInput(format!(
                    "point leaves the box at index {i}: {} not in [{}, {}]",
                    mu[i], self.lower[i], self.upper[i]
                )));
            }
        }
        let grad = self.m.dot(mu) + &self.e;
        Ok(self.residual_from_grad(mu, &grad))
    }

    /// Stationarity violation of coordinate `i` at multiplier `beta`.
    fn coordinate_violation(
        &self,
        mu: &Array1<f64>,
        grad: &Array1<f64>,
        i: usize,
        beta: f64,
    ) -> f64 {
        let reduced = grad[i] + beta * self.a[i];
        let tol = bound_tol(self.lower[i], self.upper[i]);
        let at_lower = mu[i] <= self.lower[i] + tol;
        let at_upper = mu[i] >= self.upper[i] - tol;
        match (at_lower, at_upper) {
            (true, true) => 0.0, // fixed by the box; no stationarity condition
            (true, false) => (-reduced).max(0.0),
            (false, true) => reduced.max(0.0),
            (false, false) => reduced.abs(),
        }
    }

    fn worst_violation(&self, mu: &Array1<f64>, grad: &Array1<f64>, beta: f64) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            if self.is_fixed(i) {
                continue;
            }
            worst = worst.max(self.coordinate_violation(mu, grad, i, beta));
        }
        worst
    }

    /// Minimizes the worst stationarity violation over the hyperplane
    /// multiplier; the objective is convex piecewise-linear in the
    /// multiplier, so ternary search converges. Returns `(residual, beta)`.
    fn balanced_violation(&self, mu: &Array1<f64>, grad: &Array1<f64>) -> (f64, f64) {
        // Any constrained multiplier lies within the span of the per-variable
        // crossover points grad_i / -a_i; pad the bracket by one unit.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.dim() {
            if self.is_fixed(i) || self.a[i] == 0.0 {
                continue;
            }
            let crossover = -grad[i] / self.a[i];
            lo = lo.min(crossover);
            hi = hi.max(crossover);
        }
        if !lo.is_finite() {
            // No live coordinate touches the hyperplane; beta is irrelevant.
            return (self.worst_violation(mu, grad, 0.0), 0.0);
        }
        let (mut lo, mut hi) = (lo - 1.0, hi + 1.0);
        for _ in 0..300 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            let f1 = self.worst_violation(mu, grad, m1);
            let f2 = self.worst_violation(mu, grad, m2);
            if f1 < f2 {
                hi = m2;
            } else if f2 < f1 {
                lo = m1;
            } else {
                lo = m1;
                hi = m2;
            }
        }
        let beta = 0.5 * (lo + hi);
        (self.worst_violation(mu, grad, beta), beta)
    }

    fn residual_from_grad(&self, mu: &Array1<f64>, grad: &Array1<f64>) -> f64 {
        let (stationarity, _) = self.balanced_violation(mu, grad);
        stationarity + self.a.dot(mu).abs()
    }

    /// Exact feasibility test: the hyperplane meets the box iff zero lies
    /// between the extremes of `a'mu` over the box.
    fn check_feasible(&self) -> Result<()> {
        let mut min_val = 0.0;
        let mut max_val = 0.0;
        for i in 0..self.dim() {
            let (x, y) = (self.a[i] * self.lower[i], self.a[i] * self.upper[i]);
            min_val += x.min(y);
            max_val += x.max(y);
        }
        if min_val > 1e-12 || max_val < -1e-12 {
            return Err(Error::Infeasible(format!(
                "hyperplane misses the box: a'mu ranges over [{min_val:.3e}, {max_val:.3e}]"
            )));
        }
        Ok(())
    }

    /// A feasible starting point: clip zero into the box, then walk the
    /// hyperplane multiplier until the equality holds.
    fn feasible_start(&self) -> Result<Array1<f64>> {
        self.check_feasible()?;
        let clip = |tau: f64| -> Array1<f64> {
            Array1::from_iter(
                (0..self.dim()).map(|i| (-tau * self.a[i]).clamp(self.lower[i], self.upper[i])),
            )
        };
        if self.a.iter().all(|v| *v == 0.0) {
            return Ok(clip(0.0));
        }
        let h = |tau: f64| self.a.dot(&clip(tau));
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
        if h(lo) < 0.0 || h(hi) > 0.0 {
            return Err(Error::Infeasible(
                "could not bracket a feasible point on the hyperplane".into(),
            ));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let start = clip(0.5 * (lo + hi));
        if self.a.dot(&start).abs() > 1e-8 * self.dim() as f64 {
            return Err(Error::Infeasible(format!(
                "feasible start still violates the equality by {:.3e}",
                self.a.dot(&start).abs()
            )));
        }
        Ok(start)
    }

    /// Certifies `M + 1e-6 I` is positive definite, retrying once with a
    /// relative diagonal jitter. Returns the (possibly jittered) matrix to
    /// iterate on, or `None` when the original can be used as-is.
    fn certified_quadratic(&self) -> Result<Option<Array2<f64>>> {
        if linalg::cholesky_shifted(&self.m, 1e-6).is_ok() {
            return Ok(None);
        }
        let dim = self.dim();
        let trace: f64 = (0..dim).map(|i| self.m[(i, i)]).sum();
        let jitter = 1e-8 * trace / dim as f64;
        let mut adjusted = self.m.clone();
        for i in 0..dim {
            adjusted[(i, i)] += jitter;
        }
        match linalg::cholesky_shifted(&adjusted, 1e-6) {
            Ok(()) => Ok(Some(adjusted)),
            Err(_) => Err(Error::Numeric(format!(
                "quadratic term is not positive semidefinite even after jitter {jitter:.3e}"
            ))),
        }
    }

    /// Solves the program by sequential working-pair descent.
    ///
    /// Deterministic: identical inputs produce the identical iterate
    /// sequence. The objective never increases from one update to the next
    /// (each update is an exact line minimization over a feasible segment).
    pub fn solve(&self, settings: &SolverSettings) -> Result<QpSolution> {
        if !(settings.tolerance > 0.0 && settings.tolerance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "solver tolerance must be positive, got {}",
                settings.tolerance
            )));
        }
        let jittered = self.certified_quadratic()?;
        let jitter_applied = jittered.is_some();
        let m_iter: &Array2<f64> = jittered.as_ref().unwrap_or(&self.m);

        let dim = self.dim();
        let mut mu = self.feasible_start()?;
        let mut grad = m_iter.dot(&mu) + &self.e;
        let inner_tol = 0.5 * settings.tolerance;

        let mut sweeps = 0usize;
        let mut converged = false;
        while sweeps < settings.max_sweeps {
            let (stationarity, _) = self.balanced_violation(&mu, &grad);
            if stationarity + self.a.dot(&mu).abs() <= settings.tolerance {
                converged = true;
                break;
            }
            let mut moved_any = false;
            for _ in 0..dim {
                let pair = self.select_pair(&mu, &grad);
                let single = self.select_single(&mu, &grad);
                let pair_gap = pair.map(|(_, _, gap)| gap).unwrap_or(0.0);
                let single_viol = single.map(|(_, v)| v).unwrap_or(0.0);
                if pair_gap <= inner_tol && single_viol <= inner_tol {
                    break;
                }
                let moved = if pair_gap >= single_viol {
                    let (i, j, _) = pair.expect("pair gap positive implies a pair");
                    self.update_pair(m_iter, &mut mu, &mut grad, i, j)
                } else {
                    let (s, _) = single.expect("single violation positive implies an index");
                    self.update_single(m_iter, &mut mu, &mut grad, s)
                };
                if moved {
                    moved_any = true;
                } else {
                    break;
                }
            }
            sweeps += 1;
            if !moved_any {
                // No feasible descent move found below the tolerance; the
                // residual check at the top of the loop has the final word.
                let (stationarity, _) = self.balanced_violation(&mu, &grad);
                converged = stationarity + self.a.dot(&mu).abs() <= settings.tolerance;
                break;
            }
        }

        // Report against the original, unjittered problem.
        let final_grad = self.m.dot(&mu) + &self.e;
        let kkt = self.residual_from_grad(&mu, &final_grad);
        Ok(QpSolution {
            objective: self.objective(&mu),
            kkt_residual: kkt,
            iterations: sweeps,
            converged: converged || kkt <= settings.tolerance,
            jitter_applied,
            mu,
        })
    }

    /// Most-violating pair among coordinates coupled by the hyperplane:
    /// maximizes the spread in `-grad/a` between a coordinate that can
    /// increase `a_i mu_i` and one that can decrease it. Returns
    /// `(i, j, gap)`.
    fn select_pair(&self, mu: &Array1<f64>, grad: &Array1<f64>) -> Option<(usize, usize, f64)> {
        let mut best_lo: Option<(usize, f64)> = None;
        let mut best_hi: Option<(usize, f64)> = None;
        for i in 0..self.dim() {
            if self.a[i] == 0.0 || self.is_fixed(i) {
                continue;
            }
            let tol = bound_tol(self.lower[i], self.upper[i]);
            let at_lower = mu[i] <= self.lower[i] + tol;
            let at_upper = mu[i] >= self.upper[i] - tol;
            let f = -grad[i] / self.a[i];
            let can_raise = if self.a[i] > 0.0 {
                !at_upper
            } else {
                !at_lower
            };
            let can_drop = if self.a[i] > 0.0 {
                !at_lower
            } else {
                !at_upper
            };
            if can_raise && best_lo.map(|(_, v)| f > v).unwrap_or(true) {
                best_lo = Some((i, f));
            }
            if can_drop && best_hi.map(|(_, v)| f < v).unwrap_or(true) {
                best_hi = Some((i, f));
            }
        }
        match (best_lo, best_hi) {
            (Some((i, fi)), Some((j, fj))) if i != j && fi > fj => Some((i, j, fi - fj)),
            _ => None,
        }
    }

    /// Most-violating coordinate among those with a zero equality
    /// coefficient. Returns `(index, violation)`.
    fn select_single(&self, mu: &Array1<f64>, grad: &Array1<f64>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.dim() {
            if self.a[i] != 0.0 || self.is_fixed(i) {
                continue;
            }
            let v = self.coordinate_violation(mu, grad, i, 0.0);
            if best.map(|(_, b)| v > b).unwrap_or(true) {
                best = Some((i, v));
            }
        }
        best.filter(|(_, v)| *v > 0.0)
    }

    /// Exact minimization along the feasible line through coordinates `i`
    /// and `j` (direction `a_j e_i - a_i e_j`, which preserves the
    /// equality). Returns whether the point moved.
    fn update_pair(
        &self,
        m_iter: &Array2<f64>,
        mu: &mut Array1<f64>,
        grad: &mut Array1<f64>,
        i: usize,
        j: usize,
    ) -> bool {
        let (ai, aj) = (self.a[i], self.a[j]);
        let slope = grad[i] * aj - grad[j] * ai;
        let curv =
            aj * aj * m_iter[(i, i)] - 2.0 * ai * aj * m_iter[(i, j)] + ai * ai * m_iter[(j, j)];

        // Feasible step interval from both coordinates' boxes.
        let mut t_min = f64::NEG_INFINITY;
        let mut t_max = f64::INFINITY;
        let mut tighten = |coeff: f64, low: f64, high: f64| {
            if coeff > 0.0 {
                t_min = t_min.max(low / coeff);
                t_max = t_max.min(high / coeff);
            } else if coeff < 0.0 {
                t_min = t_min.max(high / coeff);
                t_max = t_max.min(low / coeff);
            }
        };
        tighten(aj, self.lower[i] - mu[i], self.upper[i] - mu[i]);
        tighten(-ai, self.lower[j] - mu[j], self.upper[j] - mu[j]);
        if !(t_min.is_finite() && t_max.is_finite()) {
            // Both coefficients zero cannot happen for a selected pair.
            return false;
        }

        let t = if curv > 0.0 {
            (-slope / curv).clamp(t_min, t_max)
        } else if slope < 0.0 {
            t_max
        } else if slope > 0.0 {
            t_min
        } else if curv < 0.0 {
            if t_max.abs() >= t_min.abs() {
                t_max
            } else {
                t_min
            }
        } else {
            0.0
        };
        if t == 0.0 {
            return false;
        }
        let di = t * aj;
        let dj = -t * ai;
        mu[i] = (mu[i] + di).clamp(self.lower[i], self.upper[i]);
        mu[j] = (mu[j] + dj).clamp(self.lower[j], self.upper[j]);
        let row_i = m_iter.row(i);
        let row_j = m_iter.row(j);
        for k in 0..self.dim() {
            grad[k] += di * row_i[k] + dj * row_j[k];
        }
        true
    }

    /// Exact Newton step clipped to the box for a hyperplane-free
    /// coordinate. Returns whether the point moved.
    fn update_single(
        &self,
        m_iter: &Array2<f64>,
        mu: &mut Array1<f64>,
        grad: &mut Array1<f64>,
        s: usize,
    ) -> bool {
        let g = grad[s];
        let h = m_iter[(s, s)];
        let target = if h > 0.0 {
            mu[s] - g / h
        } else if g < 0.0 {
            self.upper[s]
        } else if g > 0.0 {
            self.lower[s]
        } else {
            mu[s]
        };
        let new = target.clamp(self.lower[s], self.upper[s]);
        let delta = new - mu[s];
        if delta == 0.0 {
            return false;
        }
        mu[s] = new;
        let row = m_iter.row(s);
        for k in 0..self.dim() {
            grad[k] += delta * row[k];
        }
        true
    }

    /// Primal active-set solver over the same problem, used as an
    /// independent cross-check for small instances (`dim` capped at 400).
    ///
    /// Operates by repeatedly solving the equality-constrained subproblem on
    /// the currently free coordinates via a dense KKT system, stepping until
    /// a bound blocks, and releasing the most negative bound multiplier once
    /// the subproblem is stationary.
    pub fn solve_dense(&self) -> Result<QpSolution> {
        let dim = self.dim();
        if dim > 400 {
            return Err(Error::InvalidInput(format!(
                "dense cross-check solver is limited to 400 variables, got {dim}"
            )));
        }
        let jittered = self.certified_quadratic()?;
        let jitter_applied = jittered.is_some();
        let m_iter: &Array2<f64> = jittered.as_ref().unwrap_or(&self.m);

        #[derive(Clone, Copy, PartialEq)]
        enum State {
            Free,
            AtLower,
            AtUpper,
        }
        let mut mu = self.feasible_start()?;
        let mut state: Vec<State> = (0..dim)
            .map(|i| {
                let tol = bound_tol(self.lower[i], self.upper[i]);
                if self.is_fixed(i) || mu[i] <= self.lower[i] + tol {
                    State::AtLower
                } else if mu[i] >= self.upper[i] - tol {
                    State::AtUpper
                } else {
                    State::Free
                }
            })
            .collect();

        let release_tol = 1e-9;
        let mut iterations = 0usize;
        let mut converged = false;
        let cap = 50 * dim + 200;
        while iterations < cap {
            iterations += 1;
            let free: Vec<usize> = (0..dim)
                .filter(|&i| state[i] == State::Free && !self.is_fixed(i))
                .collect();
            let grad = m_iter.dot(&mu) + &self.e;

            let (delta, beta) = if free.is_empty() {
                let (_, beta) = self.balanced_violation(&mu, &grad);
                (Array1::zeros(0), beta)
            } else {
                let f = free.len();
                let mut kkt = Array2::zeros((f + 1, f + 1));
                let mut rhs = Array1::zeros(f + 1);
                for (r, &i) in free.iter().enumerate() {
                    for (c, &j) in free.iter().enumerate() {
                        kkt[(r, c)] = m_iter[(i, j)];
                    }
                    kkt[(r, f)] = self.a[i];
                    kkt[(f, r)] = self.a[i];
                    rhs[r] = -grad[i];
                }
                rhs[f] = -self.a.dot(&mu);
                let solved = linalg::solve_lu(&kkt, &rhs).or_else(|_| {
                    // Singular subproblem (semidefinite block): regularize.
                    let mut reg = kkt.clone();
                    let scale = reg.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
                    for r in 0..f {
                        reg[(r, r)] += 1e-10 * scale;
                    }
                    linalg::solve_lu(&reg, &rhs)
                })?;
                let delta = Array1::from_iter(solved.iter().take(f).copied());
                (delta, solved[f])
            };

            let delta_norm = delta.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if delta_norm <= 1e-11 * (1.0 + mu.iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
                // Stationary on the working set; look for a bound to release.
                let mut worst: Option<(usize, f64)> = None;
                for i in 0..dim {
                    if self.is_fixed(i) {
                        continue;
                    }
                    let sigma = grad[i] + beta * self.a[i];
                    let viol = match state[i] {
                        State::AtLower => -sigma,
                        State::AtUpper => sigma,
                        State::Free => continue,
                    };
                    if viol > release_tol && worst.map(|(_, w)| viol > w).unwrap_or(true) {
                        worst = Some((i, viol));
                    }
                }
                match worst {
                    Some((i, _)) => state[i] = State::Free,
                    None => {
                        converged = true;
                        break;
                    }
                }
                continue;
            }

            // Ratio test over the free coordinates.
            let mut alpha = 1.0f64;
            let mut blocking: Option<(usize, State)> = None;
            for (r, &i) in free.iter().enumerate() {
                let d = delta[r];
                if d > 0.0 {
                    let room = (self.upper[i] - mu[i]) / d;
                    if room < alpha {
                        alpha = room.max(0.0);
                        blocking = Some((i, State::AtUpper));
                    }
                } else if d < 0.0 {
                    let room = (self.lower[i] - mu[i]) / d;
                    if room < alpha {
                        alpha = room.max(0.0);
                        blocking = Some((i, State::AtLower));
                    }
                }
            }
            for (r, &i) in free.iter().enumerate() {
                mu[i] = (mu[i] + alpha * delta[r]).clamp(self.lower[i], self.upper[i]);
            }
            if let Some((i, s)) = blocking {
                state[i] = s;
            }
        }

        let final_grad = self.m.dot(&mu) + &self.e;
        let kkt = self.residual_from_grad(&mu, &final_grad);
        Ok(QpSolution {
            objective: self.objective(&mu),
            kkt_residual: kkt,
            iterations,
            converged,
            jitter_applied,
            mu,
        })
    }
}
