//! Shared engine behind the sparse-recovery entry points.
//!
//! All three solvers minimize a sum of group norms subject to a residual
//! bound. The engine works on the penalized form
//! `lambda * sum_g ||B_g|| + 1/2 ||Phi B - Y||_F^2`, wrapped in a
//! one-dimensional search on `lambda` that drives the residual to the bound
//! (discrepancy principle). Each penalized solve runs accelerated proximal
//! gradient (fixed step from a power-iteration bound on `||Phi||^2`,
//! adaptive restart) followed by cyclic block-coordinate refinement on the
//! same objective; the coordinate phase is what consolidates mass between
//! coherent columns, which plain proximal iterations only move at a rate
//! proportional to `lambda`. Feasible iterates carry a duality-gap
//! certificate for the constrained problem.

use num_complex::Complex64;

use crate::numerics::CMat;

/// How coefficients are tied together for the mixed-norm objective.
#[derive(Clone, Debug)]
pub(crate) enum Grouping {
    /// Each row of the (M x R) coefficient matrix is one group. With R = 1
    /// this is the plain complex l1 norm.
    Rows,
    /// Arbitrary partition of the entries of a column vector (R = 1).
    Indexed(Vec<Vec<usize>>),
}

impl Grouping {
    fn for_each_norm(&self, b: &CMat, mut f: impl FnMut(f64)) {
        match self {
            Grouping::Rows => {
                let (m, r) = b.shape();
                for i in 0..m {
                    let mut sq = 0.0;
                    for j in 0..r {
                        sq += b[(i, j)].norm_sqr();
                    }
                    f(sq.sqrt());
                }
            }
            Grouping::Indexed(groups) => {
                let data = b.as_slice();
                for g in groups {
                    let sq: f64 = g.iter().map(|&i| data[i].norm_sqr()).sum();
                    f(sq.sqrt());
                }
            }
        }
    }

    pub(crate) fn norm_sum(&self, b: &CMat) -> f64 {
        let mut total = 0.0;
        self.for_each_norm(b, |n| total += n);
        total
    }

    pub(crate) fn max_norm(&self, b: &CMat) -> f64 {
        let mut max = 0.0f64;
        self.for_each_norm(b, |n| max = max.max(n));
        max
    }

    /// Proximal map of `t * sum_g ||B_g||`: per-group shrinkage toward zero.
    fn prox_in_place(&self, b: &mut CMat, t: f64) {
        match self {
            Grouping::Rows => {
                let (m, r) = b.shape();
                for i in 0..m {
                    let mut sq = 0.0;
                    for j in 0..r {
                        sq += b[(i, j)].norm_sqr();
                    }
                    let norm = sq.sqrt();
                    let scale = if norm > t { 1.0 - t / norm } else { 0.0 };
                    for j in 0..r {
                        b[(i, j)] *= scale;
                    }
                }
            }
            Grouping::Indexed(groups) => {
                let data = b.as_mut_slice();
                for g in groups {
                    let sq: f64 = g.iter().map(|&i| data[i].norm_sqr()).sum();
                    let norm = sq.sqrt();
                    let scale = if norm > t { 1.0 - t / norm } else { 0.0 };
                    for &i in g {
                        data[i] *= scale;
                    }
                }
            }
        }
    }

    /// Indices reported as the support at a relative threshold: entry indices
    /// for vector groupings, row indices for the row grouping. Members of one
    /// group switch on and off together.
    pub(crate) fn support(&self, b: &CMat, rel_threshold: f64) -> Vec<usize> {
        let cutoff = rel_threshold * self.max_norm(b);
        let mut out = Vec::new();
        match self {
            Grouping::Rows => {
                let (m, r) = b.shape();
                for i in 0..m {
                    let mut sq = 0.0;
                    for j in 0..r {
                        sq += b[(i, j)].norm_sqr();
                    }
                    if sq.sqrt() > cutoff {
                        out.push(i);
                    }
                }
            }
            Grouping::Indexed(groups) => {
                let data = b.as_slice();
                for g in groups {
                    let sq: f64 = g.iter().map(|&i| data[i].norm_sqr()).sum();
                    if sq.sqrt() > cutoff {
                        out.extend_from_slice(g);
                    }
                }
                out.sort_unstable();
            }
        }
        out
    }

}

/// Power-iteration estimate of `||Phi||_2^2`, inflated by 1%.
pub fn operator_norm_sq(phi: &CMat) -> f64 {
    let (n, m) = phi.shape();
    if n == 0 || m == 0 {
        return 0.0;
    }
    let mut v = CMat::from_fn(m, 1, |i, _| Complex64::from_polar(1.0, i as f64));
    let norm = v.norm();
    v.unscale_mut(norm);
    let mut w = CMat::zeros(n, 1);
    let mut estimate = 0.0;
    for _ in 0..20 {
        w.gemm(Complex64::ONE, phi, &v, Complex64::ZERO);
        estimate = w.norm_squared();
        v.gemm_ad(Complex64::ONE, phi, &w, Complex64::ZERO);
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v.unscale_mut(norm);
    }
    estimate * 1.01
}

pub(crate) struct EngineOptions {
    pub epsilon: f64,
    pub max_inner_iterations: usize,
    pub max_outer_iterations: usize,
    /// Relative objective-change threshold for the inner stop.
    pub objective_tolerance: f64,
    /// Relative duality-gap target certifying the constrained optimum.
    pub gap_tolerance: f64,
    pub operator_norm_sq: Option<f64>,
}

pub(crate) struct EngineResult {
    pub beta: CMat,
    pub residual_norm: f64,
    /// Sum of group norms at the returned point.
    pub objective: f64,
    /// Relative duality gap of the constrained problem at the returned point.
    pub duality_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Feasibility slack: the residual may exceed epsilon by this relative margin.
pub(crate) const FEASIBILITY_SLACK: f64 = 1e-6;

/// Iterations the accelerated phase runs before coordinate refinement.
const FISTA_PHASE: usize = 40;
/// Consecutive quiet steps required before a phase may stop.
const QUIET_WINDOW: usize = 4;

struct Solver<'a> {
    phi: &'a CMat,
    y: &'a CMat,
    grouping: &'a Grouping,
    step: f64,
    lipschitz: f64,
    /// Squared column norms of `phi`.
    col_norm_sq: Vec<f64>,
    // iterate state
    b: CMat,
    b_prev: CMat,
    z: CMat,      // Phi * b
    z_prev: CMat, // Phi * b_prev
    y_extra: CMat,
    z_extra: CMat,
    grad: CMat,
    resid: CMat,
    t: f64,
}

/// Complex group shrink: `q * max(0, 1 - t / ||q||)`, written through `out`.
fn group_shrink(q: &[Complex64], t: f64, out: &mut [Complex64]) {
    let norm = q.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let scale = if norm > t { 1.0 - t / norm } else { 0.0 };
    for (o, v) in out.iter_mut().zip(q) {
        *o = v * scale;
    }
}

impl<'a> Solver<'a> {
    fn new(phi: &'a CMat, y: &'a CMat, grouping: &'a Grouping, lipschitz: f64) -> Self {
        let (n, r) = y.shape();
        let m = phi.ncols();
        let b = CMat::zeros(m, r);
        let col_norm_sq = (0..m)
            .map(|j| phi.column(j).norm_squared())
            .collect();
        Solver {
            phi,
            y,
            grouping,
            step: 1.0 / lipschitz,
            lipschitz,
            col_norm_sq,
            b: b.clone(),
            b_prev: b.clone(),
            z: CMat::zeros(n, r),
            z_prev: CMat::zeros(n, r),
            y_extra: b,
            z_extra: CMat::zeros(n, r),
            grad: CMat::zeros(m, r),
            resid: CMat::zeros(n, r),
            t: 1.0,
        }
    }

    fn reset_momentum(&mut self) {
        self.t = 1.0;
        self.y_extra.copy_from(&self.b);
        self.z_extra.copy_from(&self.z);
        self.b_prev.copy_from(&self.b);
        self.z_prev.copy_from(&self.z);
    }

    fn objective(&self, lambda: f64) -> (f64, f64) {
        let mut resid_sq = 0.0;
        for (z, y) in self.z.as_slice().iter().zip(self.y.as_slice()) {
            resid_sq += (z - y).norm_sqr();
        }
        let primal = self.grouping.norm_sum(&self.b);
        (lambda * primal + 0.5 * resid_sq, resid_sq.sqrt())
    }

    /// One accelerated proximal-gradient phase at `lambda`.
    fn fista_phase(&mut self, lambda: f64, max_iters: usize, tol: f64) -> usize {
        self.reset_momentum();
        let (mut f_prev, _) = self.objective(lambda);
        let mut best_f = f_prev;
        let mut iterations = 0;
        let mut quiet = 0;
        for _ in 0..max_iters {
            iterations += 1;
            self.resid.copy_from(&self.z_extra);
            self.resid -= self.y;
            self.grad
                .gemm_ad(Complex64::ONE, self.phi, &self.resid, Complex64::ZERO);
            std::mem::swap(&mut self.b, &mut self.b_prev);
            std::mem::swap(&mut self.z, &mut self.z_prev);
            for ((b, y), g) in self
                .b
                .as_mut_slice()
                .iter_mut()
                .zip(self.y_extra.as_slice())
                .zip(self.grad.as_slice())
            {
                *b = y - g * self.step;
            }
            self.grouping.prox_in_place(&mut self.b, self.step * lambda);
            self.z.gemm(Complex64::ONE, self.phi, &self.b, Complex64::ZERO);

            let (f, _) = self.objective(lambda);
            // Step-size guard: a diverging objective means the spectral bound
            // was low; halve the step and restart momentum.
            if f > 2.0 * best_f + 1e-300 {
                self.lipschitz *= 2.0;
                self.step = 1.0 / self.lipschitz;
                self.reset_momentum();
                f_prev = f;
                continue;
            }
            best_f = best_f.min(f);

            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * self.t * self.t).sqrt());
            let momentum = (self.t - 1.0) / t_next;
            let momentum = if f > f_prev * (1.0 + 1e-12) {
                self.t = 1.0;
                0.0
            } else {
                self.t = t_next;
                momentum
            };
            for ((ye, b), bp) in self
                .y_extra
                .as_mut_slice()
                .iter_mut()
                .zip(self.b.as_slice())
                .zip(self.b_prev.as_slice())
            {
                *ye = b + (b - bp) * momentum;
            }
            for ((ze, z), zp) in self
                .z_extra
                .as_mut_slice()
                .iter_mut()
                .zip(self.z.as_slice())
                .zip(self.z_prev.as_slice())
            {
                *ze = z + (z - zp) * momentum;
            }

            let change = (f - f_prev).abs();
            f_prev = f;
            if change <= tol * f.max(1e-300) {
                quiet += 1;
                if quiet >= QUIET_WINDOW {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        iterations
    }

    /// One cyclic block-coordinate pass at `lambda` over the given groups
    /// (all groups when `subset` is `None`). Maintains `resid = Y - Phi B`.
    fn cd_pass(&mut self, lambda: f64, subset: Option<&[usize]>) {
        let (m, r) = self.b.shape();
        let n = self.y.nrows();
        let phi = self.phi.as_slice();
        match self.grouping {
            Grouping::Rows => {
                let count = m;
                let iter: Box<dyn Iterator<Item = usize>> = match subset {
                    Some(s) => Box::new(s.iter().copied()),
                    None => Box::new(0..count),
                };
                let mut q = vec![Complex64::ZERO; r];
                let mut v_new = vec![Complex64::ZERO; r];
                for i in iter {
                    let a = self.col_norm_sq[i];
                    if a <= 0.0 {
                        continue;
                    }
                    let col = &phi[i * n..(i + 1) * n];
                    // q_c = phi_i^H resid_c + a * B[i, c]
                    for c in 0..r {
                        let rc = &self.resid.as_slice()[c * n..(c + 1) * n];
                        let mut acc = Complex64::ZERO;
                        for (p, rv) in col.iter().zip(rc) {
                            acc += p.conj() * rv;
                        }
                        q[c] = acc + self.b[(i, c)] * a;
                    }
                    group_shrink(&q, lambda, &mut v_new);
                    for v in v_new.iter_mut() {
                        *v /= a;
                    }
                    // resid_c -= phi_i (v_new_c - v_old_c)
                    for c in 0..r {
                        let delta = v_new[c] - self.b[(i, c)];
                        if delta != Complex64::ZERO {
                            let rc =
                                &mut self.resid.as_mut_slice()[c * n..(c + 1) * n];
                            for (p, rv) in col.iter().zip(rc.iter_mut()) {
                                *rv -= p * delta;
                            }
                        }
                        self.b[(i, c)] = v_new[c];
                    }
                }
            }
            Grouping::Indexed(groups) => {
                let count = groups.len();
                let iter: Box<dyn Iterator<Item = usize>> = match subset {
                    Some(s) => Box::new(s.iter().copied()),
                    None => Box::new(0..count),
                };
                for gi in iter {
                    let group = &groups[gi];
                    // Members map to distinct columns that occupy disjoint
                    // rows in every use of indexed grouping here (block
                    // diagonal stacking), so the within-group quadratic is
                    // separable with weights a_j.
                    let k = group.len();
                    let mut q = vec![Complex64::ZERO; k];
                    let mut weights = vec![0.0f64; k];
                    for (slot, &j) in group.iter().enumerate() {
                        let a = self.col_norm_sq[j];
                        weights[slot] = a;
                        let col = &phi[j * n..(j + 1) * n];
                        let rc = &self.resid.as_slice()[0..n];
                        let mut acc = Complex64::ZERO;
                        for (p, rv) in col.iter().zip(rc) {
                            acc += p.conj() * rv;
                        }
                        q[slot] = acc + self.b[(j, 0)] * weights[slot];
                    }
                    let v_new = weighted_group_prox(&q, &weights, lambda);
                    for (slot, &j) in group.iter().enumerate() {
                        let delta = v_new[slot] - self.b[(j, 0)];
                        if delta != Complex64::ZERO {
                            let col = &phi[j * n..(j + 1) * n];
                            let rc = &mut self.resid.as_mut_slice()[0..n];
                            for (p, rv) in col.iter().zip(rc.iter_mut()) {
                                *rv -= p * delta;
                            }
                        }
                        self.b[(j, 0)] = v_new[slot];
                    }
                }
            }
        }
        let _ = r;
    }

    /// Coordinate-descent refinement at `lambda`. `budget` counts passes;
    /// every pass (full or working-set) counts one unit. Leaves `z`
    /// consistent with `b`.
    fn cd_refine(&mut self, lambda: f64, budget: usize, tol: f64) -> usize {
        // resid = Y - Phi B, maintained incrementally across passes.
        self.resid.copy_from(self.y);
        self.resid -= &self.z;
        let mut used = 0;
        let mut quiet = 0;
        let mut f_prev = f64::INFINITY;
        while used < budget {
            // Full pass admits new support entries, then working-set passes
            // consolidate the active groups.
            self.cd_pass(lambda, None);
            used += 1;
            let active = self.active_groups();
            let mut ws_quiet = 0;
            let mut ws_f_prev = f64::INFINITY;
            while used < budget && !active.is_empty() {
                self.cd_pass(lambda, Some(&active));
                used += 1;
                let f = self.objective_from_resid(lambda);
                let change = (f - ws_f_prev).abs();
                ws_f_prev = f;
                if change <= tol * f.max(1e-300) {
                    ws_quiet += 1;
                    if ws_quiet >= QUIET_WINDOW {
                        break;
                    }
                } else {
                    ws_quiet = 0;
                }
            }
            let f = self.objective_from_resid(lambda);
            let change = (f - f_prev).abs();
            f_prev = f;
            if change <= tol * f.max(1e-300) {
                quiet += 1;
                if quiet >= 2 {
                    break;
                }
            } else {
                quiet = 0;
            }
        }
        // Restore z = Y - resid.
        self.z.copy_from(self.y);
        self.z -= &self.resid;
        used
    }

    fn objective_from_resid(&self, lambda: f64) -> f64 {
        lambda * self.grouping.norm_sum(&self.b) + 0.5 * self.resid.norm_squared()
    }

    fn active_groups(&self) -> Vec<usize> {
        let mut active = Vec::new();
        match self.grouping {
            Grouping::Rows => {
                let (m, r) = self.b.shape();
                for i in 0..m {
                    let nonzero = (0..r).any(|c| self.b[(i, c)] != Complex64::ZERO);
                    if nonzero {
                        active.push(i);
                    }
                }
            }
            Grouping::Indexed(groups) => {
                let data = self.b.as_slice();
                for (gi, g) in groups.iter().enumerate() {
                    if g.iter().any(|&i| data[i] != Complex64::ZERO) {
                        active.push(gi);
                    }
                }
            }
        }
        active
    }

    /// Penalized solve at `lambda`: accelerated phase then coordinate
    /// refinement. Returns (residual norm, iteration units used).
    fn solve_penalized(&mut self, lambda: f64, max_iters: usize, tol: f64) -> (f64, usize) {
        let fista_budget = FISTA_PHASE.min(max_iters);
        let mut used = self.fista_phase(lambda, fista_budget, tol);
        used += self.cd_refine(lambda, max_iters.saturating_sub(used), tol);
        let (_, resid) = self.objective(lambda);
        (resid, used)
    }

    /// Relative duality gap of the constrained problem at the current
    /// (feasible) iterate. The dual candidate scales the residual until the
    /// group-dual norm of its back-projection is one.
    fn constrained_gap(&mut self, epsilon: f64) -> f64 {
        let primal = self.grouping.norm_sum(&self.b);
        if primal <= 0.0 {
            return 0.0;
        }
        self.resid.copy_from(self.y);
        self.resid -= &self.z; // rho = Y - Phi B
        self.grad
            .gemm_ad(Complex64::ONE, self.phi, &self.resid, Complex64::ZERO);
        let nu = self.grouping.max_norm(&self.grad);
        if nu <= 0.0 {
            return f64::INFINITY;
        }
        let mut inner_re = 0.0;
        for (y, rho) in self.y.as_slice().iter().zip(self.resid.as_slice()) {
            inner_re += (y.conj() * rho).re;
        }
        let dual = (inner_re - epsilon * self.resid.norm()) / nu;
        ((primal - dual) / primal).max(0.0)
    }
}

/// Prox of `lambda ||v||_2` against the separable quadratic
/// `sum_j a_j/2 |v_j|^2 - Re<q_j, v_j>`: `v_j = q_j / (a_j + lambda / s)`
/// where `s = ||v||` solves a scalar fixed-point equation.
fn weighted_group_prox(q: &[Complex64], weights: &[f64], lambda: f64) -> Vec<Complex64> {
    let k = q.len();
    let q_norm = q.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if q_norm <= lambda {
        return vec![Complex64::ZERO; k];
    }
    let a_min = weights
        .iter()
        .copied()
        .filter(|a| *a > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !a_min.is_finite() {
        return vec![Complex64::ZERO; k];
    }
    let uniform = weights
        .iter()
        .all(|a| *a <= 0.0 || (a - weights[0]).abs() <= 1e-12 * weights[0].abs().max(1.0));
    if uniform && weights[0] > 0.0 {
        let a = weights[0];
        return q
            .iter()
            .map(|z| z * ((1.0 - lambda / q_norm) / a))
            .collect();
    }
    // Bisection on s in (0, q_norm / a_min]: g(s) = ||v(s)|| - s is
    // decreasing minus increasing, with g(0+) > 0 under q_norm > lambda.
    let norm_at = |s: f64| -> f64 {
        q.iter()
            .zip(weights)
            .map(|(z, a)| {
                let denom = a + lambda / s;
                z.norm_sqr() / (denom * denom)
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut lo = 0.0f64;
    let mut hi = q_norm / a_min;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        if norm_at(mid) > mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = 0.5 * (lo + hi);
    q.iter()
        .zip(weights)
        .map(|(z, a)| z / Complex64::new(a + lambda / s, 0.0))
        .collect()
}

pub(crate) fn solve_constrained(
    phi: &CMat,
    y: &CMat,
    grouping: &Grouping,
    opts: &EngineOptions,
) -> EngineResult {
    let (m, r) = (phi.ncols(), y.ncols());
    let y_norm = y.norm();
    let eps = opts.epsilon;
    // Absolute slack keeps an exact-equality bound (epsilon = 0 with Y = 0,
    // or feasibility checks at tiny epsilon) numerically meaningful.
    let feasible_limit = eps * (1.0 + FEASIBILITY_SLACK) + 1e-14 * y_norm;

    if y_norm <= feasible_limit {
        return EngineResult {
            beta: CMat::zeros(m, r),
            residual_norm: y_norm,
            objective: 0.0,
            duality_gap: 0.0,
            iterations: 0,
            converged: true,
        };
    }

    let lipschitz = opts
        .operator_norm_sq
        .unwrap_or_else(|| operator_norm_sq(phi))
        .max(1e-300);
    let mut solver = Solver::new(phi, y, grouping, lipschitz);

    // lambda_max: smallest penalty at which zero is optimal.
    solver.grad.gemm_ad(Complex64::ONE, phi, y, Complex64::ZERO);
    let lambda_max = grouping.max_norm(&solver.grad);
    if lambda_max <= 0.0 {
        // Y is orthogonal to the range of Phi; zero is the optimum but it is
        // infeasible at this epsilon.
        return EngineResult {
            beta: CMat::zeros(m, r),
            residual_norm: y_norm,
            objective: 0.0,
            duality_gap: f64::INFINITY,
            iterations: 0,
            converged: false,
        };
    }

    let mut lambda = 0.5 * lambda_max;
    // Residuals increase with lambda: `hi` is infeasible, `lo` feasible.
    let mut hi = (lambda_max, y_norm);
    let mut lo: Option<(f64, f64)> = None;

    struct Candidate {
        beta: CMat,
        resid: f64,
        primal: f64,
        gap: f64,
        lambda: f64,
    }
    let mut best: Option<Candidate> = None;
    let mut total_iterations = 0;
    let mut converged = false;

    for _ in 0..opts.max_outer_iterations {
        let (resid, used) =
            solver.solve_penalized(lambda, opts.max_inner_iterations, opts.objective_tolerance);
        total_iterations += used;

        if resid <= feasible_limit {
            let gap = solver.constrained_gap(eps);
            let primal = grouping.norm_sum(&solver.b);
            let better = match &best {
                Some(c) => primal < c.primal,
                None => true,
            };
            if better {
                best = Some(Candidate {
                    beta: solver.b.clone(),
                    resid,
                    primal,
                    gap,
                    lambda,
                });
            }
            if gap <= opts.gap_tolerance {
                converged = true;
                break;
            }
            lo = Some((lambda, resid));
        } else {
            hi = (lambda, resid);
        }

        lambda = match lo {
            None => lambda / 5.0,
            Some((lo_l, lo_r)) => {
                let (hi_l, hi_r) = hi;
                // Secant step toward resid = eps, safeguarded by bisection.
                let denom = hi_r - lo_r;
                let secant = if denom.abs() > 1e-300 {
                    lo_l + (hi_l - lo_l) * ((eps - lo_r) / denom)
                } else {
                    (lo_l * hi_l).sqrt()
                };
                let lo_guard = lo_l + 0.05 * (hi_l - lo_l);
                let hi_guard = hi_l - 0.05 * (hi_l - lo_l);
                if secant.is_finite() && secant > lo_guard && secant < hi_guard {
                    secant
                } else {
                    (lo_l * hi_l).sqrt()
                }
            }
        };
        if !lambda.is_finite() || lambda <= 0.0 {
            break;
        }
    }

    // Polish: burn a final inner budget at the best feasible penalty when
    // the gap has not certified yet.
    if let Some(c) = &best {
        if !converged && c.gap > opts.gap_tolerance {
            solver.b.copy_from(&c.beta);
            solver.z.gemm(Complex64::ONE, phi, &c.beta, Complex64::ZERO);
            let (resid, used) = solver.solve_penalized(
                c.lambda,
                2 * opts.max_inner_iterations,
                opts.objective_tolerance * 0.01,
            );
            total_iterations += used;
            if resid <= feasible_limit {
                let gap = solver.constrained_gap(eps);
                let primal = grouping.norm_sum(&solver.b);
                if primal <= c.primal || gap < c.gap {
                    best = Some(Candidate {
                        beta: solver.b.clone(),
                        resid,
                        primal,
                        gap,
                        lambda: c.lambda,
                    });
                }
            }
            if let Some(c) = &best {
                converged = c.gap <= opts.gap_tolerance;
            }
        }
    }

    match best {
        Some(c) => EngineResult {
            beta: c.beta,
            residual_norm: c.resid,
            objective: c.primal,
            duality_gap: c.gap,
            iterations: total_iterations,
            converged,
        },
        None => {
            // Never reached feasibility: report the last iterate honestly.
            let residual_norm = (&solver.z - y).norm();
            let objective = grouping.norm_sum(&solver.b);
            EngineResult {
                beta: solver.b,
                residual_norm,
                objective,
                duality_gap: f64::INFINITY,
                iterations: total_iterations,
                converged: false,
            }
        }
    }
}
