//! Master problem of the proximal bundle method.
//!
//! The master minimizes `max_i (rhs_i + g_i'x) + (u/2)|x - center|^2` over the
//! feasible set. It is solved through its dual: simplex weights over the cuts
//! and free multipliers for the affine rows, with the box handled by an exact
//! clamp inside the dual function. Accelerated projected ascent with adaptive
//! restarts drives the duality gap below the requested tolerance; the dual
//! value is a certified lower bound on the master optimum, and any simplex
//! weight vector yields a certified affine minorant of the true objective.

use nalgebra::DVector;

use super::project::Projector;

/// A global affine minorant of the objective: `F(x) >= rhs + g'x` everywhere.
#[derive(Debug, Clone)]
pub struct Cut {
    pub g: DVector<f64>,
    pub rhs: f64,
}

impl Cut {
    pub fn from_eval(x: &DVector<f64>, value: f64, subgrad: DVector<f64>) -> Self {
        let rhs = value - subgrad.dot(x);
        Self { g: subgrad, rhs }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.rhs + self.g.dot(x)
    }
}

pub struct MasterSolution {
    /// Primal candidate, feasible for the set (box exactly, affine to the
    /// projector's tolerance).
    pub y: DVector<f64>,
    /// Cut-model value at `y`.
    pub model_value: f64,
    /// Model plus proximal term at `y` (the master objective).
    pub prox_value: f64,
    /// Best dual value reached; a certified lower bound on the master
    /// optimum regardless of how converged the solve is.
    pub dual_value: f64,
    /// Simplex weights over the cuts at the best dual point.
    pub lambda: DVector<f64>,
    /// Duality gap achieved, `prox_value - dual_value` clamped at zero.
    pub gap: f64,
    /// Global lower bound on `min_A max_i cuts` derived from the dual point;
    /// `-inf` when an unbounded coordinate blocks certification.
    pub lower_bound: f64,
}

/// Warm-start state carried between master solves.
#[derive(Default, Clone)]
pub struct MasterWarmStart {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// Backtracking curvature estimate from the previous solve.
    pub l_est: f64,
}

pub struct MasterProblem<'a> {
    pub cuts: &'a [Cut],
    pub center: &'a DVector<f64>,
    pub weight: f64,
    pub projector: &'a Projector,
    pub lower: &'a DVector<f64>,
    pub upper: &'a DVector<f64>,
    pub eq: Option<(&'a nalgebra::DMatrix<f64>, &'a DVector<f64>)>,
    pub tol: f64,
    /// Absolute duality-gap floor; the bundle stops on dual certificates, so
    /// masters need not be solved far beyond the outer tolerance.
    pub tol_abs: f64,
    pub max_iter: usize,
    pub max_dykstra_sweeps: usize,
}

struct DualPoint {
    lambda: DVector<f64>,
    mu: DVector<f64>,
}

impl MasterProblem<'_> {
    /// Combined gradient direction `w = G'lambda + E'mu` in primal space.
    fn primal_direction(&self, p: &DualPoint, w: &mut DVector<f64>) {
        w.fill(0.0);
        for (i, c) in self.cuts.iter().enumerate() {
            if p.lambda[i] != 0.0 {
                w.axpy(p.lambda[i], &c.g, 1.0);
            }
        }
        if let Some((e, _)) = self.eq {
            // w += E' mu
            for r in 0..e.nrows() {
                if p.mu[r] != 0.0 {
                    for j in 0..e.ncols() {
                        w[j] += p.mu[r] * e[(r, j)];
                    }
                }
            }
        }
    }

    /// Dual value and the box-clamped inner minimizer. `mag` receives the
    /// magnitude of the summed terms, which bounds the cancellation noise of
    /// the returned value.
    fn dual_value(
        &self,
        p: &DualPoint,
        w: &mut DVector<f64>,
        x: &mut DVector<f64>,
        mag: &mut f64,
    ) -> f64 {
        self.primal_direction(p, w);
        let u = self.weight;
        let mut q = 0.0;
        let mut m = 0.0;
        for i in 0..x.len() {
            let xi = (self.center[i] - w[i] / u).clamp(self.lower[i], self.upper[i]);
            x[i] = xi;
            let d = xi - self.center[i];
            let t = w[i] * xi + 0.5 * u * d * d;
            q += t;
            m += t.abs();
        }
        for (i, c) in self.cuts.iter().enumerate() {
            let t = p.lambda[i] * c.rhs;
            q += t;
            m += t.abs();
        }
        if let Some((_, rhs)) = self.eq {
            let t = p.mu.dot(rhs);
            q -= t;
            m += t.abs();
        }
        *mag = m;
        q
    }

    fn dual_gradient(
        &self,
        x: &DVector<f64>,
        grad_l: &mut DVector<f64>,
        grad_m: &mut DVector<f64>,
    ) {
        for (i, c) in self.cuts.iter().enumerate() {
            grad_l[i] = c.eval(x);
        }
        if let Some((e, rhs)) = self.eq {
            let r = e * x - rhs;
            grad_m.copy_from(&r);
        }
    }

    fn model_at(&self, x: &DVector<f64>) -> f64 {
        self.cuts.iter().map(|c| c.eval(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn prox_at(&self, x: &DVector<f64>) -> f64 {
        let d = x - self.center;
        self.model_at(x) + 0.5 * self.weight * d.norm_squared()
    }

    /// Global lower bound `min_A (lambda-combined cut)` through partial
    /// dualization of the affine rows and a closed-form box minimum.
    fn certified_lower_bound(&self, p: &DualPoint, w: &DVector<f64>) -> f64 {
        let mut bound = 0.0;
        for (i, c) in self.cuts.iter().enumerate() {
            bound += p.lambda[i] * c.rhs;
        }
        if let Some((_, rhs)) = self.eq {
            bound -= p.mu.dot(rhs);
        }
        for i in 0..w.len() {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            let edge = if wi > 0.0 { self.lower[i] } else { self.upper[i] };
            if !edge.is_finite() {
                return f64::NEG_INFINITY;
            }
            bound += wi * edge;
        }
        bound
    }

    pub fn solve(&self, warm: &mut MasterWarmStart) -> MasterSolution {
        let n = self.cuts.len();
        let m = self.eq.map_or(0, |(e, _)| e.nrows());
        let d = self.center.len();

        let mut lambda = DVector::from_element(n, 1.0 / n as f64);
        for (i, &l) in warm.lambda.iter().enumerate().take(n) {
            lambda[i] = l;
        }
        project_simplex(&mut lambda);
        let mut mu = DVector::zeros(m);
        for (i, &v) in warm.mu.iter().enumerate().take(m) {
            mu[i] = v;
        }

        let mut point = DualPoint { lambda, mu };
        let mut w = DVector::zeros(d);
        let mut x = DVector::zeros(d);
        let mut mag = 0.0;

        let mut q_best = self.dual_value(&point, &mut w, &mut x, &mut mag);
        let mut best = DualPoint { lambda: point.lambda.clone(), mu: point.mu.clone() };
        let mut best_w = w.clone();
        let mut best_x = x.clone();

        // FISTA with backtracking: the dual curvature varies by orders of
        // magnitude with the prox weight and the active box faces, so a
        // fixed step is useless. `l_est` persists across master solves.
        let mut l_est = if warm.l_est > 0.0 { warm.l_est } else { 1.0 };
        let mut extrap = DualPoint { lambda: point.lambda.clone(), mu: point.mu.clone() };
        let mut t_k = 1.0f64;
        let mut grad_l = DVector::zeros(n);
        let mut grad_m = DVector::zeros(m);

        let mut incumbent: Option<(DVector<f64>, f64, f64)> = None; // (y, model, prox)
        let mut gap = f64::INFINITY;
        let mut q_prev = q_best;

        for iter in 0..self.max_iter {
            let q_z = self.dual_value(&extrap, &mut w, &mut x, &mut mag);
            self.dual_gradient(&x, &mut grad_l, &mut grad_m);

            // Backtrack until the ascent step satisfies the descent lemma.
            // The slack scales with the magnitude of the summed dual terms:
            // the dual value can cancel to many orders below them.
            let mut next = DualPoint { lambda: DVector::zeros(n), mu: DVector::zeros(m) };
            let mut q_next;
            loop {
                let step = 1.0 / l_est;
                next.lambda = &extrap.lambda + step * &grad_l;
                project_simplex(&mut next.lambda);
                next.mu = &extrap.mu + step * &grad_m;
                q_next = self.dual_value(&next, &mut w, &mut x, &mut mag);
                let dl = &next.lambda - &extrap.lambda;
                let dm = &next.mu - &extrap.mu;
                let lin = grad_l.dot(&dl) + grad_m.dot(&dm);
                let dist2 = dl.norm_squared() + dm.norm_squared();
                if q_next >= q_z + lin - 0.5 * l_est * dist2 - 1e-13 * (1.0 + mag) {
                    break;
                }
                if l_est >= 1e18 {
                    break;
                }
                l_est *= 2.0;
            }
            // Allow the estimate to shrink again so steps stay as long as
            // the local curvature permits.
            l_est = (l_est * 0.9).max(1e-12);

            if q_next > q_best {
                q_best = q_next;
                best.lambda.copy_from(&next.lambda);
                best.mu.copy_from(&next.mu);
                best_w.copy_from(&w);
                best_x.copy_from(&x);
            }

            // Adaptive restart keeps the ascent monotone enough.
            if q_next < q_prev {
                t_k = 1.0;
                extrap.lambda.copy_from(&next.lambda);
                extrap.mu.copy_from(&next.mu);
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
                let beta = (t_k - 1.0) / t_next;
                extrap.lambda = &next.lambda + beta * (&next.lambda - &point.lambda);
                project_simplex(&mut extrap.lambda);
                extrap.mu = &next.mu + beta * (&next.mu - &point.mu);
                t_k = t_next;
            }
            q_prev = q_next;
            point = next;

            if std::env::var_os("DCSTEER_TRACE_MASTER").is_some() && iter % 100 == 0 {
                eprintln!(
                    "  m iter={iter} q={q_next:.9e} qbest={q_best:.9e} l_est={l_est:.3e}"
                );
            }
            let last = iter + 1 == self.max_iter;
            if iter % 10 == 9 || last {
                let y = if m == 0 {
                    best_x.clone()
                } else {
                    match self.projector.project(&best_x, self.max_dykstra_sweeps) {
                        Ok(y) => y,
                        Err(_) => best_x.clone(),
                    }
                };
                let prox = self.prox_at(&y);
                let model = self.model_at(&y);
                let better = incumbent.as_ref().map_or(true, |(_, _, p)| prox < *p);
                if better {
                    incumbent = Some((y, model, prox));
                }
                let cur = incumbent.as_ref().unwrap().2;
                gap = (cur - q_best).max(0.0);
                // The floor keeps the loop from chasing gap digits below the
                // cancellation noise of the dual terms.
                let stop_at = (self.tol * (1.0 + cur.abs()))
                    .max(self.tol_abs)
                    .max(1e-13 * mag);
                if gap <= stop_at {
                    break;
                }
            }
        }

        let (y, model_value, prox_value) = incumbent.unwrap_or_else(|| {
            let prox = self.prox_at(&best_x);
            let model = self.model_at(&best_x);
            (best_x.clone(), model, prox)
        });

        warm.lambda = best.lambda.iter().cloned().collect();
        warm.mu = best.mu.iter().cloned().collect();
        warm.l_est = l_est;
        let lower_bound = self.certified_lower_bound(&best, &best_w);

        MasterSolution {
            y,
            model_value,
            prox_value,
            dual_value: q_best,
            lambda: best.lambda,
            gap,
            lower_bound,
        }
    }
}

/// Euclidean projection onto the unit simplex.
pub fn project_simplex(v: &mut DVector<f64>) {
    let n = v.len();
    if n == 1 {
        v[0] = 1.0;
        return;
    }
    let mut sorted: Vec<f64> = v.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    let mut found = false;
    for (j, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (j as f64 + 1.0);
        if s - t > 0.0 {
            tau = t;
            found = true;
        } else {
            break;
        }
    }
    if !found {
        // All mass collapses onto the largest coordinate.
        let k = (0..n).fold(0, |a, i| if v[i] > v[a] { i } else { a });
        v.fill(0.0);
        v[k] = 1.0;
        return;
    }
    for i in 0..n {
        v[i] = (v[i] - tau).max(0.0);
    }
}
