//! Steering exact-penalty DCA: the outer iteration.
//!
//! Each iteration linearizes the concave parts at the current iterate,
//! minimizes the convex penalty majorant `Q_c` over the feasible set, and
//! adjusts the penalty parameter so that progress on the linearized
//! infeasibility measure `Gamma` tracks the best achievable progress
//! (computed by an auxiliary feasibility subproblem). Points that are
//! critical for the penalty term get an escape branch that raises `c` until
//! the candidate is within `eps_feas` of the optimal linearized
//! infeasibility.
//!
//! Statuses are data, not errors: iteration limits, inner-loop caps and
//! infeasible stalls all come back as a [`SolveReport`].

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use thiserror::Error;

use crate::expr::{EvalOptions, ModelError};
use crate::oracle::{ConvexOracle, MaxOracle};
use crate::penalty::{
    collect_bundle_with, gamma_oracle, infeasibility, PenaltyLinearization, SubgradientBundle,
};
use crate::problem::{dc_value, regularize_objective, DCProblem};
use crate::subsolver::project::Projector;
use crate::subsolver::{minimize, SubsolveConfig, SubsolveError, SubsolveResult, SubsolveStatus};

#[derive(Debug, Error)]
pub enum SteeringError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Subsolve(#[from] SubsolveError),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("inner-loop budget exhausted (penalty increase cap or subproblem oracle budget)")]
    InnerLoopCap,
}

/// How the penalty parameter grows when an inner loop asks for more.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltySchedule {
    /// `c <- rho * c` (the primary variant).
    Geometric,
    /// `c <- c + rho`.
    Additive,
}

#[derive(Debug, Clone)]
pub struct SteeringConfig {
    /// Initial penalty parameter.
    pub c0: f64,
    /// Increase factor (geometric) or increment (additive).
    pub rho: f64,
    /// Required fraction of the best achievable linearized-infeasibility
    /// reduction.
    pub eta1: f64,
    /// Required proportionality of penalized decrease to infeasibility
    /// decrease.
    pub eta2: f64,
    /// Slack allowed above the optimal linearized infeasibility in the
    /// escape branch.
    pub eps_feas: f64,
    /// Slack in the criticality comparison that routes between the escape
    /// and steering branches.
    pub eps_step2: f64,
    /// Stop when the iterate is this feasible...
    pub tol_phi: f64,
    /// ...and the penalty-function decrease is this small.
    pub tol_obj: f64,
    pub max_outer: usize,
    /// Cap on penalty increases per inner while-loop.
    pub max_inner_increases: usize,
    /// Consecutive near-identical iterations before declaring a stall.
    pub stagnation_window: usize,
    pub stall_tol: f64,
    /// Objective regularization: adds `mu|x|^2` to both convex parts.
    pub mu: f64,
    pub schedule: PenaltySchedule,
    /// Replaces `eps_feas` by the summable sequence `eps_feas / (n+1)^2` in
    /// the escape branch.
    pub summable_eps: bool,
    /// Rotates subgradient choices at nonsmooth points of the constraint
    /// parts; useful when restarting after a stall.
    pub tie_offset: usize,
    pub subsolve: SubsolveConfig,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            c0: 10.0,
            rho: 10.0,
            eta1: 0.1,
            eta2: 0.1,
            eps_feas: 0.01,
            eps_step2: 1e-9,
            tol_phi: 1e-3,
            tol_obj: 1e-3,
            max_outer: 200,
            max_inner_increases: 20,
            stagnation_window: 5,
            stall_tol: 1e-6,
            mu: 0.0,
            schedule: PenaltySchedule::Geometric,
            summable_eps: false,
            tie_offset: 0,
            subsolve: SubsolveConfig::default(),
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<(), SteeringError> {
        let bad = |m: String| Err(SteeringError::BadConfig(m));
        if !(self.c0 > 0.0) {
            return bad(format!("c0 must be positive, got {}", self.c0));
        }
        match self.schedule {
            PenaltySchedule::Geometric if !(self.rho > 1.0) => {
                return bad(format!("geometric schedule needs rho > 1, got {}", self.rho));
            }
            PenaltySchedule::Additive if !(self.rho > 0.0) => {
                return bad(format!("additive schedule needs rho > 0, got {}", self.rho));
            }
            _ => {}
        }
        for (name, v) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.eps_feas > 0.0) {
            return bad(format!("eps_feas must be positive, got {}", self.eps_feas));
        }
        if !(self.eps_step2 >= 0.0) {
            return bad(format!("eps_step2 must be nonnegative, got {}", self.eps_step2));
        }
        // Outer comparisons treat subsolver output as exact only up to
        // 10 * tol_sub, so the outer tolerances must dominate that.
        let slack = self.comparison_slack();
        if self.tol_phi <= slack || self.tol_obj <= slack {
            return bad(format!(
                "outer tolerances ({}, {}) must exceed 10 * subproblem tolerance ({slack})",
                self.tol_phi, self.tol_obj
            ));
        }
        if self.max_outer == 0 || self.max_inner_increases == 0 {
            return bad("iteration limits must be at least 1".into());
        }
        if !(self.mu >= 0.0) {
            return bad(format!("mu must be nonnegative, got {}", self.mu));
        }
        Ok(())
    }

    pub fn increase(&self, c: f64) -> f64 {
        match self.schedule {
            PenaltySchedule::Geometric => c * self.rho,
            PenaltySchedule::Additive => c + self.rho,
        }
    }

    /// Slack applied to every theoretical strict/equality comparison.
    pub fn comparison_slack(&self) -> f64 {
        10.0 * self.subsolve.tol
    }

    /// Escape-branch slack at outer iteration `n`.
    pub fn escape_eps(&self, n: usize) -> f64 {
        if self.summable_eps {
            self.eps_feas / ((n + 1) as f64 * (n + 1) as f64)
        } else {
            self.eps_feas
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    CriticalPoint,
    InfeasibleStall,
    IterLimit,
    InnerLoopCapHit,
}

/// Per-iteration trace entry; `x`, `f0`, `phi` describe the iterate entering
/// the iteration and `c_in` the penalty parameter at that moment.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub n: usize,
    pub c_in: f64,
    pub c_out: f64,
    pub x: DVector<f64>,
    pub f0: f64,
    pub phi: f64,
    /// `Phi_{c_in}(x)`.
    pub big_phi: f64,
    /// The Step-2 escape branch ran (the iterate was critical for the
    /// penalty term).
    pub step2_escape: bool,
    pub step3_ran: bool,
    pub step2_increases: usize,
    pub step3_increases: usize,
    pub step4_increases: usize,
    /// Optimal linearized infeasibility, recorded whenever Step 2 ran.
    pub gamma_hat: Option<f64>,
    pub gap_penalty: Option<f64>,
    pub gap_feasibility: Option<f64>,
    /// `|x_{n+1} - x_n|`.
    pub step_norm: f64,
    pub wall_ms: f64,
}

impl IterationRecord {
    pub fn increases(&self) -> usize {
        self.step2_increases + self.step3_increases + self.step4_increases
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub c: f64,
    pub f0: f64,
    pub phi: f64,
    /// Residual of the generalized-criticality check at the final point.
    pub criticality_residual: f64,
    /// Residual of the penalty-term criticality check at the final point.
    pub penalty_term_residual: f64,
    pub projected_start: bool,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
}

impl SolveReport {
    pub fn total_increases(&self) -> usize {
        self.trace.iter().map(|r| r.increases()).sum()
    }

    /// Trace CSV: one row per iteration record.
    pub fn write_trace_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(
            w,
            "n,c_n,f0,phi,Phi,step2_ran,step3_increases,step4_increases,\
             gap_penalty_subproblem,gap_feasibility_subproblem,wall_time_ms"
        )?;
        for r in &self.trace {
            let opt = |v: &Option<f64>| v.map(|g| g.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.c_in,
                r.f0,
                r.phi,
                r.big_phi,
                u8::from(r.step2_escape),
                r.step3_increases,
                r.step4_increases,
                opt(&r.gap_penalty),
                opt(&r.gap_feasibility),
                r.wall_ms,
            )?;
        }
        Ok(())
    }
}

/// One outer iteration's linearization context: the bundle at `x`, the
/// `Gamma`/`Q_c` oracles, and cached values at the base point.
pub struct OuterStep<'a> {
    problem: &'a DCProblem,
    cfg: &'a SteeringConfig,
    pub x: DVector<f64>,
    pub bundle: SubgradientBundle,
    lin: PenaltyLinearization,
    /// Exact `phi(x)`.
    pub phi: f64,
    /// `Gamma(x, x, V)`; equals `phi(x)` up to roundoff.
    pub gamma_at_x: f64,
    omega_at_x: f64,
}

impl<'a> OuterStep<'a> {
    pub fn new(
        problem: &'a DCProblem,
        cfg: &'a SteeringConfig,
        x: DVector<f64>,
    ) -> Result<Self, SteeringError> {
        let bundle =
            collect_bundle_with(problem, &x, EvalOptions { tie_offset: cfg.tie_offset })?;
        let lin = PenaltyLinearization::new(problem, &bundle)?;
        let phi = infeasibility(problem, &x)?;
        let gamma_at_x = lin.gamma().value(&x);
        let omega_at_x = lin.omega_value(&x);
        Ok(Self { problem, cfg, x, bundle, lin, phi, gamma_at_x, omega_at_x })
    }

    pub fn gamma_value(&self, x: &DVector<f64>) -> f64 {
        self.lin.gamma().value(x)
    }

    pub fn majorant_value(&self, c: f64, x: &DVector<f64>) -> Result<f64, SteeringError> {
        Ok(self.lin.majorant(c)?.value(x))
    }

    /// Linearized objective `g_0(x) - <v_0, x - x_n>`.
    pub fn omega_value(&self, x: &DVector<f64>) -> f64 {
        self.lin.omega_value(x)
    }

    /// Step 1 subproblem: minimize `Q_c(., x_n, V_n)` over the set. A
    /// subproblem that exhausts its oracle budget surfaces as the inner-loop
    /// cap, never as a silently inexact iterate.
    pub fn solve_penalty(
        &self,
        c: f64,
        start: &DVector<f64>,
    ) -> Result<SubsolveResult, SteeringError> {
        let oracle = self.lin.majorant(c)?;
        let r = minimize(&oracle, &self.problem.set, start, &self.cfg.subsolve)?;
        if r.status == SubsolveStatus::IterLimit {
            return Err(SteeringError::InnerLoopCap);
        }
        Ok(r)
    }

    /// Step 2 subproblem: minimize `Gamma(., x_n, V_n)` over the set. For a
    /// feasible base point the optimum is zero at the base itself, so the
    /// solve is skipped.
    pub fn solve_feasibility(&self) -> Result<SubsolveResult, SteeringError> {
        if self.phi <= self.cfg.comparison_slack() {
            return Ok(SubsolveResult {
                x: self.x.clone(),
                value: self.gamma_at_x,
                gap: 0.0,
                oracle_calls: 0,
                status: SubsolveStatus::Converged,
                serious_values: Vec::new(),
            });
        }
        let r = minimize(self.lin.gamma(), &self.problem.set, &self.x, &self.cfg.subsolve)?;
        if r.status == SubsolveStatus::IterLimit {
            return Err(SteeringError::InnerLoopCap);
        }
        Ok(r)
    }

    /// Escape branch of Step 2: the base point is critical for the penalty
    /// term, so raise `c` until the candidate's linearized infeasibility is
    /// within `eps_n` of the optimum.
    pub fn step2_escape(
        &self,
        c: &mut f64,
        cand: &mut SubsolveResult,
        cand_gamma: &mut f64,
        gamma_hat: f64,
        eps_n: f64,
    ) -> Result<usize, SteeringError> {
        let mut increases = 0usize;
        while *cand_gamma > gamma_hat + eps_n {
            if increases >= self.cfg.max_inner_increases {
                return Err(SteeringError::InnerLoopCap);
            }
            *c = self.cfg.increase(*c);
            increases += 1;
            *cand = self.solve_penalty(*c, &cand.x)?;
            *cand_gamma = self.gamma_value(&cand.x);
        }
        Ok(increases)
    }

    /// Step 3: raise `c` until the linearized-infeasibility reduction is at
    /// least the `eta1` fraction of the best achievable reduction.
    pub fn step3_steer(
        &self,
        c: &mut f64,
        cand: &mut SubsolveResult,
        cand_gamma: &mut f64,
        gamma_hat: f64,
    ) -> Result<usize, SteeringError> {
        let slack = self.cfg.comparison_slack();
        let target = self.cfg.eta1 * (gamma_hat - self.gamma_at_x);
        let mut increases = 0usize;
        while *cand_gamma - self.gamma_at_x > target + slack {
            if increases >= self.cfg.max_inner_increases {
                return Err(SteeringError::InnerLoopCap);
            }
            *c = self.cfg.increase(*c);
            increases += 1;
            *cand = self.solve_penalty(*c, &cand.x)?;
            *cand_gamma = self.gamma_value(&cand.x);
        }
        Ok(increases)
    }

    /// Step 4: raise `c` until the penalized decrease is proportional to the
    /// infeasibility decrease.
    pub fn step4_balance(
        &self,
        c: &mut f64,
        cand: &mut SubsolveResult,
        cand_gamma: &mut f64,
    ) -> Result<usize, SteeringError> {
        let slack = self.cfg.comparison_slack();
        let mut increases = 0usize;
        loop {
            let q_at_base = self.omega_at_x + *c * self.gamma_at_x;
            let lhs = cand.value - q_at_base;
            let rhs = self.cfg.eta2 * *c * (*cand_gamma - self.gamma_at_x);
            if lhs <= rhs + slack {
                return Ok(increases);
            }
            if increases >= self.cfg.max_inner_increases {
                return Err(SteeringError::InnerLoopCap);
            }
            *c = self.cfg.increase(*c);
            increases += 1;
            *cand = self.solve_penalty(*c, &cand.x)?;
            *cand_gamma = self.gamma_value(&cand.x);
        }
    }
}

/// Outcome of a criticality diagnostic.
#[derive(Debug, Clone, Copy)]
pub struct CriticalityCheck {
    pub is_critical: bool,
    /// Objective excess of the point over the subproblem optimum; may be a
    /// tiny negative due to subsolver tolerance.
    pub residual: f64,
}

/// Generalized criticality: does `x` minimize `Q_c(., x, V)` over the set?
pub fn check_generalized_critical(
    p: &DCProblem,
    c: f64,
    x: &DVector<f64>,
    bundle: &SubgradientBundle,
    tol: f64,
    sub: &SubsolveConfig,
) -> Result<CriticalityCheck, SteeringError> {
    let lin = PenaltyLinearization::new(p, bundle)?;
    let q_at = lin.majorant(c)?.value(x);
    let r = minimize(&lin.majorant(c)?, &p.set, x, sub)?;
    let residual = q_at - r.value;
    Ok(CriticalityCheck { is_critical: residual <= tol, residual })
}

/// Penalty-term criticality: does `x` minimize `Gamma(., x, V)` over the set?
pub fn check_penalty_term_critical(
    p: &DCProblem,
    x: &DVector<f64>,
    bundle: &SubgradientBundle,
    tol: f64,
    sub: &SubsolveConfig,
) -> Result<CriticalityCheck, SteeringError> {
    let g = gamma_oracle(p, bundle)?;
    let at = g.value(x);
    let r = minimize(&g, &p.set, x, sub)?;
    let residual = at - r.value;
    Ok(CriticalityCheck { is_critical: residual <= tol, residual })
}

/// Linearized Slater margin for inequality-only problems:
/// `min_{y in A} max_i (g_i(y) - h_i(x) - <v_i, y - x>)`. The condition holds
/// iff the margin is negative. Problems without inequality constraints give
/// `-inf`.
pub fn check_linearized_slater(
    p: &DCProblem,
    x: &DVector<f64>,
    bundle: &SubgradientBundle,
    sub: &SubsolveConfig,
) -> Result<f64, SteeringError> {
    if !p.equalities.is_empty() {
        return Err(SteeringError::BadConfig(
            "linearized Slater diagnostic requires a problem without equality constraints".into(),
        ));
    }
    if p.inequalities.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let mut branches = Vec::with_capacity(p.inequalities.len());
    for (i, f) in p.inequalities.iter().enumerate() {
        let v = &bundle.v_ineq[i];
        let shift = -bundle.h_ineq_at[i] + v.dot(&bundle.base);
        branches.push(f.g.clone().plus_affine(-v, shift)?);
    }
    let oracle = MaxOracle::new(branches);
    let r = minimize(&oracle, &p.set, x, sub)?;
    Ok(r.value)
}

/// Runs the steering exact-penalty DCA from `x0`.
pub fn run(
    p: &DCProblem,
    x0: &DVector<f64>,
    cfg: &SteeringConfig,
) -> Result<SolveReport, SteeringError> {
    cfg.validate()?;
    let problem = regularize_objective(p, cfg.mu)?;
    if x0.len() != problem.dim {
        return Err(SteeringError::Model(ModelError::DimensionMismatch {
            expected: problem.dim,
            got: x0.len(),
        }));
    }
    let projector = Projector::new(&problem.set)?;
    let mut projected_start = false;
    let mut x = x0.clone();
    if !problem.set.contains(&x, 1e-12, 1e-8) {
        x = projector
            .project(&x, cfg.subsolve.max_dykstra_sweeps)
            .map_err(SubsolveError::from)?;
        projected_start = true;
    }

    let zero_slack = cfg.comparison_slack();
    let mut c = cfg.c0;
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut status: Option<SolveStatus> = None;
    let mut stall_count = 0usize;
    let mut n = 0usize;

    while status.is_none() {
        if n >= cfg.max_outer {
            status = Some(SolveStatus::IterLimit);
            break;
        }
        let timer = Instant::now();
        let step = OuterStep::new(&problem, cfg, x.clone())?;
        let f0_n = dc_value(&problem.objective, &x)?.f;
        let phi_n = step.phi;

        let mut rec = IterationRecord {
            n,
            c_in: c,
            c_out: c,
            x: x.clone(),
            f0: f0_n,
            phi: phi_n,
            big_phi: f0_n + c * phi_n,
            step2_escape: false,
            step3_ran: false,
            step2_increases: 0,
            step3_increases: 0,
            step4_increases: 0,
            gamma_hat: None,
            gap_penalty: None,
            gap_feasibility: None,
            step_norm: 0.0,
            wall_ms: 0.0,
        };

        // Step 1.
        let mut c_plus = c;
        let mut cand = step.solve_penalty(c_plus, &x)?;
        let mut cand_gamma = step.gamma_value(&cand.x);

        let inner: Result<(), SteeringError> = (|| {
            if cand_gamma > zero_slack {
                // Step 2: best achievable linearized infeasibility.
                let feas = step.solve_feasibility()?;
                rec.gap_feasibility = Some(feas.gap);
                let gamma_hat = feas.value;
                rec.gamma_hat = Some(gamma_hat);
                if gamma_hat < step.gamma_at_x - cfg.eps_step2 {
                    rec.step3_ran = true;
                    rec.step3_increases =
                        step.step3_steer(&mut c_plus, &mut cand, &mut cand_gamma, gamma_hat)?;
                } else {
                    rec.step2_escape = true;
                    rec.step2_increases = step.step2_escape(
                        &mut c_plus,
                        &mut cand,
                        &mut cand_gamma,
                        gamma_hat,
                        cfg.escape_eps(n),
                    )?;
                }
            }
            // Step 4.
            rec.step4_increases = step.step4_balance(&mut c_plus, &mut cand, &mut cand_gamma)?;
            Ok(())
        })();

        match inner {
            Ok(()) => {}
            Err(SteeringError::InnerLoopCap) => {
                rec.c_out = c_plus;
                rec.gap_penalty = Some(cand.gap);
                rec.wall_ms = timer.elapsed().as_secs_f64() * 1e3;
                trace.push(rec);
                c = c_plus;
                status = Some(SolveStatus::InnerLoopCapHit);
                break;
            }
            Err(e) => return Err(e),
        }

        let x_next = cand.x.clone();
        rec.gap_penalty = Some(cand.gap);
        rec.c_out = c_plus;
        rec.step_norm = (&x_next - &x).norm();

        let f0_next = dc_value(&problem.objective, &x_next)?.f;
        let phi_next = infeasibility(&problem, &x_next)?;
        // Stopping uses the penalty parameter that entered the iteration.
        let dphi_obj = ((f0_next + c * phi_next) - (f0_n + c * phi_n)).abs();

        rec.wall_ms = timer.elapsed().as_secs_f64() * 1e3;
        trace.push(rec);

        let stalled = (f0_next - f0_n).abs() <= cfg.stall_tol && (phi_next - phi_n).abs() <= cfg.stall_tol;
        stall_count = if stalled { stall_count + 1 } else { 0 };

        x = x_next;
        c = c_plus;
        n += 1;

        if phi_next < cfg.tol_phi && dphi_obj < cfg.tol_obj {
            // Candidate stop: confirm generalized criticality at the final
            // point before reporting success.
            let bundle =
                collect_bundle_with(&problem, &x, EvalOptions { tie_offset: cfg.tie_offset })?;
            let check =
                check_generalized_critical(&problem, c, &x, &bundle, cfg.tol_obj, &cfg.subsolve)?;
            if check.is_critical {
                status = Some(SolveStatus::CriticalPoint);
                break;
            }
        }
        if stall_count >= cfg.stagnation_window && phi_next >= cfg.tol_phi {
            status = Some(SolveStatus::InfeasibleStall);
            break;
        }
    }

    let status = status.unwrap_or(SolveStatus::IterLimit);
    let f0 = dc_value(&problem.objective, &x)?.f;
    let phi = infeasibility(&problem, &x)?;

    // Terminal trace record for the final iterate.
    trace.push(IterationRecord {
        n,
        c_in: c,
        c_out: c,
        x: x.clone(),
        f0,
        phi,
        big_phi: f0 + c * phi,
        step2_escape: false,
        step3_ran: false,
        step2_increases: 0,
        step3_increases: 0,
        step4_increases: 0,
        gamma_hat: None,
        gap_penalty: None,
        gap_feasibility: None,
        step_norm: 0.0,
        wall_ms: 0.0,
    });

    let bundle = collect_bundle_with(&problem, &x, EvalOptions { tie_offset: cfg.tie_offset })?;
    let gen = check_generalized_critical(&problem, c, &x, &bundle, cfg.tol_obj, &cfg.subsolve)?;
    let pen = check_penalty_term_critical(&problem, &x, &bundle, cfg.tol_obj, &cfg.subsolve)?;

    Ok(SolveReport {
        status,
        x,
        c,
        f0,
        phi,
        criticality_residual: gen.residual,
        penalty_term_residual: pen.residual,
        projected_start,
        iterations: n,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::collect_bundle;
    use crate::problems::{toy_eq, toy_ineq};
    use nalgebra::dvector;

    fn cfg() -> SteeringConfig {
        SteeringConfig::default()
    }

    #[test]
    fn penalty_subproblem_matches_closed_forms_on_toy_ineq() {
        let p = toy_ineq();
        let c = cfg();
        let step = OuterStep::new(&p, &c, dvector![0.0]).unwrap();
        // Q_{0.5} = 0.5 x + 0.5 is decreasing on [-10, 10].
        let r = step.solve_penalty(0.5, &step.x).unwrap();
        assert!((r.x[0] + 10.0).abs() < 1e-6, "x = {}", r.x[0]);
        // Q_5 kinks upward at 1.
        let r = step.solve_penalty(5.0, &step.x).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6, "x = {}", r.x[0]);
    }

    #[test]
    fn penalty_subproblem_matches_diagonal_formula_on_toy_eq() {
        let p = toy_eq();
        let c = cfg();
        let step = OuterStep::new(&p, &c, dvector![0.0, 0.0]).unwrap();
        let r = step.solve_penalty(100.0, &step.x).unwrap();
        let t = 2.0 / 102.0;
        assert!((r.x[0] - t).abs() < 1e-4 && (r.x[1] - t).abs() < 1e-4, "x = {}", r.x);
        // Majorant minimum value at c = 10 is 5/3 at (1/6, 1/6).
        let r10 = step.solve_penalty(10.0, &step.x).unwrap();
        assert!((r10.value - 5.0 / 3.0).abs() < 1e-3);
        assert!((r10.x[0] - 1.0 / 6.0).abs() < 1e-3);
    }

    #[test]
    fn feasibility_subproblem_shortcut_and_solves() {
        let p = toy_ineq();
        let c = cfg();
        // Infeasible base: real solve reaches the zero of Gamma.
        let step = OuterStep::new(&p, &c, dvector![0.0]).unwrap();
        let r = step.solve_feasibility().unwrap();
        assert!(r.value.abs() < 1e-6);
        assert!(r.oracle_calls > 0);
        // Feasible base: shortcut returns the base point untouched.
        let step = OuterStep::new(&p, &c, dvector![2.0]).unwrap();
        let r = step.solve_feasibility().unwrap();
        assert_eq!(r.oracle_calls, 0);
        assert_eq!(r.x, dvector![2.0]);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn step2_escape_raises_c_once_on_toy_eq() {
        let p = toy_eq();
        let c = cfg();
        let step = OuterStep::new(&p, &c, dvector![0.0, 0.0]).unwrap();
        // The origin is critical for the penalty term: Gamma-hat = 0 = phi.
        let feas = step.solve_feasibility().unwrap();
        assert_eq!(feas.value, 0.0);
        assert!(!(feas.value < step.gamma_at_x - c.eps_step2));

        let mut cc = 10.0;
        let mut cand = step.solve_penalty(cc, &step.x).unwrap();
        let mut cand_gamma = step.gamma_value(&cand.x);
        // Gamma(x(10)) = (1/6)^2 > eps_feas = 0.01.
        assert!((cand_gamma - 1.0 / 36.0).abs() < 1e-3);
        let inc = step.step2_escape(&mut cc, &mut cand, &mut cand_gamma, 0.0, 0.01).unwrap();
        assert_eq!(inc, 1);
        assert_eq!(cc, 100.0);
        assert!(cand_gamma <= 0.01);

        // With eps_feas = 0.05 the first candidate already qualifies.
        let mut cc = 10.0;
        let mut cand = step.solve_penalty(cc, &step.x).unwrap();
        let mut cand_gamma = step.gamma_value(&cand.x);
        let inc = step.step2_escape(&mut cc, &mut cand, &mut cand_gamma, 0.0, 0.05).unwrap();
        assert_eq!(inc, 0);
        assert_eq!(cc, 10.0);
    }

    #[test]
    fn step3_steers_toy_ineq_to_c_five() {
        let p = toy_ineq();
        let c = cfg();
        let step = OuterStep::new(&p, &c, dvector![0.0]).unwrap();
        let feas = step.solve_feasibility().unwrap();
        let gamma_hat = feas.value;
        assert!(gamma_hat.abs() < 1e-6);

        let mut cc = 0.5;
        let mut cand = step.solve_penalty(cc, &step.x).unwrap();
        let mut cand_gamma = step.gamma_value(&cand.x);
        assert!((cand_gamma - 11.0).abs() < 1e-4); // Gamma(-10) = 11
        let inc = step.step3_steer(&mut cc, &mut cand, &mut cand_gamma, gamma_hat).unwrap();
        assert_eq!(inc, 1);
        assert!((cc - 5.0).abs() < 1e-12);
        assert!(cand_gamma <= 0.9 + 1e-6);

        // eta1 = 0.99 tightens the target to 0.01 + slack; c = 5 still passes
        // because Gamma drops to zero there.
        let mut tight = cfg();
        tight.eta1 = 0.99;
        let step = OuterStep::new(&p, &tight, dvector![0.0]).unwrap();
        let mut cc = 0.5;
        let mut cand = step.solve_penalty(cc, &step.x).unwrap();
        let mut cand_gamma = step.gamma_value(&cand.x);
        let inc = step.step3_steer(&mut cc, &mut cand, &mut cand_gamma, gamma_hat).unwrap();
        assert_eq!(inc, 1);
        assert!(cand_gamma <= 0.01 + 1e-6);
    }

    #[test]
    fn step4_accepts_without_increase_in_documented_cases() {
        let p = toy_ineq();
        let c = cfg();
        let step = OuterStep::new(&p, &c, dvector![0.0]).unwrap();
        // After steering to c = 5: LHS = Q_5(1) - Q_5(0) = -4, RHS = -0.5.
        let mut cc = 5.0;
        let mut cand = step.solve_penalty(cc, &step.x).unwrap();
        let mut cand_gamma = step.gamma_value(&cand.x);
        let inc = step.step4_balance(&mut cc, &mut cand, &mut cand_gamma).unwrap();
        assert_eq!(inc, 0);
        assert_eq!(cc, 5.0);

        // Feasible base with linearized-feasible candidate accepts trivially.
        let step = OuterStep::new(&p, &c, dvector![1.0]).unwrap();
        let mut cc = 10.0;
        let mut cand = step.solve_penalty(cc, &step.x).unwrap();
        let mut cand_gamma = step.gamma_value(&cand.x);
        let inc = step.step4_balance(&mut cc, &mut cand, &mut cand_gamma).unwrap();
        assert_eq!(inc, 0);

        // TOY-EQ after the escape: RHS > 0 >= LHS.
        let q = toy_eq();
        let step = OuterStep::new(&q, &c, dvector![0.0, 0.0]).unwrap();
        let mut cc = 100.0;
        let mut cand = step.solve_penalty(cc, &step.x).unwrap();
        let mut cand_gamma = step.gamma_value(&cand.x);
        let inc = step.step4_balance(&mut cc, &mut cand, &mut cand_gamma).unwrap();
        assert_eq!(inc, 0);
    }

    #[test]
    fn run_toy_ineq_from_zero_takes_two_iterations() {
        let p = toy_ineq();
        let mut c = cfg();
        c.c0 = 0.5;
        let report = run(&p, &dvector![0.0], &c).unwrap();
        assert_eq!(report.status, SolveStatus::CriticalPoint);
        assert_eq!(report.iterations, 2);
        assert!((report.x[0] - 1.0).abs() < 1e-5, "x = {}", report.x[0]);
        assert!((report.c - 5.0).abs() < 1e-12);
        assert!(report.phi < 1e-9);
    }

    #[test]
    fn run_toy_ineq_from_feasible_critical_point() {
        let p = toy_ineq();
        let report = run(&p, &dvector![1.0], &cfg()).unwrap();
        assert_eq!(report.status, SolveStatus::CriticalPoint);
        assert_eq!(report.iterations, 1);
        assert!((report.x[0] - 1.0).abs() < 1e-6);
        assert_eq!(report.total_increases(), 0);
    }

    #[test]
    fn run_toy_eq_escapes_the_degenerate_origin() {
        let p = toy_eq();
        let report = run(&p, &dvector![0.0, 0.0], &cfg()).unwrap();
        assert_eq!(report.status, SolveStatus::CriticalPoint);
        // Exactly one penalty increase, through the Step-2 escape branch.
        assert_eq!(report.total_increases(), 1);
        assert_eq!(report.trace[0].step2_increases, 1);
        assert!(report.trace[0].step2_escape);
        assert!((report.c - 100.0).abs() < 1e-9);
        assert!(report.phi < 1e-3);
        let dist = ((report.x[0] - 1.0).powi(2) + (report.x[1] - 1.0).powi(2)).sqrt();
        assert!(dist < 0.2, "final x = {} (dist {dist})", report.x);
        // The iterate crawls up the diagonal; penalty parameter never moves
        // again after the escape.
        for r in &report.trace[1..] {
            assert_eq!(r.increases(), 0);
        }
    }

    #[test]
    fn criticality_checks_match_hand_kkt() {
        let p = toy_ineq();
        let sub = SubsolveConfig::default();
        let b = collect_bundle(&p, &dvector![1.0]).unwrap();
        let r = check_generalized_critical(&p, 5.0, &dvector![1.0], &b, 1e-6, &sub).unwrap();
        assert!(r.is_critical, "residual {}", r.residual);

        let b = collect_bundle(&p, &dvector![0.0]).unwrap();
        let r = check_generalized_critical(&p, 5.0, &dvector![0.0], &b, 1e-6, &sub).unwrap();
        assert!(!r.is_critical);
        assert!((r.residual - 4.0).abs() < 1e-5, "residual {}", r.residual);

        let q = toy_eq();
        let b = collect_bundle(&q, &dvector![1.0, 1.0]).unwrap();
        let r = check_generalized_critical(&q, 10.0, &dvector![1.0, 1.0], &b, 1e-6, &sub).unwrap();
        assert!(r.is_critical, "residual {}", r.residual);
    }

    #[test]
    fn penalty_term_criticality_on_toys() {
        let sub = SubsolveConfig::default();
        let q = toy_eq();
        let b = collect_bundle(&q, &dvector![0.0, 0.0]).unwrap();
        let r = check_penalty_term_critical(&q, &dvector![0.0, 0.0], &b, 1e-8, &sub).unwrap();
        assert!(r.is_critical);

        // Any feasible point is critical for the penalty term.
        let b = collect_bundle(&q, &dvector![2.0, 2.0]).unwrap();
        let r = check_penalty_term_critical(&q, &dvector![2.0, 2.0], &b, 1e-8, &sub).unwrap();
        assert!(r.is_critical);

        let p = toy_ineq();
        let b = collect_bundle(&p, &dvector![0.0]).unwrap();
        let r = check_penalty_term_critical(&p, &dvector![0.0], &b, 1e-8, &sub).unwrap();
        assert!(!r.is_critical);
        assert!((r.residual - 1.0).abs() < 1e-6);
    }

    #[test]
    fn slater_margin_on_toy_ineq() {
        let p = toy_ineq();
        let sub = SubsolveConfig::default();
        for (x, expect) in [(1.0, -9.0), (0.0, -9.0)] {
            let b = collect_bundle(&p, &dvector![x]).unwrap();
            let m = check_linearized_slater(&p, &dvector![x], &b, &sub).unwrap();
            assert!((m - expect).abs() < 1e-5, "margin {m}");
            assert!(m < 0.0);
        }
        // Opposing constraints -x <= 0 and x <= 0 pin the margin at zero.
        let d = 1;
        let g1 = crate::expr::ConvexExpr::atom(
            d,
            crate::expr::Atom::Affine(crate::expr::Affine { a: dvector![-1.0], b: 0.0 }),
        )
        .unwrap();
        let g2 = crate::expr::ConvexExpr::atom(
            d,
            crate::expr::Atom::Affine(crate::expr::Affine { a: dvector![1.0], b: 0.0 }),
        )
        .unwrap();
        let p = crate::problem::DCProblem::new(
            crate::problem::DCFunction::convex(crate::expr::ConvexExpr::zero(d)),
            vec![
                crate::problem::DCFunction::convex(g1),
                crate::problem::DCFunction::convex(g2),
            ],
            vec![],
            crate::problem::FeasibleSet::box_only(dvector![-10.0], dvector![10.0]).unwrap(),
        )
        .unwrap();
        let b = collect_bundle(&p, &dvector![0.0]).unwrap();
        let m = check_linearized_slater(&p, &dvector![0.0], &b, &sub).unwrap();
        assert!(m.abs() < 1e-6, "margin {m}");

        // Equality constraints are rejected.
        let q = toy_eq();
        let b = collect_bundle(&q, &dvector![0.0, 0.0]).unwrap();
        assert!(check_linearized_slater(&q, &dvector![0.0, 0.0], &b, &sub).is_err());
    }

    #[test]
    fn infeasible_problem_stalls() {
        // minimize x s.t. x^2 + 1 <= 0 over [-1, 1]: no feasible point.
        let d = 1;
        let g = crate::expr::ConvexExpr::atom(
            d,
            crate::expr::Atom::Quad {
                p: nalgebra::DMatrix::from_row_slice(1, 1, &[2.0]),
                a: dvector![0.0],
                b: 1.0,
            },
        )
        .unwrap();
        let p = crate::problem::DCProblem::new(
            crate::problem::DCFunction::convex(
                crate::expr::ConvexExpr::atom(
                    d,
                    crate::expr::Atom::Affine(crate::expr::Affine { a: dvector![1.0], b: 0.0 }),
                )
                .unwrap(),
            ),
            vec![crate::problem::DCFunction::convex(g)],
            vec![],
            crate::problem::FeasibleSet::box_only(dvector![-1.0], dvector![1.0]).unwrap(),
        )
        .unwrap();
        let report = run(&p, &dvector![0.5], &cfg()).unwrap();
        assert_eq!(report.status, SolveStatus::InfeasibleStall);
        assert!(report.phi >= 1.0 - 1e-9);
    }

    #[test]
    fn iteration_limit_is_a_status() {
        let p = toy_eq();
        let mut c = cfg();
        c.max_outer = 1;
        let report = run(&p, &dvector![0.0, 0.0], &c).unwrap();
        assert_eq!(report.status, SolveStatus::IterLimit);
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = cfg();
        c.eta1 = 1.5;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.c0 = -1.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.tol_phi = 1e-9; // below 10 * tol_sub
        assert!(c.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn trace_csv_has_documented_columns() {
        let p = toy_ineq();
        let report = run(&p, &dvector![0.0], &cfg()).unwrap();
        let mut buf = Vec::new();
        report.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "n,c_n,f0,phi,Phi,step2_ran,step3_increases,step4_increases,\
             gap_penalty_subproblem,gap_feasibility_subproblem,wall_time_ms"
        );
        assert_eq!(text.lines().count(), report.trace.len() + 1);
    }
}
