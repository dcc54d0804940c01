//! The `l1` exact penalty function and its linearized convex companions.
//!
//! For a problem with inequality constraints `f_i <= 0` and equality
//! constraints `f_j = 0`, the penalty term is
//! `phi(x) = sum_i max{f_i(x), 0} + sum_j |f_j(x)|` and the penalty function
//! is `Phi_c(x) = f_0(x) + c phi(x)`.
//!
//! Linearizing every concave part at a base point `y` with subgradients
//! collected in a bundle turns `phi` into the convex infeasibility measure
//! `Gamma(., y, V)` and `Phi_c` into the convex majorant `Q_c(., y, V)`:
//! `Q_c(x, y, V) - h_0(y) >= Phi_c(x)` everywhere with equality at `x = y`.
//! Both are materialized as hinge/max compositions over shifted constraint
//! expressions so the inner solver sees one oracle interface.

use nalgebra::DVector;

use crate::expr::{ConvexExpr, EvalOptions, ModelError};
use crate::oracle::ConvexOracle;
use crate::problem::{dc_value, DCProblem};

/// Subgradients of every concave-part function at a base point, together with
/// the cached values needed by the linearizations.
#[derive(Debug, Clone)]
pub struct SubgradientBundle {
    pub base: DVector<f64>,
    /// `v_0` in `dh_0(base)`.
    pub v_obj: DVector<f64>,
    /// `v_i` in `dh_i(base)` per inequality.
    pub v_ineq: Vec<DVector<f64>>,
    /// `v_j` in `dh_j(base)` per equality.
    pub v_eq: Vec<DVector<f64>>,
    /// `w_j` in `dg_j(base)` per equality.
    pub w_eq: Vec<DVector<f64>>,
    pub h_obj_at: f64,
    pub h_ineq_at: Vec<f64>,
    pub h_eq_at: Vec<f64>,
    pub g_eq_at: Vec<f64>,
}

/// Collects subgradients of all `h_k` (and `g_j` for equalities) at `y`.
pub fn collect_bundle(p: &DCProblem, y: &DVector<f64>) -> Result<SubgradientBundle, ModelError> {
    collect_bundle_with(p, y, EvalOptions::default())
}

/// Same as [`collect_bundle`] but with a tie-break offset, which selects a
/// different subgradient wherever some `h_k` or `g_j` is nonsmooth at `y`.
pub fn collect_bundle_with(
    p: &DCProblem,
    y: &DVector<f64>,
    opts: EvalOptions,
) -> Result<SubgradientBundle, ModelError> {
    if y.len() != p.dim {
        return Err(ModelError::DimensionMismatch { expected: p.dim, got: y.len() });
    }
    let (h_obj_at, v_obj) = p.objective.h.value_and_subgradient_with(y, opts)?;
    let mut v_ineq = Vec::with_capacity(p.inequalities.len());
    let mut h_ineq_at = Vec::with_capacity(p.inequalities.len());
    for f in &p.inequalities {
        let (hv, v) = f.h.value_and_subgradient_with(y, opts)?;
        h_ineq_at.push(hv);
        v_ineq.push(v);
    }
    let mut v_eq = Vec::with_capacity(p.equalities.len());
    let mut w_eq = Vec::with_capacity(p.equalities.len());
    let mut h_eq_at = Vec::with_capacity(p.equalities.len());
    let mut g_eq_at = Vec::with_capacity(p.equalities.len());
    for f in &p.equalities {
        let (hv, v) = f.h.value_and_subgradient_with(y, opts)?;
        let (gv, w) = f.g.value_and_subgradient_with(y, opts)?;
        h_eq_at.push(hv);
        g_eq_at.push(gv);
        v_eq.push(v);
        w_eq.push(w);
    }
    Ok(SubgradientBundle {
        base: y.clone(),
        v_obj,
        v_ineq,
        v_eq,
        w_eq,
        h_obj_at,
        h_ineq_at,
        h_eq_at,
        g_eq_at,
    })
}

/// `phi(x)`: total constraint violation under the `l1` norm.
pub fn infeasibility(p: &DCProblem, x: &DVector<f64>) -> Result<f64, ModelError> {
    if x.len() != p.dim {
        return Err(ModelError::DimensionMismatch { expected: p.dim, got: x.len() });
    }
    let mut phi = 0.0;
    for f in &p.inequalities {
        phi += dc_value(f, x)?.f.max(0.0);
    }
    for f in &p.equalities {
        phi += dc_value(f, x)?.f.abs();
    }
    Ok(phi)
}

/// The `l1` penalty value split into its parts; `total = objective +
/// c * infeasibility` holds exactly as computed.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyValue {
    pub objective: f64,
    pub infeasibility: f64,
    pub total: f64,
    pub c: f64,
}

pub fn penalty_value(p: &DCProblem, c: f64, x: &DVector<f64>) -> Result<PenaltyValue, ModelError> {
    if !(c > 0.0) {
        return Err(ModelError::InvalidParameter(format!(
            "penalty parameter must be positive, got {c}"
        )));
    }
    let objective = dc_value(&p.objective, x)?.f;
    let phi = infeasibility(p, x)?;
    Ok(PenaltyValue { objective, infeasibility: phi, total: objective + c * phi, c })
}

enum GammaTerm {
    /// `max{0, shifted}` for an inequality constraint.
    Ineq(ConvexExpr),
    /// `max{g_branch, h_branch}` for an equality constraint; the g-branch
    /// wins ties.
    Eq(ConvexExpr, ConvexExpr),
}

/// Convex oracle for `Gamma(., y, V)`, the linearized infeasibility measure.
pub struct GammaOracle {
    dim: usize,
    terms: Vec<GammaTerm>,
}

impl GammaOracle {
    fn build(p: &DCProblem, b: &SubgradientBundle) -> Result<Self, ModelError> {
        let y = &b.base;
        let mut terms = Vec::with_capacity(p.inequalities.len() + p.equalities.len());
        for (i, f) in p.inequalities.iter().enumerate() {
            let v = &b.v_ineq[i];
            let shift = -b.h_ineq_at[i] + v.dot(y);
            let branch = f.g.clone().plus_affine(-v, shift)?;
            terms.push(GammaTerm::Ineq(branch));
        }
        for (j, f) in p.equalities.iter().enumerate() {
            let v = &b.v_eq[j];
            let w = &b.w_eq[j];
            let gb = f.g.clone().plus_affine(-v, -b.h_eq_at[j] + v.dot(y))?;
            let hb = f.h.clone().plus_affine(-w, -b.g_eq_at[j] + w.dot(y))?;
            terms.push(GammaTerm::Eq(gb, hb));
        }
        Ok(Self { dim: p.dim, terms })
    }
}

impl ConvexOracle for GammaOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for t in &self.terms {
            total += match t {
                GammaTerm::Ineq(b) => b.value(x).max(0.0),
                GammaTerm::Eq(gb, hb) => gb.value(x).max(hb.value(x)),
            };
        }
        total
    }

    fn value_acc(&self, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) -> f64 {
        let opts = EvalOptions::default();
        let mut total = 0.0;
        for t in &self.terms {
            total += match t {
                GammaTerm::Ineq(b) => {
                    let v = b.value(x);
                    if v > 0.0 {
                        b.value_acc(x, scale, grad, opts);
                    }
                    v.max(0.0)
                }
                GammaTerm::Eq(gb, hb) => {
                    let vg = gb.value(x);
                    let vh = hb.value(x);
                    if vg >= vh {
                        gb.value_acc(x, scale, grad, opts);
                        vg
                    } else {
                        hb.value_acc(x, scale, grad, opts);
                        vh
                    }
                }
            };
        }
        total
    }
}

/// Linearization of the penalty machinery at one base point: the objective
/// part `omega(x) = g_0(x) - <v_0, x - y>` plus the `Gamma` terms. The
/// majorant `Q_c = omega + c * Gamma` is a cheap view over this for any `c`.
pub struct PenaltyLinearization {
    omega: ConvexExpr,
    gamma: GammaOracle,
    h0_at_base: f64,
}

impl PenaltyLinearization {
    pub fn new(p: &DCProblem, b: &SubgradientBundle) -> Result<Self, ModelError> {
        let y = &b.base;
        let omega = p.objective.g.clone().plus_affine(-&b.v_obj, b.v_obj.dot(y))?;
        Ok(Self { omega, gamma: GammaOracle::build(p, b)?, h0_at_base: b.h_obj_at })
    }

    pub fn gamma(&self) -> &GammaOracle {
        &self.gamma
    }

    /// `h_0` at the base point; `Q_c(y, y, V) - h_0(y) = Phi_c(y)`.
    pub fn h0_at_base(&self) -> f64 {
        self.h0_at_base
    }

    /// Linearized objective `g_0(x) - <v_0, x - y>`.
    pub fn omega_value(&self, x: &DVector<f64>) -> f64 {
        self.omega.value(x)
    }

    pub fn majorant(&self, c: f64) -> Result<MajorantRef<'_>, ModelError> {
        if !(c > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "penalty parameter must be positive, got {c}"
            )));
        }
        Ok(MajorantRef { lin: self, c })
    }

    fn m_value(&self, c: f64, x: &DVector<f64>) -> f64 {
        self.omega.value(x) + c * self.gamma.value(x)
    }

    fn m_acc(&self, c: f64, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) -> f64 {
        let v = self.omega.value_acc(x, scale, grad, EvalOptions::default());
        v + c * self.gamma.value_acc(x, scale * c, grad)
    }
}

/// Borrowed `Q_c(., y, V)` oracle.
pub struct MajorantRef<'a> {
    lin: &'a PenaltyLinearization,
    c: f64,
}

impl ConvexOracle for MajorantRef<'_> {
    fn dim(&self) -> usize {
        self.lin.gamma.dim
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.lin.m_value(self.c, x)
    }
    fn value_acc(&self, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) -> f64 {
        self.lin.m_acc(self.c, x, scale, grad)
    }
}

/// Owned `Q_c(., y, V)` oracle.
pub struct MajorantOracle {
    lin: PenaltyLinearization,
    c: f64,
}

impl MajorantOracle {
    pub fn c(&self) -> f64 {
        self.c
    }
}

impl ConvexOracle for MajorantOracle {
    fn dim(&self) -> usize {
        self.lin.gamma.dim
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.lin.m_value(self.c, x)
    }
    fn value_acc(&self, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) -> f64 {
        self.lin.m_acc(self.c, x, scale, grad)
    }
}

/// Builds the `Gamma(., y, V)` oracle for the bundle's base point.
pub fn gamma_oracle(p: &DCProblem, b: &SubgradientBundle) -> Result<GammaOracle, ModelError> {
    GammaOracle::build(p, b)
}

/// Builds the `Q_c(., y, V)` oracle.
pub fn majorant_oracle(
    p: &DCProblem,
    c: f64,
    b: &SubgradientBundle,
) -> Result<MajorantOracle, ModelError> {
    if !(c > 0.0) {
        return Err(ModelError::InvalidParameter(format!(
            "penalty parameter must be positive, got {c}"
        )));
    }
    Ok(MajorantOracle { lin: PenaltyLinearization::new(p, b)?, c })
}

/// Evaluates `Gamma(x, y, V)`.
pub fn gamma(p: &DCProblem, x: &DVector<f64>, b: &SubgradientBundle) -> Result<f64, ModelError> {
    if x.len() != p.dim {
        return Err(ModelError::DimensionMismatch { expected: p.dim, got: x.len() });
    }
    Ok(GammaOracle::build(p, b)?.value(x))
}

/// Evaluates `Q_c(x, y, V)`.
pub fn majorant(
    p: &DCProblem,
    c: f64,
    x: &DVector<f64>,
    b: &SubgradientBundle,
) -> Result<f64, ModelError> {
    if x.len() != p.dim {
        return Err(ModelError::DimensionMismatch { expected: p.dim, got: x.len() });
    }
    Ok(majorant_oracle(p, c, b)?.value(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{toy_eq, toy_ineq};
    use nalgebra::dvector;

    #[test]
    fn infeasibility_on_toys() {
        let eq = toy_eq();
        assert_eq!(infeasibility(&eq, &dvector![1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(infeasibility(&eq, &dvector![1.0, 0.0]).unwrap(), 1.0);
        let ineq = toy_ineq();
        assert_eq!(infeasibility(&ineq, &dvector![0.0]).unwrap(), 1.0);
    }

    #[test]
    fn penalty_value_consistency() {
        let ineq = toy_ineq();
        let pv = penalty_value(&ineq, 10.0, &dvector![0.0]).unwrap();
        assert_eq!(pv.total, 10.0);
        let eq = toy_eq();
        let pv = penalty_value(&eq, 2.0, &dvector![1.0, 0.0]).unwrap();
        // f0(1,0) = 0 + 1 = 1, phi = 1, total = 3.
        assert_eq!(pv.objective, 1.0);
        assert_eq!(pv.infeasibility, 1.0);
        assert_eq!(pv.total, 3.0);
        assert!(penalty_value(&eq, 0.0, &dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn bundle_on_toy_eq() {
        let p = toy_eq();
        let b = collect_bundle(&p, &dvector![0.0, 0.0]).unwrap();
        assert_eq!(b.v_eq[0], dvector![0.0, 0.0]);
        assert_eq!(b.w_eq[0], dvector![0.0, 0.0]);
        assert_eq!(b.v_obj, dvector![0.0, 0.0]);

        let b = collect_bundle(&p, &dvector![1.0, 2.0]).unwrap();
        assert_eq!(b.v_eq[0], dvector![0.0, 4.0]);
        assert_eq!(b.w_eq[0], dvector![2.0, 0.0]);
    }

    #[test]
    fn gamma_matches_hand_expansion_on_toy_eq() {
        let p = toy_eq();
        let base = dvector![0.0, 0.0];
        let b = collect_bundle(&p, &base).unwrap();
        // Gamma((s, s)) = max{s^2, s^2} = s^2 from base (0,0).
        for s in [-1.0, -0.25, 0.5, 2.0] {
            let g = gamma(&p, &dvector![s, s], &b).unwrap();
            assert!((g - s * s).abs() < 1e-12);
        }
        // Base-point equality Gamma(y,y,V) = phi(y).
        assert_eq!(gamma(&p, &base, &b).unwrap(), 0.0);
    }

    #[test]
    fn gamma_on_toy_ineq() {
        let p = toy_ineq();
        let b = collect_bundle(&p, &dvector![0.0]).unwrap();
        assert_eq!(gamma(&p, &dvector![-10.0], &b).unwrap(), 11.0);
        assert_eq!(b.v_ineq[0], dvector![0.0]);
        assert_eq!(b.v_obj, dvector![0.0]);
    }

    #[test]
    fn majorant_closed_form_on_toy_ineq() {
        // Q_5(x) = x + 5 max{1 - x, 0} from base 0.
        let p = toy_ineq();
        let b = collect_bundle(&p, &dvector![0.0]).unwrap();
        assert_eq!(majorant(&p, 5.0, &dvector![0.0], &b).unwrap(), 5.0);
        assert_eq!(majorant(&p, 5.0, &dvector![1.0], &b).unwrap(), 1.0);
        assert!(majorant_oracle(&p, 0.0, &b).is_err());
    }

    #[test]
    fn majorant_touches_penalty_at_base() {
        let p = toy_eq();
        for base in [dvector![0.3, -1.2], dvector![1.0, 1.0], dvector![-2.0, 0.5]] {
            let b = collect_bundle(&p, &base).unwrap();
            let c = 7.5;
            let q = majorant(&p, c, &base, &b).unwrap();
            let h0 = p.objective.h.value(&base);
            let phi = penalty_value(&p, c, &base).unwrap().total;
            assert!((q - h0 - phi).abs() < 1e-10);
        }
    }
}
