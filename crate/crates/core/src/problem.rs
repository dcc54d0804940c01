//! DC functions, feasible sets and full DC problems.
//!
//! A problem minimizes `f_0 = g_0 - h_0` subject to DC inequality constraints
//! `f_i <= 0`, DC equality constraints `f_j = 0`, and membership in a closed
//! convex set `A` given as a box intersected with an affine subspace.

use nalgebra::{DMatrix, DVector};

use crate::expr::{Atom, ConvexExpr, ModelError};
use crate::subsolver::project::Projector;

/// A function expressed as a difference `g - h` of two convex expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct DCFunction {
    pub g: ConvexExpr,
    pub h: ConvexExpr,
}

impl DCFunction {
    pub fn new(g: ConvexExpr, h: ConvexExpr) -> Result<Self, ModelError> {
        if g.dim() != h.dim() {
            return Err(ModelError::DimensionMismatch {
                expected: g.dim(),
                got: h.dim(),
            });
        }
        Ok(Self { g, h })
    }

    /// Convex function seen as a DC pair with `h = 0`.
    pub fn convex(g: ConvexExpr) -> Self {
        let dim = g.dim();
        Self { g, h: ConvexExpr::zero(dim) }
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }
}

/// Value of a DC function split into its convex parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcValue {
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

/// Evaluates a DC function, returning `f = g - h` together with both parts.
pub fn dc_value(f: &DCFunction, x: &DVector<f64>) -> Result<DcValue, ModelError> {
    if x.len() != f.dim() {
        return Err(ModelError::DimensionMismatch { expected: f.dim(), got: x.len() });
    }
    let g = f.g.value(x);
    let h = f.h.value(x);
    Ok(DcValue { f: g - h, g, h })
}

/// Affine equality block `E x = e` with `E` of full row rank.
#[derive(Debug, Clone, PartialEq)]
pub struct Equalities {
    pub mat: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// A box intersected with an affine subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
    eq: Option<Equalities>,
}

impl FeasibleSet {
    /// Builds and certifies the set: bounds ordered, `E` full row rank,
    /// and nonemptiness established by projecting the origin onto the set.
    pub fn new(
        lower: DVector<f64>,
        upper: DVector<f64>,
        eq: Option<Equalities>,
    ) -> Result<Self, ModelError> {
        let set = Self::from_parts_unchecked(lower, upper, eq);
        set.certify()?;
        Ok(set)
    }

    /// Box with no affine part.
    pub fn box_only(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, ModelError> {
        Self::new(lower, upper, None)
    }

    /// Whole space `R^dim`.
    pub fn free(dim: usize) -> Self {
        Self::from_parts_unchecked(
            DVector::from_element(dim, f64::NEG_INFINITY),
            DVector::from_element(dim, f64::INFINITY),
            None,
        )
    }

    /// Builds the set without any validation (used by deserialization and by
    /// diagnostics that inspect malformed sets).
    pub fn from_parts_unchecked(
        lower: DVector<f64>,
        upper: DVector<f64>,
        eq: Option<Equalities>,
    ) -> Self {
        Self { lower, upper, eq }
    }

    fn certify(&self) -> Result<(), ModelError> {
        for i in 0..self.dim() {
            if !(self.lower[i] <= self.upper[i]) {
                return Err(ModelError::InvalidBounds { coord: i });
            }
        }
        if let Some(eq) = &self.eq {
            if eq.mat.ncols() != self.dim() || eq.mat.nrows() != eq.rhs.len() {
                return Err(ModelError::BadEqualityShape {
                    dim: self.dim(),
                    got: eq.mat.ncols(),
                });
            }
        }
        // Full row rank is certified inside the projector; nonemptiness by
        // projecting the origin.
        let projector = Projector::new(self)?;
        projector
            .project(&DVector::zeros(self.dim()), 10_000)
            .map_err(|_| ModelError::EmptySet)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn equalities(&self) -> Option<&Equalities> {
        self.eq.as_ref()
    }

    /// True when every coordinate has finite bounds.
    pub fn is_box_bounded(&self) -> bool {
        (0..self.dim()).all(|i| self.lower[i].is_finite() && self.upper[i].is_finite())
    }

    pub fn contains(&self, x: &DVector<f64>, box_tol: f64, aff_tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        for i in 0..self.dim() {
            if x[i] < self.lower[i] - box_tol || x[i] > self.upper[i] + box_tol {
                return false;
            }
        }
        if let Some(eq) = &self.eq {
            let r = &eq.mat * x - &eq.rhs;
            if r.amax() > aff_tol {
                return false;
            }
        }
        true
    }
}

/// A full DC optimization problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DCProblem {
    pub dim: usize,
    pub objective: DCFunction,
    pub inequalities: Vec<DCFunction>,
    pub equalities: Vec<DCFunction>,
    pub set: FeasibleSet,
}

impl DCProblem {
    pub fn new(
        objective: DCFunction,
        inequalities: Vec<DCFunction>,
        equalities: Vec<DCFunction>,
        set: FeasibleSet,
    ) -> Result<Self, ModelError> {
        let dim = objective.dim();
        let p = Self { dim, objective, inequalities, equalities, set };
        let issues = p.validate();
        if let Some(v) = issues.first() {
            return Err(ModelError::InvalidParameter(v.to_string()));
        }
        Ok(p)
    }

    /// Structural diagnostics; the list is empty exactly when all invariants
    /// hold. Never panics on malformed input.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.objective.dim() != self.dim {
            out.push(Violation::Dimension { what: "objective".into() });
        }
        for (k, f) in self.inequalities.iter().enumerate() {
            if f.dim() != self.dim {
                out.push(Violation::Dimension { what: format!("inequality {k}") });
            }
        }
        for (k, f) in self.equalities.iter().enumerate() {
            if f.dim() != self.dim {
                out.push(Violation::Dimension { what: format!("equality {k}") });
            }
        }
        if self.set.dim() != self.dim {
            out.push(Violation::Dimension { what: "feasible set".into() });
        } else {
            for i in 0..self.dim {
                if !(self.set.lower[i] <= self.set.upper[i]) {
                    out.push(Violation::BoundsOrder { coord: i });
                }
            }
            if let Some(eq) = &self.set.eq {
                if eq.mat.ncols() != self.dim || eq.mat.nrows() != eq.rhs.len() {
                    out.push(Violation::EqualityShape);
                } else if out.is_empty() {
                    match Projector::new(&self.set) {
                        Ok(pr) => {
                            if pr.project(&DVector::zeros(self.dim), 10_000).is_err() {
                                out.push(Violation::EmptySet);
                            }
                        }
                        Err(_) => {
                            // Rank-deficient rows: consistent systems are a
                            // rank violation, inconsistent ones mean the set
                            // is empty.
                            if equality_system_consistent(eq) {
                                out.push(Violation::RankDeficient);
                            } else {
                                out.push(Violation::EmptySet);
                            }
                        }
                    }
                }
            } else if out.is_empty() {
                // Box-only nonemptiness is just the bounds order, checked above.
            }
        }
        out
    }

    /// Penalty-free feasibility w.r.t. the functional constraints only.
    pub fn index_counts(&self) -> (usize, usize) {
        (self.inequalities.len(), self.equalities.len())
    }
}

fn equality_system_consistent(eq: &Equalities) -> bool {
    // Least-squares residual of E x = e via SVD.
    let svd = eq.mat.clone().svd(true, true);
    match svd.solve(&eq.rhs, 1e-12) {
        Ok(x) => {
            let r = &eq.mat * &x - &eq.rhs;
            r.amax() <= 1e-8 * (1.0 + eq.rhs.amax())
        }
        Err(_) => false,
    }
}

/// One structural defect found by [`DCProblem::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension { what: String },
    BoundsOrder { coord: usize },
    EqualityShape,
    RankDeficient,
    EmptySet,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Dimension { what } => write!(f, "dimension mismatch in {what}"),
            Violation::BoundsOrder { coord } => {
                write!(f, "box bounds violate l <= u at coordinate {coord}")
            }
            Violation::EqualityShape => write!(f, "equality block has inconsistent shape"),
            Violation::RankDeficient => write!(f, "equality matrix is rank deficient"),
            Violation::EmptySet => write!(f, "feasible set is empty"),
        }
    }
}

/// Rewrites the objective as `(g_0 + mu|x|^2) - (h_0 + mu|x|^2)`.
///
/// Values of `f_0` are unchanged at every point while `h_0` becomes strongly
/// convex for `mu > 0`, which is what the convergence theory asks of the
/// concave part.
pub fn regularize_objective(p: &DCProblem, mu: f64) -> Result<DCProblem, ModelError> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(ModelError::NegativeMu(mu));
    }
    if mu == 0.0 {
        return Ok(p.clone());
    }
    let d = p.dim;
    let quad = || Atom::Quad {
        p: DMatrix::from_diagonal(&DVector::from_element(d, 2.0 * mu)),
        a: DVector::zeros(d),
        b: 0.0,
    };
    let mut out = p.clone();
    out.objective.g.push(1.0, quad())?;
    out.objective.h.push(1.0, quad())?;
    Ok(out)
}
