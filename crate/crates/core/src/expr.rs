//! Convex expressions as nonnegative-weighted sums of closed-form atoms.
//!
//! Every atom is convex by construction, so a weighted sum with nonnegative
//! weights is convex as well. Each atom knows how to report one element of
//! its subdifferential at any point; ties at kinks are broken by a fixed rule
//! (first maximizing branch in declaration order) so evaluation is
//! deterministic and bit-reproducible.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative eigenvalue tolerance for the PSD check on quadratic atoms.
pub const PSD_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("atom weight must be finite and nonnegative, got {0}")]
    BadWeight(f64),
    #[error("quadratic matrix is not symmetric positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },
    #[error("quadratic matrix is not symmetric")]
    NotSymmetric,
    #[error("coefficient is not finite")]
    NotFinite,
    #[error("max-affine atom needs at least one branch")]
    EmptyMaxAff,
    #[error("regularization weight must be nonnegative, got {0}")]
    NegativeMu(f64),
    #[error("box bounds violate l <= u at coordinate {coord}")]
    InvalidBounds { coord: usize },
    #[error("equality matrix must have {dim} columns, got {got}")]
    BadEqualityShape { dim: usize, got: usize },
    #[error("equality system is rank deficient or inconsistent")]
    DegenerateEqualities,
    #[error("feasible set appears to be empty")]
    EmptySet,
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// An affine map `a'x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub a: DVector<f64>,
    pub b: f64,
}

impl Affine {
    pub fn new(a: DVector<f64>, b: f64) -> Result<Self, ModelError> {
        if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NotFinite);
        }
        Ok(Self { a, b })
    }

    #[inline]
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.a.dot(x) + self.b
    }
}

/// A single convex atom.
#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    /// The constant zero function.
    Zero,
    /// `a'x + b`.
    Affine(Affine),
    /// `0.5 x'Px + a'x + b` with `P` symmetric positive semidefinite.
    Quad {
        p: DMatrix<f64>,
        a: DVector<f64>,
        b: f64,
    },
    /// `max_i (a_i'x + b_i)`.
    MaxAff(Vec<Affine>),
    /// `max{0, a'x + b}`; the zero branch wins ties.
    Hinge(Affine),
    /// `|a'x + b|`; the positive branch wins ties.
    Abs(Affine),
    /// `(sum_i max{0, a_i'x + b_i})^2`; inactive hinges contribute nothing.
    SqHingeSum(Vec<Affine>),
}

/// Evaluation options; `tie_offset` rotates the branch chosen at exact ties
/// (0 keeps the default first-maximizing-branch rule).
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub tie_offset: usize,
}

/// Picks the index of the maximizing branch among `vals`, rotating by
/// `tie_offset` across branches that are exactly tied at the maximum.
fn argmax_with_ties(vals: &[f64], tie_offset: usize) -> usize {
    let mut best = f64::NEG_INFINITY;
    for &v in vals {
        if v > best {
            best = v;
        }
    }
    let tied: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] == best).collect();
    tied[tie_offset % tied.len()]
}

impl Atom {
    fn check_dim(&self, dim: usize) -> Result<(), ModelError> {
        let ok = match self {
            Atom::Zero => true,
            Atom::Affine(f) | Atom::Hinge(f) | Atom::Abs(f) => f.a.len() == dim,
            Atom::Quad { p, a, .. } => p.nrows() == dim && p.ncols() == dim && a.len() == dim,
            Atom::MaxAff(fs) | Atom::SqHingeSum(fs) => fs.iter().all(|f| f.a.len() == dim),
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: dim,
                got: usize::MAX,
            })
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Atom::Zero => 0.0,
            Atom::Affine(f) => f.eval(x),
            Atom::Quad { p, a, b } => 0.5 * quad_form(p, x) + a.dot(x) + b,
            Atom::MaxAff(fs) => fs.iter().map(|f| f.eval(x)).fold(f64::NEG_INFINITY, f64::max),
            Atom::Hinge(f) => f.eval(x).max(0.0),
            Atom::Abs(f) => f.eval(x).abs(),
            Atom::SqHingeSum(fs) => {
                let s: f64 = fs.iter().map(|f| f.eval(x).max(0.0)).sum();
                s * s
            }
        }
    }

    /// Adds `scale` times a subgradient at `x` into `grad` and returns the value.
    fn eval_acc(
        &self,
        x: &DVector<f64>,
        scale: f64,
        grad: &mut DVector<f64>,
        opts: EvalOptions,
    ) -> f64 {
        match self {
            Atom::Zero => 0.0,
            Atom::Affine(f) => {
                grad.axpy(scale, &f.a, 1.0);
                f.eval(x)
            }
            Atom::Quad { p, a, b } => {
                if let Some(d) = diagonal_of(p) {
                    for i in 0..x.len() {
                        grad[i] += scale * (d[i] * x[i] + a[i]);
                    }
                    let v: f64 = (0..x.len()).map(|i| 0.5 * d[i] * x[i] * x[i]).sum();
                    v + a.dot(x) + b
                } else {
                    let px = p * x;
                    grad.axpy(scale, &px, 1.0);
                    grad.axpy(scale, a, 1.0);
                    0.5 * px.dot(x) + a.dot(x) + b
                }
            }
            Atom::MaxAff(fs) => {
                let vals: Vec<f64> = fs.iter().map(|f| f.eval(x)).collect();
                let k = argmax_with_ties(&vals, opts.tie_offset);
                grad.axpy(scale, &fs[k].a, 1.0);
                vals[k]
            }
            Atom::Hinge(f) => {
                let v = f.eval(x);
                // branches in declaration order: {0, affine}
                let k = argmax_with_ties(&[0.0, v], opts.tie_offset);
                if k == 1 {
                    grad.axpy(scale, &f.a, 1.0);
                }
                v.max(0.0)
            }
            Atom::Abs(f) => {
                let v = f.eval(x);
                // branches in declaration order: {+affine, -affine}
                let k = argmax_with_ties(&[v, -v], opts.tie_offset);
                let sign = if k == 0 { 1.0 } else { -1.0 };
                grad.axpy(scale * sign, &f.a, 1.0);
                v.abs()
            }
            Atom::SqHingeSum(fs) => {
                let mut s = 0.0;
                let mut active: Vec<usize> = Vec::new();
                for (i, f) in fs.iter().enumerate() {
                    let v = f.eval(x);
                    let k = argmax_with_ties(&[0.0, v], opts.tie_offset);
                    if v > 0.0 {
                        s += v;
                    }
                    if k == 1 && v >= 0.0 {
                        active.push(i);
                    }
                }
                // d/dx (s^2) = 2 s * sum of active hinge gradients
                let c = 2.0 * s * scale;
                if c != 0.0 {
                    for &i in &active {
                        grad.axpy(c, &fs[i].a, 1.0);
                    }
                }
                s * s
            }
        }
    }
}

#[inline]
fn quad_form(p: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    if let Some(d) = diagonal_of(p) {
        (0..x.len()).map(|i| d[i] * x[i] * x[i]).sum()
    } else {
        (p * x).dot(x)
    }
}

/// Returns the diagonal when the matrix has no off-diagonal entries.
fn diagonal_of(p: &DMatrix<f64>) -> Option<DVector<f64>> {
    for j in 0..p.ncols() {
        for i in 0..p.nrows() {
            if i != j && p[(i, j)] != 0.0 {
                return None;
            }
        }
    }
    Some(DVector::from_fn(p.nrows(), |i, _| p[(i, i)]))
}

fn check_psd(p: &DMatrix<f64>) -> Result<(), ModelError> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NotFinite);
    }
    let scale = p.norm();
    if scale == 0.0 {
        return Ok(());
    }
    let asym = (p - p.transpose()).norm();
    if asym > 1e-12 * scale {
        return Err(ModelError::NotSymmetric);
    }
    let tol = -PSD_REL_TOL * scale;
    if let Some(d) = diagonal_of(p) {
        let min_eig = d.min();
        if min_eig < tol {
            return Err(ModelError::NotPsd { min_eig });
        }
        return Ok(());
    }
    let eig = p.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < tol {
        return Err(ModelError::NotPsd { min_eig });
    }
    Ok(())
}

/// One weighted atom inside a [`ConvexExpr`].
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub weight: f64,
    pub atom: Atom,
}

/// A convex function given as a nonnegative combination of atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexExpr {
    dim: usize,
    terms: Vec<Term>,
}

impl ConvexExpr {
    /// The zero function on `R^dim`.
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn new(dim: usize, terms: Vec<Term>) -> Result<Self, ModelError> {
        let mut e = Self::zero(dim);
        for t in terms {
            e.push(t.weight, t.atom)?;
        }
        Ok(e)
    }

    /// Appends `weight * atom`; validates the weight, dimensions and (for
    /// quadratics) positive semidefiniteness.
    pub fn push(&mut self, weight: f64, atom: Atom) -> Result<(), ModelError> {
        if !weight.is_finite() || weight < 0.0 {
            return Err(ModelError::BadWeight(weight));
        }
        atom.check_dim(self.dim)?;
        match &atom {
            Atom::Quad { p, a, b } => {
                check_psd(p)?;
                if !b.is_finite() || a.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::NotFinite);
                }
            }
            Atom::MaxAff(fs) => {
                if fs.is_empty() {
                    return Err(ModelError::EmptyMaxAff);
                }
            }
            _ => {}
        }
        self.terms.push(Term { weight, atom });
        Ok(())
    }

    pub fn with(mut self, weight: f64, atom: Atom) -> Result<Self, ModelError> {
        self.push(weight, atom)?;
        Ok(self)
    }

    /// Single-atom convenience constructor.
    pub fn atom(dim: usize, atom: Atom) -> Result<Self, ModelError> {
        Self::zero(dim).with(1.0, atom)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.weight == 0.0 || matches!(t.atom, Atom::Zero))
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<(), ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let mut v = 0.0;
        for t in &self.terms {
            v += t.weight * t.atom.value(x);
        }
        v
    }

    /// Adds `scale` times a subgradient into `grad`, returning the value.
    pub fn value_acc(
        &self,
        x: &DVector<f64>,
        scale: f64,
        grad: &mut DVector<f64>,
        opts: EvalOptions,
    ) -> f64 {
        let mut v = 0.0;
        for t in &self.terms {
            v += t.weight * t.atom.eval_acc(x, scale * t.weight, grad, opts);
        }
        v
    }

    /// Value and one subgradient at `x` under the default tie-break rule.
    pub fn value_and_subgradient(
        &self,
        x: &DVector<f64>,
    ) -> Result<(f64, DVector<f64>), ModelError> {
        self.value_and_subgradient_with(x, EvalOptions::default())
    }

    pub fn value_and_subgradient_with(
        &self,
        x: &DVector<f64>,
        opts: EvalOptions,
    ) -> Result<(f64, DVector<f64>), ModelError> {
        self.check_point(x)?;
        let mut g = DVector::zeros(self.dim);
        let v = self.value_acc(x, 1.0, &mut g, opts);
        Ok((v, g))
    }

    /// Sum of two expressions over the same space.
    pub fn plus(mut self, other: &ConvexExpr) -> Result<Self, ModelError> {
        if other.dim != self.dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.terms.extend(other.terms.iter().cloned());
        Ok(self)
    }

    /// Adds the affine term `a'x + b`.
    pub fn plus_affine(self, a: DVector<f64>, b: f64) -> Result<Self, ModelError> {
        let dim = self.dim;
        if a.len() != dim {
            return Err(ModelError::DimensionMismatch { expected: dim, got: a.len() });
        }
        self.with(1.0, Atom::Affine(Affine::new(a, b)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn abs_x() -> ConvexExpr {
        ConvexExpr::atom(1, Atom::Abs(Affine { a: dvector![1.0], b: 0.0 })).unwrap()
    }

    #[test]
    fn abs_smooth_branch() {
        let f = abs_x();
        let (v, g) = f.value_and_subgradient(&dvector![2.0]).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(g[0], 1.0);
    }

    #[test]
    fn abs_kink_takes_positive_branch() {
        let f = abs_x();
        let (v, g) = f.value_and_subgradient(&dvector![0.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g[0], 1.0);
        // The offset knob flips to the second maximizing branch.
        let (_, g1) = f
            .value_and_subgradient_with(&dvector![0.0], EvalOptions { tie_offset: 1 })
            .unwrap();
        assert_eq!(g1[0], -1.0);
    }

    #[test]
    fn hinge_kink_takes_zero_branch() {
        let f = ConvexExpr::atom(1, Atom::Hinge(Affine { a: dvector![1.0], b: 0.0 })).unwrap();
        let (v, g) = f.value_and_subgradient(&dvector![0.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn sq_hinge_sum_value_and_gradient() {
        // (max{0,y} + max{0,u})^2 at (2,3): value 25, gradient (10,10).
        let f = ConvexExpr::atom(
            2,
            Atom::SqHingeSum(vec![
                Affine { a: dvector![1.0, 0.0], b: 0.0 },
                Affine { a: dvector![0.0, 1.0], b: 0.0 },
            ]),
        )
        .unwrap();
        let x = dvector![2.0, 3.0];
        let (v, g) = f.value_and_subgradient(&x).unwrap();
        assert_eq!(v, 25.0);
        assert_eq!(g, dvector![10.0, 10.0]);

        // Independent finite-difference check of the gradient.
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5, "fd {} vs analytic {}", fd, g[i]);
        }
    }

    #[test]
    fn negative_weight_rejected() {
        let e = ConvexExpr::zero(1).with(-1.0, Atom::Zero);
        assert!(matches!(e, Err(ModelError::BadWeight(_))));
    }

    #[test]
    fn non_psd_quad_rejected() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let e = ConvexExpr::atom(2, Atom::Quad { p, a: DVector::zeros(2), b: 0.0 });
        assert!(matches!(e, Err(ModelError::NotPsd { .. })));
    }

    #[test]
    fn evaluation_is_bit_deterministic() {
        let f = ConvexExpr::atom(
            2,
            Atom::MaxAff(vec![
                Affine { a: dvector![1.0, 2.0], b: 0.5 },
                Affine { a: dvector![2.0, 1.0], b: 0.5 },
            ]),
        )
        .unwrap();
        let x = dvector![0.3, 0.3];
        let (v1, g1) = f.value_and_subgradient(&x).unwrap();
        let (v2, g2) = f.value_and_subgradient(&x).unwrap();
        assert!(v1.to_bits() == v2.to_bits());
        assert!(g1.iter().zip(g2.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
