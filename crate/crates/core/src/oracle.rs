//! First-order oracle interface for convex functions.
//!
//! The inner solver only ever sees this trait: closed-form expressions,
//! penalty majorants and ad-hoc closures all minimize through the same code
//! path.

use nalgebra::DVector;

use crate::expr::{ConvexExpr, EvalOptions};

/// A convex function queried through value/subgradient evaluations.
///
/// Implementations must be deterministic: repeated evaluation at the same
/// point returns bit-identical results.
pub trait ConvexOracle {
    fn dim(&self) -> usize;

    /// Function value only.
    fn value(&self, x: &DVector<f64>) -> f64;

    /// Adds `scale` times one subgradient at `x` into `grad` and returns the
    /// value.
    fn value_acc(&self, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) -> f64;

    /// Value plus a freshly allocated subgradient.
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut g = DVector::zeros(self.dim());
        let v = self.value_acc(x, 1.0, &mut g);
        (v, g)
    }
}

impl ConvexOracle for ConvexExpr {
    fn dim(&self) -> usize {
        ConvexExpr::dim(self)
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        ConvexExpr::value(self, x)
    }

    fn value_acc(&self, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) -> f64 {
        ConvexExpr::value_acc(self, x, scale, grad, EvalOptions::default())
    }
}

impl<T: ConvexOracle + ?Sized> ConvexOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        (**self).value(x)
    }
    fn value_acc(&self, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) -> f64 {
        (**self).value_acc(x, scale, grad)
    }
}

/// Pointwise maximum of convex oracles; the first maximizing branch in
/// declaration order supplies the subgradient at ties.
pub struct MaxOracle<T> {
    branches: Vec<T>,
    dim: usize,
}

impl<T: ConvexOracle> MaxOracle<T> {
    pub fn new(branches: Vec<T>) -> Self {
        assert!(!branches.is_empty(), "max oracle needs at least one branch");
        let dim = branches[0].dim();
        assert!(branches.iter().all(|b| b.dim() == dim));
        Self { branches, dim }
    }
}

impl<T: ConvexOracle> ConvexOracle for MaxOracle<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.branches.iter().map(|b| b.value(x)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn value_acc(&self, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) -> f64 {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (i, b) in self.branches.iter().enumerate() {
            let v = b.value(x);
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        self.branches[best].value_acc(x, scale, grad);
        best_v
    }
}

/// An opaque oracle built from a closure returning `(value, subgradient)`.
pub struct FnOracle<F> {
    f: F,
    dim: usize,
}

impl<F: Fn(&DVector<f64>) -> (f64, DVector<f64>)> FnOracle<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { f, dim }
    }
}

impl<F: Fn(&DVector<f64>) -> (f64, DVector<f64>)> ConvexOracle for FnOracle<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x).0
    }

    fn value_acc(&self, x: &DVector<f64>, scale: f64, grad: &mut DVector<f64>) -> f64 {
        let (v, g) = (self.f)(x);
        grad.axpy(scale, &g, 1.0);
        v
    }
}
