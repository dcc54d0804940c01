//! Euclidean projection onto a box intersected with an affine subspace.
//!
//! Pure boxes clamp, pure subspaces project by least squares through a cached
//! Cholesky factor of `E E'`, and the mixed case runs Dykstra's alternating
//! projections. When the box-constrained coordinates and the coordinates
//! touched by `E` are disjoint the two projections commute and a single pass
//! of each is already exact.

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::expr::ModelError;
use crate::problem::FeasibleSet;

/// Absolute tolerance on the affine residual of projected points.
pub const AFFINE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("Dykstra projection did not converge within {0} sweeps")]
    SweepLimit(usize),
    #[error("projection stalled with affine residual {0:.3e}; the set appears empty")]
    LooksEmpty(f64),
}

struct AffineOps {
    mat: DMatrix<f64>,
    rhs: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl AffineOps {
    /// `x - E'(EE')^{-1}(Ex - e)`, the exact projection onto `Ex = e`.
    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = &self.mat * x - &self.rhs;
        let y = self.chol.solve(&r);
        x - self.mat.transpose() * y
    }

    fn residual(&self, x: &DVector<f64>) -> f64 {
        (&self.mat * x - &self.rhs).amax()
    }
}

pub struct Projector {
    lower: DVector<f64>,
    upper: DVector<f64>,
    affine: Option<AffineOps>,
    /// Box-active and equality-active coordinates do not overlap, so the two
    /// projections compose exactly.
    disjoint: bool,
}

impl Projector {
    pub fn new(set: &FeasibleSet) -> Result<Self, ModelError> {
        let dim = set.dim();
        for i in 0..dim {
            if !(set.lower()[i] <= set.upper()[i]) {
                return Err(ModelError::InvalidBounds { coord: i });
            }
        }
        let affine = match set.equalities() {
            Some(eq) if eq.mat.nrows() > 0 => {
                if eq.mat.ncols() != dim || eq.mat.nrows() != eq.rhs.len() {
                    return Err(ModelError::BadEqualityShape { dim, got: eq.mat.ncols() });
                }
                if eq.mat.iter().any(|v| !v.is_finite()) || eq.rhs.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::NotFinite);
                }
                let gram = &eq.mat * eq.mat.transpose();
                let chol =
                    Cholesky::new(gram).ok_or(ModelError::DegenerateEqualities)?;
                Some(AffineOps { mat: eq.mat.clone(), rhs: eq.rhs.clone(), chol })
            }
            _ => None,
        };
        let disjoint = match &affine {
            None => true,
            Some(ops) => {
                let mut overlap = false;
                for j in 0..dim {
                    let boxed = set.lower()[j].is_finite() || set.upper()[j].is_finite();
                    if !boxed {
                        continue;
                    }
                    if (0..ops.mat.nrows()).any(|i| ops.mat[(i, j)] != 0.0) {
                        overlap = true;
                        break;
                    }
                }
                !overlap
            }
        };
        Ok(Self {
            lower: set.lower().clone(),
            upper: set.upper().clone(),
            affine,
            disjoint,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp_mut(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        self.clamp_mut(&mut y);
        y
    }

    pub fn affine_residual(&self, x: &DVector<f64>) -> f64 {
        self.affine.as_ref().map_or(0.0, |a| a.residual(x))
    }

    pub fn has_equalities(&self) -> bool {
        self.affine.is_some()
    }

    /// Euclidean projection onto the set.
    pub fn project(
        &self,
        x: &DVector<f64>,
        max_sweeps: usize,
    ) -> Result<DVector<f64>, ProjectError> {
        let Some(aff) = &self.affine else {
            return Ok(self.clamp(x));
        };
        if self.disjoint {
            let mut y = aff.project(x);
            self.clamp_mut(&mut y);
            return Ok(y);
        }
        // Dykstra between the affine subspace and the box; the final step is
        // a clamp so box bounds hold exactly.
        let mut z = x.clone();
        let mut p = DVector::zeros(x.len());
        let mut q = DVector::zeros(x.len());
        let mut prev = z.clone();
        let scale = 1.0 + x.amax();
        for sweep in 0..max_sweeps {
            let y = aff.project(&(&z + &p));
            p = &z + &p - &y;
            let mut w = &y + &q;
            let w_pre = w.clone();
            self.clamp_mut(&mut w);
            q = w_pre - &w;
            z = w;

            let moved = (&z - &prev).amax();
            let res = aff.residual(&z);
            if res <= AFFINE_TOL * (1.0 + aff.rhs.amax()) && moved <= 1e-12 * scale {
                return Ok(z);
            }
            if sweep > 50 && moved <= 1e-14 * scale && res > 1e-6 {
                return Err(ProjectError::LooksEmpty(res));
            }
            prev = z.clone();
        }
        // Accept a slightly loose exit if the residual is already at the
        // documented tolerance.
        if aff.residual(&z) <= AFFINE_TOL * (1.0 + aff.rhs.amax()) {
            return Ok(z);
        }
        Err(ProjectError::SweepLimit(max_sweeps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Equalities;
    use nalgebra::dvector;

    #[test]
    fn clamp_is_projection_for_boxes() {
        let set = FeasibleSet::box_only(dvector![0.0, 0.0], dvector![1.0, 1.0]).unwrap();
        let pr = Projector::new(&set).unwrap();
        let y = pr.project(&dvector![2.0, -1.0], 100).unwrap();
        assert_eq!(y, dvector![1.0, 0.0]);
    }

    #[test]
    fn affine_projection_without_box() {
        let eq = Equalities {
            mat: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            rhs: dvector![1.0],
        };
        let set = FeasibleSet::from_parts_unchecked(
            dvector![f64::NEG_INFINITY, f64::NEG_INFINITY],
            dvector![f64::INFINITY, f64::INFINITY],
            Some(eq),
        );
        let pr = Projector::new(&set).unwrap();
        let y = pr.project(&dvector![0.0, 0.0], 100).unwrap();
        assert!((y - dvector![0.5, 0.5]).amax() < 1e-12);
    }

    #[test]
    fn dykstra_handles_overlapping_box_and_affine() {
        // {x1 + x2 = 1} intersected with [0, 0.3] x [0, 2], projecting the
        // origin: the answer is (0.3, 0.7).
        let eq = Equalities {
            mat: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            rhs: dvector![1.0],
        };
        let set = FeasibleSet::from_parts_unchecked(
            dvector![0.0, 0.0],
            dvector![0.3, 2.0],
            Some(eq),
        );
        let pr = Projector::new(&set).unwrap();
        let y = pr.project(&dvector![0.0, 0.0], 10_000).unwrap();
        assert!((&y - dvector![0.3, 0.7]).amax() < 1e-7, "got {y}");
        // Idempotence.
        let y2 = pr.project(&y, 10_000).unwrap();
        assert!((&y2 - &y).amax() < 1e-10);
    }

    #[test]
    fn rank_deficient_equalities_rejected() {
        let eq = Equalities {
            mat: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            rhs: dvector![0.0, 1.0],
        };
        let set = FeasibleSet::from_parts_unchecked(
            dvector![f64::NEG_INFINITY],
            dvector![f64::INFINITY],
            Some(eq),
        );
        assert!(matches!(
            Projector::new(&set),
            Err(ModelError::DegenerateEqualities)
        ));
    }
}
