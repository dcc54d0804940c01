//! Serializable problem format.
//!
//! Problems are stored as one JSON object per file: dimension, atoms per
//! convex part with dense coefficient arrays, box bounds (null meaning
//! unbounded) and affine equality rows. Parsing then serializing then parsing
//! again reproduces the identical problem; floating-point values survive the
//! round trip bit-exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Affine, Atom, ConvexExpr, ModelError};
use crate::problem::{DCFunction, DCProblem, Equalities, FeasibleSet};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid problem: {0}")]
    Model(#[from] ModelError),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    File(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AffineRepr {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomRepr {
    Zero,
    Affine { a: Vec<f64>, b: f64 },
    Quad { p: Vec<Vec<f64>>, a: Vec<f64>, b: f64 },
    MaxAff { branches: Vec<AffineRepr> },
    Hinge { a: Vec<f64>, b: f64 },
    Abs { a: Vec<f64>, b: f64 },
    SqHingeSum { branches: Vec<AffineRepr> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TermRepr {
    pub weight: f64,
    pub atom: AtomRepr,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExprRepr {
    pub terms: Vec<TermRepr>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DcRepr {
    pub g: ExprRepr,
    pub h: ExprRepr,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SetRepr {
    /// Per-coordinate lower bounds; `null` means unbounded below.
    pub lower: Vec<Option<f64>>,
    /// Per-coordinate upper bounds; `null` means unbounded above.
    pub upper: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eq_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eq_rhs: Option<Vec<f64>>,
}

/// Top-level problem document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemRepr {
    pub dimension: usize,
    pub objective: DcRepr,
    #[serde(default)]
    pub inequalities: Vec<DcRepr>,
    #[serde(default)]
    pub equalities: Vec<DcRepr>,
    pub set: SetRepr,
}

/// Point document used by the criticality checker.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PointRepr {
    pub x: Vec<f64>,
}

fn affine_to_repr(f: &Affine) -> AffineRepr {
    AffineRepr { a: f.a.iter().cloned().collect(), b: f.b }
}

fn affine_from_repr(r: &AffineRepr) -> Result<Affine, ModelError> {
    Affine::new(DVector::from_vec(r.a.clone()), r.b)
}

fn atom_to_repr(a: &Atom) -> AtomRepr {
    match a {
        Atom::Zero => AtomRepr::Zero,
        Atom::Affine(f) => AtomRepr::Affine { a: f.a.iter().cloned().collect(), b: f.b },
        Atom::Quad { p, a, b } => AtomRepr::Quad {
            p: (0..p.nrows())
                .map(|i| (0..p.ncols()).map(|j| p[(i, j)]).collect())
                .collect(),
            a: a.iter().cloned().collect(),
            b: *b,
        },
        Atom::MaxAff(fs) => AtomRepr::MaxAff { branches: fs.iter().map(affine_to_repr).collect() },
        Atom::Hinge(f) => AtomRepr::Hinge { a: f.a.iter().cloned().collect(), b: f.b },
        Atom::Abs(f) => AtomRepr::Abs { a: f.a.iter().cloned().collect(), b: f.b },
        Atom::SqHingeSum(fs) => {
            AtomRepr::SqHingeSum { branches: fs.iter().map(affine_to_repr).collect() }
        }
    }
}

fn atom_from_repr(r: &AtomRepr, dim: usize) -> Result<Atom, IoError> {
    let vec_dim = |v: &Vec<f64>| -> Result<DVector<f64>, IoError> {
        if v.len() != dim {
            return Err(IoError::Invalid(format!(
                "coefficient vector has length {}, expected {dim}",
                v.len()
            )));
        }
        Ok(DVector::from_vec(v.clone()))
    };
    Ok(match r {
        AtomRepr::Zero => Atom::Zero,
        AtomRepr::Affine { a, b } => Atom::Affine(Affine::new(vec_dim(a)?, *b)?),
        AtomRepr::Quad { p, a, b } => {
            if p.len() != dim || p.iter().any(|row| row.len() != dim) {
                return Err(IoError::Invalid(format!(
                    "quadratic matrix must be {dim}x{dim}"
                )));
            }
            let mut m = DMatrix::zeros(dim, dim);
            for (i, row) in p.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    m[(i, j)] = *v;
                }
            }
            Atom::Quad { p: m, a: vec_dim(a)?, b: *b }
        }
        AtomRepr::MaxAff { branches } => Atom::MaxAff(
            branches
                .iter()
                .map(|r| affine_from_repr(r).map_err(IoError::from))
                .collect::<Result<_, _>>()?,
        ),
        AtomRepr::Hinge { a, b } => Atom::Hinge(Affine::new(vec_dim(a)?, *b)?),
        AtomRepr::Abs { a, b } => Atom::Abs(Affine::new(vec_dim(a)?, *b)?),
        AtomRepr::SqHingeSum { branches } => Atom::SqHingeSum(
            branches
                .iter()
                .map(|r| affine_from_repr(r).map_err(IoError::from))
                .collect::<Result<_, _>>()?,
        ),
    })
}

fn expr_to_repr(e: &ConvexExpr) -> ExprRepr {
    ExprRepr {
        terms: e
            .terms()
            .iter()
            .map(|t| TermRepr { weight: t.weight, atom: atom_to_repr(&t.atom) })
            .collect(),
    }
}

fn expr_from_repr(r: &ExprRepr, dim: usize) -> Result<ConvexExpr, IoError> {
    let mut e = ConvexExpr::zero(dim);
    for t in &r.terms {
        e.push(t.weight, atom_from_repr(&t.atom, dim)?)?;
    }
    Ok(e)
}

fn dc_to_repr(f: &DCFunction) -> DcRepr {
    DcRepr { g: expr_to_repr(&f.g), h: expr_to_repr(&f.h) }
}

fn dc_from_repr(r: &DcRepr, dim: usize) -> Result<DCFunction, IoError> {
    Ok(DCFunction::new(expr_from_repr(&r.g, dim)?, expr_from_repr(&r.h, dim)?)?)
}

pub fn problem_to_repr(p: &DCProblem) -> ProblemRepr {
    let set = SetRepr {
        lower: p
            .set
            .lower()
            .iter()
            .map(|&v| if v == f64::NEG_INFINITY { None } else { Some(v) })
            .collect(),
        upper: p
            .set
            .upper()
            .iter()
            .map(|&v| if v == f64::INFINITY { None } else { Some(v) })
            .collect(),
        eq_matrix: p.set.equalities().map(|eq| {
            (0..eq.mat.nrows())
                .map(|i| (0..eq.mat.ncols()).map(|j| eq.mat[(i, j)]).collect())
                .collect()
        }),
        eq_rhs: p.set.equalities().map(|eq| eq.rhs.iter().cloned().collect()),
    };
    ProblemRepr {
        dimension: p.dim,
        objective: dc_to_repr(&p.objective),
        inequalities: p.inequalities.iter().map(dc_to_repr).collect(),
        equalities: p.equalities.iter().map(dc_to_repr).collect(),
        set,
    }
}

pub fn problem_from_repr(r: &ProblemRepr) -> Result<DCProblem, IoError> {
    let dim = r.dimension;
    if dim == 0 {
        return Err(IoError::Invalid("dimension must be positive".into()));
    }
    if r.set.lower.len() != dim || r.set.upper.len() != dim {
        return Err(IoError::Invalid(format!(
            "bounds must have length {dim}, got {}/{}",
            r.set.lower.len(),
            r.set.upper.len()
        )));
    }
    let lower = DVector::from_iterator(
        dim,
        r.set.lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)),
    );
    let upper =
        DVector::from_iterator(dim, r.set.upper.iter().map(|v| v.unwrap_or(f64::INFINITY)));
    let eq = match (&r.set.eq_matrix, &r.set.eq_rhs) {
        (None, None) => None,
        (Some(m), Some(rhs)) => {
            if m.len() != rhs.len() {
                return Err(IoError::Invalid(
                    "eq_matrix and eq_rhs row counts differ".into(),
                ));
            }
            if m.is_empty() {
                None
            } else {
                if m.iter().any(|row| row.len() != dim) {
                    return Err(IoError::Invalid(format!(
                        "eq_matrix rows must have length {dim}"
                    )));
                }
                let mut mat = DMatrix::zeros(m.len(), dim);
                for (i, row) in m.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        mat[(i, j)] = *v;
                    }
                }
                Some(Equalities { mat, rhs: DVector::from_vec(rhs.clone()) })
            }
        }
        _ => {
            return Err(IoError::Invalid(
                "eq_matrix and eq_rhs must be given together".into(),
            ))
        }
    };
    let set = FeasibleSet::from_parts_unchecked(lower, upper, eq);
    let objective = dc_from_repr(&r.objective, dim)?;
    let inequalities = r
        .inequalities
        .iter()
        .map(|f| dc_from_repr(f, dim))
        .collect::<Result<Vec<_>, _>>()?;
    let equalities = r
        .equalities
        .iter()
        .map(|f| dc_from_repr(f, dim))
        .collect::<Result<Vec<_>, _>>()?;
    let p = DCProblem { dim, objective, inequalities, equalities, set };
    let issues = p.validate();
    if !issues.is_empty() {
        let msgs: Vec<String> = issues.iter().map(|v| v.to_string()).collect();
        return Err(IoError::Invalid(msgs.join("; ")));
    }
    Ok(p)
}

pub fn problem_to_json(p: &DCProblem) -> String {
    serde_json::to_string_pretty(&problem_to_repr(p)).expect("serialization cannot fail")
}

pub fn problem_from_json(s: &str) -> Result<DCProblem, IoError> {
    let repr: ProblemRepr = serde_json::from_str(s)?;
    problem_from_repr(&repr)
}

pub fn read_problem(path: &std::path::Path) -> Result<DCProblem, IoError> {
    problem_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_problem(path: &std::path::Path, p: &DCProblem) -> Result<(), IoError> {
    Ok(std::fs::write(path, problem_to_json(p))?)
}

pub fn point_to_json(x: &DVector<f64>) -> String {
    serde_json::to_string_pretty(&PointRepr { x: x.iter().cloned().collect() })
        .expect("serialization cannot fail")
}

pub fn point_from_json(s: &str) -> Result<DVector<f64>, IoError> {
    let repr: PointRepr = serde_json::from_str(s)?;
    Ok(DVector::from_vec(repr.x))
}

pub fn read_point(path: &std::path::Path) -> Result<DVector<f64>, IoError> {
    point_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{toy_eq, toy_ineq};

    #[test]
    fn round_trip_is_lossless() {
        for p in [toy_ineq(), toy_eq()] {
            let s1 = problem_to_json(&p);
            let q = problem_from_json(&s1).unwrap();
            assert_eq!(p, q);
            let s2 = problem_to_json(&q);
            assert_eq!(s1, s2);
        }
    }

    #[test]
    fn missing_dimension_is_a_parse_error() {
        let bad = r#"{"objective": {"g": {"terms": []}, "h": {"terms": []}}}"#;
        assert!(matches!(problem_from_json(bad), Err(IoError::Json(_))));
    }

    #[test]
    fn infinite_bounds_round_trip_as_null() {
        let p = toy_eq();
        let json = problem_to_json(&p);
        let repr: ProblemRepr = serde_json::from_str(&json).unwrap();
        assert!(repr.set.lower.iter().all(|v| v.is_some()));
        // A free problem serializes unbounded coordinates as null.
        let free = DCProblem {
            dim: 1,
            objective: DCFunction::convex(ConvexExpr::zero(1)),
            inequalities: vec![],
            equalities: vec![],
            set: FeasibleSet::free(1),
        };
        let json = problem_to_json(&free);
        assert!(json.contains("null"));
        let back = problem_from_json(&json).unwrap();
        assert_eq!(free, back);
    }
}
