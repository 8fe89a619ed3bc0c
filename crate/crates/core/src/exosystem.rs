//! Disturbance generators `ẇ = s(w)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const SKEW_TOL: f64 = 1e-12;
const MONOTONE_TOL: f64 = 1e-12;
const MONOTONE_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum ExosystemKind {
    /// `s(w) = S w` with `S + Sᵀ = 0`.
    LinearSkew(DMatrix<f64>),
    /// `s(w) = ∇Σ(w)` with `Σ(w) = -½ wᵀ M w`, `M` symmetric PSD.
    GradientConcave(DMatrix<f64>),
    Constant { dim: usize },
}

/// Exosystem together with the compact box its initial conditions are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExosystemSpec {
    pub kind: ExosystemKind,
    pub initial_box: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NotSquare { rows: usize, cols: usize },
    NotSkew { max_asymmetry: f64 },
    NotSymmetric { max_asymmetry: f64 },
    NotMonotone { worst: f64 },
    BadBox { coordinate: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotSquare { rows, cols } => write!(f, "S is {rows}x{cols}, not square"),
            Self::NotSkew { max_asymmetry } => {
                write!(f, "S not skew-symmetric: max |S + Sᵀ| = {max_asymmetry:e}")
            }
            Self::NotSymmetric { max_asymmetry } => {
                write!(f, "M not symmetric: max |M - Mᵀ| = {max_asymmetry:e}")
            }
            Self::NotMonotone { worst } => write!(
                f,
                "drift not incrementally monotone: (w-w')ᵀ(s(w)-s(w')) reached {worst:e}"
            ),
            Self::BadBox { coordinate } => {
                write!(f, "initial box coordinate {} has lo > hi or non-finite bound", coordinate + 1)
            }
        }
    }
}

impl ExosystemSpec {
    pub fn skew(s: DMatrix<f64>) -> Self {
        let q = s.nrows();
        Self::with_unit_box(ExosystemKind::LinearSkew(s), q)
    }

    pub fn gradient(m: DMatrix<f64>) -> Self {
        let q = m.nrows();
        Self::with_unit_box(ExosystemKind::GradientConcave(m), q)
    }

    pub fn constant(dim: usize) -> Self {
        Self::with_unit_box(ExosystemKind::Constant { dim }, dim)
    }

    fn with_unit_box(kind: ExosystemKind, q: usize) -> Self {
        Self {
            kind,
            initial_box: vec![(-1.0, 1.0); q],
        }
    }

    pub fn state_dim(&self) -> usize {
        match &self.kind {
            ExosystemKind::LinearSkew(s) => s.nrows(),
            ExosystemKind::GradientConcave(m) => m.nrows(),
            ExosystemKind::Constant { dim } => *dim,
        }
    }

    /// The linear map `w ↦ s(w)`; every built-in variant is linear.
    pub fn generator(&self) -> DMatrix<f64> {
        match &self.kind {
            ExosystemKind::LinearSkew(s) => s.clone(),
            ExosystemKind::GradientConcave(m) => -m,
            ExosystemKind::Constant { dim } => DMatrix::zeros(*dim, *dim),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, ExosystemKind::Constant { .. })
    }

    pub fn drift(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let q = self.state_dim();
        if w.len() != q {
            return Err(Error::Dimension {
                context: "exosystem drift",
                expected: q,
                got: w.len(),
            });
        }
        Ok(match &self.kind {
            ExosystemKind::LinearSkew(s) => s * w,
            ExosystemKind::GradientConcave(m) => -(m * w),
            ExosystemKind::Constant { dim } => DVector::zeros(*dim),
        })
    }

    /// Lists violated structural invariants; empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, &(lo, hi)) in self.initial_box.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                out.push(Violation::BadBox { coordinate: i });
            }
        }
        let m = match &self.kind {
            ExosystemKind::LinearSkew(s) | ExosystemKind::GradientConcave(s) => s,
            ExosystemKind::Constant { .. } => return out,
        };
        if !m.is_square() {
            out.push(Violation::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
            return out;
        }
        match &self.kind {
            ExosystemKind::LinearSkew(s) => {
                let asym = (s + s.transpose()).abs().max();
                if asym > SKEW_TOL {
                    out.push(Violation::NotSkew {
                        max_asymmetry: asym,
                    });
                }
            }
            ExosystemKind::GradientConcave(m) => {
                let asym = (m - m.transpose()).abs().max();
                if asym > SKEW_TOL {
                    out.push(Violation::NotSymmetric {
                        max_asymmetry: asym,
                    });
                }
            }
            ExosystemKind::Constant { .. } => unreachable!(),
        }
        if self.initial_box.len() == self.state_dim() && out.is_empty() {
            let worst = self.monotonicity_worst(0);
            if worst > MONOTONE_TOL {
                out.push(Violation::NotMonotone { worst });
            }
        }
        out
    }

    /// Largest `(w - w')ᵀ(s(w) - s(w'))` over sampled pairs from the initial box.
    pub fn monotonicity_worst(&self, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..MONOTONE_SAMPLES {
            let a = sample_box(&self.initial_box, &mut rng);
            let b = sample_box(&self.initial_box, &mut rng);
            let (Ok(sa), Ok(sb)) = (self.drift(&a), self.drift(&b)) else {
                return f64::INFINITY;
            };
            worst = worst.max((&a - &b).dot(&(sa - sb)));
        }
        worst
    }

    /// Draws `w(0)` uniformly from the initial box with a seeded generator.
    pub fn sample_initial(&self, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_box(&self.initial_box, &mut rng)
    }

    /// `exp(S t) w0` for the skew-linear variant.
    pub fn closed_form(&self, w0: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let ExosystemKind::LinearSkew(s) = &self.kind else {
            return Err(Error::UnsupportedVariant(
                "closed_form is only defined for the skew-linear exosystem".into(),
            ));
        };
        if w0.len() != s.nrows() {
            return Err(Error::Dimension {
                context: "exosystem closed form",
                expected: s.nrows(),
                got: w0.len(),
            });
        }
        Ok((s * t).exp() * w0)
    }
}

pub(crate) fn sample_box(bounds: &[(f64, f64)], rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_iterator(
        bounds.len(),
        bounds.iter().map(|&(lo, hi)| {
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }

    #[test]
    fn drift_examples() {
        let w = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(
            ExosystemSpec::skew(rot()).drift(&w).unwrap(),
            DVector::from_vec(vec![0.0, -1.0])
        );
        assert_eq!(
            ExosystemSpec::constant(2).drift(&w).unwrap(),
            DVector::zeros(2)
        );
        let grad = ExosystemSpec::gradient(DMatrix::identity(2, 2));
        assert_eq!(
            grad.drift(&DVector::from_vec(vec![2.0, -1.0])).unwrap(),
            DVector::from_vec(vec![-2.0, 1.0])
        );
    }

    #[test]
    fn drift_dimension_error() {
        let e = ExosystemSpec::skew(rot()).drift(&DVector::zeros(3));
        assert!(matches!(e, Err(Error::Dimension { expected: 2, got: 3, .. })));
    }

    #[test]
    fn validate_examples() {
        assert!(ExosystemSpec::skew(rot()).validate().is_empty());
        let v = ExosystemSpec::skew(DMatrix::identity(2, 2)).validate();
        assert!(matches!(v[..], [Violation::NotSkew { .. }]));
        assert!(ExosystemSpec::gradient(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]))
            .validate()
            .is_empty());
        // indefinite M breaks concavity
        let v = ExosystemSpec::gradient(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]))
            .validate();
        assert!(matches!(v[..], [Violation::NotMonotone { .. }]));
    }

    #[test]
    fn closed_form_rotation() {
        let exo = ExosystemSpec::skew(rot());
        let w0 = DVector::from_vec(vec![1.0, 0.0]);
        for &t in &[0.0, 0.3, 1.0, 7.5] {
            let w = exo.closed_form(&w0, t).unwrap();
            assert!((w[0] - t.cos()).abs() < 1e-12);
            assert!((w[1] + t.sin()).abs() < 1e-12);
            assert!((w.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(exo.closed_form(&w0, 0.0).unwrap(), w0);
    }

    #[test]
    fn closed_form_unsupported() {
        let r = ExosystemSpec::constant(1).closed_form(&DVector::zeros(1), 1.0);
        assert!(matches!(r, Err(Error::UnsupportedVariant(_))));
    }

    #[test]
    fn sampling_is_deterministic_and_in_box() {
        let mut exo = ExosystemSpec::skew(rot());
        exo.initial_box = vec![(0.0, 1.0), (2.0, 3.0)];
        let a = exo.sample_initial(42);
        assert_eq!(a, exo.sample_initial(42));
        assert!((0.0..1.0).contains(&a[0]) && (2.0..3.0).contains(&a[1]));
    }
}
