//! Separable, strictly convex edge costs `𝒫(λ) = Σ_k 𝒫_k(λ_k)`.

use nalgebra::DVector;

use crate::error::{Error, Result};

const INV_TOL: f64 = 1e-15;
const INV_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeCost {
    /// `½ q λ²`
    Quadratic { q: f64 },
    /// `a λ⁴/4 + b λ²/2`
    QuarticQuadratic { a: f64, b: f64 },
}

impl EdgeCost {
    pub fn value(&self, l: f64) -> f64 {
        match *self {
            Self::Quadratic { q } => 0.5 * q * l * l,
            Self::QuarticQuadratic { a, b } => a * l.powi(4) / 4.0 + b * l * l / 2.0,
        }
    }

    pub fn grad(&self, l: f64) -> f64 {
        match *self {
            Self::Quadratic { q } => q * l,
            Self::QuarticQuadratic { a, b } => a * l.powi(3) + b * l,
        }
    }

    pub fn hess(&self, l: f64) -> f64 {
        match *self {
            Self::Quadratic { q } => q,
            Self::QuarticQuadratic { a, b } => 3.0 * a * l * l + b,
        }
    }

    /// Smallest curvature, the strong-convexity modulus.
    pub fn min_curvature(&self) -> f64 {
        match *self {
            Self::Quadratic { q } => q,
            Self::QuarticQuadratic { b, .. } => b,
        }
    }

    /// `(∇𝒫_k)⁻¹(σ)`. Safeguarded Newton on the strictly increasing gradient.
    pub fn inv_grad(&self, sigma: f64) -> f64 {
        let (a, b) = match *self {
            Self::Quadratic { q } => return sigma / q,
            Self::QuarticQuadratic { a, b } => (a, b),
        };
        if a == 0.0 {
            return sigma / b;
        }
        // |∇𝒫(λ)| ≥ b|λ| bounds the root
        let mut lo = -sigma.abs() / b - 1.0;
        let mut hi = sigma.abs() / b + 1.0;
        let mut l = sigma / b;
        for _ in 0..INV_MAX_ITER {
            let r = self.grad(l) - sigma;
            if r == 0.0 {
                return l;
            }
            if r > 0.0 {
                hi = l;
            } else {
                lo = l;
            }
            let mut next = l - r / self.hess(l);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - l).abs() <= INV_TOL * l.abs().max(1.0) {
                return next;
            }
            l = next;
        }
        l
    }

    /// Convex conjugate `𝒫*_k(σ) = σλ - 𝒫_k(λ)` at `λ = (∇𝒫_k)⁻¹(σ)`.
    pub fn conjugate(&self, sigma: f64) -> f64 {
        match *self {
            Self::Quadratic { q } => sigma * sigma / (2.0 * q),
            _ => {
                let l = self.inv_grad(sigma);
                sigma * l - self.value(l)
            }
        }
    }

    fn check(&self) -> Option<String> {
        match *self {
            Self::Quadratic { q } if !(q.is_finite() && q > 0.0) => {
                Some(format!("quadratic weight {q} must be positive"))
            }
            Self::QuarticQuadratic { a, b }
                if !(a.is_finite() && a >= 0.0 && b.is_finite() && b > 0.0) =>
            {
                Some(format!("quartic coefficients a = {a}, b = {b} need a ≥ 0, b > 0"))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostFunction {
    pub edges: Vec<EdgeCost>,
}

impl CostFunction {
    pub fn new(edges: Vec<EdgeCost>) -> Result<Self> {
        for (k, e) in edges.iter().enumerate() {
            if let Some(msg) = e.check() {
                return Err(Error::InvalidWeights(format!("edge {}: {msg}", k + 1)));
            }
        }
        Ok(Self { edges })
    }

    pub fn quadratic(q: &[f64]) -> Result<Self> {
        Self::new(q.iter().map(|&q| EdgeCost::Quadratic { q }).collect())
    }

    pub fn quartic(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                context: "quartic cost coefficients",
                expected: a.len(),
                got: b.len(),
            });
        }
        Self::new(
            a.iter()
                .zip(b)
                .map(|(&a, &b)| EdgeCost::QuarticQuadratic { a, b })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edge weights when every component is quadratic.
    pub fn quadratic_weights(&self) -> Option<Vec<f64>> {
        self.edges
            .iter()
            .map(|e| match *e {
                EdgeCost::Quadratic { q } => Some(q),
                EdgeCost::QuarticQuadratic { a: 0.0, b } => Some(b),
                _ => None,
            })
            .collect()
    }

    pub fn value(&self, l: &DVector<f64>) -> f64 {
        self.edges.iter().zip(l.iter()).map(|(e, &x)| e.value(x)).sum()
    }

    pub fn grad(&self, l: &DVector<f64>) -> DVector<f64> {
        self.map(l, EdgeCost::grad)
    }

    pub fn hess_diag(&self, l: &DVector<f64>) -> DVector<f64> {
        self.map(l, EdgeCost::hess)
    }

    pub fn inv_grad(&self, sigma: &DVector<f64>) -> DVector<f64> {
        self.map(sigma, EdgeCost::inv_grad)
    }

    pub fn conjugate(&self, sigma: &DVector<f64>) -> f64 {
        self.edges
            .iter()
            .zip(sigma.iter())
            .map(|(e, &s)| e.conjugate(s))
            .sum()
    }

    /// `Σ_k 𝒫*_k(σ_k) - 𝒫*_k(σ'_k) - ∇𝒫*_k(σ'_k)(σ_k - σ'_k)`.
    pub fn bregman_conjugate(&self, sigma: &DVector<f64>, sigma_ref: &DVector<f64>) -> f64 {
        self.edges
            .iter()
            .zip(sigma.iter().zip(sigma_ref.iter()))
            .map(|(e, (&s, &r))| e.conjugate(s) - e.conjugate(r) - e.inv_grad(r) * (s - r))
            .sum()
    }

    fn map(&self, x: &DVector<f64>, f: impl Fn(&EdgeCost, f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(
            self.edges.len(),
            self.edges.iter().zip(x.iter()).map(|(e, &v)| f(e, v)),
        )
    }
}
