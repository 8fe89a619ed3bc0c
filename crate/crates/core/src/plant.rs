//! Node dynamics and their incremental storage functions.
//!
//! All variants have outputs independent of the disturbance, `y_i = C_i x_i`
//! (`C = I` for inventories). The disturbance `w` is global and enters each
//! node through its block row `P_i`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exosystem::sample_box;
use crate::linalg;

const CERT_TOL: f64 = 1e-10;

/// Block name, actual shape, expected shape.
type ShapeCheck<'a> = (&'a str, (usize, usize), (usize, usize));

/// Built-in concave potentials `F`, given through their gradient `f = ∇F`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConcaveDrift {
    /// `F(x) = -½ xᵀ M x`, `M` symmetric PSD.
    Quadratic(DMatrix<f64>),
    /// `F(x) = -Σ x_j⁴/4`.
    Cubic,
    /// `F(x) = -k Σ ln cosh x_j`, so `∇F = -k tanh(x)`.
    Tanh { gain: f64 },
}

impl ConcaveDrift {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Quadratic(m) => -(m * x),
            Self::Cubic => x.map(|v| -v * v * v),
            Self::Tanh { gain } => x.map(|v| -gain * v.tanh()),
        }
    }

    /// The drift as a matrix when it is linear.
    pub fn linear_part(&self) -> Option<DMatrix<f64>> {
        match self {
            Self::Quadratic(m) => Some(-m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearNode {
    pub a: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Passivity certificate, `AᵀQ + QA ⪯ 0`, `QG = Cᵀ`.
    pub q: DMatrix<f64>,
}

/// `ẋ_i = ∇F_i(x_i) + C_iᵀ u_i + P_i w`, `y_i = C_i x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientNode {
    pub drift: ConcaveDrift,
    pub c: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantSpec {
    /// `ẋ = u + P w`, `y = x`, with `u = Bλ` supplied by the interconnection.
    Inventory { supply: DMatrix<f64> },
    LinearPassive { nodes: Vec<LinearNode> },
    GradientNonlinear { nodes: Vec<GradientNode> },
}

/// Stacked linear data `(A, G, C, P)` used by the regulator equations.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearData {
    pub a: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

impl PlantSpec {
    pub fn node_count(&self) -> usize {
        match self {
            Self::Inventory { supply } => supply.nrows(),
            Self::LinearPassive { nodes } => nodes.len(),
            Self::GradientNonlinear { nodes } => nodes.len(),
        }
    }

    pub fn state_dims(&self) -> Vec<usize> {
        match self {
            Self::Inventory { supply } => vec![1; supply.nrows()],
            Self::LinearPassive { nodes } => nodes.iter().map(|n| n.a.nrows()).collect(),
            Self::GradientNonlinear { nodes } => nodes.iter().map(|n| n.c.ncols()).collect(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dims().iter().sum()
    }

    /// Output (and input) dimension `p` per node.
    pub fn output_dim(&self) -> usize {
        match self {
            Self::Inventory { .. } => 1,
            Self::LinearPassive { nodes } => nodes.first().map_or(1, |n| n.c.nrows()),
            Self::GradientNonlinear { nodes } => nodes.first().map_or(1, |n| n.c.nrows()),
        }
    }

    pub fn disturbance_dim(&self) -> usize {
        match self {
            Self::Inventory { supply } => supply.ncols(),
            Self::LinearPassive { nodes } => nodes.first().map_or(0, |n| n.p.ncols()),
            Self::GradientNonlinear { nodes } => nodes.first().map_or(0, |n| n.p.ncols()),
        }
    }

    pub fn is_inventory(&self) -> bool {
        matches!(self, Self::Inventory { .. })
    }

    /// Stacked disturbance input matrix `P`.
    pub fn supply_matrix(&self) -> DMatrix<f64> {
        match self {
            Self::Inventory { supply } => supply.clone(),
            Self::LinearPassive { nodes } => stack_rows(nodes.iter().map(|n| &n.p)),
            Self::GradientNonlinear { nodes } => stack_rows(nodes.iter().map(|n| &n.p)),
        }
    }

    /// Stacked `(A, G, C, P)` when the node dynamics are linear.
    pub fn linear_data(&self) -> Option<LinearData> {
        match self {
            Self::Inventory { supply } => {
                let n = supply.nrows();
                Some(LinearData {
                    a: DMatrix::zeros(n, n),
                    g: DMatrix::identity(n, n),
                    c: DMatrix::identity(n, n),
                    p: supply.clone(),
                })
            }
            Self::LinearPassive { nodes } => Some(LinearData {
                a: linalg::block_diag(&nodes.iter().map(|n| n.a.clone()).collect::<Vec<_>>()),
                g: linalg::block_diag(&nodes.iter().map(|n| n.g.clone()).collect::<Vec<_>>()),
                c: linalg::block_diag(&nodes.iter().map(|n| n.c.clone()).collect::<Vec<_>>()),
                p: self.supply_matrix(),
            }),
            Self::GradientNonlinear { nodes } => {
                let a = nodes
                    .iter()
                    .map(|n| n.drift.linear_part())
                    .collect::<Option<Vec<_>>>()?;
                Some(LinearData {
                    a: linalg::block_diag(&a),
                    g: linalg::block_diag(
                        &nodes.iter().map(|n| n.c.transpose()).collect::<Vec<_>>(),
                    ),
                    c: linalg::block_diag(&nodes.iter().map(|n| n.c.clone()).collect::<Vec<_>>()),
                    p: self.supply_matrix(),
                })
            }
        }
    }

    fn check_dims(&self, x: &DVector<f64>, u: Option<&DVector<f64>>, w: &DVector<f64>) -> Result<()> {
        let want = [
            ("plant state", self.state_dim(), x.len()),
            ("plant disturbance", self.disturbance_dim(), w.len()),
        ];
        for (context, expected, got) in want {
            if expected != got {
                return Err(Error::Dimension {
                    context,
                    expected,
                    got,
                });
            }
        }
        if let Some(u) = u {
            let expected = self.node_count() * self.output_dim();
            if u.len() != expected {
                return Err(Error::Dimension {
                    context: "plant input",
                    expected,
                    got: u.len(),
                });
            }
        }
        Ok(())
    }

    /// `ẋ = f(x, u, w)` for the stacked plant.
    pub fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dims(x, Some(u), w)?;
        Ok(self.dynamics_unchecked(x, u, w))
    }

    pub(crate) fn dynamics_unchecked(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        match self {
            Self::Inventory { supply } => u + supply * w,
            Self::LinearPassive { nodes } => {
                let p = self.output_dim();
                let mut out = DVector::zeros(x.len());
                let mut off = 0;
                for (i, node) in nodes.iter().enumerate() {
                    let r = node.a.nrows();
                    let xi = x.rows(off, r);
                    let ui = u.rows(i * p, p);
                    let d = &node.a * xi + &node.g * ui + &node.p * w;
                    out.rows_mut(off, r).copy_from(&d);
                    off += r;
                }
                out
            }
            Self::GradientNonlinear { nodes } => {
                let p = self.output_dim();
                let mut out = DVector::zeros(x.len());
                let mut off = 0;
                for (i, node) in nodes.iter().enumerate() {
                    let r = node.c.ncols();
                    let xi = x.rows(off, r).into_owned();
                    let ui = u.rows(i * p, p);
                    let d = node.drift.eval(&xi) + node.c.transpose() * ui + &node.p * w;
                    out.rows_mut(off, r).copy_from(&d);
                    off += r;
                }
                out
            }
        }
    }

    /// Stacked output `y`.
    pub fn output(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dims(x, None, w)?;
        Ok(self.output_unchecked(x))
    }

    pub(crate) fn output_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Inventory { .. } => x.clone(),
            Self::LinearPassive { nodes } => {
                blockwise_output(x, nodes.iter().map(|n| &n.c), self.output_dim())
            }
            Self::GradientNonlinear { nodes } => {
                blockwise_output(x, nodes.iter().map(|n| &n.c), self.output_dim())
            }
        }
    }

    /// `V(x, x')`: `½‖x - x'‖²`, or `½ Σ eᵢᵀ Qᵢ eᵢ` for linear nodes.
    pub fn incremental_storage(&self, x: &DVector<f64>, x_ref: &DVector<f64>) -> f64 {
        let e = x - x_ref;
        match self {
            Self::Inventory { .. } | Self::GradientNonlinear { .. } => 0.5 * e.norm_squared(),
            Self::LinearPassive { nodes } => {
                let mut off = 0;
                let mut v = 0.0;
                for node in nodes {
                    let r = node.q.nrows();
                    let ei = e.rows(off, r);
                    v += 0.5 * ei.dot(&(&node.q * ei));
                    off += r;
                }
                v
            }
        }
    }

    /// `V̇ - (y - y')ᵀ(u - u')` along two solutions driven by the same `w`.
    ///
    /// Non-positive for incrementally passive plants.
    pub fn passivity_rate_check(
        &self,
        x: &DVector<f64>,
        x_ref: &DVector<f64>,
        u: &DVector<f64>,
        u_ref: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<f64> {
        self.check_dims(x, Some(u), w)?;
        self.check_dims(x_ref, Some(u_ref), w)?;
        let e = x - x_ref;
        let du = u - u_ref;
        Ok(match self {
            // V̇ = eᵀ(u - u'), the supply term cancels
            Self::Inventory { .. } => e.dot(&du) - e.dot(&du),
            Self::LinearPassive { nodes } => {
                let p = self.output_dim();
                let mut off = 0;
                let mut total = 0.0;
                for (i, node) in nodes.iter().enumerate() {
                    let r = node.a.nrows();
                    let ei = e.rows(off, r);
                    let dui = du.rows(i * p, p);
                    let vdot = ei.dot(&(&node.q * (&node.a * ei + &node.g * dui)));
                    total += vdot - (&node.c * ei).dot(&dui);
                    off += r;
                }
                total
            }
            Self::GradientNonlinear { nodes } => {
                let p = self.output_dim();
                let mut off = 0;
                let mut total = 0.0;
                for (i, node) in nodes.iter().enumerate() {
                    let r = node.c.ncols();
                    let xi = x.rows(off, r).into_owned();
                    let xr = x_ref.rows(off, r).into_owned();
                    let ei = e.rows(off, r);
                    let dui = du.rows(i * p, p);
                    let df = node.drift.eval(&xi) - node.drift.eval(&xr);
                    let vdot = ei.dot(&(df + node.c.transpose() * dui));
                    total += vdot - (&node.c * ei).dot(&dui);
                    off += r;
                }
                total
            }
        })
    }

    /// First block whose shape disagrees with the first node's `p` and `q`.
    pub fn shape_error(&self) -> Option<String> {
        let (p, q) = (self.output_dim(), self.disturbance_dim());
        let check = |i: usize, shapes: &[ShapeCheck]| {
            shapes.iter().find(|(_, got, want)| got != want).map(|(name, got, want)| {
                format!(
                    "node {}: {name} is {}x{}, expected {}x{}",
                    i + 1,
                    got.0,
                    got.1,
                    want.0,
                    want.1
                )
            })
        };
        match self {
            Self::Inventory { .. } => None,
            Self::LinearPassive { nodes } => nodes.iter().enumerate().find_map(|(i, n)| {
                let r = n.a.nrows();
                check(
                    i,
                    &[
                        ("A", n.a.shape(), (r, r)),
                        ("G", n.g.shape(), (r, p)),
                        ("P", n.p.shape(), (r, q)),
                        ("C", n.c.shape(), (p, r)),
                        ("Q", n.q.shape(), (r, r)),
                    ],
                )
            }),
            Self::GradientNonlinear { nodes } => nodes.iter().enumerate().find_map(|(i, n)| {
                let r = n.c.ncols();
                let mut shapes = vec![("C", n.c.shape(), (p, r)), ("P", n.p.shape(), (r, q))];
                if let ConcaveDrift::Quadratic(m) = &n.drift {
                    shapes.push(("M", m.shape(), (r, r)));
                }
                check(i, &shapes)
            }),
        }
    }

    /// Checks balance, dimensions and passivity certificates. Empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Self::Inventory { supply } => {
                for j in 0..supply.ncols() {
                    let s: f64 = supply.column(j).sum();
                    if s.abs() > CERT_TOL {
                        out.push(format!(
                            "supply not balanced: column {} of P sums to {s:e}",
                            j + 1
                        ));
                    }
                }
            }
            Self::LinearPassive { nodes } => {
                if nodes.is_empty() {
                    out.push("plant has no nodes".into());
                }
                let (p, q) = (self.output_dim(), self.disturbance_dim());
                for (i, n) in nodes.iter().enumerate() {
                    let r = n.a.nrows();
                    let shapes = [
                        ("A", n.a.shape(), (r, r)),
                        ("G", n.g.shape(), (r, p)),
                        ("P", n.p.shape(), (r, q)),
                        ("C", n.c.shape(), (p, r)),
                        ("Q", n.q.shape(), (r, r)),
                    ];
                    let bad: Vec<_> = shapes.iter().filter(|(_, got, want)| got != want).collect();
                    if !bad.is_empty() {
                        for (name, got, want) in bad {
                            out.push(format!(
                                "node {}: {name} is {}x{}, expected {}x{}",
                                i + 1,
                                got.0,
                                got.1,
                                want.0,
                                want.1
                            ));
                        }
                        continue;
                    }
                    out.extend(linear_certificate(n).into_iter().map(|m| format!("node {}: {m}", i + 1)));
                }
            }
            Self::GradientNonlinear { nodes } => {
                if nodes.is_empty() {
                    out.push("plant has no nodes".into());
                }
                let (p, q) = (self.output_dim(), self.disturbance_dim());
                for (i, n) in nodes.iter().enumerate() {
                    let r = n.c.ncols();
                    if n.c.nrows() != p || n.p.shape() != (r, q) {
                        out.push(format!("node {}: inconsistent C/P dimensions", i + 1));
                        continue;
                    }
                    match &n.drift {
                        ConcaveDrift::Quadratic(m) if m.shape() != (r, r) => {
                            out.push(format!("node {}: M must be {r}x{r}", i + 1));
                            continue;
                        }
                        ConcaveDrift::Tanh { gain } if gain.is_nan() || *gain < 0.0 => {
                            out.push(format!("node {}: tanh gain must be nonnegative", i + 1));
                            continue;
                        }
                        _ => {}
                    }
                    let worst = drift_monotonicity(&n.drift, r, i as u64);
                    if worst > CERT_TOL {
                        out.push(format!(
                            "node {}: drift not concave-gradient, (x-x')ᵀ(f(x)-f(x')) = {worst:e}",
                            i + 1
                        ));
                    }
                }
            }
        }
        out
    }
}

fn linear_certificate(n: &LinearNode) -> Vec<String> {
    let mut out = Vec::new();
    let asym = (&n.q - n.q.transpose()).abs().max();
    if asym > CERT_TOL {
        out.push(format!("Q not symmetric (max asymmetry {asym:e})"));
        return out;
    }
    let min_eig = n.q.clone().symmetric_eigen().eigenvalues.min();
    if min_eig <= 0.0 {
        out.push(format!("Q not positive definite (min eigenvalue {min_eig:e})"));
    }
    let lyap = n.a.transpose() * &n.q + &n.q * &n.a;
    let max_eig = lyap.symmetric_eigen().eigenvalues.max();
    if max_eig > CERT_TOL {
        out.push(format!("AᵀQ + QA not negative semidefinite (max eigenvalue {max_eig:e})"));
    }
    let qg = (&n.q * &n.g - n.c.transpose()).abs().max();
    if qg > CERT_TOL {
        out.push(format!("QG ≠ Cᵀ (max deviation {qg:e})"));
    }
    out
}

fn drift_monotonicity(drift: &ConcaveDrift, dim: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = vec![(-3.0, 3.0); dim];
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let a = sample_box(&bounds, &mut rng);
        let b = sample_box(&bounds, &mut rng);
        worst = worst.max((&a - &b).dot(&(drift.eval(&a) - drift.eval(&b))));
    }
    worst
}

fn stack_rows<'a>(blocks: impl Iterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let blocks: Vec<_> = blocks.collect();
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, 0), b.shape()).copy_from(b);
        off += b.nrows();
    }
    out
}

fn blockwise_output<'a>(
    x: &DVector<f64>,
    cs: impl Iterator<Item = &'a DMatrix<f64>>,
    p: usize,
) -> DVector<f64> {
    let cs: Vec<_> = cs.collect();
    let mut y = DVector::zeros(cs.len() * p);
    let mut off = 0;
    for (i, c) in cs.iter().enumerate() {
        let r = c.ncols();
        y.rows_mut(i * p, p).copy_from(&(*c * x.rows(off, r)));
        off += r;
    }
    y
}
