//! Edge and node controllers built around internal models of the exosystem.
//!
//! Every controller receives `v = ν = -z` from the interconnection and adds
//! `ν` to its output as the stabilizing feedthrough.

use nalgebra::{DMatrix, DVector};

use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::optimizer;

const RANGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BregmanMode {
    /// `η̇ = v`, `λ = ∇𝒫⁻¹(η) + v`, no restriction on the input.
    EdgePotential,
    /// `σ̇ = ν`, `λ = ∇𝒫⁻¹(σ) + ν`, with `ν ∈ range(Bᵀ)` enforced.
    DualSigma,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerKind {
    /// `η̇_k = S η_k + M_kᵀ v_k`, `λ_k = M_k η_k + ν_k`, with `M_k` the
    /// `p × q` block of `h` belonging to edge `k`.
    EdgeInternalModel { s: DMatrix<f64>, h: DMatrix<f64>, p: usize },
    /// Scalar-flow specialization for inventories, `h` is `m × q`.
    InventoryRouting { s: DMatrix<f64>, h: DMatrix<f64> },
    /// Node internal models of the optimal dual potentials:
    /// `η̇ = S̄η + H̄ᵀ B Q⁻¹ ν`, `λ = Q⁻¹ Bᵀ H̄ η + ν`, `h` is `n × q`.
    DualNodeLQ {
        s: DMatrix<f64>,
        h: DMatrix<f64>,
        weights: Vec<f64>,
    },
    StaticBregman { cost: CostFunction, mode: BregmanMode },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    incidence: DMatrix<f64>,
    circulation: DMatrix<f64>,
    /// Supply matrix used to locate the optimal dual point for matched starts.
    supply: Option<DMatrix<f64>>,
    graph: Graph,
}

impl ControllerSpec {
    fn build(graph: &Graph, kind: ControllerKind, supply: Option<DMatrix<f64>>) -> Result<Self> {
        let spec = Self {
            kind,
            incidence: graph.incidence(),
            circulation: graph.circulation_projector(),
            supply,
            graph: graph.clone(),
        };
        spec.check_shapes()?;
        Ok(spec)
    }

    pub fn edge_internal_model(graph: &Graph, s: DMatrix<f64>, h: DMatrix<f64>, p: usize) -> Result<Self> {
        Self::build(graph, ControllerKind::EdgeInternalModel { s, h, p }, None)
    }

    pub fn inventory_routing(graph: &Graph, s: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        Self::build(graph, ControllerKind::InventoryRouting { s, h }, None)
    }

    pub fn dual_lq(graph: &Graph, s: DMatrix<f64>, h: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|q| !(q.is_finite() && *q > 0.0)) {
            return Err(Error::InvalidWeights("dual controller weights must be positive".into()));
        }
        Self::build(graph, ControllerKind::DualNodeLQ { s, h, weights }, None)
    }

    pub fn bregman(
        graph: &Graph,
        cost: CostFunction,
        mode: BregmanMode,
        supply: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        Self::build(graph, ControllerKind::StaticBregman { cost, mode }, supply)
    }

    fn check_shapes(&self) -> Result<()> {
        let (n, m) = self.incidence.shape();
        let want = |context, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Dimension {
                    context,
                    expected,
                    got,
                })
            }
        };
        match &self.kind {
            ControllerKind::EdgeInternalModel { s, h, p } => {
                want("internal model S columns", s.nrows(), s.ncols())?;
                want("feedforward H rows", m * p, h.nrows())?;
                want("feedforward H columns", s.nrows(), h.ncols())
            }
            ControllerKind::InventoryRouting { s, h } => {
                want("internal model S columns", s.nrows(), s.ncols())?;
                want("feedforward H rows", m, h.nrows())?;
                want("feedforward H columns", s.nrows(), h.ncols())
            }
            ControllerKind::DualNodeLQ { s, h, weights } => {
                want("internal model S columns", s.nrows(), s.ncols())?;
                want("dual feedforward H rows", n, h.nrows())?;
                want("dual feedforward H columns", s.nrows(), h.ncols())?;
                want("edge weights", m, weights.len())
            }
            ControllerKind::StaticBregman { cost, .. } => {
                if let Some(p) = &self.supply {
                    want("supply matrix rows", n, p.nrows())?;
                }
                want("cost components", m, cost.len())
            }
        }
    }

    /// Per-edge (or per-node) signal dimension `p` of the controller input.
    pub fn output_dim(&self) -> usize {
        match &self.kind {
            ControllerKind::EdgeInternalModel { p, .. } => *p,
            _ => 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.incidence.ncols() * self.output_dim()
    }

    pub fn state_dim(&self) -> usize {
        let (n, m) = self.incidence.shape();
        match &self.kind {
            ControllerKind::EdgeInternalModel { s, .. } | ControllerKind::InventoryRouting { s, .. } => {
                m * s.nrows()
            }
            ControllerKind::DualNodeLQ { s, .. } => n * s.nrows(),
            ControllerKind::StaticBregman { .. } => m,
        }
    }

    /// Internal-model matrix, when the controller carries one.
    pub fn internal_model(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            ControllerKind::EdgeInternalModel { s, .. }
            | ControllerKind::InventoryRouting { s, .. }
            | ControllerKind::DualNodeLQ { s, .. } => Some(s),
            ControllerKind::StaticBregman { .. } => None,
        }
    }

    fn check_io(&self, state: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
        if state.len() != self.state_dim() {
            return Err(Error::Dimension {
                context: "controller state",
                expected: self.state_dim(),
                got: state.len(),
            });
        }
        if v.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "controller input",
                expected: self.input_dim(),
                got: v.len(),
            });
        }
        if let ControllerKind::StaticBregman {
            mode: BregmanMode::DualSigma,
            ..
        } = self.kind
        {
            let off = (&self.circulation * v).norm();
            if off > RANGE_TOL * v.norm().max(1.0) {
                return Err(Error::Interconnection(format!(
                    "input has a circulation component of norm {off:e}, outside range(Bᵀ)"
                )));
            }
        }
        Ok(())
    }

    /// Controller state derivative for input `v`.
    pub fn dynamics(&self, state: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_io(state, v)?;
        Ok(match &self.kind {
            ControllerKind::EdgeInternalModel { s, h, p } => edge_dynamics(s, h, *p, state, v),
            ControllerKind::InventoryRouting { s, h } => edge_dynamics(s, h, 1, state, v),
            ControllerKind::DualNodeLQ { s, h, weights } => {
                let scaled = DVector::from_iterator(v.len(), v.iter().zip(weights).map(|(x, q)| x / q));
                let node_in = &self.incidence * scaled;
                let q = s.nrows();
                let mut out = DVector::zeros(state.len());
                for i in 0..h.nrows() {
                    let eta = state.rows(i * q, q);
                    let d = s * eta + h.row(i).transpose() * node_in[i];
                    out.rows_mut(i * q, q).copy_from(&d);
                }
                out
            }
            ControllerKind::StaticBregman { .. } => v.clone(),
        })
    }

    /// Output without the `ν` feedthrough, `ψ̄(η)`.
    pub fn internal_output(&self, state: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ControllerKind::EdgeInternalModel { h, p, .. } => edge_output(h, *p, state),
            ControllerKind::InventoryRouting { h, .. } => edge_output(h, 1, state),
            ControllerKind::DualNodeLQ { weights, .. } => {
                let zeta = self.dual_potentials(state).expect("dual controller");
                let flow = self.incidence.transpose() * zeta;
                DVector::from_iterator(flow.len(), flow.iter().zip(weights).map(|(x, q)| x / q))
            }
            ControllerKind::StaticBregman { cost, .. } => cost.inv_grad(state),
        }
    }

    /// Node potentials `ζ_i = H_iᵀ η_i` of the dual controller.
    pub fn dual_potentials(&self, state: &DVector<f64>) -> Option<DVector<f64>> {
        let ControllerKind::DualNodeLQ { s, h, .. } = &self.kind else {
            return None;
        };
        let q = s.nrows();
        Some(DVector::from_iterator(
            h.nrows(),
            (0..h.nrows()).map(|i| h.row(i).transpose().dot(&state.rows(i * q, q))),
        ))
    }

    /// Flows `λ = ψ̄(η) + ν`.
    pub fn output(&self, state: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_io(state, v)?;
        Ok(self.internal_output(state) + v)
    }

    /// Incremental storage between a state and a reference state.
    pub fn storage(&self, state: &DVector<f64>, reference: &DVector<f64>) -> f64 {
        match &self.kind {
            ControllerKind::StaticBregman { cost, .. } => cost.bregman_conjugate(state, reference),
            _ => 0.5 * (state - reference).norm_squared(),
        }
    }

    /// `Ẇ - (ψ̄(η) - ψ̄(η'))ᵀ(v - v')` for the linear internal-model variants.
    pub fn passivity_residual(
        &self,
        state: &DVector<f64>,
        state_ref: &DVector<f64>,
        v: &DVector<f64>,
        v_ref: &DVector<f64>,
    ) -> Result<f64> {
        if matches!(self.kind, ControllerKind::StaticBregman { .. }) {
            return Err(Error::UnsupportedVariant(
                "the Bregman controller is passive only with respect to constant inputs".into(),
            ));
        }
        let e = state - state_ref;
        let wdot = e.dot(&(self.dynamics(state, v)? - self.dynamics(state_ref, v_ref)?));
        let dl = self.internal_output(state) - self.internal_output(state_ref);
        Ok(wdot - dl.dot(&(v - v_ref)))
    }

    /// State for which the controller reproduces the steady flow under zero input.
    pub fn init_matched(&self, w0: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, m) = self.incidence.shape();
        let replicate = |count: usize, s: &DMatrix<f64>| -> Result<DVector<f64>> {
            if w0.len() != s.nrows() {
                return Err(Error::Dimension {
                    context: "matched initial disturbance",
                    expected: s.nrows(),
                    got: w0.len(),
                });
            }
            let q = w0.len();
            let mut out = DVector::zeros(count * q);
            for k in 0..count {
                out.rows_mut(k * q, q).copy_from(w0);
            }
            Ok(out)
        };
        match &self.kind {
            ControllerKind::EdgeInternalModel { s, .. } | ControllerKind::InventoryRouting { s, .. } => {
                replicate(m, s)
            }
            ControllerKind::DualNodeLQ { s, .. } => replicate(n, s),
            ControllerKind::StaticBregman { cost, .. } => {
                let supply = self.supply.as_ref().ok_or(Error::RequiresOptimizer)?;
                if supply.ncols() != w0.len() {
                    return Err(Error::Dimension {
                        context: "matched initial disturbance",
                        expected: supply.ncols(),
                        got: w0.len(),
                    });
                }
                let point = optimizer::solve_static(&self.graph, cost, &(supply * w0))?;
                Ok(self.incidence.transpose() * point.potential)
            }
        }
    }
}

fn edge_dynamics(s: &DMatrix<f64>, h: &DMatrix<f64>, p: usize, state: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let q = s.nrows();
    let m = h.nrows() / p;
    let mut out = DVector::zeros(state.len());
    for k in 0..m {
        let eta = state.rows(k * q, q);
        let mk = h.rows(k * p, p);
        let d = s * eta + mk.transpose() * v.rows(k * p, p);
        out.rows_mut(k * q, q).copy_from(&d);
    }
    out
}

fn edge_output(h: &DMatrix<f64>, p: usize, state: &DVector<f64>) -> DVector<f64> {
    let q = h.ncols();
    let m = h.nrows() / p;
    let mut out = DVector::zeros(m * p);
    for k in 0..m {
        let mk = h.rows(k * p, p);
        out.rows_mut(k * p, p).copy_from(&(mk * state.rows(k * q, q)));
    }
    out
}
