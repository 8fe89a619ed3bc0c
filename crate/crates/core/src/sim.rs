//! Closed-loop assembly and fixed-step RK4 integration.
//!
//! The combined state is stacked as `[w; x; ξ]`. Wiring:
//! `z = (B ⊗ I_p)ᵀ y`, `v = ν = -z`, `u = (B ⊗ I_p) λ`.

use nalgebra::{DMatrix, DVector};

use crate::controller::{ControllerKind, ControllerSpec};
use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::exosystem::ExosystemSpec;
use crate::graph::Graph;
use crate::optimizer;
use crate::plant::PlantSpec;
use crate::regulator;

/// Steady trajectory `(x^w, ξ^w)` the Lyapunov function `U = V + W` is measured against.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// `x^w = Π w(t) + offset`, `ξ^w` the matched controller state for `w(t)`.
    Linear { pi: DMatrix<f64>, shift_along_ones: bool },
    /// Constant supply: `x^w` constant in agreement, `σ^w = Bᵀ ζ^w`.
    StaticDual,
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub graph: Graph,
    pub exosystem: ExosystemSpec,
    pub plant: PlantSpec,
    pub controller: ControllerSpec,
    /// Cost used for the Γ-distance diagnostic.
    pub cost: Option<CostFunction>,
    pub output_dim: usize,
    lifted: DMatrix<f64>,
    supply: DMatrix<f64>,
    /// Flow map `λ^w = H w` for the routing diagnostic of non-inventory plants.
    steady_flow: Option<DMatrix<f64>>,
    reference: Option<Reference>,
}

/// Instantaneous interconnection signals.
#[derive(Debug, Clone, PartialEq)]
pub struct Signals {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub lambda: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    #[default]
    Zero,
    Matched,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub dt: f64,
    pub horizon: f64,
    pub record_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 100.0,
            record_every: 1000,
        }
    }
}

/// Per-step dissipation statistics, measured at the integrator resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dissipation {
    /// `max_k (U_{k+1} - U_k)/dt + ½(‖z_k‖² + ‖z_{k+1}‖²)`.
    pub max_rate_violation: f64,
    /// `max_k U_{k+1} - U_k`.
    pub max_increase: f64,
    pub initial: f64,
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub record_every: usize,
    pub times: Vec<f64>,
    pub w: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
    pub controller_state: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub agreement_error: Vec<f64>,
    pub routing_error: Vec<f64>,
    pub gamma_dist: Vec<f64>,
    pub lyapunov: Vec<f64>,
    pub max_state_norm: f64,
    /// `∫₀ᵀ ‖z‖² dt` and the same integral over `[T/2, T]`.
    pub z_energy: f64,
    pub z_energy_tail: f64,
    pub dissipation: Option<Dissipation>,
    pub divergence: Option<(f64, String)>,
}

impl Trajectory {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Initial conditions of all three subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub w: DVector<f64>,
    pub x: DVector<f64>,
    pub controller: DVector<f64>,
}

impl ClosedLoop {
    /// Wires the four components, checking every dimension and variant pairing.
    pub fn assemble(
        graph: Graph,
        exosystem: ExosystemSpec,
        plant: PlantSpec,
        controller: ControllerSpec,
        cost: Option<CostFunction>,
    ) -> Result<Self> {
        let n = graph.node_count();
        let m = graph.edge_count();
        let q = exosystem.state_dim();
        let p = plant.output_dim();
        let mismatch = |what: &str| Err(Error::Assembly(what.to_string()));

        if let Some(bad) = plant.shape_error() {
            return mismatch(&format!("plant: {bad}"));
        }
        if plant.node_count() != n {
            return mismatch(&format!(
                "plant/graph: plant has {} nodes, graph has {n}",
                plant.node_count()
            ));
        }
        if plant.disturbance_dim() != q {
            return mismatch(&format!(
                "plant/exosystem: plant expects disturbance of dimension {}, exosystem has {q}",
                plant.disturbance_dim()
            ));
        }
        if controller.output_dim() != p {
            return mismatch(&format!(
                "controller/plant: controller signals have dimension {}, plant outputs {p}",
                controller.output_dim()
            ));
        }
        if controller.input_dim() != m * p {
            return mismatch("controller/graph: controller edge count differs from graph");
        }
        if let Some(s) = controller.internal_model() {
            if s.nrows() != q {
                return mismatch(&format!(
                    "controller/exosystem: internal model has dimension {}, exosystem {q}",
                    s.nrows()
                ));
            }
        }
        match &controller.kind {
            ControllerKind::StaticBregman { .. } if !exosystem.is_constant() => {
                return mismatch("controller/exosystem: bregman controller requires a constant exosystem");
            }
            ControllerKind::InventoryRouting { .. }
            | ControllerKind::DualNodeLQ { .. }
            | ControllerKind::StaticBregman { .. }
                if !plant.is_inventory() =>
            {
                return mismatch("controller/plant: this controller drives inventory plants only");
            }
            _ => {}
        }
        if let Some(c) = &cost {
            if c.len() != m {
                return mismatch(&format!("cost/graph: cost has {} components, graph has {m} edges", c.len()));
            }
        }

        let cost = cost.or_else(|| match &controller.kind {
            ControllerKind::DualNodeLQ { weights, .. } => CostFunction::quadratic(weights).ok(),
            ControllerKind::StaticBregman { cost, .. } => Some(cost.clone()),
            _ => None,
        });

        let steady_flow = match &controller.kind {
            ControllerKind::EdgeInternalModel { h, .. } | ControllerKind::InventoryRouting { h, .. } => {
                Some(h.clone())
            }
            ControllerKind::DualNodeLQ { h, weights, .. } => {
                let inv_q = DMatrix::from_diagonal(&DVector::from_iterator(
                    m,
                    weights.iter().map(|q| 1.0 / q),
                ));
                Some(inv_q * graph.incidence().transpose() * h)
            }
            ControllerKind::StaticBregman { .. } => None,
        };

        let reference = match &controller.kind {
            ControllerKind::StaticBregman { .. } => Some(Reference::StaticDual),
            _ => {
                let s_exo = exosystem.generator();
                let copies_exo = controller
                    .internal_model()
                    .is_some_and(|s| (s - &s_exo).amax() <= 1e-12);
                match (copies_exo, plant.linear_data(), &steady_flow) {
                    (true, Some(data), Some(h)) => regulator::solve_state_map(&data, &s_exo, &graph, p, h)
                        .map(|pi| Reference::Linear {
                            pi,
                            shift_along_ones: plant.is_inventory(),
                        }),
                    _ => None,
                }
            }
        };

        Ok(Self {
            lifted: graph.incidence_lifted(p),
            supply: plant.supply_matrix(),
            graph,
            exosystem,
            plant,
            controller,
            cost,
            output_dim: p,
            steady_flow,
            reference,
        })
    }

    pub fn reference(&self) -> Option<&Reference> {
        self.reference.as_ref()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.exosystem.state_dim(),
            self.plant.state_dim(),
            self.controller.state_dim(),
        )
    }

    pub fn state_dim(&self) -> usize {
        let (a, b, c) = self.dims();
        a + b + c
    }

    pub fn pack(&self, init: &InitialState) -> DVector<f64> {
        let (q, r, d) = self.dims();
        let mut s = DVector::zeros(q + r + d);
        s.rows_mut(0, q).copy_from(&init.w);
        s.rows_mut(q, r).copy_from(&init.x);
        s.rows_mut(q + r, d).copy_from(&init.controller);
        s
    }

    pub fn unpack(&self, state: &DVector<f64>) -> InitialState {
        let (q, r, d) = self.dims();
        InitialState {
            w: state.rows(0, q).into_owned(),
            x: state.rows(q, r).into_owned(),
            controller: state.rows(q + r, d).into_owned(),
        }
    }

    /// Builds the initial state. Matched starts place the controller on its
    /// internal-model manifold and the plant on the agreement manifold.
    pub fn initial_state(&self, w0: DVector<f64>, x0: DVector<f64>, mode: InitMode) -> Result<InitialState> {
        let (q, r, d) = self.dims();
        for (context, expected, got) in [("initial w", q, w0.len()), ("initial x", r, x0.len())] {
            if expected != got {
                return Err(Error::Dimension {
                    context,
                    expected,
                    got,
                });
            }
        }
        match mode {
            InitMode::Zero => Ok(InitialState {
                w: w0,
                x: x0,
                controller: DVector::zeros(d),
            }),
            InitMode::Matched => {
                let controller = self.controller.init_matched(&w0)?;
                let x = match self.reference_plant_state(&w0, &x0) {
                    Some(x) => x,
                    None if self.plant.is_inventory() => {
                        DVector::from_element(r, x0.mean())
                    }
                    None => x0,
                };
                Ok(InitialState { w: w0, x, controller })
            }
        }
    }

    fn reference_plant_state(&self, w0: &DVector<f64>, x0: &DVector<f64>) -> Option<DVector<f64>> {
        match self.reference.as_ref()? {
            Reference::Linear { pi, shift_along_ones } => {
                let base = pi * w0;
                Some(if *shift_along_ones {
                    let c = (x0 - &base).mean();
                    base.add_scalar(c)
                } else {
                    base
                })
            }
            Reference::StaticDual => Some(DVector::from_element(x0.len(), x0.mean())),
        }
    }

    /// Output, relative output and flows at a combined state.
    pub fn signals(&self, state: &DVector<f64>) -> Result<Signals> {
        let parts = self.unpack(state);
        let y = self.plant.output_unchecked(&parts.x);
        let z = self.lifted.transpose() * &y;
        let v = -&z;
        let lambda = self.controller.output(&parts.controller, &v)?;
        Ok(Signals { y, z, lambda })
    }

    /// The closed-loop vector field.
    pub fn vector_field(&self, state: &DVector<f64>) -> Result<DVector<f64>> {
        let (q, r, d) = self.dims();
        let parts = self.unpack(state);
        let y = self.plant.output_unchecked(&parts.x);
        let v = -(self.lifted.transpose() * &y);
        let lambda = self.controller.output(&parts.controller, &v)?;
        let u = &self.lifted * lambda;
        let mut out = DVector::zeros(q + r + d);
        out.rows_mut(0, q).copy_from(&self.exosystem.drift(&parts.w)?);
        out.rows_mut(q, r)
            .copy_from(&self.plant.dynamics_unchecked(&parts.x, &u, &parts.w));
        out.rows_mut(q + r, d)
            .copy_from(&self.controller.dynamics(&parts.controller, &v)?);
        Ok(out)
    }

    /// One classical Runge–Kutta step from time `t`.
    pub fn step_rk4(&self, state: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Assembly(format!("step size must be positive, got {dt}")));
        }
        let diverged = |e: Error| Error::Divergence {
            time: t,
            reason: e.to_string(),
        };
        let k1 = self.vector_field(state).map_err(diverged)?;
        let k2 = self.vector_field(&(state + &k1 * (dt / 2.0))).map_err(diverged)?;
        let k3 = self.vector_field(&(state + &k2 * (dt / 2.0))).map_err(diverged)?;
        let k4 = self.vector_field(&(state + &k3 * dt)).map_err(diverged)?;
        let next = state + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: t + dt,
                reason: "non-finite state".into(),
            });
        }
        Ok(next)
    }

    /// Reference state `(x^w, ξ^w)` at disturbance `w`, given the plant offset.
    fn reference_at(&self, w: &DVector<f64>, ctx: &RefContext) -> Option<(DVector<f64>, DVector<f64>)> {
        match (self.reference.as_ref()?, ctx) {
            (Reference::Linear { pi, .. }, RefContext::Linear { offset }) => {
                let x = pi * w + offset;
                let xi = self.controller.init_matched(w).ok()?;
                Some((x, xi))
            }
            (Reference::StaticDual, RefContext::Static { x, sigma }) => Some((x.clone(), sigma.clone())),
            _ => None,
        }
    }

    fn reference_context(&self, init: &InitialState) -> Option<RefContext> {
        match self.reference.as_ref()? {
            Reference::Linear { pi, shift_along_ones } => {
                let base = pi * &init.w;
                let offset = if *shift_along_ones {
                    DVector::from_element(base.len(), (&init.x - &base).mean())
                } else {
                    DVector::zeros(base.len())
                };
                Some(RefContext::Linear { offset })
            }
            Reference::StaticDual => {
                let sigma = self.controller.init_matched(&init.w).ok()?;
                Some(RefContext::Static {
                    x: DVector::from_element(init.x.len(), init.x.mean()),
                    sigma,
                })
            }
        }
    }

    /// Lyapunov function `U = V(x, x^w) + W(ξ, ξ^w)`.
    fn lyapunov(&self, parts: &InitialState, ctx: Option<&RefContext>) -> f64 {
        let Some(ctx) = ctx else {
            return f64::NAN;
        };
        match self.reference_at(&parts.w, ctx) {
            Some((xr, xir)) => {
                self.plant.incremental_storage(&parts.x, &xr) + self.controller.storage(&parts.controller, &xir)
            }
            None => f64::NAN,
        }
    }

    fn routing_error(&self, w: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        if self.plant.is_inventory() {
            return (&self.lifted * lambda + &self.supply * w).norm();
        }
        match &self.steady_flow {
            Some(h) => (&self.lifted * (lambda - h * w)).norm(),
            None => f64::NAN,
        }
    }

    fn gamma_dist(&self, w: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        match &self.cost {
            Some(cost) if self.plant.is_inventory() => {
                optimizer::gamma_distance(lambda, w, &self.graph, cost, &self.supply)
            }
            _ => f64::NAN,
        }
    }

    /// Integrates over `[0, horizon]`, recording every `record_every`-th step
    /// and the final one. Divergence stops the run and is flagged.
    pub fn run(&self, init: &InitialState, cfg: RunConfig) -> Result<Trajectory> {
        if !(cfg.dt > 0.0 && cfg.dt.is_finite() && cfg.horizon >= 0.0 && cfg.horizon.is_finite()) {
            return Err(Error::Assembly(format!(
                "invalid run configuration dt = {}, horizon = {}",
                cfg.dt, cfg.horizon
            )));
        }
        let record_every = cfg.record_every.max(1);
        let steps = (cfg.horizon / cfg.dt).round() as usize;
        let half = steps / 2;
        let mut state = self.pack(init);
        let ctx = self.reference_context(init);

        let mut traj = Trajectory {
            dt: cfg.dt,
            record_every,
            times: Vec::new(),
            w: Vec::new(),
            x: Vec::new(),
            controller_state: Vec::new(),
            lambda: Vec::new(),
            z: Vec::new(),
            agreement_error: Vec::new(),
            routing_error: Vec::new(),
            gamma_dist: Vec::new(),
            lyapunov: Vec::new(),
            max_state_norm: 0.0,
            z_energy: 0.0,
            z_energy_tail: 0.0,
            dissipation: None,
            divergence: None,
        };

        let mut sig = match self.signals(&state) {
            Ok(s) => s,
            Err(e) => {
                traj.divergence = Some((0.0, e.to_string()));
                return Ok(traj);
            }
        };
        let mut parts = self.unpack(&state);
        let mut u_prev = self.lyapunov(&parts, ctx.as_ref());
        let mut diss = u_prev.is_finite().then_some(Dissipation {
            max_rate_violation: f64::NEG_INFINITY,
            max_increase: f64::NEG_INFINITY,
            initial: u_prev,
            last: u_prev,
        });
        self.record(&mut traj, 0.0, &parts, &sig, u_prev);
        traj.max_state_norm = state.norm();

        for k in 0..steps {
            let t = k as f64 * cfg.dt;
            let next = match self.step_rk4(&state, t, cfg.dt) {
                Ok(s) => s,
                Err(Error::Divergence { time, reason }) => {
                    traj.divergence = Some((time, reason));
                    break;
                }
                Err(e) => {
                    traj.divergence = Some((t, e.to_string()));
                    break;
                }
            };
            let next_sig = match self.signals(&next) {
                Ok(s) => s,
                Err(e) => {
                    traj.divergence = Some((t + cfg.dt, e.to_string()));
                    break;
                }
            };
            let zz0 = sig.z.norm_squared();
            let zz1 = next_sig.z.norm_squared();
            let energy = 0.5 * (zz0 + zz1) * cfg.dt;
            traj.z_energy += energy;
            if k >= half {
                traj.z_energy_tail += energy;
            }
            parts = self.unpack(&next);
            let u_next = self.lyapunov(&parts, ctx.as_ref());
            if let Some(d) = diss.as_mut() {
                let rate = (u_next - u_prev) / cfg.dt + 0.5 * (zz0 + zz1);
                d.max_rate_violation = d.max_rate_violation.max(rate);
                d.max_increase = d.max_increase.max(u_next - u_prev);
                d.last = u_next;
            }
            state = next;
            sig = next_sig;
            u_prev = u_next;
            traj.max_state_norm = traj.max_state_norm.max(state.norm());
            let step = k + 1;
            if step % record_every == 0 || step == steps {
                self.record(&mut traj, step as f64 * cfg.dt, &parts, &sig, u_next);
            }
        }
        traj.dissipation = diss.filter(|d| d.max_rate_violation.is_finite());
        Ok(traj)
    }

    fn record(&self, traj: &mut Trajectory, t: f64, parts: &InitialState, sig: &Signals, lyap: f64) {
        traj.times.push(t);
        traj.agreement_error.push(sig.z.norm());
        traj.routing_error.push(self.routing_error(&parts.w, &sig.lambda));
        traj.gamma_dist.push(self.gamma_dist(&parts.w, &sig.lambda));
        traj.lyapunov.push(lyap);
        traj.w.push(parts.w.clone());
        traj.x.push(parts.x.clone());
        traj.controller_state.push(parts.controller.clone());
        traj.lambda.push(sig.lambda.clone());
        traj.z.push(sig.z.clone());
    }
}

#[derive(Debug, Clone)]
enum RefContext {
    Linear { offset: DVector<f64> },
    Static { x: DVector<f64>, sigma: DVector<f64> },
}

/// Largest discrete violation of `U̇ ≤ -‖z‖²`, or `None` when no steady
/// reference is available for this loop.
pub fn dissipation_check(traj: &Trajectory) -> Option<f64> {
    traj.dissipation.map(|d| d.max_rate_violation)
}
