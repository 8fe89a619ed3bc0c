//! Declarative scenario files (JSON). Node indices are 1-based on disk.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{BregmanMode, ControllerSpec};
use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::exosystem::{sample_box, ExosystemSpec};
use crate::graph::Graph;
use crate::linalg;
use crate::plant::{ConcaveDrift, GradientNode, LinearNode, PlantSpec};
use crate::regulator;
use crate::sim::{ClosedLoop, InitMode, InitialState, RunConfig};

type Rows = Vec<Vec<f64>>;

/// Upper bounds on declared sizes, so hostile files fail fast instead of allocating.
pub const MAX_NODES: usize = 1_000;
pub const MAX_EDGES: usize = 10_000;
pub const MAX_EXO_DIM: usize = 200;
pub const MAX_STEPS: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub graph: GraphSection,
    pub exosystem: ExosystemSection,
    pub plant: PlantSection,
    pub controller: ControllerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSection>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub outputs: OutputsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub nodes: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExosystemType {
    Skew,
    Gradient,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExosystemSection {
    #[serde(rename = "type")]
    pub kind: ExosystemType,
    /// `S` for skew, `M` for gradient (`ẇ = -M w`).
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Rows>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Rows>,
    /// Dimension of a constant exosystem when neither matrix is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Vec<f64>>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantType {
    Inventory,
    Linear,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(rename = "type")]
    pub kind: PlantType,
    /// Stacked supply matrix for inventories.
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Rows>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<NodeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Box `[lo, hi]` applied to every state component when `x0` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_box: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Rows>,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "P")]
    pub p: Rows,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSection {
    Quadratic {
        #[serde(rename = "M")]
        m: Rows,
    },
    Cubic,
    Tanh {
        gain: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerType {
    EdgeIm,
    InventoryRouting,
    DualLq,
    Bregman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSection {
    #[default]
    Zero,
    Matched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BregmanModeSection {
    #[default]
    DualSigma,
    EdgePotential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(rename = "type")]
    pub kind: ControllerType,
    #[serde(default)]
    pub init: InitSection,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Rows>,
    #[serde(default)]
    pub mode: BregmanModeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSection {
    Quadratic { q: Vec<f64> },
    Quartic { a: Vec<f64>, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    100.0
}
fn default_record_every() -> usize {
    1000
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            horizon: default_horizon(),
            record_every: default_record_every(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

/// One row of the validation table.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, failures: Vec<String>) -> Self {
        Self {
            name: name.to_string(),
            passed: failures.is_empty(),
            detail: if failures.is_empty() {
                "ok".to_string()
            } else {
                failures.join("; ")
            },
        }
    }
}

/// A scenario turned into live components, ready to integrate.
#[derive(Debug, Clone)]
pub struct Built {
    pub closed_loop: ClosedLoop,
    pub initial: InitialState,
    pub config: RunConfig,
}

fn matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Scenario(format!("{what}: empty matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Scenario(format!("{what}: non-finite entry")));
    }
    linalg::from_rows(rows).ok_or_else(|| Error::Scenario(format!("{what}: rows have different lengths")))
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn graph(&self) -> Result<Graph> {
        if self.graph.nodes > MAX_NODES || self.graph.edges.len() > MAX_EDGES {
            return Err(Error::Scenario(format!(
                "graph too large: at most {MAX_NODES} nodes and {MAX_EDGES} edges"
            )));
        }
        Graph::from_one_based(self.graph.nodes, &self.graph.edges)
    }

    /// Edge weights `Q`, all ones when absent.
    pub fn weights(&self) -> Vec<f64> {
        self.graph
            .weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.graph.edges.len()])
    }

    pub fn exosystem(&self) -> Result<ExosystemSpec> {
        let e = &self.exosystem;
        let mut spec = match e.kind {
            ExosystemType::Skew => {
                let s = e.s.as_ref().ok_or_else(|| Error::Scenario("exosystem: skew needs S".into()))?;
                ExosystemSpec::skew(matrix(s, "exosystem S")?)
            }
            ExosystemType::Gradient => {
                let m = e.m.as_ref().ok_or_else(|| Error::Scenario("exosystem: gradient needs M".into()))?;
                ExosystemSpec::gradient(matrix(m, "exosystem M")?)
            }
            ExosystemType::Constant => {
                let dim = e
                    .dim
                    .or_else(|| e.w0.as_ref().map(Vec::len))
                    .ok_or_else(|| Error::Scenario("exosystem: constant needs dim or w0".into()))?;
                if dim > MAX_EXO_DIM {
                    return Err(Error::Scenario(format!("exosystem: dimension above {MAX_EXO_DIM}")));
                }
                ExosystemSpec::constant(dim)
            }
        };
        if let Some(b) = &e.bounds {
            spec.initial_box = b.iter().map(|[lo, hi]| (*lo, *hi)).collect();
        }
        Ok(spec)
    }

    pub fn plant(&self) -> Result<PlantSpec> {
        let p = &self.plant;
        match p.kind {
            PlantType::Inventory => {
                let supply = p.p.as_ref().ok_or_else(|| Error::Scenario("plant: inventory needs P".into()))?;
                Ok(PlantSpec::Inventory {
                    supply: matrix(supply, "plant P")?,
                })
            }
            PlantType::Linear => {
                let nodes = p
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(i, nd)| {
                        let field = |m: &Option<Rows>, name: &str| {
                            m.as_ref()
                                .ok_or_else(|| Error::Scenario(format!("plant node {}: missing {name}", i + 1)))
                                .and_then(|r| matrix(r, name))
                        };
                        Ok(LinearNode {
                            a: field(&nd.a, "A")?,
                            g: field(&nd.g, "G")?,
                            p: matrix(&nd.p, "P")?,
                            c: matrix(&nd.c, "C")?,
                            q: field(&nd.q, "Q")?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PlantSpec::LinearPassive { nodes })
            }
            PlantType::Gradient => {
                let nodes = p
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(i, nd)| {
                        let drift = match nd.drift.as_ref() {
                            Some(DriftSection::Quadratic { m }) => ConcaveDrift::Quadratic(matrix(m, "drift M")?),
                            Some(DriftSection::Cubic) => ConcaveDrift::Cubic,
                            Some(DriftSection::Tanh { gain }) => ConcaveDrift::Tanh { gain: *gain },
                            None => return Err(Error::Scenario(format!("plant node {}: missing drift", i + 1))),
                        };
                        Ok(GradientNode {
                            drift,
                            c: matrix(&nd.c, "C")?,
                            p: matrix(&nd.p, "P")?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PlantSpec::GradientNonlinear { nodes })
            }
        }
    }

    pub fn cost(&self) -> Result<Option<CostFunction>> {
        match &self.cost {
            None => Ok(None),
            Some(CostSection::Quadratic { q }) => CostFunction::quadratic(q).map(Some),
            Some(CostSection::Quartic { a, b }) => CostFunction::quartic(a, b).map(Some),
        }
    }

    /// Builds the controller, deriving `H` when the file omits it.
    pub fn controller(&self, graph: &Graph, exo: &ExosystemSpec, plant: &PlantSpec) -> Result<ControllerSpec> {
        let c = &self.controller;
        let s = exo.generator();
        let explicit = c.h.as_ref().map(|h| matrix(h, "controller H")).transpose()?;
        let needs_inventory = || {
            if plant.is_inventory() {
                Ok(())
            } else {
                Err(Error::Assembly(
                    "controller/plant: this controller drives inventory plants only".into(),
                ))
            }
        };
        match c.kind {
            ControllerType::EdgeIm => {
                let h = match explicit {
                    Some(h) => h,
                    None if plant.is_inventory() => {
                        regulator::compute_h(graph, &self.weights(), &plant.supply_matrix())?.flow
                    }
                    None => {
                        let data = plant.linear_data().ok_or_else(|| {
                            Error::Scenario("controller: H must be given for nonlinear plants".into())
                        })?;
                        regulator::solve_sylvester(&data, &s, graph, plant.output_dim())?.h
                    }
                };
                ControllerSpec::edge_internal_model(graph, s, h, plant.output_dim())
            }
            ControllerType::InventoryRouting => {
                needs_inventory()?;
                let h = match explicit {
                    Some(h) => h,
                    None => regulator::compute_h(graph, &self.weights(), &plant.supply_matrix())?.flow,
                };
                ControllerSpec::inventory_routing(graph, s, h)
            }
            ControllerType::DualLq => {
                needs_inventory()?;
                let h = match explicit {
                    Some(h) => h,
                    None => regulator::compute_h(graph, &self.weights(), &plant.supply_matrix())?.dual,
                };
                ControllerSpec::dual_lq(graph, s, h, self.weights())
            }
            ControllerType::Bregman => {
                let cost = match self.cost()? {
                    Some(c) => c,
                    None => CostFunction::quadratic(&self.weights())?,
                };
                let mode = match c.mode {
                    BregmanModeSection::DualSigma => BregmanMode::DualSigma,
                    BregmanModeSection::EdgePotential => BregmanMode::EdgePotential,
                };
                let supply = plant.is_inventory().then(|| plant.supply_matrix());
                ControllerSpec::bregman(graph, cost, mode, supply)
            }
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            dt: self.sim.dt,
            horizon: self.sim.horizon,
            record_every: self.sim.record_every,
        }
    }

    /// Initial `(w0, x0)`: explicit values win, otherwise seeded samples.
    /// `w0` and `x0` draw from one seeded stream in that order.
    pub fn initial_conditions(&self, exo: &ExosystemSpec, plant: &PlantSpec) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.sim.seed);
        let sampled_w = sample_box(&exo.initial_box, &mut rng);
        let w0 = match &self.exosystem.w0 {
            Some(w) => DVector::from_column_slice(w),
            None => sampled_w,
        };
        let [lo, hi] = self.plant.x0_box.unwrap_or([0.0, 1.0]);
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Scenario(format!("plant x0_box [{lo}, {hi}] is not an interval")));
        }
        let sampled_x = sample_box(&vec![(lo, hi); plant.state_dim()], &mut rng);
        let x0 = match &self.plant.x0 {
            Some(x) => DVector::from_column_slice(x),
            None => sampled_x,
        };
        Ok((w0, x0))
    }

    pub fn build(&self) -> Result<Built> {
        let graph = self.graph()?;
        let exo = self.exosystem()?;
        let plant = self.plant()?;
        let controller = self.controller(&graph, &exo, &plant)?;
        let cost = self.cost()?;
        let (w0, x0) = self.initial_conditions(&exo, &plant)?;
        let closed_loop = ClosedLoop::assemble(graph, exo, plant, controller, cost)?;
        let mode = match self.controller.init {
            InitSection::Zero => InitMode::Zero,
            InitSection::Matched => InitMode::Matched,
        };
        let initial = closed_loop.initial_state(w0, x0, mode)?;
        Ok(Built {
            closed_loop,
            initial,
            config: self.run_config(),
        })
    }

    /// Runs every validator and collects a pass/fail table. Stops adding
    /// checks at the first section that cannot even be built.
    pub fn validate(&self) -> Vec<Check> {
        let mut out = Vec::new();
        let graph = match self.graph() {
            Ok(g) => g,
            Err(e) => {
                out.push(Check::new("graph", vec![e.to_string()]));
                return out;
            }
        };
        out.push(Check::new(
            "graph connectivity",
            if graph.is_connected() {
                vec![]
            } else {
                vec!["graph is not connected".into()]
            },
        ));
        let weights = self.weights();
        let mut wf = Vec::new();
        if weights.len() != graph.edge_count() {
            wf.push(format!("{} weights for {} edges", weights.len(), graph.edge_count()));
        }
        if weights.iter().any(|q| !(q.is_finite() && *q > 0.0)) {
            wf.push("weights must be positive".into());
        }
        out.push(Check::new("edge weights", wf));

        let exo = match self.exosystem() {
            Ok(e) => e,
            Err(e) => {
                out.push(Check::new("exosystem", vec![e.to_string()]));
                return out;
            }
        };
        out.push(Check::new(
            "exosystem",
            exo.validate().iter().map(ToString::to_string).collect(),
        ));
        let plant = match self.plant() {
            Ok(p) => p,
            Err(e) => {
                out.push(Check::new("plant", vec![e.to_string()]));
                return out;
            }
        };
        out.push(Check::new("plant", plant.validate()));
        if let Err(e) = self.cost() {
            out.push(Check::new("cost", vec![e.to_string()]));
        }
        if let Some(data) = plant.linear_data() {
            let failures = match regulator::rank_feasibility(&data, &exo.generator(), &graph, plant.output_dim()) {
                Ok(rank) => rank
                    .failing
                    .iter()
                    .map(|mu| format!("rank deficient at eigenvalue {mu}"))
                    .collect(),
                Err(e) => vec![e.to_string()],
            };
            out.push(Check::new("rank feasibility", failures));
        }
        let sim = &self.sim;
        let mut sf = Vec::new();
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            sf.push(format!("dt must be positive, got {}", sim.dt));
        }
        if !(sim.horizon >= 0.0 && sim.horizon.is_finite()) {
            sf.push(format!("horizon must be non-negative, got {}", sim.horizon));
        }
        if sf.is_empty() && sim.horizon / sim.dt > MAX_STEPS {
            sf.push(format!("more than {MAX_STEPS:e} integration steps"));
        }
        if sim.record_every == 0 {
            sf.push("record_every must be at least 1".into());
        }
        out.push(Check::new("sim settings", sf));
        let assembled = self.build().map(|_| ());
        out.push(Check::new(
            "assembly",
            assembled.err().map(|e| e.to_string()).into_iter().collect(),
        ));
        out
    }
}
