//! Static optimal distribution: minimize `𝒫(λ)` subject to `Bλ + supply = 0`.
//!
//! The main solver works on the dual potentials `ζ` (closed form for
//! quadratic costs, damped Newton otherwise). The projected-gradient oracle
//! works on the primal flow and shares nothing with it beyond the cost
//! evaluation, so the two can check each other.

use nalgebra::{DMatrix, DVector};

use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{self, vinf_norm, PINV_REL_TOL};

const BALANCE_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 200;
const NEWTON_TOL: f64 = 1e-12;

/// An optimal primal/dual pair for a fixed supply.
#[derive(Debug, Clone, PartialEq)]
pub struct KktPoint {
    pub flow: DVector<f64>,
    pub potential: DVector<f64>,
    pub supply: DVector<f64>,
}

fn check_supply(graph: &Graph, supply: &DVector<f64>) -> Result<()> {
    if supply.len() != graph.node_count() {
        return Err(Error::Dimension {
            context: "supply vector",
            expected: graph.node_count(),
            got: supply.len(),
        });
    }
    let total = supply.sum();
    if total.abs() > BALANCE_TOL * vinf_norm(supply).max(1.0) {
        return Err(Error::Unbalanced(total));
    }
    Ok(())
}

fn check_cost(graph: &Graph, cost: &CostFunction) -> Result<()> {
    if cost.len() != graph.edge_count() {
        return Err(Error::Dimension {
            context: "cost components",
            expected: graph.edge_count(),
            got: cost.len(),
        });
    }
    Ok(())
}

/// Solves the static problem through its dual.
pub fn solve_static(graph: &Graph, cost: &CostFunction, supply: &DVector<f64>) -> Result<KktPoint> {
    check_supply(graph, supply)?;
    check_cost(graph, cost)?;
    if !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    let b = graph.incidence();
    let potential = match cost.quadratic_weights() {
        Some(q) => {
            let l_pinv = graph.weighted_laplacian(&q)?.pinv()?;
            -(l_pinv * supply)
        }
        None => dual_newton(graph, &b, cost, supply)?,
    };
    let flow = cost.inv_grad(&(b.transpose() * &potential));
    Ok(KktPoint {
        flow,
        potential,
        supply: supply.clone(),
    })
}

/// Concave dual function `d(ζ) = -Σ 𝒫*_k((Bᵀζ)_k) - ζᵀ supply`.
pub fn dual_value(graph: &Graph, cost: &CostFunction, potential: &DVector<f64>, supply: &DVector<f64>) -> f64 {
    let sigma = graph.incidence().transpose() * potential;
    -cost.conjugate(&sigma) - potential.dot(supply)
}

fn dual_newton(
    graph: &Graph,
    b: &DMatrix<f64>,
    cost: &CostFunction,
    supply: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = graph.node_count();
    let bt = b.transpose();
    let ones = DMatrix::from_element(n, n, 1.0 / n as f64);
    let scale = vinf_norm(supply).max(1.0);

    // warm start from the quadratic part of the cost
    let curv: Vec<f64> = cost.edges.iter().map(|e| e.min_curvature()).collect();
    let mut zeta = -(graph.weighted_laplacian(&curv)?.pinv()? * supply);

    let residual = |z: &DVector<f64>| b * cost.inv_grad(&(&bt * z)) + supply;
    let mut g = residual(&zeta);
    for _ in 0..NEWTON_MAX_ITER {
        if vinf_norm(&g) <= NEWTON_TOL * scale {
            return Ok(zeta);
        }
        let lambda = cost.inv_grad(&(&bt * &zeta));
        let inv_curv = cost.hess_diag(&lambda).map(|h| 1.0 / h);
        // B diag(1/𝒫'') Bᵀ is singular along 𝟙; the rank-one term fixes 𝟙ᵀΔ = 0
        let jac = b * DMatrix::from_diagonal(&inv_curv) * &bt + &ones;
        let step = match jac.clone().cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -(jac.lu().solve(&g).ok_or(Error::Convergence {
                method: "dual Newton",
                iterations: 0,
                residual: vinf_norm(&g),
            })?),
        };
        let d0 = dual_value(graph, cost, &zeta, supply);
        let slope = g.dot(&(-&step)).abs();
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 {
            let cand = &zeta + &step * t;
            let g_new = residual(&cand);
            let d1 = dual_value(graph, cost, &cand, supply);
            if d1 >= d0 + 1e-4 * t * slope || g_new.norm() < g.norm() {
                accepted = Some((cand, g_new));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, g_new)) = accepted else {
            break;
        };
        let mean = cand.mean();
        zeta = cand.add_scalar(-mean);
        g = g_new;
    }
    if vinf_norm(&g) <= NEWTON_TOL * scale {
        return Ok(zeta);
    }
    Err(Error::Convergence {
        method: "dual Newton",
        iterations: NEWTON_MAX_ITER,
        residual: vinf_norm(&g),
    })
}

/// Stationarity and feasibility residuals, `(‖∇𝒫(λ) - Bᵀζ‖∞, ‖Bλ + supply‖∞)`.
pub fn kkt_residual(point: &KktPoint, graph: &Graph, cost: &CostFunction) -> (f64, f64) {
    let b = graph.incidence();
    let stationarity = cost.grad(&point.flow) - b.transpose() * &point.potential;
    let feasibility = &b * &point.flow + &point.supply;
    (vinf_norm(&stationarity), vinf_norm(&feasibility))
}

/// Distance-like measure to the set of optimal flow/supply pairs:
/// `‖Bλ + Pw‖ + ‖Π_circ ∇𝒫(λ)‖`.
pub fn gamma_distance(
    flow: &DVector<f64>,
    w: &DVector<f64>,
    graph: &Graph,
    cost: &CostFunction,
    supply_matrix: &DMatrix<f64>,
) -> f64 {
    let feas = graph.incidence() * flow + supply_matrix * w;
    feas.norm() + graph.project_circulation(&cost.grad(flow)).norm()
}

/// `‖B ∇𝒫⁻¹(Bᵀζ) + Pw‖`, zero iff `(ζ, w)` is an optimal dual pair.
pub fn gamma_d_residual(
    potential: &DVector<f64>,
    w: &DVector<f64>,
    graph: &Graph,
    cost: &CostFunction,
    supply_matrix: &DMatrix<f64>,
) -> f64 {
    let b = graph.incidence();
    (&b * cost.inv_grad(&(b.transpose() * potential)) + supply_matrix * w).norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub steps: usize,
    /// Step size; `None` picks `0.1 / max_k 𝒫''_k` over the initial sublevel set.
    pub rate: Option<f64>,
    /// Early exit once the projected gradient is this small.
    pub tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            steps: 100_000,
            rate: None,
            tol: 1e-13,
        }
    }
}

/// Projected gradient descent on the primal flow, started at the
/// minimum-norm feasible flow `λ₀ = -B† supply`.
pub fn oracle_projected_gradient(
    graph: &Graph,
    cost: &CostFunction,
    supply: &DVector<f64>,
    opts: OracleOptions,
) -> Result<DVector<f64>> {
    check_supply(graph, supply)?;
    check_cost(graph, cost)?;
    let b = graph.incidence();
    let b_pinv = linalg::pinv(&b, PINV_REL_TOL);
    let m = graph.edge_count();
    let null_proj = DMatrix::identity(m, m) - &b_pinv * &b;
    let mut flow = -(&b_pinv * supply);

    let rate = match opts.rate {
        Some(r) => r,
        None => {
            // descent keeps iterates in {𝒫 ≤ 𝒫(λ₀)}, where b|λ_k|²/2 ≤ 𝒫(λ₀)
            let p0 = cost.value(&flow);
            let b_min = cost
                .edges
                .iter()
                .map(|e| e.min_curvature())
                .fold(f64::INFINITY, f64::min);
            let bound = vinf_norm(&flow).max((2.0 * p0 / b_min).sqrt());
            let bound_vec = DVector::from_element(m, bound);
            0.1 / vinf_norm(&cost.hess_diag(&bound_vec)).max(f64::MIN_POSITIVE)
        }
    };

    let mut value = cost.value(&flow);
    for step in 0..opts.steps {
        let pg = &null_proj * cost.grad(&flow);
        if vinf_norm(&pg) <= opts.tol {
            break;
        }
        flow -= pg * rate;
        let next = cost.value(&flow);
        if !next.is_finite() || next > value + 1e-12 * value.abs().max(1.0) {
            return Err(Error::Oracle(format!(
                "cost increased from {value:e} to {next:e} at step {step}"
            )));
        }
        value = next;
    }
    Ok(flow)
}
