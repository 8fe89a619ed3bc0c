//! Regulator (Sylvester) equations for linear node dynamics and the
//! feedforward flow maps used by the linear internal-model controllers.
//!
//! The steady input is constrained to the cut space, `Γ = (B ⊗ I_p) H`, since
//! edge controllers can only inject flows through the incidence matrix. The
//! output-agreement rows `(B ⊗ I_p)ᵀ C Π = 0` are redundant on cyclic graphs,
//! so the solver and the rank test use an orthonormal basis of
//! `range(B ⊗ I_p)` in their place; both describe the same constraint.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{self, inf_norm, vec_of, PINV_REL_TOL};
use crate::plant::LinearData;

const RESIDUAL_TOL: f64 = 1e-9;
const RANK_REL_TOL: f64 = 1e-9;
pub const MAX_STATE_DIM: usize = 200;
/// Cap on `(r + m·p)·q`, the unknown count of the vectorized solve.
pub const MAX_UNKNOWNS: usize = 600;

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorSolution {
    /// Steady state map, `x^w = Π w`.
    pub pi: DMatrix<f64>,
    /// Steady input map, `u^w = Γ w`.
    pub gamma: DMatrix<f64>,
    /// Steady flow map, `λ^w = H w`, minimum norm.
    pub h: DMatrix<f64>,
    pub sylvester_residual: f64,
    pub output_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankFeasibility {
    pub feasible: bool,
    pub failing: Vec<Complex<f64>>,
}

/// Feedforward maps from the weighted Laplacian pseudoinverse.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardMaps {
    /// `H_dual = -L_Q† P` (n × q): optimal node potentials `ζ^w = H_dual w`.
    pub dual: DMatrix<f64>,
    /// `H_flow = Q⁻¹ Bᵀ H_dual` (m × q): optimal flows `λ^w = H_flow w`.
    pub flow: DMatrix<f64>,
}

/// Orthonormal basis of `range(B ⊗ I_p)`.
pub fn cut_space_basis(graph: &Graph, p: usize) -> DMatrix<f64> {
    let bp = graph.incidence_lifted(p);
    if bp.ncols() == 0 {
        return DMatrix::zeros(bp.nrows(), 0);
    }
    linalg::svd(&bp, RANK_REL_TOL).u
}

fn check_shapes(data: &LinearData, s: &DMatrix<f64>, graph: &Graph, p: usize) -> Result<()> {
    let r = data.a.nrows();
    let np = graph.node_count() * p;
    let q = s.nrows();
    let checks = [
        ("A columns", r, data.a.ncols()),
        ("G rows", r, data.g.nrows()),
        ("G columns", np, data.g.ncols()),
        ("C rows", np, data.c.nrows()),
        ("C columns", r, data.c.ncols()),
        ("P rows", r, data.p.nrows()),
        ("P columns", q, data.p.ncols()),
        ("S columns", q, s.ncols()),
    ];
    for (context, expected, got) in checks {
        if expected != got {
            return Err(Error::Dimension {
                context,
                expected,
                got,
            });
        }
    }
    if r > MAX_STATE_DIM {
        return Err(Error::UnsupportedVariant(format!(
            "regulator limited to state dimension {MAX_STATE_DIM}, got {r}"
        )));
    }
    Ok(())
}

fn check_dims(data: &LinearData, s: &DMatrix<f64>, graph: &Graph, p: usize) -> Result<()> {
    check_shapes(data, s, graph, p)?;
    let (r, q) = (data.a.nrows(), s.nrows());
    let unknowns = (r + graph.edge_count() * p) * q;
    if unknowns > MAX_UNKNOWNS {
        return Err(Error::UnsupportedVariant(format!(
            "regulator solve limited to {MAX_UNKNOWNS} unknowns, got {unknowns}"
        )));
    }
    Ok(())
}

/// Residuals `(‖ΠS - AΠ - GΓ - P‖∞, ‖(B ⊗ I_p)ᵀ C Π‖∞)` of the regulator equations.
pub fn sylvester_residual(
    data: &LinearData,
    s: &DMatrix<f64>,
    graph: &Graph,
    p: usize,
    pi: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    check_shapes(data, s, graph, p)?;
    let shape = |context, expected: (usize, usize), got: (usize, usize)| {
        if expected == got {
            Ok(())
        } else {
            Err(Error::Dimension {
                context,
                expected: expected.0 * expected.1,
                got: got.0 * got.1,
            })
        }
    };
    shape("Pi entries", (data.a.nrows(), s.nrows()), pi.shape())?;
    shape("Gamma entries", (data.g.ncols(), s.nrows()), gamma.shape())?;
    let r1 = pi * s - &data.a * pi - &data.g * gamma - &data.p;
    let r2 = graph.incidence_lifted(p).transpose() * &data.c * pi;
    Ok((inf_norm(&r1), inf_norm(&r2)))
}

/// Minimum-norm solution `(Π, H)` of
/// `ΠS = AΠ + G(B ⊗ I_p)H + P`, `(B ⊗ I_p)ᵀ C Π = 0`.
pub fn solve_sylvester(
    data: &LinearData,
    s: &DMatrix<f64>,
    graph: &Graph,
    p: usize,
) -> Result<RegulatorSolution> {
    check_dims(data, s, graph, p)?;
    let r = data.a.nrows();
    let q = s.nrows();
    let mp = graph.edge_count() * p;
    let bp = graph.incidence_lifted(p);
    let basis = cut_space_basis(graph, p);
    let iq = DMatrix::identity(q, q);

    // vec(ΠS - AΠ) = (Sᵀ ⊗ I_r - I_q ⊗ A) vec Π
    let sylv = linalg::kron(&s.transpose(), &DMatrix::identity(r, r)) - linalg::kron(&iq, &data.a);
    let flow_in = -linalg::kron(&iq, &(&data.g * &bp));
    let out_rows = linalg::kron(&iq, &(basis.transpose() * &data.c));

    let top = sylv.nrows();
    let bottom = out_rows.nrows();
    let mut sys = DMatrix::zeros(top + bottom, r * q + mp * q);
    sys.view_mut((0, 0), sylv.shape()).copy_from(&sylv);
    sys.view_mut((0, r * q), flow_in.shape()).copy_from(&flow_in);
    sys.view_mut((top, 0), out_rows.shape()).copy_from(&out_rows);
    let mut rhs = DVector::zeros(top + bottom);
    rhs.rows_mut(0, top).copy_from(&vec_of(&data.p));

    let sol = linalg::pinv(&sys, PINV_REL_TOL) * rhs;
    let pi = linalg::unvec(&sol.as_slice()[..r * q], r, q);
    let h = linalg::unvec(&sol.as_slice()[r * q..], mp, q);
    let gamma = &bp * &h;
    let (sylvester_residual, output_residual) = sylvester_residual(data, s, graph, p, &pi, &gamma)?;
    if sylvester_residual > RESIDUAL_TOL || output_residual > RESIDUAL_TOL {
        let check = rank_feasibility(data, s, graph, p)?;
        return Err(Error::Infeasible {
            residual: sylvester_residual.max(output_residual),
            failing: check.failing.iter().map(|z| format!("{z}")).collect(),
        });
    }
    Ok(RegulatorSolution {
        pi,
        gamma,
        h,
        sylvester_residual,
        output_residual,
    })
}

/// State map `Π` for a fixed flow map `H`, or `None` when none exists.
pub fn solve_state_map(
    data: &LinearData,
    s: &DMatrix<f64>,
    graph: &Graph,
    p: usize,
    h: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    check_dims(data, s, graph, p).ok()?;
    let r = data.a.nrows();
    let q = s.nrows();
    let bp = graph.incidence_lifted(p);
    if h.shape() != (bp.ncols(), q) {
        return None;
    }
    let basis = cut_space_basis(graph, p);
    let iq = DMatrix::identity(q, q);
    let sylv = linalg::kron(&s.transpose(), &DMatrix::identity(r, r)) - linalg::kron(&iq, &data.a);
    let out_rows = linalg::kron(&iq, &(basis.transpose() * &data.c));
    let mut sys = DMatrix::zeros(sylv.nrows() + out_rows.nrows(), r * q);
    sys.view_mut((0, 0), sylv.shape()).copy_from(&sylv);
    sys.view_mut((sylv.nrows(), 0), out_rows.shape()).copy_from(&out_rows);
    let mut rhs = DVector::zeros(sys.nrows());
    rhs.rows_mut(0, r * q)
        .copy_from(&vec_of(&(&data.p + &data.g * &bp * h)));
    let sol = linalg::pinv(&sys, PINV_REL_TOL) * rhs;
    let pi = linalg::unvec(sol.as_slice(), r, q);
    let gamma = &bp * h;
    let (r1, r2) = sylvester_residual(data, s, graph, p, &pi, &gamma).ok()?;
    (r1 <= RESIDUAL_TOL && r2 <= RESIDUAL_TOL).then_some(pi)
}

/// Full-row-rank test of `[[A - μI, G], [Eᵀ C, 0]]` at every eigenvalue μ of `S`,
/// with `E` an orthonormal basis of `range(B ⊗ I_p)`.
pub fn rank_feasibility(data: &LinearData, s: &DMatrix<f64>, graph: &Graph, p: usize) -> Result<RankFeasibility> {
    check_shapes(data, s, graph, p)?;
    let r = data.a.nrows();
    let np = data.g.ncols();
    let basis = cut_space_basis(graph, p);
    let ec = basis.transpose() * &data.c;
    let rows = r + ec.nrows();
    let cols = r + np;

    let mut eigs: Vec<Complex<f64>> = Vec::new();
    if s.nrows() > 0 {
        for z in s.complex_eigenvalues().iter() {
            if !eigs.iter().any(|e| (e - z).norm() < 1e-9) {
                eigs.push(*z);
            }
        }
    }

    let mut failing = Vec::new();
    for &mu in &eigs {
        // real embedding [[Re, -Im], [Im, Re]] doubles every singular value
        let mut blk = DMatrix::<f64>::zeros(2 * rows, 2 * cols);
        for i in 0..r {
            for j in 0..r {
                blk[(i, j)] = data.a[(i, j)];
            }
            blk[(i, i)] -= mu.re;
            for j in 0..np {
                blk[(i, r + j)] = data.g[(i, j)];
            }
        }
        for i in 0..ec.nrows() {
            for j in 0..r {
                blk[(r + i, j)] = ec[(i, j)];
            }
        }
        let re = blk.view((0, 0), (rows, cols)).into_owned();
        blk.view_mut((rows, cols), (rows, cols)).copy_from(&re);
        for i in 0..r {
            blk[(i, cols + i)] = mu.im;
            blk[(rows + i, i)] = -mu.im;
        }
        let full = if rows > cols {
            false
        } else if rows == 0 {
            true
        } else {
            let sv = linalg::singular_values(&blk);
            sv[0] > 0.0 && sv[2 * rows - 1] > RANK_REL_TOL * sv[0]
        };
        if !full {
            failing.push(mu);
        }
    }
    Ok(RankFeasibility {
        feasible: failing.is_empty(),
        failing,
    })
}

/// `H_dual = -L_Q† P` and `H_flow = Q⁻¹ Bᵀ H_dual`.
pub fn compute_h(graph: &Graph, weights: &[f64], supply: &DMatrix<f64>) -> Result<FeedforwardMaps> {
    if supply.nrows() != graph.node_count() {
        return Err(Error::Dimension {
            context: "supply matrix rows",
            expected: graph.node_count(),
            got: supply.nrows(),
        });
    }
    for j in 0..supply.ncols() {
        let total = supply.column(j).sum();
        if total.abs() > 1e-10 * supply.column(j).amax().max(1.0) {
            return Err(Error::Unbalanced(total));
        }
    }
    if !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    let l = graph.weighted_laplacian(weights)?;
    let dual = -(l.pinv()? * supply);
    let inv_q = DMatrix::from_diagonal(&DVector::from_iterator(
        weights.len(),
        weights.iter().map(|q| 1.0 / q),
    ));
    let flow = inv_q * graph.incidence().transpose() * &dual;
    Ok(FeedforwardMaps { dual, flow })
}

/// `sup_t ‖B H w(t) + P w(t)‖∞` over `samples + 1` evenly spaced times of `ẇ = S w`.
pub fn verify_steady_state(
    graph: &Graph,
    h_flow: &DMatrix<f64>,
    s: &DMatrix<f64>,
    supply: &DMatrix<f64>,
    w0: &DVector<f64>,
    horizon: f64,
    samples: usize,
) -> f64 {
    let map = graph.incidence() * h_flow + supply;
    let samples = samples.max(1);
    (0..=samples)
        .map(|k| {
            let t = horizon * k as f64 / samples as f64;
            let w = (s * t).exp() * w0;
            (&map * w).amax()
        })
        .fold(0.0, f64::max)
}
