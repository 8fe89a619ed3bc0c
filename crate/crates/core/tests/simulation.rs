use imflow::controller::ControllerSpec;
use imflow::exosystem::ExosystemSpec;
use imflow::graph::Graph;
use imflow::plant::{LinearNode, PlantSpec};
use imflow::regulator;
use imflow::sim::{ClosedLoop, InitMode, RunConfig};
use imflow::table;
use imflow::Scenario;
use nalgebra::{DMatrix, DVector};

fn rot() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
}

fn ring_supply() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 1.0, 0.0, -1.0])
}

fn routing_loop() -> ClosedLoop {
    let g = Graph::ring(3);
    let h = regulator::compute_h(&g, &[1.0; 3], &ring_supply()).unwrap();
    let c = ControllerSpec::inventory_routing(&g, rot(), h.flow).unwrap();
    ClosedLoop::assemble(
        g,
        ExosystemSpec::skew(rot()),
        PlantSpec::Inventory {
            supply: ring_supply(),
        },
        c,
        None,
    )
    .unwrap()
}

/// Damped oscillators on a 3-path with an edge internal model; all blocks linear.
fn linear_loop() -> ClosedLoop {
    let g = Graph::path(3);
    let node = |p: [f64; 2]| LinearNode {
        a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]),
        g: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        p: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, p[0], p[1]]),
        c: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        q: DMatrix::identity(2, 2),
    };
    let plant = PlantSpec::LinearPassive {
        nodes: vec![node([1.0, 0.0]), node([0.0, 1.0]), node([-1.0, -1.0])],
    };
    let data = plant.linear_data().unwrap();
    let sol = regulator::solve_sylvester(&data, &rot(), &g, 1).unwrap();
    let c = ControllerSpec::edge_internal_model(&g, rot(), sol.h, 1).unwrap();
    ClosedLoop::assemble(g, ExosystemSpec::skew(rot()), plant, c, None).unwrap()
}

#[test]
fn rk4_matches_matrix_exponential_on_linear_loop() {
    let cl = linear_loop();
    let n = cl.state_dim();
    let a = DMatrix::from_fn(n, n, |_, _| 0.0);
    let a = (0..n).fold(a, |mut a, j| {
        let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
        a.set_column(j, &cl.vector_field(&e).unwrap());
        a
    });
    let init = cl
        .initial_state(
            DVector::from_vec(vec![1.0, -0.5]),
            DVector::from_vec(vec![0.3, -0.2, 0.1, 0.0, -0.4, 0.5]),
            InitMode::Zero,
        )
        .unwrap();
    let s0 = cl.pack(&init);
    let traj = cl
        .run(
            &init,
            RunConfig {
                dt: 1e-3,
                horizon: 1.0,
                record_every: 1000,
            },
        )
        .unwrap();
    let last = cl.pack(&imflow::sim::InitialState {
        w: traj.w[1].clone(),
        x: traj.x[1].clone(),
        controller: traj.controller_state[1].clone(),
    });
    let exact = a.exp() * s0;
    assert!((last - exact).amax() <= 1e-10);
}

#[test]
fn linear_loop_reaches_agreement_and_dissipates() {
    let cl = linear_loop();
    let init = cl
        .initial_state(
            DVector::from_vec(vec![0.5, 0.5]),
            DVector::from_vec(vec![1.0, 0.0, -1.0, 0.0, 0.5, 0.5]),
            InitMode::Zero,
        )
        .unwrap();
    let traj = cl.run(&init, RunConfig::default()).unwrap();
    assert!(!traj.diverged());
    assert!(*traj.agreement_error.last().unwrap() <= 1e-3);
    let violation = imflow::sim::dissipation_check(&traj).expect("linear reference available");
    assert!(violation <= 1e-4, "{violation}");
}

#[test]
fn identical_inputs_give_bit_identical_trajectories() {
    let cl = routing_loop();
    let init = cl
        .initial_state(
            DVector::from_vec(vec![0.3, -0.7]),
            DVector::from_vec(vec![0.1, 0.9, 0.4]),
            InitMode::Zero,
        )
        .unwrap();
    let cfg = RunConfig {
        dt: 1e-3,
        horizon: 5.0,
        record_every: 100,
    };
    let a = cl.run(&init, cfg).unwrap();
    let b = cl.run(&init, cfg).unwrap();
    // Debug prints every f64 exactly and NaN == NaN, unlike PartialEq
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    assert!(a.gamma_dist.iter().all(|g| g.is_nan()));
}

#[test]
fn matched_start_keeps_lyapunov_constant() {
    let cl = routing_loop();
    let init = cl
        .initial_state(
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.2, 0.6, 0.7]),
            InitMode::Matched,
        )
        .unwrap();
    let traj = cl
        .run(
            &init,
            RunConfig {
                dt: 1e-3,
                horizon: 10.0,
                record_every: 100,
            },
        )
        .unwrap();
    let u0 = traj.lyapunov[0];
    assert!(traj.lyapunov.iter().all(|u| (u - u0).abs() <= 1e-8));
    assert!(traj.agreement_error.iter().all(|&e| e <= 1e-8));
}

#[test]
fn agreement_energy_concentrates_early() {
    let cl = routing_loop();
    let init = cl
        .initial_state(
            DVector::from_vec(vec![0.8, -0.3]),
            DVector::from_vec(vec![0.9, 0.1, 0.5]),
            InitMode::Zero,
        )
        .unwrap();
    let traj = cl.run(&init, RunConfig::default()).unwrap();
    assert!(traj.z_energy.is_finite() && traj.z_energy > 0.0);
    assert!(traj.z_energy_tail <= 0.01 * traj.z_energy);
    assert!(traj.max_state_norm.is_finite());
}

#[test]
fn scenario_csv_round_trip_is_exact() {
    let text = r#"{
        "graph": {"nodes": 3, "edges": [[1,2],[2,3],[3,1]], "weights": [1, 2, 3]},
        "exosystem": {"type": "skew", "S": [[0,1],[-1,0]]},
        "plant": {"type": "inventory", "P": [[1,0],[-1,1],[0,-1]]},
        "controller": {"type": "dual_lq"},
        "sim": {"dt": 0.001, "horizon": 100, "record_every": 1000, "seed": 3}
    }"#;
    let built = Scenario::from_json(text).unwrap().build().unwrap();
    let traj = built.closed_loop.run(&built.initial, built.config).unwrap();
    assert_eq!(traj.len(), 101);

    let mut buf = Vec::new();
    table::write_trajectory(&traj, &mut buf).unwrap();
    let back = table::read_table(buf.as_slice()).unwrap();
    assert_eq!(back.header.len(), 1 + 2 + 3 + 6 + 3 + 4);
    assert_eq!(back.header[3], "x_1");
    assert_eq!(back.rows.len(), 101);
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
    assert!(same(&back.column("t").unwrap(), &traj.times));
    assert!(same(&back.column("agreement_error").unwrap(), &traj.agreement_error));
    assert!(same(&back.column("routing_error").unwrap(), &traj.routing_error));
    assert!(same(&back.column("gamma_dist").unwrap(), &traj.gamma_dist));
    assert!(same(&back.column("lyapunov").unwrap(), &traj.lyapunov));
    assert!(*traj.agreement_error.last().unwrap() <= 1e-3);
}
