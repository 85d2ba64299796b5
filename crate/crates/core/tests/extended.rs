//! Continuation past accumulation times: limit-set estimates, branch
//! seeding, and whole extended runs against closed-form oracles.

use zenosim_core::extend::{
    estimate_omega, prolong, simulate_extended, ExtendConfig, OmegaError,
};
use zenosim_core::system::ScenarioParams;
use zenosim_core::{builtin_scenario, simulate, SimConfig, Termination};
use zenosim_oracles as oracle;

const G: f64 = 9.81;

fn cfg(horizon: f64) -> SimConfig {
    SimConfig {
        horizon,
        ..SimConfig::default()
    }
}

#[test]
fn single_ball_limit_is_the_rest_point() {
    let sys = builtin_scenario("bouncing_ball", &ScenarioParams::default()).unwrap();
    let run = simulate(&sys, &[1.0, 0.0], &cfg(3.0)).unwrap();
    let om = estimate_omega(&run, 1e-3).unwrap();
    assert_eq!(om.period, 1);
    assert_eq!(om.points, vec![vec![0.0, 0.0]]);
    assert!(om.residual <= 1e-3);
}

#[test]
fn sign_flipping_component_yields_two_symmetric_limit_points() {
    let sys = builtin_scenario("example3", &ScenarioParams::default()).unwrap();
    let run = simulate(&sys, &[1.0, 0.0, 1.0], &cfg(8.0)).unwrap();
    let om = estimate_omega(&run, 1e-3).unwrap();
    assert_eq!(om.period, 2);
    assert_eq!(om.points.len(), 2);
    let tau = run.zeno_certificate().unwrap().tau_hat;
    let expected = (-tau).exp();
    assert!((expected - 0.25802f64).abs() < 1e-2);
    for p in &om.points {
        assert_eq!(&p[..2], &[0.0, 0.0]);
        assert!((p[2].abs() - expected).abs() < 1e-2, "x3 = {}", p[2]);
    }
    assert!((om.points[0][2] + om.points[1][2]).abs() < 1e-3, "symmetry");
    assert!(om.points[0][2] < om.points[1][2], "deterministic ordering");
}

#[test]
fn frozen_ball_components_survive_in_the_limit_point() {
    let sys = builtin_scenario("two_balls", &ScenarioParams::default()).unwrap();
    let run = simulate(&sys, &[3.0, 0.0, 1.0, 0.0], &cfg(8.0)).unwrap();
    let om = estimate_omega(&run, 1e-3).unwrap();
    assert_eq!(om.period, 1);
    let p = &om.points[0];
    let tau = oracle::zeno_time(1.0, 0.0, 0.5, G);
    let (h_red, v_red) = oracle::ball_state(3.0, 0.0, 0.5, G, tau);
    assert!((p[0] - h_red).abs() < 1e-2, "red height {}", p[0]);
    assert!((p[1] - v_red).abs() < 1e-2, "red velocity {}", p[1]);
    assert_eq!(&p[2..], &[0.0, 0.0], "fast ball reaches rest exactly");
}

#[test]
fn estimation_requires_an_accumulating_run() {
    let sys = builtin_scenario("bouncing_ball", &ScenarioParams::default()).unwrap();
    let run = simulate(&sys, &[0.0, 0.0], &cfg(1.0)).unwrap();
    assert!(matches!(
        estimate_omega(&run, 1e-3),
        Err(OmegaError::NotZeno)
    ));
}

#[test]
fn prolongation_seeds_start_at_the_accumulation_time() {
    let sys = builtin_scenario("example3", &ScenarioParams::default()).unwrap();
    let run = simulate(&sys, &[1.0, 0.0, 1.0], &cfg(8.0)).unwrap();
    let om = estimate_omega(&run, 1e-3).unwrap();
    let conts = prolong(&sys, &run, &om).unwrap();
    assert_eq!(conts.len(), 2);
    let tau = run.zeno_certificate().unwrap().tau_hat;
    for c in &conts {
        assert_eq!(c.start_time, tau);
        assert_eq!(c.k, 1);
        assert!(c.in_domain);
    }
}

#[test]
fn two_ball_extension_reaches_the_origin_in_two_accumulations() {
    let sys = builtin_scenario("two_balls", &ScenarioParams::default()).unwrap();
    let ext = ExtendConfig {
        max_zeno: 3,
        ..ExtendConfig::default()
    };
    let sol = simulate_extended(&sys, &[3.0, 0.0, 1.0, 0.0], &cfg(8.0), &ext).unwrap();
    assert!(!sol.budget_exceeded);
    assert_eq!(sol.branches.len(), 3);

    let events = sol.zeno_events();
    assert_eq!(events.len(), 2);
    let tau1 = oracle::zeno_time(1.0, 0.0, 0.5, G);
    let tau2 = oracle::zeno_time(3.0, 0.0, 0.5, G);
    assert!((events[0].1 - tau1).abs() < 1e-2);
    assert!((events[1].1 - tau2).abs() < 1e-2);
    assert_eq!((events[0].0, events[1].0), (0, 1));

    // final level rests at the origin and flows to the horizon
    let last = sol.branches.last().unwrap();
    assert_eq!(last.k, 2);
    assert_eq!(last.run.termination, Termination::Horizon);
    assert_eq!(last.run.final_state, vec![0.0, 0.0, 0.0, 0.0]);

    // the aggregated domain chains levels monotonically and reports the
    // number of accumulation events through its third index
    sol.domain.validate().unwrap();
    let (_, _, sup_zeno) = sol.domain.suprema();
    assert_eq!(sup_zeno, 2);
    for k in 0..=1u32 {
        assert!(sol.domain.is_zeno_level(k).unwrap());
    }
    assert!(!sol.domain.is_zeno_level(2).unwrap());
}

#[test]
fn level_zero_equals_the_classical_run_bitwise() {
    let sys = builtin_scenario("two_balls", &ScenarioParams::default()).unwrap();
    let classical = simulate(&sys, &[3.0, 0.0, 1.0, 0.0], &cfg(8.0)).unwrap();
    let sol =
        simulate_extended(&sys, &[3.0, 0.0, 1.0, 0.0], &cfg(8.0), &ExtendConfig::default())
            .unwrap();
    assert_eq!(sol.branches[0].run, classical);
}

#[test]
fn children_start_exactly_at_the_parent_accumulation_time() {
    let sys = builtin_scenario("example3", &ScenarioParams::default()).unwrap();
    let sol =
        simulate_extended(&sys, &[1.0, 0.0, 1.0], &cfg(8.0), &ExtendConfig::default()).unwrap();
    let root_tau = sol.branches[0].run.zeno_certificate().unwrap().tau_hat;
    assert_eq!(sol.branches[0].children.len(), 2);
    for &child in &sol.branches[0].children {
        let branch = &sol.branches[child];
        assert_eq!(branch.run.start_time, root_tau);
        assert_eq!(branch.k, 1);
        sol.path_domain(child).validate().unwrap();
    }
}

#[test]
fn branching_runs_decay_to_the_origin_on_both_branches() {
    let sys = builtin_scenario("example3", &ScenarioParams::default()).unwrap();
    let sol =
        simulate_extended(&sys, &[1.0, 0.0, 1.0], &cfg(9.0), &ExtendConfig::default()).unwrap();
    assert_eq!(sol.branches.len(), 3);
    let leaves: Vec<_> = sol.branches.iter().filter(|b| b.children.is_empty()).collect();
    assert_eq!(leaves.len(), 2);
    for leaf in leaves {
        assert_eq!(leaf.run.termination, Termination::Horizon);
        // x3 decays from +-exp(-tau) for the remaining horizon time
        let tau = sol.branches[0].run.zeno_certificate().unwrap().tau_hat;
        let expected = (-(9.0 - tau)).exp() * (-tau).exp();
        assert!(
            (leaf.run.final_state[2].abs() - expected).abs() < 1e-6,
            "final x3 {}",
            leaf.run.final_state[2]
        );
    }
    // branch count equals the limit-point count at the branching node
    assert_eq!(
        sol.branches[0].omega.as_ref().unwrap().points.len(),
        sol.branches[0].children.len()
    );
}

#[test]
fn resting_start_produces_a_single_level() {
    let sys = builtin_scenario("bouncing_ball", &ScenarioParams::default()).unwrap();
    let sol = simulate_extended(&sys, &[0.0, 0.0], &cfg(2.0), &ExtendConfig::default()).unwrap();
    assert_eq!(sol.branches.len(), 1);
    assert_eq!(sol.branches[0].run.termination, Termination::Horizon);
}

#[test]
fn limit_point_inside_a_closed_jump_set_becomes_an_eventually_discrete_branch() {
    // same ball but with the rest state included in the jump set: the
    // continuation from the limit point jumps in place until the budget
    let spec = zenosim_core::SystemSpec {
        name: "closed_guard_ball".into(),
        dim: 2,
        params: [("lambda".to_string(), 0.5), ("g".to_string(), G)]
            .into_iter()
            .collect(),
        flow_set: "x1 > 0 || (x1 == 0 && x2 >= 0)".into(),
        jump_set: "x1 == 0 && x2 <= 0".into(),
        flow_map: vec!["x2".into(), "-if(x1 == 0 && x2 == 0, 0, g)".into()],
        jump_map: vec!["x1".into(), "-lambda * x2".into()],
    };
    let sys = zenosim_core::load_system(&spec).unwrap();
    let cfg = SimConfig {
        horizon: 3.0,
        max_jumps: 400,
        ..SimConfig::default()
    };
    let sol = simulate_extended(&sys, &[1.0, 0.0], &cfg, &ExtendConfig::default()).unwrap();
    assert_eq!(sol.branches.len(), 2);
    assert!(matches!(
        sol.branches[0].run.termination,
        Termination::Zeno(_)
    ));
    let cont = &sol.branches[1];
    assert_eq!(cont.run.termination, Termination::MaxJumps);
    assert_eq!(cont.run.jumps.len(), 400);
    // all budgeted jumps happen at the frozen accumulation time
    assert_eq!(cont.run.final_time, cont.run.start_time);
}

#[test]
fn limit_point_outside_both_sets_is_a_terminal_deadlock_branch() {
    // the rest state is excluded from both sets (strict inequality in the
    // flow condition), so the accumulating run's limit point admits no
    // continuation and the branch is recorded as a deadlock
    let spec = zenosim_core::SystemSpec {
        name: "punctured_ball".into(),
        dim: 2,
        params: [("lambda".to_string(), 0.5), ("g".to_string(), G)]
            .into_iter()
            .collect(),
        flow_set: "x1 > 0 || (x1 == 0 && x2 > 0)".into(),
        jump_set: "x1 == 0 && x2 < 0".into(),
        flow_map: vec!["x2".into(), "-g".into()],
        jump_map: vec!["x1".into(), "-lambda * x2".into()],
    };
    let sys = zenosim_core::load_system(&spec).unwrap();
    let sol = simulate_extended(&sys, &[1.0, 0.0], &cfg(3.0), &ExtendConfig::default()).unwrap();
    assert_eq!(sol.branches.len(), 2);
    assert!(matches!(
        sol.branches[0].run.termination,
        Termination::Zeno(_)
    ));
    let stub = &sol.branches[1];
    assert!(matches!(stub.run.termination, Termination::Deadlock { .. }));
    assert_eq!(stub.run.final_state, vec![0.0, 0.0]);
    assert!(stub.run.jumps.is_empty());
    assert_eq!(
        stub.run.start_time,
        sol.branches[0].run.zeno_certificate().unwrap().tau_hat
    );
}

#[test]
fn branch_budget_is_reported_with_a_partial_tree() {
    let sys = builtin_scenario("example3", &ScenarioParams::default()).unwrap();
    let ext = ExtendConfig {
        branch_budget: 2,
        ..ExtendConfig::default()
    };
    let sol = simulate_extended(&sys, &[1.0, 0.0, 1.0], &cfg(8.0), &ext).unwrap();
    assert!(sol.budget_exceeded);
    assert_eq!(sol.branches.len(), 2);
}
