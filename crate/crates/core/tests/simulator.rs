//! Simulator behavior against closed-form kinematics oracles.

use zenosim_core::sim::{apply_jump, detect_zeno, flow_segment, FlowExit};
use zenosim_core::system::ScenarioParams;
use zenosim_core::{builtin_scenario, simulate, SimConfig, SystemData, Termination};
use zenosim_oracles as oracle;

const G: f64 = 9.81;

fn ball(lambda: f64) -> SystemData {
    builtin_scenario(
        "bouncing_ball",
        &ScenarioParams {
            lambda,
            gravity: G,
        },
    )
    .unwrap()
}

fn cfg(horizon: f64) -> SimConfig {
    SimConfig {
        horizon,
        ..SimConfig::default()
    }
}

#[test]
fn first_descent_localizes_the_impact() {
    let sys = ball(0.5);
    let (samples, exit) = flow_segment(&sys, &[1.0, 0.0], 0.0, &cfg(3.0)).unwrap();
    let t_oracle = oracle::first_fall_time(1.0, G);
    let v_oracle = -oracle::impact_speed(1.0, 0.0, G);
    match exit {
        FlowExit::EnteredJumpSet { t, x } => {
            assert!((t - t_oracle).abs() < 1e-6, "t = {t}, oracle {t_oracle}");
            assert!(x[0].abs() <= 1e-8, "guard residue {}", x[0]);
            assert!((x[1] - v_oracle).abs() < 1e-6, "v = {}, oracle {v_oracle}", x[1]);
        }
        other => panic!("expected jump-set entry, got {other:?}"),
    }
    assert_eq!(samples.first().unwrap().0, 0.0);
}

#[test]
fn resting_state_reaches_the_horizon_with_constant_state() {
    let sys = ball(0.5);
    let (samples, exit) = flow_segment(&sys, &[0.0, 0.0], 0.0, &cfg(1.5)).unwrap();
    assert!(matches!(exit, FlowExit::HorizonReached));
    for (_, x) in &samples {
        assert_eq!(x.as_slice(), &[0.0, 0.0]);
    }
}

#[test]
fn exponential_component_integrates_to_machine_accuracy() {
    let sys = builtin_scenario("example3", &ScenarioParams::default()).unwrap();
    let (samples, exit) = flow_segment(&sys, &[0.0, 0.0, 1.0], 0.0, &cfg(1.0)).unwrap();
    assert!(matches!(exit, FlowExit::HorizonReached));
    let (t_end, x_end) = samples.last().unwrap();
    assert!((t_end - 1.0).abs() < 1e-12);
    assert!(
        (x_end[2] - (-1.0f64).exp()).abs() < 1e-6,
        "x3(1) = {}",
        x_end[2]
    );
}

#[test]
fn jump_application_matches_restitution() {
    let sys = ball(0.5);
    let post = apply_jump(&sys, &[0.0, -oracle::impact_speed(1.0, 0.0, G)]).unwrap();
    assert!((post[1] - 0.5 * oracle::impact_speed(1.0, 0.0, G)).abs() < 1e-12);
}

#[test]
fn detector_certifies_single_ball_bounce_times() {
    let times = oracle::bounce_times(1.0, 0.0, 0.5, G, 24);
    let cert = detect_zeno(&times, &SimConfig::default()).expect("certificate");
    assert!((cert.ratio - 0.5).abs() < 1e-9);
    let tau = oracle::zeno_time(1.0, 0.0, 0.5, G);
    assert!((cert.tau_hat - tau).abs() < 1e-2, "tau_hat = {}", cert.tau_hat);
    assert!((cert.tau_hat - 1.35457).abs() < 1e-2);
}

#[test]
fn detector_handles_interleaved_jumps_from_a_second_ball() {
    // joint jump sequence of two balls dropped from 3 (slow) and 1 (fast):
    // the slow ball interjects a single early jump, the trailing window is
    // pure fast-ball and still certifies
    let mut times = oracle::bounce_times(1.0, 0.0, 0.5, G, 18);
    times.extend(
        oracle::bounce_times(3.0, 0.0, 0.5, G, 18)
            .into_iter()
            .filter(|t| *t < oracle::zeno_time(1.0, 0.0, 0.5, G)),
    );
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cert = detect_zeno(&times, &SimConfig::default()).expect("certificate");
    assert!((cert.tau_hat - oracle::zeno_time(1.0, 0.0, 0.5, G)).abs() < 1e-2);
}

#[test]
fn zeno_time_estimates_track_the_recursion_oracle() {
    for lambda in [0.3, 0.5, 0.7] {
        for height in [0.5, 1.0, 3.0] {
            let sys = ball(lambda);
            let run = simulate(&sys, &[height, 0.0], &cfg(8.0)).unwrap();
            let cert = run
                .zeno_certificate()
                .unwrap_or_else(|| panic!("no certificate for lambda={lambda} a={height}"));
            let tau = oracle::zeno_time(height, 0.0, lambda, G);
            assert!(
                (cert.tau_hat - tau).abs() <= 1e-2,
                "lambda={lambda} a={height}: tau_hat={} oracle={tau}",
                cert.tau_hat
            );
        }
    }
}

#[test]
fn single_ball_run_records_many_jumps_before_certifying() {
    let sys = ball(0.5);
    let run = simulate(&sys, &[1.0, 0.0], &cfg(3.0)).unwrap();
    assert!(matches!(run.termination, Termination::Zeno(_)));
    assert!(run.jumps.len() >= 15, "only {} jumps", run.jumps.len());
    let times = run.jump_times();
    assert!(times.windows(2).all(|p| p[1] >= p[0]), "jump times monotone");
}

#[test]
fn flow_samples_follow_the_ballistic_parabola() {
    let sys = ball(0.5);
    let run = simulate(&sys, &[1.0, 0.0], &cfg(3.0)).unwrap();
    for seg in &run.segments {
        if seg.samples.len() < 2 {
            continue;
        }
        let (t0, x0) = &seg.samples[0];
        for (t, x) in &seg.samples {
            let dt = t - t0;
            let h = x0[0] + x0[1] * dt - 0.5 * G * dt * dt;
            let v = x0[1] - G * dt;
            assert!((x[0] - h).abs() < 1e-6, "position residual {}", x[0] - h);
            assert!((x[1] - v).abs() < 1e-6, "velocity residual {}", x[1] - v);
        }
    }
}

#[test]
fn starting_inside_the_jump_set_jumps_at_time_zero() {
    let sys = ball(0.5);
    let run = simulate(&sys, &[0.0, -1.0], &cfg(3.0)).unwrap();
    assert_eq!(run.jumps[0].t, 0.0);
    assert_eq!(run.jumps[0].pre, vec![0.0, -1.0]);
    assert_eq!(run.jumps[0].post, vec![0.0, 0.5]);
    assert!(matches!(run.termination, Termination::Zeno(_)));
}

#[test]
fn two_ball_classical_run_freezes_away_from_the_origin() {
    let sys = builtin_scenario("two_balls", &ScenarioParams::default()).unwrap();
    let run = simulate(&sys, &[3.0, 0.0, 1.0, 0.0], &cfg(8.0)).unwrap();
    let cert = run.zeno_certificate().expect("joint run accumulates");
    let tau_fast = oracle::zeno_time(1.0, 0.0, 0.5, G);
    assert!((cert.tau_hat - tau_fast).abs() < 1e-2);
    // slow-ball components at the accumulation match its ballistic state
    let (h_red, v_red) = oracle::ball_state(3.0, 0.0, 0.5, G, tau_fast);
    assert!((run.final_state[0] - h_red).abs() < 1e-2);
    assert!((run.final_state[1] - v_red).abs() < 1e-2);
    assert!((run.final_state[0].powi(2) + run.final_state[1].powi(2)).sqrt() >= 0.5);
    // the slow ball's own impacts happen at the ballistic times
    let red_times: Vec<f64> = run
        .jumps
        .iter()
        .filter(|e| e.pre[0].abs() <= 1e-8 && e.pre[1] < -1.0 && e.post[1] > 1.0)
        .map(|e| e.t)
        .collect();
    assert!((red_times[0] - 0.78206).abs() < 1e-3, "{red_times:?}");
}

#[test]
fn run_domains_satisfy_the_time_domain_invariants() {
    let sys = builtin_scenario("two_balls", &ScenarioParams::default()).unwrap();
    let run = simulate(&sys, &[3.0, 0.0, 1.0, 0.0], &cfg(8.0)).unwrap();
    run.domain.validate().unwrap();
    let classical = run.domain.project_classical(0).unwrap();
    classical.validate().unwrap();
    assert!(run.domain.is_complete(0).unwrap());
    assert!(run.domain.is_zeno_level(0).unwrap());
    // jump postconditions hold exactly at every recorded event
    let s2_exact = run.jumps.iter().all(|e| {
        let expected = sys.jump(&e.pre).unwrap();
        e.post == expected
    });
    assert!(s2_exact);
}

#[test]
fn horizon_termination_reports_a_complete_but_not_zeno_level() {
    let sys = ball(0.5);
    let run = simulate(&sys, &[0.0, 0.0], &cfg(1.0)).unwrap();
    assert_eq!(run.termination, Termination::Horizon);
    assert!(run.domain.is_complete(0).unwrap());
    assert!(!run.domain.is_zeno_level(0).unwrap());
    let (sup_t, _, _) = run.domain.suprema();
    assert!(sup_t.is_infinite());
}

#[test]
fn max_jumps_exhaustion_is_distinct_from_accumulation() {
    // closed jump set containing the rest state: the continuation jumps in
    // place forever and the budget stop must not masquerade as Zeno
    let spec = zenosim_core::SystemSpec {
        name: "chatter".into(),
        dim: 2,
        params: [("lambda".to_string(), 0.5)].into_iter().collect(),
        flow_set: "x1 > 0 || (x1 == 0 && x2 >= 0)".into(),
        jump_set: "x1 == 0 && x2 <= 0".into(),
        flow_map: vec!["x2".into(), "-9.81".into()],
        jump_map: vec!["x1".into(), "-lambda * x2".into()],
    };
    let sys = zenosim_core::load_system(&spec).unwrap();
    let run = simulate(
        &sys,
        &[0.0, 0.0],
        &SimConfig {
            horizon: 1.0,
            max_jumps: 300,
            ..SimConfig::default()
        },
    )
    .unwrap();
    assert_eq!(run.termination, Termination::MaxJumps);
    assert_eq!(run.jumps.len(), 300);
    assert_eq!(run.final_time, 0.0);
}

#[test]
fn deadlock_is_reported_with_the_stuck_state() {
    // flow set shrinks to nothing reachable: solution leaves both sets
    let spec = zenosim_core::SystemSpec {
        name: "dead".into(),
        dim: 1,
        params: Default::default(),
        flow_set: "x1 < 1".into(),
        jump_set: "false".into(),
        flow_map: vec!["1".into()],
        jump_map: vec!["x1".into()],
    };
    let sys = zenosim_core::load_system(&spec).unwrap();
    let run = simulate(&sys, &[0.0], &cfg(5.0)).unwrap();
    match &run.termination {
        Termination::Deadlock { state } => {
            assert!((state[0] - 1.0).abs() < 1e-6, "stuck at {state:?}")
        }
        other => panic!("expected deadlock, got {other:?}"),
    }
}
