//! Closed-form kinematics for a point mass bouncing on the floor with a
//! restitution coefficient, plus a few exact auxiliary solutions.
//!
//! Everything here is derived independently from elementary mechanics and is
//! meant to serve as ground truth in test suites. None of these functions
//! call into the simulator crates.
//!
//! Conventions: height is measured upward from the floor, velocity is
//! positive upward, `g > 0` is the gravitational acceleration.

/// Time for a ball released at `height` with zero velocity to reach the floor.
pub fn first_fall_time(height: f64, g: f64) -> f64 {
    (2.0 * height / g).sqrt()
}

/// Speed at floor impact when starting from `height` with vertical `velocity`.
pub fn impact_speed(height: f64, velocity: f64, g: f64) -> f64 {
    (velocity * velocity + 2.0 * g * height).sqrt()
}

/// Time to reach the floor from `(height, velocity)`; valid for `height >= 0`
/// (the ball may rise first when `velocity > 0`).
pub fn time_to_ground(height: f64, velocity: f64, g: f64) -> f64 {
    (velocity + impact_speed(height, velocity, g)) / g
}

/// Total time until the bounce accumulation point, obtained by summing the
/// geometric series of flight times numerically until the terms vanish at
/// machine precision.
pub fn zeno_time(height: f64, velocity: f64, restitution: f64, g: f64) -> f64 {
    assert!(restitution > 0.0 && restitution < 1.0);
    let mut total = time_to_ground(height, velocity, g);
    let mut speed = restitution * impact_speed(height, velocity, g);
    loop {
        let flight = 2.0 * speed / g;
        if flight < total * 1e-17 {
            return total;
        }
        total += flight;
        speed *= restitution;
    }
}

/// A closed-form variant of the accumulation time that omits the initial
/// descent term: `(b + 2λ/(1-λ)·sqrt(b² + 2ga))/g`. It disagrees with
/// [`zeno_time`] for every `λ != 1`; it is kept so tests can pin down the
/// discrepancy and guard against regressions toward it.
pub fn zeno_time_closed_variant(height: f64, velocity: f64, restitution: f64, g: f64) -> f64 {
    let s = impact_speed(height, velocity, g);
    (velocity + 2.0 * restitution / (1.0 - restitution) * s) / g
}

/// Floor impact times, earliest first, at most `max_count` of them (the
/// sequence accumulates at [`zeno_time`]).
pub fn bounce_times(
    height: f64,
    velocity: f64,
    restitution: f64,
    g: f64,
    max_count: usize,
) -> Vec<f64> {
    let mut times = Vec::with_capacity(max_count);
    let mut t = time_to_ground(height, velocity, g);
    let mut speed = restitution * impact_speed(height, velocity, g);
    while times.len() < max_count {
        times.push(t);
        let flight = 2.0 * speed / g;
        if flight < t * 1e-17 {
            break;
        }
        t += flight;
        speed *= restitution;
    }
    times
}

/// Exact `(height, velocity)` of the bouncing ball at time `t`, piecing the
/// ballistic arcs together across impacts. Past the accumulation time the
/// ball rests at the origin.
pub fn ball_state(height: f64, velocity: f64, restitution: f64, g: f64, t: f64) -> (f64, f64) {
    let t1 = time_to_ground(height, velocity, g);
    if t < t1 {
        return (
            height + velocity * t - 0.5 * g * t * t,
            velocity - g * t,
        );
    }
    let mut arc_start = t1;
    let mut speed = restitution * impact_speed(height, velocity, g);
    loop {
        let flight = 2.0 * speed / g;
        if t < arc_start + flight {
            let dt = t - arc_start;
            return (speed * dt - 0.5 * g * dt * dt, speed - g * dt);
        }
        arc_start += flight;
        speed *= restitution;
        if flight < 1e-16 {
            return (0.0, 0.0);
        }
    }
}

/// Energy bound on the largest distance from the rest point reachable by a
/// trajectory started at distance `r` in the (height, velocity) plane:
/// the total energy `E = g·h0 + v0²/2` caps the height at `E/g` and the
/// speed at `sqrt(2E)`.
pub fn energy_sup_distance(r: f64, g: f64) -> f64 {
    let energy = g * r + 0.5 * r * r;
    let h_max = energy / g;
    let v_max = (2.0 * energy).sqrt();
    (h_max * h_max + v_max * v_max).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: f64 = 9.81;

    #[test]
    fn fall_time_matches_kinematics() {
        let t = first_fall_time(1.0, G);
        assert!((t - 0.451_523_64).abs() < 1e-7);
        assert!((time_to_ground(1.0, 0.0, G) - t).abs() < 1e-15);
    }

    #[test]
    fn zeno_time_reference_values() {
        // height 1, dropped, restitution one half
        let tau = zeno_time(1.0, 0.0, 0.5, G);
        assert!((tau - 1.354_570_9).abs() < 1e-6, "tau = {tau}");
        // height 3 reference used by the interconnection scenarios
        let tau3 = zeno_time(3.0, 0.0, 0.5, G);
        assert!((tau3 - 2.346_186_2).abs() < 1e-6, "tau3 = {tau3}");
    }

    #[test]
    fn closed_variant_disagrees_below_unit_restitution() {
        let tau = zeno_time(1.0, 0.0, 0.5, G);
        let variant = zeno_time_closed_variant(1.0, 0.0, 0.5, G);
        assert!((variant - 0.903_047_3).abs() < 1e-6, "variant = {variant}");
        assert!((tau - variant).abs() > 0.4);
    }

    #[test]
    fn ball_state_is_continuous_across_impacts() {
        let times = bounce_times(1.0, 0.0, 0.5, G, 6);
        for &tb in &times {
            let (before, _) = ball_state(1.0, 0.0, 0.5, G, tb - 1e-9);
            let (after, _) = ball_state(1.0, 0.0, 0.5, G, tb + 1e-9);
            assert!(before.abs() < 1e-7 && after.abs() < 1e-7);
        }
        let (h, v) = ball_state(1.0, 0.0, 0.5, G, 10.0);
        assert_eq!((h, v), (0.0, 0.0));
    }

    #[test]
    fn bounce_times_accumulate_at_zeno_time() {
        let tau = zeno_time(1.0, 0.0, 0.5, G);
        let times = bounce_times(1.0, 0.0, 0.5, G, 60);
        assert!(times.last().unwrap() <= &tau);
        assert!(tau - times.last().unwrap() < 1e-10);
    }
}
