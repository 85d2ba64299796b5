//! Numerical stability checks: distance-to-set plumbing, Lyapunov
//! certificate verification on sampled grids, forward-invariance and
//! attractivity sweeps over trajectories, a uniform-bound envelope, and the
//! sequential state-space narrowing harness for certifying asymptotic
//! stability of extended (over-Zeno) solutions.
//!
//! Every verdict here is a consistency check over finite samples and
//! horizons, never a proof: the underlying notions quantify over all
//! solutions and all radii. Reports therefore carry worst margins and
//! witness states.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_expr, EvalCtx, EvalError, Expr, ParseError, Ty};
use crate::extend::{estimate_omega, simulate_extended, ExtendConfig, OmegaError};
use crate::sample::GridSpec;
use crate::sim::{simulate, ClassicalRun, SimConfig, SimError, Termination};
use crate::system::SystemData;

/// Default slack tolerance for Lyapunov inequalities.
pub const DEFAULT_EPS_SLACK: f64 = 1e-9;
/// Default invariance tolerance for forward-invariance sweeps.
pub const DEFAULT_EPS_INV: f64 = 1e-6;

#[derive(Debug, Clone, Error)]
pub enum StabilityError {
    #[error("distance expression returned {distance} < 0 at {state:?}")]
    NegativeDistance { distance: f64, state: Vec<f64> },
    #[error("distance is not positively homogeneous at {state:?}: expected {expected}, got {got}")]
    DistanceNotHomogeneous {
        state: Vec<f64>,
        expected: f64,
        got: f64,
    },
    #[error("{which} is not a valid comparison function: {detail}")]
    InvalidComparisonFn { which: String, detail: String },
    #[error("chain is not nested at stage {stage}: sample {state:?} leaves the enclosing set")]
    ChainNotNested { stage: usize, state: Vec<f64> },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("radii must be positive and strictly increasing")]
    RadiiNotIncreasing,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Omega(#[from] OmegaError),
}

// ---------------------------------------------------------------------------
// Closed sets and comparison functions
// ---------------------------------------------------------------------------

/// A closed target set: a membership predicate plus the Euclidean distance
/// to the set, both user-supplied expressions over the state. `project`
/// optionally maps an arbitrary state onto the set so that measure-zero sets
/// can be sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedSetSpec {
    pub membership: Expr,
    pub distance: Expr,
    pub project: Option<Vec<Expr>>,
}

impl ClosedSetSpec {
    pub fn from_strings(
        membership: &str,
        distance: &str,
        project: Option<&[String]>,
    ) -> Result<Self, StabilityError> {
        let membership = parse_expr(membership)?;
        let distance = parse_expr(distance)?;
        if membership.ty() != Ty::Bool {
            return Err(StabilityError::InvalidSample(
                "set membership must be boolean-valued".into(),
            ));
        }
        if distance.ty() != Ty::Real {
            return Err(StabilityError::InvalidSample(
                "set distance must be real-valued".into(),
            ));
        }
        let project = match project {
            None => None,
            Some(entries) => Some(
                entries
                    .iter()
                    .map(|s| parse_expr(s))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        Ok(ClosedSetSpec {
            membership,
            distance,
            project,
        })
    }

    pub fn member(&self, x: &[f64], sys: &SystemData) -> Result<bool, EvalError> {
        self.membership
            .eval_bool(&EvalCtx::new(x, &sys.params).with_eps(sys.eps_eq))
    }

    /// Euclidean distance from `x` to the set; negative values signal a bad
    /// distance expression and are reported rather than clamped.
    pub fn distance_at(&self, x: &[f64], sys: &SystemData) -> Result<f64, StabilityError> {
        let d = self
            .distance
            .eval_real(&EvalCtx::new(x, &sys.params).with_eps(sys.eps_eq))?;
        if d < -1e-12 {
            return Err(StabilityError::NegativeDistance {
                distance: d,
                state: x.to_vec(),
            });
        }
        Ok(d.max(0.0))
    }

    /// Maps `x` onto the set when a projection is available.
    pub fn project_point(&self, x: &[f64], sys: &SystemData) -> Result<Option<Vec<f64>>, EvalError> {
        match &self.project {
            None => Ok(None),
            Some(exprs) => {
                let ctx = EvalCtx::new(x, &sys.params).with_eps(sys.eps_eq);
                let mut out = Vec::with_capacity(exprs.len());
                for e in exprs {
                    out.push(e.eval_real(&ctx)?);
                }
                Ok(Some(out))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComparisonKind {
    /// Zero at zero, strictly increasing, unbounded.
    ClassKInfinity,
    /// Zero at zero, positive away from zero.
    PositiveDefinite,
}

/// A scalar comparison function; the scalar argument is written `x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonFn {
    pub expr: Expr,
    pub kind: ComparisonKind,
}

impl ComparisonFn {
    pub fn from_string(src: &str, kind: ComparisonKind) -> Result<Self, StabilityError> {
        let expr = parse_expr(src)?;
        if expr.ty() != Ty::Real {
            return Err(StabilityError::InvalidComparisonFn {
                which: src.to_string(),
                detail: "must be real-valued".into(),
            });
        }
        Ok(ComparisonFn { expr, kind })
    }

    pub fn eval(&self, s: f64, sys: &SystemData) -> Result<f64, EvalError> {
        self.expr
            .eval_real(&EvalCtx::new(&[s], &sys.params).with_eps(sys.eps_eq))
    }

    /// Samples `[0, s_max]` and checks the defining properties on the grid:
    /// zero at zero plus strict increase (class-K-infinity) or positivity
    /// (positive definite).
    pub fn validate(&self, which: &str, s_max: f64, sys: &SystemData) -> Result<(), StabilityError> {
        let n = 64;
        let at = |s: f64| self.eval(s, sys);
        let v0 = at(0.0)?;
        if v0.abs() > 1e-12 {
            return Err(StabilityError::InvalidComparisonFn {
                which: which.into(),
                detail: format!("value at 0 is {v0}"),
            });
        }
        let mut prev = v0;
        for i in 1..=n {
            let s = s_max * i as f64 / n as f64;
            let v = at(s)?;
            match self.kind {
                ComparisonKind::ClassKInfinity => {
                    if v <= prev {
                        return Err(StabilityError::InvalidComparisonFn {
                            which: which.into(),
                            detail: format!("not strictly increasing near s = {s}"),
                        });
                    }
                }
                ComparisonKind::PositiveDefinite => {
                    if v <= 0.0 {
                        return Err(StabilityError::InvalidComparisonFn {
                            which: which.into(),
                            detail: format!("non-positive value {v} at s = {s}"),
                        });
                    }
                }
            }
            prev = v;
        }
        Ok(())
    }
}

/// Candidate certificate: `V` with its class-K-infinity sandwich bounds and
/// positive-definite decrease rate. The target set travels separately so one
/// certificate can be checked against restricted systems.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub v: Expr,
    pub alpha1: ComparisonFn,
    pub alpha2: ComparisonFn,
    pub rho: ComparisonFn,
}

// ---------------------------------------------------------------------------
// Lyapunov check
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub slack: f64,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub inequality: String,
    pub state: Vec<f64>,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub pass: bool,
    pub eps_slack: f64,
    pub sandwich_checked: usize,
    pub flow_checked: usize,
    pub jump_checked: usize,
    pub worst_sandwich_lower: Option<Margin>,
    pub worst_sandwich_upper: Option<Margin>,
    pub worst_flow: Option<Margin>,
    pub worst_jump: Option<Margin>,
    pub counterexamples: Vec<Counterexample>,
}

fn update_worst(slot: &mut Option<Margin>, slack: f64, state: &[f64]) {
    let replace = slot.as_ref().map(|m| slack < m.slack).unwrap_or(true);
    if replace {
        *slot = Some(Margin {
            slack,
            state: state.to_vec(),
        });
    }
}

/// Checks the three certificate inequalities on grid samples: the sandwich
/// bound on flow-or-jump-set members and on jump images, the flow decrease
/// `<grad V, f> <= -rho(|x|_A)` on the flow set, and the jump decrease
/// `V(g(x)) - V(x) <= -rho(|x|_A)` on the jump set. Gradients come from
/// symbolic differentiation. Passing means no slack below `-eps_slack`.
pub fn check_lyapunov(
    sys: &SystemData,
    cert: &LyapunovCertificate,
    set: &ClosedSetSpec,
    grid: &GridSpec,
    eps_slack: f64,
    seed: u64,
) -> Result<LyapunovReport, StabilityError> {
    let points = grid.samples(seed);
    check_lyapunov_points(sys, cert, set, &points, eps_slack)
}

/// As [`check_lyapunov`] on an explicit point list (used by the narrowing
/// harness, which projects its grids onto restricted state spaces).
pub fn check_lyapunov_points(
    sys: &SystemData,
    cert: &LyapunovCertificate,
    set: &ClosedSetSpec,
    points: &[Vec<f64>],
    eps_slack: f64,
) -> Result<LyapunovReport, StabilityError> {
    let s_max = points
        .iter()
        .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(1.0f64, f64::max);
    cert.alpha1.validate("alpha1", s_max, sys)?;
    cert.alpha2.validate("alpha2", s_max, sys)?;
    cert.rho.validate("rho", s_max, sys)?;

    let grads = (0..sys.dim)
        .map(|i| crate::expr::differentiate(&cert.v, i))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| StabilityError::InvalidSample("V must be real-valued".into()))?;

    let mut report = LyapunovReport {
        pass: true,
        eps_slack,
        sandwich_checked: 0,
        flow_checked: 0,
        jump_checked: 0,
        worst_sandwich_lower: None,
        worst_sandwich_upper: None,
        worst_flow: None,
        worst_jump: None,
        counterexamples: Vec::new(),
    };

    let record = |report: &mut LyapunovReport, inequality: &str, slack: f64, state: &[f64]| {
        if slack < -eps_slack {
            report.pass = false;
            if report.counterexamples.len() < 10 {
                report.counterexamples.push(Counterexample {
                    inequality: inequality.to_string(),
                    state: state.to_vec(),
                    slack,
                });
            }
        }
    };

    let eval_v = |x: &[f64]| -> Result<f64, StabilityError> {
        Ok(cert
            .v
            .eval_real(&EvalCtx::new(x, &sys.params).with_eps(sys.eps_eq))?)
    };

    let sandwich = |report: &mut LyapunovReport, x: &[f64]| -> Result<(), StabilityError> {
        let d = set.distance_at(x, sys)?;
        let v = eval_v(x)?;
        let lower = v - cert.alpha1.eval(d, sys)?;
        let upper = cert.alpha2.eval(d, sys)? - v;
        report.sandwich_checked += 1;
        update_worst(&mut report.worst_sandwich_lower, lower, x);
        update_worst(&mut report.worst_sandwich_upper, upper, x);
        record(report, "alpha1(|x|_A) <= V(x)", lower, x);
        record(report, "V(x) <= alpha2(|x|_A)", upper, x);
        Ok(())
    };

    for x in points {
        let in_c = sys.in_flow_set(x)?;
        let in_d = sys.in_jump_set(x)?;
        if !(in_c || in_d) {
            continue;
        }
        sandwich(&mut report, x)?;
        let d = set.distance_at(x, sys)?;
        let rho = cert.rho.eval(d, sys)?;
        if in_c {
            let f = sys.flow(x)?;
            let ctx = EvalCtx::new(x, &sys.params).with_eps(sys.eps_eq);
            let mut dot = 0.0;
            for (grad, fi) in grads.iter().zip(&f) {
                dot += grad.eval_real(&ctx)? * fi;
            }
            let slack = -rho - dot;
            report.flow_checked += 1;
            update_worst(&mut report.worst_flow, slack, x);
            record(&mut report, "<grad V, f> <= -rho(|x|_A)", slack, x);
        }
        if in_d {
            let y = sys.jump(x)?;
            let slack = eval_v(x)? - rho - eval_v(&y)?;
            report.jump_checked += 1;
            update_worst(&mut report.worst_jump, slack, x);
            record(&mut report, "V(g(x)) - V(x) <= -rho(|x|_A)", slack, x);
            // jump images belong to the sandwich domain as well
            sandwich(&mut report, &y)?;
        }
    }
    Ok(report)
}

/// Restriction of a system to a closed set: both the flow and the jump set
/// are intersected with the set; the maps are unchanged.
pub fn restrict_system(sys: &SystemData, set: &ClosedSetSpec) -> SystemData {
    SystemData {
        name: format!("{}|restricted", sys.name),
        flow_set: Expr::And(
            Box::new(sys.flow_set.clone()),
            Box::new(set.membership.clone()),
        ),
        jump_set: Expr::And(
            Box::new(sys.jump_set.clone()),
            Box::new(set.membership.clone()),
        ),
        ..sys.clone()
    }
}

// ---------------------------------------------------------------------------
// Trajectory sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWitness {
    pub x0: Vec<f64>,
    pub t: f64,
    pub j: u32,
    pub k: u32,
    pub distance: f64,
}

/// Largest distance from the set along a run's samples.
fn run_sup_distance(
    run: &ClassicalRun,
    set: &ClosedSetSpec,
    sys: &SystemData,
    x0: &[f64],
) -> Result<(f64, TrajectoryWitness), StabilityError> {
    let mut sup = f64::NEG_INFINITY;
    let mut witness = TrajectoryWitness {
        x0: x0.to_vec(),
        t: run.start_time,
        j: 0,
        k: run.k,
        distance: 0.0,
    };
    for seg in &run.segments {
        for (t, x) in &seg.samples {
            let d = set.distance_at(x, sys)?;
            if d > sup {
                sup = d;
                witness = TrajectoryWitness {
                    x0: x0.to_vec(),
                    t: *t,
                    j: seg.j,
                    k: seg.k,
                    distance: d,
                };
            }
        }
    }
    Ok((sup, witness))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfpiReport {
    pub pass: bool,
    pub eps_inv: f64,
    pub runs: usize,
    pub worst_distance: f64,
    pub witness: Option<TrajectoryWitness>,
}

/// Strong forward pre-invariance sweep: every sample (which must lie in the
/// set) is simulated and its whole trajectory must stay within `eps_inv` of
/// the set.
pub fn check_sfpi(
    sys: &SystemData,
    set: &ClosedSetSpec,
    samples: &[Vec<f64>],
    cfg: &SimConfig,
    eps_inv: f64,
) -> Result<SfpiReport, StabilityError> {
    let mut report = SfpiReport {
        pass: true,
        eps_inv,
        runs: 0,
        worst_distance: 0.0,
        witness: None,
    };
    for x0 in samples {
        if !set.member(x0, sys)? {
            return Err(StabilityError::InvalidSample(format!(
                "{x0:?} does not lie in the set"
            )));
        }
        let run = simulate(sys, x0, cfg)?;
        report.runs += 1;
        let (sup, witness) = run_sup_distance(&run, set, sys, x0)?;
        if sup > report.worst_distance {
            report.worst_distance = sup;
            report.witness = Some(witness);
        }
    }
    report.pass = report.worst_distance <= eps_inv;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AttractivityOutcome {
    /// All trajectories stay within `eps` of the set once hybrid time
    /// `t + j` exceeds `t_uniform`.
    Satisfied { t_uniform: f64 },
    Failed { witness: TrajectoryWitness },
    /// Horizon or jump budget ended a run while it was still outside the
    /// target ball, so nothing can be concluded.
    BudgetExceeded { witness: TrajectoryWitness },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttractivityReport {
    pub eps: f64,
    pub radius: f64,
    pub runs: usize,
    pub outcome: AttractivityOutcome,
}

/// Classical attractivity sweep: for samples within `radius` of the set,
/// find the smallest hybrid time `T` such that every sample point of every
/// run with `t + j >= T` lies within `eps` of the set. Runs that accumulate
/// (Zeno) are judged by their limit estimate: a tail that stays outside the
/// target can never satisfy any `T`.
pub fn check_attractivity(
    sys: &SystemData,
    set: &ClosedSetSpec,
    eps: f64,
    radius: f64,
    samples: &[Vec<f64>],
    cfg: &SimConfig,
) -> Result<AttractivityReport, StabilityError> {
    let mut t_uniform = 0.0f64;
    let mut runs = 0usize;
    for x0 in samples {
        let d0 = set.distance_at(x0, sys)?;
        if d0 > radius {
            return Err(StabilityError::InvalidSample(format!(
                "{x0:?} is at distance {d0} > radius {radius}"
            )));
        }
        let run = simulate(sys, x0, cfg)?;
        runs += 1;
        let mut last_bad: Option<TrajectoryWitness> = None;
        for seg in &run.segments {
            for (t, x) in &seg.samples {
                let d = set.distance_at(x, sys)?;
                if d > eps {
                    let tj = t + f64::from(seg.j);
                    let replace = last_bad
                        .as_ref()
                        .map(|w| tj >= w.t + f64::from(w.j))
                        .unwrap_or(true);
                    if replace {
                        last_bad = Some(TrajectoryWitness {
                            x0: x0.clone(),
                            t: *t,
                            j: seg.j,
                            k: seg.k,
                            distance: d,
                        });
                    }
                }
            }
        }
        // decide whether the run's tail settles
        let tail_distance = match &run.termination {
            Termination::Zeno(_) => {
                let omega = estimate_omega(&run, eps.min(1e-3));
                match omega {
                    Ok(om) => {
                        let mut worst = 0.0f64;
                        for p in &om.points {
                            worst = worst.max(set.distance_at(p, sys)?);
                        }
                        Some(worst)
                    }
                    Err(_) => Some(set.distance_at(&run.final_state, sys)?),
                }
            }
            _ => None,
        };
        if let Some(d_tail) = tail_distance {
            if d_tail > eps {
                // jumps accumulate with the state pinned outside the target
                return Ok(AttractivityReport {
                    eps,
                    radius,
                    runs,
                    outcome: AttractivityOutcome::Failed {
                        witness: TrajectoryWitness {
                            x0: x0.clone(),
                            t: run.final_time,
                            j: run.jumps.len() as u32,
                            k: run.k,
                            distance: d_tail,
                        },
                    },
                });
            }
        } else {
            let final_d = set.distance_at(&run.final_state, sys)?;
            if final_d > eps {
                let outcome = match &run.termination {
                    Termination::Horizon | Termination::MaxJumps => {
                        AttractivityOutcome::BudgetExceeded {
                            witness: TrajectoryWitness {
                                x0: x0.clone(),
                                t: run.final_time,
                                j: run.jumps.len() as u32,
                                k: run.k,
                                distance: final_d,
                            },
                        }
                    }
                    // deadlocked runs end; later hybrid times do not exist,
                    // so the implication holds vacuously past the end
                    _ => {
                        if let Some(w) = &last_bad {
                            t_uniform = t_uniform.max(w.t + f64::from(w.j));
                        }
                        continue;
                    }
                };
                return Ok(AttractivityReport {
                    eps,
                    radius,
                    runs,
                    outcome,
                });
            }
        }
        if let Some(w) = &last_bad {
            t_uniform = t_uniform.max(w.t + f64::from(w.j));
        }
    }
    Ok(AttractivityReport {
        eps,
        radius,
        runs,
        outcome: AttractivityOutcome::Satisfied { t_uniform },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExtendedAttractivityOutcome {
    /// `(K, T)`: within `eps` whenever the Zeno index reaches `K` and
    /// `t + j >= T` on that level, beyond level `K` unconditionally, or —
    /// for solutions with fewer than `K` accumulations — on their final
    /// level once `t + j >= T`.
    Satisfied { k_uniform: u32, t_uniform: f64 },
    Failed { witness: TrajectoryWitness },
    BudgetExceeded { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedAttractivityReport {
    pub eps: f64,
    pub radius: f64,
    pub runs: usize,
    pub outcome: ExtendedAttractivityOutcome,
}

struct LevelSummary {
    k: u32,
    last_bad_tj: Option<f64>,
    worst_bad: Option<TrajectoryWitness>,
    /// Zeno level whose limit estimate remains outside the target: bad at
    /// unbounded hybrid time.
    tail_bad: bool,
    /// Truncated (horizon or jump budget) with the end still outside.
    truncated_bad: bool,
}

/// Attractivity sweep over extended solutions, searching the smallest Zeno
/// threshold `K` (then the smallest `T`) for which the three-clause
/// over-Zeno attractivity condition holds on all sampled branch paths.
pub fn check_attractivity_extended(
    sys: &SystemData,
    set: &ClosedSetSpec,
    eps: f64,
    radius: f64,
    samples: &[Vec<f64>],
    cfg: &SimConfig,
    ext: &ExtendConfig,
) -> Result<ExtendedAttractivityReport, StabilityError> {
    let mut paths: Vec<(Vec<LevelSummary>, bool)> = Vec::new(); // (levels, capped)
    let mut runs = 0usize;
    let mut max_k = 0u32;
    for x0 in samples {
        let d0 = set.distance_at(x0, sys)?;
        if d0 > radius {
            return Err(StabilityError::InvalidSample(format!(
                "{x0:?} is at distance {d0} > radius {radius}"
            )));
        }
        let sol = simulate_extended(sys, x0, cfg, ext)?;
        runs += 1;
        for path in sol.paths() {
            let mut levels = Vec::new();
            let mut capped = false;
            for &id in &path {
                let branch = &sol.branches[id];
                let run = &branch.run;
                let mut summary = LevelSummary {
                    k: branch.k,
                    last_bad_tj: None,
                    worst_bad: None,
                    tail_bad: false,
                    truncated_bad: false,
                };
                for seg in &run.segments {
                    for (t, x) in &seg.samples {
                        let d = set.distance_at(x, sys)?;
                        if d > eps {
                            let tj = t + f64::from(seg.j);
                            if summary.last_bad_tj.map(|b| tj >= b).unwrap_or(true) {
                                summary.last_bad_tj = Some(tj);
                                summary.worst_bad = Some(TrajectoryWitness {
                                    x0: x0.clone(),
                                    t: *t,
                                    j: seg.j,
                                    k: seg.k,
                                    distance: d,
                                });
                            }
                        }
                    }
                }
                match &run.termination {
                    Termination::Zeno(_) => {
                        let tail = match branch.omega.as_ref() {
                            Some(om) => {
                                let mut worst = 0.0f64;
                                for p in &om.points {
                                    worst = worst.max(set.distance_at(p, sys)?);
                                }
                                worst
                            }
                            None => set.distance_at(&run.final_state, sys)?,
                        };
                        summary.tail_bad = tail > eps;
                        if branch.children.is_empty() {
                            // accumulation at the Zeno-index cap: deeper
                            // levels unknown
                            capped = true;
                        }
                    }
                    Termination::Horizon | Termination::MaxJumps => {
                        let d = set.distance_at(&run.final_state, sys)?;
                        summary.truncated_bad = d > eps;
                    }
                    _ => {}
                }
                max_k = max_k.max(branch.k);
                levels.push(summary);
            }
            paths.push((levels, capped));
        }
    }

    let mut budget_blocked = false;
    let mut worst_witness: Option<TrajectoryWitness> = None;
    'search: for k_threshold in 0..=max_k {
        let mut t_req = 0.0f64;
        for (levels, capped) in &paths {
            let sup_zeno = levels.iter().map(|l| l.k).max().unwrap_or(0);
            if *capped && sup_zeno >= k_threshold {
                budget_blocked = true;
                continue 'search;
            }
            for level in levels {
                let t_dependent = level.k == k_threshold
                    || (level.k == sup_zeno && sup_zeno < k_threshold);
                if level.k > k_threshold {
                    if level.last_bad_tj.is_some() || level.tail_bad || level.truncated_bad {
                        if let Some(w) = &level.worst_bad {
                            worst_witness = Some(w.clone());
                        }
                        continue 'search;
                    }
                } else if t_dependent {
                    if level.tail_bad {
                        if let Some(w) = &level.worst_bad {
                            worst_witness = Some(w.clone());
                        }
                        continue 'search;
                    }
                    if level.truncated_bad {
                        budget_blocked = true;
                        continue 'search;
                    }
                    if let Some(tj) = level.last_bad_tj {
                        t_req = t_req.max(tj);
                    }
                }
            }
        }
        return Ok(ExtendedAttractivityReport {
            eps,
            radius,
            runs,
            outcome: ExtendedAttractivityOutcome::Satisfied {
                k_uniform: k_threshold,
                t_uniform: t_req,
            },
        });
    }
    let outcome = if budget_blocked {
        ExtendedAttractivityOutcome::BudgetExceeded {
            detail: "horizon or Zeno-index budget too small to decide".into(),
        }
    } else {
        ExtendedAttractivityOutcome::Failed {
            witness: worst_witness.unwrap_or(TrajectoryWitness {
                x0: samples.first().cloned().unwrap_or_default(),
                t: 0.0,
                j: 0,
                k: 0,
                distance: f64::INFINITY,
            }),
        }
    };
    Ok(ExtendedAttractivityReport {
        eps,
        radius,
        runs,
        outcome,
    })
}

// ---------------------------------------------------------------------------
// Uniform-bound envelope
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub radius: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub rows: Vec<EnvelopeRow>,
    /// Largest observed `m(r) / r`.
    pub fitted_c: f64,
    pub zero_radius_tol: f64,
    pub pass: bool,
}

/// Uniform-bound envelope: for each radius `r`, `m(r)` is the largest
/// trajectory supremum of the set distance over samples started at distance
/// `r`. The verdict is a consistency check, not a proof: every `m` must be
/// finite and the envelope must shrink at the smallest radius below
/// `zero_radius_tol`.
///
/// Directions must be states at distance exactly 1 from the set, and the
/// distance must scale linearly along them (sets that are subspaces with
/// Euclidean distance do); this is verified and violations are reported.
#[allow(clippy::too_many_arguments)]
pub fn check_ugs_envelope(
    sys: &SystemData,
    set: &ClosedSetSpec,
    radii: &[f64],
    directions: &[Vec<f64>],
    cfg: &SimConfig,
    extended: Option<&ExtendConfig>,
    zero_radius_tol: f64,
) -> Result<EnvelopeReport, StabilityError> {
    if radii.is_empty() || radii.windows(2).any(|p| p[1] <= p[0]) || radii[0] <= 0.0 {
        return Err(StabilityError::RadiiNotIncreasing);
    }
    for dir in directions {
        let d = set.distance_at(dir, sys)?;
        if (d - 1.0).abs() > 1e-6 {
            return Err(StabilityError::DistanceNotHomogeneous {
                state: dir.clone(),
                expected: 1.0,
                got: d,
            });
        }
    }
    let mut rows = Vec::with_capacity(radii.len());
    let mut fitted_c = 0.0f64;
    for &r in radii {
        let mut m = 0.0f64;
        for dir in directions {
            let x0: Vec<f64> = dir.iter().map(|v| v * r).collect();
            let d0 = set.distance_at(&x0, sys)?;
            if (d0 - r).abs() > 1e-2 * r {
                return Err(StabilityError::DistanceNotHomogeneous {
                    state: x0,
                    expected: r,
                    got: d0,
                });
            }
            if !(sys.in_flow_set(&x0)? || sys.in_jump_set(&x0)?) {
                continue;
            }
            let sup = match extended {
                None => {
                    let run = simulate(sys, &x0, cfg)?;
                    run_sup_distance(&run, set, sys, &x0)?.0
                }
                Some(ext) => {
                    let sol = simulate_extended(sys, &x0, cfg, ext)?;
                    let mut sup = 0.0f64;
                    for branch in &sol.branches {
                        sup = sup.max(run_sup_distance(&branch.run, set, sys, &x0)?.0);
                    }
                    sup
                }
            };
            m = m.max(sup);
        }
        fitted_c = fitted_c.max(m / r);
        rows.push(EnvelopeRow { radius: r, m });
    }
    let finite = rows.iter().all(|row| row.m.is_finite());
    let shrinks = rows.first().map(|row| row.m <= zero_radius_tol).unwrap_or(false);
    Ok(EnvelopeReport {
        rows,
        fitted_c,
        zero_radius_tol,
        pass: finite && shrinks,
    })
}

// ---------------------------------------------------------------------------
// Sequential narrowing
// ---------------------------------------------------------------------------

/// Verdicts of the narrowing harness. `Ugpasoz` means every stage certified
/// and every intermediate-stage run accumulated (uniform `(T, K)` thresholds
/// over Zeno); `UgsozGpaoz` means some runs reached the next set in finite
/// time instead, so the attractivity thresholds are per-solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum NarrowingVerdict {
    Ugpasoz,
    UgsozGpaoz,
    Fail { stage: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub lyapunov: LyapunovReport,
    /// Grid samples of the enclosing set that satisfy the restricted jump
    /// set; zero means the restricted system cannot jump on the samples.
    pub restricted_jump_hits: usize,
    pub zeno_runs: usize,
    pub zeno_certified: usize,
    pub range_intersections: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrowingReport {
    pub verdict: NarrowingVerdict,
    pub stages: Vec<StageReport>,
}

#[derive(Debug, Clone)]
pub struct NarrowingOptions {
    pub init_samples: usize,
    /// Deterministic offset into the grid's sample sequence.
    pub seed: u64,
    /// Initial conditions must be at least this far from the target stage
    /// set to count as "outside".
    pub sep_margin: f64,
    /// Tolerance for deciding that a run's range touches the target set.
    pub intersect_tol: f64,
    pub eps_slack: f64,
    pub omega_tol: f64,
}

impl Default for NarrowingOptions {
    fn default() -> Self {
        NarrowingOptions {
            init_samples: 8,
            seed: 0,
            sep_margin: 1e-2,
            intersect_tol: 1e-6,
            eps_slack: DEFAULT_EPS_SLACK,
            omega_tol: 1e-3,
        }
    }
}

fn stage_points(
    sys: &SystemData,
    prev: Option<&ClosedSetSpec>,
    grid: &GridSpec,
    seed: u64,
) -> Result<Vec<Vec<f64>>, StabilityError> {
    let raw = grid.samples(seed);
    match prev {
        None => Ok(raw),
        Some(set) => {
            let mut out = Vec::with_capacity(raw.len());
            for x in raw {
                match set.project_point(&x, sys)? {
                    Some(p) => out.push(p),
                    None => {
                        if set.member(&x, sys)? {
                            out.push(x);
                        }
                    }
                }
            }
            if out.is_empty() {
                return Err(StabilityError::InvalidSample(
                    "no grid samples lie in the enclosing set; provide a projection".into(),
                ));
            }
            Ok(out)
        }
    }
}

/// Sequential narrowing: certify each set of a nested chain as uniformly
/// pre-asymptotically stable for the system restricted to its predecessor,
/// and check that solutions started between consecutive sets either
/// accumulate (with convergent limit estimates) or reach the next set. The
/// accumulation requirement applies to every stage but the last.
pub fn sequential_narrowing(
    sys: &SystemData,
    chain: &[(ClosedSetSpec, LyapunovCertificate)],
    grid: &GridSpec,
    cfg: &SimConfig,
    opts: &NarrowingOptions,
) -> Result<NarrowingReport, StabilityError> {
    assert!(!chain.is_empty(), "chain must have at least one stage");
    let n = chain.len();

    // nestedness by sampling: stage i samples must satisfy stage i-1
    // membership (stage 0 sits inside the whole flow-or-jump space)
    for (i, (set, _)) in chain.iter().enumerate() {
        let pts = stage_points(sys, Some(set), grid, opts.seed)?;
        for p in pts.iter().take(64) {
            let inside = if i == 0 {
                sys.in_flow_set(p)? || sys.in_jump_set(p)?
            } else {
                chain[i - 1].0.member(p, sys)?
            };
            if !inside {
                return Err(StabilityError::ChainNotNested {
                    stage: i + 1,
                    state: p.clone(),
                });
            }
        }
    }

    let mut stages = Vec::with_capacity(n);
    let mut any_intersection = false;
    for (i, (set, cert)) in chain.iter().enumerate() {
        let prev = if i == 0 { None } else { Some(&chain[i - 1].0) };
        let restricted = match prev {
            None => sys.clone(),
            Some(p) => restrict_system(sys, p),
        };
        let points = stage_points(&restricted, prev, grid, opts.seed)?;
        let lyapunov =
            check_lyapunov_points(&restricted, cert, set, &points, opts.eps_slack)?;
        let mut restricted_jump_hits = 0usize;
        for p in &points {
            if restricted.in_jump_set(p)? {
                restricted_jump_hits += 1;
            }
        }
        let mut stage = StageReport {
            lyapunov,
            restricted_jump_hits,
            zeno_runs: 0,
            zeno_certified: 0,
            range_intersections: 0,
            notes: Vec::new(),
        };
        if !stage.lyapunov.pass {
            let detail = format!(
                "certificate failed with {} counterexample(s)",
                stage.lyapunov.counterexamples.len()
            );
            stages.push(stage);
            return Ok(NarrowingReport {
                verdict: NarrowingVerdict::Fail {
                    stage: i + 1,
                    detail,
                },
                stages,
            });
        }

        // runs from between the enclosing set and this stage's target must
        // accumulate or reach the target; not required at the last stage
        if i + 1 < n {
            let mut inits = Vec::new();
            for p in &points {
                if inits.len() >= opts.init_samples {
                    break;
                }
                if set.distance_at(p, &restricted)? <= opts.sep_margin {
                    continue;
                }
                if !(restricted.in_flow_set(p)? || restricted.in_jump_set(p)?) {
                    continue;
                }
                inits.push(p.clone());
            }
            for x0 in &inits {
                stage.zeno_runs += 1;
                let run = simulate(&restricted, x0, cfg)?;
                let is_zeno = run.zeno_certificate().is_some();
                if is_zeno && estimate_omega(&run, opts.omega_tol).is_ok() {
                    stage.zeno_certified += 1;
                    continue;
                }
                // fall back to range intersection with the target set
                let mut min_d = f64::INFINITY;
                let mut dists = Vec::new();
                for seg in &run.segments {
                    for (_, x) in &seg.samples {
                        let d = set.distance_at(x, &restricted)?;
                        min_d = min_d.min(d);
                        dists.push(d);
                    }
                }
                if min_d <= opts.intersect_tol {
                    stage.range_intersections += 1;
                    any_intersection = true;
                    continue;
                }
                let tail_decreasing = dists.len() >= 3
                    && dists
                        .iter()
                        .rev()
                        .take(32)
                        .collect::<Vec<_>>()
                        .windows(2)
                        .all(|w| w[0] <= w[1]);
                if tail_decreasing {
                    stage.notes.push(format!(
                        "run from {x0:?} approaches the target (min distance {min_d}) \
                         without reaching it"
                    ));
                }
                let detail = format!(
                    "run from {x0:?} neither accumulates nor reaches the target \
                     (min distance {min_d})"
                );
                stages.push(stage);
                return Ok(NarrowingReport {
                    verdict: NarrowingVerdict::Fail {
                        stage: i + 1,
                        detail,
                    },
                    stages,
                });
            }
        }
        stages.push(stage);
    }
    let verdict = if any_intersection {
        NarrowingVerdict::UgsozGpaoz
    } else {
        NarrowingVerdict::Ugpasoz
    };
    Ok(NarrowingReport { verdict, stages })
}

// ---------------------------------------------------------------------------
// Reference sets and certificates for the built-in scenarios
// ---------------------------------------------------------------------------

fn zeros_project(dim: usize, zero_axes: usize) -> Vec<Expr> {
    (0..dim)
        .map(|i| {
            if i < zero_axes {
                Expr::Num(0.0)
            } else {
                Expr::StateVar(i)
            }
        })
        .collect()
}

/// The set where the ball coordinates `(x1, x2)` vanish, inside a state
/// space of dimension `dim >= 2`; distance is the Euclidean norm of the
/// ball coordinates.
pub fn ball_zero_set(dim: usize) -> ClosedSetSpec {
    assert!(dim >= 2);
    ClosedSetSpec {
        membership: parse_expr("x1 == 0 && x2 == 0").unwrap(),
        distance: parse_expr("sqrt(x1^2 + x2^2)").unwrap(),
        project: Some(zeros_project(dim, 2)),
    }
}

/// The origin of a `dim`-dimensional state space.
pub fn origin_set(dim: usize) -> ClosedSetSpec {
    let membership = (1..=dim)
        .map(|i| format!("x{i} == 0"))
        .collect::<Vec<_>>()
        .join(" && ");
    let distance = format!(
        "sqrt({})",
        (1..=dim)
            .map(|i| format!("x{i}^2"))
            .collect::<Vec<_>>()
            .join(" + ")
    );
    ClosedSetSpec {
        membership: parse_expr(&membership).unwrap(),
        distance: parse_expr(&distance).unwrap(),
        project: Some(zeros_project(dim, dim)),
    }
}

/// Restitution-weighted energy certificate for the bouncing ball: a skewed
/// total energy `(1 + theta*atan(x2)) * (x2^2/2 + g*x1)` whose skew constant
/// makes every floor impact strictly dissipative. The bounds are calibrated
/// for the standard check box `x1 in [0, 5]`, `|x2| <= 10`.
pub fn bouncing_ball_certificate(lambda: f64, gravity: f64) -> LyapunovCertificate {
    assert!(lambda > 0.0 && lambda < 1.0);
    let theta = (1.0 - lambda * lambda) / (std::f64::consts::PI * (1.0 + lambda * lambda));
    let half_pi_theta = theta * std::f64::consts::FRAC_PI_2;
    let factor_lo = 1.0 - half_pi_theta;
    let factor_hi = 1.0 + half_pi_theta;
    let x2_max = 10.0;
    let rho_flow = gravity * theta / (2.0 * (1.0 + x2_max * x2_max));
    let rho_jump = (1.0 - lambda * lambda) / 4.0;
    let rho_coeff = 0.9 * rho_flow.min(rho_jump);

    let v = parse_expr(&format!(
        "(1 + {theta} * atan(x2)) * (x2^2 / 2 + {gravity} * x1)"
    ))
    .unwrap();
    let alpha1 = ComparisonFn::from_string(
        &format!("{} * x1^2", 0.5 * factor_lo),
        ComparisonKind::ClassKInfinity,
    )
    .unwrap();
    let alpha2 = ComparisonFn::from_string(
        &format!("{factor_hi} * ({gravity} * x1 + 0.5 * x1^2)"),
        ComparisonKind::ClassKInfinity,
    )
    .unwrap();
    let rho = ComparisonFn::from_string(
        &format!("{rho_coeff} * x1^2"),
        ComparisonKind::PositiveDefinite,
    )
    .unwrap();
    LyapunovCertificate {
        v,
        alpha1,
        alpha2,
        rho,
    }
}

/// Two-stage narrowing chain for the three-dimensional ball-with-decay
/// scenario: first the plane where the ball rests, then the origin, with a
/// plain quadratic certificate on the purely continuous remainder.
pub fn example3_chain(lambda: f64, gravity: f64) -> Vec<(ClosedSetSpec, LyapunovCertificate)> {
    let stage1 = (ball_zero_set(3), bouncing_ball_certificate(lambda, gravity));
    let stage2_cert = LyapunovCertificate {
        v: parse_expr("x3^2").unwrap(),
        alpha1: ComparisonFn::from_string("0.5 * x1^2", ComparisonKind::ClassKInfinity).unwrap(),
        alpha2: ComparisonFn::from_string("2 * x1^2", ComparisonKind::ClassKInfinity).unwrap(),
        rho: ComparisonFn::from_string("0.5 * x1^2", ComparisonKind::PositiveDefinite).unwrap(),
    };
    vec![stage1, (origin_set(3), stage2_cert)]
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::system::{builtin_scenario, ScenarioParams};

    fn example3() -> SystemData {
        builtin_scenario("example3", &ScenarioParams::default()).unwrap()
    }

    #[test]
    fn distance_examples() {
        let sys = example3();
        let a1 = ball_zero_set(3);
        assert_eq!(a1.distance_at(&[3.0, 4.0, 7.0], &sys).unwrap(), 5.0);
        let origin = origin_set(3);
        assert_eq!(origin.distance_at(&[0.0, 0.0, 0.0], &sys).unwrap(), 0.0);
        assert_eq!(origin.distance_at(&[1.0, 0.0, 0.0], &sys).unwrap(), 1.0);
    }

    #[test]
    fn membership_and_distance_are_consistent_on_projections() {
        let sys = example3();
        let set = ball_zero_set(3);
        let grid = GridSpec::new(vec![0.0, -10.0, -5.0], vec![5.0, 10.0, 5.0], 50);
        for x in grid.samples(0) {
            let p = set.project_point(&x, &sys).unwrap().unwrap();
            assert!(set.member(&p, &sys).unwrap());
            assert!(set.distance_at(&p, &sys).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn comparison_fn_validation() {
        let sys = example3();
        let ok = ComparisonFn::from_string("x1^2", ComparisonKind::ClassKInfinity).unwrap();
        ok.validate("alpha", 10.0, &sys).unwrap();
        let bad = ComparisonFn::from_string("x1^2 - 1", ComparisonKind::ClassKInfinity).unwrap();
        assert!(bad.validate("alpha", 10.0, &sys).is_err());
        let flat = ComparisonFn::from_string("0 * x1", ComparisonKind::PositiveDefinite).unwrap();
        assert!(flat.validate("rho", 10.0, &sys).is_err());
    }

    #[test]
    fn restriction_conjoins_both_sets() {
        let sys = example3();
        let restricted = restrict_system(&sys, &ball_zero_set(3));
        // on the restricted space the ball coordinates vanish, so the jump
        // set is empty and the flow set equals the set itself
        assert!(restricted.in_flow_set(&[0.0, 0.0, 2.0]).unwrap());
        assert!(!restricted.in_flow_set(&[1.0, 0.0, 2.0]).unwrap());
        assert!(!restricted.in_jump_set(&[0.0, -1.0, 2.0]).unwrap());
        // restricting by the full space changes nothing
        let full = ClosedSetSpec::from_strings("true", "0 * x1", None).unwrap();
        let same = restrict_system(&sys, &full);
        for x in [[1.0, 0.5, -1.0], [0.0, -1.0, 0.3], [0.0, 0.0, 0.0]] {
            assert_eq!(
                same.in_flow_set(&x).unwrap(),
                sys.in_flow_set(&x).unwrap()
            );
            assert_eq!(
                same.in_jump_set(&x).unwrap(),
                sys.in_jump_set(&x).unwrap()
            );
        }
    }

    #[test]
    fn quadratic_certificate_passes_on_pure_decay() {
        // one-dimensional contraction x' = -x with V = x^2
        let spec = crate::system::SystemSpec {
            name: "decay1d".into(),
            dim: 1,
            params: BTreeMap::new(),
            flow_set: "true".into(),
            jump_set: "false".into(),
            flow_map: vec!["-x1".into()],
            jump_map: vec!["x1".into()],
        };
        let sys = crate::system::load_system(&spec).unwrap();
        let cert = LyapunovCertificate {
            v: parse_expr("x1^2").unwrap(),
            alpha1: ComparisonFn::from_string("0.5 * x1^2", ComparisonKind::ClassKInfinity)
                .unwrap(),
            alpha2: ComparisonFn::from_string("2 * x1^2", ComparisonKind::ClassKInfinity).unwrap(),
            rho: ComparisonFn::from_string("x1^2", ComparisonKind::PositiveDefinite).unwrap(),
        };
        let set = origin_set(1);
        let grid = GridSpec::new(vec![-3.0], vec![3.0], 200);
        let report = check_lyapunov(&sys, &cert, &set, &grid, DEFAULT_EPS_SLACK, 0).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.jump_checked == 0);

        // anti-certificate on the expansion x' = +x
        let spec = crate::system::SystemSpec {
            flow_map: vec!["x1".into()],
            ..spec
        };
        let sys = crate::system::load_system(&spec).unwrap();
        let report = check_lyapunov(&sys, &cert, &set, &grid, DEFAULT_EPS_SLACK, 0).unwrap();
        assert!(!report.pass);
        assert!(!report.counterexamples.is_empty());
    }
}
