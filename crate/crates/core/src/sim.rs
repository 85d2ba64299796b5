//! Classical (fixed Zeno index) simulation: event-localized RK4 flow
//! alternating with jumps, plus detection of geometric jump accumulation.
//!
//! Integration is fixed-step RK4 with bisection onto the jump-set boundary;
//! determinism and reproducible inter-jump gap ratios are favored over
//! adaptive efficiency. Once the trailing gaps certify as geometric the run
//! keeps going until the extrapolated remaining time drops below
//! `zeno_time_eps` or the geometric pattern degrades, and reports the last
//! valid certificate. A `MaxJumps` stop without a certificate is reported
//! distinctly so budget exhaustion is never confused with accumulation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::system::SystemData;
use crate::time_domain::{DomainSegment, ExtendedHybridTimeDomain};

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// RK4 step in seconds.
    pub step: f64,
    /// Bisection window for event localization, seconds.
    pub event_tol: f64,
    /// Flow horizon in seconds.
    pub horizon: f64,
    pub max_jumps: u32,
    /// Number of trailing inter-jump gaps inspected by the accumulation
    /// detector; at least 3.
    pub zeno_window: usize,
    /// Allowed spread of successive gap ratios around their mean.
    pub zeno_ratio_tol: f64,
    /// Stop refining once the extrapolated remaining time is this small.
    pub zeno_time_eps: f64,
    /// When a state lies in both sets, jump first; flipped off, flow wins.
    pub jump_priority: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step: 1e-3,
            event_tol: 1e-9,
            horizon: 10.0,
            max_jumps: 10_000,
            zeno_window: 8,
            zeno_ratio_tol: 0.05,
            zeno_time_eps: 1e-6,
            jump_priority: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.step > 0.0
            && self.event_tol > 0.0
            && self.horizon > 0.0
            && self.max_jumps > 0
            && self.zeno_window >= 3
            && self.zeno_ratio_tol > 0.0
            && self.zeno_time_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig)
        }
    }
}

/// Numerical evidence of jump-time accumulation: the trailing gaps, their
/// common ratio, and the extrapolated accumulation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZenoCertificate {
    pub gaps: Vec<f64>,
    pub ratio: f64,
    pub tau_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    Zeno(ZenoCertificate),
    MaxJumps,
    Deadlock { state: Vec<f64> },
    EvalFailure { message: String },
}

/// Sampled trace of one flow interval at fixed `(j, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSegment {
    pub j: u32,
    pub k: u32,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: FlowTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub t: f64,
    /// Jump index before the event; the post state lives at `j_before + 1`.
    pub j_before: u32,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

/// A maximal classical run at a fixed Zeno index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalRun {
    pub k: u32,
    pub start_time: f64,
    pub segments: Vec<SampledSegment>,
    pub jumps: Vec<JumpEvent>,
    pub domain: ExtendedHybridTimeDomain,
    pub termination: Termination,
    pub final_time: f64,
    pub final_state: Vec<f64>,
}

impl ClassicalRun {
    pub fn zeno_certificate(&self) -> Option<&ZenoCertificate> {
        match &self.termination {
            Termination::Zeno(c) => Some(c),
            _ => None,
        }
    }

    pub fn jump_times(&self) -> Vec<f64> {
        self.jumps.iter().map(|e| e.t).collect()
    }

    /// Post-jump states in chronological order.
    pub fn post_jump_states(&self) -> Vec<&[f64]> {
        self.jumps.iter().map(|e| e.post.as_slice()).collect()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("initial state {0:?} lies in neither the flow nor the jump set")]
    InvalidInitialCondition(Vec<f64>),
    #[error("state vector has length {got}, system dimension is {dim}")]
    DimensionMismatch { got: usize, dim: usize },
    #[error("state left the jump set: {0:?}")]
    NotInJumpSet(Vec<f64>),
    #[error("non-finite state during integration")]
    NonFiniteState,
    #[error("invalid simulation configuration")]
    InvalidConfig,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Time-stamped state samples along one flow interval.
pub type FlowTrace = Vec<(f64, Vec<f64>)>;

/// Where a flow interval ended.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowExit {
    /// Jump set became active; state is localized on the guard.
    EnteredJumpSet { t: f64, x: Vec<f64> },
    HorizonReached,
    /// Flow set was left without entering the jump set.
    LeftBothSets { t: f64, x: Vec<f64> },
}

fn rk4_step(sys: &SystemData, x: &[f64], h: f64) -> Result<Vec<f64>, SimError> {
    let k1 = sys.flow(x)?;
    let mut tmp: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = sys.flow(&tmp)?;
    tmp.iter_mut()
        .zip(x.iter().zip(&k2))
        .for_each(|(slot, (a, k))| *slot = a + 0.5 * h * k);
    let k3 = sys.flow(&tmp)?;
    tmp.iter_mut()
        .zip(x.iter().zip(&k3))
        .for_each(|(slot, (a, k))| *slot = a + h * k);
    let k4 = sys.flow(&tmp)?;
    let next: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, a)| a + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteState);
    }
    Ok(next)
}

/// True when flow may not continue at `x` (left the flow set, or the jump
/// set became active under jump priority).
fn flow_blocked(sys: &SystemData, x: &[f64], cfg: &SimConfig) -> Result<bool, SimError> {
    if !sys.in_flow_set(x)? {
        return Ok(true);
    }
    if cfg.jump_priority && sys.in_jump_set(x)? {
        return Ok(true);
    }
    Ok(false)
}

/// Integrates from `(t0, x0)` while flow is admissible. On a step where the
/// jump set activates (or the flow set is left) the crossing is localized by
/// bisection: first to within `event_tol` in time, then further until the
/// returned state actually satisfies the jump-set predicate, so that the
/// downstream jump application sees a state inside its set.
pub fn flow_segment(
    sys: &SystemData,
    x0: &[f64],
    t0: f64,
    cfg: &SimConfig,
) -> Result<(FlowTrace, FlowExit), SimError> {
    let mut samples = vec![(t0, x0.to_vec())];
    let mut t = t0;
    let mut x = x0.to_vec();
    let horizon = cfg.horizon;
    loop {
        if t >= horizon {
            return Ok((samples, FlowExit::HorizonReached));
        }
        let h = cfg.step.min(horizon - t);
        let next = rk4_step(sys, &x, h)?;
        if flow_blocked(sys, &next, cfg)? {
            let (t_evt, x_evt) = localize_event(sys, &x, t, h, cfg)?;
            samples.push((t_evt, x_evt.clone()));
            if sys.in_jump_set(&x_evt)? {
                return Ok((samples, FlowExit::EnteredJumpSet { t: t_evt, x: x_evt }));
            }
            return Ok((samples, FlowExit::LeftBothSets { t: t_evt, x: x_evt }));
        }
        t += h;
        x = next;
        samples.push((t, x.clone()));
    }
}

/// Bisects the step `[t, t+h]` to the earliest blocked state. Keeps halving
/// beyond `event_tol` (down to a hard floor) until the right end lies in the
/// jump set, tolerating localization residue smaller than the equality
/// tolerance of the guard predicates.
fn localize_event(
    sys: &SystemData,
    x: &[f64],
    t: f64,
    h: f64,
    cfg: &SimConfig,
) -> Result<(f64, Vec<f64>), SimError> {
    let mut lo = 0.0f64;
    let mut hi = h;
    let mut x_hi = rk4_step(sys, x, h)?;
    let floor = (cfg.event_tol * 1e-5).max(f64::EPSILON * t.max(1.0));
    for _ in 0..200 {
        if hi - lo <= cfg.event_tol && sys.in_jump_set(&x_hi)? {
            break;
        }
        if hi - lo <= floor {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let x_mid = rk4_step(sys, x, mid)?;
        if flow_blocked(sys, &x_mid, cfg)? {
            hi = mid;
            x_hi = x_mid;
        } else {
            lo = mid;
        }
    }
    Ok((t + hi, x_hi))
}

/// Applies the jump map at `x`, which must lie in the jump set.
pub fn apply_jump(sys: &SystemData, x: &[f64]) -> Result<Vec<f64>, SimError> {
    if !sys.in_jump_set(x)? {
        return Err(SimError::NotInJumpSet(x.to_vec()));
    }
    Ok(sys.jump(x)?)
}

/// Pure trailing-window accumulation test on a list of jump times: the last
/// `zeno_window` gaps must have consistent successive ratios with a common
/// ratio strictly below one. Returns the certificate with the extrapolated
/// accumulation time, or `None` when no geometric pattern is present.
pub fn detect_zeno(jump_times: &[f64], cfg: &SimConfig) -> Option<ZenoCertificate> {
    let w = cfg.zeno_window;
    if jump_times.len() < w + 1 {
        return None;
    }
    let tail = &jump_times[jump_times.len() - (w + 1)..];
    let gaps: Vec<f64> = tail.windows(2).map(|p| p[1] - p[0]).collect();
    if gaps.iter().any(|g| !g.is_finite() || *g <= 0.0) {
        return None;
    }
    let ratios: Vec<f64> = gaps.windows(2).map(|p| p[1] / p[0]).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    if !mean.is_finite() || mean >= 1.0 - cfg.zeno_ratio_tol {
        return None;
    }
    if ratios.iter().any(|r| (r - mean).abs() > cfg.zeno_ratio_tol) {
        return None;
    }
    let last_t = *tail.last().unwrap();
    let last_gap = *gaps.last().unwrap();
    let tau_hat = last_t + last_gap * mean / (1.0 - mean);
    Some(ZenoCertificate {
        gaps,
        ratio: mean,
        tau_hat,
    })
}

/// Produces a maximal classical run from `x0` at ordinary time zero and
/// Zeno index zero.
pub fn simulate(sys: &SystemData, x0: &[f64], cfg: &SimConfig) -> Result<ClassicalRun, SimError> {
    simulate_level(sys, x0, 0.0, 0, cfg)
}

/// As [`simulate`], but starting at `start_time` with Zeno index `k`; this is
/// what solution continuation uses level by level.
pub fn simulate_level(
    sys: &SystemData,
    x0: &[f64],
    start_time: f64,
    k: u32,
    cfg: &SimConfig,
) -> Result<ClassicalRun, SimError> {
    cfg.validate()?;
    if x0.len() != sys.dim {
        return Err(SimError::DimensionMismatch {
            got: x0.len(),
            dim: sys.dim,
        });
    }
    if !(sys.in_flow_set(x0)? || sys.in_jump_set(x0)?) {
        return Err(SimError::InvalidInitialCondition(x0.to_vec()));
    }

    let mut run = RunBuilder::new(sys, start_time, k, cfg);
    let outcome = run.drive(x0);
    Ok(run.finish(outcome))
}

struct RunBuilder<'a> {
    sys: &'a SystemData,
    cfg: &'a SimConfig,
    k: u32,
    start_time: f64,
    j: u32,
    t: f64,
    segments: Vec<SampledSegment>,
    jumps: Vec<JumpEvent>,
    jump_times: Vec<f64>,
    domain: ExtendedHybridTimeDomain,
    held_certificate: Option<ZenoCertificate>,
    final_state: Vec<f64>,
    horizon_complete: bool,
}

impl<'a> RunBuilder<'a> {
    fn new(sys: &'a SystemData, start_time: f64, k: u32, cfg: &'a SimConfig) -> Self {
        RunBuilder {
            sys,
            cfg,
            k,
            start_time,
            j: 0,
            t: start_time,
            segments: Vec::new(),
            jumps: Vec::new(),
            jump_times: Vec::new(),
            domain: ExtendedHybridTimeDomain::new(),
            held_certificate: None,
            final_state: Vec::new(),
            horizon_complete: false,
        }
    }

    fn push_segment(&mut self, t_start: f64, t_end: f64, samples: FlowTrace) {
        self.domain
            .append(
                DomainSegment::new(t_start, t_end, self.j, self.k)
                    .expect("simulator produces monotone segments"),
            )
            .expect("simulator preserves domain invariants");
        self.segments.push(SampledSegment {
            j: self.j,
            k: self.k,
            t_start,
            t_end,
            samples,
        });
    }

    fn drive(&mut self, x0: &[f64]) -> Termination {
        let mut x = x0.to_vec();
        // the horizon is absolute ordinary time, shared by all levels
        let cfg = self.cfg.clone();
        loop {
            let in_d = match self.sys.in_jump_set(&x) {
                Ok(v) => v,
                Err(e) => return self.eval_failure(e, &x),
            };
            let in_c = match self.sys.in_flow_set(&x) {
                Ok(v) => v,
                Err(e) => return self.eval_failure(e, &x),
            };
            let should_jump = in_d && (cfg.jump_priority || !in_c);
            if should_jump {
                if self.jumps.len() as u32 >= cfg.max_jumps {
                    self.seal_state(&x);
                    return Termination::MaxJumps;
                }
                let post = match apply_jump(self.sys, &x) {
                    Ok(p) => p,
                    Err(SimError::Eval(e)) => return self.eval_failure(e, &x),
                    Err(other) => {
                        self.seal_state(&x);
                        return Termination::EvalFailure {
                            message: other.to_string(),
                        };
                    }
                };
                // ensure the pre-state is recorded as a (possibly degenerate)
                // segment at the current jump index
                if self
                    .segments
                    .last()
                    .map(|s| s.j != self.j || s.k != self.k)
                    .unwrap_or(true)
                {
                    self.push_segment(self.t, self.t, vec![(self.t, x.clone())]);
                }
                self.jumps.push(JumpEvent {
                    t: self.t,
                    j_before: self.j,
                    pre: x.clone(),
                    post: post.clone(),
                });
                self.jump_times.push(self.t);
                self.j += 1;
                x = post;
                if let Some(term) = self.update_zeno(&x) {
                    return term;
                }
                continue;
            }
            if !in_c {
                self.seal_state(&x);
                return Termination::Deadlock { state: x };
            }
            let (samples, exit) = match flow_segment(self.sys, &x, self.t, &cfg) {
                Ok(v) => v,
                Err(SimError::Eval(e)) => return self.eval_failure(e, &x),
                Err(other) => {
                    self.seal_state(&x);
                    return Termination::EvalFailure {
                        message: other.to_string(),
                    };
                }
            };
            let t_end = samples.last().map(|(t, _)| *t).unwrap_or(self.t);
            let x_end = samples.last().map(|(_, x)| x.clone()).unwrap_or_else(|| x.clone());
            self.push_segment(self.t, t_end, samples);
            self.t = t_end;
            x = x_end;
            match exit {
                FlowExit::HorizonReached => {
                    self.seal_state(&x);
                    self.horizon_complete = true;
                    return Termination::Horizon;
                }
                FlowExit::EnteredJumpSet { .. } => {
                    // next loop iteration applies the jump
                }
                FlowExit::LeftBothSets { x: exit_state, .. } => {
                    self.seal_state(&exit_state);
                    return Termination::Deadlock { state: exit_state };
                }
            }
        }
    }

    /// Runs the accumulation detector after a jump. While the pattern keeps
    /// certifying, the run continues until the extrapolated remaining time is
    /// below `zeno_time_eps`; if the pattern breaks after having certified,
    /// the last valid certificate is reported.
    fn update_zeno(&mut self, x: &[f64]) -> Option<Termination> {
        let current = detect_zeno(&self.jump_times, self.cfg);
        match (current, &self.held_certificate) {
            (Some(cert), _) => {
                let remaining = cert.tau_hat - self.t;
                if remaining <= self.cfg.zeno_time_eps {
                    self.seal_state(x);
                    return Some(self.certify(cert));
                }
                self.held_certificate = Some(cert);
                None
            }
            (None, Some(_)) => {
                let cert = self.held_certificate.take().unwrap();
                self.seal_state(x);
                Some(self.certify(cert))
            }
            (None, None) => None,
        }
    }

    fn certify(&mut self, cert: ZenoCertificate) -> Termination {
        self.domain.mark_zeno(self.k, cert.tau_hat);
        Termination::Zeno(cert)
    }

    fn eval_failure(&mut self, e: EvalError, x: &[f64]) -> Termination {
        self.seal_state(x);
        Termination::EvalFailure {
            message: e.to_string(),
        }
    }

    /// Records the post-jump point as a degenerate trailing segment when the
    /// run stops right after a jump, so every recorded state lives inside a
    /// domain segment.
    fn seal_state(&mut self, x: &[f64]) {
        let needs_segment = self
            .segments
            .last()
            .map(|s| s.j != self.j || s.k != self.k)
            .unwrap_or(true);
        if needs_segment {
            self.push_segment(self.t, self.t, vec![(self.t, x.to_vec())]);
        }
        self.final_state = x.to_vec();
    }

    fn finish(mut self, termination: Termination) -> ClassicalRun {
        if self.horizon_complete {
            // the final flow interval would continue past the horizon; the
            // idealized domain records it as unbounded
            if let Some(seg) = self.segments.last() {
                let mut domain = ExtendedHybridTimeDomain::new();
                for s in self.domain.segments() {
                    let mut s = *s;
                    if s.j == seg.j && s.k == seg.k {
                        s.t_end = f64::INFINITY;
                    }
                    domain.append(s).expect("rebuild preserves invariants");
                }
                self.domain = domain;
            }
        }
        ClassicalRun {
            k: self.k,
            start_time: self.start_time,
            segments: self.segments,
            jumps: self.jumps,
            domain: self.domain,
            termination,
            final_time: self.t,
            final_state: self.final_state,
        }
    }
}
