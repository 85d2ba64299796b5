//! Continuation of Zeno runs past their accumulation time: estimates the
//! limit set of the jump tail, restarts one classical run per limit point at
//! the extrapolated accumulation time with the Zeno index incremented, and
//! assembles the resulting branch tree.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::sim::{simulate_level, ClassicalRun, SimConfig, SimError, Termination};
use crate::system::SystemData;
use crate::time_domain::{DomainSegment, ExtendedHybridTimeDomain};

/// Estimated limit points of a Zeno run's jump tail. `period` is the
/// detected alternation period of the tail (the number of points), and
/// `residual` measures how stable the extrapolation is under dropping the
/// last tail sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaEstimate {
    pub points: Vec<Vec<f64>>,
    pub period: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OmegaError {
    #[error("run did not terminate with an accumulation certificate")]
    NotZeno,
    #[error("jump tail did not converge (residual {residual})")]
    NonConvergentTail { residual: f64 },
    #[error("limit set estimate is empty")]
    EmptyOmega,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Extrapolates the limit of a componentwise sequence. Where consecutive
/// differences look geometric with ratio magnitude below one the geometric
/// limit is taken, otherwise the last value. A component whose limit is
/// negligible — below `snap_abs`, or below a small fraction of the values it
/// was extrapolated from — collapses to exactly zero, so continuations of
/// decaying states start on the guard surface rather than an extrapolation
/// residue away from it (such residues otherwise seed spurious micro-bounce
/// cascades in the continued run).
fn extrapolate(members: &[&[f64]], snap_abs: f64) -> Vec<f64> {
    let dim = members[0].len();
    let n = members.len();
    let mut limit = members[n - 1].to_vec();
    for c in 0..dim {
        if n >= 3 {
            let last = members[n - 1][c];
            let d_last = last - members[n - 2][c];
            let d_prev = members[n - 2][c] - members[n - 3][c];
            if d_last != 0.0 && d_prev.abs() > f64::MIN_POSITIVE {
                let ratio = d_last / d_prev;
                let consistent = if n >= 4 {
                    let d_prev2 = members[n - 3][c] - members[n - 4][c];
                    if d_prev2.abs() > f64::MIN_POSITIVE {
                        (d_prev / d_prev2 - ratio).abs() <= 0.25
                    } else {
                        false
                    }
                } else {
                    true
                };
                if consistent && ratio.is_finite() && ratio.abs() < 0.95 {
                    limit[c] = last + d_last * ratio / (1.0 - ratio);
                }
            }
        }
        let scale = members.iter().map(|m| m[c].abs()).fold(0.0, f64::max);
        if limit[c].abs() <= snap_abs.max(1e-3 * scale) {
            limit[c] = 0.0;
        }
    }
    limit
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn lex_less(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(ord) => return ord,
        }
    }
    std::cmp::Ordering::Equal
}

/// Estimates the limit set of a Zeno run from its trailing post-jump states.
/// Alternation periods 1 through 4 are searched smallest first; the first
/// period whose per-class extrapolations are stable within `tol` wins.
pub fn estimate_omega(run: &ClassicalRun, tol: f64) -> Result<OmegaEstimate, OmegaError> {
    if run.zeno_certificate().is_none() {
        return Err(OmegaError::NotZeno);
    }
    let posts = run.post_jump_states();
    let snap = 1e-9;
    let mut best_residual = f64::INFINITY;
    for period in 1..=4usize {
        if posts.len() < 3 * period {
            break;
        }
        let mut points = Vec::with_capacity(period);
        let mut residual = 0.0f64;
        for class in 0..period {
            // chronological members of this residue class, newest-aligned
            let mut members: Vec<&[f64]> = Vec::new();
            let mut idx = posts.len() as isize - 1 - class as isize;
            while idx >= 0 && members.len() < 6 {
                members.push(posts[idx as usize]);
                idx -= period as isize;
            }
            members.reverse();
            let full = extrapolate(&members, snap);
            let dropped = extrapolate(&members[..members.len() - 1], snap);
            residual = residual.max(linf(&full, &dropped));
            points.push(full);
        }
        if residual <= tol {
            points.sort_by(|a, b| lex_less(a, b));
            return Ok(OmegaEstimate {
                points,
                period,
                residual,
            });
        }
        best_residual = best_residual.min(residual);
    }
    Err(OmegaError::NonConvergentTail {
        residual: best_residual,
    })
}

/// One continuation seed produced by [`prolong`].
#[derive(Debug, Clone, PartialEq)]
pub struct Continuation {
    pub state: Vec<f64>,
    pub start_time: f64,
    pub k: u32,
    /// Whether the seed lies in the flow or jump set; seeds outside both
    /// become terminal deadlock branches.
    pub in_domain: bool,
}

/// Builds one continuation per limit point: the Zeno index increments, the
/// jump index resets, and ordinary time restarts at the accumulation
/// estimate of the parent run.
pub fn prolong(
    sys: &SystemData,
    run: &ClassicalRun,
    omega: &OmegaEstimate,
) -> Result<Vec<Continuation>, OmegaError> {
    let cert = run.zeno_certificate().ok_or(OmegaError::NotZeno)?;
    if omega.points.is_empty() {
        return Err(OmegaError::EmptyOmega);
    }
    let mut out = Vec::with_capacity(omega.points.len());
    for point in &omega.points {
        let in_domain = sys.in_flow_set(point)? || sys.in_jump_set(point)?;
        out.push(Continuation {
            state: point.clone(),
            start_time: cert.tau_hat,
            k: run.k + 1,
            in_domain,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchParent {
    pub branch: usize,
    pub omega_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    pub parent: Option<BranchParent>,
    pub k: u32,
    pub run: ClassicalRun,
    pub omega: Option<OmegaEstimate>,
    /// Diagnostic when the branch could not be continued (non-convergent
    /// tail, limit point outside both sets).
    pub note: Option<String>,
    pub children: Vec<usize>,
}

/// Branch tree of classical runs concatenated across Zeno indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedSolution {
    pub branches: Vec<Branch>,
    /// Aggregated domain along the canonical (first) root-to-leaf path.
    pub domain: ExtendedHybridTimeDomain,
    pub budget_exceeded: bool,
}

#[derive(Debug, Clone)]
pub struct ExtendConfig {
    /// Largest Zeno index to simulate.
    pub max_zeno: u32,
    /// Total branch budget across the tree.
    pub branch_budget: usize,
    /// Residual tolerance for limit-set estimation.
    pub omega_tol: f64,
}

impl Default for ExtendConfig {
    fn default() -> Self {
        ExtendConfig {
            max_zeno: 3,
            branch_budget: 16,
            omega_tol: 1e-3,
        }
    }
}

impl ExtendedSolution {
    /// Branch ids along the canonical path: from the root always into the
    /// first child (children are ordered by their limit points).
    pub fn canonical_path(&self) -> Vec<usize> {
        let mut path = Vec::new();
        if self.branches.is_empty() {
            return path;
        }
        let mut id = 0usize;
        loop {
            path.push(id);
            match self.branches[id].children.first() {
                Some(&child) => id = child,
                None => return path,
            }
        }
    }

    /// Root-to-leaf branch id paths, one per leaf, in branch id order.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for b in &self.branches {
            if b.children.is_empty() {
                let mut path = vec![b.id];
                let mut cur = b;
                while let Some(p) = cur.parent {
                    path.push(p.branch);
                    cur = &self.branches[p.branch];
                }
                path.reverse();
                out.push(path);
            }
        }
        out
    }

    /// Domain concatenated along an arbitrary root-to-leaf path.
    pub fn path_domain(&self, leaf: usize) -> ExtendedHybridTimeDomain {
        let mut ids = vec![leaf];
        let mut cur = &self.branches[leaf];
        while let Some(p) = cur.parent {
            ids.push(p.branch);
            cur = &self.branches[p.branch];
        }
        ids.reverse();
        let mut domain = ExtendedHybridTimeDomain::new();
        for id in ids {
            domain
                .extend_from(&self.branches[id].run.domain)
                .expect("per-level domains chain monotonically");
        }
        domain
    }

    /// Accumulation events (Zeno index, extrapolated time) along the
    /// canonical path.
    pub fn zeno_events(&self) -> Vec<(u32, f64)> {
        self.canonical_path()
            .into_iter()
            .filter_map(|id| {
                self.branches[id]
                    .run
                    .zeno_certificate()
                    .map(|c| (self.branches[id].k, c.tau_hat))
            })
            .collect()
    }
}

fn deadlock_stub(x: &[f64], t: f64, k: u32) -> ClassicalRun {
    let mut domain = ExtendedHybridTimeDomain::new();
    domain
        .append(DomainSegment::new(t, t, 0, k).expect("degenerate segment"))
        .expect("fresh domain accepts first segment");
    ClassicalRun {
        k,
        start_time: t,
        segments: vec![crate::sim::SampledSegment {
            j: 0,
            k,
            t_start: t,
            t_end: t,
            samples: vec![(t, x.to_vec())],
        }],
        jumps: Vec::new(),
        domain,
        termination: Termination::Deadlock { state: x.to_vec() },
        final_time: t,
        final_state: x.to_vec(),
    }
}

/// Depth-first construction of the extended solution: simulate at each Zeno
/// index, estimate the limit set when the run accumulates, and continue one
/// branch per limit point until the horizon, a deadlock, `max_zeno`, or the
/// branch budget.
pub fn simulate_extended(
    sys: &SystemData,
    x0: &[f64],
    cfg: &SimConfig,
    ext: &ExtendConfig,
) -> Result<ExtendedSolution, SimError> {
    struct Work {
        parent: Option<BranchParent>,
        k: u32,
        start_time: f64,
        state: Vec<f64>,
        in_domain: bool,
    }

    let mut stack = vec![Work {
        parent: None,
        k: 0,
        start_time: 0.0,
        state: x0.to_vec(),
        in_domain: true,
    }];
    let mut branches: Vec<Branch> = Vec::new();
    let mut budget_exceeded = false;

    while let Some(work) = stack.pop() {
        if branches.len() >= ext.branch_budget {
            budget_exceeded = true;
            break;
        }
        let id = branches.len();
        let run = if work.in_domain {
            match simulate_level(sys, &work.state, work.start_time, work.k, cfg) {
                Ok(run) => run,
                Err(e) if work.parent.is_some() => {
                    // a continuation seed the membership precheck admitted but
                    // the simulator rejected; record it as a dead branch
                    let mut stub = deadlock_stub(&work.state, work.start_time, work.k);
                    stub.termination = Termination::EvalFailure {
                        message: e.to_string(),
                    };
                    stub
                }
                Err(e) => return Err(e),
            }
        } else {
            deadlock_stub(&work.state, work.start_time, work.k)
        };
        let mut branch = Branch {
            id,
            parent: work.parent,
            k: work.k,
            run,
            omega: None,
            note: None,
            children: Vec::new(),
        };
        if let Some(p) = work.parent {
            branches[p.branch].children.push(id);
        }
        if branch.run.zeno_certificate().is_some() && work.k < ext.max_zeno {
            match estimate_omega(&branch.run, ext.omega_tol) {
                Ok(omega) => {
                    let continuations = match prolong(sys, &branch.run, &omega) {
                        Ok(c) => c,
                        Err(OmegaError::Eval(e)) => return Err(SimError::Eval(e)),
                        Err(other) => {
                            branch.note = Some(other.to_string());
                            branches.push(branch);
                            continue;
                        }
                    };
                    // reversed so the first limit point is explored first
                    for (omega_index, cont) in continuations.into_iter().enumerate().rev() {
                        stack.push(Work {
                            parent: Some(BranchParent {
                                branch: id,
                                omega_index,
                            }),
                            k: cont.k,
                            start_time: cont.start_time,
                            state: cont.state,
                            in_domain: cont.in_domain,
                        });
                    }
                    branch.omega = Some(omega);
                }
                Err(e) => {
                    branch.note = Some(e.to_string());
                }
            }
        }
        branches.push(branch);
    }

    let mut solution = ExtendedSolution {
        branches,
        domain: ExtendedHybridTimeDomain::new(),
        budget_exceeded,
    };
    if let Some(&leaf) = solution.canonical_path().last() {
        solution.domain = solution.path_domain(leaf);
    }
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extrapolation_is_exact_on_geometric_sequences() {
        // values c·r^n converge to 0
        let rows: Vec<Vec<f64>> = (0..6).map(|n| vec![2.0 * 0.5f64.powi(n)]).collect();
        let members: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let limit = extrapolate(&members, 1e-9);
        assert_eq!(limit, vec![0.0]);

        // shifted: 1 + c·r^n converge to 1
        let rows: Vec<Vec<f64>> = (0..6).map(|n| vec![1.0 + 0.8 * 0.25f64.powi(n)]).collect();
        let members: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let limit = extrapolate(&members, 1e-9);
        assert!((limit[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_falls_back_to_last_value() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]];
        let members: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let limit = extrapolate(&members, 1e-9);
        assert_eq!(limit, vec![-1.0]);
    }
}
