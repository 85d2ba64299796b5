//! Hybrid time domains: ordinary time `t`, jump count `j`, and a third index
//! `k` counting accumulation (Zeno) events encountered so far. Dropping `k`
//! from a fixed level recovers the classical two-index domain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridTime {
    pub t: f64,
    pub j: u32,
    pub k: u32,
}

/// One interval `[t_start, t_end]` of flow at jump index `j` and Zeno index
/// `k`. `t_end` may be infinite only on the final segment of a domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub j: u32,
    pub k: u32,
}

impl DomainSegment {
    pub fn new(t_start: f64, t_end: f64, j: u32, k: u32) -> Result<Self, DomainError> {
        if !(t_start.is_finite() && t_start >= 0.0 && t_end >= t_start) {
            return Err(DomainError::Monotonicity(format!(
                "invalid interval [{t_start}, {t_end}]"
            )));
        }
        Ok(DomainSegment {
            t_start,
            t_end,
            j,
            k,
        })
    }
}

/// Why a level of the domain is known to be complete even though only a
/// finite truncation was computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Completion {
    /// Jump times accumulate geometrically; `tau_hat` is the extrapolated
    /// accumulation time.
    ZenoAccumulation { tau_hat: f64 },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DomainError {
    #[error("monotonicity violation: {0}")]
    Monotonicity(String),
    #[error("level {0} does not exist in the domain")]
    UnknownLevel(u32),
}

/// Ordered set of segments over the three-index time axis.
///
/// Invariants maintained by [`append`](Self::append): within one level,
/// consecutive jump indices share an endpoint; a level change resets `j` to 0
/// and never moves time backward; nothing follows an unbounded segment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtendedHybridTimeDomain {
    segments: Vec<DomainSegment>,
    completions: BTreeMap<u32, Completion>,
}

/// The two-index projection of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalTimeDomain {
    pub segments: Vec<(f64, f64, u32)>,
}

impl ExtendedHybridTimeDomain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn segments(&self) -> &[DomainSegment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn append(&mut self, seg: DomainSegment) -> Result<(), DomainError> {
        if let Some(last) = self.segments.last() {
            if last.t_end.is_infinite() {
                return Err(DomainError::Monotonicity(
                    "cannot append after an unbounded segment".into(),
                ));
            }
            if seg.k == last.k {
                if seg.j != last.j + 1 {
                    return Err(DomainError::Monotonicity(format!(
                        "jump index must step from {} to {}, got {}",
                        last.j,
                        last.j + 1,
                        seg.j
                    )));
                }
                if seg.t_start != last.t_end {
                    return Err(DomainError::Monotonicity(format!(
                        "segment must start at the previous endpoint {}, got {}",
                        last.t_end, seg.t_start
                    )));
                }
            } else if seg.k == last.k + 1 {
                if seg.j != 0 {
                    return Err(DomainError::Monotonicity(
                        "jump index must reset to 0 on a new level".into(),
                    ));
                }
                if seg.t_start < last.t_end {
                    return Err(DomainError::Monotonicity(format!(
                        "level {} starts at {} before the previous level ended at {}",
                        seg.k, seg.t_start, last.t_end
                    )));
                }
            } else {
                return Err(DomainError::Monotonicity(format!(
                    "level index must stay at {} or step to {}, got {}",
                    last.k,
                    last.k + 1,
                    seg.k
                )));
            }
        }
        self.segments.push(seg);
        Ok(())
    }

    /// Records that level `k` is complete by virtue of a certified jump-time
    /// accumulation.
    pub fn mark_zeno(&mut self, k: u32, tau_hat: f64) {
        self.completions
            .insert(k, Completion::ZenoAccumulation { tau_hat });
    }

    pub fn completion(&self, k: u32) -> Option<&Completion> {
        self.completions.get(&k)
    }

    /// Whether the hybrid time `(t, j, k)` lies in one of the segments.
    pub fn contains(&self, time: HybridTime) -> bool {
        self.segments.iter().any(|s| {
            s.j == time.j && s.k == time.k && time.t >= s.t_start && time.t <= s.t_end
        })
    }

    /// Componentwise suprema `(sup_t, sup_j, sup_zeno)` over all segments.
    /// The empty domain reports `(0, 0, 0)`.
    pub fn suprema(&self) -> (f64, u32, u32) {
        let mut sup_t = 0.0f64;
        let mut sup_j = 0u32;
        let mut sup_k = 0u32;
        for seg in &self.segments {
            sup_t = sup_t.max(seg.t_end);
            sup_j = sup_j.max(seg.j);
            sup_k = sup_k.max(seg.k);
        }
        (sup_t, sup_j, sup_k)
    }

    fn level_exists(&self, k: u32) -> bool {
        self.segments.iter().any(|s| s.k == k)
    }

    /// A level is complete when its recorded flow is unbounded or when a
    /// Zeno accumulation was certified for it; finite truncations alone
    /// cannot witness completeness.
    pub fn is_complete(&self, k: u32) -> Result<bool, DomainError> {
        if !self.level_exists(k) {
            return Err(DomainError::UnknownLevel(k));
        }
        if self.completions.contains_key(&k) {
            return Ok(true);
        }
        Ok(self
            .segments
            .iter()
            .any(|s| s.k == k && s.t_end.is_infinite()))
    }

    /// A level is Zeno when it is complete with finite total ordinary time,
    /// which in this representation means it carries an accumulation
    /// certificate.
    pub fn is_zeno_level(&self, k: u32) -> Result<bool, DomainError> {
        if !self.level_exists(k) {
            return Err(DomainError::UnknownLevel(k));
        }
        Ok(matches!(
            self.completions.get(&k),
            Some(Completion::ZenoAccumulation { .. })
        ))
    }

    pub fn project_classical(&self, k: u32) -> Result<ClassicalTimeDomain, DomainError> {
        if !self.level_exists(k) {
            return Err(DomainError::UnknownLevel(k));
        }
        Ok(ClassicalTimeDomain {
            segments: self
                .segments
                .iter()
                .filter(|s| s.k == k)
                .map(|s| (s.t_start, s.t_end, s.j))
                .collect(),
        })
    }

    /// Re-verifies every structural invariant; used by tests and after
    /// deserialization.
    pub fn validate(&self) -> Result<(), DomainError> {
        let mut rebuilt = ExtendedHybridTimeDomain::new();
        for seg in &self.segments {
            DomainSegment::new(seg.t_start, seg.t_end, seg.j, seg.k).and(Ok(()))?;
            rebuilt.append(*seg)?;
        }
        Ok(())
    }

    /// Concatenates another domain (e.g. the next level of a continued
    /// solution) onto this one, re-checking the cross-level invariants.
    pub fn extend_from(&mut self, other: &ExtendedHybridTimeDomain) -> Result<(), DomainError> {
        for seg in &other.segments {
            self.append(*seg)?;
        }
        for (k, c) in &other.completions {
            self.completions.insert(*k, *c);
        }
        Ok(())
    }
}

impl ClassicalTimeDomain {
    /// Checks the two-index domain form: consecutive jump indices and
    /// matching interval endpoints.
    pub fn validate(&self) -> Result<(), DomainError> {
        for pair in self.segments.windows(2) {
            let (_, end_a, j_a) = pair[0];
            let (start_b, _, j_b) = pair[1];
            if j_b != j_a + 1 || start_b != end_a {
                return Err(DomainError::Monotonicity(format!(
                    "classical segments ({j_a}) and ({j_b}) do not chain"
                )));
            }
        }
        for (start, end, _) in &self.segments {
            if end < start {
                return Err(DomainError::Monotonicity("reversed interval".into()));
            }
        }
        Ok(())
    }
}
