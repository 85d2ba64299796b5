//! Flat trajectory records and the CSV/JSON export formats. Both formats are
//! produced from the same thinned sample rows so they always carry identical
//! `(t, j, k, x)` tuples, and all floating-point output uses the shortest
//! round-trip decimal form so repeated runs are byte-identical.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::extend::ExtendedSolution;
use crate::sim::{ClassicalRun, SampledSegment, Termination, ZenoCertificate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub j: u32,
    pub k: u32,
    pub seg_id: u32,
    pub branch_id: u32,
    pub x: Vec<f64>,
}

/// Keeps the first sample, then one sample per `sample_dt` of elapsed time,
/// and always the last sample. The integration grid itself is never
/// coarsened, only the exported rows.
fn thin(samples: &[(f64, Vec<f64>)], sample_dt: f64) -> Vec<(f64, Vec<f64>)> {
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    let n = samples.len();
    for (i, (t, x)) in samples.iter().enumerate() {
        let take = i == 0
            || i == n - 1
            || out
                .last()
                .map(|(t_prev, _)| t - t_prev >= sample_dt - 1e-12)
                .unwrap_or(true);
        if take {
            out.push((*t, x.clone()));
        }
    }
    out
}

fn records_from_segments(
    segments: &[SampledSegment],
    branch_id: u32,
    sample_dt: f64,
    out: &mut Vec<TrajectoryRecord>,
) {
    for (seg_id, seg) in segments.iter().enumerate() {
        for (t, x) in thin(&seg.samples, sample_dt) {
            out.push(TrajectoryRecord {
                t,
                j: seg.j,
                k: seg.k,
                seg_id: seg_id as u32,
                branch_id,
                x,
            });
        }
    }
}

pub fn classical_records(run: &ClassicalRun, sample_dt: f64) -> Vec<TrajectoryRecord> {
    let mut out = Vec::new();
    records_from_segments(&run.segments, 0, sample_dt, &mut out);
    out
}

/// Rows over the whole branch tree, ordered by branch id (which is the
/// depth-first lineage order), then segment, then time.
pub fn extended_records(sol: &ExtendedSolution, sample_dt: f64) -> Vec<TrajectoryRecord> {
    let mut out = Vec::new();
    for branch in &sol.branches {
        records_from_segments(&branch.run.segments, branch.id as u32, sample_dt, &mut out);
    }
    out
}

/// CSV with the fixed column set `t,j,k,seg_id,branch_id,x1..xn`.
pub fn write_csv<W: Write>(w: &mut W, dim: usize, records: &[TrajectoryRecord]) -> io::Result<()> {
    write!(w, "t,j,k,seg_id,branch_id")?;
    for i in 1..=dim {
        write!(w, ",x{i}")?;
    }
    writeln!(w)?;
    for r in records {
        write!(w, "{},{},{},{},{}", r.t, r.j, r.k, r.seg_id, r.branch_id)?;
        for v in &r.x {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDoc {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDoc {
    pub seg_id: u32,
    pub j: u32,
    pub k: u32,
    pub t_start: f64,
    pub t_end: f64,
    pub samples: Vec<SampleDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDoc {
    pub branch_id: u32,
    pub parent_id: Option<u32>,
    /// Index into the parent's limit points that seeded this branch.
    pub omega_index: Option<usize>,
    pub k: u32,
    pub termination: Termination,
    pub zeno: Option<ZenoCertificate>,
    pub omega_points: Option<Vec<Vec<f64>>>,
    pub omega_period: Option<usize>,
    pub segments: Vec<SegmentDoc>,
}

/// JSON mirror of a run or branch tree, including accumulation certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDoc {
    pub system: String,
    pub dim: usize,
    pub x0: Vec<f64>,
    pub branches: Vec<BranchDoc>,
}

fn segment_docs(segments: &[SampledSegment], sample_dt: f64) -> Vec<SegmentDoc> {
    segments
        .iter()
        .enumerate()
        .map(|(seg_id, seg)| SegmentDoc {
            seg_id: seg_id as u32,
            j: seg.j,
            k: seg.k,
            t_start: seg.t_start,
            t_end: seg.t_end,
            samples: thin(&seg.samples, sample_dt)
                .into_iter()
                .map(|(t, x)| SampleDoc { t, x })
                .collect(),
        })
        .collect()
}

pub fn classical_doc(
    system: &str,
    dim: usize,
    x0: &[f64],
    run: &ClassicalRun,
    sample_dt: f64,
) -> TrajectoryDoc {
    TrajectoryDoc {
        system: system.to_string(),
        dim,
        x0: x0.to_vec(),
        branches: vec![BranchDoc {
            branch_id: 0,
            parent_id: None,
            omega_index: None,
            k: run.k,
            termination: run.termination.clone(),
            zeno: run.zeno_certificate().cloned(),
            omega_points: None,
            omega_period: None,
            segments: segment_docs(&run.segments, sample_dt),
        }],
    }
}

pub fn extended_doc(
    system: &str,
    dim: usize,
    x0: &[f64],
    sol: &ExtendedSolution,
    sample_dt: f64,
) -> TrajectoryDoc {
    TrajectoryDoc {
        system: system.to_string(),
        dim,
        x0: x0.to_vec(),
        branches: sol
            .branches
            .iter()
            .map(|b| BranchDoc {
                branch_id: b.id as u32,
                parent_id: b.parent.map(|p| p.branch as u32),
                omega_index: b.parent.map(|p| p.omega_index),
                k: b.k,
                termination: b.run.termination.clone(),
                zeno: b.run.zeno_certificate().cloned(),
                omega_points: b.omega.as_ref().map(|o| o.points.clone()),
                omega_period: b.omega.as_ref().map(|o| o.period),
                segments: segment_docs(&b.run.segments, sample_dt),
            })
            .collect(),
    }
}
