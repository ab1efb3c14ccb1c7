//! Occlusion sessions from the per-frame track-ID count series.
//!
//! A session opens when the live ID count drops and closes at the first
//! frame whose count is back at (or above) the count just before the drop.
//! Frame indices are 0-based.

use std::collections::BTreeSet;
use std::fmt;

use crate::records::{ObjectId, Sequence};

/// Default proximity radius (meters) for neighbor sets.
pub const DEFAULT_NEIGHBOR_RADIUS: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdCountSeries {
    sets: Vec<BTreeSet<ObjectId>>,
}

impl IdCountSeries {
    pub fn new(sets: Vec<BTreeSet<ObjectId>>) -> Self {
        Self { sets }
    }

    pub fn from_sequence(seq: &Sequence) -> Self {
        Self::new(seq.id_sets())
    }

    /// Series with fresh synthetic ids; only the counts are meaningful.
    pub fn from_counts(counts: &[usize]) -> Self {
        Self::new(counts.iter().map(|&n| (0..n as ObjectId).collect()).collect())
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn sets(&self) -> &[BTreeSet<ObjectId>] {
        &self.sets
    }

    pub fn counts(&self) -> Vec<usize> {
        self.sets.iter().map(BTreeSet::len).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OcclusionSession {
    pub index: usize,
    pub t_s: usize,
    /// Closing frame; for an open session, the last frame of the series.
    pub t_e: usize,
    pub n_ref: usize,
    pub lost_ids: BTreeSet<ObjectId>,
    pub gain_ids: BTreeSet<ObjectId>,
    pub neighbor_lost_ids: BTreeSet<ObjectId>,
    pub neighbor_gain_ids: BTreeSet<ObjectId>,
    /// Still below `n_ref` when the series ended.
    pub open: bool,
}

impl OcclusionSession {
    pub fn pre_ids(&self) -> BTreeSet<ObjectId> {
        self.lost_ids.union(&self.neighbor_lost_ids).copied().collect()
    }

    pub fn post_ids(&self) -> BTreeSet<ObjectId> {
        self.gain_ids.union(&self.neighbor_gain_ids).copied().collect()
    }
}

fn fmt_ids(f: &mut fmt::Formatter<'_>, ids: &BTreeSet<ObjectId>) -> fmt::Result {
    f.write_str("[")?;
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{id}")?;
    }
    f.write_str("]")
}

impl fmt::Display for OcclusionSession {
    /// `k t_s t_e N_ref lost=[..] gain=[..] near_lost=[..] near_gain=[..] [open]`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {} lost=", self.index, self.t_s, self.t_e, self.n_ref)?;
        fmt_ids(f, &self.lost_ids)?;
        f.write_str(" gain=")?;
        fmt_ids(f, &self.gain_ids)?;
        f.write_str(" near_lost=")?;
        fmt_ids(f, &self.neighbor_lost_ids)?;
        f.write_str(" near_gain=")?;
        fmt_ids(f, &self.neighbor_gain_ids)?;
        if self.open {
            f.write_str(" open")?;
        }
        Ok(())
    }
}

/// `N_t - N_{t-1}` for `t >= 1`; empty for series shorter than two frames.
pub fn diff_series(series: &IdCountSeries) -> Vec<i64> {
    series.counts().windows(2).map(|w| w[1] as i64 - w[0] as i64).collect()
}

/// Run the IDLE/OCCLUDE state machine over the series. Neighbor sets are
/// left empty; see [`annotate_neighbors`].
pub fn extract_sessions(series: &IdCountSeries) -> Vec<OcclusionSession> {
    let sets = series.sets();
    let mut out = Vec::new();
    let mut current: Option<OcclusionSession> = None;
    for t in 1..sets.len() {
        let (n_prev, n) = (sets[t - 1].len(), sets[t].len());
        match current.take() {
            None if n < n_prev => {
                current = Some(OcclusionSession {
                    index: out.len(),
                    t_s: t,
                    n_ref: n_prev,
                    lost_ids: sets[t - 1].difference(&sets[t]).copied().collect(),
                    ..OcclusionSession::default()
                });
            }
            Some(mut s) if n >= s.n_ref => {
                s.t_e = t;
                s.gain_ids = sets[t].difference(&sets[t - 1]).copied().collect();
                out.push(s);
            }
            other => current = other,
        }
    }
    if let Some(mut s) = current {
        s.t_e = sets.len() - 1;
        s.open = true;
        out.push(s);
    }
    out
}

/// Fill neighbor sets: ids present on both sides of a boundary whose box
/// lies within `radius` of a lost (resp. gained) id at that boundary.
pub fn annotate_neighbors(sessions: &mut [OcclusionSession], tracks: &Sequence, radius: f64) {
    for s in sessions.iter_mut() {
        s.neighbor_lost_ids = near_survivors(tracks, s.t_s - 1, s.t_s, &s.lost_ids, radius);
        s.neighbor_gain_ids = if s.open {
            BTreeSet::new()
        } else {
            near_survivors(tracks, s.t_e, s.t_e - 1, &s.gain_ids, radius)
        };
    }
}

/// Ids in both `at` and `other` frames lying, at frame `at`, within
/// `radius` of any of `anchors` (also evaluated at `at`).
fn near_survivors(tracks: &Sequence, at: usize, other: usize, anchors: &BTreeSet<ObjectId>, radius: f64) -> BTreeSet<ObjectId> {
    let (Some(frame), Some(other)) = (tracks.frames.get(at), tracks.frames.get(other)) else {
        return BTreeSet::new();
    };
    let survivors = frame.ids().intersection(&other.ids()).copied().collect::<BTreeSet<_>>();
    let anchor_boxes: Vec<_> = anchors.iter().filter_map(|&a| frame.get(a)).collect();
    survivors
        .into_iter()
        .filter(|id| !anchors.contains(id))
        .filter(|&id| {
            frame
                .get(id)
                .is_some_and(|b| anchor_boxes.iter().any(|a| a.distance_to(b) <= radius))
        })
        .collect()
}

/// Sessions with neighbor sets, straight from a track sequence.
pub fn sessions_for(tracks: &Sequence, radius: f64) -> Vec<OcclusionSession> {
    let mut sessions = extract_sessions(&IdCountSeries::from_sequence(tracks));
    annotate_neighbors(&mut sessions, tracks, radius);
    sessions
}
