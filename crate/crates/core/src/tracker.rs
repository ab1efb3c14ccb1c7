//! Two-stage tracking-by-detection on the BEV plane.
//!
//! High-confidence detections are assigned first to every live track
//! (including lost ones, which re-activates them); leftover active tracks
//! then get a second chance against low-confidence detections. Costs are
//! `1 - IoU` between the predicted track box and the detection, solved by
//! minimum-cost assignment.
//!
//! Boxes handed to the tracker are in world meters.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::assignment::solve_gated;
use crate::detection::{iou_or_zero, Detection, DetectionSet};
use crate::geometry::Rect;
use crate::records::{BoxRecord, ObjectId};

type State = SVector<f64, 6>;
type Cov = SMatrix<f64, 6, 6>;

// Noise standard deviations as fractions of the box height.
const STD_POSITION: f64 = 1.0 / 20.0;
const STD_SIZE: f64 = 1.0 / 20.0;
const STD_VELOCITY: f64 = 1.0 / 20.0;
const STD_MEASUREMENT: f64 = 1.0 / 20.0;
const MIN_SCALE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("frame timestamp {got} does not follow previous frame {previous}")]
    Sequencing { previous: f64, got: f64 },
    #[error("invalid tracker config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Active,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: ObjectId,
    /// `(cx, cy, w, h, vx, vy)`; velocities in meters per frame.
    pub mean: State,
    pub covariance: Cov,
    pub status: TrackStatus,
    pub age: u32,
    pub hits: u32,
    pub frames_since_update: u32,
}

impl TrackState {
    pub fn new(id: ObjectId, rect: &Rect, status: TrackStatus) -> Self {
        let [cx, cy] = rect.center();
        let s = rect.h.max(MIN_SCALE);
        let mean = State::from_column_slice(&[cx, cy, rect.w, rect.h, 0.0, 0.0]);
        let std = [
            2.0 * STD_POSITION * s,
            2.0 * STD_POSITION * s,
            2.0 * STD_SIZE * s,
            2.0 * STD_SIZE * s,
            10.0 * STD_VELOCITY * s,
            10.0 * STD_VELOCITY * s,
        ];
        Self {
            id,
            mean,
            covariance: Cov::from_diagonal(&State::from_iterator(std.iter().map(|v| v * v))),
            status,
            age: 1,
            hits: 1,
            frames_since_update: 0,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::from_center(self.mean[0], self.mean[1], self.mean[2].max(0.0), self.mean[3].max(0.0))
    }

    pub fn record(&self) -> BoxRecord {
        BoxRecord::new(self.id, self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }

    fn scale(&self) -> f64 {
        self.mean[3].max(MIN_SCALE)
    }
}

fn transition() -> Cov {
    let mut f = Cov::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f
}

/// Advance one frame under constant velocity; covariance grows by the
/// process noise.
pub fn predict(track: &TrackState) -> TrackState {
    let s = track.scale();
    let q = [
        STD_POSITION * s,
        STD_POSITION * s,
        STD_SIZE * s,
        STD_SIZE * s,
        STD_VELOCITY * s,
        STD_VELOCITY * s,
    ];
    let f = transition();
    let mut out = track.clone();
    out.mean = f * track.mean;
    out.covariance = f * track.covariance * f.transpose() + Cov::from_diagonal(&State::from_iterator(q.iter().map(|v| v * v)));
    out
}

/// Kalman measurement update with an observed box `(cx, cy, w, h)`.
fn update(track: &mut TrackState, rect: &Rect) {
    let s = track.scale();
    let h = SMatrix::<f64, 4, 6>::from_fn(|r, c| if r == c { 1.0 } else { 0.0 });
    let [cx, cy] = rect.center();
    let z = SVector::<f64, 4>::new(cx, cy, rect.w, rect.h);
    let r = SMatrix::<f64, 4, 4>::from_diagonal_element((STD_MEASUREMENT * s).powi(2));
    let innovation_cov = h * track.covariance * h.transpose() + r;
    let Some(inv) = innovation_cov.try_inverse() else {
        return;
    };
    let gain = track.covariance * h.transpose() * inv;
    track.mean += gain * (z - h * track.mean);
    let p = (Cov::identity() - gain * h) * track.covariance;
    track.covariance = (p + p.transpose()) * 0.5;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub high_conf_threshold: f64,
    pub low_conf_threshold: f64,
    /// Maximum `1 - IoU` cost accepted in the high-confidence stage.
    pub match_threshold_stage1: f64,
    /// Maximum `1 - IoU` cost accepted in the low-confidence stage.
    pub match_threshold_stage2: f64,
    pub max_lost_frames: u32,
    pub min_hits_to_activate: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            high_conf_threshold: 0.6,
            low_conf_threshold: 0.1,
            match_threshold_stage1: 0.8,
            match_threshold_stage2: 0.5,
            max_lost_frames: 30,
            min_hits_to_activate: 3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let unit = 0.0..=1.0;
        if !(unit.contains(&self.low_conf_threshold) && unit.contains(&self.high_conf_threshold)) {
            return Err(TrackerError::Config("confidence thresholds must lie in [0, 1]".into()));
        }
        if !(self.low_conf_threshold < self.high_conf_threshold) {
            return Err(TrackerError::Config("low_conf_threshold must be below high_conf_threshold".into()));
        }
        if !(unit.contains(&self.match_threshold_stage1) && unit.contains(&self.match_threshold_stage2)) {
            return Err(TrackerError::Config("match thresholds are 1 - IoU costs in [0, 1]".into()));
        }
        if self.min_hits_to_activate == 0 {
            return Err(TrackerError::Config("min_hits_to_activate must be >= 1".into()));
        }
        Ok(())
    }
}

/// Output of [`associate`]; indices refer to the input slices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_dets: Vec<usize>,
}

/// `1 - IoU` cost matrix between track boxes and detections.
pub fn iou_cost(tracks: &[&TrackState], dets: &[&Detection]) -> Vec<Vec<f64>> {
    tracks
        .iter()
        .map(|t| {
            let tr = t.rect();
            dets.iter().map(|d| 1.0 - iou_or_zero(&tr, &d.rect)).collect()
        })
        .collect()
}

/// Two-stage association of predicted tracks with detections.
pub fn associate(predicted: &[TrackState], dets: &[Detection], cfg: &TrackerConfig) -> Association {
    let high: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].confidence >= cfg.high_conf_threshold).collect();
    let low: Vec<usize> = (0..dets.len())
        .filter(|&i| (cfg.low_conf_threshold..cfg.high_conf_threshold).contains(&dets[i].confidence))
        .collect();

    let mut out = Association::default();
    let all_tracks: Vec<usize> = (0..predicted.len()).collect();
    let (stage1, rest_tracks, rest_high) = match_stage(predicted, dets, &all_tracks, &high, cfg.match_threshold_stage1);
    out.matches.extend(stage1);

    let (second, other): (Vec<usize>, Vec<usize>) =
        rest_tracks.into_iter().partition(|&t| predicted[t].status == TrackStatus::Active);
    let (stage2, rest_second, rest_low) = match_stage(predicted, dets, &second, &low, cfg.match_threshold_stage2);
    out.matches.extend(stage2);

    out.unmatched_tracks = other.into_iter().chain(rest_second).collect();
    out.unmatched_tracks.sort_unstable();
    out.unmatched_dets = rest_high.into_iter().chain(rest_low).collect();
    out.unmatched_dets.sort_unstable();
    out.matches.sort_unstable();
    out
}

type StageResult = (Vec<(usize, usize)>, Vec<usize>, Vec<usize>);

fn match_stage(tracks: &[TrackState], dets: &[Detection], track_idx: &[usize], det_idx: &[usize], gate: f64) -> StageResult {
    if track_idx.is_empty() || det_idx.is_empty() {
        return (Vec::new(), track_idx.to_vec(), det_idx.to_vec());
    }
    let t: Vec<&TrackState> = track_idx.iter().map(|&i| &tracks[i]).collect();
    let d: Vec<&Detection> = det_idx.iter().map(|&i| &dets[i]).collect();
    let a = solve_gated(&iou_cost(&t, &d), gate);
    (
        a.pairs.iter().map(|&(r, c)| (track_idx[r], det_idx[c])).collect(),
        a.unmatched_rows.iter().map(|&r| track_idx[r]).collect(),
        a.unmatched_cols.iter().map(|&c| det_idx[c]).collect(),
    )
}

/// Stateful tracker; feed frames in increasing timestamp order.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<TrackState>,
    next_id: ObjectId,
    frames_seen: u64,
    last_timestamp: Option<f64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            frames_seen: 0,
            last_timestamp: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// All live tracks, including tentative and lost ones.
    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Process one frame of world-meter detections and return the active
    /// track set, sorted by id.
    pub fn step(&mut self, dets: &DetectionSet) -> Result<Vec<BoxRecord>, TrackerError> {
        if let Some(prev) = self.last_timestamp {
            if !(dets.timestamp > prev) {
                return Err(TrackerError::Sequencing {
                    previous: prev,
                    got: dets.timestamp,
                });
            }
        }
        self.last_timestamp = Some(dets.timestamp);
        let first_frame = self.frames_seen == 0;
        self.frames_seen += 1;

        let predicted: Vec<TrackState> = self.tracks.iter().map(predict).collect();
        let assoc = associate(&predicted, &dets.detections, &self.cfg);
        self.tracks = predicted;

        let mut keep = vec![true; self.tracks.len()];
        for &(t, d) in &assoc.matches {
            let track = &mut self.tracks[t];
            update(track, &dets.detections[d].rect);
            track.hits += 1;
            track.age += 1;
            track.frames_since_update = 0;
            track.status = match track.status {
                TrackStatus::Tentative if track.hits < self.cfg.min_hits_to_activate => TrackStatus::Tentative,
                _ => TrackStatus::Active,
            };
        }
        for &t in &assoc.unmatched_tracks {
            let track = &mut self.tracks[t];
            track.age += 1;
            track.frames_since_update += 1;
            match track.status {
                TrackStatus::Tentative => keep[t] = false,
                TrackStatus::Active | TrackStatus::Lost => {
                    track.status = TrackStatus::Lost;
                    if track.frames_since_update > self.cfg.max_lost_frames {
                        keep[t] = false;
                    }
                }
            }
        }
        let mut k = keep.into_iter();
        self.tracks.retain(|_| k.next().unwrap_or(true));

        for &d in &assoc.unmatched_dets {
            let det = &dets.detections[d];
            if det.confidence < self.cfg.high_conf_threshold || det.rect.is_degenerate() {
                continue;
            }
            let status = if first_frame || self.cfg.min_hits_to_activate <= 1 {
                TrackStatus::Active
            } else {
                TrackStatus::Tentative
            };
            self.tracks.push(TrackState::new(self.next_id, &det.rect, status));
            self.next_id += 1;
        }

        let mut out: Vec<BoxRecord> = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active)
            .map(TrackState::record)
            .collect();
        out.sort_by_key(|b| b.id);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn det(cx: f64, cy: f64, conf: f64) -> Detection {
        Detection::new(Rect::from_center(cx, cy, 0.6, 0.6), conf)
    }

    fn track_at(id: ObjectId, cx: f64, cy: f64, status: TrackStatus) -> TrackState {
        TrackState::new(id, &Rect::from_center(cx, cy, 0.6, 0.6), status)
    }

    #[test]
    fn predict_static_and_linear() {
        let t = track_at(1, 3.0, 4.0, TrackStatus::Active);
        let p = predict(&t);
        assert_eq!((p.mean[0], p.mean[1]), (3.0, 4.0));

        let mut m = track_at(1, 0.0, 0.0, TrackStatus::Active);
        m.mean[4] = 1.0;
        m.mean[5] = 2.0;
        let p = predict(&m);
        assert_eq!((p.mean[0], p.mean[1]), (1.0, 2.0));
    }

    #[test]
    fn predict_grows_trace_on_filter_states() {
        // covariances reachable by the filter: random predict/update chains
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut t = track_at(1, rng.random::<f64>() * 20.0, rng.random::<f64>() * 10.0, TrackStatus::Active);
            for _ in 0..rng.random_range(0..15) {
                t = predict(&t);
                if rng.random::<bool>() {
                    let (cx, cy) = (t.mean[0] + rng.random::<f64>() * 0.2 - 0.1, t.mean[1] + rng.random::<f64>() * 0.2 - 0.1);
                    update(&mut t, &Rect::from_center(cx, cy, 0.6, 0.6));
                }
            }
            let before = t.covariance.trace();
            let after = predict(&t).covariance.trace();
            assert!(after > before, "{after} <= {before}");
            assert!(t.covariance.symmetric_eigenvalues().iter().all(|&e| e > -1e-12));
        }
    }

    #[test]
    fn single_match_and_empty_frame() {
        let cfg = TrackerConfig::default();
        let tracks = vec![track_at(1, 5.0, 5.0, TrackStatus::Active)];
        let a = associate(&tracks, &[det(5.0, 5.0, 0.9)], &cfg);
        assert_eq!(a.matches, vec![(0, 0)]);
        let a = associate(&tracks, &[], &cfg);
        assert_eq!(a.unmatched_tracks, vec![0]);
        assert!(a.matches.is_empty());
    }

    #[test]
    fn optimal_not_greedy_on_three_tracks() {
        // track 0 overlaps det 0 best, but giving det 0 to track 0 strands
        // track 1, whose only overlap is det 0.
        let cfg = TrackerConfig {
            match_threshold_stage1: 1.0,
            ..TrackerConfig::default()
        };
        let tracks = vec![
            track_at(1, 0.0, 0.0, TrackStatus::Active),
            track_at(2, 0.35, 0.0, TrackStatus::Active),
            track_at(3, 5.0, 5.0, TrackStatus::Active),
        ];
        let dets = vec![det(0.1, 0.0, 0.9), det(-0.3, 0.0, 0.9), det(5.0, 5.1, 0.9)];
        let a = associate(&tracks, &dets, &cfg);

        let t: Vec<&TrackState> = tracks.iter().collect();
        let d: Vec<&Detection> = dets.iter().collect();
        let cost = iou_cost(&t, &d);
        let mut best = (f64::INFINITY, vec![]);
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let c: f64 = (0..3).map(|i| cost[i][perm[i]]).sum();
            if c < best.0 {
                best = (c, perm.to_vec());
            }
        }
        let greedy_first = (0..3).min_by(|&a, &b| cost[0][a].total_cmp(&cost[0][b])).unwrap();
        assert_ne!(greedy_first, best.1[0], "instance must separate greedy from optimal");
        let got: Vec<usize> = a.matches.iter().map(|&(_, d)| d).collect();
        assert_eq!(got, best.1);
    }

    #[test]
    fn low_confidence_only_in_second_stage() {
        let cfg = TrackerConfig::default();
        let tracks = vec![track_at(1, 0.0, 0.0, TrackStatus::Active), track_at(2, 9.0, 9.0, TrackStatus::Lost)];
        // low det near the active track, low det on the lost track
        let a = associate(&tracks, &[det(0.05, 0.0, 0.4), det(9.0, 9.0, 0.4)], &cfg);
        assert_eq!(a.matches, vec![(0, 0)]);
        assert_eq!(a.unmatched_tracks, vec![1]);
        // below the low threshold nothing matches
        let a = associate(&tracks, &[det(0.0, 0.0, 0.05)], &cfg);
        assert!(a.matches.is_empty());
    }

    fn frame(t: usize, dets: Vec<Detection>) -> DetectionSet {
        DetectionSet::new(t as f64 * 0.1, dets)
    }

    #[test]
    fn stable_ids_for_separated_players() {
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        for t in 0..50 {
            let dets = (0..5).map(|i| det(2.0 + 5.0 * i as f64 + 0.05 * t as f64, 3.0 + i as f64, 0.9)).collect();
            let out = tracker.step(&frame(t, dets)).unwrap();
            assert_eq!(out.iter().map(|b| b.id).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn lost_track_dropped_after_max_lost_frames() {
        let cfg = TrackerConfig {
            max_lost_frames: 3,
            ..TrackerConfig::default()
        };
        let mut tracker = Tracker::new(cfg).unwrap();
        for t in 0..20 {
            let mut dets = vec![det(2.0, 2.0, 0.9)];
            if t < 10 {
                dets.push(det(10.0, 10.0, 0.9));
            }
            let out = tracker.step(&frame(t, dets)).unwrap();
            let has_two = out.iter().any(|b| b.id == 2);
            assert_eq!(has_two, t < 10, "frame {t}");
            if t >= 13 {
                assert!(tracker.tracks().iter().all(|tr| tr.id != 2), "frame {t}");
            } else if t >= 10 {
                assert!(tracker.tracks().iter().any(|tr| tr.id == 2 && tr.status == TrackStatus::Lost));
            }
        }
    }

    #[test]
    fn tentative_activation_and_reactivation() {
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        tracker.step(&frame(0, vec![det(1.0, 1.0, 0.9)])).unwrap();
        // new player appears: visible only after three hits
        for t in 1..=3 {
            let out = tracker.step(&frame(t, vec![det(1.0, 1.0, 0.9), det(8.0, 8.0, 0.9)])).unwrap();
            assert_eq!(out.len(), if t < 3 { 1 } else { 2 }, "frame {t}");
        }
        // player 1 vanishes for two frames and returns under the same id
        for t in 4..6 {
            let out = tracker.step(&frame(t, vec![det(8.0, 8.0, 0.9)])).unwrap();
            assert_eq!(out.iter().map(|b| b.id).collect::<Vec<_>>(), vec![2]);
        }
        let out = tracker.step(&frame(6, vec![det(1.0, 1.0, 0.9), det(8.0, 8.0, 0.9)])).unwrap();
        assert_eq!(out.iter().map(|b| b.id).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn rejects_out_of_order_frames() {
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        tracker.step(&frame(3, vec![])).unwrap();
        assert!(matches!(tracker.step(&frame(3, vec![])), Err(TrackerError::Sequencing { .. })));
        assert!(tracker.step(&frame(2, vec![])).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = TrackerConfig {
            low_conf_threshold: 0.7,
            ..TrackerConfig::default()
        };
        assert!(Tracker::new(bad).is_err());
    }

    proptest! {
        #[test]
        fn ids_unique_and_monotone(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
            let mut max_id = 0;
            for t in 0..40 {
                let n = rng.random_range(0..8);
                let dets = (0..n)
                    .map(|_| det(rng.random::<f64>() * 6.0, rng.random::<f64>() * 6.0, rng.random::<f64>()))
                    .collect();
                let out = tracker.step(&frame(t, dets)).unwrap();
                let mut ids: Vec<_> = out.iter().map(|b| b.id).collect();
                ids.dedup();
                prop_assert_eq!(ids.len(), out.len());
                for tr in tracker.tracks() {
                    if tr.hits == 1 && tr.age == 1 {
                        prop_assert!(tr.id > max_id);
                    }
                }
                max_id = tracker.tracks().iter().map(|t| t.id).max().unwrap_or(0).max(max_id);
            }
        }

        #[test]
        fn association_is_optimal(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = TrackerConfig::default();
            let nt = rng.random_range(0..=6);
            let nd = rng.random_range(0..=6);
            let tracks: Vec<TrackState> = (0..nt)
                .map(|i| track_at(i as u32 + 1, rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0, TrackStatus::Active))
                .collect();
            let dets: Vec<Detection> = (0..nd)
                .map(|_| det(rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0, 0.9))
                .collect();
            let a = associate(&tracks, &dets, &cfg);
            let t: Vec<&TrackState> = tracks.iter().collect();
            let d: Vec<&Detection> = dets.iter().collect();
            let cost = iou_cost(&t, &d);
            // brute force: maximize gated matches, then minimize cost
            fn rec(cost: &[Vec<f64>], gate: f64, r: usize, used: &mut [bool], k: usize, c: f64, best: &mut (usize, f64)) {
                if r == cost.len() {
                    if k > best.0 || (k == best.0 && c < best.1 - 1e-12) { *best = (k, c); }
                    return;
                }
                rec(cost, gate, r + 1, used, k, c, best);
                for j in 0..used.len() {
                    if !used[j] && cost[r][j] <= gate {
                        used[j] = true;
                        rec(cost, gate, r + 1, used, k + 1, c + cost[r][j], best);
                        used[j] = false;
                    }
                }
            }
            let mut best = (0, 0.0);
            rec(&cost, cfg.match_threshold_stage1, 0, &mut vec![false; nd], 0, 0.0, &mut best);
            let got: f64 = a.matches.iter().map(|&(t, d)| cost[t][d]).sum();
            prop_assert_eq!(a.matches.len(), best.0);
            prop_assert!((got - best.1).abs() < 1e-9);
        }
    }
}
