//! In-memory pipeline stages shared by the subcommands and the tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use courtsight_core::detection::{BevDetector, DetectionSet, DetectorInput};
use courtsight_core::geometry::{
    filter_region, merge_clouds, rasterize_bev, BevGrid, CameraModel, CourtRegion, PointCloud, RigidTransform,
    DEFAULT_MAX_SKEW_S,
};
use courtsight_core::matching::{FrameRef, ImageDetections, SearchConfig, SearchContext, SearchDirection};
use courtsight_core::occlusion::{sessions_for, OcclusionSession};
use courtsight_core::records::{BoxRecord, FrameRecords, ObjectId, Sequence};
use courtsight_core::reid::{apply_remap, resolve_session, EmbeddingProvider, EmbeddingVector, IdRemap, ReidConfig, RemapOutcome};
use courtsight_core::tracker::{Tracker, TrackerConfig};
use log::debug;
use rayon::prelude::*;

use crate::error::{CliError, Result};

/// Wall-clock totals of the LiDAR-only stages.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub frames: usize,
    pub merge: Duration,
    pub filter: Duration,
    pub rasterize: Duration,
    pub detect: Duration,
    pub track: Duration,
}

impl StageTimes {
    pub fn detection_tracking(&self) -> Duration {
        self.merge + self.filter + self.rasterize + self.detect + self.track
    }
}

/// Per-frame cost split: detection + tracking, fusion re-identification,
/// total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub stages: StageTimes,
    pub fusion_reid: Duration,
    /// Wall clock of the whole run including file input, at least the sum
    /// of the stages.
    pub wall: Duration,
}

fn per_frame_ms(d: Duration, frames: usize) -> f64 {
    if frames == 0 {
        0.0
    } else {
        d.as_secs_f64() * 1e3 / frames as f64
    }
}

impl TimingReport {
    pub fn detection_tracking_ms(&self) -> f64 {
        per_frame_ms(self.stages.detection_tracking(), self.stages.frames)
    }

    pub fn fusion_reid_ms(&self) -> f64 {
        per_frame_ms(self.fusion_reid, self.stages.frames)
    }

    /// Processing cost: detection + tracking plus fusion.
    pub fn total_ms(&self) -> f64 {
        per_frame_ms(self.stages.detection_tracking() + self.fusion_reid, self.stages.frames)
    }

    pub fn wall_ms(&self) -> f64 {
        per_frame_ms(self.wall, self.stages.frames)
    }

    pub fn frames_per_second(&self) -> f64 {
        let ms = self.total_ms();
        if ms > 0.0 {
            1e3 / ms
        } else {
            f64::INFINITY
        }
    }

    /// Plain-text table in ms/frame.
    pub fn format(&self) -> String {
        let s = &self.stages;
        let f = s.frames;
        let mut out = String::new();
        let _ = writeln!(out, "# inference speed (ms/frame) over {f} frames");
        let _ = writeln!(out, "detection_tracking {:.3}", self.detection_tracking_ms());
        let _ = writeln!(out, "fusion_reid {:.3}", self.fusion_reid_ms());
        let _ = writeln!(out, "total {:.3}", self.total_ms());
        let _ = writeln!(out, "frames_per_second {:.2}", self.frames_per_second());
        let _ = writeln!(out, "wall_with_io {:.3}", self.wall_ms());
        let _ = writeln!(out, "# detection_tracking breakdown");
        for (name, d) in [
            ("merge", s.merge),
            ("filter", s.filter),
            ("rasterize", s.rasterize),
            ("detect", s.detect),
            ("track", s.track),
        ] {
            let _ = writeln!(out, "detection_tracking.{name} {:.3}", per_frame_ms(d, f));
        }
        out
    }
}

/// Sensor data and optional ground truth of one frame.
#[derive(Debug, Clone)]
pub struct LidarFrame {
    pub timestamp: f64,
    pub clouds: Vec<PointCloud>,
    /// World-meter boxes, needed by the oracle detector.
    pub ground_truth: Option<Vec<BoxRecord>>,
}

/// Merge, filter, rasterize, detect and track, one frame at a time.
pub struct LidarPipeline {
    poses: BTreeMap<String, RigidTransform>,
    region: CourtRegion,
    grid: BevGrid,
    detector: Box<dyn BevDetector>,
    tracker: Tracker,
    frame_index: usize,
    times: StageTimes,
    /// Points after region filtering, summed over frames.
    pub filtered_points: usize,
}

impl LidarPipeline {
    pub fn new(
        poses: BTreeMap<String, RigidTransform>,
        region: CourtRegion,
        grid: BevGrid,
        detector: Box<dyn BevDetector>,
        tracker: TrackerConfig,
    ) -> Result<Self> {
        grid.validate()?;
        Ok(Self {
            poses,
            region,
            grid,
            detector,
            tracker: Tracker::new(tracker)?,
            frame_index: 0,
            times: StageTimes::default(),
            filtered_points: 0,
        })
    }

    pub fn times(&self) -> StageTimes {
        self.times
    }

    pub fn step(&mut self, frame: &LidarFrame) -> Result<FrameRecords> {
        let t0 = Instant::now();
        let poses = frame
            .clouds
            .iter()
            .map(|c| {
                self.poses
                    .get(&c.frame_id)
                    .copied()
                    .ok_or_else(|| CliError::Config(format!("no calibration for sensor {:?}", c.frame_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let merged = merge_clouds(&frame.clouds, &poses, DEFAULT_MAX_SKEW_S)?;
        let t1 = Instant::now();
        let court = filter_region(&merged, &self.region);
        self.filtered_points += court.len();
        let t2 = Instant::now();
        let bev = rasterize_bev(&court, &self.grid)?;
        let t3 = Instant::now();
        let input = DetectorInput {
            frame_index: self.frame_index,
            timestamp: frame.timestamp,
            grid: &self.grid,
            bev: &bev,
            ground_truth: frame.ground_truth.as_deref(),
        };
        let cells = self.detector.detect(&input)?;
        let t4 = Instant::now();
        let world = DetectionSet::new(
            frame.timestamp,
            cells
                .detections
                .iter()
                .map(|d| courtsight_core::detection::Detection {
                    rect: self.grid.cells_to_world(&d.rect),
                    ..*d
                })
                .collect(),
        );
        let boxes = self.tracker.step(&world)?;
        let t5 = Instant::now();

        let s = &mut self.times;
        s.frames += 1;
        s.merge += t1 - t0;
        s.filter += t2 - t1;
        s.rasterize += t3 - t2;
        s.detect += t4 - t3;
        s.track += t5 - t4;
        self.frame_index += 1;
        Ok(FrameRecords::new(frame.timestamp, boxes))
    }
}

/// Run the LiDAR-only pipeline over `frames` in order.
pub fn run_lidar_frames<I>(pipeline: &mut LidarPipeline, frames: I) -> Result<(Sequence, TimingReport)>
where
    I: IntoIterator<Item = Result<LidarFrame>>,
{
    let start = Instant::now();
    let mut out = Vec::new();
    for frame in frames {
        out.push(pipeline.step(&frame?)?);
    }
    if out.is_empty() {
        return Err(CliError::Data("no frames to process".into()));
    }
    let total = start.elapsed();
    Ok((
        Sequence::new(out),
        TimingReport {
            stages: pipeline.times(),
            fusion_reid: Duration::ZERO,
            wall: total.max(pipeline.times().detection_tracking()),
        },
    ))
}

/// Inputs of the camera-assisted repair stage.
pub struct FusionContext<'a> {
    pub cameras: &'a [CameraModel],
    pub detections: &'a dyn ImageDetections,
    /// `None` withholds features: every session stays unrepaired.
    pub embeddings: Option<&'a dyn EmbeddingProvider>,
    pub search: SearchConfig,
    pub reid: ReidConfig,
    pub neighbor_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionStatus {
    /// A non-empty remap was applied.
    Repaired,
    /// Features on both sides paired every id with itself.
    Unchanged,
    /// No feature on at least one side.
    Unrepaired,
    /// The remap would have duplicated an id at `frame`.
    Rejected { frame: usize },
}

impl SessionStatus {
    pub fn label(&self) -> String {
        match self {
            SessionStatus::Repaired => "repaired".into(),
            SessionStatus::Unchanged => "unchanged".into(),
            SessionStatus::Unrepaired => "unrepaired".into(),
            SessionStatus::Rejected { frame } => format!("rejected@{frame}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub session: OcclusionSession,
    pub refs: Vec<FrameRef>,
    pub remap: IdRemap,
    pub status: SessionStatus,
}

impl SessionReport {
    /// Session description, status and the applied renaming.
    pub fn log_line(&self) -> String {
        let map: Vec<String> = self.remap.map.iter().map(|(a, b)| format!("{a}>{b}")).collect();
        format!("{} status={} remap=[{}]", self.session, self.status.label(), map.join(","))
    }
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub tracks: Sequence,
    pub sessions: Vec<SessionReport>,
    pub elapsed: Duration,
}

struct Resolved {
    refs: Vec<FrameRef>,
    remap: IdRemap,
    both_sides: bool,
}

fn side_features(
    search: &SearchContext<'_>,
    provider: &dyn EmbeddingProvider,
    ids: impl IntoIterator<Item = ObjectId>,
    seed: usize,
    direction: SearchDirection,
    refs: &mut Vec<FrameRef>,
) -> BTreeMap<ObjectId, EmbeddingVector> {
    let ids: Vec<ObjectId> = ids.into_iter().collect();
    let mut out = BTreeMap::new();
    for &id in &ids {
        let Some(r) = search.frame_search_among(id, &ids, seed, direction) else {
            debug!("id {id}: no clear {direction} view from frame {seed}");
            continue;
        };
        match provider.embed(&r) {
            Ok(v) => {
                out.insert(id, v);
            }
            Err(e) => debug!("id {id}: no feature at frame {}: {e}", r.frame),
        }
        refs.push(r);
    }
    out
}

fn resolve_one(session: &OcclusionSession, tracks: &Sequence, ctx: &FusionContext<'_>) -> Resolved {
    let empty = IdRemap {
        session: session.index,
        t_s: session.t_s,
        t_e: session.t_e,
        map: BTreeMap::new(),
    };
    let Some(provider) = ctx.embeddings else {
        return Resolved {
            refs: Vec::new(),
            remap: empty,
            both_sides: false,
        };
    };
    let search = SearchContext {
        tracks,
        cameras: ctx.cameras,
        detections: ctx.detections,
        cfg: ctx.search,
    };
    let mut refs = Vec::new();
    let pre = side_features(&search, provider, session.pre_ids(), session.t_s, SearchDirection::Backward, &mut refs);
    let post = if session.open {
        BTreeMap::new()
    } else {
        side_features(&search, provider, session.post_ids(), session.t_e, SearchDirection::Forward, &mut refs)
    };
    let both_sides = !pre.is_empty() && !post.is_empty();
    let remap = if both_sides { resolve_session(session, &pre, &post, &ctx.reid) } else { empty };
    Resolved { refs, remap, both_sides }
}

/// Occlusion sessions of `tracks`, camera search, pairing and renaming.
pub fn repair_tracks(tracks: &Sequence, ctx: &FusionContext<'_>) -> FusionOutput {
    let start = Instant::now();
    let sessions = sessions_for(tracks, ctx.neighbor_radius);
    let resolved: Vec<Resolved> = sessions.par_iter().map(|s| resolve_one(s, tracks, ctx)).collect();
    let remaps: Vec<IdRemap> = resolved.iter().map(|r| r.remap.clone()).collect();
    let (repaired, outcomes) = apply_remap(tracks, &remaps);
    let reports = sessions
        .into_iter()
        .zip(resolved)
        .zip(outcomes)
        .map(|((session, r), outcome)| {
            let status = match outcome {
                RemapOutcome::Applied => SessionStatus::Repaired,
                RemapOutcome::Collision { frame } => SessionStatus::Rejected { frame },
                RemapOutcome::Empty if r.both_sides => SessionStatus::Unchanged,
                RemapOutcome::Empty => SessionStatus::Unrepaired,
            };
            SessionReport {
                session,
                refs: r.refs,
                remap: r.remap,
                status,
            }
        })
        .collect();
    FusionOutput {
        tracks: repaired,
        sessions: reports,
        elapsed: start.elapsed(),
    }
}

/// Session log: one line per session.
pub fn format_session_log(sessions: &[SessionReport]) -> String {
    sessions.iter().map(|s| s.log_line() + "\n").collect()
}

/// Selected camera views: `id k direction camera t x y w h`.
pub fn format_frame_refs(sessions: &[SessionReport]) -> String {
    sessions
        .iter()
        .flat_map(|s| s.refs.iter().map(move |r| r.record_line(s.session.index) + "\n"))
        .collect()
}
