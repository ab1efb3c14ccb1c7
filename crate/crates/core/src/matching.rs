//! Camera selection and clear-frame search around occlusion boundaries.
//!
//! Every BEV track box is extruded into a voxel and projected into each
//! camera. For the target id, the camera where the fewest of its projected
//! corners fall inside other players' projections wins (ties go to the
//! largest apparent box). The chosen view is "clear" when exactly one image
//! detection overlaps the projection strongly and no other overlaps it even
//! weakly.

use std::fmt;

use thiserror::Error;

use crate::detection::{iou_or_zero, Detection};
use crate::geometry::{project, voxelize_world, CameraModel, ProjectedBox, Rect};
use crate::records::{BoxRecord, ObjectId, Sequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("invalid search config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SearchDirection {
    Backward,
    Forward,
}

impl SearchDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchDirection::Backward => "backward",
            SearchDirection::Forward => "forward",
        }
    }
}

impl fmt::Display for SearchDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub tau_high: f64,
    pub tau_low: f64,
    /// Frames visited per search, the seed frame included.
    pub max_search_frames: usize,
    /// Height range used to extrude BEV boxes into voxels.
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            tau_high: 0.5,
            tau_low: 0.2,
            max_search_frames: 30,
            z_min: 0.0,
            z_max: 1.9,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), MatchingError> {
        if !(0.0 < self.tau_low && self.tau_low < self.tau_high && self.tau_high <= 1.0) {
            return Err(MatchingError::Config("need 0 < tau_low < tau_high <= 1".into()));
        }
        if self.max_search_frames == 0 {
            return Err(MatchingError::Config("max_search_frames must be >= 1".into()));
        }
        if !(self.z_min < self.z_max) {
            return Err(MatchingError::Config("z_min must be below z_max".into()));
        }
        Ok(())
    }
}

/// Camera-side detections, in pixels, per camera and frame.
pub trait ImageDetections: Sync {
    fn detections(&self, camera: usize, frame: usize) -> &[Detection];
}

/// Dense `[camera][frame]` table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionTable {
    pub per_camera: Vec<Vec<Vec<Detection>>>,
}

impl ImageDetections for DetectionTable {
    fn detections(&self, camera: usize, frame: usize) -> &[Detection] {
        self.per_camera
            .get(camera)
            .and_then(|c| c.get(frame))
            .map_or(&[], Vec::as_slice)
    }
}

fn project_box(b: &BoxRecord, cam: &CameraModel, cfg: &SearchConfig) -> Option<ProjectedBox> {
    let voxel = voxelize_world(&b.footprint(), cfg.z_min, cfg.z_max).ok()?;
    project(&voxel, cam).ok()
}

/// Eligible view of one id in one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub camera: usize,
    pub inclusion: u8,
    /// Inverse unclamped projected area; lower means a larger view.
    pub score: f64,
    pub projected: ProjectedBox,
}

/// Corners of `target` lying inside any other box's projection; `None` when
/// the target cannot be projected into this camera (behind it, or off the
/// image entirely). Others behind the camera are ignored.
pub fn corner_inclusion_count(target: &BoxRecord, others: &[BoxRecord], cam: &CameraModel, cfg: &SearchConfig) -> Option<CameraView> {
    let pb = project_box(target, cam, cfg)?;
    if pb.bbox.is_degenerate() {
        return None;
    }
    let other_rects: Vec<Rect> = others
        .iter()
        .filter(|o| o.id != target.id)
        .filter_map(|o| project_box(o, cam, cfg))
        .map(|p| p.unclamped)
        .collect();
    let inclusion = pb
        .corners
        .iter()
        .filter(|&&c| other_rects.iter().any(|r| r.contains(c)))
        .count() as u8;
    Some(CameraView {
        camera: 0,
        inclusion,
        score: 1.0 / pb.unclamped_area(),
        projected: pb,
    })
}

/// Index of the winning candidate: fewest included corners, then lowest
/// score; earlier candidates win exact ties.
pub fn choose_camera(candidates: &[Option<(u8, f64)>]) -> Option<usize> {
    let mut best: Option<(usize, u8, f64)> = None;
    for (c, cand) in candidates.iter().enumerate() {
        let Some((inc, score)) = *cand else { continue };
        let better = match best {
            None => true,
            Some((_, bi, bs)) => inc < bi || (inc == bi && score < bs),
        };
        if better {
            best = Some((c, inc, score));
        }
    }
    best.map(|b| b.0)
}

/// Best camera for `target` given every other box of the frame.
pub fn select_camera(target: &BoxRecord, frame_boxes: &[BoxRecord], cameras: &[CameraModel], cfg: &SearchConfig) -> Option<CameraView> {
    let views: Vec<Option<CameraView>> = cameras
        .iter()
        .enumerate()
        .map(|(c, cam)| corner_inclusion_count(target, frame_boxes, cam, cfg).map(|v| CameraView { camera: c, ..v }))
        .collect();
    let keys: Vec<Option<(u8, f64)>> = views.iter().map(|v| v.map(|v| (v.inclusion, v.score))).collect();
    choose_camera(&keys).and_then(|i| views[i])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clarity {
    /// Index of the single strongly overlapping detection.
    Clear(usize),
    Ambiguous,
}

/// Exactly one detection with IoU >= `tau_high`, all others below `tau_low`.
pub fn clarity_gate(projected: &Rect, detections: &[Detection], cfg: &SearchConfig) -> Clarity {
    let mut strong = None;
    for (i, d) in detections.iter().enumerate() {
        let iou = iou_or_zero(&d.rect, projected);
        if iou >= cfg.tau_high {
            if strong.is_some() {
                return Clarity::Ambiguous;
            }
            strong = Some(i);
        } else if iou >= cfg.tau_low {
            return Clarity::Ambiguous;
        }
    }
    strong.map_or(Clarity::Ambiguous, Clarity::Clear)
}

/// A clear observation of one id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRef {
    pub id: ObjectId,
    pub camera: usize,
    pub frame: usize,
    pub direction: SearchDirection,
    /// Corner-inclusion count of the chosen view.
    pub inclusion: u8,
    pub projected: ProjectedBox,
    pub matched: Detection,
}

impl FrameRef {
    /// `id k direction camera t x y w h`
    pub fn record_line(&self, session: usize) -> String {
        let r = &self.matched.rect;
        format!(
            "{} {} {} {} {} {:.2} {:.2} {:.2} {:.2}",
            self.id, session, self.direction, self.camera, self.frame, r.x, r.y, r.w, r.h
        )
    }
}

/// Inputs shared by every search over one sequence.
pub struct SearchContext<'a> {
    pub tracks: &'a Sequence,
    pub cameras: &'a [CameraModel],
    pub detections: &'a dyn ImageDetections,
    pub cfg: SearchConfig,
}

impl SearchContext<'_> {
    /// Boxes of frame `t` with `id` and any absent `peers` filled in from
    /// their nearest known state when the tracker has no box for them there.
    fn frame_boxes(&self, id: ObjectId, peers: &[ObjectId], t: usize) -> Option<(BoxRecord, Vec<BoxRecord>)> {
        let frame = self.tracks.frames.get(t)?;
        let mut boxes = frame.boxes.clone();
        for &p in peers {
            if p != id && frame.get(p).is_none() {
                if let Some((_, b)) = self.tracks.nearest_record(p, t) {
                    boxes.push(b);
                }
            }
        }
        let target = match frame.get(id) {
            Some(b) => *b,
            None => {
                let (_, b) = self.tracks.nearest_record(id, t)?;
                boxes.push(b);
                b
            }
        };
        Some((target, boxes))
    }

    /// Clear view of `id` at frame `t`, if any.
    pub fn check_frame(&self, id: ObjectId, t: usize) -> Option<(CameraView, Detection)> {
        self.check_frame_among(id, &[], t)
    }

    /// Like [`check_frame`](Self::check_frame), with absent `peers` kept in
    /// the scene at their nearest known state.
    pub fn check_frame_among(&self, id: ObjectId, peers: &[ObjectId], t: usize) -> Option<(CameraView, Detection)> {
        let (target, boxes) = self.frame_boxes(id, peers, t)?;
        let view = select_camera(&target, &boxes, self.cameras, &self.cfg)?;
        let dets = self.detections.detections(view.camera, t);
        match clarity_gate(&view.projected.bbox, dets, &self.cfg) {
            Clarity::Clear(i) => Some((view, dets[i])),
            Clarity::Ambiguous => None,
        }
    }

    /// Walk from `t0` in `direction` until a clear frame is found, the
    /// budget runs out or the sequence ends.
    pub fn frame_search(&self, id: ObjectId, t0: usize, direction: SearchDirection) -> Option<FrameRef> {
        self.frame_search_among(id, &[], t0, direction)
    }

    /// Search for `id` while ids in `peers` that the tracker lost stay in
    /// the scene at their nearest known state.
    pub fn frame_search_among(
        &self,
        id: ObjectId,
        peers: &[ObjectId],
        t0: usize,
        direction: SearchDirection,
    ) -> Option<FrameRef> {
        let n = self.tracks.len();
        if t0 >= n {
            return None;
        }
        let frames: Box<dyn Iterator<Item = usize>> = match direction {
            SearchDirection::Backward => Box::new((0..=t0).rev()),
            SearchDirection::Forward => Box::new(t0..n),
        };
        frames.take(self.cfg.max_search_frames).find_map(|t| {
            self.check_frame_among(id, peers, t).map(|(view, matched)| FrameRef {
                id,
                camera: view.camera,
                frame: t,
                direction,
                inclusion: view.inclusion,
                projected: view.projected,
                matched,
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::FrameRecords;
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn cam_from(x: f64, y: f64) -> CameraModel {
        CameraModel::look_at(Point3::new(x, y, 1.0), Point3::new(14.0, 7.5, 1.0), 95.0, 78.0, (3840, 2160)).unwrap()
    }

    fn player(id: ObjectId, x: f64, y: f64) -> BoxRecord {
        BoxRecord::new(id, x, y, 0.6, 0.6)
    }

    /// Direct test of all 8 corners against every other projection.
    fn brute_count(target: &BoxRecord, others: &[BoxRecord], cam: &CameraModel, cfg: &SearchConfig) -> u8 {
        let corners = project_box(target, cam, cfg).unwrap().corners;
        let mut n = 0;
        for c in corners {
            let mut inside = false;
            for o in others.iter().filter(|o| o.id != target.id) {
                if let Some(p) = project_box(o, cam, cfg) {
                    let r = p.unclamped;
                    if c[0] >= r.x && c[0] <= r.x + r.w && c[1] >= r.y && c[1] <= r.y + r.h {
                        inside = true;
                    }
                }
            }
            n += inside as u8;
        }
        n
    }

    #[test]
    fn lone_player_has_no_inclusions() {
        let cfg = SearchConfig::default();
        let v = corner_inclusion_count(&player(1, 14.0, 7.5), &[], &cam_from(0.0, 7.5), &cfg).unwrap();
        assert_eq!(v.inclusion, 0);
    }

    #[test]
    fn box_inside_larger_box_counts_all() {
        let cfg = SearchConfig::default();
        let big = BoxRecord::new(2, 14.0, 7.5, 3.0, 3.0);
        let v = corner_inclusion_count(&player(1, 14.0, 7.5), &[big], &cam_from(0.0, 7.5), &cfg).unwrap();
        assert_eq!(v.inclusion, 8);
    }

    #[test]
    fn behind_camera_is_ineligible() {
        let cfg = SearchConfig::default();
        assert!(corner_inclusion_count(&player(1, -3.0, 7.5), &[], &cam_from(0.0, 7.5), &cfg).is_none());
    }

    #[test]
    fn choose_camera_examples() {
        assert_eq!(choose_camera(&[None, Some((4, 1.0)), None]), Some(1));
        assert_eq!(choose_camera(&[Some((0, 1.0)), Some((3, 0.1)), Some((8, 0.01))]), Some(0));
        let keys = [Some((2, 1.0 / 900.0)), Some((2, 1.0 / 2500.0)), Some((5, 1.0))];
        assert_eq!(choose_camera(&keys), Some(1));
        assert_eq!(choose_camera(&[None, None]), None);
    }

    #[test]
    fn select_camera_avoids_occluder() {
        let cfg = SearchConfig::default();
        // camera 0 on the left sees the occluder in front of the target;
        // camera 1 looks along y and sees them side by side
        let cams = [cam_from(0.0, 7.5), cam_from(14.0, -1.0)];
        let boxes = [player(1, 14.0, 7.5), player(2, 12.0, 7.5)];
        let v0 = corner_inclusion_count(&boxes[0], &boxes, &cams[0], &cfg).unwrap();
        let v1 = corner_inclusion_count(&boxes[0], &boxes, &cams[1], &cfg).unwrap();
        assert!(v0.inclusion > v1.inclusion);
        assert_eq!(select_camera(&boxes[0], &boxes, &cams, &cfg).unwrap().camera, 1);
    }

    #[test]
    fn clarity_examples() {
        let cfg = SearchConfig::default();
        let proj = Rect::new(0.0, 0.0, 100.0, 100.0);
        let d = |x: f64, w: f64| Detection::new(Rect::new(x, 0.0, w, 100.0), 0.9);
        // IoU 0.9
        assert_eq!(clarity_gate(&proj, &[d(0.0, 90.0)], &cfg), Clarity::Clear(0));
        // IoU 0.6 and 0.3
        assert_eq!(clarity_gate(&proj, &[d(0.0, 60.0), d(70.0, 30.0)], &cfg), Clarity::Ambiguous);
        // nothing strong
        assert_eq!(clarity_gate(&proj, &[d(0.0, 30.0)], &cfg), Clarity::Ambiguous);
        assert_eq!(clarity_gate(&proj, &[], &cfg), Clarity::Ambiguous);
        // weak overlap below tau_low does not spoil a clear frame
        assert_eq!(clarity_gate(&proj, &[d(0.0, 95.0), d(90.0, 100.0)], &cfg), Clarity::Clear(0));
    }

    /// Table whose single camera returns the exact projection of every
    /// player except during `blocked` frames, where a second overlapping
    /// detection makes the view ambiguous.
    fn scripted(seq: &Sequence, cam: &CameraModel, cfg: &SearchConfig, blocked: std::ops::Range<usize>) -> DetectionTable {
        let frames = seq
            .frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let mut dets: Vec<Detection> = f
                    .boxes
                    .iter()
                    .filter_map(|b| project_box(b, cam, cfg))
                    .map(|p| Detection::new(p.bbox, 0.9))
                    .collect();
                if blocked.contains(&t) {
                    let r = dets[0].rect;
                    dets.push(Detection::new(Rect::new(r.x + r.w * 0.3, r.y, r.w, r.h), 0.9));
                }
                dets
            })
            .collect();
        DetectionTable { per_camera: vec![frames] }
    }

    fn static_sequence(n: usize) -> Sequence {
        Sequence::new((0..n).map(|t| FrameRecords::new(t as f64 * 0.1, vec![player(1, 14.0, 7.5)])).collect())
    }

    #[test]
    fn frame_search_clear_at_seed() {
        let seq = static_sequence(20);
        let cams = [cam_from(0.0, 7.5)];
        let cfg = SearchConfig::default();
        let table = scripted(&seq, &cams[0], &cfg, 0..0);
        let ctx = SearchContext { tracks: &seq, cameras: &cams, detections: &table, cfg };
        let r = ctx.frame_search(1, 10, SearchDirection::Backward).unwrap();
        assert_eq!((r.camera, r.frame), (0, 10));
    }

    #[test]
    fn frame_search_skips_overlap_window() {
        let seq = static_sequence(20);
        let cams = [cam_from(0.0, 7.5)];
        let cfg = SearchConfig::default();
        let table = scripted(&seq, &cams[0], &cfg, 8..11);
        let ctx = SearchContext { tracks: &seq, cameras: &cams, detections: &table, cfg };
        assert_eq!(ctx.frame_search(1, 10, SearchDirection::Backward).unwrap().frame, 7);
        assert_eq!(ctx.frame_search(1, 8, SearchDirection::Forward).unwrap().frame, 11);
    }

    #[test]
    fn frame_search_exhausts() {
        let seq = static_sequence(60);
        let cams = [cam_from(0.0, 7.5)];
        let cfg = SearchConfig::default();
        let table = scripted(&seq, &cams[0], &cfg, 0..60);
        let ctx = SearchContext { tracks: &seq, cameras: &cams, detections: &table, cfg };
        assert!(ctx.frame_search(1, 50, SearchDirection::Backward).is_none());
        assert!(ctx.frame_search(1, 5, SearchDirection::Forward).is_none());
    }

    #[test]
    fn absent_id_uses_last_known_box() {
        let mut seq = static_sequence(10);
        seq.frames[5].boxes.clear();
        let cams = [cam_from(0.0, 7.5)];
        let cfg = SearchConfig::default();
        let mut table = scripted(&seq, &cams[0], &cfg, 0..0);
        // the detector still sees the player at frame 5
        table.per_camera[0][5] = table.per_camera[0][4].clone();
        let ctx = SearchContext { tracks: &seq, cameras: &cams, detections: &table, cfg };
        assert_eq!(ctx.frame_search(1, 5, SearchDirection::Backward).unwrap().frame, 5);
    }

    #[test]
    fn absent_peers_stay_in_the_scene() {
        // player 2 stands right behind player 1 as seen from camera 0
        let both = vec![player(1, 14.0, 7.5), player(2, 16.0, 7.5)];
        let seq = Sequence::new(
            (0..10)
                .map(|t| FrameRecords::new(t as f64 * 0.1, if t < 5 { both.clone() } else { Vec::new() }))
                .collect(),
        );
        let cams = [cam_from(0.0, 7.5), cam_from(14.0, -10.0)];
        let cfg = SearchConfig::default();
        let dets = |cam: &CameraModel, hidden: bool| -> Vec<Detection> {
            both.iter()
                .filter(|b| !(hidden && b.id == 2))
                .map(|b| Detection {
                    id_hint: Some(b.id),
                    ..Detection::new(project_box(b, cam, &cfg).unwrap().bbox, 0.9)
                })
                .collect()
        };
        let table = DetectionTable {
            per_camera: vec![vec![dets(&cams[0], true); 10], vec![dets(&cams[1], false); 10]],
        };
        let ctx = SearchContext { tracks: &seq, cameras: &cams, detections: &table, cfg };
        let alone = ctx.frame_search(2, 5, SearchDirection::Backward).unwrap();
        assert_eq!((alone.camera, alone.matched.id_hint), (0, Some(1)));
        let among = ctx.frame_search_among(2, &[1, 2], 5, SearchDirection::Backward).unwrap();
        assert_eq!((among.camera, among.matched.id_hint, among.inclusion), (1, Some(2), 0));
    }

    fn arb_players() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((2.0..26.0f64, 1.0..14.0f64), 2..6)
    }

    proptest! {
        #[test]
        fn inclusion_matches_brute_force(ps in arb_players(), cx in 0usize..3) {
            let cfg = SearchConfig::default();
            let cam = [cam_from(0.0, 7.5), cam_from(14.0, -1.0), cam_from(-1.0, -1.0)][cx];
            let boxes: Vec<BoxRecord> = ps.iter().enumerate().map(|(i, &(x, y))| player(i as u32, x, y)).collect();
            if let Some(v) = corner_inclusion_count(&boxes[0], &boxes, &cam, &cfg) {
                prop_assert_eq!(v.inclusion, brute_count(&boxes[0], &boxes, &cam, &cfg));
                prop_assert!(v.inclusion <= 8);
            }
        }

        #[test]
        fn inclusion_monotone_in_other_size(ps in arb_players(), grow in 1.0..3.0f64) {
            let cfg = SearchConfig::default();
            let cam = cam_from(0.0, 7.5);
            let boxes: Vec<BoxRecord> = ps.iter().enumerate().map(|(i, &(x, y))| player(i as u32, x, y)).collect();
            let mut bigger = boxes.clone();
            bigger[1].w *= grow;
            bigger[1].h *= grow;
            if let (Some(a), Some(b)) = (
                corner_inclusion_count(&boxes[0], &boxes, &cam, &cfg),
                corner_inclusion_count(&bigger[0], &bigger, &cam, &cfg),
            ) {
                prop_assert!(b.inclusion >= a.inclusion);
            }
        }

        #[test]
        fn select_camera_ignores_relabeling(ps in arb_players(), offset in 10u32..100) {
            let cfg = SearchConfig::default();
            let cams = [cam_from(0.0, 7.5), cam_from(14.0, -1.0), cam_from(28.0, 16.0)];
            let boxes: Vec<BoxRecord> = ps.iter().enumerate().map(|(i, &(x, y))| player(i as u32, x, y)).collect();
            let mut relabeled = boxes.clone();
            for b in relabeled.iter_mut().skip(1) {
                b.id += offset;
            }
            relabeled[1..].reverse();
            let a = select_camera(&boxes[0], &boxes, &cams, &cfg).map(|v| v.camera);
            let b = select_camera(&relabeled[0], &relabeled, &cams, &cfg).map(|v| v.camera);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn search_respects_direction(t0 in 0usize..30, lo in 0usize..30, len in 0usize..10, fwd: bool) {
            let seq = static_sequence(30);
            let cams = [cam_from(0.0, 7.5)];
            let cfg = SearchConfig { max_search_frames: 8, ..SearchConfig::default() };
            let table = scripted(&seq, &cams[0], &cfg, lo..lo + len);
            let ctx = SearchContext { tracks: &seq, cameras: &cams, detections: &table, cfg };
            let dir = if fwd { SearchDirection::Forward } else { SearchDirection::Backward };
            if let Some(r) = ctx.frame_search(1, t0, dir) {
                if fwd { prop_assert!(r.frame >= t0) } else { prop_assert!(r.frame <= t0) }
                prop_assert!(r.frame.abs_diff(t0) < 8);
                let dets = table.detections(r.camera, r.frame);
                prop_assert!(matches!(clarity_gate(&r.projected.bbox, dets, &cfg), Clarity::Clear(_)));
            }
        }
    }
}
