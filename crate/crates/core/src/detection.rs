//! Player detection interface, box overlap and duplicate suppression.
//!
//! Detectors are pluggable: [`OracleDetector`] perturbs ground truth for
//! simulation, [`ReplayDetector`] replays boxes produced by an external
//! model. The same types serve the BEV plane (cell units) and camera images
//! (pixel units).

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use thiserror::Error;

use crate::geometry::{BevGrid, BevImage, Rect};
use crate::records::{BoxRecord, ObjectId};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("degenerate box {0:?}")]
    Degenerate(Rect),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("oracle detector needs ground truth for frame {0}")]
    MissingGroundTruth(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub rect: Rect,
    pub confidence: f64,
    /// Identity hint carried by replayed or simulated detections.
    pub id_hint: Option<ObjectId>,
}

impl Detection {
    pub fn new(rect: Rect, confidence: f64) -> Self {
        Self {
            rect,
            confidence,
            id_hint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub timestamp: f64,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(timestamp: f64, detections: Vec<Detection>) -> Self {
        Self {
            timestamp,
            detections,
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// Intersection over union of two non-degenerate boxes.
pub fn iou(a: &Rect, b: &Rect) -> Result<f64, DetectionError> {
    for r in [a, b] {
        if r.is_degenerate() {
            return Err(DetectionError::Degenerate(*r));
        }
    }
    let inter = a.intersection_area(b);
    Ok(inter / (a.area() + b.area() - inter))
}

/// IoU that treats degenerate boxes as non-overlapping.
pub(crate) fn iou_or_zero(a: &Rect, b: &Rect) -> f64 {
    iou(a, b).unwrap_or(0.0)
}

/// Repeatedly replace the most-overlapping pair with IoU `>= threshold` by
/// their union box (keeping the higher confidence) until no such pair
/// remains.
pub fn suppress_duplicates(dets: &DetectionSet, iou_threshold: f64) -> DetectionSet {
    let mut boxes = dets.detections.clone();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let v = iou_or_zero(&boxes[i].rect, &boxes[j].rect);
                if v >= iou_threshold && best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((i, j, v));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        let b = boxes.remove(j);
        let a = &mut boxes[i];
        a.rect = a.rect.union(&b.rect);
        if b.confidence > a.confidence {
            a.confidence = b.confidence;
            a.id_hint = b.id_hint;
        }
    }
    DetectionSet::new(dets.timestamp, boxes)
}

/// Ground-truth perturbation model for the oracle detector.
///
/// Distances are in the units of the plane the oracle runs on (meters for
/// BEV, pixels for camera images).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleNoiseModel {
    /// Standard deviation of the box-center displacement.
    pub position_sigma: f64,
    /// Relative standard deviation of box width and height.
    pub size_jitter: f64,
    pub miss_rate: f64,
    /// Expected false positives per frame (Poisson).
    pub false_positive_rate: f64,
    /// Objects whose centers are closer than this produce one merged box.
    pub merge_distance: f64,
    pub clean_confidence: f64,
    pub merged_confidence: f64,
    /// Objects with lower visibility are not detected.
    pub min_visibility: f64,
}

impl Default for OracleNoiseModel {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl OracleNoiseModel {
    pub fn noiseless() -> Self {
        Self {
            position_sigma: 0.0,
            size_jitter: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            merge_distance: 0.0,
            clean_confidence: 0.9,
            merged_confidence: 0.4,
            min_visibility: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        let bad = |msg: &str| Err(DetectionError::InvalidNoise(msg.to_string()));
        if !(self.position_sigma >= 0.0 && self.size_jitter >= 0.0) {
            return bad("sigma and jitter must be non-negative");
        }
        if !(0.0..1.0).contains(&self.miss_rate) {
            return bad("miss_rate must lie in [0, 1)");
        }
        if !(self.false_positive_rate >= 0.0 && self.false_positive_rate.is_finite()) {
            return bad("false_positive_rate must be non-negative");
        }
        if !(self.merge_distance >= 0.0) {
            return bad("merge_distance must be non-negative");
        }
        for c in [self.clean_confidence, self.merged_confidence, self.min_visibility] {
            if !(0.0..=1.0).contains(&c) {
                return bad("confidences and min_visibility must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Ground-truth object presented to the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleObject {
    pub id: ObjectId,
    pub rect: Rect,
    pub visibility: f64,
}

/// Deterministic ground-truth perturbing detector.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    pub noise: OracleNoiseModel,
    pub seed: u64,
}

impl OracleDetector {
    pub fn new(noise: OracleNoiseModel, seed: u64) -> Result<Self, DetectionError> {
        noise.validate()?;
        Ok(Self { noise, seed })
    }

    /// Detections for one frame in the objects' plane units. `stream_key`
    /// selects the random stream (frame index, camera, ...). False positives
    /// are scattered over `extent`.
    pub fn detect_objects(&self, objects: &[OracleObject], extent: &Rect, stream_key: &[u64]) -> Vec<Detection> {
        let n = &self.noise;
        let mut rng = rng::stream(self.seed, stream_key);
        let visible: Vec<&OracleObject> = objects.iter().filter(|o| o.visibility >= n.min_visibility).collect();

        let groups = merge_groups(&visible, n.merge_distance);
        let pos = Normal::new(0.0, n.position_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let size = Normal::new(0.0, n.size_jitter.max(f64::MIN_POSITIVE)).expect("finite jitter");
        let mut out = Vec::with_capacity(groups.len());
        for group in groups {
            if let [single] = group[..] {
                let o = visible[single];
                // draws happen even when noise is zero so streams stay aligned
                let missed = rng.random::<f64>() < n.miss_rate;
                let (dx, dy) = (pos.sample(&mut rng), pos.sample(&mut rng));
                let (sw, sh) = (size.sample(&mut rng), size.sample(&mut rng));
                if missed {
                    continue;
                }
                let rect = if n.position_sigma == 0.0 && n.size_jitter == 0.0 {
                    o.rect
                } else {
                    let [cx, cy] = o.rect.center();
                    let w = o.rect.w * (1.0 + sw).max(0.2);
                    let h = o.rect.h * (1.0 + sh).max(0.2);
                    let clip = 4.0 * n.position_sigma;
                    Rect::from_center(cx + dx.clamp(-clip, clip), cy + dy.clamp(-clip, clip), w, h)
                };
                out.push(Detection {
                    rect,
                    confidence: n.clean_confidence,
                    id_hint: Some(o.id),
                });
            } else {
                let rect = group
                    .iter()
                    .map(|&i| visible[i].rect)
                    .reduce(|a, b| a.union(&b))
                    .expect("non-empty group");
                out.push(Detection {
                    rect,
                    confidence: n.merged_confidence,
                    id_hint: None,
                });
            }
        }

        if n.false_positive_rate > 0.0 && !extent.is_degenerate() {
            let count = Poisson::new(n.false_positive_rate).expect("positive rate").sample(&mut rng) as usize;
            let (fw, fh) = mean_size(objects).unwrap_or((extent.w * 0.02, extent.h * 0.02));
            for _ in 0..count {
                let cx = extent.x + rng.random::<f64>() * extent.w;
                let cy = extent.y + rng.random::<f64>() * extent.h;
                let rect = Rect::from_center(cx, cy, fw, fh).clamp_to(extent.right(), extent.bottom());
                if !rect.is_degenerate() {
                    out.push(Detection::new(rect, 0.1 + 0.4 * rng.random::<f64>()));
                }
            }
        }
        out
    }

    /// BEV detections in cell units for world-meter ground truth.
    pub fn detect_bev(&self, ground_truth: &[BoxRecord], grid: &BevGrid, frame_index: usize, timestamp: f64) -> DetectionSet {
        let objects: Vec<OracleObject> = ground_truth
            .iter()
            .map(|b| OracleObject {
                id: b.id,
                rect: b.footprint(),
                visibility: 1.0,
            })
            .collect();
        let detections = self
            .detect_objects(&objects, &grid.extent_world(), &[frame_index as u64])
            .into_iter()
            .filter_map(|d| {
                let rect = grid.world_to_cells(&d.rect);
                (!rect.is_degenerate()).then_some(Detection { rect, ..d })
            })
            .collect();
        DetectionSet::new(timestamp, detections)
    }
}

fn mean_size(objects: &[OracleObject]) -> Option<(f64, f64)> {
    if objects.is_empty() {
        return None;
    }
    let n = objects.len() as f64;
    Some((
        objects.iter().map(|o| o.rect.w).sum::<f64>() / n,
        objects.iter().map(|o| o.rect.h).sum::<f64>() / n,
    ))
}

/// Connected components of the "centers closer than `distance`" graph, in
/// order of first member.
fn merge_groups(objects: &[&OracleObject], distance: f64) -> Vec<Vec<usize>> {
    let n = objects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let [ax, ay] = objects[i].rect.center();
            let [bx, by] = objects[j].rect.center();
            if (ax - bx).hypot(ay - by) < distance {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// Input handed to a BEV detector for one frame.
#[derive(Debug, Clone, Copy)]
pub struct DetectorInput<'a> {
    pub frame_index: usize,
    pub timestamp: f64,
    pub grid: &'a BevGrid,
    pub bev: &'a BevImage,
    pub ground_truth: Option<&'a [BoxRecord]>,
}

/// Pluggable BEV player detector. Output boxes are in grid cell units.
pub trait BevDetector: Send {
    fn detect(&mut self, input: &DetectorInput<'_>) -> Result<DetectionSet, DetectionError>;
}

impl BevDetector for OracleDetector {
    fn detect(&mut self, input: &DetectorInput<'_>) -> Result<DetectionSet, DetectionError> {
        let gt = input
            .ground_truth
            .ok_or(DetectionError::MissingGroundTruth(input.frame_index))?;
        Ok(self.detect_bev(gt, input.grid, input.frame_index, input.timestamp))
    }
}

/// Replays externally produced detections keyed by timestamp (milliseconds).
#[derive(Debug, Clone, Default)]
pub struct ReplayDetector {
    frames: HashMap<i64, Vec<Detection>>,
}

impl ReplayDetector {
    pub fn new(sets: impl IntoIterator<Item = DetectionSet>) -> Self {
        let mut frames: HashMap<i64, Vec<Detection>> = HashMap::new();
        for set in sets {
            frames.entry(timestamp_key(set.timestamp)).or_default().extend(set.detections);
        }
        Self { frames }
    }

    pub fn frame(&self, timestamp: f64) -> &[Detection] {
        self.frames.get(&timestamp_key(timestamp)).map_or(&[], Vec::as_slice)
    }
}

impl BevDetector for ReplayDetector {
    fn detect(&mut self, input: &DetectorInput<'_>) -> Result<DetectionSet, DetectionError> {
        Ok(DetectionSet::new(input.timestamp, self.frame(input.timestamp).to_vec()))
    }
}

/// Millisecond key used to align timestamps across files.
pub fn timestamp_key(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}
