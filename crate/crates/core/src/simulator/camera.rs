use nalgebra::Point3;

use super::{Scenario, SimulatorError};
use crate::detection::{Detection, OracleDetector, OracleObject};
use crate::geometry::{CameraModel, Rect};
use crate::records::ObjectId;
use crate::reid::{EmbeddingVector, FileEmbeddings, SyntheticEmbedder};

/// Points sampled around each of the two cylinder rims.
const RIM_SAMPLES: usize = 32;
const MIN_DEPTH: f64 = 0.05;

/// Ground-truth image box of one player in one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraGtBox {
    pub id: ObjectId,
    /// Pixel box clamped to the image.
    pub bbox: Rect,
    /// Fraction of `bbox` not covered by nearer players' boxes.
    pub visibility: f64,
    /// Camera depth of the body axis at mid-height.
    pub depth: f64,
}

/// Image boxes of all players in front of `camera` at frame `frame`, in
/// player order.
pub fn render_camera_gt(scenario: &Scenario, camera: &CameraModel, frame: usize) -> Vec<CameraGtBox> {
    let body = scenario.cfg.body;
    let mut boxes = Vec::new();
    'players: for p in &scenario.frames[frame].poses {
        let mut pixels = Vec::with_capacity(2 * RIM_SAMPLES);
        for k in 0..RIM_SAMPLES {
            let a = std::f64::consts::TAU * k as f64 / RIM_SAMPLES as f64;
            let (x, y) = (p.x + body.radius * a.cos(), p.y + body.radius * a.sin());
            for z in [0.0, body.height] {
                let q = Point3::new(x, y, z);
                if camera.depth(&q) <= MIN_DEPTH {
                    continue 'players;
                }
                match camera.project_point(&q) {
                    Ok(px) => pixels.push(px),
                    Err(_) => continue 'players,
                }
            }
        }
        let Some(unclamped) = Rect::bounding(pixels) else { continue };
        let bbox = unclamped.clamp_to(camera.width(), camera.height());
        if bbox.is_degenerate() {
            continue;
        }
        let depth = camera.depth(&Point3::new(p.x, p.y, body.height / 2.0));
        boxes.push(CameraGtBox {
            id: p.id,
            bbox,
            visibility: 1.0,
            depth,
        });
    }
    let snapshot = boxes.clone();
    for b in boxes.iter_mut() {
        let covers: Vec<Rect> = snapshot
            .iter()
            .filter(|o| o.id != b.id && o.depth < b.depth)
            .filter_map(|o| o.bbox.intersection(&b.bbox))
            .collect();
        b.visibility = (1.0 - union_area(&covers) / b.bbox.area()).clamp(0.0, 1.0);
    }
    boxes
}

/// Area of a union of rectangles by coordinate compression.
fn union_area(rects: &[Rect]) -> f64 {
    if rects.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.x, r.right()]).collect();
    let mut ys: Vec<f64> = rects.iter().flat_map(|r| [r.y, r.bottom()]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut area = 0.0;
    for xw in xs.windows(2) {
        let mx = (xw[0] + xw[1]) / 2.0;
        for yw in ys.windows(2) {
            let my = (yw[0] + yw[1]) / 2.0;
            if rects.iter().any(|r| r.contains([mx, my])) {
                area += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    area
}

/// Appearance feature of `id` seen at `visibility`.
pub fn synth_embedding(embedder: &SyntheticEmbedder, id: ObjectId, visibility: f64, keys: &[u64]) -> EmbeddingVector {
    embedder.embed_identity(id, 1.0 - visibility.clamp(0.0, 1.0), keys)
}

/// Camera detections for every camera and frame, indexed `[camera][frame]`.
pub fn camera_detections(
    scenario: &Scenario,
    cameras: &[CameraModel],
    detector: &OracleDetector,
) -> Vec<Vec<Vec<Detection>>> {
    cameras
        .iter()
        .enumerate()
        .map(|(ci, cam)| {
            let extent = Rect::new(0.0, 0.0, cam.width(), cam.height());
            (0..scenario.len())
                .map(|t| {
                    let objects: Vec<OracleObject> = render_camera_gt(scenario, cam, t)
                        .into_iter()
                        .map(|g| OracleObject {
                            id: g.id,
                            rect: g.bbox,
                            visibility: g.visibility,
                        })
                        .collect();
                    detector.detect_objects(&objects, &extent, &[t as u64, ci as u64])
                })
                .collect()
        })
        .collect()
}

/// Parameters of the synthetic appearance model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub base_sigma: f64,
    /// Noise growth with occlusion.
    pub gain: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: crate::reid::DEFAULT_EMBEDDING_DIM,
            base_sigma: 0.05,
            gain: 2.0,
        }
    }
}

/// One feature per identified camera detection, drawn at that player's
/// ground-truth visibility. Detections without an identity get none.
pub fn embedding_table(
    scenario: &Scenario,
    cameras: &[CameraModel],
    detections: &[Vec<Vec<Detection>>],
    embedder: &SyntheticEmbedder,
) -> Result<FileEmbeddings, SimulatorError> {
    if detections.len() != cameras.len() {
        return Err(SimulatorError::Config(format!(
            "{} detection tables for {} cameras",
            detections.len(),
            cameras.len()
        )));
    }
    let mut table = FileEmbeddings::default();
    for (ci, (cam, per_frame)) in cameras.iter().zip(detections).enumerate() {
        for (t, dets) in per_frame.iter().enumerate().take(scenario.len()) {
            let gt = render_camera_gt(scenario, cam, t);
            for d in dets {
                let Some(id) = d.id_hint else { continue };
                let vis = gt.iter().find(|g| g.id == id).map_or(0.0, |g| g.visibility);
                table.insert(id, t, ci, synth_embedding(embedder, id, vis, &[t as u64, ci as u64]));
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::super::{build_rigs, PlayerPose, ScenarioConfig, ScenarioFrame};
    use super::*;
    use crate::reid::AnchorKind;

    fn scene(players: &[(f64, f64)]) -> (Scenario, CameraModel) {
        scene_from(players, 2.0)
    }

    fn scene_from(players: &[(f64, f64)], camera_z: f64) -> (Scenario, CameraModel) {
        let mut cfg = ScenarioConfig {
            player_count: players.len(),
            duration_s: 0.1,
            ..ScenarioConfig::default()
        };
        cfg.rigs[0].position[2] = camera_z;
        let poses = players
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| PlayerPose {
                id: i as u32 + 1,
                x,
                y,
                heading: 0.0,
                vx: 0.0,
                vy: 0.0,
            })
            .collect();
        let cam = build_rigs(&cfg).unwrap()[0].camera;
        let sc = Scenario {
            cfg,
            seed: 1,
            frames: vec![ScenarioFrame { timestamp: 0.0, poses }],
        };
        (sc, cam)
    }

    /// Uncovered fraction of `target` counted on a unit pixel grid.
    fn pixel_visibility(target: &Rect, covers: &[Rect]) -> f64 {
        let (mut total, mut free) = (0u64, 0u64);
        let (x0, y0) = (target.x.floor() as i64, target.y.floor() as i64);
        for py in y0..target.bottom().ceil() as i64 {
            for px in x0..target.right().ceil() as i64 {
                let c = [px as f64 + 0.5, py as f64 + 0.5];
                if !target.contains(c) {
                    continue;
                }
                total += 1;
                if !covers.iter().any(|r| r.contains(c)) {
                    free += 1;
                }
            }
        }
        free as f64 / total as f64
    }

    #[test]
    fn lone_player_fully_visible() {
        let (sc, cam) = scene(&[(14.0, 7.5)]);
        let gt = render_camera_gt(&sc, &cam, 0);
        assert_eq!(gt.len(), 1);
        assert_eq!(gt[0].visibility, 1.0);
    }

    #[test]
    fn player_behind_another_is_hidden() {
        // camera below head height so the near box encloses the far one
        let (sc, cam) = scene_from(&[(14.0, 3.0), (14.0, 9.0)], 1.2);
        let gt = render_camera_gt(&sc, &cam, 0);
        let far = gt.iter().find(|g| g.id == 2).unwrap();
        let near = gt.iter().find(|g| g.id == 1).unwrap();
        assert_eq!(near.visibility, 1.0);
        assert_eq!(far.visibility, 0.0);
    }

    #[test]
    fn half_covered_matches_pixel_count() {
        // shift the far player sideways until half its box is covered
        let (sc0, cam) = scene(&[(14.0, 3.0), (14.0, 9.0)]);
        let gt0 = render_camera_gt(&sc0, &cam, 0);
        let near_w = gt0[0].bbox.w;
        let far_w = gt0[1].bbox.w;
        let px_per_m = far_w / 0.6;
        let shift = (near_w / 2.0) / px_per_m;
        let (sc, cam) = scene(&[(14.0, 3.0), (14.0 + shift, 9.0)]);
        let gt = render_camera_gt(&sc, &cam, 0);
        let (near, far) = (gt[0], gt[1]);
        let oracle = pixel_visibility(&far.bbox, &[near.bbox]);
        assert!((far.visibility - oracle).abs() < 0.01, "{} vs {}", far.visibility, oracle);
        assert!((far.visibility - 0.5).abs() <= 0.05, "visibility {}", far.visibility);
    }

    #[test]
    fn union_area_of_overlaps() {
        let a = Rect::new(0.0, 0.0, 2.0, 2.0);
        let b = Rect::new(1.0, 1.0, 2.0, 2.0);
        assert!((union_area(&[a, b]) - 7.0).abs() < 1e-12);
        assert_eq!(union_area(&[a, a]), 4.0);
    }

    #[test]
    fn player_behind_camera_omitted() {
        let (sc, cam) = scene(&[(14.0, -3.0)]);
        assert!(render_camera_gt(&sc, &cam, 0).is_empty());
    }

    #[test]
    fn embedding_examples() {
        let e = SyntheticEmbedder::new(128, AnchorKind::Random, 0.0, 2.0, 9).unwrap();
        let a = synth_embedding(&e, 3, 1.0, &[0]);
        assert_eq!(a.values(), &e.anchor(3)[..]);
        for seed in 0..20 {
            let e = SyntheticEmbedder::new(128, AnchorKind::Random, 0.0, 2.0, seed).unwrap();
            let c = synth_embedding(&e, 1, 1.0, &[0]).cosine(&synth_embedding(&e, 2, 1.0, &[0])).unwrap();
            assert!(c.abs() < 0.3);
        }
        let noisy = SyntheticEmbedder::new(128, AnchorKind::Random, 0.3, 2.0, 4).unwrap();
        let anchor = EmbeddingVector::new(noisy.anchor(5)).unwrap();
        let mean_cos = |vis: f64| {
            (0..200u64)
                .map(|k| synth_embedding(&noisy, 5, vis, &[k]).cosine(&anchor).unwrap())
                .sum::<f64>()
                / 200.0
        };
        assert!(mean_cos(1.0) >= mean_cos(0.2));
    }
}
