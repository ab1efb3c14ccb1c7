//! Simulated point clouds through the BEV chain into the tracker.

use courtsight_core::detection::OracleDetector;
use courtsight_core::detection::OracleNoiseModel;
use courtsight_core::geometry::{filter_region, merge_clouds, rasterize_bev, BevGrid, CourtRegion, Rect, DEFAULT_MAX_SKEW_S};
use courtsight_core::metrics::{evaluate, MatchingConfig};
use courtsight_core::records::{FrameRecords, Sequence};
use courtsight_core::simulator::{build_rigs, generate_scenario, sample_lidar, ScenarioConfig};
use courtsight_core::tracker::{Tracker, TrackerConfig};

fn scene() -> ScenarioConfig {
    ScenarioConfig {
        player_count: 3,
        duration_s: 3.0,
        ..ScenarioConfig::default()
    }
}

#[test]
fn every_player_leaves_points_in_its_bev_footprint() {
    let cfg = scene();
    let scenario = generate_scenario(&cfg, 4).unwrap();
    let rigs = build_rigs(&cfg).unwrap();
    let poses: Vec<_> = rigs.iter().map(|r| r.lidar_to_world).collect();
    let region = CourtRegion::rectangle(-1.0, -1.0, 29.0, 16.0, 0.2, 2.3).unwrap();
    let grid = BevGrid::default();
    let gt = scenario.ground_truth();
    for t in [0, 10, 29] {
        let clouds: Vec<_> = rigs.iter().enumerate().map(|(k, r)| sample_lidar(&scenario, r, k, t)).collect();
        let merged = merge_clouds(&clouds, &poses, DEFAULT_MAX_SKEW_S).unwrap();
        let court = filter_region(&merged, &region);
        // the floor is cut away; only bodies remain
        assert!(court.points.iter().all(|p| p.z >= 0.2 && p.z <= 2.3));
        let bev = rasterize_bev(&court, &grid).unwrap();
        let mut inside = 0;
        for b in &gt.frames[t].boxes {
            // range noise scatters a few hits just outside the body radius
            let n = bev.sum_in(&grid.world_to_cells(&Rect::from_center(b.cx, b.cy, 1.5 * b.w, 1.5 * b.h)));
            assert!(n > 20, "player {} at frame {t} has {n} points", b.id);
            inside += n;
        }
        assert_eq!(inside, bev.total(), "points off every player at frame {t}");
    }
}

#[test]
fn noiseless_oracle_tracks_separated_players_perfectly() {
    let cfg = scene();
    let scenario = generate_scenario(&cfg, 4).unwrap();
    let gt = scenario.ground_truth();
    let grid = BevGrid::default();
    let detector = OracleDetector::new(OracleNoiseModel::noiseless(), 0).unwrap();
    let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
    let frames: Vec<FrameRecords> = gt
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let mut set = detector.detect_bev(&f.boxes, &grid, t, f.timestamp);
            for d in &mut set.detections {
                d.rect = grid.cells_to_world(&d.rect);
            }
            FrameRecords::new(f.timestamp, tracker.step(&set).unwrap())
        })
        .collect();
    let pred = Sequence::new(frames);
    let m = MatchingConfig::from_ground_truth(&gt).unwrap();
    let r = evaluate(&gt, &pred, &m, true).unwrap();
    assert_eq!((r.mota, r.idf1, r.hota, r.idsw), (1.0, 1.0, 1.0, 0));
}
