//! Simulated datasets held in memory.

use std::collections::BTreeMap;

use courtsight_core::detection::{Detection, OracleDetector};
use courtsight_core::geometry::{CameraModel, RigidTransform};
use courtsight_core::matching::DetectionTable;
use courtsight_core::records::Sequence;
use courtsight_core::reid::{EmbeddingProvider, FileEmbeddings, SyntheticEmbedder};
use courtsight_core::simulator::{
    build_rigs, camera_detections, embedding_table, generate_scenario, sample_lidar, Rig, Scenario,
};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::io::Calibration;
use crate::pipeline::{repair_tracks, run_lidar_frames, FusionContext, FusionOutput, LidarFrame, LidarPipeline, TimingReport};

/// A generated scenario with every sensor product except point clouds,
/// which are sampled on demand.
pub struct SimulatedDataset {
    pub scenario: Scenario,
    pub rigs: Vec<Rig>,
    pub ground_truth: Sequence,
    pub camera_detections: DetectionTable,
    pub embeddings: FileEmbeddings,
}

impl SimulatedDataset {
    pub fn generate(cfg: &PipelineConfig) -> Result<Self> {
        let scenario = generate_scenario(&cfg.scenario, cfg.scenario_seed)?;
        let rigs = build_rigs(&cfg.scenario)?;
        let cameras = cameras(&rigs);
        let detector = OracleDetector::new(cfg.camera_noise, cfg.camera_seed)?;
        let per_camera: Vec<Vec<Vec<Detection>>> = camera_detections(&scenario, &cameras, &detector);
        let e = &cfg.embedding;
        let embedder = SyntheticEmbedder::new(e.dim, e.anchors, e.base_sigma, e.gain, e.seed)?;
        let embeddings = embedding_table(&scenario, &cameras, &per_camera, &embedder)?;
        Ok(Self {
            ground_truth: scenario.ground_truth(),
            scenario,
            rigs,
            camera_detections: DetectionTable { per_camera },
            embeddings,
        })
    }

    pub fn cameras(&self) -> Vec<CameraModel> {
        cameras(&self.rigs)
    }

    pub fn calibration(&self) -> Calibration {
        Calibration {
            lidars: lidar_poses(&self.rigs),
            cameras: self.cameras(),
        }
    }

    pub fn len(&self) -> usize {
        self.scenario.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenario.is_empty()
    }

    /// Clouds of every rig at frame `t`, sampled in parallel.
    pub fn clouds(&self, t: usize) -> Vec<courtsight_core::geometry::PointCloud> {
        self.rigs
            .par_iter()
            .enumerate()
            .map(|(k, rig)| sample_lidar(&self.scenario, rig, k, t))
            .collect()
    }

    pub fn lidar_frame(&self, t: usize) -> LidarFrame {
        LidarFrame {
            timestamp: self.scenario.frames[t].timestamp,
            clouds: self.clouds(t),
            ground_truth: Some(self.ground_truth.frames[t].boxes.clone()),
        }
    }
}

fn cameras(rigs: &[Rig]) -> Vec<CameraModel> {
    rigs.iter().map(|r| r.camera).collect()
}

/// LiDAR extrinsics keyed by the frame id `sample_lidar` stamps on clouds.
pub fn lidar_poses(rigs: &[Rig]) -> BTreeMap<String, RigidTransform> {
    rigs.iter()
        .enumerate()
        .map(|(k, r)| (format!("lidar{k}"), r.lidar_to_world))
        .collect()
}

/// LiDAR-only and fused tracks of a simulated dataset, computed in memory.
pub struct SimulatedRun {
    pub dataset: SimulatedDataset,
    pub lidar: Sequence,
    pub fusion: FusionOutput,
    pub timing: TimingReport,
}

/// Generate the scenario of `cfg`, track it from sampled point clouds with
/// the oracle detector and repair identities with the dataset's camera
/// detections and embeddings.
pub fn run_simulated(cfg: &PipelineConfig) -> Result<SimulatedRun> {
    let dataset = SimulatedDataset::generate(cfg)?;
    let detector = OracleDetector::new(cfg.bev_noise, cfg.detector_seed)?;
    let mut pipeline = LidarPipeline::new(
        lidar_poses(&dataset.rigs),
        cfg.region.clone(),
        cfg.grid,
        Box::new(detector),
        cfg.tracker,
    )?;
    let (lidar, timing) = run_lidar_frames(&mut pipeline, (0..dataset.len()).map(|t| Ok(dataset.lidar_frame(t))))?;
    let cameras = dataset.cameras();
    let ctx = FusionContext {
        cameras: &cameras,
        detections: &dataset.camera_detections,
        embeddings: Some(&dataset.embeddings as &dyn EmbeddingProvider),
        search: cfg.search,
        reid: cfg.reid,
        neighbor_radius: cfg.neighbor_radius,
    };
    let fusion = repair_tracks(&lidar, &ctx);
    let timing = TimingReport {
        fusion_reid: fusion.elapsed,
        ..timing
    };
    Ok(SimulatedRun {
        dataset,
        lidar,
        fusion,
        timing,
    })
}
