//! File-based subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use courtsight_core::detection::{timestamp_key, BevDetector, Detection, DetectionSet, OracleDetector, ReplayDetector};
use courtsight_core::geometry::{BevGrid, Rect};
use courtsight_core::matching::DetectionTable;
use courtsight_core::metrics::{evaluate as evaluate_metrics, MatchingConfig, MetricsReport};
use courtsight_core::records::{BoxRecord, Sequence};
use courtsight_core::reid::{EmbeddingProvider, FileEmbeddings, SyntheticEmbedder};
use courtsight_core::simulator::render_camera_gt;
use log::info;
use rayon::prelude::*;

use crate::config::{DetectorSource, EmbeddingSource, PipelineConfig};
use crate::error::{CliError, Result};
use crate::io::{
    cloud_file_name, format_camera_gt, format_cloud, format_detections, format_sequence, frame_times, group_frames,
    list_cloud_frames, parse_cloud, parse_detections, parse_kv, parse_records, read_sequence, read_text, write_text,
    Calibration,
};
use crate::pipeline::{
    format_frame_refs, format_session_log, repair_tracks, run_lidar_frames, FusionContext, LidarFrame, LidarPipeline,
    SessionStatus, TimingReport,
};
use crate::sim::SimulatedDataset;

pub const TRACKS_LIDAR: &str = "tracks_lidar.txt";
pub const TRACKS_FUSION: &str = "tracks_fusion.txt";
pub const SESSIONS: &str = "sessions.txt";
pub const FRAME_REFS: &str = "frame_refs.txt";
pub const TIMING_LIDAR: &str = "timing_lidar.txt";
pub const TIMING_FUSION: &str = "timing_fusion.txt";
pub const COMPARISON: &str = "comparison.txt";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";

/// Write a complete synthetic dataset into `paths.output`.
pub fn simulate(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.paths.output;
    let ds = SimulatedDataset::generate(cfg)?;
    write_text(&out.join("calibration.cfg"), &ds.calibration().format())?;
    write_text(&out.join("gt.txt"), &format_sequence(&ds.ground_truth))?;
    let cameras = ds.cameras();
    for (k, cam) in cameras.iter().enumerate() {
        let gt: Vec<_> = (0..ds.len())
            .map(|t| (ds.scenario.frames[t].timestamp, render_camera_gt(&ds.scenario, cam, t)))
            .collect();
        write_text(&out.join("camera_gt").join(format!("cam{k}.txt")), &format_camera_gt(&gt))?;
        let sets: Vec<DetectionSet> = ds.camera_detections.per_camera[k]
            .iter()
            .enumerate()
            .map(|(t, d)| DetectionSet::new(ds.scenario.frames[t].timestamp, d.clone()))
            .collect();
        write_text(&out.join("camera").join(format!("cam{k}.txt")), &format_detections(&sets))?;
    }
    let mut lines: Vec<(usize, usize, u32, String)> = Vec::new();
    for t in 0..ds.len() {
        for (k, dets) in ds.camera_detections.per_camera.iter().enumerate() {
            for d in &dets[t] {
                let Some(id) = d.id_hint else { continue };
                let v = ds
                    .embeddings
                    .get(id, t, k)
                    .ok_or_else(|| CliError::Internal(format!("no embedding for id {id} frame {t} camera {k}")))?;
                lines.push((t, k, id, FileEmbeddings::format_line(id, t, k, v)));
            }
        }
    }
    lines.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    let text: String = lines.into_iter().map(|l| l.3 + "\n").collect();
    write_text(&out.join("embeddings.txt"), &text)?;
    if cfg.write_clouds {
        let dir = out.join("clouds");
        for t in 0..ds.len() {
            let clouds = ds.clouds(t);
            for c in &clouds {
                write_text(&dir.join(cloud_file_name(t, &c.frame_id)), &format_cloud(c))?;
            }
        }
    }
    info!("simulated {} frames into {}", ds.len(), out.display());
    Ok(())
}

/// Cell-unit copies of world-meter detections.
fn to_cells(set: &DetectionSet, grid: &BevGrid) -> DetectionSet {
    let r = grid.resolution;
    DetectionSet::new(
        set.timestamp,
        set.detections
            .iter()
            .map(|d| Detection {
                rect: Rect::new((d.rect.x - grid.origin[0]) / r, (d.rect.y - grid.origin[1]) / r, d.rect.w / r, d.rect.h / r),
                ..*d
            })
            .collect(),
    )
}

struct LidarInputs {
    calibration: Calibration,
    frames: Vec<Vec<PathBuf>>,
    /// Ground truth by timestamp key, for the oracle detector.
    gt: Option<BTreeMap<i64, Vec<BoxRecord>>>,
}

fn load_lidar_inputs(cfg: &PipelineConfig) -> Result<(LidarInputs, Box<dyn BevDetector>)> {
    let p = &cfg.paths;
    if !p.calibration.exists() {
        return Err(CliError::Config(format!("missing calibration file {}", p.calibration.display())));
    }
    let calibration = Calibration::load(&p.calibration)?;
    if !p.clouds.is_dir() {
        return Err(CliError::Data(format!("cloud directory {} not found", p.clouds.display())));
    }
    let frames = list_cloud_frames(&p.clouds)?;
    if frames.is_empty() {
        return Err(CliError::Data(format!("no point-cloud frames in {}", p.clouds.display())));
    }
    let (gt, detector): (_, Box<dyn BevDetector>) = match cfg.detector_source {
        DetectorSource::Oracle => {
            let records = parse_records(&read_text(&p.gt)?, &p.gt)?;
            let mut by_key: BTreeMap<i64, Vec<BoxRecord>> = BTreeMap::new();
            for (t, b) in records {
                by_key.entry(timestamp_key(t)).or_default().push(b);
            }
            (Some(by_key), Box::new(OracleDetector::new(cfg.bev_noise, cfg.detector_seed)?))
        }
        DetectorSource::Replay => {
            let sets = parse_detections(&read_text(&p.detections)?, &p.detections)?;
            let cells: Vec<DetectionSet> = sets.iter().map(|s| to_cells(s, &cfg.grid)).collect();
            (None, Box::new(ReplayDetector::new(cells)))
        }
    };
    Ok((LidarInputs { calibration, frames, gt }, detector))
}

fn read_frame(files: &[PathBuf], gt: Option<&BTreeMap<i64, Vec<BoxRecord>>>) -> Result<LidarFrame> {
    let clouds = files
        .par_iter()
        .map(|f| parse_cloud(&read_text(f)?, f))
        .collect::<Result<Vec<_>>>()?;
    let timestamp = clouds.iter().map(|c| c.timestamp).fold(f64::INFINITY, f64::min);
    Ok(LidarFrame {
        timestamp,
        ground_truth: gt.map(|g| g.get(&timestamp_key(timestamp)).cloned().unwrap_or_default()),
        clouds,
    })
}

struct TrackRun {
    tracks: Sequence,
    timing: TimingReport,
    calibration: Calibration,
}

fn run_tracking(cfg: &PipelineConfig) -> Result<TrackRun> {
    let (inputs, detector) = load_lidar_inputs(cfg)?;
    let mut pipeline = LidarPipeline::new(
        inputs.calibration.lidars.clone(),
        cfg.region.clone(),
        cfg.grid,
        detector,
        cfg.tracker,
    )?;
    let gt = inputs.gt.as_ref();
    let (tracks, timing) = run_lidar_frames(&mut pipeline, inputs.frames.iter().map(|f| read_frame(f, gt)))?;
    Ok(TrackRun {
        tracks,
        timing,
        calibration: inputs.calibration,
    })
}

/// LiDAR-only tracking: `tracks_lidar.txt` and `timing_lidar.txt`.
pub fn track(cfg: &PipelineConfig) -> Result<Sequence> {
    let run = run_tracking(cfg)?;
    let out = &cfg.paths.output;
    write_text(&out.join(TRACKS_LIDAR), &format_sequence(&run.tracks))?;
    write_text(&out.join(TIMING_LIDAR), &run.timing.format())?;
    info!("{} frames tracked, {:.1} frames/s", run.tracks.len(), run.timing.frames_per_second());
    Ok(run.tracks)
}

/// Camera detections from `cam<k>.txt`, indexed by the frames of `tracks`.
fn load_camera_detections(dir: &Path, cameras: usize, tracks: &Sequence) -> Result<DetectionTable> {
    let index: BTreeMap<i64, usize> = tracks
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| (timestamp_key(f.timestamp), i))
        .collect();
    let mut per_camera = Vec::with_capacity(cameras);
    for k in 0..cameras {
        let path = dir.join(format!("cam{k}.txt"));
        let mut frames: Vec<Vec<Detection>> = vec![Vec::new(); tracks.len()];
        if path.exists() {
            for set in parse_detections(&read_text(&path)?, &path)? {
                if let Some(&i) = index.get(&timestamp_key(set.timestamp)) {
                    frames[i] = set.detections;
                }
            }
        } else {
            log::warn!("no camera detections at {}", path.display());
        }
        per_camera.push(frames);
    }
    Ok(DetectionTable { per_camera })
}

/// Tracking plus occlusion repair: the LiDAR-only outputs of [`track`],
/// repaired tracks, session log, selected views and timing.
pub fn track_fusion(cfg: &PipelineConfig) -> Result<Sequence> {
    let run = run_tracking(cfg)?;
    write_text(&cfg.paths.output.join(TRACKS_LIDAR), &format_sequence(&run.tracks))?;
    write_text(&cfg.paths.output.join(TIMING_LIDAR), &run.timing.format())?;
    let cameras = &run.calibration.cameras;
    let detections = load_camera_detections(&cfg.paths.camera, cameras.len(), &run.tracks)?;
    let e = &cfg.embedding;
    let provider: Option<Box<dyn EmbeddingProvider>> = match e.source {
        EmbeddingSource::File if cfg.paths.embeddings.exists() => {
            let text = read_text(&cfg.paths.embeddings)?;
            Some(Box::new(FileEmbeddings::parse(&text).map_err(|err| CliError::Data(format!(
                "{}: {err}",
                cfg.paths.embeddings.display()
            )))?))
        }
        EmbeddingSource::File => {
            log::warn!("embedding file {} not found; sessions stay unrepaired", cfg.paths.embeddings.display());
            None
        }
        EmbeddingSource::Synthetic => Some(Box::new(SyntheticEmbedder::new(e.dim, e.anchors, e.base_sigma, e.gain, e.seed)?)),
        EmbeddingSource::None => None,
    };
    let ctx = FusionContext {
        cameras,
        detections: &detections,
        embeddings: provider.as_deref(),
        search: cfg.search,
        reid: cfg.reid,
        neighbor_radius: cfg.neighbor_radius,
    };
    let start = Instant::now();
    let fused = repair_tracks(&run.tracks, &ctx);
    let timing = TimingReport {
        fusion_reid: fused.elapsed,
        wall: run.timing.wall + start.elapsed(),
        ..run.timing
    };
    let out = &cfg.paths.output;
    write_text(&out.join(TRACKS_FUSION), &format_sequence(&fused.tracks))?;
    write_text(&out.join(SESSIONS), &format_session_log(&fused.sessions))?;
    write_text(&out.join(FRAME_REFS), &format_frame_refs(&fused.sessions))?;
    write_text(&out.join(TIMING_FUSION), &timing.format())?;
    let repaired = fused.sessions.iter().filter(|s| s.status == SessionStatus::Repaired).count();
    info!("{} occlusion sessions, {repaired} repaired", fused.sessions.len());
    Ok(fused.tracks)
}

/// `label=path` or a bare path labelled by its file stem.
pub fn labelled(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((l, p)) if !l.is_empty() && !l.contains('/') => (l.to_string(), PathBuf::from(p)),
        _ => {
            let p = PathBuf::from(arg);
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("tracks");
            (stem.strip_prefix("tracks_").unwrap_or(stem).to_string(), p)
        }
    }
}

const TABLE_KEYS: [&str; 10] = ["MOTA", "IDF1", "HOTA", "DetA", "AssA", "R_ID", "IDSW", "FP", "FN", "N_dis"];

fn comparison_table(rows: &[(String, BTreeMap<String, String>)]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<12}", "method");
    for k in TABLE_KEYS {
        let _ = write!(s, " {k:>9}");
    }
    s.push('\n');
    for (label, kv) in rows {
        let _ = write!(s, "{label:<12}");
        for k in TABLE_KEYS {
            let v = kv.get(k).map_or("-", String::as_str);
            let shown = match v.parse::<f64>() {
                Ok(x) if v.contains('.') => format!("{x:.3}"),
                _ => v.to_string(),
            };
            let _ = write!(s, " {shown:>9}");
        }
        s.push('\n');
    }
    s
}

/// Score each track file against `paths.gt`; writes `metrics_<label>.txt`
/// per input and a side-by-side table.
pub fn evaluate(cfg: &PipelineConfig, inputs: &[String]) -> Result<Vec<(String, MetricsReport)>> {
    if inputs.is_empty() {
        return Err(CliError::Config("evaluate needs at least one track file".into()));
    }
    let gt = read_sequence(&cfg.paths.gt)?;
    if gt.is_empty() {
        return Err(CliError::Data(format!("{} has no ground truth", cfg.paths.gt.display())));
    }
    let times: Vec<f64> = gt.frames.iter().map(|f| f.timestamp).collect();
    let matching = match cfg.distance_threshold {
        Some(d) => MatchingConfig::new(d)?,
        None => MatchingConfig::from_ground_truth(&gt)?,
    };
    let mut reports = Vec::new();
    for arg in inputs {
        let (label, path) = labelled(arg);
        let records = parse_records(&read_text(&path)?, &path)?;
        let known: std::collections::BTreeSet<i64> = times.iter().map(|t| timestamp_key(*t)).collect();
        if let Some(t) = frame_times(&records).into_iter().find(|t| !known.contains(&timestamp_key(*t))) {
            return Err(CliError::Data(format!(
                "{}: frame t={t:.3} is not in the ground truth",
                path.display()
            )));
        }
        let pred = group_frames(&records, &times, &path)?;
        let report = evaluate_metrics(&gt, &pred, &matching, cfg.sweep)?;
        write_text(&cfg.paths.output.join(format!("metrics_{label}.txt")), &report.to_kv())?;
        reports.push((label, report));
    }
    let rows: Vec<(String, BTreeMap<String, String>)> = reports
        .iter()
        .map(|(l, r)| Ok((l.clone(), parse_kv(&r.to_kv(), Path::new(l))?)))
        .collect::<Result<_>>()?;
    write_text(&cfg.paths.output.join(COMPARISON), &comparison_table(&rows))?;
    Ok(reports)
}

/// Comparison table and `method,metric,value` lines from metrics files.
/// Without explicit inputs, every `metrics_*.txt` in `paths.output` is used.
pub fn report(cfg: &PipelineConfig, inputs: &[String]) -> Result<String> {
    let mut files: Vec<(String, PathBuf)> = inputs
        .iter()
        .map(|a| {
            let (l, p) = labelled(a);
            (l.strip_prefix("metrics_").map(str::to_string).unwrap_or(l), p)
        })
        .collect();
    if files.is_empty() {
        let dir = &cfg.paths.output;
        let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(dir, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if let Some(label) = name.strip_prefix("metrics_").and_then(|n| n.strip_suffix(".txt")) {
                files.push((label.to_string(), path.clone()));
            }
        }
        files.sort();
    }
    if files.is_empty() {
        return Err(CliError::Data(format!("no metrics files in {}", cfg.paths.output.display())));
    }
    let rows = files
        .iter()
        .map(|(l, p)| Ok((l.clone(), parse_kv(&read_text(p)?, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let table = comparison_table(&rows);
    let mut csv = String::from("method,metric,value\n");
    for (label, kv) in &rows {
        for (k, v) in kv {
            let _ = writeln!(csv, "{label},{k},{v}");
        }
    }
    write_text(&cfg.paths.output.join(REPORT_TXT), &table)?;
    write_text(&cfg.paths.output.join(REPORT_CSV), &csv)?;
    Ok(format!("{table}\n{csv}"))
}
