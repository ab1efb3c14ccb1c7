//! Line-oriented text formats.
//!
//! | file | line format |
//! |---|---|
//! | ground truth / tracks | `t id cx cy w h` (world meters) |
//! | detections | `t id_hint x y w h conf` (`id_hint` is -1 when unknown) |
//! | camera ground truth | `t id x y w h visibility` (pixels) |
//! | point cloud | header `frame=<name> t=<seconds>`, then `x y z` |
//! | embeddings | `id frame camera v1 .. vd` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use courtsight_core::detection::{timestamp_key, Detection, DetectionSet};
use courtsight_core::geometry::{CameraModel, PointCloud, Rect, RigidTransform};
use courtsight_core::records::{BoxRecord, FrameRecords, ObjectId, Sequence};
use courtsight_core::simulator::CameraGtBox;
use nalgebra::{Matrix3, Point3, Vector3};

use crate::config::ConfigMap;
use crate::error::{CliError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Write `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn fields<'a>(line: &'a str, n: usize, path: &Path, line_no: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != n {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("expected {n} fields, found {}", f.len()),
        });
    }
    Ok(f)
}

fn num<T: std::str::FromStr>(s: &str, what: &str, path: &Path, line_no: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg: format!("bad {what} {s:?}: {e}"),
    })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

// ---- boxes ----

pub fn format_sequence(seq: &Sequence) -> String {
    let mut s = String::new();
    for f in &seq.frames {
        for b in &f.boxes {
            let _ = writeln!(s, "{:.3} {} {:.4} {:.4} {:.4} {:.4}", f.timestamp, b.id, b.cx, b.cy, b.w, b.h);
        }
    }
    s
}

/// `(t, box)` records in file order.
pub fn parse_records(text: &str, path: &Path) -> Result<Vec<(f64, BoxRecord)>> {
    content_lines(text)
        .map(|(n, line)| {
            let f = fields(line, 6, path, n)?;
            let t: f64 = num(f[0], "timestamp", path, n)?;
            let id: ObjectId = num(f[1], "id", path, n)?;
            let vals = f[2..]
                .iter()
                .map(|s| num::<f64>(s, "coordinate", path, n))
                .collect::<Result<Vec<_>>>()?;
            if !t.is_finite() || vals.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    msg: "non-finite value".into(),
                });
            }
            Ok((t, BoxRecord::new(id, vals[0], vals[1], vals[2], vals[3])))
        })
        .collect()
}

/// Sorted distinct timestamps of `records`.
pub fn frame_times(records: &[(f64, BoxRecord)]) -> Vec<f64> {
    let mut by_key: BTreeMap<i64, f64> = BTreeMap::new();
    for (t, _) in records {
        by_key.entry(timestamp_key(*t)).or_insert(*t);
    }
    by_key.into_values().collect()
}

/// One frame per entry of `times`; every record must fall on one of them.
pub fn group_frames(records: &[(f64, BoxRecord)], times: &[f64], path: &Path) -> Result<Sequence> {
    let index: BTreeMap<i64, usize> = times.iter().enumerate().map(|(i, t)| (timestamp_key(*t), i)).collect();
    let mut frames: Vec<FrameRecords> = times.iter().map(|&t| FrameRecords::new(t, Vec::new())).collect();
    for (t, b) in records {
        let i = index.get(&timestamp_key(*t)).ok_or_else(|| {
            CliError::Data(format!("{}: timestamp {t:.3} is outside the reference frames", path.display()))
        })?;
        frames[*i].boxes.push(*b);
    }
    for f in &frames {
        if !f.has_unique_ids() {
            return Err(CliError::Data(format!(
                "{}: duplicate id at t={:.3}",
                path.display(),
                f.timestamp
            )));
        }
    }
    Ok(Sequence::new(frames))
}

/// A box file whose frames are its own distinct timestamps.
pub fn read_sequence(path: &Path) -> Result<Sequence> {
    let records = parse_records(&read_text(path)?, path)?;
    let times = frame_times(&records);
    group_frames(&records, &times, path)
}

// ---- detections ----

pub fn format_detections(sets: &[DetectionSet]) -> String {
    let mut s = String::new();
    for set in sets {
        for d in &set.detections {
            let id = d.id_hint.map_or(-1, i64::from);
            let r = d.rect;
            let _ = writeln!(s, "{:.3} {id} {:.3} {:.3} {:.3} {:.3} {:.3}", set.timestamp, r.x, r.y, r.w, r.h, d.confidence);
        }
    }
    s
}

/// Detections grouped by timestamp, in time order.
pub fn parse_detections(text: &str, path: &Path) -> Result<Vec<DetectionSet>> {
    let mut by_key: BTreeMap<i64, DetectionSet> = BTreeMap::new();
    for (n, line) in content_lines(text) {
        let f = fields(line, 7, path, n)?;
        let t: f64 = num(f[0], "timestamp", path, n)?;
        let id: i64 = num(f[1], "id_hint", path, n)?;
        let v = f[2..]
            .iter()
            .map(|s| num::<f64>(s, "value", path, n))
            .collect::<Result<Vec<_>>>()?;
        let id_hint = if id < 0 {
            None
        } else {
            Some(ObjectId::try_from(id).map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                line: n,
                msg: e.to_string(),
            })?)
        };
        by_key
            .entry(timestamp_key(t))
            .or_insert_with(|| DetectionSet::new(t, Vec::new()))
            .detections
            .push(Detection {
                rect: Rect::new(v[0], v[1], v[2], v[3]),
                confidence: v[4],
                id_hint,
            });
    }
    Ok(by_key.into_values().collect())
}

pub fn format_camera_gt(frames: &[(f64, Vec<CameraGtBox>)]) -> String {
    let mut s = String::new();
    for (t, boxes) in frames {
        for g in boxes {
            let r = g.bbox;
            let _ = writeln!(s, "{t:.3} {} {:.3} {:.3} {:.3} {:.3} {:.4}", g.id, r.x, r.y, r.w, r.h, g.visibility);
        }
    }
    s
}

// ---- point clouds ----

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 24 + 32);
    let _ = writeln!(s, "frame={} t={:.3}", cloud.frame_id, cloud.timestamp);
    for p in &cloud.points {
        let _ = writeln!(s, "{:.4} {:.4} {:.4}", p.x, p.y, p.z);
    }
    s
}

pub fn parse_cloud(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty cloud file".into()))?;
    let mut frame = None;
    let mut t = None;
    for tok in header.split_whitespace() {
        match tok.split_once('=') {
            Some(("frame", v)) => frame = Some(v.to_string()),
            Some(("t", v)) => t = Some(num::<f64>(v, "timestamp", path, 1)?),
            _ => return Err(bad(1, format!("unexpected header token {tok:?}"))),
        }
    }
    let (Some(frame), Some(t)) = (frame, t) else {
        return Err(bad(1, "header must be `frame=<name> t=<seconds>`".into()));
    };
    let mut points = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = |what| -> Result<f64> {
            let s = it.next().ok_or_else(|| bad(i + 1, format!("missing {what}")))?;
            num(s, what, path, i + 1)
        };
        let p = Point3::new(next("x")?, next("y")?, next("z")?);
        if it.next().is_some() {
            return Err(bad(i + 1, "expected 3 fields".into()));
        }
        points.push(p);
    }
    PointCloud::new(frame, t, points).map_err(|e| bad(1, e.to_string()))
}

/// Cloud file name for frame `frame` of sensor `sensor`.
pub fn cloud_file_name(frame: usize, sensor: &str) -> String {
    format!("{frame:06}_{sensor}.txt")
}

/// Cloud files grouped by their frame prefix, in frame order.
pub fn list_cloud_frames(dir: &Path) -> Result<Vec<Vec<PathBuf>>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if !name.ends_with(".txt") {
            continue;
        }
        let Some((prefix, _)) = name.split_once('_') else { continue };
        groups.entry(prefix.to_string()).or_default().push(path.clone());
    }
    Ok(groups
        .into_values()
        .map(|mut v| {
            v.sort();
            v
        })
        .collect())
}

// ---- calibration ----

/// Sensor extrinsics keyed by LiDAR frame id, plus the cameras in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub lidars: BTreeMap<String, RigidTransform>,
    pub cameras: Vec<CameraModel>,
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn row_major(m: &Matrix3<f64>) -> Vec<f64> {
    (0..3).flat_map(|r| (0..3).map(move |c| m[(r, c)])).collect()
}

impl Calibration {
    pub fn format(&self) -> String {
        let mut s = String::new();
        for (name, pose) in &self.lidars {
            let _ = writeln!(s, "{name}.rotation = {}", join(row_major(&pose.rotation)));
            let _ = writeln!(s, "{name}.translation = {}", join(pose.translation.iter().copied()));
        }
        for (k, cam) in self.cameras.iter().enumerate() {
            let _ = writeln!(s, "camera{k}.intrinsics = {}", join(row_major(&cam.intrinsics)));
            let _ = writeln!(s, "camera{k}.rotation = {}", join(row_major(&cam.extrinsics.rotation)));
            let _ = writeln!(s, "camera{k}.translation = {}", join(cam.extrinsics.translation.iter().copied()));
            let _ = writeln!(s, "camera{k}.image_size = {} {}", cam.image_size.0, cam.image_size.1);
        }
        s
    }

    /// `lidarK.*` and `cameraK.*` entries for consecutive `K` from 0.
    pub fn load(path: &Path) -> Result<Self> {
        let map = ConfigMap::load(path)?;
        let matrix = |key: &str| -> Result<Option<Matrix3<f64>>> {
            Ok(map.get_floats(key, 9)?.map(|v| Matrix3::from_row_slice(&v)))
        };
        let vector = |key: &str| -> Result<Option<Vector3<f64>>> { Ok(map.get_floats(key, 3)?.map(|v| Vector3::from_row_slice(&v))) };
        let missing = |key: &str| CliError::Config(format!("{}: missing {key}", path.display()));

        let mut lidars = BTreeMap::new();
        for k in 0.. {
            let name = format!("lidar{k}");
            let (Some(r), Some(t)) = (matrix(&format!("{name}.rotation"))?, vector(&format!("{name}.translation"))?) else {
                if map.contains(&format!("{name}.rotation")) || map.contains(&format!("{name}.translation")) {
                    return Err(missing(&format!("{name}.rotation/translation")));
                }
                break;
            };
            lidars.insert(name, RigidTransform::new(r, t)?);
        }
        let mut cameras = Vec::new();
        for k in 0.. {
            let name = format!("camera{k}");
            let Some(kmat) = matrix(&format!("{name}.intrinsics"))? else { break };
            let r = matrix(&format!("{name}.rotation"))?.ok_or_else(|| missing(&format!("{name}.rotation")))?;
            let t = vector(&format!("{name}.translation"))?.ok_or_else(|| missing(&format!("{name}.translation")))?;
            let size = map.get_floats(&format!("{name}.image_size"), 2)?.ok_or_else(|| missing(&format!("{name}.image_size")))?;
            cameras.push(CameraModel::new(kmat, RigidTransform::new(r, t)?, (size[0] as u32, size[1] as u32))?);
        }
        map.reject_unknown()?;
        if lidars.is_empty() {
            return Err(CliError::Config(format!("{}: no LiDAR extrinsics", path.display())));
        }
        Ok(Self { lidars, cameras })
    }
}

// ---- key=value reports ----

/// `key=value` lines into an ordered map.
pub fn parse_kv(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    content_lines(text)
        .map(|(n, line)| {
            line.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    msg: "expected key=value".into(),
                })
        })
        .collect()
}
