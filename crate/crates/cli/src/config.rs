//! Flat `section.key = value` configuration.
//!
//! Precedence, lowest first: built-in defaults, config file, the
//! `COURTSIGHT_OUT` environment variable (for `paths.output` only), then
//! `--section.key value` flags.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use courtsight_core::detection::OracleNoiseModel;
use courtsight_core::geometry::{BevGrid, CourtRegion};
use courtsight_core::matching::SearchConfig;
use courtsight_core::occlusion::DEFAULT_NEIGHBOR_RADIUS;
use courtsight_core::reid::{AnchorKind, ReidConfig};
use courtsight_core::simulator::{ScenarioConfig, ScriptedCrossing};
use courtsight_core::tracker::TrackerConfig;

use crate::error::{CliError, Result};

pub const OUTPUT_ENV: &str = "COURTSIGHT_OUT";

/// Raw key/value entries with bookkeeping of which keys were consumed.
#[derive(Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl ConfigMap {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut map = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{}:{}: expected `key = value`, got {line:?}",
                    origin.display(),
                    n + 1
                )));
            };
            let key = k.trim();
            if key.is_empty() || !key.contains('.') {
                return Err(CliError::Config(format!(
                    "{}:{}: key {key:?} must have the form section.key",
                    origin.display(),
                    n + 1
                )));
            }
            map.entries.insert(key.to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Apply `--section.key value` / `--section.key=value` arguments.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(flag) = arg.strip_prefix("--") else {
                return Err(CliError::Config(format!("unexpected argument {arg:?}")));
            };
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Config(format!("flag --{flag} needs a value")))?;
                    (flag.to_string(), v.clone())
                }
            };
            if !key.contains('.') {
                return Err(CliError::Config(format!("unknown flag --{key}")));
            }
            self.entries.insert(key, value);
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CliError::Config(format!("{key} = {v:?}: {e}"))),
        }
    }

    pub fn get_str(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    /// Whitespace-separated float list of fixed length.
    pub fn get_floats(&self, key: &str, len: usize) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let out = v
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("{key}: {e}")))?;
        if out.len() != len {
            return Err(CliError::Config(format!("{key}: expected {len} numbers, found {}", out.len())));
        }
        Ok(Some(out))
    }

    /// Error on any entry no reader asked for.
    pub fn reject_unknown(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}

/// BEV detector source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorSource {
    /// Perturbed ground truth.
    Oracle,
    /// Boxes from `paths.detections`.
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Stored vectors from `paths.embeddings`.
    File,
    /// Synthetic anchors keyed by camera detection identity.
    Synthetic,
    /// No features: fusion leaves every session unrepaired.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub data: PathBuf,
    pub output: PathBuf,
    pub gt: PathBuf,
    pub clouds: PathBuf,
    pub calibration: PathBuf,
    pub camera: PathBuf,
    pub embeddings: PathBuf,
    pub detections: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingSettings {
    pub source: EmbeddingSource,
    pub dim: usize,
    pub base_sigma: f64,
    pub gain: f64,
    pub anchors: AnchorKind,
    pub seed: u64,
}

/// Everything a subcommand needs, resolved and validated.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub region: CourtRegion,
    pub grid: BevGrid,
    pub tracker: TrackerConfig,
    pub detector_source: DetectorSource,
    pub bev_noise: OracleNoiseModel,
    pub detector_seed: u64,
    pub camera_noise: OracleNoiseModel,
    pub camera_seed: u64,
    pub search: SearchConfig,
    pub neighbor_radius: f64,
    pub reid: ReidConfig,
    pub embedding: EmbeddingSettings,
    /// `None` means the mean GT box diagonal.
    pub distance_threshold: Option<f64>,
    pub sweep: bool,
    pub scenario: ScenarioConfig,
    pub scenario_seed: u64,
    pub write_clouds: bool,
}

fn noise_model(m: &ConfigMap, section: &str, d: OracleNoiseModel) -> Result<OracleNoiseModel> {
    let k = |name: &str| format!("{section}.{name}");
    let noise = OracleNoiseModel {
        position_sigma: m.get(&k("position_sigma"), d.position_sigma)?,
        size_jitter: m.get(&k("size_jitter"), d.size_jitter)?,
        miss_rate: m.get(&k("miss_rate"), d.miss_rate)?,
        false_positive_rate: m.get(&k("false_positive_rate"), d.false_positive_rate)?,
        merge_distance: m.get(&k("merge_distance"), d.merge_distance)?,
        clean_confidence: m.get(&k("clean_confidence"), d.clean_confidence)?,
        merged_confidence: m.get(&k("merged_confidence"), d.merged_confidence)?,
        min_visibility: m.get(&k("min_visibility"), d.min_visibility)?,
    };
    noise.validate()?;
    Ok(noise)
}

/// Default BEV oracle: exact boxes, but players closer than 0.8 m merge.
pub fn default_bev_noise() -> OracleNoiseModel {
    OracleNoiseModel {
        merge_distance: 0.8,
        ..OracleNoiseModel::noiseless()
    }
}

/// Default camera oracle, in pixels.
pub fn default_camera_noise() -> OracleNoiseModel {
    OracleNoiseModel {
        position_sigma: 3.0,
        size_jitter: 0.03,
        min_visibility: 0.3,
        ..OracleNoiseModel::noiseless()
    }
}

/// `a:b:t` entries separated by commas.
pub fn parse_crossings(text: &str) -> Result<Vec<ScriptedCrossing>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.split(':').collect();
            let bad = || CliError::Config(format!("crossing {item:?} must look like a:b:seconds"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let a = parts[0].parse().map_err(|_| bad())?;
            let b = parts[1].parse().map_err(|_| bad())?;
            let t = parts[2].parse().map_err(|_| bad())?;
            Ok(ScriptedCrossing::new(a, b, t))
        })
        .collect()
}

fn scenario_config(m: &ConfigMap) -> Result<ScenarioConfig> {
    let mut c = ScenarioConfig {
        duration_s: 10.0,
        ..ScenarioConfig::default()
    };
    c.player_count = m.get("scenario.players", c.player_count)?;
    c.duration_s = m.get("scenario.duration_s", c.duration_s)?;
    c.frame_rate = m.get("scenario.frame_rate", c.frame_rate)?;
    c.motion.max_speed = m.get("scenario.max_speed", c.motion.max_speed)?;
    c.motion.waypoint_churn = m.get("scenario.waypoint_churn", c.motion.waypoint_churn)?;
    c.motion.repulsion_radius = m.get("scenario.repulsion_radius", c.motion.repulsion_radius)?;
    c.motion.repulsion_gain = m.get("scenario.repulsion_gain", c.motion.repulsion_gain)?;
    c.body.radius = m.get("scenario.body_radius", c.body.radius)?;
    c.body.height = m.get("scenario.body_height", c.body.height)?;
    c.crossings = parse_crossings(&m.get_str("scenario.crossings", ""))?;
    c.lidar.h_fov = m.get("lidar.h_fov", c.lidar.h_fov)?;
    c.lidar.v_fov = m.get("lidar.v_fov", c.lidar.v_fov)?;
    c.lidar.h_res = m.get("lidar.h_res", c.lidar.h_res)?;
    c.lidar.v_res = m.get("lidar.v_res", c.lidar.v_res)?;
    c.lidar.range_noise = m.get("lidar.range_noise", c.lidar.range_noise)?;
    c.lidar.max_range = m.get("lidar.max_range", c.lidar.max_range)?;
    c.validate()?;
    Ok(c)
}

impl PipelineConfig {
    pub fn from_map(m: &ConfigMap) -> Result<Self> {
        let data = PathBuf::from(m.get_str("paths.data", "data"));
        let in_data = |key: &str, name: &str| -> PathBuf {
            let v = m.get_str(key, "");
            if v.is_empty() {
                data.join(name)
            } else {
                PathBuf::from(v)
            }
        };
        let paths = Paths {
            output: PathBuf::from(m.get_str("paths.output", "out")),
            gt: in_data("paths.gt", "gt.txt"),
            clouds: in_data("paths.clouds", "clouds"),
            calibration: in_data("paths.calibration", "calibration.cfg"),
            camera: in_data("paths.camera", "camera"),
            embeddings: in_data("paths.embeddings", "embeddings.txt"),
            detections: in_data("paths.detections", "detections.txt"),
            data: data.clone(),
        };

        let region = CourtRegion::rectangle(
            m.get("region.x_min", 0.0)?,
            m.get("region.y_min", 0.0)?,
            m.get("region.x_max", 28.0)?,
            m.get("region.y_max", 15.0)?,
            m.get("region.z_min", 0.2)?,
            m.get("region.z_max", 2.3)?,
        )?;
        let g = BevGrid::default();
        let grid = BevGrid {
            origin: [m.get("bev.origin_x", g.origin[0])?, m.get("bev.origin_y", g.origin[1])?],
            resolution: m.get("bev.resolution", g.resolution)?,
            width: m.get("bev.width", g.width)?,
            height: m.get("bev.height", g.height)?,
        };
        grid.validate()?;

        let t = TrackerConfig::default();
        let tracker = TrackerConfig {
            high_conf_threshold: m.get("tracker.high_conf_threshold", t.high_conf_threshold)?,
            low_conf_threshold: m.get("tracker.low_conf_threshold", t.low_conf_threshold)?,
            match_threshold_stage1: m.get("tracker.match_threshold_stage1", t.match_threshold_stage1)?,
            match_threshold_stage2: m.get("tracker.match_threshold_stage2", t.match_threshold_stage2)?,
            max_lost_frames: m.get("tracker.max_lost_frames", t.max_lost_frames)?,
            min_hits_to_activate: m.get("tracker.min_hits_to_activate", t.min_hits_to_activate)?,
        };
        tracker.validate()?;

        let detector_source = match m.get_str("detector.source", "oracle").as_str() {
            "oracle" => DetectorSource::Oracle,
            "replay" => DetectorSource::Replay,
            other => return Err(CliError::Config(format!("detector.source must be oracle or replay, got {other:?}"))),
        };

        let s = SearchConfig::default();
        let search = SearchConfig {
            tau_high: m.get("search.tau_high", s.tau_high)?,
            tau_low: m.get("search.tau_low", s.tau_low)?,
            max_search_frames: m.get("search.max_search_frames", s.max_search_frames)?,
            z_min: m.get("search.z_min", s.z_min)?,
            z_max: m.get("search.z_max", s.z_max)?,
        };
        search.validate()?;

        let neighbor_radius = m.get("occlusion.neighbor_radius", DEFAULT_NEIGHBOR_RADIUS)?;
        if !(neighbor_radius >= 0.0) {
            return Err(CliError::Config("occlusion.neighbor_radius must be non-negative".into()));
        }
        let min_cosine = match m.get_str("reid.min_cosine", "none").as_str() {
            "none" | "" => None,
            v => Some(
                v.parse::<f64>()
                    .map_err(|e| CliError::Config(format!("reid.min_cosine = {v:?}: {e}")))?,
            ),
        };

        let embedding = EmbeddingSettings {
            source: match m.get_str("embedding.source", "file").as_str() {
                "file" => EmbeddingSource::File,
                "synthetic" => EmbeddingSource::Synthetic,
                "none" => EmbeddingSource::None,
                other => {
                    return Err(CliError::Config(format!(
                        "embedding.source must be file, synthetic or none, got {other:?}"
                    )))
                }
            },
            dim: m.get("embedding.dim", courtsight_core::reid::DEFAULT_EMBEDDING_DIM)?,
            base_sigma: m.get("embedding.base_sigma", 0.05)?,
            gain: m.get("embedding.gain", 2.0)?,
            anchors: match m.get_str("embedding.anchors", "orthogonal").as_str() {
                "orthogonal" => AnchorKind::Orthogonal,
                "random" => AnchorKind::Random,
                other => return Err(CliError::Config(format!("embedding.anchors must be orthogonal or random, got {other:?}"))),
            },
            seed: m.get("embedding.seed", 0)?,
        };

        let distance_threshold = match m.get_str("metrics.distance_threshold", "auto").as_str() {
            "auto" | "" => None,
            v => {
                let d = v
                    .parse::<f64>()
                    .map_err(|e| CliError::Config(format!("metrics.distance_threshold = {v:?}: {e}")))?;
                if !(d > 0.0) {
                    return Err(CliError::Config("metrics.distance_threshold must be positive".into()));
                }
                Some(d)
            }
        };

        Ok(Self {
            paths,
            region,
            grid,
            tracker,
            detector_source,
            bev_noise: noise_model(m, "detector", default_bev_noise())?,
            detector_seed: m.get("detector.seed", 0)?,
            camera_noise: noise_model(m, "camera_detector", default_camera_noise())?,
            camera_seed: m.get("camera_detector.seed", 0)?,
            search,
            neighbor_radius,
            reid: ReidConfig { min_cosine },
            embedding,
            distance_threshold,
            sweep: m.get("metrics.sweep", false)?,
            scenario: scenario_config(m)?,
            scenario_seed: m.get("scenario.seed", 0)?,
            write_clouds: m.get("simulate.write_clouds", true)?,
        })
    }

    /// Defaults, optional file, environment, then flag overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut map = match file {
            Some(p) => ConfigMap::load(p)?,
            None => ConfigMap::default(),
        };
        if let Ok(dir) = std::env::var(OUTPUT_ENV) {
            if !dir.is_empty() {
                map.set("paths.output", dir);
            }
        }
        map.apply_overrides(overrides)?;
        let cfg = Self::from_map(&map)?;
        map.reject_unknown()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = PipelineConfig::from_map(&ConfigMap::default()).unwrap();
        assert_eq!(cfg.tracker, TrackerConfig::default());
        assert_eq!(cfg.paths.gt, PathBuf::from("data/gt.txt"));
        assert_eq!(cfg.scenario.player_count, 10);
        assert!(cfg.reid.min_cosine.is_none());
    }

    #[test]
    fn file_then_flags() {
        let mut m = ConfigMap::parse("tracker.max_lost_frames = 7\n# note\nscenario.players = 4 # inline\n", Path::new("x")).unwrap();
        m.apply_overrides(&["--tracker.max_lost_frames".into(), "9".into(), "--paths.data=d".into()])
            .unwrap();
        let cfg = PipelineConfig::from_map(&m).unwrap();
        m.reject_unknown().unwrap();
        assert_eq!(cfg.tracker.max_lost_frames, 9);
        assert_eq!(cfg.scenario.player_count, 4);
        assert_eq!(cfg.paths.calibration, PathBuf::from("d/calibration.cfg"));
    }

    #[test]
    fn unknown_and_malformed_keys() {
        let m = ConfigMap::parse("tracker.bogus = 1\n", Path::new("x")).unwrap();
        PipelineConfig::from_map(&m).unwrap();
        assert!(matches!(m.reject_unknown(), Err(CliError::Config(_))));
        let err = ConfigMap::parse("ok.key = 1\nnot a pair\n", Path::new("c.cfg")).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.starts_with("c.cfg:2:")));
        let m = ConfigMap::parse("tracker.max_lost_frames = many\n", Path::new("x")).unwrap();
        assert_eq!(PipelineConfig::from_map(&m).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn crossings_parse() {
        let c = parse_crossings("1:2:5, 3:4:12.5").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!((c[1].a, c[1].b, c[1].time_s), (3, 4, 12.5));
        assert!(parse_crossings("1:2").is_err());
    }
}
