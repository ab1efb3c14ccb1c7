//! Point-based MOT evaluation.
//!
//! Ground truth and predictions are matched per frame by box-center
//! distance under a single threshold (by default the mean GT box diagonal).
//! On top of those matches: MOTA, IDF1, HOTA with its DetA/AssA split, and
//! the ID recovery rate.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::assignment::{solve, solve_gated};
use crate::records::{FrameRecords, ObjectId, Sequence};

const TIMESTAMP_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("sequences not aligned: {0}")]
    Alignment(String),
    #[error("invalid matching config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingConfig {
    pub distance_threshold: f64,
}

impl MatchingConfig {
    pub fn new(distance_threshold: f64) -> Result<Self, MetricsError> {
        if !(distance_threshold > 0.0 && distance_threshold.is_finite()) {
            return Err(MetricsError::Config("distance threshold must be positive".into()));
        }
        Ok(Self { distance_threshold })
    }

    /// Threshold equal to the mean GT box diagonal.
    pub fn from_ground_truth(gt: &Sequence) -> Result<Self, MetricsError> {
        Self::new(mean_gt_diagonal(gt)?)
    }
}

/// Mean of `sqrt(w^2 + h^2)` over every GT box.
pub fn mean_gt_diagonal(gt: &Sequence) -> Result<f64, MetricsError> {
    let n = gt.box_count();
    if n == 0 {
        return Err(MetricsError::EmptyInput("no ground-truth boxes"));
    }
    let sum: f64 = gt.frames.iter().flat_map(|f| &f.boxes).map(|b| b.w.hypot(b.h)).sum();
    Ok(sum / n as f64)
}

/// One-to-one `(gt index, pred index)` pairs: as many pairs within the
/// threshold as possible, then minimum total center distance.
pub fn match_frame(gt: &FrameRecords, pred: &FrameRecords, threshold: f64) -> Vec<(usize, usize)> {
    if gt.boxes.is_empty() || pred.boxes.is_empty() {
        return Vec::new();
    }
    let cost: Vec<Vec<f64>> = gt
        .boxes
        .iter()
        .map(|g| pred.boxes.iter().map(|p| g.distance_to(p)).collect())
        .collect();
    solve_gated(&cost, threshold).pairs
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    /// `(gt id, pred id)` pairs.
    pub pairs: Vec<(ObjectId, ObjectId)>,
    /// Sorted GT ids of the frame.
    pub gt_ids: Vec<ObjectId>,
    pub num_gt: usize,
    pub num_pred: usize,
}

impl FrameMatch {
    pub fn false_negatives(&self) -> usize {
        self.num_gt - self.pairs.len()
    }

    pub fn false_positives(&self) -> usize {
        self.num_pred - self.pairs.len()
    }
}

/// Per-frame matches of a whole sequence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceMatches {
    pub frames: Vec<FrameMatch>,
    pub threshold: f64,
}

impl SequenceMatches {
    pub fn total_gt(&self) -> usize {
        self.frames.iter().map(|f| f.num_gt).sum()
    }

    pub fn total_pred(&self) -> usize {
        self.frames.iter().map(|f| f.num_pred).sum()
    }

    pub fn true_positives(&self) -> usize {
        self.frames.iter().map(|f| f.pairs.len()).sum()
    }

    pub fn false_negatives(&self) -> usize {
        self.frames.iter().map(FrameMatch::false_negatives).sum()
    }

    pub fn false_positives(&self) -> usize {
        self.frames.iter().map(FrameMatch::false_positives).sum()
    }

    /// A GT id matched to a different prediction than the one it was last
    /// matched to.
    pub fn id_switches(&self) -> usize {
        let mut last: HashMap<ObjectId, ObjectId> = HashMap::new();
        let mut n = 0;
        for f in &self.frames {
            for &(g, p) in &f.pairs {
                if last.insert(g, p).is_some_and(|prev| prev != p) {
                    n += 1;
                }
            }
        }
        n
    }
}

pub fn check_alignment(gt: &Sequence, pred: &Sequence) -> Result<(), MetricsError> {
    if gt.len() != pred.len() {
        return Err(MetricsError::Alignment(format!(
            "{} ground-truth frames vs {} predicted frames",
            gt.len(),
            pred.len()
        )));
    }
    for (t, (g, p)) in gt.frames.iter().zip(&pred.frames).enumerate() {
        if (g.timestamp - p.timestamp).abs() > TIMESTAMP_TOL {
            return Err(MetricsError::Alignment(format!(
                "frame {t}: timestamps {} vs {}",
                g.timestamp, p.timestamp
            )));
        }
    }
    Ok(())
}

pub fn match_sequence(gt: &Sequence, pred: &Sequence, cfg: &MatchingConfig) -> Result<SequenceMatches, MetricsError> {
    check_alignment(gt, pred)?;
    let frames = gt
        .frames
        .iter()
        .zip(&pred.frames)
        .map(|(g, p)| FrameMatch {
            pairs: match_frame(g, p, cfg.distance_threshold)
                .into_iter()
                .map(|(i, j)| (g.boxes[i].id, p.boxes[j].id))
                .collect(),
            gt_ids: g.ids().into_iter().collect(),
            num_gt: g.boxes.len(),
            num_pred: p.boxes.len(),
        })
        .collect();
    Ok(SequenceMatches {
        frames,
        threshold: cfg.distance_threshold,
    })
}

pub fn mota_from_counts(fp: usize, fn_: usize, idsw: usize, num_gt: usize) -> Result<f64, MetricsError> {
    if num_gt == 0 {
        return Err(MetricsError::EmptyInput("no ground-truth boxes"));
    }
    Ok(1.0 - (fp + fn_ + idsw) as f64 / num_gt as f64)
}

pub fn mota(m: &SequenceMatches) -> Result<f64, MetricsError> {
    mota_from_counts(m.false_positives(), m.false_negatives(), m.id_switches(), m.total_gt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdScores {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// IDF1 under the best global GT-id to pred-id bijection. A pair scores in
/// every frame where both boxes exist within the threshold.
pub fn idf1(gt: &Sequence, pred: &Sequence, cfg: &MatchingConfig) -> Result<IdScores, MetricsError> {
    check_alignment(gt, pred)?;
    let (total_gt, total_pred) = (gt.box_count(), pred.box_count());
    if total_gt == 0 {
        return Err(MetricsError::EmptyInput("no ground-truth boxes"));
    }
    let mut co: BTreeMap<(ObjectId, ObjectId), usize> = BTreeMap::new();
    for (g, p) in gt.frames.iter().zip(&pred.frames) {
        for gb in &g.boxes {
            for pb in &p.boxes {
                if gb.distance_to(pb) <= cfg.distance_threshold {
                    *co.entry((gb.id, pb.id)).or_default() += 1;
                }
            }
        }
    }
    let idtp = best_bijection(&co);
    Ok(IdScores {
        idf1: 2.0 * idtp as f64 / (total_gt + total_pred) as f64,
        idtp,
        idfp: total_pred - idtp,
        idfn: total_gt - idtp,
    })
}

/// Maximum total count of a one-to-one pairing of GT ids and pred ids.
fn best_bijection(counts: &BTreeMap<(ObjectId, ObjectId), usize>) -> usize {
    let mut gi: BTreeMap<ObjectId, usize> = BTreeMap::new();
    let mut pi: BTreeMap<ObjectId, usize> = BTreeMap::new();
    for &(g, p) in counts.keys() {
        let n = gi.len();
        gi.entry(g).or_insert(n);
        let n = pi.len();
        pi.entry(p).or_insert(n);
    }
    if gi.is_empty() {
        return 0;
    }
    let max = counts.values().copied().max().unwrap_or(0) as f64;
    let mut cost = vec![vec![max; pi.len()]; gi.len()];
    for (&(g, p), &n) in counts {
        cost[gi[&g]][pi[&p]] = max - n as f64;
    }
    solve(&cost)
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| max - cost[r][c]))
        .sum::<f64>()
        .round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotaScores {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
}

/// HOTA, DetA and AssA from a single set of per-frame matches.
pub fn hota(gt: &Sequence, pred: &Sequence, m: &SequenceMatches) -> HotaScores {
    let tp = m.true_positives();
    let denom = m.total_gt() + m.total_pred() - tp;
    if tp == 0 || denom == 0 {
        return HotaScores {
            hota: 0.0,
            det_a: 0.0,
            ass_a: 0.0,
        };
    }
    let det_a = tp as f64 / denom as f64;

    let mut gt_count: HashMap<ObjectId, usize> = HashMap::new();
    for b in gt.frames.iter().flat_map(|f| &f.boxes) {
        *gt_count.entry(b.id).or_default() += 1;
    }
    let mut pred_count: HashMap<ObjectId, usize> = HashMap::new();
    for b in pred.frames.iter().flat_map(|f| &f.boxes) {
        *pred_count.entry(b.id).or_default() += 1;
    }
    let mut pair_count: BTreeMap<(ObjectId, ObjectId), usize> = BTreeMap::new();
    for &pair in m.frames.iter().flat_map(|f| &f.pairs) {
        *pair_count.entry(pair).or_default() += 1;
    }
    // every TP of pair (g, p) contributes the same association score
    let ass_sum: f64 = pair_count
        .iter()
        .map(|(&(g, p), &tpa)| {
            let a = tpa as f64 / (gt_count[&g] + pred_count[&p] - tpa) as f64;
            a * tpa as f64
        })
        .sum();
    let ass_a = ass_sum / tp as f64;
    HotaScores {
        hota: (det_a * ass_a).sqrt(),
        det_a,
        ass_a,
    }
}

/// HOTA averaged over 19 thresholds `base * (1 - alpha)`, alpha = 0.05..0.95.
pub fn hota_sweep(gt: &Sequence, pred: &Sequence, base: &MatchingConfig) -> Result<HotaScores, MetricsError> {
    let mut acc = HotaScores {
        hota: 0.0,
        det_a: 0.0,
        ass_a: 0.0,
    };
    for k in 1..=19 {
        let alpha = k as f64 * 0.05;
        let cfg = MatchingConfig::new(base.distance_threshold * (1.0 - alpha))?;
        let s = hota(gt, pred, &match_sequence(gt, pred, &cfg)?);
        acc.hota += s.hota / 19.0;
        acc.det_a += s.det_a / 19.0;
        acc.ass_a += s.ass_a / 19.0;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdRecovery {
    pub rate: f64,
    pub n_re: usize,
    pub n_dis: usize,
    /// Nothing was ever lost; `rate` is reported as 1.
    pub no_events: bool,
}

/// Fraction of broken `(gt, pred)` pairings later re-established.
///
/// A pairing breaks in a frame where its GT id is present but no longer
/// matched to that prediction. It counts as recovered if the same pair is
/// matched again in any later frame.
pub fn id_recovery_rate(m: &SequenceMatches) -> IdRecovery {
    let mut current: BTreeMap<ObjectId, ObjectId> = BTreeMap::new();
    // (gt, pred, frame of the break)
    let mut breaks: Vec<(ObjectId, ObjectId, usize)> = Vec::new();
    // frames where each pair was matched, in order
    let mut seen: HashMap<(ObjectId, ObjectId), Vec<usize>> = HashMap::new();
    for (t, f) in m.frames.iter().enumerate() {
        let now: BTreeMap<ObjectId, ObjectId> = f.pairs.iter().copied().collect();
        for (&g, &p) in &now {
            seen.entry((g, p)).or_default().push(t);
        }
        // a GT id that is matched or unmatched here is present; absent GT
        // ids keep their pairing untouched
        current.retain(|&g, &mut p| {
            let broken = match now.get(&g) {
                Some(&q) => q != p,
                None => f.gt_present(g),
            };
            if broken {
                breaks.push((g, p, t));
            }
            !broken
        });
        current.extend(now);
    }
    let n_dis = breaks.len();
    let n_re = breaks
        .iter()
        .filter(|&&(g, p, t)| seen.get(&(g, p)).is_some_and(|ts| ts.last().is_some_and(|&last| last > t)))
        .count();
    if n_dis == 0 {
        return IdRecovery {
            rate: 1.0,
            n_re: 0,
            n_dis: 0,
            no_events: true,
        };
    }
    IdRecovery {
        rate: n_re as f64 / n_dis as f64,
        n_re,
        n_dis,
        no_events: false,
    }
}

impl FrameMatch {
    fn gt_present(&self, g: ObjectId) -> bool {
        self.gt_ids.binary_search(&g).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub threshold: f64,
    pub mota: f64,
    pub idf1: f64,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub r_id: f64,
    pub r_id_no_events: bool,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
    pub num_gt: usize,
    pub n_re: usize,
    pub n_dis: usize,
    /// Multi-threshold HOTA, when requested.
    pub sweep: Option<HotaScores>,
}

impl MetricsReport {
    /// Flat `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("threshold", format!("{:.6}", self.threshold));
        kv("MOTA", format!("{:.6}", self.mota));
        kv("IDF1", format!("{:.6}", self.idf1));
        kv("HOTA", format!("{:.6}", self.hota));
        kv("DetA", format!("{:.6}", self.det_a));
        kv("AssA", format!("{:.6}", self.ass_a));
        kv("R_ID", format!("{:.6}", self.r_id));
        kv("R_ID_no_events", self.r_id_no_events.to_string());
        kv("TP", self.tp.to_string());
        kv("FP", self.fp.to_string());
        kv("FN", self.fn_.to_string());
        kv("IDSW", self.idsw.to_string());
        kv("GT", self.num_gt.to_string());
        kv("N_re", self.n_re.to_string());
        kv("N_dis", self.n_dis.to_string());
        if let Some(h) = self.sweep {
            kv("HOTA_sweep", format!("{:.6}", h.hota));
            kv("DetA_sweep", format!("{:.6}", h.det_a));
            kv("AssA_sweep", format!("{:.6}", h.ass_a));
        }
        s
    }
}

/// Full report for one prediction sequence.
pub fn evaluate(gt: &Sequence, pred: &Sequence, cfg: &MatchingConfig, sweep: bool) -> Result<MetricsReport, MetricsError> {
    let m = match_sequence(gt, pred, cfg)?;
    let ids = idf1(gt, pred, cfg)?;
    let h = hota(gt, pred, &m);
    let r = id_recovery_rate(&m);
    Ok(MetricsReport {
        threshold: cfg.distance_threshold,
        mota: mota(&m)?,
        idf1: ids.idf1,
        hota: h.hota,
        det_a: h.det_a,
        ass_a: h.ass_a,
        r_id: r.rate,
        r_id_no_events: r.no_events,
        tp: m.true_positives(),
        fp: m.false_positives(),
        fn_: m.false_negatives(),
        idsw: m.id_switches(),
        num_gt: m.total_gt(),
        n_re: r.n_re,
        n_dis: r.n_dis,
        sweep: if sweep { Some(hota_sweep(gt, pred, cfg)?) } else { None },
    })
}
