//! Appearance embeddings, cosine pairing across occlusion sessions and
//! track-ID repair.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{debug, warn};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::matching::FrameRef;
use crate::occlusion::OcclusionSession;
use crate::records::{ObjectId, Sequence};
use crate::rng;

pub const DEFAULT_EMBEDDING_DIM: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReidError {
    #[error("degenerate embedding: {0}")]
    Degenerate(&'static str),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("no stored embedding for id {id} at frame {frame} camera {camera}")]
    Missing { id: ObjectId, frame: usize, camera: usize },
    #[error("matched detection carries no identity")]
    NoIdentity,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `values`; rejects empty, zero and non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self, ReidError> {
        let norm = l2(&values)?;
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64, ReidError> {
        if self.dim() != other.dim() {
            return Err(ReidError::Dimension(self.dim(), other.dim()));
        }
        Ok(dot(&self.values, &other.values).clamp(-1.0, 1.0))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(v: &[f64]) -> Result<f64, ReidError> {
    if v.is_empty() {
        return Err(ReidError::Degenerate("empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ReidError::Degenerate("non-finite component"));
    }
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        return Err(ReidError::Degenerate("zero vector"));
    }
    Ok(n)
}

/// Cosine similarity of two raw vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, ReidError> {
    if a.len() != b.len() {
        return Err(ReidError::Dimension(a.len(), b.len()));
    }
    Ok((dot(a, b) / (l2(a)? * l2(b)?)).clamp(-1.0, 1.0))
}

/// Produces a feature for a clear image patch.
pub trait EmbeddingProvider: Sync {
    fn embed(&self, patch: &FrameRef) -> Result<EmbeddingVector, ReidError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorKind {
    /// Standard basis vectors.
    Orthogonal,
    /// Random orthonormal directions.
    Random,
}

/// Identity anchors plus view-dependent Gaussian noise.
///
/// Noise has per-component std `sigma / sqrt(dim)`, so its expected norm is
/// about `sigma` with `sigma = base_sigma * (1 + gain * degradation)`.
#[derive(Debug, Clone)]
pub struct SyntheticEmbedder {
    pub dim: usize,
    pub base_sigma: f64,
    pub gain: f64,
    pub seed: u64,
    kind: AnchorKind,
    /// Precomputed orthonormal anchors for ids below `dim`.
    anchors: Vec<Vec<f64>>,
}

impl SyntheticEmbedder {
    pub fn new(dim: usize, kind: AnchorKind, base_sigma: f64, gain: f64, seed: u64) -> Result<Self, ReidError> {
        if dim == 0 {
            return Err(ReidError::Degenerate("zero embedding dimension"));
        }
        if !(base_sigma >= 0.0 && gain >= 0.0) {
            return Err(ReidError::Degenerate("noise parameters must be non-negative"));
        }
        let anchors = match kind {
            AnchorKind::Orthogonal => Vec::new(),
            AnchorKind::Random => random_orthonormal(dim, seed),
        };
        Ok(Self {
            dim,
            base_sigma,
            gain,
            seed,
            kind,
            anchors,
        })
    }

    pub fn anchor(&self, id: ObjectId) -> Vec<f64> {
        let i = id as usize;
        match self.kind {
            AnchorKind::Orthogonal => {
                let mut v = vec![0.0; self.dim];
                v[i % self.dim] = 1.0;
                v
            }
            AnchorKind::Random if i < self.anchors.len() => self.anchors[i].clone(),
            AnchorKind::Random => {
                let mut r = rng::stream(self.seed, &[0xA9C4, id as u64]);
                let v: Vec<f64> = (0..self.dim).map(|_| r.sample(StandardNormal)).collect();
                let n = dot(&v, &v).sqrt();
                v.into_iter().map(|x| x / n).collect()
            }
        }
    }

    /// Feature of identity `id`; `degradation` in `[0, 1]` scales the
    /// noise and `keys` select an independent draw.
    pub fn embed_identity(&self, id: ObjectId, degradation: f64, keys: &[u64]) -> EmbeddingVector {
        let sigma = self.base_sigma * (1.0 + self.gain * degradation.clamp(0.0, 1.0));
        let mut v = self.anchor(id);
        if sigma > 0.0 {
            let mut all = vec![id as u64];
            all.extend_from_slice(keys);
            let mut r = rng::stream(self.seed, &all);
            let s = sigma / (self.dim as f64).sqrt();
            for x in v.iter_mut() {
                let n: f64 = r.sample(StandardNormal);
                *x += s * n;
            }
        }
        EmbeddingVector::new(v).unwrap_or_else(|_| EmbeddingVector::new(self.anchor(id)).expect("unit anchor"))
    }
}

fn random_orthonormal(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, &[0xA9C3]);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

impl EmbeddingProvider for SyntheticEmbedder {
    fn embed(&self, patch: &FrameRef) -> Result<EmbeddingVector, ReidError> {
        let id = patch.matched.id_hint.ok_or(ReidError::NoIdentity)?;
        let keys = [patch.frame as u64, patch.camera as u64];
        Ok(self.embed_identity(id, patch.inclusion as f64 / 8.0, &keys))
    }
}

/// Stored features keyed by `(detection identity, frame, camera)`.
#[derive(Debug, Clone, Default)]
pub struct FileEmbeddings {
    table: HashMap<(ObjectId, usize, usize), EmbeddingVector>,
}

impl FileEmbeddings {
    pub fn insert(&mut self, id: ObjectId, frame: usize, camera: usize, v: EmbeddingVector) {
        self.table.insert((id, frame, camera), v);
    }

    pub fn get(&self, id: ObjectId, frame: usize, camera: usize) -> Option<&EmbeddingVector> {
        self.table.get(&(id, frame, camera))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Parse `id t camera v1 .. vd` lines; blank and `#` lines are skipped.
    pub fn parse(text: &str) -> Result<Self, ReidError> {
        let mut out = Self::default();
        let mut dim = None;
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| ReidError::Parse { line: line_no, msg };
            let mut it = line.split_whitespace();
            let mut int = |what: &str| -> Result<usize, ReidError> {
                it.next()
                    .ok_or_else(|| err(format!("missing {what}")))?
                    .parse::<usize>()
                    .map_err(|e| err(format!("bad {what}: {e}")))
            };
            let (id, frame, camera) = (int("id")?, int("frame")?, int("camera")?);
            let values = line
                .split_whitespace()
                .skip(3)
                .map(|s| s.parse::<f64>().map_err(|e| err(format!("bad value {s:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if *dim.get_or_insert(values.len()) != values.len() {
                return Err(err(format!("expected {} values, found {}", dim.unwrap_or(0), values.len())));
            }
            let v = EmbeddingVector::new(values).map_err(|e| err(e.to_string()))?;
            out.insert(id as ObjectId, frame, camera, v);
        }
        Ok(out)
    }

    pub fn format_line(id: ObjectId, frame: usize, camera: usize, v: &EmbeddingVector) -> String {
        let mut s = format!("{id} {frame} {camera}");
        for x in v.values() {
            s.push_str(&format!(" {x:.5}"));
        }
        s
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn embed(&self, patch: &FrameRef) -> Result<EmbeddingVector, ReidError> {
        let id = patch.matched.id_hint.ok_or(ReidError::NoIdentity)?;
        self.table.get(&(id, patch.frame, patch.camera)).cloned().ok_or(ReidError::Missing {
            id,
            frame: patch.frame,
            camera: patch.camera,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReidConfig {
    /// Pairs below this cosine are not paired.
    pub min_cosine: Option<f64>,
}

/// Greedy global-max pairing over a similarity matrix `sim[pre][post]`.
/// Returns `(pre index, post index)` pairs in selection order.
pub fn greedy_pairs(sim: &[Vec<f64>], min_cosine: Option<f64>) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = sim
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &s)| (s, i, j)))
        .filter(|&(s, _, _)| min_cosine.is_none_or(|m| s >= m))
        .collect();
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_pre, mut used_post) = (BTreeSet::new(), BTreeSet::new());
    let mut out = Vec::new();
    for (_, i, j) in cand {
        if !used_pre.contains(&i) && !used_post.contains(&j) {
            used_pre.insert(i);
            used_post.insert(j);
            out.push((i, j));
        }
    }
    out
}

/// Renaming applied from `t_e` onward: post-occlusion id to pre-occlusion id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IdRemap {
    pub session: usize,
    pub t_s: usize,
    pub t_e: usize,
    pub map: BTreeMap<ObjectId, ObjectId>,
}

impl IdRemap {
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Pair pre- and post-occlusion features of one session. Ids without a
/// feature are left out; identity pairs produce no entry.
pub fn resolve_session(
    session: &OcclusionSession,
    pre: &BTreeMap<ObjectId, EmbeddingVector>,
    post: &BTreeMap<ObjectId, EmbeddingVector>,
    cfg: &ReidConfig,
) -> IdRemap {
    let mut remap = IdRemap {
        session: session.index,
        t_s: session.t_s,
        t_e: session.t_e,
        map: BTreeMap::new(),
    };
    let pre_ids: Vec<ObjectId> = session.pre_ids().into_iter().filter(|id| pre.contains_key(id)).collect();
    let post_ids: Vec<ObjectId> = session.post_ids().into_iter().filter(|id| post.contains_key(id)).collect();
    if pre_ids.is_empty() || post_ids.is_empty() {
        debug!("session {} unrepaired: no candidates on one side", session.index);
        return remap;
    }
    let sim: Vec<Vec<f64>> = pre_ids
        .iter()
        .map(|a| post_ids.iter().map(|b| pre[a].cosine(&post[b]).unwrap_or(-1.0)).collect())
        .collect();
    for (i, j) in greedy_pairs(&sim, cfg.min_cosine) {
        if pre_ids[i] != post_ids[j] {
            remap.map.insert(post_ids[j], pre_ids[i]);
        }
    }
    remap
}

#[derive(Debug, Clone, PartialEq)]
pub enum RemapOutcome {
    Applied,
    Empty,
    /// Rewriting would duplicate an id in this frame.
    Collision { frame: usize },
}

/// Rewrite track ids session by session, in `t_e` order.
///
/// Remap ids refer to the track table the sessions were extracted from; a
/// session that follows an earlier repair sees its ids under their
/// repaired names.
pub fn apply_remap(tracks: &Sequence, remaps: &[IdRemap]) -> (Sequence, Vec<RemapOutcome>) {
    let mut order: Vec<usize> = (0..remaps.len()).collect();
    order.sort_by_key(|&i| (remaps[i].t_e, remaps[i].session));
    let mut current = tracks.clone();
    let mut outcomes = vec![RemapOutcome::Empty; remaps.len()];
    for i in order {
        let r = &remaps[i];
        if r.map.is_empty() {
            continue;
        }
        let rename: BTreeMap<ObjectId, ObjectId> = r
            .map
            .iter()
            .map(|(&from, &to)| {
                let from_now = current_name(tracks, &current, from, r.t_e);
                let to_now = current_name(tracks, &current, to, r.t_s.saturating_sub(1));
                (from_now, to_now)
            })
            .collect();
        let mut staged = current.clone();
        let mut collision = None;
        for t in r.t_e..staged.len() {
            for b in staged.frames[t].boxes.iter_mut() {
                if let Some(&to) = rename.get(&b.id) {
                    b.id = to;
                }
            }
            if !staged.frames[t].has_unique_ids() {
                collision = Some(t);
                break;
            }
        }
        outcomes[i] = match collision {
            Some(frame) => {
                warn!("session {} remap rejected: duplicate id at frame {frame}", r.session);
                RemapOutcome::Collision { frame }
            }
            None => {
                current = staged;
                RemapOutcome::Applied
            }
        };
    }
    (current, outcomes)
}

/// Name that original id `id` carries in `current` at frame `t`. Boxes keep
/// their positions, so the lookup goes through the original table.
fn current_name(original: &Sequence, current: &Sequence, id: ObjectId, t: usize) -> ObjectId {
    original
        .frames
        .get(t)
        .and_then(|f| f.boxes.iter().position(|b| b.id == id))
        .map_or(id, |k| current.frames[t].boxes[k].id)
}
