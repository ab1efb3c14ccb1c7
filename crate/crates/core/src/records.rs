//! Per-frame object boxes in world meters, shared by ground truth and
//! tracker output.

use std::collections::BTreeSet;

use crate::geometry::Rect;

/// Object identifier (ground-truth player id or tracker id).
pub type ObjectId = u32;

/// Center-parameterized world box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRecord {
    pub id: ObjectId,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxRecord {
    pub fn new(id: ObjectId, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { id, cx, cy, w, h }
    }

    pub fn footprint(&self) -> Rect {
        Rect::from_center(self.cx, self.cy, self.w, self.h)
    }

    pub fn center(&self) -> [f64; 2] {
        [self.cx, self.cy]
    }

    pub fn distance_to(&self, other: &BoxRecord) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameRecords {
    pub timestamp: f64,
    pub boxes: Vec<BoxRecord>,
}

impl FrameRecords {
    pub fn new(timestamp: f64, boxes: Vec<BoxRecord>) -> Self {
        Self { timestamp, boxes }
    }

    pub fn ids(&self) -> BTreeSet<ObjectId> {
        self.boxes.iter().map(|b| b.id).collect()
    }

    pub fn get(&self, id: ObjectId) -> Option<&BoxRecord> {
        self.boxes.iter().find(|b| b.id == id)
    }

    pub fn has_unique_ids(&self) -> bool {
        self.ids().len() == self.boxes.len()
    }
}

/// A whole sequence, one entry per frame (frames without objects included).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequence {
    pub frames: Vec<FrameRecords>,
}

impl Sequence {
    pub fn new(frames: Vec<FrameRecords>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn box_count(&self) -> usize {
        self.frames.iter().map(|f| f.boxes.len()).sum()
    }

    pub fn id_sets(&self) -> Vec<BTreeSet<ObjectId>> {
        self.frames.iter().map(FrameRecords::ids).collect()
    }

    /// Latest record of `id` at or before `frame`, falling back to the
    /// earliest record after it.
    pub fn nearest_record(&self, id: ObjectId, frame: usize) -> Option<(usize, BoxRecord)> {
        let last = frame.min(self.frames.len().checked_sub(1)?);
        (0..=last)
            .rev()
            .chain(last + 1..self.frames.len())
            .find_map(|t| self.frames[t].get(id).map(|b| (t, *b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_record_prefers_past() {
        let seq = Sequence::new(vec![
            FrameRecords::new(0.0, vec![BoxRecord::new(1, 0.0, 0.0, 1.0, 1.0)]),
            FrameRecords::new(0.1, vec![]),
            FrameRecords::new(0.2, vec![BoxRecord::new(1, 2.0, 0.0, 1.0, 1.0), BoxRecord::new(2, 5.0, 0.0, 1.0, 1.0)]),
        ]);
        assert_eq!(seq.nearest_record(1, 1).unwrap().0, 0);
        assert_eq!(seq.nearest_record(2, 0).unwrap().0, 2);
        assert_eq!(seq.nearest_record(1, 9).unwrap().0, 2);
        assert!(seq.nearest_record(3, 1).is_none());
        assert_eq!(seq.box_count(), 3);
    }
}
