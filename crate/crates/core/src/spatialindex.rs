//! Static Hilbert-packed R-tree over pixel rectangles.
//!
//! Entries are sorted by the Hilbert index of their rectangle centers on an
//! order-16 curve spanning the data extent, then packed bottom-up into nodes
//! of `fanout` children.

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::maskdata::ObjectSet;

pub const DEFAULT_FANOUT: usize = 16;
pub const HILBERT_ORDER: u32 = 16;

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub xmin: i64,
    pub ymin: i64,
    pub xmax: i64,
    pub ymax: i64,
}

impl Rect {
    pub fn new(xmin: i64, ymin: i64, xmax: i64, ymax: i64) -> Self {
        debug_assert!(xmin <= xmax && ymin <= ymax);
        Self { xmin, ymin, xmax, ymax }
    }

    /// Closed-interval test: rectangles sharing only an edge or corner intersect.
    #[inline]
    pub fn intersects(&self, other: &Rect) -> bool {
        self.xmin <= other.xmax && other.xmin <= self.xmax && self.ymin <= other.ymax && other.ymin <= self.ymax
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        self.intersects(other).then(|| Rect {
            xmin: self.xmin.max(other.xmin),
            ymin: self.ymin.max(other.ymin),
            xmax: self.xmax.min(other.xmax),
            ymax: self.ymax.min(other.ymax),
        })
    }

    pub fn contains(&self, other: &Rect) -> bool {
        self.xmin <= other.xmin && self.ymin <= other.ymin && self.xmax >= other.xmax && self.ymax >= other.ymax
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect {
            xmin: self.xmin.min(other.xmin),
            ymin: self.ymin.min(other.ymin),
            xmax: self.xmax.max(other.xmax),
            ymax: self.ymax.max(other.ymax),
        }
    }

    fn center2(&self) -> (i64, i64) {
        (self.xmin + self.xmax, self.ymin + self.ymax)
    }
}

/// Distance along a Hilbert curve covering a `2^order x 2^order` grid.
pub fn hilbert_index(order: u32, x: u32, y: u32) -> u64 {
    let n: u64 = 1 << order;
    let (mut x, mut y) = (x as u64, y as u64);
    let mut d = 0u64;
    let mut s = n / 2;
    while s > 0 {
        let rx = u64::from(x & s > 0);
        let ry = u64::from(y & s > 0);
        d += s * s * ((3 * rx) ^ ry);
        // rotate the quadrant
        if ry == 0 {
            if rx == 1 {
                x = n - 1 - x;
                y = n - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        s /= 2;
    }
    d
}

#[derive(Debug, Clone)]
struct Node {
    mbr: Rect,
    /// Range into the level below (or into `entries` for leaves).
    start: usize,
    end: usize,
}

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    fanout: usize,
    /// Entries in Hilbert order.
    entries: Vec<(u32, Rect)>,
    /// `levels[0]` are leaves; the last level holds the root.
    levels: Vec<Vec<Node>>,
}

impl SpatialIndex {
    pub fn bulk_load(entries: &[(u32, Rect)], fanout: usize) -> Self {
        assert!(fanout >= 2, "fanout must be at least 2");
        let mut sorted: Vec<(u64, usize)> = Vec::with_capacity(entries.len());
        if let Some(extent) = entries.iter().map(|e| e.1).reduce(|a, b| a.union(&b)) {
            let (min_x, min_y) = (2 * extent.xmin, 2 * extent.ymin);
            let (span_x, span_y) = (2 * (extent.xmax - extent.xmin), 2 * (extent.ymax - extent.ymin));
            let cells = ((1u64 << HILBERT_ORDER) - 1) as f64;
            let scale = |v: i64, min: i64, span: i64| -> u32 {
                if span == 0 {
                    0
                } else {
                    ((v - min) as f64 / span as f64 * cells).floor() as u32
                }
            };
            for (i, (_, r)) in entries.iter().enumerate() {
                let (cx, cy) = r.center2();
                let h = hilbert_index(HILBERT_ORDER, scale(cx, min_x, span_x), scale(cy, min_y, span_y));
                sorted.push((h, i));
            }
        }
        // stable: equal ranks keep input order
        sorted.sort_by_key(|&(h, _)| h);
        let entries: Vec<(u32, Rect)> = sorted.iter().map(|&(_, i)| entries[i]).collect();

        let mut levels = Vec::new();
        if !entries.is_empty() {
            let leaves: Vec<Node> = (0..entries.len())
                .step_by(fanout)
                .map(|start| {
                    let end = (start + fanout).min(entries.len());
                    let mbr = entries[start..end].iter().map(|e| e.1).reduce(|a, b| a.union(&b)).unwrap();
                    Node { mbr, start, end }
                })
                .collect();
            levels.push(leaves);
            while levels.last().unwrap().len() > 1 {
                let below = levels.last().unwrap();
                let up = (0..below.len())
                    .step_by(fanout)
                    .map(|start| {
                        let end = (start + fanout).min(below.len());
                        let mbr = below[start..end].iter().map(|n| n.mbr).reduce(|a, b| a.union(&b)).unwrap();
                        Node { mbr, start, end }
                    })
                    .collect();
                levels.push(up);
            }
        }
        Self { fanout, entries, levels }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    /// Number of node levels (0 for an empty index).
    pub fn height(&self) -> usize {
        self.levels.len()
    }

    pub fn root_mbr(&self) -> Option<Rect> {
        self.levels.last().map(|l| l[0].mbr)
    }

    /// Ids in Hilbert (storage) order.
    pub fn ids_in_order(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    /// Ids of all entries intersecting `probe`, ascending.
    pub fn query(&self, probe: &Rect) -> Vec<u32> {
        let mut out = Vec::new();
        self.visit(probe, |id| out.push(id));
        out.sort_unstable();
        out
    }

    fn visit(&self, probe: &Rect, mut hit: impl FnMut(u32)) {
        let Some(top) = self.levels.len().checked_sub(1) else { return };
        let mut stack = vec![(top, 0usize)];
        while let Some((level, i)) = stack.pop() {
            let node = &self.levels[level][i];
            if !node.mbr.intersects(probe) {
                continue;
            }
            if level == 0 {
                for &(id, r) in &self.entries[node.start..node.end] {
                    if r.intersects(probe) {
                        hit(id);
                    }
                }
            } else {
                stack.extend((node.start..node.end).map(|c| (level - 1, c)));
            }
        }
    }

    /// Checks the structural invariants; used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (li, level) in self.levels.iter().enumerate() {
            for node in level {
                let children: Vec<Rect> = if li == 0 {
                    self.entries[node.start..node.end].iter().map(|e| e.1).collect()
                } else {
                    self.levels[li - 1][node.start..node.end].iter().map(|n| n.mbr).collect()
                };
                if children.is_empty() || children.len() > self.fanout {
                    return Err(format!("node at level {li} has {} children", children.len()));
                }
                if let Some(c) = children.iter().find(|c| !node.mbr.contains(c)) {
                    return Err(format!("node mbr {:?} does not contain {:?}", node.mbr, c));
                }
            }
        }
        Ok(())
    }
}

/// Filter phase of a spatial join: every `(id_a, id_b)` whose rectangles
/// intersect, sorted by `(id_a, id_b)`.
///
/// The larger set is indexed and probed with the smaller one.
pub fn join(a: &ObjectSet, b: &ObjectSet) -> Vec<(u32, u32)> {
    let ra: Vec<(u32, Rect)> = a.rects().collect();
    let rb: Vec<(u32, Rect)> = b.rects().collect();
    join_rects(&ra, &rb)
}

pub fn join_rects(a: &[(u32, Rect)], b: &[(u32, Rect)]) -> Vec<(u32, u32)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let a_indexed = a.len() > b.len();
    let (indexed, probes) = if a_indexed { (a, b) } else { (b, a) };
    let index = SpatialIndex::bulk_load(indexed, DEFAULT_FANOUT);
    let hits: Vec<Vec<(u32, u32)>> = exec::par_map(probes, |(pid, r)| {
        index
            .query(r)
            .into_iter()
            .map(|hid| if a_indexed { (hid, *pid) } else { (*pid, hid) })
            .collect()
    });
    let mut pairs: Vec<(u32, u32)> = hits.into_iter().flatten().collect();
    pairs.sort_unstable();
    pairs
}
