//! Label masks: PGM (P5) I/O, connected-component labeling and per-object
//! records (area, bounding rectangle, outer boundary polygon).

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::spatialindex::Rect;

/// Row-major grid of nonnegative labels; 0 is background.
///
/// Also used for grayscale images, where the labels are intensities.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self, FormatError> {
        if width * height != labels.len() {
            return Err(FormatError::Dimensions { width, height, len: labels.len() });
        }
        Ok(Self { width, height, labels })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, labels: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u32> {
        self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u32) {
        self.labels[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &LabelMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn nonzero_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v != 0).count()
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// True when all nonzero pixels share a single value (e.g. a 0/255 mask).
    pub fn is_binary(&self) -> bool {
        let mut seen = None;
        for &v in &self.labels {
            if v != 0 {
                match seen {
                    None => seen = Some(v),
                    Some(s) if s != v => return false,
                    _ => {}
                }
            }
        }
        true
    }

    /// Applies `f` to every nonzero label.
    pub fn relabel(&self, mut f: impl FnMut(u32) -> u32) -> LabelMask {
        let labels = self.labels.iter().map(|&v| if v == 0 { 0 } else { f(v) }).collect();
        LabelMask { width: self.width, height: self.height, labels }
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, FormatError> {
        read_mask(bytes)
    }

    pub fn to_pgm(&self) -> Result<Vec<u8>, FormatError> {
        write_mask(self)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        read_mask(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let bytes = write_mask(self).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        std::fs::write(path, bytes)
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, FormatError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(FormatError::Header(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FormatError::Header(format!("{what} out of range")))
    }
}

/// Parses a binary PGM. Samples wider than one byte are big-endian.
pub fn read_mask(bytes: &[u8]) -> Result<LabelMask, FormatError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(FormatError::BadMagic);
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(FormatError::MaxVal(maxval));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(FormatError::Header("missing whitespace after maxval".into())),
    }
    let sample = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * sample;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(FormatError::Truncated { expected, got: payload.len() });
    }
    let labels = if sample == 1 {
        payload[..expected].iter().map(|&b| b as u32).collect()
    } else {
        payload[..expected].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32).collect()
    };
    LabelMask::new(width, height, labels)
}

/// Writes the canonical form: `P5\n<w> <h>\n<maxval>\n` with maxval 255 when
/// every label fits a byte, 65535 otherwise.
pub fn write_mask(mask: &LabelMask) -> Result<Vec<u8>, FormatError> {
    let max = mask.max_label();
    if max > 65535 {
        return Err(FormatError::LabelTooLarge(max));
    }
    let maxval = if max < 256 { 255 } else { 65535 };
    let mut out = format!("P5\n{} {}\n{}\n", mask.width, mask.height, maxval).into_bytes();
    if maxval == 255 {
        out.extend(mask.labels.iter().map(|&v| v as u8));
    } else {
        for &v in &mask.labels {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4-conn")]
    Four,
    #[default]
    #[serde(rename = "8-conn")]
    Eight,
}

impl Connectivity {
    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "4-conn" | "4" => Some(Connectivity::Four),
            "8-conn" | "8" => Some(Connectivity::Eight),
            _ => None,
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// Labels maximal connected nonzero regions `1..=n` in raster first-touch order.
///
/// Pixels are connected when both are nonzero; the input label values are
/// otherwise ignored.
pub fn connected_components(mask: &LabelMask, connectivity: Connectivity) -> LabelMask {
    components_by(mask, connectivity, |a, b| a != 0 && b != 0)
}

/// Like [`connected_components`] but only joins neighbours carrying the same
/// input label, so touching objects of a labeled mask stay separate.
pub fn split_components(mask: &LabelMask, connectivity: Connectivity) -> LabelMask {
    components_by(mask, connectivity, |a, b| a != 0 && a == b)
}

fn components_by(mask: &LabelMask, connectivity: Connectivity, joins: impl Fn(u32, u32) -> bool) -> LabelMask {
    let (w, h) = (mask.width, mask.height);
    let mut out = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.labels[start] == 0 || out[start] != 0 {
            continue;
        }
        next += 1;
        out[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if out[q] == 0 && joins(mask.labels[p], mask.labels[q]) {
                    out[q] = next;
                    queue.push_back(q);
                }
            }
        }
    }
    LabelMask { width: w, height: h, labels: out }
}

/// Pixel-corner coordinate of a boundary vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vertex {
    pub x: i64,
    pub y: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskObject {
    pub label: u32,
    pub area: usize,
    pub mbr: Rect,
    /// Closed outer contour (first vertex repeated last) with positive
    /// shoelace area in `(x, y)` coordinates, i.e. counterclockwise for
    /// x-right/y-up axes.
    pub boundary: Vec<Vertex>,
}

impl MaskObject {
    /// Shoelace area of the boundary polygon.
    pub fn polygon_area(&self) -> f64 {
        shoelace(&self.boundary)
    }
}

pub fn shoelace(poly: &[Vertex]) -> f64 {
    let twice: i64 = poly.windows(2).map(|w| w[0].x * w[1].y - w[1].x * w[0].y).sum();
    twice as f64 / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSet {
    pub width: usize,
    pub height: usize,
    /// Sorted by label.
    pub objects: Vec<MaskObject>,
}

impl ObjectSet {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, label: u32) -> Option<&MaskObject> {
        self.objects.binary_search_by_key(&label, |o| o.label).ok().map(|i| &self.objects[i])
    }

    pub fn rects(&self) -> impl Iterator<Item = (u32, Rect)> + '_ {
        self.objects.iter().map(|o| (o.label, o.mbr))
    }
}

/// One record per distinct nonzero label.
///
/// The boundary traces the outer contour of the 4-connected piece holding the
/// label's first pixel in raster order; holes are not traced.
pub fn extract_objects(mask: &LabelMask) -> ObjectSet {
    struct Acc {
        area: usize,
        first: (usize, usize),
        mbr: Rect,
    }
    let mut acc: BTreeMap<u32, Acc> = BTreeMap::new();
    for y in 0..mask.height {
        for x in 0..mask.width {
            let l = mask.get(x, y);
            if l == 0 {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            acc.entry(l)
                .and_modify(|a| {
                    a.area += 1;
                    a.mbr.xmin = a.mbr.xmin.min(xi);
                    a.mbr.xmax = a.mbr.xmax.max(xi);
                    a.mbr.ymax = a.mbr.ymax.max(yi);
                })
                .or_insert(Acc { area: 1, first: (x, y), mbr: Rect { xmin: xi, ymin: yi, xmax: xi, ymax: yi } });
        }
    }
    let objects = acc
        .into_iter()
        .map(|(label, a)| MaskObject {
            label,
            area: a.area,
            mbr: a.mbr,
            boundary: trace_boundary(mask, label, a.first),
        })
        .collect();
    ObjectSet { width: mask.width, height: mask.height, objects }
}

/// Labels binary masks with `connectivity` first; labeled masks are used as-is.
pub fn objects_from_mask(mask: &LabelMask, connectivity: Connectivity) -> (LabelMask, ObjectSet) {
    let labeled = if mask.is_binary() { connected_components(mask, connectivity) } else { mask.clone() };
    let objects = extract_objects(&labeled);
    (labeled, objects)
}

/// Corner-following trace keeping the object on the right-hand side (screen
/// orientation, y down). Diagonal contacts are not crossed.
fn trace_boundary(mask: &LabelMask, label: u32, first: (usize, usize)) -> Vec<Vertex> {
    let inside = |px: i64, py: i64| {
        px >= 0
            && py >= 0
            && (px as usize) < mask.width
            && (py as usize) < mask.height
            && mask.get(px as usize, py as usize) == label
    };
    let start = (first.0 as i64, first.1 as i64);
    let start_dir = (1i64, 0i64);
    let mut v = start;
    let mut d = start_dir;
    let mut poly = vec![Vertex { x: v.0, y: v.1 }];
    loop {
        v = (v.0 + d.0, v.1 + d.1);
        let right = (-d.1, d.0);
        // pixels ahead of the vertex, on each side of the heading
        let ar = ((2 * v.0 + d.0 + right.0).div_euclid(2), (2 * v.1 + d.1 + right.1).div_euclid(2));
        let al = ((2 * v.0 + d.0 - right.0).div_euclid(2), (2 * v.1 + d.1 - right.1).div_euclid(2));
        let next = if !inside(ar.0, ar.1) {
            right
        } else if inside(al.0, al.1) {
            (d.1, -d.0)
        } else {
            d
        };
        if v == start && next == start_dir {
            break;
        }
        if next != d {
            poly.push(Vertex { x: v.0, y: v.1 });
        }
        d = next;
    }
    poly.push(poly[0]);
    if shoelace(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}
