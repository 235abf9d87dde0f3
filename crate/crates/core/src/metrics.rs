//! Segmentation agreement metrics.
//!
//! Pixel-level scores compare the nonzero pixel sets of two masks. The
//! object-matched Dice pairs every reference object with the computed object
//! it overlaps most, using the R-tree join as the filter step and exact pixel
//! counting inside the rectangle intersection as the refine step.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ShapeError};
use crate::exec;
use crate::maskdata::{objects_from_mask, Connectivity, LabelMask, ObjectSet};
use crate::spatialindex::{self, Rect};

/// Quality metric selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "pixel-dice")]
    PixelDice,
    #[serde(rename = "pixel-jaccard")]
    PixelJaccard,
    #[default]
    #[serde(rename = "object-dice")]
    ObjectDice,
}

impl MetricKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pixel-dice" => Some(Self::PixelDice),
            "pixel-jaccard" => Some(Self::PixelJaccard),
            "object-dice" => Some(Self::ObjectDice),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PixelDice => "pixel-dice",
            Self::PixelJaccard => "pixel-jaccard",
            Self::ObjectDice => "object-dice",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelCounts {
    pub a: usize,
    pub b: usize,
    pub intersection: usize,
}

impl PixelCounts {
    pub fn union(&self) -> usize {
        self.a + self.b - self.intersection
    }

    pub fn dice(&self) -> f64 {
        if self.a + self.b == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / (self.a + self.b) as f64
        }
    }

    pub fn jaccard(&self) -> f64 {
        let u = self.union();
        if u == 0 {
            1.0
        } else {
            self.intersection as f64 / u as f64
        }
    }
}

fn check_shape(a: &LabelMask, b: &LabelMask) -> Result<(), ShapeError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(ShapeError { a_width: a.width(), a_height: a.height(), b_width: b.width(), b_height: b.height() })
    }
}

pub fn pixel_counts(a: &LabelMask, b: &LabelMask) -> Result<PixelCounts, ShapeError> {
    check_shape(a, b)?;
    let mut c = PixelCounts { a: 0, b: 0, intersection: 0 };
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (fa, fb) = (x != 0, y != 0);
        c.a += fa as usize;
        c.b += fb as usize;
        c.intersection += (fa && fb) as usize;
    }
    Ok(c)
}

/// `2|A∩B| / (|A|+|B|)` over nonzero pixels; two empty masks score 1.
pub fn pixel_dice(a: &LabelMask, b: &LabelMask) -> Result<f64, ShapeError> {
    Ok(pixel_counts(a, b)?.dice())
}

/// `|A∩B| / |A∪B|` over nonzero pixels; two empty masks score 1.
pub fn pixel_jaccard(a: &LabelMask, b: &LabelMask) -> Result<f64, ShapeError> {
    Ok(pixel_counts(a, b)?.jaccard())
}

/// `(|A∩B|, |A\B| + |B\A|)` in pixels.
pub fn area_metrics(a: &LabelMask, b: &LabelMask) -> Result<(usize, usize), ShapeError> {
    let c = pixel_counts(a, b)?;
    Ok((c.intersection, c.union() - c.intersection))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub reference: u32,
    pub computed: u32,
    pub intersection: usize,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pixel_dice: f64,
    pub pixel_jaccard: f64,
    pub avg_object_dice: f64,
    pub overlap_area: usize,
    pub non_overlap_area: usize,
    pub matched_pairs: Vec<MatchedPair>,
    pub unmatched_ref: Vec<u32>,
    pub unmatched_comp: Vec<u32>,
}

/// A mask together with its extracted objects.
#[derive(Debug, Clone)]
pub struct LabeledObjects {
    pub mask: LabelMask,
    pub objects: ObjectSet,
}

impl LabeledObjects {
    /// Binary masks are labeled with `connectivity`; labeled masks are kept.
    pub fn from_mask(mask: &LabelMask, connectivity: Connectivity) -> Self {
        let (mask, objects) = objects_from_mask(mask, connectivity);
        Self { mask, objects }
    }
}

fn count_in_window(r: &LabeledObjects, rl: u32, c: &LabeledObjects, cl: u32, window: &Rect) -> usize {
    let mut n = 0;
    for y in window.ymin..=window.ymax {
        for x in window.xmin..=window.xmax {
            let (x, y) = (x as usize, y as usize);
            n += (r.mask.get(x, y) == rl && c.mask.get(x, y) == cl) as usize;
        }
    }
    n
}

/// Reference-anchored object Dice.
///
/// Every reference object is matched to the candidate with the largest
/// pixel intersection (ties go to the lower computed label); reference
/// objects without a positive overlap score 0. Matching is non-exclusive.
pub fn avg_object_dice(reference: &LabeledObjects, computed: &LabeledObjects) -> Result<(f64, MetricReport), ShapeError> {
    check_shape(&reference.mask, &computed.mask)?;
    let counts = pixel_counts(&reference.mask, &computed.mask)?;

    // filter
    let candidates = spatialindex::join(&reference.objects, &computed.objects);
    // refine
    let mut best: BTreeMap<u32, (u32, usize)> = BTreeMap::new();
    for (rl, cl) in candidates {
        let ro = reference.objects.get(rl).expect("joined label exists");
        let co = computed.objects.get(cl).expect("joined label exists");
        let window = ro.mbr.intersection(&co.mbr).expect("joined rects intersect");
        let inter = count_in_window(reference, rl, computed, cl, &window);
        if inter == 0 {
            continue;
        }
        // candidates arrive sorted by computed label, so strict `>` keeps the lower label on ties
        let slot = best.entry(rl).or_insert((cl, inter));
        if inter > slot.1 {
            *slot = (cl, inter);
        }
    }
    Ok(summarize(reference, computed, &best, counts))
}

fn summarize(
    reference: &LabeledObjects,
    computed: &LabeledObjects,
    best: &BTreeMap<u32, (u32, usize)>,
    counts: PixelCounts,
) -> (f64, MetricReport) {
    let mut matched_pairs = Vec::new();
    let mut unmatched_ref = Vec::new();
    let mut used = BTreeSet::new();
    let mut total = 0.0;
    for ro in &reference.objects.objects {
        match best.get(&ro.label) {
            Some(&(cl, inter)) => {
                let co = computed.objects.get(cl).expect("matched label exists");
                let dice = 2.0 * inter as f64 / (ro.area + co.area) as f64;
                total += dice;
                used.insert(cl);
                matched_pairs.push(MatchedPair { reference: ro.label, computed: cl, intersection: inter, dice });
            }
            None => unmatched_ref.push(ro.label),
        }
    }
    let unmatched_comp = computed.objects.objects.iter().map(|o| o.label).filter(|l| !used.contains(l)).collect();
    let avg = if reference.objects.is_empty() {
        if computed.objects.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        total / reference.objects.len() as f64
    };
    let report = MetricReport {
        pixel_dice: counts.dice(),
        pixel_jaccard: counts.jaccard(),
        avg_object_dice: avg,
        overlap_area: counts.intersection,
        non_overlap_area: counts.union() - counts.intersection,
        matched_pairs,
        unmatched_ref,
        unmatched_comp,
    };
    (avg, report)
}

/// Full report for a computed mask against a reference mask.
pub fn compare_masks(computed: &LabelMask, reference: &LabelMask, connectivity: Connectivity) -> Result<MetricReport, ShapeError> {
    check_shape(computed, reference)?;
    let r = LabeledObjects::from_mask(reference, connectivity);
    let c = LabeledObjects::from_mask(computed, connectivity);
    Ok(avg_object_dice(&r, &c)?.1)
}

/// Value of `metric` for one computed/reference pair.
pub fn mask_metric(computed: &LabelMask, reference: &LabelMask, metric: MetricKind) -> Result<f64, ShapeError> {
    match metric {
        MetricKind::PixelDice => pixel_dice(computed, reference),
        MetricKind::PixelJaccard => pixel_jaccard(computed, reference),
        MetricKind::ObjectDice => Ok(compare_masks(computed, reference, Connectivity::default())?.avg_object_dice),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetMetricError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("pair {index}: {source}")]
    Shape { index: usize, source: ShapeError },
}

/// Unweighted mean of the per-image metric over `(computed, reference)` pairs.
pub fn dataset_metric(pairs: &[(LabelMask, LabelMask)], metric: MetricKind) -> Result<f64, DatasetMetricError> {
    if pairs.is_empty() {
        return Err(ConfigError::new("pairs", "at least one mask pair is required").into());
    }
    let values = exec::par_map(pairs, |(c, r)| mask_metric(c, r, metric));
    let mut sum = 0.0;
    for (index, v) in values.into_iter().enumerate() {
        sum += v.map_err(|source| DatasetMetricError::Shape { index, source })?;
    }
    Ok(sum / pairs.len() as f64)
}
