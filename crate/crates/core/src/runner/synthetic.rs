//! Built-in threshold segmenter used as a deterministic stand-in workflow.

use crate::error::EvaluationError;
use crate::maskdata::{connected_components, Connectivity, LabelMask};
use crate::paramspace::{ParamValue, ParameterPoint, ParameterSpace, ParameterSpec};

/// Seconds charged per pixel per pass.
pub const COST_PER_PIXEL_PASS: f64 = 1e-7;

pub const DIM_NAMES: [&str; 5] = ["Blur", "Threshold", "MinSize", "MaxSize", "Connectivity"];

/// The segmenter's parameter space.
pub fn synthetic_space() -> ParameterSpace {
    ParameterSpace::new(vec![
        ParameterSpec::range("Blur", 0.0, 5.0, 1.0).with_default(ParamValue::Number(1.0)),
        ParameterSpec::range("Threshold", 0.0, 255.0, 5.0).with_default(ParamValue::Number(115.0)),
        ParameterSpec::range("MinSize", 1.0, 100.0, 1.0).with_default(ParamValue::Number(10.0)),
        ParameterSpec::range("MaxSize", 100.0, 2000.0, 50.0).with_default(ParamValue::Number(1000.0)),
        ParameterSpec::categorical("Connectivity", ["4-conn", "8-conn"]).with_default(ParamValue::Label("8-conn".into())),
    ])
    .expect("built-in space is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmenterParams {
    pub blur: u32,
    pub threshold: u32,
    pub min_size: usize,
    pub max_size: usize,
    pub connectivity: Connectivity,
}

impl SegmenterParams {
    pub fn from_point(space: &ParameterSpace, point: &ParameterPoint) -> Result<Self, EvaluationError> {
        let num = |name: &str| -> Result<f64, EvaluationError> {
            match point.get(space, name) {
                Some(ParamValue::Number(v)) if *v >= 0.0 => Ok(*v),
                Some(other) => Err(EvaluationError::Parameters(format!("{name} = {other} is not a nonnegative number"))),
                None => Err(EvaluationError::Parameters(format!("space has no `{name}` dimension"))),
            }
        };
        let connectivity = match point.get(space, "Connectivity") {
            Some(ParamValue::Label(l)) => Connectivity::from_label(l)
                .ok_or_else(|| EvaluationError::Parameters(format!("unknown connectivity `{l}`")))?,
            _ => return Err(EvaluationError::Parameters("Connectivity must be `4-conn` or `8-conn`".into())),
        };
        Ok(Self {
            blur: num("Blur")?.round() as u32,
            threshold: num("Threshold")?.round() as u32,
            min_size: num("MinSize")?.round() as usize,
            max_size: num("MaxSize")?.round() as usize,
            connectivity,
        })
    }

    /// Deterministic run time charged for one image.
    pub fn cost_seconds(&self, pixels: usize) -> f64 {
        (1.0 + self.blur as f64) * pixels as f64 * COST_PER_PIXEL_PASS
    }
}

/// One 3x3 box-filter pass with clamped edges.
fn box_blur(src: &[f32], w: usize, h: usize) -> Vec<f32> {
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in [-1i64, 0, 1] {
                let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                for dx in [-1i64, 0, 1] {
                    let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    s += src[yy * w + xx];
                }
            }
            out[y * w + x] = s / 9.0;
        }
    }
    out
}

/// Blur, threshold, label, then drop components outside `[min_size, max_size]`.
/// Surviving objects are relabeled `1..=n` in raster order.
pub fn synthetic_segment(image: &LabelMask, params: &SegmenterParams) -> LabelMask {
    let (w, h) = (image.width(), image.height());
    let mut px: Vec<f32> = image.labels().iter().map(|&v| v as f32).collect();
    for _ in 0..params.blur {
        px = box_blur(&px, w, h);
    }
    let fg: Vec<u32> = px.iter().map(|&v| u32::from(v >= params.threshold as f32)).collect();
    let binary = LabelMask::new(w, h, fg).expect("same shape as the image");
    let labeled = connected_components(&binary, params.connectivity);
    let mut area = vec![0usize; labeled.max_label() as usize + 1];
    for &l in labeled.labels() {
        area[l as usize] += 1;
    }
    let mut remap = vec![0u32; area.len()];
    let mut next = 0;
    for l in 1..area.len() {
        if area[l] >= params.min_size && area[l] <= params.max_size {
            next += 1;
            remap[l] = next;
        }
    }
    labeled.relabel(|l| remap[l as usize])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(threshold: u32, min_size: usize) -> SegmenterParams {
        SegmenterParams { blur: 0, threshold, min_size, max_size: 1000, connectivity: Connectivity::Eight }
    }

    fn blobs() -> LabelMask {
        let mut m = LabelMask::zeros(12, 8);
        for y in 0..8 {
            for x in 0..12 {
                m.set(x, y, 40);
            }
        }
        for y in 1..4 {
            for x in 1..4 {
                m.set(x, y, 200);
            }
        }
        for y in 5..7 {
            for x in 8..10 {
                m.set(x, y, 180);
            }
        }
        m
    }

    #[test]
    fn threshold_above_image_is_empty() {
        assert_eq!(synthetic_segment(&blobs(), &params(255, 1)).nonzero_count(), 0);
    }

    #[test]
    fn min_size_above_largest_blob_is_empty() {
        assert_eq!(synthetic_segment(&blobs(), &params(100, 10)).nonzero_count(), 0);
    }

    #[test]
    fn size_filter_and_relabeling() {
        let out = synthetic_segment(&blobs(), &params(100, 5));
        assert_eq!(out.max_label(), 1);
        assert_eq!(out.nonzero_count(), 9);
        let both = synthetic_segment(&blobs(), &params(100, 1));
        assert_eq!(both.max_label(), 2);
        assert_eq!(both.get(9, 6), 2);
    }

    #[test]
    fn blur_preserves_constant_images() {
        let src = vec![7.0f32; 20];
        assert_eq!(box_blur(&src, 5, 4), src);
        let mut spike = vec![0.0f32; 9];
        spike[4] = 9.0;
        assert!(box_blur(&spike, 3, 3).iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn params_from_default_point_and_cost() {
        let s = synthetic_space();
        let p = SegmenterParams::from_point(&s, &s.default_point()).unwrap();
        assert_eq!(p, SegmenterParams { blur: 1, threshold: 115, min_size: 10, max_size: 1000, connectivity: Connectivity::Eight });
        assert!((p.cost_seconds(10_000) - 2e-3).abs() < 1e-15);
        assert_eq!(s.cardinality(), num_bigint::BigUint::from(6u32 * 52 * 100 * 39 * 2));
    }
}
