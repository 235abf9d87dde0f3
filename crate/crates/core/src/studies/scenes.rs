//! Seeded synthetic microscopy-like scenes with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::maskdata::LabelMask;
use crate::runner::Sample;

const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    /// Mean radius range; an ellipse has semi-axes `r*sqrt(a)` and `r/sqrt(a)`.
    pub radius: (f64, f64),
    pub aspect: (f64, f64),
    pub foreground: (u32, u32),
    pub background: (u32, u32),
    pub noise_sigma: f64,
    /// Minimum background pixels between objects.
    pub gap: usize,
}

impl SceneParams {
    /// Round objects at a density that leaves room for placement.
    pub fn for_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            count: (width * height / 1500).clamp(1, 60),
            radius: (5.0, 10.0),
            aspect: (1.0, 1.3),
            foreground: (150, 230),
            background: (30, 80),
            noise_sigma: 12.0,
            gap: 2,
        }
    }

    pub fn elongated(mut self) -> Self {
        self.aspect = (1.8, 3.0);
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.width < 8 || self.height < 8 {
            return Err(ConfigError::new("size", "scenes must be at least 8x8"));
        }
        if !(self.radius.0 > 0.0 && self.radius.0 <= self.radius.1) {
            return Err(ConfigError::new("radius", "radius range must be positive and ordered"));
        }
        if !(self.aspect.0 >= 1.0 && self.aspect.0 <= self.aspect.1) {
            return Err(ConfigError::new("aspect", "aspect range must start at 1 or more and be ordered"));
        }
        if self.foreground.0 > self.foreground.1 || self.background.0 > self.background.1 || self.foreground.1 > 255 {
            return Err(ConfigError::new("intensity", "intensity bands must be ordered and within 0..=255"));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return Err(ConfigError::new("noise_sigma", "noise must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: LabelMask,
    pub truth: LabelMask,
    pub group: Option<String>,
    pub params: SceneParams,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn object_count(&self) -> usize {
        self.truth.max_label() as usize
    }

    pub fn to_sample(&self, name: impl Into<String>) -> Sample {
        Sample::in_memory(name, self.image.clone(), self.truth.clone())
    }
}

/// Pixels whose centers fall inside a rotated ellipse, clipped to the frame.
fn ellipse_pixels(cx: f64, cy: f64, a: f64, b: f64, theta: f64, w: usize, h: usize) -> Vec<(usize, usize)> {
    let (s, c) = theta.sin_cos();
    let reach = a.max(b).ceil() as i64 + 1;
    let mut out = Vec::new();
    for y in (cy as i64 - reach).max(0)..=(cy as i64 + reach).min(h as i64 - 1) {
        for x in (cx as i64 - reach).max(0)..=(cx as i64 + reach).min(w as i64 - 1) {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                out.push((x as usize, y as usize));
            }
        }
    }
    out
}

pub fn generate_scene(params: &SceneParams, seed: u64) -> Result<SyntheticScene, ConfigError> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = LabelMask::zeros(w, h);
    // Cells within `gap` of an object; new objects may not touch them.
    let mut reserved = vec![false; w * h];
    let mut intensities = Vec::new();
    let mut rejections = 0;
    while intensities.len() < params.count {
        let r = rng.random_range(params.radius.0..=params.radius.1);
        let aspect = rng.random_range(params.aspect.0..=params.aspect.1);
        let (a, b) = (r * aspect.sqrt(), r / aspect.sqrt());
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let margin = a.ceil() + 1.0;
        let fits = (w as f64) > 2.0 * margin && (h as f64) > 2.0 * margin;
        let placed = fits && {
            let cx = rng.random_range(margin..w as f64 - margin);
            let cy = rng.random_range(margin..h as f64 - margin);
            let px = ellipse_pixels(cx, cy, a, b, theta, w, h);
            if px.is_empty() || px.iter().any(|&(x, y)| reserved[y * w + x]) {
                false
            } else {
                let label = intensities.len() as u32 + 1;
                let g = params.gap as i64;
                for &(x, y) in &px {
                    truth.set(x, y, label);
                    for yy in (y as i64 - g).max(0)..=(y as i64 + g).min(h as i64 - 1) {
                        for xx in (x as i64 - g).max(0)..=(x as i64 + g).min(w as i64 - 1) {
                            reserved[yy as usize * w + xx as usize] = true;
                        }
                    }
                }
                intensities.push(rng.random_range(params.foreground.0..=params.foreground.1));
                true
            }
        };
        if !placed {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                log::warn!(
                    "placed {} of {} objects after {MAX_REJECTIONS} rejections (seed {seed})",
                    intensities.len(),
                    params.count
                );
                break;
            }
        }
    }
    let background = rng.random_range(params.background.0..=params.background.1) as f64;
    let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| ConfigError::new("noise_sigma", e.to_string()))?;
    let mut image = LabelMask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let l = truth.get(x, y);
            let base = if l == 0 { background } else { intensities[l as usize - 1] as f64 };
            let v = (base + noise.sample(&mut rng)).round().clamp(0.0, 255.0);
            image.set(x, y, v as u32);
        }
    }
    Ok(SyntheticScene { image, truth, group: None, params: *params, seed })
}

/// `n` scenes of round objects; scene `i` is seeded from `(seed, i)`.
pub fn generate_dataset(n: usize, seed: u64, width: usize, height: usize) -> Result<Vec<SyntheticScene>, ConfigError> {
    generate_with(n, seed, &SceneParams::for_size(width, height))
}

pub fn generate_with(n: usize, seed: u64, params: &SceneParams) -> Result<Vec<SyntheticScene>, ConfigError> {
    if n == 0 {
        return Err(ConfigError::new("n", "at least one scene is required"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| generate_scene(params, master.random())).collect()
}

/// Two labeled groups, `round` then `elongated`.
pub fn generate_grouped_dataset(
    n_round: usize,
    n_elongated: usize,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<Vec<SyntheticScene>, ConfigError> {
    let base = SceneParams::for_size(width, height);
    let mut out = Vec::new();
    for (group, n, params, s) in [("round", n_round, base, seed), ("elongated", n_elongated, base.elongated(), seed ^ 0x5eed)] {
        if n == 0 {
            continue;
        }
        for mut scene in generate_with(n, s, &params)? {
            scene.group = Some(group.to_string());
            out.push(scene);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskdata::{split_components, Connectivity};

    #[test]
    fn deterministic_per_seed() {
        let a = generate_dataset(3, 7, 64, 64).unwrap();
        let b = generate_dataset(3, 7, 64, 64).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_dataset(3, 8, 64, 64).unwrap());
        assert_ne!(a[0].image, a[1].image);
    }

    #[test]
    fn truth_is_contiguous_and_separated() {
        for scene in generate_dataset(5, 3, 96, 96).unwrap() {
            let n = scene.object_count();
            assert_eq!(n, scene.params.count);
            let mut area = vec![0usize; n + 1];
            for &l in scene.truth.labels() {
                area[l as usize] += 1;
            }
            assert!(area[1..].iter().all(|&a| a > 0));
            // each object is one 8-connected piece and no two objects touch
            let pieces = split_components(&scene.truth, Connectivity::Eight);
            assert_eq!(pieces.max_label() as usize, n);
            let w = scene.truth.width();
            for y in 0..scene.truth.height() - 1 {
                for x in 0..w - 1 {
                    let l = scene.truth.get(x, y);
                    for (dx, dy) in [(1, 0), (0, 1), (1, 1)] {
                        let o = scene.truth.get(x + dx, y + dy);
                        assert!(l == 0 || o == 0 || l == o);
                    }
                }
            }
        }
    }

    #[test]
    fn intensity_bands() {
        let p = SceneParams { noise_sigma: 0.0, ..SceneParams::for_size(64, 64) };
        let s = generate_scene(&p, 1).unwrap();
        for (&v, &l) in s.image.labels().iter().zip(s.truth.labels()) {
            if l == 0 {
                assert!((30..=80).contains(&v));
            } else {
                assert!((150..=230).contains(&v));
            }
        }
    }

    #[test]
    fn crowded_scene_reduces_count() {
        let p = SceneParams { count: 500, ..SceneParams::for_size(40, 40) };
        let s = generate_scene(&p, 2).unwrap();
        assert!(s.object_count() >= 1 && s.object_count() < 500);
    }

    #[test]
    fn single_small_scene_and_groups() {
        let one = generate_dataset(1, 9, 64, 64).unwrap();
        assert_eq!(one.len(), 1);
        assert!(generate_dataset(0, 9, 64, 64).is_err());
        let g = generate_grouped_dataset(5, 10, 1, 64, 64).unwrap();
        assert_eq!(g.iter().filter(|s| s.group.as_deref() == Some("round")).count(), 5);
        assert_eq!(g.iter().filter(|s| s.group.as_deref() == Some("elongated")).count(), 10);
        assert!(g[5].params.aspect.0 >= 1.8);
    }
}
