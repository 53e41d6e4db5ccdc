//! Seeded synthetic stand-ins for annotated retinal data: a noisy reddish
//! background, with affected samples carrying a bright 2×2 dot.

use rand::Rng;

use super::{rng, Label, LesionMask, Patch, PatchDataset, RasterImage, PATCH_HEIGHT, PATCH_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    /// Mean background colour, 0–255 per channel.
    pub background: [f64; 3],
    /// Half-width of the uniform per-sample noise, 0–255 scale.
    pub noise: f64,
    pub dot: [f64; 3],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            background: [140.0, 70.0, 35.0],
            noise: 25.0,
            dot: [245.0, 225.0, 190.0],
        }
    }
}

fn sample(rng: &mut impl Rng, mean: [f64; 3], noise: f64) -> [u8; 3] {
    mean.map(|m| (m + rng.gen_range(-noise..=noise)).round().clamp(0.0, 255.0) as u8)
}

/// Top-left of the 2×2 dot inside a patch, matching where centroid-centred
/// extraction places a 2×2 lesion.
pub const DOT_ORIGIN: (usize, usize) = (PATCH_WIDTH / 2, PATCH_HEIGHT / 2);

/// `per_class` healthy and `per_class` affected patches, interleaved.
pub fn synthetic_pool(per_class: usize, seed: u64, config: &SyntheticConfig) -> PatchDataset {
    let mut rng = rng(seed);
    let mut patches = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        for label in Label::ALL {
            let mut img = RasterImage::filled(PATCH_WIDTH, PATCH_HEIGHT, [0, 0, 0]);
            for px in img.pixels.iter_mut() {
                *px = sample(&mut rng, config.background, config.noise);
            }
            if label == Label::Affected {
                let (x0, y0) = DOT_ORIGIN;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    img.set_pixel(x0 + dx, y0 + dy, sample(&mut rng, config.dot, config.noise));
                }
            }
            patches.push(Patch::from_window(&img, 0, 0, label));
        }
    }
    PatchDataset::new(format!("synthetic-{seed}"), patches)
}

/// A full-size image with `n_dots` non-touching 2×2 lesions and the
/// matching mask.
pub fn synthetic_fundus(
    width: usize,
    height: usize,
    n_dots: usize,
    seed: u64,
    config: &SyntheticConfig,
) -> (RasterImage, LesionMask) {
    let mut rng = rng(seed);
    let mut image = RasterImage::filled(width, height, [0, 0, 0]);
    for px in image.pixels.iter_mut() {
        *px = sample(&mut rng, config.background, config.noise);
    }
    let mut mask = LesionMask::empty(width, height);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < n_dots && attempts < 100 * n_dots.max(1) && width > 4 && height > 4 {
        attempts += 1;
        let x = rng.gen_range(1..width - 2);
        let y = rng.gen_range(1..height - 2);
        // keep a one-pixel gap so dots stay separate components
        let clear = (y - 1..y + 3).all(|yy| (x - 1..x + 3).all(|xx| !mask.get(xx, yy)));
        if !clear {
            continue;
        }
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            image.set_pixel(x + dx, y + dy, sample(&mut rng, config.dot, config.noise));
            mask.set(x + dx, y + dy, true);
        }
        placed += 1;
    }
    (image, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::extract_patches;

    #[test]
    fn pool_is_balanced_and_seeded() {
        let cfg = SyntheticConfig::default();
        let a = synthetic_pool(10, 1, &cfg);
        assert_eq!(a.class_counts(), (10, 10));
        assert_eq!(a, synthetic_pool(10, 1, &cfg));
        assert_ne!(a, synthetic_pool(10, 2, &cfg));
    }

    #[test]
    fn fundus_dots_extract_cleanly() {
        let cfg = SyntheticConfig::default();
        let (image, mask) = synthetic_fundus(80, 60, 5, 3, &cfg);
        let ds = extract_patches("f", &image, &mask, 5, 3).unwrap();
        assert_eq!(ds.class_counts(), (5, 5));
        for p in &ds.patches {
            let prov = p.provenance.as_ref().unwrap();
            assert_eq!(mask.window_overlaps(prov.x, prov.y), p.label == Label::Affected);
        }
    }
}
