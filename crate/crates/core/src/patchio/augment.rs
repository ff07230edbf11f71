use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::seed;

/// Training-time photometric and geometric augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub crop_prob: f64,
    /// Smallest retained area fraction of a random crop.
    pub crop_min_scale: f64,
    pub perspective_prob: f64,
    /// Max corner displacement as a fraction of the side length.
    pub perspective_strength: f64,
    pub jitter_prob: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_prob: 0.5,
            crop_min_scale: 0.6,
            perspective_prob: 0.3,
            perspective_strength: 0.15,
            jitter_prob: 0.8,
            brightness: 0.3,
            contrast: 0.3,
            saturation: 0.3,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            crop_prob: 0.0,
            perspective_prob: 0.0,
            jitter_prob: 0.0,
            ..Self::default()
        }
    }
}

/// Random resized crop, perspective warp and colour jitter, in that order.
/// Output has the input's shape and values in `[0, 1]`.
pub fn augment(image: &Image, cfg: &AugmentConfig, seed_value: u64) -> Image {
    let mut rng = seed::rng(seed_value, &[seed::stream::AUGMENT]);
    let mut img = image.clone();
    if cfg.crop_prob > 0.0 && rng.random_bool(cfg.crop_prob.min(1.0)) {
        img = random_resized_crop(&img, cfg.crop_min_scale, &mut rng);
    }
    if cfg.perspective_prob > 0.0 && rng.random_bool(cfg.perspective_prob.min(1.0)) {
        img = perspective(&img, cfg.perspective_strength, &mut rng);
    }
    if cfg.jitter_prob > 0.0 && rng.random_bool(cfg.jitter_prob.min(1.0)) {
        let mut factor = |s: f64| if s > 0.0 { rng.random_range(1.0 - s..=1.0 + s) as f32 } else { 1.0 };
        let (b, c, s) = (factor(cfg.brightness), factor(cfg.contrast), factor(cfg.saturation));
        color_jitter(&mut img, b, c, s);
    }
    for v in &mut img.data {
        *v = v.clamp(0.0, 1.0);
    }
    img
}

fn random_resized_crop(img: &Image, min_scale: f64, rng: &mut impl Rng) -> Image {
    let scale = rng.random_range(min_scale.clamp(0.05, 1.0)..=1.0);
    let side = scale.sqrt();
    let ch = ((img.height as f64 * side).round() as usize).clamp(1, img.height);
    let cw = ((img.width as f64 * side).round() as usize).clamp(1, img.width);
    let y0 = rng.random_range(0..=img.height - ch);
    let x0 = rng.random_range(0..=img.width - cw);
    img.crop(y0, x0, ch, cw).resize(img.height, img.width)
}

/// Solves the 3×3 homography mapping `src[i] -> dst[i]` for four point pairs.
fn homography(src: [(f64, f64); 4], dst: [(f64, f64); 4]) -> Option<[f64; 9]> {
    let mut a = [[0.0f64; 9]; 8];
    for (i, (&(x, y), &(u, v))) in src.iter().zip(&dst).enumerate() {
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    // Gauss-Jordan with partial pivoting on the augmented 8×9 system
    for col in 0..8 {
        let piv = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut h = [0.0; 9];
    for i in 0..8 {
        h[i] = a[i][8] / a[i][i];
    }
    h[8] = 1.0;
    Some(h)
}

fn perspective(img: &Image, strength: f64, rng: &mut impl Rng) -> Image {
    let (w, h) = (img.width as f64 - 1.0, img.height as f64 - 1.0);
    let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let mut jitter = |(x, y): (f64, f64)| {
        let dx = rng.random_range(-strength..=strength) * (w + 1.0);
        let dy = rng.random_range(-strength..=strength) * (h + 1.0);
        (x + dx, y + dy)
    };
    let moved = corners.map(&mut jitter);
    // inverse map: output corner positions -> source corners
    let Some(m) = homography(corners, moved) else {
        return img.clone();
    };
    let mut out = Image::zeros(img.channels, img.height, img.width);
    for y in 0..img.height {
        for x in 0..img.width {
            let (xf, yf) = (x as f64, y as f64);
            let z = m[6] * xf + m[7] * yf + m[8];
            if z.abs() < 1e-12 {
                continue;
            }
            let sx = (m[0] * xf + m[1] * yf + m[2]) / z;
            let sy = (m[3] * xf + m[4] * yf + m[5]) / z;
            for c in 0..img.channels {
                if let Some(v) = img.sample_bilinear(c, sy, sx) {
                    *out.at_mut(c, y, x) = v;
                }
            }
        }
    }
    out
}

fn color_jitter(img: &mut Image, brightness: f32, contrast: f32, saturation: f32) {
    if brightness != 1.0 {
        for v in &mut img.data {
            *v *= brightness;
        }
    }
    if contrast != 1.0 {
        let mean = img.data.iter().sum::<f32>() / img.data.len().max(1) as f32;
        for v in &mut img.data {
            *v = mean + (*v - mean) * contrast;
        }
    }
    if saturation != 1.0 && img.channels == 3 {
        let n = img.height * img.width;
        for i in 0..n {
            let (r, g, b) = (img.data[i], img.data[n + i], img.data[2 * n + i]);
            let gray = 0.299 * r + 0.587 * g + 0.114 * b;
            for c in 0..3 {
                let v = &mut img.data[c * n + i];
                *v = gray + (*v - gray) * saturation;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(c: usize, h: usize, w: usize) -> Image {
        Image::new(c, h, w, (0..c * h * w).map(|i| ((i * 37) % 101) as f32 / 100.0).collect())
    }

    #[test]
    fn identity_config_is_noop() {
        let img = noisy(3, 12, 9);
        for s in 0..20 {
            assert_eq!(augment(&img, &AugmentConfig::identity(), s), img);
        }
    }

    #[test]
    fn zero_strength_jitter_is_noop() {
        let img = noisy(3, 8, 8);
        let cfg = AugmentConfig {
            jitter_prob: 1.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            ..AugmentConfig::identity()
        };
        assert_eq!(augment(&img, &cfg, 4), img);
    }

    #[test]
    fn crop_of_constant_is_constant() {
        let img = Image::new(3, 16, 16, vec![0.42; 3 * 256]);
        let cfg = AugmentConfig {
            crop_prob: 1.0,
            crop_min_scale: 0.2,
            ..AugmentConfig::identity()
        };
        for s in 0..10 {
            let out = augment(&img, &cfg, s);
            assert!(out.data.iter().all(|&v| v == 0.42));
        }
    }

    #[test]
    fn full_augmentation_keeps_shape_and_range() {
        let img = noisy(3, 20, 14);
        let cfg = AugmentConfig {
            crop_prob: 1.0,
            perspective_prob: 1.0,
            jitter_prob: 1.0,
            brightness: 0.9,
            ..AugmentConfig::default()
        };
        for s in 0..10 {
            let out = augment(&img, &cfg, s);
            assert_eq!((out.channels, out.height, out.width), (3, 20, 14));
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn homography_identity() {
        let pts = [(0.0, 0.0), (5.0, 0.0), (5.0, 3.0), (0.0, 3.0)];
        let h = homography(pts, pts).unwrap();
        let want = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in h.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
