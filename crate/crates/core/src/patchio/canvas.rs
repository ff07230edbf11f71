use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Image, PatchIoError};
use crate::seed;

/// Axis-aligned rectangle in canvas pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn x1(&self) -> usize {
        self.x0 + self.w
    }

    pub fn y1(&self) -> usize {
        self.y0 + self.h
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        (x0 < x1 && y0 < y1).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1() <= self.x1() && other.y1() <= self.y1()
    }
}

/// Zero-padded frame holding one (possibly resized) image.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub pixels: Image,
    /// Where the image was pasted.
    pub region: Rect,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CanvasMode {
    /// Square side drawn uniformly from `[min_side, max_side]`; image pasted unresized.
    Train { min_side: usize, max_side: usize, seed: u64 },
    /// Long side resized to `target_side`, pasted on a `target_side²` canvas.
    Eval { target_side: usize },
}

impl Canvas {
    pub fn width(&self) -> usize {
        self.pixels.width
    }

    pub fn height(&self) -> usize {
        self.pixels.height
    }

    pub fn channels(&self) -> usize {
        self.pixels.channels
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width(), self.height())
    }

    /// Copies the `P×P` patch at `(x, y)` into `out` in `C, y, x` order.
    pub fn extract_patch(&self, x: usize, y: usize, p: usize, out: &mut [f32]) {
        assert!(x + p <= self.width() && y + p <= self.height(), "patch outside canvas");
        assert_eq!(out.len(), self.channels() * p * p);
        let img = &self.pixels;
        for c in 0..img.channels {
            for dy in 0..p {
                let src = (c * img.height + y + dy) * img.width + x;
                let dst = (c * p + dy) * p;
                out[dst..dst + p].copy_from_slice(&img.data[src..src + p]);
            }
        }
    }

    /// Pastes `image` centred on a zero canvas of `height × width`.
    pub fn paste_centered(image: &Image, height: usize, width: usize) -> Canvas {
        assert!(image.height <= height && image.width <= width);
        let y0 = (height - image.height) / 2;
        let x0 = (width - image.width) / 2;
        let mut pixels = Image::zeros(image.channels, height, width);
        for c in 0..image.channels {
            for y in 0..image.height {
                let src = (c * image.height + y) * image.width;
                let dst = (c * height + y0 + y) * width + x0;
                pixels.data[dst..dst + image.width].copy_from_slice(&image.data[src..src + image.width]);
            }
        }
        Canvas {
            pixels,
            region: Rect::new(x0, y0, image.width, image.height),
        }
    }
}

pub fn make_canvas(image: &Image, mode: CanvasMode) -> Result<Canvas, PatchIoError> {
    match mode {
        CanvasMode::Train {
            min_side,
            max_side,
            seed: s,
        } => {
            if min_side > max_side || min_side == 0 {
                return Err(PatchIoError::InvalidConfig(format!(
                    "train canvas sides must satisfy 0 < min ({min_side}) <= max ({max_side})"
                )));
            }
            let mut rng = seed::rng(s, &[seed::stream::CANVAS]);
            let side = rng.random_range(min_side..=max_side);
            // images larger than the draw enlarge the canvas instead of being cropped
            let side = side.max(image.height).max(image.width);
            Ok(Canvas::paste_centered(image, side, side))
        }
        CanvasMode::Eval { target_side } => {
            if target_side == 0 {
                return Err(PatchIoError::InvalidConfig("eval target side must be positive".into()));
            }
            let (h, w) = (image.height, image.width);
            let long = h.max(w);
            let scale = |s: usize| (((s * target_side) as f64 / long as f64).round() as usize).clamp(1, target_side);
            let (nh, nw) = if h >= w {
                (target_side, scale(w))
            } else {
                (scale(h), target_side)
            };
            let resized = image.resize(nh, nw);
            Ok(Canvas::paste_centered(&resized, target_side, target_side))
        }
    }
}
