/// Channel-major `C×H×W` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "image buffer size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Bilinear sample at continuous pixel-centre coordinates; `None` outside.
    pub fn sample_bilinear(&self, c: usize, y: f64, x: f64) -> Option<f32> {
        if !(y > -0.5 && x > -0.5 && y < self.height as f64 - 0.5 && x < self.width as f64 - 0.5) {
            return None;
        }
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (ty, tx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
        // a + (b - a) * t keeps constant regions exactly constant
        let top = lerp(self.at(c, y0, x0), self.at(c, y0, x1), tx);
        let bottom = lerp(self.at(c, y1, x0), self.at(c, y1, x1), tx);
        Some(lerp(top, bottom, ty))
    }

    /// Bilinear resize (pixel-centre aligned).
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = Image::zeros(self.channels, height, width);
        for c in 0..self.channels {
            for y in 0..height {
                let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
                for x in 0..width {
                    let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                    *out.at_mut(c, y, x) = self.sample_bilinear(c, fy, fx).unwrap_or(0.0);
                }
            }
        }
        out
    }

    /// Sub-image copy; the rectangle must lie inside the image.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Image {
        assert!(y0 + height <= self.height && x0 + width <= self.width, "crop outside image");
        let mut out = Image::zeros(self.channels, height, width);
        for c in 0..self.channels {
            for y in 0..height {
                for x in 0..width {
                    *out.at_mut(c, y, x) = self.at(c, y0 + y, x0 + x);
                }
            }
        }
        out
    }
}

#[inline]
pub(crate) fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}
