use super::Rect;

/// Exact per-pixel record of which image pixels some patch has covered.
#[derive(Clone, Debug)]
pub struct CoverageMap {
    region: Rect,
    words_per_row: usize,
    bits: Vec<u64>,
    covered: usize,
}

impl CoverageMap {
    pub fn new(region: Rect) -> Self {
        let words_per_row = region.w.div_ceil(64);
        Self {
            region,
            words_per_row,
            bits: vec![0; words_per_row * region.h],
            covered: 0,
        }
    }

    pub fn region(&self) -> Rect {
        self.region
    }

    pub fn covered_count(&self) -> usize {
        self.covered
    }

    /// Fraction of the image area covered so far.
    pub fn ratio(&self) -> f64 {
        if self.region.area() == 0 {
            return 0.0;
        }
        self.covered as f64 / self.region.area() as f64
    }

    pub fn is_covered(&self, x: usize, y: usize) -> bool {
        if !self.region.contains(&Rect::new(x, y, 1, 1)) {
            return false;
        }
        let (lx, ly) = (x - self.region.x0, y - self.region.y0);
        self.bits[ly * self.words_per_row + lx / 64] >> (lx % 64) & 1 == 1
    }

    /// ORs in the part of `patch` that overlaps the image and returns the new ratio.
    pub fn update(&mut self, patch: Rect) -> f64 {
        if let Some(hit) = patch.intersect(&self.region) {
            let lx0 = hit.x0 - self.region.x0;
            let lx1 = lx0 + hit.w;
            for ly in (hit.y0 - self.region.y0)..(hit.y1() - self.region.y0) {
                let row = &mut self.bits[ly * self.words_per_row..(ly + 1) * self.words_per_row];
                let mut x = lx0;
                while x < lx1 {
                    let word = x / 64;
                    let lo = x % 64;
                    let hi = (lx1 - word * 64).min(64);
                    let mask = if hi - lo == 64 {
                        u64::MAX
                    } else {
                        ((1u64 << (hi - lo)) - 1) << lo
                    };
                    self.covered += (mask & !row[word]).count_ones() as usize;
                    row[word] |= mask;
                    x = word * 64 + hi;
                }
            }
        }
        self.ratio()
    }
}
