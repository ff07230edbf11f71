use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Canvas, CoverageMap, PatchIoError, Rect};
use crate::movemb::Move;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Uniform positions with the patch fully inside the image region.
    RandomImage,
    /// Per trajectory, a fair coin picks image-only or whole-canvas sampling.
    RandomMixed,
    RasterHorizontal,
    ZigzagHorizontal,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::RandomImage,
        PolicyKind::RandomMixed,
        PolicyKind::RasterHorizontal,
        PolicyKind::ZigzagHorizontal,
    ];

    pub fn is_deterministic(self) -> bool {
        matches!(self, PolicyKind::RasterHorizontal | PolicyKind::ZigzagHorizontal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::RandomImage => "random-image",
            PolicyKind::RandomMixed => "random-mixed",
            PolicyKind::RasterHorizontal => "raster-horizontal",
            PolicyKind::ZigzagHorizontal => "zigzag-horizontal",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = PatchIoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random-image" | "random" => Ok(PolicyKind::RandomImage),
            "random-mixed" => Ok(PolicyKind::RandomMixed),
            "raster-horizontal" | "raster" => Ok(PolicyKind::RasterHorizontal),
            "zigzag-horizontal" | "zigzag" => Ok(PolicyKind::ZigzagHorizontal),
            other => Err(PatchIoError::InvalidConfig(format!("unknown scan policy `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanPolicy {
    pub kind: PolicyKind,
    pub seed: u64,
}

impl ScanPolicy {
    pub fn new(kind: PolicyKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

/// One element of the input sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GlimpseStep {
    /// Flattened `C×P×P` patch.
    pub patch: Vec<f32>,
    pub movement: Move,
    /// Cumulative information ratio after absorbing this patch.
    pub ratio: f64,
    /// Absolute top-left `(x, y)` in canvas pixels (diagnostics only).
    pub coord: (usize, usize),
}

/// Grid cell order for the deterministic sweeps, in `(col, row)` coordinates.
pub fn grid_order(kind: PolicyKind, cols: usize, rows: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        let reverse = kind == PolicyKind::ZigzagHorizontal && r % 2 == 1;
        for i in 0..cols {
            let c = if reverse { cols - 1 - i } else { i };
            out.push((c, r));
        }
    }
    out
}

enum Sampler {
    Uniform {
        x: (usize, usize),
        y: (usize, usize),
        rng: ChaCha8Rng,
    },
    Grid {
        origin: (usize, usize),
        order: Vec<(usize, usize)>,
    },
}

/// Lazy glimpse generator; memory does not grow with the number of steps.
pub struct Trajectory<'a> {
    canvas: &'a Canvas,
    patch: usize,
    remaining: usize,
    step: usize,
    prev: Option<(usize, usize)>,
    coverage: CoverageMap,
    sampler: Sampler,
}

/// Inclusive range of top-left offsets along one axis such that a `p`-wide patch
/// stays inside `[lo, lo + len)` when possible, otherwise contains it.
fn inside_range(lo: usize, len: usize, p: usize, canvas_len: usize) -> (usize, usize) {
    if len >= p {
        (lo, lo + len - p)
    } else {
        let a = (lo + len).saturating_sub(p);
        let b = lo.min(canvas_len - p);
        (a.min(b), b)
    }
}

impl<'a> Trajectory<'a> {
    pub fn new(canvas: &'a Canvas, policy: ScanPolicy, steps: usize, patch: usize) -> Result<Self, PatchIoError> {
        if patch == 0 || patch > canvas.width().min(canvas.height()) {
            return Err(PatchIoError::InvalidConfig(format!(
                "patch size {patch} does not fit a {}x{} canvas",
                canvas.height(),
                canvas.width()
            )));
        }
        if steps == 0 {
            return Err(PatchIoError::InvalidConfig("trajectory needs at least one step".into()));
        }
        let region = canvas.region;
        let sampler = match policy.kind {
            PolicyKind::RandomImage | PolicyKind::RandomMixed => {
                let mut rng = seed::rng(policy.seed, &[seed::stream::TRAJECTORY]);
                let whole_canvas = policy.kind == PolicyKind::RandomMixed && rng.random_bool(0.5);
                let (x, y) = if whole_canvas {
                    ((0, canvas.width() - patch), (0, canvas.height() - patch))
                } else {
                    (
                        inside_range(region.x0, region.w, patch, canvas.width()),
                        inside_range(region.y0, region.h, patch, canvas.height()),
                    )
                };
                Sampler::Uniform { x, y, rng }
            }
            kind => {
                let (cols, rows) = (region.w / patch, region.h / patch);
                if cols == 0 || rows == 0 {
                    return Err(PatchIoError::RegionTooSmall {
                        region,
                        patch,
                    });
                }
                Sampler::Grid {
                    origin: (region.x0, region.y0),
                    order: grid_order(kind, cols, rows),
                }
            }
        };
        Ok(Self {
            canvas,
            patch,
            remaining: steps,
            step: 0,
            prev: None,
            coverage: CoverageMap::new(region),
            sampler,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn coverage(&self) -> &CoverageMap {
        &self.coverage
    }

    fn next_coord(&mut self) -> (usize, usize) {
        let step = self.step;
        match &mut self.sampler {
            Sampler::Uniform { x, y, rng } => (rng.random_range(x.0..=x.1), rng.random_range(y.0..=y.1)),
            Sampler::Grid { origin, order } => {
                // sweeps repeat from the start once the grid is exhausted
                let (c, r) = order[step % order.len()];
                (origin.0 + c * self.patch, origin.1 + r * self.patch)
            }
        }
    }

    /// Like [`Iterator::next`] but writes the patch into a caller buffer.
    pub fn next_into(&mut self, patch_buf: &mut [f32]) -> Option<(Move, f64, (usize, usize))> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let (x, y) = self.next_coord();
        self.step += 1;
        self.canvas.extract_patch(x, y, self.patch, patch_buf);
        let ratio = self.coverage.update(Rect::new(x, y, self.patch, self.patch));
        let movement = match self.prev {
            None => Move::Initial,
            Some((px, py)) => Move::Delta {
                dx: x as i64 - px as i64,
                dy: y as i64 - py as i64,
            },
        };
        self.prev = Some((x, y));
        Some((movement, ratio, (x, y)))
    }
}

impl Iterator for Trajectory<'_> {
    type Item = GlimpseStep;

    fn next(&mut self) -> Option<GlimpseStep> {
        let mut patch = vec![0.0; self.canvas.channels() * self.patch * self.patch];
        let (movement, ratio, coord) = self.next_into(&mut patch)?;
        Some(GlimpseStep {
            patch,
            movement,
            ratio,
            coord,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

pub fn generate_trajectory(
    canvas: &Canvas,
    policy: ScanPolicy,
    steps: usize,
    patch: usize,
) -> Result<Vec<GlimpseStep>, PatchIoError> {
    Ok(Trajectory::new(canvas, policy, steps, patch)?.collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchio::Image;

    fn canvas(side: usize, img: usize) -> Canvas {
        let image = Image::new(1, img, img, (0..img * img).map(|i| (i % 13) as f32 / 13.0).collect());
        Canvas::paste_centered(&image, side, side)
    }

    fn grid_coords(steps: &[GlimpseStep], cv: &Canvas, p: usize) -> Vec<(usize, usize)> {
        steps
            .iter()
            .map(|s| ((s.coord.0 - cv.region.x0) / p, (s.coord.1 - cv.region.y0) / p))
            .collect()
    }

    #[test]
    fn raster_repeats_from_start() {
        let cv = canvas(48, 32);
        let steps = generate_trajectory(&cv, ScanPolicy::new(PolicyKind::RasterHorizontal, 0), 6, 16).unwrap();
        assert_eq!(
            grid_coords(&steps, &cv, 16),
            vec![(0, 0), (1, 0), (0, 1), (1, 1), (0, 0), (1, 0)]
        );
        assert_eq!(steps[3].ratio, 1.0);
        assert_eq!(steps[5].ratio, 1.0);
    }

    #[test]
    fn zigzag_reverses_odd_rows() {
        let cv = canvas(32, 32);
        let steps = generate_trajectory(&cv, ScanPolicy::new(PolicyKind::ZigzagHorizontal, 0), 4, 16).unwrap();
        assert_eq!(grid_coords(&steps, &cv, 16), vec![(0, 0), (1, 0), (1, 1), (0, 1)]);
    }

    #[test]
    fn deterministic_scans_truncate() {
        let cv = canvas(64, 64);
        let steps = generate_trajectory(&cv, ScanPolicy::new(PolicyKind::RasterHorizontal, 0), 3, 8).unwrap();
        assert_eq!(steps.len(), 3);
        assert_eq!(steps[2].coord, (16, 0));
    }

    #[test]
    fn row_transition_deltas() {
        let cv = canvas(40, 32);
        let p = 8;
        let raster = generate_trajectory(&cv, ScanPolicy::new(PolicyKind::RasterHorizontal, 0), 5, p).unwrap();
        assert_eq!(raster[4].movement, Move::Delta { dx: -(3 * 8), dy: 8 });
        let zig = generate_trajectory(&cv, ScanPolicy::new(PolicyKind::ZigzagHorizontal, 0), 5, p).unwrap();
        assert_eq!(zig[4].movement, Move::Delta { dx: 0, dy: 8 });
        assert_eq!(zig[0].movement, Move::Initial);
    }

    #[test]
    fn first_random_patch_ratio() {
        let cv = canvas(32, 32);
        let steps = generate_trajectory(&cv, ScanPolicy::new(PolicyKind::RandomImage, 9), 1, 16).unwrap();
        assert_eq!(steps[0].ratio, 0.25);
    }

    #[test]
    fn deterministic_policy_rejects_tiny_region() {
        let cv = canvas(32, 6);
        let err = generate_trajectory(&cv, ScanPolicy::new(PolicyKind::ZigzagHorizontal, 0), 4, 8).unwrap_err();
        assert!(matches!(err, PatchIoError::RegionTooSmall { .. }));
        // random sampling still works and covers the whole small image
        let steps = generate_trajectory(&cv, ScanPolicy::new(PolicyKind::RandomImage, 0), 4, 8).unwrap();
        assert_eq!(steps[0].ratio, 1.0);
    }

    #[test]
    fn same_seed_is_bit_reproducible() {
        let cv = canvas(48, 32);
        for kind in PolicyKind::ALL {
            let a = generate_trajectory(&cv, ScanPolicy::new(kind, 77), 50, 8).unwrap();
            let b = generate_trajectory(&cv, ScanPolicy::new(kind, 77), 50, 8).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.as_str().parse::<PolicyKind>().unwrap(), kind);
        }
        assert!("spiral".parse::<PolicyKind>().is_err());
    }
}
