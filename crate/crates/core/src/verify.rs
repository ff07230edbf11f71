//! Slow reference implementations used as independent oracles by tests and
//! by the `selfcheck` command.

use crate::patchio::Rect;
use crate::scalar::Scalar;
use crate::ssm::scan::{ScanInputs, ScanShape};

/// `y_t = C_t · sum_{s<=t} (prod_{u=s+1..t} a_u) dt_s x_s B_s`, evaluated
/// term by term in O(T²) without any running state.
pub fn brute_force_scan<F: Scalar>(shape: &ScanShape, inp: ScanInputs<'_, F>) -> Vec<F> {
    let (t_len, hn, w, n, p) = (shape.steps, shape.heads, shape.width(), shape.d_state, shape.head_dim);
    let mut y = vec![F::zero(); t_len * w];
    for t in 0..t_len {
        for hh in 0..hn {
            for pi in 0..p {
                let mut acc = F::zero();
                for s in 0..=t {
                    let mut prod = F::one();
                    for u in s + 1..=t {
                        prod *= inp.decay[u * hn + hh];
                    }
                    let u_s = inp.dt[s * hn + hh] * inp.x[s * w + hh * p + pi];
                    let bc: F = (0..n).map(|j| inp.b[s * n + j] * inp.c[t * n + j]).sum();
                    acc += prod * u_s * bc;
                }
                y[t * w + hh * p + pi] = acc;
            }
        }
    }
    y
}

/// Fraction of the pixels of `region` inside the union of `patches`, by
/// testing every pixel against every rectangle.
pub fn brute_force_coverage(region: Rect, patches: &[Rect]) -> f64 {
    if region.area() == 0 {
        return 0.0;
    }
    let mut hit = 0usize;
    for y in region.y0..region.y1() {
        for x in region.x0..region.x1() {
            if patches.iter().any(|p| p.contains(&Rect::new(x, y, 1, 1))) {
                hit += 1;
            }
        }
    }
    hit as f64 / region.area() as f64
}

/// Sample autocorrelation of `xs` at lag `k` (mean removed, biased estimator).
pub fn autocorrelation(xs: &[f64], k: usize) -> f64 {
    let n = xs.len();
    if k >= n {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|v| (v - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - k).map(|i| (xs[i] - mean) * (xs[i + k] - mean)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchio::CoverageMap;
    use crate::ssm::scan::{scan_chunked, scan_sequential};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scan_kernels_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(steps, heads, head_dim, d_state) in &[(1, 1, 1, 1), (37, 2, 3, 4), (128, 3, 2, 5)] {
            let shape = ScanShape {
                steps,
                heads,
                head_dim,
                d_state,
            };
            let mut draw = |len: usize, lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.random_range(lo..hi)).collect() };
            let decay = draw(steps * heads, 0.0, 1.0);
            let dt = draw(steps * heads, 0.0, 1.0);
            let x = draw(steps * shape.width(), -1.0, 1.0);
            let b = draw(steps * d_state, -1.0, 1.0);
            let c = draw(steps * d_state, -1.0, 1.0);
            let inp = ScanInputs {
                decay: &decay,
                dt: &dt,
                x: &x,
                b: &b,
                c: &c,
            };
            let want = brute_force_scan(&shape, inp);
            let (seq, _) = scan_sequential(&shape, inp, None);
            let chunked = scan_chunked(&shape, inp, 64).y;
            for got in [&seq, &chunked] {
                let err = want.iter().zip(got.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err <= 1e-10, "T={steps}: {err}");
            }
        }
    }

    #[test]
    fn coverage_map_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let region = Rect {
                x0: rng.random_range(0..10),
                y0: rng.random_range(0..10),
                w: rng.random_range(1..90),
                h: rng.random_range(1..70),
            };
            let mut map = CoverageMap::new(region);
            let mut patches = Vec::new();
            for _ in 0..12 {
                let p = Rect {
                    x0: rng.random_range(0..100),
                    y0: rng.random_range(0..80),
                    w: 8,
                    h: 8,
                };
                patches.push(p);
                let r = map.update(p);
                assert!((r - brute_force_coverage(region, &patches)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn autocorrelation_of_alternating_series() {
        let xs: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((autocorrelation(&xs, 1) + 0.99).abs() < 1e-9);
        assert!((autocorrelation(&xs, 2) - 0.98).abs() < 1e-9);
    }
}
