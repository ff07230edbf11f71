//! Selective-scan kernels for the per-head recurrence
//! `h_t = a_t * h_{t-1} + dt_t * x_t ⊗ B_t`, `y_t = h_t · C_t`.
//!
//! Layouts: `decay`, `dt` are `[T, H]`; `x`, `y` are `[T, H*P]`; `b`, `c` are
//! `[T, N]` (shared across heads); per-head state is `[P, N]` row-major, so the
//! full state is `[H, P, N]`.

use rayon::prelude::*;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanShape {
    pub steps: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub d_state: usize,
}

impl ScanShape {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn head_state(&self) -> usize {
        self.head_dim * self.d_state
    }

    pub fn state_len(&self) -> usize {
        self.heads * self.head_state()
    }

    fn check<F>(&self, decay: &[F], dt: &[F], x: &[F], b: &[F], c: &[F]) {
        let t = self.steps;
        assert_eq!(decay.len(), t * self.heads, "scan: decay shape");
        assert_eq!(dt.len(), t * self.heads, "scan: dt shape");
        assert_eq!(x.len(), t * self.width(), "scan: x shape");
        assert_eq!(b.len(), t * self.d_state, "scan: B shape");
        assert_eq!(c.len(), t * self.d_state, "scan: C shape");
    }
}

/// Borrowed kernel inputs.
#[derive(Clone, Copy)]
pub struct ScanInputs<'a, F> {
    pub decay: &'a [F],
    pub dt: &'a [F],
    pub x: &'a [F],
    pub b: &'a [F],
    pub c: &'a [F],
}

/// One recurrence step for a single head; `h` is `[P, N]`, writes `y` (`[P]`).
#[inline]
fn head_step<F: Scalar>(h: &mut [F], a: F, dt: F, x: &[F], b: &[F], c: &[F], y: &mut [F]) {
    let n = b.len();
    for ((hrow, &xv), yv) in h.chunks_exact_mut(n).zip(x).zip(y.iter_mut()) {
        let u = dt * xv;
        let mut acc = F::zero();
        for ((hv, &bv), &cv) in hrow.iter_mut().zip(b).zip(c) {
            *hv = a * *hv + u * bv;
            acc += *hv * cv;
        }
        *yv = acc;
    }
}

/// Single time step over all heads (recurrent mode). `state` is `[H, P, N]`.
pub fn scan_step<F: Scalar>(
    shape: &ScanShape,
    state: &mut [F],
    decay: &[F],
    dt: &[F],
    x: &[F],
    b: &[F],
    c: &[F],
    y: &mut [F],
) {
    let (p, hs) = (shape.head_dim, shape.head_state());
    for hh in 0..shape.heads {
        head_step(
            &mut state[hh * hs..(hh + 1) * hs],
            decay[hh],
            dt[hh],
            &x[hh * p..(hh + 1) * p],
            b,
            c,
            &mut y[hh * p..(hh + 1) * p],
        );
    }
}

/// Plain left-to-right loop. Returns `(y, final state)`.
pub fn scan_sequential<F: Scalar>(shape: &ScanShape, inp: ScanInputs<'_, F>, init: Option<&[F]>) -> (Vec<F>, Vec<F>) {
    shape.check(inp.decay, inp.dt, inp.x, inp.b, inp.c);
    let (h, w, n) = (shape.heads, shape.width(), shape.d_state);
    let mut state = init.map_or_else(|| vec![F::zero(); shape.state_len()], <[F]>::to_vec);
    let mut y = vec![F::zero(); shape.steps * w];
    for t in 0..shape.steps {
        scan_step(
            shape,
            &mut state,
            &inp.decay[t * h..(t + 1) * h],
            &inp.dt[t * h..(t + 1) * h],
            &inp.x[t * w..(t + 1) * w],
            &inp.b[t * n..(t + 1) * n],
            &inp.c[t * n..(t + 1) * n],
            &mut y[t * w..(t + 1) * w],
        );
    }
    (y, state)
}

/// Result of the chunked scan, with the per-chunk entry states kept for backward.
pub struct ChunkedScan<F> {
    pub y: Vec<F>,
    /// State entering each chunk, `[H, P, N]` each.
    pub entry_states: Vec<Vec<F>>,
    pub final_state: Vec<F>,
}

/// Local pass over `[t0, t1)` for one head starting from zero state.
/// Writes local outputs into `y_local` (`[len, P]`) and returns the local end
/// state and the cumulative decay products (`[len]`).
fn head_chunk_local<F: Scalar>(
    shape: &ScanShape,
    inp: &ScanInputs<'_, F>,
    head: usize,
    t0: usize,
    t1: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (hn, w, n, p) = (shape.heads, shape.width(), shape.d_state, shape.head_dim);
    let len = t1 - t0;
    let mut h = vec![F::zero(); shape.head_state()];
    let mut y = vec![F::zero(); len * p];
    let mut cum = Vec::with_capacity(len);
    let mut prod = F::one();
    for (i, t) in (t0..t1).enumerate() {
        let a = inp.decay[t * hn + head];
        prod *= a;
        cum.push(prod);
        head_step(
            &mut h,
            a,
            inp.dt[t * hn + head],
            &inp.x[t * w + head * p..t * w + (head + 1) * p],
            &inp.b[t * n..(t + 1) * n],
            &inp.c[t * n..(t + 1) * n],
            &mut y[i * p..(i + 1) * p],
        );
    }
    (y, h, cum)
}

/// Chunked scan: independent zero-state passes per `(chunk, head)` in parallel,
/// then a sequential carry of chunk-entry states and a parallel correction
/// `y_t += prod(a_{t0..=t}) * (h_entry · C_t)`.
pub fn scan_chunked<F: Scalar>(shape: &ScanShape, inp: ScanInputs<'_, F>, chunk: usize) -> ChunkedScan<F> {
    shape.check(inp.decay, inp.dt, inp.x, inp.b, inp.c);
    assert!(chunk > 0, "chunk length must be positive");
    let (t_len, hn, w, n, p, hs) = (
        shape.steps,
        shape.heads,
        shape.width(),
        shape.d_state,
        shape.head_dim,
        shape.head_state(),
    );
    let n_chunks = t_len.div_ceil(chunk);
    let jobs: Vec<(usize, usize)> = (0..n_chunks).flat_map(|ci| (0..hn).map(move |hh| (ci, hh))).collect();
    let locals: Vec<(Vec<F>, Vec<F>, Vec<F>)> = jobs
        .par_iter()
        .map(|&(ci, hh)| head_chunk_local(shape, &inp, hh, ci * chunk, ((ci + 1) * chunk).min(t_len)))
        .collect();

    // carry entry states across chunks
    let mut entry_states = Vec::with_capacity(n_chunks);
    let mut carry = vec![F::zero(); shape.state_len()];
    for ci in 0..n_chunks {
        entry_states.push(carry.clone());
        for hh in 0..hn {
            let (_, h_local, cum) = &locals[ci * hn + hh];
            let total = *cum.last().expect("nonempty chunk");
            for (cv, &lv) in carry[hh * hs..(hh + 1) * hs].iter_mut().zip(h_local) {
                *cv = total * *cv + lv;
            }
        }
    }

    let corrected: Vec<Vec<F>> = jobs
        .par_iter()
        .map(|&(ci, hh)| {
            let (y_local, _, cum) = &locals[ci * hn + hh];
            let entry = &entry_states[ci][hh * hs..(hh + 1) * hs];
            let t0 = ci * chunk;
            let mut y = y_local.clone();
            for (i, &g) in cum.iter().enumerate() {
                let cvec = &inp.c[(t0 + i) * n..(t0 + i + 1) * n];
                for (yv, erow) in y[i * p..(i + 1) * p].iter_mut().zip(entry.chunks_exact(n)) {
                    let dot: F = erow.iter().zip(cvec).map(|(&e, &cv)| e * cv).sum();
                    *yv += g * dot;
                }
            }
            y
        })
        .collect();

    let mut y = vec![F::zero(); t_len * w];
    for (&(ci, hh), yc) in jobs.iter().zip(&corrected) {
        let t0 = ci * chunk;
        for (i, row) in yc.chunks_exact(p).enumerate() {
            let t = t0 + i;
            y[t * w + hh * p..t * w + (hh + 1) * p].copy_from_slice(row);
        }
    }
    ChunkedScan {
        y,
        entry_states,
        final_state: carry,
    }
}

/// Gradients of the scan w.r.t. its inputs.
pub struct ScanGrads<F> {
    pub decay: Vec<F>,
    pub dt: Vec<F>,
    pub x: Vec<F>,
    pub b: Vec<F>,
    pub c: Vec<F>,
}

/// Reverse sweep given `dy` (`[T, H*P]`) and the chunk entry states from
/// [`scan_chunked`]. States inside a chunk are recomputed from its entry state.
pub fn scan_backward<F: Scalar>(
    shape: &ScanShape,
    inp: ScanInputs<'_, F>,
    entry_states: &[Vec<F>],
    chunk: usize,
    dy: &[F],
) -> ScanGrads<F> {
    shape.check(inp.decay, inp.dt, inp.x, inp.b, inp.c);
    let (t_len, hn, w, n, p, hs) = (
        shape.steps,
        shape.heads,
        shape.width(),
        shape.d_state,
        shape.head_dim,
        shape.head_state(),
    );
    assert_eq!(dy.len(), t_len * w);
    assert_eq!(entry_states.len(), t_len.div_ceil(chunk));

    struct HeadGrads<F> {
        decay: Vec<F>,
        dt: Vec<F>,
        x: Vec<F>,
        b: Vec<F>,
        c: Vec<F>,
    }

    let per_head: Vec<HeadGrads<F>> = (0..hn)
        .into_par_iter()
        .map(|hh| {
            let mut out = HeadGrads {
                decay: vec![F::zero(); t_len],
                dt: vec![F::zero(); t_len],
                x: vec![F::zero(); t_len * p],
                b: vec![F::zero(); t_len * n],
                c: vec![F::zero(); t_len * n],
            };
            let mut g = vec![F::zero(); hs];
            let mut states = vec![F::zero(); (chunk + 1) * hs];
            let mut scratch = vec![F::zero(); p];
            for ci in (0..entry_states.len()).rev() {
                let t0 = ci * chunk;
                let t1 = ((ci + 1) * chunk).min(t_len);
                // states[i] = h_{t0 + i - 1}; states[0] = entry
                states[..hs].copy_from_slice(&entry_states[ci][hh * hs..(hh + 1) * hs]);
                for (i, t) in (t0..t1).enumerate() {
                    let (prev, next) = states.split_at_mut((i + 1) * hs);
                    let cur = &mut next[..hs];
                    cur.copy_from_slice(&prev[i * hs..]);
                    head_step(
                        cur,
                        inp.decay[t * hn + hh],
                        inp.dt[t * hn + hh],
                        &inp.x[t * w + hh * p..t * w + (hh + 1) * p],
                        &inp.b[t * n..(t + 1) * n],
                        &inp.c[t * n..(t + 1) * n],
                        &mut scratch,
                    );
                }
                for (i, t) in (t0..t1).enumerate().rev() {
                    let h_prev = &states[i * hs..(i + 1) * hs];
                    let h_cur = &states[(i + 1) * hs..(i + 2) * hs];
                    let a = inp.decay[t * hn + hh];
                    let dtv = inp.dt[t * hn + hh];
                    let xs = &inp.x[t * w + hh * p..t * w + (hh + 1) * p];
                    let bs = &inp.b[t * n..(t + 1) * n];
                    let cs = &inp.c[t * n..(t + 1) * n];
                    let dys = &dy[t * w + hh * p..t * w + (hh + 1) * p];
                    let dc = &mut out.c[t * n..(t + 1) * n];
                    let db = &mut out.b[t * n..(t + 1) * n];
                    let dx = &mut out.x[t * p..(t + 1) * p];
                    let mut d_decay = F::zero();
                    let mut d_dt = F::zero();
                    for pi in 0..p {
                        let grow = &mut g[pi * n..(pi + 1) * n];
                        let hrow = &h_cur[pi * n..(pi + 1) * n];
                        let hprow = &h_prev[pi * n..(pi + 1) * n];
                        let dyv = dys[pi];
                        let xv = xs[pi];
                        let mut gb = F::zero();
                        for j in 0..n {
                            dc[j] += dyv * hrow[j];
                            grow[j] += dyv * cs[j];
                            let gv = grow[j];
                            d_decay += gv * hprow[j];
                            gb += gv * bs[j];
                            db[j] += dtv * xv * gv;
                        }
                        dx[pi] = dtv * gb;
                        d_dt += xv * gb;
                        for gv in grow.iter_mut() {
                            *gv *= a;
                        }
                    }
                    out.decay[t] = d_decay;
                    out.dt[t] = d_dt;
                }
            }
            out
        })
        .collect();

    let mut grads = ScanGrads {
        decay: vec![F::zero(); t_len * hn],
        dt: vec![F::zero(); t_len * hn],
        x: vec![F::zero(); t_len * w],
        b: vec![F::zero(); t_len * n],
        c: vec![F::zero(); t_len * n],
    };
    // fixed head order keeps the reduction deterministic
    for (hh, hg) in per_head.iter().enumerate() {
        for t in 0..t_len {
            grads.decay[t * hn + hh] = hg.decay[t];
            grads.dt[t * hn + hh] = hg.dt[t];
            grads.x[t * w + hh * p..t * w + (hh + 1) * p].copy_from_slice(&hg.x[t * p..(t + 1) * p]);
        }
        for (d, &s) in grads.b.iter_mut().zip(&hg.b) {
            *d += s;
        }
        for (d, &s) in grads.c.iter_mut().zip(&hg.c) {
            *d += s;
        }
    }
    grads
}

/// Multiply-add count of one scan step over all heads.
pub fn step_flops(shape: &ScanShape) -> u64 {
    // state update (2 mul + 1 add) and readout (mul + add) per state element, plus u = dt*x
    (5 * shape.state_len() + shape.width()) as u64
}
