use std::mem::size_of;

use rand::Rng;

use super::scan::{self, ScanInputs, ScanShape};
use super::{BackboneConfig, SsmError};
use crate::numgrad::{rms_normalize, silu, softplus, CustomBackward, Tape, Tensor, Var};
use crate::params::{trunc_normal, uniform, ParamStore};
use crate::scalar::Scalar;

/// Indices of one block's tensors inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub norm: usize,
    pub in_proj: usize,
    pub conv_w: usize,
    pub conv_b: usize,
    pub dt_bias: usize,
    pub a_log: usize,
    pub d_skip: usize,
    pub inner_norm: usize,
    pub out_proj: usize,
}

/// Adds one block's parameters under `prefix` and returns their indices.
pub fn init_block<F: Scalar>(
    store: &mut ParamStore<F>,
    prefix: &str,
    cfg: &BackboneConfig,
    rng: &mut impl Rng,
) -> BlockLayout {
    let (d, di, h, cd, k) = (cfg.d_model, cfg.d_inner(), cfg.heads(), cfg.conv_dim(), cfg.d_conv);
    let name = |s: &str| format!("{prefix}.{s}");
    let conv_bound = 1.0 / (k as f64).sqrt();
    let dt_bias = Tensor::from_fn(&[h], |_| {
        let dt = rng.random_range(1e-3f64.ln()..1e-1f64.ln()).exp().max(1e-4);
        // inverse of softplus
        F::lit(dt + (-(-dt).exp_m1()).ln())
    });
    let a_log = Tensor::from_fn(&[h], |_| F::lit(rng.random_range(1.0f64..16.0).ln()));
    BlockLayout {
        norm: store.push(name("norm.weight"), Tensor::full(&[d], F::one())),
        in_proj: store.push(name("in_proj.weight"), trunc_normal(&[d, cfg.d_in_proj()], 0.02, rng)),
        conv_w: store.push(name("conv.weight"), uniform(&[k, cd], -conv_bound, conv_bound, rng)),
        conv_b: store.push(name("conv.bias"), uniform(&[cd], -conv_bound, conv_bound, rng)),
        dt_bias: store.push(name("dt_bias"), dt_bias),
        a_log: store.push(name("a_log"), a_log),
        d_skip: store.push(name("d_skip"), Tensor::full(&[h], F::one())),
        inner_norm: store.push(name("inner_norm.weight"), Tensor::full(&[di], F::one())),
        out_proj: store.push(
            name("out_proj.weight"),
            trunc_normal(&[di, d], 0.02 / (cfg.layers as f64).sqrt(), rng),
        ),
    }
}

/// Expected shapes, in [`BlockLayout`] field order.
pub(crate) fn block_shapes(cfg: &BackboneConfig) -> [(&'static str, Vec<usize>); 9] {
    let (d, di, h, cd, k) = (cfg.d_model, cfg.d_inner(), cfg.heads(), cfg.conv_dim(), cfg.d_conv);
    [
        ("norm.weight", vec![d]),
        ("in_proj.weight", vec![d, cfg.d_in_proj()]),
        ("conv.weight", vec![k, cd]),
        ("conv.bias", vec![cd]),
        ("dt_bias", vec![h]),
        ("a_log", vec![h]),
        ("d_skip", vec![h]),
        ("inner_norm.weight", vec![di]),
        ("out_proj.weight", vec![di, d]),
    ]
}

/// Recurrent-mode state of one block: the last `k - 1` pre-convolution
/// rows and the scan state `[H, P, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<F> {
    pub conv_tail: Vec<F>,
    pub h: Vec<F>,
}

impl<F: Scalar> LayerState<F> {
    pub fn zeros(cfg: &BackboneConfig) -> Self {
        Self {
            conv_tail: vec![F::zero(); (cfg.d_conv - 1) * cfg.conv_dim()],
            h: vec![F::zero(); cfg.scan_shape(1).state_len()],
        }
    }

    pub fn byte_size(&self) -> usize {
        (self.conv_tail.len() + self.h.len()) * size_of::<F>()
    }

    fn check(&self, cfg: &BackboneConfig) -> Result<(), SsmError> {
        let want = Self::zeros(cfg);
        if self.conv_tail.len() != want.conv_tail.len() || self.h.len() != want.h.len() {
            return Err(SsmError::StateMismatch {
                expected: format!("conv {} / h {}", want.conv_tail.len(), want.h.len()),
                got: format!("conv {} / h {}", self.conv_tail.len(), self.h.len()),
            });
        }
        Ok(())
    }
}

fn decay_and_a<F: Scalar>(dt: &[F], a_log: &[F]) -> (Vec<F>, Vec<F>) {
    let a: Vec<F> = a_log.iter().map(|&v| -v.exp()).collect();
    let h = a.len();
    let decay = dt.iter().enumerate().map(|(i, &d)| (d * a[i % h]).exp()).collect();
    (decay, a)
}

/// Fused selective scan with skip term, recorded as one tape node.
///
/// Inputs: `x [T, H*P]`, `dt [T, H]` (already positive), `a_log [H]`,
/// `B [T, N]`, `C [T, N]`, `d_skip [H]`. Output `y [T, H*P]`.
pub struct SelectiveScanOp<F> {
    shape: ScanShape,
    chunk: usize,
    decay: Vec<F>,
    a: Vec<F>,
    entry_states: Vec<Vec<F>>,
}

impl<F: Scalar> SelectiveScanOp<F> {
    pub fn apply(tape: &mut Tape<F>, cfg: &BackboneConfig, inputs: [Var; 6]) -> Result<Var, SsmError> {
        let [x, dt, a_log, b, c, d_skip] = inputs;
        let (t_len, _) = tape.value(x).dims2()?;
        let shape = cfg.scan_shape(t_len);
        let (decay, a) = decay_and_a(tape.value(dt).data(), tape.value(a_log).data());
        let xd = tape.value(x).data();
        let out = scan::scan_chunked(
            &shape,
            ScanInputs {
                decay: &decay,
                dt: tape.value(dt).data(),
                x: xd,
                b: tape.value(b).data(),
                c: tape.value(c).data(),
            },
            cfg.chunk,
        );
        let mut y = out.y;
        let dsk = tape.value(d_skip).data();
        let p = shape.head_dim;
        for (yv, (i, &xv)) in y.iter_mut().zip(xd.iter().enumerate()) {
            *yv += dsk[(i % shape.width()) / p] * xv;
        }
        let flops = t_len as u64 * (scan::step_flops(&shape) + 2 * shape.state_len() as u64 + 2 * shape.width() as u64);
        let rule = Self {
            shape,
            chunk: cfg.chunk,
            decay,
            a,
            entry_states: out.entry_states,
        };
        let y = Tensor::new(vec![t_len, shape.width()], y)?;
        Ok(tape.custom(&inputs, y, Box::new(rule), flops))
    }
}

impl<F: Scalar> CustomBackward<F> for SelectiveScanOp<F> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, grad_out: &Tensor<F>, inputs: &[&Tensor<F>], _output: &Tensor<F>) -> Vec<Option<Tensor<F>>> {
        let [x, dt, _a_log, b, c, d_skip] = [inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], inputs[5]];
        let sh = &self.shape;
        let (hn, w, p) = (sh.heads, sh.width(), sh.head_dim);
        let dy = grad_out.data();
        let g = scan::scan_backward(
            sh,
            ScanInputs {
                decay: &self.decay,
                dt: dt.data(),
                x: x.data(),
                b: b.data(),
                c: c.data(),
            },
            &self.entry_states,
            self.chunk,
            dy,
        );
        let mut dx = g.x;
        let mut d_d = vec![F::zero(); hn];
        for (i, (dxv, (&dyv, &xv))) in dx.iter_mut().zip(dy.iter().zip(x.data())).enumerate() {
            let head = (i % w) / p;
            *dxv += d_skip.data()[head] * dyv;
            d_d[head] += dyv * xv;
        }
        let mut d_dt = g.dt;
        let mut d_a = vec![F::zero(); hn];
        for (i, ddt) in d_dt.iter_mut().enumerate() {
            let head = i % hn;
            // decay = exp(dt * a)
            let gd = g.decay[i] * self.decay[i];
            *ddt += gd * self.a[head];
            d_a[head] += gd * dt.data()[i];
        }
        // a = -exp(a_log)
        let d_alog: Vec<F> = d_a.iter().zip(&self.a).map(|(&g, &a)| g * a).collect();
        vec![
            Some(Tensor::new(x.shape().to_vec(), dx).unwrap()),
            Some(Tensor::new(dt.shape().to_vec(), d_dt).unwrap()),
            Some(Tensor::vector(d_alog)),
            Some(Tensor::new(b.shape().to_vec(), g.b).unwrap()),
            Some(Tensor::new(c.shape().to_vec(), g.c).unwrap()),
            Some(Tensor::vector(d_d)),
        ]
    }
}

impl BlockLayout {
    /// `z + mixer(rms_norm(z))` over a whole `[T, d_model]` sequence.
    pub fn forward_parallel<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        vars: &[Var],
        cfg: &BackboneConfig,
        z: Var,
        layer: usize,
    ) -> Result<Var, SsmError> {
        let (di, n, cd) = (cfg.d_inner(), cfg.d_state, cfg.conv_dim());
        let eps = F::lit(cfg.norm_eps);
        let xn = tape.rms_norm(z, vars[self.norm], eps)?;
        let proj = tape.matmul(xn, vars[self.in_proj])?;
        let gate = tape.slice_cols(proj, 0, di)?;
        let xbc = tape.slice_cols(proj, di, di + cd)?;
        let dt_raw = tape.slice_cols(proj, di + cd, cfg.d_in_proj())?;
        let conv = tape.conv1d_causal(xbc, vars[self.conv_w], vars[self.conv_b])?;
        let xbc = tape.silu(conv);
        let dt = tape.add_row_bias(dt_raw, vars[self.dt_bias])?;
        let dt = tape.softplus(dt);
        let xs = tape.slice_cols(xbc, 0, di)?;
        let b = tape.slice_cols(xbc, di, di + n)?;
        let c = tape.slice_cols(xbc, di + n, di + 2 * n)?;
        let y = SelectiveScanOp::apply(tape, cfg, [xs, dt, vars[self.a_log], b, c, vars[self.d_skip]])?;
        let gate = tape.silu(gate);
        let y = tape.mul(y, gate)?;
        let y = tape.rms_norm(y, vars[self.inner_norm], eps)?;
        let out = tape.matmul(y, vars[self.out_proj])?;
        let z_out = tape.add(z, out)?;
        if !tape.value(z_out).all_finite() {
            return Err(SsmError::NonFinite { layer });
        }
        Ok(z_out)
    }

    /// One recurrent step: consumes `z` (`[d_model]`), updates `state`.
    pub fn step<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        cfg: &BackboneConfig,
        z: &[F],
        state: &mut LayerState<F>,
        layer: usize,
    ) -> Result<Vec<F>, SsmError> {
        state.check(cfg)?;
        if z.len() != cfg.d_model {
            return Err(SsmError::StateMismatch {
                expected: format!("input width {}", cfg.d_model),
                got: format!("input width {}", z.len()),
            });
        }
        let (d, di, n, cd, k, hn) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.conv_dim(), cfg.d_conv, cfg.heads());
        let dip = cfg.d_in_proj();
        let eps = F::lit(cfg.norm_eps);
        let pd = |i: usize| params.get(i).data();

        let mut xn = vec![F::zero(); d];
        rms_normalize(z, pd(self.norm), eps, &mut xn);
        let mut proj = vec![F::zero(); dip];
        F::gemm(1, d, dip, F::one(), &xn, d, 1, pd(self.in_proj), dip, 1, F::zero(), &mut proj, dip, 1);

        let raw = &proj[di..di + cd];
        let (cw, cb) = (pd(self.conv_w), pd(self.conv_b));
        let mut xbc = cb.to_vec();
        for j in 0..k - 1 {
            let tail = &state.conv_tail[j * cd..(j + 1) * cd];
            for ((o, &tv), &wv) in xbc.iter_mut().zip(tail).zip(&cw[j * cd..]) {
                *o += tv * wv;
            }
        }
        for ((o, &xv), &wv) in xbc.iter_mut().zip(raw).zip(&cw[(k - 1) * cd..]) {
            *o += xv * wv;
        }
        if k > 1 {
            state.conv_tail.copy_within(cd.., 0);
            state.conv_tail[(k - 2) * cd..].copy_from_slice(raw);
        }
        for v in &mut xbc {
            *v = silu(*v);
        }

        let dt: Vec<F> = proj[di + cd..]
            .iter()
            .zip(pd(self.dt_bias))
            .map(|(&r, &bias)| softplus(r + bias))
            .collect();
        let (decay, _) = decay_and_a(&dt, pd(self.a_log));
        let shape = cfg.scan_shape(1);
        let xs = &xbc[..di];
        let mut y = vec![F::zero(); di];
        scan::scan_step(
            &shape,
            &mut state.h,
            &decay,
            &dt,
            xs,
            &xbc[di..di + n],
            &xbc[di + n..di + 2 * n],
            &mut y,
        );
        let dsk = pd(self.d_skip);
        let p = cfg.head_dim;
        for (i, (yv, (&xv, &gv))) in y.iter_mut().zip(xs.iter().zip(&proj[..di])).enumerate() {
            *yv += dsk[i / p] * xv;
            *yv *= silu(gv);
        }
        debug_assert_eq!(dsk.len(), hn);
        let mut yn = vec![F::zero(); di];
        rms_normalize(&y, pd(self.inner_norm), eps, &mut yn);
        let mut out = z.to_vec();
        F::gemm(1, di, d, F::one(), &yn, di, 1, pd(self.out_proj), d, 1, F::one(), &mut out, d, 1);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SsmError::NonFinite { layer });
        }
        Ok(out)
    }
}
