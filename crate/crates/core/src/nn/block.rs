//! Residual Mamba block: RMS pre-norm, input expansion into a main and a
//! gate branch, depthwise causal convolution, S6 mixing, SiLU gating and an
//! output projection.
//!
//! Activations for a whole batch are stacked row-wise (`batch·L × d`); the
//! sequence-wise pieces (convolution and scan) run per `L`-row segment, so
//! samples never leak into each other.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Zip};
use rand::Rng;

use super::layers::{
    join, push1, push1_mut, push2, push2_mut, rms_norm, rms_norm_backward, silu, silu_grad, Linear, ParamMut, ParamRef,
    Params, RmsCache,
};
use crate::ssm::{sigmoid, softplus, S6Params};

#[derive(Debug, Clone, PartialEq)]
pub struct MambaBlock {
    pub norm: Array1<f64>,
    /// `d → 2·d_inner`, no bias; first half is the main branch.
    pub in_proj: Linear,
    /// `d_inner × k` depthwise kernel; tap `k-1` multiplies the current step.
    pub conv_w: Array2<f64>,
    pub conv_b: Array1<f64>,
    pub s6: S6Params,
    pub out_proj: Linear,
}

pub struct BlockCache {
    seg: usize,
    norm: RmsCache,
    xn: Array2<f64>,
    xm: Array2<f64>,
    z: Array2<f64>,
    xc: Array2<f64>,
    u: Array2<f64>,
    pre: Array2<f64>,
    delta: Array2<f64>,
    bmat: Array2<f64>,
    cmat: Array2<f64>,
    /// `rows × d_inner × n`, state after each step
    states: Vec<f64>,
    /// `rows × d_inner × n`, decay factor of each step
    decay: Vec<f64>,
    y: Array2<f64>,
    gate: Array2<f64>,
    g: Array2<f64>,
}

impl MambaBlock {
    pub fn init(d: usize, expand: usize, kernel: usize, d_state: usize, rng: &mut impl Rng) -> Self {
        let di = expand * d;
        let bound = 1.0 / (kernel as f64).sqrt();
        MambaBlock {
            norm: Array1::ones(d),
            in_proj: Linear::init(d, 2 * di, false, rng),
            conv_w: Array2::from_shape_fn((di, kernel), |_| rng.gen_range(-bound..bound)),
            conv_b: Array1::from_shape_fn(di, |_| rng.gen_range(-bound..bound)),
            s6: S6Params::init(di, d_state, rng),
            out_proj: Linear::init(di, d, false, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.norm.len()
    }

    pub fn inner(&self) -> usize {
        self.conv_w.nrows()
    }

    fn kernel(&self) -> usize {
        self.conv_w.ncols()
    }

    /// Depthwise causal convolution; tap `j` reads step `t - (k-1) + j`.
    fn conv_forward(&self, xm: &Array2<f64>, seg: usize) -> Array2<f64> {
        let (rows, di) = xm.dim();
        let k = self.kernel();
        let taps = self.conv_w.t().as_standard_layout().into_owned();
        let mut xc = Array2::zeros((rows, di));
        for r in 0..rows {
            let t = r % seg;
            let out = xc.row_mut(r).into_slice().expect("contiguous");
            out.copy_from_slice(self.conv_b.as_slice().expect("contiguous"));
            for j in (k - 1).saturating_sub(t)..k {
                let src = row(xm, r + j + 1 - k);
                let w = row(&taps, j);
                for c in 0..di {
                    out[c] += w[c] * src[c];
                }
            }
        }
        xc
    }

    fn conv_backward(&self, xm: &Array2<f64>, dxc: &Array2<f64>, seg: usize, grad: &mut MambaBlock) -> Array2<f64> {
        let (rows, di) = xm.dim();
        let k = self.kernel();
        let taps = self.conv_w.t().as_standard_layout().into_owned();
        let mut dtaps = Array2::<f64>::zeros((k, di));
        let mut dxm = Array2::<f64>::zeros((rows, di));
        for r in 0..rows {
            let t = r % seg;
            let g = row(dxc, r);
            for j in (k - 1).saturating_sub(t)..k {
                let src = r + j + 1 - k;
                let x = row(xm, src);
                let w = row(&taps, j);
                let dw = dtaps.row_mut(j).into_slice().expect("contiguous");
                for c in 0..di {
                    dw[c] += g[c] * x[c];
                }
                let dx = dxm.row_mut(src).into_slice().expect("contiguous");
                for c in 0..di {
                    dx[c] += g[c] * w[c];
                }
            }
        }
        grad.conv_b += &dxc.sum_axis(ndarray::Axis(0));
        grad.conv_w += &dtaps.t();
        dxm
    }

    /// `x`: stacked sequences of `seg` rows each.
    pub fn forward(&self, x: ArrayView2<f64>, seg: usize) -> (Array2<f64>, BlockCache) {
        let rows = x.nrows();
        let di = self.inner();
        let n = self.s6.state_size();

        let (xn, norm) = rms_norm(x, &self.norm);
        let hproj = self.in_proj.forward(xn.view());
        let xm = hproj.slice(s![.., ..di]).to_owned();
        let z = hproj.slice(s![.., di..]).to_owned();

        let xc = self.conv_forward(&xm, seg);
        let u = xc.mapv(silu);

        let mut pre = u.dot(&self.s6.w_delta.t());
        pre += &self.s6.b_delta;
        let delta = pre.mapv(softplus);
        let bmat = u.dot(&self.s6.w_b.t());
        let cmat = u.dot(&self.s6.w_c.t());

        let mut states = vec![0.0; rows * di * n];
        let mut decay = vec![0.0; rows * di * n];
        let mut y = Array2::zeros((rows, di));
        let rate = self.s6.a_log.as_slice().expect("standard layout");
        let skip = self.s6.d_skip.as_slice().expect("contiguous");
        for r in 0..rows {
            let first = r % seg == 0;
            let (dt_row, u_row) = (row(&delta, r), row(&u, r));
            let (b_row, c_row) = (row(&bmat, r), row(&cmat, r));
            let y_row = y.row_mut(r).into_slice().expect("contiguous");
            let (done, rest) = states.split_at_mut(r * di * n);
            let cur = &mut rest[..di * n];
            let prev: &[f64] = if first { &[] } else { &done[(r - 1) * di * n..] };
            let dec = &mut decay[r * di * n..(r + 1) * di * n];
            for c in 0..di {
                let (dt, uv) = (dt_row[c], u_row[c]);
                let mut acc = 0.0;
                for st in 0..n {
                    let i = c * n + st;
                    let a = (-dt * rate[i]).exp();
                    let hp = if first { 0.0 } else { prev[i] };
                    let h = a * hp + dt * b_row[st] * uv;
                    dec[i] = a;
                    cur[i] = h;
                    acc += c_row[st] * h;
                }
                y_row[c] = acc + skip[c] * uv;
            }
        }

        let gate = z.mapv(silu);
        let g = &y * &gate;
        let mut out = self.out_proj.forward(g.view());
        out += &x;
        let cache = BlockCache { seg, norm, xn, xm, z, xc, u, pre, delta, bmat, cmat, states, decay, y, gate, g };
        (out, cache)
    }

    pub fn backward(&self, cache: &BlockCache, dout: ArrayView2<f64>, grad: &mut MambaBlock) -> Array2<f64> {
        let rows = dout.nrows();
        let di = self.inner();
        let n = self.s6.state_size();
        let seg = cache.seg;

        let dg = self.out_proj.backward(cache.g.view(), dout, &mut grad.out_proj, true).expect("dx");
        let dy = &dg * &cache.gate;
        let mut dz = &dg * &cache.y;
        Zip::from(&mut dz).and(&cache.z).for_each(|d, &zv| *d *= silu_grad(zv));

        // reverse scan; `carry` holds dL/dh_t flowing back from step t+1
        let mut du = Array2::<f64>::zeros((rows, di));
        let mut ddelta = Array2::<f64>::zeros((rows, di));
        let mut dbmat = Array2::<f64>::zeros((rows, n));
        let mut dcmat = Array2::<f64>::zeros((rows, n));
        let mut carry = vec![0.0; di * n];
        let rate = self.s6.a_log.as_slice().expect("standard layout");
        let skip = self.s6.d_skip.as_slice().expect("contiguous");
        let grate = grad.s6.a_log.as_slice_mut().expect("standard layout");
        let gskip = grad.s6.d_skip.as_slice_mut().expect("contiguous");
        for r in (0..rows).rev() {
            let first = r % seg == 0;
            if r % seg == seg - 1 {
                carry.fill(0.0);
            }
            let (dy_row, dt_row, u_row) = (row(&dy, r), row(&cache.delta, r), row(&cache.u, r));
            let (b_row, c_row) = (row(&cache.bmat, r), row(&cache.cmat, r));
            let cur = &cache.states[r * di * n..(r + 1) * di * n];
            let prev = if first { &[][..] } else { &cache.states[(r - 1) * di * n..r * di * n] };
            let dec = &cache.decay[r * di * n..(r + 1) * di * n];
            let db_row = dbmat.row_mut(r).into_slice().expect("contiguous");
            let mut dc_row = vec![0.0; n];
            let du_row = du.row_mut(r).into_slice().expect("contiguous");
            let dd_row = ddelta.row_mut(r).into_slice().expect("contiguous");
            for c in 0..di {
                let (dyv, dt, uv) = (dy_row[c], dt_row[c], u_row[c]);
                gskip[c] += dyv * uv;
                let mut duv = dyv * skip[c];
                let mut ddt = 0.0;
                for st in 0..n {
                    let i = c * n + st;
                    dc_row[st] += dyv * cur[i];
                    let total = carry[i] + dyv * c_row[st];
                    let hp = if first { 0.0 } else { prev[i] };
                    let t1 = total * hp * dec[i];
                    ddt -= t1 * rate[i];
                    grate[i] -= t1 * dt;
                    let bv = b_row[st];
                    ddt += total * bv * uv;
                    db_row[st] += total * dt * uv;
                    duv += total * dt * bv;
                    carry[i] = total * dec[i];
                }
                dd_row[c] = ddt;
                du_row[c] += duv;
            }
            dcmat.row_mut(r).assign(&ndarray::ArrayView1::from(&dc_row));
        }

        let mut dpre = ddelta;
        Zip::from(&mut dpre).and(&cache.pre).for_each(|d, &p| *d *= sigmoid(p));
        // pre = u W_δᵀ + b_δ ; B = u W_Bᵀ ; C = u W_Cᵀ
        general_mat_mul(1.0, &dpre.t(), &cache.u, 1.0, &mut grad.s6.w_delta);
        grad.s6.b_delta += &dpre.sum_axis(ndarray::Axis(0));
        general_mat_mul(1.0, &dpre, &self.s6.w_delta, 1.0, &mut du);
        general_mat_mul(1.0, &dbmat.t(), &cache.u, 1.0, &mut grad.s6.w_b);
        general_mat_mul(1.0, &dbmat, &self.s6.w_b, 1.0, &mut du);
        general_mat_mul(1.0, &dcmat.t(), &cache.u, 1.0, &mut grad.s6.w_c);
        general_mat_mul(1.0, &dcmat, &self.s6.w_c, 1.0, &mut du);

        let mut dxc = du;
        Zip::from(&mut dxc).and(&cache.xc).for_each(|d, &v| *d *= silu_grad(v));
        let dxm = self.conv_backward(&cache.xm, &dxc, seg, grad);

        let mut dh = Array2::zeros((rows, 2 * di));
        dh.slice_mut(s![.., ..di]).assign(&dxm);
        dh.slice_mut(s![.., di..]).assign(&dz);
        let dxn = self.in_proj.backward(cache.xn.view(), dh.view(), &mut grad.in_proj, true).expect("dx");
        let mut dx = rms_norm_backward(&cache.norm, &self.norm, dxn.view(), &mut grad.norm);
        dx += &dout;
        dx
    }
}

fn row(a: &Array2<f64>, r: usize) -> &[f64] {
    let n = a.ncols();
    &a.as_slice().expect("standard layout")[r * n..(r + 1) * n]
}

impl Params for MambaBlock {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        push1(out, prefix, "norm", &self.norm);
        self.in_proj.params(&join(prefix, "in_proj"), out);
        push2(out, prefix, "conv.weight", &self.conv_w, true);
        push1(out, prefix, "conv.bias", &self.conv_b);
        let p = join(prefix, "s6");
        push2(out, &p, "w_delta", &self.s6.w_delta, true);
        push1(out, &p, "b_delta", &self.s6.b_delta);
        push2(out, &p, "a_log", &self.s6.a_log, false);
        push2(out, &p, "w_b", &self.s6.w_b, true);
        push2(out, &p, "w_c", &self.s6.w_c, true);
        push1(out, &p, "d_skip", &self.s6.d_skip);
        self.out_proj.params(&join(prefix, "out_proj"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        push1_mut(out, prefix, "norm", &mut self.norm);
        self.in_proj.params_mut(&join(prefix, "in_proj"), out);
        push2_mut(out, prefix, "conv.weight", &mut self.conv_w, true);
        push1_mut(out, prefix, "conv.bias", &mut self.conv_b);
        let p = join(prefix, "s6");
        let s6 = &mut self.s6;
        push2_mut(out, &p, "w_delta", &mut s6.w_delta, true);
        push1_mut(out, &p, "b_delta", &mut s6.b_delta);
        push2_mut(out, &p, "a_log", &mut s6.a_log, false);
        push2_mut(out, &p, "w_b", &mut s6.w_b, true);
        push2_mut(out, &p, "w_c", &mut s6.w_c, true);
        push1_mut(out, &p, "d_skip", &mut s6.d_skip);
        self.out_proj.params_mut(&join(prefix, "out_proj"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::s6_scan_seq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block() -> MambaBlock {
        MambaBlock::init(4, 2, 3, 3, &mut ChaCha8Rng::seed_from_u64(1))
    }

    fn input(rows: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, 4), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn scan_agrees_with_reference_s6() {
        let b = block();
        let x = input(7, 2);
        let (_, cache) = b.forward(x.view(), 7);
        let reference = s6_scan_seq(&b.s6, cache.u.view()).unwrap();
        assert!((&reference - &cache.y).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn causal() {
        let b = block();
        let x = input(6, 3);
        let mut x2 = x.clone();
        x2[[4, 1]] += 0.7;
        let (y1, _) = b.forward(x.view(), 6);
        let (y2, _) = b.forward(x2.view(), 6);
        assert_eq!(y1.slice(s![..4, ..]), y2.slice(s![..4, ..]));
        assert_ne!(y1.row(4), y2.row(4));
    }

    #[test]
    fn segments_are_independent() {
        let b = block();
        let x = input(10, 4);
        let (joint, _) = b.forward(x.view(), 5);
        let (first, _) = b.forward(x.slice(s![..5, ..]), 5);
        let (second, _) = b.forward(x.slice(s![5.., ..]), 5);
        assert_eq!(joint.slice(s![..5, ..]), first);
        assert_eq!(joint.slice(s![5.., ..]), second);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let b = block();
        let x = input(8, 5);
        let w = input(8, 6);
        let loss = |x: &Array2<f64>| (&b.forward(x.view(), 4).0 * &w).sum();
        let (_, cache) = b.forward(x.view(), 4);
        let mut g = b.clone();
        g.fill_zero();
        let dx = b.backward(&cache, w.view(), &mut g);
        let h = 1e-6;
        for i in 0..8 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() < 1e-7, "({i},{j}) fd {fd} vs {}", dx[[i, j]]);
            }
        }
    }
}
