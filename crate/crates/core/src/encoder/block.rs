//! Single pre-norm transformer block with manual backward pass.
//!
//! ```text
//! x1 = x + Attn(LN1(x))
//! y  = x1 + W2·gelu(W1·LN2(x1) + b1) + b2
//! ```
//!
//! Pad positions are dropped before the block runs, which is the same as
//! giving their keys `-inf` logits; their outputs and input gradients are zero.
//! No positional encodings are used, so the block is permutation-equivariant
//! over real tokens.

use super::mat::Mat;
use super::EncoderError;
use crate::real::Real;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights<T> {
    pub ln1_g: Vec<T>,
    pub ln1_b: Vec<T>,
    pub wq: Mat<T>,
    pub wk: Mat<T>,
    pub wv: Mat<T>,
    pub wo: Mat<T>,
    pub ln2_g: Vec<T>,
    pub ln2_b: Vec<T>,
    pub w1: Mat<T>,
    pub b1: Vec<T>,
    pub w2: Mat<T>,
    pub b2: Vec<T>,
}

impl<T: Real> BlockWeights<T> {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        BlockWeights {
            ln1_g: vec![T::zero(); d],
            ln1_b: vec![T::zero(); d],
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
            ln2_g: vec![T::zero(); d],
            ln2_b: vec![T::zero(); d],
            w1: Mat::zeros(d, hidden),
            b1: vec![T::zero(); hidden],
            w2: Mat::zeros(hidden, d),
            b2: vec![T::zero(); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.ln1_g.len()
    }

    pub fn tensors(&self) -> [&[T]; 12] {
        [
            &self.ln1_g,
            &self.ln1_b,
            &self.wq.data,
            &self.wk.data,
            &self.wv.data,
            &self.wo.data,
            &self.ln2_g,
            &self.ln2_b,
            &self.w1.data,
            &self.b1,
            &self.w2.data,
            &self.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 12] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq.data,
            &mut self.wk.data,
            &mut self.wv.data,
            &mut self.wo.data,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
        ]
    }

    pub const TENSOR_NAMES: [&'static str; 12] = [
        "ln1.scale",
        "ln1.bias",
        "attn.q",
        "attn.k",
        "attn.v",
        "attn.out",
        "ln2.scale",
        "ln2.bias",
        "ffn.w1",
        "ffn.b1",
        "ffn.w2",
        "ffn.b2",
    ];
}

#[derive(Clone, Debug)]
struct LnCache<T> {
    xhat: Mat<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Real>(x: &Mat<T>, g: &[T], b: &[T]) -> (Mat<T>, LnCache<T>) {
    let d = T::of(x.cols as f64);
    let mut xhat = Mat::zeros(x.rows, x.cols);
    let mut out = Mat::zeros(x.rows, x.cols);
    let mut rstd = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mu = row.iter().copied().sum::<T>() / d;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / d;
        let r = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd.push(r);
        for j in 0..x.cols {
            let xh = (row[j] - mu) * r;
            xhat.data[i * x.cols + j] = xh;
            out.data[i * x.cols + j] = xh * g[j] + b[j];
        }
    }
    (out, LnCache { xhat, rstd })
}

fn layer_norm_backward<T: Real>(cache: &LnCache<T>, g: &[T], dout: &Mat<T>, dg: &mut [T], db: &mut [T]) -> Mat<T> {
    let (n, d) = (dout.rows, dout.cols);
    let df = T::of(d as f64);
    let mut dx = Mat::zeros(n, d);
    for i in 0..n {
        let dy = dout.row(i);
        let xh = cache.xhat.row(i);
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for j in 0..d {
            dg[j] += dy[j] * xh[j];
            db[j] += dy[j];
            let dxh = dy[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= df;
        mean_dxh_xh /= df;
        let r = cache.rstd[i];
        for j in 0..d {
            let dxh = dy[j] * g[j];
            dx.data[i * d + j] = r * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

fn gelu<T: Real>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
}

/// Forward activations retained for the backward pass.
#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    total_rows: usize,
    real: Vec<usize>,
    heads: usize,
    ln1: LnCache<T>,
    a1: Mat<T>,
    q: Mat<T>,
    k: Mat<T>,
    v: Mat<T>,
    probs: Vec<Mat<T>>,
    attn: Mat<T>,
    ln2: LnCache<T>,
    a2: Mat<T>,
    pre_act: Mat<T>,
    act: Mat<T>,
}

fn head_slice<T: Real>(m: &Mat<T>, h: usize, dh: usize) -> Mat<T> {
    let mut out = Mat::zeros(m.rows, dh);
    for i in 0..m.rows {
        out.row_mut(i).copy_from_slice(&m.row(i)[h * dh..(h + 1) * dh]);
    }
    out
}

fn head_write<T: Real>(dst: &mut Mat<T>, src: &Mat<T>, h: usize, dh: usize) {
    for i in 0..src.rows {
        dst.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(src.row(i));
    }
}

/// Runs the block over the rows of `x` whose `mask` entry is true.
pub fn transformer_block<T: Real>(
    w: &BlockWeights<T>,
    heads: usize,
    x: &Mat<T>,
    mask: &[bool],
) -> Result<(Mat<T>, BlockCache<T>), EncoderError> {
    let d = w.dim();
    if x.cols != d || mask.len() != x.rows {
        return Err(EncoderError::Shape(format!(
            "block input {}x{} with mask {} (expected width {d})",
            x.rows,
            x.cols,
            mask.len()
        )));
    }
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(EncoderError::Shape(format!("width {d} not divisible by {heads} heads")));
    }
    let real: Vec<usize> = (0..x.rows).filter(|&i| mask[i]).collect();
    if real.is_empty() {
        return Err(EncoderError::AllPad);
    }
    let n = real.len();
    let mut xr = Mat::zeros(n, d);
    for (r, &i) in real.iter().enumerate() {
        xr.row_mut(r).copy_from_slice(x.row(i));
    }

    let (a1, ln1) = layer_norm(&xr, &w.ln1_g, &w.ln1_b);
    let q = a1.matmul(&w.wq);
    let k = a1.matmul(&w.wk);
    let v = a1.matmul(&w.wv);
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut attn = Mat::zeros(n, d);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (head_slice(&q, h, dh), head_slice(&k, h, dh), head_slice(&v, h, dh));
        let mut p = qh.matmul_nt(&kh);
        for i in 0..n {
            let row = p.row_mut(i);
            let mut mx = T::neg_infinity();
            for s in row.iter_mut() {
                *s *= scale;
                mx = mx.max(*s);
            }
            let mut z = T::zero();
            for s in row.iter_mut() {
                *s = (*s - mx).exp();
                z += *s;
            }
            for s in row.iter_mut() {
                *s /= z;
            }
        }
        head_write(&mut attn, &p.matmul(&vh), h, dh);
        probs.push(p);
    }
    let mut x1 = attn.matmul(&w.wo);
    x1.add_assign(&xr);

    let (a2, ln2) = layer_norm(&x1, &w.ln2_g, &w.ln2_b);
    let mut pre_act = a2.matmul(&w.w1);
    for i in 0..n {
        for (p, &b) in pre_act.row_mut(i).iter_mut().zip(&w.b1) {
            *p += b;
        }
    }
    let act = Mat::from_vec(n, pre_act.cols, pre_act.data.iter().map(|&z| gelu(z)).collect());
    let mut y = act.matmul(&w.w2);
    for i in 0..n {
        for ((o, &b), &r) in y.row_mut(i).iter_mut().zip(&w.b2).zip(x1.row(i)) {
            *o += b + r;
        }
    }

    let mut out = Mat::zeros(x.rows, d);
    for (r, &i) in real.iter().enumerate() {
        out.row_mut(i).copy_from_slice(y.row(r));
    }
    let cache = BlockCache {
        total_rows: x.rows,
        real,
        heads,
        ln1,
        a1,
        q,
        k,
        v,
        probs,
        attn,
        ln2,
        a2,
        pre_act,
        act,
    };
    Ok((out, cache))
}

/// Reverse pass: returns the input gradient (zero on pad rows) and the
/// weight gradients.
pub fn transformer_block_backward<T: Real>(
    w: &BlockWeights<T>,
    cache: &BlockCache<T>,
    dy_full: &Mat<T>,
) -> Result<(Mat<T>, BlockWeights<T>), EncoderError> {
    let d = w.dim();
    if dy_full.rows != cache.total_rows || dy_full.cols != d {
        return Err(EncoderError::Shape(format!(
            "upstream gradient {}x{} does not match cached {}x{d}",
            dy_full.rows, dy_full.cols, cache.total_rows
        )));
    }
    let n = cache.real.len();
    let mut dy = Mat::zeros(n, d);
    for (r, &i) in cache.real.iter().enumerate() {
        dy.row_mut(r).copy_from_slice(dy_full.row(i));
    }
    let mut gw = BlockWeights::zeros(d, w.b1.len());

    // FFN branch
    gw.w2 = cache.act.matmul_tn(&dy);
    gw.b2 = dy.column_sums();
    let dact = dy.matmul_nt(&w.w2);
    let dpre = Mat::from_vec(
        n,
        dact.cols,
        dact.data
            .iter()
            .zip(&cache.pre_act.data)
            .map(|(&g, &z)| g * gelu_grad(z))
            .collect(),
    );
    gw.w1 = cache.a2.matmul_tn(&dpre);
    gw.b1 = dpre.column_sums();
    let da2 = dpre.matmul_nt(&w.w1);
    let mut dx1 = layer_norm_backward(&cache.ln2, &w.ln2_g, &da2, &mut gw.ln2_g, &mut gw.ln2_b);
    dx1.add_assign(&dy);

    // attention branch
    gw.wo = cache.attn.matmul_tn(&dx1);
    let dattn = dx1.matmul_nt(&w.wo);
    let heads = cache.heads;
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dq = Mat::zeros(n, d);
    let mut dk = Mat::zeros(n, d);
    let mut dv = Mat::zeros(n, d);
    for h in 0..heads {
        let p = &cache.probs[h];
        let (qh, kh, vh) = (
            head_slice(&cache.q, h, dh),
            head_slice(&cache.k, h, dh),
            head_slice(&cache.v, h, dh),
        );
        let dout = head_slice(&dattn, h, dh);
        let dp = dout.matmul_nt(&vh);
        head_write(&mut dv, &p.matmul_tn(&dout), h, dh);
        let mut ds = Mat::zeros(n, n);
        for i in 0..n {
            let (pr, dpr) = (p.row(i), dp.row(i));
            let dot: T = pr.iter().zip(dpr).map(|(&a, &b)| a * b).sum();
            for j in 0..n {
                ds.data[i * n + j] = pr[j] * (dpr[j] - dot) * scale;
            }
        }
        head_write(&mut dq, &ds.matmul(&kh), h, dh);
        head_write(&mut dk, &ds.matmul_tn(&qh), h, dh);
    }
    gw.wq = cache.a1.matmul_tn(&dq);
    gw.wk = cache.a1.matmul_tn(&dk);
    gw.wv = cache.a1.matmul_tn(&dv);
    let mut da1 = dq.matmul_nt(&w.wq);
    da1.add_assign(&dk.matmul_nt(&w.wk));
    da1.add_assign(&dv.matmul_nt(&w.wv));
    let mut dx = layer_norm_backward(&cache.ln1, &w.ln1_g, &da1, &mut gw.ln1_g, &mut gw.ln1_b);
    dx.add_assign(&dx1);

    let mut dx_full = Mat::zeros(cache.total_rows, d);
    for (r, &i) in cache.real.iter().enumerate() {
        dx_full.row_mut(i).copy_from_slice(dx.row(r));
    }
    Ok((dx_full, gw))
}
