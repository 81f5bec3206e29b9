//! Layers with explicit forward/backward passes. Each layer owns its
//! parameters, gradient accumulators and the forward cache its backward
//! pass needs. Networks are static compositions of these structs.

use rand::Rng;

use super::tensor::{Element, Tensor};

pub fn kaiming_uniform<E: Element, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<E> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| E::from_f64(rng.random_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data)
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

struct ConvCache<E: Element> {
    x_dims: (usize, usize, usize, usize),
    cols: Tensor<E>, // [ic*k*k, n*oh*ow]
}

/// 2-d convolution, square kernel, zero padding, via im2col + gemm.
pub struct Conv2d<E: Element> {
    pub w: Tensor<E>, // [oc, ic, k, k]
    pub b: Tensor<E>, // [oc]
    pub gw: Tensor<E>,
    pub gb: Tensor<E>,
    pub stride: usize,
    pub pad: usize,
    cache: Option<ConvCache<E>>,
}

impl<E: Element> Clone for Conv2d<E> {
    fn clone(&self) -> Self {
        Conv2d {
            w: self.w.clone(),
            b: self.b.clone(),
            gw: self.gw.clone(),
            gb: self.gb.clone(),
            stride: self.stride,
            pad: self.pad,
            cache: None,
        }
    }
}

impl<E: Element> Conv2d<E> {
    pub fn new<R: Rng>(ic: usize, oc: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        let fan_in = ic * k * k;
        Conv2d {
            w: kaiming_uniform(&[oc, ic, k, k], fan_in, rng),
            b: Tensor::zeros(&[oc]),
            gw: Tensor::zeros(&[oc, ic, k, k]),
            gb: Tensor::zeros(&[oc]),
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.shape()[2];
        ((h + 2 * self.pad - k) / self.stride + 1, (w + 2 * self.pad - k) / self.stride + 1)
    }

    pub fn forward(&mut self, x: &Tensor<E>) -> Tensor<E> {
        let (n, ic, h, w) = x.dims4();
        let (oc, wic, k, _) = self.w.dims4();
        assert_eq!(ic, wic, "conv input channels");
        let (oh, ow) = self.out_hw(h, w);
        let cols = im2col(x, k, self.stride, self.pad, oh, ow);
        let kk = ic * k * k;
        let ns = n * oh * ow;
        // tmp[oc, ns] = W[oc, kk] * cols[kk, ns]
        let mut tmp = Tensor::<E>::zeros(&[oc, ns]);
        unsafe {
            E::gemm(
                oc,
                kk,
                ns,
                E::ONE,
                self.w.data().as_ptr(),
                kk as isize,
                1,
                cols.data().as_ptr(),
                ns as isize,
                1,
                E::ZERO,
                tmp.data_mut().as_mut_ptr(),
                ns as isize,
                1,
            );
        }
        let mut y = Tensor::zeros(&[n, oc, oh, ow]);
        let ohow = oh * ow;
        {
            let src = tmp.data();
            let bias = self.b.data();
            let dst = y.data_mut();
            for ni in 0..n {
                for c in 0..oc {
                    let bb = bias[c];
                    let src_row = &src[c * ns + ni * ohow..c * ns + (ni + 1) * ohow];
                    let dst_row = &mut dst[(ni * oc + c) * ohow..(ni * oc + c + 1) * ohow];
                    for (d, s) in dst_row.iter_mut().zip(src_row) {
                        *d = *s + bb;
                    }
                }
            }
        }
        self.cache = Some(ConvCache { x_dims: (n, ic, h, w), cols });
        y
    }

    pub fn backward(&mut self, dy: &Tensor<E>) -> Tensor<E> {
        let cache = self.cache.take().expect("conv backward without forward");
        let (n, ic, h, w) = cache.x_dims;
        let (oc, _, k, _) = self.w.dims4();
        let (dn, doc, oh, ow) = dy.dims4();
        assert_eq!((dn, doc), (n, oc));
        let kk = ic * k * k;
        let ns = n * oh * ow;
        let ohow = oh * ow;
        // regroup dy from [n, oc, oh*ow] to [oc, n*oh*ow]
        let mut dyp = Tensor::<E>::zeros(&[oc, ns]);
        {
            let src = dy.data();
            let dst = dyp.data_mut();
            for ni in 0..n {
                for c in 0..oc {
                    let s = &src[(ni * oc + c) * ohow..(ni * oc + c + 1) * ohow];
                    let d = &mut dst[c * ns + ni * ohow..c * ns + (ni + 1) * ohow];
                    d.copy_from_slice(s);
                }
            }
        }
        // bias grad
        {
            let gb = self.gb.data_mut();
            let src = dyp.data();
            for c in 0..oc {
                let mut acc = E::ZERO;
                for v in &src[c * ns..(c + 1) * ns] {
                    acc += *v;
                }
                gb[c] += acc;
            }
        }
        // gw[oc, kk] += dyp[oc, ns] * cols^T[ns, kk]
        unsafe {
            E::gemm(
                oc,
                ns,
                kk,
                E::ONE,
                dyp.data().as_ptr(),
                ns as isize,
                1,
                cache.cols.data().as_ptr(),
                1,
                ns as isize,
                E::ONE,
                self.gw.data_mut().as_mut_ptr(),
                kk as isize,
                1,
            );
        }
        // dcols[kk, ns] = W^T[kk, oc] * dyp[oc, ns]
        let mut dcols = Tensor::<E>::zeros(&[kk, ns]);
        unsafe {
            E::gemm(
                kk,
                oc,
                ns,
                E::ONE,
                self.w.data().as_ptr(),
                1,
                kk as isize,
                dyp.data().as_ptr(),
                ns as isize,
                1,
                E::ZERO,
                dcols.data_mut().as_mut_ptr(),
                ns as isize,
                1,
            );
        }
        col2im(&dcols, (n, ic, h, w), k, self.stride, self.pad, oh, ow)
    }
}

/// Unfolds x[n, ic, h, w] into [ic*k*k, n*oh*ow] with zero padding.
fn im2col<E: Element>(
    x: &Tensor<E>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Tensor<E> {
    let (n, ic, h, w) = x.dims4();
    let kk = ic * k * k;
    let ns = n * oh * ow;
    let mut cols = Tensor::zeros(&[kk, ns]);
    let src = x.data();
    let dst = cols.data_mut();
    for c in 0..ic {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst_row = &mut dst[row * ns..(row + 1) * ns];
                for ni in 0..n {
                    let x_base = (ni * ic + c) * h * w;
                    for i in 0..oh {
                        let sv = (i * stride + ki) as isize - pad as isize;
                        let out_base = ni * oh * ow + i * ow;
                        if sv < 0 || sv >= h as isize {
                            continue; // stays zero
                        }
                        let src_row = x_base + sv as usize * w;
                        for j in 0..ow {
                            let su = (j * stride + kj) as isize - pad as isize;
                            if su < 0 || su >= w as isize {
                                continue;
                            }
                            dst_row[out_base + j] = src[src_row + su as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of im2col: folds column gradients back onto the input image.
fn col2im<E: Element>(
    cols: &Tensor<E>,
    dims: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Tensor<E> {
    let (n, ic, h, w) = dims;
    let ns = n * oh * ow;
    let mut dx = Tensor::zeros(&[n, ic, h, w]);
    let src = cols.data();
    let dst = dx.data_mut();
    for c in 0..ic {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src_row = &src[row * ns..(row + 1) * ns];
                for ni in 0..n {
                    let x_base = (ni * ic + c) * h * w;
                    for i in 0..oh {
                        let sv = (i * stride + ki) as isize - pad as isize;
                        if sv < 0 || sv >= h as isize {
                            continue;
                        }
                        let dst_row = x_base + sv as usize * w;
                        let s_base = ni * oh * ow + i * ow;
                        for j in 0..ow {
                            let su = (j * stride + kj) as isize - pad as isize;
                            if su < 0 || su >= w as isize {
                                continue;
                            }
                            dst[dst_row + su as usize] += src_row[s_base + j];
                        }
                    }
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// activations, pooling, upsampling
// ---------------------------------------------------------------------------

#[derive(Clone, Default)]
pub struct Relu<E: Element> {
    mask: Option<Vec<bool>>,
    _marker: std::marker::PhantomData<E>,
}

impl<E: Element> Relu<E> {
    pub fn new() -> Self {
        Relu { mask: None, _marker: std::marker::PhantomData }
    }

    pub fn forward(&mut self, mut x: Tensor<E>) -> Tensor<E> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > E::ZERO).collect();
        for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
            if !m {
                *v = E::ZERO;
            }
        }
        self.mask = Some(mask);
        x
    }

    pub fn backward(&mut self, mut dy: Tensor<E>) -> Tensor<E> {
        let mask = self.mask.take().expect("relu backward without forward");
        for (v, m) in dy.data_mut().iter_mut().zip(mask) {
            if !m {
                *v = E::ZERO;
            }
        }
        dy
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/cols are dropped.
#[derive(Clone, Default)]
pub struct MaxPool2<E: Element> {
    arg: Option<(Vec<u32>, (usize, usize, usize, usize))>,
    _marker: std::marker::PhantomData<E>,
}

impl<E: Element> MaxPool2<E> {
    pub fn new() -> Self {
        MaxPool2 { arg: None, _marker: std::marker::PhantomData }
    }

    pub fn forward(&mut self, x: &Tensor<E>) -> Tensor<E> {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let mut y = Tensor::zeros(&[n, c, oh, ow]);
        let mut arg = vec![0u32; n * c * oh * ow];
        let src = x.data();
        let dst = y.data_mut();
        for nc in 0..n * c {
            let base = nc * h * w;
            let obase = nc * oh * ow;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + (2 * i) * w + 2 * j;
                    let mut best_v = src[best];
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if src[idx] > best_v {
                            best_v = src[idx];
                            best = idx;
                        }
                    }
                    dst[obase + i * ow + j] = best_v;
                    arg[obase + i * ow + j] = best as u32;
                }
            }
        }
        self.arg = Some((arg, (n, c, h, w)));
        y
    }

    pub fn backward(&mut self, dy: &Tensor<E>) -> Tensor<E> {
        let (arg, dims) = self.arg.take().expect("pool backward without forward");
        let mut dx = Tensor::zeros(&[dims.0, dims.1, dims.2, dims.3]);
        let dst = dx.data_mut();
        for (g, &a) in dy.data().iter().zip(&arg) {
            dst[a as usize] += *g;
        }
        dx
    }
}

/// Nearest-neighbor 2x upsample.
pub fn upsample2<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let (n, c, h, w) = x.dims4();
    let mut y = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = y.data_mut();
    for nc in 0..n * c {
        for i in 0..h {
            for j in 0..w {
                let v = src[nc * h * w + i * w + j];
                let b = nc * 4 * h * w + 2 * i * 2 * w + 2 * j;
                dst[b] = v;
                dst[b + 1] = v;
                dst[b + 2 * w] = v;
                dst[b + 2 * w + 1] = v;
            }
        }
    }
    y
}

pub fn upsample2_backward<E: Element>(dy: &Tensor<E>) -> Tensor<E> {
    let (n, c, h2, w2) = dy.dims4();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let src = dy.data();
    let dst = dx.data_mut();
    for nc in 0..n * c {
        for i in 0..h {
            for j in 0..w {
                let b = nc * h2 * w2 + 2 * i * w2 + 2 * j;
                dst[nc * h * w + i * w + j] = src[b] + src[b + 1] + src[b + w2] + src[b + w2 + 1];
            }
        }
    }
    dx
}

/// Zero-pads the bottom/right of the spatial dims up to (th, tw).
pub fn pad_to<E: Element>(x: &Tensor<E>, th: usize, tw: usize) -> Tensor<E> {
    let (n, c, h, w) = x.dims4();
    assert!(th >= h && tw >= w);
    if th == h && tw == w {
        return x.clone();
    }
    let mut y = Tensor::zeros(&[n, c, th, tw]);
    let src = x.data();
    let dst = y.data_mut();
    for nc in 0..n * c {
        for i in 0..h {
            let s = &src[nc * h * w + i * w..nc * h * w + (i + 1) * w];
            let d = &mut dst[nc * th * tw + i * tw..nc * th * tw + i * tw + w];
            d.copy_from_slice(s);
        }
    }
    y
}

/// Crops the spatial dims down to (th, tw); adjoint of [`pad_to`].
pub fn crop_to<E: Element>(x: &Tensor<E>, th: usize, tw: usize) -> Tensor<E> {
    let (n, c, h, w) = x.dims4();
    assert!(th <= h && tw <= w);
    if th == h && tw == w {
        return x.clone();
    }
    let mut y = Tensor::zeros(&[n, c, th, tw]);
    let src = x.data();
    let dst = y.data_mut();
    for nc in 0..n * c {
        for i in 0..th {
            let s = &src[nc * h * w + i * w..nc * h * w + i * w + tw];
            let d = &mut dst[nc * th * tw + i * tw..nc * th * tw + (i + 1) * tw];
            d.copy_from_slice(s);
        }
    }
    y
}

/// Concatenates along the channel axis.
pub fn concat_channels<E: Element>(xs: &[&Tensor<E>]) -> Tensor<E> {
    let (n, _, h, w) = xs[0].dims4();
    let cts: Vec<usize> = xs.iter().map(|x| x.dims4().1).collect();
    let total: usize = cts.iter().sum();
    let mut y = Tensor::zeros(&[n, total, h, w]);
    let hw = h * w;
    let dst = y.data_mut();
    for ni in 0..n {
        let mut off = 0;
        for (x, &c) in xs.iter().zip(&cts) {
            let src = &x.data()[ni * c * hw..(ni + 1) * c * hw];
            dst[(ni * total + off) * hw..(ni * total + off) * hw + c * hw].copy_from_slice(src);
            off += c;
        }
    }
    y
}

/// Splits channel-axis gradients back into the concatenated pieces.
pub fn split_channels<E: Element>(dy: &Tensor<E>, sizes: &[usize]) -> Vec<Tensor<E>> {
    let (n, total, h, w) = dy.dims4();
    assert_eq!(sizes.iter().sum::<usize>(), total);
    let hw = h * w;
    let src = dy.data();
    let mut out: Vec<Tensor<E>> = sizes.iter().map(|&c| Tensor::zeros(&[n, c, h, w])).collect();
    for ni in 0..n {
        let mut off = 0;
        for (t, &c) in out.iter_mut().zip(sizes) {
            let dst = t.data_mut();
            dst[ni * c * hw..(ni + 1) * c * hw]
                .copy_from_slice(&src[(ni * total + off) * hw..(ni * total + off) * hw + c * hw]);
            off += c;
        }
    }
    out
}

/// Tiles per-sample vectors [n, c] across a spatial map -> [n, c, h, w].
pub fn broadcast_to_map<E: Element>(v: &Tensor<E>, h: usize, w: usize) -> Tensor<E> {
    let (n, c) = v.dims2();
    let mut y = Tensor::zeros(&[n, c, h, w]);
    let src = v.data();
    let dst = y.data_mut();
    for nc in 0..n * c {
        let val = src[nc];
        for p in &mut dst[nc * h * w..(nc + 1) * h * w] {
            *p = val;
        }
    }
    y
}

pub fn broadcast_backward<E: Element>(dy: &Tensor<E>) -> Tensor<E> {
    let (n, c, h, w) = dy.dims4();
    let mut dv = Tensor::zeros(&[n, c]);
    let src = dy.data();
    let dst = dv.data_mut();
    for nc in 0..n * c {
        let mut acc = E::ZERO;
        for p in &src[nc * h * w..(nc + 1) * h * w] {
            acc += *p;
        }
        dst[nc] = acc;
    }
    dv
}

// ---------------------------------------------------------------------------
// fully connected
// ---------------------------------------------------------------------------

pub struct Linear<E: Element> {
    pub w: Tensor<E>, // [out, in]
    pub b: Tensor<E>, // [out]
    pub gw: Tensor<E>,
    pub gb: Tensor<E>,
    cache: Option<Tensor<E>>,
}

impl<E: Element> Clone for Linear<E> {
    fn clone(&self) -> Self {
        Linear {
            w: self.w.clone(),
            b: self.b.clone(),
            gw: self.gw.clone(),
            gb: self.gb.clone(),
            cache: None,
        }
    }
}

impl<E: Element> Linear<E> {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            w: kaiming_uniform(&[output, input], input, rng),
            b: Tensor::zeros(&[output]),
            gw: Tensor::zeros(&[output, input]),
            gb: Tensor::zeros(&[output]),
            cache: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&mut self, x: &Tensor<E>) -> Tensor<E> {
        let (n, input) = x.dims2();
        let (out, win) = self.w.dims2();
        assert_eq!(input, win, "linear input width");
        let mut y = Tensor::zeros(&[n, out]);
        unsafe {
            // y[n, out] = x[n, in] * w^T[in, out]
            E::gemm(
                n,
                input,
                out,
                E::ONE,
                x.data().as_ptr(),
                input as isize,
                1,
                self.w.data().as_ptr(),
                1,
                input as isize,
                E::ZERO,
                y.data_mut().as_mut_ptr(),
                out as isize,
                1,
            );
        }
        let bias = self.b.data();
        let dst = y.data_mut();
        for ni in 0..n {
            for o in 0..out {
                dst[ni * out + o] += bias[o];
            }
        }
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<E>) -> Tensor<E> {
        let x = self.cache.take().expect("linear backward without forward");
        let (n, input) = x.dims2();
        let (_, out) = dy.dims2();
        unsafe {
            // gw[out, in] += dy^T[out, n] * x[n, in]
            E::gemm(
                out,
                n,
                input,
                E::ONE,
                dy.data().as_ptr(),
                1,
                out as isize,
                x.data().as_ptr(),
                input as isize,
                1,
                E::ONE,
                self.gw.data_mut().as_mut_ptr(),
                input as isize,
                1,
            );
        }
        {
            let gb = self.gb.data_mut();
            let src = dy.data();
            for ni in 0..n {
                for o in 0..out {
                    gb[o] += src[ni * out + o];
                }
            }
        }
        let mut dx = Tensor::zeros(&[n, input]);
        unsafe {
            // dx[n, in] = dy[n, out] * w[out, in]
            E::gemm(
                n,
                out,
                input,
                E::ONE,
                dy.data().as_ptr(),
                out as isize,
                1,
                self.w.data().as_ptr(),
                input as isize,
                1,
                E::ZERO,
                dx.data_mut().as_mut_ptr(),
                input as isize,
                1,
            );
        }
        dx
    }

    /// Widens the input side, keeping existing weights and initializing
    /// the appended columns fresh. Used when the abstract one-hot space
    /// grows after transfer.
    pub fn grow_inputs<R: Rng>(&mut self, extra: usize, rng: &mut R) {
        if extra == 0 {
            return;
        }
        let (out, input) = self.w.dims2();
        let wider = input + extra;
        let fresh: Tensor<E> = kaiming_uniform(&[out, extra], wider, rng);
        let mut w = Tensor::zeros(&[out, wider]);
        for o in 0..out {
            w.data_mut()[o * wider..o * wider + input]
                .copy_from_slice(&self.w.data()[o * input..(o + 1) * input]);
            w.data_mut()[o * wider + input..(o + 1) * wider]
                .copy_from_slice(&fresh.data()[o * extra..(o + 1) * extra]);
        }
        self.w = w;
        self.gw = Tensor::zeros(&[out, wider]);
        self.cache = None;
    }
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Mean Huber loss (delta = 1) applied only at the chosen action pixels.
/// Returns the loss and the gradient w.r.t. the full Q-map tensor, which
/// is zero everywhere except those pixels.
pub fn huber_at_actions<E: Element>(
    q: &Tensor<E>,
    picks: &[(usize, usize, usize)], // (channel, v, u) per sample
    targets: &[E],
) -> (f64, Tensor<E>) {
    let (n, c, h, w) = q.dims4();
    assert_eq!(picks.len(), n);
    assert_eq!(targets.len(), n);
    let mut dq = Tensor::zeros(&[n, c, h, w]);
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let src = q.data();
    let dst = dq.data_mut();
    for (i, (&(ch, v, u), &y)) in picks.iter().zip(targets).enumerate() {
        let idx = ((i * c + ch) * h + v) * w + u;
        let e = (src[idx] - y).to_f64();
        if e.abs() <= 1.0 {
            loss += 0.5 * e * e;
        } else {
            loss += e.abs() - 0.5;
        }
        dst[idx] = E::from_f64(e.clamp(-1.0, 1.0) * inv_n);
    }
    (loss * inv_n, dq)
}

/// Row-wise softmax.
pub fn softmax_rows<E: Element>(logits: &Tensor<E>) -> Tensor<E> {
    let (n, c) = logits.dims2();
    let mut out = logits.clone();
    let data = out.data_mut();
    for ni in 0..n {
        let row = &mut data[ni * c..(ni + 1) * c];
        let mut max = row[0];
        for v in row.iter() {
            max = max.maximum(*v);
        }
        let mut sum = E::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean cross-entropy over softmax rows. Returns (loss, dlogits, probs).
pub fn softmax_cross_entropy<E: Element>(
    logits: &Tensor<E>,
    labels: &[usize],
) -> (f64, Tensor<E>, Tensor<E>) {
    let (n, c) = logits.dims2();
    assert_eq!(labels.len(), n);
    let probs = softmax_rows(logits);
    let mut dlogits = probs.clone();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let d = dlogits.data_mut();
    for (ni, &y) in labels.iter().enumerate() {
        let p = probs.data()[ni * c + y].to_f64().max(1e-12);
        loss -= p.ln();
        d[ni * c + y] -= E::ONE;
    }
    for v in d.iter_mut() {
        *v *= E::from_f64(inv_n);
    }
    (loss * inv_n, dlogits, probs)
}

/// 0.5 * sum(x^2): loss and gradient (= x).
pub fn squared_loss<E: Element>(x: &Tensor<E>) -> (f64, Tensor<E>) {
    let loss = 0.5 * x.data().iter().map(|v| v.to_f64().powi(2)).sum::<f64>();
    (loss, x.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_zero_input_gives_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::<f32>::new(1, 4, 3, 1, 1, &mut rng);
        let x = Tensor::zeros(&[2, 1, 8, 8]);
        let y = conv.forward(&x);
        assert_eq!(y.shape(), &[2, 4, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0), "zero bias, zero input");
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 1, 1, &mut rng);
        let x = kaiming_uniform::<f64, _>(&[1, 2, 5, 5], 1, &mut rng);
        let y = conv.forward(&x);
        // naive direct convolution oracle
        for oc in 0..3 {
            for i in 0..5i64 {
                for j in 0..5i64 {
                    let mut acc = conv.b.data()[oc];
                    for c in 0..2 {
                        for ki in 0..3i64 {
                            for kj in 0..3i64 {
                                let (si, sj) = (i + ki - 1, j + kj - 1);
                                if si < 0 || si >= 5 || sj < 0 || sj >= 5 {
                                    continue;
                                }
                                let xv = x.data()[(c * 5 + si as usize) * 5 + sj as usize];
                                let wv = conv.w.data()
                                    [((oc * 2 + c) * 3 + ki as usize) * 3 + kj as usize];
                                acc += xv * wv;
                            }
                        }
                    }
                    let got = y.data()[(oc * 5 + i as usize) * 5 + j as usize];
                    assert!((got - acc).abs() < 1e-12, "mismatch at {oc},{i},{j}");
                }
            }
        }
    }

    #[test]
    fn pool_upsample_pad_round_trip_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = kaiming_uniform::<f32, _>(&[2, 3, 10, 10], 1, &mut rng);
        let mut pool = MaxPool2::new();
        let y = pool.forward(&x);
        assert_eq!(y.shape(), &[2, 3, 5, 5]);
        let up = upsample2(&y);
        assert_eq!(up.shape(), &[2, 3, 10, 10]);
        let padded = pad_to(&x, 16, 16);
        assert_eq!(crop_to(&padded, 10, 10), x);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = kaiming_uniform::<f32, _>(&[7, 13], 1, &mut rng);
        let p = softmax_rows(&x);
        for ni in 0..7 {
            let s: f32 = p.data()[ni * 13..(ni + 1) * 13].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(p.data()[ni * 13..(ni + 1) * 13].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn squared_loss_grad_is_input() {
        let x = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]);
        let (loss, g) = squared_loss(&x);
        assert!((loss - 0.5 * (1.0 + 4.0 + 0.25)).abs() < 1e-12);
        assert_eq!(g, x);
    }

    #[test]
    fn huber_grad_clips_and_targets_only_chosen_pixels() {
        let mut q = Tensor::<f64>::zeros(&[2, 2, 3, 3]);
        q.data_mut()[0] = 5.0; // sample 0, ch 0, (0,0)
        let picks = vec![(0, 0, 0), (1, 2, 2)];
        let targets = vec![0.0, 0.0];
        let (loss, dq) = huber_at_actions(&q, &picks, &targets);
        assert!((loss - (4.5 + 0.0) / 2.0).abs() < 1e-12);
        assert_eq!(dq.data()[0], 0.5); // clipped to 1, / batch 2
        let nonzero = dq.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 1);
    }
}
