//! Differentiable primitives. Each forward has a matching backward that maps
//! the output gradient to input (and parameter) gradients.

use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · bᵀ` where `b` is stored `n×k`.
pub fn matmul_bt_acc<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            let mut s = F::zero();
            for (&x, &y) in ar.iter().zip(br) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out[m×n] += aᵀ · b` where `a` is stored `k×m` and `b` is `k×n`.
pub fn matmul_at_acc<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let br = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == F::zero() {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
}

// ---------------------------------------------------------------- conv2d

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_extent(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

fn conv_dims<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>, stride: usize, padding: usize) -> Result<(ConvGeometry, [usize; 4], usize, usize)> {
    let &[n, cin, h, wd] = x.shape() else {
        return Err(Error::shape("conv2d", format!("input must be (N, C, H, W), got {:?}", x.shape())));
    };
    let &[cout, wcin, kh, kw] = w.shape() else {
        return Err(Error::shape("conv2d", format!("weight must be (Cout, Cin, k, k), got {:?}", w.shape())));
    };
    if wcin != cin {
        return Err(Error::shape("conv2d", format!("input has {cin} channels, weight expects {wcin}")));
    }
    if kh != kw {
        return Err(Error::shape("conv2d", format!("only square kernels are supported, got {kh}x{kw}")));
    }
    if b.shape() != [cout] {
        return Err(Error::shape("conv2d", format!("bias must be ({cout}), got {:?}", b.shape())));
    }
    let geo = ConvGeometry {
        in_channels: cin,
        out_channels: cout,
        kernel: kh,
        stride,
        padding,
    };
    let (Some(ho), Some(wo)) = (geo.out_extent(h), geo.out_extent(wd)) else {
        return Err(Error::shape("conv2d", format!("kernel {kh} does not fit {h}x{wd} with padding {padding}")));
    };
    Ok((geo, [n, cin, h, wd], ho, wo))
}

/// `(Cin·k·k) × (Ho·Wo)` column matrix for one sample.
fn im2col<F: Scalar>(x: &[F], geo: &ConvGeometry, h: usize, w: usize, ho: usize, wo: usize) -> Vec<F> {
    let k = geo.kernel;
    let mut cols = vec![F::zero(); geo.in_channels * k * k * ho * wo];
    for c in 0..geo.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[row + oy * wo + ox] = x[(c * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Scalar>(cols: &[F], geo: &ConvGeometry, h: usize, w: usize, ho: usize, wo: usize) -> Vec<F> {
    let k = geo.kernel;
    let mut x = vec![F::zero(); geo.in_channels * h * w];
    for c in 0..geo.in_channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[(c * h + iy as usize) * w + ix as usize] += cols[row + oy * wo + ox];
                    }
                }
            }
        }
    }
    x
}

/// Cross-correlation of `x (N, Cin, H, W)` with `weight (Cout, Cin, k, k)`.
/// Samples are processed independently, so results do not depend on thread count.
pub fn conv2d<F: Scalar>(x: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>, stride: usize, padding: usize) -> Result<Tensor<F>> {
    let (geo, [n, cin, h, w], ho, wo) = conv_dims(x, weight, bias, stride, padding)?;
    let cout = geo.out_channels;
    let kk = cin * geo.kernel * geo.kernel;
    let in_len = cin * h * w;
    let out_len = cout * ho * wo;
    let mut out = vec![F::zero(); n * out_len];
    out.par_chunks_mut(out_len)
        .zip(x.data().par_chunks(in_len))
        .for_each(|(y, xs)| {
            let cols = im2col(xs, &geo, h, w, ho, wo);
            for (c, plane) in y.chunks_mut(ho * wo).enumerate() {
                plane.fill(bias.data()[c]);
            }
            matmul_acc(weight.data(), &cols, y, cout, kk, ho * wo);
        });
    Tensor::from_vec(&[n, cout, ho, wo], out)
}

pub struct ConvGrads<F> {
    pub dx: Tensor<F>,
    pub dweight: Tensor<F>,
    pub dbias: Tensor<F>,
}

pub fn conv2d_backward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    padding: usize,
    dy: &Tensor<F>,
) -> Result<ConvGrads<F>> {
    let (geo, [n, cin, h, w], ho, wo) = conv_dims(x, weight, bias, stride, padding)?;
    let cout = geo.out_channels;
    if dy.shape() != [n, cout, ho, wo] {
        return Err(Error::shape("conv2d_backward", format!("dy shape {:?} != {:?}", dy.shape(), [n, cout, ho, wo])));
    }
    let kk = cin * geo.kernel * geo.kernel;
    let in_len = cin * h * w;
    let out_len = cout * ho * wo;
    let partials: Vec<(Vec<F>, Vec<F>, Vec<F>)> = x
        .data()
        .par_chunks(in_len)
        .zip(dy.data().par_chunks(out_len))
        .map(|(xs, dys)| {
            let cols = im2col(xs, &geo, h, w, ho, wo);
            let mut dw = vec![F::zero(); cout * kk];
            matmul_bt_acc(dys, &cols, &mut dw, cout, ho * wo, kk);
            let db: Vec<F> = dys.chunks(ho * wo).map(|p| p.iter().copied().sum()).collect();
            let mut dcols = vec![F::zero(); kk * ho * wo];
            matmul_at_acc(weight.data(), dys, &mut dcols, kk, cout, ho * wo);
            (col2im(&dcols, &geo, h, w, ho, wo), dw, db)
        })
        .collect();
    let mut dx = Vec::with_capacity(n * in_len);
    let mut dw = vec![F::zero(); cout * kk];
    let mut db = vec![F::zero(); cout];
    // fixed reduction order keeps the result independent of thread scheduling
    for (px, pw, pb) in partials {
        dx.extend(px);
        for (a, b) in dw.iter_mut().zip(pw) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(pb) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        dx: Tensor::from_vec(x.shape(), dx)?,
        dweight: Tensor::from_vec(weight.shape(), dw)?,
        dbias: Tensor::from_vec(&[cout], db)?,
    })
}

// ---------------------------------------------------------------- linear

fn linear_dims<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<(usize, usize, usize)> {
    let &[out_f, in_f] = w.shape() else {
        return Err(Error::shape("linear", format!("weight must be (out, in), got {:?}", w.shape())));
    };
    let last = *x.shape().last().unwrap_or(&0);
    if last != in_f || x.is_empty() {
        return Err(Error::shape("linear", format!("input last dim {last} != weight in {in_f}")));
    }
    if b.shape() != [out_f] {
        return Err(Error::shape("linear", format!("bias must be ({out_f}), got {:?}", b.shape())));
    }
    Ok((x.len() / in_f, in_f, out_f))
}

/// `y = x Wᵀ + b` over the last axis of `x`.
pub fn linear<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (rows, in_f, out_f) = linear_dims(x, w, b)?;
    let mut out: Vec<F> = (0..rows).flat_map(|_| b.data().iter().copied()).collect();
    matmul_bt_acc(x.data(), w.data(), &mut out, rows, in_f, out_f);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_f;
    Tensor::from_vec(&shape, out)
}

pub struct LinearGrads<F> {
    pub dx: Tensor<F>,
    pub dw: Tensor<F>,
    pub db: Tensor<F>,
}

pub fn linear_backward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>, dy: &Tensor<F>) -> Result<LinearGrads<F>> {
    let (rows, in_f, out_f) = linear_dims(x, w, b)?;
    if dy.len() != rows * out_f {
        return Err(Error::shape("linear_backward", format!("dy has {} values, expected {}", dy.len(), rows * out_f)));
    }
    let mut dx = vec![F::zero(); rows * in_f];
    matmul_acc(dy.data(), w.data(), &mut dx, rows, out_f, in_f);
    let mut dw = vec![F::zero(); out_f * in_f];
    matmul_at_acc(dy.data(), x.data(), &mut dw, out_f, rows, in_f);
    let mut db = vec![F::zero(); out_f];
    for row in dy.data().chunks(out_f) {
        for (a, &g) in db.iter_mut().zip(row) {
            *a += g;
        }
    }
    Ok(LinearGrads {
        dx: Tensor::from_vec(x.shape(), dx)?,
        dw: Tensor::from_vec(w.shape(), dw)?,
        db: Tensor::from_vec(&[out_f], db)?,
    })
}

// ---------------------------------------------------------------- elementwise

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    Tensor::from_fn(x.shape(), |i| x.data()[i].max(F::zero()))
}

/// Feed the ReLU branch taken by each element of `x` into `state`.
pub fn hash_signs<F: Scalar, H: std::hash::Hasher>(x: &Tensor<F>, state: &mut H) {
    for &v in x.data() {
        state.write_u8(u8::from(v > F::zero()));
    }
}

pub fn relu_backward<F: Scalar>(x: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    Tensor::from_fn(x.shape(), |i| if x.data()[i] > F::zero() { dy.data()[i] } else { F::zero() })
}

/// Logistic function, clamped to the open interval `(0, 1)` of representable values.
pub fn sigmoid_scalar<F: Scalar>(v: F) -> F {
    let s = if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    };
    let two = F::one() + F::one();
    s.max(F::min_positive_value()).min(F::one() - F::epsilon() / two)
}

pub fn sigmoid<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    Tensor::from_fn(x.shape(), |i| sigmoid_scalar(x.data()[i]))
}

/// Backward in terms of the forward output `y = sigmoid(x)`.
pub fn sigmoid_backward<F: Scalar>(y: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    Tensor::from_fn(y.shape(), |i| {
        let s = y.data()[i];
        dy.data()[i] * s * (F::one() - s)
    })
}

// ---------------------------------------------------------------- softmax

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape("softmax", format!("axis {axis} out of range for {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub fn softmax<F: Scalar>(x: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    let mut out = x.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).map(|j| d[idx(j)]).fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for j in 0..n {
                let e = (d[idx(j)] - max).exp();
                d[idx(j)] = e;
                sum += e;
            }
            for j in 0..n {
                d[idx(j)] /= sum;
            }
        }
    }
    Ok(out)
}

/// Backward in terms of the forward output `s`.
pub fn softmax_backward<F: Scalar>(s: &Tensor<F>, dy: &Tensor<F>, axis: usize) -> Result<Tensor<F>> {
    let (outer, n, inner) = split_axis(s.shape(), axis)?;
    let mut dx = Tensor::zeros(s.shape());
    let (sd, gd) = (s.data(), dy.data());
    let out = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let dot: F = (0..n).map(|j| sd[idx(j)] * gd[idx(j)]).sum();
            for j in 0..n {
                out[idx(j)] = sd[idx(j)] * (gd[idx(j)] - dot);
            }
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------- layer norm

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Normalized activations and per-row reciprocal standard deviations, kept for backward.
#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    pub xhat: Tensor<F>,
    pub rstd: Vec<F>,
}

/// Normalize over the last axis, then `gain · x̂ + bias`.
pub fn layer_norm<F: Scalar>(x: &Tensor<F>, gain: &Tensor<F>, bias: &Tensor<F>) -> Result<(Tensor<F>, LayerNormCache<F>)> {
    let d = *x.shape().last().unwrap_or(&0);
    if d == 0 || gain.shape() != [d] || bias.shape() != [d] {
        return Err(Error::shape("layer_norm", format!("input {:?}, gain {:?}, bias {:?}", x.shape(), gain.shape(), bias.shape())));
    }
    let eps = F::of(LAYER_NORM_EPS);
    let nf = F::of(d as f64);
    let mut xhat = x.clone();
    let mut y = x.clone();
    let mut rstd = Vec::with_capacity(x.len() / d);
    for (row, (hrow, yrow)) in x
        .data()
        .chunks(d)
        .zip(xhat.data_mut().chunks_mut(d).zip(y.data_mut().chunks_mut(d)))
    {
        let mean = row.iter().copied().sum::<F>() / nf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nf;
        let r = F::one() / (var + eps).sqrt();
        rstd.push(r);
        for j in 0..d {
            hrow[j] = (row[j] - mean) * r;
            yrow[j] = hrow[j] * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((y, LayerNormCache { xhat, rstd }))
}

pub struct LayerNormGrads<F> {
    pub dx: Tensor<F>,
    pub dgain: Tensor<F>,
    pub dbias: Tensor<F>,
}

pub fn layer_norm_backward<F: Scalar>(cache: &LayerNormCache<F>, gain: &Tensor<F>, dy: &Tensor<F>) -> LayerNormGrads<F> {
    let d = gain.len();
    let nf = F::of(d as f64);
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgain = Tensor::zeros(&[d]);
    let mut dbias = Tensor::zeros(&[d]);
    for (r, ((hrow, grow), dxrow)) in cache.rstd.iter().zip(
        cache
            .xhat
            .data()
            .chunks(d)
            .zip(dy.data().chunks(d))
            .zip(dx.data_mut().chunks_mut(d)),
    ) {
        let mut sum_g = F::zero();
        let mut sum_gx = F::zero();
        for j in 0..d {
            let g = grow[j] * gain.data()[j];
            sum_g += g;
            sum_gx += g * hrow[j];
            dgain.data_mut()[j] += grow[j] * hrow[j];
            dbias.data_mut()[j] += grow[j];
        }
        for j in 0..d {
            let g = grow[j] * gain.data()[j];
            dxrow[j] = *r / nf * (nf * g - sum_g - hrow[j] * sum_gx);
        }
    }
    LayerNormGrads { dx, dgain, dbias }
}

// ---------------------------------------------------------------- mean

fn reduce_plan(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<bool>)> {
    let mut reduced = vec![false; shape.len()];
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::shape("mean", format!("axis {a} out of range for {shape:?}")));
        }
        reduced[a] = true;
    }
    let out: Vec<usize> = shape
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| !r)
        .map(|(&s, _)| s)
        .collect();
    Ok((out, reduced))
}

fn out_index(mut flat: usize, shape: &[usize], reduced: &[bool]) -> usize {
    let mut idx = 0;
    let mut mul = 1;
    for (d, &s) in shape.iter().enumerate().rev() {
        let coord = flat % s;
        flat /= s;
        if !reduced[d] {
            idx += coord * mul;
            mul *= s;
        }
    }
    idx
}

/// Mean over `axes` (removed from the output shape). Reducing every axis yields shape `[]`.
pub fn mean<F: Scalar>(x: &Tensor<F>, axes: &[usize]) -> Result<Tensor<F>> {
    let (out_shape, reduced) = reduce_plan(x.shape(), axes)?;
    let count: usize = x.shape().iter().zip(&reduced).filter(|(_, &r)| r).map(|(&s, _)| s).product();
    let mut out = Tensor::zeros(&out_shape);
    for (i, &v) in x.data().iter().enumerate() {
        out.data_mut()[out_index(i, x.shape(), &reduced)] += v;
    }
    let inv = F::one() / F::of(count.max(1) as f64);
    for v in out.data_mut() {
        *v *= inv;
    }
    Ok(out)
}

pub fn mean_backward<F: Scalar>(input_shape: &[usize], axes: &[usize], dy: &Tensor<F>) -> Result<Tensor<F>> {
    let (out_shape, reduced) = reduce_plan(input_shape, axes)?;
    if dy.shape() != out_shape.as_slice() {
        return Err(Error::shape("mean_backward", format!("dy {:?} != {:?}", dy.shape(), out_shape)));
    }
    let count: usize = input_shape.iter().zip(&reduced).filter(|(_, &r)| r).map(|(&s, _)| s).product();
    let inv = F::one() / F::of(count.max(1) as f64);
    Ok(Tensor::from_fn(input_shape, |i| dy.data()[out_index(i, input_shape, &reduced)] * inv))
}

// ---------------------------------------------------------------- adaptive average pool

pub(crate) fn pool_range(i: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let start = i * n_in / n_out;
    let end = ((i + 1) * n_in).div_ceil(n_out);
    (start, end.max(start + 1))
}

/// Adaptive average pool of `(N, H, W)` maps to `(N, p, q)`; bins follow the
/// floor/ceil rule so output extents larger than the input are allowed.
pub fn adaptive_avg_pool<F: Scalar>(x: &Tensor<F>, p: usize, q: usize) -> Result<Tensor<F>> {
    let &[n, h, w] = x.shape() else {
        return Err(Error::shape("adaptive_avg_pool", format!("input must be (N, H, W), got {:?}", x.shape())));
    };
    let mut out = Tensor::zeros(&[n, p, q]);
    for s in 0..n {
        let src = &x.data()[s * h * w..(s + 1) * h * w];
        for i in 0..p {
            let (y0, y1) = pool_range(i, h, p);
            for j in 0..q {
                let (x0, x1) = pool_range(j, w, q);
                let mut acc = F::zero();
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc += src[y * w + xx];
                    }
                }
                out.data_mut()[(s * p + i) * q + j] = acc / F::of(((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Ok(out)
}

pub fn adaptive_avg_pool_backward<F: Scalar>(input_shape: &[usize], dy: &Tensor<F>) -> Result<Tensor<F>> {
    let &[n, h, w] = input_shape else {
        return Err(Error::shape("adaptive_avg_pool_backward", format!("bad input shape {input_shape:?}")));
    };
    let &[dn, p, q] = dy.shape() else {
        return Err(Error::shape("adaptive_avg_pool_backward", format!("bad dy shape {:?}", dy.shape())));
    };
    if dn != n {
        return Err(Error::shape("adaptive_avg_pool_backward", "batch mismatch"));
    }
    let mut dx = Tensor::zeros(input_shape);
    for s in 0..n {
        for i in 0..p {
            let (y0, y1) = pool_range(i, h, p);
            for j in 0..q {
                let (x0, x1) = pool_range(j, w, q);
                let g = dy.data()[(s * p + i) * q + j] / F::of(((y1 - y0) * (x1 - x0)) as f64);
                for y in y0..y1 {
                    for xx in x0..x1 {
                        dx.data_mut()[(s * h + y) * w + xx] += g;
                    }
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_conv() {
        let x = Tensor::from_fn(&[2, 1, 3, 4], |i| i as f64 * 0.1);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d(&x, &w, &b, 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_kernel_counts_nine() {
        let x = Tensor::full(&[1, 1, 5, 5], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn conv_output_extent_formula() {
        let x = Tensor::<f32>::zeros(&[1, 3, 45, 80]);
        let w = Tensor::zeros(&[16, 3, 3, 3]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[16]), 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 16, 23, 40]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0).is_err());
    }

    #[test]
    fn sigmoid_and_softmax_basics() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        let s = softmax(&Tensor::full(&[2, 4], 3.0f64), 1).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let big = sigmoid(&Tensor::from_vec(&[2], vec![40.0f64, -40.0]).unwrap());
        assert!(big.data()[0] < 1.0 && big.data()[1] > 0.0);
    }

    #[test]
    fn mean_of_ones_is_one() {
        let x = Tensor::full(&[2, 3, 4], 1.0f64);
        let m = mean(&x, &[0, 1, 2]).unwrap();
        assert_eq!(m.shape(), &[] as &[usize]);
        assert_eq!(m.data(), &[1.0]);
        let m = mean(&Tensor::from_fn(&[2, 3], |i| i as f64), &[1]).unwrap();
        assert_eq!(m.data(), &[1.0, 4.0]);
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let x = Tensor::from_fn(&[3, 8], |i| ((i * 37) % 11) as f64 - 4.0);
        let (_, cache) = layer_norm(&x, &Tensor::full(&[8], 1.0), &Tensor::zeros(&[8])).unwrap();
        for row in cache.xhat.data().chunks(8) {
            let m: f64 = row.iter().sum::<f64>() / 8.0;
            let v: f64 = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn adaptive_pool_identity_and_upsample() {
        let x = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
        assert_eq!(adaptive_avg_pool(&x, 4, 4).unwrap(), x);
        let y = adaptive_avg_pool(&Tensor::from_fn(&[1, 2, 2], |i| i as f64), 4, 4).unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[15], 3.0);
        let m = adaptive_avg_pool(&x, 1, 1).unwrap();
        assert_eq!(m.data(), &[7.5]);
    }
}
