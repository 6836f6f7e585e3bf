//! Primitive tensor operations: shape rules, forward kernels, and the
//! matching backward rules used by the tape.
//!
//! Conv and linear layers run through im2col + the shared matmul kernel;
//! everything else is a direct loop. Each kernel touches elements in a fixed
//! order, so forward and backward are bit-reproducible.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Loss reduction for softmax cross-entropy.
///
/// `Sum` keeps per-image gradients independent of batch size (the attack
/// path); `Mean` is the training convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// A primitive operation plus its attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum OpSpec {
    /// inputs: x (N,F_in), w (F_out,F_in), b (F_out) → (N,F_out)
    Linear,
    /// inputs: x (N,C_in,H,W), w (C_out,C_in/groups,kh,kw), b (C_out)
    Conv2d { stride: usize, pad: usize, groups: usize },
    /// Grouped conv with groups = C_in; w (C_out,1,kh,kw), C_out a multiple of C_in.
    DepthwiseConv2d { stride: usize, pad: usize },
    Relu,
    Gelu,
    MaxPool2d { k: usize, stride: usize },
    AvgPool2d { k: usize, stride: usize },
    /// (N,C,H,W) → (N,C)
    GlobalAvgPool,
    /// Normalize over the channel axis at every spatial position.
    /// inputs: x (N,C,H,W) or (N,C), gamma (C), beta (C)
    ChannelLayerNorm,
    /// inputs: a, b of identical shape → a + b
    Add,
    /// inputs: two or more (N,C_i,H,W) → (N,ΣC_i,H,W)
    ConcatChannels,
    ChannelShuffle { groups: usize },
    /// (N, d1, d2, ...) → (N, d1·d2·...)
    Flatten,
    /// inputs: logits (N,K); scalar loss against ground-truth labels
    SoftmaxCrossEntropy { labels: Vec<usize>, reduction: Reduction },
    /// Scalar sum of all elements.
    Sum,
}

impl OpSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OpSpec::Linear => "linear",
            OpSpec::Conv2d { .. } => "conv2d",
            OpSpec::DepthwiseConv2d { .. } => "depthwise-conv2d",
            OpSpec::Relu => "relu",
            OpSpec::Gelu => "gelu",
            OpSpec::MaxPool2d { .. } => "maxpool2d",
            OpSpec::AvgPool2d { .. } => "avgpool2d",
            OpSpec::GlobalAvgPool => "global-avg-pool",
            OpSpec::ChannelLayerNorm => "channel-layer-norm",
            OpSpec::Add => "add",
            OpSpec::ConcatChannels => "concat-channels",
            OpSpec::ChannelShuffle { .. } => "channel-shuffle",
            OpSpec::Flatten => "flatten",
            OpSpec::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
            OpSpec::Sum => "sum",
        }
    }
}

/// Saved forward context consumed by the backward rule.
#[derive(Clone, Debug)]
pub enum OpCtx {
    None,
    MaxPool { argmax: Vec<u32> },
    SoftmaxCe { probs: Tensor },
    LayerNorm { mean: Vec<f32>, inv_std: Vec<f32> },
}

const LN_EPS: f32 = 1e-5;

fn shape_err(op: &OpSpec, detail: alloc::string::String) -> Error {
    Error::ShapeMismatch { op: op.name(), detail }
}

fn arity(op: &OpSpec, inputs: &[&Tensor], want: usize) -> Result<()> {
    if inputs.len() != want {
        return Err(Error::InvalidArg {
            op: op.name(),
            detail: format!("expected {want} inputs, got {}", inputs.len()),
        });
    }
    Ok(())
}

/// Evaluate without recording. Equivalent to the tape path.
pub fn eval(op: &OpSpec, inputs: &[&Tensor]) -> Result<Tensor> {
    eval_ctx(op, inputs).map(|(t, _)| t)
}

pub(crate) fn eval_ctx(op: &OpSpec, inputs: &[&Tensor]) -> Result<(Tensor, OpCtx)> {
    match op {
        OpSpec::Linear => {
            arity(op, inputs, 3)?;
            linear_forward(op, inputs[0], inputs[1], inputs[2])
        }
        OpSpec::Conv2d { stride, pad, groups } => {
            arity(op, inputs, 3)?;
            conv_forward(op, inputs[0], inputs[1], inputs[2], *stride, *pad, *groups)
        }
        OpSpec::DepthwiseConv2d { stride, pad } => {
            arity(op, inputs, 3)?;
            let groups = *inputs[0].shape().get(1).unwrap_or(&0);
            conv_forward(op, inputs[0], inputs[1], inputs[2], *stride, *pad, groups)
        }
        OpSpec::Relu => {
            arity(op, inputs, 1)?;
            Ok((inputs[0].map(|v| math::max(v, 0.0)), OpCtx::None))
        }
        OpSpec::Gelu => {
            arity(op, inputs, 1)?;
            Ok((inputs[0].map(math::gelu), OpCtx::None))
        }
        OpSpec::MaxPool2d { k, stride } => {
            arity(op, inputs, 1)?;
            maxpool_forward(op, inputs[0], *k, *stride)
        }
        OpSpec::AvgPool2d { k, stride } => {
            arity(op, inputs, 1)?;
            avgpool_forward(op, inputs[0], *k, *stride)
        }
        OpSpec::GlobalAvgPool => {
            arity(op, inputs, 1)?;
            global_avg_forward(op, inputs[0])
        }
        OpSpec::ChannelLayerNorm => {
            arity(op, inputs, 3)?;
            layernorm_forward(op, inputs[0], inputs[1], inputs[2])
        }
        OpSpec::Add => {
            arity(op, inputs, 2)?;
            let out = inputs[0].zip_map(inputs[1], op.name(), |a, b| a + b)?;
            Ok((out, OpCtx::None))
        }
        OpSpec::ConcatChannels => concat_forward(op, inputs),
        OpSpec::ChannelShuffle { groups } => {
            arity(op, inputs, 1)?;
            shuffle_forward(op, inputs[0], *groups)
        }
        OpSpec::Flatten => {
            arity(op, inputs, 1)?;
            let s = inputs[0].shape();
            if s.len() < 2 {
                return Err(shape_err(op, format!("need rank ≥ 2, got {s:?}")));
            }
            let n = s[0];
            let rest: usize = s[1..].iter().product();
            Ok((inputs[0].reshaped(vec![n, rest])?, OpCtx::None))
        }
        OpSpec::SoftmaxCrossEntropy { labels, reduction } => {
            arity(op, inputs, 1)?;
            softmax_ce_forward(op, inputs[0], labels, *reduction)
        }
        OpSpec::Sum => {
            arity(op, inputs, 1)?;
            let total: f32 = inputs[0].data().iter().sum();
            Ok((Tensor::scalar(total), OpCtx::None))
        }
    }
}

/// Gradients with respect to each input, given the output cotangent.
pub(crate) fn backward(
    op: &OpSpec,
    inputs: &[&Tensor],
    ctx: &OpCtx,
    grad_out: &Tensor,
) -> Result<Vec<Option<Tensor>>> {
    match op {
        OpSpec::Linear => linear_backward(inputs[0], inputs[1], grad_out),
        OpSpec::Conv2d { stride, pad, groups } => {
            conv_backward(inputs[0], inputs[1], grad_out, *stride, *pad, *groups)
        }
        OpSpec::DepthwiseConv2d { stride, pad } => {
            let groups = inputs[0].shape()[1];
            conv_backward(inputs[0], inputs[1], grad_out, *stride, *pad, groups)
        }
        OpSpec::Relu => {
            let g = inputs[0].zip_map(grad_out, "relu-backward", |x, dy| if x > 0.0 { dy } else { 0.0 })?;
            Ok(vec![Some(g)])
        }
        OpSpec::Gelu => {
            let g = inputs[0].zip_map(grad_out, "gelu-backward", |x, dy| math::gelu_grad(x) * dy)?;
            Ok(vec![Some(g)])
        }
        OpSpec::MaxPool2d { .. } => {
            let OpCtx::MaxPool { argmax } = ctx else { unreachable!() };
            let mut dx = Tensor::zeros(inputs[0].shape());
            let dxd = dx.data_mut();
            for (i, &dy) in grad_out.data().iter().enumerate() {
                dxd[argmax[i] as usize] += dy;
            }
            Ok(vec![Some(dx)])
        }
        OpSpec::AvgPool2d { k, stride } => avgpool_backward(inputs[0], grad_out, *k, *stride),
        OpSpec::GlobalAvgPool => {
            let s = inputs[0].shape();
            let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
            let inv = 1.0 / (h * w) as f32;
            let mut dx = Tensor::zeros(s);
            let dxd = dx.data_mut();
            let dy = grad_out.data();
            for i in 0..n * c {
                let g = dy[i] * inv;
                for j in 0..h * w {
                    dxd[i * h * w + j] = g;
                }
            }
            Ok(vec![Some(dx)])
        }
        OpSpec::ChannelLayerNorm => {
            let OpCtx::LayerNorm { mean, inv_std } = ctx else { unreachable!() };
            layernorm_backward(inputs[0], inputs[1], mean, inv_std, grad_out)
        }
        OpSpec::Add => Ok(vec![Some(grad_out.clone()), Some(grad_out.clone())]),
        OpSpec::ConcatChannels => concat_backward(inputs, grad_out),
        OpSpec::ChannelShuffle { groups } => shuffle_backward(inputs[0], grad_out, *groups),
        OpSpec::Flatten => Ok(vec![Some(grad_out.reshaped(inputs[0].shape().to_vec())?)]),
        OpSpec::SoftmaxCrossEntropy { labels, reduction } => {
            let OpCtx::SoftmaxCe { probs } = ctx else { unreachable!() };
            softmax_ce_backward(probs, labels, *reduction, grad_out)
        }
        OpSpec::Sum => {
            let g = grad_out.item()?;
            Ok(vec![Some(Tensor::full(inputs[0].shape(), g))])
        }
    }
}

// ---- linear ----------------------------------------------------------------

fn linear_forward(op: &OpSpec, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(Tensor, OpCtx)> {
    let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
    if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[1] || ws[0] != bs[0] {
        return Err(shape_err(op, format!("x {xs:?}, w {ws:?}, b {bs:?}")));
    }
    let (n, f_in, f_out) = (xs[0], xs[1], ws[0]);
    let mut out = vec![0.0f32; n * f_out];
    math::matmul_bt(x.data(), w.data(), n, f_in, f_out, &mut out);
    for row in out.chunks_exact_mut(f_out) {
        for (o, &bi) in row.iter_mut().zip(b.data().iter()) {
            *o += bi;
        }
    }
    Ok((Tensor::new(vec![n, f_out], out)?, OpCtx::None))
}

fn linear_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<Vec<Option<Tensor>>> {
    let (n, f_in) = (x.shape()[0], x.shape()[1]);
    let f_out = w.shape()[0];
    // dx = dy · w
    let mut dx = vec![0.0f32; n * f_in];
    math::matmul(grad_out.data(), w.data(), n, f_out, f_in, &mut dx);
    // dw = dyᵀ · x
    let mut dw = vec![0.0f32; f_out * f_in];
    math::matmul_at(grad_out.data(), x.data(), f_out, n, f_in, &mut dw);
    // db = column sums of dy
    let mut db = vec![0.0f32; f_out];
    for row in grad_out.data().chunks_exact(f_out) {
        for (d, &g) in db.iter_mut().zip(row.iter()) {
            *d += g;
        }
    }
    Ok(vec![
        Some(Tensor::new(vec![n, f_in], dx)?),
        Some(Tensor::new(vec![f_out, f_in], dw)?),
        Some(Tensor::new(vec![f_out], db)?),
    ])
}

// ---- conv2d ----------------------------------------------------------------

struct ConvDims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    groups: usize,
    cg_in: usize,
    cg_out: usize,
}

fn conv_dims(
    op: &OpSpec,
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<ConvDims> {
    let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
    if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
        return Err(shape_err(op, format!("x {xs:?}, w {ws:?}, b {bs:?}")));
    }
    let (n, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(Error::InvalidArg {
            op: op.name(),
            detail: format!("groups {groups} does not divide channels (in {c_in}, out {c_out})"),
        });
    }
    if wc != c_in / groups || bs[0] != c_out {
        return Err(shape_err(
            op,
            format!("w {ws:?} incompatible with x {xs:?} at groups {groups}; b {bs:?}"),
        ));
    }
    if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(shape_err(
            op,
            format!("kernel {kh}x{kw} stride {stride} pad {pad} too large for input {h}x{wd}"),
        ));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    Ok(ConvDims {
        n,
        c_in,
        h,
        w: wd,
        c_out,
        kh,
        kw,
        ho,
        wo,
        groups,
        cg_in: c_in / groups,
        cg_out: c_out / groups,
    })
}

/// Unfold channels [c0, c0+cg) of one image into a (cg·kh·kw, ho·wo) matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(
    img: &[f32],
    c0: usize,
    cg: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [f32],
) {
    debug_assert_eq!(col.len(), cg * kh * kw * ho * wo);
    let mut r = 0usize;
    for c in c0..c0 + cg {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut col[r * ho * wo..(r + 1) * ho * wo];
                r += 1;
                let mut idx = 0usize;
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        row[idx..idx + wo].fill(0.0);
                        idx += wo;
                        continue;
                    }
                    let base = ih as usize * w;
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        row[idx] = if iw < 0 || iw >= w as isize {
                            0.0
                        } else {
                            plane[base + iw as usize]
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add the column gradient back onto channels [c0, c0+cg).
#[allow(clippy::too_many_arguments)]
fn col2im_acc(
    dcol: &[f32],
    c0: usize,
    cg: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dimg: &mut [f32],
) {
    let mut r = 0usize;
    for c in c0..c0 + cg {
        let plane = &mut dimg[c * h * w..(c + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &dcol[r * ho * wo..(r + 1) * ho * wo];
                r += 1;
                let mut idx = 0usize;
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        idx += wo;
                        continue;
                    }
                    let base = ih as usize * w;
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            plane[base + iw as usize] += row[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

fn conv_forward(
    op: &OpSpec,
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<(Tensor, OpCtx)> {
    let d = conv_dims(op, x, w, b, stride, pad, groups)?;
    let row = d.cg_in * d.kh * d.kw;
    let area = d.ho * d.wo;
    let mut col = vec![0.0f32; row * area];
    let mut out = vec![0.0f32; d.n * d.c_out * area];
    for img in 0..d.n {
        let xin = &x.data()[img * d.c_in * d.h * d.w..(img + 1) * d.c_in * d.h * d.w];
        for g in 0..d.groups {
            im2col(xin, g * d.cg_in, d.cg_in, d.h, d.w, d.kh, d.kw, stride, pad, d.ho, d.wo, &mut col);
            let wg = &w.data()[g * d.cg_out * row..(g + 1) * d.cg_out * row];
            let og = &mut out[img * d.c_out * area + g * d.cg_out * area
                ..img * d.c_out * area + (g + 1) * d.cg_out * area];
            math::matmul(wg, &col, d.cg_out, row, area, og);
            for (co, chunk) in og.chunks_exact_mut(area).enumerate() {
                let bias = b.data()[g * d.cg_out + co];
                for v in chunk.iter_mut() {
                    *v += bias;
                }
            }
        }
    }
    Ok((Tensor::new(vec![d.n, d.c_out, d.ho, d.wo], out)?, OpCtx::None))
}

fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Vec<Option<Tensor>>> {
    let op = OpSpec::Conv2d { stride, pad, groups };
    let bias = Tensor::zeros(&[w.shape()[0]]);
    let d = conv_dims(&op, x, w, &bias, stride, pad, groups)?;
    let row = d.cg_in * d.kh * d.kw;
    let area = d.ho * d.wo;
    let mut col = vec![0.0f32; row * area];
    let mut dcol = vec![0.0f32; row * area];
    let mut dx = vec![0.0f32; x.len()];
    let mut dw = vec![0.0f32; w.len()];
    let mut db = vec![0.0f32; d.c_out];
    for img in 0..d.n {
        let xin = &x.data()[img * d.c_in * d.h * d.w..(img + 1) * d.c_in * d.h * d.w];
        let dximg = &mut dx[img * d.c_in * d.h * d.w..(img + 1) * d.c_in * d.h * d.w];
        for g in 0..d.groups {
            let dy = &grad_out.data()[img * d.c_out * area + g * d.cg_out * area
                ..img * d.c_out * area + (g + 1) * d.cg_out * area];
            // bias: sum over spatial positions
            for (co, chunk) in dy.chunks_exact(area).enumerate() {
                db[g * d.cg_out + co] += chunk.iter().sum::<f32>();
            }
            // weights: dw_g += dy_g · colᵀ
            im2col(xin, g * d.cg_in, d.cg_in, d.h, d.w, d.kh, d.kw, stride, pad, d.ho, d.wo, &mut col);
            let dwg = &mut dw[g * d.cg_out * row..(g + 1) * d.cg_out * row];
            let mut dwg_tmp = vec![0.0f32; d.cg_out * row];
            math::matmul_bt(dy, &col, d.cg_out, area, row, &mut dwg_tmp);
            for (a, &v) in dwg.iter_mut().zip(dwg_tmp.iter()) {
                *a += v;
            }
            // input: dcol = w_gᵀ · dy_g, scattered back
            let wg = &w.data()[g * d.cg_out * row..(g + 1) * d.cg_out * row];
            math::matmul_at(wg, dy, row, d.cg_out, area, &mut dcol);
            col2im_acc(&dcol, g * d.cg_in, d.cg_in, d.h, d.w, d.kh, d.kw, stride, pad, d.ho, d.wo, dximg);
        }
    }
    Ok(vec![
        Some(Tensor::new(x.shape().to_vec(), dx)?),
        Some(Tensor::new(w.shape().to_vec(), dw)?),
        Some(Tensor::new(vec![d.c_out], db)?),
    ])
}

// ---- pooling ---------------------------------------------------------------

fn pool_dims(op: &OpSpec, x: &Tensor, k: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(shape_err(op, format!("need (N,C,H,W), got {s:?}")));
    }
    if k == 0 || stride == 0 || s[2] < k || s[3] < k {
        return Err(shape_err(op, format!("window {k} stride {stride} on input {s:?}")));
    }
    let ho = (s[2] - k) / stride + 1;
    let wo = (s[3] - k) / stride + 1;
    Ok((s[0], s[1], s[2], s[3], ho, wo))
}

fn maxpool_forward(op: &OpSpec, x: &Tensor, k: usize, stride: usize) -> Result<(Tensor, OpCtx)> {
    let (n, c, h, w, ho, wo) = pool_dims(op, x, k, stride)?;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = f32::NEG_INFINITY;
                let mut best_at = 0usize;
                for ki in 0..k {
                    for kj in 0..k {
                        let at = base + (oh * stride + ki) * w + ow * stride + kj;
                        if xd[at] > best {
                            best = xd[at];
                            best_at = at;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_at as u32);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, OpCtx::MaxPool { argmax }))
}

fn avgpool_forward(op: &OpSpec, x: &Tensor, k: usize, stride: usize) -> Result<(Tensor, OpCtx)> {
    let (n, c, h, w, ho, wo) = pool_dims(op, x, k, stride)?;
    let inv = 1.0 / (k * k) as f32;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let xd = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = 0.0f32;
                for ki in 0..k {
                    for kj in 0..k {
                        acc += xd[base + (oh * stride + ki) * w + ow * stride + kj];
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, OpCtx::None))
}

fn avgpool_backward(x: &Tensor, grad_out: &Tensor, k: usize, stride: usize) -> Result<Vec<Option<Tensor>>> {
    let op = OpSpec::AvgPool2d { k, stride };
    let (n, c, h, w, ho, wo) = pool_dims(&op, x, k, stride)?;
    let inv = 1.0 / (k * k) as f32;
    let mut dx = Tensor::zeros(x.shape());
    let dxd = dx.data_mut();
    let dy = grad_out.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let g = dy[plane * ho * wo + oh * wo + ow] * inv;
                for ki in 0..k {
                    for kj in 0..k {
                        dxd[base + (oh * stride + ki) * w + ow * stride + kj] += g;
                    }
                }
            }
        }
    }
    Ok(vec![Some(dx)])
}

fn global_avg_forward(op: &OpSpec, x: &Tensor) -> Result<(Tensor, OpCtx)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(shape_err(op, format!("need (N,C,H,W), got {s:?}")));
    }
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let inv = 1.0 / hw as f32;
    let mut out = Vec::with_capacity(n * c);
    for plane in x.data().chunks_exact(hw) {
        out.push(plane.iter().sum::<f32>() * inv);
    }
    Ok((Tensor::new(vec![n, c], out)?, OpCtx::None))
}

// ---- channel layer norm ------------------------------------------------------

fn layernorm_forward(op: &OpSpec, x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, OpCtx)> {
    let s = x.shape();
    let (c, hw) = match s.len() {
        4 => (s[1], s[2] * s[3]),
        2 => (s[1], 1),
        _ => return Err(shape_err(op, format!("need (N,C,H,W) or (N,C), got {s:?}"))),
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(
            op,
            format!("gamma {:?} / beta {:?} vs {c} channels", gamma.shape(), beta.shape()),
        ));
    }
    let n = s[0];
    let positions = n * hw;
    let mut mean = Vec::with_capacity(positions);
    let mut inv_std = Vec::with_capacity(positions);
    let mut out = vec![0.0f32; x.len()];
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());
    let inv_c = 1.0 / c as f32;
    for img in 0..n {
        for p in 0..hw {
            let mut mu = 0.0f32;
            for ch in 0..c {
                mu += xd[(img * c + ch) * hw + p];
            }
            mu *= inv_c;
            let mut var = 0.0f32;
            for ch in 0..c {
                let d = xd[(img * c + ch) * hw + p] - mu;
                var += d * d;
            }
            var *= inv_c;
            let inv = 1.0 / math::sqrt(var + LN_EPS);
            mean.push(mu);
            inv_std.push(inv);
            for ch in 0..c {
                let at = (img * c + ch) * hw + p;
                out[at] = gd[ch] * (xd[at] - mu) * inv + bd[ch];
            }
        }
    }
    Ok((Tensor::new(s.to_vec(), out)?, OpCtx::LayerNorm { mean, inv_std }))
}

fn layernorm_backward(
    x: &Tensor,
    gamma: &Tensor,
    mean: &[f32],
    inv_std: &[f32],
    grad_out: &Tensor,
) -> Result<Vec<Option<Tensor>>> {
    let s = x.shape();
    let (c, hw) = match s.len() {
        4 => (s[1], s[2] * s[3]),
        _ => (s[1], 1),
    };
    let n = s[0];
    let xd = x.data();
    let gd = gamma.data();
    let dy = grad_out.data();
    let mut dx = vec![0.0f32; x.len()];
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    let inv_c = 1.0 / c as f32;
    for img in 0..n {
        for p in 0..hw {
            let pos = img * hw + p;
            let (mu, inv) = (mean[pos], inv_std[pos]);
            // xhat_c = (x - mu) * inv; dxhat_c = dy_c * gamma_c
            let mut sum_dxhat = 0.0f32;
            let mut sum_dxhat_xhat = 0.0f32;
            for ch in 0..c {
                let at = (img * c + ch) * hw + p;
                let xhat = (xd[at] - mu) * inv;
                let dxhat = dy[at] * gd[ch];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                dgamma[ch] += dy[at] * xhat;
                dbeta[ch] += dy[at];
            }
            for ch in 0..c {
                let at = (img * c + ch) * hw + p;
                let xhat = (xd[at] - mu) * inv;
                let dxhat = dy[at] * gd[ch];
                dx[at] = inv * (dxhat - inv_c * sum_dxhat - xhat * inv_c * sum_dxhat_xhat);
            }
        }
    }
    Ok(vec![
        Some(Tensor::new(s.to_vec(), dx)?),
        Some(Tensor::new(vec![c], dgamma)?),
        Some(Tensor::new(vec![c], dbeta)?),
    ])
}

// ---- concat / shuffle --------------------------------------------------------

fn concat_forward(op: &OpSpec, inputs: &[&Tensor]) -> Result<(Tensor, OpCtx)> {
    if inputs.len() < 2 {
        return Err(Error::InvalidArg {
            op: op.name(),
            detail: format!("need at least 2 inputs, got {}", inputs.len()),
        });
    }
    let first = inputs[0].shape();
    if first.len() != 4 {
        return Err(shape_err(op, format!("need (N,C,H,W), got {first:?}")));
    }
    let (n, h, w) = (first[0], first[2], first[3]);
    let mut c_total = 0usize;
    for t in inputs {
        let s = t.shape();
        if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
            return Err(shape_err(op, format!("{first:?} vs {s:?}")));
        }
        c_total += s[1];
    }
    let area = h * w;
    let mut out = vec![0.0f32; n * c_total * area];
    for img in 0..n {
        let mut c_off = 0usize;
        for t in inputs {
            let ci = t.shape()[1];
            let src = &t.data()[img * ci * area..(img + 1) * ci * area];
            out[(img * c_total + c_off) * area..(img * c_total + c_off + ci) * area]
                .copy_from_slice(src);
            c_off += ci;
        }
    }
    Ok((Tensor::new(vec![n, c_total, h, w], out)?, OpCtx::None))
}

fn concat_backward(inputs: &[&Tensor], grad_out: &Tensor) -> Result<Vec<Option<Tensor>>> {
    let first = inputs[0].shape();
    let (n, h, w) = (first[0], first[2], first[3]);
    let area = h * w;
    let c_total: usize = inputs.iter().map(|t| t.shape()[1]).sum();
    let dy = grad_out.data();
    let mut grads = Vec::with_capacity(inputs.len());
    let mut c_off = 0usize;
    for t in inputs {
        let ci = t.shape()[1];
        let mut d = vec![0.0f32; n * ci * area];
        for img in 0..n {
            let src = &dy[(img * c_total + c_off) * area..(img * c_total + c_off + ci) * area];
            d[img * ci * area..(img + 1) * ci * area].copy_from_slice(src);
        }
        c_off += ci;
        grads.push(Some(Tensor::new(t.shape().to_vec(), d)?));
    }
    Ok(grads)
}

fn shuffle_forward(op: &OpSpec, x: &Tensor, groups: usize) -> Result<(Tensor, OpCtx)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(shape_err(op, format!("need (N,C,H,W), got {s:?}")));
    }
    let c = s[1];
    if groups == 0 || c % groups != 0 {
        return Err(Error::InvalidArg {
            op: op.name(),
            detail: format!("groups {groups} does not divide {c} channels"),
        });
    }
    let per = c / groups;
    let (n, area) = (s[0], s[2] * s[3]);
    let mut out = vec![0.0f32; x.len()];
    let xd = x.data();
    // view C as (groups, per), transpose: out[b*groups + a] = in[a*per + b]
    for img in 0..n {
        for a in 0..groups {
            for b in 0..per {
                let src = (img * c + a * per + b) * area;
                let dst = (img * c + b * groups + a) * area;
                out[dst..dst + area].copy_from_slice(&xd[src..src + area]);
            }
        }
    }
    Ok((Tensor::new(s.to_vec(), out)?, OpCtx::None))
}

fn shuffle_backward(x: &Tensor, grad_out: &Tensor, groups: usize) -> Result<Vec<Option<Tensor>>> {
    let s = x.shape();
    let c = s[1];
    let per = c / groups;
    let (n, area) = (s[0], s[2] * s[3]);
    let mut dx = vec![0.0f32; x.len()];
    let dy = grad_out.data();
    for img in 0..n {
        for a in 0..groups {
            for b in 0..per {
                let src = (img * c + a * per + b) * area;
                let dst = (img * c + b * groups + a) * area;
                dx[src..src + area].copy_from_slice(&dy[dst..dst + area]);
            }
        }
    }
    Ok(vec![Some(Tensor::new(s.to_vec(), dx)?)])
}

// ---- softmax cross-entropy -----------------------------------------------------

fn softmax_ce_forward(
    op: &OpSpec,
    logits: &Tensor,
    labels: &[usize],
    reduction: Reduction,
) -> Result<(Tensor, OpCtx)> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(shape_err(op, format!("need (N,K) logits, got {s:?}")));
    }
    let (n, k) = (s[0], s[1]);
    if labels.len() != n {
        return Err(shape_err(op, format!("{n} rows vs {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArg {
            op: op.name(),
            detail: format!("label {bad} out of range for {k} classes"),
        });
    }
    let mut probs = vec![0.0f32; n * k];
    let mut total = 0.0f32;
    for (ri, (row, &y)) in logits.data().chunks_exact(k).zip(labels.iter()).enumerate() {
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| math::max(a, b));
        let mut z = 0.0f32;
        for &v in row {
            z += math::exp(v - m);
        }
        let lse = m + math::ln(z);
        total += lse - row[y];
        for (j, &v) in row.iter().enumerate() {
            probs[ri * k + j] = math::exp(v - lse);
        }
    }
    let loss = match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / n as f32,
    };
    Ok((
        Tensor::scalar(loss),
        OpCtx::SoftmaxCe { probs: Tensor::new(vec![n, k], probs)? },
    ))
}

fn softmax_ce_backward(
    probs: &Tensor,
    labels: &[usize],
    reduction: Reduction,
    grad_out: &Tensor,
) -> Result<Vec<Option<Tensor>>> {
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    let scale = grad_out.item()?
        * match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n as f32,
        };
    let mut d = probs.data().to_vec();
    for (row, &y) in d.chunks_exact_mut(k).zip(labels.iter()) {
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(vec![Some(Tensor::new(vec![n, k], d)?)])
}
