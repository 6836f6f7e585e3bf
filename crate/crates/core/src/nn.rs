//! Networks as declarative layer lists over the primitive ops, with named
//! parameters, deterministic fan-in-scaled initialization, and a single
//! forward walker shared by inference and the tape.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{OpSpec, Reduction};
use crate::rng::DetRng;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// One step of a network body. Composite variants carry sub-bodies so skip
/// connections, dense concatenation, and parallel branches stay declarative.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv { name: String, out_c: usize, k: usize, stride: usize, pad: usize, groups: usize },
    /// Depthwise conv: one filter per input channel.
    Depthwise { name: String, k: usize, stride: usize, pad: usize },
    Linear { name: String, out_f: usize },
    Relu,
    Gelu,
    MaxPool { k: usize, stride: usize },
    AvgPool { k: usize, stride: usize },
    GlobalAvgPool,
    LayerNorm { name: String },
    Flatten,
    ChannelShuffle { groups: usize },
    /// x + body(x); body must preserve shape.
    Residual(Vec<LayerSpec>),
    /// concat(x, body(x)) along channels.
    DenseConcat(Vec<LayerSpec>),
    /// concat(branch_0(x), branch_1(x), ...) along channels.
    Branches(Vec<Vec<LayerSpec>>),
}

/// Feature shape while walking a body.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feat {
    Map { c: usize, h: usize, w: usize },
    Vec { f: usize },
}

impl Feat {
    fn map(self, op: &str) -> Result<(usize, usize, usize)> {
        match self {
            Feat::Map { c, h, w } => Ok((c, h, w)),
            Feat::Vec { f } => Err(Error::ShapeMismatch {
                op: "network",
                detail: format!("{op} needs a feature map, found flat ({f})"),
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    pub name: String,
    pub tag: String,
    pub input_shape: (usize, usize, usize),
    pub classes: usize,
    layers: Vec<LayerSpec>,
    params: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl Network {
    /// Build with He-style fan-in initialization, deterministic from `seed`.
    pub fn new(
        name: &str,
        tag: &str,
        input_shape: (usize, usize, usize),
        classes: usize,
        layers: Vec<LayerSpec>,
        seed: u64,
    ) -> Result<Network> {
        let mut net = Network {
            name: name.to_string(),
            tag: tag.to_string(),
            input_shape,
            classes,
            layers,
            params: Vec::new(),
            index: BTreeMap::new(),
        };
        let mut rng = DetRng::new(seed);
        let body = net.layers.clone();
        let (c, h, w) = input_shape;
        let out = net.init_body(&body, Feat::Map { c, h, w }, &mut rng)?;
        let got = match out {
            Feat::Vec { f } => f,
            Feat::Map { c, .. } => c,
        };
        if got != classes {
            return Err(Error::ShapeMismatch {
                op: "network",
                detail: format!("{name}: head produces {got} features, want {classes} classes"),
            });
        }
        Ok(net)
    }

    fn add_param(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArg {
                op: "network",
                detail: format!("duplicate parameter name {name}"),
            });
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push((name.to_string(), t));
        Ok(())
    }

    fn he_tensor(rng: &mut DetRng, shape: &[usize], fan_in: usize) -> Tensor {
        let std = crate::math::sqrt(2.0 / fan_in as f32);
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(rng.normal(0.0, std));
        }
        Tensor::new(shape.to_vec(), data).expect("static shape")
    }

    fn init_body(&mut self, body: &[LayerSpec], mut feat: Feat, rng: &mut DetRng) -> Result<Feat> {
        for layer in body {
            feat = self.init_layer(layer, feat, rng)?;
        }
        Ok(feat)
    }

    fn init_layer(&mut self, layer: &LayerSpec, feat: Feat, rng: &mut DetRng) -> Result<Feat> {
        match layer {
            LayerSpec::Conv { name, out_c, k, stride, pad, groups } => {
                let (c, h, w) = feat.map("conv")?;
                if *groups == 0 || c % groups != 0 || out_c % groups != 0 {
                    return Err(Error::InvalidArg {
                        op: "network",
                        detail: format!("{name}: groups {groups} vs channels in {c} out {out_c}"),
                    });
                }
                let fan_in = (c / groups) * k * k;
                self.add_param(&format!("{name}.w"), Self::he_tensor(rng, &[*out_c, c / groups, *k, *k], fan_in))?;
                self.add_param(&format!("{name}.b"), Tensor::zeros(&[*out_c]))?;
                let ho = (h + 2 * pad - k) / stride + 1;
                let wo = (w + 2 * pad - k) / stride + 1;
                Ok(Feat::Map { c: *out_c, h: ho, w: wo })
            }
            LayerSpec::Depthwise { name, k, stride, pad } => {
                let (c, h, w) = feat.map("depthwise")?;
                let fan_in = k * k;
                self.add_param(&format!("{name}.w"), Self::he_tensor(rng, &[c, 1, *k, *k], fan_in))?;
                self.add_param(&format!("{name}.b"), Tensor::zeros(&[c]))?;
                let ho = (h + 2 * pad - k) / stride + 1;
                let wo = (w + 2 * pad - k) / stride + 1;
                Ok(Feat::Map { c, h: ho, w: wo })
            }
            LayerSpec::Linear { name, out_f } => {
                let f = match feat {
                    Feat::Vec { f } => f,
                    Feat::Map { c, h, w } => {
                        return Err(Error::ShapeMismatch {
                            op: "network",
                            detail: format!("{name}: linear needs flat input, found map ({c},{h},{w})"),
                        })
                    }
                };
                self.add_param(&format!("{name}.w"), Self::he_tensor(rng, &[*out_f, f], f))?;
                self.add_param(&format!("{name}.b"), Tensor::zeros(&[*out_f]))?;
                Ok(Feat::Vec { f: *out_f })
            }
            LayerSpec::Relu | LayerSpec::Gelu => Ok(feat),
            LayerSpec::MaxPool { k, stride } | LayerSpec::AvgPool { k, stride } => {
                let (c, h, w) = feat.map("pool")?;
                if h < *k || w < *k {
                    return Err(Error::ShapeMismatch {
                        op: "network",
                        detail: format!("pool {k} on map {h}x{w}"),
                    });
                }
                Ok(Feat::Map { c, h: (h - k) / stride + 1, w: (w - k) / stride + 1 })
            }
            LayerSpec::GlobalAvgPool => {
                let (c, _, _) = feat.map("global-avg-pool")?;
                Ok(Feat::Vec { f: c })
            }
            LayerSpec::LayerNorm { name } => {
                let c = match feat {
                    Feat::Map { c, .. } => c,
                    Feat::Vec { f } => f,
                };
                self.add_param(&format!("{name}.g"), Tensor::full(&[c], 1.0))?;
                self.add_param(&format!("{name}.b"), Tensor::zeros(&[c]))?;
                Ok(feat)
            }
            LayerSpec::Flatten => {
                let (c, h, w) = feat.map("flatten")?;
                Ok(Feat::Vec { f: c * h * w })
            }
            LayerSpec::ChannelShuffle { groups } => {
                let (c, h, w) = feat.map("channel-shuffle")?;
                if *groups == 0 || c % groups != 0 {
                    return Err(Error::InvalidArg {
                        op: "network",
                        detail: format!("shuffle groups {groups} vs {c} channels"),
                    });
                }
                Ok(Feat::Map { c, h, w })
            }
            LayerSpec::Residual(body) => {
                let out = self.init_body(body, feat, rng)?;
                if out != feat {
                    return Err(Error::ShapeMismatch {
                        op: "network",
                        detail: format!("residual body changes shape {feat:?} -> {out:?}"),
                    });
                }
                Ok(feat)
            }
            LayerSpec::DenseConcat(body) => {
                let (c, h, w) = feat.map("dense-concat")?;
                let out = self.init_body(body, feat, rng)?;
                let (bc, bh, bw) = out.map("dense-concat body")?;
                if bh != h || bw != w {
                    return Err(Error::ShapeMismatch {
                        op: "network",
                        detail: format!("dense-concat body map {bh}x{bw} vs input {h}x{w}"),
                    });
                }
                Ok(Feat::Map { c: c + bc, h, w })
            }
            LayerSpec::Branches(branches) => {
                let (_, h, w) = feat.map("branches")?;
                let mut total_c = 0usize;
                for branch in branches {
                    let out = self.init_body(branch, feat, rng)?;
                    let (bc, bh, bw) = out.map("branch")?;
                    if bh != h || bw != w {
                        return Err(Error::ShapeMismatch {
                            op: "network",
                            detail: format!("branch map {bh}x{bw} vs input {h}x{w}"),
                        });
                    }
                    total_c += bc;
                }
                Ok(Feat::Map { c: total_c, h, w })
            }
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].1)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Replace a parameter; the shape must match the existing tensor.
    pub fn set_param(&mut self, name: &str, t: Tensor) -> Result<()> {
        let Some(&i) = self.index.get(name) else {
            return Err(Error::InvalidArg {
                op: "network",
                detail: format!("unknown parameter {name}"),
            });
        };
        if self.params[i].1.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                op: "network",
                detail: format!(
                    "parameter {name}: stored shape {:?}, got {:?}",
                    self.params[i].1.shape(),
                    t.shape()
                ),
            });
        }
        self.params[i].1 = t;
        Ok(())
    }

    pub(crate) fn set_param_by_index(&mut self, i: usize, t: Tensor) {
        self.params[i].1 = t;
    }

    /// Record the full forward pass on `tape`, returning the logits slot and
    /// the tape slot of every parameter (for gradient extraction).
    pub fn forward_on_tape(&self, tape: &mut Tape, x: ValueId) -> Result<(ValueId, Vec<ValueId>)> {
        let mut param_ids = Vec::with_capacity(self.params.len());
        for (_, t) in &self.params {
            param_ids.push(tape.input(t.clone()));
        }
        let out = self.walk_body(tape, &self.layers, x, &param_ids, &mut 0)?;
        Ok((out, param_ids))
    }

    fn walk_body(
        &self,
        tape: &mut Tape,
        body: &[LayerSpec],
        mut x: ValueId,
        param_ids: &[ValueId],
        cursor: &mut usize,
    ) -> Result<ValueId> {
        for layer in body {
            x = self.walk_layer(tape, layer, x, param_ids, cursor)?;
        }
        Ok(x)
    }

    fn next_params(&self, param_ids: &[ValueId], cursor: &mut usize, n: usize) -> (ValueId, ValueId) {
        let a = param_ids[*cursor];
        let b = param_ids[*cursor + 1];
        *cursor += n;
        (a, b)
    }

    fn walk_layer(
        &self,
        tape: &mut Tape,
        layer: &LayerSpec,
        x: ValueId,
        param_ids: &[ValueId],
        cursor: &mut usize,
    ) -> Result<ValueId> {
        match layer {
            LayerSpec::Conv { stride, pad, groups, .. } => {
                let (w, b) = self.next_params(param_ids, cursor, 2);
                tape.apply(OpSpec::Conv2d { stride: *stride, pad: *pad, groups: *groups }, &[x, w, b])
            }
            LayerSpec::Depthwise { k: _, stride, pad, .. } => {
                let (w, b) = self.next_params(param_ids, cursor, 2);
                tape.apply(OpSpec::DepthwiseConv2d { stride: *stride, pad: *pad }, &[x, w, b])
            }
            LayerSpec::Linear { .. } => {
                let (w, b) = self.next_params(param_ids, cursor, 2);
                tape.apply(OpSpec::Linear, &[x, w, b])
            }
            LayerSpec::Relu => tape.apply(OpSpec::Relu, &[x]),
            LayerSpec::Gelu => tape.apply(OpSpec::Gelu, &[x]),
            LayerSpec::MaxPool { k, stride } => tape.apply(OpSpec::MaxPool2d { k: *k, stride: *stride }, &[x]),
            LayerSpec::AvgPool { k, stride } => tape.apply(OpSpec::AvgPool2d { k: *k, stride: *stride }, &[x]),
            LayerSpec::GlobalAvgPool => tape.apply(OpSpec::GlobalAvgPool, &[x]),
            LayerSpec::LayerNorm { .. } => {
                let (g, b) = self.next_params(param_ids, cursor, 2);
                tape.apply(OpSpec::ChannelLayerNorm, &[x, g, b])
            }
            LayerSpec::Flatten => tape.apply(OpSpec::Flatten, &[x]),
            LayerSpec::ChannelShuffle { groups } => {
                tape.apply(OpSpec::ChannelShuffle { groups: *groups }, &[x])
            }
            LayerSpec::Residual(body) => {
                let y = self.walk_body(tape, body, x, param_ids, cursor)?;
                tape.apply(OpSpec::Add, &[x, y])
            }
            LayerSpec::DenseConcat(body) => {
                let y = self.walk_body(tape, body, x, param_ids, cursor)?;
                tape.apply(OpSpec::ConcatChannels, &[x, y])
            }
            LayerSpec::Branches(branches) => {
                let mut outs = Vec::with_capacity(branches.len());
                for branch in branches {
                    outs.push(self.walk_body(tape, branch, x, param_ids, cursor)?);
                }
                tape.apply(OpSpec::ConcatChannels, &outs)
            }
        }
    }

    /// Logits for a batch (N,C,H,W) without keeping the tape.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        let mut tape = Tape::new();
        let xi = tape.input(x.clone());
        let (out, _) = self.forward_on_tape(&mut tape, xi)?;
        Ok(tape.value(out).clone())
    }

    /// Scalar cross-entropy loss and the gradient with respect to the input.
    pub fn input_loss_grad(
        &self,
        x: &Tensor,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<(f32, Tensor)> {
        self.check_batch(x)?;
        let mut tape = Tape::new();
        let xi = tape.input(x.clone());
        let (logits, _) = self.forward_on_tape(&mut tape, xi)?;
        let loss = tape.apply(
            OpSpec::SoftmaxCrossEntropy { labels: labels.to_vec(), reduction },
            &[logits],
        )?;
        let loss_val = tape.value(loss).item()?;
        let mut grads = tape.backward(loss)?;
        let gx = grads
            .take(xi)
            .unwrap_or_else(|| Tensor::zeros(x.shape()));
        Ok((loss_val, gx))
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        let (c, h, w) = self.input_shape;
        if s.len() != 4 || s[1] != c || s[2] != h || s[3] != w {
            return Err(Error::ShapeMismatch {
                op: "network",
                detail: format!("{}: batch {s:?} vs input shape (N,{c},{h},{w})", self.name),
            });
        }
        Ok(())
    }
}
