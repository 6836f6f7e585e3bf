//! Gradient oracle: every primitive op and three composite graphs are
//! checked against central finite differences of an independent f64
//! re-implementation of the forward pass.
//!
//! The engine computes analytic f32 gradients via the tape; the reference
//! below shares only the graph description, not the kernels (convs are
//! naive loops, no im2col; reductions are direct). Differences must satisfy
//! |analytic − fd| ≤ max(1e-5, 1e-3 · max(|analytic|, |fd|)).

use std::time::Instant;

use watertox_core::ops::{OpSpec, Reduction};
use watertox_core::rng::{rng_fill, Dist};
use watertox_core::tape::Tape;
use watertox_core::tensor::Tensor;

const H: f64 = 1e-3;
const REL_TOL: f64 = 1e-3;
const ABS_FLOOR: f64 = 1e-5;

/// A graph as one ordered slot list: leaves and op steps interleaved, each
/// occupying the next slot id. The final step must produce a scalar.
enum Item {
    Leaf(Tensor),
    Step(OpSpec, Vec<usize>),
}

#[derive(Default)]
struct Graph {
    items: Vec<Item>,
}

impl Graph {
    fn new(leaves: Vec<Tensor>) -> Self {
        Graph { items: leaves.into_iter().map(Item::Leaf).collect() }
    }

    fn leaf(&mut self, t: Tensor) -> usize {
        self.items.push(Item::Leaf(t));
        self.items.len() - 1
    }

    fn push(&mut self, op: OpSpec, inputs: &[usize]) -> usize {
        self.items.push(Item::Step(op, inputs.to_vec()));
        self.items.len() - 1
    }

    fn leaves(&self) -> Vec<(usize, &Tensor)> {
        self.items
            .iter()
            .enumerate()
            .filter_map(|(i, it)| match it {
                Item::Leaf(t) => Some((i, t)),
                _ => None,
            })
            .collect()
    }
}

/// Engine path: tape forward + analytic backward, one gradient per leaf slot.
fn engine_gradients(g: &Graph) -> Vec<Vec<f32>> {
    let mut tape = Tape::new();
    let mut slots = Vec::new();
    for item in &g.items {
        let id = match item {
            Item::Leaf(t) => tape.input(t.clone()),
            Item::Step(op, inputs) => {
                let ids: Vec<_> = inputs.iter().map(|&i| slots[i]).collect();
                tape.apply(op.clone(), &ids).expect("forward")
            }
        };
        slots.push(id);
    }
    let loss = *slots.last().unwrap();
    let grads = tape.backward(loss).expect("backward");
    g.leaves()
        .into_iter()
        .map(|(i, leaf)| match grads.get(slots[i]) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; leaf.len()],
        })
        .collect()
}

// ---- independent f64 reference ------------------------------------------------

#[derive(Clone)]
struct RTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RTensor {
    fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        let (_, cc, hh, ww) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cc + c) * hh + h) * ww + w]
    }
}

fn ref_gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn ref_forward(g: &Graph, leaf_values: &[Vec<f64>]) -> f64 {
    let mut vals: Vec<RTensor> = Vec::with_capacity(g.items.len());
    let mut next_leaf = 0usize;
    for item in &g.items {
        let out = match item {
            Item::Leaf(t) => {
                let rt = RTensor { shape: t.shape().to_vec(), data: leaf_values[next_leaf].clone() };
                next_leaf += 1;
                rt
            }
            Item::Step(op, inputs) => {
                let ins: Vec<&RTensor> = inputs.iter().map(|&i| &vals[i]).collect();
                ref_op(op, &ins)
            }
        };
        vals.push(out);
    }
    assert_eq!(vals.last().unwrap().data.len(), 1, "loss must be scalar");
    vals.last().unwrap().data[0]
}

fn ref_op(op: &OpSpec, ins: &[&RTensor]) -> RTensor {
    match op {
        OpSpec::Linear => {
            let (x, w, b) = (ins[0], ins[1], ins[2]);
            let (n, fi, fo) = (x.shape[0], x.shape[1], w.shape[0]);
            let mut data = vec![0.0; n * fo];
            for i in 0..n {
                for o in 0..fo {
                    let mut acc = b.data[o];
                    for j in 0..fi {
                        acc += x.data[i * fi + j] * w.data[o * fi + j];
                    }
                    data[i * fo + o] = acc;
                }
            }
            RTensor { shape: vec![n, fo], data }
        }
        OpSpec::Conv2d { stride, pad, groups } => ref_conv(ins[0], ins[1], ins[2], *stride, *pad, *groups),
        OpSpec::DepthwiseConv2d { stride, pad } => {
            let groups = ins[0].shape[1];
            ref_conv(ins[0], ins[1], ins[2], *stride, *pad, groups)
        }
        OpSpec::Relu => RTensor {
            shape: ins[0].shape.clone(),
            data: ins[0].data.iter().map(|&v| v.max(0.0)).collect(),
        },
        OpSpec::Gelu => RTensor {
            shape: ins[0].shape.clone(),
            data: ins[0].data.iter().map(|&v| ref_gelu(v)).collect(),
        },
        OpSpec::MaxPool2d { k, stride } => {
            let x = ins[0];
            let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            let (ho, wo) = ((h - k) / stride + 1, (w - k) / stride + 1);
            let mut data = Vec::new();
            for ni in 0..n {
                for ci in 0..c {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let mut best = f64::NEG_INFINITY;
                            for ki in 0..*k {
                                for kj in 0..*k {
                                    best = best.max(x.at4(ni, ci, oh * stride + ki, ow * stride + kj));
                                }
                            }
                            data.push(best);
                        }
                    }
                }
            }
            RTensor { shape: vec![n, c, ho, wo], data }
        }
        OpSpec::AvgPool2d { k, stride } => {
            let x = ins[0];
            let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            let (ho, wo) = ((h - k) / stride + 1, (w - k) / stride + 1);
            let mut data = Vec::new();
            for ni in 0..n {
                for ci in 0..c {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let mut acc = 0.0;
                            for ki in 0..*k {
                                for kj in 0..*k {
                                    acc += x.at4(ni, ci, oh * stride + ki, ow * stride + kj);
                                }
                            }
                            data.push(acc / (k * k) as f64);
                        }
                    }
                }
            }
            RTensor { shape: vec![n, c, ho, wo], data }
        }
        OpSpec::GlobalAvgPool => {
            let x = ins[0];
            let (n, c, hw) = (x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
            let mut data = Vec::new();
            for i in 0..n * c {
                data.push(x.data[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64);
            }
            RTensor { shape: vec![n, c], data }
        }
        OpSpec::ChannelLayerNorm => {
            let (x, gm, bt) = (ins[0], ins[1], ins[2]);
            let (c, hw) = if x.shape.len() == 4 {
                (x.shape[1], x.shape[2] * x.shape[3])
            } else {
                (x.shape[1], 1)
            };
            let n = x.shape[0];
            let mut data = vec![0.0; x.data.len()];
            for ni in 0..n {
                for p in 0..hw {
                    let mut mu = 0.0;
                    for ci in 0..c {
                        mu += x.data[(ni * c + ci) * hw + p];
                    }
                    mu /= c as f64;
                    let mut var = 0.0;
                    for ci in 0..c {
                        let d = x.data[(ni * c + ci) * hw + p] - mu;
                        var += d * d;
                    }
                    var /= c as f64;
                    let inv = 1.0 / (var + 1e-5_f32 as f64).sqrt();
                    for ci in 0..c {
                        let at = (ni * c + ci) * hw + p;
                        data[at] = gm.data[ci] * (x.data[at] - mu) * inv + bt.data[ci];
                    }
                }
            }
            RTensor { shape: x.shape.clone(), data }
        }
        OpSpec::Add => RTensor {
            shape: ins[0].shape.clone(),
            data: ins[0].data.iter().zip(ins[1].data.iter()).map(|(a, b)| a + b).collect(),
        },
        OpSpec::ConcatChannels => {
            let n = ins[0].shape[0];
            let (h, w) = (ins[0].shape[2], ins[0].shape[3]);
            let hw = h * w;
            let c_total: usize = ins.iter().map(|t| t.shape[1]).sum();
            let mut data = vec![0.0; n * c_total * hw];
            for ni in 0..n {
                let mut off = 0usize;
                for t in ins {
                    let ci = t.shape[1];
                    for x in 0..ci * hw {
                        data[(ni * c_total + off) * hw + x] = t.data[ni * ci * hw + x];
                    }
                    off += ci;
                }
            }
            RTensor { shape: vec![n, c_total, h, w], data }
        }
        OpSpec::ChannelShuffle { groups } => {
            let x = ins[0];
            let (n, c) = (x.shape[0], x.shape[1]);
            let hw = x.shape[2] * x.shape[3];
            let per = c / groups;
            let mut data = vec![0.0; x.data.len()];
            for ni in 0..n {
                for a in 0..*groups {
                    for b in 0..per {
                        for p in 0..hw {
                            data[(ni * c + b * groups + a) * hw + p] =
                                x.data[(ni * c + a * per + b) * hw + p];
                        }
                    }
                }
            }
            RTensor { shape: x.shape.clone(), data }
        }
        OpSpec::Flatten => {
            let n = ins[0].shape[0];
            let rest: usize = ins[0].shape[1..].iter().product();
            RTensor { shape: vec![n, rest], data: ins[0].data.clone() }
        }
        OpSpec::SoftmaxCrossEntropy { labels, reduction } => {
            let x = ins[0];
            let (n, k) = (x.shape[0], x.shape[1]);
            let mut total = 0.0;
            for (row, &y) in x.data.chunks_exact(k).zip(labels.iter()) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                total += m + z.ln() - row[y];
            }
            if *reduction == Reduction::Mean {
                total /= n as f64;
            }
            RTensor { shape: vec![1], data: vec![total] }
        }
        OpSpec::Sum => RTensor { shape: vec![1], data: vec![ins[0].data.iter().sum()] },
    }
}

fn ref_conv(x: &RTensor, w: &RTensor, b: &RTensor, stride: usize, pad: usize, groups: usize) -> RTensor {
    let (n, c_in, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (c_out, _, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    let (cg_in, cg_out) = (c_in / groups, c_out / groups);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut data = vec![0.0; n * c_out * ho * wo];
    for ni in 0..n {
        for co in 0..c_out {
            let g = co / cg_out;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = b.data[co];
                    for cl in 0..cg_in {
                        let ci = g * cg_in + cl;
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (oh * stride + ki) as isize - pad as isize;
                                let iw = (ow * stride + kj) as isize - pad as isize;
                                if ih >= 0 && ih < h as isize && iw >= 0 && iw < wd as isize {
                                    acc += x.at4(ni, ci, ih as usize, iw as usize)
                                        * w.data[((co * cg_in + cl) * kh + ki) * kw + kj];
                                }
                            }
                        }
                    }
                    data[((ni * c_out + co) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    RTensor { shape: vec![n, c_out, ho, wo], data }
}

// ---- the check ------------------------------------------------------------------

fn check_graph(name: &str, g: &Graph) {
    let analytic = engine_gradients(g);
    let leaves = g.leaves();
    let base: Vec<Vec<f64>> =
        leaves.iter().map(|(_, t)| t.data().iter().map(|&v| v as f64).collect()).collect();
    for (li, (_, leaf)) in leaves.iter().enumerate() {
        for ci in 0..leaf.len() {
            let mut plus = base.clone();
            plus[li][ci] += H;
            let mut minus = base.clone();
            minus[li][ci] -= H;
            let fd = (ref_forward(g, &plus) - ref_forward(g, &minus)) / (2.0 * H);
            let an = analytic[li][ci] as f64;
            let tol = ABS_FLOOR.max(REL_TOL * an.abs().max(fd.abs()));
            assert!(
                (an - fd).abs() <= tol,
                "{name}: leaf {li} coord {ci}: analytic {an} vs fd {fd} (tol {tol})"
            );
        }
    }
}

fn uni(shape: &[usize], seed: u64) -> Tensor {
    rng_fill(shape, Dist::Uniform { a: -1.0, b: 1.0 }, seed).unwrap()
}

fn ce(labels: &[usize]) -> OpSpec {
    OpSpec::SoftmaxCrossEntropy { labels: labels.to_vec(), reduction: Reduction::Sum }
}

/// linear(w,b) → CE head appended to any flat feature slot; the random
/// mixing weights make every upstream Jacobian entry observable.
fn cap_with_head(g: &mut Graph, slot: usize, features: usize, classes: usize, seed: u64, labels: &[usize]) {
    let w = g.leaf(uni(&[classes, features], seed));
    let b = g.leaf(uni(&[classes], seed + 1));
    let logits = g.push(OpSpec::Linear, &[slot, w, b]);
    g.push(ce(labels), &[logits]);
}

#[test]
fn gradients_match_finite_differences_for_every_primitive() {
    let started = Instant::now();

    // linear + CE(sum)
    {
        let mut g = Graph::new(vec![uni(&[2, 5], 10), uni(&[3, 5], 11), uni(&[3], 12)]);
        let z = g.push(OpSpec::Linear, &[0, 1, 2]);
        g.push(ce(&[2, 0]), &[z]);
        check_graph("linear", &g);
    }
    // CE(mean) directly on leaf logits
    {
        let mut g = Graph::new(vec![uni(&[3, 4], 13)]);
        g.push(
            OpSpec::SoftmaxCrossEntropy { labels: vec![1, 3, 0], reduction: Reduction::Mean },
            &[0],
        );
        check_graph("softmax-ce-mean", &g);
    }
    // sum
    {
        let mut g = Graph::new(vec![uni(&[2, 3], 14)]);
        g.push(OpSpec::Sum, &[0]);
        check_graph("sum", &g);
    }
    // conv2d, plain
    {
        let mut g = Graph::new(vec![uni(&[2, 2, 5, 5], 15), uni(&[3, 2, 3, 3], 16), uni(&[3], 17)]);
        let y = g.push(OpSpec::Conv2d { stride: 1, pad: 0, groups: 1 }, &[0, 1, 2]);
        let f = g.push(OpSpec::Flatten, &[y]);
        cap_with_head(&mut g, f, 3 * 3 * 3, 3, 18, &[0, 2]);
        check_graph("conv2d", &g);
    }
    // conv2d, strided + padded + grouped
    {
        let mut g = Graph::new(vec![uni(&[2, 4, 5, 5], 19), uni(&[4, 2, 3, 3], 20), uni(&[4], 21)]);
        let y = g.push(OpSpec::Conv2d { stride: 2, pad: 1, groups: 2 }, &[0, 1, 2]);
        let f = g.push(OpSpec::Flatten, &[y]);
        cap_with_head(&mut g, f, 4 * 3 * 3, 2, 22, &[1, 0]);
        check_graph("conv2d-grouped", &g);
    }
    // depthwise conv
    {
        let mut g = Graph::new(vec![uni(&[2, 3, 4, 4], 23), uni(&[3, 1, 3, 3], 24), uni(&[3], 25)]);
        let y = g.push(OpSpec::DepthwiseConv2d { stride: 1, pad: 1 }, &[0, 1, 2]);
        let f = g.push(OpSpec::Flatten, &[y]);
        cap_with_head(&mut g, f, 3 * 4 * 4, 3, 26, &[2, 1]);
        check_graph("depthwise", &g);
    }
    // relu
    {
        let mut g = Graph::new(vec![uni(&[2, 6], 27)]);
        let y = g.push(OpSpec::Relu, &[0]);
        cap_with_head(&mut g, y, 6, 3, 28, &[0, 1]);
        check_graph("relu", &g);
    }
    // gelu
    {
        let mut g = Graph::new(vec![uni(&[2, 6], 29)]);
        let y = g.push(OpSpec::Gelu, &[0]);
        cap_with_head(&mut g, y, 6, 3, 30, &[2, 2]);
        check_graph("gelu", &g);
    }
    // maxpool
    {
        let mut g = Graph::new(vec![uni(&[2, 2, 4, 4], 31)]);
        let y = g.push(OpSpec::MaxPool2d { k: 2, stride: 2 }, &[0]);
        let f = g.push(OpSpec::Flatten, &[y]);
        cap_with_head(&mut g, f, 2 * 2 * 2, 2, 32, &[1, 0]);
        check_graph("maxpool", &g);
    }
    // avgpool
    {
        let mut g = Graph::new(vec![uni(&[2, 2, 4, 4], 33)]);
        let y = g.push(OpSpec::AvgPool2d { k: 2, stride: 2 }, &[0]);
        let f = g.push(OpSpec::Flatten, &[y]);
        cap_with_head(&mut g, f, 8, 2, 34, &[0, 1]);
        check_graph("avgpool", &g);
    }
    // global avg pool
    {
        let mut g = Graph::new(vec![uni(&[2, 3, 4, 4], 35)]);
        let y = g.push(OpSpec::GlobalAvgPool, &[0]);
        cap_with_head(&mut g, y, 3, 3, 36, &[2, 0]);
        check_graph("global-avg-pool", &g);
    }
    // channel layer norm (4D and 2D), with non-trivial gamma/beta
    {
        let mut g = Graph::new(vec![uni(&[2, 4, 3, 3], 37), uni(&[4], 38), uni(&[4], 39)]);
        let y = g.push(OpSpec::ChannelLayerNorm, &[0, 1, 2]);
        let f = g.push(OpSpec::Flatten, &[y]);
        cap_with_head(&mut g, f, 4 * 9, 2, 40, &[0, 1]);
        check_graph("layernorm-4d", &g);
    }
    {
        let mut g = Graph::new(vec![uni(&[3, 5], 41), uni(&[5], 42), uni(&[5], 43)]);
        let y = g.push(OpSpec::ChannelLayerNorm, &[0, 1, 2]);
        cap_with_head(&mut g, y, 5, 2, 44, &[1, 1, 0]);
        check_graph("layernorm-2d", &g);
    }
    // add (fan-in of two leaves)
    {
        let mut g = Graph::new(vec![uni(&[2, 5], 45), uni(&[2, 5], 46)]);
        let y = g.push(OpSpec::Add, &[0, 1]);
        cap_with_head(&mut g, y, 5, 2, 47, &[1, 0]);
        check_graph("add", &g);
    }
    // concat
    {
        let mut g = Graph::new(vec![uni(&[1, 2, 3, 3], 48), uni(&[1, 3, 3, 3], 49)]);
        let y = g.push(OpSpec::ConcatChannels, &[0, 1]);
        let f = g.push(OpSpec::Flatten, &[y]);
        cap_with_head(&mut g, f, 5 * 9, 2, 50, &[0]);
        check_graph("concat", &g);
    }
    // channel shuffle
    {
        let mut g = Graph::new(vec![uni(&[1, 6, 2, 2], 51)]);
        let y = g.push(OpSpec::ChannelShuffle { groups: 3 }, &[0]);
        let f = g.push(OpSpec::Flatten, &[y]);
        cap_with_head(&mut g, f, 24, 2, 52, &[1]);
        check_graph("shuffle", &g);
    }
    // flatten
    {
        let mut g = Graph::new(vec![uni(&[2, 2, 2, 2], 53)]);
        let f = g.push(OpSpec::Flatten, &[0]);
        cap_with_head(&mut g, f, 8, 2, 54, &[0, 1]);
        check_graph("flatten", &g);
    }

    // composite graph A: conv → relu → maxpool → concat(x', conv(x')) → gap → head
    {
        let mut g = Graph::new(vec![
            uni(&[2, 2, 6, 6], 60),
            uni(&[4, 2, 3, 3], 61),
            uni(&[4], 62),
            uni(&[3, 4, 3, 3], 63),
            uni(&[3], 64),
        ]);
        let c1 = g.push(OpSpec::Conv2d { stride: 1, pad: 1, groups: 1 }, &[0, 1, 2]);
        let r = g.push(OpSpec::Relu, &[c1]);
        let p = g.push(OpSpec::MaxPool2d { k: 2, stride: 2 }, &[r]);
        let c2 = g.push(OpSpec::Conv2d { stride: 1, pad: 1, groups: 1 }, &[p, 3, 4]);
        let cat = g.push(OpSpec::ConcatChannels, &[p, c2]);
        let gap = g.push(OpSpec::GlobalAvgPool, &[cat]);
        cap_with_head(&mut g, gap, 7, 3, 65, &[2, 1]);
        check_graph("composite-a", &g);
    }
    // composite graph B: modern block with residual add
    {
        let mut g = Graph::new(vec![
            uni(&[1, 4, 4, 4], 70),  // x
            uni(&[4, 1, 3, 3], 71),  // dw w
            uni(&[4], 72),           // dw b
            uni(&[4], 73),           // ln gamma
            uni(&[4], 74),           // ln beta
            uni(&[8, 4, 1, 1], 75),  // pw1
            uni(&[8], 76),
            uni(&[4, 8, 1, 1], 77),  // pw2
            uni(&[4], 78),
        ]);
        let dw = g.push(OpSpec::DepthwiseConv2d { stride: 1, pad: 1 }, &[0, 1, 2]);
        let ln = g.push(OpSpec::ChannelLayerNorm, &[dw, 3, 4]);
        let p1 = g.push(OpSpec::Conv2d { stride: 1, pad: 0, groups: 1 }, &[ln, 5, 6]);
        let ge = g.push(OpSpec::Gelu, &[p1]);
        let p2 = g.push(OpSpec::Conv2d { stride: 1, pad: 0, groups: 1 }, &[ge, 7, 8]);
        let res = g.push(OpSpec::Add, &[0, p2]);
        let gap = g.push(OpSpec::GlobalAvgPool, &[res]);
        cap_with_head(&mut g, gap, 4, 2, 79, &[1]);
        check_graph("composite-b", &g);
    }
    // composite graph C: branches + shuffle + avgpool
    {
        let mut g = Graph::new(vec![
            uni(&[2, 3, 4, 4], 80),
            uni(&[3, 3, 1, 1], 81),
            uni(&[3], 82),
            uni(&[3, 3, 3, 3], 83),
            uni(&[3], 84),
        ]);
        let b1 = g.push(OpSpec::Conv2d { stride: 1, pad: 0, groups: 1 }, &[0, 1, 2]);
        let b2 = g.push(OpSpec::Conv2d { stride: 1, pad: 1, groups: 1 }, &[0, 3, 4]);
        let cat = g.push(OpSpec::ConcatChannels, &[b1, b2]);
        let sh = g.push(OpSpec::ChannelShuffle { groups: 2 }, &[cat]);
        let ap = g.push(OpSpec::AvgPool2d { k: 2, stride: 2 }, &[sh]);
        let f = g.push(OpSpec::Flatten, &[ap]);
        cap_with_head(&mut g, f, 6 * 4, 3, 85, &[0, 2]);
        check_graph("composite-c", &g);
    }

    let elapsed = started.elapsed();
    println!("gradcheck total: {elapsed:?}");
    assert!(elapsed.as_secs() < 60, "gradient oracle must finish in under a minute");
}
