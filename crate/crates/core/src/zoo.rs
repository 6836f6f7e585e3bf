//! The model roster: four surrogate architectures whose gradients drive the
//! ensemble attack, and four held-out architectures used only as zero-shot
//! transfer targets. Each mini network keeps its family's signature motif at
//! desk scale (≤ 200k parameters).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};

/// The eight supported architecture tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchTag {
    /// Stacked 3x3 convolutions.
    VggMini,
    /// Blocks fed by channel-concatenation of all prior outputs.
    DenseMini,
    /// Large-kernel (7x7/5x5) convolutions with aggressive pooling.
    AlexMini,
    /// Depthwise 7x7 + pointwise convs, channel layer norm, GELU.
    ConvnextMini,
    /// Identity skip additions.
    ResMini,
    /// Parallel multi-kernel branches, concatenated.
    IncepMini,
    /// Grouped convolutions with channel shuffle.
    ShuffleMini,
    /// Depthwise-separable convolutions.
    MobileMini,
}

pub const ALL_TAGS: [ArchTag; 8] = [
    ArchTag::VggMini,
    ArchTag::DenseMini,
    ArchTag::AlexMini,
    ArchTag::ConvnextMini,
    ArchTag::ResMini,
    ArchTag::IncepMini,
    ArchTag::ShuffleMini,
    ArchTag::MobileMini,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Surrogate,
    ZeroShotTarget,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Surrogate => "surrogate",
            Role::ZeroShotTarget => "zero-shot-target",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "surrogate" => Some(Role::Surrogate),
            "zero-shot-target" => Some(Role::ZeroShotTarget),
            _ => None,
        }
    }
}

impl ArchTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArchTag::VggMini => "vgg-mini",
            ArchTag::DenseMini => "dense-mini",
            ArchTag::AlexMini => "alex-mini",
            ArchTag::ConvnextMini => "convnext-mini",
            ArchTag::ResMini => "res-mini",
            ArchTag::IncepMini => "incep-mini",
            ArchTag::ShuffleMini => "shuffle-mini",
            ArchTag::MobileMini => "mobile-mini",
        }
    }

    pub fn parse(s: &str) -> Result<ArchTag> {
        ALL_TAGS
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArg {
                op: "build_network",
                detail: format!("unknown architecture tag {s:?}"),
            })
    }

    fn index(&self) -> u64 {
        ALL_TAGS.iter().position(|t| t == self).unwrap() as u64
    }
}

/// Fixed per-architecture seed offset, so an ensemble built from one base
/// seed does not start from correlated weights.
pub fn seed_for(tag: ArchTag, base_seed: u64) -> u64 {
    base_seed.wrapping_add(1000 * (tag.index() + 1))
}

/// Version marker for the frozen training recipe below; bump when any
/// per-architecture hyperparameter changes.
pub const TRAIN_RECIPE_VERSION: u32 = 1;

/// The frozen training recipe, calibrated once on the bundled shape dataset
/// and kept fixed for reproducibility. Learning rates differ per family:
/// the plain-ReLU stacks take 0.08, the normalization-free deep stacks and
/// the grouped/normalized families need gentler steps.
pub fn train_recipe(tag: ArchTag, base_seed: u64) -> crate::train::TrainConfig {
    let lr = match tag {
        ArchTag::VggMini => 0.04,
        ArchTag::DenseMini => 0.08,
        ArchTag::AlexMini => 0.08,
        ArchTag::ConvnextMini => 0.03,
        ArchTag::ResMini => 0.06,
        ArchTag::IncepMini => 0.08,
        ArchTag::ShuffleMini => 0.05,
        ArchTag::MobileMini => 0.08,
    };
    crate::train::TrainConfig {
        epochs: 12,
        batch_size: 64,
        lr,
        momentum: 0.9,
        weight_decay: 1e-4,
        seed: seed_for(tag, base_seed),
        stop_at_val_acc: Some(0.97),
    }
}

/// The default roster: surrogates and zero-shot targets are disjoint by
/// construction.
pub fn default_roster() -> Vec<(ArchTag, Role)> {
    vec![
        (ArchTag::VggMini, Role::Surrogate),
        (ArchTag::DenseMini, Role::Surrogate),
        (ArchTag::AlexMini, Role::Surrogate),
        (ArchTag::ConvnextMini, Role::Surrogate),
        (ArchTag::ResMini, Role::ZeroShotTarget),
        (ArchTag::IncepMini, Role::ZeroShotTarget),
        (ArchTag::ShuffleMini, Role::ZeroShotTarget),
        (ArchTag::MobileMini, Role::ZeroShotTarget),
    ]
}

fn conv(name: &str, out_c: usize, k: usize, stride: usize, pad: usize) -> LayerSpec {
    LayerSpec::Conv { name: name.into(), out_c, k, stride, pad, groups: 1 }
}

fn gconv(name: &str, out_c: usize, groups: usize) -> LayerSpec {
    LayerSpec::Conv { name: name.into(), out_c, k: 1, stride: 1, pad: 0, groups }
}

fn dw(name: &str, k: usize, pad: usize) -> LayerSpec {
    LayerSpec::Depthwise { name: name.into(), k, stride: 1, pad }
}

fn layers_for(tag: ArchTag) -> Vec<LayerSpec> {
    use LayerSpec::*;
    match tag {
        ArchTag::VggMini => vec![
            conv("c1a", 8, 3, 1, 1),
            Relu,
            conv("c1b", 8, 3, 1, 1),
            Relu,
            MaxPool { k: 2, stride: 2 },
            conv("c2a", 16, 3, 1, 1),
            Relu,
            conv("c2b", 16, 3, 1, 1),
            Relu,
            MaxPool { k: 2, stride: 2 },
            Flatten,
            Linear { name: "fc".into(), out_f: 0 }, // patched below
        ],
        ArchTag::DenseMini => vec![
            conv("stem", 10, 3, 2, 1),
            Relu,
            DenseConcat(vec![conv("d1", 10, 3, 1, 1), Relu]),
            DenseConcat(vec![conv("d2", 10, 3, 1, 1), Relu]),
            DenseConcat(vec![conv("d3", 10, 3, 1, 1), Relu]),
            GlobalAvgPool,
            Linear { name: "fc".into(), out_f: 0 },
        ],
        ArchTag::AlexMini => vec![
            conv("c1", 16, 7, 2, 3),
            Relu,
            MaxPool { k: 2, stride: 2 },
            conv("c2", 32, 5, 1, 2),
            Relu,
            MaxPool { k: 2, stride: 2 },
            conv("c3", 32, 3, 1, 1),
            Relu,
            Flatten,
            Linear { name: "fc1".into(), out_f: 48 },
            Relu,
            Linear { name: "fc2".into(), out_f: 0 },
        ],
        ArchTag::ConvnextMini => {
            let block = |i: usize, c4: usize| {
                Residual(vec![
                    dw(&format!("b{i}.dw"), 7, 3),
                    LayerNorm { name: format!("b{i}.ln") },
                    gconv(&format!("b{i}.pw1"), c4, 1),
                    Gelu,
                    gconv(&format!("b{i}.pw2"), c4 / 4, 1),
                ])
            };
            vec![
                conv("stem", 16, 2, 2, 0),
                LayerNorm { name: "stem.ln".into() },
                block(1, 64),
                block(2, 64),
                conv("down", 32, 2, 2, 0),
                LayerNorm { name: "down.ln".into() },
                block(3, 128),
                GlobalAvgPool,
                LayerNorm { name: "head.ln".into() },
                Linear { name: "fc".into(), out_f: 0 },
            ]
        }
        ArchTag::ResMini => vec![
            conv("stem", 16, 3, 1, 1),
            Relu,
            MaxPool { k: 2, stride: 2 },
            Residual(vec![conv("r1a", 16, 3, 1, 1), Relu, conv("r1b", 16, 3, 1, 1)]),
            Relu,
            conv("widen", 32, 3, 1, 1),
            Relu,
            MaxPool { k: 2, stride: 2 },
            Residual(vec![conv("r2a", 32, 3, 1, 1), Relu, conv("r2b", 32, 3, 1, 1)]),
            Relu,
            GlobalAvgPool,
            Linear { name: "fc".into(), out_f: 0 },
        ],
        ArchTag::IncepMini => vec![
            conv("stem", 16, 3, 1, 1),
            Relu,
            MaxPool { k: 2, stride: 2 },
            Branches(vec![
                vec![conv("i1.k1", 8, 1, 1, 0), Relu],
                vec![conv("i1.k3", 12, 3, 1, 1), Relu],
                vec![conv("i1.k5", 8, 5, 1, 2), Relu],
                vec![conv("i1.proj", 4, 1, 1, 0), Relu],
            ]),
            MaxPool { k: 2, stride: 2 },
            Branches(vec![
                vec![conv("i2.k1", 12, 1, 1, 0), Relu],
                vec![conv("i2.k3", 16, 3, 1, 1), Relu],
                vec![conv("i2.k5", 12, 5, 1, 2), Relu],
            ]),
            GlobalAvgPool,
            Linear { name: "fc".into(), out_f: 0 },
        ],
        ArchTag::ShuffleMini => vec![
            conv("stem", 32, 3, 2, 1),
            Relu,
            gconv("u1.gc1", 64, 4),
            Relu,
            ChannelShuffle { groups: 4 },
            dw("u1.dw", 3, 1),
            gconv("u1.gc2", 64, 4),
            Relu,
            MaxPool { k: 2, stride: 2 },
            gconv("u2.gc1", 64, 4),
            Relu,
            ChannelShuffle { groups: 4 },
            dw("u2.dw", 3, 1),
            gconv("u2.gc2", 64, 4),
            Relu,
            GlobalAvgPool,
            Linear { name: "fc".into(), out_f: 0 },
        ],
        ArchTag::MobileMini => vec![
            conv("stem", 16, 3, 2, 1),
            Relu,
            dw("ds1.dw", 3, 1),
            Relu,
            gconv("ds1.pw", 32, 1),
            Relu,
            dw("ds2.dw", 3, 1),
            Relu,
            gconv("ds2.pw", 48, 1),
            Relu,
            MaxPool { k: 2, stride: 2 },
            dw("ds3.dw", 3, 1),
            Relu,
            gconv("ds3.pw", 64, 1),
            Relu,
            GlobalAvgPool,
            Linear { name: "fc".into(), out_f: 0 },
        ],
    }
}

/// Instantiate an architecture with deterministic initialization.
pub fn build_network(
    tag: ArchTag,
    input_shape: (usize, usize, usize),
    classes: usize,
    seed: u64,
) -> Result<Network> {
    build_named(tag.as_str(), tag, input_shape, classes, seed)
}

/// Same, with an explicit instance name (for rosters holding several copies
/// of one family).
pub fn build_named(
    name: &str,
    tag: ArchTag,
    input_shape: (usize, usize, usize),
    classes: usize,
    seed: u64,
) -> Result<Network> {
    let mut layers = layers_for(tag);
    // the classifier head always matches the class count
    patch_head(&mut layers, classes);
    Network::new(name, tag.as_str(), input_shape, classes, layers, seed)
}

fn patch_head(layers: &mut [LayerSpec], classes: usize) {
    if let Some(LayerSpec::Linear { out_f, .. }) = layers.last_mut() {
        *out_f = classes;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn every_tag_meets_the_shape_contract() {
        for &tag in &ALL_TAGS {
            let net = build_network(tag, (1, 28, 28), 10, 3).unwrap();
            let x = Tensor::zeros(&[8, 1, 28, 28]);
            let y = net.forward(&x).expect(tag.as_str());
            assert_eq!(y.shape(), &[8, 10], "{}", tag.as_str());
            assert!(y.all_finite());
        }
    }

    #[test]
    fn every_tag_supports_rgb_32() {
        for &tag in &ALL_TAGS {
            let net = build_network(tag, (3, 32, 32), 10, 11).unwrap();
            let y = net.forward(&Tensor::zeros(&[2, 3, 32, 32])).expect(tag.as_str());
            assert_eq!(y.shape(), &[2, 10]);
        }
    }

    #[test]
    fn parameter_budget_under_200k() {
        for &tag in &ALL_TAGS {
            let net = build_network(tag, (1, 28, 28), 10, 3).unwrap();
            assert!(net.param_count() <= 200_000, "{}: {}", tag.as_str(), net.param_count());
        }
    }

    #[test]
    fn same_tag_same_seed_is_identical() {
        let a = build_network(ArchTag::VggMini, (1, 28, 28), 10, 5).unwrap();
        let b = build_network(ArchTag::VggMini, (1, 28, 28), 10, 5).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn unknown_tag_is_an_error() {
        assert!(ArchTag::parse("resnet-152").is_err());
        assert!(ArchTag::parse("vgg-mini").is_ok());
    }

    #[test]
    fn roster_roles_are_disjoint() {
        let roster = default_roster();
        let surrogates: Vec<_> =
            roster.iter().filter(|(_, r)| *r == Role::Surrogate).map(|(t, _)| *t).collect();
        let targets: Vec<_> =
            roster.iter().filter(|(_, r)| *r == Role::ZeroShotTarget).map(|(t, _)| *t).collect();
        assert_eq!(surrogates.len(), 4);
        assert_eq!(targets.len(), 4);
        for t in &targets {
            assert!(!surrogates.contains(t));
        }
    }

    /// Walk the dense-mini spec independently, tracking the channel count
    /// each block should see: stem channels plus all prior growth.
    #[test]
    fn dense_mini_channel_arithmetic() {
        let net = build_network(ArchTag::DenseMini, (1, 28, 28), 10, 3).unwrap();
        let growth = 10usize;
        let stem = 10usize;
        let mut expected_in = stem;
        let mut block = 0usize;
        for layer in net.layers() {
            if let LayerSpec::DenseConcat(body) = layer {
                block += 1;
                let LayerSpec::Conv { .. } = &body[0] else { panic!("dense body starts with conv") };
                // conv weight shape is (growth, expected_in, 3, 3)
                let name = alloc::format!("d{block}.w");
                let w = net.param(&name).unwrap();
                assert_eq!(
                    w.shape(),
                    &[growth, expected_in, 3, 3],
                    "block {block} input channels"
                );
                expected_in += growth;
            }
        }
        assert_eq!(block, 3);
        // final feature count feeding the classifier
        let fc = net.param("fc.w").unwrap();
        assert_eq!(fc.shape(), &[10, expected_in]);
    }
}
