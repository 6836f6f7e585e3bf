//! Perturbation mathematics: classical FGSM, the composite ensemble loss,
//! the two-stage watertox attack (sign-vote consensus + importance-masked
//! enhancement), and the NI-FGSM baseline.
//!
//! All attacks are untargeted: the loss is softmax cross-entropy against the
//! ground-truth label over the full classification space, summed per image
//! so gradients are independent of batch composition. Every pixel-level
//! update uses sign(0) = 0, so zero-gradient pixels are never touched.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::nn::Network;
use crate::ops::Reduction;
use crate::tensor::Tensor;

/// Stage-2 threshold selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdRule {
    /// τ = per-image mean of |aggregated gradient|.
    MeanAbs,
    /// τ supplied as a constant.
    Fixed(f32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    None,
    /// R(x) = ‖x − x₀‖²; ∇R = 2(x − x₀).
    SquaredDistanceToOriginal,
}

/// How stage 1 combines the per-model gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage1Combiner {
    /// sign(Σ wⱼ sign(∇ⱼ)) — the consensus vote.
    SignVote,
    /// sign of the weighted gradient sum (plus regularizer).
    WeightedSum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub eps1: f32,
    pub eps2: f32,
    pub threshold: ThresholdRule,
    pub cap_enforce: bool,
    /// Per-surrogate weights; empty means uniform 1/k.
    pub weights: Vec<f32>,
    pub lambda: f32,
    pub regularizer: Regularizer,
    pub clamp: (f32, f32),
    pub recompute_stage2_gradients: bool,
    pub stage1_combiner: Stage1Combiner,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            eps1: 0.1,
            eps2: 0.4,
            threshold: ThresholdRule::MeanAbs,
            cap_enforce: true,
            weights: Vec::new(),
            lambda: 0.0,
            regularizer: Regularizer::None,
            clamp: (0.0, 1.0),
            recompute_stage2_gradients: false,
            stage1_combiner: Stage1Combiner::SignVote,
        }
    }
}

impl AttackConfig {
    pub fn budget(&self) -> f32 {
        self.eps1 + self.eps2
    }

    /// Resolve the weight vector for an ensemble of `k` models.
    pub fn resolved_weights(&self, k: usize) -> Result<Vec<f32>> {
        if k == 0 {
            return Err(Error::EmptyInput { what: "ensemble" });
        }
        if self.weights.is_empty() {
            return Ok(vec![1.0 / k as f32; k]);
        }
        if self.weights.len() != k {
            return Err(Error::InvalidArg {
                op: "attack",
                detail: format!("{} weights for {k} models", self.weights.len()),
            });
        }
        validate_weights(&self.weights)?;
        Ok(self.weights.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps1 < 0.0 || self.eps2 < 0.0 {
            return Err(Error::InvalidArg {
                op: "attack",
                detail: format!("eps1 {} / eps2 {} must be ≥ 0", self.eps1, self.eps2),
            });
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArg {
                op: "attack",
                detail: format!("lambda {} must be ≥ 0", self.lambda),
            });
        }
        if self.clamp.0 > self.clamp.1 {
            return Err(Error::InvalidArg {
                op: "attack",
                detail: format!("clamp range [{}, {}] inverted", self.clamp.0, self.clamp.1),
            });
        }
        if !self.weights.is_empty() {
            validate_weights(&self.weights)?;
        }
        Ok(())
    }
}

fn validate_weights(w: &[f32]) -> Result<()> {
    if w.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArg { op: "attack", detail: "negative ensemble weight".into() });
    }
    let sum: f32 = w.iter().sum();
    if math::abs(sum - 1.0) > 1e-6 {
        return Err(Error::InvalidArg {
            op: "attack",
            detail: format!("ensemble weights sum to {sum}, want 1"),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NiFgsmConfig {
    pub eps: f32,
    /// Look-ahead scale on the momentum term.
    pub alpha: f32,
    /// Momentum coefficient.
    pub mu: f32,
    /// Iteration count T.
    pub iters: usize,
}

impl Default for NiFgsmConfig {
    fn default() -> Self {
        NiFgsmConfig { eps: 0.1, alpha: 1.0, mu: 1.0, iters: 3 }
    }
}

impl NiFgsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters < 1 {
            return Err(Error::InvalidArg { op: "ni-fgsm", detail: "iters must be ≥ 1".into() });
        }
        if self.eps < 0.0 {
            return Err(Error::InvalidArg {
                op: "ni-fgsm",
                detail: format!("eps {} must be ≥ 0", self.eps),
            });
        }
        Ok(())
    }
}

/// Everything an attack records about itself, for sidecars and protocol
/// checks downstream.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigSnapshot {
    pub method: String,
    /// Declared L∞ budget (ε for single-model attacks, ε₁+ε₂ for watertox).
    pub budget: f32,
    pub ensemble: Vec<String>,
    pub entries: Vec<(String, String)>,
}

/// Paired clean/adversarial images with the stage-2 mask and per-image
/// distortions.
#[derive(Clone, Debug)]
pub struct AdversarialBatch {
    pub clean: Tensor,
    pub adversarial: Tensor,
    pub labels: Vec<usize>,
    /// One flag per tensor element; all false for single-stage attacks.
    pub mask: Vec<bool>,
    /// Per-image L∞ distortion.
    pub linf: Vec<f32>,
    pub snapshot: ConfigSnapshot,
}

impl AdversarialBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of masked elements per image.
    pub fn mask_fraction(&self, image: usize) -> f32 {
        let per = self.clean.len() / self.len();
        let set = self.mask[image * per..(image + 1) * per].iter().filter(|&&b| b).count();
        set as f32 / per as f32
    }
}

/// ∇ₓ J(x, y): gradient of the summed cross-entropy with respect to pixels.
pub fn input_gradient(net: &Network, images: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (_, grad) = net.input_loss_grad(images, labels, Reduction::Sum)?;
    Ok(grad)
}

/// Per-model gradients and the aggregate Σ wⱼ ∇ⱼ + λ∇R, evaluated at
/// `images` with the regularizer anchored at `originals`.
pub fn composite_gradient(
    ensemble: &[&Network],
    weights: &[f32],
    lambda: f32,
    regularizer: Regularizer,
    images: &Tensor,
    originals: &Tensor,
    labels: &[usize],
) -> Result<(Vec<Tensor>, Tensor)> {
    if ensemble.is_empty() {
        return Err(Error::EmptyInput { what: "ensemble" });
    }
    if weights.len() != ensemble.len() {
        return Err(Error::InvalidArg {
            op: "composite_gradient",
            detail: format!("{} weights for {} models", weights.len(), ensemble.len()),
        });
    }
    let mut per_model = Vec::with_capacity(ensemble.len());
    for net in ensemble {
        per_model.push(input_gradient(net, images, labels)?);
    }
    let mut agg = Tensor::zeros(images.shape());
    for (g, &w) in per_model.iter().zip(weights.iter()) {
        let ad = agg.data_mut();
        for (a, &v) in ad.iter_mut().zip(g.data().iter()) {
            *a += w * v;
        }
    }
    if lambda > 0.0 && regularizer == Regularizer::SquaredDistanceToOriginal {
        if originals.shape() != images.shape() {
            return Err(Error::ShapeMismatch {
                op: "composite_gradient",
                detail: format!("{:?} vs originals {:?}", images.shape(), originals.shape()),
            });
        }
        let ad = agg.data_mut();
        for (i, a) in ad.iter_mut().enumerate() {
            *a += lambda * 2.0 * (images.data()[i] - originals.data()[i]);
        }
    }
    Ok((per_model, agg))
}

/// Consensus direction: sign(Σ wⱼ sign(∇ⱼ)) per element.
pub fn sign_vote(grads: &[Tensor], weights: &[f32]) -> Result<Tensor> {
    check_grad_set(grads, weights, "sign_vote")?;
    let mut vote = Tensor::zeros(grads[0].shape());
    for (g, &w) in grads.iter().zip(weights.iter()) {
        let vd = vote.data_mut();
        for (v, &x) in vd.iter_mut().zip(g.data().iter()) {
            *v += w * math::sign(x);
        }
    }
    Ok(vote.map(math::sign))
}

/// Weighted importance score S = Σ wⱼ |∇ⱼ| per element.
pub fn importance_scores(grads: &[Tensor], weights: &[f32]) -> Result<Tensor> {
    check_grad_set(grads, weights, "importance_scores")?;
    let mut score = Tensor::zeros(grads[0].shape());
    for (g, &w) in grads.iter().zip(weights.iter()) {
        let sd = score.data_mut();
        for (s, &x) in sd.iter_mut().zip(g.data().iter()) {
            *s += w * math::abs(x);
        }
    }
    Ok(score)
}

fn check_grad_set(grads: &[Tensor], weights: &[f32], op: &'static str) -> Result<()> {
    if grads.is_empty() {
        return Err(Error::EmptyInput { what: "gradients" });
    }
    if grads.len() != weights.len() {
        return Err(Error::InvalidArg {
            op,
            detail: format!("{} gradients vs {} weights", grads.len(), weights.len()),
        });
    }
    let shape = grads[0].shape();
    for g in grads.iter().skip(1) {
        if g.shape() != shape {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", shape, g.shape()),
            });
        }
    }
    Ok(())
}

/// Per-image boolean mask: |gradient| strictly above τ.
///
/// With `MeanAbs` the threshold is the per-image mean of |g|. When
/// `cap_enforce` is set and a threshold would select ≥ half of the image, τ
/// is raised to the per-image median of |g| (upper order statistic at rank
/// ⌊n/2⌋), which makes strict selection cover < n/2 entries.
///
/// Rank-1 tensors are treated as a single image; higher ranks treat the
/// leading axis as the batch.
pub fn importance_mask(grad: &Tensor, rule: ThresholdRule, cap_enforce: bool) -> Result<Vec<bool>> {
    if grad.is_empty() {
        return Err(Error::EmptyInput { what: "gradient" });
    }
    let (batch, per) = if grad.shape().len() >= 2 {
        (grad.shape()[0], grad.len() / grad.shape()[0])
    } else {
        (1, grad.len())
    };
    let mut mask = vec![false; grad.len()];
    let mut scratch: Vec<f32> = Vec::with_capacity(per);
    for img in 0..batch {
        let window = &grad.data()[img * per..(img + 1) * per];
        let mut tau = match rule {
            ThresholdRule::MeanAbs => {
                window.iter().map(|&v| math::abs(v)).sum::<f32>() / per as f32
            }
            ThresholdRule::Fixed(t) => t,
        };
        let count = window.iter().filter(|&&v| math::abs(v) > tau).count();
        if cap_enforce && 2 * count >= per {
            scratch.clear();
            scratch.extend(window.iter().map(|&v| math::abs(v)));
            scratch.sort_unstable_by(f32::total_cmp);
            tau = scratch[per / 2];
        }
        for (m, &v) in mask[img * per..(img + 1) * per].iter_mut().zip(window.iter()) {
            *m = math::abs(v) > tau;
        }
    }
    Ok(mask)
}

fn clamp_tensor(t: &mut Tensor, lo: f32, hi: f32) {
    for v in t.data_mut() {
        *v = math::clamp(*v, lo, hi);
    }
}

fn snapshot_entry(entries: &mut Vec<(String, String)>, key: &str, value: impl core::fmt::Display) {
    entries.push((key.to_string(), format!("{value}")));
}

/// The two-stage ensemble attack.
///
/// Stage 1 shifts every pixel by ε₁ along the stage-1 combiner direction.
/// Stage 2 adds ε₂ along the sign of the aggregated gradient, but only where
/// the importance mask selects. Gradients are evaluated at the original
/// images unless `recompute_stage2_gradients` asks for the stage-1 point.
pub fn watertox_attack(
    ensemble: &[&Network],
    images: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AdversarialBatch> {
    cfg.validate()?;
    let weights = cfg.resolved_weights(ensemble.len())?;
    let (lo, hi) = cfg.clamp;

    let (per_model, agg_at_x) = composite_gradient(
        ensemble,
        &weights,
        cfg.lambda,
        cfg.regularizer,
        images,
        images,
        labels,
    )?;
    let stage1_dir = match cfg.stage1_combiner {
        Stage1Combiner::SignVote => sign_vote(&per_model, &weights)?,
        Stage1Combiner::WeightedSum => agg_at_x.map(math::sign),
    };

    let mut x1 = images.zip_map(&stage1_dir, "watertox", |x, s| x + cfg.eps1 * s)?;
    clamp_tensor(&mut x1, lo, hi);

    let agg = if cfg.recompute_stage2_gradients {
        let (_, agg_at_x1) = composite_gradient(
            ensemble,
            &weights,
            cfg.lambda,
            cfg.regularizer,
            &x1,
            images,
            labels,
        )?;
        agg_at_x1
    } else {
        agg_at_x
    };
    let mask = importance_mask(&agg, cfg.threshold, cfg.cap_enforce)?;

    let mut x2 = x1;
    {
        let xd = x2.data_mut();
        for (i, (v, &g)) in xd.iter_mut().zip(agg.data().iter()).enumerate() {
            if mask[i] {
                *v += cfg.eps2 * math::sign(g);
            }
        }
    }
    clamp_tensor(&mut x2, lo, hi);

    let linf = x2.linf_per_row(images)?;
    let mut entries = Vec::new();
    snapshot_entry(&mut entries, "method", "watertox");
    snapshot_entry(&mut entries, "eps1", cfg.eps1);
    snapshot_entry(&mut entries, "eps2", cfg.eps2);
    match cfg.threshold {
        ThresholdRule::MeanAbs => snapshot_entry(&mut entries, "threshold", "mean-abs"),
        ThresholdRule::Fixed(t) => snapshot_entry(&mut entries, "threshold", format!("fixed({t})")),
    }
    snapshot_entry(&mut entries, "cap_enforce", cfg.cap_enforce);
    snapshot_entry(
        &mut entries,
        "weights",
        weights.iter().map(|w| format!("{w}")).collect::<Vec<_>>().join(","),
    );
    snapshot_entry(&mut entries, "lambda", cfg.lambda);
    snapshot_entry(
        &mut entries,
        "regularizer",
        match cfg.regularizer {
            Regularizer::None => "none",
            Regularizer::SquaredDistanceToOriginal => "squared-distance-to-original",
        },
    );
    snapshot_entry(&mut entries, "clamp_lo", lo);
    snapshot_entry(&mut entries, "clamp_hi", hi);
    snapshot_entry(&mut entries, "recompute_stage2_gradients", cfg.recompute_stage2_gradients);
    snapshot_entry(
        &mut entries,
        "stage1_combiner",
        match cfg.stage1_combiner {
            Stage1Combiner::SignVote => "sign-vote",
            Stage1Combiner::WeightedSum => "weighted-sum",
        },
    );
    Ok(AdversarialBatch {
        clean: images.clone(),
        adversarial: x2,
        labels: labels.to_vec(),
        mask,
        linf,
        snapshot: ConfigSnapshot {
            method: "watertox".to_string(),
            budget: cfg.budget(),
            ensemble: ensemble.iter().map(|n| n.name.clone()).collect(),
            entries,
        },
    })
}

/// Classical single-model FGSM: x + ε·sign(∇ₓJ), clamped to [0,1].
pub fn fgsm_attack(
    net: &Network,
    images: &Tensor,
    labels: &[usize],
    eps: f32,
) -> Result<AdversarialBatch> {
    if eps < 0.0 {
        return Err(Error::InvalidArg { op: "fgsm", detail: format!("eps {eps} must be ≥ 0") });
    }
    let grad = input_gradient(net, images, labels)?;
    let mut adv = images.zip_map(&grad, "fgsm", |x, g| x + eps * math::sign(g))?;
    clamp_tensor(&mut adv, 0.0, 1.0);
    let linf = adv.linf_per_row(images)?;
    let mut entries = Vec::new();
    snapshot_entry(&mut entries, "method", "fgsm");
    snapshot_entry(&mut entries, "eps", eps);
    Ok(AdversarialBatch {
        clean: images.clone(),
        adversarial: adv,
        labels: labels.to_vec(),
        mask: vec![false; images.len()],
        linf,
        snapshot: ConfigSnapshot {
            method: "fgsm".to_string(),
            budget: eps,
            ensemble: vec![net.name.clone()],
            entries,
        },
    })
}

/// Nesterov iterative FGSM.
///
/// Runs exactly T iterations of
///   g_t = ∇ₓJ(x_{t−1} + α·v_{t−1}, y)
///   v_t = μ·v_{t−1} + g_t / ‖g_t‖₁ (per image; 0 when the norm vanishes)
///   x_t = clamp(x_{t−1} + (ε/T)·sign(v_t))
/// The look-ahead point is evaluated as-is (it may leave the pixel range).
pub fn ni_fgsm_attack(
    net: &Network,
    images: &Tensor,
    labels: &[usize],
    cfg: &NiFgsmConfig,
) -> Result<AdversarialBatch> {
    cfg.validate()?;
    let n = images.shape()[0];
    let per = images.len() / n;
    let step = cfg.eps / cfg.iters as f32;
    let mut x = images.clone();
    let mut v = Tensor::zeros(images.shape());
    for _ in 0..cfg.iters {
        let lookahead = x.zip_map(&v, "ni-fgsm", |xe, ve| xe + cfg.alpha * ve)?;
        let g = input_gradient(net, &lookahead, labels)?;
        {
            let vd = v.data_mut();
            for img in 0..n {
                let gw = &g.data()[img * per..(img + 1) * per];
                let l1: f32 = gw.iter().map(|&e| math::abs(e)).sum();
                let inv = if l1 == 0.0 { 0.0 } else { 1.0 / l1 };
                for (ve, &ge) in vd[img * per..(img + 1) * per].iter_mut().zip(gw.iter()) {
                    *ve = cfg.mu * *ve + ge * inv;
                }
            }
        }
        {
            let xd = x.data_mut();
            for (xe, &ve) in xd.iter_mut().zip(v.data().iter()) {
                *xe = math::clamp(*xe + step * math::sign(ve), 0.0, 1.0);
            }
        }
    }
    let linf = x.linf_per_row(images)?;
    let mut entries = Vec::new();
    snapshot_entry(&mut entries, "method", "nifgsm");
    snapshot_entry(&mut entries, "eps", cfg.eps);
    snapshot_entry(&mut entries, "alpha", cfg.alpha);
    snapshot_entry(&mut entries, "mu", cfg.mu);
    snapshot_entry(&mut entries, "iters", cfg.iters);
    Ok(AdversarialBatch {
        clean: images.clone(),
        adversarial: x,
        labels: labels.to_vec(),
        mask: vec![false; images.len()],
        linf,
        snapshot: ConfigSnapshot {
            method: "nifgsm".to_string(),
            budget: cfg.eps,
            ensemble: vec![net.name.clone()],
            entries,
        },
    })
}
