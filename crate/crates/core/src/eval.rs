//! Evaluation protocols: base-model degradation, zero-shot transfer with the
//! empirical transfer floor θ̂ and per-target tolerance ξ̂, the matched-budget
//! comparison against NI-FGSM arms (paired t statistic, ASR dispersion), and
//! leave-one-out ablation.
//!
//! ASR is defined as 1 − adv_acc / clean_acc; this is the formula that
//! reproduces the published success-rate tables from their accuracy pairs.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::attack::{self, AdversarialBatch, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::stats;
use crate::tensor::Tensor;

/// Top-1 accuracy; argmax ties break toward the lowest class index.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f32> {
    if ds.is_empty() {
        return Err(Error::EmptyInput { what: "evaluation dataset" });
    }
    let preds = predictions(net, &ds.images)?;
    let correct = preds.iter().zip(ds.labels.iter()).filter(|(p, l)| p == l).count();
    Ok(correct as f32 / ds.len() as f32)
}

/// Argmax class per image, lowest index on ties.
pub fn predictions(net: &Network, images: &Tensor) -> Result<Vec<usize>> {
    let n = images.shape()[0];
    let mut out = Vec::with_capacity(n);
    // bounded forward chunks keep tape memory flat on big splits
    let chunk = 256usize.min(n).max(1);
    let s = images.shape();
    let per = s[1] * s[2] * s[3];
    let mut start = 0usize;
    while start < n {
        let len = chunk.min(n - start);
        let batch = Tensor::new(
            alloc::vec![len, s[1], s[2], s[3]],
            images.data()[start * per..(start + len) * per].to_vec(),
        )?;
        let logits = net.forward(&batch)?;
        let k = logits.shape()[1];
        for row in logits.data().chunks_exact(k) {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(best);
        }
        start += len;
    }
    Ok(out)
}

/// ASR = 1 − adv/clean; undefined (None) when clean accuracy is zero.
pub fn attack_success_rate(clean_acc: f32, adv_acc: f32) -> Option<f32> {
    if clean_acc <= 0.0 {
        None
    } else {
        Some(1.0 - adv_acc / clean_acc)
    }
}

/// Per-target metrics row.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMetrics {
    pub name: String,
    pub clean_acc: f32,
    pub adv_acc: f32,
    pub asr: Option<f32>,
    /// 1 − P(prediction changed); zero-shot reports only.
    pub xi_hat: Option<f32>,
    /// Misclassification rate on adversarial images (1 − adv_acc).
    pub misclass_rate: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    Base,
    ZeroShot,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub kind: ReportKind,
    pub targets: Vec<TargetMetrics>,
    /// min over targets of the adversarial misclassification rate.
    pub theta_hat: Option<f32>,
    /// True when the attack had a zero perturbation budget.
    pub degenerate_null_attack: bool,
    /// Config snapshot entries copied from the attack batch.
    pub snapshot: Vec<(String, String)>,
}

impl EvalReport {
    /// ASR recomputed from the stored accuracies must reproduce the stored
    /// column; used as a self-consistency check.
    pub fn asr_consistent(&self, tol: f32) -> bool {
        self.targets.iter().all(|t| match (t.asr, attack_success_rate(t.clean_acc, t.adv_acc)) {
            (Some(a), Some(b)) => crate::math::abs(a - b) <= tol,
            (None, None) => true,
            _ => false,
        })
    }
}

fn eval_pair(net: &Network, batch: &AdversarialBatch) -> Result<(f32, f32, f32)> {
    let n = batch.len();
    let clean_preds = predictions(net, &batch.clean)?;
    let adv_preds = predictions(net, &batch.adversarial)?;
    let clean_acc =
        clean_preds.iter().zip(batch.labels.iter()).filter(|(p, l)| p == l).count() as f32 / n as f32;
    let adv_acc =
        adv_preds.iter().zip(batch.labels.iter()).filter(|(p, l)| p == l).count() as f32 / n as f32;
    let changed =
        clean_preds.iter().zip(adv_preds.iter()).filter(|(a, b)| a != b).count() as f32 / n as f32;
    Ok((clean_acc, adv_acc, changed))
}

/// Base evaluation: the surrogates themselves are the targets. The batch
/// must have been generated against exactly this surrogate set.
pub fn run_base_eval(surrogates: &[&Network], batch: &AdversarialBatch) -> Result<EvalReport> {
    if batch.is_empty() {
        return Err(Error::EmptyInput { what: "adversarial batch" });
    }
    let names: Vec<String> = surrogates.iter().map(|n| n.name.clone()).collect();
    if names != batch.snapshot.ensemble {
        return Err(Error::ProtocolViolation {
            detail: format!(
                "batch was generated against {:?}, evaluating {:?}",
                batch.snapshot.ensemble, names
            ),
        });
    }
    let mut targets = Vec::with_capacity(surrogates.len());
    for net in surrogates {
        let (clean_acc, adv_acc, _) = eval_pair(net, batch)?;
        targets.push(TargetMetrics {
            name: net.name.clone(),
            clean_acc,
            adv_acc,
            asr: attack_success_rate(clean_acc, adv_acc),
            xi_hat: None,
            misclass_rate: 1.0 - adv_acc,
        });
    }
    Ok(EvalReport {
        kind: ReportKind::Base,
        targets,
        theta_hat: None,
        degenerate_null_attack: batch.snapshot.budget == 0.0,
        snapshot: batch.snapshot.entries.clone(),
    })
}

/// Zero-shot evaluation against held-out targets. Any overlap (by instance
/// name or architecture tag) with the generating ensemble is a protocol
/// violation.
pub fn run_zeroshot_eval(batch: &AdversarialBatch, targets: &[&Network]) -> Result<EvalReport> {
    run_zeroshot_with_tags(batch, targets, &[])
}

/// Zero-shot evaluation with the surrogate architecture tags known, so tag
/// overlap is rejected as well as name overlap.
pub fn run_zeroshot_with_tags(
    batch: &AdversarialBatch,
    targets: &[&Network],
    surrogate_tags: &[String],
) -> Result<EvalReport> {
    if batch.is_empty() {
        return Err(Error::EmptyInput { what: "adversarial batch" });
    }
    if targets.is_empty() {
        return Err(Error::EmptyInput { what: "zero-shot targets" });
    }
    for net in targets {
        if batch.snapshot.ensemble.contains(&net.name) {
            return Err(Error::ProtocolViolation {
                detail: format!("target {} was part of the generating ensemble", net.name),
            });
        }
        if surrogate_tags.iter().any(|t| *t == net.tag) {
            return Err(Error::ProtocolViolation {
                detail: format!("target {} shares architecture tag {} with a surrogate", net.name, net.tag),
            });
        }
    }
    let mut rows = Vec::with_capacity(targets.len());
    let mut theta = f32::INFINITY;
    for net in targets {
        let (clean_acc, adv_acc, changed) = eval_pair(net, batch)?;
        let mis = 1.0 - adv_acc;
        if mis < theta {
            theta = mis;
        }
        rows.push(TargetMetrics {
            name: net.name.clone(),
            clean_acc,
            adv_acc,
            asr: attack_success_rate(clean_acc, adv_acc),
            xi_hat: Some(1.0 - changed),
            misclass_rate: mis,
        });
    }
    Ok(EvalReport {
        kind: ReportKind::ZeroShot,
        targets: rows,
        theta_hat: Some(theta),
        degenerate_null_attack: batch.snapshot.budget == 0.0,
        snapshot: batch.snapshot.entries.clone(),
    })
}

/// One method's ASR row in the comparison report.
#[derive(Clone, Debug)]
pub struct MethodRow {
    pub label: String,
    pub asr: Vec<Option<f32>>,
    pub mean_asr: f32,
    pub asr_std: f32,
}

#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub target_names: Vec<String>,
    pub watertox: MethodRow,
    pub arms: Vec<MethodRow>,
    pub best_arm: String,
    /// Paired t statistic (watertox − best arm) over targets, ν = targets−1.
    pub t_stat: f64,
    pub p_value: f64,
}

fn method_row(label: &str, batch: &AdversarialBatch, targets: &[&Network]) -> Result<MethodRow> {
    let mut asr = Vec::with_capacity(targets.len());
    for net in targets {
        let (clean_acc, adv_acc, _) = eval_pair(net, batch)?;
        asr.push(attack_success_rate(clean_acc, adv_acc));
    }
    let defined: Vec<f64> = asr.iter().filter_map(|a| a.map(|v| v as f64)).collect();
    let mean = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(MethodRow {
        label: label.to_string(),
        asr,
        mean_asr: mean as f32,
        asr_std: stats::sample_std(&defined) as f32,
    })
}

/// Matched-budget comparison: the watertox batch against one NI-FGSM batch
/// per surrogate, all evaluated on the same zero-shot target set.
pub fn run_comparison(
    watertox_batch: &AdversarialBatch,
    arm_batches: &[(String, AdversarialBatch)],
    targets: &[&Network],
) -> Result<ComparisonReport> {
    if targets.len() < 2 {
        return Err(Error::InvalidArg {
            op: "run_comparison",
            detail: "need at least 2 targets for paired statistics".into(),
        });
    }
    if arm_batches.is_empty() {
        return Err(Error::EmptyInput { what: "comparison arms" });
    }
    for (label, b) in arm_batches {
        if b.len() != watertox_batch.len() {
            return Err(Error::ProtocolViolation {
                detail: format!(
                    "arm {label} evaluated {} images, watertox {}",
                    b.len(),
                    watertox_batch.len()
                ),
            });
        }
    }
    let watertox = method_row("watertox", watertox_batch, targets)?;
    let mut arms = Vec::with_capacity(arm_batches.len());
    for (label, batch) in arm_batches {
        arms.push(method_row(label, batch, targets)?);
    }
    let best = arms
        .iter()
        .max_by(|a, b| a.mean_asr.total_cmp(&b.mean_asr))
        .expect("nonempty arms");
    let diffs: Vec<f64> = watertox
        .asr
        .iter()
        .zip(best.asr.iter())
        .map(|(a, b)| (a.unwrap_or(0.0) - b.unwrap_or(0.0)) as f64)
        .collect();
    let (t_stat, nu) = stats::paired_t(&diffs)?;
    let p_value = stats::two_sided_p(t_stat, nu);
    Ok(ComparisonReport {
        target_names: targets.iter().map(|n| n.name.clone()).collect(),
        best_arm: best.label.clone(),
        watertox,
        arms,
        t_stat,
        p_value,
    })
}

/// One ablation row: the configuration label and its per-target ASR.
#[derive(Clone, Debug)]
pub struct AblationResult {
    pub label: String,
    pub asr: Vec<Option<f32>>,
}

/// Leave-one-out ablation: the complete ensemble plus one row per removed
/// surrogate, each re-attacked with weights renormalized to sum 1 and
/// evaluated on the zero-shot targets.
pub fn run_ablation(
    surrogates: &[&Network],
    targets: &[&Network],
    eval_ds: &Dataset,
    cfg: &AttackConfig,
) -> Result<Vec<AblationResult>> {
    if surrogates.is_empty() {
        return Err(Error::EmptyInput { what: "ensemble" });
    }
    let weights = cfg.resolved_weights(surrogates.len())?;
    let mut rows = Vec::with_capacity(surrogates.len() + 1);

    let mut run_one = |label: String, members: Vec<&Network>, w: Vec<f32>| -> Result<()> {
        if members.is_empty() {
            return Err(Error::EmptyInput { what: "ensemble after removal" });
        }
        let sub_cfg = AttackConfig { weights: w, ..cfg.clone() };
        let batch = attack::watertox_attack(&members, &eval_ds.images, &eval_ds.labels, &sub_cfg)?;
        let report = run_zeroshot_eval(&batch, targets)?;
        rows.push(AblationResult {
            label,
            asr: report.targets.iter().map(|t| t.asr).collect(),
        });
        Ok(())
    };

    run_one("complete".to_string(), surrogates.to_vec(), weights.clone())?;
    for drop in 0..surrogates.len() {
        let members: Vec<&Network> = surrogates
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != drop)
            .map(|(_, n)| *n)
            .collect();
        let kept: Vec<f32> = weights
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != drop)
            .map(|(_, &w)| w)
            .collect();
        let total: f32 = kept.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArg {
                op: "run_ablation",
                detail: format!("weights after removing {} sum to {total}", surrogates[drop].name),
            });
        }
        let renorm: Vec<f32> = kept.iter().map(|&w| w / total).collect();
        run_one(format!("no-{}", surrogates[drop].name), members, renorm)?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::nn::LayerSpec;

    fn const_net(name: &str, k: usize) -> Network {
        // zero weights produce constant logits: predicts class 0 under ties
        let mut net = Network::new(
            name,
            "const",
            (1, 2, 2),
            k,
            alloc::vec![
                LayerSpec::Flatten,
                LayerSpec::Linear { name: "fc".into(), out_f: k },
            ],
            0,
        )
        .unwrap();
        net.set_param("fc.w", Tensor::zeros(&[k, 4])).unwrap();
        net.set_param("fc.b", Tensor::zeros(&[k])).unwrap();
        net
    }

    fn balanced_ds(per_class: usize, k: usize) -> Dataset {
        let n = per_class * k;
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            labels.push(i % k);
        }
        Dataset::new(Tensor::full(&[n, 1, 2, 2], 0.3), labels, k, Split::Val).unwrap()
    }

    #[test]
    fn constant_logits_score_class0_frequency() {
        let net = const_net("c", 4);
        let ds = balanced_ds(5, 4);
        let acc = accuracy(&net, &ds).unwrap();
        assert!((acc - 0.25).abs() < 1e-6);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let net = const_net("c", 2);
        let ds = balanced_ds(1, 2);
        let empty = Dataset { labels: Vec::new(), ..ds };
        assert!(matches!(accuracy(&net, &empty), Err(Error::EmptyInput { .. })));
    }

    #[test]
    fn asr_formula_recovers_published_success_rates() {
        // (clean, adv) accuracy pairs and the success rates they must yield
        let cases = [
            (0.387, 0.005, 0.9871),
            (0.578, 0.025, 0.9567),
            (0.112, 0.003, 0.9732),
            (0.633, 0.020, 0.9684),
            (0.491, 0.005, 0.9898),
            (0.637, 0.012, 0.9812),
        ];
        for (clean, adv, want) in cases {
            let got = attack_success_rate(clean, adv).unwrap();
            assert!(
                (got - want).abs() < 5e-5,
                "clean {clean} adv {adv}: {got} vs {want}"
            );
        }
        assert_eq!(attack_success_rate(0.5, 0.5), Some(0.0));
        assert_eq!(attack_success_rate(0.0, 0.0), None);
    }
}
