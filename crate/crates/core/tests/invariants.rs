//! Property tests for the attack invariants: distortion budgets, pixel
//! range, mask cardinality, stage structure, and per-image independence
//! (the contract that makes parallel generation deterministic).

use proptest::prelude::*;

use watertox_core::attack::{
    importance_mask, ni_fgsm_attack, watertox_attack, AttackConfig, NiFgsmConfig, ThresholdRule,
};
use watertox_core::nn::{LayerSpec, Network};
use watertox_core::rng::{rng_fill, DetRng, Dist};
use watertox_core::tensor::Tensor;

fn small_net(name: &str, seed: u64) -> Network {
    Network::new(
        name,
        "probe",
        (1, 6, 6),
        4,
        vec![
            LayerSpec::Conv { name: "c".into(), out_c: 4, k: 3, stride: 1, pad: 1, groups: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { k: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { name: "fc".into(), out_f: 4 },
        ],
        seed,
    )
    .unwrap()
}

fn random_images(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let images = rng_fill(&[n, 1, 6, 6], Dist::Uniform { a: 0.0, b: 1.0 }, seed).unwrap();
    let mut rng = DetRng::derive(seed, 1);
    let labels = (0..n).map(|_| rng.below(4)).collect();
    (images, labels)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn watertox_respects_budget_range_and_cap(
        seed in 0u64..10_000,
        eps1 in 0.0f32..0.5,
        eps2 in 0.0f32..0.5,
    ) {
        let a = small_net("a", seed.wrapping_add(11));
        let b = small_net("b", seed.wrapping_add(23));
        let (images, labels) = random_images(5, seed);
        let cfg = AttackConfig { eps1, eps2, ..AttackConfig::default() };
        let batch = watertox_attack(&[&a, &b], &images, &labels, &cfg).unwrap();

        let per = images.len() / 5;
        for img in 0..5 {
            prop_assert!(batch.linf[img] <= eps1 + eps2 + 1e-6);
            let set = batch.mask[img * per..(img + 1) * per].iter().filter(|&&m| m).count();
            prop_assert!(2 * set < per, "mask covers {set} of {per}");
        }
        prop_assert!(batch.adversarial.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn stage_deltas_are_quantized_on_interior_pixels(
        seed in 0u64..10_000,
    ) {
        // interior pixels + small eps keep the clamp inactive, so the total
        // per-pixel delta must be exactly one of the nine stage combinations
        let eps1 = 0.05f32;
        let eps2 = 0.11f32;
        let a = small_net("a", seed.wrapping_add(5));
        let b = small_net("b", seed.wrapping_add(9));
        let images = rng_fill(&[4, 1, 6, 6], Dist::Uniform { a: 0.3, b: 0.7 }, seed).unwrap();
        let mut rng = DetRng::derive(seed, 7);
        let labels: Vec<usize> = (0..4).map(|_| rng.below(4)).collect();
        let cfg = AttackConfig { eps1, eps2, ..AttackConfig::default() };
        let batch = watertox_attack(&[&a, &b], &images, &labels, &cfg).unwrap();
        for (i, (&adv, &clean)) in
            batch.adversarial.data().iter().zip(images.data().iter()).enumerate()
        {
            let delta = adv - clean;
            let stage2 = if batch.mask[i] { [-eps2, 0.0, eps2] } else { [0.0, 0.0, 0.0] };
            let mut ok = false;
            for s1 in [-eps1, 0.0, eps1] {
                for s2 in stage2 {
                    if (delta - (s1 + s2)).abs() <= 1e-6 {
                        ok = true;
                    }
                }
            }
            prop_assert!(ok, "pixel {i}: delta {delta} not a stage combination");
            if !batch.mask[i] {
                prop_assert!(delta.abs() <= eps1 + 1e-6, "unmasked pixel moved {delta}");
            }
        }
    }

    #[test]
    fn ni_fgsm_respects_budget_and_range(
        seed in 0u64..10_000,
        eps in 0.0f32..0.4,
        iters in 1usize..5,
    ) {
        let net = small_net("n", seed.wrapping_add(3));
        let (images, labels) = random_images(4, seed);
        let cfg = NiFgsmConfig { eps, alpha: 1.0, mu: 1.0, iters };
        let batch = ni_fgsm_attack(&net, &images, &labels, &cfg).unwrap();
        for img in 0..4 {
            prop_assert!(batch.linf[img] <= eps + 1e-6);
        }
        prop_assert!(batch.adversarial.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn attacks_are_per_image_independent(
        seed in 0u64..10_000,
    ) {
        // attacking a batch equals attacking its images one by one: the
        // contract behind order-stable parallel generation
        let a = small_net("a", seed.wrapping_add(1));
        let b = small_net("b", seed.wrapping_add(2));
        let (images, labels) = random_images(3, seed);
        let cfg = AttackConfig::default();
        let full = watertox_attack(&[&a, &b], &images, &labels, &cfg).unwrap();
        let per = images.len() / 3;
        for img in 0..3 {
            let one = Tensor::new(
                vec![1, 1, 6, 6],
                images.data()[img * per..(img + 1) * per].to_vec(),
            )
            .unwrap();
            let single = watertox_attack(&[&a, &b], &one, &labels[img..=img], &cfg).unwrap();
            prop_assert_eq!(
                single.adversarial.data(),
                &full.adversarial.data()[img * per..(img + 1) * per]
            );
            prop_assert_eq!(&single.mask[..], &full.mask[img * per..(img + 1) * per]);
        }
    }
}

#[test]
fn mean_abs_rule_selects_the_gaussian_exceedance_fraction() {
    // 10^6 standard-normal entries: the fraction with |g| above the mean of
    // |g| converges to 2(1 − Φ(√(2/π))) ≈ 0.4249
    let g = rng_fill(&[1_000_000], Dist::Normal { mu: 0.0, sigma: 1.0 }, 424_242).unwrap();
    let mask = importance_mask(&g, ThresholdRule::MeanAbs, false).unwrap();
    let frac = mask.iter().filter(|&&m| m).count() as f64 / 1e6;
    assert!(
        (frac - 0.4247).abs() <= 0.005,
        "selected fraction {frac} outside 0.4247 ± 0.005"
    );
    // and the analytic value itself sits inside the same window
    let analytic = 0.424_937_483_683_362;
    assert!((frac - analytic).abs() < 0.003, "fraction {frac} vs analytic {analytic}");
}

#[test]
fn attack_output_is_deterministic() {
    let a = small_net("a", 77);
    let b = small_net("b", 78);
    let (images, labels) = random_images(6, 123);
    let cfg = AttackConfig::default();
    let one = watertox_attack(&[&a, &b], &images, &labels, &cfg).unwrap();
    let two = watertox_attack(&[&a, &b], &images, &labels, &cfg).unwrap();
    assert_eq!(one.adversarial, two.adversarial);
    assert_eq!(one.mask, two.mask);
    assert_eq!(one.linf, two.linf);
}
