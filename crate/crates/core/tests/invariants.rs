use proptest::prelude::*;

use cen::model::{EncoderSpec, FamilySpec};
use cen::posthoc::{fit_surrogate, relative_l2_error, PerturbationConfig, PerturbationMode, SurrogateTarget};
use cen::{
    attention_compose, Attention, Batch, Dataset, DenseMatrix, Dictionary, ModelSpec, Omega, Regularization, Rng,
    SurvivalExplanation, Targets,
};

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_lies_on_the_simplex(logits in prop::collection::vec(-30.0f64..30.0, 1..8)) {
        let a = Attention::from_logits(&logits).unwrap();
        prop_assert!(a.as_slice().iter().all(|&v| v >= 0.0));
        prop_assert!((a.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compose_is_linear_in_attention(
        (k, p) in (1usize..5, 1usize..6),
        seed in any::<u64>(),
        lambda in 0.0f64..1.0,
    ) {
        let mut rng = Rng::new(seed);
        let atoms = DenseMatrix::from_vec(k, p, (0..k * p).map(|_| rng.normal()).collect()).unwrap();
        let dict = Dictionary::new(atoms).unwrap();
        let a1 = Attention::from_logits(&(0..k).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap();
        let a2 = Attention::from_logits(&(0..k).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap();
        let mixed: Vec<f64> = a1.as_slice().iter().zip(a2.as_slice()).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        let lhs = attention_compose(&Attention::new(mixed).unwrap(), &dict).unwrap();
        let t1 = attention_compose(&a1, &dict).unwrap();
        let t2 = attention_compose(&a2, &dict).unwrap();
        for j in 0..p {
            prop_assert!((lhs[j] - (lambda * t1[j] + (1.0 - lambda) * t2[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn survival_distribution_is_normalized(
        (m, d) in (1usize..=20, 1usize..5),
        seed in any::<u64>(),
        om in vec_of(3),
    ) {
        let mut rng = Rng::new(seed);
        let w: Vec<f64> = (0..m * d).map(|_| rng.normal()).collect();
        let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let omega = Omega { w00: om[0], w01: om[1], w11: om[2] };
        let e = SurvivalExplanation::from_theta(&w, m, d, omega).unwrap();
        let lp = e.log_probs(&x).unwrap();
        let p: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);

        let s = e.survival_curve(&x).unwrap();
        prop_assert_eq!(s[0], 1.0);
        prop_assert!(s.windows(2).all(|v| v[1] <= v[0]));

        for j in 0..m {
            let tail: f64 = p[j + 1..].iter().sum();
            prop_assert!((e.censored_logprob(&x, j).unwrap() - tail.ln()).abs() < 1e-10);
        }
        prop_assert!((e.censored_logprob(&x, m).unwrap() - lp[m]).abs() < 1e-10);
    }

    #[test]
    fn entropy_is_nonnegative_and_order_free(
        seed in any::<u64>(),
        n in 2usize..12,
        classes in 2usize..4,
    ) {
        let mut rng = Rng::new(seed);
        let spec = ModelSpec {
            family: FamilySpec::Linear { classes },
            encoder: EncoderSpec::Mlp { hidden: vec![3], dropout: 0.0 },
            dictionary_size: Some(3),
            learn_omega: false,
        };
        let model = spec.build(2, 2, Regularization::none(), &mut rng).unwrap();
        let c = DenseMatrix::from_vec(n, 2, (0..2 * n).map(|_| 2.0 * rng.normal()).collect()).unwrap();
        let x = DenseMatrix::from_vec(n, 2, (0..2 * n).map(|_| 2.0 * rng.normal()).collect()).unwrap();
        let y = (0..n).map(|_| rng.below(classes)).collect();
        let data = Dataset::new(c, x, Targets::Classes(y)).unwrap();
        let idx = data.all_indices();
        let h = model.entropy_estimate(&Batch::new(&data, &idx).unwrap()).unwrap();
        // a cross-entropy, so only the lower bound holds
        prop_assert!(h >= -1e-12);

        let perm = rng.permutation(n);
        let h2 = model.entropy_estimate(&Batch::new(&data, &perm).unwrap()).unwrap();
        prop_assert!((h - h2).abs() < 1e-12);
    }
}

#[test]
fn recovery_error_shrinks_with_more_samples() {
    // black box σ(w(c)ᵀx) with smoothly varying weights
    let weights = |c: &[f64]| vec![1.0 + 0.5 * c[0], -2.0 + 0.3 * c[1]];
    let black_box = |x: &[f64], c: &[f64]| {
        let z: f64 = weights(c).iter().zip(x).map(|(w, v)| w * v).sum();
        Ok(cen::numeric::sigmoid(z))
    };
    let (x, c) = ([0.3, -0.2], [0.5, 1.0]);
    let truth = weights(&c);
    let mut medians = Vec::new();
    for samples in [125, 250, 500, 1000, 2000] {
        let cfg = PerturbationConfig {
            samples,
            scale_x: 0.3,
            scale_c: 0.3,
            kernel_width: 1.0,
            ridge: 0.0,
            target: SurrogateTarget::Logit,
            mode: PerturbationMode::Joint,
        };
        let mut errs: Vec<f64> = (0..20)
            .map(|seed| {
                let s = fit_surrogate(black_box, &x, &c, &cfg, &mut Rng::new(seed)).unwrap();
                relative_l2_error(&s.weights, &truth)
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        medians.push((errs[9] + errs[10]) / 2.0);
    }
    assert!(medians.windows(2).all(|m| m[1] <= m[0]), "{medians:?}");
}
