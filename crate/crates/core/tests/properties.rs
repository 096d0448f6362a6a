use std::path::Path;

use proptest::prelude::*;

use sparsevlm::datagen::{generate, TaskSpec};
use sparsevlm::io::{decode_dataset, encode_dataset, Checkpoint};
use sparsevlm::lora::{attach_adapters, batch_gradients, merge, AdapterMode, TrainConfig};
use sparsevlm::model::{Dims, Modality, ToyVlm, WeightMode};
use sparsevlm::numeric::{softmax_row, Matrix, Rng};
use sparsevlm::pruning::{prune, ComparisonGroup, ScoringMetric, SparsitySpec};

fn spec_strategy() -> impl Strategy<Value = SparsitySpec> {
    prop_oneof![
        (0.0..1.0f64).prop_map(|r| SparsitySpec::unstructured(r, ComparisonGroup::PerLayer)),
        (0.0..1.0f64).prop_map(|r| SparsitySpec::unstructured(r, ComparisonGroup::Global)),
        Just(SparsitySpec::n_of_m(2, 4)),
        Just(SparsitySpec::n_of_m(4, 8)),
    ]
}

/// A model in one of the states a checkpoint can hold: dense, pruned, with
/// live adapters, or merged.
fn model_in_state(seed: u64, spec: SparsitySpec, stage: u8, dense: bool) -> ToyVlm {
    let data = generate(&TaskSpec::default(), 24, seed).unwrap().samples;
    let mut m = ToyVlm::new(Dims::default(), seed).unwrap();
    if stage == 0 {
        return m;
    }
    let targets = [(Modality::Vision, spec), (Modality::Language, spec)];
    prune(&mut m, ScoringMetric::Wanda, &data, &targets).unwrap();
    if stage == 1 {
        return m;
    }
    let mode = if dense { AdapterMode::Dense } else { AdapterMode::Sparse };
    let cfg = TrainConfig { mode, seed, ..TrainConfig::default() };
    attach_adapters(&mut m, &cfg, &[Modality::Language, Modality::Interface]).unwrap();
    let mut rng = Rng::new(seed);
    for l in m.layers_mut() {
        if let Some(a) = &mut l.adapter {
            a.b = Matrix::from_fn(a.b.rows(), a.b.cols(), |_, _| 0.1 * rng.normal());
        }
    }
    if stage == 3 {
        merge(&mut m).unwrap();
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn checkpoint_round_trip(seed in 0u64..1000, spec in spec_strategy(), stage in 0u8..4, dense: bool) {
        let m = model_in_state(seed, spec, stage, dense);
        let bytes = Checkpoint::from_model(&m).encode();
        let back = Checkpoint::decode(&bytes, Path::new("x")).unwrap().to_model().unwrap();
        prop_assert!(back == m);
        prop_assert_eq!(Checkpoint::from_model(&back).encode(), bytes);
        let s = &generate(&TaskSpec::default(), 1, seed).unwrap().samples[0];
        let (a, b) = (m.view(WeightMode::MaskedStudent), back.view(WeightMode::MaskedStudent));
        let la = m.logits(&a, &s.vision_in, &s.text_in).unwrap();
        let lb = back.logits(&b, &s.vision_in, &s.text_in).unwrap();
        prop_assert!(la.iter().zip(&lb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_checkpoints_are_rejected(seed in 0u64..50, cut in 1usize..200) {
        let bytes = Checkpoint::from_model(&model_in_state(seed, SparsitySpec::n_of_m(2, 4), 1, false)).encode();
        let e = Checkpoint::decode(&bytes[..bytes.len() - cut], Path::new("x")).unwrap_err();
        prop_assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn dataset_round_trip(seed in 0u64..1000, count in 0usize..64, classes in 2usize..12, noise in 0.0..2.0f64) {
        let spec = TaskSpec { classes, noise, ..TaskSpec::default() };
        let data = generate(&spec, count, seed).unwrap();
        let bytes = encode_dataset(&data);
        let back = decode_dataset(&bytes, Path::new("x")).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(encode_dataset(&back), bytes);
    }
}

#[test]
fn output_layer_gradient_matches_closed_form() {
    for seed in 0..5 {
        let m = ToyVlm::new(Dims::default(), seed).unwrap();
        let s = generate(&TaskSpec::default(), 1, seed + 40).unwrap().samples;
        let (logits, tape) = m.forward(&s[0].vision_in, &s[0].text_in, WeightMode::MaskedStudent).unwrap();
        let p = softmax_row(&logits).unwrap();
        let idx = m.layer_index("lang2").unwrap();
        let h = tape.layer_input(idx);
        let g = batch_gradients(&m, &s, 1.0).unwrap().model;
        for (i, &pi) in p.iter().enumerate() {
            let err = pi - if i == s[0].label { 1.0 } else { 0.0 };
            assert!((g.biases[idx][i] - err).abs() <= 1e-15, "bias {i}");
            for (j, &hj) in h.iter().enumerate() {
                assert!((g.weights[idx].get(i, j) - err * hj).abs() <= 1e-15, "weight [{i}, {j}]");
            }
        }
    }
}
