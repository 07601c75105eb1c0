//! Cross-module contracts: the source-free sentinel, the frozen-head
//! guarantee under a full run, and trained disagreement on a rotated pair.

use sfda::data::{gen_two_moons_shift, Dataset, DomainPair, Standardizer};
use sfda::losses::AdaptationWeights;
use sfda::model::{init_model, ClassifierBankSpec, GeneratorSpec};
use sfda::numerics::OptimizerConfig;
use sfda::pipeline::{adapt_target, evaluate, pretrain_source, AdaptConfig, PretrainConfig};

fn model(seed: u64, k: usize) -> sfda::model::ModelState {
    init_model(
        GeneratorSpec {
            input_dim: 2,
            hidden_dims: vec![16],
            feature_dim: 8,
        },
        ClassifierBankSpec {
            k,
            c: 2,
            head_hidden: 8,
        },
        seed,
    )
    .unwrap()
}

#[test]
fn adaptation_cannot_see_target_labels() {
    // sentinel: two pairs identical except for their target labels must
    // produce bit-identical adapted parameters
    let pair = gen_two_moons_shift(80, 0.08, 0.5, 5).unwrap();
    let (pair, _) = Standardizer::standardize_pair(&pair);
    let mut scrambled = pair.clone();
    let flipped: Vec<usize> = scrambled
        .target
        .labels()
        .unwrap()
        .iter()
        .map(|&l| 1 - l)
        .collect();
    scrambled.target =
        Dataset::new(scrambled.target.x.clone(), Some(flipped), 2, "sentinel").unwrap();

    let cfg = AdaptConfig {
        epochs: 2,
        batch_size: 20,
        weights: AdaptationWeights::new(0.5, 0.1),
        pseudo_start_epoch: 1,
        pseudo_interval: 1,
        optimizer: OptimizerConfig::with_defaults(0.02, 8).unwrap(),
    };
    let adapt = |p: &DomainPair| {
        adapt_target(model(5, 3), &p.target_for_adaptation(), &cfg)
            .unwrap()
            .model
    };
    let a = adapt(&pair);
    let b = adapt(&scrambled);
    for (pa, pb) in a.params().iter().zip(b.params().iter()) {
        assert_eq!(pa.value().data(), pb.value().data());
    }
}

#[test]
fn rotated_moons_show_disagreement_after_pretraining() {
    let pair = gen_two_moons_shift(200, 0.08, 30f64.to_radians(), 9).unwrap();
    let (pair, _) = Standardizer::standardize_pair(&pair);
    let cfg = PretrainConfig {
        epochs: 10,
        tau: 0.1,
        alpha_s: 0.5,
        inner_cap: 20,
        batch_size: 25,
        optimizer: OptimizerConfig::with_defaults(0.05, 10 * 8).unwrap(),
    };
    let out = pretrain_source(model(9, 2), &pair.source, &cfg).unwrap();
    let report = evaluate(&out.model, &pair.target).unwrap();
    assert!(
        report.disagreement > 0.0,
        "rotated target shows no disagreement"
    );
}
