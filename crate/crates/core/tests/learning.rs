//! End-to-end learning check on synthetic scenes: train on one split, ground
//! held-out queries, and verify the loss drops and selection accuracy is
//! high.

use pointground_core::encoders::{build_providers, EncoderConfig, PointBackbone};
use pointground_core::evaluation::{outcome_for, selection_accuracy};
use pointground_core::inference::Grounder;
use pointground_core::model::{GroundingModel, ModelConfig};
use pointground_core::projection::ExtensionMode;
use pointground_core::scene::{generate_synthetic_scene, synthetic_vocabulary};
use pointground_core::training::{train, MemoryObserver, TrainConfig, TrainingScene};

fn bench_encoder_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        d: 32,
        point_sample_count: 128,
        transformer_layers: 2,
        transformer_heads: 4,
        seed,
        backbone: PointBackbone::SharedMlp { hidden: 32 },
        ..Default::default()
    }
}

#[test]
fn synthetic_training_learns_to_ground() {
    let k = 8;
    let vocab = synthetic_vocabulary(k);
    let encoder = bench_encoder_config(17);
    let providers = build_providers(&encoder, &vocab).unwrap();
    let mut model_config = ModelConfig::new(encoder, k);
    model_config.adapter_hidden = 32;
    let mut model = GroundingModel::new(model_config).unwrap();

    let train_scenes: Vec<TrainingScene> = (0..20)
        .map(|i| {
            let scene = generate_synthetic_scene(1000 + i, 4, k, 2);
            TrainingScene::prepare(scene, &providers, ExtensionMode::BoundaryExtended, false)
        })
        .collect();

    let config = TrainConfig {
        batch_size_scenes: 4,
        base_lr: 0.002,
        max_epochs: 30,
        seed: 5,
        ..Default::default()
    };
    let mut observer = MemoryObserver::default();
    let outcome =
        train(&mut model, &train_scenes, &vocab, &providers, &config, &mut observer).unwrap();

    let first = outcome.epoch_mean_totals[0];
    let last = *outcome.epoch_mean_totals.last().unwrap();
    println!("epoch means: first {first:.4} last {last:.4} ratio {:.4}", last / first);
    assert!(
        last < 0.25 * first,
        "total loss must fall below 25% of the epoch-1 mean: {last} vs {first}"
    );

    // Held-out scenes, 2D-free grounding.
    let grounder = Grounder::new(&model, providers.text.as_ref(), &vocab, 3).unwrap();
    let mut outcomes = Vec::new();
    for i in 0..5 {
        let scene = generate_synthetic_scene(9000 + i, 4, k, 2);
        let predictions = grounder.ground_scene(&scene).unwrap();
        for (qid, pred) in predictions {
            let query = scene.queries.iter().find(|q| q.query_id == qid).unwrap();
            outcomes.push(outcome_for(&scene, query, pred.as_ref().ok()));
        }
    }
    let acc = selection_accuracy(&outcomes);
    println!("held-out selection accuracy: {acc:.3} over {} queries", outcomes.len());
    assert!(acc >= 0.95, "selection accuracy {acc} below 0.95");
}
