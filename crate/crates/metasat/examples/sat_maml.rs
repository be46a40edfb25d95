//! Speaker adaptive training as meta-learning: warm-start from a baseline
//! checkpoint, then jointly optimise the weights and the per-layer
//! adaptation rates with first-order meta-gradients so that three descent
//! steps on a new speaker improve its unseen frames.
//!
//! ```bash
//! cargo run --example sat_maml
//! ```

use metasat::corpus::{generate_corpus, split_meta_sets, CorpusParams};
use metasat::trainers::{baseline_train, sat_maml_train, MamlHyper, TrainHyper};
use metasat::{ModelConfig, ParamSubset};

fn main() {
    let params = CorpusParams {
        seed: 21,
        n_speakers: 12,
        frames_per_speaker: 2400,
        feature_dim: 10,
        n_classes: 6,
        segment_frames: 10,
        ..Default::default()
    };
    let mut corpus = generate_corpus(&params).unwrap();
    split_meta_sets(&mut corpus, params.split_fractions, params.seed).unwrap();

    let config = ModelConfig {
        input_dim: params.feature_dim,
        hidden: vec![12, 12],
        n_classes: params.n_classes,
        context_frames: 2,
        silence_class: 0,
        epsilon: 1e-5,
        momentum: 0.01,
    };
    println!("warm-start baseline (half budget)...");
    let warm = baseline_train(
        &config,
        &corpus,
        &TrainHyper {
            seed: 21,
            iterations: 6,
            batches_per_iter: 40,
            batch_size: 96,
            ..Default::default()
        },
    )
    .unwrap();

    println!("continuing with the meta-objective (adapt-then-evaluate)...");
    let hyper = MamlHyper {
        seed: 22,
        iterations: 8,
        batches_per_iter: 3,
        speakers_per_batch: 3,
        train_budget_frames: 400,
        val_episodes: 3,
        ..Default::default()
    };
    let outcome = sat_maml_train(&warm.checkpoint, &corpus, &hyper, ParamSubset::All).unwrap();
    for line in &outcome.log {
        println!(
            "iter {:>2}: train J {:.4}  meta-val J {:.4}",
            line.iter, line.train_loss, line.val_loss
        );
    }
    println!("jointly trained adaptation rates:");
    let mut keys = outcome.schedule.rate_keys();
    keys.sort();
    for key in keys {
        println!(
            "  layer {} {:<6} rate = {:.5}",
            key.0,
            key.1.as_str(),
            outcome.schedule.rate(key).unwrap()
        );
    }
}
