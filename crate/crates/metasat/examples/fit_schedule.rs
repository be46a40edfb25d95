//! Test-time schedule fitting: with the model weights frozen, learn the
//! per-layer adaptation rates that minimise the adapted loss on unseen
//! meta-validation speakers. The fitted rates come out orders of magnitude
//! larger than the 0.001 initialisation.
//!
//! ```bash
//! cargo run --example fit_schedule
//! ```

use metasat::corpus::{generate_corpus, split_meta_sets, CorpusParams};
use metasat::trainers::{baseline_train, fit_adaptation_schedule, FitHyper, TrainHyper};
use metasat::{ModelConfig, ParamSubset};

fn main() {
    let params = CorpusParams {
        seed: 9,
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
    let hyper = TrainHyper {
        seed: 9,
        iterations: 12,
        batches_per_iter: 40,
        batch_size: 96,
        ..Default::default()
    };
    println!("training the baseline...");
    let outcome = baseline_train(&config, &corpus, &hyper).unwrap();

    for budget in [300usize, 600] {
        let fit = fit_adaptation_schedule(
            &outcome.checkpoint,
            &corpus,
            ParamSubset::Lhuc,
            budget,
            &FitHyper {
                seed: 9,
                iterations: 16,
                ..Default::default()
            },
        )
        .unwrap();
        println!(
            "budget {budget}: meta-val J {:.4} -> {:.4}",
            fit.initial_j, fit.fitted_j
        );
        let mut keys = fit.schedule.rate_keys();
        keys.sort();
        for key in keys {
            println!(
                "  layer {} {:<6} rate = {:.5}",
                key.0,
                key.1.as_str(),
                fit.schedule.rate(key).unwrap()
            );
        }
    }
}
