//! End-to-end speaker adaptation in miniature: generate a multi-speaker
//! corpus, train a baseline, then adapt it to an unseen test speaker with
//! three full-batch descent steps and compare frame error rates.
//!
//! ```bash
//! cargo run --example adapt_speaker
//! ```

use metasat::adapt::{adapt, ParamSubset, Schedule};
use metasat::corpus::{generate_corpus, sample_episode, split_meta_sets, CorpusParams, Split};
use metasat::ops::frame_error_rate;
use metasat::trainers::{baseline_train, TrainHyper};
use metasat::{Mode, ModelConfig};

fn main() {
    let params = CorpusParams {
        seed: 5,
        n_speakers: 12,
        frames_per_speaker: 2400,
        feature_dim: 10,
        n_classes: 6,
        spread: 0.4,
        class_sigma: 0.3,
        segment_frames: 10,
        ..Default::default()
    };
    let mut corpus = generate_corpus(&params).unwrap();
    split_meta_sets(&mut corpus, params.split_fractions, params.seed).unwrap();

    let config = ModelConfig {
        input_dim: params.feature_dim,
        hidden: vec![16, 16],
        n_classes: params.n_classes,
        context_frames: 2,
        silence_class: 0,
        epsilon: 1e-5,
        momentum: 0.01,
    };
    let hyper = TrainHyper {
        seed: 5,
        iterations: 12,
        batches_per_iter: 40,
        batch_size: 96,
        ..Default::default()
    };
    println!("training the speaker-independent baseline...");
    let outcome = baseline_train(&config, &corpus, &hyper).unwrap();
    let ckpt = outcome.checkpoint;

    // hand-set schedule: large LHUC rates, as a fitted schedule would find
    let mut schedule = Schedule::uniform(&config, 0.0, 3).unwrap();
    for layer in 0..config.hidden.len() {
        schedule
            .set_rate((layer, metasat::RoleGroup::Lhuc), 0.8)
            .unwrap();
    }

    for speaker in corpus.split_ids(Split::Test) {
        let episode = sample_episode(&corpus, speaker, 600, 0, config.context_frames).unwrap();
        let run = adapt(
            &ckpt.model,
            &ckpt.params,
            &episode.adapt,
            &schedule,
            ParamSubset::Lhuc,
        )
        .unwrap();
        let (before, _) = ckpt
            .model
            .forward(&ckpt.params, &episode.unseen.x, Mode::Infer)
            .unwrap();
        let (after, _) = ckpt
            .model
            .forward(&run.params, &episode.unseen.x, Mode::Infer)
            .unwrap();
        println!(
            "speaker {speaker}: unadapted FER {:.3} -> adapted FER {:.3} ({:?})",
            frame_error_rate(&before, &episode.unseen.y).unwrap(),
            frame_error_rate(&after, &episode.unseen.y).unwrap(),
            run.status,
        );
    }
}
