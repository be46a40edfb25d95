//! Library-level integration tests at miniature scale: corpus difficulty
//! trends, the supervised-vs-pseudo-label gap, and the warm-start chain.

use metasat::adapt::{adapt, ParamSubset, Schedule};
use metasat::corpus::{generate_corpus, sample_episode, split_meta_sets, Corpus, CorpusParams, Split};
use metasat::ops::frame_error_rate;
use metasat::trainers::{baseline_train, sat_maml_train, MamlHyper, TrainHyper};
use metasat::{Mode, Model, ModelConfig};

fn micro_params(seed: u64, spread: f64) -> CorpusParams {
    CorpusParams {
        seed,
        n_speakers: 8,
        frames_per_speaker: 800,
        feature_dim: 6,
        n_classes: 4,
        spread,
        silence_fraction: 0.15,
        class_sigma: 0.25,
        segment_frames: 5,
        segment_noise_share: 0.5,
        frames_per_second: 100,
        max_condition: 25.0,
        split_fractions: [0.5, 0.25, 0.25],
    }
}

fn micro_config() -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        hidden: vec![10],
        n_classes: 4,
        context_frames: 1,
        silence_class: 0,
        epsilon: 1e-5,
        momentum: 0.02,
    }
}

fn micro_hyper(seed: u64) -> TrainHyper {
    TrainHyper {
        seed,
        iterations: 6,
        batches_per_iter: 25,
        batch_size: 64,
        lr: 3e-3,
        val_fraction: 0.1,
        val_max_frames: 512,
    }
}

fn test_split_fer(corpus: &Corpus, model: &Model, params: &metasat::ParamStore) -> f64 {
    let mut wrong = 0.0;
    let mut total = 0.0;
    for id in corpus.split_ids(Split::Test) {
        let rec = corpus.speaker(id).unwrap();
        let block = rec.stacked_range(0, rec.n_frames(), model.config.context_frames);
        let (logits, _) = model.forward(params, &block.x, Mode::Infer).unwrap();
        wrong += frame_error_rate(&logits, &block.y).unwrap() * block.len() as f64;
        total += block.len() as f64;
    }
    wrong / total
}

/// Raising the speaker spread strictly degrades an unadapted model's
/// test-speaker error on average; at spread 0 the task is near-trivial.
#[test]
fn spread_strictly_degrades_unseen_speaker_error() {
    let spreads = [0.0, 0.3, 0.6];
    let mut means = [0.0; 3];
    for seed in 0..5u64 {
        for (i, &spread) in spreads.iter().enumerate() {
            let params = micro_params(100 + seed, spread);
            let mut corpus = generate_corpus(&params).unwrap();
            split_meta_sets(&mut corpus, params.split_fractions, params.seed).unwrap();
            let out = baseline_train(&micro_config(), &corpus, &micro_hyper(seed)).unwrap();
            means[i] += test_split_fer(&corpus, &out.checkpoint.model, &out.checkpoint.params) / 5.0;
        }
    }
    assert!(
        means[0] < 0.08,
        "spread 0 should be near-trivial, got FER {:.4}",
        means[0]
    );
    assert!(
        means[0] < means[1] && means[1] < means[2],
        "mean unadapted FER should rise with spread: {means:?}"
    );
    println!("mean unadapted test FER by spread {spreads:?}: {means:?}");
}

/// Pseudo-label adaptation never helps more than supervised adaptation on
/// average (the first-pass labeller's mistakes cap the gain).
#[test]
fn pseudo_label_improvement_is_bounded_by_supervised_improvement() {
    let mut sup_gain = 0.0;
    let mut unsup_gain = 0.0;
    for seed in 0..5u64 {
        let params = micro_params(200 + seed, 0.45);
        let mut corpus = generate_corpus(&params).unwrap();
        split_meta_sets(&mut corpus, params.split_fractions, params.seed).unwrap();
        let cfg = micro_config();
        let base = baseline_train(&cfg, &corpus, &micro_hyper(seed)).unwrap();
        let labeller = baseline_train(&cfg, &corpus, &micro_hyper(seed + 7777)).unwrap();

        let mut schedule = Schedule::uniform(&cfg, 0.0, 3).unwrap();
        schedule.set_rate((0, metasat::RoleGroup::Lhuc), 0.7).unwrap();

        for speaker in corpus.split_ids(Split::Test) {
            let ep = sample_episode(&corpus, speaker, 200, 0, cfg.context_frames).unwrap();
            let (unadapted, _) = base
                .checkpoint
                .model
                .forward(&base.checkpoint.params, &ep.unseen.x, Mode::Infer)
                .unwrap();
            let fer_id = frame_error_rate(&unadapted, &ep.unseen.y).unwrap();

            let sup = adapt(
                &base.checkpoint.model,
                &base.checkpoint.params,
                &ep.adapt,
                &schedule,
                ParamSubset::Lhuc,
            )
            .unwrap();
            let (sup_logits, _) = base
                .checkpoint
                .model
                .forward(&sup.params, &ep.unseen.x, Mode::Infer)
                .unwrap();
            sup_gain += fer_id - frame_error_rate(&sup_logits, &ep.unseen.y).unwrap();

            // first-pass labels from the separately trained labeller
            let pseudo = labeller
                .checkpoint
                .model
                .pseudo_label(&labeller.checkpoint.params, &ep.adapt.x)
                .unwrap();
            let noisy = metasat::FrameBlock {
                x: ep.adapt.x.clone(),
                y: pseudo,
            };
            let unsup = adapt(
                &base.checkpoint.model,
                &base.checkpoint.params,
                &noisy,
                &schedule,
                ParamSubset::Lhuc,
            )
            .unwrap();
            let (unsup_logits, _) = base
                .checkpoint
                .model
                .forward(&unsup.params, &ep.unseen.x, Mode::Infer)
                .unwrap();
            unsup_gain += fer_id - frame_error_rate(&unsup_logits, &ep.unseen.y).unwrap();
        }
    }
    assert!(
        unsup_gain <= sup_gain + 1e-9,
        "pseudo-label gain {unsup_gain:.4} exceeds supervised gain {sup_gain:.4}"
    );
    println!("total gains over 5 seeds: supervised {sup_gain:.4}, pseudo-label {unsup_gain:.4}");
}

/// Degenerate labelling model: uniform logits pseudo-label everything as
/// class 0 (the tie-break); adaptation then declines without crashing.
#[test]
fn degenerate_labeller_does_not_crash_adaptation() {
    let params = micro_params(300, 0.3);
    let mut corpus = generate_corpus(&params).unwrap();
    split_meta_sets(&mut corpus, params.split_fractions, params.seed).unwrap();
    let cfg = micro_config();
    let model = Model::new(cfg.clone()).unwrap();
    let mut zero = model.init_params(0);
    for id in zero.ids().collect::<Vec<_>>() {
        zero.get_mut(id).unwrap().fill(0.0);
    }
    // gammas at zero flatten every logit; argmax ties resolve to class 0
    let ep = sample_episode(&corpus, corpus.split_ids(Split::Test)[0], 100, 0, cfg.context_frames)
        .unwrap();
    let pseudo = model.pseudo_label(&zero, &ep.adapt.x).unwrap();
    assert!(pseudo.iter().all(|&l| l == 0), "tie-break must pick class 0");

    // all pseudo-labels are silence, so adaptation declines gracefully
    let base = baseline_train(&cfg, &corpus, &micro_hyper(1)).unwrap();
    let schedule = Schedule::uniform(&cfg, 0.5, 3).unwrap();
    let block = metasat::FrameBlock {
        x: ep.adapt.x.clone(),
        y: pseudo,
    };
    let run = adapt(
        &base.checkpoint.model,
        &base.checkpoint.params,
        &block,
        &schedule,
        ParamSubset::Lhuc,
    )
    .unwrap();
    assert_eq!(run.status, metasat::AdaptStatus::DeclinedEmpty);
    assert_eq!(run.params.max_abs_diff(&base.checkpoint.params), 0.0);
}

/// Baseline then MAML warm-started from it completes end-to-end, and the
/// meta splits stay speaker-disjoint throughout.
#[test]
fn warm_start_chain_runs_end_to_end() {
    let params = micro_params(400, 0.4);
    let mut corpus = generate_corpus(&params).unwrap();
    split_meta_sets(&mut corpus, params.split_fractions, params.seed).unwrap();

    let train: Vec<u32> = corpus.split_ids(Split::Train);
    let val: Vec<u32> = corpus.split_ids(Split::MetaVal);
    let test: Vec<u32> = corpus.split_ids(Split::Test);
    assert!(train.iter().all(|id| !val.contains(id) && !test.contains(id)));
    assert!(val.iter().all(|id| !test.contains(id)));

    let cfg = micro_config();
    let warm = baseline_train(&cfg, &corpus, &micro_hyper(2)).unwrap();
    let hyper = MamlHyper {
        seed: 3,
        iterations: 3,
        batches_per_iter: 2,
        speakers_per_batch: 2,
        train_budget_frames: 100,
        val_episodes: 2,
        ..Default::default()
    };
    let out = sat_maml_train(&warm.checkpoint, &corpus, &hyper, ParamSubset::All).unwrap();
    assert_eq!(out.log.len(), 3);
    // the jointly trained schedule respects the non-negativity contract
    for key in out.schedule.rate_keys() {
        assert!(out.schedule.rate(key).unwrap() >= 0.0);
    }
}
