//! The three trainers (baseline, SAT-LHUC, SAT-MAML) and the test-time
//! schedule-fitting meta-learner.
//!
//! All trainers are single-writer and fully seeded: batch sampling, the
//! SAT-LHUC coin, and episode sampling each draw from their own stream, so
//! the coin never perturbs batch order.

use indexmap::IndexMap;

use rand::Rng;

use crate::adapt::{ParamSubset, RateKey, Schedule, DEFAULT_INITIAL_RATE};
use crate::corpus::{Corpus, Episode, FrameBlock, Split};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::meta::{fomaml_grads, meta_loss, LossCombo, MetaBatch};
use crate::model::{Mode, Model, ModelConfig};
use crate::ops::softmax_xent;
use crate::optim::{AdamStore, AdamVec};
use crate::params::{ParamId, ParamRole, ParamStore};
use crate::rng::{stream, tags};
use crate::tensor::Tensor;

/// One machine-parseable training-log line.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLine {
    pub iter: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

impl LogLine {
    pub fn render(&self) -> String {
        format!(
            "iter={} train_loss={} val_loss={}",
            self.iter, self.train_loss, self.val_loss
        )
    }
}

/// A trained model plus its per-iteration log.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogLine>,
}

/// SAT-MAML result: the jointly trained weights and schedule.
#[derive(Debug)]
pub struct MamlOutcome {
    pub checkpoint: Checkpoint,
    pub schedule: Schedule,
    pub log: Vec<LogLine>,
}

/// Schedule-fitting result with the before/after objective values.
#[derive(Debug)]
pub struct FitOutcome {
    pub schedule: Schedule,
    pub initial_j: f64,
    pub fitted_j: f64,
}

/// Hyperparameters of the frame-level trainers.
#[derive(Debug, Clone)]
pub struct TrainHyper {
    pub seed: u64,
    pub iterations: usize,
    pub batches_per_iter: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Trailing fraction of every train speaker's frames held out for
    /// validation.
    pub val_fraction: f64,
    /// Cap on the (deterministic) validation subset size.
    pub val_max_frames: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 25,
            batches_per_iter: 60,
            batch_size: 128,
            lr: 1e-3,
            val_fraction: 0.1,
            val_max_frames: 4096,
        }
    }
}

/// Hyperparameters of SAT-MAML training.
#[derive(Debug, Clone)]
pub struct MamlHyper {
    pub seed: u64,
    pub iterations: usize,
    pub batches_per_iter: usize,
    pub speakers_per_batch: usize,
    pub adapt_steps: usize,
    /// Adaptation (and unseen) frame budget of each training episode.
    pub train_budget_frames: usize,
    pub lambda_unadapted: f64,
    pub lr: f64,
    pub phi_init: f64,
    /// Fixed meta-validation episode count for early stopping.
    pub val_episodes: usize,
    /// Cap on frames used to refresh running statistics per meta-batch.
    pub stats_refresh_frames: usize,
}

impl Default for MamlHyper {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 12,
            batches_per_iter: 4,
            speakers_per_batch: 4,
            adapt_steps: 3,
            train_budget_frames: 1000,
            lambda_unadapted: 0.5,
            lr: 1e-3,
            phi_init: DEFAULT_INITIAL_RATE,
            val_episodes: 5,
            stats_refresh_frames: 1024,
        }
    }
}

/// Hyperparameters of test-time schedule fitting.
#[derive(Debug, Clone)]
pub struct FitHyper {
    pub seed: u64,
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub lr: f64,
    pub adapt_steps: usize,
    pub phi_init: f64,
    /// Fixed evaluation episode count used to pick the best snapshot.
    pub eval_episodes: usize,
    /// Evaluate the snapshot objective every this many iterations.
    pub eval_every: usize,
}

impl Default for FitHyper {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 32,
            episodes_per_iter: 3,
            lr: 0.04,
            adapt_steps: 3,
            phi_init: DEFAULT_INITIAL_RATE,
            eval_episodes: 5,
            eval_every: 8,
        }
    }
}

/// Frame-level batch sampler shared by the baseline and SAT-LHUC trainers:
/// one speaker per batch, frames drawn from that speaker's training range.
struct BatchSampler {
    speakers: Vec<u32>,
    /// Per speaker, frames `[0, train_end)` are trainable.
    train_end: IndexMap<u32, usize>,
    batch_size: usize,
}

impl BatchSampler {
    fn new(corpus: &Corpus, val_fraction: f64, batch_size: usize) -> Result<Self> {
        let speakers = corpus.split_ids(Split::Train);
        if speakers.is_empty() {
            return Err(Error::Usage("corpus has no training speakers".into()));
        }
        let mut train_end = IndexMap::new();
        for &id in &speakers {
            let n = corpus.speaker(id)?.n_frames();
            let end = ((n as f64) * (1.0 - val_fraction)).floor() as usize;
            if end < 2 {
                return Err(Error::Config(format!(
                    "speaker {id} keeps {end} training frames after the validation split"
                )));
            }
            train_end.insert(id, end);
        }
        Ok(Self {
            speakers,
            train_end,
            batch_size,
        })
    }

    fn sample(&self, corpus: &Corpus, rng: &mut impl Rng, context: usize) -> (u32, FrameBlock) {
        let speaker = self.speakers[rng.gen_range(0..self.speakers.len())];
        let end = self.train_end[&speaker];
        let indices: Vec<usize> = (0..self.batch_size).map(|_| rng.gen_range(0..end)).collect();
        let record = corpus.speaker(speaker).expect("sampler speakers exist");
        (speaker, record.stacked_rows(&indices, context))
    }
}

/// Deterministic validation block: the trailing `val_fraction` frames of
/// every training speaker, evenly thinned to at most `val_max_frames`.
fn validation_block(
    corpus: &Corpus,
    sampler: &BatchSampler,
    context: usize,
    val_max_frames: usize,
) -> FrameBlock {
    let mut positions: Vec<(u32, usize)> = Vec::new();
    for &id in &sampler.speakers {
        let rec = corpus.speaker(id).expect("sampler speakers exist");
        for i in sampler.train_end[&id]..rec.n_frames() {
            positions.push((id, i));
        }
    }
    let stride = (positions.len() / val_max_frames.max(1)).max(1);
    let chosen: Vec<(u32, usize)> = positions.into_iter().step_by(stride).take(val_max_frames).collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    let width = corpus.params.feature_dim * (2 * context + 1);
    for (id, i) in chosen {
        let rec = corpus.speaker(id).expect("sampler speakers exist");
        let block = rec.stacked_rows(&[i], context);
        x.extend_from_slice(block.x.data());
        y.push(block.y[0]);
    }
    let n = y.len();
    FrameBlock {
        x: Tensor::from_vec(vec![n, width], x).expect("validation block"),
        y,
    }
}

fn validation_loss(model: &Model, params: &ParamStore, block: &FrameBlock) -> Result<f64> {
    let (logits, _) = model.forward(params, &block.x, Mode::Infer)?;
    Ok(softmax_xent(&logits, &block.y)?.0)
}

/// Ids updated by the frame-level trainers: everything except LHUC, which
/// stays at identity until adaptation.
fn shared_update_ids(config: &ModelConfig) -> Vec<ParamId> {
    config
        .param_ids()
        .into_iter()
        .filter(|id| id.role != ParamRole::Lhuc)
        .collect()
}

/// Mini-batch cross-entropy training with adaptive-moment updates and
/// per-iteration early stopping on held-out frames.
pub fn baseline_train(config: &ModelConfig, corpus: &Corpus, hyper: &TrainHyper) -> Result<TrainOutcome> {
    sat_lhuc_train_inner(config, corpus, hyper, None).map(|(outcome, _)| outcome)
}

/// Per-speaker LHUC bank used during SAT-LHUC training.
#[derive(Debug)]
pub struct SpeakerLhucBank {
    /// Per training speaker: one LHUC vector per hidden layer and its
    /// optimiser moments.
    entries: IndexMap<u32, (ParamStore, AdamStore)>,
    lhuc_ids: Vec<ParamId>,
}

impl SpeakerLhucBank {
    pub fn new(config: &ModelConfig, speakers: &[u32], lr: f64) -> Self {
        let lhuc_ids: Vec<ParamId> = (0..config.hidden.len())
            .map(|i| ParamId::new(i, ParamRole::Lhuc))
            .collect();
        let mut entries = IndexMap::new();
        for &s in speakers {
            let mut store = ParamStore::new();
            for (i, &w) in config.hidden.iter().enumerate() {
                store.insert(ParamId::new(i, ParamRole::Lhuc), Tensor::zeros(vec![w]));
            }
            let adam = AdamStore::new(&store, lr);
            entries.insert(s, (store, adam));
        }
        Self { entries, lhuc_ids }
    }

    pub fn speakers(&self) -> Vec<u32> {
        self.entries.keys().copied().collect()
    }

    pub fn vectors(&self, speaker: u32) -> Result<&ParamStore> {
        self.entries
            .get(&speaker)
            .map(|(store, _)| store)
            .ok_or_else(|| Error::Data(format!("no speaker-dependent LHUC bank entry for speaker {speaker}")))
    }

    fn entry_mut(&mut self, speaker: u32) -> Result<&mut (ParamStore, AdamStore)> {
        self.entries
            .get_mut(&speaker)
            .ok_or_else(|| Error::Data(format!("no speaker-dependent LHUC bank entry for speaker {speaker}")))
    }

    pub fn lhuc_ids(&self) -> &[ParamId] {
        &self.lhuc_ids
    }
}

/// The SAT-LHUC speaker-independent/speaker-dependent coin.
pub struct SiCoin {
    rng: rand_chacha::ChaCha8Rng,
    pub probability_si: f64,
}

impl SiCoin {
    pub fn new(seed: u64, probability_si: f64) -> Self {
        Self {
            rng: stream(seed, tags::COINS, 0),
            probability_si,
        }
    }

    /// True when the speaker-independent vector should be used.
    pub fn draw(&mut self) -> bool {
        self.rng.gen::<f64>() < self.probability_si
    }
}

/// SAT-LHUC training: per batch a seeded coin picks the speaker-independent
/// LHUC path (identity, untrained) or the current speaker's bank vector,
/// which then receives that batch's LHUC gradients. Returns the canonical
/// model carrying the speaker-independent vector, plus the bank.
pub fn sat_lhuc_train(
    config: &ModelConfig,
    corpus: &Corpus,
    hyper: &TrainHyper,
    probability_si: f64,
) -> Result<(TrainOutcome, SpeakerLhucBank)> {
    let (outcome, bank) = sat_lhuc_train_inner(config, corpus, hyper, Some(probability_si))?;
    Ok((outcome, bank.expect("sat-lhuc returns its bank")))
}

fn sat_lhuc_train_inner(
    config: &ModelConfig,
    corpus: &Corpus,
    hyper: &TrainHyper,
    sat_probability_si: Option<f64>,
) -> Result<(TrainOutcome, Option<SpeakerLhucBank>)> {
    config.validate()?;
    if config.input_dim != corpus.params.feature_dim {
        return Err(Error::Config(format!(
            "model input_dim {} does not match corpus feature_dim {}",
            config.input_dim, corpus.params.feature_dim
        )));
    }
    if config.n_classes != corpus.params.n_classes {
        return Err(Error::Config(format!(
            "model n_classes {} does not match corpus n_classes {}",
            config.n_classes, corpus.params.n_classes
        )));
    }
    let mut model = Model::new(config.clone())?;
    let mut params = model.init_params(hyper.seed);
    let sampler = BatchSampler::new(corpus, hyper.val_fraction, hyper.batch_size)?;
    let val_block = validation_block(corpus, &sampler, config.context_frames, hyper.val_max_frames);
    let update_ids = shared_update_ids(config);
    let mut adam = AdamStore::new(&params, hyper.lr);
    let mut batch_rng = stream(hyper.seed, tags::BATCHES, 0);
    let mut bank = sat_probability_si
        .map(|_| SpeakerLhucBank::new(config, &sampler.speakers, hyper.lr));
    let mut coin = sat_probability_si.map(|p| SiCoin::new(hyper.seed, p));

    let mut best: Option<(f64, ParamStore, Vec<crate::layers::RunningStats>)> = None;
    let mut log = Vec::with_capacity(hyper.iterations);

    for iter in 1..=hyper.iterations {
        let mut train_loss_sum = 0.0;
        for _ in 0..hyper.batches_per_iter {
            let (speaker, block) = sampler.sample(corpus, &mut batch_rng, config.context_frames);
            let use_sd = match &mut coin {
                Some(c) => !c.draw(),
                None => false,
            };
            if use_sd {
                let bank_ref = bank.as_mut().expect("coin implies bank");
                // swap the speaker's LHUC vectors in
                let sd = bank_ref.vectors(speaker)?.clone();
                for &id in bank_ref.lhuc_ids() {
                    *params.get_mut(id)? = sd.get(id)?.clone();
                }
                let (logits, trace) = model.forward_train(&params, &block.x)?;
                let (loss, grad_logits) = softmax_xent(&logits, &block.y)?;
                train_loss_sum += loss;
                params.zero_grads();
                model.backward(&mut params, &trace, &grad_logits)?;
                let grads = params.grads_snapshot();
                adam.step(&mut params, &grads, &update_ids)?;
                // route LHUC gradients to the speaker's bank entry
                let (sd_store, sd_adam) = bank_ref.entry_mut(speaker)?;
                let ids: Vec<ParamId> = sd_store.ids().collect();
                for &id in &ids {
                    *sd_store.get_mut(id)? = params.get(id)?.clone();
                }
                sd_adam.step(sd_store, &grads, &ids)?;
                // restore the identity (speaker-independent) vector
                for &id in &ids {
                    params.get_mut(id)?.fill(0.0);
                }
            } else {
                let (logits, trace) = model.forward_train(&params, &block.x)?;
                let (loss, grad_logits) = softmax_xent(&logits, &block.y)?;
                train_loss_sum += loss;
                params.zero_grads();
                model.backward(&mut params, &trace, &grad_logits)?;
                let grads = params.grads_snapshot();
                adam.step(&mut params, &grads, &update_ids)?;
            }
        }
        let val_loss = validation_loss(&model, &params, &val_block)?;
        log.push(LogLine {
            iter,
            train_loss: train_loss_sum / hyper.batches_per_iter.max(1) as f64,
            val_loss,
        });
        let better = best.as_ref().map(|(b, _, _)| val_loss < *b).unwrap_or(true);
        if better {
            best = Some((val_loss, params.clone(), model.stats.clone()));
        }
    }

    let (params, stats) = match best {
        Some((_, p, s)) => (p, s),
        None => (params, model.stats.clone()),
    };
    let checkpoint = Checkpoint {
        model: Model {
            config: config.clone(),
            stats,
        },
        params,
    };
    Ok((TrainOutcome { checkpoint, log }, bank))
}

/// Samples `count` distinct speakers from a split.
fn pick_speakers(ids: &[u32], count: usize, rng: &mut impl Rng) -> Result<Vec<u32>> {
    if ids.is_empty() {
        return Err(Error::Usage("meta set has no speakers".into()));
    }
    let count = count.min(ids.len());
    let mut pool = ids.to_vec();
    for i in 0..count {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(count);
    Ok(pool)
}

/// Samples one episode per listed speaker at a random valid offset.
fn sample_episodes(
    corpus: &Corpus,
    speakers: &[u32],
    budget: usize,
    context: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Episode>> {
    let mut out = Vec::with_capacity(speakers.len());
    for &s in speakers {
        let n = corpus.speaker(s)?.n_frames();
        let max_offset = n
            .checked_sub(2 * budget)
            .ok_or_else(|| Error::Sampling(format!(
                "speaker {s} has {n} frames, episode needs {}",
                2 * budget
            )))?;
        let offset = if max_offset == 0 { 0 } else { rng.gen_range(0..=max_offset) };
        out.push(crate::corpus::sample_episode(corpus, s, budget, offset, context)?);
    }
    Ok(out)
}

/// A deterministic fixed episode set cycling the split's speakers.
pub fn fixed_episode_set(
    corpus: &Corpus,
    split: Split,
    seed: u64,
    sub: u64,
    count: usize,
    budget: usize,
    context: usize,
) -> Result<Vec<Episode>> {
    let ids = corpus.split_ids(split);
    if ids.is_empty() {
        return Err(Error::Usage(format!("split {} has no speakers", split.as_str())));
    }
    let mut rng = stream(seed, tags::EPISODES, 0xfe00 + sub);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let s = ids[k % ids.len()];
        let n = corpus.speaker(s)?.n_frames();
        let max_offset = n.checked_sub(2 * budget).ok_or_else(|| {
            Error::Sampling(format!(
                "speaker {s} has {n} frames, episode needs {}",
                2 * budget
            ))
        })?;
        let offset = if max_offset == 0 { 0 } else { rng.gen_range(0..=max_offset) };
        out.push(crate::corpus::sample_episode(corpus, s, budget, offset, context)?);
    }
    Ok(out)
}

fn flatten_phi(schedule: &Schedule, keys: &[RateKey]) -> Vec<f64> {
    keys.iter().map(|&k| schedule.rate(k).expect("key exists")).collect()
}

fn assign_phi(schedule: &mut Schedule, keys: &[RateKey], flat: &[f64]) {
    for (k, &v) in keys.iter().zip(flat) {
        schedule.set_rate(*k, v.max(0.0)).expect("key exists");
    }
}

/// Pools up to `cap` unseen frames of a meta-batch for the running-stat
/// refresh pass.
fn pooled_unseen(batch: &MetaBatch, cap: usize) -> Option<FrameBlock> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut width = 0;
    'outer: for ep in &batch.episodes {
        width = ep.unseen.x.cols();
        for r in 0..ep.unseen.len() {
            if y.len() >= cap {
                break 'outer;
            }
            x.extend_from_slice(ep.unseen.x.row(r));
            y.push(ep.unseen.y[r]);
        }
    }
    if y.len() < 2 {
        return None;
    }
    let n = y.len();
    Some(FrameBlock {
        x: Tensor::from_vec(vec![n, width], x).expect("pooled block"),
        y,
    })
}

/// SAT-MAML: jointly optimises the warm-started weights and the adaptation
/// schedule with first-order meta-gradients, early-stopping on a fixed
/// meta-validation episode set.
pub fn sat_maml_train(
    warm: &Checkpoint,
    corpus: &Corpus,
    hyper: &MamlHyper,
    subset: ParamSubset,
) -> Result<MamlOutcome> {
    let mut model = warm.model.clone();
    let mut theta = warm.params.clone();
    let combo = LossCombo::new(hyper.lambda_unadapted)?;
    let mut phi = Schedule::uniform(&model.config, hyper.phi_init, hyper.adapt_steps)?;
    let keys = phi.rate_keys();

    let train_ids = corpus.split_ids(Split::Train);
    if train_ids.is_empty() {
        return Err(Error::Usage("meta-training set is empty".into()));
    }
    let val_eps = fixed_episode_set(
        corpus,
        Split::MetaVal,
        hyper.seed,
        1,
        hyper.val_episodes,
        hyper.train_budget_frames,
        model.config.context_frames,
    )?;
    let val_batch = MetaBatch {
        episodes: val_eps,
    };

    let mut adam_theta = AdamStore::new(&theta, hyper.lr);
    let mut adam_phi = AdamVec::new(keys.len(), hyper.lr);
    let mut ep_rng = stream(hyper.seed, tags::EPISODES, 0);
    let all_ids: Vec<ParamId> = theta.ids().collect();

    let initial_val = meta_loss(&model, &theta, &phi, subset, &val_batch, combo)?;
    let mut best = (initial_val, theta.clone(), phi.clone(), model.stats.clone());
    let mut log = Vec::with_capacity(hyper.iterations);

    for iter in 1..=hyper.iterations {
        let mut train_sum = 0.0;
        for _ in 0..hyper.batches_per_iter {
            let speakers = pick_speakers(&train_ids, hyper.speakers_per_batch, &mut ep_rng)?;
            let episodes = sample_episodes(
                corpus,
                &speakers,
                hyper.train_budget_frames,
                model.config.context_frames,
                &mut ep_rng,
            )?;
            let batch = MetaBatch::new(episodes)?;
            let grads = fomaml_grads(&model, &theta, &phi, subset, &batch, combo)?;
            train_sum += grads.j;
            adam_theta.step(&mut theta, &grads.theta, &all_ids)?;
            let mut flat = flatten_phi(&phi, &keys);
            let phi_grads: Vec<f64> = keys.iter().map(|k| grads.phi[k]).collect();
            adam_phi.step(&mut flat, &phi_grads);
            assign_phi(&mut phi, &keys, &flat);
            // refresh running statistics on (capped) unseen frames so the
            // frozen path tracks the drifting weights
            if let Some(block) = pooled_unseen(&batch, hyper.stats_refresh_frames) {
                model.forward_train(&theta, &block.x)?;
            }
        }
        let val_j = meta_loss(&model, &theta, &phi, subset, &val_batch, combo)?;
        log.push(LogLine {
            iter,
            train_loss: train_sum / hyper.batches_per_iter.max(1) as f64,
            val_loss: val_j,
        });
        if val_j < best.0 {
            best = (val_j, theta.clone(), phi.clone(), model.stats.clone());
        }
    }

    let (_, theta, phi, stats) = best;
    Ok(MamlOutcome {
        checkpoint: Checkpoint {
            model: Model {
                config: model.config.clone(),
                stats,
            },
            params: theta,
        },
        schedule: phi,
        log,
    })
}

/// Test-time schedule fitting: gradient descent on the per-layer rates
/// only, minimising the adapted loss over meta-validation episodes of the
/// given budget. The weights never move. Returns the best snapshot
/// measured on a fixed episode set.
pub fn fit_adaptation_schedule(
    checkpoint: &Checkpoint,
    corpus: &Corpus,
    subset: ParamSubset,
    budget_frames: usize,
    hyper: &FitHyper,
) -> Result<FitOutcome> {
    let model = &checkpoint.model;
    let theta = &checkpoint.params;
    let combo = LossCombo::adapted_only();
    let mut phi = Schedule::uniform(&model.config, hyper.phi_init, hyper.adapt_steps)?;
    let keys = phi.rate_keys();

    let eval_eps = fixed_episode_set(
        corpus,
        Split::MetaVal,
        hyper.seed,
        2,
        hyper.eval_episodes,
        budget_frames,
        model.config.context_frames,
    )?;
    let eval_batch = MetaBatch { episodes: eval_eps };

    let initial_j = meta_loss(model, theta, &phi, subset, &eval_batch, combo)?;
    let mut best = (initial_j, phi.clone());

    let val_ids = corpus.split_ids(Split::MetaVal);
    if val_ids.is_empty() {
        return Err(Error::Usage("meta-validation set is empty".into()));
    }
    let mut ep_rng = stream(hyper.seed, tags::EPISODES, 3);
    let mut adam_phi = AdamVec::new(keys.len(), hyper.lr);

    // trailing average over the second half of the trajectory damps the
    // optimiser's oscillation around the optimum; it competes with the
    // periodic snapshots for the returned schedule
    let avg_from = hyper.iterations / 2;
    let mut avg = vec![0.0; keys.len()];
    let mut avg_n = 0.0;

    for iter in 1..=hyper.iterations {
        let speakers = pick_speakers(&val_ids, hyper.episodes_per_iter, &mut ep_rng)?;
        let episodes = sample_episodes(
            corpus,
            &speakers,
            budget_frames,
            model.config.context_frames,
            &mut ep_rng,
        )?;
        let batch = MetaBatch::new(episodes)?;
        let grads = fomaml_grads(model, theta, &phi, subset, &batch, combo)?;
        let mut flat = flatten_phi(&phi, &keys);
        let phi_grads: Vec<f64> = keys.iter().map(|k| grads.phi[k]).collect();
        adam_phi.step(&mut flat, &phi_grads);
        assign_phi(&mut phi, &keys, &flat);
        if iter > avg_from {
            for (a, k) in avg.iter_mut().zip(&keys) {
                *a += phi.rate(*k).expect("key exists");
            }
            avg_n += 1.0;
        }
        if iter % hyper.eval_every.max(1) == 0 || iter == hyper.iterations {
            let j = meta_loss(model, theta, &phi, subset, &eval_batch, combo)?;
            if j < best.0 {
                best = (j, phi.clone());
            }
        }
    }
    if avg_n > 0.0 {
        let mut averaged = phi.clone();
        let flat: Vec<f64> = avg.iter().map(|a| a / avg_n).collect();
        assign_phi(&mut averaged, &keys, &flat);
        let j = meta_loss(model, theta, &averaged, subset, &eval_batch, combo)?;
        if j < best.0 {
            best = (j, averaged);
        }
    }

    Ok(FitOutcome {
        schedule: best.1,
        initial_j,
        fitted_j: best.0,
    })
}
