//! The adaptation function: n steps of full-batch gradient descent over a
//! parameter subset, with one learned learning rate per (layer, role group).

use indexmap::IndexMap;

use crate::corpus::FrameBlock;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, StatsMode};
use crate::ops::softmax_xent;
use crate::params::{GradMap, ParamId, ParamRole, ParamStore};
use crate::tensor::Tensor;

/// Which parameters the adaptation function may move. Running statistics
/// live outside the parameter store and are never adapted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamSubset {
    /// Only the per-unit LHUC amplitudes.
    Lhuc,
    /// Every parameter tensor.
    All,
}

impl ParamSubset {
    pub fn selects(&self, id: ParamId) -> bool {
        match self {
            ParamSubset::Lhuc => id.role == ParamRole::Lhuc,
            ParamSubset::All => true,
        }
    }

    /// Resolves to the concrete parameter ids of a store.
    pub fn resolve(&self, params: &ParamStore) -> Vec<ParamId> {
        params.ids().filter(|&id| self.selects(id)).collect()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ParamSubset::Lhuc => "lhuc",
            ParamSubset::All => "all",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "lhuc" => Ok(ParamSubset::Lhuc),
            "all" => Ok(ParamSubset::All),
            other => Err(Error::Config(format!("unknown subset `{other}`"))),
        }
    }
}

/// Learning-rate group of a parameter role: dense weight+bias share one
/// rate, gamma+beta another, LHUC its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoleGroup {
    Dense,
    Norm,
    Lhuc,
}

impl RoleGroup {
    pub fn of(role: ParamRole) -> Self {
        match role {
            ParamRole::Weight | ParamRole::Bias => RoleGroup::Dense,
            ParamRole::Gamma | ParamRole::Beta => RoleGroup::Norm,
            ParamRole::Lhuc => RoleGroup::Lhuc,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RoleGroup::Dense => "dense",
            RoleGroup::Norm => "norm",
            RoleGroup::Lhuc => "lhuc",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(RoleGroup::Dense),
            "norm" => Ok(RoleGroup::Norm),
            "lhuc" => Ok(RoleGroup::Lhuc),
            other => Err(Error::Config(format!("unknown role group `{other}`"))),
        }
    }
}

/// A scheduled learning-rate key: layer index plus role group.
pub type RateKey = (usize, RoleGroup);

/// The adaptation schedule: non-negative per-(layer, group) learning rates
/// plus the number of full-batch descent steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    rates: IndexMap<RateKey, f64>,
    pub steps: usize,
}

/// Default number of adaptation steps.
pub const DEFAULT_ADAPT_STEPS: usize = 3;

/// Default initial learning rate for every group.
pub const DEFAULT_INITIAL_RATE: f64 = 0.001;

impl Schedule {
    /// A uniform schedule covering every rate group of the model shape.
    pub fn uniform(config: &ModelConfig, rate: f64, steps: usize) -> Result<Self> {
        if rate < 0.0 {
            return Err(Error::Config(format!("negative learning rate {rate}")));
        }
        let mut rates = IndexMap::new();
        for layer in 0..config.hidden.len() {
            rates.insert((layer, RoleGroup::Dense), rate);
            rates.insert((layer, RoleGroup::Norm), rate);
            rates.insert((layer, RoleGroup::Lhuc), rate);
        }
        rates.insert((config.output_layer(), RoleGroup::Dense), rate);
        Ok(Self { rates, steps })
    }

    pub fn rate_keys(&self) -> Vec<RateKey> {
        self.rates.keys().copied().collect()
    }

    pub fn rate(&self, key: RateKey) -> Result<f64> {
        self.rates.get(&key).copied().ok_or_else(|| {
            Error::Usage(format!(
                "schedule has no rate for layer {} group {}",
                key.0,
                key.1.as_str()
            ))
        })
    }

    pub fn rate_for(&self, id: ParamId) -> Result<f64> {
        self.rate((id.layer, RoleGroup::of(id.role)))
    }

    pub fn set_rate(&mut self, key: RateKey, rate: f64) -> Result<()> {
        if rate < 0.0 {
            return Err(Error::Config(format!("negative learning rate {rate}")));
        }
        if !self.rates.contains_key(&key) {
            return Err(Error::Usage(format!(
                "schedule has no rate for layer {} group {}",
                key.0,
                key.1.as_str()
            )));
        }
        self.rates.insert(key, rate);
        Ok(())
    }

    /// Clamps every rate at zero from below.
    pub fn clamp_nonnegative(&mut self) {
        for v in self.rates.values_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.values().cloned().fold(0.0, f64::max)
    }

    /// Serialises to the plain-text `layer.group = rate` format, with
    /// optional `# key = value` header lines.
    pub fn to_text(&self, header: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, v) in header {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out.push_str(&format!("steps = {}\n", self.steps));
        let mut keys = self.rate_keys();
        keys.sort();
        for key in keys {
            out.push_str(&format!(
                "{}.{} = {}\n",
                key.0,
                key.1.as_str(),
                self.rates[&key]
            ));
        }
        out
    }

    /// Parses the plain-text format; returns the schedule and any header
    /// metadata found in `# key = value` comment lines.
    pub fn from_text(text: &str) -> Result<(Self, Vec<(String, String)>)> {
        let mut rates = IndexMap::new();
        let mut steps = None;
        let mut header = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    header.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("schedule line {} is not `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key == "steps" {
                let s: usize = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad steps value `{value}`")))?;
                steps = Some(s);
                continue;
            }
            let (layer, group) = key.split_once('.').ok_or_else(|| {
                Error::Config(format!("schedule key `{key}` is not `layer.group`"))
            })?;
            let layer: usize = layer
                .parse()
                .map_err(|_| Error::Config(format!("bad layer index `{layer}`")))?;
            let group = RoleGroup::from_str(group)?;
            let rate: f64 = value
                .parse()
                .map_err(|_| Error::Config(format!("bad rate value `{value}`")))?;
            if rate < 0.0 {
                return Err(Error::Config(format!(
                    "negative rate {rate} for {layer}.{}",
                    group.as_str()
                )));
            }
            rates.insert((layer, group), rate);
        }
        let steps = steps.ok_or_else(|| Error::Config("schedule is missing `steps`".into()))?;
        if rates.is_empty() {
            return Err(Error::Config("schedule holds no rates".into()));
        }
        Ok((Self { rates, steps }, header))
    }
}

/// Removes frames whose label is the silence class; order is preserved.
pub fn silence_filter(block: &FrameBlock, silence_class: usize) -> FrameBlock {
    let keep: Vec<usize> = block
        .y
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != silence_class)
        .map(|(i, _)| i)
        .collect();
    FrameBlock {
        x: block.x.gather_rows(&keep),
        y: keep.iter().map(|&i| block.y[i]).collect(),
    }
}

/// One descent step over the selected subset:
/// `theta' = theta - alpha_l * grad` for selected tensors, everything else
/// (and all running statistics) untouched.
pub fn adapt_step(
    params: &ParamStore,
    grads: &GradMap,
    schedule: &Schedule,
    subset: ParamSubset,
) -> Result<ParamStore> {
    let mut next = ParamStore::new();
    for (id, tensor) in params.iter() {
        if subset.selects(id) {
            let rate = schedule.rate_for(id)?;
            let grad = grads
                .get(&id)
                .ok_or_else(|| Error::Usage(format!("missing gradient for selected `{id}`")))?;
            let mut updated = tensor.clone();
            updated.axpy(-rate, grad)?;
            next.insert(id, updated);
        } else {
            next.insert(id, tensor.clone());
        }
    }
    Ok(next)
}

/// Anything that can score parameters on a data block and hand back exact
/// gradients. The acoustic model is the production implementation; tests
/// substitute closed-form objectives.
pub trait AdaptObjective {
    /// Loss on the block without gradients.
    fn loss(&self, params: &ParamStore, block: &FrameBlock) -> Result<f64>;

    /// Loss on the block; leaves the gradients in the store's buffers.
    fn loss_and_grad(&self, params: &mut ParamStore, block: &FrameBlock) -> Result<f64>;
}

/// Cross-entropy objective of the acoustic model under a statistics mode.
/// Global statistics make adaptation see exactly the inference activations.
pub struct ModelObjective<'a> {
    pub model: &'a Model,
    pub stats: StatsMode,
}

impl<'a> ModelObjective<'a> {
    pub fn global(model: &'a Model) -> Self {
        Self {
            model,
            stats: StatsMode::Global,
        }
    }
}

impl AdaptObjective for ModelObjective<'_> {
    fn loss(&self, params: &ParamStore, block: &FrameBlock) -> Result<f64> {
        let (logits, _) = self.model.forward_eval(params, &block.x, self.stats)?;
        Ok(softmax_xent(&logits, &block.y)?.0)
    }

    fn loss_and_grad(&self, params: &mut ParamStore, block: &FrameBlock) -> Result<f64> {
        let (logits, trace) = self.model.forward_eval(params, &block.x, self.stats)?;
        let (loss, grad_logits) = softmax_xent(&logits, &block.y)?;
        params.zero_grads();
        self.model.backward(params, &trace, &grad_logits)?;
        Ok(loss)
    }
}

/// Whether an adaptation call actually ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptStatus {
    Adapted { steps: usize },
    /// No usable adaptation data; the original parameters were returned.
    DeclinedEmpty,
}

/// Outcome of one adaptation run.
#[derive(Debug)]
pub struct AdaptRun {
    pub params: ParamStore,
    pub status: AdaptStatus,
    /// Per-step gradients of the selected subset, recorded when requested.
    pub step_grads: Vec<GradMap>,
    /// Adaptation loss observed at each step's starting point.
    pub step_losses: Vec<f64>,
}

/// Core loop: `steps` full-batch descent steps on an already-prepared block.
pub fn adapt_inner(
    objective: &impl AdaptObjective,
    params: &ParamStore,
    block: &FrameBlock,
    schedule: &Schedule,
    subset: ParamSubset,
    record_steps: bool,
) -> Result<AdaptRun> {
    if block.is_empty() {
        return Ok(AdaptRun {
            params: params.clone(),
            status: AdaptStatus::DeclinedEmpty,
            step_grads: Vec::new(),
            step_losses: Vec::new(),
        });
    }
    let mut working = params.clone();
    let mut step_grads = Vec::new();
    let mut step_losses = Vec::new();
    for _ in 0..schedule.steps {
        let loss = objective.loss_and_grad(&mut working, block)?;
        step_losses.push(loss);
        if record_steps {
            let mut selected = GradMap::new();
            for id in subset.resolve(&working) {
                selected.insert(id, working.grad(id)?.clone());
            }
            step_grads.push(selected);
        }
        working = adapt_step(&working, working.grads(), schedule, subset)?;
    }
    Ok(AdaptRun {
        params: working,
        status: AdaptStatus::Adapted {
            steps: schedule.steps,
        },
        step_grads,
        step_losses,
    })
}

/// Speaker adaptation of the acoustic model: silence-filters the adaptation
/// data, then runs the descent loop on the frozen-statistics path. Empty
/// post-filter data declines and returns the original parameters.
pub fn adapt(
    model: &Model,
    params: &ParamStore,
    adaptation_data: &FrameBlock,
    schedule: &Schedule,
    subset: ParamSubset,
) -> Result<AdaptRun> {
    adapt_with_stats(model, params, adaptation_data, schedule, subset, StatsMode::Global)
}

/// Like [`adapt`] but under an explicit statistics mode (the per-batch
/// variant exists for the evaluation comparison).
pub fn adapt_with_stats(
    model: &Model,
    params: &ParamStore,
    adaptation_data: &FrameBlock,
    schedule: &Schedule,
    subset: ParamSubset,
    stats: StatsMode,
) -> Result<AdaptRun> {
    let filtered = silence_filter(adaptation_data, model.config.silence_class);
    let objective = ModelObjective { model, stats };
    adapt_inner(&objective, params, &filtered, schedule, subset, false)
}

/// Quadratic test objective `L = 0.5 * sum ||theta - target||^2`; the
/// gradient is `theta - target`. Useful wherever a closed-form descent
/// trajectory is needed.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub targets: IndexMap<ParamId, Tensor>,
}

impl AdaptObjective for QuadraticObjective {
    fn loss(&self, params: &ParamStore, _block: &FrameBlock) -> Result<f64> {
        let mut total = 0.0;
        for (id, t) in params.iter() {
            let target = self
                .targets
                .get(&id)
                .ok_or_else(|| Error::Usage(format!("no target for `{id}`")))?;
            for (a, b) in t.data().iter().zip(target.data()) {
                total += 0.5 * (a - b) * (a - b);
            }
        }
        Ok(total)
    }

    fn loss_and_grad(&self, params: &mut ParamStore, block: &FrameBlock) -> Result<f64> {
        let loss = self.loss(params, block)?;
        params.zero_grads();
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            let diff = {
                let t = params.get(id)?;
                let target = &self.targets[&id];
                let mut d = t.clone();
                d.axpy(-1.0, target)?;
                d
            };
            params.grad_mut(id)?.axpy(1.0, &diff)?;
        }
        Ok(loss)
    }
}

/// A block with no feature content, for objectives that ignore data.
pub fn empty_block() -> FrameBlock {
    FrameBlock {
        x: Tensor::filled(vec![1, 1], 0.0),
        y: vec![usize::MAX - 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mode, ModelConfig};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            hidden: vec![4],
            n_classes: 3,
            context_frames: 0,
            silence_class: 0,
            epsilon: 1e-5,
            momentum: 0.01,
        }
    }

    fn rand_block(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> FrameBlock {
        let data: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FrameBlock {
            x: Tensor::from_vec(vec![n, dim], data).unwrap(),
            y: (0..n).map(|_| rng.gen_range(0..classes)).collect(),
        }
    }

    #[test]
    fn schedule_round_trips_through_text() {
        let cfg = tiny_config();
        let mut sched = Schedule::uniform(&cfg, 0.125, 3).unwrap();
        sched.set_rate((0, RoleGroup::Lhuc), 2.75).unwrap();
        let header = vec![("subset".to_string(), "lhuc".to_string())];
        let text = sched.to_text(&header);
        let (parsed, meta) = Schedule::from_text(&text).unwrap();
        assert_eq!(parsed, sched);
        assert_eq!(meta, header);
    }

    #[test]
    fn schedule_rejects_negative_rates() {
        assert!(Schedule::from_text("steps = 3\n0.dense = -0.5\n").is_err());
    }

    #[test]
    fn default_constants_match_the_protocol() {
        assert_eq!(DEFAULT_ADAPT_STEPS, 3);
        assert!((DEFAULT_INITIAL_RATE - 0.001).abs() < 1e-15);
    }

    #[test]
    fn silence_filter_keeps_order_and_drops_silence() {
        let block = FrameBlock {
            x: Tensor::from_vec(vec![5, 1], vec![10.0, 11.0, 12.0, 13.0, 14.0]).unwrap(),
            y: vec![1, 0, 2, 0, 1],
        };
        let out = silence_filter(&block, 0);
        assert_eq!(out.y, vec![1, 2, 1]);
        assert_eq!(
            out.x.data(),
            &[10.0, 12.0, 14.0],
        );
        let clean = FrameBlock {
            x: block.x.clone(),
            y: vec![1, 2, 1, 2, 1],
        };
        let kept = silence_filter(&clean, 0);
        assert_eq!(kept.x.data(), block.x.data());
        let silent = FrameBlock {
            x: block.x.clone(),
            y: vec![0; 5],
        };
        assert!(silence_filter(&silent, 0).is_empty());
    }

    #[test]
    fn adapt_step_with_zero_rates_is_identity() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone()).unwrap();
        let mut params = model.init_params(0);
        let block = rand_block(&mut ChaCha8Rng::seed_from_u64(1), 6, 3, 3);
        let obj = ModelObjective::global(&model);
        obj.loss_and_grad(&mut params, &block).unwrap();
        let sched = Schedule::uniform(&cfg, 0.0, 3).unwrap();
        let next = adapt_step(&params, params.grads(), &sched, ParamSubset::All).unwrap();
        assert_eq!(next.max_abs_diff(&params), 0.0);
    }

    #[test]
    fn adapt_step_moves_against_the_gradient() {
        // scalar theta = 1, g = 2, alpha = 0.1 -> theta' = 0.8
        let mut params = ParamStore::new();
        let id = ParamId::new(0, ParamRole::Weight);
        params.insert(id, Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap());
        let mut grads = GradMap::new();
        grads.insert(id, Tensor::from_vec(vec![1, 1], vec![2.0]).unwrap());
        let cfg = ModelConfig {
            hidden: vec![1],
            ..tiny_config()
        };
        let sched = Schedule::uniform(&cfg, 0.1, 1).unwrap();
        let next = adapt_step(&params, &grads, &sched, ParamSubset::All).unwrap();
        assert!((next.get(id).unwrap().data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn lhuc_subset_leaves_other_tensors_bitwise_unchanged() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone()).unwrap();
        let mut params = model.init_params(2);
        let block = rand_block(&mut ChaCha8Rng::seed_from_u64(3), 8, 3, 3);
        let obj = ModelObjective::global(&model);
        obj.loss_and_grad(&mut params, &block).unwrap();
        let sched = Schedule::uniform(&cfg, 0.5, 1).unwrap();
        let next = adapt_step(&params, params.grads(), &sched, ParamSubset::Lhuc).unwrap();
        for (id, t) in params.iter() {
            if id.role != ParamRole::Lhuc {
                assert_eq!(next.get(id).unwrap().data(), t.data(), "{id} moved");
            }
        }
    }

    #[test]
    fn missing_gradient_for_selected_id_is_a_usage_error() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone()).unwrap();
        let params = model.init_params(4);
        let sched = Schedule::uniform(&cfg, 0.1, 1).unwrap();
        let err = adapt_step(&params, &GradMap::new(), &sched, ParamSubset::All).unwrap_err();
        assert_eq!(err.kind(), "usage");
        assert!(err.to_string().contains("missing gradient"));
    }

    #[test]
    fn adapt_with_zero_steps_returns_params_unchanged() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone()).unwrap();
        let params = model.init_params(5);
        let block = rand_block(&mut ChaCha8Rng::seed_from_u64(6), 5, 3, 3);
        let sched = Schedule::uniform(&cfg, 0.3, 0).unwrap();
        let run = adapt(&model, &params, &block, &sched, ParamSubset::All).unwrap();
        assert_eq!(run.params.max_abs_diff(&params), 0.0);
        assert_eq!(run.status, AdaptStatus::Adapted { steps: 0 });
    }

    #[test]
    fn adapt_declines_on_all_silent_data() {
        let cfg = tiny_config();
        let model = Model::new(cfg.clone()).unwrap();
        let params = model.init_params(7);
        let mut block = rand_block(&mut ChaCha8Rng::seed_from_u64(8), 5, 3, 3);
        block.y = vec![0; 5]; // class 0 is silence
        let sched = Schedule::uniform(&cfg, 0.3, 3).unwrap();
        let run = adapt(&model, &params, &block, &sched, ParamSubset::All).unwrap();
        assert_eq!(run.status, AdaptStatus::DeclinedEmpty);
        assert_eq!(run.params.max_abs_diff(&params), 0.0);
    }

    #[test]
    fn one_step_on_a_quadratic_matches_the_closed_form() {
        let id = ParamId::new(0, ParamRole::Weight);
        let mut params = ParamStore::new();
        params.insert(id, Tensor::from_vec(vec![2], vec![1.0, -2.0]).unwrap());
        let mut targets = IndexMap::new();
        targets.insert(id, Tensor::from_vec(vec![2], vec![0.5, 0.5]).unwrap());
        let obj = QuadraticObjective { targets };
        let cfg = ModelConfig {
            hidden: vec![1],
            ..tiny_config()
        };
        let alpha = 0.25;
        let sched = Schedule::uniform(&cfg, alpha, 1).unwrap();
        let run = adapt_inner(&obj, &params, &empty_block(), &sched, ParamSubset::All, false).unwrap();
        // theta' = theta - alpha (theta - t)
        let got = run.params.get(id).unwrap().data();
        assert!((got[0] - (1.0 - alpha * 0.5)).abs() < 1e-15);
        assert!((got[1] - (-2.0 - alpha * -2.5)).abs() < 1e-15);
    }

    #[test]
    fn small_uniform_step_never_increases_the_adaptation_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let cfg = tiny_config();
            let model = Model::new(cfg.clone()).unwrap();
            let params = model.init_params(100 + trial);
            let block = rand_block(&mut rng, 8, 3, 3);
            let filtered = silence_filter(&block, cfg.silence_class);
            if filtered.is_empty() {
                continue;
            }
            let sched = Schedule::uniform(&cfg, 1e-6, 1).unwrap();
            let obj = ModelObjective::global(&model);
            let before = obj.loss(&params, &filtered).unwrap();
            let run = adapt(&model, &params, &block, &sched, ParamSubset::All).unwrap();
            let after = obj.loss(&run.params, &filtered).unwrap();
            assert!(after <= before + 1e-15, "loss rose {before} -> {after}");
        }
    }

    #[test]
    fn adaptation_uses_the_frozen_statistics_path() {
        // One step must equal a hand-built step from inference-path
        // gradients, proving adaptation sees inference activations.
        let cfg = tiny_config();
        let model = Model::new(cfg.clone()).unwrap();
        let mut params = model.init_params(11);
        let block = rand_block(&mut ChaCha8Rng::seed_from_u64(12), 6, 3, 3);
        let filtered = silence_filter(&block, cfg.silence_class);
        let alpha = 0.05;
        let sched = Schedule::uniform(&cfg, alpha, 1).unwrap();
        let run = adapt(&model, &params, &block, &sched, ParamSubset::All).unwrap();

        let (logits, trace) = model.forward(&params, &filtered.x, Mode::Infer).unwrap();
        let (_, gl) = softmax_xent(&logits, &filtered.y).unwrap();
        params.zero_grads();
        model.backward(&mut params, &trace, &gl).unwrap();
        let expect = adapt_step(&params, params.grads(), &sched, ParamSubset::All).unwrap();
        assert_eq!(run.params.max_abs_diff(&expect), 0.0);
    }
}
