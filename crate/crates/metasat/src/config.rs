//! Plain-text `key = value` configuration shared by every command.
//!
//! Every key has a built-in default except `seed`, which must come from the
//! `--seed` flag or a `seed` entry; a reproducible run has no default seed.

use indexmap::IndexMap;
use std::path::Path;

use crate::adapt::{ParamSubset, DEFAULT_ADAPT_STEPS, DEFAULT_INITIAL_RATE};
use crate::corpus::CorpusParams;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, StatsMode};
use crate::trainers::{FitHyper, MamlHyper, TrainHyper};

/// Parsed key-value configuration.
#[derive(Debug, Clone, Default)]
pub struct Config {
    values: IndexMap<String, String>,
}

impl Config {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = IndexMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {} is not `key = value`", lineno + 1))
            })?;
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Required key; absence names the key in the error.
    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing config key `{key}`")))
    }

    pub fn require_u64(&self, key: &str) -> Result<u64> {
        parse_with(key, self.require(key)?)
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => parse_with(key, raw),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.typed(key, default)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.typed(key, default)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn usize_list_or(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|p| parse_with(key, p.trim()))
                .collect(),
        }
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(raw) => raw
                .split(',')
                .map(|p| parse_with(key, p.trim()))
                .collect(),
        }
    }

    pub fn str_list_or(&self, key: &str, default: &[&str]) -> Vec<String> {
        match self.get(key) {
            None => default.iter().map(|s| s.to_string()).collect(),
            Some(raw) => raw.split(',').map(|p| p.trim().to_string()).collect(),
        }
    }
}

fn parse_with<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("config key `{key}` has invalid value `{raw}`")))
}

/// Corpus parameters from config plus the resolved seed.
pub fn corpus_params(cfg: &Config, seed: u64) -> Result<CorpusParams> {
    let d = CorpusParams::default();
    let split = cfg.f64_list_or("split", &d.split_fractions)?;
    if split.len() != 3 {
        return Err(Error::Config(format!(
            "config key `split` needs 3 fractions, got {}",
            split.len()
        )));
    }
    let params = CorpusParams {
        seed,
        n_speakers: cfg.usize_or("n_speakers", d.n_speakers)?,
        frames_per_speaker: cfg.usize_or("frames_per_speaker", d.frames_per_speaker)?,
        feature_dim: cfg.usize_or("feature_dim", d.feature_dim)?,
        n_classes: cfg.usize_or("n_classes", d.n_classes)?,
        spread: cfg.f64_or("spread", d.spread)?,
        silence_fraction: cfg.f64_or("silence_fraction", d.silence_fraction)?,
        class_sigma: cfg.f64_or("class_sigma", d.class_sigma)?,
        segment_frames: cfg.usize_or("segment_frames", d.segment_frames)?,
        segment_noise_share: cfg.f64_or("segment_noise_share", d.segment_noise_share)?,
        frames_per_second: cfg.usize_or("frames_per_second", d.frames_per_second)?,
        max_condition: cfg.f64_or("max_condition", d.max_condition)?,
        split_fractions: [split[0], split[1], split[2]],
    };
    params.validate()?;
    Ok(params)
}

/// Model configuration; feature dimension and class count come from the
/// corpus so the two cannot drift apart.
pub fn model_config(cfg: &Config, corpus: &CorpusParams) -> Result<ModelConfig> {
    let config = ModelConfig {
        input_dim: corpus.feature_dim,
        hidden: cfg.usize_list_or("hidden", &[16, 16])?,
        n_classes: corpus.n_classes,
        context_frames: cfg.usize_or("context_frames", 2)?,
        silence_class: 0,
        epsilon: cfg.f64_or("epsilon", 1e-5)?,
        momentum: cfg.f64_or("momentum", 0.01)?,
    };
    config.validate()?;
    Ok(config)
}

pub fn train_hyper(cfg: &Config, seed: u64) -> Result<TrainHyper> {
    let d = TrainHyper::default();
    Ok(TrainHyper {
        seed,
        iterations: cfg.usize_or("iterations", d.iterations)?,
        batches_per_iter: cfg.usize_or("batches_per_iter", d.batches_per_iter)?,
        batch_size: cfg.usize_or("batch_size", d.batch_size)?,
        lr: cfg.f64_or("lr", d.lr)?,
        val_fraction: cfg.f64_or("val_fraction", d.val_fraction)?,
        val_max_frames: cfg.usize_or("val_max_frames", d.val_max_frames)?,
    })
}

pub fn si_probability(cfg: &Config) -> Result<f64> {
    let p = cfg.f64_or("si_probability", 0.5)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!(
            "config key `si_probability` must lie in [0, 1], got {p}"
        )));
    }
    Ok(p)
}

pub fn maml_hyper(cfg: &Config, seed: u64) -> Result<MamlHyper> {
    let d = MamlHyper::default();
    Ok(MamlHyper {
        seed,
        iterations: cfg.usize_or("maml_iterations", d.iterations)?,
        batches_per_iter: cfg.usize_or("maml_batches_per_iter", d.batches_per_iter)?,
        speakers_per_batch: cfg.usize_or("speakers_per_batch", d.speakers_per_batch)?,
        adapt_steps: cfg.usize_or("adapt_steps", DEFAULT_ADAPT_STEPS)?,
        train_budget_frames: cfg.usize_or("train_budget_frames", d.train_budget_frames)?,
        lambda_unadapted: cfg.f64_or("lambda_unadapted", d.lambda_unadapted)?,
        lr: cfg.f64_or("maml_lr", d.lr)?,
        phi_init: cfg.f64_or("phi_init", DEFAULT_INITIAL_RATE)?,
        val_episodes: cfg.usize_or("maml_val_episodes", d.val_episodes)?,
        stats_refresh_frames: cfg.usize_or("stats_refresh_frames", d.stats_refresh_frames)?,
    })
}

pub fn fit_hyper(cfg: &Config, seed: u64) -> Result<FitHyper> {
    let d = FitHyper::default();
    Ok(FitHyper {
        seed,
        iterations: cfg.usize_or("fit_iterations", d.iterations)?,
        episodes_per_iter: cfg.usize_or("fit_episodes_per_iter", d.episodes_per_iter)?,
        lr: cfg.f64_or("fit_lr", d.lr)?,
        adapt_steps: cfg.usize_or("adapt_steps", DEFAULT_ADAPT_STEPS)?,
        phi_init: cfg.f64_or("phi_init", DEFAULT_INITIAL_RATE)?,
        eval_episodes: cfg.usize_or("fit_eval_episodes", d.eval_episodes)?,
        eval_every: cfg.usize_or("fit_eval_every", d.eval_every)?,
    })
}

/// Evaluation-plan keys.
pub fn eval_budgets(cfg: &Config) -> Result<Vec<usize>> {
    cfg.usize_list_or("budgets", &[1000, 3000, 6000])
}

pub fn eval_stats_modes(cfg: &Config) -> Result<Vec<StatsMode>> {
    cfg.str_list_or("eval_stats", &["global"])
        .iter()
        .map(|s| StatsMode::from_str(s))
        .collect()
}

/// Episode anchor frame for evaluation; adaptation windows end here and
/// the shared unseen window starts here. Defaults to the largest plan
/// budget.
pub fn eval_anchor(cfg: &Config, budgets: &[usize]) -> Result<usize> {
    let default = budgets.iter().copied().max().unwrap_or(0);
    cfg.usize_or("eval_anchor", default)
}

/// Length of the shared unseen evaluation window. Defaults to everything
/// after the anchor (the whole remaining stream of each test speaker).
pub fn eval_frames(cfg: &Config, anchor: usize, frames_per_speaker: usize) -> Result<usize> {
    let default = frames_per_speaker.saturating_sub(anchor);
    cfg.usize_or("eval_frames", default)
}

pub fn parse_subset(s: &str) -> Result<ParamSubset> {
    ParamSubset::from_str(s)
}
