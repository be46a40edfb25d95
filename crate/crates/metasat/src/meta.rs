//! Episode-based meta-loss and first-order meta-gradients for the model
//! weights and the adaptation schedule.

use indexmap::IndexMap;

use crate::adapt::{adapt_inner, silence_filter, AdaptObjective, ModelObjective, ParamSubset, RateKey, RoleGroup, Schedule};
use crate::corpus::{Episode, FrameBlock};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{GradMap, ParamStore};

/// Mixing weight between the unadapted and adapted loss terms:
/// `J_ep = lambda * L_u(theta) + (1 - lambda) * L_u(adapted theta)`.
#[derive(Debug, Clone, Copy)]
pub struct LossCombo {
    pub lambda_unadapted: f64,
}

impl LossCombo {
    pub fn new(lambda_unadapted: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda_unadapted) {
            return Err(Error::Config(format!(
                "lambda_unadapted must lie in [0, 1], got {lambda_unadapted}"
            )));
        }
        Ok(Self { lambda_unadapted })
    }

    /// Pure adapted loss (the test-time schedule-fitting objective).
    pub fn adapted_only() -> Self {
        Self {
            lambda_unadapted: 0.0,
        }
    }
}

/// One meta-batch: one episode per distinct speaker.
#[derive(Debug, Clone)]
pub struct MetaBatch {
    pub episodes: Vec<Episode>,
}

impl MetaBatch {
    pub fn new(episodes: Vec<Episode>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for ep in &episodes {
            if !seen.insert(ep.speaker) {
                return Err(Error::Usage(format!(
                    "speaker {} appears twice in one meta-batch",
                    ep.speaker
                )));
            }
        }
        Ok(Self { episodes })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

/// An episode reduced to what the meta objective consumes: the adaptation
/// block (already silence-filtered for acoustic episodes) and the unseen
/// block with reference labels.
pub struct EpisodePair<'a> {
    pub adapt: FrameBlock,
    pub unseen: &'a FrameBlock,
}

/// Silence-filters the adaptation halves of a meta-batch.
pub fn prepare_episodes<'a>(model: &Model, batch: &'a MetaBatch) -> Vec<EpisodePair<'a>> {
    batch
        .episodes
        .iter()
        .map(|ep| EpisodePair {
            adapt: silence_filter(&ep.adapt, model.config.silence_class),
            unseen: &ep.unseen,
        })
        .collect()
}

/// First-order meta-gradients plus the meta-loss value they belong to.
#[derive(Debug, Clone)]
pub struct MetaGrads {
    pub j: f64,
    pub theta: GradMap,
    pub phi: IndexMap<RateKey, f64>,
}

/// Sum over episodes of the combined episode loss.
pub fn meta_loss_core(
    objective: &impl AdaptObjective,
    params: &ParamStore,
    schedule: &Schedule,
    subset: ParamSubset,
    pairs: &[EpisodePair<'_>],
    combo: LossCombo,
) -> Result<f64> {
    let lambda = combo.lambda_unadapted;
    let mut j = 0.0;
    for pair in pairs {
        if lambda > 0.0 {
            j += lambda * objective.loss(params, pair.unseen)?;
        }
        if lambda < 1.0 {
            let run = adapt_inner(objective, params, &pair.adapt, schedule, subset, false)?;
            j += (1.0 - lambda) * objective.loss(&run.params, pair.unseen)?;
        }
    }
    Ok(j)
}

/// First-order meta-gradient contract.
///
/// Per episode, `grad_theta` receives `lambda * grad L_u(theta)` plus
/// `(1 - lambda) * grad L_u` evaluated at the adapted weights and applied
/// to `theta` directly (inner-step Jacobians treated as identity). Each
/// per-layer-group rate receives
/// `-(1 - lambda) * <grad_{theta'} L_u|_group, g_step|_group>` summed over
/// inner steps, with the inner-step gradients `g_step` treated as constants.
pub fn fomaml_core(
    objective: &impl AdaptObjective,
    params: &ParamStore,
    schedule: &Schedule,
    subset: ParamSubset,
    pairs: &[EpisodePair<'_>],
    combo: LossCombo,
) -> Result<MetaGrads> {
    let lambda = combo.lambda_unadapted;
    let mut j = 0.0;
    let mut theta: GradMap = params
        .iter()
        .map(|(id, t)| (id, crate::tensor::Tensor::zeros_like(t)))
        .collect();
    let mut phi: IndexMap<RateKey, f64> =
        schedule.rate_keys().into_iter().map(|k| (k, 0.0)).collect();

    for pair in pairs {
        if lambda > 0.0 {
            let mut work = params.clone();
            let loss = objective.loss_and_grad(&mut work, pair.unseen)?;
            j += lambda * loss;
            for (id, g) in work.grads() {
                theta
                    .get_mut(id)
                    .expect("theta accumulator mirrors params")
                    .axpy(lambda, g)?;
            }
        }
        if lambda < 1.0 {
            let run = adapt_inner(objective, params, &pair.adapt, schedule, subset, true)?;
            let mut adapted = run.params;
            let loss = objective.loss_and_grad(&mut adapted, pair.unseen)?;
            j += (1.0 - lambda) * loss;
            let outer = adapted.grads();
            for (id, g) in outer {
                theta
                    .get_mut(id)
                    .expect("theta accumulator mirrors params")
                    .axpy(1.0 - lambda, g)?;
            }
            for step in &run.step_grads {
                for (id, g_step) in step {
                    let h = outer
                        .get(id)
                        .ok_or_else(|| Error::Usage(format!("no outer gradient for `{id}`")))?;
                    let key = (id.layer, RoleGroup::of(id.role));
                    let dot = h.dot(g_step)?;
                    let slot = phi
                        .get_mut(&key)
                        .ok_or_else(|| Error::Usage(format!(
                            "schedule has no rate for layer {} group {}",
                            key.0,
                            key.1.as_str()
                        )))?;
                    *slot += -(1.0 - lambda) * dot;
                }
            }
        }
    }
    Ok(MetaGrads { j, theta, phi })
}

/// Meta-loss of the acoustic model over a meta-batch (Episode adaptation
/// halves are silence-filtered; unseen labels stay untouched).
pub fn meta_loss(
    model: &Model,
    params: &ParamStore,
    schedule: &Schedule,
    subset: ParamSubset,
    batch: &MetaBatch,
    combo: LossCombo,
) -> Result<f64> {
    let pairs = prepare_episodes(model, batch);
    let objective = ModelObjective::global(model);
    meta_loss_core(&objective, params, schedule, subset, &pairs, combo)
}

/// First-order meta-gradients of the acoustic model over a meta-batch.
pub fn fomaml_grads(
    model: &Model,
    params: &ParamStore,
    schedule: &Schedule,
    subset: ParamSubset,
    batch: &MetaBatch,
    combo: LossCombo,
) -> Result<MetaGrads> {
    let pairs = prepare_episodes(model, batch);
    let objective = ModelObjective::global(model);
    fomaml_core(&objective, params, schedule, subset, &pairs, combo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::empty_block;
    use crate::gradcheck::rel_err;
    use crate::model::ModelConfig;
    use crate::params::{ParamId, ParamRole};
    use crate::tensor::Tensor;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Loss linear in every parameter: `L = s(y) * sum_id <c_id, theta_id>`
    /// where `s(y) = y[0] + 1`. Gradients are constant per block, which is
    /// the regime where the first-order schedule gradient is exact.
    struct LinearObjective {
        coeffs: GradMap,
    }

    impl AdaptObjective for LinearObjective {
        fn loss(&self, params: &ParamStore, block: &FrameBlock) -> Result<f64> {
            let scale = (block.y[0] % 1000) as f64 + 1.0;
            let mut total = 0.0;
            for (id, t) in params.iter() {
                total += t.dot(&self.coeffs[&id])?;
            }
            Ok(scale * total)
        }

        fn loss_and_grad(&self, params: &mut ParamStore, block: &FrameBlock) -> Result<f64> {
            let loss = self.loss(params, block)?;
            let scale = (block.y[0] % 1000) as f64 + 1.0;
            params.zero_grads();
            let ids: Vec<ParamId> = params.ids().collect();
            for id in ids {
                let c = self.coeffs[&id].clone();
                params.grad_mut(id)?.axpy(scale, &c)?;
            }
            Ok(loss)
        }
    }

    fn linear_setup(seed: u64) -> (ParamStore, LinearObjective, Schedule, ModelConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig {
            input_dim: 2,
            hidden: vec![3, 2],
            n_classes: 3,
            context_frames: 0,
            silence_class: 0,
            epsilon: 1e-5,
            momentum: 0.01,
        };
        let mut params = ParamStore::new();
        let mut coeffs = GradMap::new();
        for id in cfg.param_ids() {
            let len = 3;
            let t: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            params.insert(id, Tensor::from_vec(vec![len], t).unwrap());
            coeffs.insert(id, Tensor::from_vec(vec![len], c).unwrap());
        }
        let mut schedule = Schedule::uniform(&cfg, 0.01, 2).unwrap();
        for key in schedule.rate_keys() {
            schedule.set_rate(key, rng.gen_range(0.001..0.05)).unwrap();
        }
        (params, LinearObjective { coeffs }, schedule, cfg)
    }

    fn linear_pairs() -> Vec<EpisodePair<'static>> {
        // scales: adapt block 1.0, unseen block 2.0 (via y[0] = 0 and 1)
        let adapt = FrameBlock {
            x: Tensor::filled(vec![1, 1], 0.0),
            y: vec![0],
        };
        let unseen = Box::leak(Box::new(FrameBlock {
            x: Tensor::filled(vec![1, 1], 0.0),
            y: vec![1],
        }));
        vec![EpisodePair {
            adapt,
            unseen,
        }]
    }

    #[test]
    fn zero_rates_make_the_meta_loss_the_unadapted_loss() {
        let (params, obj, _, cfg) = linear_setup(1);
        let zero = Schedule::uniform(&cfg, 0.0, 3).unwrap();
        let pairs = linear_pairs();
        let j_half = meta_loss_core(&obj, &params, &zero, ParamSubset::All, &pairs, LossCombo::new(0.5).unwrap()).unwrap();
        let j_zero = meta_loss_core(&obj, &params, &zero, ParamSubset::All, &pairs, LossCombo::adapted_only()).unwrap();
        let unadapted = obj.loss(&params, pairs[0].unseen).unwrap();
        assert!((j_half - unadapted).abs() < 1e-12);
        assert!((j_zero - unadapted).abs() < 1e-12);
    }

    #[test]
    fn lambda_one_ignores_adaptation_entirely() {
        let (params, obj, schedule, _) = linear_setup(2);
        let pairs = linear_pairs();
        let j = meta_loss_core(&obj, &params, &schedule, ParamSubset::All, &pairs, LossCombo::new(1.0).unwrap()).unwrap();
        let unadapted = obj.loss(&params, pairs[0].unseen).unwrap();
        assert!((j - unadapted).abs() < 1e-12);
    }

    #[test]
    fn identical_episodes_double_the_meta_loss() {
        let (params, obj, schedule, _) = linear_setup(3);
        let one = linear_pairs();
        let mut two = linear_pairs();
        two.extend(linear_pairs());
        let combo = LossCombo::new(0.5).unwrap();
        let j1 = meta_loss_core(&obj, &params, &schedule, ParamSubset::All, &one, combo).unwrap();
        let j2 = meta_loss_core(&obj, &params, &schedule, ParamSubset::All, &two, combo).unwrap();
        assert!((j2 - 2.0 * j1).abs() < 1e-9);
    }

    #[test]
    fn zero_rates_reduce_theta_grads_to_plain_gradients() {
        let (params, obj, _, cfg) = linear_setup(4);
        let zero = Schedule::uniform(&cfg, 0.0, 3).unwrap();
        let pairs = linear_pairs();
        let grads = fomaml_core(&obj, &params, &zero, ParamSubset::All, &pairs, LossCombo::new(0.3).unwrap()).unwrap();
        // With rates at zero the adapted point is theta itself, so
        // grad_theta = lambda g + (1-lambda) g = g.
        let mut work = params.clone();
        let _ = obj.loss_and_grad(&mut work, pairs[0].unseen).unwrap();
        for (id, g) in work.grads() {
            for (a, b) in grads.theta[id].data().iter().zip(g.data()) {
                assert!(rel_err(*a, *b) < 1e-9, "{id}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn schedule_gradients_match_finite_differences_on_a_linear_loss() {
        let (params, obj, schedule, _) = linear_setup(5);
        let pairs = linear_pairs();
        let combo = LossCombo::new(0.25).unwrap();
        let grads = fomaml_core(&obj, &params, &schedule, ParamSubset::All, &pairs, combo).unwrap();
        let h = 1e-6;
        for key in schedule.rate_keys() {
            let base = schedule.rate(key).unwrap();
            let mut plus = schedule.clone();
            plus.set_rate(key, base + h).unwrap();
            let mut minus = schedule.clone();
            minus.set_rate(key, (base - h).max(0.0)).unwrap();
            let denom = (base + h) - (base - h).max(0.0);
            let jp = meta_loss_core(&obj, &params, &plus, ParamSubset::All, &pairs, combo).unwrap();
            let jm = meta_loss_core(&obj, &params, &minus, ParamSubset::All, &pairs, combo).unwrap();
            let fd = (jp - jm) / denom;
            let analytic = grads.phi[&key];
            assert!(
                rel_err(analytic, fd) < 1e-6,
                "rate {key:?}: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn single_step_quadratic_schedule_gradient_matches_the_hand_formula() {
        // One episode, one inner step, quadratic loss
        // L(theta) = 0.5 ||theta - t||^2 on both blocks. The hand formula
        // is grad_alpha = -<grad_{theta'} L_u, g> per group.
        use crate::adapt::QuadraticObjective;
        use indexmap::IndexMap;
        let id = ParamId::new(0, ParamRole::Weight);
        let mut params = ParamStore::new();
        params.insert(id, Tensor::from_vec(vec![2], vec![1.0, -1.0]).unwrap());
        let mut targets = IndexMap::new();
        targets.insert(id, Tensor::from_vec(vec![2], vec![0.2, 0.4]).unwrap());
        let obj = QuadraticObjective { targets: targets.clone() };
        let cfg = ModelConfig {
            input_dim: 1,
            hidden: vec![1],
            n_classes: 2,
            context_frames: 0,
            silence_class: 0,
            epsilon: 1e-5,
            momentum: 0.01,
        };
        let alpha = 0.1;
        let schedule = Schedule::uniform(&cfg, alpha, 1).unwrap();
        let unseen = empty_block();
        let pairs = vec![EpisodePair {
            adapt: empty_block(),
            unseen: &unseen,
        }];
        let grads = fomaml_core(&obj, &params, &schedule, ParamSubset::All, &pairs, LossCombo::adapted_only()).unwrap();
        // g = theta - t; theta' = theta - alpha g; h = theta' - t = (1 - alpha) g
        // grad_alpha = -<h, g> = -(1 - alpha) ||g||^2
        let g = [1.0 - 0.2, -1.0 - 0.4];
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        let expect = -(1.0 - alpha) * norm2;
        let key = (0, RoleGroup::Dense);
        assert!(
            (grads.phi[&key] - expect).abs() < 1e-12,
            "{} vs {expect}",
            grads.phi[&key]
        );
    }

    #[test]
    fn meta_batch_rejects_duplicate_speakers() {
        let params = crate::corpus::CorpusParams {
            n_speakers: 2,
            frames_per_speaker: 40,
            feature_dim: 2,
            n_classes: 2,
            ..Default::default()
        };
        let corpus = crate::corpus::generate_corpus(&params).unwrap();
        let a = crate::corpus::sample_episode(&corpus, 0, 10, 0, 0).unwrap();
        let b = crate::corpus::sample_episode(&corpus, 0, 10, 4, 0).unwrap();
        assert!(MetaBatch::new(vec![a, b]).is_err());
    }
}
