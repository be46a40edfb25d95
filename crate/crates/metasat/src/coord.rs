//! Coordinate-wise recurrent meta-learner.
//!
//! One small two-layer LSTM tower is shared across every adapted weight.
//! Per coordinate it reads `(theta, loss, grad)` and emits a forget gate
//! `f` and input gate `i` for the update `theta' = f * theta - i * grad`,
//! which lets it realise plain descent (`f = 1`, `i = alpha`) as well as
//! coordinate resets (`f = i = 0`). Per-coordinate hidden state makes this
//! memory-hungry, so the adapted subset is capped.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::adapt::{silence_filter, AdaptObjective, ModelObjective, ParamSubset};
use crate::corpus::FrameBlock;
use crate::error::{Error, Result};
use crate::model::{Model, StatsMode};
use crate::ops::sigmoid;
use crate::optim::AdamVec;
use crate::params::{ParamId, ParamStore};
use crate::rng::{stream, tags};

/// Hard cap on adapted coordinates; per-coordinate LSTM state does not
/// scale beyond small parameter subsets.
pub const MAX_COORDINATES: usize = 100_000;

/// Width of each recurrent layer.
pub const CELL_WIDTH: usize = 8;

const INPUTS: usize = 3;

/// One LSTM layer's weights (gate order: input, forget, cell, output).
#[derive(Debug, Clone)]
struct LstmLayer {
    in_dim: usize,
    width: usize,
    /// `[4 * width, in_dim]`, row-major.
    wx: Vec<f64>,
    /// `[4 * width, width]`, row-major.
    wh: Vec<f64>,
    b: Vec<f64>,
}

impl LstmLayer {
    fn new(in_dim: usize, width: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.15).expect("finite stddev");
        let mut layer = Self {
            in_dim,
            width,
            wx: (0..4 * width * in_dim).map(|_| normal.sample(rng)).collect(),
            wh: (0..4 * width * width).map(|_| normal.sample(rng)).collect(),
            b: vec![0.0; 4 * width],
        };
        // forget-gate bias starts positive so early state persists
        for j in width..2 * width {
            layer.b[j] = 1.0;
        }
        layer
    }

    fn step(&self, x: &[f64], h: &mut [f64], c: &mut [f64]) {
        let w = self.width;
        let mut z = self.b.clone();
        for (k, &xv) in x.iter().enumerate() {
            for j in 0..4 * w {
                z[j] += self.wx[j * self.in_dim + k] * xv;
            }
        }
        for (k, &hv) in h.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            for j in 0..4 * w {
                z[j] += self.wh[j * w + k] * hv;
            }
        }
        for j in 0..w {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[w + j]);
            let g = z[2 * w + j].tanh();
            let o = sigmoid(z[3 * w + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
    }

    fn param_count(&self) -> usize {
        self.wx.len() + self.wh.len() + self.b.len()
    }
}

/// The learned gate network: two LSTM layers plus a linear head that emits
/// raw forget/input gate scores.
#[derive(Debug, Clone)]
pub struct LstmTower {
    layers: Vec<LstmLayer>,
    /// `[2, top_width]`, row-major.
    head_w: Vec<f64>,
    head_b: [f64; 2],
}

impl LstmTower {
    fn new(rng: &mut impl Rng) -> Self {
        let l1 = LstmLayer::new(INPUTS, CELL_WIDTH, rng);
        let l2 = LstmLayer::new(CELL_WIDTH, CELL_WIDTH, rng);
        Self {
            layers: vec![l1, l2],
            head_w: vec![0.0; 2 * CELL_WIDTH],
            // start near plain descent: f ~ 0.88, i = 0.5
            head_b: [2.0, 0.0],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LstmLayer::param_count).sum::<usize>() + self.head_w.len() + 2
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.wx);
            out.extend_from_slice(&l.wh);
            out.extend_from_slice(&l.b);
        }
        out.extend_from_slice(&self.head_w);
        out.extend_from_slice(&self.head_b);
        out
    }

    pub fn assign(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.wx.len();
            l.wx.copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.wh.len();
            l.wh.copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.b.len();
            l.b.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        let n = self.head_w.len();
        self.head_w.copy_from_slice(&flat[at..at + n]);
        at += n;
        self.head_b = [flat[at], flat[at + 1]];
    }
}

/// Per-coordinate recurrent state: `(h, c)` for each tower layer.
#[derive(Debug, Clone, Default)]
pub struct CoordState {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

/// The adaptation meta-learner: either a trained gate network or gates
/// forced to constants (the plain-descent reduction).
#[derive(Debug, Clone)]
pub enum CoordinateLearner {
    Forced { forget: f64, input: f64 },
    Lstm(LstmTower),
}

impl CoordinateLearner {
    /// Gates pinned to constants; `(1, alpha)` reproduces a descent step.
    pub fn forced(forget: f64, input: f64) -> Self {
        CoordinateLearner::Forced { forget, input }
    }

    /// Seeded untrained gate network.
    pub fn lstm(seed: u64) -> Self {
        let mut rng = stream(seed, tags::LEARNER, 0);
        CoordinateLearner::Lstm(LstmTower::new(&mut rng))
    }

    pub fn fresh_state(&self) -> CoordState {
        match self {
            CoordinateLearner::Forced { .. } => CoordState::default(),
            CoordinateLearner::Lstm(tower) => CoordState {
                layers: tower
                    .layers
                    .iter()
                    .map(|l| (vec![0.0; l.width], vec![0.0; l.width]))
                    .collect(),
            },
        }
    }

    /// Forget/input gates for one coordinate; advances its state.
    pub fn gates(&self, theta: f64, loss: f64, grad: f64, state: &mut CoordState) -> (f64, f64) {
        match self {
            CoordinateLearner::Forced { forget, input } => (*forget, *input),
            CoordinateLearner::Lstm(tower) => {
                let mut x = vec![theta, loss, grad];
                for (layer, (h, c)) in tower.layers.iter().zip(state.layers.iter_mut()) {
                    layer.step(&x, h, c);
                    x = h.clone();
                }
                let top = &state.layers.last().expect("tower has layers").0;
                let mut f_raw = tower.head_b[0];
                let mut i_raw = tower.head_b[1];
                for (j, &hv) in top.iter().enumerate() {
                    f_raw += tower.head_w[j] * hv;
                    i_raw += tower.head_w[CELL_WIDTH + j] * hv;
                }
                (sigmoid(f_raw), sigmoid(i_raw))
            }
        }
    }
}

/// One recurrent update of a single coordinate:
/// `theta_next = f * theta - i * grad`.
pub fn coordinate_update(
    learner: &CoordinateLearner,
    theta: f64,
    loss: f64,
    grad: f64,
    state: &mut CoordState,
) -> f64 {
    let (f, i) = learner.gates(theta, loss, grad, state);
    f * theta - i * grad
}

/// Runs `steps` coordinate-wise updates over the selected subset of an
/// already-prepared data block.
pub fn lstm_adapt_inner(
    objective: &impl AdaptObjective,
    params: &ParamStore,
    block: &FrameBlock,
    learner: &CoordinateLearner,
    steps: usize,
    subset: ParamSubset,
) -> Result<ParamStore> {
    let selected: Vec<ParamId> = subset.resolve(params);
    let coords: usize = selected
        .iter()
        .map(|&id| params.get(id).map(|t| t.len()).unwrap_or(0))
        .sum();
    if coords > MAX_COORDINATES {
        return Err(Error::Capacity(format!(
            "subset selects {coords} coordinates; the coordinate-wise learner is capped at {MAX_COORDINATES}"
        )));
    }
    if block.is_empty() {
        return Ok(params.clone());
    }
    let mut working = params.clone();
    let mut states: Vec<CoordState> = (0..coords).map(|_| learner.fresh_state()).collect();
    for _ in 0..steps {
        let loss = objective.loss_and_grad(&mut working, block)?;
        let mut cursor = 0;
        for &id in &selected {
            let grad = working.grad(id)?.clone();
            let theta = working.get_mut(id)?;
            for (j, g) in grad.data().iter().enumerate() {
                let t = theta.data()[j];
                theta.data_mut()[j] =
                    coordinate_update(learner, t, loss, *g, &mut states[cursor + j]);
            }
            cursor += grad.len();
        }
    }
    Ok(working)
}

/// Coordinate-wise speaker adaptation of the acoustic model, mirroring
/// [`crate::adapt::adapt`]: silence-filtered data, frozen-statistics path.
pub fn lstm_adapt(
    model: &Model,
    params: &ParamStore,
    adaptation_data: &FrameBlock,
    learner: &CoordinateLearner,
    steps: usize,
    subset: ParamSubset,
) -> Result<ParamStore> {
    let filtered = silence_filter(adaptation_data, model.config.silence_class);
    let objective = ModelObjective {
        model,
        stats: StatsMode::Global,
    };
    lstm_adapt_inner(&objective, params, &filtered, learner, steps, subset)
}

/// Final quadratic loss after rolling the learner over a 2-parameter task
/// `L(theta) = 0.5 ||theta - target||^2`.
pub fn quadratic_rollout(
    learner: &CoordinateLearner,
    start: &[f64],
    target: &[f64],
    steps: usize,
) -> f64 {
    let mut theta = start.to_vec();
    let mut states: Vec<CoordState> = (0..theta.len()).map(|_| learner.fresh_state()).collect();
    for _ in 0..steps {
        let loss: f64 = theta
            .iter()
            .zip(target)
            .map(|(a, b)| 0.5 * (a - b) * (a - b))
            .sum();
        for j in 0..theta.len() {
            let grad = theta[j] - target[j];
            theta[j] = coordinate_update(learner, theta[j], loss, grad, &mut states[j]);
        }
    }
    theta
        .iter()
        .zip(target)
        .map(|(a, b)| 0.5 * (a - b) * (a - b))
        .sum()
}

/// Final quadratic loss of plain descent at a fixed rate, same step count.
pub fn sgd_rollout(alpha: f64, start: &[f64], target: &[f64], steps: usize) -> f64 {
    let mut theta = start.to_vec();
    for _ in 0..steps {
        for j in 0..theta.len() {
            theta[j] -= alpha * (theta[j] - target[j]);
        }
    }
    theta
        .iter()
        .zip(target)
        .map(|(a, b)| 0.5 * (a - b) * (a - b))
        .sum()
}

/// Best mean final loss over a log-spaced learning-rate grid.
pub fn grid_sgd_best(tasks: &[([f64; 2], [f64; 2])], steps: usize) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..13 {
        // 13 log-spaced rates from 1e-3 to 0.5
        let alpha = 1e-3 * (0.5_f64 / 1e-3).powf(k as f64 / 12.0);
        let mean: f64 = tasks
            .iter()
            .map(|(s, t)| sgd_rollout(alpha, s, t, steps))
            .sum::<f64>()
            / tasks.len() as f64;
        if mean < best.0 {
            best = (mean, alpha);
        }
    }
    best
}

/// Seeded random quadratic tasks `(start, target)`.
pub fn quadratic_tasks(seed: u64, sub: u64, count: usize) -> Vec<([f64; 2], [f64; 2])> {
    let mut rng = stream(seed, tags::LEARNER, 1000 + sub);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..count)
        .map(|_| {
            (
                [normal.sample(&mut rng), normal.sample(&mut rng)],
                [normal.sample(&mut rng), normal.sample(&mut rng)],
            )
        })
        .collect()
}

/// Trains the gate network on random quadratic tasks by block-coordinate
/// central finite differences with Adam. The rollouts are tiny, so exact
/// numeric meta-gradients are affordable at this scale.
pub fn fit_quadratic_learner(seed: u64, iterations: usize, steps: usize) -> CoordinateLearner {
    let CoordinateLearner::Lstm(mut tower) = CoordinateLearner::lstm(seed) else {
        unreachable!()
    };
    let tasks = quadratic_tasks(seed, 0, 16);
    let objective = |flat: &[f64], scratch: &mut LstmTower| {
        scratch.assign(flat);
        let learner = CoordinateLearner::Lstm(scratch.clone());
        tasks
            .iter()
            .map(|(s, t)| quadratic_rollout(&learner, s, t, steps))
            .sum::<f64>()
            / tasks.len() as f64
    };

    let dim = tower.param_count();
    let mut flat = tower.flatten();
    let mut scratch = tower.clone();
    let mut opt = AdamVec::new(dim, 0.05);
    let block = 64;
    let head_start = dim - (2 * CELL_WIDTH + 2);
    let h = 1e-4;
    for iter in 0..iterations {
        let mut grad = vec![0.0; dim];
        let probe = |idx: usize, flat: &mut Vec<f64>, scratch: &mut LstmTower| {
            let orig = flat[idx];
            flat[idx] = orig + h;
            let plus = objective(flat, scratch);
            flat[idx] = orig - h;
            let minus = objective(flat, scratch);
            flat[idx] = orig;
            (plus - minus) / (2.0 * h)
        };
        // one rotating block of body coordinates plus the whole head
        let start = (iter * block) % head_start.max(1);
        for off in 0..block.min(head_start) {
            let idx = (start + off) % head_start;
            grad[idx] = probe(idx, &mut flat, &mut scratch);
        }
        for idx in head_start..dim {
            grad[idx] = probe(idx, &mut flat, &mut scratch);
        }
        opt.step(&mut flat, &grad);
    }
    tower.assign(&flat);
    CoordinateLearner::Lstm(tower)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::{adapt, empty_block, QuadraticObjective, Schedule};
    use crate::model::{Model, ModelConfig};
    use crate::tensor::Tensor;
    use indexmap::IndexMap;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forced_unit_gates_reproduce_a_descent_step() {
        let learner = CoordinateLearner::forced(1.0, 0.1);
        let mut state = learner.fresh_state();
        let next = coordinate_update(&learner, 1.0, 0.0, 2.0, &mut state);
        assert!((next - 0.8).abs() < 1e-15);
    }

    #[test]
    fn forced_zero_gates_reset_the_coordinate() {
        let learner = CoordinateLearner::forced(0.0, 0.0);
        let mut state = learner.fresh_state();
        let next = coordinate_update(&learner, 5.0, 10.0, -3.0, &mut state);
        assert_eq!(next, 0.0);
    }

    #[test]
    fn lstm_adapt_with_forced_gates_matches_adapt_bitwise() {
        let cfg = ModelConfig {
            input_dim: 3,
            hidden: vec![4],
            n_classes: 3,
            context_frames: 0,
            silence_class: 0,
            epsilon: 1e-5,
            momentum: 0.01,
        };
        let model = Model::new(cfg.clone()).unwrap();
        let params = model.init_params(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f64> = (0..8 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let block = FrameBlock {
            x: Tensor::from_vec(vec![8, 3], data).unwrap(),
            y: (0..8).map(|_| rng.gen_range(1..3)).collect(),
        };
        let alpha = 0.07;
        let steps = 10;
        let sched = Schedule::uniform(&cfg, alpha, steps).unwrap();
        let run = adapt(&model, &params, &block, &sched, ParamSubset::All).unwrap();
        let learner = CoordinateLearner::forced(1.0, alpha);
        let coord =
            lstm_adapt(&model, &params, &block, &learner, steps, ParamSubset::All).unwrap();
        let gap = run.params.max_abs_diff(&coord);
        assert!(gap < 1e-12, "trajectories diverge by {gap}");
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let mut params = ParamStore::new();
        let id = ParamId::new(0, crate::params::ParamRole::Lhuc);
        params.insert(id, Tensor::filled(vec![3], 0.5));
        let mut targets = IndexMap::new();
        targets.insert(id, Tensor::zeros(vec![3]));
        let obj = QuadraticObjective { targets };
        let learner = CoordinateLearner::lstm(1);
        let out =
            lstm_adapt_inner(&obj, &params, &empty_block(), &learner, 0, ParamSubset::All).unwrap();
        assert_eq!(out.max_abs_diff(&params), 0.0);
    }

    #[test]
    fn coordinate_budget_is_enforced_with_the_limit_named() {
        let mut params = ParamStore::new();
        let id = ParamId::new(0, crate::params::ParamRole::Weight);
        params.insert(id, Tensor::zeros(vec![MAX_COORDINATES + 1]));
        let mut targets = IndexMap::new();
        targets.insert(id, Tensor::zeros(vec![MAX_COORDINATES + 1]));
        let obj = QuadraticObjective { targets };
        let learner = CoordinateLearner::forced(1.0, 0.1);
        let err = lstm_adapt_inner(&obj, &params, &empty_block(), &learner, 1, ParamSubset::All)
            .unwrap_err();
        assert_eq!(err.kind(), "capacity");
        assert!(err.to_string().contains(&MAX_COORDINATES.to_string()));
    }

    #[test]
    fn trained_learner_beats_grid_searched_descent_on_quadratics() {
        let steps = 5;
        let learner = fit_quadratic_learner(33, 120, steps);
        let eval = quadratic_tasks(34, 7, 20);
        let learner_mean: f64 = eval
            .iter()
            .map(|(s, t)| quadratic_rollout(&learner, s, t, steps))
            .sum::<f64>()
            / eval.len() as f64;
        let (grid_mean, grid_alpha) = grid_sgd_best(&eval, steps);
        assert!(
            learner_mean <= grid_mean,
            "learner {learner_mean} vs grid {grid_mean} (alpha {grid_alpha})"
        );
    }
}
