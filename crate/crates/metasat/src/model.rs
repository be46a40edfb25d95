//! The frame-classification acoustic model: a context-stacked feed-forward
//! network where every hidden layer runs dense -> ReLU -> renorm -> LHUC,
//! followed by a dense output layer.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::{
    batchnorm_core, lhuc_amplitude, renorm_backward_core, renorm_infer_core_traced,
    renorm_train_core, update_running_stats, RenormTrace, RunningStats,
};
use crate::ops::{argmax, dense_backward, dense_forward, relu, relu_backward};
use crate::params::{ParamId, ParamRole, ParamStore};
use crate::rng::{stream, tags};
use crate::tensor::Tensor;

/// Fixed description of the layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Per-frame feature dimension before context stacking.
    pub input_dim: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Total number of classes, silence included.
    pub n_classes: usize,
    /// Frames stacked on each side of the centre frame.
    pub context_frames: usize,
    /// Class index treated as silence.
    pub silence_class: usize,
    /// Normalisation epsilon.
    pub epsilon: f64,
    /// Running-statistics momentum per update.
    pub momentum: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "hidden widths must be non-empty and positive, got {:?}",
                self.hidden
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes (one being silence), got {}",
                self.n_classes
            )));
        }
        if self.silence_class >= self.n_classes {
            return Err(Error::Config(format!(
                "silence class {} outside {} classes",
                self.silence_class, self.n_classes
            )));
        }
        if !(0.0 < self.momentum && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "momentum must lie in (0, 1), got {}",
                self.momentum
            )));
        }
        if self.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Feature dimension after context stacking.
    pub fn stacked_dim(&self) -> usize {
        self.input_dim * (2 * self.context_frames + 1)
    }

    /// Index of the output dense layer.
    pub fn output_layer(&self) -> usize {
        self.hidden.len()
    }

    /// The ordered layer stack this model applies.
    pub fn layer_sequence(&self) -> Vec<LayerKind> {
        let mut seq = Vec::with_capacity(self.hidden.len() * 4 + 1);
        for i in 0..self.hidden.len() {
            seq.push(LayerKind::Dense(i));
            seq.push(LayerKind::Relu(i));
            seq.push(LayerKind::Renorm(i));
            seq.push(LayerKind::Lhuc(i));
        }
        seq.push(LayerKind::Dense(self.output_layer()));
        seq
    }

    /// All parameter ids of a model with this shape, in forward order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for i in 0..self.hidden.len() {
            ids.push(ParamId::new(i, ParamRole::Weight));
            ids.push(ParamId::new(i, ParamRole::Bias));
            ids.push(ParamId::new(i, ParamRole::Gamma));
            ids.push(ParamId::new(i, ParamRole::Beta));
            ids.push(ParamId::new(i, ParamRole::Lhuc));
        }
        ids.push(ParamId::new(self.output_layer(), ParamRole::Weight));
        ids.push(ParamId::new(self.output_layer(), ParamRole::Bias));
        ids
    }
}

/// One element of the layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense(usize),
    Relu(usize),
    Renorm(usize),
    Lhuc(usize),
}

/// Forward-pass intent; `Infer` and `Adapt` both take the frozen-statistics
/// path and produce identical activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
    Adapt,
}

/// Which statistics normalise activations during evaluation/adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatsMode {
    /// Accumulated running statistics (the renormalisation contract).
    Global,
    /// Statistics of the current batch only (per-utterance style).
    Batch,
}

impl StatsMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            StatsMode::Global => "global",
            StatsMode::Batch => "batch",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(StatsMode::Global),
            "batch" => Ok(StatsMode::Batch),
            other => Err(Error::Config(format!("unknown stats mode `{other}`"))),
        }
    }
}

/// Cached activations of one forward pass, one entry per stack element.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub mode: Mode,
    pub stats: StatsMode,
    pub layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone)]
pub enum LayerTrace {
    Dense { input: Tensor },
    Relu { pre: Tensor },
    Renorm(RenormTrace),
    Lhuc { input: Tensor },
}

/// The acoustic model: its configuration plus per-layer running statistics.
/// Weights live in a separate [`ParamStore`] so adaptation can swap them
/// while sharing the frozen statistics.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub stats: Vec<RunningStats>,
}

impl Model {
    /// Fresh model with unit statistics.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let stats = config.hidden.iter().map(|&w| RunningStats::unit(w)).collect();
        Ok(Self { config, stats })
    }

    /// Seeded weight initialisation: He-scaled normal hidden weights, a
    /// smaller-scale output layer, zero biases/offsets, unit gammas and
    /// identity LHUC.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = stream(seed, tags::INIT, 0);
        let mut fan_in = self.config.stacked_dim();
        for (i, &width) in self.config.hidden.iter().enumerate() {
            let scale = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, scale).expect("finite stddev");
            let data: Vec<f64> = (0..fan_in * width).map(|_| normal.sample(&mut rng)).collect();
            store.insert(
                ParamId::new(i, ParamRole::Weight),
                Tensor::from_vec(vec![fan_in, width], data).expect("init weights"),
            );
            store.insert(ParamId::new(i, ParamRole::Bias), Tensor::zeros(vec![width]));
            store.insert(
                ParamId::new(i, ParamRole::Gamma),
                Tensor::filled(vec![width], 1.0),
            );
            store.insert(ParamId::new(i, ParamRole::Beta), Tensor::zeros(vec![width]));
            store.insert(ParamId::new(i, ParamRole::Lhuc), Tensor::zeros(vec![width]));
            fan_in = width;
        }
        let out = self.config.output_layer();
        let scale = (1.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, scale).expect("finite stddev");
        let data: Vec<f64> = (0..fan_in * self.config.n_classes)
            .map(|_| normal.sample(&mut rng))
            .collect();
        store.insert(
            ParamId::new(out, ParamRole::Weight),
            Tensor::from_vec(vec![fan_in, self.config.n_classes], data).expect("init weights"),
        );
        store.insert(
            ParamId::new(out, ParamRole::Bias),
            Tensor::zeros(vec![self.config.n_classes]),
        );
        store
    }

    fn check_input(&self, params: &ParamStore, x: &Tensor) -> Result<()> {
        if !x.is_matrix() || x.cols() != self.config.stacked_dim() {
            return Err(Error::Dimension(format!(
                "model input must be [batch, {}], got {:?}",
                self.config.stacked_dim(),
                x.shape()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::Usage("model forward on an empty batch".into()));
        }
        for id in self.config.param_ids() {
            if !params.contains(id) {
                return Err(Error::Usage(format!("parameter store is missing `{id}`")));
            }
        }
        Ok(())
    }

    /// Pure forward pass. `Train` runs the renormalisation path on batch
    /// statistics without touching the stored running statistics; `Infer`
    /// and `Adapt` normalise with the frozen global statistics.
    pub fn forward(&self, params: &ParamStore, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardTrace)> {
        let stats = StatsMode::Global;
        self.forward_impl(params, x, mode, stats)
    }

    /// Forward pass for evaluation under an explicit statistics mode.
    /// `Global` equals `forward(.., Mode::Adapt)`; `Batch` normalises every
    /// layer with the statistics of the current batch alone.
    pub fn forward_eval(
        &self,
        params: &ParamStore,
        x: &Tensor,
        stats: StatsMode,
    ) -> Result<(Tensor, ForwardTrace)> {
        self.forward_impl(params, x, Mode::Adapt, stats)
    }

    /// Training forward pass; folds the observed batch statistics into the
    /// running statistics of every renorm layer.
    pub fn forward_train(&mut self, params: &ParamStore, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        let (logits, trace) = self.forward_impl(params, x, Mode::Train, StatsMode::Global)?;
        let momentum = self.config.momentum;
        let mut renorm_idx = 0;
        for layer in &trace.layers {
            if let LayerTrace::Renorm(rt) = layer {
                let (mu_b, var_b) = rt
                    .batch_stats
                    .as_ref()
                    .expect("train path records batch stats");
                update_running_stats(&mut self.stats[renorm_idx], mu_b, var_b, momentum)?;
                renorm_idx += 1;
            }
        }
        Ok((logits, trace))
    }

    fn forward_impl(
        &self,
        params: &ParamStore,
        x: &Tensor,
        mode: Mode,
        stats: StatsMode,
    ) -> Result<(Tensor, ForwardTrace)> {
        self.check_input(params, x)?;
        let mut layers = Vec::with_capacity(self.config.hidden.len() * 4 + 1);
        let mut h = x.clone();
        for i in 0..self.config.hidden.len() {
            let w = params.get(ParamId::new(i, ParamRole::Weight))?;
            let b = params.get(ParamId::new(i, ParamRole::Bias))?;
            layers.push(LayerTrace::Dense { input: h.clone() });
            let pre = dense_forward(&h, w, b)?;
            layers.push(LayerTrace::Relu { pre: pre.clone() });
            let post = relu(&pre);

            let gamma = params.get(ParamId::new(i, ParamRole::Gamma))?;
            let beta = params.get(ParamId::new(i, ParamRole::Beta))?;
            let (normed, rtrace) = match (mode, stats) {
                (Mode::Train, _) => {
                    renorm_train_core(&post, gamma, beta, &self.stats[i], self.config.epsilon)?
                }
                (_, StatsMode::Batch) => batchnorm_core(&post, gamma, beta, self.config.epsilon)?,
                (_, StatsMode::Global) => {
                    renorm_infer_core_traced(&post, gamma, beta, &self.stats[i], self.config.epsilon)?
                }
            };
            layers.push(LayerTrace::Renorm(rtrace));

            let r = params.get(ParamId::new(i, ParamRole::Lhuc))?;
            layers.push(LayerTrace::Lhuc { input: normed.clone() });
            let amp = lhuc_amplitude(r);
            let mut scaled = normed;
            for row in 0..scaled.rows() {
                for (v, a) in scaled.row_mut(row).iter_mut().zip(amp.iter()) {
                    *v *= a;
                }
            }
            h = scaled;
        }
        let out = self.config.output_layer();
        let w = params.get(ParamId::new(out, ParamRole::Weight))?;
        let b = params.get(ParamId::new(out, ParamRole::Bias))?;
        layers.push(LayerTrace::Dense { input: h.clone() });
        let logits = dense_forward(&h, w, b)?;
        logits.validate_finite("model logits")?;
        Ok((logits, ForwardTrace { mode, stats, layers }))
    }

    /// Exact reverse-mode gradients for every parameter; accumulates into
    /// the store's gradient buffers. Returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        params: &mut ParamStore,
        trace: &ForwardTrace,
        grad_logits: &Tensor,
    ) -> Result<Tensor> {
        let expect_layers = self.config.hidden.len() * 4 + 1;
        if trace.layers.len() != expect_layers {
            return Err(Error::Usage(format!(
                "trace holds {} layers but the config needs {expect_layers}",
                trace.layers.len()
            )));
        }
        let mut grad = grad_logits.clone();
        let mut iter = trace.layers.iter().rev();

        // Output dense layer.
        let out = self.config.output_layer();
        let Some(LayerTrace::Dense { input }) = iter.next() else {
            return Err(Error::Usage("trace does not end with a dense layer".into()));
        };
        {
            let w = params.get(ParamId::new(out, ParamRole::Weight))?.clone();
            let (gx, gw, gb) = dense_backward(input, &w, &grad)?;
            params.grad_mut(ParamId::new(out, ParamRole::Weight))?.axpy(1.0, &gw)?;
            params.grad_mut(ParamId::new(out, ParamRole::Bias))?.axpy(1.0, &gb)?;
            grad = gx;
        }

        for i in (0..self.config.hidden.len()).rev() {
            // LHUC
            let Some(LayerTrace::Lhuc { input }) = iter.next() else {
                return Err(Error::Usage(format!("layer {i}: expected an LHUC trace entry")));
            };
            {
                let r = params.get(ParamId::new(i, ParamRole::Lhuc))?.clone();
                let (gh, gr) = crate::layers::lhuc_backward(input, &r, &grad)?;
                params.grad_mut(ParamId::new(i, ParamRole::Lhuc))?.axpy(1.0, &gr)?;
                grad = gh;
            }
            // Renorm
            let Some(LayerTrace::Renorm(rtrace)) = iter.next() else {
                return Err(Error::Usage(format!("layer {i}: expected a renorm trace entry")));
            };
            {
                let gamma = params.get(ParamId::new(i, ParamRole::Gamma))?.clone();
                let (gh, gg, gb) = renorm_backward_core(rtrace, &gamma, &grad)?;
                params.grad_mut(ParamId::new(i, ParamRole::Gamma))?.axpy(1.0, &gg)?;
                params.grad_mut(ParamId::new(i, ParamRole::Beta))?.axpy(1.0, &gb)?;
                grad = gh;
            }
            // ReLU
            let Some(LayerTrace::Relu { pre }) = iter.next() else {
                return Err(Error::Usage(format!("layer {i}: expected a relu trace entry")));
            };
            grad = relu_backward(pre, &grad)?;
            // Dense
            let Some(LayerTrace::Dense { input }) = iter.next() else {
                return Err(Error::Usage(format!("layer {i}: expected a dense trace entry")));
            };
            {
                let w = params.get(ParamId::new(i, ParamRole::Weight))?.clone();
                let (gx, gw, gb) = dense_backward(input, &w, &grad)?;
                params.grad_mut(ParamId::new(i, ParamRole::Weight))?.axpy(1.0, &gw)?;
                params.grad_mut(ParamId::new(i, ParamRole::Bias))?.axpy(1.0, &gb)?;
                grad = gx;
            }
        }
        Ok(grad)
    }

    /// Per-frame argmax labels from the frozen-statistics path. Serves as
    /// the first-pass labeller for unsupervised adaptation; ties break
    /// toward the lowest class index.
    pub fn pseudo_label(&self, params: &ParamStore, x: &Tensor) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(params, x, Mode::Infer)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err};
    use crate::ops::softmax_xent;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_dim: 3,
            hidden: vec![4, 5],
            n_classes: 3,
            context_frames: 0,
            silence_class: 0,
            epsilon: 1e-5,
            momentum: 0.01,
        }
    }

    fn rand_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn layer_sequence_has_the_expected_shape() {
        let cfg = tiny_config();
        let seq = cfg.layer_sequence();
        assert_eq!(seq.len(), 9);
        assert_eq!(seq[0], LayerKind::Dense(0));
        assert_eq!(seq[1], LayerKind::Relu(0));
        assert_eq!(seq[2], LayerKind::Renorm(0));
        assert_eq!(seq[3], LayerKind::Lhuc(0));
        assert_eq!(seq[8], LayerKind::Dense(2));
    }

    #[test]
    fn identity_stack_projects_the_input() {
        // One hidden layer with identity weights everywhere and eps = 0;
        // positive input passes through ReLU, unit stats make renorm a
        // no-op, LHUC sits at identity, output weights are identity.
        let cfg = ModelConfig {
            input_dim: 3,
            hidden: vec![3],
            n_classes: 3,
            context_frames: 0,
            silence_class: 0,
            epsilon: 0.0,
            momentum: 0.5,
        };
        let model = Model::new(cfg).unwrap();
        let mut params = model.init_params(0);
        for i in 0..2 {
            let w = params.get_mut(ParamId::new(i, ParamRole::Weight)).unwrap();
            w.fill(0.0);
            for j in 0..3 {
                w.set(j, j, 1.0);
            }
        }
        let x = Tensor::from_vec(vec![2, 3], vec![0.5, 1.0, 0.25, 2.0, 0.125, 1.5]).unwrap();
        let (logits, _) = model.forward(&params, &x, Mode::Infer).unwrap();
        for (a, b) in logits.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn infer_and_adapt_modes_agree_bitwise() {
        let model = Model::new(tiny_config()).unwrap();
        let params = model.init_params(3);
        let x = rand_input(&mut ChaCha8Rng::seed_from_u64(4), 6, 3);
        let (a, _) = model.forward(&params, &x, Mode::Infer).unwrap();
        let (b, _) = model.forward(&params, &x, Mode::Adapt).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn forward_is_deterministic() {
        let model = Model::new(tiny_config()).unwrap();
        let params = model.init_params(5);
        let x = rand_input(&mut ChaCha8Rng::seed_from_u64(6), 4, 3);
        let (a, _) = model.forward(&params, &x, Mode::Train).unwrap();
        let (b, _) = model.forward(&params, &x, Mode::Train).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn input_dimension_is_validated() {
        let model = Model::new(tiny_config()).unwrap();
        let params = model.init_params(0);
        let x = Tensor::zeros(vec![2, 5]);
        assert_eq!(
            model.forward(&params, &x, Mode::Infer).unwrap_err().kind(),
            "dimension"
        );
    }

    #[test]
    fn zero_grad_logits_give_zero_grads() {
        let model = Model::new(tiny_config()).unwrap();
        let mut params = model.init_params(1);
        let x = rand_input(&mut ChaCha8Rng::seed_from_u64(2), 4, 3);
        let (logits, trace) = model.forward(&params, &x, Mode::Adapt).unwrap();
        params.zero_grads();
        model
            .backward(&mut params, &trace, &Tensor::zeros_like(&logits))
            .unwrap();
        for id in params.ids().collect::<Vec<_>>() {
            assert!(params.grad(id).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    /// Full-model analytic gradients against central finite differences on
    /// random small models, through the frozen-statistics path.
    #[test]
    fn model_gradients_match_finite_differences() {
        let mut seed_rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..5 {
            let hidden: Vec<usize> = match trial % 3 {
                0 => vec![4],
                1 => vec![5, 3],
                _ => vec![8, 8],
            };
            let cfg = ModelConfig {
                input_dim: seed_rng.gen_range(2..5),
                hidden,
                n_classes: seed_rng.gen_range(2..5),
                context_frames: 0,
                silence_class: 0,
                epsilon: 1e-5,
                momentum: 0.01,
            };
            let mut model = Model::new(cfg.clone()).unwrap();
            // randomise running stats so the frozen path is non-trivial
            for st in &mut model.stats {
                for v in st.mean.data_mut() {
                    *v = seed_rng.gen_range(-0.5..0.5);
                }
                for v in st.var.data_mut() {
                    *v = seed_rng.gen_range(0.5..2.0);
                }
            }
            let mut params = model.init_params(trial as u64);
            // move LHUC and beta off their init so their grads are generic
            for i in 0..cfg.hidden.len() {
                for v in params
                    .get_mut(ParamId::new(i, ParamRole::Lhuc))
                    .unwrap()
                    .data_mut()
                {
                    *v = seed_rng.gen_range(-0.5..0.5);
                }
                for v in params
                    .get_mut(ParamId::new(i, ParamRole::Beta))
                    .unwrap()
                    .data_mut()
                {
                    *v = seed_rng.gen_range(-0.3..0.3);
                }
            }
            let batch = seed_rng.gen_range(2..9);
            let x = rand_input(&mut seed_rng, batch, cfg.input_dim);
            let labels: Vec<usize> = (0..batch)
                .map(|_| seed_rng.gen_range(0..cfg.n_classes))
                .collect();

            let (logits, trace) = model.forward(&params, &x, Mode::Adapt).unwrap();
            let (_, grad_logits) = softmax_xent(&logits, &labels).unwrap();
            params.zero_grads();
            model.backward(&mut params, &trace, &grad_logits).unwrap();

            for id in params.ids().collect::<Vec<_>>() {
                let analytic = params.grad(id).unwrap().data().to_vec();
                let orig = params.get(id).unwrap().clone();
                let fd = central_diff(orig.data(), 1e-5, |vals| {
                    let mut p2 = params.clone();
                    p2.get_mut(id).unwrap().data_mut().copy_from_slice(vals);
                    let (lg, _) = model.forward(&p2, &x, Mode::Adapt).unwrap();
                    softmax_xent(&lg, &labels).unwrap().0
                });
                let err = max_rel_err(&analytic, &fd);
                assert!(err < 1e-4, "param {id}: max rel err {err}");
            }
        }
    }

    #[test]
    fn pseudo_labels_are_argmax_with_low_tie() {
        let cfg = tiny_config();
        let model = Model::new(cfg).unwrap();
        let params = model.init_params(9);
        let x = rand_input(&mut ChaCha8Rng::seed_from_u64(10), 5, 3);
        let labels = model.pseudo_label(&params, &x).unwrap();
        let (logits, _) = model.forward(&params, &x, Mode::Infer).unwrap();
        for (r, &l) in labels.iter().enumerate() {
            assert_eq!(l, argmax(logits.row(r)));
        }
    }

    #[test]
    fn forward_train_updates_running_stats() {
        let mut model = Model::new(tiny_config()).unwrap();
        let params = model.init_params(11);
        let before = model.stats[0].clone();
        let x = rand_input(&mut ChaCha8Rng::seed_from_u64(12), 8, 3);
        model.forward_train(&params, &x).unwrap();
        assert_ne!(model.stats[0], before);
    }
}
