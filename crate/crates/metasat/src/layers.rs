//! Speaker-adaptation layers: LHUC amplitudes and batch renormalisation.
//!
//! The renormalisation layer normalises with batch statistics corrected by
//! per-unit constants `r` and `d` so that, in exact arithmetic, the training
//! output equals normalisation with the accumulated global statistics. Both
//! `r`/`d` and the statistics themselves are held constant in the backward
//! pass, which makes the gradient with respect to an activation a per-unit
//! scale of the upstream gradient.

use crate::error::{Error, Result};
use crate::ops::sigmoid;
use crate::tensor::Tensor;

/// Per-unit LHUC parameters; the effective amplitude is `2 * sigmoid(r)`,
/// so `r = 0` is exactly the identity and amplitudes stay in `(0, 2)`.
#[derive(Debug, Clone)]
pub struct LhucParams {
    pub r: Tensor,
}

impl LhucParams {
    /// Identity initialisation (`r = 0`, amplitude 1).
    pub fn identity(width: usize) -> Self {
        Self {
            r: Tensor::zeros(vec![width]),
        }
    }

    pub fn width(&self) -> usize {
        self.r.len()
    }
}

/// Amplitude vector `2 * sigmoid(r)`.
pub fn lhuc_amplitude(r: &Tensor) -> Vec<f64> {
    r.data().iter().map(|&v| 2.0 * sigmoid(v)).collect()
}

/// Scales each unit of `h: [batch, width]` by its LHUC amplitude.
pub fn lhuc_forward(h: &Tensor, r: &Tensor) -> Result<Tensor> {
    if h.cols() != r.len() {
        return Err(Error::Dimension(format!(
            "lhuc width mismatch: h {:?} vs r {:?}",
            h.shape(),
            r.shape()
        )));
    }
    let amp = lhuc_amplitude(r);
    let mut out = h.clone();
    for row in 0..out.rows() {
        for (v, a) in out.row_mut(row).iter_mut().zip(amp.iter()) {
            *v *= a;
        }
    }
    Ok(out)
}

/// Gradients of the LHUC scaling for both the activations and `r`.
///
/// `grad_h = grad_out ⊙ a`, `grad_r = Σ_batch grad_out ⊙ h ⊙ a'` with
/// `a' = a (1 - a/2)`.
pub fn lhuc_backward(h: &Tensor, r: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    if h.shape() != grad_out.shape() || h.cols() != r.len() {
        return Err(Error::Dimension(format!(
            "lhuc backward shapes: h {:?}, r {:?}, grad_out {:?}",
            h.shape(),
            r.shape(),
            grad_out.shape()
        )));
    }
    let amp = lhuc_amplitude(r);
    let mut grad_h = grad_out.clone();
    let mut grad_r = Tensor::zeros(vec![r.len()]);
    for row in 0..h.rows() {
        let hv = h.row(row);
        let go = grad_out.row(row);
        let gh = grad_h.row_mut(row);
        for j in 0..amp.len() {
            gh[j] = go[j] * amp[j];
            let da = amp[j] * (1.0 - amp[j] / 2.0);
            grad_r.data_mut()[j] += go[j] * hv[j] * da;
        }
    }
    Ok((grad_h, grad_r))
}

/// Accumulated global normalisation statistics of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    /// Fresh statistics: zero mean, unit variance.
    pub fn unit(width: usize) -> Self {
        Self {
            mean: Tensor::zeros(vec![width]),
            var: Tensor::filled(vec![width], 1.0),
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }
}

/// Full renormalisation layer state: learned scale/offset, global
/// statistics, and the update hyperparameters.
#[derive(Debug, Clone)]
pub struct RenormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: RunningStats,
    pub momentum: f64,
    pub epsilon: f64,
}

impl RenormState {
    pub fn new(width: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(0.0 < momentum && momentum < 1.0) {
            return Err(Error::Config(format!(
                "renorm momentum must lie in (0, 1), got {momentum}"
            )));
        }
        if epsilon < 0.0 {
            return Err(Error::Config(format!(
                "renorm epsilon must be non-negative, got {epsilon}"
            )));
        }
        Ok(Self {
            gamma: Tensor::filled(vec![width], 1.0),
            beta: Tensor::zeros(vec![width]),
            running: RunningStats::unit(width),
            momentum,
            epsilon,
        })
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Training-path forward; updates the running statistics in place.
    pub fn forward_train(&mut self, h: &Tensor) -> Result<(Tensor, RenormTrace)> {
        let (out, trace) = renorm_train_core(
            h,
            &self.gamma,
            &self.beta,
            &self.running,
            self.epsilon,
        )?;
        let (mu_b, var_b) = trace
            .batch_stats
            .as_ref()
            .expect("train path always records batch stats");
        update_running_stats(&mut self.running, mu_b, var_b, self.momentum)?;
        Ok((out, trace))
    }

    /// Inference-path forward with frozen global statistics.
    pub fn forward_infer(&self, h: &Tensor) -> Result<Tensor> {
        renorm_infer_core(h, &self.gamma, &self.beta, &self.running, self.epsilon)
    }

    /// Backward pass with the normalisation constants frozen.
    pub fn backward(&self, trace: &RenormTrace, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        renorm_backward_core(trace, &self.gamma, grad_out)
    }
}

/// Cached values from a renormalisation forward pass.
#[derive(Debug, Clone)]
pub struct RenormTrace {
    /// Normalised activations before scale/offset — the multiplier of gamma.
    pub x_hat: Tensor,
    /// Per-unit `1 / sqrt(var + eps)` of the statistics that govern the
    /// backward pass (global stats on the renorm path, batch stats on the
    /// plain batch path).
    pub grad_inv_denom: Vec<f64>,
    /// Batch statistics, present when the forward pass computed them.
    pub batch_stats: Option<(Tensor, Tensor)>,
}

/// Per-unit mean and biased (1/N) variance over the batch dimension.
pub fn batch_stats(h: &Tensor) -> Result<(Tensor, Tensor)> {
    let batch = h.rows();
    if batch < 2 {
        return Err(Error::Usage(format!(
            "batch statistics need at least 2 frames, got {batch}"
        )));
    }
    let width = h.cols();
    let mut mean = Tensor::zeros(vec![width]);
    for r in 0..batch {
        for (m, &v) in mean.data_mut().iter_mut().zip(h.row(r)) {
            *m += v;
        }
    }
    for m in mean.data_mut() {
        *m /= batch as f64;
    }
    let mut var = Tensor::zeros(vec![width]);
    for r in 0..batch {
        let row = h.row(r);
        for j in 0..width {
            let d = row[j] - mean.data()[j];
            var.data_mut()[j] += d * d;
        }
    }
    for v in var.data_mut() {
        *v /= batch as f64;
    }
    Ok((mean, var))
}

/// Renormalisation training path.
///
/// Computes `mu_B`, `var_B` on the batch, the correction constants
/// `r = sqrt(var_B + eps) / sqrt(var_G + eps)` and
/// `d = (mu_B - mu_G) / sqrt(var_G + eps)`, then
/// `h' = gamma (r * (h - mu_B) / sqrt(var_B + eps) + d) + beta`.
/// Does not touch `running`; callers decide when to fold the batch
/// statistics in.
pub fn renorm_train_core(
    h: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    epsilon: f64,
) -> Result<(Tensor, RenormTrace)> {
    check_widths(h, gamma, beta, running)?;
    let (mu_b, var_b) = batch_stats(h)?;
    let width = h.cols();
    let mut corr_r = vec![0.0; width];
    let mut corr_d = vec![0.0; width];
    let mut inv_b = vec![0.0; width];
    let mut inv_g = vec![0.0; width];
    for j in 0..width {
        let denom_b = (var_b.data()[j] + epsilon).sqrt();
        let denom_g = (running.var.data()[j] + epsilon).sqrt();
        inv_b[j] = 1.0 / denom_b;
        inv_g[j] = 1.0 / denom_g;
        corr_r[j] = denom_b / denom_g;
        corr_d[j] = (mu_b.data()[j] - running.mean.data()[j]) / denom_g;
    }
    let mut x_hat = Tensor::zeros(vec![h.rows(), width]);
    let mut out = Tensor::zeros(vec![h.rows(), width]);
    for r in 0..h.rows() {
        let row = h.row(r);
        for j in 0..width {
            let xh = corr_r[j] * (row[j] - mu_b.data()[j]) * inv_b[j] + corr_d[j];
            x_hat.set(r, j, xh);
            out.set(r, j, gamma.data()[j] * xh + beta.data()[j]);
        }
    }
    Ok((
        out,
        RenormTrace {
            x_hat,
            grad_inv_denom: inv_g,
            batch_stats: Some((mu_b, var_b)),
        },
    ))
}

/// Frozen-statistics path: `h' = gamma (h - mu_G) / sqrt(var_G + eps) + beta`.
pub fn renorm_infer_core(
    h: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    epsilon: f64,
) -> Result<Tensor> {
    let (out, _) = renorm_infer_core_traced(h, gamma, beta, running, epsilon)?;
    Ok(out)
}

/// Frozen-statistics path that also returns the backward trace.
pub fn renorm_infer_core_traced(
    h: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    epsilon: f64,
) -> Result<(Tensor, RenormTrace)> {
    check_widths(h, gamma, beta, running)?;
    let width = h.cols();
    let mut inv_g = vec![0.0; width];
    for j in 0..width {
        inv_g[j] = 1.0 / (running.var.data()[j] + epsilon).sqrt();
    }
    let mut x_hat = Tensor::zeros(vec![h.rows(), width]);
    let mut out = Tensor::zeros(vec![h.rows(), width]);
    for r in 0..h.rows() {
        let row = h.row(r);
        for j in 0..width {
            let xh = (row[j] - running.mean.data()[j]) * inv_g[j];
            x_hat.set(r, j, xh);
            out.set(r, j, gamma.data()[j] * xh + beta.data()[j]);
        }
    }
    Ok((
        out,
        RenormTrace {
            x_hat,
            grad_inv_denom: inv_g,
            batch_stats: None,
        },
    ))
}

/// Plain batch normalisation (current-batch statistics, no correction).
/// This is the per-utterance style evaluation path; the backward pass
/// freezes the batch statistics of this forward call.
pub fn batchnorm_core(
    h: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    epsilon: f64,
) -> Result<(Tensor, RenormTrace)> {
    if h.cols() != gamma.len() || h.cols() != beta.len() {
        return Err(Error::Dimension(format!(
            "batchnorm width mismatch: h {:?}, gamma {:?}",
            h.shape(),
            gamma.shape()
        )));
    }
    let (mu_b, var_b) = batch_stats(h)?;
    let width = h.cols();
    let mut inv_b = vec![0.0; width];
    for j in 0..width {
        inv_b[j] = 1.0 / (var_b.data()[j] + epsilon).sqrt();
    }
    let mut x_hat = Tensor::zeros(vec![h.rows(), width]);
    let mut out = Tensor::zeros(vec![h.rows(), width]);
    for r in 0..h.rows() {
        let row = h.row(r);
        for j in 0..width {
            let xh = (row[j] - mu_b.data()[j]) * inv_b[j];
            x_hat.set(r, j, xh);
            out.set(r, j, gamma.data()[j] * xh + beta.data()[j]);
        }
    }
    Ok((
        out,
        RenormTrace {
            x_hat,
            grad_inv_denom: inv_b,
            batch_stats: Some((mu_b, var_b)),
        },
    ))
}

/// Backward pass with all normalisation statistics held constant:
/// `grad_h = grad_out ⊙ gamma / sqrt(var + eps)`,
/// `grad_gamma = Σ_batch grad_out ⊙ x_hat`, `grad_beta = Σ_batch grad_out`.
pub fn renorm_backward_core(
    trace: &RenormTrace,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if grad_out.shape() != trace.x_hat.shape() {
        return Err(Error::Usage(format!(
            "renorm backward trace mismatch: grad_out {:?} vs trace {:?}",
            grad_out.shape(),
            trace.x_hat.shape()
        )));
    }
    let width = gamma.len();
    let mut grad_h = Tensor::zeros_like(grad_out);
    let mut grad_gamma = Tensor::zeros(vec![width]);
    let mut grad_beta = Tensor::zeros(vec![width]);
    for r in 0..grad_out.rows() {
        let go = grad_out.row(r);
        let xh = trace.x_hat.row(r);
        let gh = grad_h.row_mut(r);
        for j in 0..width {
            gh[j] = go[j] * (gamma.data()[j] * trace.grad_inv_denom[j]);
            grad_gamma.data_mut()[j] += go[j] * xh[j];
            grad_beta.data_mut()[j] += go[j];
        }
    }
    Ok((grad_h, grad_gamma, grad_beta))
}

/// Exponential moving average update of the global statistics:
/// `mu_G <- (1 - m) mu_G + m mu_B`, same for the variance.
pub fn update_running_stats(
    running: &mut RunningStats,
    mu_b: &Tensor,
    var_b: &Tensor,
    momentum: f64,
) -> Result<()> {
    if !(0.0 < momentum && momentum <= 1.0) {
        return Err(Error::Config(format!(
            "running-stat momentum must lie in (0, 1], got {momentum}"
        )));
    }
    if mu_b.len() != running.width() || var_b.len() != running.width() {
        return Err(Error::Dimension(format!(
            "running-stat width mismatch: state {}, batch {}",
            running.width(),
            mu_b.len()
        )));
    }
    for (g, &b) in running.mean.data_mut().iter_mut().zip(mu_b.data()) {
        *g = (1.0 - momentum) * *g + momentum * b;
    }
    for (g, &b) in running.var.data_mut().iter_mut().zip(var_b.data()) {
        *g = (1.0 - momentum) * *g + momentum * b;
        debug_assert!(*g >= 0.0);
    }
    Ok(())
}

fn check_widths(h: &Tensor, gamma: &Tensor, beta: &Tensor, running: &RunningStats) -> Result<()> {
    if !h.is_matrix() {
        return Err(Error::Dimension(format!(
            "renorm input must be [batch, width], got {:?}",
            h.shape()
        )));
    }
    let w = h.cols();
    if gamma.len() != w || beta.len() != w || running.width() != w {
        return Err(Error::Dimension(format!(
            "renorm width mismatch: h {:?}, gamma {}, beta {}, stats {}",
            h.shape(),
            gamma.len(),
            beta.len(),
            running.width()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, max_rel_err};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::from_vec(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn lhuc_zero_r_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = rand_matrix(&mut rng, 4, 6, -2.0, 2.0);
        let r = Tensor::zeros(vec![6]);
        let out = lhuc_forward(&h, &r).unwrap();
        for (a, b) in out.data().iter().zip(h.data()) {
            let denom = b.abs().max(1e-300);
            assert!((a - b).abs() / denom < 1e-15);
        }
    }

    #[test]
    fn lhuc_saturates_at_twice_the_activation() {
        let h = Tensor::from_vec(vec![1, 2], vec![1.5, -0.5]).unwrap();
        let r = Tensor::from_vec(vec![2], vec![60.0, 60.0]).unwrap();
        let out = lhuc_forward(&h, &r).unwrap();
        assert!((out.data()[0] - 3.0).abs() < 1e-12);
        assert!((out.data()[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn lhuc_ln3_gives_amplitude_three_halves() {
        // 2 * sigmoid(ln 3) = 2 * (3/4) = 1.5
        let h = Tensor::from_vec(vec![1, 1], vec![2.0]).unwrap();
        let r = Tensor::from_vec(vec![1], vec![3.0_f64.ln()]).unwrap();
        let out = lhuc_forward(&h, &r).unwrap();
        assert!((out.data()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lhuc_width_mismatch_is_a_dimension_error() {
        let h = Tensor::zeros(vec![2, 3]);
        let r = Tensor::zeros(vec![4]);
        assert_eq!(lhuc_forward(&h, &r).unwrap_err().kind(), "dimension");
    }

    #[test]
    fn lhuc_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h0 = rand_matrix(&mut rng, 3, 5, -1.0, 1.0);
        let r0 = rand_matrix(&mut rng, 1, 5, -1.5, 1.5);
        let r0 = Tensor::from_vec(vec![5], r0.data().to_vec()).unwrap();
        // objective: sum of outputs
        let (gh, gr) = lhuc_backward(&h0, &r0, &Tensor::filled(vec![3, 5], 1.0)).unwrap();
        let fd_h = central_diff(h0.data(), 1e-6, |d| {
            let h = Tensor::from_vec(vec![3, 5], d.to_vec()).unwrap();
            lhuc_forward(&h, &r0).unwrap().data().iter().sum()
        });
        let fd_r = central_diff(r0.data(), 1e-6, |d| {
            let r = Tensor::from_vec(vec![5], d.to_vec()).unwrap();
            lhuc_forward(&h0, &r).unwrap().data().iter().sum()
        });
        assert!(max_rel_err(gh.data(), &fd_h) < 1e-6);
        assert!(max_rel_err(gr.data(), &fd_r) < 1e-6);
    }

    fn state_with(
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        epsilon: f64,
    ) -> RenormState {
        let w = gamma.len();
        RenormState {
            gamma: Tensor::from_vec(vec![w], gamma).unwrap(),
            beta: Tensor::from_vec(vec![w], beta).unwrap(),
            running: RunningStats {
                mean: Tensor::from_vec(vec![w], mean).unwrap(),
                var: Tensor::from_vec(vec![w], var).unwrap(),
            },
            momentum: 0.01,
            epsilon,
        }
    }

    #[test]
    fn matched_statistics_reduce_to_plain_batchnorm() {
        // Batch with mean 0, var 1 per unit; state has the same stats.
        let h = Tensor::from_vec(vec![2, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let state = state_with(vec![1.5, 0.5], vec![0.1, -0.2], vec![0.0, 0.0], vec![1.0, 1.0], 0.0);
        let (renorm_out, trace) =
            renorm_train_core(&h, &state.gamma, &state.beta, &state.running, 0.0).unwrap();
        let (bn_out, _) = batchnorm_core(&h, &state.gamma, &state.beta, 0.0).unwrap();
        for (a, b) in renorm_out.data().iter().zip(bn_out.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // r = 1, d = 0 in this case
        let (mu_b, var_b) = trace.batch_stats.unwrap();
        assert_eq!(mu_b.data(), &[0.0, 0.0]);
        assert_eq!(var_b.data(), &[1.0, 1.0]);
    }

    #[test]
    fn correction_constants_match_hand_evaluation() {
        // Batch values 2 ± sqrt(3): mu_B = 2, var_B = 3 (biased).
        // With mu_G = 0, var_G = 1, eps = 0: r = sqrt(3), d = 2.
        let s3 = 3.0_f64.sqrt();
        let h = Tensor::from_vec(vec![2, 1], vec![2.0 - s3, 2.0 + s3]).unwrap();
        let state = state_with(vec![1.0], vec![0.0], vec![0.0], vec![1.0], 0.0);
        let (out, trace) =
            renorm_train_core(&h, &state.gamma, &state.beta, &state.running, 0.0).unwrap();
        let (mu_b, var_b) = trace.batch_stats.as_ref().unwrap();
        assert!((mu_b.data()[0] - 2.0).abs() < 1e-12);
        assert!((var_b.data()[0] - 3.0).abs() < 1e-12);
        // output = r * (h - mu_B)/sqrt(var_B) + d = (h - 0)/1 = h
        for (a, b) in out.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn train_path_equals_infer_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let rows = rng.gen_range(2..12);
            let cols = rng.gen_range(1..6);
            let h = rand_matrix(&mut rng, rows, cols, -4.0, 4.0);
            let state = state_with(
                (0..cols).map(|_| rng.gen_range(0.2..2.0)).collect(),
                (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..cols).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                (0..cols).map(|_| rng.gen_range(0.05..5.0)).collect(),
                1e-5,
            );
            let (train_out, _) =
                renorm_train_core(&h, &state.gamma, &state.beta, &state.running, state.epsilon)
                    .unwrap();
            let infer_out = state.forward_infer(&h).unwrap();
            let worst = train_out
                .data()
                .iter()
                .zip(infer_out.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-9, "substitution gap {worst}");
        }
    }

    #[test]
    fn infer_at_global_mean_returns_beta() {
        let state = state_with(vec![2.0, 3.0], vec![0.7, -0.4], vec![1.0, -2.0], vec![4.0, 9.0], 0.0);
        let h = Tensor::from_vec(vec![1, 2], vec![1.0, -2.0]).unwrap();
        let out = state.forward_infer(&h).unwrap();
        assert_eq!(out.data(), state.beta.data());
    }

    #[test]
    fn infer_identity_normalisation() {
        let state = state_with(vec![1.0], vec![0.0], vec![0.0], vec![1.0], 0.0);
        let h = Tensor::from_vec(vec![2, 1], vec![0.3, -1.7]).unwrap();
        let out = state.forward_infer(&h).unwrap();
        assert_eq!(out.data(), h.data());
    }

    #[test]
    fn infer_hand_example() {
        // gamma=2, beta=1, mu=1, var=4, eps=0, h=5 -> 2*(4/2)+1 = 5
        let state = state_with(vec![2.0], vec![1.0], vec![1.0], vec![4.0], 0.0);
        let h = Tensor::from_vec(vec![1, 1], vec![5.0]).unwrap();
        let out = state.forward_infer(&h).unwrap();
        assert!((out.data()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn backward_is_identity_for_unit_state() {
        let state = state_with(vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], 0.0);
        let h = Tensor::from_vec(vec![2, 2], vec![0.5, 1.0, -0.5, 2.0]).unwrap();
        let (_, trace) = renorm_infer_core_traced(&h, &state.gamma, &state.beta, &state.running, 0.0).unwrap();
        let g = Tensor::from_vec(vec![2, 2], vec![1.0, -2.0, 0.25, 4.0]).unwrap();
        let (gh, _, _) = state.backward(&trace, &g).unwrap();
        assert_eq!(gh.data(), g.data());
    }

    #[test]
    fn backward_zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = rand_matrix(&mut rng, 3, 2, -1.0, 1.0);
        let state = state_with(vec![1.2, 0.8], vec![0.1, 0.2], vec![0.0, 0.1], vec![1.0, 2.0], 1e-5);
        let (_, trace) = renorm_train_core(&h, &state.gamma, &state.beta, &state.running, 1e-5).unwrap();
        let (gh, gg, gb) = state.backward(&trace, &Tensor::zeros(vec![3, 2])).unwrap();
        assert!(gh.data().iter().all(|&v| v == 0.0));
        assert!(gg.data().iter().all(|&v| v == 0.0));
        assert!(gb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences_of_frozen_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h0 = rand_matrix(&mut rng, 4, 3, -2.0, 2.0);
        let state = state_with(
            vec![1.3, 0.6, 2.2],
            vec![0.2, -0.4, 0.0],
            vec![0.5, -1.0, 0.0],
            vec![0.8, 2.5, 1.1],
            1e-5,
        );
        // objective: sum of squared outputs / 2 through the frozen path
        let loss = |h: &Tensor, gamma: &Tensor, beta: &Tensor| {
            let out = renorm_infer_core(h, gamma, beta, &state.running, state.epsilon).unwrap();
            0.5 * out.data().iter().map(|v| v * v).sum::<f64>()
        };
        let (out, trace) =
            renorm_infer_core_traced(&h0, &state.gamma, &state.beta, &state.running, state.epsilon)
                .unwrap();
        let (gh, gg, gb) = state.backward(&trace, &out).unwrap();
        let fd_h = central_diff(h0.data(), 1e-5, |d| {
            loss(&Tensor::from_vec(vec![4, 3], d.to_vec()).unwrap(), &state.gamma, &state.beta)
        });
        let fd_g = central_diff(state.gamma.data(), 1e-5, |d| {
            loss(&h0, &Tensor::from_vec(vec![3], d.to_vec()).unwrap(), &state.beta)
        });
        let fd_b = central_diff(state.beta.data(), 1e-5, |d| {
            loss(&h0, &state.gamma, &Tensor::from_vec(vec![3], d.to_vec()).unwrap())
        });
        assert!(max_rel_err(gh.data(), &fd_h) < 1e-6);
        assert!(max_rel_err(gg.data(), &fd_g) < 1e-6);
        assert!(max_rel_err(gb.data(), &fd_b) < 1e-6);
    }

    #[test]
    fn backward_grad_h_is_exact_per_unit_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = rand_matrix(&mut rng, 5, 4, -2.0, 2.0);
        let state = state_with(
            vec![1.4, 0.3, 2.0, 0.9],
            vec![0.0; 4],
            vec![0.1, 0.2, -0.3, 0.0],
            vec![0.5, 1.5, 2.5, 0.9],
            1e-5,
        );
        let (_, trace) = renorm_train_core(&h, &state.gamma, &state.beta, &state.running, state.epsilon).unwrap();
        let g = rand_matrix(&mut rng, 5, 4, -1.0, 1.0);
        let (gh, _, _) = state.backward(&trace, &g).unwrap();
        for r in 0..5 {
            for j in 0..4 {
                // same factorisation the forward trace carries: one scale
                // per unit, applied bit-for-bit to every row
                let inv = 1.0 / (state.running.var.data()[j] + state.epsilon).sqrt();
                let scale = state.gamma.data()[j] * inv;
                assert_eq!(gh.at(r, j), g.at(r, j) * scale);
            }
        }
    }

    #[test]
    fn update_with_momentum_one_adopts_batch_stats() {
        let mut running = RunningStats::unit(2);
        let mu = Tensor::from_vec(vec![2], vec![3.0, -1.0]).unwrap();
        let var = Tensor::from_vec(vec![2], vec![0.5, 2.0]).unwrap();
        update_running_stats(&mut running, &mu, &var, 1.0).unwrap();
        assert_eq!(running.mean, mu);
        assert_eq!(running.var, var);
    }

    #[test]
    fn update_at_fixed_point_changes_nothing() {
        let mut running = RunningStats {
            mean: Tensor::from_vec(vec![1], vec![2.5]).unwrap(),
            var: Tensor::from_vec(vec![1], vec![1.25]).unwrap(),
        };
        let mu = running.mean.clone();
        let var = running.var.clone();
        update_running_stats(&mut running, &mu, &var, 0.3).unwrap();
        assert!((running.mean.data()[0] - 2.5).abs() < 1e-15);
        assert!((running.var.data()[0] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn update_hand_example() {
        // m = 0.1, mu_G = 0, mu_B = 1 -> mu_G' = 0.1
        let mut running = RunningStats::unit(1);
        running.var = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        let mu = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        let var = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        update_running_stats(&mut running, &mu, &var, 0.1).unwrap();
        assert!((running.mean.data()[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn train_path_rejects_single_frame_batches() {
        let h = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let state = state_with(vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0], 1e-5);
        let err = renorm_train_core(&h, &state.gamma, &state.beta, &state.running, 1e-5).unwrap_err();
        assert_eq!(err.kind(), "usage");
    }

    #[test]
    fn running_stats_converge_to_the_source_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let normal = Normal::new(1.7, 0.9).unwrap();
        let mut state = RenormState::new(1, 0.05, 1e-5).unwrap();
        let batch = 64;
        let updates = 400;
        for _ in 0..updates {
            let data: Vec<f64> = (0..batch).map(|_| normal.sample(&mut rng)).collect();
            let h = Tensor::from_vec(vec![batch, 1], data).unwrap();
            state.forward_train(&h).unwrap();
        }
        // Steady-state EMA variance of the mean estimate is
        // m/(2-m) * sigma^2/batch; allow 3 standard errors plus the
        // residual bias from the zero initialisation.
        let m: f64 = 0.05;
        let sigma: f64 = 0.9;
        let se = (m / (2.0 - m) * sigma * sigma / batch as f64).sqrt();
        let bias = (1.0 - m).powi(updates) * 1.7;
        let err = (state.running.mean.data()[0] - 1.7).abs();
        assert!(err <= 3.0 * se + bias, "mean off by {err}, allowed {}", 3.0 * se + bias);
    }
}
