//! Verifies the hand-written reverse-mode gradients of the full model
//! against a central finite-difference oracle, parameter by parameter.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use metasat::gradcheck::{central_diff, max_rel_err};
use metasat::ops::softmax_xent;
use metasat::{Mode, Model, ModelConfig, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let config = ModelConfig {
        input_dim: 4,
        hidden: vec![6, 5],
        n_classes: 4,
        context_frames: 0,
        silence_class: 0,
        epsilon: 1e-5,
        momentum: 0.01,
    };
    let model = Model::new(config.clone()).unwrap();
    let mut params = model.init_params(7);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let batch = 10;
    let data: Vec<f64> = (0..batch * config.input_dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let x = Tensor::from_vec(vec![batch, config.input_dim], data).unwrap();
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..config.n_classes)).collect();

    // analytic gradients through the frozen-statistics path
    let (logits, trace) = model.forward(&params, &x, Mode::Adapt).unwrap();
    let (loss, grad_logits) = softmax_xent(&logits, &labels).unwrap();
    params.zero_grads();
    model.backward(&mut params, &trace, &grad_logits).unwrap();
    println!("loss = {loss:.6}");

    let mut worst: f64 = 0.0;
    for id in params.ids().collect::<Vec<_>>() {
        let analytic = params.grad(id).unwrap().data().to_vec();
        let point = params.get(id).unwrap().clone();
        let numeric = central_diff(point.data(), 1e-5, |vals| {
            let mut probe = params.clone();
            probe.get_mut(id).unwrap().data_mut().copy_from_slice(vals);
            let (lg, _) = model.forward(&probe, &x, Mode::Adapt).unwrap();
            softmax_xent(&lg, &labels).unwrap().0
        });
        let err = max_rel_err(&analytic, &numeric);
        worst = worst.max(err);
        println!("{id:<16} {} values, max rel err {err:.3e}", analytic.len());
    }
    println!("worst relative error across all parameters: {worst:.3e}");
    assert!(worst < 1e-4);
    println!("analytic gradients agree with the finite-difference oracle");
}
