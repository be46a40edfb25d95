//! Shows the renormalisation substitution property: the training path
//! (batch statistics corrected by the per-unit constants r and d) produces
//! the same activations as normalising with the frozen global statistics,
//! and the backward pass is a per-unit constant scale.
//!
//! ```bash
//! cargo run --example renorm_paths
//! ```

use metasat::layers::{renorm_train_core, RenormState};
use metasat::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let width = 6;
    let mut state = RenormState::new(width, 0.01, 1e-5).unwrap();
    for j in 0..width {
        state.gamma.data_mut()[j] = rng.gen_range(0.3..2.0);
        state.beta.data_mut()[j] = rng.gen_range(-0.5..0.5);
        state.running.mean.data_mut()[j] = rng.gen_range(-2.0..2.0);
        state.running.var.data_mut()[j] = rng.gen_range(0.1..4.0);
    }

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let batch = rng.gen_range(2..32);
        let data: Vec<f64> = (0..batch * width).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let h = Tensor::from_vec(vec![batch, width], data).unwrap();
        let (train_out, _) =
            renorm_train_core(&h, &state.gamma, &state.beta, &state.running, state.epsilon)
                .unwrap();
        let infer_out = state.forward_infer(&h).unwrap();
        for (a, b) in train_out.data().iter().zip(infer_out.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    println!("train-path vs infer-path, 100 random batches: max |diff| = {worst:.3e}");
    assert!(worst < 1e-9);

    // backward: grad_h is exactly gamma / sqrt(var_G + eps) per unit
    let h = Tensor::from_vec(vec![3, 6], (0..18).map(|i| i as f64 / 7.0).collect()).unwrap();
    let (_, trace) =
        renorm_train_core(&h, &state.gamma, &state.beta, &state.running, state.epsilon).unwrap();
    let upstream = Tensor::filled(vec![3, 6], 1.0);
    let (grad_h, _, _) = state.backward(&trace, &upstream).unwrap();
    println!("per-unit backward scales (gamma / sqrt(var_G + eps)):");
    for j in 0..width {
        let inv = 1.0 / (state.running.var.data()[j] + state.epsilon).sqrt();
        let scale = state.gamma.data()[j] * inv;
        // exact proportionality: every row carries the same per-unit factor
        for r in 0..3 {
            assert_eq!(grad_h.at(r, j), scale);
        }
        println!("  unit {j}: {scale:.6}");
    }
    println!("the substitution holds and the backward pass is a constant per-unit scale");
}
