//! Whole-network gradient check on a tiny configuration, shared by the test
//! suites and the command-line self test.

use std::collections::BTreeMap;

use bapn_autodiff::{grad_check_floored, AdError, BnMode, Tape, Tensor, Var};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{LossWeights, ModelConfig};
use crate::data::Batch;
use crate::net::Model;
use crate::train::{class_weights, total_loss};
use crate::ModelError;

/// Tolerance for the whole-network check.
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Finite-difference step for the whole-network check.
pub const MODEL_STEP: f64 = 1e-6;

/// Gradients smaller than this are compared absolutely. With a loss of
/// order one, a step of 1e-6 and thousands of summed terms, central
/// differences carry about 1e-10 of rounding noise; some parameters (biases
/// ahead of batch norm) have exact gradients of zero.
pub const MODEL_GRAD_FLOOR: f64 = 1e-6;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// 8x16 spectrograms and 4 base channels with all three decoders in
/// train-mode batch norm.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        aspp_filters: 8,
        dilation_scale: 0.1,
        decoder_channels: 4,
        output_grid: (4, 8),
        spec_shape: (8, 16),
        ..ModelConfig::default()
    }
}

/// Worst relative error between reverse-mode and central-difference
/// gradients of the total loss, over the input and every parameter.
pub fn full_model_grad_check(seed: u64) -> Result<f64, ModelError> {
    let cfg = tiny_config();
    let mut model = Model::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = 3;
    let batch = Batch {
        n,
        inputs: random_tensor(&[2 * n, 1, 8, 16], &mut rng, 0.0, 2.0).cast(),
        labels: (0..n * 4 * 8).map(|_| rng.random_range(0..4)).collect(),
        depth: random_tensor(&[n, 1, 4, 8], &mut rng, 0.1, 1.0).cast(),
        s3r_spec: Some(random_tensor(&[n, 4, 8, 16], &mut rng, -1.0, 1.0).cast()),
        s3r_target: Some(random_tensor(&[n, 12, 8, 16], &mut rng, -1.0, 1.0).cast()),
    };
    // Zero-initialized heads would leave most of the network without
    // gradient, so they get random weights first.
    for p in model.store.params().to_vec() {
        if p.name.ends_with(".out.w") || p.name.ends_with(".out.b") {
            let id = model.store.id(&p.name).expect("registered");
            model.store.get_mut(id).tensor = random_tensor(p.tensor.shape(), &mut rng, -0.5, 0.5).cast();
        }
    }
    let names: Vec<String> = model.store.params().iter().map(|p| p.name.clone()).collect();
    let mut inputs = vec![batch.inputs.cast::<f64>()];
    inputs.extend(model.store.params().iter().map(|p| p.tensor.cast::<f64>()));
    let weights = class_weights::<f64>(2.0);
    let f = |tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var, AdError> {
        let preset: BTreeMap<String, Var> = names.iter().cloned().zip(vars[1..].iter().copied()).collect();
        let run = || -> Result<Var, ModelError> {
            let (out, _) = model.forward_with(tape, vars[0], BnMode::Train, preset)?;
            Ok(total_loss(tape, &out, &batch, LossWeights::default(), Some(&weights))?.0)
        };
        run().map_err(|e| match e {
            ModelError::Ad(a) => a,
            e => AdError::ShapeMismatch(e.to_string()),
        })
    };
    Ok(grad_check_floored(f, &inputs, MODEL_STEP, MODEL_GRAD_FLOOR)?)
}
