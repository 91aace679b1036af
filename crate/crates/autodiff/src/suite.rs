//! Registry of gradient checks, one per differentiable tape operator. Each
//! check draws a random problem from a seed and returns the worst relative
//! error between reverse-mode and central-difference gradients.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{grad_check, grad_check_many, DEFAULT_STEP};
use crate::{AdError, BnMode, ConvGeometry, Tape, Tensor, Var};

/// Tolerance for single-operator checks.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Seeds per operator.
pub const OP_SEEDS: u64 = 20;

/// Name of every operator whose backward pass is implemented on the tape.
pub const DIFFERENTIABLE_OPS: [&str; 20] = [
    "conv2d",
    "conv_transpose2d",
    "crop",
    "batchnorm",
    "relu",
    "sigmoid",
    "softmax",
    "resize_bilinear",
    "global_avg_pool",
    "concat",
    "batch_to_channels",
    "bias_add",
    "affine",
    "add",
    "sum",
    "mean",
    "weighted_sum",
    "cross_entropy",
    "mse",
    "complex_mask_mse",
];

type CheckFn = fn(u64) -> Result<f64, AdError>;

#[derive(Clone, Copy)]
pub struct OpCheck {
    pub name: &'static str,
    run: CheckFn,
}

impl OpCheck {
    /// Worst relative error for one seed.
    pub fn run(&self, seed: u64) -> Result<f64, AdError> {
        (self.run)(seed)
    }

    /// Worst relative error over seeds `0..seeds`.
    pub fn max_error(&self, seeds: u64) -> Result<f64, AdError> {
        (0..seeds).try_fold(0.0f64, |m, s| Ok(m.max(self.run(s)?)))
    }
}

impl std::fmt::Debug for OpCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpCheck").field("name", &self.name).finish()
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so relu kinks are never straddled.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Squared distance to a fixed random target, so every output coordinate
/// contributes a distinct gradient.
fn probe(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, AdError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let shape = t.shape(y).to_vec();
    let target = random(&shape, &mut rng);
    t.mse(y, &target)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn conv2d(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let (n, c, f) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
    let (h, w) = (r.random_range(7..10), r.random_range(7..10));
    let (k, stride, dil) = (r.random_range(1..4), r.random_range(1..3), r.random_range(1..3));
    let g = if r.random::<bool>() {
        ConvGeometry::same(h, w, k, k, stride, dil)
    } else {
        ConvGeometry::new(stride, dil, r.random_range(0..2))
    };
    let x = random(&[n, c, h, w], r);
    let wt = random(&[f, c, k, k], r);
    grad_check_many(
        |t, v| {
            let y = t.conv2d(v[0], v[1], g)?;
            probe(t, y, seed)
        },
        &[x, wt],
        DEFAULT_STEP,
    )
}

fn conv_transpose2d(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let (n, ci, co) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
    let (h, w) = (r.random_range(2..5), r.random_range(2..5));
    let (k, stride) = (r.random_range(1..5), r.random_range(1..3));
    let x = random(&[n, ci, h, w], r);
    let wt = random(&[ci, co, k, k], r);
    grad_check_many(
        |t, v| {
            let y = t.conv_transpose2d(v[0], v[1], stride)?;
            probe(t, y, seed)
        },
        &[x, wt],
        DEFAULT_STEP,
    )
}

fn crop(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let (h, w) = (r.random_range(2..6), r.random_range(2..6));
    let (top, left) = (r.random_range(0..h), r.random_range(0..w));
    let (ch, cw) = (r.random_range(1..=h - top), r.random_range(1..=w - left));
    let x = random(&[2, 2, h, w], r);
    grad_check(
        |t, v| {
            let y = t.crop(v, top, left, ch, cw)?;
            probe(t, y, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn batchnorm(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let (n, c, h, w) = (
        r.random_range(1..3),
        r.random_range(1..4),
        r.random_range(2..4),
        r.random_range(2..4),
    );
    let x = random(&[n, c, h, w], r);
    let gamma = random(&[c], r);
    let beta = random(&[c], r);
    let rm: Vec<f64> = (0..c).map(|_| r.random_range(-0.5..0.5)).collect();
    let rv: Vec<f64> = (0..c).map(|_| r.random_range(0.5..2.0)).collect();
    let mut worst = 0.0f64;
    for mode in [BnMode::Train, BnMode::Eval] {
        let e = grad_check_many(
            |t, v| {
                let (y, _) = t.batchnorm(v[0], v[1], v[2], mode, Some((&rm, &rv)), 1e-5)?;
                probe(t, y, seed)
            },
            &[x.clone(), gamma.clone(), beta.clone()],
            DEFAULT_STEP,
        )?;
        worst = worst.max(e);
    }
    Ok(worst)
}

fn relu(seed: u64) -> Result<f64, AdError> {
    let x = off_zero(&[2, 3, 2, 2], &mut rng(seed));
    grad_check(
        |t, v| {
            let y = t.relu(v)?;
            probe(t, y, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn sigmoid(seed: u64) -> Result<f64, AdError> {
    let x = random(&[2, 3, 2, 2], &mut rng(seed));
    grad_check(
        |t, v| {
            let y = t.sigmoid(v)?;
            probe(t, y, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn softmax(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let axis = r.random_range(0..4);
    let x = random(&[2, 3, 2, 3], r);
    grad_check(
        |t, v| {
            let y = t.softmax(v, axis)?;
            probe(t, y, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn resize_bilinear(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let (h, w) = (r.random_range(1..5), r.random_range(1..5));
    let (oh, ow) = (r.random_range(1..9), r.random_range(1..9));
    let x = random(&[2, 2, h, w], r);
    grad_check(
        |t, v| {
            let y = t.resize_bilinear(v, oh, ow)?;
            probe(t, y, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn global_avg_pool(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let (h, w) = (r.random_range(1..6), r.random_range(1..6));
    let x = random(&[2, 3, h, w], r);
    grad_check(
        |t, v| {
            let y = t.global_avg_pool(v)?;
            probe(t, y, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn concat(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let axis = r.random_range(0..4);
    let mut other = vec![2, 2, 3, 2];
    other[axis] = r.random_range(1..4);
    let a = random(&[2, 2, 3, 2], r);
    let b = random(&other, r);
    grad_check_many(
        |t, v| {
            let y = t.concat(v, axis)?;
            probe(t, y, seed)
        },
        &[a, b],
        DEFAULT_STEP,
    )
}

fn batch_to_channels(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let groups = r.random_range(1..4);
    let x = random(&[groups * 2, 2, 2, 3], r);
    grad_check(
        |t, v| {
            let y = t.batch_to_channels(v, groups)?;
            probe(t, y, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn bias_add(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let x = random(&[2, 3, 2, 2], r);
    let b = random(&[3], r);
    grad_check_many(
        |t, v| {
            let y = t.bias_add(v[0], v[1])?;
            probe(t, y, seed)
        },
        &[x, b],
        DEFAULT_STEP,
    )
}

fn affine(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let (a, b) = (r.random_range(-2.0..2.0), r.random_range(-1.0..1.0));
    let x = random(&[2, 3, 2, 2], r);
    grad_check(
        |t, v| {
            let y = t.affine(v, a, b)?;
            probe(t, y, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn add(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let x = random(&[2, 3, 2, 2], r);
    let y = random(&[2, 3, 2, 2], r);
    grad_check_many(
        |t, v| {
            let s = t.add(v[0], v[1])?;
            let s = t.add(s, v[0])?;
            probe(t, s, seed)
        },
        &[x, y],
        DEFAULT_STEP,
    )
}

fn sum(seed: u64) -> Result<f64, AdError> {
    let x = random(&[3, 4], &mut rng(seed));
    grad_check(
        |t, v| {
            let s = t.sum(v)?;
            probe(t, s, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn mean(seed: u64) -> Result<f64, AdError> {
    let x = random(&[3, 4], &mut rng(seed));
    grad_check(
        |t, v| {
            let m = t.mean(v)?;
            probe(t, m, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn weighted_sum(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let x = random(&[3, 4], r);
    let w: [f64; 3] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
    grad_check(
        |t, v| {
            let a = t.mean(v)?;
            let b = t.sum(v)?;
            let c = probe(t, v, seed)?;
            let s = t.weighted_sum(&[(a, w[0]), (b, w[1]), (c, w[2])])?;
            probe(t, s, seed)
        },
        &x,
        DEFAULT_STEP,
    )
}

fn cross_entropy(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let (n, k, h, w) = (2, r.random_range(2..5), 2, 3);
    let x = random(&[n, k, h, w], r);
    let labels: Vec<usize> = (0..n * h * w).map(|_| r.random_range(0..k)).collect();
    let weights: Option<Vec<f64>> = r.random::<bool>().then(|| (0..k).map(|_| r.random_range(0.2..2.0)).collect());
    grad_check(|t, v| t.cross_entropy(v, &labels, weights.as_deref()), &x, DEFAULT_STEP)
}

fn mse(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let x = random(&[2, 1, 3, 4], r);
    let target = random(&[2, 1, 3, 4], r);
    grad_check(|t, v| t.mse(v, &target), &x, DEFAULT_STEP)
}

fn complex_mask_mse(seed: u64) -> Result<f64, AdError> {
    let r = &mut rng(seed);
    let p = r.random_range(1..4);
    let x = random(&[2, 4 * p, 3, 2], r);
    let spec = random(&[2, 4, 3, 2], r);
    let target = random(&[2, 4 * p, 3, 2], r);
    grad_check(|t, v| t.complex_mask_mse(v, &spec, &target), &x, DEFAULT_STEP)
}

/// One check per entry of [`DIFFERENTIABLE_OPS`], in the same order.
pub fn op_checks() -> Vec<OpCheck> {
    let runs: [CheckFn; 20] = [
        conv2d,
        conv_transpose2d,
        crop,
        batchnorm,
        relu,
        sigmoid,
        softmax,
        resize_bilinear,
        global_avg_pool,
        concat,
        batch_to_channels,
        bias_add,
        affine,
        add,
        sum,
        mean,
        weighted_sum,
        cross_entropy,
        mse,
        complex_mask_mse,
    ];
    DIFFERENTIABLE_OPS
        .iter()
        .zip(runs)
        .map(|(&name, run)| OpCheck { name, run })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_every_backward_arm() {
        let checks = op_checks();
        assert_eq!(checks.len(), DIFFERENTIABLE_OPS.len());
        let names: std::collections::BTreeSet<&str> = checks.iter().map(|c| c.name).collect();
        assert_eq!(names.len(), DIFFERENTIABLE_OPS.len());
    }

    #[test]
    fn every_check_passes_on_one_seed() {
        for c in op_checks() {
            let e = c.run(0).unwrap();
            assert!(e <= OP_TOLERANCE, "{}: {e:e}", c.name);
        }
    }
}
