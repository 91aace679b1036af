//! Central-difference gradient checking in `f64`.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::AdError;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Default denominator floor for [`relative_error`].
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// Relative error used by the checker: `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, DEFAULT_FLOOR)
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest relative error between the reverse-mode gradient of the scalar
/// `f(inputs)` and central differences, over every coordinate of every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64, AdError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AdError>,
{
    grad_check_floored(f, inputs, h, DEFAULT_FLOOR)
}

/// [`grad_check_many`] with an explicit denominator floor. Central
/// differences carry roughly `ulp(f) / h` of rounding noise, so gradients
/// below that level compare noise with noise unless the floor covers it.
pub fn grad_check_floored<F>(f: F, inputs: &[Tensor<f64>], h: f64, floor: f64) -> Result<f64, AdError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AdError>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64, AdError> {
        let mut tape = Tape::new();
        let vars = xs.iter().map(|x| tape.constant(x.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|x| tape.leaf(x.clone())).collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            worst = worst.max(relative_error_floored(a, (up - down) / (2.0 * h), floor));
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64, AdError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, AdError>,
{
    grad_check_many(|t, v| f(t, v[0]), std::slice::from_ref(x), h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::new(&[3, 2], vec![0.5, -1.0, 2.0, 3.0, -0.25, 7.0]).unwrap();
        let err = grad_check(|t, v| t.sum(v), &x, DEFAULT_STEP).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn floor_bounds_noise_on_vanishing_gradients() {
        assert!(relative_error(1e-17, 1.1e-10) > 1e-2);
        assert!(relative_error_floored(1e-17, 1.1e-10, 1e-6) < 1e-3);
        assert_eq!(relative_error_floored(2.0, 1.0, 1e-6), relative_error(2.0, 1.0));
    }
}
