//! Central finite-difference validation of tape gradients.
//!
//! Always runs in f64: the step h and the error bars below are meaningless
//! at f32 resolution.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-8)
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the tape gradient of `build` at `point` against central
/// differences with step `h`. `build` must construct a scalar loss from the
/// input var and be deterministic; non-determinism (two evaluations that
/// differ bitwise) is reported as a check failure.
pub fn finite_difference_check<F>(build: F, point: &Tensor<f64>, h: f64) -> Result<FdReport>
where
    F: Fn(&Tape<f64>, Var) -> Result<Var>,
{
    let eval = |p: &Tensor<f64>| -> Result<f64> {
        let tape = Tape::<f64>::new();
        let v = tape.leaf(p.clone(), false);
        let loss = build(&tape, v)?;
        let lv = tape.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        Ok(lv.item())
    };

    // Determinism gate: identical bits on repeated evaluation.
    let base = eval(point)?;
    let again = eval(point)?;
    if base.to_bits() != again.to_bits() {
        return Err(TensorError::NonDeterministic);
    }

    // Analytic gradient from one reverse pass.
    let analytic = {
        let tape = Tape::<f64>::new();
        let v = tape.leaf(point.clone(), true);
        let loss = build(&tape, v)?;
        let grads = tape.backward(loss)?;
        grads.or_zeros(v, point.shape())
    };

    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    let mut perturbed = point.clone();
    for i in 0..point.numel() {
        let orig = perturbed.data()[i];
        perturbed.data_mut()[i] = orig + h;
        let plus = eval(&perturbed)?;
        perturbed.data_mut()[i] = orig - h;
        let minus = eval(&perturbed)?;
        perturbed.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic.data()[i], numeric);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
            report.analytic_at_worst = analytic.data()[i];
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_function_checks_tightly() {
        let point = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let report = finite_difference_check(
            |tape, x| {
                let sq = tape.square(x);
                Ok(tape.sum_all(sq))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "got {}", report.max_rel_err);
    }

    #[test]
    fn non_deterministic_function_is_reported() {
        use std::cell::Cell;
        let counter = Cell::new(0u32);
        let point = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let err = finite_difference_check(
            |tape, _x| {
                counter.set(counter.get() + 1);
                Ok(tape.constant(Tensor::scalar(counter.get() as f64)))
            },
            &point,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NonDeterministic));
    }

    #[test]
    fn constant_function_has_zero_error() {
        let point = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let report = finite_difference_check(
            |tape, _x| Ok(tape.constant(Tensor::scalar(4.0))),
            &point,
            1e-5,
        )
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }
}
