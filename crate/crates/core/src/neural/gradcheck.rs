//! Central finite-difference gradient checking in `f64`.

use super::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Worst element-wise disagreement found by [`check_gradient`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error with a floor of `1e-6` on the denominator so entries that
/// are both essentially zero do not blow up.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Estimate `∂f/∂param` by central differences and compare with `analytic`.
pub fn numeric_gradient(param: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64, step: f64) -> Tensor<f64> {
    let mut probe = param.clone();
    let mut grad = Tensor::zeros(param.shape());
    for i in 0..param.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * step);
    }
    grad
}

pub fn compare(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = relative_error(a, n);
        if e > report.max_relative_error || !e.is_finite() {
            report = GradCheckReport {
                max_relative_error: e,
                worst_index: i,
                analytic: a,
                numeric: n,
            };
        }
    }
    report
}

/// Fails with the worst offending entry when the maximum relative error
/// reaches `tolerance`.
pub fn check_gradient(
    param: &Tensor<f64>,
    analytic: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> f64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GradCheckReport> {
    assert_eq!(param.shape(), analytic.shape(), "gradient shape");
    let report = compare(analytic, &numeric_gradient(param, f, step));
    if report.max_relative_error < tolerance {
        Ok(report)
    } else {
        Err(report)
    }
}
