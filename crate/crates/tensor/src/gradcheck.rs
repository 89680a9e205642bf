//! Central finite-difference gradient checking.
//!
//! The numerical side only ever calls the forward function, so it is an
//! independent oracle for whatever `backward` produces.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator so entries whose true
    /// gradient is ~0 are compared in absolute terms.
    pub denom_floor: f64,
    /// Upper bound on checked entries per parameter (evenly strided subset).
    pub max_entries: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            denom_floor: 1e-3,
            max_entries: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(parameter index, entry, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compare `backward` gradients of `loss_fn` against central differences for
/// every tensor in `params`.
pub fn check_gradients(
    params: &[Tensor<f64>],
    loss_fn: impl Fn() -> Result<Tensor<f64>>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    for p in params {
        p.zero_grad();
    }
    loss_fn()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let stride = n.div_ceil(opts.max_entries.max(1)).max(1);
        for e in (0..n).step_by(stride) {
            let orig = p.data()[e];
            p.update_data(|d| d[e] = orig + opts.step)?;
            let plus = loss_fn()?.item()?;
            p.update_data(|d| d[e] = orig - opts.step)?;
            let minus = loss_fn()?.item()?;
            p.update_data(|d| d[e] = orig)?;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[pi][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.denom_floor);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst = Some((pi, e, a, numeric));
            }
        }
    }
    for p in params {
        p.zero_grad();
    }
    Ok(report)
}

/// `sum(x * r)` for a fixed random `r`: turns any tensor output into a
/// well-scaled scalar whose gradient exercises every output entry.
pub fn random_projection(x: &Tensor<f64>, rng: &mut Rng) -> Result<Tensor<f64>> {
    let r: Vec<f64> = (0..x.numel()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let r = Tensor::from_vec(x.shape(), r)?;
    Ok(x.mul(&r)?.sum_all())
}

/// Random tensor with entries uniform in `[-1, 1)`.
pub fn uniform(shape: &[usize], rng: &mut Rng, requires_grad: bool) -> Tensor<f64> {
    let n = crate::shape::numel(shape);
    let data: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    if requires_grad {
        Tensor::parameter(shape, data).expect("length matches shape")
    } else {
        Tensor::from_vec(shape, data).expect("length matches shape")
    }
}
