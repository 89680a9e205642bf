use std::f64::consts::PI;

use plasm_tensor::{Element, Tensor};

use crate::config::{OptimizerConfig, Schedule};
use crate::error::{Error, Result};

const WARMUP_FRACTION: f64 = 0.3;
const WARMUP_DIV: f64 = 25.0;
const FINAL_DIV: f64 = 1e4;

/// Learning rate for update `step` of `total`.
pub fn lr_at(schedule: Schedule, step: usize, total: usize, base: f64) -> Result<f64> {
    if step > total {
        return Err(Error::Config(format!("step {step} beyond schedule length {total}")));
    }
    if total == 0 {
        return Ok(base);
    }
    let cos_anneal = |p: f64, hi: f64, lo: f64| lo + (hi - lo) * (1.0 + (PI * p).cos()) / 2.0;
    Ok(match schedule {
        Schedule::Constant => base,
        Schedule::Cosine => cos_anneal(step as f64 / total as f64, base, 0.0),
        Schedule::OneCycle => {
            let warm = WARMUP_FRACTION * total as f64;
            let start = base / WARMUP_DIV;
            let s = step as f64;
            if s <= warm {
                start + (base - start) * s / warm
            } else {
                cos_anneal((s - warm) / (total as f64 - warm), base, base / FINAL_DIV)
            }
        }
    })
}

/// Bias-corrected Adam over a fixed list of named parameters.
#[derive(Debug, Clone)]
pub struct Adam<T: Element = f32> {
    pub cfg: OptimizerConfig,
    params: Vec<(String, Tensor<T>)>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: usize,
}

impl<T: Element> Adam<T> {
    pub fn new(params: Vec<(String, Tensor<T>)>, cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        let m = params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
        let v = params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
        Ok(Self {
            cfg,
            params,
            m,
            v,
            step: 0,
        })
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    /// Number of updates applied so far.
    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// First and second moment estimates, per parameter.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &[T], &[T])> {
        self.params
            .iter()
            .zip(self.m.iter().zip(&self.v))
            .map(|((n, _), (m, v))| (n.as_str(), m.as_slice(), v.as_slice()))
    }

    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// Apply one update at learning rate `lr` using the accumulated gradients.
    pub fn step(&mut self, lr: f64) -> Result<()> {
        let grads = self
            .params
            .iter()
            .map(|(n, p)| p.grad().ok_or_else(|| Error::MissingGrad(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (tb1, tb2) = (T::from_f64(b1), T::from_f64(b2));
        let (ob1, ob2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
        let step_size = T::from_f64(lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2);
        let eps = T::from_f64(self.cfg.eps);
        for (((_, p), g), (m, v)) in self
            .params
            .iter()
            .zip(&grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            p.update_data(|w| {
                for i in 0..w.len() {
                    m[i] = tb1 * m[i] + ob1 * g[i];
                    v[i] = tb2 * v[i] + ob2 * g[i] * g[i];
                    w[i] -= step_size * m[i] / ((v[i] * inv_c2).sqrt() + eps);
                }
            })?;
        }
        Ok(())
    }

    /// Restore moments and step count, e.g. from a checkpoint.
    pub fn restore(&mut self, step: usize, moments: Vec<(Vec<T>, Vec<T>)>) -> Result<()> {
        if moments.len() != self.params.len()
            || moments
                .iter()
                .zip(&self.params)
                .any(|((m, v), (_, p))| m.len() != p.numel() || v.len() != p.numel())
        {
            return Err(Error::Config("optimizer state does not match parameters".into()));
        }
        (self.m, self.v) = moments.into_iter().unzip();
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_at(Schedule::Cosine, 0, 100, 0.1).unwrap(), 0.1);
        assert!(lr_at(Schedule::Cosine, 100, 100, 0.1).unwrap().abs() < 1e-15);
        assert_eq!(lr_at(Schedule::Constant, 37, 100, 0.1).unwrap(), 0.1);
        assert!((lr_at(Schedule::OneCycle, 30, 100, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!((lr_at(Schedule::OneCycle, 0, 100, 0.1).unwrap() - 0.004).abs() < 1e-15);
        assert!((lr_at(Schedule::OneCycle, 100, 100, 0.1).unwrap() - 1e-5).abs() < 1e-15);
        assert!(lr_at(Schedule::Constant, 101, 100, 0.1).is_err());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let p = Tensor::<f32>::parameter(&[3], vec![0.5, 1.0, -2.0]).unwrap();
        let mut opt = Adam::new(vec![("p".into(), p.clone())], OptimizerConfig::adam(0.01, Schedule::Constant)).unwrap();
        p.sum_all().backward().unwrap();
        opt.step(0.01).unwrap();
        for (a, b) in p.to_vec().iter().zip([0.5f32, 1.0, -2.0]) {
            let d = (b - a) as f64;
            assert!((0.0099..=0.01).contains(&d), "{d}");
        }
    }

    #[test]
    fn zero_grad_leaves_params() {
        let p = Tensor::<f32>::parameter(&[2], vec![0.5, 1.0]).unwrap();
        let mut opt = Adam::new(vec![("p".into(), p.clone())], OptimizerConfig::adam(0.01, Schedule::Constant)).unwrap();
        p.scale(0.0).sum_all().backward().unwrap();
        opt.step(0.01).unwrap();
        assert_eq!(p.to_vec(), vec![0.5, 1.0]);
    }

    #[test]
    fn missing_grad_is_error() {
        let p = Tensor::<f32>::parameter(&[2], vec![0.5, 1.0]).unwrap();
        let mut opt = Adam::new(vec![("p".into(), p)], OptimizerConfig::adam(0.01, Schedule::Constant)).unwrap();
        assert!(matches!(opt.step(0.01), Err(Error::MissingGrad(_))));
    }
}
