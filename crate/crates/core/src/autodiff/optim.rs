use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v <- mu * v + g + wd * p`, `p <- p - lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
    buffers: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T, weight_decay: T) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    pub fn buffers(&self) -> &[Vec<T>] {
        &self.buffers
    }

    /// Updates `params` in place and clears `grads`. `names` is only used
    /// for error messages and must be as long as `params`.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &mut [Option<Tensor<T>>], names: &[String]) -> Result<()> {
        if params.len() != grads.len() || params.len() != names.len() {
            return Err(Error::Invalid(alloc::format!(
                "{} parameters, {} gradients, {} names",
                params.len(),
                grads.len(),
                names.len()
            )));
        }
        if let Some(i) = grads.iter().position(Option::is_none) {
            return Err(Error::MissingGrad(names[i].clone()));
        }
        if self.buffers.is_empty() {
            self.buffers = params.iter().map(|p| alloc::vec![T::zero(); p.len()]).collect();
        }
        if self.buffers.len() != params.len() {
            return Err(Error::Invalid("optimizer state does not match the parameter list".into()));
        }
        for ((p, g), v) in params.iter_mut().zip(grads.iter_mut()).zip(&mut self.buffers) {
            let g = g.take().expect("checked above");
            if g.shape() != p.shape() || v.len() != p.len() {
                return Err(Error::shape(
                    "sgd_step",
                    alloc::format!("gradient {:?} vs parameter {:?}", g.shape(), p.shape()),
                ));
            }
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vv = self.momentum * *vv + gv + self.weight_decay * *pv;
                *pv = *pv - self.lr * *vv;
            }
        }
        Ok(())
    }
}

/// Linear warmup followed by cosine decay to zero, evaluated per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        0.5 * self.base_lr * (1.0 + libm::cos(core::f64::consts::PI * t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut p = Tensor::new(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut opt = Sgd::new(0.0, 0.9, 1e-4);
        let mut g = vec![Some(Tensor::new(&[3], vec![0.3, 0.1, -0.7]).unwrap())];
        opt.step(&mut [&mut p], &mut g, &names(1)).unwrap();
        assert_eq!(p, before);
        assert!(g[0].is_none());
    }

    #[test]
    fn plain_step_hand_oracle() {
        let mut p = Tensor::new(&[2], vec![1.0f64, 2.0]).unwrap();
        let mut opt = Sgd::new(0.1, 0.0, 0.0);
        let mut g = vec![Some(Tensor::new(&[2], vec![0.5, -1.0]).unwrap())];
        opt.step(&mut [&mut p], &mut g, &names(1)).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.1 * 0.5, 2.0 + 0.1]);
    }

    #[test]
    fn two_momentum_steps_hand_oracle() {
        let (lr, mu) = (0.1f64, 0.9f64);
        let mut p = Tensor::new(&[1], vec![1.0f64]).unwrap();
        let mut opt = Sgd::new(lr, mu, 0.0);
        let (g1, g2) = (0.5, -0.25);
        opt.step(&mut [&mut p], &mut [Some(Tensor::scalar(g1))], &names(1)).unwrap();
        opt.step(&mut [&mut p], &mut [Some(Tensor::scalar(g2))], &names(1)).unwrap();
        // v1 = g1, p1 = p0 - lr v1; v2 = mu v1 + g2, p2 = p1 - lr v2
        let v1 = g1;
        let p1 = 1.0 - lr * v1;
        let v2 = mu * v1 + g2;
        let p2 = p1 - lr * v2;
        assert!((p.data()[0] - p2).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = Tensor::new(&[1], vec![1.0f64]).unwrap();
        let mut opt = Sgd::new(0.1, 0.0, 0.0);
        let err = opt.step(&mut [&mut p], &mut [None], &["w".to_string()]).unwrap_err();
        assert_eq!(err, Error::MissingGrad("w".into()));
    }

    #[test]
    fn cosine_schedule_shape() {
        let s = CosineSchedule {
            base_lr: 0.1,
            warmup_steps: 10,
            total_steps: 110,
        };
        assert!((s.lr(0) - 0.01).abs() < 1e-12);
        assert!((s.lr(9) - 0.1).abs() < 1e-12);
        assert!((s.lr(10) - 0.1).abs() < 1e-12);
        assert!((s.lr(60) - 0.05).abs() < 1e-12);
        assert!(s.lr(110).abs() < 1e-12);
    }
}
