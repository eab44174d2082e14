//! SGD with momentum and weight decay, and the polynomial learning-rate
//! annealing schedule `l_p = l0 / (1 + gamma p)^beta` with progress
//! `p = step / total_steps`. A step-decay alternative is provided.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Poly,
    Step,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub l0: f64,
    /// poly: curvature (default 10)
    pub gamma: f64,
    /// poly: exponent (default 0.75)
    pub beta: f64,
    /// step: progress fraction after which the rate is multiplied
    pub step_at: f64,
    /// step: multiplier (default 0.1)
    pub step_factor: f64,
    pub total_steps: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            kind: ScheduleKind::Poly,
            l0: 0.01,
            gamma: 10.0,
            beta: 0.75,
            step_at: 0.8,
            step_factor: 0.1,
            total_steps: 1,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.l0 <= 0.0 || self.gamma < 0.0 || self.beta < 0.0 || self.total_steps < 1 {
            return Err(Error::Config(format!("invalid schedule {:?}", self)));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Usage(format!(
                "step {} beyond total_steps {}",
                step, self.total_steps
            )));
        }
        let p = step as f64 / self.total_steps as f64;
        Ok(match self.kind {
            ScheduleKind::Poly => self.l0 / (1.0 + self.gamma * p).powf(self.beta),
            ScheduleKind::Step => {
                if p >= self.step_at {
                    self.l0 * self.step_factor
                } else {
                    self.l0
                }
            }
        })
    }
}

/// Plain SGD: `v <- momentum v - lr (g + wd theta); theta <- theta + v`.
/// Weight decay applies only to parameters flagged as weights.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocities: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocities: Vec::new(),
        }
    }

    /// Update one parameter. `slot` is the parameter's index in a fixed
    /// visiting order; velocity buffers are created lazily in that order.
    pub fn step_param(
        &mut self,
        slot: usize,
        param: &mut Tensor,
        grad: &Tensor,
        decay: bool,
        lr: f64,
    ) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "sgd param {:?} vs grad {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        if grad.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient in slot {}", slot)));
        }
        while self.velocities.len() <= slot {
            self.velocities.push(Tensor::zeros(param.shape()));
        }
        let v = &mut self.velocities[slot];
        if v.shape() != param.shape() {
            return Err(Error::Shape("velocity shape drifted".into()));
        }
        let wd = if decay { self.weight_decay } else { 0.0 };
        let m = self.momentum;
        for ((vv, pv), gv) in v
            .data_mut()
            .iter_mut()
            .zip(param.data_mut().iter_mut())
            .zip(grad.data())
        {
            *vv = m * *vv - lr * (gv + wd * *pv);
            *pv += *vv;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(total: usize) -> Schedule {
        Schedule {
            total_steps: total,
            ..Default::default()
        }
    }

    #[test]
    fn lr_endpoints() {
        let s = poly(100);
        assert_eq!(s.lr_at(0).unwrap(), 0.01);
        let flat = Schedule {
            gamma: 0.0,
            total_steps: 10,
            ..Default::default()
        };
        for step in 0..=10 {
            assert_eq!(flat.lr_at(step).unwrap(), 0.01);
        }
        // l0 / 11^0.75 at p = 1
        let end = s.lr_at(100).unwrap();
        assert!((end - 0.01 / 11f64.powf(0.75)).abs() <= 1e-15);
        assert!((end - 1.6556002607617019e-3).abs() <= 1e-12);
        assert!(s.lr_at(101).is_err());
    }

    #[test]
    fn lr_is_non_increasing() {
        let s = poly(50);
        let mut prev = f64::INFINITY;
        for step in 0..=50 {
            let lr = s.lr_at(step).unwrap();
            assert!(lr <= prev && lr <= s.l0);
            prev = lr;
        }
    }

    #[test]
    fn step_decay() {
        let s = Schedule {
            kind: ScheduleKind::Step,
            total_steps: 10,
            ..Default::default()
        };
        assert_eq!(s.lr_at(7).unwrap(), 0.01);
        assert!((s.lr_at(8).unwrap() - 0.001).abs() <= 1e-15);
    }

    #[test]
    fn vanilla_sgd() {
        let mut opt = Sgd::new(0.0, 0.0);
        let mut p = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let g = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        opt.step_param(0, &mut p, &g, true, 0.1).unwrap();
        assert_eq!(p.data(), &[0.95, -2.05]);
        // zero grad, zero velocity: unchanged
        let mut opt = Sgd::new(0.9, 0.0);
        let mut p = Tensor::new(vec![1], vec![3.0]).unwrap();
        opt.step_param(0, &mut p, &Tensor::zeros(&[1]), true, 0.1).unwrap();
        assert_eq!(p.data(), &[3.0]);
    }

    #[test]
    fn momentum_matches_hand_unrolled_recurrence() {
        let (m, lr, g1, g2, wd) = (0.9, 0.05, 0.4, -0.2, 0.01);
        let mut theta = 1.0;
        let mut opt = Sgd::new(m, wd);
        let mut p = Tensor::new(vec![1], vec![theta]).unwrap();
        opt.step_param(0, &mut p, &Tensor::new(vec![1], vec![g1]).unwrap(), true, lr)
            .unwrap();
        opt.step_param(0, &mut p, &Tensor::new(vec![1], vec![g2]).unwrap(), true, lr)
            .unwrap();
        let mut v = 0.0;
        v = m * v - lr * (g1 + wd * theta);
        theta += v;
        v = m * v - lr * (g2 + wd * theta);
        theta += v;
        assert!((p.data()[0] - theta).abs() <= 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut opt = Sgd::new(0.9, 0.0);
        let mut p = Tensor::zeros(&[1]);
        let mut g = Tensor::zeros(&[1]);
        g.data_mut()[0] = f64::NAN;
        assert!(matches!(
            opt.step_param(0, &mut p, &g, false, 0.1),
            Err(Error::NonFinite(_))
        ));
    }
}
