use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(crate::Error::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Step size `lr / (1 + step / decay_steps)`, then a plain or Adam update.
#[derive(Debug, Clone)]
pub(crate) struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    decay_steps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, decay_steps: f64, len: usize) -> Self {
        let state = if kind == OptimizerKind::Adam { len } else { 0 };
        Optimizer {
            kind,
            lr,
            decay_steps,
            step: 0,
            m: vec![0.0; state],
            v: vec![0.0; state],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        if self.decay_steps > 0.0 {
            self.lr / (1.0 + self.step as f64 / self.decay_steps)
        } else {
            self.lr
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) {
        let eta = self.learning_rate();
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= eta * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                let c1 = 1.0 - B1.powi(self.step as i32);
                let c2 = 1.0 - B2.powi(self.step as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *p -= eta * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_schedule() {
        let mut o = Optimizer::new(OptimizerKind::Sgd, 0.1, 100.0, 1);
        assert_eq!(o.learning_rate(), 0.1);
        let mut p = [1.0];
        for _ in 0..100 {
            o.apply(&mut p, &[0.0]);
        }
        assert!((o.learning_rate() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut o = Optimizer::new(kind, 0.0, 100.0, 2);
            let mut p = [1.0, -2.0];
            o.apply(&mut p, &[0.5, 3.0]);
            assert_eq!(p, [1.0, -2.0]);
        }
    }

    #[test]
    fn both_minimize_a_quadratic() {
        for (kind, lr) in [(OptimizerKind::Sgd, 0.1), (OptimizerKind::Adam, 0.05)] {
            let mut o = Optimizer::new(kind, lr, 0.0, 1);
            let mut p = [3.0];
            for _ in 0..2000 {
                let g = [2.0 * (p[0] - 1.0)];
                o.apply(&mut p, &g);
            }
            assert!((p[0] - 1.0).abs() < 1e-6, "{kind:?} ended at {}", p[0]);
        }
    }
}
