use crate::autodiff::ParameterSet;
use crate::error::Result;

/// Adam with bias correction and a per-epoch exponential learning-rate decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: ParameterSet,
    v: ParameterSet,
    step: u64,
    pub base_lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(template: &ParameterSet, base_lr: f64, decay: f64) -> Self {
        Self {
            m: template.zeros_like(),
            v: template.zeros_like(),
            step: 0,
            base_lr,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// `1e-4` base rate decayed by `0.99` per epoch.
    pub fn with_defaults(template: &ParameterSet) -> Self {
        Self::new(template, 1e-4, 0.99)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay.powi(epoch as i32)
    }

    pub fn update(
        &mut self,
        params: &mut ParameterSet,
        grad: &ParameterSet,
        lr: f64,
    ) -> Result<()> {
        params.check_schema(grad)?;
        params.check_schema(&self.m)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in &names {
            let g = grad.get(name).expect("schema checked").data();
            let m = self.m.get_mut(name).expect("schema checked").data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(name).expect("schema checked").data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let m = self.m.get(name).expect("schema checked").data();
            let v = self.v.get(name).expect("schema checked").data();
            let p = params.get_mut(name).expect("schema checked").data_mut();
            for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn one(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * sign(g).
        let mut p = one(1.0);
        let mut adam = AdamState::new(&p, 0.1, 0.99);
        adam.update(&mut p, &one(3.0), 0.1).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 0.9).abs() < 1e-9);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = one(5.0);
        let mut adam = AdamState::new(&p, 0.1, 1.0);
        for _ in 0..500 {
            let w = p.get("w").unwrap().data()[0];
            adam.update(&mut p, &one(2.0 * (w - 1.5)), 0.1).unwrap();
        }
        assert!((p.get("w").unwrap().data()[0] - 1.5).abs() < 1e-2);
    }

    #[test]
    fn decay_schedule() {
        let adam = AdamState::with_defaults(&one(0.0));
        assert_eq!(adam.lr_for_epoch(0), 1e-4);
        assert!((adam.lr_for_epoch(2) - 1e-4 * 0.99 * 0.99).abs() < 1e-18);
    }
}
