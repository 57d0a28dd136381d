use crate::autodiff::ParameterVector;
use crate::scalar::Scalar;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    steps: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(num_params: usize, learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParameterVector<T>, grads: &ParameterVector<T>) {
        self.steps += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.steps);
        let c2 = one - self.beta2.powi(self.steps);
        for (((p, &g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grads.as_slice())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::autodiff::{ParamLayout, Partition};

    #[test]
    fn minimizes_a_quadratic() {
        let mut layout = ParamLayout::new();
        layout.add("x", 2, 1, Partition::Sub);
        let layout = Arc::new(layout);
        let mut p = ParameterVector::from_vec(layout.clone(), vec![3.0_f64, -2.0]).unwrap();
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = ParameterVector::from_vec(layout.clone(), p.as_slice().iter().map(|x| 2.0 * x).collect()).unwrap();
            opt.step(&mut p, &g);
        }
        assert!(p.norm() < 1e-3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut layout = ParamLayout::new();
        layout.add("x", 1, 1, Partition::Sub);
        let layout = Arc::new(layout);
        let mut p = ParameterVector::from_vec(layout.clone(), vec![1.0_f64]).unwrap();
        let g = ParameterVector::from_vec(layout, vec![0.3]).unwrap();
        let mut opt = Adam::new(1, 0.1);
        opt.step(&mut p, &g);
        assert!((p.as_slice()[0] - 0.9).abs() < 1e-6);
    }
}
