//! Adam optimizer with bias-corrected first and second moments.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct Adam<S> {
    lr: S,
    beta1: S,
    beta2: S,
    epsilon: S,
    step: u32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, epsilon: f64, param_sizes: &[usize]) -> Self {
        Adam {
            lr: S::from_f64(lr),
            beta1: S::from_f64(beta1),
            beta2: S::from_f64(beta2),
            epsilon: S::from_f64(epsilon),
            step: 0,
            m: param_sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: param_sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
        }
    }

    /// One update. `params` and `grads` must match the sizes given at
    /// construction, in the same order.
    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Vec<S>]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let one = S::one();
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let data = param.data_mut();
            debug_assert_eq!(data.len(), grad.len());
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // With bias correction, step 1 moves each coordinate by
        // lr·g/(|g| + ε) ≈ lr·sign(g).
        let mut p = Tensor::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let mut opt = Adam::<f64>::new(0.1, 0.9, 0.999, 1e-8, &[3]);
        let grads = vec![vec![0.4f64, -0.2, 1.5]];
        opt.step(&mut [&mut p], &grads);
        let d = p.data();
        assert!((d[0] - (1.0 - 0.1)).abs() < 1e-6);
        assert!((d[1] - (-2.0 + 0.1)).abs() < 1e-6);
        assert!((d[2] - (0.5 - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let mut p = Tensor::new(vec![2], vec![3.0f32, -1.0]).unwrap();
        let mut opt = Adam::<f32>::new(1e-3, 0.9, 0.999, 1e-8, &[2]);
        for _ in 0..5 {
            opt.step(&mut [&mut p], &[vec![0.0, 0.0]]);
        }
        assert_eq!(p.data(), &[3.0, -1.0]);
    }

    #[test]
    fn converges_on_quadratic() {
        // minimize (x-3)^2: gradient 2(x-3)
        let mut p = Tensor::new(vec![1], vec![0.0f64]).unwrap();
        let mut opt = Adam::<f64>::new(0.05, 0.9, 0.999, 1e-8, &[1]);
        for _ in 0..2000 {
            let g = 2.0 * (p.data()[0] - 3.0);
            opt.step(&mut [&mut p], &[vec![g]]);
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-3, "x = {}", p.data()[0]);
    }
}
