use crate::scalar::Scalar;

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(param_count: usize, lr: T) -> Self {
        Self {
            m: vec![T::zero(); param_count],
            v: vec![T::zero(); param_count],
            step: 0,
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(
            params.len(),
            self.m.len(),
            "parameter count changed under the optimizer"
        );
        assert_eq!(
            grads.len(),
            self.m.len(),
            "gradient count does not match parameters"
        );
        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_hand_values() {
        let mut s = AdamState::new(1, 0.01f64);
        let mut p = [0.0];
        s.step(&mut p, &[1.0]);
        assert!((s.m[0] - 0.1).abs() < 1e-15);
        assert!((s.v[0] - 0.001).abs() < 1e-15);
        // m_hat = v_hat = 1, update = -lr / (1 + eps)
        assert!((p[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((p[0] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(3, 0.01f64);
        let mut p = [1.0, -2.0, 3.0];
        for _ in 0..100 {
            s.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = AdamState::new(2, 0.05f64);
        let mut p = [4.0, -3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            s.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }
}
