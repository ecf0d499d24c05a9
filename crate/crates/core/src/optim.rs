//! Adam optimizer.

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First and second moments, one entry per graph parameter (empty for
    /// non-trainable ones).
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed state with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(graph: &Graph, alpha: f64) -> Self {
        let zeros: Vec<Vec<f64>> = graph
            .params()
            .iter()
            .map(|p| if p.trainable { vec![0.0; p.value.len()] } else { Vec::new() })
            .collect();
        Self {
            step: 0,
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Bias-corrected Adam update on flat slices, given the step count after
    /// incrementing.
    fn update(&self, value: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]) {
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            value[i] -= self.alpha * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Applies one Adam step to every trainable parameter using its accumulated
/// gradient.
pub fn adam_step(graph: &mut Graph, state: &mut AdamState) -> Result<()> {
    if state.m.len() != graph.params().len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer state tracks {} parameters, graph has {}",
            state.m.len(),
            graph.params().len()
        )));
    }
    for (p, m) in graph.params().iter().zip(&state.m) {
        if p.trainable && m.len() != p.value.len() {
            return Err(Error::shape(&p.name, p.value.shape(), &[m.len()]));
        }
    }
    state.step += 1;
    let mut m = std::mem::take(&mut state.m);
    let mut v = std::mem::take(&mut state.v);
    for (i, p) in graph.params_mut().iter_mut().enumerate() {
        if p.trainable {
            let grad = p.grad.data().to_vec();
            state.update(p.value.data_mut(), &grad, &mut m[i], &mut v[i]);
        }
    }
    state.m = m;
    state.v = v;
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::{Init, Mode};
    use crate::tensor::Tensor;

    fn scalar(w: f64) -> Graph {
        let mut g = Graph::new();
        let x = g.input("x", &[1]);
        g.linear("w", x, 1, Init::Constant(w), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        g
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut g = scalar(0.7);
        let mut s = AdamState::new(&g, 1e-3);
        adam_step(&mut g, &mut s).unwrap();
        assert_eq!(s.step, 1);
        assert_eq!(g.param(0).value.data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_alpha() {
        for g0 in [3.0, -0.02, 1e-3] {
            let mut g = scalar(0.5);
            g.param_mut(0).grad.data_mut()[0] = g0;
            let mut s = AdamState::new(&g, 1e-3);
            adam_step(&mut g, &mut s).unwrap();
            let moved = 0.5 - g.param(0).value.data()[0];
            assert!((moved - 1e-3 * f64::signum(g0)).abs() < 1e-8, "{moved}");
        }
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut g = scalar(1.0);
        let mut s = AdamState::new(&g, 1e-3);
        let mut prev = 1.0_f64;
        for _ in 0..100 {
            g.zero_grad();
            let w = g.param(0).value.data()[0];
            g.param_mut(0).grad.data_mut()[0] = 2.0 * w;
            adam_step(&mut g, &mut s).unwrap();
            let now = g.param(0).value.data()[0].abs();
            assert!(now < prev);
            prev = now;
        }
        assert!(prev < 0.95);
    }

    #[test]
    fn rejects_foreign_state() {
        let mut g = scalar(1.0);
        let mut s = AdamState::new(&Graph::new(), 1e-3);
        assert!(adam_step(&mut g, &mut s).is_err());
    }

    #[test]
    fn trains_linear_regression() {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = g.input("x", &[2]);
        let y = g.linear("l", x, 1, Init::XavierUniform, &mut rng).unwrap();
        let t = g.input("t", &[1]);
        let loss = g.mse("loss", y, t).unwrap();
        let xs = Tensor::new(vec![4, 2], vec![0., 0., 1., 0., 0., 1., 1., 1.]).unwrap();
        let ts = Tensor::new(vec![4, 1], vec![0.5, 2.5, -0.5, 1.5]).unwrap();
        let mut s = AdamState::new(&g, 0.05);
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            g.zero_grad();
            let acts = g.forward(&[("x", &xs), ("t", &ts)], Mode::Train, &[loss]).unwrap();
            last = acts.scalar(loss);
            g.backward(&acts, loss).unwrap();
            adam_step(&mut g, &mut s).unwrap();
        }
        assert!(last < 1e-8, "{last}");
    }
}
