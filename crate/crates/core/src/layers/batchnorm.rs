//! Per-channel batch normalization. Channels are axis 1 of a batched tensor;
//! statistics reduce over the batch and every trailing axis.

/// Variance floor added before the square root.
pub const EPSILON: f64 = 1e-8;

/// Weight kept on the old running statistic at each update.
pub const MOMENTUM: f64 = 0.9;

/// Layout of a `[B, C, rest...]` tensor as seen by batch norm.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub batch: usize,
    pub channels: usize,
    pub inner: usize,
}

impl Layout {
    pub fn from_shape(shape: &[usize]) -> Self {
        Self {
            batch: shape[0],
            channels: shape.get(1).copied().unwrap_or(1),
            inner: shape.iter().skip(2).product(),
        }
    }

    fn count(&self) -> usize {
        self.batch * self.inner
    }

    fn for_channel(&self, c: usize, mut f: impl FnMut(usize)) {
        for b in 0..self.batch {
            let start = (b * self.channels + c) * self.inner;
            for i in start..start + self.inner {
                f(i);
            }
        }
    }
}

/// Result of a train-mode pass: output plus what backward and the running
/// statistics update need.
pub struct TrainPass {
    pub output: Vec<f64>,
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Unbiased batch variance, used for the running estimate.
    pub batch_var: Vec<f64>,
}

pub fn forward_train(x: &[f64], layout: Layout, gamma: &[f64], beta: &[f64]) -> TrainPass {
    let n = layout.count() as f64;
    let mut normalized = vec![0.0; x.len()];
    let mut output = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; layout.channels];
    let mut batch_mean = vec![0.0; layout.channels];
    let mut batch_var = vec![0.0; layout.channels];
    for c in 0..layout.channels {
        let mut sum = 0.0;
        layout.for_channel(c, |i| sum += x[i]);
        let mean = sum / n;
        let mut sq = 0.0;
        layout.for_channel(c, |i| sq += (x[i] - mean) * (x[i] - mean));
        let var = sq / n;
        let istd = 1.0 / (var + EPSILON).sqrt();
        layout.for_channel(c, |i| {
            let xh = (x[i] - mean) * istd;
            normalized[i] = xh;
            output[i] = gamma[c] * xh + beta[c];
        });
        inv_std[c] = istd;
        batch_mean[c] = mean;
        batch_var[c] = if n > 1.0 { sq / (n - 1.0) } else { 0.0 };
    }
    TrainPass {
        output,
        normalized,
        inv_std,
        batch_mean,
        batch_var,
    }
}

/// Eval-mode output using running statistics; also returns `1/sqrt(var+eps)`.
pub fn forward_eval(
    x: &[f64],
    layout: Layout,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; x.len()];
    let inv_std: Vec<f64> = running_var
        .iter()
        .map(|v| 1.0 / (v + EPSILON).sqrt())
        .collect();
    for c in 0..layout.channels {
        layout.for_channel(c, |i| {
            out[i] = gamma[c] * (x[i] - running_mean[c]) * inv_std[c] + beta[c];
        });
    }
    (out, inv_std)
}

/// `running = MOMENTUM * running + (1 - MOMENTUM) * batch`.
pub fn update_running(running: &mut [f64], batch: &[f64]) {
    for (r, b) in running.iter_mut().zip(batch) {
        *r = MOMENTUM * *r + (1.0 - MOMENTUM) * b;
    }
}

/// Backward through train mode. Accumulates into `grad_gamma`/`grad_beta`
/// and returns the input gradient.
pub fn backward_train(
    grad_out: &[f64],
    layout: Layout,
    gamma: &[f64],
    normalized: &[f64],
    inv_std: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Vec<f64> {
    let n = layout.count() as f64;
    let mut grad_in = vec![0.0; grad_out.len()];
    for c in 0..layout.channels {
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        layout.for_channel(c, |i| {
            sum_g += grad_out[i];
            sum_gx += grad_out[i] * normalized[i];
        });
        grad_gamma[c] += sum_gx;
        grad_beta[c] += sum_g;
        let scale = gamma[c] * inv_std[c] / n;
        layout.for_channel(c, |i| {
            grad_in[i] = scale * (n * grad_out[i] - sum_g - normalized[i] * sum_gx);
        });
    }
    grad_in
}

/// Backward through eval mode, where the statistics are constants.
#[allow(clippy::too_many_arguments)]
pub fn backward_eval(
    grad_out: &[f64],
    x: &[f64],
    layout: Layout,
    gamma: &[f64],
    running_mean: &[f64],
    inv_std: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Vec<f64> {
    let mut grad_in = vec![0.0; grad_out.len()];
    for c in 0..layout.channels {
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        layout.for_channel(c, |i| {
            sum_g += grad_out[i];
            sum_gx += grad_out[i] * (x[i] - running_mean[c]) * inv_std[c];
            grad_in[i] = grad_out[i] * gamma[c] * inv_std[c];
        });
        grad_gamma[c] += sum_gx;
        grad_beta[c] += sum_g;
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_output_is_standardized_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layout = Layout::from_shape(&[6, 3, 5]);
        let x: Vec<f64> = (0..90).map(|i| rng.random_range(-2.0..2.0) + (i % 3) as f64).collect();
        let pass = forward_train(&x, layout, &[1.0; 3], &[0.0; 3]);
        for c in 0..3 {
            let mut vals = Vec::new();
            layout.for_channel(c, |i| vals.push(pass.output[i]));
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn standardized_input_passes_through() {
        let x = vec![-1.0, 1.0, -1.0, 1.0];
        let pass = forward_train(&x, Layout::from_shape(&[4, 1]), &[1.0], &[0.0]);
        for (a, b) in pass.output.iter().zip(&x) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn eval_is_stateless() {
        let x = vec![0.5, -0.25, 2.0, 1.0];
        let layout = Layout::from_shape(&[2, 2]);
        let a = forward_eval(&x, layout, &[2.0, 1.0], &[0.1, 0.0], &[0.3, -0.1], &[1.5, 0.5]);
        let b = forward_eval(&x, layout, &[2.0, 1.0], &[0.1, 0.0], &[0.3, -0.1], &[1.5, 0.5]);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn running_update_uses_momentum() {
        let mut r = vec![1.0];
        update_running(&mut r, &[0.0]);
        assert!((r[0] - 0.9).abs() < 1e-15);
    }
}
