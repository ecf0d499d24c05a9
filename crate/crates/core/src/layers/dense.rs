//! Fully connected layer: `y = x W^T + b` over a `[B, in]` batch.

use super::gemm::gemm;

pub fn forward(x: &[f64], batch: usize, weight: &[f64], bias: &[f64], inputs: usize) -> Vec<f64> {
    let outputs = bias.len();
    let mut y = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm(
        batch,
        inputs,
        outputs,
        x,
        (inputs as isize, 1),
        weight,
        (1, inputs as isize),
        1.0,
        &mut y,
    );
    y
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
pub fn backward(
    x: &[f64],
    batch: usize,
    weight: &[f64],
    inputs: usize,
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let outputs = grad_bias.len();
    for row in grad_out.chunks(outputs) {
        for (gb, g) in grad_bias.iter_mut().zip(row) {
            *gb += g;
        }
    }
    // dW[out, in] += dY^T[out, B] * x[B, in]
    gemm(
        outputs,
        batch,
        inputs,
        grad_out,
        (1, outputs as isize),
        x,
        (inputs as isize, 1),
        1.0,
        grad_weight,
    );
    need_input_grad.then(|| {
        let mut dx = vec![0.0; batch * inputs];
        gemm(
            batch,
            outputs,
            inputs,
            grad_out,
            (outputs as isize, 1),
            weight,
            (inputs as isize, 1),
            0.0,
            &mut dx,
        );
        dx
    })
}
