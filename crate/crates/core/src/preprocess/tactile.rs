//! Tactile sequence conditioning. Sequences are `[3, 4, 4, T]` tensors: force
//! axis (x, y, z), taxel row, taxel column, time step.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const AXES: usize = 3;
pub const TAXELS: usize = 16;
pub const RAW_STEPS: usize = 900;
pub const STEPS: usize = 90;
pub const CALIBRATION_STEPS: usize = 50;
pub const DOWNSAMPLE: usize = 10;

/// Steps in a `[3, 4, 4, T]` sequence.
fn steps_of(seq: &Tensor) -> Result<usize> {
    match seq.shape() {
        [AXES, 4, 4, t] => Ok(*t),
        other => Err(Error::shape("tactile sequence", &[AXES, 4, 4, 0], other)),
    }
}

/// Subtracts, per taxel and axis, the mean of the first 50 steps.
pub fn calibrate(seq: &Tensor) -> Result<Tensor> {
    let t = steps_of(seq)?;
    if t < CALIBRATION_STEPS {
        return Err(Error::InvalidArgument(format!(
            "calibration needs {CALIBRATION_STEPS} steps, sequence has {t}"
        )));
    }
    let mut out = seq.clone();
    for channel in out.data_mut().chunks_exact_mut(t) {
        // `(n·x − Σ) / n` rounds once per value; for integer raw counts the
        // numerator is exact.
        let n = CALIBRATION_STEPS as f64;
        let total = compensated_sum(&channel[..CALIBRATION_STEPS]);
        channel.iter_mut().for_each(|v| *v = (n * *v - total) / n);
    }
    Ok(out)
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0_f64, 0.0);
    for &v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Block mean over runs of 10 steps.
pub fn downsample(seq: &Tensor) -> Result<Tensor> {
    let t = steps_of(seq)?;
    if t % DOWNSAMPLE != 0 {
        return Err(Error::InvalidArgument(format!(
            "sequence length {t} is not divisible by {DOWNSAMPLE}"
        )));
    }
    let data = seq
        .data()
        .chunks_exact(DOWNSAMPLE)
        .map(|b| b.iter().sum::<f64>() / DOWNSAMPLE as f64)
        .collect();
    Tensor::new(vec![AXES, 4, 4, t / DOWNSAMPLE], data)
}

/// Normalization followed by downsampling of a calibrated sequence.
pub fn condition(calibrated: &Tensor, stats: &NormStats) -> Result<Tensor> {
    downsample(&normalize_apply(calibrated, stats)?)
}

/// How the per-axis range is mapped onto [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// `[min, max]` of the training split maps to `[-1, 1]`.
    MinMax,
    /// `[-m, m]` maps to `[-1, 1]` with `m` the largest magnitude, so the
    /// calibrated rest level stays at 0.
    Symmetric,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(NormMode::MinMax),
            "symmetric" => Ok(NormMode::Symmetric),
            _ => Err(Error::InvalidArgument(format!("unknown normalization `{s}`"))),
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormMode::MinMax => "minmax",
            NormMode::Symmetric => "symmetric",
        })
    }
}

/// Per-axis affine range fitted on the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub lo: [f64; AXES],
    pub hi: [f64; AXES],
}

pub fn normalize_fit(train: &[Tensor], mode: NormMode) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::Data("cannot fit normalization on an empty split".into()));
    }
    let mut lo = [f64::INFINITY; AXES];
    let mut hi = [f64::NEG_INFINITY; AXES];
    for seq in train {
        steps_of(seq)?;
        let per_axis = seq.len() / AXES;
        for (a, chunk) in seq.data().chunks_exact(per_axis).enumerate() {
            for &v in chunk {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
    }
    if mode == NormMode::Symmetric {
        for a in 0..AXES {
            let m = lo[a].abs().max(hi[a].abs());
            (lo[a], hi[a]) = (-m, m);
        }
    }
    for a in 0..AXES {
        if hi[a] <= lo[a] {
            return Err(Error::Data(format!(
                "degenerate range on axis {a}: [{}, {}]",
                lo[a], hi[a]
            )));
        }
    }
    Ok(NormStats { lo, hi })
}

/// Maps each axis onto [-1, 1], clamping values outside the fitted range.
pub fn normalize_apply(seq: &Tensor, stats: &NormStats) -> Result<Tensor> {
    steps_of(seq)?;
    let mut out = seq.clone();
    let per_axis = seq.len() / AXES;
    for (a, chunk) in out.data_mut().chunks_exact_mut(per_axis).enumerate() {
        let (lo, hi) = (stats.lo[a], stats.hi[a]);
        for v in chunk {
            *v = (2.0 * (*v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0);
        }
    }
    Ok(out)
}
