//! Tactile property scores computed from normalized `[3, 4, 4, T]` sequences.

use std::ops::Range;

use crate::preprocess::tactile::{AXES, TAXELS};
use crate::tensor::Tensor;

/// Dead band for oscillation counting, in normalized units.
pub const HYSTERESIS: f64 = 0.05;

/// First downsampled step of the stroking phase.
pub const STROKE_START: usize = 10;

const X: usize = 0;
const Y: usize = 1;
const Z: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropertyScores {
    pub roughness: f64,
    pub hardness: f64,
    pub friction: f64,
    /// `roughness × hardness`.
    pub combined: f64,
}

/// Names of the scored properties, in the column order used for
/// correlation matrices.
pub const PROPERTIES: [&str; 3] = ["combined", "hardness", "friction"];

impl PropertyScores {
    pub fn of(seq: &Tensor) -> Self {
        let roughness = roughness_score(seq);
        let hardness = hardness_score(seq);
        Self {
            roughness,
            hardness,
            friction: friction_score(seq),
            combined: roughness * hardness,
        }
    }

    /// Value of `PROPERTIES[i]`.
    pub fn get(&self, i: usize) -> f64 {
        [self.combined, self.hardness, self.friction][i]
    }

    /// Field-wise mean; `combined` is the mean of the per-sequence products.
    pub fn mean(items: &[PropertyScores]) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |f: fn(&PropertyScores) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(Self {
            roughness: avg(|s| s.roughness),
            hardness: avg(|s| s.hardness),
            friction: avg(|s| s.friction),
            combined: avg(|s| s.combined),
        })
    }
}

fn steps(seq: &Tensor) -> usize {
    assert_eq!(seq.shape()[..3], [AXES, 4, 4], "expected a [3, 4, 4, T] sequence");
    seq.shape()[3]
}

fn channel(seq: &Tensor, axis: usize, taxel: usize) -> &[f64] {
    let t = steps(seq);
    &seq.data()[(axis * TAXELS + taxel) * t..][..t]
}

/// Oscillations of a mean-removed signal: crossings of the ±`band` dead
/// band in either direction, halved and rounded up. For a signal that starts
/// below the band this is the number of positive-going crossings; the
/// rounding makes the count independent of where in a cycle the signal
/// starts.
pub fn count_oscillations(signal: &[f64], band: f64) -> usize {
    if signal.is_empty() {
        return 0;
    }
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let mut high = signal[0] - mean > band;
    let mut transitions: usize = 0;
    for &v in signal {
        let v = v - mean;
        if (!high && v > band) || (high && v < -band) {
            high = !high;
            transitions += 1;
        }
    }
    transitions.div_ceil(2)
}

/// Median of the per-taxel z oscillation counts within `window`.
pub fn roughness_in(seq: &Tensor, window: Range<usize>) -> f64 {
    let mut counts: Vec<usize> = (0..TAXELS)
        .map(|k| {
            let z = channel(seq, Z, k);
            let w = window.start.min(z.len())..window.end.min(z.len());
            count_oscillations(&z[w], HYSTERESIS)
        })
        .collect();
    counts.sort_unstable();
    (counts[TAXELS / 2 - 1] + counts[TAXELS / 2]) as f64 / 2.0
}

/// Oscillation count over the stroking phase (from step 10 to the end).
pub fn roughness_score(seq: &Tensor) -> f64 {
    roughness_in(seq, STROKE_START..steps(seq))
}

fn peak_abs(seq: &Tensor, axis: usize) -> f64 {
    (0..TAXELS)
        .flat_map(|k| channel(seq, axis, k).iter())
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// Largest |z| over taxels and time.
pub fn hardness_score(seq: &Tensor) -> f64 {
    peak_abs(seq, Z)
}

/// Largest |y| over taxels and time.
pub fn friction_score(seq: &Tensor) -> f64 {
    peak_abs(seq, Y)
}

/// Largest |x|; not a scored property but useful for diagnostics.
pub fn lateral_peak(seq: &Tensor) -> f64 {
    peak_abs(seq, X)
}
