use std::collections::BTreeMap;
use std::fmt;

use super::embed::LatentEmbedding;
use super::scores::{PropertyScores, PROPERTIES};
use crate::error::{Error, Result};
use crate::models::LATENT;

/// Minimum number of materials for a correlation matrix.
pub const MIN_MATERIALS: usize = 5;

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation; `None` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    if x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Spearman ρ of each latent coordinate (rows) against each property in
/// [`PROPERTIES`] (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub rho: [[Option<f64>; 3]; LATENT],
    pub materials: usize,
}

impl CorrelationMatrix {
    /// Largest |ρ| over coordinates for property column `p`.
    pub fn best(&self, p: usize) -> Option<(usize, f64)> {
        (0..LATENT)
            .filter_map(|i| self.rho[i][p].map(|r| (i, r.abs())))
            .fold(None, |best, (i, r)| match best {
                Some((_, b)) if b >= r => best,
                _ => Some((i, r)),
            })
    }

    /// Largest |ρ| anywhere in the matrix.
    pub fn max_abs(&self) -> Option<f64> {
        (0..PROPERTIES.len()).filter_map(|p| self.best(p).map(|(_, r)| r)).reduce(f64::max)
    }
}

impl fmt::Display for CorrelationMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>4}", "")?;
        for p in PROPERTIES {
            write!(f, " {p:>9}")?;
        }
        writeln!(f)?;
        for (i, row) in self.rho.iter().enumerate() {
            write!(f, "z{:<3}", i + 1)?;
            for r in row {
                match r {
                    Some(r) => write!(f, " {r:>9.4}")?,
                    None => write!(f, " {:>9}", "undefined")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Correlates each embedding with the scores of its material.
pub fn latent_property_correlation(
    embeddings: &[LatentEmbedding],
    scores: &BTreeMap<usize, PropertyScores>,
) -> Result<CorrelationMatrix> {
    if embeddings.len() < MIN_MATERIALS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_MATERIALS} materials, got {}",
            embeddings.len()
        )));
    }
    let props = embeddings
        .iter()
        .map(|e| {
            scores.get(&e.material_id).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("no scores for material {}", e.material_id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rho = [[None; 3]; LATENT];
    for (i, row) in rho.iter_mut().enumerate() {
        let z: Vec<f64> = embeddings.iter().map(|e| e.z[i]).collect();
        for (p, cell) in row.iter_mut().enumerate() {
            let s: Vec<f64> = props.iter().map(|s| s.get(p)).collect();
            *cell = spearman(&z, &s);
        }
    }
    Ok(CorrelationMatrix {
        rho,
        materials: embeddings.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn monotone_maps_give_unit_rho() {
        let x: Vec<f64> = (0..25).map(|i| (i as f64 * 1.3).sin()).collect();
        let up: Vec<f64> = x.iter().map(|v| v.exp() * 3.0).collect();
        let down: Vec<f64> = x.iter().map(|v| -v.powi(3)).collect();
        assert!((spearman(&x, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_undefined() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0; 3]), None);
    }

    #[test]
    fn duplicating_pairs_keeps_rho() {
        let x = [0.3, 1.2, -0.4, 2.2, 0.9, 0.1];
        let y = [1.0, 0.5, -2.0, 3.0, 0.7, 0.8];
        let x2: Vec<f64> = x.iter().chain(&x).copied().collect();
        let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
        let a = spearman(&x, &y).unwrap();
        let b = spearman(&x2, &y2).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} {b}");
    }

    #[test]
    fn independent_scores_rarely_correlate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 2000;
        let mut below = 0;
        for _ in 0..trials {
            let x: Vec<f64> = (0..25).map(|_| rng.random()).collect();
            let y: Vec<f64> = (0..25).map(|_| rng.random()).collect();
            if spearman(&x, &y).unwrap().abs() < 0.5 {
                below += 1;
            }
        }
        assert!(below as f64 >= 0.95 * trials as f64, "{below}");
    }

    #[test]
    fn matrix_from_embeddings() {
        let mut scores = BTreeMap::new();
        let mut embs = Vec::new();
        for m in 0..6 {
            let v = m as f64;
            scores.insert(
                m,
                PropertyScores {
                    roughness: v,
                    hardness: 0.5,
                    friction: 1.0 / (1.0 + v),
                    combined: v * 0.5,
                },
            );
            embs.push(LatentEmbedding {
                material_id: m,
                known: m < 4,
                z: [v, -v, (v * 2.0).sin(), 0.0],
                samples: 1,
            });
        }
        let c = latent_property_correlation(&embs, &scores).unwrap();
        assert_eq!(c.rho[0][0], Some(1.0));
        assert_eq!(c.rho[1][0], Some(-1.0));
        assert_eq!(c.rho[0][2], Some(-1.0));
        assert_eq!(c.rho[0][1], None);
        assert_eq!(c.rho[3][0], None);
        assert_eq!(c.best(0), Some((0, 1.0)));
        assert!(c.to_string().contains("undefined"));
        assert!(latent_property_correlation(&embs[..4], &scores).is_err());
    }
}
