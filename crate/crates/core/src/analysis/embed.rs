use std::collections::BTreeMap;

use super::scores::PropertyScores;
use crate::error::{Error, Result};
use crate::models::{ClassifierNet, VisuoTactileNet, LATENT};
use crate::preprocess::{SampleRecord, StrokeSequence};

/// Mean latent vector of one material.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentEmbedding {
    pub material_id: usize,
    pub known: bool,
    pub z: [f64; LATENT],
    /// Number of records averaged.
    pub samples: usize,
}

/// Averages per-record latents by material. Records are summed in key order,
/// so the result does not depend on the order they are given in. `infer`
/// maps a chunk of records to one latent per record.
pub fn embed_with(
    records: &[&SampleRecord],
    known: impl Fn(usize) -> bool,
    chunk: usize,
    mut infer: impl FnMut(&[&SampleRecord]) -> Result<Vec<[f64; LATENT]>>,
) -> Result<Vec<LatentEmbedding>> {
    let mut groups: BTreeMap<usize, Vec<&SampleRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.material_id).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no records to embed".into()));
    }
    let mut out = Vec::with_capacity(groups.len());
    for (material_id, mut group) in groups {
        group.sort_by_key(|r| (r.stroke_id, r.augmentation_id));
        let mut sum = [0.0; LATENT];
        for part in group.chunks(chunk.max(1)) {
            for z in infer(part)? {
                for (s, v) in sum.iter_mut().zip(z) {
                    *s += v;
                }
            }
        }
        let n = group.len() as f64;
        out.push(LatentEmbedding {
            material_id,
            known: known(material_id),
            z: sum.map(|s| s / n),
            samples: group.len(),
        });
    }
    Ok(out)
}

/// Embeds every material of `known` and `unknown` with the encoder-decoder.
pub fn embed_materials(
    net: &VisuoTactileNet,
    known: &[SampleRecord],
    unknown: &[SampleRecord],
) -> Result<Vec<LatentEmbedding>> {
    let ids: Vec<usize> = known.iter().map(|r| r.material_id).collect();
    let all: Vec<&SampleRecord> = known.iter().chain(unknown).collect();
    embed_with(&all, |m| ids.contains(&m), 32, |part| {
        let images: Vec<_> = part.iter().map(|r| &r.image).collect();
        net.infer_latents(&images)
    })
}

/// Embeds materials with the classifier's 4-unit layer.
pub fn embed_classifier(
    net: &ClassifierNet,
    known: &[SampleRecord],
    unknown: &[SampleRecord],
) -> Result<Vec<LatentEmbedding>> {
    let all: Vec<&SampleRecord> = known.iter().chain(unknown).collect();
    embed_with(&all, |m| net.material_ids.contains(&m), 32, |part| net.infer_latents(part))
}

/// Mean property scores per material over its strokes.
pub fn material_scores(strokes: &[StrokeSequence]) -> BTreeMap<usize, PropertyScores> {
    let mut groups: BTreeMap<usize, Vec<(usize, PropertyScores)>> = BTreeMap::new();
    for s in strokes {
        groups
            .entry(s.material_id)
            .or_default()
            .push((s.stroke_id, PropertyScores::of(&s.tactile)));
    }
    groups
        .into_iter()
        .map(|(m, mut v)| {
            v.sort_by_key(|(id, _)| *id);
            let scores: Vec<PropertyScores> = v.into_iter().map(|(_, s)| s).collect();
            (m, PropertyScores::mean(&scores).expect("nonempty group"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn rec(m: usize, s: usize, a: usize, v: f64) -> SampleRecord {
        SampleRecord {
            material_id: m,
            stroke_id: s,
            augmentation_id: a,
            image: Tensor::filled(&[1], v),
            tactile: Tensor::zeros(&[1]),
        }
    }

    fn fake(part: &[&SampleRecord]) -> Result<Vec<[f64; LATENT]>> {
        Ok(part
            .iter()
            .map(|r| {
                let v = r.image.data()[0];
                [v, v * v, -v, 0.1 * v]
            })
            .collect())
    }

    #[test]
    fn single_sample_group_is_its_latent() {
        let r = rec(3, 0, 0, 0.7);
        let e = embed_with(&[&r], |_| true, 8, fake).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].z, fake(&[&r]).unwrap()[0]);
        assert!(e[0].known);
    }

    #[test]
    fn order_free_means() {
        let recs: Vec<SampleRecord> = (0..40)
            .map(|i| rec(i % 5, i / 5, i % 3, (i as f64 * 0.37).sin() * 1e3))
            .collect();
        let fwd: Vec<&SampleRecord> = recs.iter().collect();
        let mut rev = fwd.clone();
        rev.reverse();
        rev.swap(3, 17);
        let a = embed_with(&fwd, |m| m < 3, 3, fake).unwrap();
        let b = embed_with(&rev, |m| m < 3, 7, fake).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert_eq!(a.iter().filter(|e| e.known).count(), 3);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(embed_with(&[], |_| true, 4, fake).is_err());
    }
}
