use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{finish, image_encoder_specs, init, Trainable, IMAGE};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, NodeId};
use crate::layers::spec::Conv3dSpec;
use crate::layers::Activation;
use crate::preprocess::SampleRecord;
use crate::tensor::Tensor;

/// Number of material classes.
pub const CLASSES: usize = 15;
const BRANCH: usize = 10;
const HIDDEN: usize = 4;
const TACTILE_SHAPE: [usize; 4] = [3, 4, 4, 90];

/// Tactile-branch 3D convolutions.
pub fn tactile_encoder_specs() -> [Conv3dSpec; 4] {
    let row = |cin, cout, k, s, act| Conv3dSpec {
        in_channels: cin,
        out_channels: cout,
        filter: k,
        stride: s,
        padding: (0, 0, 0),
        activation: act,
    };
    [
        row(3, 32, (2, 2, 4), (1, 1, 2), Activation::Relu),
        row(32, 32, (2, 2, 4), (1, 1, 2), Activation::Relu),
        row(32, 32, (1, 1, 3), (1, 1, 2), Activation::Relu),
        row(32, 31, (1, 1, 3), (1, 1, 1), Activation::Tanh),
    ]
}

/// Two-branch material classifier.
#[derive(Clone, Debug)]
pub struct ClassifierNet {
    pub graph: Graph,
    pub image: NodeId,
    pub tactile: NodeId,
    pub labels: NodeId,
    /// Raw outputs of the four tactile convolutions.
    pub tactile_encoder: [NodeId; 4],
    pub concat: NodeId,
    /// Post-activation output of the second 4-unit layer.
    pub latent: NodeId,
    pub logits: NodeId,
    pub probabilities: NodeId,
    pub loss: NodeId,
    /// Material id of each class index, ascending.
    pub material_ids: Vec<usize>,
}

pub fn build_classifier_net(seed: u64) -> Result<ClassifierNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();

    let image = g.input("image", &[1, IMAGE, IMAGE]);
    let mut x = image;
    for (i, spec) in image_encoder_specs().iter().enumerate() {
        let name = format!("img{}", i + 1);
        let y = g.conv2d(&name, x, spec, init(spec.activation), &mut rng)?;
        x = finish(&mut g, &name, y, spec.activation, false)?;
    }
    let flat = g.flatten("img.flatten", x)?;
    let y = g.linear("img.proj", flat, BRANCH, init(Activation::Tanh), &mut rng)?;
    let image_feat = finish(&mut g, "img.proj", y, Activation::Tanh, false)?;

    let tactile = g.input("tactile", &TACTILE_SHAPE);
    let mut t = tactile;
    let mut tactile_encoder = [0; 4];
    for (i, spec) in tactile_encoder_specs().iter().enumerate() {
        let name = format!("tac{}", i + 1);
        tactile_encoder[i] = g.conv3d(&name, t, spec, init(spec.activation), &mut rng)?;
        t = finish(&mut g, &name, tactile_encoder[i], spec.activation, false)?;
    }
    let flat = g.flatten("tac.flatten", t)?;
    let y = g.linear("tac.proj", flat, BRANCH, init(Activation::Tanh), &mut rng)?;
    let tactile_feat = finish(&mut g, "tac.proj", y, Activation::Tanh, false)?;

    let concat = g.concat("concat", &[image_feat, tactile_feat])?;
    let y = g.linear("fc1", concat, HIDDEN, init(Activation::Tanh), &mut rng)?;
    let h = finish(&mut g, "fc1", y, Activation::Tanh, false)?;
    let y = g.linear("latent", h, HIDDEN, init(Activation::Tanh), &mut rng)?;
    let latent = finish(&mut g, "latent", y, Activation::Tanh, false)?;
    let logits = g.linear("logits", latent, CLASSES, init(Activation::Identity), &mut rng)?;
    let probabilities = g.softmax("probabilities", logits)?;
    let labels = g.input("labels", &[]);
    let loss = g.softmax_cross_entropy("loss", logits, labels)?;

    Ok(ClassifierNet {
        graph: g,
        image,
        tactile,
        labels,
        tactile_encoder,
        concat,
        latent,
        logits,
        probabilities,
        loss,
        material_ids: (0..CLASSES).collect(),
    })
}

impl ClassifierNet {
    /// Assigns class indices to `ids` in ascending order.
    pub fn set_material_ids(&mut self, ids: &[usize]) -> Result<()> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != CLASSES {
            return Err(Error::InvalidArgument(format!(
                "classifier needs {CLASSES} distinct materials, got {}",
                ids.len()
            )));
        }
        self.material_ids = ids;
        Ok(())
    }

    pub fn label_of(&self, material_id: usize) -> Result<usize> {
        self.material_ids
            .binary_search(&material_id)
            .map_err(|_| Error::InvalidArgument(format!("material {material_id} is not a known class")))
    }

    fn inputs(records: &[&SampleRecord]) -> Result<(Tensor, Tensor)> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("no samples given".into()));
        }
        let images: Vec<&Tensor> = records.iter().map(|r| &r.image).collect();
        let tactile: Vec<&Tensor> = records.iter().map(|r| &r.tactile).collect();
        Ok((Tensor::stack(&images)?, Tensor::stack(&tactile)?))
    }

    fn eval(&self, records: &[&SampleRecord], node: NodeId) -> Result<Tensor> {
        let (images, tactile) = Self::inputs(records)?;
        let mut acts = self.graph.forward(
            &[("image", &images), ("tactile", &tactile)],
            Mode::Eval,
            &[node],
        )?;
        Ok(acts.take(node).expect("requested node"))
    }

    /// Class probabilities, one row of [`CLASSES`] per record.
    pub fn predict_proba(&self, records: &[&SampleRecord]) -> Result<Vec<Vec<f64>>> {
        let p = self.eval(records, self.probabilities)?;
        Ok(p.data().chunks_exact(CLASSES).map(<[f64]>::to_vec).collect())
    }

    /// Predicted material id per record.
    pub fn predict(&self, records: &[&SampleRecord]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(records)?
            .iter()
            .map(|p| {
                let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                self.material_ids[best]
            })
            .collect())
    }

    /// Fraction of records whose predicted material matches, evaluated in
    /// chunks of `chunk`.
    pub fn accuracy(&self, records: &[&SampleRecord], chunk: usize) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("no samples given".into()));
        }
        let mut hits = 0;
        for part in records.chunks(chunk.max(1)) {
            let pred = self.predict(part)?;
            hits += pred.iter().zip(part).filter(|(p, r)| **p == r.material_id).count();
        }
        Ok(hits as f64 / records.len() as f64)
    }

    /// 4-unit latent activations, one per record.
    pub fn infer_latents(&self, records: &[&SampleRecord]) -> Result<Vec<[f64; HIDDEN]>> {
        let z = self.eval(records, self.latent)?;
        Ok(z.data()
            .chunks_exact(HIDDEN)
            .map(|c| c.try_into().expect("latent width"))
            .collect())
    }
}

impl Trainable for ClassifierNet {
    fn graph(&self) -> &Graph {
        &self.graph
    }

    fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    fn loss(&self) -> NodeId {
        self.loss
    }

    fn feed(&self, records: &[&SampleRecord]) -> Result<Vec<(String, Tensor)>> {
        let (images, tactile) = Self::inputs(records)?;
        let labels = records
            .iter()
            .map(|r| self.label_of(r.material_id).map(|l| l as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(vec![
            ("image".into(), images),
            ("tactile".into(), tactile),
            ("labels".into(), Tensor::new(vec![labels.len()], labels)?),
        ])
    }
}
