use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{finish, image_encoder_specs, init, Trainable, IMAGE};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, NodeId};
use crate::layers::spec::Conv3dSpec;
use crate::layers::Activation;
use crate::preprocess::SampleRecord;
use crate::tensor::Tensor;

/// Width of the latent layer.
pub const LATENT: usize = 4;
const HIDDEN: usize = 160;
/// Per-sample shape the 160 hidden units are folded into.
pub const SEED_SHAPE: [usize; 4] = [1, 4, 4, 10];
pub const OUTPUT_SHAPE: [usize; 4] = [3, 4, 4, 90];

/// Decoder rows: (in, out, filter, stride, padding, activation).
pub fn decoder_specs() -> [Conv3dSpec; 4] {
    let row = |cin, cout, k, s, p, act| Conv3dSpec {
        in_channels: cin,
        out_channels: cout,
        filter: k,
        stride: s,
        padding: p,
        activation: act,
    };
    [
        row(1, 32, (1, 1, 3), (1, 1, 1), (0, 0, 0), Activation::Relu),
        row(32, 32, (1, 1, 3), (1, 1, 2), (0, 0, 0), Activation::Relu),
        row(32, 32, (2, 2, 4), (1, 1, 2), (0, 0, 3), Activation::Relu),
        row(32, 3, (2, 2, 4), (1, 1, 2), (1, 1, 2), Activation::Tanh),
    ]
}

/// Image-to-tactile encoder-decoder.
#[derive(Clone, Debug)]
pub struct VisuoTactileNet {
    pub graph: Graph,
    pub image: NodeId,
    pub target: NodeId,
    /// Raw outputs of the four encoder convolutions.
    pub encoder: [NodeId; 4],
    /// Post-activation 4-unit layer.
    pub latent: NodeId,
    /// Post-activation 160-unit layer.
    pub hidden: NodeId,
    /// Raw outputs of the four decoder layers.
    pub decoder: [NodeId; 4],
    pub output: NodeId,
    pub loss: NodeId,
}

pub fn build_visuotactile_net(seed: u64) -> Result<VisuoTactileNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let image = g.input("image", &[1, IMAGE, IMAGE]);

    let mut x = image;
    let mut encoder = [0; 4];
    for (i, spec) in image_encoder_specs().iter().enumerate() {
        let name = format!("enc{}", i + 1);
        encoder[i] = g.conv2d(&name, x, spec, init(spec.activation), &mut rng)?;
        x = finish(&mut g, &name, encoder[i], spec.activation, false)?;
    }
    let flat = g.flatten("flatten", x)?;
    let z = g.linear("latent", flat, LATENT, init(Activation::Relu), &mut rng)?;
    let latent = finish(&mut g, "latent", z, Activation::Relu, false)?;
    let h = g.linear("hidden", latent, HIDDEN, init(Activation::Relu), &mut rng)?;
    let hidden = finish(&mut g, "hidden", h, Activation::Relu, false)?;
    let mut y = g.reshape("fold", hidden, &SEED_SHAPE)?;

    let specs = decoder_specs();
    let mut decoder = [0; 4];
    for (i, spec) in specs.iter().enumerate() {
        let name = format!("dec{}", i + 1);
        decoder[i] = g.deconv3d(&name, y, spec, init(spec.activation), &mut rng)?;
        y = finish(&mut g, &name, decoder[i], spec.activation, i == specs.len() - 1)?;
    }
    let output = y;
    let target = g.input("target", &OUTPUT_SHAPE);
    let loss = g.mse("loss", output, target)?;
    Ok(VisuoTactileNet {
        graph: g,
        image,
        target,
        encoder,
        latent,
        hidden,
        decoder,
        output,
        loss,
    })
}

fn image_batch(images: &[&Tensor]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images given".into()));
    }
    Tensor::stack(images)
}

impl VisuoTactileNet {
    /// Eval-mode forward returning the values of `node` for each image.
    fn eval(&self, images: &[&Tensor], node: NodeId) -> Result<Tensor> {
        let batch = image_batch(images)?;
        let mut acts = self.graph.forward(&[("image", &batch)], Mode::Eval, &[node])?;
        Ok(acts.take(node).expect("requested node"))
    }

    /// 4-unit latent activations, one row per image.
    pub fn infer_latents(&self, images: &[&Tensor]) -> Result<Vec<[f64; LATENT]>> {
        let z = self.eval(images, self.latent)?;
        Ok(z.data()
            .chunks_exact(LATENT)
            .map(|c| c.try_into().expect("latent width"))
            .collect())
    }

    pub fn infer_latent(&self, image: &Tensor) -> Result<[f64; LATENT]> {
        Ok(self.infer_latents(&[image])?[0])
    }

    /// Predicted normalized tactile sequences, each `[3, 4, 4, 90]`.
    pub fn predict_tactile(&self, images: &[&Tensor]) -> Result<Vec<Tensor>> {
        let y = self.eval(images, self.output)?;
        Ok((0..y.batch()).map(|i| y.unstack(i)).collect())
    }

    /// Shapes of the encoder, hidden and decoder stages, for reporting.
    pub fn shape_chain(&self) -> Vec<(String, Vec<usize>)> {
        let mut ids = self.encoder.to_vec();
        ids.extend([self.latent, self.hidden]);
        ids.extend(self.decoder);
        ids.iter()
            .map(|&id| {
                let n = self.graph.node(id);
                (n.name.clone(), n.shape.clone())
            })
            .collect()
    }
}

impl Trainable for VisuoTactileNet {
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
        let images: Vec<&Tensor> = records.iter().map(|r| &r.image).collect();
        let targets: Vec<&Tensor> = records.iter().map(|r| &r.tactile).collect();
        Ok(vec![
            ("image".into(), image_batch(&images)?),
            ("target".into(), Tensor::stack(&targets)?),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_shape_chain() {
        let net = build_visuotactile_net(1).unwrap();
        let shapes: Vec<Vec<usize>> = net.shape_chain().into_iter().map(|(_, s)| s).collect();
        assert_eq!(
            shapes,
            vec![
                vec![32, 97, 97],
                vec![32, 45, 45],
                vec![32, 21, 21],
                vec![32, 9, 9],
                vec![4],
                vec![160],
                vec![32, 4, 4, 12],
                vec![32, 4, 4, 25],
                vec![32, 5, 5, 46],
                vec![3, 4, 4, 90],
            ]
        );
        let flat = net.graph.node_id("flatten").unwrap();
        assert_eq!(net.graph.node(flat).shape, vec![2592]);
    }

    #[test]
    fn zero_image_gives_finite_output() {
        let mut net = build_visuotactile_net(2).unwrap();
        let zero = Tensor::zeros(&[1, 200, 200]);
        // Eval mode needs running statistics; take them from one train pass.
        let batch = Tensor::stack(&[&zero, &zero]).unwrap();
        let acts = net
            .graph
            .forward(&[("image", &batch)], Mode::Train, &[net.output])
            .unwrap();
        assert!(acts.value(net.output).all_finite());
        net.graph.commit_running_stats(&acts);
        let out = net.predict_tactile(&[&zero]).unwrap();
        assert_eq!(out[0].shape(), &OUTPUT_SHAPE);
        assert!(out[0].all_finite());
        assert!(out[0].data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let z = net.infer_latent(&zero).unwrap();
        assert_eq!(z, net.infer_latent(&zero).unwrap());
    }

    #[test]
    fn eval_without_statistics_fails() {
        let net = build_visuotactile_net(3).unwrap();
        assert!(net.infer_latent(&Tensor::zeros(&[1, 200, 200])).is_err());
    }
}
