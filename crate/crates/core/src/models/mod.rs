//! The visuo-tactile encoder-decoder, the classification baseline, and
//! training.

mod classifier;
mod train;
mod visuotactile;

pub use classifier::{build_classifier_net, ClassifierNet, CLASSES};
pub use train::{
    batches, evaluate, train, train_with, write_loss_csv, LossKind, TrainConfig, TrainHistory, Trainable,
};
pub use visuotactile::{build_visuotactile_net, VisuoTactileNet, LATENT};

use crate::error::Result;
use crate::graph::{Graph, Init, NodeId};
use crate::layers::spec::Conv2dSpec;
use crate::layers::Activation;
use crate::tensor::Tensor;

/// Edge-image side length.
pub const IMAGE: usize = crate::preprocess::CROP;

/// The four 2D convolution rows shared by both networks' image encoders.
pub fn image_encoder_specs() -> [Conv2dSpec; 4] {
    let row = |cin, k, act| Conv2dSpec {
        in_channels: cin,
        out_channels: 32,
        filter: (k, k),
        stride: (2, 2),
        padding: (0, 0),
        activation: act,
    };
    [
        row(1, 8, Activation::Relu),
        row(32, 8, Activation::Relu),
        row(32, 4, Activation::Relu),
        row(32, 4, Activation::Tanh),
    ]
}

/// Batch norm and activation after a layer, unless it is the last one.
fn finish(g: &mut Graph, name: &str, x: NodeId, act: Activation, last: bool) -> Result<NodeId> {
    let x = if last { x } else { g.batch_norm(&format!("{name}.bn"), x)? };
    g.activation(x, act)
}

/// Stacks per-sample tensors into one batch.
pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
    Tensor::stack(items)
}

fn init(act: Activation) -> Init {
    Init::for_activation(act)
}
