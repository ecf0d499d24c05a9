//! Central-difference gradient checking.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Init, Mode, NodeId, ParamId};
use crate::layers::spec::{Conv2dSpec, Conv3dSpec};
use crate::layers::Activation;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Inputs fed to every forward pass of a check.
pub type Feed<'a> = [(&'a str, &'a Tensor)];

fn loss_at(graph: &Graph, feed: &Feed, loss: NodeId, mode: Mode) -> Result<f64> {
    let acts = graph.forward(feed, mode, &[loss])?;
    let v = acts.value(loss);
    if v.len() != 1 {
        return Err(Error::NonScalarLoss(loss));
    }
    Ok(v.data()[0])
}

/// Central difference of the loss with respect to one parameter entry. The
/// parameter is restored bitwise afterwards.
pub fn finite_difference_entry(
    graph: &mut Graph,
    feed: &Feed,
    loss: NodeId,
    param: ParamId,
    index: usize,
    eps: f64,
    mode: Mode,
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let original = graph.param(param).value.data()[index];
    graph.param_mut(param).value.data_mut()[index] = original + eps;
    let plus = loss_at(graph, feed, loss, mode);
    graph.param_mut(param).value.data_mut()[index] = original - eps;
    let minus = loss_at(graph, feed, loss, mode);
    graph.param_mut(param).value.data_mut()[index] = original;
    Ok((plus? - minus?) / (2.0 * eps))
}

/// Central-difference gradient of the loss for every entry of `param`.
pub fn finite_difference_grad(
    graph: &mut Graph,
    feed: &Feed,
    loss: NodeId,
    param: ParamId,
    eps: f64,
    mode: Mode,
) -> Result<Tensor> {
    let shape = graph.param(param).value.shape().to_vec();
    let mut out = Vec::with_capacity(graph.param(param).value.len());
    for i in 0..graph.param(param).value.len() {
        out.push(finite_difference_entry(graph, feed, loss, param, i, eps, mode)?);
    }
    Tensor::new(shape, out)
}

/// Relative error as used throughout the checks.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub kind: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Compares backward against central differences on `samples` trainable
/// entries drawn without replacement (all of them if there are fewer).
pub fn check_graph(
    kind: &str,
    graph: &mut Graph,
    feed: &Feed,
    loss: NodeId,
    samples: usize,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<CheckReport> {
    let mode = Mode::Train;
    graph.zero_grad();
    let acts = graph.forward(feed, mode, &[loss])?;
    graph.backward(&acts, loss)?;

    let entries: Vec<(ParamId, usize)> = graph
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(id, p)| (0..p.value.len()).map(move |i| (id, i)))
        .collect();
    let picked: Vec<usize> = if entries.len() <= samples {
        (0..entries.len()).collect()
    } else {
        let mut v = index::sample(rng, entries.len(), samples).into_vec();
        v.sort_unstable();
        v
    };

    let mut worst: f64 = 0.0;
    for &k in &picked {
        let (pid, i) = entries[k];
        let analytic = graph.param(pid).grad.data()[i];
        let numeric = finite_difference_entry(graph, feed, loss, pid, i, eps, mode)?;
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(CheckReport {
        kind: kind.to_string(),
        entries: picked.len(),
        max_rel_error: worst,
    })
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn conv2d(cin: usize, cout: usize, k: (usize, usize), s: (usize, usize), p: (usize, usize)) -> Conv2dSpec {
    Conv2dSpec {
        in_channels: cin,
        out_channels: cout,
        filter: k,
        stride: s,
        padding: p,
        activation: Activation::Identity,
    }
}

type Shape3 = (usize, usize, usize);

fn conv3d(cin: usize, cout: usize, k: Shape3, s: Shape3, p: Shape3) -> Conv3dSpec {
    Conv3dSpec {
        in_channels: cin,
        out_channels: cout,
        filter: k,
        stride: s,
        padding: p,
        activation: Activation::Identity,
    }
}

/// A small graph exercising one layer kind, with the inputs to feed it.
struct Case {
    graph: Graph,
    loss: NodeId,
    feed: Vec<(String, Tensor)>,
}

fn mse_head(g: &mut Graph, pred: NodeId, batch: usize, rng: &mut impl Rng) -> Result<(NodeId, Tensor)> {
    let shape = g.node(pred).shape.clone();
    let target = g.input("target", &shape);
    let mut full = vec![batch];
    full.extend_from_slice(&shape);
    Ok((g.mse("loss", pred, target)?, random(&full, rng)))
}

fn build_case(kind: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let mut g = Graph::new();
    let xavier = Init::XavierUniform;
    let batch = 3;
    let (out, x_shape) = match kind {
        // The second layer takes the many-channel code path; the first layer's
        // gradients depend on its input gradient.
        "conv2d" => {
            let x = g.input("x", &[2, 7, 9]);
            let a = g.conv2d("a", x, &conv2d(2, 9, (3, 3), (2, 1), (1, 1)), xavier, rng)?;
            let b = g.conv2d("b", a, &conv2d(9, 3, (2, 3), (1, 2), (0, 1)), xavier, rng)?;
            (b, vec![2, 7, 9])
        }
        "deconv3d" => {
            let x = g.input("x", &[2, 2, 3, 4]);
            let a = g.deconv3d("a", x, &conv3d(2, 3, (2, 2, 3), (1, 1, 2), (0, 0, 1)), xavier, rng)?;
            let b = g.deconv3d("b", a, &conv3d(3, 2, (1, 2, 4), (1, 1, 2), (0, 1, 2)), xavier, rng)?;
            (b, vec![2, 2, 3, 4])
        }
        "batchnorm" => {
            let x = g.input("x", &[3, 4, 5]);
            let a = g.conv2d("a", x, &conv2d(3, 5, (3, 3), (1, 1), (1, 1)), xavier, rng)?;
            let bn = g.batch_norm("bn", a)?;
            // Non-unit gamma/beta so their gradients are exercised.
            for name in ["bn.gamma", "bn.beta"] {
                let id = g.param_id(name).expect("batch-norm parameter");
                let p = g.param_mut(id);
                for v in p.value.data_mut() {
                    *v += rng.random_range(-0.5..0.5);
                }
            }
            let t = g.tanh(bn)?;
            (t, vec![3, 4, 5])
        }
        "linear" => {
            let x = g.input("x", &[12]);
            let a = g.linear("a", x, 8, xavier, rng)?;
            let b = g.linear("b", a, 5, xavier, rng)?;
            (b, vec![12])
        }
        "relu" | "tanh" => {
            let act: Activation = kind.parse()?;
            let x = g.input("x", &[10]);
            let a = g.linear("a", x, 12, Init::for_activation(act), rng)?;
            let h = g.activation(a, act)?;
            let b = g.linear("b", h, 4, xavier, rng)?;
            (b, vec![10])
        }
        "mse" => {
            let x = g.input("x", &[10]);
            let a = g.linear("a", x, 10, xavier, rng)?;
            (a, vec![10])
        }
        "softmax_ce" => {
            let classes = 15;
            let x = g.input("x", &[10]);
            let labels = g.input("labels", &[]);
            let a = g.linear("a", x, classes, xavier, rng)?;
            let loss = g.softmax_cross_entropy("loss", a, labels)?;
            let feed = vec![
                ("x".to_string(), random(&[batch, 10], rng)),
                (
                    "labels".to_string(),
                    Tensor::from_fn(&[batch], |_| rng.random_range(0..classes) as f64),
                ),
            ];
            return Ok(Case { graph: g, loss, feed });
        }
        other => return Err(Error::InvalidArgument(format!("unknown layer kind `{other}`"))),
    };
    let (loss, target) = mse_head(&mut g, out, batch, rng)?;
    let mut x_full = vec![batch];
    x_full.extend_from_slice(&x_shape);
    let feed = vec![("x".to_string(), random(&x_full, rng)), ("target".to_string(), target)];
    Ok(Case { graph: g, loss, feed })
}

/// Layer kinds covered by [`layer_suite`].
pub const LAYER_KINDS: [&str; 8] = [
    "conv2d",
    "deconv3d",
    "batchnorm",
    "linear",
    "relu",
    "tanh",
    "mse",
    "softmax_ce",
];

/// Minimum number of entries checked per layer kind.
pub const SAMPLES_PER_LAYER: usize = 150;

/// Runs the gradient check for one layer kind.
pub fn check_layer(kind: &str, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut case = build_case(kind, &mut rng)?;
    let feed: Vec<(&str, &Tensor)> = case.feed.iter().map(|(n, t)| (n.as_str(), t)).collect();
    check_graph(
        kind,
        &mut case.graph,
        &feed,
        case.loss,
        SAMPLES_PER_LAYER,
        DEFAULT_EPS,
        &mut rng,
    )
}

/// Runs [`check_layer`] for every kind in [`LAYER_KINDS`].
pub fn layer_suite(seed: u64) -> Result<Vec<CheckReport>> {
    LAYER_KINDS
        .iter()
        .enumerate()
        .map(|(i, kind)| check_layer(kind, seed.wrapping_mul(31).wrapping_add(i as u64)))
        .collect()
}

/// Entries checked on the assembled encoder-decoder.
pub const NETWORK_SAMPLES: usize = 20;

/// Gradient check of the full encoder-decoder on a batch of 3 random
/// images and targets.
pub fn check_network(seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = crate::models::build_visuotactile_net(rng.random())?;
    let images = Tensor::from_fn(&[3, 1, 200, 200], |_| rng.random_range(0.0..1.0));
    let target = random(&[3, 3, 4, 4, 90], &mut rng);
    let feed = [("image", &images), ("target", &target)];
    check_graph(
        "network",
        &mut net.graph,
        &feed,
        net.loss,
        NETWORK_SAMPLES,
        DEFAULT_EPS,
        &mut rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Single-weight graph `x -> linear(1 -> 1)`, with `x = 1` and bias 0.
    fn scalar_graph(w: f64) -> (Graph, NodeId, ParamId, Tensor) {
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = g.input("x", &[1]);
        let lin = g.linear("w", x, 1, Init::Constant(w), &mut rng).unwrap();
        let pid = g.param_id("w.weight").unwrap();
        (g, lin, pid, Tensor::filled(&[1, 1], 1.0))
    }

    #[test]
    fn squared_weight_gradient() {
        let (mut g, lin, pid, x) = scalar_graph(1.0);
        let target = g.input("y", &[1]);
        let loss = g.mse("loss", lin, target).unwrap();
        let y = Tensor::zeros(&[1, 1]);
        let feed = [("x", &x), ("y", &y)];
        let acts = g.forward(&feed, Mode::Train, &[loss]).unwrap();
        g.backward(&acts, loss).unwrap();
        assert_eq!(g.param(pid).grad.data()[0], 2.0);

        g.param_mut(pid).value.data_mut()[0] = 3.0;
        let fd = finite_difference_grad(&mut g, &feed, loss, pid, 1e-5, Mode::Train).unwrap();
        assert!((fd.data()[0] - 6.0).abs() < 1e-6, "{}", fd.data()[0]);
        assert_eq!(g.param(pid).value.data()[0], 3.0);
    }

    #[test]
    fn tanh_slope_at_origin() {
        let (mut g, lin, pid, x) = scalar_graph(0.0);
        let t = g.tanh(lin).unwrap();
        let feed = [("x", &x)];
        let fd = finite_difference_grad(&mut g, &feed, t, pid, 1e-5, Mode::Train).unwrap();
        assert!((fd.data()[0] - 1.0).abs() < 1e-8);
        let acts = g.forward(&feed, Mode::Train, &[t]).unwrap();
        g.backward(&acts, t).unwrap();
        assert_eq!(g.param(pid).grad.data()[0], 1.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut case = build_case("batchnorm", &mut rng).unwrap();
        let feed: Vec<(&str, &Tensor)> = case.feed.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let acts = case.graph.forward(&feed, Mode::Train, &[case.loss]).unwrap();
        case.graph.backward_with_seed(&acts, case.loss, 0.0).unwrap();
        assert!(case.graph.params().iter().all(|p| p.grad.max_abs() == 0.0));
    }

    #[test]
    fn rejects_non_positive_eps() {
        let (mut g, lin, pid, x) = scalar_graph(1.0);
        let feed = [("x", &x)];
        assert!(finite_difference_grad(&mut g, &feed, lin, pid, 0.0, Mode::Train).is_err());
    }

    #[test]
    fn every_layer_kind_passes() {
        for report in layer_suite(3).unwrap() {
            assert!(report.entries >= 100, "{report:?}");
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn three_layer_mlp_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new();
        let x = g.input("x", &[6]);
        let h1 = g.linear("l1", x, 7, Init::HeUniform, &mut rng).unwrap();
        let h1 = g.relu(h1).unwrap();
        let h2 = g.linear("l2", h1, 5, Init::XavierUniform, &mut rng).unwrap();
        let h2 = g.tanh(h2).unwrap();
        let out = g.linear("l3", h2, 3, Init::XavierUniform, &mut rng).unwrap();
        let (loss, target) = mse_head(&mut g, out, 4, &mut rng).unwrap();
        let xv = random(&[4, 6], &mut rng);
        let feed = [("x", &xv), ("target", &target)];
        let r = check_graph("mlp", &mut g, &feed, loss, 1000, DEFAULT_EPS, &mut rng).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn assembled_network() {
        let report = check_network(11).unwrap();
        assert_eq!(report.entries, NETWORK_SAMPLES);
        assert!(report.passed(), "{report:?}");
    }
}
