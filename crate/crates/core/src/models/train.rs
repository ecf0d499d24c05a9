use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, NodeId, Op};
use crate::optim::{adam_step, AdamState};
use crate::preprocess::SampleRecord;
use crate::tensor::Tensor;

/// A network the generic trainer can fit.
pub trait Trainable {
    fn graph(&self) -> &Graph;
    fn graph_mut(&mut self) -> &mut Graph;
    /// Scalar loss node.
    fn loss(&self) -> NodeId;
    /// Named batched inputs for `records`, including targets or labels.
    fn feed(&self, records: &[&SampleRecord]) -> Result<Vec<(String, Tensor)>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    SoftmaxCrossEntropy,
}

impl LossKind {
    fn matches(self, op: &Op) -> bool {
        matches!(
            (self, op),
            (LossKind::Mse, Op::Mse { .. }) | (LossKind::SoftmaxCrossEntropy, Op::SoftmaxCrossEntropy { .. })
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Best-validation parameters are written here when set.
    pub checkpoint: Option<PathBuf>,
    /// Chunk size for eval-mode validation passes.
    pub eval_batch: usize,
}

impl TrainConfig {
    /// Encoder-decoder defaults: MSE, batch 15, 200 epochs.
    pub fn reconstruction(seed: u64) -> Self {
        TrainConfig {
            loss: LossKind::Mse,
            alpha: 1e-3,
            batch_size: 15,
            epochs: 200,
            seed,
            checkpoint: None,
            eval_batch: 32,
        }
    }

    /// Classifier defaults: cross entropy, batch 96, 100 epochs.
    pub fn classifier(seed: u64) -> Self {
        TrainConfig {
            loss: LossKind::SoftmaxCrossEntropy,
            batch_size: 96,
            epochs: 100,
            ..Self::reconstruction(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::InvalidArgument("batch sizes must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} is invalid", self.alpha)));
        }
        Ok(())
    }
}

/// Per-epoch losses. `val` is `None` when no validation data was given.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub train: Vec<f64>,
    pub val: Vec<Option<f64>>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }
}

/// Shuffled minibatches of `0..n`. A trailing batch of one sample is merged
/// into the previous batch, since batch norm cannot train on it.
pub fn batches(n: usize, size: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(last);
    }
    out
}

fn as_feed(owned: &[(String, Tensor)]) -> Vec<(&str, &Tensor)> {
    owned.iter().map(|(n, t)| (n.as_str(), t)).collect()
}

/// Mean eval-mode loss over `records`, weighted by chunk size.
pub fn evaluate<T: Trainable>(net: &T, records: &[SampleRecord], chunk: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for part in records.chunks(chunk.max(1)) {
        let refs: Vec<&SampleRecord> = part.iter().collect();
        let feed = net.feed(&refs)?;
        let acts = net.graph().forward(&as_feed(&feed), Mode::Eval, &[net.loss()])?;
        total += acts.scalar(net.loss()) * part.len() as f64;
    }
    Ok(total / records.len() as f64)
}

fn snapshot(graph: &Graph) -> Vec<Tensor> {
    graph.params().iter().map(|p| p.value.clone()).collect()
}

fn restore(graph: &mut Graph, values: Vec<Tensor>) {
    for (p, v) in graph.params_mut().iter_mut().zip(values) {
        p.value = v;
    }
}

/// Fits `net` with Adam; see [`train_with`].
pub fn train<T: Trainable>(
    net: &mut T,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    train_with(net, train_set, val_set, cfg, |_, _, _| {})
}

/// Fits `net` with Adam, calling `on_epoch(epoch, train_loss, val_loss)` after
/// each epoch. The parameters of the epoch with the lowest validation loss
/// (train loss without validation data) are kept at the end.
pub fn train_with<T: Trainable>(
    net: &mut T,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, Option<f64>),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let loss = net.loss();
    if !cfg.loss.matches(&net.graph().node(loss).op) {
        return Err(Error::InvalidArgument(format!(
            "config asks for {:?} but the network's loss is {}",
            cfg.loss,
            net.graph().node(loss).op.kind()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(net.graph(), cfg.alpha);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;

    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for batch in batches(train_set.len(), cfg.batch_size, &mut rng) {
            let refs: Vec<&SampleRecord> = batch.iter().map(|&i| &train_set[i]).collect();
            let feed = net.feed(&refs)?;
            let graph = net.graph_mut();
            graph.zero_grad();
            let acts = graph.forward(&as_feed(&feed), Mode::Train, &[loss])?;
            let value = acts.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, loss: value });
            }
            graph.backward(&acts, loss)?;
            adam_step(graph, &mut adam)?;
            graph.commit_running_stats(&acts);
            total += value * batch.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            let v = evaluate(net, val_set, cfg.eval_batch)?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch, loss: v });
            }
            Some(v)
        };
        history.train.push(train_loss);
        history.val.push(val_loss);
        on_epoch(epoch, train_loss, val_loss);

        let score = val_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, snapshot(net.graph())));
            history.best_epoch = epoch;
            if let Some(path) = &cfg.checkpoint {
                checkpoint::save_graph(net.graph(), path)?;
            }
        }
    }
    if let Some((_, values)) = best {
        restore(net.graph_mut(), values);
    }
    Ok(history)
}

/// Writes `epoch,train_loss,val_loss`; missing validation losses are blank.
pub fn write_loss_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for (i, (t, v)) in history.train.iter().zip(&history.val).enumerate() {
        let v = v.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(out, "{},{t:e},{v}", i + 1).expect("write to string");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
