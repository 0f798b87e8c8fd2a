//! Toy training: the stripe task, AdamW with a warm-up cosine schedule, and
//! a deterministic loop that records a metrics trace.

mod optim;
mod task;

use std::fmt::Write as _;

pub use optim::{lr_schedule, optimizer_step, AdamWConfig, OptimizerState};
pub use task::SyntheticTask;

use crate::autodiff::Graph;
use crate::block::BlockType;
use crate::error::{invalid, Error, Result};
use crate::model::{InputSpec, Model, ModelConfig};
use crate::nn::Mode;
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub eval_interval: usize,
    /// Weight of the score-token classifier loss.
    pub aux_weight: f64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 16,
            lr: 1e-3,
            warmup: 50,
            eval_interval: 25,
            aux_weight: 0.5,
            optimizer: AdamWConfig::default(),
        }
    }
}

/// One row of the metrics trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub lr: f64,
    /// Mean loss over the steps since the previous row.
    pub loss: f64,
    /// Accuracy over the training batches since the previous row.
    pub train_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<MetricRow>,
    /// Loss of the very first batch.
    pub initial_loss: f64,
    /// Eval-mode accuracy over the whole training set after the last step.
    pub final_train_acc: f64,
}

impl TrainReport {
    /// `step,lr,loss,train_acc`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,lr,loss,train_acc\n");
        for r in &self.trace {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.lr, r.loss, r.train_acc);
        }
        s
    }
}

/// The small models trained on the stripe task: channels [16, 32, 64, 128],
/// depths [1, 1, 2, 1], head dim 16, 32×32 input, two classes.
pub fn tiny_config(types: [BlockType; 4]) -> ModelConfig {
    let mut c = ModelConfig::new("tiny", [1, 1, 2, 1], [16, 32, 64, 128], 16).with_stage_types(types);
    c.name = format!("tiny-{}", types.iter().map(|t| t.letter()).collect::<String>());
    c.num_classes = SyntheticTask::CLASSES;
    c.input = InputSpec::image(32);
    if c.has_hourglass() {
        c.shrink_ratio = 0.5;
        c.aux_head = true;
    }
    c
}

fn correct<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| {
            let row = &logits.data()[i * k..(i + 1) * k];
            let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == y
        })
        .count()
}

/// Eval-mode accuracy over every training sample.
pub fn evaluate<S: Scalar>(model: &Model<S>, task: &SyntheticTask, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..task.samples).collect();
    let mut hits = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = task.batch::<S>(chunk);
        hits += correct(&model.predict(&x)?, &y);
    }
    Ok(hits as f64 / task.samples as f64)
}

/// Train `model` on `task`. Batches come from shuffled passes over the
/// training set; all randomness (order, drop-path) derives from `rng`.
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    task: &SyntheticTask,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainReport> {
    if model.config.num_classes != SyntheticTask::CLASSES {
        return Err(invalid(
            "train",
            format!("model has {} outputs, task has {} classes", model.config.num_classes, SyntheticTask::CLASSES),
        ));
    }
    let inp = model.config.input;
    if inp.channels != task.channels || inp.frames != task.frames {
        return Err(invalid("train", "model input does not match the task samples"));
    }
    if cfg.batch_size == 0 || cfg.eval_interval == 0 || task.samples < cfg.batch_size {
        return Err(invalid("train", "batch size, eval interval and sample count must be positive"));
    }
    lr_schedule(0, cfg.steps, cfg.warmup, cfg.lr)?;

    let mut state = OptimizerState::new(cfg.optimizer);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut trace = Vec::new();
    let (mut loss_acc, mut hits, mut seen, mut since) = (0.0, 0, 0, 0);
    let mut initial_loss = f64::NAN;

    for step in 0..cfg.steps {
        if cursor + cfg.batch_size > order.len() {
            order = (0..task.samples).collect();
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let (x, labels) = task.batch::<S>(&order[cursor..cursor + cfg.batch_size]);
        cursor += cfg.batch_size;
        let lr = lr_schedule(step, cfg.steps, cfg.warmup, cfg.lr)?;

        let mut g = Graph::new();
        let xv = g.constant(x);
        let mut ctx = model.bind(&mut g, Mode::Train, rng.fork());
        let out = model.forward(&mut g, &mut ctx, xv)?;
        let mut loss = g.cross_entropy(out.logits, &labels)?;
        if let Some(aux) = out.aux_logits {
            let al = g.cross_entropy(aux, &labels)?;
            let al = g.mul_scalar(al, S::of(cfg.aux_weight));
            loss = g.add(loss, al)?;
        }
        let lv = g.value(loss).item().as_f64();
        if !lv.is_finite() {
            return Err(Error::Diverged { step, loss: lv });
        }
        if step == 0 {
            initial_loss = lv;
        }
        hits += correct(g.value(out.logits), &labels);
        seen += labels.len();
        g.backward(loss)?;
        let grads = ctx.grads(&g);
        let updates = ctx.take_bn_updates();
        drop(ctx);
        model.apply_bn_updates(updates)?;
        optimizer_step(&mut model.params, &grads, &mut state, lr)?;

        loss_acc += lv;
        since += 1;
        if (step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.steps {
            let row = MetricRow {
                step: step + 1,
                lr,
                loss: loss_acc / since as f64,
                train_acc: hits as f64 / seen as f64,
            };
            log::info!("step {} lr {:.2e} loss {:.4} acc {:.3}", row.step, row.lr, row.loss, row.train_acc);
            trace.push(row);
            (loss_acc, hits, seen, since) = (0.0, 0, 0, 0);
        }
    }
    Ok(TrainReport {
        trace,
        initial_loss,
        final_train_acc: evaluate(model, task, 64)?,
    })
}
