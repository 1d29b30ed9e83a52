use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::CnnArch;
use super::model::{ModelBundle, Normalizer};
use super::network::{argmax, mix, Network};
use super::ops::softmax_xent;
use super::Tensor;
use crate::dataset::RoomLabel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Overrides the dropout rate of every dropout layer when set.
    pub dropout: Option<f64>,
    pub max_steps: usize,
    /// Steps between validation passes.
    pub eval_every: usize,
    /// Validation passes without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            learning_rate: 0.001,
            dropout: Some(0.4),
            max_steps: 10_000,
            eval_every: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(rate) = self.dropout {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Argument(format!("dropout rate {rate} outside [0, 1)")));
            }
        }
        if self.eval_every == 0 || self.max_steps == 0 {
            return Err(Error::Argument("max_steps and eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// Inputs with their class indices.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet<T> {
    pub inputs: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, input: Tensor<T>, label: usize) {
        self.inputs.push(input);
        self.labels.push(label);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
    pub best_step: usize,
    pub steps_run: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,train_loss,val_loss,val_acc")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.step, r.train_loss, r.val_loss, r.val_acc)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn evaluate_normalized<T: Scalar>(network: &Network<T>, inputs: &[Tensor<T>], labels: &[usize]) -> Result<Evaluation> {
    let k = network.arch().classes;
    let refs: Vec<&Tensor<T>> = inputs.iter().collect();
    let scored: Vec<Result<(f64, usize)>> = network
        .logits_batch(&refs)?
        .iter()
        .zip(labels)
        .map(|(logits, &y)| {
            let (loss, _) = softmax_xent(logits, y)?;
            Ok((loss.as_f64(), argmax(logits)))
        })
        .collect();
    let mut confusion = vec![vec![0; k]; k];
    let mut loss = 0.0;
    let mut correct = 0;
    for (r, &y) in scored.into_iter().zip(labels) {
        let (l, p) = r?;
        loss += l;
        confusion[y][p] += 1;
        correct += usize::from(p == y);
    }
    let n = inputs.len().max(1) as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        confusion,
    })
}

/// Loss, accuracy and confusion matrix of a bundle on raw feature inputs.
pub fn evaluate<T: Scalar>(bundle: &ModelBundle<T>, set: &LabeledSet<T>) -> Result<Evaluation> {
    let inputs = set
        .inputs
        .iter()
        .map(|x| bundle.normalizer.apply(x))
        .collect::<Result<Vec<_>>>()?;
    evaluate_normalized(&bundle.network, &inputs, &set.labels)
}

/// Minibatch SGD with periodic validation and early stopping; returns the
/// snapshot with the lowest validation loss.
pub fn train<T: Scalar>(
    arch: &CnnArch,
    labels: Vec<RoomLabel>,
    train_set: &LabeledSet<T>,
    val_set: &LabeledSet<T>,
    cfg: &TrainConfig,
) -> Result<(ModelBundle<T>, History)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Argument("training and validation sets must be non-empty".into()));
    }
    let arch = match cfg.dropout {
        Some(rate) => arch.with_dropout(rate),
        None => arch.clone(),
    };
    let normalizer = Normalizer::fit(&train_set.inputs)?;
    let norm = |set: &LabeledSet<T>| -> Result<Vec<Tensor<T>>> {
        set.inputs.par_iter().map(|x| normalizer.apply(x)).collect()
    };
    let train_x = norm(train_set)?;
    let val_x = norm(val_set)?;

    let mut network = Network::init(arch, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x5eed));
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let lr = T::of(cfg.learning_rate);

    let probe: Vec<usize> = order.iter().copied().take(1000).collect();
    let probe_x: Vec<Tensor<T>> = probe.iter().map(|&i| train_x[i].clone()).collect();
    let probe_y: Vec<usize> = probe.iter().map(|&i| train_set.labels[i]).collect();
    let initial = evaluate_normalized(&network, &probe_x, &probe_y)?;
    let first_val = evaluate_normalized(&network, &val_x, &val_set.labels)?;

    let mut history = History {
        rows: vec![HistoryRow {
            step: 0,
            train_loss: initial.loss,
            val_loss: first_val.loss,
            val_acc: first_val.accuracy,
        }],
        ..Default::default()
    };
    let mut best = (first_val.loss, network.clone());
    let mut waited = 0;
    let mut window_loss = 0.0;
    let mut window_steps = 0;

    for step in 1..=cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let xs: Vec<&Tensor<T>> = batch.iter().map(|&i| &train_x[i]).collect();
        let ys: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
        let out = network.batch_gradients(&xs, &ys, Some(mix(cfg.seed, step as u64)))?;
        if !out.loss.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("minibatch loss is {}", out.loss),
            });
        }
        network.sgd_step(&out.grads, lr);
        window_loss += out.loss.as_f64();
        window_steps += 1;
        history.steps_run = step;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let eval = evaluate_normalized(&network, &val_x, &val_set.labels)?;
            if !eval.loss.is_finite() {
                return Err(Error::Training {
                    step,
                    message: format!("validation loss is {}", eval.loss),
                });
            }
            history.rows.push(HistoryRow {
                step,
                train_loss: window_loss / window_steps as f64,
                val_loss: eval.loss,
                val_acc: eval.accuracy,
            });
            window_loss = 0.0;
            window_steps = 0;
            if eval.loss < best.0 {
                best = (eval.loss, network.clone());
                history.best_step = step;
                waited = 0;
            } else {
                waited += 1;
                if waited >= cfg.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    let bundle = ModelBundle::new(best.1, labels, normalizer, 0)?;
    Ok((bundle, history))
}
