//! Supervised training and evaluation loops.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::model::{sequence_loss, TmaModel};
use crate::par::{self, Execution};
use crate::pipeline::PreparedSample;
use crate::tensor::{clip_grad_norm, AdamW, AdamWConfig, OneCycle, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Seeds weight initialization and batch order.
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 6,
            peak_lr: 2e-4,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Mean end-point error of the final prediction over the batch.
    pub epe: f64,
    pub loss: f64,
    pub lr: f64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:.6} {:.6} {:.8}", self.step, self.epe, self.loss, self.lr)
    }
}

/// Loss, final-stage EPE and parameter gradients for one sample.
pub fn sample_gradients(model: &TmaModel<f32>, sample: &PreparedSample) -> Result<(f64, f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::new();
    let inputs = model.input_vars(&mut tape, &sample.grids);
    let out = model.forward(&mut tape, &inputs)?;
    let loss = sequence_loss(&mut tape, &out.flows, &sample.gt, model.config.gamma)?;
    let last = *out.flows.last().expect("at least one iteration");
    let pred = FlowField::new(tape.value(last).clone(), sample.gt.valid.clone())?;
    let epe = crate::metrics::epe(&pred, &sample.gt, &sample.gt.valid)?.unwrap_or(0.0);
    let grads = tape.backward(loss)?.for_params(&model.params);
    Ok((tape.value(loss).item() as f64, epe, grads))
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: TmaModel<f32>,
    pub optimizer: AdamW<f32>,
    pub config: TrainConfig,
    step: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(model: TmaModel<f32>, config: TrainConfig) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(config.peak_lr > 0.0) {
            return Err(Error::Config("peak learning rate must be positive".into()));
        }
        let optimizer = AdamW::new(
            &model.params,
            AdamWConfig {
                weight_decay: config.weight_decay,
                ..AdamWConfig::default()
            },
            OneCycle::new(config.peak_lr, config.steps.max(1)),
        );
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xba7c_4_0dde5);
        Ok(Self {
            model,
            optimizer,
            config,
            step: 0,
            rng,
            order: Vec::new(),
            cursor: 0,
        })
    }

    /// Steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.config.batch_size);
        while batch.len() < self.config.batch_size {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    /// One optimizer step on a shuffled batch of `data`.
    pub fn train_step(&mut self, data: &[PreparedSample]) -> Result<StepRecord> {
        if data.is_empty() {
            return Err(Error::Usage("training set is empty".into()));
        }
        let batch = self.next_batch(data.len());
        let model = &self.model;
        let results = par::map(self.config.execution, &batch, |&i| sample_gradients(model, &data[i]));
        let inv = 1.0 / batch.len() as f32;
        let mut loss = 0.0;
        let mut epe = 0.0;
        let mut total: Option<Vec<Tensor<f32>>> = None;
        for r in results {
            let (l, e, grads) = r?;
            loss += l;
            epe += e;
            match total.as_mut() {
                None => total = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                            *x += *y;
                        }
                    }
                }
            }
        }
        let mut grads = total.expect("non-empty batch");
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        if self.config.clip_norm > 0.0 {
            clip_grad_norm(&mut grads, self.config.clip_norm);
        }
        let lr = self.optimizer.update(&mut self.model.params, &grads)?;
        self.step += 1;
        let n = batch.len() as f64;
        Ok(StepRecord {
            step: self.step,
            epe: epe / n,
            loss: loss / n,
            lr,
        })
    }
}

/// Final-stage prediction for every sample, in order.
pub fn predict_all(model: &TmaModel<f32>, data: &[PreparedSample], exec: Execution) -> Result<Vec<FlowField>> {
    par::map(exec, data, |s| {
        let flows = model.predict(&s.grids)?;
        let last = flows.into_iter().last().expect("at least one iteration");
        last.with_valid(s.gt.valid.clone())
    })
    .into_iter()
    .collect()
}

/// Pixel-pooled metrics of the final prediction over `data`.
pub fn evaluate(model: &TmaModel<f32>, data: &[PreparedSample], exec: Execution) -> Result<MetricReport> {
    let preds = predict_all(model, data, exec)?;
    let mut acc = MetricAccumulator::new();
    for (p, s) in preds.iter().zip(data) {
        acc.add(p, &s.gt, &s.gt.valid)?;
    }
    Ok(acc.report())
}

/// Metrics of predicting zero flow everywhere.
pub fn zero_flow_report(data: &[PreparedSample]) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new();
    for s in data {
        let zero = FlowField::zeros(s.gt.height(), s.gt.width());
        acc.add(&zero, &s.gt, &s.gt.valid)?;
    }
    Ok(acc.report())
}
