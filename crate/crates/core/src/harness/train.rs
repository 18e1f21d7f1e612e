use std::path::Path;
use std::sync::Arc;

use super::checkpoint::{self, CheckpointMeta};
use super::runlog::{IterRow, RunLog, ValRow};
use super::validate::{validate, ValidationScores};
use super::{ExperimentConfig, HarnessError, MANUAL_WEIGHTS};
use crate::data::{derived_rng, Batch, BatchStream, Dataset, Split, DOMAIN_DROPOUT};
use crate::depth::IntervalScheme;
use crate::losses::{combine, sparse_mse, sparse_softmax_ce, LossBreakdown, TaskWeights, WeightingMode};
use crate::model::{Heads, Model};
use crate::optim::{lr_range_test, AdamState, LrSweepRecord, ParamSlot, PolySchedule};
use crate::tensor::{Tape, TensorError};

/// Dropout streams of the learning-rate sweep start here so they never
/// coincide with those of training steps.
const SWEEP_DROPOUT_OFFSET: u64 = 1 << 40;

/// Loss value and gradients of one batch.
struct Evaluation {
    breakdown: LossBreakdown,
    grads: Vec<Vec<f64>>,
    s_reg_grad: Option<f64>,
    s_cls_grad: Option<f64>,
}

fn evaluate(
    model: &Model,
    weights: &TaskWeights,
    heads: Heads,
    batch: &Batch,
    dropout_stream: u64,
    seed: u64,
) -> Result<Evaluation, HarnessError> {
    let mut rng = derived_rng(seed, DOMAIN_DROPOUT, dropout_stream);
    let mut tape = Tape::new();
    let input = tape.constant(batch.images.clone());
    let pass = model.forward(&mut tape, input, heads, Some(&mut rng))?;
    let l_reg = sparse_mse(&mut tape, pass.regression, &batch.targets, &batch.mask)?;
    let l_cls = match pass.class_logits {
        Some(logits) => Some(sparse_softmax_ce(&mut tape, logits, &batch.labels, &batch.mask)?),
        None => None,
    };
    let combined = combine(&mut tape, l_reg, l_cls, weights, batch.valid_pixels)?;
    if !combined.breakdown.l_mt.is_finite() {
        return Err(TensorError::NonFinite { op: "multi-task loss" }.into());
    }
    tape.backward(combined.total)?;
    let grads = model.gradients(&tape, &pass);
    let s_grad = |v: Option<_>| v.map(|v| tape.grad(v).map_or(0.0, |g| g[0]));
    Ok(Evaluation {
        breakdown: combined.breakdown,
        grads,
        s_reg_grad: s_grad(combined.s_reg),
        s_cls_grad: s_grad(combined.s_cls),
    })
}

/// One Adam step over the network parameters and, in learned mode with
/// `train_weights`, the log-variances. The log-variances are exempt from
/// weight decay.
fn apply(
    model: &mut Model,
    weights: &mut TaskWeights,
    adam: &mut AdamState,
    eval: &Evaluation,
    lr: f64,
    train_weights: bool,
) -> Result<(), HarnessError> {
    let reg_grad = [eval.s_reg_grad.unwrap_or(0.0)];
    let cls_grad = [eval.s_cls_grad.unwrap_or(0.0)];
    let mut slots: Vec<ParamSlot<'_>> = model
        .params_mut()
        .iter_mut()
        .zip(&eval.grads)
        .map(|(p, g)| ParamSlot {
            values: p.value.values_mut(),
            grad: g,
            decay: true,
        })
        .collect();
    if train_weights && eval.s_reg_grad.is_some() {
        slots.push(ParamSlot {
            values: std::slice::from_mut(&mut weights.s_reg),
            grad: &reg_grad,
            decay: false,
        });
    }
    if train_weights && eval.s_cls_grad.is_some() {
        slots.push(ParamSlot {
            values: std::slice::from_mut(&mut weights.s_cls),
            grad: &cls_grad,
            decay: false,
        });
    }
    adam.step(&mut slots, lr)?;
    Ok(())
}

/// Stateful training run that can be advanced, validated and checkpointed.
pub struct Trainer {
    config: ExperimentConfig,
    scheme: IntervalScheme,
    model: Model,
    weights: TaskWeights,
    adam: AdamState,
    stream: BatchStream,
    val_set: Arc<Dataset>,
    schedule: PolySchedule,
    iter: usize,
    skipped: usize,
    log: RunLog,
    sweep: Option<LrSweepRecord>,
}

impl Trainer {
    /// Prepares a run. Without a configured initial rate a range test is run
    /// first on a copy of the freshly initialized model.
    pub fn new(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let scheme = config.scheme()?;
        let train_set = Arc::new(config.data.generate(Split::Train, &scheme)?);
        let val_set = Arc::new(config.data.generate(Split::Val, &scheme)?);
        let stream = BatchStream::new(train_set, config.batch_size, config.augment, config.bounds, config.seed)?;
        let model = Model::build(config.model.clone(), config.seed)?;
        let mut trainer = Self {
            config: config.clone(),
            scheme,
            model,
            weights: config.task_weights(),
            adam: AdamState::new(config.adam),
            stream,
            val_set,
            schedule: PolySchedule::new(0.0, config.iterations),
            iter: 0,
            skipped: 0,
            log: RunLog::default(),
            sweep: None,
        };
        let alpha0 = match config.lr.initial {
            Some(a) => a,
            None => {
                let record = trainer.lr_sweep()?;
                log::info!("range test selected initial rate {:e}", record.selected_alpha);
                let a = record.selected_alpha;
                trainer.sweep = Some(record);
                a
            }
        };
        trainer.config.lr.initial = Some(alpha0);
        trainer.schedule = PolySchedule {
            initial: alpha0,
            power: config.lr.power,
            total: config.iterations,
        };
        trainer.log.header = trainer.header();
        Ok(trainer)
    }

    fn header(&self) -> Vec<String> {
        let c = &self.config;
        let weighting = match c.weighting {
            WeightingMode::Equal => "equal".to_string(),
            WeightingMode::Manual { w_reg, w_cls } => format!("manual w_reg={w_reg} w_cls={w_cls}"),
            WeightingMode::Learned => format!("learned initial_s={}", c.initial_s),
        };
        vec![
            format!("weighting: {weighting}"),
            format!("manual_preset: w_reg={} w_cls={}", MANUAL_WEIGHTS.0, MANUAL_WEIGHTS.1),
            format!("validation_interval: {}", c.validation_interval),
            format!("n_cls: {} aux_head: {}", c.model.n_cls, c.model.aux_head),
            format!("alpha0: {}", self.schedule.initial),
            format!(
                "iterations: {} batch_size: {} crop: {}x{}",
                c.iterations, c.batch_size, c.augment.crop.0, c.augment.crop.1
            ),
            format!("seed: {} data_seed: {}", c.seed, c.data.seed),
        ]
    }

    /// Resolved configuration, with the initial rate filled in.
    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn weights(&self) -> &TaskWeights {
        &self.weights
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn scheme(&self) -> &IntervalScheme {
        &self.scheme
    }

    pub fn val_set(&self) -> &Dataset {
        &self.val_set
    }

    /// Completed optimizer steps.
    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn skipped_batches(&self) -> usize {
        self.skipped
    }

    pub fn sweep_record(&self) -> Option<&LrSweepRecord> {
        self.sweep.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.iter >= self.config.iterations
    }

    pub fn into_parts(self) -> (Model, RunLog) {
        (self.model, self.log)
    }

    /// Exponential learning-rate sweep on copies of the current model and
    /// optimizer; the run itself is left untouched.
    ///
    /// Task weights stay fixed during the sweep. Adam moves each log-variance
    /// by roughly the rate per step, so at high rates the regularized loss
    /// falls just from the weights settling, which would pass for a network
    /// that is still learning.
    pub fn lr_sweep(&self) -> Result<LrSweepRecord, HarnessError> {
        let mut model = self.model.clone();
        let mut weights = self.weights;
        let mut adam = AdamState::new(self.config.adam);
        let heads = self.config.heads();
        let mut position = 0u64;
        let mut step = 0u64;
        lr_range_test(self.config.lr.sweep, |alpha| {
            let batch = loop {
                let b = self.stream.batch(position)?;
                position += 1;
                if !b.is_empty() {
                    break b;
                }
            };
            let stream = SWEEP_DROPOUT_OFFSET + step;
            step += 1;
            let eval = match evaluate(&model, &weights, heads, &batch, stream, self.config.seed) {
                Ok(e) => e,
                Err(HarnessError::Tensor(_)) => return Ok(f64::NAN),
                Err(e) => return Err(e),
            };
            match apply(&mut model, &mut weights, &mut adam, &eval, alpha, false) {
                Ok(()) => Ok(eval.breakdown.l_mt),
                Err(HarnessError::Optim(_)) => Ok(f64::NAN),
                Err(e) => Err(e),
            }
        })
    }

    /// Runs up to `n` more optimizer steps, stopping at the configured total.
    ///
    /// Batches without ground truth are skipped without touching the
    /// optimizer. On a non-finite loss or gradient the error is returned and
    /// the trainer still holds the last good state.
    pub fn run(&mut self, n: usize) -> Result<(), HarnessError> {
        let target = (self.iter + n).min(self.config.iterations);
        if self.iter >= target {
            return Ok(());
        }
        let heads = self.config.heads();
        let start = (self.iter + self.skipped) as u64;
        let mut batches = self.stream.iter(start, self.config.prefetch);
        while self.iter < target {
            let batch = batches.next().expect("batch stream is endless")?;
            if batch.is_empty() {
                self.skipped += 1;
                log::debug!("skipped batch {} without ground truth", batch.index);
                continue;
            }
            let eval = evaluate(
                &self.model,
                &self.weights,
                heads,
                &batch,
                self.iter as u64,
                self.config.seed,
            )
            .map_err(|e| self.diverged(e))?;
            let alpha = self.schedule.lr_at(self.iter)?;
            let (s_reg, s_cls) = self.logged_s(&eval);
            apply(&mut self.model, &mut self.weights, &mut self.adam, &eval, alpha, true)
                .map_err(|e| self.diverged(e))?;
            self.iter += 1;
            let b = eval.breakdown;
            self.log.train.push(IterRow {
                iter: self.iter,
                l_reg: b.l_reg,
                l_cls: b.l_cls,
                l_mt: b.l_mt,
                w_reg: b.w_reg,
                w_cls: b.w_cls,
                s_reg,
                s_cls,
                alpha,
                skipped_batches: self.skipped,
            });
            if self.iter.is_multiple_of(self.config.validation_interval) || self.iter == self.config.iterations {
                self.record_validation()?;
            }
        }
        Ok(())
    }

    /// Runs to the configured total.
    pub fn run_to_end(&mut self) -> Result<(), HarnessError> {
        self.run(self.config.iterations.saturating_sub(self.iter))
    }

    fn logged_s(&self, eval: &Evaluation) -> (f64, f64) {
        let s_reg = if eval.s_reg_grad.is_some() {
            self.weights.s_reg
        } else {
            0.0
        };
        let s_cls = if eval.s_cls_grad.is_some() {
            self.weights.s_cls
        } else {
            0.0
        };
        (s_reg, s_cls)
    }

    fn diverged(&self, e: HarnessError) -> HarnessError {
        match e {
            HarnessError::Tensor(TensorError::NonFinite { .. }) | HarnessError::Optim(_) => {
                HarnessError::NonFiniteLoss {
                    iter: self.iter + 1,
                    detail: e.to_string(),
                }
            }
            other => other,
        }
    }

    /// Scores the current model on the validation set.
    pub fn validate(&self) -> Result<ValidationScores, HarnessError> {
        validate(&self.model, &self.val_set, &self.scheme)
    }

    fn record_validation(&mut self) -> Result<(), HarnessError> {
        if self.log.val.last().is_some_and(|v| v.iter == self.iter) {
            return Ok(());
        }
        let scores = self.validate()?;
        self.log.val.push(ValRow {
            iter: self.iter,
            silog_reg_scaled: scores.silog_reg,
            silog_cls_scaled: scores.silog_cls,
        });
        Ok(())
    }

    pub fn checkpoint(&self, path: &Path) -> Result<(), HarnessError> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            iter: self.iter,
            skipped: self.skipped,
            weights: self.weights,
            adam_config: self.adam.config,
            adam_step: self.adam.step,
            slot_lengths: self.adam.m.iter().map(Vec::len).collect(),
            log: self.log.clone(),
        };
        let m: Vec<f64> = self.adam.m.concat();
        let v: Vec<f64> = self.adam.v.concat();
        checkpoint::write(path, &meta, &self.model.flat_params(), &m, &v)
    }

    /// Resumes a run. When `requested` is given it must describe the same run.
    pub fn restore(path: &Path, requested: Option<&ExperimentConfig>) -> Result<Self, HarnessError> {
        let ckpt = checkpoint::read(path)?;
        let meta = ckpt.meta;
        if let Some(req) = requested {
            check_conflict(&meta.config, req)?;
        }
        let mut trainer = Self::new(&meta.config)?;
        trainer
            .model
            .set_flat_params(&ckpt.params)
            .map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
        let total: usize = meta.slot_lengths.iter().sum();
        if ckpt.m.len() != total || ckpt.v.len() != total {
            return Err(HarnessError::Checkpoint("optimizer state length mismatch".into()));
        }
        let split = |flat: &[f64]| {
            let mut out = Vec::with_capacity(meta.slot_lengths.len());
            let mut at = 0;
            for &n in &meta.slot_lengths {
                out.push(flat[at..at + n].to_vec());
                at += n;
            }
            out
        };
        trainer.adam = AdamState {
            config: meta.adam_config,
            step: meta.adam_step,
            m: split(&ckpt.m),
            v: split(&ckpt.v),
        };
        trainer.weights = meta.weights;
        trainer.iter = meta.iter;
        trainer.skipped = meta.skipped;
        trainer.log = meta.log;
        Ok(trainer)
    }
}

fn check_conflict(stored: &ExperimentConfig, requested: &ExperimentConfig) -> Result<(), HarnessError> {
    if stored.model.n_cls != requested.model.n_cls {
        return Err(HarnessError::ConfigConflict {
            field: "model.n_cls".into(),
            checkpoint: stored.model.n_cls.to_string(),
            requested: requested.model.n_cls.to_string(),
        });
    }
    let mut req = requested.clone();
    req.prefetch = stored.prefetch;
    if req.lr.initial.is_none() {
        req.lr.initial = stored.lr.initial;
    }
    if &req != stored {
        let a = serde_json::to_value(stored)?;
        let b = serde_json::to_value(&req)?;
        let field = a
            .as_object()
            .and_then(|o| {
                o.iter()
                    .find(|(k, v)| b.get(k.as_str()) != Some(v))
                    .map(|(k, _)| k.clone())
            })
            .unwrap_or_else(|| "config".into());
        return Err(HarnessError::ConfigConflict {
            checkpoint: a[&field].to_string(),
            requested: b[&field].to_string(),
            field,
        });
    }
    Ok(())
}

/// Trains `config` to completion and returns the model with its log.
pub fn train(config: &ExperimentConfig) -> Result<(Model, RunLog), HarnessError> {
    let mut t = Trainer::new(config)?;
    t.run_to_end()?;
    Ok(t.into_parts())
}
