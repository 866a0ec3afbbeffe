//! Losses, the joint training step, the training loop and evaluation.
//!
//! Per instance the model minimizes
//!
//! ```text
//! L = L_s + L_rl + L_b
//! L_s  = −log softmax(logits)[y]
//! L_rl = −Σ_i log π_i · Σ_{j ≥ i} (R − b_j)
//! L_b  = mean_j (b_j − R)²
//! ```
//!
//! where `R = (K − 1)·r` and `r = ±1` depending on whether the stochastic
//! episode classified the instance correctly. The advantages are constants
//! on the tape.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{CatModel, EpisodeMode, EpisodeNodes, EpisodeTrace};
use crate::diffnet::{AdamConfig, NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::receptor::PreparedSeries;
use crate::rng::{self, streams};
use crate::series::LabeledDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Instances per optimizer step; losses are averaged over the batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Validate every this many epochs.
    pub eval_every: usize,
    /// Stop after this many validations without improvement (0 disables).
    pub patience: usize,
    /// Stop as soon as validation accuracy reaches this value.
    pub target_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 200,
            batch_size: 1,
            seed: 0,
            eval_every: 1,
            patience: 0,
            target_val_acc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("lr must be > 0".into()));
        }
        if self.epochs < 1 || self.batch_size < 1 || self.eval_every < 1 {
            return Err(Error::Config(
                "epochs, batch_size and eval_every must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A series with its cached receptor input and label.
#[derive(Clone, Debug)]
pub struct PreparedInstance {
    pub series: PreparedSeries,
    pub label: usize,
}

pub fn prepare_dataset(model: &CatModel, data: &LabeledDataset) -> Result<Vec<PreparedInstance>> {
    data.instances
        .par_iter()
        .map(|inst| {
            Ok(PreparedInstance {
                series: model.prepare(&inst.series)?,
                label: inst.label,
            })
        })
        .collect()
}

/// `−log softmax(logits)[y]`.
pub fn cross_entropy(tape: &mut Tape, logits: NodeId, y: usize) -> Result<NodeId> {
    let lp = tape.log_softmax(logits);
    let pick = tape.pick(lp, y)?;
    Ok(tape.scale(pick, -1.0))
}

/// Terminal reward `r = ±1` and return `R = (#actions)·r`.
pub fn episode_reward(trace: &EpisodeTrace, y: usize) -> (f64, f64) {
    let r = if trace.prediction == y { 1.0 } else { -1.0 };
    (r, trace.num_actions() as f64 * r)
}

/// Reward-to-go advantages `A_i = Σ_{j ≥ i} (R − b_j)`.
pub fn advantages(baselines: &[f64], ret: f64) -> Vec<f64> {
    let mut out = vec![0.0; baselines.len()];
    let mut acc = 0.0;
    for j in (0..baselines.len()).rev() {
        acc += ret - baselines[j];
        out[j] = acc;
    }
    out
}

/// REINFORCE surrogate with baseline; the advantages are constants.
pub fn reinforce_loss(
    tape: &mut Tape,
    log_probs: &[NodeId],
    baselines: &[f64],
    ret: f64,
) -> Result<NodeId> {
    if log_probs.is_empty() {
        return Err(Error::NoActions);
    }
    if log_probs.len() != baselines.len() {
        return Err(Error::DimMismatch(format!(
            "{} log-probabilities but {} baselines",
            log_probs.len(),
            baselines.len()
        )));
    }
    let adv = advantages(baselines, ret);
    let mut total = tape.scale(log_probs[0], -adv[0]);
    for (&lp, &a) in log_probs.iter().zip(&adv).skip(1) {
        let term = tape.scale(lp, -a);
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// `mean_j (b_j − R)²`.
pub fn baseline_loss(tape: &mut Tape, baselines: &[NodeId], ret: f64) -> Result<NodeId> {
    if baselines.is_empty() {
        return Err(Error::NoActions);
    }
    let parts: Vec<NodeId> = baselines.iter().map(|&b| tape.offset(b, -ret)).collect();
    let diffs = tape.concat(&parts);
    let sq = tape.mul(diffs, diffs)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / baselines.len() as f64))
}

/// Loss values of one training episode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub supervised: f64,
    pub policy: f64,
    pub baseline: f64,
    pub reward: f64,
    pub correct: bool,
}

/// Builds the joint loss for one stochastic episode on `tape`.
pub fn episode_losses(
    model: &CatModel,
    tape: &mut Tape,
    store: &ParamStore,
    inst: &PreparedInstance,
    rng: &mut rng::Rng,
) -> Result<(NodeId, StepLosses, EpisodeTrace, EpisodeNodes)> {
    let (trace, nodes) =
        model.run_episode(tape, store, &inst.series, EpisodeMode::Stochastic, rng)?;
    let ls = cross_entropy(tape, nodes.logits, inst.label)?;
    let (_, ret) = episode_reward(&trace, inst.label);
    let mut losses = StepLosses {
        supervised: tape.scalar(ls),
        reward: ret,
        correct: trace.prediction == inst.label,
        ..StepLosses::default()
    };
    let mut total = ls;
    if !nodes.log_probs.is_empty() {
        let lrl = reinforce_loss(tape, &nodes.log_probs, &trace.baselines, ret)?;
        let lb = baseline_loss(tape, &nodes.baselines, ret)?;
        losses.policy = tape.scalar(lrl);
        losses.baseline = tape.scalar(lb);
        let s = tape.add(total, lrl)?;
        total = tape.add(s, lb)?;
    }
    Ok((total, losses, trace, nodes))
}

/// Runs one episode and adds `scale ·` its gradient to the store.
pub fn accumulate_step(
    model: &CatModel,
    store: &mut ParamStore,
    inst: &PreparedInstance,
    scale: f64,
    rng: &mut rng::Rng,
) -> Result<StepLosses> {
    let mut tape = Tape::new();
    let (total, losses, _, _) = episode_losses(model, &mut tape, store, inst, rng)?;
    let grads = tape.gradients(total, store)?;
    store.accumulate(&grads, scale);
    Ok(losses)
}

/// One per-instance update: episode, joint loss, backward, Adam.
pub fn joint_step(
    model: &CatModel,
    store: &mut ParamStore,
    inst: &PreparedInstance,
    adam: &AdamConfig,
    rng: &mut rng::Rng,
) -> Result<StepLosses> {
    let losses = accumulate_step(model, store, inst, 1.0, rng)?;
    store.adam_step(adam)?;
    Ok(losses)
}

/// One row of training metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_s: f64,
    pub loss_rl: f64,
    pub loss_b: f64,
    pub reward: f64,
    pub acc_train: f64,
    /// `NaN` for epochs without validation.
    pub acc_val: f64,
    pub seconds: f64,
    pub recurrent_steps: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,loss_s,loss_rl,loss_b,reward,acc_train,acc_val,seconds,recurrent_steps";

impl RunMetrics {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.loss_s,
                r.loss_rl,
                r.loss_b,
                r.reward,
                r.acc_train,
                r.acc_val,
                r.seconds,
                r.recurrent_steps
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Rows with the wall-clock column cleared, for reproducibility checks.
    pub fn without_timing(&self) -> RunMetrics {
        let mut m = self.clone();
        m.rows.iter_mut().for_each(|r| r.seconds = 0.0);
        m
    }

    pub fn total_seconds(&self) -> f64 {
        self.rows.iter().map(|r| r.seconds).sum()
    }
}

/// The shared epoch loop: shuffles, runs `step` per instance (each adding
/// `scale ·` its gradient to the store), takes an Adam step per batch and
/// validates with `eval`. Returns the parameters with the best validation
/// accuracy (the final parameters when `eval` never reports one).
pub fn run_epochs<S, E>(
    store: &mut ParamStore,
    train_len: usize,
    steps_per_instance: u64,
    cfg: &TrainConfig,
    mut step: S,
    mut eval: E,
) -> Result<(ParamStore, RunMetrics)>
where
    S: FnMut(&mut ParamStore, usize, f64, &mut rng::Rng) -> Result<StepLosses>,
    E: FnMut(&ParamStore) -> Result<Option<f64>>,
{
    cfg.validate()?;
    if train_len == 0 {
        return Err(Error::EmptyPartition("train"));
    }
    let mut shuffle_rng = rng::stream(cfg.seed, streams::SHUFFLE);
    let mut episode_rng = rng::stream(cfg.seed, streams::EPISODES);
    let mut order: Vec<usize> = (0..train_len).collect();
    let mut metrics = RunMetrics {
        best_val_acc: f64::NEG_INFINITY,
        ..RunMetrics::default()
    };
    let mut best = store.clone();
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut sums = StepLosses::default();
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let l = step(store, i, scale, &mut episode_rng)?;
                sums.supervised += l.supervised;
                sums.policy += l.policy;
                sums.baseline += l.baseline;
                sums.reward += l.reward;
                correct += l.correct as usize;
            }
            store.adam_step(&cfg.adam)?;
        }
        let seconds = start.elapsed().as_secs_f64();
        let n = train_len as f64;

        let acc_val = if epoch % cfg.eval_every == 0 {
            eval(store)?.unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        metrics.rows.push(EpochMetrics {
            epoch,
            loss_s: sums.supervised / n,
            loss_rl: sums.policy / n,
            loss_b: sums.baseline / n,
            reward: sums.reward / n,
            acc_train: correct as f64 / n,
            acc_val,
            seconds,
            recurrent_steps: train_len as u64 * steps_per_instance,
        });

        if acc_val.is_nan() {
            continue;
        }
        if acc_val > metrics.best_val_acc {
            metrics.best_val_acc = acc_val;
            metrics.best_epoch = epoch;
            best.copy_values_from(store);
            stale = 0;
        } else {
            stale += 1;
        }
        if cfg.target_val_acc.is_some_and(|t| acc_val >= t) {
            break;
        }
        if cfg.patience > 0 && stale >= cfg.patience {
            break;
        }
    }
    if metrics.best_epoch == 0 {
        best.copy_values_from(store);
        metrics.best_epoch = metrics.rows.len();
        metrics.best_val_acc = f64::NAN;
    }
    Ok((best, metrics))
}

/// Trains the classifier in place and returns the best-validation
/// parameters with per-epoch metrics.
pub fn fit(
    model: &CatModel,
    store: &mut ParamStore,
    train: &[PreparedInstance],
    val: &[PreparedInstance],
    cfg: &TrainConfig,
) -> Result<(ParamStore, RunMetrics)> {
    run_epochs(
        store,
        train.len(),
        model.agent_cfg.k as u64,
        cfg,
        |store, i, scale, rng| accumulate_step(model, store, &train[i], scale, rng),
        |store| {
            if val.is_empty() {
                Ok(None)
            } else {
                evaluate(model, store, val, cfg.seed).map(Some)
            }
        },
    )
}

/// Deterministic-mode predictions. Instances draw from their own random
/// streams, so results do not depend on evaluation order.
pub fn predict_all(
    model: &CatModel,
    store: &ParamStore,
    data: &[PreparedInstance],
    seed: u64,
) -> Result<Vec<EpisodeTrace>> {
    data.par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut r = rng::item_stream(seed, streams::EVAL, i as u64);
            model.predict(store, &inst.series, &mut r)
        })
        .collect()
}

/// Fraction of instances classified correctly in deterministic mode.
pub fn evaluate(
    model: &CatModel,
    store: &ParamStore,
    data: &[PreparedInstance],
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let traces = predict_all(model, store, data, seed)?;
    let correct = traces
        .iter()
        .zip(data)
        .filter(|(t, inst)| t.prediction == inst.label)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
