//! Experiment drivers: single runs, parameter sweeps on the synthetic task,
//! the random-moment ablation, the timing benchmark and CSV/JSON export.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, CatModel, MomentSource};
use crate::baselines::{self, BaselineKind};
use crate::datagen::{gen_mpi, MpiConfig};
use crate::diffnet::{ParamStore, TensorMap};
use crate::error::{Error, Result};
use crate::receptor::ReceptorConfig;
use crate::rng::{self, streams};
use crate::series::{split, LabeledDataset, SplitMode, SplitSpec};
use crate::train::{self, RunMetrics, TrainConfig};

/// Everything needed to train the classifier on a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatSpec {
    pub receptor: ReceptorConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    /// Fraction of the training data held out for model selection.
    pub val_fraction: f64,
}

impl Default for CatSpec {
    fn default() -> Self {
        CatSpec {
            receptor: ReceptorConfig::default(),
            agent: AgentConfig::default(),
            train: TrainConfig::default(),
            val_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub test_acc: f64,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_seconds: f64,
    #[serde(skip)]
    pub metrics: RunMetrics,
}

fn holdout(
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if fraction <= 0.0 {
        return Ok((data.clone(), data.subset(Vec::new())));
    }
    let (tr, va, _) = split(
        data,
        &SplitSpec {
            train: 1.0 - fraction,
            val: fraction,
            test: 0.0,
            seed,
            mode: SplitMode::Random,
        },
    )?;
    Ok((tr, va))
}

/// Holds out a validation set, trains from an initialization drawn from
/// `seed`, and scores the best-validation parameters on `test`.
pub fn run_cat(
    train_set: &LabeledDataset,
    test: &LabeledDataset,
    spec: &CatSpec,
    seed: u64,
) -> Result<(CatModel, ParamStore, RunResult)> {
    let (tr, va) = holdout(train_set, spec.val_fraction, seed)?;
    let mut store = ParamStore::new();
    let agent = AgentConfig {
        num_classes: train_set.num_classes,
        ..spec.agent.clone()
    };
    let model = CatModel::new(
        &mut store,
        spec.receptor.clone(),
        agent,
        train_set.num_channels(),
        &mut rng::stream(seed, streams::INIT),
    )?;
    let tr = train::prepare_dataset(&model, &tr)?;
    let va = train::prepare_dataset(&model, &va)?;
    let te = train::prepare_dataset(&model, test)?;
    let cfg = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let (best, metrics) = train::fit(&model, &mut store, &tr, &va, &cfg)?;
    let test_acc = train::evaluate(&model, &best, &te, seed)?;
    let result = RunResult {
        seed,
        test_acc,
        best_val_acc: metrics.best_val_acc,
        best_epoch: metrics.best_epoch,
        epochs_run: metrics.rows.len(),
        train_seconds: metrics.total_seconds(),
        metrics,
    };
    Ok((model, best, result))
}

/// Generates the pattern dataset and splits it into train and test parts.
pub fn mpi_train_test(
    cfg: &MpiConfig,
    test_fraction: f64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let data = gen_mpi(cfg)?;
    let (tr, _, te) = split(
        &data,
        &SplitSpec {
            train: 1.0 - test_fraction,
            val: 0.0,
            test: test_fraction,
            seed: cfg.seed,
            mode: SplitMode::Random,
        },
    )?;
    Ok((tr, te))
}

/// Receptor width used for a given signal width: `max(floor, factor·Δ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaCoupling {
    pub floor: f64,
    pub factor: f64,
}

impl Default for DeltaCoupling {
    fn default() -> Self {
        DeltaCoupling {
            floor: 0.05,
            factor: 2.0,
        }
    }
}

impl DeltaCoupling {
    pub fn receptor_width(&self, signal_width: f64) -> f64 {
        (self.factor * signal_width).max(self.floor).min(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    SignalWidth,
    ReceptorWidth,
    K,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::SignalWidth => "signal_width",
            SweepVariable::ReceptorWidth => "receptor_width",
            SweepVariable::K => "k",
        }
    }
}

impl std::str::FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepVariable::SignalWidth,
            SweepVariable::ReceptorWidth,
            SweepVariable::K,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown sweep variable `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub repeats: usize,
    /// Dataset generator; its seed is replaced per repeat.
    pub mpi: MpiConfig,
    pub cat: CatSpec,
    pub test_fraction: f64,
    /// Repeat `r` uses seed `seed_base + r` for data and training.
    pub seed_base: u64,
    /// When set, signal-width cells derive the receptor width from Δ.
    pub coupling: Option<DeltaCoupling>,
    /// Baselines trained alongside the classifier in every cell.
    pub baselines: Vec<BaselineKind>,
    pub impute_grid: usize,
    pub baseline_hidden: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            variable: SweepVariable::SignalWidth,
            values: vec![0.04, 0.06, 0.1],
            repeats: 5,
            mpi: MpiConfig::default(),
            cat: CatSpec::default(),
            test_fraction: 0.2,
            seed_base: 0,
            coupling: Some(DeltaCoupling::default()),
            baselines: Vec::new(),
            impute_grid: 500,
            baseline_hidden: 64,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        Ok(())
    }

    /// Dataset and model configuration of one cell.
    pub fn cell(&self, value: f64, repeat: usize) -> (MpiConfig, CatSpec, u64) {
        let seed = self.seed_base + repeat as u64;
        let mut mpi = MpiConfig {
            seed,
            ..self.mpi.clone()
        };
        let mut cat = self.cat.clone();
        match self.variable {
            SweepVariable::SignalWidth => {
                mpi.signal_width = value;
                if let Some(c) = self.coupling {
                    cat.receptor.delta = c.receptor_width(value);
                }
            }
            SweepVariable::ReceptorWidth => cat.receptor.delta = value,
            SweepVariable::K => cat.agent.k = value as usize,
        }
        (mpi, cat, seed)
    }
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for a
/// single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Accuracies of one method at one parameter value over repeats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub variable: String,
    pub value: f64,
    pub accuracies: Vec<f64>,
}

impl SummaryRow {
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.accuracies)
    }

    pub fn median(&self) -> f64 {
        median(&self.accuracies)
    }
}

/// A header and string rows, written as CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn summary_table(rows: &[SummaryRow]) -> Table {
    Table {
        header: [
            "method",
            "variable",
            "value",
            "repeats",
            "mean",
            "std",
            "median",
            "accuracies",
        ]
        .map(String::from)
        .to_vec(),
        rows: rows
            .iter()
            .map(|r| {
                let (m, s) = r.mean_std();
                let accs: Vec<String> = r.accuracies.iter().map(f64::to_string).collect();
                vec![
                    r.method.clone(),
                    r.variable.clone(),
                    r.value.to_string(),
                    r.accuracies.len().to_string(),
                    m.to_string(),
                    s.to_string(),
                    r.median().to_string(),
                    accs.join(";"),
                ]
            })
            .collect(),
    }
}

pub fn write_csv<W: Write>(table: &Table, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    write_csv(table, std::fs::File::create(path)?)
}

/// Runs `f` on a pool of `jobs` threads (0 = rayon's default).
pub fn with_threads<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

struct CellOutcome {
    value: f64,
    repeat: usize,
    method: String,
    acc: f64,
}

/// Runs every `(value, repeat)` cell of the sweep; cells run in parallel on
/// the current rayon pool and the table is ordered by value, then method.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SummaryRow>> {
    use rayon::prelude::*;
    spec.validate()?;
    let cells: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.repeats).map(move |r| (v, r)))
        .collect();
    let outcomes: Vec<Vec<CellOutcome>> = cells
        .par_iter()
        .map(|&(value, repeat)| {
            let (mpi, cat, seed) = spec.cell(value, repeat);
            let (tr, te) = mpi_train_test(&mpi, spec.test_fraction)?;
            let (_, _, res) = run_cat(&tr, &te, &cat, seed)?;
            let mut out = vec![CellOutcome {
                value,
                repeat,
                method: "cat".into(),
                acc: res.test_acc,
            }];
            for &kind in &spec.baselines {
                let (tr2, va2) = holdout(&tr, cat.val_fraction, seed)?;
                let icfg = kind.impute_config(spec.impute_grid);
                let tc = TrainConfig {
                    seed,
                    ..cat.train.clone()
                };
                let (model, best, _) =
                    baselines::train_baseline(&tr2, &va2, &icfg, spec.baseline_hidden, &tc)?;
                let acc = baselines::evaluate_baseline(
                    &model,
                    &best,
                    &baselines::impute_dataset(&te, &icfg)?,
                )?;
                out.push(CellOutcome {
                    value,
                    repeat,
                    method: kind.name().into(),
                    acc,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut methods = vec!["cat".to_string()];
    methods.extend(spec.baselines.iter().map(|k| k.name().to_string()));
    let mut rows = Vec::new();
    for &value in &spec.values {
        for method in &methods {
            let mut accs: Vec<(usize, f64)> = outcomes
                .iter()
                .flatten()
                .filter(|o| o.value == value && &o.method == method)
                .map(|o| (o.repeat, o.acc))
                .collect();
            accs.sort_by_key(|a| a.0);
            rows.push(SummaryRow {
                method: method.clone(),
                variable: spec.variable.name().into(),
                value,
                accuracies: accs.into_iter().map(|a| a.1).collect(),
            });
        }
    }
    Ok(rows)
}

/// Signal-width sweep with the receptor width coupled to Δ.
pub fn sweep_signal_width(spec: &SweepSpec) -> Result<Vec<SummaryRow>> {
    let spec = SweepSpec {
        variable: SweepVariable::SignalWidth,
        coupling: Some(spec.coupling.unwrap_or_default()),
        ..spec.clone()
    };
    run_sweep(&spec)
}

/// Receptor-width sweep at the configured signal width.
pub fn sweep_receptor_width(spec: &SweepSpec) -> Result<Vec<SummaryRow>> {
    let spec = SweepSpec {
        variable: SweepVariable::ReceptorWidth,
        ..spec.clone()
    };
    run_sweep(&spec)
}

/// Trains the full model and the random-moment variant for each `K` and
/// seed on the same data.
pub fn ablate_moment_network(
    train_set: &LabeledDataset,
    test: &LabeledDataset,
    cat: &CatSpec,
    ks: &[usize],
    seeds: &[u64],
) -> Result<Vec<SummaryRow>> {
    use rayon::prelude::*;
    if ks.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one K and one seed".into(),
        ));
    }
    let variants = [
        ("cat", MomentSource::Policy),
        ("cat-random", MomentSource::Random),
    ];
    let cells: Vec<(usize, usize, usize)> = (0..ks.len())
        .flat_map(|k| {
            (0..variants.len()).flat_map(move |v| (0..seeds.len()).map(move |s| (k, v, s)))
        })
        .collect();
    let accs: Vec<f64> = cells
        .par_iter()
        .map(|&(k, v, s)| {
            let mut spec = cat.clone();
            spec.agent.k = ks[k];
            spec.agent.moments = variants[v].1;
            run_cat(train_set, test, &spec, seeds[s]).map(|r| r.2.test_acc)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (k, &kv) in ks.iter().enumerate() {
        for (v, (name, _)) in variants.iter().enumerate() {
            rows.push(SummaryRow {
                method: (*name).into(),
                variable: "k".into(),
                value: kv as f64,
                accuracies: cells
                    .iter()
                    .zip(&accs)
                    .filter(|((ck, cv, _), _)| *ck == k && *cv == v)
                    .map(|(_, a)| *a)
                    .collect(),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub instances: usize,
    pub epochs: usize,
    pub seconds_per_epoch: f64,
    pub recurrent_steps_per_epoch: u64,
}

pub fn timing_table(rows: &[TimingRow]) -> Table {
    Table {
        header: [
            "method",
            "instances",
            "epochs",
            "seconds_per_epoch",
            "recurrent_steps_per_epoch",
        ]
        .map(String::from)
        .to_vec(),
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.instances.to_string(),
                    r.epochs.to_string(),
                    r.seconds_per_epoch.to_string(),
                    r.recurrent_steps_per_epoch.to_string(),
                ]
            })
            .collect(),
    }
}

fn timing_row(method: &str, instances: usize, m: &RunMetrics) -> TimingRow {
    TimingRow {
        method: method.into(),
        instances,
        epochs: m.rows.len(),
        seconds_per_epoch: m.total_seconds() / m.rows.len().max(1) as f64,
        recurrent_steps_per_epoch: m.rows.first().map_or(0, |r| r.recurrent_steps),
    }
}

/// Times `epochs` training epochs of the classifier and of each baseline on
/// the same data, single-threaded. Only the training loop is timed; no
/// validation is run.
pub fn timing_benchmark(
    data: &LabeledDataset,
    cat: &CatSpec,
    methods: &[BaselineKind],
    impute_grid: usize,
    baseline_hidden: usize,
    epochs: usize,
    seed: u64,
) -> Result<Vec<TimingRow>> {
    let tc = TrainConfig {
        epochs,
        seed,
        patience: 0,
        target_val_acc: None,
        ..cat.train.clone()
    };
    with_threads(1, || {
        let mut rows = Vec::new();
        let mut store = ParamStore::new();
        let agent = AgentConfig {
            num_classes: data.num_classes,
            ..cat.agent.clone()
        };
        let model = CatModel::new(
            &mut store,
            cat.receptor.clone(),
            agent,
            data.num_channels(),
            &mut rng::stream(seed, streams::INIT),
        )?;
        let prepared = train::prepare_dataset(&model, data)?;
        let (_, m) = train::fit(&model, &mut store, &prepared, &[], &tc)?;
        rows.push(timing_row("cat", data.len(), &m));
        for &kind in methods {
            let empty = data.subset(Vec::new());
            let (_, _, m) = baselines::train_baseline(
                data,
                &empty,
                &kind.impute_config(impute_grid),
                baseline_hidden,
                &tc,
            )?;
            rows.push(timing_row(kind.name(), data.len(), &m));
        }
        Ok(rows)
    })?
}

/// Configuration and seeds of an experiment, written next to its results.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seeds: Vec<u64>) -> Result<Self> {
        Ok(RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(config)?,
            seeds,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Trained classifier on disk: the settings that fix its geometry plus all
/// parameter values. Stored as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: CatSpec,
    pub channels: usize,
    pub num_classes: usize,
    pub tensors: TensorMap,
}

impl Checkpoint {
    pub fn new(spec: &CatSpec, model: &CatModel, store: &ParamStore) -> Self {
        Checkpoint {
            spec: spec.clone(),
            channels: model.channels,
            num_classes: model.agent_cfg.num_classes,
            tensors: store.to_checkpoint(),
        }
    }

    /// Rebuilds the model and loads the stored values into a fresh store.
    pub fn restore(&self) -> Result<(CatModel, ParamStore)> {
        let mut store = ParamStore::new();
        let agent = AgentConfig {
            num_classes: self.num_classes,
            ..self.spec.agent.clone()
        };
        let model = CatModel::new(
            &mut store,
            self.spec.receptor.clone(),
            agent,
            self.channels,
            &mut rng::stream(0, streams::INIT),
        )?;
        store.load_checkpoint(&self.tensors)?;
        Ok((model, store))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
