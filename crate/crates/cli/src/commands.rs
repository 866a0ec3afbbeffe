use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use cat_core::agent::{AgentConfig, CatModel};
use cat_core::baselines::BaselineKind;
use cat_core::config::{RunConfig, KEYS};
use cat_core::datagen::{self, MpiConfig, ProbeConfig};
use cat_core::diffnet::ParamStore;
use cat_core::harness::{self, Checkpoint, DeltaCoupling, SummaryRow, SweepSpec, SweepVariable};
use cat_core::io::{read_dataset, write_dataset};
use cat_core::rng::{self, streams};
use cat_core::series::{split, LabeledDataset};
use cat_core::train;

use crate::ConfigArgs;

/// Builds the run configuration from defaults, file, environment and flags.
pub fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    load_config_from(args, std::env::vars())
}

fn load_config_from(
    args: &ConfigArgs,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)
            .with_context(|| format!("reading config {}", path.display()))?;
    }
    cfg.apply_env(env).context("environment override")?;
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k, v).with_context(|| format!("--set {kv}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn describe(data: &LabeledDataset) -> String {
    format!("{} series, {} classes", data.len(), data.num_classes)
}

fn load(path: &Path) -> Result<LabeledDataset> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn save(data: &LabeledDataset, path: &Path) -> Result<()> {
    write_dataset(data, path).with_context(|| format!("writing dataset {}", path.display()))
}

fn single_threaded<T: Send>(f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    harness::with_threads(1, f)?
}

#[derive(Args, Debug)]
pub struct GenMpiArgs {
    /// Number of series (even; classes alternate)
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    /// Observations per series
    #[arg(long = "len", default_value_t = 500)]
    pub series_len: usize,
    /// Width of the planted pattern as a fraction of the timeline
    #[arg(long, default_value_t = 0.10)]
    pub delta: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Let noise timestamps fall inside the pattern window too
    #[arg(long)]
    pub noise_anywhere: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_mpi(a: GenMpiArgs) -> Result<String> {
    let cfg = MpiConfig {
        n: a.n,
        series_len: a.series_len,
        signal_width: a.delta,
        seed: a.seed,
        noise_outside_signal: !a.noise_anywhere,
    };
    let data = single_threaded(|| Ok(datagen::gen_mpi(&cfg)?))?;
    save(&data, &a.out)?;
    Ok(describe(&data))
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// CSV with a `t` column, one column per channel and an optional `label` column
    #[arg(long)]
    pub input: PathBuf,
    /// Keep a record when it differs from the last kept one by more than this
    #[arg(long, default_value_t = 0.001)]
    pub gamma: f64,
    /// Records per non-overlapping window
    #[arg(long, default_value_t = 200)]
    pub window: usize,
    /// Downsample every series to this fraction of its observations
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Undersample the majority class of a binary dataset
    #[arg(long)]
    pub balance: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn probe(a: ProbeArgs) -> Result<String> {
    let input = datagen::read_regular_csv_file(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let cfg = ProbeConfig {
        gamma: a.gamma,
        window_len: a.window,
    };
    let name = a.name.clone().unwrap_or_else(|| {
        a.input
            .file_stem()
            .map_or_else(|| "probe".into(), |s| s.to_string_lossy().into_owned())
    });
    let mut data = datagen::probe_dataset(&input, &cfg, &name)?;
    if let Some(f) = a.fraction {
        data = datagen::downsample_dataset(&data, f, a.seed)?;
    }
    if a.balance {
        data = datagen::balance_classes(&data, a.seed)?;
    }
    save(&data, &a.out)?;
    Ok(describe(&data))
}

#[derive(Args, Debug)]
pub struct DownsampleArgs {
    /// Dataset in JSON-lines format
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of observations kept per series, in (0, 1]
    #[arg(long)]
    pub fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn downsample(a: DownsampleArgs) -> Result<String> {
    let data = load(&a.data)?;
    let out = datagen::downsample_dataset(&data, a.fraction, a.seed)?;
    save(&out, &a.out)?;
    let before: usize = data
        .instances
        .iter()
        .map(|i| i.series.num_observations())
        .sum();
    let after: usize = out
        .instances
        .iter()
        .map(|i| i.series.num_observations())
        .sum();
    Ok(format!(
        "{}, kept {after} of {before} observations",
        describe(&out)
    ))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset in JSON-lines format
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for best.ckpt, metrics.csv, config.cfg, manifest.json and the split files
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(a: TrainArgs) -> Result<String> {
    let cfg = load_config(&a.config)?;
    let data = load(&a.data)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (tr, va, te) = split(&data, &cfg.split)?;
    let spec = cfg.cat_spec();
    let (model, best, metrics, test_acc) = single_threaded(|| {
        let mut store = ParamStore::new();
        let agent = AgentConfig {
            num_classes: data.num_classes,
            ..cfg.agent.clone()
        };
        let model = CatModel::new(
            &mut store,
            cfg.receptor.clone(),
            agent,
            data.num_channels(),
            &mut rng::stream(cfg.train.seed, streams::INIT),
        )?;
        let ptr = train::prepare_dataset(&model, &tr)?;
        let pva = train::prepare_dataset(&model, &va)?;
        let (best, metrics) = train::fit(&model, &mut store, &ptr, &pva, &cfg.train)?;
        let test_acc = if te.is_empty() {
            None
        } else {
            let pte = train::prepare_dataset(&model, &te)?;
            Some(train::evaluate(&model, &best, &pte, cfg.train.seed)?)
        };
        Ok((model, best, metrics, test_acc))
    })?;

    Checkpoint::new(&spec, &model, &best).save(a.out.join("best.ckpt"))?;
    metrics.save_csv(a.out.join("metrics.csv"))?;
    std::fs::write(a.out.join("config.cfg"), cfg.to_text())?;
    harness::RunManifest::new("train", &cfg, vec![cfg.train.seed])?
        .save(a.out.join("manifest.json"))?;
    for (part, name) in [
        (&tr, "train.jsonl"),
        (&va, "val.jsonl"),
        (&te, "test.jsonl"),
    ] {
        if !part.is_empty() {
            save(part, &a.out.join(name))?;
        }
    }

    let mut line = format!(
        "trained {} epochs on {} series",
        metrics.rows.len(),
        tr.len()
    );
    if !va.is_empty() {
        line += &format!(
            ", best val accuracy {:.3} at epoch {}",
            metrics.best_val_acc, metrics.best_epoch
        );
    }
    if let Some(acc) = test_acc {
        line += &format!(", test accuracy {acc:.3}");
    }
    Ok(line)
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset in JSON-lines format
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written by `train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Seed of the evaluation streams (predictions are deterministic)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn eval(a: EvalArgs) -> Result<String> {
    let ck = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("reading checkpoint {}", a.checkpoint.display()))?;
    let (model, store) = ck.restore()?;
    let data = load(&a.data)?;
    if data.num_channels() != model.channels {
        bail!(
            "dataset has {} channels, checkpoint expects {}",
            data.num_channels(),
            model.channels
        );
    }
    let acc = single_threaded(|| {
        let prepared = train::prepare_dataset(&model, &data)?;
        Ok(train::evaluate(&model, &store, &prepared, a.seed)?)
    })?;
    Ok(format!("accuracy {acc:.3}"))
}

/// Generator settings shared by the experiment drivers.
#[derive(Args, Debug, Clone)]
pub struct MpiArgs {
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long = "len", default_value_t = 500)]
    pub series_len: usize,
    /// Pattern width used unless it is the swept variable
    #[arg(long, default_value_t = 0.10)]
    pub signal_width: f64,
    /// Fraction of each generated dataset used for testing
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Let noise timestamps fall inside the pattern window too
    #[arg(long)]
    pub noise_anywhere: bool,
}

impl MpiArgs {
    fn mpi(&self, seed: u64) -> MpiConfig {
        MpiConfig {
            n: self.n,
            series_len: self.series_len,
            signal_width: self.signal_width,
            seed,
            noise_outside_signal: !self.noise_anywhere,
        }
    }
}

fn summarize(rows: &[SummaryRow]) -> String {
    rows.iter()
        .map(|r| {
            let (m, s) = r.mean_std();
            format!(
                "{:<12} {}={:<6} median {:.3} mean {:.3} ± {:.3} (n={})",
                r.method,
                r.variable,
                r.value,
                r.median(),
                m,
                s,
                r.accuracies.len()
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn write_results(rows: &[SummaryRow], out: &Path, manifest: harness::RunManifest) -> Result<()> {
    harness::export_csv(&harness::summary_table(rows), out)
        .with_context(|| format!("writing {}", out.display()))?;
    manifest.save(out.with_extension("manifest.json"))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// signal_width, receptor_width or k
    #[arg(long, value_parser = parse_variable)]
    pub variable: SweepVariable,
    /// Comma-separated values of the swept variable
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[command(flatten)]
    pub mpi: MpiArgs,
    /// Repeat r uses seed base + r for data and training
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the configured receptor width when sweeping signal width
    #[arg(long)]
    pub no_coupling: bool,
    /// Baselines trained in every cell (gru-interp, gru-mean, gru-dt, gru-s)
    #[arg(long, value_delimiter = ',')]
    pub baselines: Vec<BaselineKind>,
    /// Cells run in parallel on this many threads
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Summary CSV; a manifest is written beside it
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_variable(s: &str) -> std::result::Result<SweepVariable, String> {
    s.parse().map_err(|e: cat_core::Error| e.to_string())
}

pub fn sweep(a: SweepArgs) -> Result<String> {
    let cfg = load_config(&a.config)?;
    let spec = SweepSpec {
        variable: a.variable,
        values: a.values.clone(),
        repeats: a.repeats,
        mpi: a.mpi.mpi(a.seed),
        cat: cfg.cat_spec(),
        test_fraction: a.mpi.test_fraction,
        seed_base: a.seed,
        coupling: (!a.no_coupling).then(DeltaCoupling::default),
        baselines: a.baselines.clone(),
        impute_grid: cfg.impute.grid_size,
        baseline_hidden: cfg.gru_hidden,
    };
    spec.validate()?;
    let rows = harness::with_threads(a.jobs, || harness::run_sweep(&spec))??;
    let seeds = (0..a.repeats as u64).map(|r| a.seed + r).collect();
    write_results(
        &rows,
        &a.out,
        harness::RunManifest::new("sweep", &spec, seeds)?,
    )?;
    Ok(summarize(&rows))
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub mpi: MpiArgs,
    /// Seed of the generated dataset
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    /// Receptor reads per episode to compare
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub ks: Vec<usize>,
    /// Training seeds per variant
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Keep the configured receptor width instead of deriving it from the signal width
    #[arg(long)]
    pub no_coupling: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn ablate(a: AblateArgs) -> Result<String> {
    let cfg = load_config(&a.config)?;
    let mut cat = cfg.cat_spec();
    if !a.no_coupling {
        cat.receptor.delta = DeltaCoupling::default().receptor_width(a.mpi.signal_width);
    }
    let mpi = a.mpi.mpi(a.data_seed);
    let rows = harness::with_threads(a.jobs, || -> Result<_> {
        let (tr, te) = harness::mpi_train_test(&mpi, a.mpi.test_fraction)?;
        Ok(harness::ablate_moment_network(
            &tr, &te, &cat, &a.ks, &a.seeds,
        )?)
    })??;
    write_results(
        &rows,
        &a.out,
        harness::RunManifest::new("ablate", &cat, a.seeds.clone())?,
    )?;
    Ok(summarize(&rows))
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Dataset to time on; generated from the M/Π flags when absent
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub mpi: MpiArgs,
    /// Comma-separated baselines to time next to the classifier (gru-interp, gru-mean, gru-dt, gru-s)
    #[arg(long, value_delimiter = ',', default_value = "gru-mean")]
    pub methods: Vec<BaselineKind>,
    /// Timed epochs per method
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench(a: BenchArgs) -> Result<String> {
    let cfg = load_config(&a.config)?;
    let data = match &a.data {
        Some(p) => load(p)?,
        None => single_threaded(|| Ok(datagen::gen_mpi(&a.mpi.mpi(a.seed))?))?,
    };
    let rows = harness::timing_benchmark(
        &data,
        &cfg.cat_spec(),
        &a.methods,
        cfg.impute.grid_size,
        cfg.gru_hidden,
        a.epochs,
        a.seed,
    )?;
    if let Some(out) = &a.out {
        harness::export_csv(&harness::timing_table(&rows), out)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(rows
        .iter()
        .map(|r| {
            format!(
                "{:<10} {:.3} s/epoch, {} recurrent steps/epoch",
                r.method, r.seconds_per_epoch, r.recurrent_steps_per_epoch
            )
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

pub fn keys() -> Result<String> {
    let defaults = RunConfig::default().to_text();
    Ok(KEYS
        .iter()
        .zip(defaults.lines())
        .map(|((k, doc), line)| {
            let value = line.split_once('=').map_or("", |(_, v)| v.trim());
            format!("{k:<20} {value:<10} {doc}")
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_env_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "lr = 0.01\nepochs = 5\nk = 4\n").unwrap();
        let args = ConfigArgs {
            config: Some(file),
            overrides: vec!["epochs=9".into()],
        };
        let env = [
            ("CAT_LR".to_string(), "0.02".to_string()),
            ("CAT_EPOCHS".into(), "7".into()),
        ];
        let cfg = load_config_from(&args, env).unwrap();
        assert_eq!(cfg.train.adam.lr, 0.02);
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.agent.k, 4);
    }

    #[test]
    fn bad_override_is_rejected() {
        let args = ConfigArgs {
            config: None,
            overrides: vec!["epochs".into()],
        };
        assert!(load_config_from(&args, []).is_err());
        let args = ConfigArgs {
            config: None,
            overrides: vec!["epochs=0".into()],
        };
        assert!(load_config_from(&args, []).is_err());
    }
}
