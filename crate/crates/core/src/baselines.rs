//! Imputation baselines: resample a series onto a regular grid, then run a
//! GRU over every grid step and classify the final state.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::diffnet::{GruCell, Linear, NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::series::{IrregularSeries, LabeledDataset};
use crate::train::{self, RunMetrics, StepLosses, TrainConfig};

/// How empty grid bins are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMethod {
    /// The channel's mean over all observations.
    Mean,
    /// Linear interpolation between the nearest filled bins, flat at the edges.
    Linear,
}

/// Extra per-channel features appended to the imputed values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtraFeature {
    None,
    /// Time since the last observed bin, in normalized time.
    DeltaT,
    /// 1 where the bin held an observation, else 0.
    Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputeConfig {
    pub grid_size: usize,
    pub method: FillMethod,
    pub extra: ExtraFeature,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        ImputeConfig {
            grid_size: 500,
            method: FillMethod::Mean,
            extra: ExtraFeature::None,
        }
    }
}

impl ImputeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::Config(format!(
                "grid_size must be >= 2, got {}",
                self.grid_size
            )));
        }
        Ok(())
    }

    /// Features per grid step for `channels` variables.
    pub fn feature_dim(&self, channels: usize) -> usize {
        match self.extra {
            ExtraFeature::None => channels,
            _ => 2 * channels,
        }
    }
}

/// The named baseline variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    GruInterp,
    GruMean,
    GruDeltaT,
    GruS,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::GruInterp,
        BaselineKind::GruMean,
        BaselineKind::GruDeltaT,
        BaselineKind::GruS,
    ];

    pub fn impute_config(self, grid_size: usize) -> ImputeConfig {
        let (method, extra) = match self {
            BaselineKind::GruInterp => (FillMethod::Linear, ExtraFeature::None),
            BaselineKind::GruMean => (FillMethod::Mean, ExtraFeature::None),
            BaselineKind::GruDeltaT => (FillMethod::Mean, ExtraFeature::DeltaT),
            BaselineKind::GruS => (FillMethod::Mean, ExtraFeature::Mask),
        };
        ImputeConfig {
            grid_size,
            method,
            extra,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::GruInterp => "gru-interp",
            BaselineKind::GruMean => "gru-mean",
            BaselineKind::GruDeltaT => "gru-dt",
            BaselineKind::GruS => "gru-s",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

/// A regular grid: `grid_size` rows of `feature_dim` values, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Imputed {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Imputed {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn bin_of(t: f64, grid: usize) -> usize {
    ((t * grid as f64).floor().max(0.0) as usize).min(grid - 1)
}

/// Resamples `series` (normalized to `[0, 1]`) onto `grid_size` bins. Bins
/// holding observations take their mean; empty bins are filled per
/// `method`. Row layout: channel values, then the extra features.
pub fn impute(series: &IrregularSeries, cfg: &ImputeConfig) -> Result<Imputed> {
    cfg.validate()?;
    let norm = series.normalized()?;
    let g = cfg.grid_size;
    let d = norm.num_channels();
    let cols = cfg.feature_dim(d);
    let mut data = vec![0.0; g * cols];

    for (c, ch) in norm.channels.iter().enumerate() {
        let mut sum = vec![0.0; g];
        let mut count = vec![0usize; g];
        for (t, v) in ch.pairs() {
            let b = bin_of(t, g);
            sum[b] += v;
            count[b] += 1;
        }
        let global = if ch.is_empty() {
            0.0
        } else {
            ch.values.iter().sum::<f64>() / ch.len() as f64
        };
        let observed: Vec<usize> = (0..g).filter(|&b| count[b] > 0).collect();
        let mean_at = |b: usize| sum[b] / count[b] as f64;

        let mut next = 0; // index into `observed` of the first bin >= b
        for b in 0..g {
            while next < observed.len() && observed[next] < b {
                next += 1;
            }
            let value = if count[b] > 0 {
                mean_at(b)
            } else {
                match cfg.method {
                    FillMethod::Mean => global,
                    FillMethod::Linear => {
                        let before = next.checked_sub(1).map(|k| observed[k]);
                        let after = observed.get(next).copied();
                        match (before, after) {
                            (Some(l), Some(r)) => {
                                let f = (b - l) as f64 / (r - l) as f64;
                                mean_at(l) + f * (mean_at(r) - mean_at(l))
                            }
                            (Some(l), None) => mean_at(l),
                            (None, Some(r)) => mean_at(r),
                            (None, None) => 0.0,
                        }
                    }
                }
            };
            data[b * cols + c] = value;
        }

        match cfg.extra {
            ExtraFeature::None => {}
            ExtraFeature::Mask => {
                for b in 0..g {
                    data[b * cols + d + c] = (count[b] > 0) as u8 as f64;
                }
            }
            ExtraFeature::DeltaT => {
                let mut last: Option<usize> = None;
                for b in 0..g {
                    if count[b] > 0 {
                        last = Some(b);
                    }
                    data[b * cols + d + c] = match last {
                        Some(l) => (b - l) as f64 / g as f64,
                        None => (b + 1) as f64 / g as f64,
                    };
                }
            }
        }
    }
    Ok(Imputed {
        rows: g,
        cols,
        data,
    })
}

#[derive(Clone, Debug)]
pub struct ImputedInstance {
    pub grid: Imputed,
    pub label: usize,
}

pub fn impute_dataset(data: &LabeledDataset, cfg: &ImputeConfig) -> Result<Vec<ImputedInstance>> {
    data.instances
        .par_iter()
        .map(|inst| {
            Ok(ImputedInstance {
                grid: impute(&inst.series, cfg)?,
                label: inst.label,
            })
        })
        .collect()
}

/// GRU over the imputed grid followed by a linear softmax head.
#[derive(Clone, Copy, Debug)]
pub struct GruClassifier {
    pub gru: GruCell,
    pub head: Linear,
}

impl GruClassifier {
    pub fn new(
        store: &mut ParamStore,
        input: usize,
        hidden: usize,
        num_classes: usize,
        rng: &mut Rng,
    ) -> Self {
        GruClassifier {
            gru: GruCell::new(store, "gru", input, hidden, rng),
            head: Linear::new(store, "head", hidden, num_classes, rng),
        }
    }

    /// Logits after unrolling over every grid row.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, grid: &Imputed) -> Result<NodeId> {
        if grid.cols != self.gru.input {
            return Err(Error::DimMismatch(format!(
                "GRU expects {} features per step, grid has {}",
                self.gru.input, grid.cols
            )));
        }
        let mut h = tape.input(vec![0.0; self.gru.hidden]);
        for i in 0..grid.rows {
            let x = tape.input(grid.row(i).to_vec());
            h = self.gru.forward(tape, store, x, h)?;
        }
        self.head.forward(tape, store, h)
    }

    pub fn predict(&self, store: &ParamStore, grid: &Imputed) -> Result<usize> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, store, grid)?;
        Ok(crate::agent::argmax(tape.value(logits)))
    }
}

pub fn evaluate_baseline(
    model: &GruClassifier,
    store: &ParamStore,
    data: &[ImputedInstance],
) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let preds = data
        .par_iter()
        .map(|inst| model.predict(store, &inst.grid))
        .collect::<Result<Vec<_>>>()?;
    let correct = preds
        .iter()
        .zip(data)
        .filter(|(p, i)| **p == i.label)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Cross-entropy training with the shared epoch loop; one recurrent step
/// per grid row.
pub fn fit_baseline(
    model: &GruClassifier,
    store: &mut ParamStore,
    train_set: &[ImputedInstance],
    val: &[ImputedInstance],
    cfg: &TrainConfig,
) -> Result<(ParamStore, RunMetrics)> {
    let steps = train_set.first().map_or(0, |i| i.grid.rows as u64);
    train::run_epochs(
        store,
        train_set.len(),
        steps,
        cfg,
        |store, i, scale, _rng| {
            let inst = &train_set[i];
            let mut tape = Tape::new();
            let logits = model.forward(&mut tape, store, &inst.grid)?;
            let loss = train::cross_entropy(&mut tape, logits, inst.label)?;
            let grads = tape.gradients(loss, store)?;
            store.accumulate(&grads, scale);
            Ok(StepLosses {
                supervised: tape.scalar(loss),
                correct: crate::agent::argmax(tape.value(logits)) == inst.label,
                ..StepLosses::default()
            })
        },
        |store| {
            if val.is_empty() {
                Ok(None)
            } else {
                evaluate_baseline(model, store, val).map(Some)
            }
        },
    )
}

/// Imputes `train_set`/`val`, builds a fresh classifier with `hidden` units
/// seeded from `cfg.seed` and trains it.
pub fn train_baseline(
    train_set: &LabeledDataset,
    val: &LabeledDataset,
    impute_cfg: &ImputeConfig,
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<(GruClassifier, ParamStore, RunMetrics)> {
    let tr = impute_dataset(train_set, impute_cfg)?;
    let va = impute_dataset(val, impute_cfg)?;
    let mut store = ParamStore::new();
    let model = GruClassifier::new(
        &mut store,
        impute_cfg.feature_dim(train_set.num_channels()),
        hidden,
        train_set.num_classes,
        &mut rng::stream(cfg.seed, rng::streams::INIT),
    );
    let (best, metrics) = fit_baseline(&model, &mut store, &tr, &va, cfg)?;
    Ok((model, best, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{Channel, DatasetMeta, Instance};

    fn series(pairs: &[(f64, f64)]) -> IrregularSeries {
        IrregularSeries::new("s", vec![Channel::from_pairs(pairs)]).unwrap()
    }

    fn cfg(g: usize, method: FillMethod, extra: ExtraFeature) -> ImputeConfig {
        ImputeConfig {
            grid_size: g,
            method,
            extra,
        }
    }

    #[test]
    fn single_observation_mean_fill() {
        let out = impute(
            &series(&[(0.4, 3.5)]),
            &cfg(8, FillMethod::Mean, ExtraFeature::None),
        )
        .unwrap();
        assert!(out.data.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn aligned_dense_input_is_identity() {
        let t = 50;
        let pts: Vec<(f64, f64)> = (0..t).map(|i| (i as f64, (i as f64 * 0.3).cos())).collect();
        let out = impute(
            &series(&pts),
            &cfg(t, FillMethod::Linear, ExtraFeature::Mask),
        )
        .unwrap();
        for (i, (_, v)) in pts.iter().enumerate() {
            assert_eq!(out.row(i), &[*v, 1.0]);
        }
    }

    #[test]
    fn linear_ramp_between_ends() {
        let out = impute(
            &series(&[(0.0, 0.0), (1.0, 9.0)]),
            &cfg(10, FillMethod::Linear, ExtraFeature::None),
        )
        .unwrap();
        for b in 0..10 {
            assert!((out.data[b] - b as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_edges_are_flat() {
        let out = impute(
            &series(&[(0.45, 2.0), (0.55, 4.0), (1.0, 4.0)]),
            &cfg(10, FillMethod::Linear, ExtraFeature::None),
        )
        .unwrap();
        assert_eq!(&out.data[..4], &[2.0; 4]);
    }

    #[test]
    fn bin_mean_aggregates() {
        let out = impute(
            &series(&[(0.01, 1.0), (0.02, 3.0), (1.0, 10.0)]),
            &cfg(4, FillMethod::Mean, ExtraFeature::None),
        )
        .unwrap();
        assert_eq!(out.data[0], 2.0);
        assert_eq!(out.data[1], 14.0 / 3.0);
        assert_eq!(out.data[3], 10.0);
    }

    #[test]
    fn delta_t_and_mask() {
        let s = series(&[(0.3, 1.0), (1.0, 1.0)]);
        let dt = impute(&s, &cfg(10, FillMethod::Mean, ExtraFeature::DeltaT)).unwrap();
        let deltas: Vec<f64> = (0..10).map(|b| dt.row(b)[1]).collect();
        assert_eq!(deltas[0], 0.1);
        assert_eq!(deltas[3], 0.0);
        assert!((deltas[5] - 0.2).abs() < 1e-15);
        assert_eq!(deltas[9], 0.0);
        let mask = impute(&s, &cfg(10, FillMethod::Mean, ExtraFeature::Mask)).unwrap();
        let m: Vec<f64> = (0..10).map(|b| mask.row(b)[1]).collect();
        assert_eq!(m, vec![0., 0., 0., 1., 0., 0., 0., 0., 0., 1.]);
    }

    #[test]
    fn empty_series_errors() {
        let s = IrregularSeries::new("e", vec![Channel::default()]).unwrap();
        assert!(matches!(
            impute(&s, &ImputeConfig::default()),
            Err(Error::EmptySeries)
        ));
    }

    #[test]
    fn kinds_parse() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("gru-d".parse::<BaselineKind>().is_err());
    }

    #[test]
    fn memorizes_ten_instances() {
        let instances = (0..10)
            .map(|i| {
                let label = i % 2;
                let pts: Vec<(f64, f64)> = (0..20)
                    .map(|j| {
                        (
                            j as f64,
                            if label == 0 {
                                j as f64 / 20.0
                            } else {
                                -(j as f64) / 20.0
                            } + 0.01 * i as f64,
                        )
                    })
                    .collect();
                Instance {
                    series: IrregularSeries::new(format!("b{i}"), vec![Channel::from_pairs(&pts)])
                        .unwrap(),
                    label,
                }
            })
            .collect();
        let ds = LabeledDataset::new(DatasetMeta::default(), 2, instances).unwrap();
        let tc = TrainConfig {
            epochs: 30,
            adam: crate::diffnet::AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..TrainConfig::default()
        };
        let ic = cfg(20, FillMethod::Mean, ExtraFeature::None);
        let (model, best, metrics) = train_baseline(&ds, &ds, &ic, 8, &tc).unwrap();
        assert_eq!(metrics.rows[0].recurrent_steps, 10 * 20);
        let acc = evaluate_baseline(&model, &best, &impute_dataset(&ds, &ic).unwrap()).unwrap();
        assert_eq!(acc, 1.0);
    }
}
