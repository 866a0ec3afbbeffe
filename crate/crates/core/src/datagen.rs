//! Synthetic and simulated irregular data: the M/Π pattern task, an
//! event-triggered listening probe over regular streams, random
//! downsampling and class balancing.

use std::io::Read;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};
use crate::series::{Channel, DatasetMeta, Instance, IrregularSeries, LabeledDataset};

/// Class index of the `(1, 1, 1)` pattern.
pub const PI_CLASS: usize = 0;
/// Class index of the `(1, 0, 1)` pattern.
pub const M_CLASS: usize = 1;

/// Gap inserted between colliding timestamps.
const TIE_NUDGE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpiConfig {
    pub n: usize,
    /// Observations per series.
    pub series_len: usize,
    /// Width `Δ` of the planted pattern as a fraction of the timeline.
    pub signal_width: f64,
    pub seed: u64,
    /// Draw noise timestamps only outside the planted window, so the
    /// pattern sits in a sparse gap of the timeline. When false, noise
    /// covers the whole timeline including the pattern's window.
    pub noise_outside_signal: bool,
}

impl Default for MpiConfig {
    fn default() -> Self {
        MpiConfig {
            n: 5000,
            series_len: 500,
            signal_width: 0.1,
            seed: 0,
            noise_outside_signal: true,
        }
    }
}

impl MpiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.series_len < 3 {
            return Err(Error::Config(format!(
                "series_len must be >= 3, got {}",
                self.series_len
            )));
        }
        if !(self.signal_width > 0.0 && self.signal_width < 1.0) {
            return Err(Error::Config(format!(
                "signal_width must be in (0, 1), got {}",
                self.signal_width
            )));
        }
        if self.n == 0 || !self.n.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "n must be even and positive, got {}",
                self.n
            )));
        }
        Ok(())
    }
}

fn pattern(label: usize) -> [f64; 3] {
    if label == PI_CLASS {
        [1.0, 1.0, 1.0]
    } else {
        [1.0, 0.0, 1.0]
    }
}

fn mpi_series(cfg: &MpiConfig, i: usize) -> Instance {
    let mut rng = rng::item_stream(cfg.seed, streams::DATAGEN, i as u64);
    let label = i % 2;
    let d = cfg.signal_width;
    let c = rng.random_range(d / 2.0..=1.0 - d / 2.0);
    let lo = c - d / 2.0;

    // (time, value, is_noise): signal sorts first on equal times so that
    // only noise observations are ever nudged.
    let mut obs: Vec<(f64, f64, bool)> = Vec::with_capacity(cfg.series_len);
    for (k, v) in pattern(label).into_iter().enumerate() {
        obs.push((lo + k as f64 * d / 2.0, v, false));
    }
    for _ in 3..cfg.series_len {
        let t = if cfg.noise_outside_signal {
            let u = rng.random_range(0.0..=1.0 - d);
            if u < lo {
                u
            } else {
                u + d
            }
        } else {
            rng.random_range(0.0..=1.0)
        };
        let v: f64 = StandardNormal.sample(&mut rng);
        obs.push((t, v, true));
    }
    obs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    for k in 1..obs.len() {
        if obs[k].0 <= obs[k - 1].0 {
            obs[k].0 = obs[k - 1].0 + TIE_NUDGE;
        }
    }
    let channel = Channel::new(
        obs.iter().map(|o| o.0).collect(),
        obs.iter().map(|o| o.1).collect(),
    );
    Instance {
        series: IrregularSeries {
            id: format!("mpi-{i:05}"),
            channels: vec![channel],
            origin_t0: None,
        },
        label,
    }
}

/// Generates the balanced two-class pattern dataset. Instance `i` has label
/// `i mod 2` and draws from its own random stream.
pub fn gen_mpi(cfg: &MpiConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let instances: Vec<Instance> = (0..cfg.n)
        .into_par_iter()
        .map(|i| mpi_series(cfg, i))
        .collect();
    let meta = DatasetMeta {
        name: "mpi".into(),
        seed: Some(cfg.seed),
        params: Some(serde_json::to_value(cfg)?),
    };
    LabeledDataset::new(meta, 2, instances)
}

/// Looks for three observations at evenly spaced times `a, a + Δ/2, a + Δ`
/// carrying one of the two planted patterns and returns its class.
pub fn find_planted_signal(series: &IrregularSeries, signal_width: f64) -> Option<usize> {
    const TOL: f64 = 1e-9;
    let ch = series.channels.first()?;
    let at = |t: f64| -> Option<f64> {
        let k = ch.times.partition_point(|&s| s < t - TOL);
        (k < ch.len() && (ch.times[k] - t).abs() <= TOL).then(|| ch.values[k])
    };
    for (t, v) in ch.pairs() {
        if v != 1.0 {
            continue;
        }
        let (Some(mid), Some(end)) = (at(t + signal_width / 2.0), at(t + signal_width)) else {
            continue;
        };
        if end != 1.0 {
            continue;
        }
        if mid == 1.0 {
            return Some(PI_CLASS);
        }
        if mid == 0.0 {
            return Some(M_CLASS);
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// A record is kept when its distance to the previous record exceeds this.
    pub gamma: f64,
    pub window_len: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            gamma: 0.001,
            window_len: 200,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.window_len < 2 {
            return Err(Error::Config("window_len must be >= 2".into()));
        }
        Ok(())
    }
}

/// A regularly sampled multichannel stream with shared timestamps and
/// optional per-record labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegularSeries {
    pub times: Vec<f64>,
    /// Channel-major values, each as long as `times`.
    pub channels: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
}

impl RegularSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::NoChannels);
        }
        if self.channels.iter().any(|c| c.len() != self.len())
            || self.labels.as_ref().is_some_and(|l| l.len() != self.len())
        {
            return Err(Error::Schema(
                "all columns must have one entry per timestamp".into(),
            ));
        }
        for (i, w) in self.times.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::UnsortedTimestamps {
                    channel: 0,
                    index: i + 1,
                });
            }
        }
        Ok(())
    }

    fn record_distance(&self, i: usize) -> f64 {
        self.channels
            .iter()
            .map(|c| (c[i] - c[i - 1]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Reads a CSV stream with header `t,<channel>,...`; a column named `label`
/// holds optional integer record labels.
pub fn read_regular_csv<R: Read>(reader: R) -> Result<RegularSeries> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("t") {
        return Err(Error::Schema("first CSV column must be `t`".into()));
    }
    let label_col = headers.iter().position(|h| h == "label");
    let value_cols: Vec<usize> = (1..headers.len())
        .filter(|&c| Some(c) != label_col)
        .collect();
    let mut out = RegularSeries {
        channels: vec![Vec::new(); value_cols.len()],
        labels: label_col.map(|_| Vec::new()),
        ..RegularSeries::default()
    };
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let num = |c: usize| -> Result<f64> {
            let v: f64 = rec
                .get(c)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("column {c}: {e}"),
                })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    line,
                    message: format!("column {c}: non-finite value"),
                })
            }
        };
        out.times.push(num(0)?);
        for (k, &c) in value_cols.iter().enumerate() {
            out.channels[k].push(num(c)?);
        }
        if let (Some(c), Some(labels)) = (label_col, out.labels.as_mut()) {
            let l = rec
                .get(c)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("label: {e}"),
                })?;
            labels.push(l);
        }
    }
    out.validate()?;
    Ok(out)
}

pub fn read_regular_csv_file(path: impl AsRef<Path>) -> Result<RegularSeries> {
    read_regular_csv(std::fs::File::open(path)?)
}

/// Cuts `input` into consecutive windows of `window_len` records (dropping
/// a short tail) and keeps, within each window, the records whose Euclidean
/// distance to the preceding record exceeds `gamma`. The first record of a
/// window is never kept. Timestamps are made relative to the window's first
/// timestamp, which is recorded as the series origin.
pub fn listening_probe(input: &RegularSeries, cfg: &ProbeConfig) -> Result<Vec<IrregularSeries>> {
    cfg.validate()?;
    input.validate()?;
    if input.len() < cfg.window_len {
        return Err(Error::TooShort(format!(
            "{} records, need at least {}",
            input.len(),
            cfg.window_len
        )));
    }
    let d = input.channels.len();
    let windows = input.len() / cfg.window_len;
    let mut out = Vec::with_capacity(windows);
    for w in 0..windows {
        let start = w * cfg.window_len;
        let t0 = input.times[start];
        let mut channels = vec![Channel::default(); d];
        for i in start + 1..start + cfg.window_len {
            if input.record_distance(i) > cfg.gamma {
                for (ch, src) in channels.iter_mut().zip(&input.channels) {
                    ch.times.push(input.times[i] - t0);
                    ch.values.push(src[i]);
                }
            }
        }
        out.push(IrregularSeries::new(format!("w{w:05}"), channels)?.with_origin(t0));
    }
    Ok(out)
}

/// Runs the probe and labels each window with the largest record label in
/// it (so a window touching a positive record is positive). Windows with no
/// kept record are dropped.
pub fn probe_dataset(
    input: &RegularSeries,
    cfg: &ProbeConfig,
    name: &str,
) -> Result<LabeledDataset> {
    let labels = input
        .labels
        .as_ref()
        .ok_or_else(|| Error::Schema("input stream has no `label` column".into()))?;
    let windows = listening_probe(input, cfg)?;
    let mut instances = Vec::new();
    for (w, series) in windows.into_iter().enumerate() {
        if series.num_observations() == 0 {
            continue;
        }
        let start = w * cfg.window_len;
        let label = labels[start..start + cfg.window_len]
            .iter()
            .copied()
            .max()
            .unwrap_or(0);
        instances.push(Instance { series, label });
    }
    let num_classes = instances
        .iter()
        .map(|i| i.label + 1)
        .max()
        .unwrap_or(1)
        .max(2);
    let meta = DatasetMeta {
        name: name.into(),
        seed: None,
        params: Some(serde_json::to_value(cfg)?),
    };
    LabeledDataset::new(meta, num_classes, instances)
}

fn downsample_with(
    series: &IrregularSeries,
    fraction: f64,
    rng: &mut Rng,
) -> Result<IrregularSeries> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let channels = series
        .channels
        .iter()
        .map(|ch| {
            let keep = ((fraction * ch.len() as f64).round() as usize).min(ch.len());
            let mut idx = index::sample(rng, ch.len(), keep).into_vec();
            idx.sort_unstable();
            Channel::new(
                idx.iter().map(|&i| ch.times[i]).collect(),
                idx.iter().map(|&i| ch.values[i]).collect(),
            )
        })
        .collect();
    Ok(IrregularSeries {
        id: series.id.clone(),
        channels,
        origin_t0: series.origin_t0,
    })
}

/// Keeps `round(fraction · len)` uniformly chosen observations per channel,
/// in their original order.
pub fn random_downsample(
    series: &IrregularSeries,
    fraction: f64,
    seed: u64,
) -> Result<IrregularSeries> {
    downsample_with(
        series,
        fraction,
        &mut rng::stream(seed, streams::DOWNSAMPLE),
    )
}

/// Downsamples every instance with its own random stream.
pub fn downsample_dataset(
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let instances = data
        .instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut r = rng::item_stream(seed, streams::DOWNSAMPLE, i as u64);
            Ok(Instance {
                series: downsample_with(&inst.series, fraction, &mut r)?,
                label: inst.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(data.subset(instances))
}

/// Subsamples the majority class of a binary dataset down to the minority
/// count; surviving instances keep their relative order.
pub fn balance_classes(data: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    if data.num_classes != 2 {
        return Err(Error::Config(format!(
            "balancing needs binary labels, dataset has {} classes",
            data.num_classes
        )));
    }
    let counts = data.class_counts();
    let minority = counts[0].min(counts[1]);
    if minority == 0 {
        return Err(Error::SingleClass);
    }
    let major = if counts[0] > counts[1] { 0 } else { 1 };
    let major_idx: Vec<usize> = (0..data.len())
        .filter(|&i| data.instances[i].label == major)
        .collect();
    let mut rng = rng::stream(seed, streams::BALANCE);
    let mut keep = vec![true; data.len()];
    if counts[major] > minority {
        keep.iter_mut()
            .enumerate()
            .filter(|(i, _)| data.instances[*i].label == major)
            .for_each(|(_, k)| *k = false);
        for j in index::sample(&mut rng, major_idx.len(), minority) {
            keep[major_idx[j]] = true;
        }
    }
    let instances = data
        .instances
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(inst, _)| inst.clone())
        .collect();
    Ok(data.subset(instances))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, delta: f64, outside: bool) -> MpiConfig {
        MpiConfig {
            n,
            series_len: 100,
            signal_width: delta,
            seed: 7,
            noise_outside_signal: outside,
        }
    }

    #[test]
    fn mpi_shape_and_balance() {
        let ds = gen_mpi(&small(20, 0.1, true)).unwrap();
        assert_eq!(ds.len(), 20);
        assert_eq!(ds.class_counts(), vec![10, 10]);
        for inst in &ds.instances {
            assert_eq!(inst.series.channels[0].len(), 100);
            inst.series.validate().unwrap();
        }
    }

    #[test]
    fn mpi_planted_signal_found() {
        for outside in [true, false] {
            let ds = gen_mpi(&small(40, 0.04, outside)).unwrap();
            for inst in &ds.instances {
                assert_eq!(find_planted_signal(&inst.series, 0.04), Some(inst.label));
            }
        }
    }

    #[test]
    fn mpi_noise_avoids_window() {
        let ds = gen_mpi(&small(10, 0.2, true)).unwrap();
        for inst in &ds.instances {
            let ch = &inst.series.channels[0];
            let first = ch
                .pairs()
                .position(|(t, v)| v == 1.0 && ch.pairs().any(|(s, _)| (s - t - 0.2).abs() < 1e-9));
            let lo = ch.times[first.unwrap()];
            let inside = ch
                .times
                .iter()
                .filter(|&&t| t >= lo && t <= lo + 0.2 + 1e-9)
                .count();
            assert_eq!(inside, 3);
        }
    }

    #[test]
    fn mpi_is_deterministic() {
        let a = gen_mpi(&small(6, 0.1, true)).unwrap();
        let b = gen_mpi(&small(6, 0.1, true)).unwrap();
        assert_eq!(a, b);
        let mut cfg = small(6, 0.1, true);
        cfg.seed = 8;
        assert_ne!(a, gen_mpi(&cfg).unwrap());
    }

    #[test]
    fn mpi_rejects_bad_config() {
        assert!(gen_mpi(&small(5, 0.1, true)).is_err());
        assert!(gen_mpi(&small(4, 1.0, true)).is_err());
        let mut cfg = small(4, 0.1, true);
        cfg.series_len = 2;
        assert!(gen_mpi(&cfg).is_err());
    }

    fn regular(values: Vec<Vec<f64>>) -> RegularSeries {
        let n = values[0].len();
        RegularSeries {
            times: (0..n).map(|i| i as f64).collect(),
            channels: values,
            labels: None,
        }
    }

    #[test]
    fn probe_constant_is_empty() {
        let r = regular(vec![vec![3.0; 10]]);
        let cfg = ProbeConfig {
            gamma: 0.001,
            window_len: 4,
        };
        let out = listening_probe(&r, &cfg).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|s| s.num_observations() == 0));
    }

    #[test]
    fn probe_step_keeps_single_record() {
        let mut ch = vec![0.0; 8];
        ch[5..].iter_mut().for_each(|v| *v = 0.1);
        let r = regular(vec![ch.clone(), ch.clone(), ch]);
        let cfg = ProbeConfig {
            gamma: 0.001,
            window_len: 8,
        };
        let out = listening_probe(&r, &cfg).unwrap();
        assert_eq!(out[0].channels[0].times, vec![5.0]);
        assert_eq!(out[0].channels[2].values, vec![0.1]);
    }

    #[test]
    fn probe_zero_gamma_keeps_all_movement() {
        let r = regular(vec![(0..6).map(|i| i as f64).collect()]);
        let cfg = ProbeConfig {
            gamma: 0.0,
            window_len: 3,
        };
        let out = listening_probe(&r, &cfg).unwrap();
        assert_eq!(out[0].channels[0].times, vec![1.0, 2.0]);
        assert_eq!(out[1].channels[0].times, vec![1.0, 2.0]);
        assert_eq!(out[1].origin_t0, Some(3.0));
    }

    #[test]
    fn probe_too_short() {
        let r = regular(vec![vec![0.0; 3]]);
        assert!(matches!(
            listening_probe(
                &r,
                &ProbeConfig {
                    gamma: 0.1,
                    window_len: 4
                }
            ),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn csv_ingest_and_labels() {
        let csv = "t,ch0,label,ch1\n0,0,0,0\n1,1,0,0\n2,1,1,0\n3,2,0,0\n";
        let r = read_regular_csv(csv.as_bytes()).unwrap();
        assert_eq!(r.channels.len(), 2);
        assert_eq!(r.labels.as_deref(), Some(&[0, 0, 1, 0][..]));
        let ds = probe_dataset(
            &r,
            &ProbeConfig {
                gamma: 0.5,
                window_len: 2,
            },
            "x",
        )
        .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.instances[1].label, 1);
        assert!(read_regular_csv("x,ch0\n0,1\n".as_bytes()).is_err());
        assert!(matches!(
            read_regular_csv("t,ch0\n0,1\n1,abc\n".as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn downsample_rules() {
        let pts: Vec<(f64, f64)> = (0..945).map(|i| (i as f64, (i as f64).sin())).collect();
        let s = IrregularSeries::new("g", vec![Channel::from_pairs(&pts)]).unwrap();
        let d = random_downsample(&s, 0.1, 3).unwrap();
        assert!((94..=95).contains(&d.channels[0].len()));
        d.validate().unwrap();
        assert!(d.channels[0].pairs().all(|p| pts.contains(&p)));
        assert_eq!(d, random_downsample(&s, 0.1, 3).unwrap());
        assert_eq!(random_downsample(&s, 1.0, 3).unwrap(), s);
        assert!(random_downsample(&s, 0.0, 3).is_err());
    }

    fn labeled(pos: usize, neg: usize) -> LabeledDataset {
        let instances = (0..pos + neg)
            .map(|i| Instance {
                series: IrregularSeries::new(
                    format!("s{i}"),
                    vec![Channel::from_pairs(&[(0.0, i as f64)])],
                )
                .unwrap(),
                label: usize::from(i < pos),
            })
            .collect();
        LabeledDataset::new(DatasetMeta::default(), 2, instances).unwrap()
    }

    #[test]
    fn balancing() {
        let ds = labeled(100, 60);
        let b = balance_classes(&ds, 1).unwrap();
        assert_eq!(b.class_counts(), vec![60, 60]);
        assert_eq!(b, balance_classes(&ds, 1).unwrap());
        let even = labeled(5, 5);
        assert_eq!(balance_classes(&even, 1).unwrap(), even);
        assert!(matches!(
            balance_classes(&labeled(3, 0), 1),
            Err(Error::SingleClass)
        ));
    }
}
