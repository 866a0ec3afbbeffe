//! Labeled irregularly-sampled multivariate time series.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One variable of a series: parallel timestamp and value sequences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Channel {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Channel {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len(), "times/values length mismatch");
        Channel { times, values }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let (times, values) = pairs.iter().copied().unzip();
        Channel { times, values }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }

    fn validate(&self, channel: usize) -> Result<()> {
        for (index, (t, v)) in self.pairs().enumerate() {
            if !t.is_finite() || !v.is_finite() {
                return Err(Error::NonFiniteValue { channel, index });
            }
            if t < 0.0 {
                return Err(Error::NegativeTimestamp { channel, index });
            }
            if index > 0 && t <= self.times[index - 1] {
                return Err(Error::UnsortedTimestamps { channel, index });
            }
        }
        Ok(())
    }
}

/// A multivariate series whose channels are sampled at their own times.
#[derive(Clone, Debug, PartialEq)]
pub struct IrregularSeries {
    pub id: String,
    pub channels: Vec<Channel>,
    /// Absolute start time of the segment the series was cut from, used by
    /// temporal splits.
    pub origin_t0: Option<f64>,
}

impl IrregularSeries {
    /// Builds a series and checks its invariants.
    pub fn new(id: impl Into<String>, channels: Vec<Channel>) -> Result<Self> {
        let series = IrregularSeries {
            id: id.into(),
            channels,
            origin_t0: None,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn with_origin(mut self, t0: f64) -> Self {
        self.origin_t0 = Some(t0);
        self
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn num_observations(&self) -> usize {
        self.channels.iter().map(Channel::len).sum()
    }

    /// Checks sortedness, finiteness and non-negativity of every channel.
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::NoChannels);
        }
        for (c, ch) in self.channels.iter().enumerate() {
            ch.validate(c)?;
        }
        Ok(())
    }

    /// Largest timestamp over all channels.
    pub fn max_timestamp(&self) -> Result<f64> {
        self.channels
            .iter()
            .filter_map(|c| c.times.last().copied())
            .reduce(f64::max)
            .ok_or(Error::EmptySeries)
    }

    /// Per-channel observations inside the closed interval
    /// `[center - width/2, center + width/2]`.
    pub fn window(&self, center: f64, width: f64) -> Vec<WindowSlice<'_>> {
        assert!(width > 0.0, "window width must be positive");
        let lo = center - width / 2.0;
        let hi = center + width / 2.0;
        self.channels
            .iter()
            .map(|ch| {
                let start = ch.times.partition_point(|&t| t < lo);
                let end = ch.times.partition_point(|&t| t <= hi);
                let end = end.max(start);
                WindowSlice {
                    times: &ch.times[start..end],
                    values: &ch.values[start..end],
                }
            })
            .collect()
    }

    /// Copy with all timestamps divided by the series' largest timestamp, so
    /// the timeline becomes `[0, 1]`. A series whose only timestamp is 0 is
    /// left unscaled.
    pub fn normalized(&self) -> Result<IrregularSeries> {
        let max_t = self.max_timestamp()?;
        let denom = if max_t > 0.0 { max_t } else { 1.0 };
        let channels = self
            .channels
            .iter()
            .map(|ch| Channel {
                times: ch.times.iter().map(|t| t / denom).collect(),
                values: ch.values.clone(),
            })
            .collect();
        Ok(IrregularSeries {
            id: self.id.clone(),
            channels,
            origin_t0: self.origin_t0,
        })
    }
}

/// Borrowed view of one channel restricted to a window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowSlice<'a> {
    pub times: &'a [f64],
    pub values: &'a [f64],
}

impl WindowSlice<'_> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub series: IrregularSeries,
    pub label: usize,
}

/// Free-form provenance attached to a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: Option<u64>,
    /// Generator parameters, if the data was synthesized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub meta: DatasetMeta,
    pub num_classes: usize,
    pub instances: Vec<Instance>,
}

impl LabeledDataset {
    pub fn new(meta: DatasetMeta, num_classes: usize, instances: Vec<Instance>) -> Result<Self> {
        let ds = LabeledDataset {
            meta,
            num_classes,
            instances,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Channel count of the first instance (all instances must agree).
    pub fn num_channels(&self) -> usize {
        self.instances
            .first()
            .map_or(0, |i| i.series.num_channels())
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        let d = self.num_channels();
        for inst in &self.instances {
            if inst.label >= self.num_classes {
                return Err(Error::Schema(format!(
                    "instance `{}` has label {} but num_classes is {}",
                    inst.series.id, inst.label, self.num_classes
                )));
            }
            if !ids.insert(inst.series.id.as_str()) {
                return Err(Error::Schema(format!("duplicate id `{}`", inst.series.id)));
            }
            if inst.series.num_channels() != d {
                return Err(Error::Schema(format!(
                    "instance `{}` has {} channels, expected {d}",
                    inst.series.id,
                    inst.series.num_channels()
                )));
            }
            inst.series.validate()?;
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for inst in &self.instances {
            counts[inst.label] += 1;
        }
        counts
    }

    /// A dataset with the same metadata holding the given instances.
    pub fn subset(&self, instances: Vec<Instance>) -> LabeledDataset {
        LabeledDataset {
            meta: self.meta.clone(),
            num_classes: self.num_classes,
            instances,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Temporal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
            mode: SplitMode::Random,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("split fractions must lie in [0, 1]".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Partitions `dataset` into train/validation/test sets.
///
/// Partition sizes are `round(train·n)`, `round(val·n)` and the remainder.
/// A partition with a non-zero fraction that ends up empty is an error.
pub fn split(
    dataset: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyPartition("source"));
    }
    let n_train = ((spec.train * n as f64).round() as usize).min(n);
    let n_val = ((spec.val * n as f64).round() as usize).min(n - n_train);
    let n_test = n - n_train - n_val;
    for (name, frac, count) in [
        ("train", spec.train, n_train),
        ("validation", spec.val, n_val),
        ("test", spec.test, n_test),
    ] {
        if frac > 0.0 && count == 0 {
            return Err(Error::EmptyPartition(name));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    match spec.mode {
        SplitMode::Random => {
            let mut rng = rng::stream(spec.seed, rng::streams::SPLIT);
            order.shuffle(&mut rng);
        }
        SplitMode::Temporal => {
            let mut keys = Vec::with_capacity(n);
            for inst in &dataset.instances {
                let t0 = inst.series.origin_t0.ok_or_else(|| {
                    Error::Schema(format!(
                        "temporal split needs origin_t0 on instance `{}`",
                        inst.series.id
                    ))
                })?;
                keys.push(t0);
            }
            order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]).then(a.cmp(&b)));
        }
    }

    let take =
        |idx: &[usize]| dataset.subset(idx.iter().map(|&i| dataset.instances[i].clone()).collect());
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(pairs: &[(f64, f64)]) -> Result<IrregularSeries> {
        IrregularSeries::new("s", vec![Channel::from_pairs(pairs)])
    }

    fn toy_dataset(n: usize) -> LabeledDataset {
        let instances = (0..n)
            .map(|i| Instance {
                series: one(&[(0.0, i as f64), (1.0, 0.0)])
                    .unwrap()
                    .with_origin(100.0 - i as f64),
                label: i % 2,
            })
            .enumerate()
            .map(|(i, mut inst)| {
                inst.series.id = format!("s{i}");
                inst
            })
            .collect();
        LabeledDataset::new(DatasetMeta::default(), 2, instances).unwrap()
    }

    #[test]
    fn validate_examples() {
        assert!(one(&[(0.0, 1.0), (1.0, 2.0)]).is_ok());
        assert!(matches!(
            one(&[(1.0, 2.0), (0.0, 1.0)]),
            Err(Error::UnsortedTimestamps { .. })
        ));
        assert!(matches!(
            one(&[(0.0, f64::NAN)]),
            Err(Error::NonFiniteValue { .. })
        ));
        assert!(matches!(
            one(&[(-1.0, 0.0)]),
            Err(Error::NegativeTimestamp { .. })
        ));
        // duplicates are rejected
        assert!(matches!(
            one(&[(1.0, 0.0), (1.0, 0.0)]),
            Err(Error::UnsortedTimestamps { .. })
        ));
    }

    #[test]
    fn max_timestamp_examples() {
        let s = IrregularSeries::new(
            "a",
            vec![
                Channel::from_pairs(&[(0.0, 0.0), (3.0, 0.0)]),
                Channel::from_pairs(&[(5.0, 0.0)]),
            ],
        )
        .unwrap();
        assert_eq!(s.max_timestamp().unwrap(), 5.0);
        assert_eq!(one(&[(2.5, 1.0)]).unwrap().max_timestamp().unwrap(), 2.5);
        let empty =
            IrregularSeries::new("e", vec![Channel::default(), Channel::default()]).unwrap();
        assert!(matches!(empty.max_timestamp(), Err(Error::EmptySeries)));
    }

    #[test]
    fn window_examples() {
        let s = one(&[(0.0, 1.0), (0.5, 2.0), (1.0, 3.0)]).unwrap();
        let w = s.window(0.5, 0.4);
        assert_eq!(w[0].times, &[0.5]);
        assert_eq!(w[0].values, &[2.0]);
        assert_eq!(s.window(0.5, 2.0)[0].len(), 3);
        assert!(s.window(10.0, 0.1)[0].is_empty());
        // closed bounds
        assert_eq!(s.window(0.25, 0.5)[0].times, &[0.0, 0.5]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy_dataset(10);
        let spec = SplitSpec {
            seed: 1,
            ..SplitSpec::default()
        };
        let (a, b, c) = split(&ds, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let (a2, b2, c2) = split(&ds, &spec).unwrap();
        assert_eq!((a, b, c), (a2, b2, c2));
    }

    #[test]
    fn split_zero_fraction_allowed_but_rounding_to_zero_is_not() {
        let ds = toy_dataset(10);
        let spec = SplitSpec {
            train: 0.8,
            val: 0.0,
            test: 0.2,
            ..SplitSpec::default()
        };
        let (a, b, c) = split(&ds, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 0, 2));

        let spec = SplitSpec {
            train: 0.98,
            val: 0.01,
            test: 0.01,
            ..SplitSpec::default()
        };
        assert!(matches!(split(&ds, &spec), Err(Error::EmptyPartition(_))));
    }

    #[test]
    fn temporal_split_orders_by_origin() {
        let ds = toy_dataset(10);
        let spec = SplitSpec {
            mode: SplitMode::Temporal,
            ..SplitSpec::default()
        };
        let (train, _, test) = split(&ds, &spec).unwrap();
        let max_train = train
            .instances
            .iter()
            .map(|i| i.series.origin_t0.unwrap())
            .fold(f64::MIN, f64::max);
        let min_test = test.instances[0].series.origin_t0.unwrap();
        assert!(max_train < min_test);
    }

    #[test]
    fn labels_out_of_range_rejected() {
        let inst = Instance {
            series: one(&[(0.0, 0.0)]).unwrap(),
            label: 2,
        };
        assert!(matches!(
            LabeledDataset::new(DatasetMeta::default(), 2, vec![inst]),
            Err(Error::Schema(_))
        ));
    }
}
