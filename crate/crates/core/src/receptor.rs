//! Local value and irregularity features around a moment of interest, and
//! the dense encoder that maps them to the receptor representation.
//!
//! For a window of width `width` centred on `center`, both feature vectors
//! are evaluated on the `w` query times
//!
//! ```text
//! t'_j = center − width/2 + j·width/w,   j = 1..=w
//! ```
//!
//! `p` linearly interpolates the observed values (flat beyond the first and
//! last observation, zero for an empty window) and `q` sums a squared
//! exponential kernel `exp(−α (t'_j − τ_k)²)` over the observed times.
//!
//! Each channel contributes a fine block (width `delta` around the moment)
//! and a coarse block (width `coarse_width` around 0.5, i.e. the whole
//! normalized timeline), so a series with `D` channels yields `4·w·D`
//! features laid out as `[p_fine, q_fine, p_coarse, q_coarse]`, each part
//! channel-major.

use serde::{Deserialize, Serialize};

use crate::diffnet::{Linear, NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::series::IrregularSeries;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceptorConfig {
    /// Fine window width in normalized time.
    pub delta: f64,
    /// Query points per block.
    pub w: usize,
    /// Kernel scale of the density features.
    pub alpha: f64,
    /// Encoder output size.
    pub latent: usize,
    /// When false the density blocks are zeroed (dimensions are kept).
    pub use_density: bool,
    /// Divide each channel's density by `n·sqrt(π/α)`, the value a
    /// uniformly sampled channel of `n` observations would produce, so
    /// that features are O(1) regardless of series length.
    pub relative_density: bool,
    pub coarse_width: f64,
}

impl Default for ReceptorConfig {
    fn default() -> Self {
        ReceptorConfig {
            delta: 0.2,
            w: 40,
            alpha: 100.0,
            latent: 50,
            use_density: true,
            relative_density: true,
            coarse_width: 1.0,
        }
    }
}

impl ReceptorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Config(format!(
                "delta must be in (0, 1], got {}",
                self.delta
            )));
        }
        if self.w < 2 {
            return Err(Error::Config(format!("w must be >= 2, got {}", self.w)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if self.latent < 1 {
            return Err(Error::Config("latent dimension must be >= 1".into()));
        }
        if !(self.coarse_width > 0.0) {
            return Err(Error::Config("coarse_width must be > 0".into()));
        }
        Ok(())
    }

    /// Feature length for a series with `channels` variables.
    pub fn feature_len(&self, channels: usize) -> usize {
        4 * self.w * channels
    }
}

/// The `j`-th query time (1-based).
#[inline]
pub fn query_time(center: f64, width: f64, w: usize, j: usize) -> f64 {
    center - width / 2.0 + j as f64 * width / w as f64
}

/// Linear interpolation of `values` at the `w` query times of the window.
pub fn interpolate_values(
    times: &[f64],
    values: &[f64],
    center: f64,
    width: f64,
    w: usize,
) -> Vec<f64> {
    debug_assert_eq!(times.len(), values.len());
    let n = times.len();
    if n == 0 {
        return vec![0.0; w];
    }
    (1..=w)
        .map(|j| {
            let t = query_time(center, width, w, j);
            let idx = times.partition_point(|&s| s < t);
            if idx < n && times[idx] == t {
                values[idx]
            } else if idx == 0 {
                values[0]
            } else if idx == n {
                values[n - 1]
            } else {
                let (ll, sg) = (times[idx - 1], times[idx]);
                ((sg - t) * values[idx - 1] + (t - ll) * values[idx]) / (sg - ll)
            }
        })
        .collect()
}

/// Squared exponential density of `times` at the `w` query times.
pub fn density_features(times: &[f64], center: f64, width: f64, w: usize, alpha: f64) -> Vec<f64> {
    (1..=w)
        .map(|j| {
            let t = query_time(center, width, w, j);
            times
                .iter()
                .map(|&s| {
                    let d = t - s;
                    (-alpha * d * d).exp()
                })
                .sum()
        })
        .collect()
}

/// `p` and `q` for one channel at one granularity.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl FeatureBlock {
    fn compute(
        series: &IrregularSeries,
        center: f64,
        width: f64,
        cfg: &ReceptorConfig,
    ) -> Vec<FeatureBlock> {
        series
            .window(center, width)
            .into_iter()
            .zip(&series.channels)
            .map(|(win, ch)| FeatureBlock {
                p: interpolate_values(win.times, win.values, center, width, cfg.w),
                q: if cfg.use_density {
                    let mut q = density_features(win.times, center, width, cfg.w, cfg.alpha);
                    if cfg.relative_density && !ch.is_empty() {
                        let scale = ch.len() as f64 * (std::f64::consts::PI / cfg.alpha).sqrt();
                        q.iter_mut().for_each(|v| *v /= scale);
                    }
                    q
                } else {
                    vec![0.0; cfg.w]
                },
            })
            .collect()
    }
}

fn flatten(blocks: &[FeatureBlock], out: &mut Vec<f64>) {
    for b in blocks {
        out.extend_from_slice(&b.p);
    }
    for b in blocks {
        out.extend_from_slice(&b.q);
    }
}

/// A series normalized to `[0, 1]` with its coarse block computed once.
#[derive(Clone, Debug)]
pub struct PreparedSeries {
    pub normalized: IrregularSeries,
    coarse: Vec<f64>,
}

impl PreparedSeries {
    pub fn new(series: &IrregularSeries, cfg: &ReceptorConfig) -> Result<Self> {
        let normalized = series.normalized()?;
        let blocks = FeatureBlock::compute(&normalized, 0.5, cfg.coarse_width, cfg);
        let mut coarse = Vec::with_capacity(2 * cfg.w * normalized.num_channels());
        flatten(&blocks, &mut coarse);
        Ok(PreparedSeries { normalized, coarse })
    }

    pub fn num_channels(&self) -> usize {
        self.normalized.num_channels()
    }

    /// Fine blocks at moment `m` (normalized time).
    pub fn fine_blocks(&self, m: f64, cfg: &ReceptorConfig) -> Vec<FeatureBlock> {
        FeatureBlock::compute(&self.normalized, m, cfg.delta, cfg)
    }

    /// The `4·w·D` feature vector at moment `m`.
    pub fn features(&self, m: f64, cfg: &ReceptorConfig) -> Vec<f64> {
        let mut out = Vec::with_capacity(cfg.feature_len(self.num_channels()));
        flatten(&self.fine_blocks(m, cfg), &mut out);
        out.extend_from_slice(&self.coarse);
        out
    }
}

/// Features of `series` at normalized moment `m`.
pub fn extract_features(
    series: &IrregularSeries,
    m: f64,
    cfg: &ReceptorConfig,
) -> Result<Vec<f64>> {
    Ok(PreparedSeries::new(series, cfg)?.features(m, cfg))
}

/// Dense encoder `x̂ = relu(W f + b)`; its output is concatenated with the
/// moment before entering the transition model.
#[derive(Clone, Copy, Debug)]
pub struct ReceptorNet {
    pub linear: Linear,
}

impl ReceptorNet {
    pub fn new(
        store: &mut ParamStore,
        cfg: &ReceptorConfig,
        channels: usize,
        rng: &mut Rng,
    ) -> Self {
        ReceptorNet {
            linear: Linear::new(
                store,
                "receptor",
                cfg.feature_len(channels),
                cfg.latent,
                rng,
            ),
        }
    }

    /// Returns the `(L + 1)`-vector `[x̂, m]`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: Vec<f64>,
        m: f64,
    ) -> Result<NodeId> {
        if features.len() != self.linear.input {
            return Err(Error::DimMismatch(format!(
                "receptor expects {} features, got {}",
                self.linear.input,
                features.len()
            )));
        }
        let f = tape.input(features);
        let pre = self.linear.forward(tape, store, f)?;
        let x = tape.relu(pre);
        let mn = tape.input(vec![m]);
        Ok(tape.concat(&[x, mn]))
    }
}
