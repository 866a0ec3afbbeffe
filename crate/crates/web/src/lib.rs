//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Three operations are exposed: drawing a pattern series, reading the
//! receptor features around a moment, and running the listening probe on a
//! synthetic sensor stream. Each is a plain Rust function that is also
//! callable natively.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

use cat_core::datagen::{self, MpiConfig, ProbeConfig, RegularSeries};
use cat_core::receptor::{query_time, PreparedSeries, ReceptorConfig};
use cat_core::rng::{self, streams};
use cat_core::series::IrregularSeries;

fn js_err(e: cat_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One generated pattern series.
#[wasm_bindgen]
pub struct PatternSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    label: usize,
    signal_start: f64,
}

#[wasm_bindgen]
impl PatternSeries {
    #[wasm_bindgen(getter)]
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// 0 for the flat pattern, 1 for the notched one.
    #[wasm_bindgen(getter)]
    pub fn label(&self) -> usize {
        self.label
    }

    #[wasm_bindgen(getter, js_name = signalStart)]
    pub fn signal_start(&self) -> f64 {
        self.signal_start
    }
}

/// Generates the series of class `label` from the pair drawn with `seed`.
#[wasm_bindgen(js_name = generatePattern)]
pub fn generate_pattern(
    signal_width: f64,
    series_len: usize,
    seed: u64,
    label: usize,
) -> Result<PatternSeries, JsError> {
    let cfg = MpiConfig {
        n: 2,
        series_len,
        signal_width,
        seed,
        noise_outside_signal: true,
    };
    let data = datagen::gen_mpi(&cfg).map_err(js_err)?;
    let inst = data
        .instances
        .into_iter()
        .find(|i| i.label == label)
        .ok_or_else(|| JsError::new("label must be 0 or 1"))?;
    let ch = inst
        .series
        .channels
        .into_iter()
        .next()
        .expect("one channel");
    let signal_start = ch
        .pairs()
        .enumerate()
        .find(|&(k, (t, v))| {
            v == 1.0
                && ch.times[k + 1..]
                    .iter()
                    .any(|&s| (s - t - signal_width).abs() < 1e-9)
        })
        .map_or(f64::NAN, |(_, (t, _))| t);
    Ok(PatternSeries {
        times: ch.times,
        values: ch.values,
        label,
        signal_start,
    })
}

/// Receptor features of a single-channel series at one moment.
#[wasm_bindgen]
pub struct ReceptorView {
    fine_times: Vec<f64>,
    coarse_times: Vec<f64>,
    /// `[p_fine, q_fine, p_coarse, q_coarse]`, each `w` long.
    features: Vec<f64>,
    w: usize,
}

#[wasm_bindgen]
impl ReceptorView {
    #[wasm_bindgen(getter, js_name = fineTimes)]
    pub fn fine_times(&self) -> Vec<f64> {
        self.fine_times.clone()
    }

    #[wasm_bindgen(getter, js_name = coarseTimes)]
    pub fn coarse_times(&self) -> Vec<f64> {
        self.coarse_times.clone()
    }

    fn block(&self, i: usize) -> Vec<f64> {
        self.features[i * self.w..(i + 1) * self.w].to_vec()
    }

    #[wasm_bindgen(getter, js_name = fineValues)]
    pub fn fine_values(&self) -> Vec<f64> {
        self.block(0)
    }

    #[wasm_bindgen(getter, js_name = fineDensity)]
    pub fn fine_density(&self) -> Vec<f64> {
        self.block(1)
    }

    #[wasm_bindgen(getter, js_name = coarseValues)]
    pub fn coarse_values(&self) -> Vec<f64> {
        self.block(2)
    }

    #[wasm_bindgen(getter, js_name = coarseDensity)]
    pub fn coarse_density(&self) -> Vec<f64> {
        self.block(3)
    }
}

/// Interpolation and density features at moment `m` (normalized time).
#[wasm_bindgen(js_name = receptorFeatures)]
pub fn receptor_features(
    times: Vec<f64>,
    values: Vec<f64>,
    m: f64,
    width: f64,
    w: usize,
    alpha: f64,
) -> Result<ReceptorView, JsError> {
    let series = IrregularSeries::new("demo", vec![cat_core::series::Channel::new(times, values)])
        .map_err(js_err)?;
    let cfg = ReceptorConfig {
        delta: width,
        w,
        alpha,
        ..ReceptorConfig::default()
    };
    cfg.validate().map_err(js_err)?;
    let prepared = PreparedSeries::new(&series, &cfg).map_err(js_err)?;
    let max_t = series.max_timestamp().map_err(js_err)?;
    let to_raw = |t: f64| t * max_t;
    Ok(ReceptorView {
        fine_times: (1..=w)
            .map(|j| to_raw(query_time(m, width, w, j)))
            .collect(),
        coarse_times: (1..=w)
            .map(|j| to_raw(query_time(0.5, cfg.coarse_width, w, j)))
            .collect(),
        features: prepared.features(m, &cfg),
        w,
    })
}

/// A synthetic sensor stream and the records the probe keeps from it.
#[wasm_bindgen]
pub struct ProbeView {
    values: Vec<f64>,
    kept: Vec<u32>,
    windows: usize,
}

#[wasm_bindgen]
impl ProbeView {
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.values.clone()
    }

    /// Indices of kept records in the stream.
    #[wasm_bindgen(getter)]
    pub fn kept(&self) -> Vec<u32> {
        self.kept.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn windows(&self) -> usize {
        self.windows
    }
}

/// Regularly sampled stream alternating between still and moving stretches,
/// the kind of signal an event-triggered sensor sees.
pub fn synthetic_stream(len: usize, seed: u64) -> RegularSeries {
    let mut rng = rng::stream(seed, streams::DATAGEN);
    let mut values = Vec::with_capacity(len);
    let mut x = 0.0;
    let mut moving = false;
    for _ in 0..len {
        if rng.random_bool(0.02) {
            moving = !moving;
        }
        if moving {
            let step: f64 = StandardNormal.sample(&mut rng);
            x += 0.05 * step;
        } else {
            let jitter: f64 = StandardNormal.sample(&mut rng);
            x += 2e-4 * jitter;
        }
        values.push(x);
    }
    RegularSeries {
        times: (0..len).map(|i| i as f64).collect(),
        channels: vec![values],
        labels: None,
    }
}

#[wasm_bindgen(js_name = runProbe)]
pub fn run_probe(
    len: usize,
    window_len: usize,
    gamma: f64,
    seed: u64,
) -> Result<ProbeView, JsError> {
    let stream = synthetic_stream(len, seed);
    let cfg = ProbeConfig { gamma, window_len };
    let out = datagen::listening_probe(&stream, &cfg).map_err(js_err)?;
    let kept = out
        .iter()
        .filter_map(|s| s.origin_t0.map(|t0| (s, t0)))
        .flat_map(|(s, t0)| {
            s.channels[0]
                .times
                .iter()
                .map(move |&t| (t + t0).round() as u32)
        })
        .collect();
    Ok(ProbeView {
        values: stream.channels.into_iter().next().unwrap_or_default(),
        kept,
        windows: out.len(),
    })
}
