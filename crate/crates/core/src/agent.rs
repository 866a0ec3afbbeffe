//! One classification episode: `K` receptor reads linked by a GRU, a
//! Gaussian moment policy choosing where to read next, a baseline network
//! for the policy gradient and a linear discriminator on the last state.
//!
//! Episode layout for `K` reads:
//!
//! ```text
//! m_0 ──read──▶ h_1 ──policy──▶ m_1 ──read──▶ h_2 ── … ──▶ h_K ──▶ logits
//! ```
//!
//! so there are `K − 1` policy actions, each with a log-probability and a
//! baseline value computed from the state that produced it. The moments
//! enter the receptor as constants, so the supervised loss never reaches the
//! policy head. The baseline reads a detached copy of the hidden state; the
//! policy reads the live state (so rewards also shape the recurrent core and
//! receptor) unless `policy_trains_core` is off. Neither the policy nor the
//! baseline loss reaches the discriminator.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffnet::{GruCell, Linear, Mlp2, NodeId, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::receptor::{PreparedSeries, ReceptorConfig, ReceptorNet};
use crate::rng::Rng;

/// Where the receptor is placed after the first read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentSource {
    /// Learned Gaussian policy.
    Policy,
    /// Uniformly random moments (the policy-free ablation).
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Receptor reads per episode.
    pub k: usize,
    pub hidden: usize,
    /// Policy standard deviation in normalized time.
    pub sigma: f64,
    pub num_classes: usize,
    /// Hidden width of the baseline network.
    pub baseline_hidden: usize,
    pub moments: MomentSource,
    /// Let the policy loss reach the recurrent core and receptor through
    /// the hidden state. When false the policy reads a detached state and
    /// only its own head learns from rewards.
    pub policy_trains_core: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            k: 3,
            hidden: 64,
            sigma: 0.2,
            num_classes: 2,
            baseline_hidden: 64,
            moments: MomentSource::Policy,
            policy_trains_core: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if self.hidden < 1 || self.baseline_hidden < 1 {
            return Err(Error::Config("hidden dimensions must be >= 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeMode {
    /// `m_0 ~ U[0, 1]`, actions sampled from the policy.
    Stochastic,
    /// `m_0 = 0.5`, actions set to the policy mean.
    Deterministic,
}

/// Record of one episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeTrace {
    /// `m_0 … m_{K−1}`, normalized.
    pub moments: Vec<f64>,
    /// `h_1 … h_K`.
    pub hidden: Vec<Vec<f64>>,
    /// Policy means `μ_1 … μ_{K−1}`.
    pub means: Vec<f64>,
    /// Pre-clamp samples.
    pub samples: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub baselines: Vec<f64>,
    pub logits: Vec<f64>,
    pub prediction: usize,
}

impl EpisodeTrace {
    pub fn num_actions(&self) -> usize {
        self.log_probs.len()
    }
}

/// Tape handles for the differentiable parts of an episode.
#[derive(Clone, Debug)]
pub struct EpisodeNodes {
    pub logits: NodeId,
    pub log_probs: Vec<NodeId>,
    pub baselines: Vec<NodeId>,
}

/// Output of one policy evaluation.
#[derive(Clone, Copy, Debug)]
pub struct PolicyStep {
    /// Next moment, clamped to `[0, 1]`.
    pub moment: f64,
    /// The pre-clamp sample.
    pub sample: f64,
    pub mean: f64,
    pub log_prob: NodeId,
}

/// Parameter handles of the full model. Values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct CatModel {
    pub receptor_cfg: ReceptorConfig,
    pub agent_cfg: AgentConfig,
    pub channels: usize,
    pub receptor: ReceptorNet,
    pub transition: GruCell,
    pub policy: Linear,
    pub baseline: Mlp2,
    pub discriminator: Linear,
}

/// `ln(σ √(2π))`.
fn log_norm_const(sigma: f64) -> f64 {
    (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

/// Log-density of `Normal(mean, sigma)` at `x`.
pub fn gaussian_log_density(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - log_norm_const(sigma)
}

impl CatModel {
    /// Registers all parameters in `store` with fresh initial values.
    pub fn new(
        store: &mut ParamStore,
        receptor_cfg: ReceptorConfig,
        agent_cfg: AgentConfig,
        channels: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        receptor_cfg.validate()?;
        agent_cfg.validate()?;
        if channels < 1 {
            return Err(Error::Config(
                "series must have at least one channel".into(),
            ));
        }
        let h = agent_cfg.hidden;
        let receptor = ReceptorNet::new(store, &receptor_cfg, channels, rng);
        let transition = GruCell::new(store, "transition", receptor_cfg.latent + 1, h, rng);
        let policy = Linear::new(store, "policy", h, 1, rng);
        let baseline = Mlp2::new(store, "baseline", h, agent_cfg.baseline_hidden, 1, rng);
        let discriminator = Linear::new(store, "discriminator", h, agent_cfg.num_classes, rng);
        if agent_cfg.moments == MomentSource::Random {
            for id in policy.params().into_iter().chain(baseline.params()) {
                store.set_frozen(id, true);
            }
        }
        Ok(CatModel {
            receptor_cfg,
            agent_cfg,
            channels,
            receptor,
            transition,
            policy,
            baseline,
            discriminator,
        })
    }

    pub fn receptor_params(&self) -> Vec<ParamId> {
        self.receptor.linear.params().to_vec()
    }

    pub fn transition_params(&self) -> Vec<ParamId> {
        self.transition.params().to_vec()
    }

    pub fn policy_params(&self) -> Vec<ParamId> {
        self.policy.params().to_vec()
    }

    pub fn baseline_params(&self) -> Vec<ParamId> {
        self.baseline.params().to_vec()
    }

    pub fn discriminator_params(&self) -> Vec<ParamId> {
        self.discriminator.params().to_vec()
    }

    /// Receptor, transition and discriminator parameters.
    pub fn supervised_params(&self) -> Vec<ParamId> {
        let mut v = self.receptor_params();
        v.extend(self.transition_params());
        v.extend(self.discriminator_params());
        v
    }

    pub fn prepare(&self, series: &crate::series::IrregularSeries) -> Result<PreparedSeries> {
        if series.num_channels() != self.channels {
            return Err(Error::DimMismatch(format!(
                "model expects {} channels, series has {}",
                self.channels,
                series.num_channels()
            )));
        }
        PreparedSeries::new(series, &self.receptor_cfg)
    }

    /// One GRU update from the receptor output `x` (`[x̂, m]`).
    pub fn transition_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        h: NodeId,
    ) -> Result<NodeId> {
        self.transition.forward(tape, store, x, h)
    }

    /// Evaluates the moment policy on `h`. Unless `policy_trains_core` is
    /// set the hidden state is detached, so the returned log-probability
    /// only reaches the policy head.
    pub fn moment_policy(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
        mode: EpisodeMode,
        rng: &mut Rng,
    ) -> Result<PolicyStep> {
        let sigma = self.agent_cfg.sigma;
        let h = if self.agent_cfg.policy_trains_core {
            h
        } else {
            tape.detach(h)
        };
        let pre = self.policy.forward(tape, store, h)?;
        let mu = tape.sigmoid(pre);
        let mean = tape.scalar(mu);
        let sample = match mode {
            EpisodeMode::Stochastic => {
                let n: f64 = StandardNormal.sample(rng);
                mean + sigma * n
            }
            EpisodeMode::Deterministic => mean,
        };
        // log π(u | μ) = −½((u − μ)/σ)² − ln(σ√(2π))
        let diff = tape.offset(mu, -sample);
        let z = tape.scale(diff, 1.0 / sigma);
        let sq = tape.mul(z, z)?;
        let half = tape.scale(sq, -0.5);
        let log_prob = tape.offset(half, -log_norm_const(sigma));
        Ok(PolicyStep {
            moment: sample.clamp(0.0, 1.0),
            sample,
            mean,
            log_prob,
        })
    }

    /// Baseline value for state `h` (detached).
    pub fn baseline_predict(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
    ) -> Result<NodeId> {
        let h = tape.detach(h);
        self.baseline.forward(tape, store, h)
    }

    /// Logits and the arg-max class.
    pub fn discriminate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: NodeId,
    ) -> Result<(NodeId, usize)> {
        let logits = self.discriminator.forward(tape, store, h)?;
        Ok((logits, argmax(tape.value(logits))))
    }

    /// Runs a full episode on a prepared series.
    pub fn run_episode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        series: &PreparedSeries,
        mode: EpisodeMode,
        rng: &mut Rng,
    ) -> Result<(EpisodeTrace, EpisodeNodes)> {
        let k = self.agent_cfg.k;
        let random = self.agent_cfg.moments == MomentSource::Random;
        let mut trace = EpisodeTrace::default();
        let mut log_probs = Vec::with_capacity(k.saturating_sub(1));
        let mut baselines = Vec::with_capacity(k.saturating_sub(1));

        let mut m = if random || mode == EpisodeMode::Stochastic {
            rng.random::<f64>()
        } else {
            0.5
        };
        let mut h = tape.input(vec![0.0; self.agent_cfg.hidden]);
        for i in 0..k {
            trace.moments.push(m);
            let features = series.features(m, &self.receptor_cfg);
            let x = self.receptor.encode(tape, store, features, m)?;
            h = self.transition_step(tape, store, x, h)?;
            trace.hidden.push(tape.value(h).to_vec());
            if i + 1 == k {
                break;
            }
            if random {
                m = rng.random::<f64>();
                continue;
            }
            let step = self.moment_policy(tape, store, h, mode, rng)?;
            let b = self.baseline_predict(tape, store, h)?;
            trace.means.push(step.mean);
            trace.samples.push(step.sample);
            trace.log_probs.push(tape.scalar(step.log_prob));
            trace.baselines.push(tape.scalar(b));
            log_probs.push(step.log_prob);
            baselines.push(b);
            m = step.moment;
        }
        let (logits, prediction) = self.discriminate(tape, store, h)?;
        trace.logits = tape.value(logits).to_vec();
        trace.prediction = prediction;
        Ok((
            trace,
            EpisodeNodes {
                logits,
                log_probs,
                baselines,
            },
        ))
    }

    /// Deterministic-mode prediction. Random-moment models draw their
    /// moments from `rng`.
    pub fn predict(
        &self,
        store: &ParamStore,
        series: &PreparedSeries,
        rng: &mut Rng,
    ) -> Result<EpisodeTrace> {
        let mut tape = Tape::new();
        let (trace, _) =
            self.run_episode(&mut tape, store, series, EpisodeMode::Deterministic, rng)?;
        Ok(trace)
    }
}

/// Index of the largest entry (first one on ties).
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}
