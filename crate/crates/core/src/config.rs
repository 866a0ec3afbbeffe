//! Flat `key = value` run configuration.
//!
//! Sources are layered: defaults, then a config file, then environment
//! variables (`CAT_<KEY>`, e.g. `CAT_LR=0.0005`), then explicit overrides.
//! Keys are case-insensitive; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, MomentSource};
use crate::baselines::{ExtraFeature, FillMethod, ImputeConfig};
use crate::error::{Error, Result};
use crate::harness::CatSpec;
use crate::receptor::ReceptorConfig;
use crate::series::{SplitMode, SplitSpec};
use crate::train::TrainConfig;

/// Prefix of environment overrides.
pub const ENV_PREFIX: &str = "CAT_";

/// Documented keys with their meaning.
pub const KEYS: &[(&str, &str)] = &[
    ("delta", "fine receptor width in normalized time"),
    ("w", "query points per receptor block"),
    ("alpha", "density kernel scale"),
    ("l", "receptor encoder size"),
    ("use_density", "include density features (true/false)"),
    (
        "relative_density",
        "scale density features by their uniform-sampling value (true/false)",
    ),
    ("coarse_width", "coarse receptor width"),
    ("k", "receptor reads per episode"),
    ("h", "recurrent state size"),
    ("sigma", "policy standard deviation"),
    ("num_classes", "number of classes"),
    (
        "baseline_hidden",
        "hidden width of the reward baseline network",
    ),
    ("moments", "policy | random"),
    (
        "policy_trains_core",
        "let the policy loss update the recurrent core and receptor (true/false)",
    ),
    ("lr", "Adam learning rate"),
    ("weight_decay", "decoupled weight decay"),
    ("epochs", "maximum training epochs"),
    ("batch_size", "instances per optimizer step"),
    ("eval_every", "epochs between validations"),
    (
        "patience",
        "validations without improvement before stopping (0 = off)",
    ),
    (
        "target_val_acc",
        "stop once validation accuracy reaches this (none = off)",
    ),
    ("seed", "run seed"),
    ("train_frac", "training fraction of a split"),
    ("val_frac", "validation fraction of a split"),
    ("test_frac", "test fraction of a split"),
    ("split_mode", "random | temporal"),
    ("impute_method", "mean | linear"),
    ("impute_extra", "none | delta_t | mask"),
    ("impute_grid", "imputation grid size"),
    ("gru_hidden", "baseline GRU state size"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub receptor: ReceptorConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub impute: ImputeConfig,
    pub gru_hidden: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            receptor: ReceptorConfig::default(),
            agent: AgentConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            impute: ImputeConfig::default(),
            gru_hidden: 64,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.trim().to_ascii_lowercase();
        let v = value.trim();
        match k.as_str() {
            "delta" => self.receptor.delta = parse(&k, v)?,
            "w" => self.receptor.w = parse(&k, v)?,
            "alpha" => self.receptor.alpha = parse(&k, v)?,
            "l" => self.receptor.latent = parse(&k, v)?,
            "use_density" => self.receptor.use_density = parse(&k, v)?,
            "relative_density" => self.receptor.relative_density = parse(&k, v)?,
            "coarse_width" => self.receptor.coarse_width = parse(&k, v)?,
            "k" => self.agent.k = parse(&k, v)?,
            "h" => self.agent.hidden = parse(&k, v)?,
            "sigma" => self.agent.sigma = parse(&k, v)?,
            "num_classes" => self.agent.num_classes = parse(&k, v)?,
            "baseline_hidden" => self.agent.baseline_hidden = parse(&k, v)?,
            "moments" => {
                self.agent.moments = match v {
                    "policy" => MomentSource::Policy,
                    "random" => MomentSource::Random,
                    _ => {
                        return Err(Error::Config(format!(
                            "moments: expected policy|random, got `{v}`"
                        )))
                    }
                }
            }
            "policy_trains_core" => self.agent.policy_trains_core = parse(&k, v)?,
            "lr" => self.train.adam.lr = parse(&k, v)?,
            "weight_decay" => self.train.adam.weight_decay = parse(&k, v)?,
            "epochs" => self.train.epochs = parse(&k, v)?,
            "batch_size" => self.train.batch_size = parse(&k, v)?,
            "eval_every" => self.train.eval_every = parse(&k, v)?,
            "patience" => self.train.patience = parse(&k, v)?,
            "target_val_acc" => {
                self.train.target_val_acc = if v == "none" {
                    None
                } else {
                    Some(parse(&k, v)?)
                }
            }
            "seed" => {
                let s = parse(&k, v)?;
                self.train.seed = s;
                self.split.seed = s;
            }
            "train_frac" => self.split.train = parse(&k, v)?,
            "val_frac" => self.split.val = parse(&k, v)?,
            "test_frac" => self.split.test = parse(&k, v)?,
            "split_mode" => {
                self.split.mode = match v {
                    "random" => SplitMode::Random,
                    "temporal" => SplitMode::Temporal,
                    _ => {
                        return Err(Error::Config(format!(
                            "split_mode: expected random|temporal, got `{v}`"
                        )))
                    }
                }
            }
            "impute_method" => {
                self.impute.method = match v {
                    "mean" => FillMethod::Mean,
                    "linear" => FillMethod::Linear,
                    _ => {
                        return Err(Error::Config(format!(
                            "impute_method: expected mean|linear, got `{v}`"
                        )))
                    }
                }
            }
            "impute_extra" => {
                self.impute.extra = match v {
                    "none" => ExtraFeature::None,
                    "delta_t" => ExtraFeature::DeltaT,
                    "mask" => ExtraFeature::Mask,
                    _ => {
                        return Err(Error::Config(format!(
                            "impute_extra: expected none|delta_t|mask, got `{v}`"
                        )))
                    }
                }
            }
            "impute_grid" => self.impute.grid_size = parse(&k, v)?,
            "gru_hidden" => self.gru_hidden = parse(&k, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.apply_str(&std::fs::read_to_string(path)?)
    }

    /// Applies `CAT_<KEY>` variables from `vars`.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            if let Some(key) = k.as_ref().strip_prefix(ENV_PREFIX) {
                self.set(key, v.as_ref())
                    .map_err(|e| Error::Config(format!("{}: {e}", k.as_ref())))?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.receptor.validate()?;
        self.agent.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        self.impute.validate()?;
        if self.gru_hidden < 1 {
            return Err(Error::Config("gru_hidden must be >= 1".into()));
        }
        Ok(())
    }

    /// Renders every key, in documented order, as a config file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.receptor;
        let a = &self.agent;
        let t = &self.train;
        let moments = match a.moments {
            MomentSource::Policy => "policy",
            MomentSource::Random => "random",
        };
        let mode = match self.split.mode {
            SplitMode::Random => "random",
            SplitMode::Temporal => "temporal",
        };
        let method = match self.impute.method {
            FillMethod::Mean => "mean",
            FillMethod::Linear => "linear",
        };
        let extra = match self.impute.extra {
            ExtraFeature::None => "none",
            ExtraFeature::DeltaT => "delta_t",
            ExtraFeature::Mask => "mask",
        };
        let target = t
            .target_val_acc
            .map_or("none".to_string(), |v| v.to_string());
        let values: [String; 30] = [
            r.delta.to_string(),
            r.w.to_string(),
            r.alpha.to_string(),
            r.latent.to_string(),
            r.use_density.to_string(),
            r.relative_density.to_string(),
            r.coarse_width.to_string(),
            a.k.to_string(),
            a.hidden.to_string(),
            a.sigma.to_string(),
            a.num_classes.to_string(),
            a.baseline_hidden.to_string(),
            moments.into(),
            a.policy_trains_core.to_string(),
            t.adam.lr.to_string(),
            t.adam.weight_decay.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.eval_every.to_string(),
            t.patience.to_string(),
            target,
            t.seed.to_string(),
            self.split.train.to_string(),
            self.split.val.to_string(),
            self.split.test.to_string(),
            mode.into(),
            method.into(),
            extra.into(),
            self.impute.grid_size.to_string(),
            self.gru_hidden.to_string(),
        ];
        for ((k, _), v) in KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// The classifier settings with `val_frac` as the hold-out fraction.
    pub fn cat_spec(&self) -> CatSpec {
        CatSpec {
            receptor: self.receptor.clone(),
            agent: self.agent.clone(),
            train: self.train.clone(),
            val_fraction: self.split.val,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_str("delta = 0.26\nK=5 # more reads\n\nmoments = random\ntarget_val_acc = 0.99\n")
            .unwrap();
        assert_eq!(c.receptor.delta, 0.26);
        assert_eq!(c.agent.k, 5);
        let mut d = RunConfig::default();
        d.apply_str(&c.to_text()).unwrap();
        assert_eq!(c, d);
        assert_eq!(RunConfig::default().to_text().lines().count(), KEYS.len());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut c = RunConfig::default();
        assert!(c
            .apply_str("gamma = 1")
            .unwrap_err()
            .to_string()
            .contains("line 1"));
        assert!(c.apply_str("epochs = many").is_err());
        assert!(c.apply_str("epochs 3").is_err());
        assert!(c.set("moments", "sometimes").is_err());
    }

    #[test]
    fn layering() {
        let mut c = RunConfig::default();
        c.apply_str("lr = 0.01\nepochs = 5").unwrap();
        c.apply_env([("CAT_LR", "0.02"), ("HOME", "/root")])
            .unwrap();
        c.set("epochs", "7").unwrap();
        assert_eq!(c.train.adam.lr, 0.02);
        assert_eq!(c.train.epochs, 7);
        assert!(c.apply_env([("CAT_NOPE", "1")]).is_err());
    }
}
