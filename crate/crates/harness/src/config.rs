//! Experiment configuration and its content hash.

use std::path::{Path, PathBuf};

use dpse::baselines::{GmmConfig, Nsga2Config};
use dpse::env::{MixtureSpec, ProcessKind};
use dpse::inversion::{InversionConfig, Objective, Regularizer};
use dpse::params::{SearchRegion, StrategyKind};
use dpse::shadow::{Architecture, ShadowConfig};
use dpse::sim::{SimConfig, Timing};
use dpse::trainers::TrainConfig;
use dpse::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SpiralStationary,
    ProbeStationary,
    ProbeNonstationary,
    MetaComparison,
}

impl ExperimentKind {
    pub fn strategy(self) -> StrategyKind {
        match self {
            ExperimentKind::SpiralStationary => StrategyKind::Spiral,
            _ => StrategyKind::Probe,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SpiralStationary => "spiral-stationary",
            ExperimentKind::ProbeStationary => "probe-stationary",
            ExperimentKind::ProbeNonstationary => "probe-nonstationary",
            ExperimentKind::MetaComparison => "meta-comparison",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dpse,
    DpseLinit,
    DpseCdist,
    Fixed,
    Pca,
    Gmm,
    Nsga2,
    Fomaml,
    Reptile,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dpse => "dpse",
            Method::DpseLinit => "dpse-linit",
            Method::DpseCdist => "dpse-cdist",
            Method::Fixed => "fixed",
            Method::Pca => "pca",
            Method::Gmm => "gmm",
            Method::Nsga2 => "nsga2",
            Method::Fomaml => "fomaml",
            Method::Reptile => "reptile",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string()))
            .map_err(|_| Error::Config(format!("unknown method {name:?}")))
    }

    pub fn is_dpse(self) -> bool {
        matches!(self, Method::Dpse | Method::DpseLinit | Method::DpseCdist)
    }

    /// Inversion regularizer of a dpse variant.
    pub fn regularizer(self) -> Regularizer {
        match self {
            Method::DpseLinit => Regularizer::init_default(),
            Method::DpseCdist => Regularizer::cdist_default(),
            _ => Regularizer::None,
        }
    }

    fn allowed(self, kind: ExperimentKind) -> bool {
        use ExperimentKind::*;
        match self {
            Method::Dpse | Method::Fixed => kind != MetaComparison || self == Method::Dpse,
            Method::DpseLinit => matches!(kind, SpiralStationary | ProbeStationary | ProbeNonstationary),
            Method::DpseCdist | Method::Gmm => matches!(kind, ProbeStationary | ProbeNonstationary),
            Method::Pca => kind == SpiralStationary,
            Method::Nsga2 => matches!(kind, SpiralStationary | ProbeStationary),
            Method::Fomaml | Method::Reptile => kind == MetaComparison,
        }
    }
}

/// One experiment. Every field has a desk-scale default for the chosen kind,
/// so a JSON file only needs `kind` plus the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub methods: Vec<Method>,
    /// Pretraining tasks.
    #[serde(default = "d_m_train")]
    pub m_train: usize,
    /// Records per pretraining task.
    #[serde(default = "d_n")]
    pub n_train: usize,
    /// Test distributions, one per seed.
    #[serde(default = "d_m_test")]
    pub m_test: usize,
    /// Finetuning executions per test distribution (ring-buffer size).
    #[serde(default = "d_n")]
    pub n_test: usize,
    /// Timesteps of the nonstationary loop.
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    /// Monte-Carlo samples for oracle scoring.
    #[serde(default = "d_eval")]
    pub eval_samples: usize,
    /// Oracle samples per timestep of the nonstationary loop.
    #[serde(default = "d_step_eval")]
    pub step_eval_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub processes: Vec<ProcessKind>,
    #[serde(default)]
    pub region: Option<SearchRegion>,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub mixture: Option<MixtureSpec>,
    #[serde(default)]
    pub architecture: Option<Architecture>,
    #[serde(default = "TrainConfig::pretrain")]
    pub pretrain: TrainConfig,
    #[serde(default = "TrainConfig::finetune")]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    /// Inversion settings inside the continuous loop.
    #[serde(default = "d_continuous_inversion")]
    pub continuous_inversion: InversionConfig,
    #[serde(default = "d_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub objective: ObjectiveWeights,
    #[serde(default)]
    pub nsga2: Option<Nsga2Config>,
    #[serde(default)]
    pub gmm: GmmConfig,
    /// FOMAML adaptation sizes to compare.
    #[serde(default = "d_meta_sizes")]
    pub fomaml_sizes: Vec<usize>,
    #[serde(default = "d_fomaml")]
    pub fomaml: TrainConfig,
    #[serde(default = "TrainConfig::reptile")]
    pub reptile: TrainConfig,
    /// Held-out records per test task in the meta comparison.
    #[serde(default = "d_heldout")]
    pub heldout: usize,
    #[serde(default)]
    pub plots: bool,
}

/// Scalarization weights shared by inversion and NSGA-II best-individual choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveWeights {
    pub alpha_cycle: f64,
    pub alpha_fail: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        let o = Objective::default();
        Self {
            alpha_cycle: o.alpha_cycle,
            alpha_fail: o.alpha_fail,
        }
    }
}

fn d_m_train() -> usize {
    200
}
fn d_n() -> usize {
    128
}
fn d_m_test() -> usize {
    10
}
fn d_horizon() -> usize {
    100
}
fn d_eval() -> usize {
    10_000
}
fn d_step_eval() -> usize {
    2_000
}
fn d_warmup() -> usize {
    16
}
fn d_heldout() -> usize {
    512
}
fn d_meta_sizes() -> Vec<usize> {
    vec![5, 128]
}
fn d_fomaml() -> TrainConfig {
    TrainConfig::fomaml(128)
}
fn d_continuous_inversion() -> InversionConfig {
    InversionConfig {
        restarts: 1,
        ..InversionConfig::default()
    }
}

impl ExperimentConfig {
    /// Desk-scale preset of `kind`.
    pub fn preset(kind: ExperimentKind) -> Self {
        let mut cfg: Self = serde_json::from_value(serde_json::json!({ "kind": kind })).expect("defaults deserialize");
        cfg.fill_defaults();
        cfg
    }

    /// Resolves kind-dependent defaults left empty in the file.
    pub fn fill_defaults(&mut self) {
        let strategy = self.kind.strategy();
        if self.methods.is_empty() {
            self.methods = match self.kind {
                ExperimentKind::SpiralStationary => vec![Method::Dpse, Method::Fixed, Method::Pca, Method::Nsga2],
                ExperimentKind::ProbeStationary => vec![
                    Method::Dpse,
                    Method::DpseLinit,
                    Method::DpseCdist,
                    Method::Fixed,
                    Method::Gmm,
                    Method::Nsga2,
                ],
                ExperimentKind::ProbeNonstationary => vec![Method::DpseCdist, Method::Fixed, Method::Gmm],
                ExperimentKind::MetaComparison => vec![Method::Dpse, Method::Fomaml, Method::Reptile],
            };
        }
        if self.processes.is_empty() && self.kind == ExperimentKind::ProbeNonstationary {
            self.processes = vec![
                ProcessKind::drift_default(),
                ProcessKind::brownian_default(),
                ProcessKind::shift_default(),
            ];
        }
        if self.region.is_none() {
            let clearance = match strategy {
                StrategyKind::Probe => 1.5,
                StrategyKind::Spiral => 0.5,
            };
            self.region = Some(SearchRegion::new(10.0, clearance).expect("preset region is valid"));
        }
        if self.mixture.is_none() {
            self.mixture = Some(match strategy {
                StrategyKind::Probe => MixtureSpec::probe_default(),
                StrategyKind::Spiral => MixtureSpec::spiral_default(),
            });
        }
        if self.architecture.is_none() {
            self.architecture = Some(Architecture::Field);
        }
        if self.nsga2.is_none() {
            self.nsga2 = Some(match strategy {
                StrategyKind::Probe => Nsga2Config::probe_preset(),
                StrategyKind::Spiral => Nsga2Config::spiral_preset(),
            });
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Parses a config file. Fields absent from the file take the preset of
    /// its kind; an object-valued section given partially keeps the preset's
    /// other keys (one level deep).
    pub fn from_json(text: &str) -> Result<Self> {
        let invalid = |e: serde_json::Error| Error::Config(format!("invalid config: {e}"));
        let given: serde_json::Value = serde_json::from_str(text).map_err(invalid)?;
        let serde_json::Value::Object(given) = given else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let kind: ExperimentKind = serde_json::from_value(
            given.get("kind").cloned().ok_or_else(|| Error::Config("config has no `kind`".into()))?,
        )
        .map_err(invalid)?;
        let serde_json::Value::Object(mut merged) = serde_json::to_value(Self::preset(kind)).expect("config serializes")
        else {
            unreachable!("config serializes to an object")
        };
        for (key, value) in given {
            match (merged.get_mut(&key), value) {
                (Some(serde_json::Value::Object(base)), serde_json::Value::Object(part)) => base.extend(part),
                (_, value) => {
                    merged.insert(key, value);
                }
            }
        }
        let mut cfg: Self = serde_json::from_value(serde_json::Value::Object(merged)).map_err(invalid)?;
        cfg.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn strategy(&self) -> StrategyKind {
        self.kind.strategy()
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            region: self.region.expect("defaults filled"),
            timing: self.timing,
        }
    }

    pub fn mixture_spec(&self) -> &MixtureSpec {
        self.mixture.as_ref().expect("defaults filled")
    }

    pub fn shadow_config(&self) -> ShadowConfig {
        let base = match self.architecture.expect("defaults filled") {
            Architecture::Dense => ShadowConfig::dense(),
            Architecture::Field => ShadowConfig::field(),
        };
        base.with_seed(self.seed)
    }

    pub fn nsga2_config(&self, seed: u64) -> Nsga2Config {
        Nsga2Config {
            seed,
            ..self.nsga2.clone().expect("defaults filled")
        }
    }

    pub fn objective(&self, reg: Regularizer) -> Objective {
        Objective {
            alpha_cycle: self.objective.alpha_cycle,
            alpha_fail: self.objective.alpha_fail,
            regularizer: reg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("m_train", self.m_train),
            ("n_train", self.n_train),
            ("m_test", self.m_test),
            ("n_test", self.n_test),
            ("horizon", self.horizon),
            ("eval_samples", self.eval_samples),
            ("step_eval_samples", self.step_eval_samples),
            ("heldout", self.heldout),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        for m in &self.methods {
            if !m.allowed(self.kind) {
                return Err(Error::Config(format!("method {} is not valid for {}", m.name(), self.kind.name())));
            }
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Config("duplicate method".into()));
        }
        self.sim().region.validate()?;
        self.mixture_spec().validate()?;
        for p in &self.processes {
            p.validate()?;
        }
        for t in [&self.pretrain, &self.finetune, &self.fomaml, &self.reptile] {
            t.validate()?;
        }
        if self.kind == ExperimentKind::MetaComparison && self.m_train < 2 {
            return Err(Error::Config("the meta comparison needs at least two source tasks".into()));
        }
        if self.fomaml_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config("FOMAML adaptation sizes must be positive".into()));
        }
        for inv in [&self.inversion, &self.continuous_inversion] {
            if !(inv.lr > 0.0) || inv.restarts == 0 {
                return Err(Error::Config("inversion needs a positive step size and at least one restart".into()));
            }
        }
        self.objective(Regularizer::None).validate(self.strategy())?;
        self.nsga2_config(0).validate()?;
        if self.warmup == 0 {
            return Err(Error::Config("warmup must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the whole configuration.
    pub fn hash(&self) -> String {
        hash_json(self)
    }

    /// Short form of [`hash`](Self::hash) carried in report rows.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Output directory, created on demand.
pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}
