//! TOML scenario configuration: strict parsing (unknown keys rejected),
//! documented defaults, and validation of cross-field constraints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::{RrmParams, SeqModelParams};
use crate::error::{Result, SimError};
use crate::rankers::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    #[serde(rename = "synthetic-slate")]
    SyntheticSlate,
    #[serde(rename = "synthetic-sequential")]
    SyntheticSequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Random,
    CtrWeighted,
}

/// Metric knobs shared by both scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// RBO persistence for preference shift.
    pub rbo_p: f64,
    /// Preference-list depth for preference shift.
    pub ps_k: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { rbo_p: 0.9, ps_k: 5 }
    }
}

/// Full scenario configuration. Unset fields take scenario-appropriate
/// defaults (see the `config-reference` subcommand).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub population: Option<usize>,
    /// Displayed slate size K.
    pub slate_size: Option<usize>,
    /// Candidates recalled per round before ranking.
    pub recall_size: Option<usize>,
    pub rounds: Option<u32>,
    pub sampler: SamplerKind,
    pub mix_ratio: f64,
    pub seed: u64,
    /// Slate scenario: number of 4-document groups.
    pub n_groups: Option<usize>,
    /// Favorite-set size for FCTR.
    pub favorite_k: Option<usize>,
    /// Planner oracle rollout horizon.
    pub planner_horizon: usize,
    pub slate: RrmParams,
    pub sequential: SeqModelParams,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            scenario: ScenarioKind::SyntheticSlate,
            population: None,
            slate_size: None,
            recall_size: None,
            rounds: None,
            sampler: SamplerKind::Random,
            mix_ratio: 1.0,
            seed: 0,
            n_groups: None,
            favorite_k: None,
            planner_horizon: 20,
            slate: RrmParams::default(),
            sequential: SeqModelParams::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn population(&self) -> usize {
        self.population.unwrap_or(1000)
    }

    pub fn slate_size(&self) -> usize {
        self.slate_size.unwrap_or(match self.scenario {
            ScenarioKind::SyntheticSlate => 3,
            ScenarioKind::SyntheticSequential => 1,
        })
    }

    pub fn recall_size(&self) -> usize {
        self.recall_size.unwrap_or(match self.scenario {
            ScenarioKind::SyntheticSlate => 3,
            ScenarioKind::SyntheticSequential => 10,
        })
    }

    pub fn rounds(&self) -> u32 {
        self.rounds.unwrap_or(match self.scenario {
            ScenarioKind::SyntheticSlate => 10,
            ScenarioKind::SyntheticSequential => 20,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups.unwrap_or(100)
    }

    pub fn favorite_k(&self) -> usize {
        self.favorite_k.unwrap_or(match self.scenario {
            ScenarioKind::SyntheticSlate => 1,
            ScenarioKind::SyntheticSequential => 10,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.population() == 0 {
            return Err(SimError::Config("population must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(SimError::Config("mix_ratio must be in [0, 1]".into()));
        }
        if self.slate_size() == 0 || self.slate_size() > self.recall_size() {
            return Err(SimError::Config(format!(
                "slate_size {} must be in 1..=recall_size {}",
                self.slate_size(),
                self.recall_size()
            )));
        }
        match self.scenario {
            ScenarioKind::SyntheticSlate => {
                if self.slate.exam_probs.len() < self.slate_size() {
                    return Err(SimError::Config(format!(
                        "slate.exam_probs has {} entries but slate_size is {}",
                        self.slate.exam_probs.len(),
                        self.slate_size()
                    )));
                }
                if self.n_groups() == 0 || self.n_groups() % 2 != 0 {
                    return Err(SimError::Config("n_groups must be even and >= 2".into()));
                }
            }
            ScenarioKind::SyntheticSequential => {
                let n_docs = self.sequential.n_topics * self.sequential.docs_per_topic;
                if self.recall_size() > n_docs {
                    return Err(SimError::Config(format!(
                        "recall_size {} exceeds the {n_docs}-document set",
                        self.recall_size()
                    )));
                }
            }
        }
        if !(0.0 < self.metrics.rbo_p && self.metrics.rbo_p < 1.0) {
            return Err(SimError::Config("metrics.rbo_p must be in (0, 1)".into()));
        }
        if self.metrics.ps_k == 0 {
            return Err(SimError::Config("metrics.ps_k must be >= 1".into()));
        }
        if self.planner_horizon == 0 {
            return Err(SimError::Config("planner_horizon must be >= 1".into()));
        }
        self.slate.validate()?;
        self.sequential.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML form (resolved optionals stay unresolved; defaults are
    /// documented by `reference_text`).
    pub fn dump(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Human-readable reference of every key and its default, emitted by the
/// `config-reference` subcommand.
pub fn reference_text() -> String {
    let d = ScenarioConfig::default();
    let seq = &d.sequential;
    let rrm = &d.slate;
    let train = &d.train;
    format!(
        r#"# Scenario configuration reference. Every key is optional; omitted keys
# take the defaults below. Unknown keys are rejected.

# "synthetic-slate" (decoy-effect slate choice) or "synthetic-sequential"
# (topic/budget consumption).
scenario = "synthetic-slate"

# Number of simulated users.                        default: 1000
#population = 1000
# Displayed slate size K.                            default: 3 (slate) / 1 (sequential)
#slate_size = 3
# Candidates recalled before ranking.                default: 3 (slate) / 10 (sequential)
#recall_size = 3
# Interaction rounds per user.                       default: 10 (slate) / 20 (sequential)
#rounds = 10
# Recall sampler: "random" or "ctr-weighted" (the slate scenario always uses
# its fixed two-list recall rule instead).
sampler = "random"
# Fraction of training rounds taken from the first (more manipulative) log.
mix_ratio = {mix}
seed = {seed}
# Slate scenario: number of 4-document groups (even). default: 100
#n_groups = 100
# Favorite-set size for FCTR.                         default: 1 (slate) / 10 (sequential)
#favorite_k = 1
planner_horizon = {horizon}

[slate]                      # slate-choice action model
no_choice_logit = {ncl}
exam_probs = {exam:?}

[sequential]                 # sequential consumption action model
n_topics = {nt}
docs_per_topic = {dpt}
# Per-topic mean quality; empty = linear ramp 0.2..1.0.
quality_means = []
quality_std = {qstd}
initial_budget = {budget}
budget_cost_base = {cb}
quality_bonus = {qb}
budget_cost_floor = {cf}
click_sharpness = {cs}
drift_rate = {dr}

[train]                      # ranker training
learning_rate = {lr}
epochs = {epochs}
batch_size = {bs}
seed = {tseed}
loss = "cross-entropy"       # or "reweighted"
mix_ratio = {tmix}
position_bias = {pb:?}       # used by the reweighted loss

[metrics]
rbo_p = {rbop}
ps_k = {psk}
"#,
        mix = d.mix_ratio,
        seed = d.seed,
        horizon = d.planner_horizon,
        ncl = rrm.no_choice_logit,
        exam = rrm.exam_probs,
        nt = seq.n_topics,
        dpt = seq.docs_per_topic,
        qstd = seq.quality_std,
        budget = seq.initial_budget,
        cb = seq.budget_cost_base,
        qb = seq.quality_bonus,
        cf = seq.budget_cost_floor,
        cs = seq.click_sharpness,
        dr = seq.drift_rate,
        lr = train.learning_rate,
        epochs = train.epochs,
        bs = train.batch_size,
        tseed = train.seed,
        tmix = train.mix_ratio,
        pb = train.position_bias,
        rbop = d.metrics.rbo_p,
        psk = d.metrics.ps_k,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let cfg = ScenarioConfig::parse("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.population(), 1000);
        assert_eq!(cfg.slate_size(), 3);
        assert_eq!(cfg.rounds(), 10);
    }

    #[test]
    fn sequential_defaults_differ() {
        let cfg = ScenarioConfig::parse("scenario = \"synthetic-sequential\"").unwrap();
        assert_eq!(cfg.slate_size(), 1);
        assert_eq!(cfg.recall_size(), 10);
        assert_eq!(cfg.rounds(), 20);
        assert_eq!(cfg.favorite_k(), 10);
    }

    #[test]
    fn unknown_key_rejected_by_name() {
        let err = ScenarioConfig::parse("not_a_key = 1").unwrap_err();
        assert!(err.to_string().contains("not_a_key"), "{err}");
    }

    #[test]
    fn short_exam_probs_is_a_constraint_error() {
        let err = ScenarioConfig::parse("[slate]\nexam_probs = [1.0, 0.8]").unwrap_err();
        assert!(err.to_string().contains("exam_probs"), "{err}");
    }

    #[test]
    fn slate_larger_than_recall_rejected() {
        let err = ScenarioConfig::parse("slate_size = 5\nrecall_size = 3").unwrap_err();
        assert!(err.to_string().contains("slate_size"), "{err}");
    }

    #[test]
    fn bad_mix_ratio_rejected() {
        assert!(ScenarioConfig::parse("mix_ratio = 1.5").is_err());
    }

    #[test]
    fn dump_load_round_trip() {
        let cfg = ScenarioConfig::parse("seed = 7\nmix_ratio = 0.25").unwrap();
        let again = ScenarioConfig::parse(&cfg.dump()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.dump(), again.dump());
    }

    #[test]
    fn reference_text_is_itself_loadable() {
        let cfg = ScenarioConfig::parse(&reference_text()).unwrap();
        assert_eq!(cfg.seed, 0);
    }
}
