//! Experiment configuration files.
//!
//! One JSON document drives every subcommand; each subcommand reads the
//! sections it needs. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use murag::attack::LedgerMode;
use murag::corpus::ScoreBins;
use murag::generator::RemoteGeneratorConfig;
use murag::orchestrators::{Method, MethodConfig, MuragAdaConfig};
use murag::workload::WorkloadSpec;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Synthetic data. Its own `seed` key is replaced by the run seed.
    #[serde(default)]
    pub workload: Option<WorkloadSpec>,
    /// Corpus JSONL file, used together with `queries` instead of `workload`.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub queries: Option<PathBuf>,
    #[serde(default)]
    pub generator: GeneratorConfig,
    /// Method for `run`.
    #[serde(default)]
    pub method: Option<MethodConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub tau_study: Option<TauStudyConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeneratorConfig {
    Stub {
        #[serde(default = "default_vocab")]
        vocab_size: usize,
        #[serde(default = "default_p_base")]
        p_base: f64,
    },
    Remote(RemoteGeneratorConfig),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::Stub { vocab_size: default_vocab(), p_base: default_p_base() }
    }
}

fn default_vocab() -> usize {
    32
}

fn default_p_base() -> f64 {
    0.3
}

/// Hyperparameter grid for `sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    /// Total ε each private method may claim over the whole query stream.
    pub eps_total: f64,
    /// Seeds the reported rows are computed on.
    pub seeds: Vec<u64>,
    /// When non-empty, each method's cell is chosen on these seeds and only
    /// the chosen cell runs on `seeds`. Otherwise the best cell is chosen
    /// on `seeds` directly.
    #[serde(default)]
    pub tuning_seeds: Vec<u64>,
    #[serde(default = "default_voters")]
    pub num_voters: usize,
    #[serde(default = "default_docs_per_voter")]
    pub docs_per_voter: Vec<usize>,
    #[serde(default = "default_eps_token")]
    pub eps_token: Vec<f64>,
    #[serde(default = "default_max_retrievals")]
    pub max_retrievals: Vec<u32>,
    #[serde(default = "default_tau")]
    pub tau: Vec<f64>,
    #[serde(default = "default_eps_thr")]
    pub eps_thr: f64,
    #[serde(default = "default_gamma")]
    pub gamma: Vec<f64>,
    /// Vote threshold as a fraction of the number of voters.
    #[serde(default = "default_theta_fraction")]
    pub vote_threshold_fraction: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub bins: ScoreBins,
}

fn default_voters() -> usize {
    10
}

fn default_docs_per_voter() -> Vec<usize> {
    vec![3, 4, 5]
}

fn default_eps_token() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

fn default_max_retrievals() -> Vec<u32> {
    vec![1, 5]
}

fn default_tau() -> Vec<f64> {
    vec![88.0, 90.0, 92.0, 93.0, 94.0, 95.0, 96.0, 97.0]
}

fn default_eps_thr() -> f64 {
    1.0
}

fn default_gamma() -> Vec<f64> {
    vec![0.1]
}

fn default_theta_fraction() -> f64 {
    0.5
}

fn default_max_tokens() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Systems under attack; each is attacked on every seed.
    pub systems: Vec<MethodConfig>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_probes")]
    pub probes_per_candidate: usize,
    #[serde(default)]
    pub ledger_mode: LedgerMode,
}

fn default_pairs() -> usize {
    50
}

fn default_probes() -> usize {
    30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauStudyConfig {
    /// Base adaptive configuration; its `eps_thr` is replaced by each grid value.
    pub method: MuragAdaConfig,
    pub eps_thr: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// Parses a config file. Relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.corpus, &mut cfg.queries].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Checks what every subcommand relies on.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match (&self.workload, &self.corpus, &self.queries) {
            (Some(w), None, None) => w.validate().map_err(CliError::config)?,
            (None, Some(_), Some(_)) => {}
            (None, None, None) => return bad("config needs `workload` or `corpus` + `queries`".into()),
            _ => return bad("use either `workload` or both `corpus` and `queries`, not a mix".into()),
        }
        if let GeneratorConfig::Stub { vocab_size, p_base } = &self.generator {
            murag::generator::StubGenerator::new(*vocab_size, *p_base, 0).map_err(CliError::config)?;
            if let Some(w) = &self.workload {
                if w.vocab_size > *vocab_size {
                    return bad(format!(
                        "workload vocabulary {} exceeds generator vocabulary {vocab_size}",
                        w.vocab_size
                    ));
                }
            }
        }
        if let Some(m) = &self.method {
            m.validate().map_err(CliError::config)?;
        }
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        if let Some(a) = &self.attack {
            if a.systems.is_empty() || a.seeds.is_empty() || a.pairs == 0 || a.probes_per_candidate == 0 {
                return bad("attack needs systems, seeds, pairs ≥ 1 and probes_per_candidate ≥ 1".into());
            }
            for s in &a.systems {
                s.validate().map_err(CliError::config)?;
            }
        }
        if let Some(t) = &self.tau_study {
            if t.eps_thr.is_empty() || t.seeds.is_empty() {
                return bad("tau_study needs a non-empty eps_thr grid and seeds".into());
            }
            if t.eps_thr.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
                return bad("tau_study eps_thr values must be positive".into());
            }
            t.method.validate().map_err(CliError::config)?;
        }
        Ok(())
    }
}

impl SweepConfig {
    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(format!("sweep: {m}")));
        if self.methods.is_empty() || self.seeds.is_empty() {
            return bad("needs methods and seeds");
        }
        if !(self.eps_total > 0.0) || !self.eps_total.is_finite() {
            return bad("eps_total must be positive");
        }
        if self.num_voters == 0 || self.docs_per_voter.is_empty() || self.docs_per_voter.contains(&0) {
            return bad("num_voters and docs_per_voter must be positive");
        }
        if self.eps_token.is_empty() || self.eps_token.iter().any(|e| !(*e > 0.0)) {
            return bad("eps_token values must be positive");
        }
        if self.max_retrievals.is_empty() || self.max_retrievals.contains(&0) {
            return bad("max_retrievals values must be at least 1");
        }
        if self.methods.contains(&Method::Murag) && self.tau.is_empty() {
            return bad("murag needs a tau grid");
        }
        if self.methods.contains(&Method::Subsample) && self.gamma.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return bad("gamma values must lie in (0, 1)");
        }
        if !(self.eps_thr > 0.0) || self.max_tokens == 0 {
            return bad("eps_thr and max_tokens must be positive");
        }
        self.bins.count().map_err(CliError::config)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 3,
        "workload": {"corpus_size": 100, "dim": 8, "num_queries": 4, "mode": "independent", "relevant_per_query": 5},
        "method": {"method": "non-rag", "max_tokens": 3}
    }"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.generator, GeneratorConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = MINIMAL.replace("\"seed\"", "\"sede\"");
        assert!(matches!(ExperimentConfig::from_json(&typo), Err(CliError::Config(_))));
        let nested = MINIMAL.replace("\"dim\"", "\"dimension\"");
        assert!(ExperimentConfig::from_json(&nested).is_err());
    }

    #[test]
    fn unknown_method_is_a_config_error() {
        let bad = MINIMAL.replace("non-rag", "oracle");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(CliError::Config(_))));
    }

    #[test]
    fn data_source_must_be_unambiguous() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.corpus = Some("c.jsonl".into());
        assert!(cfg.validate().is_err());
        cfg.workload = None;
        assert!(cfg.validate().is_err());
        cfg.queries = Some("q.jsonl".into());
        cfg.validate().unwrap();
    }

    #[test]
    fn sweep_defaults_follow_the_standard_grid() {
        let text = MINIMAL.replace(
            "\"method\": {\"method\": \"non-rag\", \"max_tokens\": 3}",
            "\"sweep\": {\"methods\": [\"murag\", \"murag-ada\"], \"eps_total\": 10, \"seeds\": [1, 2]}",
        );
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        cfg.validate().unwrap();
        let s = cfg.sweep.unwrap();
        assert_eq!(s.docs_per_voter, vec![3, 4, 5]);
        assert_eq!(s.eps_token, vec![0.5, 1.0, 2.0]);
        assert_eq!(s.max_retrievals, vec![1, 5]);
        assert_eq!(s.eps_thr, 1.0);
    }

    #[test]
    fn schema_lists_every_top_level_key() {
        let schema: serde_json::Value =
            serde_json::from_str(include_str!("../../../configs/config.schema.json")).unwrap();
        let mut documented: Vec<&String> = schema["properties"].as_object().unwrap().keys().collect();
        let value = serde_json::to_value(ExperimentConfig::from_json(MINIMAL).unwrap()).unwrap();
        let mut actual: Vec<&String> = value.as_object().unwrap().keys().collect();
        documented.sort();
        actual.sort();
        assert_eq!(documented, actual);
    }

    #[test]
    fn shipped_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.file_name().unwrap() != "config.schema.json" {
                ExperimentConfig::load(&path).unwrap().validate().unwrap();
            }
        }
    }
}
