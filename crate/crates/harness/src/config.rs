use std::path::{Path, PathBuf};

use framemix_core::budget::{CostModel, PoolSizes, RngAlgorithm};
use framemix_core::evaluation::EvalOptions;
use framemix_core::llm::{HttpConfig, TokenPrice};
use framemix_core::synthesis::{GenerationConfig, LabelingConfig, TypeDefinitions};
use framemix_core::tokenize::TokenizerKind;
use framemix_core::{Money, Taxonomy, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Type-definition file; relative paths resolve against the config file.
    pub taxonomy: Option<PathBuf>,
    pub tokenizer: TokenizerKind,
    pub rng: RngAlgorithm,
    pub seeds: Vec<u64>,
    pub session_window: usize,
    pub cost: CostModel,
    pub pools: PoolSizes,
    pub sweep: SweepConfig,
    pub llm: LlmConfig,
    pub generation: GenerationConfig,
    pub labeling: LabelingConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            taxonomy: None,
            tokenizer: TokenizerKind::Char,
            rng: RngAlgorithm::ChaCha8,
            seeds: vec![1, 2, 3, 4, 5],
            session_window: 10,
            cost: CostModel::default(),
            pools: PoolSizes::default(),
            sweep: SweepConfig::default(),
            llm: LlmConfig::default(),
            generation: GenerationConfig::default(),
            labeling: LabelingConfig::default(),
            trainer: TrainerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub variant: Variant,
    /// Empty means the default grid of the chosen variant.
    pub budgets: Vec<Money>,
    pub ratio_step: f64,
    /// Pretrain on the whole pseudo pool, then train on human data only.
    pub augment: bool,
    /// Sweep rows run concurrently.
    pub parallel: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            variant: Variant::HumanPseudo,
            budgets: Vec::new(),
            ratio_step: 0.1,
            augment: false,
            parallel: 1,
        }
    }
}

impl SweepConfig {
    pub fn budgets(&self) -> Vec<Money> {
        self.budgets_for(self.variant)
    }

    /// Configured budgets, or the default grid of `variant`.
    pub fn budgets_for(&self, variant: Variant) -> Vec<Money> {
        if !self.budgets.is_empty() {
            return self.budgets.clone();
        }
        let dollars: &[i64] = match variant {
            Variant::PseudoPseudo => &[200, 400, 800, 1_200, 1_600],
            _ => &[800, 1_200, 1_600, 3_200, 6_400, 12_800],
        };
        dollars.iter().map(|&d| Money::from_dollars(d)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub http: HttpConfig,
    pub price: TokenPrice,
    /// Serve responses from this transcript instead of the live endpoint.
    pub replay: Option<PathBuf>,
    /// Append every live exchange to this transcript.
    pub record: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            http: HttpConfig::default(),
            // list price of the pinned model: $0.03 / 1k prompt, $0.06 / 1k completion
            price: TokenPrice {
                per_prompt_token: Money::from_micros(30),
                per_completion_token: Money::from_micros(60),
            },
            replay: None,
            record: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    #[default]
    Command,
    Identity,
    Empty,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub kind: TrainerKind,
    /// Program and arguments. `{train}`, `{valid}`, `{test}`, `{pred}`,
    /// `{pretrain}`, `{seed}` and `{workdir}` are substituted; arguments
    /// mentioning `{pretrain}` are dropped outside augment mode.
    pub command: Vec<String>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            kind: TrainerKind::Command,
            command: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ecr_allowance: bool,
    pub exact_trigger: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            ecr_allowance: o.ecr_allowance,
            exact_trigger: o.exact_trigger,
        }
    }
}

impl EvalConfig {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            ecr_allowance: self.ecr_allowance,
            exact_trigger: self.exact_trigger,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config: Config =
            toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.taxonomy, &mut config.llm.replay, &mut config.llm.record]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.cost.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.generation.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be non-empty".into()));
        }
        if self.session_window == 0 {
            return Err(HarnessError::Config("session_window must be positive".into()));
        }
        if !(self.sweep.ratio_step > 0.0 && self.sweep.ratio_step <= 1.0) {
            return Err(HarnessError::Config("sweep.ratio_step must be in (0, 1]".into()));
        }
        if !matches!(self.sweep.variant, Variant::HumanPseudo | Variant::PseudoPseudo) {
            return Err(HarnessError::Config("sweep.variant must be HP or PP".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, recorded in report manifests.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Definitions from the taxonomy file, or placeholder definitions for
    /// the built-in taxonomy.
    pub fn type_definitions(&self) -> Result<TypeDefinitions, HarnessError> {
        match &self.taxonomy {
            Some(path) => load_type_definitions(path),
            None => {
                let t = Taxonomy::default();
                let name = |ty: &String| (ty.clone(), ty.to_lowercase().replace('_', " "));
                Ok(TypeDefinitions {
                    triggers: t.trigger_types.iter().map(name).collect(),
                    arguments: t.argument_types.iter().map(name).collect(),
                })
            }
        }
    }

    pub fn taxonomy(&self) -> Result<Taxonomy, HarnessError> {
        match &self.taxonomy {
            Some(_) => self
                .type_definitions()?
                .taxonomy()
                .map_err(|e| HarnessError::Config(e.to_string())),
            None => Ok(Taxonomy::default()),
        }
    }
}

/// Reads a TOML file with `[triggers]` and `[arguments]` tables mapping
/// each type name to its definition text.
pub fn load_type_definitions(path: &Path) -> Result<TypeDefinitions, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}
