//! Run configuration: a strict TOML document plus flag overrides.
//!
//! Unknown keys are rejected at parse time. Every run directory is named by
//! the fingerprint of the fully resolved configuration plus the seed, and the
//! resolved document is logged into the directory before anything else runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voiceforge::corpus::CorpusSpec;
use voiceforge::eval::{AblateConfig, AblateGrid, EvalDecode, EvalOptions};
use voiceforge::model::{ModelConfig, TrainConfig};
use voiceforge::rng::{derive_seed, fnv1a64, tag};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub rag: RagSection,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            corpus: CorpusSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            rag: RagSection::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub n_train: usize,
    pub n_held_out: usize,
    pub n_ood: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            n_train: 1000,
            n_held_out: 100,
            n_ood: 100,
        }
    }
}

impl CorpusSection {
    pub fn spec(&self) -> CorpusSpec {
        CorpusSpec {
            n_train: self.n_train,
            n_held_out: self.n_held_out,
            n_ood: self.n_ood,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_length: usize,
    pub speech_tokens: u32,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            context_length: 512,
            speech_tokens: 64,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, master_seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            context_length: self.context_length,
            vocab_size: 307 + self.speech_tokens as usize,
            seed: derive_seed(master_seed, &[tag("model-init")]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub dropout_p: f64,
    pub lambda_text: f32,
    pub warmup_frac: f64,
    pub val_every: usize,
    pub reference_p: f64,
    pub cot_enabled: bool,
    pub target_loss: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            lr: d.lr,
            batch_size: d.batch_size,
            steps: d.steps,
            dropout_p: d.dropout_p,
            lambda_text: d.lambda_text,
            warmup_frac: d.warmup_frac,
            val_every: d.val_every,
            reference_p: d.reference_p,
            cot_enabled: d.cot_enabled,
            target_loss: None,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, master_seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            steps: self.steps,
            dropout_p: self.dropout_p,
            lambda_text: self.lambda_text,
            seed: derive_seed(master_seed, &[tag("train")]),
            warmup_frac: self.warmup_frac,
            val_every: self.val_every,
            reference_p: self.reference_p,
            cot_enabled: self.cot_enabled,
            target_loss: self.target_loss,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RagSection {
    pub k: usize,
    pub min_score: f64,
}

impl Default for RagSection {
    fn default() -> Self {
        RagSection {
            k: 1,
            min_score: 0.15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Sampling temperature; zero decodes greedily.
    pub temperature: f64,
    pub guard: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            temperature: 0.0,
            guard: true,
        }
    }
}

impl EvalSection {
    pub fn eval_options(&self, rag: &RagSection, master_seed: u64) -> EvalOptions {
        let mode = if self.temperature <= f64::EPSILON {
            EvalDecode::Greedy
        } else {
            EvalDecode::Temperature {
                tau: self.temperature,
                seed: derive_seed(master_seed, &[tag("decode")]),
            }
        };
        EvalOptions {
            mode,
            guard: self.guard,
            k: rag.k,
            min_score: rag.min_score,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub cot: Vec<bool>,
    pub lambda_text: Vec<f32>,
    pub rag: Vec<bool>,
    pub d_model: Vec<usize>,
    pub n_train: Vec<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            seeds: vec![1, 2, 3],
            steps: 1500,
            cot: vec![true],
            lambda_text: vec![1.0],
            rag: vec![false],
            d_model: vec![128],
            n_train: vec![1000],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Grid preset names accepted by `ablate --grid`.
    pub fn apply_grid_preset(&mut self, preset: &str) -> anyhow::Result<()> {
        match preset {
            "cot" => self.ablate.cot = vec![true, false],
            "text-ce" => self.ablate.lambda_text = vec![1.0, 0.0],
            "rag" => self.ablate.rag = vec![false, true],
            "model-size" => self.ablate.d_model = vec![64, 128],
            "data-size" => self.ablate.n_train = vec![250, 1000],
            other => anyhow::bail!("unknown grid preset {other:?}"),
        }
        Ok(())
    }

    pub fn ablate_config(&self, jobs: usize) -> AblateConfig {
        AblateConfig {
            grid: AblateGrid {
                cot: self.ablate.cot.clone(),
                lambda_text: self.ablate.lambda_text.clone(),
                rag: self.ablate.rag.clone(),
                d_model: self.ablate.d_model.clone(),
                n_train: self.ablate.n_train.clone(),
                seeds: self.ablate.seeds.clone(),
            },
            base_model: self.model.model_config(self.seed),
            train: TrainConfig {
                steps: self.ablate.steps,
                ..self.train.train_config(self.seed)
            },
            eval: self.eval.eval_options(&self.rag, self.seed),
            jobs,
        }
    }

    pub fn corpus_seed(&self) -> u64 {
        derive_seed(self.seed, &[tag("corpus")])
    }

    /// Content fingerprint of the resolved config for run-directory naming.
    pub fn fingerprint(&self, subcommand: &str) -> String {
        let blob = format!("{subcommand}|{}", self.to_toml());
        format!("{:012x}", fnv1a64(blob.as_bytes()) & 0xffff_ffff_ffff)
    }
}

/// Creates (or wipes and recreates) the run directory for this invocation and
/// logs the resolved config into it.
pub fn prepare_run_dir(
    out_dir: &Path,
    subcommand: &str,
    cfg: &RunConfig,
) -> anyhow::Result<PathBuf> {
    let name = format!("{subcommand}-{}-s{}", cfg.fingerprint(subcommand), cfg.seed);
    let dir = out_dir.join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("resolved-config.toml"), cfg.to_toml())?;
    Ok(dir)
}
