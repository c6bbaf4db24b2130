//! Ablation harness: trains one model per grid cell and seed, evaluates on
//! the held-out and ood-paraphrase splits (grounded and/or ungrounded), and
//! aggregates mean and standard deviation per cell.
//!
//! Grid axes that change training (CoT on/off, text-loss weight, model width,
//! train-split size) multiply into training runs; the retrieval axis only
//! changes evaluation and reuses the cell's trained model. A diverged run
//! marks its seed failed and the table is still emitted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, EvalOptions, EvalReport, RecordOutcome};
use crate::corpus::{FilterRule, InstructionRecord, PhraseBank, Split};
use crate::error::Error;
use crate::model::{train, AdamState, Model, ModelConfig, TrainConfig};
use crate::rag::VectorIndex;
use crate::rng::{derive_seed, tag};
use crate::Result;

/// Grid axes. Single-element axes keep that dimension fixed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateGrid {
    pub cot: Vec<bool>,
    pub lambda_text: Vec<f32>,
    pub rag: Vec<bool>,
    pub d_model: Vec<usize>,
    pub n_train: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for AblateGrid {
    fn default() -> Self {
        AblateGrid {
            cot: vec![true],
            lambda_text: vec![1.0],
            rag: vec![false],
            d_model: vec![128],
            n_train: vec![1000],
            seeds: vec![1, 2, 3],
        }
    }
}

/// Identity of a training cell (axes that affect training).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub cot: bool,
    pub lambda_text: f32,
    pub d_model: usize,
    pub n_train: usize,
}

impl CellKey {
    pub fn name(&self) -> String {
        format!(
            "cot={}|lt={}|d={}|n={}",
            if self.cot { "on" } else { "off" },
            self.lambda_text,
            self.d_model,
            self.n_train
        )
    }
}

/// Harness configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateConfig {
    pub grid: AblateGrid,
    /// Base model shape; the grid's d_model axis overrides `d_model` and
    /// scales `d_ff` to four times the width.
    pub base_model: ModelConfig,
    /// Base training knobs; the per-run seed is derived from the grid seed.
    pub train: TrainConfig,
    pub eval: EvalOptions,
    /// Parallel cell workers (1 = sequential).
    pub jobs: usize,
}

/// One evaluation of one trained run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedEval {
    pub rag: bool,
    pub split: Split,
    pub report: EvalReport,
    pub records: Vec<RecordOutcome>,
}

/// Everything produced by one (cell, seed) training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedDetail {
    pub cell: CellKey,
    pub seed: u64,
    /// Populated when the run diverged or errored; evals are empty then.
    pub failed: Option<String>,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub evals: Vec<SeedEval>,
}

/// Aggregated row: one per cell x rag x split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRow {
    pub cell: String,
    pub cot: bool,
    pub lambda_text: f32,
    pub d_model: usize,
    pub n_train: usize,
    pub steps: usize,
    pub rag: bool,
    pub split: Split,
    pub seeds: usize,
    pub failed: usize,
    pub aps_mean: f64,
    pub aps_std: f64,
    pub cot_acc_mean: f64,
    pub cot_acc_std: f64,
    pub parse_fail_mean: f64,
}

/// Full harness output: aggregate rows plus per-seed detail (the JSON mirror
/// carries per-record outcomes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<CellRow>,
    pub seed_results: Vec<SeedDetail>,
}

impl AblationReport {
    /// Stable column order; one row per cell x rag x split.
    pub const CSV_HEADER: &'static str = "cell,cot,lambda_text,d_model,n_train,steps,rag,split,\
seeds,failed,aps_mean,aps_std,cot_acc_mean,cot_acc_std,parse_fail_mean";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.cell,
                if r.cot { "on" } else { "off" },
                r.lambda_text,
                r.d_model,
                r.n_train,
                r.steps,
                if r.rag { "on" } else { "off" },
                r.split.name(),
                r.seeds,
                r.failed,
                r.aps_mean,
                r.aps_std,
                r.cot_acc_mean,
                r.cot_acc_std,
                r.parse_fail_mean,
            ));
        }
        out
    }

    /// Rows of one cell/split under a predicate, for directional checks.
    pub fn find_row(&self, cell: &CellKey, rag: bool, split: Split) -> Option<&CellRow> {
        let name = cell.name();
        self.rows
            .iter()
            .find(|r| r.cell == name && r.rag == rag && r.split == split)
    }
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (values.len() - 1) as f64;
    var.sqrt()
}

/// Trains and evaluates one (cell, seed) run.
#[allow(clippy::too_many_arguments)]
fn run_seed(
    cfg: &AblateConfig,
    bank: &PhraseBank,
    cell: &CellKey,
    seed: u64,
    train_records: &[InstructionRecord],
    held_out: &[InstructionRecord],
    ood: &[InstructionRecord],
    index: &VectorIndex,
) -> SeedDetail {
    let model_cfg = ModelConfig {
        d_model: cell.d_model,
        d_ff: cell.d_model * 4,
        seed: derive_seed(seed, &[tag("ablate-model")]),
        ..cfg.base_model
    };
    let train_cfg = TrainConfig {
        seed: derive_seed(seed, &[tag("ablate-train")]),
        lambda_text: cell.lambda_text,
        cot_enabled: cell.cot,
        ..cfg.train.clone()
    };

    let attempt = || -> Result<(Model, Option<f64>, Option<f64>)> {
        let mut model = Model::new(model_cfg)?;
        let mut opt = AdamState::new(&model.layout());
        let report = train(
            &mut model,
            &mut opt,
            bank,
            train_records,
            held_out,
            &train_cfg,
        )?;
        Ok((model, Some(report.final_train_loss), report.final_val_loss))
    };

    match attempt() {
        Err(e) => SeedDetail {
            cell: cell.clone(),
            seed,
            failed: Some(e.to_string()),
            final_train_loss: None,
            final_val_loss: None,
            evals: Vec::new(),
        },
        Ok((model, train_loss, val_loss)) => {
            let mut evals = Vec::new();
            let mut failure = None;
            for &rag in &cfg.grid.rag {
                for (split, records) in [(Split::HeldOut, held_out), (Split::OodParaphrase, ood)] {
                    let idx = if rag { Some(index) } else { None };
                    match evaluate(&model, idx, records, &cfg.eval) {
                        Ok((report, outcomes)) => evals.push(SeedEval {
                            rag,
                            split,
                            report,
                            records: outcomes,
                        }),
                        Err(e) => {
                            failure = Some(e.to_string());
                        }
                    }
                }
            }
            SeedDetail {
                cell: cell.clone(),
                seed,
                failed: failure,
                final_train_loss: train_loss,
                final_val_loss: val_loss,
                evals,
            }
        }
    }
}

/// Runs the whole grid over an already-generated corpus. `corpus` must hold
/// at least `max(grid.n_train)` train records plus held-out and ood records.
pub fn run_ablation(
    cfg: &AblateConfig,
    bank: &PhraseBank,
    _rules: &[FilterRule],
    corpus: &[InstructionRecord],
) -> Result<AblationReport> {
    let train_all: Vec<InstructionRecord> = corpus
        .iter()
        .filter(|r| r.split == Split::Train)
        .cloned()
        .collect();
    let held_out: Vec<InstructionRecord> = corpus
        .iter()
        .filter(|r| r.split == Split::HeldOut)
        .cloned()
        .collect();
    let ood: Vec<InstructionRecord> = corpus
        .iter()
        .filter(|r| r.split == Split::OodParaphrase)
        .cloned()
        .collect();

    if cfg.grid.cot.is_empty()
        || cfg.grid.lambda_text.is_empty()
        || cfg.grid.rag.is_empty()
        || cfg.grid.d_model.is_empty()
        || cfg.grid.n_train.is_empty()
        || cfg.grid.seeds.is_empty()
    {
        return Err(Error::InvalidConfig("empty ablation grid axis".into()));
    }
    let max_n = *cfg.grid.n_train.iter().max().unwrap();
    if train_all.len() < max_n {
        return Err(Error::InvalidConfig(format!(
            "corpus holds {} train records, grid needs {max_n}",
            train_all.len()
        )));
    }
    if held_out.is_empty() || ood.is_empty() {
        return Err(Error::InvalidConfig(
            "corpus is missing held_out or ood_paraphrase records".into(),
        ));
    }

    // One retrieval repository per train-size point: that size's train
    // records plus all held-out instructions (train-phrased).
    let mut indexes = Vec::new();
    for &n in &cfg.grid.n_train {
        let idx = VectorIndex::build(
            train_all[..n]
                .iter()
                .chain(held_out.iter())
                .map(|r| (r.id.clone(), r.instruction.clone())),
        )?;
        indexes.push((n, idx));
    }

    // Cartesian cell list in a fixed order, then seeds within cells.
    let mut tasks: Vec<(CellKey, u64, usize)> = Vec::new();
    for &cot in &cfg.grid.cot {
        for &lt in &cfg.grid.lambda_text {
            for &d in &cfg.grid.d_model {
                for (n_idx, &n) in cfg.grid.n_train.iter().enumerate() {
                    for &seed in &cfg.grid.seeds {
                        tasks.push((
                            CellKey {
                                cot,
                                lambda_text: lt,
                                d_model: d,
                                n_train: n,
                            },
                            seed,
                            n_idx,
                        ));
                    }
                }
            }
        }
    }

    let run = |(cell, seed, n_idx): &(CellKey, u64, usize)| -> SeedDetail {
        run_seed(
            cfg,
            bank,
            cell,
            *seed,
            &train_all[..cell.n_train],
            &held_out,
            &ood,
            &indexes[*n_idx].1,
        )
    };
    let seed_results: Vec<SeedDetail> = if cfg.jobs > 1 {
        tasks.par_iter().map(run).collect()
    } else {
        tasks.iter().map(run).collect()
    };

    // Aggregate per cell x rag x split, preserving cell order.
    let mut rows = Vec::new();
    let mut seen_cells: Vec<CellKey> = Vec::new();
    for (cell, _, _) in &tasks {
        if !seen_cells.contains(cell) {
            seen_cells.push(cell.clone());
        }
    }
    for cell in &seen_cells {
        for &rag in &cfg.grid.rag {
            for split in [Split::HeldOut, Split::OodParaphrase] {
                let of_cell: Vec<&SeedDetail> = seed_results
                    .iter()
                    .filter(|s| s.cell == *cell)
                    .collect();
                let failed = of_cell.iter().filter(|s| s.failed.is_some()).count();
                let mut aps = Vec::new();
                let mut cot_acc = Vec::new();
                let mut parse_fail = Vec::new();
                for s in &of_cell {
                    if s.failed.is_some() {
                        continue;
                    }
                    if let Some(e) = s.evals.iter().find(|e| e.rag == rag && e.split == split) {
                        aps.push(e.report.aps_analog);
                        cot_acc.push(e.report.cot_accuracy);
                        parse_fail.push(e.report.parse_failure_rate);
                    }
                }
                let mean = |v: &Vec<f64>| {
                    if v.is_empty() {
                        f64::NAN
                    } else {
                        v.iter().sum::<f64>() / v.len() as f64
                    }
                };
                let aps_mean = mean(&aps);
                let cot_mean = mean(&cot_acc);
                rows.push(CellRow {
                    cell: cell.name(),
                    cot: cell.cot,
                    lambda_text: cell.lambda_text,
                    d_model: cell.d_model,
                    n_train: cell.n_train,
                    steps: cfg.train.steps,
                    rag,
                    split,
                    seeds: aps.len(),
                    failed,
                    aps_mean,
                    aps_std: sample_std(&aps, aps_mean),
                    cot_acc_mean: cot_mean,
                    cot_acc_std: sample_std(&cot_acc, cot_mean),
                    parse_fail_mean: mean(&parse_fail),
                });
            }
        }
    }

    Ok(AblationReport { rows, seed_results })
}
