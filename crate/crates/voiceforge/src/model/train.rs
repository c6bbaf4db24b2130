//! Adam training loop over corpus records.
//!
//! Each step draws a batch from a seeded epoch shuffle, rebuilds sequences
//! with fresh dropout draws (and optional self-reference grounding), runs
//! forward/backward per sequence in parallel, merges gradients in batch
//! order, and applies Adam with linear warmup. Everything is a deterministic
//! function of the seed within one build.

use rayon::prelude::*;

use super::net::{loss_and_grad, loss_only, Params};
use super::Model;
use crate::corpus::{render_instruction, InstructionRecord, PhraseBank, PhraseMode};
use crate::error::Error;
use crate::rng::{derive_seed, tag, Rng};
use crate::sequencer::{build_sequence, SequenceOptions, TokenSequence};
use crate::Result;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub dropout_p: f64,
    pub lambda_text: f32,
    pub seed: u64,
    /// Fraction of steps spent in linear warmup.
    pub warmup_frac: f64,
    /// Validation cadence in steps (0 disables validation).
    pub val_every: usize,
    /// Probability that a training sequence carries a self-reference line,
    /// teaching the model the inference-time grounding format.
    pub reference_p: f64,
    /// When false, sequences are built without the CoT segment.
    pub cot_enabled: bool,
    /// Early stop once the smoothed training loss drops below this.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 8,
            steps: 3000,
            dropout_p: 0.2,
            lambda_text: 1.0,
            seed: 42,
            warmup_frac: 0.05,
            val_every: 200,
            reference_p: 0.5,
            cot_enabled: true,
            target_loss: None,
        }
    }
}

/// Adam first/second moment estimates, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Params<f32>,
    pub v: Params<f32>,
}

impl AdamState {
    pub fn new(layout: &super::net::ParamLayout) -> AdamState {
        AdamState {
            m: Params::zeros(layout),
            v: Params::zeros(layout),
        }
    }
}

/// One point of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: Vec<TracePoint>,
    pub steps_run: usize,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
}

/// Builds the training sequence for one record at one epoch, including the
/// dropout draw and the optional self-reference.
fn build_training_sequence(
    model: &Model,
    bank: &PhraseBank,
    record: &InstructionRecord,
    cfg: &TrainConfig,
    epoch: u64,
    idx: usize,
) -> Result<TokenSequence> {
    let rec_seed = derive_seed(cfg.seed, &[tag("sequence"), epoch, idx as u64]);
    let reference = if cfg.reference_p > 0.0 {
        let mut rng = Rng::new(derive_seed(rec_seed, &[tag("ref-coin")]));
        if rng.chance(cfg.reference_p) {
            let render_seed = derive_seed(rec_seed, &[tag("ref-render")]);
            Some(render_instruction(
                &record.attributes,
                bank,
                render_seed,
                PhraseMode::Train,
            )?)
        } else {
            None
        }
    } else {
        None
    };
    let options = SequenceOptions {
        dropout_p: cfg.dropout_p,
        lambda_text: cfg.lambda_text,
        cot_enabled: cfg.cot_enabled,
        reference,
        context_length: model.config.context_length,
    };
    build_sequence(&model.vocab, record, &options, rec_seed)
}

/// Pooled validation loss over prebuilt sequences, parallel but merged in a
/// fixed order.
fn validation_loss(model: &Model, seqs: &[TokenSequence]) -> Result<f64> {
    if seqs.is_empty() {
        return Ok(f64::NAN);
    }
    let layout = model.layout();
    let parts: Vec<Result<f64>> = seqs
        .par_iter()
        .map(|s| loss_only(&model.config, &layout, &model.params, s))
        .collect();
    let mut sum = 0.0;
    for p in parts {
        sum += p?;
    }
    Ok(sum / seqs.len() as f64)
}

/// Trains the model in place. `records` is the training split; `val_records`
/// (possibly empty) feeds the validation trace.
pub fn train(
    model: &mut Model,
    opt: &mut AdamState,
    bank: &PhraseBank,
    records: &[InstructionRecord],
    val_records: &[InstructionRecord],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("empty training corpus".into()));
    }
    if cfg.batch_size == 0 || cfg.steps == 0 {
        return Err(Error::InvalidConfig("batch_size and steps must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout_p) {
        return Err(Error::InvalidConfig("dropout_p outside [0, 1)".into()));
    }
    let layout = model.layout();

    // Validation sequences are fixed up front: no dropout, no reference.
    let val_opts = SequenceOptions {
        dropout_p: 0.0,
        lambda_text: cfg.lambda_text,
        cot_enabled: cfg.cot_enabled,
        reference: None,
        context_length: model.config.context_length,
    };
    let val_seqs: Vec<TokenSequence> = val_records
        .iter()
        .map(|r| build_sequence(&model.vocab, r, &val_opts, 0))
        .collect::<Result<_>>()?;

    let warmup_steps = ((cfg.steps as f64 * cfg.warmup_frac).ceil() as usize).max(1);
    let batch = cfg.batch_size.min(records.len());

    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut epoch: u64 = 0;
    let mut cursor = records.len(); // force a shuffle at step 0
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut recent: std::collections::VecDeque<f64> = std::collections::VecDeque::new();
    let mut steps_run = 0;
    let mut final_val = None;

    for step in 0..cfg.steps {
        if cursor + batch > order.len() {
            let mut rng = Rng::new(derive_seed(cfg.seed, &[tag("epoch-shuffle"), epoch]));
            rng.shuffle(&mut order);
            cursor = 0;
            epoch += 1;
        }
        let batch_idx = &order[cursor..cursor + batch];
        cursor += batch;

        let seqs: Vec<TokenSequence> = batch_idx
            .iter()
            .map(|&i| build_training_sequence(model, bank, &records[i], cfg, epoch, i))
            .collect::<Result<_>>()?;

        // Parallel forward/backward, deterministic merge in batch order.
        let parts: Vec<Result<(Params<f32>, f64, f64)>> = seqs
            .par_iter()
            .map(|seq| {
                let mut grads: Params<f32> = Params::zeros(&layout);
                let (l, w) =
                    loss_and_grad(&model.config, &layout, &model.params, seq, &mut grads)?;
                Ok((grads, l, w))
            })
            .collect();

        let mut grads: Params<f32> = Params::zeros(&layout);
        let mut loss_sum = 0.0;
        let mut w_sum = 0.0;
        for part in parts {
            let (g, l, w) = part?;
            grads.add_assign(&g);
            loss_sum += l;
            w_sum += w;
        }
        let batch_loss = loss_sum / w_sum;
        if !batch_loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        grads.scale((1.0 / w_sum) as f32);

        // Adam with linear warmup then a fixed rate.
        model.step += 1;
        let t = model.step as i32;
        let lr_t = cfg.lr * ((step + 1) as f64 / warmup_steps as f64).min(1.0);
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (ai, g) in grads.arrays.iter().enumerate() {
            let w = &mut model.params.arrays[ai];
            let m = &mut opt.m.arrays[ai];
            let v = &mut opt.v.arrays[ai];
            for i in 0..g.len() {
                let gi = g[i] as f64;
                let mi = BETA1 * m[i] as f64 + (1.0 - BETA1) * gi;
                let vi = BETA2 * v[i] as f64 + (1.0 - BETA2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                w[i] -= (lr_t * mhat / (vhat.sqrt() + ADAM_EPS)) as f32;
            }
        }

        steps_run = step + 1;
        recent.push_back(batch_loss);
        if recent.len() > 10 {
            recent.pop_front();
        }

        let want_val =
            cfg.val_every > 0 && !val_seqs.is_empty() && (step + 1) % cfg.val_every == 0;
        let val_loss = if want_val {
            let v = validation_loss(model, &val_seqs)?;
            final_val = Some(v);
            Some(v)
        } else {
            None
        };
        trace.push(TracePoint {
            step: steps_run,
            train_loss: batch_loss,
            val_loss,
        });

        if let Some(target) = cfg.target_loss {
            let smoothed = recent.iter().sum::<f64>() / recent.len() as f64;
            if smoothed < target {
                break;
            }
        }
    }

    if !val_seqs.is_empty() {
        let v = validation_loss(model, &val_seqs)?;
        final_val = Some(v);
        if let Some(last) = trace.last_mut() {
            if last.val_loss.is_none() {
                last.val_loss = Some(v);
            }
        }
    }

    let final_train = trace.last().map(|p| p.train_loss).unwrap_or(f64::NAN);
    Ok(TrainReport {
        trace,
        steps_run,
        final_train_loss: final_train,
        final_val_loss: final_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_rules, generate_corpus, CorpusSpec, Split};
    use crate::model::ModelConfig;

    fn tiny_model(seed: u64) -> Model {
        Model::new(ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            context_length: 512,
            vocab_size: 371,
            seed,
        })
        .unwrap()
    }

    fn small_corpus(n: usize, seed: u64) -> Vec<InstructionRecord> {
        let bank = PhraseBank::default_bank();
        let rules = default_rules();
        generate_corpus(
            &CorpusSpec {
                n_train: n,
                n_held_out: 2,
                n_ood: 2,
            },
            seed,
            &bank,
            &rules,
        )
        .unwrap()
        .into_iter()
        .filter(|r| r.split == Split::Train)
        .collect()
    }

    #[test]
    fn zero_lr_leaves_parameters_bit_identical() {
        let mut model = tiny_model(1);
        let before = model.params.clone();
        let mut opt = AdamState::new(&model.layout());
        let bank = PhraseBank::default_bank();
        let recs = small_corpus(4, 9);
        let cfg = TrainConfig {
            lr: 0.0,
            batch_size: 2,
            steps: 3,
            val_every: 0,
            ..TrainConfig::default()
        };
        train(&mut model, &mut opt, &bank, &recs, &[], &cfg).unwrap();
        assert_eq!(model.params, before);
    }

    #[test]
    fn same_seed_gives_identical_traces_and_params() {
        let bank = PhraseBank::default_bank();
        let recs = small_corpus(6, 4);
        let run = || {
            let mut model = tiny_model(2);
            let mut opt = AdamState::new(&model.layout());
            let cfg = TrainConfig {
                lr: 3e-3,
                batch_size: 4,
                steps: 8,
                val_every: 0,
                ..TrainConfig::default()
            };
            let report = train(&mut model, &mut opt, &bank, &recs, &[], &cfg).unwrap();
            (report.trace, model.params)
        };
        let (t1, p1) = run();
        let (t2, p2) = run();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn loss_decreases_on_a_tiny_memorization_run() {
        let bank = PhraseBank::default_bank();
        let recs = small_corpus(4, 8);
        let mut model = tiny_model(3);
        let mut opt = AdamState::new(&model.layout());
        let cfg = TrainConfig {
            lr: 3e-3,
            batch_size: 4,
            steps: 60,
            dropout_p: 0.0,
            reference_p: 0.0,
            val_every: 0,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &mut opt, &bank, &recs, &[], &cfg).unwrap();
        let first = report.trace.first().unwrap().train_loss;
        let last = report.trace.last().unwrap().train_loss;
        assert!(
            last < first * 0.5,
            "no learning: first {first}, last {last}"
        );
    }

    #[test]
    fn validation_trace_appears_at_the_requested_cadence() {
        let bank = PhraseBank::default_bank();
        let recs = small_corpus(6, 5);
        let val = small_corpus(3, 77);
        let mut model = tiny_model(4);
        let mut opt = AdamState::new(&model.layout());
        let cfg = TrainConfig {
            lr: 1e-3,
            batch_size: 3,
            steps: 9,
            val_every: 3,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &mut opt, &bank, &recs, &val, &cfg).unwrap();
        let with_val: Vec<usize> = report
            .trace
            .iter()
            .filter(|p| p.val_loss.is_some())
            .map(|p| p.step)
            .collect();
        assert_eq!(with_val, vec![3, 6, 9]);
        assert!(report.final_val_loss.unwrap().is_finite());
    }
}
