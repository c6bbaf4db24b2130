//! Finite-difference verification of the analytic gradients.
//!
//! The check instantiates the same generic kernels at f64 so that central
//! differences are limited by truncation error rather than float noise, then
//! compares against the analytic backward pass coordinate by coordinate.

use super::net::{forward_cached, loss_and_grad, weighted_ce, ModelConfig, ParamLayout, Params};
use crate::rng::{derive_seed, tag, Rng};
use crate::sequencer::TokenSequence;
use crate::Result;

/// Default step for central differences.
pub const DEFAULT_H: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over sampled coordinates of |ga - gn| / max(|ga|, |gn|, 1e-8)
    pub max_rel_error: f64,
    /// Coordinates sampled (array index, element index).
    pub samples: usize,
    /// Worst coordinate for diagnostics.
    pub worst: (String, usize),
}

fn normalized_loss_f64(
    cfg: &ModelConfig,
    layout: &ParamLayout,
    params: &Params<f64>,
    seq: &TokenSequence,
) -> Result<f64> {
    let cache = forward_cached(cfg, layout, params, &seq.ids)?;
    let (loss_sum, w_sum) = weighted_ce(cfg, &cache, &seq.ids, &seq.loss_weight);
    Ok(loss_sum / w_sum)
}

/// Central-difference gradient check on `samples` randomly chosen parameter
/// coordinates of a freshly initialized model.
///
/// The numeric gradient per coordinate is the Richardson extrapolation of
/// central differences at `h` and `h/2`, cancelling the O(h^2) truncation
/// term. Plain central differences at h = 1e-3 carry up to ~1e-3 relative
/// truncation error on low-gradient/high-curvature coordinates (verified by
/// h-refinement: the error falls as h^2), which would drown the signal the
/// check is after; the fourth-order stencil leaves implementation error as
/// the only visible term.
pub fn grad_check(
    cfg: &ModelConfig,
    seq: &TokenSequence,
    samples: usize,
    h: f64,
    sample_seed: u64,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let layout = ParamLayout::new(cfg);
    let mut params: Params<f64> = Params::init(cfg, &layout);

    let mut grads: Params<f64> = Params::zeros(&layout);
    let (loss_sum, w_sum) =
        loss_and_grad(cfg, &layout, &params, seq, &mut grads)?;
    debug_assert!(loss_sum.is_finite());
    let inv_w = 1.0 / w_sum;
    grads.scale(inv_w);

    let total: usize = layout.total_len();
    let mut rng = Rng::new(derive_seed(sample_seed, &[tag("grad-check")]));

    let mut max_rel = 0.0f64;
    let mut worst = (String::new(), 0usize);
    for _ in 0..samples {
        let mut flat = rng.below(total as u64) as usize;
        let mut array_idx = 0;
        for (i, (_, r, c)) in layout.entries.iter().enumerate() {
            let len = r * c;
            if flat < len {
                array_idx = i;
                break;
            }
            flat -= len;
        }

        let analytic = grads.arrays[array_idx][flat];
        let orig = params.arrays[array_idx][flat];

        let mut central = |step: f64| -> Result<f64> {
            params.arrays[array_idx][flat] = orig + step;
            let up = normalized_loss_f64(cfg, &layout, &params, seq)?;
            params.arrays[array_idx][flat] = orig - step;
            let down = normalized_loss_f64(cfg, &layout, &params, seq)?;
            params.arrays[array_idx][flat] = orig;
            Ok((up - down) / (2.0 * step))
        };
        let coarse = central(h)?;
        let fine = central(h / 2.0)?;
        let numeric = (4.0 * fine - coarse) / 3.0;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = (layout.entries[array_idx].0.clone(), flat);
        }
    }

    Ok(GradCheckReport {
        max_rel_error: max_rel,
        samples,
        worst,
    })
}

/// Numeric gradient of one coordinate at a given step size; exposed so tests
/// can probe truncation-error behavior across h.
pub fn numeric_gradient_at(
    cfg: &ModelConfig,
    seq: &TokenSequence,
    array_idx: usize,
    elem_idx: usize,
    h: f64,
) -> Result<f64> {
    let layout = ParamLayout::new(cfg);
    let mut params: Params<f64> = Params::init(cfg, &layout);
    let orig = params.arrays[array_idx][elem_idx];
    params.arrays[array_idx][elem_idx] = orig + h;
    let up = normalized_loss_f64(cfg, &layout, &params, seq)?;
    params.arrays[array_idx][elem_idx] = orig - h;
    let down = normalized_loss_f64(cfg, &layout, &params, seq)?;
    Ok((up - down) / (2.0 * h))
}

/// The tiny configuration used by default for gradient checking.
pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        context_length: 64,
        vocab_size: 371,
        seed,
    }
}

/// A short synthetic supervised sequence for checking.
pub fn check_sequence(seed: u64, len: usize) -> TokenSequence {
    let mut rng = Rng::new(derive_seed(seed, &[tag("grad-check-seq")]));
    let ids: Vec<u32> = (0..len).map(|_| rng.below(371) as u32).collect();
    let mut loss_weight = vec![1.0f32; len];
    loss_weight[0] = 0.0;
    // A couple of zero-weight positions exercise the masked path.
    if len > 4 {
        loss_weight[2] = 0.0;
    }
    TokenSequence {
        ids,
        loss_weight,
        segments: crate::sequencer::Segments {
            instruction: 0..0,
            cot: 0..0,
            speech: 0..0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cfg = tiny_config(11);
        let seq = check_sequence(1, 12);
        let report = grad_check(&cfg, &seq, 250, DEFAULT_H, 5).unwrap();
        assert!(
            report.max_rel_error < 1e-3,
            "max rel error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
    }

    #[test]
    fn multiple_sequences_and_depths_pass() {
        for seed in 0..3u64 {
            let cfg = ModelConfig {
                n_layers: 2,
                ..tiny_config(seed + 20)
            };
            let seq = check_sequence(seed + 7, 10);
            let report = grad_check(&cfg, &seq, 80, DEFAULT_H, seed).unwrap();
            assert!(
                report.max_rel_error < 1e-3,
                "seed {seed}: {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn doubling_h_moves_numeric_gradient_only_at_second_order() {
        let cfg = tiny_config(13);
        let seq = check_sequence(3, 12);
        let layout = ParamLayout::new(&cfg);
        let params: Params<f64> = Params::init(&cfg, &layout);
        let mut grads: Params<f64> = Params::zeros(&layout);
        let (_, w) = loss_and_grad(&cfg, &layout, &params, &seq, &mut grads).unwrap();
        grads.scale(1.0 / w);

        // Pick a coordinate with a healthy gradient: first used token's
        // embedding row.
        let array_idx = ParamLayout::TOK;
        let elem = seq.ids[1] as usize * cfg.d_model;
        let ga = grads.arrays[array_idx][elem];
        assert!(ga.abs() > 1e-6, "chose a dead coordinate");
        let g1 = numeric_gradient_at(&cfg, &seq, array_idx, elem, 1e-3).unwrap();
        let g2 = numeric_gradient_at(&cfg, &seq, array_idx, elem, 2e-3).unwrap();
        let e1 = (g1 - ga).abs();
        let e2 = (g2 - ga).abs();
        // Both step sizes agree with the analytic gradient to ~1%.
        assert!(e1 < 1e-2 * ga.abs(), "e1={e1} vs gradient {ga}");
        assert!(e2 < 1e-2 * ga.abs(), "e2={e2} vs gradient {ga}");
        // Doubling h scales the truncation error by ~4 (second order).
        let ratio = e2 / e1;
        assert!(
            (3.0..5.0).contains(&ratio),
            "truncation did not scale quadratically: e1={e1} e2={e2} ratio={ratio}"
        );
    }
}
