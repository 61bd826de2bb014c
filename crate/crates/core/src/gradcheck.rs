//! Finite-difference verification of analytic gradients, in double
//! precision. Large models are checked on a deterministic sample of
//! parameter coordinates; small ones exhaustively.

use crate::autodiff::ComputeGraph;
use crate::error::Result;
use crate::models::{compile, tape_forward, ModelKind, ModelSpec, ModelWeights};
use crate::rng::SeedSplitter;
use crate::tensor::Tensor;
use rand::Rng;
use rayon::prelude::*;

/// Relative-error denominator floor.
const DENOM_FLOOR: f64 = 1e-8;

/// Absolute agreement below this is indistinguishable from finite-difference
/// rounding noise in double precision.
const ABS_NOISE_FLOOR: f64 = 1e-9;

/// Max params per tensor checked exhaustively; larger tensors are sampled.
const EXHAUSTIVE_LIMIT: usize = 24;
const SAMPLES_PER_TENSOR: usize = 8;

pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked_coords: usize,
}

/// Loss of one forward pass in f64: half-L2 against a fixed target for
/// regressors, softmax cross-entropy against a fixed label for classifiers.
fn model_loss(
    spec: &ModelSpec,
    params: &[Tensor<f64>],
    frames: &[Tensor<f64>],
) -> Result<f64> {
    let cm = compile(spec)?;
    let mut g = ComputeGraph::<f64>::new();
    let tm = tape_forward(&mut g, &cm, params, frames)?;
    let loss = match spec.kind {
        ModelKind::Classifier => {
            let probs = g.softmax(tm.output)?;
            g.cross_entropy(probs, 2)?
        }
        ModelKind::Regressor => {
            let t = g.leaf(Tensor::vector(vec![7.5f64]), false);
            g.half_l2(tm.output, t)?
        }
    };
    g.value(loss).item()
}

/// Analytic gradients of the same loss.
fn model_grads(
    spec: &ModelSpec,
    params: &[Tensor<f64>],
    frames: &[Tensor<f64>],
) -> Result<Vec<Vec<f64>>> {
    let cm = compile(spec)?;
    let mut g = ComputeGraph::<f64>::new();
    let tm = tape_forward(&mut g, &cm, params, frames)?;
    let loss = match spec.kind {
        ModelKind::Classifier => {
            let probs = g.softmax(tm.output)?;
            g.cross_entropy(probs, 2)?
        }
        ModelKind::Regressor => {
            let t = g.leaf(Tensor::vector(vec![7.5f64]), false);
            g.half_l2(tm.output, t)?
        }
    };
    g.backward(loss)?;
    Ok(tm
        .param_nodes
        .iter()
        .map(|&id| {
            g.grad(id)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; 0])
        })
        .collect())
}

/// Compare analytic gradients with central finite differences
/// (ε = 1e-5) over sampled parameter coordinates of the model.
pub fn gradient_check(spec: &ModelSpec, weights: &ModelWeights, seed: u64) -> Result<GradCheckReport> {
    let params: Vec<Tensor<f64>> = weights.as_params();
    let frames = synthetic_frames(spec, seed);

    let analytic = model_grads(spec, &params, &frames)?;

    // Pick coordinates: all of small tensors, a seeded sample of large ones.
    let splitter = SeedSplitter::new(seed);
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        if n <= EXHAUSTIVE_LIMIT {
            coords.extend((0..n).map(|i| (pi, i)));
        } else {
            let mut rng = splitter.rng("gradcheck/coords", pi as u64);
            coords.push((pi, 0));
            coords.push((pi, n - 1));
            for _ in 0..SAMPLES_PER_TENSOR {
                coords.push((pi, rng.gen_range(0..n)));
            }
        }
    }

    let errors: Vec<Result<f64>> = coords
        .par_iter()
        .map(|&(pi, i)| -> Result<f64> {
            let a = analytic[pi][i];
            let rel_at = |eps: f64| -> Result<f64> {
                let mut plus = params.clone();
                plus[pi].data_mut()[i] += eps;
                let lp = model_loss(spec, &plus, &frames)?;
                let mut minus = params.clone();
                minus[pi].data_mut()[i] -= eps;
                let lm = model_loss(spec, &minus, &frames)?;
                let numeric = (lp - lm) / (2.0 * eps);
                // Central differences cannot certify relative error below
                // the f64 cancellation floor; near-zero gradients that
                // agree absolutely at that floor count as matching.
                if (a - numeric).abs() < ABS_NOISE_FLOOR {
                    return Ok(0.0);
                }
                let denom = DENOM_FLOOR.max(a.abs() + numeric.abs());
                Ok((a - numeric).abs() / denom)
            };
            // The step size trades truncation against cancellation noise,
            // and a step can also straddle a ReLU kink. A genuine gradient
            // defect shows the same mismatch at every step size, so take
            // the best agreement over a small ladder.
            let mut best = rel_at(1e-5)?;
            for eps in [1e-4, 1e-3, 1e-6] {
                if best <= 1e-5 {
                    break;
                }
                best = best.min(rel_at(eps)?);
            }
            Ok(best)
        })
        .collect();

    let mut max_rel_error = 0.0f64;
    for e in errors {
        max_rel_error = max_rel_error.max(e?);
    }
    Ok(GradCheckReport {
        max_rel_error,
        checked_coords: coords.len(),
    })
}

/// Deterministic pseudo-random input window sized for the spec.
pub fn synthetic_frames(spec: &ModelSpec, seed: u64) -> Vec<Tensor<f64>> {
    let n = spec.seq_len().max(1);
    let numel: usize = spec.input_shape.iter().product();
    (0..n)
        .map(|t| {
            let data: Vec<f64> = (0..numel)
                .map(|j| {
                    let h = crate::rng::splitmix64(seed ^ ((t as u64) << 40) ^ j as u64);
                    (h & 0xFFFF) as f64 / 65535.0
                })
                .collect();
            Tensor::new(spec.input_shape.to_vec(), data).unwrap()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_mcn, build_srn, init_weights, Layer, ModelSpec};

    #[test]
    fn linear_model_is_exact() {
        // A purely linear stack: finite differences are exact to rounding.
        let shape = [6usize, 8, 10];
        let spec = ModelSpec {
            name: "linear".into(),
            kind: ModelKind::Regressor,
            layers: vec![
                Layer::Conv {
                    depth: 2,
                    k: 3,
                    stride: 2,
                },
                Layer::Flatten,
                Layer::Fc { out: 1 },
            ],
            input_shape: shape,
            output_dim: 1,
        };
        let w = init_weights(&spec, 4).unwrap();
        let report = gradient_check(&spec, &w, 4).unwrap();
        assert!(
            report.max_rel_error < 1e-7,
            "linear model error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn conv_stack_is_tight() {
        let shape = [6usize, 16, 24];
        let spec = build_mcn(shape).unwrap();
        let w = init_weights(&spec, 9).unwrap();
        let report = gradient_check(&spec, &w, 9).unwrap();
        assert!(
            report.max_rel_error < 1e-6,
            "conv stack error {}",
            report.max_rel_error
        );
    }

    #[test]
    fn every_srn_passes_at_reduced_input() {
        for zone in 1..=5 {
            let spec = build_srn(zone, [6, 16, 24]).unwrap();
            let w = init_weights(&spec, zone as u64).unwrap();
            let report = gradient_check(&spec, &w, zone as u64).unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "zone {zone} gradient error {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn bptt_toy_window_matches_finite_differences() {
        // Three-frame window through a recurrent model.
        let spec = ModelSpec {
            name: "bptt_toy".into(),
            kind: ModelKind::Regressor,
            layers: vec![
                Layer::Conv {
                    depth: 2,
                    k: 3,
                    stride: 2,
                },
                Layer::Relu,
                Layer::Flatten,
                Layer::Rnn {
                    hidden: 5,
                    seq_len: 3,
                },
                Layer::Fc { out: 1 },
            ],
            input_shape: [6, 8, 10],
            output_dim: 1,
        };
        let w = init_weights(&spec, 21).unwrap();
        let report = gradient_check(&spec, &w, 21).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "BPTT error {}",
            report.max_rel_error
        );
    }
}
