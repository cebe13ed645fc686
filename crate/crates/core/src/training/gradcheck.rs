use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::backprop::{backward, compute_loss, LossSpec};
use super::TrainError;
use crate::encoder::ModelParameters;
use crate::tokenizer::TokenSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub min_coordinates: usize,
    pub seed: u64,
    /// Restrict the check to tensors whose name starts with this prefix.
    pub only: Option<String>,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero compare on an absolute scale.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            min_coordinates: 200,
            seed: 0,
            only: None,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates: usize,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Max relative error between [`backward`] and central differences.
pub fn grad_check(
    params: &ModelParameters<f64>,
    batch: &[TokenSequence],
    spec: &LossSpec<'_>,
    eps: f64,
) -> Result<f64, TrainError> {
    let opts = GradCheckOptions {
        eps,
        ..Default::default()
    };
    Ok(grad_check_with(params, batch, spec, &opts)?.max_relative_error)
}

pub fn grad_check_with(
    params: &ModelParameters<f64>,
    batch: &[TokenSequence],
    spec: &LossSpec<'_>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, TrainError> {
    if !(opts.eps > 0.0) {
        return Err(TrainError::InvalidStep(opts.eps));
    }
    let (_, grads) = backward(params, batch, spec, None)?;
    let coords = pick_coordinates(params, opts);

    let results: Vec<(usize, usize, f64, f64)> = coords
        .par_iter()
        .map(|&(ti, idx)| {
            let at = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut()[ti].data_mut()[idx] += delta;
                compute_loss(&p, batch, spec)
            };
            let numeric = (at(opts.eps)? - at(-opts.eps)?) / (2.0 * opts.eps);
            let analytic = grads.tensors()[ti].data()[idx];
            Ok((ti, idx, analytic, numeric))
        })
        .collect::<Result<_, TrainError>>()?;

    let names = params.named_tensors();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        coordinates: results.len(),
        worst_tensor: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (ti, idx, a, n) in results {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(opts.abs_floor);
        if rel > report.max_relative_error || report.worst_tensor.is_empty() {
            report.max_relative_error = rel;
            report.worst_tensor = names[ti].0.clone();
            report.worst_index = idx;
            report.analytic = a;
            report.numeric = n;
        }
    }
    Ok(report)
}

/// Samples coordinates so that every selected tensor gets a share
/// proportional to its size (at least a few each), totalling at least
/// `min_coordinates` where the tensors allow it.
fn pick_coordinates(params: &ModelParameters<f64>, opts: &GradCheckOptions) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let selected: Vec<(usize, usize)> = params
        .named_tensors()
        .iter()
        .enumerate()
        .filter(|(_, (name, _))| opts.only.as_ref().is_none_or(|p| name.starts_with(p.as_str())))
        .map(|(i, (_, t))| (i, t.len()))
        .collect();
    let total: usize = selected.iter().map(|&(_, n)| n).sum();
    let mut quotas: Vec<usize> = selected
        .iter()
        .map(|&(_, n)| (opts.min_coordinates * n).div_ceil(total.max(1)).max(4).min(n))
        .collect();
    let mut have: usize = quotas.iter().sum();
    while have < opts.min_coordinates.min(total) {
        for (q, &(_, n)) in quotas.iter_mut().zip(&selected) {
            if *q < n && have < opts.min_coordinates {
                *q += 1;
                have += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(have);
    for (&(ti, n), &q) in selected.iter().zip(&quotas) {
        let mut idx = sample(&mut rng, n, q).into_vec();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|i| (ti, i)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TaskId;
    use crate::encoder::{init_params, EncoderConfig};

    fn config() -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ffn: 16,
            vocab_size: 270,
            max_len: 10,
            tasks: vec![TaskId::A],
            dropout: 0.1,
            tie_mlm: true,
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let p: ModelParameters<f64> = init_params(&config(), 0).unwrap();
        let batch = vec![TokenSequence::from_subwords(&[7, 8], 10)];
        let spec = LossSpec::Hard { task: TaskId::A, labels: &[1] };
        assert!(matches!(grad_check(&p, &batch, &spec, 0.0), Err(TrainError::InvalidStep(_))));
        assert!(grad_check(&p, &batch, &spec, -1e-5).is_err());
    }

    #[test]
    fn coordinates_span_every_tensor() {
        let p: ModelParameters<f64> = init_params(&config(), 0).unwrap();
        let coords = pick_coordinates(&p, &GradCheckOptions::default());
        assert!(coords.len() >= 200);
        let tensors = p.tensors().len();
        for ti in 0..tensors {
            assert!(coords.iter().any(|&(t, _)| t == ti), "tensor {ti} unsampled");
        }
    }

    #[test]
    fn small_model_soft_loss() {
        let p: ModelParameters<f64> = init_params(&config(), 4).unwrap();
        let batch = vec![
            TokenSequence::from_subwords(&[7, 8, 9], 10),
            TokenSequence::from_subwords(&[200, 100], 10),
        ];
        let q = vec![vec![0.3, 0.7], vec![0.9, 0.1]];
        let r = grad_check_with(
            &p,
            &batch,
            &LossSpec::Soft { task: TaskId::A, targets: &q },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }
}
