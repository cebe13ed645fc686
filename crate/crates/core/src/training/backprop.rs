use std::collections::BTreeMap;

use rayon::prelude::*;

use super::loss::{soft_ce_with_logit_grad, PROB_FLOOR};
use super::TrainError;
use crate::corpus::TaskId;
use crate::encoder::{
    backward_sequence, example_rng, forward_sequence, head_logits, mlm_position_backward, mlm_position_logits,
    ModelParameters,
};
use crate::tensor::{matmul_backward, softmax, Real};
use crate::tokenizer::TokenSequence;

/// What to differentiate.
#[derive(Debug, Clone, Copy)]
pub enum LossSpec<'a> {
    /// Cross-entropy over the full vocabulary at each target position, averaged
    /// over all targets in the batch.
    Mlm(&'a [BTreeMap<usize, u32>]),
    /// One-hot cross-entropy, averaged over examples.
    Hard { task: TaskId, labels: &'a [usize] },
    /// Soft-target cross-entropy, averaged over examples.
    Soft { task: TaskId, targets: &'a [Vec<f64>] },
}

impl LossSpec<'_> {
    fn len(&self) -> usize {
        match self {
            LossSpec::Mlm(t) => t.len(),
            LossSpec::Hard { labels, .. } => labels.len(),
            LossSpec::Soft { targets, .. } => targets.len(),
        }
    }
}

/// Per-example target in a form the kernels consume.
enum Target<'a> {
    Mlm(&'a BTreeMap<usize, u32>),
    Class { task: TaskId, q: Vec<f64> },
}

fn targets<'a>(spec: &LossSpec<'a>) -> Result<Vec<Target<'a>>, TrainError> {
    match *spec {
        LossSpec::Mlm(t) => Ok(t.iter().map(Target::Mlm).collect()),
        LossSpec::Hard { task, labels } => labels
            .iter()
            .map(|&y| {
                let classes = task.num_classes();
                if y >= classes {
                    return Err(TrainError::LabelOutOfRange { label: y, classes });
                }
                let mut q = vec![0.0; classes];
                q[y] = 1.0;
                Ok(Target::Class { task, q })
            })
            .collect(),
        LossSpec::Soft { task, targets } => targets
            .iter()
            .map(|q| {
                if q.len() != task.num_classes() {
                    return Err(TrainError::DimensionMismatch(q.len(), task.num_classes()));
                }
                Ok(Target::Class { task, q: q.clone() })
            })
            .collect(),
    }
}

/// Sum of per-item losses (nats) and the number of items it covers.
struct ExampleResult<T> {
    loss: f64,
    items: usize,
    grads: Option<ModelParameters<T>>,
}

fn effective_len(seq: &TokenSequence) -> usize {
    seq.attention_mask.iter().rposition(|&m| m != 0).map_or(1, |p| p + 1)
}

fn run_example<T: Real>(
    params: &ModelParameters<T>,
    seq: &TokenSequence,
    target: &Target<'_>,
    dropout_seed: Option<(u64, usize)>,
    with_grads: bool,
) -> Result<ExampleResult<T>, TrainError> {
    let cfg = params.config();
    let d = cfg.hidden;
    let len = match target {
        Target::Mlm(t) => effective_len(seq).max(t.keys().next_back().map_or(0, |p| p + 1)),
        Target::Class { .. } => effective_len(seq),
    };
    let mut rng = dropout_seed.map(|(seed, i)| example_rng(seed, i));
    let cache = forward_sequence(params, seq, len, rng.as_mut())?;
    let mut grads = with_grads.then(|| ModelParameters::zeros(cfg));
    let mut d_hidden = vec![T::zero(); cache.n * d];
    let mut loss = 0.0;
    let items;

    match target {
        Target::Class { task, q } => {
            let cls = &cache.hidden[..d];
            let logits = head_logits(params, *task, cls)?;
            let z: Vec<f64> = logits.iter().map(|x| x.as_f64()).collect();
            let p = softmax(&z);
            let (l, dz) = soft_ce_with_logit_grad(q, &p);
            loss += l;
            items = 1;
            if let Some(g) = grads.as_mut() {
                let dz: Vec<T> = dz.into_iter().map(T::of).collect();
                let head = params.head(*task)?;
                let ghead = g.heads.get_mut(task).expect("gradient head");
                let c = task.num_classes();
                let dcls = matmul_backward(
                    cls,
                    head.weight.data(),
                    &dz,
                    ghead.weight.data_mut(),
                    Some(ghead.bias.data_mut()),
                    1,
                    d,
                    c,
                );
                d_hidden[..d].copy_from_slice(&dcls);
            }
        }
        Target::Mlm(map) => {
            items = map.len();
            for (&pos, &orig) in map.iter() {
                let h = &cache.hidden[pos * d..(pos + 1) * d];
                let logits = mlm_position_logits(params, h);
                let z: Vec<f64> = logits.iter().map(|x| x.as_f64()).collect();
                let p = softmax(&z);
                let target = orig as usize;
                loss -= p[target].max(PROB_FLOOR).ln();
                if let Some(g) = grads.as_mut() {
                    let clamped = p[target] <= PROB_FLOOR;
                    let dz: Vec<T> = p
                        .iter()
                        .enumerate()
                        .map(|(k, &pk)| {
                            if clamped {
                                T::zero()
                            } else if k == target {
                                T::of(pk - 1.0)
                            } else {
                                T::of(pk)
                            }
                        })
                        .collect();
                    let dh = mlm_position_backward(params, h, &dz, g);
                    for (a, b) in d_hidden[pos * d..(pos + 1) * d].iter_mut().zip(dh) {
                        *a += b;
                    }
                }
            }
        }
    }
    if let Some(g) = grads.as_mut() {
        backward_sequence(params, &cache, d_hidden, g);
    }
    Ok(ExampleResult { loss, items, grads })
}

fn run_batch<T: Real>(
    params: &ModelParameters<T>,
    batch: &[TokenSequence],
    spec: &LossSpec<'_>,
    dropout_seed: Option<u64>,
    with_grads: bool,
) -> Result<(f64, Option<ModelParameters<T>>), TrainError> {
    if batch.is_empty() {
        return Err(crate::encoder::EncoderError::EmptyBatch.into());
    }
    if spec.len() != batch.len() {
        return Err(TrainError::TargetCount {
            batch: batch.len(),
            targets: spec.len(),
        });
    }
    let targets = targets(spec)?;
    let results = batch
        .par_iter()
        .zip(targets.par_iter())
        .enumerate()
        .map(|(i, (seq, t))| run_example(params, seq, t, dropout_seed.map(|s| (s, i)), with_grads))
        .collect::<Result<Vec<_>, _>>()?;

    // Fixed-order reduction keeps results independent of thread scheduling.
    let items: usize = results.iter().map(|r| r.items).sum();
    let mut loss = 0.0;
    let mut total: Option<ModelParameters<T>> = None;
    for r in results {
        loss += r.loss;
        if let Some(g) = r.grads {
            match total.as_mut() {
                Some(t) => t.add_assign(&g),
                None => total = Some(g),
            }
        }
    }
    if items == 0 {
        return Ok((0.0, total));
    }
    let scale = 1.0 / items as f64;
    if let Some(t) = total.as_mut() {
        t.scale(T::of(scale));
    }
    Ok((loss * scale, total))
}

/// Mean loss and its gradient with respect to every parameter tensor.
///
/// `dropout_seed` enables dropout (when the config's rate is positive); the
/// mask of example `i` is drawn from stream `i` of that seed.
pub fn backward<T: Real>(
    params: &ModelParameters<T>,
    batch: &[TokenSequence],
    spec: &LossSpec<'_>,
    dropout_seed: Option<u64>,
) -> Result<(f64, ModelParameters<T>), TrainError> {
    let (loss, grads) = run_batch(params, batch, spec, dropout_seed, true)?;
    let grads = grads.expect("gradients requested");
    if !loss.is_finite() || !grads.is_finite() {
        let tensor = params
            .first_non_finite()
            .or_else(|| grads.first_non_finite().map(|n| format!("gradient of {n}")))
            .unwrap_or_else(|| "loss".to_string());
        return Err(TrainError::NonFiniteLoss { tensor });
    }
    Ok((loss, grads))
}

/// Mean loss without gradients (eval mode).
pub fn compute_loss<T: Real>(
    params: &ModelParameters<T>,
    batch: &[TokenSequence],
    spec: &LossSpec<'_>,
) -> Result<f64, TrainError> {
    Ok(run_batch(params, batch, spec, None, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderConfig};

    fn config() -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ffn: 16,
            vocab_size: 280,
            max_len: 12,
            tasks: vec![TaskId::A, TaskId::C],
            dropout: 0.0,
            tie_mlm: true,
        }
    }

    fn batch() -> Vec<TokenSequence> {
        vec![
            TokenSequence::from_subwords(&[10, 20, 30], 12),
            TokenSequence::from_subwords(&[100, 200, 270, 271, 5], 12),
        ]
    }

    #[test]
    fn gradients_finite_and_shaped() {
        let p: ModelParameters<f32> = init_params(&config(), 0).unwrap();
        let (loss, g) = backward(&p, &batch(), &LossSpec::Hard { task: TaskId::A, labels: &[0, 1] }, None).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert!(g.is_finite());
        for (a, b) in p.tensors().iter().zip(g.tensors()) {
            assert_eq!(a.shape(), b.shape());
        }
    }

    #[test]
    fn unused_head_gets_zero_gradient() {
        let p: ModelParameters<f64> = init_params(&config(), 1).unwrap();
        let (_, g) = backward(&p, &batch(), &LossSpec::Hard { task: TaskId::A, labels: &[0, 1] }, None).unwrap();
        assert!(g.heads[&TaskId::C].weight.data().iter().all(|&x| x == 0.0));
        assert!(g.heads[&TaskId::C].bias.data().iter().all(|&x| x == 0.0));
        assert!(g.heads[&TaskId::A].weight.data().iter().any(|&x| x != 0.0));
        assert!(g.mlm_bias.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hard_equals_one_hot_soft_bitwise() {
        let p: ModelParameters<f32> = init_params(&config(), 2).unwrap();
        let hard = backward(&p, &batch(), &LossSpec::Hard { task: TaskId::C, labels: &[2, 0] }, None).unwrap();
        let q = vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]];
        let soft = backward(&p, &batch(), &LossSpec::Soft { task: TaskId::C, targets: &q }, None).unwrap();
        assert_eq!(hard.0.to_bits(), soft.0.to_bits());
        assert_eq!(hard.1, soft.1);
    }

    #[test]
    fn deterministic_and_matches_compute_loss() {
        let p: ModelParameters<f32> = init_params(&config(), 3).unwrap();
        let t = vec![BTreeMap::from([(1, 10u32), (2, 20)]), BTreeMap::from([(3, 270u32)])];
        let spec = LossSpec::Mlm(&t);
        let a = backward(&p, &batch(), &spec, None).unwrap();
        let b = backward(&p, &batch(), &spec, None).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, compute_loss(&p, &batch(), &spec).unwrap());
        assert!((a.0 - (280f64).ln()).abs() < 0.2);
    }

    #[test]
    fn target_errors() {
        let p: ModelParameters<f32> = init_params(&config(), 0).unwrap();
        assert!(matches!(
            backward(&p, &batch(), &LossSpec::Hard { task: TaskId::A, labels: &[0] }, None),
            Err(TrainError::TargetCount { .. })
        ));
        assert!(matches!(
            backward(&p, &batch(), &LossSpec::Hard { task: TaskId::A, labels: &[0, 5] }, None),
            Err(TrainError::LabelOutOfRange { .. })
        ));
        assert!(backward(&p, &batch(), &LossSpec::Hard { task: TaskId::B, labels: &[0, 1] }, None).is_err());
    }

    #[test]
    fn non_finite_parameters_are_named() {
        let mut p: ModelParameters<f32> = init_params(&config(), 0).unwrap();
        p.layers[0].w1.data_mut()[0] = f32::NAN;
        match backward(&p, &batch(), &LossSpec::Hard { task: TaskId::A, labels: &[0, 1] }, None) {
            Err(TrainError::NonFiniteLoss { tensor }) => assert_eq!(tensor, "layers.0.ffn.w1"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
