use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EncoderError, LayerParameters, ModelParameters, LAYER_NORM_EPS};
use crate::corpus::{SoftDistribution, TaskId};
use crate::tensor::{dot, matmul, matmul_backward, softmax, Real, Tensor};
use crate::tokenizer::TokenSequence;

/// Final hidden states and the `[CLS]` embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    /// batch × seq × hidden
    pub hidden: Tensor<T>,
    /// batch × hidden, position 0 of `hidden`
    pub cls_embedding: Tensor<T>,
}

pub(crate) struct LayerNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

pub(crate) struct LayerCache<T> {
    input: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// heads × n × n
    probs: Vec<T>,
    ctx: Vec<T>,
    attn_dropout: Option<Vec<T>>,
    ln1: LayerNormCache<T>,
    h1: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
    ffn_dropout: Option<Vec<T>>,
    ln2: LayerNormCache<T>,
}

/// Intermediates of one sequence's forward pass, kept for backpropagation.
pub(crate) struct SequenceCache<T> {
    pub ids: Vec<u32>,
    pub n: usize,
    emb_dropout: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    /// n × hidden
    pub hidden: Vec<T>,
}

fn dropout_mask<T: Real>(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

fn apply_mask<T: Real>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (a, &b) in x.iter_mut().zip(m) {
            *a *= b;
        }
    }
}

fn layer_norm<T: Real>(x: &[T], gain: &[T], bias: &[T], d: usize) -> (Vec<T>, LayerNormCache<T>) {
    let n = x.len() / d;
    let eps = T::of(LAYER_NORM_EPS);
    let inv_d = T::of(1.0 / d as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let is = T::one() / (var + eps).sqrt();
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[i * d + j] = h;
            y[i * d + j] = gain[j] * h + bias[j];
        }
        inv_std.push(is);
    }
    (y, LayerNormCache { xhat, inv_std })
}

fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &LayerNormCache<T>,
    gain: &[T],
    grad_gain: &mut [T],
    grad_bias: &mut [T],
    d: usize,
) -> Vec<T> {
    let n = dy.len() / d;
    let inv_d = T::of(1.0 / d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            grad_gain[j] += dyr[j] * xh[j];
            grad_bias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<T>() * inv_d;
        let mean_dxhat_xhat = dot(&dxhat, xh) * inv_d;
        let is = cache.inv_std[i];
        for j in 0..d {
            dx[i * d + j] = is * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
fn gelu<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

fn layer_forward<T: Real>(
    p: &LayerParameters<T>,
    x: Vec<T>,
    key_mask: &[bool],
    heads: usize,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> (Vec<T>, LayerCache<T>) {
    let d = p.bq.len();
    let f = p.b1.len();
    let n = x.len() / d;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let q = matmul(&x, p.wq.data(), Some(p.bq.data()), n, d, d);
    let k = matmul(&x, p.wk.data(), Some(p.bk.data()), n, d, d);
    let v = matmul(&x, p.wv.data(), Some(p.bv.data()), n, d, d);

    let mut probs = vec![T::zero(); heads * n * n];
    let mut ctx = vec![T::zero(); n * d];
    let mut scores = vec![T::zero(); n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + dh];
            let mut max = T::neg_infinity();
            for j in 0..n {
                if key_mask[j] {
                    let s = dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
                    scores[j] = s;
                    if s > max {
                        max = s;
                    }
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
            let mut sum = T::zero();
            for j in 0..n {
                if key_mask[j] {
                    let e = (scores[j] - max).exp();
                    row[j] = e;
                    sum += e;
                }
            }
            let inv = T::one() / sum;
            let out = &mut ctx[i * d + off..i * d + off + dh];
            for j in 0..n {
                if key_mask[j] {
                    row[j] *= inv;
                    let pj = row[j];
                    for (o, &vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                        *o += pj * vv;
                    }
                }
            }
        }
    }

    let mut a = matmul(&ctx, p.wo.data(), Some(p.bo.data()), n, d, d);
    let (attn_dropout, ffn_rng) = match dropout {
        Some((rate, rng)) => (Some(dropout_mask(n * d, rate, rng)), Some((rate, rng))),
        None => (None, None),
    };
    apply_mask(&mut a, &attn_dropout);
    let r1: Vec<T> = x.iter().zip(&a).map(|(&xi, &ai)| xi + ai).collect();
    let (h1, ln1) = layer_norm(&r1, p.ln1_gain.data(), p.ln1_bias.data(), d);

    let u = matmul(&h1, p.w1.data(), Some(p.b1.data()), n, d, f);
    let g: Vec<T> = u.iter().map(|&z| gelu(z)).collect();
    let mut o = matmul(&g, p.w2.data(), Some(p.b2.data()), n, f, d);
    let ffn_dropout = ffn_rng.map(|(rate, rng)| dropout_mask(n * d, rate, rng));
    apply_mask(&mut o, &ffn_dropout);
    let r2: Vec<T> = h1.iter().zip(&o).map(|(&hi, &oi)| hi + oi).collect();
    let (out, ln2) = layer_norm(&r2, p.ln2_gain.data(), p.ln2_bias.data(), d);

    let cache = LayerCache {
        input: x,
        q,
        k,
        v,
        probs,
        ctx,
        attn_dropout,
        ln1,
        h1,
        u,
        g,
        ffn_dropout,
        ln2,
    };
    (out, cache)
}

fn layer_backward<T: Real>(
    p: &LayerParameters<T>,
    grad: &mut LayerParameters<T>,
    c: &LayerCache<T>,
    dout: &[T],
    heads: usize,
) -> Vec<T> {
    let d = p.bq.len();
    let f = p.b1.len();
    let n = dout.len() / d;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let dr2 = layer_norm_backward(
        dout,
        &c.ln2,
        p.ln2_gain.data(),
        grad.ln2_gain.data_mut(),
        grad.ln2_bias.data_mut(),
        d,
    );
    let mut dh1 = dr2.clone();
    let mut d_o = dr2;
    apply_mask(&mut d_o, &c.ffn_dropout);
    let dg = matmul_backward(&c.g, p.w2.data(), &d_o, grad.w2.data_mut(), Some(grad.b2.data_mut()), n, f, d);
    let du: Vec<T> = dg.iter().zip(&c.u).map(|(&g, &u)| g * gelu_grad(u)).collect();
    let dh1_ffn = matmul_backward(&c.h1, p.w1.data(), &du, grad.w1.data_mut(), Some(grad.b1.data_mut()), n, d, f);
    for (a, b) in dh1.iter_mut().zip(&dh1_ffn) {
        *a += *b;
    }

    let dr1 = layer_norm_backward(
        &dh1,
        &c.ln1,
        p.ln1_gain.data(),
        grad.ln1_gain.data_mut(),
        grad.ln1_bias.data_mut(),
        d,
    );
    let mut dx = dr1.clone();
    let mut da = dr1;
    apply_mask(&mut da, &c.attn_dropout);
    let dctx = matmul_backward(&c.ctx, p.wo.data(), &da, grad.wo.data_mut(), Some(grad.bo.data_mut()), n, d, d);

    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut dp = vec![T::zero(); n];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..n {
            let row = &c.probs[(h * n + i) * n..(h * n + i + 1) * n];
            let dci = &dctx[i * d + off..i * d + off + dh];
            let mut weighted = T::zero();
            for j in 0..n {
                if row[j] == T::zero() {
                    dp[j] = T::zero();
                    continue;
                }
                dp[j] = dot(dci, &c.v[j * d + off..j * d + off + dh]);
                weighted += row[j] * dp[j];
                for (g, &dcv) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                    *g += row[j] * dcv;
                }
            }
            for j in 0..n {
                if row[j] == T::zero() {
                    continue;
                }
                let ds = row[j] * (dp[j] - weighted) * scale;
                for e in 0..dh {
                    dq[i * d + off + e] += ds * c.k[j * d + off + e];
                    dk[j * d + off + e] += ds * c.q[i * d + off + e];
                }
            }
        }
    }
    for (w, gw, gb, dy) in [
        (&p.wq, &mut grad.wq, &mut grad.bq, &dq),
        (&p.wk, &mut grad.wk, &mut grad.bk, &dk),
        (&p.wv, &mut grad.wv, &mut grad.bv, &dv),
    ] {
        let dxi = matmul_backward(&c.input, w.data(), dy, gw.data_mut(), Some(gb.data_mut()), n, d, d);
        for (a, b) in dx.iter_mut().zip(&dxi) {
            *a += *b;
        }
    }
    dx
}

/// Index one past the last attended position.
fn effective_len(mask: &[u8]) -> usize {
    mask.iter().rposition(|&m| m != 0).map_or(0, |p| p + 1)
}

fn check_ids<T: Real>(params: &ModelParameters<T>, seq: &TokenSequence) -> Result<(), EncoderError> {
    let cfg = params.config();
    if seq.ids.len() > cfg.max_len {
        return Err(EncoderError::SequenceTooLong {
            len: seq.ids.len(),
            max_len: cfg.max_len,
        });
    }
    if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(EncoderError::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

/// Runs the encoder over the first `len` positions of `seq`.
///
/// Positions past the last attended one are masked keys and cannot influence
/// earlier positions, so the trimmed pass gives the same values at every kept
/// position as the full-length pass.
pub(crate) fn forward_sequence<T: Real>(
    params: &ModelParameters<T>,
    seq: &TokenSequence,
    len: usize,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<SequenceCache<T>, EncoderError> {
    check_ids(params, seq)?;
    let cfg = params.config();
    let d = cfg.hidden;
    let n = len;
    let ids = seq.ids[..n].to_vec();
    let key_mask: Vec<bool> = seq.attention_mask[..n].iter().map(|&m| m != 0).collect();
    let mut x = vec![T::zero(); n * d];
    for (i, &id) in ids.iter().enumerate() {
        let tok = params.token_embedding.row(id as usize);
        let pos = params.position_embedding.row(i);
        for j in 0..d {
            x[i * d + j] = tok[j] + pos[j];
        }
    }
    let rate = cfg.dropout;
    let mut rng = dropout.filter(|_| rate > 0.0);
    let emb_dropout = rng.as_deref_mut().map(|r| dropout_mask(n * d, rate, r));
    apply_mask(&mut x, &emb_dropout);
    let mut layers = Vec::with_capacity(cfg.layers);
    for lp in &params.layers {
        let (out, cache) = layer_forward(lp, x, &key_mask, cfg.heads, rng.as_deref_mut().map(|r| (rate, r)));
        layers.push(cache);
        x = out;
    }
    Ok(SequenceCache {
        ids,
        n,
        emb_dropout,
        layers,
        hidden: x,
    })
}

/// Accumulates parameter gradients for one sequence given the gradient of
/// the loss with respect to its final hidden states (n × hidden).
pub(crate) fn backward_sequence<T: Real>(
    params: &ModelParameters<T>,
    cache: &SequenceCache<T>,
    d_hidden: Vec<T>,
    grads: &mut ModelParameters<T>,
) {
    let cfg = params.config();
    let d = cfg.hidden;
    let mut dx = d_hidden;
    for (l, c) in cache.layers.iter().enumerate().rev() {
        dx = layer_backward(&params.layers[l], &mut grads.layers[l], c, &dx, cfg.heads);
    }
    apply_mask(&mut dx, &cache.emb_dropout);
    for (i, &id) in cache.ids.iter().enumerate() {
        let g = &dx[i * d..(i + 1) * d];
        for (a, &b) in grads.token_embedding.row_mut(id as usize).iter_mut().zip(g) {
            *a += b;
        }
        for (a, &b) in grads.position_embedding.row_mut(i).iter_mut().zip(g) {
            *a += b;
        }
    }
}

fn check_batch<T: Real>(params: &ModelParameters<T>, batch: &[TokenSequence]) -> Result<usize, EncoderError> {
    let first = batch.first().ok_or(EncoderError::EmptyBatch)?;
    let len = first.len();
    if batch.iter().any(|s| s.len() != len || s.attention_mask.len() != len) {
        return Err(EncoderError::RaggedBatch);
    }
    for s in batch {
        check_ids(params, s)?;
    }
    Ok(len)
}

pub(crate) fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Full-length forward pass. Dropout is active only in `train_mode`, seeded
/// per example from `seed`.
pub fn forward<T: Real>(
    params: &ModelParameters<T>,
    batch: &[TokenSequence],
    train_mode: bool,
    seed: u64,
) -> Result<EncoderOutput<T>, EncoderError> {
    let seq_len = check_batch(params, batch)?;
    let d = params.config().hidden;
    let caches = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = train_mode.then(|| example_rng(seed, i));
            forward_sequence(params, s, seq_len, rng.as_mut())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut hidden = Vec::with_capacity(batch.len() * seq_len * d);
    let mut cls = Vec::with_capacity(batch.len() * d);
    for c in &caches {
        hidden.extend_from_slice(&c.hidden);
        cls.extend_from_slice(&c.hidden[..d]);
    }
    Ok(EncoderOutput {
        hidden: Tensor::from_vec(&[batch.len(), seq_len, d], hidden),
        cls_embedding: Tensor::from_vec(&[batch.len(), d], cls),
    })
}

/// Classifier logits for one `[CLS]` vector.
pub(crate) fn head_logits<T: Real>(params: &ModelParameters<T>, task: TaskId, cls: &[T]) -> Result<Vec<T>, EncoderError> {
    let head = params.head(task)?;
    let c = task.num_classes();
    Ok(matmul(cls, head.weight.data(), Some(head.bias.data()), 1, cls.len(), c))
}

/// MLM logits at one position.
pub(crate) fn mlm_position_logits<T: Real>(params: &ModelParameters<T>, h: &[T]) -> Vec<T> {
    let v = params.config().vocab_size;
    match &params.mlm_weight {
        Some(w) => matmul(h, w.data(), Some(params.mlm_bias.data()), 1, h.len(), v),
        None => (0..v)
            .map(|t| dot(h, params.token_embedding.row(t)) + params.mlm_bias.data()[t])
            .collect(),
    }
}

/// Backward of [`mlm_position_logits`]; returns the gradient w.r.t. `h`.
pub(crate) fn mlm_position_backward<T: Real>(
    params: &ModelParameters<T>,
    h: &[T],
    dlogits: &[T],
    grads: &mut ModelParameters<T>,
) -> Vec<T> {
    let v = params.config().vocab_size;
    let d = h.len();
    for (g, &dl) in grads.mlm_bias.data_mut().iter_mut().zip(dlogits) {
        *g += dl;
    }
    match &params.mlm_weight {
        Some(w) => {
            let gw = grads.mlm_weight.as_mut().expect("untied gradient");
            matmul_backward(h, w.data(), dlogits, gw.data_mut(), None, 1, d, v)
        }
        None => {
            let mut dh = vec![T::zero(); d];
            for (t, &dl) in dlogits.iter().enumerate() {
                if dl == T::zero() {
                    continue;
                }
                let e = params.token_embedding.row(t);
                for j in 0..d {
                    dh[j] += dl * e[j];
                }
                for (g, &hj) in grads.token_embedding.row_mut(t).iter_mut().zip(h) {
                    *g += dl * hj;
                }
            }
            dh
        }
    }
}

/// Raw classifier logits per example (eval mode).
pub fn classify_logits<T: Real>(
    params: &ModelParameters<T>,
    batch: &[TokenSequence],
    task: TaskId,
) -> Result<Vec<Vec<T>>, EncoderError> {
    params.head(task)?;
    check_batch(params, batch)?;
    batch
        .par_iter()
        .map(|s| {
            let n = effective_len(&s.attention_mask).max(1);
            let cache = forward_sequence(params, s, n, None)?;
            head_logits(params, task, &cache.hidden[..params.config().hidden])
        })
        .collect()
}

/// `softmax(classifier(X))` where X is the top-layer `[CLS]` vector. The
/// softmax is evaluated in f64.
pub fn classify<T: Real>(
    params: &ModelParameters<T>,
    batch: &[TokenSequence],
    task: TaskId,
) -> Result<Vec<SoftDistribution>, EncoderError> {
    Ok(classify_logits(params, batch, task)?
        .into_iter()
        .map(|z| {
            let z: Vec<f64> = z.into_iter().map(Real::as_f64).collect();
            SoftDistribution::new(task, softmax(&z)).expect("softmax is a distribution")
        })
        .collect())
}

/// Full-vocabulary MLM logits at every position (eval mode), batch × seq × vocab.
pub fn mlm_logits<T: Real>(params: &ModelParameters<T>, batch: &[TokenSequence]) -> Result<Tensor<T>, EncoderError> {
    let out = forward(params, batch, false, 0)?;
    let [b, s, d] = out.hidden.shape() else {
        unreachable!("hidden is 3-d")
    };
    let (b, s, d) = (*b, *s, *d);
    let v = params.config().vocab_size;
    let mut logits = Vec::with_capacity(b * s * v);
    for row in out.hidden.data().chunks(d) {
        logits.extend(mlm_position_logits(params, row));
    }
    Ok(Tensor::from_vec(&[b, s, v], logits))
}
