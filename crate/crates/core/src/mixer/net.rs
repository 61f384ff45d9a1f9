use alloc::vec::Vec;

use super::ops::{gelu_grad_with_cdf, gemm_nn, gemm_nt, gemm_tn, layer_norm_row, layer_norm_row_backward, normal_cdf, transpose};
use super::{HeadKind, HeadParams, Linear, MixerLayer, ModelConfig, ModelParams, Norm};
use crate::error::{shape_err, Result};
use crate::projection::FeatureMatrix;
use crate::real::Real;

/// Head outputs, position-major: `positions x outputs`. The token head has
/// one row per sequence slot; the pooled head has a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<S> {
    pub outputs: usize,
    pub positions: usize,
    pub data: Vec<S>,
}

impl<S: Real> Logits<S> {
    pub fn zeros(outputs: usize, positions: usize) -> Self {
        Self { outputs, positions, data: alloc::vec![S::zero(); outputs * positions] }
    }

    pub fn row(&self, pos: usize) -> &[S] {
        &self.data[pos * self.outputs..(pos + 1) * self.outputs]
    }

    pub fn row_mut(&mut self, pos: usize) -> &mut [S] {
        &mut self.data[pos * self.outputs..(pos + 1) * self.outputs]
    }

    /// Highest-scoring output at `pos`; the first index wins ties.
    pub fn argmax(&self, pos: usize) -> usize {
        let row = self.row(pos);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
struct LayerRecord<S> {
    xhat1: Vec<S>,
    rstd1: Vec<S>,
    n1: Vec<S>,
    a1: Vec<S>,
    cdf1: Vec<S>,
    g1: Vec<S>,
    xhat2: Vec<S>,
    rstd2: Vec<S>,
    n2: Vec<S>,
    c1: Vec<S>,
    cdf2: Vec<S>,
    g2: Vec<S>,
}

#[derive(Debug, Clone)]
struct PoolRecord<S> {
    alpha: Vec<S>,
    pooled: Vec<S>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ActivationRecord<S> {
    columns: Vec<Vec<(u32, f32)>>,
    valid_len: usize,
    /// Bottleneck output `B`, `s x b`.
    pub bottleneck_out: Vec<S>,
    layers: Vec<LayerRecord<S>>,
    /// Mixer output `O`, `s x b`; equal to `B` when depth is 0.
    pub output: Vec<S>,
    pool: Option<PoolRecord<S>>,
}

impl<S: Real> ActivationRecord<S> {
    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    /// Attention weights of the pooled head over valid positions.
    pub fn attention(&self) -> Option<&[S]> {
        self.pool.as_ref().map(|p| p.alpha.as_slice())
    }

    pub fn pooled(&self) -> Option<&[S]> {
        self.pool.as_ref().map(|p| p.pooled.as_slice())
    }
}

pub struct Gradients<S> {
    pub params: ModelParams<S>,
    /// Gradient w.r.t. the dense input matrix, `input_rows x s` row-major.
    pub input: Vec<S>,
}

fn check_shapes<S>(params: &ModelParams<S>, cfg: &ModelConfig) -> Result<()> {
    let (b, s, h) = (cfg.bottleneck, cfg.seq_len, cfg.hidden);
    let lin_ok = |l: &Linear<S>, out: usize, inp: usize| l.out == out && l.inp == inp && l.weight.len() == out * inp && l.bias.len() == out;
    let mut ok = lin_ok(&params.bottleneck, b, cfg.input_rows) && params.layers.len() == cfg.depth;
    for layer in &params.layers {
        ok &= layer.norm1.scale.len() == b && layer.norm2.scale.len() == b;
        ok &= lin_ok(&layer.token_fc1, h, s) && lin_ok(&layer.token_fc2, s, h);
        ok &= lin_ok(&layer.channel_fc1, h, b) && lin_ok(&layer.channel_fc2, b, h);
    }
    ok &= match (&params.head, cfg.head) {
        (HeadParams::Token { classifier }, HeadKind::TokenLabels { num_labels }) => lin_ok(classifier, num_labels, b),
        (HeadParams::Pooled { query, classifier }, HeadKind::PooledClass { num_classes }) => {
            query.len() == b && lin_ok(classifier, num_classes, b)
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(shape_err!("parameters do not match model config {cfg:?}"))
    }
}

/// Runs the network on one projected sequence.
pub fn forward<S: Real>(features: &FeatureMatrix, params: &ModelParams<S>, cfg: &ModelConfig) -> Result<(Logits<S>, ActivationRecord<S>)> {
    if features.rows() != cfg.input_rows || features.cols() != cfg.seq_len {
        return Err(shape_err!(
            "feature matrix is {}x{}, model expects {}x{}",
            features.rows(),
            features.cols(),
            cfg.input_rows,
            cfg.seq_len
        ));
    }
    check_shapes(params, cfg)?;
    let (b, s) = (cfg.bottleneck, cfg.seq_len);
    let valid = features.valid_len();
    let columns: Vec<Vec<(u32, f32)>> = (0..valid).map(|t| features.column(t).map(|(r, v)| (r as u32, v)).collect()).collect();

    // B[t][i] = bias[i] + sum_r W[i][r] C[r][t]
    let bn = &params.bottleneck;
    let mut x = alloc::vec![S::zero(); s * b];
    for i in 0..b {
        let w_row = &bn.weight[i * bn.inp..(i + 1) * bn.inp];
        for t in 0..s {
            let mut acc = bn.bias[i];
            if let Some(col) = columns.get(t) {
                for &(r, v) in col {
                    acc += w_row[r as usize] * S::from_f32(v);
                }
            }
            x[t * b + i] = acc;
        }
    }
    let bottleneck_out = x.clone();

    let mut layers = Vec::with_capacity(cfg.depth);
    for layer in &params.layers {
        let (y, rec) = layer_forward(&x, layer, cfg);
        layers.push(rec);
        x = y;
    }

    let (logits, pool) = match &params.head {
        HeadParams::Token { classifier } => {
            let mut logits = Logits::zeros(classifier.out, s);
            for t in 0..s {
                logits.row_mut(t).copy_from_slice(&classifier.bias);
            }
            gemm_nt(s, b, classifier.out, &x, &classifier.weight, &mut logits.data);
            (logits, None)
        }
        HeadParams::Pooled { query, classifier } => {
            let scores: Vec<S> = (0..valid).map(|t| dot(query, &x[t * b..(t + 1) * b])).collect();
            let alpha = softmax(&scores);
            let mut pooled = alloc::vec![S::zero(); b];
            for (t, &a) in alpha.iter().enumerate() {
                for (p, &o) in pooled.iter_mut().zip(&x[t * b..(t + 1) * b]) {
                    *p += a * o;
                }
            }
            let mut logits = Logits::zeros(classifier.out, 1);
            for k in 0..classifier.out {
                logits.data[k] = classifier.bias[k] + dot(&classifier.weight[k * b..(k + 1) * b], &pooled);
            }
            (logits, Some(PoolRecord { alpha, pooled }))
        }
    };

    let record = ActivationRecord { columns, valid_len: valid, bottleneck_out, layers, output: x, pool };
    Ok((logits, record))
}

fn layer_forward<S: Real>(x: &[S], layer: &MixerLayer<S>, cfg: &ModelConfig) -> (Vec<S>, LayerRecord<S>) {
    let (b, s, h) = (cfg.bottleneck, cfg.seq_len, cfg.hidden);
    let (xhat1, rstd1, n1) = norm_rows(x, &layer.norm1, s, b);

    // token mixing along the sequence axis: (h x s) * (s x b)
    let mut a1 = broadcast_rows(&layer.token_fc1.bias, b);
    gemm_nn(h, s, b, &layer.token_fc1.weight, &n1, &mut a1);
    let (cdf1, g1) = gelu_rows(&a1);
    let mut u = broadcast_rows(&layer.token_fc2.bias, b);
    gemm_nn(s, h, b, &layer.token_fc2.weight, &g1, &mut u);
    for (ui, &xi) in u.iter_mut().zip(x) {
        *ui += xi;
    }

    // channel mixing per token: (s x b) * (b x h)
    let (xhat2, rstd2, n2) = norm_rows(&u, &layer.norm2, s, b);
    let mut c1 = broadcast_cols(&layer.channel_fc1.bias, s);
    gemm_nt(s, b, h, &n2, &layer.channel_fc1.weight, &mut c1);
    let (cdf2, g2) = gelu_rows(&c1);
    let mut y = broadcast_cols(&layer.channel_fc2.bias, s);
    gemm_nt(s, h, b, &g2, &layer.channel_fc2.weight, &mut y);
    for (yi, &ui) in y.iter_mut().zip(&u) {
        *yi += ui;
    }
    (y, LayerRecord { xhat1, rstd1, n1, a1, cdf1, g1, xhat2, rstd2, n2, c1, cdf2, g2 })
}

fn gelu_rows<S: Real>(v: &[S]) -> (Vec<S>, Vec<S>) {
    let cdf: Vec<S> = v.iter().map(|&x| normal_cdf(x)).collect();
    let g = v.iter().zip(&cdf).map(|(&x, &c)| x * c).collect();
    (cdf, g)
}

/// Accumulates parameter gradients into `grads`. When `want_input` is set,
/// also returns the gradient w.r.t. the dense input matrix.
pub fn backward_into<S: Real>(
    record: &ActivationRecord<S>,
    upstream: &Logits<S>,
    params: &ModelParams<S>,
    cfg: &ModelConfig,
    grads: &mut ModelParams<S>,
    want_input: bool,
) -> Result<Option<Vec<S>>> {
    check_shapes(params, cfg)?;
    check_shapes(grads, cfg)?;
    let (b, s) = (cfg.bottleneck, cfg.seq_len);
    let x = &record.output;
    let mut dx = alloc::vec![S::zero(); s * b];

    match (&params.head, &mut grads.head) {
        (HeadParams::Token { classifier }, HeadParams::Token { classifier: g }) => {
            let l = classifier.out;
            if upstream.outputs != l || upstream.positions != s {
                return Err(shape_err!("upstream gradient is {}x{}, expected {s}x{l}", upstream.positions, upstream.outputs));
            }
            gemm_tn(l, s, b, &upstream.data, x, &mut g.weight);
            for t in 0..s {
                for (gb, &d) in g.bias.iter_mut().zip(upstream.row(t)) {
                    *gb += d;
                }
            }
            gemm_nn(s, l, b, &upstream.data, &classifier.weight, &mut dx);
        }
        (HeadParams::Pooled { query, classifier }, HeadParams::Pooled { query: gq, classifier: g }) => {
            let k_out = classifier.out;
            if upstream.outputs != k_out || upstream.positions != 1 {
                return Err(shape_err!("upstream gradient is {}x{}, expected 1x{k_out}", upstream.positions, upstream.outputs));
            }
            let pool = record.pool.as_ref().ok_or_else(|| shape_err!("record has no pooling state"))?;
            let mut dpooled = alloc::vec![S::zero(); b];
            for k in 0..k_out {
                let d = upstream.data[k];
                g.bias[k] += d;
                let (gw, w) = (&mut g.weight[k * b..(k + 1) * b], &classifier.weight[k * b..(k + 1) * b]);
                for (((gw, &w), dp), &p) in gw.iter_mut().zip(w).zip(&mut dpooled).zip(&pool.pooled) {
                    *gw += d * p;
                    *dp += w * d;
                }
            }
            let dalpha: Vec<S> = (0..record.valid_len).map(|t| dot(&x[t * b..(t + 1) * b], &dpooled)).collect();
            let mean: S = pool.alpha.iter().zip(&dalpha).map(|(&a, &d)| a * d).sum();
            for (t, &a) in pool.alpha.iter().enumerate() {
                let de = a * (dalpha[t] - mean);
                let row = &x[t * b..(t + 1) * b];
                let drow = &mut dx[t * b..(t + 1) * b];
                for j in 0..b {
                    gq[j] += de * row[j];
                    drow[j] += a * dpooled[j] + de * query[j];
                }
            }
        }
        _ => return Err(shape_err!("gradient head does not match parameter head")),
    }

    for ((layer, rec), g) in params.layers.iter().zip(&record.layers).zip(grads.layers.iter_mut()).rev() {
        dx = layer_backward(&dx, layer, rec, g, cfg);
    }

    // bottleneck
    let bn = &params.bottleneck;
    let gbn = &mut grads.bottleneck;
    for t in 0..s {
        for i in 0..b {
            gbn.bias[i] += dx[t * b + i];
        }
    }
    for i in 0..b {
        let g_row = &mut gbn.weight[i * bn.inp..(i + 1) * bn.inp];
        for (t, col) in record.columns.iter().enumerate() {
            let d = dx[t * b + i];
            for &(r, v) in col {
                g_row[r as usize] += d * S::from_f32(v);
            }
        }
    }
    if !want_input {
        return Ok(None);
    }
    let db_t = transpose(s, b, &dx);
    let mut dinput = alloc::vec![S::zero(); bn.inp * s];
    gemm_tn(bn.inp, b, s, &bn.weight, &db_t, &mut dinput);
    Ok(Some(dinput))
}

/// Exact reverse-mode gradients of every parameter and of the input matrix.
pub fn backward<S: Real>(
    record: &ActivationRecord<S>,
    upstream: &Logits<S>,
    params: &ModelParams<S>,
    cfg: &ModelConfig,
) -> Result<Gradients<S>> {
    let mut grads = ModelParams::zeros(cfg);
    let input = backward_into(record, upstream, params, cfg, &mut grads, true)?.unwrap_or_default();
    Ok(Gradients { params: grads, input })
}

fn layer_backward<S: Real>(dy: &[S], layer: &MixerLayer<S>, rec: &LayerRecord<S>, g: &mut MixerLayer<S>, cfg: &ModelConfig) -> Vec<S> {
    let (b, s, h) = (cfg.bottleneck, cfg.seq_len, cfg.hidden);

    // channel MLP
    let mut du = dy.to_vec();
    gemm_tn(b, s, h, dy, &rec.g2, &mut g.channel_fc2.weight);
    add_col_sums(dy, s, b, &mut g.channel_fc2.bias);
    let mut dc1 = alloc::vec![S::zero(); s * h];
    gemm_nn(s, b, h, dy, &layer.channel_fc2.weight, &mut dc1);
    for ((d, &c), &cdf) in dc1.iter_mut().zip(&rec.c1).zip(&rec.cdf2) {
        *d *= gelu_grad_with_cdf(c, cdf);
    }
    gemm_tn(h, s, b, &dc1, &rec.n2, &mut g.channel_fc1.weight);
    add_col_sums(&dc1, s, h, &mut g.channel_fc1.bias);
    let mut dn2 = alloc::vec![S::zero(); s * b];
    gemm_nn(s, h, b, &dc1, &layer.channel_fc1.weight, &mut dn2);
    norm_rows_backward(&dn2, &rec.xhat2, &rec.rstd2, &layer.norm2, &mut g.norm2, &mut du, s, b);

    // token MLP
    let mut dx = du.clone();
    gemm_nt(s, b, h, &du, &rec.g1, &mut g.token_fc2.weight);
    add_row_sums(&du, s, b, &mut g.token_fc2.bias);
    let mut da1 = alloc::vec![S::zero(); h * b];
    gemm_tn(h, s, b, &layer.token_fc2.weight, &du, &mut da1);
    for ((d, &a), &cdf) in da1.iter_mut().zip(&rec.a1).zip(&rec.cdf1) {
        *d *= gelu_grad_with_cdf(a, cdf);
    }
    gemm_nt(h, b, s, &da1, &rec.n1, &mut g.token_fc1.weight);
    add_row_sums(&da1, h, b, &mut g.token_fc1.bias);
    let mut dn1 = alloc::vec![S::zero(); s * b];
    gemm_tn(s, h, b, &layer.token_fc1.weight, &da1, &mut dn1);
    norm_rows_backward(&dn1, &rec.xhat1, &rec.rstd1, &layer.norm1, &mut g.norm1, &mut dx, s, b);
    dx
}

fn norm_rows<S: Real>(x: &[S], norm: &Norm<S>, rows: usize, d: usize) -> (Vec<S>, Vec<S>, Vec<S>) {
    let mut xhat = alloc::vec![S::zero(); rows * d];
    let mut out = alloc::vec![S::zero(); rows * d];
    let mut rstd = Vec::with_capacity(rows);
    for t in 0..rows {
        let span = t * d..(t + 1) * d;
        rstd.push(layer_norm_row(&x[span.clone()], &norm.scale, &norm.shift, &mut xhat[span.clone()], &mut out[span]));
    }
    (xhat, rstd, out)
}

#[allow(clippy::too_many_arguments)]
fn norm_rows_backward<S: Real>(dout: &[S], xhat: &[S], rstd: &[S], norm: &Norm<S>, g: &mut Norm<S>, dx: &mut [S], rows: usize, d: usize) {
    for (t, &r) in rstd.iter().enumerate().take(rows) {
        let span = t * d..(t + 1) * d;
        layer_norm_row_backward(&dout[span.clone()], &xhat[span.clone()], r, &norm.scale, &mut g.scale, &mut g.shift, &mut dx[span]);
    }
}

/// `rows x cols` matrix whose row `r` is filled with `bias[r]`.
fn broadcast_rows<S: Real>(bias: &[S], cols: usize) -> Vec<S> {
    bias.iter().flat_map(|&v| std::iter::repeat_n(v, cols)).collect()
}

/// `rows x bias.len()` matrix whose every row is `bias`.
fn broadcast_cols<S: Real>(bias: &[S], rows: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(rows * bias.len());
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    out
}

fn add_row_sums<S: Real>(m: &[S], rows: usize, cols: usize, acc: &mut [S]) {
    for r in 0..rows {
        acc[r] += m[r * cols..(r + 1) * cols].iter().copied().sum::<S>();
    }
}

fn add_col_sums<S: Real>(m: &[S], rows: usize, cols: usize, acc: &mut [S]) {
    for r in 0..rows {
        for (a, &v) in acc.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *a += v;
        }
    }
}

#[inline]
fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn softmax<S: Real>(scores: &[S]) -> Vec<S> {
    let Some(max) = scores.iter().copied().reduce(S::max) else {
        return Vec::new();
    };
    let exps: Vec<S> = scores.iter().map(|&v| (v - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
