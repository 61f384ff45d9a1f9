//! Bottleneck + MLP-Mixer network with token-tagging and attention-pooled
//! classification heads.
//!
//! Activations are kept token-major: the bottleneck output and every mixer
//! state are `s x b` row-major buffers (row `t` is token `t`'s channel
//! vector). Parameter shapes follow the conceptual `out x in` convention.

mod net;
pub mod ops;

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::hash::SplitMix64;
use crate::real::Real;

pub use net::{backward, backward_into, forward, ActivationRecord, Gradients, Logits};
pub use ops::{gelu, layer_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum HeadKind {
    /// Linear layer applied to every position.
    TokenLabels { num_labels: usize },
    /// Attention pooling over valid positions, then a linear classifier.
    PooledClass { num_classes: usize },
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            Self::TokenLabels { num_labels } => num_labels,
            Self::PooledClass { num_classes } => num_classes,
        }
    }

    pub fn with_outputs(self, n: usize) -> Self {
        match self {
            Self::TokenLabels { .. } => Self::TokenLabels { num_labels: n },
            Self::PooledClass { .. } => Self::PooledClass { num_classes: n },
        }
    }

    pub fn is_token(self) -> bool {
        matches!(self, Self::TokenLabels { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ModelConfig {
    /// `(2w + 1) * m`.
    pub input_rows: usize,
    /// `s`.
    pub seq_len: usize,
    /// `b`.
    pub bottleneck: usize,
    /// Shared hidden width of the token- and channel-mixing MLPs.
    pub hidden: usize,
    /// Mixer layers; 0 feeds the bottleneck straight into the head.
    pub depth: usize,
    pub head: HeadKind,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_rows == 0 || self.seq_len == 0 || self.bottleneck == 0 || self.hidden == 0 || self.head.outputs() == 0 {
            return Err(config_err!("model dimensions must all be at least 1: {self:?}"));
        }
        Ok(())
    }
}

/// Dense layer, `weight` stored `out x inp` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    pub out: usize,
    pub inp: usize,
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Real> Linear<S> {
    fn zeros(out: usize, inp: usize) -> Self {
        Self { out, inp, weight: alloc::vec![S::zero(); out * inp], bias: alloc::vec![S::zero(); out] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm<S> {
    pub scale: Vec<S>,
    pub shift: Vec<S>,
}

impl<S: Real> Norm<S> {
    fn new(d: usize, scale: S) -> Self {
        Self { scale: alloc::vec![scale; d], shift: alloc::vec![S::zero(); d] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixerLayer<S> {
    pub norm1: Norm<S>,
    /// `hidden x s`.
    pub token_fc1: Linear<S>,
    /// `s x hidden`.
    pub token_fc2: Linear<S>,
    pub norm2: Norm<S>,
    /// `hidden x b`.
    pub channel_fc1: Linear<S>,
    /// `b x hidden`.
    pub channel_fc2: Linear<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams<S> {
    Token { classifier: Linear<S> },
    Pooled { query: Vec<S>, classifier: Linear<S> },
}

impl<S> HeadParams<S> {
    pub fn classifier(&self) -> &Linear<S> {
        match self {
            Self::Token { classifier } | Self::Pooled { classifier, .. } => classifier,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    /// `b x input_rows`.
    pub bottleneck: Linear<S>,
    pub layers: Vec<MixerLayer<S>>,
    pub head: HeadParams<S>,
}

/// Borrowed view of one named tensor.
pub struct TensorRef<'a, S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [S],
}

pub struct TensorMut<'a, S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [S],
}

macro_rules! walk_tensors {
    ($params:expr, $visit:ident, $($borrow:tt)+) => {{
        let p = $params;
        let lin = |prefix: &str| (alloc::format!("{prefix}.weight"), alloc::format!("{prefix}.bias"));
        let (w, b) = lin("bottleneck");
        $visit(w, alloc::vec![p.bottleneck.out, p.bottleneck.inp], $($borrow)+ p.bottleneck.weight);
        $visit(b, alloc::vec![p.bottleneck.out], $($borrow)+ p.bottleneck.bias);
        for (l, layer) in ($($borrow)+ p.layers).into_iter().enumerate() {
            let norm = |name: &str| (alloc::format!("layers.{l}.{name}.scale"), alloc::format!("layers.{l}.{name}.shift"));
            let (s, h) = norm("norm1");
            let d = layer.norm1.scale.len();
            $visit(s, alloc::vec![d], $($borrow)+ layer.norm1.scale);
            $visit(h, alloc::vec![d], $($borrow)+ layer.norm1.shift);
            for (name, lin_ref) in [("token_fc1", $($borrow)+ layer.token_fc1), ("token_fc2", $($borrow)+ layer.token_fc2)] {
                let (w, b) = lin(&alloc::format!("layers.{l}.{name}"));
                $visit(w, alloc::vec![lin_ref.out, lin_ref.inp], $($borrow)+ lin_ref.weight);
                $visit(b, alloc::vec![lin_ref.out], $($borrow)+ lin_ref.bias);
            }
            let (s, h) = norm("norm2");
            $visit(s, alloc::vec![d], $($borrow)+ layer.norm2.scale);
            $visit(h, alloc::vec![d], $($borrow)+ layer.norm2.shift);
            for (name, lin_ref) in [("channel_fc1", $($borrow)+ layer.channel_fc1), ("channel_fc2", $($borrow)+ layer.channel_fc2)] {
                let (w, b) = lin(&alloc::format!("layers.{l}.{name}"));
                $visit(w, alloc::vec![lin_ref.out, lin_ref.inp], $($borrow)+ lin_ref.weight);
                $visit(b, alloc::vec![lin_ref.out], $($borrow)+ lin_ref.bias);
            }
        }
        match $($borrow)+ p.head {
            HeadParams::Token { classifier } => {
                let (w, b) = lin("head");
                $visit(w, alloc::vec![classifier.out, classifier.inp], $($borrow)+ classifier.weight);
                $visit(b, alloc::vec![classifier.out], $($borrow)+ classifier.bias);
            }
            HeadParams::Pooled { query, classifier } => {
                $visit(alloc::string::ToString::to_string("head.query"), alloc::vec![query.len()], $($borrow)+ *query);
                let (w, b) = lin("head");
                $visit(w, alloc::vec![classifier.out, classifier.inp], $($borrow)+ classifier.weight);
                $visit(b, alloc::vec![classifier.out], $($borrow)+ classifier.bias);
            }
        }
    }};
}

impl<S: Real> ModelParams<S> {
    /// All-zero parameters (also the gradient container).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (b, s, h) = (cfg.bottleneck, cfg.seq_len, cfg.hidden);
        let layers = (0..cfg.depth)
            .map(|_| MixerLayer {
                norm1: Norm::new(b, S::zero()),
                token_fc1: Linear::zeros(h, s),
                token_fc2: Linear::zeros(s, h),
                norm2: Norm::new(b, S::zero()),
                channel_fc1: Linear::zeros(h, b),
                channel_fc2: Linear::zeros(b, h),
            })
            .collect();
        let classifier = Linear::zeros(cfg.head.outputs(), b);
        let head = match cfg.head {
            HeadKind::TokenLabels { .. } => HeadParams::Token { classifier },
            HeadKind::PooledClass { .. } => HeadParams::Pooled { query: alloc::vec![S::zero(); b], classifier },
        };
        Self { bottleneck: Linear::zeros(b, cfg.input_rows), layers, head }
    }

    /// Glorot-uniform weights, zero biases, unit norm scales. Deterministic in
    /// `(cfg, seed)`; weights are drawn tensor by tensor in canonical order.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut params = Self::zeros(cfg);
        for layer in &mut params.layers {
            layer.norm1.scale.fill(S::one());
            layer.norm2.scale.fill(S::one());
        }
        let mut rng = SplitMix64::new(seed);
        params.for_each_tensor_mut(|t| {
            let fan = match (t.name.as_str(), t.shape.as_slice()) {
                ("head.query", [d]) => Some(*d + 1),
                (_, [out, inp]) => Some(out + inp),
                _ => None,
            };
            if let Some(fan) = fan {
                let a = libm::sqrt(6.0 / fan as f64);
                for w in t.data.iter_mut() {
                    *w = S::lit((2.0 * rng.next_f64() - 1.0) * a);
                }
            }
        });
        params
    }

    pub fn for_each_tensor(&self, mut f: impl FnMut(TensorRef<'_, S>)) {
        let mut visit = |name: String, shape: Vec<usize>, data: &Vec<S>| f(TensorRef { name, shape, data });
        walk_tensors!(self, visit, &);
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(TensorMut<'_, S>)) {
        let mut visit = |name: String, shape: Vec<usize>, data: &mut Vec<S>| f(TensorMut { name, shape, data });
        walk_tensors!(self, visit, &mut);
    }

    /// Flat copy of every tensor in canonical order.
    pub fn to_flat(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.len());
        self.for_each_tensor(|t| out.extend_from_slice(t.data));
        out
    }

    /// Overwrites every tensor from a flat buffer in canonical order.
    pub fn set_flat(&mut self, flat: &[S]) {
        let mut offset = 0;
        self.for_each_tensor_mut(|t| {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
    }

    /// Total scalar count.
    pub fn len(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|t| n += t.data.len());
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: S, other: &Self) {
        let flat = other.to_flat();
        let mut offset = 0;
        self.for_each_tensor_mut(|t| {
            for (a, &b) in t.data.iter_mut().zip(&flat[offset..]) {
                *a += alpha * b;
            }
            offset += t.data.len();
        });
    }

    pub fn fill_zero(&mut self) {
        self.for_each_tensor_mut(|t| t.data.fill(S::zero()));
    }

    pub fn cast<T: Real>(&self, cfg: &ModelConfig) -> ModelParams<T> {
        let flat: Vec<T> = self.to_flat().into_iter().map(|x| T::lit(x.as_f64())).collect();
        let mut out = ModelParams::<T>::zeros(cfg);
        out.set_flat(&flat);
        out
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(|t| ok &= t.data.iter().all(|x| x.is_finite()));
        ok
    }
}

/// Exact number of scalars in a model of this shape.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    let (r, s, b, h) = (cfg.input_rows, cfg.seq_len, cfg.bottleneck, cfg.hidden);
    let linear = |out: usize, inp: usize| out * inp + out;
    let per_layer = 2 * b + linear(h, s) + linear(s, h) + 2 * b + linear(h, b) + linear(b, h);
    let head = match cfg.head {
        HeadKind::TokenLabels { num_labels } => linear(num_labels, b),
        HeadKind::PooledClass { num_classes } => b + linear(num_classes, b),
    };
    linear(b, r) + cfg.depth * per_layer + head
}
