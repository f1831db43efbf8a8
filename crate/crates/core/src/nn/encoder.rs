use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::AttentionCache;
use super::params::{glorot, normal, ParamStore};
use crate::autodiff::{Graph, NodeId, LN_EPS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shape hyperparameters of one pre-norm transformer encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    /// Learnable tokens prepended to the input sequence.
    pub cls_tokens: usize,
    /// Longest admissible input sequence (excluding CLS tokens).
    pub max_inputs: usize,
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Rows of the positional table.
    pub fn positions(&self) -> usize {
        self.cls_tokens + self.max_inputs
    }

    pub fn mlp_width(&self) -> usize {
        4 * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.width == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.max_inputs == 0 {
            return Err(Error::Config("encoder needs at least one input token".into()));
        }
        Ok(())
    }
}

/// Declares `prefix.W` (and `prefix.b`) and applies `x · W + b`.
pub fn linear(g: &mut Graph, prefix: &str, x: NodeId, fan_in: usize, fan_out: usize, bias: bool) -> Result<NodeId> {
    let w = g.param(&format!("{prefix}.W"), &[fan_in, fan_out])?;
    let y = g.matmul(x, w)?;
    if bias {
        let b = g.param(&format!("{prefix}.b"), &[fan_out])?;
        g.add(y, b)
    } else {
        Ok(y)
    }
}

pub fn init_linear(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<()> {
    store.insert(format!("{prefix}.W"), glorot(rng, fan_in, fan_out))?;
    if bias {
        store.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]))?;
    }
    Ok(())
}

pub fn layer_norm(g: &mut Graph, prefix: &str, x: NodeId) -> Result<NodeId> {
    let c = *g.shape(x).last().unwrap_or(&1);
    let gamma = g.param(&format!("{prefix}.gamma"), &[c])?;
    let beta = g.param(&format!("{prefix}.beta"), &[c])?;
    g.layer_norm(x, gamma, beta, LN_EPS)
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, width: usize) -> Result<()> {
    store.insert(format!("{prefix}.gamma"), Tensor::ones(&[width]))?;
    store.insert(format!("{prefix}.beta"), Tensor::zeros(&[width]))
}

/// Graph handles produced by one multi-head self-attention layer.
#[derive(Clone, Debug)]
pub struct MsaNodes {
    pub output: NodeId,
    pub queries: NodeId,
    pub keys: NodeId,
    /// Row-stochastic attention matrix of each head, `[B, n, n]`.
    pub head_attention: Vec<NodeId>,
}

/// Multi-head self-attention over `x: [B, n, C]`:
/// `Concat_h(Softmax(Q_h K_hᵀ / √d_k) V_h) · W_O + b_O`.
pub fn msa(g: &mut Graph, prefix: &str, x: NodeId, heads: usize) -> Result<MsaNodes> {
    let c = *g.shape(x).last().unwrap_or(&0);
    if heads == 0 || c % heads != 0 {
        return Err(Error::shape("msa", format!("width {c} not divisible by {heads} heads")));
    }
    let dk = c / heads;
    let q = linear(g, &format!("{prefix}.WQ"), x, c, c, false)?;
    let k = linear(g, &format!("{prefix}.WK"), x, c, c, false)?;
    let v = linear(g, &format!("{prefix}.WV"), x, c, c, false)?;
    let axis = g.shape(x).len() - 1;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut head_attention = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice(q, axis, h * dk, dk)?,
                g.slice(k, axis, h * dk, dk)?,
                g.slice(v, axis, h * dk, dk)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax(scores, axis)?;
        head_attention.push(attn);
        outs.push(g.matmul(attn, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { g.concat(&outs, axis)? };
    let output = linear(g, &format!("{prefix}.WO"), joined, c, c, true)?;
    Ok(MsaNodes {
        output,
        queries: q,
        keys: k,
        head_attention,
    })
}

/// Graph handles produced by [`Encoder::forward`].
#[derive(Clone, Debug)]
pub struct EncoderNodes {
    /// `h_0 = [E_cls; s_1..s_N] + E_pos`, `[B, K+N, C]`.
    pub embedded: NodeId,
    /// `h_L`, `[B, K+N, C]`.
    pub output: NodeId,
    /// Last layer's attention, absent when the stack is empty.
    pub last: Option<MsaNodes>,
}

impl EncoderNodes {
    /// Cached last-layer queries and keys after a forward pass.
    pub fn attention_cache(&self, g: &Graph, heads: usize) -> Result<AttentionCache> {
        let last = self
            .last
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("encoder has no attention layer".into()))?;
        AttentionCache::new(g.value(last.queries)?.clone(), g.value(last.keys)?.clone(), heads)
    }
}

/// A named pre-norm transformer encoder.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub prefix: String,
    pub config: EncoderConfig,
}

impl Encoder {
    pub fn new(prefix: impl Into<String>, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            prefix: prefix.into(),
            config,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let c = self.config.width;
        let p = &self.prefix;
        store.insert(format!("{p}.cls"), normal(rng, &[self.config.cls_tokens, c], 0.02))?;
        store.insert(format!("{p}.pos"), normal(rng, &[self.config.positions(), c], 0.02))?;
        for l in 0..self.config.layers {
            let lp = format!("{p}.layer{l}");
            init_layer_norm(store, &format!("{lp}.ln1"), c)?;
            for w in ["WQ", "WK", "WV"] {
                init_linear(store, rng, &format!("{lp}.{w}"), c, c, false)?;
            }
            init_linear(store, rng, &format!("{lp}.WO"), c, c, true)?;
            init_layer_norm(store, &format!("{lp}.ln2"), c)?;
            init_linear(store, rng, &format!("{lp}.mlp1"), c, self.config.mlp_width(), true)?;
            init_linear(store, rng, &format!("{lp}.mlp2"), self.config.mlp_width(), c, true)?;
        }
        Ok(())
    }

    /// Runs the stack over `inputs: [B, N, C]` and returns `[B, K+N, C]`.
    pub fn forward(&self, g: &mut Graph, inputs: NodeId) -> Result<EncoderNodes> {
        let cfg = &self.config;
        let shape = g.shape(inputs).to_vec();
        if shape.len() != 3 || shape[2] != cfg.width {
            return Err(Error::shape(
                "encoder",
                format!("{}: expected [B, N, {}], got {shape:?}", self.prefix, cfg.width),
            ));
        }
        let (batch, n) = (shape[0], shape[1]);
        if n > cfg.max_inputs {
            return Err(Error::shape(
                "encoder",
                format!(
                    "{}: {n} tokens exceed positional table of {} content rows",
                    self.prefix, cfg.max_inputs
                ),
            ));
        }
        let p = &self.prefix;
        let k = cfg.cls_tokens;
        let cls = g.param(&format!("{p}.cls"), &[k, cfg.width])?;
        let cls = g.broadcast_to(cls, &[batch, k, cfg.width])?;
        let seq = g.concat(&[cls, inputs], 1)?;
        let pos = g.param(&format!("{p}.pos"), &[cfg.positions(), cfg.width])?;
        let pos = if k + n == cfg.positions() { pos } else { g.slice(pos, 0, 0, k + n)? };
        let embedded = g.add(seq, pos)?;

        let mut h = embedded;
        let mut last = None;
        for l in 0..cfg.layers {
            let lp = format!("{p}.layer{l}");
            let normed = layer_norm(g, &format!("{lp}.ln1"), h)?;
            let att = msa(g, &lp, normed, cfg.heads)?;
            let z = g.add(att.output, h)?;
            let normed = layer_norm(g, &format!("{lp}.ln2"), z)?;
            let hidden = linear(g, &format!("{lp}.mlp1"), normed, cfg.width, cfg.mlp_width(), true)?;
            let hidden = g.gelu(hidden);
            let m = linear(g, &format!("{lp}.mlp2"), hidden, cfg.mlp_width(), cfg.width, true)?;
            h = g.add(m, z)?;
            last = Some(att);
        }
        Ok(EncoderNodes {
            embedded,
            output: h,
            last,
        })
    }
}

/// Evaluates an encoder on `[N, C]` or `[B, N, C]` tokens outside of training.
pub fn encoder_forward(
    encoder: &Encoder,
    params: &ParamStore,
    tokens: &Tensor,
) -> Result<(Tensor, Option<AttentionCache>)> {
    let batched = match tokens.rank() {
        2 => tokens.clone().reshape(vec![1, tokens.shape()[0], tokens.shape()[1]])?,
        3 => tokens.clone(),
        _ => return Err(Error::shape("encoder", format!("tokens {:?}", tokens.shape()))),
    };
    let mut g = Graph::new();
    let x = g.constant(batched);
    let nodes = encoder.forward(&mut g, x)?;
    g.forward(params)?;
    let cache = match nodes.last {
        Some(_) => Some(nodes.attention_cache(&g, encoder.config.heads)?),
        None => None,
    };
    let mut out = g.value(nodes.output)?.clone();
    if tokens.rank() == 2 {
        let s = out.shape().to_vec();
        out = out.reshape(vec![s[1], s[2]])?;
    }
    Ok((out, cache))
}
