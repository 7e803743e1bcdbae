//! Toy Transformer encoder: token and position embeddings followed by `L`
//! post-norm blocks of multi-head self-attention and a ReLU feed-forward
//! sublayer, with every layer's hidden states exposed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var, LN_EPS, MASK_BIAS};
use crate::error::{Error, Result};
use crate::nn::{dropout, linear, Mode};
use crate::params::{Init, Params};
use crate::tensor::{Scalar, Tensor};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 4096,
            max_seq_len: 128,
            hidden_size: 64,
            num_layers: 6,
            num_heads: 4,
            ffn_size: 256,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_size", self.ffn_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.hidden_size % self.num_heads != 0 {
            return Err(Error::config(
                "num_heads",
                format!(
                    "hidden_size {} is not divisible by {} heads",
                    self.hidden_size, self.num_heads
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }
}

/// Output of [`encode`]: `L + 1` hidden-state matrices (index 0 is the
/// embedding output), all living on the graph that produced them.
#[derive(Clone, Debug)]
pub struct EncodedSequence {
    pub layer_states: Vec<Var>,
    pub attention_mask: Vec<bool>,
    pub token_ids: Vec<usize>,
}

impl EncodedSequence {
    pub fn last(&self) -> Var {
        *self.layer_states.last().expect("at least one layer state")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_states.len() - 1
    }

    pub fn states<S: Scalar>(&self, g: &Graph<S>) -> Vec<Tensor<S>> {
        self.layer_states.iter().map(|&v| g.value(v).clone()).collect()
    }
}

pub fn layer_prefix(l: usize) -> String {
    format!("enc.layer{l}")
}

/// Adds every encoder parameter to `params`.
pub fn init_params<S: Scalar, R: Rng>(cfg: &EncoderConfig, params: &mut Params<S>, rng: &mut R) {
    let d = cfg.hidden_size;
    let f = cfg.ffn_size;
    params.init("enc.tok_emb", &[cfg.vocab_size, d], Init::Normal(INIT_STD), true, rng);
    params.init("enc.pos_emb", &[cfg.max_seq_len, d], Init::Normal(INIT_STD), true, rng);
    for l in 0..cfg.num_layers {
        let p = layer_prefix(l);
        for (name, fan_in, fan_out) in [
            ("q", d, d),
            ("k", d, d),
            ("v", d, d),
            ("o", d, d),
            ("ff1", d, f),
            ("ff2", f, d),
        ] {
            params.init(&format!("{p}.{name}.w"), &[fan_in, fan_out], Init::Normal(INIT_STD), true, rng);
            params.init(&format!("{p}.{name}.b"), &[fan_out], Init::Zeros, false, rng);
        }
        for ln in ["ln1", "ln2"] {
            params.init(&format!("{p}.{ln}.g"), &[d], Init::Ones, false, rng);
            params.init(&format!("{p}.{ln}.b"), &[d], Init::Zeros, false, rng);
        }
    }
}

fn mask_bias<S: Scalar>(mask: &[bool]) -> Option<Tensor<S>> {
    if mask.iter().all(|&m| m) {
        return None;
    }
    let t = mask.len();
    let row: Vec<S> = mask
        .iter()
        .map(|&m| if m { S::zero() } else { S::of(MASK_BIAS) })
        .collect();
    let data = (0..t).flat_map(|_| row.iter().copied()).collect();
    Some(Tensor::new(vec![t, t], data).expect("square mask"))
}

/// Row-stochastic attention weights `softmax(QKᵀ/√d_k + bias)`, where
/// masked key columns receive a −1e9 bias.
pub fn attention_weights<S: Scalar>(g: &mut Graph<S>, q: Var, k: Var, mask: &[bool]) -> Result<Var> {
    let (tq, dq) = g.value(q).dims2();
    let (tk, dk) = g.value(k).dims2();
    if dq != dk {
        return Err(Error::dim(format!("attention: query width {dq} vs key width {dk}")));
    }
    if mask.len() != tk || tq != tk {
        return Err(Error::dim(format!(
            "attention: mask of length {} for {tq} queries and {tk} keys",
            mask.len()
        )));
    }
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, S::of(1.0 / (dk as f64).sqrt()));
    let scores = match mask_bias(mask) {
        Some(b) => {
            let b = g.constant(b);
            g.add(scores, b)?
        }
        None => scores,
    };
    g.softmax(scores, 1)
}

/// Scaled dot-product attention. Rows of masked query positions are zeroed.
pub fn attention<S: Scalar>(g: &mut Graph<S>, q: Var, k: Var, v: Var, mask: &[bool]) -> Result<Var> {
    let w = attention_weights(g, q, k, mask)?;
    let out = g.matmul(w, v)?;
    zero_masked_rows(g, out, mask)
}

fn zero_masked_rows<S: Scalar>(g: &mut Graph<S>, x: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&m| m) {
        return Ok(x);
    }
    let (_, c) = g.value(x).dims2();
    let m = mask
        .iter()
        .flat_map(|&m| std::iter::repeat_n(if m { S::one() } else { S::zero() }, c))
        .collect();
    g.mul_const(x, m)
}

/// `h` attention heads over linear projections of `x`, concatenated and
/// passed through the output projection.
pub fn multi_head<S: Scalar>(
    g: &mut Graph<S>,
    params: &Params<S>,
    prefix: &str,
    x: Var,
    num_heads: usize,
    mask: &[bool],
) -> Result<Var> {
    let (_, d) = g.value(x).dims2();
    if num_heads == 0 || d % num_heads != 0 {
        return Err(Error::dim(format!("multi_head: {num_heads} heads do not divide width {d}")));
    }
    let dk = d / num_heads;
    let q = linear(g, params, &format!("{prefix}.q"), x)?;
    let k = linear(g, params, &format!("{prefix}.k"), x)?;
    let v = linear(g, params, &format!("{prefix}.v"), x)?;
    let heads = if num_heads == 1 {
        vec![attention(g, q, k, v, mask)?]
    } else {
        let mut heads = Vec::with_capacity(num_heads);
        for h in 0..num_heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            heads.push(attention(g, qh, kh, vh, mask)?);
        }
        heads
    };
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    linear(g, params, &format!("{prefix}.o"), cat)
}

/// `y = LN(x + MHA(x))`, then `LN(y + FFN(y))` with a ReLU feed-forward.
pub fn transformer_block<S: Scalar>(
    g: &mut Graph<S>,
    params: &Params<S>,
    prefix: &str,
    x: Var,
    num_heads: usize,
    mask: &[bool],
) -> Result<Var> {
    let a = multi_head(g, params, prefix, x, num_heads, mask)?;
    let r = g.add(x, a)?;
    let y = layer_norm(g, params, &format!("{prefix}.ln1"), r)?;
    let h = linear(g, params, &format!("{prefix}.ff1"), y)?;
    let h = g.relu(h);
    let f = linear(g, params, &format!("{prefix}.ff2"), h)?;
    let r = g.add(y, f)?;
    layer_norm(g, params, &format!("{prefix}.ln2"), r)
}

fn layer_norm<S: Scalar>(g: &mut Graph<S>, params: &Params<S>, prefix: &str, x: Var) -> Result<Var> {
    let gain = g.param(params, &format!("{prefix}.g"))?;
    let bias = g.param(params, &format!("{prefix}.b"))?;
    g.layer_norm(x, gain, bias, LN_EPS)
}

/// Embeds `token_ids`, applies dropout and all blocks, recording each
/// layer's output. Sequences shorter than `max_seq_len` need no padding.
pub fn encode<S: Scalar>(
    g: &mut Graph<S>,
    params: &Params<S>,
    cfg: &EncoderConfig,
    token_ids: &[usize],
    mask: &[bool],
    mode: &mut Mode,
) -> Result<EncodedSequence> {
    let t = token_ids.len();
    if t == 0 || t > cfg.max_seq_len {
        return Err(Error::dim(format!(
            "encode: sequence length {t} outside 1..={}",
            cfg.max_seq_len
        )));
    }
    if mask.len() != t {
        return Err(Error::dim(format!("encode: mask length {} for {t} tokens", mask.len())));
    }
    if let Some(&bad) = token_ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::Index(format!(
            "encode: token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let tok = g.param(params, "enc.tok_emb")?;
    let pos = g.param(params, "enc.pos_emb")?;
    let te = g.gather_rows(tok, token_ids)?;
    let positions: Vec<usize> = (0..t).collect();
    let pe = g.gather_rows(pos, &positions)?;
    let x = g.add(te, pe)?;
    let mut x = dropout(g, x, cfg.dropout_rate, mode)?;
    let mut layer_states = Vec::with_capacity(cfg.num_layers + 1);
    layer_states.push(x);
    for l in 0..cfg.num_layers {
        x = transformer_block(g, params, &layer_prefix(l), x, cfg.num_heads, mask)?;
        layer_states.push(x);
    }
    Ok(EncodedSequence {
        layer_states,
        attention_mask: mask.to_vec(),
        token_ids: token_ids.to_vec(),
    })
}
