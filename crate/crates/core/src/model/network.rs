use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

use super::{Collection, ModelConfig, ParamSet, ParameterBundle};
use crate::autodiff::{AttentionSpec, Matrix, Tape, Var};
use crate::channel::{sample_noise, ChannelRealization, Receiver, SymbolBlock, MIN_FADING_MAGNITUDE};
use crate::corpus::{SentenceBatch, PAD};
use crate::error::{Error, Result};

/// A parameter collection placed on a tape as leaves.
pub struct BoundSet {
    vars: BTreeMap<String, Var>,
}

impl BoundSet {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Places every tensor of `set` on the tape; `track` controls whether the
/// leaves collect gradients.
pub fn bind(tape: &mut Tape, set: &ParamSet, track: bool) -> BoundSet {
    let vars = set
        .tensors
        .iter()
        .map(|(k, m)| (k.clone(), tape.leaf(m.clone(), track)))
        .collect();
    BoundSet { vars }
}

pub(crate) fn positional_encoding(len: usize, d: usize) -> Matrix {
    Array2::from_shape_fn((len, d), |(pos, i)| {
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 / rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn tiled_positions(batch: usize, len: usize, d: usize) -> Matrix {
    let pe = positional_encoding(len, d);
    Array2::from_shape_fn((batch * len, d), |(r, c)| pe[[r % len, c]])
}

fn check_batch(config: &ModelConfig, batch: &SentenceBatch) -> Result<()> {
    if batch.slots() != config.max_len {
        return Err(Error::Shape(format!(
            "batch has {} slots, model expects {}",
            batch.slots(),
            config.max_len
        )));
    }
    if let Some(&bad) = batch.ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::Shape(format!("token id {bad} outside vocabulary of {}", config.vocab_size)));
    }
    Ok(())
}

fn dense(tape: &mut Tape, p: &BoundSet, prefix: &str, x: Var) -> Var {
    tape.linear(x, p.get(&format!("{prefix}.w")), p.get(&format!("{prefix}.b")))
}

fn attention_block(tape: &mut Tape, p: &BoundSet, prefix: &str, query: Var, memory: Var, spec: AttentionSpec) -> Var {
    let q = tape.linear(query, p.get(&format!("{prefix}.wq")), p.get(&format!("{prefix}.bq")));
    let k = tape.linear(memory, p.get(&format!("{prefix}.wk")), p.get(&format!("{prefix}.bk")));
    let v = tape.linear(memory, p.get(&format!("{prefix}.wv")), p.get(&format!("{prefix}.bv")));
    let a = tape.attention(q, k, v, spec);
    tape.linear(a, p.get(&format!("{prefix}.wo")), p.get(&format!("{prefix}.bo")))
}

fn residual_norm(tape: &mut Tape, p: &BoundSet, prefix: &str, x: Var, update: Var) -> Var {
    let s = tape.add(x, update);
    tape.layer_norm(s, p.get(&format!("{prefix}.gamma")), p.get(&format!("{prefix}.beta")))
}

fn feed_forward(tape: &mut Tape, p: &BoundSet, prefix: &str, x: Var) -> Var {
    let h = dense(tape, p, &format!("{prefix}.1"), x);
    let h = tape.relu(h);
    dense(tape, p, &format!("{prefix}.2"), h)
}

/// Embedding, positions and `layers` encoder blocks; pad rows of the output
/// are zeroed. Returns `[B * L, V]`.
pub fn semantic_encode(tape: &mut Tape, config: &ModelConfig, alpha: &BoundSet, batch: &SentenceBatch) -> Result<Var> {
    check_batch(config, batch)?;
    let (b, l) = batch.ids.dim();
    let ids = batch.flat_ids();
    let keep: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
    let emb = tape.gather(alpha.get("embed"), &ids);
    let mut x = tape.add_const(emb, &tiled_positions(b, l, config.model_dim));
    for layer in 0..config.layers {
        let spec = AttentionSpec {
            batch: b,
            heads: config.heads,
            causal: false,
            key_mask: Some(keep.clone()),
        };
        let a = attention_block(tape, alpha, &format!("layer{layer}.attn"), x, x, spec);
        x = residual_norm(tape, alpha, &format!("layer{layer}.ln1"), x, a);
        let f = feed_forward(tape, alpha, &format!("layer{layer}.ffn"), x);
        x = residual_norm(tape, alpha, &format!("layer{layer}.ln2"), x, f);
    }
    Ok(tape.mask_rows(x, &keep))
}

/// Dense `V -> hidden -> N` map followed by batch power normalization.
pub fn channel_encode(tape: &mut Tape, beta: &BoundSet, semantic: Var) -> Var {
    let h = dense(tape, beta, "dense1", semantic);
    let h = tape.relu(h);
    let x = dense(tape, beta, "dense2", h);
    tape.power_normalize(x)
}

/// Sends the normalized block `x` through `sqrt(P) h x + w` and equalizes
/// with the receiver's own coefficient. Consumes one noise draw from `rng`.
pub fn receive<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    batch: usize,
    h: Complex64,
    power: f64,
    noise_watts: f64,
    rng: &mut R,
) -> Result<Var> {
    if h.norm() < MIN_FADING_MAGNITUDE {
        return Err(Error::DegenerateChannel(h.norm()));
    }
    let (rows, cols) = tape.value(x).dim();
    if batch == 0 || rows % batch != 0 {
        return Err(Error::Shape(format!("{rows} symbol rows for a batch of {batch}")));
    }
    let per_sentence = rows / batch * cols / 2;
    let noise = SymbolBlock::new(sample_noise(batch, per_sentence, noise_watts, rng)).to_real(cols)?;
    let gain = h * power.sqrt();
    let y = tape.complex_scale(x, gain);
    let y = tape.add_const(y, &noise);
    Ok(tape.complex_scale(y, gain.inv()))
}

/// Dense `N -> hidden -> V` map.
pub fn channel_decode(tape: &mut Tape, chi: &BoundSet, received: Var) -> Var {
    let h = dense(tape, chi, "dense1", received);
    let h = tape.relu(h);
    dense(tape, chi, "dense2", h)
}

/// Causal Transformer decoder over the channel-decoded memory with teacher
/// forcing. `inputs` is the target sentence itself, whose slot 0 holds the
/// start marker; row `t` of the output scores the token in slot `t + 1`.
pub fn semantic_decode_train(
    tape: &mut Tape,
    config: &ModelConfig,
    delta: &BoundSet,
    memory: Var,
    inputs: &SentenceBatch,
) -> Result<Var> {
    check_batch(config, inputs)?;
    let (b, l) = inputs.ids.dim();
    if tape.value(memory).dim() != (b * l, config.model_dim) {
        return Err(Error::Shape(format!(
            "memory {:?} does not match a [{}, {}] decoder input",
            tape.value(memory).dim(),
            b * l,
            config.model_dim
        )));
    }
    let emb = tape.gather(delta.get("embed"), &inputs.flat_ids());
    let mut x = tape.add_const(emb, &tiled_positions(b, l, config.model_dim));
    for layer in 0..config.layers {
        let causal = AttentionSpec {
            batch: b,
            heads: config.heads,
            causal: true,
            key_mask: None,
        };
        let a = attention_block(tape, delta, &format!("layer{layer}.self_attn"), x, x, causal);
        x = residual_norm(tape, delta, &format!("layer{layer}.ln1"), x, a);
        let cross = AttentionSpec {
            batch: b,
            heads: config.heads,
            causal: false,
            key_mask: None,
        };
        let c = attention_block(tape, delta, &format!("layer{layer}.cross_attn"), x, memory, cross);
        x = residual_norm(tape, delta, &format!("layer{layer}.ln2"), x, c);
        let f = feed_forward(tape, delta, &format!("layer{layer}.ffn"), x);
        x = residual_norm(tape, delta, &format!("layer{layer}.ln3"), x, f);
    }
    Ok(dense(tape, delta, "out", x))
}

pub struct ForwardOutput {
    /// `[B * L, vocab]` next-token scores.
    pub logits: Matrix,
    /// Normalized real symbols `[B * L, N]` as transmitted.
    pub transmitted: Matrix,
}

/// End-to-end teacher-forced pass for one receiver on a fresh tape.
pub fn forward<R: Rng + ?Sized>(
    batch: &SentenceBatch,
    bundle: &ParameterBundle,
    realization: &ChannelRealization,
    receiver: Receiver,
    rng: &mut R,
) -> Result<ForwardOutput> {
    realization.validate()?;
    let config = &bundle.config;
    let (chi, delta) = match receiver {
        Receiver::Bob => (Collection::ChiBob, Collection::DeltaBob),
        Receiver::Eve => (Collection::ChiEve, Collection::DeltaEve),
    };
    let mut tape = Tape::new();
    let alpha = bind(&mut tape, bundle.set(Collection::Alpha), false);
    let beta = bind(&mut tape, bundle.set(Collection::Beta), false);
    let chi = bind(&mut tape, bundle.set(chi), false);
    let delta = bind(&mut tape, bundle.set(delta), false);
    let m = semantic_encode(&mut tape, config, &alpha, batch)?;
    let x = channel_encode(&mut tape, &beta, m);
    let y = receive(
        &mut tape,
        x,
        batch.batch_size(),
        realization.fading(receiver),
        realization.power,
        realization.noise,
        rng,
    )?;
    let mhat = channel_decode(&mut tape, &chi, y);
    let logits = semantic_decode_train(&mut tape, config, &delta, mhat, batch)?;
    Ok(ForwardOutput {
        logits: tape.value(logits).clone(),
        transmitted: tape.value(x).clone(),
    })
}
