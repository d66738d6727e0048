use ndarray::{s, Array2};

use super::network::{bind, positional_encoding, semantic_decode_train};
use super::{ModelConfig, ParamSet};
use crate::autodiff::kernels::{attention, gather, layer_norm, linear};
use crate::autodiff::{AttentionSpec, Matrix, Tape};
use crate::corpus::{SentenceBatch, TokenSequence, END, PAD, START};
use crate::error::{Error, Result};

struct Projections<'a> {
    p: &'a ParamSet,
    prefix: String,
}

impl Projections<'_> {
    fn apply(&self, x: &Matrix, which: char) -> Matrix {
        let w = self.p.get(&format!("{}.w{which}", self.prefix));
        let b = self.p.get(&format!("{}.b{which}", self.prefix));
        linear(x, w, b)
    }
}

fn norm(p: &ParamSet, prefix: &str, x: &Matrix) -> Matrix {
    layer_norm(x, p.get(&format!("{prefix}.gamma")), p.get(&format!("{prefix}.beta"))).0
}

fn dense(p: &ParamSet, prefix: &str, x: &Matrix) -> Matrix {
    linear(x, p.get(&format!("{prefix}.w")), p.get(&format!("{prefix}.b")))
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy autoregressive decoding from the channel-decoded memory `memory`
/// (`[B * L_src, V]`). Each row starts at the start marker and stops at the
/// first end marker or after `max_len` slots. Self-attention keys and values
/// are cached per layer so every step costs one row per sentence.
pub fn semantic_decode_infer(config: &ModelConfig, delta: &ParamSet, memory: &Matrix, batch: usize, max_len: usize) -> Result<SentenceBatch> {
    if batch == 0 || memory.nrows() % batch != 0 || memory.ncols() != config.model_dim {
        return Err(Error::Shape(format!(
            "memory {:?} cannot split into {batch} sentences of width {}",
            memory.dim(),
            config.model_dim
        )));
    }
    if max_len < 2 {
        return Err(Error::Shape("decoding needs at least two slots".into()));
    }
    let d = config.model_dim;
    let memory = memory.as_standard_layout().to_owned();
    let pe = positional_encoding(max_len, d);
    let cross: Vec<(Matrix, Matrix)> = (0..config.layers)
        .map(|l| {
            let proj = Projections {
                p: delta,
                prefix: format!("layer{l}.cross_attn"),
            };
            (proj.apply(&memory, 'k'), proj.apply(&memory, 'v'))
        })
        .collect();
    let mut keys = vec![Array2::<f64>::zeros((batch * max_len, d)); config.layers];
    let mut values = keys.clone();
    let mut out = Array2::from_elem((batch, max_len), PAD);
    out.column_mut(0).fill(START);
    let mut finished = vec![false; batch];
    let full = AttentionSpec {
        batch,
        heads: config.heads,
        causal: false,
        key_mask: None,
    };

    for t in 0..max_len - 1 {
        let current: Vec<usize> = out.column(t).to_vec();
        let mut x = gather(delta.get("embed"), &current);
        x += &pe.row(t);
        for l in 0..config.layers {
            let proj = Projections {
                p: delta,
                prefix: format!("layer{l}.self_attn"),
            };
            let q = proj.apply(&x, 'q');
            let k = proj.apply(&x, 'k');
            let v = proj.apply(&x, 'v');
            for b in 0..batch {
                keys[l].row_mut(b * max_len + t).assign(&k.row(b));
                values[l].row_mut(b * max_len + t).assign(&v.row(b));
            }
            let span = t + 1;
            let gather_prefix = |cache: &Matrix| {
                let mut m = Array2::<f64>::zeros((batch * span, d));
                for b in 0..batch {
                    m.slice_mut(s![b * span..(b + 1) * span, ..])
                        .assign(&cache.slice(s![b * max_len..b * max_len + span, ..]));
                }
                m
            };
            let (a, _) = attention(&q, &gather_prefix(&keys[l]), &gather_prefix(&values[l]), &full);
            x = norm(delta, &format!("layer{l}.ln1"), &(&x + &proj.apply(&a, 'o')));

            let proj = Projections {
                p: delta,
                prefix: format!("layer{l}.cross_attn"),
            };
            let q = proj.apply(&x, 'q');
            let (a, _) = attention(&q, &cross[l].0, &cross[l].1, &full);
            x = norm(delta, &format!("layer{l}.ln2"), &(&x + &proj.apply(&a, 'o')));

            let h = dense(delta, &format!("layer{l}.ffn.1"), &x).mapv(|v| v.max(0.0));
            let f = dense(delta, &format!("layer{l}.ffn.2"), &h);
            x = norm(delta, &format!("layer{l}.ln3"), &(&x + &f));
        }
        let logits = dense(delta, "out", &x);
        for b in 0..batch {
            if finished[b] {
                continue;
            }
            let next = argmax(logits.row(b));
            out[[b, t + 1]] = next;
            finished[b] = next == END;
        }
        if finished.iter().all(|&f| f) {
            break;
        }
    }

    let seqs: Vec<TokenSequence> = out
        .rows()
        .into_iter()
        .map(|r| TokenSequence::from_decoded(&r.to_vec(), max_len))
        .collect();
    let refs: Vec<&TokenSequence> = seqs.iter().collect();
    SentenceBatch::from_sequences(&refs)
}

/// Teacher-forced decoder logits without gradient tracking.
pub fn teacher_forced_logits(config: &ModelConfig, delta: &ParamSet, memory: &Matrix, inputs: &SentenceBatch) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, delta, false);
    let mem = tape.leaf(memory.clone(), false);
    let logits = semantic_decode_train(&mut tape, config, &bound, mem, inputs)?;
    Ok(tape.value(logits).clone())
}
