use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::ModelConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::corpus::MiniBatch;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;

/// Whether dropout is active during a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    fn dropout(&mut self, tape: &mut Tape, x: Var, p: f64) -> Var {
        match self {
            Mode::Eval => x,
            Mode::Train(rng) => tape.dropout(x, p, *rng),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Embedding,
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

/// Flat parameter list of an encoder–decoder transformer.
///
/// Index 0 is the single embedding table, used for source tokens, target
/// tokens and (transposed) as the output projection. There is no separate
/// projection matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqModel {
    config: ModelConfig,
    vocab_hash: u64,
    names: Vec<String>,
    params: Vec<Tensor>,
}

const EMBEDDING: usize = 0;
const ATTN_PARAMS: usize = 8;
const ENC_LAYER_PARAMS: usize = 2 + ATTN_PARAMS + 2 + 4;
const DEC_LAYER_PARAMS: usize = 2 + ATTN_PARAMS + 2 + ATTN_PARAMS + 2 + 4;

fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.hidden_size;
    let f = config.ffn_size;
    let mut out = vec![("embedding".to_string(), vec![config.vocab_size, d], Init::Embedding)];
    let ln = |out: &mut Vec<_>, p: &str| {
        out.push((format!("{p}.gamma"), vec![d], Init::Ones));
        out.push((format!("{p}.beta"), vec![d], Init::Zeros));
    };
    let attn = |out: &mut Vec<_>, p: &str| {
        for w in ["q", "k", "v", "o"] {
            out.push((format!("{p}.w{w}"), vec![d, d], Init::Xavier { fan_in: d, fan_out: d }));
            out.push((format!("{p}.b{w}"), vec![d], Init::Zeros));
        }
    };
    let ffn = |out: &mut Vec<_>, p: &str| {
        out.push((format!("{p}.w1"), vec![d, f], Init::Xavier { fan_in: d, fan_out: f }));
        out.push((format!("{p}.b1"), vec![f], Init::Zeros));
        out.push((format!("{p}.w2"), vec![f, d], Init::Xavier { fan_in: f, fan_out: d }));
        out.push((format!("{p}.b2"), vec![d], Init::Zeros));
    };
    for l in 0..config.num_layers {
        let p = format!("encoder.{l}");
        ln(&mut out, &format!("{p}.ln_attn"));
        attn(&mut out, &format!("{p}.self_attn"));
        ln(&mut out, &format!("{p}.ln_ffn"));
        ffn(&mut out, &format!("{p}.ffn"));
    }
    for l in 0..config.num_layers {
        let p = format!("decoder.{l}");
        ln(&mut out, &format!("{p}.ln_self"));
        attn(&mut out, &format!("{p}.self_attn"));
        ln(&mut out, &format!("{p}.ln_cross"));
        attn(&mut out, &format!("{p}.cross_attn"));
        ln(&mut out, &format!("{p}.ln_ffn"));
        ffn(&mut out, &format!("{p}.ffn"));
    }
    ln(&mut out, "encoder.ln_final");
    ln(&mut out, "decoder.ln_final");
    out
}

/// Sinusoidal position table `[len, d]`.
fn positions(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d / 2 {
            let freq = (-(10000f64.ln()) * (2 * i) as f64 / d as f64).exp();
            pe[pos * d + 2 * i] = (pos as f64 * freq).sin();
            pe[pos * d + 2 * i + 1] = (pos as f64 * freq).cos();
        }
    }
    pe
}

struct Attn {
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
}

impl Attn {
    fn from(v: &[Var]) -> Self {
        Self {
            wq: v[0],
            bq: v[1],
            wk: v[2],
            bk: v[3],
            wv: v[4],
            bv: v[5],
            wo: v[6],
            bo: v[7],
        }
    }
}

impl Seq2SeqModel {
    /// Random initialization, deterministic in `seed`.
    ///
    /// Projections are Xavier-uniform, the embedding table is
    /// `N(0, hidden^-1/2)`, biases start at zero and layer-norm gains at one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = Normal::new(0.0, (config.hidden_size as f64).powf(-0.5)).expect("finite std");
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, init) in layout(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match init {
                Init::Embedding => (0..n).map(|_| emb.sample(&mut rng)).collect(),
                Init::Xavier { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let u = Uniform::new_inclusive(-a, a);
                    (0..n).map(|_| u.sample(&mut rng)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Self {
            config,
            vocab_hash: 0,
            names,
            params,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, vocab_hash: u64, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let lay = layout(&config);
        if lay.len() != params.len() || lay.iter().zip(&params).any(|((_, s, _), p)| s.as_slice() != p.shape()) {
            return Err(Error::Contract("parameter shapes do not match the config".into()));
        }
        Ok(Self {
            config,
            vocab_hash,
            names: lay.into_iter().map(|(n, _, _)| n).collect(),
            params,
        })
    }

    /// Number of parameter values implied by `config`.
    pub fn expected_param_count(config: &ModelConfig) -> usize {
        Self::checked_param_count(config).unwrap_or(usize::MAX)
    }

    /// Closed-form parameter count; `None` on overflow.
    pub(crate) fn checked_param_count(config: &ModelConfig) -> Option<usize> {
        let (d, f, l, v) = (config.hidden_size, config.ffn_size, config.num_layers, config.vocab_size);
        let attn = d.checked_mul(d)?.checked_add(d)?.checked_mul(4)?;
        let ffn = d.checked_mul(f)?.checked_mul(2)?.checked_add(f)?.checked_add(d)?;
        let ln = d.checked_mul(2)?;
        let encoder = ln.checked_mul(2)?.checked_add(attn)?.checked_add(ffn)?;
        let decoder = ln.checked_mul(3)?.checked_add(attn.checked_mul(2)?)?.checked_add(ffn)?;
        v.checked_mul(d)?
            .checked_add(l.checked_mul(encoder.checked_add(decoder)?)?)?
            .checked_add(ln.checked_mul(2)?)
    }

    pub fn with_vocab_hash(mut self, hash: u64) -> Self {
        self.vocab_hash = hash;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_hash(&self) -> u64 {
        self.vocab_hash
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn embedding(&self) -> &Tensor {
        &self.params[EMBEDDING]
    }

    pub fn embedding_mut(&mut self) -> &mut Tensor {
        &mut self.params[EMBEDDING]
    }

    /// The output projection; the same storage as [`Self::embedding`].
    pub fn output_projection(&self) -> &Tensor {
        &self.params[EMBEDDING]
    }

    /// SHA-256 prefix over every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.params {
            for v in p.data() {
                h.update(v.to_le_bytes());
            }
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("32-byte digest"))
    }

    /// Puts every parameter on `tape`, as trainable leaves or as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    fn check_batch(&self, batch: &MiniBatch) -> Result<()> {
        let max = self.config.max_positions;
        for len in [batch.src_len, batch.tgt_len] {
            if len > max {
                return Err(Error::Length { len, max });
            }
        }
        let v = self.config.vocab_size;
        if let Some(&bad) = batch.src_ids.iter().chain(&batch.tgt_in_ids).find(|&&id| id >= v) {
            return Err(Error::Contract(format!("token id {bad} >= vocab_size {v}")));
        }
        Ok(())
    }

    /// Teacher-forced logits `[batch, tgt_len, vocab]`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &MiniBatch, mut mode: Mode) -> Result<Var> {
        self.check_batch(batch)?;
        let memory = self.encode(tape, vars, batch, &mut mode)?;
        self.decode(tape, vars, memory, batch, &batch.tgt_in_ids, batch.tgt_len, &mut mode)
    }

    /// Logits in evaluation mode on a private tape.
    pub fn logits(&self, batch: &MiniBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let out = self.forward(&mut tape, &vars, batch, Mode::Eval)?;
        Ok(tape.value(out).clone())
    }

    fn embed(&self, tape: &mut Tape, table: Var, ids: &[usize], b: usize, len: usize, mode: &mut Mode) -> Result<Var> {
        let d = self.config.hidden_size;
        let e = tape.embedding(table, ids, &[b, len])?;
        let e = tape.scale(e, (d as f64).sqrt());
        let pe = positions(len, d);
        let tiled: Vec<f64> = (0..b).flat_map(|_| pe.iter().copied()).collect();
        let pe = tape.constant(Tensor::new(vec![b, len, d], tiled)?);
        let x = tape.add(e, pe)?;
        Ok(mode.dropout(tape, x, self.config.dropout_rate))
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = tape.matmul(x, w, false)?;
        tape.add_bias(y, b)
    }

    fn attention(&self, tape: &mut Tape, p: &Attn, query: Var, kv: Var, mask: Var) -> Result<Var> {
        let h = self.config.num_heads;
        let dh = self.config.head_dim();
        let d = self.config.hidden_size;
        let (b, tq) = (tape.shape(query)[0], tape.shape(query)[1]);
        let tk = tape.shape(kv)[1];
        let heads = |tape: &mut Tape, x: Var, len: usize, w: Var, bias: Var| -> Result<Var> {
            let y = self.linear(tape, x, w, bias)?;
            let y = tape.reshape(y, &[b, len, h, dh])?;
            tape.permute(y, &[0, 2, 1, 3])
        };
        let q = heads(tape, query, tq, p.wq, p.bq)?;
        let k = heads(tape, kv, tk, p.wk, p.bk)?;
        let v = heads(tape, kv, tk, p.wv, p.bv)?;
        let scores = tape.matmul(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let scores = tape.add(scores, mask)?;
        let attn = tape.softmax(scores, 3)?;
        let ctx = tape.matmul(attn, v, false)?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[b, tq, d])?;
        self.linear(tape, ctx, p.wo, p.bo)
    }

    fn ffn(&self, tape: &mut Tape, x: Var, v: &[Var]) -> Result<Var> {
        let hdn = self.linear(tape, x, v[0], v[1])?;
        let hdn = tape.relu(hdn);
        self.linear(tape, hdn, v[2], v[3])
    }

    /// Additive mask `[b, heads, tq, tk]` hiding padded keys.
    fn key_padding_mask(&self, key_mask: &[bool], b: usize, tq: usize, tk: usize) -> Result<Tensor> {
        let h = self.config.num_heads;
        let mut m = Vec::with_capacity(b * h * tq * tk);
        for bi in 0..b {
            let row: Vec<f64> = key_mask[bi * tk..(bi + 1) * tk]
                .iter()
                .map(|&valid| if valid { 0.0 } else { MASKED })
                .collect();
            for _ in 0..h * tq {
                m.extend_from_slice(&row);
            }
        }
        Tensor::new(vec![b, h, tq, tk], m)
    }

    fn causal_mask(&self, b: usize, t: usize) -> Result<Tensor> {
        let h = self.config.num_heads;
        let mut m = Vec::with_capacity(b * h * t * t);
        for _ in 0..b * h {
            for q in 0..t {
                m.extend((0..t).map(|k| if k <= q { 0.0 } else { MASKED }));
            }
        }
        Tensor::new(vec![b, h, t, t], m)
    }

    /// Encoder states `[batch, src_len, hidden]`.
    fn encode(&self, tape: &mut Tape, vars: &[Var], batch: &MiniBatch, mode: &mut Mode) -> Result<Var> {
        let (b, s) = (batch.batch_size, batch.src_len);
        let p = self.config.dropout_rate;
        let mut x = self.embed(tape, vars[EMBEDDING], &batch.src_ids, b, s, mode)?;
        let mask = self.key_padding_mask(&batch.src_mask, b, s, s)?;
        let mask = tape.constant(mask);
        for l in 0..self.config.num_layers {
            let v = &vars[1 + l * ENC_LAYER_PARAMS..1 + (l + 1) * ENC_LAYER_PARAMS];
            let h = tape.layer_norm(x, v[0], v[1], LN_EPS)?;
            let h = self.attention(tape, &Attn::from(&v[2..10]), h, h, mask)?;
            let h = mode.dropout(tape, h, p);
            x = tape.add(x, h)?;
            let h = tape.layer_norm(x, v[10], v[11], LN_EPS)?;
            let h = self.ffn(tape, h, &v[12..16])?;
            let h = mode.dropout(tape, h, p);
            x = tape.add(x, h)?;
        }
        let fin = 1 + self.config.num_layers * (ENC_LAYER_PARAMS + DEC_LAYER_PARAMS);
        tape.layer_norm(x, vars[fin], vars[fin + 1], LN_EPS)
    }

    #[allow(clippy::too_many_arguments)]
    fn decode(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        memory: Var,
        batch: &MiniBatch,
        tgt_in: &[usize],
        t: usize,
        mode: &mut Mode,
    ) -> Result<Var> {
        let (b, s) = (batch.batch_size, batch.src_len);
        let p = self.config.dropout_rate;
        let mut y = self.embed(tape, vars[EMBEDDING], tgt_in, b, t, mode)?;
        let causal = self.causal_mask(b, t)?;
        let causal = tape.constant(causal);
        let cross = self.key_padding_mask(&batch.src_mask, b, t, s)?;
        let cross = tape.constant(cross);
        let base = 1 + self.config.num_layers * ENC_LAYER_PARAMS;
        for l in 0..self.config.num_layers {
            let v = &vars[base + l * DEC_LAYER_PARAMS..base + (l + 1) * DEC_LAYER_PARAMS];
            let h = tape.layer_norm(y, v[0], v[1], LN_EPS)?;
            let h = self.attention(tape, &Attn::from(&v[2..10]), h, h, causal)?;
            let h = mode.dropout(tape, h, p);
            y = tape.add(y, h)?;
            let h = tape.layer_norm(y, v[10], v[11], LN_EPS)?;
            let h = self.attention(tape, &Attn::from(&v[12..20]), h, memory, cross)?;
            let h = mode.dropout(tape, h, p);
            y = tape.add(y, h)?;
            let h = tape.layer_norm(y, v[20], v[21], LN_EPS)?;
            let h = self.ffn(tape, h, &v[22..26])?;
            let h = mode.dropout(tape, h, p);
            y = tape.add(y, h)?;
        }
        let fin = 1 + self.config.num_layers * (ENC_LAYER_PARAMS + DEC_LAYER_PARAMS) + 2;
        let y = tape.layer_norm(y, vars[fin], vars[fin + 1], LN_EPS)?;
        tape.matmul(y, vars[EMBEDDING], true)
    }

    /// Greedy decoding for every source sentence in `batch`.
    ///
    /// Each output stops at EOS (not included) or after `max_len` tokens;
    /// the flag reports truncation. Ties go to the lowest token id.
    pub fn greedy_decode_batch(&self, batch: &MiniBatch, max_len: usize) -> Result<Vec<(Vec<usize>, bool)>> {
        self.check_batch(batch)?;
        let b = batch.batch_size;
        let v = self.config.vocab_size;
        let max_len = max_len.min(self.config.max_positions);
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let memory = self.encode(&mut tape, &vars, batch, &mut Mode::Eval)?;
        let mut prefixes: Vec<Vec<usize>> = vec![vec![crate::corpus::BOS]; b];
        let mut done = vec![false; b];
        let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); b];
        for step in 0..max_len {
            if done.iter().all(|&d| d) {
                break;
            }
            let t = step + 1;
            let ids: Vec<usize> = prefixes.iter().flatten().copied().collect();
            let logits = self.decode(&mut tape, &vars, memory, batch, &ids, t, &mut Mode::Eval)?;
            let lv = tape.value(logits).data();
            for bi in 0..b {
                let row = &lv[(bi * t + step) * v..(bi * t + step + 1) * v];
                let best = argmax(row);
                prefixes[bi].push(best);
                if !done[bi] {
                    if best == crate::corpus::EOS {
                        done[bi] = true;
                    } else {
                        outputs[bi].push(best);
                    }
                }
            }
        }
        Ok(outputs.into_iter().zip(done).map(|(o, d)| (o, !d)).collect())
    }

    /// Greedy decoding of a single source sentence.
    pub fn greedy_decode(&self, src: &[usize], max_len: usize) -> Result<(Vec<usize>, bool)> {
        let pair = crate::corpus::SentencePair {
            src: src.to_vec(),
            tgt: vec![crate::corpus::UNK],
        };
        let batch = MiniBatch::from_pairs(&[&pair], vec![0])?;
        Ok(self.greedy_decode_batch(&batch, max_len)?.remove(0))
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}
