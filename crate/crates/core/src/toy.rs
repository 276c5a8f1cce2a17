//! A small decoder-only transformer with random, untrained weights.
//!
//! Each block is `h' = h + attention(norm(h)) + mlp(norm(h))`, so the
//! recorded block output is exactly the residual stream the estimators are
//! meant to see. Layer index `l` in a store is the output of block `l`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;
use crate::types::{RepresentationStore, StoreDims, StoreMode};

pub const WEIGHTS_MAGIC: &[u8; 6] = b"TOYW1\0";
pub const WEIGHTS_VERSION: u16 = 1;

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub vocab_size: usize,
    /// Hidden width of each block's MLP.
    pub mlp_width: usize,
    pub seed: u64,
}

impl ToyModelConfig {
    /// `L = 4`, `D = 64`, four heads, MLP width `4D`.
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self {
            layers: 4,
            width: 64,
            heads: 4,
            vocab_size,
            mlp_width: 256,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::InvalidArgument("the model needs at least 2 blocks".into()));
        }
        if self.heads == 0 || self.width == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.vocab_size == 0 || self.mlp_width == 0 {
            return Err(Error::InvalidArgument(
                "vocab_size and mlp_width must be positive".into(),
            ));
        }
        Ok(())
    }

    fn param_count(&self) -> usize {
        let (d, f) = (self.width, self.mlp_width);
        self.vocab_size * d + self.layers * (4 * d * d + d * f + f + f * d + d)
    }
}

struct Block {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

pub struct ToyModel {
    config: ToyModelConfig,
    /// Flat parameters in storage precision; the arrays below are widened copies.
    params: Vec<f32>,
    embed: Array2<f64>,
    blocks: Vec<Block>,
}

impl ToyModel {
    /// Random weights: embeddings uniform with unit variance, projections
    /// uniform with variance `1 / fan_in`, biases zero.
    pub fn new(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, f) = (config.width, config.mlp_width);
        let mut params = Vec::with_capacity(config.param_count());
        let mut uniform = |n: usize, fan_in: usize, params: &mut Vec<f32>| {
            let a = (3.0 / fan_in as f64).sqrt();
            params.extend((0..n).map(|_| rng.random_range(-a..a) as f32));
        };
        uniform(config.vocab_size * d, 1, &mut params);
        for _ in 0..config.layers {
            uniform(4 * d * d, d, &mut params);
            uniform(d * f, d, &mut params);
            params.extend(std::iter::repeat_n(0.0, f));
            uniform(f * d, f, &mut params);
            params.extend(std::iter::repeat_n(0.0, d));
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: ToyModelConfig, params: Vec<f32>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        let (d, f) = (config.width, config.mlp_width);
        let mut at = 0;
        let mut take = |rows: usize, cols: usize| {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| params[at + i * cols + j] as f64);
            at += rows * cols;
            m
        };
        let embed = take(config.vocab_size, d);
        let blocks = (0..config.layers)
            .map(|_| Block {
                wq: take(d, d),
                wk: take(d, d),
                wv: take(d, d),
                wo: take(d, d),
                w1: take(d, f),
                b1: take(1, f).remove_axis(Axis(0)),
                w2: take(f, d),
                b2: take(1, d).remove_axis(Axis(0)),
            })
            .collect();
        Ok(Self {
            config,
            params,
            embed,
            blocks,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    /// First 16 hex digits of the SHA-256 of the little-endian weights.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Block outputs for one sequence: `L` matrices of shape `T × D`.
    pub fn forward(&self, ids: &[u32]) -> Result<Vec<Array2<f64>>> {
        let mut h = self.embed_ids(ids)?;
        let mut out = Vec::with_capacity(self.config.layers);
        for block in &self.blocks {
            let (attn, mlp) = self.block_terms(block, h.view());
            h = &h + &(attn + mlp);
            out.push(h.clone());
        }
        Ok(out)
    }

    /// `(attention(norm(h)), mlp(norm(h)))` for block `layer`.
    pub fn residual_terms(&self, layer: usize, h: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let block = self
            .blocks
            .get(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("block {layer} out of range")))?;
        Ok(self.block_terms(block, h))
    }

    pub fn embed_ids(&self, ids: &[u32]) -> Result<Array2<f64>> {
        let d = self.config.width;
        let mut h = Array2::zeros((ids.len(), d));
        for (t, &id) in ids.iter().enumerate() {
            if id as usize >= self.config.vocab_size {
                return Err(Error::UnknownToken(format!(
                    "id {id} (vocab size {})",
                    self.config.vocab_size
                )));
            }
            let mut row = h.row_mut(t);
            row.assign(&self.embed.row(id as usize));
            for i in 0..d {
                let freq = 1.0 / 10_000f64.powf((i / 2 * 2) as f64 / d as f64);
                let angle = t as f64 * freq;
                row[i] += if i % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
        Ok(h)
    }

    fn block_terms(&self, b: &Block, h: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let n = layer_norm(h);
        let attn = causal_attention(&n, b, self.config.heads).dot(&b.wo);
        let mut hidden = n.dot(&b.w1) + &b.b1;
        hidden.mapv_inplace(gelu);
        let mlp = hidden.dot(&b.w2) + &b.b2;
        (attn, mlp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let c = &self.config;
        let mut header = Vec::with_capacity(64);
        header.extend_from_slice(WEIGHTS_MAGIC);
        header.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        for v in [c.layers, c.width, c.heads, c.vocab_size, c.mlp_width] {
            header.extend_from_slice(&(v as u64).to_le_bytes());
        }
        header.extend_from_slice(&c.seed.to_le_bytes());
        header.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        w.write_all(&header).map_err(|e| Error::io(path, e))?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        w.get_ref().sync_all().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        const HEADER: usize = 6 + 2 + 7 * 8;
        if bytes.len() < 6 || &bytes[..6] != WEIGHTS_MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER {
            return Err(Error::Truncated {
                expected: HEADER as u64,
                found: bytes.len() as u64,
            });
        }
        let version = u16::from_le_bytes([bytes[6], bytes[7]]);
        if version != WEIGHTS_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: WEIGHTS_VERSION,
            });
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes"));
        let config = ToyModelConfig {
            layers: word(0) as usize,
            width: word(1) as usize,
            heads: word(2) as usize,
            vocab_size: word(3) as usize,
            mlp_width: word(4) as usize,
            seed: word(5),
        };
        let count = word(6) as usize;
        let expected = HEADER as u64 + 4 * count as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::Truncated {
                expected,
                found: bytes.len() as u64,
            });
        }
        let params = bytes[HEADER..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::from_params(config, params)
    }
}

fn layer_norm(h: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = h.to_owned();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Multi-head attention where position `t` attends to positions `0..=t`.
fn causal_attention(n: &Array2<f64>, b: &Block, heads: usize) -> Array2<f64> {
    let (q, k, v) = (n.dot(&b.wq), n.dot(&b.wk), n.dot(&b.wv));
    let (tokens, d) = q.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((tokens, d));
    let mut weights = vec![0.0; tokens];
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
        for t in 0..tokens {
            let qt = qh.row(t);
            for (s, w) in weights[..=t].iter_mut().enumerate() {
                *w = qt.dot(&kh.row(s)) * scale;
            }
            let max = weights[..=t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for w in &mut weights[..=t] {
                *w = (*w - max).exp();
                total += *w;
            }
            let mut dst = out.slice_mut(s![t, h * dh..(h + 1) * dh]);
            for (s, w) in weights[..=t].iter().enumerate() {
                dst.scaled_add(w / total, &vh.row(s));
            }
        }
    }
    out
}

/// Which positions a micro store covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicroPositions {
    All,
    FirstEntity,
    Set(Vec<usize>),
}

impl MicroPositions {
    pub fn resolve(&self, tokens: usize) -> Result<Vec<usize>> {
        let positions = match self {
            MicroPositions::All => (0..tokens).collect(),
            MicroPositions::FirstEntity => vec![0],
            MicroPositions::Set(v) => v.clone(),
        };
        if positions.is_empty() {
            return Err(Error::InvalidArgument("no micro positions requested".into()));
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= tokens) {
            return Err(Error::InvalidArgument(format!(
                "position {p} out of range for T = {tokens}"
            )));
        }
        Ok(positions)
    }
}

impl FromStr for MicroPositions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(MicroPositions::All),
            "first_entity" => Ok(MicroPositions::FirstEntity),
            list => list
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad position list {list:?}")))
                })
                .collect::<Result<Vec<usize>>>()
                .map(MicroPositions::Set),
        }
    }
}

fn encode_corpus(vocab: &Vocabulary, lines: &[String]) -> Result<Vec<Vec<u32>>> {
    let encoded = lines.iter().map(|l| vocab.encode(l)).collect::<Result<Vec<_>>>()?;
    let tokens = encoded.first().map_or(0, Vec::len);
    if tokens == 0 {
        return Err(Error::InvalidArgument("corpus is empty".into()));
    }
    if let Some(i) = encoded.iter().position(|e| e.len() != tokens) {
        return Err(Error::Shape(format!(
            "line {} has {} tokens, expected {tokens}",
            i + 1,
            encoded[i].len()
        )));
    }
    Ok(encoded)
}

fn source_id(model: &ToyModel, vocab: &Vocabulary, positions: Option<&[usize]>) -> String {
    let c = model.config();
    let mut id = format!(
        "toy-transformer;L={};D={};heads={};seed={};weights={};tokenizer={}",
        c.layers,
        c.width,
        c.heads,
        c.seed,
        model.fingerprint(),
        vocab.fingerprint()
    );
    if let Some(p) = positions {
        let list: Vec<String> = p.iter().map(usize::to_string).collect();
        id.push_str(&format!(";positions={}", list.join(",")));
    }
    id
}

/// Full-context representations of every token: dims `(S, L, T, D)`.
pub fn run_macro(model: &ToyModel, vocab: &Vocabulary, lines: &[String]) -> Result<RepresentationStore> {
    let encoded = encode_corpus(vocab, lines)?;
    let c = model.config();
    let (samples, tokens, d) = (encoded.len(), encoded[0].len(), c.width);
    let dims = StoreDims::new(samples, c.layers, tokens, d);
    let mut store = RepresentationStore::zeros(dims, StoreMode::Macro, source_id(model, vocab, None));
    for (row, ids) in encoded.iter().enumerate() {
        let states = model.forward(ids)?;
        for (l, h) in states.iter().enumerate() {
            for t in 0..tokens {
                let mut slice = store.slice_mut(l, t)?;
                for (dst, &v) in slice.row_mut(row).iter_mut().zip(h.row(t)) {
                    *dst = v as f32;
                }
            }
        }
    }
    Ok(store)
}

/// Lone-token representations: store token `j` holds position
/// `positions[j]`, computed by running that token as the whole input.
pub fn run_micro(
    model: &ToyModel,
    vocab: &Vocabulary,
    lines: &[String],
    positions: &MicroPositions,
) -> Result<RepresentationStore> {
    let encoded = encode_corpus(vocab, lines)?;
    let positions = positions.resolve(encoded[0].len())?;
    let c = model.config();
    let dims = StoreDims::new(encoded.len(), c.layers, positions.len(), c.width);
    let mut store = RepresentationStore::zeros(dims, StoreMode::Micro, source_id(model, vocab, Some(&positions)));
    let mut cache: HashMap<u32, Vec<Array2<f64>>> = HashMap::new();
    for (row, ids) in encoded.iter().enumerate() {
        for (j, &p) in positions.iter().enumerate() {
            let id = ids[p];
            if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(id) {
                e.insert(model.forward(&[id])?);
            }
            for (l, h) in cache[&id].iter().enumerate() {
                let mut slice = store.slice_mut(l, j)?;
                for (dst, &v) in slice.row_mut(row).iter_mut().zip(h.row(0)) {
                    *dst = v as f32;
                }
            }
        }
    }
    Ok(store)
}
