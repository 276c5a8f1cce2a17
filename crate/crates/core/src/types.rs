//! Domain types shared across the crate.

use std::fmt;

use ndarray::{ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Country,
    Animal,
    Color,
    Arithmetic,
    Natural,
    Custom,
}

impl DomainTag {
    pub fn is_icl(self) -> bool {
        matches!(
            self,
            DomainTag::Country | DomainTag::Animal | DomainTag::Color | DomainTag::Custom
        )
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DomainTag::Country => "country",
            DomainTag::Animal => "animal",
            DomainTag::Color => "color",
            DomainTag::Arithmetic => "arithmetic",
            DomainTag::Natural => "natural",
            DomainTag::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for DomainTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "country" => DomainTag::Country,
            "animal" => DomainTag::Animal,
            "color" => DomainTag::Color,
            "arithmetic" => DomainTag::Arithmetic,
            "natural" => DomainTag::Natural,
            "custom" => DomainTag::Custom,
            other => return Err(Error::InvalidArgument(format!("unknown domain {other:?}"))),
        })
    }
}

/// Shape of a fixed-length corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub token_count: usize,
    pub sequences: usize,
    pub domain: DomainTag,
    /// Tokens per demonstration, for ICL corpora.
    pub shot_length: Option<usize>,
}

impl SequenceSpec {
    pub fn new(token_count: usize, sequences: usize, domain: DomainTag, shot_length: Option<usize>) -> Result<Self> {
        if token_count == 0 {
            return Err(Error::InvalidArgument("token_count must be positive".into()));
        }
        if let Some(shot) = shot_length {
            if shot == 0 || !token_count.is_multiple_of(shot) {
                return Err(Error::InvalidArgument(format!(
                    "token_count {token_count} is not a multiple of shot_length {shot}"
                )));
            }
        }
        Ok(Self {
            token_count,
            sequences,
            domain,
            shot_length,
        })
    }

    pub fn shots(&self) -> Option<usize> {
        self.shot_length.map(|s| self.token_count / s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreMode {
    Macro,
    Micro,
}

impl StoreMode {
    pub fn as_byte(self) -> u8 {
        match self {
            StoreMode::Macro => 0,
            StoreMode::Micro => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(StoreMode::Macro),
            1 => Some(StoreMode::Micro),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StoreDims {
    pub samples: usize,
    pub layers: usize,
    pub tokens: usize,
    pub width: usize,
}

impl StoreDims {
    pub fn new(samples: usize, layers: usize, tokens: usize, width: usize) -> Self {
        Self {
            samples,
            layers,
            tokens,
            width,
        }
    }

    pub fn slice_len(&self) -> usize {
        self.samples * self.width
    }

    pub fn slice_count(&self) -> usize {
        self.layers * self.tokens
    }
}

/// Hidden states `H[s, l, t, :]`, held as one `S × D` slice per `(l, t)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationStore {
    dims: StoreDims,
    mode: StoreMode,
    source_id: String,
    /// Row-major `S × D` slices indexed by `l * T + t`; `None` marks a missing cell.
    slices: Vec<Option<Vec<f32>>>,
}

impl RepresentationStore {
    /// A store with every slice allocated and zeroed.
    pub fn zeros(dims: StoreDims, mode: StoreMode, source_id: impl Into<String>) -> Self {
        Self {
            dims,
            mode,
            source_id: source_id.into(),
            slices: vec![Some(vec![0.0; dims.slice_len()]); dims.slice_count()],
        }
    }

    /// A store with no slices; fill it with [`Self::set_slice`].
    pub fn empty(dims: StoreDims, mode: StoreMode, source_id: impl Into<String>) -> Self {
        Self {
            dims,
            mode,
            source_id: source_id.into(),
            slices: vec![None; dims.slice_count()],
        }
    }

    pub fn dims(&self) -> StoreDims {
        self.dims
    }

    pub fn mode(&self) -> StoreMode {
        self.mode
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    fn index(&self, layer: usize, token: usize) -> Result<usize> {
        if layer >= self.dims.layers || token >= self.dims.tokens {
            return Err(Error::SliceOutOfRange {
                layer,
                token,
                layers: self.dims.layers,
                tokens: self.dims.tokens,
            });
        }
        Ok(layer * self.dims.tokens + token)
    }

    pub fn slice(&self, layer: usize, token: usize) -> Result<ArrayView2<'_, f32>> {
        let idx = self.index(layer, token)?;
        let data = self.slices[idx]
            .as_deref()
            .ok_or_else(|| Error::Shape(format!("missing slice ({layer},{token})")))?;
        ArrayView2::from_shape((self.dims.samples, self.dims.width), data)
            .map_err(|_| Error::Shape(format!("slice ({layer},{token}) has {} values", data.len())))
    }

    pub fn slice_mut(&mut self, layer: usize, token: usize) -> Result<ArrayViewMut2<'_, f32>> {
        let idx = self.index(layer, token)?;
        let (s, d) = (self.dims.samples, self.dims.width);
        let data = self.slices[idx]
            .as_deref_mut()
            .ok_or_else(|| Error::Shape(format!("missing slice ({layer},{token})")))?;
        let n = data.len();
        ArrayViewMut2::from_shape((s, d), data)
            .map_err(|_| Error::Shape(format!("slice ({layer},{token}) has {n} values")))
    }

    /// Raw row-major data of a slice, if present.
    pub fn slice_data(&self, layer: usize, token: usize) -> Option<&[f32]> {
        self.index(layer, token).ok().and_then(|i| self.slices[i].as_deref())
    }

    /// Installs a slice without checking its length; [`validate_store`] reports mismatches.
    pub fn set_slice(&mut self, layer: usize, token: usize, data: Vec<f32>) -> Result<()> {
        let idx = self.index(layer, token)?;
        self.slices[idx] = Some(data);
        Ok(())
    }

    pub fn remove_slice(&mut self, layer: usize, token: usize) -> Result<()> {
        let idx = self.index(layer, token)?;
        self.slices[idx] = None;
        Ok(())
    }

    /// Slice `(l, t)` widened to f64.
    pub fn slice_f64(&self, layer: usize, token: usize) -> Result<ndarray::Array2<f64>> {
        Ok(self.slice(layer, token)?.mapv(f64::from))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    MissingSlice {
        layer: usize,
        token: usize,
    },
    SliceShape {
        layer: usize,
        token: usize,
        expected: usize,
        found: usize,
    },
    NonFinite {
        layer: usize,
        token: usize,
        count: usize,
    },
    Dims(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingSlice { layer, token } => write!(f, "missing slice ({layer},{token})"),
            Violation::SliceShape {
                layer,
                token,
                expected,
                found,
            } => write!(f, "slice ({layer},{token}) has {found} values, expected {expected}"),
            Violation::NonFinite { layer, token, count } => {
                write!(f, "slice ({layer},{token}) has {count} non-finite values")
            }
            Violation::Dims(msg) => write!(f, "dims: {msg}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks one slice's contents; shared by in-memory and on-disk validation.
pub(crate) fn check_slice(layer: usize, token: usize, data: &[f32], expected: usize, out: &mut Vec<Violation>) {
    if data.len() != expected {
        out.push(Violation::SliceShape {
            layer,
            token,
            expected,
            found: data.len(),
        });
    }
    let count = data.iter().filter(|v| !v.is_finite()).count();
    if count > 0 {
        out.push(Violation::NonFinite { layer, token, count });
    }
}

/// Lists every violated store invariant; empty iff the store is valid.
pub fn validate_store(store: &RepresentationStore) -> ValidationReport {
    let dims = store.dims;
    let mut violations = Vec::new();
    if dims.samples == 0 || dims.layers == 0 || dims.tokens == 0 || dims.width == 0 {
        violations.push(Violation::Dims(format!(
            "all of S, L, T, D must be positive, got ({}, {}, {}, {})",
            dims.samples, dims.layers, dims.tokens, dims.width
        )));
    }
    for layer in 0..dims.layers {
        for token in 0..dims.tokens {
            match &store.slices[layer * dims.tokens + token] {
                None => violations.push(Violation::MissingSlice { layer, token }),
                Some(data) => check_slice(layer, token, data, dims.slice_len(), &mut violations),
            }
        }
    }
    ValidationReport { violations }
}

/// Looks up `key` in a `key=value;key=value` source id.
pub fn source_field<'a>(source_id: &'a str, key: &str) -> Option<&'a str> {
    source_id
        .split(';')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim())
}

/// One mutual-information estimate for a `(layer pair, token)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    /// Running maximum of the DV bound over epochs, in bits.
    pub value_bits: f64,
    /// Lower block of the adjacent pair `(l, l+1)`.
    pub layer_pair: usize,
    pub token: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub seed: u64,
}

/// Per-shot summary row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotStat {
    pub shot: usize,
    pub mean: f64,
    /// Spread of `Ê(t)` across the shot's token positions.
    pub sd_positions: f64,
    /// Spread of the shot mean across bootstrap re-estimates; `None` if not computed.
    pub sd_bootstrap: Option<f64>,
}

/// `E(l, t)` for every layer pair and token plus the per-token mean `Ê(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IEProfile {
    /// `e_by_layer[l][t]`, in bits; `None` where a component estimate failed.
    pub e_by_layer: Vec<Vec<Option<f64>>>,
    /// `Ê(t)` in bits; `None` if any layer pair for that token is missing.
    pub e_hat_by_token: Vec<Option<f64>>,
    pub shot_stats: Option<Vec<ShotStat>>,
}

impl IEProfile {
    pub fn layer_pairs(&self) -> usize {
        self.e_by_layer.len()
    }

    pub fn tokens(&self) -> usize {
        self.e_hat_by_token.len()
    }
}
