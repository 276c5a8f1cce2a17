//! Parity dynamics: `T` binary tokens whose output parity equals the input
//! parity with probability `γ`. The macro variable (the parity bit) carries
//! `1 − H_b(γ)` bits across a step while every individual token carries none,
//! which makes it an exact oracle for the estimator and the IE arithmetic.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{RepresentationStore, StoreDims, StoreMode};

/// Largest token count for which output tables are enumerated.
pub const MAX_ENUM_TOKENS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityDynamics {
    tokens: usize,
    fidelity: f64,
}

impl ParityDynamics {
    pub fn new(tokens: usize, fidelity: f64) -> Result<Self> {
        if tokens == 0 {
            return Err(Error::InvalidArgument("parity dynamics needs T >= 1".into()));
        }
        if !(0.0..=1.0).contains(&fidelity) {
            return Err(Error::InvalidArgument(format!("fidelity {fidelity} outside [0, 1]")));
        }
        Ok(Self { tokens, fidelity })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn fidelity(&self) -> f64 {
        self.fidelity
    }

    fn check_enumerable(&self) -> Result<()> {
        if self.tokens > MAX_ENUM_TOKENS {
            return Err(Error::InvalidArgument(format!(
                "T={} exceeds the enumeration limit of {MAX_ENUM_TOKENS}",
                self.tokens
            )));
        }
        Ok(())
    }

    /// `p(H_{l+1} = o | H_l = input)` for every output pattern `o`, indexed by
    /// the integer whose bit `t` is token `t`.
    pub fn step_distribution(&self, input: &[u8]) -> Result<Vec<f64>> {
        self.check_enumerable()?;
        if input.len() != self.tokens || input.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument(format!(
                "input must be {} bits, got {input:?}",
                self.tokens
            )));
        }
        let in_parity = input.iter().fold(0u8, |acc, &b| acc ^ b);
        let norm = (1u64 << (self.tokens - 1)) as f64;
        let keep = self.fidelity / norm;
        let flip = (1.0 - self.fidelity) / norm;
        Ok((0..1u32 << self.tokens)
            .map(|o| if parity_of(o) == in_parity { keep } else { flip })
            .collect())
    }

    /// Number of output patterns per `(output parity, bit t of output)`.
    fn output_counts(&self, token: usize) -> [[u64; 2]; 2] {
        let mut counts = [[0u64; 2]; 2];
        for out in 0..1u32 << self.tokens {
            counts[parity_of(out) as usize][((out >> token) & 1) as usize] += 1;
        }
        counts
    }

    fn prob_of(&self, in_parity: usize, out_parity: usize) -> f64 {
        let norm = (1u64 << (self.tokens - 1)) as f64;
        if in_parity == out_parity {
            self.fidelity / norm
        } else {
            (1.0 - self.fidelity) / norm
        }
    }

    /// Exact mutual information in bits between input and output parity under
    /// a uniform input, from the enumerated 2×2 joint.
    pub fn exact_macro_mi(&self) -> Result<f64> {
        self.check_enumerable()?;
        let counts = self.output_counts(0);
        let mut joint = [[0.0; 2]; 2];
        for (in_parity, row) in joint.iter_mut().enumerate() {
            for (out_parity, cell) in row.iter_mut().enumerate() {
                let n = counts[out_parity][0] + counts[out_parity][1];
                // Uniform inputs: each parity class has probability 1/2.
                *cell = 0.5 * n as f64 * self.prob_of(in_parity, out_parity);
            }
        }
        Ok(mi_bits(&joint))
    }

    /// Exact per-token mutual information in bits, averaged over tokens.
    ///
    /// Zero for `T >= 2`. With a single token the token is its own parity, so
    /// the value coincides with [`Self::exact_macro_mi`].
    pub fn exact_micro_mi(&self) -> Result<f64> {
        Ok((0..self.tokens).map(|t| self.exact_token_mi(t)).sum::<Result<f64>>()? / self.tokens as f64)
    }

    /// Exact mutual information in bits between token `t` before and after a step.
    pub fn exact_token_mi(&self, token: usize) -> Result<f64> {
        self.check_enumerable()?;
        if token >= self.tokens {
            return Err(Error::InvalidArgument(format!("token {token} >= T={}", self.tokens)));
        }
        // P(input bit t = a, input parity = p) under a uniform input.
        let mut input_mass = [[0.0; 2]; 2];
        let weight = 1.0 / (1u64 << self.tokens) as f64;
        for input in 0..1u32 << self.tokens {
            let a = ((input >> token) & 1) as usize;
            input_mass[a][parity_of(input) as usize] += weight;
        }
        let counts = self.output_counts(token);
        let mut joint = [[0.0; 2]; 2];
        for (a, row) in joint.iter_mut().enumerate() {
            for (b, cell) in row.iter_mut().enumerate() {
                for in_parity in 0..2 {
                    let mut q = 0.0;
                    for out_parity in 0..2 {
                        q += counts[out_parity][b] as f64 * self.prob_of(in_parity, out_parity);
                    }
                    *cell += input_mass[a][in_parity] * q;
                }
            }
        }
        Ok(mi_bits(&joint))
    }

    /// `E = macro MI − mean micro MI`, from exact enumeration.
    pub fn exact_emergence(&self) -> Result<f64> {
        Ok(self.exact_macro_mi()? - self.exact_micro_mi()?)
    }

    /// Draws `samples` transitions. Bits are embedded into `R^width` as
    /// `(2b − 1)·w + σ·ε` for a fixed random direction `w`.
    pub fn sample_trajectories(&self, samples: usize, width: usize, seed: u64) -> Result<ParitySamples> {
        if samples == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        if width == 0 {
            return Err(Error::InvalidArgument("embedding width must be positive".into()));
        }
        if self.tokens > 32 {
            return Err(Error::InvalidArgument("sampling supports at most 32 tokens".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let direction: Vec<f64> = {
            let raw: Vec<f64> = (0..width).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.iter().map(|v| v / norm).collect()
        };
        let mut inputs = Vec::with_capacity(samples);
        let mut outputs = Vec::with_capacity(samples);
        let mask = if self.tokens == 32 {
            u32::MAX
        } else {
            (1u32 << self.tokens) - 1
        };
        for _ in 0..samples {
            let input = rng.random::<u32>() & mask;
            let keep = rng.random_bool(self.fidelity);
            let target = parity_of(input) ^ u8::from(!keep);
            // Uniform over outputs with the target parity: free low bits, fixed top bit.
            let mut out = rng.random::<u32>() & (mask >> 1);
            if parity_of(out) != target {
                out |= 1 << (self.tokens - 1);
            }
            inputs.push(input);
            outputs.push(out);
        }
        Ok(ParitySamples {
            tokens: self.tokens,
            inputs,
            outputs,
            direction,
            jitter: EMBED_JITTER,
            noise_seed: rng.random(),
        })
    }
}

/// Standard deviation of the Gaussian jitter added to embedded bits.
pub const EMBED_JITTER: f64 = 0.01;

fn parity_of(bits: u32) -> u8 {
    (bits.count_ones() & 1) as u8
}

/// Mutual information in bits of a 2×2 joint distribution.
pub fn mi_bits(joint: &[[f64; 2]; 2]) -> f64 {
    let px = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let py = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut mi = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let p = joint[a][b];
            if p > 0.0 {
                mi += p * (p / (px[a] * py[b])).log2();
            }
        }
    }
    mi
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.log2() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// Sampled transitions with their continuous embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ParitySamples {
    tokens: usize,
    /// Input patterns, bit `t` = token `t`.
    pub inputs: Vec<u32>,
    pub outputs: Vec<u32>,
    direction: Vec<f64>,
    jitter: f64,
    noise_seed: u64,
}

impl ParitySamples {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn macro_in(&self) -> Vec<u8> {
        self.inputs.iter().map(|&b| parity_of(b)).collect()
    }

    pub fn macro_out(&self) -> Vec<u8> {
        self.outputs.iter().map(|&b| parity_of(b)).collect()
    }

    /// Fraction of samples whose parity was preserved.
    pub fn preservation_frequency(&self) -> f64 {
        let kept = self
            .inputs
            .iter()
            .zip(&self.outputs)
            .filter(|(a, b)| parity_of(**a) == parity_of(**b))
            .count();
        kept as f64 / self.len() as f64
    }

    fn embed(&self, bits: &[u8], stream: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        rng.set_stream(stream);
        let width = self.direction.len();
        let mut out = Array2::zeros((bits.len(), width));
        for (mut row, &b) in out.rows_mut().into_iter().zip(bits) {
            let sign = if b == 1 { 1.0 } else { -1.0 };
            for (v, w) in row.iter_mut().zip(&self.direction) {
                let eps: f64 = StandardNormal.sample(&mut rng);
                *v = sign * w + self.jitter * eps;
            }
        }
        out
    }

    /// Embedded `(parity before, parity after)` rows.
    pub fn macro_pairs(&self) -> (Array2<f64>, Array2<f64>) {
        (self.embed(&self.macro_in(), 0), self.embed(&self.macro_out(), 1))
    }

    /// Embedded `(token t before, token t after)` rows.
    pub fn micro_pairs(&self, token: usize) -> (Array2<f64>, Array2<f64>) {
        let before: Vec<u8> = self.inputs.iter().map(|&b| ((b >> token) & 1) as u8).collect();
        let after: Vec<u8> = self.outputs.iter().map(|&b| ((b >> token) & 1) as u8).collect();
        let stream = 2 + 2 * token as u64;
        (self.embed(&before, stream), self.embed(&after, stream + 1))
    }

    /// Two-block stores: the macro store holds the parity bit as its single
    /// token, the micro store holds every token separately.
    pub fn to_stores(&self) -> (RepresentationStore, RepresentationStore) {
        let width = self.direction.len();
        let s = self.len();
        let mut macro_store =
            RepresentationStore::empty(StoreDims::new(s, 2, 1, width), StoreMode::Macro, "parity:macro");
        let (a, b) = self.macro_pairs();
        macro_store
            .set_slice(0, 0, a.iter().map(|&v| v as f32).collect())
            .expect("in range");
        macro_store
            .set_slice(1, 0, b.iter().map(|&v| v as f32).collect())
            .expect("in range");
        let mut micro_store = RepresentationStore::empty(
            StoreDims::new(s, 2, self.tokens, width),
            StoreMode::Micro,
            "parity:micro",
        );
        for t in 0..self.tokens {
            let (a, b) = self.micro_pairs(t);
            micro_store
                .set_slice(0, t, a.iter().map(|&v| v as f32).collect())
                .expect("in range");
            micro_store
                .set_slice(1, t, b.iter().map(|&v| v as f32).collect())
                .expect("in range");
        }
        (macro_store, micro_store)
    }
}

/// One row of the oracle table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub gamma: f64,
    pub macro_bits: f64,
    pub micro_bits: f64,
    pub e_bits: f64,
}

pub fn oracle_table(tokens: usize, gammas: &[f64]) -> Result<Vec<OracleRow>> {
    gammas
        .iter()
        .map(|&gamma| {
            let dynamics = ParityDynamics::new(tokens, gamma)?;
            let macro_bits = dynamics.exact_macro_mi()?;
            let micro_bits = dynamics.exact_micro_mi()?;
            Ok(OracleRow {
                gamma,
                macro_bits,
                micro_bits,
                e_bits: macro_bits - micro_bits,
            })
        })
        .collect()
}

pub fn write_oracle_csv<W: std::io::Write>(mut w: W, rows: &[OracleRow]) -> std::io::Result<()> {
    writeln!(w, "gamma,macro_bits,micro_bits,E_bits")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.gamma, r.macro_bits, r.micro_bits, r.e_bits)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_token_table_from_zero_input() {
        let g = 0.8;
        let dist = ParityDynamics::new(3, g)
            .unwrap()
            .step_distribution(&[0, 0, 0])
            .unwrap();
        // Index bit t is token t: 000, 011, 101, 110 are 0, 6, 5, 3.
        for (o, p) in dist.iter().enumerate() {
            let expected = if [0, 3, 5, 6].contains(&o) {
                g / 4.0
            } else {
                (1.0 - g) / 4.0
            };
            assert!((p - expected).abs() < 1e-15, "output {o:03b}");
        }
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_step_never_flips_parity() {
        let dist = ParityDynamics::new(4, 1.0)
            .unwrap()
            .step_distribution(&[0, 0, 0, 0])
            .unwrap();
        for (o, p) in dist.iter().enumerate() {
            if (o as u32).count_ones() % 2 == 1 {
                assert_eq!(*p, 0.0);
            }
        }
    }

    #[test]
    fn half_fidelity_is_uniform() {
        let dist = ParityDynamics::new(5, 0.5)
            .unwrap()
            .step_distribution(&[1, 0, 1, 1, 0])
            .unwrap();
        assert!(dist.iter().all(|&p| (p - 1.0 / 32.0).abs() < 1e-15));
    }

    #[test]
    fn too_many_tokens_for_enumeration() {
        let dynamics = ParityDynamics::new(21, 0.9).unwrap();
        assert!(dynamics.step_distribution(&[0; 21]).is_err());
        assert!(dynamics.exact_macro_mi().is_err());
    }

    #[test]
    fn macro_mi_values() {
        let mi = |g| ParityDynamics::new(3, g).unwrap().exact_macro_mi().unwrap();
        assert!(mi(0.5).abs() < 1e-15);
        assert!((mi(1.0) - 1.0).abs() < 1e-15);
        // 1 − H_b(0.9) = 1 + 0.9·log2(0.9) + 0.1·log2(0.1)
        assert!((mi(0.9) - 0.531_004_406_410_719).abs() < 1e-12);
        for g in [0.0, 0.1, 0.3, 0.7, 0.95] {
            assert!((mi(g) - (1.0 - binary_entropy(g))).abs() < 1e-12);
            assert!((mi(g) - mi(1.0 - g)).abs() < 1e-12);
        }
    }

    #[test]
    fn micro_mi_vanishes() {
        for t in 2..7 {
            for g in [0.0, 0.3, 0.5, 0.9, 1.0] {
                let d = ParityDynamics::new(t, g).unwrap();
                assert!(d.exact_micro_mi().unwrap().abs() < 1e-15, "T={t} γ={g}");
            }
        }
    }

    #[test]
    fn single_token_micro_equals_macro() {
        let d = ParityDynamics::new(1, 0.9).unwrap();
        assert!((d.exact_micro_mi().unwrap() - d.exact_macro_mi().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn supervenience_under_token_permutation() {
        // Macro output marginal depends only on the parity of the input.
        let d = ParityDynamics::new(4, 0.7).unwrap();
        let macro_marginal = |input: &[u8]| {
            let dist = d.step_distribution(input).unwrap();
            dist.iter()
                .enumerate()
                .filter(|(o, _)| (*o as u32).count_ones() % 2 == 1)
                .map(|(_, p)| p)
                .sum::<f64>()
        };
        let base = macro_marginal(&[1, 1, 0, 1]);
        for perm in [[1, 0, 1, 1], [0, 1, 1, 1], [1, 1, 1, 0]] {
            assert!((macro_marginal(&perm) - base).abs() < 1e-15);
        }
    }

    #[test]
    fn sampling_matches_fidelity() {
        let d = ParityDynamics::new(3, 1.0).unwrap();
        assert_eq!(d.sample_trajectories(1000, 4, 1).unwrap().preservation_frequency(), 1.0);
        let d = ParityDynamics::new(3, 0.9).unwrap();
        let freq = d.sample_trajectories(100_000, 4, 2).unwrap().preservation_frequency();
        // 3σ binomial band: 3·sqrt(0.9·0.1/1e5) ≈ 0.00285
        assert!((freq - 0.9).abs() <= 0.003, "{freq}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = ParityDynamics::new(3, 0.7).unwrap();
        let a = d.sample_trajectories(500, 8, 11).unwrap();
        let b = d.sample_trajectories(500, 8, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.macro_pairs(), b.macro_pairs());
    }

    #[test]
    fn sampled_outputs_are_uniform_within_parity() {
        let d = ParityDynamics::new(3, 1.0).unwrap();
        let s = d.sample_trajectories(40_000, 2, 3).unwrap();
        let mut counts = [0usize; 8];
        for (&i, &o) in s.inputs.iter().zip(&s.outputs) {
            if i == 0 {
                counts[o as usize] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        for o in [0, 3, 5, 6] {
            let f = counts[o] as f64 / total as f64;
            assert!((f - 0.25).abs() < 0.03, "{o}: {f}");
        }
    }

    #[test]
    fn oracle_csv() {
        let rows = oracle_table(3, &[0.5, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_oracle_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "gamma,macro_bits,micro_bits,E_bits\n0.5,0,0,0\n1,1,0,1\n"
        );
    }
}
