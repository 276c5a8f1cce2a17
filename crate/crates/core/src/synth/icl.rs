//! Few-shot entity sequences: every shot is `Entity,` (two tokens).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::entities::{EntityCatalog, EntityVocabulary};
use super::Corpus;
use crate::error::{Error, Result};
use crate::tokenizer::tokenize;
use crate::types::{DomainTag, SequenceSpec};

pub const SHOT_TOKENS: usize = 2;

/// `n · (n−1) · … · (n−k+1)`, or `None` on overflow.
pub fn arrangement_count(n: usize, k: usize) -> Option<usize> {
    if k > n {
        return Some(0);
    }
    (n - k + 1..=n).try_fold(1usize, |acc, v| acc.checked_mul(v))
}

/// The `rank`-th ordered arrangement of `k` distinct indices from `0..n`,
/// in lexicographic order.
pub fn unrank_arrangement(n: usize, k: usize, mut rank: usize) -> Vec<usize> {
    let mut free: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let block = arrangement_count(n - i - 1, k - i - 1).expect("fits when the total fits");
        let digit = rank / block;
        rank %= block;
        out.push(free.remove(digit));
    }
    out
}

/// All ordered arrangements of `k` distinct indices from `0..n`, lexicographically.
pub fn arrangements(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = arrangement_count(n, k).unwrap_or(0);
    let mut current: Option<Vec<usize>> = (total > 0).then(|| (0..k).collect());
    std::iter::from_fn(move || {
        let out = current.take()?;
        current = next_arrangement(&out, n);
        Some(out)
    })
}

fn next_arrangement(cur: &[usize], n: usize) -> Option<Vec<usize>> {
    let k = cur.len();
    // Find the rightmost position that can be bumped to a larger unused value,
    // then fill the tail with the smallest unused values.
    for pos in (0..k).rev() {
        let used: Vec<bool> = {
            let mut u = vec![false; n];
            for &v in &cur[..pos] {
                u[v] = true;
            }
            u
        };
        if let Some(next) = (cur[pos] + 1..n).find(|&v| !used[v]) {
            let mut out = cur[..pos].to_vec();
            out.push(next);
            let mut used = used;
            used[next] = true;
            out.extend((0..n).filter(|&v| !used[v]).take(k - pos - 1));
            return Some(out);
        }
    }
    None
}

/// Renders entities as `"A, B, C,"`; `fused_space_shot` gets a leading fused space.
pub fn render_shots(entities: &[&str], fused_space_shot: Option<usize>) -> String {
    let mut out = String::new();
    for (i, e) in entities.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        if fused_space_shot == Some(i) {
            out.push(' ');
        }
        out.push_str(e);
        out.push(',');
    }
    out
}

fn icl_spec(domain: DomainTag, shots: usize, count: usize) -> SequenceSpec {
    SequenceSpec::new(shots * SHOT_TOKENS, count, domain, Some(SHOT_TOKENS)).expect("shots >= 1")
}

/// Every ordered arrangement of `shots` distinct entities.
pub fn synth_icl(vocab: &EntityVocabulary, shots: usize) -> Result<Corpus> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be >= 1".into()));
    }
    if shots > vocab.len() {
        return Err(Error::NotEnoughEntities {
            needed: shots,
            available: vocab.len(),
        });
    }
    let names: Vec<&str> = vocab.entities.iter().map(String::as_str).collect();
    let lines: Vec<String> = arrangements(names.len(), shots)
        .map(|idx| render_shots(&idx.iter().map(|&i| names[i]).collect::<Vec<_>>(), None))
        .collect();
    Ok(Corpus {
        spec: icl_spec(vocab.domain, shots, lines.len()),
        lines,
        generator_id: format!("icl/{}", vocab.domain),
        seed: None,
        variant: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Only the first 15 entities of the domain.
    Candidate,
    /// Entity pool of country + animal.
    Fusion1,
    /// Entity pool of country + animal + color.
    Fusion2,
    /// The fourth shot's entity becomes a leading-space token.
    Space,
    /// A comma token before the first token.
    Prefix,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Candidate,
        AblationVariant::Fusion1,
        AblationVariant::Fusion2,
        AblationVariant::Space,
        AblationVariant::Prefix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Candidate => "candidate",
            AblationVariant::Fusion1 => "fusion1",
            AblationVariant::Fusion2 => "fusion2",
            AblationVariant::Space => "space",
            AblationVariant::Prefix => "prefix",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation variant {s:?}")))
    }
}

pub const CANDIDATE_ENTITIES: usize = 15;

/// Builds an ablation corpus from an ICL base corpus.
///
/// `candidate` enumerates every arrangement over the reduced vocabulary.
/// `fusion1`/`fusion2` draw (with `seed`) as many distinct arrangements from
/// the merged pool as the base corpus has, kept in lexicographic order.
/// `space` and `prefix` rewrite each base line.
pub fn synth_ablation(base: &Corpus, variant: AblationVariant, catalog: &EntityCatalog, seed: u64) -> Result<Corpus> {
    let shot_len = base.spec.shot_length;
    if shot_len != Some(SHOT_TOKENS) {
        return Err(Error::InvalidArgument(format!(
            "ablations need an ICL corpus with 2-token shots, got shot_length {shot_len:?}"
        )));
    }
    let shots = base.spec.token_count / SHOT_TOKENS;
    let mut corpus = match variant {
        AblationVariant::Candidate => {
            let vocab = catalog.vocabulary(base.spec.domain)?;
            if vocab.len() <= CANDIDATE_ENTITIES {
                return Err(Error::InvalidArgument(format!(
                    "{} has only {} entities; candidate needs more than {CANDIDATE_ENTITIES}",
                    base.spec.domain,
                    vocab.len()
                )));
            }
            let mut c = synth_icl(&vocab.truncated(CANDIDATE_ENTITIES)?, shots)?;
            c.spec.domain = base.spec.domain;
            c
        }
        AblationVariant::Fusion1 | AblationVariant::Fusion2 => {
            let mut pool = catalog.country.clone();
            pool.extend(catalog.animal.iter().cloned());
            if variant == AblationVariant::Fusion2 {
                pool.extend(catalog.color.iter().cloned());
            }
            let vocab = EntityVocabulary::custom(pool)?;
            sample_arrangements(&vocab, shots, base.len(), seed)?
        }
        AblationVariant::Space => {
            if shots < 4 {
                return Err(Error::InvalidArgument(format!(
                    "space needs at least 4 shots, base has {shots}"
                )));
            }
            let lines = base
                .lines
                .iter()
                .map(|line| {
                    let entities = line_entities(line)?;
                    let refs: Vec<&str> = entities.iter().map(String::as_str).collect();
                    Ok(render_shots(&refs, Some(3)))
                })
                .collect::<Result<Vec<_>>>()?;
            Corpus {
                spec: base.spec.clone(),
                lines,
                generator_id: base.generator_id.clone(),
                seed: base.seed,
                variant: None,
            }
        }
        AblationVariant::Prefix => Corpus {
            spec: SequenceSpec::new(base.spec.token_count + 1, base.len(), base.spec.domain, None)?,
            lines: base.lines.iter().map(|l| format!(",{l}")).collect(),
            generator_id: base.generator_id.clone(),
            seed: base.seed,
            variant: None,
        },
    };
    corpus.variant = Some(variant.name().to_string());
    if matches!(variant, AblationVariant::Fusion1 | AblationVariant::Fusion2) {
        corpus.seed = Some(seed);
    }
    Ok(corpus)
}

/// Entities of an ICL line (every token at an even position).
fn line_entities(line: &str) -> Result<Vec<String>> {
    let tokens = tokenize(line);
    if !tokens.len().is_multiple_of(2) || tokens.iter().skip(1).step_by(2).any(|t| t != ",") {
        return Err(Error::InvalidArgument(format!("not an ICL line: {line:?}")));
    }
    Ok(tokens.into_iter().step_by(2).collect())
}

fn sample_arrangements(vocab: &EntityVocabulary, shots: usize, count: usize, seed: u64) -> Result<Corpus> {
    let n = vocab.len();
    let total =
        arrangement_count(n, shots).ok_or_else(|| Error::InvalidArgument("arrangement count overflows".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks = if count >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(&mut rng, total, count).into_vec()
    };
    ranks.sort_unstable();
    let lines: Vec<String> = ranks
        .iter()
        .map(|&r| {
            let idx = unrank_arrangement(n, shots, r);
            render_shots(
                &idx.iter().map(|&i| vocab.entities[i].as_str()).collect::<Vec<_>>(),
                None,
            )
        })
        .collect();
    Ok(Corpus {
        spec: icl_spec(DomainTag::Custom, shots, lines.len()),
        lines,
        generator_id: "icl/fusion".into(),
        seed: Some(seed),
        variant: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Asia,
    Europe,
    Size,
    Alphabet,
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "asia" => PatternKind::Asia,
            "europe" => PatternKind::Europe,
            "size" => PatternKind::Size,
            "alphabet" => PatternKind::Alphabet,
            other => return Err(Error::InvalidArgument(format!("unknown pattern {other:?}"))),
        })
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternKind::Asia => "asia",
            PatternKind::Europe => "europe",
            PatternKind::Size => "size",
            PatternKind::Alphabet => "alphabet",
        })
    }
}

/// A sequence predicate over entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    /// Every entity belongs to the member list.
    Members(Vec<String>),
    /// Entities appear in strictly increasing position of the given order.
    Ordered(Vec<String>),
    /// First letters are non-decreasing, case-insensitively.
    Alphabet,
}

impl Pattern {
    pub fn resolve(kind: PatternKind, catalog: &EntityCatalog) -> Result<Self> {
        Ok(match kind {
            PatternKind::Asia => Pattern::Members(catalog.region("asia")?.to_vec()),
            PatternKind::Europe => Pattern::Members(catalog.region("europe")?.to_vec()),
            PatternKind::Size => Pattern::Ordered(catalog.animal_size_order.clone()),
            PatternKind::Alphabet => Pattern::Alphabet,
        })
    }

    /// Entities of `vocab` that can appear under this pattern, in vocabulary order.
    fn pool<'a>(&self, vocab: &'a EntityVocabulary) -> Vec<&'a str> {
        vocab
            .entities
            .iter()
            .map(String::as_str)
            .filter(|e| match self {
                Pattern::Members(m) | Pattern::Ordered(m) => m.iter().any(|x| x == e),
                Pattern::Alphabet => true,
            })
            .collect()
    }

    pub fn accepts(&self, entities: &[&str]) -> bool {
        match self {
            Pattern::Members(m) => entities.iter().all(|e| m.iter().any(|x| x == e)),
            Pattern::Ordered(order) => {
                let ranks: Option<Vec<usize>> = entities.iter().map(|e| order.iter().position(|x| x == e)).collect();
                ranks.is_some_and(|r| r.windows(2).all(|w| w[0] < w[1]))
            }
            Pattern::Alphabet => {
                let first: Vec<Option<char>> = entities
                    .iter()
                    .map(|e| e.trim_start().chars().next().map(|c| c.to_ascii_lowercase()))
                    .collect();
                first.windows(2).all(|w| w[0] <= w[1])
            }
        }
    }

    /// Predicate over a rendered ICL line.
    pub fn accepts_line(&self, line: &str) -> bool {
        line_entities(line).is_ok_and(|e| self.accepts(&e.iter().map(String::as_str).collect::<Vec<_>>()))
    }
}

/// All arrangements of `shots` entities satisfying `pattern`.
pub fn synth_pattern(vocab: &EntityVocabulary, pattern: &Pattern, shots: usize) -> Result<Corpus> {
    let pool = pattern.pool(vocab);
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be >= 1".into()));
    }
    if pool.len() < shots {
        return Err(Error::NotEnoughEntities {
            needed: shots,
            available: pool.len(),
        });
    }
    let lines: Vec<String> = arrangements(pool.len(), shots)
        .map(|idx| idx.iter().map(|&i| pool[i]).collect::<Vec<_>>())
        .filter(|e| pattern.accepts(e))
        .map(|e| render_shots(&e, None))
        .collect();
    if lines.is_empty() {
        return Err(Error::NotEnoughEntities {
            needed: shots,
            available: 0,
        });
    }
    Ok(Corpus {
        spec: icl_spec(vocab.domain, shots, lines.len()),
        lines,
        generator_id: format!("pattern/{}", vocab.domain),
        seed: None,
        variant: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn brute_force_arrangements(n: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for prefix in brute_force_arrangements(n, k - 1) {
            for v in 0..n {
                if !prefix.contains(&v) {
                    let mut p = prefix.clone();
                    p.push(v);
                    out.push(p);
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn arrangements_match_brute_force() {
        for (n, k) in [(3, 2), (4, 4), (5, 3), (6, 1), (2, 3)] {
            let got: Vec<_> = arrangements(n, k).collect();
            let expected = if k > n { vec![] } else { brute_force_arrangements(n, k) };
            assert_eq!(got, expected, "n={n} k={k}");
            for (r, a) in expected.iter().enumerate() {
                assert_eq!(&unrank_arrangement(n, k, r), a);
            }
        }
    }

    #[test]
    fn three_entities_two_shots() {
        let vocab = EntityVocabulary::custom(vec!["A".into(), "B".into(), "C".into()]).unwrap();
        let c = synth_icl(&vocab, 2).unwrap();
        assert_eq!(c.lines, ["A, B,", "A, C,", "B, A,", "B, C,", "C, A,", "C, B,"]);
        assert_eq!(c.spec.token_count, 4);
        assert!(c.token_audit().is_empty());
    }

    #[test]
    fn too_many_shots() {
        let vocab = EntityVocabulary::custom(vec!["A".into(), "B".into()]).unwrap();
        assert!(matches!(
            synth_icl(&vocab, 3),
            Err(Error::NotEnoughEntities {
                needed: 3,
                available: 2
            })
        ));
    }

    #[test]
    fn candidate_count() {
        let catalog = EntityCatalog::builtin();
        // Base corpus only supplies the shape here; a 2-shot base keeps the test fast.
        let base = synth_icl(&catalog.vocabulary(DomainTag::Country).unwrap(), 4).unwrap();
        let c = synth_ablation(&base, AblationVariant::Candidate, &catalog, 0).unwrap();
        assert_eq!(c.len(), 15 * 14 * 13 * 12);
        assert_eq!(c.variant.as_deref(), Some("candidate"));
        let colors = synth_icl(&catalog.vocabulary(DomainTag::Color).unwrap(), 2).unwrap();
        assert!(synth_ablation(&colors, AblationVariant::Candidate, &catalog, 0).is_err());
    }

    #[test]
    fn space_fuses_fourth_entity() {
        let vocab =
            EntityVocabulary::custom(vec!["France".into(), "Mexico".into(), "Egypt".into(), "Russia".into()]).unwrap();
        let mut base = synth_icl(&vocab, 4).unwrap();
        base.lines.truncate(1);
        let c = synth_ablation(&base, AblationVariant::Space, &EntityCatalog::builtin(), 0).unwrap();
        assert_eq!(c.lines[0], "France, Mexico, Egypt,  Russia,");
        assert_eq!(tokenize(&c.lines[0])[6], " Russia");
        assert!(c.token_audit().is_empty());
    }

    #[test]
    fn prefix_adds_one_token() {
        let vocab = EntityVocabulary::custom(vec!["A".into(), "B".into()]).unwrap();
        let base = synth_icl(&vocab, 2).unwrap();
        let c = synth_ablation(&base, AblationVariant::Prefix, &EntityCatalog::builtin(), 0).unwrap();
        assert_eq!(c.lines[0], ",A, B,");
        assert_eq!(c.spec.token_count, 5);
        assert!(c.token_audit().is_empty());
    }

    #[test]
    fn fusion_samples_are_distinct_and_seeded() {
        let catalog = EntityCatalog::builtin();
        let vocab = EntityVocabulary::custom(vec!["A".into(), "B".into(), "C".into(), "D".into()]).unwrap();
        let base = synth_icl(&vocab, 4).unwrap();
        let a = synth_ablation(&base, AblationVariant::Fusion2, &catalog, 9).unwrap();
        let b = synth_ablation(&base, AblationVariant::Fusion2, &catalog, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 24);
        assert_eq!(a.lines.iter().collect::<HashSet<_>>().len(), 24);
        assert!(a.token_audit().is_empty());
        assert_ne!(
            a,
            synth_ablation(&base, AblationVariant::Fusion2, &catalog, 10).unwrap()
        );
    }

    #[test]
    fn unknown_variant() {
        assert!("bogus".parse::<AblationVariant>().is_err());
        assert_eq!("fusion1".parse::<AblationVariant>().unwrap(), AblationVariant::Fusion1);
    }

    #[test]
    fn alphabet_on_colors() {
        let catalog = EntityCatalog::builtin();
        let c = synth_pattern(&catalog.vocabulary(DomainTag::Color).unwrap(), &Pattern::Alphabet, 3).unwrap();
        assert!(!c.is_empty());
        for line in &c.lines {
            let e = line_entities(line).unwrap();
            let first: Vec<char> = e.iter().map(|s| s.chars().next().unwrap()).collect();
            assert!(first.windows(2).all(|w| w[0] <= w[1]), "{line}");
        }
    }

    #[test]
    fn size_forces_single_order() {
        let vocab = EntityVocabulary::custom(vec!["Cow".into(), "Mouse".into()]).unwrap();
        let pattern = Pattern::Ordered(vec!["Mouse".into(), "Cow".into()]);
        let c = synth_pattern(&vocab, &pattern, 2).unwrap();
        assert_eq!(c.lines, ["Mouse, Cow,"]);
    }

    #[test]
    fn region_with_too_many_shots() {
        let catalog = EntityCatalog::builtin();
        let asia = Pattern::resolve(PatternKind::Asia, &catalog).unwrap();
        let vocab = catalog.vocabulary(DomainTag::Country).unwrap();
        let n = catalog.region("asia").unwrap().len();
        assert!(matches!(
            synth_pattern(&vocab, &asia, n + 1),
            Err(Error::NotEnoughEntities { .. })
        ));
        let c = synth_pattern(&vocab, &asia, 3).unwrap();
        assert_eq!(c.len(), n * (n - 1) * (n - 2));
        assert!(c.lines.iter().all(|l| asia.accepts_line(l)));
    }
}
