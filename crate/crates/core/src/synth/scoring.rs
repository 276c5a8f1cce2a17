use std::collections::HashSet;

use super::entities::EntityVocabulary;

/// Fraction of generations that name an in-domain entity not already present
/// in the context or in any earlier generation.
///
/// Generations are compared after trimming whitespace and a trailing comma.
/// Every generation counts as seen once produced, correct or not. An empty
/// list scores 0.
pub fn score_icl_generations(generations: &[&str], vocab: &EntityVocabulary, context_entities: &[&str]) -> f64 {
    if generations.is_empty() {
        return 0.0;
    }
    let normalize = |s: &str| s.trim().trim_end_matches(',').trim().to_string();
    let mut seen: HashSet<String> = context_entities.iter().map(|e| normalize(e)).collect();
    let mut correct = 0usize;
    for g in generations {
        let g = normalize(g);
        if vocab.contains(&g) && !seen.contains(&g) {
            correct += 1;
        }
        seen.insert(g);
    }
    correct as f64 / generations.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::entities::EntityCatalog;
    use crate::types::DomainTag;

    fn countries() -> EntityVocabulary {
        EntityCatalog::builtin().vocabulary(DomainTag::Country).unwrap()
    }

    #[test]
    fn fresh_in_domain_entity_is_correct() {
        assert_eq!(
            score_icl_generations(&["Egypt"], &countries(), &["France", "Mexico"]),
            1.0
        );
    }

    #[test]
    fn repetition_of_context_is_incorrect() {
        assert_eq!(
            score_icl_generations(&["France"], &countries(), &["France", "Mexico"]),
            0.0
        );
    }

    #[test]
    fn repeated_generation_is_incorrect() {
        let mut vocab = countries();
        vocab.entities.push("United States of America".into());
        let gens = ["United States of America", "United States of America,"];
        assert_eq!(score_icl_generations(&gens, &vocab, &["France"]), 0.5);
    }

    #[test]
    fn out_of_domain_is_incorrect() {
        assert_eq!(score_icl_generations(&["Paris", "Japan,"], &countries(), &[]), 0.5);
        assert_eq!(score_icl_generations(&[], &countries(), &[]), 0.0);
    }
}
