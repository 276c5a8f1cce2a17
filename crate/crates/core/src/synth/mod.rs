//! Deterministic corpus generators.
//!
//! Every generator is a pure function of its vocabulary, parameters and seed.
//! Corpora are written as UTF-8 text, one sequence per line, with a JSON
//! manifest sidecar at `<path>.manifest.json`.

pub mod arithmetic;
pub mod entities;
pub mod icl;
pub mod natural;
pub mod scoring;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenizer::token_count;
use crate::types::SequenceSpec;

pub use arithmetic::{check_arithmetic_prompt, synth_arithmetic, ArithmeticTask, Operation};
pub use entities::{EntityCatalog, EntityVocabulary};
pub use icl::{synth_ablation, synth_icl, synth_pattern, AblationVariant, Pattern};
pub use natural::{select_natural, AnchorRule, NaturalSelection};
pub use scoring::score_icl_generations;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub spec: SequenceSpec,
    pub lines: Vec<String>,
    pub generator_id: String,
    pub seed: Option<u64>,
    pub variant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: SequenceSpec,
    pub generator_id: String,
    pub seed: Option<u64>,
    pub variant: Option<String>,
    pub sequence_count: usize,
    /// SHA-256 of the lines in order, each terminated by `\n`.
    pub checksum: String,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for line in &self.lines {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            spec: self.spec.clone(),
            generator_id: self.generator_id.clone(),
            seed: self.seed,
            variant: self.variant.clone(),
            sequence_count: self.lines.len(),
            checksum: self.checksum(),
        }
    }

    /// Lines whose token count differs from `spec.token_count`, as `(line index, count)`.
    pub fn token_audit(&self) -> Vec<(usize, usize)> {
        self.lines
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let n = token_count(l);
                (n != self.spec.token_count).then_some((i, n))
            })
            .collect()
    }

    pub fn manifest_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".manifest.json");
        PathBuf::from(p)
    }

    /// Writes the lines and the manifest sidecar; returns the manifest.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<CorpusManifest> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for line in &self.lines {
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let manifest = self.manifest();
        let mpath = Self::manifest_path(path);
        std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
        Ok(manifest)
    }

    /// Reads a corpus and its sidecar, verifying the checksum.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mpath = Self::manifest_path(path);
        let manifest: CorpusManifest =
            serde_json::from_str(&std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?)?;
        let lines = read_lines(path)?;
        let corpus = Corpus {
            spec: manifest.spec.clone(),
            lines,
            generator_id: manifest.generator_id.clone(),
            seed: manifest.seed,
            variant: manifest.variant.clone(),
        };
        let sum = corpus.checksum();
        if sum != manifest.checksum {
            return Err(Error::InvalidArgument(format!(
                "{} does not match its manifest checksum",
                path.display()
            )));
        }
        Ok(corpus)
    }
}

/// Reads a plain text file as lines (no manifest required).
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DomainTag;

    #[test]
    fn write_read_roundtrip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        let corpus = Corpus {
            spec: SequenceSpec::new(4, 2, DomainTag::Custom, Some(2)).unwrap(),
            lines: vec!["a, b,".into(), "b, a,".into()],
            generator_id: "test".into(),
            seed: None,
            variant: None,
        };
        let manifest = corpus.write(&path).unwrap();
        assert_eq!(manifest.sequence_count, 2);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a, b,\nb, a,\n");
        assert_eq!(Corpus::read(&path).unwrap(), corpus);
        std::fs::write(&path, "a, b,\n").unwrap();
        assert!(Corpus::read(&path).is_err());
        assert!(corpus.token_audit().is_empty());
    }
}
