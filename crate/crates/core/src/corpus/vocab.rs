use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Document};
use crate::ndiff::Tensor;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Token vocabulary with padding at 0 and unknown at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;

    /// Vocabulary from an ordered token list; `PAD` and `UNK` are prepended
    /// and duplicates dropped.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut v = Self {
            tokens: vec![PAD.into(), UNK.into()],
            index: HashMap::new(),
        };
        v.index.insert(PAD.into(), 0);
        v.index.insert(UNK.into(), 1);
        for t in tokens {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token id, or the unknown id for out-of-vocabulary tokens.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

/// Tokens with corpus frequency ≥ `min_freq`, ordered by descending
/// frequency then lexicographically.
pub fn build_vocab(docs: &[Document], min_freq: usize) -> Vocab {
    assert!(min_freq >= 1, "min_freq must be at least 1");
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in docs {
        for t in d.flat_tokens() {
            if t != PAD && t != UNK {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))
}

/// `|vocab| × d_emb` word-vector matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub d_emb: usize,
}

impl EmbeddingTable {
    /// Uniform `[-0.1, 0.1]` rows from `seed`, padding row zeroed.
    pub fn random(rows: usize, d_emb: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f64> = (0..rows * d_emb)
            .map(|_| rng.random_range(-0.1..=0.1))
            .collect();
        data[..d_emb.min(rows * d_emb)]
            .iter_mut()
            .for_each(|x| *x = 0.0);
        Self {
            matrix: Tensor::matrix(rows, d_emb, data).expect("embedding shape"),
            d_emb,
        }
    }
}

/// Loads whitespace-separated `token v1 … v_d` lines. Matching is exact
/// after lowercasing both sides; the first occurrence of a token wins.
/// Tokens not found keep their seeded random row; the padding row is zeroed.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocab,
    d_emb: usize,
    seed: u64,
) -> Result<EmbeddingTable, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut wanted: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, t) in vocab.tokens().iter().enumerate().skip(2) {
        wanted.entry(t.to_lowercase()).or_default().push(i);
    }
    let mut table = EmbeddingTable::random(vocab.len(), d_emb, seed);
    let mut filled: HashMap<String, ()> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if values.len() != d_emb {
            return Err(CorpusError::Embedding {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected {d_emb} values, found {}", values.len()),
            });
        }
        let key = token.to_lowercase();
        let Some(rows) = wanted.get(&key) else {
            continue;
        };
        if filled.insert(key, ()).is_some() {
            continue;
        }
        let mut vec = Vec::with_capacity(d_emb);
        for v in values {
            vec.push(v.parse::<f64>().map_err(|e| CorpusError::Embedding {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("bad value {v:?}: {e}"),
            })?);
        }
        for &r in rows {
            table.matrix.data_mut()[r * d_emb..(r + 1) * d_emb].copy_from_slice(&vec);
        }
    }
    table.matrix.data_mut()[..d_emb]
        .iter_mut()
        .for_each(|x| *x = 0.0);
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::sentence;
    use super::*;

    fn doc_with(tokens: &[&str]) -> Document {
        let heads: Vec<i64> = (0..tokens.len())
            .map(|i| if i == 0 { -1 } else { 0 })
            .collect();
        Document {
            doc_id: "d".into(),
            sentences: vec![sentence(tokens, &heads)],
            entities: vec![],
            facts: vec![],
        }
    }

    #[test]
    fn frequency_threshold() {
        let v = build_vocab(&[doc_with(&["a", "b", "a", "a"])], 2);
        assert_eq!(v.tokens(), &[PAD, UNK, "a"]);
    }

    #[test]
    fn empty_corpus() {
        assert_eq!(build_vocab(&[], 1).tokens(), &[PAD, UNK]);
    }

    #[test]
    fn lexicographic_tie_break() {
        let v = build_vocab(&[doc_with(&["b", "a"])], 1);
        assert_eq!(v.tokens(), &[PAD, UNK, "a", "b"]);
        assert_eq!(v.id("zzz"), Vocab::UNK_ID);
        assert_eq!(v.id("b"), 3);
    }

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("vec.txt");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn full_coverage_copies_rows() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::from_tokens(["Alpha".to_string(), "beta".to_string()]);
        let p = write(&dir, "<pad> 9 9\n<unk> 1 2\nalpha 0.5 -0.5\nBETA 1 1\n");
        let t = load_embeddings(&p, &vocab, 2, 3).unwrap();
        assert_eq!(t.matrix.row(0), &[0.0, 0.0]);
        assert_eq!(t.matrix.row(2), &[0.5, -0.5]);
        assert_eq!(t.matrix.row(3), &[1.0, 1.0]);
    }

    #[test]
    fn no_coverage_is_seeded() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::from_tokens(["x".to_string(), "y".to_string()]);
        let p = write(&dir, "other 1 2 3\n");
        let a = load_embeddings(&p, &vocab, 3, 42).unwrap();
        let b = load_embeddings(&p, &vocab, 3, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, EmbeddingTable::random(4, 3, 42));
        assert!(a.matrix.data()[3..].iter().all(|v| v.abs() <= 0.1));
        assert_ne!(a, load_embeddings(&p, &vocab, 3, 43).unwrap());
    }

    #[test]
    fn partial_coverage_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::from_tokens(["x".to_string(), "y".to_string()]);
        let p = write(&dir, "x 1 2\n");
        let a = load_embeddings(&p, &vocab, 2, 7).unwrap();
        let b = load_embeddings(&p, &vocab, 2, 7).unwrap();
        assert_eq!(
            a.matrix
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            b.matrix
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        );
        assert_eq!(a.matrix.row(2), &[1.0, 2.0]);
        assert_eq!(
            a.matrix.row(3),
            EmbeddingTable::random(4, 2, 7).matrix.row(3)
        );
    }

    #[test]
    fn dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocab::from_tokens(["x".to_string()]);
        let p = write(&dir, "x 1 2 3\n");
        let err = load_embeddings(&p, &vocab, 2, 0).unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
