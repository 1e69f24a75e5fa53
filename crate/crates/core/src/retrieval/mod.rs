//! Dynamic few-shot example store.
//!
//! Every user turn of the training split becomes an [`ExampleRecord`] whose
//! embedding is computed from the previous system response, the user
//! utterance and the turn's slots. Queries return the top-K records whose
//! cosine similarity strictly exceeds a threshold.

mod embed;

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use embed::{
    tokenize, CachingProvider, EmbeddingProvider, HashEmbeddingProvider, RemoteEmbeddingClient,
};

use crate::dialogue::{Dialogue, SlotValues};
use crate::http::HttpError;

pub const INDEX_MAGIC: &[u8; 8] = b"GEMIDX\0\0";
pub const INDEX_VERSION: u32 = 1;
pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.3;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("zero-norm embedding for {0}")]
    ZeroNorm(String),
    #[error("non-finite embedding value for {0}")]
    NonFinite(String),
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("persisted index has dimension {persisted} but the provider produces {provider}")]
    DimensionDrift { persisted: usize, provider: usize },
    #[error("index file: {0}")]
    Format(String),
    #[error("embedding provider: {0}")]
    Provider(String),
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
}

/// Training turn with its embedding and gold slot-value pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub embedding: Vec<f64>,
    pub combined_text: String,
    pub gold_pairs: SlotValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedExample {
    pub record: ExampleRecord,
    pub similarity: f64,
}

/// Structured text for a turn: previous system response, user utterance, sorted slots.
pub fn combine_fields<'a>(
    system_prev: &str,
    user_current: &str,
    slots: impl IntoIterator<Item = &'a String>,
) -> String {
    let slots: BTreeSet<&String> = slots.into_iter().collect();
    let slot_list = slots
        .into_iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(", ");
    format!("system: {system_prev} | user: {user_current} | slots: {slot_list}")
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exhaustive-scan cosine index.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    records: Vec<ExampleRecord>,
    ids: HashSet<String>,
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ExampleRecord] {
        &self.records
    }

    pub fn insert(&mut self, record: ExampleRecord) -> Result<(), RetrievalError> {
        if record.embedding.len() != self.dimension {
            return Err(RetrievalError::Dimension {
                expected: self.dimension,
                actual: record.embedding.len(),
            });
        }
        if record.embedding.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite(record.id));
        }
        if norm(&record.embedding) == 0.0 {
            return Err(RetrievalError::ZeroNorm(record.id));
        }
        if !self.ids.insert(record.id.clone()) {
            return Err(RetrievalError::DuplicateId(record.id));
        }
        self.records.push(record);
        Ok(())
    }

    /// Records with cosine similarity strictly above `tau`, best first, at most `k`.
    ///
    /// Equal similarities are ordered by ascending id.
    pub fn query_topk(
        &self,
        query: &[f64],
        k: usize,
        tau: f64,
    ) -> Result<Vec<RetrievedExample>, RetrievalError> {
        if query.len() != self.dimension {
            return Err(RetrievalError::Dimension {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite("query".into()));
        }
        if norm(query) == 0.0 {
            return Err(RetrievalError::ZeroNorm("query".into()));
        }
        let mut hits: Vec<(f64, &ExampleRecord)> = self
            .records
            .iter()
            .map(|r| (cosine(&r.embedding, query), r))
            .filter(|(s, _)| *s > tau)
            .collect();
        hits.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("similarities are finite")
                .then_with(|| a.1.id.cmp(&b.1.id))
        });
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(similarity, r)| RetrievedExample {
                record: r.clone(),
                similarity,
            })
            .collect())
    }

    /// Versioned binary layout: magic, version, dimension, count, then records
    /// (id, combined text, gold pairs, little-endian f64 embedding).
    pub fn persist(&self, mut w: impl Write) -> Result<(), RetrievalError> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in &self.records {
            write_str(&mut w, &r.id)?;
            write_str(&mut w, &r.combined_text)?;
            w.write_all(&(r.gold_pairs.len() as u32).to_le_bytes())?;
            for (slot, value) in &r.gold_pairs {
                write_str(&mut w, slot)?;
                write_str(&mut w, value)?;
            }
            for v in &r.embedding {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a persisted index, checking its dimension against the provider's when given.
    pub fn load(
        mut r: impl Read,
        provider_dimension: Option<usize>,
    ) -> Result<Self, RetrievalError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(RetrievalError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != INDEX_VERSION {
            return Err(RetrievalError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let dimension = read_u32(&mut r)? as usize;
        if let Some(provider) = provider_dimension {
            if provider != dimension {
                return Err(RetrievalError::DimensionDrift {
                    persisted: dimension,
                    provider,
                });
            }
        }
        let mut count_bytes = [0u8; 8];
        r.read_exact(&mut count_bytes)?;
        let count = u64::from_le_bytes(count_bytes);
        let mut index = VectorIndex::new(dimension);
        for _ in 0..count {
            let id = read_str(&mut r)?;
            let combined_text = read_str(&mut r)?;
            let pairs = read_u32(&mut r)?;
            let mut gold_pairs = SlotValues::new();
            for _ in 0..pairs {
                let slot = read_str(&mut r)?;
                gold_pairs.insert(slot, read_str(&mut r)?);
            }
            let mut embedding = Vec::with_capacity(dimension);
            let mut b = [0u8; 8];
            for _ in 0..dimension {
                r.read_exact(&mut b)?;
                embedding.push(f64::from_le_bytes(b));
            }
            index.insert(ExampleRecord {
                id,
                embedding,
                combined_text,
                gold_pairs,
            })?;
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.persist(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn open(path: &Path, provider_dimension: Option<usize>) -> Result<Self, RetrievalError> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file), provider_dimension)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32, RetrievalError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String, RetrievalError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| RetrievalError::Format("string is not UTF-8".into()))
}

/// Record id for a dialogue turn.
pub fn record_id(dialogue_id: &str, turn: usize) -> String {
    format!("{dialogue_id}#{turn:04}")
}

/// One record per user turn of the (training) dialogues.
pub fn build_index(
    dialogues: &[Dialogue],
    provider: &dyn EmbeddingProvider,
) -> Result<VectorIndex, RetrievalError> {
    let mut pending = Vec::new();
    for d in dialogues {
        for t in d.user_turn_indices() {
            let turn = &d.turns[t];
            let text = combine_fields(d.previous_assistant_text(t), &turn.text, &turn.gold_slots);
            pending.push((record_id(&d.id, t), text, turn.gold_turn_values.clone()));
        }
    }
    let mut index = VectorIndex::new(provider.dimension());
    for chunk in pending.chunks(64) {
        let texts: Vec<String> = chunk.iter().map(|(_, t, _)| t.clone()).collect();
        let vectors = provider.embed_batch(&texts)?;
        for ((id, combined_text, gold_pairs), embedding) in chunk.iter().cloned().zip(vectors) {
            index.insert(ExampleRecord {
                id,
                embedding,
                combined_text,
                gold_pairs,
            })?;
        }
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::Turn;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, v: Vec<f64>) -> ExampleRecord {
        ExampleRecord {
            id: id.into(),
            embedding: v,
            combined_text: format!("text {id}"),
            gold_pairs: SlotValues::from([("hotel-area".to_string(), id.to_string())]),
        }
    }

    /// Exhaustive scan written independently of `query_topk`.
    fn oracle(records: &[ExampleRecord], q: &[f64], k: usize, tau: f64) -> Vec<String> {
        let qn: f64 = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut scored = Vec::new();
        for r in records {
            let mut dot = 0.0;
            let mut rn = 0.0;
            for i in 0..q.len() {
                dot += r.embedding[i] * q[i];
                rn += r.embedding[i] * r.embedding[i];
            }
            let s = dot / (rn.sqrt() * qn);
            if s > tau {
                scored.push((s, r.id.clone()));
            }
        }
        // insertion sort: higher similarity first, then smaller id
        let mut ordered: Vec<(f64, String)> = Vec::new();
        for item in scored {
            let pos = ordered
                .iter()
                .position(|o| item.0 > o.0 || (item.0 == o.0 && item.1 < o.1))
                .unwrap_or(ordered.len());
            ordered.insert(pos, item);
        }
        ordered.into_iter().take(k).map(|(_, id)| id).collect()
    }

    #[test]
    fn combine_fields_template() {
        assert_eq!(
            combine_fields("", "hi", &BTreeSet::new()),
            "system:  | user: hi | slots: "
        );
        let slots: Vec<String> = vec!["b".into(), "a".into()];
        assert_eq!(
            combine_fields("ok", "x", &slots),
            "system: ok | user: x | slots: a, b"
        );
        assert_eq!(
            combine_fields("ok", "x", &slots),
            combine_fields("ok", "x", &slots)
        );
    }

    #[test]
    fn threshold_excludes_orthogonal() {
        let mut index = VectorIndex::new(2);
        index.insert(rec("e1", vec![1.0, 0.0])).unwrap();
        index.insert(rec("e2", vec![0.0, 1.0])).unwrap();
        let hits = index.query_topk(&[1.0, 0.0], 5, 0.5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record.id, "e1");
        assert!(index
            .query_topk(&[1.0, 1.0], 5, 0.999_999)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn contract_errors() {
        let mut index = VectorIndex::new(2);
        assert!(matches!(
            index.insert(rec("z", vec![0.0, 0.0])),
            Err(RetrievalError::ZeroNorm(_))
        ));
        assert!(matches!(
            index.insert(rec("d", vec![1.0])),
            Err(RetrievalError::Dimension { .. })
        ));
        index.insert(rec("a", vec![1.0, 0.0])).unwrap();
        assert!(matches!(
            index.insert(rec("a", vec![0.0, 1.0])),
            Err(RetrievalError::DuplicateId(_))
        ));
        assert!(matches!(
            index.query_topk(&[0.0, 0.0], 1, 0.0),
            Err(RetrievalError::ZeroNorm(_))
        ));
        assert!(matches!(
            index.query_topk(&[1.0, 0.0, 0.0], 1, 0.0),
            Err(RetrievalError::Dimension { .. })
        ));
    }

    #[test]
    fn empty_index_returns_nothing() {
        let index = build_index(&[], &HashEmbeddingProvider::new(8)).unwrap();
        assert!(index.is_empty());
        assert!(index.query_topk(&[1.0; 8], 5, -1.0).unwrap().is_empty());
    }

    #[test]
    fn one_record_per_user_turn() {
        let mut a1 = Turn::user("i need a hotel in the north");
        a1.gold_slots.insert("hotel-area".into());
        a1.gold_turn_values
            .insert("hotel-area".into(), "north".into());
        let d1 = Dialogue::new(
            "A",
            vec![
                a1,
                Turn::assistant("what price?"),
                Turn::user("cheap please"),
            ],
        );
        let d2 = Dialogue::new(
            "B",
            vec![Turn::user("book a taxi"), Turn::assistant("where to?")],
        );
        let index = build_index(&[d1, d2], &HashEmbeddingProvider::new(16)).unwrap();
        assert_eq!(index.len(), 3);
        assert_eq!(index.records()[0].gold_pairs["hotel-area"], "north");
        assert_eq!(
            index.records()[1].combined_text,
            "system: what price? | user: cheap please | slots: "
        );
        assert_eq!(index.records()[2].id, "B#0000");
    }

    #[test]
    fn persist_load_round_trip_and_drift() {
        let mut index = VectorIndex::new(3);
        index.insert(rec("x", vec![0.1, 0.2, 0.3])).unwrap();
        index.insert(rec("y", vec![-1.0, 0.5, 0.0])).unwrap();
        let mut buf = Vec::new();
        index.persist(&mut buf).unwrap();
        assert_eq!(VectorIndex::load(buf.as_slice(), Some(3)).unwrap(), index);
        assert!(matches!(
            VectorIndex::load(buf.as_slice(), Some(4)),
            Err(RetrievalError::DimensionDrift {
                persisted: 3,
                provider: 4
            })
        ));
    }

    #[test]
    fn hundred_random_vectors_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let mut index = VectorIndex::new(6);
        for i in 0..100 {
            index
                .insert(rec(
                    &format!("r{i:03}"),
                    (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
                ))
                .unwrap();
        }
        let q: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got: Vec<String> = index
            .query_topk(&q, 7, 0.0)
            .unwrap()
            .into_iter()
            .map(|h| h.record.id)
            .collect();
        assert_eq!(got, oracle(index.records(), &q, 7, 0.0));
        assert_eq!(got.len(), 7);
    }

    proptest! {
        #[test]
        fn query_matches_exhaustive_oracle(
            seed in any::<u64>(), n in 0usize..40, k in 0usize..20, tau in -1.0f64..1.0, dup in any::<bool>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut index = VectorIndex::new(4);
            let base: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            for i in 0..n {
                let v = if dup && i % 3 == 0 { base.clone() } else { (0..4).map(|_| rng.random_range(-1.0..1.0)).collect() };
                index.insert(rec(&format!("{:02}", (i * 7) % 41), v)).ok();
            }
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hits = index.query_topk(&q, k, tau).unwrap();
            for pair in hits.windows(2) {
                prop_assert!(pair[0].similarity >= pair[1].similarity);
            }
            prop_assert!(hits.iter().all(|h| h.similarity > tau));
            let got: Vec<String> = hits.into_iter().map(|h| h.record.id).collect();
            prop_assert_eq!(got, oracle(index.records(), &q, k, tau));
        }

        #[test]
        fn self_similarity_is_one(v in proptest::collection::vec(-10.0f64..10.0, 1..16)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            prop_assert!((cosine(&v, &v) - 1.0).abs() <= 1e-12);
        }
    }
}
