//! Embedding repository and cosine top-k retrieval.
//!
//! The default embedder hashes lowercased character trigrams into a fixed
//! number of signed buckets and L2-normalizes; it is deterministic and
//! dependency-free, and anything smarter can be swapped in behind the
//! [`Embedder`] trait without touching index or query semantics. The index is
//! an exact brute-force scan: at desk scale (10^3..10^5 entries) nothing
//! faster is needed, and exactness is what the tests pin.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::fnv1a64;
use crate::Result;

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 256;

/// Version stamp of the built-in embedder; stored in the index binary and
/// checked at load.
pub const TRIGRAM_EMBEDDER_VERSION: u32 = 1;

/// Text-to-unit-vector provider. Index and query must use the same provider;
/// the version stamp enforces that across persistence.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn version(&self) -> u32;
    /// Unit-norm embedding of non-empty text.
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

/// Hashed character-trigram bag embedder.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder { dim: DEFAULT_DIM }
    }
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Result<TrigramEmbedder> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        Ok(TrigramEmbedder { dim })
    }

    /// Signed bucket counts before normalization. Each *distinct* trigram
    /// contributes one signed unit: counting occurrences instead would weight
    /// repeated template glue (articles, separators) quadratically in the
    /// dot product and drown the level-stem signal the retrieval relies on.
    fn accumulate(&self, text: &str) -> Vec<f64> {
        let lower = text.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut hashes = Vec::with_capacity(chars.len());
        let mut add = |gram: &[char]| {
            let mut buf = [0u8; 16];
            let mut len = 0;
            for &c in gram {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            hashes.push(fnv1a64(&buf[..len]));
        };
        if chars.len() < 3 {
            add(&chars);
        } else {
            for w in chars.windows(3) {
                add(w);
            }
        }
        hashes.sort_unstable();
        hashes.dedup();
        let mut raw = vec![0.0f64; self.dim];
        for h in hashes {
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 1 { 1.0 } else { -1.0 };
            raw[bucket] += sign;
        }
        raw
    }
}

/// L2-normalizes with an f64 accumulator; zero vectors stay zero.
fn normalize(raw: &[f64]) -> Vec<f32> {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return raw.iter().map(|_| 0.0).collect();
    }
    raw.iter().map(|v| (v / norm) as f32).collect()
}

impl Embedder for TrigramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn version(&self) -> u32 {
        TRIGRAM_EMBEDDER_VERSION
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        if text.trim().is_empty() {
            return Err(Error::EmptyQuery);
        }
        Ok(normalize(&self.accumulate(text)))
    }
}

/// Cosine of two unit vectors, accumulated in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        s += *x as f64 * *y as f64;
    }
    s
}

/// One indexed instruction.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub id: String,
    pub text: String,
    pub embedding: Vec<f32>,
}

/// Exact brute-force cosine index. Build once, query many.
pub struct VectorIndex {
    entries: Vec<IndexEntry>,
    embedder: Box<dyn Embedder>,
}

/// A scored retrieval hit.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    id: String,
    text: String,
}

const EMB_MAGIC: &[u8; 4] = b"VFIX";

impl VectorIndex {
    /// Builds with the default trigram embedder.
    pub fn build<I>(pairs: I) -> Result<VectorIndex>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        Self::build_with(Box::<TrigramEmbedder>::default(), pairs)
    }

    pub fn build_with<I>(embedder: Box<dyn Embedder>, pairs: I) -> Result<VectorIndex>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut seen = std::collections::HashSet::new();
        let mut entries = Vec::new();
        for (id, text) in pairs {
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateEntryId(id));
            }
            if text.is_empty() {
                return Err(Error::EmptyQuery);
            }
            let embedding = embedder.embed(&text)?;
            entries.push(IndexEntry {
                id,
                text,
                embedding,
            });
        }
        Ok(VectorIndex { entries, embedder })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Exact top-k by cosine, descending; ties broken by the lower entry id.
    /// `k` larger than the index returns everything.
    pub fn query(&self, text: &str, k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::InvalidK);
        }
        if self.entries.is_empty() {
            return Err(Error::InsufficientData("empty index".into()));
        }
        let q = self.embedder.embed(text)?;
        let mut scored: Vec<(f64, &IndexEntry)> = self
            .entries
            .iter()
            .map(|e| (cosine(&q, &e.embedding), e))
            .collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("cosine scores are finite")
                .then_with(|| a.1.id.cmp(&b.1.id))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(score, e)| Hit {
                id: e.id.clone(),
                text: e.text.clone(),
                score,
            })
            .collect())
    }

    /// Retrieval policy for prompt grounding: top-k texts at or above
    /// `min_score`, in similarity order. An empty result is a valid outcome
    /// (the caller falls back to an ungrounded prompt); an empty index
    /// grounds nothing.
    pub fn ground(&self, instruction: &str, k: usize, min_score: f64) -> Result<Vec<String>> {
        if k == 0 {
            return Err(Error::InvalidK);
        }
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self
            .query(instruction, k)?
            .into_iter()
            .filter(|h| h.score >= min_score)
            .map(|h| h.text)
            .collect())
    }

    /// File pair for a base path: `<base>.jsonl` and `<base>.emb`.
    pub fn file_paths(base: &Path) -> (PathBuf, PathBuf) {
        let mut a = base.as_os_str().to_os_string();
        a.push(".jsonl");
        let mut b = base.as_os_str().to_os_string();
        b.push(".emb");
        (PathBuf::from(a), PathBuf::from(b))
    }

    /// Persists as a JSON-lines file of `{"id","text"}` plus a binary
    /// sibling of packed f32 embeddings with a `{dim, count, version}`
    /// header.
    pub fn save(&self, base: &Path) -> Result<()> {
        let (jsonl_path, emb_path) = Self::file_paths(base);
        let mut jsonl = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(
                &mut jsonl,
                &EntryLine {
                    id: e.id.clone(),
                    text: e.text.clone(),
                },
            )?;
            jsonl.push(b'\n');
        }
        std::fs::write(&jsonl_path, jsonl)?;

        let dim = self.embedder.dim();
        let mut emb = Vec::with_capacity(16 + self.entries.len() * dim * 4);
        emb.extend_from_slice(EMB_MAGIC);
        emb.extend_from_slice(&(dim as u32).to_le_bytes());
        emb.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        emb.extend_from_slice(&self.embedder.version().to_le_bytes());
        for e in &self.entries {
            for v in &e.embedding {
                emb.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(&emb_path)?;
        f.write_all(&emb)?;
        Ok(())
    }

    /// Loads a persisted index with the default embedder family; the stored
    /// embedder version must match.
    pub fn load(base: &Path) -> Result<VectorIndex> {
        let (jsonl_path, emb_path) = Self::file_paths(base);
        let bytes = std::fs::read(&emb_path)?;
        if bytes.len() < 20 || &bytes[0..4] != EMB_MAGIC {
            return Err(Error::IndexCorrupt("bad embedding file magic".into()));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let version = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
        if version != TRIGRAM_EMBEDDER_VERSION {
            return Err(Error::IndexCorrupt(format!(
                "embedder version {version}, this build embeds v{TRIGRAM_EMBEDDER_VERSION}"
            )));
        }
        let expect = 20 + count * dim * 4;
        if bytes.len() != expect {
            return Err(Error::IndexCorrupt(format!(
                "embedding file holds {} bytes, header implies {expect}",
                bytes.len()
            )));
        }

        let file = std::fs::File::open(&jsonl_path)?;
        let mut lines = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: EntryLine = serde_json::from_str(&line)?;
            lines.push(e);
        }
        if lines.len() != count {
            return Err(Error::IndexCorrupt(format!(
                "jsonl sibling holds {} entries, embedding header says {count}",
                lines.len()
            )));
        }

        let mut entries = Vec::with_capacity(count);
        let mut seen = std::collections::HashSet::new();
        for (i, line) in lines.into_iter().enumerate() {
            if !seen.insert(line.id.clone()) {
                return Err(Error::DuplicateEntryId(line.id));
            }
            let start = 20 + i * dim * 4;
            let embedding: Vec<f32> = bytes[start..start + dim * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push(IndexEntry {
                id: line.id,
                text: line.text,
                embedding,
            });
        }
        Ok(VectorIndex {
            entries,
            embedder: Box::new(TrigramEmbedder::new(dim)?),
        })
    }
}
