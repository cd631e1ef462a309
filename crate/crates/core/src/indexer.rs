//! Full-text inverted index and deterministic hashed-feature embeddings.
//!
//! Embeddings are 256-dimensional signed feature-hashing vectors: each
//! token is hashed with 64-bit FNV-1a (fixed, published constants), the
//! bucket is `hash mod 256`, the sign comes from bit 63, counts are
//! accumulated and the vector is L2-normalized. The embedding is a pure
//! function of the input bytes, so indices and rankings are bit-identical
//! across platforms. Empty text embeds to the zero vector.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::afs::Afs;
use crate::digest::{sha256_fields, sha256_hex};
use crate::error::{AfsError, Result};
use crate::node::NodeKind;
use crate::path::AfsPath;

pub const EMBEDDING_DIM: usize = 256;

/// FNV-1a 64-bit offset basis; the published seed of the embedder.
pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Lowercases, splits on any non-ASCII-alphanumeric character and drops
/// empty tokens.
pub fn tokenize(text: &[u8]) -> Vec<String> {
    let text = String::from_utf8_lossy(text);
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            current.push(c.to_ascii_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn zero() -> Self {
        EmbeddingVector(vec![0.0; EMBEDDING_DIM])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }
}

/// Signed feature-hashing embedding of `text`.
pub fn embed(text: &[u8]) -> EmbeddingVector {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return EmbeddingVector::zero();
    }
    let mut accum = vec![0.0f64; EMBEDDING_DIM];
    for token in &tokens {
        let hash = fnv1a64(token.as_bytes());
        let bucket = (hash % EMBEDDING_DIM as u64) as usize;
        let sign = if hash >> 63 == 1 { -1.0 } else { 1.0 };
        accum[bucket] += sign;
    }
    let norm: f64 = accum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return EmbeddingVector(accum);
    }
    for v in accum.iter_mut() {
        *v /= norm;
    }
    EmbeddingVector(accum)
}

/// Cosine similarity in [-1, 1]; zero when either vector is zero.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.0.iter().zip(b.0.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostingList {
    pub token: String,
    /// (path, term frequency), sorted by path, no duplicates.
    pub entries: Vec<(String, u64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexManifest {
    root: String,
    /// Digest over the indexed corpus (paths and content hashes).
    #[serde(rename = "corpusDigest")]
    corpus_digest: String,
    paths: Vec<String>,
}

/// A built index: postings plus document vectors, persisted under
/// `<store>/index/`.
pub struct IndexHandle {
    root: AfsPath,
    corpus_digest: String,
    paths: Vec<AfsPath>,
    vectors: Vec<EmbeddingVector>,
}

pub const INDEX_DIR: &str = "index";
const POSTINGS_FILE: &str = "postings.ndjson";
const VECTORS_FILE: &str = "vectors.bin";
const MANIFEST_FILE: &str = "manifest.json";

fn corpus_digest(docs: &[(AfsPath, String)]) -> String {
    let fields: Vec<Vec<u8>> = docs
        .iter()
        .flat_map(|(path, hash)| {
            vec![path.to_string().into_bytes(), hash.clone().into_bytes()]
        })
        .collect();
    sha256_fields(fields.iter().map(|f| f.as_slice()))
}

/// Documents under `root`: every non-archived, non-directory node,
/// embedded from the bytes `read` returns. Index construction uses the
/// internal traversal — building an index is not a namespace operation
/// and emits no per-document read events.
fn corpus(afs: &Afs, root: &AfsPath) -> Result<Vec<(AfsPath, Vec<u8>, String)>> {
    let mut docs = Vec::new();
    for (path, record) in afs.walk(root, false, usize::MAX)? {
        if record.meta.kind == NodeKind::Directory {
            continue;
        }
        let bytes = afs.read_raw(&path)?;
        docs.push((path, bytes, record.content_hash));
    }
    Ok(docs)
}

/// Builds the index for the subtree at `root` and persists it under
/// `store_dir/index/`.
pub fn build_index(afs: &Afs, root: &AfsPath, store_dir: &Path) -> Result<IndexHandle> {
    let docs = corpus(afs, root)?;
    let digest_input: Vec<(AfsPath, String)> =
        docs.iter().map(|(p, _, h)| (p.clone(), h.clone())).collect();
    let corpus_digest = corpus_digest(&digest_input);

    let mut postings: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut paths = Vec::new();
    let mut vectors = Vec::new();
    for (path, bytes, _) in &docs {
        for token in tokenize(bytes) {
            *postings
                .entry(token)
                .or_default()
                .entry(path.to_string())
                .or_insert(0) += 1;
        }
        paths.push(path.clone());
        vectors.push(embed(bytes));
    }

    let index_dir = store_dir.join(INDEX_DIR);
    fs::create_dir_all(&index_dir).map_err(|e| AfsError::store_io("create index dir", e))?;

    let mut postings_text = String::new();
    for (token, entries) in &postings {
        let list = PostingList {
            token: token.clone(),
            entries: entries.iter().map(|(p, tf)| (p.clone(), *tf)).collect(),
        };
        postings_text.push_str(
            &serde_json::to_string(&list)
                .map_err(|e| AfsError::StoreFailure { reason: format!("serialize postings: {e}") })?,
        );
        postings_text.push('\n');
    }
    fs::write(index_dir.join(POSTINGS_FILE), postings_text)
        .map_err(|e| AfsError::store_io("write postings", e))?;

    // Row-major little-endian f32 (the on-disk format quantizes the
    // f64 working vectors).
    let mut vector_bytes = Vec::with_capacity(vectors.len() * EMBEDDING_DIM * 4);
    for vector in &vectors {
        for value in &vector.0 {
            vector_bytes.extend_from_slice(&(*value as f32).to_le_bytes());
        }
    }
    fs::write(index_dir.join(VECTORS_FILE), vector_bytes)
        .map_err(|e| AfsError::store_io("write vectors", e))?;

    let manifest = IndexManifest {
        root: root.to_string(),
        corpus_digest: corpus_digest.clone(),
        paths: paths.iter().map(|p| p.to_string()).collect(),
    };
    fs::write(
        index_dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)
            .map_err(|e| AfsError::StoreFailure { reason: format!("serialize index manifest: {e}") })?,
    )
    .map_err(|e| AfsError::store_io("write index manifest", e))?;

    Ok(IndexHandle { root: root.clone(), corpus_digest, paths, vectors })
}

/// Loads a previously persisted index.
pub fn load_index(store_dir: &Path) -> Result<IndexHandle> {
    let index_dir = store_dir.join(INDEX_DIR);
    let manifest_bytes = fs::read(index_dir.join(MANIFEST_FILE))
        .map_err(|_| AfsError::NotFound { path: index_dir.display().to_string() })?;
    let manifest: IndexManifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| AfsError::StoreCorrupt { reason: format!("index manifest: {e}") })?;
    let vector_bytes = fs::read(index_dir.join(VECTORS_FILE))
        .map_err(|e| AfsError::store_io("read vectors", e))?;
    if vector_bytes.len() != manifest.paths.len() * EMBEDDING_DIM * 4 {
        return Err(AfsError::StoreCorrupt { reason: "vectors.bin size mismatch".into() });
    }
    let mut vectors = Vec::with_capacity(manifest.paths.len());
    for row in 0..manifest.paths.len() {
        let mut values = Vec::with_capacity(EMBEDDING_DIM);
        for col in 0..EMBEDDING_DIM {
            let offset = (row * EMBEDDING_DIM + col) * 4;
            let mut bytes = [0u8; 4];
            bytes.copy_from_slice(&vector_bytes[offset..offset + 4]);
            values.push(f32::from_le_bytes(bytes) as f64);
        }
        // Restore the unit-norm invariant after f32 quantization.
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in values.iter_mut() {
                *v /= norm;
            }
        }
        vectors.push(EmbeddingVector(values));
    }
    let mut paths = Vec::with_capacity(manifest.paths.len());
    for text in &manifest.paths {
        paths.push(AfsPath::parse(text)?);
    }
    Ok(IndexHandle {
        root: AfsPath::parse(&manifest.root)?,
        corpus_digest: manifest.corpus_digest,
        paths,
        vectors,
    })
}

impl IndexHandle {
    pub fn root(&self) -> &AfsPath {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Top-`k` by cosine against the query embedding, ties broken by
    /// ascending canonical path. Errors with `StaleIndex` when the
    /// corpus changed since the index was built.
    pub fn query(&self, afs: &Afs, query: &str, k: usize) -> Result<Vec<(AfsPath, f64)>> {
        let docs = corpus(afs, &self.root)?;
        let digest_input: Vec<(AfsPath, String)> =
            docs.iter().map(|(p, _, h)| (p.clone(), h.clone())).collect();
        if corpus_digest(&digest_input) != self.corpus_digest {
            return Err(AfsError::StaleIndex {
                reason: format!("corpus under {} changed since the index was built", self.root),
            });
        }
        let query_embedding = embed(query.as_bytes());
        let mut scored: Vec<(AfsPath, f64)> = self
            .paths
            .iter()
            .zip(self.vectors.iter())
            .map(|(path, vector)| (path.clone(), cosine(&query_embedding, vector)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.to_string().cmp(&b.0.to_string()))
        });
        scored.truncate(k);
        Ok(scored)
    }
}

/// Brute-force oracle used by tests and small corpora: embeds every
/// document and ranks exhaustively with the same tie-break.
pub fn brute_force_rank(docs: &[(AfsPath, Vec<u8>)], query: &str, k: usize) -> Vec<(AfsPath, f64)> {
    let query_embedding = embed(query.as_bytes());
    let mut scored: Vec<(AfsPath, f64)> = docs
        .iter()
        .map(|(path, bytes)| (path.clone(), cosine(&query_embedding, &embed(bytes))))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.to_string().cmp(&b.0.to_string()))
    });
    scored.truncate(k);
    scored
}

/// Digest of raw text, used by consolidation to detect byte-identical
/// entries cheaply.
pub fn text_digest(bytes: &[u8]) -> String {
    sha256_hex(bytes)
}
