//! Document vectors: a built-in hashed TF-IDF embedder with optional
//! randomized spectral reduction, an importer for vectors computed
//! elsewhere, and cosine distance.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::extraction::strip_demographic_tags;
use crate::rng::{self, site};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Builtin,
    External,
}

/// Row-major document vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub doc_ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f64>,
    pub normalized: bool,
    pub source: EmbeddingSource,
    /// Rows that are all zero (empty documents). They cannot be matched.
    pub zero_rows: Vec<usize>,
}

impl EmbeddingMatrix {
    pub fn from_rows(doc_ids: Vec<String>, rows: Vec<Vec<f64>>, source: EmbeddingSource) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if doc_ids.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: doc_ids.len(),
                got: rows.len(),
            });
        }
        let mut seen = HashSet::new();
        for id in &doc_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate embedding id `{id}`")));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut zero_rows = Vec::new();
        for (i, (id, mut row)) in doc_ids.iter().zip(rows).enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding row `{id}`")));
            }
            if !normalize(&mut row) {
                zero_rows.push(i);
            }
            data.extend(row);
        }
        Ok(EmbeddingMatrix {
            doc_ids,
            dim,
            data,
            normalized: true,
            source,
            zero_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index(&self) -> HashMap<&str, usize> {
        self.doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

/// Scales `v` to unit length unless it already is (to 1e-12). Returns false
/// (leaving `v` untouched) for the zero vector.
pub fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return false;
    }
    if (n - 1.0).abs() > 1e-12 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    true
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((1.0 - dot / (uu.sqrt() * vv.sqrt())).clamp(0.0, 2.0))
}

/// Distance between two rows already known to be unit length.
pub fn unit_distance(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (1.0 - dot).clamp(0.0, 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextField {
    TitleAndBody,
    BodyOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuiltinConfig {
    pub dims: usize,
    pub reduce_to: Option<usize>,
    pub power_iterations: usize,
    pub text: TextField,
}

impl Default for BuiltinConfig {
    fn default() -> Self {
        BuiltinConfig {
            dims: 1 << 18,
            reduce_to: Some(256),
            power_iterations: 1,
            text: TextField::TitleAndBody,
        }
    }
}

/// The text a document is embedded from: demographic tags are removed so
/// that distances cannot pick them up.
pub fn embedding_text(doc: &Document, field: TextField) -> String {
    match field {
        TextField::TitleAndBody => strip_demographic_tags(&doc.full_text()),
        TextField::BodyOnly => strip_demographic_tags(&doc.body),
    }
}

/// Anything that turns a text into a vector of fixed width.
pub trait TextEmbedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

type Sparse = Vec<(u32, f64)>;

/// Fitted hashed TF-IDF embedder.
#[derive(Debug, Clone)]
pub struct BuiltinEmbedder {
    dims: usize,
    seed: u64,
    n_docs: usize,
    doc_freq: HashMap<u32, u32>,
    projection: Option<Projection>,
}

#[derive(Debug, Clone)]
struct Projection {
    /// Sorted bucket ids with a row in `basis`.
    columns: Vec<u32>,
    /// |columns| x rank, row-major.
    basis: Vec<f64>,
    rank: usize,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty())
}

impl BuiltinEmbedder {
    fn counts(&self, text: &str) -> Sparse {
        let mut tf: HashMap<String, u32> = HashMap::new();
        for w in words(text) {
            *tf.entry(w).or_default() += 1;
        }
        let mut acc: HashMap<u32, f64> = HashMap::new();
        let mut entries: Vec<(String, u32)> = tf.into_iter().collect();
        entries.sort_unstable();
        for (w, c) in entries {
            let h = xxh3_64_with_seed(w.as_bytes(), self.seed);
            let bucket = (h % self.dims as u64) as u32;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            *acc.entry(bucket).or_default() += sign * (1.0 + f64::from(c).ln());
        }
        let mut out: Sparse = acc.into_iter().filter(|(_, v)| *v != 0.0).collect();
        out.sort_unstable_by_key(|(b, _)| *b);
        out
    }

    fn idf(&self, bucket: u32) -> f64 {
        let df = self.doc_freq.get(&bucket).copied().unwrap_or(0);
        ((1.0 + self.n_docs as f64) / (1.0 + f64::from(df))).ln() + 1.0
    }

    fn weighted(&self, text: &str) -> Sparse {
        let mut v = self.counts(text);
        for (b, x) in &mut v {
            *x *= self.idf(*b);
        }
        let n = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|(_, x)| *x /= n);
        }
        v
    }

    fn finish(&self, sparse: &Sparse) -> Vec<f64> {
        let mut out = match &self.projection {
            None => {
                let mut dense = vec![0.0; self.dims];
                for &(b, x) in sparse {
                    dense[b as usize] = x;
                }
                dense
            }
            Some(p) => {
                let mut dense = vec![0.0; p.rank];
                for &(b, x) in sparse {
                    if let Ok(row) = p.columns.binary_search(&b) {
                        for (d, v) in dense.iter_mut().zip(&p.basis[row * p.rank..(row + 1) * p.rank]) {
                            *d += x * v;
                        }
                    }
                }
                dense
            }
        };
        normalize(&mut out);
        out
    }
}

impl TextEmbedder for BuiltinEmbedder {
    fn dim(&self) -> usize {
        self.projection.as_ref().map_or(self.dims, |p| p.rank)
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        self.finish(&self.weighted(text))
    }
}

/// Fits the embedder on `texts` and returns it with the embedded rows.
pub fn fit_builtin<S: AsRef<str> + Sync>(
    texts: &[S],
    config: &BuiltinConfig,
    seed: u64,
) -> Result<(BuiltinEmbedder, Vec<Vec<f64>>)> {
    if config.dims < 16 || config.dims > u32::MAX as usize {
        return Err(Error::invalid(format!(
            "hash dimension {} outside 16..2^32",
            config.dims
        )));
    }
    if let Some(r) = config.reduce_to {
        if r == 0 || r >= config.dims {
            return Err(Error::invalid(format!("reduce_to {r} must be in 1..{}", config.dims)));
        }
    }
    let mut emb = BuiltinEmbedder {
        dims: config.dims,
        seed,
        n_docs: texts.len(),
        doc_freq: HashMap::new(),
        projection: None,
    };
    let counts: Vec<Sparse> = texts.par_iter().map(|t| emb.counts(t.as_ref())).collect();
    for row in &counts {
        for (b, _) in row {
            *emb.doc_freq.entry(*b).or_default() += 1;
        }
    }
    let rows: Vec<Sparse> = texts.par_iter().map(|t| emb.weighted(t.as_ref())).collect();
    if let Some(rank) = config.reduce_to {
        emb.projection = Some(spectral_basis(&rows, rank, config.power_iterations, seed));
    }
    let dense = rows.par_iter().map(|r| emb.finish(r)).collect();
    Ok((emb, dense))
}

pub fn embed_builtin(
    docs: &[Document],
    config: &BuiltinConfig,
    seed: u64,
) -> Result<(EmbeddingMatrix, BuiltinEmbedder)> {
    let texts: Vec<String> = docs.par_iter().map(|d| embedding_text(d, config.text)).collect();
    let (emb, rows) = fit_builtin(&texts, config, seed)?;
    let ids = docs.iter().map(|d| d.id.clone()).collect();
    Ok((EmbeddingMatrix::from_rows(ids, rows, EmbeddingSource::Builtin)?, emb))
}

/// Randomized truncated SVD of the sparse row matrix A (documents x touched
/// buckets); returns the top right singular vectors.
fn spectral_basis(rows: &[Sparse], rank: usize, power_iterations: usize, seed: u64) -> Projection {
    let mut columns: Vec<u32> = rows.iter().flatten().map(|(b, _)| *b).collect();
    columns.sort_unstable();
    columns.dedup();
    let m = columns.len();
    let n = rows.len();
    let sketch = (rank + 10).min(m).min(n).max(1);

    // Rows of A with column indices remapped into 0..m, and the transpose.
    let a: Vec<Vec<(usize, f64)>> = rows
        .iter()
        .map(|r| r.iter().map(|(b, x)| (columns.binary_search(b).unwrap(), *x)).collect())
        .collect();
    let mut at: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (i, r) in a.iter().enumerate() {
        for &(c, x) in r {
            at[c].push((i, x));
        }
    }

    let omega: Vec<f64> = columns
        .par_iter()
        .flat_map_iter(|&c| {
            let mut r = ChaCha8Rng::seed_from_u64(rng::derive_seed(seed, &[site::PROJECTION, u64::from(c)]));
            (0..sketch)
                .map(move |_| StandardNormal.sample(&mut r))
                .collect::<Vec<f64>>()
        })
        .collect();

    // A * M for M given row-major with m rows; output n x sketch.
    let mul_a = |mat: &[f64]| -> DMatrix<f64> {
        let data: Vec<Vec<f64>> = a
            .par_iter()
            .map(|r| {
                let mut out = vec![0.0; sketch];
                for &(c, x) in r {
                    for (o, v) in out.iter_mut().zip(&mat[c * sketch..(c + 1) * sketch]) {
                        *o += x * v;
                    }
                }
                out
            })
            .collect();
        DMatrix::from_fn(n, sketch, |i, j| data[i][j])
    };
    // A^T * Q for Q an n x sketch matrix; output row-major m x sketch.
    let mul_at = |q: &DMatrix<f64>| -> Vec<f64> {
        at.par_iter()
            .flat_map_iter(|col| {
                let mut out = vec![0.0; sketch];
                for &(i, x) in col {
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += x * q[(i, j)];
                    }
                }
                out
            })
            .collect()
    };

    let mut q = mul_a(&omega).qr().q();
    for _ in 0..power_iterations {
        let z = mul_at(&q);
        q = mul_a(&z).qr().q();
    }
    let z = mul_at(&q);
    let zm = DMatrix::from_row_slice(m, sketch, &z);
    let gram = zm.transpose() * &zm;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..sketch).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > top * 1e-12 && eig.eigenvalues[i] > 0.0)
        .take(rank)
        .collect();
    let r = keep.len().max(1);
    let mut basis = vec![0.0; m * r];
    for (j, &e) in keep.iter().enumerate() {
        let sigma = eig.eigenvalues[e].sqrt();
        let w = eig.eigenvectors.column(e);
        for c in 0..m {
            let mut s = 0.0;
            for t in 0..sketch {
                s += zm[(c, t)] * w[t];
            }
            basis[c * r + j] = s / sigma;
        }
    }
    Projection {
        columns,
        basis,
        rank: r,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub missing: Vec<String>,
    pub unexpected: usize,
}

const MAGIC: &[u8; 8] = b"SMEMB\0\0\x01";

/// Reads vectors from the text form (`id v1 v2 ...` per line) or the
/// binary form, reorders them to `expected`, and normalizes them. Absent
/// ids are left out and reported; more than 1% absent is an error, except
/// that a single absent id is always tolerated.
pub fn import_embeddings(path: &Path, expected: &[String]) -> Result<(EmbeddingMatrix, ImportReport)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (ids, dim, data) = if bytes.starts_with(MAGIC) {
        read_binary(&bytes)?
    } else {
        read_text(&bytes)?
    };
    let mut by_id: HashMap<&str, usize> = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if by_id.insert(id.as_str(), i).is_some() {
            return Err(Error::invalid(format!("{}: id `{id}` appears twice", path.display())));
        }
        if data[i * dim..(i + 1) * dim].iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding row `{id}`")));
        }
    }
    let mut report = ImportReport::default();
    let mut out_ids = Vec::new();
    let mut rows = Vec::new();
    let expected_set: HashSet<&str> = expected.iter().map(String::as_str).collect();
    for id in expected {
        match by_id.get(id.as_str()) {
            Some(&i) => {
                out_ids.push(id.clone());
                rows.push(data[i * dim..(i + 1) * dim].to_vec());
            }
            None => report.missing.push(id.clone()),
        }
    }
    report.unexpected = ids.iter().filter(|id| !expected_set.contains(id.as_str())).count();
    if report.missing.len() > 1 && report.missing.len() * 100 > expected.len() {
        return Err(Error::TooManyMissing {
            missing: report.missing.len(),
            expected: expected.len(),
        });
    }
    let mut m = EmbeddingMatrix::from_rows(out_ids, rows, EmbeddingSource::External)?;
    m.dim = dim;
    Ok((m, report))
}

fn read_text(bytes: &[u8]) -> Result<(Vec<String>, usize, Vec<f64>)> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (n, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line.map_err(|e| Error::invalid(format!("embedding line {}: {e}", n + 1)))?;
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let row: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("embedding line {}: {e}", n + 1)))?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                })
            }
            _ => {}
        }
        ids.push(id.to_string());
        data.extend(row);
    }
    Ok((ids, dim.unwrap_or(0), data))
}

fn read_binary(bytes: &[u8]) -> Result<(Vec<String>, usize, Vec<f64>)> {
    let truncated = || Error::invalid("embedding file is truncated");
    let mut r = &bytes[MAGIC.len()..];
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u32b).map_err(|_| truncated())?;
    let dim = u32::from_le_bytes(u32b) as usize;
    r.read_exact(&mut u64b).map_err(|_| truncated())?;
    let rows = u64::from_le_bytes(u64b) as usize;
    let mut ids = Vec::with_capacity(rows.min(1 << 20));
    for _ in 0..rows {
        r.read_exact(&mut u32b).map_err(|_| truncated())?;
        let len = u32::from_le_bytes(u32b) as usize;
        if r.len() < len {
            return Err(truncated());
        }
        let id = std::str::from_utf8(&r[..len]).map_err(|_| Error::invalid("embedding id is not UTF-8"))?;
        ids.push(id.to_string());
        r = &r[len..];
    }
    if r.len() != rows * dim * 8 {
        return Err(truncated());
    }
    let data = r
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((ids, dim, data))
}

/// Writes the binary layout: magic, D (u32), row count (u64), ids
/// (u32 length + UTF-8 bytes each), then row-major little-endian f64.
pub fn write_binary(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + m.data.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(m.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(m.len() as u64).to_le_bytes());
    for id in &m.doc_ids {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    for x in &m.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (i, id) in m.doc_ids.iter().enumerate() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:?}")).collect();
        writeln!(f, "{id} {}", row.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}
