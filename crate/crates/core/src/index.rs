//! Impact-weighted inverted index with exact term-at-a-time top-k search.
//!
//! # File layout (little endian)
//!
//! ```text
//! magic      b"L0IX"
//! version    u32
//! vocab      u32
//! doc_count  u32
//! ids        doc_count x (u32 byte length, utf-8 bytes)
//! directory  vocab x (u64 byte offset into postings, u32 posting count)
//! postings   u64 byte length, then per token: (varint doc-id delta, f32 weight)*
//! checksum   u32 crc32 of every preceding byte
//! ```

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::SparseVector;

const MAGIC: &[u8; 4] = b"L0IX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posting {
    pub doc: u32,
    pub weight: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    vocab_size: usize,
    postings: Vec<Vec<Posting>>,
    external_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub doc: u32,
    pub score: f64,
}

/// Descending score, ascending internal doc id on ties.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

impl SearchResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// `Ordering::Less` means `a` ranks ahead of `b`.
fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.doc.cmp(&b.doc))
}

struct HeapEntry(Hit);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // max-heap top is the worst-ranked hit kept so far
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

impl InvertedIndex {
    pub fn build(vocab_size: usize, docs: Vec<(String, SparseVector)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(docs.len());
        let mut postings = vec![Vec::new(); vocab_size];
        let mut external_ids = Vec::with_capacity(docs.len());
        for (doc, (id, vec)) in docs.into_iter().enumerate() {
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            if vec.dim() != vocab_size {
                return Err(Error::DimensionMismatch {
                    expected: vocab_size,
                    found: vec.dim(),
                });
            }
            for (j, w) in vec.iter() {
                let weight = w as f32;
                if weight > 0.0 {
                    postings[j as usize].push(Posting {
                        doc: doc as u32,
                        weight,
                    });
                }
            }
            external_ids.push(id);
        }
        Ok(Self {
            vocab_size,
            postings,
            external_ids,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn doc_count(&self) -> usize {
        self.external_ids.len()
    }

    pub fn postings(&self, token: u32) -> &[Posting] {
        &self.postings[token as usize]
    }

    pub fn total_postings(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    pub fn external_id(&self, doc: u32) -> &str {
        &self.external_ids[doc as usize]
    }

    /// Exact top-k by inner product. Documents scoring 0 are omitted.
    pub fn search(&self, query: &SparseVector, k: usize) -> Result<SearchResult> {
        if query.dim() != self.vocab_size {
            return Err(Error::DimensionMismatch {
                expected: self.vocab_size,
                found: query.dim(),
            });
        }
        if k == 0 || query.is_empty() {
            return Ok(SearchResult::default());
        }
        let mut acc = vec![0.0f64; self.doc_count()];
        let mut touched = Vec::new();
        for (j, qw) in query.iter() {
            for p in &self.postings[j as usize] {
                let slot = &mut acc[p.doc as usize];
                if *slot == 0.0 {
                    touched.push(p.doc);
                }
                *slot += qw * p.weight as f64;
            }
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        for doc in touched {
            let hit = Hit {
                doc,
                score: acc[doc as usize],
            };
            if heap.len() < k {
                heap.push(HeapEntry(hit));
            } else if let Some(worst) = heap.peek() {
                if rank_order(&hit, &worst.0) == Ordering::Less {
                    heap.pop();
                    heap.push(HeapEntry(hit));
                }
            }
        }
        let mut hits: Vec<Hit> = heap.into_iter().map(|e| e.0).collect();
        hits.sort_by(rank_order);
        Ok(SearchResult { hits })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.doc_count() as u32).to_le_bytes());
        for id in &self.external_ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        let mut body = Vec::new();
        let mut directory = Vec::with_capacity(self.vocab_size * 12);
        for list in &self.postings {
            directory.extend_from_slice(&(body.len() as u64).to_le_bytes());
            directory.extend_from_slice(&(list.len() as u32).to_le_bytes());
            let mut prev = 0u32;
            for p in list {
                write_varint(&mut body, p.doc - prev);
                body.extend_from_slice(&p.weight.to_le_bytes());
                prev = p.doc;
            }
        }
        out.extend_from_slice(&directory);
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if bytes.len() < 4 {
            return Err(Error::Truncated);
        }
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let vocab_size = r.u32()? as usize;
        let doc_count = r.u32()? as usize;
        let mut external_ids = Vec::with_capacity(doc_count.min(bytes.len()));
        for _ in 0..doc_count {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            external_ids.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| Error::InvalidParameter("document id is not utf-8".into()))?,
            );
        }
        let mut directory = Vec::with_capacity(vocab_size.min(bytes.len()));
        for _ in 0..vocab_size {
            let offset = r.u64()? as usize;
            let count = r.u32()? as usize;
            directory.push((offset, count));
        }
        let body_len = r.u64()? as usize;
        let body = r.take(body_len)?;
        let payload_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(Error::InvalidParameter(format!(
                "{} trailing bytes after checksum",
                bytes.len() - r.pos
            )));
        }
        let computed = crc32fast::hash(&bytes[..payload_end]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let mut postings = Vec::with_capacity(vocab_size);
        for (offset, count) in directory {
            let mut pr = Reader {
                buf: body,
                pos: offset,
            };
            let mut list = Vec::with_capacity(count);
            let mut doc = 0u32;
            for _ in 0..count {
                doc = doc
                    .checked_add(pr.varint()?)
                    .ok_or_else(|| Error::InvalidParameter("doc id overflow".into()))?;
                let weight = f32::from_le_bytes(pr.take(4)?.try_into().expect("4 bytes"));
                if doc as usize >= doc_count {
                    return Err(Error::InvalidParameter(format!(
                        "posting references doc {doc} of {doc_count}"
                    )));
                }
                list.push(Posting { doc, weight });
            }
            postings.push(list);
        }
        Ok(Self {
            vocab_size,
            postings,
            external_ids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_varint(out: &mut Vec<u8>, mut v: u32) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        if end > self.buf.len() {
            return Err(Error::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn varint(&mut self) -> Result<u32> {
        let mut v = 0u32;
        for shift in (0..35).step_by(7) {
            let b = self.take(1)?[0];
            v |= ((b & 0x7f) as u32) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::InvalidParameter("varint too long".into()))
    }
}
