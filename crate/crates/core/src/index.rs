//! Exact Hamming-space search over packed codes.
//!
//! Code file layout (little-endian), version 1:
//!
//! ```text
//! magic "SHCI" | u32 version
//! u32 R | u32 N
//! N rows × ceil(R/64) u64 words
//! N × u64 set id
//! N × u32 label (0 = none)
//! ```

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::code::{hamming_words, words_for, HashCode};
use crate::codec::{self, Decoder, Encoder};
use crate::data::{Label, SetId};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SHCI";
pub const VERSION: u32 = 1;
const KIND: &str = "code";

/// Magic bytes that open a code file.
pub fn is_code_file(prefix: &[u8]) -> bool {
    prefix.starts_with(MAGIC)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankedResult {
    pub id: SetId,
    pub distance: u32,
    /// 1-based position in (distance, id) order.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeIndex {
    bits: usize,
    words: usize,
    rows: Vec<u64>,
    ids: Vec<SetId>,
    labels: Vec<Option<Label>>,
}

impl CodeIndex {
    /// `labels` may be empty (no labels) or hold one entry per code.
    pub fn build(
        bits: usize,
        codes: &[HashCode],
        ids: &[SetId],
        labels: &[Option<Label>],
    ) -> Result<Self> {
        if codes.len() != ids.len() || !(labels.is_empty() || labels.len() == codes.len()) {
            return Err(Error::invalid("codes, ids and labels differ in length"));
        }
        if let Some(c) = codes.iter().find(|c| c.len() != bits) {
            return Err(Error::CodeLength {
                left: bits,
                right: c.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::DuplicateId(*dup));
        }
        if labels.contains(&Some(0)) {
            return Err(Error::invalid("label 0 is reserved for unlabeled entries"));
        }
        Ok(Self {
            bits,
            words: words_for(bits),
            rows: codes.iter().flat_map(|c| c.words().iter().copied()).collect(),
            ids: ids.to_vec(),
            labels: if labels.is_empty() {
                vec![None; codes.len()]
            } else {
                labels.to_vec()
            },
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SetId] {
        &self.ids
    }

    pub fn labels(&self) -> &[Option<Label>] {
        &self.labels
    }

    pub fn code(&self, i: usize) -> HashCode {
        let w = self.row(i).to_vec();
        HashCode::from_words(w, self.bits).expect("stored rows are well formed")
    }

    pub fn codes(&self) -> Vec<HashCode> {
        (0..self.len()).map(|i| self.code(i)).collect()
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.rows[i * self.words..(i + 1) * self.words]
    }

    fn check(&self, query: &HashCode) -> Result<()> {
        if query.len() != self.bits {
            return Err(Error::CodeLength {
                left: self.bits,
                right: query.len(),
            });
        }
        Ok(())
    }

    /// Distance from `query` to every entry, in storage order.
    pub fn distances(&self, query: &HashCode) -> Result<Vec<u32>> {
        self.check(query)?;
        Ok((0..self.len())
            .map(|i| hamming_words(self.row(i), query.words()))
            .collect())
    }

    fn ranked(&self, mut hits: Vec<(u32, SetId)>) -> Vec<RankedResult> {
        hits.sort_unstable();
        hits.into_iter()
            .enumerate()
            .map(|(i, (distance, id))| RankedResult {
                id,
                distance,
                rank: i + 1,
            })
            .collect()
    }

    /// The `k` nearest entries by Hamming distance, ties broken by id.
    pub fn rank(&self, query: &HashCode, k: usize) -> Result<Vec<RankedResult>> {
        let mut all: Vec<(u32, SetId)> = self.distances(query)?.into_iter().zip(self.ids.iter().copied()).collect();
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < all.len() {
            all.select_nth_unstable(k - 1);
            all.truncate(k);
        }
        Ok(self.ranked(all))
    }

    /// All entries within `radius` of `query`, in rank order.
    pub fn lookup_radius(&self, query: &HashCode, radius: u32) -> Result<Vec<RankedResult>> {
        let hits = self
            .distances(query)?
            .into_iter()
            .zip(self.ids.iter().copied())
            .filter(|(d, _)| *d <= radius)
            .collect();
        Ok(self.ranked(hits))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        codec::write_header(&mut w, MAGIC, VERSION)?;
        let mut e = Encoder::new(w);
        e.u32(u32::try_from(self.bits).map_err(|_| Error::invalid("code too long"))?)?;
        e.u32(u32::try_from(self.len()).map_err(|_| Error::invalid("too many codes"))?)?;
        for &word in &self.rows {
            e.u64(word)?;
        }
        for id in &self.ids {
            e.u64(id.0)?;
        }
        for l in &self.labels {
            e.u32(l.unwrap_or(0))?;
        }
        e.into_inner().flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        codec::read_header(&mut r, KIND, MAGIC, VERSION)?;
        let mut d = Decoder::new(r, KIND);
        let bits = d.u32()? as usize;
        let n = d.u32()? as usize;
        let words = words_for(bits);
        let mut codes = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let w = (0..words).map(|_| d.u64()).collect::<Result<Vec<_>>>()?;
            codes.push(HashCode::from_words(w, bits).map_err(|e| Error::format(KIND, e.to_string()))?);
        }
        let ids = (0..n).map(|_| d.u64().map(SetId)).collect::<Result<Vec<_>>>()?;
        let labels = (0..n)
            .map(|_| d.u32().map(|l| (l != 0).then_some(l)))
            .collect::<Result<Vec<_>>>()?;
        d.finish()?;
        Self::build(bits, &codes, &ids, &labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(codes: &[&str]) -> CodeIndex {
        let codes: Vec<HashCode> = codes.iter().map(|s| s.parse().unwrap()).collect();
        let ids: Vec<SetId> = (0..codes.len() as u64).map(|i| SetId(100 - i)).collect();
        CodeIndex::build(codes[0].len(), &codes, &ids, &[]).unwrap()
    }

    #[test]
    fn empty_index() {
        let i = CodeIndex::build(8, &[], &[], &[]).unwrap();
        assert!(i.is_empty());
        assert!(i.rank(&HashCode::zeros(8), 5).unwrap().is_empty());
    }

    #[test]
    fn exact_match_ranks_first() {
        let i = idx(&["1100", "1010", "0011"]);
        let r = i.rank(&"1010".parse().unwrap(), 1).unwrap();
        assert_eq!(r[0].id, SetId(99));
        assert_eq!(r[0].distance, 0);
        assert_eq!(r[0].rank, 1);
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let i = idx(&["1000", "0100", "0010"]);
        let r = i.rank(&"0000".parse().unwrap(), 10).unwrap();
        let ids: Vec<u64> = r.iter().map(|x| x.id.0).collect();
        assert_eq!(ids, vec![98, 99, 100]);
    }

    #[test]
    fn radius_extremes() {
        let i = idx(&["1100", "1010", "0011"]);
        let q: HashCode = "1100".parse().unwrap();
        assert_eq!(i.lookup_radius(&q, 4).unwrap().len(), 3);
        assert_eq!(i.lookup_radius(&q, 0).unwrap().len(), 1);
    }

    #[test]
    fn rejects_duplicates_and_length_mismatch() {
        let c: HashCode = "10".parse().unwrap();
        assert!(matches!(
            CodeIndex::build(2, &[c.clone(), c.clone()], &[SetId(1), SetId(1)], &[]),
            Err(Error::DuplicateId(SetId(1)))
        ));
        let i = idx(&["1100"]);
        assert!(i.rank(&c, 1).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let codes: Vec<HashCode> = (0..5).map(|i| HashCode::from_bits((0..70).map(|b| (b * i) % 3 == 0))).collect();
        let ids: Vec<SetId> = (0..5).map(SetId).collect();
        let labels = vec![Some(1), None, Some(2), Some(2), Some(1)];
        let i = CodeIndex::build(70, &codes, &ids, &labels).unwrap();
        let mut buf = Vec::new();
        i.write(&mut buf).unwrap();
        assert!(is_code_file(&buf));
        assert_eq!(CodeIndex::read(&buf[..]).unwrap(), i);
        buf[4] = 9;
        assert!(matches!(CodeIndex::read(&buf[..]), Err(Error::Version { .. })));
    }
}
