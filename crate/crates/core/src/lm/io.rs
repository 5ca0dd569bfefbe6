//! Binary and text persistence for [`KnModel`].
//!
//! Binary layout (little endian): magic `CBKN`, format version `u32`, order
//! `u32`, one `f64` discount per order, vocabulary (`u32` count then
//! length-prefixed UTF-8 words), then per order a `u64` entry count followed
//! by entries sorted by id tuple: `order` ids as `u32`, raw count `u64`,
//! continuation count `u64`. Context statistics are rebuilt on load.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::kn::{KnModel, NgramCount};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CBKN";
const VERSION: u32 = 1;

impl KnModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.order() as u32).to_le_bytes());
        for d in self.discounts() {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(self.vocab_len() as u32).to_le_bytes());
        for w in self.vocab() {
            out.extend_from_slice(&(w.len() as u32).to_le_bytes());
            out.extend_from_slice(w.as_bytes());
        }
        for table in self.ngram_tables() {
            let entries = sorted(table);
            out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
            for (gram, count) in entries {
                for id in gram {
                    out.extend_from_slice(&id.to_le_bytes());
                }
                out.extend_from_slice(&count.raw.to_le_bytes());
                out.extend_from_slice(&count.cont.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<KnModel> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a language model file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let order = r.u32()? as usize;
        if !(2..=64).contains(&order) {
            return Err(Error::Format(format!("bad order {order}")));
        }
        let discounts = (0..order).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let n_words = r.u32()? as usize;
        let mut words = Vec::with_capacity(n_words.min(1 << 20));
        for _ in 0..n_words {
            let len = r.u32()? as usize;
            let w = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Format(e.to_string()))?;
            words.push(w.to_string());
        }
        let mut ngrams = Vec::with_capacity(order);
        for k in 1..=order {
            let n = r.u64()? as usize;
            let mut table = HashMap::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                let gram = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                if gram.iter().any(|&id| id as usize >= n_words) {
                    return Err(Error::Format("id outside vocabulary".into()));
                }
                let raw = r.u64()?;
                let cont = r.u64()?;
                table.insert(gram, NgramCount { raw, cont });
            }
            ngrams.push(table);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        KnModel::from_parts(order, discounts, words, ngrams)
    }

    /// Human-readable dump for diffing two models.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "\\order {}", self.order());
        let ds: Vec<String> = self.discounts().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "\\discounts {}", ds.join(" "));
        let _ = writeln!(out, "\\vocab {}", self.vocab_len());
        for (i, w) in self.vocab().iter().enumerate() {
            let _ = writeln!(out, "{i}\t{w}");
        }
        for (k, table) in self.ngram_tables().iter().enumerate() {
            let _ = writeln!(out, "\\{}-grams {}", k + 1, table.len());
            for (gram, count) in sorted(table) {
                let words: Vec<&str> = gram.iter().map(|&id| self.word(id)).collect();
                let _ = writeln!(out, "{}\t{}\t{}", words.join(" "), count.raw, count.cont);
            }
        }
        out
    }
}

fn sorted(table: &HashMap<Vec<u32>, NgramCount>) -> Vec<(&Vec<u32>, &NgramCount)> {
    let mut entries: Vec<_> = table.iter().collect();
    entries.sort_by(|a, b| a.0.cmp(b.0));
    entries
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
