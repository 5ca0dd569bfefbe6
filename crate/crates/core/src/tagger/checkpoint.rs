//! Tagger checkpoints.
//!
//! Layout (little endian): magic `CBTG`, version `u32`, then three
//! length-prefixed UTF-8 JSON blobs (config, type set, vocabulary words),
//! then the matrices `embed, case_embed, w1, b1, w, b, noise, w_noisy,
//! b_noisy`, each as `u64` rows, `u64` cols and row-major `f64` values.
//! Vectors are stored as one-row matrices.

use ndarray::{Array1, Array2};

use super::model::TaggerParams;
use super::train::Tagger;
use super::{TaggerConfig, Vocab};
use crate::corpus::TypeSet;
use crate::error::{Error, Result};
use crate::robust::AdvParams;

const MAGIC: &[u8; 4] = b"CBTG";
const VERSION: u32 = 1;

fn put_blob(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn put_matrix(out: &mut Vec<u8>, m: &Array2<f64>) {
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_vector(out: &mut Vec<u8>, v: &Array1<f64>) {
    put_matrix(out, &v.clone().insert_axis(ndarray::Axis(0)));
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
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn matrix(&mut self) -> Result<Array2<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len()))
            .ok_or_else(|| Error::Format("matrix too large".into()))?;
        let data = self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
    }

    fn vector(&mut self) -> Result<Array1<f64>> {
        let m = self.matrix()?;
        if m.nrows() != 1 {
            return Err(Error::Format("expected a vector".into()));
        }
        Ok(m.row(0).to_owned())
    }
}

impl Tagger {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_blob(&mut out, &serde_json::to_vec(&self.config)?);
        put_blob(&mut out, &serde_json::to_vec(&self.typeset)?);
        put_blob(&mut out, &serde_json::to_vec(self.vocab.words())?);
        let p = &self.params;
        put_matrix(&mut out, &p.embed);
        put_matrix(&mut out, &p.case_embed);
        put_matrix(&mut out, &p.w1);
        put_vector(&mut out, &p.b1);
        put_matrix(&mut out, &p.w);
        put_vector(&mut out, &p.b);
        put_matrix(&mut out, &self.adv.noise);
        put_matrix(&mut out, &self.adv.w_noisy);
        put_vector(&mut out, &self.adv.b_noisy);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Tagger> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a tagger checkpoint".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let config: TaggerConfig = serde_json::from_slice(r.blob()?)?;
        let typeset: TypeSet = serde_json::from_slice(r.blob()?)?;
        let words: Vec<String> = serde_json::from_slice(r.blob()?)?;
        let vocab = Vocab::from_words(words);
        let params = TaggerParams {
            embed: r.matrix()?,
            case_embed: r.matrix()?,
            w1: r.matrix()?,
            b1: r.vector()?,
            w: r.matrix()?,
            b: r.vector()?,
        };
        let adv = AdvParams {
            noise: r.matrix()?,
            w_noisy: r.matrix()?,
            b_noisy: r.vector()?,
        };
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        let d = config.embed_dim;
        let h = config.hidden;
        let l = typeset.label_count();
        let shapes_ok = params.embed.dim() == (vocab.len(), d)
            && params.case_embed.dim() == (2, d)
            && params.w1.dim() == (config.window_len() * d, h)
            && params.b1.len() == h
            && params.w.dim() == (h, l)
            && params.b.len() == l
            && adv.noise.dim() == (typeset.len() * (typeset.len() - 1), d)
            && adv.w_noisy.dim() == (h, l)
            && adv.b_noisy.len() == l;
        if !shapes_ok {
            return Err(Error::Format(
                "parameter shapes disagree with config".into(),
            ));
        }
        Ok(Tagger {
            config,
            typeset,
            vocab,
            params,
            adv,
        })
    }
}
