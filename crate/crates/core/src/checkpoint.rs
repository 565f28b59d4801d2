//! Binary checkpoint: magic, version, hyperparameters, seed, named f64 tensors,
//! vocabulary. All integers and floats little-endian.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelParams, WxMode};
use crate::tensor::Vector;

pub const MAGIC: &[u8; 4] = b"TPGN";
pub const FORMAT_VERSION: u32 = 1;
const FEATURE_MEAN: &str = "v_mean";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub hyper: HyperParams,
    pub params: ModelParams,
    pub vocab: Vec<String>,
    pub seed: u64,
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f64]) {
    put_str(out, name);
    put_u32(out, dims.len() as u32);
    for &d in dims {
        put_u32(out, d as u32);
    }
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.hyper;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        for x in [h.d, h.vocab_size, h.feature_dim, h.max_len, h.start_id, h.end_id] {
            put_u32(&mut out, x as u32);
        }
        out.push(match self.params.wx_mode {
            WxMode::TiedAverage => 0,
            WxMode::Free => 1,
        });
        out.extend_from_slice(&self.seed.to_le_bytes());

        let mut count = 1u32;
        self.params.visit(|_, _, _| count += 1);
        put_u32(&mut out, count);
        self.params.visit(|name, dims, data| put_tensor(&mut out, name, dims, data));
        let fm = &self.params.feature_mean;
        put_tensor(&mut out, FEATURE_MEAN, &[fm.len()], fm.as_slice());

        put_u32(&mut out, self.vocab.len() as u32);
        for w in &self.vocab {
            put_str(&mut out, w);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        r.pos = 4;
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut h = [0usize; 6];
        for x in &mut h {
            *x = r.u32("hyperparameters")? as usize;
        }
        let hyper = HyperParams {
            d: h[0],
            vocab_size: h[1],
            feature_dim: h[2],
            max_len: h[3],
            start_id: h[4],
            end_id: h[5],
        };
        hyper
            .validate()
            .map_err(|e| Error::Checkpoint(format!("bad hyperparameters: {e}")))?;
        let wx_mode = match r.take(1, "Wx mode")?[0] {
            0 => WxMode::TiedAverage,
            1 => WxMode::Free,
            m => return Err(Error::Checkpoint(format!("unknown Wx mode byte {m}"))),
        };
        let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().expect("8 bytes"));

        let n_tensors = r.u32("tensor count")? as usize;
        let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        for _ in 0..n_tensors {
            let name = r.string("tensor name")?;
            let ndims = r.u32("tensor rank")? as usize;
            let mut dims = Vec::with_capacity(ndims.min(8));
            for _ in 0..ndims {
                dims.push(r.u32("tensor dims")? as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
            let raw = r.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?,
                &name,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if tensors.insert(name.clone(), (dims, data)).is_some() {
                return Err(Error::Checkpoint(format!("tensor {name} appears twice")));
            }
        }
        let n_words = r.u32("vocabulary size")? as usize;
        let mut vocab = Vec::with_capacity(n_words.min(1 << 20));
        for _ in 0..n_words {
            vocab.push(r.string("vocabulary")?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if vocab.len() != hyper.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} words, hyperparameters say {}",
                vocab.len(),
                hyper.vocab_size
            )));
        }

        let mut params = ModelParams::zeros(&hyper, wx_mode);
        let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
        params.visit(|name, dims, _| expected.push((name.to_string(), dims.to_vec())));
        for (name, dims) in &expected {
            match tensors.get(name) {
                None => return Err(Error::Checkpoint(format!("missing tensor {name}"))),
                Some((got, _)) if got != dims => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has dims {got:?}, expected {dims:?}"
                    )))
                }
                _ => {}
            }
        }
        let mut idx = 0;
        params.visit_mut(|_, slot| {
            slot.copy_from_slice(&tensors[&expected[idx].0].1);
            idx += 1;
        });
        match tensors.get(FEATURE_MEAN) {
            Some((dims, data)) if dims == &[hyper.feature_dim] => {
                params.feature_mean = Vector::new(data.clone())
                    .map_err(|e| Error::Checkpoint(format!("{FEATURE_MEAN}: {e}")))?;
            }
            Some(_) => return Err(Error::Checkpoint(format!("{FEATURE_MEAN} has wrong dims"))),
            None => return Err(Error::Checkpoint(format!("missing tensor {FEATURE_MEAN}"))),
        }
        if tensors.len() != expected.len() + 1 {
            return Err(Error::Checkpoint("unexpected extra tensors".into()));
        }
        Ok(Self {
            hyper,
            params,
            vocab,
            seed,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Checkpoint(format!("{what}: invalid UTF-8")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
