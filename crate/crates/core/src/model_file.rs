//! Versioned binary model file.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "ENHP"  u32 version  u32 variant (0 high-order, 1 linear)
//! u32 H  u32 h  u32 F  u32 m  u32 O  u32 z  u32 c
//! u32 norm mode  f64[H] offsets  f64[H] scales
//! high-order: f64 C[(H+1)×F]  f64 W[F×m]  f64 b[m]  f64 V[h×m]
//! linear:     f64 A[h×H]
//! f64 exemplars[z×H]  u32 labels[z]
//! u64 seed  u32 epochs  f64 final validation error
//! ```
//!
//! Matrices are row-major. `F`, `m` and `O` are zero for linear models and
//! `z` is zero for models trained without exemplars.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::{NormMode, NormStats};
use crate::embedding::{Embedding, EmbeddingModel, HighOrderParams};
use crate::error::{Error, Result};
use crate::exemplars::ExemplarSet;

pub const MAGIC: &[u8; 4] = b"ENHP";
pub const VERSION: u32 = 1;

const VARIANT_HIGH_ORDER: u32 = 0;
const VARIANT_LINEAR: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: u32,
    pub final_val_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: EmbeddingModel,
    pub exemplars: Option<ExemplarSet>,
    pub class_count: usize,
    pub meta: TrainingMeta,
}

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::ModelFormat(format!("{what} = {v} does not fit in 32 bits")))
}

impl ModelFile {
    pub fn new(
        model: EmbeddingModel,
        exemplars: Option<ExemplarSet>,
        class_count: usize,
        meta: TrainingMeta,
    ) -> Result<Self> {
        if let Some(ex) = &exemplars {
            if ex.dim() != model.embedding.input_dim() {
                return Err(Error::Dimension("exemplar dimension differs from model input".into()));
            }
            if let Some(&bad) = ex.labels.iter().find(|&&l| l >= class_count) {
                return Err(Error::ModelFormat(format!("exemplar label {bad} >= class count {class_count}")));
            }
        }
        Ok(Self {
            model,
            exemplars,
            class_count,
            meta,
        })
    }

    pub fn z(&self) -> usize {
        self.exemplars.as_ref().map_or(0, ExemplarSet::len)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let emb = &self.model.embedding;
        let big_h = emb.input_dim();
        let h = emb.output_dim();
        let (variant, f, m, order) = match emb {
            Embedding::HighOrder(p) => (VARIANT_HIGH_ORDER, p.factor_count(), p.hidden_units(), p.order),
            Embedding::Linear(_) => (VARIANT_LINEAR, 0, 0, 0),
        };
        let mut out = Vec::with_capacity(64 + 8 * (emb.param_count() + 2 * big_h));
        out.extend_from_slice(MAGIC);
        let put_u32 = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
        put_u32(&mut out, VERSION);
        put_u32(&mut out, variant);
        for (v, what) in [
            (big_h, "H"),
            (h, "h"),
            (f, "F"),
            (m, "m"),
            (order as usize, "O"),
            (self.z(), "z"),
            (self.class_count, "c"),
        ] {
            put_u32(&mut out, u32_field(v, what)?);
        }
        put_u32(&mut out, self.model.norm.mode.tag());
        let put_f64s = |out: &mut Vec<u8>, vals: &mut dyn Iterator<Item = f64>| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        put_f64s(&mut out, &mut self.model.norm.offsets.iter().copied());
        put_f64s(&mut out, &mut self.model.norm.scales.iter().copied());
        put_f64s(&mut out, &mut emb.params_flat().into_iter());
        if let Some(ex) = &self.exemplars {
            put_f64s(&mut out, &mut ex.vectors.iter().copied());
            for &l in &ex.labels {
                put_u32(&mut out, u32_field(l, "exemplar label")?);
            }
        }
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        put_u32(&mut out, self.meta.epochs);
        out.extend_from_slice(&self.meta.final_val_error.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::ModelFormat("bad magic, expected \"ENHP\"".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported format version {version}")));
        }
        let variant = r.u32()?;
        let big_h = r.usize()?;
        let h = r.usize()?;
        let f = r.usize()?;
        let m = r.usize()?;
        let order = r.u32()?;
        let z = r.usize()?;
        let c = r.usize()?;
        let mode_tag = r.u32()?;
        let mode = NormMode::from_tag(mode_tag)
            .ok_or_else(|| Error::ModelFormat(format!("unknown normalization mode {mode_tag}")))?;
        if big_h == 0 || h == 0 {
            return Err(Error::ModelFormat("zero input or output dimension".into()));
        }
        let offsets = Array1::from(r.f64s(big_h)?);
        let scales = Array1::from(r.f64s(big_h)?);
        let norm = NormStats { mode, offsets, scales };

        let embedding = match variant {
            VARIANT_HIGH_ORDER => {
                if f == 0 || m == 0 {
                    return Err(Error::ModelFormat("high-order model with zero factors or hidden units".into()));
                }
                let factors = r.matrix(big_h + 1, f)?;
                let projection = r.matrix(f, m)?;
                let bias = Array1::from(r.f64s(m)?);
                let output = r.matrix(h, m)?;
                Embedding::high_order(HighOrderParams {
                    factors,
                    projection,
                    bias,
                    output,
                    order,
                })?
            }
            VARIANT_LINEAR => {
                if f != 0 || m != 0 || order != 0 {
                    return Err(Error::ModelFormat("linear model must record F = m = O = 0".into()));
                }
                Embedding::linear(r.matrix(h, big_h)?)?
            }
            other => return Err(Error::ModelFormat(format!("unknown variant tag {other}"))),
        };

        let exemplars = if z > 0 {
            let vectors = r.matrix(z, big_h)?;
            let labels = (0..z).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            Some(ExemplarSet::new(vectors, labels)?)
        } else {
            None
        };
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let epochs = r.u32()?;
        let final_val_error = r.f64()?;
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat(format!(
                "{} trailing bytes after offset {}",
                bytes.len() - r.pos,
                r.pos
            )));
        }
        let model = EmbeddingModel::new(embedding, norm)?;
        Self::new(
            model,
            exemplars,
            c,
            TrainingMeta {
                seed,
                epochs,
                final_val_error,
            },
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::ModelFormat(msg) => Error::ModelFormat(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::ModelFormat(format!("truncated at offset {} (needed {n} more bytes)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::ModelFormat("declared array size overflows".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::ModelFormat("declared matrix size overflows".into()))?;
        Array2::from_shape_vec((rows, cols), self.f64s(n)?).map_err(|e| Error::ModelFormat(e.to_string()))
    }
}
