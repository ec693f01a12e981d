//! Binary checkpoint format.
//!
//! All integers are little-endian `u32`, all tensor entries little-endian
//! `f64`:
//!
//! ```text
//! magic        8 bytes  "TCECKPT\0"
//! version      u32      1
//! kind         u32      0 = tce, 1 = visprod, 2 = labelembed
//! num_attrs    u32
//! num_objs     u32
//! latent_dim   u32      embedding width (0 for visprod)
//! word_dim     u32      (0 for visprod)
//! feature_dim  u32
//! hidden_dim   u32
//! tensors      u32      number of tensors that follow
//! per tensor:  rows u32, cols u32, rows*cols f64 (row-major)
//! ```
//!
//! Tensors appear in the model's declaration order (see [`Parameterized`](super::Parameterized)).

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{LabelEmbedModel, Model, ModelKind, TceDims, TceModel, VisProdModel};
use crate::error::{Result, TceError};
use crate::rng::{stream, Stream};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TCECKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub num_attrs: usize,
    pub num_objs: usize,
    pub latent_dim: usize,
    pub word_dim: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
}

impl CheckpointHeader {
    pub fn of(model: &Model) -> Self {
        match model {
            Model::Tce(m) => {
                let d = m.dims();
                Self {
                    kind: ModelKind::Tce,
                    num_attrs: d.num_attrs,
                    num_objs: d.num_objs,
                    latent_dim: d.latent_dim,
                    word_dim: d.word_dim,
                    feature_dim: d.feature_dim,
                    hidden_dim: d.hidden_dim,
                }
            }
            Model::VisProd(m) => Self {
                kind: ModelKind::VisProd,
                num_attrs: m.num_attrs(),
                num_objs: m.num_objs(),
                latent_dim: 0,
                word_dim: 0,
                feature_dim: m.feature_dim(),
                hidden_dim: m.hidden_dim(),
            },
            Model::LabelEmbed(m) => Self {
                kind: ModelKind::LabelEmbed,
                num_attrs: m.num_attrs(),
                num_objs: m.num_objs(),
                latent_dim: m.embed_dim(),
                word_dim: m.word_dim(),
                feature_dim: m.feature_dim(),
                hidden_dim: 2 * m.word_dim(),
            },
        }
    }

    /// Tensor shapes implied by the header, or `None` on arithmetic overflow.
    fn expected_shapes(&self) -> Option<Vec<(usize, usize)>> {
        let (m, n, d, w, f, h) = (
            self.num_attrs,
            self.num_objs,
            self.latent_dim,
            self.word_dim,
            self.feature_dim,
            self.hidden_dim,
        );
        let dense = |i: usize, o: usize| [(o, i), (o, 1)];
        let mut out = Vec::new();
        match self.kind {
            ModelKind::Tce => {
                out.extend(dense(f, d));
                out.extend(dense(w, d));
                out.extend(dense(d.checked_add(w)?, h));
                out.extend(dense(h, d));
                out.extend(dense(d, n));
                out.extend(dense(d, m));
                out.extend(dense(d, n));
                out.push((m, w));
                out.push((n, w));
            }
            ModelKind::VisProd => {
                out.extend(dense(f, h));
                out.extend(dense(h, m));
                out.extend(dense(f, h));
                out.extend(dense(h, n));
            }
            ModelKind::LabelEmbed => {
                let w2 = w.checked_mul(2)?;
                out.extend(dense(f, d));
                out.extend(dense(w2, w2));
                out.extend(dense(w2, d));
                out.push((m, w));
                out.push((n, w));
            }
        }
        for &(r, c) in &out {
            r.checked_mul(c)?.checked_mul(8)?.checked_add(8)?;
        }
        Some(out)
    }

    fn validate(&self) -> Result<()> {
        let positive = match self.kind {
            ModelKind::Tce => vec![
                self.num_attrs,
                self.num_objs,
                self.latent_dim,
                self.word_dim,
                self.feature_dim,
                self.hidden_dim,
            ],
            ModelKind::VisProd => {
                vec![self.num_attrs, self.num_objs, self.feature_dim, self.hidden_dim]
            }
            ModelKind::LabelEmbed => vec![
                self.num_attrs,
                self.num_objs,
                self.latent_dim,
                self.word_dim,
                self.feature_dim,
            ],
        };
        if positive.contains(&0) {
            return Err(TceError::Format(format!(
                "zero dimension in checkpoint header {self:?}"
            )));
        }
        if self.kind == ModelKind::LabelEmbed && self.hidden_dim != 2 * self.word_dim {
            return Err(TceError::Format(
                "labelembed hidden width must be twice the word width".into(),
            ));
        }
        Ok(())
    }

    fn skeleton(&self) -> Result<Model> {
        let mut rng = stream(0, Stream::Init);
        Ok(match self.kind {
            ModelKind::Tce => Model::Tce(TceModel::new(
                TceDims {
                    num_attrs: self.num_attrs,
                    num_objs: self.num_objs,
                    feature_dim: self.feature_dim,
                    latent_dim: self.latent_dim,
                    word_dim: self.word_dim,
                    hidden_dim: self.hidden_dim,
                },
                Array2::zeros((self.num_attrs, self.word_dim)),
                Array2::zeros((self.num_objs, self.word_dim)),
                &mut rng,
            )?),
            ModelKind::VisProd => Model::VisProd(VisProdModel::new(
                self.feature_dim,
                self.hidden_dim,
                self.num_attrs,
                self.num_objs,
                &mut rng,
            )?),
            ModelKind::LabelEmbed => Model::LabelEmbed(LabelEmbedModel::new(
                self.feature_dim,
                self.latent_dim,
                Array2::zeros((self.num_attrs, self.word_dim)),
                Array2::zeros((self.num_objs, self.word_dim)),
                &mut rng,
            )?),
        })
    }
}

fn kind_code(kind: ModelKind) -> u32 {
    match kind {
        ModelKind::Tce => 0,
        ModelKind::VisProd => 1,
        ModelKind::LabelEmbed => 2,
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| TceError::Format(format!("{what} {v} does not fit in u32")))
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let h = CheckpointHeader::of(model);
    let tensors = model.params().tensors();
    let mut out = Vec::with_capacity(48 + model.params().num_params() * 8 + tensors.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        kind_code(h.kind),
        to_u32(h.num_attrs, "num_attrs")?,
        to_u32(h.num_objs, "num_objs")?,
        to_u32(h.latent_dim, "latent_dim")?,
        to_u32(h.word_dim, "word_dim")?,
        to_u32(h.feature_dim, "feature_dim")?,
        to_u32(h.hidden_dim, "hidden_dim")?,
        to_u32(tensors.len(), "tensor count")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (rows, cols, data) in tensors {
        out.extend_from_slice(&to_u32(rows, "rows")?.to_le_bytes());
        out.extend_from_slice(&to_u32(cols, "cols")?.to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TceError::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(TceError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TceError::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind = match cur.u32()? {
        0 => ModelKind::Tce,
        1 => ModelKind::VisProd,
        2 => ModelKind::LabelEmbed,
        k => return Err(TceError::Format(format!("unknown model kind code {k}"))),
    };
    let mut dim = || cur.u32().map(|v| v as usize);
    let header = CheckpointHeader {
        kind,
        num_attrs: dim()?,
        num_objs: dim()?,
        latent_dim: dim()?,
        word_dim: dim()?,
        feature_dim: dim()?,
        hidden_dim: dim()?,
    };
    header.validate()?;
    let shapes = header
        .expected_shapes()
        .ok_or_else(|| TceError::Format("checkpoint dimensions overflow".into()))?;
    let count = cur.u32()? as usize;
    if count != shapes.len() {
        return Err(TceError::Format(format!(
            "{count} tensors stored, {} expected for {kind}",
            shapes.len()
        )));
    }
    let needed = shapes
        .iter()
        .try_fold(0usize, |acc, &(r, c)| acc.checked_add(8 + r * c * 8))
        .ok_or_else(|| TceError::Format("checkpoint dimensions overflow".into()))?;
    if needed != cur.remaining() {
        return Err(TceError::Format(format!(
            "checkpoint body has {} bytes, header implies {needed}",
            cur.remaining()
        )));
    }
    let mut model = header.skeleton()?;
    {
        let params = model.params_mut();
        let tensors = params.tensors_mut();
        for (k, ((_, dst), &(rows, cols))) in tensors.into_iter().zip(&shapes).enumerate() {
            let (r, c) = (cur.u32()? as usize, cur.u32()? as usize);
            if (r, c) != (rows, cols) {
                return Err(TceError::Format(format!(
                    "tensor {k} is {r}x{c}, expected {rows}x{cols}"
                )));
            }
            for (slot, chunk) in dst.iter_mut().zip(cur.take(r * c * 8)?.chunks_exact(8)) {
                let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                if !v.is_finite() {
                    return Err(TceError::Format(format!("non-finite value in tensor {k}")));
                }
                *slot = v;
            }
        }
    }
    Ok(model)
}

pub fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    fs::write(path, bytes).map_err(|e| TceError::io(path.display().to_string(), e))
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| TceError::io(path.display().to_string(), e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models() -> Vec<Model> {
        let mut rng = stream(9, Stream::Init);
        let dims = TceDims {
            num_attrs: 3,
            num_objs: 2,
            feature_dim: 5,
            latent_dim: 4,
            word_dim: 3,
            hidden_dim: 6,
        };
        let a = Array2::from_elem((3, 3), 0.25);
        let o = Array2::from_elem((2, 3), -0.5);
        vec![
            Model::Tce(TceModel::new(dims, a.clone(), o.clone(), &mut rng).unwrap()),
            Model::VisProd(VisProdModel::new(5, 7, 3, 2, &mut rng).unwrap()),
            Model::LabelEmbed(LabelEmbedModel::new(5, 3, a, o, &mut rng).unwrap()),
        ]
    }

    #[test]
    fn round_trip_every_kind() {
        for m in models() {
            let bytes = encode_checkpoint(&m).unwrap();
            let back = decode_checkpoint(&bytes).unwrap();
            assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
            assert_eq!(CheckpointHeader::of(&back), CheckpointHeader::of(&m));
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&models()[0]).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut bad = bytes.clone();
        bad[12] = 7; // kind
        assert!(decode_checkpoint(&bad).is_err());
        let mut bad = bytes.clone();
        let last = bad.len() - 8;
        bad[last..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_checkpoint(&bad).is_err());
        assert!(decode_checkpoint(&[]).is_err());
    }

    #[test]
    fn huge_header_does_not_allocate() {
        let mut bytes = CHECKPOINT_MAGIC.to_vec();
        for v in [1u32, 0, u32::MAX, u32::MAX, u32::MAX, u32::MAX, u32::MAX, u32::MAX, 16] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
