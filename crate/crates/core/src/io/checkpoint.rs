//! `SVLM1` model checkpoint.
//!
//! ```text
//! "SVLM1"
//! u32 version (= 1)
//! u32 d_v, h_v, d_q, d_t, h_l, classes
//! u64 seed
//! u32 layer count, then per layer:
//!     u16 len + UTF-8 name
//!     u8  modality (0 vision, 1 language, 2 interface)
//!     u8  flags (bit 0: merged)
//!     u8  declared pattern (0 none, 1 unstructured, 2 n:m), f64 ratio, u32 n, u32 m
//!     u8  adapter (0 none, 1 sparse, 2 dense), u32 rank
//! u32 tensor count, then per tensor:
//!     u16 len + name, u32 rows, u32 cols, f64[rows * cols] row-major
//! u32 mask count, then per mask:
//!     u16 len + name, u32 rows, u32 cols, packed bits (row-major, LSB first)
//! ```
//! Tensors are named `<layer>.weight`, `<layer>.bias` (`out × 1`),
//! `<layer>.lora_b` and `<layer>.lora_a`; masks `<layer>.mask`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{read_input, write_output, Reader, Writer};
use crate::error::{Error, Result};
use crate::lora::{Adapter, AdapterMode};
use crate::model::{Dims, Modality, PrunableLayer, ToyVlm};
use crate::numeric::{BitMask, Matrix};
use crate::pruning::SparsityPattern;

const MAGIC: &[u8] = b"SVLM1";
pub const VERSION: u32 = 1;

/// Raw row-major values, possibly non-finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    fn from_matrix(m: &Matrix) -> Self {
        Tensor {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
    }

    fn column(v: &[f64]) -> Self {
        Tensor {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    fn to_matrix(&self) -> Result<Matrix> {
        Matrix::from_vec(self.rows, self.cols, self.data.clone())
    }

    /// Flat index of the first non-finite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub modality: Modality,
    pub merged: bool,
    pub declared: Option<SparsityPattern>,
    pub weight: Tensor,
    pub bias: Tensor,
    pub mask: BitMask,
    /// `(mode, B, A)`.
    pub adapter: Option<(AdapterMode, Tensor, Tensor)>,
}

impl LayerRecord {
    /// Every tensor of the layer with its checkpoint name.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            (format!("{}.weight", self.name), &self.weight),
            (format!("{}.bias", self.name), &self.bias),
        ];
        if let Some((_, b, a)) = &self.adapter {
            out.push((format!("{}.lora_b", self.name), b));
            out.push((format!("{}.lora_a", self.name), a));
        }
        out
    }
}

/// Decoded checkpoint contents, before any model-level validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dims: Dims,
    pub seed: u64,
    pub layers: Vec<LayerRecord>,
}

fn pattern_code(p: Option<SparsityPattern>) -> (u8, f64, usize, usize) {
    match p {
        None => (0, 0.0, 0, 0),
        Some(SparsityPattern::Unstructured { ratio }) => (1, ratio, 0, 0),
        Some(SparsityPattern::NofM { n, m }) => (2, 0.0, n, m),
    }
}

fn mode_code(m: Option<AdapterMode>) -> u8 {
    match m {
        None => 0,
        Some(AdapterMode::Sparse) => 1,
        Some(AdapterMode::Dense) => 2,
    }
}

impl Checkpoint {
    pub fn from_model(model: &ToyVlm) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| LayerRecord {
                name: l.name.clone(),
                modality: l.modality,
                merged: l.merged,
                declared: l.declared,
                weight: Tensor::from_matrix(&l.w0),
                bias: Tensor::column(&l.bias),
                mask: l.mask.clone(),
                adapter: l.adapter.as_ref().map(|a| {
                    (a.mode, Tensor::from_matrix(&a.b), Tensor::from_matrix(&a.a))
                }),
            })
            .collect();
        Checkpoint {
            dims: model.dims(),
            seed: model.seed(),
            layers,
        }
    }

    /// Builds the model, rejecting non-finite values and mismatched shapes.
    pub fn to_model(&self) -> Result<ToyVlm> {
        let layers = self
            .layers
            .iter()
            .map(|r| {
                let adapter = match &r.adapter {
                    Some((mode, b, a)) => Some(Adapter::new(*mode, b.to_matrix()?, a.to_matrix()?)?),
                    None => None,
                };
                if r.bias.cols != 1 {
                    return Err(Error::Dimension(format!("bias of {} is not a column", r.name)));
                }
                Ok(PrunableLayer {
                    name: r.name.clone(),
                    modality: r.modality,
                    w0: r.weight.to_matrix()?,
                    mask: r.mask.clone(),
                    bias: r.bias.data.clone(),
                    adapter,
                    declared: r.declared,
                    merged: r.merged,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ToyVlm::from_layers(self.dims, self.seed, layers)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u32(VERSION as usize);
        let d = self.dims;
        for v in [d.d_v, d.h_v, d.d_q, d.d_t, d.h_l, d.classes] {
            w.u32(v);
        }
        w.u64(self.seed);
        w.u32(self.layers.len());
        for l in &self.layers {
            w.name(&l.name);
            w.u8(l.modality.code());
            w.u8(u8::from(l.merged));
            let (kind, ratio, n, m) = pattern_code(l.declared);
            w.u8(kind);
            w.f64(ratio);
            w.u32(n);
            w.u32(m);
            w.u8(mode_code(l.adapter.as_ref().map(|a| a.0)));
            w.u32(l.adapter.as_ref().map_or(0, |(_, _, a)| a.rows));
        }
        let tensors: Vec<(String, &Tensor)> = self.layers.iter().flat_map(LayerRecord::tensors).collect();
        w.u32(tensors.len());
        for (name, t) in tensors {
            w.name(&name);
            w.u32(t.rows);
            w.u32(t.cols);
            w.f64s(&t.data);
        }
        w.u32(self.layers.len());
        for l in &self.layers {
            w.name(&format!("{}.mask", l.name));
            w.u32(l.mask.rows());
            w.u32(l.mask.cols());
            w.bytes(&l.mask.to_bytes());
        }
        w.finish()
    }

    /// `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path, MAGIC)?;
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let mut d = [0usize; 6];
        for v in &mut d {
            *v = r.u32()?;
        }
        let dims = Dims {
            d_v: d[0],
            h_v: d[1],
            d_q: d[2],
            d_t: d[3],
            h_l: d[4],
            classes: d[5],
        };
        let seed = r.u64()?;

        struct Meta {
            name: String,
            modality: Modality,
            merged: bool,
            declared: Option<SparsityPattern>,
            adapter: Option<(AdapterMode, usize)>,
        }
        let count = r.u32()?;
        let mut metas: Vec<Meta> = Vec::new();
        for _ in 0..count {
            let name = r.name()?;
            let modality = Modality::from_code(r.u8()?).ok_or_else(|| r.fail("bad modality code"))?;
            let flags = r.u8()?;
            if flags > 1 {
                return Err(r.fail(format!("unknown flags {flags:#x} on {name}")));
            }
            let kind = r.u8()?;
            let ratio = r.f64()?;
            let (n, m) = (r.u32()?, r.u32()?);
            let declared = match kind {
                0 => None,
                1 => Some(SparsityPattern::Unstructured { ratio }),
                2 => Some(SparsityPattern::NofM { n, m }),
                k => return Err(r.fail(format!("unknown pattern kind {k} on {name}"))),
            };
            if let Some(p) = declared {
                p.validate().map_err(|e| r.fail(format!("{name}: {e}")))?;
            }
            let mode = r.u8()?;
            let rank = r.u32()?;
            let adapter = match mode {
                0 => None,
                1 => Some((AdapterMode::Sparse, rank)),
                2 => Some((AdapterMode::Dense, rank)),
                k => return Err(r.fail(format!("unknown adapter mode {k} on {name}"))),
            };
            if metas.iter().any(|m| m.name == name) {
                return Err(r.fail(format!("duplicate layer {name}")));
            }
            metas.push(Meta {
                name,
                modality,
                merged: flags == 1,
                declared,
                adapter,
            });
        }

        let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.name()?;
            let (rows, cols) = (r.u32()?, r.u32()?);
            let n = rows.checked_mul(cols).ok_or_else(|| r.fail("tensor too large"))?;
            let data = r.f64s(n)?;
            if tensors.insert(name.clone(), Tensor { rows, cols, data }).is_some() {
                return Err(r.fail(format!("duplicate tensor {name}")));
            }
        }
        let mut masks: BTreeMap<String, BitMask> = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.name()?;
            let (rows, cols) = (r.u32()?, r.u32()?);
            let n = rows.checked_mul(cols).ok_or_else(|| r.fail("mask too large"))?;
            let raw = r.take(n.div_ceil(8))?;
            let mask = BitMask::from_bytes(rows, cols, raw).map_err(|e| r.fail(format!("{name}: {e}")))?;
            if masks.insert(name.clone(), mask).is_some() {
                return Err(r.fail(format!("duplicate mask {name}")));
            }
        }
        r.finish()?;

        let path_err = |reason: String| Error::format(path, reason);
        let mut layers = Vec::with_capacity(metas.len());
        for m in metas {
            let mut take = |suffix: &str| {
                tensors
                    .remove(&format!("{}.{suffix}", m.name))
                    .ok_or_else(|| path_err(format!("missing tensor {}.{suffix}", m.name)))
            };
            let weight = take("weight")?;
            let bias = take("bias")?;
            let adapter = match m.adapter {
                Some((mode, rank)) => {
                    let b = take("lora_b")?;
                    let a = take("lora_a")?;
                    if b.cols != rank || a.rows != rank {
                        return Err(path_err(format!("adapter on {} does not have rank {rank}", m.name)));
                    }
                    Some((mode, b, a))
                }
                None => None,
            };
            let mask = masks
                .remove(&format!("{}.mask", m.name))
                .ok_or_else(|| path_err(format!("missing mask {}.mask", m.name)))?;
            layers.push(LayerRecord {
                name: m.name,
                modality: m.modality,
                merged: m.merged,
                declared: m.declared,
                weight,
                bias,
                mask,
                adapter,
            });
        }
        if let Some(name) = tensors.keys().chain(masks.keys()).next() {
            return Err(path_err(format!("unexpected entry {name}")));
        }
        Ok(Checkpoint { dims, seed, layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_output(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_input(path)?, path)
    }
}

pub fn save_model(model: &ToyVlm, path: &Path) -> Result<()> {
    Checkpoint::from_model(model).save(path)
}

/// Loads and validates a model. Any content problem is a format error.
pub fn load_model(path: &Path) -> Result<ToyVlm> {
    Checkpoint::load(path)?
        .to_model()
        .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::{attach_adapters, TrainConfig};
    use crate::pruning::{apply_masks, build_mask, ScoreMatrix, SparsitySpec};

    fn decorated_model() -> ToyVlm {
        let mut m = ToyVlm::new(Dims::default(), 21).unwrap();
        let w = m.layer("lang1").unwrap().w0.map(f64::abs);
        let mask = build_mask(&ScoreMatrix::new(w).unwrap(), &SparsitySpec::n_of_m(2, 4)).unwrap();
        apply_masks(&mut m, &[("lang1".to_string(), mask)].into_iter().collect()).unwrap();
        let idx = m.layer_index("lang1").unwrap();
        m.layer_mut(idx).declared = Some(SparsityPattern::NofM { n: 2, m: 4 });
        let idx = m.layer_index("vision2").unwrap();
        m.layer_mut(idx).declared = Some(SparsityPattern::Unstructured { ratio: 0.3 });
        let cfg = TrainConfig::default();
        attach_adapters(&mut m, &cfg, &[Modality::Language, Modality::Interface]).unwrap();
        for l in m.layers_mut() {
            if let Some(a) = &mut l.adapter {
                a.b = a.b.map(|_| 0.125);
            }
        }
        m.layer_mut(0).merged = true;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = decorated_model();
        let ck = Checkpoint::from_model(&m);
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn non_finite_values_survive_decoding() {
        let mut ck = Checkpoint::from_model(&ToyVlm::new(Dims::default(), 1).unwrap());
        ck.layers[3].weight.data[5] = f64::NAN;
        let back = Checkpoint::decode(&ck.encode(), Path::new("mem")).unwrap();
        assert_eq!(back.layers[3].weight.first_non_finite(), Some(5));
        assert!(back.to_model().is_err());
    }

    #[test]
    fn corruption_is_a_format_error() {
        let good = Checkpoint::from_model(&decorated_model()).encode();
        let mut bad_magic = good.clone();
        bad_magic[4] = b'2';
        let mut bad_version = good.clone();
        bad_version[5] = 9;
        let mut trailing = good.clone();
        trailing.extend_from_slice(&[0, 0]);
        for bytes in [bad_magic, bad_version, trailing, good[..good.len() - 3].to_vec(), Vec::new()] {
            let err = Checkpoint::decode(&bytes, Path::new("mem")).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "{err}");
            assert_eq!(err.exit_code(), 3);
        }
    }

    #[test]
    fn load_model_reports_shape_mismatch_as_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.svlm");
        let mut ck = Checkpoint::from_model(&ToyVlm::new(Dims::default(), 1).unwrap());
        ck.dims.h_l = 31;
        ck.save(&path).unwrap();
        let err = load_model(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
    }
}
