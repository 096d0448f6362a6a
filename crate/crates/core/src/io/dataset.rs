//! `SVLD1` dataset container.
//!
//! ```text
//! "SVLD1"
//! u32 count, u32 d_v, u32 d_t, u32 classes
//! f64[count * d_v]   vision inputs, sample-major
//! f64[count * d_t]   text inputs, sample-major
//! u16[count]         labels
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use super::{read_input, write_output, Reader, Writer};
use crate::datagen::{Dataset, Sample};
use crate::error::Result;

const MAGIC: &[u8] = b"SVLD1";

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let mut w = Writer::new(MAGIC);
    w.u32(data.len());
    w.u32(data.d_v);
    w.u32(data.d_t);
    w.u32(data.classes);
    for s in &data.samples {
        w.f64s(&s.vision_in);
    }
    for s in &data.samples {
        w.f64s(&s.text_in);
    }
    for s in &data.samples {
        w.u16(u16::try_from(s.label).expect("labels fit in u16"));
    }
    w.finish()
}

/// `path` only labels errors.
pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let mut r = Reader::new(bytes, path, MAGIC)?;
    let count = r.u32()?;
    let d_v = r.u32()?;
    let d_t = r.u32()?;
    let classes = r.u32()?;
    if d_v == 0 || d_t == 0 || classes < 2 {
        return Err(r.fail("dimensions must be positive and classes at least 2"));
    }
    let size = |d: usize| count.checked_mul(d).ok_or_else(|| r.fail("array too large"));
    let (nv, nt) = (size(d_v)?, size(d_t)?);
    let vision = r.f64s(nv)?;
    let text = r.f64s(nt)?;
    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let label = r.u16()? as usize;
        if label >= classes {
            return Err(r.fail(format!("sample {k} has label {label} >= {classes}")));
        }
        samples.push(Sample {
            vision_in: vision[k * d_v..(k + 1) * d_v].to_vec(),
            text_in: text[k * d_t..(k + 1) * d_t].to_vec(),
            label,
        });
    }
    if let Some(k) = samples
        .iter()
        .position(|s| s.vision_in.iter().chain(&s.text_in).any(|v| !v.is_finite()))
    {
        return Err(r.fail(format!("sample {k} holds non-finite values")));
    }
    r.finish()?;
    Ok(Dataset {
        classes,
        d_v,
        d_t,
        samples,
    })
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write_output(path, &encode_dataset(data))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_input(path)?, path)
}
