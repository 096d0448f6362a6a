use crate::error::{Error, Result};

/// Row-major packed boolean matrix. A set bit marks a kept weight.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BitMask {
    rows: usize,
    cols: usize,
    words: Vec<u64>,
}

impl BitMask {
    fn filled(rows: usize, cols: usize, on: bool) -> Self {
        let n = rows * cols;
        let mut words = vec![if on { u64::MAX } else { 0 }; n.div_ceil(64)];
        if on && !n.is_multiple_of(64) {
            if let Some(last) = words.last_mut() {
                *last = (1u64 << (n % 64)) - 1;
            }
        }
        BitMask { rows, cols, words }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, true)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, false)
    }

    pub fn from_bools(rows: usize, cols: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} bits cannot fill a {rows}x{cols} mask",
                bits.len()
            )));
        }
        let mut m = BitMask::zeros(rows, cols);
        for (k, &b) in bits.iter().enumerate() {
            m.set_flat(k, b);
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get_flat(&self, k: usize) -> bool {
        (self.words[k / 64] >> (k % 64)) & 1 == 1
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.get_flat(i * self.cols + j)
    }

    pub fn set_flat(&mut self, k: usize, on: bool) {
        let bit = 1u64 << (k % 64);
        if on {
            self.words[k / 64] |= bit;
        } else {
            self.words[k / 64] &= !bit;
        }
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.set_flat(i * self.cols + j, on);
    }

    /// Number of kept positions.
    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn count_zeros(&self) -> usize {
        self.len() - self.count_ones()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len()).map(move |k| self.get_flat(k))
    }

    /// Packs bits row-major, least-significant bit first within each byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len().div_ceil(8)];
        for k in 0..self.len() {
            if self.get_flat(k) {
                out[k / 8] |= 1 << (k % 8);
            }
        }
        out
    }

    /// Inverse of [`BitMask::to_bytes`]. Padding bits in the final byte must be zero.
    pub fn from_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        let n = rows * cols;
        if bytes.len() != n.div_ceil(8) {
            return Err(Error::Dimension(format!(
                "{} bytes for a {rows}x{cols} mask",
                bytes.len()
            )));
        }
        let mut m = BitMask::zeros(rows, cols);
        for k in 0..bytes.len() * 8 {
            let on = (bytes[k / 8] >> (k % 8)) & 1 == 1;
            if k >= n {
                if on {
                    return Err(Error::Input("non-zero padding bits in mask".into()));
                }
                continue;
            }
            m.set_flat(k, on);
        }
        Ok(m)
    }
}
