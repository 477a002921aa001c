//! Log-Gabor phase encoder and the packed iris code.
//!
//! Each band row is filtered along the angular axis with a one-sided
//! Log-Gabor transfer function, giving a complex (analytic) response per
//! sample; the code bit is the sign of its real part.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::iso_image::{EyeImage, ImageKind, ANGULAR_RESOLUTION};
use crate::segmentation::{SegmentedPolar, BAND_ROWS};

pub const CODE_ROWS: usize = BAND_ROWS;
pub const CODE_COLS: usize = ANGULAR_RESOLUTION;
pub const CODE_BITS: usize = CODE_ROWS * CODE_COLS;

const MAGIC: &[u8; 8] = b"IRISCD01";

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("invalid Log-Gabor parameters: {0}")]
    InvalidParams(String),
    #[error("malformed iris code: {0}")]
    MalformedCode(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Row-major bit matrix packed MSB-first into 64-bit words, with a
/// validity mask of identical layout. Padding bits are always zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IrisCode {
    rows: usize,
    cols: usize,
    bits: Vec<u64>,
    mask: Vec<u64>,
    source_id: String,
}

#[inline]
fn word_bit(index: usize) -> (usize, u64) {
    (index / 64, 1u64 << (63 - index % 64))
}

impl IrisCode {
    /// All-zero code with a fully set mask.
    pub fn zeros(rows: usize, cols: usize, source_id: impl Into<String>) -> Self {
        let n = rows * cols;
        let words = n.div_ceil(64);
        let mut code = Self {
            rows,
            cols,
            bits: vec![0; words],
            mask: vec![!0; words],
            source_id: source_id.into(),
        };
        code.clear_padding();
        code
    }

    /// Builds a code from per-bit closures over `(row, col)`.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        source_id: impl Into<String>,
        mut bit: impl FnMut(usize, usize) -> bool,
        mut valid: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut code = Self::zeros(rows, cols, source_id);
        for r in 0..rows {
            for c in 0..cols {
                code.set_bit(r, c, bit(r, c));
                code.set_mask(r, c, valid(r, c));
            }
        }
        code
    }

    fn clear_padding(&mut self) {
        let n = self.rows * self.cols;
        let rem = n % 64;
        if rem != 0 {
            let keep = !0u64 << (64 - rem);
            if let Some(last) = self.bits.last_mut() {
                *last &= keep;
            }
            if let Some(last) = self.mask.last_mut() {
                *last &= keep;
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn set_source_id(&mut self, id: impl Into<String>) {
        self.source_id = id.into();
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn bit_words(&self) -> &[u64] {
        &self.bits
    }

    pub fn mask_words(&self) -> &[u64] {
        &self.mask
    }

    #[inline]
    pub fn bit(&self, row: usize, col: usize) -> bool {
        let (w, m) = word_bit(row * self.cols + col);
        self.bits[w] & m != 0
    }

    #[inline]
    pub fn mask_bit(&self, row: usize, col: usize) -> bool {
        let (w, m) = word_bit(row * self.cols + col);
        self.mask[w] & m != 0
    }

    #[inline]
    pub fn set_bit(&mut self, row: usize, col: usize, value: bool) {
        let (w, m) = word_bit(row * self.cols + col);
        if value {
            self.bits[w] |= m;
        } else {
            self.bits[w] &= !m;
        }
    }

    #[inline]
    pub fn set_mask(&mut self, row: usize, col: usize, value: bool) {
        let (w, m) = word_bit(row * self.cols + col);
        if value {
            self.mask[w] |= m;
        } else {
            self.mask[w] &= !m;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// At least half of the bits are valid.
    pub fn is_accepted(&self) -> bool {
        2 * self.mask_count() >= self.len()
    }

    /// Bitwise complement of the code bits; mask unchanged.
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        out.bits.iter_mut().for_each(|w| *w = !*w);
        out.clear_padding();
        out
    }

    /// Column rotation of every row: output column `c` holds input column
    /// `c - k` (mod cols). Bits and mask rotate together.
    pub fn rotate_columns(&self, k: i64) -> Self {
        let mut out = Self::zeros(self.rows, self.cols, self.source_id.clone());
        out.mask.iter_mut().for_each(|w| *w = 0);
        let cols = self.cols;
        let k = k.rem_euclid(cols as i64) as usize;
        for r in 0..self.rows {
            let row = r * cols;
            // input [cols - k, cols) lands at [0, k), input [0, cols - k) at [k, cols)
            for (src, dst, len) in [(row + cols - k, row, k), (row, row + k, cols - k)] {
                copy_bits(&self.bits, src, &mut out.bits, dst, len);
                copy_bits(&self.mask, src, &mut out.mask, dst, len);
            }
        }
        out
    }

    /// Serialises to the `IRISCD01` container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nbytes = self.len().div_ceil(8);
        let label = self.source_id.as_bytes();
        let mut out = Vec::with_capacity(8 + 4 + 2 * nbytes + 2 + label.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows as u16).to_le_bytes());
        out.extend_from_slice(&(self.cols as u16).to_le_bytes());
        for block in [&self.bits, &self.mask] {
            let bytes: Vec<u8> = block.iter().flat_map(|w| w.to_be_bytes()).collect();
            out.extend_from_slice(&bytes[..nbytes]);
        }
        out.extend_from_slice(&(label.len() as u16).to_le_bytes());
        out.extend_from_slice(label);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, EncodeError> {
        let malformed = |m: &str| EncodeError::MalformedCode(m.to_string());
        if data.len() < 12 || &data[..8] != MAGIC {
            return Err(malformed("missing IRISCD01 magic"));
        }
        let rows = u16::from_le_bytes([data[8], data[9]]) as usize;
        let cols = u16::from_le_bytes([data[10], data[11]]) as usize;
        if rows == 0 || cols == 0 {
            return Err(malformed("empty code dimensions"));
        }
        let n = rows * cols;
        let nbytes = n.div_ceil(8);
        let mut pos = 12;
        let mut blocks = Vec::with_capacity(2);
        for _ in 0..2 {
            let chunk = data
                .get(pos..pos + nbytes)
                .ok_or_else(|| malformed("truncated bit block"))?;
            let mut words = vec![0u64; n.div_ceil(64)];
            for (i, &b) in chunk.iter().enumerate() {
                words[i / 8] |= (b as u64) << (56 - 8 * (i % 8));
            }
            blocks.push(words);
            pos += nbytes;
        }
        let len_bytes = data
            .get(pos..pos + 2)
            .ok_or_else(|| malformed("truncated label length"))?;
        let label_len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
        pos += 2;
        let label = data
            .get(pos..pos + label_len)
            .ok_or_else(|| malformed("truncated label"))?;
        if pos + label_len != data.len() {
            return Err(malformed("trailing bytes after label"));
        }
        let source_id = std::str::from_utf8(label)
            .map_err(|_| malformed("label is not UTF-8"))?
            .to_string();
        let mask = blocks.pop().unwrap();
        let bits = blocks.pop().unwrap();
        let code = Self {
            rows,
            cols,
            bits,
            mask,
            source_id,
        };
        let mut check = code.clone();
        check.clear_padding();
        if check != code {
            return Err(malformed("non-zero padding bits"));
        }
        Ok(code)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncodeError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncodeError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogGaborParams {
    /// Wavelength at the filter's centre frequency, in band columns.
    pub center_wavelength: f64,
    /// Bandwidth ratio σ/f0 of the Gaussian on a log-frequency axis.
    pub sigma_over_f0: f64,
}

impl Default for LogGaborParams {
    fn default() -> Self {
        Self {
            center_wavelength: 18.0,
            sigma_over_f0: 0.55,
        }
    }
}

impl LogGaborParams {
    pub fn validate(&self) -> Result<(), EncodeError> {
        if !(self.center_wavelength >= 3.0) {
            return Err(EncodeError::InvalidParams(format!(
                "center wavelength {} must be >= 3",
                self.center_wavelength
            )));
        }
        if !(self.sigma_over_f0 > 0.0 && self.sigma_over_f0 < 1.0) {
            return Err(EncodeError::InvalidParams(format!(
                "sigma/f0 {} must lie in (0, 1)",
                self.sigma_over_f0
            )));
        }
        Ok(())
    }

    /// Transfer function sampled on the FFT bins of an `n`-point signal.
    /// Bins at or above `n/2` are the non-positive frequencies and get 0.
    pub fn transfer_function(&self, n: usize) -> Vec<f64> {
        let f0 = 1.0 / self.center_wavelength;
        let denom = 2.0 * self.sigma_over_f0.ln().powi(2);
        (0..n)
            .map(|k| {
                if k == 0 || 2 * k >= n {
                    0.0
                } else {
                    let f = k as f64 / n as f64;
                    (-(f / f0).ln().powi(2) / denom).exp()
                }
            })
            .collect()
    }
}

/// Reusable encoder holding the FFT plans and sampled transfer function.
pub struct LogGaborEncoder {
    params: LogGaborParams,
    transfer: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogGaborEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogGaborEncoder")
            .field("params", &self.params)
            .finish()
    }
}

impl LogGaborEncoder {
    pub fn new(params: LogGaborParams) -> Result<Self, EncodeError> {
        params.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            params,
            transfer: params.transfer_function(CODE_COLS),
            forward: planner.plan_fft_forward(CODE_COLS),
            inverse: planner.plan_fft_inverse(CODE_COLS),
        })
    }

    pub fn params(&self) -> LogGaborParams {
        self.params
    }

    /// Complex filter response of one band row.
    ///
    /// The row is centred as `n·x_i − Σx` (exact in integer arithmetic), so
    /// an integer affine intensity change scales the input exactly.
    pub fn row_response(&self, row: &[u8]) -> Vec<Complex<f64>> {
        let n = row.len() as i64;
        let sum: i64 = row.iter().map(|&v| v as i64).sum();
        let mut buf: Vec<Complex<f64>> = row
            .iter()
            .map(|&v| Complex::new((n * v as i64 - sum) as f64, 0.0))
            .collect();
        self.forward.process(&mut buf);
        for (z, g) in buf.iter_mut().zip(&self.transfer) {
            *z *= *g;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / (n * n) as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
        buf
    }

    pub fn encode(&self, band: &SegmentedPolar, source_id: impl Into<String>) -> IrisCode {
        let mut code = IrisCode::zeros(CODE_ROWS, CODE_COLS, source_id);
        for r in 0..CODE_ROWS {
            let row = band.row(r);
            let degenerate = row.iter().all(|&v| v == row[0]);
            if degenerate {
                for c in 0..CODE_COLS {
                    code.set_bit(r, c, false);
                    code.set_mask(r, c, false);
                }
                continue;
            }
            let response = self.row_response(row);
            for c in 0..CODE_COLS {
                code.set_bit(r, c, response[c].re >= 0.0);
                code.set_mask(r, c, band.validity_mask()[r * CODE_COLS + c]);
            }
        }
        code
    }
}

/// One-shot encode; see [`LogGaborEncoder::encode`].
pub fn encode(band: &SegmentedPolar, params: LogGaborParams) -> Result<IrisCode, EncodeError> {
    Ok(LogGaborEncoder::new(params)?.encode(band, ""))
}

/// Code bits as a `cols × rows` image: 1 → 255, 0 → 0.
pub fn code_to_image(code: &IrisCode) -> EyeImage {
    EyeImage::from_fn(code.cols(), code.rows(), ImageKind::RectilinearRoi, |x, y| {
        if code.bit(y, x) {
            255
        } else {
            0
        }
    })
    .expect("code dimensions are non-zero")
}

/// Inverse of [`code_to_image`]: pixels ≥ 128 read as 1; mask fully set.
pub fn image_to_code(image: &EyeImage, source_id: impl Into<String>) -> IrisCode {
    IrisCode::from_fn(
        image.height(),
        image.width(),
        source_id,
        |r, c| image.get(c, r) >= 128,
        |_, _| true,
    )
}

/// `len <= 64` bits starting at bit `start` (MSB-first), right-aligned.
#[inline]
fn read_bits(words: &[u64], start: usize, len: usize) -> u64 {
    let (w, o) = (start / 64, start % 64);
    let mut top = words[w] << o;
    if o + len > 64 {
        top |= words[w + 1] >> (64 - o);
    }
    top >> (64 - len)
}

/// ORs the right-aligned `len <= 64` bits of `value` in at bit `start`.
#[inline]
fn or_bits(words: &mut [u64], start: usize, len: usize, value: u64) {
    let (w, o) = (start / 64, start % 64);
    let top = value << (64 - len);
    words[w] |= top >> o;
    if o + len > 64 {
        words[w + 1] |= top << (64 - o);
    }
}

/// Copies a bit range into a zeroed destination range.
fn copy_bits(src: &[u64], src_start: usize, dst: &mut [u64], dst_start: usize, len: usize) {
    let mut off = 0;
    while off < len {
        let n = (len - off).min(64);
        or_bits(dst, dst_start + off, n, read_bits(src, src_start + off, n));
        off += n;
    }
}
