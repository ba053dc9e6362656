//! The OVLS dataset file format (all integers little-endian).
//!
//! ```text
//! header   "OVLS" | version u16 | n_samples u32 | height u16 | width u16
//!          | n_classes u8 | flags u8 | global_seed u64 | reserved [0u8; 2]
//! sample   class_a u8 | class_b u8 (0xFF = none) | contrast u16 | noise_sigma u16
//!          | sample_seed u64 | input [u8; h*w] | n_classes × packed mask
//! ```
//!
//! Fractions are fixed-point `round(v × 65535)`; input pixels are
//! `round(p × 255)`; masks are row-major, MSB-first bit planes.

use std::io::{Read, Write};

use super::{dequantize_fraction, quantize_fraction, Dataset, Sample, SynthConfig};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};

pub const MAGIC: &[u8; 4] = b"OVLS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 26;
pub const SAMPLE_META_LEN: usize = 14;
const FLAG_PACKED: u8 = 1;
const ABSENT: u8 = 0xFF;

pub(crate) fn sample_len(height: usize, width: usize, n_classes: usize) -> usize {
    SAMPLE_META_LEN + height * width + n_classes * (height * width).div_ceil(8)
}

/// Writes `dataset` and returns the number of bytes written.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut sink: W) -> Result<u64> {
    let (h, w) = dataset.dims();
    let n_classes = dataset.n_classes();
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::arg("canvas too large for the dataset format"));
    }
    if n_classes == 0 || n_classes >= ABSENT as usize {
        return Err(Error::arg("class count out of range for the dataset format"));
    }
    let n = u32::try_from(dataset.len()).map_err(|_| Error::arg("too many samples"))?;

    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&n.to_le_bytes());
    header.extend_from_slice(&(h as u16).to_le_bytes());
    header.extend_from_slice(&(w as u16).to_le_bytes());
    header.push(n_classes as u8);
    header.push(FLAG_PACKED);
    header.extend_from_slice(&dataset.global_seed.to_le_bytes());
    header.extend_from_slice(&[0, 0]);
    debug_assert_eq!(header.len(), HEADER_LEN);
    sink.write_all(&header)?;

    let mut buf = Vec::with_capacity(sample_len(h, w, n_classes));
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.input.height() != h || s.input.width() != w || s.masks.len() != n_classes {
            return Err(Error::arg(format!("sample {i} does not match the dataset dimensions")));
        }
        buf.clear();
        buf.push(s.class_a);
        buf.push(s.class_b.unwrap_or(ABSENT));
        buf.extend_from_slice(&quantize_fraction(s.contrast).to_le_bytes());
        buf.extend_from_slice(&quantize_fraction(s.noise_sigma).to_le_bytes());
        buf.extend_from_slice(&s.sample_seed.to_le_bytes());
        buf.extend_from_slice(&s.input.to_u8());
        for m in &s.masks {
            buf.extend_from_slice(&m.pack());
        }
        sink.write_all(&buf)?;
    }
    Ok((HEADER_LEN + dataset.len() * sample_len(h, w, n_classes)) as u64)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::at_offset(
                self.buf.len() as u64,
                format!("truncated stream while reading {what}"),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses an OVLS stream.
///
/// Fields the format does not carry (offset range, class probability, mask
/// threshold, ...) come back as [`SynthConfig`] defaults; the class set is
/// `0..n_classes` and `noise_sigma` is taken from the first sample.
pub fn read_dataset<R: Read>(mut source: R) -> Result<Dataset> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };

    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::at_offset(0, "bad magic (expected \"OVLS\")"));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::at_offset(4, format!("unsupported version {version}")));
    }
    let n = cur.u32("sample count")? as usize;
    let h = cur.u16("height")? as usize;
    let w = cur.u16("width")? as usize;
    if h == 0 || w == 0 {
        return Err(Error::at_offset(10, "zero canvas dimension"));
    }
    let n_classes = cur.u8("class count")? as usize;
    if n_classes == 0 || n_classes >= ABSENT as usize {
        return Err(Error::at_offset(14, format!("class count {n_classes} out of range")));
    }
    let flags = cur.u8("flags")?;
    if flags != FLAG_PACKED {
        return Err(Error::at_offset(15, format!("unsupported flags {flags:#04x}")));
    }
    let global_seed = cur.u64("global seed")?;
    if cur.take(2, "reserved")? != [0, 0] {
        return Err(Error::at_offset(24, "reserved bytes are not zero"));
    }

    let expected = HEADER_LEN + n * sample_len(h, w, n_classes);
    if buf.len() < expected {
        return Err(Error::at_offset(
            buf.len() as u64,
            format!("truncated stream: {n} samples need {expected} bytes"),
        ));
    }
    if buf.len() > expected {
        return Err(Error::at_offset(expected as u64, "trailing bytes after the last sample"));
    }

    let packed_len = (h * w).div_ceil(8);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let start = cur.pos as u64;
        let class_a = cur.u8("class_a")?;
        let class_b = cur.u8("class_b")?;
        if class_a as usize >= n_classes {
            return Err(Error::at_offset(start, format!("sample {i}: class_a {class_a} out of range")));
        }
        let class_b = match class_b {
            ABSENT => None,
            b if (b as usize) < n_classes && b != class_a => Some(b),
            b => return Err(Error::at_offset(start + 1, format!("sample {i}: invalid class_b {b}"))),
        };
        let contrast = dequantize_fraction(cur.u16("contrast")?);
        let noise_sigma = dequantize_fraction(cur.u16("noise sigma")?);
        let sample_seed = cur.u64("sample seed")?;
        let input = GrayImage::from_u8(h, w, cur.take(h * w, "input image")?)?;
        let masks = (0..n_classes)
            .map(|_| cur.take(packed_len, "mask").map(|p| Mask::unpack(h, w, p)))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample { input, masks, class_a, class_b, contrast, noise_sigma, sample_seed });
    }

    let config = SynthConfig {
        class_set: (0..n_classes as u8).collect(),
        canvas: (h, w),
        noise_sigma: samples.first().map_or(0.0, |s| s.noise_sigma),
        ..SynthConfig::default()
    };
    Ok(Dataset { config, samples, split: None, global_seed })
}
