//! Grayscale images, binary masks and PGM (P5) I/O.

use std::io::{Read, Write};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

/// Ink-positive intensities in [0, 1]: 1 is full ink, 0 blank support.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "empty image");
        Self { height, width, pixels: vec![0.0; height * width] }
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::arg(format!(
                "pixel count {} does not match {height}x{width}",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::arg(format!("pixel value {p} outside [0,1]")));
        }
        Ok(Self { height, width, pixels })
    }

    /// Raw 8-bit intensities scaled by 1/255.
    pub fn from_u8(height: usize, width: usize, raw: &[u8]) -> Result<Self> {
        Self::from_pixels(height, width, raw.iter().map(|&v| v as f32 / 255.0).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// round(pixel × 255) per pixel.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| quantize_unit(p)).collect()
    }

    /// The image after an 8-bit round trip.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: self.to_u8().into_iter().map(|v| v as f32 / 255.0).collect(),
        }
    }

    pub fn scale(&self, factor: f32) -> Self {
        self.map(|p| (p * factor).clamp(0.0, 1.0))
    }

    pub(crate) fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)))
    }
}

pub fn quantize_unit(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A binary mask; every value is exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![0; height * width] }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::arg("mask size does not match dimensions"));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::arg("mask values must be 0 or 1"));
        }
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.bits[y * self.width + x]
    }

    pub fn ink_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Inclusive bounding box `(y0, x0, y1, x1)` of the set bits.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) == 1 {
                    bbox = Some(match bbox {
                        None => (y, x, y, x),
                        Some((y0, x0, y1, x1)) => (y0.min(y), x0.min(x), y1.max(y), x1.max(x)),
                    });
                }
            }
        }
        bbox
    }

    pub fn as_image(&self) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            pixels: self.bits.iter().map(|&b| b as f32).collect(),
        }
    }

    /// Row-major, MSB-first bit packing, `ceil(h*w/8)` bytes.
    pub fn pack(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b == 1 {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    pub fn unpack(height: usize, width: usize, packed: &[u8]) -> Self {
        let n = height * width;
        debug_assert!(packed.len() >= n.div_ceil(8));
        let bits = (0..n).map(|i| (packed[i / 8] >> (7 - i % 8)) & 1).collect();
        Self { height, width, bits }
    }
}

/// Output bit is 1 exactly where the pixel is at least `threshold`.
pub fn binarize_mask(image: &GrayImage, threshold: f32) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::arg(format!("threshold {threshold} outside (0,1)")));
    }
    Ok(Mask {
        height: image.height,
        width: image.width,
        bits: image.pixels.iter().map(|&p| (p >= threshold) as u8).collect(),
    })
}

/// An 8-bit grayscale raster as read from or written to a PGM file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(height: usize, width: usize, fill: u8) -> Self {
        Self { height, width, data: vec![fill; height * width] }
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Writes a binary PGM (P5, maxval 255).
pub fn write_pgm<W: Write>(raster: &Raster, mut sink: W) -> Result<()> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&raster.data, raster.width as u32, raster.height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    sink.write_all(&buf)?;
    Ok(())
}

pub fn read_pgm<R: Read>(mut source: R) -> Result<Raster> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    if !buf.starts_with(b"P5") {
        return Err(Error::at_offset(0, "not a binary PGM (P5) file"));
    }
    let img = image::load_from_memory_with_format(&buf, ImageFormat::Pnm)
        .map_err(|e| Error::at_offset(0, format!("bad PGM: {e}")))?
        .to_luma8();
    Ok(Raster {
        height: img.height() as usize,
        width: img.width() as usize,
        data: img.into_raw(),
    })
}
