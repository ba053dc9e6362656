//! The UNET model file (little-endian):
//!
//! ```text
//! "UNET" | version u16 | config_len u32 | config JSON | tensor_count u16
//! per tensor: name_len u16 | name | ndims u8 | dims u32… | f32 values
//! ```

use std::io::{Read, Write};

use super::tensor::Tensor;
use super::unet::{UNetConfig, UNetParams};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"UNET";
const VERSION: u16 = 1;

pub fn save_model<W: Write>(params: &UNetParams<f32>, config: &UNetConfig, mut sink: W) -> Result<u64> {
    params.check_against(config)?;
    let json = serde_json::to_vec(config).map_err(|e| Error::arg(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(params.tensors().len() as u16).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    Ok(buf.len() as u64)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::at_offset(self.buf.len() as u64, format!("truncated model file reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn load_model<R: Read>(mut source: R) -> Result<(UNetParams<f32>, UNetConfig)> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::at_offset(0, "bad magic (expected \"UNET\")"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::at_offset(4, format!("unsupported model version {version}")));
    }
    let json_len = r.u32("config length")? as usize;
    let json_at = r.pos as u64;
    let config: UNetConfig = serde_json::from_slice(r.take(json_len, "config")?)
        .map_err(|e| Error::at_offset(json_at, format!("bad config JSON: {e}")))?;
    config.validate().map_err(|e| Error::at_offset(json_at, e.to_string()))?;

    let expected = UNetParams::<f32>::zeros(&config);
    let count_at = r.pos as u64;
    let count = r.u16("tensor count")? as usize;
    if count != expected.tensors().len() {
        return Err(Error::at_offset(count_at, format!("{count} tensors, config needs {}", expected.tensors().len())));
    }
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for (want_name, want) in expected.iter() {
        let at = r.pos as u64;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::at_offset(at, "tensor name is not UTF-8"))?
            .to_string();
        if name != want_name {
            return Err(Error::at_offset(at, format!("expected tensor {want_name}, found {name}")));
        }
        let shape_at = r.pos as u64;
        let ndims = r.take(1, "ndims")?[0] as usize;
        let dims = (0..ndims).map(|_| r.u32("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if dims != want.shape() {
            return Err(Error::at_offset(shape_at, format!("tensor {name} has shape {dims:?}, expected {:?}", want.shape())));
        }
        let n: usize = dims.iter().product();
        let data = r
            .take(4 * n, "tensor data")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        names.push(name);
        tensors.push(Tensor::from_vec(&dims, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::at_offset(r.pos as u64, "trailing bytes after the last tensor"));
    }
    Ok((UNetParams::from_parts(names, tensors), config))
}
