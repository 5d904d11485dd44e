//! Tensor golden files: a text header line `shape: d0 d1 ...\n` followed by
//! the elements as raw little-endian f32, row-major. A scalar-free empty
//! shape (`shape:\n`) holds exactly one element.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut header = String::from("shape:");
    for d in t.shape() {
        header.push_str(&format!(" {d}"));
    }
    header.push('\n');
    let mut out = header.into_bytes();
    out.reserve(t.len() * 4);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &str) -> Result<Tensor> {
    let bad = |reason: &str| Error::Format { path: origin.to_string(), reason: reason.to_string() };
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not utf-8"))?;
    let dims = header.strip_prefix("shape:").ok_or_else(|| bad("header must start with `shape:`"))?;
    let shape = dims
        .split_whitespace()
        .map(|d| d.parse::<usize>().map_err(|_| bad("non-integer dimension")))
        .collect::<Result<Vec<_>>>()?;
    let body = &bytes[nl + 1..];
    let expected: usize = shape.iter().product();
    if body.len() != expected * 4 {
        return Err(bad(&format!("expected {} payload bytes, found {}", expected * 4, body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn write(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode(&fs::read(path)?, &path.display().to_string())
}
