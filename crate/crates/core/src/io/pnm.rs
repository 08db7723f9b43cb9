//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.
//!
//! Pixel `p` maps to `p / 127.5 - 1`; writing clamps to `[-1, 1]` and maps
//! back with round-half-up.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, Shape};

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::ImageFormat {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn pixel_to_value(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

pub fn value_to_pixel(v: f64) -> u8 {
    let scaled = (v.clamp(-1.0, 1.0) + 1.0) * 127.5;
    (scaled + 0.5).floor().clamp(0.0, 255.0) as u8
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(format_err(path, "bad magic, expected P5 or P6")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments before each header number
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while !matches!(bytes.get(pos), Some(b'\n') | Some(b'\r') | None) {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(format_err(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "malformed header number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, "header number out of range"))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(format_err(path, "truncated header")),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format_err(path, format!("bad maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(format_err(path, "zero image dimension"));
    }
    Ok(Header {
        channels,
        width,
        height,
        data_offset: pos,
    })
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    let h = parse_header(bytes, path)?;
    let shape = Shape::new(h.height, h.width, h.channels);
    let raster = &bytes[h.data_offset..];
    if raster.len() < shape.len() {
        return Err(format_err(
            path,
            format!("truncated pixel data: {} of {} bytes", raster.len(), shape.len()),
        ));
    }
    let mut data = vec![0.0; shape.len()];
    for (i, &p) in raster[..shape.len()].iter().enumerate() {
        // interleaved on disk, channel-major in memory
        let ch = i % h.channels;
        let pixel = i / h.channels;
        data[ch * h.height * h.width + pixel] = pixel_to_value(p);
    }
    ImageTensor::new(shape, data)
}

pub fn encode(image: &ImageTensor) -> Result<Vec<u8>> {
    let shape = image.shape();
    let magic = match shape.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::InvalidParameter(format!(
                "only 1 or 3 channels can be written, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", shape.width, shape.height).into_bytes();
    let plane = shape.height * shape.width;
    out.reserve(shape.len());
    for pixel in 0..plane {
        for ch in 0..shape.channels {
            out.push(value_to_pixel(image.as_slice()[ch * plane + pixel]));
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_image(image: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(image)?).map_err(|e| Error::io(path, e))
}
