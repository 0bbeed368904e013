//! The UDNT binary tensor container and PNG ingestion.
//!
//! Layout of one record:
//!
//! ```text
//! b"UDNT" | version: u8 | dtype: u8 (0=f32, 1=f64) | rank: u8 |
//! extents: rank x u32 LE | payload: row-major LE scalars
//! ```
//!
//! Several records may be concatenated in one file (checkpoint bundles).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"UDNT";
pub const VERSION: u8 = 1;

pub fn encode<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE as u8);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Decodes one record from the front of `bytes`, converting to `T` if the
/// stored dtype differs. Returns the tensor and the number of bytes consumed.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    let header = bytes
        .get(..7)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", header[4])));
    }
    let dtype = DType::from_code(header[5])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", header[5])))?;
    let rank = header[6] as usize;
    if rank == 0 {
        return Err(Error::Format("rank 0".into()));
    }
    let mut pos = 7;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let b = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| Error::Format("truncated extents".into()))?;
        shape.push(u32::from_le_bytes(b.try_into().unwrap()) as usize);
        pos += 4;
    }
    let count: usize = shape.iter().product();
    let size = dtype.size();
    let payload = bytes
        .get(pos..pos + count * size)
        .ok_or_else(|| Error::Format("truncated payload".into()))?;
    let data: Vec<T> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| T::of(f32::read_le(c) as f64))
            .collect(),
        DType::F64 => payload.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
    };
    Ok((Tensor::from_vec(&shape, data)?, pos + count * size))
}

pub fn write_tensor<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    write_bundle(path, std::slice::from_ref(t))
}

pub fn write_bundle<T: Real>(path: impl AsRef<Path>, ts: &[Tensor<T>]) -> Result<()> {
    let mut buf = Vec::new();
    for t in ts {
        encode(t, &mut buf);
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let (t, used) = decode(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor",
            bytes.len() - used
        )));
    }
    Ok(t)
}

pub fn read_bundle<T: Real>(path: impl AsRef<Path>) -> Result<Vec<Tensor<T>>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let (t, used) = decode(&bytes[pos..])?;
        out.push(t);
        pos += used;
    }
    Ok(out)
}

/// Loads an 8- or 16-bit grayscale PNG (colour is converted to luma) with
/// values rescaled to `[0, 1]`.
pub fn read_png_gray<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    gray_to_tensor(image::open(path)?)
}

/// [`read_png_gray`] for an in-memory PNG.
pub fn decode_png_gray<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    gray_to_tensor(image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?)
}

fn gray_to_tensor<T: Real>(img: image::DynamicImage) -> Result<Tensor<T>> {
    let g = img.into_luma16();
    let (w, h) = g.dimensions();
    let data = g.as_raw().iter().map(|&v| T::of(v as f64 / 65535.0)).collect();
    Tensor::from_vec(&[h as usize, w as usize], data)
}

/// Writes a rank-2 tensor as an 8-bit PNG, clamping to `[0, 1]`.
pub fn write_png_gray<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let (h, w) = t.dims2()?;
    let bytes: Vec<u8> = t.data().iter().map(|&v| unit_to_u8(v.as_f64())).collect();
    image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .expect("buffer sized from dims")
        .save(path)?;
    Ok(())
}

/// Writes three equally shaped planes as an 8-bit RGB PNG, clamping to `[0, 1]`.
pub fn write_png_rgb<T: Real>(path: impl AsRef<Path>, rgb: [&Tensor<T>; 3]) -> Result<()> {
    let (h, w) = rgb[0].dims2()?;
    for c in &rgb[1..] {
        c.expect_shape(&[h, w])?;
    }
    let mut bytes = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for c in &rgb {
            bytes.push(unit_to_u8(c.data()[i].as_f64()));
        }
    }
    image::RgbImage::from_raw(w as u32, h as u32, bytes)
        .expect("buffer sized from dims")
        .save(path)?;
    Ok(())
}

fn unit_to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a tensor from `.png` or UDNT (any other extension).
pub fn read_any<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => read_png_gray(path),
        _ => read_tensor(path),
    }
}
