//! Big-endian IDX files (optionally gzip-compressed), the format MNIST ships in.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        source_name: path.display().to_string(),
        message: message.into(),
    }
}

/// Whole file contents, transparently gunzipped when the gzip magic is present.
fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| format_err(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, "truncated header"))
}

/// Parses an IDX byte buffer, returning its dimensions and payload.
fn parse(bytes: &[u8], expected_magic: u32, dims: usize, path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected_magic {
        return Err(format_err(
            path,
            format!("expected magic {expected_magic}, found {magic}"),
        ));
    }
    let shape = (0..dims)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * dims;
    let n: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() < n {
        return Err(format_err(
            path,
            format!("truncated payload: {n} bytes declared, {} present", payload.len()),
        ));
    }
    Ok((shape, payload[..n].to_vec()))
}

/// Loads an image/label pair; pixels are scaled to `[0, 1]` and images are
/// flattened to `[N × rows·cols]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    load_idx_limit(images_path, labels_path, usize::MAX)
}

/// As [`load_idx`], keeping only the first `limit` examples.
pub fn load_idx_limit(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: usize,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (ishape, pixels) = parse(&read_bytes(ip)?, IMAGES_MAGIC, 3, ip)?;
    let (lshape, labels) = parse(&read_bytes(lp)?, LABELS_MAGIC, 1, lp)?;
    if ishape[0] != lshape[0] {
        return Err(format_err(
            ip,
            format!("{} images but {} labels", ishape[0], lshape[0]),
        ));
    }
    let n = ishape[0].min(limit);
    let d = ishape[1] * ishape[2];
    let data = pixels[..n * d].iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = labels[..n].iter().map(|&l| usize::from(l)).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, class_count)
}

fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out
}

fn write_file(path: &Path, bytes: &[u8], gzip: bool) -> Result<()> {
    let file = File::create(path)?;
    if gzip {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?;
    } else {
        let mut file = file;
        file.write_all(bytes)?;
    }
    Ok(())
}

/// Writes raw byte images `[N][rows·cols]` and labels as an IDX pair.
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    images: &[Vec<u8>],
    labels: &[u8],
    rows: u32,
    cols: u32,
    gzip: bool,
) -> Result<()> {
    let n = images.len() as u32;
    let mut img = header(IMAGES_MAGIC, &[n, rows, cols]);
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = header(LABELS_MAGIC, &[labels.len() as u32]);
    lab.extend_from_slice(labels);
    write_file(images_path.as_ref(), &img, gzip)?;
    write_file(labels_path.as_ref(), &lab, gzip)
}
