//! On-disk formats for clouds and range images.
//!
//! Point clouds: text CSV with `x,y,z,intensity,laser_id` per line, or a
//! binary container (16-byte magic `SLIDEPC1`, u32 record count, packed
//! `f32 x,y,z,intensity` + `u16 laser_id` records, little-endian).
//!
//! Range images: a u32 length-prefixed JSON header (`rows`, `cols`,
//! `delta_h`, `channels`) followed by row-major little-endian planes in
//! header order. `range` and `intensity` planes are f32; the `label` plane
//! is u8 with 0=Clean, 1=Noise, 255=Invalid. A range of 0 encodes an
//! invalid pixel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Label, LabelMap, Point, PointCloud, RangeImage};

pub const CLOUD_MAGIC: &[u8; 8] = b"SLIDEPC1";

#[derive(Debug, Error)]
pub enum FileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic, not a cloud file")]
    BadMagic,
    #[error("malformed record at line {line}: {reason}")]
    BadCsvRecord { line: usize, reason: String },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("bad label byte {0}")]
    BadLabelByte(u8),
    #[error("file ends before plane data is complete")]
    Truncated,
}

pub fn write_cloud_csv(path: &Path, cloud: &[Point]) -> Result<(), FileError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in cloud {
        writeln!(w, "{},{},{},{},{}", p.x, p.y, p.z, p.intensity, p.laser_id)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cloud_csv(path: &Path) -> Result<PointCloud, FileError> {
    let mut text = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    let mut cloud = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(FileError::BadCsvRecord {
                line: lineno + 1,
                reason: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, FileError> {
            s.parse().map_err(|e| FileError::BadCsvRecord {
                line: lineno + 1,
                reason: format!("{e}: {s:?}"),
            })
        };
        cloud.push(Point {
            x: parse(fields[0])?,
            y: parse(fields[1])?,
            z: parse(fields[2])?,
            intensity: parse(fields[3])?,
            laser_id: fields[4].parse().map_err(|e| FileError::BadCsvRecord {
                line: lineno + 1,
                reason: format!("{e}: {:?}", fields[4]),
            })?,
        });
    }
    Ok(cloud)
}

pub fn write_cloud_binary(path: &Path, cloud: &[Point]) -> Result<(), FileError> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut magic = [0u8; 16];
    magic[..8].copy_from_slice(CLOUD_MAGIC);
    w.write_all(&magic)?;
    w.write_all(&(cloud.len() as u32).to_le_bytes())?;
    for p in cloud {
        w.write_all(&(p.x as f32).to_le_bytes())?;
        w.write_all(&(p.y as f32).to_le_bytes())?;
        w.write_all(&(p.z as f32).to_le_bytes())?;
        w.write_all(&(p.intensity as f32).to_le_bytes())?;
        w.write_all(&p.laser_id.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cloud_binary(path: &Path) -> Result<PointCloud, FileError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)?;
    if &magic[..8] != CLOUD_MAGIC {
        return Err(FileError::BadMagic);
    }
    let count = read_u32(&mut r)? as usize;
    let mut cloud = Vec::with_capacity(count);
    for _ in 0..count {
        let x = read_f32(&mut r)? as f64;
        let y = read_f32(&mut r)? as f64;
        let z = read_f32(&mut r)? as f64;
        let intensity = read_f32(&mut r)? as f64;
        let mut id = [0u8; 2];
        r.read_exact(&mut id)?;
        cloud.push(Point { x, y, z, intensity, laser_id: u16::from_le_bytes(id) });
    }
    Ok(cloud)
}

#[derive(Debug, Serialize, Deserialize)]
struct RimgHeader {
    rows: usize,
    cols: usize,
    delta_h: f64,
    channels: Vec<String>,
}

/// Write a range image with whatever channels it carries
/// (`range` always, then `intensity`, then `label`).
pub fn write_range_image(path: &Path, img: &RangeImage, delta_h: f64) -> Result<(), FileError> {
    let mut channels = vec!["range".to_string()];
    if img.intensity.is_some() {
        channels.push("intensity".into());
    }
    if img.label.is_some() {
        channels.push("label".into());
    }
    let header = RimgHeader { rows: img.rows, cols: img.cols, delta_h, channels };
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, &header)?;
    write_f32_plane(&mut w, &img.range)?;
    if let Some(intensity) = &img.intensity {
        write_f32_plane(&mut w, intensity)?;
    }
    if let Some(label) = &img.label {
        write_label_plane(&mut w, label)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a range image; returns the image and the header's `delta_h`.
pub fn read_range_image(path: &Path) -> Result<(RangeImage, f64), FileError> {
    let mut r = BufReader::new(File::open(path)?);
    let header = read_header(&mut r)?;
    let n = header.rows * header.cols;
    let mut img = RangeImage::empty(header.rows, header.cols);
    for ch in &header.channels {
        match ch.as_str() {
            "range" => {
                img.range = read_f32_plane(&mut r, n)?;
                for i in 0..n {
                    img.valid[i] = img.range[i] > 0.0;
                }
            }
            "intensity" => img.intensity = Some(read_f32_plane(&mut r, n)?),
            "label" => {
                img.label = Some(read_label_plane(&mut r, header.rows, header.cols)?)
            }
            other => return Err(FileError::UnknownChannel(other.to_string())),
        }
    }
    Ok((img, header.delta_h))
}

/// Write a label map alone (a range-image file whose only channel is `label`).
pub fn write_label_map(path: &Path, labels: &LabelMap, delta_h: f64) -> Result<(), FileError> {
    let header = RimgHeader {
        rows: labels.rows,
        cols: labels.cols,
        delta_h,
        channels: vec!["label".into()],
    };
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, &header)?;
    write_label_plane(&mut w, labels)?;
    w.flush()?;
    Ok(())
}

/// Read the label plane from any range-image file that has one.
pub fn read_label_map(path: &Path) -> Result<(LabelMap, f64), FileError> {
    let (img, delta_h) = read_range_image(path)?;
    match img.label {
        Some(l) => Ok((l, delta_h)),
        None => Err(FileError::BadHeader("file has no label channel".into())),
    }
}

fn write_header<W: Write>(w: &mut W, header: &RimgHeader) -> Result<(), FileError> {
    let json = serde_json::to_vec(header)
        .map_err(|e| FileError::BadHeader(e.to_string()))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<RimgHeader, FileError> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(FileError::BadHeader(format!("header length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    let header: RimgHeader =
        serde_json::from_slice(&buf).map_err(|e| FileError::BadHeader(e.to_string()))?;
    if header.rows == 0 || header.cols == 0 {
        return Err(FileError::BadHeader("zero-sized image".into()));
    }
    Ok(header)
}

fn write_f32_plane<W: Write>(w: &mut W, plane: &[f64]) -> Result<(), FileError> {
    let mut buf = Vec::with_capacity(plane.len() * 4);
    for &v in plane {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32_plane<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, FileError> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|_| FileError::Truncated)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_label_plane<W: Write>(w: &mut W, labels: &LabelMap) -> Result<(), FileError> {
    let bytes: Vec<u8> = labels.values.iter().map(|l| l.to_u8()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn read_label_plane<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<LabelMap, FileError> {
    let mut buf = vec![0u8; rows * cols];
    r.read_exact(&mut buf).map_err(|_| FileError::Truncated)?;
    let mut values = Vec::with_capacity(buf.len());
    for b in buf {
        values.push(Label::from_u8(b).ok_or(FileError::BadLabelByte(b))?);
    }
    Ok(LabelMap { rows, cols, values })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FileError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32, FileError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}
