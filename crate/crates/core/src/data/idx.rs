//! IDX files: a zero word, a type byte, a rank byte, `rank` big-endian u32
//! dimensions and the row-major payload. Image files are
//! `0x00000803` (u8, rank 3) and label files `0x00000801` (u8, rank 1);
//! real-valued features use the float type codes `0x0D` and `0x0E`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::DomainTag;

use super::{Dataset, LabeledSample};

const TYPE_U8: u8 = 0x08;
const TYPE_F32: u8 = 0x0D;
const TYPE_F64: u8 = 0x0E;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

impl IdxArray {
    /// Values as reals; bytes are scaled to `[0, 1]`.
    pub fn to_unit_f64(&self) -> Vec<f64> {
        match &self.data {
            IdxData::U8(v) => v.iter().map(|&b| b as f64 / 255.0).collect(),
            IdxData::F64(v) => v.clone(),
        }
    }
}

fn parse_error(offset: usize, message: impl Into<String>) -> Error {
    Error::IdxParse { offset, message: message.into() }
}

pub fn read_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(parse_error(bytes.len(), "file shorter than the 4-byte magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_error(0, format!("bad magic {:02x?}", &bytes[..4])));
    }
    let (type_code, rank) = (bytes[2], bytes[3] as usize);
    let width = match type_code {
        TYPE_U8 => 1,
        TYPE_F32 => 4,
        TYPE_F64 => 8,
        other => return Err(parse_error(2, format!("unsupported type code 0x{other:02x}"))),
    };
    if rank == 0 {
        return Err(parse_error(3, "rank 0"));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(parse_error(bytes.len(), format!("truncated header, need {header} bytes")));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let expected = header + count * width;
    if bytes.len() < expected {
        return Err(parse_error(
            bytes.len(),
            format!("truncated payload, expected {expected} bytes for dims {dims:?}"),
        ));
    }
    if bytes.len() > expected {
        return Err(parse_error(expected, "trailing bytes after payload"));
    }
    let payload = &bytes[header..expected];
    let data = match type_code {
        TYPE_U8 => IdxData::U8(payload.to_vec()),
        TYPE_F32 => IdxData::F64(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_be_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        ),
        _ => IdxData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ),
    };
    Ok(IdxArray { dims, data })
}

/// Loads an image (or feature) file together with its label file.
pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    name: &str,
    domain: DomainTag,
) -> Result<Dataset> {
    let images = read_idx(&fs::read(images)?)?;
    let labels = read_idx(&fs::read(labels)?)?;
    let label_bytes = match (&labels.data, labels.dims.len()) {
        (IdxData::U8(v), 1) => v,
        _ => return Err(parse_error(2, "label file must be rank-1 unsigned bytes")),
    };
    let n = images.dims[0];
    if n != label_bytes.len() {
        return Err(Error::InvalidInput(format!(
            "{n} images but {} labels",
            label_bytes.len()
        )));
    }
    let dims = match images.dims[..] {
        [_, h, w] => [1, h, w],
        [_, d] => [d, 1, 1],
        [_, c, h, w] => [c, h, w],
        _ => return Err(parse_error(3, format!("unsupported image rank {}", images.dims.len()))),
    };
    let size: usize = dims.iter().product();
    let values = images.to_unit_f64();
    let classes = label_bytes.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(2);
    let samples = values
        .chunks_exact(size.max(1))
        .zip(label_bytes)
        .map(|(px, &label)| LabeledSample { features: px.to_vec(), label: label as usize, domain })
        .collect();
    Dataset::new(name, dims, classes, samples)
}

fn header(type_code: u8, dims: &[usize]) -> Vec<u8> {
    let mut out = vec![0, 0, type_code, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out
}

/// Writes `images` (u8 when every value is a multiple of 1/255 in
/// `[0, 1]`, f64 otherwise) and `labels` (u8).
pub fn write_idx_dataset(ds: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    if ds.classes > 256 {
        return Err(Error::InvalidInput("IDX labels hold at most 256 classes".into()));
    }
    let n = ds.len();
    let shape: Vec<usize> = match ds.dims {
        [d, 1, 1] => vec![n, d],
        [1, h, w] => vec![n, h, w],
        [c, h, w] => vec![n, c, h, w],
    };
    let as_bytes = ds.samples.iter().flat_map(|s| &s.features).all(|&v| {
        let scaled = v * 255.0;
        (0.0..=1.0).contains(&v) && (scaled - scaled.round()).abs() < 1e-9
    });
    let mut img = if as_bytes { header(TYPE_U8, &shape) } else { header(TYPE_F64, &shape) };
    for v in ds.samples.iter().flat_map(|s| &s.features) {
        if as_bytes {
            img.push((v * 255.0).round() as u8);
        } else {
            img.extend_from_slice(&v.to_be_bytes());
        }
    }
    let mut lab = header(TYPE_U8, &[n]);
    lab.extend(ds.samples.iter().map(|s| s.label as u8));
    fs::File::create(images)?.write_all(&img)?;
    fs::File::create(labels)?.write_all(&lab)?;
    Ok(())
}
