//! `GZDS` dataset container.
//!
//! Little-endian: magic `GZDS`, `u32` version, `u32` count, `u16` classes,
//! `u16` side, `u8` channels, then per image `u16` label, four `i16` box
//! fields (row, col, height, width; all −1 when absent) and the raw planar
//! `u8` pixels.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

use super::{Dataset, LabeledImage, PartBox};

const MAGIC: &[u8; 4] = b"GZDS";
pub const DATASET_VERSION: u32 = 1;

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.classes > u16::MAX as usize || ds.side > u16::MAX as usize || ds.channels > u8::MAX as usize {
        return Err(Error::arg("dataset dimensions exceed container limits"));
    }
    let px = ds.side * ds.side * ds.channels;
    let mut out = Vec::with_capacity(17 + ds.len() * (10 + px));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.classes as u16).to_le_bytes());
    out.extend_from_slice(&(ds.side as u16).to_le_bytes());
    out.push(ds.channels as u8);
    for s in &ds.images {
        if s.image.height() != ds.side || s.image.width() != ds.side || s.image.channels() != ds.channels {
            return Err(Error::shape("dataset", "image does not match container geometry"));
        }
        out.extend_from_slice(&(s.label as u16).to_le_bytes());
        let fields = match s.part_box {
            Some(b) => [b.row, b.col, b.height, b.width].map(|v| v as i16),
            None => [-1; 4],
        };
        for f in fields {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out.extend_from_slice(&s.image.to_u8());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let trunc = |what: &str| Error::Truncated { path: path.to_path_buf(), what: what.to_string() };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "GZDS" });
    }
    let header = bytes.get(4..17).ok_or_else(|| trunc("header"))?;
    let version = u32::from_le_bytes(header[0..4].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, expected: DATASET_VERSION });
    }
    let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let classes = u16::from_le_bytes(header[8..10].try_into().unwrap()) as usize;
    let side = u16::from_le_bytes(header[10..12].try_into().unwrap()) as usize;
    let channels = header[12] as usize;
    let px = side * side * channels;
    let mut pos = 17;
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let rec = bytes.get(pos..pos + 10 + px).ok_or_else(|| trunc(&format!("image {i}")))?;
        pos += 10 + px;
        let label = u16::from_le_bytes([rec[0], rec[1]]) as usize;
        if label >= classes {
            return Err(Error::Malformed { path: path.to_path_buf(), detail: format!("image {i} label {label}") });
        }
        let f: Vec<i16> = rec[2..10].chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
        let part_box = if f.iter().all(|&v| v >= 0) {
            Some(PartBox { row: f[0] as usize, col: f[1] as usize, height: f[2] as usize, width: f[3] as usize })
        } else {
            None
        };
        images.push(LabeledImage { image: Image::from_u8(channels, side, side, &rec[10..])?, label, part_box });
    }
    Ok(Dataset { classes, side, channels, images })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    decode_dataset(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_records_round_trip() {
        let img = Image::from_u8(3, 4, 4, &(0..48).collect::<Vec<u8>>()).unwrap();
        let ds = Dataset {
            classes: 3,
            side: 4,
            channels: 3,
            images: vec![
                LabeledImage {
                    image: img.clone(),
                    label: 2,
                    part_box: Some(PartBox { row: 1, col: 0, height: 2, width: 3 }),
                },
                LabeledImage { image: img, label: 0, part_box: None },
            ],
        };
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(&bytes[..4], b"GZDS");
        assert_eq!(bytes.len(), 17 + 2 * (10 + 48));
        assert_eq!(decode_dataset(&bytes, Path::new("d")).unwrap(), ds);
        assert!(matches!(decode_dataset(&bytes[..60], Path::new("d")), Err(Error::Truncated { .. })));
    }
}
