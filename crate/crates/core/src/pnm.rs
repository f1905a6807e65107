//! Binary and ASCII PGM/PPM reading, binary writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Decodes P2/P3/P5/P6 (8-bit and 16-bit maxval) into a `[0, 1]` image.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |detail: &str| Error::Malformed { path: path.to_path_buf(), detail: detail.to_string() };
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos).ok_or_else(|| bad("empty file"))?;
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P3" => (3, false),
        "P5" => (1, true),
        "P6" => (3, true),
        _ => return Err(bad("not a PGM/PPM file")),
    };
    let num = |pos: &mut usize, what: &str| -> Result<usize> {
        token(pos).and_then(|t| t.parse().ok()).ok_or_else(|| bad(&format!("bad {what}")))
    };
    let width = num(&mut pos, "width")?;
    let height = num(&mut pos, "height")?;
    let maxval = num(&mut pos, "maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("invalid header values"));
    }
    let count = width * height * channels;
    let mut samples = Vec::with_capacity(count);
    if binary {
        pos += 1; // single whitespace after maxval
        let bps = if maxval < 256 { 1 } else { 2 };
        let body = bytes.get(pos..pos + count * bps).ok_or_else(|| bad("truncated pixel data"))?;
        if bps == 1 {
            samples.extend(body.iter().map(|&b| b as f32 / maxval as f32));
        } else {
            samples.extend(body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / maxval as f32));
        }
    } else {
        for _ in 0..count {
            samples.push(num(&mut pos, "sample")? as f32 / maxval as f32);
        }
    }
    // interleaved -> planar
    let mut planar = vec![0.0f32; count];
    for (i, px) in samples.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            planar[c * width * height + i] = v.min(1.0);
        }
    }
    Image::new(channels, height, width, planar)
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Binary PGM (1 channel) or PPM (3 channels).
pub fn encode(img: &Image) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::arg(format!("cannot write {c}-channel image as PNM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    let px = img.to_u8();
    let n = img.width() * img.height();
    for i in 0..n {
        for c in 0..img.channels() {
            out.push(px[c * n + i]);
        }
    }
    Ok(out)
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode(img)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let img = Image::from_u8(3, 2, 3, &(0..18).map(|v| v * 14).collect::<Vec<u8>>()).unwrap();
        let back = decode(&encode(&img).unwrap(), Path::new("x.ppm")).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ascii_with_comments() {
        let src = b"P2\n# comment\n2 1\n4\n0 4\n";
        let img = decode(src, Path::new("a.pgm")).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_other_formats() {
        assert!(decode(b"\x89PNG....", Path::new("x.png")).is_err());
        assert!(decode(b"P5\n4 4\n255\n\x00", Path::new("short.pgm")).is_err());
    }
}
