//! `GZCK` checkpoint files.
//!
//! Layout (little-endian): magic `GZCK`, `u32` version, `u32` descriptor
//! length + UTF-8 descriptor, `u32` tensor count, then per tensor `u32` name
//! length, name, `u32` ndims, `u32` dims, `f32` payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Model, ModelSpec};

const MAGIC: &[u8; 4] = b"GZCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let desc = model.spec().descriptor();
    put_str(&mut out, &desc);
    let tensors = named_tensors(model);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        put_str(&mut out, &name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn named_tensors(model: &Model) -> Vec<(String, &Tensor<f32>)> {
    let mut v = Vec::new();
    for (name, layer) in model.network().layers() {
        if let Some(p) = layer.params() {
            v.push((format!("{name}.weight"), &p.weight));
            v.push((format!("{name}.bias"), &p.bias));
        }
    }
    v
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated { path: self.path.to_path_buf(), what: what.to_string() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::Malformed { path: self.path.to_path_buf(), detail: format!("{what} is not UTF-8") })
    }
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "GZCK" });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, expected: CHECKPOINT_VERSION });
    }
    let desc = r.string("descriptor")?;
    let spec = ModelSpec::from_descriptor(&desc)?;
    let mut model = Model::new(spec, 0)?;
    let count = r.u32("tensor count")? as usize;
    let expected: Vec<(String, Vec<usize>)> =
        named_tensors(&model).into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    if count != expected.len() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("{count} tensors, architecture needs {}", expected.len()),
        });
    }
    let mut loaded = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let name = r.string("tensor name")?;
        if &name != want_name {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                detail: format!("expected {want_name}, found {name}"),
            });
        }
        let ctx = format!("tensor {name}");
        let nd = r.u32(&ctx)? as usize;
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(r.u32(&ctx)? as usize);
        }
        if &shape != want_shape {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                detail: format!("{name} has shape {shape:?}, expected {want_shape:?}"),
            });
        }
        let len: usize = shape.iter().product();
        let payload = r.take(len * 4, &ctx)?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        loaded.push(Tensor::new(&shape, data)?);
    }
    let mut it = loaded.into_iter();
    for (_, layer) in model.network_mut().layers_mut() {
        if let Some(p) = layer.params_mut() {
            p.weight = it.next().unwrap();
            p.bias = it.next().unwrap();
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    read_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Model {
        Model::new(ModelSpec::tiny(8, 3), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample();
        let back = read_checkpoint(&write_checkpoint(&m), Path::new("m.gzck")).unwrap();
        for ((_, a), (_, b)) in m.network().layers().iter().zip(back.network().layers()) {
            if let (Some(pa), Some(pb)) = (a.params(), b.params()) {
                let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&pa.weight), bits(&pb.weight));
                assert_eq!(bits(&pa.bias), bits(&pb.bias));
            }
        }
        assert_eq!(back.spec(), m.spec());
    }

    #[test]
    fn corrupt_magic() {
        let mut b = write_checkpoint(&sample());
        b[0] = b'X';
        assert!(matches!(read_checkpoint(&b, Path::new("c")), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn wrong_version() {
        let mut b = write_checkpoint(&sample());
        b[4] = 9;
        assert!(matches!(read_checkpoint(&b, Path::new("c")), Err(Error::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn truncated_payload_names_tensor() {
        let b = write_checkpoint(&sample());
        let err = read_checkpoint(&b[..b.len() - 3], Path::new("c")).unwrap_err();
        match err {
            Error::Truncated { what, .. } => assert_eq!(what, "tensor fc.bias"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
