//! Evidence pools: patches cropped around the ground-truth-class saliency
//! peak of correctly classified training images, with iterative erasing to
//! collect secondary evidence.
//!
//! `GZPL` layout (little-endian): magic, `u32` version, `u32` patch count,
//! then per patch `u32` source id, `u8` level, `u8` method, `u16` label,
//! `u16` side, `u8` channels and the planar `u8` pixels. A JSON manifest
//! with the same stem sits next to the pool file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::grounding::{erase, extract_patch, peak, Grounder, GroundingConfig, Method};
use crate::image::Image;
use crate::model::{train_with_trace, Classifier, Model, ModelSpec, TrainConfig, TrainTrace};

const MAGIC: &[u8; 4] = b"GZPL";
pub const POOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EvidencePatch {
    pub pixels: Image,
    /// Ground-truth label of the source image.
    pub label: usize,
    pub source_id: usize,
    pub level: usize,
    pub method: Method,
}

/// Where a patch came from: enough to re-derive its pixels from the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub source_id: usize,
    pub level: usize,
    pub method: Method,
    /// Saliency peak the patch is centered on.
    pub center: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub source_id: usize,
    pub method: Method,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub version: u32,
    pub classes: usize,
    /// Deepest erasing level `L`.
    pub levels: usize,
    pub patch_size: usize,
    pub erase_size: usize,
    pub methods: Vec<Method>,
    pub source_images: usize,
    pub checkpoint_sha256: Option<String>,
    pub dataset_sha256: Option<String>,
    pub grounding: Vec<GroundingConfig>,
    /// Sources the classifier got wrong before any erasing.
    pub misclassified: Vec<usize>,
    /// Sources whose level-0 saliency map was degenerate.
    pub no_evidence: Vec<Skipped>,
    /// One record per patch, in pool order.
    pub patches: Vec<PatchRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvidencePool {
    pub patches: Vec<EvidencePatch>,
    pub manifest: PoolManifest,
}

impl EvidencePool {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.manifest.classes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub levels: usize,
    pub patch_size: usize,
    pub erase_size: usize,
}

impl PoolConfig {
    pub fn new(levels: usize, grounding: &GroundingConfig) -> Self {
        PoolConfig { levels, patch_size: grounding.patch_size, erase_size: grounding.erase_size }
    }
}

enum Outcome {
    Misclassified,
    NoEvidence,
    Patches(Vec<(Image, (usize, usize))>),
}

fn image_evidence(
    sample: &LabeledImage,
    classifier: &dyn Classifier,
    grounder: &dyn Grounder,
    cfg: &PoolConfig,
) -> Result<Outcome> {
    if classifier.classify(&sample.image)?.argmax() != sample.label {
        return Ok(Outcome::Misclassified);
    }
    let mut cur = sample.image.clone();
    let mut out = Vec::new();
    for level in 0..=cfg.levels {
        if level > 0 {
            cur = erase(&cur, out.last().map(|(_, c)| *c).unwrap(), cfg.erase_size)?;
            if classifier.classify(&cur)?.argmax() != sample.label {
                break;
            }
        }
        let map = grounder.ground(&cur, sample.label)?;
        if map.is_degenerate() {
            if level == 0 {
                return Ok(Outcome::NoEvidence);
            }
            break;
        }
        let center = peak(&map)?;
        out.push((extract_patch(&cur, center, cfg.patch_size)?, center));
    }
    Ok(Outcome::Patches(out))
}

/// Single-method pool with up to `cfg.levels` rounds of erasing per image.
/// An image contributes nothing when it is misclassified or its first map
/// is degenerate; erasing stops at the first level where the image is no
/// longer classified correctly.
pub fn build_pool(
    images: &[LabeledImage],
    classes: usize,
    classifier: &dyn Classifier,
    grounder: &dyn Grounder,
    cfg: &PoolConfig,
) -> Result<EvidencePool> {
    if cfg.patch_size == 0 || cfg.erase_size == 0 {
        return Err(Error::config("patch and erase sizes must be positive"));
    }
    if let Some(s) = images.iter().find(|s| s.label >= classes) {
        return Err(Error::config(format!("label {} out of range for {classes} classes", s.label)));
    }
    let outcomes: Vec<Outcome> =
        images.par_iter().map(|s| image_evidence(s, classifier, grounder, cfg)).collect::<Result<_>>()?;
    let method = grounder.method();
    let mut manifest = PoolManifest {
        version: POOL_VERSION,
        classes,
        levels: cfg.levels,
        patch_size: cfg.patch_size,
        erase_size: cfg.erase_size,
        methods: vec![method],
        source_images: images.len(),
        checkpoint_sha256: None,
        dataset_sha256: None,
        grounding: Vec::new(),
        misclassified: Vec::new(),
        no_evidence: Vec::new(),
        patches: Vec::new(),
    };
    let mut patches = Vec::new();
    for (source_id, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Outcome::Misclassified => manifest.misclassified.push(source_id),
            Outcome::NoEvidence => manifest.no_evidence.push(Skipped { source_id, method }),
            Outcome::Patches(found) => {
                for (level, (pixels, center)) in found.into_iter().enumerate() {
                    let label = images[source_id].label;
                    patches.push(EvidencePatch { pixels, label, source_id, level, method });
                    manifest.patches.push(PatchRecord { source_id, level, method, center });
                }
            }
        }
    }
    Ok(EvidencePool { patches, manifest })
}

/// Union (as a multiset) of level-0 pools, one per grounder, in grounder
/// order.
pub fn build_ensemble_pool(
    images: &[LabeledImage],
    classes: usize,
    classifier: &dyn Classifier,
    grounders: &[&dyn Grounder],
    patch_size: usize,
    erase_size: usize,
) -> Result<EvidencePool> {
    let (first, rest) = grounders.split_first().ok_or_else(|| Error::config("ensemble needs at least one method"))?;
    let cfg = PoolConfig { levels: 0, patch_size, erase_size };
    let mut pool = build_pool(images, classes, classifier, *first, &cfg)?;
    for g in rest {
        let p = build_pool(images, classes, classifier, *g, &cfg)?;
        pool.patches.extend(p.patches);
        pool.manifest.patches.extend(p.manifest.patches);
        pool.manifest.no_evidence.extend(p.manifest.no_evidence);
        pool.manifest.methods.extend(p.manifest.methods);
    }
    Ok(pool)
}

/// Patch as the Evidence CNN sees it: bilinearly resized to `side × side`.
pub fn evidence_input(patch: &Image, side: usize) -> Image {
    if patch.height() == side && patch.width() == side {
        patch.clone()
    } else {
        patch.resize(side, side)
    }
}

/// Trains the Evidence CNN on the pool patches and their inherited labels.
pub fn train_evidence_cnn(pool: &EvidencePool, spec: &ModelSpec, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    if pool.is_empty() {
        return Err(Error::config("evidence pool is empty"));
    }
    let samples: Vec<LabeledImage> = pool
        .patches
        .iter()
        .map(|p| LabeledImage { image: evidence_input(&p.pixels, spec.input_size), label: p.label, part_box: None })
        .collect();
    train_with_trace(&samples, spec, cfg)
}

/// Structural audit of a pool against its source images. Returns one
/// message per violated invariant; an empty list means the pool is sound.
/// When `classifier` is given, patches from misclassified sources are also
/// looked for.
pub fn audit_pool(
    pool: &EvidencePool,
    images: &[LabeledImage],
    classifier: Option<&dyn Classifier>,
) -> Result<Vec<String>> {
    let m = &pool.manifest;
    let mut bad = Vec::new();
    if m.patches.len() != pool.patches.len() {
        bad.push(format!("{} patches but {} manifest records", pool.patches.len(), m.patches.len()));
        return Ok(bad);
    }
    if m.source_images != images.len() {
        bad.push(format!("manifest names {} sources, {} given", m.source_images, images.len()));
        return Ok(bad);
    }
    let bound = images.len() * (m.levels + 1) * m.methods.len();
    if pool.len() > bound {
        bad.push(format!("pool has {} patches, bound is {bound}", pool.len()));
    }
    let mut levels: BTreeMap<(usize, Method), Vec<(usize, usize)>> = BTreeMap::new();
    for (i, (p, r)) in pool.patches.iter().zip(&m.patches).enumerate() {
        if (p.source_id, p.level, p.method) != (r.source_id, r.level, r.method) {
            bad.push(format!("patch {i} disagrees with its manifest record"));
            continue;
        }
        if p.source_id >= images.len() {
            bad.push(format!("patch {i} names missing source {}", p.source_id));
            continue;
        }
        if p.level > m.levels {
            bad.push(format!("patch {i} level {} exceeds {}", p.level, m.levels));
        }
        if p.label != images[p.source_id].label {
            bad.push(format!("patch {i} label {} differs from source label {}", p.label, images[p.source_id].label));
        }
        levels.entry((p.source_id, p.method)).or_default().push((p.level, i));
    }
    for ((source_id, method), seen) in &levels {
        let mut sorted: Vec<usize> = seen.iter().map(|(l, _)| *l).collect();
        sorted.sort_unstable();
        if sorted.iter().enumerate().any(|(i, &l)| i != l) {
            bad.push(format!("source {source_id} ({method}) has levels {sorted:?}"));
            continue;
        }
        // replay the erasing history
        let mut by_level = seen.clone();
        by_level.sort_unstable();
        let mut cur = images[*source_id].image.clone();
        for (level, idx) in by_level {
            if level > 0 {
                let prev = m.patches[seen.iter().find(|(l, _)| *l == level - 1).unwrap().1].center;
                cur = erase(&cur, prev, m.erase_size)?;
            }
            let expect = extract_patch(&cur, m.patches[idx].center, m.patch_size)?;
            if expect.to_u8() != pool.patches[idx].pixels.to_u8() {
                bad.push(format!("patch {idx} pixels do not match source {source_id} level {level}"));
            }
        }
    }
    if let Some(c) = classifier {
        let sources: Vec<usize> = levels.keys().map(|(s, _)| *s).collect();
        for s in sources {
            if c.classify(&images[s].image)?.argmax() != images[s].label {
                bad.push(format!("source {s} is misclassified but contributed patches"));
            }
        }
    }
    Ok(bad)
}

pub fn encode_pool(pool: &EvidencePool) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&POOL_VERSION.to_le_bytes());
    out.extend_from_slice(&(pool.len() as u32).to_le_bytes());
    for p in &pool.patches {
        let img = &p.pixels;
        if img.height() != img.width() || img.height() > u16::MAX as usize || p.label > u16::MAX as usize {
            return Err(Error::arg("patch does not fit the pool format"));
        }
        out.extend_from_slice(&(p.source_id as u32).to_le_bytes());
        out.push(p.level as u8);
        out.push(p.method.code());
        out.extend_from_slice(&(p.label as u16).to_le_bytes());
        out.extend_from_slice(&(img.height() as u16).to_le_bytes());
        out.push(img.channels() as u8);
        out.extend_from_slice(&img.to_u8());
    }
    Ok(out)
}

pub fn decode_pool(bytes: &[u8], path: &Path) -> Result<Vec<EvidencePatch>> {
    let trunc = |what: String| Error::Truncated { path: path.to_path_buf(), what };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "GZPL" });
    }
    let header = bytes.get(4..12).ok_or_else(|| trunc("header".into()))?;
    let version = u32::from_le_bytes(header[..4].try_into().unwrap());
    if version != POOL_VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, expected: POOL_VERSION });
    }
    let count = u32::from_le_bytes(header[4..].try_into().unwrap()) as usize;
    let mut pos = 12;
    let mut patches = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let h = bytes.get(pos..pos + 11).ok_or_else(|| trunc(format!("patch {i}")))?;
        let source_id = u32::from_le_bytes(h[..4].try_into().unwrap()) as usize;
        let level = h[4] as usize;
        let method = Method::from_code(h[5]).ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("patch {i} method {}", h[5]),
        })?;
        let label = u16::from_le_bytes([h[6], h[7]]) as usize;
        let side = u16::from_le_bytes([h[8], h[9]]) as usize;
        let channels = h[10] as usize;
        pos += 11;
        let n = side * side * channels;
        let px = bytes.get(pos..pos + n).ok_or_else(|| trunc(format!("patch {i} pixels")))?;
        pos += n;
        patches.push(EvidencePatch {
            pixels: Image::from_u8(channels, side, side, px)?,
            label,
            source_id,
            level,
            method,
        });
    }
    if pos != bytes.len() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes", bytes.len() - pos),
        });
    }
    Ok(patches)
}

/// Sidecar manifest path: the pool path with a `.json` extension.
pub fn manifest_path(pool_path: &Path) -> PathBuf {
    pool_path.with_extension("json")
}

pub fn write_pool(path: &Path, pool: &EvidencePool) -> Result<()> {
    std::fs::write(path, encode_pool(pool)?).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let json =
        serde_json::to_string_pretty(&pool.manifest).map_err(|e| Error::Json { path: mpath.clone(), source: e })?;
    std::fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))
}

fn read_artifact(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

pub fn read_pool(path: &Path) -> Result<EvidencePool> {
    let patches = decode_pool(&read_artifact(path)?, path)?;
    let mpath = manifest_path(path);
    let manifest: PoolManifest =
        serde_json::from_slice(&read_artifact(&mpath)?).map_err(|e| Error::Json { path: mpath.clone(), source: e })?;
    if manifest.patches.len() != patches.len() {
        return Err(Error::Malformed {
            path: mpath,
            detail: format!("{} records for {} patches", manifest.patches.len(), patches.len()),
        });
    }
    Ok(EvidencePool { patches, manifest })
}
