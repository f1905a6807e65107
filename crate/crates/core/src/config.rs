//! Line-oriented `key = value` run configuration with `[section]` headers.
//!
//! ```text
//! seed = 7
//!
//! [train]
//! iterations = 3000
//! channels = 16,32,64,64
//!
//! [refine]
//! k = 3
//! weights = 0.4,0.3,0.2,0.1
//! ```
//!
//! Blank lines and lines starting with `#` or `;` are ignored. Keys before
//! the first header belong to the unnamed top-level section.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grounding::{GroundingConfig, Method};
use crate::model::TrainConfig;
use crate::refine::RefinementConfig;

/// Raw parsed file: section name to ordered key/value pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(format!("line {}: unterminated section header", n + 1)))?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", n + 1)));
            }
            let sec = sections.entry(current.clone()).or_default();
            if sec.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
        }
        Ok(ConfigFile { sections })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::parse(&text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    fn section(&self, name: &str) -> impl Iterator<Item = (&String, &String)> {
        self.sections.get(name).into_iter().flatten()
    }
}

fn parse_value<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(format!("[{section}] {key}: cannot parse {v:?}")))
}

/// Comma-separated list, e.g. `0.4,0.3,0.2,0.1`.
pub fn parse_list<T: FromStr>(what: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::config(format!("{what}: cannot parse {s:?} in {v:?}"))))
        .collect()
}

fn unknown(section: &str, key: &str) -> Error {
    Error::config(format!("unknown key [{section}] {key}"))
}

/// Training schedule plus optional channel widths.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub train: TrainConfig,
    pub channels: Option<Vec<usize>>,
}

/// Merged view of everything a run can configure.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub conventional: TrainSection,
    pub evidence: TrainSection,
    pub grounding: GroundingConfig,
    pub refine: RefinementConfig,
    /// Erasing depth for pool building.
    pub pool_levels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            conventional: TrainSection { train: TrainConfig::default(), channels: None },
            evidence: TrainSection { train: TrainConfig::default(), channels: None },
            grounding: GroundingConfig::default(),
            refine: RefinementConfig::default(),
            pool_levels: 2,
        }
    }
}

fn apply_train(file: &ConfigFile, name: &str, dst: &mut TrainSection) -> Result<()> {
    for (k, v) in file.section(name) {
        let t = &mut dst.train;
        match k.as_str() {
            "learning_rate" => t.learning_rate = parse_value(name, k, v)?,
            "momentum" => t.momentum = parse_value(name, k, v)?,
            "batch_size" => t.batch_size = parse_value(name, k, v)?,
            "decay_factor" => t.decay_factor = parse_value(name, k, v)?,
            "decay_every" => t.decay_every = parse_value(name, k, v)?,
            "iterations" => t.iterations = parse_value(name, k, v)?,
            "crop_pad" => t.crop_pad = parse_value(name, k, v)?,
            "channels" => dst.channels = Some(parse_list(&format!("[{name}] channels"), v)?),
            _ => return Err(unknown(name, k)),
        }
    }
    dst.train.validate()
}

impl RunConfig {
    pub fn from_file(file: &ConfigFile) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in file.section("") {
            match k.as_str() {
                "seed" => cfg.seed = parse_value("", k, v)?,
                "threads" => cfg.threads = Some(parse_value("", k, v)?),
                _ => return Err(unknown("", k)),
            }
        }
        for name in file.sections.keys() {
            if !["", "train", "evidence", "grounding", "pool", "refine"].contains(&name.as_str()) {
                return Err(Error::config(format!("unknown section [{name}]")));
            }
        }
        apply_train(file, "train", &mut cfg.conventional)?;
        apply_train(file, "evidence", &mut cfg.evidence)?;
        let g = &mut cfg.grounding;
        for (k, v) in file.section("grounding") {
            match k.as_str() {
                "method" => g.method = Method::from_str(v)?,
                "layer" => g.layer = Some(v.clone()),
                "patch_size" => g.patch_size = parse_value("grounding", k, v)?,
                "erase_size" => g.erase_size = parse_value("grounding", k, v)?,
                "rise_masks" => g.rise.masks = parse_value("grounding", k, v)?,
                "rise_grid" => g.rise.grid = parse_value("grounding", k, v)?,
                "rise_keep" => g.rise.keep_prob = parse_value("grounding", k, v)?,
                _ => return Err(unknown("grounding", k)),
            }
        }
        for (k, v) in file.section("pool") {
            match k.as_str() {
                "L" | "levels" => cfg.pool_levels = parse_value("pool", k, v)?,
                _ => return Err(unknown("pool", k)),
            }
        }
        let (mut k_cand, mut levels, mut weights, mut side) = (cfg.refine.k, None, None, cfg.refine.evidence_side);
        for (k, v) in file.section("refine") {
            match k.as_str() {
                "k" => k_cand = parse_value("refine", k, v)?,
                "L" | "levels" => levels = Some(parse_value::<usize>("refine", k, v)?),
                "weights" => weights = Some(parse_list::<f64>("[refine] weights", v)?),
                "evidence_side" => side = Some(parse_value("refine", k, v)?),
                _ => return Err(unknown("refine", k)),
            }
        }
        cfg.refine = refinement_from(k_cand, levels, weights.as_deref())?;
        cfg.refine.evidence_side = side;
        cfg.sync_grounding();
        Ok(cfg)
    }

    /// Copies the shared grounding settings into the refinement config.
    pub fn sync_grounding(&mut self) {
        self.grounding.rise.seed = crate::seed::derive(self.seed, "rise");
        self.refine.grounding = self.grounding.clone();
    }
}

/// Resolves `k`, `L` and the weight list. Without explicit weights only
/// the default depth `L = 2` is accepted.
pub fn refinement_from(k: usize, levels: Option<usize>, weights: Option<&[f64]>) -> Result<RefinementConfig> {
    let defaults = RefinementConfig::default();
    match (levels, weights) {
        (_, Some(w)) => {
            let l = levels.unwrap_or(w.len().saturating_sub(2));
            RefinementConfig::with_weights(k, l, w)
        }
        (Some(l), None) if l != defaults.levels => {
            Err(Error::config(format!("L = {l} needs explicit weights (w, w0..w{l})")))
        }
        _ => Ok(RefinementConfig { k, ..defaults }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let f = ConfigFile::parse("seed = 4\n# note\n[train]\niterations=10\n; x\n[refine]\nk = 2\n").unwrap();
        assert_eq!(f.get("", "seed"), Some("4"));
        assert_eq!(f.get("train", "iterations"), Some("10"));
        let c = RunConfig::from_file(&f).unwrap();
        assert_eq!((c.seed, c.conventional.train.iterations, c.refine.k), (4, 10, 2));
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(RunConfig::from_file(&ConfigFile::parse("[train]\nlr = 1").unwrap()).is_err());
        assert!(ConfigFile::parse("a=1\na=2").is_err());
        assert!(ConfigFile::parse("[x").is_err());
        assert!(ConfigFile::parse("novalue").is_err());
        assert!(RunConfig::from_file(&ConfigFile::parse("[bogus]\n").unwrap()).is_err());
    }

    #[test]
    fn refine_weights_and_depth() {
        let f = ConfigFile::parse("[refine]\nL = 1\nweights = 0.5,0.3,0.2\n").unwrap();
        let c = RunConfig::from_file(&f).unwrap();
        assert_eq!(c.refine.levels, 1);
        assert_eq!(c.refine.weights(), vec![0.5, 0.3, 0.2]);
        assert!(refinement_from(3, Some(1), None).is_err());
        assert!(refinement_from(3, Some(2), Some(&[0.4, 0.3, 0.2])).is_err());
        assert_eq!(refinement_from(3, None, None).unwrap().weights(), vec![0.4, 0.3, 0.2, 0.1]);
    }

    #[test]
    fn grounding_section() {
        let f = ConfigFile::parse("[grounding]\nmethod = gradcam\nlayer = block3.relu\nrise_masks = 50\n").unwrap();
        let c = RunConfig::from_file(&f).unwrap();
        assert_eq!(c.grounding.method, Method::GradCam);
        assert_eq!(c.refine.grounding.rise.masks, 50);
        assert_eq!(c.refine.grounding.layer.as_deref(), Some("block3.relu"));
    }
}
