//! Setup shared by the examples. The trained conventional CNN and the
//! evidence model are cached in the system temp directory, so only the first
//! example that needs them pays for training (a few minutes on one core).

#![allow(dead_code)]

use std::path::PathBuf;

use guided_zoom::data::{generate, SyntheticData};
use guided_zoom::grounding::ModelGrounder;
use guided_zoom::model::{load_checkpoint, save_checkpoint, train, Model};
use guided_zoom::pipeline::ExperimentConfig;
use guided_zoom::pool::{build_pool, train_evidence_cnn, PoolConfig};
use guided_zoom::Result;

pub fn cache_dir() -> PathBuf {
    let d = std::env::temp_dir().join("guided-zoom-examples");
    std::fs::create_dir_all(&d).expect("create cache directory");
    d
}

/// `key=value` arguments, e.g. `seed=3`.
pub fn arg<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::args()
        .skip(1)
        .find_map(|a| a.strip_prefix(&format!("{key}=")).map(|v| v.parse().ok().expect("bad argument value")))
        .unwrap_or(default)
}

pub fn data(cfg: &ExperimentConfig) -> Result<SyntheticData> {
    generate(&cfg.data)
}

fn cached(name: &str, make: impl FnOnce() -> Result<Model>) -> Result<Model> {
    let path = cache_dir().join(name);
    if path.exists() {
        return load_checkpoint(&path);
    }
    eprintln!("training {name} (cached for later runs)");
    let m = make()?;
    save_checkpoint(&m, &path)?;
    Ok(m)
}

pub fn conventional(cfg: &ExperimentConfig, data: &SyntheticData) -> Result<Model> {
    cached(&format!("conventional-{}.gzck", cfg.seed), || {
        train(&data.train.images, &cfg.conventional, &cfg.conventional_train)
    })
}

/// Evidence CNN trained on the cEB erasing pool of `model`.
pub fn evidence(cfg: &ExperimentConfig, data: &SyntheticData, model: &Model) -> Result<Model> {
    cached(&format!("evidence-{}.gzck", cfg.seed), || {
        let g = ModelGrounder::new(model, cfg.grounding.clone());
        let pool = build_pool(
            &data.train.images,
            data.train.classes,
            model,
            &g,
            &PoolConfig::new(cfg.pool_levels, &cfg.grounding),
        )?;
        Ok(train_evidence_cnn(&pool, &cfg.evidence, &cfg.evidence_train)?.0)
    })
}
