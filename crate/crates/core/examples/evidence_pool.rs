//! Builds the adversarial-erasing evidence pool (cEB, L = 2) from the
//! training split, prints how deep the erasing went, audits the pool and
//! writes it in the GZPL format.
//!
//! ```text
//! cargo run --release --example evidence_pool -- levels=2
//! ```

mod common;

use guided_zoom::grounding::ModelGrounder;
use guided_zoom::model::Classifier;
use guided_zoom::pipeline::ExperimentConfig;
use guided_zoom::pool::{audit_pool, build_pool, write_pool, PoolConfig};

fn main() -> guided_zoom::Result<()> {
    let cfg = ExperimentConfig::desk(common::arg("seed", 0));
    let levels = common::arg("levels", cfg.pool_levels);
    let data = common::data(&cfg)?;
    let model = common::conventional(&cfg, &data)?;
    let grounder = ModelGrounder::new(&model, cfg.grounding.clone());
    let train = &data.train;
    let pool = build_pool(&train.images, train.classes, &model, &grounder, &PoolConfig::new(levels, &cfg.grounding))?;

    let mut per_level = vec![0; levels + 1];
    for p in &pool.patches {
        per_level[p.level] += 1;
    }
    println!(
        "{} training images, {} misclassified, {} without evidence",
        train.len(),
        pool.manifest.misclassified.len(),
        pool.manifest.no_evidence.len()
    );
    for (l, n) in per_level.iter().enumerate() {
        println!("level {l}: {n} patches");
    }
    let problems = audit_pool(&pool, &train.images, Some(&model as &dyn Classifier))?;
    println!("audit: {}", if problems.is_empty() { "ok".to_string() } else { problems.join("; ") });
    let path = common::cache_dir().join("example-pool.gzpl");
    write_pool(&path, &pool)?;
    println!("pool: {}", path.display());
    Ok(())
}
