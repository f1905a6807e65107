//! Ensemble Guided Zoom: the evidence pool is the union of the level-0
//! patches from cEB, Grad-CAM and RISE instead of erasing. Compares the
//! refined accuracy with the erasing pool.
//!
//! ```text
//! cargo run --release --example ensemble_pool -- seed=0
//! ```

mod common;

use guided_zoom::pipeline::{prepare, run_ensemble, run_guided_zoom, ExperimentConfig};

fn main() -> guided_zoom::Result<()> {
    let cfg = ExperimentConfig::desk(common::arg("seed", 0));
    let p = prepare(&cfg)?;
    println!("conventional test accuracy {:.4}", p.test_accuracy);
    let en = run_ensemble(&p, &cfg)?;
    let mut per_method = std::collections::BTreeMap::new();
    for patch in &en.pool.patches {
        *per_method.entry(patch.method.to_string()).or_insert(0) += 1;
    }
    println!("ensemble pool: {per_method:?}");
    let gz = run_guided_zoom(&p, &cfg)?;
    println!(
        "baseline {:.4}, erasing pool ({} patches) {:.4}, ensemble pool ({} patches) {:.4}",
        gz.report.baseline_top1,
        gz.pool.len(),
        gz.report.refined_top1,
        en.pool.len(),
        en.report.refined_top1
    );
    Ok(())
}
