//! Decision refinement on the test split with the default weights
//! (w = 0.4, w0 = 0.3, w1 = 0.2, w2 = 0.1). Prints the per-candidate totals
//! for a few images whose decision changed, then the summary report.
//!
//! ```text
//! cargo run --release --example refine_topk -- k=3 show=5
//! ```

mod common;

use guided_zoom::pipeline::ExperimentConfig;
use guided_zoom::refine::{evaluate, refine, RefinementConfig};

fn main() -> guided_zoom::Result<()> {
    let cfg = ExperimentConfig::desk(common::arg("seed", 0));
    let data = common::data(&cfg)?;
    let conventional = common::conventional(&cfg, &data)?;
    let evidence = common::evidence(&cfg, &data, &conventional)?;
    let rc =
        RefinementConfig { k: common::arg("k", 3), evidence_side: Some(cfg.evidence.input_size), ..cfg.refine.clone() };

    let report = evaluate(&data.test.images, &conventional, &evidence, &rc)?;
    let mut shown = 0;
    for (s, d) in data.test.images.iter().zip(&report.decisions) {
        if d.refined == d.baseline_topk[0] || shown == common::arg("show", 5) {
            continue;
        }
        shown += 1;
        let (_, trace) = refine(&s.image, &conventional, &evidence, &rc)?;
        println!("label {}:", s.label);
        for c in &trace.candidates {
            let v: Vec<String> = c.levels.iter().map(|l| format!("{:.2}", l.probs[c.class_id])).collect();
            println!(
                "  class {} base {:.3} evidence [{}] tot {:.3}",
                c.class_id,
                trace.base[c.class_id],
                v.join(", "),
                c.tot
            );
        }
        println!("  -> {}", trace.chosen);
    }
    println!(
        "baseline top-1 {:.4}, top-{} {:.4}, refined top-1 {:.4} (improved {}, harmed {}, neutral {})",
        report.baseline_top1,
        report.k,
        report.baseline_topk,
        report.refined_top1,
        report.changed.improved,
        report.changed.harmed,
        report.changed.neutral
    );
    Ok(())
}
