//! Full synthetic experiment for one seed: data, conventional CNN, cEB pool
//! with two erasing levels, Evidence CNN and refinement of the test split.
//!
//! ```text
//! cargo run --release --example end_to_end -- seed=1 iterations=600
//! ```
//!
//! Accepted `key=value` overrides: seed, iterations, evidence_iterations,
//! contrast, glyph_noise, flips, noise, lr, channels (e.g. 8,16,32,32), layer, ensemble (0/1),
//! rise_masks.

use guided_zoom::data::localization_score;
use guided_zoom::grounding::{ground, Method};
use guided_zoom::model::topk;
use guided_zoom::pipeline::{prepare, run_ensemble, run_guided_zoom, ExperimentConfig};

fn main() -> guided_zoom::Result<()> {
    let args: Vec<(String, String)> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str| args.iter().find(|(a, _)| a == k).map(|(_, v)| v.as_str());
    let seed = get("seed").map_or(0, |v| v.parse().unwrap());
    let mut cfg = ExperimentConfig::desk(seed);
    if let Some(v) = get("iterations") {
        cfg.conventional_train.iterations = v.parse().unwrap();
        cfg.conventional_train.decay_every = cfg.conventional_train.iterations * 4 / 5;
    }
    if let Some(v) = get("evidence_iterations") {
        cfg.evidence_train.iterations = v.parse().unwrap();
        cfg.evidence_train.decay_every = cfg.evidence_train.iterations * 4 / 5;
    }
    if let Some(v) = get("contrast") {
        cfg.data.glyph_contrast = v.parse().unwrap();
    }
    if let Some(v) = get("glyph_noise") {
        cfg.data.glyph_noise = v.parse().unwrap();
    }
    if let Some(v) = get("lr") {
        cfg.conventional_train.learning_rate = v.parse().unwrap();
        cfg.evidence_train.learning_rate = v.parse().unwrap();
    }
    if let Some(v) = get("flips") {
        cfg.data.glyph_flips = v.parse().unwrap();
    }
    if let Some(v) = get("noise") {
        cfg.data.noise_sigma = v.parse().unwrap();
    }
    if let Some(v) = get("channels") {
        let ch: Vec<usize> = v.split(',').map(|s| s.parse().unwrap()).collect();
        cfg.conventional.channels = ch.clone();
        cfg.evidence.channels = ch;
    }
    if let Some(v) = get("layer") {
        cfg.conventional.grounding_layer = v.to_string();
    }
    if let Some(v) = get("rise_masks") {
        cfg.grounding.rise.masks = v.parse().unwrap();
    }

    let p = prepare(&cfg)?;
    println!("seed {seed}: conventional train {:.3} test {:.3} ({:.0}s)", p.train_accuracy, p.test_accuracy, p.seconds);

    let test = &p.data.test.images;
    for method in [Method::Ceb, Method::GradCam] {
        let g = cfg.grounding.clone().with_method(method);
        let (mut maps, mut boxes) = (Vec::new(), Vec::new());
        for s in test {
            let pred = p.conventional.predict(&s.image)?;
            if topk(&pred, 1)?[0] != s.label {
                continue;
            }
            maps.push(ground(&p.conventional, &s.image, s.label, &g)?);
            boxes.push(s.part_box.expect("synthetic images carry a part box"));
        }
        println!("localization {method}: {:.3} on {} images", localization_score(&maps, &boxes)?, maps.len());
    }

    let gz = run_guided_zoom(&p, &cfg)?;
    let r = &gz.report;
    println!(
        "guided zoom: pool {} patches, baseline top1 {:.3} top{} {:.3}, refined {:.3} (pool {:.0}s, evidence {:.0}s, refine {:.0}s)",
        gz.pool.len(),
        r.baseline_top1,
        r.k,
        r.baseline_topk,
        r.refined_top1,
        gz.pool_seconds,
        gz.evidence_seconds,
        gz.refine_seconds
    );
    if get("ensemble") == Some("1") {
        let en = run_ensemble(&p, &cfg)?;
        println!(
            "ensemble: pool {} patches, refined {:.3} (pool {:.0}s, evidence {:.0}s)",
            en.pool.len(),
            en.report.refined_top1,
            en.pool_seconds,
            en.evidence_seconds
        );
    }
    Ok(())
}
