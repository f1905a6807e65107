//! Grounds one test image with every method (cEB, EB, Grad-CAM, RISE),
//! writes maps and overlays, and shows where each peak falls relative to
//! the true part box. Then erases the cEB peak twice to show the next most
//! salient evidence.
//!
//! ```text
//! cargo run --release --example saliency_maps -- index=7 out=saliency
//! ```

mod common;

use guided_zoom::grounding::{erase, ground, peak, viz, Method};
use guided_zoom::pipeline::ExperimentConfig;

fn main() -> guided_zoom::Result<()> {
    let cfg = ExperimentConfig::desk(common::arg("seed", 0));
    let data = common::data(&cfg)?;
    let model = common::conventional(&cfg, &data)?;
    let s = &data.test.images[common::arg("index", 0)];
    let out = std::path::PathBuf::from(common::arg("out", "saliency".to_string()));
    std::fs::create_dir_all(&out).expect("create output directory");
    let b = s.part_box.unwrap();
    println!(
        "label {}, predicted {}, part box rows {}..{} cols {}..{}",
        s.label,
        model.predict(&s.image)?.argmax(),
        b.row,
        b.row + b.height,
        b.col,
        b.col + b.width
    );

    for method in [Method::Ceb, Method::Eb, Method::GradCam, Method::Rise] {
        let g = cfg.grounding.clone().with_method(method);
        let map = ground(&model, &s.image, s.label, &g)?;
        let (r, c) = peak(&map)?;
        viz::write_map(&out.join(format!("{method}_map.pgm")), &map)?;
        viz::write_overlay(&out.join(format!("{method}_overlay.ppm")), &s.image, &map)?;
        println!("{method:>8}: peak ({r:>2}, {c:>2}) {}", if b.contains(r, c) { "inside the part" } else { "outside" });
    }

    let mut cur = s.image.clone();
    for level in 0..3 {
        let map = ground(&model, &cur, s.label, &cfg.grounding)?;
        if map.is_degenerate() {
            println!("level {level}: no evidence left");
            break;
        }
        let center = peak(&map)?;
        viz::write_overlay(&out.join(format!("erasing_L{level}.ppm")), &cur, &map)?;
        println!("level {level}: peak {center:?}, still predicted {}", model.predict(&cur)?.argmax());
        cur = erase(&cur, center, cfg.grounding.erase_size)?;
    }
    println!("files in {}", out.display());
    Ok(())
}
