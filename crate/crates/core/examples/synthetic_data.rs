//! Generates the default synthetic dataset and writes a few samples as PPM,
//! each with its part box outlined.
//!
//! ```text
//! cargo run --release --example synthetic_data -- seed=4 out=samples
//! ```

mod common;

use guided_zoom::data::{generate, SyntheticSpec};
use guided_zoom::pnm;

fn main() -> guided_zoom::Result<()> {
    let spec = SyntheticSpec { seed: common::arg("seed", 0), ..SyntheticSpec::default() };
    let out = std::path::PathBuf::from(common::arg("out", "synthetic-samples".to_string()));
    std::fs::create_dir_all(&out).expect("create output directory");
    let data = generate(&spec)?;
    println!(
        "{} classes, {} train / {} test images of {}x{}, balanced: {:?}",
        spec.classes,
        data.train.len(),
        data.test.len(),
        data.train.side,
        data.train.side,
        data.train.class_counts()
    );
    // one image per class
    for class_id in 0..spec.classes {
        let s = data.train.images.iter().find(|s| s.label == class_id).unwrap();
        let b = s.part_box.unwrap();
        let mut img = s.image.clone();
        for y in b.row..b.row + b.height {
            for x in b.col..b.col + b.width {
                if y == b.row || x == b.col || y + 1 == b.row + b.height || x + 1 == b.col + b.width {
                    img.set(1, y, x, 1.0);
                }
            }
        }
        let path = out.join(format!("class{class_id}.ppm"));
        pnm::write(&path, &img)?;
        println!("class {class_id}: part at row {} col {} -> {}", b.row, b.col, path.display());
    }
    Ok(())
}
