//! The part glyph is the only class-dependent content: a classifier trained
//! with the full desk schedule on part-erased images stays at chance.
//!
//! Takes about five minutes on one core, so it only runs on request:
//! `cargo test --release --test locality -- --ignored`.

use guided_zoom::data::{erase_parts, generate};
use guided_zoom::model::{accuracy, train};
use guided_zoom::pipeline::ExperimentConfig;

#[test]
#[ignore]
fn part_erased_training_stays_at_chance() {
    let cfg = ExperimentConfig::desk(0);
    let data = generate(&cfg.data).unwrap();
    let (train_set, test_set) = (erase_parts(&data.train), erase_parts(&data.test));
    let model = train(&train_set.images, &cfg.conventional, &cfg.conventional_train).unwrap();
    let acc = accuracy(&model, &test_set.images).unwrap();
    let chance = 1.0 / data.test.classes as f64;
    println!("part-erased test accuracy {acc:.4}, chance {chance:.4}");
    assert!((acc - chance).abs() <= 0.05, "{acc}");
}
