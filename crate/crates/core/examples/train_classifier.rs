//! Trains the conventional CNN on the synthetic data and reports top-1 and
//! top-3 accuracy on the test split.
//!
//! ```text
//! cargo run --release --example train_classifier -- seed=0 iterations=2000
//! ```

mod common;

use guided_zoom::model::{save_checkpoint, topk, train_with_trace};
use guided_zoom::pipeline::ExperimentConfig;

fn main() -> guided_zoom::Result<()> {
    let mut cfg = ExperimentConfig::desk(common::arg("seed", 0));
    cfg.conventional_train.iterations = common::arg("iterations", cfg.conventional_train.iterations);
    cfg.conventional_train.decay_every = cfg.conventional_train.iterations * 4 / 5;
    let data = common::data(&cfg)?;
    let t = std::time::Instant::now();
    let (model, trace) = train_with_trace(&data.train.images, &cfg.conventional, &cfg.conventional_train)?;
    for (epoch, loss) in trace.epoch_loss.iter().enumerate() {
        println!("epoch {epoch:>3}  loss {loss:.4}");
    }
    let (mut top1, mut top3) = (0, 0);
    for s in &data.test.images {
        let order = topk(&model.predict(&s.image)?, 3)?;
        top1 += usize::from(order[0] == s.label);
        top3 += usize::from(order.contains(&s.label));
    }
    let n = data.test.len() as f64;
    println!("{:.0} s, test top-1 {:.3}, top-3 {:.3}", t.elapsed().as_secs_f64(), top1 as f64 / n, top3 as f64 / n);
    let path = common::cache_dir().join("train_classifier.gzck");
    save_checkpoint(&model, &path)?;
    println!("checkpoint: {}", path.display());
    Ok(())
}
