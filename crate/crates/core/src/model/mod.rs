//! The two classifier architectures, training, prediction, top-k and
//! checkpoint persistence.

mod checkpoint;
mod spec;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use spec::ModelSpec;
pub use train::{accuracy, train, train_with_trace, TrainConfig, TrainTrace};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{softmax, Network, Prediction};
use crate::seed;
use crate::tensor::Tensor;

/// A network together with the architecture it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    net: Network<f32>,
}

impl Model {
    /// Freshly initialized model (Glorot-uniform weights, zero biases).
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let net = spec.build(&mut seed::rng(seed));
        Ok(Model { spec, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    /// Index into the forward tape of the grounding activation.
    pub fn grounding_index(&self) -> usize {
        self.spec.grounding_index().expect("validated spec")
    }

    pub fn check_input(&self, image: &Image) -> Result<()> {
        let s = &self.spec;
        if image.height() != s.input_size || image.width() != s.input_size || image.channels() != s.in_channels {
            return Err(Error::shape(
                "predict",
                format!(
                    "image {}x{}x{} vs model input {}x{}x{}",
                    image.height(),
                    image.width(),
                    image.channels(),
                    s.input_size,
                    s.input_size,
                    s.in_channels
                ),
            ));
        }
        Ok(())
    }

    pub fn logits(&self, image: &Image) -> Result<Vec<f32>> {
        self.check_input(image)?;
        Ok(self.net.forward(&image.to_tensor())?.into_data())
    }

    pub fn predict(&self, image: &Image) -> Result<Prediction> {
        softmax(&self.logits(image)?)
    }

    /// Predictions for a `[n, c, h, w]` batch of network inputs.
    pub fn predict_tensor(&self, batch: &Tensor<f32>) -> Result<Vec<Prediction>> {
        let logits = self.net.forward(batch)?;
        logits.data().chunks_exact(self.spec.classes).map(softmax).collect()
    }
}

/// Whole-image classifier. Implemented by [`Model`] and by test stubs.
pub trait Classifier: Sync {
    fn classify(&self, image: &Image) -> Result<Prediction>;
}

impl Classifier for Model {
    fn classify(&self, image: &Image) -> Result<Prediction> {
        self.predict(image)
    }
}

impl<F> Classifier for F
where
    F: Fn(&Image) -> Result<Prediction> + Sync,
{
    fn classify(&self, image: &Image) -> Result<Prediction> {
        self(image)
    }
}

/// Classes ordered by decreasing probability, ties to the lower index.
pub fn topk(p: &Prediction, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > p.classes() {
        return Err(Error::arg(format!("k = {k} outside 1..={}", p.classes())));
    }
    let mut idx: Vec<usize> = (0..p.classes()).collect();
    let probs = p.probs();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(v: &[f64]) -> Prediction {
        Prediction::new(v.to_vec()).unwrap()
    }

    #[test]
    fn topk_orders_by_probability() {
        assert_eq!(topk(&pred(&[0.5, 0.3, 0.2]), 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn topk_ties_break_by_index() {
        assert_eq!(topk(&pred(&[0.4, 0.4, 0.2]), 1).unwrap(), vec![0]);
        assert_eq!(topk(&Prediction::uniform(5), 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn topk_rejects_bad_k() {
        assert!(matches!(topk(&Prediction::uniform(3), 0), Err(Error::Argument(_))));
        assert!(matches!(topk(&Prediction::uniform(3), 4), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_head_gives_uniform_prediction() {
        let mut m = Model::new(ModelSpec::tiny(8, 4), 1).unwrap();
        let fc = m.network_mut().layers_mut().last_mut().unwrap();
        let p = fc.1.params_mut().unwrap();
        p.weight.fill(0.0);
        p.bias.fill(0.0);
        let img = Image::filled(3, 8, 8, 0.7);
        let pr = m.predict(&img).unwrap();
        assert!(pr.probs().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn predict_rejects_wrong_size() {
        let m = Model::new(ModelSpec::tiny(8, 4), 1).unwrap();
        assert!(matches!(m.predict(&Image::filled(3, 9, 8, 0.0)), Err(Error::Shape { .. })));
    }
}
