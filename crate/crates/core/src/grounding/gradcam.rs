use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::Model;
use crate::nn::{Network, Tape};
use crate::tensor::{Scalar, Tensor};

use super::{Method, SaliencyMap};

/// Grad-CAM at tape index `layer` for a single-item batch `x`: the coarse
/// `ReLU(Σ_k α_k A_k)` grid with `α_k` the spatial mean of ∂logit/∂A_k.
/// Returns the grid with its height and width.
pub fn grad_cam_grid<T: Scalar>(
    net: &Network<T>,
    layer: usize,
    x: &Tensor<T>,
    class_id: usize,
) -> Result<(Vec<T>, usize, usize)> {
    let mut tape = Tape::new();
    let logits = net.forward_tape(x, &mut tape)?;
    let classes = logits.len();
    if logits.shape()[0] != 1 {
        return Err(Error::shape("grad-cam", "expects a single image"));
    }
    if class_id >= classes {
        return Err(Error::arg(format!("class {class_id} out of range for {classes} classes")));
    }
    let mut dout = Tensor::zeros(logits.shape());
    dout.data_mut()[class_id] = T::one();
    let grads = net.backward_to(&tape, &dout, layer)?;
    let acts = tape.activation(layer);
    let [_, k, h, w] = acts.dims4("grad-cam activation")?;
    let hw = h * w;
    let mut cam = vec![T::zero(); hw];
    for c in 0..k {
        let g = &grads.data()[c * hw..(c + 1) * hw];
        let alpha = g.iter().fold(T::zero(), |s, &v| s + v) / T::from_f64(hw as f64);
        let a = &acts.data()[c * hw..(c + 1) * hw];
        for (o, &av) in cam.iter_mut().zip(a) {
            *o += alpha * av;
        }
    }
    for v in &mut cam {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
    Ok((cam, h, w))
}

pub(super) fn grad_cam_at(model: &Model, image: &Image, class_id: usize, layer: usize) -> Result<SaliencyMap> {
    model.check_input(image)?;
    let (cam, h, w) = grad_cam_grid(model.network(), layer, &image.to_tensor(), class_id)?;
    SaliencyMap::from_coarse(&cam, h, w, image.height(), image.width(), class_id, Method::GradCam)
}

/// Grad-CAM at the model's grounding layer, upsampled to the image size.
pub fn grad_cam(model: &Model, image: &Image, class_id: usize) -> Result<SaliencyMap> {
    grad_cam_at(model, image, class_id, model.grounding_index())
}
