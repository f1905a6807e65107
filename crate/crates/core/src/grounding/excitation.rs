use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::Model;
use crate::nn::conv::{conv2d_backward, conv2d_with};
use crate::nn::layers::window_argmax;
use crate::nn::{Layer, Network, Tape};
use crate::tensor::{Scalar, Tensor};

use super::{Method, SaliencyMap};

/// Per-layer bookkeeping of one excitation pass, top layer first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EbTrace {
    /// Layer name and the relevance mass at its input before renormalizing.
    pub layer_sums: Vec<(String, f64)>,
    /// Mass that reached a unit with no positive incoming excitation.
    pub dropped: f64,
    /// Same for the dual (negated head) pass of contrastive EB.
    pub dual_layer_sums: Vec<(String, f64)>,
}

fn positive<T: Scalar>(w: &Tensor<T>, negate: bool) -> Tensor<T> {
    w.map(|v| {
        let v = if negate { -v } else { v };
        if v > T::zero() {
            v
        } else {
            T::zero()
        }
    })
}

/// `r_j = p_j / Z_j`, dropping (and counting) mass at units with `Z_j <= 0`.
fn ratios<T: Scalar>(p: &[T], z: &[T], dropped: &mut f64) -> Vec<T> {
    p.iter()
        .zip(z)
        .map(|(&pv, &zv)| {
            if zv > T::zero() {
                pv / zv
            } else {
                *dropped += pv.as_f64();
                T::zero()
            }
        })
        .collect()
}

/// Moves relevance from the output of `layer` to its input `a`.
fn propagate<T: Scalar>(
    layer: &Layer<T>,
    a: &Tensor<T>,
    p: &Tensor<T>,
    negate: bool,
    dropped: &mut f64,
) -> Result<Tensor<T>> {
    match layer {
        Layer::Relu => Ok(p.clone()),
        Layer::MaxPool2d { size } => {
            let [_, _, h, w] = a.dims4("eb maxpool")?;
            let (oh, ow) = (h / size, w / size);
            let mut out = vec![T::zero(); a.len()];
            for (pi, plane) in a.data().chunks_exact(h * w).enumerate() {
                let pp = &p.data()[pi * oh * ow..(pi + 1) * oh * ow];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (idx, _) = window_argmax(plane, w, oy * size, ox * size, *size);
                        out[pi * h * w + idx] += pp[oy * ow + ox];
                    }
                }
            }
            Tensor::new(a.shape(), out)
        }
        Layer::GlobalAvgPool => {
            // the 1/HW weights cancel between numerator and Z
            let [_, _, h, w] = a.dims4("eb gap")?;
            let mut out = vec![T::zero(); a.len()];
            for (pi, plane) in a.data().chunks_exact(h * w).enumerate() {
                let z = plane.iter().fold(T::zero(), |s, &v| s + v);
                let pv = p.data()[pi];
                if z > T::zero() {
                    for (o, &av) in out[pi * h * w..(pi + 1) * h * w].iter_mut().zip(plane) {
                        *o = av * pv / z;
                    }
                } else {
                    *dropped += pv.as_f64();
                }
            }
            Tensor::new(a.shape(), out)
        }
        Layer::Linear { params } => {
            let wp = positive(&params.weight, negate);
            let (o, f) = (wp.shape()[0], wp.shape()[1]);
            if a.shape() != [1, f] || p.shape() != [1, o] {
                return Err(Error::shape("eb linear", format!("input {:?} relevance {:?}", a.shape(), p.shape())));
            }
            let z: Vec<T> = (0..o)
                .map(|j| {
                    wp.data()[j * f..(j + 1) * f].iter().zip(a.data()).fold(T::zero(), |s, (&wv, &av)| s + wv * av)
                })
                .collect();
            let r = ratios(p.data(), &z, dropped);
            let out = (0..f)
                .map(|i| {
                    let back = (0..o).fold(T::zero(), |s, j| s + wp.data()[j * f + i] * r[j]);
                    a.data()[i] * back
                })
                .collect();
            Tensor::new(a.shape(), out)
        }
        Layer::Conv2d { params, stride, padding } => {
            let wp = positive(&params.weight, negate);
            let zero_bias = vec![T::zero(); wp.shape()[0]];
            let z = conv2d_with(a, &wp, &zero_bias, *stride, *padding)?;
            let r = Tensor::new(z.shape(), ratios(p.data(), z.data(), dropped))?;
            let back = conv2d_backward(a, &wp, &r, *stride, *padding, None, true)?;
            let out = a.data().iter().zip(back.data()).map(|(&av, &bv)| av * bv).collect();
            Tensor::new(a.shape(), out)
        }
    }
}

/// One marginal-winning-probability pass from a one-hot prior on
/// `class_id` down to `acts[layer]`. Each layer's relevance is renormalized
/// to unit mass; an all-zero layer ends the pass with zeros.
fn pass<T: Scalar>(
    net: &Network<T>,
    tape: &Tape<T>,
    layer: usize,
    class_id: usize,
    negate_head: bool,
    sums: &mut Vec<(String, f64)>,
    dropped: &mut f64,
) -> Result<Tensor<T>> {
    let top = net.layers().len();
    let mut p = Tensor::zeros(tape.output().shape());
    p.data_mut()[class_id] = T::one();
    for i in (layer..top).rev() {
        let (name, l) = &net.layers()[i];
        let negate = negate_head && i == top - 1;
        p = propagate(l, tape.activation(i), &p, negate, dropped)?;
        let mass = p.data().iter().map(|v| v.as_f64()).sum::<f64>();
        sums.push((name.clone(), mass));
        if !(mass > 0.0) {
            return Ok(Tensor::zeros(tape.activation(layer).shape()));
        }
        let inv = T::from_f64(1.0 / mass);
        p = p.map(|v| v * inv);
    }
    Ok(p)
}

/// Relevance at `acts[layer]` for a single-item batch `x`. With
/// `contrastive`, a second pass starts from the negated classifier head and
/// its relevance is subtracted at the grounding layer and clamped at zero.
pub fn excitation_relevance<T: Scalar>(
    net: &Network<T>,
    layer: usize,
    x: &Tensor<T>,
    class_id: usize,
    contrastive: bool,
) -> Result<(Tensor<T>, EbTrace)> {
    let mut tape = Tape::new();
    let logits = net.forward_tape(x, &mut tape)?;
    if logits.shape()[0] != 1 {
        return Err(Error::shape("excitation backprop", "expects a single image"));
    }
    if class_id >= logits.len() {
        return Err(Error::arg(format!("class {class_id} out of range for {} classes", logits.len())));
    }
    if layer >= net.layers().len() {
        return Err(Error::arg(format!("grounding index {layer} is past the last layer")));
    }
    if x.data().iter().any(|v| *v < T::zero()) {
        return Err(Error::arg("excitation backprop needs non-negative inputs"));
    }
    let mut trace = EbTrace::default();
    let p = pass(net, &tape, layer, class_id, false, &mut trace.layer_sums, &mut trace.dropped)?;
    if !contrastive {
        return Ok((p, trace));
    }
    let mut dual_dropped = 0.0;
    let d = pass(net, &tape, layer, class_id, true, &mut trace.dual_layer_sums, &mut dual_dropped)?;
    let out = p.data().iter().zip(d.data()).map(|(&a, &b)| if a > b { a - b } else { T::zero() }).collect();
    Ok((Tensor::new(p.shape(), out)?, trace))
}

pub(super) fn excitation_backprop_at(
    model: &Model,
    image: &Image,
    class_id: usize,
    contrastive: bool,
    layer: usize,
) -> Result<SaliencyMap> {
    model.check_input(image)?;
    let (rel, _) = excitation_relevance(model.network(), layer, &image.to_tensor(), class_id, contrastive)?;
    let [_, c, h, w] = rel.dims4("excitation map")?;
    let mut grid = vec![0.0f32; h * w];
    for ch in 0..c {
        for (g, &v) in grid.iter_mut().zip(&rel.data()[ch * h * w..(ch + 1) * h * w]) {
            *g += v;
        }
    }
    let method = if contrastive { Method::Ceb } else { Method::Eb };
    SaliencyMap::from_coarse(&grid, h, w, image.height(), image.width(), class_id, method)
}

/// Excitation backprop at the model's grounding layer, summed over channels
/// and upsampled to the image size.
pub fn excitation_backprop(model: &Model, image: &Image, class_id: usize, contrastive: bool) -> Result<SaliencyMap> {
    excitation_backprop_at(model, image, class_id, contrastive, model.grounding_index())
}
