use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::LayerParams;

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().zip(dy.data()).map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() }).collect();
    Tensor::new(x.shape(), data).expect("relu shapes")
}

/// Non-overlapping `size × size` max pooling; trailing rows/columns that do
/// not fill a window are dropped.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("maxpool")?;
    let (oh, ow) = (h / size, w / size);
    if oh == 0 || ow == 0 {
        return Err(Error::shape("maxpool", format!("{h}x{w} input smaller than window {size}")));
    }
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks_exact(h * w) {
        for oy in 0..oh {
            for ox in 0..ow {
                let (_, v) = window_argmax(plane, w, oy * size, ox * size, size);
                out.push(v);
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

/// Row-major first maximum in the window: ties go to the earliest element.
#[inline]
pub(crate) fn window_argmax<T: Scalar>(plane: &[T], w: usize, y0: usize, x0: usize, size: usize) -> (usize, T) {
    let mut best = y0 * w + x0;
    let mut bv = plane[best];
    for dy in 0..size {
        for dx in 0..size {
            let idx = (y0 + dy) * w + x0 + dx;
            if plane[idx] > bv {
                bv = plane[idx];
                best = idx;
            }
        }
    }
    (best, bv)
}

pub fn maxpool_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4("maxpool backward")?;
    let (oh, ow) = (h / size, w / size);
    let mut dx = vec![T::zero(); x.len()];
    for (pi, plane) in x.data().chunks_exact(h * w).enumerate() {
        let g = &dy.data()[pi * oh * ow..(pi + 1) * oh * ow];
        let dplane = &mut dx[pi * h * w..(pi + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (idx, _) = window_argmax(plane, w, oy * size, ox * size, size);
                dplane[idx] += g[oy * ow + ox];
            }
        }
    }
    Tensor::new(x.shape(), dx)
}

/// `[n, c, h, w] -> [n, c]`.
pub fn gap_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("global average pool")?;
    let inv = T::one() / T::from_f64((h * w) as f64);
    let out = x.data().chunks_exact(h * w).map(|plane| plane.iter().fold(T::zero(), |s, &v| s + v) * inv).collect();
    Tensor::new(&[n, c], out)
}

pub fn gap_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4("global average pool backward")?;
    let inv = T::one() / T::from_f64((h * w) as f64);
    let mut dx = Vec::with_capacity(x.len());
    for &g in dy.data() {
        dx.extend(std::iter::repeat(g * inv).take(h * w));
    }
    Tensor::new(x.shape(), dx)
}

fn linear_dims<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, fin) = match *x.shape() {
        [n, f] => (n, f),
        _ => return Err(Error::shape("linear", format!("expected [n, features], got {:?}", x.shape()))),
    };
    let (out, win) = match *weight.shape() {
        [o, i] => (o, i),
        _ => return Err(Error::shape("linear", format!("weight must be 2-D, got {:?}", weight.shape()))),
    };
    if win != fin {
        return Err(Error::shape("linear", format!("input has {fin} features, weight expects {win}")));
    }
    Ok((n, fin, out))
}

/// `y = x · Wᵀ + b` with `W: [out, in]`, summed over inputs in order.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>> {
    linear_with(x, &params.weight, params.bias.data())
}

pub(crate) fn linear_with<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (n, fin, out) = linear_dims(x, weight)?;
    let mut y = Vec::with_capacity(n * out);
    for row in x.data().chunks_exact(fin) {
        for o in 0..out {
            let wr = &weight.data()[o * fin..(o + 1) * fin];
            let mut s = T::zero();
            for (a, b) in row.iter().zip(wr) {
                s += *a * *b;
            }
            y.push(s + bias[o]);
        }
    }
    Tensor::new(&[n, out], y)
}

pub(crate) fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    param_grads: Option<(&mut [T], &mut [T])>,
) -> Result<Tensor<T>> {
    let (n, fin, out) = linear_dims(x, weight)?;
    if dy.shape() != [n, out] {
        return Err(Error::shape("linear backward", format!("grad {:?} vs output [{n},{out}]", dy.shape())));
    }
    let wd = weight.data();
    let mut dx = vec![T::zero(); n * fin];
    for b in 0..n {
        let g = &dy.data()[b * out..(b + 1) * out];
        let dxr = &mut dx[b * fin..(b + 1) * fin];
        for (o, &gv) in g.iter().enumerate() {
            for (d, &wv) in dxr.iter_mut().zip(&wd[o * fin..(o + 1) * fin]) {
                *d += gv * wv;
            }
        }
    }
    if let Some((dw, db)) = param_grads {
        for b in 0..n {
            let xr = &x.data()[b * fin..(b + 1) * fin];
            for o in 0..out {
                let gv = dy.data()[b * out + o];
                for (d, &xv) in dw[o * fin..(o + 1) * fin].iter_mut().zip(xr) {
                    *d += gv * xv;
                }
                db[o] += gv;
            }
        }
    }
    Tensor::new(&[n, fin], dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_ties_route_to_first_element() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![3.0, 3.0, 3.0, 3.0]).unwrap();
        let dy = Tensor::new(&[1, 1, 1, 1], vec![5.0]).unwrap();
        let dx = maxpool_backward(&x, &dy, 2).unwrap();
        assert_eq!(dx.data(), &[5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_drops_ragged_edge() {
        let x = Tensor::<f32>::new(&[1, 1, 3, 3], (0..9).map(|v| v as f32).collect()).unwrap();
        let y = maxpool_forward(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn linear_chain_rule_scalar() {
        // y = w·x with x = 3; dL/dw for L = y is 3.
        let x = Tensor::<f64>::new(&[1, 1], vec![3.0]).unwrap();
        let w = Tensor::new(&[1, 1], vec![0.7]).unwrap();
        let dy = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let (mut dw, mut db) = (vec![0.0], vec![0.0]);
        let dx = linear_backward(&x, &w, &dy, Some((&mut dw, &mut db))).unwrap();
        assert_eq!(dw, vec![3.0]);
        assert_eq!(db, vec![1.0]);
        assert_eq!(dx.data(), &[0.7]);
    }

    #[test]
    fn gap_averages_each_plane() {
        let x = Tensor::<f32>::new(&[1, 2, 1, 2], vec![1.0, 3.0, -2.0, 2.0]).unwrap();
        assert_eq!(gap_forward(&x).unwrap().data(), &[2.0, 0.0]);
    }
}
