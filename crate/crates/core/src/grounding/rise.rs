use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{bilinear_resize, Image};
use crate::nn::Prediction;
use crate::seed;

use super::{Method, SaliencyMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiseConfig {
    /// Number of random masks `N`.
    pub masks: usize,
    /// Side `s` of the coarse binary grid.
    pub grid: usize,
    /// Probability that a coarse cell is kept.
    pub keep_prob: f64,
    pub seed: u64,
}

impl Default for RiseConfig {
    fn default() -> Self {
        RiseConfig { masks: 1000, grid: 7, keep_prob: 0.5, seed: 0 }
    }
}

impl RiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.masks == 0 {
            return Err(Error::config("rise needs at least one mask"));
        }
        if self.grid == 0 {
            return Err(Error::config("rise grid must be positive"));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::config(format!("rise keep probability {} not in (0, 1]", self.keep_prob)));
        }
        Ok(())
    }
}

const CHUNK: usize = 64;

/// Smooth `h × w` mask: a random binary `g × g` grid upsampled bilinearly to
/// `(g + 1)` cells and cropped at a random sub-cell offset.
fn sample_mask<R: Rng>(rng: &mut R, cfg: &RiseConfig, h: usize, w: usize) -> Vec<f32> {
    let g = cfg.grid;
    let coarse: Vec<f32> = (0..g * g).map(|_| if rng.gen_bool(cfg.keep_prob) { 1.0 } else { 0.0 }).collect();
    let (cell_h, cell_w) = (h.div_ceil(g), w.div_ceil(g));
    let (uh, uw) = ((g + 1) * cell_h, (g + 1) * cell_w);
    let up = bilinear_resize(&coarse, g, g, uh, uw);
    let dy = rng.gen_range(0..cell_h);
    let dx = rng.gen_range(0..cell_w);
    let mut mask = Vec::with_capacity(h * w);
    for y in 0..h {
        mask.extend_from_slice(&up[(y + dy) * uw + dx..(y + dy) * uw + dx + w]);
    }
    mask
}

/// Randomized input sampling for explanation. `blackbox` only needs to map
/// an image to class probabilities. Masks are drawn in a fixed order from
/// `cfg.seed`; scoring runs in parallel but the sum is taken in mask order.
pub fn rise<F>(blackbox: &F, image: &Image, class_id: usize, cfg: &RiseConfig) -> Result<SaliencyMap>
where
    F: Fn(&Image) -> Result<Prediction> + Sync,
{
    cfg.validate()?;
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let mut rng = seed::rng(cfg.seed);
    let mut sal = vec![0.0f64; h * w];
    let mut done = 0;
    while done < cfg.masks {
        let n = CHUNK.min(cfg.masks - done);
        let masks: Vec<Vec<f32>> = (0..n).map(|_| sample_mask(&mut rng, cfg, h, w)).collect();
        let scores: Vec<f64> = masks
            .par_iter()
            .map(|m| {
                let mut data = image.data().to_vec();
                for plane in data.chunks_exact_mut(h * w) {
                    plane.iter_mut().zip(m).for_each(|(v, &mv)| *v *= mv);
                }
                let p = blackbox(&Image::new(c, h, w, data)?)?;
                p.probs()
                    .get(class_id)
                    .copied()
                    .ok_or_else(|| Error::arg(format!("class {class_id} out of range for {} classes", p.classes())))
            })
            .collect::<Result<_>>()?;
        for (m, s) in masks.iter().zip(&scores) {
            for (acc, &mv) in sal.iter_mut().zip(m) {
                *acc += s * mv as f64;
            }
        }
        done += n;
    }
    let norm = 1.0 / (cfg.masks as f64 * cfg.keep_prob);
    let grid = sal.into_iter().map(|v| (v * norm) as f32).collect();
    SaliencyMap::new(grid, h, w, class_id, Method::Rise)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_stay_in_unit_range() {
        let cfg = RiseConfig { masks: 1, grid: 5, keep_prob: 0.5, seed: 1 };
        let mut rng = seed::rng(3);
        for _ in 0..20 {
            let m = sample_mask(&mut rng, &cfg, 23, 17);
            assert_eq!(m.len(), 23 * 17);
            assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn constant_blackbox_gives_flat_map() {
        let c = 0.7;
        let cfg = RiseConfig { masks: 1000, grid: 7, keep_prob: 0.5, seed: 11 };
        let img = Image::filled(3, 32, 32, 0.5);
        let bb = |_: &Image| Prediction::new(vec![c, 1.0 - c]);
        let m = rise(&bb, &img, 0, &cfg).unwrap();
        // per-pixel standard error of the estimator is at most c·0.5/(p·√N)
        let se = c * 0.5 / (cfg.keep_prob * (cfg.masks as f64).sqrt());
        for &v in m.grid() {
            assert!((v as f64 - c).abs() <= 3.0 * se, "{v}");
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let cfg = RiseConfig { masks: 130, grid: 4, keep_prob: 0.5, seed: 2 };
        let img = Image::new(3, 12, 12, (0..432).map(|i| (i % 13) as f32 / 13.0).collect()).unwrap();
        let bb = |x: &Image| {
            let s = x.plane(0)[..36].iter().sum::<f32>() as f64 / 36.0;
            Prediction::new(vec![s, 1.0 - s])
        };
        let a = rise(&bb, &img, 0, &cfg).unwrap();
        let b = rise(&bb, &img, 0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_config_rejected() {
        let img = Image::filled(3, 8, 8, 0.5);
        let bb = |_: &Image| Prediction::new(vec![1.0]);
        let cfg = RiseConfig { keep_prob: 0.0, ..RiseConfig::default() };
        assert!(rise(&bb, &img, 0, &cfg).is_err());
    }
}
