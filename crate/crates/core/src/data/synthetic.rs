//! Procedural fine-grained dataset.
//!
//! Every image shows the same body (an ellipse over a noisy flat
//! background); classes differ only by a small binary glyph stamped at a
//! random position inside the body. The glyph's bounding box is recorded so
//! grounding quality can be measured, and the pixels outside it are drawn
//! from a class-independent distribution.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{peak, SaliencyMap};
use crate::image::Image;
use crate::seed;

use super::{Dataset, LabeledImage, PartBox};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    /// Flat background color before per-image jitter.
    pub background: [f32; 3],
    /// Body fill color before per-image jitter.
    pub body_color: [f32; 3],
    /// Uniform per-image color jitter amplitude (class independent).
    pub color_jitter: f32,
    /// Standard deviation of the additive Gaussian noise on background pixels.
    pub noise_sigma: f32,
    /// Same for pixels inside the body ellipse.
    pub body_noise_sigma: f32,
    /// Body ellipse semi-axes (rows, cols), centered in the image.
    pub body_radii: (f32, f32),
    pub glyph_size: usize,
    /// Side in pixels of one motif cell; the glyph is a random
    /// `(glyph_size / glyph_cell)²` binary grid scaled up by this factor.
    pub glyph_cell: usize,
    /// Amount the glyph's ink pixels are darkened relative to the body.
    pub glyph_contrast: f32,
    /// Per-image probability of flipping each motif cell, so that some
    /// parts are genuinely ambiguous between classes.
    pub glyph_noise: f64,
    /// Glyphs share one random base motif and each class flips this many
    /// of its motif cells; 0 draws every glyph independently.
    pub glyph_flips: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            train_per_class: 200,
            test_per_class: 100,
            image_size: 64,
            background: [0.35, 0.45, 0.55],
            body_color: [0.8, 0.65, 0.4],
            color_jitter: 0.08,
            noise_sigma: 0.1,
            body_noise_sigma: 0.1,
            body_radii: (22.0, 27.0),
            glyph_size: 9,
            glyph_cell: 3,
            glyph_contrast: 0.9,
            glyph_noise: 0.08,
            glyph_flips: 0,
            seed: 0,
        }
    }
}

/// One class's part motif, row-major `size × size` cells.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Glyph {
    pub size: usize,
    pub cells: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    pub glyphs: Vec<Glyph>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub file: String,
    pub first_id: usize,
    pub count: usize,
    pub per_class: Vec<usize>,
}

/// JSON sidecar written next to the generated containers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedManifest {
    pub spec: SyntheticSpec,
    pub train: SplitInfo,
    pub test: SplitInfo,
}

impl SyntheticData {
    pub fn manifest(&self, spec: &SyntheticSpec) -> GeneratedManifest {
        GeneratedManifest {
            spec: spec.clone(),
            train: SplitInfo {
                file: "train.gzds".into(),
                first_id: 0,
                count: self.train.len(),
                per_class: self.train.class_counts(),
            },
            test: SplitInfo {
                file: "test.gzds".into(),
                first_id: self.train.len(),
                count: self.test.len(),
                per_class: self.test.class_counts(),
            },
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if self.glyph_size == 0 || self.image_size == 0 {
            return Err(Error::config("glyph and image sizes must be positive"));
        }
        if self.glyph_cell == 0 || self.glyph_size % self.glyph_cell != 0 {
            return Err(Error::config(format!(
                "glyph cell {} must divide the glyph size {}",
                self.glyph_cell, self.glyph_size
            )));
        }
        let cells = self.motif_side() * self.motif_side();
        if self.classes >= 1 << cells.min(20) {
            return Err(Error::config("too many classes for the glyph motif grid"));
        }
        if !(0.0..=1.0).contains(&self.glyph_noise) {
            return Err(Error::config(format!("glyph noise {} outside [0, 1]", self.glyph_noise)));
        }
        if self.glyph_flips > cells {
            return Err(Error::config("more glyph flips than glyph cells"));
        }
        if self.placements().is_empty() {
            return Err(Error::config(format!(
                "glyph {0}x{0} does not fit inside the {1:?} body of a {2}px image",
                self.glyph_size, self.body_radii, self.image_size
            )));
        }
        Ok(())
    }

    fn inside_body(&self, y: f32, x: f32) -> bool {
        let c = (self.image_size as f32 - 1.0) / 2.0;
        let (ry, rx) = self.body_radii;
        let (dy, dx) = ((y - c) / ry, (x - c) / rx);
        dy * dy + dx * dx <= 1.0
    }

    /// Top-left corners at which the whole glyph box lies inside the body.
    fn placements(&self) -> Vec<(usize, usize)> {
        let g = self.glyph_size;
        if g > self.image_size {
            return Vec::new();
        }
        let mut v = Vec::new();
        for top in 0..=self.image_size - g {
            for left in 0..=self.image_size - g {
                let (t, l, b, r) = (top as f32, left as f32, (top + g - 1) as f32, (left + g - 1) as f32);
                if self.inside_body(t, l) && self.inside_body(t, r) && self.inside_body(b, l) && self.inside_body(b, r)
                {
                    v.push((top, left));
                }
            }
        }
        v
    }

    fn motif_side(&self) -> usize {
        self.glyph_size / self.glyph_cell
    }

    fn glyphs(&self) -> Vec<Glyph> {
        let mut rng = seed::rng(seed::derive(self.seed, "glyphs"));
        let m = self.motif_side();
        let n = m * m;
        let base: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let mut motifs: Vec<Vec<bool>> = Vec::with_capacity(self.classes);
        while motifs.len() < self.classes {
            let cand = if self.glyph_flips == 0 {
                (0..n).map(|_| rng.gen_bool(0.5)).collect()
            } else {
                let mut g = base.clone();
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng);
                for &i in &idx[..self.glyph_flips] {
                    g[i] = !g[i];
                }
                g
            };
            if cand.iter().any(|&c| c) && !motifs.contains(&cand) {
                motifs.push(cand);
            }
        }
        let (g, cell) = (self.glyph_size, self.glyph_cell);
        motifs
            .into_iter()
            .map(|m_cells| Glyph {
                size: g,
                cells: (0..g * g).map(|i| m_cells[(i / g / cell) * m + (i % g) / cell]).collect(),
            })
            .collect()
    }

    fn render(&self, glyph: &Glyph, placements: &[(usize, usize)], image_seed: u64) -> Result<(Image, PartBox)> {
        let mut rng = seed::rng(image_seed);
        let s = self.image_size;
        let jitter = |rng: &mut rand_chacha::ChaCha8Rng, base: [f32; 3]| {
            base.map(|v| v + rng.gen_range(-self.color_jitter..=self.color_jitter))
        };
        let bg = jitter(&mut rng, self.background);
        let body = jitter(&mut rng, self.body_color);
        let (top, left) = *placements.choose(&mut rng).expect("validated placements");
        let (g, cell, m) = (self.glyph_size, self.glyph_cell, self.motif_side());
        let flipped: Vec<bool> = (0..m * m).map(|_| rng.gen_bool(self.glyph_noise)).collect();
        let ink_at = |dy: usize, dx: usize| glyph.cells[dy * g + dx] != flipped[(dy / cell) * m + dx / cell];
        let normal = |sigma: f32| Normal::new(0.0f32, sigma.max(0.0)).map_err(|e| Error::config(e.to_string()));
        let (bg_noise, body_noise) = (normal(self.noise_sigma)?, normal(self.body_noise_sigma)?);
        let mut img = Image::filled(3, s, s, 0.0);
        for y in 0..s {
            for x in 0..s {
                let in_body = self.inside_body(y as f32, x as f32);
                let ink = y >= top && y < top + g && x >= left && x < left + g && ink_at(y - top, x - left);
                for c in 0..3 {
                    let mut v = if in_body { body[c] } else { bg[c] };
                    if ink {
                        v -= self.glyph_contrast;
                    }
                    v += if in_body { body_noise.sample(&mut rng) } else { bg_noise.sample(&mut rng) };
                    // quantize so the in-memory image equals its 8-bit serialization
                    img.set(c, y, x, (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
                }
            }
        }
        Ok((img, PartBox { row: top, col: left, height: g, width: g }))
    }
}

/// Generates the train and test splits. Pure function of `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let glyphs = spec.glyphs();
    let placements = spec.placements();
    let split = |name: &str, per_class: usize| -> Result<Dataset> {
        let n = per_class * spec.classes;
        let mut images = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % spec.classes;
            let (image, b) =
                spec.render(&glyphs[label], &placements, seed::derive(spec.seed, &format!("{name}/{i}")))?;
            images.push(LabeledImage { image, label, part_box: Some(b) });
        }
        Ok(Dataset { classes: spec.classes, side: spec.image_size, channels: 3, images })
    };
    Ok(SyntheticData {
        train: split("train", spec.train_per_class)?,
        test: split("test", spec.test_per_class)?,
        glyphs,
    })
}

/// Copy of the dataset with every part box blacked out.
pub fn erase_parts(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for s in &mut out.images {
        if let Some(b) = s.part_box {
            for c in 0..s.image.channels() {
                for y in b.row..b.row + b.height {
                    for x in b.col..b.col + b.width {
                        s.image.set(c, y, x, 0.0);
                    }
                }
            }
        }
    }
    out
}

/// Fraction of maps whose peak falls inside the matching box. Degenerate
/// maps count as misses.
pub fn localization_score(maps: &[SaliencyMap], boxes: &[PartBox]) -> Result<f64> {
    if maps.is_empty() {
        return Err(Error::arg("no saliency maps to score"));
    }
    if maps.len() != boxes.len() {
        return Err(Error::arg(format!("{} maps but {} boxes", maps.len(), boxes.len())));
    }
    let hits = maps.iter().zip(boxes).filter(|(m, b)| matches!(peak(m), Ok((r, c)) if b.contains(r, c))).count();
    Ok(hits as f64 / maps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::Method;

    fn small() -> SyntheticSpec {
        SyntheticSpec { classes: 4, train_per_class: 3, test_per_class: 2, ..Default::default() }
    }

    #[test]
    fn counts_are_balanced() {
        let spec = SyntheticSpec { train_per_class: 20, test_per_class: 5, ..Default::default() };
        let d = generate(&spec).unwrap();
        assert_eq!(d.train.len(), 200);
        assert_eq!(d.train.class_counts(), vec![20; 10]);
        assert_eq!(d.test.class_counts(), vec![5; 10]);
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SyntheticSpec { seed: 1, ..small() };
        assert_ne!(generate(&small()).unwrap().train, generate(&other).unwrap().train);
    }

    #[test]
    fn glyphs_are_pairwise_distinct_and_boxes_inside() {
        for flips in [0, 6] {
            let spec = SyntheticSpec { glyph_flips: flips, ..small() };
            let d = generate(&spec).unwrap();
            for i in 0..d.glyphs.len() {
                for j in 0..i {
                    assert_ne!(d.glyphs[i], d.glyphs[j]);
                }
            }
            for s in d.train.images.iter().chain(&d.test.images) {
                let b = s.part_box.unwrap();
                assert!(b.row + b.height <= 64 && b.col + b.width <= 64);
            }
        }
    }

    #[test]
    fn glyph_cells_are_uniform_blocks() {
        let d = generate(&small()).unwrap();
        for g in &d.glyphs {
            for y in 0..9 {
                for x in 0..9 {
                    assert_eq!(g.cells[y * 9 + x], g.cells[(y / 3 * 3) * 9 + x / 3 * 3]);
                }
            }
        }
        assert!(generate(&SyntheticSpec { glyph_cell: 2, ..small() }).is_err());
    }

    #[test]
    fn oversized_glyph_is_config_error() {
        let spec = SyntheticSpec { glyph_size: 51, ..small() };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn localization_counting() {
        let mut grid = vec![0.0f32; 16];
        grid[5] = 1.0; // (1,1)
        let m = SaliencyMap::new(grid, 4, 4, 0, Method::GradCam).unwrap();
        let inside = PartBox { row: 0, col: 0, height: 2, width: 2 };
        let outside = PartBox { row: 2, col: 2, height: 2, width: 2 };
        assert_eq!(localization_score(&[m.clone(), m.clone()], &[inside, inside]).unwrap(), 1.0);
        assert_eq!(localization_score(&[m.clone(), m.clone()], &[inside, outside]).unwrap(), 0.5);
        assert!(localization_score(&[], &[]).is_err());
        assert!(localization_score(&[m], &[]).is_err());
    }
}
