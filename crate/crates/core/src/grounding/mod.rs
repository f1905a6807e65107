//! Class-conditional saliency ("grounding") and the patch geometry built on
//! top of it: peak finding, evidence crops and adversarial erasing.

mod excitation;
mod geometry;
mod gradcam;
mod rise;
pub mod viz;

use serde::{Deserialize, Serialize};

pub use excitation::{excitation_backprop, excitation_relevance, EbTrace};
pub use geometry::{erase, extract_patch, peak, window};
pub use gradcam::{grad_cam, grad_cam_grid};
pub use rise::{rise, RiseConfig};

use crate::error::{Error, Result};
use crate::image::{bilinear_resize, Image};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Contrastive excitation backprop.
    Ceb,
    /// Plain (non-contrastive) excitation backprop.
    Eb,
    GradCam,
    Rise,
}

impl Method {
    pub fn code(self) -> u8 {
        match self {
            Method::Ceb => 0,
            Method::Eb => 1,
            Method::GradCam => 2,
            Method::Rise => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Method::Ceb,
            1 => Method::Eb,
            2 => Method::GradCam,
            3 => Method::Rise,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Ceb => "ceb",
            Method::Eb => "eb",
            Method::GradCam => "gradcam",
            Method::Rise => "rise",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ceb" => Ok(Method::Ceb),
            "eb" => Ok(Method::Eb),
            "gradcam" | "grad-cam" => Ok(Method::GradCam),
            "rise" => Ok(Method::Rise),
            other => Err(Error::config(format!("unknown grounding method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Non-negative saliency grid at image resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    grid: Vec<f32>,
    height: usize,
    width: usize,
    class_id: usize,
    method: Method,
}

impl SaliencyMap {
    pub fn new(grid: Vec<f32>, height: usize, width: usize, class_id: usize, method: Method) -> Result<Self> {
        if grid.len() != height * width || grid.is_empty() {
            return Err(Error::shape("saliency map", format!("{} values for {height}x{width}", grid.len())));
        }
        if grid.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::arg("saliency values must be finite and non-negative"));
        }
        Ok(SaliencyMap { grid, height, width, class_id, method })
    }

    /// Upsamples a coarse non-negative grid to `height × width`.
    pub(crate) fn from_coarse(
        coarse: &[f32],
        ch: usize,
        cw: usize,
        height: usize,
        width: usize,
        class_id: usize,
        method: Method,
    ) -> Result<Self> {
        let grid = bilinear_resize(coarse, ch, cw, height, width).into_iter().map(|v| v.max(0.0)).collect();
        SaliencyMap::new(grid, height, width, class_id, method)
    }

    pub fn grid(&self) -> &[f32] {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.grid[row * self.width + col]
    }

    /// All-zero maps carry no evidence.
    pub fn is_degenerate(&self) -> bool {
        self.grid.iter().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingConfig {
    pub method: Method,
    /// Overrides the model's grounding layer when set.
    pub layer: Option<String>,
    pub rise: RiseConfig,
    pub patch_size: usize,
    pub erase_size: usize,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig {
            method: Method::Ceb,
            layer: None,
            rise: RiseConfig::default(),
            patch_size: 21,
            erase_size: 12,
        }
    }
}

impl GroundingConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self, image_side: usize) -> Result<()> {
        if self.patch_size == 0 || self.patch_size > image_side {
            return Err(Error::config(format!("patch size {} must be in 1..={image_side}", self.patch_size)));
        }
        if self.erase_size == 0 || self.erase_size > self.patch_size {
            return Err(Error::config(format!("erase size {} must be in 1..={}", self.erase_size, self.patch_size)));
        }
        self.rise.validate()
    }

    fn layer_index(&self, model: &Model) -> Result<usize> {
        match &self.layer {
            None => Ok(model.grounding_index()),
            Some(name) => model.spec().clone().with_grounding_layer(name.clone()).grounding_index(),
        }
    }
}

/// Anything that can produce a saliency map for an image and a class.
pub trait Grounder: Sync {
    fn ground(&self, image: &Image, class_id: usize) -> Result<SaliencyMap>;
    fn method(&self) -> Method;
}

/// Wraps a closure as a grounder with a fixed method tag.
pub struct FnGrounder<F>(pub Method, pub F);

impl<F> Grounder for FnGrounder<F>
where
    F: Fn(&Image, usize) -> Result<SaliencyMap> + Sync,
{
    fn ground(&self, image: &Image, class_id: usize) -> Result<SaliencyMap> {
        (self.1)(image, class_id)
    }

    fn method(&self) -> Method {
        self.0
    }
}

/// Grounds a trained [`Model`] with the method selected in the config.
pub struct ModelGrounder<'a> {
    pub model: &'a Model,
    pub cfg: GroundingConfig,
}

impl<'a> ModelGrounder<'a> {
    pub fn new(model: &'a Model, cfg: GroundingConfig) -> Self {
        ModelGrounder { model, cfg }
    }
}

impl Grounder for ModelGrounder<'_> {
    fn ground(&self, image: &Image, class_id: usize) -> Result<SaliencyMap> {
        ground(self.model, image, class_id, &self.cfg)
    }

    fn method(&self) -> Method {
        self.cfg.method
    }
}

/// Dispatches to the configured grounding method.
pub fn ground(model: &Model, image: &Image, class_id: usize, cfg: &GroundingConfig) -> Result<SaliencyMap> {
    match cfg.method {
        Method::GradCam => gradcam::grad_cam_at(model, image, class_id, cfg.layer_index(model)?),
        Method::Ceb | Method::Eb => excitation::excitation_backprop_at(
            model,
            image,
            class_id,
            cfg.method == Method::Ceb,
            cfg.layer_index(model)?,
        ),
        Method::Rise => {
            model.check_input(image)?;
            if class_id >= model.spec().classes {
                return Err(Error::arg(format!("class {class_id} out of range")));
            }
            rise(&|img: &Image| model.predict(img), image, class_id, &cfg.rise)
        }
    }
}
