use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, LayerParams, Network};

/// Architecture of a plain conv-net: `blocks × (conv3×3 → ReLU → maxpool2)`,
/// global average pooling, then one fully connected layer to the classes.
///
/// Layers are named `block{i}.conv`, `block{i}.relu`, `block{i}.pool`
/// (1-based), `gap` and `fc`. `block{i}` alone refers to the block output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_size: usize,
    pub in_channels: usize,
    pub channels: Vec<usize>,
    pub classes: usize,
    pub grounding_layer: String,
}

const DESCRIPTOR_TAG: &str = "gz-cnn";

impl ModelSpec {
    /// Whole-image classifier: 64×64 RGB, channels 16/32/64/64, grounded at
    /// the output of block 3.
    pub fn conventional(classes: usize) -> Self {
        ModelSpec {
            input_size: 64,
            in_channels: 3,
            channels: vec![16, 32, 64, 64],
            classes,
            grounding_layer: "block3".into(),
        }
    }

    /// Patch classifier: same block plan at a 32×32 input.
    pub fn evidence(classes: usize) -> Self {
        ModelSpec { input_size: 32, ..Self::conventional(classes) }
    }

    /// Two narrow blocks; for tests and quick experiments.
    pub fn tiny(input_size: usize, classes: usize) -> Self {
        ModelSpec { input_size, in_channels: 3, channels: vec![4, 6], classes, grounding_layer: "block1".into() }
    }

    pub fn with_channels(mut self, channels: Vec<usize>) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_grounding_layer(mut self, name: impl Into<String>) -> Self {
        self.grounding_layer = name.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.in_channels == 0 || self.channels.is_empty() {
            return Err(Error::config(format!("degenerate model spec {self:?}")));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("zero-width conv block"));
        }
        if self.input_size >> self.channels.len() == 0 {
            return Err(Error::config(format!(
                "input {} too small for {} pooling stages",
                self.input_size,
                self.channels.len()
            )));
        }
        self.grounding_index()?;
        Ok(())
    }

    fn layer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 1..=self.channels.len() {
            for part in ["conv", "relu", "pool"] {
                names.push(format!("block{i}.{part}"));
            }
        }
        names.push("gap".into());
        names.push("fc".into());
        names
    }

    /// Tape index (`acts[i]`) of the grounding activation.
    pub fn grounding_index(&self) -> Result<usize> {
        let name = &self.grounding_layer;
        let resolved = match name.strip_prefix("block") {
            Some(rest) if !rest.contains('.') => format!("{name}.pool"),
            Some(_) => name.clone(),
            None => {
                return Err(Error::config(format!("grounding layer {name:?} is not a conv block")));
            }
        };
        if resolved.ends_with(".conv") {
            return Err(Error::config(format!(
                "grounding layer {name:?} must be a post-activation block output (.relu or .pool)"
            )));
        }
        self.layer_names()
            .iter()
            .position(|n| *n == resolved)
            .map(|i| i + 1)
            .ok_or_else(|| Error::config(format!("grounding layer {name:?} does not exist")))
    }

    /// Spatial side of the grounding activation.
    pub fn grounding_side(&self) -> usize {
        let idx = self.grounding_index().expect("validated spec");
        let block = (idx - 1) / 3;
        let pooled = idx % 3 == 0;
        self.input_size >> (block + usize::from(pooled))
    }

    pub(crate) fn build<R: Rng>(&self, rng: &mut R) -> Network<f32> {
        let names = self.layer_names();
        let mut layers = Vec::with_capacity(names.len());
        let mut names = names.into_iter();
        let mut cin = self.in_channels;
        for &cout in &self.channels {
            let params = LayerParams::glorot(&[cout, cin, 3, 3], cin * 9, cout * 9, rng);
            layers.push((names.next().unwrap(), Layer::Conv2d { params, stride: 1, padding: 1 }));
            layers.push((names.next().unwrap(), Layer::Relu));
            layers.push((names.next().unwrap(), Layer::MaxPool2d { size: 2 }));
            cin = cout;
        }
        layers.push((names.next().unwrap(), Layer::GlobalAvgPool));
        let params = LayerParams::glorot(&[self.classes, cin], cin, self.classes, rng);
        layers.push((names.next().unwrap(), Layer::Linear { params }));
        Network::new(layers)
    }

    /// One-line architecture descriptor stored in checkpoints.
    pub fn descriptor(&self) -> String {
        let ch: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        format!(
            "{DESCRIPTOR_TAG} in={}x{}x{} blocks={} classes={} ground={}",
            self.input_size,
            self.input_size,
            self.in_channels,
            ch.join(","),
            self.classes,
            self.grounding_layer
        )
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("unrecognized architecture descriptor {s:?}"));
        let mut parts = s.split_whitespace();
        if parts.next() != Some(DESCRIPTOR_TAG) {
            return Err(bad());
        }
        let (mut input, mut blocks, mut classes, mut ground) = (None, None, None, None);
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            match k {
                "in" => {
                    let d: Vec<usize> = v.split('x').map(|x| x.parse().map_err(|_| bad())).collect::<Result<_>>()?;
                    if d.len() != 3 || d[0] != d[1] {
                        return Err(bad());
                    }
                    input = Some((d[0], d[2]));
                }
                "blocks" => {
                    blocks = Some(v.split(',').map(|x| x.parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>()?)
                }
                "classes" => classes = Some(v.parse().map_err(|_| bad())?),
                "ground" => ground = Some(v.to_string()),
                _ => return Err(bad()),
            }
        }
        let (input_size, in_channels) = input.ok_or_else(bad)?;
        let spec = ModelSpec {
            input_size,
            in_channels,
            channels: blocks.ok_or_else(bad)?,
            classes: classes.ok_or_else(bad)?,
            grounding_layer: ground.ok_or_else(bad)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}
