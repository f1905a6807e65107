//! Saliency maps as images.

use std::path::Path;

use crate::error::Result;
use crate::image::Image;
use crate::pnm;

use super::SaliencyMap;

/// Min-max normalization to `[0, 1]`; a constant map becomes all zeros.
pub fn normalized(map: &SaliencyMap) -> Vec<f32> {
    let (lo, hi) = map.grid().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi > lo {
        map.grid().iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; map.grid().len()]
    }
}

/// Grayscale rendering of the normalized map.
pub fn map_image(map: &SaliencyMap) -> Image {
    Image::new(1, map.height(), map.width(), normalized(map)).expect("map dims")
}

/// Half-intensity image with the normalized map blended into the red channel.
pub fn overlay(image: &Image, map: &SaliencyMap) -> Result<Image> {
    let heat = if map.height() == image.height() && map.width() == image.width() {
        normalized(map)
    } else {
        map_image(map).resize(image.height(), image.width()).data().to_vec()
    };
    let hw = image.height() * image.width();
    let mut data = Vec::with_capacity(3 * hw);
    for c in 0..3 {
        let src = image.plane(c.min(image.channels() - 1));
        for i in 0..hw {
            let base = 0.5 * src[i];
            data.push(if c == 0 { base + 0.5 * heat[i] } else { base });
        }
    }
    Image::new(3, image.height(), image.width(), data)
}

pub fn write_map(path: &Path, map: &SaliencyMap) -> Result<()> {
    pnm::write(path, &map_image(map))
}

pub fn write_overlay(path: &Path, image: &Image, map: &SaliencyMap) -> Result<()> {
    pnm::write(path, &overlay(image, map)?)
}
