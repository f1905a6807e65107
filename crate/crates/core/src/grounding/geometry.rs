use crate::error::{Error, Result};
use crate::image::Image;

use super::SaliencyMap;

/// Location of the maximum; ties go to the smallest row, then column.
pub fn peak(map: &SaliencyMap) -> Result<(usize, usize)> {
    if map.is_degenerate() {
        return Err(Error::NoEvidence);
    }
    let mut best = 0;
    for (i, &v) in map.grid().iter().enumerate() {
        if v > map.grid()[best] {
            best = i;
        }
    }
    Ok((best / map.width(), best % map.width()))
}

/// Top-left corner of a `size × size` window centered on `center` and
/// shifted to stay inside a `height × width` image.
pub fn window(center: (usize, usize), size: usize, height: usize, width: usize) -> Result<(usize, usize)> {
    if size == 0 || size > height || size > width {
        return Err(Error::arg(format!("window {size} does not fit in {height}x{width}")));
    }
    let clamp = |c: usize, n: usize| c.saturating_sub(size / 2).min(n - size);
    Ok((clamp(center.0, height), clamp(center.1, width)))
}

/// Square crop around `center`, clamped to lie fully inside the image.
pub fn extract_patch(image: &Image, center: (usize, usize), patch_size: usize) -> Result<Image> {
    let (top, left) = window(center, patch_size, image.height(), image.width())?;
    image.crop(top, left, patch_size, patch_size)
}

/// Copy of `image` with a black `erase_size` square around `center`, placed
/// with the same clamping rule as [`extract_patch`].
pub fn erase(image: &Image, center: (usize, usize), erase_size: usize) -> Result<Image> {
    let (top, left) = window(center, erase_size, image.height(), image.width())?;
    let mut out = image.clone();
    for c in 0..image.channels() {
        for y in top..top + erase_size {
            for x in left..left + erase_size {
                out.set(c, y, x, 0.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::Method;

    fn map_with(points: &[((usize, usize), f32)], h: usize, w: usize) -> SaliencyMap {
        let mut g = vec![0.0; h * w];
        for &((r, c), v) in points {
            g[r * w + c] = v;
        }
        SaliencyMap::new(g, h, w, 0, Method::Ceb).unwrap()
    }

    fn ramp(h: usize, w: usize) -> Image {
        Image::new(3, h, w, (0..3 * h * w).map(|v| (v % 251) as f32 / 251.0 + 0.001).collect()).unwrap()
    }

    #[test]
    fn peak_single_hot_pixel() {
        assert_eq!(peak(&map_with(&[((5, 7), 1.0)], 10, 10)).unwrap(), (5, 7));
    }

    #[test]
    fn peak_ties() {
        let uniform = SaliencyMap::new(vec![0.3; 64], 8, 8, 0, Method::Rise).unwrap();
        assert_eq!(peak(&uniform).unwrap(), (0, 0));
        assert_eq!(peak(&map_with(&[((4, 1), 2.0), ((3, 9), 2.0)], 10, 10)).unwrap(), (3, 9));
    }

    #[test]
    fn peak_of_zero_map_is_no_evidence() {
        assert!(matches!(peak(&map_with(&[], 4, 4)), Err(Error::NoEvidence)));
    }

    #[test]
    fn patch_windows_clamp() {
        assert_eq!(window((0, 0), 21, 64, 64).unwrap(), (0, 0));
        assert_eq!(window((63, 63), 21, 64, 64).unwrap(), (43, 43));
        assert_eq!(window((32, 32), 21, 64, 64).unwrap(), (22, 22));
        let img = ramp(64, 64);
        let p = extract_patch(&img, (63, 63), 21).unwrap();
        assert_eq!(p, img.crop(43, 43, 21, 21).unwrap());
    }

    #[test]
    fn centered_patch_is_symmetric() {
        let (top, left) = window((32, 32), 21, 65, 65).unwrap();
        assert_eq!((32 - top, top + 20 - 32), (10, 10));
        assert_eq!(left, top);
    }

    #[test]
    fn erase_blackens_only_the_square() {
        let img = ramp(16, 16);
        let out = erase(&img, (5, 9), 4).unwrap();
        let (top, left) = window((5, 9), 4, 16, 16).unwrap();
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let inside = (top..top + 4).contains(&y) && (left..left + 4).contains(&x);
                    if inside {
                        assert_eq!(out.get(c, y, x), 0.0);
                    } else {
                        assert_eq!(out.get(c, y, x).to_bits(), img.get(c, y, x).to_bits());
                    }
                }
            }
        }
        assert_eq!(erase(&out, (5, 9), 4).unwrap(), out);
    }

    #[test]
    fn erase_whole_image() {
        let out = erase(&ramp(8, 8), (2, 6), 8).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oversized_window_rejected() {
        assert!(extract_patch(&ramp(8, 8), (0, 0), 9).is_err());
    }
}
