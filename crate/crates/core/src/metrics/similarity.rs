use rand::Rng;

use crate::image::Image;
use crate::mix::Rect;
use crate::rng::StreamKey;

use super::MetricsError;

/// Side of the grid both crops are reduced to by [`DownsampledMad`].
pub const DEFAULT_GRID: u32 = 32;
pub const DEFAULT_CROP_FRAC: f64 = 0.5;
pub const DEFAULT_PAIRS: usize = 16;

/// Distance between two equally sized crops.
pub trait ImageDistance: Send + Sync {
    fn distance(&self, a: &Image, b: &Image) -> f64;
}

/// Mean absolute per-channel difference on [0, 1] after area-averaging
/// both crops to a `grid`×`grid` image.
#[derive(Debug, Clone, Copy)]
pub struct DownsampledMad {
    pub grid: u32,
}

impl Default for DownsampledMad {
    fn default() -> Self {
        Self { grid: DEFAULT_GRID }
    }
}

/// Box-filter `img` to `out_w`×`out_h`, weighting each source pixel by its
/// overlap with the destination cell. Channels stay in [0, 255].
pub fn area_resample(img: &Image, out_w: u32, out_h: u32) -> Vec<f64> {
    let (sw, sh) = (img.width as f64, img.height as f64);
    let sx = sw / out_w as f64;
    let sy = sh / out_h as f64;
    let mut out = vec![0.0; out_w as usize * out_h as usize * 3];
    for oy in 0..out_h {
        let y0 = oy as f64 * sy;
        let y1 = y0 + sy;
        for ox in 0..out_w {
            let x0 = ox as f64 * sx;
            let x1 = x0 + sx;
            let mut acc = [0.0; 3];
            let mut y = y0.floor() as u32;
            while (y as f64) < y1 && y < img.height {
                let wy = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
                let mut x = x0.floor() as u32;
                while (x as f64) < x1 && x < img.width {
                    let wx = (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
                    let p = img.pixel(x, y);
                    for c in 0..3 {
                        acc[c] += p[c] as f64 * wx * wy;
                    }
                    x += 1;
                }
                y += 1;
            }
            let o = (oy as usize * out_w as usize + ox as usize) * 3;
            for c in 0..3 {
                out[o + c] = acc[c] / (sx * sy);
            }
        }
    }
    out
}

impl ImageDistance for DownsampledMad {
    fn distance(&self, a: &Image, b: &Image) -> f64 {
        let ra = area_resample(a, self.grid, self.grid);
        let rb = area_resample(b, self.grid, self.grid);
        let sum: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).abs()).sum();
        sum / (ra.len() as f64 * 255.0)
    }
}

pub fn crop(img: &Image, r: Rect) -> Image {
    let mut pixels = Vec::with_capacity(r.width as usize * r.height as usize * 3);
    for y in r.y..r.y + r.height {
        let o = img.offset(r.x, y);
        pixels.extend_from_slice(&img.pixels[o..o + r.width as usize * 3]);
    }
    Image::new(r.width, r.height, pixels, img.shader_id.clone(), img.t)
}

/// Side of a square crop covering `frac` of the image area.
pub fn crop_side(img: &Image, frac: f64) -> Result<u32, MetricsError> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(MetricsError::BadParameter(format!("crop fraction must be in (0, 1], got {frac}")));
    }
    let side = ((frac * img.width as f64 * img.height as f64).sqrt().round() as u32).max(1);
    if side > img.width.min(img.height) {
        return Err(MetricsError::CropTooLarge { side, width: img.width, height: img.height });
    }
    Ok(side)
}

pub fn crop_pair_distance(img: &Image, a: Rect, b: Rect, distance: &dyn ImageDistance) -> f64 {
    distance.distance(&crop(img, a), &crop(img, b))
}

/// Mean distance between `n_pairs` pairs of independently placed square
/// crops, each covering `crop_frac` of the image.
pub fn self_similarity(
    img: &Image,
    n_pairs: usize,
    crop_frac: f64,
    distance: &dyn ImageDistance,
    seed: u64,
) -> Result<f64, MetricsError> {
    if n_pairs == 0 {
        return Err(MetricsError::ZeroCount);
    }
    let side = crop_side(img, crop_frac)?;
    let mut rng = StreamKey::from_seed(seed).rng();
    let place = |rng: &mut crate::rng::CounterRng| Rect {
        x: rng.random_range(0..=img.width - side),
        y: rng.random_range(0..=img.height - side),
        width: side,
        height: side,
    };
    let mut total = 0.0;
    for _ in 0..n_pairs {
        let a = place(&mut rng);
        let b = place(&mut rng);
        total += crop_pair_distance(img, a, b, distance);
    }
    Ok(total / n_pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Resolution;

    fn two_tone() -> Image {
        let mut img = Image::filled(Resolution::new(64, 32).unwrap(), [0, 0, 0]);
        for y in 0..32 {
            for x in 32..64 {
                let o = img.offset(x, y);
                img.pixels[o..o + 3].copy_from_slice(&[255, 255, 255]);
            }
        }
        img
    }

    #[test]
    fn opposite_halves_are_maximally_distant() {
        let img = two_tone();
        let side = crop_side(&img, 0.5).unwrap();
        assert_eq!(side, 32);
        let left = Rect { x: 0, y: 0, width: 32, height: 32 };
        let right = Rect { x: 32, y: 0, width: 32, height: 32 };
        let d = crop_pair_distance(&img, left, right, &DownsampledMad::default());
        assert_eq!(d, 1.0);
    }

    #[test]
    fn constant_image_scores_zero() {
        let img = Image::filled(Resolution::square(40).unwrap(), [90, 20, 200]);
        assert_eq!(self_similarity(&img, 8, 0.5, &DownsampledMad::default(), 1).unwrap(), 0.0);
    }

    #[test]
    fn crop_must_fit() {
        let img = Image::filled(Resolution::new(100, 10).unwrap(), [0, 0, 0]);
        assert!(matches!(crop_side(&img, 0.5), Err(MetricsError::CropTooLarge { .. })));
    }

    #[test]
    fn resample_preserves_mean() {
        let mut img = Image::filled(Resolution::new(45, 37).unwrap(), [0, 0, 0]);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = (i * 37 % 256) as u8;
        }
        let mean_in: f64 = img.pixels.iter().map(|&p| p as f64).sum::<f64>() / img.pixels.len() as f64;
        let out = area_resample(&img, 32, 32);
        let mean_out: f64 = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean_in - mean_out).abs() < 1e-9, "{mean_in} vs {mean_out}");
    }
}
