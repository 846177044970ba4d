//! Pixel-space mixing of frames from different programs.

pub mod dataset;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{Image, Resolution};
use crate::render::RenderError;
use crate::rng::StreamKey;

pub use dataset::{build_mixed_dataset, DatasetOptions, DatasetReport, SamplePlan, Sampler};

pub const DEFAULT_N: usize = 6;
pub const DEFAULT_ALPHA: f64 = 1.0;
/// Range of the area fraction of each pasted CutMix rectangle.
pub const CUTMIX_AREA: (f64, f64) = (0.1, 0.5);

#[derive(Debug, Error)]
pub enum MixError {
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("images have different dimensions")]
    DimensionMismatch,
    #[error("weights do not match the images: {0}")]
    WeightMismatch(String),
    #[error("need {needed} unique programs, manifest has {available}")]
    InsufficientPrograms { needed: usize, available: usize },
    #[error("rendering `{id}` failed: {source}")]
    Render { id: String, source: RenderError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("encoding failed: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    None,
    Mixup,
    Cutmix,
}

impl MixMode {
    pub fn code(self) -> u8 {
        match self {
            MixMode::None => 0,
            MixMode::Mixup => 1,
            MixMode::Cutmix => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(MixMode::None),
            1 => Some(MixMode::Mixup),
            2 => Some(MixMode::Cutmix),
            _ => None,
        }
    }
}

impl std::str::FromStr for MixMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(MixMode::None),
            "mixup" => Ok(MixMode::Mixup),
            "cutmix" => Ok(MixMode::Cutmix),
            other => Err(format!("unknown mix mode `{other}` (expected none, mixup or cutmix)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub mode: MixMode,
    pub n: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for MixSpec {
    fn default() -> Self {
        Self { mode: MixMode::Mixup, n: DEFAULT_N, alpha: DEFAULT_ALPHA, seed: 0 }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<(), MixError> {
        if self.n == 0 {
            return Err(MixError::BadParameter("n must be at least 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(MixError::BadParameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.mode == MixMode::None && self.n != 1 {
            return Err(MixError::BadParameter(format!("mode none takes exactly one frame, got n={}", self.n)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn fits(&self, res: Resolution) -> bool {
        self.width >= 1 && self.height >= 1 && self.x + self.width <= res.width && self.y + self.height <= res.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRef {
    pub shader_id: String,
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    /// Region copied from this source; absent for the CutMix base.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rect: Option<Rect>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub image: Image,
    pub sources: Vec<SourceRef>,
    pub spec: MixSpec,
}

pub fn sample_dirichlet_with<R: Rng + ?Sized>(rng: &mut R, n: usize, alpha: f64) -> Result<Vec<f64>, MixError> {
    if n == 0 {
        return Err(MixError::BadParameter("n must be at least 1".into()));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| MixError::BadParameter(format!("alpha={alpha}: {e}")))?;
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        // Every draw underflowed (tiny alpha): the limit is a uniformly
        // chosen vertex of the simplex.
        let mut w = vec![0.0; n];
        w[rng.random_range(0..n)] = 1.0;
        return Ok(w);
    }
    Ok(draws.into_iter().map(|g| g / sum).collect())
}

/// Dirichlet(alpha, ..., alpha) weights via normalized Gamma draws.
pub fn sample_dirichlet(n: usize, alpha: f64, seed: u64) -> Result<Vec<f64>, MixError> {
    sample_dirichlet_with(&mut StreamKey::from_seed(seed).rng(), n, alpha)
}

fn check_weights(images: &[Image], weights: &[f64]) -> Result<(), MixError> {
    if images.is_empty() {
        return Err(MixError::WeightMismatch("no images".into()));
    }
    if images.len() != weights.len() {
        return Err(MixError::WeightMismatch(format!("{} images, {} weights", images.len(), weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(MixError::WeightMismatch(format!("weight {w} is not a non-negative number")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(MixError::WeightMismatch(format!("weights sum to {sum}")));
    }
    if images.iter().any(|i| !i.same_dimensions(&images[0])) {
        return Err(MixError::DimensionMismatch);
    }
    Ok(())
}

/// Weighted per-channel average on [0, 1], rounded half away from zero.
///
/// Terms are summed in a canonical order (by weight, then by pixel bytes)
/// so that permuting images and weights together cannot change the
/// floating-point result.
pub fn mixup(images: &[Image], weights: &[f64]) -> Result<Image, MixError> {
    check_weights(images, weights)?;
    let mut terms: Vec<(f64, &Image)> = weights.iter().copied().zip(images).collect();
    terms.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.pixels.cmp(&b.1.pixels)));
    let first = images[0].clone();
    let mut acc = vec![0.0f64; first.pixels.len()];
    for (w, img) in terms {
        if w == 0.0 {
            continue;
        }
        for (a, &p) in acc.iter_mut().zip(&img.pixels) {
            *a += w * (p as f64 / 255.0);
        }
    }
    let pixels = acc.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let ids: Vec<&str> = images.iter().map(|i| i.shader_id.as_str()).collect();
    Ok(Image::new(first.width, first.height, pixels, ids.join("+"), first.t))
}

/// Rectangles for CutMix donors `1..n`: area fraction uniform in
/// [`CUTMIX_AREA`], aspect ratio of the canvas, position uniform with the
/// rectangle fully inside.
pub fn cutmix_rects(res: Resolution, donors: usize, seed: u64) -> Vec<Rect> {
    let mut rng = StreamKey::from_seed(seed).rng();
    (0..donors)
        .map(|_| {
            let area = rng.random_range(CUTMIX_AREA.0..=CUTMIX_AREA.1);
            let side = area.sqrt();
            let width = ((res.width as f64 * side).round() as u32).clamp(1, res.width);
            let height = ((res.height as f64 * side).round() as u32).clamp(1, res.height);
            let x = rng.random_range(0..=res.width - width);
            let y = rng.random_range(0..=res.height - height);
            Rect { x, y, width, height }
        })
        .collect()
}

/// Paste `rects[k]` from `donors[k]` onto a copy of `base`, in order.
pub fn paste_rects(base: &Image, donors: &[Image], rects: &[Rect]) -> Result<Image, MixError> {
    if donors.len() != rects.len() {
        return Err(MixError::BadParameter(format!("{} donors, {} rects", donors.len(), rects.len())));
    }
    if donors.iter().any(|d| !d.same_dimensions(base)) {
        return Err(MixError::DimensionMismatch);
    }
    let mut out = base.clone();
    for (donor, r) in donors.iter().zip(rects) {
        if !r.fits(base.resolution()) {
            return Err(MixError::BadParameter(format!("rect {r:?} outside the canvas")));
        }
        let span = r.width as usize * 3;
        for y in r.y..r.y + r.height {
            let o = base.offset(r.x, y);
            out.pixels[o..o + span].copy_from_slice(&donor.pixels[o..o + span]);
        }
    }
    Ok(out)
}

/// CutMix with `images[0]` as the base and the rest as donors, pasted in order.
pub fn cutmix(images: &[Image], seed: u64) -> Result<MixedSample, MixError> {
    let base = images.first().ok_or_else(|| MixError::BadParameter("no images".into()))?;
    if images.iter().any(|i| !i.same_dimensions(base)) {
        return Err(MixError::DimensionMismatch);
    }
    let rects = cutmix_rects(base.resolution(), images.len() - 1, seed);
    let mut image = paste_rects(base, &images[1..], &rects)?;
    image.shader_id = images.iter().map(|i| i.shader_id.as_str()).collect::<Vec<_>>().join("+");
    let sources = images
        .iter()
        .enumerate()
        .map(|(k, img)| SourceRef {
            shader_id: img.shader_id.clone(),
            t: img.t,
            weight: None,
            rect: if k == 0 { None } else { Some(rects[k - 1]) },
        })
        .collect();
    Ok(MixedSample {
        image,
        sources,
        spec: MixSpec { mode: MixMode::Cutmix, n: images.len(), alpha: DEFAULT_ALPHA, seed },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(n: u32) -> Resolution {
        Resolution::square(n).unwrap()
    }

    #[test]
    fn dirichlet_basics() {
        assert_eq!(sample_dirichlet(1, 1.0, 3).unwrap(), vec![1.0]);
        let w = sample_dirichlet(6, 1.0, 3).unwrap();
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(w, sample_dirichlet(6, 1.0, 3).unwrap());
        assert!(matches!(sample_dirichlet(0, 1.0, 3), Err(MixError::BadParameter(_))));
        assert!(matches!(sample_dirichlet(3, 0.0, 3), Err(MixError::BadParameter(_))));
    }

    #[test]
    fn tiny_alpha_still_sums_to_one() {
        for seed in 0..20 {
            let w = sample_dirichlet(6, 1e-6, seed).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn half_and_half() {
        let a = Image::filled(res(3), [0, 0, 0]);
        let b = Image::filled(res(3), [255, 255, 255]);
        let m = mixup(&[a, b], &[0.5, 0.5]).unwrap();
        assert!(m.pixels.iter().all(|&p| p == 128));
    }

    #[test]
    fn mixup_errors() {
        let a = Image::filled(res(3), [0, 0, 0]);
        let b = Image::filled(res(4), [0, 0, 0]);
        assert!(matches!(mixup(&[a.clone(), b], &[0.5, 0.5]), Err(MixError::DimensionMismatch)));
        assert!(matches!(mixup(std::slice::from_ref(&a), &[0.5]), Err(MixError::WeightMismatch(_))));
        assert!(matches!(mixup(&[a.clone(), a], &[1.0]), Err(MixError::WeightMismatch(_))));
    }

    #[test]
    fn full_canvas_rect_copies_donor() {
        let base = Image::filled(res(5), [1, 1, 1]);
        let donor = Image::filled(res(5), [9, 8, 7]);
        let out = paste_rects(&base, std::slice::from_ref(&donor), &[Rect { x: 0, y: 0, width: 5, height: 5 }]).unwrap();
        assert_eq!(out.pixels, donor.pixels);
    }

    #[test]
    fn single_image_cutmix_is_identity() {
        let base = Image::filled(res(5), [1, 2, 3]);
        let s = cutmix(std::slice::from_ref(&base), 4).unwrap();
        assert_eq!(s.image.pixels, base.pixels);
        assert_eq!(s.sources.len(), 1);
        assert_eq!(s.sources[0].rect, None);
    }

    #[test]
    fn rect_areas_in_range() {
        let r = res(100);
        for seed in 0..200 {
            for rect in cutmix_rects(r, 3, seed) {
                assert!(rect.fits(r));
                let frac = (rect.width * rect.height) as f64 / 10_000.0;
                assert!((0.09..=0.51).contains(&frac), "{frac}");
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(MixSpec::default().validate().is_ok());
        assert!(MixSpec { mode: MixMode::None, n: 2, ..Default::default() }.validate().is_err());
        assert!(MixSpec { alpha: -1.0, ..Default::default() }.validate().is_err());
    }
}
