//! Deterministic raster primitives used by the sample synthesizer.
//!
//! Every operation is a pure function of its inputs and, where randomness is
//! involved, of the random stream passed in by the caller. Photometric
//! operations work on 8-bit RGB and saturate to `[0, 255]`.

mod blur;
mod fade;
mod warp;

use image::RgbImage;
use rand::Rng;
use thiserror::Error;

use crate::bbox::PixelBox;

pub use blur::{gaussian_blur, gaussian_blur_plane, gaussian_kernel};
pub use fade::{distance_to_transparent, fade_borders};
pub use warp::{warp_geometry, warp_template, Homography, PerspectiveJitter, WarpGeometry};

/// Smallest on-image sign size, in pixels, that the warp accepts.
pub const MIN_SCALE_PX: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum ImageOpError {
    #[error("alpha plane has {alpha} values, raster needs {expected}")]
    AlphaSizeMismatch { alpha: usize, expected: usize },
    #[error("alpha value {0} outside [0, 1]")]
    AlphaOutOfRange(f32),
    #[error("degenerate perspective quad: {0}")]
    DegenerateQuad(&'static str),
    #[error("target scale {0} px is below the {MIN_SCALE_PX} px minimum")]
    ScaleTooSmall(f64),
    #[error("box {bbox:?} does not fit inside {width}x{height}")]
    OutOfBounds {
        bbox: PixelBox,
        width: u32,
        height: u32,
    },
    #[error("region is empty")]
    EmptyRegion,
}

/// An RGB raster with a floating-point opacity plane of the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    rgb: RgbImage,
    alpha: Vec<f32>,
}

impl Layer {
    pub fn new(rgb: RgbImage, alpha: Vec<f32>) -> Result<Self, ImageOpError> {
        let expected = rgb.width() as usize * rgb.height() as usize;
        if alpha.len() != expected {
            return Err(ImageOpError::AlphaSizeMismatch {
                alpha: alpha.len(),
                expected,
            });
        }
        if let Some(&bad) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(ImageOpError::AlphaOutOfRange(bad));
        }
        Ok(Self { rgb, alpha })
    }

    /// Fully opaque layer.
    pub fn opaque(rgb: RgbImage) -> Self {
        let n = rgb.width() as usize * rgb.height() as usize;
        Self {
            rgb,
            alpha: vec![1.0; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }

    /// Larger of width and height.
    pub fn nominal_size(&self) -> u32 {
        self.width().max(self.height())
    }

    pub fn rgb(&self) -> &RgbImage {
        &self.rgb
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    pub fn alpha_at(&self, x: u32, y: u32) -> f32 {
        self.alpha[y as usize * self.width() as usize + x as usize]
    }

    pub fn into_parts(self) -> (RgbImage, Vec<f32>) {
        (self.rgb, self.alpha)
    }

    pub(crate) fn with_rgb(&self, rgb: RgbImage) -> Self {
        debug_assert_eq!(rgb.dimensions(), self.rgb.dimensions());
        Self {
            rgb,
            alpha: self.alpha.clone(),
        }
    }

    /// Number of pixels with non-zero opacity.
    pub fn visible_pixel_count(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > 0.0).count()
    }

    /// Tight box around pixels with non-zero opacity, in layer coordinates.
    pub fn alpha_bounds(&self) -> Option<PixelBox> {
        let w = self.width() as usize;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, &a) in self.alpha.iter().enumerate() {
            if a > 0.0 {
                let (x, y) = (i % w, i / w);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
        (x0 != usize::MAX).then(|| {
            PixelBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32)
        })
    }
}

#[inline]
pub(crate) fn saturate(v: f32) -> u8 {
    // `as` saturates and maps NaN to 0.
    v.round() as u8
}

fn apply_lut(img: &RgbImage, lut: &[u8; 256]) -> RgbImage {
    let mut out = img.clone();
    for v in out.iter_mut() {
        *v = lut[*v as usize];
    }
    out
}

fn lut_from(f: impl Fn(f32) -> f32) -> [u8; 256] {
    let mut lut = [0u8; 256];
    for (i, slot) in lut.iter_mut().enumerate() {
        *slot = saturate(f(i as f32));
    }
    lut
}

/// `v -> clamp(round(gain * v + offset))` on every channel.
pub fn adjust_brightness_contrast(img: &RgbImage, gain: f32, offset: f32) -> RgbImage {
    debug_assert!(gain > 0.0, "gain must be positive");
    apply_lut(img, &lut_from(|v| gain * v + offset))
}

/// Multiplies the template colours by the background gain; opacity is kept.
pub fn scale_gain_template(layer: &Layer, gain: f32) -> Layer {
    layer.with_rgb(apply_lut(layer.rgb(), &lut_from(|v| gain * v)))
}

/// Shifts template colours by `region_mean - constant`.
pub fn match_region_brightness(layer: &Layer, region_mean: f32, constant: f32) -> Layer {
    let shift = region_mean - constant;
    layer.with_rgb(apply_lut(layer.rgb(), &lut_from(|v| v + shift)))
}

/// Adds independent `U(-amplitude, amplitude)` noise to every colour value.
pub fn add_jitter<R: Rng + ?Sized>(layer: &Layer, amplitude: f32, rng: &mut R) -> Layer {
    if amplitude <= 0.0 {
        return layer.clone();
    }
    let mut rgb = layer.rgb().clone();
    for v in rgb.iter_mut() {
        let noise = rng.random_range(-amplitude..=amplitude);
        *v = saturate(*v as f32 + noise);
    }
    layer.with_rgb(rgb)
}

/// Alpha-blends `layer` onto `background` with its top-left corner at `(x, y)`.
pub fn composite(
    background: &mut RgbImage,
    layer: &Layer,
    x: u32,
    y: u32,
) -> Result<(), ImageOpError> {
    let region = PixelBox::new(x, y, layer.width(), layer.height());
    if !region.fits_within(background.width(), background.height()) {
        return Err(ImageOpError::OutOfBounds {
            bbox: region,
            width: background.width(),
            height: background.height(),
        });
    }
    let lw = layer.width() as usize;
    for (ly, row) in layer.rgb().rows().enumerate() {
        for (lx, px) in row.enumerate() {
            let a = layer.alpha[ly * lw + lx];
            if a <= 0.0 {
                continue;
            }
            let dst = background.get_pixel_mut(x + lx as u32, y + ly as u32);
            for c in 0..3 {
                let blended = a * px[c] as f32 + (1.0 - a) * dst[c] as f32;
                dst[c] = saturate(blended);
            }
        }
    }
    Ok(())
}

/// Mean over all channels and pixels inside `region`.
pub fn region_mean(img: &RgbImage, region: PixelBox) -> Result<f64, ImageOpError> {
    if region.is_empty() {
        return Err(ImageOpError::EmptyRegion);
    }
    if !region.fits_within(img.width(), img.height()) {
        return Err(ImageOpError::OutOfBounds {
            bbox: region,
            width: img.width(),
            height: img.height(),
        });
    }
    let stride = img.width() as usize * 3;
    let raw = img.as_raw();
    let mut sum = 0u64;
    for row in region.y..region.bottom() {
        let start = row as usize * stride + region.x as usize * 3;
        let end = start + region.w as usize * 3;
        sum += raw[start..end].iter().map(|&v| v as u64).sum::<u64>();
    }
    Ok(sum as f64 / (region.area() * 3) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant(w: u32, h: u32, v: u8) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([v, v, v]))
    }

    #[test]
    fn brightness_contrast_examples() {
        let img = constant(2, 2, 100);
        assert_eq!(adjust_brightness_contrast(&img, 1.0, 0.0), img);
        assert_eq!(
            adjust_brightness_contrast(&constant(1, 1, 200), 1.25, 120.0).get_pixel(0, 0)[0],
            255
        );
        assert_eq!(
            adjust_brightness_contrast(&img, 0.75, -120.0).get_pixel(0, 0)[0],
            0
        );
    }

    #[test]
    fn gain_template_examples() {
        let layer = Layer::opaque(constant(4, 4, 128));
        assert_eq!(scale_gain_template(&layer, 1.0), layer);
        let up = scale_gain_template(&layer, 1.25);
        assert!(up.rgb().iter().all(|&v| v == 160));
        assert_eq!(up.alpha(), layer.alpha());
    }

    #[test]
    fn gain_template_matches_scalar_loop() {
        let rgb = RgbImage::from_fn(13, 7, |x, y| {
            Rgb([(x * 19 + y * 7) as u8, (x * y * 3) as u8, (255 - x * 11) as u8])
        });
        let alpha: Vec<f32> = (0..13 * 7).map(|i| (i % 5) as f32 / 4.0).collect();
        let layer = Layer::new(rgb.clone(), alpha.clone()).unwrap();
        let out = scale_gain_template(&layer, 0.75);
        for (x, y, px) in rgb.enumerate_pixels() {
            for c in 0..3 {
                let expected = (0.75f64 * px[c] as f64).round().clamp(0.0, 255.0) as u8;
                assert_eq!(out.rgb().get_pixel(x, y)[c], expected);
            }
        }
        assert_eq!(out.alpha(), &alpha[..]);
    }

    #[test]
    fn region_brightness_examples() {
        let layer = Layer::opaque(constant(3, 3, 100));
        assert_eq!(match_region_brightness(&layer, 128.0, 128.0), layer);
        assert!(match_region_brightness(&layer, 200.0, 128.0)
            .rgb()
            .iter()
            .all(|&v| v == 172));
        let dark = Layer::opaque(constant(3, 3, 60));
        assert!(match_region_brightness(&dark, 20.0, 128.0)
            .rgb()
            .iter()
            .all(|&v| v == 0));
    }

    #[test]
    fn jitter_zero_is_identity() {
        let layer = Layer::opaque(constant(5, 5, 77));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_jitter(&layer, 0.0, &mut rng), layer);
    }

    #[test]
    fn jitter_moments_on_constant_template() {
        let layer = Layer::opaque(constant(100, 100, 128));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let out = add_jitter(&layer, 8.0, &mut rng);
        let mut sum = 0i64;
        for &v in out.rgb().iter() {
            let dev = v as i64 - 128;
            assert!((-8..=8).contains(&dev));
            sum += dev;
        }
        let mean = sum as f64 / out.rgb().len() as f64;
        assert!(mean.abs() <= 0.5, "mean deviation {mean}");
    }

    #[test]
    fn jitter_is_deterministic() {
        let layer = Layer::opaque(constant(20, 20, 128));
        let a = add_jitter(&layer, 8.0, &mut ChaCha8Rng::seed_from_u64(5));
        let b = add_jitter(&layer, 8.0, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn composite_examples() {
        let bg = constant(6, 6, 100);
        let tmpl = constant(2, 2, 200);

        let mut out = bg.clone();
        composite(&mut out, &Layer::new(tmpl.clone(), vec![0.0; 4]).unwrap(), 1, 1).unwrap();
        assert_eq!(out, bg);

        let mut out = bg.clone();
        composite(&mut out, &Layer::opaque(tmpl.clone()), 1, 1).unwrap();
        assert_eq!(out.get_pixel(1, 1)[0], 200);
        assert_eq!(out.get_pixel(2, 2)[0], 200);
        assert_eq!(out.get_pixel(3, 3)[0], 100);

        let mut out = bg.clone();
        composite(&mut out, &Layer::new(tmpl, vec![0.5; 4]).unwrap(), 4, 4).unwrap();
        assert_eq!(out.get_pixel(5, 5)[0], 150);
    }

    #[test]
    fn composite_rejects_out_of_bounds() {
        let mut bg = constant(6, 6, 0);
        let layer = Layer::opaque(constant(3, 3, 1));
        assert!(matches!(
            composite(&mut bg, &layer, 4, 0),
            Err(ImageOpError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn region_mean_examples() {
        assert_eq!(
            region_mean(&constant(8, 8, 77), PixelBox::new(1, 1, 4, 4)).unwrap(),
            77.0
        );
        let half = RgbImage::from_fn(4, 2, |x, _| if x < 2 { Rgb([0; 3]) } else { Rgb([255; 3]) });
        assert_eq!(region_mean(&half, PixelBox::new(0, 0, 4, 2)).unwrap(), 127.5);
        assert_eq!(
            region_mean(&half, PixelBox::new(0, 0, 0, 2)),
            Err(ImageOpError::EmptyRegion)
        );
    }

    #[test]
    fn region_mean_matches_naive_sum() {
        let img = RgbImage::from_fn(31, 17, |x, y| {
            Rgb([(x * 7 + y) as u8, (x ^ y) as u8 * 3, (x * y) as u8])
        });
        let region = PixelBox::new(3, 2, 20, 11);
        let mut sum = 0.0f64;
        for y in 2..13 {
            for x in 3..23 {
                for c in 0..3 {
                    sum += img.get_pixel(x, y)[c] as f64;
                }
            }
        }
        let naive = sum / (20.0 * 11.0 * 3.0);
        assert!((region_mean(&img, region).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn alpha_bounds_are_tight() {
        let mut alpha = vec![0.0; 10 * 8];
        alpha[2 * 10 + 3] = 0.1;
        alpha[6 * 10 + 7] = 1.0;
        let layer = Layer::new(constant(10, 8, 0), alpha).unwrap();
        assert_eq!(layer.alpha_bounds(), Some(PixelBox::new(3, 2, 5, 5)));
    }

    #[test]
    fn layer_rejects_bad_alpha() {
        assert!(Layer::new(constant(2, 2, 0), vec![0.0; 3]).is_err());
        assert!(Layer::new(constant(1, 1, 0), vec![1.5]).is_err());
    }

    proptest! {
        #[test]
        fn photometric_ops_saturate(v in any::<u8>(), gain in 0.01f32..50.0, offset in -1000f32..1000.0) {
            let img = constant(1, 1, v);
            let out = adjust_brightness_contrast(&img, gain, offset).get_pixel(0, 0)[0];
            let exact = (gain as f64 * v as f64 + offset as f64).round();
            if exact >= 256.0 { prop_assert_eq!(out, 255); }
            if exact <= -1.0 { prop_assert_eq!(out, 0); }
        }

        #[test]
        fn composite_is_convex(bg in any::<u8>(), fg in any::<u8>(), a in 0.0f32..=1.0) {
            let mut canvas = constant(1, 1, bg);
            let layer = Layer::new(constant(1, 1, fg), vec![a]).unwrap();
            composite(&mut canvas, &layer, 0, 0).unwrap();
            let out = canvas.get_pixel(0, 0)[0];
            prop_assert!(out >= bg.min(fg) && out <= bg.max(fg));
        }
    }
}
