//! One training sample: photometric jitter of the background, template
//! transforms, non-overlapping placement with stacking, and final blur.

use image::{GrayImage, Luma, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::GenerationConfig;
use super::plan::{uniform, PlannedSign};
use super::SynthError;
use crate::bbox::PixelBox;
use crate::catalog::Catalog;
use crate::imageops::{
    add_jitter, adjust_brightness_contrast, composite, fade_borders, gaussian_blur,
    match_region_brightness, region_mean, scale_gain_template, warp_template, Layer,
    PerspectiveJitter,
};

/// Parameters actually applied to one sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub gain: f64,
    pub theta_deg: f64,
    pub scale_px: f64,
    pub corner_offsets: [[f64; 2]; 4],
    pub region_mean: f64,
}

/// A composited sign and its annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedSign {
    pub class_id: u32,
    /// Tight box around the sign's visible pixels.
    pub bbox: PixelBox,
    pub transform: TransformRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image: RgbImage,
    pub signs: Vec<PlacedSign>,
    pub master_seed: u64,
    pub sample_index: u64,
    pub background_index: usize,
    pub background_gain: f64,
    pub background_offset: f64,
    pub blur_sigma: f64,
    /// Per pixel, the 1-based position in `signs` of the sign whose opacity
    /// is non-zero there, or 0.
    pub coverage: GrayImage,
}

struct PreparedSign {
    plan: PlannedSign,
    layer: Layer,
    theta_deg: f64,
    jitter: PerspectiveJitter,
    /// Offset inside the group box.
    dx: u32,
    dy: u32,
}

/// Signs that are placed together (a stack, or a single free sign).
struct Group {
    signs: Vec<PreparedSign>,
    width: u32,
    height: u32,
}

fn prepare_sign<R: Rng + ?Sized>(
    plan: PlannedSign,
    gain: f64,
    rng: &mut R,
    config: &GenerationConfig,
    catalog: &Catalog,
) -> Result<PreparedSign, SynthError> {
    let template = catalog
        .get(plan.class_id)
        .ok_or(SynthError::UnknownClass(plan.class_id))?;
    let scaled = scale_gain_template(&template.layer, gain as f32);
    let jitter = PerspectiveJitter::sample(rng, scaled.width(), scaled.height(), config.perspective_p);
    let theta_deg = uniform(rng, config.rotation_range);
    let (layer, jitter) = match warp_template(&scaled, &jitter, theta_deg, plan.scale_px) {
        Ok(layer) => (layer, jitter),
        // Extreme corner draws can fold the quad; fall back to no perspective.
        Err(_) => {
            let none = PerspectiveJitter::none();
            (warp_template(&scaled, &none, theta_deg, plan.scale_px)?, none)
        }
    };
    Ok(PreparedSign {
        plan,
        layer,
        theta_deg,
        jitter,
        dx: 0,
        dy: 0,
    })
}

fn layout_group<R: Rng + ?Sized>(mut signs: Vec<PreparedSign>, rng: &mut R, gap_frac: f64) -> Group {
    let width = signs.iter().map(|s| s.layer.width()).max().unwrap_or(0);
    let mut y = 0u32;
    for i in 0..signs.len() {
        if i > 0 {
            let above = signs[i - 1].layer.height() as f64;
            y += (uniform(rng, [0.0, gap_frac]) * above).floor() as u32;
        }
        let s = &mut signs[i];
        s.dx = (width - s.layer.width()) / 2;
        s.dy = y;
        y += s.layer.height();
    }
    Group {
        signs,
        width,
        height: y,
    }
}

/// Rejection-samples a top-left corner for a `w` x `h` box that overlaps none
/// of `taken`.
fn find_position<R: Rng + ?Sized>(
    rng: &mut R,
    (w, h): (u32, u32),
    (canvas_w, canvas_h): (u32, u32),
    taken: &[PixelBox],
    attempts: u32,
) -> Option<(u32, u32)> {
    if w == 0 || h == 0 || w > canvas_w || h > canvas_h {
        return None;
    }
    for _ in 0..attempts {
        let x = rng.random_range(0..=canvas_w - w);
        let y = rng.random_range(0..=canvas_h - h);
        let candidate = PixelBox::new(x, y, w, h);
        if taken.iter().all(|t| t.intersection_area(&candidate) == 0) {
            return Some((x, y));
        }
    }
    None
}

fn place_groups<R: Rng + ?Sized>(
    groups: &[Group],
    rng: &mut R,
    canvas: (u32, u32),
    attempts: u32,
) -> Vec<Option<(u32, u32)>> {
    let mut taken = Vec::new();
    groups
        .iter()
        .map(|g| {
            let pos = find_position(rng, (g.width, g.height), canvas, &taken, attempts);
            if let Some((x, y)) = pos {
                taken.push(PixelBox::new(x, y, g.width, g.height));
            }
            pos
        })
        .collect()
}

/// Runs the full blending pipeline for one sample.
///
/// Groups that find no free spot within the attempt budget are dropped. If
/// nothing fits, positions are drawn once more before giving up.
pub fn synthesize_sample<R: Rng + ?Sized>(
    background: &RgbImage,
    plan: &[PlannedSign],
    rng: &mut R,
    config: &GenerationConfig,
    catalog: &Catalog,
) -> Result<SyntheticSample, SynthError> {
    let (_, max_size) = config.sizes()?;
    let gain = uniform(rng, config.gain_range);
    let offset = uniform(rng, config.offset_range);
    let mut canvas = adjust_brightness_contrast(background, gain as f32, offset as f32);
    let dims = canvas.dimensions();

    let mut groups: Vec<Group> = Vec::new();
    let mut pending: Vec<PreparedSign> = Vec::new();
    for &p in plan {
        if !p.stacked_below_previous && !pending.is_empty() {
            groups.push(layout_group(std::mem::take(&mut pending), rng, config.stack_gap_frac));
        }
        pending.push(prepare_sign(p, gain, rng, config, catalog)?);
    }
    if !pending.is_empty() {
        groups.push(layout_group(pending, rng, config.stack_gap_frac));
    }

    let mut positions = place_groups(&groups, rng, dims, config.placement_attempts);
    if !groups.is_empty() && positions.iter().all(Option::is_none) {
        positions = place_groups(&groups, rng, dims, config.placement_attempts);
    }
    if positions.iter().all(Option::is_none) {
        return Err(SynthError::PlacementExhausted);
    }

    let mut coverage = GrayImage::new(dims.0, dims.1);
    let mut signs = Vec::new();
    let mut largest_scale = 0.0f64;
    for (group, pos) in groups.iter().zip(&positions) {
        let Some((gx, gy)) = *pos else { continue };
        for s in &group.signs {
            let (x, y) = (gx + s.dx, gy + s.dy);
            let footprint = PixelBox::new(x, y, s.layer.width(), s.layer.height());
            let mean = region_mean(&canvas, footprint)?;
            let layer = match_region_brightness(&s.layer, mean as f32, config.brightness_constant as f32);
            let layer = add_jitter(&layer, config.jitter_amplitude as f32, rng);
            let layer = fade_borders(&layer, config.fade_frac as f32);
            let Some(visible) = layer.alpha_bounds() else { continue };
            composite(&mut canvas, &layer, x, y)?;

            let ordinal = u8::try_from(signs.len() + 1).expect("at most five signs");
            for ly in 0..layer.height() {
                for lx in 0..layer.width() {
                    if layer.alpha_at(lx, ly) > 0.0 {
                        coverage.put_pixel(x + lx, y + ly, Luma([ordinal]));
                    }
                }
            }
            largest_scale = largest_scale.max(s.plan.scale_px);
            signs.push(PlacedSign {
                class_id: s.plan.class_id,
                bbox: PixelBox::new(x + visible.x, y + visible.y, visible.w, visible.h),
                transform: TransformRecord {
                    gain,
                    theta_deg: s.theta_deg,
                    scale_px: s.plan.scale_px,
                    corner_offsets: s.jitter.corner_offsets,
                    region_mean: mean,
                },
            });
        }
    }
    if signs.is_empty() {
        return Err(SynthError::PlacementExhausted);
    }

    let blur_bound = if config.blur_relative_to_size {
        config.blur_max_coeff * largest_scale / max_size as f64
    } else {
        config.blur_max_coeff
    };
    let blur_sigma = uniform(rng, [0.0, blur_bound]);
    let image = gaussian_blur(&canvas, blur_sigma as f32);

    Ok(SyntheticSample {
        image,
        signs,
        master_seed: config.master_seed,
        sample_index: 0,
        background_index: 0,
        background_gain: gain,
        background_offset: offset,
        blur_sigma,
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Template;
    use crate::synth::plan::derive_sample_rng;
    use image::Rgb;

    fn disc_template(class_id: u32, n: u32) -> Template {
        let c = n as f64 / 2.0;
        let rgb = RgbImage::from_fn(n, n, |x, y| Rgb([(x * 9) as u8, 40 + class_id as u8, (y * 5) as u8]));
        let alpha = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64 + 0.5, (i / n) as f64 + 0.5);
                if (x - c).hypot(y - c) <= c { 1.0 } else { 0.0 }
            })
            .collect();
        Template {
            class_id,
            name: format!("disc{class_id}"),
            layer: Layer::new(rgb, alpha).unwrap(),
        }
    }

    fn catalog(m: u32, n: u32) -> Catalog {
        Catalog::from_templates((1..=m).map(|c| disc_template(c, n)).collect()).unwrap()
    }

    fn noisy_background(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 + y) as u8, (x ^ y) as u8, (x * y % 251) as u8]))
    }

    #[test]
    fn all_randomness_disabled_pastes_raw_template() {
        let mut config = GenerationConfig::with_size_range(32, 32);
        config.gain_range = [1.0, 1.0];
        config.offset_range = [0.0, 0.0];
        config.rotation_range = [0.0, 0.0];
        config.perspective_p = 0.0;
        config.jitter_amplitude = 0.0;
        config.fade_frac = 0.0;
        config.blur_max_coeff = 0.0;
        let cat = catalog(1, 32);
        // Mid-grey background so the local brightness shift is zero.
        let bg = RgbImage::from_pixel(200, 150, Rgb([128, 128, 128]));
        let plan = [PlannedSign { class_id: 1, scale_px: 32.0, stacked_below_previous: false }];
        let sample = synthesize_sample(&bg, &plan, &mut derive_sample_rng(5, 0), &config, &cat).unwrap();
        assert_eq!(sample.signs.len(), 1);
        let b = sample.signs[0].bbox;
        assert_eq!((b.w, b.h), (32, 32));

        let mut expected = bg.clone();
        composite(&mut expected, &cat.get(1).unwrap().layer, b.x, b.y).unwrap();
        assert_eq!(sample.image, expected);
    }

    #[test]
    fn same_stream_same_sample() {
        let config = GenerationConfig::with_size_range(16, 48);
        let cat = catalog(3, 40);
        let bg = noisy_background(300, 300);
        let plan = [
            PlannedSign { class_id: 1, scale_px: 30.0, stacked_below_previous: false },
            PlannedSign { class_id: 2, scale_px: 20.0, stacked_below_previous: true },
            PlannedSign { class_id: 3, scale_px: 40.0, stacked_below_previous: false },
        ];
        let a = synthesize_sample(&bg, &plan, &mut derive_sample_rng(9, 4), &config, &cat).unwrap();
        let b = synthesize_sample(&bg, &plan, &mut derive_sample_rng(9, 4), &config, &cat).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stacked_signs_hang_below_with_shared_centre() {
        let mut config = GenerationConfig::with_size_range(24, 48);
        config.fade_frac = 0.0;
        config.rotation_range = [0.0, 0.0];
        config.perspective_p = 0.0;
        let cat = catalog(3, 40);
        let bg = noisy_background(400, 400);
        let plan = [
            PlannedSign { class_id: 1, scale_px: 40.0, stacked_below_previous: false },
            PlannedSign { class_id: 2, scale_px: 30.0, stacked_below_previous: true },
            PlannedSign { class_id: 3, scale_px: 25.0, stacked_below_previous: true },
        ];
        for seed in 0..20 {
            let s = synthesize_sample(&bg, &plan, &mut derive_sample_rng(seed, 0), &config, &cat).unwrap();
            assert_eq!(s.signs.len(), 3);
            for pair in s.signs.windows(2) {
                let (a, b) = (pair[0].bbox, pair[1].bbox);
                let ca = a.x as f64 + a.w as f64 / 2.0;
                let cb = b.x as f64 + b.w as f64 / 2.0;
                assert!((ca - cb).abs() <= 1.0, "centres {ca} {cb}");
                assert!(b.y >= a.y + a.h);
            }
        }
    }

    #[test]
    fn oversized_groups_are_dropped_or_fail() {
        let config = GenerationConfig::with_size_range(100, 100);
        let cat = catalog(1, 40);
        let bg = noisy_background(60, 60);
        let plan = [PlannedSign { class_id: 1, scale_px: 100.0, stacked_below_previous: false }];
        let err = synthesize_sample(&bg, &plan, &mut derive_sample_rng(1, 0), &config, &cat).unwrap_err();
        assert!(matches!(err, SynthError::PlacementExhausted));
    }

    #[test]
    fn boxes_never_overlap_and_cover_alpha() {
        let config = GenerationConfig::with_size_range(20, 80);
        let cat = catalog(4, 64);
        let bg = noisy_background(320, 240);
        for idx in 0..40 {
            let mut rng = derive_sample_rng(77, idx);
            let plan = crate::synth::plan_placements(&mut rng, &config, &cat);
            let Ok(s) = synthesize_sample(&bg, &plan, &mut rng, &config, &cat) else { continue };
            for (i, a) in s.signs.iter().enumerate() {
                assert!(a.bbox.fits_within(320, 240));
                for b in &s.signs[i + 1..] {
                    assert_eq!(a.bbox.intersection_area(&b.bbox), 0);
                }
                let ordinal = (i + 1) as u8;
                let mut tight: Option<PixelBox> = None;
                for (x, y, p) in s.coverage.enumerate_pixels() {
                    if p[0] == ordinal {
                        let t = tight.get_or_insert(PixelBox::new(x, y, 1, 1));
                        let (x0, y0) = (t.x.min(x), t.y.min(y));
                        let (x1, y1) = (t.right().max(x + 1), t.bottom().max(y + 1));
                        *t = PixelBox::new(x0, y0, x1 - x0, y1 - y0);
                    }
                }
                assert_eq!(tight, Some(a.bbox));
            }
        }
    }
}
