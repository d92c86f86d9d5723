use image::RgbImage;

use super::saturate;

/// Normalized 1-D Gaussian taps for `sigma`, radius `ceil(3 * sigma)`.
///
/// Returns a single unit tap when `sigma` is zero.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let sigma = sigma as f64;
    let radius = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / denom).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| (w / total) as f32).collect()
}

/// Separable Gaussian blur of an interleaved `channels`-plane float buffer
/// with clamp-to-edge borders.
pub fn gaussian_blur_plane(
    data: &[f32],
    width: usize,
    height: usize,
    channels: usize,
    sigma: f32,
) -> Vec<f32> {
    assert_eq!(data.len(), width * height * channels);
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 || width == 0 || height == 0 {
        return data.to_vec();
    }
    let radius = kernel.len() / 2;
    let stride = width * channels;

    // Horizontal pass into a scratch buffer.
    let mut horizontal = vec![0.0f32; data.len()];
    let mut padded = vec![0.0f32; (width + 2 * radius) * channels];
    for (src_row, dst_row) in data.chunks_exact(stride).zip(horizontal.chunks_exact_mut(stride)) {
        let first = &src_row[..channels];
        let last = &src_row[stride - channels..];
        for p in 0..radius {
            padded[p * channels..(p + 1) * channels].copy_from_slice(first);
            let q = radius + width + p;
            padded[q * channels..(q + 1) * channels].copy_from_slice(last);
        }
        padded[radius * channels..(radius + width) * channels].copy_from_slice(src_row);
        for (k, &w) in kernel.iter().enumerate() {
            let src = &padded[k * channels..k * channels + stride];
            for (d, &s) in dst_row.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }

    // Vertical pass: each output row accumulates whole source rows.
    let mut out = vec![0.0f32; data.len()];
    for (y, dst_row) in out.chunks_exact_mut(stride).enumerate() {
        for (k, &w) in kernel.iter().enumerate() {
            let sy = (y + k).saturating_sub(radius).min(height - 1);
            let src = &horizontal[sy * stride..(sy + 1) * stride];
            for (d, &s) in dst_row.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}

/// Gaussian blur of an 8-bit RGB image; `sigma == 0` returns the input.
pub fn gaussian_blur(img: &RgbImage, sigma: f32) -> RgbImage {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let (width, height) = (w as usize, h as usize);
    let radius = kernel.len() / 2;
    let stride = width * 3;
    let src = img.as_raw();
    let taps = kernel.len();

    // Each source row is converted and filtered horizontally once into a
    // ring of `taps` rows; output rows then combine the ring vertically.
    let mut ring = vec![0.0f32; taps * stride];
    let mut padded = vec![0.0f32; (width + 2 * radius) * 3];
    let mut filter_row = |sy: usize, out: &mut [f32]| {
        let row = &src[sy * stride..(sy + 1) * stride];
        for (d, &s) in padded[radius * 3..(radius + width) * 3].iter_mut().zip(row) {
            *d = s as f32;
        }
        let (first, last) = (radius * 3, (radius + width - 1) * 3);
        for p in 0..radius {
            padded.copy_within(first..first + 3, p * 3);
            padded.copy_within(last..last + 3, (radius + width + p) * 3);
        }
        out.fill(0.0);
        for (k, &wt) in kernel.iter().enumerate() {
            for (d, &s) in out.iter_mut().zip(&padded[k * 3..k * 3 + stride]) {
                *d += wt * s;
            }
        }
    };
    // Ring slot of unclamped source row `j` (which ranges over -radius..).
    let slot = |j: isize| (j + radius as isize).rem_euclid(taps as isize) as usize;
    let clamp_row = |j: isize| j.clamp(0, height as isize - 1) as usize;
    for j in -(radius as isize)..radius as isize {
        filter_row(clamp_row(j), &mut ring[slot(j) * stride..(slot(j) + 1) * stride]);
    }

    let mut raw = vec![0u8; src.len()];
    let mut acc = vec![0.0f32; stride];
    for (y, dst) in raw.chunks_exact_mut(stride).enumerate() {
        let newest = (y + radius) as isize;
        filter_row(clamp_row(newest), &mut ring[slot(newest) * stride..(slot(newest) + 1) * stride]);
        acc.fill(0.0);
        for (k, &wt) in kernel.iter().enumerate() {
            let s = slot(y as isize - radius as isize + k as isize);
            for (d, &v) in acc.iter_mut().zip(&ring[s * stride..(s + 1) * stride]) {
                *d += wt * v;
            }
        }
        for (d, &v) in dst.iter_mut().zip(&acc) {
            *d = saturate(v);
        }
    }
    RgbImage::from_raw(w, h, raw).expect("buffer size preserved")
}
