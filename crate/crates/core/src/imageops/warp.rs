//! Perspective, rotation and scale warps of template layers.
//!
//! Coordinates are continuous with pixel `(i, j)` covering `[i, i+1) x [j, j+1)`,
//! so a `w` x `h` raster spans the rectangle with corners `(0,0)` and `(w,h)`.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{saturate, ImageOpError, Layer, MIN_SCALE_PX};

const SNAP: f64 = 1e-6;

/// Projective 3x3 transform acting on `(x, y, 1)` column vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub [[f64; 3]; 3]);

impl Homography {
    pub const IDENTITY: Homography = Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn translation(dx: f64, dy: f64) -> Self {
        Homography([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])
    }

    pub fn scaling(k: f64) -> Self {
        Homography([[k, 0.0, 0.0], [0.0, k, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation by `degrees` about `(cx, cy)`. Quarter turns are exact.
    pub fn rotation(degrees: f64, cx: f64, cy: f64) -> Self {
        let (sin, cos) = exact_sin_cos(degrees);
        let rot = Homography([[cos, -sin, 0.0], [sin, cos, 0.0], [0.0, 0.0, 1.0]]);
        Homography::translation(cx, cy)
            .compose(&rot)
            .compose(&Homography::translation(-cx, -cy))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Homography {
        let (a, b) = (&self.0, &other.0);
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Homography(m)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }

    /// Maps the four `from` points onto the four `to` points.
    pub fn from_correspondences(
        from: &[[f64; 2]; 4],
        to: &[[f64; 2]; 4],
    ) -> Result<Homography, ImageOpError> {
        let mut a = [[0.0f64; 9]; 8];
        for i in 0..4 {
            let [x, y] = from[i];
            let [u, v] = to[i];
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        let h = solve8(a).ok_or(ImageOpError::DegenerateQuad("singular correspondence"))?;
        Ok(Homography([
            [h[0], h[1], h[2]],
            [h[3], h[4], h[5]],
            [h[6], h[7], 1.0],
        ]))
    }
}

fn exact_sin_cos(degrees: f64) -> (f64, f64) {
    let r = degrees.rem_euclid(360.0);
    match r {
        0.0 => (0.0, 1.0),
        90.0 => (1.0, 0.0),
        180.0 => (0.0, -1.0),
        270.0 => (-1.0, 0.0),
        _ => r.to_radians().sin_cos(),
    }
}

/// Gaussian elimination with partial pivoting on an 8x9 augmented system.
#[allow(clippy::needless_range_loop)]
fn solve8(mut a: [[f64; 9]; 8]) -> Option<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..9 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    let mut x = [0.0; 8];
    for (i, xi) in x.iter_mut().enumerate() {
        *xi = a[i][8] / a[i][i];
    }
    Some(x)
}

/// Per-corner displacement of the template rectangle, in source pixels.
/// Corners are ordered top-left, top-right, bottom-right, bottom-left.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerspectiveJitter {
    pub corner_offsets: [[f64; 2]; 4],
}

impl PerspectiveJitter {
    pub fn none() -> Self {
        Self::default()
    }

    /// Each offset is `U(-magnitude, magnitude)` times the matching side length.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, width: u32, height: u32, magnitude: f64) -> Self {
        let mut corner_offsets = [[0.0; 2]; 4];
        if magnitude > 0.0 {
            for offset in corner_offsets.iter_mut() {
                offset[0] = rng.random_range(-magnitude..=magnitude) * width as f64;
                offset[1] = rng.random_range(-magnitude..=magnitude) * height as f64;
            }
        }
        Self { corner_offsets }
    }

    pub fn is_identity(&self) -> bool {
        self.corner_offsets.iter().all(|o| o[0] == 0.0 && o[1] == 0.0)
    }

    /// The displaced corners of a `width` x `height` rectangle.
    pub fn quad(&self, width: f64, height: f64) -> [[f64; 2]; 4] {
        let base = rectangle(width, height);
        let mut quad = base;
        for (q, o) in quad.iter_mut().zip(&self.corner_offsets) {
            q[0] += o[0];
            q[1] += o[1];
        }
        quad
    }
}

fn rectangle(width: f64, height: f64) -> [[f64; 2]; 4] {
    [[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]]
}

fn check_convex(quad: &[[f64; 2]; 4]) -> Result<(), ImageOpError> {
    let mut sign = 0.0f64;
    for i in 0..4 {
        let [ax, ay] = quad[i];
        let [bx, by] = quad[(i + 1) % 4];
        let [cx, cy] = quad[(i + 2) % 4];
        let cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx);
        if cross.abs() < 1e-9 {
            return Err(ImageOpError::DegenerateQuad("collinear corners"));
        }
        if sign != 0.0 && cross.signum() != sign {
            return Err(ImageOpError::DegenerateQuad("quad is not convex"));
        }
        sign = cross.signum();
    }
    Ok(())
}

/// Where a warped template lands: transforms between source coordinates
/// and the output canvas, which is the tight integer box around the quad.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGeometry {
    /// Source coordinates to canvas coordinates.
    pub forward: Homography,
    /// Canvas coordinates to source coordinates.
    pub inverse: Homography,
    pub width: u32,
    pub height: u32,
    /// Transformed source corners in canvas coordinates.
    pub quad: [[f64; 2]; 4],
}

/// Builds the perspective → rotation → uniform-scale map for a
/// `src_w` x `src_h` template whose nominal size becomes `scale_px`.
pub fn warp_geometry(
    src_w: u32,
    src_h: u32,
    jitter: &PerspectiveJitter,
    theta_deg: f64,
    scale_px: f64,
) -> Result<WarpGeometry, ImageOpError> {
    if !(scale_px >= MIN_SCALE_PX) {
        return Err(ImageOpError::ScaleTooSmall(scale_px));
    }
    let (w, h) = (src_w as f64, src_h as f64);
    let rect = rectangle(w, h);
    let quad = jitter.quad(w, h);
    check_convex(&quad)?;

    let (persp, persp_inv) = if jitter.is_identity() {
        (Homography::IDENTITY, Homography::IDENTITY)
    } else {
        (
            Homography::from_correspondences(&rect, &quad)?,
            Homography::from_correspondences(&quad, &rect)?,
        )
    };
    let k = scale_px / w.max(h);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let placed = Homography::scaling(k)
        .compose(&Homography::rotation(theta_deg, cx, cy))
        .compose(&persp);

    let corners: Vec<(f64, f64)> = rect.iter().map(|&[x, y]| placed.apply(x, y)).collect();
    let min_x = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let max_x = corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let max_y = corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let (ox, oy) = ((min_x + SNAP).floor(), (min_y + SNAP).floor());
    let width = ((max_x - SNAP).ceil() - ox).max(1.0) as u32;
    let height = ((max_y - SNAP).ceil() - oy).max(1.0) as u32;

    let forward = Homography::translation(-ox, -oy).compose(&placed);
    let inverse = persp_inv
        .compose(&Homography::rotation(-theta_deg, cx, cy))
        .compose(&Homography::scaling(1.0 / k))
        .compose(&Homography::translation(ox, oy));
    let mut out_quad = [[0.0; 2]; 4];
    for (q, &(x, y)) in out_quad.iter_mut().zip(&corners) {
        *q = [x - ox, y - oy];
    }
    Ok(WarpGeometry {
        forward,
        inverse,
        width,
        height,
        quad: out_quad,
    })
}

/// Warps colour and opacity with bilinear sampling. Canvas pixels whose
/// centre falls outside the transformed quad are fully transparent.
pub fn warp_template(
    layer: &Layer,
    jitter: &PerspectiveJitter,
    theta_deg: f64,
    scale_px: f64,
) -> Result<Layer, ImageOpError> {
    let geom = warp_geometry(layer.width(), layer.height(), jitter, theta_deg, scale_px)?;
    let (sw, sh) = (layer.width() as i64, layer.height() as i64);
    let (fw, fh) = (sw as f64, sh as f64);
    let src = layer.rgb();
    let src_alpha = layer.alpha();

    let mut rgb = RgbImage::new(geom.width, geom.height);
    let mut alpha = vec![0.0f32; geom.width as usize * geom.height as usize];
    let m = &geom.inverse.0;

    for v in 0..geom.height {
        let cy = v as f64 + 0.5;
        for u in 0..geom.width {
            let cx = u as f64 + 0.5;
            let wh = m[2][0] * cx + m[2][1] * cy + m[2][2];
            if wh <= 0.0 {
                continue;
            }
            let sx = (m[0][0] * cx + m[0][1] * cy + m[0][2]) / wh;
            let sy = (m[1][0] * cx + m[1][1] * cy + m[1][2]) / wh;
            if !(0.0..=fw).contains(&sx) || !(0.0..=fh).contains(&sy) {
                continue;
            }
            let (fx, fy) = (sx - 0.5, sy - 0.5);
            let (x0, y0) = (fx.floor() as i64, fy.floor() as i64);
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let taps = [
                (x0, y0, (1.0 - tx) * (1.0 - ty)),
                (x0 + 1, y0, tx * (1.0 - ty)),
                (x0, y0 + 1, (1.0 - tx) * ty),
                (x0 + 1, y0 + 1, tx * ty),
            ];
            let mut acc = [0.0f64; 3];
            let mut a = 0.0f64;
            for (x, y, wgt) in taps {
                if wgt == 0.0 {
                    continue;
                }
                let (cxs, cys) = (x.clamp(0, sw - 1) as u32, y.clamp(0, sh - 1) as u32);
                let px = src.get_pixel(cxs, cys);
                for c in 0..3 {
                    acc[c] += wgt * px[c] as f64;
                }
                if x >= 0 && y >= 0 && x < sw && y < sh {
                    a += wgt * src_alpha[(y * sw + x) as usize] as f64;
                }
            }
            let out = rgb.get_pixel_mut(u, v);
            for c in 0..3 {
                out[c] = saturate(acc[c] as f32);
            }
            alpha[v as usize * geom.width as usize + u as usize] = a.clamp(0.0, 1.0) as f32;
        }
    }
    Layer::new(rgb, alpha)
}
