use super::Layer;

const FAR: f64 = 1e20;

/// Squared 1-D distance transform of a sampled function (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let parabola_cut = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64)
    };
    for q in 1..n {
        let mut s = parabola_cut(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola_cut(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *slot = d * d + f[v[k]];
    }
}

/// Euclidean distance from every visible (alpha > 0) pixel centre to the
/// nearest transparent pixel centre; pixels beyond the canvas count as
/// transparent. Transparent pixels get 0.
pub fn distance_to_transparent(layer: &Layer) -> Vec<f64> {
    let (w, h) = (layer.width() as usize, layer.height() as usize);
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if layer.alpha()[y * w + x] > 0.0 {
                grid[(y + 1) * pw + x + 1] = FAR;
            }
        }
    }

    let longest = pw.max(ph);
    let mut f = vec![0.0; longest];
    let mut d = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];

    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        edt_1d(&f[..ph], &mut d[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = d[y];
        }
    }
    for y in 0..ph {
        let row = &mut grid[y * pw..(y + 1) * pw];
        f[..pw].copy_from_slice(row);
        edt_1d(&f[..pw], &mut d[..pw], &mut v, &mut z);
        row.copy_from_slice(&d[..pw]);
    }

    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = grid[(y + 1) * pw + x + 1].sqrt();
        }
    }
    out
}

/// Multiplies opacity by a linear ramp that is 0 on the outermost visible
/// pixels and reaches 1 at `fade_frac * nominal_size` pixels inward.
pub fn fade_borders(layer: &Layer, fade_frac: f32) -> Layer {
    let band = fade_frac as f64 * layer.nominal_size() as f64;
    if band <= 0.0 {
        return layer.clone();
    }
    let dist = distance_to_transparent(layer);
    let alpha = layer
        .alpha()
        .iter()
        .zip(&dist)
        .map(|(&a, &d)| {
            // Pixels touching transparency sit at distance 1.
            let ramp = ((d - 1.0) / band).clamp(0.0, 1.0);
            (a as f64 * ramp) as f32
        })
        .collect();
    Layer::new(layer.rgb().clone(), alpha).expect("ramp keeps alpha in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn disc(n: u32, radius: f64) -> Layer {
        let c = n as f64 / 2.0;
        let alpha = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64 + 0.5, (i / n) as f64 + 0.5);
                if (x - c).hypot(y - c) <= radius {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Layer::new(RgbImage::from_pixel(n, n, Rgb([200, 0, 0])), alpha).unwrap()
    }

    fn brute_force_distance(layer: &Layer) -> Vec<f64> {
        let (w, h) = (layer.width() as i64, layer.height() as i64);
        let mut outside = Vec::new();
        for y in -1..=h {
            for x in -1..=w {
                let inside = x >= 0 && y >= 0 && x < w && y < h;
                if !inside || layer.alpha_at(x as u32, y as u32) <= 0.0 {
                    outside.push((x, y));
                }
            }
        }
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if layer.alpha_at(x as u32, y as u32) <= 0.0 {
                    out.push(0.0);
                    continue;
                }
                let best = outside
                    .iter()
                    .map(|&(ox, oy)| (((ox - x).pow(2) + (oy - y).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min);
                out.push(best);
            }
        }
        out
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        for layer in [disc(23, 9.3), disc(16, 8.0), Layer::opaque(RgbImage::new(7, 12))] {
            let fast = distance_to_transparent(&layer);
            let slow = brute_force_distance(&layer);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_fade_is_identity() {
        let layer = disc(32, 12.0);
        assert_eq!(fade_borders(&layer, 0.0), layer);
    }

    #[test]
    fn disc_centre_stays_opaque() {
        let layer = disc(128, 60.0);
        let faded = fade_borders(&layer, 0.08);
        assert_eq!(faded.alpha_at(64, 64), 1.0);
        assert_eq!(faded.rgb(), layer.rgb());
    }

    #[test]
    fn square_fade_follows_distance_ramp() {
        let layer = Layer::opaque(RgbImage::from_pixel(100, 100, Rgb([9, 9, 9])));
        let faded = fade_borders(&layer, 0.1);
        // Pixel five steps in from the left edge, mid-height.
        let a = faded.alpha_at(5, 50);
        assert!((a - 0.5).abs() <= 0.05, "alpha {a}");
        // Every pixel agrees with the geometric distance oracle.
        for y in 0..100u32 {
            for x in 0..100u32 {
                let d = x.min(y).min(99 - x).min(99 - y) as f64;
                let expected = (d / 10.0).min(1.0);
                assert!((faded.alpha_at(x, y) as f64 - expected).abs() < 1e-6);
            }
        }
    }
}
