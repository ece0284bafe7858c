//! Procedural source images for corpora without photographs.

use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Wave {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

struct Blob {
    cx: f64,
    cy: f64,
    inv_rx2: f64,
    inv_ry2: f64,
    color: [f64; 3],
    weight: f64,
}

fn waves(rng: &mut impl Rng, count: usize, periods: std::ops::Range<f64>, amps: std::ops::Range<f64>) -> Vec<Wave> {
    (0..count)
        .map(|_| {
            let period = rng.random_range(periods.clone());
            let dir = rng.random_range(0.0..PI);
            Wave {
                amp: rng.random_range(amps.clone()),
                fx: dir.cos() / period,
                fy: dir.sin() / period,
                phase: rng.random_range(-PI..PI),
            }
        })
        .collect()
}

fn blob(rng: &mut impl Rng, width: u32, height: u32, radii: std::ops::Range<f64>) -> Blob {
    let rx: f64 = rng.random_range(radii.clone());
    let ry: f64 = rng.random_range(radii);
    Blob {
        cx: rng.random_range(0.0..width as f64),
        cy: rng.random_range(0.0..height as f64),
        inv_rx2: 1.0 / (rx * rx),
        inv_ry2: 1.0 / (ry * ry),
        color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
        weight: rng.random_range(0.5..0.95),
    }
}

/// Deterministic textured image: per-channel sums of coarse and fine plane
/// waves over a per-image base color, overlaid with soft elliptical blobs
/// of large and small radius (about one small blob per 400 px²).
pub fn synthetic_image(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let channel_waves: Vec<Vec<Wave>> = (0..3)
        .map(|_| {
            let mut w = waves(&mut rng, 6, 30.0..260.0, 0.04..0.14);
            w.extend(waves(&mut rng, 3, 6.0..30.0, 0.03..0.08));
            w
        })
        .collect();
    let small = (width as usize * height as usize) / 400;
    let mut blobs: Vec<Blob> = (0..24).map(|_| blob(&mut rng, width, height, 8.0..60.0)).collect();
    blobs.extend((0..small).map(|_| blob(&mut rng, width, height, 2.5..10.0)));
    let (w, h) = (width as usize, height as usize);
    let mut buf: Vec<[f64; 3]> = (0..w * h)
        .map(|i| {
            let (xf, yf) = ((i % w) as f64, (i / w) as f64);
            std::array::from_fn(|k| {
                base[k]
                    + channel_waves[k]
                        .iter()
                        .map(|wv| wv.amp * (2.0 * PI * (wv.fx * xf + wv.fy * yf) + wv.phase).sin())
                        .sum::<f64>()
            })
        })
        .collect();
    // blobs composite in order; exp(-9) is below one gray level
    for b in &blobs {
        let (rx, ry) = (3.0 / b.inv_rx2.sqrt(), 3.0 / b.inv_ry2.sqrt());
        let x0 = (b.cx - rx).floor().max(0.0) as usize;
        let x1 = ((b.cx + rx).ceil() as usize).min(w.saturating_sub(1));
        let y0 = (b.cy - ry).floor().max(0.0) as usize;
        let y1 = ((b.cy + ry).ceil() as usize).min(h.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (dx, dy) = (x as f64 - b.cx, y as f64 - b.cy);
                let r2 = dx * dx * b.inv_rx2 + dy * dy * b.inv_ry2;
                if r2 < 9.0 {
                    let a = b.weight * (-r2).exp();
                    let c = &mut buf[y * w + x];
                    for k in 0..3 {
                        c[k] = c[k] * (1.0 - a) + b.color[k] * a;
                    }
                }
            }
        }
    }
    RgbImage::from_fn(width, height, |x, y| {
        let c = buf[y as usize * w + x as usize];
        Rgb(std::array::from_fn(|k| (c[k].clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}
