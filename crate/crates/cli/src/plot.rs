//! Scatter plot of 2-d coordinates as a PNG, one color per group.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const SIZE: u32 = 640;
const MARGIN: f64 = 24.0;
const RADIUS: i64 = 4;
const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

pub fn scatter(path: &Path, coords: &[[f64; 2]], groups: &[usize]) -> Result<()> {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in coords {
        for a in 0..2 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let span = (0..2).map(|a| (hi[a] - lo[a]).max(1e-12)).fold(0.0, f64::max);
    let scale = (SIZE as f64 - 2.0 * MARGIN) / span;
    for (c, &g) in coords.iter().zip(groups) {
        let px = (MARGIN + (c[0] - lo[0]) * scale).round() as i64;
        let py = (SIZE as f64 - MARGIN - (c[1] - lo[1]) * scale).round() as i64;
        let color = Rgb(PALETTE[g % PALETTE.len()]);
        for dy in -RADIUS..=RADIUS {
            for dx in -RADIUS..=RADIUS {
                let (x, y) = (px + dx, py + dy);
                if dx * dx + dy * dy <= RADIUS * RADIUS && (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
                    img.put_pixel(x as u32, y as u32, color);
                }
            }
        }
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}
