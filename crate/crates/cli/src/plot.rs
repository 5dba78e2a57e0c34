//! Minimal line charts: one or more panels side by side, series drawn as
//! coloured polylines on a white background with a light frame. There is no
//! text; the CSV next to each image carries the numbers.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const PANEL_W: u32 = 360;
const PANEL_H: u32 = 260;
const PAD: u32 = 20;

const COLOURS: [[u8; 3]; 8] = [
    [0, 0, 0],
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
    [127, 127, 127],
];

/// Points of one curve; non-finite values break the line.
pub type Series = Vec<(f64, f64)>;

#[derive(Default)]
pub struct Panel {
    pub series: Vec<Series>,
    /// Fixed y range; fitted to the data when `None`.
    pub y_range: Option<(f64, f64)>,
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts = panel.series.iter().flatten().filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if let Some((a, b)) = panel.y_range {
        y0 = a;
        y1 = b;
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    (x0, x1, y0, y1)
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (a.0 + t * (b.0 - a.0)).round();
        let y = (a.1 + t * (b.1 - a.1)).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}

pub fn line_chart(path: &Path, panels: &[Panel]) -> Result<()> {
    let n = panels.len().max(1) as u32;
    let mut img = RgbImage::from_pixel(n * PANEL_W, PANEL_H, Rgb([255, 255, 255]));
    let frame = Rgb([200, 200, 200]);
    for (k, panel) in panels.iter().enumerate() {
        let left = k as u32 * PANEL_W + PAD;
        let (w, h) = ((PANEL_W - 2 * PAD) as f64, (PANEL_H - 2 * PAD) as f64);
        let (l, t) = (left as f64, PAD as f64);
        for (a, b) in [((l, t), (l + w, t)), ((l + w, t), (l + w, t + h)), ((l, t + h), (l + w, t + h)), ((l, t), (l, t + h))] {
            line(&mut img, a, b, frame);
        }
        let (x0, x1, y0, y1) = bounds(panel);
        let map = |p: (f64, f64)| (l + (p.0 - x0) / (x1 - x0) * w, t + h - (p.1.clamp(y0, y1) - y0) / (y1 - y0) * h);
        for (i, s) in panel.series.iter().enumerate() {
            let c = Rgb(COLOURS[i % COLOURS.len()]);
            for pair in s.windows(2) {
                let ok = |p: &(f64, f64)| p.0.is_finite() && p.1.is_finite();
                if ok(&pair[0]) && ok(&pair[1]) {
                    line(&mut img, map(pair[0]), map(pair[1]), c);
                }
            }
        }
    }
    img.save(path).with_context(|| format!("writing plot {}", path.display()))
}
