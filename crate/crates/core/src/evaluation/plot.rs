//! Minimal raster plots: axes, polylines and bars, no text.

use image::{Rgb, RgbImage};

use super::{Histogram, RocCurve};

const SIZE: u32 = 400;
const MARGIN: u32 = 30;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([220, 220, 220]);
const HEALTHY: Rgb<u8> = Rgb([40, 110, 200]);
const ANOMALOUS: Rgb<u8> = Rgb([210, 60, 40]);

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new() -> Self {
        let mut c = Canvas {
            img: RgbImage::from_pixel(SIZE, SIZE, WHITE),
        };
        for k in 1..10 {
            let t = k as f64 / 10.0;
            c.line((t, 0.0), (t, 1.0), GRID);
            c.line((0.0, t), (1.0, t), GRID);
        }
        c.line((0.0, 0.0), (1.0, 0.0), AXIS);
        c.line((0.0, 0.0), (0.0, 1.0), AXIS);
        c
    }

    /// Unit square to pixel coordinates, y up.
    fn to_px(&self, (x, y): (f64, f64)) -> (i64, i64) {
        let span = (SIZE - 2 * MARGIN) as f64;
        (
            MARGIN as i64 + (x.clamp(0.0, 1.0) * span).round() as i64,
            (SIZE - MARGIN) as i64 - (y.clamp(0.0, 1.0) * span).round() as i64,
        )
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < SIZE && (y as u32) < SIZE {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
        let ((mut x0, mut y0), (x1, y1)) = (self.to_px(a), self.to_px(b));
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn thick_polyline(&mut self, pts: &[(f64, f64)], c: Rgb<u8>) {
        let px = 1.0 / (SIZE - 2 * MARGIN) as f64;
        for w in pts.windows(2) {
            for off in [-px, 0.0, px] {
                self.line((w[0].0, w[0].1 + off), (w[1].0, w[1].1 + off), c);
            }
        }
    }
}

pub(crate) fn draw_roc(curve: &RocCurve) -> RgbImage {
    let mut c = Canvas::new();
    c.line((0.0, 0.0), (1.0, 1.0), GRID);
    let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
    c.thick_polyline(&pts, ANOMALOUS);
    c.img
}

/// Both class densities as outlined step curves over the shared bins.
pub(crate) fn draw_histogram(h: &Histogram) -> RgbImage {
    let mut c = Canvas::new();
    let (dh, da) = (h.density(false), h.density(true));
    let top = dh.iter().chain(&da).copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let bins = dh.len() as f64;
    for (dens, color) in [(&dh, HEALTHY), (&da, ANOMALOUS)] {
        let mut pts = vec![(0.0, 0.0)];
        for (i, d) in dens.iter().enumerate() {
            let y = d / top;
            pts.push((i as f64 / bins, y));
            pts.push(((i + 1) as f64 / bins, y));
        }
        pts.push((1.0, 0.0));
        c.thick_polyline(&pts, color);
    }
    c.img
}
