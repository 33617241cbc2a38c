//! Minimal line-chart rasterizer (axes, grid, polylines, point markers).
//! Text is left out; series colours are documented where charts are emitted.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const MARGIN: i64 = 40;

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        put(img, x, y + 1, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draw each `(points, colour)` series on shared axes and save as PNG.
/// The y range always includes 0.
pub fn render_line_chart(
    path: &Path,
    series: &[(Vec<(f64, f64)>, [u8; 3])],
    width: u32,
    height: u32,
) -> Result<()> {
    let pts = series.iter().flat_map(|(p, _)| p.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::MAX, f64::MIN, 0.0f64, f64::MIN);
    for &(x, y) in pts {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if x_lo > x_hi {
        return Err(Error::Contract("chart needs at least one point".into()));
    }
    if x_hi == x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi <= y_lo {
        y_hi = y_lo + 1.0;
    }
    let (w, h) = (width as i64, height as i64);
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = MARGIN + ((x - x_lo) / (x_hi - x_lo) * (w - 2 * MARGIN) as f64).round() as i64;
        let py = h - MARGIN - ((y - y_lo) / (y_hi - y_lo) * (h - 2 * MARGIN) as f64).round() as i64;
        (px, py)
    };

    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    for k in 0..=4 {
        let gy = h - MARGIN - k * (h - 2 * MARGIN) / 4;
        line(&mut img, (MARGIN, gy), (w - MARGIN, gy), [225, 225, 225]);
    }
    line(
        &mut img,
        (MARGIN, h - MARGIN),
        (w - MARGIN, h - MARGIN),
        [60, 60, 60],
    );
    line(
        &mut img,
        (MARGIN, MARGIN),
        (MARGIN, h - MARGIN),
        [60, 60, 60],
    );
    for (points, colour) in series {
        let px: Vec<(i64, i64)> = points.iter().map(|&(x, y)| to_px(x, y)).collect();
        for pair in px.windows(2) {
            line(&mut img, pair[0], pair[1], *colour);
        }
        for &(x, y) in &px {
            for d in -2..=2 {
                for e in -2..=2 {
                    put(&mut img, x + d, y + e, *colour);
                }
            }
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}
