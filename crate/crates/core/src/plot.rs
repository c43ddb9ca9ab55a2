//! Minimal deterministic SVG charts and BEV overlay images.

use std::fmt::Write as _;

use image::{Rgb, RgbImage};

use crate::geometry::{Box3D, GridSpec};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_max(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if m * mag >= v {
            return m * mag;
        }
    }
    10.0 * mag
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (LEFT + W - RIGHT) / 2.0, H - 12.0, esc(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        esc(ylabel)
    );
}

fn y_axis(out: &mut String, y_max: f64) {
    let (x0, x1) = (LEFT, W - RIGHT);
    for k in 0..=5 {
        let v = y_max * k as f64 / 5.0;
        let y = H - BOTTOM - (H - TOP - BOTTOM) * k as f64 / 5.0;
        let _ = writeln!(out, r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/>"##);
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, trim(v));
    }
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{}" x2="{x0}" y2="{}" stroke="black"/>"#, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{}" x2="{x1}" y2="{}" stroke="black"/>"#, H - BOTTOM, H - BOTTOM);
}

fn trim(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Line chart with markers. With `categorical_x`, points are spaced evenly
/// and labelled by their x value (used for non-uniform noise levels).
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], categorical_x: bool) -> String {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let y_max = nice_max(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).fold(0.0, f64::max));
    let (x_lo, x_hi) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let plot_w = W - LEFT - RIGHT;
    let px = |x: f64| {
        let t = if categorical_x {
            let i = xs.iter().position(|&v| v == x).unwrap_or(0);
            if xs.len() > 1 {
                i as f64 / (xs.len() - 1) as f64
            } else {
                0.5
            }
        } else if x_hi > x_lo {
            (x - x_lo) / (x_hi - x_lo)
        } else {
            0.5
        };
        LEFT + 12.0 + t * (plot_w - 24.0)
    };
    let py = |y: f64| H - BOTTOM - (H - TOP - BOTTOM) * (y / y_max).clamp(0.0, 1.0);

    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel);
    y_axis(&mut out, y_max);
    for &x in &xs {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, px(x), H - BOTTOM + 16.0, trim(x));
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let dash = if s.dashed { r#" stroke-dasharray="4 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = TOP + 8.0 + 16.0 * i as f64;
        let lx = W - RIGHT - 150.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/>"#,
            lx + 24.0
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, esc(&s.name));
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bar chart, one bar per label.
pub fn bar_chart(title: &str, ylabel: &str, bars: &[(String, f64)]) -> String {
    let y_max = nice_max(bars.iter().map(|b| b.1).fold(0.0, f64::max));
    let plot_w = W - LEFT - RIGHT;
    let slot = plot_w / bars.len().max(1) as f64;
    let mut out = String::new();
    header(&mut out, title, "", ylabel);
    y_axis(&mut out, y_max);
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = (H - TOP - BOTTOM) * (v / y_max).clamp(0.0, 1.0);
        let x = LEFT + slot * i as f64 + slot * 0.2;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
            H - BOTTOM - h,
            slot * 0.6,
            PALETTE[i % PALETTE.len()]
        );
        let cx = x + slot * 0.3;
        let _ = writeln!(out, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{:.2}</text>"#, H - BOTTOM - h - 4.0, v);
        let _ = writeln!(out, r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, esc(label));
    }
    out.push_str("</svg>\n");
    out
}

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let (x, y) = ((x0 + t * (x1 - x0)).round(), (y0 + t * (y1 - y0)).round());
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Top-down view of the perception range: optional foreground probability
/// as background shading, ground truth outlined red, predictions green.
/// `px_per_m` sets the resolution; row 0 is the far edge.
pub fn bev_overlay(grid: &GridSpec, gts: &[Box3D], preds: &[Box3D], prob: Option<&ndarray::Array2<f32>>, px_per_m: f64) -> RgbImage {
    let (x_lo, x_hi) = grid.x_range;
    let (y_lo, y_hi) = grid.v_range;
    let w = ((x_hi - x_lo) * px_per_m).round() as u32;
    let h = ((y_hi - y_lo) * px_per_m).round() as u32;
    let mut img = RgbImage::from_pixel(w, h, Rgb([24, 24, 24]));
    if let Some(p) = prob {
        let (rows, cols) = p.dim();
        for (x, y, px) in img.enumerate_pixels_mut() {
            let r = (y as usize * rows / h as usize).min(rows - 1);
            let c = (x as usize * cols / w as usize).min(cols - 1);
            let v = 24 + (f32::clamp(p[[r, c]], 0.0, 1.0) * 80.0) as u8;
            *px = Rgb([v, v, v]);
        }
    }
    for m in (10..).step_by(10).take_while(|&m| (m as f64) < y_hi - y_lo) {
        let y = h as f64 - m as f64 * px_per_m;
        draw_line(&mut img, (0.0, y), (w as f64 - 1.0, y), Rgb([60, 60, 60]));
    }
    let to_px = |p: [f64; 2]| ((p[0] - x_lo) * px_per_m, (y_hi - p[1]) * px_per_m);
    for (boxes, color) in [(gts, Rgb([230, 40, 40])), (preds, Rgb([40, 220, 60]))] {
        for b in boxes {
            let c = b.bev_corners();
            for k in 0..4 {
                draw_line(&mut img, to_px(c[k]), to_px(c[(k + 1) % 4]), color);
            }
            let front = [(c[0][0] + c[1][0]) / 2.0, (c[0][1] + c[1][1]) / 2.0];
            draw_line(&mut img, to_px([b.center[0], b.center[1]]), to_px(front), color);
        }
    }
    img
}
