//! Static PNG line plots: loss curves, precision–recall curves and PCK
//! threshold sweeps.
//!
//! Plots carry no text. Axes span the data range (or a fixed one), light
//! grid lines divide each axis into tenths, and series are drawn in a
//! fixed palette order. The plotted numbers are always written next to the
//! image in a JSON file by the caller.

use std::path::Path;

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_line_segment_mut, draw_filled_circle_mut};

use crate::error::Result;
use crate::metrics::{pr_curve, Accumulator};
use crate::train::StepRecord;

pub const WIDTH: u32 = 800;
pub const HEIGHT: u32 = 500;
const MARGIN: f32 = 40.0;

pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Renders `series` into an image; `x`/`y` fix the axis ranges.
pub fn render(series: &[Series], x: Option<(f64, f64)>, y: Option<(f64, f64)>) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (x0, x1) = x.unwrap_or_else(|| range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))));
    let (y0, y1) = y.unwrap_or_else(|| range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))));
    let (w, h) = (WIDTH as f32 - 2.0 * MARGIN, HEIGHT as f32 - 2.0 * MARGIN);
    let px = |v: f64| MARGIN + ((v - x0) / (x1 - x0)) as f32 * w;
    let py = |v: f64| HEIGHT as f32 - MARGIN - ((v - y0) / (y1 - y0)) as f32 * h;
    let grid = Rgb([225, 225, 225]);
    for i in 0..=10 {
        let f = i as f32 / 10.0;
        draw_line_segment_mut(&mut img, (MARGIN + f * w, MARGIN), (MARGIN + f * w, MARGIN + h), grid);
        draw_line_segment_mut(&mut img, (MARGIN, MARGIN + f * h), (MARGIN + w, MARGIN + f * h), grid);
    }
    let axis = Rgb([0, 0, 0]);
    draw_line_segment_mut(&mut img, (MARGIN, MARGIN + h), (MARGIN + w, MARGIN + h), axis);
    draw_line_segment_mut(&mut img, (MARGIN, MARGIN), (MARGIN, MARGIN + h), axis);
    for (k, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        let pts: Vec<(f32, f32)> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(a, b)| (px(a), py(b)))
            .collect();
        if let [only] = pts.as_slice() {
            draw_filled_circle_mut(&mut img, (only.0 as i32, only.1 as i32), 3, color);
        }
        for pair in pts.windows(2) {
            draw_line_segment_mut(&mut img, pair[0], pair[1], color);
        }
    }
    img
}

pub fn save(path: &Path, series: &[Series], x: Option<(f64, f64)>, y: Option<(f64, f64)>) -> Result<()> {
    render(series, x, y).save(path)?;
    Ok(())
}

/// Per-step `log10(loss)` against the step index.
pub fn loss_series(records: &[StepRecord]) -> Series {
    Series {
        label: "log10 loss".into(),
        points: records.iter().map(|r| (r.step as f64, r.loss.max(1e-300).log10())).collect(),
    }
}

/// One precision–recall curve (recall, precision) per joint with visible
/// ground truth.
pub fn pr_series(acc: &Accumulator, names: &[&str]) -> Vec<Series> {
    acc.entries
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.is_empty())
        .map(|(j, e)| {
            let conf: Vec<f64> = e.iter().map(|p| p.0).collect();
            let correct: Vec<bool> = e.iter().map(|p| p.1 <= acc.threshold).collect();
            Series {
                label: names.get(j).map_or_else(|| format!("joint{j}"), |s| s.to_string()),
                points: pr_curve(&conf, &correct),
            }
        })
        .collect()
}

/// Pooled PCK at `steps + 1` thresholds from 0 to `max`.
pub fn pck_sweep(acc: &Accumulator, max: f64, steps: usize) -> Series {
    Series {
        label: "PCK".into(),
        points: (0..=steps)
            .map(|i| {
                let t = max * i as f64 / steps as f64;
                (t, acc.pck_at(t))
            })
            .collect(),
    }
}
