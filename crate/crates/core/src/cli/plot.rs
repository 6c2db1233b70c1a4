//! Minimal raster line charts for training histories, LR traces and LR
//! range-test curves. Axes and gridlines only; no text rendering.

use super::CliError;
use image::{Rgb, RgbImage};
use std::path::Path;

const MARGIN: i64 = 40;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const PALETTE: [Rgb<u8>; 3] = [Rgb([31, 119, 180]), Rgb([214, 39, 40]), Rgb([44, 160, 44])];

/// One panel: several series sharing axes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Panel {
    pub series: Vec<Vec<(f64, f64)>>,
    pub log_x: bool,
}

/// Which kind of CSV a header belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    History,
    LrTrace,
    LrCurve,
}

pub fn detect(header: &str) -> Option<CsvKind> {
    let h = header.trim();
    if h.starts_with("epoch,train_loss,val_loss,val_acc") {
        Some(CsvKind::History)
    } else if h == "step,lr" {
        Some(CsvKind::LrTrace)
    } else if h == "lr,smoothed_loss" {
        Some(CsvKind::LrCurve)
    } else {
        None
    }
}

fn column(rows: &[Vec<&str>], idx: usize, line0: usize) -> Result<Vec<f64>, CliError> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r.get(idx)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::Data(format!("line {}: expected a number in column {}", i + line0, idx + 1)))
        })
        .collect()
}

/// Parses a history, LR-trace or LR-curve CSV into chart panels.
pub fn panels_from_csv(text: &str) -> Result<Vec<Panel>, CliError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| CliError::Data("empty CSV".into()))?;
    let kind = detect(header).ok_or_else(|| CliError::Data(format!("unrecognized CSV header '{header}'")))?;
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    if rows.is_empty() {
        return Err(CliError::Data("CSV has no data rows".into()));
    }
    let zip = |x: &[f64], y: &[f64]| x.iter().copied().zip(y.iter().copied()).collect::<Vec<_>>();
    Ok(match kind {
        CsvKind::History => {
            let (e, tl, vl, va) = (column(&rows, 0, 2)?, column(&rows, 1, 2)?, column(&rows, 2, 2)?, column(&rows, 3, 2)?);
            vec![
                Panel {
                    series: vec![zip(&e, &tl), zip(&e, &vl)],
                    log_x: false,
                },
                Panel {
                    series: vec![zip(&e, &va)],
                    log_x: false,
                },
            ]
        }
        CsvKind::LrTrace => vec![Panel {
            series: vec![zip(&column(&rows, 0, 2)?, &column(&rows, 1, 2)?)],
            log_x: false,
        }],
        CsvKind::LrCurve => vec![Panel {
            series: vec![zip(&column(&rows, 0, 2)?, &column(&rows, 1, 2)?)],
            log_x: true,
        }],
    })
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
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

fn draw_panel(img: &mut RgbImage, panel: &Panel, top: i64, height: i64) {
    let width = img.width() as i64;
    let (left, right) = (MARGIN, width - MARGIN / 2);
    let (ptop, pbottom) = (top + MARGIN / 2, top + height - MARGIN / 2);
    let tx = |x: f64| if panel.log_x { x.max(f64::MIN_POSITIVE).log10() } else { x };
    let (xlo, xhi) = bounds(panel.series.iter().flatten().map(|p| tx(p.0)));
    let (ylo, yhi) = bounds(panel.series.iter().flatten().map(|p| p.1));
    let px = |x: f64| left + ((tx(x) - xlo) / (xhi - xlo) * (right - left) as f64).round() as i64;
    let py = |y: f64| pbottom - ((y - ylo) / (yhi - ylo) * (pbottom - ptop) as f64).round() as i64;

    for k in 0..=4 {
        let gy = ptop + (pbottom - ptop) * k / 4;
        let gx = left + (right - left) * k / 4;
        for x in left..=right {
            put(img, x, gy, GRID);
        }
        for y in ptop..=pbottom {
            put(img, gx, y, GRID);
        }
    }
    for x in left..=right {
        put(img, x, pbottom, AXIS);
    }
    for y in ptop..=pbottom {
        put(img, left, y, AXIS);
    }
    for (s, series) in panel.series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let pts: Vec<(i64, i64)> = series
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        for w in pts.windows(2) {
            line(img, w[0], w[1], color);
        }
        if let [only] = pts.as_slice() {
            line(img, *only, *only, color);
        }
    }
}

/// Stacks panels vertically into one image.
pub fn render_chart(panels: &[Panel], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, BG);
    let each = height as i64 / panels.len().max(1) as i64;
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut img, p, i as i64 * each, each);
    }
    img
}

pub fn plot_csv(input: &Path, output: &Path, width: u32, height: u32) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    let panels = panels_from_csv(&text)?;
    render_chart(&panels, width, height)
        .save_with_format(output, image::ImageFormat::Png)
        .map_err(|e| CliError::Data(format!("{}: {e}", output.display())))
}
