//! Image grids (PNG) and charts (SVG).

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use plotters::prelude::*;

use vcbench_core::datahub::ImageShape;

use crate::error::{BenchError, BenchResult};

/// Pixels per image pixel in the grid.
const SCALE: u32 = 3;
const GAP: u32 = 2;

/// Writes originals as the top row and reconstructions as the bottom row.
/// Both slices hold `n` flattened channel-major images.
pub fn reconstruction_grid(path: &Path, originals: &[Vec<f32>], recons: &[Vec<f32>], shape: ImageShape) -> BenchResult<()> {
    let n = originals.len().min(recons.len()) as u32;
    if n == 0 {
        return Err(BenchError::Plot("no images for the reconstruction grid".into()));
    }
    let (h, w) = (shape.height as u32, shape.width as u32);
    let cell_w = w * SCALE + GAP;
    let cell_h = h * SCALE + GAP;
    let (gw, gh) = (n * cell_w + GAP, 2 * cell_h + GAP);
    let pixel = |img: &[f32], c: usize, y: u32, x: u32| -> u8 {
        let v = img[(c * shape.height + y as usize) * shape.width + x as usize];
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    let place = |row: u32, col: u32, y: u32, x: u32| -> (u32, u32) {
        (GAP + col * cell_w + x * SCALE, GAP + row * cell_h + y * SCALE)
    };
    match shape.channels {
        1 => {
            let mut out: GrayImage = ImageBuffer::from_pixel(gw, gh, Luma([255]));
            for (row, set) in [originals, recons].into_iter().enumerate() {
                for (col, img) in set.iter().take(n as usize).enumerate() {
                    for y in 0..h {
                        for x in 0..w {
                            let (px, py) = place(row as u32, col as u32, y, x);
                            let v = pixel(img, 0, y, x);
                            for dy in 0..SCALE {
                                for dx in 0..SCALE {
                                    out.put_pixel(px + dx, py + dy, Luma([v]));
                                }
                            }
                        }
                    }
                }
            }
            out.save(path).map_err(|e| BenchError::Plot(e.to_string()))
        }
        3 => {
            let mut out: RgbImage = ImageBuffer::from_pixel(gw, gh, Rgb([255, 255, 255]));
            for (row, set) in [originals, recons].into_iter().enumerate() {
                for (col, img) in set.iter().take(n as usize).enumerate() {
                    for y in 0..h {
                        for x in 0..w {
                            let (px, py) = place(row as u32, col as u32, y, x);
                            let v = [pixel(img, 0, y, x), pixel(img, 1, y, x), pixel(img, 2, y, x)];
                            for dy in 0..SCALE {
                                for dx in 0..SCALE {
                                    out.put_pixel(px + dx, py + dy, Rgb(v));
                                }
                            }
                        }
                    }
                }
            }
            out.save(path).map_err(|e| BenchError::Plot(e.to_string()))
        }
        c => Err(BenchError::Plot(format!("cannot render {c}-channel images"))),
    }
}

fn plot_err<E: std::fmt::Debug>(e: E) -> BenchError {
    BenchError::Plot(format!("{e:?}"))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = if lo.is_finite() && hi.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = ((hi - lo) * 0.1).max(1e-3);
    (lo - pad, hi + pad)
}

/// A labelled point on the utility-privacy plane.
pub struct FrontierPoint {
    pub label: String,
    pub risk: f64,
    pub acc: f64,
}

/// Accuracy against reconstruction risk, one marker per point.
pub fn frontier_svg(path: &Path, title: &str, points: &[FrontierPoint]) -> BenchResult<()> {
    let pts: Vec<&FrontierPoint> = points.iter().filter(|p| p.risk.is_finite() && p.acc.is_finite()).collect();
    let (x0, x1) = padded(
        pts.iter().map(|p| p.risk).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.risk).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = padded(
        pts.iter().map(|p| p.acc).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.acc).fold(f64::NEG_INFINITY, f64::max),
    );
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("reconstruction risk R")
        .y_desc("accuracy (%)")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(pts.iter().map(|p| Circle::new((p.risk, p.acc), 4, BLUE.filled())))
        .map_err(plot_err)?;
    chart
        .draw_series(
            pts.iter().map(|p| Text::new(p.label.clone(), (p.risk, p.acc), ("sans-serif", 12).into_font())),
        )
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// One cosine-similarity trace per labelled model, plus the honesty
/// boundary `C = 1 - 2 * threshold`.
pub fn cosine_trace_svg(path: &Path, traces: &[(String, Vec<f64>)], threshold: f64) -> BenchResult<()> {
    let steps = traces.iter().map(|(_, t)| t.len()).max().unwrap_or(1).max(2) - 1;
    let boundary = 1.0 - 2.0 * threshold;
    let lo = traces
        .iter()
        .flat_map(|(_, t)| t.iter().copied())
        .filter(|v| v.is_finite())
        .fold(boundary, f64::min);
    let (y0, _) = padded(lo, 1.0);
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("cosine similarity during fine-tuning", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..steps as f64, y0..1.0005)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("fine-tune step").y_desc("C").draw().map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new([(0.0, boundary), (steps as f64, boundary)], BLACK.stroke_width(1)))
        .map_err(plot_err)?
        .label("honesty boundary")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], BLACK));
    for (i, (name, t)) in traces.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(t.iter().enumerate().map(|(s, &c)| (s as f64, c)), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ImageShape::new(4, 4, 1);
        let img = vec![vec![0.5f32; 16]; 3];
        reconstruction_grid(&dir.path().join("g.png"), &img, &img, shape).unwrap();
        let back = image::open(dir.path().join("g.png")).unwrap();
        assert_eq!(back.width(), 3 * (4 * SCALE + GAP) + GAP);
        let pts = vec![
            FrontierPoint { label: "a".into(), risk: 1.0, acc: 97.0 },
            FrontierPoint { label: "b".into(), risk: 1.2, acc: 95.0 },
        ];
        frontier_svg(&dir.path().join("f.svg"), "frontier", &pts).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("f.svg")).unwrap();
        assert!(svg.contains("<svg"));
        cosine_trace_svg(&dir.path().join("c.svg"), &[("m".into(), vec![1.0, 0.99, 0.97])], 0.01).unwrap();
    }
}
