//! SVG scatter plots of embedding CSV files.

use std::fmt::Write as _;
use std::path::Path;

use enhope::{Error, Result};

/// Qualitative palette; classes past the twelfth reuse colors with a
/// different marker shape.
pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#ad494a",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Circle,
    Square,
    Triangle,
}

fn style(class: usize) -> (&'static str, Shape) {
    let shape = match (class / PALETTE.len()) % 3 {
        0 => Shape::Circle,
        1 => Shape::Square,
        _ => Shape::Triangle,
    };
    (PALETTE[class % PALETTE.len()], shape)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub exemplar: bool,
}

/// Reads `y1[,y2,...],label,is_exemplar` rows. One-dimensional embeddings
/// are drawn on a horizontal line.
pub fn read_embedding_csv(path: &Path) -> Result<Vec<PlotPoint>> {
    let csv_err = |line: u64, msg: String| Error::Csv {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| csv_err(0, e.to_string()))?;
    let header = reader.headers().map_err(|e| csv_err(1, e.to_string()))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (label_col, ex_col, y1) = match (col("label"), col("is_exemplar"), col("y1")) {
        (Some(l), Some(e), Some(y)) => (l, e, y),
        _ => return Err(csv_err(1, "expected columns y1, label and is_exemplar".into())),
    };
    let y2 = col("y2");
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| csv_err(line, format!("bad number {:?} in column {}", field(i), &header[i])))
        };
        let label = field(label_col)
            .parse::<usize>()
            .map_err(|_| csv_err(line, format!("bad label {:?}", field(label_col))))?;
        let exemplar = match field(ex_col) {
            "1" => true,
            "0" | "" => false,
            other => return Err(csv_err(line, format!("bad is_exemplar value {other:?}"))),
        };
        points.push(PlotPoint {
            x: num(y1)?,
            y: y2.map(num).transpose()?.unwrap_or(0.0),
            label,
            exemplar,
        });
    }
    if points.is_empty() {
        return Err(csv_err(0, "no rows".into()));
    }
    Ok(points)
}

fn marker(svg: &mut String, shape: Shape, x: f64, y: f64, r: f64, paint: &str) {
    match shape {
        Shape::Circle => writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" {paint}/>"#),
        Shape::Square => writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" {paint}/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        Shape::Triangle => writeln!(
            svg,
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" {paint}/>"#,
            x,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
    }
    .expect("writing to a String");
}

/// Renders points colored by class, exemplars as unfilled rings on top, and
/// a legend with one entry per class present.
pub fn render_svg(points: &[PlotPoint], width: u32, height: u32) -> String {
    let margin = 40.0;
    let legend_w = 110.0;
    let (w, h) = (width as f64, height as f64);
    let plot_w = (w - 2.0 * margin - legend_w).max(10.0);
    let plot_h = (h - 2.0 * margin).max(10.0);
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let xs = if xmax > xmin { plot_w / (xmax - xmin) } else { 0.0 };
    let ys = if ymax > ymin { plot_h / (ymax - ymin) } else { 0.0 };
    let px = |x: f64| margin + if xs > 0.0 { (x - xmin) * xs } else { plot_w / 2.0 };
    let py = |y: f64| margin + plot_h - if ys > 0.0 { (y - ymin) * ys } else { plot_h / 2.0 };

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(
        svg,
        r##"<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#cccccc"/>"##
    )
    .unwrap();
    for p in points.iter().filter(|p| !p.exemplar) {
        let (color, shape) = style(p.label);
        marker(&mut svg, shape, px(p.x), py(p.y), 2.0, &format!(r#"fill="{color}""#));
    }
    for p in points.iter().filter(|p| p.exemplar) {
        let (color, shape) = style(p.label);
        marker(
            &mut svg,
            shape,
            px(p.x),
            py(p.y),
            7.0,
            &format!(r#"class="exemplar" fill="none" stroke="{color}" stroke-width="2""#),
        );
    }
    let mut classes: Vec<usize> = points.iter().map(|p| p.label).collect();
    classes.sort_unstable();
    classes.dedup();
    let lx = w - legend_w - margin / 2.0;
    for (row, &c) in classes.iter().enumerate() {
        let (color, shape) = style(c);
        let ly = margin + 18.0 * row as f64;
        writeln!(svg, r#"<g class="legend-entry">"#).unwrap();
        marker(&mut svg, shape, lx + 6.0, ly, 5.0, &format!(r#"fill="{color}""#));
        writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif">class {c}</text>"#, lx + 18.0, ly + 4.0).unwrap();
        writeln!(svg, "</g>").unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
