//! Minimal SVG charts. Output depends only on the inputs, so re-plotting the
//! same logs gives byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use memnav::env::MazeMap;
use memnav::memory::DumpRecord;
use memnav::rl::LOG_HEADER;
use serde::Deserialize;

/// A log or dump that cannot be plotted.
#[derive(Debug)]
pub struct MalformedLog(pub String);

impl std::fmt::Display for MalformedLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "malformed log: {}", self.0)
    }
}

impl std::error::Error for MalformedLog {}

#[derive(Clone, Debug, Deserialize)]
pub struct LogRow {
    pub batch: usize,
    pub mean_return: f64,
    pub coverage_cells: f64,
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>, MalformedLog> {
    let bad = |msg: String| MalformedLog(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let expected: Vec<&str> = LOG_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(bad(format!("expected header `{LOG_HEADER}`")));
    }
    let rows = reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| bad(format!("row {}: {e}", i + 1))))
        .collect::<Result<Vec<LogRow>, _>>()?;
    if rows.is_empty() {
        return Err(bad("no rows".into()));
    }
    if let Some(r) = rows
        .iter()
        .find(|r| !r.mean_return.is_finite() || !r.coverage_cells.is_finite())
    {
        return Err(bad(format!("non-finite value in batch {}", r.batch)));
    }
    Ok(rows)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn header(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Maps data ranges onto the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = span(xs);
        let (y0, y1) = span(ys);
        Self {
            x0,
            x1,
            y0: y0.min(0.0),
            y1,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            out,
            r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (
                self.x0 + f * (self.x1 - self.x0),
                self.y0 + f * (self.y1 - self.y0),
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                self.px(xv),
                b + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                l - 6.0,
                self.py(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
            HEIGHT / 2.0,
            escape(ylabel)
        );
    }
}

fn span(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// One polyline per named series.
pub fn line_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let points = series.iter().flat_map(|(_, s)| s.iter());
    let frame = Frame::new(points.clone().map(|p| p.0), points.map(|p| p.1));
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    frame.axes(&mut out, xlabel, ylabel);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = MARGIN + 4.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#,
            WIDTH - MARGIN - 140.0,
            ly - 9.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}">{}</text>"#,
            WIDTH - MARGIN - 124.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn bar_chart(title: &str, ylabel: &str, bars: &[(String, f64)]) -> String {
    let frame = Frame {
        x0: 0.0,
        x1: bars.len().max(1) as f64,
        y0: 0.0,
        y1: bars.iter().map(|b| b.1).fold(1.0, f64::max),
    };
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT, title);
    let (l, r, b) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{l} {MARGIN} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = frame.y1 * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            l - 6.0,
            frame.py(v) + 4.0,
            tick(v)
        );
    }
    let slot = frame.px(1.0) - frame.px(0.0);
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = frame.px(i as f64) + slot * 0.15;
        let y = frame.py(*v);
        let _ = writeln!(
            out,
            r##"<rect class="bar" x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="#1f77b4"/>"##,
            slot * 0.7,
            b - y
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            b + 16.0,
            escape(label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
            x + slot * 0.35,
            y - 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">shortest path length (cells)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(ylabel)
    );
    out.push_str("</svg>\n");
    out
}

const CELL: f64 = 24.0;

/// The maze with the exploration graph drawn over it: one `line.edge` per
/// graph edge and one `circle.node` per memory entry. Entries without a pose
/// are placed on a ring beside the maze.
pub fn graph_svg(map: &MazeMap, records: &[DumpRecord]) -> Result<String, MalformedLog> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for r in records {
        match r {
            DumpRecord::Entry { index, pose, .. } => {
                if *index != nodes.len() {
                    return Err(MalformedLog(format!("entry {index} out of order")));
                }
                nodes.push(*pose);
            }
            DumpRecord::Edge { from, to } => edges.push((*from, *to)),
        }
    }
    if let Some(&(a, b)) = edges
        .iter()
        .find(|(a, b)| *a >= nodes.len() || *b >= nodes.len())
    {
        return Err(MalformedLog(format!(
            "edge {a}-{b} references a missing entry"
        )));
    }
    let (w, h) = (map.width() as f64 * CELL, map.height() as f64 * CELL);
    let width = w + if nodes.iter().any(Option::is_none) {
        h
    } else {
        0.0
    };
    let ring = nodes.len().max(1) as f64;
    let pos: Vec<(f64, f64)> = nodes
        .iter()
        .enumerate()
        .map(|(i, p)| match p {
            Some(p) => ((p.x as f64 + 0.5) * CELL, (p.y as f64 + 0.5) * CELL + 30.0),
            None => {
                let a = std::f64::consts::TAU * i as f64 / ring;
                (
                    w + h / 2.0 + 0.4 * h * a.cos(),
                    30.0 + h / 2.0 + 0.4 * h * a.sin(),
                )
            }
        })
        .collect();
    let mut out = String::new();
    header(
        &mut out,
        width,
        h + 40.0,
        &format!(
            "Exploration graph: {} nodes, {} edges",
            nodes.len(),
            edges.len()
        ),
    );
    for y in 0..map.height() {
        for x in 0..map.width() {
            if !map.is_free(x, y) {
                let [r, g, b] = map
                    .wall_color(x, y)
                    .map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
                let _ = writeln!(
                    out,
                    r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({r},{g},{b})"/>"#,
                    x as f64 * CELL,
                    y as f64 * CELL + 30.0
                );
            }
        }
    }
    for &(a, b) in &edges {
        let ((x1, y1), (x2, y2)) = (pos[a], pos[b]);
        let _ = writeln!(
            out,
            r#"<line class="edge" x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="black" stroke-opacity="0.6"/>"#
        );
    }
    for (i, (x, y)) in pos.iter().enumerate() {
        let _ = writeln!(
            out,
            r##"<circle class="node" cx="{x:.1}" cy="{y:.1}" r="4" fill="#d62728"><title>entry {i}</title></circle>"##
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
