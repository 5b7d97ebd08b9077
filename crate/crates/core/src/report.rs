//! Bit-stable CSV tables and self-contained SVG line charts.
//!
//! CSV output always uses `\n` line endings, RFC 4180 quoting, and floats
//! formatted with six decimals by [`fmt6`]. Charts contain no scripts, fonts
//! or external references, and depend only on their inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::net::PredictedPoint;

/// Fixed six-decimal rendering; negative zero prints as `0.000000`.
pub fn fmt6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self::with_header(header.iter().map(|h| h.to_string()).collect())
    }

    pub fn with_header(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for record in std::iter::once(&self.header).chain(&self.rows) {
            w.write_record(record).expect("writing to memory");
        }
        w.into_inner().expect("flushing to memory")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// One polyline of a chart.
#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub values: &'a [f64],
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Line chart of equally spaced series sharing one x axis. `x_labels` names
/// the first and last points.
pub fn line_chart_svg(title: &str, x_labels: (&str, &str), series: &[Series<'_>]) -> Result<String> {
    let n = series.first().map_or(0, |s| s.values.len());
    if n == 0 || series.iter().any(|s| s.values.len() != n) {
        return Err(Error::Shape("chart series must be non-empty and of equal length".into()));
    }
    if series.iter().flat_map(|s| s.values).any(|v| !v.is_finite()) {
        return Err(Error::Validation("chart values must be finite".into()));
    }
    let (width, height) = (800.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let lo = series.iter().flat_map(|s| s.values).cloned().fold(f64::INFINITY, f64::min);
    let hi = series.iter().flat_map(|s| s.values).cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    let px = |i: usize| {
        if n == 1 {
            left + (width - left - right) / 2.0
        } else {
            left + (width - left - right) * i as f64 / (n - 1) as f64
        }
    };
    let py = |v: f64| top + (height - top - bottom) * (hi - v) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape_xml(title)
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} L{left} {} L{} {}" fill="none" stroke="black"/>"#,
        height - bottom,
        width - right,
        height - bottom
    );
    for (v, anchor_y) in [(hi, py(hi)), (lo, py(lo))] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            left - 6.0,
            anchor_y + 4.0,
            fmt6(v)
        );
    }
    for (x, anchor, label) in [(left, "start", x_labels.0), (width - right, "end", x_labels.1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
            height - bottom + 18.0,
            escape_xml(label)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", px(i), py(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            points.join(" "),
            escape_xml(s.color)
        );
        let ly = height - 12.0;
        let lx = left + 160.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0,
            escape_xml(s.color)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 26.0,
            escape_xml(s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Files written by [`emit_prediction_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedReport {
    pub csv: std::path::PathBuf,
    pub svg: Option<std::path::PathBuf>,
}

/// Writes `<stem>.csv` (`date,actual,predicted,rpe`) and, when there is at
/// least one prediction, `<stem>.svg` with actual and predicted prices.
pub fn emit_prediction_report(dir: &Path, stem: &str, points: &[PredictedPoint]) -> Result<EmittedReport> {
    let csv = dir.join(format!("{stem}.csv"));
    crate::eval::write_predictions_csv(&csv, points)?;
    if points.is_empty() {
        warn!("no predictions to report; wrote header-only {}", csv.display());
        return Ok(EmittedReport { csv, svg: None });
    }
    let actual: Vec<f64> = points.iter().map(|p| p.actual).collect();
    let predicted: Vec<f64> = points.iter().map(|p| p.predicted).collect();
    let first = points[0].date.to_string();
    let last = points[points.len() - 1].date.to_string();
    let chart = line_chart_svg(
        "Actual vs predicted close",
        (&first, &last),
        &[
            Series {
                label: "actual",
                color: "#1f77b4",
                values: &actual,
            },
            Series {
                label: "predicted",
                color: "#d62728",
                values: &predicted,
            },
        ],
    )?;
    let svg = dir.join(format!("{stem}.svg"));
    fs::write(&svg, chart).map_err(|e| Error::io(&svg, e))?;
    Ok(EmittedReport { csv, svg: Some(svg) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn six_decimals_and_no_negative_zero() {
        assert_eq!(fmt6(1.0), "1.000000");
        assert_eq!(fmt6(-0.0000001), "0.000000");
        assert_eq!(fmt6(-2.5), "-2.500000");
    }

    #[test]
    fn csv_quoting_and_line_endings() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec!["x,y".into(), "say \"hi\"".into()]);
        t.push(vec!["plain".into(), "".into()]);
        let text = String::from_utf8(t.to_bytes()).unwrap();
        assert_eq!(text, "a,b\n\"x,y\",\"say \"\"hi\"\"\"\nplain,\n");
    }

    fn points(n: usize) -> Vec<PredictedPoint> {
        let d0 = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        (0..n)
            .map(|i| PredictedPoint {
                date: d0 + chrono::Duration::days(i as i64),
                actual: 10.0 + i as f64,
                predicted: 10.5 + i as f64 * 0.9,
            })
            .collect()
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let r = emit_prediction_report(dir.path(), "pred", &[]).unwrap();
        assert!(r.svg.is_none());
        assert_eq!(fs::read_to_string(&r.csv).unwrap(), "date,actual,predicted,rpe\n");
        assert!(!dir.path().join("pred.svg").exists());
    }

    #[test]
    fn svg_is_well_formed_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = emit_prediction_report(dir.path(), "a", &points(12)).unwrap();
        let b = emit_prediction_report(dir.path(), "b", &points(12)).unwrap();
        let sa = fs::read_to_string(a.svg.unwrap()).unwrap();
        let sb = fs::read_to_string(b.svg.unwrap()).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(fs::read(&a.csv).unwrap(), fs::read(&b.csv).unwrap());
        let doc = roxmltree::Document::parse(&sa).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        let lines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
        assert_eq!(lines, 2);
    }

    #[test]
    fn title_is_escaped() {
        let s = line_chart_svg(
            "a < b & c",
            ("x", "y"),
            &[Series {
                label: "s",
                color: "red",
                values: &[1.0, 1.0],
            }],
        )
        .unwrap();
        roxmltree::Document::parse(&s).unwrap();
        assert!(s.contains("a &lt; b &amp; c"));
    }
}
