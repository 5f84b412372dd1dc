//! CSV and SVG artifacts of a benchmark run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::SeedResult;
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const ELBO_FILE: &str = "elbo.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub strategy: String,
    pub step: usize,
    pub mean: f64,
    /// Sample standard deviation over seeds; zero for a single seed.
    pub std: f64,
}

/// Seed-aggregated results. Step `s` refers to the `s`-th iterate, step 1
/// being the uniform initialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub metric: String,
    pub rows: Vec<MetricRow>,
    /// Augmentation labels, one per weight column.
    pub weight_labels: Vec<String>,
    /// Seed-averaged weights of the full-list fit, indexed by `step - 1`.
    pub weights: Vec<Vec<f64>>,
    /// Seed-averaged negative ELBO, indexed by `step - 1`.
    pub negative_elbo: Vec<f64>,
    /// Raw per-seed results; not written to disk.
    pub per_seed: Vec<SeedResult>,
}

impl RunReport {
    pub fn strategies(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.strategy.as_str()) {
                out.push(&r.strategy);
            }
        }
        out
    }

    pub fn series(&self, strategy: &str) -> Vec<&MetricRow> {
        self.rows.iter().filter(|r| r.strategy == strategy).collect()
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("strategy,step,mean,std\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:?},{:?}", r.strategy, r.step, r.mean, r.std);
        }
        s
    }

    pub fn weights_csv(&self) -> String {
        let mut s = String::from("step,k,w_k\n");
        for (t, w) in self.weights.iter().enumerate() {
            for (label, v) in self.weight_labels.iter().zip(w) {
                let _ = writeln!(s, "{},{label},{v:?}", t + 1);
            }
        }
        s
    }

    pub fn elbo_csv(&self) -> String {
        let mut s = String::from("step,negative_elbo\n");
        for (t, v) in self.negative_elbo.iter().enumerate() {
            let _ = writeln!(s, "{},{v:?}", t + 1);
        }
        s
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Line plot on a fixed 640×480 canvas, one polyline per series.
pub fn svg_line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h) = (640.0, 480.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        let pad = y0.abs().max(1.0) * 0.05;
        (y0, y1) = (y0 - pad, y1 + pad);
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 640 480" width="640" height="480">"#);
    let _ = writeln!(s, r#"<rect width="640" height="480" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="320" y="24" text-anchor="middle" font-size="16">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="11">{}</text>"#, px(xv), h - bottom + 16.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"#, left - 6.0, py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, left + (w - left - right) / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + (h - top - bottom) / 2.0,
        top + (h - top - bottom) / 2.0,
        escape(y_label)
    );
    for (i, (name, points)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#, w - right + 10.0, w - right + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">{}</text>"#, w - right + 35.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the three CSVs and their plots into `dir`, creating it if needed.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metric_series: Vec<(String, Vec<(f64, f64)>)> = report
        .strategies()
        .into_iter()
        .map(|name| (name.to_string(), report.series(name).iter().map(|r| (r.step as f64, r.mean)).collect()))
        .collect();
    let weight_series: Vec<(String, Vec<(f64, f64)>)> = report
        .weight_labels
        .iter()
        .enumerate()
        .map(|(k, name)| (name.clone(), report.weights.iter().enumerate().map(|(t, w)| ((t + 1) as f64, w[k])).collect()))
        .collect();
    let elbo_series = vec![(
        "negative ELBO".to_string(),
        report.negative_elbo.iter().enumerate().map(|(t, v)| ((t + 1) as f64, *v)).collect(),
    )];
    let metric = if report.metric.is_empty() { "metric" } else { &report.metric };
    Ok(vec![
        write_file(dir, METRICS_FILE, &report.metrics_csv())?,
        write_file(dir, WEIGHTS_FILE, &report.weights_csv())?,
        write_file(dir, ELBO_FILE, &report.elbo_csv())?,
        write_file(dir, "metrics.svg", &svg_line_plot(&format!("Test {metric}"), "step", metric, &metric_series))?,
        write_file(dir, "weights.svg", &svg_line_plot("Weight coefficients", "step", "w_k", &weight_series))?,
        write_file(dir, "elbo.svg", &svg_line_plot("Negative ELBO", "step", "-ELBO", &elbo_series))?,
    ])
}

fn read_csv(dir: &Path, name: &str, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("{name}: expected header `{header}`"),
            })
        }
    }
    let cols = header.split(',').count();
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let f: Vec<String> = l.split(',').map(|v| v.trim().to_string()).collect();
            if f.len() != cols {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!("{name}: expected {cols} fields"),
                });
            }
            Ok((n + 1, f))
        })
        .collect()
}

fn field<T: std::str::FromStr>(name: &str, line: usize, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{name}: cannot parse `{v}`"),
    })
}

/// Reads the CSVs written by [`emit_report`]. Rows of `weights.csv` must
/// list the same augmentations at every step, in order.
pub fn read_report(dir: impl AsRef<Path>) -> Result<RunReport> {
    let dir = dir.as_ref();
    let mut report = RunReport::default();
    for (n, f) in read_csv(dir, METRICS_FILE, "strategy,step,mean,std")? {
        report.rows.push(MetricRow {
            strategy: f[0].clone(),
            step: field(METRICS_FILE, n, &f[1])?,
            mean: field(METRICS_FILE, n, &f[2])?,
            std: field(METRICS_FILE, n, &f[3])?,
        });
    }
    for (n, f) in read_csv(dir, WEIGHTS_FILE, "step,k,w_k")? {
        let step: usize = field(WEIGHTS_FILE, n, &f[0])?;
        let v: f64 = field(WEIGHTS_FILE, n, &f[2])?;
        if step == report.weights.len() + 1 {
            report.weights.push(Vec::new());
        } else if step != report.weights.len() || step == 0 {
            return Err(Error::Parse {
                line: n,
                msg: format!("{WEIGHTS_FILE}: steps must be consecutive from 1"),
            });
        }
        let first = report.weights.len() == 1;
        let row = report.weights.last_mut().expect("row pushed above");
        if first {
            report.weight_labels.push(f[1].clone());
        } else if report.weight_labels.get(row.len()) != Some(&f[1]) {
            return Err(Error::Parse {
                line: n,
                msg: format!("{WEIGHTS_FILE}: unexpected augmentation `{}`", f[1]),
            });
        }
        row.push(v);
    }
    for (n, f) in read_csv(dir, ELBO_FILE, "step,negative_elbo")? {
        let step: usize = field(ELBO_FILE, n, &f[0])?;
        if step != report.negative_elbo.len() + 1 {
            return Err(Error::Parse {
                line: n,
                msg: format!("{ELBO_FILE}: steps must be consecutive from 1"),
            });
        }
        report.negative_elbo.push(field(ELBO_FILE, n, &f[1])?);
    }
    Ok(report)
}
