//! SVG panels of log10 final MSE against the abnormal fraction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::runner::Z95;

const REQUIRED: [&str; 9] = [
    "replicate",
    "corruption",
    "rho",
    "topology",
    "topo_param",
    "algorithm",
    "iteration",
    "mse_normal",
    "status",
];

const PALETTE: [&str; 8] = [
    "#1b6ca8", "#d1495b", "#2e8b57", "#e0a100", "#6a4c93", "#00798c", "#8c564b", "#444444",
];

const WIDTH: f64 = 520.0;
const HEIGHT: f64 = 380.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

/// Aggregated curve point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPoint {
    pub rho: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// One panel: a corruption kind on one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub corruption: String,
    pub topology: String,
    pub topo_param: String,
    /// Algorithms in order of first appearance with their curves, sorted by rho.
    pub series: Vec<(String, Vec<BandPoint>)>,
}

impl Panel {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.svg", self.corruption, self.topology, self.topo_param)
    }
}

struct FinalRow {
    iteration: usize,
    mse: f64,
    ok: bool,
}

/// Read `runs.csv` and aggregate the final log10 MSE of every completed run.
pub fn load_panels(runs_csv: &Path) -> Result<Vec<Panel>> {
    let mut reader = csv::Reader::from_path(runs_csv)?;
    let headers = reader.headers()?.clone();
    let mut idx = BTreeMap::new();
    for name in REQUIRED {
        let pos = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        idx.insert(name, pos);
    }
    let field = |rec: &csv::StringRecord, name: &str| rec.get(idx[name]).unwrap_or("").to_string();
    let parse_f = |text: String, name: &str| -> Result<f64> {
        text.parse::<f64>()
            .map_err(|_| Error::invalid(format!("column {name}: {text:?} is not a number")))
    };

    // panel -> algorithm -> rho text -> replicate -> final row
    type RunKey = (String, String, String, String, String, String);
    let mut panel_order: Vec<(String, String, String)> = Vec::new();
    let mut algo_order: BTreeMap<(String, String, String), Vec<String>> = BTreeMap::new();
    let mut finals: BTreeMap<RunKey, FinalRow> = BTreeMap::new();
    let mut rho_value: BTreeMap<String, f64> = BTreeMap::new();

    for rec in reader.records() {
        let rec = rec?;
        let panel = (
            field(&rec, "corruption"),
            field(&rec, "topology"),
            field(&rec, "topo_param"),
        );
        let algorithm = field(&rec, "algorithm");
        let rho_text = field(&rec, "rho");
        let rho = parse_f(rho_text.clone(), "rho")?;
        rho_value.insert(rho_text.clone(), rho);
        let iteration: usize = field(&rec, "iteration")
            .parse()
            .map_err(|_| Error::invalid("column iteration holds a non-integer"))?;
        let ok = field(&rec, "status") == "ok";
        let mse = if ok {
            parse_f(field(&rec, "mse_normal"), "mse_normal")?
        } else {
            f64::NAN
        };
        if !panel_order.contains(&panel) {
            panel_order.push(panel.clone());
        }
        let algos = algo_order.entry(panel.clone()).or_default();
        if !algos.contains(&algorithm) {
            algos.push(algorithm.clone());
        }
        let key = (
            panel.0.clone(),
            panel.1.clone(),
            panel.2.clone(),
            algorithm,
            rho_text,
            field(&rec, "replicate"),
        );
        let replace = finals.get(&key).is_none_or(|f| iteration >= f.iteration);
        if replace {
            finals.insert(key, FinalRow { iteration, mse, ok });
        }
    }
    if panel_order.is_empty() {
        return Err(Error::invalid("runs file has no rows"));
    }

    let mut panels = Vec::new();
    for panel in panel_order {
        let mut series = Vec::new();
        for algorithm in &algo_order[&panel] {
            let mut by_rho: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (key, row) in &finals {
                if (&key.0, &key.1, &key.2, &key.3) == (&panel.0, &panel.1, &panel.2, algorithm)
                    && row.ok
                    && row.mse > 0.0
                {
                    by_rho.entry(key.4.clone()).or_default().push(row.mse.log10());
                }
            }
            let mut points: Vec<BandPoint> = by_rho
                .into_iter()
                .map(|(rho_text, logs)| {
                    let (mean, se) = mean_se(&logs);
                    BandPoint {
                        rho: rho_value[&rho_text],
                        mean,
                        lo: mean - Z95 * se,
                        hi: mean + Z95 * se,
                        count: logs.len(),
                    }
                })
                .collect();
            points.sort_by(|a, b| a.rho.total_cmp(&b.rho));
            series.push((algorithm.clone(), points));
        }
        panels.push(Panel {
            corruption: panel.0,
            topology: panel.1,
            topo_param: panel.2,
            series,
        });
    }
    Ok(panels)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (-1.0, 1.0);
    }
    if (hi - lo).abs() < 1e-9 {
        return ((lo - 0.5).floor(), (hi + 0.5).ceil());
    }
    let pad = 0.05 * (hi - lo);
    (((lo - pad) * 2.0).floor() / 2.0, ((hi + pad) * 2.0).ceil() / 2.0)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render one panel as a standalone SVG document.
pub fn render_svg(panel: &Panel) -> String {
    let points = panel.series.iter().flat_map(|(_, pts)| pts.iter());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut rhos: Vec<f64> = Vec::new();
    for p in points {
        xmin = xmin.min(p.rho);
        xmax = xmax.max(p.rho);
        ymin = ymin.min(p.lo);
        ymax = ymax.max(p.hi);
        if !rhos.contains(&p.rho) {
            rhos.push(p.rho);
        }
    }
    rhos.sort_by(|a, b| a.total_cmp(b));
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 0.5;
    }
    if xmax - xmin < 1e-12 {
        xmin -= 0.05;
        xmax += 0.05;
    }
    let (ymin, ymax) = nice_range(ymin, ymax);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - xmin) / (xmax - xmin) * plot_w;
    let sy = |y: f64| TOP + (ymax - y) / (ymax - ymin) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{} / {} ({})</text>"#,
        LEFT + plot_w / 2.0,
        escape(&panel.corruption.to_uppercase()),
        escape(&panel.topology),
        escape(&panel.topo_param)
    );

    // axes and grid
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black"/>"#
    );
    let steps = ((ymax - ymin) / 0.5).round() as usize;
    let stride = steps.div_ceil(8).max(1);
    for k in (0..=steps).step_by(stride) {
        let y = ymin + 0.5 * k as f64;
        let py = sy(y);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.1}</text>"#,
            LEFT - 6.0,
            py + 4.0
        );
    }
    for &rho in &rhos {
        let px = sx(rho);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#,
            TOP + plot_h,
            TOP + plot_h + 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{rho}</text>"#,
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">abnormal fraction</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">log10 MSE</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, (name, pts)) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if pts.len() > 1 {
            let mut band = String::new();
            for p in pts {
                let _ = write!(band, "{:.2},{:.2} ", sx(p.rho), sy(p.hi));
            }
            for p in pts.iter().rev() {
                let _ = write!(band, "{:.2},{:.2} ", sx(p.rho), sy(p.lo));
            }
            let _ = writeln!(
                svg,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                band.trim_end()
            );
            let line: Vec<String> = pts
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.rho), sy(p.mean)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
        } else {
            for p in pts {
                let px = sx(p.rho);
                let _ = writeln!(
                    svg,
                    r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
                    sy(p.lo),
                    sy(p.hi)
                );
            }
        }
        for p in pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(p.rho),
                sy(p.mean)
            );
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write one SVG per panel into `out_dir`.
pub fn plot_panels(runs_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let panels = load_panels(runs_csv)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for panel in &panels {
        let path = out_dir.join(panel.file_name());
        fs::write(&path, render_svg(panel))?;
        written.push(path);
    }
    Ok(written)
}
