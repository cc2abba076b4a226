//! Plots, heatmaps and metric tables.
//!
//! Every writer is a pure function of its input, so repeated runs produce
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continual::{IncrementRecord, MetricRow, ScenarioMetrics, StrategySummary};
use crate::error::{Error, Result};
use crate::pda::ActivationDifferenceMap;

pub const SVG_WIDTH: f64 = 640.0;
pub const SVG_HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// `(label, one value per block)`; values in `[0, 1]`.
    pub series: Vec<(String, Vec<f64>)>,
}

fn plot_width() -> f64 {
    SVG_WIDTH - LEFT - RIGHT
}

fn plot_height() -> f64 {
    SVG_HEIGHT - TOP - BOTTOM
}

/// Pixel x of point `i` among `n`.
pub fn x_of(i: usize, n: usize) -> f64 {
    if n <= 1 {
        LEFT + plot_width() / 2.0
    } else {
        LEFT + plot_width() * i as f64 / (n - 1) as f64
    }
}

/// Pixel y of value `v` on the fixed `[0, 1]` axis.
pub fn y_of(v: f64) -> f64 {
    TOP + (1.0 - v) * plot_height()
}

/// Inverse of [`y_of`].
pub fn value_of(y: f64) -> f64 {
    1.0 - (y - TOP) / plot_height()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG 1.1 line plot: one `<polyline>` per series; axes, ticks and legend
/// use only `<line>` and `<text>`.
pub fn plot_iou_curves(spec: &PlotSpec) -> Result<String> {
    let Some((_, first)) = spec.series.first() else {
        return Err(Error::Invalid("plot needs at least one series".into()));
    };
    let k = first.len();
    if k == 0 {
        return Err(Error::Invalid("series are empty".into()));
    }
    for (label, v) in &spec.series {
        if v.len() != k {
            return Err(Error::Shape { expected: vec![k], actual: vec![v.len()] });
        }
        if let Some(bad) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Invalid(format!("series `{label}` has value {bad} outside [0, 1]")));
        }
    }

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        LEFT + plot_width() / 2.0,
        escape(&spec.title)
    );

    let (x0, x1, y0, y1) = (LEFT, LEFT + plot_width(), y_of(0.0), y_of(1.0));
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#);
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(s, r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.1}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    for i in 0..k {
        let x = x_of(i, k);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            y0 + 16.0,
            i + 1
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        LEFT + plot_width() / 2.0,
        SVG_HEIGHT - 12.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + plot_height() / 2.0,
        TOP + plot_height() / 2.0,
        escape(&spec.y_label)
    );

    for (n, (label, v)) in spec.series.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let points: Vec<String> = v.iter().enumerate().map(|(i, &y)| format!("{:.2},{:.2}", x_of(i, k), y_of(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * n as f64;
        let lx = x1 + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Diverging colour for `v` scaled by `max_abs`: positive toward red,
/// negative toward blue, zero white.
pub fn diverging(v: f32, max_abs: f32) -> [u8; 3] {
    if max_abs == 0.0 || v == 0.0 {
        return [255, 255, 255];
    }
    let t = (v.abs() / max_abs).min(1.0) as f64;
    let g = (255.0 * (1.0 - t)).round() as u8;
    if v > 0.0 {
        [255, g, g]
    } else {
        [g, g, 255]
    }
}

/// Binary PPM (P6, maxval 255) of a signed map.
pub fn render_heatmap(map: &ActivationDifferenceMap) -> Result<Vec<u8>> {
    let &[h, w] = map.values.shape() else {
        return Err(Error::Shape { expected: vec![0, 0], actual: map.values.shape().to_vec() });
    };
    heatmap_ppm(map.data(), h, w)
}

pub fn heatmap_ppm(values: &[f32], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::Shape { expected: vec![height, width], actual: vec![values.len()] });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("heatmap value".into()));
    }
    let max_abs = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &v in values {
        out.extend_from_slice(&diverging(v, max_abs));
    }
    Ok(out)
}

pub const CSV_HEADER: [&str; 5] = ["strategy", "seed", "task", "phase", "accuracy"];

/// RFC-4180 CSV of the accuracy table. Missing accuracies are empty fields.
pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.seed.to_string(),
            r.task.to_string(),
            r.phase.to_string(),
            r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Invalid(format!("unexpected metrics header {header:?}")));
    }
    let field = |rec: &csv::StringRecord, i: usize| rec.get(i).unwrap_or("").to_string();
    let num = |s: String, what: &str| -> Result<u64> {
        s.parse().map_err(|_| Error::Invalid(format!("bad {what} `{s}` in metrics csv")))
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let acc = field(&rec, 4);
        rows.push(MetricRow {
            strategy: field(&rec, 0),
            seed: num(field(&rec, 1), "seed")?,
            task: num(field(&rec, 2), "task")? as usize,
            phase: num(field(&rec, 3), "phase")? as usize,
            accuracy: if acc.is_empty() {
                None
            } else {
                Some(acc.parse().map_err(|_| Error::Invalid(format!("bad accuracy `{acc}` in metrics csv")))?)
            },
        });
    }
    Ok(rows)
}

/// The JSON side of the metrics: rows, per-seed summaries and freeze plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<StrategySummary>,
    pub increments: Vec<IncrementSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementSummary {
    pub seed: u64,
    pub increment: usize,
    pub critical_frozen: Vec<usize>,
    pub probe_forgetting_block: usize,
    pub finetune_forgetting_block: usize,
}

impl From<&IncrementRecord> for IncrementSummary {
    fn from(r: &IncrementRecord) -> Self {
        IncrementSummary {
            seed: r.seed,
            increment: r.increment,
            critical_frozen: r.plan.frozen.clone(),
            probe_forgetting_block: r.probe.forgetting_block,
            finetune_forgetting_block: r.finetune.forgetting_block,
        }
    }
}

pub fn metrics_json(m: &ScenarioMetrics) -> String {
    let j = MetricsJson {
        rows: m.rows.clone(),
        summary: m.summary.clone(),
        increments: m.increments.iter().map(IncrementSummary::from).collect(),
    };
    serde_json::to_string_pretty(&j).expect("serializable") + "\n"
}

/// Mean IoU per block over the images of a dissection.
pub fn mean_curve(r: &crate::cfd::DissectionResult) -> Vec<f64> {
    let k = r.per_image.first().map_or(0, |i| i.ious.len());
    let n = r.per_image.len() as f64;
    (0..k).map(|j| r.per_image.iter().map(|i| i.ious[j]).sum::<f64>() / n).collect()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write every scenario artefact into `dir`: `metrics.csv`, `metrics.json`,
/// per-increment dissection JSON, one IoU plot per seed, and heatmaps.
pub fn write_scenario(dir: &Path, m: &ScenarioMetrics) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("metrics.csv"), metrics_csv(&m.rows)?)?;
    write(&dir.join("metrics.json"), metrics_json(m))?;
    let mut seeds: Vec<u64> = m.increments.iter().map(|i| i.seed).collect();
    seeds.dedup();
    for seed in seeds {
        let mut series = Vec::new();
        for inc in m.increments.iter().filter(|i| i.seed == seed) {
            let t = inc.increment;
            write(&dir.join(format!("dissection-seed{seed}-inc{t}.json")), inc.finetune.to_json())?;
            write(&dir.join(format!("probe-seed{seed}-inc{t}.json")), inc.probe.to_json())?;
            series.push((format!("increment {t} fine-tune"), mean_curve(&inc.finetune)));
            series.push((format!("increment {t} probe"), mean_curve(&inc.probe)));
        }
        let spec = PlotSpec {
            title: format!("Mean IoU per block, seed {seed}"),
            x_label: "conv block".into(),
            y_label: "IoU".into(),
            series,
        };
        write(&dir.join(format!("iou-seed{seed}.svg")), plot_iou_curves(&spec)?)?;
    }
    for h in &m.heatmaps {
        write(&dir.join(format!("{}.ppm", h.name)), render_heatmap(&h.map)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pda::{OcclusionConfig, Replacement, Target};
    use crate::tensor::Tensor;

    fn spec(series: Vec<(String, Vec<f64>)>) -> PlotSpec {
        PlotSpec { title: "t".into(), x_label: "block".into(), y_label: "IoU".into(), series }
    }

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter_map(|l| l.strip_prefix("<polyline points=\""))
            .map(|l| {
                l.split('"')
                    .next()
                    .unwrap()
                    .split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn one_polyline_per_series() {
        let svg = plot_iou_curves(&spec(vec![("a".into(), vec![0.8, 0.6, 0.4, 0.3])])).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.starts_with("<?xml"));
        let two = plot_iou_curves(&spec(vec![("a".into(), vec![1.0, 0.5]), ("b<&>".into(), vec![0.0, 0.25])])).unwrap();
        assert_eq!(two.matches("<polyline").count(), 2);
        assert!(two.contains("b&lt;&amp;&gt;"));
    }

    #[test]
    fn plot_is_deterministic() {
        let s = spec(vec![("a".into(), vec![0.123456, 0.9]), ("b".into(), vec![0.5, 0.5])]);
        assert_eq!(plot_iou_curves(&s).unwrap(), plot_iou_curves(&s).unwrap());
    }

    #[test]
    fn coordinates_invert() {
        let values = vec![0.8, 0.642, 0.388, 0.35, 0.0, 1.0];
        let svg = plot_iou_curves(&spec(vec![("a".into(), values.clone())])).unwrap();
        let pts = &polylines(&svg)[0];
        assert_eq!(pts.len(), values.len());
        for (&(_, y), &v) in pts.iter().zip(&values) {
            // half a pixel in value units
            assert!((value_of(y) - v).abs() * plot_height() <= 0.5);
        }
        assert!(pts.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn plot_errors() {
        assert!(plot_iou_curves(&spec(vec![])).is_err());
        assert!(plot_iou_curves(&spec(vec![("a".into(), vec![0.5, 0.5]), ("b".into(), vec![0.5])])).is_err());
        assert!(plot_iou_curves(&spec(vec![("a".into(), vec![1.5])])).is_err());
        assert!(plot_iou_curves(&spec(vec![("a".into(), vec![f64::NAN])])).is_err());
    }

    fn map(values: Vec<f32>, side: usize) -> ActivationDifferenceMap {
        ActivationDifferenceMap {
            target: Target::Logit { class: 0 },
            values: Tensor::from_f32(vec![side, side], values).unwrap(),
            config: OcclusionConfig::new(Replacement::FixedGray { value: 0.5 }),
        }
    }

    fn pixels(ppm: &[u8]) -> &[u8] {
        // header is three newline-terminated lines
        let mut seen = 0;
        let start = ppm.iter().position(|&b| {
            seen += (b == b'\n') as usize;
            seen == 3
        });
        &ppm[start.unwrap() + 1..]
    }

    #[test]
    fn all_zero_is_white() {
        let ppm = render_heatmap(&map(vec![0.0; 16], 4)).unwrap();
        assert!(ppm.starts_with(b"P6\n4 4\n255\n"));
        assert!(pixels(&ppm).iter().all(|&b| b == 255));
    }

    #[test]
    fn single_positive_pixel_is_red() {
        let mut v = vec![0.0; 16];
        v[5] = 0.3;
        let ppm = render_heatmap(&map(v, 4)).unwrap();
        let px = pixels(&ppm);
        assert_eq!(&px[15..18], &[255, 0, 0]);
        for i in (0..16).filter(|&i| i != 5) {
            assert_eq!(&px[3 * i..3 * i + 3], &[255, 255, 255]);
        }
    }

    #[test]
    fn negation_swaps_red_and_blue() {
        let v: Vec<f32> = (0..64).map(|i| ((i * 37 % 19) as f32 - 9.0) * 0.1).collect();
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        let a = render_heatmap(&map(v, 8)).unwrap();
        let b = render_heatmap(&map(neg, 8)).unwrap();
        for (p, q) in pixels(&a).chunks(3).zip(pixels(&b).chunks(3)) {
            assert_eq!((p[0], p[1], p[2]), (q[2], q[1], q[0]));
        }
    }

    #[test]
    fn non_finite_heatmap_is_rejected() {
        assert!(heatmap_ppm(&[f32::NAN], 1, 1).is_err());
    }

    fn rows() -> Vec<MetricRow> {
        let mut v = Vec::new();
        for strategy in ["critical", "finetune"] {
            for seed in [1, 2] {
                for phase in 0..3 {
                    for task in 0..3 {
                        v.push(MetricRow {
                            strategy: strategy.into(),
                            seed,
                            task,
                            phase,
                            accuracy: (task <= phase).then_some(1.0 / (1 + task + phase + seed as usize) as f64),
                        });
                    }
                }
            }
        }
        v
    }

    #[test]
    fn csv_round_trip() {
        let r = rows();
        let text = metrics_csv(&r).unwrap();
        assert!(text.starts_with("strategy,seed,task,phase,accuracy\n"));
        // strategies × seeds × tasks × phases, plus the header
        assert_eq!(text.lines().count(), 2 * 2 * 3 * 3 + 1);
        assert_eq!(parse_metrics_csv(&text).unwrap(), r);
        assert!(parse_metrics_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = ScenarioMetrics { rows: rows(), summary: vec![], increments: vec![], heatmaps: vec![] };
        let back: MetricsJson = serde_json::from_str(&metrics_json(&m)).unwrap();
        assert_eq!(back.rows, m.rows);
    }
}
