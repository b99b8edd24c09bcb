//! SVG line charts and a text summary built from evaluation JSON files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use grouplens_core::grouping::Metric;
use grouplens_core::mapio::MapKind;

use crate::eval::{GroupingReport, SaliencyReport};
use crate::output::write_bytes;

/// Reference maxima for the two saliency ratios from earlier saliency-model benchmarks.
pub const REFERENCE_MSR_TARG: f64 = 1.4;
pub const REFERENCE_MSR_BG: f64 = 1.52;

const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A plain line chart with labeled axes and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], desc: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 160.0, 40.0, 50.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x0, mut x1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if all.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    y0 = y0.min(0.0);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, "<desc>{}</desc>", escape(desc));
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        (w - right + left) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom,
        h - bottom
    );
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.3}</text>"#,
            left - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let mut xs: Vec<f64> = all.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for x in xs {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{x}</text>"#,
            px(x),
            h - bottom + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        (w - right + left) / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            pts.join(" ")
        );
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            w - right + 10.0,
            w - right + 30.0,
            w - right + 36.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn grouping_charts(r: &GroupingReport, out: &Path) -> Result<Vec<PathBuf>> {
    let desc = serde_json::to_string(&r.config)?;
    let mut written = Vec::new();
    for metric in Metric::ALL {
        let mut dims: Vec<&str> = r.summaries.iter().map(|s| s.feature_dim.as_str()).collect();
        dims.sort_unstable();
        dims.dedup();
        let series: Vec<Series> = dims
            .iter()
            .map(|d| Series {
                label: d.to_string(),
                points: r
                    .summaries
                    .iter()
                    .filter(|s| s.metric == metric && s.feature_dim == *d)
                    .filter_map(|s| s.mean.map(|m| (s.block as f64, m)))
                    .collect(),
                dashed: false,
            })
            .collect();
        let svg = line_chart(&format!("{} mean {metric} per block", r.model_id), "block", metric.name(), &series, &desc);
        written.push(write_bytes(&out.join(format!("grouping_{}_{metric}.svg", r.model_id)), svg.as_bytes())?);
    }
    Ok(written)
}

fn saliency_charts(r: &SaliencyReport, out: &Path) -> Result<Vec<PathBuf>> {
    let desc = serde_json::to_string(&r.config)?;
    let mut written = Vec::new();
    let mut thresholds: Vec<usize> = r.rates.iter().map(|x| x.threshold).collect();
    thresholds.sort_unstable();
    thresholds.dedup();
    for kind in MapKind::ALL {
        let mut series: Vec<Series> = thresholds
            .iter()
            .map(|&t| Series {
                label: format!("{t} fixations"),
                points: r
                    .rates
                    .iter()
                    .filter(|x| x.kind == kind && x.feature_dim == "all" && x.threshold == t)
                    .map(|x| (x.block as f64, x.detection_rate))
                    .collect(),
                dashed: false,
            })
            .collect();
        if series.iter().all(|s| s.points.is_empty()) {
            continue;
        }
        let blocks: Vec<f64> = series[0].points.iter().map(|p| p.0).collect();
        for c in &r.chance {
            if let Some(a) = c.analytic {
                series.push(Series {
                    label: format!("chance {}", c.threshold),
                    points: blocks.iter().map(|&b| (b, a)).collect(),
                    dashed: true,
                });
            }
        }
        let svg = line_chart(
            &format!("{} {kind} detection rate", r.model_id),
            "block",
            "detection rate",
            &series,
            &desc,
        );
        written.push(write_bytes(&out.join(format!("saliency_{}_{kind}_detection.svg", r.model_id)), svg.as_bytes())?);

        let msr_series = vec![
            Series {
                label: "MSR_targ".into(),
                points: r
                    .msr
                    .iter()
                    .filter(|m| m.kind == kind)
                    .filter_map(|m| m.mean_msr_targ.map(|v| (m.block as f64, v)))
                    .collect(),
                dashed: false,
            },
            Series {
                label: "MSR_bg".into(),
                points: r
                    .msr
                    .iter()
                    .filter(|m| m.kind == kind)
                    .filter_map(|m| m.mean_msr_bg.map(|v| (m.block as f64, v)))
                    .collect(),
                dashed: false,
            },
        ];
        let svg = line_chart(&format!("{} {kind} saliency ratios", r.model_id), "block", "ratio", &msr_series, &desc);
        written.push(write_bytes(&out.join(format!("saliency_{}_{kind}_msr.svg", r.model_id)), svg.as_bytes())?);
    }
    Ok(written)
}

fn summary(grouping: &[GroupingReport], saliency: &[SaliencyReport]) -> String {
    let mut s = String::from("# Evaluation summary\n");
    for r in grouping {
        let _ = writeln!(s, "\n## Grouping: {}\n", r.model_id);
        let _ = writeln!(s, "| block | feature_dim | metric | mean | n_stimuli |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for x in &r.summaries {
            let mean = x.mean.map(|m| format!("{m:.4}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(s, "| {} | {} | {} | {mean} | {} |", x.block, x.feature_dim, x.metric, x.n_stimuli);
        }
    }
    for r in saliency {
        let _ = writeln!(s, "\n## Saliency: {}\n", r.model_id);
        let _ = writeln!(s, "Chance detection rates:\n");
        let _ = writeln!(s, "| fixations | cells | analytic f/n | Monte Carlo | quoted reference |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        for c in &r.chance {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                c.threshold,
                c.n_cells,
                f(c.analytic),
                f(c.monte_carlo),
                f(c.reference)
            );
        }
        let _ = writeln!(
            s,
            "\nThe quoted reference levels differ from the analytic f/n and are listed for comparison only.\n"
        );
        let _ = writeln!(s, "| kind | block | mean MSR_targ | mean MSR_bg | defined (targ/bg) |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for m in &r.msr {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {}/{} of {} |",
                m.kind,
                m.block,
                f(m.mean_msr_targ),
                f(m.mean_msr_bg),
                m.n_defined_targ,
                m.n_defined_bg,
                m.n
            );
        }
        let _ = writeln!(
            s,
            "\nBest previously reported ratios for comparison: MSR_targ {REFERENCE_MSR_TARG}, MSR_bg {REFERENCE_MSR_BG}."
        );
    }
    s
}

/// Reads every `grouping_*.json` and `saliency_*.json` in `reports` and writes charts and `summary.md` to `out`.
pub fn report(reports: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(reports)
        .with_context(|| format!("reading {}", reports.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let mut grouping = Vec::new();
    let mut saliency = Vec::new();
    for path in files {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        if name.starts_with("grouping_") {
            grouping.push(serde_json::from_str::<GroupingReport>(&text).with_context(|| format!("parsing {name}"))?);
        } else if name.starts_with("saliency_") {
            saliency.push(serde_json::from_str::<SaliencyReport>(&text).with_context(|| format!("parsing {name}"))?);
        }
    }
    if grouping.is_empty() && saliency.is_empty() {
        bail!("no grouping_*.json or saliency_*.json reports in {}", reports.display());
    }
    let mut written = Vec::new();
    for r in &grouping {
        written.extend(grouping_charts(r, out)?);
    }
    for r in &saliency {
        written.extend(saliency_charts(r, out)?);
    }
    written.push(write_bytes(&out.join("summary.md"), summary(&grouping, &saliency).as_bytes())?);
    Ok(written)
}
