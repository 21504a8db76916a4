use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ringsim::trace::TraceRow;

use crate::audit::{find_trace_dirs, read_rows};
use crate::curves::{time_grid, Band, CURVE_POINTS};
use crate::experiment::TraceMeta;
use crate::CliError;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Groups the traces below `root` by the directory holding their seed
/// directories, so `ringleader/seed-*` and `ringleader/gamma-0.1/seed-*`
/// become separate series.
fn load_groups(root: &Path) -> Result<BTreeMap<String, Vec<Vec<TraceRow>>>, CliError> {
    let mut groups: BTreeMap<String, Vec<Vec<TraceRow>>> = BTreeMap::new();
    for dir in find_trace_dirs(root)? {
        let rows = read_rows(&dir)?;
        if rows.is_empty() {
            eprintln!("notice: {} has no updates; skipped", dir.display());
            continue;
        }
        let parent = dir.parent().unwrap_or(&dir);
        let mut label = parent.strip_prefix(root).map(|p| p.display().to_string()).unwrap_or_default();
        if label.is_empty() {
            label = TraceMeta::read(&dir).map(|m| m.algorithm).unwrap_or_else(|_| "traces".into());
        }
        groups.entry(label).or_default().push(rows);
    }
    Ok(groups)
}

/// `plot <trace-dir>`: median and IQR of `‖∇f‖²` over virtual time, one
/// series per group, smoothed after aggregation. Returns the SVG path.
pub fn plot_dir(root: &Path, window: usize, output: Option<PathBuf>) -> Result<PathBuf, CliError> {
    if window == 0 {
        return Err(CliError::Config("window must be at least 1".into()));
    }
    let groups = load_groups(root)?;
    if groups.is_empty() {
        return Err(CliError::Config(format!("no non-empty traces below {}", root.display())));
    }
    let end = groups
        .values()
        .flatten()
        .map(|r| r.last().expect("empty traces are skipped").virtual_time)
        .fold(0.0, f64::max);
    let times = time_grid(if end > 0.0 { end } else { 1.0 }, CURVE_POINTS);
    let series: Vec<(String, Band)> = groups
        .iter()
        .filter_map(|(label, runs)| {
            let refs: Vec<&[TraceRow]> = runs.iter().map(Vec::as_slice).collect();
            Band::aggregate(&refs, &times).map(|b| (format!("{label} ({} runs)", runs.len()), b.smoothed(window)))
        })
        .collect();
    let path = output.unwrap_or_else(|| root.join("convergence.svg"));
    fs::write(&path, render_svg(&series))?;
    Ok(path)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal static SVG: log-scale y axis, one IQR band and median line per series.
pub fn render_svg(series: &[(String, Band)]) -> String {
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let positive = series
        .iter()
        .flat_map(|(_, b)| b.q25.iter().chain(&b.q75).chain(&b.median))
        .copied()
        .filter(|v| *v > 0.0 && v.is_finite());
    let (lo, hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (mut dlo, mut dhi) = if lo.is_finite() { (lo.log10().floor(), hi.log10().ceil()) } else { (-1.0, 0.0) };
    if dhi <= dlo {
        dlo -= 1.0;
        dhi += 1.0;
    }
    let xmax = series.iter().filter_map(|(_, b)| b.times.last()).copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let floor = 10f64.powf(dlo);
    let x = |t: f64| LEFT + plot_w * t / xmax;
    let y = |v: f64| TOP + plot_h * (1.0 - (v.max(floor).log10() - dlo) / (dhi - dlo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#);
    for d in dlo as i32..=dhi as i32 {
        let yy = y(10f64.powi(d));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    for i in 0..=5 {
        let t = xmax * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x(t),
            TOP + plot_h + 16.0,
            format_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">virtual time</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">median |grad f|^2 (IQR band)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    for (i, (label, b)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let upper = b.times.iter().zip(&b.q75).map(|(&t, &v)| format!("{:.2},{:.2}", x(t), y(v)));
        let lower = b.times.iter().zip(&b.q25).rev().map(|(&t, &v)| format!("{:.2},{:.2}", x(t), y(v)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = b.times.iter().zip(&b.median).map(|(&t, &v)| format!("{:.2},{:.2}", x(t), y(v))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(t: f64) -> String {
    if t == 0.0 || (t.abs() >= 0.01 && t.abs() < 1e5) {
        let v = format!("{t:.2}");
        v.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{t:.1e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band(scale: f64) -> Band {
        let times = vec![0.0, 1.0, 2.0];
        Band {
            median: times.iter().map(|t| scale / (1.0 + t)).collect(),
            q25: times.iter().map(|t| 0.5 * scale / (1.0 + t)).collect(),
            q75: times.iter().map(|t| 2.0 * scale / (1.0 + t)).collect(),
            times,
        }
    }

    #[test]
    fn one_band_and_line_per_series() {
        let svg = render_svg(&[("a<b".into(), band(1.0)), ("c".into(), band(10.0))]);
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn single_series_plot() {
        let svg = render_svg(&[("only".into(), band(1.0))]);
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert!(svg.contains("1e-1") && svg.contains("1e0"));
    }

    #[test]
    fn ticks_are_short() {
        assert_eq!(format_tick(0.0), "0");
        assert_eq!(format_tick(250.0), "250");
        assert_eq!(format_tick(0.25), "0.25");
        assert_eq!(format_tick(2e6), "2.0e6");
    }
}
