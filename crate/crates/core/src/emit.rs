//! Report emission: JSON, CSV tables, and generated SVG plots (pure
//! vector output, no external renderer).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::partition::AdaptivePartition;
use crate::report::VerificationReport;

pub fn report_json(report: &VerificationReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("serialize report: {e}")))
}

/// JSON with the volatile `timestamp` field removed; the determinism
/// contract compares this form.
pub fn report_json_without_timestamp(report: &VerificationReport) -> Result<String> {
    let mut v: serde_json::Value = serde_json::to_value(report)
        .map_err(|e| Error::Config(format!("serialize report: {e}")))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timestamp");
    }
    serde_json::to_string_pretty(&v).map_err(|e| Error::Config(format!("{e}")))
}

/// One row per orbit: index, starting coordinates, exponents, positive sum.
pub fn spectrum_csv(rows: &[crate::lyapunov::OrbitRow]) -> String {
    let mut out = String::from("orbit,x0,exponents,positive_sum\n");
    for r in rows {
        let x0 = r.x0.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        let ex = r
            .exponents
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(out, "{},{},{},{}", r.orbit, x0, ex, r.positive_sum);
    }
    out
}

/// Block-entropy table: one row per word length.
pub fn entropy_csv(report: &VerificationReport) -> String {
    let mut out = String::from("partition,t,h_t,h_t_over_t,increment\n");
    let mut push = |be: &crate::entropy::BlockEntropy| {
        for row in &be.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                be.partition, row.t, row.h_t, row.h_t_over_t, row.increment
            );
        }
    };
    if let Some(nb) = &report.entropy.natural {
        push(nb);
    }
    push(&report.entropy.adaptive);
    out
}

pub fn sweep_csv(report: &VerificationReport) -> String {
    let mut out = String::from(
        "n,l,m,lhs_slope_per_f,lhs_stderr,conditional_per_f,partition_entropy,entropy_bound,rhs_per_f,margin,flags\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.sweep {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.l,
            r.m,
            opt(r.lhs_slope_per_f),
            opt(r.lhs_stderr),
            opt(r.conditional_per_f),
            opt(r.partition_entropy),
            opt(r.entropy_bound),
            r.rhs_per_f,
            opt(r.margin),
            r.flags.join(";")
        );
    }
    out
}

/// Verification summary row (lhs, rhs, margin) for spreadsheets.
pub fn summary_csv(report: &VerificationReport) -> String {
    let m = &report.margin;
    format!(
        "benchmark,seed,lhs,lhs_stderr,rhs,rhs_stderr,margin,pass\n{},{},{},{},{},{},{},{}\n",
        report.benchmark,
        report.seed,
        m.lhs_best,
        m.lhs_stderr,
        m.rhs,
        m.rhs_stderr,
        m.margin,
        m.pass
    )
}

/// Partition dump: parameters, per-level anchors (capped), cell counts,
/// entropy figures.
pub fn partition_json(part: &AdaptivePartition, anchor_cap: usize) -> Result<String> {
    #[derive(serde::Serialize)]
    struct LevelDump {
        s: u32,
        eps: f64,
        degenerate: bool,
        anchor_count: usize,
        anchors_truncated: bool,
        anchors: Vec<Vec<f64>>,
    }
    #[derive(serde::Serialize)]
    struct Dump {
        params: crate::partition::LevelParams,
        levels: Vec<LevelDump>,
        cells_per_level: std::collections::BTreeMap<u32, u64>,
        entropy: crate::partition::PartitionEntropy,
        truncation_mass: f64,
        off_net_mass: f64,
    }
    let dump = Dump {
        params: part.params,
        levels: part
            .levels
            .values()
            .map(|net| LevelDump {
                s: net.s,
                eps: net.eps,
                degenerate: net.degenerate,
                anchor_count: net.anchors.len(),
                anchors_truncated: net.anchors.len() > anchor_cap,
                anchors: net
                    .anchors
                    .iter()
                    .take(anchor_cap)
                    .map(|p| p.coords.clone())
                    .collect(),
            })
            .collect(),
        cells_per_level: part.cells_per_level(),
        entropy: part.entropy(),
        truncation_mass: part.truncation_mass(),
        off_net_mass: part.off_net_mass(),
    };
    serde_json::to_string_pretty(&dump).map_err(|e| Error::Config(format!("{e}")))
}

const LEVEL_COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// SVG snapshot of a planar partition: one rectangle per occupied cell,
/// colored by level.
pub fn partition_svg(part: &AdaptivePartition) -> Result<String> {
    if part.dim() != 2 {
        return Err(Error::InvalidArgument("partition SVG needs a planar chart".into()));
    }
    // world bounds from anchors
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for net in part.levels.values() {
        for a in &net.anchors {
            for i in 0..2 {
                lo[i] = lo[i].min(a.coords[i] - net.eps);
                hi[i] = hi[i].max(a.coords[i] + net.eps);
            }
        }
    }
    if !lo[0].is_finite() {
        lo = [0.0; 2];
        hi = [1.0; 2];
    }
    let size = 800.0;
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let sx = |x: f64| (x - lo[0]) / span * size;
    let sy = |y: f64| size - (y - lo[1]) / span * size;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {size} {size}\">"
    );
    let _ = writeln!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{size}\" height=\"{size}\" fill=\"white\"/>"
    );
    for (key, _count) in part.cell_counts.iter() {
        let net = &part.levels[&key.s];
        let anchor = &net.anchors[key.anchor as usize];
        let l = part.params.l;
        let sub_half = net.eps / (1u64 << l) as f64;
        let ks = if l == 0 {
            vec![0i64; 2]
        } else {
            crate::geometry::subcell_multi_index(key.sub, l, 2)
        };
        let cx = anchor.coords[0] + ks[0] as f64 * sub_half;
        let cy = anchor.coords[1] + ks[1] as f64 * sub_half;
        let color = LEVEL_COLORS[(key.s as usize) % LEVEL_COLORS.len()];
        let w = (2.0 * sub_half) / span * size;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.4}\" y=\"{:.4}\" width=\"{:.6}\" height=\"{:.6}\" fill=\"{}\" fill-opacity=\"0.55\" stroke=\"black\" stroke-width=\"0.1\"/>",
            sx(cx - sub_half),
            sy(cy + sub_half),
            w.max(0.4),
            w.max(0.4),
            color
        );
    }
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

/// Simple polyline chart: series of (x, y) with axes and labels.
pub fn line_chart_svg(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, margin) = (720.0, 440.0, 60.0);
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (_, pts) in series {
        for (x, y) in pts {
            if x.is_finite() && y.is_finite() {
                xs.push(*x);
                ys.push(*y);
            }
        }
    }
    let (x0, x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let (y0, y1) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let (x0, x1) = if x0.is_finite() && x1 > x0 { (x0, x1) } else { (0.0, 1.0) };
    let (y0, y1) = if y0.is_finite() && y1 > y0 { (y0, y1) } else { (0.0, 1.0) };
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * (w - 2.0 * margin);
    let sy = |y: f64| h - margin - (y - y0) / (y1 - y0) * (h - 2.0 * margin);

    let mut svg = String::new();
    let _ = writeln!(svg, "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\">");
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"16\">{}</text>",
        margin, title
    );
    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{yb}\" x2=\"{xe}\" y2=\"{yb}\" stroke=\"black\"/>\
         <line x1=\"{m}\" y1=\"{yt}\" x2=\"{m}\" y2=\"{yb}\" stroke=\"black\"/>",
        m = margin,
        yb = h - margin,
        xe = w - margin,
        yt = margin
    );
    for (label, x) in [(x0, x0), (x1, x1)] {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\">{:.4}</text>",
            sx(x) - 10.0,
            h - margin + 18.0,
            label
        );
    }
    for y in [y0, y1] {
        let _ = writeln!(
            svg,
            "<text x=\"4\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\">{:.4}</text>",
            sy(y) + 4.0,
            y
        );
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = LEVEL_COLORS[i % LEVEL_COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
                color,
                path.join(" ")
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"{}\">{}</text>",
            w - margin - 160.0,
            margin + 16.0 * (i as f64 + 1.0),
            color,
            name
        );
    }
    let _ = writeln!(svg, "</svg>");
    svg
}

/// Convergence chart of the entropy estimates vs word length and the
/// exponent trend vs m.
pub fn convergence_svg(report: &VerificationReport) -> String {
    let mut series = Vec::new();
    if let Some(nb) = &report.entropy.natural {
        series.push((
            format!("H_t/t [{}]", nb.partition),
            nb.rows.iter().map(|r| (r.t as f64, r.h_t_over_t)).collect(),
        ));
        series.push((
            format!("increments [{}]", nb.partition),
            nb.rows.iter().map(|r| (r.t as f64, r.increment)).collect(),
        ));
    }
    series.push((
        "exterior growth / m".to_string(),
        report
            .exterior_trend
            .iter()
            .map(|g| (g.m as f64, g.integral.value))
            .collect(),
    ));
    series.push((
        "rhs".to_string(),
        vec![(1.0, report.rhs.estimate), (report.exterior_trend.last().map(|g| g.m as f64).unwrap_or(2.0), report.rhs.estimate)],
    ));
    line_chart_svg(&format!("{}: entropy vs exponents", report.benchmark), &series)
}

pub enum EmitFormat {
    Json,
    Csv,
    Svg,
}

/// Write the report artifacts into `out_dir` and return the paths.
pub fn emit(
    report: &VerificationReport,
    partition: Option<&AdaptivePartition>,
    formats: &[EmitFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut write = |name: &str, content: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, content)
            .map_err(|e| Error::Config(format!("write {}: {e}", path.display())))?;
        written.push(path);
        Ok(())
    };
    for f in formats {
        match f {
            EmitFormat::Json => {
                write("report.json", report_json(report)?)?;
                if let Some(p) = partition {
                    write("partition.json", partition_json(p, 5_000)?)?;
                }
            }
            EmitFormat::Csv => {
                write("summary.csv", summary_csv(report))?;
                write("entropy.csv", entropy_csv(report))?;
                write("sweep.csv", sweep_csv(report))?;
            }
            EmitFormat::Svg => {
                write("convergence.svg", convergence_svg(report))?;
                if let Some(p) = partition {
                    if p.dim() == 2 {
                        write("partition.svg", partition_svg(p)?)?;
                    }
                }
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_headers_are_stable() {
        assert!(spectrum_csv(&[]).starts_with("orbit,x0,exponents,positive_sum"));
        let line = summary_csv_header();
        assert!(line.contains("lhs") && line.contains("rhs") && line.contains("margin"));
    }

    fn summary_csv_header() -> String {
        "benchmark,seed,lhs,lhs_stderr,rhs,rhs_stderr,margin,pass".to_string()
    }

    #[test]
    fn line_chart_handles_empty_series() {
        let svg = line_chart_svg("empty", &[]);
        assert!(svg.contains("<svg"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
