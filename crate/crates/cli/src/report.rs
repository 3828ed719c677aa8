//! Collects metric and statistic files from run directories into CSV
//! tables and SVG histograms.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use subrank::metrics::{aggregate, HistogramBin, MetricReport};
use subrank::stats::StratificationRecord;

use crate::commands::{run_dir_name, StatSummary, METRICS_FILE, STAT_SUMMARY_FILE, STRATIFICATION_FILE};
use crate::error::CliError;

const PVALUE_BINS: usize = 20;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Report(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Report(e.to_string())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn read_histogram(path: &Path) -> Result<Vec<HistogramBin>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.records()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let bad = |_| CliError::Report(format!("{}: malformed row {row:?}", path.display()));
            Ok(HistogramBin {
                left: field(0).parse().map_err(bad)?,
                right: field(1).parse().map_err(bad)?,
                count: field(2).parse().map_err(|_| CliError::Report(format!("{}: malformed count", path.display())))?,
            })
        })
        .collect()
}

/// Bar chart of a histogram.
pub fn histogram_svg(bins: &[HistogramBin], title: &str) -> String {
    let (w, h, pad) = (480.0, 300.0, 40.0);
    let max = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let bar_w = (w - 2.0 * pad) / bins.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for (i, b) in bins.iter().enumerate() {
        let bh = (h - 2.0 * pad) * b.count as f64 / max;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4878a8"/>"##,
            pad + i as f64 * bar_w,
            h - pad - bh,
            (bar_w - 1.0).max(0.5),
            bh
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = h - pad,
        x2 = w - pad
    );
    if let (Some(first), Some(last)) = (bins.first(), bins.last()) {
        for (x, v, anchor) in [(pad, first.left, "start"), (w - pad, last.right, "end")] {
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{v:.4}</text>"#,
                h - pad + 16.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">max {}</text>"#,
        pad,
        pad - 6.0,
        max as usize
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `summary.csv`, `stat.csv` and `plots/*.svg` for the given runs.
pub fn report(runs: &[PathBuf], out: &Path) -> Result<Vec<String>, CliError> {
    let plots = out.join("plots");
    std::fs::create_dir_all(&plots)?;
    let mut summary = csv::Writer::from_path(out.join("summary.csv")).map_err(csv_err)?;
    summary
        .write_record([
            "run",
            "dataset",
            "model",
            "cs_median",
            "abr_median",
            "top2_ratio_median",
            "n_tokens",
            "n_cs_excluded",
        ])
        .map_err(csv_err)?;
    let mut stat = csv::Writer::from_path(out.join("stat.csv")).map_err(csv_err)?;
    stat.write_record([
        "run",
        "dataset",
        "model",
        "k_s",
        "alpha",
        "group",
        "count",
        "row_proportion",
        "significant",
    ])
    .map_err(csv_err)?;

    let mut files = vec!["summary.csv".to_string(), "stat.csv".to_string()];
    let mut found = false;
    for dir in runs {
        let run = run_dir_name(dir);
        if let Some(m) = read_json::<MetricReport>(&dir.join(METRICS_FILE))? {
            found = true;
            summary
                .write_record([
                    run.clone(),
                    m.dataset.clone(),
                    m.model.clone(),
                    fmt_opt(m.cs_median),
                    fmt_opt(m.abr_median),
                    fmt_opt(m.top2_ratio_median),
                    m.n_tokens.to_string(),
                    m.n_cs_excluded.to_string(),
                ])
                .map_err(csv_err)?;
            for file in &m.distribution_files {
                let bins = read_histogram(&dir.join(file))?;
                let metric = file.trim_end_matches(".csv").trim_end_matches("_hist");
                let name = format!("plots/{run}_{metric}.svg");
                std::fs::write(out.join(&name), histogram_svg(&bins, &format!("{run}: {metric} ({})", m.model)))?;
                files.push(name);
            }
        }
        if let Some(st) = read_json::<StatSummary>(&dir.join(STAT_SUMMARY_FILE))? {
            found = true;
            for (g, s) in &st.groups {
                stat.write_record([
                    run.clone(),
                    st.dataset.clone(),
                    st.model.clone(),
                    st.k_s.to_string(),
                    st.alpha.to_string(),
                    g.to_string(),
                    s.count.to_string(),
                    fmt_opt(s.row_proportion),
                    fmt_opt(s.significant),
                ])
                .map_err(csv_err)?;
            }
        }
        let strata = dir.join(STRATIFICATION_FILE);
        if strata.exists() {
            let text = std::fs::read_to_string(&strata)?;
            let ps = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str::<StratificationRecord>(l).map(|r| r.p_value))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Report(format!("{}: {e}", strata.display())))?;
            let ps: Vec<f64> = ps.into_iter().flatten().collect();
            if let Ok(agg) = aggregate(&ps, PVALUE_BINS) {
                let name = format!("plots/{run}_pvalue.svg");
                std::fs::write(out.join(&name), histogram_svg(&agg.histogram, &format!("{run}: p-value")))?;
                files.push(name);
            }
        }
    }
    summary.flush()?;
    stat.flush()?;
    if !found {
        return Err(CliError::Report(format!(
            "none of the {} run directories holds {METRICS_FILE} or {STAT_SUMMARY_FILE}",
            runs.len()
        )));
    }
    Ok(files)
}
