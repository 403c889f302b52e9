//! Report tables and figure data built from sweep and rollout artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{DatasetStore, TimeRange};
use crate::error::{Error, Result};
use crate::eval::{aggregate_seeds, reference_moments, rollout_period, RolloutStats, ScoreFile};
use crate::models::Arch;
use crate::train::{run_dir, SweepEntry, SweepManifest};


/// Column order of `summary.csv`. Lists inside a cell are `;`-separated and
/// undefined statistics are written as `NA`.
pub const SUMMARY_COLUMNS: [&str; 13] = [
    "arch",
    "n_prognostic",
    "m_steps",
    "n_layers",
    "hidden_dim",
    "n_runs",
    "n_scored",
    "finite_count",
    "mean_rmse",
    "std_rmse",
    "climatology_rmse",
    "seeds",
    "per_seed_rmse",
];

/// One configuration of the sweep, aggregated over its seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub arch: Arch,
    pub n_prognostic: usize,
    pub m_steps: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_runs: usize,
    /// Seeds with a score; failed trainings count as infinite scores.
    pub seeds: Vec<u64>,
    pub scores: Vec<f64>,
    pub finite_count: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub climatology: Option<f64>,
}

type ConfigKey = (Arch, usize, usize, usize, usize);

fn key(e: &SweepEntry) -> ConfigKey {
    (e.arch, e.n_prognostic, e.m_steps, e.n_layers, e.hidden_dim)
}

/// The score of one run: its `score.json`, `inf` for a failed training,
/// or `None` when it has not been evaluated.
fn run_score(run_root: &Path, e: &SweepEntry) -> Result<Option<(f64, Option<f64>)>> {
    let path = run_dir(run_root, &e.run_id).join("score.json");
    if path.exists() {
        let s = ScoreFile::load(&path)?;
        return Ok(Some((s.rmse, Some(s.climatology_rmse))));
    }
    Ok(matches!(e.status.as_str(), "FAILED" | "ERROR").then_some((f64::INFINITY, None)))
}

/// Groups runs by configuration in sweep order.
pub fn summarize(manifest: &SweepManifest, run_root: &Path) -> Result<Vec<SummaryRow>> {
    if manifest.runs.is_empty() {
        return Err(Error::Config("sweep has no runs".into()));
    }
    let mut order: Vec<ConfigKey> = Vec::new();
    let mut groups: BTreeMap<ConfigKey, Vec<&SweepEntry>> = BTreeMap::new();
    for e in &manifest.runs {
        let k = key(e);
        if !groups.contains_key(&k) {
            order.push(k);
        }
        groups.entry(k).or_default().push(e);
    }
    let mut rows = Vec::with_capacity(order.len());
    for k in order {
        let entries = &groups[&k];
        let (mut seeds, mut scores, mut climatology) = (Vec::new(), Vec::new(), None);
        for e in entries {
            if let Some((s, c)) = run_score(run_root, e)? {
                seeds.push(e.seed);
                scores.push(s);
                climatology = climatology.or(c);
            }
        }
        let agg = aggregate_seeds(&scores);
        rows.push(SummaryRow {
            arch: k.0,
            n_prognostic: k.1,
            m_steps: k.2,
            n_layers: k.3,
            hidden_dim: k.4,
            n_runs: entries.len(),
            seeds,
            scores,
            finite_count: agg.finite_count,
            mean: agg.mean,
            std: agg.std,
            climatology,
        });
    }
    Ok(rows)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(|s| s.to_string()).collect();
        let scores: Vec<String> = r.scores.iter().map(|&s| num(s)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.arch,
            r.n_prognostic,
            r.m_steps,
            r.n_layers,
            r.hidden_dim,
            r.n_runs,
            r.seeds.len(),
            r.finite_count,
            opt(r.mean),
            opt(r.std),
            opt(r.climatology),
            seeds.join(";"),
            scores.join(";")
        );
    }
    out
}

/// Scatter summary: dots for the mean, bars for the std and crosses
/// for individual finite seeds, one column per configuration.
pub fn summary_svg(rows: &[SummaryRow]) -> String {
    let (w, h, left, bottom, top) = (60.0 * rows.len().max(1) as f64 + 80.0, 360.0, 60.0, 120.0, 20.0);
    let ymax = rows
        .iter()
        .flat_map(|r| r.scores.iter().copied().chain(r.mean.zip(r.std).map(|(m, s)| m + s)))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.1;
    let y = |v: f64| top + (h - top - bottom) * (1.0 - v / ymax);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{left}" y2="{top}" stroke="black"/>"#, y(0.0));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, y(0.0), w - 10.0);
    for i in 0..=4 {
        let v = ymax * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, left - 4.0, y(v) + 3.0);
    }
    for (i, r) in rows.iter().enumerate() {
        let x = left + 40.0 + 60.0 * i as f64;
        for v in r.scores.iter().filter(|v| v.is_finite()) {
            let yv = y(*v);
            let _ = writeln!(
                s,
                r#"<path d="M{:.1} {:.1} L{:.1} {:.1} M{:.1} {:.1} L{:.1} {:.1}" stroke="gray"/>"#,
                x - 3.0, yv - 3.0, x + 3.0, yv + 3.0, x - 3.0, yv + 3.0, x + 3.0, yv - 3.0
            );
        }
        if let (Some(m), Some(sd)) = (r.mean, r.std) {
            let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, y(m - sd), y(m + sd));
            let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{:.1}" r="3" fill="black"/>"#, y(m));
        }
        let label = format!(
            "{} k{} m{} l{} d{} ({}/{})",
            r.arch, r.n_prognostic, r.m_steps, r.n_layers, r.hidden_dim, r.finite_count, r.n_runs
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" transform="rotate(60 {x:.1} {:.1})">{label}</text>"#,
            y(0.0) + 12.0,
            y(0.0) + 12.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `lat,lon,predicted,reference,difference` rows of one temporal-mean field.
pub fn difference_map_csv(stats: &RolloutStats, reference_means: &[f64], k: usize) -> String {
    let g = &stats.grid;
    let np = g.n_points();
    let pred = stats.moments.field(k);
    let refr = &reference_means[k * np..(k + 1) * np];
    let mut out = String::from("lat,lon,predicted,reference,difference\n");
    for (i, lat) in g.latitudes().iter().enumerate() {
        for (j, lon) in g.longitudes().iter().enumerate() {
            let p = i * g.n_lon() + j;
            let _ = writeln!(out, "{lat},{lon},{},{},{}", num(pred[p]), num(refr[p]), num(pred[p] - refr[p]));
        }
    }
    out
}

pub struct ReportOutcome {
    pub rows: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

/// Writes `summary.csv`, `timeseries/<run>.csv` for every rolled-out run,
/// `maps/<run>_<var>.csv` for finite rollouts when a reference store is
/// given, and optionally `summary.svg`.
pub fn write_report(
    manifest: &SweepManifest,
    run_root: &Path,
    out_dir: &Path,
    reference: Option<&DatasetStore>,
    svg: bool,
) -> Result<ReportOutcome> {
    let rows = summarize(manifest, run_root)?;
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut put = |path: PathBuf, text: &str| -> Result<()> {
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(&path, text)?;
        files.push(path);
        Ok(())
    };
    put(out_dir.join("summary.csv"), &summary_csv(&rows))?;
    if svg {
        put(out_dir.join("summary.svg"), &summary_svg(&rows))?;
    }
    let mut cache: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for e in &manifest.runs {
        let rdir = run_dir(run_root, &e.run_id).join("rollout");
        if !rdir.join("meta.json").exists() {
            continue;
        }
        put(
            out_dir.join("timeseries").join(format!("{}.csv", e.run_id)),
            &fs::read_to_string(rdir.join("timeseries.csv"))?,
        )?;
        let Some(store) = reference else { continue };
        let stats = RolloutStats::load(&rdir)?;
        if !stats.finite {
            continue;
        }
        let period: TimeRange = rollout_period(&stats)?;
        let ck = (crate::data::format_timestamp(&period.start), period.n_steps(), stats.variables().join(","));
        if !cache.contains_key(&ck) {
            let m = reference_moments(store, &period, stats.variables())?;
            cache.insert(ck.clone(), m.means().to_vec());
        }
        let means = &cache[&ck];
        for (k, var) in stats.variables().iter().enumerate() {
            put(
                out_dir.join("maps").join(format!("{}_{var}.csv", e.run_id)),
                &difference_map_csv(&stats, means, k),
            )?;
        }
    }
    Ok(ReportOutcome { rows, files })
}
