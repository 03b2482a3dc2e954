//! Run artifacts: versioned CSV tables, the machine-readable PASS/FAIL
//! summary, and standalone SVG plots whose numeric content is copied
//! verbatim from the CSV they render.
//!
//! Every CSV starts with a `# schema: <name> v<version>` comment line; the
//! schemas are documented in docs/csv-schemas.md. Plots carry no
//! timestamps, so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cilab_core::dynamo::fit_loglog_slope;

#[derive(Debug)]
pub enum ArtifactError {
    Io(std::io::Error),
    Schema(String),
}

impl std::fmt::Display for ArtifactError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArtifactError::Io(e) => write!(f, "artifact i/o: {e}"),
            ArtifactError::Schema(s) => write!(f, "csv schema: {s}"),
        }
    }
}

impl From<std::io::Error> for ArtifactError {
    fn from(e: std::io::Error) -> Self {
        ArtifactError::Io(e)
    }
}

/// One acceptance check evaluated by an experiment; `id` is the stable
/// criterion identifier (C1..C14) from docs/acceptance.md.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub id: String,
    pub description: String,
    pub measured: String,
    pub threshold: String,
    pub pass: bool,
}

impl CheckResult {
    pub fn new(
        id: &str,
        description: &str,
        measured: impl ToString,
        threshold: impl ToString,
        pass: bool,
    ) -> CheckResult {
        CheckResult {
            id: id.to_string(),
            description: description.to_string(),
            measured: measured.to_string(),
            threshold: threshold.to_string(),
            pass,
        }
    }
}

pub struct RunArtifact {
    pub dir: PathBuf,
    pub checks: Vec<CheckResult>,
    pub csv_files: Vec<PathBuf>,
}

impl RunArtifact {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Write a CSV with a schema comment, a header row, and data rows.
pub fn write_csv(
    dir: &Path,
    file: &str,
    schema: &str,
    version: u32,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<PathBuf, ArtifactError> {
    let mut text = format!("# schema: {schema} v{version}\n");
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(ArtifactError::Schema(format!(
                "row width {} does not match header width {}",
                row.len(),
                header.len()
            )));
        }
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = dir.join(file);
    fs::write(&path, text)?;
    Ok(path)
}

/// Parsed CSV: schema line, header, and string-valued rows.
pub struct CsvTable {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_csv(path: &Path) -> Result<CsvTable, ArtifactError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let schema = lines
        .next()
        .and_then(|l| l.strip_prefix("# schema: "))
        .ok_or_else(|| ArtifactError::Schema("missing '# schema:' comment line".into()))?
        .to_string();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| ArtifactError::Schema("missing header row".into()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok(CsvTable { schema, header, rows })
}

/// Write the machine-readable PASS/FAIL summary. One row per check, plus a
/// trailing `overall` row.
pub fn write_summary(dir: &Path, checks: &[CheckResult]) -> Result<PathBuf, ArtifactError> {
    let mut rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| {
            vec![
                c.id.clone(),
                c.description.clone(),
                c.measured.clone(),
                c.threshold.clone(),
                if c.pass { "PASS" } else { "FAIL" }.to_string(),
            ]
        })
        .collect();
    let overall = checks.iter().all(|c| c.pass);
    rows.push(vec![
        "overall".into(),
        "all enabled checks".into(),
        String::new(),
        String::new(),
        if overall { "PASS" } else { "FAIL" }.to_string(),
    ]);
    write_csv(
        dir,
        "summary.csv",
        "summary",
        1,
        &["criterion", "description", "measured", "threshold", "status"],
        &rows,
    )
}

/// Plot kinds with fixed expected columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// log-log scatter of (x, y) with the fitted slope annotated
    Rate,
    /// time series overlay: first column is time, remaining columns curves
    Energy,
    /// log-log eigenvalue staircase: (index, value)
    Spectrum,
}

impl PlotKind {
    fn name(&self) -> &'static str {
        match self {
            PlotKind::Rate => "rate",
            PlotKind::Energy => "energy",
            PlotKind::Spectrum => "spectrum",
        }
    }
}

fn parse_numeric_rows(table: &CsvTable) -> Result<Vec<Vec<f64>>, ArtifactError> {
    table
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|_| {
                        ArtifactError::Schema(format!("non-numeric cell '{v}'"))
                    })
                })
                .collect()
        })
        .collect()
}

/// Render a CSV as a standalone SVG. The raw CSV rows are embedded verbatim
/// in a <desc> element, so the numeric content of the plot is exactly the
/// numeric content of the table. Errors on an empty table or a kind whose
/// column expectations the header violates.
pub fn emit_plot(csv_path: &Path, kind: PlotKind) -> Result<String, ArtifactError> {
    let table = read_csv(csv_path)?;
    if table.rows.is_empty() {
        return Err(ArtifactError::Schema("empty CSV: nothing to plot".into()));
    }
    let min_cols = match kind {
        PlotKind::Rate | PlotKind::Spectrum => 2,
        PlotKind::Energy => 2,
    };
    if table.header.len() < min_cols {
        return Err(ArtifactError::Schema(format!(
            "{} plot needs at least {min_cols} columns, header has {}",
            kind.name(),
            table.header.len()
        )));
    }
    let data = parse_numeric_rows(&table)?;
    let logscale = matches!(kind, PlotKind::Rate | PlotKind::Spectrum);
    let tx = |v: f64| if logscale { v.max(1e-300).log10() } else { v };

    let (w, h, ml, mb) = (640.0f64, 420.0f64, 60.0f64, 40.0f64);
    let xs: Vec<f64> = data.iter().map(|r| tx(r[0])).collect();
    let (xmin, xmax) = bounds(&xs);
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for c in 1..table.header.len() {
        let ys: Vec<f64> = data.iter().map(|r| tx(r[c])).collect();
        curves.push((
            table.header[c].clone(),
            xs.iter().cloned().zip(ys).collect(),
        ));
    }
    let all_y: Vec<f64> = curves.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1)).collect();
    let (ymin, ymax) = bounds(&all_y);
    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin).max(1e-300) * (w - ml - 20.0);
    let sy = |y: f64| (h - mb) - (y - ymin) / (ymax - ymin).max(1e-300) * (h - mb - 20.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<desc>schema: {}", table.schema);
    let _ = writeln!(svg, "{}", table.header.join(","));
    for row in &table.rows {
        let _ = writeln!(svg, "{}", row.join(","));
    }
    let _ = writeln!(svg, "</desc>");
    let _ = writeln!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb,
        w - 20.0,
        h - mb
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"20\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb
    );
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    for (ci, (label, pts)) in curves.iter().enumerate() {
        let color = palette[ci % palette.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.3},{:.3}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>",
            path.join(" ")
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\" font-size=\"12\">{label}</text>",
            w - 150.0,
            30.0 + 14.0 * ci as f64
        );
    }
    if kind == PlotKind::Rate {
        // annotate the fitted log-log slope of the first curve
        let pts: Vec<(f64, f64)> = data.iter().map(|r| (r[0], r[1])).collect();
        let slope = fit_loglog_slope(&pts);
        let _ = writeln!(
            svg,
            "<text x=\"{ml}\" y=\"16\" font-size=\"12\">fitted slope: {slope:.4}</text>"
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>",
        w / 2.0 - 30.0,
        h - 8.0,
        table.header[0]
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
