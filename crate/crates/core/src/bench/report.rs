use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Aggregate of one (configuration, task, method) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// Actuation space name, e.g. `P1`.
    pub configuration: String,
    pub task: String,
    pub method: String,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::Config(format!("unknown report format `{s}` (expected csv or markdown)"))),
        }
    }
}

/// Mean and sample standard deviation, summed in the given order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Four significant digits in exponent form, e.g. `1.080e0`.
pub fn sig4(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3e}")
    } else {
        format!("{x}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("bad number `{s}` in report")))
}

/// `P1` → `M=1 (P)`, `R` → `M=19 (R)`.
pub fn configuration_label(name: &str) -> String {
    match name.parse::<crate::robot::SpaceName>() {
        Ok(s) => {
            let mode = &name[..1];
            format!("M={} ({mode})", s.count)
        }
        Err(_) => name.to_string(),
    }
}

fn configuration_from_label(label: &str) -> String {
    let parse = || -> Option<String> {
        let rest = label.strip_prefix("M=")?;
        let (count, mode) = rest.split_once(" (")?;
        let mode = mode.strip_suffix(')')?;
        let count: usize = count.parse().ok()?;
        Some(if mode == "R" && count == crate::robot::SpaceName::RING_COUNT { "R".into() } else { format!("{mode}{count}") })
    };
    parse().unwrap_or_else(|| label.to_string())
}

const CSV_HEADER: &str = "configuration,task,method,mean,std,runs";

impl ReportTable {
    /// Every value cut to what the text formats carry.
    pub fn rounded(&self) -> Self {
        let r = |x: f64| sig4(x).parse().unwrap_or(x);
        ReportTable {
            rows: self.rows.iter().map(|row| ReportRow { mean: r(row.mean), std: r(row.std), ..row.clone() }).collect(),
        }
    }

    pub fn row(&self, configuration: &str, task: &str, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.configuration == configuration && r.task == task && r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.configuration, r.task, r.method, sig4(r.mean), sig4(r.std), r.runs);
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Format("report CSV header mismatch".into()));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Format(format!("report row `{line}` has {} fields", f.len())));
            }
            rows.push(ReportRow {
                configuration: f[0].to_string(),
                task: f[1].to_string(),
                method: f[2].to_string(),
                mean: parse_f64(f[3])?,
                std: parse_f64(f[4])?,
                runs: f[5].trim().parse().map_err(|_| Error::Format(format!("bad run count in `{line}`")))?,
            });
        }
        Ok(ReportTable { rows })
    }

    /// Methods in order of first appearance.
    fn methods(&self) -> Vec<&str> {
        let mut v: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !v.contains(&r.method.as_str()) {
                v.push(&r.method);
            }
        }
        v
    }

    /// One line per (task, configuration), one column per method, cells
    /// `mean ± std (n)`.
    pub fn to_markdown(&self) -> String {
        let methods = self.methods();
        let mut s = String::from("| Task | Configuration |");
        for m in &methods {
            let _ = write!(s, " {m} |");
        }
        s.push_str("\n|---|---|");
        s.push_str(&"---|".repeat(methods.len()));
        s.push('\n');
        let mut groups: Vec<(&str, &str)> = Vec::new();
        for r in &self.rows {
            let g = (r.task.as_str(), r.configuration.as_str());
            if !groups.contains(&g) {
                groups.push(g);
            }
        }
        for (task, conf) in groups {
            let _ = write!(s, "| {task} | {} |", configuration_label(conf));
            for m in &methods {
                match self.row(conf, task, m) {
                    Some(r) => {
                        let _ = write!(s, " {} ± {} ({}) |", sig4(r.mean), sig4(r.std), r.runs);
                    }
                    None => s.push_str(" N/A |"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn parse_markdown(text: &str) -> Result<Self> {
        let cells = |line: &str| -> Vec<String> {
            let t = line.trim().trim_start_matches('|').trim_end_matches('|');
            t.split('|').map(|c| c.trim().to_string()).collect()
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = cells(lines.next().ok_or_else(|| Error::Format("empty markdown report".into()))?);
        if header.len() < 2 || header[0] != "Task" || header[1] != "Configuration" {
            return Err(Error::Format("markdown report header mismatch".into()));
        }
        let methods = &header[2..];
        lines.next();
        let mut rows = Vec::new();
        for line in lines {
            let c = cells(line);
            if c.len() != header.len() {
                return Err(Error::Format(format!("markdown row `{line}` has {} cells", c.len())));
            }
            for (m, cell) in methods.iter().zip(&c[2..]) {
                if cell == "N/A" {
                    continue;
                }
                let bad = || Error::Format(format!("bad markdown cell `{cell}`"));
                let (mean, rest) = cell.split_once(" ± ").ok_or_else(bad)?;
                let (std, runs) = rest.split_once(" (").ok_or_else(bad)?;
                let runs = runs.strip_suffix(')').ok_or_else(bad)?.parse().map_err(|_| bad())?;
                rows.push(ReportRow {
                    configuration: configuration_from_label(&c[1]),
                    task: c[0].clone(),
                    method: m.clone(),
                    mean: parse_f64(mean)?,
                    std: parse_f64(std)?,
                    runs,
                });
            }
        }
        Ok(ReportTable { rows })
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => self.to_markdown(),
        }
    }

    pub fn parse(text: &str, format: ReportFormat) -> Result<Self> {
        match format {
            ReportFormat::Csv => Self::parse_csv(text),
            ReportFormat::Markdown => Self::parse_markdown(text),
        }
    }
}

/// Writes the table to `path` in `format`.
pub fn emit_report(table: &ReportTable, format: ReportFormat, path: &Path) -> Result<()> {
    write_atomic(path, table.render(format).as_bytes())
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
