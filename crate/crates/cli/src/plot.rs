use std::path::Path;

use anyhow::{bail, Context, Result};
use plotters::prelude::*;
use wavebench_core::bench::ReportTable;
use wavebench_core::Error;

use crate::PlotArgs;

const SIZE: (u32, u32) = (960, 600);
/// Columns that index rows rather than hold curves.
const INDEX_COLUMNS: [&str; 6] = ["episode", "sample", "step", "t", "run", "seed"];

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = match lines.next() {
        Some(h) => h.split(',').map(|s| s.trim().to_string()).collect(),
        None => bail!(Error::Format(format!("{} is empty", path.display()))),
    };
    let rows = lines.map(|l| l.split(',').map(|s| s.trim().to_string()).collect()).collect();
    Ok(Table { header, rows })
}

fn col(t: &Table, name: &str) -> Option<usize> {
    t.header.iter().position(|h| h == name)
}

pub fn plot(a: &PlotArgs) -> Result<()> {
    if a.out.extension().and_then(|e| e.to_str()) != Some("svg") {
        bail!(Error::Config(format!("{}: only .svg output is supported", a.out.display())));
    }
    let table = read_table(&a.input)?;
    if table.header.join(",") == "configuration,task,method,mean,std,runs" {
        let report = ReportTable::parse_csv(&std::fs::read_to_string(&a.input)?)?;
        return bars(&report, a);
    }
    lines(&table, a)
}

fn number(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Format(format!("non-numeric value `{s}`")).into())
}

fn lines(t: &Table, a: &PlotArgs) -> Result<()> {
    let x = match &a.x {
        Some(name) => col(t, name).ok_or_else(|| Error::Config(format!("no column `{name}`")))?,
        None => col(t, "t").or_else(|| col(t, "step")).unwrap_or(0),
    };
    let rows: Vec<&Vec<String>> = match (&a.episode, col(t, "episode")) {
        (Some(e), Some(c)) => t.rows.iter().filter(|r| r.get(c) == Some(e)).collect(),
        (Some(_), None) => bail!(Error::Config("--episode given but the CSV has no `episode` column".into())),
        // several episodes would draw over each other; keep the first
        (None, Some(c)) => {
            let first = t.rows.first().map(|r| r[c].clone());
            t.rows.iter().filter(|r| Some(&r[c]) == first.as_ref()).collect()
        }
        (None, None) => t.rows.iter().collect(),
    };
    let series: Vec<usize> = (0..t.header.len()).filter(|&i| i != x && !INDEX_COLUMNS.contains(&t.header[i].as_str())).collect();
    if rows.is_empty() || series.is_empty() {
        bail!(Error::Format("nothing to plot".into()));
    }
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for &s in &series {
        let pts = rows
            .iter()
            .map(|r| Ok((number(&r[x])?, number(&r[s])?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.1.is_finite())
            .collect();
        curves.push((t.header[s].clone(), pts));
    }
    let all = curves.iter().flat_map(|c| &c.1);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(px, py) in all {
        x0 = x0.min(px);
        x1 = x1.max(px);
        y0 = y0.min(py);
        y1 = y1.max(py);
    }
    if !(x0 < x1) {
        x1 = x0 + 1.0;
    }
    if !(y0 < y1) {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let root = SVGBackend::new(&a.out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let title = a.title.clone().unwrap_or_else(|| a.input.display().to_string());
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc(t.header[x].as_str()).draw().map_err(draw_err)?;
    for (i, (label, pts)) in curves.into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(draw_err)?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

fn bars(report: &ReportTable, a: &PlotArgs) -> Result<()> {
    if report.rows.is_empty() {
        bail!(Error::Format("report has no rows".into()));
    }
    let n = report.rows.len();
    let top = report.rows.iter().map(|r| r.mean + r.std).filter(|v| v.is_finite()).fold(0.0_f64, f64::max);
    let top = if top > 0.0 { 1.1 * top } else { 1.0 };
    let root = SVGBackend::new(&a.out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let title = a.title.clone().unwrap_or_else(|| a.input.display().to_string());
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(60)
        .y_label_area_size(70)
        .build_cartesian_2d((0..n).into_segmented(), 0.0..top)
        .map_err(draw_err)?;
    let names: Vec<String> = report.rows.iter().map(|r| format!("{} {} {}", r.configuration, r.task, r.method)).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) => names.get(*i).cloned().unwrap_or_default(),
            _ => String::new(),
        })
        .y_desc("mean ± std")
        .draw()
        .map_err(draw_err)?;
    for (i, r) in report.rows.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let mut bar = Rectangle::new([(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), r.mean)], color.filled());
        bar.set_margin(0, 0, 20, 20);
        chart.draw_series([bar]).map_err(draw_err)?;
        let (lo, hi) = ((r.mean - r.std).max(0.0), r.mean + r.std);
        let c = SegmentValue::CenterOf(i);
        chart.draw_series([PathElement::new(vec![(c.clone(), lo), (c, hi)], BLACK.stroke_width(2))]).map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

fn draw_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow::Error::new(std::io::Error::other(format!("drawing failed: {e:?}")))
}
