//! Deterministic SVG line plots of trajectory and credible-band CSV files.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 16.0;
const MARGIN_B: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// One polyline: a sample's values in one observation dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub sample: usize,
    pub dim: usize,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandRow {
    pub time: f64,
    pub dim: usize,
    pub lower: f64,
    pub mean: f64,
    pub upper: f64,
}

fn csv_err(what: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: what.to_string(),
        line,
        msg: msg.into(),
    }
}

fn data_lines<'a>(text: &'a str, what: &str, header: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.starts_with(header) => {}
        _ => return Err(csv_err(what, 1, format!("expected a header starting with `{header}`"))),
    }
    Ok(lines.map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect())))
}

fn num(what: &str, line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| csv_err(what, line, format!("`{s}` is not a finite number")))
}

/// Parses `sample_id,time,value_1,...` rows into one series per sample and
/// dimension, in order of first appearance.
pub fn parse_trajectories(text: &str, what: &str) -> Result<Vec<Series>> {
    let mut series: Vec<Series> = Vec::new();
    for (line, cells) in data_lines(text, what, "sample_id,time")? {
        if cells.len() < 3 {
            return Err(csv_err(what, line, "expected sample_id, time and at least one value"));
        }
        let sample: usize = cells[0]
            .parse()
            .map_err(|_| csv_err(what, line, format!("bad sample id `{}`", cells[0])))?;
        let t = num(what, line, cells[1])?;
        for (dim, cell) in cells[2..].iter().enumerate() {
            let v = num(what, line, cell)?;
            match series.iter_mut().find(|s| s.sample == sample && s.dim == dim) {
                Some(s) => s.points.push((t, v)),
                None => series.push(Series {
                    sample,
                    dim,
                    points: vec![(t, v)],
                }),
            }
        }
    }
    if series.is_empty() {
        return Err(csv_err(what, 1, "no trajectory rows"));
    }
    Ok(series)
}

/// Parses `time,dim,lower,mean,upper` rows; a row with `lower > upper` is
/// rejected.
pub fn parse_band(text: &str, what: &str) -> Result<Vec<BandRow>> {
    let mut rows = Vec::new();
    for (line, cells) in data_lines(text, what, "time,dim,lower,mean,upper")? {
        if cells.len() != 5 {
            return Err(csv_err(what, line, "expected time,dim,lower,mean,upper"));
        }
        let dim = cells[1]
            .parse()
            .map_err(|_| csv_err(what, line, format!("bad dimension `{}`", cells[1])))?;
        let row = BandRow {
            time: num(what, line, cells[0])?,
            dim,
            lower: num(what, line, cells[2])?,
            mean: num(what, line, cells[3])?,
            upper: num(what, line, cells[4])?,
        };
        if row.lower > row.upper {
            return Err(csv_err(
                what,
                line,
                format!("lower {} exceeds upper {}", row.lower, row.upper),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Tick positions at a 1-2-5 step covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|i| i as f64 * step).collect(), decimals)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

/// Renders the series and optional band. Output depends only on the inputs.
pub fn render_svg(series: &[Series], band: Option<&[BandRow]>) -> Result<String> {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let mut ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    if let Some(b) = band {
        xs.extend(b.iter().map(|r| r.time));
        ys.extend(b.iter().flat_map(|r| [r.lower, r.upper]));
    }
    if xs.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    let bounds = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)))
    };
    let (x0, x1) = padded(bounds(&xs).0, bounds(&xs).1);
    let (y0, y1) = padded(bounds(&ys).0, bounds(&ys).1);
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    if let Some(rows) = band {
        let mut dims: Vec<usize> = rows.iter().map(|r| r.dim).collect();
        dims.sort_unstable();
        dims.dedup();
        for dim in dims {
            let mut pts: Vec<&BandRow> = rows.iter().filter(|r| r.dim == dim).collect();
            pts.sort_by(|a, b| a.time.total_cmp(&b.time));
            let mut poly = String::new();
            for r in &pts {
                let _ = write!(poly, "{:.2},{:.2} ", sx(r.time), sy(r.upper));
            }
            for r in pts.iter().rev() {
                let _ = write!(poly, "{:.2},{:.2} ", sx(r.time), sy(r.lower));
            }
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                poly.trim_end(),
                PALETTE[dim % PALETTE.len()]
            );
            let mean: Vec<String> = pts
                .iter()
                .map(|r| format!("{:.2},{:.2}", sx(r.time), sy(r.mean)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-dasharray="4 3" stroke-width="1.5"/>"#,
                mean.join(" "),
                PALETTE[dim % PALETTE.len()]
            );
        }
    }

    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-opacity="0.8" stroke-width="1"/>"#,
            pts.join(" "),
            PALETTE[(s.dim + i) % PALETTE.len()]
        );
    }

    // Axes and ticks.
    let (bx, by) = (MARGIN_L, MARGIN_T + ph);
    let _ = writeln!(
        out,
        r#"<path d="M{bx:.2},{MARGIN_T:.2} V{by:.2} H{:.2}" fill="none" stroke="black"/>"#,
        MARGIN_L + pw
    );
    let (xt, xd) = ticks(x0, x1);
    for t in xt {
        let _ = writeln!(
            out,
            r#"<line x1="{0:.2}" y1="{by:.2}" x2="{0:.2}" y2="{1:.2}" stroke="black"/><text x="{0:.2}" y="{2:.2}" text-anchor="middle">{3:.4$}</text>"#,
            sx(t),
            by + 4.0,
            by + 16.0,
            t,
            xd
        );
    }
    let (yt, yd) = ticks(y0, y1);
    for t in yt {
        let _ = writeln!(
            out,
            r#"<line x1="{bx:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="black"/><text x="{2:.2}" y="{3:.2}" text-anchor="end">{4:.5$}</text>"#,
            sy(t),
            bx - 4.0,
            bx - 6.0,
            sy(t) + 4.0,
            t,
            yd
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">time</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 6.0
    );
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_is_horizontal() {
        let s = parse_trajectories("sample_id,time,value_1\n0,0,2\n0,1,2\n0,2,2\n", "t").unwrap();
        let svg = render_svg(&s, None).unwrap();
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let pts: Vec<&str> = line.split('"').nth(1).unwrap().split(' ').collect();
        let ys: Vec<&str> = pts.iter().map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.iter().all(|y| *y == ys[0]), "{ys:?}");
    }

    #[test]
    fn inverted_band_is_rejected() {
        let err = parse_band("time,dim,lower,mean,upper\n0,0,1,0.5,0\n", "b").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn tick_steps() {
        let (t, d) = ticks(0.0, 1.5);
        assert_eq!(t, vec![0.0, 0.5, 1.0, 1.5]);
        assert_eq!(d, 1);
    }
}
