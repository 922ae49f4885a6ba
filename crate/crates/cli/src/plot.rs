//! Minimal SVG charts: equivalence maps, entropy sections and velocity profiles.

use std::fmt::Write;

use crate::csvio::SurfaceRow;
use crate::error::CliError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn label_color(label: &str) -> &'static str {
    match label {
        "full" => "#2b83ba",
        "partial" => "#abdda4",
        "nonequivalent" => "#fdae61",
        "unresolved" => "#999999",
        _ => "#f0f0f0",
    }
}

const LABELS: [&str; 5] = [
    "full",
    "partial",
    "nonequivalent",
    "unresolved",
    "inadmissible",
];

/// Step of roughly `span/5` rounded to 1, 2 or 5 times a power of ten.
fn nice_step(span: f64) -> f64 {
    let raw = (span / 5.0).max(f64::MIN_POSITIVE);
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac < 1.5 {
        1.0
    } else if frac < 3.5 {
        2.0
    } else if frac < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn decimals(step: f64) -> usize {
    (-step.log10().floor()).max(0.0) as usize
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Frame {
        let pad = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                let d = lo.abs().max(1.0) * 0.05;
                (lo - d, hi + d)
            }
        };
        Frame {
            x: pad(x),
            y: pad(y),
        }
    }

    fn sx(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn sy(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        for (range, horizontal) in [(self.x, true), (self.y, false)] {
            let step = nice_step(range.1 - range.0);
            let digits = decimals(step);
            let mut t = (range.0 / step).ceil() * step;
            while t <= range.1 + 1e-9 * step {
                if horizontal {
                    let px = self.sx(t);
                    let _ = writeln!(
                        out,
                        r#"<line x1="{px:.2}" y1="{y0:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{t:.digits$}</text>"#,
                        y0 + 5.0,
                        y0 + 20.0
                    );
                } else {
                    let py = self.sy(t);
                    let _ = writeln!(
                        out,
                        r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{t:.digits$}</text>"#,
                        x0 - 5.0,
                        x0 - 8.0,
                        py + 4.0
                    );
                }
                t += step;
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            0.5 * (x0 + x1),
            HEIGHT - 15.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
            0.5 * (y0 + y1),
            0.5 * (y0 + y1),
            escape(ylabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-weight="bold">{}</text>"#,
            0.5 * (x0 + x1),
            escape(title)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    for (k, (name, color)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * k as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{color}" stroke="black" stroke-width="0.5"/><text x="{:.2}" y="{y:.2}">{}</text>"#,
            y - 10.0,
            x + 18.0,
            escape(name)
        );
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn cell_edges(values: &[f64]) -> Vec<(f64, f64)> {
    let half = |k: usize| {
        if values.len() < 2 {
            0.5
        } else if k + 1 < values.len() {
            0.5 * (values[k + 1] - values[k])
        } else {
            0.5 * (values[k] - values[k - 1])
        }
    };
    (0..values.len())
        .map(|k| {
            let lo = if k == 0 {
                half(0)
            } else {
                0.5 * (values[k] - values[k - 1])
            };
            (values[k] - lo, values[k] + half(k))
        })
        .collect()
}

/// Map of equivalence labels over the `(Γ, E)` plane.
pub fn surface(rows: &[SurfaceRow]) -> Result<String, CliError> {
    if rows.is_empty() {
        return Err(CliError::Input("surface has no points".into()));
    }
    let es = sorted_unique(rows.iter().map(|r| r.point.energy).collect());
    let gs = sorted_unique(rows.iter().map(|r| r.point.circulation).collect());
    let (ee, ge) = (cell_edges(&es), cell_edges(&gs));
    let frame = Frame::new((ge[0].0, ge[ge.len() - 1].1), (ee[0].0, ee[ee.len() - 1].1));
    let mut out = open();
    for r in rows {
        let i = es.partition_point(|v| *v < r.point.energy);
        let j = gs.partition_point(|v| *v < r.point.circulation);
        let (x0, x1) = (frame.sx(ge[j].0), frame.sx(ge[j].1));
        let (y0, y1) = (frame.sy(ee[i].1), frame.sy(ee[i].0));
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            x1 - x0,
            y1 - y0,
            label_color(&r.label)
        );
    }
    frame.axes(
        &mut out,
        "Ensemble equivalence",
        "circulation Γ",
        "energy E",
    );
    let entries: Vec<(&str, &str)> = LABELS.iter().map(|l| (*l, label_color(l))).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
pub enum Section {
    /// `S(E)` at the grid circulation nearest the given value.
    AlongEnergy { circulation: f64 },
    /// `S(Γ)` at the grid energy nearest the given value.
    AlongCirculation { energy: f64 },
}

fn nearest(values: &[f64], target: f64) -> f64 {
    values
        .iter()
        .copied()
        .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))
        .expect("nonempty")
}

/// Entropy along one grid line, with points coloured by label.
pub fn section(rows: &[SurfaceRow], which: Section) -> Result<String, CliError> {
    let (fixed, along_energy) = match which {
        Section::AlongEnergy { circulation } => {
            let gs = sorted_unique(rows.iter().map(|r| r.point.circulation).collect());
            (nearest(&gs, circulation), true)
        }
        Section::AlongCirculation { energy } => {
            let es = sorted_unique(rows.iter().map(|r| r.point.energy).collect());
            (nearest(&es, energy), false)
        }
    };
    let mut line: Vec<(f64, Option<f64>, &str)> = rows
        .iter()
        .filter(|r| {
            if along_energy {
                r.point.circulation == fixed
            } else {
                r.point.energy == fixed
            }
        })
        .map(|r| {
            let x = if along_energy {
                r.point.energy
            } else {
                r.point.circulation
            };
            (x, r.point.entropy, r.label.as_str())
        })
        .collect();
    line.sort_by(|a, b| a.0.total_cmp(&b.0));
    let known: Vec<(f64, f64)> = line
        .iter()
        .filter_map(|(x, s, _)| s.map(|s| (*x, s)))
        .collect();
    if known.is_empty() {
        return Err(CliError::Input(
            "section contains no converged points".into(),
        ));
    }
    let xr = (line[0].0, line[line.len() - 1].0);
    let ys = known.iter().map(|p| p.1);
    let yr = (
        ys.clone().fold(f64::INFINITY, f64::min),
        ys.fold(f64::NEG_INFINITY, f64::max),
    );
    let frame = Frame::new(xr, yr);
    let mut out = open();

    let mut segment: Vec<String> = Vec::new();
    let flush = |seg: &mut Vec<String>, out: &mut String| {
        if seg.len() > 1 {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="black" stroke-width="1.5" points="{}"/>"#,
                seg.join(" ")
            );
        }
        seg.clear();
    };
    for (x, s, _) in &line {
        match s {
            Some(s) => segment.push(format!("{:.2},{:.2}", frame.sx(*x), frame.sy(*s))),
            None => flush(&mut segment, &mut out),
        }
    }
    flush(&mut segment, &mut out);
    for (x, s, label) in &line {
        if let Some(s) = s {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" stroke="black" stroke-width="0.5"/>"#,
                frame.sx(*x),
                frame.sy(*s),
                label_color(label)
            );
        }
    }
    let (title, xlabel) = if along_energy {
        (format!("S(E, Γ = {fixed})"), "energy E")
    } else {
        (format!("S(E = {fixed}, Γ)"), "circulation Γ")
    };
    frame.axes(&mut out, &title, xlabel, "entropy S");
    let entries: Vec<(&str, &str)> = LABELS[..4].iter().map(|l| (*l, label_color(l))).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Zonal velocity `v₁` against `x₂`, one curve per profile.
pub fn velocity(profiles: &[(String, Vec<(f64, f64)>)]) -> Result<String, CliError> {
    if profiles.is_empty() || profiles.iter().any(|(_, p)| p.is_empty()) {
        return Err(CliError::Input("velocity profile has no points".into()));
    }
    let all = profiles.iter().flat_map(|(_, p)| p.iter());
    let (mut xr, mut yr) = (
        (f64::INFINITY, f64::NEG_INFINITY),
        (f64::INFINITY, f64::NEG_INFINITY),
    );
    for &(x2, v1) in all {
        xr = (xr.0.min(v1), xr.1.max(v1));
        yr = (yr.0.min(x2), yr.1.max(x2));
    }
    let span = (xr.1 - xr.0).max(1e-12);
    let frame = Frame::new((xr.0 - 0.05 * span, xr.1 + 0.05 * span), yr);
    let mut out = open();
    if frame.x.0 < 0.0 && frame.x.1 > 0.0 {
        let px = frame.sx(0.0);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
            HEIGHT - BOTTOM
        );
    }
    let mut entries = Vec::new();
    for (k, (name, p)) in profiles.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = p
            .iter()
            .map(|&(x2, v1)| format!("{:.2},{:.2}", frame.sx(v1), frame.sy(x2)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        entries.push((name.as_str(), color));
    }
    frame.axes(&mut out, "Zonal velocity", "v₁", "x₂");
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}
