//! SVG accuracy curves from metrics files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Result, TrainError};
use crate::metrics::{parse_csv, Split};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 48.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Accuracy-versus-epoch chart with one polyline per (run, split).
///
/// `runs` pairs a display name with the text of its metrics CSV. Training
/// curves are dashed, validation curves solid; each run has its own colour.
pub fn render_curves(runs: &[(String, String)]) -> Result<String> {
    if runs.is_empty() {
        return Err(TrainError::Format("no metrics files given".into()));
    }
    let mut series: Vec<(String, usize, Split, Vec<(f64, f64)>)> = Vec::new();
    for (ri, (name, text)) in runs.iter().enumerate() {
        let records = parse_csv(text).map_err(|e| TrainError::Format(format!("{name}: {e}")))?;
        let mut by_split: BTreeMap<Split, Vec<(f64, f64)>> = BTreeMap::new();
        for r in records {
            by_split.entry(r.split).or_default().push((r.epoch as f64, r.acc));
        }
        for (split, mut pts) in by_split {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            series.push((name.clone(), ri, split, pts));
        }
    }
    let (mut e_lo, mut e_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, _, _, pts) in &series {
        for &(e, _) in pts {
            e_lo = e_lo.min(e);
            e_hi = e_hi.max(e);
        }
    }
    if e_hi <= e_lo {
        e_hi = e_lo + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x_of = |e: f64| LEFT + (e - e_lo) / (e_hi - e_lo) * pw;
    let y_of = |a: f64| TOP + (1.0 - a) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<g id="axes" stroke="#333" stroke-width="1"><line x1="{LEFT}" y1="{}" x2="{}" y2="{}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}"/></g>"##,
        TOP + ph,
        LEFT + pw,
        TOP + ph,
        TOP + ph
    );
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let y = y_of(a);
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><text x="{}" y="{:.2}" text-anchor="end">{a:.1}</text>"##,
            LEFT - 4.0,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let ticks = ((e_hi - e_lo) as usize).clamp(1, 10);
    for i in 0..=ticks {
        let e = e_lo + (e_hi - e_lo) * i as f64 / ticks as f64;
        let x = x_of(e);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#333"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 4.0,
            TOP + ph + 18.0,
            format_tick(e)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">accuracy</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (k, (name, ri, split, pts)) in series.iter().enumerate() {
        let colour = COLOURS[ri % COLOURS.len()];
        let dash = if *split == Split::Train { r#" stroke-dasharray="6 4""# } else { "" };
        let points: Vec<String> = pts
            .iter()
            .map(|&(e, a)| format!("{:.2},{:.2}", x_of(e), y_of(a)))
            .collect();
        let label = escape(&format!("{name} {split}"));
        let _ = writeln!(
            s,
            r#"<polyline class="curve" data-run="{}" data-split="{split}" fill="none" stroke="{colour}" stroke-width="2"{dash} points="{}"><title>{label}</title></polyline>"#,
            escape(name),
            points.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"{dash}/><text x="{}" y="{}">{label}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn format_tick(e: f64) -> String {
    if (e - e.round()).abs() < 1e-9 {
        format!("{}", e.round() as i64)
    } else {
        format!("{e:.1}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{to_csv, MetricsRecord};

    fn run(epochs: usize, offset: f64) -> String {
        let mut recs = Vec::new();
        for e in 1..=epochs {
            for split in [Split::Train, Split::Val] {
                recs.push(MetricsRecord {
                    epoch: e,
                    split,
                    loss: 1.0 / e as f64,
                    acc: (0.05 * e as f64 + offset).min(1.0),
                    lr: 0.001,
                    wall_seconds: 0.0,
                });
            }
        }
        to_csv(&recs)
    }

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let p = l.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
                p.split(' ')
                    .map(|xy| {
                        let (x, y) = xy.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn two_runs_give_four_curves() {
        let svg = render_curves(&[("a".into(), run(10, 0.0)), ("b".into(), run(10, 0.1))]).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 4);
        for l in lines {
            assert_eq!(l.len(), 10);
            for w in l.windows(2) {
                assert!(w[1].0 > w[0].0);
                assert!(w[1].1 < w[0].1, "higher accuracy plots higher");
            }
        }
    }

    #[test]
    fn empty_body_is_an_error() {
        let e = render_curves(&[("a".into(), "epoch,split,loss,acc,lr,wall_seconds\n".into())]).unwrap_err();
        assert!(matches!(e, TrainError::Format(_)));
    }
}
