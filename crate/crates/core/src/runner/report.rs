use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::train::MetricsRecord;
use crate::cell::{param_count, CellDims, GateVariant};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,test_acc,lr,seconds";

/// Formats `x` with 6 significant digits, fixed or scientific like C's `%g`.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_owned()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

pub fn metrics_csv(history: &[MetricsRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            format_sig6(r.train_loss),
            format_sig6(r.train_acc),
            format_sig6(r.test_acc),
            format_sig6(r.lr),
            format_sig6(r.seconds)
        );
    }
    out
}

pub fn emit_metrics_csv(history: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, metrics_csv(history)).map_err(|e| Error::io(path, e))
}

/// Train and test accuracy against epoch as an SVG line chart.
pub fn curves_svg(history: &[MetricsRecord]) -> Result<String> {
    if history.is_empty() {
        return Err(Error::Contract("cannot plot curves for an empty history".into()));
    }
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 20.0, 20.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let first = history[0].epoch as f64;
    let span = (history[history.len() - 1].epoch as f64 - first).max(1.0);
    let px = |epoch: usize| left + (epoch as f64 - first) / span * plot_w;
    let py = |acc: f64| top + (1.0 - acc.clamp(0.0, 1.0)) * plot_h;
    let points = |acc: fn(&MetricsRecord) -> f64| {
        history
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.epoch), py(acc(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, y0, x1, y1) = (left, top + plot_h, left + plot_w, top);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = py(tick);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{tick}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let last = history[history.len() - 1].epoch;
    for epoch in [history[0].epoch, last] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle">{epoch}</text>"#,
            px(epoch),
            y0 + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{}" font-size="13" text-anchor="middle">epoch</text>"#,
        left + plot_w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 15 {:.1})">accuracy</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"><title>train</title></polyline>"#,
        points(|r| r.train_acc)
    );
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="darkorange" stroke-width="2" points="{}"><title>test</title></polyline>"#,
        points(|r| r.test_acc)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" fill="steelblue">train</text>"#,
        x1 - 80.0,
        y0 - 30.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" fill="darkorange">test</text>"#,
        x1 - 80.0,
        y0 - 14.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_curves_svg(history: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let svg = curves_svg(history)?;
    let path = path.as_ref();
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (k, ch) in digits.chars().enumerate() {
        if k > 0 && (digits.len() - k).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Parameter counts of every variant at the three experiment sizes.
pub fn params_table() -> String {
    let mut s = format!("{:<12}", "(m, n)");
    for v in GateVariant::ALL {
        let _ = write!(s, "{:>12}", v.name());
    }
    s.push('\n');
    for (m, n) in [(1, 100), (28, 50), (128, 128)] {
        let dims = CellDims::new(m, n).expect("nonzero sizes");
        let _ = write!(s, "{:<12}", format!("({m}, {n})"));
        for v in GateVariant::ALL {
            let _ = write!(s, "{:>12}", thousands(param_count(v, dims)));
        }
        s.push('\n');
    }
    s
}
