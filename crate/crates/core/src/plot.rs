//! Self-contained SVG of a forecast with its 75% band.

use std::fmt::Write as _;

use chrono::NaiveDateTime;

use crate::data::format_timestamp;
use crate::inference::ForecastResult;
use crate::{Error, Result};

pub const WIDTH: f64 = 1200.0;
pub const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;

struct Frame {
    n: usize,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn x(&self, i: usize) -> f64 {
        let span = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / (self.n.max(2) - 1) as f64;
        MARGIN_LEFT + span * i as f64
    }

    fn y(&self, v: f64) -> f64 {
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        MARGIN_TOP + h * (self.hi - v) / (self.hi - self.lo)
    }
}

fn polyline(points: impl Iterator<Item = (f64, f64)>) -> String {
    let mut d = String::new();
    for (k, (x, y)) in points.enumerate() {
        write!(d, "{}{x:.2},{y:.2}", if k == 0 { "M" } else { " L" }).expect("string write");
    }
    d
}

/// Actual values are matched to forecast steps by timestamp; steps without an
/// actual break the actual line.
pub fn render_svg(forecast: &ForecastResult, actuals: &[(NaiveDateTime, f64)]) -> Result<String> {
    if forecast.is_empty() {
        return Err(Error::data("nothing to plot: forecast is empty"));
    }
    let (lo75, hi75) = forecast
        .interval(0.75)
        .ok_or_else(|| Error::data("forecast lacks the 75% interval columns"))?;
    let matched: Vec<Option<f64>> = forecast
        .timestamps
        .iter()
        .map(|t| actuals.iter().find(|(a, _)| a == t).map(|(_, v)| *v))
        .collect();
    let values = lo75.iter().chain(hi75).chain(&forecast.loc).chain(matched.iter().flatten());
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::data("non-finite values in forecast"));
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let fr = Frame {
        n: forecast.len(),
        lo: lo - pad,
        hi: hi + pad,
    };

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(w, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##).unwrap();

    let top = polyline((0..fr.n).map(|i| (fr.x(i), fr.y(hi75[i]))));
    let bottom: String = (0..fr.n)
        .rev()
        .map(|i| format!(" L{:.2},{:.2}", fr.x(i), fr.y(lo75[i])))
        .collect();
    writeln!(w, r##"<path id="band75" d="{top}{bottom} Z" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##).unwrap();
    let lo_line = polyline((0..fr.n).map(|i| (fr.x(i), fr.y(lo75[i]))));
    let hi_line = polyline((0..fr.n).map(|i| (fr.x(i), fr.y(hi75[i]))));
    writeln!(w, r##"<path id="lo75" d="{lo_line}" fill="none" stroke="#6baed6" stroke-width="0.8"/>"##).unwrap();
    writeln!(w, r##"<path id="hi75" d="{hi_line}" fill="none" stroke="#6baed6" stroke-width="0.8"/>"##).unwrap();
    let fc = polyline((0..fr.n).map(|i| (fr.x(i), fr.y(forecast.loc[i]))));
    writeln!(w, r##"<path id="forecast" d="{fc}" fill="none" stroke="#08519c" stroke-width="1.5"/>"##).unwrap();

    let mut actual = String::new();
    let mut pen_down = false;
    for (i, v) in matched.iter().enumerate() {
        match v {
            Some(v) => {
                write!(actual, "{}{:.2},{:.2}", if pen_down { " L" } else if actual.is_empty() { "M" } else { " M" }, fr.x(i), fr.y(*v)).unwrap();
                pen_down = true;
            }
            None => pen_down = false,
        }
    }
    if !actual.is_empty() {
        writeln!(w, r##"<path id="actual" d="{actual}" fill="none" stroke="#000000" stroke-width="1.2"/>"##).unwrap();
    }

    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
    writeln!(w, r##"<path id="axes" d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="#444444"/>"##).unwrap();
    for k in 0..=4 {
        let v = fr.lo + (fr.hi - fr.lo) * k as f64 / 4.0;
        writeln!(
            w,
            r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end" fill="#444444">{v:.1}</text>"##,
            x0 - 6.0,
            fr.y(v) + 4.0
        )
        .unwrap();
    }
    for (i, anchor) in [(0, "start"), (fr.n - 1, "end")] {
        writeln!(
            w,
            r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}" fill="#444444">{}</text>"##,
            fr.x(i),
            y1 + 18.0,
            format_timestamp(&forecast.timestamps[i])
        )
        .unwrap();
    }
    writeln!(
        w,
        r##"<text x="{x0}" y="18" font-family="sans-serif" font-size="13" fill="#222222">forecast (blue), actual (black), 75% interval (shaded)</text>"##
    )
    .unwrap();
    writeln!(w, "</svg>").unwrap();
    Ok(svg)
}
