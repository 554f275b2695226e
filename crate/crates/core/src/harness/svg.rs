//! Minimal deterministic SVG line charts.
//!
//! Rendering is a pure function of its inputs so a stored CSV regenerates
//! byte-identical figures.

/// One line on the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 830.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 460.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#7f7f7f", "#17becf",
];

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 0.01 && v.abs() < 10_000.0 {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

/// Renders a line chart; y is log10-scaled when `log_y` is set and every
/// value is positive, otherwise linear.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_y: bool,
) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    let use_log = log_y && ys.iter().all(|&y| y > 0.0) && !ys.is_empty();

    let (x_min, x_max) = span(&xs);
    let (y_min, y_max) = if use_log {
        let (a, b) = span(&ys.iter().map(|y| y.log10()).collect::<Vec<_>>());
        (a, b)
    } else {
        span(&ys)
    };

    let x_of = |x: f64| -> f64 {
        if x_max > x_min {
            LEFT + (x - x_min) / (x_max - x_min) * (RIGHT - LEFT)
        } else {
            (LEFT + RIGHT) / 2.0
        }
    };
    let y_of = |y: f64| -> f64 {
        let v = if use_log { y.log10() } else { y };
        if y_max > y_min {
            BOTTOM - (v - y_min) / (y_max - y_min) * (BOTTOM - TOP)
        } else {
            (TOP + BOTTOM) / 2.0
        }
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"18\" \
         text-anchor=\"middle\">{}</text>\n",
        (LEFT + RIGHT) / 2.0,
        escape(title)
    ));

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = fmt(LEFT),
        r = fmt(RIGHT),
        t = fmt(TOP),
        b = fmt(BOTTOM)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">{}</text>\n",
        (LEFT + RIGHT) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0,
        escape(y_label)
    ));

    // X ticks at distinct data positions.
    let mut x_ticks = xs.clone();
    x_ticks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    x_ticks.dedup();
    for &x in &x_ticks {
        let px = x_of(x);
        svg.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{b}\" x2=\"{px:.2}\" y2=\"{b2}\" stroke=\"black\"/>\n\
             <text x=\"{px:.2}\" y=\"{ty}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"middle\">{label}</text>\n",
            b = fmt(BOTTOM),
            b2 = fmt(BOTTOM + 5.0),
            ty = fmt(BOTTOM + 20.0),
            label = fmt_tick(x)
        ));
    }

    // Y ticks: decades when log-scaled, five even ticks otherwise.
    let y_ticks: Vec<f64> = if use_log {
        let lo = y_min.floor() as i64;
        let hi = y_max.ceil() as i64;
        (lo..=hi).map(|k| 10f64.powi(k as i32)).collect()
    } else if y_max > y_min {
        (0..=4)
            .map(|i| y_min + (y_max - y_min) * i as f64 / 4.0)
            .collect()
    } else {
        vec![y_min]
    };
    for &y in &y_ticks {
        let py = y_of(y);
        if !(TOP - 1.0..=BOTTOM + 1.0).contains(&py) {
            continue;
        }
        svg.push_str(&format!(
            "<line x1=\"{l1}\" y1=\"{py:.2}\" x2=\"{l}\" y2=\"{py:.2}\" stroke=\"black\"/>\n\
             <line x1=\"{l}\" y1=\"{py:.2}\" x2=\"{r}\" y2=\"{py:.2}\" stroke=\"#dddddd\" \
             stroke-dasharray=\"3,3\"/>\n\
             <text x=\"{tx}\" y=\"{ty:.2}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"end\">{label}</text>\n",
            l1 = fmt(LEFT - 5.0),
            l = fmt(LEFT),
            r = fmt(RIGHT),
            tx = fmt(LEFT - 8.0),
            ty = py + 4.0,
            label = fmt_tick(y)
        ));
    }

    // Series lines, points, legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut sorted = s.points.clone();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let path: Vec<String> = sorted
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", x_of(x), y_of(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in &sorted {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                x_of(x),
                y_of(y)
            ));
        }
        let ly = TOP + 16.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{x1}\" y1=\"{ly:.2}\" x2=\"{x2}\" y2=\"{ly:.2}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n\
             <text x=\"{tx}\" y=\"{ty:.2}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>\n",
            x1 = fmt(RIGHT - 130.0),
            x2 = fmt(RIGHT - 105.0),
            tx = fmt(RIGHT - 100.0),
            ty = ly + 4.0,
            name = escape(&s.name)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

fn span(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic() {
        let series = vec![
            Series {
                name: "lope".into(),
                points: vec![(200.0, 0.02), (1000.0, 0.004)],
            },
            Series {
                name: "ips".into(),
                points: vec![(200.0, 0.05), (1000.0, 0.011)],
            },
        ];
        let a = line_chart("mse", "n", "mse", &series, true);
        let b = line_chart("mse", "n", "mse", &series, true);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("polyline"));
    }

    #[test]
    fn log_scale_falls_back_on_nonpositive_values() {
        let series = vec![Series {
            name: "x".into(),
            points: vec![(0.0, 0.0), (1.0, 2.0)],
        }];
        let svg = line_chart("t", "x", "y", &series, true);
        assert!(svg.contains("</svg>"));
    }
}
