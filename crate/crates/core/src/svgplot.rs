//! Self-contained SVG line charts: mean lines with optional min/max bands,
//! labeled axes, and a legend. No external resources are referenced; the
//! output is plain well-formed XML.

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// One plotted group: a mean line and a (lo, hi) band across seeds.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Series {
    /// A band-less series (single run).
    pub fn line(label: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            lo: ys.clone(),
            hi: ys.clone(),
            mean: ys,
            xs,
        }
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round tick spacing to a 1/2/5 decade multiple.
fn nice_step(span: f64, target_ticks: usize) -> f64 {
    if span <= 0.0 || !span.is_finite() {
        return 1.0;
    }
    let raw = span / target_ticks as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let mult = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    mult * mag
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 10.0 {
        let s = format!("{v:.1}");
        s.strip_suffix(".0").unwrap_or(&s).to_string()
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

/// Renders a chart over `series`. Non-finite y values are skipped point by
/// point (fresh runs report NaN episode rewards before the first episode
/// completes).
pub fn render_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> String {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for (i, &x) in s.xs.iter().enumerate() {
            if !x.is_finite() {
                continue;
            }
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            for v in [s.mean[i], s.lo[i], s.hi[i]] {
                if v.is_finite() {
                    ymin = ymin.min(v);
                    ymax = ymax.max(v);
                }
            }
        }
    }
    if !xmin.is_finite() || !ymin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax - xmin).abs() < 1e-300 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-300 {
        ymax = ymin + 1.0;
    }
    let ypad = (ymax - ymin) * 0.05;
    ymin -= ypad;
    ymax += ypad;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = move |x: f64| MARGIN_L + (x - xmin) / (xmax - xmin) * plot_w;
    let sy = move |y: f64| MARGIN_T + (1.0 - (y - ymin) / (ymax - ymin)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    // Axes frame.
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n"
    ));

    // Ticks and grid.
    let xstep = nice_step(xmax - xmin, 6);
    let mut t = (xmin / xstep).ceil() * xstep;
    while t <= xmax + 1e-12 * xstep {
        let px = sx(t);
        svg.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{MARGIN_T}\" x2=\"{px}\" y2=\"{}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_T + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_T + plot_h + 16.0,
            fmt_tick(t)
        ));
        t += xstep;
    }
    let ystep = nice_step(ymax - ymin, 6);
    let mut t = (ymin / ystep).ceil() * ystep;
    while t <= ymax + 1e-12 * ystep {
        let py = sy(t);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_L + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 6.0,
            py + 4.0,
            fmt_tick(t)
        ));
        t += ystep;
    }

    // Axis labels.
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(y_label)
    ));

    // Series: band polygon (when lo != hi anywhere) then the mean polyline.
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let finite: Vec<usize> = (0..s.xs.len())
            .filter(|&i| s.xs[i].is_finite() && s.mean[i].is_finite())
            .collect();
        if finite.is_empty() {
            continue;
        }
        let has_band = finite
            .iter()
            .any(|&i| s.lo[i].is_finite() && s.hi[i].is_finite() && s.lo[i] != s.hi[i]);
        if has_band {
            let mut pts = String::new();
            for &i in &finite {
                pts.push_str(&format!("{:.2},{:.2} ", sx(s.xs[i]), sy(s.hi[i])));
            }
            for &i in finite.iter().rev() {
                pts.push_str(&format!("{:.2},{:.2} ", sx(s.xs[i]), sy(s.lo[i])));
            }
            svg.push_str(&format!(
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                pts.trim_end()
            ));
        }
        let mut pts = String::new();
        for &i in &finite {
            pts.push_str(&format!("{:.2},{:.2} ", sx(s.xs[i]), sy(s.mean[i])));
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            pts.trim_end()
        ));
    }

    // Legend.
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let ly = MARGIN_T + 14.0 + si as f64 * 18.0;
        let lx = MARGIN_L + 12.0;
        svg.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2.5\"/>\n",
            lx + 24.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            lx + 30.0,
            ly + 4.0,
            escape(&s.label)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

/// Minimal XML well-formedness check used by tests and the compare command:
/// balanced tags, one root element, no external references.
pub fn xml_is_well_formed(text: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0;
    let mut rest = text;
    // Skip the declaration if present.
    if let Some(s) = rest.strip_prefix("<?xml") {
        match s.find("?>") {
            Some(pos) => rest = &s[pos + 2..],
            None => return false,
        }
    }
    let bytes = rest.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let Some(end_rel) = rest[i..].find('>') else {
            return false;
        };
        let tag = &rest[i + 1..i + end_rel];
        i += end_rel + 1;
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name.trim() => {}
                _ => return false,
            }
            if stack.is_empty() {
                roots += 1;
            }
        } else if tag.ends_with('/') {
            if stack.is_empty() {
                roots += 1;
            }
        } else {
            let name = tag.split_whitespace().next().unwrap_or("");
            if name.is_empty() {
                return false;
            }
            stack.push(name.to_string());
        }
    }
    stack.is_empty() && roots >= 1
}
