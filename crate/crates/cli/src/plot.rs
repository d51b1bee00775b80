//! Static SVG figures: top-down trajectory overlays and metric-vs-horizon
//! curves.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const GT_COLOR: &str = "#2ca02c";
const PRED_COLOR: &str = "#d62728";
const OBS_COLOR: &str = "#7f7f7f";

/// One overlay panel, points in the (x, z) ground plane.
pub struct OverlayPanel {
    pub title: String,
    pub obs: Vec<[f64; 2]>,
    pub gt: Vec<[f64; 2]>,
    pub pred: Vec<[f64; 2]>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Frame {
    fn fit(x0: f64, y0: f64, w: f64, h: f64, pts: impl Iterator<Item = [f64; 2]>, equal: bool) -> Frame {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in pts.filter(|p| p[0].is_finite() && p[1].is_finite()) {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            lo = [0.0, 0.0];
            hi = [1.0, 1.0];
        }
        for k in 0..2 {
            let pad = ((hi[k] - lo[k]) * 0.08).max(0.25);
            lo[k] -= pad;
            hi[k] += pad;
        }
        if equal {
            // Same metres-per-pixel on both axes.
            let scale = ((hi[0] - lo[0]) / w).max((hi[1] - lo[1]) / h);
            for (k, len) in [(0, w), (1, h)] {
                let mid = (lo[k] + hi[k]) / 2.0;
                lo[k] = mid - scale * len / 2.0;
                hi[k] = mid + scale * len / 2.0;
            }
        }
        Frame { x0, y0, w, h, lo, hi }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            self.x0 + (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * self.w,
            self.y0 + self.h - (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1]) * self.h,
        )
    }

    fn polyline(&self, pts: &[[f64; 2]], class: &str, color: &str, extra: &str) -> String {
        let coords: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = self.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        format!(
            "<polyline class=\"{class}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{extra}/>\n",
            coords.join(" ")
        )
    }
}

pub fn overlay_svg(title: &str, panels: &[OverlayPanel]) -> String {
    let (pw, ph, pad) = (260.0, 260.0, 30.0);
    let cols = panels.len().clamp(1, 4);
    let rows = panels.len().div_ceil(cols).max(1);
    let width = cols as f64 * (pw + pad) + pad;
    let height = rows as f64 * (ph + pad + 20.0) + 60.0;
    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" font-family=\"sans-serif\" font-size=\"12\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{pad}\" y=\"22\" font-size=\"15\">{}</text>",
        escape(title)
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"{pad}\" y=\"40\"><tspan fill=\"{OBS_COLOR}\">observed</tspan>  <tspan fill=\"{GT_COLOR}\">ground truth</tspan>  <tspan fill=\"{PRED_COLOR}\">predicted</tspan>  (top-down x/z, metres)</text>"
    )
    .unwrap();
    for (i, p) in panels.iter().enumerate() {
        let x0 = pad + (i % cols) as f64 * (pw + pad);
        let y0 = 60.0 + (i / cols) as f64 * (ph + pad + 20.0) + 16.0;
        let all = p.obs.iter().chain(&p.gt).chain(&p.pred).copied();
        let f = Frame::fit(x0, y0, pw, ph, all, true);
        writeln!(s, "<g class=\"sample\">").unwrap();
        writeln!(s, "<text x=\"{x0}\" y=\"{:.1}\">{}</text>", y0 - 4.0, escape(&p.title)).unwrap();
        writeln!(
            s,
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#cccccc\"/>"
        )
        .unwrap();
        // The observed track joins the first future point so the curves connect.
        let mut obs = p.obs.clone();
        let mut gt = p.gt.clone();
        let mut pred = p.pred.clone();
        if let Some(&last) = p.obs.last() {
            gt.insert(0, last);
            pred.insert(0, last);
            obs.push(last);
        }
        s.push_str(&f.polyline(&obs, "obs", OBS_COLOR, ""));
        s.push_str(&f.polyline(&gt, "gt", GT_COLOR, ""));
        s.push_str(&f.polyline(&pred, "pred", PRED_COLOR, " stroke-dasharray=\"5,3\""));
        for (pts, color) in [(&p.gt, GT_COLOR), (&p.pred, PRED_COLOR)] {
            for &pt in pts.iter() {
                let (x, y) = f.map(pt);
                writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"{color}\"/>").unwrap();
            }
        }
        writeln!(s, "</g>").unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Line chart of per-step values, one series per model.
pub fn horizon_svg(title: &str, y_label: &str, series: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (560.0, 360.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let steps = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let ymax = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.1 } else { 1.0 };
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let px = |k: usize| {
        left + if steps > 1 {
            k as f64 / (steps - 1) as f64 * plot_w
        } else {
            plot_w / 2.0
        }
    };
    let py = |v: f64| top + plot_h - v / ymax * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{left}\" y=\"24\" font-size=\"15\">{}</text>",
        escape(title)
    )
    .unwrap();
    writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>",
        top + plot_h,
        left + plot_w
    )
    .unwrap();
    writeln!(
        s,
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>",
        top + plot_h
    )
    .unwrap();
    for k in 0..steps {
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            px(k),
            top + plot_h + 16.0,
            k + 1
        )
        .unwrap();
    }
    for t in 0..=4 {
        let v = ymax * t as f64 / 4.0;
        writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.3}</text>",
            left - 6.0,
            py(v) + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">prediction step</text>",
        left + plot_w / 2.0,
        h - 12.0
    )
    .unwrap();
    writeln!(
        s,
        "<text transform=\"translate(18 {:.1}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        top + plot_h / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (i, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(k, &v)| format!("{:.2},{:.2}", px(k), py(v)))
            .collect();
        writeln!(
            s,
            "<g class=\"series\" data-name=\"{}\">\n<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            escape(name),
            pts.join(" ")
        )
        .unwrap();
        for (k, &v) in values.iter().enumerate() {
            writeln!(
                s,
                "<circle class=\"point\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                px(k),
                py(v)
            )
            .unwrap();
        }
        writeln!(s, "</g>").unwrap();
        let ly = top + 10.0 + 18.0 * i as f64;
        writeln!(
            s,
            "<line x1=\"{0:.1}\" y1=\"{ly:.1}\" x2=\"{1:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{2:.1}\" y=\"{3:.1}\">{4}</text>",
            left + plot_w + 12.0,
            left + plot_w + 32.0,
            left + plot_w + 38.0,
            ly + 4.0,
            escape(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
