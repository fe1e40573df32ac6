//! Minimal self-contained SVG figures. Each plot is one file with no
//! external references, so any viewer or converter can render it, and the
//! underlying CSV lets external tooling re-plot from scratch.

use reachfunnel::gp::StateBox;
use reachfunnel::sim::Trajectory;

const FIG_W: f64 = 720.0;
const FIG_H: f64 = 540.0;

/// Pixel region of a panel together with the data ranges it shows.
struct Axes {
    px0: f64,
    py0: f64,
    px1: f64,
    py1: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

fn fmt(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

impl Axes {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = self.px0 + (x - self.x0) / (self.x1 - self.x0) * (self.px1 - self.px0);
        let py = self.py1 - (y - self.y0) / (self.y1 - self.y0) * (self.py1 - self.py0);
        (px, py)
    }

    fn frame(&self, buf: &mut String, xlabel: &str, ylabel: &str, tick_x: bool) {
        buf.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" \
             stroke=\"#333\" stroke-width=\"1\"/>\n",
            self.px0,
            self.py0,
            self.px1 - self.px0,
            self.py1 - self.py0
        ));
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            let (px, _) = self.map(xv, self.y0);
            let (_, py) = self.map(self.x0, yv);
            if tick_x {
                buf.push_str(&format!(
                    "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" \
                     stroke=\"#333\"/>\n",
                    self.py1,
                    self.py1 + 4.0
                ));
                buf.push_str(&format!(
                    "<text x=\"{px:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\" \
                     fill=\"#333\">{}</text>\n",
                    self.py1 + 16.0,
                    fmt(xv)
                ));
            }
            buf.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" \
                 stroke=\"#333\"/>\n",
                self.px0 - 4.0,
                self.px0
            ));
            buf.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\" \
                 fill=\"#333\">{}</text>\n",
                self.px0 - 7.0,
                py + 4.0,
                fmt(yv)
            ));
        }
        if tick_x && !xlabel.is_empty() {
            buf.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" \
                 fill=\"#333\">{xlabel}</text>\n",
                (self.px0 + self.px1) / 2.0,
                self.py1 + 32.0
            ));
        }
        if !ylabel.is_empty() {
            let cy = (self.py0 + self.py1) / 2.0;
            buf.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{cy:.1}\" font-size=\"12\" text-anchor=\"middle\" \
                 fill=\"#333\" transform=\"rotate(-90 {:.1} {cy:.1})\">{ylabel}</text>\n",
                self.px0 - 38.0,
                self.px0 - 38.0
            ));
        }
    }

    fn polyline(&self, buf: &mut String, pts: &[(f64, f64)], style: &str) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|(x, y)| {
                let (px, py) = self.map(*x, *y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        buf.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" {style}/>\n",
            coords.join(" ")
        ));
    }

    fn band(&self, buf: &mut String, upper: &[(f64, f64)], lower: &[(f64, f64)], fill: &str) {
        if upper.len() < 2 {
            return;
        }
        let mut d = String::from("M");
        for (x, y) in upper {
            let (px, py) = self.map(*x, *y);
            d.push_str(&format!(" {px:.2},{py:.2}"));
        }
        for (x, y) in lower.iter().rev() {
            let (px, py) = self.map(*x, *y);
            d.push_str(&format!(" L {px:.2},{py:.2}"));
        }
        d.push('Z');
        buf.push_str(&format!("<path d=\"{d}\" fill=\"{fill}\" stroke=\"none\"/>\n"));
    }

    fn rect_data(&self, buf: &mut String, b: &StateBox, stroke: &str, fill: &str, label: &str) {
        let (x0, x1) = b.interval(0);
        let (y0, y1) = b.interval(1);
        let (px0, py1) = self.map(x0, y0);
        let (px1, py0) = self.map(x1, y1);
        buf.push_str(&format!(
            "<rect x=\"{px0:.1}\" y=\"{py0:.1}\" width=\"{:.1}\" height=\"{:.1}\" \
             fill=\"{fill}\" stroke=\"{stroke}\" stroke-width=\"1.2\"/>\n",
            px1 - px0,
            py1 - py0
        ));
        if !label.is_empty() {
            buf.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"{stroke}\">{label}</text>\n",
                px0 + 4.0,
                py0 + 14.0
            ));
        }
    }
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{FIG_W:.0}\" height=\"{FIG_H:.0}\" \
         viewBox=\"0 0 {FIG_W:.0} {FIG_H:.0}\" font-family=\"sans-serif\">\n\
         <rect width=\"{FIG_W:.0}\" height=\"{FIG_H:.0}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"22\" font-size=\"14\" text-anchor=\"middle\" \
         fill=\"#111\">{title}</text>\n",
        FIG_W / 2.0
    )
}

/// State-space portrait: domain frame, start and goal boxes, the attractor,
/// and one polyline per trajectory with a dot at its initial state.
pub fn state_space(
    domain: &StateBox,
    start: &StateBox,
    goal: &StateBox,
    eta: &[f64],
    trajs: &[&Trajectory],
) -> String {
    let (x0, x1) = domain.interval(0);
    let (y0, y1) = domain.interval(1);
    let axes = Axes {
        px0: 60.0,
        py0: 40.0,
        px1: FIG_W - 20.0,
        py1: FIG_H - 50.0,
        x0,
        x1,
        y0,
        y1,
    };
    let mut buf = svg_open("Closed-loop trajectories");
    axes.frame(&mut buf, "x1", "x2", true);
    axes.rect_data(
        &mut buf,
        start,
        "#4682b4",
        "rgba(70,130,180,0.12)",
        "start set",
    );
    axes.rect_data(
        &mut buf,
        goal,
        "#2e8b57",
        "rgba(46,139,87,0.12)",
        "goal set",
    );
    for traj in trajs {
        let pts: Vec<(f64, f64)> = traj.states().iter().map(|x| (x[0], x[1])).collect();
        axes.polyline(&mut buf, &pts, "stroke=\"#b03030\" stroke-width=\"1.1\"");
        if let Some(first) = traj.states().first() {
            let (px, py) = axes.map(first[0], first[1]);
            buf.push_str(&format!(
                "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"3\" fill=\"#b03030\"/>\n"
            ));
        }
    }
    let (px, py) = axes.map(eta[0], eta[1]);
    buf.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#111\" \
         stroke-width=\"1.5\"/>\n",
        px - 5.0,
        py - 5.0,
        px + 5.0,
        py + 5.0
    ));
    buf.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#111\" \
         stroke-width=\"1.5\"/>\n",
        px - 5.0,
        py + 5.0,
        px + 5.0,
        py - 5.0
    ));
    buf.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"#111\">attractor</text>\n",
        px + 8.0,
        py - 6.0
    ));
    buf.push_str("</svg>\n");
    buf
}

/// Per-dimension time series of one trajectory inside its shrinking
/// corridor, one panel per state dimension.
pub fn timeseries(traj: &Trajectory) -> String {
    let n = traj.state_dim();
    let times = traj.times();
    let mut buf = svg_open("States inside the funnel corridor");
    let top = 40.0;
    let bottom = FIG_H - 50.0;
    let gap = 34.0;
    let panel_h = (bottom - top - gap * (n as f64 - 1.0)) / n as f64;
    for i in 0..n {
        let py0 = top + i as f64 * (panel_h + gap);
        let lower: Vec<(f64, f64)> = times
            .iter()
            .zip(traj.bounds())
            .map(|(t, b)| (*t, b[i].0))
            .collect();
        let upper: Vec<(f64, f64)> = times
            .iter()
            .zip(traj.bounds())
            .map(|(t, b)| (*t, b[i].1))
            .collect();
        let state: Vec<(f64, f64)> = times
            .iter()
            .zip(traj.states())
            .map(|(t, x)| (*t, x[i]))
            .collect();
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for series in [&lower, &upper, &state] {
            for (_, y) in series.iter() {
                ymin = ymin.min(*y);
                ymax = ymax.max(*y);
            }
        }
        let pad = 0.05 * (ymax - ymin).max(1e-9);
        let axes = Axes {
            px0: 60.0,
            py0,
            px1: FIG_W - 20.0,
            py1: py0 + panel_h,
            x0: times[0],
            x1: traj.final_time().max(times[0] + 1e-9),
            y0: ymin - pad,
            y1: ymax + pad,
        };
        let last = i == n - 1;
        axes.frame(&mut buf, if last { "t" } else { "" }, &format!("x{}", i + 1), last);
        axes.band(&mut buf, &upper, &lower, "rgba(120,120,120,0.15)");
        let dash = "stroke=\"#777\" stroke-width=\"1\" stroke-dasharray=\"4 3\"";
        axes.polyline(&mut buf, &upper, dash);
        axes.polyline(&mut buf, &lower, dash);
        axes.polyline(&mut buf, &state, "stroke=\"#1f5fa8\" stroke-width=\"1.4\"");
    }
    buf.push_str("</svg>\n");
    buf
}
