//! SVG overlays of hole density and search pattern.

use std::fmt::Write as _;

use dpse::env::GaussianMixture2D;
use dpse::params::{SearchRegion, StrategyParams};
use dpse::sim::SpiralPath;

const PANEL: f64 = 320.0;
const PAD: f64 = 24.0;
const GRID: usize = 64;
const LEVELS: [f64; 4] = [0.1, 0.3, 0.6, 0.9];

/// One panel of a time strip.
#[derive(Debug, Clone)]
pub struct Frame {
    pub mixture: GaussianMixture2D,
    pub params: StrategyParams,
    pub label: String,
}

/// Polyline the simulator follows for spiral params.
pub fn spiral_polyline(params: &StrategyParams, region: &SearchRegion) -> Option<Vec<[f64; 2]>> {
    params.as_spiral().map(|p| SpiralPath::for_region(p, region).points)
}

/// Density contours plus touch points or spiral path. With a non-empty
/// `trajectory` each frame becomes one panel of a horizontal strip;
/// otherwise a single panel shows `mixture` and `params`.
pub fn plot_pattern(
    mixture: &GaussianMixture2D,
    params: &StrategyParams,
    region: &SearchRegion,
    trajectory: &[Frame],
) -> String {
    let single = [Frame {
        mixture: mixture.clone(),
        params: params.clone(),
        label: String::new(),
    }];
    let frames = if trajectory.is_empty() { &single[..] } else { trajectory };
    let width = frames.len() as f64 * (PANEL + PAD) + PAD;
    let height = PANEL + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (i, f) in frames.iter().enumerate() {
        let x0 = PAD + i as f64 * (PANEL + PAD);
        panel(&mut s, f, region, x0, PAD);
    }
    s.push_str("</svg>\n");
    s
}

fn panel(s: &mut String, f: &Frame, region: &SearchRegion, x0: f64, y0: f64) {
    let h = region.half_extent;
    let scale = PANEL / (2.0 * h);
    let cx = x0 + PANEL / 2.0;
    let cy = y0 + PANEL / 2.0;
    let _ = writeln!(
        s,
        r##"<rect x="{x0}" y="{y0}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#444"/>"##
    );
    if !f.label.is_empty() {
        let _ = writeln!(s, r#"<text x="{x0}" y="{}" font-size="12">{}</text>"#, y0 - 6.0, escape(&f.label));
    }
    let _ = writeln!(s, r#"<g transform="translate({cx} {cy}) scale({scale} {})">"#, -scale);
    for (k, d) in contours(&f.mixture, h).into_iter().enumerate() {
        if !d.is_empty() {
            let shade = 200 - 40 * k;
            let _ = writeln!(
                s,
                r#"<path d="{d}" fill="none" stroke="rgb({shade},{shade},{shade})" vector-effect="non-scaling-stroke"/>"#
            );
        }
    }
    match &f.params {
        StrategyParams::Probe(p) => {
            for q in &p.points {
                let _ = writeln!(
                    s,
                    r##"<circle cx="{:.4}" cy="{:.4}" r="{}" fill="#1f77b4" fill-opacity="0.35" stroke="#1f77b4" vector-effect="non-scaling-stroke"/>"##,
                    q[0], q[1], region.clearance
                );
            }
        }
        StrategyParams::Spiral(_) => {
            let pts = spiral_polyline(&f.params, region).expect("spiral params");
            let mut attr = String::with_capacity(pts.len() * 20);
            for q in &pts {
                let _ = write!(attr, "{:.4},{:.4} ", q[0], q[1]);
            }
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#1f77b4" vector-effect="non-scaling-stroke"/>"##,
                attr.trim_end()
            );
        }
    }
    s.push_str("</g>\n");
    if let StrategyParams::Probe(p) = &f.params {
        for (j, q) in p.points.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="middle">{}</text>"#,
                cx + q[0] * scale,
                cy - q[1] * scale + 3.0,
                j + 1
            );
        }
    }
}

/// Marching-squares iso-lines of the density at fixed fractions of its grid
/// maximum, one SVG path string per level.
fn contours(m: &GaussianMixture2D, h: f64) -> Vec<String> {
    let n = GRID;
    let step = 2.0 * h / n as f64;
    let at = |i: usize| -h + i as f64 * step;
    let mut v = vec![0.0; (n + 1) * (n + 1)];
    for j in 0..=n {
        for i in 0..=n {
            v[j * (n + 1) + i] = m.log_density([at(i), at(j)]).exp();
        }
    }
    let vmax = v.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::with_capacity(LEVELS.len());
    for frac in LEVELS {
        let level = frac * vmax;
        let mut d = String::new();
        if vmax > 0.0 {
            for j in 0..n {
                for i in 0..n {
                    let c = [
                        v[j * (n + 1) + i],
                        v[j * (n + 1) + i + 1],
                        v[(j + 1) * (n + 1) + i + 1],
                        v[(j + 1) * (n + 1) + i],
                    ];
                    let p = [[at(i), at(j)], [at(i + 1), at(j)], [at(i + 1), at(j + 1)], [at(i), at(j + 1)]];
                    let mut crossings = Vec::with_capacity(4);
                    for e in 0..4 {
                        let (a, b) = (e, (e + 1) % 4);
                        if (c[a] >= level) != (c[b] >= level) {
                            let t = (level - c[a]) / (c[b] - c[a]);
                            crossings.push([p[a][0] + t * (p[b][0] - p[a][0]), p[a][1] + t * (p[b][1] - p[a][1])]);
                        }
                    }
                    for seg in crossings.chunks(2) {
                        if let [a, b] = seg {
                            let _ = write!(d, "M{:.3} {:.3}L{:.3} {:.3}", a[0], a[1], b[0], b[1]);
                        }
                    }
                }
            }
        }
        out.push(d);
    }
    out
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
