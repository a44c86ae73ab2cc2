//! Static SVG scatter plots of datasets and CVQFs with their α-contour hulls.

use std::fmt::Write;

use vqreg::metrics::confidence_set;
use vqreg::{Dataset, DiscreteCvqf};

use crate::CliError;

const SIZE: f64 = 480.0;
const PAD: f64 = 24.0;
const HULL_ALPHAS: [f64; 3] = [0.05, 0.1, 0.25];
const HULL_COLOURS: [&str; 3] = ["#d62728", "#ff7f0e", "#2ca02c"];

struct Frame {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Frame {
    fn fit(points: &[[f64; 2]]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for a in 0..2 {
            if !(hi[a] > lo[a]) {
                lo[a] -= 0.5;
                hi[a] += 0.5;
            }
        }
        Self { lo, hi }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let w = SIZE - 2.0 * PAD;
        let x = PAD + (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * w;
        let y = SIZE - PAD - (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1]) * w;
        (x, y)
    }
}

fn svg(points: &[[f64; 2]], hulls: &[(Vec<[f64; 2]>, &str)], title: &str) -> String {
    let frame = Frame::fit(points);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="16" font-family="sans-serif" font-size="12">{title}</text>"#);
    for p in points {
        let (x, y) = frame.map(*p);
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="#1f77b4" fill-opacity="0.5"/>"##);
    }
    for (hull, colour) in hulls {
        if hull.len() < 3 {
            continue;
        }
        let pts: Vec<String> = hull
            .iter()
            .map(|p| {
                let (x, y) = frame.map(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `y_0` against `y_1` for two-dimensional targets, else `x_0` against `y_0`.
pub fn dataset_svg(ds: &Dataset) -> String {
    let y = ds.y();
    let points: Vec<[f64; 2]> = if ds.d() >= 2 {
        y.rows().into_iter().map(|r| [r[0], r[1]]).collect()
    } else if ds.k() >= 1 {
        ds.x().column(0).iter().zip(y.column(0)).map(|(a, b)| [*a, *b]).collect()
    } else {
        y.column(0).iter().enumerate().map(|(i, v)| [i as f64, *v]).collect()
    };
    svg(&points, &[], &ds.name)
}

/// Quantile points, with α-contour hulls for two-dimensional CVQFs.
pub fn cvqf_svg(q: &DiscreteCvqf) -> Result<String, CliError> {
    let v = q.values();
    if q.grid().dim() == 2 {
        let points: Vec<[f64; 2]> = v.rows().into_iter().map(|r| [r[0], r[1]]).collect();
        let mut hulls = Vec::new();
        for (alpha, colour) in HULL_ALPHAS.iter().zip(HULL_COLOURS) {
            let h = confidence_set(q, *alpha)?;
            hulls.push((h.vertices, colour));
        }
        Ok(svg(&points, &hulls, "CVQF and alpha-contours"))
    } else {
        let levels = q.grid().levels();
        let points: Vec<[f64; 2]> = levels.column(0).iter().zip(v.column(0)).map(|(u, y)| [*u, *y]).collect();
        Ok(svg(&points, &[], "quantile function"))
    }
}
