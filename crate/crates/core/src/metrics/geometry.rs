//! Planar geometry for confidence sets: convex hulls, polygon area and
//! point-in-polygon tests.

/// Convex hull with its area. `degenerate` is set when fewer than three
/// points are given or all of them are collinear; the area is then 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Hull {
    /// Counter-clockwise, no repeated first vertex, no collinear vertices.
    pub vertices: Vec<[f64; 2]>,
    pub area: f64,
    pub degenerate: bool,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain.
pub fn convex_hull_area(points: &[[f64; 2]]) -> Hull {
    let mut pts: Vec<[f64; 2]> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Hull {
            vertices: pts,
            area: 0.0,
            degenerate: true,
        };
    }
    let mut lower: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    let area = polygon_area(&lower);
    let degenerate = lower.len() < 3 || area <= 0.0;
    Hull {
        vertices: lower,
        area: if degenerate { 0.0 } else { area },
        degenerate,
    }
}

/// Shoelace formula; positive for counter-clockwise vertex order.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let scale = 1e-12 * (1.0 + a[0].abs().max(a[1].abs()).max(b[0].abs()).max(b[1].abs()));
    if cross(a, b, p).abs() > scale * ((b[0] - a[0]).hypot(b[1] - a[1]) + 1.0) {
        return false;
    }
    p[0] >= a[0].min(b[0]) - scale
        && p[0] <= a[0].max(b[0]) + scale
        && p[1] >= a[1].min(b[1]) - scale
        && p[1] <= a[1].max(b[1]) + scale
}

/// Even-odd test for any simple polygon; points on the boundary are inside.
pub fn point_in_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = poly.len();
    if n == 0 {
        return false;
    }
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if on_segment(a, b, p) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Containment in a hull; degenerate hulls contain nothing.
pub fn hull_contains(hull: &Hull, p: [f64; 2]) -> bool {
    !hull.degenerate && point_in_polygon(&hull.vertices, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let h = convex_hull_area(&sq);
        assert!((h.area - 1.0).abs() < 1e-15);
        let mut with_inner = sq.to_vec();
        with_inner.extend([[0.5, 0.5], [0.2, 0.9], [0.5, 0.0]]);
        let h2 = convex_hull_area(&with_inner);
        assert_eq!(h2.vertices.len(), 4);
        assert!((h2.area - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(convex_hull_area(&[[0.0, 0.0], [1.0, 1.0]]).degenerate);
        let line = convex_hull_area(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        assert!(line.degenerate);
        assert_eq!(line.area, 0.0);
        assert!(!hull_contains(&line, [1.0, 1.0]));
    }

    #[test]
    fn boundary_counts_as_inside() {
        let h = convex_hull_area(&[[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]);
        assert!(hull_contains(&h, [1.0, 0.0]));
        assert!(hull_contains(&h, [2.0, 2.0]));
        assert!(hull_contains(&h, [1.0, 1.0]));
        assert!(!hull_contains(&h, [2.0 + 1e-6, 1.0]));
    }

    #[test]
    fn concave_polygon() {
        // an L shape
        let poly = [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]];
        assert!(point_in_polygon(&poly, [0.5, 1.5]));
        assert!(!point_in_polygon(&poly, [1.5, 1.5]));
        assert!((polygon_area(&poly) - 3.0).abs() < 1e-15);
    }
}
