//! Envelope fitting on `(x, y)` clouds: least squares on the upper convex
//! hull, then lifted so the line dominates every point.

/// Upper convex hull of a point cloud, left to right, collinear points dropped.
pub fn upper_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Ordinary least-squares line `y = slope x + intercept`.
pub fn least_squares(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of the least-squares line through the upper hull.
pub fn upper_hull_slope(points: &[(f64, f64)]) -> Option<f64> {
    least_squares(&upper_hull(points)).map(|(slope, _)| slope)
}

/// Smallest intercept `c` with `y <= slope x + c` on every point.
pub fn lift_intercept(points: &[(f64, f64)], slope: f64) -> f64 {
    points
        .iter()
        .map(|(x, y)| y - slope * x)
        .fold(f64::NEG_INFINITY, f64::max)
}
