//! Planar polygon helpers: area, containment, hull, buffering and
//! half-plane clipping with edge provenance.

pub type Point = [f64; 2];

/// Signed shoelace area; positive for counter-clockwise rings. The ring is
/// implicitly closed.
pub fn signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

pub fn area(ring: &[Point]) -> f64 {
    signed_area(ring).abs()
}

/// Even-odd ray casting. Points on the boundary may go either way.
pub fn contains(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from `p` to the closest point of the ring outline.
#[cfg(test)]
pub fn distance_to_outline(ring: &[Point], p: Point) -> f64 {
    let n = ring.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 > 0.0 {
            (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [a[0] + t * d[0], a[1] + t * d[1]];
        best = best.min((p[0] - q[0]).hypot(p[1] - q[1]));
    }
    best
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; counter-clockwise, no repeated endpoint,
/// collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(pts.len() * 2);
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Outer offset of a convex hull by `radius`, with round joins sampled every
/// `step` radians at most. Accepts degenerate hulls of one or two points.
pub fn buffer_convex(hull: &[Point], radius: f64, step: f64) -> Vec<Point> {
    use std::f64::consts::TAU;
    let arc = |out: &mut Vec<Point>, c: Point, from: f64, sweep: f64| {
        let n = ((sweep / step).ceil() as usize).max(1);
        for k in 0..=n {
            let t = from + sweep * k as f64 / n as f64;
            out.push([c[0] + radius * t.cos(), c[1] + radius * t.sin()]);
        }
    };
    let mut out = Vec::new();
    match hull.len() {
        0 => {}
        1 => {
            let n = (TAU / step).ceil() as usize;
            for k in 0..n {
                let t = TAU * k as f64 / n as f64;
                out.push([hull[0][0] + radius * t.cos(), hull[0][1] + radius * t.sin()]);
            }
        }
        n => {
            // outward normal of edge i (from hull[i] to hull[i+1]) for a CCW ring
            let normal_angle = |i: usize| {
                let a = hull[i];
                let b = hull[(i + 1) % n];
                (-(b[0] - a[0])).atan2(b[1] - a[1])
            };
            for i in 0..n {
                let prev = normal_angle((i + n - 1) % n);
                let next = normal_angle(i);
                let mut sweep = next - prev;
                while sweep < 0.0 {
                    sweep += TAU;
                }
                while sweep >= TAU {
                    sweep -= TAU;
                }
                // two-point hulls turn back on themselves: half a circle at each end
                if n == 2 && sweep == 0.0 {
                    sweep = std::f64::consts::PI;
                }
                arc(&mut out, hull[i], prev, sweep);
            }
        }
    }
    out.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    out
}

/// Ring whose edges remember which generator's bisector created them.
/// `label[i]` tags the edge from `points[i]` to `points[i + 1]`; `None` is the
/// original boundary.
#[derive(Debug, Clone, Default)]
pub struct LabeledRing {
    pub points: Vec<Point>,
    pub labels: Vec<Option<usize>>,
}

impl LabeledRing {
    pub fn from_boundary(ring: &[Point]) -> Self {
        Self {
            points: ring.to_vec(),
            labels: vec![None; ring.len()],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() < 3
    }

    /// Keeps the part where `(x - origin) . normal <= 0`, tagging new edges
    /// with `label`. Works for non-convex rings.
    pub fn clip_half_plane(&self, origin: Point, normal: Point, label: usize) -> LabeledRing {
        let n = self.points.len();
        let side = |p: Point| (p[0] - origin[0]) * normal[0] + (p[1] - origin[1]) * normal[1];
        let mut out = LabeledRing {
            points: Vec::with_capacity(n + 2),
            labels: Vec::with_capacity(n + 2),
        };
        for i in 0..n {
            let j = (i + 1) % n;
            let (a, b) = (self.points[i], self.points[j]);
            let (sa, sb) = (side(a), side(b));
            let (ina, inb) = (sa <= 0.0, sb <= 0.0);
            let crossing = || {
                let t = sa / (sa - sb);
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            };
            match (ina, inb) {
                (true, true) => {
                    out.points.push(b);
                    out.labels.push(self.labels[j]);
                }
                (true, false) => {
                    out.points.push(crossing());
                    out.labels.push(Some(label));
                }
                (false, true) => {
                    out.points.push(crossing());
                    out.labels.push(self.labels[i]);
                    out.points.push(b);
                    out.labels.push(self.labels[j]);
                }
                (false, false) => {}
            }
        }
        out
    }

    pub fn max_distance_from(&self, p: Point) -> f64 {
        self.points
            .iter()
            .map(|q| (q[0] - p[0]).hypot(q[1] - p[1]))
            .fold(0.0, f64::max)
    }
}
