use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::Vector2;

use super::SimError;

/// Shape of one lap.
#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    /// Clockwise square starting at the origin heading along +x.
    Square { side: f64 },
    /// Two tangent circles of radius `radius` meeting at the origin.
    FigureEight { radius: f64 },
    /// Rectangular corridor loop, clockwise, starting at the origin heading along +x.
    CorridorLoop { length: f64, width: f64 },
    /// Polyline read from a file. A closed polyline is repeated; an open one
    /// is walked out and back on every lap.
    Waypoints { points: Vec<Vector2<f64>>, closed: bool },
}

impl Trajectory {
    pub fn kind(&self) -> &'static str {
        match self {
            Trajectory::Square { .. } => "square",
            Trajectory::FigureEight { .. } => "figure-eight",
            Trajectory::CorridorLoop { .. } => "corridor-loop",
            Trajectory::Waypoints { .. } => "from-file",
        }
    }

    /// Reads whitespace- or comma-separated `x y` pairs, one per line. Lines
    /// starting with `#` are ignored. The polyline is closed when the first
    /// and last points coincide.
    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SimError::Waypoints(format!("{}: {e}", path.display())))?;
        Self::parse_waypoints(&text)
    }

    pub fn parse_waypoints(text: &str) -> Result<Self, SimError> {
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let values: Result<Vec<f64>, _> =
                line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(str::parse).collect();
            match values.as_deref() {
                Ok([x, y]) if x.is_finite() && y.is_finite() => points.push(Vector2::new(*x, *y)),
                _ => return Err(SimError::Waypoints(format!("line {}: expected two numbers", n + 1))),
            }
        }
        let closed = points.len() > 2 && (points[0] - points[points.len() - 1]).norm() < 1e-9;
        if closed {
            points.pop();
        }
        let trajectory = Trajectory::Waypoints { points, closed };
        trajectory.validate()?;
        Ok(trajectory)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::Invalid(name))
            }
        };
        match self {
            Trajectory::Square { side } => positive("side", *side),
            Trajectory::FigureEight { radius } => positive("radius", *radius),
            Trajectory::CorridorLoop { length, width } => {
                positive("length", *length)?;
                positive("width", *width)
            }
            Trajectory::Waypoints { points, .. } => {
                if points.len() < 2 {
                    return Err(SimError::Waypoints("need at least two distinct points".into()));
                }
                if points.windows(2).any(|w| (w[1] - w[0]).norm() == 0.0) {
                    return Err(SimError::Waypoints("consecutive points coincide".into()));
                }
                Ok(())
            }
        }
    }

    /// Arc-length parameterization of one lap.
    pub(crate) fn lap(&self) -> Lap {
        match self {
            Trajectory::Square { side } => Lap::closed_polyline(rectangle(*side, *side)),
            Trajectory::CorridorLoop { length, width } => Lap::closed_polyline(rectangle(*length, *width)),
            Trajectory::FigureEight { radius } => Lap::FigureEight { radius: *radius },
            Trajectory::Waypoints { points, closed: true } => Lap::closed_polyline(points.clone()),
            Trajectory::Waypoints { points, closed: false } => {
                let mut there_and_back = points.clone();
                there_and_back.extend(points.iter().rev().skip(1).take(points.len() - 2));
                Lap::closed_polyline(there_and_back)
            }
        }
    }
}

fn rectangle(length: f64, width: f64) -> Vec<Vector2<f64>> {
    vec![Vector2::new(0.0, 0.0), Vector2::new(length, 0.0), Vector2::new(length, -width), Vector2::new(0.0, -width)]
}

/// Heading whose forward direction `(cos psi, -sin psi)` is `dir`.
pub(crate) fn heading_of(dir: Vector2<f64>) -> f64 {
    (-dir.y).atan2(dir.x)
}

pub(crate) enum Lap {
    Polyline { vertices: Vec<Vector2<f64>>, cumulative: Vec<f64> },
    FigureEight { radius: f64 },
}

impl Lap {
    fn closed_polyline(mut vertices: Vec<Vector2<f64>>) -> Self {
        vertices.push(vertices[0]);
        let mut cumulative = vec![0.0];
        for w in vertices.windows(2) {
            cumulative.push(cumulative.last().unwrap() + (w[1] - w[0]).norm());
        }
        Lap::Polyline { vertices, cumulative }
    }

    pub(crate) fn length(&self) -> f64 {
        match self {
            Lap::Polyline { cumulative, .. } => *cumulative.last().unwrap(),
            Lap::FigureEight { radius } => 4.0 * PI * radius,
        }
    }

    /// Position and unit direction of travel at arc length `s` in `[0, length)`.
    /// At a polyline vertex the direction of the outgoing segment is used.
    pub(crate) fn point(&self, s: f64) -> (Vector2<f64>, Vector2<f64>) {
        match self {
            Lap::Polyline { vertices, cumulative } => {
                let seg = match cumulative.binary_search_by(|c| c.total_cmp(&s)) {
                    Ok(k) => k.min(vertices.len() - 2),
                    Err(k) => k.saturating_sub(1).min(vertices.len() - 2),
                };
                let a = vertices[seg];
                let b = vertices[seg + 1];
                let dir = (b - a).normalize();
                (a + dir * (s - cumulative[seg]), dir)
            }
            Lap::FigureEight { radius } => {
                let r = *radius;
                let half = TAU * r;
                if s < half {
                    // Clockwise around (0, -r), starting at the top heading +x.
                    let a = s / r;
                    let p = Vector2::new(r * a.sin(), -r + r * a.cos());
                    (p, Vector2::new(a.cos(), -a.sin()))
                } else {
                    // Counter-clockwise around (0, r), starting at the bottom heading +x.
                    let a = (s - half) / r;
                    let p = Vector2::new(r * a.sin(), r - r * a.cos());
                    (p, Vector2::new(a.cos(), a.sin()))
                }
            }
        }
    }
}
