use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when snapping lengths to grid counts.
pub const GRID_TOL: f64 = 1e-9;

pub type Point = [f64; 2];

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
            return Err(Error::invalid("rectangle bounds must be finite"));
        }
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::invalid(format!(
                "empty rectangle [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Ok(Rect { x0, x1, y0, y1 })
    }

    pub fn unit() -> Self {
        Rect { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }

    /// Square of half-side `half` centred at `c`.
    pub fn centered(c: Point, half: f64) -> Self {
        Rect { x0: c[0] - half, x1: c[0] + half, y0: c[1] - half, y1: c[1] + half }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.width() + self.height())
    }

    pub fn center(&self) -> Point {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    pub fn diam(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }

    /// Containment with a slack proportional to the rectangle size.
    pub fn contains_rect(&self, other: &Rect) -> bool {
        let tol = GRID_TOL * self.diam().max(other.diam());
        other.x0 >= self.x0 - tol
            && other.x1 <= self.x1 + tol
            && other.y0 >= self.y0 - tol
            && other.y1 <= self.y1 + tol
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            x0: self.x0.max(other.x0),
            x1: self.x1.min(other.x1),
            y0: self.y0.max(other.y0),
            y1: self.y1.min(other.y1),
        };
        (r.x1 > r.x0 && r.y1 > r.y0).then_some(r)
    }

    /// Euclidean distance from `p` to the boundary curve of the rectangle.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        if self.contains(p) {
            (p[0] - self.x0)
                .min(self.x1 - p[0])
                .min(p[1] - self.y0)
                .min(self.y1 - p[1])
        } else {
            let dx = (self.x0 - p[0]).max(0.0).max(p[0] - self.x1);
            let dy = (self.y0 - p[1]).max(0.0).max(p[1] - self.y1);
            dx.hypot(dy)
        }
    }

    /// Smallest distance between the boundary of `self` and the boundary of
    /// an enclosing rectangle.
    pub fn gap_to(&self, outer: &Rect) -> f64 {
        (self.x0 - outer.x0)
            .min(outer.x1 - self.x1)
            .min(self.y0 - outer.y0)
            .min(outer.y1 - self.y1)
    }
}

/// Converts `len / h` to an integer, failing when it is not one.
pub fn grid_count(len: f64, h: f64) -> Result<usize> {
    let q = len / h;
    let r = q.round();
    if r < 0.0 || (q - r).abs() > GRID_TOL * q.abs().max(1.0) {
        return Err(Error::Misaligned(format!(
            "length {len} is not a multiple of step {h}"
        )));
    }
    Ok(r as usize)
}

/// Index of the grid line at coordinate `x` on a grid starting at `origin`
/// with step `h`.
pub fn grid_index(x: f64, origin: f64, h: f64) -> Result<usize> {
    grid_count(x - origin, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_distance_inside_and_outside() {
        let r = Rect::unit();
        assert!((r.boundary_distance([0.5, 0.5]) - 0.5).abs() < 1e-15);
        assert!((r.boundary_distance([0.1, 0.6]) - 0.1).abs() < 1e-15);
        assert!((r.boundary_distance([2.0, 2.0]) - 2f64.sqrt()).abs() < 1e-15);
        assert!((r.boundary_distance([1.5, 0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_count_rejects_fractional() {
        assert_eq!(grid_count(1.0, 0.125).unwrap(), 8);
        assert_eq!(grid_count(0.3, 0.1).unwrap(), 3);
        assert!(grid_count(1.0, 0.3).is_err());
    }

    #[test]
    fn intersect_and_gap() {
        let a = Rect::new(0.0, 2.0, 0.0, 2.0).unwrap();
        let b = Rect::new(1.0, 3.0, -1.0, 1.5).unwrap();
        let c = a.intersect(&b).unwrap();
        assert_eq!(c, Rect { x0: 1.0, x1: 2.0, y0: 0.0, y1: 1.5 });
        let inner = Rect::new(0.5, 1.5, 0.25, 1.0).unwrap();
        assert!((inner.gap_to(&a) - 0.25).abs() < 1e-15);
        assert!(a.contains_rect(&inner));
        assert!(!inner.contains_rect(&a));
    }
}
