use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: u32,
    pub height: u32,
}

impl Dims {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x < self.width && p.y < self.height
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid box [{0}, {1}, {2}, {3}]: need x_min < x_max and y_min < y_max")]
pub struct InvalidBox(pub i64, pub i64, pub i64, pub i64);

/// Axis-aligned pixel box, half-open: covers `x_min..x_max` by `y_min..y_max`.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, InvalidBox> {
        if x_min < x_max && y_min < y_max {
            Ok(Self { x_min, y_min, x_max, y_max })
        } else {
            Err(InvalidBox(x_min as i64, y_min as i64, x_max as i64, y_max as i64))
        }
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    /// Integer floor of the midpoints.
    pub fn center(&self) -> Point {
        Point::new((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x < self.x_max && p.y >= self.y_min && p.y < self.y_max
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        other.x_min >= self.x_min
            && other.y_min >= self.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    pub fn within(&self, dims: Dims) -> bool {
        self.x_max <= dims.width && self.y_max <= dims.height
    }

    /// Intersect arbitrary (possibly negative or oversized) coordinates with
    /// the screen; `None` when nothing of positive area remains.
    pub fn clamped(coords: [i64; 4], dims: Dims) -> Option<BoundingBox> {
        let [x0, y0, x1, y1] = coords;
        let cx = |v: i64| v.clamp(0, dims.width as i64) as u32;
        let cy = |v: i64| v.clamp(0, dims.height as i64) as u32;
        BoundingBox::new(cx(x0), cy(y0), cx(x1), cy(y1)).ok()
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix0 = self.x_min.max(other.x_min);
        let iy0 = self.y_min.max(other.y_min);
        let ix1 = self.x_max.min(other.x_max);
        let iy1 = self.y_max.min(other.y_max);
        if ix0 >= ix1 || iy0 >= iy1 {
            return 0.0;
        }
        let inter = (ix1 - ix0) as f64 * (iy1 - iy0) as f64;
        let area = |b: &BoundingBox| b.width() as f64 * b.height() as f64;
        inter / (area(self) + area(other) - inter)
    }
}

impl TryFrom<[i64; 4]> for BoundingBox {
    type Error = InvalidBox;

    fn try_from(v: [i64; 4]) -> Result<Self, Self::Error> {
        let err = || InvalidBox(v[0], v[1], v[2], v[3]);
        let conv = |x: i64| u32::try_from(x).map_err(|_| err());
        BoundingBox::new(conv(v[0])?, conv(v[1])?, conv(v[2])?, conv(v[3])?).map_err(|_| err())
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_floors() {
        let b = BoundingBox::new(100, 200, 300, 260).unwrap();
        assert_eq!(b.center(), Point::new(200, 230));
        let odd = BoundingBox::new(0, 0, 3, 1).unwrap();
        assert_eq!(odd.center(), Point::new(1, 0));
        assert!(odd.contains(odd.center()));
    }

    #[test]
    fn rejects_degenerate() {
        assert!(BoundingBox::new(5, 0, 5, 1).is_err());
        assert!(serde_json::from_str::<BoundingBox>("[0, 0, -1, 4]").is_err());
        let b: BoundingBox = serde_json::from_str("[1, 2, 3, 4]").unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1,2,3,4]");
    }

    #[test]
    fn clamping() {
        let d = Dims::new(100, 50);
        assert_eq!(BoundingBox::clamped([-10, -5, 20, 80], d), BoundingBox::new(0, 0, 20, 50).ok());
        assert_eq!(BoundingBox::clamped([120, 0, 130, 10], d), None);
    }

    #[test]
    fn iou_basics() {
        let a = BoundingBox::new(0, 0, 10, 10).unwrap();
        let b = BoundingBox::new(5, 0, 15, 10).unwrap();
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
    }
}
