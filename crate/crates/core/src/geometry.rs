//! Small fixed-size geometry used throughout: points, symmetric 2x2 tensors,
//! and P1 triangle helpers.

use std::ops::{Add, Mul, Sub};

pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

#[inline]
pub fn centroid(p: &[Point; 3]) -> Point {
    [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
}

/// Twice the signed area, positive for counter-clockwise ordering.
#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn signed_area(p: &[Point; 3]) -> f64 {
    0.5 * cross(sub(p[1], p[0]), sub(p[2], p[0]))
}

/// Gradients of the three barycentric (P1 hat) functions on a triangle.
pub fn p1_gradients(p: &[Point; 3]) -> [Point; 3] {
    let two_area = 2.0 * signed_area(p);
    let mut g = [[0.0; 2]; 3];
    for k in 0..3 {
        let a = p[(k + 1) % 3];
        let b = p[(k + 2) % 3];
        // rotate the opposite edge by -90 degrees
        g[k] = [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area];
    }
    g
}

/// Barycentric coordinates of `x` with respect to triangle `p`.
pub fn barycentric(p: &[Point; 3], x: Point) -> [f64; 3] {
    let area = signed_area(p);
    let l0 = 0.5 * cross(sub(p[1], x), sub(p[2], x)) / area;
    let l1 = 0.5 * cross(sub(p[2], x), sub(p[0], x)) / area;
    [l0, l1, 1.0 - l0 - l1]
}

/// Area of a simple polygon (shoelace), positive for counter-clockwise.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut a = 0.0;
    for i in 0..n {
        a += cross(poly[i], poly[(i + 1) % n]);
    }
    0.5 * a
}

pub fn polygon_diameter(poly: &[Point]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, &a) in poly.iter().enumerate() {
        for &b in &poly[i + 1..] {
            d = d.max(dist(a, b));
        }
    }
    d
}

/// Convexity test for a counter-clockwise polygon; collinear corners allowed.
pub fn polygon_is_convex(poly: &[Point], tol: f64) -> bool {
    let n = poly.len();
    (0..n).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        cross(sub(b, a), sub(c, b)) >= -tol
    })
}

/// Clip a polygon to the axis-aligned box `[lo, hi]^2` (Sutherland–Hodgman).
pub fn clip_to_box(poly: &[Point], lo: f64, hi: f64) -> Vec<Point> {
    let mut out: Vec<Point> = poly.to_vec();
    // (axis, bound, keep_greater)
    for &(axis, bound, keep_ge) in &[(0, lo, true), (0, hi, false), (1, lo, true), (1, hi, false)] {
        if out.is_empty() {
            break;
        }
        let inside = |p: &Point| if keep_ge { p[axis] >= bound } else { p[axis] <= bound };
        let input = std::mem::take(&mut out);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                out.push(add(prev, scale(sub(cur, prev), t)));
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

/// Symmetric 2x2 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tensor2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Tensor2 {
    pub const ZERO: Tensor2 = Tensor2 { xx: 0.0, xy: 0.0, yy: 0.0 };

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Tensor2 { xx, xy, yy }
    }

    pub const fn diag(a: f64, b: f64) -> Self {
        Tensor2 { xx: a, xy: 0.0, yy: b }
    }

    pub const fn iso(a: f64) -> Self {
        Tensor2 { xx: a, xy: 0.0, yy: a }
    }

    /// `a n n^T + b (I - n n^T)` for a unit normal `n`.
    pub fn laminate(normal: Point, across: f64, along: f64) -> Self {
        let n = scale(normal, 1.0 / norm(normal));
        Tensor2 {
            xx: across * n[0] * n[0] + along * (1.0 - n[0] * n[0]),
            xy: (across - along) * n[0] * n[1],
            yy: across * n[1] * n[1] + along * (1.0 - n[1] * n[1]),
        }
    }

    #[inline]
    pub fn apply(&self, v: Point) -> Point {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    #[inline]
    pub fn quad(&self, a: Point, b: Point) -> f64 {
        dot(a, self.apply(b))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * (self.xx + self.yy);
        let r = (0.5 * (self.xx - self.yy)).hypot(self.xy);
        [m - r, m + r]
    }

    pub fn frobenius(&self) -> f64 {
        (self.xx * self.xx + 2.0 * self.xy * self.xy + self.yy * self.yy).sqrt()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (0, 0) => self.xx,
            (1, 1) => self.yy,
            _ => self.xy,
        }
    }
}

impl Add for Tensor2 {
    type Output = Tensor2;
    fn add(self, o: Tensor2) -> Tensor2 {
        Tensor2::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }
}

impl Sub for Tensor2 {
    type Output = Tensor2;
    fn sub(self, o: Tensor2) -> Tensor2 {
        Tensor2::new(self.xx - o.xx, self.xy - o.xy, self.yy - o.yy)
    }
}

impl Mul<f64> for Tensor2 {
    type Output = Tensor2;
    fn mul(self, s: f64) -> Tensor2 {
        Tensor2::new(self.xx * s, self.xy * s, self.yy * s)
    }
}
