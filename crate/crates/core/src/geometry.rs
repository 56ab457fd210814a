//! Hyperrectangles, the infinity norm and the integer lattices `(2μZⁿ) ∩ A`
//! used to quantize states, controls and disturbance samples.
//!
//! Lattice points are addressed by integer keys `k`; the real coordinates are
//! always recomputed as `2μ·k` so no error accumulates along an axis. Points
//! are stored implicitly: a lattice is a product of per-axis integer ranges,
//! and a point's index is its mixed-radix position with the first axis most
//! significant, so index order coincides with lexicographic key order.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack (in units of the lattice spacing) accepted when deciding whether a
/// point sits exactly on a box face. Points like `250·(π/1000)` against `π/4`
/// must count as on the boundary despite rounding.
const BOUNDARY_SLACK: f64 = 1e-9;

/// Infinity norm.
pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Infinity-norm distance between two points of equal dimension.
pub fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Axis-aligned closed hyperrectangle `[a_1,b_1] × … × [a_n,b_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Rect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("box must have dimension > 0"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "box bounds have {} lower and {} upper components",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!("box side {i} is not finite")));
            }
            if lo >= hi {
                return Err(Error::invalid(format!(
                    "box side {i} is degenerate: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Rect { lower, upper })
    }

    /// Builds a box from `[lo, hi]` pairs, the form used in configuration files.
    pub fn from_intervals(intervals: &[[f64; 2]]) -> Result<Self> {
        let (lower, upper) = intervals.iter().map(|iv| (iv[0], iv[1])).unzip();
        Rect::new(lower, upper)
    }

    pub fn intervals(&self) -> Vec<[f64; 2]> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&a, &b)| [a, b])
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Closed membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Infinity-norm distance from `x` to the box (0 inside).
    pub fn excess(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .fold(0.0, |acc, (v, (lo, hi))| {
                acc.max(lo - v).max(v - hi)
            })
    }

    /// True when the origin lies strictly inside.
    pub fn has_origin_interior(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(a, b)| *a < 0.0 && *b > 0.0)
    }

    /// `sup { ‖x‖∞ : x ∈ box }`.
    pub fn sup_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .fold(0.0, |acc, (a, b)| acc.max(a.abs()).max(b.abs()))
    }

    /// All `2ⁿ` vertices, first axis most significant, lower bound first.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| {
                        if mask >> (n - 1 - i) & 1 == 1 {
                            self.upper[i]
                        } else {
                            self.lower[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// The box of all differences `x − y` with `x, y` in this box.
    pub fn difference_box(&self) -> Rect {
        let span: Vec<f64> = (0..self.dim()).map(|i| self.side(i)).collect();
        Rect {
            lower: span.iter().map(|s| -s).collect(),
            upper: span,
        }
    }
}

/// `μ̂_A`: the minimum side length of the box.
pub fn mu_hat(rect: &Rect) -> f64 {
    (0..rect.dim())
        .map(|i| rect.side(i))
        .fold(f64::INFINITY, f64::min)
}

/// The finite lattice `(2μZⁿ) ∩ box` with integer-key addressing.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    rect: Rect,
    mu: f64,
    kmin: Vec<i64>,
    kmax: Vec<i64>,
    strides: Vec<usize>,
    len: usize,
}

impl Lattice {
    /// Enumerates `(2μZⁿ) ∩ box` with closed membership at the faces.
    pub fn new(rect: Rect, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::invalid(format!("lattice half-spacing must be positive, got {mu}")));
        }
        let spacing = 2.0 * mu;
        let n = rect.dim();
        let mut kmin = Vec::with_capacity(n);
        let mut kmax = Vec::with_capacity(n);
        for i in 0..n {
            let lo = (rect.lower[i] / spacing - BOUNDARY_SLACK).ceil();
            let hi = (rect.upper[i] / spacing + BOUNDARY_SLACK).floor();
            if lo.abs() > 1e15 || hi.abs() > 1e15 {
                return Err(Error::CapExceeded {
                    what: "lattice axis".into(),
                    estimate: hi - lo + 1.0,
                    cap: 1e15,
                });
            }
            kmin.push(lo as i64);
            kmax.push(hi as i64);
        }
        let mut strides = vec![0usize; n];
        let mut len: usize = 1;
        let mut empty = false;
        for i in (0..n).rev() {
            strides[i] = len;
            if kmax[i] < kmin[i] {
                empty = true;
                continue;
            }
            let count = (kmax[i] - kmin[i] + 1) as usize;
            len = len.checked_mul(count).ok_or_else(|| Error::CapExceeded {
                what: "lattice points".into(),
                estimate: f64::INFINITY,
                cap: usize::MAX as f64,
            })?;
        }
        if empty {
            len = 0;
        }
        Ok(Lattice {
            rect,
            mu,
            kmin,
            kmax,
            strides,
            len,
        })
    }

    pub fn rect(&self) -> &Rect {
        &self.rect
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.mu
    }

    pub fn dim(&self) -> usize {
        self.rect.dim()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Inclusive integer range of keys along `axis`.
    pub fn axis_range(&self, axis: usize) -> (i64, i64) {
        (self.kmin[axis], self.kmax[axis])
    }

    pub fn axis_count(&self, axis: usize) -> usize {
        (self.kmax[axis] - self.kmin[axis] + 1).max(0) as usize
    }

    pub fn coord(&self, k: i64) -> f64 {
        2.0 * self.mu * k as f64
    }

    pub fn key_into(&self, index: usize, key: &mut [i64]) {
        let mut rest = index;
        for i in 0..self.dim() {
            let d = rest / self.strides[i];
            rest %= self.strides[i];
            key[i] = self.kmin[i] + d as i64;
        }
    }

    pub fn key(&self, index: usize) -> Vec<i64> {
        let mut key = vec![0; self.dim()];
        self.key_into(index, &mut key);
        key
    }

    pub fn index_of(&self, key: &[i64]) -> Option<usize> {
        if key.len() != self.dim() {
            return None;
        }
        let mut index = 0;
        for (i, &k) in key.iter().enumerate() {
            if k < self.kmin[i] || k > self.kmax[i] {
                return None;
            }
            index += (k - self.kmin[i]) as usize * self.strides[i];
        }
        Some(index)
    }

    pub fn point_into(&self, index: usize, out: &mut [f64]) {
        let mut rest = index;
        for i in 0..self.dim() {
            let d = rest / self.strides[i];
            rest %= self.strides[i];
            out[i] = self.coord(self.kmin[i] + d as i64);
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(index, &mut out);
        out
    }

    pub fn key_point(&self, key: &[i64]) -> Vec<f64> {
        key.iter().map(|&k| self.coord(k)).collect()
    }

    /// Keys in canonical (lexicographic) order.
    pub fn keys(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len).map(move |i| self.key(i))
    }

    /// Nearest in-range key along one axis; exact midpoints go to the smaller key.
    fn nearest_axis_key(&self, axis: usize, value: f64) -> i64 {
        let s = value / self.spacing();
        let mut k = s.round() as i64;
        // `round` sends halves away from zero; ties must go to the smaller key
        if (s - s.floor() - 0.5).abs() == 0.0 {
            k = s.floor() as i64;
        }
        k.clamp(self.kmin[axis], self.kmax[axis])
    }

    /// Nearest lattice point in the infinity norm. Among equidistant points the
    /// lexicographically smallest key wins.
    pub fn nearest(&self, a: &[f64]) -> Result<usize> {
        if a.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {}, lattice {}",
                a.len(),
                self.dim()
            )));
        }
        if !self.rect.contains(a) {
            return Err(Error::invalid(format!("point {a:?} lies outside the lattice box")));
        }
        if self.is_empty() {
            return Err(Error::invalid("lattice is empty"));
        }
        Ok(self.nearest_clamped(a))
    }

    /// As [`Lattice::nearest`] but without the membership check: points outside
    /// the box are clamped onto the nearest in-range keys.
    pub fn nearest_clamped(&self, a: &[f64]) -> usize {
        let mut index = 0;
        for (i, v) in a.iter().enumerate() {
            let k = self.nearest_axis_key(i, *v);
            index += (k - self.kmin[i]) as usize * self.strides[i];
        }
        index
    }

    /// All lattice points `y` with `‖a − y‖∞ ≤ radius`, in canonical order.
    pub fn within(&self, a: &[f64], radius: f64) -> Vec<usize> {
        let n = self.dim();
        let spacing = self.spacing();
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        for i in 0..n {
            let l = ((a[i] - radius) / spacing).ceil() as i64;
            let h = ((a[i] + radius) / spacing).floor() as i64;
            let l = l.max(self.kmin[i]);
            let h = h.min(self.kmax[i]);
            if l > h {
                return Vec::new();
            }
            lo.push(l);
            hi.push(h);
        }
        let mut out = Vec::new();
        let mut key = lo.clone();
        loop {
            if self
                .key_point(&key)
                .iter()
                .zip(a)
                .all(|(y, x)| (x - y).abs() <= radius)
            {
                out.push(self.index_of(&key).expect("key in range"));
            }
            // odometer increment, last axis fastest
            let mut axis = n;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if key[axis] < hi[axis] {
                    key[axis] += 1;
                    break;
                }
                key[axis] = lo[axis];
            }
        }
    }

    /// Largest distance from a box point to its nearest lattice point. Equals
    /// `μ` unless a face sits more than `μ` away from the outermost points.
    pub fn covering_radius(&self) -> f64 {
        let mut r: f64 = self.mu;
        for i in 0..self.dim() {
            if self.axis_count(i) == 0 {
                return f64::INFINITY;
            }
            let first = self.coord(self.kmin[i]);
            let last = self.coord(self.kmax[i]);
            r = r.max(first - self.rect.lower[i]).max(self.rect.upper[i] - last);
        }
        r
    }

    /// CSV export: a `#` header with μ and the box, then one key per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = format!("# mu={}", self.mu);
        for (lo, hi) in self.rect.lower.iter().zip(&self.rect.upper) {
            let _ = write!(header, " [{lo},{hi}]");
        }
        writeln!(w, "{header}")?;
        let mut key = vec![0; self.dim()];
        for i in 0..self.len {
            self.key_into(i, &mut key);
            let line: Vec<String> = key.iter().map(|k| k.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Reads the header of a CSV export back into a lattice and returns the
    /// keys listed in the body.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Lattice, Vec<Vec<i64>>)> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty lattice file".into()))??;
        let body = header
            .strip_prefix("# mu=")
            .ok_or_else(|| Error::Format("missing lattice header".into()))?;
        let mut parts = body.split_whitespace();
        let mu: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("bad mu in header".into()))?;
        let mut intervals = Vec::new();
        for p in parts {
            let inner = p
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| Error::Format(format!("bad interval {p}")))?;
            let (a, b) = inner
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad interval {p}")))?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad bound {s}")))
            };
            intervals.push([parse(a)?, parse(b)?]);
        }
        let lattice = Lattice::new(Rect::from_intervals(&intervals)?, mu)?;
        let mut keys = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let key = line
                .split(',')
                .map(|s| s.trim().parse::<i64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("bad key {line:?}: {e}")))?;
            keys.push(key);
        }
        Ok((lattice, keys))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pendulum_x() -> Rect {
        Rect::new(vec![-PI / 4.0, -0.5], vec![PI / 4.0, 0.5]).unwrap()
    }

    #[test]
    fn mu_hat_examples() {
        assert_eq!(mu_hat(&pendulum_x()), 1.0);
        assert_eq!(mu_hat(&Rect::new(vec![0.0], vec![1.0]).unwrap()), 1.0);
        assert_eq!(mu_hat(&Rect::new(vec![-1.5], vec![1.5]).unwrap()), 3.0);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(Rect::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(Rect::new(vec![], vec![]).is_err());
        assert!(Rect::new(vec![0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn pendulum_state_lattice_count() {
        let l = Lattice::new(pendulum_x(), PI / 2000.0).unwrap();
        assert_eq!(l.axis_range(0), (-250, 250));
        assert_eq!(l.axis_range(1), (-159, 159));
        assert_eq!(l.len(), 159_819);
    }

    #[test]
    fn pendulum_control_lattice_count() {
        let l = Lattice::new(Rect::new(vec![-1.5], vec![1.5]).unwrap(), 0.001).unwrap();
        assert_eq!(l.len(), 1_501);
    }

    #[test]
    fn only_origin_fits() {
        let l = Lattice::new(Rect::new(vec![-1.0], vec![1.0]).unwrap(), 1.0).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.key(0), vec![0]);
    }

    #[test]
    fn nearest_rounding_and_ties() {
        let l = Lattice::new(Rect::new(vec![-1.5], vec![1.5]).unwrap(), 0.001).unwrap();
        assert_eq!(l.key(l.nearest(&[0.0009]).unwrap()), vec![0]);
        assert_eq!(l.key(l.nearest(&[0.001]).unwrap()), vec![0]);
        assert_eq!(l.key(l.nearest(&[-0.001]).unwrap()), vec![-1]);
        assert!(l.nearest(&[1.6]).is_err());
    }

    #[test]
    fn nearest_clamps_at_corner() {
        // spacing 0.4 on [-1, 0.9]: rounding 0.9/0.4 = 2.25 gives k=2 (0.8),
        // rounding -1/0.4 = -2.5 gives -3 (-1.2, outside); tie goes down, so clamp.
        let rect = Rect::new(vec![-1.0, -1.0], vec![0.9, 0.9]).unwrap();
        let l = Lattice::new(rect.clone(), 0.2).unwrap();
        let a = [-1.0, 0.9];
        let got = l.point(l.nearest(&a).unwrap());
        // brute force
        let best = (0..l.len())
            .map(|i| inf_dist(&l.point(i), &a))
            .fold(f64::INFINITY, f64::min);
        assert!(rect.contains(&got));
        assert!((inf_dist(&got, &a) - best).abs() < 1e-12);
        assert!(inf_dist(&got, &a) <= 0.2 + 1e-12);
    }

    #[test]
    fn within_returns_ties() {
        let l = Lattice::new(Rect::new(vec![-1.0], vec![1.0]).unwrap(), 0.25).unwrap();
        // points at multiples of 0.5; 0.25 is exactly midway between 0 and 0.5
        let got: Vec<Vec<i64>> = l.within(&[0.25], 0.25).into_iter().map(|i| l.key(i)).collect();
        assert_eq!(got, vec![vec![0], vec![1]]);
    }

    #[test]
    fn covering_radius_reports_face_gaps() {
        // [-1,1] with mu=0.6: only the origin, so the faces are 1.0 away
        let l = Lattice::new(Rect::new(vec![-1.0], vec![1.0]).unwrap(), 0.6).unwrap();
        assert_eq!(l.covering_radius(), 1.0);
        let l = Lattice::new(pendulum_x(), PI / 2000.0).unwrap();
        assert!((l.covering_radius() - PI / 2000.0).abs() < 1e-15);
    }

    #[test]
    fn csv_roundtrip() {
        let l = Lattice::new(Rect::new(vec![-0.3, -0.2], vec![0.3, 0.25]).unwrap(), 0.05).unwrap();
        let mut buf = Vec::new();
        l.write_csv(&mut buf).unwrap();
        let (back, keys) = Lattice::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, l);
        assert_eq!(keys.len(), l.len());
        assert_eq!(keys[3], l.key(3));
    }
}
