//! Spiral enumeration of the Gaussian integers and the square frames used to
//! localise the construction.
//!
//! The spiral starts at `a_1 = 0`, steps right to `a_2 = 1`, up to `a_3 = 1+i`
//! and then keeps turning anticlockwise with side lengths 1, 1, 2, 2, 3, 3, ...
//! Ring `k` (sup-norm `k`) occupies indices `(2k-1)² + 1 ..= (2k+1)²` and
//! starts at `k - (k-1)i`.

use serde::{Deserialize, Serialize};

use crate::{ComplexPoint, Error, Result};

/// Returns the n-th spiral point `a_n` (1-based).
pub fn spiral_point(n: usize) -> Result<ComplexPoint> {
    let (x, y) = spiral_coords(n)?;
    Ok(ComplexPoint::new(x as f64, y as f64))
}

/// Integer coordinates of `a_n`.
pub fn spiral_coords(n: usize) -> Result<(i64, i64)> {
    if n == 0 {
        return Err(Error::invalid("spiral index must be >= 1"));
    }
    if n == 1 {
        return Ok((0, 0));
    }
    let n = n as i64;
    // smallest k with (2k+1)^2 >= n
    let mut k = ((((n as f64).sqrt() - 1.0) / 2.0).ceil() as i64).max(1);
    while (2 * k + 1) * (2 * k + 1) < n {
        k += 1;
    }
    while k > 1 && (2 * k - 1) * (2 * k - 1) >= n {
        k -= 1;
    }
    let side = 2 * k;
    let o = n - (2 * k - 1) * (2 * k - 1) - 1;
    let (seg, t) = (o / side, o % side);
    Ok(match seg {
        0 => (k, -(k - 1) + t),
        1 => (k - 1 - t, k),
        2 => (-k, k - 1 - t),
        _ => (-k + 1 + t, -k),
    })
}

/// Inverse of [`spiral_point`]. The point must have integer coordinates.
pub fn spiral_index(p: ComplexPoint) -> Result<usize> {
    if !p.re.is_finite() || !p.im.is_finite() || p.re.fract() != 0.0 || p.im.fract() != 0.0 {
        return Err(Error::invalid(format!("{p} is not a Gaussian integer")));
    }
    Ok(spiral_index_of(p.re as i64, p.im as i64))
}

pub fn spiral_index_of(x: i64, y: i64) -> usize {
    let k = x.abs().max(y.abs());
    if k == 0 {
        return 1;
    }
    let base = (2 * k - 1) * (2 * k - 1) + 1;
    let side = 2 * k;
    let o = if x == k && y > -k {
        y + k - 1
    } else if y == k {
        side + (k - 1 - x)
    } else if x == -k {
        2 * side + (k - 1 - y)
    } else {
        3 * side + (x + k - 1)
    };
    (base + o) as usize
}

/// Sup-norm ring of the lattice point `a_n`.
pub fn ring_of(n: usize) -> Result<i64> {
    let (x, y) = spiral_coords(n)?;
    Ok(x.abs().max(y.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionKind {
    /// Closed frame `n+1/4 <= max(|x|,|y|) <= n+3/4`.
    S,
    /// Boundary of the square of half-side `n+1/2`.
    T,
    /// Closed square of half-side `n+2` minus the open square of half-side `n-1`.
    STilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionId {
    pub kind: RegionKind,
    pub index: usize,
}

impl RegionId {
    pub fn new(kind: RegionKind, index: usize) -> Result<Self> {
        if index == 0 {
            return Err(Error::invalid("region index must be >= 1"));
        }
        Ok(Self { kind, index })
    }

    pub fn s(index: usize) -> Self {
        Self { kind: RegionKind::S, index }
    }

    pub fn t(index: usize) -> Self {
        Self { kind: RegionKind::T, index }
    }

    pub fn s_tilde(index: usize) -> Self {
        Self { kind: RegionKind::STilde, index }
    }

    /// Half-sides `(inner, outer)` of the frame; the inner square is open and
    /// removed, the outer one is closed. For `T_n` both equal `n + 1/2`.
    pub fn half_sides(&self) -> (f64, f64) {
        let n = self.index as f64;
        match self.kind {
            RegionKind::S => (n + 0.25, n + 0.75),
            RegionKind::T => (n + 0.5, n + 0.5),
            RegionKind::STilde => (n - 1.0, n + 2.0),
        }
    }
}

/// Exact membership test; no tolerance.
pub fn region_contains(r: RegionId, z: ComplexPoint) -> bool {
    let (x, y) = (z.re, z.im);
    let n = r.index as f64;
    match r.kind {
        RegionKind::S => {
            let outer = -(n + 0.75) <= x && x <= n + 0.75 && -(n + 0.75) <= y && y <= n + 0.75;
            let inner = -(n + 0.25) < x && x < n + 0.25 && -(n + 0.25) < y && y < n + 0.25;
            outer && !inner
        }
        RegionKind::T => {
            let h = n + 0.5;
            let vertical = (x == h || x == -h) && y.abs() <= h;
            let horizontal = x.abs() <= h && (y == h || y == -h);
            vertical || horizontal
        }
        RegionKind::STilde => {
            let outer = -n - 2.0 <= x && x <= n + 2.0 && -n - 2.0 <= y && y <= n + 2.0;
            let inner = -n + 1.0 < x && x < n - 1.0 && -n + 1.0 < y && y < n - 1.0;
            outer && !inner
        }
    }
}

/// Euclidean distance from `z` to the closed frame `S_n`.
pub fn dist_to_s_frame(n: usize, z: ComplexPoint) -> f64 {
    let (inner, outer) = RegionId::s(n).half_sides();
    let s = z.re.abs().max(z.im.abs());
    if s < inner {
        inner - s
    } else if s <= outer {
        0.0
    } else {
        let dx = (z.re.abs() - outer).max(0.0);
        let dy = (z.im.abs() - outer).max(0.0);
        dx.hypot(dy)
    }
}

/// Euclidean distance from `z` to `T_n`.
pub fn dist_to_t_frame(n: usize, z: ComplexPoint) -> f64 {
    let h = n as f64 + 0.5;
    let (x, y) = (z.re.abs(), z.im.abs());
    if x <= h && y <= h {
        h - x.max(y)
    } else {
        (x - h).max(0.0).hypot((y - h).max(0.0))
    }
}

/// Points on the perimeter of the square of half-side `s` centred at 0 with
/// spacing at most `h`. Each side includes its midpoint and corners appear once.
pub fn square_perimeter(s: f64, h: f64) -> Vec<ComplexPoint> {
    if s == 0.0 {
        return vec![ComplexPoint::new(0.0, 0.0)];
    }
    // 2 * half per side, even so the midpoint is hit
    let half = ((s / h).ceil() as usize).max(1);
    let per_side = 2 * half;
    let step = 2.0 * s / per_side as f64;
    let mut pts = Vec::with_capacity(4 * per_side);
    for i in 0..per_side {
        let t = -s + step * i as f64;
        pts.push(ComplexPoint::new(s, t)); // right side, going up
        pts.push(ComplexPoint::new(-t, s)); // top, going left
        pts.push(ComplexPoint::new(-s, -t)); // left, going down
        pts.push(ComplexPoint::new(t, -s)); // bottom, going right
    }
    pts
}

/// Lattice points a_p, 2 <= p <= m, lying in `S̃_n`.
pub fn indices_in_s_tilde(n: usize, m: usize) -> Vec<usize> {
    (2..=m)
        .filter(|&p| {
            let a = spiral_point(p).expect("p >= 2");
            region_contains(RegionId::s_tilde(n), a)
        })
        .collect()
}

/// Maps `u ∈ [0,1)` to a point of `T_n` by arc length.
pub fn t_frame_point(n: usize, u: f64) -> ComplexPoint {
    let h = n as f64 + 0.5;
    let side = 2.0 * h;
    let l = u.rem_euclid(1.0) * 4.0 * side;
    let (seg, t) = ((l / side).floor() as usize, l % side);
    match seg.min(3) {
        0 => ComplexPoint::new(h, -h + t),
        1 => ComplexPoint::new(h - t, h),
        2 => ComplexPoint::new(-h, h - t),
        _ => ComplexPoint::new(-h + t, -h),
    }
}

/// Maps a uniform pair `(u, v) ∈ [0,1)²` to a uniform point of the closed
/// frame with half-sides `(inner, outer)` (rejection-free, area preserving).
pub fn frame_point(inner: f64, outer: f64, u: f64, v: f64) -> ComplexPoint {
    // Split the frame into four congruent trapezoid-free strips:
    // right strip [inner,outer] x [-inner, outer), rotated by quarter turns.
    let width = outer - inner;
    let length = outer + inner;
    let q = (u * 4.0).floor().min(3.0);
    let uu = u * 4.0 - q;
    let x = inner + width * v;
    let y = -inner + length * uu;
    let p = ComplexPoint::new(x, y);
    let rot = ComplexPoint::i().powu(q as u32);
    p * rot
}
