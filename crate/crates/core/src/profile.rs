//! Convex profile `ρ`: a piecewise-affine majorant `ρ₁` of an increasing
//! sequence, symmetrised, mollified by a smooth bump and lifted by `t²`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::quadrature::GaussLegendre;
use crate::{Error, Result};

/// Nodes per sub-interval of the convolution rule.
pub const CONVOLUTION_NODES: usize = 129;
pub const MOLLIFIER_HALFWIDTH: f64 = 0.25;

fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(CONVOLUTION_NODES))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileFile", into = "ProfileFile")]
pub struct ConvexProfile {
    knots: Vec<(f64, f64)>,
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    mollifier_halfwidth: f64,
    quadratic: bool,
}

/// JSON form `{knots[], slopes[], intercepts[], mollifier_halfwidth, quadratic}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileFile {
    pub knots: Vec<(f64, f64)>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub mollifier_halfwidth: f64,
    pub quadratic: bool,
}

impl TryFrom<ProfileFile> for ConvexProfile {
    type Error = Error;

    fn try_from(f: ProfileFile) -> Result<Self> {
        ConvexProfile::from_parts(f.knots, f.slopes, f.intercepts, f.mollifier_halfwidth, f.quadratic)
    }
}

impl From<ConvexProfile> for ProfileFile {
    fn from(p: ConvexProfile) -> Self {
        ProfileFile {
            knots: p.knots,
            slopes: p.slopes,
            intercepts: p.intercepts,
            mollifier_halfwidth: p.mollifier_halfwidth,
            quadratic: p.quadratic,
        }
    }
}

impl ConvexProfile {
    /// Piece `i` is `slopes[i]·t + intercepts[i]` on `[i, i+1]`; the last piece
    /// extends to infinity. `knots[i] = (i, ρ₁(i))`.
    pub fn from_parts(
        knots: Vec<(f64, f64)>,
        slopes: Vec<f64>,
        intercepts: Vec<f64>,
        mollifier_halfwidth: f64,
        quadratic: bool,
    ) -> Result<Self> {
        let pieces = slopes.len();
        if pieces == 0 || intercepts.len() != pieces || knots.len() != pieces + 1 {
            return Err(Error::invalid(format!(
                "profile needs k pieces and k+1 knots, got {} slopes, {} intercepts, {} knots",
                slopes.len(),
                intercepts.len(),
                knots.len()
            )));
        }
        if !(mollifier_halfwidth > 0.0 && mollifier_halfwidth <= 0.5) {
            return Err(Error::invalid("mollifier half-width must lie in (0, 1/2]"));
        }
        if slopes[0] < 0.0 || slopes.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("slopes must be nonnegative and nondecreasing"));
        }
        for (i, (t, v)) in knots.iter().enumerate() {
            let tol = 1e-9 * (1.0 + v.abs());
            if *t != i as f64 || !v.is_finite() {
                return Err(Error::invalid(format!("knot {i} is not at t = {i}")));
            }
            let left = i.checked_sub(1).map(|p| slopes[p] * t + intercepts[p]);
            let right = (i < pieces).then(|| slopes[i] * t + intercepts[i]);
            for piece in [left, right].into_iter().flatten() {
                if (piece - v).abs() > tol {
                    return Err(Error::invalid(format!("knot {i} value {v} inconsistent with pieces ({piece})")));
                }
            }
        }
        if knots[0].1 < 0.0 {
            return Err(Error::invalid("profile must be nonnegative"));
        }
        Ok(Self { knots, slopes, intercepts, mollifier_halfwidth, quadratic })
    }

    /// `ρ ≡ value` (no quadratic term); a stand-in for unit tests.
    pub fn constant(value: f64) -> Result<Self> {
        Self::from_parts(vec![(0.0, value), (1.0, value)], vec![0.0], vec![value], MOLLIFIER_HALFWIDTH, false)
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn quadratic(&self) -> bool {
        self.quadratic
    }

    pub fn mollifier_halfwidth(&self) -> f64 {
        self.mollifier_halfwidth
    }

    pub fn with_quadratic(mut self, quadratic: bool) -> Self {
        self.quadratic = quadratic;
        self
    }

    /// The piecewise-affine `ρ₁(|t|)`.
    pub fn rho1(&self, t: f64) -> f64 {
        let t = t.abs();
        let i = if t <= 1.0 { 0 } else { (t.ceil() as usize - 1).min(self.slopes.len() - 1) };
        self.slopes[i] * t + self.intercepts[i]
    }

    /// Whether `s ↦ ρ₁(|s|)` changes slope strictly inside `(t − h, t + h)`.
    fn has_kink_within(&self, t: f64, h: f64) -> bool {
        let lo = (t - h).floor() as i64;
        let hi = (t + h).ceil() as i64;
        (lo..=hi).any(|k| {
            let kf = k as f64;
            if kf <= t - h || kf >= t + h {
                return false;
            }
            let a = k.unsigned_abs() as usize;
            if a == 0 {
                self.slopes[0] != 0.0
            } else if a < self.slopes.len() {
                self.slopes[a - 1] != self.slopes[a]
            } else {
                false
            }
        })
    }

    /// `(ρ̃₁ ∗ χ)(t)`, split at the kinks of `s ↦ ρ₁(|t − s|)`.
    pub fn mollified(&self, t: f64) -> f64 {
        let h = self.mollifier_halfwidth;
        if !self.has_kink_within(t, h) {
            // even kernel, affine integrand
            return self.rho1(t);
        }
        let mut cuts = vec![-h];
        let lo = (t - h).floor() as i64;
        let hi = (t + h).ceil() as i64;
        for k in lo..=hi {
            let s = t - k as f64;
            if s > -h && s < h {
                cuts.push(s);
            }
        }
        cuts.push(h);
        cuts.sort_by(f64::total_cmp);
        let rule = rule();
        let (mut num, mut den) = (0.0, 0.0);
        for w in cuts.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            num += rule.integrate(w[0], w[1], |s| self.rho1(t - s) * bump(s, h));
            den += rule.integrate(w[0], w[1], |s| bump(s, h));
        }
        num / den
    }

    /// `ρ(t) = (ρ̃₁ ∗ χ)(t) + t²`.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.abs();
        let q = if self.quadratic { t * t } else { 0.0 };
        self.mollified(t) + q
    }
}

/// Unnormalised bump `exp(−1/(1 − (s/h)²))` on `(−h, h)`.
fn bump(s: f64, h: f64) -> f64 {
    let u = s / h;
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// Inductive construction of `ρ₁` from `c(0), c(1), …, c(N)`.
///
/// `ρ₁ = c(1)` on `[0, 1]`. On `(n, n+1]` the current affine piece is kept
/// if it already reaches `c(n+1)` at `n+1`; otherwise the new piece joins
/// `(n, ρ₁(n))` to `(n+1, c(n+1))`.
pub fn build_rho1(c: &[f64], horizon: usize) -> Result<ConvexProfile> {
    if horizon == 0 || c.len() < horizon + 1 {
        return Err(Error::invalid(format!("need c(0..={horizon}), got {} values", c.len())));
    }
    if c.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid("c must be positive"));
    }
    if let Some(n) = (0..horizon).find(|&n| c[n + 1] <= c[n]) {
        return Err(Error::NonMonotone { n, prev: c[n], next: c[n + 1] });
    }
    let mut slopes = vec![0.0];
    let mut intercepts = vec![c[1]];
    let mut knots = vec![(0.0, c[1]), (1.0, c[1])];
    for n in 1..horizon {
        let (a, b) = (*slopes.last().unwrap(), *intercepts.last().unwrap());
        let t = (n + 1) as f64;
        if a * t + b >= c[n + 1] {
            slopes.push(a);
            intercepts.push(b);
        } else {
            let at_n = knots[n].1;
            let slope = c[n + 1] - at_n;
            slopes.push(slope);
            intercepts.push(at_n - slope * n as f64);
        }
        let v = slopes[n] * t + intercepts[n];
        knots.push((t, v));
    }
    ConvexProfile::from_parts(knots, slopes, intercepts, MOLLIFIER_HALFWIDTH, true)
}

/// `ρ(t)`; the profile is even, so negative `t` is folded.
pub fn rho_eval(profile: &ConvexProfile, t: f64) -> f64 {
    profile.eval(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileViolation {
    pub check: String,
    pub n: usize,
    pub t: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileCheckReport {
    pub horizon: usize,
    pub step: f64,
    /// `min (ρ(t) − c(n))` over `t ∈ (n, n+1]`, `n < N`.
    pub dominance_margin: f64,
    /// `min (ρ(t) − c(n))` over `t ∈ [n−1, n+2]`, `1 ≤ n ≤ N`.
    pub window_margin: f64,
    pub min_second_difference: f64,
    pub slope_at_zero: f64,
    pub violations: Vec<ProfileViolation>,
    pub ok: bool,
}

pub const STRICT_MARGIN: f64 = 1e-12;
pub const CONVEXITY_SLACK: f64 = 1e-9;
pub const SLOPE_TOLERANCE: f64 = 1e-6;

/// Samples the dominance and window inequalities against `c(0), c(1), …`
/// on grids of step `step`, plus convexity and the slope at 0.
pub fn rho_check(profile: &ConvexProfile, c: &[f64], horizon: usize, step: f64) -> ProfileCheckReport {
    let per_unit = (1.0 / step).round().max(1.0) as usize;
    let h = 1.0 / per_unit as f64;
    let mut violations = Vec::new();
    let mut dominance_margin = f64::INFINITY;
    for n in 0..horizon.min(c.len()) {
        for j in 1..=per_unit {
            let t = n as f64 + j as f64 * h;
            let v = profile.eval(t);
            let gap = v - c[n];
            if gap < dominance_margin {
                dominance_margin = gap;
            }
            if gap < STRICT_MARGIN {
                violations.push(ProfileViolation { check: "dominance".into(), n, t, value: v, bound: c[n] });
            }
        }
    }
    let mut window_margin = f64::INFINITY;
    for n in 1..=horizon.min(c.len().saturating_sub(1)) {
        for j in 0..=3 * per_unit {
            let t = (n - 1) as f64 + j as f64 * h;
            let v = profile.eval(t);
            let gap = v - c[n];
            window_margin = window_margin.min(gap);
            if gap < 0.0 {
                violations.push(ProfileViolation { check: "window".into(), n, t, value: v, bound: c[n] });
            }
        }
    }
    let top = (horizon + 2) * per_unit;
    let vals: Vec<f64> = (0..=top + 1).map(|j| profile.eval(j as f64 * h)).collect();
    let mut min_second_difference = vals[1] - 2.0 * vals[0] + vals[1];
    for j in 1..=top {
        let d2 = vals[j - 1] - 2.0 * vals[j] + vals[j + 1];
        if d2 < min_second_difference {
            min_second_difference = d2;
        }
        if d2 < -CONVEXITY_SLACK {
            violations.push(ProfileViolation {
                check: "convexity".into(),
                n: j / per_unit,
                t: j as f64 * h,
                value: d2,
                bound: -CONVEXITY_SLACK,
            });
        }
    }
    let fd = 1e-7;
    let slope_at_zero = (profile.eval(fd) - profile.eval(0.0)) / fd;
    if slope_at_zero.abs() > SLOPE_TOLERANCE {
        violations.push(ProfileViolation {
            check: "slope_at_zero".into(),
            n: 0,
            t: 0.0,
            value: slope_at_zero,
            bound: SLOPE_TOLERANCE,
        });
    }
    ProfileCheckReport {
        horizon,
        step: h,
        dominance_margin,
        window_margin,
        min_second_difference,
        slope_at_zero,
        ok: violations.is_empty(),
        violations,
    }
}
