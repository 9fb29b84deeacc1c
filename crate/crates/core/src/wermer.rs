//! Branches of the multivalued function `w = Σ_{j≤m} ε_j √(z − a_j)`.
//!
//! A branch is selected by a [`BranchSignature`]: one sign per term, relative to
//! the principal square root of `z − a_j` at the signature's reference point.
//! Values elsewhere are obtained by analytic continuation along a
//! [`ContinuationPath`], term by term. Quantities that only depend on the
//! multiset of branch values at a point (nearest-branch distance, the
//! potential, κ, α) are evaluated with principal roots directly, since the
//! multiset does not depend on the determination.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lattice::{self, RegionId};
use crate::{ComplexPoint, Error, Result};

/// Closest admissible approach of a continuation path to a branch point.
pub const MIN_CLEARANCE: f64 = 1e-6;
/// Substep budget for a single path segment.
pub const MAX_SUBSTEPS: usize = 1_000_000;
/// Default number of circle samples for κ_k.
pub const DEFAULT_CIRCLE_SAMPLES: usize = 2048;
/// Default radius r_k before any halving.
pub const DEFAULT_RADIUS: f64 = 0.25;
const MAX_RADIUS_HALVINGS: usize = 12;

/// The lattice points `a_1, …, a_m`.
pub fn branch_points(m: usize) -> Vec<ComplexPoint> {
    (1..=m)
        .map(|j| lattice::spiral_point(j).expect("j >= 1"))
        .collect()
}

/// ε-schedule of the Wermer construction at level `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct EpsilonSchedule {
    m: usize,
    eps: Vec<f64>,
    radii: Vec<f64>,
    kappas: Vec<f64>,
    safety: f64,
    points: Vec<ComplexPoint>,
}

/// On-disk form: `{m, eps[], radii[], kappas[], safety}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub m: usize,
    pub eps: Vec<f64>,
    pub radii: Vec<f64>,
    pub kappas: Vec<f64>,
    pub safety: f64,
}

impl TryFrom<ScheduleFile> for EpsilonSchedule {
    type Error = Error;

    fn try_from(f: ScheduleFile) -> Result<Self> {
        let s = EpsilonSchedule::from_parts(f.eps, f.radii, f.kappas, f.safety)?;
        if s.m != f.m {
            return Err(Error::ScheduleInvariant(format!(
                "declared level {} but {} epsilons",
                f.m, s.m
            )));
        }
        Ok(s)
    }
}

impl From<EpsilonSchedule> for ScheduleFile {
    fn from(s: EpsilonSchedule) -> Self {
        ScheduleFile { m: s.m, eps: s.eps, radii: s.radii, kappas: s.kappas, safety: s.safety }
    }
}

impl EpsilonSchedule {
    /// Checks shapes and signs only; use [`EpsilonSchedule::certify`] for the
    /// construction inequalities.
    pub fn from_parts(eps: Vec<f64>, radii: Vec<f64>, kappas: Vec<f64>, safety: f64) -> Result<Self> {
        let m = eps.len();
        if m == 0 {
            return Err(Error::ScheduleInvariant("empty schedule".into()));
        }
        if radii.len() != m - 1 || kappas.len() != m - 1 {
            return Err(Error::ScheduleInvariant(format!(
                "level {m} needs {} radii and kappas, got {} and {}",
                m - 1,
                radii.len(),
                kappas.len()
            )));
        }
        if !(safety > 0.0 && safety < 1.0) {
            return Err(Error::ScheduleInvariant(format!("safety {safety} outside (0,1)")));
        }
        if let Some(e) = eps.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::ScheduleInvariant(format!("non-positive epsilon {e}")));
        }
        if let Some(r) = radii.iter().find(|r| !(**r > 0.0 && **r < 0.5)) {
            return Err(Error::ScheduleInvariant(format!("radius {r} outside (0,1/2)")));
        }
        if let Some(k) = kappas.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::ScheduleInvariant(format!("non-positive kappa {k}")));
        }
        Ok(Self { m, eps, radii, kappas, safety, points: branch_points(m) })
    }

    /// Level-1 schedule `ε_1 = 1`.
    pub fn level_one(safety: f64) -> Result<Self> {
        Self::from_parts(vec![1.0], vec![], vec![], safety)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn safety(&self) -> f64 {
        self.safety
    }

    /// ε_j, 1-based.
    pub fn eps(&self, j: usize) -> f64 {
        self.eps[j - 1]
    }

    pub fn eps_all(&self) -> &[f64] {
        &self.eps
    }

    /// r_p for 2 ≤ p ≤ m.
    pub fn radius(&self, p: usize) -> f64 {
        self.radii[p - 2]
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// κ_k for 2 ≤ k ≤ m.
    pub fn kappa(&self, k: usize) -> f64 {
        self.kappas[k - 2]
    }

    pub fn kappas(&self) -> &[f64] {
        &self.kappas
    }

    pub fn points(&self) -> &[ComplexPoint] {
        &self.points
    }

    /// The Property (P) scale `ε_p √r_p` for p ≥ 2.
    pub fn shift_scale(&self, p: usize) -> f64 {
        self.eps(p) * self.radius(p).sqrt()
    }

    /// Prefix schedule of level `level ≤ m`.
    pub fn truncate(&self, level: usize) -> Result<Self> {
        if level == 0 || level > self.m {
            return Err(Error::invalid(format!("cannot truncate level {} to {level}", self.m)));
        }
        Self::from_parts(
            self.eps[..level].to_vec(),
            self.radii[..level - 1].to_vec(),
            self.kappas[..level - 1].to_vec(),
            self.safety,
        )
    }

    /// Whether `z` coincides with a branch point of this level.
    pub fn is_branch_point(&self, z: ComplexPoint) -> bool {
        self.points.iter().any(|a| *a == z)
    }

    /// Evaluates the construction inequalities and reports their margins.
    pub fn certify(&self) -> CertificationReport {
        let mut checks = Vec::new();
        for k in 2..=self.m {
            let r = self.radius(k);
            let lhs = 2.0 * self.eps(k) * r.sqrt();
            let rhs = self.kappa(k) / 2.0;
            checks.push(InequalityCheck::new("k-eq", k, None, lhs, rhs));
            for p in 2..k {
                let dist = (self.points[k - 1] - self.points[p - 1]).norm();
                let lhs = 2.0 * self.eps(k) * (dist + self.radius(p)).sqrt();
                let rhs = self.shift_scale(p) / 2f64.powi((k - p + 1) as i32);
                checks.push(InequalityCheck::new("p-eq", k, Some(p), lhs, rhs));
            }
        }
        let eps_one = self.eps[0] == 1.0;
        let decreasing = self.eps.windows(2).all(|w| w[1] < w[0]);
        let min_margin = checks.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min);
        let ok = eps_one && decreasing && checks.iter().all(|c| c.holds);
        CertificationReport { m: self.m, eps_one, decreasing, min_margin, ok, checks }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub k: usize,
    pub p: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    /// `1 − lhs/rhs`; positive iff the strict inequality holds.
    pub margin: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn new(name: &str, k: usize, p: Option<usize>, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            k,
            p,
            lhs,
            rhs,
            margin: 1.0 - lhs / rhs,
            holds: lhs < rhs,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificationReport {
    pub m: usize,
    pub eps_one: bool,
    pub decreasing: bool,
    pub min_margin: f64,
    pub ok: bool,
    pub checks: Vec<InequalityCheck>,
}

impl CertificationReport {
    pub fn into_result(self) -> Result<Self> {
        if self.ok {
            return Ok(self);
        }
        let why = if !self.eps_one {
            "eps_1 != 1".to_string()
        } else if !self.decreasing {
            "eps not strictly decreasing".to_string()
        } else {
            let c = self.checks.iter().find(|c| !c.holds).expect("some check failed");
            format!("{} fails at k={} p={:?}: {:e} >= {:e}", c.name, c.k, c.p, c.lhs, c.rhs)
        };
        Err(Error::ScheduleInvariant(why))
    }
}

/// A sign vector selecting one of the `2^m` branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSignature {
    pub signs: Vec<i8>,
    pub reference: ComplexPoint,
}

impl BranchSignature {
    pub fn new(signs: Vec<i8>, reference: ComplexPoint) -> Result<Self> {
        if signs.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::invalid("signature entries must be +1 or -1"));
        }
        if !(reference.re.is_finite() && reference.im.is_finite()) {
            return Err(Error::invalid("non-finite reference point"));
        }
        Ok(Self { signs, reference })
    }

    pub fn principal(m: usize, reference: ComplexPoint) -> Self {
        Self { signs: vec![1; m], reference }
    }

    /// Bit `j` of `mask` set means a minus sign on term `j + 1`.
    pub fn from_mask(mask: u64, m: usize, reference: ComplexPoint) -> Self {
        let signs = (0..m).map(|j| if mask >> j & 1 == 1 { -1 } else { 1 }).collect();
        Self { signs, reference }
    }

    pub fn mask(&self) -> u64 {
        self.signs
            .iter()
            .enumerate()
            .filter(|(_, s)| **s < 0)
            .fold(0, |acc, (j, _)| acc | 1 << j)
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    fn check(&self, schedule: &EpsilonSchedule) -> Result<()> {
        if self.signs.len() != schedule.m() {
            return Err(Error::invalid(format!(
                "signature length {} != schedule level {}",
                self.signs.len(),
                schedule.m()
            )));
        }
        if schedule.is_branch_point(self.reference) {
            return Err(Error::invalid("reference point is a branch point"));
        }
        Ok(())
    }
}

/// Polyline along which branches are continued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationPath {
    pub waypoints: Vec<ComplexPoint>,
    pub max_step: f64,
}

impl ContinuationPath {
    pub fn new(waypoints: Vec<ComplexPoint>, max_step: f64) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::invalid("empty path"));
        }
        if !(max_step > 0.0) {
            return Err(Error::invalid("max_step must be positive"));
        }
        for w in waypoints.windows(2) {
            if (w[1] - w[0]).norm() > max_step * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "waypoints {} and {} further apart than {max_step}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { waypoints, max_step })
    }

    pub fn straight(from: ComplexPoint, to: ComplexPoint) -> Self {
        let len = (to - from).norm();
        Self { waypoints: vec![from, to], max_step: len.max(f64::MIN_POSITIVE) }
    }

    /// `turns` full circles around `center` (negative = clockwise), starting at
    /// `center + radius·e^{i·start_angle}`.
    pub fn circle(center: ComplexPoint, radius: f64, start_angle: f64, turns: i32, samples_per_turn: usize) -> Self {
        let n = samples_per_turn.max(8) * turns.unsigned_abs() as usize;
        let total = 2.0 * std::f64::consts::PI * turns as f64;
        let mut waypoints: Vec<ComplexPoint> = (0..=n)
            .map(|i| center + ComplexPoint::from_polar(radius, start_angle + total * i as f64 / n as f64))
            .collect();
        if let (Some(first), Some(last)) = (waypoints.first().copied(), waypoints.last_mut()) {
            *last = first;
        }
        let max_step = 2.0 * radius * (std::f64::consts::PI / samples_per_turn.max(8) as f64).sin() * 1.0001;
        Self { waypoints, max_step }
    }

    pub fn start(&self) -> ComplexPoint {
        self.waypoints[0]
    }

    pub fn end(&self) -> ComplexPoint {
        *self.waypoints.last().expect("non-empty")
    }

    /// Concatenation; `other` must start where `self` ends.
    pub fn then(mut self, other: &ContinuationPath) -> Self {
        self.waypoints.extend_from_slice(&other.waypoints[1..]);
        self.max_step = self.max_step.max(other.max_step);
        self
    }

    pub fn is_closed(&self) -> bool {
        self.start() == self.end()
    }
}

/// Winding number of a closed polyline around `p`, by accumulated argument.
pub fn winding_number(path: &ContinuationPath, p: ComplexPoint) -> i64 {
    let mut total = 0.0;
    for w in path.waypoints.windows(2) {
        let a = w[0] - p;
        let b = w[1] - p;
        total += (b / a).arg();
    }
    (total / (2.0 * std::f64::consts::PI)).round() as i64
}

fn dist_point_segment(p: ComplexPoint, a: ComplexPoint, b: ComplexPoint) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = (((p - a) * ab.conj()).re / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Continues each determination `roots[j] = ±√(z − a_j)` along `path`.
fn continue_roots(points: &[ComplexPoint], roots: &mut [ComplexPoint], path: &ContinuationPath) -> Result<()> {
    for seg in path.waypoints.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        for (j, pt) in points.iter().enumerate() {
            let d = dist_point_segment(*pt, a, b);
            if d < MIN_CLEARANCE {
                return Err(Error::NearBranchPoint { index: j + 1, distance: d });
            }
        }
        let len = (b - a).norm();
        if len == 0.0 {
            continue;
        }
        let dir = (b - a) / len;
        let mut s = 0.0;
        let mut steps = 0;
        while s < len {
            let cur = a + dir * s;
            let clearance = points.iter().map(|pt| (cur - pt).norm()).fold(f64::INFINITY, f64::min);
            let step = (0.5 * clearance).min(len - s);
            let next_s = if step >= len - s { len } else { s + step };
            let next = if next_s == len { b } else { a + dir * next_s };
            for (root, pt) in roots.iter_mut().zip(points) {
                let r = (next - pt).sqrt();
                *root = if (r - *root).norm_sqr() <= (r + *root).norm_sqr() { r } else { -r };
            }
            s = next_s;
            steps += 1;
            if steps > MAX_SUBSTEPS {
                return Err(Error::StepControl { max_substeps: MAX_SUBSTEPS });
            }
        }
    }
    Ok(())
}

fn start_roots(schedule: &EpsilonSchedule, sig: &BranchSignature) -> Vec<ComplexPoint> {
    schedule
        .points()
        .iter()
        .zip(&sig.signs)
        .map(|(a, s)| (sig.reference - a).sqrt() * f64::from(*s))
        .collect()
}

fn check_path_start(sig: &BranchSignature, path: &ContinuationPath) -> Result<()> {
    let gap = (path.start() - sig.reference).norm();
    if gap > 1e-12 * (1.0 + sig.reference.norm()) {
        return Err(Error::invalid(format!(
            "path starts at {} but the signature is anchored at {}",
            path.start(),
            sig.reference
        )));
    }
    Ok(())
}

/// Continued determinations `s_j √(z − a_j)` at the end of `path`.
pub fn continued_roots(schedule: &EpsilonSchedule, sig: &BranchSignature, path: &ContinuationPath) -> Result<Vec<ComplexPoint>> {
    sig.check(schedule)?;
    check_path_start(sig, path)?;
    let mut roots = start_roots(schedule, sig);
    continue_roots(schedule.points(), &mut roots, path)?;
    Ok(roots)
}

/// Value of the branch `sig` continued along `path` to its end point.
pub fn branch_eval(schedule: &EpsilonSchedule, sig: &BranchSignature, path: &ContinuationPath) -> Result<ComplexPoint> {
    let roots = continued_roots(schedule, sig, path)?;
    Ok(roots.iter().zip(schedule.eps_all()).map(|(r, e)| r * e).sum())
}

/// `dw/dz` of the continued branch at the end of `path`.
pub fn branch_derivative(schedule: &EpsilonSchedule, sig: &BranchSignature, path: &ContinuationPath) -> Result<ComplexPoint> {
    let roots = continued_roots(schedule, sig, path)?;
    Ok(roots.iter().zip(schedule.eps_all()).map(|(r, e)| *e / (2.0 * r)).sum())
}

/// Signature obtained after transporting `sig` around `loop_path`.
///
/// The loop may start anywhere; it is conjugated by straight segments to and
/// from the signature's reference point.
pub fn monodromy(schedule: &EpsilonSchedule, sig: &BranchSignature, loop_path: &ContinuationPath) -> Result<BranchSignature> {
    if !loop_path.is_closed() {
        return Err(Error::invalid("monodromy needs a closed loop"));
    }
    let mut full = ContinuationPath::straight(sig.reference, loop_path.start());
    full = full.then(loop_path);
    full = full.then(&ContinuationPath::straight(loop_path.end(), sig.reference));
    let roots = continued_roots(schedule, sig, &full)?;
    let signs = roots
        .iter()
        .zip(schedule.points())
        .map(|(r, a)| {
            let p = (sig.reference - a).sqrt();
            if (r - p).norm_sqr() <= (r + p).norm_sqr() {
                1
            } else {
                -1
            }
        })
        .collect();
    Ok(BranchSignature { signs, reference: sig.reference })
}

/// Principal-root terms `ε_j √(z − a_j)` at a fixed point, with the
/// multiset-level queries on the `2^m` branch values.
#[derive(Debug, Clone)]
pub struct BranchTerms {
    terms: Vec<ComplexPoint>,
    tails: Vec<f64>,
}

impl BranchTerms {
    pub fn at(schedule: &EpsilonSchedule, z: ComplexPoint) -> Self {
        Self::at_level(schedule, schedule.m(), z)
    }

    /// Uses only the first `level` terms.
    pub fn at_level(schedule: &EpsilonSchedule, level: usize, z: ComplexPoint) -> Self {
        let terms: Vec<ComplexPoint> = schedule.points()[..level]
            .iter()
            .zip(schedule.eps_all())
            .map(|(a, e)| (z - a).sqrt() * *e)
            .collect();
        let mut tails = vec![0.0; terms.len() + 1];
        for j in (0..terms.len()).rev() {
            tails[j] = tails[j + 1] + terms[j].norm();
        }
        Self { terms, tails }
    }

    pub fn terms(&self) -> &[ComplexPoint] {
        &self.terms
    }

    /// All `2^m` values; index bit `j` set means a minus sign on term `j+1`.
    pub fn values(&self) -> Vec<ComplexPoint> {
        let mut vals = Vec::with_capacity(1 << self.terms.len());
        vals.push(ComplexPoint::new(0.0, 0.0));
        for t in &self.terms {
            let half = vals.len();
            for i in 0..half {
                let v = vals[i];
                vals.push(v - t);
                vals[i] = v + t;
            }
        }
        vals
    }

    /// Value of the branch with the given mask.
    pub fn value(&self, mask: u64) -> ComplexPoint {
        self.terms
            .iter()
            .enumerate()
            .map(|(j, t)| if mask >> j & 1 == 1 { -t } else { *t })
            .sum()
    }

    /// `min_s |w − f_s|` by depth-first branch and bound.
    pub fn nearest_distance(&self, w: ComplexPoint) -> f64 {
        self.nearest(w).0
    }

    /// Nearest branch value: `(distance, mask)`.
    pub fn nearest(&self, w: ComplexPoint) -> (f64, u64) {
        let mut best = (f64::INFINITY, 0u64);
        self.descend(0, ComplexPoint::new(0.0, 0.0), 0, w, &mut best);
        best
    }

    fn descend(&self, j: usize, partial: ComplexPoint, mask: u64, w: ComplexPoint, best: &mut (f64, u64)) {
        let gap = (w - partial).norm();
        if j == self.terms.len() {
            if gap < best.0 {
                *best = (gap, mask);
            }
            return;
        }
        if gap - self.tails[j] >= best.0 {
            return;
        }
        let t = self.terms[j];
        let plus = partial + t;
        let minus = partial - t;
        if (w - plus).norm_sqr() <= (w - minus).norm_sqr() {
            self.descend(j + 1, plus, mask, w, best);
            self.descend(j + 1, minus, mask | 1 << j, w, best);
        } else {
            self.descend(j + 1, minus, mask | 1 << j, w, best);
            self.descend(j + 1, plus, mask, w, best);
        }
    }

    /// `Σ_s log|w − f_s|`; `−∞` when `w` is a branch value.
    pub fn log_abs_product(&self, w: ComplexPoint) -> f64 {
        let vals = self.values();
        log_abs_product_of(&vals, w)
    }
}

/// Running `log|Π d|` that keeps the product in `[1e-100, 1e100]`.
struct LogProduct {
    acc: ComplexPoint,
    log_scale: f64,
}

impl LogProduct {
    fn new() -> Self {
        Self { acc: ComplexPoint::new(1.0, 0.0), log_scale: 0.0 }
    }

    /// Returns false on an exact zero factor.
    fn push(&mut self, d: ComplexPoint) -> bool {
        let size = d.re.abs().max(d.im.abs());
        if size == 0.0 {
            return false;
        }
        if (1e-100..=1e100).contains(&size) {
            self.acc *= d;
        } else {
            self.log_scale += size.ln();
            self.acc *= d / size;
        }
        let mag = self.acc.re.abs().max(self.acc.im.abs());
        if !(1e-100..=1e100).contains(&mag) {
            self.log_scale += mag.ln();
            self.acc /= mag;
        }
        true
    }

    fn value(&self) -> f64 {
        self.log_scale + self.acc.norm().ln()
    }
}

/// `Σ_v log|w − v|` with mantissa/exponent renormalisation instead of a log
/// per factor.
pub fn log_abs_product_of(values: &[ComplexPoint], w: ComplexPoint) -> f64 {
    let mut prod = LogProduct::new();
    for v in values {
        if !prod.push(w - v) {
            return f64::NEG_INFINITY;
        }
    }
    prod.value()
}

/// [`log_abs_product_of`] together with `min_v |w − v|`.
pub fn log_abs_product_and_nearest(values: &[ComplexPoint], w: ComplexPoint) -> (f64, f64) {
    let mut prod = LogProduct::new();
    let mut nearest = f64::INFINITY;
    for v in values {
        let d = w - v;
        nearest = nearest.min(d.norm());
        if !prod.push(d) {
            return (f64::NEG_INFINITY, 0.0);
        }
    }
    (prod.value(), nearest)
}

/// `max_{s ∈ {±1}^m} |Σ s_j c_j|`, exactly.
///
/// The maximum equals `max_u Σ |Re(ū c_j)|`; the optimal sign pattern is
/// constant on the arcs between the `2m` directions orthogonal to some `c_j`,
/// so one candidate per arc suffices.
pub fn max_signed_sum_norm(c: &[ComplexPoint]) -> f64 {
    use std::f64::consts::{FRAC_PI_2, TAU};
    let mut angles: Vec<f64> = c
        .iter()
        .filter(|v| v.norm() > 0.0)
        .flat_map(|v| {
            let t = v.arg();
            [(t + FRAC_PI_2).rem_euclid(TAU), (t - FRAC_PI_2).rem_euclid(TAU)]
        })
        .collect();
    if angles.is_empty() {
        return 0.0;
    }
    angles.sort_by(f64::total_cmp);
    let mut best: f64 = 0.0;
    for i in 0..angles.len() {
        let lo = angles[i];
        let hi = if i + 1 < angles.len() { angles[i + 1] } else { angles[0] + TAU };
        let u = ComplexPoint::from_polar(1.0, 0.5 * (lo + hi));
        let s: ComplexPoint = c
            .iter()
            .map(|v| if (v * u.conj()).re >= 0.0 { *v } else { -v })
            .sum();
        best = best.max(s.norm());
    }
    best
}

/// `min_{s ∈ {±1}^m} |Σ s_j d_j|` by Gray-code enumeration (m ≤ 26).
pub fn min_signed_sum_norm(d: &[ComplexPoint]) -> Result<f64> {
    let m = d.len();
    if m > 26 {
        return Err(Error::invalid("sign enumeration limited to 26 terms"));
    }
    let mut s: ComplexPoint = d.iter().sum();
    let mut signs = vec![1.0; m];
    let mut best = s.norm();
    for i in 1u64..(1u64 << m) {
        let j = i.trailing_zeros() as usize;
        s -= d[j] * (2.0 * signs[j]);
        signs[j] = -signs[j];
        best = best.min(s.norm());
    }
    Ok(best)
}

/// κ_k: sampled minimum over `|z − a_k| = radius` of the minimal pairwise
/// distance between the `2^{k−1}` branch values of `E_{k−1}`.
pub fn kappa_k(schedule: &EpsilonSchedule, k: usize, radius: f64, circle_samples: usize) -> Result<f64> {
    if k < 2 || k > schedule.m() + 1 {
        return Err(Error::invalid(format!("kappa_{k} needs a schedule of level >= {}", k - 1)));
    }
    if k - 1 > 22 {
        return Err(Error::invalid("branch enumeration limited to level 22"));
    }
    if !(radius > 0.0 && radius < 0.5) || circle_samples == 0 {
        return Err(Error::invalid("radius must lie in (0,1/2) and samples be positive"));
    }
    let center = lattice::spiral_point(k)?;
    let kappa = (0..circle_samples)
        .into_par_iter()
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / circle_samples as f64;
            let z = center + ComplexPoint::from_polar(radius, theta);
            min_pairwise_gap(&BranchTerms::at_level(schedule, k - 1, z))
        })
        .reduce(|| f64::INFINITY, f64::min);
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::DegenerateBranches { k, kappa });
    }
    Ok(kappa)
}

/// Closest pair among branch values. Candidates come from a sweep over the
/// rounded values; distances are recomputed from the differing terms only so
/// that tiny gaps are not lost to cancellation.
fn min_pairwise_gap(bt: &BranchTerms) -> f64 {
    let vals = bt.values();
    if vals.len() < 2 {
        return f64::INFINITY;
    }
    let exact = |s: usize, t: usize| -> f64 {
        let diff = (s ^ t) as u64;
        let mut acc = ComplexPoint::new(0.0, 0.0);
        for (j, term) in bt.terms().iter().enumerate() {
            if diff >> j & 1 == 1 {
                if s >> j & 1 == 1 {
                    acc -= term;
                } else {
                    acc += term;
                }
            }
        }
        2.0 * acc.norm()
    };
    let scale = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let slack = 64.0 * f64::EPSILON * (1.0 + scale);
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|a, b| vals[*a].re.total_cmp(&vals[*b].re));
    let mut best = f64::INFINITY;
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            if vals[b].re - vals[a].re >= best + slack {
                break;
            }
            if (vals[b].im - vals[a].im).abs() < best + slack {
                best = best.min(exact(a, b));
            }
        }
    }
    best
}

/// Certified construction of a level-`target_m` schedule.
pub fn build_schedule(target_m: usize, safety: f64, circle_samples: usize) -> Result<EpsilonSchedule> {
    if target_m == 0 {
        return Err(Error::invalid("target level must be >= 1"));
    }
    let mut schedule = EpsilonSchedule::level_one(safety)?;
    let points = branch_points(target_m);
    for k in 2..=target_m {
        let mut radius = DEFAULT_RADIUS;
        let mut kappa = None;
        for _ in 0..=MAX_RADIUS_HALVINGS {
            match kappa_k(&schedule, k, radius, circle_samples) {
                Ok(v) => {
                    kappa = Some(v);
                    break;
                }
                Err(Error::DegenerateBranches { .. }) => radius /= 2.0,
                Err(e) => return Err(e),
            }
        }
        let kappa = kappa.ok_or(Error::ScheduleCertification { k, retries: MAX_RADIUS_HALVINGS })?;
        let mut bound = kappa / (4.0 * radius.sqrt());
        for p in 2..k {
            let dist = (points[k - 1] - points[p - 1]).norm();
            let b = schedule.shift_scale(p) / (2f64.powi((k - p + 2) as i32) * (dist + schedule.radius(p)).sqrt());
            bound = bound.min(b);
        }
        let mut eps = schedule.eps.clone();
        eps.push(safety * bound);
        let mut radii = schedule.radii.clone();
        radii.push(radius);
        let mut kappas = schedule.kappas.clone();
        kappas.push(kappa);
        schedule = EpsilonSchedule::from_parts(eps, radii, kappas, safety)?;
    }
    Ok(schedule)
}

/// Sampled α(n) together with the grid spacing used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub n: usize,
    pub alpha: f64,
    pub grid_spacing: f64,
    pub points: usize,
}

/// Grid of points within distance 1/8 of `S_n`: concentric square
/// perimeters from half-side `n + 1/8` to `n + 7/8`.
pub fn alpha_grid(n: usize, spacing: f64) -> Vec<ComplexPoint> {
    let lo = n as f64 + 0.125;
    let hi = n as f64 + 0.875;
    let layers = ((hi - lo) / spacing).ceil() as usize;
    (0..=layers)
        .flat_map(|i| {
            let s = lo + (hi - lo) * i as f64 / layers as f64;
            lattice::square_perimeter(s, spacing)
        })
        .filter(|z| lattice::dist_to_s_frame(n, *z) <= 0.125 + 1e-12)
        .collect()
}

/// `sup |f'_s(z)|` over all signatures and the grid around `S_n`.
pub fn alpha_bound(schedule: &EpsilonSchedule, n: usize, grid_spacing: f64) -> Result<AlphaEstimate> {
    if n == 0 || !(grid_spacing > 0.0) {
        return Err(Error::invalid("alpha needs n >= 1 and a positive spacing"));
    }
    let grid = alpha_grid(n, grid_spacing);
    let alpha = grid
        .par_iter()
        .map(|z| {
            let coeffs: Vec<ComplexPoint> = schedule
                .points()
                .iter()
                .zip(schedule.eps_all())
                .map(|(a, e)| *e / (2.0 * (z - a).sqrt()))
                .collect();
            max_signed_sum_norm(&coeffs)
        })
        .reduce(|| 0.0, f64::max);
    Ok(AlphaEstimate { n, alpha, grid_spacing, points: grid.len() })
}

/// α(n) for `n = 1..=n_max`.
pub fn alpha_profile(schedule: &EpsilonSchedule, n_max: usize, grid_spacing: f64) -> Result<Vec<AlphaEstimate>> {
    if n_max == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    (1..=n_max).map(|n| alpha_bound(schedule, n, grid_spacing)).collect()
}

/// Smallest tested `n` from which every α stays below 1/2.
pub fn q_zero(alphas: &[AlphaEstimate]) -> Option<usize> {
    let mut q0 = None;
    for a in alphas.iter().rev() {
        if a.alpha < 0.5 {
            q0 = Some(a.n);
        } else {
            break;
        }
    }
    q0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftReport {
    pub p: usize,
    pub delta: f64,
    /// Shift error of `E_{m,p}` itself, from continuation.
    pub theta_exact: f64,
    /// Certified lower bound for the δ-tube: `max(θ − 2δ, 0)`.
    pub theta: f64,
    /// `2 ε_p √r_p`.
    pub level_p_value: f64,
}

/// Shift error of liftings of the circle `|z − a_p| = r_p` into `E_m` (δ = 0)
/// or its δ-tube.
pub fn shift_error(schedule: &EpsilonSchedule, p: usize, delta: f64, circle_samples: usize) -> Result<ShiftReport> {
    if p < 2 || p > schedule.m() {
        return Err(Error::invalid(format!("shift error needs 2 <= p <= {}", schedule.m())));
    }
    if !(delta >= 0.0) {
        return Err(Error::invalid("delta must be >= 0"));
    }
    let center = schedule.points()[p - 1];
    let r = schedule.radius(p);
    let loop_path = ContinuationPath::circle(center, r, 0.0, 1, circle_samples);
    let sig = BranchSignature::principal(schedule.m(), loop_path.start());
    let before = start_roots(schedule, &sig);
    let after = continued_roots(schedule, &sig, &loop_path)?;
    let diffs: Vec<ComplexPoint> = before
        .iter()
        .zip(&after)
        .zip(schedule.eps_all())
        .map(|((b, a), e)| (a - b) * *e)
        .collect();
    let theta_exact = min_signed_sum_norm(&diffs)?;
    Ok(ShiftReport {
        p,
        delta,
        theta_exact,
        theta: (theta_exact - 2.0 * delta).max(0.0),
        level_p_value: 2.0 * schedule.shift_scale(p),
    })
}

/// Largest distance, over sampled points of `|z − a_p| = r_p`, from a level-m
/// branch value to the nearest level-p branch value, with the tube width
/// `ε_p √r_p / 4` it must stay below.
pub fn tube_inclusion_margin(schedule: &EpsilonSchedule, p: usize, circle_samples: usize) -> Result<(f64, f64)> {
    if p < 2 || p > schedule.m() {
        return Err(Error::invalid("tube inclusion needs 2 <= p <= m"));
    }
    let center = schedule.points()[p - 1];
    let r = schedule.radius(p);
    let worst = (0..circle_samples)
        .into_par_iter()
        .map(|i| {
            let z = center + ComplexPoint::from_polar(r, 2.0 * std::f64::consts::PI * i as f64 / circle_samples as f64);
            let coarse = BranchTerms::at_level(schedule, p, z);
            BranchTerms::at(schedule, z)
                .values()
                .iter()
                .map(|w| coarse.nearest_distance(*w))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok((worst, schedule.shift_scale(p) / 4.0))
}

/// `(z, w) ∈ E_m^δ`: some branch value at `z` lies within `δ` of `w`.
pub fn tube_contains(schedule: &EpsilonSchedule, delta: f64, z: ComplexPoint, w: ComplexPoint) -> bool {
    BranchTerms::at(schedule, z).nearest_distance(w) < delta
}

/// Whether `z` lies in the closed frame `S_n` (re-exported for callers that
/// only deal with branches).
pub fn in_s_frame(n: usize, z: ComplexPoint) -> bool {
    lattice::region_contains(RegionId::s(n), z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64, y: f64) -> ComplexPoint {
        ComplexPoint::new(x, y)
    }

    fn two_level() -> EpsilonSchedule {
        EpsilonSchedule::from_parts(vec![1.0, 0.4], vec![0.25], vec![3f64.sqrt()], 0.5).unwrap()
    }

    #[test]
    fn eval_examples() {
        let s1 = EpsilonSchedule::level_one(0.5).unwrap();
        let sig = BranchSignature::new(vec![1], c(1.0, 0.0)).unwrap();
        let w = branch_eval(&s1, &sig, &ContinuationPath::straight(c(1.0, 0.0), c(1.0, 0.0))).unwrap();
        assert!((w - c(1.0, 0.0)).norm() < 1e-15);
        let d = branch_derivative(&s1, &sig, &ContinuationPath::straight(c(1.0, 0.0), c(1.0, 0.0))).unwrap();
        assert!((d - c(0.5, 0.0)).norm() < 1e-15);

        let sig = BranchSignature::new(vec![-1], c(4.0, 0.0)).unwrap();
        let path = ContinuationPath::straight(c(4.0, 0.0), c(4.0, 0.0));
        assert!((branch_eval(&s1, &sig, &path).unwrap() - c(-2.0, 0.0)).norm() < 1e-15);
        assert!((branch_derivative(&s1, &sig, &path).unwrap() - c(-0.25, 0.0)).norm() < 1e-15);

        let s2 = two_level();
        let sig = BranchSignature::new(vec![1, 1], c(3.0, 0.0)).unwrap();
        let path = ContinuationPath::straight(c(3.0, 0.0), c(3.0, 0.0));
        let w = branch_eval(&s2, &sig, &path).unwrap();
        assert!((w.re - (3f64.sqrt() + 0.4 * 2f64.sqrt())).abs() < 1e-14);
        assert!((w.re - 2.29777).abs() < 1e-4);
        let d = branch_derivative(&s2, &sig, &path).unwrap();
        assert!((d.re - (0.5 / 3f64.sqrt() + 0.2 / 2f64.sqrt())).abs() < 1e-14);
        assert!((d.re - 0.43016).abs() < 1e-4);
    }

    #[test]
    fn continuation_follows_the_root() {
        // √z continued from 1 to -1 through the upper half plane is i.
        let s1 = EpsilonSchedule::level_one(0.5).unwrap();
        let sig = BranchSignature::principal(1, c(1.0, 0.0));
        let path = ContinuationPath::new(vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)], 2.0).unwrap();
        let w = branch_eval(&s1, &sig, &path).unwrap();
        assert!((w - c(0.0, 1.0)).norm() < 1e-12, "{w}");
        let path = ContinuationPath::new(vec![c(1.0, 0.0), c(0.0, -1.0), c(-1.0, 0.0)], 2.0).unwrap();
        let w = branch_eval(&s1, &sig, &path).unwrap();
        assert!((w - c(0.0, -1.0)).norm() < 1e-12, "{w}");
    }

    #[test]
    fn errors_near_branch_point() {
        let s1 = EpsilonSchedule::level_one(0.5).unwrap();
        let sig = BranchSignature::principal(1, c(-1.0, 1e-8));
        let path = ContinuationPath::straight(c(-1.0, 1e-8), c(1.0, 1e-8));
        assert!(matches!(branch_eval(&s1, &sig, &path), Err(Error::NearBranchPoint { index: 1, .. })));
        let bad = BranchSignature::principal(1, c(0.0, 0.0));
        assert!(branch_eval(&s1, &bad, &ContinuationPath::straight(c(0.0, 0.0), c(1.0, 0.0))).is_err());
    }

    #[test]
    fn monodromy_examples() {
        let s2 = two_level();
        let sig = BranchSignature::principal(2, c(1.25, 0.0));
        let around_a2 = ContinuationPath::circle(c(1.0, 0.0), 0.25, 0.0, 1, 64);
        let flipped = monodromy(&s2, &sig, &around_a2).unwrap();
        assert_eq!(flipped.signs, vec![1, -1]);
        let twice = ContinuationPath::circle(c(1.0, 0.0), 0.25, 0.0, 2, 64);
        assert_eq!(monodromy(&s2, &sig, &twice).unwrap().signs, vec![1, 1]);
        let empty = ContinuationPath::circle(c(3.0, 3.0), 0.5, 0.0, 1, 64);
        assert_eq!(monodromy(&s2, &sig, &empty).unwrap().signs, vec![1, 1]);
    }

    #[test]
    fn kappa_two() {
        let s1 = EpsilonSchedule::level_one(0.5).unwrap();
        let k = kappa_k(&s1, 2, 0.25, 2048).unwrap();
        assert!((k - 3f64.sqrt()).abs() < 1e-3, "{k}");
        let k_small = kappa_k(&s1, 2, 1e-4, 2048).unwrap();
        assert!((k_small - 2.0).abs() < 1e-3, "{k_small}");
    }

    #[test]
    fn degenerate_kappa_is_an_error() {
        // ε_2 = 0 duplicates every branch value.
        let mut s = two_level();
        s.eps[1] = 0.0;
        assert!(matches!(kappa_k(&s, 3, 0.25, 64), Err(Error::DegenerateBranches { k: 3, .. })));
    }

    #[test]
    fn schedule_examples() {
        let one = build_schedule(1, 0.5, 256).unwrap();
        assert_eq!(one.eps_all(), &[1.0]);
        let two = build_schedule(2, 0.5, 2048).unwrap();
        assert!((two.eps(2) - 0.5 * 3f64.sqrt() / 2.0).abs() < 1e-4, "{}", two.eps(2));
        assert!((two.eps(2) - 0.43301).abs() < 1e-4);
        let three = build_schedule(3, 0.5, 512).unwrap();
        let report = three.certify();
        assert!(report.ok);
        assert!(report.min_margin >= 0.5 - 1e-12, "{}", report.min_margin);
    }

    #[test]
    fn schedule_json_shape() {
        let s = two_level();
        let v = serde_json::to_value(&s).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, vec!["eps", "kappas", "m", "radii", "safety"]);
        let back: EpsilonSchedule = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"m":2,"eps":[1.0,-0.1],"radii":[0.25],"kappas":[1.7],"safety":0.5}"#;
        assert!(serde_json::from_str::<EpsilonSchedule>(bad).is_err());
    }

    #[test]
    fn corrupted_schedule_fails_certification() {
        let good = build_schedule(4, 0.5, 256).unwrap();
        let mut eps = good.eps_all().to_vec();
        eps[3] *= 10.0;
        let bad = EpsilonSchedule::from_parts(eps, good.radii().to_vec(), good.kappas().to_vec(), 0.5).unwrap();
        assert!(bad.certify().into_result().is_err());
    }

    #[test]
    fn max_signed_sum_matches_brute_force() {
        let c = [c(0.3, 0.1), c(-0.2, 0.5), c(0.05, -0.4), c(1.0, 0.0), c(0.0, 0.0)];
        let brute = (0u32..32)
            .map(|mask| {
                c.iter()
                    .enumerate()
                    .map(|(j, v)| if mask >> j & 1 == 1 { -v } else { *v })
                    .sum::<ComplexPoint>()
                    .norm()
            })
            .fold(0.0, f64::max);
        assert!((max_signed_sum_norm(&c) - brute).abs() < 1e-14);
    }

    #[test]
    fn alpha_level_one() {
        let s1 = EpsilonSchedule::level_one(0.5).unwrap();
        let a = alpha_bound(&s1, 2, 0.02).unwrap();
        let bound = 1.0 / (2.0 * 2.125f64.sqrt());
        assert!(a.alpha <= bound + 1e-12);
        assert!((a.alpha - bound).abs() / bound < 0.01, "{} vs {bound}", a.alpha);
        let prof = alpha_profile(&s1, 10, 0.05).unwrap();
        assert!(prof.windows(2).all(|w| w[1].alpha < w[0].alpha));
    }

    #[test]
    fn shift_error_at_level_p() {
        let s = build_schedule(3, 0.5, 256).unwrap();
        for p in 2..=3 {
            let t = s.truncate(p).unwrap();
            let rep = shift_error(&t, p, 0.0, 256).unwrap();
            assert!((rep.theta_exact - rep.level_p_value).abs() < 1e-9);
            let half = shift_error(&t, p, t.shift_scale(p) / 2.0, 256).unwrap();
            assert!(half.theta >= t.shift_scale(p) * (1.0 - 1e-9));
        }
    }

    #[test]
    fn tube_examples() {
        let s1 = EpsilonSchedule::level_one(0.5).unwrap();
        assert!(!tube_contains(&s1, 0.4, c(1.0, 0.0), c(1.5, 0.0)));
        assert!(tube_contains(&s1, 0.6, c(1.0, 0.0), c(1.5, 0.0)));
        let s = two_level();
        let z = c(0.3, -2.0);
        for w in BranchTerms::at(&s, z).values() {
            assert!(tube_contains(&s, 1e-12, z, w));
        }
    }

    #[test]
    fn log_product_survives_tiny_factors() {
        let vals = [c(0.0, 0.0), c(1e-200, 0.0), c(3.0, 4.0)];
        let w = c(2e-200, 0.0);
        let expect = (2e-200f64).ln() + (1e-200f64).ln() + (c(3.0, 4.0) - w).norm().ln();
        assert!((log_abs_product_of(&vals, w) - expect).abs() < 1e-10);
        let big = [c(-1e250, 0.0), c(-1e250, 0.0)];
        assert!((log_abs_product_of(&big, c(0.0, 0.0)) - 500.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn nearest_matches_exhaustive() {
        let s = build_schedule(6, 0.5, 128).unwrap();
        let bt = BranchTerms::at(&s, c(2.3, -0.7));
        let vals = bt.values();
        for w in [c(0.0, 0.0), c(1.7, -0.2), c(-1.6, 0.3), c(5.0, 5.0)] {
            let brute = vals.iter().map(|v| (w - v).norm()).fold(f64::INFINITY, f64::min);
            assert_eq!(bt.nearest_distance(w), brute);
        }
    }
}
