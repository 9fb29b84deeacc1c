//! Kobayashi pseudometric brackets.
//!
//! Upper bounds come from explicit disks `f(0) = z`, `f'(0) = v` whose image
//! grid lies in the domain; lower bounds from comparison domains (balls,
//! half-planes) pulled back through holomorphic maps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::potential::{self, DomainParams};
use crate::seeds;
use crate::wermer::BranchTerms;
use crate::{ComplexPoint, Error, Result};

/// An open set in `C^dim`, tested pointwise.
pub trait Domain: Sync {
    fn dim(&self) -> usize;
    fn contains(&self, p: &[ComplexPoint]) -> bool;

    /// A point of the domain with norm at most `r_hi`, by rejection from the
    /// ball of radius `r_hi` (uniform radius, uniform direction).
    fn sample(&self, rng: &mut ChaCha8Rng, r_hi: f64) -> Option<Vec<ComplexPoint>> {
        for _ in 0..256 {
            let dir: Vec<ComplexPoint> = (0..self.dim()).map(|_| seeds::complex_normal(rng)).collect();
            let norm = norm(&dir);
            if norm == 0.0 {
                continue;
            }
            let r = r_hi * rng.random::<f64>();
            let p: Vec<ComplexPoint> = dir.iter().map(|c| c * (r / norm)).collect();
            if self.contains(&p) {
                return Some(p);
            }
        }
        None
    }
}

pub fn norm(p: &[ComplexPoint]) -> f64 {
    p.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Open ball `B_R(center)`; in dimension one a disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub center: Vec<ComplexPoint>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<ComplexPoint>, radius: f64) -> Result<Self> {
        if center.is_empty() || !(radius > 0.0) {
            return Err(Error::invalid("ball needs a center and a positive radius"));
        }
        Ok(Self { center, radius })
    }

    pub fn origin(dim: usize, radius: f64) -> Result<Self> {
        Self::new(vec![ComplexPoint::new(0.0, 0.0); dim], radius)
    }

    pub fn unit_disk() -> Self {
        Self { center: vec![ComplexPoint::new(0.0, 0.0)], radius: 1.0 }
    }
}

impl Domain for Ball {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn contains(&self, p: &[ComplexPoint]) -> bool {
        p.iter().zip(&self.center).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() < self.radius * self.radius
    }
}

/// `{(z, w) ∈ C² : |w| < |z|, |z| > ε}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaEps {
    pub eps: f64,
}

impl Domain for OmegaEps {
    fn dim(&self) -> usize {
        2
    }

    fn contains(&self, p: &[ComplexPoint]) -> bool {
        p[1].norm() < p[0].norm() && p[0].norm() > self.eps
    }
}

/// `{ζ ∈ C : Re ζ > 0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane;

impl Domain for HalfPlane {
    fn dim(&self) -> usize {
        1
    }

    fn contains(&self, p: &[ComplexPoint]) -> bool {
        p[0].re > 0.0
    }
}

/// `Ω_Ψ = {Re ζ > Ψ(z, w)}` in C³.
#[derive(Debug, Clone)]
pub struct OmegaPsi {
    pub params: DomainParams,
}

impl Domain for OmegaPsi {
    fn dim(&self) -> usize {
        3
    }

    fn contains(&self, p: &[ComplexPoint]) -> bool {
        potential::omega_contains(&self.params, p[0], p[1], p[2])
    }

    /// `|z|` log-uniform up to `r_hi/2` (Ψ grows fast in `z`), `w` near a
    /// branch value, `Re ζ` above `Ψ(z, w)`.
    fn sample(&self, rng: &mut ChaCha8Rng, r_hi: f64) -> Option<Vec<ComplexPoint>> {
        let (lo, hi) = (1e-3f64.ln(), (0.5 * r_hi).max(2e-3).ln());
        for _ in 0..256 {
            let z = ComplexPoint::from_polar(rng.random_range(lo..hi).exp(), rng.random_range(0.0..std::f64::consts::TAU));
            let mask = rng.random::<u64>() & ((1u64 << self.params.m()) - 1);
            let w = BranchTerms::at(&self.params.schedule, z).value(mask) + seeds::complex_normal(rng) * 0.1;
            let psi = potential::psi(&self.params, z, w);
            if !psi.is_finite() {
                continue;
            }
            let re = psi + rng.random::<f64>() * 0.25 * r_hi + 1e-9;
            let zeta = ComplexPoint::new(re, (rng.random::<f64>() - 0.5) * 0.5 * r_hi);
            let p = vec![z, w, zeta];
            if norm(&p) <= r_hi && self.contains(&p) {
                return Some(p);
            }
        }
        None
    }
}

/// Disk shapes through `z` with `f'(0) = v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapFamily {
    /// `λ ↦ z + λv`.
    Linear,
    /// `λ ↦ z + λv + Σ_{2≤k≤degree} b_k λ^k` with Gaussian `b_k` of size `scale`.
    Polynomial { degree: usize, scale: f64 },
    /// `λ ↦ z + λv / (1 + cλ)`, `c` optimised by compass search.
    Mobius,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub families: Vec<MapFamily>,
    /// Random draws per polynomial family.
    pub trials: usize,
    pub boundary_points: usize,
    pub interior_points: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub bisection_steps: usize,
    /// Density multiplier for the final check of the best disk.
    pub recheck_factor: usize,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            families: vec![MapFamily::Linear, MapFamily::Polynomial { degree: 3, scale: 0.5 }, MapFamily::Mobius],
            trials: 32,
            boundary_points: 64,
            interior_points: 256,
            r_min: 1e-9,
            r_max: 1e9,
            bisection_steps: 48,
            recheck_factor: 16,
        }
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    family: MapFamily,
    higher: Vec<Vec<ComplexPoint>>,
    pole: ComplexPoint,
}

impl Candidate {
    fn eval(&self, z: &[ComplexPoint], v: &[ComplexPoint], lambda: ComplexPoint) -> Vec<ComplexPoint> {
        let g = lambda / (1.0 + self.pole * lambda);
        (0..z.len())
            .map(|i| {
                let mut acc = z[i] + v[i] * g;
                let mut pow = lambda;
                for b in &self.higher {
                    pow *= lambda;
                    acc += b[i] * pow;
                }
                acc
            })
            .collect()
    }
}

fn circle_grid(r: f64, boundary: usize, interior: usize) -> Vec<ComplexPoint> {
    let mut pts = vec![ComplexPoint::new(0.0, 0.0)];
    let ring = |rr: f64, count: usize, shift: f64, pts: &mut Vec<ComplexPoint>| {
        for j in 0..count {
            pts.push(ComplexPoint::from_polar(rr, std::f64::consts::TAU * (j as f64 + shift) / count as f64));
        }
    };
    ring(r, boundary.max(1), 0.0, &mut pts);
    let rings = 4;
    let per = (interior / rings).max(1);
    for i in 1..=rings {
        ring(r * i as f64 / (rings + 1) as f64, per, 0.5 * (i % 2) as f64, &mut pts);
    }
    pts
}

struct Search<'a, D: Domain + ?Sized> {
    domain: &'a D,
    z: &'a [ComplexPoint],
    v: &'a [ComplexPoint],
    spec: &'a FamilySpec,
}

impl<D: Domain + ?Sized> Search<'_, D> {
    fn admissible(&self, cand: &Candidate, r: f64, density: usize) -> bool {
        if cand.pole.norm() * r >= 1.0 {
            return false;
        }
        let boundary = self.spec.boundary_points * density;
        let mut grid = circle_grid(r, boundary, self.spec.interior_points * density);
        if cand.pole.norm() > 0.0 {
            // |g| peaks where 1 + cλ is smallest
            let toward = (-cand.pole.conj() / cand.pole.norm()).arg();
            let spacing = std::f64::consts::TAU / boundary as f64;
            grid.extend((-16..=16).map(|k| ComplexPoint::from_polar(r, toward + spacing * k as f64 / 16.0)));
        }
        grid.iter().all(|l| self.domain.contains(&cand.eval(self.z, self.v, *l)))
    }

    /// Largest radius by doubling then bisection; 0 if even `r_min` fails.
    fn radius(&self, cand: &Candidate, density: usize) -> f64 {
        let spec = self.spec;
        if !self.admissible(cand, spec.r_min, density) {
            return 0.0;
        }
        let mut lo = spec.r_min;
        let mut hi;
        loop {
            hi = (2.0 * lo).min(spec.r_max);
            if hi <= lo {
                return lo;
            }
            if !self.admissible(cand, hi, density) {
                break;
            }
            lo = hi;
        }
        for _ in 0..spec.bisection_steps {
            let mid = 0.5 * (lo + hi);
            if self.admissible(cand, mid, density) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn compass(&self) -> (Candidate, f64) {
        let mut best = Candidate { family: MapFamily::Mobius, higher: vec![], pole: ComplexPoint::new(0.0, 0.0) };
        let mut best_r = self.radius(&best, 1);
        if best_r == 0.0 {
            return (best, 0.0);
        }
        let mut step = 1.0 / best_r.max(1e-12);
        let dirs = [ComplexPoint::new(1.0, 0.0), ComplexPoint::new(-1.0, 0.0), ComplexPoint::new(0.0, 1.0), ComplexPoint::new(0.0, -1.0)];
        for _ in 0..400 {
            let trial = dirs
                .iter()
                .map(|d| {
                    let c = Candidate { pole: best.pole + d * step, ..best.clone() };
                    let r = self.radius(&c, 1);
                    (c, r)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            if trial.1 > best_r * (1.0 + 1e-13) {
                best = trial.0;
                best_r = trial.1;
                step *= 2.0;
            } else {
                step *= 0.5;
                if step * best_r < 1e-9 {
                    break;
                }
            }
        }
        (best, best_r)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpperEstimate {
    /// `1/r` for the best verified disk, `+∞` if none was found.
    pub value: f64,
    pub radius: f64,
    pub family: Option<MapFamily>,
    pub candidates: usize,
    pub boundary_points: usize,
    pub interior_points: usize,
    pub recheck_factor: usize,
    /// Radius lost in the dense recheck.
    pub recheck_shrink: f64,
}

/// Upper bound `inf 1/r` over the sampled disk families.
pub fn kobayashi_upper<D: Domain + ?Sized>(domain: &D, z: &[ComplexPoint], v: &[ComplexPoint], spec: &FamilySpec, seed: u64) -> Result<UpperEstimate> {
    if z.len() != domain.dim() || v.len() != domain.dim() {
        return Err(Error::invalid("point and direction must match the domain dimension"));
    }
    if norm(v) == 0.0 {
        return Err(Error::invalid("direction must be nonzero"));
    }
    if !domain.contains(z) {
        return Err(Error::Geometry("base point is not in the domain".into()));
    }
    if spec.families.is_empty() || spec.boundary_points == 0 || spec.recheck_factor == 0 {
        return Err(Error::invalid("family spec needs families and positive densities"));
    }
    let search = Search { domain, z, v, spec };
    let mut fixed = Vec::new();
    let mut results: Vec<(Candidate, f64)> = Vec::new();
    for (fi, family) in spec.families.iter().enumerate() {
        match *family {
            MapFamily::Linear => fixed.push(Candidate { family: *family, higher: vec![], pole: ComplexPoint::new(0.0, 0.0) }),
            MapFamily::Polynomial { degree, scale } => {
                for t in 0..spec.trials {
                    let mut rng = seeds::stream(seed, ((fi as u64) << 32) | t as u64);
                    let higher = (2..=degree.max(2))
                        .map(|_| (0..z.len()).map(|_| seeds::complex_normal(&mut rng) * scale).collect())
                        .collect();
                    fixed.push(Candidate { family: *family, higher, pole: ComplexPoint::new(0.0, 0.0) });
                }
            }
            MapFamily::Mobius => results.push(search.compass()),
        }
    }
    let candidates = fixed.len() + results.len();
    results.par_extend(fixed.into_par_iter().map(|c| {
        let r = search.radius(&c, 1);
        (c, r)
    }));
    results.retain(|(_, r)| *r > 0.0);
    results.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut out = UpperEstimate {
        value: f64::INFINITY,
        radius: 0.0,
        family: None,
        candidates,
        boundary_points: spec.boundary_points,
        interior_points: spec.interior_points,
        recheck_factor: spec.recheck_factor,
        recheck_shrink: 0.0,
    };
    // a coarse radius may shrink under the dense check, so keep going until
    // no remaining candidate can win
    for (cand, r) in results {
        if r <= out.radius {
            break;
        }
        let dense = if search.admissible(&cand, r, spec.recheck_factor) {
            r
        } else {
            let dense_spec = FamilySpec { r_max: r, ..spec.clone() };
            Search { spec: &dense_spec, ..search }.radius(&cand, spec.recheck_factor)
        };
        if dense > out.radius {
            out.value = 1.0 / dense;
            out.radius = dense;
            out.family = Some(cand.family);
            out.recheck_shrink = r - dense;
        }
    }
    Ok(out)
}

/// Exact metric of the ball `B_R(center)`:
/// `k² = |v|²/(R² − |z|²) + |⟨z, v⟩|²/(R² − |z|²)²` with `z` centred.
pub fn ball_metric(ball: &Ball, z: &[ComplexPoint], v: &[ComplexPoint]) -> Result<f64> {
    if !ball.contains(z) {
        return Err(Error::Geometry("point is not in the ball".into()));
    }
    let zc: Vec<ComplexPoint> = z.iter().zip(&ball.center).map(|(a, b)| a - b).collect();
    let gap = ball.radius * ball.radius - zc.iter().map(|c| c.norm_sqr()).sum::<f64>();
    let inner: ComplexPoint = zc.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
    Ok((v.iter().map(|c| c.norm_sqr()).sum::<f64>() / gap + inner.norm_sqr() / (gap * gap)).sqrt())
}

/// `|v|/(2 Re ζ)`, the metric of `{Re ζ > 0}`.
pub fn half_plane_metric(zeta: ComplexPoint, v: ComplexPoint) -> Result<f64> {
    if !(zeta.re > 0.0) {
        return Err(Error::Geometry("point is not in the half-plane".into()));
    }
    Ok(v.norm() / (2.0 * zeta.re))
}

/// Lower bound on `Ω_Ψ` from the projection `(z, w, ζ) ↦ ζ` into the
/// half-plane (Ψ ≥ 0 makes the projection land there).
pub fn kobayashi_lower_projection(params: &DomainParams, point: &[ComplexPoint; 3], v: &[ComplexPoint; 3]) -> Result<f64> {
    if !potential::omega_contains(params, point[0], point[1], point[2]) {
        return Err(Error::Geometry("point is not in the domain".into()));
    }
    half_plane_metric(point[2], v[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerMethod {
    ExactBall,
    ContainingBall,
    HalfPlaneProjection,
    Trivial,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub point: Vec<ComplexPoint>,
    pub direction: Vec<ComplexPoint>,
    pub upper: f64,
    pub lower: f64,
    pub upper_method: Option<MapFamily>,
    pub lower_method: LowerMethod,
}

impl MetricEstimate {
    pub fn bracketed(&self) -> bool {
        self.lower >= 0.0 && (self.lower <= self.upper * (1.0 + 1e-9) || !self.upper.is_finite())
    }
}

/// Upper bound from [`kobayashi_upper`] and lower bound from a ball
/// containing the domain, if one is supplied.
pub fn estimate_metric<D: Domain + ?Sized>(
    domain: &D,
    z: &[ComplexPoint],
    v: &[ComplexPoint],
    spec: &FamilySpec,
    containing: Option<&Ball>,
    seed: u64,
) -> Result<MetricEstimate> {
    let upper = kobayashi_upper(domain, z, v, spec, seed)?;
    let (lower, lower_method) = match containing {
        Some(b) => (ball_metric(b, z, v)?, LowerMethod::ContainingBall),
        None => (0.0, LowerMethod::Trivial),
    };
    Ok(MetricEstimate { point: z.to_vec(), direction: v.to_vec(), upper: upper.value, lower, upper_method: upper.family, lower_method })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::ConvexProfile;
    use crate::wermer::EpsilonSchedule;

    fn c(x: f64, y: f64) -> ComplexPoint {
        ComplexPoint::new(x, y)
    }

    /// Metric of the half-plane through the Cayley map `ζ ↦ (ζ−1)/(ζ+1)`.
    fn cayley_oracle(zeta: ComplexPoint, v: ComplexPoint) -> f64 {
        let u = (zeta - 1.0) / (zeta + 1.0);
        let du = 2.0 / ((zeta + 1.0) * (zeta + 1.0));
        (du * v).norm() / (1.0 - u.norm_sqr())
    }

    #[test]
    fn identity_disk() {
        let spec = FamilySpec { families: vec![MapFamily::Linear], ..Default::default() };
        let est = kobayashi_upper(&Ball::unit_disk(), &[c(0.0, 0.0)], &[c(1.0, 0.0)], &spec, 1).unwrap();
        assert!((est.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ball_radius() {
        let spec = FamilySpec { families: vec![MapFamily::Linear, MapFamily::Polynomial { degree: 3, scale: 0.2 }], trials: 8, ..Default::default() };
        for r in [0.5, 2.0, 7.0] {
            let ball = Ball::origin(2, r).unwrap();
            let v = [c(0.6, 0.0), c(0.0, 0.8)];
            let est = kobayashi_upper(&ball, &[c(0.0, 0.0), c(0.0, 0.0)], &v, &spec, 2).unwrap();
            assert!((est.value - 1.0 / r).abs() < 1e-3);
            assert!((ball_metric(&ball, &[c(0.0, 0.0); 2], &v).unwrap() - 1.0 / r).abs() < 1e-15);
        }
    }

    #[test]
    fn schwarz_pick_bracket() {
        let spec = FamilySpec { families: vec![MapFamily::Mobius], ..Default::default() };
        for x in [0.0, 0.3, 0.6, 0.9] {
            let z = c(x * 0.6, x * 0.8);
            let exact = 1.0 / (1.0 - z.norm_sqr());
            let upper = kobayashi_upper(&Ball::unit_disk(), &[z], &[c(1.0, 0.0)], &spec, 3).unwrap().value;
            let lower = ball_metric(&Ball::unit_disk(), &[z], &[c(1.0, 0.0)]).unwrap();
            assert!((lower - exact).abs() < 1e-12);
            assert!((upper - exact).abs() < 1e-3, "|z| = {x}: {upper} vs {exact}");
            assert!(lower <= upper * (1.0 + 1e-9));
        }
    }

    #[test]
    fn inclusion_decreases_estimate() {
        let spec = FamilySpec { families: vec![MapFamily::Linear, MapFamily::Polynomial { degree: 2, scale: 0.3 }], trials: 6, ..Default::default() };
        let z = [c(0.0, 0.0), c(0.0, 0.0)];
        let v = [c(1.0, 0.0), c(0.0, 0.0)];
        let small = kobayashi_upper(&Ball::origin(2, 1.0).unwrap(), &z, &v, &spec, 4).unwrap().value;
        let big = kobayashi_upper(&Ball::origin(2, 3.0).unwrap(), &z, &v, &spec, 4).unwrap().value;
        assert!(big <= small + 1e-9);
    }

    #[test]
    fn omega_eps_grows_near_the_hole() {
        let dom = OmegaEps { eps: 0.5 };
        let spec = FamilySpec { families: vec![MapFamily::Linear, MapFamily::Mobius], ..Default::default() };
        let mut prev = 0.0;
        for t in [1.0, 0.5, 0.1, 0.02] {
            let est = kobayashi_upper(&dom, &[c(0.5 + t, 0.0), c(0.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)], &spec, 5).unwrap();
            assert!(est.value.is_finite());
            assert!(est.value > prev);
            prev = est.value;
        }
    }

    #[test]
    fn projection_lower_bound() {
        let params = DomainParams::new(EpsilonSchedule::level_one(0.5).unwrap(), ConvexProfile::constant(0.0).unwrap());
        let p = [c(3.0, 0.0), c(3f64.sqrt(), 0.0), c(1.0, 0.0)];
        let lower = kobayashi_lower_projection(&params, &p, &[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(lower, 0.5);
        assert!((lower - cayley_oracle(c(1.0, 0.0), c(1.0, 0.0))).abs() < 1e-15);
        assert_eq!(kobayashi_lower_projection(&params, &p, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap(), 0.0);
        for (zeta, v) in [(c(2.0, 1.0), c(0.3, -1.0)), (c(0.1, -4.0), c(1.0, 1.0))] {
            assert!((half_plane_metric(zeta, v).unwrap() - cayley_oracle(zeta, v)).abs() < 1e-12);
        }
    }

    #[test]
    fn half_plane_upper_matches_exact() {
        let spec = FamilySpec { families: vec![MapFamily::Mobius], ..Default::default() };
        let est = kobayashi_upper(&HalfPlane, &[c(1.0, 0.0)], &[c(1.0, 0.0)], &spec, 6).unwrap();
        assert!((est.value - 0.5).abs() < 1e-3, "{}", est.value);
    }

    #[test]
    fn rejects_bad_input() {
        let spec = FamilySpec::default();
        assert!(kobayashi_upper(&Ball::unit_disk(), &[c(0.0, 0.0)], &[c(0.0, 0.0)], &spec, 1).is_err());
        assert!(kobayashi_upper(&Ball::unit_disk(), &[c(2.0, 0.0)], &[c(1.0, 0.0)], &spec, 1).is_err());
    }
}
