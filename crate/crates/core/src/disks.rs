//! Holomorphic disks: the family `H_n` of graphs over `Δ_1(w₀)`, the
//! diameters `β^δ`, the calibration δ(n), Harnack localisation in `Ω_Ψ` and a
//! randomized search for large disks inside `F_d`.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lattice;
use crate::potential::{self, DomainParams, SublevelRegion};
use crate::seeds;
use crate::wermer::{BranchTerms, ContinuationPath, EpsilonSchedule};
use crate::{ComplexPoint, Error, Result};

pub const MAX_DEGREE: usize = 8;
/// Tolerance for a base point to count as lying on `E_m` over `T_n`.
pub const BASE_TOLERANCE: f64 = 1e-6;

/// `λ ↦ (Σ_j c_{k,j} (λ − center)^j)_k` on `Δ_radius(center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoloDisk {
    pub center: ComplexPoint,
    pub radius: f64,
    pub coefficients: Vec<Vec<ComplexPoint>>,
}

impl HoloDisk {
    pub fn new(center: ComplexPoint, radius: f64, coefficients: Vec<Vec<ComplexPoint>>) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("disk radius must be positive"));
        }
        if coefficients.is_empty() || coefficients.len() > 3 {
            return Err(Error::invalid("target dimension must be 1, 2 or 3"));
        }
        if coefficients.iter().any(|c| c.is_empty() || c.len() > MAX_DEGREE + 1) {
            return Err(Error::invalid(format!("each coordinate needs 1..={} coefficients", MAX_DEGREE + 1)));
        }
        if coefficients.iter().flatten().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        Ok(Self { center, radius, coefficients })
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn degree(&self) -> usize {
        self.coefficients.iter().map(|c| c.len() - 1).max().unwrap_or(0)
    }

    pub fn coord(&self, k: usize, lambda: ComplexPoint) -> ComplexPoint {
        let u = lambda - self.center;
        self.coefficients[k].iter().rev().fold(ComplexPoint::new(0.0, 0.0), |acc, c| acc * u + c)
    }

    pub fn derivative(&self, k: usize, lambda: ComplexPoint) -> ComplexPoint {
        let u = lambda - self.center;
        let c = &self.coefficients[k];
        (1..c.len()).rev().fold(ComplexPoint::new(0.0, 0.0), |acc, j| acc * u + c[j] * j as f64)
    }

    pub fn eval(&self, lambda: ComplexPoint) -> Vec<ComplexPoint> {
        (0..self.dim()).map(|k| self.coord(k, lambda)).collect()
    }

    /// Center plus `rings` circles of `per_ring` points; the last ring is the
    /// boundary circle of radius `fraction · radius`.
    pub fn grid(&self, fraction: f64, rings: usize, per_ring: usize) -> Vec<ComplexPoint> {
        let mut pts = vec![self.center];
        for i in 1..=rings {
            let r = self.radius * fraction * i as f64 / rings as f64;
            let count = per_ring.max(1);
            for j in 0..count {
                let t = 2.0 * std::f64::consts::PI * (j as f64 + 0.5 * (i % 2) as f64) / count as f64;
                pts.push(self.center + ComplexPoint::from_polar(r, t));
            }
        }
        pts
    }
}

/// Graph disk `w ↦ f(w)` over `Δ_1(w₀)` with `f(w₀) = z₀`.
fn graph_base(disk: &HoloDisk) -> ComplexPoint {
    disk.coord(0, disk.center)
}

/// Membership in `H_n`: the base point lies on `E_m` over `T_n` (within
/// [`BASE_TOLERANCE`]) and `|f'| < 1` on a grid of the closed unit disk.
pub fn hn_member(schedule: &EpsilonSchedule, disk: &HoloDisk, n: usize) -> bool {
    if disk.dim() != 1 || disk.radius != 1.0 {
        return false;
    }
    let z0 = graph_base(disk);
    if lattice::dist_to_t_frame(n, z0) > BASE_TOLERANCE {
        return false;
    }
    if BranchTerms::at(schedule, z0).nearest_distance(disk.center) > BASE_TOLERANCE {
        return false;
    }
    disk.grid(1.0, 4, 64).iter().all(|w| disk.derivative(0, *w).norm() < 1.0)
}

/// Random member of `H_n`: base point uniform on `T_n`, random branch, and
/// `f(w) = z₀ + Σ_k c_k (w − w₀)^k` with `Σ k|c_k| < 0.95`. A share
/// `vertical_share` of the disks is vertical (`f` constant).
pub fn sample_hn_disk(schedule: &EpsilonSchedule, n: usize, rng: &mut ChaCha8Rng, vertical_share: f64, max_degree: usize) -> HoloDisk {
    let z0 = lattice::t_frame_point(n, rng.random::<f64>());
    let mask = rng.random::<u64>() & ((1u64 << schedule.m()) - 1);
    let w0 = BranchTerms::at(schedule, z0).value(mask);
    let mut coeffs = vec![z0];
    if rng.random::<f64>() >= vertical_share {
        let degree = rng.random_range(1..=max_degree.max(1));
        let raw: Vec<ComplexPoint> = (1..=degree).map(|_| seeds::complex_normal(rng)).collect();
        let weight: f64 = raw.iter().enumerate().map(|(i, c)| (i + 1) as f64 * c.norm()).sum();
        let budget = 0.95 * rng.random::<f64>();
        let scale = if weight > 0.0 { budget / weight } else { 0.0 };
        coeffs.extend(raw.iter().map(|c| c * scale));
    }
    HoloDisk { center: w0, radius: 1.0, coefficients: vec![coeffs] }
}

/// `β^δ` with 4- and 8-connected components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaValue {
    pub four: f64,
    pub eight: f64,
}

/// Raster of `Δ_{1/4}(w₀)` carrying the distance from `(f(w), w)` to the
/// nearest branch, so that `β^δ` can be read off for any δ.
#[derive(Debug, Clone)]
pub struct BetaRaster {
    cells: usize,
    h: f64,
    dist: Vec<f64>,
}

impl BetaRaster {
    /// `cells` cells across the diameter 1/2.
    pub fn new(schedule: &EpsilonSchedule, disk: &HoloDisk, cells: usize) -> Self {
        let h = 0.5 / cells as f64;
        let mut dist = vec![f64::INFINITY; cells * cells];
        for i in 0..cells {
            for j in 0..cells {
                let off = ComplexPoint::new(-0.25 + (i as f64 + 0.5) * h, -0.25 + (j as f64 + 0.5) * h);
                if off.norm() > 0.25 {
                    continue;
                }
                let w = disk.center + off;
                let z = disk.coord(0, w);
                dist[i * cells + j] = BranchTerms::at(schedule, z).nearest_distance(w);
            }
        }
        Self { cells, h, dist }
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Finite distances of all raster cells.
    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.dist.iter().copied().filter(|d| d.is_finite())
    }

    /// Marks cells with distance `< delta`.
    pub fn beta(&self, delta: f64) -> BetaValue {
        self.beta_marked(|d| d < delta)
    }

    /// Marks cells with distance `<= level`.
    pub fn beta_closed(&self, level: f64) -> BetaValue {
        self.beta_marked(|d| d <= level)
    }

    fn beta_marked(&self, mark: impl Fn(f64) -> bool) -> BetaValue {
        let marked: Vec<bool> = self.dist.iter().map(|d| d.is_finite() && mark(*d)).collect();
        BetaValue {
            four: self.max_component_diameter(&marked, false),
            eight: self.max_component_diameter(&marked, true),
        }
    }

    fn max_component_diameter(&self, marked: &[bool], diagonal: bool) -> f64 {
        let n = self.cells as i64;
        let mut seen = vec![false; marked.len()];
        let mut best: f64 = 0.0;
        let steps: &[(i64, i64)] = if diagonal {
            &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]
        } else {
            &[(1, 0), (-1, 0), (0, 1), (0, -1)]
        };
        for start in 0..marked.len() {
            if !marked[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            let mut members = Vec::new();
            while let Some(c) = queue.pop_front() {
                let (i, j) = ((c / self.cells) as i64, (c % self.cells) as i64);
                members.push((i, j));
                for (di, dj) in steps {
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= n || b >= n {
                        continue;
                    }
                    let k = (a * n + b) as usize;
                    if marked[k] && !seen[k] {
                        seen[k] = true;
                        queue.push_back(k);
                    }
                }
            }
            best = best.max(self.closed_diameter(&members));
            if best >= 0.5 {
                return 0.5;
            }
        }
        best
    }

    /// Diameter of the union of closed cells, capped at the diameter of the
    /// quarter disk.
    fn closed_diameter(&self, cells: &[(i64, i64)]) -> f64 {
        let hull = convex_hull(cells);
        let mut d2 = 0i64;
        for (a, p) in hull.iter().enumerate() {
            for q in &hull[a + 1..] {
                let (dx, dy) = (p.0 - q.0, p.1 - q.1);
                d2 = d2.max(dx * dx + dy * dy);
            }
        }
        ((d2 as f64).sqrt() * self.h + self.h * std::f64::consts::SQRT_2).min(0.5)
    }
}

fn convex_hull(points: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], *p) <= 0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], *p) <= 0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// `β^δ(D)` on a raster with `cells` cells across `Δ_{1/4}(w₀)`.
pub fn beta_disk(schedule: &EpsilonSchedule, disk: &HoloDisk, delta: f64, cells: usize) -> Result<BetaValue> {
    if !(delta > 0.0) || cells == 0 {
        return Err(Error::invalid("beta needs delta > 0 and a positive raster size"));
    }
    Ok(BetaRaster::new(schedule, disk, cells).beta(delta))
}

/// Sampled `H_n` disks and their rasters.
#[derive(Debug, Clone)]
pub struct HnSample {
    pub n: usize,
    pub disks: Vec<HoloDisk>,
    pub rasters: Vec<BetaRaster>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HnSampling {
    pub count: usize,
    pub cells: usize,
    pub vertical_share: f64,
    pub max_degree: usize,
}

impl Default for HnSampling {
    fn default() -> Self {
        Self { count: 50, cells: 64, vertical_share: 0.2, max_degree: 3 }
    }
}

impl HnSample {
    pub fn draw(schedule: &EpsilonSchedule, n: usize, spec: HnSampling, seed: u64) -> Result<Self> {
        if n == 0 || spec.count == 0 || spec.cells == 0 {
            return Err(Error::EmptyFamily { n });
        }
        let disks: Vec<HoloDisk> = (0..spec.count)
            .map(|i| {
                let mut rng = seeds::stream(seed, ((n as u64) << 32) | i as u64);
                sample_hn_disk(schedule, n, &mut rng, spec.vertical_share, spec.max_degree)
            })
            .collect();
        if !disks.iter().all(|d| hn_member(schedule, d, n)) {
            return Err(Error::EmptyFamily { n });
        }
        let rasters = disks.par_iter().map(|d| BetaRaster::new(schedule, d, spec.cells)).collect();
        Ok(Self { n, disks, rasters })
    }

    /// Sampled `β_n^δ` (a lower bound for the supremum over `H_n`).
    pub fn beta(&self, delta: f64) -> BetaValue {
        self.rasters.iter().map(|r| r.beta(delta)).fold(BetaValue { four: 0.0, eight: 0.0 }, |a, b| BetaValue {
            four: a.four.max(b.four),
            eight: a.eight.max(b.eight),
        })
    }

    fn beta_closed(&self, level: f64) -> f64 {
        self.rasters.iter().map(|r| r.beta_closed(level).four).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaNEstimate {
    pub n: usize,
    pub delta: f64,
    pub beta: f64,
    pub beta8: f64,
    pub disks_sampled: usize,
}

pub fn beta_n(schedule: &EpsilonSchedule, n: usize, delta: f64, spec: HnSampling, seed: u64) -> Result<BetaNEstimate> {
    let sample = HnSample::draw(schedule, n, spec, seed)?;
    let b = sample.beta(delta);
    Ok(BetaNEstimate { n, delta, beta: b.four, beta8: b.eight, disks_sampled: spec.count })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaCalibration {
    pub n: usize,
    /// `sup{δ : β_k^δ < 1/2 for n−1 ≤ k ≤ n+2}` on the sampled rasters.
    pub delta_sup: f64,
    pub safety: f64,
    /// `safety · delta_sup`.
    pub delta: f64,
    /// `(k, β_k^δ)` at the returned δ.
    pub betas: Vec<(usize, f64)>,
    pub disks_per_k: usize,
}

/// δ(n) from the sampled families `H_k`, `max(n−1, 1) ≤ k ≤ n+2`.
///
/// β is piecewise constant in δ and only jumps at raster distances, so the
/// search bisects over the sorted distances.
pub fn delta_n(schedule: &EpsilonSchedule, n: usize, spec: HnSampling, safety: f64, seed: u64) -> Result<DeltaCalibration> {
    let samples: Vec<HnSample> = delta_window(n).map(|k| HnSample::draw(schedule, k, spec, seed)).collect::<Result<_>>()?;
    let refs: Vec<&HnSample> = samples.iter().collect();
    delta_from_samples(n, &refs, safety)
}

/// The `k` range `max(n−1, 1) ..= n+2` entering δ(n).
pub fn delta_window(n: usize) -> std::ops::RangeInclusive<usize> {
    n.saturating_sub(1).max(1)..=n + 2
}

/// [`delta_n`] on already drawn samples (one per `k` of [`delta_window`]).
pub fn delta_from_samples(n: usize, samples: &[&HnSample], safety: f64) -> Result<DeltaCalibration> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::invalid("delta safety must lie in (0, 1]"));
    }
    if samples.is_empty() {
        return Err(Error::EmptyFamily { n });
    }
    let mut levels: Vec<f64> = samples.iter().flat_map(|s| s.rasters.iter().flat_map(|r| r.distances())).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.is_empty() {
        return Err(Error::EmptyFamily { n });
    }
    let saturated = |i: usize| samples.iter().any(|s| s.beta_closed(levels[i]) >= 0.5);
    let last = levels.len() - 1;
    if !saturated(last) {
        return Err(Error::Component(format!("beta never reaches 1/2 for n = {n}")));
    }
    // first index whose closed level saturates
    let (mut lo, mut hi) = (0usize, last);
    if saturated(0) {
        hi = 0;
    }
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if saturated(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let delta_sup = levels[hi];
    if !(delta_sup > 0.0) {
        return Err(Error::Component(format!("delta({n}) collapsed to 0")));
    }
    let delta = safety * delta_sup;
    let betas = samples.iter().map(|s| (s.n, s.beta(delta).four)).collect();
    Ok(DeltaCalibration { n, delta_sup, safety, delta, betas, disks_per_k: samples[0].disks.len() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnackReport {
    pub radius: f64,
    pub grid_points: usize,
    pub re_zeta0: f64,
    /// `max Ψ(z, w) / (2 Re ζ(0))` over the grid of `Δ_{r/3}`.
    pub max_psi_ratio: f64,
    /// `max Re ζ / (2 Re ζ(0))` over the same grid.
    pub max_re_ratio: f64,
    pub violations: usize,
    pub witness: Option<ComplexPoint>,
}

impl HarnackReport {
    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `Ψ ∘ π_{z,w} ∘ f < 2 Re ζ(0)` on `Δ_{r/3}` for a disk
/// `λ ↦ (z, w, ζ)` over `Δ_r(0)` that maps into `Ω_Ψ`.
pub fn harnack_localize(params: &DomainParams, disk: &HoloDisk) -> Result<HarnackReport> {
    if disk.dim() != 3 {
        return Err(Error::invalid("Harnack localisation needs a disk into C^3"));
    }
    for lam in disk.grid(1.0, 4, 64) {
        let p = disk.eval(lam);
        if !potential::omega_contains(params, p[0], p[1], p[2]) {
            return Err(Error::Geometry(format!("disk leaves the domain at lambda = {lam}")));
        }
    }
    let re0 = disk.coord(2, disk.center).re;
    let grid = disk.grid(1.0 / 3.0, 16, 64);
    let mut report = HarnackReport {
        radius: disk.radius,
        grid_points: grid.len(),
        re_zeta0: re0,
        max_psi_ratio: 0.0,
        max_re_ratio: 0.0,
        violations: 0,
        witness: None,
    };
    for lam in grid {
        let p = disk.eval(lam);
        let psi = potential::psi(params, p[0], p[1]);
        let bound = 2.0 * re0;
        report.max_psi_ratio = report.max_psi_ratio.max(psi / bound);
        report.max_re_ratio = report.max_re_ratio.max(p[2].re / bound);
        if !(psi < bound) || p[2].re > bound * (1.0 + 1e-9) {
            report.violations += 1;
            report.witness.get_or_insert(lam);
        }
    }
    Ok(report)
}

/// Random cubic disk `Δ_r(0) → Ω_Ψ`: cubic `z`, `w` around a point of
/// `E_m`, and a cubic `ζ` drawn until `Re ζ > Ψ` on the admissibility grid.
/// `Re ζ(0)` exceeds `Σ|b_k| r^k`, so `Re ζ > 0` on the closed disk.
pub fn random_disk_into_omega(params: &DomainParams, radius: f64, rng: &mut ChaCha8Rng) -> Result<HoloDisk> {
    for _ in 0..1000 {
        let z0 = ComplexPoint::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let mask = rng.random::<u64>() & ((1u64 << params.m()) - 1);
        let w0 = BranchTerms::at(&params.schedule, z0).value(mask) + seeds::complex_normal(rng) * 0.05;
        let poly = |rng: &mut ChaCha8Rng, c0: ComplexPoint, scale: f64| -> Vec<ComplexPoint> {
            let mut c = vec![c0];
            c.extend((1..=3).map(|k| seeds::complex_normal(rng) * (scale / radius.powi(k))));
            c
        };
        let zc = poly(rng, z0, 0.3);
        let wc = poly(rng, w0, 0.3);
        let base = HoloDisk::new(ComplexPoint::new(0.0, 0.0), radius, vec![zc.clone(), wc.clone()])?;
        let grid = base.grid(1.0, 4, 64);
        let psis: Vec<f64> = grid
            .iter()
            .map(|l| {
                let p = base.eval(*l);
                potential::psi(params, p[0], p[1])
            })
            .collect();
        let top = psis.iter().copied().fold(0.0, f64::max);
        if !top.is_finite() {
            continue;
        }
        let mut zc3 = poly(rng, ComplexPoint::new(0.0, 0.0), 0.3 * (top + 1.0));
        let spread: f64 = zc3.iter().enumerate().skip(1).map(|(k, b)| b.norm() * radius.powi(k as i32)).sum();
        zc3[0] = ComplexPoint::new(spread + top * rng.random_range(0.5..2.0) + 1e-12, rng.random_range(-1.0..1.0));
        let disk = HoloDisk::new(ComplexPoint::new(0.0, 0.0), radius, vec![zc, wc, zc3])?;
        let inside = grid.iter().zip(&psis).all(|(l, psi)| disk.coord(2, *l).re > *psi);
        if inside {
            return Ok(disk);
        }
    }
    Err(Error::Component("no disk into the domain after 1000 draws".into()))
}

/// Disk shapes for [`disk_exclusion_search`]; all have `‖h'(0)‖ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiskFamily {
    /// Random polynomial map of the given degree through a point of `E_m`.
    Polynomial { degree: usize },
    /// Cubic Taylor expansion of a branch `w = f_s(z)`.
    BranchTaylor,
    /// `λ ↦ (z₀, w₀ + λ)`.
    Vertical,
    /// Exact graph `λ ↦ (z₀ + uλ, f_s(z₀ + uλ))` of a branch of `E_m`.
    BranchGraph,
}

/// Graph of a branch of `E_m` over `Δ_{radius·|u|}(z₀)`, continued from `z₀`.
/// Holomorphic while the `z`-disk avoids the branch points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDisk {
    pub z0: ComplexPoint,
    pub u: ComplexPoint,
    /// Determinations of `√(z₀ − a_j)` carried by the branch.
    pub roots: Vec<ComplexPoint>,
    pub radius: f64,
}

impl GraphDisk {
    /// Largest `λ`-radius whose `z`-disk contains no branch point.
    pub fn reach(&self, schedule: &EpsilonSchedule) -> f64 {
        schedule.points().iter().map(|a| (self.z0 - a).norm()).fold(f64::INFINITY, f64::min) / self.u.norm()
    }

    /// `(z, w)` at `λ`, with `w` taken from the principal-root branch values so
    /// that it lies on `E_m` exactly; `None` beyond [`GraphDisk::reach`].
    pub fn eval(&self, schedule: &EpsilonSchedule, lambda: ComplexPoint) -> Option<[ComplexPoint; 2]> {
        let z = self.z0 + self.u * lambda;
        let mut mask = 0u64;
        for (j, (a, r0)) in schedule.points().iter().zip(&self.roots).enumerate() {
            let base = self.z0 - a;
            if (z - self.z0).norm() >= base.norm() {
                return None;
            }
            // the ratio stays in Re > 0 inside the reach, so its principal root continues
            let continued = r0 * ((z - a) / base).sqrt();
            let principal = (z - a).sqrt();
            if (continued - principal).norm_sqr() > (continued + principal).norm_sqr() {
                mask |= 1 << j;
            }
        }
        Some([z, BranchTerms::at(schedule, z).value(mask)])
    }
}

/// A trial map of the exclusion search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchDisk {
    Polynomial(HoloDisk),
    Graph(GraphDisk),
}

impl SearchDisk {
    pub fn radius(&self) -> f64 {
        match self {
            SearchDisk::Polynomial(d) => d.radius,
            SearchDisk::Graph(g) => g.radius,
        }
    }

    fn with_radius(&self, radius: f64) -> Self {
        match self {
            SearchDisk::Polynomial(d) => SearchDisk::Polynomial(HoloDisk { radius, ..d.clone() }),
            SearchDisk::Graph(g) => SearchDisk::Graph(GraphDisk { radius, ..g.clone() }),
        }
    }

    fn z_at(&self, lambda: ComplexPoint) -> ComplexPoint {
        match self {
            SearchDisk::Polynomial(d) => d.coord(0, lambda),
            SearchDisk::Graph(g) => g.z0 + g.u * lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSpec {
    pub families: Vec<DiskFamily>,
    pub trials: usize,
    pub ladder: Vec<f64>,
    pub rings: usize,
    pub per_ring: usize,
    /// Base points are drawn with sup-norm at most this.
    pub base_extent: f64,
}

impl Default for ExclusionSpec {
    fn default() -> Self {
        Self {
            families: vec![DiskFamily::Polynomial { degree: 3 }, DiskFamily::BranchTaylor, DiskFamily::Vertical, DiskFamily::BranchGraph],
            trials: 64,
            ladder: radius_ladder(1e-6, 8.0, 2f64.sqrt()),
            rings: 4,
            per_ring: 64,
            base_extent: 4.0,
        }
    }
}

/// Geometric ladder `lo, lo·ratio, …` up to `hi`.
pub fn radius_ladder(lo: f64, hi: f64, ratio: f64) -> Vec<f64> {
    let mut out = vec![lo];
    while *out.last().unwrap() * ratio <= hi * (1.0 + 1e-12) {
        let next = out.last().unwrap() * ratio;
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    /// Image left `E^{κ(n)}`.
    pub tube_escape: usize,
    /// Image left the region `S̃_n` of the base point.
    pub frame_exit: usize,
    /// Boundary loop winds an odd number of times around a branch point.
    pub shift_obstruction: usize,
    /// Inside the tube but `Ψ ≥ 2d`.
    pub sublevel: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub d: f64,
    pub found: bool,
    /// Largest admissible ladder radius (0 when only the centre passes).
    pub best_radius: f64,
    pub best_disk: Option<SearchDisk>,
    pub best_family: Option<DiskFamily>,
    pub trials: usize,
    /// Every reported disk passed the dense recheck.
    pub recheck_passed: bool,
    pub failures: FailureCounts,
}

struct TrialOutcome {
    radius: f64,
    disk: Option<SearchDisk>,
    family: DiskFamily,
    failure: Option<Failure>,
}

#[derive(Clone, Copy)]
enum Failure {
    Tube,
    Frame,
    Shift,
    Sublevel,
}

fn unit_disk_through(params: &DomainParams, family: DiskFamily, rng: &mut ChaCha8Rng, extent: f64) -> SearchDisk {
    let z0 = loop {
        let z = ComplexPoint::new(rng.random_range(-extent..extent), rng.random_range(-extent..extent));
        if !params.schedule.points().iter().any(|a| (z - a).norm() < 1e-3) {
            break z;
        }
    };
    let mask = rng.random::<u64>() & ((1u64 << params.m()) - 1);
    let bt = BranchTerms::at(&params.schedule, z0);
    let w0 = bt.value(mask);
    let zero = ComplexPoint::new(0.0, 0.0);
    // signed √(z₀ − a_j) of the chosen branch
    let roots: Vec<ComplexPoint> = bt
        .terms()
        .iter()
        .zip(params.schedule.eps_all())
        .enumerate()
        .map(|(j, (t, e))| if mask >> j & 1 == 1 { -t / *e } else { t / *e })
        .collect();
    let eps = params.schedule.eps_all();
    let d1: ComplexPoint = roots.iter().zip(eps).map(|(r, e)| *e / (2.0 * r)).sum();
    let polynomial = |coefficients| SearchDisk::Polynomial(HoloDisk { center: zero, radius: 0.0, coefficients });
    match family {
        DiskFamily::Vertical => polynomial(vec![vec![z0], vec![w0, ComplexPoint::new(1.0, 0.0)]]),
        DiskFamily::BranchTaylor => {
            // derivatives of Σ ε_j r_j with r_j² = z − a_j
            let d2: ComplexPoint = roots.iter().zip(eps).map(|(r, e)| -*e / (4.0 * r.powi(3))).sum();
            let d3: ComplexPoint = roots.iter().zip(eps).map(|(r, e)| 3.0 * *e / (8.0 * r.powi(5))).sum();
            let phase = ComplexPoint::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
            let u = phase / (1.0 + d1.norm_sqr()).sqrt();
            polynomial(vec![vec![z0, u], vec![w0, d1 * u, d2 * u * u / 2.0, d3 * u * u * u / 6.0]])
        }
        DiskFamily::BranchGraph => {
            let phase = ComplexPoint::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
            let u = phase / (1.0 + d1.norm_sqr()).sqrt();
            SearchDisk::Graph(GraphDisk { z0, u, roots, radius: 0.0 })
        }
        DiskFamily::Polynomial { degree } => {
            let a = seeds::complex_normal(rng);
            let b = seeds::complex_normal(rng);
            let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let mut zc = vec![z0, a / norm];
            let mut wc = vec![w0, b / norm];
            for _ in 2..=degree.clamp(1, MAX_DEGREE) {
                zc.push(seeds::complex_normal(rng) * 0.1);
                wc.push(seeds::complex_normal(rng) * 0.1);
            }
            polynomial(vec![zc, wc])
        }
    }
}

fn region_index(z: ComplexPoint) -> usize {
    (z.re.abs().max(z.im.abs()).floor() as usize).max(1)
}

fn classify_failure(params: &DomainParams, disk: &SearchDisk, radius: f64, at: Option<[ComplexPoint; 2]>) -> Failure {
    let Some([z, w]) = at else {
        return Failure::Shift;
    };
    let z0 = disk.z_at(ComplexPoint::new(0.0, 0.0));
    let n0 = region_index(z0);
    let kappa = potential::kappa_region_floored(&params.schedule, region_index(z)).unwrap_or(0.0);
    if BranchTerms::at(&params.schedule, z).nearest_distance(w) >= kappa {
        return Failure::Tube;
    }
    if !potential::in_s_tilde(n0, z) {
        return Failure::Frame;
    }
    let boundary: Vec<ComplexPoint> = (0..=64)
        .map(|j| disk.z_at(ComplexPoint::from_polar(radius, std::f64::consts::TAU * (j % 64) as f64 / 64.0)))
        .collect();
    if let Ok(path) = ContinuationPath::new(boundary, f64::INFINITY) {
        let odd = params
            .schedule
            .points()
            .iter()
            .any(|a| crate::wermer::winding_number(&path, *a) % 2 != 0);
        if odd {
            return Failure::Shift;
        }
    }
    Failure::Sublevel
}

/// First grid point of `Δ_radius` whose image is not in `F_d`; `Some(None)`
/// when the map stops being holomorphic there.
fn first_escape(
    params: &DomainParams,
    region: SublevelRegion,
    disk: &SearchDisk,
    radius: f64,
    rings: usize,
    per_ring: usize,
) -> Option<Option<[ComplexPoint; 2]>> {
    let zero = ComplexPoint::new(0.0, 0.0);
    let lattice = HoloDisk { center: zero, radius, coefficients: vec![vec![zero]] };
    // boundary first: escapes show up there
    let mut grid = lattice.grid(1.0, rings, per_ring);
    grid.reverse();
    match disk {
        SearchDisk::Polynomial(d) => grid
            .into_iter()
            .map(|l| [d.coord(0, l), d.coord(1, l)])
            .find(|p| !potential::f_d_contains(params, region, p[0], p[1]))
            .map(Some),
        SearchDisk::Graph(g) => {
            if radius >= g.reach(&params.schedule) {
                return Some(None);
            }
            grid.into_iter()
                .map(|l| g.eval(&params.schedule, l))
                .find(|p| p.is_none_or(|p| !potential::f_d_contains(params, region, p[0], p[1])))
        }
    }
}

/// Randomized search for disks `‖h'(0)‖ = 1` whose image grid lies in `F_d`.
/// Per disk the admissible radius is the largest rung of a fixed ladder
/// passing together with all smaller rungs; it is then confirmed at 4×
/// grid density, stepping down on failure. Using the same trial streams for
/// every `d` makes the result monotone in `d`.
pub fn disk_exclusion_search(params: &DomainParams, d: f64, spec: &ExclusionSpec, seed: u64) -> Result<ExclusionReport> {
    let region = SublevelRegion::new(d)?;
    if spec.families.is_empty() || spec.trials == 0 || spec.ladder.is_empty() {
        return Err(Error::invalid("exclusion search needs families, trials and a ladder"));
    }
    let outcomes: Vec<TrialOutcome> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::stream(seed, t as u64);
            let family = spec.families[t % spec.families.len()];
            let disk = unit_disk_through(params, family, &mut rng, spec.base_extent);
            let mut passed = None;
            let mut failure = None;
            for (i, r) in spec.ladder.iter().enumerate() {
                match first_escape(params, region, &disk, *r, spec.rings, spec.per_ring) {
                    None => passed = Some(i),
                    Some(at) => {
                        failure = Some(classify_failure(params, &disk, *r, at));
                        break;
                    }
                }
            }
            while let Some(i) = passed {
                let r = spec.ladder[i];
                if first_escape(params, region, &disk, r, 4 * spec.rings, 4 * spec.per_ring).is_none() {
                    break;
                }
                passed = i.checked_sub(1);
            }
            let radius = passed.map_or(0.0, |i| spec.ladder[i]);
            TrialOutcome {
                radius,
                disk: passed.map(|i| disk.with_radius(spec.ladder[i])),
                family,
                failure,
            }
        })
        .collect();
    let mut failures = FailureCounts::default();
    for o in &outcomes {
        match o.failure {
            Some(Failure::Tube) => failures.tube_escape += 1,
            Some(Failure::Frame) => failures.frame_exit += 1,
            Some(Failure::Shift) => failures.shift_obstruction += 1,
            Some(Failure::Sublevel) => failures.sublevel += 1,
            None => {}
        }
    }
    let best = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.radius > 0.0)
        .max_by(|a, b| a.1.radius.total_cmp(&b.1.radius).then(b.0.cmp(&a.0)));
    let recheck_passed = outcomes
        .iter()
        .filter_map(|o| o.disk.as_ref())
        .all(|disk| first_escape(params, region, disk, disk.radius(), 4 * spec.rings, 4 * spec.per_ring).is_none());
    Ok(ExclusionReport {
        d,
        found: best.is_some(),
        best_radius: best.map_or(0.0, |b| b.1.radius),
        best_disk: best.and_then(|b| b.1.disk.clone()),
        best_family: best.map(|b| b.1.family),
        trials: spec.trials,
        recheck_passed,
        failures,
    })
}
