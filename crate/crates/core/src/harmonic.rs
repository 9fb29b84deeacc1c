//! Harmonic measure by walk-on-spheres, the slit-disk distance bound,
//! antipeak candidate checks and the mean-value certificate.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use crate::disks::HoloDisk;
use crate::kobayashi::{norm, Domain, OmegaPsi};
use crate::seeds;
use crate::wermer::BranchTerms;
use crate::{ComplexPoint, Error, Result};

pub const SHELL_FRACTION: f64 = 1e-4;
pub const STEP_CAP: usize = 1_000_000;

/// `Δ_k(0)` minus straight slits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlitDisk {
    pub radius: f64,
    pub slits: Vec<(ComplexPoint, ComplexPoint)>,
}

/// Part of the boundary whose harmonic measure is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTarget {
    /// The whole outer circle.
    Circle,
    /// Arc of the outer circle from angle `start`, counterclockwise, of the
    /// given angular length.
    Arc { start: f64, length: f64 },
    Slits,
}

fn segment_distance(p: ComplexPoint, a: ComplexPoint, b: ComplexPoint) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_sqr();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = (((p - a) * ab.conj()).re / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn segments_meet(a: (ComplexPoint, ComplexPoint), b: (ComplexPoint, ComplexPoint)) -> bool {
    let tol = 1e-12;
    segment_distance(a.0, b.0, b.1) < tol
        || segment_distance(a.1, b.0, b.1) < tol
        || segment_distance(b.0, a.0, a.1) < tol
        || segment_distance(b.1, a.0, a.1) < tol
        || {
            let cross = |o: ComplexPoint, p: ComplexPoint, q: ComplexPoint| ((p - o).conj() * (q - o)).im;
            let d1 = cross(a.0, a.1, b.0);
            let d2 = cross(a.0, a.1, b.1);
            let d3 = cross(b.0, b.1, a.0);
            let d4 = cross(b.0, b.1, a.1);
            d1 * d2 < 0.0 && d3 * d4 < 0.0
        }
}

impl SlitDisk {
    pub fn new(radius: f64, slits: Vec<(ComplexPoint, ComplexPoint)>) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Geometry("disk radius must be positive".into()));
        }
        for (a, b) in &slits {
            if a.norm() > radius * (1.0 + 1e-12) || b.norm() > radius * (1.0 + 1e-12) {
                return Err(Error::Geometry("slit leaves the closed disk".into()));
            }
        }
        Ok(Self { radius, slits })
    }

    /// Checks that the slit union avoids 0 and that each of its connected
    /// pieces reaches the outer circle, so the complement is simply
    /// connected and contains 0.
    pub fn validate_simply_connected(&self) -> Result<()> {
        if self.slits.iter().any(|(a, b)| segment_distance(ComplexPoint::new(0.0, 0.0), *a, *b) < 1e-12) {
            return Err(Error::Geometry("slit passes through the origin".into()));
        }
        let n = self.slits.len();
        let touches = |s: &(ComplexPoint, ComplexPoint)| (s.0.norm() - self.radius).abs() < 1e-9 || (s.1.norm() - self.radius).abs() < 1e-9;
        let mut reached: Vec<bool> = self.slits.iter().map(touches).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|i| reached[*i]).collect();
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if !reached[j] && segments_meet(self.slits[i], self.slits[j]) {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if reached.iter().all(|r| *r) {
            Ok(())
        } else {
            Err(Error::Geometry("a slit does not connect to the outer circle".into()))
        }
    }

    fn contains(&self, p: ComplexPoint) -> bool {
        p.norm() < self.radius && self.slits.iter().all(|(a, b)| segment_distance(p, *a, *b) > 0.0)
    }

    /// `(distance to ∂U, nearest piece is the outer circle)`.
    fn boundary_distance(&self, p: ComplexPoint) -> (f64, bool) {
        let outer = self.radius - p.norm();
        let slit = self.slits.iter().map(|(a, b)| segment_distance(p, *a, *b)).fold(f64::INFINITY, f64::min);
        if outer <= slit {
            (outer, true)
        } else {
            (slit, false)
        }
    }

    /// Euclidean distance from 0 to the boundary.
    pub fn origin_distance(&self) -> f64 {
        self.boundary_distance(ComplexPoint::new(0.0, 0.0)).0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonicMeasureEstimate {
    pub value: f64,
    pub stderr: f64,
    pub walkers: usize,
    /// Walkers stopped by the step cap; excluded from `value`.
    pub dropped: usize,
    pub shell: f64,
    pub seed: u64,
}

fn in_arc(angle: f64, start: f64, length: f64) -> bool {
    if length >= TAU {
        return true;
    }
    (angle - start).rem_euclid(TAU) < length
}

/// Harmonic measure of `target` seen from `p`, by walk-on-spheres with
/// absorption shell `1e-4 · radius`. Walker `i` uses stream `(seed, i)`.
pub fn harmonic_measure(domain: &SlitDisk, target: BoundaryTarget, p: ComplexPoint, walkers: usize, seed: u64) -> Result<HarmonicMeasureEstimate> {
    if !domain.contains(p) {
        return Err(Error::Geometry("start point is not interior".into()));
    }
    if walkers == 0 {
        return Err(Error::invalid("need at least one walker"));
    }
    let shell = SHELL_FRACTION * domain.radius;
    let (hits, dropped) = (0..walkers)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::stream(seed, i as u64);
            let mut x = p;
            for _ in 0..STEP_CAP {
                let (d, outer) = domain.boundary_distance(x);
                if d < shell {
                    let hit = match target {
                        BoundaryTarget::Circle => outer,
                        BoundaryTarget::Arc { start, length } => outer && in_arc(x.arg(), start, length),
                        BoundaryTarget::Slits => !outer,
                    };
                    return (hit as usize, 0usize);
                }
                x += ComplexPoint::from_polar(d, rng.random_range(0.0..TAU));
            }
            (0, 1)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let finished = walkers - dropped;
    if finished == 0 {
        return Err(Error::Component("every walker hit the step cap".into()));
    }
    let value = hits as f64 / finished as f64;
    let stderr = (value * (1.0 - value) / finished as f64).sqrt();
    Ok(HarmonicMeasureEstimate { value, stderr, walkers, dropped, shell, seed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sh93Report {
    pub radius: f64,
    pub slits: usize,
    /// Harmonic measure of the outer circle from 0.
    pub omega: HarmonicMeasureEstimate,
    pub distance: f64,
    /// `(π² k / 16) ω²`.
    pub bound: f64,
    /// `3 · (π² k / 8) ω · stderr`.
    pub tolerance: f64,
    pub holds: bool,
}

/// Checks `dist(0, ∂U) ≥ (π² k / 16) ω(0, ∂U ∩ ∂Δ_k, U)²` for a slit disk.
pub fn sh93_bound_check(domain: &SlitDisk, walkers: usize, seed: u64) -> Result<Sh93Report> {
    domain.validate_simply_connected()?;
    let omega = harmonic_measure(domain, BoundaryTarget::Circle, ComplexPoint::new(0.0, 0.0), walkers, seed)?;
    let k = domain.radius;
    let distance = domain.origin_distance();
    let factor = PI * PI * k / 16.0;
    let bound = factor * omega.value * omega.value;
    let tolerance = 3.0 * 2.0 * factor * omega.value * omega.stderr;
    Ok(Sh93Report { radius: k, slits: domain.slits.len(), holds: distance >= bound - tolerance, omega, distance, bound, tolerance })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntipeakSampling {
    pub samples: usize,
    /// Samples are drawn with norm at most this.
    pub extent: f64,
    pub psh_lines: usize,
    pub psh_circle_points: usize,
}

impl Default for AntipeakSampling {
    fn default() -> Self {
        Self { samples: 20_000, extent: 200.0, psh_lines: 500, psh_circle_points: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AntipeakReport {
    /// Smallest sampled value.
    pub positivity_margin: f64,
    /// Largest sampled value.
    pub upper_bound: f64,
    /// `(R, sup of sampled values with norm ≥ R)`.
    pub decay_profile: Vec<(f64, f64)>,
    pub psh_violations: usize,
    pub samples: usize,
    /// `c_R` is nonincreasing and ends below a tenth of the bound.
    pub decays: bool,
}

/// Sampled antipeak properties of `phi` on `domain`: positivity, a global
/// bound, the decay table `c_R` and sub-mean-value checks on random complex
/// lines.
pub fn antipeak_check<D, F>(domain: &D, phi: F, spec: AntipeakSampling, radii: &[f64], seed: u64) -> Result<AntipeakReport>
where
    D: Domain + ?Sized,
    F: Fn(&[ComplexPoint]) -> f64 + Sync,
{
    if radii.windows(2).any(|w| w[0] >= w[1]) || radii.is_empty() {
        return Err(Error::invalid("radii must be nonempty and increasing"));
    }
    let points: Vec<(f64, f64)> = (0..spec.samples)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = seeds::stream(seed, i as u64);
            domain.sample(&mut rng, spec.extent).map(|p| (norm(&p), phi(&p)))
        })
        .collect();
    if points.is_empty() {
        return Err(Error::Component("no domain samples".into()));
    }
    let positivity_margin = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let upper_bound = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let decay_profile: Vec<(f64, f64)> = radii
        .iter()
        .map(|r| (*r, points.iter().filter(|p| p.0 >= *r).map(|p| p.1).fold(0.0, f64::max)))
        .collect();
    let psh_violations = (0..spec.psh_lines)
        .into_par_iter()
        .filter(|i| {
            let mut rng = seeds::stream(seed ^ 0x5053_4831, *i as u64);
            let Some(p) = domain.sample(&mut rng, spec.extent) else { return false };
            let dir: Vec<ComplexPoint> = (0..domain.dim()).map(|_| seeds::complex_normal(&mut rng)).collect();
            let dn = norm(&dir);
            let mut r = 0.1 * norm(&p).max(1.0);
            let circle = |r: f64| -> Vec<Vec<ComplexPoint>> {
                (0..spec.psh_circle_points)
                    .map(|j| {
                        let e = ComplexPoint::from_polar(r / dn, TAU * j as f64 / spec.psh_circle_points as f64);
                        p.iter().zip(&dir).map(|(a, d)| a + d * e).collect()
                    })
                    .collect()
            };
            for _ in 0..40 {
                let pts = circle(r);
                if pts.iter().all(|q| domain.contains(q)) {
                    let mean = pts.iter().map(|q| phi(q)).sum::<f64>() / pts.len() as f64;
                    let center = phi(&p);
                    return center > mean + 1e-9 * (1.0 + center.abs());
                }
                r *= 0.5;
            }
            false
        })
        .count();
    let nonincreasing = decay_profile.windows(2).all(|w| w[1].1 <= w[0].1);
    let last = decay_profile.last().map_or(f64::INFINITY, |d| d.1);
    Ok(AntipeakReport {
        positivity_margin,
        upper_bound,
        decays: nonincreasing && last <= 0.1 * upper_bound,
        decay_profile,
        psh_violations,
        samples: points.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiouvilleReport {
    /// `(|z|, candidate value)` along `E_m × {1}`.
    pub values: Vec<(f64, f64)>,
    pub spread: f64,
    /// Smallest value at the outermost sampled `|z|`.
    pub far_value: f64,
    /// Candidate value at infinity implied by the decay table.
    pub decay_limit: f64,
    /// Nonconstant on `E_m × {1}`, or constant but not decaying there while
    /// the decay table says it decays.
    pub inconsistent: bool,
}

/// Evaluates a candidate on `Ω_Ψ` along `E_m × {1}`, where `Ψ = 0`.
pub fn liouville_check<F>(domain: &OmegaPsi, phi: F, report: &AntipeakReport, radii: &[f64], per_radius: usize, seed: u64) -> LiouvilleReport
where
    F: Fn(&[ComplexPoint]) -> f64,
{
    let params = &domain.params;
    let mut rng = seeds::stream(seed, 0);
    let mut values = Vec::new();
    for r in radii {
        for _ in 0..per_radius {
            let z = ComplexPoint::from_polar(*r, rng.random_range(0.0..TAU));
            if params.schedule.points().iter().any(|a| (z - a).norm() < 1e-9) {
                continue;
            }
            let mask = rng.random::<u64>() & ((1u64 << params.m()) - 1);
            let w = BranchTerms::at(&params.schedule, z).value(mask);
            values.push((*r, phi(&[z, w, ComplexPoint::new(1.0, 0.0)])));
        }
    }
    let lo = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    let outer = radii.last().copied().unwrap_or(0.0);
    let far_value = values.iter().filter(|v| v.0 == outer).map(|v| v.1).fold(f64::INFINITY, f64::min);
    let decay_limit = report.decay_profile.last().map_or(f64::INFINITY, |d| d.1);
    let tol = 1e-9 * (1.0 + hi.abs());
    let inconsistent = spread > tol || (report.decays && far_value > decay_limit + tol);
    LiouvilleReport { values, spread, far_value, decay_limit, inconsistent }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanValueStatus {
    Tight,
    Slack,
    Violated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanValueReport {
    pub k: f64,
    pub big_r: f64,
    /// `φ(f(0))`.
    pub alpha: f64,
    pub bound_c: f64,
    pub c_r: f64,
    /// Harmonic measure from 0 of the part of `∂U` on `∂Δ_k`.
    pub omega: f64,
    pub stderr: f64,
    /// `C ω + c_R (1 − ω)`.
    pub rhs: f64,
    pub status: MeanValueStatus,
    pub maps_into_domain: bool,
    pub raster_cells: usize,
    pub component_cells: usize,
    pub walkers: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanValueSpec {
    pub cells: usize,
    pub walkers: usize,
    /// Boundary circle samples for the domain check; the interior is
    /// checked at the raster cells.
    pub check_points: usize,
}

impl Default for MeanValueSpec {
    fn default() -> Self {
        Self { cells: 256, walkers: 20_000, check_points: 1024 }
    }
}

/// Mean-value certificate for a disk `f : Δ_k(0) → C^n` (its `radius` is `k`,
/// its `center` is 0).
///
/// `U` is the component of `{λ ∈ Δ_k : ‖f(λ)‖ < R}` containing 0, found by a
/// raster flood fill; ω is estimated by walk-on-spheres against the raster
/// boundary, whose cells are tagged as circle or level-set cells.
pub fn mean_value_certificate<D, F>(domain: &D, disk: &HoloDisk, phi: F, bound_c: f64, c_r: f64, big_r: f64, spec: MeanValueSpec, seed: u64) -> Result<MeanValueReport>
where
    D: Domain + ?Sized,
    F: Fn(&[ComplexPoint]) -> f64,
{
    if disk.center != ComplexPoint::new(0.0, 0.0) {
        return Err(Error::invalid("the certificate works on disks centred at 0"));
    }
    let k = disk.radius;
    let cells = spec.cells.max(8);
    let h = 2.0 * k / cells as f64;
    let at = |i: usize, j: usize| ComplexPoint::new(-k + (i as f64 + 0.5) * h, -k + (j as f64 + 0.5) * h);
    // 0 outside the disk, 1 in the disk but ‖f‖ ≥ R, 2 candidate
    let mut kind = vec![0u8; cells * cells];
    for i in 0..cells {
        for j in 0..cells {
            let l = at(i, j);
            if l.norm() < k {
                kind[i * cells + j] = if norm(&disk.eval(l)) < big_r { 2 } else { 1 };
            }
        }
    }
    let origin_cell = (cells / 2) * cells + cells / 2;
    if kind[origin_cell] != 2 {
        return Err(Error::Component("the origin is not in {‖f‖ < R}".into()));
    }
    let mut inside = vec![false; cells * cells];
    inside[origin_cell] = true;
    let mut queue = VecDeque::from([origin_cell]);
    let mut component_cells = 0;
    while let Some(c) = queue.pop_front() {
        component_cells += 1;
        let (i, j) = (c / cells, c % cells);
        let nbrs = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
        for (a, b) in nbrs {
            if a < cells && b < cells {
                let n = a * cells + b;
                if kind[n] == 2 && !inside[n] {
                    inside[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    // boundary cells: non-component cells adjacent to the component
    let mut boundary: Vec<(ComplexPoint, bool)> = Vec::new();
    for c in 0..cells * cells {
        if inside[c] {
            continue;
        }
        let (i, j) = (c / cells, c % cells);
        let near = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)]
            .iter()
            .any(|&(a, b)| a < cells && b < cells && inside[a * cells + b]);
        if near {
            boundary.push((at(i, j), kind[c] == 0));
        }
    }
    // the disk edge is a boundary even where the raster has no outside cell
    let edge = |p: ComplexPoint| k - p.norm();
    let nearest = |p: ComplexPoint| -> (f64, bool) {
        let mut best = (edge(p), true);
        for (q, circle) in &boundary {
            let d = (p - q).norm() - 0.5 * h;
            if d < best.0 {
                best = (d, *circle);
            }
        }
        best
    };
    let shell = 0.5 * h;
    let (hits, dropped) = (0..spec.walkers)
        .into_par_iter()
        .map(|w| {
            let mut rng = seeds::stream(seed, w as u64);
            let mut x = ComplexPoint::new(0.0, 0.0);
            for _ in 0..STEP_CAP {
                let (d, circle) = nearest(x);
                if d < shell {
                    return (circle as usize, 0usize);
                }
                x += ComplexPoint::from_polar(d, rng.random_range(0.0..TAU));
            }
            (0, 1)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let finished = spec.walkers - dropped;
    if finished == 0 {
        return Err(Error::Component("every walker hit the step cap".into()));
    }
    let omega = hits as f64 / finished as f64;
    let stderr = (omega * (1.0 - omega) / finished as f64).sqrt();
    let alpha = phi(&disk.eval(ComplexPoint::new(0.0, 0.0)));
    let rhs = bound_c * omega + c_r * (1.0 - omega);
    let tol = 3.0 * stderr * (bound_c - c_r).abs();
    let status = if (rhs - alpha).abs() <= tol {
        MeanValueStatus::Tight
    } else if rhs > alpha {
        MeanValueStatus::Slack
    } else {
        MeanValueStatus::Violated
    };
    let maps_into_domain = (0..cells * cells)
        .filter(|c| kind[*c] != 0)
        .map(|c| at(c / cells, c % cells))
        .chain((0..spec.check_points).map(|j| ComplexPoint::from_polar(k * (1.0 - 1e-12), TAU * j as f64 / spec.check_points as f64)))
        .all(|l| domain.contains(&disk.eval(l)));
    Ok(MeanValueReport {
        k,
        big_r,
        alpha,
        bound_c,
        c_r,
        omega,
        stderr,
        rhs,
        status,
        maps_into_domain,
        raster_cells: cells * cells,
        component_cells,
        walkers: spec.walkers,
        dropped,
    })
}
