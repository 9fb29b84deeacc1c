//! The level-m potential `φ_m(z, w) = 2^{−m} Σ_s log|w − f_s(z)|`, the
//! defining function `Ψ = exp(φ + ρ(|Re z|) + ρ(|Im z|))`, domain membership
//! and the calibration constants κ(n), q(n), c(n).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lattice::{self, RegionId, RegionKind};
use crate::profile::ConvexProfile;
use crate::seeds;
use crate::wermer::{log_abs_product_and_nearest, log_abs_product_of, BranchTerms, EpsilonSchedule};
use crate::{ComplexPoint, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub schedule: EpsilonSchedule,
    pub profile: ConvexProfile,
}

impl DomainParams {
    pub fn new(schedule: EpsilonSchedule, profile: ConvexProfile) -> Self {
        Self { schedule, profile }
    }

    pub fn m(&self) -> usize {
        self.schedule.m()
    }
}

/// `F_d = {Ψ < 2d}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublevelRegion {
    d: f64,
}

impl SublevelRegion {
    pub fn new(d: f64) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::invalid(format!("level d = {d} must be positive")));
        }
        Ok(Self { d })
    }

    pub fn d(&self) -> f64 {
        self.d
    }
}

/// `φ_m(z, w)`, possibly `−∞`.
pub fn phi_m(schedule: &EpsilonSchedule, z: ComplexPoint, w: ComplexPoint) -> f64 {
    let vals = BranchTerms::at(schedule, z).values();
    log_abs_product_of(&vals, w) / vals.len() as f64
}

/// `ρ(|Re z|) + ρ(|Im z|)`.
pub fn profile_weight(profile: &ConvexProfile, z: ComplexPoint) -> f64 {
    profile.eval(z.re.abs()) + profile.eval(z.im.abs())
}

/// `Ψ` together with an overflow flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiValue {
    pub value: f64,
    pub overflow: bool,
}

pub fn psi_value(params: &DomainParams, z: ComplexPoint, w: ComplexPoint) -> PsiValue {
    let phi = phi_m(&params.schedule, z, w);
    if phi == f64::NEG_INFINITY {
        return PsiValue { value: 0.0, overflow: false };
    }
    let value = (phi + profile_weight(&params.profile, z)).exp();
    PsiValue { value, overflow: value.is_infinite() }
}

/// `Ψ(z, w)`; `+∞` on overflow.
pub fn psi(params: &DomainParams, z: ComplexPoint, w: ComplexPoint) -> f64 {
    psi_value(params, z, w).value
}

/// `(z, w, ζ) ∈ Ω_Ψ`, i.e. `Re ζ > Ψ(z, w)`.
pub fn omega_contains(params: &DomainParams, z: ComplexPoint, w: ComplexPoint, zeta: ComplexPoint) -> bool {
    zeta.re > psi(params, z, w)
}

/// `(z, w) ∈ F_d`.
pub fn f_d_contains(params: &DomainParams, region: SublevelRegion, z: ComplexPoint, w: ComplexPoint) -> bool {
    psi(params, z, w) < 2.0 * region.d
}

/// `κ(n) = min ε_p √r_p / 4` over `2 ≤ p ≤ m` with `a_p ∈ S̃_n`.
pub fn kappa_region(schedule: &EpsilonSchedule, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let idx = lattice::indices_in_s_tilde(n, schedule.m());
    if idx.is_empty() {
        return Err(Error::ScheduleTooShort { m: schedule.m(), n });
    }
    Ok(idx.iter().map(|&p| schedule.shift_scale(p) / 4.0).fold(f64::INFINITY, f64::min))
}

/// Minimum of `ε_p √r_p / 4` over every `2 ≤ p ≤ m` with `a_p` in the closed
/// square of half-side `n + 2`. Never larger than [`kappa_region`], defined
/// for every `n` once `m ≥ 2`, and nonincreasing in `n`.
pub fn kappa_region_floored(schedule: &EpsilonSchedule, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    if schedule.m() < 2 {
        return Err(Error::ScheduleTooShort { m: schedule.m(), n });
    }
    let reach = n as f64 + 2.0;
    Ok((2..=schedule.m())
        .filter(|&p| {
            let a = schedule.points()[p - 1];
            a.re.abs().max(a.im.abs()) <= reach
        })
        .map(|p| schedule.shift_scale(p) / 4.0)
        .fold(f64::INFINITY, f64::min))
}

/// Sampling of the tube boundary in [`calibrate_q`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellGrid {
    pub z_spacing: f64,
    pub theta_samples: usize,
    /// Added to the sampled supremum.
    pub margin: f64,
}

impl Default for ShellGrid {
    fn default() -> Self {
        Self { z_spacing: 0.25, theta_samples: 16, margin: 0.25 }
    }
}

/// Grid of `S̃_n` with the given spacing (square lattice, aligned at 0).
pub fn s_tilde_grid(n: usize, spacing: f64) -> Vec<ComplexPoint> {
    let outer = n as f64 + 2.0;
    let steps = (outer / spacing).ceil() as i64;
    let h = outer / steps as f64;
    let region = RegionId::s_tilde(n);
    let mut pts = Vec::new();
    for i in -steps..=steps {
        for j in -steps..=steps {
            let z = ComplexPoint::new(i as f64 * h, j as f64 * h);
            if lattice::region_contains(region, z) {
                pts.push(z);
            }
        }
    }
    pts
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QCalibration {
    pub n: usize,
    pub kappa: f64,
    pub sup_neg_phi: f64,
    pub margin: f64,
    pub q: f64,
    pub z_points: usize,
    pub z_spacing: f64,
    pub theta_samples: usize,
}

/// `q(n)`: the sampled supremum of `−φ_m` over the boundary of the κ-tube
/// (points of the circles of radius κ around branch values that lie in no
/// other such disk) above a grid of `S̃_n`, plus a margin.
pub fn calibrate_q(schedule: &EpsilonSchedule, n: usize, kappa: f64, grid: ShellGrid) -> Result<QCalibration> {
    if !(kappa > 0.0) || n == 0 || grid.theta_samples == 0 || !(grid.z_spacing > 0.0) {
        return Err(Error::invalid("calibration needs kappa > 0, n >= 1 and a non-empty grid"));
    }
    let zs = s_tilde_grid(n, grid.z_spacing);
    let dirs: Vec<ComplexPoint> = (0..grid.theta_samples)
        .map(|i| ComplexPoint::from_polar(kappa, 2.0 * std::f64::consts::PI * i as f64 / grid.theta_samples as f64))
        .collect();
    let sup = zs
        .par_iter()
        .map(|z| {
            let vals = BranchTerms::at(schedule, *z).values();
            let scale = vals.len() as f64;
            let mut worst = f64::NEG_INFINITY;
            for v in &vals {
                for d in &dirs {
                    let w = v + d;
                    // points inside another disk are interior to the tube
                    let (log_prod, nearest) = log_abs_product_and_nearest(&vals, w);
                    if nearest < kappa * (1.0 - 1e-9) {
                        continue;
                    }
                    let neg_phi = -log_prod / scale;
                    if neg_phi > worst {
                        worst = neg_phi;
                    }
                }
            }
            worst
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(QCalibration {
        n,
        kappa,
        sup_neg_phi: sup,
        margin: grid.margin,
        q: sup + grid.margin,
        z_points: zs.len(),
        z_spacing: grid.z_spacing,
        theta_samples: grid.theta_samples,
    })
}

/// `c(n) = q(n) + n` below `q₀`, `q̃(n) + n` from `q₀` on.
pub fn calibrate_c(n: usize, q0: usize, q: f64, q_tilde: f64) -> Result<f64> {
    if n >= q0 {
        if q_tilde < q {
            return Err(Error::invalid(format!("q~({n}) = {q_tilde} below q({n}) = {q}")));
        }
        Ok(q_tilde + n as f64)
    } else {
        Ok(q + n as f64)
    }
}

/// Errors on the first `n` where the sequence fails to increase strictly.
/// `first` is the index of `c[0]`.
pub fn check_increasing(c: &[f64], first: usize) -> Result<()> {
    for (i, w) in c.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::NonMonotone { n: first + i, prev: w[0], next: w[1] });
        }
    }
    Ok(())
}

/// Smallest strictly increasing majorant with steps of at least `min_step`.
pub fn increasing_envelope(c: &[f64], min_step: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(c.len());
    for v in c {
        let next = match out.last() {
            Some(prev) => v.max(prev + min_step),
            None => *v,
        };
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InclusionAudit {
    pub n: usize,
    pub d: f64,
    pub kappa: f64,
    pub samples: usize,
    /// Samples that landed in `F_d`.
    pub hits: usize,
    /// Hits whose nearest branch is at distance ≥ κ(n).
    pub violations: usize,
    pub witness: Option<(ComplexPoint, ComplexPoint)>,
}

/// Samples `(z, w) ∈ S̃_n × C`, keeps those in `F_d` and checks each lies in
/// `E^{κ(n)}`. Proposals put `w` at log-uniform distance from a random
/// branch value (down to 10⁻³⁰⁰), plus a share of uniform `w` in a box.
pub fn sublevel_inclusion_audit(params: &DomainParams, n: usize, d: f64, kappa: f64, samples: usize, seed: u64) -> Result<InclusionAudit> {
    let region = SublevelRegion::new(d)?;
    let outer = n as f64 + 2.0;
    let inner = n as f64 - 1.0;
    let results: Vec<(bool, bool, ComplexPoint, ComplexPoint)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::stream(seed, i as u64);
            let z = loop {
                let z = ComplexPoint::new(rng.random_range(-outer..=outer), rng.random_range(-outer..=outer));
                if z.re.abs().max(z.im.abs()) >= inner {
                    break z;
                }
            };
            let bt = BranchTerms::at(&params.schedule, z);
            let w = if rng.random::<f64>() < 0.9 {
                let mask = rng.random::<u64>() & ((1u64 << params.m()) - 1);
                let exponent = rng.random_range(-300.0..1.0);
                let r = 10f64.powf(exponent);
                bt.value(mask) + ComplexPoint::from_polar(r, rng.random_range(0.0..std::f64::consts::TAU))
            } else {
                let spread = 2.0 * outer.sqrt() + 1.0;
                ComplexPoint::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread))
            };
            let hit = f_d_contains(params, region, z, w);
            let bad = hit && bt.nearest_distance(w) >= kappa;
            (hit, bad, z, w)
        })
        .collect();
    let hits = results.iter().filter(|r| r.0).count();
    let violations = results.iter().filter(|r| r.1).count();
    let witness = results.iter().find(|r| r.1).map(|r| (r.2, r.3));
    Ok(InclusionAudit { n, d, kappa, samples, hits, violations, witness })
}

/// Whether `z` lies in `S̃_n`.
pub fn in_s_tilde(n: usize, z: ComplexPoint) -> bool {
    lattice::region_contains(RegionId { kind: RegionKind::STilde, index: n }, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wermer::build_schedule;

    fn c(x: f64, y: f64) -> ComplexPoint {
        ComplexPoint::new(x, y)
    }

    fn flat(m: usize) -> DomainParams {
        let schedule = if m == 1 { EpsilonSchedule::level_one(0.5).unwrap() } else { build_schedule(m, 0.5, 256).unwrap() };
        DomainParams::new(schedule, ConvexProfile::constant(0.0).unwrap())
    }

    #[test]
    fn phi_examples() {
        let p = flat(1);
        assert!(phi_m(&p.schedule, c(0.0, 0.0), c(1.0, 0.0)).abs() < 1e-15);
        let v = phi_m(&p.schedule, c(1.0, 0.0), c(3.0, 0.0));
        assert!((v - (2.0 * 2f64.sqrt()).ln()).abs() < 1e-14);
        assert!((v - 1.03972).abs() < 1e-5);
        assert_eq!(phi_m(&p.schedule, c(4.0, 0.0), c(-2.0, 0.0)), f64::NEG_INFINITY);
    }

    #[test]
    fn phi_level_one_closed_form() {
        let p = flat(1);
        for (z, w) in [(c(0.3, -1.2), c(2.0, 0.5)), (c(-4.0, 0.1), c(0.0, 0.0))] {
            let closed = 0.5 * (w * w - z).norm().ln();
            assert!((phi_m(&p.schedule, z, w) - closed).abs() < 1e-13);
        }
    }

    #[test]
    fn psi_examples() {
        let p = flat(1);
        assert!((psi(&p, c(0.0, 0.0), c(1.0, 0.0)) - 1.0).abs() < 1e-15);
        assert_eq!(psi(&p, c(4.0, 0.0), c(2.0, 0.0)), 0.0);
        let prof = DomainParams::new(p.schedule.clone(), ConvexProfile::constant(0.7).unwrap());
        let expect = (1.03972077 + 1.4f64).exp();
        assert!((psi(&prof, c(1.0, 0.0), c(3.0, 0.0)) - expect).abs() < 1e-6);
        let huge = DomainParams::new(p.schedule.clone(), ConvexProfile::constant(400.0).unwrap());
        let v = psi_value(&huge, c(1.0, 0.0), c(3.0, 0.0));
        assert!(v.overflow && v.value.is_infinite());
        assert!(!omega_contains(&huge, c(1.0, 0.0), c(3.0, 0.0), c(1e300, 0.0)));
    }

    #[test]
    fn omega_and_sublevel() {
        let p = flat(1);
        assert!(omega_contains(&p, c(4.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)));
        assert!(!omega_contains(&p, c(4.0, 0.0), c(2.0, 0.0), c(0.0, 5.0)));
        let v = psi(&p, c(1.0, 0.0), c(3.0, 0.0));
        assert!(omega_contains(&p, c(1.0, 0.0), c(3.0, 0.0), c(v + 1e-9, 0.0)));
        assert!(!omega_contains(&p, c(1.0, 0.0), c(3.0, 0.0), c(v - 1e-9, 0.0)));
        assert!(f_d_contains(&p, SublevelRegion::new(1e-9).unwrap(), c(4.0, 0.0), c(2.0, 0.0)));
        assert!(f_d_contains(&p, SublevelRegion::new(v).unwrap(), c(1.0, 0.0), c(3.0, 0.0)));
        assert!(SublevelRegion::new(0.0).is_err());
    }

    #[test]
    fn kappa_region_contract() {
        let s = build_schedule(2, 0.5, 2048).unwrap();
        let k1 = kappa_region(&s, 1).unwrap();
        assert!((k1 - s.eps(2) * 0.5 / 4.0).abs() < 1e-15);
        assert!((k1 - 0.05413).abs() < 1e-4);
        // a_2 = 1 is not in S̃_3 (inner open square of half-side 2)
        assert!(matches!(kappa_region(&s, 3), Err(Error::ScheduleTooShort { .. })));
        let s6 = build_schedule(6, 0.5, 256).unwrap();
        let floored: Vec<f64> = (1..8).map(|n| kappa_region_floored(&s6, n).unwrap()).collect();
        assert!(floored.windows(2).all(|w| w[1] <= w[0]));
        for n in 1..8 {
            if let Ok(k) = kappa_region(&s6, n) {
                assert!(floored[n - 1] <= k);
            }
        }
    }

    #[test]
    fn q_level_one() {
        let p = flat(1);
        let grid = ShellGrid { z_spacing: 0.25, theta_samples: 32, margin: 0.0 };
        let cal = calibrate_q(&p.schedule, 1, 0.5, grid).unwrap();
        // at z = 0 the two branch values coincide: −φ on the circle is −log 0.5
        assert!(cal.sup_neg_phi >= 0.5f64.ln().abs() - 1e-12);
        let coarse = calibrate_q(&p.schedule, 1, 1.0, grid).unwrap();
        assert!(coarse.q <= cal.q);
    }

    #[test]
    fn calibrated_inclusion_holds() {
        let p = flat(3);
        let kappa = kappa_region_floored(&p.schedule, 2).unwrap();
        let cal = calibrate_q(&p.schedule, 2, kappa, ShellGrid::default()).unwrap();
        // with ρ ≡ 0 the inclusion needs 2d < e^{−q}
        let d = 0.25 * (-cal.q).exp();
        let audit = sublevel_inclusion_audit(&p, 2, d, kappa, 4000, 7).unwrap();
        assert!(audit.hits > 0);
        assert_eq!(audit.violations, 0, "{:?}", audit.witness);
    }

    #[test]
    fn c_rule() {
        assert_eq!(calibrate_c(2, 5, 1.5, 2.0).unwrap(), 3.5);
        assert_eq!(calibrate_c(6, 5, 1.5, 2.0).unwrap(), 8.0);
        assert!(calibrate_c(6, 5, 2.5, 2.0).is_err());
        assert!(check_increasing(&[1.0, 2.0, 2.0], 1).is_err());
        let env = increasing_envelope(&[1.0, 3.0, 2.0, 5.0], 1e-3);
        assert_eq!(env, vec![1.0, 3.0, 3.001, 5.0]);
    }

    #[test]
    fn s_tilde_grid_is_inside() {
        for n in 1..4 {
            let g = s_tilde_grid(n, 0.3);
            assert!(g.iter().all(|z| in_s_tilde(n, *z)));
            assert!(!g.is_empty());
        }
    }
}
