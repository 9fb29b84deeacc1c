//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::f64::consts::{PI, TAU};
use std::time::{Duration, Instant};

use rand::Rng;
use wermerlab::disks::{self, ExclusionSpec, HnSample, HnSampling};
use wermerlab::harmonic::{self, BoundaryTarget, SlitDisk};
use wermerlab::kobayashi::{self, Ball, Domain, FamilySpec, MapFamily, OmegaPsi};
use wermerlab::pipeline::{self, DomainBuild, RunConfig};
use wermerlab::potential::{self, ShellGrid};
use wermerlab::wermer::{self, BranchSignature, BranchTerms, ContinuationPath, EpsilonSchedule};
use wermerlab::{lattice, profile, seeds, Complex64};

const SEED: u64 = 20_240_601;

const SPIRAL_BUDGET: Duration = Duration::from_secs(1);
const SCHEDULE_BUDGET: Duration = Duration::from_secs(60);
const SHIFT_BUDGET: Duration = Duration::from_secs(60);
const INCLUSION_BUDGET: Duration = Duration::from_secs(300);
const HARMONIC_BUDGET: Duration = Duration::from_secs(120);
const EXCLUSION_BUDGET: Duration = Duration::from_secs(600);

const KAPPA_TWO_TOL: f64 = 1e-3;
const SHIFT_TOL: f64 = 1e-9;
const MONODROMY_TOL: f64 = 1e-9;
const MONODROMY_LOOPS: usize = 1000;
const ALPHA_DENSITY_TOL: f64 = 0.05;
const CONVEXITY_TOL: f64 = 1e-9;
const SLOPE_TOL: f64 = 1e-6;
const INCLUSION_SAMPLES: usize = 10_000;
const HN_DISKS: usize = 50;
const REFINEMENT_TOL: f64 = 0.10;
const HARNACK_DISKS: usize = 1000;
const WALKERS: usize = 100_000;
const KOBAYASHI_TOL: f64 = 1e-3;
const OMEGA_SAMPLES: usize = 1000;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn within(elapsed: Duration, budget: Duration) -> (bool, String) {
    (elapsed <= budget, format!("{:.1}s of {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64()))
}

fn spiral() -> Outcome {
    let t = Instant::now();
    let mut ok = true;
    for n in 0..=20i64 {
        let count = ((2 * n + 1) * (2 * n + 1)) as usize;
        let mut pts: Vec<(i64, i64)> = (1..=count).map(|i| lattice::spiral_coords(i).unwrap()).collect();
        pts.sort_unstable();
        let mut square: Vec<(i64, i64)> = (-n..=n).flat_map(|x| (-n..=n).map(move |y| (x, y))).collect();
        square.sort_unstable();
        ok &= pts == square;
    }
    let labels = [(1, (0, 0)), (2, (1, 0)), (3, (1, 1)), (10, (2, -1))];
    let labelled = labels.iter().all(|(i, p)| lattice::spiral_coords(*i).unwrap() == *p);
    let (fast, time) = within(t.elapsed(), SPIRAL_BUDGET);
    outcome(ok && labelled && fast, format!("squares n<=20 {ok}, labels {labelled}, {time}"))
}

fn schedule_certification() -> Outcome {
    let t = Instant::now();
    let s12 = match wermer::build_schedule(12, 0.5, 2048) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("build failed: {e}")),
    };
    let cert = s12.certify();
    let margins_positive = cert.checks.iter().all(|c| c.margin > 0.0);
    let level_one = EpsilonSchedule::level_one(0.5).unwrap();
    let kappa2 = wermer::kappa_k(&level_one, 2, 0.25, 2048).unwrap();
    let kappa_ok = (kappa2 - 3f64.sqrt()).abs() < KAPPA_TWO_TOL && (s12.kappa(2) - 3f64.sqrt()).abs() < KAPPA_TWO_TOL;
    let (fast, time) = within(t.elapsed(), SCHEDULE_BUDGET);
    outcome(
        cert.ok && margins_positive && kappa_ok && fast,
        format!("{} checks, min margin {:.3e}, kappa_2 = {kappa2:.6}, {time}", cert.checks.len(), cert.min_margin),
    )
}

fn shift_errors(s8: &EpsilonSchedule) -> Outcome {
    let t = Instant::now();
    let mut worst_exact: f64 = 0.0;
    let mut tube_ok = true;
    for p in 2..=8 {
        let level = s8.truncate(p).unwrap();
        let scale = level.shift_scale(p);
        let exact = wermer::shift_error(&level, p, 0.0, 2048).unwrap();
        worst_exact = worst_exact.max((exact.theta_exact - 2.0 * scale).abs() / (2.0 * scale));
        let tube = wermer::shift_error(&level, p, scale / 2.0, 2048).unwrap();
        tube_ok &= tube.theta >= scale * (1.0 - SHIFT_TOL);
    }
    let (fast, time) = within(t.elapsed(), SHIFT_BUDGET);
    outcome(worst_exact <= SHIFT_TOL && tube_ok && fast, format!("max relative gap {worst_exact:.2e}, tube bound {tube_ok}, {time}"))
}

/// Circle loop conjugated to `base` by straight segments.
fn based_loop(base: Complex64, center: Complex64, radius: f64, angle: f64, turns: i32) -> ContinuationPath {
    let circle = ContinuationPath::circle(center, radius, angle, turns, 256);
    ContinuationPath::straight(base, circle.start()).then(&circle).then(&ContinuationPath::straight(circle.end(), base))
}

fn clear_of(points: &[Complex64], path: &ContinuationPath, gap: f64) -> bool {
    path.waypoints.windows(2).all(|w| {
        points.iter().all(|a| {
            let d = w[1] - w[0];
            let t = if d.norm_sqr() > 0.0 { (((a - w[0]) * d.conj()).re / d.norm_sqr()).clamp(0.0, 1.0) } else { 0.0 };
            (w[0] + d * t - a).norm() > gap
        })
    })
}

fn signed_value(s: &EpsilonSchedule, signs: &[i8], z: Complex64) -> Complex64 {
    s.points().iter().zip(s.eps_all()).zip(signs).map(|((a, e), sg)| (z - a).sqrt() * *e * *sg as f64).sum()
}

fn monodromy_laws() -> Outcome {
    let s = wermer::build_schedule(4, 0.5, 2048).unwrap();
    let mut rng = seeds::stream(SEED, 4);
    let mut checked = 0;
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    while checked < MONODROMY_LOOPS {
        let base = c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let center = c(rng.random_range(-1.5..2.5), rng.random_range(-1.5..2.5));
            let radius = rng.random_range(0.2..1.8);
            (center, radius, rng.random_range(0.0..TAU))
        };
        let (c1, r1, t1) = draw(&mut rng);
        let (c2, r2, t2) = draw(&mut rng);
        let once = based_loop(base, c1, r1, t1, 1);
        let twice = based_loop(base, c1, r1, t1, 2);
        let other = based_loop(base, c2, r2, t2, 1);
        if [&once, &other].iter().any(|p| !clear_of(s.points(), p, 0.05)) {
            continue;
        }
        let mask = rng.random::<u64>() & 0xf;
        let sig = BranchSignature::from_mask(mask, 4, base);
        let start = signed_value(&s, &sig.signs, base);

        // one turn flips exactly the signs of enclosed points
        let after = wermer::branch_eval(&s, &sig, &once).unwrap();
        let expected: Vec<i8> = s
            .points()
            .iter()
            .zip(&sig.signs)
            .map(|(a, sg)| if (a - c1).norm() < r1 { -sg } else { *sg })
            .collect();
        let flip_err = (after - signed_value(&s, &expected, base)).norm();
        let mono = wermer::monodromy(&s, &sig, &once).unwrap();
        let sign_ok = mono.signs == expected;

        let back = wermer::branch_eval(&s, &sig, &twice).unwrap();
        let order_err = (back - start).norm();

        let ab = wermer::branch_eval(&s, &sig, &once.clone().then(&other)).unwrap();
        let ba = wermer::branch_eval(&s, &sig, &other.clone().then(&once)).unwrap();
        let comm_err = (ab - ba).norm();

        let err = flip_err.max(order_err).max(comm_err);
        worst = worst.max(err);
        if err > MONODROMY_TOL || !sign_ok {
            failures += 1;
        }
        checked += 1;
    }
    outcome(failures == 0, format!("{checked} loops, {failures} failures, worst value gap {worst:.2e}"))
}

fn alpha_profile(s10: &EpsilonSchedule) -> Outcome {
    let coarse = wermer::alpha_profile(s10, 12, 0.05).unwrap();
    let fine = wermer::alpha_profile(s10, 12, 0.025).unwrap();
    let nonincreasing = coarse.windows(2).all(|w| w[1].alpha <= w[0].alpha);
    let q0 = wermer::q_zero(&coarse);
    let q0_fine = wermer::q_zero(&fine);
    let spread = coarse.iter().zip(&fine).map(|(a, b)| (a.alpha - b.alpha).abs() / b.alpha).fold(0.0, f64::max);
    outcome(
        nonincreasing && q0.is_some() && q0 == q0_fine && spread < ALPHA_DENSITY_TOL,
        format!("q0 = {q0:?} (fine {q0_fine:?}), nonincreasing {nonincreasing}, density gap {:.2}%", 100.0 * spread),
    )
}

fn convex_profile(build: &DomainBuild) -> Outcome {
    let n = build.config.horizon;
    let rep = profile::rho_check(&build.profile, &build.c, n, 0.01);
    let convex = rep.min_second_difference >= -CONVEXITY_TOL;
    let flat = rep.slope_at_zero.abs() <= SLOPE_TOL;
    let example = profile::build_rho1(&[0.5, 1.0, 3.0], 2).unwrap().rho1(2.0);
    outcome(
        convex && flat && rep.dominance_margin > 0.0 && rep.window_margin >= 0.0 && example == 3.0,
        format!(
            "N = {n}, min second difference {:.2e}, slope {:.1e}, dominance {:.3}, window {:.3}, example rho1(2) = {example}",
            rep.min_second_difference, rep.slope_at_zero, rep.dominance_margin, rep.window_margin
        ),
    )
}

fn sublevel_inclusion(build: &DomainBuild) -> Outcome {
    let t = Instant::now();
    let params = build.params();
    let mut hits = 0;
    let mut violations = 0;
    for n in 2..=6 {
        let d = (n as f64).exp() / 4.0;
        assert!(2.0 * d / (n as f64).exp() < 1.0);
        let audit = potential::sublevel_inclusion_audit(&params, n, d, build.rows[n - 1].kappa, INCLUSION_SAMPLES, SEED + n as u64).unwrap();
        hits += audit.hits;
        violations += audit.violations;
    }
    let (fast, time) = within(t.elapsed(), INCLUSION_BUDGET);
    outcome(violations == 0 && fast, format!("{hits} samples in F_d, {violations} outside the tube, {time}"))
}

fn vertical_beta(build: &DomainBuild) -> Outcome {
    let Some(q0) = build.audit.q0 else {
        return outcome(false, "no q0");
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for n in [q0, q0 + 1] {
        let spec = HnSampling { count: HN_DISKS, ..Default::default() };
        let coarse = HnSample::draw(&build.schedule, n, spec, SEED).unwrap();
        let fine = HnSample::draw(&build.schedule, n, HnSampling { cells: 2 * spec.cells, ..spec }, SEED).unwrap();
        let cal = disks::delta_from_samples(n, &[&coarse], 0.5).unwrap();
        let cal_fine = disks::delta_from_samples(n, &[&fine], 0.5).unwrap();

        let grid: Vec<f64> = (1..=40).map(|i| cal.delta_sup * 2.0 * i as f64 / 40.0).collect();
        let betas: Vec<f64> = grid.iter().map(|d| coarse.beta(*d).four).collect();
        let monotone = betas.windows(2).all(|w| w[1] >= w[0]);
        let at_delta = coarse.beta(cal.delta).four;
        let refine = (cal.delta_sup - cal_fine.delta_sup).abs() / cal_fine.delta_sup;
        let beta_refine = (at_delta - fine.beta(cal.delta).four).abs() / fine.beta(cal.delta).four.max(f64::MIN_POSITIVE);
        ok &= monotone && at_delta < 0.5 && refine < REFINEMENT_TOL && beta_refine < REFINEMENT_TOL;
        notes.push(format!(
            "n={n}: delta {:.4}, beta {at_delta:.3}, monotone {monotone}, refinement {:.1}%/{:.1}%",
            cal.delta,
            100.0 * refine,
            100.0 * beta_refine
        ));
    }
    outcome(ok, notes.join("; "))
}

fn harnack(build: &DomainBuild) -> Outcome {
    let params = build.params();
    let mut violations = 0;
    let mut errors = 0;
    let mut worst: f64 = 0.0;
    for i in 0..HARNACK_DISKS {
        let mut rng = seeds::stream(SEED, 9_000 + i as u64);
        let radius = rng.random_range(0.1..2.0);
        let report = disks::random_disk_into_omega(&params, radius, &mut rng).and_then(|d| disks::harnack_localize(&params, &d));
        match report {
            Ok(r) => {
                violations += r.violations;
                worst = worst.max(r.max_psi_ratio);
            }
            Err(_) => errors += 1,
        }
    }
    outcome(violations == 0 && errors == 0, format!("{HARNACK_DISKS} disks, {violations} violations, {errors} errors, max Psi/2Re zeta0 {worst:.3e}"))
}

fn harmonic_measure() -> Outcome {
    let t = Instant::now();
    let disk = SlitDisk::new(1.0, vec![]).unwrap();
    let origin = c(0.0, 0.0);
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    for (i, (start, length)) in [(0.0, PI / 2.0), (1.0, 1.0), (2.5, 3.0)].iter().enumerate() {
        let est = harmonic::harmonic_measure(&disk, BoundaryTarget::Arc { start: *start, length: *length }, origin, WALKERS, SEED + i as u64).unwrap();
        let z = (est.value - length / TAU).abs() / est.stderr;
        worst_z = worst_z.max(z);
        ok &= z <= 3.0;
        let rest = harmonic::harmonic_measure(&disk, BoundaryTarget::Arc { start: start + length, length: TAU - length }, origin, WALKERS, SEED + 10 + i as u64).unwrap();
        let sum_se = est.stderr.hypot(rest.stderr);
        ok &= (est.value + rest.value - 1.0).abs() <= 3.0 * sum_se;
    }
    let plain = harmonic::sh93_bound_check(&disk, WALKERS, SEED).unwrap();
    let slit = SlitDisk::new(1.0, vec![(c(0.4, 0.0), c(1.0, 0.0))]).unwrap();
    let slitted = harmonic::sh93_bound_check(&slit, WALKERS, SEED).unwrap();
    let (fast, time) = within(t.elapsed(), HARMONIC_BUDGET);
    outcome(
        ok && plain.holds && slitted.holds && fast,
        format!("worst arc z-score {worst_z:.2}, bound checks {}/{}, {time}", plain.holds, slitted.holds),
    )
}

fn kobayashi_brackets(build: &DomainBuild) -> Outcome {
    let t = Instant::now();
    let spec = FamilySpec::default();
    let zero = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let disk = kobayashi::kobayashi_upper(&Ball::unit_disk(), &[zero], &[one], &spec, SEED).unwrap().value;
    let disk_ok = (disk - 1.0).abs() <= KOBAYASHI_TOL;
    let r = 3.0;
    let ball = Ball::origin(2, r).unwrap();
    let ball_up = kobayashi::kobayashi_upper(&ball, &[zero, zero], &[one, zero], &spec, SEED).unwrap().value;
    let ball_ok = (ball_up - 1.0 / r).abs() <= KOBAYASHI_TOL;

    let params = build.params();
    let z = c(0.3, 0.2);
    // on a branch of the set, so Ψ = 0 and ζ = 1 lies in the domain
    let w = BranchTerms::at(&params.schedule, z).value(0);
    let zeta = one;
    let projected = kobayashi::kobayashi_lower_projection(&params, &[z, w, zeta], &[zero, zero, one]).unwrap();
    // Cayley map ζ ↦ (ζ−1)/(ζ+1) onto the disk
    let cayley = (zeta - 1.0) / (zeta + 1.0);
    let derivative = 2.0 / ((zeta + 1.0) * (zeta + 1.0));
    let oracle = derivative.norm() / (1.0 - cayley.norm_sqr());
    let half_ok = projected == oracle && projected == 0.5;

    let domain = OmegaPsi { params: params.clone() };
    let linear = FamilySpec {
        families: vec![MapFamily::Linear],
        boundary_points: 32,
        interior_points: 64,
        bisection_steps: 32,
        recheck_factor: 4,
        ..FamilySpec::default()
    };
    let mut inverted = 0;
    let mut sampled = 0;
    let mut rng = seeds::stream(SEED, 11);
    while sampled < OMEGA_SAMPLES {
        let Some(p) = domain.sample(&mut rng, 1e6) else { continue };
        let v = vec![seeds::complex_normal(&mut rng), seeds::complex_normal(&mut rng), seeds::complex_normal(&mut rng)];
        let lower = kobayashi::kobayashi_lower_projection(&params, &[p[0], p[1], p[2]], &[v[0], v[1], v[2]]).unwrap();
        let upper = kobayashi::kobayashi_upper(&domain, &p, &v, &linear, SEED + sampled as u64).unwrap().value;
        if lower > upper * (1.0 + 1e-12) {
            inverted += 1;
        }
        sampled += 1;
    }
    outcome(
        disk_ok && ball_ok && half_ok && inverted == 0,
        format!(
            "disk {disk:.6}, ball 1/R {ball_up:.6}, half-plane {projected} vs {oracle}, {inverted} of {sampled} brackets inverted, {:.1}s",
            t.elapsed().as_secs_f64()
        ),
    )
}

fn exclusion(build8: &Result<DomainBuild, String>, started: Instant) -> Outcome {
    let build = match build8 {
        Ok(b) => b,
        Err(e) => return outcome(false, format!("m = 8 build failed: {e}")),
    };
    let params = build.params();
    let spec = ExclusionSpec::default();
    let mut radii = Vec::new();
    let mut all_found = true;
    let mut rechecked = true;
    for d in [0.5, 1.0, 2.0] {
        let rep = disks::disk_exclusion_search(&params, d, &spec, SEED).unwrap();
        all_found &= rep.found && rep.best_radius.is_finite() && rep.best_radius > 0.0;
        rechecked &= rep.recheck_passed;
        radii.push(rep.best_radius);
    }
    let nondecreasing = radii.windows(2).all(|w| w[1] >= w[0]);
    let (fast, time) = within(started.elapsed(), EXCLUSION_BUDGET);
    outcome(
        all_found && nondecreasing && rechecked && fast,
        format!("r(d) = {radii:?}, nondecreasing {nondecreasing}, rechecks {rechecked}, {time} including the m = 8 build"),
    )
}

fn determinism() -> Outcome {
    let config = RunConfig {
        m: 4,
        horizon: 5,
        circle_samples: 512,
        alpha_spacing: 0.1,
        shell: ShellGrid { z_spacing: 0.5, theta_samples: 8, margin: 0.25 },
        hn: HnSampling { count: 8, cells: 32, ..Default::default() },
        audit_samples: 1000,
        audit_n_max: 4,
        shift_samples: 256,
        seed: SEED,
        ..RunConfig::default()
    };
    let root = tempfile::tempdir().unwrap();
    let mut listings = Vec::new();
    for run in ["first", "second"] {
        let dir = root.path().join(run);
        let build = pipeline::pipeline_build_domain(&config).unwrap();
        pipeline::write_artifacts(&build, &dir).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        listings.push(files);
    }
    let same = listings[0] == listings[1];
    outcome(same, format!("{} artifacts compared byte for byte", listings[0].len()))
}

fn main() {
    // optional criterion numbers select a subset; cargo's own flags are ignored
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| only.is_empty() || only.contains(&id);
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut record = |id: usize, name: &str, o: Outcome| {
        println!("[{}] {id:>2} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, o));
    };

    if wanted(1) {
        record(1, "spiral exactness", spiral());
    }
    if wanted(2) {
        record(2, "schedule certification", schedule_certification());
    }
    if wanted(3) {
        let s8 = wermer::build_schedule(8, 0.5, 2048).expect("m = 8 schedule");
        record(3, "shift error", shift_errors(&s8));
    }
    if wanted(4) {
        record(4, "monodromy laws", monodromy_laws());
    }
    if wanted(5) {
        let s10 = wermer::build_schedule(10, 0.5, 2048).expect("m = 10 schedule");
        record(5, "horizontal derivative bound", alpha_profile(&s10));
    }

    if (6..=11).any(wanted) {
        let build = pipeline::pipeline_build_domain(&RunConfig { seed: SEED, ..RunConfig::default() }).expect("default domain build");
        if wanted(6) {
            record(6, "convex profile", convex_profile(&build));
        }
        if wanted(7) {
            record(7, "sublevel inclusion", sublevel_inclusion(&build));
        }
        if wanted(8) {
            record(8, "vertical disk measure", vertical_beta(&build));
        }
        if wanted(9) {
            record(9, "harnack localisation", harnack(&build));
        }
        if wanted(10) {
            record(10, "harmonic measure", harmonic_measure());
        }
        if wanted(11) {
            record(11, "kobayashi brackets", kobayashi_brackets(&build));
        }
    }

    if wanted(12) {
        let started = Instant::now();
        let coarse = RunConfig {
            m: 8,
            shell: ShellGrid { z_spacing: 0.5, theta_samples: 8, ..ShellGrid::default() },
            seed: SEED,
            ..RunConfig::default()
        };
        let build8 = pipeline::pipeline_build_domain(&coarse).map_err(|e| e.to_string());
        record(12, "disk exclusion", exclusion(&build8, started));
    }
    if wanted(13) {
        record(13, "determinism", determinism());
    }

    let failed: Vec<usize> = results.iter().filter(|r| !r.1.passed).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing: {failed:?}");
        std::process::exit(1);
    }
}
