//! End-to-end domain build: schedule, α and q₀, κ(n), q(n), δ(n), q̃(n),
//! c(n), the convex profile, audits, and the persisted run artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::disks::{self, DeltaCalibration, ExclusionSpec, HnSample, HnSampling};
use crate::potential::{self, DomainParams, InclusionAudit, QCalibration, ShellGrid};
use crate::profile::{self, ConvexProfile, ProfileCheckReport};
use crate::wermer::{self, AlphaEstimate, BranchTerms, CertificationReport, EpsilonSchedule, ShiftReport};
use crate::{lattice, Error, Result};

pub const SCHEDULE_FILE: &str = "schedule.json";
pub const PROFILE_FILE: &str = "profile.json";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const AUDIT_FILE: &str = "audit.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Tolerance for the tube-shift audit, relative to `ε_p √r_p`.
pub const SHIFT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub m: usize,
    pub safety: f64,
    /// Circle samples for κ_k during the schedule build.
    pub circle_samples: usize,
    /// Horizon N of the profile.
    pub horizon: usize,
    pub alpha_spacing: f64,
    pub shell: ShellGrid,
    pub hn: HnSampling,
    pub delta_safety: f64,
    /// Smallest step of the increasing envelope of c.
    pub envelope_step: f64,
    pub profile_step: f64,
    pub audit_samples: usize,
    pub audit_n_max: usize,
    pub shift_samples: usize,
    pub seed: u64,
    /// Load the schedule from this file instead of building it.
    pub schedule_file: Option<PathBuf>,
    pub exclusion_d: Vec<f64>,
    pub exclusion: ExclusionSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: 6,
            safety: 0.5,
            circle_samples: wermer::DEFAULT_CIRCLE_SAMPLES,
            horizon: 10,
            alpha_spacing: 0.05,
            shell: ShellGrid::default(),
            hn: HnSampling::default(),
            delta_safety: 0.5,
            envelope_step: 0.01,
            profile_step: 0.01,
            audit_samples: 10_000,
            audit_n_max: 6,
            shift_samples: 512,
            seed: 1,
            schedule_file: None,
            exclusion_d: vec![0.5, 1.0, 2.0],
            exclusion: ExclusionSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("m", self.m),
            ("circle_samples", self.circle_samples),
            ("horizon", self.horizon),
            ("shell.theta_samples", self.shell.theta_samples),
            ("hn.count", self.hn.count),
            ("hn.cells", self.hn.cells),
            ("audit_samples", self.audit_samples),
            ("shift_samples", self.shift_samples),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        let reals = [
            ("alpha_spacing", self.alpha_spacing),
            ("shell.z_spacing", self.shell.z_spacing),
            ("envelope_step", self.envelope_step),
            ("profile_step", self.profile_step),
        ];
        if let Some((name, _)) = reals.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.m < 2 || self.m > 26 {
            return Err(Error::invalid("m must lie in 2..=26"));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) || !(self.delta_safety > 0.0 && self.delta_safety <= 1.0) {
            return Err(Error::invalid("safety factors must lie in (0, 1)"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Stage name attached to pipeline errors.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        exit_code(&self.source)
    }
}

/// 1 usage, 2 audit or invariant failure, 3 numerical failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::MissingArtifact(_) | Error::Json(_) | Error::Io(_) => 1,
        Error::ScheduleInvariant(_) | Error::NonMonotone { .. } => 2,
        _ => 3,
    }
}

fn stage<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError { stage, source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub stage: String,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub n: usize,
    pub kappa: f64,
    pub q: f64,
    pub delta: Option<f64>,
    pub q_tilde: Option<f64>,
    pub c_raw: f64,
    pub c: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    pub m: usize,
    pub horizon: usize,
    pub q0: Option<usize>,
    pub envelope_applied: bool,
    pub certification: CertificationReport,
    pub alphas: Vec<AlphaEstimate>,
    pub q: Vec<QCalibration>,
    pub deltas: Vec<DeltaCalibration>,
    pub profile_check: ProfileCheckReport,
    pub inclusion: Vec<InclusionAudit>,
    pub shifts: Vec<ShiftReport>,
    pub checks: Vec<AuditCheck>,
}

#[derive(Debug, Clone)]
pub struct DomainBuild {
    pub config: RunConfig,
    pub schedule: EpsilonSchedule,
    pub profile: ConvexProfile,
    pub rows: Vec<CalibrationRow>,
    /// `c(0), c(1), …, c(N+2)` with `c(0) = c(1)/2`.
    pub c: Vec<f64>,
    pub audit: AuditReport,
}

impl DomainBuild {
    pub fn params(&self) -> DomainParams {
        DomainParams::new(self.schedule.clone(), self.profile.clone())
    }
}

fn check(stage: &str, name: impl Into<String>, passed: bool, value: f64, bound: f64, detail: impl Into<String>) -> AuditCheck {
    AuditCheck { stage: stage.into(), name: name.into(), passed, value, bound, detail: detail.into() }
}

fn load_schedule(path: &Path) -> Result<EpsilonSchedule> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::ScheduleInvariant(format!("{}: {e}", path.display())))
}

/// Runs every stage. Audit failures are recorded in the report; stage
/// errors abort with the stage name.
pub fn pipeline_build_domain(config: &RunConfig) -> std::result::Result<DomainBuild, StageError> {
    stage("config", config.validate())?;
    let n_top = config.horizon + 2;

    let schedule = match &config.schedule_file {
        Some(path) => stage("schedule", load_schedule(path))?,
        None => stage("schedule", wermer::build_schedule(config.m, config.safety, config.circle_samples))?,
    };
    let certification = schedule.certify();
    stage("schedule", certification.clone().into_result())?;
    let mut checks = vec![check("schedule", "certified", certification.ok, certification.min_margin, 0.0, "minimum margin of the construction inequalities")];

    let alphas = stage("alpha", wermer::alpha_profile(&schedule, n_top, config.alpha_spacing))?;
    let q0 = wermer::q_zero(&alphas);
    checks.push(check("alpha", "q0_found", q0.is_some(), q0.map_or(f64::NAN, |q| q as f64), n_top as f64, "alpha < 1/2 from q0 on"));

    let kappas: Vec<f64> = stage("kappa", (1..=n_top).map(|n| potential::kappa_region_floored(&schedule, n)).collect())?;
    checks.push(check(
        "kappa",
        "positive",
        kappas.iter().all(|k| *k > 0.0 && k.is_finite()),
        kappas.iter().copied().fold(f64::INFINITY, f64::min),
        0.0,
        "kappa(n) for n = 1..N+2",
    ));

    let q: Vec<QCalibration> = stage("q", (1..=n_top).map(|n| potential::calibrate_q(&schedule, n, kappas[n - 1], config.shell)).collect())?;

    let first_delta = q0.unwrap_or(usize::MAX);
    let mut samples: BTreeMap<usize, HnSample> = BTreeMap::new();
    let mut deltas = Vec::new();
    for n in first_delta..=n_top {
        for k in disks::delta_window(n) {
            if !samples.contains_key(&k) {
                let s = stage("delta", HnSample::draw(&schedule, k, config.hn, config.seed))?;
                samples.insert(k, s);
            }
        }
        let refs: Vec<&HnSample> = disks::delta_window(n).map(|k| &samples[&k]).collect();
        deltas.push(stage("delta", disks::delta_from_samples(n, &refs, config.delta_safety))?);
    }
    for d in &deltas {
        let worst = d.betas.iter().map(|b| b.1).fold(0.0, f64::max);
        checks.push(check("delta", format!("beta_below_half_n{}", d.n), worst < 0.5, worst, 0.5, "max sampled beta_k at delta(n)"));
    }

    let mut q_tilde: Vec<Option<f64>> = vec![None; n_top];
    for d in &deltas {
        let n = d.n;
        let tube = d.delta.min(kappas[n - 1]);
        let qt = stage("q_tilde", potential::calibrate_q(&schedule, n, tube, config.shell))?;
        q_tilde[n - 1] = Some(qt.q.max(q[n - 1].q));
    }

    let c_raw: Vec<f64> = stage(
        "c",
        (1..=n_top)
            .map(|n| potential::calibrate_c(n, first_delta, q[n - 1].q, q_tilde[n - 1].unwrap_or(q[n - 1].q)))
            .collect(),
    )?;
    let envelope_applied = potential::check_increasing(&c_raw, 1).is_err();
    let c_env = potential::increasing_envelope(&c_raw, config.envelope_step);
    stage("c", potential::check_increasing(&c_env, 1))?;
    let mut c = vec![0.5 * c_env[0]];
    c.extend(&c_env);
    checks.push(check("c", "strictly_increasing", true, c_env.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min), 0.0, if envelope_applied { "after increasing envelope" } else { "raw sequence" }));

    // the profile dominates c two steps ahead so the window condition holds
    let profile = stage("profile", profile::build_rho1(&c[2..], config.horizon))?;
    let profile_check = profile::rho_check(&profile, &c, config.horizon, config.profile_step);
    checks.push(check("profile", "convex", profile_check.min_second_difference >= -profile::CONVEXITY_SLACK, profile_check.min_second_difference, -profile::CONVEXITY_SLACK, "min second difference"));
    checks.push(check("profile", "slope_at_zero", profile_check.slope_at_zero.abs() <= profile::SLOPE_TOLERANCE, profile_check.slope_at_zero, profile::SLOPE_TOLERANCE, "forward difference at 0"));
    checks.push(check("profile", "dominance", profile_check.dominance_margin > 0.0, profile_check.dominance_margin, 0.0, "rho > c(n) on (n, n+1]"));
    checks.push(check("profile", "window", profile_check.window_margin >= 0.0, profile_check.window_margin, 0.0, "rho >= c(n) on [n-1, n+2]"));

    let params = DomainParams::new(schedule.clone(), profile.clone());
    let mut inclusion = Vec::new();
    for n in 2..=config.audit_n_max.min(config.horizon) {
        let d = (n as f64).exp() / 4.0;
        let audit = stage("inclusion", potential::sublevel_inclusion_audit(&params, n, d, kappas[n - 1], config.audit_samples, config.seed ^ n as u64))?;
        checks.push(check("inclusion", format!("n{n}"), audit.violations == 0, audit.violations as f64, 0.0, format!("{} of {} samples in F_d", audit.hits, audit.samples)));
        inclusion.push(audit);
    }

    let mut shifts = Vec::new();
    for p in 2..=schedule.m().min(8) {
        let level = stage("shift", schedule.truncate(p))?;
        let scale = schedule.shift_scale(p);
        let rep = stage("shift", wermer::shift_error(&level, p, scale / 2.0, config.shift_samples))?;
        let ok = rep.theta >= scale * (1.0 - SHIFT_TOLERANCE);
        checks.push(check("shift", format!("p{p}"), ok, rep.theta, scale, "shift error of the tube at delta = eps_p sqrt(r_p) / 2"));
        shifts.push(rep);
    }

    let rows = (1..=n_top)
        .map(|n| {
            let delta = deltas.iter().find(|d| d.n == n).map(|d| d.delta);
            CalibrationRow {
                n,
                kappa: kappas[n - 1],
                q: q[n - 1].q,
                delta,
                q_tilde: q_tilde[n - 1],
                c_raw: c_raw[n - 1],
                c: c_env[n - 1],
                alpha: alphas[n - 1].alpha,
            }
        })
        .collect();
    let passed = checks.iter().all(|c| c.passed);
    let audit = AuditReport {
        passed,
        m: schedule.m(),
        horizon: config.horizon,
        q0,
        envelope_applied,
        certification,
        alphas,
        q,
        deltas,
        profile_check,
        inclusion,
        shifts,
        checks,
    };
    Ok(DomainBuild { config: config.clone(), schedule, profile, rows, c, audit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub files: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV text with a header row and LF line endings.
pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Component(e.to_string()))
}

/// Writes a header-only file for an empty table.
pub fn write_csv_header(path: &Path, columns: &[&str]) -> Result<()> {
    fs::write(path, format!("{}\n", columns.join(",")))?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Component(format!("csv: {other:?}")),
    }
}

/// Manifest over the listed files of `dir`.
pub fn write_manifest(dir: &Path, command: &str, config: &RunConfig, files: &[&str]) -> Result<Manifest> {
    let mut hashes = BTreeMap::new();
    for f in files {
        hashes.insert(f.to_string(), sha256_file(&dir.join(f))?);
    }
    let manifest = Manifest {
        tool: "wermerlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_hash: config.hash(),
        seed: config.seed,
        files: hashes,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Persists `schedule.json`, `profile.json`, `calibration.csv`,
/// `audit.json` and the manifest.
pub fn write_artifacts(build: &DomainBuild, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join(SCHEDULE_FILE), &build.schedule)?;
    write_json(&dir.join(PROFILE_FILE), &build.profile)?;
    write_csv(&dir.join(CALIBRATION_FILE), &build.rows)?;
    write_json(&dir.join(AUDIT_FILE), &build.audit)?;
    write_manifest(dir, "build", &build.config, &[SCHEDULE_FILE, PROFILE_FILE, CALIBRATION_FILE, AUDIT_FILE])
}

fn read_artifact<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reloads the domain parameters written by [`write_artifacts`].
pub fn load_domain(dir: &Path) -> Result<DomainParams> {
    let schedule: EpsilonSchedule = read_artifact(dir, SCHEDULE_FILE)?;
    let profile: ConvexProfile = read_artifact(dir, PROFILE_FILE)?;
    Ok(DomainParams::new(schedule, profile))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Alpha,
    Beta,
    Branches,
    Exclusion,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(PlotKind::Alpha),
            "beta" => Ok(PlotKind::Beta),
            "branches" => Ok(PlotKind::Branches),
            "exclusion" => Ok(PlotKind::Exclusion),
            _ => Err(Error::invalid(format!("unknown plot kind {s}"))),
        }
    }
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Alpha => "alpha",
            PlotKind::Beta => "beta",
            PlotKind::Branches => "branches",
            PlotKind::Exclusion => "exclusion",
        }
    }

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::Alpha => &["n", "alpha", "grid_density"],
            PlotKind::Beta => &["n", "delta", "beta", "disks_sampled"],
            PlotKind::Branches => &["re_z", "im_z", "re_w", "im_w", "signature"],
            PlotKind::Exclusion => &["d", "best_radius", "found", "trials", "tube_escape", "frame_exit", "shift_obstruction", "sublevel"],
        }
    }
}

#[derive(Serialize)]
struct AlphaRow {
    n: usize,
    alpha: f64,
    grid_density: f64,
}

#[derive(Serialize)]
struct BetaRow {
    n: usize,
    delta: f64,
    beta: f64,
    disks_sampled: usize,
}

#[derive(Serialize)]
struct BranchRow {
    re_z: f64,
    im_z: f64,
    re_w: f64,
    im_w: f64,
    signature: String,
}

#[derive(Serialize)]
struct ExclusionRow {
    d: f64,
    best_radius: f64,
    found: bool,
    trials: usize,
    tube_escape: usize,
    frame_exit: usize,
    shift_obstruction: usize,
    sublevel: usize,
}

fn plot_script(kind: PlotKind) -> String {
    let (x, y, extra) = match kind {
        PlotKind::Alpha => ("n", "alpha", "plt.axhline(0.5, ls='--', c='k')\n"),
        PlotKind::Beta => ("delta", "beta", "plt.xscale('log')\n"),
        PlotKind::Branches => ("re_w", "im_w", ""),
        PlotKind::Exclusion => ("d", "best_radius", ""),
    };
    let plot = match kind {
        PlotKind::Beta => format!("for n, g in df.groupby('n'):\n    plt.plot(g['{x}'], g['{y}'], marker='.', label=f'n={{n}}')\nplt.legend()\n"),
        PlotKind::Branches => format!("plt.scatter(df['{x}'], df['{y}'], s=1)\n"),
        _ => format!("plt.plot(df['{x}'], df['{y}'], marker='o')\n"),
    };
    format!(
        "import pandas as pd\nimport matplotlib.pyplot as plt\n\ndf = pd.read_csv('{name}.csv')\n{plot}{extra}plt.xlabel('{x}')\nplt.ylabel('{y}')\nplt.savefig('{name}.png', dpi=150)\n",
        name = kind.name()
    )
}

/// Writes `<kind>.csv` and `plot_<kind>.py` to `out` from the artifacts in
/// `artifacts`. Returns the written paths.
pub fn emit_plot_data(kind: PlotKind, artifacts: &Path, out: &Path, config: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let schedule: EpsilonSchedule = read_artifact(artifacts, SCHEDULE_FILE)?;
    let csv_path = out.join(format!("{}.csv", kind.name()));
    match kind {
        PlotKind::Alpha => {
            let rows: Vec<AlphaRow> = wermer::alpha_profile(&schedule, config.horizon + 2, config.alpha_spacing)?
                .into_iter()
                .map(|a| AlphaRow { n: a.n, alpha: a.alpha, grid_density: 1.0 / a.grid_spacing })
                .collect();
            write_csv(&csv_path, &rows)?;
        }
        PlotKind::Beta => {
            let mut rows = Vec::new();
            for n in 1..=config.horizon {
                let sample = HnSample::draw(&schedule, n, config.hn, config.seed)?;
                for j in 0..=24 {
                    let delta = 1e-4 * 10f64.powf(j as f64 / 6.0);
                    rows.push(BetaRow { n, delta, beta: sample.beta(delta).four, disks_sampled: config.hn.count });
                }
            }
            write_csv(&csv_path, &rows)?;
        }
        PlotKind::Branches => {
            let mut rows = Vec::new();
            for n in 1..=3 {
                for z in lattice::square_perimeter(n as f64 + 0.5, 0.25) {
                    for (mask, w) in BranchTerms::at(&schedule, z).values().iter().enumerate() {
                        let signature: String = (0..schedule.m()).map(|j| if mask >> j & 1 == 1 { '-' } else { '+' }).collect();
                        rows.push(BranchRow { re_z: z.re, im_z: z.im, re_w: w.re, im_w: w.im, signature });
                    }
                }
            }
            write_csv(&csv_path, &rows)?;
        }
        PlotKind::Exclusion => {
            let params = load_domain(artifacts)?;
            let mut rows = Vec::new();
            for d in &config.exclusion_d {
                let rep = disks::disk_exclusion_search(&params, *d, &config.exclusion, config.seed)?;
                rows.push(ExclusionRow {
                    d: *d,
                    best_radius: rep.best_radius,
                    found: rep.found,
                    trials: rep.trials,
                    tube_escape: rep.failures.tube_escape,
                    frame_exit: rep.failures.frame_exit,
                    shift_obstruction: rep.failures.shift_obstruction,
                    sublevel: rep.failures.sublevel,
                });
            }
            if rows.is_empty() {
                write_csv_header(&csv_path, kind.columns())?;
            } else {
                write_csv(&csv_path, &rows)?;
            }
        }
    }
    let script_path = out.join(format!("plot_{}.py", kind.name()));
    fs::write(&script_path, plot_script(kind))?;
    Ok(vec![csv_path, script_path])
}
