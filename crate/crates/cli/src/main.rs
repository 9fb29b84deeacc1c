use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use wermerlab::disks::{self, ExclusionSpec, HnSample};
use wermerlab::harmonic::{self, AntipeakSampling, BoundaryTarget, MeanValueSpec, SlitDisk};
use wermerlab::kobayashi::{self, Ball, Domain, FamilySpec, HalfPlane, OmegaEps, OmegaPsi};
use wermerlab::pipeline::{self, PlotKind, RunConfig, StageError};
use wermerlab::potential::{self, DomainParams, SublevelRegion};
use wermerlab::profile::{self, ConvexProfile};
use wermerlab::wermer::{self, EpsilonSchedule};
use wermerlab::{lattice, seeds, Complex64, HoloDisk};

#[derive(Parser)]
#[command(name = "wermerlab", version, about = "Wermer-type sets, rigid domains and Kobayashi diagnostics")]
struct Cli {
    /// Run configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; results go to files plus a manifest instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spiral enumeration of the Gaussian integers.
    Lattice {
        #[command(subcommand)]
        cmd: LatticeCmd,
    },
    /// Schedules, α(n) and shift errors.
    Wermer {
        #[command(subcommand)]
        cmd: WermerCmd,
    },
    /// φ_m and Ψ at a point.
    Potential {
        #[command(subcommand)]
        cmd: PotentialCmd,
    },
    /// Membership in Ω_Ψ and F_d.
    Domain {
        #[command(subcommand)]
        cmd: DomainCmd,
    },
    /// q(n) and c(n).
    Calibrate {
        #[command(subcommand)]
        cmd: CalibrateCmd,
    },
    /// The convex profile ρ.
    Rho {
        #[command(subcommand)]
        cmd: RhoCmd,
    },
    /// β, δ(n), Harnack localisation and the exclusion search.
    Disks {
        #[command(subcommand)]
        cmd: DisksCmd,
    },
    /// Kobayashi pseudometric brackets.
    Kob {
        #[command(subcommand)]
        cmd: KobCmd,
    },
    /// Harmonic measure.
    Hm {
        #[command(subcommand)]
        cmd: HmCmd,
    },
    /// Antipeak candidate checks.
    Antipeak {
        #[command(subcommand)]
        cmd: AntipeakCmd,
    },
    /// Mean-value certificate.
    Mvcert {
        #[command(subcommand)]
        cmd: MvcertCmd,
    },
    /// Full domain build with audits; writes the run artifacts.
    Build,
    /// Plot data (CSV plus a plotting script) from run artifacts.
    Plot {
        #[arg(long)]
        kind: PlotKind,
        /// Directory holding the build artifacts (defaults to --out).
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LatticeCmd {
    Spiral {
        #[arg(long)]
        n: usize,
    },
}

#[derive(Args, Clone)]
struct ScheduleSource {
    /// Schedule JSON; built from the configuration when absent.
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Subcommand)]
enum WermerCmd {
    Schedule {
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        safety: Option<f64>,
    },
    Alpha {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        spacing: Option<f64>,
        #[command(flatten)]
        src: ScheduleSource,
    },
    Shift {
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        #[arg(long, default_value_t = 2048)]
        samples: usize,
        #[command(flatten)]
        src: ScheduleSource,
    },
}

#[derive(Args, Clone)]
struct DomainSource {
    /// Directory with schedule.json and profile.json (defaults to --out).
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PotentialCmd {
    Phi {
        #[arg(long, allow_hyphen_values = true)]
        z: Complex64,
        #[arg(long, allow_hyphen_values = true)]
        w: Complex64,
        #[command(flatten)]
        src: ScheduleSource,
    },
    Psi {
        #[arg(long, allow_hyphen_values = true)]
        z: Complex64,
        #[arg(long, allow_hyphen_values = true)]
        w: Complex64,
        #[command(flatten)]
        src: DomainSource,
    },
}

#[derive(Subcommand)]
enum DomainCmd {
    Contains {
        #[arg(long, allow_hyphen_values = true)]
        z: Complex64,
        #[arg(long, allow_hyphen_values = true)]
        w: Complex64,
        #[arg(long, allow_hyphen_values = true)]
        zeta: Option<Complex64>,
        /// Test F_d instead of Ω_Ψ.
        #[arg(long)]
        d: Option<f64>,
        #[command(flatten)]
        src: DomainSource,
    },
}

#[derive(Subcommand)]
enum CalibrateCmd {
    Q {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        kappa: Option<f64>,
        #[command(flatten)]
        src: ScheduleSource,
    },
    C {
        #[arg(long)]
        n: usize,
    },
}

#[derive(Subcommand)]
enum RhoCmd {
    /// Builds ρ from c(0), c(1), …, c(N) (JSON array or one value per line).
    Build {
        #[arg(long)]
        c_file: PathBuf,
        #[arg(long = "N")]
        horizon: Option<usize>,
    },
    Eval {
        #[arg(long, allow_hyphen_values = true)]
        t: Vec<f64>,
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    Check {
        #[arg(long = "N")]
        horizon: usize,
        #[arg(long)]
        c_file: PathBuf,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
}

#[derive(Subcommand)]
enum DisksCmd {
    Beta {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        delta: f64,
        #[command(flatten)]
        src: ScheduleSource,
    },
    DeltaN {
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        src: ScheduleSource,
    },
    Exclude {
        #[arg(long)]
        d: f64,
        /// Largest radius tried.
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        src: DomainSource,
    },
    Harnack {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[command(flatten)]
        src: DomainSource,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum DomainKind {
    Disk,
    Ball,
    HalfPlane,
    OmegaEps,
    OmegaPsi,
}

#[derive(Args, Clone)]
struct MetricArgs {
    #[arg(long, value_enum, default_value = "disk")]
    domain: DomainKind,
    /// Radius of the ball or ε of Ω_ε.
    #[arg(long, default_value_t = 1.0)]
    size: f64,
    /// One complex coordinate per flag, e.g. `--point 0.3+0.1i`.
    #[arg(long, allow_hyphen_values = true, required = true)]
    point: Vec<Complex64>,
    #[arg(long, allow_hyphen_values = true, required = true)]
    dir: Vec<Complex64>,
    #[command(flatten)]
    src: DomainSource,
}

#[derive(Subcommand)]
enum KobCmd {
    Upper(MetricArgs),
    Lower(MetricArgs),
}

#[derive(Subcommand)]
enum HmCmd {
    Estimate {
        /// Disk radius.
        #[arg(long, default_value_t = 1.0)]
        domain: f64,
        /// `start,length` in radians; the whole circle when absent.
        #[arg(long)]
        arc: Option<String>,
        #[arg(long, allow_hyphen_values = true, default_value = "0")]
        p: Complex64,
        #[arg(long, default_value_t = 100_000)]
        walkers: usize,
        #[arg(long)]
        slits: Option<String>,
    },
    Sh93 {
        #[arg(long)]
        k: f64,
        /// Segments `x1,y1,x2,y2` separated by `;`.
        #[arg(long)]
        slits: Option<String>,
        #[arg(long, default_value_t = 100_000)]
        walkers: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum AntipeakDomain {
    OmegaEps,
    HalfPlane,
    OmegaPsi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Candidate {
    /// `1/|z|`.
    InvZ,
    /// `|e^{-ζ}|`.
    ExpNeg,
    /// `1/(1 + Re ζ − Ψ(z, w))`.
    PsiGap,
}

#[derive(Subcommand)]
enum AntipeakCmd {
    Check {
        #[arg(long, value_enum)]
        domain: AntipeakDomain,
        #[arg(long, value_enum)]
        phi: Candidate,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 5.0, 10.0, 50.0])]
        radii: Vec<f64>,
        #[command(flatten)]
        src: DomainSource,
    },
}

#[derive(Subcommand)]
enum MvcertCmd {
    /// Line disks `λ ↦ (z₀ + λ, 0)` over Δ_k into Ω_ε with φ = 1/|z|.
    Run {
        #[arg(long)]
        k: f64,
        #[arg(long = "R")]
        big_r: f64,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long, default_value_t = 2.0)]
        z0: f64,
        #[arg(long, default_value_t = 20_000)]
        walkers: usize,
        #[arg(long, default_value_t = 128)]
        cells: usize,
    },
}

/// A named result: printed to stdout, or written under `--out`.
struct Output {
    name: String,
    text: String,
}

fn csv_out<T: Serialize>(name: &str, rows: &[T]) -> anyhow::Result<Output> {
    Ok(Output { name: name.into(), text: pipeline::to_csv_string(rows)? })
}

fn json_out<T: Serialize>(name: &str, value: &T) -> anyhow::Result<Output> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(Output { name: name.into(), text })
}

/// Error carrying an explicit exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

struct Ctx {
    config: RunConfig,
    out: Option<PathBuf>,
}

impl Ctx {
    fn schedule(&self, src: &ScheduleSource) -> anyhow::Result<EpsilonSchedule> {
        match &src.schedule {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|_| wermerlab::Error::MissingArtifact(path.display().to_string()))?;
                Ok(serde_json::from_str(&text).map_err(|e| wermerlab::Error::ScheduleInvariant(e.to_string()))?)
            }
            None => Ok(wermer::build_schedule(self.config.m, self.config.safety, self.config.circle_samples)?),
        }
    }

    fn domain_dir(&self, src: &DomainSource) -> anyhow::Result<PathBuf> {
        src.artifacts
            .clone()
            .or_else(|| self.out.clone())
            .ok_or_else(|| anyhow!(wermerlab::Error::InvalidArgument("pass --artifacts DIR with schedule.json and profile.json".into())))
    }

    fn params(&self, src: &DomainSource) -> anyhow::Result<DomainParams> {
        Ok(pipeline::load_domain(&self.domain_dir(src)?)?)
    }
}

fn complex_json(z: Complex64) -> serde_json::Value {
    json!([z.re, z.im])
}

fn parse_slits(text: Option<&str>) -> anyhow::Result<Vec<(Complex64, Complex64)>> {
    let Some(text) = text else { return Ok(vec![]) };
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|seg| {
            let v: Vec<f64> = seg.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().with_context(|| format!("bad slit {seg}"))?;
            if v.len() != 4 {
                bail!(wermerlab::Error::InvalidArgument(format!("slit {seg} needs x1,y1,x2,y2")));
            }
            Ok((Complex64::new(v[0], v[1]), Complex64::new(v[2], v[3])))
        })
        .collect()
}

fn read_c_file(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|_| wermerlab::Error::MissingArtifact(path.display().to_string()))?;
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse::<f64>().with_context(|| format!("bad value {l}")))
        .collect()
}

fn load_profile(ctx: &Ctx, path: Option<&PathBuf>) -> anyhow::Result<ConvexProfile> {
    let path = match path {
        Some(p) => p.clone(),
        None => ctx.domain_dir(&DomainSource { artifacts: None })?.join(pipeline::PROFILE_FILE),
    };
    let text = fs::read_to_string(&path).map_err(|_| wermerlab::Error::MissingArtifact(path.display().to_string()))?;
    Ok(serde_json::from_str(&text)?)
}

fn run(cli: Cli, ctx: &Ctx) -> anyhow::Result<Vec<Output>> {
    let cfg = &ctx.config;
    let seed = cfg.seed;
    match cli.command {
        Command::Lattice { cmd: LatticeCmd::Spiral { n } } => {
            #[derive(Serialize)]
            struct Row {
                index: usize,
                re: i64,
                im: i64,
            }
            let rows: Vec<Row> = (1..=n)
                .map(|i| lattice::spiral_coords(i).map(|(re, im)| Row { index: i, re, im }))
                .collect::<Result<_, _>>()?;
            Ok(vec![csv_out("spiral.csv", &rows)?])
        }
        Command::Wermer { cmd } => match cmd {
            WermerCmd::Schedule { m, safety } => {
                let s = wermer::build_schedule(m.unwrap_or(cfg.m), safety.unwrap_or(cfg.safety), cfg.circle_samples)?;
                let cert = s.certify();
                #[derive(Serialize)]
                struct Row {
                    k: usize,
                    eps: f64,
                    radius: Option<f64>,
                    kappa: Option<f64>,
                }
                let rows: Vec<Row> = (1..=s.m())
                    .map(|k| Row { k, eps: s.eps(k), radius: (k >= 2).then(|| s.radius(k)), kappa: (k >= 2).then(|| s.kappa(k)) })
                    .collect();
                Ok(vec![csv_out("schedule.csv", &rows)?, json_out("schedule.json", &s)?, json_out("certification.json", &cert)?])
            }
            WermerCmd::Alpha { n, spacing, src } => {
                let s = ctx.schedule(&src)?;
                let spacing = spacing.unwrap_or(cfg.alpha_spacing);
                #[derive(Serialize)]
                struct Row {
                    n: usize,
                    alpha: f64,
                    grid_density: f64,
                }
                let alphas = wermer::alpha_profile(&s, n, spacing)?;
                let rows: Vec<Row> = alphas.iter().map(|a| Row { n: a.n, alpha: a.alpha, grid_density: 1.0 / a.grid_spacing }).collect();
                Ok(vec![csv_out("alpha.csv", &rows)?])
            }
            WermerCmd::Shift { p, delta, samples, src } => {
                let s = ctx.schedule(&src)?;
                let rep = wermer::shift_error(&s, p, delta, samples)?;
                Ok(vec![csv_out("shift.csv", &[rep])?])
            }
        },
        Command::Potential { cmd } => match cmd {
            PotentialCmd::Phi { z, w, src } => {
                let s = ctx.schedule(&src)?;
                let phi = potential::phi_m(&s, z, w);
                Ok(vec![json_out("phi.json", &json!({"m": s.m(), "z": complex_json(z), "w": complex_json(w), "phi": phi}))?])
            }
            PotentialCmd::Psi { z, w, src } => {
                let params = ctx.params(&src)?;
                let v = potential::psi_value(&params, z, w);
                Ok(vec![json_out("psi.json", &json!({"m": params.m(), "z": complex_json(z), "w": complex_json(w), "psi": v.value, "overflow": v.overflow}))?])
            }
        },
        Command::Domain { cmd: DomainCmd::Contains { z, w, zeta, d, src } } => {
            let params = ctx.params(&src)?;
            let psi = potential::psi(&params, z, w);
            let record = match (d, zeta) {
                (Some(d), _) => {
                    let inside = potential::f_d_contains(&params, SublevelRegion::new(d)?, z, w);
                    json!({"set": "F_d", "d": d, "z": complex_json(z), "w": complex_json(w), "psi": psi, "contains": inside})
                }
                (None, Some(zeta)) => {
                    let inside = potential::omega_contains(&params, z, w, zeta);
                    json!({"set": "omega_psi", "z": complex_json(z), "w": complex_json(w), "zeta": complex_json(zeta), "psi": psi, "contains": inside})
                }
                (None, None) => bail!(wermerlab::Error::InvalidArgument("pass --zeta for the domain or --d for F_d".into())),
            };
            Ok(vec![json_out("contains.json", &record)?])
        }
        Command::Calibrate { cmd } => match cmd {
            CalibrateCmd::Q { n, kappa, src } => {
                let s = ctx.schedule(&src)?;
                let kappa = match kappa {
                    Some(k) => k,
                    None => potential::kappa_region_floored(&s, n)?,
                };
                let rep = potential::calibrate_q(&s, n, kappa, cfg.shell)?;
                Ok(vec![json_out("q.json", &rep)?])
            }
            CalibrateCmd::C { n } => {
                let build = pipeline::pipeline_build_domain(cfg)?;
                let row = build
                    .rows
                    .iter()
                    .find(|r| r.n == n)
                    .ok_or_else(|| anyhow!(wermerlab::Error::InvalidArgument(format!("n must lie in 1..={}", cfg.horizon + 2))))?;
                Ok(vec![json_out("c.json", &json!({"row": row, "q0": build.audit.q0, "envelope_applied": build.audit.envelope_applied}))?])
            }
        },
        Command::Rho { cmd } => match cmd {
            RhoCmd::Build { c_file, horizon } => {
                let c = read_c_file(&c_file)?;
                let horizon = horizon.unwrap_or(c.len().saturating_sub(1));
                let p = profile::build_rho1(&c, horizon)?;
                Ok(vec![json_out("profile.json", &p)?])
            }
            RhoCmd::Eval { t, profile: path } => {
                let p = load_profile(ctx, path.as_ref())?;
                #[derive(Serialize)]
                struct Row {
                    t: f64,
                    rho1: f64,
                    rho: f64,
                }
                let rows: Vec<Row> = t.iter().map(|t| Row { t: *t, rho1: p.rho1(t.abs()), rho: profile::rho_eval(&p, *t) }).collect();
                Ok(vec![csv_out("rho.csv", &rows)?])
            }
            RhoCmd::Check { horizon, c_file, profile: path, step } => {
                let c = read_c_file(&c_file)?;
                let p = match path {
                    Some(p) => load_profile(ctx, Some(&p))?,
                    None => profile::build_rho1(&c, horizon)?,
                };
                let rep = profile::rho_check(&p, &c, horizon, step);
                let ok = rep.ok;
                let out = json_out("rho_check.json", &rep)?;
                if !ok {
                    emit(&[out], ctx, "rho check")?;
                    return Err(Exit(2, "profile check failed".into()).into());
                }
                Ok(vec![out])
            }
        },
        Command::Disks { cmd } => match cmd {
            DisksCmd::Beta { n, delta, src } => {
                let s = ctx.schedule(&src)?;
                let sample = HnSample::draw(&s, n, cfg.hn, seed)?;
                let b = sample.beta(delta);
                #[derive(Serialize)]
                struct Row {
                    n: usize,
                    delta: f64,
                    beta: f64,
                    beta8: f64,
                    disks_sampled: usize,
                    seed: u64,
                }
                Ok(vec![csv_out("beta.csv", &[Row { n, delta, beta: b.four, beta8: b.eight, disks_sampled: cfg.hn.count, seed }])?])
            }
            DisksCmd::DeltaN { n, src } => {
                let s = ctx.schedule(&src)?;
                let cal = disks::delta_n(&s, n, cfg.hn, cfg.delta_safety, seed)?;
                #[derive(Serialize)]
                struct Row {
                    n: usize,
                    k: usize,
                    delta_sup: f64,
                    delta: f64,
                    beta: f64,
                    disks_sampled: usize,
                    seed: u64,
                }
                let rows: Vec<Row> = cal
                    .betas
                    .iter()
                    .map(|(k, b)| Row { n, k: *k, delta_sup: cal.delta_sup, delta: cal.delta, beta: *b, disks_sampled: cal.disks_per_k, seed })
                    .collect();
                Ok(vec![csv_out("delta.csv", &rows)?])
            }
            DisksCmd::Exclude { d, r, trials, src } => {
                let params = ctx.params(&src)?;
                let mut spec: ExclusionSpec = cfg.exclusion.clone();
                if let Some(r) = r {
                    spec.ladder = disks::radius_ladder(1e-6, r, 2f64.sqrt());
                }
                if let Some(t) = trials {
                    spec.trials = t;
                }
                let rep = disks::disk_exclusion_search(&params, d, &spec, seed)?;
                #[derive(Serialize)]
                struct Row {
                    d: f64,
                    found: bool,
                    best_radius: f64,
                    trials: usize,
                    recheck_passed: bool,
                    tube_escape: usize,
                    frame_exit: usize,
                    shift_obstruction: usize,
                    sublevel: usize,
                    seed: u64,
                }
                let f = rep.failures;
                Ok(vec![csv_out(
                    "exclusion.csv",
                    &[Row {
                        d,
                        found: rep.found,
                        best_radius: rep.best_radius,
                        trials: rep.trials,
                        recheck_passed: rep.recheck_passed,
                        tube_escape: f.tube_escape,
                        frame_exit: f.frame_exit,
                        shift_obstruction: f.shift_obstruction,
                        sublevel: f.sublevel,
                        seed,
                    }],
                )?])
            }
            DisksCmd::Harnack { trials, radius, src } => {
                let params = ctx.params(&src)?;
                #[derive(Serialize)]
                struct Row {
                    trial: usize,
                    re_zeta0: f64,
                    max_psi_ratio: f64,
                    max_re_ratio: f64,
                    violations: usize,
                    seed: u64,
                }
                let mut rows = Vec::new();
                for t in 0..trials {
                    let mut rng = seeds::stream(seed, t as u64);
                    let disk = disks::random_disk_into_omega(&params, radius, &mut rng)?;
                    let rep = disks::harnack_localize(&params, &disk)?;
                    rows.push(Row { trial: t, re_zeta0: rep.re_zeta0, max_psi_ratio: rep.max_psi_ratio, max_re_ratio: rep.max_re_ratio, violations: rep.violations, seed });
                }
                Ok(vec![csv_out("harnack.csv", &rows)?])
            }
        },
        Command::Kob { cmd } => {
            let (upper, args) = match cmd {
                KobCmd::Upper(a) => (true, a),
                KobCmd::Lower(a) => (false, a),
            };
            if args.point.len() != args.dir.len() {
                bail!(wermerlab::Error::InvalidArgument("--point and --dir need the same number of coordinates".into()));
            }
            let dim = args.point.len();
            let spec = FamilySpec::default();
            let (value, method) = match args.domain {
                DomainKind::OmegaPsi => {
                    if dim != 3 {
                        bail!(wermerlab::Error::InvalidArgument("the domain lives in C^3".into()));
                    }
                    let params = ctx.params(&args.src)?;
                    if upper {
                        let dom = OmegaPsi { params };
                        let spec = FamilySpec { families: vec![kobayashi::MapFamily::Linear], ..spec };
                        let est = kobayashi::kobayashi_upper(&dom, &args.point, &args.dir, &spec, seed)?;
                        (est.value, "disk_search")
                    } else {
                        let p = [args.point[0], args.point[1], args.point[2]];
                        let v = [args.dir[0], args.dir[1], args.dir[2]];
                        (kobayashi::kobayashi_lower_projection(&params, &p, &v)?, "half_plane_projection")
                    }
                }
                kind => {
                    let dom: Box<dyn Domain> = match kind {
                        DomainKind::Disk => Box::new(Ball::new(vec![Complex64::new(0.0, 0.0); dim], args.size)?),
                        DomainKind::Ball => Box::new(Ball::origin(dim, args.size)?),
                        DomainKind::HalfPlane => Box::new(HalfPlane),
                        DomainKind::OmegaEps => Box::new(OmegaEps { eps: args.size }),
                        DomainKind::OmegaPsi => unreachable!(),
                    };
                    if dom.dim() != dim {
                        bail!(wermerlab::Error::InvalidArgument(format!("the domain lives in C^{}", dom.dim())));
                    }
                    if upper {
                        (kobayashi::kobayashi_upper(dom.as_ref(), &args.point, &args.dir, &spec, seed)?.value, "disk_search")
                    } else {
                        match kind {
                            DomainKind::Disk | DomainKind::Ball => (kobayashi::ball_metric(&Ball::origin(dim, args.size)?, &args.point, &args.dir)?, "exact_ball"),
                            DomainKind::HalfPlane => (kobayashi::half_plane_metric(args.point[0], args.dir[0])?, "exact_half_plane"),
                            _ => (0.0, "trivial"),
                        }
                    }
                }
            };
            let point: Vec<_> = args.point.iter().map(|z| complex_json(*z)).collect();
            let dir: Vec<_> = args.dir.iter().map(|z| complex_json(*z)).collect();
            let record = json!({
                "bound": if upper { "upper" } else { "lower" },
                "domain": format!("{:?}", args.domain),
                "point": point,
                "direction": dir,
                "value": value,
                "method": method,
                "boundary_points": spec.boundary_points,
                "interior_points": spec.interior_points,
                "seed": seed,
            });
            Ok(vec![json_out("kobayashi.json", &record)?])
        }
        Command::Hm { cmd } => match cmd {
            HmCmd::Estimate { domain, arc, p, walkers, slits } => {
                let disk = SlitDisk::new(domain, parse_slits(slits.as_deref())?)?;
                let target = match arc {
                    None => BoundaryTarget::Circle,
                    Some(text) => {
                        let v: Vec<f64> = text.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().context("bad --arc")?;
                        if v.len() != 2 {
                            bail!(wermerlab::Error::InvalidArgument("--arc takes start,length".into()));
                        }
                        BoundaryTarget::Arc { start: v[0], length: v[1] }
                    }
                };
                let est = harmonic::harmonic_measure(&disk, target, p, walkers, seed)?;
                Ok(vec![json_out("harmonic_measure.json", &json!({"domain": disk, "target": target, "p": complex_json(p), "estimate": est}))?])
            }
            HmCmd::Sh93 { k, slits, walkers } => {
                let disk = SlitDisk::new(k, parse_slits(slits.as_deref())?)?;
                let rep = harmonic::sh93_bound_check(&disk, walkers, seed)?;
                let holds = rep.holds;
                let out = json_out("sh93.json", &rep)?;
                if !holds {
                    emit(&[out], ctx, "hm sh93")?;
                    return Err(Exit(2, "distance bound violated".into()).into());
                }
                Ok(vec![out])
            }
        },
        Command::Antipeak { cmd: AntipeakCmd::Check { domain, phi, eps, samples, radii, src } } => {
            let params = match (domain, phi) {
                (AntipeakDomain::OmegaPsi, _) | (_, Candidate::PsiGap) => Some(ctx.params(&src)?),
                _ => None,
            };
            let mut extent = 2.0 * radii.iter().copied().fold(10.0, f64::max);
            if let (AntipeakDomain::OmegaPsi, Some(params)) = (domain, &params) {
                // the domain sits above Re ζ = Ψ, far from the origin
                let zero = Complex64::new(0.0, 0.0);
                extent = extent.max(4.0 * (potential::psi(params, zero, zero) + 1.0));
            }
            let spec = AntipeakSampling { samples, extent, ..Default::default() };
            let phi_fn = |p: &[Complex64]| -> f64 {
                match phi {
                    Candidate::InvZ => 1.0 / p[0].norm(),
                    Candidate::ExpNeg => (-p[p.len() - 1]).exp().norm(),
                    Candidate::PsiGap => {
                        let params = params.as_ref().expect("loaded above");
                        1.0 / (1.0 + p[2].re - potential::psi(params, p[0], p[1]))
                    }
                }
            };
            let (report, liouville) = match domain {
                AntipeakDomain::OmegaEps => (harmonic::antipeak_check(&OmegaEps { eps }, phi_fn, spec, &radii, seed)?, None),
                AntipeakDomain::HalfPlane => (harmonic::antipeak_check(&HalfPlane, phi_fn, spec, &radii, seed)?, None),
                AntipeakDomain::OmegaPsi => {
                    let dom = OmegaPsi { params: params.clone().expect("loaded above") };
                    let rep = harmonic::antipeak_check(&dom, phi_fn, spec, &radii, seed)?;
                    let lv = harmonic::liouville_check(&dom, phi_fn, &rep, &radii, 32, seed);
                    (rep, Some(lv))
                }
            };
            Ok(vec![json_out("antipeak.json", &json!({"spec": spec, "seed": seed, "report": report, "liouville": liouville}))?])
        }
        Command::Mvcert { cmd: MvcertCmd::Run { k, big_r, eps, z0, walkers, cells } } => {
            let dom = OmegaEps { eps };
            let disk = HoloDisk::new(Complex64::new(0.0, 0.0), k, vec![vec![Complex64::new(z0, 0.0), Complex64::new(1.0, 0.0)], vec![Complex64::new(0.0, 0.0)]])?;
            let c_r = 2f64.sqrt() / big_r;
            let spec = MeanValueSpec { cells, walkers, ..Default::default() };
            let rep = harmonic::mean_value_certificate(&dom, &disk, |p: &[Complex64]| 1.0 / p[0].norm().max(eps), 1.0 / eps, c_r, big_r, spec, seed)?;
            Ok(vec![json_out("mvcert.json", &json!({"seed": seed, "report": rep}))?])
        }
        Command::Build => {
            let dir = ctx.out.clone().ok_or_else(|| anyhow!(wermerlab::Error::InvalidArgument("build needs --out DIR".into())))?;
            let build = pipeline::pipeline_build_domain(cfg)?;
            pipeline::write_artifacts(&build, &dir)?;
            let failed: Vec<String> = build.audit.checks.iter().filter(|c| !c.passed).map(|c| format!("{}/{}", c.stage, c.name)).collect();
            if !failed.is_empty() {
                return Err(Exit(2, format!("audit failed: {}", failed.join(", "))).into());
            }
            eprintln!("build ok: {} checks passed, artifacts in {}", build.audit.checks.len(), dir.display());
            Ok(vec![])
        }
        Command::Plot { kind, artifacts } => {
            let out = ctx.out.clone().ok_or_else(|| anyhow!(wermerlab::Error::InvalidArgument("plot needs --out DIR".into())))?;
            let artifacts = artifacts.unwrap_or_else(|| out.clone());
            let files = pipeline::emit_plot_data(kind, &artifacts, &out, cfg)?;
            let names: Vec<String> = files.iter().filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned())).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            pipeline::write_manifest(&out, &format!("plot {}", kind.name()), cfg, &refs)?;
            Ok(vec![])
        }
    }
}

/// Prints the primary output, or writes all outputs with a manifest under `--out`.
fn emit(outputs: &[Output], ctx: &Ctx, command: &str) -> anyhow::Result<()> {
    match &ctx.out {
        None => {
            if let Some(o) = outputs.first() {
                print!("{}", o.text);
            }
        }
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for o in outputs {
                fs::write(dir.join(&o.name), &o.text)?;
            }
            let names: Vec<&str> = outputs.iter().map(|o| o.name.as_str()).collect();
            pipeline::write_manifest(dir, command, &ctx.config, &names)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Exit>() {
        return e.0;
    }
    if let Some(e) = err.downcast_ref::<StageError>() {
        return e.exit_code() as u8;
    }
    if let Some(e) = err.downcast_ref::<wermerlab::Error>() {
        return pipeline::exit_code(e) as u8;
    }
    if err.downcast_ref::<std::num::ParseFloatError>().is_some() || err.downcast_ref::<serde_json::Error>().is_some() {
        return 1;
    }
    3
}

fn command_name(matches: &ArgMatches) -> String {
    let mut parts = Vec::new();
    let mut m = matches;
    while let Some((name, sub)) = m.subcommand() {
        parts.push(name);
        m = sub;
    }
    parts.join(" ")
}

fn main() -> ExitCode {
    let parsed = Cli::command().try_get_matches_from(std::env::args_os()).and_then(|m| Cli::from_arg_matches(&m).map(|c| (c, m)));
    let (cli, matches) = match parsed {
        Ok(p) => p,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: config {}: {e}", path.display());
                return ExitCode::from(1);
            }
        },
        None => RunConfig::default(),
    };
    let config = RunConfig { seed: cli.seed.unwrap_or(config.seed), ..config };
    let ctx = Ctx { config, out: cli.out.clone() };
    let name = command_name(&matches);
    let result = run(cli, &ctx).and_then(|outputs| emit(&outputs, &ctx, &name));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
