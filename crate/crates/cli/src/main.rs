//! `sglab check|path|simulate <file> [flags]`
//!
//! Exit codes: 0 when nothing failed, 1 when some verdict or path failed,
//! 2 on malformed input.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use sglab_core::checks::{
    cycle_gain_check, max_mbi_probe, nji_probe, spectral_condition, uniform_nji_probe, Sampler, SgcVerdict, UniformNjiParams,
};
use sglab_core::dynamics::{iterate_steps, stability_battery};
use sglab_core::network::DEFAULT_RANGE;
use sglab_core::path::{
    combined_path, geometric_grid, minimal_path, orbit_path, regularize, reparametrize_min_id, restrict_path, validate,
    DecayPath, DEFAULT_MAX_KNOTS,
};
use sglab_core::report::{path_csv, path_json, trajectory_csv, Certificate, PathEntry, SummaryRow};
use sglab_core::{ConeVec, GainDescriptor, GainNetwork, GainOperator, KFun, NetworkSpec, StopReason, StopRule};

/// Steps of `Γⁿ(r𝟙)` examined by the stability battery.
const BATTERY_STEPS: usize = 200;

/// Cap on the neighborhood depth used by the uniform NJI probe.
const UNIFORM_NJI_MAX_DEPTH: usize = 8;

#[derive(Parser)]
#[command(name = "sglab", version, about = "Small-gain analysis of monotone gain networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the small-gain checks and the stability battery.
    Check(CheckArgs),
    /// Construct and validate a path of decay.
    Path(PathArgs),
    /// Write a trajectory as CSV.
    Simulate(SimulateArgs),
}

#[derive(clap::Args)]
struct Common {
    /// Network JSON file.
    file: PathBuf,
    /// Margin ρ as `linear:k`, `power:c:p` or descriptor JSON.
    #[arg(long)]
    rho: Option<String>,
    /// Node count for template networks (overrides `nodes`).
    #[arg(long = "N", alias = "n", value_delimiter = ',')]
    n: Vec<usize>,
}

#[derive(clap::Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Number of cone samples for sampled conditions.
    #[arg(long, default_value_t = 10_000)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ray grid, `geometric:a:b` for `2^a..2^b` or a comma list.
    #[arg(long, default_value = "geometric:-10:10")]
    grid: String,
    /// Certificate output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Minimal,
    Combined,
    Orbit,
}

#[derive(clap::Args)]
struct PathArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "minimal")]
    method: Method,
    /// Margin of the regularized path; regularizes when given.
    #[arg(long)]
    target_rho: Option<String>,
    /// Knot grid, `geometric:a:b` or a comma list.
    #[arg(long, default_value = "geometric:-20:20")]
    knots: String,
    /// Trajectory points per gap for the combined method.
    #[arg(long, default_value_t = 16)]
    m_interp: usize,
    /// Reparametrize so that `φ_min = id`.
    #[arg(long)]
    min_id: bool,
    /// Start of the orbit method: comma list or `ray:r`.
    #[arg(long, default_value = "ray:1")]
    start: String,
    /// Also validate the path restricted to these nodes on their sub-network.
    #[arg(long, value_delimiter = ',')]
    restrict: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix: writes `<out>.path.json`, `<out>.path.csv`, `<out>.cert.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Start state: comma list or `ray:r`.
    #[arg(long, default_value = "ray:1")]
    start: String,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    /// `base`, `rho`, `hat` or `proj:<b>` with `b` a comma list or `ray:r`.
    #[arg(long, default_value = "base")]
    variant: String,
    /// CSV output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Malformed input; exits with code 2.
struct InputError(String);

impl<E: std::fmt::Display> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.to_string())
    }
}

type Res<T> = Result<T, InputError>;

fn fail<T>(msg: impl Into<String>) -> Res<T> {
    Err(InputError(msg.into()))
}

struct Loaded {
    bytes: Vec<u8>,
    spec: NetworkSpec,
    range: (f64, f64),
}

fn load(file: &Path) -> Res<Loaded> {
    let bytes = fs::read(file).map_err(|e| InputError(format!("{}: {e}", file.display())))?;
    let spec: NetworkSpec = serde_json::from_slice(&bytes).map_err(|e| InputError(format!("{}: {e}", file.display())))?;
    let range = spec.range.map_or(DEFAULT_RANGE, |r| (r[0], r[1]));
    Ok(Loaded { bytes, spec, range })
}

fn build(l: &Loaded, n: Option<usize>) -> Res<GainNetwork> {
    Ok(l.spec.build(n)?)
}

fn single_n(c: &Common) -> Res<Option<usize>> {
    match c.n.as_slice() {
        [] => Ok(None),
        [n] => Ok(Some(*n)),
        _ => fail("this command takes a single --N"),
    }
}

fn parse_kfun(desc: &str, range: (f64, f64)) -> Res<KFun> {
    Ok(GainDescriptor::from_str(desc)?.discretize(range, sglab_core::kinfty::DEFAULT_FAMILY_POINTS)?.function)
}

fn parse_rho(c: &Common, range: (f64, f64)) -> Res<Option<KFun>> {
    c.rho.as_deref().map(|d| parse_kfun(d, range)).transpose()
}

fn parse_grid(s: &str) -> Res<Vec<f64>> {
    let grid: Vec<f64> = match s.strip_prefix("geometric:") {
        Some(rest) => {
            let (a, b) = rest.split_once(':').ok_or_else(|| InputError(format!("grid `{s}`: expected geometric:a:b")))?;
            let (a, b): (i32, i32) = (a.trim().parse()?, b.trim().parse()?);
            if a > b {
                return fail(format!("grid `{s}`: empty range"));
            }
            geometric_grid(a, b)
        }
        None => s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>()?,
    };
    if grid.is_empty() || !(grid[0] > 0.0) || grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|x| !x.is_finite()) {
        return fail(format!("grid `{s}` must be positive and strictly increasing"));
    }
    Ok(grid)
}

fn parse_vec(s: &str, dim: usize) -> Res<ConeVec> {
    if let Some(r) = s.strip_prefix("ray:") {
        return Ok(ConeVec::ray(dim, r.trim().parse()?)?);
    }
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>()?;
    if v.len() != dim {
        return fail(format!("vector `{s}` has {} entries, network has {dim} nodes", v.len()));
    }
    Ok(ConeVec::new(v)?)
}

fn enlarged(op: &GainOperator, rho: Option<&KFun>) -> GainOperator {
    rho.map_or_else(|| op.clone(), |r| op.enlarge_left(r))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Res<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| InputError(format!("{}: {e}", p.display()))),
        None => {
            // a closed pipe is not an input error
            let _ = io::stdout().write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn run_checks(net: GainNetwork, rho: Option<&KFun>, grid: &[f64], sampler: &Sampler) -> Res<(Vec<SgcVerdict>, sglab_core::dynamics::StabilityReport)> {
    let op = GainOperator::from(net);
    let g = enlarged(&op, rho);
    let rule = StopRule::default();
    let dim = g.dim();
    let params = UniformNjiParams::relative(*grid.last().unwrap(), grid[0], dim.clamp(1, UNIFORM_NJI_MAX_DEPTH));
    let mut verdicts = vec![
        nji_probe(&g, sampler)?,
        uniform_nji_probe(&g, &params, sampler)?,
        max_mbi_probe(&g, grid, &rule)?,
    ];
    let net = op.network();
    if net.is_max_type() {
        verdicts.push(cycle_gain_check(net, rho, grid, sampler.budget)?);
    }
    if net.is_homogeneous() && rho.is_none_or(KFun::is_linear) {
        verdicts.push(spectral_condition(&g, 64, sampler.seed)?);
    }
    let battery = stability_battery(&g, grid, BATTERY_STEPS, &rule)?;
    Ok((verdicts, battery))
}

fn cmd_check(a: &CheckArgs) -> Res<Certificate> {
    let l = load(&a.common.file)?;
    let rho = parse_rho(&a.common, l.range)?;
    let grid = parse_grid(&a.grid)?;
    let sampler = Sampler::new(a.seed, a.budget, (grid[0], *grid.last().unwrap()));
    let mut cert = Certificate::new(&l.bytes, a.seed, "check");
    if a.common.n.is_empty() {
        let (verdicts, battery) = run_checks(build(&l, None)?, rho.as_ref(), &grid, &sampler)?;
        cert.verdicts = verdicts;
        cert.stability = Some(battery);
        return Ok(cert);
    }
    let sweep = a.common.n.len() > 1;
    for &n in &a.common.n {
        let net = build(&l, Some(n))?;
        let edges = net.graph().edge_count();
        let (verdicts, battery) = run_checks(net, rho.as_ref(), &grid, &sampler)?;
        cert.summary_rows.push(SummaryRow {
            n,
            edges,
            verdicts: verdicts.iter().map(|v| (serde_json::to_value(v.condition).unwrap().as_str().unwrap().to_string(), v.status)).collect(),
            ugas_evidence: Some(battery.ugas_evidence),
        });
        if !sweep {
            cert.verdicts = verdicts;
            cert.stability = Some(battery);
        }
    }
    Ok(cert)
}

fn construct(a: &PathArgs, op: &GainOperator, rho: Option<&KFun>, range: (f64, f64)) -> Result<DecayPath, String> {
    let knots = parse_grid(&a.knots).map_err(|e| e.0)?;
    let rule = StopRule::default();
    let mut path = match a.method {
        Method::Minimal => minimal_path(op, rho, &knots, &rule),
        Method::Combined => combined_path(op, rho, &knots, a.m_interp, &rule),
        Method::Orbit => {
            let s0 = parse_vec(&a.start, op.dim()).map_err(|e| e.0)?;
            orbit_path(op, &s0, 20, &rule)
        }
    }
    .map_err(|e| e.to_string())?;
    if let Some(t) = &a.target_rho {
        let t = parse_kfun(t, range).map_err(|e| e.0)?;
        path = regularize(&path, Some(&t), DEFAULT_MAX_KNOTS).map_err(|e| e.to_string())?;
    }
    if a.min_id {
        path = reparametrize_min_id(&path);
    }
    Ok(path)
}

fn cmd_path(a: &PathArgs) -> Res<Certificate> {
    let l = load(&a.common.file)?;
    let net = build(&l, single_n(&a.common)?)?;
    let rho = parse_rho(&a.common, l.range)?;
    // input errors surface before construction starts
    parse_grid(&a.knots)?;
    if let Some(t) = &a.target_rho {
        parse_kfun(t, l.range)?;
    }
    if matches!(a.method, Method::Orbit) {
        parse_vec(&a.start, net.node_count())?;
    }
    if let Some(&bad) = a.restrict.iter().find(|&&i| i >= net.node_count()) {
        return fail(format!("--restrict node {bad} out of range"));
    }
    let op = GainOperator::from(net);
    let mut cert = Certificate::new(&l.bytes, a.seed, "path");
    let method = a.method.to_possible_value().unwrap().get_name().to_string();
    match construct(a, &op, rho.as_ref(), l.range) {
        Ok(path) => {
            let report = validate(&path, &op)?;
            cert.paths.push(PathEntry { label: "path".into(), method: method.clone(), knots: path.len(), report: Some(report), error: None });
            if !a.restrict.is_empty() {
                let (sub, _) = op.network().subnetwork(&a.restrict)?;
                let rp = restrict_path(&path, &a.restrict)?;
                let report = validate(&rp, &GainOperator::from(sub))?;
                cert.paths.push(PathEntry { label: "restricted".into(), method, knots: rp.len(), report: Some(report), error: None });
            }
            if let Some(prefix) = &a.out {
                fs::write(with_suffix(prefix, ".path.json"), path_json(&path))?;
                fs::write(with_suffix(prefix, ".path.csv"), path_csv(&path))?;
            }
        }
        Err(error) => cert.paths.push(PathEntry { label: "path".into(), method, knots: 0, report: None, error: Some(error) }),
    }
    Ok(cert)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Returns whether the trajectory diverged.
fn cmd_simulate(a: &SimulateArgs) -> Res<bool> {
    let l = load(&a.common.file)?;
    let net = build(&l, single_n(&a.common)?)?;
    let rho = parse_rho(&a.common, l.range)?;
    let dim = net.node_count();
    let op = GainOperator::from(net);
    let s0 = parse_vec(&a.start, dim)?;
    let g = match a.variant.as_str() {
        "base" => op,
        "hat" => op.augmented(),
        "rho" => match &rho {
            Some(r) => op.enlarge_left(r),
            None => return fail("--variant rho needs --rho"),
        },
        v => match v.strip_prefix("proj:") {
            Some(b) => op.projected(&parse_vec(b, dim)?)?,
            None => return fail(format!("unknown variant `{v}`")),
        },
    };
    let t = iterate_steps(&g, &s0, a.steps, &StopRule::default())?;
    write_or_print(a.out.as_deref(), &trajectory_csv(&t.states))?;
    let msg = match t.stop {
        StopReason::Converged { step, residual } => format!("converged at step {step} (residual {residual:.16e})"),
        StopReason::MaxIter { residual } => format!("ran {} steps (last residual {residual:.16e})", a.steps),
        StopReason::Diverged { step, norm } => format!("diverged at step {step} (norm {norm:.16e})"),
    };
    if a.out.is_some() {
        println!("{msg}");
    } else {
        eprintln!("{msg}");
    }
    Ok(matches!(t.stop, StopReason::Diverged { .. }))
}

fn finish(mut cert: Certificate, start: Instant, out: Option<&Path>) -> Res<bool> {
    cert.timing.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    write_or_print(out, &cert.to_json())?;
    Ok(cert.has_fail())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = match &cli.command {
        Command::Check(a) => cmd_check(a).and_then(|c| finish(c, start, a.out.as_deref())),
        Command::Path(a) => cmd_path(a).and_then(|c| {
            let out = a.out.as_ref().map(|p| with_suffix(p, ".cert.json"));
            finish(c, start, out.as_deref())
        }),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(InputError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
