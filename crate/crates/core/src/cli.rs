//! Experiment runner: `simulate`, `spectral`, `verify` and `sweep`.
//!
//! Every output file starts with `#` lines echoing the effective run spec.
//! Exit codes: 0 success, 1 I/O or numerical failure, 2 configuration
//! error, 3 exact-engine capacity exceeded, 4 in-hypothesis bound violation.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bounds::{
    appendix_f_estimates, auxiliary_inequality_reports, chain_evaluate, chain_evaluate_1d, lemma3_surrogate,
    lemma5_report, lemma7_route_report, proposition2_check, square_of_sum, theorem1prime_report, BoundReport,
};
use crate::config::{ConfigError, Engine, Mode, RunSpec, SweepKind};
use crate::lattice::{box_side_for, Lattice, LatticeConfig, LatticeParams, MomentumIndex};
use crate::spectral::{in_hypothesis, jm_exact, lemma6_bound, lemma6_check, lemma7_check, Jm1d};
use crate::states::{FockEngine, ManyBody, StateError};
use crate::timeavg::{default_m_cut, delta_a, noneq_fraction, TimeAvgError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fermion-equil", version, about = "Free-fermion equilibration experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Box densities and variances on a time grid.
    Simulate(Flags),
    /// Exact `J_m` against its one-dimensional bound.
    Spectral(Flags),
    /// Full verification suite; JSON report.
    Verify(Flags),
    /// Resumable parameter sweep.
    Sweep(Flags),
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "m-cut")]
    pub m_cut: Option<i64>,
    #[arg(long, value_enum)]
    pub engine: Option<Engine>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Capacity(StateError),
    #[error(transparent)]
    State(StateError),
    #[error(transparent)]
    TimeAvg(#[from] TimeAvgError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0} in-hypothesis bound violation(s)")]
    Violation(usize),
}

impl From<StateError> for CliError {
    fn from(e: StateError) -> Self {
        match e {
            StateError::Capacity { .. } | StateError::TooManyModes(_) => CliError::Capacity(e),
            StateError::UnknownInitialState(_) | StateError::NeedsFock(_) => CliError::Config(ConfigError::State(e)),
            other => CliError::State(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Capacity(_) => EXIT_CAPACITY,
            CliError::Violation(_) => EXIT_VIOLATION,
            _ => EXIT_FAILURE,
        }
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> Result<(), CliError> {
    let (mode, flags) = match command {
        Command::Simulate(f) => (Mode::Simulate, f),
        Command::Spectral(f) => (Mode::Spectral, f),
        Command::Verify(f) => (Mode::Verify, f),
        Command::Sweep(f) => (Mode::Sweep, f),
    };
    let mut spec = RunSpec::load(&flags.config)?;
    apply_flags(&mut spec, flags);
    spec.validate(mode)?;
    if let Some(n) = flags.threads {
        // Only the first pool configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = spec.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)?;
    let header = header(&spec, mode);
    match mode {
        Mode::Simulate => simulate(&spec, &out, &header),
        Mode::Spectral => spectral(&spec, &out, &header),
        Mode::Verify => verify(&spec, &out),
        Mode::Sweep => sweep(&spec, &out, &header),
    }
}

fn apply_flags(spec: &mut RunSpec, flags: &Flags) {
    if flags.out.is_some() {
        spec.out = flags.out.clone();
    }
    if flags.seed.is_some() {
        spec.seed = flags.seed;
    }
    if flags.dt.is_some() {
        spec.dt = flags.dt;
    }
    if flags.m_cut.is_some() {
        spec.m_cut = flags.m_cut;
    }
    if let Some(e) = flags.engine {
        spec.engine = e;
    }
}

fn header(spec: &RunSpec, mode: Mode) -> String {
    let mut h = format!("# fermion-equil {} {mode}\n", env!("CARGO_PKG_VERSION"));
    for line in spec.to_toml().lines() {
        h.push_str("# ");
        h.push_str(line);
        h.push('\n');
    }
    h
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn write_csv(path: &Path, header: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(header.as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn fraction_delta(spec: &RunSpec, tau: f64, cfg: &LatticeConfig) -> Result<f64, CliError> {
    match spec.delta {
        Some(d) => Ok(d),
        None => Ok(delta_a(0.5, tau, cfg.size(), cfg.dim())?),
    }
}

enum World {
    Slater(crate::states::SlaterState),
    Fock(crate::states::FockState),
}

fn build_state(spec: &RunSpec, cfg: Arc<LatticeConfig>) -> Result<World, CliError> {
    let initial = spec.initial()?;
    Ok(match spec.engine {
        Engine::Slater => World::Slater(initial.slater(cfg)?),
        Engine::Fock => World::Fock(initial.fock(&FockEngine::new(cfg)?)?),
    })
}

// ---- simulate ---------------------------------------------------------------

fn simulate(spec: &RunSpec, out: &Path, header: &str) -> Result<(), CliError> {
    let cfg = spec.lattice(Mode::Simulate)?;
    if let Some(tau) = spec.tau {
        if spec.delta.is_none() && tau <= cfg.size() as f64 {
            return Err(ConfigError::Invalid { key: "delta", reason: "required when tau <= size".into() }.into());
        }
    }
    match build_state(spec, cfg)? {
        World::Slater(s) => simulate_state(&s, spec, out, header),
        World::Fock(s) => simulate_state(&s, spec, out, header),
    }
}

fn simulate_state<S: ManyBody>(state: &S, spec: &RunSpec, out: &Path, header: &str) -> Result<(), CliError> {
    let dt = spec.dt.expect("validated");
    let t_max = spec.t_max.expect("validated");
    let steps = (t_max / dt + 1e-9).floor() as usize;
    let sampler = state.sampler();
    let boxes = state.config().boxes.len();
    let rows: Vec<Vec<String>> = (0..=steps)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 * dt;
            let s = sampler(t);
            (0..boxes)
                .map(|c| vec![fmt(t), c.to_string(), fmt(s.density(c)), fmt(s.delta_rho_sq(c))])
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    write_csv(&out.join("timeseries.csv"), header, &["t", "center_id", "rho", "delta_rho_sq"], &rows)?;
    if let Some(tau) = spec.tau {
        let delta = fraction_delta(spec, tau, state.config())?;
        let r = noneq_fraction(state, tau, delta, dt)?;
        let row = vec![fmt(r.tau), fmt(r.delta), fmt(r.dt), fmt(r.fraction), r.surrogate.to_string()];
        write_csv(&out.join("fraction.csv"), header, &FRACTION_COLUMNS[3..], &[row])?;
    }
    Ok(())
}

// ---- spectral ---------------------------------------------------------------

const SPECTRAL_COLUMNS: [&str; 8] = ["d", "L", "tau", "m", "J_exact", "lemma6_rhs", "margin", "hypothesis_ok"];

/// Exact `J_m` for every `0 < ||m||_inf <= m_cut`; in `d >= 2` the bound
/// column is the one-dimensional bound lifted by `V^2 / L^2`.
fn spectral_rows(lat: Lattice, tau: f64, m_cut: i64) -> Result<(Vec<Vec<String>>, usize), CliError> {
    let size = lat.size;
    let m_cut = m_cut.min(lat.half());
    let hyp = in_hypothesis(size, tau);
    let scale = (lat.volume() as f64 / size as f64).powi(2);
    let mut violations = 0;
    let mut row = |m: &MomentumIndex, j: f64| {
        let rhs = scale * lemma6_bound(m.sup_norm(), tau, size);
        let margin = rhs - j;
        if hyp && margin < 0.0 {
            violations += 1;
        }
        vec![
            lat.dim.to_string(),
            size.to_string(),
            fmt(tau),
            m.to_string(),
            fmt(j),
            fmt(rhs),
            fmt(margin),
            hyp.to_string(),
        ]
    };
    let rows = if lat.dim == 1 {
        let table = Jm1d::compute_up_to(size, tau, m_cut as usize);
        (1..=m_cut).map(|m| row(&MomentumIndex(vec![m]), table.get(m))).collect()
    } else {
        let momenta = lat.momenta_within(m_cut);
        let mut keys: Vec<Vec<i64>> = momenta.iter().map(sorted_abs).collect();
        keys.sort();
        keys.dedup();
        let values: BTreeMap<Vec<i64>, f64> = keys
            .into_par_iter()
            .map(|k| {
                let j = jm_exact(&MomentumIndex(k.clone()), tau, lat).expect("nonzero momentum").value;
                (k, j)
            })
            .collect();
        momenta.iter().map(|m| row(m, values[&sorted_abs(m)])).collect()
    };
    Ok((rows, violations))
}

fn sorted_abs(m: &MomentumIndex) -> Vec<i64> {
    let mut k: Vec<i64> = m.0.iter().map(|c| c.abs()).collect();
    k.sort_unstable();
    k
}

fn spectral(spec: &RunSpec, out: &Path, header: &str) -> Result<(), CliError> {
    let cfg = spec.lattice(Mode::Spectral)?;
    let tau = spec.tau.expect("validated");
    let m_cut = spec.m_cut.unwrap_or(cfg.lattice.half());
    let (rows, violations) = spectral_rows(cfg.lattice, tau, m_cut)?;
    write_csv(&out.join("spectral.csv"), header, &SPECTRAL_COLUMNS, &rows)?;
    if violations > 0 {
        return Err(CliError::Violation(violations));
    }
    Ok(())
}

// ---- verify -----------------------------------------------------------------

/// Times at which the exact `<P_neq>` is compared with its surrogate.
const LEMMA3_TIMES: [f64; 4] = [0.0, 0.7, 3.1, 12.9];

fn verify_state<S: ManyBody>(state: &S, spec: &RunSpec, reports: &mut Vec<BoundReport>) -> Result<(), CliError> {
    let cfg = state.config();
    let tau = spec.tau.expect("validated");
    let m_cut = spec.m_cut.unwrap_or_else(|| default_m_cut(cfg));
    let chain = chain_evaluate(cfg, tau, m_cut);
    for c in 0..cfg.boxes.len() {
        reports.push(proposition2_check(state, c, &chain)?);
    }
    reports.extend(lemma7_route_report(&chain));
    for &t in &LEMMA3_TIMES {
        if let Some(r) = lemma3_surrogate(state, t).report() {
            reports.push(r.param("t", t));
        }
    }
    if tau > cfg.size() as f64 {
        let dt = spec.dt.unwrap_or(tau / 1000.0);
        let (_, r) = theorem1prime_report(state, tau, dt, m_cut)?;
        reports.push(r);
    }
    Ok(())
}

fn verify(spec: &RunSpec, out: &Path) -> Result<(), CliError> {
    let cfg = spec.lattice(Mode::Verify)?;
    let tau = spec.tau.expect("validated");
    let mut reports = Vec::new();
    match build_state(spec, cfg.clone())? {
        World::Slater(s) => verify_state(&s, spec, &mut reports)?,
        World::Fock(s) => verify_state(&s, spec, &mut reports)?,
    }
    let lat = cfg.lattice;
    let size = lat.size;
    let half = lat.half();
    if lat.dim == 1 {
        let top = spec.m_cut.unwrap_or(half).min(half);
        let table = Jm1d::compute_up_to(size, tau, top as usize);
        let hyp = in_hypothesis(size, tau);
        let worst = (1..=top)
            .map(|m| {
                BoundReport::new("lemma6", table.get(m), lemma6_bound(m, tau, size))
                    .hypothesis(hyp)
                    .param("d", 1)
                    .param("L", size)
                    .param("tau", tau)
                    .param("m", m)
            })
            .min_by(|a, b| a.margin.total_cmp(&b.margin));
        reports.extend(worst);
        reports.extend(appendix_f_estimates(size, cfg.box_side, tau));
    } else {
        let top = spec.m_cut.unwrap_or(3).min(half);
        let mut seen = HashSet::new();
        for m in lat.momenta_within(top) {
            if seen.insert(sorted_abs(&m)) {
                reports.push(lemma7_check(&m, tau, lat).expect("nonzero momentum"));
            }
        }
    }
    let third = (size / 3).max(1) as i64;
    for m in [1, 2, third.min(half)] {
        for delta in [1.0 / 25.0, 1e-3] {
            reports.push(lemma5_report(size, m, delta, 2000));
        }
    }
    reports.extend(auxiliary_inequality_reports(100));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(0));
    let triples: Vec<BoundReport> = (0..1000)
        .map(|_| {
            let b: f64 = rng.gen_range(0.0..2.0);
            let c: f64 = rng.gen_range(0.0..2.0);
            let a = rng.gen_range(0.0..=1.0) * (b + c);
            square_of_sum(a, b, c)
        })
        .collect();
    reports.extend(triples.into_iter().min_by(|a, b| a.margin.total_cmp(&b.margin)));

    let violations = reports.iter().filter(|r| r.violation()).count();
    let doc = serde_json::json!({
        "spec": spec,
        "violations": violations,
        "reports": reports,
    });
    let mut file = BufWriter::new(File::create(out.join("verify.json"))?);
    serde_json::to_writer_pretty(&mut file, &doc)?;
    file.write_all(b"\n")?;
    file.flush()?;
    if violations > 0 {
        return Err(CliError::Violation(violations));
    }
    Ok(())
}

// ---- sweep ------------------------------------------------------------------

const FRACTION_COLUMNS: [&str; 8] = ["d", "L", "n", "tau", "delta", "dt", "fraction", "surrogate_flag"];

struct Plan {
    file: &'static str,
    columns: Vec<&'static str>,
    /// Number of leading columns forming the resume key.
    key_len: usize,
    points: Vec<Vec<String>>,
}

fn plan(spec: &RunSpec) -> Plan {
    let sweep = spec.sweep.as_ref().expect("validated");
    let mut points = Vec::new();
    match sweep.kind {
        SweepKind::Lemma6 => {
            for &l in &sweep.sizes {
                for &r in &sweep.tau_ratios {
                    for &m in &sweep.momenta {
                        points.push(vec!["1".into(), l.to_string(), fmt(r * l as f64), m.to_string()]);
                    }
                }
            }
            let mut columns = SPECTRAL_COLUMNS.to_vec();
            columns.push("status");
            Plan { file: "sweep_lemma6.csv", columns, key_len: 4, points }
        }
        SweepKind::Lemma7 => {
            let cut = spec.m_cut.unwrap_or(3);
            for &d in &sweep.dims {
                for &l in &sweep.sizes {
                    let Ok(lat) = Lattice::new(d, l) else { continue };
                    for &r in &sweep.tau_ratios {
                        for m in lat.momenta_within(cut.min(lat.half())) {
                            points.push(vec![d.to_string(), l.to_string(), fmt(r * l as f64), m.to_string()]);
                        }
                    }
                }
            }
            let columns = vec!["d", "L", "tau", "m", "J_exact", "lemma7_rhs", "margin", "hypothesis_ok", "status"];
            Plan { file: "sweep_lemma7.csv", columns, key_len: 4, points }
        }
        SweepKind::Lemma8 => {
            for &l in &sweep.sizes {
                for &r in &sweep.tau_ratios {
                    for &n in &sweep.boxes_per_axis {
                        points.push(vec![l.to_string(), n.to_string(), fmt(r * l as f64)]);
                    }
                }
            }
            let columns = vec!["L", "n", "tau", "l", "S", "delta_half", "ratio", "status"];
            Plan { file: "sweep_lemma8.csv", columns, key_len: 3, points }
        }
        SweepKind::Fraction => {
            let d = spec.dim.unwrap_or(1);
            for &l in &sweep.sizes {
                for &n in &sweep.boxes_per_axis {
                    for &r in &sweep.tau_ratios {
                        points.push(vec![d.to_string(), l.to_string(), n.to_string(), fmt(r * l as f64)]);
                    }
                }
            }
            let mut columns = FRACTION_COLUMNS.to_vec();
            columns.push("status");
            Plan { file: "sweep_fraction.csv", columns, key_len: 4, points }
        }
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> T {
    s.parse().ok().expect("sweep key written by this program")
}

struct RowResult {
    fields: Vec<String>,
    violation: bool,
}

fn failed(key: &[String], width: usize, e: impl std::fmt::Display) -> RowResult {
    let mut fields = key.to_vec();
    fields.resize(width - 1, String::new());
    fields.push(format!("error: {e}"));
    RowResult { fields, violation: false }
}

fn bound_row(key: &[String], r: &BoundReport) -> RowResult {
    let mut fields = key.to_vec();
    fields.extend([fmt(r.lhs), fmt(r.rhs), fmt(r.margin), r.hypothesis_ok.to_string(), "ok".into()]);
    RowResult { fields, violation: r.violation() }
}

fn parse_momentum(s: &str) -> MomentumIndex {
    MomentumIndex(s.split(';').map(parse).collect())
}

fn evaluate_point(spec: &RunSpec, kind: SweepKind, width: usize, key: &[String]) -> RowResult {
    match kind {
        SweepKind::Lemma6 => {
            let (l, tau, m): (usize, f64, i64) = (parse(&key[1]), parse(&key[2]), parse(&key[3]));
            if m == 0 || m.unsigned_abs() as usize > l / 2 {
                return failed(key, width, format!("momentum {m} outside 0 < |m| <= {}", l / 2));
            }
            bound_row(key, &lemma6_check(m, tau, l))
        }
        SweepKind::Lemma7 => {
            let (d, l, tau): (usize, usize, f64) = (parse(&key[0]), parse(&key[1]), parse(&key[2]));
            let lat = Lattice::new(d, l).expect("planned on a valid lattice");
            match lemma7_check(&parse_momentum(&key[3]), tau, lat) {
                Ok(r) => bound_row(key, &r),
                Err(e) => failed(key, width, e),
            }
        }
        SweepKind::Lemma8 => {
            let (l, n, tau): (usize, usize, f64) = (parse(&key[0]), parse(&key[1]), parse(&key[2]));
            let Some(side) = box_side_for(l, n) else {
                return failed(key, width, format!("no odd box side gives {n} boxes on {l} sites"));
            };
            let c = chain_evaluate_1d(l, side, &Jm1d::compute(l, tau));
            let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
            let mut fields = key.to_vec();
            fields.extend([side.to_string(), fmt(c.s), opt(c.delta_half), opt(c.ratio), "ok".into()]);
            RowResult { fields, violation: false }
        }
        SweepKind::Fraction => match fraction_point(spec, key) {
            Ok(mut fields) => {
                fields.push("ok".into());
                RowResult { fields, violation: false }
            }
            Err(e) => failed(key, width, e),
        },
    }
}

fn fraction_point(spec: &RunSpec, key: &[String]) -> Result<Vec<String>, CliError> {
    let (d, l, n, tau): (usize, usize, usize, f64) = (parse(&key[0]), parse(&key[1]), parse(&key[2]), parse(&key[3]));
    let side = box_side_for(l, n).ok_or_else(|| ConfigError::Invalid {
        key: "sweep.boxes_per_axis",
        reason: format!("no odd box side gives {n} boxes on {l} sites"),
    })?;
    let params = LatticeParams {
        dim: d,
        size: l,
        box_side: side,
        rho_bar: spec.rho_bar.expect("validated"),
        epsilon: spec.epsilon.unwrap_or(crate::config::DEFAULT_EPSILON),
    };
    let cfg = Arc::new(LatticeConfig::derive(params).map_err(ConfigError::from)?);
    let delta = fraction_delta(spec, tau, &cfg)?;
    let dt = spec.dt.unwrap_or(tau / 2000.0);
    let r = match build_state(spec, cfg)? {
        World::Slater(s) => noneq_fraction(&s, tau, delta, dt)?,
        World::Fock(s) => noneq_fraction(&s, tau, delta, dt)?,
    };
    let mut fields = key.to_vec();
    fields.extend([fmt(r.delta), fmt(r.dt), fmt(r.fraction), r.surrogate.to_string()]);
    Ok(fields)
}

fn existing_keys(path: &Path, key_len: usize) -> Result<HashSet<Vec<String>>, CliError> {
    let mut keys = HashSet::new();
    if !path.exists() {
        return Ok(keys);
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).flexible(true).from_path(path)?;
    for rec in reader.records() {
        let rec = rec?;
        keys.insert(rec.iter().take(key_len).map(str::to_string).collect());
    }
    Ok(keys)
}

fn sweep(spec: &RunSpec, out: &Path, header: &str) -> Result<(), CliError> {
    let kind = spec.sweep.as_ref().expect("validated").kind;
    let plan = plan(spec);
    let path = out.join(plan.file);
    let done = existing_keys(&path, plan.key_len)?;
    let pending: Vec<&Vec<String>> = plan.points.iter().filter(|k| !done.contains(*k)).collect();
    let width = plan.columns.len();
    let results: Vec<RowResult> = pending.par_iter().map(|k| evaluate_point(spec, kind, width, k)).collect();

    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(&path)?;
    let mut file = BufWriter::new(file);
    if fresh {
        file.write_all(header.as_bytes())?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(&plan.columns)?;
    }
    for r in &results {
        w.write_record(&r.fields)?;
    }
    w.flush()?;
    let violations = results.iter().filter(|r| r.violation).count();
    if violations > 0 {
        return Err(CliError::Violation(violations));
    }
    Ok(())
}
