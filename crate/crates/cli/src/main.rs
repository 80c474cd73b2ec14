use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crnosc_core::inheritance::{
    build_extension, describe_schedule, extended_network, failure_reason, synthesize_rates,
    verify_inheritance, Extension, InheritanceError, InheritanceReport, OrbitOutcome, VerifyConfig,
};
use crnosc_core::model::{format_number, parse_network, serialize_network, Network};
use crnosc_core::odeint::{integrate, schemes, IntegratorConfig, OdeError};
use crnosc_core::orbit::{
    find_periodic_orbit, Classification, OrbitError, OrbitSearchConfig, PeriodicOrbit,
};
use crnosc_core::stoich::conservation_laws;

/// Mass-action reaction networks: simulation, periodic orbits, Floquet
/// multipliers and oscillation-preserving extensions.
#[derive(Parser)]
#[command(name = "crnosc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a network and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Find a periodic orbit and write its report as JSON.
    Orbit(OrbitArgs),
    /// Find a periodic orbit and print its relative Floquet multipliers.
    Floquet(OrbitArgs),
    /// Add reversible reactions with synthesized rate constants.
    Extend(ExtendArgs),
    /// Check that an extension keeps a stable periodic orbit.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct IntegratorFlags {
    #[arg(long, default_value_t = 1e-9)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-11)]
    atol: f64,
    #[arg(long)]
    max_step: Option<f64>,
    #[arg(long, default_value_t = 5_000_000)]
    max_steps: usize,
    /// Runge-Kutta pair, by registry name.
    #[arg(long, default_value = schemes::DEFAULT_SCHEME)]
    method: String,
}

impl IntegratorFlags {
    fn config(&self) -> Result<IntegratorConfig, CliError> {
        if schemes::builtin().get(&self.method).is_none() {
            return Err(CliError::Input(format!(
                "unknown method `{}`; available: {}",
                self.method,
                schemes::builtin().names().join(", ")
            )));
        }
        for (name, v) in [("--rtol", self.rtol), ("--atol", self.atol)] {
            if !(v > 0.0) {
                return Err(CliError::Input(format!("{name} must be positive")));
            }
        }
        Ok(IntegratorConfig {
            rtol: self.rtol,
            atol: self.atol,
            max_step: self.max_step.unwrap_or(f64::INFINITY),
            max_steps: self.max_steps,
            scheme: self.method.clone(),
        })
    }
}

#[derive(Args, Clone)]
struct SearchFlags {
    #[arg(long, default_value_t = 150.0)]
    burn_in: f64,
    #[arg(long, default_value_t = 50)]
    max_returns: usize,
    #[arg(long, default_value_t = 100.0)]
    probe_time: f64,
    #[arg(long, default_value_t = 1e-4)]
    trivial_tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    unit_circle_tol: f64,
    /// Points sampled along one period.
    #[arg(long, default_value_t = 512)]
    samples: usize,
    #[command(flatten)]
    integrator: IntegratorFlags,
}

impl SearchFlags {
    fn config(&self) -> Result<OrbitSearchConfig, CliError> {
        Ok(OrbitSearchConfig {
            burn_in: self.burn_in,
            max_returns: self.max_returns,
            probe_time: self.probe_time,
            trivial_tol: self.trivial_tol,
            unit_circle_tol: self.unit_circle_tol,
            samples: self.samples.max(1),
            integrator: self.integrator.config()?,
            ..OrbitSearchConfig::default()
        })
    }
}

#[derive(Args)]
struct SimulateArgs {
    network: PathBuf,
    /// Initial state: `1,1,1` in species order or `X=1,Y=1,Z=1`.
    #[arg(long)]
    x0: String,
    #[arg(long)]
    t_end: f64,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    integrator: IntegratorFlags,
}

#[derive(Args)]
struct OrbitArgs {
    network: PathBuf,
    #[arg(long)]
    x0: String,
    /// JSON report; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV of the sampled orbit.
    #[arg(long)]
    samples_csv: Option<PathBuf>,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Args)]
struct ExtendArgs {
    base: PathBuf,
    /// Reversible reactions to add, one per line.
    #[arg(long)]
    add: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    #[arg(long, default_value_t = 0.2)]
    eta: f64,
    /// Network file to write; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    base: PathBuf,
    #[arg(long)]
    add: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    /// Defaults to the value of epsilon.
    #[arg(long)]
    eta: Option<f64>,
    /// Run several epsilon values concurrently, each with eta equal to it
    /// unless `--eta` is given.
    #[arg(long, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    /// Initial values of the new species, in order of first appearance.
    #[arg(long)]
    y0: String,
    /// Initial state of the base network; all ones when omitted.
    #[arg(long)]
    x0: Option<String>,
    /// JSON report. With `--eps-list` one file per value is written, named
    /// `<stem>.eps-<value>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("no orbit found ({reason}): {message}")]
    NoOrbit { reason: String, message: String },
    #[error("{0}")]
    RankDeficient(String),
    #[error("orbit is {0}, not nondegenerate-stable")]
    NotStable(Classification),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => 1,
            Self::Integration(_) => 2,
            Self::NoOrbit { .. } => 3,
            Self::RankDeficient(_) => 4,
            Self::NotStable(_) => 5,
        }
    }
}

impl From<OrbitError> for CliError {
    fn from(e: OrbitError) -> Self {
        match e {
            OrbitError::Integration(inner) => Self::Integration(inner.to_string()),
            OrbitError::InvalidInitialState { .. } => Self::Input(e.to_string()),
            other => Self::NoOrbit {
                reason: failure_reason(&other).to_string(),
                message: other.to_string(),
            },
        }
    }
}

impl From<InheritanceError> for CliError {
    fn from(e: InheritanceError) -> Self {
        match e {
            InheritanceError::RankDeficient { .. } => Self::RankDeficient(e.to_string()),
            other => Self::Input(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn load_network(path: &Path) -> Result<Network, CliError> {
    parse_network(&read_text(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Opens `path` for writing, or standard output.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => {
            let f = fs::File::create(p).map_err(|e| io_error(p, e))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

fn write_all(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    let mut w = sink(path)?;
    let name = path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_error(&name, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Parses `1,2,3` (positional) or `A=1,B=2` (named, every name required).
fn parse_values(text: &str, names: &[String], flag: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    let number = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| CliError::Input(format!("{flag}: `{s}` is not a number")))
    };
    if parts.iter().any(|p| p.contains('=')) {
        let mut values = vec![None; names.len()];
        for p in &parts {
            let (name, v) = p.split_once('=').ok_or_else(|| {
                CliError::Input(format!("{flag}: mixed named and positional values"))
            })?;
            let i = names.iter().position(|s| s == name.trim()).ok_or_else(|| {
                CliError::Input(format!("{flag}: unknown species `{}`", name.trim()))
            })?;
            values[i] = Some(number(v.trim())?);
        }
        return names
            .iter()
            .zip(values)
            .map(|(n, v)| {
                v.ok_or_else(|| CliError::Input(format!("{flag}: missing value for species `{n}`")))
            })
            .collect();
    }
    if parts.len() != names.len() {
        let missing = names
            .get(parts.len())
            .map_or(String::new(), |n| format!("; missing species `{n}`"));
        return Err(CliError::Input(format!(
            "{flag}: expected {} values for species {}, got {}{missing}",
            names.len(),
            names.join(", "),
            parts.len()
        )));
    }
    let values = parts
        .iter()
        .map(|p| number(p))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some((n, v)) = names
        .iter()
        .zip(&values)
        .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
    {
        return Err(CliError::Input(format!(
            "{flag}: value for `{n}` must be nonnegative, got {v}"
        )));
    }
    Ok(values)
}

fn samples_csv(orbit: &PeriodicOrbit, names: &[String]) -> String {
    let mut out = format!("t,{}\n", names.join(","));
    let n = orbit.samples.len() as f64;
    for (i, s) in orbit.samples.iter().enumerate() {
        out.push_str(&format!("{:.16e}", orbit.period * i as f64 / n));
        for v in s {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let net = load_network(&args.network)?;
    let names = net.species_names();
    let x0 = parse_values(&args.x0, &names, "--x0")?;
    let cfg = args.integrator.config()?;
    let traj = integrate(&net, &x0, args.t_end, &cfg).map_err(|e| match e {
        OdeError::InvalidSpan(_) | OdeError::InvalidConfig(_) => CliError::Input(e.to_string()),
        other => CliError::Integration(other.to_string()),
    })?;
    let mut w = sink(args.out.as_deref())?;
    traj.write_csv(&names, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Input(e.to_string()))?;

    let laws = conservation_laws(net.stoichiometric_matrix());
    let start = laws.evaluate(traj.first_state());
    let drift = traj
        .states()
        .map(|x| (laws.evaluate(x) - &start).amax())
        .fold(0.0, f64::max);
    eprintln!(
        "{} steps ({} rejected); {} conservation law(s), max drift {:.3e}",
        traj.stats.accepted,
        traj.stats.rejected,
        laws.count(),
        drift
    );
    Ok(())
}

fn search(args: &OrbitArgs) -> Result<(Network, PeriodicOrbit), CliError> {
    let net = load_network(&args.network)?;
    let x0 = parse_values(&args.x0, &net.species_names(), "--x0")?;
    let orbit = find_periodic_orbit(&net, &x0, &args.search.config()?)?;
    if let Some(path) = &args.samples_csv {
        write_all(Some(path), &samples_csv(&orbit, &net.species_names()))?;
    }
    Ok((net, orbit))
}

fn orbit(args: &OrbitArgs) -> Result<(), CliError> {
    let (net, orbit) = search(args)?;
    let csv = args.samples_csv.as_ref().map(|p| p.display().to_string());
    write_all(
        args.out.as_deref(),
        &to_json(&orbit.report(&net.species_names(), csv)),
    )?;
    eprintln!("period {} ({})", orbit.period, orbit.classification());
    Ok(())
}

fn floquet(args: &OrbitArgs) -> Result<(), CliError> {
    let (net, orbit) = search(args)?;
    let mut text = format!(
        "period {}\nrank {} of {} species\n",
        orbit.period,
        orbit.multipliers_relative().len(),
        net.num_species()
    );
    for (i, m) in orbit.multipliers_relative().iter().enumerate() {
        let tag = if i == orbit.spectrum.trivial_index {
            "  trivial"
        } else {
            ""
        };
        text.push_str(&format!(
            "{:+.12e} {:+.12e}i  |mu| = {:.12e}{tag}\n",
            m.re,
            m.im,
            m.norm()
        ));
    }
    text.push_str(&format!("classification {}\n", orbit.classification()));
    write_all(args.out.as_deref(), &text)
}

fn describe_extension(ext: &Extension) -> String {
    let mut text = String::from("beta (rows: new species, columns: added reactions)\n");
    for (i, name) in ext.new_species_appearance().iter().enumerate() {
        let row: Vec<String> = ext.beta.row(i).iter().map(|v| format!("{v:>3}")).collect();
        text.push_str(&format!("  {name:>8} [{}]\n", row.join(" ")));
    }
    text.push_str(&format!("rank {} (columns {})\n", ext.rank_beta, ext.m()));
    text.push_str(&format!(
        "pivot order: {}\n",
        ext.new_species_ordered().join(", ")
    ));
    text
}

fn load_extension(base: &Path, add: &Path) -> Result<Extension, CliError> {
    let base = load_network(base)?;
    let text = read_text(add)?;
    build_extension(&base, &text).map_err(|e| match e {
        InheritanceError::Parse(p) => CliError::Input(format!("{}: {p}", add.display())),
        other => other.into(),
    })
}

fn extend(args: &ExtendArgs) -> Result<(), CliError> {
    let ext = load_extension(&args.base, &args.add)?;
    if ext.had_rates {
        eprintln!(
            "note: rate constants in {} are replaced by the synthesized schedule",
            args.add.display()
        );
    }
    let sched = synthesize_rates(&ext, args.eps, args.eta)?;
    let net = extended_network(&ext, &sched);
    eprint!("{}", describe_extension(&ext));
    for line in describe_schedule(&ext, &sched) {
        eprintln!("  {line}");
    }
    write_all(args.out.as_deref(), &(serialize_network(&net) + "\n"))
}

#[derive(Serialize)]
struct VerifyDocument {
    schema: u32,
    status: &'static str,
    exit_code: u8,
    error: Option<String>,
    base_orbit: Option<OrbitOutcome>,
    report: Option<InheritanceReport>,
}

fn failure_document(err: &CliError, base_orbit: Option<OrbitOutcome>) -> VerifyDocument {
    VerifyDocument {
        schema: 1,
        status: "failed",
        exit_code: err.code(),
        error: Some(err.to_string()),
        base_orbit,
        report: None,
    }
}

fn case_path(out: &Path, eps: f64) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.eps-{}.json", format_number(eps)))
}

fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let out = args.out.as_deref();
    let fail = |err: CliError, base: Option<OrbitOutcome>| -> Result<(), CliError> {
        if out.is_some() {
            write_all(out, &to_json(&failure_document(&err, base)))?;
        }
        Err(err)
    };

    let ext = match load_extension(&args.base, &args.add) {
        Ok(ext) => ext,
        Err(e) => return fail(e, None),
    };
    let prepared = (|| {
        let y0 = parse_values(&args.y0, ext.new_species_appearance(), "--y0")?;
        let x0 = match &args.x0 {
            Some(s) => parse_values(s, &ext.base().species_names(), "--x0")?,
            None => vec![1.0; ext.n()],
        };
        Ok::<_, CliError>((x0, y0, args.search.config()?))
    })();
    let (x0, y0, search_cfg) = match prepared {
        Ok(v) => v,
        Err(e) => return fail(e, None),
    };

    let base_orbit = match find_periodic_orbit(ext.base(), &x0, &search_cfg) {
        Ok(o) => o,
        Err(e) => {
            let outcome = OrbitOutcome::Failed {
                reason: failure_reason(&e).to_string(),
                message: e.to_string(),
            };
            return fail(e.into(), Some(outcome));
        }
    };
    let base_outcome = OrbitOutcome::Found(base_orbit.report(&ext.base().species_names(), None));
    if base_orbit.classification() != Classification::NondegenerateStable {
        return fail(
            CliError::NotStable(base_orbit.classification()),
            Some(base_outcome),
        );
    }

    let cases: Vec<(f64, f64)> = match &args.eps_list {
        Some(list) => list.iter().map(|&e| (e, args.eta.unwrap_or(e))).collect(),
        None => vec![(args.eps, args.eta.unwrap_or(args.eps))],
    };
    let cfg = VerifyConfig { orbit: search_cfg };
    let results: Vec<Result<InheritanceReport, InheritanceError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cases
            .iter()
            .map(|&(eps, eta)| {
                let (ext, base_orbit, y0, cfg) = (&ext, &base_orbit, &y0, &cfg);
                scope.spawn(move || verify_inheritance(base_orbit, ext, eps, eta, y0, cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("verification thread panicked"))
            .collect()
    });

    let mut first_error = None;
    for ((eps, eta), result) in cases.iter().zip(results) {
        let (doc, err) = match result {
            Ok(report) => {
                let err = match &report.orbit {
                    OrbitOutcome::Failed { reason, message } => {
                        Some(if reason == "stiff" || reason == "integration-failed" {
                            CliError::Integration(message.clone())
                        } else {
                            CliError::NoOrbit {
                                reason: reason.clone(),
                                message: message.clone(),
                            }
                        })
                    }
                    OrbitOutcome::Found(o) if !report.stable => {
                        Some(CliError::NotStable(o.classification))
                    }
                    OrbitOutcome::Found(_) => None,
                };
                summarize(*eps, *eta, &report);
                let doc = VerifyDocument {
                    schema: 1,
                    status: if err.is_none() { "ok" } else { "failed" },
                    exit_code: err.as_ref().map_or(0, CliError::code),
                    error: err.as_ref().map(ToString::to_string),
                    base_orbit: Some(base_outcome.clone()),
                    report: Some(report),
                };
                (doc, err)
            }
            Err(e) => {
                let err = CliError::from(e);
                (
                    failure_document(&err, Some(base_outcome.clone())),
                    Some(err),
                )
            }
        };
        let path = match (out, &args.eps_list) {
            (Some(p), Some(_)) => Some(case_path(p, *eps)),
            (Some(p), None) => Some(p.to_path_buf()),
            (None, _) => None,
        };
        write_all(path.as_deref(), &to_json(&doc))?;
        if let Some(e) = err {
            eprintln!("eps = {eps}: {e}");
            first_error.get_or_insert(e);
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn summarize(eps: f64, eta: f64, r: &InheritanceReport) {
    let h = r
        .hausdorff_old_species
        .map_or("n/a".to_string(), |h| format!("{h:.6}"));
    let ranges: Vec<String> = r
        .new_species_ranges
        .iter()
        .map(|s| format!("{} {:.4}", s.species, s.peak_to_peak))
        .collect();
    eprintln!(
        "eps = {eps}, eta = {eta}: stable = {}, hausdorff (old species) = {h}, peak-to-peak: {}",
        r.stable,
        ranges.join(", ")
    );
    for q in &r.conserved_quantities {
        let mut expr = String::new();
        for (s, c) in &q.coefficients {
            let sign = if *c < 0.0 {
                "-"
            } else if expr.is_empty() {
                ""
            } else {
                "+"
            };
            let mag = match c.abs() {
                1.0 => String::new(),
                m => format_number(m),
            };
            if !expr.is_empty() {
                expr.push(' ');
            }
            expr.push_str(&format!(
                "{sign}{}{mag}{s}",
                if expr.is_empty() || sign.is_empty() {
                    ""
                } else {
                    " "
                }
            ));
        }
        eprintln!(
            "  {expr} = {} (drift {:.2e})",
            format_number(q.initial),
            q.drift
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Orbit(a) => orbit(a),
        Command::Floquet(a) => floquet(a),
        Command::Extend(a) => extend(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
