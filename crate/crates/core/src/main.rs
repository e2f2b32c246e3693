use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use peanosphere::experiment::{format_f64, parse_count, run_named, Grid, Outcome, Timing};
use peanosphere::Error;

/// Monte Carlo checks of peanosphere cone, SLE and boundary-GMC exponents.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Laplace transform of the drifted Brownian hitting time.
    HittingLaplace(Flags),
    /// Closed-form check that the cone exponent equals kappa'/4.
    ExponentIdentity(Flags),
    /// Cone survival probabilities and their exponents.
    ConeProb(Flags),
    /// Cone fits across several kappa' values against the main identity.
    VerifyMain(Flags),
    /// Stopped Schramm-Wilson martingale against its starting value.
    MartingaleCheck(Flags),
    /// Euclidean boundary-avoidance exponent of chordal SLE.
    SleEuclid(Flags),
    /// Moment exponents of the inverted quantum boundary lengths.
    GmcMoments(Flags),
    /// Quantum avoidance exponent and direct-mode validation.
    QuantumEvent(Flags),
    /// Standalone invariant suites.
    Invariants(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "PEANOSPHERE_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Correlation of the cone walk (instead of --kappa).
    #[arg(long, allow_hyphen_values = true)]
    correlation: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Drift of the hitting-time problem.
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    /// Comma-separated lambda values.
    #[arg(long)]
    lambda: Option<String>,
    /// Single delta (same as a one-point --delta-grid).
    #[arg(long)]
    delta: Option<f64>,
    /// `lo:hi:count` (log-spaced) or a comma-separated list.
    #[arg(long)]
    delta_grid: Option<String>,
    /// `lo:hi:count` (log-spaced) or a comma-separated list.
    #[arg(long)]
    z_grid: Option<String>,
    /// Time horizon(s), comma-separated.
    #[arg(long)]
    t: Option<String>,
    /// Sample count; accepts 1e6.
    #[arg(long, visible_alias = "n")]
    samples: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    /// symmetric | asymmetric (sle-euclid), direct | rao_blackwell (quantum-event).
    #[arg(long)]
    mode: Option<String>,
    /// Resume from per-unit checkpoints in the output directory.
    #[arg(long)]
    resume: bool,
    /// Generic override, `key=value` with dotted keys for sections.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

type Overrides = Vec<(String, toml::Value)>;

fn floats(s: &str) -> Result<toml::Value, Error> {
    let v = Grid::parse(s)?.values()?;
    Ok(toml::Value::Array(v.into_iter().map(toml::Value::Float).collect()))
}

fn grid(s: &str) -> Result<toml::Value, Error> {
    Ok(match Grid::parse(s)? {
        Grid::Spec(spec) => toml::Value::String(spec),
        Grid::List(v) => toml::Value::Array(v.into_iter().map(toml::Value::Float).collect()),
    })
}

fn first(v: &toml::Value) -> toml::Value {
    v.as_array().and_then(|a| a.first()).cloned().unwrap_or_else(|| v.clone())
}

fn unsupported(name: &str, flag: &str) -> Error {
    Error::Config(format!("flag `--{flag}` does not apply to `{name}`"))
}

/// Maps command-line flags onto config keys of one experiment.
fn overrides(name: &str, f: &Flags) -> Result<Overrides, Error> {
    let mut o: Overrides = Vec::new();
    let mut put = |k: &str, v: toml::Value| o.push((k.to_string(), v));
    let float = toml::Value::Float;
    if let Some(s) = f.seed {
        put("seed", toml::Value::Integer(i64::try_from(s).map_err(|_| Error::Config("`seed` too large".into()))?));
    }
    if let Some(k) = f.kappa {
        match name {
            "verify-main" => {
                let mut t = toml::Table::new();
                t.insert("kappa".into(), float(k));
                t.insert("tol".into(), float(if (k - 12.0).abs() < 1e-12 { 0.25 } else { 0.3 }));
                put("targets", toml::Value::Array(vec![toml::Value::Table(t)]));
            }
            "exponent-identity" | "martingale-check" => put("kappas", toml::Value::Array(vec![float(k)])),
            "cone-prob" | "sle-euclid" | "quantum-event" => put("kappa", float(k)),
            _ => return Err(unsupported(name, "kappa")),
        }
    }
    if let Some(c) = f.correlation {
        match name {
            "cone-prob" => put("correlation", float(c)),
            "verify-main" => {
                let mut t = toml::Table::new();
                t.insert("correlation".into(), float(c));
                t.insert("tol".into(), float(0.1));
                put("targets", toml::Value::Array(vec![toml::Value::Table(t)]));
            }
            _ => return Err(unsupported(name, "correlation")),
        }
    }
    for (flag, val, keys) in [("gamma", f.gamma, &["hitting-laplace", "gmc-moments"][..]), ("alpha", f.alpha, &["gmc-moments"]), ("a", f.a, &["hitting-laplace"]), ("dt", f.dt, &["hitting-laplace"])] {
        if let Some(v) = val {
            if !keys.contains(&name) {
                return Err(unsupported(name, flag));
            }
            put(flag, float(v));
        }
    }
    if let Some(l) = &f.lambda {
        match name {
            "hitting-laplace" | "gmc-moments" => put("lambdas", floats(l)?),
            _ => return Err(unsupported(name, "lambda")),
        }
    }
    let deltas = match (&f.delta, &f.delta_grid) {
        (Some(_), Some(_)) => return Err(Error::Config("give only one of `--delta` and `--delta-grid`".into())),
        (Some(d), None) => Some(toml::Value::Array(vec![float(*d)])),
        (None, Some(g)) => Some(grid(g)?),
        _ => None,
    };
    if let Some(d) = deltas {
        match name {
            "hitting-laplace" | "cone-prob" | "verify-main" | "gmc-moments" | "quantum-event" => put("deltas", d),
            _ => return Err(unsupported(name, "delta-grid")),
        }
    }
    if let Some(z) = &f.z_grid {
        match name {
            "sle-euclid" => put("z_grid", grid(z)?),
            _ => return Err(unsupported(name, "z-grid")),
        }
    }
    if let Some(t) = &f.t {
        let v = floats(t)?;
        match name {
            "cone-prob" => put("t", v),
            "verify-main" => put("t", first(&v)),
            "martingale-check" => put("t_stops", v),
            "sle-euclid" => {
                let mut t = toml::Table::new();
                t.insert("kind".into(), toml::Value::String("capacity".into()));
                t.insert("t".into(), first(&v));
                put("stop", toml::Value::Table(t));
            }
            _ => return Err(unsupported(name, "t")),
        }
    }
    if let Some(s) = &f.samples {
        let n = parse_count(s)?;
        let n = toml::Value::Integer(i64::try_from(n).map_err(|_| Error::Config("`samples` too large".into()))?);
        match name {
            "gmc-moments" | "quantum-event" => put("n_fields", n),
            "exponent-identity" => return Err(unsupported(name, "samples")),
            _ => put("samples", n),
        }
    }
    if let Some(m) = &f.mode {
        match name {
            "sle-euclid" | "quantum-event" => put("mode", toml::Value::String(m.replace('-', "_"))),
            _ => return Err(unsupported(name, "mode")),
        }
    }
    for kv in &f.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("`--set {kv}` is not key=value")))?;
        // Values are TOML; bare words fall back to strings.
        let parsed = format!("v = {v}").parse::<toml::Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| toml::Value::String(v.to_string()));
        o.push((k.trim().to_string(), parsed));
    }
    Ok(o)
}

fn print_summary(name: &str, out: &Outcome, dir: &std::path::Path) {
    use std::io::Write;
    let r = &out.report;
    let mut w = std::io::stdout().lock();
    // A closed pipe (e.g. `| head`) is not an error of the run.
    let mut lines = Vec::new();
    for c in &r.checks {
        lines.push(format!("[{}] {}  (observed {}, expected {}, tolerance {})", c.verdict, c.rule, format_f64(c.observed), format_f64(c.expected), format_f64(c.tolerance)));
    }
    for c in &r.diagnostics {
        lines.push(format!("[diagnostic {}] {}  (observed {}, expected {})", c.verdict, c.rule, format_f64(c.observed), format_f64(c.expected)));
    }
    lines.push(format!("{name}: {} -> {}", r.verdict, dir.display()));
    for l in lines {
        if writeln!(w, "{l}").is_err() {
            break;
        }
    }
}

fn run(cmd: Command) -> Result<bool, (Error, u8)> {
    let (name, flags) = match cmd {
        Command::HittingLaplace(f) => ("hitting-laplace", f),
        Command::ExponentIdentity(f) => ("exponent-identity", f),
        Command::ConeProb(f) => ("cone-prob", f),
        Command::VerifyMain(f) => ("verify-main", f),
        Command::MartingaleCheck(f) => ("martingale-check", f),
        Command::SleEuclid(f) => ("sle-euclid", f),
        Command::GmcMoments(f) => ("gmc-moments", f),
        Command::QuantumEvent(f) => ("quantum-event", f),
        Command::Invariants(f) => ("invariants", f),
    };
    let usage = |e: Error| (e, 2u8);
    let text = match &flags.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| usage(Error::Config(format!("{}: {e}", p.display()))))?,
        None => String::new(),
    };
    let o = overrides(name, &flags).map_err(usage)?;
    if let Some(n) = flags.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| usage(Error::Config(format!("threads: {e}"))))?;
    }
    let start = Instant::now();
    let ck = flags.resume.then_some(flags.out_dir.as_path());
    let (out, resumed) = run_named(name, &text, &o, ck).map_err(|e| {
        let code = if matches!(e, Error::Config(_) | Error::Parameter { .. }) { 2 } else { 1 };
        (e, code)
    })?;
    let timing = Timing { experiment: name.into(), seconds: start.elapsed().as_secs_f64(), threads: rayon::current_num_threads(), resumed_units: resumed };
    out.write(&flags.out_dir, Some(&timing)).map_err(|e| (e, 1))?;
    print_summary(name, &out, &flags.out_dir);
    Ok(out.report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err((e, code)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
