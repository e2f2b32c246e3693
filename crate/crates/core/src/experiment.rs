//! Experiment configurations, runners and deterministic report files.
//!
//! Every config deserializes with unknown keys rejected and defaults equal to
//! the acceptance settings. Reports contain no wall-clock data, so identical
//! configs give identical bytes; timings go to a separate file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::cone::{correlation_from_kappa, estimate_cone_grid, fit_cone_exponents, independent_cone_prob, sigma_from_correlation, ConeCell, ConeFit, ConeMethod, CorrelationSpec};
use crate::error::{Error, Result};
use crate::gmc::{
    estimate_joint_moment, fit_moment_exponent, find_x_delta, quantum_boundary_measure, sandwich_check, BoundaryGrid, FieldModel, KernelMeta, MomentCell, MomentConfig, MomentFit,
    MomentQuery, SamplerKind, Side, WedgeSpec,
};
use crate::mc::Estimate;
use crate::quantum::{default_table_grid, estimate_quantum, fit_quantum_exponent, EventTable, QuantumCell, QuantumEstimates, QuantumEventConfig, QuantumMode, Stopping};
use crate::rng::{tags, RandomStream, GENERATOR_NAME};
use crate::sle::{
    euclid_cell, estimate_event, fit_euclid_cells, martingale_check, right_gap_power_means, run_until, EuclidCell, EuclidFit, EventStop, FitMode, MartingaleReport, SleConfig,
    SleParams,
};
use crate::stats::{log_grid, value_verdict, RuleCheck, Verdict};
use crate::stochastic::{bessel_power_means, estimate_laplace_multi, BesselParams, LaplaceEstimate};

/// A grid given as a list or as `"lo:hi:count"` (log-spaced, inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Spec(String),
}

impl Grid {
    pub fn log(lo: f64, hi: f64, n: usize) -> Self {
        Grid::Spec(format!("{lo}:{hi}:{n}"))
    }

    /// Parses `lo:hi:count` or a comma-separated list.
    pub fn parse(s: &str) -> Result<Self> {
        let g = if s.contains(':') {
            Grid::Spec(s.trim().to_string())
        } else {
            let v = s.split(',').map(|x| parse_f64(x.trim())).collect::<Result<Vec<_>>>()?;
            Grid::List(v)
        };
        g.values()?;
        Ok(g)
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Grid::List(v) => v.clone(),
            Grid::Spec(s) => {
                let parts: Vec<&str> = s.split(':').collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!("grid `{s}` is not lo:hi:count")));
                }
                let (lo, hi) = (parse_f64(parts[0])?, parse_f64(parts[1])?);
                let n: usize = parts[2].trim().parse().map_err(|_| Error::Config(format!("grid `{s}`: bad count")))?;
                if !(lo > 0.0 && hi >= lo && n >= 1) {
                    return Err(Error::Config(format!("grid `{s}` needs 0 < lo <= hi and count >= 1")));
                }
                log_grid(lo, hi, n)
            }
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("grid must be non-empty and finite".into()));
        }
        Ok(v)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Config(format!("`{s}` is not a number")))
}

/// Parses a sample count, accepting `1000000`, `1e6` or `1_000_000`.
pub fn parse_count(s: &str) -> Result<u64> {
    let t = s.trim().replace('_', "");
    if let Ok(n) = t.parse::<u64>() {
        return Ok(n);
    }
    let f: f64 = t.parse().map_err(|_| Error::Config(format!("`{s}` is not a count")))?;
    if f >= 0.0 && f.fract() == 0.0 && f < 1.8e19 {
        Ok(f as u64)
    } else {
        Err(Error::Config(format!("`{s}` is not a non-negative integer")))
    }
}

fn de_count<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        U(u64),
        F(f64),
        S(String),
    }
    let s = match Raw::deserialize(d)? {
        Raw::U(n) => return Ok(n),
        Raw::F(f) => f.to_string(),
        Raw::S(s) => s,
    };
    parse_count(&s).map_err(serde::de::Error::custom)
}

/// A CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    F(f64),
    U(u64),
    S(String),
    B(bool),
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::F(v)
    }
}
impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::U(v)
    }
}
impl From<u32> for Value {
    fn from(v: u32) -> Self {
        Value::U(v as u64)
    }
}
impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::U(v as u64)
    }
}
impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::B(v)
    }
}
impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::S(v.to_string())
    }
}
impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::S(v)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::F(x) => format_f64(*x),
            Value::U(n) => n.to_string(),
            Value::S(s) => s.clone(),
            Value::B(b) => b.to_string(),
        }
    }
}

/// A table written as `<name>.csv` with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, header: &[&'static str]) -> Self {
        Self { name: name.to_string(), header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Value::render)).map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }
}

/// Seeds, generator and config hash of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub crate_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub generator: String,
    pub stream_layout: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub config: serde_json::Value,
    pub manifest: Manifest,
    pub theory: serde_json::Value,
    pub fits: serde_json::Value,
    /// Acceptance rules; these decide the verdict.
    pub checks: Vec<RuleCheck>,
    /// Supplementary rules reported alongside; they do not affect the
    /// verdict.
    pub diagnostics: Vec<RuleCheck>,
    pub verdict: Verdict,
    pub samples: u64,
    pub details: serde_json::Value,
}

impl Report {
    fn new<C: Serialize>(name: &str, config: &C, seed: u64, layout: &str) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            experiment: name.into(),
            manifest: Manifest {
                experiment: name.into(),
                crate_version: env!("CARGO_PKG_VERSION").into(),
                config_sha256: sha256_hex(&serde_json::to_vec(&config).expect("json value serializes")),
                seed,
                generator: GENERATOR_NAME.into(),
                stream_layout: layout.into(),
                files: Vec::new(),
            },
            config,
            theory: serde_json::Value::Null,
            fits: serde_json::Value::Null,
            checks: Vec::new(),
            diagnostics: Vec::new(),
            verdict: Verdict::Pass,
            samples: 0,
            details: serde_json::Value::Null,
        })
    }

    fn finish(mut self) -> Self {
        self.verdict = self.checks.iter().fold(Verdict::Pass, |v, c| v.and(c.verdict));
        if self.checks.is_empty() {
            self.verdict = Verdict::Inconclusive;
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in d.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Report plus its tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Report,
    pub tables: Vec<Table>,
}

impl Outcome {
    /// File name and bytes of every output, in a fixed order.
    pub fn render(&self) -> Result<Vec<(String, Vec<u8>)>> {
        let mut files = Vec::new();
        for t in &self.tables {
            files.push((format!("{}.csv", t.name), t.to_csv()?));
        }
        let mut report = self.report.clone();
        report.manifest.files = files.iter().map(|(n, _)| n.clone()).collect();
        report.manifest.files.push("report.json".into());
        report.manifest.files.push("manifest.json".into());
        let pretty = |v: &dyn erased::Ser| -> Result<Vec<u8>> {
            let mut b = v.to_pretty()?;
            b.push(b'\n');
            Ok(b)
        };
        files.push(("report.json".into(), pretty(&report)?));
        files.push(("manifest.json".into(), pretty(&report.manifest)?));
        Ok(files)
    }

    /// Writes every output to `dir`, plus `timing.json` when given.
    pub fn write(&self, dir: &Path, timing: Option<&Timing>) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let mut written = Vec::new();
        let mut files = self.render()?;
        if let Some(t) = timing {
            let mut b = serde_json::to_vec_pretty(t).map_err(|e| Error::Io(e.to_string()))?;
            b.push(b'\n');
            files.push(("timing.json".into(), b));
        }
        for (name, bytes) in files {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            written.push(p);
        }
        Ok(written)
    }
}

mod erased {
    use crate::error::{Error, Result};
    use serde::Serialize;

    pub trait Ser {
        fn to_pretty(&self) -> Result<Vec<u8>>;
    }

    impl<T: Serialize> Ser for T {
        fn to_pretty(&self) -> Result<Vec<u8>> {
            serde_json::to_vec_pretty(self).map_err(|e| Error::Io(e.to_string()))
        }
    }
}

/// Wall-clock data, kept out of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub experiment: String,
    pub seconds: f64,
    pub threads: usize,
    pub resumed_units: usize,
}

/// Unit-level checkpoint: each finished unit (a cell or a block of cells
/// with its own stream) is stored as JSON and reused on resume, so an
/// interrupted run finishes with the same bytes as an uninterrupted one.
#[derive(Debug, Default)]
pub struct Checkpoint {
    path: Option<PathBuf>,
    units: BTreeMap<String, serde_json::Value>,
    pub resumed: usize,
}

impl Checkpoint {
    pub fn disabled() -> Self {
        Self::default()
    }

    /// Opens (or starts) the checkpoint file in `dir` for a config hash.
    pub fn open(dir: &Path, config_hash: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("checkpoint-{}.json", &config_hash[..16]));
        let units = if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("checkpoint {}: {e}", path.display())))?
        } else {
            BTreeMap::new()
        };
        Ok(Self { path: Some(path), units, resumed: 0 })
    }

    pub fn unit<T: Serialize + DeserializeOwned>(&mut self, key: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        if let Some(v) = self.units.get(key) {
            if let Ok(t) = serde_json::from_value(v.clone()) {
                self.resumed += 1;
                return Ok(t);
            }
        }
        let t = f()?;
        if let Some(path) = &self.path {
            self.units.insert(key.to_string(), json(&t));
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, serde_json::to_vec(&self.units).map_err(|e| Error::Io(e.to_string()))?)?;
            std::fs::rename(&tmp, path)?;
        }
        Ok(t)
    }

    /// Removes the file after a completed run.
    pub fn finish(self) -> Result<()> {
        if let Some(p) = self.path {
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
        Ok(())
    }
}

/// A runnable experiment.
pub trait Experiment: Serialize + DeserializeOwned + Default + Clone {
    const NAME: &'static str;
    fn seed(&self) -> u64;
    fn validate(&self) -> Result<()>;
    fn run(&self, ck: &mut Checkpoint) -> Result<Outcome>;
}

/// Hash of a config as recorded in its manifest.
pub fn config_hash<C: Serialize>(c: &C) -> Result<String> {
    let v = serde_json::to_value(c).map_err(|e| Error::Config(e.to_string()))?;
    Ok(sha256_hex(&serde_json::to_vec(&v).expect("json value serializes")))
}

/// Builds a config from TOML text (possibly empty) and dotted-key overrides,
/// the latter taking precedence.
pub fn load_config<C: Experiment>(toml_text: &str, overrides: &[(String, toml::Value)]) -> Result<C> {
    let file: toml::Table = toml_text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let mut table = toml::Table::try_from(C::default()).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut table, file);
    for (key, value) in overrides {
        set_path(&mut table, key, value.clone())?;
    }
    let c = C::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
    c.validate()?;
    Ok(c)
}

/// Deep merge of `over` into `base`. Sections merge key by key, except a
/// tagged section whose `kind` changes, which replaces the old one whole.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if o.get("kind").is_none_or(|kind| b.get("kind") == Some(kind)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().ok_or_else(|| Error::Config("empty key".into()))?;
    let mut t = table;
    for p in parts {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is not a section")))?;
    }
    let mut one = toml::Table::new();
    one.insert(last.to_string(), value);
    merge(t, one);
    Ok(())
}

/// Runs `C` with an optional checkpoint directory.
pub fn run_experiment<C: Experiment>(c: &C, checkpoint_dir: Option<&Path>) -> Result<(Outcome, usize)> {
    c.validate()?;
    let mut ck = match checkpoint_dir {
        Some(d) => Checkpoint::open(d, &config_hash(c)?)?,
        None => Checkpoint::disabled(),
    };
    let out = c.run(&mut ck)?;
    let resumed = ck.resumed;
    ck.finish()?;
    Ok((out, resumed))
}

pub const EXPERIMENTS: [&str; 9] = [
    HittingLaplace::NAME,
    ExponentIdentity::NAME,
    ConeProb::NAME,
    VerifyMain::NAME,
    MartingaleExp::NAME,
    SleEuclid::NAME,
    GmcMoments::NAME,
    QuantumEvent::NAME,
    Invariants::NAME,
];

/// Runs an experiment by subcommand name from TOML text and overrides.
pub fn run_named(name: &str, toml_text: &str, overrides: &[(String, toml::Value)], checkpoint_dir: Option<&Path>) -> Result<(Outcome, usize)> {
    fn go<C: Experiment>(t: &str, o: &[(String, toml::Value)], d: Option<&Path>) -> Result<(Outcome, usize)> {
        run_experiment(&load_config::<C>(t, o)?, d)
    }
    match name {
        HittingLaplace::NAME => go::<HittingLaplace>(toml_text, overrides, checkpoint_dir),
        ExponentIdentity::NAME => go::<ExponentIdentity>(toml_text, overrides, checkpoint_dir),
        ConeProb::NAME => go::<ConeProb>(toml_text, overrides, checkpoint_dir),
        VerifyMain::NAME => go::<VerifyMain>(toml_text, overrides, checkpoint_dir),
        MartingaleExp::NAME => go::<MartingaleExp>(toml_text, overrides, checkpoint_dir),
        SleEuclid::NAME => go::<SleEuclid>(toml_text, overrides, checkpoint_dir),
        GmcMoments::NAME => go::<GmcMoments>(toml_text, overrides, checkpoint_dir),
        QuantumEvent::NAME => go::<QuantumEvent>(toml_text, overrides, checkpoint_dir),
        Invariants::NAME => go::<Invariants>(toml_text, overrides, checkpoint_dir),
        _ => Err(Error::Config(format!("unknown experiment `{name}`"))),
    }
}

fn bool_check(rule: String, observed: f64, expected: f64, tolerance: f64, ok: bool) -> RuleCheck {
    RuleCheck { rule, observed, expected, tolerance, verdict: Verdict::from_bool(ok) }
}

fn band_check(rule: String, observed: f64, expected: f64, tolerance: f64) -> RuleCheck {
    bool_check(rule, observed, expected, tolerance, (observed - expected).abs() <= tolerance)
}

fn joint_z(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let se = a.1.hypot(b.1);
    let z = if se > 0.0 { (a.0 - b.0) / se } else if a.0 == b.0 { 0.0 } else { f64::INFINITY };
    (z, se)
}

/// `0.1` as `10`, free of binary noise.
fn pct(x: f64) -> String {
    format_f64((x * 1e8).round() / 1e6)
}

fn config_err(key: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter { name: key, reason: reason.into() }
}

// ---------------------------------------------------------------- laplace

/// `E[exp(−λ τ_δ)]` against `δ^{(√(a²+4λ)−a)/γ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HittingLaplace {
    pub a: f64,
    pub gamma: f64,
    pub lambdas: Vec<f64>,
    pub deltas: Grid,
    #[serde(deserialize_with = "de_count")]
    pub samples: u64,
    pub dt: f64,
    pub seed: u64,
    /// Agreement band `max(k_stderr · se, rel_tol · theory)`.
    pub k_stderr: f64,
    pub rel_tol: f64,
}

impl Default for HittingLaplace {
    fn default() -> Self {
        Self { a: 1.0, gamma: 1.0, lambdas: vec![0.5, 2.0, 6.0], deltas: Grid::List(vec![0.05, 0.1, 0.3]), samples: 1_000_000, dt: 1e-5, seed: 1, k_stderr: 3.0, rel_tol: 0.02 }
    }
}

impl Experiment for HittingLaplace {
    const NAME: &'static str = "hitting-laplace";

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        self.deltas.values()?;
        if self.lambdas.is_empty() {
            return Err(config_err("lambdas", "empty"));
        }
        if self.samples == 0 {
            return Err(config_err("samples", "must be >= 1"));
        }
        Ok(())
    }

    fn run(&self, ck: &mut Checkpoint) -> Result<Outcome> {
        let deltas = self.deltas.values()?;
        let root = RandomStream::root(self.seed);
        let mut rep = Report::new(Self::NAME, self, self.seed, "delta i: root(seed).child(CELL, i), chunk c: .child(CHUNK, c)")?;
        let mut t = Table::new("cells", &["delta", "lambda", "estimate", "stderr", "n", "theory", "z_score", "exhausted_fraction", "pass"]);
        let mut theory = Vec::new();
        for (i, &delta) in deltas.iter().enumerate() {
            let est: Vec<LaplaceEstimate> = ck.unit(&format!("delta-{i}"), || estimate_laplace_multi(self.a, self.gamma, &self.lambdas, delta, self.samples, self.dt, root.child(tags::CELL, i as u64)))?;
            for e in est {
                let chk = value_verdict(
                    format!("|estimate - theory| <= max({} se, {}% theory) at delta={delta}, lambda={}", self.k_stderr, pct(self.rel_tol), e.lambda),
                    &e.estimate,
                    e.theory,
                    self.k_stderr,
                    self.rel_tol,
                );
                let mut chk = chk;
                if e.exhaustion_warning {
                    chk.verdict = chk.verdict.and(Verdict::Inconclusive);
                }
                t.push(vec![
                    delta.into(),
                    e.lambda.into(),
                    e.estimate.mean.into(),
                    e.estimate.stderr.into(),
                    e.estimate.n.into(),
                    e.theory.into(),
                    e.estimate.z_score(e.theory).into(),
                    e.exhausted_fraction.into(),
                    (chk.verdict == Verdict::Pass).into(),
                ]);
                theory.push(serde_json::json!({"delta": delta, "lambda": e.lambda, "theory": e.theory}));
                rep.checks.push(chk);
            }
            rep.samples += self.samples;
        }
        rep.theory = serde_json::Value::Array(theory);
        Ok(Outcome { report: rep.finish(), tables: vec![t] })
    }
}

// ---------------------------------------------------------------- identity

/// `π / arccos(cos(4π/κ′)) = κ′/4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentIdentity {
    pub kappas: Vec<f64>,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ExponentIdentity {
    fn default() -> Self {
        Self { kappas: vec![8.01, 10.0, 12.0, 16.0, 24.0, 100.0], tol: 1e-12, seed: 0 }
    }
}

impl Experiment for ExponentIdentity {
    const NAME: &'static str = "exponent-identity";

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        for &k in &self.kappas {
            if !(k > 8.0) {
                return Err(config_err("kappas", format!("identity needs kappa > 8, got {k}")));
            }
        }
        Ok(())
    }

    fn run(&self, _: &mut Checkpoint) -> Result<Outcome> {
        let mut rep = Report::new(Self::NAME, self, self.seed, "no randomness")?;
        let mut t = Table::new("identity", &["kappa", "correlation", "sigma", "kappa_over_4", "abs_error", "pass"]);
        for &k in &self.kappas {
            let c = correlation_from_kappa(k)?;
            let s = sigma_from_correlation(c)?;
            let chk = band_check(format!("|pi/arccos(cos(4pi/kappa)) - kappa/4| <= {:e} at kappa={k}", self.tol), s, k / 4.0, self.tol);
            t.push(vec![k.into(), c.into(), s.into(), (k / 4.0).into(), (s - k / 4.0).abs().into(), (chk.verdict == Verdict::Pass).into()]);
            rep.checks.push(chk);
        }
        Ok(Outcome { report: rep.finish(), tables: vec![t] })
    }
}

// ---------------------------------------------------------------- cone

fn cone_table(name: &str, cells: &[ConeCell]) -> Table {
    let mut t = Table::new(name, &["delta", "t", "hits", "n", "p_hat", "stderr"]);
    for c in cells {
        t.push(vec![c.delta.into(), c.t.into(), c.hits.into(), c.n.into(), c.p_hat.into(), c.stderr.into()]);
    }
    t
}

/// Kappa or correlation; κ′ = 16 when neither is given.
fn correlation_spec(kappa: Option<f64>, correlation: Option<f64>) -> Result<CorrelationSpec> {
    match (kappa, correlation) {
        (Some(k), None) => CorrelationSpec::from_kappa(k),
        (None, Some(c)) => CorrelationSpec::from_correlation(c),
        (None, None) => CorrelationSpec::from_kappa(DEFAULT_CONE_KAPPA),
        _ => Err(config_err("kappa", "give at most one of `kappa` and `correlation`")),
    }
}

pub const DEFAULT_CONE_KAPPA: f64 = 16.0;

/// Checks of one cone grid: σ̂ band, the `(t, δ)` ratio and, for `c = 0`,
/// per-cell agreement with the closed form.
fn cone_checks(spec: &CorrelationSpec, cells: &[ConeCell], fit: &ConeFit, sigma_tol: Option<f64>, ratio_k: f64, closed_k: f64, rep: &mut Report, closed: &mut Table) {
    let sigma = spec.sigma();
    let label = match spec.kappa {
        Some(k) => format!("kappa={k}"),
        None => format!("c={}", spec.c),
    };
    if let Some(tol) = sigma_tol {
        for (t, f) in &fit.delta_fits {
            rep.checks.push(band_check(format!("|sigma_hat - {sigma:.6}| <= {tol} at {label}, t={t}"), f.slope, sigma, tol));
        }
    }
    if let Some(j) = &fit.joint {
        let ok = (j.ratio + 2.0).abs() <= ratio_k * j.ratio_stderr;
        rep.checks.push(bool_check(format!("slope_delta/slope_t = -2 within {ratio_k} stderr at {label}"), j.ratio, -2.0, ratio_k * j.ratio_stderr, ok));
    }
    if spec.c.abs() < 1e-12 {
        for c in cells {
            let exact = independent_cone_prob(c.delta, c.t);
            let (z, _) = joint_z((c.p_hat, c.stderr), (exact, 0.0));
            let ok = z.abs() <= closed_k;
            closed.push(vec![c.delta.into(), c.t.into(), c.p_hat.into(), c.stderr.into(), exact.into(), z.into(), ok.into()]);
            rep.checks.push(bool_check(format!("closed form (2Phi(delta/sqrt t)-1)^2 within {closed_k} se at delta={}, t={}", c.delta, c.t), c.p_hat, exact, closed_k * c.stderr, ok));
        }
    }
}

fn closed_table() -> Table {
    Table::new("closed_form", &["delta", "t", "p_hat", "stderr", "closed_form", "z_score", "pass"])
}

/// Cone survival probabilities over a `(δ, t)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConeProb {
    pub kappa: Option<f64>,
    pub correlation: Option<f64>,
    pub deltas: Grid,
    pub t: Vec<f64>,
    #[serde(deserialize_with = "de_count")]
    pub samples: u64,
    pub method: ConeMethod,
    pub seed: u64,
    pub sigma_tol: Option<f64>,
    pub ratio_k: f64,
    pub closed_form_k: f64,
}

impl Default for ConeProb {
    fn default() -> Self {
        Self {
            kappa: None,
            correlation: None,
            deltas: Grid::log(0.1, 0.4, 6),
            t: vec![0.5, 1.0, 2.0, 4.0],
            samples: 10_000_000,
            method: ConeMethod::default(),
            seed: 4,
            sigma_tol: None,
            ratio_k: 3.0,
            closed_form_k: 3.0,
        }
    }
}

impl Experiment for ConeProb {
    const NAME: &'static str = "cone-prob";

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        correlation_spec(self.kappa, self.correlation)?;
        self.deltas.values()?;
        if self.t.is_empty() {
            return Err(config_err("t", "empty"));
        }
        Ok(())
    }

    fn run(&self, ck: &mut Checkpoint) -> Result<Outcome> {
        let spec = correlation_spec(self.kappa, self.correlation)?;
        let deltas = self.deltas.values()?;
        let mut rep = Report::new(Self::NAME, self, self.seed, "one walk per replica serves every cell: root(seed).child(CHUNK, c)")?;
        let cells: Vec<ConeCell> = ck.unit("grid", || estimate_cone_grid(spec, &deltas, &self.t, self.samples, self.method, RandomStream::root(self.seed)))?;
        let fit = fit_cone_exponents(&cells)?;
        let mut closed = closed_table();
        cone_checks(&spec, &cells, &fit, self.sigma_tol, self.ratio_k, self.closed_form_k, &mut rep, &mut closed);
        rep.theory = serde_json::json!({"correlation": spec.c, "sigma": spec.sigma(), "kappa": spec.kappa});
        rep.fits = json(&fit);
        rep.samples = self.samples;
        let mut tables = vec![cone_table("cells", &cells)];
        if !closed.rows.is_empty() {
            tables.push(closed);
        }
        Ok(Outcome { report: rep.finish(), tables })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeTarget {
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub correlation: Option<f64>,
    /// Absolute band on σ̂.
    #[serde(default = "default_sigma_tol")]
    pub tol: f64,
}

fn default_sigma_tol() -> f64 {
    0.3
}

/// Cone fits across a κ′ grid compared with `σ = κ′/4` and
/// `c = −cos(4π/κ′)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyMain {
    pub targets: Vec<ConeTarget>,
    pub deltas: Grid,
    pub t: f64,
    #[serde(deserialize_with = "de_count")]
    pub samples: u64,
    pub method: ConeMethod,
    pub seed: u64,
    pub identity_tol: f64,
    pub closed_form_k: f64,
}

impl Default for VerifyMain {
    fn default() -> Self {
        Self {
            targets: vec![
                ConeTarget { kappa: Some(16.0), correlation: None, tol: 0.3 },
                ConeTarget { kappa: Some(12.0), correlation: None, tol: 0.25 },
                ConeTarget { kappa: None, correlation: Some(0.0), tol: 0.1 },
            ],
            deltas: Grid::log(0.1, 0.4, 6),
            t: 1.0,
            samples: 10_000_000,
            method: ConeMethod::default(),
            seed: 3,
            identity_tol: 1e-12,
            closed_form_k: 3.0,
        }
    }
}

impl Experiment for VerifyMain {
    const NAME: &'static str = "verify-main";

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(config_err("targets", "empty"));
        }
        for t in &self.targets {
            correlation_spec(t.kappa, t.correlation)?;
        }
        self.deltas.values()?;
        Ok(())
    }

    fn run(&self, ck: &mut Checkpoint) -> Result<Outcome> {
        let deltas = self.deltas.values()?;
        let root = RandomStream::root(self.seed);
        let mut rep = Report::new(Self::NAME, self, self.seed, "target i: root(seed).child(EXPERIMENT, i).child(CHUNK, c)")?;
        let mut cells_t = Table::new("cells", &["target", "kappa", "correlation", "delta", "t", "hits", "n", "p_hat", "stderr"]);
        let mut theory_t = Table::new("theory", &["target", "kappa", "correlation", "correlation_theory", "sigma_theory", "sigma_hat", "sigma_stderr", "tol", "pass"]);
        let mut closed = closed_table();
        let mut fits = Vec::new();
        let mut theory = Vec::new();
        for (i, target) in self.targets.iter().enumerate() {
            let spec = correlation_spec(target.kappa, target.correlation)?;
            let cells: Vec<ConeCell> = ck.unit(&format!("target-{i}"), || estimate_cone_grid(spec, &deltas, &[self.t], self.samples, self.method, root.child(tags::EXPERIMENT, i as u64)))?;
            let fit = fit_cone_exponents(&cells)?;
            let before = rep.checks.len();
            cone_checks(&spec, &cells, &fit, Some(target.tol), 3.0, self.closed_form_k, &mut rep, &mut closed);
            if let Some(k) = spec.kappa {
                let ct = -(4.0 * std::f64::consts::PI / k).cos();
                rep.checks.push(band_check(format!("c = -cos(4pi/kappa) at kappa={k}"), spec.c, ct, self.identity_tol));
                rep.checks.push(band_check(format!("sigma(c) = kappa/4 at kappa={k}"), spec.sigma(), k / 4.0, self.identity_tol));
            }
            let ok = rep.checks[before..].iter().all(|c| c.verdict == Verdict::Pass);
            let f = &fit.delta_fits[0].1;
            let ct = spec.kappa.map(|k| -(4.0 * std::f64::consts::PI / k).cos()).unwrap_or(spec.c);
            theory_t.push(vec![
                i.into(),
                spec.kappa.unwrap_or(f64::NAN).into(),
                spec.c.into(),
                ct.into(),
                spec.sigma().into(),
                f.slope.into(),
                f.slope_stderr.into(),
                target.tol.into(),
                ok.into(),
            ]);
            theory.push(serde_json::json!({"target": i, "kappa": spec.kappa, "correlation": spec.c, "sigma": spec.sigma()}));
            for c in &cells {
                cells_t.push(vec![
                    i.into(),
                    spec.kappa.unwrap_or(f64::NAN).into(),
                    spec.c.into(),
                    c.delta.into(),
                    c.t.into(),
                    c.hits.into(),
                    c.n.into(),
                    c.p_hat.into(),
                    c.stderr.into(),
                ]);
            }
            fits.push(fit);
            rep.samples += self.samples;
        }
        rep.theory = serde_json::Value::Array(theory);
        rep.fits = json(&fits);
        let mut tables = vec![theory_t, cells_t];
        if !closed.rows.is_empty() {
            tables.push(closed);
        }
        Ok(Outcome { report: rep.finish(), tables })
    }
}

// ---------------------------------------------------------------- martingale

/// Mean of the stopped martingale against its initial value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MartingaleExp {
    pub kappas: Vec<f64>,
    pub z_l: f64,
    pub z_r: f64,
    pub t_stops: Vec<f64>,
    #[serde(deserialize_with = "de_count")]
    pub samples: u64,
    pub seed: u64,
    pub k_stderr: f64,
    pub sle: SleConfig,
}

impl Default for MartingaleExp {
    fn default() -> Self {
        Self { kappas: vec![10.0, 16.0], z_l: 0.5, z_r: 0.5, t_stops: vec![0.1, 0.2, 0.5], samples: 100_000, seed: 5, k_stderr: 3.0, sle: SleConfig::martingale() }
    }
}

impl Experiment for MartingaleExp {
    const NAME: &'static str = "martingale-check";

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        for &k in &self.kappas {
            SleParams::new(k, self.z_l, self.z_r)?;
        }
        if self.t_stops.is_empty() {
            return Err(config_err("t_stops", "empty"));
        }
        Ok(())
    }

    fn run(&self, ck: &mut Checkpoint) -> Result<Outcome> {
        let root = RandomStream::root(self.seed);
        let mut rep = Report::new(Self::NAME, self, self.seed, "kappa i: root(seed).child(EXPERIMENT, i).child(CHUNK, c); t_stops share paths")?;
        let mut t = Table::new("martingale", &["kappa", "z_l", "z_r", "t_stop", "mean", "stderr", "m0", "z_score", "swallowed_fraction", "pass"]);
        let mut records = Vec::new();
        for (i, &k) in self.kappas.iter().enumerate() {
            let p = SleParams::new(k, self.z_l, self.z_r)?;
            let reps: Vec<MartingaleReport> = ck.unit(&format!("kappa-{i}"), || martingale_check(&p, &self.t_stops, self.samples, &self.sle, root.child(tags::EXPERIMENT, i as u64)))?;
            for r in &reps {
                let ok = r.z_score.abs() < self.k_stderr;
                rep.checks.push(bool_check(format!("|mean M - M0| < {} se at kappa={k}, t_stop={}", self.k_stderr, r.t_stop), r.mean, r.m0, self.k_stderr * r.stderr, ok));
                t.push(vec![k.into(), self.z_l.into(), self.z_r.into(), r.t_stop.into(), r.mean.into(), r.stderr.into(), r.m0.into(), r.z_score.into(), r.swallowed_fraction.into(), ok.into()]);
            }
            records.push(serde_json::json!({"kappa": k, "m0": p.m0(), "reports": reps}));
            rep.samples += self.samples;
        }
        rep.theory = serde_json::json!(self.kappas.iter().map(|&k| serde_json::json!({"kappa": k, "m0": SleParams::new(k, self.z_l, self.z_r).map(|p| p.m0()).unwrap_or(f64::NAN)})).collect::<Vec<_>>());
        rep.details = serde_json::Value::Array(records);
        Ok(Outcome { report: rep.finish(), tables: vec![t] })
    }
}

// ---------------------------------------------------------------- euclid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleCheck {
    pub z: f64,
    pub t: Vec<f64>,
    #[serde(deserialize_with = "de_count")]
    pub samples: u64,
    pub k_stderr: f64,
}

impl Default for ScaleCheck {
    fn default() -> Self {
        Self { z: 0.3, t: vec![0.25, 4.0], samples: 1_000_000, k_stderr: 3.0 }
    }
}

/// Euclidean avoidance exponent and Brownian scaling of the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SleEuclid {
    pub kappa: f64,
    pub mode: FitMode,
    pub z_grid: Grid,
    pub z_fixed: f64,
    pub stop: EventStop,
    #[serde(deserialize_with = "de_count")]
    pub samples: u64,
    pub seed: u64,
    pub tol_rel: f64,
    pub sle: SleConfig,
    pub scale: ScaleCheck,
}

impl Default for SleEuclid {
    fn default() -> Self {
        Self {
            kappa: 10.0,
            mode: FitMode::Symmetric,
            z_grid: Grid::log(0.15, 0.5, 6),
            z_fixed: 0.5,
            stop: EventStop::Capacity { t: 1.0 },
            samples: 10_000_000,
            seed: 6,
            tol_rel: 0.1,
            sle: SleConfig::events(),
            scale: ScaleCheck::default(),
        }
    }
}

impl Experiment for SleEuclid {
    const NAME: &'static str = "sle-euclid";

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        for z in self.z_grid.values()? {
            SleParams::new(self.kappa, z, z)?;
        }
        for &t in &self.scale.t {
            SleParams::new(self.kappa, self.scale.z, self.scale.z)?;
            SleParams::new(self.kappa, self.scale.z / t.sqrt(), self.scale.z / t.sqrt())?;
        }
        Ok(())
    }

    fn run(&self, ck: &mut Checkpoint) -> Result<Outcome> {
        let grid = self.z_grid.values()?;
        let root = RandomStream::root(self.seed);
        let mut rep = Report::new(Self::NAME, self, self.seed, "cell i: root(seed).child(CELL, i); scale check j: root(seed).child(EXPERIMENT, 2j), .child(EXPERIMENT, 2j+1)")?;
        let mut cells = Vec::with_capacity(grid.len());
        for (i, &z) in grid.iter().enumerate() {
            let c: EuclidCell = ck.unit(&format!("cell-{i}"), || euclid_cell(self.kappa, self.mode, self.stop, z, self.z_fixed, self.samples, &self.sle, root.child(tags::CELL, i as u64)))?;
            cells.push(c);
        }
        let fit: EuclidFit = fit_euclid_cells(self.kappa, self.mode, cells, self.tol_rel)?;
        let mut t = Table::new("cells", &["kappa", "z_L", "z_R", "T_or_r", "mode", "hits", "n", "p_hat", "stderr"]);
        for c in &fit.cells {
            t.push(vec![c.kappa.into(), c.z_l.into(), c.z_r.into(), c.t_or_r.into(), format!("{:?}", c.mode).to_lowercase().into(), c.hits.into(), c.n.into(), c.p_hat.into(), c.stderr.into()]);
        }
        let band = self.tol_rel * fit.theory.abs();
        rep.checks.push(band_check(format!("{:?} slope within {}% of {}", self.mode, pct(self.tol_rel), fit.theory).to_lowercase(), fit.fit.slope, fit.theory, band));
        rep.samples = self.samples * grid.len() as u64;

        let mut st = Table::new("scale_check", &["T", "z", "p_T", "stderr_T", "z_scaled", "p_1", "stderr_1", "z_score", "pass"]);
        let z = self.scale.z;
        for (j, &tt) in self.scale.t.iter().enumerate() {
            let zs = z / tt.sqrt();
            let pair: (Estimate, Estimate) = ck.unit(&format!("scale-{j}"), || {
                let a = estimate_event(&SleParams::new(self.kappa, z, z)?, EventStop::Capacity { t: tt }, self.scale.samples, &self.sle, root.child(tags::EXPERIMENT, 2 * j as u64))?;
                let b = estimate_event(&SleParams::new(self.kappa, zs, zs)?, EventStop::Capacity { t: 1.0 }, self.scale.samples, &self.sle, root.child(tags::EXPERIMENT, 2 * j as u64 + 1))?;
                Ok((a, b))
            })?;
            let (zz, se) = joint_z((pair.0.mean, pair.0.stderr), (pair.1.mean, pair.1.stderr));
            let ok = zz.abs() <= self.scale.k_stderr;
            rep.checks.push(bool_check(format!("P[E^T at z] = P[E^1 at z/sqrt T] within {} joint se at T={tt}", self.scale.k_stderr), pair.0.mean, pair.1.mean, self.scale.k_stderr * se, ok));
            st.push(vec![tt.into(), z.into(), pair.0.mean.into(), pair.0.stderr.into(), zs.into(), pair.1.mean.into(), pair.1.stderr.into(), zz.into(), ok.into()]);
            rep.samples += 2 * self.scale.samples;
        }
        rep.theory = serde_json::json!({"kappa": self.kappa, "mode": self.mode, "exponent": fit.theory});
        rep.fits = json(&fit.fit);
        Ok(Outcome { report: rep.finish(), tables: vec![t, st] })
    }
}

// ---------------------------------------------------------------- gmc

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointCheck {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Target slope; defaults to `(a − √(a²+4(λ₁+λ₂)))/γ`.
    #[serde(default)]
    pub theory: Option<f64>,
    /// Whether the check decides the verdict.
    #[serde(default = "yes")]
    pub acceptance: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub q: f64,
    pub n_side: usize,
    pub sampler: SamplerKind,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { q: 0.9, n_side: 2048, sampler: SamplerKind::RadialLateral }
    }
}

/// Moment exponents of the inverted boundary lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmcMoments {
    pub gamma: f64,
    /// Defaults to `3γ/2`.
    pub alpha: Option<f64>,
    pub r: f64,
    pub grid: GridConfig,
    pub deltas: Grid,
    /// Symmetric moments `E[x̄_δ^λ]`; single-sided ones are reported as
    /// diagnostics.
    pub lambdas: Vec<f64>,
    pub joint: Vec<JointCheck>,
    #[serde(deserialize_with = "de_count")]
    pub n_fields: u64,
    pub importance: bool,
    pub seed: u64,
    pub tol_rel: f64,
}

impl Default for GmcMoments {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            alpha: None,
            r: 1.0,
            grid: GridConfig::default(),
            deltas: Grid::log(1e-4, 1e-2, 7),
            lambdas: vec![1.0, 2.0],
            joint: vec![
                JointCheck { lambda1: 1.0, lambda2: 1.0, theory: Some(1.0 - 5f64.sqrt()), acceptance: true },
                JointCheck { lambda1: 1.0, lambda2: 1.0, theory: None, acceptance: false },
                JointCheck { lambda1: 0.5, lambda2: 0.5, theory: None, acceptance: false },
            ],
            n_fields: 10_000,
            importance: true,
            seed: 7,
            tol_rel: 0.1,
        }
    }
}

impl GmcMoments {
    fn spec(&self) -> Result<WedgeSpec> {
        match self.alpha {
            Some(a) => WedgeSpec::new(self.gamma, a),
            None => WedgeSpec::with_default_alpha(self.gamma),
        }
    }

    fn queries(&self) -> Vec<MomentQuery> {
        let mut q = Vec::new();
        let mut add = |x: MomentQuery| {
            if !q.contains(&x) {
                q.push(x);
            }
        };
        for &l in &self.lambdas {
            add(MomentQuery::Symmetric { lambda: l });
            add(MomentQuery::Joint { lambda1: l, lambda2: 0.0 });
        }
        for j in &self.joint {
            let lt = j.lambda1 + j.lambda2;
            add(MomentQuery::Joint { lambda1: j.lambda1, lambda2: j.lambda2 });
            add(MomentQuery::Symmetric { lambda: lt });
            add(MomentQuery::Joint { lambda1: lt, lambda2: 0.0 });
        }
        q
    }
}

impl Experiment for GmcMoments {
    const NAME: &'static str = "gmc-moments";

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        self.spec()?;
        BoundaryGrid::new(self.r, self.grid.q, self.grid.n_side)?;
        self.deltas.values()?;
        if self.importance && self.grid.sampler != SamplerKind::RadialLateral {
            return Err(config_err("importance", "needs grid.sampler = radial_lateral"));
        }
        for j in &self.joint {
            if !(j.lambda1 > 0.0 && j.lambda2 > 0.0) {
                return Err(config_err("joint", "lambda1 and lambda2 must be > 0"));
            }
        }
        Ok(())
    }

    fn run(&self, ck: &mut Checkpoint) -> Result<Outcome> {
        let spec = self.spec()?;
        let deltas = self.deltas.values()?;
        let grid = BoundaryGrid::new(self.r, self.grid.q, self.grid.n_side)?;
        let x_min = BoundaryGrid::pilot_x_min(&spec, deltas.iter().copied().fold(f64::INFINITY, f64::min));
        let resolves = grid.resolves(x_min);
        let mut rep = Report::new(Self::NAME, self, self.seed, "field i: root(seed).child(FIELD, i) via the moment sampler chunks")?;
        let queries = self.queries();
        let (cells, meta): (Vec<MomentCell>, KernelMeta) = ck.unit("moments", || {
            let model = FieldModel::new(grid.clone(), self.grid.sampler)?;
            let cells = estimate_joint_moment(&spec, &model, &deltas, &queries, &MomentConfig { n_fields: self.n_fields, importance: self.importance }, RandomStream::root(self.seed))?;
            Ok((cells, model.meta()))
        })?;
        let cells = &cells[..];
        let mut t = Table::new("moments", &["delta", "query", "lambda1", "lambda2", "estimate", "stderr", "n", "cap_fraction"]);
        for c in cells {
            t.push(vec![c.delta.into(), c.query.label().into(), c.lambda1.into(), c.lambda2.into(), c.estimate.into(), c.stderr.into(), c.n.into(), c.cap_fraction.into()]);
        }
        let mut fits: Vec<MomentFit> = Vec::new();
        let verdict_of = |f: &MomentFit, rule: String| band_check(rule, f.fit.slope, f.theory, self.tol_rel * f.theory.abs());
        for &l in &self.lambdas {
            let f = fit_moment_exponent(&spec, cells, MomentQuery::Symmetric { lambda: l }, None, self.tol_rel)?;
            rep.checks.push(verdict_of(&f, format!("symmetric moment lambda={l}: slope within {}% of {:.7}", pct(self.tol_rel), f.theory)));
            fits.push(f);
            let f = fit_moment_exponent(&spec, cells, MomentQuery::Joint { lambda1: l, lambda2: 0.0 }, None, self.tol_rel)?;
            rep.diagnostics.push(verdict_of(&f, format!("single-sided moment lambda={l}: slope within {}% of {:.7}", pct(self.tol_rel), f.theory)));
            fits.push(f);
        }
        let mut sw = Table::new("sandwich", &["lambda1", "lambda2", "delta", "lower", "middle", "upper", "holds"]);
        let mut done_sandwich: Vec<(f64, f64)> = Vec::new();
        for j in &self.joint {
            let q = MomentQuery::Joint { lambda1: j.lambda1, lambda2: j.lambda2 };
            let f = fit_moment_exponent(&spec, cells, q, j.theory, self.tol_rel)?;
            let chk = verdict_of(&f, format!("joint moment ({},{}): slope within {}% of {:.7}", j.lambda1, j.lambda2, pct(self.tol_rel), f.theory));
            if j.acceptance {
                rep.checks.push(chk);
            } else {
                rep.diagnostics.push(chk);
            }
            fits.push(f);
            if done_sandwich.contains(&(j.lambda1, j.lambda2)) {
                continue;
            }
            done_sandwich.push((j.lambda1, j.lambda2));
            let rows = sandwich_check(cells, j.lambda1, j.lambda2)?;
            for r in &rows {
                sw.push(vec![j.lambda1.into(), j.lambda2.into(), r.delta.into(), r.lower.into(), r.middle.into(), r.upper.into(), r.holds.into()]);
            }
            let all = rows.iter().all(|r| r.holds);
            let chk = bool_check(format!("sandwich holds at every delta for ({},{})", j.lambda1, j.lambda2), rows.iter().filter(|r| r.holds).count() as f64, rows.len() as f64, 0.0, all);
            if j.acceptance {
                rep.checks.push(chk);
            } else {
                rep.diagnostics.push(chk);
            }
        }
        rep.diagnostics.push(bool_check(format!("grid resolves the pilot smallest x ({x_min:e})"), grid.edges[grid.n_side], x_min, 0.0, resolves));
        rep.theory = serde_json::json!({"gamma": spec.gamma, "alpha": spec.alpha, "a": spec.a(), "q_const": spec.q()});
        rep.fits = json(&fits);
        rep.samples = self.n_fields;
        rep.details = serde_json::json!({
            "kernel": meta,
            "grid": {"r": grid.r, "q": grid.q, "n_side": grid.n_side, "innermost_edge": grid.edges[grid.n_side], "pilot_x_min": x_min, "resolves": resolves},
        });
        Ok(Outcome { report: rep.finish(), tables: vec![t, sw] })
    }
}

// ---------------------------------------------------------------- quantum

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Validation {
    pub deltas: Grid,
    #[serde(deserialize_with = "de_count")]
    pub n_fields: u64,
    pub n_sle_per_field: u32,
    #[serde(deserialize_with = "de_count")]
    pub table_samples: u64,
    pub k_stderr: f64,
}

impl Default for Validation {
    fn default() -> Self {
        Self { deltas: Grid::log(0.05, 0.2, 4), n_fields: 10_000, n_sle_per_field: 4, table_samples: 200_000, k_stderr: 3.0 }
    }
}

/// Quantum avoidance exponent with direct-mode validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantumEvent {
    pub kappa: f64,
    pub r: f64,
    pub grid: GridConfig,
    pub deltas: Grid,
    #[serde(deserialize_with = "de_count")]
    pub n_fields: u64,
    pub mode: QuantumMode,
    pub stopping: Stopping,
    pub t_capacity: Option<f64>,
    pub importance: bool,
    pub tol_rel: f64,
    pub seed: u64,
    /// Direct vs Rao-Blackwell comparison; skipped when `n_fields = 0`.
    pub validation: Validation,
    /// Extra cutoffs whose Rao-Blackwell fits are reported as diagnostics.
    pub extra_r: Vec<f64>,
}

impl Default for QuantumEvent {
    fn default() -> Self {
        Self {
            kappa: 16.0,
            r: 0.1,
            grid: GridConfig::default(),
            deltas: Grid::log(1e-3, 1e-2, 5),
            n_fields: 10_000,
            mode: QuantumMode::RaoBlackwell,
            stopping: Stopping::Capacity,
            t_capacity: None,
            importance: true,
            tol_rel: 0.15,
            seed: 8,
            validation: Validation::default(),
            extra_r: vec![1.0],
        }
    }
}

impl QuantumEvent {
    fn qcfg(&self, r: f64, deltas: Vec<f64>, n_fields: u64, mode: QuantumMode, n_sle: u32, importance: bool) -> QuantumEventConfig {
        QuantumEventConfig { kappa: self.kappa, r, deltas, n_fields, n_sle_per_field: n_sle, mode, stopping: self.stopping, importance, t_capacity: self.t_capacity }
    }

    fn model(&self, r: f64) -> Result<FieldModel> {
        FieldModel::new(BoundaryGrid::new(r, self.grid.q, self.grid.n_side)?, SamplerKind::RadialLateral)
    }
}

fn quantum_rows(t: &mut Table, r: f64, cells: &[QuantumCell]) {
    for c in cells {
        t.push(vec![
            r.into(),
            c.delta.into(),
            format!("{:?}", c.estimator).to_lowercase().into(),
            c.estimate.into(),
            c.stderr.into(),
            c.n_fields.into(),
            c.n_sle.into(),
            c.both_capped_fraction.into(),
            c.table_rel_stderr.into(),
        ]);
    }
}

impl Experiment for QuantumEvent {
    const NAME: &'static str = "quantum-event";

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        if self.grid.sampler != SamplerKind::RadialLateral {
            return Err(config_err("grid.sampler", "quantum events need radial_lateral"));
        }
        for &r in std::iter::once(&self.r).chain(&self.extra_r) {
            self.qcfg(r, self.deltas.values()?, self.n_fields, self.mode, 1, self.importance).validate()?;
            BoundaryGrid::new(r, self.grid.q, self.grid.n_side)?;
        }
        self.validation.deltas.values()?;
        Ok(())
    }

    fn run(&self, ck: &mut Checkpoint) -> Result<Outcome> {
        let deltas = self.deltas.values()?;
        let root = RandomStream::root(self.seed);
        let mut rep = Report::new(
            Self::NAME,
            self,
            self.seed,
            "fit at cutoff j: root(seed).child(EXPERIMENT, j); validation: .child(EXPERIMENT, 1000); table: .child(TABLE, 0); field i: .child(FIELD, i); SLE: .child(SLE, i).child(SLE, rep)",
        )?;
        let gamma = 4.0 / self.kappa.sqrt();
        let mut t = Table::new("quantum", &["r", "delta", "mode", "estimate", "stderr", "n_fields", "n_sle", "both_capped_fraction", "table_rel_stderr"]);
        let mut fits = Vec::new();
        let model = self.model(self.r)?;
        let n_sle = if self.mode == QuantumMode::Direct { self.validation.n_sle_per_field.max(1) } else { 0 };
        let main: QuantumEstimates = ck.unit("fit-0", || estimate_quantum(&self.qcfg(self.r, deltas.clone(), self.n_fields, self.mode, n_sle, self.importance), &model, None, 0, root.child(tags::EXPERIMENT, 0)))?;
        let fit_cells = match (&main.direct, self.mode) {
            (Some(d), QuantumMode::Direct) => d.clone(),
            _ => main.analytic.clone(),
        };
        quantum_rows(&mut t, self.r, &main.analytic);
        if let Some(d) = &main.direct {
            quantum_rows(&mut t, self.r, d);
        }
        let f = fit_quantum_exponent(&fit_cells, gamma, self.tol_rel)?;
        rep.checks.push(band_check(format!("quantum slope at r={} within {}% of {}", self.r, pct(self.tol_rel), f.theory), f.fit.slope, f.theory, self.tol_rel * f.theory.abs()));
        fits.push(serde_json::json!({"r": self.r, "fit": f.fit, "theory": f.theory}));
        rep.samples += self.n_fields;

        let v = &self.validation;
        let mut vt = Table::new("validation", &["delta", "direct", "direct_stderr", "rb_analytic", "rb_analytic_stderr", "z_analytic", "rb_tabulated", "rb_tabulated_stderr", "z_tabulated", "pass"]);
        if v.n_fields > 0 {
            let vd = v.deltas.values()?;
            let vcfg = self.qcfg(self.r, vd, v.n_fields, QuantumMode::Direct, v.n_sle_per_field, false);
            let table: EventTable = ck.unit("table", || EventTable::build(self.kappa, vcfg.multi_stop(), default_table_grid(self.r), v.table_samples, &SleConfig::events(), root.child(tags::TABLE, 0)))?;
            let est: QuantumEstimates = ck.unit("validation", || estimate_quantum(&vcfg, &model, Some(&table), 0, root.child(tags::EXPERIMENT, 1000)))?;
            let direct = est.direct.clone().ok_or_else(|| Error::Numerical("direct estimates missing".into()))?;
            let tab = est.tabulated.clone().ok_or_else(|| Error::Numerical("tabulated estimates missing".into()))?;
            for ((d, a), tb) in direct.iter().zip(&est.analytic).zip(&tab) {
                let (za, sa) = joint_z((d.estimate, d.stderr), (a.estimate, a.stderr));
                let (zt, stt) = joint_z((d.estimate, d.stderr), (tb.estimate, tb.total_stderr()));
                let ok = za.abs() <= v.k_stderr;
                rep.checks.push(bool_check(format!("direct vs Rao-Blackwell within {} joint se at delta={}", v.k_stderr, d.delta), d.estimate, a.estimate, v.k_stderr * sa, ok));
                rep.diagnostics.push(bool_check(format!("direct vs tabulated Rao-Blackwell within {} joint se at delta={}", v.k_stderr, d.delta), d.estimate, tb.estimate, v.k_stderr * stt, zt.abs() <= v.k_stderr));
                vt.push(vec![
                    d.delta.into(),
                    d.estimate.into(),
                    d.stderr.into(),
                    a.estimate.into(),
                    a.stderr.into(),
                    za.into(),
                    tb.estimate.into(),
                    tb.total_stderr().into(),
                    zt.into(),
                    ok.into(),
                ]);
            }
            quantum_rows(&mut t, self.r, &direct);
            quantum_rows(&mut t, self.r, &est.analytic);
            quantum_rows(&mut t, self.r, &tab);
            rep.details = serde_json::json!({"table": {"z": table.z, "n": table.n, "filled": table.filled.iter().filter(|&&f| f).count()}});
            rep.samples += v.n_fields;
        }
        for (j, &r) in self.extra_r.iter().enumerate() {
            let m = self.model(r)?;
            let e: QuantumEstimates = ck.unit(&format!("fit-{}", j + 1), || estimate_quantum(&self.qcfg(r, deltas.clone(), self.n_fields, QuantumMode::RaoBlackwell, 0, self.importance), &m, None, 0, root.child(tags::EXPERIMENT, j as u64 + 1)))?;
            quantum_rows(&mut t, r, &e.analytic);
            let f = fit_quantum_exponent(&e.analytic, gamma, self.tol_rel)?;
            rep.diagnostics.push(band_check(format!("quantum slope at r={r} within {}% of {}", pct(self.tol_rel), f.theory), f.fit.slope, f.theory, self.tol_rel * f.theory.abs()));
            fits.push(serde_json::json!({"r": r, "fit": f.fit, "theory": f.theory}));
            rep.samples += self.n_fields;
        }
        rep.theory = serde_json::json!({"kappa": self.kappa, "gamma": gamma, "alpha": 1.5 * gamma, "slope": -4.0 / (gamma * gamma)});
        rep.fits = serde_json::Value::Array(fits);
        let mut tables = vec![t];
        if !vt.rows.is_empty() {
            tables.push(vt);
        }
        Ok(Outcome { report: rep.finish(), tables })
    }
}

// ---------------------------------------------------------------- invariants

/// Standalone invariant suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Invariants {
    pub seed: u64,
    #[serde(deserialize_with = "de_count")]
    pub samples: u64,
    pub psd_n_side: usize,
}

impl Default for Invariants {
    fn default() -> Self {
        Self { seed: 9, samples: 20_000, psd_n_side: 2048 }
    }
}

impl Experiment for Invariants {
    const NAME: &'static str = "invariants";

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        if self.samples < 1000 {
            return Err(config_err("samples", "need at least 1000"));
        }
        BoundaryGrid::new(1.0, 0.9, self.psd_n_side)?;
        Ok(())
    }

    fn run(&self, ck: &mut Checkpoint) -> Result<Outcome> {
        let root = RandomStream::root(self.seed);
        let n = self.samples;
        let mut rep = Report::new(Self::NAME, self, self.seed, "suite k: root(seed).child(EXPERIMENT, k)")?;
        let mut t = Table::new("invariants", &["suite", "case", "observed", "expected", "tolerance", "pass"]);
        let mut add = |rep: &mut Report, suite: &str, case: String, c: RuleCheck| {
            t.push(vec![suite.into(), case.clone().into(), c.observed.into(), c.expected.into(), c.tolerance.into(), (c.verdict == Verdict::Pass).into()]);
            rep.checks.push(RuleCheck { rule: format!("{suite}: {case}"), ..c });
        };

        // Bessel local martingales X^{2-d}, and the SLE right gap power.
        for (i, &d) in [1.25, 1.5].iter().enumerate() {
            let e: Vec<Estimate> = ck.unit(&format!("bessel-{i}"), || bessel_power_means(BesselParams::new(d, 1.0, 1e-3)?, 2.0 - d, &[0.25, 0.5, 1.0], None, n, root.child(tags::EXPERIMENT, i as u64)))?;
            for (x, tt) in e.iter().zip([0.25, 0.5, 1.0]) {
                let (z, se) = joint_z((x.mean, x.stderr), (1.0, 0.0));
                add(&mut rep, "bessel", format!("E[X^(2-d)] constant, d={d}, t={tt}"), bool_check(String::new(), x.mean, 1.0, 3.0 * se, z.abs() <= 3.0));
            }
        }
        let e: Vec<Estimate> = ck.unit("bessel-3", || bessel_power_means(BesselParams::new(3.0, 1.0, 1e-3)?, -1.0, &[0.25, 0.5, 1.0], Some(0.25), n, root.child(tags::EXPERIMENT, 2)))?;
        for (x, tt) in e.iter().zip([0.25, 0.5, 1.0]) {
            let (z, se) = joint_z((x.mean, x.stderr), (1.0, 0.0));
            add(&mut rep, "bessel", format!("E[X^(2-d)] constant, d=3 stopped at 0.25, t={tt}"), bool_check(String::new(), x.mean, 1.0, 3.0 * se, z.abs() <= 3.0));
        }
        let p = SleParams::new(10.0, 0.5, 0.5)?;
        let times = [0.02, 0.1, 0.3];
        let e: Vec<Estimate> = ck.unit("sle-gap", || right_gap_power_means(&p, &times, n, &SleConfig::martingale(), root.child(tags::EXPERIMENT, 3)))?;
        let start = 0.5f64.powf(p.point_exponent());
        for (x, tt) in e.iter().zip(times) {
            let (z, se) = joint_z((x.mean, x.stderr), (start, 0.0));
            add(&mut rep, "bessel", format!("SLE right gap^(rho/kappa) constant, kappa=10, t={tt}"), bool_check(String::new(), x.mean, start, 3.0 * se, z.abs() <= 3.0));
        }

        // Gap positivity along SLE paths up to swallowing.
        let (violations, paths) = {
            let p = SleParams::new(16.0, 0.2, 0.2)?;
            let paths = 2000u64;
            let mut bad = 0u64;
            for i in 0..paths {
                let mut rng = root.child(tags::EXPERIMENT, 4).child(tags::SLE, i).rng();
                let mut ok = true;
                run_until(&p, &SleConfig::events(), 1.0, false, &mut rng, None, |s, _| {
                    ok &= (s.swallowed_l || (s.gap_l() > 0.0 && s.gap_l().is_finite())) && (s.swallowed_r || (s.gap_r() > 0.0 && s.gap_r().is_finite()));
                    false
                });
                bad += (!ok) as u64;
            }
            (bad, paths)
        };
        add(&mut rep, "gap", format!("gaps positive before swallowing on {paths} paths"), bool_check(String::new(), violations as f64, 0.0, 0.0, violations == 0));

        // Measure positivity and monotonicity of the inversion.
        let spec = WedgeSpec::with_default_alpha(1.0)?;
        let small = FieldModel::new(BoundaryGrid::new(1.0, 0.9, 512)?, SamplerKind::Dense)?;
        let deltas = log_grid(1e-4, 1.0, 9);
        let mut bad = 0u64;
        let fields = 200u64;
        for i in 0..fields {
            let mut rng = root.child(tags::EXPERIMENT, 5).child(tags::FIELD, i).rng();
            let field = small.sample_boundary_field(&mut rng);
            let prof = quantum_boundary_measure(&field, &spec, &small.grid)?;
            let pos = prof.mass_l.iter().chain(&prof.mass_r).all(|&m| m > 0.0 && m.is_finite());
            let mono = prof.cum_l.windows(2).all(|w| w[1] <= w[0]) && prof.cum_r.windows(2).all(|w| w[1] <= w[0]);
            let mut xs_ok = true;
            for side in [Side::L, Side::R] {
                let xs: Vec<f64> = deltas.iter().map(|&d| find_x_delta(&prof, &small.grid, d, side).map(|x| x.x)).collect::<Result<_>>()?;
                xs_ok &= xs.windows(2).all(|w| w[1] >= w[0]) && xs.iter().all(|&x| x > 0.0 && x <= small.grid.r);
            }
            bad += (!(pos && mono && xs_ok)) as u64;
        }
        add(&mut rep, "measure", format!("positive masses, monotone cumulative sums and x_delta on {fields} fields"), bool_check(String::new(), bad as f64, 0.0, 0.0, bad == 0));

        // Kernel PSD for both samplers.
        for (i, kind) in [SamplerKind::RadialLateral, SamplerKind::Dense].into_iter().enumerate() {
            let grid = BoundaryGrid::new(1.0, 0.9, self.psd_n_side)?;
            let meta = ck.unit(&format!("psd-{i}"), || FieldModel::new(grid, kind).map(|m| m.meta()))?;
            add(&mut rep, "kernel", format!("{kind:?} min pivot >= -1e-8 trace, dim {}", meta.dim), bool_check(String::new(), meta.min_pivot, 0.0, meta.psd_tolerance, meta.min_pivot >= -meta.psd_tolerance));
        }

        // Byte-identical reruns across thread counts.
        let small_cfg = HittingLaplace { samples: 4096, dt: 1e-3, deltas: Grid::List(vec![0.1, 0.3]), lambdas: vec![2.0], seed: self.seed, ..HittingLaplace::default() };
        let render = |threads: usize| -> Result<Vec<(String, Vec<u8>)>> {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Numerical(e.to_string()))?;
            pool.install(|| small_cfg.run(&mut Checkpoint::disabled())?.render())
        };
        let (a, b) = (render(1)?, render(3)?);
        let same = a == b;
        add(&mut rep, "reproducibility", "hitting-laplace outputs identical under 1 and 3 threads".into(), bool_check(String::new(), same as u8 as f64, 1.0, 0.0, same));
        let cone = ConeProb { samples: 4096, t: vec![1.0], seed: self.seed, ..ConeProb::default() };
        let c1 = cone.run(&mut Checkpoint::disabled())?.render()?;
        let c2 = cone.run(&mut Checkpoint::disabled())?.render()?;
        add(&mut rep, "reproducibility", "cone-prob outputs identical on rerun".into(), bool_check(String::new(), (c1 == c2) as u8 as f64, 1.0, 0.0, c1 == c2));

        // Rao-Blackwell variance dominance on shared fields.
        let qcfg = QuantumEventConfig { kappa: 16.0, r: 1.0, deltas: vec![0.3, 1.0], n_fields: 4096, n_sle_per_field: 1, mode: QuantumMode::Direct, stopping: Stopping::Capacity, importance: false, t_capacity: Some(0.2) };
        let model = FieldModel::new(BoundaryGrid::new(1.0, 0.85, 160)?, SamplerKind::RadialLateral)?;
        let est: QuantumEstimates = ck.unit("rb", || {
            let table = EventTable::build(16.0, qcfg.multi_stop(), default_table_grid(1.0), 20_000, &SleConfig::events(), root.child(tags::TABLE, 6))?;
            estimate_quantum(&qcfg, &model, Some(&table), 0, root.child(tags::EXPERIMENT, 6))
        })?;
        if let (Some(d), Some(tb)) = (&est.direct, &est.tabulated) {
            for (a, b) in d.iter().zip(tb) {
                add(&mut rep, "rao-blackwell", format!("stderr of tabulated RB <= direct at delta={}", a.delta), bool_check(String::new(), b.stderr, a.stderr, 0.0, b.stderr <= a.stderr));
            }
        }
        rep.samples = n;
        Ok(Outcome { report: rep.finish(), tables: vec![t] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(Grid::parse("0.1:0.4:2").unwrap().values().unwrap(), log_grid(0.1, 0.4, 2));
        assert_eq!(Grid::parse("0.5, 2").unwrap(), Grid::List(vec![0.5, 2.0]));
        assert!(Grid::parse("0.1:0.4").is_err());
        assert!(Grid::parse("0:1:3").is_err());
        assert_eq!(parse_count("1e6").unwrap(), 1_000_000);
        assert_eq!(parse_count("10_000").unwrap(), 10_000);
        assert!(parse_count("1.5").is_err());
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 6.02e23, -2.5e-7, 0.0, 123456.789] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let e = load_config::<HittingLaplace>("lambdaz = [1.0]", &[]).unwrap_err();
        assert!(e.to_string().contains("lambdaz"), "{e}");
        let e = load_config::<QuantumEvent>("[validation]\nbogus = 1", &[]).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn overrides_beat_file_values() {
        let c: HittingLaplace = load_config("samples = 10\nseed = 3", &[("samples".into(), toml::Value::String("1e3".into()))]).unwrap();
        assert_eq!((c.samples, c.seed), (1000, 3));
        let c: QuantumEvent = load_config("", &[("validation.n_fields".into(), toml::Value::Integer(0))]).unwrap();
        assert_eq!(c.validation.n_fields, 0);
    }

    #[test]
    fn defaults_serialize_and_reload() {
        fn rt<C: Experiment + PartialEq + std::fmt::Debug>() {
            let c = C::default();
            let text = toml::to_string(&c).unwrap();
            let back: C = load_config(&text, &[]).unwrap();
            assert_eq!(back, c);
        }
        rt::<HittingLaplace>();
        rt::<ExponentIdentity>();
        rt::<ConeProb>();
        rt::<VerifyMain>();
        rt::<MartingaleExp>();
        rt::<SleEuclid>();
        rt::<GmcMoments>();
        rt::<QuantumEvent>();
        rt::<Invariants>();
    }

    #[test]
    fn identity_report() {
        let (o, _) = run_experiment(&ExponentIdentity::default(), None).unwrap();
        assert!(o.report.passed());
        assert_eq!(o.tables[0].rows.len(), 6);
    }

    #[test]
    fn small_runs_are_byte_identical_and_resume() {
        let c = ConeProb { samples: 2048, t: vec![1.0, 2.0], correlation: Some(0.0), kappa: None, ..ConeProb::default() };
        let a = run_experiment(&c, None).unwrap().0.render().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let b = run_experiment(&c, Some(dir.path())).unwrap().0.render().unwrap();
        assert_eq!(a, b);
        // A stale checkpoint from the same config is picked up.
        let mut ck = Checkpoint::open(dir.path(), &config_hash(&c).unwrap()).unwrap();
        c.run(&mut ck).unwrap();
        let (out, resumed) = run_experiment(&c, Some(dir.path())).unwrap();
        assert_eq!(resumed, 1);
        assert_eq!(out.render().unwrap(), a);
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
    }

    #[test]
    fn csv_round_trips() {
        let c = HittingLaplace { samples: 2048, dt: 1e-3, lambdas: vec![2.0], deltas: Grid::List(vec![0.1]), ..HittingLaplace::default() };
        let o = c.run(&mut Checkpoint::disabled()).unwrap();
        let bytes = o.tables[0].to_csv().unwrap();
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let rec = r.records().next().unwrap().unwrap();
        let est: f64 = rec[2].parse().unwrap();
        match &o.tables[0].rows[0][2] {
            Value::F(x) => assert_eq!(*x, est),
            v => panic!("{v:?}"),
        }
        assert_eq!(o.report.checks.len(), 1);
    }

    #[test]
    fn cone_experiment_checks_closed_form_for_zero_correlation() {
        let c = ConeProb { samples: 20_000, t: vec![1.0], correlation: Some(0.0), kappa: None, sigma_tol: Some(1.0), ..ConeProb::default() };
        let (o, _) = run_experiment(&c, None).unwrap();
        assert!(o.tables.iter().any(|t| t.name == "closed_form"));
        assert_eq!(o.report.checks.len(), 7);
        assert!(o.report.checks.iter().filter(|c| c.rule.contains("closed form")).all(|c| c.verdict == Verdict::Pass), "{:?}", o.report.checks);
    }
}
