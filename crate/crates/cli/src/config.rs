//! Flat `key = value` experiment configuration with dotted sections.
//!
//! Parsing never stops at the first problem: every syntax error, unknown
//! key, duplicate and range violation is collected and returned together.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use ergolab_core::concentration::{ENVELOPE_MIN_SAMPLES, REFERENCE_QUANTILES};
use ergolab_core::ergostat::CutoffRule;
use ergolab_core::limitlaw::{RenormSequence, VarianceSource};
use ergolab_core::numeric::linspace;
use ergolab_core::observables::{OffGridPolicy, Table};
use ergolab_core::{Error as CoreError, Observable, SystemDescriptor, SystemKind};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentKind {
    Covariance,
    Clt,
    Stable,
    Asclt,
    BerryEsseen,
    LargeDev,
    CgfRate,
    ErdosRenyi,
    Moderate,
    ConcentrationEnvelope,
    CorrelationDev,
    EmpiricalMeasure,
    Shadowing,
    Periodogram,
    Nonconventional,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 15] = [
        ExperimentKind::Covariance,
        ExperimentKind::Clt,
        ExperimentKind::Stable,
        ExperimentKind::Asclt,
        ExperimentKind::BerryEsseen,
        ExperimentKind::LargeDev,
        ExperimentKind::CgfRate,
        ExperimentKind::ErdosRenyi,
        ExperimentKind::Moderate,
        ExperimentKind::ConcentrationEnvelope,
        ExperimentKind::CorrelationDev,
        ExperimentKind::EmpiricalMeasure,
        ExperimentKind::Shadowing,
        ExperimentKind::Periodogram,
        ExperimentKind::Nonconventional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Covariance => "covariance",
            ExperimentKind::Clt => "clt",
            ExperimentKind::Stable => "stable",
            ExperimentKind::Asclt => "asclt",
            ExperimentKind::BerryEsseen => "berry_esseen",
            ExperimentKind::LargeDev => "large_dev",
            ExperimentKind::CgfRate => "cgf_rate",
            ExperimentKind::ErdosRenyi => "erdos_renyi",
            ExperimentKind::Moderate => "moderate",
            ExperimentKind::ConcentrationEnvelope => "concentration_envelope",
            ExperimentKind::CorrelationDev => "correlation_dev",
            ExperimentKind::EmpiricalMeasure => "empirical_measure",
            ExperimentKind::Shadowing => "shadowing",
            ExperimentKind::Periodogram => "periodogram",
            ExperimentKind::Nonconventional => "nonconventional",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::Covariance => "lag covariances and Green-Kubo variance",
            ExperimentKind::Clt => "KS distance of S_n f / sqrt(n) to the Gaussian limit",
            ExperimentKind::Stable => "tail exponent and characteristic function of S_n f / n^alpha",
            ExperimentKind::Asclt => "Kantorovich distance of log-averaged sums along single orbits",
            ExperimentKind::BerryEsseen => "log-log slope of the CLT KS distance in n",
            ExperimentKind::LargeDev => "deviation probabilities of S_n f / n and their decay class",
            ExperimentKind::CgfRate => "cumulant generating function and its Legendre transform",
            ExperimentKind::ErdosRenyi => "maximal window sums against the rate-function level",
            ExperimentKind::Moderate => "moderate deviation probabilities against the Gaussian oracle",
            ExperimentKind::ConcentrationEnvelope => "tail envelope and variance bound of a Lipschitz functional",
            ExperimentKind::CorrelationDev => "deviations of empirical correlations",
            ExperimentKind::EmpiricalMeasure => "Kantorovich distance of the empirical measure",
            ExperimentKind::Shadowing => "distance of orbits to a reference set of orbits",
            ExperimentKind::Periodogram => "sup deviation of the integrated periodogram",
            ExperimentKind::Nonconventional => "multiple ergodic averages along arithmetic progressions",
        }
    }

    /// Experiments whose estimators need a mean-zero observable.
    fn needs_centered(self) -> bool {
        matches!(
            self,
            ExperimentKind::Covariance
                | ExperimentKind::Clt
                | ExperimentKind::Stable
                | ExperimentKind::Asclt
                | ExperimentKind::BerryEsseen
                | ExperimentKind::LargeDev
                | ExperimentKind::Moderate
                | ExperimentKind::CorrelationDev
                | ExperimentKind::Periodogram
        )
    }

    fn uses_observable(self) -> bool {
        !matches!(self, ExperimentKind::EmpiricalMeasure | ExperimentKind::Shadowing)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn name(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "csv" => Some(OutputFormat::Csv),
            "json" => Some(OutputFormat::Json),
            _ => None,
        }
    }
}

/// How the observable is centered before use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Centering {
    /// Closed-form mean where known, otherwise a calibration orbit.
    Auto,
    None,
    /// Subtract an asserted mean.
    At(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableConfig {
    pub base: Observable,
    pub centering: Centering,
    pub calibration_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalKind {
    ErgodicSum,
    ErgodicAverage,
    Kantorovich,
    Correlation { k: usize },
}

impl FunctionalKind {
    pub fn name(self) -> &'static str {
        match self {
            FunctionalKind::ErgodicSum => "ergodic_sum",
            FunctionalKind::ErgodicAverage => "ergodic_average",
            FunctionalKind::Kantorovich => "kantorovich",
            FunctionalKind::Correlation { .. } => "correlation",
        }
    }
}

/// Green-Kubo ensemble used to estimate a periodogram limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LimitSpec {
    pub orbits: usize,
    pub length: usize,
    pub max_lag: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Covariance { m: usize, n: usize, max_lag: usize, cutoff: CutoffRule },
    Clt { m: usize, n_list: Vec<usize>, variance: VarianceSource },
    Stable { m: usize, n: usize, renorm: RenormSequence, p: f64, beta: Option<f64>, cf_grid: Vec<f64> },
    Asclt { m: usize, n_list: Vec<usize>, renorm: RenormSequence, variance: VarianceSource },
    BerryEsseen { m: usize, n_list: Vec<usize>, variance: VarianceSource },
    LargeDev { m: usize, n_list: Vec<usize>, eps: f64 },
    CgfRate { m: usize, n: usize, z_max: Option<f64>, z_points: usize, t_list: Vec<f64> },
    ErdosRenyi { t: f64, rate: f64, k_list: Vec<usize>, seeds: usize },
    Moderate { m: usize, n_list: Vec<usize>, theta: f64, interval: (f64, f64), variance: VarianceSource },
    ConcentrationEnvelope { m: usize, n_list: Vec<usize>, functional: FunctionalKind, reference_steps: usize },
    CorrelationDev { m: usize, n_list: Vec<usize>, k: usize, t: f64 },
    EmpiricalMeasure { m: usize, n_list: Vec<usize>, reference_steps: usize },
    Shadowing { m: usize, n_list: Vec<usize>, mass: f64 },
    Periodogram { m: usize, n_list: Vec<usize>, omega_grid: Vec<f64>, limit: LimitSpec },
    Nonconventional { m: usize, n_list: Vec<usize>, order: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub system: SystemDescriptor,
    /// Absent for experiments that act on the orbit points directly.
    pub observable: Option<ObservableConfig>,
    pub burn_in: usize,
    pub params: Params,
    pub output_dir: Option<PathBuf>,
    pub format: OutputFormat,
    /// Effective value of every key, defaults included.
    pub echo: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Every violation found in a configuration, in line order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} configuration error(s): {}", .0.len(), join_issues(.0))]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

trait Value: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

impl Value for u64 {
    fn parse(s: &str) -> Result<Self, String> {
        s.parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
    }

    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for usize {
    /// Accepts integral scientific notation such as `1e6`.
    fn parse(s: &str) -> Result<Self, String> {
        if let Ok(v) = s.parse::<usize>() {
            return Ok(v);
        }
        match s.parse::<f64>() {
            Ok(x) if x >= 0.0 && x.fract() == 0.0 && x <= 9.007_199_254_740_992e15 => Ok(x as usize),
            _ => Err(format!("`{s}` is not a nonnegative integer")),
        }
    }

    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for f64 {
    fn parse(s: &str) -> Result<Self, String> {
        match s.parse::<f64>() {
            Ok(x) if !x.is_nan() => Ok(x),
            _ => Err(format!("`{s}` is not a number")),
        }
    }

    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for String {
    fn parse(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }

    fn render(&self) -> String {
        self.clone()
    }
}

impl<T: Value> Value for Vec<T> {
    fn parse(s: &str) -> Result<Self, String> {
        s.split(',').map(|item| T::parse(item.trim())).collect()
    }

    fn render(&self) -> String {
        self.iter().map(Value::render).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Typed access to the raw entries. Every key read is marked as used, so
/// leftovers are reported as unknown.
struct Reader {
    entries: BTreeMap<String, Entry>,
    used: BTreeSet<String>,
    echo: BTreeMap<String, String>,
    issues: Vec<ConfigIssue>,
}

impl Reader {
    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn issue(&mut self, key: &str, message: impl fmt::Display) {
        self.issues.push(ConfigIssue {
            line: self.line(key),
            message: format!("{key}: {message}"),
        });
    }

    fn check(&mut self, key: &str, ok: bool, message: impl fmt::Display) -> bool {
        if !ok {
            self.issue(key, message);
        }
        ok
    }

    /// `None` when absent or malformed (malformed values are reported).
    fn get<T: Value>(&mut self, key: &str) -> Option<T> {
        self.used.insert(key.to_string());
        let raw = self.entries.get(key)?.value.clone();
        match T::parse(&raw) {
            Ok(v) => {
                self.echo.insert(key.to_string(), v.render());
                Some(v)
            }
            Err(e) => {
                self.issue(key, e);
                None
            }
        }
    }

    fn required<T: Value>(&mut self, key: &str) -> Option<T> {
        if !self.has(key) {
            self.used.insert(key.to_string());
            self.issues.push(ConfigIssue {
                line: None,
                message: format!("{key}: required key is missing"),
            });
            return None;
        }
        self.get(key)
    }

    fn or<T: Value>(&mut self, key: &str, default: T) -> T {
        let present = self.has(key);
        match self.get(key) {
            Some(v) => v,
            None => {
                if !present {
                    self.echo.insert(key.to_string(), default.render());
                }
                default
            }
        }
    }

    fn positive(&mut self, key: &str, default: Option<usize>) -> usize {
        let v = match default {
            Some(d) => self.or(key, d),
            None => self.required(key).unwrap_or(1),
        };
        self.check(key, v >= 1, "must be at least 1");
        v
    }

    fn n_list(&mut self, min_len: usize) -> Vec<usize> {
        let Some(list) = self.required::<Vec<usize>>("n_list") else {
            return Vec::new();
        };
        if list.is_empty() || list[0] == 0 || list.windows(2).any(|w| w[1] <= w[0]) {
            self.issue("n_list", "must be positive and strictly increasing");
        } else if list.len() < min_len {
            self.issue("n_list", format!("needs at least {min_len} values"));
        }
        list
    }

    fn choice<T: Copy>(&mut self, key: &str, default: &str, options: &[(&str, T)]) -> T {
        let name = self.or(key, default.to_string());
        match options.iter().find(|(n, _)| *n == name) {
            Some(&(_, v)) => v,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.issue(key, format!("`{name}` is not one of {}", names.join(", ")));
                options[0].1
            }
        }
    }
}

/// Parses and validates a configuration, returning every violation found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let (entries, mut issues) = tokenize(text);
    let mut r = Reader {
        entries,
        used: BTreeSet::new(),
        echo: BTreeMap::new(),
        issues: Vec::new(),
    };
    let config = build(&mut r);
    let unknown: Vec<String> = r.entries.keys().filter(|k| !r.used.contains(*k)).cloned().collect();
    let experiment = r.entries.get("experiment").map(|e| e.value.clone());
    for key in unknown {
        let context = match &experiment {
            Some(e) => format!(" for experiment `{e}`"),
            None => String::new(),
        };
        r.issue(&key, format!("unknown key{context}"));
    }
    issues.append(&mut r.issues);
    issues.sort_by_key(|i| i.line.unwrap_or(usize::MAX));
    match config {
        Some(c) if issues.is_empty() => Ok(ExperimentConfig { echo: r.echo, ..c }),
        _ => Err(ConfigErrors(issues)),
    }
}

fn tokenize(text: &str) -> (BTreeMap<String, Entry>, Vec<ConfigIssue>) {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    let mut issues = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            issues.push(ConfigIssue {
                line: Some(line),
                message: format!("expected `key = value`, found `{content}`"),
            });
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let key_ok = !key.is_empty()
            && !key.starts_with('.')
            && !key.ends_with('.')
            && key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.');
        if !key_ok {
            issues.push(ConfigIssue {
                line: Some(line),
                message: format!("`{key}` is not a valid key (lowercase letters, digits, `_` and `.`)"),
            });
            continue;
        }
        if value.is_empty() {
            issues.push(ConfigIssue {
                line: Some(line),
                message: format!("{key}: missing value"),
            });
            continue;
        }
        if let Some(first) = entries.get(key) {
            issues.push(ConfigIssue {
                line: Some(line),
                message: format!("duplicate key `{key}` at lines {} and {line}", first.line),
            });
            continue;
        }
        entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    (entries, issues)
}

fn build(r: &mut Reader) -> Option<ExperimentConfig> {
    let experiment = match r.required::<String>("experiment") {
        Some(name) => match ExperimentKind::from_name(&name) {
            Some(k) => Some(k),
            None => {
                r.issue("experiment", format!("unknown experiment `{name}` (see `ergolab list`)"));
                None
            }
        },
        None => None,
    };
    let seed = r.required::<u64>("seed");
    let system = build_system(r);
    let format = {
        let name = r.or("output.format", "csv".to_string());
        OutputFormat::from_name(&name).unwrap_or_else(|| {
            r.issue("output.format", format!("`{name}` is not one of csv, json"));
            OutputFormat::Csv
        })
    };
    let output_dir = r.get::<String>("output.dir").map(PathBuf::from);
    let (Some(experiment), Some(system)) = (experiment, system) else {
        // Without an experiment and system the remaining keys cannot be judged.
        let keys: Vec<String> = r.entries.keys().cloned().collect();
        r.used.extend(keys);
        return None;
    };
    let burn_in = r.or("burn_in", system.default_burn_in());
    let observable = if experiment.uses_observable() {
        build_observable(r, experiment, &system)
    } else {
        None
    };
    let params = build_params(r, experiment, &system, observable.as_ref());
    Some(ExperimentConfig {
        experiment,
        seed: seed?,
        system,
        observable,
        burn_in,
        params,
        output_dir,
        format,
        echo: BTreeMap::new(),
    })
}

fn build_system(r: &mut Reader) -> Option<SystemDescriptor> {
    let name = r.required::<String>("system.kind")?;
    let Some(kind) = SystemKind::from_name(&name) else {
        let names: Vec<&str> = SystemKind::ALL.iter().map(|k| k.name()).collect();
        r.issue("system.kind", format!("unknown system `{name}` (one of {})", names.join(", ")));
        return None;
    };
    let default = SystemDescriptor::default_for(kind);
    let built = match kind {
        SystemKind::MannevillePomeau => {
            let alpha = r.or("system.alpha", default.alpha().unwrap_or(0.75));
            SystemDescriptor::manneville_pomeau(alpha)
        }
        SystemKind::Quadratic => {
            let a = r.or("system.a", default.a().unwrap_or(2.0));
            SystemDescriptor::quadratic(a)
        }
        SystemKind::Lozi | SystemKind::Henon => {
            let a = r.or("system.a", default.a().unwrap_or(1.0));
            let b = r.or("system.b", default.b().unwrap_or(0.3));
            if kind == SystemKind::Lozi {
                SystemDescriptor::lozi(a, b)
            } else {
                SystemDescriptor::henon(a, b)
            }
        }
        _ => Ok(default),
    };
    match built {
        Ok(s) => Some(s),
        Err(CoreError::InvalidParameter { name, reason }) => {
            r.issue(&format!("system.{name}"), reason);
            None
        }
        Err(e) => {
            r.issue("system.kind", e);
            None
        }
    }
}

fn build_observable(r: &mut Reader, experiment: ExperimentKind, system: &SystemDescriptor) -> Option<ObservableConfig> {
    let kind = r.or("observable.kind", "centered_coordinate".to_string());
    let coord = r.or("observable.coord", 0usize);
    r.check(
        "observable.coord",
        coord < system.dimension(),
        format!("{coord} out of range for the {}-dimensional system {}", system.dimension(), system.kind()),
    );
    let base = match kind.as_str() {
        "coordinate" | "centered_coordinate" => Observable::coordinate(coord),
        "affine" => {
            let c0 = r.or("observable.c0", 0.0);
            let c1 = r.or("observable.c1", 1.0);
            Observable::affine(c0, c1).on_coordinate(coord)
        }
        "sign_threshold" => {
            let theta = r.required::<f64>("observable.theta").unwrap_or(0.0);
            Observable::sign_threshold(theta).on_coordinate(coord)
        }
        "constant" => {
            let c = r.required::<f64>("observable.value").unwrap_or(0.0);
            Observable::constant(c)
        }
        "tabulated" => {
            let grid = r.required::<Vec<f64>>("observable.grid").unwrap_or_default();
            let values = r.required::<Vec<f64>>("observable.values").unwrap_or_default();
            let policy = r.choice(
                "observable.off_grid",
                "reject",
                &[
                    ("reject", OffGridPolicy::Reject),
                    ("linear", OffGridPolicy::Linear),
                    ("nearest", OffGridPolicy::Nearest),
                ],
            );
            match Table::new(grid, values, policy) {
                Ok(t) => Observable::tabulated(t).on_coordinate(coord),
                Err(e) => {
                    r.issue("observable.grid", e);
                    Observable::constant(0.0)
                }
            }
        }
        other => {
            r.issue(
                "observable.kind",
                format!("`{other}` is not one of coordinate, centered_coordinate, affine, sign_threshold, constant, tabulated"),
            );
            return None;
        }
    };
    let default_center = if kind == "coordinate" { "none" } else { "auto" };
    let center = r.or("observable.center", default_center.to_string());
    let centering = match center.as_str() {
        "auto" => Centering::Auto,
        "none" => Centering::None,
        s => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Centering::At(v),
            _ => {
                r.issue("observable.center", format!("`{s}` is not auto, none or a finite number"));
                Centering::Auto
            }
        },
    };
    if experiment.needs_centered() && centering == Centering::None && !base.is_mean_zero() {
        r.issue(
            "observable.center",
            format!("experiment `{experiment}` needs a mean-zero observable (use auto or a value)"),
        );
    }
    let calibration_steps = if centering == Centering::Auto {
        r.positive("observable.calibration_steps", Some(ergolab_core::Calibration::DEFAULT_STEPS))
    } else {
        0
    };
    Some(ObservableConfig {
        base,
        centering,
        calibration_steps,
    })
}

fn variance_source(r: &mut Reader) -> VarianceSource {
    let raw = r.or("variance", "green_kubo".to_string());
    if raw == "green_kubo" {
        let orbits = r.positive("variance.orbits", Some(64));
        let length = r.positive("variance.length", Some(20_000));
        let max_lag = r.or("variance.max_lag", 200usize);
        r.check("variance.max_lag", max_lag < length, "must be below variance.length");
        return VarianceSource::GreenKubo { orbits, length, max_lag };
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => VarianceSource::Known(v),
        _ => {
            r.issue("variance", format!("`{raw}` is not green_kubo or a positive number"));
            VarianceSource::Known(1.0)
        }
    }
}

fn renorm(r: &mut Reader, system: &SystemDescriptor, default: &str) -> RenormSequence {
    let name = r.or("renorm", default.to_string());
    match name.as_str() {
        "sqrt_n" => RenormSequence::SqrtN,
        "sqrt_n_log_n" => RenormSequence::SqrtNLogN,
        "n_alpha" => {
            let alpha = match system.alpha() {
                Some(a) => r.or("renorm.alpha", a),
                None => r.required("renorm.alpha").unwrap_or(0.5),
            };
            r.check("renorm.alpha", alpha > 0.0 && alpha <= 1.0, format!("{alpha} not in (0, 1]"));
            RenormSequence::NAlpha(alpha)
        }
        other => {
            r.issue("renorm", format!("`{other}` is not one of sqrt_n, n_alpha, sqrt_n_log_n"));
            RenormSequence::SqrtN
        }
    }
}

fn reference_steps(r: &mut Reader, system: &SystemDescriptor) -> usize {
    let steps = r.positive("reference.steps", Some(ergolab_core::Calibration::DEFAULT_STEPS));
    r.check(
        "reference.steps",
        steps >= REFERENCE_QUANTILES,
        format!("must be at least {REFERENCE_QUANTILES}"),
    );
    r.check("system.kind", system.dimension() == 1, "the empirical measure needs a one-dimensional system");
    steps
}

fn require_lipschitz(r: &mut Reader, experiment: ExperimentKind, obs: Option<&ObservableConfig>) {
    if let Some(o) = obs {
        if !o.base.lipschitz_constant().is_finite() {
            r.issue(
                "observable.kind",
                format!("experiment `{experiment}` needs a Lipschitz observable, not a discontinuous one"),
            );
        }
    }
}

fn build_params(r: &mut Reader, experiment: ExperimentKind, system: &SystemDescriptor, obs: Option<&ObservableConfig>) -> Params {
    match experiment {
        ExperimentKind::Covariance => {
            let m = r.positive("m", None);
            let n = r.positive("n", None);
            let max_lag = r.or("max_lag", 50usize);
            r.check("max_lag", max_lag < n, "must be below n");
            let cutoff_raw = r.or("cutoff", "noise_run".to_string());
            let cutoff = if cutoff_raw == "noise_run" {
                CutoffRule::default()
            } else {
                match <usize as Value>::parse(&cutoff_raw) {
                    Ok(l) => CutoffRule::Fixed(l),
                    Err(_) => {
                        r.issue("cutoff", format!("`{cutoff_raw}` is not noise_run or a lag"));
                        CutoffRule::default()
                    }
                }
            };
            Params::Covariance { m, n, max_lag, cutoff }
        }
        ExperimentKind::Clt => Params::Clt {
            m: r.positive("m", None),
            n_list: r.n_list(1),
            variance: variance_source(r),
        },
        ExperimentKind::BerryEsseen => Params::BerryEsseen {
            m: r.positive("m", None),
            n_list: r.n_list(3),
            variance: variance_source(r),
        },
        ExperimentKind::Stable => {
            let m = r.positive("m", None);
            let n = r.positive("n", None);
            let renorm = renorm(r, system, if system.alpha().is_some() { "n_alpha" } else { "sqrt_n" });
            let p = match system.alpha() {
                Some(a) => r.or("stable.p", 1.0 / a),
                None => r.required("stable.p").unwrap_or(2.0),
            };
            r.check("stable.p", p > 1.0 && p <= 2.0, format!("{p} not in (1, 2]"));
            let beta = r.get::<f64>("stable.beta");
            if let Some(b) = beta {
                r.check("stable.beta", (-1.0..=1.0).contains(&b), format!("{b} not in [-1, 1]"));
            } else {
                r.echo.insert("stable.beta".into(), "sign_of_f_at_0".into());
            }
            let t_max = r.or("cf.t_max", 2.0);
            let points = r.or("cf.points", 41usize);
            r.check("cf.t_max", t_max > 0.0 && t_max.is_finite(), "must be positive");
            r.check("cf.points", points >= 2, "must be at least 2");
            Params::Stable {
                m,
                n,
                renorm,
                p,
                beta,
                cf_grid: linspace(-t_max, t_max, points.max(2)),
            }
        }
        ExperimentKind::Asclt => Params::Asclt {
            m: r.positive("m", None),
            n_list: r.n_list(1),
            renorm: renorm(r, system, "sqrt_n"),
            variance: variance_source(r),
        },
        ExperimentKind::LargeDev => {
            let m = r.positive("m", None);
            let n_list = r.n_list(4);
            let eps = r.required::<f64>("eps").unwrap_or(1.0);
            r.check("eps", eps > 0.0 && eps.is_finite(), "must be positive");
            Params::LargeDev { m, n_list, eps }
        }
        ExperimentKind::CgfRate => {
            let m = r.positive("m", None);
            let n = r.positive("n", None);
            let z_max = r.get::<f64>("z_max");
            match z_max {
                Some(z) => {
                    r.check("z_max", z > 0.0 && z.is_finite(), "must be positive");
                }
                None => {
                    r.echo.insert("z_max".into(), "auto".into());
                }
            }
            let z_points = r.or("z_points", 21usize);
            r.check("z_points", z_points >= 3, "must be at least 3");
            let t_list = r.or("t_list", Vec::<f64>::new());
            Params::CgfRate {
                m,
                n,
                z_max,
                z_points,
                t_list,
            }
        }
        ExperimentKind::ErdosRenyi => {
            let t = r.required::<f64>("t").unwrap_or(0.0);
            let rate = r.required::<f64>("rate").unwrap_or(1.0);
            r.check("rate", rate > 0.0 && rate.is_finite(), "must be positive");
            let k_list = r.required::<Vec<usize>>("k_list").unwrap_or_default();
            if k_list.is_empty() || k_list[0] == 0 || k_list.windows(2).any(|w| w[1] <= w[0]) {
                r.issue("k_list", "must be positive and strictly increasing");
            }
            let seeds = r.positive("seeds", Some(1));
            Params::ErdosRenyi { t, rate, k_list, seeds }
        }
        ExperimentKind::Moderate => {
            let m = r.positive("m", None);
            let n_list = r.n_list(1);
            let theta = r.required::<f64>("theta").unwrap_or(0.75);
            r.check("theta", theta > 0.5 && theta < 1.0, format!("{theta} not in (1/2, 1)"));
            let lo = r.required::<f64>("interval.lo").unwrap_or(0.0);
            let hi = r.or("interval.hi", f64::INFINITY);
            r.check("interval.hi", hi > lo, "must exceed interval.lo");
            Params::Moderate {
                m,
                n_list,
                theta,
                interval: (lo, hi),
                variance: variance_source(r),
            }
        }
        ExperimentKind::ConcentrationEnvelope => {
            let m = r.positive("m", None);
            r.check(
                "m",
                m >= ENVELOPE_MIN_SAMPLES,
                format!("the envelope fit needs at least {ENVELOPE_MIN_SAMPLES} samples"),
            );
            let n_list = r.n_list(1);
            let functional = r.choice(
                "functional",
                "ergodic_average",
                &[
                    ("ergodic_average", FunctionalKind::ErgodicAverage),
                    ("ergodic_sum", FunctionalKind::ErgodicSum),
                    ("kantorovich", FunctionalKind::Kantorovich),
                    ("correlation", FunctionalKind::Correlation { k: 0 }),
                ],
            );
            let (functional, reference_steps) = match functional {
                FunctionalKind::Correlation { .. } => (FunctionalKind::Correlation { k: r.or("functional.k", 1usize) }, 0),
                FunctionalKind::Kantorovich => (functional, reference_steps(r, system)),
                f => (f, 0),
            };
            if functional != FunctionalKind::Kantorovich {
                require_lipschitz(r, experiment, obs);
            }
            Params::ConcentrationEnvelope {
                m,
                n_list,
                functional,
                reference_steps,
            }
        }
        ExperimentKind::CorrelationDev => {
            require_lipschitz(r, experiment, obs);
            let m = r.positive("m", None);
            let n_list = r.n_list(1);
            let k = r.or("k", 1usize);
            let t = r.required::<f64>("t").unwrap_or(1.0);
            r.check("t", t > 0.0 && t.is_finite(), "must be positive");
            Params::CorrelationDev { m, n_list, k, t }
        }
        ExperimentKind::EmpiricalMeasure => Params::EmpiricalMeasure {
            m: r.positive("m", None),
            n_list: r.n_list(1),
            reference_steps: reference_steps(r, system),
        },
        ExperimentKind::Shadowing => {
            let m = r.positive("m", None);
            let n_list = r.n_list(1);
            let mass = r.or("mass", 0.1);
            r.check("mass", mass > 0.0 && mass <= 1.0, format!("{mass} not in (0, 1]"));
            Params::Shadowing { m, n_list, mass }
        }
        ExperimentKind::Periodogram => {
            let m = r.positive("m", None);
            let n_list = r.n_list(1);
            let points = r.or("omega_points", 65usize);
            r.check("omega_points", points >= 2, "must be at least 2");
            let orbits = r.positive("limit.orbits", Some(64));
            let length = r.positive("limit.length", Some(20_000));
            let max_lag = r.or("limit.max_lag", 100usize);
            r.check("limit.max_lag", max_lag < length, "must be below limit.length");
            Params::Periodogram {
                m,
                n_list,
                omega_grid: linspace(0.0, std::f64::consts::TAU, points.max(2)),
                limit: LimitSpec { orbits, length, max_lag },
            }
        }
        ExperimentKind::Nonconventional => {
            let m = r.positive("m", None);
            let n_list = r.n_list(1);
            let order = r.or("order", 2usize);
            r.check("order", (1..=8).contains(&order), format!("{order} not in 1..=8"));
            Params::Nonconventional { m, n_list, order }
        }
    }
}
