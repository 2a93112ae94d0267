//! Ergodic averages, covariance series, Green–Kubo variance, empirical
//! measures and one-dimensional distances.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::dynsys::{map_orbits, EnsembleSpec, OrbitEnsemble, Point, SystemDescriptor, SystemKind};
use crate::error::{invalid, Error, Result};
use crate::numeric::{compensated_sum, linear_fit, mean_and_stderr, std_normal_cdf, std_normal_pdf, CompensatedSum, LinearFit};
use crate::observables::Observable;

/// Per-orbit ergodic sums `S_n f` at increasing checkpoints `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSums {
    pub n_list: Vec<usize>,
    /// `sums[i][o]` is `S_{n_list[i]} f` along orbit `o` (escaped orbits omitted).
    pub sums: Vec<Vec<f64>>,
    pub escaped: usize,
}

impl EnsembleSums {
    pub fn at(&self, n: usize) -> Option<&[f64]> {
        self.n_list.iter().position(|&k| k == n).map(|i| self.sums[i].as_slice())
    }

    pub fn orbits(&self) -> usize {
        self.sums.first().map_or(0, Vec::len)
    }
}

fn check_n_list(n_list: &[usize]) -> Result<()> {
    if n_list.is_empty() {
        return Err(Error::Empty("n_list"));
    }
    if n_list[0] == 0 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("n_list", "must be positive and strictly increasing"));
    }
    Ok(())
}

/// Streams `spec.m` orbits (the orbit length is `max(n_list)`, `spec.n` is
/// ignored) and records `S_n f` at every checkpoint.
pub fn ensemble_sums(system: &SystemDescriptor, f: &Observable, spec: &EnsembleSpec, n_list: &[usize]) -> Result<EnsembleSums> {
    check_n_list(n_list)?;
    if spec.m == 0 {
        return Err(invalid("m", "need at least one orbit"));
    }
    let rademacher = system.kind() == SystemKind::IidRademacher && f.coord() == 0;
    let (up, down) = (f.value(1.0), f.value(-1.0));
    let planar = system.dimension() == 2;
    let per_orbit = map_orbits(system, spec, |_, traj| -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(n_list.len());
        if rademacher {
            let mut ones = 0u64;
            let mut done = 0usize;
            for &n in n_list {
                ones += traj.rademacher_ones(n - done);
                done = n;
                out.push(up * ones as f64 + down * (n as u64 - ones) as f64);
            }
            return Some(out);
        }
        let mut acc = CompensatedSum::new();
        let mut done = 0usize;
        for &n in n_list {
            if planar {
                for _ in done..n {
                    let p = traj.next()?;
                    acc.add(f.value(p.coord(f.coord())));
                }
            } else {
                for _ in done..n {
                    acc.add(f.value(traj.next_scalar()));
                }
            }
            done = n;
            out.push(acc.value());
        }
        Some(out)
    });
    let mut sums = vec![Vec::with_capacity(spec.m); n_list.len()];
    let mut escaped = 0;
    for o in per_orbit {
        match o.flatten() {
            Some(v) => {
                if let Some(bad) = v.iter().find(|x| x.is_nan()) {
                    return Err(Error::OffGrid(*bad));
                }
                for (i, s) in v.into_iter().enumerate() {
                    sums[i].push(s);
                }
            }
            None => escaped += 1,
        }
    }
    Ok(EnsembleSums {
        n_list: n_list.to_vec(),
        sums,
        escaped,
    })
}

/// Values `f(T^j x)` for `j < spec.n` along every orbit; escaped orbits are
/// dropped and counted.
pub fn ensemble_values(system: &SystemDescriptor, f: &Observable, spec: &EnsembleSpec) -> Result<(Vec<Vec<f64>>, usize)> {
    spec.validate()?;
    let planar = system.dimension() == 2;
    let per_orbit = map_orbits(system, spec, |_, traj| -> Option<Vec<f64>> {
        let mut v = Vec::with_capacity(spec.n);
        for _ in 0..spec.n {
            let x = if planar { traj.next()?.coord(f.coord()) } else { traj.next_scalar() };
            v.push(f.value(x));
        }
        Some(v)
    });
    let mut out = Vec::with_capacity(spec.m);
    let mut escaped = 0;
    for o in per_orbit {
        match o.flatten() {
            Some(v) => {
                if let Some(bad) = v.iter().find(|x| x.is_nan()) {
                    return Err(Error::OffGrid(*bad));
                }
                out.push(v);
            }
            None => escaped += 1,
        }
    }
    Ok((out, escaped))
}

/// `S_n f / n` along the orbit.
pub fn birkhoff_average(f: &Observable, orbit: &[Point]) -> Result<f64> {
    if orbit.is_empty() {
        return Err(Error::Empty("orbit"));
    }
    Ok(crate::observables::ergodic_sum(f, orbit)? / orbit.len() as f64)
}

/// `Ĉ(n, k) = (1/n) Σ_{j<n} v_j v_{j+k}` for one orbit's values.
pub fn lagged_product_mean(values: &[f64], n: usize, k: usize) -> f64 {
    let mut acc = CompensatedSum::new();
    for j in 0..n {
        acc.add(values[j] * values[j + k]);
    }
    acc.value() / n as f64
}

/// Lag covariances `C(0..=L)` with cross-orbit standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSeries {
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Number of products averaged per orbit and lag.
    pub n_used: usize,
    pub orbits: usize,
}

impl CovarianceSeries {
    /// Exact series with zero standard errors, e.g. a closed form.
    pub fn exact(values: Vec<f64>) -> Self {
        let stderr = vec![0.0; values.len()];
        CovarianceSeries {
            values,
            stderr,
            n_used: 0,
            orbits: 0,
        }
    }

    pub fn max_lag(&self) -> usize {
        self.values.len().saturating_sub(1)
    }
}

/// Ensemble autocovariance at lag `k` with its standard error. `f` must be
/// centered and every orbit must hold at least `n + k` points.
pub fn autocovariance(f: &Observable, ensemble: &OrbitEnsemble, n: usize, k: usize) -> Result<(f64, f64)> {
    let s = covariance_series_lags(f, ensemble, n, &[k])?;
    Ok((s.values[0], s.stderr[0]))
}

/// `C(0..=max_lag)` over the complete orbits of the ensemble.
pub fn covariance_series(f: &Observable, ensemble: &OrbitEnsemble, n: usize, max_lag: usize) -> Result<CovarianceSeries> {
    let lags: Vec<usize> = (0..=max_lag).collect();
    covariance_series_lags(f, ensemble, n, &lags)
}

fn covariance_series_lags(f: &Observable, ensemble: &OrbitEnsemble, n: usize, lags: &[usize]) -> Result<CovarianceSeries> {
    if !f.is_mean_zero() {
        return Err(Error::Uncentered);
    }
    let series: Vec<Vec<f64>> = ensemble
        .complete_orbits()
        .map(|o| f.eval_all(&o.points))
        .collect::<Result<_>>()?;
    covariance_from_values(&series, n, lags)
}

/// Covariances from already evaluated, centered per-orbit values.
pub fn covariance_from_values(series: &[Vec<f64>], n: usize, lags: &[usize]) -> Result<CovarianceSeries> {
    if series.is_empty() {
        return Err(Error::Empty("ensemble"));
    }
    if n == 0 {
        return Err(invalid("n", "need at least one product per lag"));
    }
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if let Some(short) = series.iter().find(|s| s.len() < n + max_lag) {
        return Err(Error::OrbitTooShort {
            needed: n + max_lag,
            have: short.len(),
        });
    }
    let mut values = Vec::with_capacity(lags.len());
    let mut stderr = Vec::with_capacity(lags.len());
    for &k in lags {
        let per_orbit: Vec<f64> = series.iter().map(|v| lagged_product_mean(v, n, k)).collect();
        let (mu, se) = mean_and_stderr(&per_orbit);
        values.push(mu);
        stderr.push(if series.len() > 1 { se } else { f64::NAN });
    }
    Ok(CovarianceSeries {
        values,
        stderr,
        n_used: n,
        orbits: series.len(),
    })
}

/// Green–Kubo variance from a dedicated ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub series: CovarianceSeries,
    pub green_kubo: GreenKubo,
    pub escaped: usize,
}

/// Estimates `σ²` from `spec.m` orbits of length `spec.n`, using
/// `spec.n - max_lag` products per lag.
pub fn estimate_variance(
    system: &SystemDescriptor,
    f: &Observable,
    spec: &EnsembleSpec,
    max_lag: usize,
    rule: CutoffRule,
) -> Result<VarianceEstimate> {
    if !f.is_mean_zero() {
        return Err(Error::Uncentered);
    }
    if spec.n <= max_lag {
        return Err(Error::OrbitTooShort {
            needed: max_lag + 1,
            have: spec.n,
        });
    }
    let (values, escaped) = ensemble_values(system, f, spec)?;
    let lags: Vec<usize> = (0..=max_lag).collect();
    let series = covariance_from_values(&values, spec.n - max_lag, &lags)?;
    let green_kubo = green_kubo(&series, rule);
    Ok(VarianceEstimate {
        series,
        green_kubo,
        escaped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffRule {
    /// Sum through the lag preceding the first run of `run` consecutive lags
    /// with `|C| <= factor * stderr`.
    NoiseRun { run: usize, factor: f64 },
    /// Sum through a fixed lag (capped by the series length).
    Fixed(usize),
}

impl Default for CutoffRule {
    fn default() -> Self {
        CutoffRule::NoiseRun { run: 3, factor: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenKubo {
    pub sigma2: f64,
    /// Last lag included in the sum.
    pub cutoff_lag: usize,
    /// The noise run was never found and the sum used every available lag.
    pub hit_cap: bool,
    /// The raw sum was not positive (or negligibly small) and was clamped.
    pub degenerate: bool,
    pub raw: f64,
}

/// `C(0) + 2 Σ_{ℓ=1}^{L*} C(ℓ)`, clamped at zero.
pub fn green_kubo(series: &CovarianceSeries, rule: CutoffRule) -> GreenKubo {
    if series.values.is_empty() {
        return GreenKubo {
            sigma2: 0.0,
            cutoff_lag: 0,
            hit_cap: false,
            degenerate: true,
            raw: 0.0,
        };
    }
    let lmax = series.max_lag();
    let (cutoff_lag, hit_cap) = match rule {
        CutoffRule::Fixed(l) => (l.min(lmax), false),
        CutoffRule::NoiseRun { run, factor } => {
            let quiet = |l: usize| {
                let se = series.stderr[l];
                let se = if se.is_nan() { 0.0 } else { se };
                series.values[l].abs() <= factor * se
            };
            let run = run.max(1);
            let start = (1..=lmax).find(|&l| l + run - 1 <= lmax && (l..l + run).all(quiet));
            match start {
                Some(l) => (l - 1, false),
                None => (lmax, true),
            }
        }
    };
    let c0 = series.values.first().copied().unwrap_or(0.0);
    let tail = compensated_sum(series.values[1..=cutoff_lag].iter().copied());
    let raw = c0 + 2.0 * tail;
    let scale = c0.abs().max(f64::MIN_POSITIVE);
    let degenerate = !(raw > 1e-10 * scale) || c0 <= 0.0;
    GreenKubo {
        sigma2: raw.max(0.0),
        cutoff_lag,
        hit_cap,
        degenerate,
        raw,
    }
}

/// Finitely supported probability measure on the line.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    /// `cum[i]` is the mass of `atoms[..=i]`.
    cum: Vec<f64>,
}

impl EmpiricalDistribution {
    /// Equal weights on the samples. NaN samples are rejected.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("samples"));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(invalid("samples", "NaN sample"));
        }
        let mut atoms = samples.to_vec();
        atoms.sort_by(f64::total_cmp);
        let m = atoms.len();
        let weights = vec![1.0 / m as f64; m];
        let cum = (1..=m).map(|i| i as f64 / m as f64).collect();
        Ok(EmpiricalDistribution { atoms, weights, cum })
    }

    /// Atoms with positive weights, normalized to total mass one.
    pub fn weighted(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("atoms"));
        }
        if pairs.iter().any(|(x, w)| x.is_nan() || !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid("weights", "atoms must be finite with positive weights"));
        }
        let mut sorted = pairs.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total = compensated_sum(sorted.iter().map(|p| p.1));
        let atoms: Vec<f64> = sorted.iter().map(|p| p.0).collect();
        let weights: Vec<f64> = sorted.iter().map(|p| p.1 / total).collect();
        let mut acc = CompensatedSum::new();
        let mut cum: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc.add(*w);
                acc.value()
            })
            .collect();
        *cum.last_mut().unwrap() = 1.0;
        Ok(EmpiricalDistribution { atoms, weights, cum })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `F(t) = P(X <= t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        let i = self.atoms.partition_point(|&a| a <= t);
        if i == 0 {
            0.0
        } else {
            self.cum[i - 1]
        }
    }

    /// `F(t-) = P(X < t)`.
    pub fn cdf_left(&self, t: f64) -> f64 {
        let i = self.atoms.partition_point(|&a| a < t);
        if i == 0 {
            0.0
        } else {
            self.cum[i - 1]
        }
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.atoms.iter().zip(&self.weights).map(|(a, w)| a * w))
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        compensated_sum(self.atoms.iter().zip(&self.weights).map(|(a, w)| w * (a - mu) * (a - mu)))
    }

    pub fn total_weight(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }
}

/// Equal-weight empirical measure of the samples.
pub fn empirical_measure(samples: &[f64]) -> Result<EmpiricalDistribution> {
    EmpiricalDistribution::from_samples(samples)
}

/// A distribution function on the line: analytic or empirical.
#[derive(Debug, Clone, PartialEq)]
pub enum Cdf {
    Uniform { lo: f64, hi: f64 },
    /// Centered Gaussian; `sigma2 == 0` is the point mass at 0.
    Gaussian { sigma2: f64 },
    Empirical(EmpiricalDistribution),
}

impl Cdf {
    pub fn unit_uniform() -> Self {
        Cdf::Uniform { lo: 0.0, hi: 1.0 }
    }

    pub fn point_mass(at: f64) -> Self {
        Cdf::Empirical(EmpiricalDistribution::weighted(&[(at, 1.0)]).expect("single finite atom"))
    }

    pub fn gaussian(sigma2: f64) -> Self {
        if sigma2 > 0.0 {
            Cdf::Gaussian { sigma2 }
        } else {
            Cdf::point_mass(0.0)
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            Cdf::Uniform { lo, hi } => ((t - lo) / (hi - lo)).clamp(0.0, 1.0),
            Cdf::Gaussian { sigma2 } => std_normal_cdf(t / sigma2.sqrt()),
            Cdf::Empirical(e) => e.cdf(t),
        }
    }

    pub fn cdf_left(&self, t: f64) -> f64 {
        match self {
            Cdf::Empirical(e) => e.cdf_left(t),
            _ => self.cdf(t),
        }
    }

    fn atoms(&self) -> &[f64] {
        match self {
            Cdf::Empirical(e) => e.atoms(),
            _ => &[],
        }
    }

    /// `∫_{-∞}^t F`. Continuous variants only.
    fn lower_integral(&self, t: f64) -> f64 {
        match *self {
            Cdf::Uniform { lo, hi } => {
                let w = hi - lo;
                if t <= lo {
                    0.0
                } else if t <= hi {
                    (t - lo) * (t - lo) / (2.0 * w)
                } else {
                    w / 2.0 + (t - hi)
                }
            }
            Cdf::Gaussian { sigma2 } => {
                let s = sigma2.sqrt();
                let z = t / s;
                s * (z * std_normal_cdf(z) + std_normal_pdf(z))
            }
            Cdf::Empirical(_) => unreachable!("step functions are integrated exactly elsewhere"),
        }
    }

    /// `∫_t^∞ (1 - F)`. Continuous variants only.
    fn upper_integral(&self, t: f64) -> f64 {
        match *self {
            Cdf::Uniform { lo, hi } => {
                let w = hi - lo;
                if t >= hi {
                    0.0
                } else if t >= lo {
                    (hi - t) * (hi - t) / (2.0 * w)
                } else {
                    w / 2.0 + (lo - t)
                }
            }
            Cdf::Gaussian { sigma2 } => {
                let s = sigma2.sqrt();
                let z = -t / s;
                s * (z * std_normal_cdf(z) + std_normal_pdf(z))
            }
            Cdf::Empirical(_) => unreachable!(),
        }
    }

    /// Smallest `t` with `F(t) >= c`, for continuous variants.
    fn quantile(&self, c: f64) -> f64 {
        match *self {
            Cdf::Uniform { lo, hi } => lo + c.clamp(0.0, 1.0) * (hi - lo),
            Cdf::Gaussian { sigma2 } => {
                if c <= 0.0 {
                    f64::NEG_INFINITY
                } else if c >= 1.0 {
                    f64::INFINITY
                } else {
                    Normal::new(0.0, sigma2.sqrt()).expect("positive sigma").inverse_cdf(c)
                }
            }
            Cdf::Empirical(_) => unreachable!(),
        }
    }

    /// `∫_a^b |c - F(t)| dt` for finite `a <= b` and continuous `F`.
    fn gap_integral(&self, c: f64, a: f64, b: f64) -> f64 {
        let s = self.quantile(c).clamp(a, b);
        let la = self.lower_integral(a);
        let ls = self.lower_integral(s);
        let lb = self.lower_integral(b);
        let left = c * (s - a) - (ls - la);
        let right = (lb - ls) - c * (b - s);
        left.max(0.0) + right.max(0.0)
    }
}

impl From<EmpiricalDistribution> for Cdf {
    fn from(e: EmpiricalDistribution) -> Self {
        Cdf::Empirical(e)
    }
}

/// `∫ |F_d - F| dt` over the real line.
pub fn kantorovich_1d(d: &EmpiricalDistribution, target: &Cdf) -> f64 {
    match target {
        Cdf::Empirical(e) => kantorovich_between_empirical(d, e),
        _ => {
            let atoms = d.atoms();
            let mut acc = CompensatedSum::new();
            acc.add(target.lower_integral(atoms[0]));
            for i in 0..atoms.len() - 1 {
                let (a, b) = (atoms[i], atoms[i + 1]);
                if b > a {
                    acc.add(target.gap_integral(d.cum[i], a, b));
                }
            }
            acc.add(target.upper_integral(atoms[atoms.len() - 1]));
            acc.value()
        }
    }
}

fn kantorovich_between_empirical(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> f64 {
    let mut pts: Vec<f64> = p.atoms().iter().chain(q.atoms()).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut acc = CompensatedSum::new();
    for w in pts.windows(2) {
        acc.add((p.cdf(w[0]) - q.cdf(w[0])).abs() * (w[1] - w[0]));
    }
    acc.value()
}

/// `sup_t |F_d(t) - F(t)|`, evaluated at every jump of either function and
/// at the left limits there.
pub fn ks_distance(d: &EmpiricalDistribution, target: &Cdf) -> f64 {
    let mut best: f64 = 0.0;
    for &t in d.atoms().iter().chain(target.atoms()) {
        best = best
            .max((d.cdf(t) - target.cdf(t)).abs())
            .max((d.cdf_left(t) - target.cdf_left(t)).abs());
    }
    best.min(1.0)
}

/// Histogram bin edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    edges: Vec<f64>,
}

impl Binning {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(invalid("bins", "need at least one bin and lo < hi"));
        }
        Ok(Binning {
            edges: crate::numeric::linspace(lo, hi, bins + 1),
        })
    }

    /// `[lo_edge, first], ...` geometric from `first` to `hi`, preceded by one
    /// bin reaching down to `lo_edge` so no mass near a singularity is lost.
    pub fn logarithmic(lo_edge: f64, first: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(first > lo_edge) || !(hi > first) || first <= 0.0 {
            return Err(invalid("bins", "need lo_edge < first < hi with first > 0"));
        }
        let mut edges = vec![lo_edge];
        edges.extend(crate::numeric::geomspace(first, hi, bins + 1));
        Ok(Binning { edges })
    }

    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("edges", "edges must be strictly increasing"));
        }
        Ok(Binning { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Bin index; the last bin is closed on the right.
    pub fn locate(&self, x: f64) -> Option<usize> {
        let e = &self.edges;
        if !(x >= e[0] && x <= e[e.len() - 1]) {
            return None;
        }
        let i = e.partition_point(|&b| b <= x);
        Some((i - 1).min(self.bins() - 1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Cross-orbit standard error of each density (Poisson approximation
    /// when only one orbit is available).
    pub stderr: Vec<f64>,
    pub counts: Vec<u64>,
    /// Samples that fell outside the binning range.
    pub outside: u64,
    /// Indices of empty bins at either end of the range.
    pub empty_edge_bins: Vec<usize>,
}

impl DensityTable {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.density.iter().zip(self.widths()).map(|(d, w)| d * w))
    }

    /// Fit of log density against log bin center (geometric center for
    /// positive edges) over bins lying inside `[lo, hi]`; empty bins skipped.
    pub fn log_log_slope(&self, lo: f64, hi: f64) -> Option<LinearFit> {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (i, w) in self.edges.windows(2).enumerate() {
            if w[0] >= lo && w[1] <= hi && w[0] > 0.0 && self.density[i] > 0.0 {
                x.push((w[0] * w[1]).sqrt().ln());
                y.push(self.density[i].ln());
            }
        }
        linear_fit(&x, &y)
    }
}

/// Normalized histogram of per-orbit sample series.
pub fn invariant_density_histogram(series: &[Vec<f64>], binning: &Binning) -> Result<DensityTable> {
    if series.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("samples"));
    }
    let nb = binning.bins();
    let widths: Vec<f64> = binning.edges.windows(2).map(|w| w[1] - w[0]).collect();
    let mut counts = vec![0u64; nb];
    let mut outside = 0u64;
    let mut per_orbit: Vec<Vec<f64>> = Vec::with_capacity(series.len());
    for s in series {
        let mut c = vec![0u64; nb];
        let mut inside = 0u64;
        for &x in s {
            match binning.locate(x) {
                Some(i) => {
                    c[i] += 1;
                    inside += 1;
                }
                None => outside += 1,
            }
        }
        for (t, v) in counts.iter_mut().zip(&c) {
            *t += v;
        }
        if inside > 0 {
            per_orbit.push(c.iter().zip(&widths).map(|(&k, w)| k as f64 / (inside as f64 * w)).collect());
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InsufficientData("no samples inside the binning range".into()));
    }
    let density: Vec<f64> = counts.iter().zip(&widths).map(|(&k, w)| k as f64 / (total as f64 * w)).collect();
    let stderr: Vec<f64> = if per_orbit.len() >= 2 {
        (0..nb)
            .map(|i| {
                let col: Vec<f64> = per_orbit.iter().map(|d| d[i]).collect();
                mean_and_stderr(&col).1
            })
            .collect()
    } else {
        counts.iter().zip(&widths).map(|(&k, w)| (k as f64).sqrt() / (total as f64 * w)).collect()
    };
    let mut empty_edge_bins = Vec::new();
    for i in 0..nb {
        if counts[i] != 0 {
            break;
        }
        empty_edge_bins.push(i);
    }
    for i in (0..nb).rev() {
        if counts[i] != 0 || empty_edge_bins.contains(&i) {
            break;
        }
        empty_edge_bins.push(i);
    }
    Ok(DensityTable {
        edges: binning.edges.clone(),
        density,
        stderr,
        counts,
        outside,
        empty_edge_bins,
    })
}

/// `(1/n) Σ_{k<n} Π_j f_j(T^{jk} x)` for `j = 1..=ℓ`.
pub fn nonconventional_average(fs: &[Observable], orbit: &[Point], n: usize) -> Result<f64> {
    if fs.is_empty() {
        return Err(Error::Empty("observable list"));
    }
    if n == 0 {
        return Err(invalid("n", "need at least one term"));
    }
    let l = fs.len();
    let needed = l * (n - 1) + 1;
    if orbit.len() < needed {
        return Err(Error::OrbitTooShort {
            needed,
            have: orbit.len(),
        });
    }
    let mut acc = CompensatedSum::new();
    for k in 0..n {
        let mut prod = 1.0;
        for (j, f) in fs.iter().enumerate() {
            prod *= f.eval(&orbit[(j + 1) * k])?;
        }
        acc.add(prod);
    }
    Ok(acc.value() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{generate_ensemble, iterate_state, EnsembleSpec, State, SystemDescriptor};
    use proptest::prelude::*;

    fn uniform_mean_covariance(l: usize) -> f64 {
        // closed form for the doubling map with f = x - 1/2
        2f64.powi(-(l as i32)) / 12.0
    }

    #[test]
    fn constant_and_empty_averages() {
        let c = Observable::constant(2.5);
        let orbit = vec![Point::D1(0.1); 7];
        assert_eq!(birkhoff_average(&c, &orbit).unwrap(), 2.5);
        assert!(birkhoff_average(&c, &[]).is_err());
    }

    #[test]
    fn doubling_birkhoff_average() {
        let sys = SystemDescriptor::doubling();
        let ens = generate_ensemble(&sys, &EnsembleSpec::new(1, 1_000_000, 1000, 17)).unwrap();
        let avg = birkhoff_average(&Observable::coordinate(0), &ens.orbits[0].points).unwrap();
        assert!((avg - 0.5).abs() < 3.0 * 0.5 / 1000.0, "{avg}");
    }

    #[test]
    fn autocovariance_doubling_oracle() {
        let sys = SystemDescriptor::doubling();
        let ens = generate_ensemble(&sys, &EnsembleSpec::new(100, 2010, 100, 3)).unwrap();
        let f = Observable::coordinate(0).centered_at(0.5);
        for k in [0, 1] {
            let (c, se) = autocovariance(&f, &ens, 2000, k).unwrap();
            assert!((c - uniform_mean_covariance(k)).abs() < 3.0 * se, "k={k} c={c} se={se}");
        }
        let zero = Observable::constant(0.0);
        assert_eq!(autocovariance(&zero, &ens, 2000, 3).unwrap().0, 0.0);
        assert!(matches!(
            autocovariance(&Observable::coordinate(0), &ens, 2000, 1),
            Err(Error::Uncentered)
        ));
    }

    #[test]
    fn covariance_iid_and_lag_zero() {
        let sys = SystemDescriptor::iid_rademacher();
        let ens = generate_ensemble(&sys, &EnsembleSpec::new(200, 1020, 0, 8)).unwrap();
        let f = Observable::coordinate(0).centered_at(0.0);
        let s = covariance_series(&f, &ens, 1000, 0).unwrap();
        assert_eq!(s.values.len(), 1);
        let s = covariance_series(&f, &ens, 1000, 20).unwrap();
        assert_eq!(s.values[0], 1.0);
        let outside = (1..=20).filter(|&l| s.values[l].abs() > 3.0 * s.stderr[l]).count();
        assert!(outside <= 1, "{outside} lags beyond 3 se");
    }

    #[test]
    fn green_kubo_examples() {
        let mut iid = vec![0.0; 10];
        iid[0] = 1.0;
        let gk = green_kubo(&CovarianceSeries::exact(iid), CutoffRule::default());
        assert_eq!(gk.sigma2, 1.0);
        assert!(!gk.degenerate);

        let dbl: Vec<f64> = (0..=60).map(uniform_mean_covariance).collect();
        let gk = green_kubo(&CovarianceSeries::exact(dbl), CutoffRule::default());
        assert!((gk.sigma2 - 0.25).abs() < 1e-15);

        let gk = green_kubo(&CovarianceSeries::exact(vec![0.0; 5]), CutoffRule::default());
        assert_eq!(gk.sigma2, 0.0);
        assert!(gk.degenerate);
    }

    #[test]
    fn green_kubo_geometric_series() {
        for rho in [-0.5, 0.2, 0.7] {
            let series: Vec<f64> = (0..400).map(|l| 2.0 * f64::powi(rho, l)).collect();
            let gk = green_kubo(&CovarianceSeries::exact(series), CutoffRule::default());
            let expect = 2.0 * (1.0 + rho) / (1.0 - rho);
            assert!((gk.sigma2 - expect).abs() < 1e-9, "rho={rho}");
        }
    }

    #[test]
    fn green_kubo_noise_cutoff() {
        let values = vec![1.0, 0.5, 0.25, 0.01, -0.01, 0.02, 0.9];
        let stderr = vec![0.01; 7];
        let s = CovarianceSeries {
            values,
            stderr,
            n_used: 1,
            orbits: 2,
        };
        let gk = green_kubo(&s, CutoffRule::default());
        assert_eq!(gk.cutoff_lag, 2);
        assert!((gk.sigma2 - 2.5).abs() < 1e-15);
    }

    #[test]
    fn empirical_measure_examples() {
        let d = empirical_measure(&[0.3]).unwrap();
        assert_eq!(d.atoms(), &[0.3]);
        assert_eq!(d.weights(), &[1.0]);
        let d = empirical_measure(&[0.7, 0.2]).unwrap();
        assert_eq!(d.weights(), &[0.5, 0.5]);
        assert_eq!(d.atoms(), &[0.2, 0.7]);
        assert!(empirical_measure(&[]).is_err());
    }

    #[test]
    fn kantorovich_examples() {
        let a = empirical_measure(&[0.1, 0.4, 0.9]).unwrap();
        assert_eq!(kantorovich_1d(&a, &Cdf::Empirical(a.clone())), 0.0);
        let da = empirical_measure(&[0.2]).unwrap();
        assert!((kantorovich_1d(&da, &Cdf::point_mass(0.9)) - 0.7).abs() < 1e-15);
        let half = empirical_measure(&[0.5]).unwrap();
        assert!((kantorovich_1d(&half, &Cdf::unit_uniform()) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn kantorovich_gaussian_matches_quadrature() {
        let d = empirical_measure(&[-1.2, -0.1, 0.0, 0.4, 2.0]).unwrap();
        let target = Cdf::gaussian(0.7);
        let h = 1e-4;
        let quad: f64 = (0..200_000)
            .map(|i| {
                let t = -10.0 + (i as f64 + 0.5) * h;
                (d.cdf(t) - target.cdf(t)).abs() * h
            })
            .sum();
        assert!((kantorovich_1d(&d, &target) - quad).abs() < 1e-6);
    }

    #[test]
    fn ks_examples() {
        let grid: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let d = empirical_measure(&grid).unwrap();
        assert_eq!(ks_distance(&d, &Cdf::Empirical(d.clone())), 0.0);
        let fine: Vec<f64> = (0..10_000).map(|i| (i as f64 + 0.5) / 10_000.0).collect();
        let u = empirical_measure(&fine).unwrap();
        assert!((ks_distance(&u, &Cdf::point_mass(0.5)) - 0.5).abs() < 1e-12);
        let atom = empirical_measure(&[0.0]).unwrap();
        assert_eq!(ks_distance(&atom, &Cdf::gaussian(1.0)), 0.5);
    }

    #[test]
    fn doubling_measure_invariance() {
        for sys in [SystemDescriptor::doubling(), SystemDescriptor::cat()] {
            let ens = generate_ensemble(&sys, &EnsembleSpec::new(1, 1_000_000, 1000, 4)).unwrap();
            let x = ens.orbits[0].values(0);
            let ks = ks_distance(&empirical_measure(&x).unwrap(), &Cdf::unit_uniform());
            assert!(ks <= 0.01, "{sys}: {ks}");
        }
    }

    #[test]
    fn histogram_doubling_flat_and_normalized() {
        let sys = SystemDescriptor::doubling();
        let ens = generate_ensemble(&sys, &EnsembleSpec::new(20, 50_000, 1000, 9)).unwrap();
        let table = invariant_density_histogram(&ens.series(0), &Binning::uniform(0.0, 1.0, 20).unwrap()).unwrap();
        assert!((table.total_mass() - 1.0).abs() < 1e-9);
        for (d, se) in table.density.iter().zip(&table.stderr) {
            assert!((d - 1.0).abs() <= 3.0 * se + 1e-3, "{d} ± {se}");
        }
    }

    #[test]
    fn histogram_flags_empty_edges() {
        let series = vec![vec![0.45, 0.5, 0.55]];
        let table = invariant_density_histogram(&series, &Binning::uniform(0.0, 1.0, 10).unwrap()).unwrap();
        assert!(table.empty_edge_bins.contains(&0) && table.empty_edge_bins.contains(&9));
        assert!((table.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonconventional_examples() {
        let sys = SystemDescriptor::doubling();
        let orbit = iterate_state(&sys, State::rational(1, 3).unwrap(), 8, 0).unwrap();
        let x = Observable::coordinate(0);
        let v = nonconventional_average(&[x.clone(), x.clone()], &orbit.points, 2).unwrap();
        assert!((v - 1.0 / 6.0).abs() < 1e-15);
        let single = nonconventional_average(std::slice::from_ref(&x), &orbit.points, 8).unwrap();
        assert_eq!(single, birkhoff_average(&x, &orbit.points).unwrap());
        let one = Observable::constant(1.0);
        assert_eq!(nonconventional_average(&[one.clone(), one.clone(), one], &orbit.points, 3).unwrap(), 1.0);
        assert!(matches!(
            nonconventional_average(&[x.clone(), x], &orbit.points, 5),
            Err(Error::OrbitTooShort { .. })
        ));
    }

    #[test]
    fn nonconventional_iid_weak_mixing() {
        let sys = SystemDescriptor::iid_uniform();
        let ens = generate_ensemble(&sys, &EnsembleSpec::new(200, 3 * 999 + 1, 0, 21)).unwrap();
        let f = Observable::coordinate(0).centered_at(0.5);
        let fs = vec![f.clone(), f.clone(), f];
        let vals: Vec<f64> = ens
            .orbits
            .iter()
            .map(|o| nonconventional_average(&fs, &o.points, 1000).unwrap())
            .collect();
        let (mu, se) = mean_and_stderr(&vals);
        assert!(mu.abs() < 3.0 * se, "{mu} ± {se}");
    }

    proptest! {
        #[test]
        fn kantorovich_is_a_metric(
            a in prop::collection::vec(-5.0f64..5.0, 1..20),
            b in prop::collection::vec(-5.0f64..5.0, 1..20),
            c in prop::collection::vec(-5.0f64..5.0, 1..20),
        ) {
            let (da, db, dc) = (empirical_measure(&a).unwrap(), empirical_measure(&b).unwrap(), empirical_measure(&c).unwrap());
            let ab = kantorovich_1d(&da, &Cdf::Empirical(db.clone()));
            let ba = kantorovich_1d(&db, &Cdf::Empirical(da.clone()));
            let bc = kantorovich_1d(&db, &Cdf::Empirical(dc.clone()));
            let ac = kantorovich_1d(&da, &Cdf::Empirical(dc));
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
            prop_assert!(kantorovich_1d(&da, &Cdf::Empirical(da.clone())) == 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn ks_in_unit_interval(a in prop::collection::vec(-5.0f64..5.0, 1..50), s2 in 0.0f64..4.0) {
            let d = empirical_measure(&a).unwrap();
            let ks = ks_distance(&d, &Cdf::gaussian(s2));
            prop_assert!((0.0..=1.0).contains(&ks));
        }

        #[test]
        fn weights_sum_to_one(pairs in prop::collection::vec((-3.0f64..3.0, 0.001f64..10.0), 1..100)) {
            let d = EmpiricalDistribution::weighted(&pairs).unwrap();
            prop_assert!((d.total_weight() - 1.0).abs() < 1e-12);
            prop_assert!(d.atoms().windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
