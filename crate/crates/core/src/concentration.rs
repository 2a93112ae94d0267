//! Monte Carlo checks of concentration inequalities for separately
//! Lipschitz functionals: envelope fitting, variance bounds, the
//! correlation estimator, empirical measures, orbit shadowing and the
//! integrated periodogram.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dynsys::{calibration_trajectory, map_orbits, EnsembleSpec, Point, SystemDescriptor, SystemKind};
use crate::ergostat::{
    ensemble_values, estimate_variance, kantorovich_1d, lagged_product_mean, Cdf, CovarianceSeries, CutoffRule,
    EmpiricalDistribution,
};
use crate::error::{invalid, Error, Result};
use crate::numeric::{linear_fit, linspace, mean, mean_and_stderr, median, sorted_copy, sorted_quantile, variance, CompensatedSum, LinearFit};
use crate::observables::{Functional, Observable};
use crate::rng::derive_seed;

/// Centered evaluations `K(window_i) - mean_i K(window_i)` over independent
/// orbits.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationSample {
    pub values: Vec<f64>,
    pub functional: String,
    pub lip_sum_sq: f64,
    /// Ensemble mean subtracted from the raw evaluations.
    pub center: f64,
    pub escaped: usize,
}

impl DeviationSample {
    /// Centers raw evaluations at their mean.
    pub fn from_raw(raw: &[f64], functional: impl Into<String>, lip_sum_sq: f64) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("samples"));
        }
        if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
            return Err(invalid("samples", format!("non-finite value {bad}")));
        }
        let center = mean(raw);
        Ok(DeviationSample {
            values: raw.iter().map(|v| v - center).collect(),
            functional: functional.into(),
            lip_sum_sq,
            center,
            escaped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Splits into the first and second half of the orbits, each recentered.
    pub fn halves(&self) -> Result<(DeviationSample, DeviationSample)> {
        let mid = self.values.len() / 2;
        let a = DeviationSample::from_raw(&self.values[..mid], self.functional.clone(), self.lip_sum_sq)?;
        let b = DeviationSample::from_raw(&self.values[mid..], self.functional.clone(), self.lip_sum_sq)?;
        Ok((a, b))
    }
}

/// Raw evaluations of `K` on the first `K.arity()` points of each orbit;
/// escaped orbits are dropped.
pub fn functional_values(k: &Functional, system: &SystemDescriptor, spec: &EnsembleSpec) -> Result<(Vec<f64>, usize)> {
    let arity = k.arity();
    if arity == 0 {
        return Err(invalid("arity", "functional needs at least one point"));
    }
    if spec.m == 0 {
        return Err(invalid("m", "need at least one orbit"));
    }
    let per_orbit = map_orbits(system, spec, |_, traj| -> Option<Result<f64>> {
        let window: Vec<Point> = traj.take(arity).collect();
        if window.len() < arity {
            return None;
        }
        Some(k.eval(&window))
    });
    let mut out = Vec::with_capacity(spec.m);
    let mut escaped = 0;
    for o in per_orbit {
        match o.flatten() {
            Some(v) => out.push(v?),
            None => escaped += 1,
        }
    }
    Ok((out, escaped))
}

/// `spec.m` centered evaluations of `K` (the orbit length is `K.arity()`).
pub fn functional_samples(k: &Functional, system: &SystemDescriptor, spec: &EnsembleSpec) -> Result<DeviationSample> {
    let (raw, escaped) = functional_values(k, system, spec)?;
    if raw.is_empty() {
        return Err(Error::InsufficientData("every orbit escaped".into()));
    }
    let mut d = DeviationSample::from_raw(&raw, k.name(), k.lip_sum_sq()?)?;
    d.escaped = escaped;
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeRegime {
    Gaussian,
    Polynomial,
    Inconclusive,
}

impl EnvelopeRegime {
    pub fn label(&self) -> &'static str {
        match self {
            EnvelopeRegime::Gaussian => "gaussian_envelope",
            EnvelopeRegime::Polynomial => "polynomial_envelope",
            EnvelopeRegime::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub regime: EnvelopeRegime,
    /// Gaussian: `C` in `exp(-t² / (4 C Σ Lip²))`. Polynomial: the prefactor
    /// `exp(intercept)` of `C t^{-q}`.
    pub c_hat: f64,
    /// Polynomial tail exponent `q` (from the log-log fit).
    pub exponent: f64,
    /// R² of the selected fit.
    pub quality: f64,
    pub t_grid: Vec<f64>,
    pub tail: Vec<f64>,
    /// Grid points with no exceedance, entered at the `1/m` bound.
    pub censored: Vec<f64>,
    pub gaussian_fit: Option<LinearFit>,
    pub polynomial_fit: Option<LinearFit>,
    pub zero_variance: bool,
}

pub const ENVELOPE_MIN_SAMPLES: usize = 1000;
const ENVELOPE_MIN_POINTS: usize = 5;
const ENVELOPE_GRID_POINTS: usize = 16;
/// Exceedances kept at the top of the default grid.
const ENVELOPE_TOP_COUNT: f64 = 10.0;

/// Default grid: evenly spaced between the median of `|D|` and the level
/// exceeded by ten samples.
pub fn default_t_grid(d: &DeviationSample) -> Vec<f64> {
    let abs = sorted_copy(&d.values.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let m = abs.len() as f64;
    let lo = sorted_quantile(&abs, 0.5);
    let hi = sorted_quantile(&abs, 1.0 - ENVELOPE_TOP_COUNT / m);
    if !(hi > lo) {
        return vec![lo];
    }
    linspace(lo, hi, ENVELOPE_GRID_POINTS)
}

/// Fits `log P(|D| > t)` against `t² / Σ Lip²` and against `log t`.
pub fn envelope_fit(d: &DeviationSample, t_grid: Option<&[f64]>) -> Result<ConcentrationReport> {
    let m = d.values.len();
    if m < ENVELOPE_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "envelope fit needs {ENVELOPE_MIN_SAMPLES} samples, got {m}"
        )));
    }
    let inconclusive = |zero_variance, t_grid: Vec<f64>| ConcentrationReport {
        regime: EnvelopeRegime::Inconclusive,
        c_hat: f64::NAN,
        exponent: f64::NAN,
        quality: f64::NAN,
        tail: vec![0.0; t_grid.len()],
        t_grid,
        censored: vec![],
        gaussian_fit: None,
        polynomial_fit: None,
        zero_variance,
    };
    if d.values.iter().all(|v| *v == 0.0) {
        return Ok(inconclusive(true, t_grid.map(<[f64]>::to_vec).unwrap_or_default()));
    }
    let grid: Vec<f64> = match t_grid {
        Some(g) => g.to_vec(),
        None => default_t_grid(d),
    };
    let mut abs = d.values.iter().map(|v| v.abs()).collect::<Vec<_>>();
    abs.sort_by(f64::total_cmp);
    let mut tail = Vec::with_capacity(grid.len());
    let mut censored = Vec::new();
    let (mut xs_g, mut xs_p, mut ys) = (Vec::new(), Vec::new(), Vec::new());
    let mut usable = 0;
    let lip = if d.lip_sum_sq > 0.0 { d.lip_sum_sq } else { 1.0 };
    for &t in &grid {
        let count = abs.len() - abs.partition_point(|&a| a <= t);
        let p = count as f64 / m as f64;
        tail.push(p);
        if !(t > 0.0) {
            continue;
        }
        let p_used = if count == 0 {
            censored.push(t);
            1.0 / m as f64
        } else {
            usable += 1;
            p
        };
        xs_g.push(t * t / lip);
        xs_p.push(t.ln());
        ys.push(p_used.ln());
    }
    if usable < ENVELOPE_MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "envelope fit needs {ENVELOPE_MIN_POINTS} grid points with exceedances, got {usable}"
        )));
    }
    let gaussian_fit = linear_fit(&xs_g, &ys);
    let polynomial_fit = linear_fit(&xs_p, &ys);
    let (g, p) = match (gaussian_fit, polynomial_fit) {
        (Some(g), Some(p)) => (g, p),
        _ => return Ok(inconclusive(false, grid)),
    };
    let (regime, best) = if g.r_squared >= p.r_squared {
        (EnvelopeRegime::Gaussian, g)
    } else {
        (EnvelopeRegime::Polynomial, p)
    };
    if best.slope >= 0.0 {
        return Ok(ConcentrationReport {
            gaussian_fit: Some(g),
            polynomial_fit: Some(p),
            tail,
            censored,
            ..inconclusive(false, grid)
        });
    }
    let c_hat = match regime {
        EnvelopeRegime::Gaussian => -1.0 / (4.0 * best.slope),
        _ => best.intercept.exp(),
    };
    Ok(ConcentrationReport {
        regime,
        c_hat,
        exponent: -p.slope,
        quality: best.r_squared,
        t_grid: grid,
        tail,
        censored,
        gaussian_fit: Some(g),
        polynomial_fit: Some(p),
        zero_variance: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceBoundRow {
    pub n: usize,
    pub variance: f64,
    pub lip_sum_sq: f64,
    /// `Var(K) / Σ Lip²`; 0 when the variance vanishes.
    pub ratio: f64,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceBound {
    pub rows: Vec<VarianceBoundRow>,
    /// `(max - min) / mean` of the nonzero ratios.
    pub spread: f64,
    pub escaped: usize,
}

/// `Var(K) / Σ Lip_ℓ(K)²` for each functional of the family.
pub fn variance_bound_check(family: &[Functional], system: &SystemDescriptor, spec: &EnsembleSpec) -> Result<VarianceBound> {
    if family.is_empty() {
        return Err(Error::Empty("functional family"));
    }
    let mut rows = Vec::with_capacity(family.len());
    let mut escaped = 0;
    for k in family {
        let (raw, esc) = functional_values(k, system, spec)?;
        escaped += esc;
        if raw.len() < 2 {
            return Err(Error::InsufficientData("variance needs two orbits".into()));
        }
        let v = variance(&raw);
        let lip = k.lip_sum_sq()?;
        let ratio = if v == 0.0 { 0.0 } else { v / lip };
        rows.push(VarianceBoundRow {
            n: k.arity(),
            variance: v,
            lip_sum_sq: lip,
            ratio,
            m: raw.len(),
        });
    }
    let nonzero: Vec<f64> = rows.iter().map(|r| r.ratio).filter(|r| *r > 0.0).collect();
    let spread = if nonzero.is_empty() {
        0.0
    } else {
        let hi = nonzero.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
        (hi - lo) / mean(&nonzero)
    };
    Ok(VarianceBound { rows, spread, escaped })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationDevRow {
    pub n: usize,
    /// `n² t² / (n + k)`.
    pub scale: f64,
    pub fraction: f64,
    pub hits: usize,
    /// No exceedance: `fraction` holds the `1/m` bound.
    pub censored: bool,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationDev {
    pub k: usize,
    pub t: f64,
    pub rows: Vec<CorrelationDevRow>,
    /// `log fraction` against `n² t² / (n + k)`, uncensored rows only.
    pub fit: Option<LinearFit>,
    pub escaped: usize,
}

/// Fraction of orbits with `|Ĉ(n, k) - mean Ĉ(n, k)| > t` for each `n`.
pub fn correlation_dev_experiment(
    f: &Observable,
    system: &SystemDescriptor,
    n_list: &[usize],
    k: usize,
    t: f64,
    spec: &EnsembleSpec,
) -> Result<CorrelationDev> {
    if !f.is_mean_zero() {
        return Err(Error::Uncentered);
    }
    if !(t > 0.0) {
        return Err(invalid("t", "must be positive"));
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(invalid("n_list", "must be nonempty and positive"));
    }
    let n_max = *n_list.iter().max().expect("nonempty");
    let (values, escaped) = ensemble_values(system, f, &spec.with_n(n_max + k))?;
    if values.is_empty() {
        return Err(Error::InsufficientData("every orbit escaped".into()));
    }
    let m = values.len();
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let est: Vec<f64> = values.iter().map(|v| lagged_product_mean(v, n, k)).collect();
        let center = mean(&est);
        let hits = est.iter().filter(|e| (*e - center).abs() > t).count();
        let censored = hits == 0;
        rows.push(CorrelationDevRow {
            n,
            scale: (n * n) as f64 * t * t / (n + k) as f64,
            fraction: if censored { 1.0 / m as f64 } else { hits as f64 / m as f64 },
            hits,
            censored,
            m,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| !r.censored).map(|r| (r.scale, r.fraction.ln())).unzip();
    Ok(CorrelationDev {
        k,
        t,
        fit: linear_fit(&xs, &ys),
        rows,
        escaped,
    })
}

/// Atoms kept when a long calibration orbit stands in for the invariant law.
pub const REFERENCE_QUANTILES: usize = 1 << 14;

/// Invariant law of the first coordinate: exact where known, otherwise the
/// `REFERENCE_QUANTILES` quantiles of a `steps`-long calibration orbit.
pub fn reference_measure(system: &SystemDescriptor, seed: u64, steps: usize) -> Result<Cdf> {
    if system.dimension() != 1 {
        return Err(Error::NotOneDimensional);
    }
    match system.kind() {
        SystemKind::Doubling | SystemKind::IidUniform => Ok(Cdf::unit_uniform()),
        SystemKind::IidRademacher => Ok(Cdf::Empirical(EmpiricalDistribution::weighted(&[(-1.0, 0.5), (1.0, 0.5)])?)),
        _ => {
            if steps < REFERENCE_QUANTILES {
                return Err(invalid("steps", format!("calibration needs at least {REFERENCE_QUANTILES} steps")));
            }
            let mut traj = calibration_trajectory(system, seed, 0x4EF, system.default_burn_in());
            let mut xs: Vec<f64> = (0..steps).map(|_| traj.next_scalar()).collect();
            xs.sort_by(f64::total_cmp);
            let q = REFERENCE_QUANTILES;
            // midpoint quantiles, one atom per 1/q of mass
            let atoms: Vec<f64> = (0..q).map(|i| xs[((2 * i + 1) * steps) / (2 * q)]).collect();
            Ok(Cdf::Empirical(EmpiricalDistribution::from_samples(&atoms)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasureRow {
    pub n: usize,
    pub mean_distance: f64,
    pub stderr: f64,
    /// `√n (dist_K - mean)` over orbits; `lip_sum_sq` is 1 at this scale.
    pub scaled: DeviationSample,
    pub envelope: Option<ConcentrationReport>,
    /// Why the envelope fit was skipped, if it was.
    pub envelope_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasureConc {
    pub rows: Vec<EmpiricalMeasureRow>,
    /// `log mean dist_K` against `log n`.
    pub slope_fit: Option<LinearFit>,
    pub escaped: usize,
}

/// Kantorovich distance of the empirical measure of the first `n` orbit
/// points to `reference`, for each `n` and every orbit.
pub fn empirical_measure_conc(system: &SystemDescriptor, n_list: &[usize], spec: &EnsembleSpec, reference: &Cdf) -> Result<EmpiricalMeasureConc> {
    if system.dimension() != 1 {
        return Err(Error::NotOneDimensional);
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(invalid("n_list", "must be nonempty and positive"));
    }
    let n_max = *n_list.iter().max().expect("nonempty");
    let per_orbit = map_orbits(system, &spec.with_n(n_max), |_, traj| -> Result<Vec<f64>> {
        let xs: Vec<f64> = (0..n_max).map(|_| traj.next_scalar()).collect();
        n_list
            .iter()
            .map(|&n| Ok(kantorovich_1d(&EmpiricalDistribution::from_samples(&xs[..n])?, reference)))
            .collect()
    });
    let mut dists = vec![Vec::with_capacity(spec.m); n_list.len()];
    for o in per_orbit.into_iter().flatten() {
        for (i, d) in o?.into_iter().enumerate() {
            dists[i].push(d);
        }
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for (&n, d) in n_list.iter().zip(&dists) {
        let (mean_distance, stderr) = mean_and_stderr(d);
        let root = (n as f64).sqrt();
        let scaled_raw: Vec<f64> = d.iter().map(|x| root * x).collect();
        let scaled = DeviationSample::from_raw(&scaled_raw, format!("sqrt_n_kantorovich(n={n})"), 1.0)?;
        let (envelope, envelope_note) = match envelope_fit(&scaled, None) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        rows.push(EmpiricalMeasureRow {
            n,
            mean_distance,
            stderr,
            scaled,
            envelope,
            envelope_note,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.mean_distance > 0.0)
        .map(|r| ((r.n as f64).ln(), r.mean_distance.ln()))
        .unzip();
    Ok(EmpiricalMeasureConc {
        slope_fit: linear_fit(&xs, &ys),
        rows,
        escaped: 0,
    })
}

/// `min_{y in A} (1/n) Σ_{j<n} d(x_j, y_j)`.
pub fn shadowing_stat(x: &[Point], a: &[Vec<Point>], n: usize, domain: &crate::dynsys::Domain) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    if n == 0 {
        return Err(invalid("n", "need n >= 1"));
    }
    if x.len() < n {
        return Err(Error::OrbitTooShort { needed: n, have: x.len() });
    }
    if let Some(short) = a.iter().find(|y| y.len() < n) {
        return Err(Error::OrbitTooShort {
            needed: n,
            have: short.len(),
        });
    }
    Ok(crate::observables::shadowing_distance(&x[..n], a, domain))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowingRow {
    pub n: usize,
    pub median: f64,
    pub q90: f64,
    pub q99: f64,
    /// `√(log n) / (μ(A) √n)`.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowingResult {
    pub mass: f64,
    pub reference_orbits: usize,
    pub rows: Vec<ShadowingRow>,
    /// `log q99` against `log scale`.
    pub fit: Option<LinearFit>,
    pub escaped: usize,
}

/// Tracing quality of every ensemble orbit by the sub-ensemble `A` whose
/// initial first coordinate lies below the empirical `mass`-quantile.
pub fn shadowing_experiment(system: &SystemDescriptor, mass: f64, n_list: &[usize], spec: &EnsembleSpec) -> Result<ShadowingResult> {
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(invalid("mass", format!("{mass} not in (0, 1]")));
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(invalid("n_list", "must be nonempty and positive"));
    }
    let n_max = *n_list.iter().max().expect("nonempty");
    let ens = crate::dynsys::generate_ensemble(system, &spec.with_n(n_max))?;
    let orbits: Vec<&Vec<Point>> = ens.complete_orbits().map(|o| &o.points).collect();
    if orbits.is_empty() {
        return Err(Error::InsufficientData("every orbit escaped".into()));
    }
    let starts: Vec<f64> = orbits.iter().map(|o| o[0].coord(0)).collect();
    let in_a = (mass * orbits.len() as f64).round() as usize;
    if in_a == 0 {
        return Err(Error::Empty("reference set (mass too small for m)"));
    }
    let mut order: Vec<usize> = (0..orbits.len()).collect();
    order.sort_by(|&i, &j| starts[i].total_cmp(&starts[j]).then(i.cmp(&j)));
    let a: Vec<&Vec<Point>> = order[..in_a].iter().map(|&i| orbits[i]).collect();
    let domain = system.domain();
    // cumulative distance to each reference, sampled at every checkpoint
    let stats: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        orbits
            .par_iter()
            .map(|x| {
                let mut best = vec![f64::INFINITY; n_list.len()];
                for y in &a {
                    let mut acc = CompensatedSum::new();
                    let mut done = 0;
                    for (c, &n) in n_list.iter().enumerate() {
                        for j in done..n {
                            acc.add(domain.distance(&x[j], &y[j]));
                        }
                        done = n;
                        best[c] = best[c].min(acc.value() / n as f64);
                    }
                }
                best
            })
            .collect()
    };
    let mut rows = Vec::with_capacity(n_list.len());
    for (c, &n) in n_list.iter().enumerate() {
        let col = sorted_copy(&stats.iter().map(|s| s[c]).collect::<Vec<_>>());
        let nf = n as f64;
        rows.push(ShadowingRow {
            n,
            median: sorted_quantile(&col, 0.5),
            q90: sorted_quantile(&col, 0.9),
            q99: sorted_quantile(&col, 0.99),
            scale: nf.ln().max(0.0).sqrt() / (mass * nf.sqrt()),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.q99 > 0.0 && r.scale > 0.0)
        .map(|r| (r.scale.ln(), r.q99.ln()))
        .unzip();
    Ok(ShadowingResult {
        mass,
        reference_orbits: in_a,
        fit: linear_fit(&xs, &ys),
        rows,
        escaped: ens.escaped_count(),
    })
}

/// Lag sums `A(d) = Σ_j f_j f_{j+d}` of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct LagSums {
    pub lags: Vec<f64>,
}

/// Series up to this length use the direct quadratic sum.
const DIRECT_LAG_SUMS: usize = 256;

impl LagSums {
    pub fn new(values: &[f64]) -> Self {
        let n = values.len();
        if n <= DIRECT_LAG_SUMS {
            let lags = (0..n)
                .map(|d| {
                    let mut acc = CompensatedSum::new();
                    for j in 0..n - d {
                        acc.add(values[j] * values[j + d]);
                    }
                    acc.value()
                })
                .collect();
            return LagSums { lags };
        }
        let size = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(size, Complex64::new(0.0, 0.0));
        fwd.process(&mut buf);
        for z in buf.iter_mut() {
            *z = Complex64::new(z.norm_sqr(), 0.0);
        }
        inv.process(&mut buf);
        let scale = 1.0 / size as f64;
        let mut lags: Vec<f64> = buf[..n].iter().map(|z| z.re * scale).collect();
        // the zero lag is recomputed directly so the ω = 2π identity is exact
        lags[0] = values.iter().map(|v| v * v).sum();
        LagSums { lags }
    }

    pub fn n(&self) -> usize {
        self.lags.len()
    }

    /// `(1/n)[ω A(0) + 2 Σ_{d>=1} A(d) sin(dω)/d]`.
    pub fn integrated(&self, omega: f64) -> Result<f64> {
        check_omega(omega)?;
        let n = self.lags.len();
        if n == 0 {
            return Err(Error::Empty("series"));
        }
        let mut acc = CompensatedSum::new();
        acc.add(omega * self.lags[0]);
        let mut rot = SineTable::new(omega);
        for d in 1..n {
            acc.add(2.0 * self.lags[d] * rot.next_sin() / d as f64);
        }
        Ok(acc.value() / n as f64)
    }
}

/// `sin(dω)` for `d = 1, 2, ...` by rotation, resynchronized periodically.
struct SineTable {
    omega: f64,
    d: usize,
    cur: Complex64,
    step: Complex64,
}

impl SineTable {
    const RESYNC: usize = 512;

    fn new(omega: f64) -> Self {
        SineTable {
            omega,
            d: 0,
            cur: Complex64::new(1.0, 0.0),
            step: Complex64::new(omega.cos(), omega.sin()),
        }
    }

    fn next_sin(&mut self) -> f64 {
        self.d += 1;
        if self.d.is_multiple_of(Self::RESYNC) {
            let a = self.d as f64 * self.omega;
            self.cur = Complex64::new(a.cos(), a.sin());
        } else {
            self.cur *= self.step;
        }
        self.cur.im
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if !(0.0..=std::f64::consts::TAU).contains(&omega) {
        return Err(invalid("omega", format!("{omega} not in [0, 2π]")));
    }
    Ok(())
}

/// `𝒥_n(ω)` of the series, exact up to rounding.
pub fn integrated_periodogram(values: &[f64], omega: f64) -> Result<f64> {
    check_omega(omega)?;
    if values.is_empty() {
        return Err(Error::Empty("series"));
    }
    LagSums::new(values).integrated(omega)
}

/// `C(0) ω + 2 Σ_{k=1}^{L} sin(kω)/k C(k)` with `L = min(cutoff, max lag)`.
pub fn periodogram_limit(series: &CovarianceSeries, omega: f64, cutoff: usize) -> Result<f64> {
    check_omega(omega)?;
    if series.values.is_empty() {
        return Err(Error::Empty("covariance series"));
    }
    let last = cutoff.min(series.values.len() - 1);
    let mut acc = CompensatedSum::new();
    acc.add(series.values[0] * omega);
    for k in 1..=last {
        acc.add(2.0 * (k as f64 * omega).sin() / k as f64 * series.values[k]);
    }
    Ok(acc.value())
}

/// Limit `𝒥(ω)` on a grid from a Green–Kubo covariance estimate on an
/// independent ensemble.
pub fn estimated_periodogram_limit(
    system: &SystemDescriptor,
    f: &Observable,
    omega_grid: &[f64],
    spec: &EnsembleSpec,
    max_lag: usize,
) -> Result<Vec<f64>> {
    let spec = EnsembleSpec {
        seed: derive_seed(spec.seed, 0x9E12),
        ..*spec
    };
    let est = estimate_variance(system, f, &spec, max_lag, CutoffRule::default())?;
    omega_grid
        .iter()
        .map(|&w| periodogram_limit(&est.series, w, est.green_kubo.cutoff_lag))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodogramRow {
    pub n: usize,
    pub median: f64,
    pub q99: f64,
    /// `(1 + log n)^{3/2} / √n`.
    pub scale: f64,
    pub sup_devs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodogramSupDev {
    pub rows: Vec<PeriodogramRow>,
    /// `q99` against `scale`.
    pub fit: Option<LinearFit>,
    pub escaped: usize,
}

/// Distribution over orbits of `sup_ω |𝒥_n(ω) - 𝒥(ω)|` for each `n`.
pub fn periodogram_sup_dev(
    system: &SystemDescriptor,
    f: &Observable,
    n_list: &[usize],
    spec: &EnsembleSpec,
    omega_grid: &[f64],
    limit: &[f64],
) -> Result<PeriodogramSupDev> {
    if !f.is_mean_zero() {
        return Err(Error::Uncentered);
    }
    if omega_grid.is_empty() || omega_grid.len() != limit.len() {
        return Err(invalid("omega_grid", "must be nonempty and match the limit values"));
    }
    for &w in omega_grid {
        check_omega(w)?;
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(invalid("n_list", "must be nonempty and positive"));
    }
    let n_max = *n_list.iter().max().expect("nonempty");
    let (values, escaped) = ensemble_values(system, f, &spec.with_n(n_max))?;
    if values.is_empty() {
        return Err(Error::InsufficientData("every orbit escaped".into()));
    }
    let grid = Arc::new(omega_grid.to_vec());
    let per_n: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        values
            .par_iter()
            .map(|v| {
                n_list
                    .iter()
                    .map(|&n| {
                        let lags = LagSums::new(&v[..n]);
                        grid.iter()
                            .zip(limit)
                            .map(|(&w, &lim)| (lags.integrated(w).expect("checked omega") - lim).abs())
                            .fold(0.0, f64::max)
                    })
                    .collect()
            })
            .collect()
    };
    let mut rows = Vec::with_capacity(n_list.len());
    for (c, &n) in n_list.iter().enumerate() {
        let sup_devs: Vec<f64> = per_n.iter().map(|r| r[c]).collect();
        let sorted = sorted_copy(&sup_devs);
        let nf = n as f64;
        rows.push(PeriodogramRow {
            n,
            median: median(&sup_devs),
            q99: sorted_quantile(&sorted, 0.99),
            scale: (1.0 + nf.ln()).powf(1.5) / nf.sqrt(),
            sup_devs,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.scale).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.q99).collect();
    Ok(PeriodogramSupDev {
        fit: linear_fit(&xs, &ys),
        rows,
        escaped,
    })
}
