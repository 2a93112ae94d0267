//! Dispatch from a validated configuration to the estimators, collecting
//! every diagnostic flag into the report.

use std::sync::Arc;

use ergolab_core::concentration::{
    correlation_dev_experiment, empirical_measure_conc, envelope_fit, estimated_periodogram_limit,
    functional_samples, periodogram_sup_dev, reference_measure, shadowing_experiment, variance_bound_check,
    ConcentrationReport, EnvelopeRegime,
};
use ergolab_core::deviation::{
    cgf_experiment, decay_fit, default_z_max, deviation_probs, erdos_renyi_rate, legendre, moderate_probe,
    rate_function, window_count, DecayRegime,
};
use ergolab_core::dynsys::{map_orbits, Trajectory};
use ergolab_core::ergostat::{ensemble_sums, estimate_variance, nonconventional_average, CutoffRule};
use ergolab_core::limitlaw::{
    asclt_distances, berry_esseen_probe, clt_test, compare_stable, resolve_variance, RenormSequence,
    ResolvedVariance, TailSide, VarianceSource,
};
use ergolab_core::numeric::{linspace, mean_and_stderr, LinearFit};
use ergolab_core::observables::CenteringSource;
use ergolab_core::rng::derive_seed;
use ergolab_core::{Calibration, Cdf, EnsembleSpec, Error as CoreError, Functional, Observable, SystemDescriptor, SystemKind};
use thiserror::Error;

use crate::config::{Centering, ExperimentConfig, FunctionalKind, LimitSpec, ObservableConfig, Params};
use crate::report::{ExperimentReport, Provenance, Runtime, Status, Summary, Table, Warning};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const CALIBRATION_TAG: u64 = 0xCA1B;
const REFERENCE_TAG: u64 = 0x4EF0;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl RunError {
    /// Parameter problems surfacing at run time count as configuration
    /// errors; data starvation counts as degenerate statistics.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Core(e) => match e {
                CoreError::InsufficientData(_) | CoreError::Empty(_) => 4,
                CoreError::OutsideDomain { .. } | CoreError::NoDeterministicMap { .. } => 1,
                _ => 2,
            },
        }
    }
}

type RunResult<T> = Result<T, RunError>;

#[derive(Default)]
struct Builder {
    summary: Summary,
    tables: Vec<Table>,
    warnings: Vec<Warning>,
    budget_exceeded: bool,
    degenerate: bool,
    steps: u64,
    escaped: Option<usize>,
}

impl Builder {
    fn warn(&mut self, code: &str, message: impl Into<String>) {
        self.warnings.push(Warning {
            code: code.to_string(),
            message: message.into(),
        });
    }

    fn degenerate(&mut self, code: &str, message: impl Into<String>) {
        self.degenerate = true;
        self.warn(code, message);
    }

    fn escaped(&mut self, count: usize, context: &str) {
        *self.escaped.get_or_insert(0) += count;
        if count > 0 {
            self.warn("escaped_orbits", format!("{count} orbit(s) left the trapping region during {context}"));
        }
    }

    fn ensemble(&mut self, m: usize, length: usize, burn_in: usize) {
        self.steps += (m as u64) * (length as u64 + burn_in as u64);
    }

    fn fit(&mut self, prefix: &str, fit: Option<&LinearFit>) {
        match fit {
            Some(f) => {
                self.summary.put(&format!("{prefix}slope"), f.slope);
                self.summary.put(&format!("{prefix}intercept"), f.intercept);
                self.summary.put(&format!("{prefix}r_squared"), f.r_squared);
            }
            None => self.warn("no_fit", format!("{prefix}slope unavailable: too few usable points")),
        }
    }

    fn variance(&mut self, v: &ResolvedVariance, burn_in: usize, source: VarianceSource) {
        self.summary.put("sigma2", v.sigma2);
        match (source, &v.green_kubo) {
            (VarianceSource::GreenKubo { orbits, length, .. }, Some(gk)) => {
                self.ensemble(orbits, length, burn_in);
                self.summary.put("variance_source", "green_kubo");
                self.summary.put("green_kubo_cutoff_lag", gk.cutoff_lag);
                if gk.hit_cap {
                    self.warn("green_kubo_cap", "no noise run found; the Green-Kubo sum used every lag");
                }
            }
            _ => self.summary.put("variance_source", "known"),
        }
        if v.degenerate {
            self.degenerate("degenerate_variance", format!("variance estimate is degenerate (sigma2 = {})", v.sigma2));
        }
    }
}

/// Runs the configured experiment. The result depends only on the config.
pub fn run(config: &ExperimentConfig) -> RunResult<ExperimentReport> {
    let mut b = Builder::default();
    let system = &config.system;
    b.summary.put("system", system.label());
    if !system.covered_by_theory() {
        b.warn(
            "extrapolation",
            format!("{} is outside the class of systems with proven limit theorems; results are exploratory", system.label()),
        );
    }
    let f = match &config.observable {
        Some(o) => Some(resolve_observable(config, o, &mut b)?),
        None => None,
    };
    let f = f.as_ref();
    let obs = || f.expect("validated config carries an observable");
    let (seed, burn_in) = (config.seed, config.burn_in);
    match &config.params {
        Params::Covariance { m, n, max_lag, cutoff } => covariance(&mut b, system, obs(), EnsembleSpec::new(*m, *n, burn_in, seed), *max_lag, *cutoff)?,
        Params::Clt { m, n_list, variance } => {
            let spec = EnsembleSpec::new(*m, last(n_list), burn_in, seed);
            let res = clt_test(system, obs(), n_list, &spec, *variance)?;
            b.ensemble(*m, last(n_list), burn_in);
            b.variance(&res.variance, burn_in, *variance);
            b.escaped(res.escaped, "the ensemble");
            b.tables.push(clt_table("clt", &res.rows));
        }
        Params::BerryEsseen { m, n_list, variance } => {
            let spec = EnsembleSpec::new(*m, last(n_list), burn_in, seed);
            let res = berry_esseen_probe(system, obs(), n_list, &spec, *variance)?;
            b.ensemble(*m, last(n_list), burn_in);
            b.variance(&res.clt.variance, burn_in, *variance);
            b.escaped(res.clt.escaped, "the ensemble");
            b.fit("", res.fit.as_ref());
            if res.outside_theory {
                b.warn("outside_theory", "the Berry-Esseen rate is not established for this system");
            }
            b.tables.push(clt_table("berry_esseen", &res.clt.rows));
        }
        Params::Stable { m, n, renorm, p, beta, cf_grid } => stable(&mut b, system, obs(), EnsembleSpec::new(*m, *n, burn_in, seed), *renorm, *p, *beta, cf_grid)?,
        Params::Asclt { m, n_list, renorm, variance } => asclt(&mut b, system, obs(), EnsembleSpec::new(*m, last(n_list), burn_in, seed), n_list, *renorm, *variance)?,
        Params::LargeDev { m, n_list, eps } => large_dev(&mut b, system, obs(), EnsembleSpec::new(*m, last(n_list), burn_in, seed), n_list, *eps)?,
        Params::CgfRate { m, n, z_max, z_points, t_list } => cgf_rate(&mut b, system, obs(), EnsembleSpec::new(*m, *n, burn_in, seed), *z_max, *z_points, t_list)?,
        Params::ErdosRenyi { t, rate, k_list, seeds } => erdos_renyi(&mut b, system, obs(), seed, burn_in, *t, *rate, k_list, *seeds)?,
        Params::Moderate { m, n_list, theta, interval, variance } => {
            let spec = EnsembleSpec::new(*m, last(n_list), burn_in, seed);
            let res = moderate_probe(system, obs(), *theta, *interval, n_list, &spec, *variance)?;
            b.ensemble(*m, last(n_list), burn_in);
            b.variance(&res.variance, burn_in, *variance);
            b.escaped(res.escaped, "the ensemble");
            b.summary.put("oracle", res.oracle);
            if !res.zero_counts.is_empty() {
                b.warn("censored", format!("no hits at n = {}; those rows carry no estimate", join(&res.zero_counts)));
            }
            let mut t = Table::new("moderate", &["n", "a_n", "fraction", "estimate", "hits", "m"]);
            for r in &res.rows {
                t.push(vec![r.n.into(), r.a_n.into(), r.fraction.into(), r.estimate.into(), r.hits.into(), r.m.into()]);
            }
            b.tables.push(t);
        }
        Params::ConcentrationEnvelope { m, n_list, functional, reference_steps } => {
            concentration_envelope(&mut b, system, f, EnsembleSpec::new(*m, last(n_list), burn_in, seed), n_list, *functional, *reference_steps)?
        }
        Params::CorrelationDev { m, n_list, k, t } => {
            let spec = EnsembleSpec::new(*m, last(n_list), burn_in, seed);
            let res = correlation_dev_experiment(obs(), system, n_list, *k, *t, &spec)?;
            b.ensemble(*m * n_list.len(), last(n_list) + k, burn_in);
            b.escaped(res.escaped, "the ensemble");
            b.summary.put("k", res.k);
            b.summary.put("t", res.t);
            b.fit("", res.fit.as_ref());
            let mut table = Table::new("correlation_dev", &["n", "scale", "fraction", "hits", "censored", "m"]);
            for r in &res.rows {
                if r.censored {
                    b.warn("censored", format!("no deviations beyond t at n = {}; fraction bounded by 1/m", r.n));
                }
                table.push(vec![r.n.into(), r.scale.into(), r.fraction.into(), r.hits.into(), r.censored.into(), r.m.into()]);
            }
            b.tables.push(table);
        }
        Params::EmpiricalMeasure { m, n_list, reference_steps } => {
            let reference = reference(&mut b, system, seed, *reference_steps)?;
            let spec = EnsembleSpec::new(*m, last(n_list), burn_in, seed);
            let res = empirical_measure_conc(system, n_list, &spec, &reference)?;
            b.ensemble(*m * n_list.len(), last(n_list), burn_in);
            b.escaped(res.escaped, "the ensemble");
            b.fit("", res.slope_fit.as_ref());
            let mut t = Table::new(
                "empirical_measure",
                &["n", "mean_distance", "stderr", "envelope", "c_hat", "exponent", "quality"],
            );
            for r in &res.rows {
                if let Some(note) = &r.envelope_note {
                    b.warn("envelope_skipped", format!("n = {}: {note}", r.n));
                }
                let (label, c, e, q) = match &r.envelope {
                    Some(env) => {
                        envelope_flags(&mut b, r.n, env);
                        (env.regime.label(), env.c_hat, env.exponent, env.quality)
                    }
                    None => ("none", f64::NAN, f64::NAN, f64::NAN),
                };
                t.push(vec![r.n.into(), r.mean_distance.into(), r.stderr.into(), label.into(), c.into(), e.into(), q.into()]);
            }
            b.tables.push(t);
        }
        Params::Shadowing { m, n_list, mass } => {
            let spec = EnsembleSpec::new(*m, last(n_list), burn_in, seed);
            let res = shadowing_experiment(system, *mass, n_list, &spec)?;
            b.ensemble(*m, last(n_list), burn_in);
            b.escaped(res.escaped, "the ensemble");
            b.summary.put("mass", res.mass);
            b.summary.put("reference_orbits", res.reference_orbits);
            b.fit("", res.fit.as_ref());
            let mut t = Table::new("shadowing", &["n", "median", "q90", "q99", "scale"]);
            for r in &res.rows {
                t.push(vec![r.n.into(), r.median.into(), r.q90.into(), r.q99.into(), r.scale.into()]);
            }
            b.tables.push(t);
        }
        Params::Periodogram { m, n_list, omega_grid, limit } => periodogram(&mut b, system, obs(), EnsembleSpec::new(*m, last(n_list), burn_in, seed), n_list, omega_grid, *limit)?,
        Params::Nonconventional { m, n_list, order } => nonconventional(&mut b, system, obs(), EnsembleSpec::new(*m, last(n_list), burn_in, seed), n_list, *order)?,
    }
    if let Some(n) = b.escaped.filter(|_| matches!(system.kind(), SystemKind::Lozi | SystemKind::Henon)) {
        b.summary.put("escaped_orbits", n);
    }
    let status = if b.budget_exceeded {
        Status::BudgetExceeded
    } else if b.degenerate {
        Status::Degenerate
    } else {
        Status::Ok
    };
    Ok(ExperimentReport {
        experiment: config.experiment.name().to_string(),
        status,
        config: config.echo.clone(),
        provenance: Provenance {
            seed: config.seed,
            version: VERSION.to_string(),
            runtime: Runtime {
                map_steps: b.steps,
                threads_independent: true,
            },
        },
        summary: b.summary,
        tables: b.tables,
        warnings: b.warnings,
    })
}

fn last(n_list: &[usize]) -> usize {
    n_list.last().copied().unwrap_or(0)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

fn resolve_observable(config: &ExperimentConfig, o: &ObservableConfig, b: &mut Builder) -> RunResult<Observable> {
    let system = &config.system;
    let f = match o.centering {
        Centering::None => o.base.clone(),
        Centering::At(mean) => o.base.clone().centered_at(mean),
        Centering::Auto => {
            let cal = Calibration {
                steps: o.calibration_steps,
                seed: derive_seed(config.seed, CALIBRATION_TAG),
                burn_in: None,
            };
            o.base.centered_for(system, &cal)?
        }
    };
    let source = match f.centering() {
        None => "none".to_string(),
        Some(CenteringSource::ClosedForm) => "closed_form".to_string(),
        Some(CenteringSource::Asserted) => "asserted".to_string(),
        Some(CenteringSource::Calibration { steps, burn_in, .. }) => {
            b.steps += (*steps + *burn_in) as u64;
            format!("calibration({steps} steps)")
        }
    };
    b.summary.put("observable", f.label());
    b.summary.put("centering", source);
    b.summary.put("offset", f.offset());
    Ok(f)
}

fn clt_table(name: &str, rows: &[ergolab_core::limitlaw::CltRow]) -> Table {
    let mut t = Table::new(name, &["n", "ks_distance", "sigma2_hat", "m"]);
    for r in rows {
        t.push(vec![r.n.into(), r.ks_distance.into(), r.sigma2_hat.into(), r.m.into()]);
    }
    t
}

fn covariance(b: &mut Builder, system: &SystemDescriptor, f: &Observable, spec: EnsembleSpec, max_lag: usize, cutoff: CutoffRule) -> RunResult<()> {
    let est = estimate_variance(system, f, &spec, max_lag, cutoff)?;
    b.ensemble(spec.m, spec.n, spec.burn_in);
    b.escaped(est.escaped, "the ensemble");
    let gk = est.green_kubo;
    b.summary.put("sigma2", gk.sigma2);
    b.summary.put("raw_sum", gk.raw);
    b.summary.put("cutoff_lag", gk.cutoff_lag);
    b.summary.put("products_per_lag", est.series.n_used);
    b.summary.put("orbits", est.series.orbits);
    if gk.hit_cap {
        b.warn("green_kubo_cap", "no noise run found; the Green-Kubo sum used every lag");
    }
    if gk.degenerate {
        b.degenerate("degenerate_variance", format!("Green-Kubo sum {} clamped to {}", gk.raw, gk.sigma2));
    }
    let mut t = Table::new("covariance", &["lag", "covariance", "stderr"]);
    for (lag, (c, se)) in est.series.values.iter().zip(&est.series.stderr).enumerate() {
        t.push(vec![lag.into(), (*c).into(), (*se).into()]);
    }
    b.tables.push(t);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn stable(
    b: &mut Builder,
    system: &SystemDescriptor,
    f: &Observable,
    spec: EnsembleSpec,
    renorm: RenormSequence,
    p: f64,
    beta: Option<f64>,
    cf_grid: &[f64],
) -> RunResult<()> {
    let n = spec.n;
    let sums = ensemble_sums(system, f, &spec, &[n])?;
    b.ensemble(spec.m, n, spec.burn_in);
    b.escaped(sums.escaped, "the ensemble");
    let scale = renorm.value(n)?;
    let samples: Vec<f64> = sums.sums[0].iter().map(|s| s / scale).collect();
    // skewness follows the sign of f at the neutral fixed point
    let beta = beta.unwrap_or_else(|| {
        let v = f.value_at_zero();
        if v == 0.0 {
            0.0
        } else {
            v.signum()
        }
    });
    let cmp = compare_stable(&samples, p, beta, cf_grid)?;
    let tail = &cmp.tail;
    b.summary.put("renorm", renorm.label());
    b.summary.put("samples", samples.len());
    b.summary.put("p", cmp.fitted.p());
    b.summary.put("beta", cmp.fitted.beta());
    b.summary.put("c_hat", cmp.fitted.c());
    b.summary.put("cf_distance", cmp.cf_distance);
    b.summary.put("p_hat", tail.p_hat);
    b.summary.put(
        "tail_side",
        match tail.side {
            TailSide::Upper => "upper",
            TailSide::Lower => "lower",
        },
    );
    b.summary.put("tail_r_squared", tail.r_squared);
    b.summary.put("tail_curvature", tail.curvature);
    b.summary.put("tail_points", tail.tail_points);
    b.summary.put("tail_threshold_lo", tail.thresholds.0);
    b.summary.put("tail_threshold_hi", tail.thresholds.1);
    if tail.unreliable {
        b.warn("tail_unreliable", format!("only {} samples in the tail window", tail.tail_points));
    }
    if tail.poor_fit {
        b.warn("tail_poor_fit", format!("log-log tail is curved (curvature {:.3})", tail.curvature));
    }
    if tail.steep {
        b.warn("tail_steep", format!("tail exponent {:.3} suggests light tails", tail.p_hat));
    }
    let mut t = Table::new("stable_cf", &["t", "empirical_re", "empirical_im", "fitted_re", "fitted_im"]);
    for &s in cf_grid {
        let emp = ergolab_core::limitlaw::empirical_cf(&samples, s)?;
        let fit = ergolab_core::limitlaw::stable_cf(s, &cmp.fitted);
        t.push(vec![s.into(), emp.re.into(), emp.im.into(), fit.re.into(), fit.im.into()]);
    }
    b.tables.push(t);
    Ok(())
}

/// Values of `f` along the next `n` points, `None` if the orbit escapes.
fn orbit_values(f: &Observable, traj: &mut Trajectory, n: usize, planar: bool) -> Option<Vec<f64>> {
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        let x = if planar { traj.next()?.coord(f.coord()) } else { traj.next_scalar() };
        v.push(f.value(x));
    }
    Some(v)
}

fn asclt(
    b: &mut Builder,
    system: &SystemDescriptor,
    f: &Observable,
    spec: EnsembleSpec,
    n_list: &[usize],
    renorm: RenormSequence,
    variance: VarianceSource,
) -> RunResult<()> {
    let v = resolve_variance(system, f, variance, spec.seed, spec.burn_in)?;
    b.variance(&v, spec.burn_in, variance);
    let target = Cdf::gaussian(v.sigma2);
    let planar = system.dimension() == 2;
    let per_orbit = map_orbits(system, &spec, |_, traj| {
        orbit_values(f, traj, spec.n, planar).map(|values| asclt_distances(&values, n_list, renorm, &target))
    });
    b.ensemble(spec.m, spec.n, spec.burn_in);
    let mut t = Table::new("asclt", &["orbit", "n", "distance"]);
    let (mut escaped, mut improved, mut complete) = (0usize, 0usize, 0usize);
    for (i, o) in per_orbit.into_iter().enumerate() {
        let Some(res) = o.flatten() else {
            escaped += 1;
            continue;
        };
        let dists = res?;
        complete += 1;
        if let (Some(first), Some(end)) = (dists.first(), dists.last()) {
            if dists.len() > 1 && end.1 < first.1 {
                improved += 1;
            }
        }
        for (n, d) in dists {
            t.push(vec![i.into(), n.into(), d.into()]);
        }
    }
    b.escaped(escaped, "the ensemble");
    if complete == 0 {
        return Err(CoreError::InsufficientData("every orbit escaped".into()).into());
    }
    b.summary.put("renorm", renorm.label());
    b.summary.put("orbits", complete);
    b.summary.put("orbits_improved", improved);
    b.tables.push(t);
    Ok(())
}

fn large_dev(b: &mut Builder, system: &SystemDescriptor, f: &Observable, spec: EnsembleSpec, n_list: &[usize], eps: f64) -> RunResult<()> {
    let (probs, escaped) = deviation_probs(system, f, &spec, n_list, eps)?;
    b.ensemble(spec.m, spec.n, spec.burn_in);
    b.escaped(escaped, "the ensemble");
    let zero: Vec<usize> = probs.iter().filter(|p| p.hits == 0).map(|p| p.n).collect();
    if !zero.is_empty() {
        b.warn("censored", format!("no deviations at n = {}; those points are left out of the fit", join(&zero)));
    }
    let points: Vec<(usize, f64)> = probs.iter().map(|p| (p.n, p.fraction)).collect();
    match decay_fit(&points) {
        Ok(fit) => {
            b.summary.put("regime", fit.regime.label());
            b.summary.put("slope", fit.slope);
            b.summary.put("quality", fit.quality);
            b.summary.put("points_used", fit.points_used);
            if let Some(e) = &fit.exponential {
                b.summary.put("exponential_r_squared", e.r_squared);
            }
            if let Some(p) = &fit.polynomial {
                b.summary.put("polynomial_r_squared", p.r_squared);
            }
            match fit.regime {
                DecayRegime::Ambiguous => b.warn("decay_ambiguous", "exponential and polynomial fits are within the margin"),
                DecayRegime::Undetectable => b.degenerate("decay_undetectable", "every deviation fraction is zero"),
                _ => {}
            }
        }
        Err(CoreError::InsufficientData(why)) => b.degenerate("decay_undetectable", why),
        Err(e) => return Err(e.into()),
    }
    let mut t = Table::new("large_dev", &["n", "eps", "fraction", "stderr", "hits", "m"]);
    for p in &probs {
        t.push(vec![p.n.into(), p.eps.into(), p.fraction.into(), p.stderr.into(), p.hits.into(), p.m.into()]);
    }
    b.tables.push(t);
    Ok(())
}

fn cgf_rate(
    b: &mut Builder,
    system: &SystemDescriptor,
    f: &Observable,
    spec: EnsembleSpec,
    z_max: Option<f64>,
    z_points: usize,
    t_list: &[f64],
) -> RunResult<()> {
    let sup = f.sup_abs(&system.domain());
    let z_max = z_max.unwrap_or_else(|| default_z_max(spec.n, sup).min(1.0));
    let grid = linspace(-z_max, z_max, z_points);
    let (cgf, escaped) = cgf_experiment(system, f, &spec, spec.n, &grid)?;
    b.ensemble(spec.m, spec.n, spec.burn_in);
    b.escaped(escaped, "the ensemble");
    b.summary.put("n", cgf.n_used);
    b.summary.put("m", cgf.m_used);
    b.summary.put("z_max", z_max);
    b.summary.put("convexity_violation", cgf.convexity_violation);
    if !cgf.low_ess.is_empty() {
        b.warn("low_ess", format!("effective sample size below threshold at z = {}", join(&cgf.low_ess)));
    }
    if cgf.convexity_violation > 0.0 {
        b.warn("cgf_not_convex", format!("estimated CGF violates convexity by {}", cgf.convexity_violation));
    }
    let mut t = Table::new("cgf", &["z", "psi", "stderr", "ess"]);
    for i in 0..cgf.z_grid.len() {
        t.push(vec![cgf.z_grid[i].into(), cgf.psi[i].into(), cgf.stderr[i].into(), cgf.ess[i].into()]);
    }
    b.tables.push(t);
    let rate = rate_function(&cgf, t_list);
    let mut r = Table::new("rate", &["t", "rate", "z_star", "at_boundary"]);
    for (i, &s) in rate.t_grid.iter().enumerate() {
        let lv = legendre(&cgf, s);
        if rate.boundary[i] {
            b.warn("legendre_boundary", format!("supremum at t = {s} sits on the z-grid boundary; the rate is a lower bound"));
        }
        r.push(vec![s.into(), rate.values[i].into(), lv.z_star.into(), rate.boundary[i].into()]);
    }
    b.tables.push(r);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn erdos_renyi(
    b: &mut Builder,
    system: &SystemDescriptor,
    f: &Observable,
    seed: u64,
    burn_in: usize,
    t: f64,
    rate: f64,
    k_list: &[usize],
    seeds: usize,
) -> RunResult<()> {
    let mut table = Table::new("erdos_renyi", &["seed_index", "seed", "k", "windows", "m_k", "ratio", "abs_error"]);
    let mut worst = 0.0f64;
    let k_max = k_list.iter().copied().max().unwrap_or(0);
    let mut reported = false;
    for i in 0..seeds {
        let s = derive_seed(seed, i as u64);
        let res = erdos_renyi_rate(system, f, t, rate, k_list, s, burn_in)?;
        let longest = res.rows.iter().map(|r| r.windows as usize + r.k).max().unwrap_or(0);
        b.steps += (longest + burn_in) as u64;
        if res.escaped {
            b.warn("escaped_orbits", format!("orbit for seed index {i} left the trapping region"));
        }
        if !reported {
            reported = true;
            if !res.over_budget.is_empty() {
                b.budget_exceeded = true;
                b.warn(
                    "budget_exceeded",
                    format!("window counts for k = {} exceed the budget; those rows are skipped", join(&res.over_budget)),
                );
            }
            if !res.too_short.is_empty() {
                b.warn("window_too_short", format!("fewer than one full window for k = {}", join(&res.too_short)));
            }
        }
        for r in &res.rows {
            let err = (r.ratio - t).abs();
            if r.k == k_max {
                worst = worst.max(err);
            }
            table.push(vec![i.into(), s.into(), r.k.into(), r.windows.into(), r.m_k.into(), r.ratio.into(), err.into()]);
        }
    }
    b.summary.put("t", t);
    b.summary.put("rate", rate);
    b.summary.put("seeds", seeds);
    b.summary.put("largest_k", k_max);
    b.summary.put("largest_k_windows", window_count(k_max, rate));
    b.summary.put("largest_k_worst_abs_error", worst);
    b.tables.push(table);
    Ok(())
}

fn envelope_flags(b: &mut Builder, n: usize, env: &ConcentrationReport) {
    if env.zero_variance {
        b.degenerate("zero_variance", format!("n = {n}: the functional has no spread"));
    } else if env.regime == EnvelopeRegime::Inconclusive {
        b.warn("envelope_inconclusive", format!("n = {n}: neither envelope fits the tail"));
    }
    if !env.censored.is_empty() {
        b.warn(
            "censored",
            format!("n = {n}: {} tail level(s) with no exceedances enter at 1/m", env.censored.len()),
        );
    }
}

fn reference(b: &mut Builder, system: &SystemDescriptor, seed: u64, steps: usize) -> RunResult<Arc<Cdf>> {
    let exact = matches!(system.kind(), SystemKind::Doubling | SystemKind::IidUniform | SystemKind::IidRademacher);
    let cdf = reference_measure(system, derive_seed(seed, REFERENCE_TAG), steps)?;
    if exact {
        b.summary.put("reference", "closed_form");
    } else {
        b.steps += (steps + system.default_burn_in()) as u64;
        b.summary.put("reference", format!("calibration({steps} steps)"));
    }
    Ok(Arc::new(cdf))
}

fn concentration_envelope(
    b: &mut Builder,
    system: &SystemDescriptor,
    f: Option<&Observable>,
    spec: EnsembleSpec,
    n_list: &[usize],
    kind: FunctionalKind,
    reference_steps: usize,
) -> RunResult<()> {
    let reference = match kind {
        FunctionalKind::Kantorovich => Some(reference(b, system, spec.seed, reference_steps)?),
        _ => None,
    };
    let obs = || f.cloned().expect("validated config carries an observable");
    let mut family = Vec::with_capacity(n_list.len());
    for &n in n_list {
        family.push(match kind {
            FunctionalKind::ErgodicSum => Functional::ErgodicSum { f: obs(), arity: n },
            FunctionalKind::ErgodicAverage => Functional::ErgodicAverage { f: obs(), arity: n },
            FunctionalKind::Kantorovich => Functional::Kantorovich {
                arity: n,
                coord: 0,
                reference: reference.clone().expect("reference built above"),
            },
            FunctionalKind::Correlation { k } => Functional::correlation(obs(), n, k, &system.domain())?,
        });
    }
    b.summary.put("functional", kind.name());
    let mut env_table = Table::new("envelope", &["n", "regime", "c_hat", "exponent", "quality", "lip_sum_sq", "center", "m"]);
    let mut tail_table = Table::new("tail", &["n", "t", "tail", "censored"]);
    for (k, &n) in family.iter().zip(n_list) {
        let d = functional_samples(k, system, &spec)?;
        b.ensemble(spec.m, k.arity(), spec.burn_in);
        b.escaped(d.escaped, &format!("the n = {n} ensemble"));
        let env = envelope_fit(&d, None)?;
        envelope_flags(b, n, &env);
        env_table.push(vec![
            n.into(),
            env.regime.label().into(),
            env.c_hat.into(),
            env.exponent.into(),
            env.quality.into(),
            d.lip_sum_sq.into(),
            d.center.into(),
            d.len().into(),
        ]);
        for (t, tail) in env.t_grid.iter().zip(&env.tail) {
            tail_table.push(vec![n.into(), (*t).into(), (*tail).into(), env.censored.contains(t).into()]);
        }
    }
    let bound = variance_bound_check(&family, system, &spec)?;
    for k in &family {
        b.ensemble(spec.m, k.arity(), spec.burn_in);
    }
    b.summary.put("variance_ratio_spread", bound.spread);
    let mut vb = Table::new("variance_bound", &["n", "variance", "lip_sum_sq", "ratio", "m"]);
    for r in &bound.rows {
        vb.push(vec![r.n.into(), r.variance.into(), r.lip_sum_sq.into(), r.ratio.into(), r.m.into()]);
    }
    b.tables.push(env_table);
    b.tables.push(tail_table);
    b.tables.push(vb);
    Ok(())
}

fn periodogram(
    b: &mut Builder,
    system: &SystemDescriptor,
    f: &Observable,
    spec: EnsembleSpec,
    n_list: &[usize],
    omega_grid: &[f64],
    limit: LimitSpec,
) -> RunResult<()> {
    let limit_spec = EnsembleSpec::new(limit.orbits, limit.length, spec.burn_in, spec.seed);
    let lim = estimated_periodogram_limit(system, f, omega_grid, &limit_spec, limit.max_lag)?;
    b.ensemble(limit.orbits, limit.length, spec.burn_in);
    let res = periodogram_sup_dev(system, f, n_list, &spec, omega_grid, &lim)?;
    b.ensemble(spec.m, spec.n, spec.burn_in);
    b.escaped(res.escaped, "the ensemble");
    b.summary.put("omega_points", omega_grid.len());
    b.fit("", res.fit.as_ref());
    let mut t = Table::new("periodogram", &["n", "median", "q99", "scale"]);
    for r in &res.rows {
        t.push(vec![r.n.into(), r.median.into(), r.q99.into(), r.scale.into()]);
    }
    b.tables.push(t);
    let mut l = Table::new("limit", &["omega", "limit"]);
    for (w, v) in omega_grid.iter().zip(&lim) {
        l.push(vec![(*w).into(), (*v).into()]);
    }
    b.tables.push(l);
    Ok(())
}

fn nonconventional(b: &mut Builder, system: &SystemDescriptor, f: &Observable, spec: EnsembleSpec, n_list: &[usize], order: usize) -> RunResult<()> {
    let n_max = last(n_list);
    let length = order * (n_max - 1) + 1;
    let fs = vec![f.clone(); order];
    let per_orbit = map_orbits(system, &spec, |_, traj| -> Option<ergolab_core::Result<Vec<f64>>> {
        let points: Vec<_> = traj.take(length).collect();
        if points.len() < length {
            return None;
        }
        Some(n_list.iter().map(|&n| nonconventional_average(&fs, &points, n)).collect())
    });
    b.ensemble(spec.m, length, spec.burn_in);
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_list.len()];
    let mut escaped = 0;
    for o in per_orbit {
        match o.flatten() {
            Some(r) => {
                for (col, v) in columns.iter_mut().zip(r?) {
                    col.push(v);
                }
            }
            None => escaped += 1,
        }
    }
    b.escaped(escaped, "the ensemble");
    if columns[0].is_empty() {
        return Err(CoreError::InsufficientData("every orbit escaped".into()).into());
    }
    // mixing limit: product of the means
    let mean = if f.is_mean_zero() { Some(0.0) } else { f.known_mean(system).map(|m| m - f.offset()) };
    b.summary.put("order", order);
    match mean {
        Some(mu) => b.summary.put("limit", mu.powi(order as i32)),
        None => b.summary.put("limit", "unknown"),
    }
    let mut t = Table::new("nonconventional", &["n", "mean", "stderr", "m"]);
    for (&n, col) in n_list.iter().zip(&columns) {
        let (mu, se) = mean_and_stderr(col);
        t.push(vec![n.into(), mu.into(), se.into(), col.len().into()]);
    }
    b.tables.push(t);
    Ok(())
}
