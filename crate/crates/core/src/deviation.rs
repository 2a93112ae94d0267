//! Large and moderate deviations: exceedance probabilities, decay-regime
//! classification, cumulant generating functions, Legendre transforms and
//! the Erdős–Rényi law.

use std::collections::VecDeque;

use crate::dynsys::{EnsembleSpec, SystemDescriptor, Trajectory};
use crate::ergostat::ensemble_sums;
use crate::error::{invalid, Error, Result};
use crate::limitlaw::{resolve_variance, ResolvedVariance, VarianceSource};
use crate::numeric::{linear_fit, LinearFit};
use crate::observables::Observable;

/// Fraction of orbits with `|S_n f / n| > ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationProb {
    pub n: usize,
    pub eps: f64,
    pub fraction: f64,
    /// Binomial standard error `sqrt(p(1-p)/m)`.
    pub stderr: f64,
    pub hits: usize,
    pub m: usize,
}

/// Exceedance fraction from precomputed sums `S_n f`.
pub fn deviation_prob(sums: &[f64], n: usize, eps: f64) -> Result<DeviationProb> {
    if !(eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    if n == 0 {
        return Err(invalid("n", "need n >= 1"));
    }
    if sums.is_empty() {
        return Err(Error::Empty("sums"));
    }
    let m = sums.len();
    let hits = sums.iter().filter(|s| (**s / n as f64).abs() > eps).count();
    let p = hits as f64 / m as f64;
    Ok(DeviationProb {
        n,
        eps,
        fraction: p,
        stderr: (p * (1.0 - p) / m as f64).sqrt(),
        hits,
        m,
    })
}

/// Exceedance fractions at every `n` of `n_list` along one ensemble.
pub fn deviation_probs(system: &SystemDescriptor, f: &Observable, spec: &EnsembleSpec, n_list: &[usize], eps: f64) -> Result<(Vec<DeviationProb>, usize)> {
    if !f.is_mean_zero() {
        return Err(Error::Uncentered);
    }
    let sums = ensemble_sums(system, f, spec, n_list)?;
    let probs = n_list
        .iter()
        .zip(&sums.sums)
        .map(|(&n, s)| deviation_prob(s, n, eps))
        .collect::<Result<_>>()?;
    Ok((probs, sums.escaped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayRegime {
    Exponential,
    Polynomial,
    /// The two fits are within the classification margin.
    Ambiguous,
    /// Every fraction is zero: a larger ensemble is needed.
    Undetectable,
}

impl DecayRegime {
    pub fn label(&self) -> &'static str {
        match self {
            DecayRegime::Exponential => "exponential",
            DecayRegime::Polynomial => "polynomial",
            DecayRegime::Ambiguous => "ambiguous",
            DecayRegime::Undetectable => "undetectable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub regime: DecayRegime,
    /// Slope of the better fit: per unit `n` (exponential) or per unit
    /// `log n` (polynomial). NaN when undetectable.
    pub slope: f64,
    /// Adjusted R² of the better fit.
    pub quality: f64,
    pub exponential: Option<LinearFit>,
    pub polynomial: Option<LinearFit>,
    pub points_used: usize,
}

/// Regimes whose adjusted R² differ by less than this are ambiguous.
pub const DECAY_MARGIN: f64 = 0.05;

fn adjusted_r2(fit: &LinearFit) -> f64 {
    let k = fit.points as f64;
    if k <= 2.0 {
        return fit.r_squared;
    }
    1.0 - (1.0 - fit.r_squared) * (k - 1.0) / (k - 2.0)
}

/// Compares `log P` against `n` and against `log n`; zero fractions are
/// dropped.
pub fn decay_fit(probs: &[(usize, f64)]) -> Result<DecayFit> {
    let usable: Vec<(f64, f64)> = probs
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|&(n, p)| (n as f64, p.ln()))
        .collect();
    if usable.is_empty() && !probs.is_empty() {
        return Ok(DecayFit {
            regime: DecayRegime::Undetectable,
            slope: f64::NAN,
            quality: f64::NAN,
            exponential: None,
            polynomial: None,
            points_used: 0,
        });
    }
    if usable.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs 4 nonzero fractions, got {}",
            usable.len()
        )));
    }
    let n: Vec<f64> = usable.iter().map(|u| u.0).collect();
    let logn: Vec<f64> = n.iter().map(|x| x.ln()).collect();
    let logp: Vec<f64> = usable.iter().map(|u| u.1).collect();
    let exp_fit = linear_fit(&n, &logp).ok_or_else(|| Error::InsufficientData("repeated n values".into()))?;
    let poly_fit = linear_fit(&logn, &logp).ok_or_else(|| Error::InsufficientData("repeated n values".into()))?;
    let (qe, qp) = (adjusted_r2(&exp_fit), adjusted_r2(&poly_fit));
    let (better, quality) = if qp >= qe { (poly_fit, qp) } else { (exp_fit, qe) };
    let regime = if (qe - qp).abs() < DECAY_MARGIN {
        DecayRegime::Ambiguous
    } else if qp > qe {
        DecayRegime::Polynomial
    } else {
        DecayRegime::Exponential
    };
    Ok(DecayFit {
        regime,
        slope: better.slope,
        quality,
        exponential: Some(exp_fit),
        polynomial: Some(poly_fit),
        points_used: usable.len(),
    })
}

/// `z · n · sup|f|` may not exceed this.
pub const OVERFLOW_GUARD: f64 = 500.0;
/// Effective sample sizes below this mark the grid point as unreliable.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CgfEstimate {
    /// Sorted and always containing 0.
    pub z_grid: Vec<f64>,
    pub psi: Vec<f64>,
    /// Delta-method standard error of each `psi`.
    pub stderr: Vec<f64>,
    /// Kish effective sample size of the exponential weights.
    pub ess: Vec<f64>,
    pub n_used: usize,
    pub m_used: usize,
    /// Largest midpoint-convexity violation beyond three standard errors.
    pub convexity_violation: f64,
    /// Grid points whose effective sample size collapsed.
    pub low_ess: Vec<f64>,
}

/// Largest `z` admissible under the overflow guard.
pub fn default_z_max(n: usize, sup_abs: f64) -> f64 {
    OVERFLOW_GUARD / (n as f64 * sup_abs.max(f64::MIN_POSITIVE))
}

/// `Ψ̂(z) = (1/n) log mean(exp(z S_n f))` by max-shifted log-sum-exp.
pub fn cgf_estimate(sums: &[f64], n: usize, z_grid: &[f64], sup_abs: f64) -> Result<CgfEstimate> {
    if sums.is_empty() {
        return Err(Error::Empty("sums"));
    }
    if n == 0 {
        return Err(invalid("n", "need n >= 1"));
    }
    if z_grid.iter().any(|z| !z.is_finite()) {
        return Err(invalid("z_grid", "values must be finite"));
    }
    let mut grid: Vec<f64> = z_grid.to_vec();
    if !grid.contains(&0.0) {
        grid.push(0.0);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    for &z in &grid {
        let load = z.abs() * n as f64 * sup_abs;
        if load > OVERFLOW_GUARD {
            return Err(Error::OverflowGuard(z, load));
        }
    }
    let m = sums.len() as f64;
    let mut psi = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    let mut ess = Vec::with_capacity(grid.len());
    let mut low_ess = Vec::new();
    for &z in &grid {
        if z == 0.0 {
            psi.push(0.0);
            stderr.push(0.0);
            ess.push(m);
            continue;
        }
        let shift = sums.iter().map(|s| z * s).fold(f64::NEG_INFINITY, f64::max);
        let (mut w1, mut w2) = (0.0, 0.0);
        for s in sums {
            let w = (z * s - shift).exp();
            w1 += w;
            w2 += w * w;
        }
        let mean_w = w1 / m;
        psi.push((shift + mean_w.ln()) / n as f64);
        // relative standard error of the mean weight, propagated through log
        let var_w = (w2 / m - mean_w * mean_w).max(0.0) * m / (m - 1.0).max(1.0);
        stderr.push((var_w / m).sqrt() / mean_w / n as f64);
        let e = w1 * w1 / w2;
        if e < MIN_EFFECTIVE_SAMPLES {
            low_ess.push(z);
        }
        ess.push(e);
    }
    let mut convexity_violation: f64 = 0.0;
    for i in 1..grid.len().saturating_sub(1) {
        let (za, zb, zc) = (grid[i - 1], grid[i], grid[i + 1]);
        let lam = (zc - zb) / (zc - za);
        let chord = lam * psi[i - 1] + (1.0 - lam) * psi[i + 1];
        let tol = 3.0 * stderr[i - 1].max(stderr[i]).max(stderr[i + 1]);
        convexity_violation = convexity_violation.max(psi[i] - chord - tol);
    }
    Ok(CgfEstimate {
        z_grid: grid,
        psi,
        stderr,
        ess,
        n_used: n,
        m_used: sums.len(),
        convexity_violation: convexity_violation.max(0.0),
        low_ess,
    })
}

/// CGF of `f` from a fresh ensemble with orbit length `n`.
pub fn cgf_experiment(system: &SystemDescriptor, f: &Observable, spec: &EnsembleSpec, n: usize, z_grid: &[f64]) -> Result<(CgfEstimate, usize)> {
    let sums = ensemble_sums(system, f, spec, &[n])?;
    let est = cgf_estimate(&sums.sums[0], n, z_grid, f.sup_abs(&system.domain()))?;
    Ok((est, sums.escaped))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendreValue {
    pub value: f64,
    pub z_star: f64,
    /// The supremum sits on the edge of the grid, so the true value may be
    /// larger.
    pub at_boundary: bool,
}

/// `sup_z (t z - Ψ̂(z))` over the grid.
pub fn legendre(cgf: &CgfEstimate, t: f64) -> LegendreValue {
    let mut best = LegendreValue {
        value: f64::NEG_INFINITY,
        z_star: f64::NAN,
        at_boundary: false,
    };
    let last = cgf.z_grid.len().saturating_sub(1);
    for (i, (&z, &p)) in cgf.z_grid.iter().zip(&cgf.psi).enumerate() {
        let v = t * z - p;
        if v > best.value {
            best = LegendreValue {
                value: v,
                z_star: z,
                at_boundary: last > 0 && (i == 0 || i == last),
            };
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateSource {
    LegendreOfCgf,
    ErdosRenyi,
    AnalyticOracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFunctionEstimate {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub boundary: Vec<bool>,
    pub source: RateSource,
}

pub fn rate_function(cgf: &CgfEstimate, t_grid: &[f64]) -> RateFunctionEstimate {
    let vals: Vec<LegendreValue> = t_grid.iter().map(|&t| legendre(cgf, t)).collect();
    RateFunctionEstimate {
        t_grid: t_grid.to_vec(),
        values: vals.iter().map(|v| v.value).collect(),
        boundary: vals.iter().map(|v| v.at_boundary).collect(),
        source: RateSource::LegendreOfCgf,
    }
}

/// Rate function of a fair ±1 coin, `((1+t)/2) ln(1+t) + ((1-t)/2) ln(1-t)`.
pub fn rademacher_rate(t: f64) -> f64 {
    if t.abs() > 1.0 {
        return f64::INFINITY;
    }
    let h = |u: f64| if u == 0.0 { 0.0 } else { u * u.ln() };
    0.5 * (h(1.0 + t) + h(1.0 - t))
}

/// Largest sum over windows of width `k` starting at `0..=len-k`.
///
/// Running sums are resynchronized every `k` steps so rounding does not
/// accumulate along long orbits.
pub fn erdos_renyi_stat(values: &[f64], k: usize) -> Result<f64> {
    let n = values.len();
    if k == 0 {
        return Err(invalid("k", "window width must be positive"));
    }
    if k > n {
        return Err(Error::WindowTooLong { k, len: n });
    }
    let mut s: f64 = values[..k].iter().sum();
    let mut best = s;
    for j in 1..=n - k {
        if j % k == 0 {
            s = values[j..j + k].iter().sum();
        } else {
            s += values[j + k - 1] - values[j - 1];
        }
        best = best.max(s);
    }
    Ok(best)
}

/// Streaming windowed maximum for one width.
struct WindowMax {
    k: usize,
    window: VecDeque<f64>,
    sum: f64,
    since_sync: usize,
    best: f64,
}

impl WindowMax {
    fn new(k: usize) -> Self {
        WindowMax {
            k,
            window: VecDeque::with_capacity(k + 1),
            sum: 0.0,
            since_sync: 0,
            best: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, v: f64) {
        self.window.push_back(v);
        self.sum += v;
        if self.window.len() > self.k {
            let old = self.window.pop_front().expect("nonempty");
            self.sum -= old;
            self.since_sync += 1;
            if self.since_sync == self.k {
                self.sum = self.window.iter().sum();
                self.since_sync = 0;
            }
        }
        if self.window.len() == self.k {
            self.best = self.best.max(self.sum);
        }
    }
}

/// Cap on the number of windows examined for any `k`.
pub const WINDOW_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErdosRenyiRow {
    pub k: usize,
    pub windows: u64,
    pub m_k: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErdosRenyiResult {
    pub t: f64,
    pub rows: Vec<ErdosRenyiRow>,
    /// Widths dropped because `exp(k I)` exceeded the window budget.
    pub over_budget: Vec<usize>,
    /// Widths dropped because fewer than one window fits.
    pub too_short: Vec<usize>,
    pub escaped: bool,
}

/// `⌊exp(k I)⌋`, saturating.
pub fn window_count(k: usize, rate: f64) -> u64 {
    let e = (k as f64 * rate).exp().floor();
    if e >= u64::MAX as f64 {
        u64::MAX
    } else {
        e as u64
    }
}

/// `M_k / k` along orbit 0 of `seed` with `⌊exp(k I)⌋` points per width.
pub fn erdos_renyi_rate(
    system: &SystemDescriptor,
    f: &Observable,
    t: f64,
    rate: f64,
    k_list: &[usize],
    seed: u64,
    burn_in: usize,
) -> Result<ErdosRenyiResult> {
    if !(rate > 0.0) {
        return Err(invalid("rate", "I(t) must be positive"));
    }
    if k_list.is_empty() {
        return Err(Error::Empty("k_list"));
    }
    if k_list.contains(&0) {
        return Err(invalid("k_list", "window widths must be positive"));
    }
    let mut over_budget = Vec::new();
    let mut too_short = Vec::new();
    let mut widths = Vec::new();
    for &k in k_list {
        let n = window_count(k, rate);
        if n > WINDOW_BUDGET {
            over_budget.push(k);
        } else if n < k as u64 {
            too_short.push(k);
        } else {
            widths.push((k, n));
        }
    }
    let total = widths.iter().map(|w| w.1).max().unwrap_or(0);
    let mut trackers: Vec<(WindowMax, u64)> = widths.iter().map(|&(k, n)| (WindowMax::new(k), n)).collect();
    let mut traj = Trajectory::sampled(system, seed, 0);
    traj.burn(burn_in);
    let planar = system.dimension() == 2;
    let mut escaped = traj.escaped_at().is_some();
    if !escaped {
        for i in 0..total {
            let x = if planar {
                match traj.next() {
                    Some(p) => p.coord(f.coord()),
                    None => {
                        escaped = true;
                        break;
                    }
                }
            } else {
                traj.next_scalar()
            };
            let v = f.value(x);
            if v.is_nan() {
                return Err(Error::OffGrid(x));
            }
            for (w, n) in trackers.iter_mut() {
                if i < *n {
                    w.push(v);
                }
            }
        }
    }
    let rows = trackers
        .iter()
        .zip(&widths)
        .filter(|((w, _), _)| w.best.is_finite())
        .map(|((w, _), &(k, n))| ErdosRenyiRow {
            k,
            windows: n - k as u64 + 1,
            m_k: w.best,
            ratio: w.best / k as f64,
        })
        .collect();
    Ok(ErdosRenyiResult {
        t,
        rows,
        over_budget,
        too_short,
        escaped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModerateRow {
    pub n: usize,
    pub a_n: f64,
    pub fraction: f64,
    /// `-(n / a_n²) log P`, infinite when no orbit hit the interval.
    pub estimate: f64,
    pub hits: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModerateResult {
    pub rows: Vec<ModerateRow>,
    /// `inf_{t in [a,b]} t² / (2σ̂²)`.
    pub oracle: f64,
    pub variance: ResolvedVariance,
    pub zero_counts: Vec<usize>,
    pub escaped: usize,
}

/// Moderate deviations at scale `a_n = n^θ` for the interval `[a, b]`.
#[allow(clippy::too_many_arguments)]
pub fn moderate_probe(
    system: &SystemDescriptor,
    f: &Observable,
    theta: f64,
    interval: (f64, f64),
    n_list: &[usize],
    spec: &EnsembleSpec,
    variance: VarianceSource,
) -> Result<ModerateResult> {
    if !(theta > 0.5 && theta < 1.0) {
        return Err(invalid("theta", format!("{theta} not in (1/2, 1)")));
    }
    let (a, b) = interval;
    if !(a < b) || (a <= 0.0 && b >= 0.0) {
        return Err(invalid("interval", "must be nonempty and exclude 0"));
    }
    if !f.is_mean_zero() {
        return Err(Error::Uncentered);
    }
    let resolved = resolve_variance(system, f, variance, spec.seed, spec.burn_in)?;
    let closest = if a > 0.0 { a } else { b.abs() };
    let oracle = if resolved.degenerate {
        f64::INFINITY
    } else {
        closest * closest / (2.0 * resolved.sigma2)
    };
    let sums = ensemble_sums(system, f, spec, n_list)?;
    let mut rows = Vec::with_capacity(n_list.len());
    let mut zero_counts = Vec::new();
    for (&n, s) in n_list.iter().zip(&sums.sums) {
        let a_n = (n as f64).powf(theta);
        let hits = s.iter().filter(|x| (a..=b).contains(&(**x / a_n))).count();
        let fraction = hits as f64 / s.len().max(1) as f64;
        if hits == 0 {
            zero_counts.push(n);
        }
        rows.push(ModerateRow {
            n,
            a_n,
            fraction,
            estimate: -(n as f64 / (a_n * a_n)) * fraction.ln(),
            hits,
            m: s.len(),
        });
    }
    Ok(ModerateResult {
        rows,
        oracle,
        variance: resolved,
        zero_counts,
        escaped: sums.escaped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::linspace;
    use proptest::prelude::*;

    #[test]
    fn deviation_prob_examples() {
        let p = deviation_prob(&[3.0, -3.0], 10, 0.5).unwrap();
        assert_eq!(p.fraction, 0.0);
        assert!(deviation_prob(&[1.0], 1, 0.0).is_err());

        let sys = SystemDescriptor::iid_rademacher();
        let f = Observable::coordinate(0).centered_at(0.0);
        let (probs, _) = deviation_probs(&sys, &f, &EnsembleSpec::new(40_000, 0, 0, 2), &[2], 0.5).unwrap();
        let p = probs[0];
        assert!((p.fraction - 0.5).abs() < 3.0 * p.stderr + 1e-12, "{p:?}");

        let c = Observable::constant(0.0);
        let (probs, _) = deviation_probs(&SystemDescriptor::doubling(), &c, &EnsembleSpec::new(100, 0, 0, 1), &[10], 1e-9).unwrap();
        assert_eq!(probs[0].fraction, 0.0);
    }

    #[test]
    fn decay_fit_examples() {
        let exp: Vec<(usize, f64)> = (1..=8).map(|i| (10 * i, (-0.1 * (10 * i) as f64).exp())).collect();
        let fit = decay_fit(&exp).unwrap();
        assert_eq!(fit.regime, DecayRegime::Exponential);
        assert!((fit.slope + 0.1).abs() < 1e-12);

        let poly: Vec<(usize, f64)> = (0..8).map(|i| (10usize << i, 1.0 / (10usize << i) as f64)).collect();
        let fit = decay_fit(&poly).unwrap();
        assert_eq!(fit.regime, DecayRegime::Polynomial);
        assert!((fit.slope + 1.0).abs() < 1e-12);

        assert_eq!(decay_fit(&[(1, 0.0), (2, 0.0)]).unwrap().regime, DecayRegime::Undetectable);
        assert!(decay_fit(&[(1, 0.1), (2, 0.05), (3, 0.0), (4, 0.01)]).is_err());
    }

    #[test]
    fn cgf_examples() {
        let est = cgf_estimate(&[1.0, -2.0, 0.5], 4, &[-0.3, 0.3], 1.0).unwrap();
        assert_eq!(est.z_grid, vec![-0.3, 0.0, 0.3]);
        assert_eq!(est.psi[1], 0.0);

        // constant c = 0.5 over n = 8 steps: every sum is 4
        let est = cgf_estimate(&[4.0; 10], 8, &[-1.0, 0.25, 1.0], 0.5).unwrap();
        for (z, p) in est.z_grid.iter().zip(&est.psi) {
            assert_eq!(*p, 0.5 * z);
        }
        assert!(matches!(cgf_estimate(&[0.0], 100, &[10.0], 1.0), Err(Error::OverflowGuard(..))));
        assert!((default_z_max(100, 1.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn cgf_rademacher_log_cosh() {
        let sys = SystemDescriptor::iid_rademacher();
        let f = Observable::coordinate(0).centered_at(0.0);
        let grid = linspace(-1.0, 1.0, 21);
        let (est, _) = cgf_experiment(&sys, &f, &EnsembleSpec::new(200_000, 0, 0, 4), 10, &grid).unwrap();
        for ((z, p), se) in est.z_grid.iter().zip(&est.psi).zip(&est.stderr) {
            let truth = z.cosh().ln();
            assert!((p - truth).abs() <= 4.0 * se + 1e-12, "z={z} psi={p} truth={truth} se={se}");
        }
        assert!(est.low_ess.is_empty());
        let l = legendre(&est, 0.5);
        assert!((l.value - 0.130812).abs() < 0.01, "{l:?}");
        assert!(!l.at_boundary);
    }

    #[test]
    fn legendre_examples() {
        let z = linspace(-3.0, 3.0, 601);
        let cgf = CgfEstimate {
            psi: z.iter().map(|z| z * z / 2.0).collect(),
            stderr: vec![0.0; z.len()],
            ess: vec![1.0; z.len()],
            z_grid: z.clone(),
            n_used: 1,
            m_used: 1,
            convexity_violation: 0.0,
            low_ess: vec![],
        };
        assert!((legendre(&cgf, 1.0).value - 0.5).abs() < 1e-12);
        assert_eq!(legendre(&cgf, 0.0).value, 0.0);
        assert!(legendre(&cgf, 5.0).at_boundary);

        let cosh = CgfEstimate {
            psi: z.iter().map(|z| z.cosh().ln()).collect(),
            ..cgf
        };
        assert!((legendre(&cosh, 0.5).value - 0.130812).abs() < 1e-4);
        assert!((rademacher_rate(0.5) - 0.130812).abs() < 1e-6);
        assert_eq!(rademacher_rate(0.0), 0.0);
    }

    #[test]
    fn erdos_renyi_examples() {
        assert_eq!(erdos_renyi_stat(&[1.0, -1.0, 2.0, -1.0, 1.0], 2).unwrap(), 1.0);
        assert_eq!(erdos_renyi_stat(&[0.5; 7], 3).unwrap(), 1.5);
        assert_eq!(erdos_renyi_stat(&[0.1, 0.7, -0.2], 1).unwrap(), 0.7);
        assert!(erdos_renyi_stat(&[1.0], 2).is_err());
        assert_eq!(window_count(100, 0.130812), 479_836);
    }

    #[test]
    fn erdos_renyi_rate_constant_and_budget() {
        let sys = SystemDescriptor::doubling();
        let c = Observable::constant(0.25);
        let res = erdos_renyi_rate(&sys, &c, 0.25, 0.2, &[5, 10, 20, 200], 3, 10).unwrap();
        assert_eq!(res.over_budget, vec![200]);
        assert_eq!(res.too_short, vec![5, 10]);
        assert_eq!(res.rows.len(), 1);
        for r in &res.rows {
            assert!((r.ratio - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn moderate_examples() {
        let sys = SystemDescriptor::iid_rademacher();
        let spec = EnsembleSpec::new(1000, 0, 0, 1);
        let zero = Observable::constant(0.0);
        let res = moderate_probe(&sys, &zero, 0.75, (0.5, f64::INFINITY), &[16], &spec, VarianceSource::Known(0.0)).unwrap();
        assert!(res.variance.degenerate);
        assert_eq!(res.zero_counts, vec![16]);

        let f = Observable::coordinate(0).centered_at(0.0);
        let res = moderate_probe(&sys, &f, 0.75, (0.5, f64::INFINITY), &[64, 256], &spec, VarianceSource::Known(1.0)).unwrap();
        assert_eq!(res.oracle, 0.125);
        assert!(res.rows.iter().all(|r| r.estimate > 0.0));
        assert!(moderate_probe(&sys, &f, 0.4, (0.5, 1.0), &[64], &spec, VarianceSource::Known(1.0)).is_err());
        assert!(moderate_probe(&sys, &f, 0.75, (-0.5, 1.0), &[64], &spec, VarianceSource::Known(1.0)).is_err());
    }

    fn dyadic() -> impl Strategy<Value = f64> {
        (-1024i32..1024).prop_map(|v| v as f64 / 64.0)
    }

    proptest! {
        #[test]
        fn sliding_window_matches_brute_force(values in prop::collection::vec(dyadic(), 1..300), k in 1usize..40) {
            prop_assume!(k <= values.len());
            let brute = (0..=values.len() - k)
                .map(|j| values[j..j + k].iter().sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(erdos_renyi_stat(&values, k).unwrap(), brute);
            let mut w = WindowMax::new(k);
            values.iter().for_each(|v| w.push(*v));
            prop_assert_eq!(w.best, brute);
        }

        #[test]
        fn window_max_monotone(values in prop::collection::vec(dyadic(), 1..200), bump in prop::collection::vec(0i32..64, 200), k in 1usize..20) {
            prop_assume!(k <= values.len());
            let raised: Vec<f64> = values.iter().zip(&bump).map(|(v, b)| v + *b as f64 / 64.0).collect();
            prop_assert!(erdos_renyi_stat(&raised, k).unwrap() >= erdos_renyi_stat(&values, k).unwrap());
        }

        #[test]
        fn deviation_prob_nonincreasing(sums in prop::collection::vec(-50.0f64..50.0, 1..100), e1 in 0.01f64..5.0, de in 0.0f64..5.0) {
            let p1 = deviation_prob(&sums, 10, e1).unwrap().fraction;
            let p2 = deviation_prob(&sums, 10, e1 + de).unwrap().fraction;
            prop_assert!(p2 <= p1);
        }

        #[test]
        fn legendre_nonnegative_and_zero_at_origin(sums in prop::collection::vec(-5.0f64..5.0, 2..60), t in -1.0f64..1.0) {
            let grid = linspace(-2.0, 2.0, 41);
            let est = cgf_estimate(&sums, 5, &grid, 1.0).unwrap();
            prop_assert!(legendre(&est, t).value >= 0.0);
            prop_assert_eq!(est.psi[est.z_grid.iter().position(|z| *z == 0.0).unwrap()], 0.0);
        }
    }
}
