//! Distributional limit laws: CLT, stable laws, almost-sure CLT and
//! Berry–Esseen rate probes.

use num_complex::Complex64;

use crate::dynsys::{EnsembleSpec, SystemDescriptor, TailClass};
use crate::ergostat::{ensemble_sums, estimate_variance, kantorovich_1d, ks_distance, Cdf, CutoffRule, EmpiricalDistribution, GreenKubo};
use crate::error::{invalid, Error, Result};
use crate::numeric::{geomspace, linear_fit, linspace, sorted_copy, sorted_quantile, std_normal_cdf, CompensatedSum, LinearFit};
use crate::observables::Observable;
use crate::rng::derive_seed;

/// Parameters of the stable law with characteristic function
/// `exp(-c|t|^p (1 - iβ sgn(t) tan(pπ/2)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableLawParams {
    p: f64,
    c: f64,
    beta: f64,
}

impl StableLawParams {
    pub fn new(p: f64, c: f64, beta: f64) -> Result<Self> {
        if !(p > 1.0 && p <= 2.0) {
            return Err(invalid("p", format!("{p} not in (1, 2]")));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(invalid("c", format!("{c} must be positive")));
        }
        if !(-1.0..=1.0).contains(&beta) {
            return Err(invalid("beta", format!("{beta} not in [-1, 1]")));
        }
        Ok(StableLawParams { p, c, beta })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

pub fn stable_cf(t: f64, params: &StableLawParams) -> Complex64 {
    if t == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let StableLawParams { p, c, beta } = *params;
    // tan(pπ/2) vanishes exactly in the Gaussian case
    let skew = if p == 2.0 { 0.0 } else { beta * t.signum() * (p * std::f64::consts::FRAC_PI_2).tan() };
    let mag = c * t.abs().powf(p);
    (Complex64::new(-mag, mag * skew)).exp()
}

/// `(1/m) Σ e^{its}`.
pub fn empirical_cf(samples: &[f64], t: f64) -> Result<Complex64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if t == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let (mut re, mut im) = (CompensatedSum::new(), CompensatedSum::new());
    for &s in samples {
        let (sin, cos) = (t * s).sin_cos();
        re.add(cos);
        im.add(sin);
    }
    let m = samples.len() as f64;
    Ok(Complex64::new(re.value() / m, im.value() / m))
}

/// Default comparison grid: 41 points on `[-2, 2]`.
pub fn default_cf_grid() -> Vec<f64> {
    linspace(-2.0, 2.0, 41)
}

/// `max_t |φ_emp(t) - φ(t)|` over the grid.
pub fn cf_distance(samples: &[f64], params: &StableLawParams, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Empty("t grid"));
    }
    let mut worst: f64 = 0.0;
    for &t in grid {
        worst = worst.max((empirical_cf(samples, t)? - stable_cf(t, params)).norm());
    }
    Ok(worst)
}

/// Least-squares fit of the scale `c` with `p` and `β` held fixed.
pub fn fit_stable_scale(samples: &[f64], p: f64, beta: f64, grid: &[f64]) -> Result<StableLawParams> {
    if grid.is_empty() {
        return Err(Error::Empty("t grid"));
    }
    StableLawParams::new(p, 1.0, beta)?;
    let ecf: Vec<Complex64> = grid.iter().map(|&t| empirical_cf(samples, t)).collect::<Result<_>>()?;
    let loss = |log_c: f64| -> f64 {
        let params = StableLawParams {
            p,
            c: log_c.exp(),
            beta,
        };
        grid.iter()
            .zip(&ecf)
            .map(|(&t, e)| (e - stable_cf(t, &params)).norm_sqr())
            .sum()
    };
    let (lo, hi) = ((1e-6f64).ln(), (1e3f64).ln());
    let coarse = linspace(lo, hi, 400);
    let best = coarse
        .iter()
        .copied()
        .min_by(|a, b| loss(*a).total_cmp(&loss(*b)))
        .expect("nonempty grid");
    let step = (hi - lo) / 399.0;
    let (mut a, mut b) = (best - step, best + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if loss(x1) < loss(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    StableLawParams::new(p, (0.5 * (a + b)).exp(), beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RenormSequence {
    SqrtN,
    NAlpha(f64),
    SqrtNLogN,
}

impl RenormSequence {
    /// `B_n`.
    pub fn value(&self, n: usize) -> Result<f64> {
        if n < 1 {
            return Err(invalid("n", "renormalization needs n >= 1"));
        }
        let x = n as f64;
        match *self {
            RenormSequence::SqrtN => Ok(x.sqrt()),
            RenormSequence::NAlpha(a) => Ok(x.powf(a)),
            RenormSequence::SqrtNLogN => {
                if n < 2 {
                    Err(invalid("n", "sqrt(n log n) needs n >= 2"))
                } else {
                    Ok((x * x.ln()).sqrt())
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            RenormSequence::SqrtN => "sqrt_n".into(),
            RenormSequence::NAlpha(a) => format!("n_alpha({a})"),
            RenormSequence::SqrtNLogN => "sqrt_n_log_n".into(),
        }
    }
}

/// `S_n f / B_n` per orbit as an empirical law.
pub fn normalized_sums(sums: &[f64], n: usize, seq: RenormSequence) -> Result<EmpiricalDistribution> {
    let b = seq.value(n)?;
    let scaled: Vec<f64> = sums.iter().map(|s| s / b).collect();
    EmpiricalDistribution::from_samples(&scaled)
}

/// `Φ(t/σ)`; the Heaviside step at 0 when `σ² = 0`.
pub fn gaussian_cdf(t: f64, sigma2: f64) -> f64 {
    if sigma2 <= 0.0 {
        if t >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        std_normal_cdf(t / sigma2.sqrt())
    }
}

/// How the limiting variance is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceSource {
    Known(f64),
    /// Green–Kubo on `orbits` orbits of `length` points with lags up to `max_lag`.
    GreenKubo { orbits: usize, length: usize, max_lag: usize },
}

impl Default for VarianceSource {
    fn default() -> Self {
        VarianceSource::GreenKubo {
            orbits: 64,
            length: 20_000,
            max_lag: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedVariance {
    pub sigma2: f64,
    pub green_kubo: Option<GreenKubo>,
    pub degenerate: bool,
}

/// Seed tag of the variance-estimation ensemble.
const VARIANCE_TAG: u64 = 0x5167;

pub fn resolve_variance(system: &SystemDescriptor, f: &Observable, source: VarianceSource, seed: u64, burn_in: usize) -> Result<ResolvedVariance> {
    match source {
        VarianceSource::Known(s2) => {
            if !(s2 >= 0.0) {
                return Err(invalid("sigma2", "variance must be nonnegative"));
            }
            Ok(ResolvedVariance {
                sigma2: s2,
                green_kubo: None,
                degenerate: s2 == 0.0,
            })
        }
        VarianceSource::GreenKubo { orbits, length, max_lag } => {
            let spec = EnsembleSpec::new(orbits, length, burn_in, derive_seed(seed, VARIANCE_TAG));
            let est = estimate_variance(system, f, &spec, max_lag, CutoffRule::default())?;
            Ok(ResolvedVariance {
                sigma2: est.green_kubo.sigma2,
                degenerate: est.green_kubo.degenerate,
                green_kubo: Some(est.green_kubo),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CltRow {
    pub n: usize,
    pub ks_distance: f64,
    pub sigma2_hat: f64,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltResult {
    pub rows: Vec<CltRow>,
    pub variance: ResolvedVariance,
    pub escaped: usize,
}

/// KS distance of `S_n f / √n` to `N(0, σ̂²)` for every `n`.
pub fn clt_test(
    system: &SystemDescriptor,
    f: &Observable,
    n_list: &[usize],
    spec: &EnsembleSpec,
    variance: VarianceSource,
) -> Result<CltResult> {
    if !f.is_mean_zero() {
        return Err(Error::Uncentered);
    }
    let resolved = resolve_variance(system, f, variance, spec.seed, spec.burn_in)?;
    let sums = ensemble_sums(system, f, spec, n_list)?;
    let target = Cdf::gaussian(resolved.sigma2);
    let mut rows = Vec::with_capacity(n_list.len());
    for (i, &n) in n_list.iter().enumerate() {
        if sums.sums[i].is_empty() {
            return Err(Error::InsufficientData("every orbit escaped".into()));
        }
        let d = normalized_sums(&sums.sums[i], n, RenormSequence::SqrtN)?;
        rows.push(CltRow {
            n,
            ks_distance: ks_distance(&d, &target),
            sigma2_hat: resolved.sigma2,
            m: sums.sums[i].len(),
        });
    }
    Ok(CltResult {
        rows,
        variance: resolved,
        escaped: sums.escaped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerryEsseen {
    pub clt: CltResult,
    /// Fit of `log KS` against `log n`; `None` when some distance is zero.
    pub fit: Option<LinearFit>,
    /// The tail class is not exponential, so the `c/√n` rate is not claimed.
    pub outside_theory: bool,
}

impl BerryEsseen {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// Slope of `log KS(n)` against `log n`.
pub fn berry_esseen_probe(
    system: &SystemDescriptor,
    f: &Observable,
    n_list: &[usize],
    spec: &EnsembleSpec,
    variance: VarianceSource,
) -> Result<BerryEsseen> {
    if n_list.len() < 3 {
        return Err(invalid("n_list", "the rate probe needs at least three n values"));
    }
    let clt = clt_test(system, f, n_list, spec, variance)?;
    let outside_theory = !matches!(system.tail_class(), TailClass::Exponential | TailClass::Iid);
    let fit = if clt.variance.degenerate || clt.rows.iter().any(|r| !(r.ks_distance > 0.0)) {
        None
    } else {
        let x: Vec<f64> = clt.rows.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = clt.rows.iter().map(|r| r.ks_distance.ln()).collect();
        linear_fit(&x, &y)
    };
    Ok(BerryEsseen {
        clt,
        fit,
        outside_theory,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Upper,
    Lower,
}

/// Power-law tail fit of `P(±X > u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    pub p_hat: f64,
    pub side: TailSide,
    pub r_squared: f64,
    /// Ratio of the steeper to the shallower half-range slope (1 for an
    /// exact power law).
    pub curvature: f64,
    pub tail_points: usize,
    pub thresholds: (f64, f64),
    /// Fewer than 50 points in the fitted tail.
    pub unreliable: bool,
    /// Half-range slopes disagree by more than 50%.
    pub poor_fit: bool,
    /// Decay steeper than any finite-variance power law seen in practice.
    pub steep: bool,
}

const TAIL_MIN_SAMPLES: usize = 1000;
const TAIL_MIN_POINTS: usize = 50;

/// Estimates `p` in `P(|X| > u) ~ u^{-p}` on the heavier side.
///
/// The heavier side is the one with more points beyond the 99% quantile of
/// `|X|`. Its survival fraction (relative to all samples) is regressed in
/// log-log coordinates on 20 geometric thresholds spanning survival levels
/// 10% to 1%.
pub fn tail_exponent(samples: &[f64]) -> Result<TailFit> {
    let m = samples.len();
    if m < TAIL_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!("tail fit needs {TAIL_MIN_SAMPLES} samples, got {m}")));
    }
    let abs = sorted_copy(&samples.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let q99 = sorted_quantile(&abs, 0.99);
    let up = samples.iter().filter(|&&x| x > q99).count();
    let down = samples.iter().filter(|&&x| -x > q99).count();
    let side = if up >= down { TailSide::Upper } else { TailSide::Lower };
    let mut tail: Vec<f64> = samples
        .iter()
        .map(|&x| if side == TailSide::Upper { x } else { -x })
        .filter(|&x| x > 0.0)
        .collect();
    tail.sort_by(|a, b| b.total_cmp(a));
    let idx = |frac: f64| ((frac * m as f64).ceil() as usize).clamp(1, tail.len().max(1)) - 1;
    let degenerate = |tail_points| TailFit {
        p_hat: f64::INFINITY,
        side,
        r_squared: 0.0,
        curvature: f64::NAN,
        tail_points,
        thresholds: (f64::NAN, f64::NAN),
        unreliable: true,
        poor_fit: true,
        steep: true,
    };
    if tail.len() < 2 {
        return Ok(degenerate(tail.len()));
    }
    let u_lo = tail[idx(0.10)];
    let u_hi = tail[idx(0.01)];
    let tail_points = tail.iter().filter(|&&x| x >= u_lo).count();
    if !(u_hi > u_lo) || u_lo <= 0.0 {
        return Ok(degenerate(tail_points));
    }
    let grid = geomspace(u_lo, u_hi, 20);
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for &u in &grid {
        let count = tail.partition_point(|&x| x > u);
        if count > 0 {
            lx.push(u.ln());
            ly.push((count as f64 / m as f64).ln());
        }
    }
    let fit = linear_fit(&lx, &ly).ok_or_else(|| Error::InsufficientData("degenerate tail grid".into()))?;
    let half = lx.len() / 2;
    let s1 = linear_fit(&lx[..=half], &ly[..=half]).map(|f| f.slope);
    let s2 = linear_fit(&lx[half..], &ly[half..]).map(|f| f.slope);
    let curvature = match (s1, s2) {
        (Some(a), Some(b)) if a < 0.0 && b < 0.0 => a.abs().max(b.abs()) / a.abs().min(b.abs()),
        _ => f64::INFINITY,
    };
    let p_hat = -fit.slope;
    Ok(TailFit {
        p_hat,
        side,
        r_squared: fit.r_squared,
        curvature,
        tail_points,
        thresholds: (u_lo, u_hi),
        unreliable: tail_points < TAIL_MIN_POINTS,
        poor_fit: curvature > 1.5,
        steep: p_hat > 6.0,
    })
}

/// Stable-law comparison of renormalized sums.
#[derive(Debug, Clone, PartialEq)]
pub struct StableComparison {
    pub fitted: StableLawParams,
    pub cf_distance: f64,
    pub tail: TailFit,
}

pub fn compare_stable(samples: &[f64], p: f64, beta: f64, grid: &[f64]) -> Result<StableComparison> {
    let fitted = fit_stable_scale(samples, p, beta, grid)?;
    Ok(StableComparison {
        cf_distance: cf_distance(samples, &fitted, grid)?,
        tail: tail_exponent(samples)?,
        fitted,
    })
}

/// Log-averaged measure `Σ_{k<=n} (1/k) δ_{S_k f / B_k} / H_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogAvgMeasure {
    pub n: usize,
    pub measure: EmpiricalDistribution,
}

/// Builds the measure from `f`-values along one orbit in `O(n log n)`.
pub fn asclt_measure(values: &[f64], n: usize, seq: RenormSequence) -> Result<LogAvgMeasure> {
    if n == 0 {
        return Err(invalid("n", "need n >= 1"));
    }
    if values.len() < n {
        return Err(Error::OrbitTooShort {
            needed: n,
            have: values.len(),
        });
    }
    let first = if seq == RenormSequence::SqrtNLogN { 2 } else { 1 };
    let mut acc = CompensatedSum::new();
    let mut pairs = Vec::with_capacity(n);
    for (k, &v) in values[..n].iter().enumerate() {
        acc.add(v);
        let k = k + 1;
        if k >= first {
            pairs.push((acc.value() / seq.value(k)?, 1.0 / k as f64));
        }
    }
    if pairs.is_empty() {
        return Err(invalid("n", "no admissible k for this renormalization"));
    }
    Ok(LogAvgMeasure {
        n,
        measure: EmpiricalDistribution::weighted(&pairs)?,
    })
}

/// Kantorovich distance of the log-averaged measure to `target` at each `n`.
pub fn asclt_distances(values: &[f64], n_list: &[usize], seq: RenormSequence, target: &Cdf) -> Result<Vec<(usize, f64)>> {
    n_list
        .iter()
        .map(|&n| Ok((n, kantorovich_1d(&asclt_measure(values, n, seq)?.measure, target))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::SystemDescriptor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr_free::*;

    /// Inverse-CDF and Box–Muller samplers written against `rand` only.
    mod rand_distr_free {
        use rand::Rng;

        pub fn pareto<R: Rng>(rng: &mut R, p: f64) -> f64 {
            let u: f64 = rng.gen();
            (1.0 - u).powf(-1.0 / p)
        }

        pub fn normal<R: Rng>(rng: &mut R) -> f64 {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    #[test]
    fn renorm_examples() {
        assert_eq!(RenormSequence::SqrtN.value(100).unwrap(), 10.0);
        assert!((RenormSequence::NAlpha(0.75).value(16).unwrap() - 8.0).abs() < 1e-12);
        assert!((RenormSequence::SqrtNLogN.value(100).unwrap() - 21.4597).abs() < 1e-4);
        assert!(RenormSequence::SqrtN.value(0).is_err());
        assert!(RenormSequence::SqrtNLogN.value(1).is_err());
    }

    #[test]
    fn gaussian_cdf_examples() {
        assert_eq!(gaussian_cdf(0.0, 1.0), 0.5);
        assert_eq!(gaussian_cdf(0.3, 0.0), 1.0);
        assert!((gaussian_cdf(1.96, 1.0) - 0.9750).abs() < 1e-4);
    }

    #[test]
    fn stable_cf_examples() {
        let g = StableLawParams::new(2.0, 1.0, 0.7).unwrap();
        assert_eq!(stable_cf(0.0, &g), Complex64::new(1.0, 0.0));
        let v = stable_cf(1.0, &g);
        assert!((v.re - (-1f64).exp()).abs() < 1e-15 && v.im == 0.0);
        let s = StableLawParams::new(1.5, 1.0, 0.0).unwrap();
        let v = stable_cf(2.0, &s);
        assert!((v.re - 0.059106).abs() < 1e-6 && v.im.abs() < 1e-15);
        assert!(StableLawParams::new(1.0, 1.0, 0.0).is_err());
        assert!(StableLawParams::new(1.5, 0.0, 0.0).is_err());
        assert!(StableLawParams::new(1.5, 1.0, 1.5).is_err());
    }

    #[test]
    fn empirical_cf_examples() {
        assert_eq!(empirical_cf(&[0.0, 0.0], 1.3).unwrap(), Complex64::new(1.0, 0.0));
        let v = empirical_cf(&[-1.0, 1.0], std::f64::consts::PI).unwrap();
        assert!((v.re + 1.0).abs() < 1e-15 && v.im.abs() < 1e-15);
        let v = empirical_cf(&[0.4], 2.0).unwrap();
        assert!((v - Complex64::new(0.0, 0.8).exp()).norm() < 1e-15);
        assert!(empirical_cf(&[], 1.0).is_err());
    }

    #[test]
    fn cf_distance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // N(0, 2c) has characteristic function exp(-c t^2)
        let c = 0.4;
        let xs: Vec<f64> = (0..20_000).map(|_| normal(&mut rng) * (2.0f64 * c).sqrt()).collect();
        let params = StableLawParams::new(2.0, c, 0.0).unwrap();
        assert!(cf_distance(&xs, &params, &default_cf_grid()).unwrap() < 0.03);
        assert!(cf_distance(&xs, &params, &[]).is_err());
        let fitted = fit_stable_scale(&xs, 2.0, 0.0, &default_cf_grid()).unwrap();
        assert!((fitted.c() - c).abs() < 0.02, "{}", fitted.c());
        assert_eq!(cf_distance(&xs, &fitted, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn normalized_sums_examples() {
        let d = normalized_sums(&[0.0; 5], 9, RenormSequence::SqrtN).unwrap();
        assert!(d.atoms().iter().all(|a| *a == 0.0));
        let d = normalized_sums(&[0.2, -0.4], 1, RenormSequence::SqrtN).unwrap();
        assert_eq!(d.atoms(), &[-0.4, 0.2]);
    }

    #[test]
    fn rademacher_normalized_variance() {
        let sys = SystemDescriptor::iid_rademacher();
        let f = Observable::coordinate(0).centered_at(0.0);
        let sums = ensemble_sums(&sys, &f, &EnsembleSpec::new(20_000, 0, 0, 3), &[400]).unwrap();
        let d = normalized_sums(&sums.sums[0], 400, RenormSequence::SqrtN).unwrap();
        assert!((d.variance() - 1.0).abs() < 0.04, "{}", d.variance());
    }

    #[test]
    fn clt_degenerate_for_zero_observable() {
        let sys = SystemDescriptor::doubling();
        let f = Observable::constant(0.0);
        let res = clt_test(
            &sys,
            &f,
            &[100],
            &EnsembleSpec::new(50, 0, 10, 1),
            VarianceSource::GreenKubo {
                orbits: 8,
                length: 500,
                max_lag: 20,
            },
        )
        .unwrap();
        assert!(res.variance.degenerate);
        let be = berry_esseen_probe(&sys, &f, &[10, 20, 40], &EnsembleSpec::new(50, 0, 10, 1), VarianceSource::Known(0.0)).unwrap();
        assert!(be.fit.is_none());
        assert!(berry_esseen_probe(&sys, &f, &[10, 20], &EnsembleSpec::new(5, 0, 0, 1), VarianceSource::Known(1.0)).is_err());
    }

    #[test]
    fn clt_doubling_small() {
        let sys = SystemDescriptor::doubling();
        let f = Observable::coordinate(0).centered_at(0.5);
        let res = clt_test(&sys, &f, &[1000], &EnsembleSpec::new(2000, 0, 100, 8), VarianceSource::default()).unwrap();
        assert!((res.variance.sigma2 - 0.25).abs() < 0.02, "{}", res.variance.sigma2);
        assert!(res.rows[0].ks_distance < 0.04, "{:?}", res.rows);
    }

    #[test]
    fn tail_exponent_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pareto_samples: Vec<f64> = (0..100_000).map(|_| pareto(&mut rng, 1.5)).collect();
        let fit = tail_exponent(&pareto_samples).unwrap();
        assert!((fit.p_hat - 1.5).abs() < 0.1, "{fit:?}");
        assert!(!fit.poor_fit && !fit.unreliable);

        let neg: Vec<f64> = pareto_samples.iter().map(|x| -x).collect();
        assert_eq!(tail_exponent(&neg).unwrap().side, TailSide::Lower);

        let uniform: Vec<f64> = (0..100_000).map(|_| rng.gen::<f64>()).collect();
        let fit = tail_exponent(&uniform).unwrap();
        assert!(fit.steep || fit.unreliable, "{fit:?}");

        let gauss: Vec<f64> = (0..100_000).map(|_| normal(&mut rng)).collect();
        let fit = tail_exponent(&gauss).unwrap();
        assert!(fit.p_hat > 3.0 && fit.poor_fit, "{fit:?}");

        assert!(tail_exponent(&gauss[..999]).is_err());
    }

    #[test]
    fn asclt_examples() {
        let m = asclt_measure(&[0.3, -0.1], 1, RenormSequence::SqrtN).unwrap();
        assert_eq!(m.measure.atoms(), &[0.3]);
        assert_eq!(m.measure.weights(), &[1.0]);
        assert!(asclt_measure(&[0.3], 2, RenormSequence::SqrtN).is_err());
    }

    proptest! {
        #[test]
        fn stable_cf_bounded_and_hermitian(t in -20.0f64..20.0, p in 1.01f64..2.0, c in 0.01f64..5.0, beta in -1.0f64..1.0) {
            let params = StableLawParams::new(p, c, beta).unwrap();
            let v = stable_cf(t, &params);
            prop_assert!(v.norm() <= 1.0 + 1e-15);
            let w = stable_cf(-t, &params);
            prop_assert!((v.conj() - w).norm() < 1e-14);
        }

        #[test]
        fn empirical_cf_at_zero_is_one(xs in prop::collection::vec(-100.0f64..100.0, 1..50)) {
            prop_assert_eq!(empirical_cf(&xs, 0.0).unwrap(), Complex64::new(1.0, 0.0));
        }

        #[test]
        fn asclt_weights_sum_to_one(xs in prop::collection::vec(-1.0f64..1.0, 1..300)) {
            let m = asclt_measure(&xs, xs.len(), RenormSequence::SqrtN).unwrap();
            prop_assert!((m.measure.total_weight() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn gaussian_cdf_symmetric_monotone(t in -10.0f64..10.0, dt in 0.0f64..3.0, s2 in 0.01f64..10.0) {
            prop_assert!((gaussian_cdf(t, s2) + gaussian_cdf(-t, s2) - 1.0).abs() < 1e-14);
            prop_assert!(gaussian_cdf(t + dt, s2) >= gaussian_cdf(t, s2));
        }

        #[test]
        fn renorm_monotone(n in 2usize..100_000, alpha in 0.1f64..1.0) {
            for seq in [RenormSequence::SqrtN, RenormSequence::NAlpha(alpha), RenormSequence::SqrtNLogN] {
                prop_assert!(seq.value(n + 1).unwrap() >= seq.value(n).unwrap());
                prop_assert!(seq.value(n).unwrap() > 0.0);
            }
        }
    }
}
