//! Instantaneous observables and separately Lipschitz functionals.
//!
//! Lipschitz constants of observables are taken with respect to the absolute
//! difference of the coordinate they read. Functionals built on a domain
//! metric (shadowing) state their constants for that metric instead.

use std::fmt;
use std::sync::Arc;

use crate::dynsys::{calibration_trajectory, Domain, Point, SystemDescriptor};
use crate::ergostat::{kantorovich_1d, Cdf, EmpiricalDistribution};
use crate::error::{invalid, Error, Result};
use crate::numeric::CompensatedSum;

/// What to do when a tabulated observable is queried between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffGridPolicy {
    Reject,
    Linear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    grid: Vec<f64>,
    values: Vec<f64>,
    policy: OffGridPolicy,
}

impl Table {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, policy: OffGridPolicy) -> Result<Self> {
        if grid.is_empty() || grid.len() != values.len() {
            return Err(invalid("table", "grid and values must be nonempty and of equal length"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("table", "grid must be strictly increasing with finite values"));
        }
        Ok(Table { grid, values, policy })
    }

    fn lookup(&self, x: f64) -> f64 {
        let g = &self.grid;
        let i = g.partition_point(|&a| a < x);
        if i < g.len() && g[i] == x {
            return self.values[i];
        }
        match self.policy {
            OffGridPolicy::Reject => f64::NAN,
            OffGridPolicy::Nearest => {
                if i == 0 {
                    self.values[0]
                } else if i == g.len() || x - g[i - 1] <= g[i] - x {
                    self.values[i - 1]
                } else {
                    self.values[i]
                }
            }
            OffGridPolicy::Linear => {
                if i == 0 {
                    self.values[0]
                } else if i == g.len() {
                    self.values[g.len() - 1]
                } else {
                    let w = (x - g[i - 1]) / (g[i] - g[i - 1]);
                    self.values[i - 1] * (1.0 - w) + self.values[i] * w
                }
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        match self.policy {
            OffGridPolicy::Linear => self
                .grid
                .windows(2)
                .zip(self.values.windows(2))
                .map(|(g, v)| ((v[1] - v[0]) / (g[1] - g[0])).abs())
                .fold(0.0, f64::max),
            _ if self.values.iter().all(|v| *v == self.values[0]) => 0.0,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservableKind {
    Coordinate,
    Affine { c0: f64, c1: f64 },
    /// `-1` below `theta`, `+1` at or above it.
    SignThreshold { theta: f64 },
    Constant(f64),
    Tabulated(Table),
}

/// Where the centering offset of an observable came from.
#[derive(Debug, Clone, PartialEq)]
pub enum CenteringSource {
    ClosedForm,
    Calibration { steps: usize, burn_in: usize, seed: u64 },
    Asserted,
}

/// Long-orbit estimate of `∫ f dμ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub steps: usize,
    pub seed: u64,
    /// Defaults to the system's burn-in.
    pub burn_in: Option<usize>,
}

impl Calibration {
    pub const DEFAULT_STEPS: usize = 10_000_000;

    pub fn new(seed: u64) -> Self {
        Calibration {
            steps: Self::DEFAULT_STEPS,
            seed,
            burn_in: None,
        }
    }
}

/// `f(p) = g(p[coord]) - offset` for a closed-form or tabulated `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    kind: ObservableKind,
    coord: usize,
    offset: f64,
    mean_zero: bool,
    centering: Option<CenteringSource>,
}

impl Observable {
    fn base(kind: ObservableKind) -> Self {
        let mean_zero = kind == ObservableKind::Constant(0.0);
        Observable {
            kind,
            coord: 0,
            offset: 0.0,
            mean_zero,
            centering: None,
        }
    }

    pub fn coordinate(index: usize) -> Self {
        Observable {
            coord: index,
            ..Self::base(ObservableKind::Coordinate)
        }
    }

    pub fn affine(c0: f64, c1: f64) -> Self {
        Self::base(ObservableKind::Affine { c0, c1 })
    }

    pub fn sign_threshold(theta: f64) -> Self {
        Self::base(ObservableKind::SignThreshold { theta })
    }

    pub fn constant(c: f64) -> Self {
        Self::base(ObservableKind::Constant(c))
    }

    pub fn tabulated(table: Table) -> Self {
        Self::base(ObservableKind::Tabulated(table))
    }

    /// Read coordinate `index` of planar points.
    pub fn on_coordinate(mut self, index: usize) -> Self {
        self.coord = index;
        self
    }

    /// Subtract a known mean and mark the result centered.
    pub fn centered_at(mut self, mean: f64) -> Self {
        self.offset += mean;
        self.mean_zero = true;
        self.centering = Some(CenteringSource::Asserted);
        self
    }

    /// Center with respect to the invariant measure of `system`: closed form
    /// where one is known, otherwise a long calibration orbit.
    pub fn centered_for(&self, system: &SystemDescriptor, cal: &Calibration) -> Result<Self> {
        if self.mean_zero {
            return Ok(self.clone());
        }
        let (mean, source) = match self.known_mean(system) {
            Some(m) => (m, CenteringSource::ClosedForm),
            None => {
                let burn_in = cal.burn_in.unwrap_or_else(|| system.default_burn_in());
                (self.calibrate(system, cal.steps, cal.seed, burn_in)?, CenteringSource::Calibration {
                    steps: cal.steps,
                    burn_in,
                    seed: cal.seed,
                })
            }
        };
        let mut out = self.clone();
        out.offset += mean;
        out.mean_zero = true;
        out.centering = Some(source);
        Ok(out)
    }

    fn calibrate(&self, system: &SystemDescriptor, steps: usize, seed: u64, burn_in: usize) -> Result<f64> {
        if steps == 0 {
            return Err(invalid("calibration_steps", "need at least one step"));
        }
        if let Some(alpha) = system.alpha() {
            let mut traj = calibration_trajectory(system, seed, 0, burn_in);
            return Ok(excursion_corrected_mean(|x| self.raw_value(x), alpha, steps, || traj.next_scalar()));
        }
        // planar orbits may leave the trapping box; retry from fresh streams
        for tag in 0..64 {
            let mut traj = calibration_trajectory(system, seed, tag, burn_in);
            let mut acc = CompensatedSum::new();
            let mut count = 0usize;
            if system.dimension() == 1 {
                for _ in 0..steps {
                    acc.add(self.raw_value(traj.next_scalar()));
                }
                count = steps;
            } else {
                for p in traj.by_ref().take(steps) {
                    acc.add(self.raw_value(p.coord(self.coord)));
                    count += 1;
                }
            }
            if count == steps {
                let mean = acc.value() / steps as f64;
                if mean.is_nan() {
                    return Err(Error::OffGrid(f64::NAN));
                }
                return Ok(mean);
            }
        }
        Err(Error::InsufficientData(format!("every calibration orbit of {system} escaped")))
    }

    /// `∫ g dμ` for the raw function where the invariant law is explicit.
    pub fn known_mean(&self, system: &SystemDescriptor) -> Option<f64> {
        use crate::dynsys::SystemKind as K;
        let kind = system.kind();
        let uniform = matches!((kind, self.coord), (K::Doubling | K::IidUniform, 0) | (K::Cat, 0 | 1));
        let rademacher = kind == K::IidRademacher && self.coord == 0;
        match &self.kind {
            ObservableKind::Constant(c) => Some(*c),
            ObservableKind::Coordinate if uniform => Some(0.5),
            ObservableKind::Coordinate if rademacher => Some(0.0),
            ObservableKind::Affine { c0, c1 } if uniform => Some(c0 + 0.5 * c1),
            ObservableKind::Affine { c0, .. } if rademacher => Some(*c0),
            ObservableKind::SignThreshold { theta } if uniform => Some(1.0 - 2.0 * theta.clamp(0.0, 1.0)),
            ObservableKind::SignThreshold { .. } if rademacher => {
                Some(0.5 * (self.raw_value(1.0) + self.raw_value(-1.0)))
            }
            _ => None,
        }
    }

    pub fn kind(&self) -> &ObservableKind {
        &self.kind
    }

    pub fn coord(&self) -> usize {
        self.coord
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn is_mean_zero(&self) -> bool {
        self.mean_zero
    }

    pub fn centering(&self) -> Option<&CenteringSource> {
        self.centering.as_ref()
    }

    /// Lipschitz constant; infinite for discontinuous kinds.
    pub fn lipschitz_constant(&self) -> f64 {
        match &self.kind {
            ObservableKind::Coordinate => 1.0,
            ObservableKind::Affine { c1, .. } => c1.abs(),
            ObservableKind::SignThreshold { .. } => f64::INFINITY,
            ObservableKind::Constant(_) => 0.0,
            ObservableKind::Tabulated(t) => t.lipschitz(),
        }
    }

    pub fn value_at_zero(&self) -> f64 {
        self.value(0.0)
    }

    #[inline]
    fn raw_value(&self, x: f64) -> f64 {
        match &self.kind {
            ObservableKind::Coordinate => x,
            ObservableKind::Affine { c0, c1 } => c0 + c1 * x,
            ObservableKind::SignThreshold { theta } => {
                if x < *theta {
                    -1.0
                } else {
                    1.0
                }
            }
            ObservableKind::Constant(c) => *c,
            ObservableKind::Tabulated(t) => t.lookup(x),
        }
    }

    /// `f` as a function of the coordinate value; `NaN` off-grid.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.raw_value(x) - self.offset
    }

    pub fn eval(&self, p: &Point) -> Result<f64> {
        let x = p.coord(self.coord);
        let v = self.value(x);
        if v.is_nan() && !x.is_nan() {
            return Err(Error::OffGrid(x));
        }
        Ok(v)
    }

    pub fn eval_all(&self, points: &[Point]) -> Result<Vec<f64>> {
        points.iter().map(|p| self.eval(p)).collect()
    }

    /// `sup |f|` over the domain.
    pub fn sup_abs(&self, domain: &Domain) -> f64 {
        let (lo, hi) = coordinate_range(domain);
        match &self.kind {
            ObservableKind::Tabulated(t) => t.values.iter().map(|v| (v - self.offset).abs()).fold(0.0, f64::max),
            ObservableKind::SignThreshold { .. } => (1.0 - self.offset).abs().max((1.0 + self.offset).abs()),
            _ => self.value(lo).abs().max(self.value(hi).abs()),
        }
    }

    pub fn label(&self) -> String {
        let base = match &self.kind {
            ObservableKind::Coordinate if self.mean_zero => "centered_coordinate".to_string(),
            ObservableKind::Coordinate => "coordinate".to_string(),
            ObservableKind::Affine { c0, c1 } => format!("affine({c0}, {c1})"),
            ObservableKind::SignThreshold { theta } => format!("sign_threshold({theta})"),
            ObservableKind::Constant(c) => format!("constant({c})"),
            ObservableKind::Tabulated(t) => format!("tabulated({} points)", t.grid.len()),
        };
        if self.coord == 0 {
            base
        } else {
            format!("{base}[{}]", self.coord)
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Threshold below which intermittent laminar phases are integrated exactly.
const LAMINAR_DELTA: f64 = 1e-3;
/// Number of backward left-branch iterates summed before the power-law tail.
const LAMINAR_TERMS: usize = 1 << 21;

/// `∫ g dμ` for the intermittent map from `steps` orbit points.
///
/// Plain time averages converge like `N^(α-1)` with a skewed stable error.
/// Here only steps in `B = [δ, 1]` are averaged; they have short return
/// times. Each visit to `[1/2, (1+δ)/2)` enters `[0, δ)` at `x = 2y - 1`
/// and the ensuing laminar phase is deterministic, so its expected length
/// and `g`-sum per `B`-step follow from the `B`-density at `1/2` and the
/// backward iterates `z_0 = δ, z_{j+1} = T_L^{-1} z_j`:
/// `∫_0^δ τ = Σ_j z_j` and `∫_0^δ Σ_{j<τ} g∘T^j ≈ Σ_i (z_i - z_{i+1}) P_i`
/// with `P_i = Σ_{k<=i} (g(z_k) + g(z_{k+1})) / 2`.
fn excursion_corrected_mean(g: impl Fn(f64) -> f64, alpha: f64, steps: usize, mut next: impl FnMut() -> f64) -> f64 {
    let delta = LAMINAR_DELTA;
    let window = 0.01;
    let mut sum_b = CompensatedSum::new();
    let (mut n_b, mut near, mut far) = (0u64, 0u64, 0u64);
    for _ in 0..steps {
        let x = next();
        if x >= delta {
            sum_b.add(g(x));
            n_b += 1;
            if (0.5..0.5 + window).contains(&x) {
                near += 1;
            } else if (0.5 + window..0.5 + 2.0 * window).contains(&x) {
                far += 1;
            }
        }
    }
    if n_b == 0 {
        return f64::NAN;
    }
    let nb = n_b as f64;
    // linear extrapolation of the B-density to y = 1/2
    let h_half = (1.5 * near as f64 - 0.5 * far as f64) / (nb * window);
    let (tau_integral, g_integral) = laminar_integrals(&g, alpha, delta);
    let per_step_time = 0.5 * h_half * tau_integral;
    let per_step_sum = 0.5 * h_half * g_integral;
    (sum_b.value() / nb + per_step_sum) / (1.0 + per_step_time)
}

/// `(∫_0^δ τ(x) dx, ∫_0^δ Σ_{j<τ(x)} g(T^j x) dx)` for the left branch
/// `x + 2^α x^(1+α)`.
fn laminar_integrals(g: &impl Fn(f64) -> f64, alpha: f64, delta: f64) -> (f64, f64) {
    let c = 2f64.powf(alpha);
    let inverse = |z: f64| {
        let mut x = z / (1.0 + c * z.powf(alpha));
        for _ in 0..50 {
            let fx = x + c * x.powf(1.0 + alpha) - z;
            let step = fx / (1.0 + c * (1.0 + alpha) * x.powf(alpha));
            x -= step;
            if step.abs() <= 1e-17 * z {
                break;
            }
        }
        x
    };
    let mut tau = CompensatedSum::new();
    let mut gsum = CompensatedSum::new();
    let mut prefix = 0.0;
    let mut z = delta;
    for _ in 0..LAMINAR_TERMS {
        let zn = inverse(z);
        tau.add(z);
        prefix += 0.5 * (g(z) + g(zn));
        gsum.add((z - zn) * prefix);
        z = zn;
    }
    // z_j ≈ (cα (j + j0))^(-1/α) beyond the computed range
    let rate = c * alpha;
    let shift = z.powf(-alpha) / rate;
    let p = 1.0 / alpha;
    let tail = rate.powf(-p) * (shift - 0.5).powf(1.0 - p) / (p - 1.0);
    tau.add(tail);
    gsum.add(z * prefix + g(0.0) * tail);
    (tau.value(), gsum.value())
}

fn coordinate_range(domain: &Domain) -> (f64, f64) {
    match *domain {
        Domain::Circle | Domain::UnitInterval | Domain::UnitTorus => (0.0, 1.0),
        Domain::SymmetricInterval => (-1.0, 1.0),
        Domain::TrappingBox { half_width } => (-half_width, half_width),
    }
}

/// `S_n f` along the orbit, with compensated summation.
pub fn ergodic_sum(f: &Observable, orbit: &[Point]) -> Result<f64> {
    if orbit.is_empty() {
        return Err(Error::Empty("orbit"));
    }
    let mut acc = CompensatedSum::new();
    for p in orbit {
        acc.add(f.eval(p)?);
    }
    Ok(acc.value())
}

pub type CustomEval = Arc<dyn Fn(&[Point]) -> f64 + Send + Sync>;

/// An `n`-variable statistic with per-slot Lipschitz constants.
#[derive(Clone)]
pub enum Functional {
    Constant { arity: usize, value: f64 },
    ErgodicSum { f: Observable, arity: usize },
    ErgodicAverage { f: Observable, arity: usize },
    /// `(1/n) Σ_{j<n} f(x_j) f(x_{j+k})` on `n + k` points.
    Correlation { f: Observable, n: usize, k: usize, sup_abs: f64 },
    /// Kantorovich distance from the empirical measure of one coordinate to
    /// a reference law.
    Kantorovich { arity: usize, coord: usize, reference: Arc<Cdf> },
    /// Mean distance to the closest of the reference orbits.
    Shadowing { arity: usize, domain: Domain, reference: Arc<Vec<Vec<Point>>> },
    Custom { name: String, lip: Vec<f64>, eval: CustomEval },
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Functional({}, arity {})", self.name(), self.arity())
    }
}

impl Functional {
    pub fn correlation(f: Observable, n: usize, k: usize, domain: &Domain) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "need at least one product"));
        }
        let sup_abs = f.sup_abs(domain);
        Ok(Functional::Correlation { f, n, k, sup_abs })
    }

    pub fn shadowing(arity: usize, domain: Domain, reference: Vec<Vec<Point>>) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::Empty("reference set"));
        }
        if let Some(short) = reference.iter().find(|r| r.len() < arity) {
            return Err(Error::OrbitTooShort {
                needed: arity,
                have: short.len(),
            });
        }
        Ok(Functional::Shadowing {
            arity,
            domain,
            reference: Arc::new(reference),
        })
    }

    pub fn name(&self) -> String {
        match self {
            Functional::Constant { value, .. } => format!("constant({value})"),
            Functional::ErgodicSum { f, .. } => format!("ergodic_sum[{f}]"),
            Functional::ErgodicAverage { f, .. } => format!("ergodic_average[{f}]"),
            Functional::Correlation { f, k, .. } => format!("correlation[{f}, k={k}]"),
            Functional::Kantorovich { .. } => "kantorovich".into(),
            Functional::Shadowing { .. } => "shadowing".into(),
            Functional::Custom { name, .. } => name.clone(),
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Functional::Constant { arity, .. }
            | Functional::ErgodicSum { arity, .. }
            | Functional::ErgodicAverage { arity, .. }
            | Functional::Kantorovich { arity, .. }
            | Functional::Shadowing { arity, .. } => *arity,
            Functional::Correlation { n, k, .. } => n + k,
            Functional::Custom { lip, .. } => lip.len(),
        }
    }

    /// Per-slot Lipschitz constants `Lip_i(K)`.
    pub fn lip(&self) -> Vec<f64> {
        let n = self.arity();
        match self {
            Functional::Constant { .. } => vec![0.0; n],
            Functional::ErgodicSum { f, .. } => vec![f.lipschitz_constant(); n],
            Functional::ErgodicAverage { f, .. } => vec![f.lipschitz_constant() / n as f64; n],
            Functional::Correlation { f, n, k, sup_abs } => {
                let unit = sup_abs * f.lipschitz_constant() / *n as f64;
                (0..n + k)
                    .map(|i| {
                        // a slot enters once as a leading and once as a lagged
                        // factor; for k = 0 both factors are the same slot
                        let terms = (i < *n) as usize + (i >= *k && i < n + k) as usize;
                        terms as f64 * unit
                    })
                    .collect()
            }
            Functional::Kantorovich { .. } | Functional::Shadowing { .. } => vec![1.0 / n as f64; n],
            Functional::Custom { lip, .. } => lip.clone(),
        }
    }

    /// `Σ_i Lip_i(K)^2`.
    pub fn lip_sum_sq(&self) -> Result<f64> {
        let lip = self.lip();
        if let Some(i) = lip.iter().position(|l| !l.is_finite()) {
            return Err(Error::InfiniteLipschitz(i));
        }
        let mut acc = CompensatedSum::new();
        for l in lip {
            acc.add(l * l);
        }
        Ok(acc.value())
    }

    pub fn eval(&self, window: &[Point]) -> Result<f64> {
        let n = self.arity();
        if window.len() != n {
            return Err(Error::ArityMismatch {
                expected: n,
                got: window.len(),
            });
        }
        match self {
            Functional::Constant { value, .. } => Ok(*value),
            Functional::ErgodicSum { f, .. } => ergodic_sum(f, window),
            Functional::ErgodicAverage { f, .. } => Ok(ergodic_sum(f, window)? / n as f64),
            Functional::Correlation { f, n, k, .. } => {
                let v = f.eval_all(window)?;
                Ok(crate::ergostat::lagged_product_mean(&v, *n, *k))
            }
            Functional::Kantorovich { coord, reference, .. } => {
                let xs: Vec<f64> = window.iter().map(|p| p.coord(*coord)).collect();
                let e = EmpiricalDistribution::from_samples(&xs)?;
                Ok(kantorovich_1d(&e, reference))
            }
            Functional::Shadowing { domain, reference, .. } => Ok(shadowing_distance(window, reference, domain)),
            Functional::Custom { eval, .. } => Ok(eval(window)),
        }
    }
}

/// `min_y (1/n) Σ_j d(x_j, y_j)` over the reference orbits, using the first
/// `x.len()` points of each.
pub fn shadowing_distance(x: &[Point], reference: &[Vec<Point>], domain: &Domain) -> f64 {
    let n = x.len() as f64;
    reference
        .iter()
        .map(|y| {
            let mut acc = CompensatedSum::new();
            for (a, b) in x.iter().zip(y) {
                acc.add(domain.distance(a, b));
            }
            acc.value() / n
        })
        .fold(f64::INFINITY, f64::min)
}
