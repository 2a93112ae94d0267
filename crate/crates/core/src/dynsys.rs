//! Catalog of maps and reproducible orbit ensembles.
//!
//! Circle and torus maps are iterated in exact integer representations so
//! that long orbits keep their statistics:
//!
//! * the doubling map acts on the binary expansion of the state as a shift;
//!   the state is a 64-bit window of that expansion, refilled from a digit
//!   source (random bits for Lebesgue-typical points, exact long division for
//!   rational points, zeros for dyadic `f64` inputs);
//! * the cat map acts on fixed-point residues modulo `2^61 - 1`.
//!
//! All other maps run in `f64`.

use std::fmt;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng::{aux_stream, orbit_stream};

/// Modulus of the fixed-point torus representation.
pub const TORUS_MODULUS: u64 = (1 << 61) - 1;

/// Half-width of the planar trapping box `[-2, 2]^2`.
pub const TRAPPING_HALF_WIDTH: f64 = 2.0;

/// Default number of discarded transient steps.
pub const DEFAULT_BURN_IN: usize = 1_000;

/// Default burn-in for systems with polynomial return-time tails, where the
/// transient from Lebesgue initial conditions decays only like `B^(1 - 1/alpha)`.
pub const POLYNOMIAL_BURN_IN: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    Doubling,
    Cat,
    MannevillePomeau,
    Quadratic,
    Lozi,
    Henon,
    IidUniform,
    IidRademacher,
}

impl SystemKind {
    pub const ALL: [SystemKind; 8] = [
        SystemKind::Doubling,
        SystemKind::Cat,
        SystemKind::MannevillePomeau,
        SystemKind::Quadratic,
        SystemKind::Lozi,
        SystemKind::Henon,
        SystemKind::IidUniform,
        SystemKind::IidRademacher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Doubling => "doubling",
            SystemKind::Cat => "cat",
            SystemKind::MannevillePomeau => "manneville_pomeau",
            SystemKind::Quadratic => "quadratic",
            SystemKind::Lozi => "lozi",
            SystemKind::Henon => "henon",
            SystemKind::IidUniform => "iid_uniform",
            SystemKind::IidRademacher => "iid_rademacher",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn is_iid(self) -> bool {
        matches!(self, SystemKind::IidUniform | SystemKind::IidRademacher)
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Decay class of the return-time tail of the underlying tower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailClass {
    Exponential,
    Polynomial { gamma: f64 },
    Iid,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    /// `[0, 1)` with arc distance.
    Circle,
    /// `[0, 1]`.
    UnitInterval,
    /// `[-1, 1]`.
    SymmetricInterval,
    /// `[0, 1)^2` with arc distance per coordinate.
    UnitTorus,
    /// `[-h, h]^2`.
    TrappingBox { half_width: f64 },
}

impl Domain {
    pub fn contains(&self, p: &Point) -> bool {
        match (*self, *p) {
            (Domain::Circle, Point::D1(x)) => (0.0..1.0).contains(&x),
            (Domain::UnitInterval, Point::D1(x)) => (0.0..=1.0).contains(&x),
            (Domain::SymmetricInterval, Point::D1(x)) => (-1.0..=1.0).contains(&x),
            (Domain::UnitTorus, Point::D2(x, y)) => (0.0..1.0).contains(&x) && (0.0..1.0).contains(&y),
            (Domain::TrappingBox { half_width: h }, Point::D2(x, y)) => x.abs() <= h && y.abs() <= h,
            _ => false,
        }
    }

    /// Distance used for shadowing statistics, scaled so the domain has
    /// diameter at most one.
    pub fn distance(&self, p: &Point, q: &Point) -> f64 {
        fn arc(u: f64, v: f64) -> f64 {
            let d = (u - v).abs();
            d.min(1.0 - d)
        }
        match (*self, *p, *q) {
            (Domain::Circle, Point::D1(a), Point::D1(b)) => arc(a, b),
            (Domain::UnitInterval, Point::D1(a), Point::D1(b)) => (a - b).abs(),
            (Domain::SymmetricInterval, Point::D1(a), Point::D1(b)) => (a - b).abs() / 2.0,
            (Domain::UnitTorus, Point::D2(a, b), Point::D2(c, d)) => {
                // torus diameter under the arc metric is sqrt(2)/2
                (arc(a, c).powi(2) + arc(b, d).powi(2)).sqrt() / std::f64::consts::FRAC_1_SQRT_2
            }
            (Domain::TrappingBox { half_width: h }, Point::D2(a, b), Point::D2(c, d)) => {
                ((a - c).powi(2) + (b - d).powi(2)).sqrt() / (2.0 * h * std::f64::consts::SQRT_2)
            }
            _ => f64::NAN,
        }
    }
}

/// A state of a one- or two-dimensional system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point {
    D1(f64),
    D2(f64, f64),
}

impl Point {
    pub fn dim(&self) -> usize {
        match self {
            Point::D1(_) => 1,
            Point::D2(..) => 2,
        }
    }

    /// Coordinate `i`; index 1 of a one-dimensional point is `NaN`.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        match (*self, i) {
            (Point::D1(x), 0) | (Point::D2(x, _), 0) => x,
            (Point::D2(_, y), 1) => y,
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::D1(x) => write!(f, "({x})"),
            Point::D2(x, y) => write!(f, "({x}, {y})"),
        }
    }
}

/// A named map with validated parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemDescriptor {
    kind: SystemKind,
    a: f64,
    b: f64,
    alpha: f64,
}

impl SystemDescriptor {
    fn raw(kind: SystemKind) -> Self {
        SystemDescriptor {
            kind,
            a: 0.0,
            b: 0.0,
            alpha: 0.0,
        }
    }

    pub fn doubling() -> Self {
        Self::raw(SystemKind::Doubling)
    }

    pub fn cat() -> Self {
        Self::raw(SystemKind::Cat)
    }

    pub fn iid_uniform() -> Self {
        Self::raw(SystemKind::IidUniform)
    }

    pub fn iid_rademacher() -> Self {
        Self::raw(SystemKind::IidRademacher)
    }

    pub fn manneville_pomeau(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha", format!("{alpha} not in (0, 1)")));
        }
        Ok(SystemDescriptor {
            alpha,
            ..Self::raw(SystemKind::MannevillePomeau)
        })
    }

    pub fn quadratic(a: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&a) {
            return Err(invalid("a", format!("{a} not in [1, 2]")));
        }
        Ok(SystemDescriptor {
            a,
            ..Self::raw(SystemKind::Quadratic)
        })
    }

    pub fn lozi(a: f64, b: f64) -> Result<Self> {
        Self::planar(SystemKind::Lozi, a, b)
    }

    pub fn henon(a: f64, b: f64) -> Result<Self> {
        Self::planar(SystemKind::Henon, a, b)
    }

    fn planar(kind: SystemKind, a: f64, b: f64) -> Result<Self> {
        if !a.is_finite() || a <= 0.0 {
            return Err(invalid("a", format!("{a} must be positive")));
        }
        if !b.is_finite() || b == 0.0 || b.abs() >= 1.0 {
            return Err(invalid("b", format!("{b} must satisfy 0 < |b| < 1")));
        }
        Ok(SystemDescriptor {
            a,
            b,
            ..Self::raw(kind)
        })
    }

    /// Parameter defaults: Hénon (1.4, 0.3) and Lozi (1.7, 0.5).
    pub fn default_for(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Doubling => Self::doubling(),
            SystemKind::Cat => Self::cat(),
            SystemKind::MannevillePomeau => Self::manneville_pomeau(0.75).unwrap(),
            SystemKind::Quadratic => Self::quadratic(2.0).unwrap(),
            SystemKind::Lozi => Self::lozi(1.7, 0.5).unwrap(),
            SystemKind::Henon => Self::henon(1.4, 0.3).unwrap(),
            SystemKind::IidUniform => Self::iid_uniform(),
            SystemKind::IidRademacher => Self::iid_rademacher(),
        }
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn alpha(&self) -> Option<f64> {
        (self.kind == SystemKind::MannevillePomeau).then_some(self.alpha)
    }

    pub fn a(&self) -> Option<f64> {
        matches!(self.kind, SystemKind::Quadratic | SystemKind::Lozi | SystemKind::Henon).then_some(self.a)
    }

    pub fn b(&self) -> Option<f64> {
        matches!(self.kind, SystemKind::Lozi | SystemKind::Henon).then_some(self.b)
    }

    /// Named parameters in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        if let Some(alpha) = self.alpha() {
            out.push(("alpha", alpha));
        }
        if let Some(a) = self.a() {
            out.push(("a", a));
        }
        if let Some(b) = self.b() {
            out.push(("b", b));
        }
        out
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            SystemKind::Cat | SystemKind::Lozi | SystemKind::Henon => 2,
            _ => 1,
        }
    }

    pub fn domain(&self) -> Domain {
        match self.kind {
            SystemKind::Doubling => Domain::Circle,
            SystemKind::Cat => Domain::UnitTorus,
            SystemKind::MannevillePomeau | SystemKind::IidUniform => Domain::UnitInterval,
            SystemKind::Quadratic | SystemKind::IidRademacher => Domain::SymmetricInterval,
            SystemKind::Lozi | SystemKind::Henon => Domain::TrappingBox {
                half_width: TRAPPING_HALF_WIDTH,
            },
        }
    }

    pub fn tail_class(&self) -> TailClass {
        match self.kind {
            SystemKind::MannevillePomeau => TailClass::Polynomial { gamma: 1.0 / self.alpha },
            SystemKind::IidUniform | SystemKind::IidRademacher => TailClass::Iid,
            _ => TailClass::Exponential,
        }
    }

    /// Whether existing theory covers these parameters. Hénon at the
    /// historical values and generic quadratic parameters are not covered.
    pub fn covered_by_theory(&self) -> bool {
        !matches!(self.kind, SystemKind::Henon | SystemKind::Quadratic)
    }

    pub fn default_burn_in(&self) -> usize {
        match self.tail_class() {
            TailClass::Polynomial { .. } => POLYNOMIAL_BURN_IN,
            _ => DEFAULT_BURN_IN,
        }
    }

    /// Box from which planar initial conditions are drawn.
    pub fn basin_box(&self) -> Option<[(f64, f64); 2]> {
        match self.kind {
            SystemKind::Henon => Some([(-1.0, 1.0), (-0.3, 0.3)]),
            SystemKind::Lozi => Some([(-1.0, 1.0), (-0.5, 0.5)]),
            _ => None,
        }
    }

    /// `∫ coordinate dμ` where the invariant measure is known in closed form.
    pub fn known_coordinate_mean(&self, index: usize) -> Option<f64> {
        match (self.kind, index) {
            (SystemKind::Doubling | SystemKind::IidUniform, 0) => Some(0.5),
            (SystemKind::Cat, 0 | 1) => Some(0.5),
            (SystemKind::IidRademacher, 0) => Some(0.0),
            _ => None,
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.domain().contains(p)
    }

    /// One application of the map.
    pub fn apply(&self, p: &Point) -> Result<Point> {
        if self.kind.is_iid() {
            return Err(Error::NoDeterministicMap {
                system: self.kind.to_string(),
            });
        }
        if !self.contains(p) {
            return Err(Error::OutsideDomain {
                system: self.kind.to_string(),
                point: p.to_string(),
            });
        }
        Ok(Stepper::new(self).real_step(*p))
    }

    pub fn label(&self) -> String {
        let params: Vec<String> = self.params().iter().map(|(k, v)| format!("{k}={v}")).collect();
        if params.is_empty() {
            self.kind.to_string()
        } else {
            format!("{}({})", self.kind, params.join(", "))
        }
    }
}

impl fmt::Display for SystemDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Precomputed constants for the real-valued maps.
#[derive(Debug, Clone, Copy)]
enum Stepper {
    Doubling,
    Cat,
    Mp { alpha: f64, two_alpha: f64 },
    Quadratic { a: f64 },
    Lozi { a: f64, b: f64 },
    Henon { a: f64, b: f64 },
    Iid,
}

impl Stepper {
    fn new(sys: &SystemDescriptor) -> Self {
        match sys.kind {
            SystemKind::Doubling => Stepper::Doubling,
            SystemKind::Cat => Stepper::Cat,
            SystemKind::MannevillePomeau => Stepper::Mp {
                alpha: sys.alpha,
                two_alpha: 2f64.powf(sys.alpha),
            },
            SystemKind::Quadratic => Stepper::Quadratic { a: sys.a },
            SystemKind::Lozi => Stepper::Lozi { a: sys.a, b: sys.b },
            SystemKind::Henon => Stepper::Henon { a: sys.a, b: sys.b },
            SystemKind::IidUniform | SystemKind::IidRademacher => Stepper::Iid,
        }
    }

    #[inline]
    fn mp(x: f64, alpha: f64, two_alpha: f64) -> f64 {
        if x < 0.5 {
            // square-root forms of the common exponents are several times
            // cheaper than powf
            let xa = if alpha == 0.75 {
                let r = x.sqrt();
                r * r.sqrt()
            } else if alpha == 0.5 {
                x.sqrt()
            } else {
                x.powf(alpha)
            };
            (x + two_alpha * x * xa).min(1.0)
        } else {
            2.0 * x - 1.0
        }
    }

    fn real_step(&self, p: Point) -> Point {
        match (*self, p) {
            (Stepper::Doubling, Point::D1(x)) => {
                let y = 2.0 * x;
                Point::D1(if y >= 1.0 { y - 1.0 } else { y })
            }
            (Stepper::Cat, Point::D2(x, y)) => {
                Point::D2((2.0 * x + y).rem_euclid(1.0), (x + y).rem_euclid(1.0))
            }
            (Stepper::Mp { alpha, two_alpha }, Point::D1(x)) => Point::D1(Self::mp(x, alpha, two_alpha)),
            (Stepper::Quadratic { a }, Point::D1(x)) => Point::D1(1.0 - a * x * x),
            (Stepper::Lozi { a, b }, Point::D2(x, y)) => Point::D2(1.0 - a * x.abs() + y, b * x),
            (Stepper::Henon { a, b }, Point::D2(x, y)) => Point::D2(1.0 - a * x * x + y, b * x),
            _ => p,
        }
    }
}

/// Source of binary digits beyond the 64-bit window of a doubling state.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Digits {
    /// Lebesgue-typical point: digits are fair coin flips from the orbit stream.
    Random,
    /// Exact expansion of `rem / den` by long division.
    Rational { rem: u64, den: u64 },
    /// Terminating expansion (dyadic rationals, e.g. any `f64`).
    Zero,
}

/// Internal exact state of a system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State(StateRepr);

#[derive(Debug, Clone, Copy, PartialEq)]
enum StateRepr {
    Shift { window: u64, digits: Digits },
    Torus { x: u64, y: u64 },
    Real1(f64),
    Real2(f64, f64),
    Iid,
}

impl State {
    /// Exact rational point `num / den` of the doubling map.
    pub fn rational(num: u64, den: u64) -> Result<State> {
        if den == 0 || den >= 1 << 62 || num >= den {
            return Err(invalid("den", format!("need 0 <= num < den < 2^62, got {num}/{den}")));
        }
        let mut digits = Digits::Rational { rem: num, den };
        let mut window = 0u64;
        for _ in 0..64 {
            window = (window << 1) | next_digit(&mut digits, None) as u64;
        }
        Ok(State(StateRepr::Shift { window, digits }))
    }

    /// Exact fixed-point torus state `(x/M, y/M)` with `M = 2^61 - 1`.
    pub fn torus_residues(x: u64, y: u64) -> Result<State> {
        if x >= TORUS_MODULUS || y >= TORUS_MODULUS {
            return Err(invalid("residue", "torus residues must be below 2^61 - 1"));
        }
        Ok(State(StateRepr::Torus { x, y }))
    }

    /// Exact representation of a real point for `system`.
    pub fn from_point(system: &SystemDescriptor, p: &Point) -> Result<State> {
        if system.kind.is_iid() {
            return Err(Error::NoDeterministicMap {
                system: system.kind.to_string(),
            });
        }
        if !system.contains(p) {
            return Err(Error::OutsideDomain {
                system: system.kind.to_string(),
                point: p.to_string(),
            });
        }
        Ok(State(match (system.kind, *p) {
            (SystemKind::Doubling, Point::D1(x)) => StateRepr::Shift {
                // x < 1 has at most 64 significant fractional bits in this window
                window: (x * 2f64.powi(64)) as u64,
                digits: Digits::Zero,
            },
            (SystemKind::Cat, Point::D2(x, y)) => StateRepr::Torus {
                x: to_residue(x),
                y: to_residue(y),
            },
            (_, Point::D1(x)) => StateRepr::Real1(x),
            (_, Point::D2(x, y)) => StateRepr::Real2(x, y),
        }))
    }

    pub fn point(&self) -> Point {
        match self.0 {
            StateRepr::Shift { window, .. } => Point::D1((window >> 11) as f64 * 2f64.powi(-53)),
            StateRepr::Torus { x, y } => Point::D2(from_residue(x), from_residue(y)),
            StateRepr::Real1(x) => Point::D1(x),
            StateRepr::Real2(x, y) => Point::D2(x, y),
            StateRepr::Iid => Point::D1(f64::NAN),
        }
    }

    /// Raw torus residues, when this is a cat-map state.
    pub fn residues(&self) -> Option<(u64, u64)> {
        match self.0 {
            StateRepr::Torus { x, y } => Some((x, y)),
            _ => None,
        }
    }
}

fn to_residue(u: f64) -> u64 {
    let r = (u * TORUS_MODULUS as f64).round() as u64;
    r % TORUS_MODULUS
}

fn from_residue(r: u64) -> f64 {
    r as f64 / TORUS_MODULUS as f64
}

#[inline]
fn next_digit(digits: &mut Digits, bits: Option<&mut BitSource<'_>>) -> bool {
    match digits {
        Digits::Random => bits.expect("random digits need a bit source").next_bit(),
        Digits::Rational { rem, den } => {
            let r = *rem << 1;
            if r >= *den {
                *rem = r - *den;
                true
            } else {
                *rem = r;
                false
            }
        }
        Digits::Zero => false,
    }
}

struct BitSource<'a> {
    rng: &'a mut ChaCha8Rng,
    buf: &'a mut u64,
    left: &'a mut u32,
}

impl BitSource<'_> {
    #[inline]
    fn next_bit(&mut self) -> bool {
        if *self.left == 0 {
            *self.buf = self.rng.next_u64();
            *self.left = 64;
        }
        let bit = *self.buf & 1 == 1;
        *self.buf >>= 1;
        *self.left -= 1;
        bit
    }
}

/// Streaming orbit: yields the current point and advances the state.
///
/// Planar orbits that leave the trapping box stop early; `escaped_at`
/// then holds the number of points yielded before the escape.
pub struct Trajectory {
    kind: SystemKind,
    stepper: Stepper,
    domain: Domain,
    state: StateRepr,
    rng: ChaCha8Rng,
    bit_buf: u64,
    bits_left: u32,
    yielded: usize,
    escaped_at: Option<usize>,
}

impl Trajectory {
    fn with_rng(system: &SystemDescriptor, state: State, rng: ChaCha8Rng) -> Self {
        Trajectory {
            kind: system.kind,
            stepper: Stepper::new(system),
            domain: system.domain(),
            state: state.0,
            rng,
            bit_buf: 0,
            bits_left: 0,
            yielded: 0,
            escaped_at: None,
        }
    }

    /// Deterministic orbit from an exact state (no randomness involved).
    pub fn from_state(system: &SystemDescriptor, state: State) -> Result<Self> {
        if system.kind.is_iid() {
            return Err(Error::NoDeterministicMap {
                system: system.kind.to_string(),
            });
        }
        Ok(Self::with_rng(system, state, aux_stream(0, 0)))
    }

    /// Orbit `index` of an ensemble with the given master seed: the initial
    /// condition is drawn from the orbit's own stream.
    pub fn sampled(system: &SystemDescriptor, master_seed: u64, index: u64) -> Self {
        let mut rng = orbit_stream(master_seed, index);
        let state = random_state(system, &mut rng);
        Self::with_rng(system, state, rng)
    }

    pub fn escaped_at(&self) -> Option<usize> {
        self.escaped_at
    }

    pub fn state(&self) -> State {
        State(self.state)
    }

    /// Advance without recording; escape during the skip is reported as
    /// escaping at index 0.
    pub fn burn(&mut self, steps: usize) {
        for _ in 0..steps {
            if self.escaped_at.is_some() {
                return;
            }
            self.advance();
            if self.kind_is_planar() && !self.domain.contains(&State(self.state).point()) {
                self.escaped_at = Some(0);
            }
        }
    }

    #[inline]
    fn kind_is_planar(&self) -> bool {
        matches!(self.kind, SystemKind::Lozi | SystemKind::Henon)
    }

    #[inline]
    fn advance(&mut self) {
        match &mut self.state {
            StateRepr::Shift { window, digits } => {
                let mut src = BitSource {
                    rng: &mut self.rng,
                    buf: &mut self.bit_buf,
                    left: &mut self.bits_left,
                };
                let bit = next_digit(digits, Some(&mut src)) as u64;
                *window = (*window << 1) | bit;
            }
            StateRepr::Torus { x, y } => {
                let (a, b) = (*x, *y);
                *x = (2 * a + b) % TORUS_MODULUS;
                *y = (a + b) % TORUS_MODULUS;
            }
            StateRepr::Real1(x) => {
                if let Point::D1(nx) = self.stepper.real_step(Point::D1(*x)) {
                    *x = nx;
                }
            }
            StateRepr::Real2(x, y) => {
                if let Point::D2(nx, ny) = self.stepper.real_step(Point::D2(*x, *y)) {
                    *x = nx;
                    *y = ny;
                }
            }
            StateRepr::Iid => {}
        }
    }

    /// Consumes `k` Rademacher draws exactly as `k` calls to `next_scalar`
    /// would and returns how many were `+1`.
    pub fn rademacher_ones(&mut self, mut k: usize) -> u64 {
        assert_eq!(self.kind, SystemKind::IidRademacher);
        let mut ones = 0u64;
        while k > 0 {
            if self.bits_left == 0 {
                self.bit_buf = self.rng.next_u64();
                self.bits_left = 64;
            }
            let take = (self.bits_left as usize).min(k);
            let mask = if take == 64 { u64::MAX } else { (1u64 << take) - 1 };
            ones += (self.bit_buf & mask).count_ones() as u64;
            self.bit_buf = if take == 64 { 0 } else { self.bit_buf >> take };
            self.bits_left -= take as u32;
            self.yielded += take;
            k -= take;
        }
        ones
    }

    /// Next value of a one-dimensional orbit; faster than the iterator for
    /// scalar statistics. Panics on planar systems.
    #[inline]
    pub fn next_scalar(&mut self) -> f64 {
        match self.kind {
            SystemKind::IidUniform => self.rng.gen::<f64>(),
            SystemKind::IidRademacher => {
                let mut src = BitSource {
                    rng: &mut self.rng,
                    buf: &mut self.bit_buf,
                    left: &mut self.bits_left,
                };
                if src.next_bit() {
                    1.0
                } else {
                    -1.0
                }
            }
            SystemKind::MannevillePomeau => {
                // hot path for the intermittent map
                if let (StateRepr::Real1(x), Stepper::Mp { alpha, two_alpha }) = (&mut self.state, self.stepper) {
                    let v = *x;
                    *x = Stepper::mp(v, alpha, two_alpha);
                    self.yielded += 1;
                    return v;
                }
                unreachable!()
            }
            _ => {
                let p = self.next().expect("one-dimensional orbits do not escape");
                p.coord(0)
            }
        }
    }
}

impl Iterator for Trajectory {
    type Item = Point;

    #[inline]
    fn next(&mut self) -> Option<Point> {
        if self.escaped_at.is_some() {
            return None;
        }
        let p = match self.kind {
            SystemKind::IidUniform | SystemKind::IidRademacher => Point::D1(self.next_scalar()),
            _ => State(self.state).point(),
        };
        if self.kind_is_planar() && !self.domain.contains(&p) {
            self.escaped_at = Some(self.yielded);
            return None;
        }
        if !self.kind.is_iid() {
            self.advance();
        }
        self.yielded += 1;
        Some(p)
    }
}

fn random_state(system: &SystemDescriptor, rng: &mut ChaCha8Rng) -> State {
    State(match system.kind {
        SystemKind::Doubling => StateRepr::Shift {
            window: rng.next_u64(),
            digits: Digits::Random,
        },
        SystemKind::Cat => StateRepr::Torus {
            x: rng.gen_range(0..TORUS_MODULUS),
            y: rng.gen_range(0..TORUS_MODULUS),
        },
        SystemKind::MannevillePomeau => StateRepr::Real1(rng.gen::<f64>()),
        SystemKind::Quadratic => StateRepr::Real1(rng.gen_range(-1.0..=1.0)),
        SystemKind::Lozi | SystemKind::Henon => {
            let [(x0, x1), (y0, y1)] = system.basin_box().unwrap();
            StateRepr::Real2(rng.gen_range(x0..=x1), rng.gen_range(y0..=y1))
        }
        SystemKind::IidUniform | SystemKind::IidRademacher => StateRepr::Iid,
    })
}

/// A finite orbit segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    pub points: Vec<Point>,
    /// Number of recorded points before the orbit left the trapping box.
    pub escaped_at: Option<usize>,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn escaped(&self) -> bool {
        self.escaped_at.is_some()
    }

    /// First coordinates, for scalar statistics.
    pub fn values(&self, coord: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.coord(coord)).collect()
    }
}

/// `T^burn_in x0, ..., T^(burn_in + n - 1) x0`.
pub fn iterate(system: &SystemDescriptor, x0: &Point, n: usize, burn_in: usize) -> Result<Orbit> {
    let state = State::from_point(system, x0)?;
    iterate_state(system, state, n, burn_in)
}

/// As [`iterate`], from an exact state.
pub fn iterate_state(system: &SystemDescriptor, state: State, n: usize, burn_in: usize) -> Result<Orbit> {
    if n == 0 {
        return Err(invalid("n", "orbit length must be at least 1"));
    }
    let mut traj = Trajectory::from_state(system, state)?;
    Ok(record(&mut traj, n, burn_in))
}

fn record(traj: &mut Trajectory, n: usize, burn_in: usize) -> Orbit {
    traj.burn(burn_in);
    if traj.escaped_at.is_some() {
        return Orbit {
            points: Vec::new(),
            escaped_at: Some(0),
        };
    }
    let points: Vec<Point> = traj.by_ref().take(n).collect();
    Orbit {
        escaped_at: traj.escaped_at,
        points,
    }
}

/// `m` initial conditions, uniform on the domain (on the basin box for
/// planar maps). Point `i` comes from ensemble stream `i`, so it is the
/// initial condition of orbit `i` of any ensemble with the same seed.
pub fn sample_initial(system: &SystemDescriptor, m: usize, seed: u64) -> Result<Vec<Point>> {
    if m == 0 {
        return Err(invalid("m", "need at least one point"));
    }
    Ok((0..m as u64)
        .map(|i| {
            let mut rng = orbit_stream(seed, i);
            match system.kind {
                SystemKind::IidUniform => Point::D1(rng.gen::<f64>()),
                SystemKind::IidRademacher => Point::D1(if rng.next_u64() & 1 == 1 { 1.0 } else { -1.0 }),
                _ => random_state(system, &mut rng).point(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleSpec {
    pub m: usize,
    pub n: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(m: usize, n: usize, burn_in: usize, seed: u64) -> Self {
        EnsembleSpec { m, n, burn_in, seed }
    }

    /// Uses the system's default burn-in.
    pub fn for_system(system: &SystemDescriptor, m: usize, n: usize, seed: u64) -> Self {
        Self::new(m, n, system.default_burn_in(), seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("m", "need at least one orbit"));
        }
        if self.n == 0 {
            return Err(invalid("n", "orbit length must be at least 1"));
        }
        Ok(())
    }

    pub fn with_n(&self, n: usize) -> Self {
        EnsembleSpec { n, ..*self }
    }
}

/// `m` independent orbits of length `n`, recorded after the burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitEnsemble {
    pub system: SystemDescriptor,
    pub spec: EnsembleSpec,
    pub orbits: Vec<Orbit>,
}

impl OrbitEnsemble {
    pub fn escaped_flags(&self) -> Vec<bool> {
        self.orbits.iter().map(Orbit::escaped).collect()
    }

    pub fn escaped_count(&self) -> usize {
        self.orbits.iter().filter(|o| o.escaped()).count()
    }

    /// Orbits that stayed in the domain for the full length.
    pub fn complete_orbits(&self) -> impl Iterator<Item = &Orbit> {
        self.orbits.iter().filter(|o| !o.escaped())
    }

    /// Scalar series of coordinate `coord` for every complete orbit.
    pub fn series(&self, coord: usize) -> Vec<Vec<f64>> {
        self.complete_orbits().map(|o| o.values(coord)).collect()
    }
}

pub fn generate_ensemble(system: &SystemDescriptor, spec: &EnsembleSpec) -> Result<OrbitEnsemble> {
    spec.validate()?;
    let orbits = map_orbits(system, spec, |_, traj| {
        let mut out = Vec::with_capacity(spec.n);
        out.extend(traj.by_ref().take(spec.n));
        Orbit {
            escaped_at: traj.escaped_at(),
            points: out,
        }
    });
    let orbits = orbits
        .into_iter()
        .map(|o| match o {
            Some(o) => o,
            None => Orbit {
                points: Vec::new(),
                escaped_at: Some(0),
            },
        })
        .collect();
    Ok(OrbitEnsemble {
        system: *system,
        spec: *spec,
        orbits,
    })
}

/// Runs `f` on every orbit of the ensemble described by `spec` without
/// materializing it. The trajectory handed to `f` has already been burned
/// in; orbits that escape during the burn-in map to `None`. Results are
/// returned in orbit order regardless of scheduling.
pub fn map_orbits<R, F>(system: &SystemDescriptor, spec: &EnsembleSpec, f: F) -> Vec<Option<R>>
where
    R: Send,
    F: Fn(usize, &mut Trajectory) -> R + Sync,
{
    (0..spec.m)
        .into_par_iter()
        .map(|i| {
            let mut traj = Trajectory::sampled(system, spec.seed, i as u64);
            traj.burn(spec.burn_in);
            if traj.escaped_at().is_some() {
                return None;
            }
            Some(f(i, &mut traj))
        })
        .collect()
}

const CALIBRATION_TAG_BASE: u64 = 0xCA11_0000;

/// Long orbit for auxiliary estimates (e.g. centering constants), drawn from
/// an auxiliary stream so it is independent of every ensemble orbit.
pub fn calibration_trajectory(system: &SystemDescriptor, seed: u64, tag: u64, burn_in: usize) -> Trajectory {
    let mut rng = aux_stream(seed, CALIBRATION_TAG_BASE + tag);
    let state = random_state(system, &mut rng);
    let mut traj = Trajectory::with_rng(system, state, rng);
    traj.burn(burn_in);
    traj
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d1(p: Point) -> f64 {
        p.coord(0)
    }

    #[test]
    fn apply_examples() {
        let dbl = SystemDescriptor::doubling();
        assert_eq!(d1(dbl.apply(&Point::D1(0.3)).unwrap()), 0.6);

        let mp1 = SystemDescriptor::manneville_pomeau(0.999_999_999_999).unwrap();
        // alpha -> 1 limit of the left branch at 0.25 is 0.25 + 2 * 0.25^2
        assert!((d1(mp1.apply(&Point::D1(0.25)).unwrap()) - 0.375).abs() < 1e-11);
        for alpha in [0.1, 0.5, 0.75] {
            let mp = SystemDescriptor::manneville_pomeau(alpha).unwrap();
            assert_eq!(d1(mp.apply(&Point::D1(0.5)).unwrap()), 0.0);
        }

        let cat = SystemDescriptor::cat();
        assert_eq!(cat.apply(&Point::D2(0.25, 0.5)).unwrap(), Point::D2(0.0, 0.75));

        let henon = SystemDescriptor::henon(1.4, 0.3).unwrap();
        assert_eq!(henon.apply(&Point::D2(0.0, 0.0)).unwrap(), Point::D2(1.0, 0.0));

        let lozi = SystemDescriptor::lozi(1.7, 0.5).unwrap();
        let Point::D2(x, y) = lozi.apply(&Point::D2(1.0, 0.0)).unwrap() else { panic!() };
        assert!((x + 0.7).abs() < 1e-12 && (y - 0.5).abs() < 1e-12);
    }

    #[test]
    fn apply_errors() {
        let iid = SystemDescriptor::iid_uniform();
        assert!(matches!(iid.apply(&Point::D1(0.5)), Err(Error::NoDeterministicMap { .. })));
        let dbl = SystemDescriptor::doubling();
        assert!(matches!(dbl.apply(&Point::D1(1.5)), Err(Error::OutsideDomain { .. })));
        assert!(matches!(dbl.apply(&Point::D2(0.1, 0.1)), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn parameter_ranges() {
        assert!(SystemDescriptor::manneville_pomeau(1.5).is_err());
        assert!(SystemDescriptor::manneville_pomeau(0.0).is_err());
        assert!(SystemDescriptor::quadratic(2.5).is_err());
        assert!(SystemDescriptor::henon(1.4, 0.0).is_err());
        let mp = SystemDescriptor::manneville_pomeau(0.75).unwrap();
        assert_eq!(mp.tail_class(), TailClass::Polynomial { gamma: 1.0 / 0.75 });
        assert_eq!(SystemDescriptor::cat().tail_class(), TailClass::Exponential);
        assert_eq!(SystemDescriptor::iid_rademacher().tail_class(), TailClass::Iid);
    }

    #[test]
    fn iterate_examples() {
        let dbl = SystemDescriptor::doubling();
        let orbit = iterate(&dbl, &Point::D1(0.0), 3, 0).unwrap();
        assert_eq!(orbit.values(0), vec![0.0, 0.0, 0.0]);

        let third = State::rational(1, 3).unwrap();
        let orbit = iterate_state(&dbl, third, 4, 0).unwrap();
        let v = orbit.values(0);
        for (got, want) in v.iter().zip([1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }

        let quad = SystemDescriptor::quadratic(2.0).unwrap();
        let orbit = iterate(&quad, &Point::D1(0.5), 2, 0).unwrap();
        assert_eq!(orbit.values(0), vec![0.5, 0.5]);
    }

    #[test]
    fn one_third_alternates_forever() {
        let dbl = SystemDescriptor::doubling();
        let orbit = iterate_state(&dbl, State::rational(1, 3).unwrap(), 10_000, 0).unwrap();
        let v = orbit.values(0);
        assert!(v.iter().step_by(2).all(|&x| x == v[0]));
        assert!(v.iter().skip(1).step_by(2).all(|&x| x == v[1]));
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dyadic_float_orbit_collapses_exactly() {
        // x = 0.3 as f64 is a dyadic rational; the exact doubling orbit dies at 0
        let dbl = SystemDescriptor::doubling();
        let orbit = iterate(&dbl, &Point::D1(0.3), 80, 0).unwrap();
        assert_eq!(orbit.points[1], Point::D1(0.6));
        assert_eq!(*orbit.points.last().unwrap(), Point::D1(0.0));
    }

    #[test]
    fn cat_fixed_point_matches_real_map() {
        let cat = SystemDescriptor::cat();
        let s = State::torus_residues(12345, 987_654_321).unwrap();
        let orbit = iterate_state(&cat, s, 2, 0).unwrap();
        let real = cat.apply(&orbit.points[0]).unwrap();
        let (Point::D2(a, b), Point::D2(c, d)) = (orbit.points[1], real) else { panic!() };
        assert!((a - c).abs() < 1e-12 && (b - d).abs() < 1e-12);
    }

    #[test]
    fn mp_preserves_unit_interval() {
        for alpha in [0.2, 0.5, 0.75, 0.95] {
            let mp = SystemDescriptor::manneville_pomeau(alpha).unwrap();
            for i in 0..=1000 {
                let x = i as f64 / 1000.0;
                let y = d1(mp.apply(&Point::D1(x)).unwrap());
                assert!((0.0..=1.0).contains(&y), "alpha={alpha} x={x} -> {y}");
            }
            // left-branch supremum is exactly one
            let top = 0.5 + 2f64.powf(alpha) * 0.5f64.powf(1.0 + alpha);
            assert!((top - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let dbl = SystemDescriptor::doubling();
        assert_eq!(sample_initial(&dbl, 5, 42).unwrap(), sample_initial(&dbl, 5, 42).unwrap());
        assert!(sample_initial(&dbl, 0, 42).is_err());
        let pts = sample_initial(&dbl, 100_000, 3).unwrap();
        let mean = pts.iter().map(|p| p.coord(0)).sum::<f64>() / pts.len() as f64;
        assert!((mean - 0.5).abs() < 0.005);
    }

    #[test]
    fn rademacher_ensemble_repeats() {
        let sys = SystemDescriptor::iid_rademacher();
        let spec = EnsembleSpec::new(1, 4, 0, 99);
        let a = generate_ensemble(&sys, &spec).unwrap();
        let b = generate_ensemble(&sys, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.orbits[0].values(0).iter().all(|v| *v == 1.0 || *v == -1.0));
    }

    #[test]
    fn rademacher_popcount_matches_stepping() {
        let sys = SystemDescriptor::iid_rademacher();
        let mut a = Trajectory::sampled(&sys, 5, 2);
        let mut b = Trajectory::sampled(&sys, 5, 2);
        for k in [3usize, 64, 1, 130, 61, 7] {
            let stepped = (0..k).filter(|_| a.next_scalar() > 0.0).count() as u64;
            assert_eq!(b.rademacher_ones(k), stepped);
        }
    }

    #[test]
    fn doubling_ensemble_stays_in_domain() {
        let sys = SystemDescriptor::doubling();
        let ens = generate_ensemble(&sys, &EnsembleSpec::new(100, 10_000, 1000, 5)).unwrap();
        assert!(ens
            .orbits
            .iter()
            .all(|o| o.len() == 10_000 && o.points.iter().all(|p| sys.contains(p))));
    }

    #[test]
    fn henon_reports_escapes() {
        let sys = SystemDescriptor::henon(1.4, 0.3).unwrap();
        let ens = generate_ensemble(&sys, &EnsembleSpec::new(400, 500, 1000, 11)).unwrap();
        assert_eq!(ens.escaped_flags().len(), 400);
        assert!(ens.escaped_count() < 400);
        for o in ens.complete_orbits() {
            assert!(o.points.iter().all(|p| sys.contains(p)));
        }
        let out = iterate(&sys, &Point::D2(1.9, 0.0), 10, 0).unwrap();
        assert_eq!(out.escaped_at, Some(1));
        assert_eq!(out.len(), 1);
    }
}
