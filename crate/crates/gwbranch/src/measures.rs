//! Deterministic measures (alpha, beta, nu), the functions g, h, Phi1, Phi2 and
//! quadrature against Levy measures.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, neumaier};

/// Below this |v| the power series is used for Phi1 and Phi2.
pub const PHI_SERIES_SWITCH: f64 = 0.05;
const PHI_SERIES_TERMS: usize = 8;
pub const PHI2_SERIES_SWITCH: f64 = 1.0;
const PHI2_SERIES_TERMS: usize = 20;
pub const DEFAULT_LEVY_TOL: f64 = 1e-10;

// 1/(k+2)! for k = 0..8
const INV_FACT_SHIFTED: [f64; 8] = [
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362880.0,
];

/// Phi1(v) = (e^{-v} - 1 + v) / v^2.
pub fn phi1(v: f64) -> f64 {
    if v.abs() < PHI_SERIES_SWITCH {
        let mut acc = 0.0;
        for k in (0..PHI_SERIES_TERMS).rev() {
            acc = acc * (-v) + INV_FACT_SHIFTED[k];
        }
        acc
    } else {
        ((-v).exp_m1() + v) / (v * v)
    }
}

/// Phi2(v) = (-e^{-v} + 1 - v + v^2/2) / v^2 = 1/2 - Phi1(v). The direct
/// form cancels much harder than Phi1's, so the series runs out to |v| = 1.
pub fn phi2(v: f64) -> f64 {
    if v.abs() < PHI2_SERIES_SWITCH {
        // -sum_{k>=1} (-v)^k / (k+2)!
        let mut term = v / 6.0;
        let mut acc = 0.0;
        for k in 1..=PHI2_SERIES_TERMS {
            acc += term;
            term *= -v / (k as f64 + 3.0);
        }
        acc
    } else {
        0.5 - ((-v).exp_m1() + v) / (v * v)
    }
}

pub fn eval_phi(which: u8, v: f64) -> f64 {
    match which {
        1 => phi1(v),
        2 => phi2(v),
        _ => panic!("Phi index must be 1 or 2, got {which}"),
    }
}

/// g(x, u) (1+x^2)/x^2.
#[inline]
pub fn g_factor(x: f64, u: f64) -> f64 {
    let v = u * x;
    -(-v).exp_m1() - u * u * phi1(v)
}

/// h(x, u) (1+x^2)/x^2.
#[inline]
pub fn h_factor(x: f64, u: f64) -> f64 {
    let v = u * x;
    -(-v).exp_m1() + u * u * phi2(v)
}

#[inline]
fn x2_weight(x: f64) -> f64 {
    let x2 = x * x;
    x2 / (1.0 + x2)
}

/// g(x, lam) = 1 - e^{-lam x} - lam x / (1 + x^2).
pub fn eval_g(x: f64, lam: f64) -> f64 {
    x2_weight(x) * g_factor(x, lam)
}

/// h(x, lam) = g(x, lam) + (lam x)^2 / (2 (1 + x^2)).
pub fn eval_h(x: f64, lam: f64) -> f64 {
    x2_weight(x) * h_factor(x, lam)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrandKind {
    G,
    H,
    /// x^2/(1+x^2), independent of u.
    X2,
}

impl IntegrandKind {
    #[inline]
    fn factor(self, x: f64, u: f64) -> f64 {
        match self {
            IntegrandKind::G => g_factor(x, u),
            IntegrandKind::H => h_factor(x, u),
            IntegrandKind::X2 => 1.0,
        }
    }

    fn factor_bound(self, u: f64) -> f64 {
        match self {
            IntegrandKind::G => 1.0 + u,
            IntegrandKind::H => 1.0 + 0.5 * u * u + u,
            IntegrandKind::X2 => 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Levy measures on (0, inf)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RawLevy {
    Atoms { atoms: Vec<(f64, f64)> },
    PowerTail { a: f64, c: f64 },
    Composite { parts: Vec<RawLevy> },
}

/// A Levy measure on (0, inf) integrating 1 ^ x^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLevy", into = "RawLevy")]
pub enum LevyMeasure {
    /// Point masses (x, mass).
    Atoms(Vec<(f64, f64)>),
    /// Tail F([x, inf)) = c x^{-a}, density c a x^{-a-1}.
    PowerTail { a: f64, c: f64 },
    Composite(Vec<LevyMeasure>),
}

impl From<LevyMeasure> for RawLevy {
    fn from(m: LevyMeasure) -> Self {
        match m {
            LevyMeasure::Atoms(atoms) => RawLevy::Atoms { atoms },
            LevyMeasure::PowerTail { a, c } => RawLevy::PowerTail { a, c },
            LevyMeasure::Composite(parts) => RawLevy::Composite {
                parts: parts.into_iter().map(RawLevy::from).collect(),
            },
        }
    }
}

impl TryFrom<RawLevy> for LevyMeasure {
    type Error = Error;
    fn try_from(raw: RawLevy) -> Result<Self> {
        fn conv(raw: RawLevy) -> LevyMeasure {
            match raw {
                RawLevy::Atoms { atoms } => LevyMeasure::Atoms(atoms),
                RawLevy::PowerTail { a, c } => LevyMeasure::PowerTail { a, c },
                RawLevy::Composite { parts } => LevyMeasure::Composite(parts.into_iter().map(conv).collect()),
            }
        }
        let m = conv(raw);
        m.validate()?;
        Ok(m)
    }
}

impl Default for LevyMeasure {
    fn default() -> Self {
        LevyMeasure::zero()
    }
}

impl LevyMeasure {
    pub fn zero() -> Self {
        LevyMeasure::Atoms(Vec::new())
    }

    pub fn dirac(x: f64, mass: f64) -> Self {
        LevyMeasure::Atoms(vec![(x, mass)])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LevyMeasure::Atoms(atoms) => {
                for &(x, m) in atoms {
                    if !(x.is_finite() && x > 0.0) {
                        return Err(Error::NonIntegrable(format!("atom location {x} must be finite and > 0")));
                    }
                    if !(m.is_finite() && m >= 0.0) {
                        return Err(Error::NonIntegrable(format!("atom mass {m} must be finite and >= 0")));
                    }
                }
                Ok(())
            }
            LevyMeasure::PowerTail { a, c } => {
                if !(*a > 0.0 && *a < 2.0) {
                    return Err(Error::NonIntegrable(format!("power-tail index {a} outside (0, 2)")));
                }
                if !(c.is_finite() && *c > 0.0) {
                    return Err(Error::NonIntegrable(format!("power-tail scale {c} must be > 0")));
                }
                Ok(())
            }
            LevyMeasure::Composite(parts) => parts.iter().try_for_each(|p| p.validate()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LevyMeasure::Atoms(atoms) => atoms.iter().all(|&(_, m)| m == 0.0),
            LevyMeasure::PowerTail { .. } => false,
            LevyMeasure::Composite(parts) => parts.iter().all(|p| p.is_zero()),
        }
    }

    pub fn scaled(&self, k: f64) -> LevyMeasure {
        match self {
            LevyMeasure::Atoms(atoms) => LevyMeasure::Atoms(atoms.iter().map(|&(x, m)| (x, k * m)).collect()),
            LevyMeasure::PowerTail { a, c } => {
                if k == 0.0 {
                    LevyMeasure::zero()
                } else {
                    LevyMeasure::PowerTail { a: *a, c: c * k }
                }
            }
            LevyMeasure::Composite(parts) => LevyMeasure::Composite(parts.iter().map(|p| p.scaled(k)).collect()),
        }
    }

    /// Sum of measures, flattening composites and dropping zero parts.
    pub fn sum<'a, I: IntoIterator<Item = &'a LevyMeasure>>(items: I) -> LevyMeasure {
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut tails: Vec<LevyMeasure> = Vec::new();
        fn walk(m: &LevyMeasure, atoms: &mut Vec<(f64, f64)>, tails: &mut Vec<LevyMeasure>) {
            match m {
                LevyMeasure::Atoms(a) => atoms.extend(a.iter().copied().filter(|&(_, w)| w != 0.0)),
                LevyMeasure::PowerTail { .. } => tails.push(m.clone()),
                LevyMeasure::Composite(parts) => parts.iter().for_each(|p| walk(p, atoms, tails)),
            }
        }
        for m in items {
            walk(m, &mut atoms, &mut tails);
        }
        atoms.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (x, m) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == x => last.1 += m,
                _ => merged.push((x, m)),
            }
        }
        if tails.is_empty() {
            return LevyMeasure::Atoms(merged);
        }
        if merged.is_empty() && tails.len() == 1 {
            return tails.pop().unwrap();
        }
        let mut parts = Vec::new();
        if !merged.is_empty() {
            parts.push(LevyMeasure::Atoms(merged));
        }
        parts.extend(tails);
        LevyMeasure::Composite(parts)
    }

    /// F([x, inf)) for x > 0.
    pub fn tail(&self, x: f64) -> f64 {
        match self {
            LevyMeasure::Atoms(atoms) => atoms.iter().filter(|&&(y, _)| y >= x).map(|&(_, m)| m).sum(),
            LevyMeasure::PowerTail { a, c } => c * x.powf(-a),
            LevyMeasure::Composite(parts) => parts.iter().map(|p| p.tail(x)).sum(),
        }
    }

    /// Locations of point masses (where probe points must not sit).
    pub fn atom_locations(&self) -> Vec<f64> {
        match self {
            LevyMeasure::Atoms(atoms) => atoms.iter().filter(|a| a.1 > 0.0).map(|a| a.0).collect(),
            LevyMeasure::PowerTail { .. } => Vec::new(),
            LevyMeasure::Composite(parts) => parts.iter().flat_map(|p| p.atom_locations()).collect(),
        }
    }

    /// Closed form of the integral of x^2/(1+x^2).
    pub fn x2_mass(&self) -> f64 {
        match self {
            LevyMeasure::Atoms(atoms) => neumaier(atoms.iter().map(|&(x, m)| m * x2_weight(x))),
            LevyMeasure::PowerTail { a, c } => power_tail_x2_mass(*a, *c),
            LevyMeasure::Composite(parts) => parts.iter().map(|p| p.x2_mass()).sum(),
        }
    }

    /// Drift shift between the x 1_{x<=1} and x/(1+x^2) compensations:
    /// the integral of x/(1+x^2) - x 1_{x<=1}.
    pub fn compensation_shift(&self) -> f64 {
        match self {
            LevyMeasure::Atoms(atoms) => neumaier(atoms.iter().map(|&(x, m)| {
                let trunc = if x <= 1.0 { x } else { 0.0 };
                m * (x / (1.0 + x * x) - trunc)
            })),
            LevyMeasure::PowerTail { a, c } => {
                // on (0,1]: -x^3/(1+x^2) * c a x^{-a-1}; on (1,inf): x/(1+x^2) * c a x^{-a-1}
                let inner = quad::adaptive(&|x: f64| -x.powf(2.0 - a) / (1.0 + x * x), 0.0, 1.0, 1e-13, 2000).value;
                // x = e^s on (1, inf)
                let outer = quad::adaptive(&|s: f64| (-a * s).exp() / (1.0 + (-2.0 * s).exp()), 0.0, 60.0 / a, 1e-13, 2000).value;
                c * a * (inner + outer)
            }
            LevyMeasure::Composite(parts) => parts.iter().map(|p| p.compensation_shift()).sum(),
        }
    }

    fn collect_atoms(&self, out: &mut Vec<(f64, f64)>) {
        match self {
            LevyMeasure::Atoms(atoms) => out.extend(atoms.iter().copied()),
            LevyMeasure::PowerTail { .. } => {}
            LevyMeasure::Composite(parts) => parts.iter().for_each(|p| p.collect_atoms(out)),
        }
    }

    fn collect_tails(&self, out: &mut Vec<(f64, f64)>) {
        match self {
            LevyMeasure::Atoms(_) => {}
            LevyMeasure::PowerTail { a, c } => out.push((*a, *c)),
            LevyMeasure::Composite(parts) => parts.iter().for_each(|p| p.collect_tails(out)),
        }
    }
}

pub fn power_tail_x2_mass(a: f64, c: f64) -> f64 {
    c * a * PI / (2.0 * (0.5 * PI * a).sin())
}

/// Transformed integrand pieces of a power tail: returns the integral of
/// K(x,u) x^2/(1+x^2) c a x^{-a-1} over (0, inf).
fn power_tail_integral(a: f64, c: f64, u: f64, kind: IntegrandKind, tol: f64) -> f64 {
    let m = 1.0 / (2.0 - a);
    // (0,1]: x = y^m
    let inner = |y: f64| {
        let x = y.powf(m);
        kind.factor(x, u) / (1.0 + x * x)
    };
    let s_max = power_tail_cutoff(a, c, u, kind, tol);
    // (1, inf): x = e^s
    let outer = |s: f64| {
        let x = s.exp();
        let e = (-a * s).exp();
        kind.factor(x, u) * e / (1.0 + (-2.0 * s).exp())
    };
    let scale = c * a;
    let r1 = quad::adaptive(&inner, 0.0, 1.0, 0.5 * tol / (scale * m), 4000);
    let r2 = quad::adaptive(&outer, 0.0, s_max, 0.5 * tol / scale, 4000);
    scale * (m * r1.value + r2.value)
}

fn power_tail_cutoff(a: f64, c: f64, u: f64, kind: IntegrandKind, tol: f64) -> f64 {
    let kmax = kind.factor_bound(u);
    ((100.0 * c * kmax / tol).ln() / a).clamp(1.0, 700.0)
}

/// Integral of the chosen integrand against F; the default tolerance is 1e-10.
pub fn levy_integral(f: &LevyMeasure, u: f64, kind: IntegrandKind) -> Result<f64> {
    levy_integral_tol(f, u, kind, DEFAULT_LEVY_TOL)
}

pub fn levy_integral_tol(f: &LevyMeasure, u: f64, kind: IntegrandKind, tol: f64) -> Result<f64> {
    f.validate()?;
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::InvalidInput(format!("levy_integral needs finite u >= 0, got {u}")));
    }
    Ok(levy_integral_unchecked(f, u, kind, tol))
}

fn levy_integral_unchecked(f: &LevyMeasure, u: f64, kind: IntegrandKind, tol: f64) -> f64 {
    if u == 0.0 && kind != IntegrandKind::X2 {
        return 0.0;
    }
    match f {
        LevyMeasure::Atoms(atoms) => neumaier(atoms.iter().map(|&(x, m)| m * x2_weight(x) * kind.factor(x, u))),
        LevyMeasure::PowerTail { a, c } => {
            if kind == IntegrandKind::X2 {
                power_tail_x2_mass(*a, *c)
            } else {
                power_tail_integral(*a, *c, u, kind, tol)
            }
        }
        LevyMeasure::Composite(parts) => {
            let k = parts.len().max(1) as f64;
            neumaier(parts.iter().map(|p| levy_integral_unchecked(p, u, kind, tol / k)))
        }
    }
}

/// Precompiled quadrature for repeated evaluation of the integral of
/// K(x,u) x^2/(1+x^2) F(dx) for u in [0, u_max].
#[derive(Debug, Clone, Default)]
pub struct LevyRule {
    /// (x, weight) with weight already carrying x^2/(1+x^2), density and Jacobian.
    nodes: Vec<(f64, f64)>,
    x2_total: f64,
}

impl LevyRule {
    pub fn compile(f: &LevyMeasure, u_max: f64, tol: f64) -> LevyRule {
        let mut nodes = Vec::new();
        let mut atoms = Vec::new();
        f.collect_atoms(&mut atoms);
        for (x, m) in atoms {
            if m != 0.0 {
                nodes.push((x, m * x2_weight(x)));
            }
        }
        let mut tails = Vec::new();
        f.collect_tails(&mut tails);
        let u_max = u_max.max(1e-3);
        for (a, c) in tails {
            let m = 1.0 / (2.0 - a);
            let scale = c * a;
            let mut inner_cuts: Vec<f64> = vec![0.0, 1.0];
            let mut outer_cuts: Vec<f64> = vec![0.0];
            let mut s_max: f64 = 1.0;
            for k in 0..10 {
                let u = u_max * 0.25f64.powi(k);
                for kind in [IntegrandKind::G, IntegrandKind::H] {
                    let inner = |y: f64| {
                        let x = y.powf(m);
                        kind.factor(x, u) / (1.0 + x * x)
                    };
                    let s_hi = power_tail_cutoff(a, c, u_max, kind, tol);
                    s_max = s_max.max(s_hi);
                    let outer = |s: f64| kind.factor(s.exp(), u) * (-a * s).exp() / (1.0 + (-2.0 * s).exp());
                    let r1 = quad::adaptive(&inner, 0.0, 1.0, 0.25 * tol / (scale * m), 4000);
                    let r2 = quad::adaptive(&outer, 0.0, s_hi, 0.25 * tol / scale, 4000);
                    inner_cuts.extend(r1.panels.iter().flat_map(|p| [p.0, p.1]));
                    outer_cuts.extend(r2.panels.iter().flat_map(|p| [p.0, p.1]));
                }
            }
            outer_cuts.push(s_max);
            let inner_cuts = sorted_unique(inner_cuts);
            let outer_cuts: Vec<f64> = sorted_unique(outer_cuts).into_iter().filter(|&s| s <= s_max).collect();
            for w in inner_cuts.windows(2) {
                for (y, wq) in quad::gk15_rule(w[0], w[1]) {
                    let x = y.powf(m);
                    nodes.push((x, wq * scale * m / (1.0 + x * x)));
                }
            }
            for w in outer_cuts.windows(2) {
                for (s, wq) in quad::gk15_rule(w[0], w[1]) {
                    nodes.push((s.exp(), wq * scale * (-a * s).exp() / (1.0 + (-2.0 * s).exp())));
                }
            }
        }
        LevyRule { nodes, x2_total: f.x2_mass() }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn eval(&self, u: f64, kind: IntegrandKind) -> f64 {
        match kind {
            IntegrandKind::X2 => self.x2_total,
            _ => {
                let mut acc = quad::KahanSum::default();
                for &(x, w) in &self.nodes {
                    acc.add(w * kind.factor(x, u));
                }
                acc.value()
            }
        }
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1e-300));
    v
}

// ---------------------------------------------------------------------------
// Piecewise-constant measures on the time axis

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct RawPiecewise {
    #[serde(default)]
    breakpoints: Vec<f64>,
    #[serde(default)]
    rates: Vec<f64>,
    #[serde(default)]
    atoms: Vec<(f64, f64)>,
}

/// Signed measure on [0, inf) with piecewise-constant density and atoms.
///
/// With K breakpoints, `rates` has K-1 entries (zero density after the last
/// breakpoint) or K entries (the last rate extends to infinity). Density is
/// zero before the first breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPiecewise", into = "RawPiecewise")]
pub struct PiecewiseSignedMeasure {
    breakpoints: Vec<f64>,
    rates: Vec<f64>,
    atoms: Vec<(f64, f64)>,
}

impl From<PiecewiseSignedMeasure> for RawPiecewise {
    fn from(m: PiecewiseSignedMeasure) -> Self {
        RawPiecewise { breakpoints: m.breakpoints, rates: m.rates, atoms: m.atoms }
    }
}

impl TryFrom<RawPiecewise> for PiecewiseSignedMeasure {
    type Error = Error;
    fn try_from(r: RawPiecewise) -> Result<Self> {
        PiecewiseSignedMeasure::new(r.breakpoints, r.rates, r.atoms)
    }
}

impl Default for PiecewiseSignedMeasure {
    fn default() -> Self {
        Self::zero()
    }
}

impl PiecewiseSignedMeasure {
    pub fn new(breakpoints: Vec<f64>, rates: Vec<f64>, atoms: Vec<(f64, f64)>) -> Result<Self> {
        let k = breakpoints.len();
        if k == 0 && !rates.is_empty() {
            return Err(Error::InvariantViolation("rates given without breakpoints".into()));
        }
        if k > 0 && rates.len() != k && rates.len() + 1 != k {
            return Err(Error::InvariantViolation(format!(
                "{} breakpoints need {} or {} rates, got {}",
                k,
                k - 1,
                k,
                rates.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || rates.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvariantViolation("breakpoints and rates must be finite".into()));
        }
        if k > 0 && breakpoints[0] < 0.0 {
            return Err(Error::InvariantViolation("breakpoints must be >= 0".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvariantViolation("breakpoints must be strictly increasing".into()));
        }
        for &(t, m) in &atoms {
            if !(t.is_finite() && t > 0.0) || !m.is_finite() {
                return Err(Error::InvariantViolation(format!("atom ({t}, {m}) needs a finite time > 0 and finite mass")));
            }
        }
        if atoms.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvariantViolation("atom times must be strictly increasing".into()));
        }
        let m = PiecewiseSignedMeasure { breakpoints, rates, atoms };
        if let Some(end) = m.closed_end() {
            if let Some(&(t, _)) = m.atoms.iter().find(|a| a.0 > end) {
                return Err(Error::InvariantViolation(format!("atom at {t} lies beyond the covered range [0, {end}]")));
            }
        }
        Ok(m)
    }

    pub fn zero() -> Self {
        PiecewiseSignedMeasure { breakpoints: Vec::new(), rates: Vec::new(), atoms: Vec::new() }
    }

    /// Constant density on [0, inf).
    pub fn constant_rate(rate: f64) -> Self {
        PiecewiseSignedMeasure { breakpoints: vec![0.0], rates: vec![rate], atoms: Vec::new() }
    }

    pub fn with_atoms(mut self, atoms: Vec<(f64, f64)>) -> Result<Self> {
        self.atoms = atoms;
        Self::new(self.breakpoints, self.rates, self.atoms)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// True when the density is defined on all of [0, inf).
    pub fn is_open(&self) -> bool {
        self.breakpoints.is_empty() || self.rates.len() == self.breakpoints.len()
    }

    fn closed_end(&self) -> Option<f64> {
        if self.is_open() {
            None
        } else {
            self.breakpoints.last().copied()
        }
    }

    /// Rate on [last breakpoint, inf) when open.
    pub fn terminal_rate(&self) -> Option<f64> {
        if self.breakpoints.is_empty() {
            Some(0.0)
        } else if self.is_open() {
            self.rates.last().copied()
        } else {
            None
        }
    }

    /// Right-continuous density at time t.
    pub fn rate_at(&self, t: f64) -> f64 {
        if self.breakpoints.is_empty() || t < self.breakpoints[0] {
            return 0.0;
        }
        let k = self.breakpoints.partition_point(|&b| b <= t) - 1;
        self.rates.get(k).copied().unwrap_or(0.0)
    }

    /// Segments [lo, hi) with constant rate; hi = inf for the open tail.
    fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.rates.iter().enumerate().map(move |(k, &r)| {
            let lo = self.breakpoints[k];
            let hi = self.breakpoints.get(k + 1).copied().unwrap_or(f64::INFINITY);
            (lo, hi, r)
        })
    }

    pub fn density_integral(&self, s: f64, t: f64) -> f64 {
        neumaier(self.segments().map(|(lo, hi, r)| r * overlap(lo, hi, s, t)))
    }

    fn abs_density_integral(&self, s: f64, t: f64) -> f64 {
        neumaier(self.segments().map(|(lo, hi, r)| r.abs() * overlap(lo, hi, s, t)))
    }

    /// Atoms with time in (s, t].
    pub fn atoms_in(&self, s: f64, t: f64) -> &[(f64, f64)] {
        let lo = self.atoms.partition_point(|a| a.0 <= s);
        let hi = self.atoms.partition_point(|a| a.0 <= t);
        &self.atoms[lo..hi.max(lo)]
    }

    pub fn atom_at(&self, t: f64) -> f64 {
        self.atoms.iter().find(|a| a.0 == t).map(|a| a.1).unwrap_or(0.0)
    }

    /// m((s, t]).
    pub fn mass(&self, s: f64, t: f64) -> f64 {
        if t <= s {
            return 0.0;
        }
        self.density_integral(s, t) + neumaier(self.atoms_in(s, t).iter().map(|a| a.1))
    }

    /// m((0, t]).
    pub fn cumulative(&self, t: f64) -> f64 {
        self.mass(0.0, t)
    }

    /// |m|((s, t]).
    pub fn variation(&self, s: f64, t: f64) -> f64 {
        if t <= s {
            return 0.0;
        }
        self.abs_density_integral(s, t) + neumaier(self.atoms_in(s, t).iter().map(|a| a.1.abs()))
    }

    /// Breakpoints strictly inside (s, t).
    pub fn breakpoints_in(&self, s: f64, t: f64) -> Vec<f64> {
        self.breakpoints.iter().copied().filter(|&b| b > s && b < t).collect()
    }

    pub fn scaled(&self, k: f64) -> Self {
        PiecewiseSignedMeasure {
            breakpoints: self.breakpoints.clone(),
            rates: self.rates.iter().map(|r| r * k).collect(),
            atoms: self.atoms.iter().map(|&(t, m)| (t, m * k)).collect(),
        }
    }

    /// Sum of two measures on the union of their breakpoints.
    pub fn add(&self, other: &Self) -> Self {
        let mut bps: Vec<f64> = self.breakpoints.iter().chain(other.breakpoints.iter()).copied().collect();
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        let open = self.is_open() && !self.breakpoints.is_empty() || other.is_open() && !other.breakpoints.is_empty();
        let nrates = if bps.is_empty() {
            0
        } else if open {
            bps.len()
        } else {
            bps.len() - 1
        };
        let rates = (0..nrates).map(|k| self.rate_at(bps[k]) + other.rate_at(bps[k])).collect();
        let mut atoms: Vec<(f64, f64)> = self.atoms.iter().chain(other.atoms.iter()).copied().collect();
        atoms.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (t, m) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == t => last.1 += m,
                _ => merged.push((t, m)),
            }
        }
        PiecewiseSignedMeasure { breakpoints: bps, rates, atoms: merged }
    }
}

fn overlap(lo: f64, hi: f64, s: f64, t: f64) -> f64 {
    let a = lo.max(s);
    let b = hi.min(t);
    if b > a {
        b - a
    } else {
        0.0
    }
}

/// Total variation |m|((0, t]).
pub fn total_variation(m: &PiecewiseSignedMeasure, t: f64) -> f64 {
    m.variation(0.0, t)
}

/// Nonnegative piecewise-constant measure (houses beta).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawPiecewise", into = "RawPiecewise")]
pub struct MonotoneMeasure(PiecewiseSignedMeasure);

impl From<MonotoneMeasure> for RawPiecewise {
    fn from(m: MonotoneMeasure) -> Self {
        m.0.into()
    }
}

impl TryFrom<RawPiecewise> for MonotoneMeasure {
    type Error = Error;
    fn try_from(r: RawPiecewise) -> Result<Self> {
        MonotoneMeasure::new(PiecewiseSignedMeasure::try_from(r)?)
    }
}

impl MonotoneMeasure {
    pub fn new(m: PiecewiseSignedMeasure) -> Result<Self> {
        if m.rates.iter().any(|&r| r < 0.0) || m.atoms.iter().any(|a| a.1 < 0.0) {
            return Err(Error::InvariantViolation("monotone measure needs nonnegative rates and atoms".into()));
        }
        Ok(MonotoneMeasure(m))
    }

    pub fn zero() -> Self {
        MonotoneMeasure(PiecewiseSignedMeasure::zero())
    }

    pub fn constant_rate(rate: f64) -> Result<Self> {
        Self::new(PiecewiseSignedMeasure::constant_rate(rate))
    }

    pub fn inner(&self) -> &PiecewiseSignedMeasure {
        &self.0
    }
}

impl std::ops::Deref for MonotoneMeasure {
    type Target = PiecewiseSignedMeasure;
    fn deref(&self) -> &PiecewiseSignedMeasure {
        &self.0
    }
}

// ---------------------------------------------------------------------------
// Levy kernel nu(dx dy)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousPiece {
    /// [lo, hi); hi = None means unbounded.
    pub interval: (f64, Option<f64>),
    pub measure: LevyMeasure,
}

impl HomogeneousPiece {
    fn hi(&self) -> f64 {
        self.interval.1.unwrap_or(f64::INFINITY)
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.interval.0 && t < self.hi()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedAtom {
    pub time: f64,
    pub measure: LevyMeasure,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct RawKernel {
    #[serde(default)]
    homogeneous: Vec<HomogeneousPiece>,
    #[serde(default)]
    fixed_atoms: Vec<FixedAtom>,
}

/// nu = sum of dt (x) F_k on intervals plus fixed-time atoms delta_tau (x) G_tau.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawKernel", into = "RawKernel")]
pub struct LevyKernel {
    homogeneous: Vec<HomogeneousPiece>,
    fixed_atoms: Vec<FixedAtom>,
}

impl From<LevyKernel> for RawKernel {
    fn from(k: LevyKernel) -> Self {
        RawKernel { homogeneous: k.homogeneous, fixed_atoms: k.fixed_atoms }
    }
}

impl TryFrom<RawKernel> for LevyKernel {
    type Error = Error;
    fn try_from(r: RawKernel) -> Result<Self> {
        LevyKernel::new(r.homogeneous, r.fixed_atoms)
    }
}

impl LevyKernel {
    pub fn new(homogeneous: Vec<HomogeneousPiece>, fixed_atoms: Vec<FixedAtom>) -> Result<Self> {
        for p in &homogeneous {
            p.measure.validate()?;
            if !(p.interval.0.is_finite() && p.interval.0 >= 0.0) || p.hi() <= p.interval.0 {
                return Err(Error::InvariantViolation(format!("bad kernel interval {:?}", p.interval)));
            }
        }
        let mut atoms: Vec<FixedAtom> = Vec::new();
        let mut sorted = fixed_atoms;
        sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
        for a in sorted {
            a.measure.validate()?;
            if !(a.time.is_finite() && a.time > 0.0) {
                return Err(Error::InvariantViolation(format!("kernel atom time {} must be > 0", a.time)));
            }
            match atoms.last_mut() {
                Some(last) if last.time == a.time => {
                    last.measure = LevyMeasure::sum([&last.measure, &a.measure]);
                }
                _ => atoms.push(a),
            }
        }
        Ok(LevyKernel { homogeneous, fixed_atoms: atoms })
    }

    pub fn zero() -> Self {
        LevyKernel::default()
    }

    /// dt (x) F on [0, inf).
    pub fn homogeneous(f: LevyMeasure) -> Result<Self> {
        Self::new(vec![HomogeneousPiece { interval: (0.0, None), measure: f }], Vec::new())
    }

    pub fn pieces(&self) -> &[HomogeneousPiece] {
        &self.homogeneous
    }

    pub fn fixed_atoms(&self) -> &[FixedAtom] {
        &self.fixed_atoms
    }

    pub fn is_zero(&self) -> bool {
        self.homogeneous.iter().all(|p| p.measure.is_zero()) && self.fixed_atoms.iter().all(|a| a.measure.is_zero())
    }

    /// Jump-rate measure active at time t (right-continuous).
    pub fn rate_measure_at(&self, t: f64) -> LevyMeasure {
        LevyMeasure::sum(self.homogeneous.iter().filter(|p| p.contains(t)).map(|p| &p.measure))
    }

    pub fn atom_at(&self, t: f64) -> Option<&LevyMeasure> {
        self.fixed_atoms.iter().find(|a| a.time == t).map(|a| &a.measure)
    }

    pub fn atoms_in(&self, s: f64, t: f64) -> impl Iterator<Item = &FixedAtom> {
        self.fixed_atoms.iter().filter(move |a| a.time > s && a.time <= t)
    }

    /// Interval endpoints strictly inside (s, t).
    pub fn breakpoints_in(&self, s: f64, t: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .homogeneous
            .iter()
            .flat_map(|p| [Some(p.interval.0), p.interval.1])
            .flatten()
            .filter(|&b| b > s && b < t)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Integral of x^2/(1+x^2) over (0,inf) x (s,t].
    pub fn x2_mass(&self, s: f64, t: f64) -> f64 {
        if t <= s {
            return 0.0;
        }
        let cont: f64 = self.homogeneous.iter().map(|p| overlap(p.interval.0, p.hi(), s, t) * p.measure.x2_mass()).sum();
        let at: f64 = self.atoms_in(s, t).map(|a| a.measure.x2_mass()).sum();
        cont + at
    }

    /// x^2/(1+x^2)-mass per unit time at t.
    pub fn x2_rate_at(&self, t: f64) -> f64 {
        self.homogeneous.iter().filter(|p| p.contains(t)).map(|p| p.measure.x2_mass()).sum()
    }

    /// nu([x, inf) x (s, t]).
    pub fn tail(&self, x: f64, s: f64, t: f64) -> f64 {
        if t <= s {
            return 0.0;
        }
        let cont: f64 = self.homogeneous.iter().map(|p| overlap(p.interval.0, p.hi(), s, t) * p.measure.tail(x)).sum();
        let at: f64 = self.atoms_in(s, t).map(|a| a.measure.tail(x)).sum();
        cont + at
    }

    /// Point-mass locations in x of the atom part at time tau and of any
    /// homogeneous piece active in (s, t].
    pub fn x_atoms(&self, s: f64, t: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .homogeneous
            .iter()
            .filter(|p| overlap(p.interval.0, p.hi(), s, t) > 0.0)
            .flat_map(|p| p.measure.atom_locations())
            .collect();
        v.extend(self.atoms_in(s, t).flat_map(|a| a.measure.atom_locations()));
        v
    }

    pub fn scaled(&self, k: f64) -> Self {
        LevyKernel {
            homogeneous: self
                .homogeneous
                .iter()
                .map(|p| HomogeneousPiece { interval: p.interval, measure: p.measure.scaled(k) })
                .collect(),
            fixed_atoms: self.fixed_atoms.iter().map(|a| FixedAtom { time: a.time, measure: a.measure.scaled(k) }).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut h = self.homogeneous.clone();
        h.extend(other.homogeneous.iter().cloned());
        let mut a = self.fixed_atoms.clone();
        a.extend(other.fixed_atoms.iter().cloned());
        Self::new(h, a)
    }
}

// ---------------------------------------------------------------------------
// Limit triplet

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct RawTriplet {
    #[serde(default)]
    alpha: PiecewiseSignedMeasure,
    #[serde(default)]
    beta: MonotoneMeasure,
    #[serde(default)]
    nu: LevyKernel,
}

const TRIPLET_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTriplet", into = "RawTriplet")]
pub struct LimitTriplet {
    pub alpha: PiecewiseSignedMeasure,
    pub beta: MonotoneMeasure,
    pub nu: LevyKernel,
}

impl From<LimitTriplet> for RawTriplet {
    fn from(t: LimitTriplet) -> Self {
        RawTriplet { alpha: t.alpha, beta: t.beta, nu: t.nu }
    }
}

impl TryFrom<RawTriplet> for LimitTriplet {
    type Error = Error;
    fn try_from(r: RawTriplet) -> Result<Self> {
        LimitTriplet::new(r.alpha, r.beta, r.nu)
    }
}

impl LimitTriplet {
    pub fn new(alpha: PiecewiseSignedMeasure, beta: MonotoneMeasure, nu: LevyKernel) -> Result<Self> {
        for &(t, m) in alpha.atoms() {
            if m < -1.0 {
                return Err(Error::InvariantViolation(format!("alpha atom {m} at {t} is below -1")));
            }
        }
        // beta atoms must carry exactly the nu-atom part
        let mut times: Vec<f64> = beta.atoms().iter().map(|a| a.0).collect();
        times.extend(nu.fixed_atoms().iter().map(|a| a.time));
        times.sort_by(f64::total_cmp);
        times.dedup();
        for t in times {
            let db = beta.atom_at(t);
            let want = 0.5 * nu.atom_at(t).map(|m| m.x2_mass()).unwrap_or(0.0);
            if (db - want).abs() > TRIPLET_REL_TOL * want.abs().max(1e-300) + 1e-14 {
                return Err(Error::InvariantViolation(format!(
                    "beta atom at {t} is {db}, but half the x^2/(1+x^2) mass of the nu atom there is {want}"
                )));
            }
        }
        // density part of nu must not exceed the beta density
        let mut cuts: Vec<f64> = vec![0.0];
        cuts.extend(beta.breakpoints().iter().copied());
        cuts.extend(nu.breakpoints_in(0.0, f64::INFINITY));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        for &c in &cuts {
            let need = 0.5 * nu.x2_rate_at(c);
            let have = beta.rate_at(c);
            if need > have * (1.0 + TRIPLET_REL_TOL) + 1e-14 {
                return Err(Error::InvariantViolation(format!(
                    "nu density needs beta rate >= {need} at time {c}, found {have}"
                )));
            }
        }
        Ok(LimitTriplet { alpha, beta, nu })
    }

    pub fn zero() -> Self {
        LimitTriplet { alpha: PiecewiseSignedMeasure::zero(), beta: MonotoneMeasure::zero(), nu: LevyKernel::zero() }
    }

    /// All times in (s, t) where some characteristic changes rate or has an atom,
    /// plus atom times equal to t.
    pub fn cut_points(&self, s: f64, t: f64) -> Vec<f64> {
        let mut v = self.alpha.breakpoints_in(s, t);
        v.extend(self.beta.breakpoints_in(s, t));
        v.extend(self.nu.breakpoints_in(s, t));
        v.extend(self.alpha.atoms_in(s, t).iter().map(|a| a.0));
        v.extend(self.beta.atoms_in(s, t).iter().map(|a| a.0));
        v.extend(self.nu.atoms_in(s, t).map(|a| a.time));
        v.retain(|&x| x > s && x < t);
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Atom times in (s, t].
    pub fn atom_times(&self, s: f64, t: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self.alpha.atoms_in(s, t).iter().map(|a| a.0).collect();
        v.extend(self.beta.atoms_in(s, t).iter().map(|a| a.0));
        v.extend(self.nu.atoms_in(s, t).map(|a| a.time));
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// mu~((s,t]) = |alpha| + beta + integral of x^2/(1+x^2) nu.
    pub fn mu_tilde(&self, s: f64, t: f64) -> f64 {
        self.alpha.variation(s, t) + self.beta.mass(s, t) + self.nu.x2_mass(s, t)
    }

    /// beta~ density at time y.
    pub fn tilde_beta_rate_at(&self, y: f64) -> f64 {
        self.beta.rate_at(y) - 0.5 * self.nu.x2_rate_at(y)
    }
}

/// beta~(t) = beta(t) - integral of x^2/(2(1+x^2)) nu over (0,inf) x (0,t].
pub fn tilde_beta(trip: &LimitTriplet, t: f64) -> Result<f64> {
    let tol = 1e-9;
    let mut cuts = vec![0.0];
    cuts.extend(trip.beta.breakpoints_in(0.0, t));
    cuts.extend(trip.nu.breakpoints_in(0.0, t));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    for &c in &cuts {
        let r = trip.tilde_beta_rate_at(c);
        if r < -tol * (1.0 + trip.beta.rate_at(c)) {
            return Err(Error::InvariantViolation(format!("beta~ has negative density {r} at {c}")));
        }
    }
    for time in trip.atom_times(0.0, t) {
        let d = trip.beta.atom_at(time) - 0.5 * trip.nu.atom_at(time).map(|m| m.x2_mass()).unwrap_or(0.0);
        if d.abs() > tol * (1.0 + trip.beta.atom_at(time)) {
            return Err(Error::InvariantViolation(format!("beta~ jumps by {d} at {time}")));
        }
    }
    Ok(trip.beta.cumulative(t) - 0.5 * trip.nu.x2_mass(0.0, t))
}

// ---------------------------------------------------------------------------
// Constants c1, c2, c3

/// c1'(C) = sup 2|g(x,lam)|(1+x^2)/x^2 over x >= -1, 0 <= lam <= C.
pub fn const_c1_prime(c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    // x = z on [-1, 0], x = z/(1-z) on (0, 1)
    let x_of = |z: f64| if z <= 0.0 { z } else { z / (1.0 - z) };
    let f = |z: f64, lam: f64| 2.0 * g_factor(x_of(z), lam).abs();
    let inner_sup = |lam: f64, n: usize| {
        let (_, v) = quad::grid_sup(&|z: f64| f(z, lam), -1.0, 1.0 - 1e-12, n);
        v
    };
    let mut prev = f64::NAN;
    let mut n = 64;
    let mut best = 0.0;
    while n <= 4096 {
        let (_, v) = quad::grid_sup(&|lam: f64| inner_sup(lam, n), 0.0, c, n / 4);
        best = v.max(2.0);
        if prev.is_finite() && (best - prev).abs() <= 1e-9 * best {
            break;
        }
        prev = best;
        n *= 2;
    }
    best
}

pub fn const_c1(c: f64) -> f64 {
    c + const_c1_prime(c)
}

/// c2(eta, T) = sup |H_x'(v)| over x >= 0, v in [eta, T], with
/// H_x'(v) = x e^{-vx} + v (vx) Phi1(vx). Writing w = vx this is
/// A(w)/v + v B(w), convex in v, so only v in {eta, T} matter.
pub fn const_c2(eta: f64, t: f64) -> f64 {
    let a = |w: f64| w * (-w).exp();
    let b = |w: f64| w * phi1(w);
    let f = |z: f64| {
        let w = z / (1.0 - z);
        let aw = a(w);
        let bw = b(w);
        (aw / eta + eta * bw).max(aw / t + t * bw)
    };
    let mut prev = f64::NAN;
    let mut n = 256;
    let mut best = t;
    while n <= 1 << 16 {
        let (_, v) = quad::grid_sup(&f, 0.0, 1.0 - 1e-12, n);
        best = v.max(t);
        if prev.is_finite() && (best - prev).abs() <= 1e-10 * best {
            break;
        }
        prev = best;
        n *= 4;
    }
    best
}

pub fn const_c3(eta: f64, t: f64) -> f64 {
    1.0 + t + const_c2(eta, t)
}
