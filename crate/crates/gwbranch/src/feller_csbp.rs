//! Closed forms when nu = 0, extinction probabilities, and the autonomous
//! CSBP equation used as an oracle for constant characteristics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{levy_integral, IntegrandKind, LevyKernel, LevyMeasure, LimitTriplet, MonotoneMeasure, PiecewiseSignedMeasure};

/// alpha(t) + sum over atoms <= t of log(1 + da) - da; -inf once an atom of -1 is passed.
pub fn alpha_bar(alpha: &PiecewiseSignedMeasure, t: f64) -> f64 {
    alpha_bar_between(alpha, 0.0, t)
}

/// alpha_bar(t) - alpha_bar(s) for s <= t.
fn alpha_bar_between(alpha: &PiecewiseSignedMeasure, s: f64, t: f64) -> f64 {
    if t <= s {
        return 0.0;
    }
    let mut acc = alpha.density_integral(s, t);
    for &(_, da) in alpha.atoms_in(s, t) {
        if da <= -1.0 {
            return f64::NEG_INFINITY;
        }
        acc += da.ln_1p();
    }
    acc
}

/// Points where the alpha or beta rates change or alpha jumps, inside (s, t).
fn cuts(alpha: &PiecewiseSignedMeasure, beta: &PiecewiseSignedMeasure, s: f64, t: f64) -> Vec<f64> {
    let mut v = vec![s];
    v.extend(alpha.breakpoints_in(s, t));
    v.extend(beta.breakpoints_in(s, t));
    v.extend(alpha.atoms_in(s, t).iter().map(|a| a.0).filter(|&x| x < t));
    v.push(t);
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Integral over (s, t] of exp(-(alpha_bar(y) - alpha_bar(s))) beta(dy), exact
/// on each constant-rate piece; also returns the exponent at t.
fn weighted_beta(alpha: &PiecewiseSignedMeasure, beta: &PiecewiseSignedMeasure, s: f64, t: f64) -> (f64, f64) {
    let pts = cuts(alpha, beta, s, t);
    let mut d: f64 = 0.0; // alpha_bar(lo) - alpha_bar(s), right value
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = 0.5 * (lo + hi);
        let a = alpha.rate_at(mid);
        let b = beta.rate_at(mid);
        let len = hi - lo;
        if b != 0.0 && d.is_finite() {
            let factor = if a == 0.0 { len } else { -(-a * len).exp_m1() / a };
            total += b * (-d).exp() * factor;
        }
        d += a * len;
        let da = alpha.atom_at(hi);
        if da != 0.0 {
            d = if da <= -1.0 { f64::NEG_INFINITY } else { d + da.ln_1p() };
        }
    }
    (total, d)
}

fn reject_beta_atoms(beta: &PiecewiseSignedMeasure) -> Result<()> {
    match beta.atoms().first() {
        Some(&(t, _)) => Err(Error::BetaAtomForbidden(t)),
        None => Ok(()),
    }
}

/// Closed form of u(s, t, lam) when nu = 0.
pub fn u_feller(alpha: &PiecewiseSignedMeasure, beta: &MonotoneMeasure, s: f64, t: f64, lam: f64) -> Result<f64> {
    reject_beta_atoms(beta)?;
    if !(lam > 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be > 0, got {lam}")));
    }
    if !(0.0 <= s && s <= t) {
        return Err(Error::InvalidInput(format!("need 0 <= s <= t, got s = {s}, t = {t}")));
    }
    let (integral, d_t) = weighted_beta(alpha, beta, s, t);
    if d_t == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    Ok(1.0 / ((-d_t).exp() / lam + integral))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Horizon {
    Finite { t: f64 },
    Infinite,
}

/// P(X(T) = 0 | X(s) = x), or the eventual extinction probability.
pub fn extinction_prob(alpha: &PiecewiseSignedMeasure, beta: &MonotoneMeasure, s: f64, x: f64, horizon: Horizon) -> Result<f64> {
    reject_beta_atoms(beta)?;
    if !(x >= 0.0) || !(s >= 0.0) {
        return Err(Error::InvalidInput("need s >= 0 and x >= 0".into()));
    }
    let end = match horizon {
        Horizon::Finite { t } => t,
        Horizon::Infinite => f64::INFINITY,
    };
    if let Some(&(tau, _)) = alpha.atoms_in(s, end).iter().find(|a| a.1 <= -1.0) {
        return Err(Error::Annihilation(tau));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let denom = match horizon {
        Horizon::Finite { t } => {
            if t < s {
                return Err(Error::InvalidInput("horizon must be >= s".into()));
            }
            weighted_beta(alpha, beta, s, t).0
        }
        Horizon::Infinite => {
            let (ra, rb) = match (alpha.terminal_rate(), beta.terminal_rate()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::TailNotClosed),
            };
            let last = alpha
                .breakpoints()
                .iter()
                .chain(beta.breakpoints().iter())
                .chain(alpha.atoms().iter().map(|a| &a.0))
                .copied()
                .fold(s, f64::max);
            let (head, d) = weighted_beta(alpha, beta, s, last);
            let tail = if rb == 0.0 {
                0.0
            } else if ra <= 0.0 {
                f64::INFINITY
            } else {
                rb * (-d).exp() / ra
            };
            head + tail
        }
    };
    if denom.is_infinite() {
        return Ok(1.0);
    }
    Ok((-x / denom).exp())
}

/// Constant characteristics (a, b~, F) in the x/(1+x^2) compensation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingMechanism {
    pub a: f64,
    pub b_tilde: f64,
    #[serde(default)]
    pub f: LevyMeasure,
}

impl BranchingMechanism {
    pub fn new(a: f64, b_tilde: f64, f: LevyMeasure) -> Result<Self> {
        if !(b_tilde >= 0.0) || !a.is_finite() {
            return Err(Error::InvalidInput(format!("need finite a and b~ >= 0, got a = {a}, b~ = {b_tilde}")));
        }
        f.validate()?;
        Ok(BranchingMechanism { a, b_tilde, f })
    }

    /// Mechanism given with the x 1_{x<=1} compensation: shift the drift to
    /// the internal convention.
    pub fn from_indicator_drift(a_indicator: f64, b_tilde: f64, f: LevyMeasure) -> Result<Self> {
        let shift = f.compensation_shift();
        Self::new(a_indicator + shift, b_tilde, f)
    }

    /// Drift in the x 1_{x<=1} compensation.
    pub fn indicator_drift(&self) -> f64 {
        self.a - self.f.compensation_shift()
    }

    /// Triplet (a t, (b~ + m2(F)/2) t, dt F).
    pub fn to_triplet(&self) -> Result<LimitTriplet> {
        let beta_rate = self.b_tilde + 0.5 * self.f.x2_mass();
        LimitTriplet::new(
            PiecewiseSignedMeasure::constant_rate(self.a),
            MonotoneMeasure::constant_rate(beta_rate)?,
            LevyKernel::homogeneous(self.f.clone())?,
        )
    }

    /// a v - b~ v^2 + integral of g(x, v) F(dx)
    pub fn rhs(&self, v: f64) -> Result<f64> {
        let levy = if self.f.is_zero() { 0.0 } else { levy_integral(&self.f, v.max(0.0), IntegrandKind::G)? };
        Ok(self.a * v - self.b_tilde * v * v + levy)
    }
}

const EXPLOSION_GUARD: f64 = 1e200;

/// v(tau) for v' = a v - b~ v^2 + int g(x, v) F(dx), v(0) = lam, by
/// Dormand-Prince 5(4) with tolerance 1e-10.
pub fn csbp_u_homogeneous(mech: &BranchingMechanism, tau: f64, lam: f64) -> Result<f64> {
    if !(tau >= 0.0) || !(lam > 0.0) {
        return Err(Error::InvalidInput(format!("need tau >= 0 and lam > 0, got {tau}, {lam}")));
    }
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];
    let tol = 1e-10;
    let mut r = 0.0;
    let mut v = lam;
    let mut h = (tau / 64.0).max(1e-12).min(tau);
    let mut steps = 0usize;
    while r < tau {
        if tau - r < h {
            h = tau - r;
        }
        let mut k = [0.0; 7];
        k[0] = mech.rhs(v)?;
        for i in 1..7 {
            let mut y = v;
            for j in 0..i {
                y += h * A[i][j] * k[j];
            }
            k[i] = mech.rhs(y)?;
        }
        let v5 = v + h * (0..7).map(|i| B5[i] * k[i]).sum::<f64>();
        let v4 = v + h * (0..7).map(|i| B4[i] * k[i]).sum::<f64>();
        let err = (v5 - v4).abs() / (1.0 + v5.abs());
        if !v5.is_finite() || v5 > EXPLOSION_GUARD {
            return Err(Error::Explosion { tau: r });
        }
        if err <= tol {
            r += h;
            v = v5;
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
        h *= fac;
        steps += 1;
        if steps > 1_000_000 || h < 1e-15 {
            return Err(Error::NoConvergence { iterations: steps, change: err });
        }
    }
    Ok(v)
}
