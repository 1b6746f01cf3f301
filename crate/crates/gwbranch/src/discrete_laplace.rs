//! Exact discrete Laplace exponents u_n(s, t, lam) by backwards recursion,
//! bottleneck profiles and the constructive bounds on u_n.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::environment::{block_characteristics, cumulative_triplet, EnvironmentModel, PreparedLaw};
use crate::error::{Error, Result};
use crate::measures::const_c1;
use crate::quad::{grid_sup, KahanSum};

pub fn psi_step(env: &EnvironmentModel, i: u64, lam: f64) -> Result<f64> {
    let law = PreparedLaw::new(env.law_at(i)?)?;
    Ok(law.psi(lam, env.n() as f64))
}

pub fn epsilon_step(env: &EnvironmentModel, i: u64, lam: f64) -> Result<f64> {
    let law = PreparedLaw::new(env.law_at(i)?)?;
    Ok(law.epsilon(lam, env.n() as f64))
}

/// u_n(t_i, t, lam) for i_lo <= i <= i_hi.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTable {
    pub i_lo: u64,
    pub i_hi: u64,
    pub t: f64,
    pub lambda: f64,
    /// values[k] = u_n(t_{i_lo + k}, t, lam); the last entry is lam
    pub values: Vec<f64>,
    pub overflow: bool,
}

impl StepTable {
    pub fn value_at_generation(&self, i: u64) -> Option<f64> {
        if i < self.i_lo || i > self.i_hi {
            return None;
        }
        self.values.get((i - self.i_lo) as usize).copied()
    }

    /// CSV with columns i, t_i, u.
    pub fn to_csv(&self, env: &EnvironmentModel) -> String {
        let mut s = String::from("i,t_i,u\n");
        for (k, u) in self.values.iter().enumerate() {
            let i = self.i_lo + k as u64;
            s.push_str(&format!("{},{},{}\n", i, env.time_of(i), u));
        }
        s
    }
}

/// Backwards sweep over generations lo..hi starting from lam at t_hi; calls
/// `visit(i, u(t_i))` for i = hi down to lo. Returns (u(t_lo), overflow).
fn sweep<F: FnMut(u64, f64)>(env: &EnvironmentModel, lo: u64, hi: u64, lam: f64, mut visit: F) -> Result<(f64, bool)> {
    let prepared = env.prepared()?;
    let n = env.n() as f64;
    let mut u = lam;
    visit(hi, u);
    let runs = env.runs(lo, hi)?;
    for &(j, a, b) in runs.iter().rev() {
        let law = &prepared[j];
        for i in (a..b).rev() {
            u = law.step(u, n);
            // a pgf maps [0,1] into itself, so anything below zero is rounding
            if u < 0.0 {
                u = 0.0;
            }
            if !u.is_finite() {
                return Ok((f64::INFINITY, true));
            }
            visit(i, u);
        }
    }
    Ok((u, false))
}

fn check_times(s: f64, t: f64, lam: f64) -> Result<()> {
    if !(s >= 0.0 && t >= s && t.is_finite()) {
        return Err(Error::InvalidInput(format!("need 0 <= s <= t, got s = {s}, t = {t}")));
    }
    if !(lam >= 0.0) {
        return Err(Error::InvalidInput(format!("need lam >= 0, got {lam}")));
    }
    Ok(())
}

/// u_n(s, t, lam) with the full table of intermediate values.
pub fn u_discrete(env: &EnvironmentModel, s: f64, t: f64, lam: f64) -> Result<(f64, StepTable)> {
    check_times(s, t, lam)?;
    let lo = env.gamma(s);
    let hi = env.gamma(t);
    let mut values = vec![f64::INFINITY; (hi - lo + 1) as usize];
    let (u, overflow) = sweep(env, lo, hi, lam, |i, u| values[(i - lo) as usize] = u)?;
    Ok((u, StepTable { i_lo: lo, i_hi: hi, t, lambda: lam, values, overflow }))
}

/// u_n(s, t, lam) only.
pub fn u_discrete_value(env: &EnvironmentModel, s: f64, t: f64, lam: f64) -> Result<f64> {
    check_times(s, t, lam)?;
    Ok(sweep(env, env.gamma(s), env.gamma(t), lam, |_, _| {})?.0)
}

/// |u_n(t1,t3,lam) - u_n(t1,t2,u_n(t2,t3,lam))|.
pub fn composition_residual(env: &EnvironmentModel, t1: f64, t2: f64, t3: f64, lam: f64) -> Result<f64> {
    if !(t1 <= t2 && t2 <= t3) {
        return Err(Error::InvalidInput("composition residual needs t1 <= t2 <= t3".into()));
    }
    let direct = u_discrete_value(env, t1, t3, lam)?;
    let inner = u_discrete_value(env, t2, t3, lam)?;
    let nested = u_discrete_value(env, t1, t2, inner)?;
    if direct.is_infinite() && nested.is_infinite() {
        return Ok(0.0);
    }
    Ok((direct - nested).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile {
    pub t: f64,
    pub lambda: f64,
    /// (generation i, y = max(t_i, s_lo), u_n(y, t, lam))
    pub points: Vec<(u64, f64, f64)>,
    pub min_u: f64,
    pub min_y: f64,
}

/// y -> u_n(y, t, lam) on [s_lo, s_hi] (s_hi <= t) from one backwards sweep.
pub fn u_profile(env: &EnvironmentModel, t: f64, lam: f64, s_lo: f64, s_hi: f64) -> Result<Profile> {
    if !(lam > 0.0) {
        return Err(Error::InvalidInput("profile needs lam > 0".into()));
    }
    if !(0.0 <= s_lo && s_lo <= s_hi && s_hi <= t) {
        return Err(Error::InvalidInput(format!("profile window [{s_lo}, {s_hi}] must lie in [0, {t}]")));
    }
    let lo = env.gamma(s_lo);
    let hi_keep = env.gamma(s_hi);
    let mut points = Vec::with_capacity((hi_keep - lo + 1) as usize);
    let (_, overflow) = sweep(env, lo, env.gamma(t), lam, |i, u| {
        if i <= hi_keep {
            points.push((i, env.time_of(i).max(s_lo), u));
        }
    })?;
    if overflow {
        return Err(Error::InvalidInput("profile sweep overflowed".into()));
    }
    points.reverse();
    let (min_y, min_u) = points
        .iter()
        .fold((s_lo, f64::INFINITY), |acc, p| if p.2 < acc.1 { (p.1, p.2) } else { acc });
    Ok(Profile { t, lambda: lam, points, min_u, min_y })
}

/// Lower bounds on w_i from w_i >= a_i w_{i+1} - b_i w_{i+1}^2, 0 <= w <= M.
/// Returns bounds for i = 0..=I where I = a.len().
pub fn lower_bound_w(a: &[f64], b: &[f64], w_last: f64, m: f64, eps: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput("a and b must have the same length".into()));
    }
    if !(w_last > 0.0 && eps > 0.0 && m >= 0.0) {
        return Err(Error::InvalidInput("need w_I > 0, eps > 0 and M >= 0".into()));
    }
    if a.iter().chain(b.iter()).any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidInput("a_i and b_i must be >= 0".into()));
    }
    for (i, (&ai, &bi)) in a.iter().zip(b).enumerate() {
        let value = ai * ai - ai * bi * m;
        if value < eps {
            return Err(Error::HypothesisViolated { index: i, value });
        }
    }
    let big_i = a.len();
    let mut wbar = vec![0.0; big_i + 1];
    wbar[big_i] = 1.0 / w_last;
    for i in (0..big_i).rev() {
        let rho = b[i] * b[i] * m * m / eps;
        wbar[i] = (1.0 + rho) / a[i] * wbar[i + 1] + b[i] / (a[i] * a[i]);
    }
    Ok(wbar.into_iter().map(|x| 1.0 / x).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    /// mu_n(t) = |alpha_n|(t) + beta_n(t)
    pub mu_t: f64,
    /// C = (lam + 2)(1 + B) e^B with B = 2 mu_n(t)
    pub c_bar_u: f64,
    /// sup |epsilon_i(l)| over i < gamma_n(t), l in [0, C]
    pub c_eps: f64,
    pub c1: f64,
    /// (1 + c_eps) c1(C)
    pub delta_u: f64,
    pub max_profile: f64,
    pub profile_within_bound: bool,
    pub pairs_checked: usize,
    pub violations: usize,
    /// max of |u(s) - u(s')| / (delta_u mu_n(s, s'])
    pub max_ratio: f64,
}

/// Constructive bound on u_n and the per-n surrogate of the variation constant,
/// checked on 100 seeded random pairs (s, s').
pub fn apriori_bounds(env: &EnvironmentModel, t: f64, lam: f64) -> Result<AprioriReport> {
    apriori_bounds_seeded(env, t, lam, 0x5eed)
}

pub fn apriori_bounds_seeded(env: &EnvironmentModel, t: f64, lam: f64, seed: u64) -> Result<AprioriReport> {
    check_times(0.0, t, lam)?;
    let ct = cumulative_triplet(env, t)?;
    let mu_t = ct.tv_alpha + ct.beta;
    let big_b = 2.0 * mu_t;
    let c = (lam + 2.0) * (1.0 + big_b) * big_b.exp();
    let g = env.gamma(t);
    let runs = env.runs(0, g)?;
    let prepared = env.prepared()?;
    let nf = env.n() as f64;
    let mut c_eps: f64 = 0.0;
    let mut seen = vec![false; prepared.len()];
    for &(j, _, _) in &runs {
        if !seen[j] {
            seen[j] = true;
            let law = &prepared[j];
            let (_, v) = grid_sup(&|l: f64| law.epsilon(l, nf).abs(), 0.0, c, 512);
            c_eps = c_eps.max(v);
        }
    }
    let c1 = const_c1(c);
    let delta_u = (1.0 + c_eps) * c1;
    let (_, table) = u_discrete(env, 0.0, t, lam)?;
    let max_profile = table.values.iter().copied().fold(0.0, f64::max);

    // prefix sums of |alpha_i| + beta_i over generations
    let chars = block_characteristics(env)?;
    let mut prefix = Vec::with_capacity(g as usize + 1);
    let mut acc = KahanSum::default();
    prefix.push(0.0);
    for &(j, a, b) in &runs {
        let w = chars[j].alpha_i.abs() + chars[j].beta_i;
        for _ in a..b {
            acc.add(w);
            prefix.push(acc.value());
        }
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut violations = 0;
    let mut max_ratio: f64 = 0.0;
    let pairs = 100;
    for _ in 0..pairs {
        let x: f64 = rng.random_range(0.0..=t);
        let y: f64 = rng.random_range(0.0..=t);
        let (s, s2) = if x <= y { (x, y) } else { (y, x) };
        let (gs, gs2) = (env.gamma(s), env.gamma(s2));
        let du = (table.values[gs as usize] - table.values[gs2 as usize]).abs();
        let mu = prefix[gs2 as usize] - prefix[gs as usize];
        let bound = delta_u * mu;
        if du > bound * (1.0 + 1e-12) + 1e-15 {
            violations += 1;
        }
        if bound > 0.0 {
            max_ratio = max_ratio.max(du / bound);
        }
    }
    Ok(AprioriReport {
        mu_t,
        c_bar_u: c,
        c_eps,
        c1,
        delta_u,
        max_profile,
        profile_within_bound: max_profile <= c,
        pairs_checked: pairs,
        violations,
        max_ratio,
    })
}
