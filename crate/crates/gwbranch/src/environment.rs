//! Offspring laws, environments, time changes, the discrete triplet
//! (alpha_n, beta_n, nu_n) and the checkable hypotheses on environments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::measures::{phi1, LimitTriplet};
use crate::quad::{neumaier, KahanSum};

/// Law of the number of children of one individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OffspringLaw {
    FinitePmf { pmf: Vec<(u64, f64)> },
    Poisson { mean: f64 },
    Dirac { k: u64 },
    /// (1-p) delta_0 + p delta_1
    #[serde(rename = "bernoulli01")]
    Bernoulli01 { p: f64 },
    /// (1-1/n) delta_0 + (1/n) delta_n
    PoissonizedSite { n: u64 },
    /// Generating function s + c (1-s)^a.
    StablePgf { a: f64, c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    /// Allowed unassigned probability mass.
    pub mass_budget: f64,
    pub max_atoms: usize,
    /// When the cap is hit, place the missing mass on two neighbouring atoms
    /// that restore the exact mean instead of failing.
    pub mean_preserving_tail: bool,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation { mass_budget: 1e-14, max_atoms: 1 << 21, mean_preserving_tail: true }
    }
}

impl OffspringLaw {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        match self {
            OffspringLaw::FinitePmf { pmf } => {
                if pmf.is_empty() {
                    return bad("empty pmf".into());
                }
                if pmf.iter().any(|&(_, p)| !(p.is_finite() && p >= 0.0)) {
                    return bad("pmf probabilities must be finite and >= 0".into());
                }
                let s = neumaier(pmf.iter().map(|a| a.1));
                if (s - 1.0).abs() > 1e-12 {
                    return bad(format!("pmf sums to {s}, not 1"));
                }
                Ok(())
            }
            OffspringLaw::Poisson { mean } => {
                if mean.is_finite() && *mean > 0.0 {
                    Ok(())
                } else {
                    bad(format!("Poisson mean {mean} must be > 0"))
                }
            }
            OffspringLaw::Dirac { .. } => Ok(()),
            OffspringLaw::Bernoulli01 { p } => {
                if (0.0..=1.0).contains(p) {
                    Ok(())
                } else {
                    bad(format!("Bernoulli parameter {p} outside [0, 1]"))
                }
            }
            OffspringLaw::PoissonizedSite { n } => {
                if *n >= 1 {
                    Ok(())
                } else {
                    bad("poissonized site needs n >= 1".into())
                }
            }
            OffspringLaw::StablePgf { a, c } => {
                if !(*a > 1.0 && *a <= 2.0) {
                    return bad(format!("stable index {a} outside (1, 2]"));
                }
                if !(*c > 0.0 && *c <= 1.0 / a) {
                    return bad(format!("stable scale {c} outside (0, 1/a]"));
                }
                Ok(())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            OffspringLaw::FinitePmf { pmf } => neumaier(pmf.iter().map(|&(k, p)| k as f64 * p)),
            OffspringLaw::Poisson { mean } => *mean,
            OffspringLaw::Dirac { k } => *k as f64,
            OffspringLaw::Bernoulli01 { p } => *p,
            OffspringLaw::PoissonizedSite { .. } => 1.0,
            OffspringLaw::StablePgf { .. } => 1.0,
        }
    }

    pub fn p0(&self) -> f64 {
        match self {
            OffspringLaw::FinitePmf { pmf } => pmf.iter().filter(|a| a.0 == 0).map(|a| a.1).sum(),
            OffspringLaw::Poisson { mean } => (-mean).exp(),
            OffspringLaw::Dirac { k } => {
                if *k == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            OffspringLaw::Bernoulli01 { p } => 1.0 - p,
            OffspringLaw::PoissonizedSite { n } => {
                if *n == 0 {
                    1.0
                } else {
                    1.0 - 1.0 / *n as f64
                }
            }
            OffspringLaw::StablePgf { c, .. } => *c,
        }
    }

    /// E|xi - 1| = 2 p0 + E xi - 1, exact for laws on N.
    pub fn abs_centered_moment(&self) -> f64 {
        2.0 * self.p0() + self.mean() - 1.0
    }

    pub fn pmf(&self) -> Result<Vec<(u64, f64)>> {
        self.pmf_with(Truncation::default())
    }

    /// Sorted (k, P(xi = k)) with zero entries dropped; unbounded laws are
    /// truncated within the mass budget.
    pub fn pmf_with(&self, tr: Truncation) -> Result<Vec<(u64, f64)>> {
        self.validate()?;
        match self {
            OffspringLaw::FinitePmf { pmf } => {
                let mut m: BTreeMap<u64, f64> = BTreeMap::new();
                for &(k, p) in pmf {
                    *m.entry(k).or_insert(0.0) += p;
                }
                Ok(m.into_iter().filter(|a| a.1 > 0.0).collect())
            }
            OffspringLaw::Dirac { k } => Ok(vec![(*k, 1.0)]),
            OffspringLaw::Bernoulli01 { p } => {
                Ok([(0, 1.0 - p), (1, *p)].into_iter().filter(|a| a.1 > 0.0).collect())
            }
            OffspringLaw::PoissonizedSite { n } => {
                let inv = 1.0 / *n as f64;
                if *n == 1 {
                    return Ok(vec![(1, 1.0)]);
                }
                Ok(vec![(0, 1.0 - inv), (*n, inv)])
            }
            OffspringLaw::Poisson { mean } => poisson_pmf(*mean, tr),
            OffspringLaw::StablePgf { a, c } => stable_pmf(*a, *c, tr),
        }
    }
}

fn poisson_pmf(m: f64, tr: Truncation) -> Result<Vec<(u64, f64)>> {
    let lm = m.ln();
    let mut out = Vec::new();
    let mut mass = KahanSum::default();
    let mut mean = KahanSum::default();
    let mut k: u64 = 0;
    loop {
        let p = (k as f64 * lm - m - ln_gamma(k as f64 + 1.0)).exp();
        if p > 0.0 {
            out.push((k, p));
            mass.add(p);
            mean.add(k as f64 * p);
        }
        if k as f64 > m && 1.0 - mass.value() <= tr.mass_budget {
            break;
        }
        if out.len() >= tr.max_atoms {
            return close_tail(out, mass.value(), mean.value(), m, tr);
        }
        k += 1;
    }
    let residual = 1.0 - mass.value();
    if let Some(last) = out.last_mut() {
        last.1 += residual;
    }
    Ok(out)
}

fn stable_pmf(a: f64, c: f64, tr: Truncation) -> Result<Vec<(u64, f64)>> {
    let mut out = vec![(0u64, c)];
    let p1 = 1.0 - a * c;
    if p1 > 0.0 {
        out.push((1, p1));
    }
    let mut mass = KahanSum::default();
    let mut mean = KahanSum::default();
    mass.add(c);
    mass.add(p1);
    mean.add(p1);
    // r_k = (-1)^k binom(a, k), nonnegative for k >= 2 when 1 < a <= 2
    let mut r = -a;
    let mut k: u64 = 1;
    loop {
        k += 1;
        r *= (k as f64 - 1.0 - a) / k as f64;
        if r < 0.0 {
            return Err(Error::InvariantViolation(format!("negative binomial-series coefficient at k = {k}")));
        }
        if r == 0.0 {
            break;
        }
        let p = c * r;
        out.push((k, p));
        mass.add(p);
        mean.add(k as f64 * p);
        if 1.0 - mass.value() <= tr.mass_budget {
            break;
        }
        if out.len() >= tr.max_atoms {
            return close_tail(out, mass.value(), mean.value(), 1.0, tr);
        }
    }
    let residual = 1.0 - mass.value();
    let kmax = out.last().map(|x| x.0).unwrap_or(0);
    // the law is critical; a heavy tail can hold far more mean than the last atom can carry
    if tr.mean_preserving_tail && residual > 0.0 && 1.0 - mean.value() > residual * kmax as f64 {
        return close_tail(out, mass.value(), mean.value(), 1.0, tr);
    }
    if let Some(last) = out.last_mut() {
        last.1 += residual;
    }
    Ok(out)
}

fn close_tail(mut out: Vec<(u64, f64)>, mass: f64, mean: f64, target_mean: f64, tr: Truncation) -> Result<Vec<(u64, f64)>> {
    let r = 1.0 - mass;
    let missing = target_mean - mean;
    let kmax = out.last().map(|a| a.0).unwrap_or(0);
    if !tr.mean_preserving_tail || r <= 0.0 || missing <= r * kmax as f64 {
        return Err(Error::TruncationLoss { lost: r, atoms: out.len() });
    }
    let kstar = missing / r;
    let lo = kstar.floor();
    let w_hi = r * (kstar - lo);
    let w_lo = r - w_hi;
    if w_lo > 0.0 {
        out.push((lo as u64, w_lo));
    }
    if w_hi > 0.0 {
        out.push((lo as u64 + 1, w_hi));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Per-law evaluation of the one-generation Laplace map

/// A law prepared for repeated evaluation of D(v) = E[e^{-v(xi-1)}] - 1.
#[derive(Debug, Clone)]
pub enum PreparedLaw {
    Finite {
        /// (y = k - 1, p)
        atoms: Vec<(f64, f64)>,
        /// log p and k, for the large-v branch
        logs: Vec<(f64, f64)>,
        m1: f64,
    },
    Poisson { m: f64 },
    Dirac { k: f64 },
    Bernoulli { p: f64 },
    Stable { a: f64, c: f64 },
}

impl PreparedLaw {
    pub fn new(law: &OffspringLaw) -> Result<Self> {
        law.validate()?;
        Ok(match law {
            OffspringLaw::Poisson { mean } => PreparedLaw::Poisson { m: *mean },
            OffspringLaw::Dirac { k } => PreparedLaw::Dirac { k: *k as f64 },
            OffspringLaw::Bernoulli01 { p } => PreparedLaw::Bernoulli { p: *p },
            OffspringLaw::StablePgf { a, c } => PreparedLaw::Stable { a: *a, c: *c },
            OffspringLaw::FinitePmf { .. } | OffspringLaw::PoissonizedSite { .. } => {
                let pmf = law.pmf()?;
                let atoms: Vec<(f64, f64)> = pmf.iter().map(|&(k, p)| (k as f64 - 1.0, p)).collect();
                let m1 = neumaier(atoms.iter().map(|&(y, p)| y * p));
                let logs = pmf.iter().map(|&(k, p)| (p.ln(), k as f64)).collect();
                PreparedLaw::Finite { atoms, logs, m1 }
            }
        })
    }

    /// D(v) = E[e^{-v(xi-1)}] - 1 > -1.
    pub fn d(&self, v: f64) -> f64 {
        match self {
            PreparedLaw::Finite { atoms, m1, .. } => {
                let second = neumaier(atoms.iter().map(|&(y, p)| p * y * y * phi1(v * y)));
                -v * m1 + v * v * second
            }
            PreparedLaw::Poisson { m } => ((1.0 - m) * v + m * v * v * phi1(v)).exp_m1(),
            PreparedLaw::Dirac { k } => (-v * (k - 1.0)).exp_m1(),
            PreparedLaw::Bernoulli { p } => (1.0 - p) * v.exp_m1(),
            PreparedLaw::Stable { a, c } => c * v.exp() * (-(-v).exp_m1()).powf(*a),
        }
    }

    /// -log E[e^{-v xi}], finite unless the law puts no mass at small sizes.
    pub fn neg_log_laplace(&self, v: f64) -> f64 {
        match self {
            PreparedLaw::Finite { logs, .. } => {
                let mx = logs.iter().map(|&(lp, k)| lp - v * k).fold(f64::NEG_INFINITY, f64::max);
                let s = neumaier(logs.iter().map(|&(lp, k)| (lp - v * k - mx).exp()));
                -(mx + s.ln())
            }
            PreparedLaw::Poisson { m } => m * (-(-v).exp_m1()),
            PreparedLaw::Dirac { k } => k * v,
            PreparedLaw::Bernoulli { p } => -(p * (-v).exp_m1()).ln_1p(),
            PreparedLaw::Stable { a, c } => -((-v).exp() + c * (-(-v).exp_m1()).powf(*a)).ln(),
        }
    }

    /// psi(lam) = -n log(1 + D(lam/n)).
    pub fn psi(&self, lam: f64, n: f64) -> f64 {
        if lam == 0.0 {
            return 0.0;
        }
        -n * self.d(lam / n).ln_1p()
    }

    /// Integral of (1 - e^{-lam x}) against nu_i, i.e. -n D(lam/n).
    pub fn first_order(&self, lam: f64, n: f64) -> f64 {
        -n * self.d(lam / n)
    }

    /// epsilon(lam) = log1p(D)/D - 1, zero when D = 0.
    pub fn epsilon(&self, lam: f64, n: f64) -> f64 {
        let d = self.d(lam / n);
        epsilon_of_d(d)
    }

    /// One backwards step: u(t_i) from u(t_{i+1}) = u.
    pub fn step(&self, u: f64, n: f64) -> f64 {
        if u == 0.0 {
            return 0.0;
        }
        let v = u / n;
        if v <= 1.0 {
            u + self.psi(u, n)
        } else {
            n * self.neg_log_laplace(v)
        }
    }
}

pub(crate) fn epsilon_of_d(d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else if d.abs() < 1e-4 {
        // log1p(d)/d - 1 = -d/2 + d^2/3 - d^3/4 + d^4/5
        d * (-0.5 + d * (1.0 / 3.0 + d * (-0.25 + d * 0.2)))
    } else {
        d.ln_1p() / d - 1.0
    }
}

// ---------------------------------------------------------------------------
// Environments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TimeChange {
    /// gamma_n(t) = floor(rate t)
    #[serde(alias = "uniform")]
    UniformRate { rate: f64 },
    /// t_0 = 0 < t_1 < ...; gamma_n(t) = max{i : t_i <= t}
    #[serde(alias = "explicit")]
    ExplicitTimes { times: Vec<f64> },
}

const GAMMA_SNAP: f64 = 1e-9;

impl TimeChange {
    fn validate(&self) -> Result<()> {
        match self {
            TimeChange::UniformRate { rate } => {
                if rate.is_finite() && *rate > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!("time-change rate {rate} must be > 0")))
                }
            }
            TimeChange::ExplicitTimes { times } => {
                if times.first() != Some(&0.0) {
                    return Err(Error::InvalidInput("explicit times must start at 0".into()));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) || times.iter().any(|t| !t.is_finite()) {
                    return Err(Error::InvalidInput("explicit times must be finite and strictly increasing".into()));
                }
                Ok(())
            }
        }
    }

    pub fn gamma(&self, t: f64) -> u64 {
        if t <= 0.0 {
            return 0;
        }
        match self {
            TimeChange::UniformRate { rate } => {
                let x = rate * t;
                let r = x.round();
                if (x - r).abs() <= GAMMA_SNAP * x.abs().max(1.0) {
                    r as u64
                } else {
                    x.floor() as u64
                }
            }
            TimeChange::ExplicitTimes { times } => (times.partition_point(|&s| s <= t) - 1) as u64,
        }
    }

    /// t_i = inf{t : gamma(t) = i}.
    pub fn time_of(&self, i: u64) -> f64 {
        match self {
            TimeChange::UniformRate { rate } => i as f64 / rate,
            TimeChange::ExplicitTimes { times } => times.get(i as usize).copied().unwrap_or(f64::INFINITY),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Number of generations; None (only for the last block) means forever.
    pub count: Option<u64>,
    pub law: OffspringLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawEnv {
    n: u64,
    time_change: TimeChange,
    blocks: Vec<Block>,
}

/// A scaled process: population scale n, run-length encoded laws, time change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnv", into = "RawEnv")]
pub struct EnvironmentModel {
    n: u64,
    time_change: TimeChange,
    blocks: Vec<Block>,
    /// first generation of each block
    starts: Vec<u64>,
}

impl From<EnvironmentModel> for RawEnv {
    fn from(e: EnvironmentModel) -> Self {
        RawEnv { n: e.n, time_change: e.time_change, blocks: e.blocks }
    }
}

impl TryFrom<RawEnv> for EnvironmentModel {
    type Error = Error;
    fn try_from(r: RawEnv) -> Result<Self> {
        EnvironmentModel::new(r.n, r.time_change, r.blocks)
    }
}

impl EnvironmentModel {
    pub fn new(n: u64, time_change: TimeChange, blocks: Vec<Block>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("population scale n must be >= 1".into()));
        }
        time_change.validate()?;
        if blocks.is_empty() {
            return Err(Error::InvalidInput("environment needs at least one block".into()));
        }
        let mut starts = Vec::with_capacity(blocks.len());
        let mut g: u64 = 0;
        for (j, b) in blocks.iter().enumerate() {
            b.law.validate()?;
            starts.push(g);
            match b.count {
                Some(0) => return Err(Error::InvalidInput(format!("block {j} has zero generations"))),
                Some(c) => g = g.saturating_add(c),
                None if j + 1 != blocks.len() => {
                    return Err(Error::InvalidInput("only the last block may run forever".into()))
                }
                None => {}
            }
        }
        Ok(EnvironmentModel { n, time_change, blocks, starts })
    }

    /// Same law forever with gamma_n(t) = floor(rate t).
    pub fn constant(n: u64, rate: f64, law: OffspringLaw) -> Result<Self> {
        Self::new(n, TimeChange::UniformRate { rate }, vec![Block { count: None, law }])
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn time_change(&self) -> &TimeChange {
        &self.time_change
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn gamma(&self, t: f64) -> u64 {
        self.time_change.gamma(t)
    }

    pub fn time_of(&self, i: u64) -> f64 {
        self.time_change.time_of(i)
    }

    /// Index of the block holding generation i.
    pub fn block_index(&self, i: u64) -> Result<usize> {
        let j = self.starts.partition_point(|&s| s <= i) - 1;
        let b = &self.blocks[j];
        match b.count {
            Some(c) if i >= self.starts[j] + c => Err(Error::GenerationNotCovered(i)),
            _ => Ok(j),
        }
    }

    pub fn law_at(&self, i: u64) -> Result<&OffspringLaw> {
        Ok(&self.blocks[self.block_index(i)?].law)
    }

    /// Runs (block, lo, hi) covering generations lo..hi (exclusive), in order.
    pub fn runs(&self, lo: u64, hi: u64) -> Result<Vec<(usize, u64, u64)>> {
        let mut out = Vec::new();
        if hi <= lo {
            return Ok(out);
        }
        let mut i = lo;
        while i < hi {
            let j = self.block_index(i)?;
            let end = match self.blocks[j].count {
                Some(c) => (self.starts[j] + c).min(hi),
                None => hi,
            };
            out.push((j, i, end));
            i = end;
        }
        Ok(out)
    }

    /// Prepared evaluators, one per block.
    pub fn prepared(&self) -> Result<Vec<PreparedLaw>> {
        self.blocks.iter().map(|b| PreparedLaw::new(&b.law)).collect()
    }
}

// ---------------------------------------------------------------------------
// Discrete characteristics

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteGenCharacteristics {
    pub alpha_i: f64,
    pub beta_i: f64,
    /// (x = (k-1)/n, n P(xi = k))
    pub nu_i: Vec<(f64, f64)>,
}

impl DiscreteGenCharacteristics {
    /// nu_i([x, inf)).
    pub fn tail(&self, x: f64) -> f64 {
        let j = self.nu_i.partition_point(|a| a.0 < x);
        neumaier(self.nu_i[j..].iter().map(|a| a.1))
    }

    /// alpha_i and beta_i recomputed from nu_i.
    pub fn from_atoms(nu_i: Vec<(f64, f64)>) -> Self {
        let alpha_i = neumaier(nu_i.iter().map(|&(x, m)| m * x / (1.0 + x * x)));
        let beta_i = 0.5 * neumaier(nu_i.iter().map(|&(x, m)| m * x * x / (1.0 + x * x)));
        DiscreteGenCharacteristics { alpha_i, beta_i, nu_i }
    }
}

pub fn gen_characteristics(law: &OffspringLaw, n: u64) -> Result<DiscreteGenCharacteristics> {
    let pmf = law.pmf()?;
    let nf = n as f64;
    let nu: Vec<(f64, f64)> = pmf.iter().map(|&(k, p)| ((k as f64 - 1.0) / nf, nf * p)).collect();
    Ok(DiscreteGenCharacteristics::from_atoms(nu))
}

/// x -> nu_n([x, inf) x (0, t]) as a step function.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TailStep {
    /// sorted (x, mass)
    atoms: Vec<(f64, f64)>,
    /// suffix sums
    suffix: Vec<f64>,
}

impl TailStep {
    fn from_map(n: u64, m: BTreeMap<i64, f64>) -> Self {
        let nf = n as f64;
        let atoms: Vec<(f64, f64)> = m.into_iter().map(|(k, w)| (k as f64 / nf, w)).collect();
        let mut suffix = vec![0.0; atoms.len() + 1];
        let mut acc = KahanSum::default();
        for j in (0..atoms.len()).rev() {
            acc.add(atoms[j].1);
            suffix[j] = acc.value();
        }
        TailStep { atoms, suffix }
    }

    pub fn at(&self, x: f64) -> f64 {
        let j = self.atoms.partition_point(|a| a.0 < x);
        self.suffix.get(j).copied().unwrap_or(0.0)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulativeTriplet {
    pub alpha: f64,
    pub tv_alpha: f64,
    pub beta: f64,
    pub tail: TailStep,
}

/// Characteristics for each block, computed once.
pub(crate) fn block_characteristics(env: &EnvironmentModel) -> Result<Vec<DiscreteGenCharacteristics>> {
    env.blocks.iter().map(|b| gen_characteristics(&b.law, env.n)).collect()
}

/// Sums over generations i < gamma_n(t).
pub fn cumulative_triplet(env: &EnvironmentModel, t: f64) -> Result<CumulativeTriplet> {
    let g = env.gamma(t);
    cumulative_over(env, 0, g)
}

/// Sums over generations lo <= i < hi.
pub fn cumulative_over(env: &EnvironmentModel, lo: u64, hi: u64) -> Result<CumulativeTriplet> {
    let runs = env.runs(lo, hi)?;
    let mut cache: BTreeMap<usize, DiscreteGenCharacteristics> = BTreeMap::new();
    let mut alpha = KahanSum::default();
    let mut tv = KahanSum::default();
    let mut beta = KahanSum::default();
    let mut tail: BTreeMap<i64, f64> = BTreeMap::new();
    let nf = env.n as f64;
    for (j, a, b) in runs {
        if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(j) {
            e.insert(gen_characteristics(&env.blocks[j].law, env.n)?);
        }
        let ch = &cache[&j];
        let cnt = (b - a) as f64;
        alpha.add(cnt * ch.alpha_i);
        tv.add(cnt * ch.alpha_i.abs());
        beta.add(cnt * ch.beta_i);
        for &(x, m) in &ch.nu_i {
            let k = (x * nf).round() as i64;
            *tail.entry(k).or_insert(0.0) += cnt * m;
        }
    }
    Ok(CumulativeTriplet {
        alpha: alpha.value(),
        tv_alpha: tv.value(),
        beta: beta.value(),
        tail: TailStep::from_map(env.n, tail),
    })
}

/// mu_n((t_lo, t_hi]) with gamma-indexed generations, i.e. |alpha_n| + beta_n
/// summed over gamma(s) <= i < gamma(t).
pub fn mu_n(env: &EnvironmentModel, s: f64, t: f64) -> Result<f64> {
    let c = cumulative_over(env, env.gamma(s), env.gamma(t))?;
    Ok(c.tv_alpha + c.beta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoBottleneckRow {
    pub c: f64,
    /// inf over 0 <= i <= gamma_n(t) of E(xi; xi <= C n)
    pub inf: f64,
    pub argmin_generation: u64,
}

pub fn check_no_bottleneck(env: &EnvironmentModel, t: f64, c_list: &[f64]) -> Result<Vec<NoBottleneckRow>> {
    if c_list.is_empty() || c_list.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::InvalidInput("C list must be nonempty and positive".into()));
    }
    let g = env.gamma(t);
    let runs = env.runs(0, g + 1)?;
    let mut pmfs: BTreeMap<usize, Vec<(u64, f64)>> = BTreeMap::new();
    for &(j, _, _) in &runs {
        if !pmfs.contains_key(&j) {
            pmfs.insert(j, env.blocks[j].law.pmf()?);
        }
    }
    let nf = env.n as f64;
    Ok(c_list
        .iter()
        .map(|&c| {
            let cap = c * nf;
            let mut best = (f64::INFINITY, 0u64);
            for &(j, lo, _) in &runs {
                let e = neumaier(pmfs[&j].iter().filter(|a| a.0 as f64 <= cap).map(|&(k, p)| k as f64 * p));
                if e < best.0 {
                    best = (e, lo);
                }
            }
            NoBottleneckRow { c, inf: best.0, argmin_generation: best.1 }
        })
        .collect())
}

/// n sum_{i < gamma_n(t)} E|xi_bar_i| = sum E|xi_i - 1|.
pub fn check_first_moment(env: &EnvironmentModel, t: f64) -> Result<f64> {
    let runs = env.runs(0, env.gamma(t))?;
    Ok(neumaier(runs.iter().map(|&(j, a, b)| (b - a) as f64 * env.blocks[j].law.abs_centered_moment())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct B1Row {
    pub n: u64,
    pub gamma_rate: f64,
    pub a: f64,
    pub b: f64,
    pub tail: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct B1Report {
    pub probe_xs: Vec<f64>,
    pub rows: Vec<B1Row>,
    /// successive |differences| of (a, b, max tail)
    pub diffs: Vec<(f64, f64, f64)>,
    /// differences shrink along the family
    pub cauchy: bool,
    /// least-squares slope of log F([x,inf)) against log x at the largest n
    pub tail_slope: Option<f64>,
}

/// Estimates of the three limits in the B1 assumption for constant-law environments.
pub fn check_b1(family: &[EnvironmentModel], probe_xs: &[f64]) -> Result<B1Report> {
    let mut rows = Vec::with_capacity(family.len());
    for env in family {
        let rate = match env.time_change {
            TimeChange::UniformRate { rate } => rate,
            _ => return Err(Error::InvalidInput("B1 check needs a uniform time change".into())),
        };
        if env.blocks.len() != 1 {
            return Err(Error::InvalidInput("B1 check needs a constant-law environment".into()));
        }
        let ch = gen_characteristics(&env.blocks[0].law, env.n)?;
        rows.push(B1Row {
            n: env.n,
            gamma_rate: rate,
            a: rate * ch.alpha_i,
            b: 2.0 * rate * ch.beta_i,
            tail: probe_xs.iter().map(|&x| rate * ch.tail(x)).collect(),
        });
    }
    let diffs: Vec<(f64, f64, f64)> = rows
        .windows(2)
        .map(|w| {
            let dt = w[0].tail.iter().zip(&w[1].tail).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            ((w[1].a - w[0].a).abs(), (w[1].b - w[0].b).abs(), dt)
        })
        .collect();
    let tiny = 1e-12;
    let cauchy = diffs.windows(2).all(|w| {
        w[1].0 <= w[0].0 + tiny && w[1].1 <= w[0].1 + tiny && w[1].2 <= w[0].2 + tiny
    });
    let tail_slope = rows.last().and_then(|r| {
        let pts: Vec<(f64, f64)> = probe_xs
            .iter()
            .zip(&r.tail)
            .filter(|(x, f)| **x > 0.0 && **f > 0.0)
            .map(|(x, f)| (x.ln(), f.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 {
            Some(sxy / sxx)
        } else {
            None
        }
    });
    Ok(B1Report { probe_xs: probe_xs.to_vec(), rows, diffs, cauchy, tail_slope })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A1Row {
    pub n: u64,
    pub t: f64,
    pub alpha_err: f64,
    pub tv_alpha_err: f64,
    pub beta_err: f64,
    pub tail_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A2Row {
    pub n: u64,
    pub time: f64,
    pub generation: u64,
    pub alpha_err: f64,
    pub beta_err: f64,
    pub tail_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub a1: Vec<A1Row>,
    pub a2: Vec<A2Row>,
    /// every error column is nonincreasing along the family
    pub monotone: bool,
}

/// Tabulates the A1 and A2 discrepancies between environments and a limit triplet.
pub fn assumption_diagnostics(
    family: &[EnvironmentModel],
    trip: &LimitTriplet,
    times: &[f64],
    xs: &[f64],
) -> Result<AssumptionReport> {
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let x_atoms = trip.nu.x_atoms(0.0, t_max);
    for &x in xs {
        if x_atoms.iter().any(|&a| a == x) {
            return Err(Error::ProbePointOnAtom(x));
        }
    }
    let atom_times = trip.atom_times(0.0, t_max);
    let mut a1 = Vec::new();
    let mut a2 = Vec::new();
    for env in family {
        let chars = block_characteristics(env)?;
        for &t in times {
            let (mut alpha, mut tv, mut beta) = (KahanSum::default(), KahanSum::default(), KahanSum::default());
            let mut tails = vec![KahanSum::default(); xs.len()];
            for (j, lo, hi) in env.runs(0, env.gamma(t))? {
                let ch = &chars[j];
                let cnt = (hi - lo) as f64;
                alpha.add(cnt * ch.alpha_i);
                tv.add(cnt * ch.alpha_i.abs());
                beta.add(cnt * ch.beta_i);
                for (acc, &x) in tails.iter_mut().zip(xs) {
                    acc.add(cnt * ch.tail(x));
                }
            }
            let tail_err = xs
                .iter()
                .zip(&tails)
                .map(|(&x, acc)| (acc.value() - trip.nu.tail(x, 0.0, t)).abs())
                .fold(0.0, f64::max);
            a1.push(A1Row {
                n: env.n,
                t,
                alpha_err: (alpha.value() - trip.alpha.cumulative(t)).abs(),
                tv_alpha_err: (tv.value() - trip.alpha.variation(0.0, t)).abs(),
                beta_err: (beta.value() - trip.beta.cumulative(t)).abs(),
                tail_err,
            });
        }
        for &tau in &atom_times {
            let g = env.gamma(tau);
            let ch = gen_characteristics(env.law_at(g)?, env.n)?;
            let nu_at = trip.nu.atom_at(tau);
            let tail_err = xs
                .iter()
                .map(|&x| (ch.tail(x) - nu_at.map(|m| m.tail(x)).unwrap_or(0.0)).abs())
                .fold(0.0, f64::max);
            a2.push(A2Row {
                n: env.n,
                time: tau,
                generation: g,
                alpha_err: (ch.alpha_i - trip.alpha.atom_at(tau)).abs(),
                beta_err: (ch.beta_i - trip.beta.atom_at(tau)).abs(),
                tail_err,
            });
        }
    }
    let slack = 1e-12;
    let mono_a1 = times.iter().all(|&t| {
        let col: Vec<&A1Row> = a1.iter().filter(|r| r.t == t).collect();
        col.windows(2).all(|w| {
            w[1].alpha_err <= w[0].alpha_err + slack
                && w[1].tv_alpha_err <= w[0].tv_alpha_err + slack
                && w[1].beta_err <= w[0].beta_err + slack
                && w[1].tail_err <= w[0].tail_err + slack
        })
    });
    let mono_a2 = atom_times.iter().all(|&tau| {
        let col: Vec<&A2Row> = a2.iter().filter(|r| r.time == tau).collect();
        col.windows(2).all(|w| {
            w[1].alpha_err <= w[0].alpha_err + slack
                && w[1].beta_err <= w[0].beta_err + slack
                && w[1].tail_err <= w[0].tail_err + slack
        })
    });
    Ok(AssumptionReport { a1, a2, monotone: mono_a1 && mono_a2 })
}
