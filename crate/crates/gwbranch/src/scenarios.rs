//! Ready-made environment families with their limit triplets, the
//! time-scale rule for two-law i.i.d. environments, and built-in examples.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::environment::{Block, EnvironmentModel, OffspringLaw, TimeChange};
use crate::error::{Error, Result};
use crate::feller_csbp::BranchingMechanism;
use crate::measures::{
    FixedAtom, HomogeneousPiece, LevyKernel, LevyMeasure, LimitTriplet, MonotoneMeasure, PiecewiseSignedMeasure,
};

/// A law indexed by n together with its generation rate Gamma_n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LawFamily {
    /// {0: 1/2, 2: 1/2}, Gamma_n = n
    Binary,
    /// Poisson(1), Gamma_n = n
    Poisson,
    /// Support {0, 1, 2} with mean 1 + d/(kappa n), variance ~ v/kappa,
    /// Gamma_n = kappa n, kappa = max(1, v)
    NearCritical { drift: f64, variance: f64 },
    /// Generating function s + c (1-s)^a, Gamma_n = n^(a-1)
    Stable { a: f64, c: f64 },
}

impl LawFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LawFamily::NearCritical { drift, variance } if !(variance > 0.0 && drift.is_finite()) => {
                Err(Error::InvalidInput(format!("near-critical family needs variance > 0, got {variance}")))
            }
            LawFamily::Stable { a, c } if !(a > 1.0 && a < 2.0 && c > 0.0 && c <= 1.0 / a) => {
                Err(Error::InvalidInput(format!("stable family needs 1 < a < 2 and 0 < c <= 1/a, got a = {a}, c = {c}")))
            }
            _ => Ok(()),
        }
    }

    fn kappa(&self) -> f64 {
        match *self {
            LawFamily::NearCritical { variance, .. } => variance.max(1.0),
            _ => 1.0,
        }
    }

    /// Generations per unit time at scale n.
    pub fn gamma_rate(&self, n: u64) -> f64 {
        let nf = n as f64;
        match *self {
            LawFamily::Binary | LawFamily::Poisson => nf,
            LawFamily::NearCritical { .. } => self.kappa() * nf,
            LawFamily::Stable { a, .. } => nf.powf(a - 1.0),
        }
    }

    /// The law at scale n when generations run at `rate` instead of Gamma_n.
    fn law_at_rate(&self, rate: f64) -> Result<OffspringLaw> {
        self.validate()?;
        Ok(match *self {
            LawFamily::Binary => OffspringLaw::FinitePmf { pmf: vec![(0, 0.5), (2, 0.5)] },
            LawFamily::Poisson => OffspringLaw::Poisson { mean: 1.0 },
            LawFamily::NearCritical { drift, variance } => near_critical_law(drift, variance / self.kappa(), rate)?,
            LawFamily::Stable { a, c } => OffspringLaw::StablePgf { a, c },
        })
    }

    pub fn law(&self, n: u64) -> Result<OffspringLaw> {
        self.law_at_rate(self.gamma_rate(n))
    }

    /// Limit characteristics per unit time in the x/(1+x^2) compensation.
    pub fn mechanism(&self) -> Result<BranchingMechanism> {
        self.validate()?;
        match *self {
            LawFamily::Binary | LawFamily::Poisson => BranchingMechanism::new(0.0, 0.5, LevyMeasure::zero()),
            LawFamily::NearCritical { drift, variance } => BranchingMechanism::new(drift, 0.5 * variance, LevyMeasure::zero()),
            LawFamily::Stable { a, c } => {
                let (drift, f) = stable_limit(a, c);
                BranchingMechanism::new(drift, 0.0, f)
            }
        }
    }
}

/// {0: p0, 1: 1 - s, 2: p2} with p0 + p2 = s and p2 - p0 = drift / rate.
fn near_critical_law(drift: f64, s: f64, rate: f64) -> Result<OffspringLaw> {
    let diff = drift / rate;
    let p2 = 0.5 * (s + diff);
    let p0 = 0.5 * (s - diff);
    if p0 < 0.0 || p2 < 0.0 || s > 1.0 {
        return Err(Error::InvalidInput(format!("time scale {rate} too small for drift {drift}")));
    }
    Ok(OffspringLaw::FinitePmf { pmf: vec![(0, p0), (1, 1.0 - s), (2, p2)] })
}

/// Limit of s + c(1-s)^a at Gamma_n = n^(a-1): u' = -c u^a, i.e. Levy density
/// C x^(-1-a) with C Gamma(-a) = c and drift -C times the integral of x^(2-a)/(1+x^2).
pub fn stable_limit(a: f64, c: f64) -> (f64, LevyMeasure) {
    let gamma_neg_a = gamma(2.0 - a) / (a * (a - 1.0));
    let density = c / gamma_neg_a;
    let s = 3.0 - a;
    let moment = std::f64::consts::PI / (2.0 * (0.5 * std::f64::consts::PI * s).sin());
    (-density * moment, LevyMeasure::PowerTail { a, c: density / a })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FellerPiece {
    /// End time of the piece; the last piece extends forever.
    pub until: f64,
    pub drift: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    ConstantGw { law: LawFamily },
    FellerVarying { pieces: Vec<FellerPiece> },
    Catastrophe { base: LawFamily, a: f64, t0: f64 },
    PoissonSite { t0: f64 },
    Bottleneck { p_exponent: f64 },
    RandomTwoLaw { law1: LawFamily, law2: LawFamily, p1: f64, seed: u64, horizon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(flatten)]
    pub kind: ScenarioKind,
    #[serde(default = "default_grid")]
    pub n_grid: Vec<u64>,
}

fn default_grid() -> Vec<u64> {
    vec![100, 1000, 10000]
}

const KINDS: [&str; 6] = ["constant_gw", "feller_varying", "catastrophe", "poisson_site", "bottleneck", "random_two_law"];

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse(format!("line {}: {e}", e.line())))?;
        match v.get("kind").and_then(|k| k.as_str()) {
            Some(k) if KINDS.contains(&k) => {}
            Some(k) => return Err(Error::UnknownKind(k.to_string())),
            None => return Err(Error::Parse("scenario needs a string field \"kind\"".into())),
        }
        let spec: ScenarioSpec = serde_json::from_value(v).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[1] <= w[0]) || self.n_grid[0] == 0 {
            return Err(Error::InvalidInput("n_grid must be nonempty, positive and strictly increasing".into()));
        }
        match &self.kind {
            ScenarioKind::ConstantGw { law } => law.validate(),
            ScenarioKind::FellerVarying { pieces } => {
                if pieces.is_empty() || pieces.windows(2).any(|w| w[1].until <= w[0].until) || pieces[0].until <= 0.0 {
                    return Err(Error::InvalidInput("feller pieces need increasing positive end times".into()));
                }
                if pieces.iter().any(|p| !(p.variance > 0.0)) {
                    return Err(Error::InvalidInput("feller pieces need variance > 0".into()));
                }
                Ok(())
            }
            ScenarioKind::Catastrophe { base, a, t0 } => {
                if !(*a >= -1.0 && *a <= 1.0) || !(*t0 > 0.0) {
                    return Err(Error::InvalidInput("catastrophe needs -1 <= a <= 1 and t0 > 0".into()));
                }
                base.validate()
            }
            ScenarioKind::PoissonSite { t0 } => {
                if *t0 > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput("site time must be > 0".into()))
                }
            }
            ScenarioKind::Bottleneck { p_exponent } => {
                if *p_exponent > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput("p_exponent must be > 0".into()))
                }
            }
            ScenarioKind::RandomTwoLaw { law1, law2, p1, horizon, .. } => {
                if !(*p1 > 0.0 && *p1 < 1.0) || !(*horizon > 0.0) {
                    return Err(Error::InvalidInput("two-law environment needs 0 < p1 < 1 and horizon > 0".into()));
                }
                law1.validate()?;
                law2.validate()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expectations {
    pub summary: String,
    /// u is only solvable to the right of this time.
    pub bottleneck_at: Option<f64>,
    /// Times where the discrete environment places its jump generation.
    pub atom_times: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Built {
    pub env: EnvironmentModel,
    pub triplet: LimitTriplet,
    pub expectations: Expectations,
}

fn triplet_from_mechanism(m: &BranchingMechanism) -> Result<LimitTriplet> {
    m.to_triplet()
}

/// Instantiate the scenario at scale n.
pub fn build(spec: &ScenarioSpec, n: u64) -> Result<Built> {
    spec.validate()?;
    match &spec.kind {
        ScenarioKind::ConstantGw { law } => {
            let rate = law.gamma_rate(n);
            let env = EnvironmentModel::constant(n, rate, law.law(n)?)?;
            let triplet = triplet_from_mechanism(&law.mechanism()?)?;
            Ok(Built {
                env,
                triplet,
                expectations: Expectations { summary: "homogeneous limit".into(), bottleneck_at: None, atom_times: vec![] },
            })
        }
        ScenarioKind::FellerVarying { pieces } => {
            let kappa = pieces.iter().map(|p| p.variance.max(1.0)).fold(1.0, f64::max);
            let rate = kappa * n as f64;
            let mut blocks = Vec::new();
            let mut g0: u64 = 0;
            let mut bps = vec![0.0];
            let mut a_rates = Vec::new();
            let mut b_rates = Vec::new();
            for (k, p) in pieces.iter().enumerate() {
                let law = near_critical_law(p.drift, p.variance / kappa, rate)?;
                a_rates.push(p.drift);
                b_rates.push(0.5 * p.variance);
                if k + 1 == pieces.len() {
                    blocks.push(Block { count: None, law });
                } else {
                    let g1 = (rate * p.until).round() as u64;
                    if g1 > g0 {
                        blocks.push(Block { count: Some(g1 - g0), law });
                    }
                    g0 = g1;
                    bps.push(p.until);
                }
            }
            let env = EnvironmentModel::new(n, TimeChange::UniformRate { rate }, blocks)?;
            let alpha = PiecewiseSignedMeasure::new(bps.clone(), a_rates, vec![])?;
            let beta = MonotoneMeasure::new(PiecewiseSignedMeasure::new(bps, b_rates, vec![])?)?;
            let triplet = LimitTriplet::new(alpha, beta, LevyKernel::zero())?;
            Ok(Built {
                env,
                triplet,
                expectations: Expectations { summary: "piecewise Feller limit".into(), bottleneck_at: None, atom_times: vec![] },
            })
        }
        ScenarioKind::Catastrophe { base, a, t0 } => {
            let rate = base.gamma_rate(n);
            let i0 = (rate * t0).round() as u64;
            if i0 == 0 {
                return Err(Error::InvalidInput("catastrophe time maps to generation 0; increase n or t0".into()));
            }
            let q = base.law(n)?;
            let p2 = 0.5 * (1.0 + a);
            let shock = OffspringLaw::FinitePmf { pmf: vec![(0, 1.0 - p2), (2, p2)] };
            let blocks = vec![
                Block { count: Some(i0), law: q.clone() },
                Block { count: Some(1), law: shock },
                Block { count: None, law: q },
            ];
            let env = EnvironmentModel::new(n, TimeChange::UniformRate { rate }, blocks)?;
            let m = base.mechanism()?;
            let base_trip = m.to_triplet()?;
            let alpha = base_trip.alpha.clone().with_atoms(vec![(*t0, *a)])?;
            let triplet = LimitTriplet::new(alpha, base_trip.beta.clone(), base_trip.nu.clone())?;
            Ok(Built {
                env,
                triplet,
                expectations: Expectations {
                    summary: format!("population multiplied by {} at t0", 1.0 + a),
                    bottleneck_at: if *a == -1.0 { Some(*t0) } else { None },
                    atom_times: vec![*t0],
                },
            })
        }
        ScenarioKind::PoissonSite { t0 } => {
            let base = LawFamily::Binary;
            let rate = base.gamma_rate(n);
            let i0 = (rate * t0).round() as u64;
            if i0 == 0 {
                return Err(Error::InvalidInput("site time maps to generation 0".into()));
            }
            let q = base.law(n)?;
            let blocks = vec![
                Block { count: Some(i0), law: q.clone() },
                Block { count: Some(1), law: OffspringLaw::PoissonizedSite { n } },
                Block { count: None, law: q },
            ];
            let env = EnvironmentModel::new(n, TimeChange::UniformRate { rate }, blocks)?;
            let alpha = PiecewiseSignedMeasure::constant_rate(0.0).with_atoms(vec![(*t0, -0.5)])?;
            let beta = MonotoneMeasure::new(PiecewiseSignedMeasure::constant_rate(0.5).with_atoms(vec![(*t0, 0.25)])?)?;
            let nu = LevyKernel::new(vec![], vec![FixedAtom { time: *t0, measure: LevyMeasure::dirac(1.0, 1.0) }])?;
            Ok(Built {
                env,
                triplet: LimitTriplet::new(alpha, beta, nu)?,
                expectations: Expectations {
                    summary: "population replaced by a Poisson variable of the same mean at t0".into(),
                    bottleneck_at: None,
                    atom_times: vec![*t0],
                },
            })
        }
        ScenarioKind::Bottleneck { p_exponent } => {
            let base = LawFamily::Stable { a: 1.5, c: 1.0 / 3.0 };
            let g = (n as f64).sqrt().round().max(1.0) as u64;
            let q = base.law(n)?;
            let p = (n as f64).powf(-p_exponent);
            let blocks = vec![
                Block { count: Some(g), law: q.clone() },
                Block { count: Some(g), law: OffspringLaw::Dirac { k: 1 } },
                Block { count: Some(1), law: OffspringLaw::Bernoulli01 { p } },
                Block { count: None, law: q },
            ];
            let env = EnvironmentModel::new(n, TimeChange::UniformRate { rate: g as f64 }, blocks)?;
            let m = base.mechanism()?;
            let beta_rate = 0.5 * m.f.x2_mass();
            let alpha = PiecewiseSignedMeasure::new(vec![0.0, 1.0, 2.0], vec![m.a, 0.0, m.a], vec![(2.0, -1.0)])?;
            let beta = MonotoneMeasure::new(PiecewiseSignedMeasure::new(vec![0.0, 1.0, 2.0], vec![beta_rate, 0.0, beta_rate], vec![])?)?;
            let nu = LevyKernel::new(
                vec![
                    HomogeneousPiece { interval: (0.0, Some(1.0)), measure: m.f.clone() },
                    HomogeneousPiece { interval: (2.0, None), measure: m.f.clone() },
                ],
                vec![],
            )?;
            Ok(Built {
                env,
                triplet: LimitTriplet::new(alpha, beta, nu)?,
                expectations: Expectations {
                    summary: "near-extinction event at t = 2; limits before it need not exist".into(),
                    bottleneck_at: Some(2.0),
                    atom_times: vec![2.0],
                },
            })
        }
        ScenarioKind::RandomTwoLaw { law1, law2, p1, seed, horizon } => {
            let p2 = 1.0 - p1;
            let sel = regime_select(
                &|x| law1.gamma_rate(x as u64),
                &|_| *p1,
                &law1.mechanism()?,
                &|x| law2.gamma_rate(x as u64),
                &|_| p2,
                &law2.mechanism()?,
                &probe_grid(n),
            )?;
            let rate = match sel.regime {
                Regime::Second => law2.gamma_rate(n) / p2,
                _ => law1.gamma_rate(n) / p1,
            };
            let generations = (rate * horizon).ceil() as u64 + 1;
            let env = realize_random_env(&law1.law(n)?, &law2.law(n)?, *p1, p2, n, rate, generations, *seed)?;
            Ok(Built {
                env,
                triplet: sel.mechanism.to_triplet()?,
                expectations: Expectations { summary: format!("{:?}", sel.regime), bottleneck_at: None, atom_times: vec![] },
            })
        }
    }
}

fn probe_grid(n: u64) -> Vec<f64> {
    let top = (n as f64).max(1e4);
    (0..5).map(|k| top * 10f64.powi(k - 2)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Regime {
    /// Gamma1/p1 is the smaller time scale; the limit uses law 1 alone.
    First,
    Second,
    /// Both count; characteristic char1 + l char2.
    Balanced { ell: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeSelection {
    pub regime: Regime,
    /// Symbolic time scale.
    pub gamma_rule: String,
    pub mechanism: BranchingMechanism,
    /// Gamma1 p2 / (Gamma2 p1) on the probe grid.
    pub ratios: Vec<f64>,
}

/// Classify the trend of Gamma1 p2 / (Gamma2 p1) along `n_probe` (increasing).
pub fn regime_select(
    g1: &dyn Fn(f64) -> f64,
    p1: &dyn Fn(f64) -> f64,
    char1: &BranchingMechanism,
    g2: &dyn Fn(f64) -> f64,
    p2: &dyn Fn(f64) -> f64,
    char2: &BranchingMechanism,
    n_probe: &[f64],
) -> Result<RegimeSelection> {
    if n_probe.len() < 3 || n_probe.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Unclassifiable("need at least three increasing probe points".into()));
    }
    let ratios: Vec<f64> = n_probe.iter().map(|&n| g1(n) * p2(n) / (g2(n) * p1(n))).collect();
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Unclassifiable(format!("ratios {ratios:?} are not positive and finite")));
    }
    let slopes: Vec<f64> = ratios
        .windows(2)
        .zip(n_probe.windows(2))
        .map(|(r, n)| (r[1] / r[0]).ln() / (n[1] / n[0]).ln())
        .collect();
    const FLAT: f64 = 0.02;
    let (regime, mechanism, rule) = if slopes.iter().all(|&s| s < -FLAT) {
        (Regime::First, char1.clone(), "Gamma1/p1".to_string())
    } else if slopes.iter().all(|&s| s > FLAT) {
        (Regime::Second, char2.clone(), "Gamma2/p2".to_string())
    } else if slopes.iter().all(|&s| s.abs() <= FLAT) {
        let ell = *ratios.last().unwrap();
        let spread = ratios.iter().map(|r| (r / ell - 1.0).abs()).fold(0.0, f64::max);
        if spread > 0.1 {
            return Err(Error::Unclassifiable(format!("ratio drifts by {spread:.3} across the probe grid")));
        }
        let f = LevyMeasure::sum([&char1.f, &char2.f.scaled(ell)]);
        let m = BranchingMechanism::new(char1.a + ell * char2.a, char1.b_tilde + ell * char2.b_tilde, f)?;
        (Regime::Balanced { ell }, m, "Gamma1/p1".to_string())
    } else {
        return Err(Error::Unclassifiable(format!("log-slopes {slopes:?} have mixed signs")));
    };
    Ok(RegimeSelection { regime, gamma_rule: rule, mechanism, ratios })
}

/// i.i.d. choice of law 1 (probability p1) or law 2 for each of `generations`
/// generations, run-length encoded; the last law continues forever.
#[allow(clippy::too_many_arguments)]
pub fn realize_random_env(
    law1: &OffspringLaw,
    law2: &OffspringLaw,
    p1: f64,
    p2: f64,
    n: u64,
    gamma_rate: f64,
    generations: u64,
    seed: u64,
) -> Result<EnvironmentModel> {
    if !(p1 >= 0.0 && p2 >= 0.0 && (p1 + p2 - 1.0).abs() <= 1e-12) {
        return Err(Error::InvalidInput(format!("p1 + p2 must be 1, got {p1} + {p2}")));
    }
    if generations == 0 {
        return Err(Error::InvalidInput("need at least one generation".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut blocks: Vec<Block> = Vec::new();
    let mut last: Option<bool> = None;
    for _ in 0..generations {
        let first = rng.random::<f64>() < p1;
        if last == Some(first) {
            if let Some(Block { count: Some(c), .. }) = blocks.last_mut() {
                *c += 1;
            }
        } else {
            let law = if first { law1.clone() } else { law2.clone() };
            blocks.push(Block { count: Some(1), law });
            last = Some(first);
        }
    }
    if let Some(b) = blocks.last_mut() {
        b.count = None;
    }
    EnvironmentModel::new(n, TimeChange::UniformRate { rate: gamma_rate }, blocks)
}

#[derive(Debug, Clone, Serialize)]
pub struct Builtin {
    pub name: &'static str,
    pub description: &'static str,
    pub spec: ScenarioSpec,
}

pub fn builtins() -> Vec<Builtin> {
    let grid = default_grid;
    // perfect squares keep the n^0.5 generation rate an integer
    let squares = || vec![100, 1600, 10_000];
    vec![
        Builtin {
            name: "binary",
            description: "critical binary splitting, n generations per unit time; Feller limit with beta(t) = t/2",
            spec: ScenarioSpec { kind: ScenarioKind::ConstantGw { law: LawFamily::Binary }, n_grid: grid() },
        },
        Builtin {
            name: "poisson",
            description: "critical Poisson(1) offspring; same Feller limit as binary",
            spec: ScenarioSpec { kind: ScenarioKind::ConstantGw { law: LawFamily::Poisson }, n_grid: grid() },
        },
        Builtin {
            name: "stable",
            description: "offspring pgf s + (1-s)^1.5 / 3 on the n^0.5 time scale; pure-jump stable limit",
            spec: ScenarioSpec { kind: ScenarioKind::ConstantGw { law: LawFamily::Stable { a: 1.5, c: 1.0 / 3.0 } }, n_grid: squares() },
        },
        Builtin {
            name: "feller-varying",
            description: "near-critical laws whose drift and variance change at t = 1",
            spec: ScenarioSpec {
                kind: ScenarioKind::FellerVarying {
                    pieces: vec![
                        FellerPiece { until: 1.0, drift: 1.0, variance: 1.0 },
                        FellerPiece { until: 2.0, drift: -0.5, variance: 2.0 },
                    ],
                },
                n_grid: grid(),
            },
        },
        Builtin {
            name: "catastrophe",
            description: "binary base; one generation at t0 = 1 has mean 1/2, halving the population",
            spec: ScenarioSpec { kind: ScenarioKind::Catastrophe { base: LawFamily::Binary, a: -0.5, t0: 1.0 }, n_grid: grid() },
        },
        Builtin {
            name: "poisson-site",
            description: "binary base; at t0 = 1 each individual has n children with probability 1/n",
            spec: ScenarioSpec { kind: ScenarioKind::PoissonSite { t0: 1.0 }, n_grid: grid() },
        },
        Builtin {
            name: "bottleneck",
            description: "stable growth on [0,1), frozen on [1,2), survival probability n^-2 at t = 2",
            spec: ScenarioSpec { kind: ScenarioKind::Bottleneck { p_exponent: 2.0 }, n_grid: squares() },
        },
        Builtin {
            name: "random-two-law",
            description: "i.i.d. mixture of two near-critical laws with balanced time scales (l = 2)",
            spec: ScenarioSpec {
                kind: ScenarioKind::RandomTwoLaw {
                    law1: LawFamily::NearCritical { drift: 1.0, variance: 1.0 },
                    law2: LawFamily::NearCritical { drift: -0.25, variance: 0.5 },
                    p1: 1.0 / 3.0,
                    seed: 2024,
                    horizon: 2.0,
                },
                n_grid: grid(),
            },
        },
    ]
}

pub fn builtin(name: &str) -> Result<ScenarioSpec> {
    builtins().into_iter().find(|b| b.name == name).map(|b| b.spec).ok_or_else(|| Error::UnknownKind(name.to_string()))
}
