//! Randomized invariant checks shared by the `properties` and `acceptance` targets.
#![allow(dead_code)]

use gwbranch::discrete_laplace::{apriori_bounds, composition_residual, u_discrete, u_discrete_value, u_profile};
use gwbranch::environment::{
    assumption_diagnostics, cumulative_over, gen_characteristics, Block, DiscreteGenCharacteristics, EnvironmentModel, OffspringLaw,
    TimeChange,
};
use gwbranch::feller_csbp::{csbp_u_homogeneous, extinction_prob, u_feller, BranchingMechanism, Horizon};
use gwbranch::limit_solver::{psi_operator, solve_u, solve_u_from, ConstantFn, SampledFn, SolverConfig};
use gwbranch::measures::{
    const_c1_prime, eval_g, eval_h, levy_integral, tilde_beta, total_variation, FixedAtom, HomogeneousPiece, IntegrandKind, LevyKernel,
    LevyMeasure, LimitTriplet, MonotoneMeasure, PiecewiseSignedMeasure,
};
use gwbranch::montecarlo::{empirical_laplace, simulate};
use gwbranch::scenarios::{build, builtin, builtins, LawFamily, ScenarioKind, ScenarioSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const CASES: u32 = 200;

pub struct Property {
    pub module: &'static str,
    pub name: &'static str,
    pub run: fn() -> Result<(), String>,
}

fn check<S>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    check_n(CASES, strategy, test)
}

fn check_n<S>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    let config = Config { cases, failure_persistence: None, max_shrink_iters: 64, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn ok<T>(r: gwbranch::Result<T>) -> Result<T, TestCaseError> {
    r.map_err(|e| TestCaseError::fail(e.to_string()))
}

// ---------- generators ----------

/// pmf on at most four distinct values in 0..=5
fn arb_pmf() -> impl Strategy<Value = Vec<(u64, f64)>> {
    proptest::collection::btree_map(0u64..=5, 0.05f64..1.0, 1..=4).prop_map(|m| {
        let total: f64 = m.values().sum();
        m.into_iter().map(|(k, w)| (k, w / total)).collect()
    })
}

fn arb_law() -> impl Strategy<Value = OffspringLaw> {
    prop_oneof![
        4 => arb_pmf().prop_map(|pmf| OffspringLaw::FinitePmf { pmf }),
        1 => (0.2f64..3.0).prop_map(|mean| OffspringLaw::Poisson { mean }),
        1 => (0u64..4).prop_map(|k| OffspringLaw::Dirac { k }),
        1 => (0.0f64..=1.0).prop_map(|p| OffspringLaw::Bernoulli01 { p }),
        1 => (1u64..200).prop_map(|n| OffspringLaw::PoissonizedSite { n }),
    ]
}

fn arb_stable() -> impl Strategy<Value = OffspringLaw> {
    (1.05f64..=2.0, 0.05f64..=1.0).prop_map(|(a, f)| OffspringLaw::StablePgf { a, c: f / a })
}

/// Environment with one block per generation, then the last law forever.
fn env_of(n: u64, laws: Vec<OffspringLaw>) -> EnvironmentModel {
    let k = laws.len();
    let blocks = laws
        .into_iter()
        .enumerate()
        .map(|(i, law)| Block { count: if i + 1 == k { None } else { Some(1) }, law })
        .collect();
    EnvironmentModel::new(n, TimeChange::UniformRate { rate: n as f64 }, blocks).unwrap()
}

fn arb_pmf_env(max_gens: usize) -> impl Strategy<Value = (EnvironmentModel, usize)> {
    (1u64..40, proptest::collection::vec(arb_pmf(), 1..=max_gens)).prop_map(|(n, pmfs)| {
        let g = pmfs.len();
        (env_of(n, pmfs.into_iter().map(|pmf| OffspringLaw::FinitePmf { pmf }).collect()), g)
    })
}

/// Near-critical environment with blocks of mixed laws, scale n.
fn arb_block_env() -> impl Strategy<Value = EnvironmentModel> {
    (5u64..200, proptest::collection::vec((1u64..40, -1.0f64..1.0, 0.2f64..1.5), 1..5)).prop_map(|(n, parts)| {
        let nf = n as f64;
        let k = parts.len();
        let blocks = parts
            .into_iter()
            .enumerate()
            .map(|(i, (count, drift, var))| {
                // mean 1 + drift/n, variance close to var
                let p2 = (0.5 * var + 0.5 * drift / nf).clamp(0.0, 0.9);
                let p0 = (p2 - drift / nf).clamp(0.0, 0.95);
                let p1 = (1.0 - p0 - p2).max(0.0);
                let s = p0 + p1 + p2;
                let law = OffspringLaw::FinitePmf { pmf: vec![(0, p0 / s), (1, p1 / s), (2, p2 / s)] };
                Block { count: if i + 1 == k { None } else { Some(count) }, law }
            })
            .collect();
        EnvironmentModel::new(n, TimeChange::UniformRate { rate: nf }, blocks).unwrap()
    })
}

#[derive(Debug, Clone)]
struct TripletParams {
    a1: f64,
    a2: f64,
    bp: f64,
    alpha_atom: Option<(f64, f64)>,
    b: f64,
    jump: Option<(f64, f64)>,
    fixed: Option<(f64, f64, f64)>,
}

impl TripletParams {
    fn homogeneous_f(&self) -> LevyMeasure {
        match self.jump {
            Some((x, m)) => LevyMeasure::dirac(x, m),
            None => LevyMeasure::zero(),
        }
    }

    fn build(&self) -> LimitTriplet {
        let atoms = self.alpha_atom.map(|a| vec![a]).unwrap_or_default();
        let alpha = PiecewiseSignedMeasure::new(vec![0.0, self.bp], vec![self.a1, self.a2], atoms).unwrap();
        let f = self.homogeneous_f();
        let rate = self.b + 0.5 * f.x2_mass();
        let (beta_atoms, fixed) = match self.fixed {
            Some((tau, x, m)) => {
                let g = LevyMeasure::dirac(x, m);
                (vec![(tau, 0.5 * g.x2_mass())], vec![FixedAtom { time: tau, measure: g }])
            }
            None => (vec![], vec![]),
        };
        let beta = MonotoneMeasure::new(PiecewiseSignedMeasure::new(vec![0.0], vec![rate], beta_atoms).unwrap()).unwrap();
        let pieces = if f.is_zero() { vec![] } else { vec![HomogeneousPiece { interval: (0.0, None), measure: f }] };
        LimitTriplet::new(alpha, beta, LevyKernel::new(pieces, fixed).unwrap()).unwrap()
    }

    fn atom_times(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.alpha_atom.iter().map(|a| a.0).chain(self.fixed.iter().map(|f| f.0)).collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

fn arb_triplet() -> impl Strategy<Value = TripletParams> {
    (
        (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..0.9),
        proptest::option::of((0.05f64..0.95, -0.9f64..1.0)),
        0.0f64..1.0,
        proptest::option::of((0.2f64..3.0, 0.0f64..1.0)),
        proptest::option::of((0.05f64..0.95, 0.2f64..3.0, 0.0f64..1.0)),
    )
        .prop_map(|((a1, a2, bp), alpha_atom, b, jump, fixed)| TripletParams { a1, a2, bp, alpha_atom, b, jump, fixed })
}

/// Feller triplet with an open terminal rate.
fn arb_feller() -> impl Strategy<Value = (PiecewiseSignedMeasure, MonotoneMeasure)> {
    (
        -1.0f64..1.0,
        prop_oneof![-1.5f64..-0.4, 0.4f64..1.5],
        0.1f64..2.0,
        proptest::option::of((0.05f64..3.0, -0.9f64..1.0)),
        0.1f64..2.0,
    )
        .prop_map(|(a1, a2, bp, atom, b)| {
            let atoms = atom.map(|a| vec![a]).unwrap_or_default();
            (PiecewiseSignedMeasure::new(vec![0.0, bp], vec![a1, a2], atoms).unwrap(), MonotoneMeasure::constant_rate(b).unwrap())
        })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

// ---------- measures ----------

pub fn measures_c1_prime_bound() -> Result<(), String> {
    check((0.01f64..20.0, -1.0f64..1e3, 0.0f64..=1.0), |(c, x, frac)| {
        let lam = frac * c;
        prop_assume!(x != 0.0);
        let lhs = eval_g(x, lam).abs() * (1.0 + x * x) / (x * x);
        prop_assert!(lhs <= const_c1_prime(c) * (1.0 + 1e-12) + 1e-15, "{lhs} > {}", const_c1_prime(c));
        Ok(())
    })
}

pub fn measures_h_nonnegative() -> Result<(), String> {
    check((0.0f64..1e4, 0.0f64..50.0), |(x, lam)| {
        prop_assert!(eval_h(x, lam) >= 0.0, "h({x}, {lam}) = {}", eval_h(x, lam));
        Ok(())
    })
}

pub fn measures_g_upper_bound() -> Result<(), String> {
    check((-1.0f64..1e4, 0.0f64..50.0), |(x, lam)| {
        let bound = x * x / (1.0 + x * x);
        prop_assert!(eval_g(x, lam) <= bound * (1.0 + 1e-12) + 1e-300, "g({x}, {lam}) = {}", eval_g(x, lam));
        Ok(())
    })
}

pub fn measures_tilde_beta_monotone_continuous() -> Result<(), String> {
    check((arb_triplet(), proptest::collection::vec(0.0f64..1.0, 2..8)), |(p, mut ts)| {
        let trip = p.build();
        ts.extend(p.atom_times());
        ts.sort_by(f64::total_cmp);
        let vals: Vec<f64> = ts.iter().map(|&t| tilde_beta(&trip, t)).collect::<gwbranch::Result<_>>().map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{vals:?}");
        for tau in p.atom_times() {
            let jump = ok(tilde_beta(&trip, tau))? - ok(tilde_beta(&trip, tau - 1e-9))?;
            prop_assert!(jump.abs() < 1e-8, "tilde beta jumps by {jump} at {tau}");
        }
        Ok(())
    })
}

/// Midpoint rule in log x for the h integral of a power tail, with end corrections.
pub fn riemann_power_tail_h(a: f64, c: f64, u: f64, points: usize) -> f64 {
    let (lo, hi) = (1e-4_f64, 1e8_f64);
    let (l0, l1) = (lo.ln(), hi.ln());
    let dl = (l1 - l0) / points as f64;
    let mut sum = 0.0;
    for k in 0..points {
        let x = (l0 + (k as f64 + 0.5) * dl).exp();
        let h = 1.0 - (-u * x).exp() - u * x / (1.0 + x * x) + (u * x).powi(2) / (2.0 * (1.0 + x * x));
        sum += h * c * a * x.powf(-a) * dl;
    }
    let small = (u + u.powi(3) / 6.0) * c * a * lo.powf(3.0 - a) / (3.0 - a);
    let large = (1.0 + 0.5 * u * u) * c * hi.powf(-a);
    sum + small + large
}

pub fn measures_power_tail_vs_riemann() -> Result<(), String> {
    check((0.3f64..1.9, 0.1f64..3.0, 0.05f64..10.0), |(a, c, u)| {
        let f = LevyMeasure::PowerTail { a, c };
        let q = ok(levy_integral(&f, u, IntegrandKind::H))?;
        let r = riemann_power_tail_h(a, c, u, 200_000);
        prop_assert!((q - r).abs() <= 1e-6 * r.abs(), "{q} vs {r}");
        Ok(())
    })
}

pub fn measures_total_variation_formula() -> Result<(), String> {
    let piece = (0.05f64..1.0, -2.0f64..2.0);
    check(
        (proptest::collection::vec(piece, 1..5), proptest::collection::vec((0.0f64..1.0, -1.0f64..1.0), 0..4), 0.0f64..5.0),
        |(pieces, raw_atoms, t)| {
            let mut bps = vec![0.0];
            for (len, _) in &pieces[..pieces.len() - 1] {
                bps.push(bps.last().unwrap() + len);
            }
            let rates: Vec<f64> = pieces.iter().map(|p| p.1).collect();
            let end = *bps.last().unwrap() + 1.0;
            let mut atoms: Vec<(f64, f64)> = raw_atoms.iter().map(|&(f, m)| (0.001 + f * end, m)).collect();
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            atoms.dedup_by(|a, b| a.0 == b.0);
            let m = ok(PiecewiseSignedMeasure::new(bps.clone(), rates.clone(), atoms.clone()))?;
            let mut want = 0.0;
            for k in 0..rates.len() {
                let lo = bps[k];
                let hi = if k + 1 < bps.len() { bps[k + 1] } else { f64::INFINITY };
                want += rates[k].abs() * (hi.min(t) - lo).max(0.0);
            }
            want += atoms.iter().filter(|a| a.0 <= t).map(|a| a.1.abs()).sum::<f64>();
            let got = total_variation(&m, t);
            prop_assert!(rel_close(got, want, 1e-13), "{got} vs {want}");
            prop_assert!(got >= m.cumulative(t).abs() - 1e-13);
            Ok(())
        },
    )
}

pub fn measures_monotone_cumulative() -> Result<(), String> {
    check(
        (proptest::collection::vec(0.0f64..2.0, 1..4), proptest::collection::vec((0.0f64..3.0, 0.0f64..1.0), 0..4), proptest::collection::vec(0.0f64..4.0, 2..10)),
        |(rates, raw_atoms, mut ts)| {
            let bps: Vec<f64> = (0..rates.len()).map(|k| k as f64).collect();
            let mut atoms = raw_atoms;
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            atoms.dedup_by(|a, b| a.0 == b.0);
            let m = ok(MonotoneMeasure::new(ok(PiecewiseSignedMeasure::new(bps, rates, atoms.clone()))?))?;
            ts.extend(atoms.iter().map(|a| a.0));
            ts.sort_by(f64::total_cmp);
            let vals: Vec<f64> = ts.iter().map(|&t| m.cumulative(t)).collect();
            prop_assert!(vals.windows(2).all(|w| w[1] >= w[0]), "{vals:?}");
            for &(tau, _) in &atoms {
                // right-continuous: the atom belongs to (0, tau]
                prop_assert!(m.cumulative(tau + 1e-12) - m.cumulative(tau) < 1e-10);
            }
            Ok(())
        },
    )
}

pub fn measures_triplet_rejects_bad_atoms() -> Result<(), String> {
    check((0.1f64..2.0, -3.0f64..1.0, 0.2f64..3.0, 0.1f64..1.0, -0.5f64..0.5), |(tau, da, x, m, shift)| {
        let alpha = ok(PiecewiseSignedMeasure::zero().with_atoms(vec![(tau, da)]))?;
        let r = LimitTriplet::new(alpha, MonotoneMeasure::zero(), LevyKernel::zero());
        prop_assert_eq!(r.is_ok(), da >= -1.0);
        let g = LevyMeasure::dirac(x, m);
        let want = 0.5 * g.x2_mass();
        let db = (want + shift * want).max(0.0);
        let beta = ok(MonotoneMeasure::new(ok(PiecewiseSignedMeasure::zero().with_atoms(vec![(tau, db)]))?))?;
        let nu = ok(LevyKernel::new(vec![], vec![FixedAtom { time: tau, measure: g }]))?;
        let r = LimitTriplet::new(PiecewiseSignedMeasure::zero(), beta, nu);
        prop_assert_eq!(r.is_ok(), (db - want).abs() <= 1e-9 * want.max(1.0), "db {} want {}", db, want);
        Ok(())
    })
}

pub fn measures_triplet_json_round_trip() -> Result<(), String> {
    check(arb_triplet(), |p| {
        let trip = p.build();
        let text = serde_json::to_string(&trip).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let back: LimitTriplet = serde_json::from_str(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(back, trip);
        Ok(())
    })
}

// ---------- environment ----------

fn all_laws() -> impl Strategy<Value = OffspringLaw> {
    prop_oneof![8 => arb_law(), 1 => arb_stable()]
}

pub fn environment_pmf_sums_to_one() -> Result<(), String> {
    check(all_laws(), |law| {
        let pmf = ok(law.pmf())?;
        prop_assert!(pmf.iter().all(|a| a.1 >= 0.0));
        let mut s = neumaier::NeumaierSum::default();
        for a in &pmf {
            s.add(a.1);
        }
        prop_assert!((s.sum() - 1.0).abs() <= 1e-12, "{law:?}: {}", s.sum());
        Ok(())
    })
}

pub fn environment_nu_support_and_mass() -> Result<(), String> {
    check((all_laws(), 1u64..5000), |(law, n)| {
        let ch = ok(gen_characteristics(&law, n))?;
        let nf = n as f64;
        prop_assert!(ch.nu_i.iter().all(|a| a.0 >= -1.0 / nf - 1e-15 && a.1 >= 0.0));
        let mut s = neumaier::NeumaierSum::default();
        for a in &ch.nu_i {
            s.add(a.1);
        }
        prop_assert!((s.sum() - nf).abs() <= 1e-12 * nf, "mass {} vs {nf}", s.sum());
        Ok(())
    })
}

pub fn environment_alternative_definition() -> Result<(), String> {
    check((all_laws(), 1u64..5000), |(law, n)| {
        let ch = ok(gen_characteristics(&law, n))?;
        let again = DiscreteGenCharacteristics::from_atoms(ch.nu_i.clone());
        let scale = ch.nu_i.iter().map(|a| a.1 * a.0.abs() / (1.0 + a.0 * a.0)).sum::<f64>().max(1e-300);
        prop_assert!((again.alpha_i - ch.alpha_i).abs() <= 1e-10 * scale, "{} vs {}", again.alpha_i, ch.alpha_i);
        prop_assert!((again.beta_i - ch.beta_i).abs() <= 1e-10 * ch.beta_i.abs().max(1e-300));
        let nf = n as f64;
        prop_assert!(ch.alpha_i >= -nf * (1.0 / nf) / (1.0 + 1.0 / (nf * nf)) - 1e-12);
        prop_assert!(ch.alpha_i >= -1.0 - 1e-12);
        Ok(())
    })
}

pub fn environment_cumulative_additive() -> Result<(), String> {
    check((arb_block_env(), 0u64..150, 0u64..150, 0u64..150, 0.01f64..2.0), |(env, a, b, c, x)| {
        let mut v = [a, b, c];
        v.sort();
        let [lo, mid, hi] = v;
        let left = ok(cumulative_over(&env, lo, mid))?;
        let right = ok(cumulative_over(&env, mid, hi))?;
        let whole = ok(cumulative_over(&env, lo, hi))?;
        prop_assert!(rel_close(left.alpha + right.alpha, whole.alpha, 1e-12));
        prop_assert!(rel_close(left.tv_alpha + right.tv_alpha, whole.tv_alpha, 1e-12));
        prop_assert!(rel_close(left.beta + right.beta, whole.beta, 1e-12));
        prop_assert!(rel_close(left.tail.at(x) + right.tail.at(x), whole.tail.at(x), 1e-12));
        Ok(())
    })
}

pub fn environment_stable_pmf_critical() -> Result<(), String> {
    check(arb_stable(), |law| {
        let pmf = ok(law.pmf())?;
        prop_assert!(pmf.iter().all(|a| a.1 >= 0.0));
        let (mut mass, mut mean) = (neumaier::NeumaierSum::default(), neumaier::NeumaierSum::default());
        for a in &pmf {
            mass.add(a.1);
            mean.add(a.0 as f64 * a.1);
        }
        prop_assert!((mass.sum() - 1.0).abs() <= 1e-12, "mass {}", mass.sum());
        prop_assert!((mean.sum() - 1.0).abs() <= 1e-9, "mean {}", mean.sum());
        Ok(())
    })
}

pub fn environment_blocks_cover_queries() -> Result<(), String> {
    check((arb_block_env(), 0u64..1_000_000), |(env, i)| {
        prop_assert!(env.law_at(i).is_ok());
        Ok(())
    })
}

// ---------- discrete_laplace ----------

/// -n log of the composed pgfs at e^{-lam/n}. Both s and q = 1 - s are carried as sums of
/// positive terms, so neither end loses its digits.
pub fn pgf_oracle(laws: &[Vec<(u64, f64)>], n: u64, lam: f64) -> f64 {
    let nf = n as f64;
    let mut s = (-lam / nf).exp();
    let mut q = -(-lam / nf).exp_m1();
    for pmf in laws.iter().rev() {
        let l = if s < 0.5 { s.ln() } else { (-q).ln_1p() };
        s = pmf.iter().map(|&(k, p)| p * (k as f64 * l).exp()).sum();
        q = pmf.iter().filter(|a| a.0 > 0).map(|&(k, p)| -p * (k as f64 * l).exp_m1()).sum();
    }
    if s < 0.5 {
        -nf * s.ln()
    } else {
        -nf * (-q).ln_1p()
    }
}

pub fn discrete_monotone_in_lambda() -> Result<(), String> {
    check((arb_block_env(), 0.01f64..2.0, 0.0f64..5.0, 0.0f64..5.0), |(env, t, l1, l2)| {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let a = ok(u_discrete_value(&env, 0.0, t, lo))?;
        let b = ok(u_discrete_value(&env, 0.0, t, hi))?;
        prop_assert!(a <= b * (1.0 + 1e-14), "{a} > {b}");
        prop_assert_eq!(ok(u_discrete_value(&env, 0.0, t, 0.0))?, 0.0);
        Ok(())
    })
}

pub fn discrete_pgf_identity() -> Result<(), String> {
    discrete_pgf_identity_cases(CASES)
}

pub fn discrete_pgf_identity_cases(cases: u32) -> Result<(), String> {
    check_n(cases, (arb_pmf_env(12), 0.0f64..5.0), |((env, g), lam)| {
        let n = env.n();
        let t = g as f64 / n as f64;
        let laws: Vec<Vec<(u64, f64)>> = (0..g as u64)
            .map(|i| match env.law_at(i).unwrap() {
                OffspringLaw::FinitePmf { pmf } => pmf.clone(),
                _ => unreachable!(),
            })
            .collect();
        let u = ok(u_discrete_value(&env, 0.0, t, lam))?;
        let want = pgf_oracle(&laws, n, lam);
        prop_assert!((u - want).abs() <= 1e-10 * want.abs(), "{u} vs {want}");
        Ok(())
    })
}

pub fn discrete_composition() -> Result<(), String> {
    discrete_composition_cases(CASES)
}

pub fn discrete_composition_cases(cases: u32) -> Result<(), String> {
    check_n(cases, (arb_block_env(), 0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0, 0.0f64..5.0), |(env, a, b, c, lam)| {
        let mut v = [a, b, c];
        v.sort_by(f64::total_cmp);
        let r = ok(composition_residual(&env, v[0], v[1], v[2], lam))?;
        prop_assert!(r <= 1e-12 * (1.0 + lam), "residual {r}");
        Ok(())
    })
}

pub fn discrete_profile_bounded() -> Result<(), String> {
    check((arb_block_env(), 0.05f64..2.0, 0.0f64..4.0), |(env, t, lam)| {
        let p = ok(u_profile(&env, t, lam, 0.0, t))?;
        let ap = ok(apriori_bounds(&env, t, lam))?;
        prop_assert!(p.points.iter().all(|q| q.2 >= 0.0 && q.2 <= ap.c_bar_u), "max {} vs {}", ap.max_profile, ap.c_bar_u);
        Ok(())
    })
}

pub fn discrete_step_table() -> Result<(), String> {
    check((arb_block_env(), 0.0f64..1.0, 0.0f64..2.0, 0.0f64..5.0), |(env, s, dt, lam)| {
        let (_, table) = ok(u_discrete(&env, s, s + dt, lam))?;
        prop_assert_eq!(*table.values.last().unwrap(), lam);
        prop_assert!(table.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        Ok(())
    })
}

// ---------- limit_solver ----------

pub fn solver_form_equivalence() -> Result<(), String> {
    check((arb_triplet(), 0.0f64..0.5, 0.5f64..1.0, 0.01f64..5.0), |(p, s, t, v)| {
        let trip = p.build();
        let f = ConstantFn { value: v, lo: 0.0, hi: 1.0 };
        let h_form = ok(psi_operator(&f, &trip, s, t))?;
        let mut g_form = v * (trip.alpha.cumulative(t) - trip.alpha.cumulative(s));
        g_form -= v * v * (ok(tilde_beta(&trip, t))? - ok(tilde_beta(&trip, s))?);
        g_form += (t - s) * ok(levy_integral(&p.homogeneous_f(), v, IntegrandKind::G))?;
        if let Some((tau, x, m)) = p.fixed {
            if tau > s && tau <= t {
                g_form += ok(levy_integral(&LevyMeasure::dirac(x, m), v, IntegrandKind::G))?;
            }
        }
        prop_assert!((h_form - g_form).abs() <= 1e-10 * (1.0 + v * v), "{h_form} vs {g_form}");
        Ok(())
    })
}

pub fn solver_residual_and_boundary() -> Result<(), String> {
    let cfg = SolverConfig::default();
    check((arb_triplet(), 0.1f64..1.0, 0.01f64..5.0), move |(p, t, lam)| {
        let trip = p.build();
        let sol = ok(solve_u(&trip, t, lam, &cfg))?;
        prop_assume!(sol.bottleneck.is_none());
        prop_assert!(sol.residual <= 10.0 * cfg.tol, "residual {}", sol.residual);
        prop_assert!(sol.error_bound.is_finite());
        prop_assert_eq!(ok(sol.value_at(t))?, lam);
        let atoms = trip.atom_times(0.0, t);
        for (y, l, r) in sol.rows() {
            prop_assert!(l >= 0.0 && r >= 0.0);
            if !atoms.contains(&y) {
                prop_assert!((l - r).abs() <= 1e-14 * (1.0 + r), "left {l} right {r} at {y}");
            }
        }
        Ok(())
    })
}

pub fn solver_monotone_in_lambda() -> Result<(), String> {
    let cfg = SolverConfig::default();
    check((arb_triplet(), 0.1f64..1.0, 0.01f64..5.0, 0.0f64..3.0), move |(p, t, l1, dl)| {
        let trip = p.build();
        let a = ok(solve_u(&trip, t, l1, &cfg))?;
        let b = ok(solve_u(&trip, t, l1 + dl, &cfg))?;
        prop_assume!(a.bottleneck.is_none() && b.bottleneck.is_none());
        for (y, _, r) in a.rows() {
            prop_assert!(r <= ok(b.value_at(y))? + 1e-9, "at {y}");
        }
        Ok(())
    })
}

pub fn solver_flow_property() -> Result<(), String> {
    let cfg = SolverConfig::default();
    check((arb_triplet(), 0.2f64..1.0, 0.05f64..0.95, 0.01f64..5.0), move |(p, t, frac, lam)| {
        let trip = p.build();
        let r = frac * t;
        let whole = ok(solve_u(&trip, t, lam, &cfg))?;
        let right = ok(solve_u_from(&trip, r, t, lam, &cfg))?;
        let mid = ok(right.value_at(r))?;
        let left = ok(solve_u_from(&trip, 0.0, r, mid, &cfg))?;
        prop_assume!(whole.bottleneck.is_none() && left.bottleneck.is_none());
        let a = ok(whole.value_at(0.0))?;
        let b = ok(left.value_at(0.0))?;
        prop_assert!((a - b).abs() <= 10.0 * cfg.tol * (1.0 + a), "{a} vs {b}");
        Ok(())
    })
}

// ---------- feller_csbp ----------

pub fn feller_solves_dynamics() -> Result<(), String> {
    check((arb_feller(), 0.0f64..1.0, 0.5f64..3.0, 0.01f64..5.0), |((alpha, beta), s, len, lam)| {
        let t = s + len;
        let breaks: Vec<f64> = alpha.atoms_in(s, t).iter().map(|a| a.0).collect();
        let f = SampledFn { f: |y: f64| u_feller(&alpha, &beta, y, t, lam).unwrap(), lo: s, hi: t, panels: 256, breaks };
        let trip = ok(LimitTriplet::new(alpha.clone(), beta.clone(), LevyKernel::zero()))?;
        for k in 0..4 {
            let y = s + len * k as f64 / 4.0;
            let lhs = ok(u_feller(&alpha, &beta, y, t, lam))?;
            let rhs = lam + ok(psi_operator(&f, &trip, y, t))?;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lam), "at {y}: {lhs} vs {rhs}");
        }
        Ok(())
    })
}

pub fn feller_extinction_is_limit() -> Result<(), String> {
    check((arb_feller(), 0.0f64..1.0, 0.0f64..3.0), |((alpha, beta), s, x)| {
        let p = ok(extinction_prob(&alpha, &beta, s, x, Horizon::Infinite))?;
        let u = ok(u_feller(&alpha, &beta, s, s + 60.0, 1e12))?;
        let q = (-x * u).exp();
        prop_assert!((p - q).abs() <= 1e-6, "{p} vs {q}");
        Ok(())
    })
}

pub fn feller_extinction_monotone_in_x() -> Result<(), String> {
    check((arb_feller(), 0.0f64..1.0, 0.0f64..3.0, 0.0f64..3.0), |((alpha, beta), s, x1, x2)| {
        let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
        let a = ok(extinction_prob(&alpha, &beta, s, lo, Horizon::Infinite))?;
        let b = ok(extinction_prob(&alpha, &beta, s, hi, Horizon::Infinite))?;
        prop_assert!(b <= a);
        prop_assert_eq!(ok(extinction_prob(&alpha, &beta, s, 0.0, Horizon::Infinite))?, 1.0);
        Ok(())
    })
}

pub fn feller_csbp_matches_solver() -> Result<(), String> {
    let cfg = SolverConfig::default();
    let jump = proptest::option::of((0.2f64..3.0, 0.0f64..1.0));
    check((-1.0f64..1.0, 0.0f64..1.0, jump, 0.1f64..2.0, 0.1f64..5.0), move |(a, b, jump, tau, lam)| {
        let f = jump.map(|(x, m)| LevyMeasure::dirac(x, m)).unwrap_or_else(LevyMeasure::zero);
        let mech = ok(BranchingMechanism::new(a, b, f))?;
        prop_assert!(mech.b_tilde >= 0.0);
        let sol = ok(solve_u(&ok(mech.to_triplet())?, tau, lam, &cfg))?;
        let want = ok(csbp_u_homogeneous(&mech, tau, lam))?;
        let got = ok(sol.value_at(0.0))?;
        prop_assert!((got - want).abs() <= 1e-8 * (1.0 + want), "{got} vs {want}");
        Ok(())
    })
}

// ---------- montecarlo ----------

pub fn mc_reproducible() -> Result<(), String> {
    check((arb_block_env(), any::<u64>(), 1u64..30, 1u64..40, 1usize..40), |(env, seed, z0, gens, paths)| {
        let a = ok(simulate(&env, z0, gens, seed, paths))?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate(&env, z0, gens, seed, paths + 5)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        // path i depends only on (seed, i)
        prop_assert_eq!(&a.pops[..], &b.pops[..paths]);
        Ok(())
    })
}

pub fn mc_absorbed_paths_stay_dead() -> Result<(), String> {
    check((arb_block_env(), any::<u64>(), 1u64..5, 1u64..60), |(env, seed, z0, gens)| {
        let batch = ok(simulate(&env, z0, gens, seed, 30))?;
        for row in &batch.pops {
            if let Some(k) = row.iter().position(|&z| z == 0) {
                prop_assert!(row[k..].iter().all(|&z| z == 0));
            }
        }
        Ok(())
    })
}

pub fn mc_critical_martingale() -> Result<(), String> {
    let critical = prop_oneof![
        Just(OffspringLaw::FinitePmf { pmf: vec![(0, 0.5), (2, 0.5)] }),
        Just(OffspringLaw::Poisson { mean: 1.0 }),
        (0.05f64..0.45).prop_map(|p| OffspringLaw::FinitePmf { pmf: vec![(0, p), (1, 1.0 - 2.0 * p), (2, p)] }),
        (0.1f64..0.3).prop_map(|p| OffspringLaw::FinitePmf { pmf: vec![(0, 2.0 * p), (1, 1.0 - 3.0 * p), (3, p)] }),
    ];
    check((critical, any::<u64>(), 5u64..50), |(law, seed, z0)| {
        let env = ok(EnvironmentModel::constant(20, 20.0, law))?;
        let batch = ok(simulate(&env, z0, 20, seed, 2000))?;
        let k = batch.n_paths() as f64;
        let vals: Vec<f64> = batch.pops.iter().map(|r| *r.last().unwrap() as f64 / z0 as f64).collect();
        let mean = vals.iter().sum::<f64>() / k;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        prop_assert!((mean - 1.0).abs() <= 4.0 * (var / k).sqrt(), "mean {mean}");
        Ok(())
    })
}

/// Exact identity between the empirical transform and the recursion, counted over repetitions.
pub fn mc_exact_identity() -> Result<(), String> {
    let env = EnvironmentModel::constant(20, 20.0, OffspringLaw::FinitePmf { pmf: vec![(0, 0.3), (1, 0.3), (2, 0.4)] }).unwrap();
    let exact = (-u_discrete_value(&env, 0.0, 1.0, 1.0).map_err(|e| e.to_string())?).exp();
    let reps = CASES as u64;
    let mut within = 0;
    for r in 0..reps {
        let batch = simulate(&env, 20, 20, 1000 + r, 2000).map_err(|e| e.to_string())?;
        let e = empirical_laplace(&batch, 1.0, 1.0).map_err(|e| e.to_string())?;
        if (e.mean - exact).abs() <= 4.0 * e.se {
            within += 1;
        }
    }
    if within * 100 >= 99 * reps {
        Ok(())
    } else {
        Err(format!("only {within} of {reps} repetitions within 4 SE"))
    }
}

// ---------- scenarios ----------

pub fn scenarios_diagnostics_decrease() -> Result<(), String> {
    let names: Vec<&'static str> = builtins().iter().map(|b| b.name).filter(|&n| n != "random-two-law").collect();
    let families: Vec<(Vec<EnvironmentModel>, LimitTriplet)> = names
        .iter()
        .map(|&name| {
            let spec = builtin(name).unwrap();
            let built: Vec<_> = spec.n_grid.iter().map(|&n| build(&spec, n).unwrap()).collect();
            let trip = built[0].triplet.clone();
            (built.into_iter().map(|b| b.env).collect(), trip)
        })
        .collect();
    // Tails of lattice measures alias pointwise; probe at multiples of the coarsest
    // spacing, nudged by a quarter of the finest one, so every n sees the same phase.
    let probe = |k: u32| k as f64 / 100.0 + 0.25 / 10_000.0;
    check((0..names.len(), 20u32..500, 20u32..500), |(k, k1, k2)| {
        let (x1, x2) = (probe(k1), probe(k2));
        let (fam, trip) = &families[k];
        let rep = ok(assumption_diagnostics(fam, trip, &[0.5, 1.5, 2.5], &[x1, x2]))?;
        prop_assert!(rep.monotone, "{}: {:?}", names[k], rep.a1);
        Ok(())
    })
}

pub fn scenarios_random_two_law_errors_small() -> Result<(), String> {
    let spec = builtin("random-two-law").unwrap();
    let big = build(&spec, 10_000).unwrap();
    check(0.05f64..2.0, |t| {
        let rep = ok(assumption_diagnostics(std::slice::from_ref(&big.env), &big.triplet, &[t], &[1.0]))?;
        let r = &rep.a1[0];
        prop_assert!(r.alpha_err <= 2e-2 && r.beta_err <= 2e-2, "{r:?}");
        Ok(())
    })
}

pub fn scenarios_tilde_beta_continuous() -> Result<(), String> {
    let base = prop_oneof![
        Just(LawFamily::Binary),
        Just(LawFamily::Poisson),
        (-1.0f64..1.0, 0.2f64..2.0).prop_map(|(drift, variance)| LawFamily::NearCritical { drift, variance }),
    ];
    check((base, -1.0f64..1.0, 0.1f64..3.0, any::<bool>()), |(base, a, t0, site)| {
        let kind = if site { ScenarioKind::PoissonSite { t0 } } else { ScenarioKind::Catastrophe { base, a, t0 } };
        let b = ok(build(&ScenarioSpec { kind, n_grid: vec![100] }, 100))?;
        let jump = ok(tilde_beta(&b.triplet, t0))? - ok(tilde_beta(&b.triplet, t0 - 1e-9))?;
        prop_assert!(jump.abs() < 1e-8, "jump {jump}");
        Ok(())
    })
}

pub fn scenarios_validation() -> Result<(), String> {
    check((-2.0f64..2.0, -1.0f64..3.0, proptest::collection::vec(1u64..1000, 1..4)), |(a, t0, grid)| {
        let text = serde_json::json!({"kind": "catastrophe", "base": {"family": "binary"}, "a": a, "t0": t0, "n_grid": grid}).to_string();
        let r = ScenarioSpec::from_json(&text);
        let valid = (-1.0..=1.0).contains(&a) && t0 > 0.0 && grid.windows(2).all(|w| w[1] > w[0]);
        prop_assert_eq!(r.is_ok(), valid, "{}", text);
        Ok(())
    })
}

fn bottleneck_min(p: f64, n: u64) -> Result<f64, TestCaseError> {
    let spec = ScenarioSpec { kind: ScenarioKind::Bottleneck { p_exponent: p }, n_grid: vec![n] };
    let b = ok(build(&spec, n))?;
    Ok(ok(u_profile(&b.env, 3.0, 1.0, 0.0, 0.99))?.min_u)
}

/// The stable base law has a conservative limit, so the population before the
/// catastrophe stays tight and p_n y_n -> 0 for every exponent: the profile collapses.
pub fn scenarios_bottleneck_trend() -> Result<(), String> {
    check(0.1f64..3.0, |p| {
        let mins: Vec<f64> = [100u64, 1600, 10_000].iter().map(|&n| bottleneck_min(p, n)).collect::<Result<_, _>>()?;
        prop_assert!(mins.windows(2).all(|w| w[1] < w[0]), "p = {p}: {mins:?}");
        Ok(())
    })
}

// ---------- cli ----------

pub fn cli_deterministic() -> Result<(), String> {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let env = EnvironmentModel::constant(20, 20.0, OffspringLaw::Poisson { mean: 1.0 }).unwrap();
    let path = dir.path().join("env.json");
    std::fs::write(&path, serde_json::to_string(&env).unwrap()).map_err(|e| e.to_string())?;
    let path = path.to_str().unwrap().to_string();
    check((any::<u64>(), 0.05f64..2.0, 0.0f64..4.0, any::<bool>()), |(seed, t, lam, mc)| {
        let args: Vec<String> = if mc {
            vec!["gwbranch".into(), "--seed".into(), seed.to_string(), "--paths".into(), "50".into(), "mc".into(), path.clone()]
        } else {
            vec!["gwbranch".into(), "un".into(), path.clone()]
        };
        let mut args = args;
        args.extend(["--t".into(), t.to_string(), "--lambda".into(), lam.to_string()]);
        let once = || {
            let (mut out, mut err) = (Vec::new(), Vec::new());
            let code = gwbranch::cli::run(args.clone(), &mut out, &mut err);
            (code, out, err)
        };
        let a = once();
        let b = once();
        prop_assert_eq!(a.0, 0);
        prop_assert_eq!(a, b);
        Ok(())
    })
}

pub fn cli_input_errors_exit_two() -> Result<(), String> {
    check(("[a-z]{1,6}", -5.0f64..0.0), |(junk, neg)| {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = gwbranch::cli::run(["gwbranch", "feller", "/nonexistent.json", "--t", junk.as_str()], &mut out, &mut err);
        prop_assert_eq!(code, 2);
        let code = gwbranch::cli::run(["gwbranch", "--tol", &neg.to_string(), "scenario", "list"], &mut out, &mut err);
        prop_assert_eq!(code, 2, "negative tol {}", neg);
        Ok(())
    })
}

pub fn all() -> Vec<Property> {
    macro_rules! p {
        ($module:literal, $f:ident) => {
            Property { module: $module, name: stringify!($f), run: $f }
        };
    }
    vec![
        p!("measures", measures_c1_prime_bound),
        p!("measures", measures_h_nonnegative),
        p!("measures", measures_g_upper_bound),
        p!("measures", measures_tilde_beta_monotone_continuous),
        p!("measures", measures_power_tail_vs_riemann),
        p!("measures", measures_total_variation_formula),
        p!("measures", measures_monotone_cumulative),
        p!("measures", measures_triplet_rejects_bad_atoms),
        p!("measures", measures_triplet_json_round_trip),
        p!("environment", environment_pmf_sums_to_one),
        p!("environment", environment_nu_support_and_mass),
        p!("environment", environment_alternative_definition),
        p!("environment", environment_cumulative_additive),
        p!("environment", environment_stable_pmf_critical),
        p!("environment", environment_blocks_cover_queries),
        p!("discrete_laplace", discrete_monotone_in_lambda),
        p!("discrete_laplace", discrete_pgf_identity),
        p!("discrete_laplace", discrete_composition),
        p!("discrete_laplace", discrete_profile_bounded),
        p!("discrete_laplace", discrete_step_table),
        p!("limit_solver", solver_form_equivalence),
        p!("limit_solver", solver_residual_and_boundary),
        p!("limit_solver", solver_monotone_in_lambda),
        p!("limit_solver", solver_flow_property),
        p!("feller_csbp", feller_solves_dynamics),
        p!("feller_csbp", feller_extinction_is_limit),
        p!("feller_csbp", feller_extinction_monotone_in_x),
        p!("feller_csbp", feller_csbp_matches_solver),
        p!("montecarlo", mc_reproducible),
        p!("montecarlo", mc_absorbed_paths_stay_dead),
        p!("montecarlo", mc_critical_martingale),
        p!("montecarlo", mc_exact_identity),
        p!("scenarios", scenarios_diagnostics_decrease),
        p!("scenarios", scenarios_random_two_law_errors_small),
        p!("scenarios", scenarios_tilde_beta_continuous),
        p!("scenarios", scenarios_validation),
        p!("scenarios", scenarios_bottleneck_trend),
        p!("cli", cli_deterministic),
        p!("cli", cli_input_errors_exit_two),
    ]
}

mod neumaier {
    #[derive(Default)]
    pub struct NeumaierSum {
        s: f64,
        c: f64,
    }

    impl NeumaierSum {
        pub fn add(&mut self, x: f64) {
            let t = self.s + x;
            if self.s.abs() >= x.abs() {
                self.c += (self.s - t) + x;
            } else {
                self.c += (x - t) + self.s;
            }
            self.s = t;
        }

        pub fn sum(&self) -> f64 {
            self.s + self.c
        }
    }
}
