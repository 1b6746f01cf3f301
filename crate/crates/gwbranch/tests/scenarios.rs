use gwbranch::discrete_laplace::{u_discrete_value, u_profile};
use gwbranch::environment::{gen_characteristics, OffspringLaw};
use gwbranch::feller_csbp::BranchingMechanism;
use gwbranch::limit_solver::{solve_u, SolverConfig};
use gwbranch::measures::LevyMeasure;
use gwbranch::scenarios::*;
use gwbranch::Error;

#[test]
fn binary_triplet() {
    let b = build(&builtin("binary").unwrap(), 100).unwrap();
    for &t in &[0.5, 1.0, 3.0] {
        assert_eq!(b.triplet.alpha.cumulative(t), 0.0);
        assert!((b.triplet.beta.cumulative(t) - 0.5 * t).abs() < 1e-15);
    }
    assert_eq!(b.triplet.nu.tail(0.1, 0.0, 1.0), 0.0);
    assert!(b.expectations.bottleneck_at.is_none());
}

#[test]
fn catastrophe_halves() {
    let spec = builtin("catastrophe").unwrap();
    let b = build(&spec, 1000).unwrap();
    assert_eq!(b.triplet.alpha.atom_at(1.0), -0.5);
    assert_eq!(b.expectations.atom_times, vec![1.0]);
    let sol = solve_u(&b.triplet, 2.0, 1.0, &SolverConfig::default()).unwrap();
    let right = sol.value_at(1.0).unwrap();
    let left = sol.value_left(1.0).unwrap();
    assert!((left - 0.5 * right).abs() < 1e-12, "{left} vs {right}");
    // the discrete process drops by about the same factor across the shock generation
    let dr = u_discrete_value(&b.env, 1.002, 2.0, 1.0).unwrap();
    let dl = u_discrete_value(&b.env, 0.999, 2.0, 1.0).unwrap();
    assert!((dl / dr - 0.5).abs() < 0.01, "{}", dl / dr);
}

#[test]
fn poisson_site_alpha_converges() {
    let spec = builtin("poisson-site").unwrap();
    let mut last_err = f64::INFINITY;
    for &n in &[1000u64, 10_000, 100_000, 1_000_000] {
        let b = build(&spec, n).unwrap();
        let i0 = n; // t0 = 1 at rate n
        let law = b.env.law_at(i0).unwrap();
        assert_eq!(law, &OffspringLaw::PoissonizedSite { n });
        let ch = gen_characteristics(law, n).unwrap();
        let err = (ch.alpha_i + 0.5).abs();
        assert!(err < 2.0 / n as f64 + 1e-12, "n = {n}: {}", ch.alpha_i);
        assert!(err <= last_err);
        last_err = err;
    }
}

fn feller_mech(a: f64, b: f64) -> BranchingMechanism {
    BranchingMechanism::new(a, b, LevyMeasure::zero()).unwrap()
}

#[test]
fn regime_examples() {
    let probe = [1e2, 1e3, 1e4, 1e5];
    let (c1, c2) = (feller_mech(1.0, 0.5), feller_mech(-0.25, 0.25));
    let half = |_: f64| 0.5;
    let sel = regime_select(&|n: f64| n.sqrt(), &half, &c1, &|n: f64| n, &half, &c2, &probe).unwrap();
    assert_eq!(sel.regime, Regime::First);
    assert_eq!(sel.mechanism, c1);
    let sel = regime_select(&|n: f64| n, &half, &c1, &|n: f64| n.sqrt(), &half, &c2, &probe).unwrap();
    assert_eq!(sel.regime, Regime::Second);
    assert_eq!(sel.mechanism, c2);
    let sel = regime_select(&|n: f64| 2.0 * n, &half, &c1, &|n: f64| n, &half, &c2, &probe).unwrap();
    assert_eq!(sel.regime, Regime::Balanced { ell: 2.0 });
    assert_eq!(sel.mechanism, feller_mech(0.5, 1.0));
    let wobble = |n: f64| n * if (n.log10() as i64) % 2 == 0 { 1.0 } else { 3.0 };
    assert!(matches!(regime_select(&wobble, &half, &c1, &|n: f64| n, &half, &c2, &probe), Err(Error::Unclassifiable(_))));
    assert!(regime_select(&|n: f64| n, &half, &c1, &|n: f64| n, &half, &c2, &probe[..2]).is_err());
}

#[test]
fn random_environment_frequencies() {
    let l1 = OffspringLaw::Dirac { k: 1 };
    let l2 = OffspringLaw::Poisson { mean: 1.0 };
    let g = 20_000u64;
    let count = |p1: f64| {
        let env = realize_random_env(&l1, &l2, p1, 1.0 - p1, 100, 100.0, g, 7).unwrap();
        (0..g).filter(|&i| env.law_at(i).unwrap() == &l1).count() as f64 / g as f64
    };
    assert_eq!(count(1.0), 1.0);
    assert_eq!(count(0.0), 0.0);
    let f = count(0.5);
    assert!((f - 0.5).abs() <= 4.0 * (0.25 / g as f64).sqrt(), "{f}");
    assert!(realize_random_env(&l1, &l2, 0.6, 0.6, 100, 100.0, g, 7).is_err());
}

#[test]
fn random_two_law_builtin_is_balanced() {
    let b = build(&builtin("random-two-law").unwrap(), 1000).unwrap();
    assert!(b.expectations.summary.starts_with("Balanced"), "{}", b.expectations.summary);
    // char1 + 2 char2 = (1 - 0.5, 0.5 + 0.5)
    assert!((b.triplet.alpha.cumulative(1.0) - 0.5).abs() < 1e-12);
    assert!((b.triplet.beta.cumulative(1.0) - 1.0).abs() < 1e-12);
}

#[test]
fn unknown_kind_rejected() {
    assert!(matches!(ScenarioSpec::from_json(r#"{"kind": "teleport"}"#), Err(Error::UnknownKind(_))));
    assert!(matches!(builtin("nope"), Err(Error::UnknownKind(_))));
    assert!(ScenarioSpec::from_json(r#"{"kind": "catastrophe", "base": {"family": "binary"}, "a": -2, "t0": 1}"#).is_err());
    let ok = ScenarioSpec::from_json(r#"{"kind": "catastrophe", "base": {"family": "binary"}, "a": -0.5, "t0": 1}"#).unwrap();
    assert_eq!(ok, builtin("catastrophe").unwrap());
}

#[test]
fn bottleneck_profile_collapses() {
    let spec = builtin("bottleneck").unwrap();
    let mut mins = Vec::new();
    for &n in &[100u64, 1000, 10_000] {
        let b = build(&spec, n).unwrap();
        assert_eq!(b.expectations.bottleneck_at, Some(2.0));
        mins.push(u_profile(&b.env, 3.0, 1.0, 0.0, 1.9).unwrap().min_u);
    }
    assert!(mins.windows(2).all(|w| w[1] < 0.05 * w[0]), "{mins:?}");
}

#[test]
fn builtins_are_plain() {
    let all = builtins();
    assert_eq!(all.len(), 8);
    for b in &all {
        assert!(!b.description.is_empty());
        for bad in ["et al", "Eq.", "Thm", "Section", "arXiv"] {
            assert!(!b.description.contains(bad), "{}: {}", b.name, b.description);
        }
        // numbered references like [12]
        let cited = b.description.split('[').skip(1).any(|rest| {
            rest.find(']').is_some_and(|k| k > 0 && rest[..k].chars().all(|c| c.is_ascii_digit() || c == ','))
        });
        assert!(!cited, "{}", b.description);
        build(&b.spec, 100).unwrap();
    }
}
