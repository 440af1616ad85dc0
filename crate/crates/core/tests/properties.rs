use proptest::prelude::*;

use deceptive_bandits::allocation::{gamma, solve_allocation};
use deceptive_bandits::boost::{boost_distribution, boost_probability, boost_probability_approx};
use deceptive_bandits::decay::{simulate_decay, DecayProcessParams};
use deceptive_bandits::experiments::aggregate;
use deceptive_bandits::quadrature::LegendreRule;
use deceptive_bandits::reference::optimal_arm_probabilities_split;
use deceptive_bandits::{Budget, GapStructure, GaussianBeliefs, RandomSource, SimplexDistribution};

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn boost_respects_budget(probs in (2usize..7).prop_flat_map(simplex), target in 0usize..6, eps in 0.0f64..2.0) {
        let reference = SimplexDistribution::new(probs).unwrap();
        let target = target % reference.len();
        let sol = boost_distribution(&reference, target, Budget::Finite(eps)).unwrap();
        prop_assert!(sol.distribution.kl_divergence(&reference) <= eps + 1e-9);
        prop_assert!(sol.q_star >= reference.probs()[target]);
        let total: f64 = sol.distribution.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn boost_monotone_in_budget(p in 1e-12f64..0.999, e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = boost_probability(p, Budget::Finite(lo)).unwrap();
        let b = boost_probability(p, Budget::Finite(hi)).unwrap();
        prop_assert!(a <= b + 1e-12);
    }

    #[test]
    fn approximation_underestimates(logp in -14.0f64..-0.01, loge in -5.0f64..1.0) {
        let (p, eps) = (10f64.powf(logp), 10f64.powf(loge));
        let q = boost_probability(p, Budget::Finite(eps)).unwrap();
        prop_assert!(boost_probability_approx(p, eps).unwrap() <= q + 1e-9);
    }

    #[test]
    fn probabilities_form_a_simplex(
        means in prop::collection::vec(-2.0f64..2.0, 2..6),
        log_sds in prop::collection::vec(-4.0f64..0.5, 6),
        shift in -5.0f64..5.0,
    ) {
        let sds: Vec<f64> = log_sds[..means.len()].iter().map(|l| 10f64.powf(*l)).collect();
        let rule = LegendreRule::default_rule();
        let beliefs = GaussianBeliefs::new(means.clone(), sds.clone()).unwrap();
        let probs = optimal_arm_probabilities_split(&beliefs, rule).unwrap();
        let total: f64 = probs.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(probs.probs().iter().all(|&p| p >= 0.0));
        let moved = GaussianBeliefs::new(means.iter().map(|m| m + shift).collect(), sds).unwrap();
        let moved = optimal_arm_probabilities_split(&moved, rule).unwrap();
        for (a, b) in probs.probs().iter().zip(moved.probs()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn allocation_is_optimal_and_balanced(
        public in prop::collection::vec(0.0f64..1.0, 3..6),
        private in prop::collection::vec(0.0f64..1.0, 6),
        probes in prop::collection::vec(simplex(5), 20),
    ) {
        let private = &private[..public.len()];
        let Ok(gaps) = GapStructure::from_means(&public, private) else { return Ok(()); };
        prop_assume!(gaps.d1 > 1e-3 && gaps.delta_istar_priv > 1e-3);
        prop_assume!(gaps.contested_arms().iter().all(|&a| gaps.private_gaps[a] > 1e-3));
        let sol = solve_allocation(&gaps).unwrap();
        prop_assert!(sol.weights.probs().iter().all(|&w| w > 0.0));
        let dim = public.len() - 1;
        for w in probes {
            let s: f64 = w[..dim].iter().sum();
            let w: Vec<f64> = w[..dim].iter().map(|x| x / s).collect();
            prop_assert!(gamma(&w, &gaps).unwrap() <= sol.gamma_star * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn inverse_round_trip(x in 1e-4f64..1e3) {
        let gaps = GapStructure::from_means(&[0.6, 0.3, 0.1, 0.4], &[0.2, 0.5, 0.3, 0.0]).unwrap();
        for a in gaps.contested_arms() {
            let y = gaps.evidence_ratio(a, x);
            let back = gaps.ratio_for_evidence(a, y);
            prop_assert!((back - x).abs() <= 1e-10 * x.max(1.0));
        }
    }

    #[test]
    fn stationarity_decreases(u in 0.001f64..0.998, v in 0.001f64..0.998) {
        let gaps = GapStructure::from_means(&[0.6, 0.3, 0.1, 0.4], &[0.2, 0.5, 0.3, 0.0]).unwrap();
        let top = gaps.evidence_ceiling();
        let (a, b) = (u.min(v) * top, u.max(v) * top);
        prop_assume!(b > a);
        prop_assert!(gaps.stationarity(a) > gaps.stationarity(b));
    }

    #[test]
    fn derivative_matches_differences(u in 0.05f64..0.95) {
        let gaps = GapStructure::from_means(&[0.6, 0.3, 0.1, 0.4], &[0.2, 0.5, 0.3, 0.0]).unwrap();
        let y = u * gaps.evidence_ceiling();
        let h = 1e-6 * y;
        for a in gaps.contested_arms() {
            let fd = (gaps.ratio_for_evidence(a, y + h) - gaps.ratio_for_evidence(a, y - h)) / (2.0 * h);
            let exact = gaps.ratio_derivative(a, y);
            prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs(), "{fd} vs {exact}");
        }
    }

    #[test]
    fn aggregate_orders_interval(values in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 5), 1..20)) {
        let s = aggregate("x", &[1, 2, 3, 4, 5], &values).unwrap();
        for i in 0..5 {
            prop_assert!(s.ci_low[i] <= s.mean[i] && s.mean[i] <= s.ci_high[i]);
        }
    }

    #[test]
    fn decay_counts_are_monotone(c in 0.1f64..3.0, extra in 0.0f64..3.0, seed in 0u64..1000) {
        let params = DecayProcessParams::new(c, c + extra, 2000).unwrap();
        let trace = simulate_decay(&params, &mut RandomSource::new(seed)).unwrap();
        prop_assert!(trace.success_counts.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
    }
}
