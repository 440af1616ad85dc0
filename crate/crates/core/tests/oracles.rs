//! Checks against independent oracles written out in the test code.

use rand::Rng;
use rand_distr::StandardNormal;

use deceptive_bandits::agent::check_stopping;
use deceptive_bandits::allocation::{gamma, solve_allocation};
use deceptive_bandits::boost::{boost_distribution, boost_probability, boost_probability_approx};
use deceptive_bandits::lambert::lambert_w;
use deceptive_bandits::quadrature::{LegendreRule, QuadratureRule};
use deceptive_bandits::reference::{optimal_arm_probabilities, optimal_arm_probabilities_split};
use deceptive_bandits::{
    AllocationCase, Budget, GapStructure, GaussianBeliefs, PosteriorState, ProbabilityMethod,
    RandomSource, SimplexDistribution,
};

fn monte_carlo(means: &[f64], sds: &[f64], draws: u64, seed: u64) -> Vec<f64> {
    let mut rng = RandomSource::new(seed);
    let k = means.len();
    let mut wins = vec![0u64; k];
    for _ in 0..draws {
        let mut best = (0, f64::NEG_INFINITY);
        for a in 0..k {
            let z: f64 = rng.sample(StandardNormal);
            let v = means[a] + sds[a] * z;
            if v > best.1 {
                best = (a, v);
            }
        }
        wins[best.0] += 1;
    }
    wins.iter().map(|&w| w as f64 / draws as f64).collect()
}

#[test]
fn stopping_probability_matches_monte_carlo() {
    let mut post = PosteriorState::new(3);
    for (arm, rewards) in [(0, [0.1, 0.5, -0.2]), (1, [0.9, 0.3, 0.6]), (2, [0.2, 0.4, 0.0])] {
        for r in rewards {
            post.update(arm, r).unwrap();
        }
    }
    let check = check_stopping(&post, 1.0, 0.05, ProbabilityMethod::SplitLegendre, &mut RandomSource::new(0))
        .unwrap();
    let beliefs = post.beliefs(1.0).unwrap();
    let mc = monte_carlo(beliefs.means(), beliefs.stddevs(), 1_000_000, 17);
    assert!((check.p_star - mc[check.best]).abs() < 3e-3, "{} vs {:?}", check.p_star, mc);
}

#[test]
fn split_quadrature_matches_monte_carlo_on_uneven_widths() {
    // Agent-like posterior: one arm pulled far more often than the rest.
    let means = [0.61, 0.35, 0.02, 0.18];
    let sds = [1.0 / 3000f64.sqrt(), 1.0 / 40f64.sqrt(), 1.0 / 9f64.sqrt(), 1.0 / 20f64.sqrt()];
    let beliefs = GaussianBeliefs::new(means.to_vec(), sds.to_vec()).unwrap();
    let split = optimal_arm_probabilities_split(&beliefs, LegendreRule::default_rule()).unwrap();
    let mc = monte_carlo(&means, &sds, 2_000_000, 3);
    for a in 0..4 {
        assert!((split.probs()[a] - mc[a]).abs() < 2e-3, "arm {a}: {} vs {}", split.probs()[a], mc[a]);
    }
}

#[test]
fn plain_hermite_fails_on_sharp_beliefs() {
    // One arm a hundred times narrower than its rival: 32 fixed nodes cannot
    // resolve the step and the raw mass check trips.
    let beliefs = GaussianBeliefs::new(vec![0.6, 0.55], vec![0.002, 0.2]).unwrap();
    let plain = optimal_arm_probabilities(&beliefs, QuadratureRule::default_rule());
    assert!(plain.is_err(), "{plain:?}");
    // Two arms: P(arm 0 best) = Phi((m0 - m1) / sqrt(s0² + s1²)).
    let split = optimal_arm_probabilities_split(&beliefs, LegendreRule::default_rule()).unwrap();
    let z = 0.05 / (0.002f64.powi(2) + 0.04).sqrt();
    let exact = 0.5 * libm::erfc(-z / 2f64.sqrt());
    assert!((split.probs()[0] - exact).abs() < 1e-7, "{} vs {exact}", split.probs()[0]);
}

// q* from first principles: bisection on the Bernoulli KL in high resolution.
fn kl_bernoulli(q: f64, p: f64) -> f64 {
    let mut v = q * (q / p).ln();
    if q < 1.0 {
        v += (1.0 - q) * ((1.0 - q) / (1.0 - p)).ln();
    }
    v
}

fn q_star_oracle(p: f64, eps: f64) -> f64 {
    if kl_bernoulli(1.0, p) <= eps {
        return 1.0;
    }
    let (mut lo, mut hi) = (p, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kl_bernoulli(mid, p) <= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn boost_matches_bisection_oracle() {
    for &p in &[1e-9, 1e-5, 0.01, 0.2, 0.5, 0.9] {
        for &eps in &[1e-4, 0.01, 0.1, 1.0] {
            let q = boost_probability(p, Budget::Finite(eps)).unwrap();
            let oracle = q_star_oracle(p, eps);
            assert!((q - oracle).abs() <= 1e-11 * oracle.max(1e-3), "p={p} eps={eps}: {q} vs {oracle}");
        }
    }
    assert_eq!(boost_probability(0.3, Budget::Unconstrained).unwrap(), 1.0);
    assert_eq!(boost_probability(0.3, Budget::Finite(0.0)).unwrap(), 0.3);
}

#[test]
fn boosted_vector_spends_the_budget() {
    let reference = SimplexDistribution::new(vec![0.7, 0.2, 0.05, 0.05]).unwrap();
    let sol = boost_distribution(&reference, 2, Budget::Finite(0.1)).unwrap();
    let direct: f64 = sol
        .distribution
        .probs()
        .iter()
        .zip(reference.probs())
        .map(|(&b, &p)| b * (b / p).ln())
        .sum();
    assert!((direct - 0.1).abs() < 1e-9, "{direct}");
    // Other arms keep their relative proportions.
    let b = sol.distribution.probs();
    assert!((b[0] / b[1] - 3.5).abs() < 1e-12 && (b[1] / b[3] - 4.0).abs() < 1e-12);
}

#[test]
fn qhat_local_branch_at_half() {
    let qhat = boost_probability_approx(0.5, 0.1).unwrap();
    let local = 0.5 + (0.1f64 * 0.25).sqrt();
    assert!(qhat >= local - 1e-15 && (local - 0.658_113_883_008_418_9).abs() < 1e-15);
    assert!(qhat <= q_star_oracle(0.5, 0.1));
}

#[test]
fn lambert_w_inverts() {
    for &x in &[1e-8, 0.1, 1.0, std::f64::consts::E, 10.0, 1e6, 1e12] {
        let w = lambert_w(x).unwrap();
        assert!((w * w.exp() - x).abs() <= 1e-13 * x, "x={x}");
    }
    assert_eq!(lambert_w(0.0).unwrap(), 0.0);
    assert!((lambert_w(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
}

// Γ term by term from the raw means, for weights over arms other than i*.
fn gamma_direct(public: &[f64], private: &[f64], weights: &[f64]) -> f64 {
    let istar = 0;
    let one = 1;
    let w = |a: usize| weights[a - 1];
    let d = |a: usize| public[istar] - public[a];
    let delta = |a: usize| private[one] - private[a];
    let mut v = w(one).sqrt() * delta(istar).powi(2) / d(one);
    for a in 2..public.len() {
        v = v.min((w(one) * w(a)).sqrt() * delta(a).powi(2) / (w(one).sqrt() * d(a) + w(a).sqrt() * d(one)));
    }
    v
}

#[test]
fn gamma_term_by_term() {
    let (public, private) = ([0.6, 0.3, 0.1], [0.2, 0.5, 0.3]);
    let gaps = GapStructure::from_means(&public, &private).unwrap();
    assert_eq!((gaps.best_public, gaps.best_private), (0, 1));
    assert!((gaps.d1 - 0.3).abs() < 1e-15 && (gaps.delta_istar_priv - 0.3).abs() < 1e-15);
    assert!((gaps.private_gaps[2] - 0.2).abs() < 1e-15 && (gaps.public_gaps[2] - 0.5).abs() < 1e-15);
    let w = [0.5, 0.5];
    // i* term sqrt(.5)·.09/.3 = .212; arm-2 term .5·.04/(sqrt(.5)(.5+.3)) = .0354
    let expected = 0.5 * 0.04 / (0.5f64.sqrt() * 0.8);
    assert!((gamma(&w, &gaps).unwrap() - expected).abs() < 1e-15);
    assert_eq!(gamma(&w, &gaps).unwrap(), gamma_direct(&public, &private, &w));
    assert_eq!(gamma(&[0.0, 1.0], &gaps).unwrap(), 0.0);
}

fn grid_maximum(public: &[f64], private: &[f64]) -> f64 {
    // K = 3: one free coordinate. Grid at 1e-3, then golden-section refinement.
    let f = |x: f64| gamma_direct(public, private, &[x, 1.0 - x]);
    let best = (0..=1000).map(|i| i as f64 / 1000.0).fold(0.0, |b, x| if f(x) > f(b) { x } else { b });
    let (mut lo, mut hi) = ((best - 1e-3).max(0.0), (best + 1e-3).min(1.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    f(0.5 * (lo + hi))
}

#[test]
fn allocation_matches_grid_for_figure_instances() {
    for (public, private) in [([0.6, 0.3, 0.1], [0.2, 0.5, 0.3]), ([0.8, 0.3, 0.6], [0.1, 0.35, 0.2])] {
        let gaps = GapStructure::from_means(&public, &private).unwrap();
        let sol = solve_allocation(&gaps).unwrap();
        let oracle = grid_maximum(&public, &private);
        assert!((sol.gamma_star - oracle).abs() < 1e-9, "{} vs {oracle}", sol.gamma_star);
        assert!(sol.weights.probs().iter().all(|&w| w > 0.0));
    }
}

#[test]
fn allocation_beats_random_weights() {
    let (public, private) = ([0.9, 0.2, 0.5, 0.4, 0.0], [0.1, 0.6, 0.3, 0.45, 0.2]);
    let gaps = GapStructure::from_means(&public, &private).unwrap();
    let sol = solve_allocation(&gaps).unwrap();
    let mut rng = RandomSource::new(12);
    for _ in 0..10_000 {
        // Flat Dirichlet via normalized exponentials.
        let e: Vec<f64> = (0..4).map(|_| -(1.0 - rng.uniform()).ln()).collect();
        let s: f64 = e.iter().sum();
        let w: Vec<f64> = e.iter().map(|x| x / s).collect();
        assert!(gamma(&w, &gaps).unwrap() <= sol.gamma_star + 1e-12);
    }
}

#[test]
fn boundary_case_pins_y_star() {
    // A tiny private gap at i* makes the i* term bind.
    let (public, private) = ([0.9, 0.3, 0.2], [0.49, 0.5, 0.0]);
    let gaps = GapStructure::from_means(&public, &private).unwrap();
    let sol = solve_allocation(&gaps).unwrap();
    assert_eq!(sol.case, AllocationCase::Boundary);
    assert!((sol.y_star - gaps.istar_cap()).abs() < 1e-15);
    let oracle = grid_maximum(&public, &private);
    assert!((sol.gamma_star - oracle).abs() < 1e-7, "{} vs {oracle}", sol.gamma_star);
}

#[test]
fn symmetric_instance_splits_evenly() {
    let gaps = GapStructure::from_means(&[0.6, 0.1, 0.1, 0.1], &[0.2, 0.5, 0.0, 0.0]).unwrap();
    let sol = solve_allocation(&gaps).unwrap();
    let w2 = sol.weight_of(2).unwrap();
    let w3 = sol.weight_of(3).unwrap();
    assert!((w2 - w3).abs() < 1e-9);
}

#[test]
fn two_contested_arms_become_degenerate() {
    let gaps = GapStructure::from_means(&[0.6, 0.3], &[0.2, 0.5]).unwrap();
    let sol = solve_allocation(&gaps).unwrap();
    assert_eq!(sol.case, AllocationCase::Degenerate);
    assert_eq!(sol.weights.probs(), &[1.0]);
    assert!((sol.gamma_star - 0.09 / 0.3).abs() < 1e-15);
}

#[test]
fn ci_coverage_of_bernoulli_mean() {
    use deceptive_bandits::experiments::aggregate;
    let (p, n, trials) = (0.3, 200, 1000);
    let mut rng = RandomSource::new(2024);
    let mut covered = 0;
    for _ in 0..trials {
        let seeds: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![if rng.uniform() < p { 1.0 } else { 0.0 }])
            .collect();
        let s = aggregate("b", &[1], &seeds).unwrap();
        if s.ci_low[0] <= p && p <= s.ci_high[0] {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    assert!((rate - 0.95).abs() < 0.025, "coverage {rate}");
}

#[test]
fn sharp_rival_below_the_mode() {
    // Two very narrow rivals sit left of the leading arm's mode. Reference
    // values come from a 4e7-point trapezoid rule on the same integrals.
    let sds: Vec<f64> = [0.0f64, 0.0, -3.5861167259661872, -2.2027755962954543]
        .iter()
        .map(|l| 10f64.powf(*l))
        .collect();
    let means = vec![-0.9698701316924956, 1.9199801609645448, 0.0, 1.2701849372672238];
    let beliefs = GaussianBeliefs::new(means, sds).unwrap();
    let probs = optimal_arm_probabilities_split(&beliefs, LegendreRule::default_rule()).unwrap();
    let reference = [0.004815075142900846, 0.7405037224731359, 0.0, 0.2546812015303514];
    for (p, r) in probs.probs().iter().zip(reference) {
        assert!((p - r).abs() < 1e-6, "{p} vs {r}");
    }
}
