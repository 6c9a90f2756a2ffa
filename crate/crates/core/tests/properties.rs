use ndarray::{Array1, Array2};
use proptest::prelude::*;

use tabular_dice::constrained::{lambda_step, ConstrainedConfig};
use tabular_dice::divergence::{FGenerator, GeneratorKind};
use tabular_dice::extraction::{extract_direct, extraction_objective};
use tabular_dice::mdp::{
    behavior_policy, build_mle_model, collect_dataset, exact_policy_value, exact_stationary_distribution,
    generate_random_mdp, value_iteration, MleModel, Signal, TabularMdp, TabularPolicy,
};
use tabular_dice::metrics::{
    bellman_flow_violation, ope_estimate, policy_correction_sums, policy_correction_violation,
};
use tabular_dice::solvers::{fdvl_solve, semidice_solve, solve_state, xql_solve, OptimizerConfig, StateOperator};

const S: usize = 6;
const A: usize = 3;

fn small_mdp(seed: u64) -> TabularMdp {
    generate_random_mdp(seed, S, A, 3, 0.9).unwrap()
}

fn small_model(seed: u64) -> (TabularMdp, MleModel) {
    let mdp = small_mdp(seed);
    let pi = behavior_policy(&mdp, 0.5).unwrap();
    let ds = collect_dataset(&mdp, &pi, 20, 50, seed + 1_000_000).unwrap();
    let model = build_mle_model(&ds, S, A, mdp.gamma).unwrap();
    (mdp, model)
}

fn policy_from(raw: &[f64]) -> TabularPolicy {
    let mut p = Array2::from_shape_vec((S, A), raw.to_vec()).unwrap();
    for mut row in p.outer_iter_mut() {
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    TabularPolicy::new(p).unwrap()
}

fn raw_policy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, S * A)
}

fn generator() -> impl Strategy<Value = GeneratorKind> {
    prop::sample::select(GeneratorKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn occupancy_satisfies_flow_recurrence(seed in 0u64..10_000, raw in raw_policy()) {
        let mdp = small_mdp(seed);
        let pi = policy_from(&raw);
        let d = exact_stationary_distribution(&mdp, &pi).unwrap();
        for s in 0..S {
            let inflow: f64 = (0..S).flat_map(|sp| (0..A).map(move |a| (sp, a))).map(|(sp, a)| mdp.transition[[sp, a, s]] * d[[sp, a]]).sum();
            let mass = (1.0 - mdp.gamma) * mdp.p0[s] + mdp.gamma * inflow;
            for a in 0..A {
                prop_assert!((d[[s, a]] - pi.probs[[s, a]] * mass).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normalized_value_is_occupancy_weighted_reward(seed in 0u64..10_000, raw in raw_policy()) {
        let mdp = small_mdp(seed);
        let pi = policy_from(&raw);
        let d = exact_stationary_distribution(&mdp, &pi).unwrap();
        let v = exact_policy_value(&mdp, &pi, Signal::Reward).unwrap();
        prop_assert!((v.normalized - (&d * &mdp.reward).sum()).abs() < 1e-12);
    }

    #[test]
    fn greedy_policy_dominates_random_policies(seed in 0u64..10_000, raws in prop::collection::vec(raw_policy(), 10)) {
        let mdp = small_mdp(seed);
        let best = exact_policy_value(&mdp, &value_iteration(&mdp, 1e-12).unwrap().policy, Signal::Reward).unwrap().normalized;
        for raw in &raws {
            let v = exact_policy_value(&mdp, &policy_from(raw), Signal::Reward).unwrap().normalized;
            prop_assert!(best >= v - 1e-10);
        }
    }

    #[test]
    fn mle_policy_times_state_marginal_is_joint(seed in 0u64..10_000) {
        let (_, m) = small_model(seed);
        for s in 0..S {
            for a in 0..A {
                if m.support_mask[[s, a]] {
                    prop_assert!((m.pi_d.probs[[s, a]] * m.d_d_state[s] - m.d_d[[s, a]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn f_prime_inverse_is_two_sided(kind in generator(), x in 1e-3f64..10.0) {
        let g = FGenerator::new(kind);
        prop_assert!((g.f_prime_inverse(g.f_prime(x)) - x).abs() < 1e-10);
    }

    #[test]
    fn nonnegative_conjugate_is_convex_and_nondecreasing(kind in generator(), a in -5.0f64..5.0, b in -5.0f64..5.0, t in 0.0f64..1.0) {
        let g = FGenerator::new(kind);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(g.f_star0(lo) <= g.f_star0(hi) + 1e-12);
        let mid = t * lo + (1.0 - t) * hi;
        let chord = t * g.f_star0(lo) + (1.0 - t) * g.f_star0(hi);
        prop_assert!(g.f_star0(mid) <= chord + 1e-9 * (1.0 + chord.abs()));
    }

    #[test]
    fn reverse_generator_is_convex(kind in generator(), x in 0.05f64..8.0, y in 0.05f64..8.0) {
        let g = FGenerator::new(kind);
        let rev = |u: f64| u * g.f(1.0 / u);
        prop_assert!(rev(1.0).abs() < 1e-12);
        prop_assert!(rev(0.5 * (x + y)) <= 0.5 * (rev(x) + rev(y)) + 1e-10);
    }

    #[test]
    fn semidice_is_a_nonsparse_policy_correction(seed in 0u64..10_000, kind in generator(), log_alpha in -3.0f64..1.0) {
        let (_, m) = small_model(seed);
        let corr = semidice_solve(&m, &FGenerator::new(kind), &OptimizerConfig::default().with_alpha(10f64.powf(log_alpha)), None).unwrap();
        let w = corr.policy_weights().unwrap();
        let sums = policy_correction_sums(w, &m);
        for s in m.supported_states() {
            prop_assert!((sums[s] - 1.0).abs() <= 1e-9);
            prop_assert!((0..A).any(|a| m.support_mask[[s, a]] && w[[s, a]] > 0.0));
        }
    }

    #[test]
    fn fdvl_scaling_law(seed in 0u64..10_000, beta in 0.05f64..0.995) {
        let (_, m) = small_model(seed);
        let corr = fdvl_solve(&m, &FGenerator::new(GeneratorKind::Chi2), beta, &OptimizerConfig::default()).unwrap();
        let sums = policy_correction_sums(corr.policy_weights().unwrap(), &m);
        for s in m.supported_states() {
            prop_assert!((sums[s] - (1.0 - beta) / beta).abs() <= 1e-9);
        }
    }

    #[test]
    fn semidice_kl_value_is_xql_value_minus_alpha(seed in 0u64..10_000, log_alpha in -1.5f64..1.0) {
        let (_, m) = small_model(seed);
        let alpha = 10f64.powf(log_alpha);
        let xql = xql_solve(&m, alpha, &OptimizerConfig::default()).unwrap();
        let q = xql.q.as_ref().unwrap();
        for s in m.supported_states() {
            let acts: Vec<usize> = (0..A).filter(|&a| m.support_mask[[s, a]]).collect();
            let qs: Vec<f64> = acts.iter().map(|&a| q[[s, a]]).collect();
            let pis: Vec<f64> = acts.iter().map(|&a| m.pi_d.probs[[s, a]]).collect();
            let op = StateOperator::SemiDice { generator: FGenerator::new(GeneratorKind::Kl), alpha };
            let semi = solve_state(&op, s, &qs, &pis).unwrap();
            prop_assert!((semi.value - (xql.nu[s] - alpha)).abs() < 1e-8);
        }
    }

    #[test]
    fn extraction_objective_is_convex(seed in 0u64..10_000, kind in generator(), a in prop::collection::vec(-2.0f64..2.0, S), b in prop::collection::vec(-2.0f64..2.0, S), t in 0.0f64..1.0) {
        let (_, m) = small_model(seed);
        let corr = semidice_solve(&m, &FGenerator::new(GeneratorKind::Chi2), &OptimizerConfig::default().with_alpha(0.1), None).unwrap();
        let w = corr.policy_weights().unwrap();
        let g = FGenerator::new(kind);
        let mask = m.state_mask();
        let pick = |v: &[f64]| Array1::from_shape_fn(S, |s| if mask[s] { v[s] } else { 0.0 });
        let (mu_a, mu_b) = (pick(&a), pick(&b));
        let mid = &mu_a * t + &mu_b * (1.0 - t);
        let fa = extraction_objective(&m, w, &g, &mu_a);
        let fb = extraction_objective(&m, w, &g, &mu_b);
        let chord = t * fa + (1.0 - t) * fb;
        prop_assert!(extraction_objective(&m, w, &g, &mid) <= chord + 1e-9 * (1.0 + chord.abs()));
    }

    #[test]
    fn extraction_is_generator_invariant_and_flow_feasible(seed in 0u64..10_000, log_alpha in -2.0f64..1.0) {
        let (_, m) = small_model(seed);
        let cfg = OptimizerConfig::default().with_alpha(10f64.powf(log_alpha));
        let corr = semidice_solve(&m, &FGenerator::new(GeneratorKind::Chi2), &cfg, None).unwrap();
        let w = corr.policy_weights().unwrap();
        let kl = extract_direct(&m, w, &FGenerator::new(GeneratorKind::Kl), &OptimizerConfig::default()).unwrap();
        let chi2 = extract_direct(&m, w, &FGenerator::new(GeneratorKind::Chi2), &OptimizerConfig::default()).unwrap();
        let gap = (&kl.w_s - &chi2.w_s).iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        prop_assert!(gap < 1e-3);
        prop_assert!(kl.viol_bellman_flow <= 1e-3);
    }

    #[test]
    fn lambda_stays_nonnegative_and_follows_the_violation(lambda in 0.0f64..1e3, est in 0.0f64..1.0, budget in 1e-6f64..1.0, gamma in 0.5f64..0.99) {
        let cfg = ConstrainedConfig::default();
        let next = lambda_step(lambda, est, budget, gamma, &cfg);
        prop_assert!((0.0..=cfg.lambda_max).contains(&next));
        if est > budget {
            prop_assert!(next >= lambda);
        } else if est < budget {
            prop_assert!(next <= lambda);
        }
    }

    #[test]
    fn ope_is_linear_and_metrics_are_deterministic(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0, raw in prop::collection::vec(0.0f64..4.0, S * A)) {
        let (_, m) = small_model(seed);
        let w = Array2::from_shape_vec((S, A), raw).unwrap();
        let r1 = &m.reward_hat;
        let r2 = m.reward_hat.mapv(|x| 1.0 - x);
        let combined = r1 * a + &r2 * b;
        let lhs = ope_estimate(&w, &m, &combined);
        let rhs = a * ope_estimate(&w, &m, r1) + b * ope_estimate(&w, &m, &r2);
        prop_assert!((lhs - rhs).abs() < 1e-12);
        prop_assert_eq!(bellman_flow_violation(&w, &m).to_bits(), bellman_flow_violation(&w.clone(), &m).to_bits());
        prop_assert_eq!(policy_correction_violation(&w, &m).to_bits(), policy_correction_violation(&w.clone(), &m).to_bits());
    }
}
