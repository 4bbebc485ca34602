use ntcp_msm::msm::{fit_msm, pointwise_ntcp_grid, McmcSettings, ModelFamily, ModelSpec, SurfaceDraw};
use ntcp_msm::sim::{generate_cohort_sim1, Sim1Config};
use ntcp_msm::surface::{
    is_monotone_sample, posterior_mean_on_grid, rjmcmc_step, truncated_poisson_pmf, FnTarget, MonotonePointConfig,
    MoveKind, PriorConfig, SupportPoint,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn axis(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 / (n - 1) as f64).collect()
}

fn on_grid(f: impl Fn(f64, f64) -> f64, n: usize) -> Vec<Vec<f64>> {
    let a = axis(n);
    a.iter().map(|&d| a.iter().map(|&g| f(d, g)).collect()).collect()
}

fn config_strategy() -> impl Strategy<Value = MonotonePointConfig> {
    let point = (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..5.0).prop_map(|(a, b, m)| SupportPoint { coords: [a, b], mark: m });
    (-5.0f64..5.0, prop::collection::vec(point, 0..25))
        .prop_map(|(base, pts)| MonotonePointConfig::new(2, base, pts, PriorConfig::default()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn dominated_queries_never_decrease(
        c in config_strategy(),
        lo in (0.0f64..=1.0, 0.0f64..=1.0),
        step in (0.0f64..=1.0, 0.0f64..=1.0),
    ) {
        let hi = ((lo.0 + step.0).min(1.0), (lo.1 + step.1).min(1.0));
        prop_assert!(c.value_at(lo.0, lo.1) <= c.value_at(hi.0, hi.1));
        prop_assert!(is_monotone_sample(&on_grid(|d, g| c.value_at(d, g), 9)));
    }

    #[test]
    fn posterior_mean_of_monotone_draws_is_monotone(draws in prop::collection::vec(config_strategy(), 1..8)) {
        let a = axis(11);
        let mean = posterior_mean_on_grid(&draws, &a, &a).unwrap();
        prop_assert!(is_monotone_sample(&mean));
    }
}

#[test]
fn flat_target_recovers_count_prior() {
    // With max_points = 2 the stationary count law is a three-point
    // truncated Poisson, checked cell by cell.
    let prior = PriorConfig { point_count_prior_mean: 1.5, max_points: 2, ..Default::default() };
    let mut c = MonotonePointConfig::constant(2, 0.0, prior).unwrap();
    let mut target = FnTarget::new(|_: &MonotonePointConfig| 0.0, &c);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (burn, sweeps, batch) = (1_000, 200_000, 2_000);
    let mut counts = Vec::with_capacity(sweeps);
    for i in 0..burn + sweeps {
        rjmcmc_step(&mut c, &mut target, &mut rng, &MoveKind::ALL);
        if i >= burn {
            counts.push(c.len());
        }
    }
    let pmf = truncated_poisson_pmf(1.5, 2);
    for (k, &p) in pmf.iter().enumerate() {
        let means: Vec<f64> = counts
            .chunks(batch)
            .map(|ch| ch.iter().filter(|&&v| v == k).count() as f64 / ch.len() as f64)
            .collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        let se = (var / means.len() as f64).sqrt();
        assert!((m - p).abs() <= 3.0 * se, "P(K = {k}): {m} vs {p} (se {se})");
    }
}

fn draw_grid(draw: &SurfaceDraw, n: usize) -> Vec<Vec<f64>> {
    on_grid(|d, g| draw.lambda(d, g), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fitted_monotone_models_are_monotone(seed in any::<u64>(), n in 8usize..20, bivariable in any::<bool>()) {
        let sim = generate_cohort_sim1(&Sim1Config { n, seed, ..Default::default() }).unwrap();
        let family = if bivariable { ModelFamily::BivariableMonotone } else { ModelFamily::AdditiveMonotone };
        let mut spec = ModelSpec::new(family);
        spec.mcmc = McmcSettings { iterations: 30, burn_in: 10, surface_steps: 3, seed, ..Default::default() };
        let fit = fit_msm(&sim.cohort, &spec).unwrap();
        for draw in &fit.surface_draws {
            prop_assert!(is_monotone_sample(&draw_grid(draw, 9)));
            let configs: Vec<&MonotonePointConfig> = match draw {
                SurfaceDraw::Bivariable(c) => vec![c],
                SurfaceDraw::Additive { dose, volume } => vec![dose, volume],
                SurfaceDraw::Parametric(_) => unreachable!(),
            };
            for c in configs {
                prop_assert!(c.points().iter().all(|p| p.mark >= 0.0));
            }
        }
        prop_assert!(is_monotone_sample(&fit.quasi_posterior_mean_surface.values));
        let a = axis(9);
        prop_assert!(is_monotone_sample(&pointwise_ntcp_grid(&fit, &sim.cohort, &a, &a).unwrap()));
    }
}
