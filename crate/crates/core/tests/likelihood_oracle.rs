use ntcp_msm::dvh::{Cohort, CumulativeDvh, DoseGrid, PatientRecord};
use ntcp_msm::msm::{build_replicated_rows, quasi_loglik};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Case {
    grid: DoseGrid,
    patients: Vec<(Vec<f64>, Vec<f64>, u8)>,
    beta: Vec<f64>,
    theta: [f64; 5],
}

fn case() -> impl Strategy<Value = Case> {
    (2usize..12, 1usize..30, 0usize..4).prop_flat_map(|(bins, n, p)| {
        let patient = (
            prop::collection::vec(-2.0f64..2.0, p),
            prop::collection::vec(0.0f64..1.0, bins - 1),
            0u8..=1,
        )
            .prop_map(|(x, mut cuts, y)| {
                cuts.sort_by(|a, b| b.total_cmp(a));
                (x, std::iter::once(1.0).chain(cuts).collect(), y)
            });
        (
            prop::collection::vec(patient, n),
            prop::collection::vec(-1.5f64..1.5, p),
            prop::array::uniform5(-2.0f64..2.0),
        )
            .prop_map(move |(patients, beta, theta)| Case {
                grid: DoseGrid::new(bins, 10.0, 70.0).unwrap(),
                patients,
                beta,
                theta,
            })
    })
}

fn lambda(theta: &[f64; 5], d: f64, g: f64) -> f64 {
    theta[0] + theta[1] * d + theta[2] * g + theta[3] * d * g + theta[4] * g * g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn replicated_loglik_is_sum_of_slice_logliks(c in case()) {
        let names = (0..c.beta.len()).map(|j| format!("x{j}")).collect();
        let records = c
            .patients
            .iter()
            .enumerate()
            .map(|(i, (x, g, y))| PatientRecord {
                id: i.to_string(),
                covariates: x.clone(),
                dvh: CumulativeDvh::new(c.grid, g.clone()).unwrap(),
                outcome: *y,
            })
            .collect();
        let cohort = Cohort::new(c.grid, names, records).unwrap();
        let all: Vec<usize> = (0..c.beta.len()).collect();
        let rows = build_replicated_rows(&cohort, &all);
        let surface = |d: f64, g: f64| lambda(&c.theta, d, g);
        let got = quasi_loglik(&rows, &c.beta, &surface).unwrap();

        // One ordinary logistic log-likelihood per dose slice, in the
        // y·η − log(1 + e^η) form.
        let mut expected = 0.0;
        for bin in 1..=c.grid.n_bins() {
            let d = c.grid.scaled(bin);
            let mut slice = 0.0;
            for (x, g, y) in &c.patients {
                let eta: f64 = x.iter().zip(&c.beta).map(|(a, b)| a * b).sum::<f64>() + lambda(&c.theta, d, g[bin - 1]);
                slice += f64::from(*y) * eta - eta.exp().ln_1p();
            }
            expected += slice;
        }
        prop_assert!((got - expected).abs() <= 1e-10, "{got} vs {expected}");
    }
}
