//! The quadrature truth against brute-force simulation.

use ntcp_msm::sim::{
    mc_pointwise_band, mc_truth_oracle, true_pointwise_ntcp, true_stochastic_ntcp, DoseDesign, McIntervention,
    OracleConfig, Sim1Config,
};

const BINS: [usize; 5] = [10, 12, 14, 16, 18];
const VOLUMES: [f64; 5] = [0.1, 0.3, 0.45, 0.7, 0.9];

#[test]
fn pointwise_truth_matches_band_simulation() {
    let design = Sim1Config::default();
    let grid = design.grid();
    let doses: Vec<f64> = BINS.iter().map(|&b| grid.lower_edge(b)).collect();
    let mc = mc_pointwise_band(&design, &doses, &VOLUMES, 0.005, 10_000_000, 11, None).unwrap();
    let oc = OracleConfig::default();
    let mut worst: f64 = 0.0;
    for (a, &d) in doses.iter().enumerate() {
        for (b, &g) in VOLUMES.iter().enumerate() {
            let truth = true_pointwise_ntcp(&design, d, g, &oc).unwrap().expect("interior cell is evaluable");
            let est = mc[a][b].as_ref().expect("enough draws in band");
            let diff = (truth - est.value).abs();
            println!("d={d:.1} g={g:.2} truth={truth:.5} mc={:.5} se={:.5} n={}", est.value, est.standard_error, est.accepted);
            worst = worst.max(diff);
        }
    }
    assert!(worst <= 0.01, "max deviation {worst}");
}

#[test]
fn stochastic_truth_matches_rejection_sampling() {
    let design = Sim1Config::default();
    let truth = true_stochastic_ntcp(&design, 14, 0.8, &OracleConfig::default()).unwrap();
    let mc = mc_truth_oracle(&design, McIntervention::TruncateUpper { d_bin: 14, q: 0.8 }, 1_000_000, 5, None).unwrap();
    println!("truth={truth:.6} mc={:.6} se={:.6}", mc.value, mc.standard_error);
    assert!((truth - mc.value).abs() <= 3.0 * mc.standard_error);
    assert!((truth - mc.value).abs() <= 0.005);
}

#[test]
fn untruncated_truth_matches_simulated_mean() {
    let design = Sim1Config::default();
    let truth = true_stochastic_ntcp(&design, 14, 1.0, &OracleConfig::default()).unwrap();
    let mc = mc_truth_oracle(&design, McIntervention::Identity, 1_000_000, 6, None).unwrap();
    assert!(mc.standard_error <= 0.0005);
    assert!((truth - mc.value).abs() <= 0.005);
}
