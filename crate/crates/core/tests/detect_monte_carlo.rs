//! Monte-Carlo checks of detector behavior at reference operating points
//! that the acceptance corners do not already pin down.

use camd::detect::{Algorithm, DetectorSpec};
use camd::experiment::{run_cell, GridSpec, ProblemTemplate};
use camd::model::{GaussianSpec, SignalModel};

fn jsm2r_grid(
    algorithm: Algorithm,
    m: usize,
    t: usize,
    k: usize,
    min_trials: u64,
    seed: u64,
) -> GridSpec {
    GridSpec {
        m_values: vec![m],
        t_values: vec![t],
        k_values: vec![k],
        template: ProblemTemplate {
            n_vars: 100,
            model: SignalModel::Jsm2r,
            prevalent: GaussianSpec {
                mean: 0.0,
                var: 1.0,
            },
            anomalous: GaussianSpec {
                mean: 7.0,
                var: 1.0,
            },
        },
        detector: DetectorSpec::new(algorithm),
        confidence: 0.95,
        target_width: 0.1,
        min_trials,
        max_trials: 1000,
        base_seed: seed,
    }
}

#[test]
fn lasso_single_measurement_row_recovers_single_anomaly() {
    // M = 1 reduces the stacked system to one measurement per time-step; at
    // T = 100 and one anomaly the detector still succeeds in at least 90%
    // of trials.
    let grid = jsm2r_grid(Algorithm::Lasso, 1, 100, 1, 50, 2024);
    let cell = run_cell(&grid, 1, 100, 1).unwrap();
    assert!(
        cell.rate >= 0.9,
        "rate {} over {} trials",
        cell.rate,
        cell.trials
    );
}

#[test]
fn osga_reference_cell_over_fifty_trials() {
    // N=100, K=1, M=T=50 with at least 50 seeded trials.
    let grid = jsm2r_grid(Algorithm::Osga, 50, 50, 1, 50, 2025);
    let cell = run_cell(&grid, 50, 50, 1).unwrap();
    assert!(cell.trials >= 50);
    assert!(
        cell.rate >= 0.95,
        "rate {} over {} trials",
        cell.rate,
        cell.trials
    );
}

#[test]
fn somp_beats_osga_at_short_horizons() {
    // At M = 20, T = 10 with five anomalies the pursuit succeeds where the
    // one-shot greedy rule does not, matching the reported ordering at
    // small T.
    let somp = run_cell(&jsm2r_grid(Algorithm::Somp, 20, 10, 5, 20, 2026), 20, 10, 5).unwrap();
    let osga = run_cell(&jsm2r_grid(Algorithm::Osga, 20, 10, 5, 20, 2026), 20, 10, 5).unwrap();
    assert!(
        somp.rate > osga.rate,
        "somp {} vs osga {}",
        somp.rate,
        osga.rate
    );
}
