mod common;

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use ivselect::simulation::{replication_rng, DesignName, SimulationDesign};
use ivselect::{first_stage_strength, post_selection_tsls, sargan, SelectionConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn strong(n: usize) -> SimulationDesign {
    SimulationDesign::new(DesignName::StrongP1, n).unwrap()
}

fn valid_nine() -> Vec<usize> {
    (12..21).collect()
}

#[test]
fn covariance_is_psd_and_shrinks_like_one_over_n() {
    let mut mean_var = Vec::new();
    for n in [500, 2000, 8000] {
        let design = strong(n);
        let mut sum = 0.0;
        for rep in 0..20 {
            let data = design.generate(&mut replication_rng(31, rep));
            let fit = post_selection_tsls(&data, &valid_nine()).unwrap();
            sum += fit.vcov_beta[0][0];
        }
        mean_var.push(sum / 20.0);
    }
    for w in mean_var.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio / 4.0 - 1.0).abs() <= 0.2, "ratio {ratio}");
    }

    let design = SimulationDesign::new(DesignName::StrongMulti(3), 1000).unwrap();
    for rep in 0..5 {
        let data = design.generate(&mut replication_rng(32, rep));
        let fit = post_selection_tsls(&data, &valid_nine()).unwrap();
        let v = DMatrix::from_fn(3, 3, |i, j| fit.vcov_beta[i][j]);
        assert!((&v - v.transpose()).abs().max() <= 1e-12 * v.abs().max());
        let eig = v.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e > 0.0), "{eig}");
    }
}

#[test]
fn first_stage_is_strong_on_the_strong_design() {
    let design = strong(2000);
    let f: Vec<f64> = (0..50)
        .map(|rep| {
            let data = design.generate(&mut replication_rng(33, rep));
            first_stage_strength(&data, &valid_nine()).unwrap()
        })
        .collect();
    let med = median(f);
    assert!(med > 100.0, "median F {med}");
}

#[test]
fn sargan_upper_tail_matches_chi2() {
    let design = strong(2000).with_alpha(vec![0.0; 21]).unwrap();
    let all: Vec<usize> = (0..21).collect();
    let config = SelectionConfig::default();
    let stats: Vec<f64> = (0..2000)
        .map(|rep| {
            let data = design.generate(&mut replication_rng(34, rep));
            sargan(&data, &all, &config).unwrap().statistic
        })
        .collect();
    let mut sorted = stats.clone();
    sorted.sort_by(f64::total_cmp);
    let q95 = sorted[(0.95 * sorted.len() as f64) as usize];
    let target = ChiSquared::new(20.0).unwrap().inverse_cdf(0.95);
    assert!((target - 31.410).abs() < 1e-3);
    assert!((q95 / target - 1.0).abs() <= 0.10, "q95 {q95}");
}

#[test]
fn keeping_invalid_instruments_is_rejected() {
    let design = strong(2000);
    let all: Vec<usize> = (0..21).collect();
    let config = SelectionConfig::default();
    let rejected = (0..200)
        .filter(|&rep| {
            let data = design.generate(&mut replication_rng(35, rep));
            !sargan(&data, &all, &config).unwrap().passed
        })
        .count();
    assert!(rejected as f64 / 200.0 >= 0.99, "{rejected}/200");
}

#[test]
fn oracle_median_error_matches_known_scale() {
    let design = strong(2000);
    let errs: Vec<f64> = (0..200)
        .map(|rep| {
            let data = design.generate(&mut replication_rng(36, rep));
            post_selection_tsls(&data, &valid_nine()).unwrap().beta[0].abs()
        })
        .collect();
    let mae = median(errs);
    assert!((mae - 0.008).abs() <= 0.003, "oracle MAE {mae}");
}

#[test]
fn residual_regression_on_instruments_is_flat_when_all_valid() {
    // With every direct effect zero, 2SLS residuals carry no signal left in
    // Z: the Sargan test (n R^2 of that regression) passes at large n.
    let design = strong(20_000).with_alpha(vec![0.0; 21]).unwrap();
    let data = design.generate(&mut replication_rng(37, 0));
    let all: Vec<usize> = (0..21).collect();
    let out = sargan(&data, &all, &SelectionConfig::default()).unwrap();
    assert!(out.passed, "{out:?}");
    let fit = post_selection_tsls(&data, &all).unwrap();
    let u = DMatrix::from_column_slice(data.n(), 1, &fit.residuals);
    let coef = common::ols(data.z(), &u);
    assert!(coef.abs().max() < 0.05, "{coef}");
}
