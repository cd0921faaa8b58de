//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! with status 1 if any criterion fails.

mod common;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use ivselect::data::binomial;
use ivselect::simulation::{
    replication_rng, run_monte_carlo, run_monte_carlo_with, DesignName, Method, MethodMetrics,
    SimulationDesign, SimulationReport, WeakP1, WeakP2,
};
use ivselect::{
    just_identified_all, run_selection, sargan, select_valid, ward_merge_path, Dataset,
    Dendrogram, SelectionConfig,
};

use common::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn metrics<'a>(report: &'a SimulationReport, method: &str) -> &'a MethodMetrics {
    report.methods.iter().find(|m| m.method == method).unwrap()
}

fn val(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn simulate(name: DesignName, n: usize, reps: usize, seed: u64) -> SimulationReport {
    let design = SimulationDesign::new(name, n).unwrap();
    run_monte_carlo(&design, reps, seed, &Method::ALL).unwrap()
}

fn heights_monotone(d: &Dendrogram) -> bool {
    d.heights().windows(2).all(|w| w[0] <= w[1])
}

fn table1() -> Outcome {
    let r = simulate(DesignName::StrongP1, 2000, 200, 1);
    let (a, nv) = (metrics(&r, "ahc"), metrics(&r, "naive"));
    let (mae, ninv, allinv, orc, cov) = (
        val(a.mae),
        val(a.n_invalid),
        val(a.p_allinv),
        val(a.p_oracle),
        val(a.coverage),
    );
    let naive = val(nv.mae);
    let ok = within(mae, 0.005, 0.012)
        && within(ninv, 11.7, 12.4)
        && allinv >= 0.97
        && orc >= 0.95
        && within(cov, 0.88, 0.97)
        && within(naive, 1.00, 1.12);
    outcome(
        ok,
        format!(
            "ahc MAE {mae:.4}, #invalid {ninv:.3}, p_allinv {allinv:.3}, p_oracle {orc:.3}, \
             coverage {cov:.3}; naive MAE {naive:.4}"
        ),
    )
}

fn table2() -> Outcome {
    let r = simulate(DesignName::StrongMulti(2), 5000, 100, 2);
    let (a, o) = (metrics(&r, "ahc"), metrics(&r, "oracle"));
    let (orc, mae, omae) = (val(a.p_oracle), val(a.mae), val(o.mae));
    outcome(
        orc >= 0.80 && mae <= 2.0 * omae,
        format!("ahc p_oracle {orc:.3}, ahc MAE {mae:.4}, oracle MAE {omae:.4}"),
    )
}

fn table3() -> Outcome {
    let d1 = simulate(DesignName::WeakP1(WeakP1::D1), 2000, 200, 3);
    let d3b = simulate(DesignName::WeakP1(WeakP1::D3b), 2000, 200, 4);
    let a1 = metrics(&d1, "ahc");
    let a3 = metrics(&d3b, "ahc");
    let (allinv, weakin, mae, allinv3) = (
        val(a1.p_allinv),
        val(a1.weakin),
        val(a1.mae),
        val(a3.p_allinv),
    );
    outcome(
        allinv >= 0.98 && weakin >= 0.98 && within(mae, 0.005, 0.012) && allinv3 >= 0.75,
        format!(
            "d1: p_allinv {allinv:.3}, weakin {weakin:.3}, MAE {mae:.4}; d3b: p_allinv {allinv3:.3}"
        ),
    )
}

fn table5() -> Outcome {
    let r = simulate(DesignName::WeakP2(WeakP2::D1), 5000, 100, 5);
    let a = metrics(&r, "ahc");
    let (allinv, mae) = (val(a.p_allinv), val(a.mae));
    outcome(
        allinv >= 0.95 && mae <= 0.01,
        format!("p_allinv {allinv:.3}, MAE {mae:.4}"),
    )
}

fn ward_oracle() -> Outcome {
    let mut rng = rng(55);
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=40);
        let p = rng.random_range(1..=3);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| normal_matrix(&mut rng, 1, p).iter().copied().collect())
            .collect();
        let fast = ward_merge_path(&points).unwrap();
        let slow = naive_ward(&points);
        let same_pairs = fast
            .merges()
            .iter()
            .zip(&slow)
            .all(|(m, s)| (m.a, m.b) == (s.0, s.1));
        if !same_pairs || !heights_monotone(&fast) {
            mismatched += 1;
        }
        for (m, s) in fast.merges().iter().zip(&slow) {
            worst = worst.max((m.height - s.2).abs());
        }
    }
    outcome(
        mismatched == 0 && worst <= 1e-9,
        format!("100 instances, {mismatched} sequence mismatches, max height gap {worst:.2e}"),
    )
}

fn estimator_identities() -> Outcome {
    let mut rng = rng(66);
    let config = SelectionConfig::default();

    let mut worst_ratio = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(50..=300);
        let j = rng.random_range(2..=10);
        let alpha: Vec<f64> = (0..j)
            .map(|_| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(-1.0..1.0) })
            .collect();
        let data = random_dataset(&mut rng, n, 1, &alpha, &[0.5], 1.0);
        let gamma = ols(data.z(), data.d());
        let big_gamma = ols(data.z(), &nalgebra::DMatrix::from_column_slice(n, 1, data.y().as_slice()));
        for (e, jj) in just_identified_all(&data, &config).unwrap().iter().zip(0..) {
            let ratio = big_gamma[jj] / gamma[jj];
            worst_ratio = worst_ratio.max((e.beta[0] - ratio).abs());
        }
    }

    let mut worst_route = 0.0f64;
    let mut combos = 0;
    for _ in 0..100 {
        let p = rng.random_range(1..=3);
        let j = rng.random_range(p..=8);
        let n = rng.random_range(80..=400);
        let alpha: Vec<f64> = (0..j)
            .map(|_| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(-1.0..1.0) })
            .collect();
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = random_dataset(&mut rng, n, p, &alpha, &beta, 1.0);
        for e in just_identified_all(&data, &config).unwrap() {
            let direct = direct_just_identified(&data, e.combo.indices());
            for (a, b) in e.beta.iter().zip(&direct) {
                worst_route = worst_route.max((a - b).abs());
            }
            combos += 1;
        }
    }
    outcome(
        worst_ratio <= 1e-10 && worst_route <= 1e-8,
        format!(
            "ratio identity max gap {worst_ratio:.2e} (limit 1e-10); \
             {combos} combinations, route max gap {worst_route:.2e} (limit 1e-8)"
        ),
    )
}

/// Asymptotic Kolmogorov distribution tail with the Stephens small-sample
/// correction.
fn ks_p_value(d: f64, m: usize) -> f64 {
    let sm = (m as f64).sqrt();
    let lambda = (sm + 0.12 + 0.11 / sm) * d;
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

fn sargan_calibration() -> Outcome {
    let design = SimulationDesign::new(DesignName::StrongP1, 2000)
        .unwrap()
        .with_alpha(vec![0.0; 21])
        .unwrap();
    let all: Vec<usize> = (0..21).collect();
    let config = SelectionConfig::default();
    let stats: Vec<f64> = (0..2000u64)
        .map(|rep| {
            let data = design.generate(&mut replication_rng(7, rep));
            sargan(&data, &all, &config).unwrap().statistic
        })
        .collect();
    let chi2 = ChiSquared::new(20.0).unwrap();
    let d = ks_statistic(&stats, |x| chi2.cdf(x));
    let p = ks_p_value(d, stats.len());
    outcome(
        p >= 0.01,
        format!("2000 replications, KS D {d:.4}, p-value {p:.3} against chi2(20)"),
    )
}

fn family_size() -> Outcome {
    let mut rng = rng(88);
    let config = SelectionConfig::default();
    let mut failures = Vec::new();
    for p in 1..=2usize {
        for g in 3..=5usize {
            // Valid instruments first, then two invalid ones with distinct
            // direct effects.
            let mut alpha = vec![0.0; g];
            alpha.extend([1.0, -0.7]);
            let beta = vec![0.3; p];
            let data = random_dataset(&mut rng, 200, p, &alpha, &beta, 0.0);
            let est = just_identified_all(&data, &config).unwrap();
            let exact = est
                .iter()
                .filter(|e| e.beta.iter().zip(&beta).all(|(a, b)| (a - b).abs() < 1e-8))
                .count();
            let separated = est
                .iter()
                .filter(|e| e.beta.iter().zip(&beta).any(|(a, b)| (a - b).abs() > 1e-6))
                .count();
            let sel = select_valid(&data, &config).unwrap();
            let want = binomial(g, p) as usize;
            if exact != want || exact + separated != est.len() || sel.valid != (0..g).collect::<Vec<_>>()
            {
                failures.push(format!("g={g} P={p}: {exact} exact of {want}, valid {:?}", sel.valid));
            }
        }
    }
    let detail = if failures.is_empty() {
        "g in {3,4,5}, P in {1,2}: binom(g,P) exact estimates and oracle selection".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn determinism_and_invariance() -> Outcome {
    let mut notes = Vec::new();

    let mut same_across_workers = true;
    for name in [DesignName::StrongP1, DesignName::WeakP1(WeakP1::D2)] {
        let design = SimulationDesign::new(name, 500).unwrap();
        let cfg = SelectionConfig::default();
        let runs: Vec<String> = [Some(1), Some(2), Some(4), None]
            .into_iter()
            .map(|w| {
                let r = run_monte_carlo_with(&design, 24, 9, &Method::ALL, &cfg, w).unwrap();
                serde_json::to_string(&r).unwrap()
            })
            .collect();
        same_across_workers &= runs.windows(2).all(|w| w[0] == w[1]);
    }
    notes.push(format!("worker counts 1/2/4/default identical: {same_across_workers}"));

    let mut rng = rng(99);
    let config = SelectionConfig::default();
    let mut perm_ok = 0;
    let mut perm_total = 0;
    let mut dendrograms = 0;
    let mut monotone = true;
    for (i, name) in DesignName::ALL.iter().enumerate() {
        let design = SimulationDesign::new(name.parse().unwrap(), 1000).unwrap();
        for rep in 0..3u64 {
            let data: Dataset = design.generate(&mut replication_rng(100 + i as u64, rep));
            let run = run_selection(&data, &config).unwrap();
            dendrograms += 1;
            monotone &= heights_monotone(&run.dendrogram);

            let mut order: Vec<usize> = (0..data.j()).collect();
            order.shuffle(&mut rng);
            let permuted = data.permute_instruments(&order).unwrap();
            let prun = run_selection(&permuted, &config).unwrap();
            dendrograms += 1;
            monotone &= heights_monotone(&prun.dendrogram);
            // Column c of the permuted data is original column order[c].
            let mut mapped: Vec<usize> = prun.result.valid.iter().map(|&c| order[c]).collect();
            mapped.sort_unstable();
            perm_total += 1;
            if mapped == run.result.valid {
                perm_ok += 1;
            }
        }
    }
    notes.push(format!("permutation invariance {perm_ok}/{perm_total}"));
    notes.push(format!("Ward heights monotone on {dendrograms} dendrograms: {monotone}"));
    outcome(
        same_across_workers && perm_ok == perm_total && monotone,
        notes.join(", "),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("strong single-regressor design, n=2000, 200 reps", table1),
        ("two-regressor design, n=5000, 100 reps", table2),
        ("weak single-regressor designs d1 and d3b", table3),
        ("weak two-regressor design d1, n=5000, 100 reps", table5),
        ("Ward path equals naive re-scan oracle", ward_oracle),
        ("estimator identities", estimator_identities),
        ("Sargan calibration against chi2(20)", sargan_calibration),
        ("family-size identity on noiseless data", family_size),
        ("determinism and invariance suite", determinism_and_invariance),
    ];
    let mut failed = 0;
    for (i, (label, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let status = if o.passed { "PASS" } else { "FAIL" };
        if !o.passed {
            failed += 1;
        }
        println!(
            "{status} [{}] {label}: {} ({:.1}s)",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "NOTE [10] empirical application tables and CIM/HT columns are out of scope; \
         covered by the property suites"
    );
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
