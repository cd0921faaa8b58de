//! Aggregation of per-replication outcomes into table columns.

use serde::{Deserialize, Serialize};

use super::design::Truth;

/// Outcome of one method on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub valid: Vec<usize>,
    pub invalid: Vec<usize>,
    pub all_rejected: bool,
}

/// Table row for one method. Metrics that are undefined for a design, or
/// for a method without successful replications, are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub successes: usize,
    pub failures: usize,
    pub mae: Option<f64>,
    pub sd: Option<f64>,
    pub n_invalid: Option<f64>,
    pub p_allinv: Option<f64>,
    pub coverage: Option<f64>,
    pub p_oracle: Option<f64>,
    /// All strong valid instruments kept as valid; needs such instruments.
    pub strongvalid: Option<f64>,
    /// All weak invalid instruments flagged invalid; needs such instruments.
    pub weakin: Option<f64>,
    /// All weak valid instruments flagged invalid; needs such instruments.
    pub weakva: Option<f64>,
    pub all_rejected: usize,
}

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Standard deviation with divisor `n - 1` (0 for a single value).
fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0).max(1.0)).sqrt()
}

fn subset(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|x| big.contains(x))
}

fn frequency(records: &[MethodRecord], f: impl Fn(&MethodRecord) -> bool) -> f64 {
    records.iter().filter(|r| f(r)).count() as f64 / records.len() as f64
}

pub fn metric_suite(
    method: &str,
    records: &[MethodRecord],
    failures: usize,
    truth: &Truth,
) -> MethodMetrics {
    let mut out = MethodMetrics {
        method: method.to_string(),
        successes: records.len(),
        failures,
        mae: None,
        sd: None,
        n_invalid: None,
        p_allinv: None,
        coverage: None,
        p_oracle: None,
        strongvalid: None,
        weakin: None,
        weakva: None,
        all_rejected: records.iter().filter(|r| r.all_rejected).count(),
    };
    if records.is_empty() {
        return out;
    }
    let p = truth.beta.len();
    let (mut mae, mut sd, mut cov) = (0.0, 0.0, 0.0);
    for k in 0..p {
        let b = truth.beta[k];
        let mut abs_err: Vec<f64> = records.iter().map(|r| (r.beta[k] - b).abs()).collect();
        mae += median(&mut abs_err);
        let est: Vec<f64> = records.iter().map(|r| r.beta[k]).collect();
        sd += std_dev(&est);
        cov += frequency(records, |r| (r.beta[k] - b).abs() <= Z95 * r.se[k]);
    }
    let pf = p as f64;
    out.mae = Some(mae / pf);
    out.sd = Some(sd / pf);
    out.coverage = Some(cov / pf);
    out.n_invalid =
        Some(records.iter().map(|r| r.invalid.len() as f64).sum::<f64>() / records.len() as f64);
    out.p_allinv = Some(frequency(records, |r| subset(&truth.invalid, &r.invalid)));
    out.p_oracle = Some(frequency(records, |r| r.valid == truth.oracle_valid));
    if !truth.strong_valid.is_empty() {
        out.strongvalid = Some(frequency(records, |r| {
            subset(&truth.strong_valid, &r.valid)
        }));
    }
    if !truth.weak_invalid.is_empty() {
        out.weakin = Some(frequency(records, |r| {
            subset(&truth.weak_invalid, &r.invalid)
        }));
    }
    if !truth.weak_valid.is_empty() {
        out.weakva = Some(frequency(records, |r| {
            subset(&truth.weak_valid, &r.invalid)
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> Truth {
        Truth {
            beta: vec![0.0],
            valid: vec![2, 3, 4],
            invalid: vec![0, 1],
            oracle_valid: vec![2, 3],
            strong_valid: vec![2, 3],
            weak_valid: vec![4],
            weak_invalid: vec![1],
        }
    }

    fn rec(beta: f64, se: f64, valid: &[usize]) -> MethodRecord {
        let invalid = (0..5).filter(|i| !valid.contains(i)).collect();
        MethodRecord {
            beta: vec![beta],
            se: vec![se],
            valid: valid.to_vec(),
            invalid,
            all_rejected: false,
        }
    }

    #[test]
    fn perfect_selection() {
        let records = vec![rec(0.1, 1.0, &[2, 3]); 4];
        let m = metric_suite("ahc", &records, 0, &truth());
        assert_eq!(m.p_oracle, Some(1.0));
        assert_eq!(m.p_allinv, Some(1.0));
        assert_eq!(m.strongvalid, Some(1.0));
        assert_eq!(m.weakin, Some(1.0));
        assert_eq!(m.weakva, Some(1.0));
    }

    #[test]
    fn constant_zero_estimates() {
        let records = vec![rec(0.0, 0.0, &[2, 3]); 3];
        let m = metric_suite("oracle", &records, 0, &truth());
        assert_eq!(m.mae, Some(0.0));
        assert_eq!(m.sd, Some(0.0));
        assert_eq!(m.coverage, Some(1.0));
    }

    #[test]
    fn hand_built_fixture() {
        let records = vec![
            rec(0.5, 0.2, &[2, 3]),          // oracle; |e| 0.5 > 0.392, miss
            rec(-0.1, 0.1, &[2, 3, 4]),      // valid keeps weak valid; cover
            rec(0.3, 0.2, &[1, 2, 3]),       // keeps weak invalid; cover
            rec(-0.4, 0.1, &[3]),            // drops strong valid; miss
            rec(0.2, 0.5, &[0, 1, 2, 3, 4]), // naive-like; cover
        ];
        let m = metric_suite("ahc", &records, 2, &truth());
        // |e| sorted: 0.1 0.2 0.3 0.4 0.5
        assert!((m.mae.unwrap() - 0.3).abs() < 1e-15);
        // mean 0.1; deviations 0.4 -0.2 0.2 -0.5 0.1; ss 0.5; /4
        assert!((m.sd.unwrap() - 0.125f64.sqrt()).abs() < 1e-15);
        assert!((m.coverage.unwrap() - 0.6).abs() < 1e-15);
        // invalid counts 3 2 2 4 0
        assert!((m.n_invalid.unwrap() - 2.2).abs() < 1e-15);
        // {0,1} inside invalid: records 0, 1, 3
        assert!((m.p_allinv.unwrap() - 0.6).abs() < 1e-15);
        assert!((m.p_oracle.unwrap() - 0.2).abs() < 1e-15);
        assert!((m.strongvalid.unwrap() - 0.8).abs() < 1e-15);
        assert!((m.weakin.unwrap() - 0.6).abs() < 1e-15);
        // 4 flagged invalid in records 0, 2, 3
        assert!((m.weakva.unwrap() - 0.6).abs() < 1e-15);
        assert_eq!((m.successes, m.failures), (5, 2));
    }

    #[test]
    fn undefined_columns_are_none() {
        let mut t = truth();
        t.weak_valid.clear();
        t.weak_invalid.clear();
        let m = metric_suite("ahc", &[rec(0.0, 1.0, &[2, 3])], 0, &t);
        assert_eq!(m.weakin, None);
        assert_eq!(m.weakva, None);
        assert_eq!(m.sd, Some(0.0));
        let empty = metric_suite("ahc", &[], 3, &t);
        assert_eq!(empty.mae, None);
        assert_eq!(empty.failures, 3);
    }

    #[test]
    fn frequencies_in_unit_interval() {
        let records: Vec<MethodRecord> = (0..7)
            .map(|i| {
                rec(
                    i as f64 * 0.1 - 0.3,
                    0.15,
                    if i % 2 == 0 { &[2, 3] } else { &[0, 2] },
                )
            })
            .collect();
        let m = metric_suite("ahc", &records, 0, &truth());
        for v in [
            m.p_allinv,
            m.p_oracle,
            m.coverage,
            m.strongvalid,
            m.weakin,
            m.weakva,
        ] {
            let v = v.unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
