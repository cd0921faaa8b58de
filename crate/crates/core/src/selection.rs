//! Downward testing over the merge path, family bookkeeping for several
//! endogenous regressors, LATE group discovery and the union-of-intervals
//! prescreen.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::clustering::{generic_merge_path, Dendrogram};
use crate::data::{partial_out_controls, Dataset, IvCombination, ModelFit, SelectionConfig};
use crate::error::{Error, Result};
use crate::estimation::{JustIdentifiedEstimate, Projection, SarganOutcome};

/// Model implied by the largest cluster at one cut of the dendrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySelection {
    pub k: usize,
    pub cluster_members: Vec<usize>,
    pub family: Vec<IvCombination>,
    pub valid_ivs: Vec<usize>,
    pub invalid_ivs: Vec<usize>,
    pub sargan: SarganOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub valid: Vec<usize>,
    pub invalid: Vec<usize>,
    /// Cluster count of the reported model. When every step was rejected
    /// this is the step with the largest Sargan p-value.
    pub stop_k: usize,
    /// One entry per tested `K`, starting at 1.
    pub path: Vec<FamilySelection>,
    pub fit: ModelFit,
    pub all_rejected: bool,
}

/// Everything produced on the way to a [`SelectionResult`].
#[derive(Debug, Clone)]
pub struct SelectionRun {
    pub estimates: Vec<JustIdentifiedEstimate>,
    pub dendrogram: Dendrogram,
    pub result: SelectionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateGroup {
    pub ivs: Vec<usize>,
    pub cluster_members: Vec<usize>,
    /// Mean of the member estimates.
    pub center: Vec<f64>,
    pub fit: ModelFit,
    pub sargan: SarganOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateResult {
    pub k: usize,
    pub groups: Vec<LateGroup>,
}

#[derive(Debug, Clone)]
pub struct LateRun {
    pub estimates: Vec<JustIdentifiedEstimate>,
    pub dendrogram: Dendrogram,
    pub result: LateResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionInterval {
    pub valid: Vec<usize>,
    /// Combinations whose intervals enter the union.
    pub combos: Vec<IvCombination>,
    /// `[lower, upper]` per coefficient.
    pub intervals: Vec<[f64; 2]>,
    pub all_rejected: bool,
}

fn union_of(family: &[IvCombination]) -> Vec<usize> {
    let mut ivs: Vec<usize> = family
        .iter()
        .flat_map(|c| c.indices().iter().copied())
        .collect();
    ivs.sort_unstable();
    ivs.dedup();
    ivs
}

fn complement(set: &[usize], j: usize) -> Vec<usize> {
    (0..j).filter(|i| set.binary_search(i).is_err()).collect()
}

fn family_of(cell: &[usize], estimates: &[JustIdentifiedEstimate]) -> Vec<IvCombination> {
    cell.iter().map(|&m| estimates[m].combo.clone()).collect()
}

/// Picks the model at one cut: largest cluster, then most distinct
/// instruments, then smallest Sargan statistic, then the lexicographically
/// smallest valid set.
pub fn largest_family(
    partition: &[Vec<usize>],
    estimates: &[JustIdentifiedEstimate],
    dataset: &Dataset,
    config: &SelectionConfig,
) -> Result<FamilySelection> {
    let proj = Projection::new(dataset)?;
    largest_family_in(&proj, partition, estimates, config)
}

fn largest_family_in(
    proj: &Projection<'_>,
    partition: &[Vec<usize>],
    estimates: &[JustIdentifiedEstimate],
    config: &SelectionConfig,
) -> Result<FamilySelection> {
    let j = proj.dataset().j();
    let max_size = partition.iter().map(Vec::len).max().unwrap_or(0);
    let candidates: Vec<(&Vec<usize>, Vec<usize>)> = partition
        .iter()
        .filter(|c| c.len() == max_size)
        .map(|c| (c, union_of(&family_of(c, estimates))))
        .collect();
    let max_ivs = candidates.iter().map(|(_, v)| v.len()).max().unwrap_or(0);

    let mut best: Option<(FamilySelection, f64)> = None;
    for (cell, valid) in candidates.into_iter().filter(|(_, v)| v.len() == max_ivs) {
        let sargan = proj.sargan(&valid, &config.significance)?;
        let stat = sargan.statistic;
        let better = match &best {
            None => true,
            Some((b, bstat)) => match stat.total_cmp(bstat) {
                Ordering::Less => true,
                Ordering::Equal => valid < b.valid_ivs,
                Ordering::Greater => false,
            },
        };
        if better {
            let sel = FamilySelection {
                k: partition.len(),
                cluster_members: cell.clone(),
                family: family_of(cell, estimates),
                invalid_ivs: complement(&valid, j),
                valid_ivs: valid,
                sargan,
            };
            best = Some((sel, stat));
        }
    }
    best.map(|(s, _)| s)
        .ok_or_else(|| Error::Dimension("empty partition".into()))
}

/// Tests the largest-cluster model for `K = 1, 2, ...` and stops at the
/// first one the Sargan test does not reject.
pub fn downward_test(
    dataset: &Dataset,
    estimates: &[JustIdentifiedEstimate],
    dendrogram: &Dendrogram,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    let proj = Projection::new(dataset)?;
    downward_test_in(&proj, estimates, dendrogram, config)
}

fn downward_test_in(
    proj: &Projection<'_>,
    estimates: &[JustIdentifiedEstimate],
    dendrogram: &Dendrogram,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    if estimates.len() != dendrogram.leaves() {
        return Err(Error::Dimension(format!(
            "{} estimates for a dendrogram with {} leaves",
            estimates.len(),
            dendrogram.leaves()
        )));
    }
    // At K = N every cluster is a single just-identified model, which
    // passes vacuously and carries no information, so the scan stops short.
    let last_k = dendrogram.leaves().saturating_sub(1).max(1);
    let mut path = Vec::with_capacity(last_k);
    for k in 1..=last_k {
        let partition = dendrogram.partition_at(k)?;
        let step = largest_family_in(proj, &partition, estimates, config)?;
        let passed = step.sargan.passed;
        path.push(step);
        if passed {
            let chosen = path.last().expect("just pushed");
            let fit = proj.fit(&chosen.valid_ivs)?;
            return Ok(SelectionResult {
                valid: chosen.valid_ivs.clone(),
                invalid: chosen.invalid_ivs.clone(),
                stop_k: k,
                path,
                fit,
                all_rejected: false,
            });
        }
    }
    // Earliest step with the largest p-value.
    let best = path.iter().enumerate().fold(0, |b, (i, s)| {
        if s.sargan.p_value > path[b].sargan.p_value {
            i
        } else {
            b
        }
    });
    let chosen = &path[best];
    let fit = proj.fit(&chosen.valid_ivs)?;
    Ok(SelectionResult {
        valid: chosen.valid_ivs.clone(),
        invalid: chosen.invalid_ivs.clone(),
        stop_k: chosen.k,
        fit,
        all_rejected: true,
        path,
    })
}

/// Full pipeline keeping the intermediate estimates and dendrogram.
pub fn run_selection(dataset: &Dataset, config: &SelectionConfig) -> Result<SelectionRun> {
    config.check(dataset.j())?;
    let data = partial_out_controls(dataset)?;
    let proj = Projection::new(&data)?;
    let estimates = proj.just_identified_all(config)?;
    let points: Vec<Vec<f64>> = estimates.iter().map(|e| e.beta.clone()).collect();
    let dendrogram = generic_merge_path(&points, &config.metric_spec())?;
    let result = downward_test_in(&proj, &estimates, &dendrogram, config)?;
    Ok(SelectionRun {
        estimates,
        dendrogram,
        result,
    })
}

pub fn select_valid(dataset: &Dataset, config: &SelectionConfig) -> Result<SelectionResult> {
    Ok(run_selection(dataset, config)?.result)
}

/// Finds the smallest `K` at which every cluster's family passes its own
/// Sargan test, each with its complement as included controls.
pub fn late_groups(dataset: &Dataset, config: &SelectionConfig) -> Result<LateResult> {
    Ok(run_late(dataset, config)?.result)
}

/// LATE search keeping the intermediate estimates and dendrogram.
pub fn run_late(dataset: &Dataset, config: &SelectionConfig) -> Result<LateRun> {
    config.check(dataset.j())?;
    let data = partial_out_controls(dataset)?;
    let proj = Projection::new(&data)?;
    let estimates = proj.just_identified_all(config)?;
    let points: Vec<Vec<f64>> = estimates.iter().map(|e| e.beta.clone()).collect();
    let dendrogram = generic_merge_path(&points, &config.metric_spec())?;
    let p = data.p();

    for k in 1..=dendrogram.leaves() {
        let partition = dendrogram.partition_at(k)?;
        let mut groups = Vec::with_capacity(k);
        let mut all_pass = true;
        for cell in &partition {
            let ivs = union_of(&family_of(cell, &estimates));
            let sargan = proj.sargan(&ivs, &config.significance)?;
            if !sargan.passed {
                all_pass = false;
                break;
            }
            let mut center = vec![0.0; p];
            for &m in cell {
                for (c, b) in center.iter_mut().zip(&estimates[m].beta) {
                    *c += b;
                }
            }
            center.iter_mut().for_each(|c| *c /= cell.len() as f64);
            groups.push(LateGroup {
                fit: proj.fit(&ivs)?,
                ivs,
                cluster_members: cell.clone(),
                center,
                sargan,
            });
        }
        if all_pass {
            return Ok(LateRun {
                estimates,
                dendrogram,
                result: LateResult { k, groups },
            });
        }
    }
    unreachable!("singleton clusters are just identified and always pass")
}

/// Runs selection, then takes the per-coordinate hull of the normal
/// intervals of every just-identified model inside the selected valid set.
/// `level` is the two-sided miscoverage, so 0.05 gives 95% intervals.
pub fn plausibly_exogenous_union_ci(
    dataset: &Dataset,
    config: &SelectionConfig,
    level: f64,
) -> Result<UnionInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "level {level} must lie strictly between 0 and 1"
        )));
    }
    let selection = select_valid(dataset, config)?;
    let data = partial_out_controls(dataset)?;
    let proj = Projection::new(&data)?;
    let (combos, intervals) = union_hull(&proj, &selection.valid, level)?;
    Ok(UnionInterval {
        valid: selection.valid,
        combos,
        intervals,
        all_rejected: selection.all_rejected,
    })
}

/// Hull of the normal intervals of every `P`-combination inside `valid`.
fn union_hull(
    proj: &Projection<'_>,
    valid: &[usize],
    level: f64,
) -> Result<(Vec<IvCombination>, Vec<[f64; 2]>)> {
    let data = proj.dataset();
    let z = Normal::standard().inverse_cdf(1.0 - level / 2.0);
    let p = data.p();
    let mut intervals = vec![[f64::INFINITY, f64::NEG_INFINITY]; p];
    let mut combos = Vec::new();
    for combo in IvCombination::all(valid.len(), p) {
        let ivs: Vec<usize> = combo.indices().iter().map(|&i| valid[i]).collect();
        let fit = proj.fit(&ivs)?;
        for ((iv, b), se) in intervals.iter_mut().zip(&fit.beta).zip(fit.std_errors()) {
            iv[0] = iv[0].min(b - z * se);
            iv[1] = iv[1].max(b + z * se);
        }
        combos.push(IvCombination::new(ivs, p, data.j())?);
    }
    Ok((combos, intervals))
}
