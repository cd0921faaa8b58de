//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's estimation or clustering code.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use ivselect::Dataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random linear IV model with strong first stages. `alpha` gives the
/// direct effects, so its length fixes J. `noise` scales both error terms;
/// zero gives exact linear relations.
pub fn random_dataset(
    rng: &mut impl Rng,
    n: usize,
    p: usize,
    alpha: &[f64],
    beta: &[f64],
    noise: f64,
) -> Dataset {
    let j = alpha.len();
    let z = normal_matrix(rng, n, j);
    let gamma = DMatrix::from_fn(j, p, |_, _| {
        let g: f64 = rng.random_range(0.5..1.5);
        if rng.random_bool(0.5) {
            g
        } else {
            -g
        }
    });
    let u = normal_matrix(rng, n, 1) * noise;
    let eps = normal_matrix(rng, n, p) * noise;
    let eps = &eps + &u * DMatrix::from_element(1, p, 0.5);
    let d = &z * &gamma + eps;
    let y = &d * DVector::from_column_slice(beta) + &z * DVector::from_column_slice(alpha)
        + u.column(0);
    Dataset::from_parts(y, d, z).unwrap()
}

/// OLS coefficients through the normal equations.
pub fn ols(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    (x.transpose() * x)
        .cholesky()
        .expect("full column rank")
        .solve(&(x.transpose() * y))
}

/// Just-identified IV with instruments `Z` for regressors `[D, Z_rest]`,
/// solved as `(Z'X)^{-1} Z'y`. Returns the coefficients on `D`.
pub fn direct_just_identified(data: &Dataset, combo: &[usize]) -> Vec<f64> {
    let (z, d) = (data.z(), data.d());
    let (n, p, j) = (data.n(), data.p(), data.j());
    let rest: Vec<usize> = (0..j).filter(|i| !combo.contains(i)).collect();
    let mut x = DMatrix::zeros(n, p + rest.len());
    x.columns_mut(0, p).copy_from(d);
    for (c, &i) in rest.iter().enumerate() {
        x.set_column(p + c, &z.column(i));
    }
    let zx = z.transpose() * &x;
    let zy = z.transpose() * data.y();
    let coef = zx.lu().solve(&zy).expect("nonsingular");
    coef.rows(0, p).iter().copied().collect()
}

/// Ward agglomeration by full re-scan: at every step the cost
/// `|A||B|/(|A|+|B|) ||mean A - mean B||^2` is recomputed from the members
/// of every pair of clusters. Ties go to the smallest `(id_a, id_b)`.
pub fn naive_ward(points: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let dim = points[0].len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mean = |members: &[usize]| -> Vec<f64> {
        (0..dim)
            .map(|c| members.iter().map(|&m| points[m][c]).sum::<f64>() / members.len() as f64)
            .collect()
    };
    let mut out = Vec::new();
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for x in 0..clusters.len() {
            for y in 0..clusters.len() {
                let (ia, ma) = &clusters[x];
                let (ib, mb) = &clusters[y];
                if ia >= ib {
                    continue;
                }
                let (ca, cb) = (mean(ma), mean(mb));
                let sq: f64 = ca.iter().zip(&cb).map(|(a, b)| (a - b) * (a - b)).sum();
                let (na, nb) = (ma.len() as f64, mb.len() as f64);
                let cost = na * nb / (na + nb) * sq;
                let cand = (cost, *ia, *ib, x, y);
                if best.is_none_or(|b| (cand.0, cand.1, cand.2) < (b.0, b.1, b.2)) {
                    best = Some(cand);
                }
            }
        }
        let (cost, ia, ib, x, y) = best.unwrap();
        out.push((ia, ib, cost));
        let mut members = clusters[x].1.clone();
        members.extend(&clusters[y].1);
        let (hi, lo) = if x > y { (x, y) } else { (y, x) };
        clusters.remove(hi);
        clusters.remove(lo);
        clusters.push((n + step, members));
    }
    out
}

/// Two-sided Kolmogorov-Smirnov statistic of `sample` against `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / m).max((i as f64 + 1.0) / m - f)
        })
        .fold(0.0, f64::max)
}

/// Partition as a sorted set of sorted cells, for order-free comparison.
pub fn canonical(partition: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut cells: Vec<Vec<usize>> = partition
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.sort_unstable();
            c
        })
        .collect();
    cells.sort();
    cells
}
