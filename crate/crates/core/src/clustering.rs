//! Agglomerative hierarchical clustering of just-identified estimates.
//!
//! The agglomeration loop keeps, for every active cluster, its nearest
//! partner among clusters with a larger id. Only rows whose cached partner
//! was consumed by a merge are rescanned, so a full path usually costs
//! `O(N^2)` distance updates. Ties on the merge distance go to the pair with
//! the lexicographically smallest `(id_a, id_b)`, leaves having ids
//! `0..N` and the `s`-th merge creating id `N + s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Manhattan,
    /// `(sum |a_i - b_i|^p)^(1/p)`; for `p < 1` this is a dissimilarity but
    /// not a metric.
    Minkowski {
        p: f64,
    },
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match *self {
            Metric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Manhattan => diffs.sum(),
            Metric::Minkowski { p } => diffs.map(|d| d.powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    /// Merge cost `|A||B|/(|A|+|B|) * ||mean_A - mean_B||^2`.
    Ward,
    /// Largest pairwise dissimilarity between members.
    Complete,
    /// Dissimilarity between weighted midpoints (each merge takes the
    /// midpoint of the two representatives).
    Median,
    /// Dissimilarity between cluster means.
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub metric: Metric,
    pub linkage: Linkage,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            linkage: Linkage::Ward,
        }
    }
}

impl MetricSpec {
    pub fn check(&self) -> Result<()> {
        if let Metric::Minkowski { p } = self.metric {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Config(format!(
                    "minkowski exponent {p} must be positive"
                )));
            }
        }
        if self.linkage == Linkage::Ward && self.metric != Metric::Euclidean {
            return Err(Error::Config(
                "ward linkage is defined for squared euclidean distance only".into(),
            ));
        }
        Ok(())
    }
}

/// Symmetric dissimilarity matrix in condensed (upper-triangle) storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        // Offset of row i in the condensed layout plus column within it.
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.data[self.index(i, j)]
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j);
        self.data[k] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    if points.len() < 2 {
        return Err(Error::Dimension(format!(
            "clustering needs at least two points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    for (index, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::Dimension(format!(
                "point {index} has {} coordinates, expected {dim}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
    }
    Ok(dim)
}

pub fn pairwise_distances(points: &[Vec<f64>], metric: Metric) -> Result<DistanceMatrix> {
    check_points(points)?;
    Ok(DistanceMatrix::from_fn(points.len(), |i, j| {
        metric.distance(&points[i], &points[j])
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub id: usize,
    pub height: f64,
    pub size: usize,
}

/// Full merge path over `leaves` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    /// Rebuilds a dendrogram from a stored merge list, checking that it is a
    /// well-formed binary merge path.
    pub fn from_merges(leaves: usize, merges: Vec<Merge>) -> Result<Self> {
        if leaves < 1 || merges.len() + 1 != leaves {
            return Err(Error::Dimension(format!(
                "{} merges cannot join {leaves} leaves",
                merges.len()
            )));
        }
        let mut used = vec![false; 2 * leaves - 1];
        for (s, m) in merges.iter().enumerate() {
            let id = leaves + s;
            if m.id != id || m.a >= id || m.b >= id || m.a == m.b {
                return Err(Error::Dimension(format!("malformed merge {s}")));
            }
            for c in [m.a, m.b] {
                if std::mem::replace(&mut used[c], true) {
                    return Err(Error::Dimension(format!("cluster {c} merged twice")));
                }
            }
        }
        Ok(Self { leaves, merges })
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Cluster label of each leaf with `k` clusters; labels are numbered by
    /// the smallest leaf in each cluster.
    pub fn labels_at(&self, k: usize) -> Result<Vec<usize>> {
        if k < 1 || k > self.leaves {
            return Err(Error::ClusterCount {
                k,
                leaves: self.leaves,
            });
        }
        let n = self.leaves;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut rep: Vec<usize> = (0..n).collect();
        rep.resize(2 * n - 1, 0);
        for m in &self.merges[..n - k] {
            let ra = find(&mut parent, rep[m.a]);
            let rb = find(&mut parent, rep[m.b]);
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
            rep[m.id] = lo;
        }
        // Roots are the smallest leaf of their cluster; relabel densely.
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut out = vec![0; n];
        for leaf in 0..n {
            let r = find(&mut parent, leaf);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            out[leaf] = label[r];
        }
        Ok(out)
    }

    /// Partition into `k` clusters obtained by undoing the last `k - 1`
    /// merges. Cells are sorted and ordered by their smallest leaf.
    pub fn partition_at(&self, k: usize) -> Result<Vec<Vec<usize>>> {
        let labels = self.labels_at(k)?;
        let mut cells = vec![Vec::new(); k];
        for (leaf, &l) in labels.iter().enumerate() {
            cells[l].push(leaf);
        }
        Ok(cells)
    }

    /// Labels for every `k` in `1..=leaves`.
    pub fn memberships(&self) -> Vec<Vec<usize>> {
        (1..=self.leaves)
            .map(|k| self.labels_at(k).expect("k in range"))
            .collect()
    }
}

pub fn partition_at(dendrogram: &Dendrogram, k: usize) -> Result<Vec<Vec<usize>>> {
    dendrogram.partition_at(k)
}

/// Ward clustering on squared Euclidean distance.
pub fn ward_merge_path(points: &[Vec<f64>]) -> Result<Dendrogram> {
    generic_merge_path(points, &MetricSpec::default())
}

pub fn generic_merge_path(points: &[Vec<f64>], spec: &MetricSpec) -> Result<Dendrogram> {
    spec.check()?;
    check_points(points)?;
    let n = points.len();
    let metric = spec.metric;
    let dist = match spec.linkage {
        Linkage::Ward => DistanceMatrix::from_fn(n, |i, j| {
            let e = Metric::Euclidean.distance(&points[i], &points[j]);
            0.5 * e * e
        }),
        _ => pairwise_distances(points, metric)?,
    };
    let reps: Vec<Vec<f64>> = points.to_vec();
    let mut engine = Agglomerator::new(dist, reps, spec.linkage, metric);
    let merges = engine.run();
    Ok(Dendrogram { leaves: n, merges })
}

/// Agglomeration state. Slots `0..N` hold active clusters; a merge reuses
/// the slot of its first member.
struct Agglomerator {
    dist: DistanceMatrix,
    reps: Vec<Vec<f64>>,
    linkage: Linkage,
    metric: Metric,
    active: Vec<bool>,
    id: Vec<usize>,
    size: Vec<usize>,
    /// Nearest partner slot among active slots with a larger cluster id.
    nn: Vec<Option<usize>>,
    nn_dist: Vec<f64>,
}

impl Agglomerator {
    fn new(dist: DistanceMatrix, reps: Vec<Vec<f64>>, linkage: Linkage, metric: Metric) -> Self {
        let n = dist.len();
        let mut s = Self {
            dist,
            reps,
            linkage,
            metric,
            active: vec![true; n],
            id: (0..n).collect(),
            size: vec![1; n],
            nn: vec![None; n],
            nn_dist: vec![f64::INFINITY; n],
        };
        for k in 0..n {
            s.rescan(k);
        }
        s
    }

    /// Recomputes the cached partner of slot `k`.
    fn rescan(&mut self, k: usize) {
        let mut best: Option<(f64, usize, usize)> = None;
        for t in 0..self.active.len() {
            if t == k || !self.active[t] || self.id[t] < self.id[k] {
                continue;
            }
            let d = self.dist.get(k, t);
            let cand = (d, self.id[t], t);
            if best.is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
                best = Some(cand);
            }
        }
        match best {
            Some((d, _, t)) => {
                self.nn[k] = Some(t);
                self.nn_dist[k] = d;
            }
            None => {
                self.nn[k] = None;
                self.nn_dist[k] = f64::INFINITY;
            }
        }
    }

    fn closest_pair(&self) -> (usize, usize, f64) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for k in 0..self.active.len() {
            if !self.active[k] {
                continue;
            }
            if let Some(t) = self.nn[k] {
                let cand = (self.nn_dist[k], self.id[k], self.id[t], k, t);
                if best.is_none_or(|b| (cand.0, cand.1, cand.2) < (b.0, b.1, b.2)) {
                    best = Some(cand);
                }
            }
        }
        let (d, _, _, k, t) = best.expect("at least two active clusters");
        (k, t, d)
    }

    fn run(&mut self) -> Vec<Merge> {
        let n = self.active.len();
        let mut merges = Vec::with_capacity(n - 1);
        for step in 0..n - 1 {
            let (sa, sb, height) = self.closest_pair();
            let (na, nb) = (self.size[sa], self.size[sb]);
            let new_id = n + step;
            merges.push(Merge {
                a: self.id[sa],
                b: self.id[sb],
                id: new_id,
                height,
                size: na + nb,
            });

            // Representative of the merged cluster (centroid and median only).
            let merged_rep: Vec<f64> = match self.linkage {
                Linkage::Centroid => {
                    let (wa, wb) = (na as f64, nb as f64);
                    self.reps[sa]
                        .iter()
                        .zip(&self.reps[sb])
                        .map(|(a, b)| (wa * a + wb * b) / (wa + wb))
                        .collect()
                }
                Linkage::Median => self.reps[sa]
                    .iter()
                    .zip(&self.reps[sb])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect(),
                _ => Vec::new(),
            };

            let d_ab = self.dist.get(sa, sb);
            for k in 0..n {
                if !self.active[k] || k == sa || k == sb {
                    continue;
                }
                let nk = self.size[k] as f64;
                let (dka, dkb) = (self.dist.get(k, sa), self.dist.get(k, sb));
                let d = match self.linkage {
                    Linkage::Ward => {
                        let (wa, wb) = (na as f64, nb as f64);
                        ((wa + nk) * dka + (wb + nk) * dkb - nk * d_ab) / (wa + wb + nk)
                    }
                    Linkage::Complete => dka.max(dkb),
                    Linkage::Centroid | Linkage::Median => {
                        self.metric.distance(&self.reps[k], &merged_rep)
                    }
                };
                self.dist.set(k, sa, d);
            }

            self.active[sb] = false;
            self.id[sa] = new_id;
            self.size[sa] = na + nb;
            if !merged_rep.is_empty() {
                self.reps[sa] = merged_rep;
            }
            // The new cluster has the largest id, so it owns no pairs.
            self.nn[sa] = None;
            self.nn_dist[sa] = f64::INFINITY;
            self.nn[sb] = None;

            for k in 0..n {
                if !self.active[k] || k == sa {
                    continue;
                }
                match self.nn[k] {
                    Some(t) if t == sa || t == sb => self.rescan(k),
                    _ => {
                        let d = self.dist.get(k, sa);
                        // Equal distances keep the older, smaller-id partner.
                        if d < self.nn_dist[k] {
                            self.nn[k] = Some(sa);
                            self.nn_dist[k] = d;
                        }
                    }
                }
            }
        }
        merges
    }
}

/// Total within-cluster sum of squared deviations from cluster means.
pub fn within_cluster_ss(points: &[Vec<f64>], partition: &[Vec<usize>]) -> f64 {
    partition
        .iter()
        .map(|cell| {
            let dim = points[cell[0]].len();
            let mut mean = vec![0.0; dim];
            for &i in cell {
                for (m, v) in mean.iter_mut().zip(&points[i]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= cell.len() as f64);
            cell.iter()
                .map(|&i| {
                    points[i]
                        .iter()
                        .zip(&mean)
                        .map(|(v, m)| (v - m) * (v - m))
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum()
}
