//! Observed-data model and shared domain types.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clustering::{Linkage, Metric, MetricSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, ThinQr, RANK_TOL};

/// Outcome, endogenous regressors, candidate instruments and optional
/// exogenous controls, all sharing `n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    d: DMatrix<f64>,
    z: DMatrix<f64>,
    w: DMatrix<f64>,
    intercept: bool,
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        d: DMatrix<f64>,
        z: DMatrix<f64>,
        w: Option<DMatrix<f64>>,
        intercept: bool,
    ) -> Result<Self> {
        let n = y.len();
        let w = w.unwrap_or_else(|| DMatrix::zeros(n, 0));
        for (name, rows) in [("D", d.nrows()), ("Z", z.nrows()), ("W", w.nrows())] {
            if rows != n {
                return Err(Error::Dimension(format!(
                    "{name} has {rows} rows but y has {n}"
                )));
            }
        }
        if d.ncols() == 0 {
            return Err(Error::Dimension("no endogenous regressors".into()));
        }
        if z.ncols() == 0 {
            return Err(Error::Dimension("no candidate instruments".into()));
        }
        Ok(Self {
            y,
            d,
            z,
            w,
            intercept,
        })
    }

    /// Dataset without controls or intercept.
    pub fn from_parts(y: DVector<f64>, d: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        Self::new(y, d, z, None, false)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn intercept(&self) -> bool {
        self.intercept
    }
    pub fn n(&self) -> usize {
        self.y.len()
    }
    /// Number of endogenous regressors.
    pub fn p(&self) -> usize {
        self.d.ncols()
    }
    /// Number of candidate instruments.
    pub fn j(&self) -> usize {
        self.z.ncols()
    }
    /// Control columns including the intercept when flagged.
    pub fn m(&self) -> usize {
        self.w.ncols() + usize::from(self.intercept)
    }

    fn control_matrix(&self) -> DMatrix<f64> {
        if self.intercept {
            let ones = DMatrix::from_element(self.n(), 1, 1.0);
            linalg::hstack(&[&self.w, &ones])
        } else {
            self.w.clone()
        }
    }

    /// Same data with the instrument columns reordered: column `k` of the
    /// result is column `order[k]` of `self`.
    pub fn permute_instruments(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.j()];
        if order.len() != self.j() {
            return Err(Error::Dimension("permutation length differs from J".into()));
        }
        for &k in order {
            if k >= self.j() || std::mem::replace(&mut seen[k], true) {
                return Err(Error::Dimension(
                    "not a permutation of instrument columns".into(),
                ));
            }
        }
        Ok(Self {
            z: linalg::select_columns(&self.z, order),
            ..self.clone()
        })
    }
}

/// One violated in-sample assumption found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    TooFewRows {
        n: usize,
        required: usize,
    },
    NotOveridentified {
        instruments: usize,
        regressors: usize,
    },
    RankDeficientInstruments {
        rcond: f64,
    },
    RankDeficientControls {
        rcond: f64,
    },
    NonFinite {
        column: String,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::TooFewRows { n, required } => {
                write!(f, "{n} rows; need more than {required} (J + P + controls)")
            }
            Diagnostic::NotOveridentified {
                instruments,
                regressors,
            } => write!(
                f,
                "{instruments} instruments for {regressors} regressors; need more instruments than regressors"
            ),
            Diagnostic::RankDeficientInstruments { rcond } => write!(
                f,
                "instrument matrix is rank deficient after partialling out controls (rcond {rcond:.3e})"
            ),
            Diagnostic::RankDeficientControls { rcond } => {
                write!(f, "control matrix is rank deficient (rcond {rcond:.3e})")
            }
            Diagnostic::NonFinite { column } => write!(f, "non-finite values in {column}"),
        }
    }
}

/// Checks the in-sample analogues of the model assumptions. An empty list
/// means the dataset is usable.
pub fn validate(dataset: &Dataset) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let (n, j, p, m) = (dataset.n(), dataset.j(), dataset.p(), dataset.m());

    let finite = |x: &[f64]| x.iter().all(|v| v.is_finite());
    for (column, ok) in [
        ("y", finite(dataset.y.as_slice())),
        ("D", finite(dataset.d.as_slice())),
        ("Z", finite(dataset.z.as_slice())),
        ("W", finite(dataset.w.as_slice())),
    ] {
        if !ok {
            out.push(Diagnostic::NonFinite {
                column: column.into(),
            });
        }
    }
    if !out.is_empty() {
        return out;
    }

    if n <= j + p + m {
        out.push(Diagnostic::TooFewRows {
            n,
            required: j + p + m,
        });
    }
    if j <= p {
        out.push(Diagnostic::NotOveridentified {
            instruments: j,
            regressors: p,
        });
    }
    if n < j + m {
        // Not enough rows for any rank statement.
        return out;
    }

    let controls = dataset.control_matrix();
    let z = if controls.ncols() > 0 {
        let rc = linalg::rcond(&controls);
        if rc < RANK_TOL {
            out.push(Diagnostic::RankDeficientControls { rcond: rc });
            return out;
        }
        match linalg::residualize(&dataset.z, &controls, "controls") {
            Ok(z) => z,
            Err(_) => return out,
        }
    } else {
        dataset.z.clone()
    };
    let rc = match ThinQr::new(&z) {
        Ok(qr) => qr.rcond(),
        Err(_) => 0.0,
    };
    if rc < RANK_TOL {
        out.push(Diagnostic::RankDeficientInstruments { rcond: rc });
    }
    out
}

/// Residualizes `y`, `D` and `Z` on the controls (and intercept), returning a
/// dataset with no controls. With no controls this is the identity.
pub fn partial_out_controls(dataset: &Dataset) -> Result<Dataset> {
    let controls = dataset.control_matrix();
    if controls.ncols() == 0 {
        return Ok(dataset.clone());
    }
    let dependent = dependent_columns(&controls);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient {
            what: format!(
                "controls (columns {dependent:?} depend linearly on earlier columns; \
                 the intercept, when present, is the last column)"
            ),
            rcond: linalg::rcond(&controls),
        });
    }
    if controls.nrows() <= controls.ncols() {
        return Err(Error::Dimension("more controls than rows".into()));
    }
    let qr = ThinQr::new(&controls)?;
    let resid = |b: &DMatrix<f64>| -> Result<DMatrix<f64>> { Ok(b - &controls * qr.solve(b)?) };
    let y = resid(&linalg::column_vector(&dataset.y))?;
    Ok(Dataset {
        y: y.column(0).into_owned(),
        d: resid(&dataset.d)?,
        z: resid(&dataset.z)?,
        w: DMatrix::zeros(dataset.n(), 0),
        intercept: false,
    })
}

/// Indices of columns that are (numerically) linear combinations of the
/// columns before them.
fn dependent_columns(m: &DMatrix<f64>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for c in 0..m.ncols() {
        let mut trial = kept.clone();
        trial.push(c);
        let sub = linalg::select_columns(m, &trial);
        if linalg::rcond(&sub) < RANK_TOL {
            dependent.push(c);
        } else {
            kept = trial;
        }
    }
    dependent
}

/// A set of `P` instrument indices, stored sorted and duplicate free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IvCombination(Vec<usize>);

impl IvCombination {
    pub fn new(mut indices: Vec<usize>, p: usize, j: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.len() != p {
            return Err(Error::InvalidSet(format!(
                "combination has {} entries, expected {p}",
                indices.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSet(
                "duplicate instrument in combination".into(),
            ));
        }
        if indices.iter().any(|&i| i >= j) {
            return Err(Error::InvalidSet(format!(
                "instrument index out of range 0..{j}"
            )));
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// All `binom(j, p)` combinations in lexicographic order.
    pub fn all(j: usize, p: usize) -> Vec<IvCombination> {
        let mut out = Vec::new();
        if p == 0 || p > j {
            return out;
        }
        let mut cur: Vec<usize> = (0..p).collect();
        loop {
            out.push(IvCombination(cur.clone()));
            // Advance the rightmost index that still has room.
            let mut i = p;
            while i > 0 {
                i -= 1;
                if cur[i] < j - p + i {
                    cur[i] += 1;
                    for k in i + 1..p {
                        cur[k] = cur[k - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    return out;
                }
            }
        }
    }
}

impl fmt::Display for IvCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

/// `binom(n, k)` without overflow for the sizes this crate handles.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Significance level used for the Sargan test at each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SignificanceRule {
    /// `0.1 / ln(n)`.
    PaperDefault,
    Fixed {
        alpha: f64,
    },
}

impl SignificanceRule {
    pub fn alpha(&self, n: usize) -> f64 {
        match *self {
            SignificanceRule::PaperDefault => 0.1 / (n as f64).ln(),
            SignificanceRule::Fixed { alpha } => alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub metric: Metric,
    pub linkage: Linkage,
    pub significance: SignificanceRule,
    /// Combinations whose first-stage block has a smaller reciprocal
    /// condition number are flagged as near singular.
    pub min_condition: f64,
    pub max_combinations: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            linkage: Linkage::Ward,
            significance: SignificanceRule::PaperDefault,
            min_condition: 1e-8,
            max_combinations: 5000,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn check(&self, j: usize) -> Result<()> {
        self.metric_spec().check()?;
        if let SignificanceRule::Fixed { alpha } = self.significance {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config(format!(
                    "significance level {alpha} must lie strictly between 0 and 1"
                )));
            }
        }
        if self.max_combinations < j {
            return Err(Error::Config(format!(
                "max_combinations {} is below the instrument count {j}",
                self.max_combinations
            )));
        }
        if !(self.min_condition >= 0.0) {
            return Err(Error::Config("min_condition must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn metric_spec(&self) -> MetricSpec {
        MetricSpec {
            metric: self.metric,
            linkage: self.linkage,
        }
    }
}

/// Two-stage least squares fit with the selected invalid instruments as
/// included controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub beta: Vec<f64>,
    /// Coefficients on the instruments treated as controls, in the order of
    /// `control_ivs`.
    pub alpha: Vec<f64>,
    pub control_ivs: Vec<usize>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    /// Row-major `P x P` covariance of `beta`.
    pub vcov_beta: Vec<Vec<f64>>,
    pub sigma_u2: f64,
}

impl ModelFit {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.beta.len())
            .map(|i| self.vcov_beta[i][i].max(0.0).sqrt())
            .collect()
    }
}
