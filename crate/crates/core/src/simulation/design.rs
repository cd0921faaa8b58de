//! Data-generating processes of the Monte Carlo designs.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakP1 {
    D1,
    D2,
    D3a,
    D3b,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakP2 {
    D1,
    D2,
    D3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum DesignName {
    StrongP1,
    /// Two or three regressors with uniform first stages.
    StrongMulti(usize),
    WeakP1(WeakP1),
    WeakP2(WeakP2),
}

impl DesignName {
    pub const ALL: [&'static str; 10] = [
        "strong_p1",
        "strong_p2",
        "strong_p3",
        "weak_p1_d1",
        "weak_p1_d2",
        "weak_p1_d3a",
        "weak_p1_d3b",
        "weak_p2_d1",
        "weak_p2_d2",
        "weak_p2_d3",
    ];
}

impl fmt::Display for DesignName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignName::StrongP1 => f.write_str("strong_p1"),
            DesignName::StrongMulti(p) => write!(f, "strong_p{p}"),
            DesignName::WeakP1(d) => {
                let s = match d {
                    WeakP1::D1 => "d1",
                    WeakP1::D2 => "d2",
                    WeakP1::D3a => "d3a",
                    WeakP1::D3b => "d3b",
                };
                write!(f, "weak_p1_{s}")
            }
            DesignName::WeakP2(d) => {
                let s = match d {
                    WeakP2::D1 => "d1",
                    WeakP2::D2 => "d2",
                    WeakP2::D3 => "d3",
                };
                write!(f, "weak_p2_{s}")
            }
        }
    }
}

impl FromStr for DesignName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "strong_p1" => DesignName::StrongP1,
            "strong_p2" => DesignName::StrongMulti(2),
            "strong_p3" => DesignName::StrongMulti(3),
            "weak_p1_d1" => DesignName::WeakP1(WeakP1::D1),
            "weak_p1_d2" => DesignName::WeakP1(WeakP1::D2),
            "weak_p1_d3a" => DesignName::WeakP1(WeakP1::D3a),
            "weak_p1_d3b" => DesignName::WeakP1(WeakP1::D3b),
            "weak_p2_d1" => DesignName::WeakP2(WeakP2::D1),
            "weak_p2_d2" => DesignName::WeakP2(WeakP2::D2),
            "weak_p2_d3" => DesignName::WeakP2(WeakP2::D3),
            other => {
                return Err(Error::Config(format!(
                    "unknown design '{other}'; valid names: {}",
                    DesignName::ALL.join(", ")
                )))
            }
        })
    }
}

impl From<DesignName> for String {
    fn from(d: DesignName) -> Self {
        d.to_string()
    }
}

impl TryFrom<String> for DesignName {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One first-stage coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaEntry {
    Fixed {
        value: f64,
    },
    /// `scale * C / sqrt(n)`.
    Local {
        scale: f64,
    },
    /// Drawn afresh for every replication.
    Uniform {
        lo: f64,
        hi: f64,
    },
}

impl GammaEntry {
    fn is_local(&self) -> bool {
        matches!(self, GammaEntry::Local { .. })
    }
}

/// Ground-truth labels of the candidate instruments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta: Vec<f64>,
    pub valid: Vec<usize>,
    pub invalid: Vec<usize>,
    /// Valid and strong: the set the oracle uses.
    pub oracle_valid: Vec<usize>,
    pub strong_valid: Vec<usize>,
    pub weak_valid: Vec<usize>,
    pub weak_invalid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub name: DesignName,
    pub n: usize,
    pub j: usize,
    pub p: usize,
    pub alpha: Vec<f64>,
    /// Row-major `J x P` first-stage specification.
    pub gamma: Vec<Vec<GammaEntry>>,
    /// Instrument correlation `rho^|j-k|`.
    pub rho_z: f64,
    /// Correlation between the structural error and each first-stage error.
    pub error_corr: f64,
    pub beta: Vec<f64>,
    /// Weak-instrument constant `C`.
    pub c_weak: f64,
}

const C_ALPHA: f64 = 1.0;
const C_GAMMA: f64 = 0.4;

fn p1_alpha() -> Vec<f64> {
    let mut a = vec![C_ALPHA; 6];
    a.extend([0.5 * C_ALPHA; 6]);
    a.extend([0.0; 9]);
    a
}

/// Single-regressor first stage from `(count, local)` runs, scaled by `c_gamma`.
fn p1_gamma(runs: &[(usize, bool)]) -> Vec<Vec<GammaEntry>> {
    runs.iter()
        .flat_map(|&(count, local)| {
            let e = if local {
                GammaEntry::Local { scale: C_GAMMA }
            } else {
                GammaEntry::Fixed { value: C_GAMMA }
            };
            std::iter::repeat_n(vec![e], count)
        })
        .collect()
}

impl SimulationDesign {
    pub fn new(name: DesignName, n: usize) -> Result<Self> {
        if n < 30 {
            return Err(Error::Config(format!("sample size {n} is too small")));
        }
        let fixed = |value: f64| GammaEntry::Fixed { value };
        let local = GammaEntry::Local { scale: 1.0 };
        let unif = |lo: f64| GammaEntry::Uniform { lo, hi: lo + 1.0 };
        let (alpha, gamma) = match name {
            DesignName::StrongP1 => (p1_alpha(), p1_gamma(&[(21, false)])),
            DesignName::StrongMulti(p) => {
                if !(2..=3).contains(&p) {
                    return Err(Error::Config(format!(
                        "strong_multi needs P in {{2, 3}}, got {p}"
                    )));
                }
                let row: Vec<GammaEntry> = (0..p).map(|k| unif(1.0 + 2.0 * k as f64)).collect();
                (p1_alpha(), vec![row; 21])
            }
            DesignName::WeakP1(d) => {
                let runs: &[(usize, bool)] = match d {
                    WeakP1::D1 => &[(12, true), (9, false)],
                    WeakP1::D2 => &[(16, true), (5, false)],
                    WeakP1::D3a => &[(6, false), (7, true), (8, false)],
                    WeakP1::D3b => &[(6, false), (9, true), (6, false)],
                };
                (p1_alpha(), p1_gamma(runs))
            }
            DesignName::WeakP2(d) => {
                let gamma = match d {
                    WeakP2::D1 | WeakP2::D2 => (0..9)
                        .map(|i| {
                            if i < 4 {
                                vec![fixed(i as f64 + 1.0), local]
                            } else {
                                vec![local, unif(1.0)]
                            }
                        })
                        .collect(),
                    WeakP2::D3 => (0..9)
                        .map(|i| match i {
                            0..=2 => vec![fixed(i as f64 + 1.0), local],
                            3..=5 => vec![local, local],
                            _ => vec![local, unif(3.0)],
                        })
                        .collect(),
                };
                let alpha = match d {
                    WeakP2::D1 => vec![0.0; 9],
                    WeakP2::D2 => vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0],
                    WeakP2::D3 => vec![0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0],
                };
                (alpha, gamma)
            }
        };
        let p = gamma[0].len();
        Ok(Self {
            name,
            n,
            j: alpha.len(),
            p,
            alpha,
            gamma,
            rho_z: 0.5,
            error_corr: 0.25,
            beta: vec![0.0; p],
            c_weak: 0.1,
        })
    }

    /// Replaces the direct effects, e.g. with zeros for an all-valid model.
    pub fn with_alpha(mut self, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != self.j {
            return Err(Error::Dimension(format!(
                "alpha has {} entries, design has {} instruments",
                alpha.len(),
                self.j
            )));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    fn is_strong(&self, j: usize) -> bool {
        self.gamma[j].iter().any(|e| !e.is_local())
    }

    pub fn truth(&self) -> Truth {
        let mut t = Truth {
            beta: self.beta.clone(),
            valid: Vec::new(),
            invalid: Vec::new(),
            oracle_valid: Vec::new(),
            strong_valid: Vec::new(),
            weak_valid: Vec::new(),
            weak_invalid: Vec::new(),
        };
        for j in 0..self.j {
            let valid = self.alpha[j] == 0.0;
            let strong = self.is_strong(j);
            if valid {
                t.valid.push(j);
            } else {
                t.invalid.push(j);
            }
            match (valid, strong) {
                (true, true) => {
                    t.oracle_valid.push(j);
                    t.strong_valid.push(j);
                }
                (true, false) => t.weak_valid.push(j),
                (false, false) => t.weak_invalid.push(j),
                (false, true) => {}
            }
        }
        t
    }

    /// First-stage matrix for one replication.
    pub fn draw_gamma<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let local = self.c_weak / (self.n as f64).sqrt();
        DMatrix::from_fn(self.j, self.p, |r, c| match self.gamma[r][c] {
            GammaEntry::Fixed { value } => value,
            GammaEntry::Local { scale } => scale * local,
            GammaEntry::Uniform { lo, hi } => rng.sample(Uniform::new(lo, hi).expect("lo < hi")),
        })
    }

    /// Cholesky factor of `[[1, r, .., r], [r, 1, 0..], ..]` for
    /// `(u, e_1, .., e_P)`.
    fn error_factor(&self) -> DMatrix<f64> {
        let k = self.p + 1;
        let cov = DMatrix::from_fn(k, k, |a, b| {
            if a == b {
                1.0
            } else if a == 0 || b == 0 {
                self.error_corr
            } else {
                0.0
            }
        });
        cov.cholesky()
            .expect("error covariance is positive definite")
            .l()
    }

    fn z_factor(&self) -> DMatrix<f64> {
        let toeplitz =
            DMatrix::from_fn(self.j, self.j, |a, b| self.rho_z.powi(a.abs_diff(b) as i32));
        toeplitz
            .cholesky()
            .expect("Toeplitz correlation is positive definite")
            .l()
    }

    /// Draws one dataset. The first-stage draw comes first from `rng`, then
    /// the instruments, then the errors.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Dataset {
        let gamma = self.draw_gamma(rng);
        let n = self.n;
        let mut std_normal = |r: usize, c: usize| -> DMatrix<f64> {
            DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
        };
        let z = std_normal(n, self.j) * self.z_factor().transpose();
        let errors = std_normal(n, self.p + 1) * self.error_factor().transpose();
        let u = errors.column(0).into_owned();
        let eps = errors.columns(1, self.p).into_owned();
        let d = &z * gamma + eps;
        let beta = DVector::from_column_slice(&self.beta);
        let alpha = DVector::from_column_slice(&self.alpha);
        let y = &d * beta + &z * alpha + u;
        Dataset::from_parts(y, d, z).expect("generated shapes agree")
    }
}
