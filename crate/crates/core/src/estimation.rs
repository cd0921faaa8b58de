//! Regression machinery: first stage, reduced form, every just-identified
//! 2SLS estimate, post-selection 2SLS and the Sargan statistic.
//!
//! All estimators share one thin QR factorization `Z = QR` of the candidate
//! instruments. Because every regressor set used here is `[D, Z_I]` with
//! `Z_I` a subset of the columns of `Z`, 2SLS reduces to ordinary least
//! squares of `Q'y` on `[R_I, Q'D]` in the `J`-dimensional instrument space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{binomial, Dataset, IvCombination, ModelFit, SelectionConfig, SignificanceRule};
use crate::error::{Error, Result};
use crate::linalg::{self, ThinQr, RANK_TOL};

/// Relative size below which `D'M D` is treated as exactly singular.
const SINGULAR_TOL: f64 = 1e-12;

/// Residual norm relative to `||y||` treated as a perfect fit.
const EXACT_FIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JustIdentifiedEstimate {
    pub combo: IvCombination,
    pub beta: Vec<f64>,
    /// Reciprocal condition number of the `P x P` first-stage block.
    pub rcond_gamma: f64,
    /// Coefficients on the `J - P` remaining instruments, in index order.
    pub alpha_controls: Vec<f64>,
    /// Set when `rcond_gamma` is below the configured floor.
    pub near_singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarganOutcome {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub critical_value: f64,
    /// Significance level the critical value was taken at.
    pub alpha: f64,
    pub passed: bool,
}

impl SarganOutcome {
    fn exactly_identified(alpha: f64) -> Self {
        Self {
            statistic: 0.0,
            df: 0,
            p_value: 1.0,
            critical_value: 0.0,
            alpha,
            passed: true,
        }
    }

    /// Evaluates a statistic against `chi2(df)` at level `alpha`.
    pub fn from_statistic(statistic: f64, df: usize, alpha: f64) -> Self {
        if df == 0 {
            return Self::exactly_identified(alpha);
        }
        let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
        let critical_value = dist.inverse_cdf(1.0 - alpha);
        Self {
            statistic,
            df,
            p_value: dist.sf(statistic).clamp(0.0, 1.0),
            critical_value,
            alpha,
            passed: statistic < critical_value,
        }
    }
}

/// Instrument-space representation of a dataset shared by all estimators.
#[derive(Debug, Clone)]
pub struct Projection<'a> {
    data: &'a Dataset,
    qr: ThinQr,
    qty: DMatrix<f64>,
    qtd: DMatrix<f64>,
}

impl<'a> Projection<'a> {
    pub fn new(data: &'a Dataset) -> Result<Self> {
        let qr = ThinQr::new(data.z())?;
        let rc = qr.rcond();
        if rc < RANK_TOL {
            return Err(Error::RankDeficient {
                what: "instrument matrix Z".into(),
                rcond: rc,
            });
        }
        let qty = qr.qt_mul(&linalg::column_vector(data.y()));
        let qtd = qr.qt_mul(data.d());
        Ok(Self { data, qr, qty, qtd })
    }

    pub fn dataset(&self) -> &Dataset {
        self.data
    }

    /// OLS coefficients of `D` on `Z` (`J x P`).
    pub fn first_stage(&self) -> Result<DMatrix<f64>> {
        self.qr.solve_r(&self.qtd)
    }

    /// OLS coefficients of `y` on `Z` (length `J`).
    pub fn reduced_form(&self) -> Result<DVector<f64>> {
        Ok(self.qr.solve_r(&self.qty)?.column(0).into_owned())
    }

    fn check_valid(&self, valid: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        let j = self.data.j();
        let p = self.data.p();
        let mut v = valid.to_vec();
        v.sort_unstable();
        if v.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSet("duplicate instrument index".into()));
        }
        if v.iter().any(|&i| i >= j) {
            return Err(Error::InvalidSet(format!(
                "instrument index out of range 0..{j}"
            )));
        }
        if v.len() < p {
            return Err(Error::InvalidSet(format!(
                "{} valid instruments cannot identify {p} coefficients",
                v.len()
            )));
        }
        let controls = (0..j).filter(|i| v.binary_search(i).is_err()).collect();
        Ok((v, controls))
    }

    /// 2SLS with `valid` as excluded instruments and the remaining
    /// instruments as included controls.
    pub fn fit(&self, valid: &[usize]) -> Result<ModelFit> {
        let (_, controls) = self.check_valid(valid)?;
        Ok(self.fit_inner(&controls)?.0)
    }

    /// Returns the fit and the projected residual `Q'u`.
    fn fit_inner(&self, controls: &[usize]) -> Result<(ModelFit, DMatrix<f64>)> {
        let p = self.data.p();
        let ni = controls.len();
        let r_i = linalg::select_columns(self.qr.r(), controls);
        // Coefficients of interest go last so the trailing block of the
        // triangular factor carries D'M_{Z_I}D.
        let x = linalg::hstack(&[&r_i, &self.qtd]);
        let xqr = ThinQr::new(&x)?;
        let r22 = xqr.r().view((ni, ni), (p, p)).into_owned();
        let d_scale = self.data.d().norm().max(f64::MIN_POSITIVE);
        if r22.abs().max() <= SINGULAR_TOL * d_scale || linalg::rcond(&r22) < SINGULAR_TOL {
            return Err(Error::SingularDesign(
                "projected regressors are collinear with the included instruments".into(),
            ));
        }
        let theta = xqr.solve(&self.qty)?;
        let alpha = theta.rows(0, ni).into_owned();
        let beta = theta.rows(ni, p).into_owned();
        let proj_resid = &self.qty - &x * &theta;

        let z_i = linalg::select_columns(self.data.z(), controls);
        let mut u = linalg::column_vector(self.data.y()) - self.data.d() * &beta;
        if ni > 0 {
            u -= &z_i * &alpha;
        }
        let n = self.data.n() as f64;
        let sigma_u2 = u.norm_squared() / n;
        let r22_inv = linalg::upper_inverse(&r22)?;
        let vcov = (&r22_inv * r22_inv.transpose()) * sigma_u2;
        let vcov = (&vcov + vcov.transpose()) * 0.5;

        let fit = ModelFit {
            beta: beta.column(0).iter().copied().collect(),
            alpha: alpha.column(0).iter().copied().collect(),
            control_ivs: controls.to_vec(),
            residuals: u.column(0).iter().copied().collect(),
            vcov_beta: (0..p)
                .map(|r| (0..p).map(|c| vcov[(r, c)]).collect())
                .collect(),
            sigma_u2,
        };
        Ok((fit, proj_resid))
    }

    /// Sargan overidentification test of `valid` with the complement as
    /// included controls.
    pub fn sargan(&self, valid: &[usize], rule: &SignificanceRule) -> Result<SarganOutcome> {
        let (v, controls) = self.check_valid(valid)?;
        let alpha = rule.alpha(self.data.n());
        let df = v.len() - self.data.p();
        if df == 0 {
            // Still require the model to be estimable.
            self.fit_inner(&controls)?;
            return Ok(SarganOutcome::exactly_identified(alpha));
        }
        let (fit, proj_resid) = self.fit_inner(&controls)?;
        let denom = fit.sigma_u2;
        // An exact fit leaves only roundoff in the residual, whose projection
        // ratio is meaningless.
        let exact_fit =
            denom * self.data.n() as f64 <= (EXACT_FIT_TOL * self.data.y().norm()).powi(2);
        let statistic = if denom > 0.0 && !exact_fit {
            proj_resid.norm_squared() / denom
        } else {
            0.0
        };
        Ok(SarganOutcome::from_statistic(statistic, df, alpha))
    }

    /// First-stage F statistic (`P = 1`) or Cragg-Donald minimum-eigenvalue
    /// statistic (`P > 1`) of the `valid` instruments, controlling for the
    /// rest.
    pub fn first_stage_strength(&self, valid: &[usize]) -> Result<f64> {
        let (v, controls) = self.check_valid(valid)?;
        let n = self.data.n();
        let j = self.data.j();
        if n <= j {
            return Err(Error::Dimension("no residual degrees of freedom".into()));
        }
        // Part of Q'D orthogonal to the included instruments.
        let explained = if controls.is_empty() {
            self.qtd.clone()
        } else {
            let r_i = linalg::select_columns(self.qr.r(), &controls);
            linalg::residualize(&self.qtd, &r_i, "included instruments")?
        };
        let a = explained.transpose() * &explained;
        let gamma = self.first_stage()?;
        let e = self.data.d() - self.data.z() * gamma;
        let sigma = (e.transpose() * &e) / (n - j) as f64;

        let scale = self.data.d().norm_squared().max(f64::MIN_POSITIVE);
        if a.trace() <= 1e-24 * scale {
            return Ok(0.0);
        }
        let Some(chol) = sigma.clone().cholesky() else {
            return Ok(f64::INFINITY);
        };
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(a.nrows(), a.nrows()))
            .ok_or_else(|| Error::SingularDesign("first-stage error covariance".into()))?;
        let g = &l_inv * a * l_inv.transpose();
        let g = (&g + g.transpose()) * 0.5;
        let min_eig = g.symmetric_eigenvalues().min();
        Ok(min_eig / v.len() as f64)
    }

    /// Every just-identified estimate, one per `P`-combination, in
    /// lexicographic order.
    pub fn just_identified_all(
        &self,
        config: &SelectionConfig,
    ) -> Result<Vec<JustIdentifiedEstimate>> {
        let (j, p) = (self.data.j(), self.data.p());
        let count = binomial(j, p);
        if count > config.max_combinations as u128 {
            return Err(Error::TooManyCombinations {
                count,
                cap: config.max_combinations,
            });
        }
        let gamma = self.first_stage()?;
        let big_gamma = self.reduced_form()?;
        let combos = IvCombination::all(j, p);
        let one = |combo: IvCombination| -> Result<JustIdentifiedEstimate> {
            just_identified_one(&gamma, &big_gamma, combo, config.min_condition)
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            combos.into_par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            combos.into_iter().map(one).collect()
        }
    }
}

/// `(beta, alpha) = H^{-1} Gamma` for one combination, where `H` stacks the
/// combination's first-stage rows over the identity on the other
/// instruments.
fn just_identified_one(
    gamma: &DMatrix<f64>,
    big_gamma: &DVector<f64>,
    combo: IvCombination,
    min_condition: f64,
) -> Result<JustIdentifiedEstimate> {
    let idx = combo.indices();
    let p = idx.len();
    let g1 = DMatrix::from_fn(p, p, |r, c| gamma[(idx[r], c)]);
    let b1 = DVector::from_fn(p, |r, _| big_gamma[idx[r]]);
    let rcond_gamma = linalg::rcond(&g1);
    let beta = g1.clone().full_piv_lu().solve(&b1).ok_or_else(|| {
        Error::SingularDesign(format!(
            "first-stage block of combination {combo} is singular"
        ))
    })?;
    let alpha_controls = (0..gamma.nrows())
        .filter(|i| !idx.contains(i))
        .map(|i| big_gamma[i] - (gamma.row(i) * &beta)[0])
        .collect();
    Ok(JustIdentifiedEstimate {
        beta: beta.iter().copied().collect(),
        rcond_gamma,
        alpha_controls,
        near_singular: rcond_gamma < min_condition,
        combo,
    })
}

/// OLS first-stage coefficients `(Z'Z)^{-1} Z'D`.
pub fn first_stage(dataset: &Dataset) -> Result<DMatrix<f64>> {
    Projection::new(dataset)?.first_stage()
}

pub fn just_identified_all(
    dataset: &Dataset,
    config: &SelectionConfig,
) -> Result<Vec<JustIdentifiedEstimate>> {
    Projection::new(dataset)?.just_identified_all(config)
}

pub fn post_selection_tsls(dataset: &Dataset, valid: &[usize]) -> Result<ModelFit> {
    Projection::new(dataset)?.fit(valid)
}

pub fn sargan(
    dataset: &Dataset,
    valid: &[usize],
    config: &SelectionConfig,
) -> Result<SarganOutcome> {
    Projection::new(dataset)?.sargan(valid, &config.significance)
}

pub fn first_stage_strength(dataset: &Dataset, valid: &[usize]) -> Result<f64> {
    Projection::new(dataset)?.first_stage_strength(valid)
}
