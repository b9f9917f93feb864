//! Point estimators of the sample average treatment effect and their
//! variance estimates.
//!
//! * `C`: the mean of the paired differences with `S2_C = sum (Y_i - mean)^2 / (n (n-1))`.
//! * `R1`: the intercept of `Y ~ VD`.
//! * `R2`: the intercept of `Y ~ VD + M`.
//!
//! Regression variances are the homoskedastic intercept variances by default;
//! HC2/HC3 sandwiches are available. [`superpop_correct`] adds the
//! `n^-1 beta_M' Sigma_M beta_M` term that makes the R2 variance valid for a
//! population-level target.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::DesignMatrices;
use crate::normal::inverse_cdf;
use crate::ols::{intercept_variance_classical, intercept_variance_hc, least_squares, HcVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorId {
    C,
    R1,
    R2,
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorId::C => "C",
            EstimatorId::R1 => "R1",
            EstimatorId::R2 => "R2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceFlavor {
    #[default]
    Classical,
    #[serde(rename = "HC2")]
    Hc2,
    #[serde(rename = "HC3")]
    Hc3,
    SuperpopCorrected,
}

impl std::str::FromStr for VarianceFlavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(Self::Classical),
            "hc2" => Ok(Self::Hc2),
            "hc3" => Ok(Self::Hc3),
            _ => Err(Error::Config(format!(
                "unknown variance flavor `{s}` (classical, hc2, hc3)"
            ))),
        }
    }
}

/// Inferential target of an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Sample average treatment effect.
    #[default]
    Sate,
    /// Population average treatment effect.
    Pate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimator: EstimatorId,
    pub tau_hat: f64,
    pub s2: f64,
    pub flavor: VarianceFlavor,
    pub dof: usize,
    pub beta_d: Vec<f64>,
    pub beta_m: Vec<f64>,
    pub n: usize,
}

impl EstimateReport {
    pub fn se(&self) -> f64 {
        self.s2.sqrt()
    }
}

/// Difference-in-means estimate from the paired differences `y`.
pub fn estimate_classical(y: &[f64]) -> Result<EstimateReport> {
    let n = y.len();
    if n < 2 {
        return Err(Error::TooFewPairs { n, required: 1 });
    }
    let nf = n as f64;
    let tau_hat = y.iter().sum::<f64>() / nf;
    let ss: f64 = y.iter().map(|v| (v - tau_hat).powi(2)).sum();
    Ok(EstimateReport {
        estimator: EstimatorId::C,
        tau_hat,
        s2: ss / (nf * (nf - 1.0)),
        flavor: VarianceFlavor::Classical,
        dof: n - 1,
        beta_d: Vec::new(),
        beta_m: Vec::new(),
        n,
    })
}

fn regression_estimate(
    estimator: EstimatorId,
    dm: &DesignMatrices,
    regressors: &DMatrix<f64>,
    flavor: VarianceFlavor,
) -> Result<EstimateReport> {
    let fit = least_squares(regressors, dm.y(), true)?;
    let s2 = match flavor {
        VarianceFlavor::Classical => intercept_variance_classical(&fit, regressors)?,
        VarianceFlavor::Hc2 => intercept_variance_hc(&fit, HcVariant::Hc2)?,
        VarianceFlavor::Hc3 => intercept_variance_hc(&fit, HcVariant::Hc3)?,
        VarianceFlavor::SuperpopCorrected => {
            return Err(Error::Config(
                "the superpopulation correction is applied with superpop_correct".into(),
            ))
        }
    };
    let slopes = fit.slopes();
    let (beta_d, beta_m) = slopes.split_at(dm.k_d());
    Ok(EstimateReport {
        estimator,
        tau_hat: fit.coefficients[0],
        s2,
        flavor,
        dof: fit.dof,
        beta_d: beta_d.to_vec(),
        beta_m: beta_m.to_vec(),
        n: dm.n(),
    })
}

/// Intercept of `Y ~ VD` with the homoskedastic variance.
pub fn estimate_r1(dm: &DesignMatrices) -> Result<EstimateReport> {
    estimate_r1_with(dm, VarianceFlavor::Classical)
}

pub fn estimate_r1_with(dm: &DesignMatrices, flavor: VarianceFlavor) -> Result<EstimateReport> {
    regression_estimate(EstimatorId::R1, dm, dm.vd(), flavor)
}

/// Intercept of `Y ~ VD + M` with the homoskedastic variance.
pub fn estimate_r2(dm: &DesignMatrices) -> Result<EstimateReport> {
    estimate_r2_with(dm, VarianceFlavor::Classical)
}

pub fn estimate_r2_with(dm: &DesignMatrices, flavor: VarianceFlavor) -> Result<EstimateReport> {
    regression_estimate(EstimatorId::R2, dm, &dm.adjusted_regressors(), flavor)
}

/// `S2_{R2,P} = S2_R2 + n^-1 beta_M' Sigma_M beta_M` with `Sigma_M = M'M / (n - 1)`.
pub fn superpop_correct(r2: &EstimateReport, dm: &DesignMatrices) -> Result<EstimateReport> {
    if r2.estimator != EstimatorId::R2 {
        return Err(Error::WrongEstimator(r2.estimator.to_string()));
    }
    if r2.beta_m.len() != dm.k_m() {
        return Err(Error::LengthMismatch {
            expected: dm.k_m(),
            found: r2.beta_m.len(),
        });
    }
    let n = dm.n() as f64;
    let fitted = dm.m() * nalgebra::DVector::from_column_slice(&r2.beta_m);
    let correction = fitted.norm_squared() / (n * (n - 1.0));
    Ok(EstimateReport {
        s2: r2.s2 + correction,
        flavor: VarianceFlavor::SuperpopCorrected,
        ..r2.clone()
    })
}

/// `Phi^-1(1 - alpha / 2)`.
pub fn critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::BadAlpha(alpha));
    }
    Ok(inverse_cdf(1.0 - alpha / 2.0))
}

/// Normal-quantile interval `tau_hat -/+ Phi^-1(1 - alpha/2) * sqrt(S2)`.
pub fn confidence_interval(report: &EstimateReport, alpha: f64) -> Result<(f64, f64)> {
    let z = critical_value(alpha)?;
    let half = z * report.s2.max(0.0).sqrt();
    Ok((report.tau_hat - half, report.tau_hat + half))
}

/// All estimates of one observed assignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSet {
    pub c: EstimateReport,
    pub r1: EstimateReport,
    pub r2: EstimateReport,
    /// R2 with the superpopulation correction applied to its variance.
    pub r2p: EstimateReport,
}

/// C, R1, R2 and the corrected R2, with `flavor` for the regression variances.
pub fn estimate_all(dm: &DesignMatrices, flavor: VarianceFlavor) -> Result<EstimateSet> {
    let c = estimate_classical(dm.y().as_slice())?;
    let r1 = estimate_r1_with(dm, flavor)?;
    let r2 = estimate_r2_with(dm, flavor)?;
    let r2p = superpop_correct(&r2, dm)?;
    Ok(EstimateSet { c, r1, r2, r2p })
}

/// Serialized form of one estimate with its interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateJson {
    pub estimator: EstimatorId,
    pub target: Target,
    pub tau_hat: f64,
    pub s2: f64,
    pub flavor: VarianceFlavor,
    pub dof: usize,
    pub ci: [f64; 2],
    pub alpha: f64,
    #[serde(rename = "beta_D")]
    pub beta_d: Vec<f64>,
    #[serde(rename = "beta_M")]
    pub beta_m: Vec<f64>,
}

impl EstimateJson {
    pub fn new(report: &EstimateReport, target: Target, alpha: f64) -> Result<Self> {
        let (lo, hi) = confidence_interval(report, alpha)?;
        Ok(Self {
            estimator: report.estimator,
            target,
            tau_hat: report.tau_hat,
            s2: report.s2,
            flavor: report.flavor,
            dof: report.dof,
            ci: [lo, hi],
            alpha,
            beta_d: report.beta_d.clone(),
            beta_m: report.beta_m.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::CovariateBlocks;
    use std::sync::Arc;

    fn design(
        d: &[f64],
        k_d: usize,
        m: &[f64],
        k_m: usize,
        v: &[f64],
        y: &[f64],
    ) -> DesignMatrices {
        let n = v.len();
        let blocks = CovariateBlocks {
            d: DMatrix::from_row_slice(n, k_d, d),
            m: DMatrix::from_row_slice(n, k_m, m),
            d_labels: (1..=k_d).map(|k| format!("x{k}")).collect(),
            m_labels: (1..=k_m).map(|k| format!("x{k}")).collect(),
        };
        DesignMatrices::assemble(Arc::new(blocks), v.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn classical_constant_and_two_point() {
        let r = estimate_classical(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((r.tau_hat, r.s2, r.dof), (2.0, 0.0, 2));
        let r = estimate_classical(&[1.0, 3.0]).unwrap();
        assert_eq!((r.tau_hat, r.s2), (2.0, 1.0));
        assert!(matches!(
            estimate_classical(&[1.0]),
            Err(Error::TooFewPairs { .. })
        ));
    }

    #[test]
    fn classical_translation() {
        let y = [0.3, -1.2, 4.0, 2.2, 0.0];
        let a = estimate_classical(&y).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + 7.5).collect();
        let b = estimate_classical(&shifted).unwrap();
        assert!((b.tau_hat - a.tau_hat - 7.5).abs() < 1e-12);
        assert!((b.s2 - a.s2).abs() < 1e-12);
    }

    #[test]
    fn centered_regressor_gives_mean() {
        // VD = (1, -1, 1, -1) sums to zero, so the intercept is mean(Y).
        let dm = design(
            &[1.0, -1.0, 1.0, -1.0],
            1,
            &[],
            0,
            &[1.0, 1.0, 1.0, 1.0],
            &[3.0, 1.0, 4.0, 0.0],
        );
        let r1 = estimate_r1(&dm).unwrap();
        assert!((r1.tau_hat - 2.0).abs() < 1e-12);
        assert_eq!(r1.dof, 2);
        assert_eq!(r1.beta_d.len(), 1);
    }

    #[test]
    fn exact_fit_through_origin() {
        let d = [1.0, 2.0, -0.5, 3.0, 0.7];
        let v = [1.0, -1.0, -1.0, 1.0, 1.0];
        let y: Vec<f64> = d.iter().zip(&v).map(|(d, v)| 2.5 * d * v).collect();
        let dm = design(&d, 1, &[], 0, &v, &y);
        let r1 = estimate_r1(&dm).unwrap();
        assert!(r1.tau_hat.abs() < 1e-12);
        assert!(r1.s2 < 1e-24);
        assert!((r1.beta_d[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn r2_without_levels_is_r1() {
        let d = [1.0, 0.4, 2.0, -0.5, 3.0, -1.1, 0.7, 0.2, -2.0, 1.5];
        let v = [1.0, -1.0, -1.0, 1.0, 1.0];
        let y = [0.3, 2.0, -1.0, 1.4, 0.8];
        let dm = design(&d, 2, &[], 0, &v, &y);
        let r1 = estimate_r1(&dm).unwrap();
        let r2 = estimate_r2(&dm).unwrap();
        assert!((r1.tau_hat - r2.tau_hat).abs() <= 1e-12);
        assert!((r1.s2 - r2.s2).abs() <= 1e-12);
        assert!(r2.beta_m.is_empty());
    }

    #[test]
    fn r2_constant_response() {
        let d = [1.0, 0.4, 2.0, -0.5, 3.0, -1.1];
        let m = [
            -1.0, 0.5, 0.0, 0.0, 0.5, 1.0, -0.5, 1.0, 1.0, -2.5, 0.0, 0.0,
        ];
        let v = [1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
        let dm = design(&d, 1, &m, 2, &v, &[4.0; 6]);
        let r2 = estimate_r2(&dm).unwrap();
        assert!((r2.tau_hat - 4.0).abs() < 1e-12);
        assert!(r2.s2 < 1e-24);
        assert_eq!(r2.dof, 2);
    }

    #[test]
    fn superpopulation_correction() {
        let dm = design(
            &[0.5, -1.0, 2.0],
            1,
            &[-1.0, 0.0, 1.0],
            1,
            &[1.0, 1.0, -1.0],
            &[0.0, 0.0, 0.0],
        );
        let base = EstimateReport {
            estimator: EstimatorId::R2,
            tau_hat: 1.0,
            s2: 0.5,
            flavor: VarianceFlavor::Classical,
            dof: 0,
            beta_d: vec![0.0],
            beta_m: vec![2.0],
            n: 3,
        };
        let corrected = superpop_correct(&base, &dm).unwrap();
        assert!((corrected.s2 - (0.5 + 4.0 / 3.0)).abs() < 1e-12);
        assert_eq!(corrected.tau_hat, 1.0);
        assert_eq!(corrected.flavor, VarianceFlavor::SuperpopCorrected);

        let zero = EstimateReport {
            beta_m: vec![0.0],
            ..base.clone()
        };
        assert_eq!(superpop_correct(&zero, &dm).unwrap().s2, 0.5);

        let wrong = EstimateReport {
            estimator: EstimatorId::R1,
            ..base
        };
        assert!(matches!(
            superpop_correct(&wrong, &dm),
            Err(Error::WrongEstimator(_))
        ));
    }

    #[test]
    fn intervals() {
        let mut r = estimate_classical(&[1.0, 3.0]).unwrap();
        r.tau_hat = 0.0;
        let (lo, hi) = confidence_interval(&r, 0.05).unwrap();
        assert!((hi - 1.959964).abs() < 1e-6 && (lo + 1.959964).abs() < 1e-6);
        assert_eq!(confidence_interval(&r, 1.0).unwrap(), (0.0, 0.0));
        r.s2 = 0.0;
        r.tau_hat = 3.0;
        assert_eq!(confidence_interval(&r, 0.05).unwrap(), (3.0, 3.0));
        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                confidence_interval(&r, bad),
                Err(Error::BadAlpha(_))
            ));
        }
    }

    #[test]
    fn flavor_parsing_and_json_names() {
        assert_eq!(
            "HC3".parse::<VarianceFlavor>().unwrap(),
            VarianceFlavor::Hc3
        );
        assert!("sandwich".parse::<VarianceFlavor>().is_err());
        assert_eq!(
            serde_json::to_string(&VarianceFlavor::SuperpopCorrected).unwrap(),
            "\"superpop-corrected\""
        );
        assert_eq!(
            serde_json::to_string(&VarianceFlavor::Hc2).unwrap(),
            "\"HC2\""
        );
        assert_eq!(serde_json::to_string(&Target::Pate).unwrap(), "\"pate\"");
    }
}
