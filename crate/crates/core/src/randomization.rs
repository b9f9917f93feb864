//! Randomization distributions of the estimators for a fixed science table.
//!
//! [`enumerate_exact`] walks all `2^n` equiprobable assignments and is the
//! exact oracle for small tables; [`run_monte_carlo`] samples `B` assignments
//! for larger ones. Assignment `bits` encode `V_i = +1` (first listed unit
//! treated) as bit `i` set.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::PotentialOutcomeSample;
use crate::error::{Error, Result};
use crate::estimators::{
    critical_value, estimate_classical, estimate_r1_with, estimate_r2_with, superpop_correct,
    VarianceFlavor,
};
use crate::experiment::{
    CovariateBlocks, DesignMatrices, Pair, PairedExperiment, TransformSpec, Unit,
};
use crate::ols::ones_residual_norm;
use crate::rng::Substream;

/// Default largest table enumerated exactly (65,536 assignments).
pub const DEFAULT_ENUMERATION_CAP: usize = 16;

/// Statistic tracked across randomizations: an estimator together with the
/// variance estimate used for its interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Statistic {
    C,
    R1,
    R2,
    /// R2 with the superpopulation-corrected variance.
    R2P,
}

impl Statistic {
    pub const ALL: [Statistic; 4] = [Statistic::C, Statistic::R1, Statistic::R2, Statistic::R2P];

    pub fn label(self) -> &'static str {
        match self {
            Statistic::C => "C",
            Statistic::R1 => "R1",
            Statistic::R2 => "R2",
            Statistic::R2P => "R2P",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    fn needs_design(self) -> bool {
        self != Statistic::C
    }
}

/// `(tau_hat, S2)` per statistic for one assignment; `None` when the
/// statistic was not requested or its fit failed.
pub type AssignmentEstimates = [Option<(f64, f64)>; 4];

/// Signs `V_i` drawn as independent fair coins.
pub fn randomize(n: usize, rng: &mut Substream) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.coin() { 1.0 } else { -1.0 })
        .collect()
}

/// Signs encoded by the low `n` bits of `bits`.
pub fn signs_from_bits(bits: u64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 })
        .collect()
}

/// `Y_i = Delta_i + V_i (l_i1 - l_i2)`.
pub fn observed_differences(sample: &PotentialOutcomeSample, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != sample.n() {
        return Err(Error::LengthMismatch {
            expected: sample.n(),
            found: v.len(),
        });
    }
    Ok(sample
        .pairs()
        .iter()
        .zip(v)
        .map(|(p, s)| p.effect() + s * p.level_difference())
        .collect())
}

/// Observed experiment under assignment `v`, with its paired differences.
pub fn reveal(sample: &PotentialOutcomeSample, v: &[f64]) -> Result<(PairedExperiment, Vec<f64>)> {
    let y = observed_differences(sample, v)?;
    let pairs = sample
        .pairs()
        .iter()
        .zip(v)
        .enumerate()
        .map(|(i, (p, &s))| {
            let first_treated = s > 0.0;
            let unit = |j: usize, treated: bool| {
                let u = &p.units[j];
                Unit {
                    x: u.x.clone(),
                    treated,
                    response: if treated { u.r_t } else { u.r_c },
                }
            };
            Pair {
                id: i as i64 + 1,
                units: [unit(0, first_treated), unit(1, !first_treated)],
            }
        })
        .collect();
    let experiment = PairedExperiment::new(pairs)?;
    debug_assert!(experiment
        .differences()
        .iter()
        .zip(&y)
        .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)));
    Ok((experiment, y))
}

/// Evaluates the requested statistics for one assignment.
fn evaluate(
    blocks: Option<&Arc<CovariateBlocks>>,
    v: Vec<f64>,
    y: Vec<f64>,
    wanted: &[bool; 4],
    flavor: VarianceFlavor,
) -> AssignmentEstimates {
    let mut out: AssignmentEstimates = [None; 4];
    if wanted[Statistic::C.index()] {
        out[0] = estimate_classical(&y).ok().map(|r| (r.tau_hat, r.s2));
    }
    let Some(blocks) = blocks else { return out };
    let Ok(dm) = DesignMatrices::assemble(Arc::clone(blocks), v, y) else {
        return out;
    };
    if wanted[Statistic::R1.index()] {
        out[1] = estimate_r1_with(&dm, flavor)
            .ok()
            .map(|r| (r.tau_hat, r.s2));
    }
    if wanted[Statistic::R2.index()] || wanted[Statistic::R2P.index()] {
        if let Ok(r2) = estimate_r2_with(&dm, flavor) {
            if wanted[Statistic::R2P.index()] {
                out[3] = superpop_correct(&r2, &dm).ok().map(|r| (r.tau_hat, r.s2));
            }
            if wanted[Statistic::R2.index()] {
                out[2] = Some((r2.tau_hat, r2.s2));
            }
        }
    }
    out
}

fn wanted_mask(statistics: &[Statistic]) -> [bool; 4] {
    let mut mask = [false; 4];
    for s in statistics {
        mask[s.index()] = true;
    }
    mask
}

/// One enumerated assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentRecord {
    pub bits: u64,
    pub estimates: AssignmentEstimates,
}

/// Exact moments of one statistic over the assignment distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactMoments {
    pub statistic: Statistic,
    /// `E[tau_hat]` over the assignments where the statistic was defined.
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub mean_s2: f64,
    /// Probability that the interval covers the SATE.
    pub coverage: f64,
    pub failures: u64,
}

/// Exact randomization distribution for a small science table.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub n: usize,
    pub sate: f64,
    pub alpha: f64,
    pub records: Vec<AssignmentRecord>,
    pub moments: Vec<ExactMoments>,
}

impl ExactDistribution {
    pub fn moments(&self, statistic: Statistic) -> Option<&ExactMoments> {
        self.moments.iter().find(|m| m.statistic == statistic)
    }

    /// Distinct values of `tau_hat` for `statistic` with their probabilities,
    /// merging values closer than `1e-12` relative.
    pub fn distribution(&self, statistic: Statistic) -> Vec<(f64, f64)> {
        let weight = 1.0 / self.records.len() as f64;
        let mut values: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| r.estimates[statistic.index()].map(|(t, _)| t))
            .collect();
        values.sort_by(f64::total_cmp);
        let mut out: Vec<(f64, f64)> = Vec::new();
        for v in values {
            match out.last_mut() {
                Some((last, p)) if (v - *last).abs() <= 1e-12 * v.abs().max(1.0) => *p += weight,
                _ => out.push((v, weight)),
            }
        }
        out
    }

    /// `n^-2 sum (l_i1 - l_i2)^2`, the exact variance of the C estimator.
    pub fn classical_variance_formula(sample: &PotentialOutcomeSample) -> f64 {
        let n = sample.n() as f64;
        sample
            .level_differences()
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            / (n * n)
    }
}

/// Options shared by the exact and Monte Carlo randomization engines.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationOptions {
    pub f: TransformSpec,
    pub g: TransformSpec,
    pub alpha: f64,
    pub flavor: VarianceFlavor,
    pub statistics: Vec<Statistic>,
}

impl Default for RandomizationOptions {
    fn default() -> Self {
        Self {
            f: TransformSpec::identity(),
            g: TransformSpec::identity(),
            alpha: 0.05,
            flavor: VarianceFlavor::Classical,
            statistics: Statistic::ALL.to_vec(),
        }
    }
}

/// Covariate blocks when the table supports the regression statistics.
fn blocks_for(
    sample: &PotentialOutcomeSample,
    options: &RandomizationOptions,
) -> Result<Option<Arc<CovariateBlocks>>> {
    if !options.statistics.iter().any(|s| s.needs_design()) {
        return Ok(None);
    }
    match CovariateBlocks::from_covariates(
        sample.covariate_pairs(),
        sample.covariates(),
        &options.f,
        &options.g,
    ) {
        Ok(blocks) => Ok(Some(Arc::new(blocks))),
        Err(Error::TooFewPairs { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Evaluates every statistic under all `2^n` assignments.
pub fn enumerate_exact(
    sample: &PotentialOutcomeSample,
    options: &RandomizationOptions,
    cap: usize,
) -> Result<ExactDistribution> {
    let n = sample.n();
    if n > cap || n >= 63 {
        return Err(Error::TooLarge { n, cap });
    }
    let z = critical_value(options.alpha)?;
    let blocks = blocks_for(sample, options)?;
    let wanted = wanted_mask(&options.statistics);

    let records: Vec<AssignmentRecord> = (0..1u64 << n)
        .into_par_iter()
        .map(|bits| {
            let v = signs_from_bits(bits, n);
            let y = observed_differences(sample, &v).expect("lengths agree");
            AssignmentRecord {
                bits,
                estimates: evaluate(blocks.as_ref(), v, y, &wanted, options.flavor),
            }
        })
        .collect();

    let sate = sample.sate();
    let moments = options
        .statistics
        .iter()
        .map(|&statistic| {
            let draws: Vec<(f64, f64)> = records
                .iter()
                .filter_map(|r| r.estimates[statistic.index()])
                .collect();
            let failures = (records.len() - draws.len()) as u64;
            let m = draws.len() as f64;
            let mean = draws.iter().map(|d| d.0).sum::<f64>() / m;
            let variance = draws.iter().map(|d| (d.0 - mean).powi(2)).sum::<f64>() / m;
            let mean_s2 = draws.iter().map(|d| d.1).sum::<f64>() / m;
            let covered = draws.iter().filter(|d| covers(d.0, d.1, z, sate)).count();
            ExactMoments {
                statistic,
                mean,
                bias: mean - sate,
                variance,
                mean_s2,
                coverage: covered as f64 / m,
                failures,
            }
        })
        .collect();

    Ok(ExactDistribution {
        n,
        sate,
        alpha: options.alpha,
        records,
        moments,
    })
}

/// Closed interval check; a boundary hit counts as covered.
fn covers(tau_hat: f64, s2: f64, z: f64, target: f64) -> bool {
    let half = z * s2.max(0.0).sqrt();
    tau_hat - half <= target && target <= tau_hat + half
}

/// Across-randomization summary of one statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatisticSummary {
    pub statistic: Statistic,
    pub evaluated: u64,
    pub failures: u64,
    pub mean: f64,
    /// Variance with divisor `B`, so that `rmse^2 = bias^2 + variance`.
    pub variance: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub mean_s2: f64,
    #[serde(skip)]
    pub draws: Option<Vec<f64>>,
}

impl StatisticSummary {
    pub fn bias(&self, target: f64) -> f64 {
        self.mean - target
    }

    /// Binomial Monte Carlo standard error of the coverage.
    pub fn coverage_mc_se(&self) -> f64 {
        (self.coverage * (1.0 - self.coverage) / self.evaluated.max(1) as f64).sqrt()
    }

    /// Monte Carlo standard error of the mean estimate.
    pub fn mean_mc_se(&self) -> f64 {
        (self.variance / self.evaluated.max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomizationSummary {
    pub randomizations: usize,
    pub target: f64,
    pub alpha: f64,
    pub statistics: Vec<StatisticSummary>,
}

impl RandomizationSummary {
    pub fn get(&self, statistic: Statistic) -> Option<&StatisticSummary> {
        self.statistics.iter().find(|s| s.statistic == statistic)
    }
}

fn summarize(
    statistic: Statistic,
    draws: &[(f64, f64)],
    attempted: usize,
    target: f64,
    z: f64,
    keep: bool,
) -> StatisticSummary {
    let m = draws.len() as f64;
    let mean = draws.iter().map(|d| d.0).sum::<f64>() / m;
    let variance = draws.iter().map(|d| (d.0 - mean).powi(2)).sum::<f64>() / m;
    let mse = draws.iter().map(|d| (d.0 - target).powi(2)).sum::<f64>() / m;
    let covered = draws.iter().filter(|d| covers(d.0, d.1, z, target)).count();
    StatisticSummary {
        statistic,
        evaluated: draws.len() as u64,
        failures: (attempted - draws.len()) as u64,
        mean,
        variance,
        rmse: mse.sqrt(),
        coverage: covered as f64 / m,
        mean_se: draws.iter().map(|d| d.1.max(0.0).sqrt()).sum::<f64>() / m,
        mean_s2: draws.iter().map(|d| d.1).sum::<f64>() / m,
        draws: keep.then(|| draws.iter().map(|d| d.0).collect()),
    }
}

/// `B` random assignments of one science table; coverage is measured against its SATE.
///
/// Estimator failures (rank deficiency and the like) are counted per
/// statistic rather than aborting the run.
pub fn run_monte_carlo(
    sample: &PotentialOutcomeSample,
    randomizations: usize,
    options: &RandomizationOptions,
    rng: &mut Substream,
    keep_draws: bool,
) -> Result<RandomizationSummary> {
    if randomizations == 0 {
        return Err(Error::Config(
            "at least one randomization is required".into(),
        ));
    }
    let z = critical_value(options.alpha)?;
    let blocks = blocks_for(sample, options)?;
    if blocks.is_none() && options.statistics.iter().any(|s| s.needs_design()) {
        return Err(Error::TooFewPairs {
            n: sample.n(),
            required: options.f.output_dim(sample.covariates())?
                + options.g.output_dim(sample.covariates())?
                + 1,
        });
    }
    let wanted = wanted_mask(&options.statistics);
    let mut per_stat: [Vec<(f64, f64)>; 4] = Default::default();
    for _ in 0..randomizations {
        let v = randomize(sample.n(), rng);
        let y = observed_differences(sample, &v)?;
        let est = evaluate(blocks.as_ref(), v, y, &wanted, options.flavor);
        for (slot, value) in per_stat.iter_mut().zip(est) {
            if let Some(value) = value {
                slot.push(value);
            }
        }
    }
    let target = sample.sate();
    let statistics = options
        .statistics
        .iter()
        .map(|&s| {
            summarize(
                s,
                &per_stat[s.index()],
                randomizations,
                target,
                z,
                keep_draws,
            )
        })
        .collect();
    Ok(RandomizationSummary {
        randomizations,
        target,
        alpha: options.alpha,
        statistics,
    })
}

/// `n^-1 sum V_i d_i m_i'`, the off-diagonal block of `n^-1 A'A`.
pub fn off_block(blocks: &CovariateBlocks, v: &[f64]) -> DMatrix<f64> {
    let n = blocks.n() as f64;
    let mut vd = blocks.d.clone();
    for (mut row, s) in vd.row_iter_mut().zip(v) {
        row *= *s;
    }
    vd.transpose() * &blocks.m / n
}

/// Convergence diagnostics of the adjusted design over random assignments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaDiagnostics {
    pub n: usize,
    pub reps: usize,
    /// Per draw: largest absolute entry of the off-diagonal block of `n^-1 A'A`.
    pub off_block_max: Vec<f64>,
    pub median_off_block: f64,
    /// Per draw: `|n^-1 e'(I - H_A)e - 1|`.
    pub intercept_gap: Vec<f64>,
    pub median_intercept_gap: f64,
    /// Largest deviation of the `M` block of `n^-1 A'A` from `n^-1 M'M` (exactly zero in theory).
    pub m_block_deviation: f64,
    /// Largest deviation of the `VD` block from `n^-1 D'D` (exactly zero in theory).
    pub d_block_deviation: f64,
}

/// Tracks the off-diagonal block of `n^-1 A'A` (which should vanish like
/// `n^-1/2`) and `n^-1 e'(I - H_A)e` (which should approach one).
pub fn lemma_diagnostics(
    sample: &PotentialOutcomeSample,
    f: &TransformSpec,
    g: &TransformSpec,
    reps: usize,
    rng: &mut Substream,
) -> Result<LemmaDiagnostics> {
    if reps == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    let blocks = Arc::new(CovariateBlocks::from_covariates(
        sample.covariate_pairs(),
        sample.covariates(),
        f,
        g,
    )?);
    let n = blocks.n();
    let (k_d, k_m) = (blocks.k_d(), blocks.k_m());
    let dtd = blocks.d.transpose() * &blocks.d / n as f64;
    let mtm = blocks.m.transpose() * &blocks.m / n as f64;

    let mut off_block_max = Vec::with_capacity(reps);
    let mut intercept_gap = Vec::with_capacity(reps);
    let mut m_dev: f64 = 0.0;
    let mut d_dev: f64 = 0.0;
    for _ in 0..reps {
        let v = randomize(n, rng);
        let dm = DesignMatrices::assemble(Arc::clone(&blocks), v, vec![0.0; n])?;
        let a = dm.adjusted_regressors();
        let gram = a.transpose() * &a / n as f64;
        off_block_max.push(gram.view((0, k_d), (k_d, k_m)).amax());
        m_dev = m_dev.max((gram.view((k_d, k_d), (k_m, k_m)) - &mtm).amax());
        d_dev = d_dev.max((gram.view((0, 0), (k_d, k_d)) - &dtd).amax());
        intercept_gap.push((ones_residual_norm(&a)? / n as f64 - 1.0).abs());
    }
    Ok(LemmaDiagnostics {
        n,
        reps,
        median_off_block: median(&off_block_max),
        off_block_max,
        median_intercept_gap: median(&intercept_gap),
        intercept_gap,
        m_block_deviation: m_dev,
        d_block_deviation: d_dev,
    })
}

/// Linear-interpolation quantile of order statistics (the "type 7" rule).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if sorted.is_empty() {
        return f64::NAN;
    }
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}
