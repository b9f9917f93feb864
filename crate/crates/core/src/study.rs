//! Simulation studies over many generated samples.
//!
//! A SATE study draws `S` samples and `B` assignments per sample, and summarizes
//! per-sample coverage, standard-error ratios and RMSE ratios by their median
//! and 2.5/97.5% quantiles across samples. A PATE study draws one assignment
//! per sample and scores every interval against the population effect.
//!
//! Sample `s` uses the sample-domain substream `s` for its science table and
//! the assignment-domain substream `s` for its assignments, so reports do not
//! depend on the number of worker threads.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{generate_indexed, Setting};
use crate::error::{Error, Result};
use crate::estimators::VarianceFlavor;
use crate::experiment::TransformSpec;
use crate::randomization::{quantile, run_monte_carlo, RandomizationOptions, Statistic};
use crate::rng::{Domain, Substream};

/// Mean effect of the generating process over the latent law, the PATE target.
pub const POPULATION_EFFECT: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyMode {
    SateStudy,
    PateStudy,
}

impl std::fmt::Display for StudyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StudyMode::SateStudy => "sate-study",
            StudyMode::PateStudy => "pate-study",
        })
    }
}

impl std::str::FromStr for StudyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sate-study" | "sate" => Ok(StudyMode::SateStudy),
            "pate-study" | "pate" => Ok(StudyMode::PateStudy),
            other => Err(Error::Config(format!("unknown study mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub mode: StudyMode,
    pub setting: Setting,
    pub n: usize,
    pub samples: usize,
    /// Assignments per sample; ignored by PATE studies, which use one.
    pub randomizations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub f: TransformSpec,
    pub g: TransformSpec,
    pub flavor: VarianceFlavor,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            mode: StudyMode::SateStudy,
            setting: Setting::Nonparallel,
            n: 100,
            samples: 200,
            randomizations: 200,
            alpha: 0.05,
            seed: 0,
            f: TransformSpec::identity(),
            g: TransformSpec::identity(),
            flavor: VarianceFlavor::Classical,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.samples == 0 {
            return Err(Error::Config("n and samples must be at least 1".into()));
        }
        if self.mode == StudyMode::SateStudy && self.randomizations == 0 {
            return Err(Error::Config("randomizations must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.flavor == VarianceFlavor::SuperpopCorrected {
            return Err(Error::Config(
                "the corrected variance is reported alongside, not selected as a flavor".into(),
            ));
        }
        let k = self.f.output_dim(crate::dgp::LATENT_DIM)?
            + self.g.output_dim(crate::dgp::LATENT_DIM)?;
        if self.n <= k + 1 {
            return Err(Error::TooFewPairs {
                n: self.n,
                required: k + 2,
            });
        }
        Ok(())
    }

    fn options(&self, statistics: Vec<Statistic>) -> RandomizationOptions {
        RandomizationOptions {
            f: self.f.clone(),
            g: self.g.clone(),
            alpha: self.alpha,
            flavor: self.flavor,
            statistics,
        }
    }
}

/// Median and 2.5/97.5% quantiles of a per-sample metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileRow {
    pub metric: String,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    /// Distribution-free standard error of the median.
    pub mc_se: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueRow {
    pub metric: String,
    pub value: f64,
    pub mc_se: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyTable {
    Sate { rows: Vec<QuantileRow> },
    Pate { rows: Vec<ValueRow> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub table: StudyTable,
    /// Estimator failures per statistic, summed over samples and assignments.
    pub failures: BTreeMap<String, u64>,
    /// Point estimates for histogramming: the first sample's assignments in a
    /// SATE study, one per sample in a PATE study.
    #[serde(skip)]
    pub draws: BTreeMap<Statistic, Vec<f64>>,
}

impl StudyReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match &self.table {
            StudyTable::Sate { rows } => rows.iter().find(|r| r.metric == name).map(|r| r.median),
            StudyTable::Pate { rows } => rows.iter().find(|r| r.metric == name).map(|r| r.value),
        }
    }

    pub fn quantile_row(&self, name: &str) -> Option<&QuantileRow> {
        match &self.table {
            StudyTable::Sate { rows } => rows.iter().find(|r| r.metric == name),
            StudyTable::Pate { .. } => None,
        }
    }
}

/// Runs a study on `workers` threads (`None` uses rayon's default).
pub fn run_study(config: &StudyConfig, workers: Option<usize>) -> Result<StudyReport> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match config.mode {
        StudyMode::SateStudy => sate_study(config),
        StudyMode::PateStudy => pate_study(config),
    })
}

struct SateSample {
    coverage: [f64; 3],
    mean_se: [f64; 3],
    rmse: [f64; 3],
    failures: [u64; 3],
    draws: Option<BTreeMap<Statistic, Vec<f64>>>,
}

const SATE_STATS: [Statistic; 3] = [Statistic::C, Statistic::R1, Statistic::R2];

fn sate_study(config: &StudyConfig) -> Result<StudyReport> {
    let options = config.options(SATE_STATS.to_vec());
    let per_sample: Vec<SateSample> = (0..config.samples)
        .into_par_iter()
        .map(|s| -> Result<SateSample> {
            let sample = generate_indexed(config.n, config.setting, config.seed, s as u64);
            let mut rng = Substream::new(config.seed, Domain::Assignment, s as u64);
            let keep = s == 0;
            let summary =
                run_monte_carlo(&sample, config.randomizations, &options, &mut rng, keep)?;
            let mut out = SateSample {
                coverage: [f64::NAN; 3],
                mean_se: [f64::NAN; 3],
                rmse: [f64::NAN; 3],
                failures: [0; 3],
                draws: keep.then(BTreeMap::new),
            };
            for (i, stat) in SATE_STATS.iter().enumerate() {
                let st = summary.get(*stat).expect("requested statistic");
                out.failures[i] = st.failures;
                if st.evaluated > 0 {
                    out.coverage[i] = st.coverage;
                    out.mean_se[i] = st.mean_se;
                    out.rmse[i] = st.rmse;
                }
                if let (Some(map), Some(d)) = (out.draws.as_mut(), &st.draws) {
                    map.insert(*stat, d.clone());
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let column = |f: &dyn Fn(&SateSample) -> f64| -> Vec<f64> {
        per_sample.iter().map(f).filter(|v| v.is_finite()).collect()
    };
    let mut rows = Vec::new();
    for (i, stat) in SATE_STATS.iter().enumerate() {
        rows.push(quantile_row(
            format!("coverage_{}", stat.label()),
            &column(&|s| s.coverage[i]),
        ));
    }
    for (num, den) in [(1, 0), (2, 0), (2, 1)] {
        rows.push(quantile_row(
            format!(
                "se_ratio_{}:{}",
                SATE_STATS[num].label(),
                SATE_STATS[den].label()
            ),
            &column(&|s| s.mean_se[num] / s.mean_se[den]),
        ));
    }
    for (num, den) in [(1, 0), (2, 0)] {
        rows.push(quantile_row(
            format!(
                "rmse_ratio_{}:{}",
                SATE_STATS[num].label(),
                SATE_STATS[den].label()
            ),
            &column(&|s| s.rmse[num] / s.rmse[den]),
        ));
    }
    let failures = SATE_STATS
        .iter()
        .enumerate()
        .map(|(i, st)| {
            (
                st.label().to_string(),
                per_sample.iter().map(|s| s.failures[i]).sum(),
            )
        })
        .collect();
    let draws = per_sample
        .into_iter()
        .next()
        .and_then(|s| s.draws)
        .unwrap_or_default();
    Ok(StudyReport {
        config: config.clone(),
        table: StudyTable::Sate { rows },
        failures,
        draws,
    })
}

fn quantile_row(metric: String, values: &[f64]) -> QuantileRow {
    QuantileRow {
        median: quantile(values, 0.5),
        q025: quantile(values, 0.025),
        q975: quantile(values, 0.975),
        mc_se: median_standard_error(values),
        samples: values.len(),
        metric,
    }
}

/// Half-width of the order-statistic 95% interval for the median, divided by 1.96.
fn median_standard_error(values: &[f64]) -> f64 {
    let m = values.len();
    if m < 2 {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let half = 1.96 * (m as f64).sqrt() / 2.0;
    let lo = ((m as f64 / 2.0 - half).floor().max(0.0)) as usize;
    let hi = ((m as f64 / 2.0 + half).ceil() as usize).min(m - 1);
    (sorted[hi] - sorted[lo]) / (2.0 * 1.96)
}

fn pate_study(config: &StudyConfig) -> Result<StudyReport> {
    let options = config.options(Statistic::ALL.to_vec());
    let per_sample: Vec<[Option<(f64, f64)>; 4]> = (0..config.samples)
        .into_par_iter()
        .map(|s| -> Result<[Option<(f64, f64)>; 4]> {
            let sample = generate_indexed(config.n, config.setting, config.seed, s as u64);
            let mut rng = Substream::new(config.seed, Domain::Assignment, s as u64);
            let summary = run_monte_carlo(&sample, 1, &options, &mut rng, true)?;
            let mut out = [None; 4];
            for (slot, stat) in out.iter_mut().zip(Statistic::ALL) {
                let st = summary.get(stat).expect("requested statistic");
                if let Some(d) = &st.draws {
                    if let Some(&tau) = d.first() {
                        *slot = Some((tau, st.mean_s2));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let z = crate::estimators::critical_value(config.alpha)?;
    let series = |stat: Statistic| -> Vec<(f64, f64)> {
        per_sample.iter().filter_map(|s| s[stat as usize]).collect()
    };
    let mut rows = Vec::new();
    for stat in Statistic::ALL {
        let xs = series(stat);
        let covered = xs
            .iter()
            .filter(|(t, s2)| {
                let h = z * s2.max(0.0).sqrt();
                t - h <= POPULATION_EFFECT && POPULATION_EFFECT <= t + h
            })
            .count();
        let p = covered as f64 / xs.len() as f64;
        rows.push(ValueRow {
            metric: format!("coverage_{}", stat.label()),
            value: p,
            mc_se: (p * (1.0 - p) / xs.len() as f64).sqrt(),
            samples: xs.len(),
        });
    }
    for stat in Statistic::ALL {
        let xs = series(stat);
        let se: Vec<f64> = xs.iter().map(|x| x.1.max(0.0).sqrt()).collect();
        let tau: Vec<f64> = xs.iter().map(|x| x.0).collect();
        let (value, mc_se) = mean_over_sd(&se, &tau);
        rows.push(ValueRow {
            metric: format!("se_sd_ratio_{}", stat.label()),
            value,
            mc_se,
            samples: xs.len(),
        });
    }
    for (num, den) in [
        (Statistic::R2, Statistic::R1),
        (Statistic::R1, Statistic::C),
        (Statistic::R2, Statistic::C),
    ] {
        let paired: Vec<(f64, f64)> = per_sample
            .iter()
            .filter_map(|s| Some((s[num as usize]?.0, s[den as usize]?.0)))
            .collect();
        let (value, mc_se) = sd_ratio(&paired);
        rows.push(ValueRow {
            metric: format!("sd_ratio_{}:{}", num.label(), den.label()),
            value,
            mc_se,
            samples: paired.len(),
        });
    }
    let failures = Statistic::ALL
        .iter()
        .map(|&st| {
            let missing = per_sample
                .iter()
                .filter(|s| s[st as usize].is_none())
                .count();
            (st.label().to_string(), missing as u64)
        })
        .collect();
    let draws = Statistic::ALL
        .iter()
        .map(|&st| (st, series(st).into_iter().map(|x| x.0).collect()))
        .collect();
    Ok(StudyReport {
        config: config.clone(),
        table: StudyTable::Pate { rows },
        failures,
        draws,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// `mean(se) / sd(tau)` with a delta-method standard error from the
/// influence function of its logarithm.
fn mean_over_sd(se: &[f64], tau: &[f64]) -> (f64, f64) {
    let (a, t) = (mean(se), mean(tau));
    let v = var(tau);
    let ratio = a / v.sqrt();
    let infl: Vec<f64> = se
        .iter()
        .zip(tau)
        .map(|(s, x)| (s - a) / a - 0.5 * ((x - t).powi(2) - v) / v)
        .collect();
    (ratio, ratio * (var(&infl) / se.len() as f64).sqrt())
}

/// `sd(a) / sd(b)` over paired draws, with a delta-method standard error.
fn sd_ratio(pairs: &[(f64, f64)]) -> (f64, f64) {
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (ma, mb, va, vb) = (mean(&a), mean(&b), var(&a), var(&b));
    let ratio = (va / vb).sqrt();
    let infl: Vec<f64> = pairs
        .iter()
        .map(|(x, y)| 0.5 * (((x - ma).powi(2) - va) / va - ((y - mb).powi(2) - vb) / vb))
        .collect();
    (ratio, ratio * (var(&infl) / pairs.len() as f64).sqrt())
}

/// Writes the table as CSV, preceded by `# `-prefixed provenance lines.
pub fn write_report_csv<W: Write>(
    report: &StudyReport,
    provenance: &[String],
    mut writer: W,
) -> Result<()> {
    for line in provenance {
        writeln!(writer, "# {line}")?;
    }
    let mut csv = csv::Writer::from_writer(writer);
    match &report.table {
        StudyTable::Sate { rows } => {
            csv.write_record(["metric", "median", "q025", "q975", "mc_se", "samples"])?;
            for r in rows {
                csv.write_record([
                    r.metric.clone(),
                    fmt_f64(r.median),
                    fmt_f64(r.q025),
                    fmt_f64(r.q975),
                    fmt_f64(r.mc_se),
                    r.samples.to_string(),
                ])?;
            }
        }
        StudyTable::Pate { rows } => {
            csv.write_record(["metric", "value", "mc_se", "samples"])?;
            for r in rows {
                csv.write_record([
                    r.metric.clone(),
                    fmt_f64(r.value),
                    fmt_f64(r.mc_se),
                    r.samples.to_string(),
                ])?;
            }
        }
    }
    csv.flush()?;
    Ok(())
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.6}")
}

/// Equal-width bin of a histogram.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width histogram over the finite values; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<Bin> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut out: Vec<Bin> = (0..bins)
        .map(|i| Bin {
            lower: lo + i as f64 * width,
            upper: lo + (i + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for v in finite {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

/// Histogram CSV with one block of rows per statistic.
pub fn write_histogram_csv<W: Write>(
    draws: &BTreeMap<Statistic, Vec<f64>>,
    bins: usize,
    provenance: &[String],
    mut writer: W,
) -> Result<()> {
    for line in provenance {
        writeln!(writer, "# {line}")?;
    }
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["estimator", "lower", "upper", "count"])?;
    for (stat, values) in draws {
        for b in histogram(values, bins) {
            csv.write_record([
                stat.label().to_string(),
                fmt_f64(b.lower),
                fmt_f64(b.upper),
                b.count.to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}
