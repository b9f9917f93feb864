//! Observed paired experiments and the covariate design built from them.
//!
//! A [`PairedExperiment`] holds `n` pairs of units, each unit carrying a
//! covariate vector, its treatment indicator and the observed response. From
//! it [`build_design`] derives the quantities every regression estimator works
//! with:
//!
//! * `D`, the within-pair differences `f(x_i1) - f(x_i2)` (unit 1 minus unit 2),
//! * `M`, the pair averages `(g(x_i1) + g(x_i2)) / 2` centered across pairs,
//! * `V`, the signs `2 z_i1 - 1`,
//! * `Y`, the treated-minus-control response differences,
//! * `VD`, the rows of `D` multiplied by their sign.
//!
//! `D` and `M` do not depend on the assignment, so they live in a shared
//! [`CovariateBlocks`] that randomization studies reuse across assignments.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative singular-value tolerance below which a direction counts as null.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub x: Vec<f64>,
    pub treated: bool,
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub id: i64,
    pub units: [Unit; 2],
}

impl Pair {
    /// `+1` when the first listed unit is treated, `-1` otherwise.
    pub fn sign(&self) -> f64 {
        if self.units[0].treated {
            1.0
        } else {
            -1.0
        }
    }

    /// Treated response minus control response.
    pub fn difference(&self) -> f64 {
        let [a, b] = &self.units;
        if a.treated {
            a.response - b.response
        } else {
            b.response - a.response
        }
    }
}

/// Observed data of a paired randomized experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedExperiment {
    pairs: Vec<Pair>,
    covariates: usize,
}

impl PairedExperiment {
    /// Validates that every pair has exactly one treated unit and that all
    /// covariate vectors share one dimension.
    pub fn new(pairs: Vec<Pair>) -> Result<Self> {
        let covariates = pairs.first().map_or(0, |p| p.units[0].x.len());
        for pair in &pairs {
            let treated = pair.units.iter().filter(|u| u.treated).count();
            if treated != 1 {
                return Err(Error::PairViolation {
                    pair: pair.id,
                    message: format!("{treated} treated units, expected exactly one"),
                });
            }
            for unit in &pair.units {
                if unit.x.len() != covariates {
                    return Err(Error::DimensionMismatch {
                        line: 0,
                        expected: covariates,
                        found: unit.x.len(),
                    });
                }
            }
        }
        Ok(Self { pairs, covariates })
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    /// Covariate dimension `P`.
    pub fn covariates(&self) -> usize {
        self.covariates
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn signs(&self) -> Vec<f64> {
        self.pairs.iter().map(Pair::sign).collect()
    }

    pub fn differences(&self) -> Vec<f64> {
        self.pairs.iter().map(Pair::difference).collect()
    }
}

fn parse_field<T: FromStr>(
    record: &csv::StringRecord,
    index: usize,
    column: &str,
    line: u64,
) -> Result<T> {
    let raw = record.get(index).unwrap_or("");
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
        return Err(Error::MissingValue {
            line,
            column: column.to_string(),
        });
    }
    raw.parse().map_err(|_| Error::MalformedRow {
        line,
        message: format!("cannot parse `{raw}` in column `{column}`"),
    })
}

fn parse_finite(record: &csv::StringRecord, index: usize, column: &str, line: u64) -> Result<f64> {
    let value: f64 = parse_field(record, index, column, line)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::MissingValue {
            line,
            column: column.to_string(),
        })
    }
}

/// Reads an experiment from CSV with header `pair,unit,z,y,x1..xP`.
///
/// Lines starting with `#` are ignored. Pairs keep their order of first
/// appearance; within a pair, units are ordered by the `unit` column.
pub fn load_experiment_csv<R: Read>(reader: R) -> Result<PairedExperiment> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let fixed = ["pair", "unit", "z", "y"];
    if headers.len() < fixed.len() || headers.iter().zip(fixed).any(|(h, want)| h != want) {
        return Err(Error::MalformedRow {
            line: 1,
            message: format!(
                "header must start with pair,unit,z,y; found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let covariates = headers.len() - fixed.len();
    for (k, name) in headers.iter().skip(fixed.len()).enumerate() {
        if name != format!("x{}", k + 1) {
            return Err(Error::MalformedRow {
                line: 1,
                message: format!(
                    "covariate column {} must be named x{}, found `{name}`",
                    k + 1,
                    k + 1
                ),
            });
        }
    }

    let mut order: Vec<i64> = Vec::new();
    let mut slots: HashMap<i64, [Option<Unit>; 2]> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            if record.len() >= fixed.len() {
                return Err(Error::DimensionMismatch {
                    line,
                    expected: covariates,
                    found: record.len() - fixed.len(),
                });
            }
            return Err(Error::MalformedRow {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let pair: i64 = parse_field(&record, 0, "pair", line)?;
        let unit: u8 = parse_field(&record, 1, "unit", line)?;
        let z: u8 = parse_field(&record, 2, "z", line)?;
        let response = parse_finite(&record, 3, "y", line)?;
        if !(unit == 1 || unit == 2) {
            return Err(Error::MalformedRow {
                line,
                message: format!("unit must be 1 or 2, found {unit}"),
            });
        }
        if z > 1 {
            return Err(Error::MalformedRow {
                line,
                message: format!("z must be 0 or 1, found {z}"),
            });
        }
        let x = (0..covariates)
            .map(|k| parse_finite(&record, fixed.len() + k, &headers[fixed.len() + k], line))
            .collect::<Result<Vec<_>>>()?;

        let entry = slots.entry(pair).or_insert_with(|| {
            order.push(pair);
            [None, None]
        });
        let slot = &mut entry[usize::from(unit - 1)];
        if slot.is_some() {
            return Err(Error::PairViolation {
                pair,
                message: format!("unit {unit} listed more than once"),
            });
        }
        *slot = Some(Unit {
            x,
            treated: z == 1,
            response,
        });
    }

    let mut pairs = Vec::with_capacity(order.len());
    for id in order {
        match slots.remove(&id) {
            Some([Some(a), Some(b)]) => pairs.push(Pair { id, units: [a, b] }),
            _ => {
                return Err(Error::PairViolation {
                    pair: id,
                    message: "expected exactly two units".to_string(),
                })
            }
        }
    }
    PairedExperiment::new(pairs)
}

/// Writes an experiment in the format read by [`load_experiment_csv`].
pub fn write_experiment_csv<W: Write>(experiment: &PairedExperiment, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["pair".to_string(), "unit".into(), "z".into(), "y".into()];
    header.extend((1..=experiment.covariates()).map(|k| format!("x{k}")));
    wtr.write_record(&header)?;
    for pair in experiment.pairs() {
        for (j, unit) in pair.units.iter().enumerate() {
            let mut row = vec![
                pair.id.to_string(),
                (j + 1).to_string(),
                u8::from(unit.treated).to_string(),
                unit.response.to_string(),
            ];
            row.extend(unit.x.iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Elementwise function applied to one covariate column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnFn {
    Identity,
    Log,
    Exp,
    Drop,
}

/// Covariate transformation used to build `D` (via `f`) or `M` (via `g`).
///
/// `columns` selects covariates by 1-based index (`x1` is column 1); when
/// absent every column is used. Serialized as e.g. `{"kind":"identity"}` or
/// `{"kind":"power","degree":2}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    Identity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        columns: Option<Vec<usize>>,
    },
    /// Raw powers `x, x^2, ..., x^degree` of each selected column, grouped by column.
    Power {
        degree: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        columns: Option<Vec<usize>>,
    },
    Log {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        columns: Option<Vec<usize>>,
    },
    Exp {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        columns: Option<Vec<usize>>,
    },
    /// One tag per covariate column; `drop` removes the column.
    PerColumn { tags: Vec<ColumnFn> },
}

impl TransformSpec {
    pub fn identity() -> Self {
        Self::Identity { columns: None }
    }

    pub fn power(degree: u32) -> Self {
        Self::Power {
            degree,
            columns: None,
        }
    }

    fn selected(columns: &Option<Vec<usize>>, p: usize) -> Result<Vec<usize>> {
        match columns {
            None => Ok((0..p).collect()),
            Some(cols) => cols
                .iter()
                .map(|&c| {
                    if c == 0 || c > p {
                        Err(Error::InvalidTransform(format!(
                            "column {c} outside 1..={p}"
                        )))
                    } else {
                        Ok(c - 1)
                    }
                })
                .collect(),
        }
    }

    /// Output columns as (source column, function, power), fixed by `self` and `p`.
    fn plan(&self, p: usize) -> Result<Vec<(usize, ColumnFn, u32)>> {
        Ok(match self {
            Self::Identity { columns } => Self::selected(columns, p)?
                .into_iter()
                .map(|c| (c, ColumnFn::Identity, 1))
                .collect(),
            Self::Power { degree, columns } => {
                if *degree == 0 {
                    return Err(Error::InvalidTransform(
                        "power degree must be at least 1".into(),
                    ));
                }
                Self::selected(columns, p)?
                    .into_iter()
                    .flat_map(|c| (1..=*degree).map(move |k| (c, ColumnFn::Identity, k)))
                    .collect()
            }
            Self::Log { columns } => Self::selected(columns, p)?
                .into_iter()
                .map(|c| (c, ColumnFn::Log, 1))
                .collect(),
            Self::Exp { columns } => Self::selected(columns, p)?
                .into_iter()
                .map(|c| (c, ColumnFn::Exp, 1))
                .collect(),
            Self::PerColumn { tags } => {
                if tags.len() != p {
                    return Err(Error::InvalidTransform(format!(
                        "{} column tags for {p} covariates",
                        tags.len()
                    )));
                }
                tags.iter()
                    .enumerate()
                    .filter(|(_, t)| **t != ColumnFn::Drop)
                    .map(|(c, t)| (c, *t, 1))
                    .collect()
            }
        })
    }

    /// Number of output columns for `p` input covariates.
    pub fn output_dim(&self, p: usize) -> Result<usize> {
        Ok(self.plan(p)?.len())
    }

    pub fn labels(&self, p: usize) -> Result<Vec<String>> {
        Ok(self
            .plan(p)?
            .into_iter()
            .map(|(c, func, k)| {
                let base = format!("x{}", c + 1);
                match (func, k) {
                    (ColumnFn::Identity, 1) => base,
                    (ColumnFn::Identity, k) => format!("{base}^{k}"),
                    (ColumnFn::Log, _) => format!("log({base})"),
                    (ColumnFn::Exp, _) => format!("exp({base})"),
                    (ColumnFn::Drop, _) => unreachable!("dropped columns are not planned"),
                }
            })
            .collect())
    }

    /// Applies the transform to one covariate vector.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .plan(x.len())?
            .into_iter()
            .map(|(c, func, k)| match func {
                ColumnFn::Identity if k == 1 => x[c],
                ColumnFn::Identity => x[c].powi(k as i32),
                ColumnFn::Log => x[c].ln(),
                ColumnFn::Exp => x[c].exp(),
                ColumnFn::Drop => unreachable!("dropped columns are not planned"),
            })
            .collect())
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols = |c: &Option<Vec<usize>>| match c {
            None => String::new(),
            Some(v) => format!(
                "@{}",
                v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            ),
        };
        match self {
            Self::Identity { columns } => write!(f, "identity{}", cols(columns)),
            Self::Power { degree, columns } => write!(f, "power:{degree}{}", cols(columns)),
            Self::Log { columns } => write!(f, "log{}", cols(columns)),
            Self::Exp { columns } => write!(f, "exp{}", cols(columns)),
            Self::PerColumn { tags } => {
                let names: Vec<&str> = tags
                    .iter()
                    .map(|t| match t {
                        ColumnFn::Identity => "identity",
                        ColumnFn::Log => "log",
                        ColumnFn::Exp => "exp",
                        ColumnFn::Drop => "drop",
                    })
                    .collect();
                write!(f, "per_column:{}", names.join(","))
            }
        }
    }
}

/// Shorthand: `identity`, `power:2`, `log`, `exp`, each optionally followed by
/// `@1,3` to select columns; or `per_column:identity,log,drop`.
impl FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidTransform(format!("cannot parse transform `{s}`"));
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("per_column:") {
            let tags = rest
                .split(',')
                .map(|t| match t.trim() {
                    "identity" => Ok(ColumnFn::Identity),
                    "log" => Ok(ColumnFn::Log),
                    "exp" => Ok(ColumnFn::Exp),
                    "drop" => Ok(ColumnFn::Drop),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(Self::PerColumn { tags });
        }
        let (head, columns) = match s.split_once('@') {
            None => (s, None),
            Some((head, cols)) => {
                let cols = cols
                    .split(',')
                    .map(|c| c.trim().parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                (head, Some(cols))
            }
        };
        let (name, arg) = match head.split_once(':') {
            None => (head, None),
            Some((name, arg)) => (name, Some(arg)),
        };
        match (name, arg) {
            ("identity", None) => Ok(Self::Identity { columns }),
            ("log", None) => Ok(Self::Log { columns }),
            ("exp", None) => Ok(Self::Exp { columns }),
            ("power", Some(k)) => Ok(Self::Power {
                degree: k.parse().map_err(|_| bad())?,
                columns,
            }),
            _ => Err(bad()),
        }
    }
}

/// Assignment-free covariate blocks `D` (n x K_D) and centered `M` (n x K_M).
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateBlocks {
    pub d: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub d_labels: Vec<String>,
    pub m_labels: Vec<String>,
}

impl CovariateBlocks {
    /// Builds `D` and `M` from per-pair covariate vectors `(x_i1, x_i2)`.
    ///
    /// Fails with [`Error::TooFewPairs`] unless `n > K_D + K_M + 1`.
    pub fn from_covariates<'a, I>(
        pairs: I,
        p: usize,
        f: &TransformSpec,
        g: &TransformSpec,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        let k_d = f.output_dim(p)?;
        let k_m = g.output_dim(p)?;
        let d_labels = f.labels(p)?;
        let m_labels = g.labels(p)?;

        let mut d_rows: Vec<f64> = Vec::new();
        let mut level_rows: Vec<f64> = Vec::new();
        let mut n = 0;
        for (i, (x1, x2)) in pairs.into_iter().enumerate() {
            if x1.len() != p || x2.len() != p {
                return Err(Error::DimensionMismatch {
                    line: 0,
                    expected: p,
                    found: if x1.len() != p { x1.len() } else { x2.len() },
                });
            }
            let (f1, f2) = (f.apply(x1)?, f.apply(x2)?);
            for (k, (a, b)) in f1.iter().zip(&f2).enumerate() {
                let diff = a - b;
                if !(a.is_finite() && b.is_finite() && diff.is_finite()) {
                    return Err(Error::NonFiniteTransform {
                        column: d_labels[k].clone(),
                        pair: i,
                    });
                }
                d_rows.push(diff);
            }
            let (g1, g2) = (g.apply(x1)?, g.apply(x2)?);
            for (k, (a, b)) in g1.iter().zip(&g2).enumerate() {
                let level = (a + b) / 2.0;
                if !(a.is_finite() && b.is_finite() && level.is_finite()) {
                    return Err(Error::NonFiniteTransform {
                        column: m_labels[k].clone(),
                        pair: i,
                    });
                }
                level_rows.push(level);
            }
            n += 1;
        }
        let required = k_d + k_m + 1;
        if n <= required {
            return Err(Error::TooFewPairs { n, required });
        }

        let d = DMatrix::from_row_slice(n, k_d, &d_rows);
        let mut m = DMatrix::from_row_slice(n, k_m, &level_rows);
        for mut col in m.column_iter_mut() {
            // Second pass removes the rounding left by the first.
            for _ in 0..2 {
                let mean = col.sum() / n as f64;
                col.add_scalar_mut(-mean);
            }
        }
        Ok(Self {
            d,
            m,
            d_labels,
            m_labels,
        })
    }

    pub fn from_experiment(
        experiment: &PairedExperiment,
        f: &TransformSpec,
        g: &TransformSpec,
    ) -> Result<Self> {
        Self::from_covariates(
            experiment
                .pairs()
                .iter()
                .map(|p| (p.units[0].x.as_slice(), p.units[1].x.as_slice())),
            experiment.covariates(),
            f,
            g,
        )
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn k_d(&self) -> usize {
        self.d.ncols()
    }

    pub fn k_m(&self) -> usize {
        self.m.ncols()
    }
}

/// Design of one realized assignment: fixed blocks plus `V`, `Y` and `VD`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    blocks: Arc<CovariateBlocks>,
    v: DVector<f64>,
    y: DVector<f64>,
    vd: DMatrix<f64>,
}

impl DesignMatrices {
    /// Combines shared covariate blocks with signs `v` and differences `y`.
    pub fn assemble(blocks: Arc<CovariateBlocks>, v: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = blocks.n();
        for len in [v.len(), y.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(bad) = v.iter().find(|s| s.abs() != 1.0) {
            return Err(Error::Config(format!(
                "sign vector entry {bad} is not +1 or -1"
            )));
        }
        let mut vd = blocks.d.clone();
        for (mut row, s) in vd.row_iter_mut().zip(&v) {
            row *= *s;
        }
        Ok(Self {
            blocks,
            v: DVector::from_vec(v),
            y: DVector::from_vec(y),
            vd,
        })
    }

    pub fn n(&self) -> usize {
        self.blocks.n()
    }

    pub fn k_d(&self) -> usize {
        self.blocks.k_d()
    }

    pub fn k_m(&self) -> usize {
        self.blocks.k_m()
    }

    pub fn blocks(&self) -> &Arc<CovariateBlocks> {
        &self.blocks
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.blocks.d
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.blocks.m
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn vd(&self) -> &DMatrix<f64> {
        &self.vd
    }

    /// `A = [VD | M]`, the non-intercept regressors of the R2 fit.
    pub fn adjusted_regressors(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, self.k_d() + self.k_m());
        a.columns_mut(0, self.k_d()).copy_from(&self.vd);
        a.columns_mut(self.k_d(), self.k_m()).copy_from(self.m());
        a
    }

    pub fn vd_labels(&self) -> Vec<String> {
        self.blocks
            .d_labels
            .iter()
            .map(|l| format!("V*d[{l}]"))
            .collect()
    }

    pub fn m_labels(&self) -> Vec<String> {
        self.blocks
            .m_labels
            .iter()
            .map(|l| format!("m[{l}]"))
            .collect()
    }
}

/// Derives the design matrices of an observed experiment.
pub fn build_design(
    experiment: &PairedExperiment,
    f: &TransformSpec,
    g: &TransformSpec,
) -> Result<DesignMatrices> {
    let blocks = CovariateBlocks::from_experiment(experiment, f, g)?;
    DesignMatrices::assemble(
        Arc::new(blocks),
        experiment.signs(),
        experiment.differences(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnScale {
    pub label: String,
    /// Root mean square of the column.
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignDiagnostics {
    pub rank: usize,
    pub expected_rank: usize,
    pub singular_values: Vec<f64>,
    pub scales: Vec<ColumnScale>,
}

impl DesignDiagnostics {
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.expected_rank
    }
}

/// Numerical rank and column scales of `[e | VD | M]`.
pub fn diagnose_design(dm: &DesignMatrices) -> DesignDiagnostics {
    let n = dm.n();
    let k = 1 + dm.k_d() + dm.k_m();
    let mut full = DMatrix::zeros(n, k);
    full.column_mut(0).fill(1.0);
    full.columns_mut(1, k - 1)
        .copy_from(&dm.adjusted_regressors());

    let mut singular_values: Vec<f64> = full
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let largest = singular_values.first().copied().unwrap_or(0.0);
    let rank = singular_values
        .iter()
        .filter(|&&s| largest > 0.0 && s > RANK_TOLERANCE * largest)
        .count();

    let labels = std::iter::once("(intercept)".to_string())
        .chain(dm.vd_labels())
        .chain(dm.m_labels());
    let scales = labels
        .zip(full.column_iter())
        .map(|(label, col)| ColumnScale {
            label,
            rms: (col.norm_squared() / n as f64).sqrt(),
        })
        .collect();

    DesignDiagnostics {
        rank,
        expected_rank: k,
        singular_values,
        scales,
    }
}

/// Like [`diagnose_design`], but rank deficiency is an error.
pub fn validate_design(dm: &DesignMatrices) -> Result<DesignDiagnostics> {
    let diagnostics = diagnose_design(dm);
    if diagnostics.is_full_rank() {
        Ok(diagnostics)
    } else {
        Err(Error::RankDeficient {
            rank: diagnostics.rank,
            expected: diagnostics.expected_rank,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: &[f64], treated: bool, response: f64) -> Unit {
        Unit {
            x: x.to_vec(),
            treated,
            response,
        }
    }

    /// `(x1, x2, z1, y1, y2)` per pair.
    type Row = ([f64; 1], [f64; 1], bool, f64, f64);

    fn experiment(rows: &[Row]) -> PairedExperiment {
        let pairs = rows
            .iter()
            .enumerate()
            .map(|(i, (x1, x2, first_treated, r1, r2))| Pair {
                id: i as i64 + 1,
                units: [
                    unit(x1, *first_treated, *r1),
                    unit(x2, !*first_treated, *r2),
                ],
            })
            .collect();
        PairedExperiment::new(pairs).unwrap()
    }

    #[test]
    fn loads_smallest_valid_file() {
        let csv = "pair,unit,z,y,x1\n1,1,1,3.5,0.2\n1,2,0,1.0,0.4\n2,1,0,2.0,1.0\n2,2,1,2.5,1.5\n";
        let exp = load_experiment_csv(csv.as_bytes()).unwrap();
        assert_eq!(exp.n(), 2);
        assert_eq!(exp.covariates(), 1);
        assert_eq!(exp.signs(), vec![1.0, -1.0]);
        assert_eq!(exp.differences(), vec![2.5, 0.5]);
    }

    #[test]
    fn units_ordered_by_unit_column_and_pairs_by_first_appearance() {
        let csv = "pair,unit,z,y,x1\n7,2,0,1,5\n3,1,1,4,1\n7,1,1,2,6\n3,2,0,0,2\n";
        let exp = load_experiment_csv(csv.as_bytes()).unwrap();
        let ids: Vec<i64> = exp.pairs().iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![7, 3]);
        assert_eq!(exp.pairs()[0].units[0].x, vec![6.0]);
    }

    #[test]
    fn both_units_treated_is_a_pair_violation() {
        let csv =
            "pair,unit,z,y,x1\n1,1,1,1,0\n1,2,0,1,0\n2,1,0,1,0\n2,2,1,1,0\n3,1,1,1,0\n3,2,1,1,0\n";
        let err = load_experiment_csv(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::PairViolation { pair: 3, .. }), "{err}");
    }

    #[test]
    fn lone_unit_is_a_pair_violation() {
        let csv = "pair,unit,z,y,x1\n1,1,1,1,0\n1,2,0,1,0\n2,1,1,1,0\n";
        assert!(matches!(
            load_experiment_csv(csv.as_bytes()),
            Err(Error::PairViolation { pair: 2, .. })
        ));
    }

    #[test]
    fn ragged_covariates_are_a_dimension_mismatch() {
        let csv = "pair,unit,z,y,x1,x2\n1,1,1,1,0,1\n1,2,0,1,0\n";
        assert!(matches!(
            load_experiment_csv(csv.as_bytes()),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1,
                ..
            })
        ));
    }

    #[test]
    fn unparseable_and_missing_values_are_rejected() {
        let csv = "pair,unit,z,y,x1\n1,1,1,abc,0\n1,2,0,1,0\n";
        assert!(matches!(
            load_experiment_csv(csv.as_bytes()),
            Err(Error::MalformedRow { .. })
        ));
        let csv = "pair,unit,z,y,x1\n1,1,1,NA,0\n1,2,0,1,0\n";
        assert!(matches!(
            load_experiment_csv(csv.as_bytes()),
            Err(Error::MissingValue { .. })
        ));
        let csv = "pair,unit,z,y\n1,1,1\n";
        assert!(matches!(
            load_experiment_csv(csv.as_bytes()),
            Err(Error::MalformedRow { .. })
        ));
    }

    #[test]
    fn identical_covariates_give_zero_difference_row() {
        let exp = experiment(&[
            ([2.0], [2.0], true, 1.0, 0.0),
            ([1.0], [3.0], false, 1.0, 0.0),
            ([0.5], [4.0], true, 2.0, 1.0),
            ([1.5], [0.0], true, 0.0, 1.0),
        ]);
        let dm =
            build_design(&exp, &TransformSpec::identity(), &TransformSpec::identity()).unwrap();
        assert_eq!(dm.d()[(0, 0)], 0.0);
        assert_eq!(dm.d()[(1, 0)], -2.0);
        assert_eq!(dm.vd()[(1, 0)], 2.0);
    }

    #[test]
    fn power_expansion_of_scalar_covariate_has_two_columns() {
        let f = TransformSpec::power(2);
        assert_eq!(f.output_dim(1).unwrap(), 2);
        assert_eq!(f.labels(1).unwrap(), vec!["x1", "x1^2"]);
        assert_eq!(f.apply(&[3.0]).unwrap(), vec![3.0, 9.0]);
        let exp = experiment(&[
            ([3.0], [1.0], true, 0.0, 0.0),
            ([2.0], [2.5], true, 0.0, 0.0),
            ([0.0], [1.0], false, 0.0, 0.0),
            ([1.0], [4.0], true, 0.0, 0.0),
            ([2.0], [1.0], false, 0.0, 0.0),
        ]);
        let blocks = CovariateBlocks::from_experiment(
            &exp,
            &f,
            &TransformSpec::Identity {
                columns: Some(vec![]),
            },
        )
        .unwrap();
        assert_eq!(blocks.k_d(), 2);
        assert_eq!(
            blocks.d.row(0).iter().copied().collect::<Vec<_>>(),
            vec![2.0, 8.0]
        );
    }

    #[test]
    fn pair_levels_are_centered() {
        let exp = experiment(&[
            ([1.0], [1.0], true, 0.0, 0.0),
            ([2.0], [2.0], true, 0.0, 0.0),
            ([3.0], [3.0], true, 0.0, 0.0),
        ]);
        let none = TransformSpec::Identity {
            columns: Some(vec![]),
        };
        let blocks =
            CovariateBlocks::from_experiment(&exp, &none, &TransformSpec::identity()).unwrap();
        assert_eq!(
            blocks.m.column(0).iter().copied().collect::<Vec<_>>(),
            vec![-1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn too_few_pairs_rejected() {
        let exp = experiment(&[
            ([1.0], [0.0], true, 0.0, 0.0),
            ([2.0], [0.0], true, 0.0, 0.0),
            ([3.0], [1.0], true, 0.0, 0.0),
        ]);
        let id = TransformSpec::identity();
        assert!(matches!(
            build_design(&exp, &id, &id),
            Err(Error::TooFewPairs { n: 3, required: 3 })
        ));
    }

    #[test]
    fn log_of_nonpositive_is_non_finite() {
        let exp = experiment(&[
            ([1.0], [0.0], true, 0.0, 0.0),
            ([2.0], [1.0], true, 0.0, 0.0),
            ([3.0], [1.0], true, 0.0, 0.0),
            ([3.0], [2.0], true, 0.0, 0.0),
        ]);
        let log = TransformSpec::Log { columns: None };
        assert!(matches!(
            build_design(&exp, &log, &TransformSpec::identity()),
            Err(Error::NonFiniteTransform { pair: 0, .. })
        ));
        let exp_big = TransformSpec::Exp { columns: None };
        let huge = experiment(&[
            ([1000.0], [0.0], true, 0.0, 0.0),
            ([2.0], [1.0], true, 0.0, 0.0),
            ([3.0], [1.0], true, 0.0, 0.0),
            ([3.0], [2.0], true, 0.0, 0.0),
        ]);
        assert!(matches!(
            build_design(&huge, &exp_big, &TransformSpec::identity()),
            Err(Error::NonFiniteTransform { .. })
        ));
    }

    #[test]
    fn transform_serialization_and_shorthand() {
        let spec: TransformSpec = serde_json::from_str(r#"{"kind":"power","degree":2}"#).unwrap();
        assert_eq!(spec, TransformSpec::power(2));
        let spec: TransformSpec = serde_json::from_str(r#"{"kind":"identity"}"#).unwrap();
        assert_eq!(spec, TransformSpec::identity());
        assert_eq!(
            serde_json::to_string(&TransformSpec::power(3)).unwrap(),
            r#"{"kind":"power","degree":3}"#
        );
        for text in [
            "identity",
            "power:2",
            "log@1,3",
            "exp",
            "per_column:identity,log,drop",
        ] {
            let parsed: TransformSpec = text.parse().unwrap();
            assert_eq!(parsed.to_string(), text);
        }
        assert!("power".parse::<TransformSpec>().is_err());
        assert!("cube".parse::<TransformSpec>().is_err());
        let dims = "per_column:identity,drop,exp"
            .parse::<TransformSpec>()
            .unwrap();
        assert_eq!(dims.output_dim(3).unwrap(), 2);
        assert!(dims.output_dim(2).is_err());
        assert!("identity@4"
            .parse::<TransformSpec>()
            .unwrap()
            .output_dim(3)
            .is_err());
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let exp = experiment(&[
            ([1.0], [0.0], true, 1.0, 0.0),
            ([2.0], [0.5], false, 2.0, 0.0),
            ([3.0], [1.0], true, 0.0, 1.0),
            ([3.0], [2.5], true, 1.0, 3.0),
            ([0.5], [2.0], false, 1.0, 2.0),
        ]);
        let dup = TransformSpec::Identity {
            columns: Some(vec![1, 1]),
        };
        let none = TransformSpec::Identity {
            columns: Some(vec![]),
        };
        let dm = build_design(&exp, &dup, &none).unwrap();
        assert!(matches!(
            validate_design(&dm),
            Err(Error::RankDeficient {
                rank: 2,
                expected: 3
            })
        ));
    }

    #[test]
    fn constant_level_column_is_rank_deficient() {
        let exp = experiment(&[
            ([1.0], [3.0], true, 1.0, 0.0),
            ([2.0], [2.0], false, 2.0, 0.0),
            ([3.0], [1.0], true, 0.0, 1.0),
            ([0.0], [4.0], true, 1.0, 3.0),
            ([4.0], [0.0], false, 1.0, 2.0),
        ]);
        let none = TransformSpec::Identity {
            columns: Some(vec![]),
        };
        let dm = build_design(&exp, &none, &TransformSpec::identity()).unwrap();
        assert!(dm.m().iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(
            validate_design(&dm),
            Err(Error::RankDeficient { .. })
        ));
    }
}
