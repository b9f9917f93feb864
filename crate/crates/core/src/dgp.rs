//! Synthetic science tables: latent covariates, misspecified observed
//! covariates and potential outcomes under parallel or nonparallel response
//! surfaces.
//!
//! For pair `i` and covariate `p`, `w_i1p ~ N(0, 1)` and
//! `w_i2p ~ N(w_i1p, 1/4)`, independently across `p`. Outcomes are
//! `r_T = mu_T(w) + eps` and `r_C = mu_C(w) + eps` with one standard normal
//! `eps` per unit, shared by both potential outcomes.
//!
//! Draw order from the sample stream: for each pair the 4 normals of `w_i1`
//! then the 4 normals of the `w_i2` perturbation; after all pairs, `eps_i1`
//! and `eps_i2` for each pair in order.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Domain, Substream};

pub const LATENT_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// `mu_T = mu_C`: constant (zero) effects.
    Parallel,
    /// `mu_T != mu_C`: heterogeneous effects.
    Nonparallel,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Parallel => "parallel",
            Setting::Nonparallel => "nonparallel",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Setting::Parallel),
            "nonparallel" => Ok(Setting::Nonparallel),
            _ => Err(Error::Config(format!(
                "unknown setting `{s}` (parallel, nonparallel)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialUnit {
    /// Latent covariates; empty when the table was not generated here.
    pub w: Vec<f64>,
    /// Observed covariates.
    pub x: Vec<f64>,
    pub r_t: f64,
    pub r_c: f64,
}

impl PotentialUnit {
    pub fn effect(&self) -> f64 {
        self.r_t - self.r_c
    }

    pub fn level(&self) -> f64 {
        (self.r_t + self.r_c) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPair {
    pub units: [PotentialUnit; 2],
}

impl PotentialPair {
    /// `Delta_i`, the average of the two unit effects.
    pub fn effect(&self) -> f64 {
        (self.units[0].effect() + self.units[1].effect()) / 2.0
    }

    /// `l_i1 - l_i2`.
    pub fn level_difference(&self) -> f64 {
        self.units[0].level() - self.units[1].level()
    }
}

/// Full science table of `n` pairs with its sample average treatment effect.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeSample {
    pairs: Vec<PotentialPair>,
    sate: f64,
    setting: Option<Setting>,
    seed: Option<u64>,
}

impl PotentialOutcomeSample {
    /// Builds a table from explicit potential outcomes; the SATE is the mean
    /// unit effect.
    pub fn from_pairs(pairs: Vec<PotentialPair>) -> Result<Self> {
        let p = pairs.first().map_or(0, |pr| pr.units[0].x.len());
        for pair in &pairs {
            for unit in &pair.units {
                if unit.x.len() != p {
                    return Err(Error::DimensionMismatch {
                        line: 0,
                        expected: p,
                        found: unit.x.len(),
                    });
                }
            }
        }
        let sate = mean_effect(&pairs);
        Ok(Self {
            pairs,
            sate,
            setting: None,
            seed: None,
        })
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn covariates(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.units[0].x.len())
    }

    pub fn pairs(&self) -> &[PotentialPair] {
        &self.pairs
    }

    pub fn sate(&self) -> f64 {
        self.sate
    }

    pub fn setting(&self) -> Option<Setting> {
        self.setting
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn pair_effects(&self) -> Vec<f64> {
        self.pairs.iter().map(PotentialPair::effect).collect()
    }

    pub fn level_differences(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .map(PotentialPair::level_difference)
            .collect()
    }

    /// Observed covariate vectors `(x_i1, x_i2)` per pair.
    pub fn covariate_pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.pairs
            .iter()
            .map(|p| (p.units[0].x.as_slice(), p.units[1].x.as_slice()))
    }

    /// The first `n` pairs as their own table.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let pairs = self.pairs[..n.min(self.n())].to_vec();
        let mut out = Self::from_pairs(pairs)?;
        out.setting = self.setting;
        out.seed = self.seed;
        if let Some(setting) = self.setting {
            if self
                .pairs
                .iter()
                .all(|p| p.units.iter().all(|u| u.w.len() == LATENT_DIM))
            {
                out.sate = surface_sate(&out.pairs, setting);
            }
        }
        Ok(out)
    }
}

fn mean_effect(pairs: &[PotentialPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(PotentialPair::effect).sum::<f64>() / pairs.len() as f64
}

fn latent(unit: &PotentialUnit) -> [f64; LATENT_DIM] {
    [unit.w[0], unit.w[1], unit.w[2], unit.w[3]]
}

fn surface_sate(pairs: &[PotentialPair], setting: Setting) -> f64 {
    let total: f64 = pairs
        .iter()
        .flat_map(|p| p.units.iter())
        .map(|u| {
            let (t, c) = response_surfaces(&latent(u), setting);
            t - c
        })
        .sum();
    total / (2 * pairs.len()) as f64
}

/// Latent covariates `(w_i1, w_i2)` for `n` pairs.
pub fn draw_pair_covariates(n: usize, rng: &mut Substream) -> Vec<[[f64; LATENT_DIM]; 2]> {
    (0..n)
        .map(|_| {
            let mut first = [0.0; LATENT_DIM];
            for v in &mut first {
                *v = rng.standard_normal();
            }
            let mut second = first;
            for v in &mut second {
                *v += 0.5 * rng.standard_normal();
            }
            [first, second]
        })
        .collect()
}

/// Observed covariates as nonlinear functions of the latent ones.
pub fn observe_covariates(w: &[f64; LATENT_DIM]) -> [f64; LATENT_DIM] {
    [
        (w[0] / 2.0).exp(),
        w[1] / (1.0 + w[0].exp()) + 10.0,
        (w[0] * w[2] / 25.0 + 0.6).powi(3),
        (w[1] + w[3] + 20.0).powi(2),
    ]
}

/// `(mu_T(w), mu_C(w))`.
pub fn response_surfaces(w: &[f64; LATENT_DIM], setting: Setting) -> (f64, f64) {
    let treated = 27.4 * w[0] + 13.7 * (w[1] + w[2] + w[3]);
    let control = match setting {
        Setting::Parallel => treated,
        Setting::Nonparallel => 13.7 * (w[0] + w[1]) + 3.0 * w[2] + 27.4 * w[3],
    };
    (treated, control)
}

/// Generates a table from an explicit stream; `seed` is recorded for provenance only.
pub fn generate_sample_from(
    n: usize,
    setting: Setting,
    rng: &mut Substream,
    seed: Option<u64>,
) -> PotentialOutcomeSample {
    let latent = draw_pair_covariates(n, rng);
    let mut pairs = Vec::with_capacity(n);
    for w_pair in &latent {
        let units = w_pair.map(|w| {
            let (mu_t, mu_c) = response_surfaces(&w, setting);
            (w, mu_t, mu_c)
        });
        let eps = [rng.standard_normal(), rng.standard_normal()];
        let make = |j: usize| {
            let (w, mu_t, mu_c) = units[j];
            PotentialUnit {
                w: w.to_vec(),
                x: observe_covariates(&w).to_vec(),
                r_t: mu_t + eps[j],
                r_c: mu_c + eps[j],
            }
        };
        pairs.push(PotentialPair {
            units: [make(0), make(1)],
        });
    }
    let sate = if n == 0 {
        0.0
    } else {
        surface_sate(&pairs, setting)
    };
    PotentialOutcomeSample {
        pairs,
        sate,
        setting: Some(setting),
        seed,
    }
}

/// Sample number `index` of the stream family keyed by `seed`.
pub fn generate_indexed(
    n: usize,
    setting: Setting,
    seed: u64,
    index: u64,
) -> PotentialOutcomeSample {
    let mut rng = Substream::new(seed, Domain::Sample, index);
    generate_sample_from(n, setting, &mut rng, Some(seed))
}

/// Reproducible table for `(n, setting, seed)`; identical to sample 0 of a study with that seed.
pub fn generate_sample(n: usize, setting: Setting, seed: u64) -> PotentialOutcomeSample {
    generate_indexed(n, setting, seed, 0)
}

/// Sidecar metadata written next to a generated science table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub n: usize,
    pub setting: Option<Setting>,
    pub seed: Option<u64>,
    pub sate: f64,
}

impl From<&PotentialOutcomeSample> for SampleMeta {
    fn from(s: &PotentialOutcomeSample) -> Self {
        Self {
            n: s.n(),
            setting: s.setting,
            seed: s.seed,
            sate: s.sate,
        }
    }
}

/// Writes `pair,unit,w1..w4,x1..xP,r_t,r_c` (the `w` columns only when present).
pub fn write_science_csv<W: Write>(sample: &PotentialOutcomeSample, writer: W) -> Result<()> {
    let latent = sample.pairs.first().map_or(0, |p| p.units[0].w.len());
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["pair".to_string(), "unit".to_string()];
    header.extend((1..=latent).map(|k| format!("w{k}")));
    header.extend((1..=sample.covariates()).map(|k| format!("x{k}")));
    header.extend(["r_t".to_string(), "r_c".to_string()]);
    wtr.write_record(&header)?;
    for (i, pair) in sample.pairs.iter().enumerate() {
        for (j, unit) in pair.units.iter().enumerate() {
            let mut row = vec![(i + 1).to_string(), (j + 1).to_string()];
            row.extend(unit.w.iter().map(f64::to_string));
            row.extend(unit.x.iter().map(f64::to_string));
            row.push(unit.r_t.to_string());
            row.push(unit.r_c.to_string());
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a science table. Required columns: `pair`, `unit`, `r_t`, `r_c`;
/// columns `w1..` and `x1..` are optional. The SATE is recomputed from the
/// potential outcomes.
pub fn load_science_csv<R: Read>(reader: R) -> Result<PotentialOutcomeSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MalformedRow {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let (pair_col, unit_col, rt_col, rc_col) =
        (find("pair")?, find("unit")?, find("r_t")?, find("r_c")?);
    let numbered = |prefix: char| -> Vec<usize> {
        let mut cols = Vec::new();
        while let Some(pos) = headers
            .iter()
            .position(|h| h == format!("{prefix}{}", cols.len() + 1))
        {
            cols.push(pos);
        }
        cols
    };
    let (w_cols, x_cols) = (numbered('w'), numbered('x'));

    let mut order = Vec::new();
    let mut slots: HashMap<i64, [Option<PotentialUnit>; 2]> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            let value: f64 = raw.parse().map_err(|_| Error::MalformedRow {
                line,
                message: format!("cannot parse `{raw}` in column `{name}`"),
            })?;
            if value.is_finite() {
                Ok(value)
            } else {
                Err(Error::MissingValue {
                    line,
                    column: name.to_string(),
                })
            }
        };
        let pair: i64 = record[pair_col].parse().map_err(|_| Error::MalformedRow {
            line,
            message: format!("bad pair id `{}`", &record[pair_col]),
        })?;
        let unit: usize = match &record[unit_col] {
            "1" => 0,
            "2" => 1,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    message: format!("unit must be 1 or 2, found `{other}`"),
                })
            }
        };
        let w = w_cols
            .iter()
            .map(|&c| field(c, &headers[c]))
            .collect::<Result<Vec<_>>>()?;
        let x = x_cols
            .iter()
            .map(|&c| field(c, &headers[c]))
            .collect::<Result<Vec<_>>>()?;
        let entry = slots.entry(pair).or_insert_with(|| {
            order.push(pair);
            [None, None]
        });
        if entry[unit].is_some() {
            return Err(Error::PairViolation {
                pair,
                message: format!("unit {} listed more than once", unit + 1),
            });
        }
        entry[unit] = Some(PotentialUnit {
            w,
            x,
            r_t: field(rt_col, "r_t")?,
            r_c: field(rc_col, "r_c")?,
        });
    }
    let mut pairs = Vec::with_capacity(order.len());
    for id in order {
        match slots.remove(&id) {
            Some([Some(a), Some(b)]) => pairs.push(PotentialPair { units: [a, b] }),
            _ => {
                return Err(Error::PairViolation {
                    pair: id,
                    message: "expected exactly two units".to_string(),
                })
            }
        }
    }
    PotentialOutcomeSample::from_pairs(pairs)
}
