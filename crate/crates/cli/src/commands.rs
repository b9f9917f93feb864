use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use paired_adjust::estimators::{critical_value, EstimateJson};
use paired_adjust::experiment::TransformSpec;
use paired_adjust::randomization::{RandomizationOptions, Statistic, DEFAULT_ENUMERATION_CAP};
use paired_adjust::study::{write_histogram_csv, write_report_csv};
use paired_adjust::{
    build_design, enumerate_exact, estimate_all, generate_sample, load_experiment_csv,
    load_science_csv, randomize, reveal, run_study, validate_design, write_experiment_csv,
    write_science_csv, Domain, Error, ExactDistribution, SampleMeta, Setting, StudyConfig,
    StudyMode, Substream, Target, VarianceFlavor,
};
use serde::Serialize;

use crate::args::{AnalyzeArgs, Common, EnumerateArgs, GenerateArgs, SimulateArgs};
use crate::config::FileConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const DEFAULT_ALPHA: f64 = 0.05;
const DEFAULT_BINS: usize = 30;

/// Every JSON artifact carries the tool version, the resolved configuration and the seed.
#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    config: &'a C,
    result: R,
}

fn provenance<C: Serialize>(
    command: &str,
    config: &C,
    seed: Option<u64>,
) -> Result<Vec<String>, Error> {
    Ok(vec![
        format!("paired-adjust {VERSION} {command}"),
        format!("config {}", to_json_line(config)?),
        format!(
            "seed {}",
            seed.map_or("none".to_string(), |s| s.to_string())
        ),
    ])
}

fn to_json_line<T: Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<File, Error> {
    File::open(path).map_err(|e| Error::MalformedRow {
        line: 0,
        message: format!("cannot open {}: {e}", path.display()),
    })
}

fn emit<C: Serialize, R: Serialize>(
    common: &Common,
    command: &str,
    seed: Option<u64>,
    config: &C,
    result: R,
) -> Result<(), Error> {
    let envelope = Envelope {
        tool: "paired-adjust",
        version: VERSION,
        command,
        seed,
        config,
        result,
    };
    let mut text =
        serde_json::to_string_pretty(&envelope).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    match &common.out {
        Some(path) => create(path)?.write_all(text.as_bytes())?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn alpha(common: &Common, file: &FileConfig) -> Result<f64, Error> {
    let alpha = common.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadAlpha(alpha));
    }
    Ok(alpha)
}

fn transform(
    flag: &Option<TransformSpec>,
    file: &mut Option<crate::config::TransformField>,
) -> Result<TransformSpec, Error> {
    let from_file = FileConfig::transform(file.take())?;
    Ok(flag
        .clone()
        .or(from_file)
        .unwrap_or_else(TransformSpec::identity))
}

#[derive(Serialize)]
struct AnalyzeConfig {
    input: PathBuf,
    f: TransformSpec,
    g: TransformSpec,
    target: Target,
    flavor: VarianceFlavor,
    alpha: f64,
}

#[derive(Serialize)]
struct Variances {
    #[serde(rename = "S2_C")]
    c: f64,
    #[serde(rename = "S2_R1")]
    r1: f64,
    #[serde(rename = "S2_R2")]
    r2: f64,
    #[serde(rename = "S2_R2P")]
    r2p: f64,
}

#[derive(Serialize)]
struct DesignSummary {
    n: usize,
    covariates: usize,
    k_d: usize,
    k_m: usize,
    d_labels: Vec<String>,
    m_labels: Vec<String>,
    rank: usize,
    singular_values: Vec<f64>,
}

#[derive(Serialize)]
struct AnalyzeResult {
    estimates: Vec<EstimateJson>,
    variances: Variances,
    /// Which variance the R2 interval uses.
    r2_interval_variance: &'static str,
    design: DesignSummary,
}

pub fn analyze(common: &Common, mut file: FileConfig, args: AnalyzeArgs) -> Result<(), Error> {
    let config = AnalyzeConfig {
        input: args
            .input
            .or(file.input.take())
            .ok_or_else(|| Error::Config("analyze needs --input".into()))?,
        f: transform(&args.f, &mut file.f)?,
        g: transform(&args.g, &mut file.g)?,
        target: args
            .target
            .map(Target::from)
            .or(file.target)
            .unwrap_or_default(),
        flavor: args.flavor.or(file.flavor).unwrap_or_default(),
        alpha: alpha(common, &file)?,
    };
    if config.flavor == VarianceFlavor::SuperpopCorrected {
        return Err(Error::Config(
            "use --target pate for the corrected variance".into(),
        ));
    }
    let experiment = load_experiment_csv(open(&config.input)?)?;
    let dm = build_design(&experiment, &config.f, &config.g)?;
    let diagnostics = validate_design(&dm)?;
    let set = estimate_all(&dm, config.flavor)?;

    let (r2_report, r2_interval_variance) = match config.target {
        Target::Sate => (&set.r2, "S2_R2"),
        Target::Pate => (&set.r2p, "S2_R2P"),
    };
    let estimates = [&set.c, &set.r1, r2_report]
        .into_iter()
        .map(|r| EstimateJson::new(r, config.target, config.alpha))
        .collect::<Result<Vec<_>, _>>()?;
    let seed = common.seed.or(file.seed);

    if let Some(path) = &common.csv {
        let mut w = create(path)?;
        for line in provenance("analyze", &config, seed)? {
            writeln!(w, "# {line}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "estimator",
            "tau_hat",
            "s2",
            "se",
            "ci_lower",
            "ci_upper",
            "dof",
            "variance",
        ])?;
        for (e, variance) in estimates
            .iter()
            .zip(["S2_C", "S2_R1", r2_interval_variance])
        {
            csv.write_record([
                e.estimator.to_string(),
                e.tau_hat.to_string(),
                e.s2.to_string(),
                e.s2.sqrt().to_string(),
                e.ci[0].to_string(),
                e.ci[1].to_string(),
                e.dof.to_string(),
                variance.to_string(),
            ])?;
        }
        csv.flush()?;
    }

    let result = AnalyzeResult {
        variances: Variances {
            c: set.c.s2,
            r1: set.r1.s2,
            r2: set.r2.s2,
            r2p: set.r2p.s2,
        },
        r2_interval_variance,
        design: DesignSummary {
            n: dm.n(),
            covariates: experiment.covariates(),
            k_d: dm.k_d(),
            k_m: dm.k_m(),
            d_labels: dm.vd_labels(),
            m_labels: dm.m_labels(),
            rank: diagnostics.rank,
            singular_values: diagnostics.singular_values,
        },
        estimates,
    };
    emit(common, "analyze", seed, &config, result)
}

#[derive(Serialize)]
struct SimulateResult<'a> {
    table: &'a paired_adjust::study::StudyTable,
    failures: &'a std::collections::BTreeMap<String, u64>,
}

pub fn simulate(common: &Common, mut file: FileConfig, args: SimulateArgs) -> Result<(), Error> {
    let defaults = StudyConfig::default();
    let config = StudyConfig {
        mode: args.mode.or(file.mode).unwrap_or(StudyMode::SateStudy),
        setting: args.setting.or(file.setting).unwrap_or(defaults.setting),
        n: args.n.or(file.n).unwrap_or(defaults.n),
        samples: args.samples.or(file.samples).unwrap_or(defaults.samples),
        randomizations: args
            .randomizations
            .or(file.randomizations)
            .unwrap_or(defaults.randomizations),
        alpha: alpha(common, &file)?,
        seed: common.seed.or(file.seed).unwrap_or(defaults.seed),
        f: transform(&args.f, &mut file.f)?,
        g: transform(&args.g, &mut file.g)?,
        flavor: args.flavor.or(file.flavor).unwrap_or_default(),
    };
    let workers = common.workers.or(file.workers);
    if workers == Some(0) {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let report = run_study(&config, workers)?;
    let lines = provenance("simulate", &config, Some(config.seed))?;
    if let Some(path) = &common.csv {
        write_report_csv(&report, &lines, create(path)?)?;
    }
    if let Some(path) = &args.histogram {
        let bins = args.bins.or(file.bins).unwrap_or(DEFAULT_BINS);
        write_histogram_csv(&report.draws, bins, &lines, create(path)?)?;
    }
    let result = SimulateResult {
        table: &report.table,
        failures: &report.failures,
    };
    emit(common, "simulate", Some(config.seed), &config, result)
}

#[derive(Serialize)]
struct EnumerateConfig {
    input: PathBuf,
    cap: usize,
    f: TransformSpec,
    g: TransformSpec,
    flavor: VarianceFlavor,
    alpha: f64,
}

#[derive(Serialize)]
struct Checks {
    /// `E[tau_hat_C] - SATE`; zero up to rounding.
    mean_c_minus_sate: f64,
    variance_c: f64,
    /// `n^-2 sum (l_i1 - l_i2)^2`.
    variance_c_formula: f64,
    /// `E[S2_C] - var(tau_hat_C)`; non-negative.
    conservative_gap_c: f64,
}

#[derive(Serialize)]
struct Mass {
    value: f64,
    probability: f64,
}

#[derive(Serialize)]
struct EnumerateResult<'a> {
    n: usize,
    assignments: usize,
    sate: f64,
    moments: &'a [paired_adjust::randomization::ExactMoments],
    checks: Checks,
    distribution_c: Vec<Mass>,
}

pub fn enumerate(common: &Common, mut file: FileConfig, args: EnumerateArgs) -> Result<(), Error> {
    let config = EnumerateConfig {
        input: args
            .input
            .or(file.input.take())
            .ok_or_else(|| Error::Config("enumerate needs --input".into()))?,
        cap: args.cap.or(file.cap).unwrap_or(DEFAULT_ENUMERATION_CAP),
        f: transform(&args.f, &mut file.f)?,
        g: transform(&args.g, &mut file.g)?,
        flavor: args.flavor.or(file.flavor).unwrap_or_default(),
        alpha: alpha(common, &file)?,
    };
    critical_value(config.alpha)?;
    let sample = load_science_csv(open(&config.input)?)?;
    let options = RandomizationOptions {
        f: config.f.clone(),
        g: config.g.clone(),
        alpha: config.alpha,
        flavor: config.flavor,
        statistics: Statistic::ALL.to_vec(),
    };
    let exact = enumerate_exact(&sample, &options, config.cap)?;
    let c = exact.moments(Statistic::C).expect("C is always requested");
    let formula = ExactDistribution::classical_variance_formula(&sample);
    let checks = Checks {
        mean_c_minus_sate: c.mean - exact.sate,
        variance_c: c.variance,
        variance_c_formula: formula,
        conservative_gap_c: c.mean_s2 - c.variance,
    };
    let distribution_c = exact
        .distribution(Statistic::C)
        .into_iter()
        .map(|(value, probability)| Mass { value, probability })
        .collect();
    let seed = common.seed.or(file.seed);
    let result = EnumerateResult {
        n: exact.n,
        assignments: exact.records.len(),
        sate: exact.sate,
        moments: &exact.moments,
        checks,
        distribution_c,
    };
    emit(common, "enumerate", seed, &config, result)
}

#[derive(Serialize)]
struct GenerateConfig {
    n: usize,
    setting: Setting,
    seed: u64,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    version: &'static str,
    #[serde(flatten)]
    meta: &'a SampleMeta,
}

pub fn generate(common: &Common, file: FileConfig, args: GenerateArgs) -> Result<(), Error> {
    let config = GenerateConfig {
        n: args.n.or(file.n).unwrap_or(25),
        setting: args
            .setting
            .or(file.setting)
            .unwrap_or(Setting::Nonparallel),
        seed: common.seed.or(file.seed).unwrap_or(0),
    };
    if config.n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    let sample = generate_sample(config.n, config.setting, config.seed);
    let lines = provenance("generate", &config, Some(config.seed))?;
    match &common.out {
        Some(path) => {
            let mut w = create(path)?;
            for line in &lines {
                writeln!(w, "# {line}")?;
            }
            write_science_csv(&sample, w)?;
            let meta = SampleMeta::from(&sample);
            let mut text = serde_json::to_string_pretty(&Sidecar {
                version: VERSION,
                meta: &meta,
            })
            .map_err(|e| Error::Config(e.to_string()))?;
            text.push('\n');
            std::fs::write(path.with_extension("json"), text)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            for line in &lines {
                writeln!(out, "# {line}")?;
            }
            write_science_csv(&sample, out)?;
        }
    }
    if let Some(path) = &args.observed {
        let v = randomize(
            config.n,
            &mut Substream::new(config.seed, Domain::Assignment, 0),
        );
        let (experiment, _) = reveal(&sample, &v)?;
        let mut w = create(path)?;
        for line in &lines {
            writeln!(w, "# {line}")?;
        }
        write_experiment_csv(&experiment, w)?;
    }
    Ok(())
}

/// Exit status for each error class.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::RankDeficient { .. }
        | Error::DegenerateDenominator { .. }
        | Error::LeverageOne { .. } => 3,
        Error::Config(_) | Error::BadAlpha(_) | Error::WrongEstimator(_) => 4,
        Error::TooLarge { .. } => 5,
        _ => 2,
    }
}
