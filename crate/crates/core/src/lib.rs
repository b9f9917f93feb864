//! Regression-assisted estimation of average treatment effects in paired
//! randomized experiments.
//!
//! The crate covers the observed-data path (CSV ingestion, covariate
//! transforms, design construction, the C/R1/R2 estimators and their
//! variance estimates) and the simulation path (a synthetic science-table
//! generator, exact enumeration of the randomization distribution for small
//! tables, Monte Carlo randomization studies).
//!
//! ```
//! use paired_adjust::{build_design, estimate_all, generate_sample, reveal, Setting,
//!     Substream, Domain, TransformSpec, VarianceFlavor, randomize};
//!
//! let sample = generate_sample(40, Setting::Nonparallel, 1);
//! let v = randomize(40, &mut Substream::new(1, Domain::Assignment, 0));
//! let (experiment, _) = reveal(&sample, &v).unwrap();
//! let id = TransformSpec::identity();
//! let dm = build_design(&experiment, &id, &id).unwrap();
//! let set = estimate_all(&dm, VarianceFlavor::Classical).unwrap();
//! assert!(set.r2.s2 <= set.r2p.s2);
//! ```

pub mod dgp;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod normal;
pub mod ols;
pub mod randomization;
pub mod rng;
pub mod study;

pub use dgp::{
    generate_indexed, generate_sample, load_science_csv, write_science_csv, PotentialOutcomeSample,
    SampleMeta, Setting,
};
pub use error::{Error, Result};
pub use estimators::{
    confidence_interval, estimate_all, estimate_classical, estimate_r1, estimate_r1_with,
    estimate_r2, estimate_r2_with, superpop_correct, EstimateJson, EstimateReport, EstimateSet,
    EstimatorId, Target, VarianceFlavor,
};
pub use experiment::{
    build_design, diagnose_design, load_experiment_csv, validate_design, write_experiment_csv,
    CovariateBlocks, DesignDiagnostics, DesignMatrices, PairedExperiment, TransformSpec,
    RANK_TOLERANCE,
};
pub use ols::{least_squares, FitResult, HcVariant};
pub use randomization::{
    enumerate_exact, lemma_diagnostics, randomize, reveal, run_monte_carlo, ExactDistribution,
    RandomizationOptions, RandomizationSummary, Statistic,
};
pub use rng::{Domain, Substream};
pub use study::{run_study, StudyConfig, StudyMode, StudyReport};
