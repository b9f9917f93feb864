use std::path::{Path, PathBuf};

use paired_adjust::experiment::TransformSpec;
use paired_adjust::{Error, Setting, StudyMode, Target, VarianceFlavor};
use serde::Deserialize;

/// Transform given either as a table (`{kind = "power", degree = 2}`) or as
/// the command-line shorthand (`"power:2"`).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TransformField {
    Spec(TransformSpec),
    Short(String),
}

impl TransformField {
    pub fn resolve(self) -> Result<TransformSpec, Error> {
        match self {
            TransformField::Spec(s) => Ok(s),
            TransformField::Short(s) => s.parse(),
        }
    }
}

/// Defaults read from `--config`. Every field is optional and flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub workers: Option<usize>,
    pub input: Option<PathBuf>,
    pub f: Option<TransformField>,
    pub g: Option<TransformField>,
    pub target: Option<Target>,
    pub flavor: Option<VarianceFlavor>,
    pub setting: Option<Setting>,
    pub n: Option<usize>,
    #[serde(alias = "S")]
    pub samples: Option<usize>,
    #[serde(alias = "B")]
    pub randomizations: Option<usize>,
    pub mode: Option<StudyMode>,
    pub cap: Option<usize>,
    pub bins: Option<usize>,
}

impl FileConfig {
    /// Parses JSON for `.json` files and TOML otherwise.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn transform(field: Option<TransformField>) -> Result<Option<TransformSpec>, Error> {
        field.map(TransformField::resolve).transpose()
    }
}
