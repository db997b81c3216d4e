use std::fs;
use std::path::{Path, PathBuf};

use rarespan::corpus::{Normalizer, SyntheticParams};
use rarespan::error::{Error, Result};
use rarespan::evaluation::{SweepMethod, TestMode};
use rarespan::retrieval::RetrievalConfig;
use rarespan::sampling::SamplingStrategy;
use rarespan::tagger::CrfConfig;
use serde::Deserialize;

pub const SEED_ENV: &str = "RARESPAN_SEED";

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// JSON Lines corpus.
    Path(PathBuf),
    /// Directory of `.txt` files with `.starts.json` sidecars.
    RawDir {
        dir: PathBuf,
        #[serde(default)]
        normalizer: Normalizer,
    },
    /// Generated per run seed; the params' own `seed` is replaced by it.
    Synthetic(SyntheticParams),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RetrievalSpec {
    Fixed(RetrievalConfig),
    Grid(Vec<RetrievalConfig>),
    StandardGrid,
}

impl Default for RetrievalSpec {
    fn default() -> Self {
        RetrievalSpec::Fixed(RetrievalConfig::default())
    }
}

/// Grid file contents for `tune`: a list of configs, or `"standard"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GridFile {
    Named(String),
    Configs(Vec<RetrievalConfig>),
}

impl GridFile {
    pub fn load(path: &Path) -> Result<Vec<RetrievalConfig>> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let grid: GridFile = serde_json::from_str(&body).map_err(|e| invalid(path, e))?;
        let configs = match grid {
            GridFile::Named(name) if name == "standard" => RetrievalConfig::standard_grid(),
            GridFile::Named(name) => {
                return Err(Error::InvalidParams(format!(
                    "{}: unknown grid {name:?}; expected \"standard\" or a list of configs",
                    path.display()
                )))
            }
            GridFile::Configs(c) => c,
        };
        if configs.is_empty() {
            return Err(Error::EmptyInput(format!("{}: retrieval grid", path.display())));
        }
        for c in &configs {
            c.validate()?;
        }
        Ok(configs)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub rates: Vec<f64>,
    #[serde(default = "default_sweep_method")]
    pub method: SweepMethod,
}

fn default_sweep_method() -> SweepMethod {
    SweepMethod::Downsample
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    #[serde(default)]
    pub retrieval: RetrievalSpec,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<SamplingStrategy>,
    #[serde(default = "default_modes")]
    pub modes: Vec<TestMode>,
    #[serde(default = "default_k")]
    pub k: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub crf: CrfConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

fn default_strategies() -> Vec<SamplingStrategy> {
    vec![
        SamplingStrategy::PositiveOnly,
        SamplingStrategy::RandomNegative { target_precision: None },
        SamplingStrategy::RetrievalFiltered {
            retrieval_config: None,
            include_missed_positives: false,
        },
        SamplingStrategy::All,
    ]
}

fn default_modes() -> Vec<TestMode> {
    vec![TestMode::TagAll, TestMode::TagRetrieved]
}

fn default_k() -> usize {
    10
}

fn invalid(path: &Path, e: serde_json::Error) -> Error {
    Error::InvalidParams(format!("{}: {e}", path.display()))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses `RARESPAN_SEED`: one seed or a comma-separated list.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds = value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidParams(format!("{SEED_ENV}: {s:?} is not a seed")))
        })
        .collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(Error::InvalidParams(format!("{SEED_ENV} is empty")));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    /// Reads and validates a config file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = serde_json::from_str(&body).map_err(|e| invalid(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.output_dir = resolve(base, &config.output_dir);
        match &mut config.corpus {
            CorpusSource::Path(p) => *p = resolve(base, p),
            CorpusSource::RawDir { dir, .. } => *dir = resolve(base, dir),
            CorpusSource::Synthetic(_) => {}
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.corpus {
            CorpusSource::Path(p) if !p.is_file() => {
                return Err(Error::InvalidParams(format!("corpus file {} does not exist", p.display())))
            }
            CorpusSource::RawDir { dir, .. } if !dir.is_dir() => {
                return Err(Error::InvalidParams(format!(
                    "corpus directory {} does not exist",
                    dir.display()
                )))
            }
            CorpusSource::Synthetic(params) => params.validate()?,
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParams("seeds must not be empty".into()));
        }
        match &self.retrieval {
            RetrievalSpec::Fixed(c) => c.validate()?,
            RetrievalSpec::Grid(g) if g.is_empty() => {
                return Err(Error::InvalidParams("retrieval grid must not be empty".into()))
            }
            RetrievalSpec::Grid(g) => g.iter().try_for_each(|c| c.validate())?,
            RetrievalSpec::StandardGrid => {}
        }
        if let Some(sweep) = &self.sweep {
            if sweep.rates.is_empty() {
                return Err(Error::InvalidParams("sweep.rates must not be empty".into()));
            }
            if sweep.method == SweepMethod::Generate && !matches!(self.corpus, CorpusSource::Synthetic(_)) {
                return Err(Error::InvalidParams(
                    "sweep method \"generate\" needs a synthetic corpus".into(),
                ));
            }
        }
        Ok(())
    }
}
