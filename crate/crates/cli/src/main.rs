mod config;
mod table;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rarespan::corpus::{
    generate_synthetic_corpus, load_raw_dir, positive_chunk_rate, read_jsonl, write_jsonl, Document, SyntheticParams,
};
use rarespan::error::{Error, Result};
use rarespan::evaluation::{
    base_rate_sweep, cross_validate, downsample_sweep, read_report_csv, write_experiment, write_sweep,
    ExperimentSettings, SweepMethod,
};
use rarespan::retrieval::{grid_search_retrieval, write_grid_csv, RetrievalConfig};

use config::{parse_seeds, CorpusSource, ExperimentConfig, GridFile, RetrievalSpec, SEED_ENV};

/// Rare start-point detection: chunk retrieval, training-set sampling and
/// CRF tagging, evaluated by cross-validation.
#[derive(Debug, Parser)]
#[command(name = "rarespan", version)]
struct Cli {
    /// Worker threads; defaults to the number of available cores. Results do
    /// not depend on this value.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus as JSON Lines and print its base rate.
    Generate {
        /// SyntheticParams JSON file.
        #[arg(long, value_name = "FILE")]
        params: PathBuf,
        /// Output corpus path.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Overrides the seed in the params file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid-search retrieval configs and save the best model.
    Tune {
        /// JSON Lines corpus.
        #[arg(long, value_name = "FILE")]
        corpus: PathBuf,
        /// JSON list of retrieval configs, or the string "standard".
        #[arg(long, value_name = "FILE")]
        grid: PathBuf,
        /// Output path for the best retrieval model.
        #[arg(long, value_name = "FILE")]
        out_model: PathBuf,
        /// Grid report path; defaults to the model path with a `.grid.csv` extension.
        #[arg(long, value_name = "FILE")]
        grid_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a cross-validated experiment or base-rate sweep from a config file.
    Run {
        /// ExperimentConfig JSON file.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long, value_name = "DIR")]
        output_dir: Option<PathBuf>,
        /// Overrides the number of folds.
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated seeds; overrides the config and RARESPAN_SEED.
        #[arg(long, value_name = "LIST")]
        seeds: Option<String>,
    },
    /// Print a report CSV as aligned tables, one per base rate and test mode.
    Report {
        /// report.csv written by `run`.
        csv: PathBuf,
        /// Show per-fold rows as well as means.
        #[arg(long)]
        folds: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::InvalidParams("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Generate { params, out, seed } => cmd_generate(&params, &out, seed),
        Command::Tune {
            corpus,
            grid,
            out_model,
            grid_csv,
            seed,
        } => cmd_tune(&corpus, &grid, &out_model, grid_csv, seed),
        Command::Run {
            config,
            output_dir,
            k,
            seeds,
        } => cmd_run(&config, output_dir, k, seeds),
        Command::Report { csv, folds } => {
            let rows = read_report_csv(&csv)?;
            print!("{}", table::render(&rows, folds));
            Ok(())
        }
    }
}

fn cmd_generate(params_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let body = fs::read_to_string(params_path).map_err(|e| Error::io(params_path, e))?;
    let mut params: SyntheticParams = serde_json::from_str(&body)
        .map_err(|e| Error::InvalidParams(format!("{}: {e}", params_path.display())))?;
    if let Some(seed) = seed {
        params.seed = seed;
    }
    let docs = generate_synthetic_corpus(&params)?;
    write_jsonl(out, &docs)?;
    let rate = positive_chunk_rate(&docs, params.reference_chunk_size);
    eprintln!("wrote {} documents to {}", docs.len(), out.display());
    println!("{rate:.6}");
    Ok(())
}

fn cmd_tune(corpus: &Path, grid: &Path, out_model: &Path, grid_csv: Option<PathBuf>, seed: u64) -> Result<()> {
    let docs = read_jsonl(corpus)?;
    let configs = GridFile::load(grid)?;
    eprintln!("searching {} retrieval configs over {} documents", configs.len(), docs.len());
    let search = grid_search_retrieval(&docs, &configs, seed)?;
    let csv = grid_csv.unwrap_or_else(|| out_model.with_extension("grid.csv"));
    write_grid_csv(&csv, &search.cells)?;
    search.model.save(out_model)?;
    let best = search.best_config();
    eprintln!(
        "best: chunk_size {} ngram_order {} tfidf {} (F{} {:.4}, threshold {:.4})",
        best.chunk_size,
        best.ngram_order,
        best.use_tfidf,
        best.beta,
        search.model.heldout_f_beta,
        search.model.threshold
    );
    Ok(())
}

fn load_corpus(source: &CorpusSource, seed: u64) -> Result<Vec<Document>> {
    match source {
        CorpusSource::Path(p) => read_jsonl(p),
        CorpusSource::RawDir { dir, normalizer } => load_raw_dir(dir, normalizer),
        CorpusSource::Synthetic(params) => generate_synthetic_corpus(&SyntheticParams {
            seed,
            ..params.clone()
        }),
    }
}

const INCOMPLETE: &str = "INCOMPLETE";

fn cmd_run(path: &Path, output_dir: Option<PathBuf>, k: Option<usize>, seeds: Option<String>) -> Result<()> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    if let Some(k) = k {
        config.k = k;
    }
    match (seeds, std::env::var(SEED_ENV)) {
        (Some(list), _) => config.seeds = parse_seeds(&list)?,
        (None, Ok(list)) => config.seeds = parse_seeds(&list)?,
        (None, Err(_)) => {}
    }
    config.validate()?;

    let out = config.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let marker = out.join(INCOMPLETE);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    for &seed in &config.seeds {
        if let Err(e) = run_seed(&config, seed) {
            let note = format!("seed {seed} failed: {e}\n");
            fs::write(&marker, note).map_err(|io| Error::io(&marker, io))?;
            return Err(e.context(format!("seed {seed}")));
        }
    }
    Ok(())
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<()> {
    let dir = config.output_dir.join(format!("seed-{seed}"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let corpus = load_corpus(&config.corpus, seed)?;
    eprintln!("seed {seed}: {} documents", corpus.len());

    let retrieval = match &config.retrieval {
        RetrievalSpec::Fixed(c) => *c,
        RetrievalSpec::Grid(grid) => tune_in_run(&corpus, grid, seed, &dir)?,
        RetrievalSpec::StandardGrid => tune_in_run(&corpus, &RetrievalConfig::standard_grid(), seed, &dir)?,
    };
    let settings = ExperimentSettings {
        retrieval,
        crf: config.crf.clone(),
        k: config.k,
        strategies: config.strategies.clone(),
        modes: config.modes.clone(),
        seed,
    };
    settings.validate()?;

    match (&config.sweep, &config.corpus) {
        (None, _) => {
            let report = cross_validate(&corpus, &settings)?;
            write_experiment(&dir, &report)?;
        }
        (Some(sweep), CorpusSource::Synthetic(params)) if sweep.method == SweepMethod::Generate => {
            let params = SyntheticParams {
                seed,
                ..params.clone()
            };
            let report = base_rate_sweep(&params, &sweep.rates, SweepMethod::Generate, &settings)?;
            write_sweep(&dir, &report)?;
        }
        (Some(sweep), source) => {
            let mut report = downsample_sweep(&corpus, &sweep.rates, &settings)?;
            if let CorpusSource::Synthetic(params) = source {
                report.generator = Some(SyntheticParams {
                    seed,
                    ..params.clone()
                });
            }
            write_sweep(&dir, &report)?;
        }
    }
    eprintln!("seed {seed}: reports written to {}", dir.display());
    Ok(())
}

fn tune_in_run(corpus: &[Document], grid: &[RetrievalConfig], seed: u64, dir: &Path) -> Result<RetrievalConfig> {
    eprintln!("seed {seed}: searching {} retrieval configs", grid.len());
    let search = grid_search_retrieval(corpus, grid, seed)?;
    write_grid_csv(dir.join("grid.csv"), &search.cells)?;
    Ok(*search.best_config())
}
