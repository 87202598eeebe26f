mod commands;
mod fail;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fail::{Failure, USAGE};

/// Crystal tokenization, transformer pretraining, property regression and
/// grid porosity.
///
/// Flags marked `[config: key]` can also be set as `key = value` in the TOML
/// file given with --config; command-line values win.
#[derive(Debug, Parser)]
#[command(name = "sgformer", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

impl OutputFormat {
    fn parse(s: &str) -> Result<Self, Failure> {
        <Self as ValueEnum>::from_str(s, true).map_err(|_| Failure::invalid(format!("unknown format `{s}` (text, json)")))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the twelve space-group tokens of a group number.
    Lookup(LookupArgs),
    /// Print the element fractions of a chemical formula.
    ParseFormula(ParseFormulaArgs),
    /// Print the token sequence of crystals.
    Tokenize(TokenizeArgs),
    /// Void and accessible fractions of a periodic structure.
    Porosity(PorosityArgs),
    /// Pretrain an encoder with masked-token and/or lattice objectives.
    Pretrain(TrainArgs),
    /// Train property regressors with cross-validation or a ratio split.
    Finetune(TrainArgs),
    /// Mean absolute error of a finetuned model on labelled records.
    Evaluate(ModelArgs),
    /// Write one prediction per input record.
    Predict(ModelArgs),
    /// Export attention maps or [CLS] embeddings.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct LookupArgs {
    /// Space-group number, 1 to 230.
    #[arg(allow_negative_numbers = true)]
    pub spacegroup: i64,
    /// Output format. [config: format]
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
pub struct ParseFormulaArgs {
    pub formula: String,
    /// Output format. [config: format]
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    /// TOML settings file; command-line values override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Formula of a single crystal (with --spacegroup).
    #[arg(long, requires = "spacegroup", conflicts_with = "data")]
    pub formula: Option<String>,
    /// Space-group number of a single crystal (with --formula).
    #[arg(long, requires = "formula")]
    pub spacegroup: Option<i64>,
    /// Dataset file, `kb-corpus` or `synthetic-<lpp|regression>:N`. [config: data]
    #[arg(long)]
    pub data: Option<String>,
    /// Take the vocabulary from this checkpoint. [config: checkpoint]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Informatics fields, comma separated, `-` for none. [config: layout]
    #[arg(long)]
    pub layout: Option<String>,
    /// Seed for generated datasets. [config: seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip malformed rows instead of failing. [config: allow_partial]
    #[arg(long)]
    pub allow_partial: bool,
    /// Write here instead of standard output. [config: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format. [config: format]
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
pub struct PorosityArgs {
    /// Structure file with `lattice` and `sites` sections.
    pub structure: PathBuf,
    /// TOML settings file; command-line values override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid points per Å along each cell edge (default 5). [config: rho_grid]
    #[arg(long)]
    pub rho_grid: Option<f64>,
    /// Probe radius in Å (default 1.2). [config: r_probe]
    #[arg(long)]
    pub r_probe: Option<f64>,
    /// Count every probe-admissible point as accessible. [config: flood_fill = false]
    #[arg(long)]
    pub no_floodfill: bool,
    /// `element radius` lines overriding the bundled radii. [config: radii]
    #[arg(long)]
    pub radii: Option<PathBuf>,
    /// Threads for the grid pass; 0 uses all cores. [config: workers]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write here instead of standard output. [config: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format. [config: format]
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML settings file; command-line values override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Encoder size (`desk`, `full`) or a named recipe such as `desk-mlm`
    /// or `full-hmof`. [config: preset]
    #[arg(long)]
    pub preset: Option<String>,
    /// `mlm`, `lpp` or `mlm+lpp`. [config: objective]
    #[arg(long)]
    pub objective: Option<String>,
    /// Informatics fields, comma separated, `-` for none. [config: layout]
    #[arg(long)]
    pub layout: Option<String>,
    /// [config: epochs]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [config: batch_size]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate. [config: lr]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [config: weight_decay]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Share of steps spent warming up. [config: warmup_fraction]
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    /// Share of space-group tokens masked. [config: mask_ratio]
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Weight of the masked-token loss in `mlm+lpp`. [config: lambda]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `kfold5`, `70/15/15`, `ratio:0.8,0.2`. [config: split]
    #[arg(long)]
    pub split: Option<String>,
    /// [config: seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Early-stopping patience in epochs, 0 disables. [config: patience]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Evaluation threads, 0 uses all cores. [config: workers]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Seed of the generated element table. [config: element_seed]
    #[arg(long)]
    pub element_seed: Option<u64>,
    /// Replace every dropout rate. [config: dropout]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Element feature table file. [config: elements]
    #[arg(long)]
    pub elements: Option<PathBuf>,
    /// Dataset file, `kb-corpus` or `synthetic-<lpp|regression>:N`. [config: data]
    #[arg(long)]
    pub data: Option<String>,
    /// Start from this checkpoint. [config: checkpoint]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory for checkpoints, metrics and the run manifest. [config: out_dir]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Skip malformed rows instead of failing. [config: allow_partial]
    #[arg(long)]
    pub allow_partial: bool,
    /// Format of the metrics stream and summary. [config: format]
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// TOML settings file; command-line values override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model checkpoint. [config: checkpoint]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset file, `kb-corpus` or `synthetic-<lpp|regression>:N`. [config: data]
    #[arg(long)]
    pub data: Option<String>,
    /// [config: batch_size]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Threads, 0 uses all cores. [config: workers]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Seed for generated datasets. [config: seed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip malformed rows instead of failing. [config: allow_partial]
    #[arg(long)]
    pub allow_partial: bool,
    /// Write here instead of standard output. [config: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format. [config: format]
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("kind").required(true).args(["attention", "cls_embeddings"])))]
pub struct ExportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Export per-head attention matrices, one JSON document per record.
    #[arg(long)]
    pub attention: bool,
    /// Export the final [CLS] vector of every record.
    #[arg(long)]
    pub cls_embeddings: bool,
    /// Layers to export: `all`, `last` or an index. [config: layer]
    #[arg(long)]
    pub layer: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
