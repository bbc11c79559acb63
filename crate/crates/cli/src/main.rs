//! `dualamr`: preprocess corpora, train, parse, evaluate and run the
//! inference-step and beam-size sweeps.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualamr::config::Profile;

#[derive(Debug, Parser)]
#[command(name = "dualamr", version, about = "Incremental AMR parser with iterative graph-sequence inference")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// `key = value` configuration file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// base hyperparameters
    #[arg(long, global = true, value_parser = parse_profile)]
    pub profile: Option<Profile>,
    /// random seed for training, or for Smatch restarts in `eval`
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// beam size (1 decodes greedily)
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    /// rounds of iterative inference per expansion
    #[arg(short = 'N', long = "steps", global = true)]
    pub steps: Option<usize>,
    /// extra `key=value` setting; repeatable, applied after the file
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|_| format!("unknown profile `{s}` (expected paper or desk)"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Strip wiki links and senses; build vocabularies and side tables.
    Preprocess {
        /// raw JSON-lines corpus with gold graphs
        #[arg(long)]
        input: PathBuf,
        /// receives corpus.jsonl, vocab.json, senses.tsv, relations.tsv
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model; writes best.ckpt, last.ckpt, state.ckpt, train.log.jsonl.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// directory written by `preprocess`
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// contextual-embedding sidecar for both corpora
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// continue from last.ckpt and state.ckpt in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Parse a corpus into Penman graphs, in input order.
    Parse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// output file; standard output when absent
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// directory written by `preprocess`; must match the checkpoint
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// per-step candidates, sources and attention as JSON lines
        #[arg(long, value_name = "FILE")]
        diagnostics_out: Option<PathBuf>,
    },
    /// Score predicted graphs against gold graphs.
    Eval {
        /// Penman file
        #[arg(long)]
        pred: PathBuf,
        /// Penman file, or a JSON-lines corpus when it ends in `.jsonl`
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        restarts: Option<usize>,
        /// print one JSON record instead of the text report
        #[arg(long)]
        json: bool,
    },
    /// Smatch per (inference steps, sentence length) as a TSV table.
    ExperimentSteps {
        /// one checkpoint swept over `--n-list`, or one per N trained at that N
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// JSON-lines corpus with gold graphs
        #[arg(long)]
        input: PathBuf,
        /// N values for a single checkpoint [default: 1,2,3,4,5,6]
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        /// length classes such as `1-10,11-20,21+`; terciles when absent
        #[arg(long)]
        buckets: Option<String>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Smatch at each beam size as a TSV table.
    ExperimentBeam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
        beams: Vec<usize>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
