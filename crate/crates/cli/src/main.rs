//! `grounded`: build prefix trees, tokenize items, train the toy model,
//! decode, score rewrites, evaluate and benchmark.
//!
//! Every subcommand writes its primary artifact to `--out` and a manifest
//! next to it at `<out>.manifest.json`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::List;

#[derive(Parser, Debug)]
#[command(
    name = "grounded",
    version,
    about = "Catalog-grounded constrained generation toolkit"
)]
pub struct Cli {
    /// Config file of `key = value` lines; keys are long flag names and
    /// flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a title or code prefix tree over a catalog.
    BuildTree(BuildTreeArgs),
    /// Train residual-quantization codebooks and assign item codes.
    TokenizeItems(TokenizeArgs),
    /// Train the toy language model on interaction histories.
    TrainToy(TrainArgs),
    /// Decode one response under a grounding strategy.
    Decode(DecodeArgs),
    /// Score rewritten titles with the rewrite rewards.
    Reward(RewardArgs),
    /// Leave-one-out evaluation over interaction histories.
    Eval(EvalArgs),
    /// Time prefix-tree builds and allowed-set lookups.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// Root seed; every subsystem derives its own seed from it [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Primary output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct CatalogArgs {
    /// Catalog file.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Catalog format: jsonl or tsv [default: jsonl].
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct BuildTreeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    /// Codes file; builds a code tree instead of a title tree.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Codebook file matching `--codes`.
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct TokenizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    /// Item embeddings (jsonl of item_id, embedding); synthesized when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Width of synthesized embeddings [default: 16].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of codebooks D [default: 4].
    #[arg(long)]
    pub depth: Option<usize>,
    /// Entries per codebook K [default: 256].
    #[arg(long)]
    pub size: Option<usize>,
    /// k-means iterations per stage [default: 10].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Codebook output [default: <out>.codebooks.jsonl].
    #[arg(long)]
    pub codebooks_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    /// Interaction histories; the last two items of each are held out.
    #[arg(long)]
    pub interactions: Option<PathBuf>,
    /// masked-lm, scope-mask or combined-ret [default: scope-mask].
    #[arg(long)]
    pub loss: Option<String>,
    /// Gradient steps [default: 300].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Learning rate [default: 0.5].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Examples per step, 0 for full batch [default: 50].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Model width [default: 16].
    #[arg(long)]
    pub width: Option<usize>,
    /// Context window of the model in tokens [default: 4].
    #[arg(long)]
    pub window: Option<usize>,
    /// Item segments per training response [default: 3].
    #[arg(long)]
    pub max_labels: Option<usize>,
    /// Augmented samples per history [default: 2].
    #[arg(long)]
    pub samples: Option<usize>,
    /// Weight of the retrieval term for combined-ret [default: 1.0].
    #[arg(long)]
    pub alpha_ret: Option<f64>,
    /// Width of synthesized embeddings for combined-ret [default: 16].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Trained model output [default: <out>.model.json].
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// Strategy: ret, cgen or token [default: cgen].
    #[arg(long)]
    pub strategy: Option<String>,
    /// Model file from train-toy; a seeded random-logit model otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Logit bonus for `<SOI>` in the random-logit model [default: 4.0].
    #[arg(long)]
    pub soi_bias: Option<f64>,
    /// Prefix tree file; built from the catalog (or codes) when absent.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Codes file, required for the token strategy.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Codebook file, required for the token strategy.
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    /// Item embeddings for ret; synthesized when absent.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Width of synthesized embeddings [default: 16].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Items per response [default: 10].
    #[arg(long)]
    pub k: Option<usize>,
    /// Token budget per response [default: 200].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// greedy or sampled [default: greedy].
    #[arg(long)]
    pub selection: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated item ids whose titles form the prompt.
    #[arg(long)]
    pub prompt: Option<List<String>>,
}

#[derive(Args, Debug, Default)]
pub struct RewardArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    /// Rewrites: jsonl of item_id, rewrite and optional history (item ids).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// u2i, i2i, dc, cr, dpr or all [default: all].
    #[arg(long)]
    pub component: Option<String>,
    /// Preset (uniform, steam, movies, toys) or five comma-separated weights [default: uniform].
    #[arg(long)]
    pub weights: Option<String>,
    /// Interaction histories, required for i2i.
    #[arg(long)]
    pub interactions: Option<PathBuf>,
    /// Model file for perplexity; a uniform model otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Rank temperature of u2i [default: 2000].
    #[arg(long)]
    pub tau: Option<f64>,
    /// Perplexity scale of dc [default: 0.1].
    #[arg(long)]
    pub alpha_ppl: Option<f64>,
    /// Neighbours compared by i2i [default: 10].
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Width of synthesized embeddings [default: 16].
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub catalog: CatalogArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Interaction histories; each last item is the target.
    #[arg(long)]
    pub interactions: Option<PathBuf>,
    /// History items placed in the prompt [default: 10].
    #[arg(long)]
    pub context: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated catalog sizes [default: 10000,100000].
    #[arg(long)]
    pub sizes: Option<List<usize>>,
    /// Timed trials per size [default: 3].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Untimed warm-up trials [default: 1].
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Titles walked per trial for allowed-set timing [default: 200].
    #[arg(long)]
    pub probes: Option<usize>,
    /// Words per synthetic title [default: 6].
    #[arg(long)]
    pub title_len: Option<usize>,
    /// Distinct words in synthetic titles [default: 1000].
    #[arg(long)]
    pub word_vocab: Option<usize>,
    /// Titles per simulated response [default: 10].
    #[arg(long)]
    pub items_per_response: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
