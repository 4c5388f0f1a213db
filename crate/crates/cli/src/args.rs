use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "trimkit",
    version,
    about = "Rank, strip and restore inferable function words, and measure what it costs",
    propagate_version = true
)]
pub struct Cli {
    /// TOML config file; falls back to $TRIMKIT_CONFIG, then built-in defaults
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel stages [default: available cores]
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an n-gram model on a corpus and save it as JSON
    TrainLm(TrainLmArgs),
    /// Rank lexicon words by how easily a masked scorer predicts them
    Rank(RankArgs),
    /// Remove a term set from every corpus fragment and write the pairs
    Distill(DistillArgs),
    /// Restore removed words in distilled text
    Reconstruct(ReconstructArgs),
    /// Reconstruct and score distilled pairs against their originals
    Eval(EvalArgs),
    /// Evaluate growing prefixes of an inferability ranking
    Sweep(SweepArgs),
    /// Decide whether distillation pays off for a pricing and usage profile
    Cost(CostArgs),
    /// Ask a generation endpoint for a distilled answer and reconstruct it
    Trim(TrimArgs),
    /// Mean and standard deviation of lexicon-term counts per fragment
    Count(CountArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Plain,
    Jsonl,
}

#[derive(Debug, Args, Default)]
pub struct CorpusArgs {
    /// Corpus file (plain text paragraphs or JSONL with a "text" key)
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Corpus format [default: from the file extension]
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Abort on a malformed JSONL record instead of skipping it
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args, Default)]
pub struct LmArgs {
    /// Saved n-gram model; trained on --corpus when absent
    #[arg(long, value_name = "FILE")]
    pub lm: Option<PathBuf>,
    /// N-gram order when training [default: 3]
    #[arg(long)]
    pub order: Option<usize>,
    /// Add-k smoothing constant when training [default: 0.01]
    #[arg(long)]
    pub smoothing_k: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TermsArgs {
    /// Term set: builtin lexicon name or word-list file
    #[arg(long, value_name = "LEXICON")]
    pub terms: Option<String>,
    /// Take the term set from this ranking CSV instead
    #[arg(long, value_name = "FILE", conflicts_with = "terms")]
    pub report: Option<PathBuf>,
    /// Level of the ranking to use with --report (top level*step words)
    #[arg(long, requires = "report")]
    pub level: Option<usize>,
    /// Words per level with --report [default: 5]
    #[arg(long)]
    pub step: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct ReconArgs {
    /// Beam width [default: 8]
    #[arg(long)]
    pub beam_width: Option<usize>,
    /// Maximum words inserted in a row [default: 2]
    #[arg(long)]
    pub max_consecutive: Option<usize>,
    /// Log-probability penalty per inserted word [default: 0.5]
    #[arg(long)]
    pub penalty: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainLmArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// N-gram order [default: 3]
    #[arg(long)]
    pub order: Option<usize>,
    /// Add-k smoothing constant [default: 0.01]
    #[arg(long)]
    pub smoothing_k: Option<f64>,
    /// Output file [default: standard output]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Words to rank: builtin lexicon name or word-list file [default: extended]
    #[arg(long, value_name = "LEXICON")]
    pub lexicon: Option<String>,
    #[command(flatten)]
    pub lm: LmArgs,
    /// Masked-LM service URL (JSON over HTTP) instead of the n-gram model
    #[arg(long, value_name = "URL")]
    pub scorer_url: Option<String>,
    /// Masked-LM program speaking line-delimited JSON on stdin/stdout
    #[arg(long, value_name = "PROGRAM", conflicts_with = "scorer_url")]
    pub scorer_cmd: Option<String>,
    /// Argument passed to --scorer-cmd (repeatable)
    #[arg(long = "scorer-arg", value_name = "ARG", allow_hyphen_values = true)]
    pub scorer_args: Vec<String>,
    /// External scorer timeout in seconds [default: 30]
    #[arg(long)]
    pub timeout: Option<f64>,
    /// External scorer retries [default: 0]
    #[arg(long)]
    pub retries: Option<u32>,
    /// Context tokens kept on each side of the masked word [default: 64]
    #[arg(long)]
    pub window: Option<usize>,
    /// Occurrences below which a word is flagged low-confidence [default: 10]
    #[arg(long)]
    pub min_occurrences: Option<usize>,
    /// Average per fragment first instead of over all occurrences
    #[arg(long)]
    pub per_fragment: bool,
    /// Output CSV [default: standard output]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub terms: TermsArgs,
    /// Output JSONL [default: standard output]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Pairs JSONL written by `distill`
    #[arg(long, value_name = "FILE", required_unless_present = "text")]
    pub pairs: Option<PathBuf>,
    /// Reconstruct this single distilled text instead
    #[arg(long, conflicts_with = "pairs")]
    pub text: Option<String>,
    #[command(flatten)]
    pub terms: TermsArgs,
    #[command(flatten)]
    pub lm: LmArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub recon: ReconArgs,
    /// Output file [default: standard output]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReconstructorArg {
    /// Beam search with the n-gram model
    Beam,
    /// Distilled text unchanged
    Identity,
    /// Recorded removals put back
    Oracle,
    /// The "reconstructed" field already in the pairs file
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepModeArg {
    Beam,
    Identity,
    Oracle,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pairs JSONL written by `distill` or `reconstruct`
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,
    /// Reconstructor to evaluate
    #[arg(long, value_enum, default_value = "beam")]
    pub reconstructor: ReconstructorArg,
    #[command(flatten)]
    pub terms: TermsArgs,
    /// Lexicon for Θ-metrics [default: the term set]
    #[arg(long, value_name = "LEXICON")]
    pub theta_lexicon: Option<String>,
    #[command(flatten)]
    pub lm: LmArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub recon: ReconArgs,
    /// Embedding service URL for cosine similarity [default: TF-IDF fitted on the originals]
    #[arg(long, value_name = "URL")]
    pub embed_url: Option<String>,
    /// Output CSV [default: standard output]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Ranking CSV written by `rank`
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
    /// Number of levels [default: 12]
    #[arg(long)]
    pub levels: Option<usize>,
    /// Words added per level [default: 5]
    #[arg(long)]
    pub step: Option<usize>,
    /// Reconstructor used at every level
    #[arg(long, value_enum, default_value = "beam")]
    pub mode: SweepModeArg,
    /// Lexicon for Θ-metrics [default: each level's term set]
    #[arg(long, value_name = "LEXICON")]
    pub theta_lexicon: Option<String>,
    #[command(flatten)]
    pub lm: LmArgs,
    #[command(flatten)]
    pub recon: ReconArgs,
    /// Embedding service URL for cosine similarity [default: TF-IDF fitted on the corpus]
    #[arg(long, value_name = "URL")]
    pub embed_url: Option<String>,
    /// Output CSV [default: standard output]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Pricing JSON with gen_input_price, gen_output_price, recon_input_price, recon_output_price
    #[arg(long, value_name = "FILE")]
    pub pricing: Option<PathBuf>,
    /// Generation input price per token
    #[arg(long)]
    pub gen_input_price: Option<f64>,
    /// Generation output price per token
    #[arg(long)]
    pub gen_output_price: Option<f64>,
    /// Reconstruction input price per token [default: 0]
    #[arg(long)]
    pub recon_input_price: Option<f64>,
    /// Reconstruction output price per token [default: 0]
    #[arg(long)]
    pub recon_output_price: Option<f64>,
    /// Extra prompt tokens of the distillation instruction (I) [default: 0]
    #[arg(long)]
    pub extra_input: Option<f64>,
    /// Output tokens saved per answer (G) [default: 0]
    #[arg(long)]
    pub gain: Option<f64>,
    /// Reconstruction input tokens (I_R) [default: 0]
    #[arg(long)]
    pub recon_input: Option<f64>,
    /// Reconstruction output tokens (O_R) [default: 0]
    #[arg(long)]
    pub recon_output: Option<f64>,
    /// Per-pair results CSV from `eval`; G, I_R and O_R are averaged from it
    #[arg(long, value_name = "FILE", conflicts_with_all = ["gain", "recon_input", "recon_output"])]
    pub results: Option<PathBuf>,
    /// Billing tokens per counted word [default: 1.0]
    #[arg(long)]
    pub words_to_tokens: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrimArgs {
    /// The question to answer
    #[arg(long)]
    pub question: String,
    #[command(flatten)]
    pub terms: TermsArgs,
    /// Prompt template: `distilled`, `plain` or a template file [default: distilled]
    #[arg(long)]
    pub template: Option<String>,
    /// Generation endpoint URL
    #[arg(long, value_name = "URL")]
    pub endpoint_url: Option<String>,
    /// Authentication header name
    #[arg(long)]
    pub auth_header: Option<String>,
    /// Authentication header value
    #[arg(long)]
    pub auth_value: Option<String>,
    /// Request timeout in seconds [default: 30]
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Retries on transport errors and 5xx answers [default: 0]
    #[arg(long)]
    pub retries: Option<u32>,
    /// Sampling temperature [default: 0]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Maximum concurrent requests [default: 4]
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    /// Session id; requests of one session are serialized
    #[arg(long)]
    pub session: Option<String>,
    /// Print the prompt without contacting the endpoint
    #[arg(long)]
    pub dry_run: bool,
    #[command(flatten)]
    pub lm: LmArgs,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub recon: ReconArgs,
    /// Pricing JSON; adds a break-even verdict for this query
    #[arg(long, value_name = "FILE")]
    pub pricing: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Lexicon to count [default: exploratory23]
    #[arg(long, value_name = "LEXICON")]
    pub lexicon: Option<String>,
}
