use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cgt", version, about = "Computational grounded theory workbench")]
pub struct Cli {
    /// Project directory.
    #[arg(long, global = true, default_value = ".")]
    pub project: PathBuf,
    /// Seed for every stochastic step; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the project (if needed) and load a JSONL corpus.
    Ingest { input: PathBuf },
    /// Tokenize the corpus and drop rare terms.
    Preprocess(PreprocessArgs),
    /// Draw an exploration subset and register ground-truth codes.
    Explore(ExploreArgs),
    #[command(subcommand)]
    Lda(LdaCommand),
    /// Record matches between ground-truth codes and LDA topics.
    Align {
        /// JSON file with `models`, `matches` and `new_topics`.
        decisions: PathBuf,
    },
    /// Derive the curated query term sets.
    Terms {
        /// JSON list of curation edits.
        #[arg(long)]
        edits: Option<PathBuf>,
        /// Write the term table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(subcommand)]
    Qdtm(QdtmCommand),
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    #[command(subcommand)]
    Sample(SampleCommand),
    #[command(subcommand)]
    Coding(CodingCommand),
    /// Show artifacts and event count.
    Status,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Stopword list, one word per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Lemma dictionary, `form<TAB>lemma` per line.
    #[arg(long)]
    pub lemmas: Option<PathBuf>,
    #[arg(long)]
    pub min_df: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExploreArgs {
    /// Random subset size.
    #[arg(long, conflicts_with = "sources")]
    pub subset: Option<usize>,
    /// Keep documents from these sources instead of a random subset.
    #[arg(long, value_delimiter = ',')]
    pub sources: Vec<String>,
    /// JSON file with `codes` and optional `exclusions`.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Write the subset as JSONL for reading.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LdaCommand {
    /// Train and score one model per K.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train and store a model.
    Train {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Print or export topic summaries of a stored model.
    Summaries {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        terms: Option<usize>,
        #[arg(long)]
        docs: Option<usize>,
        /// Write `topic,rank,term,weight` CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum QdtmCommand {
    /// Expand the query sets and train the topic tree.
    Train {
        /// Also expand with trained word embeddings.
        #[arg(long)]
        embeddings: bool,
    },
    /// Drop low-prevalence subtopics and duplicates.
    Prune {
        #[arg(long)]
        min_prevalence: Option<f64>,
    },
    /// Build the annotation bundle.
    Export {
        #[arg(long)]
        posts: Option<usize>,
        #[arg(long)]
        terms: Option<usize>,
        /// Write the bundle as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    /// Open a session over the bundle and issue annotator tokens.
    Create {
        #[arg(long, value_delimiter = ',')]
        annotators: Vec<String>,
        /// Main topic ids annotated together as one stage (repeatable);
        /// the remaining mains form the last stage.
        #[arg(long = "stage")]
        stages: Vec<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        address: Option<String>,
    },
    /// Submit annotations from a CSV or JSON file.
    Import { input: PathBuf },
    /// Majority votes, agreement and the final topic set.
    Adjudicate,
}

#[derive(Debug, Subcommand)]
pub enum SampleCommand {
    /// Label every document.
    Classify {
        /// Lexicon file, `term<TAB>label` per line.
        #[arg(long, conflicts_with = "plugin")]
        lexicon: Option<PathBuf>,
        /// External classifier speaking JSONL on stdin/stdout.
        #[arg(long, requires = "labels")]
        plugin: Option<String>,
        #[arg(long = "plugin-arg", allow_hyphen_values = true)]
        plugin_args: Vec<String>,
        /// Labels the plugin can emit.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
    },
    /// Label frequency histogram.
    Hist {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random sample of documents per label.
    Draw {
        #[arg(long = "label", required = true)]
        labels: Vec<String>,
        #[arg(long)]
        n: Option<usize>,
        /// Directory receiving one `<label>.jsonl` per label.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CodingCommand {
    /// Post counts and lengths of the coding workload.
    Report,
    /// Write one coding sheet per retained topic.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
}
