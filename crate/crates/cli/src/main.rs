use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tgtext::eval::ScoringMode;
use tgtext::mock::MockOracle;
use tgtext::negatives::HistoricalPool;
use tgtext::neighbors::Direction;
use tgtext_cli::{stats_table, AblationFlag, Baseline, CliError, RunConfig, Sweep};

#[derive(Parser)]
#[command(name = "tgtext", version, about = "Temporal link prediction with chat-completion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print dataset statistics.
    Stats {
        #[command(flatten)]
        common: CommonArgs,
        /// Print JSON instead of a table row.
        #[arg(long)]
        json: bool,
    },
    /// Evaluate on the test split and write a run directory.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
    },
    /// Evaluate several prompt configurations over the same negatives.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Neighbor counts to sweep, e.g. 0,1,2,5,10.
        #[arg(long, value_delimiter = ',')]
        sweep_neighbors: Vec<usize>,
        /// Any of no-icl, no-neighbors, no-background, none.
        #[arg(long, value_delimiter = ',')]
        sweep_flags: Vec<String>,
    },
    /// Generate and classify explanations for the first test predictions.
    Explain {
        #[command(flatten)]
        common: CommonArgs,
        /// Reuse predictions from an eval output directory.
        #[arg(long)]
        from_run: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    EdgebankInf,
    EdgebankTw,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON or key = value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Sources and destinations are separate node sets.
    #[arg(long)]
    bipartite: bool,
    #[arg(long)]
    delimiter: Option<char>,
    #[arg(long)]
    no_header: bool,
    /// Sort rows by timestamp instead of rejecting unordered input.
    #[arg(long)]
    sort: bool,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,

    #[arg(long)]
    background_size: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_prompt_chars: Option<usize>,
    /// Drop the in-context examples.
    #[arg(long)]
    no_icl: bool,
    #[arg(long)]
    no_neighbors: bool,
    #[arg(long)]
    no_background: bool,
    /// Record interactions only in the source node's history.
    #[arg(long)]
    directed: bool,
    /// Score 1 only when the first parsed id is correct.
    #[arg(long)]
    strict_top1: bool,

    #[arg(long)]
    mock: Option<MockOracle>,
    #[arg(long)]
    mock_script: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    max_parallel: Option<usize>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Append every request and response to this JSONL file.
    #[arg(long)]
    transcript: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_negatives: Option<usize>,
    /// Draw historical negatives from all train destinations.
    #[arg(long)]
    global_negatives: bool,
    #[arg(long)]
    negatives_file: Option<PathBuf>,
    #[arg(long)]
    edgebank_window: Option<u64>,
    #[arg(long)]
    max_queries: Option<usize>,
    #[arg(long)]
    first_n: Option<usize>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl CommonArgs {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if self.dataset.is_some() {
            c.dataset = self.dataset;
        }
        c.ingest.bipartite |= self.bipartite;
        set(&mut c.ingest.delimiter, self.delimiter);
        if self.no_header {
            c.ingest.has_header = false;
        }
        c.ingest.sort |= self.sort;
        set(&mut c.train_frac, self.train_frac);
        set(&mut c.val_frac, self.val_frac);

        set(&mut c.prompt.background_size, self.background_size);
        set(&mut c.prompt.shots, self.shots);
        set(&mut c.prompt.neighbors, self.neighbors);
        set(&mut c.prompt.batch_size, self.batch_size);
        set(&mut c.prompt.max_prompt_chars, self.max_prompt_chars);
        if self.no_icl {
            c.prompt.include_examples = false;
        }
        if self.no_neighbors {
            c.prompt.include_neighbors = false;
        }
        if self.no_background {
            c.prompt.include_background = false;
        }
        if self.directed {
            c.direction = Direction::Directed;
        }
        if self.strict_top1 {
            c.scoring = ScoringMode::StrictTop1;
        }

        if self.mock.is_some() {
            c.mock = self.mock;
        }
        if self.mock_script.is_some() {
            c.mock_script = self.mock_script;
        }
        set(&mut c.endpoint.base_url, self.base_url);
        set(&mut c.endpoint.model, self.model);
        if self.api_key_env.is_some() {
            c.endpoint.api_key_env = self.api_key_env;
        }
        set(&mut c.endpoint.max_parallel, self.max_parallel);
        set(&mut c.endpoint.timeout_secs, self.timeout_secs);
        set(&mut c.endpoint.max_retries, self.max_retries);
        set(&mut c.endpoint.max_tokens, self.max_tokens);
        set(&mut c.endpoint.temperature, self.temperature);
        if self.transcript.is_some() {
            c.endpoint.transcript = self.transcript;
        }

        set(&mut c.seed, self.seed);
        set(&mut c.num_negatives, self.num_negatives);
        if self.global_negatives {
            c.historical_pool = HistoricalPool::Global;
        }
        if self.negatives_file.is_some() {
            c.negatives_file = self.negatives_file;
        }
        if self.edgebank_window.is_some() {
            c.edgebank_window = self.edgebank_window;
        }
        if self.max_queries.is_some() {
            c.max_queries = self.max_queries;
        }
        set(&mut c.first_n, self.first_n);
        set(&mut c.output_dir, self.out);
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Stats { common, json } => {
            let config = common.resolve()?;
            let stats = tgtext_cli::cmd_stats(&config)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            } else {
                let name = config
                    .dataset
                    .as_deref()
                    .and_then(|p| p.file_stem())
                    .map_or_else(|| "dataset".into(), |s| s.to_string_lossy());
                print!("{}", stats_table(&name, &stats));
            }
        }
        Command::Eval { common, baseline } => {
            let config = common.resolve()?;
            let baseline = baseline.map(|b| match b {
                BaselineArg::EdgebankInf => Baseline::EdgebankInf,
                BaselineArg::EdgebankTw => Baseline::EdgebankTw,
            });
            let s = tgtext_cli::cmd_eval(&config, baseline)?;
            println!(
                "method={} queries={} mrr={:.4} hits@1={:.4} errors={} output={}",
                s.method,
                s.num_queries,
                s.mrr,
                s.hits_at_1,
                s.num_errors,
                config.output_dir.display()
            );
        }
        Command::Ablate {
            common,
            sweep_neighbors,
            sweep_flags,
        } => {
            let config = common.resolve()?;
            let sweep = Sweep {
                neighbors: sweep_neighbors,
                flags: sweep_flags
                    .iter()
                    .map(|f| AblationFlag::parse(f))
                    .collect::<Result<_, _>>()?,
            };
            let rows = tgtext_cli::cmd_ablate(&config, &sweep)?;
            print!("{}", tgtext_cli::ablation_csv(&rows));
        }
        Command::Explain { common, from_run } => {
            let config = common.resolve()?;
            let out = tgtext_cli::cmd_explain(&config, from_run.as_deref())?;
            println!("category\tcount\tfraction\tmrr");
            for row in &out.report.categories {
                let mrr = row.mrr.map_or_else(|| "-".to_owned(), |m| format!("{m:.4}"));
                println!("{}\t{}\t{:.4}\t{mrr}", row.label, row.count, row.fraction);
            }
            if out.failed > 0 {
                eprintln!("{} explanations failed", out.failed);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
