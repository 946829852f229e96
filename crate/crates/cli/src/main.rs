use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cpduet_core::experiment::headline;
use cpduet_core::{load_corpus, rank_chapters, TableFormat, TimingStore};
use cpduet_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "cpduet", version, about = "Multi-model workbench for contest programming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Inspect a reference corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Summaries of recorded implementation times.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    corpus_root: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Listen address; loopback unless set.
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    host: IpAddr,
}

#[derive(Subcommand)]
enum CorpusCommand {
    List {
        root: PathBuf,
    },
    Search {
        root: PathBuf,
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    Summary {
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
    },
    Table {
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
    },
}

fn load_store(data_dir: &std::path::Path) -> Result<TimingStore> {
    let path = data_dir.join("experiment.csv");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TimingStore::from_store_csv(&text)?)
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve(args) => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
                )
                .init();
            let mut config = match &args.config {
                Some(path) => ServiceConfig::load(path)?,
                None => ServiceConfig::default(),
            };
            if let Some(p) = args.port {
                config.port = p;
            }
            if let Some(root) = args.corpus_root {
                config.corpus_root = Some(root);
            }
            if let Some(dir) = args.data_dir {
                config.data_dir = dir;
            }
            config.validate()?;
            let addr = SocketAddr::new(args.host, config.port);
            tokio::runtime::Runtime::new()?.block_on(cpduet_service::serve(config, addr))?;
        }
        Command::Corpus(CorpusCommand::List { root }) => {
            let index = load_corpus(&root)?;
            for c in index.chapters() {
                println!("{}\t{}", c.alias, c.title);
            }
            eprintln!("{}", index.status_message());
        }
        Command::Corpus(CorpusCommand::Search { root, query, k }) => {
            if k == 0 {
                bail!("-k must be at least 1");
            }
            let index = load_corpus(&root)?;
            for hit in rank_chapters(&index, &query, k) {
                println!("{:.4}\t{}", hit.score, hit.alias);
            }
        }
        Command::Experiment(ExperimentCommand::Summary { data_dir }) => {
            let s = load_store(&data_dir)?.summarize()?;
            println!("total solo:      {:.2} min", s.total_solo);
            println!("total assisted:  {:.2} min", s.total_assisted);
            println!("total change:    {:+.2}%  ({})", s.total_change_pct, headline(s.total_change_pct));
            println!("mean of changes: {:+.2}%", s.per_problem_mean_change_pct);
        }
        Command::Experiment(ExperimentCommand::Table { data_dir, format }) => {
            let format: TableFormat = format.parse()?;
            print!("{}", load_store(&data_dir)?.export_table(format)?);
        }
    }
    Ok(())
}
