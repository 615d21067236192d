use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crossalign::cli::{self, RunConfig};
use crossalign::Result;

#[derive(Parser)]
#[command(name = "crossalign", version, about = "Correlation-aligned cross-modal retrieval")]
struct Args {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. `--set epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// TF-IDF featurize an `id<TAB>label<TAB>text` corpus.
    FeaturizeText {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Write a synthetic unpaired dataset and manifest.
    GenSynth,
    /// Train both branches; writes the model and per-epoch CSV.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// MAP of a trained model on the test partition.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// kl, euclidean, cosine, nc or all.
        #[arg(long)]
        metric: Option<String>,
        /// image_to_text, text_to_image or both.
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        per_query: bool,
    },
    /// Top-k cross-modal results for one test query.
    Retrieve {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        query_id: Option<String>,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        metric: Option<String>,
    },
    /// Train without some labels and compare held vs seen query MAP.
    HoldoutEval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated labels to hold out.
        #[arg(long)]
        held: Option<String>,
        #[arg(long)]
        metric: Option<String>,
    },
}

fn build_config(args: &Args) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| crossalign::Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    let mut set_path = |key: &str, p: &Option<PathBuf>| -> Result<()> {
        if let Some(p) = p {
            cfg.set(key, &p.to_string_lossy())?;
        }
        Ok(())
    };
    match &args.command {
        Command::FeaturizeText { corpus, .. } => set_path("corpus", corpus)?,
        Command::GenSynth => {}
        Command::Train { manifest, model }
        | Command::Eval { manifest, model, .. }
        | Command::Retrieve { manifest, model, .. } => {
            set_path("manifest", manifest)?;
            set_path("model", model)?;
        }
        Command::HoldoutEval { manifest, .. } => set_path("manifest", manifest)?,
    }
    match &args.command {
        Command::FeaturizeText { top_k: Some(k), .. } => cfg.top_k = Some(*k),
        Command::Eval { metric, direction, per_query, .. } => {
            if let Some(m) = metric {
                cfg.set("metric", m)?;
            }
            if let Some(d) = direction {
                cfg.set("direction", d)?;
            }
            cfg.per_query |= per_query;
        }
        Command::Retrieve { query_id, k, metric, .. } => {
            if let Some(q) = query_id {
                cfg.query_id = Some(q.clone());
            }
            if let Some(k) = k {
                cfg.k = *k;
            }
            if let Some(m) = metric {
                cfg.set("metric", m)?;
            }
        }
        Command::HoldoutEval { held, metric, .. } => {
            if let Some(h) = held {
                cfg.set("held_labels", h)?;
            }
            if let Some(m) = metric {
                cfg.set("metric", m)?;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn run(args: Args) -> Result<()> {
    let cfg = build_config(&args)?;
    let stdout = std::io::stdout();
    match args.command {
        Command::FeaturizeText { .. } => {
            let out = cli::cmd_featurize_text(&cfg)?;
            println!("vocabulary size {}, documents {}", out.vocab_size, out.num_docs);
            println!("wrote {} and {}", out.features_path.display(), out.vocab_path.display());
        }
        Command::GenSynth => {
            let manifest = cli::cmd_gen_synth(&cfg)?;
            println!("wrote {}", manifest.display());
        }
        Command::Train { .. } => {
            let out = cli::cmd_train(&cfg)?;
            if let Some(last) = out.log.last() {
                println!("final epoch loss {:.6}", last.total);
            }
            println!("wrote {} and {}", out.model_path.display(), out.log_path.display());
        }
        Command::Eval { .. } => {
            let reports = cli::cmd_eval(&cfg)?;
            cli::print_reports(stdout.lock(), &reports)?;
        }
        Command::Retrieve { .. } => {
            let ranking = cli::cmd_retrieve(&cfg)?;
            print!("{}", cli::format_ranking(&ranking));
        }
        Command::HoldoutEval { .. } => {
            let outcome = cli::cmd_holdout_eval(&cfg)?;
            println!("held-label queries:");
            cli::print_reports(stdout.lock(), &outcome.held)?;
            println!("seen-label queries:");
            cli::print_reports(stdout.lock(), &outcome.seen)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
