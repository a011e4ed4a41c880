//! Command-line pipeline for the human/machine email classifier.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.

use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mailclass_core::config::Config;
use mailclass_core::corpus::{
    generate_corpus, read_corpus, write_corpus, DEFAULT_MAX_MALFORMED_RATE,
};
use mailclass_core::labels::{build_action_labels, build_salutation_labels, write_labels};
use mailclass_core::pipeline::{
    assemble_training_sets, build_vocabularies, corpus_report, evaluate, load_model_checked,
    load_vocab_set, predict_batch, save_vocab_set, train_all, write_training_sets,
};
use mailclass_core::{corpus::dedup_and_cap, Error};

#[derive(Parser)]
#[command(
    name = "mailclass",
    about = "Train and evaluate message-level human/machine email classifiers",
    version
)]
struct Cli {
    /// Key-value config file (see configs/desk.conf).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Config override, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Master seed for all randomness (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled corpus.
    GenCorpus(GenCorpusArgs),
    /// Build the four vocabularies from a corpus.
    BuildVocab(BuildVocabArgs),
    /// Generate weak action/salutation label files from a corpus.
    GenLabels(CorpusOutDirArgs),
    /// Assemble the four training sets (after dedup/capping).
    Assemble(AssembleArgs),
    /// Train the four sub-models and the full model.
    Train(CorpusOutDirArgs),
    /// Score a corpus with a trained checkpoint.
    Predict(PredictArgs),
    /// Adjusted-metrics evaluation of a final model against a sampling model.
    Evaluate(EvaluateArgs),
    /// Corpus composition and behavioral selectivity report.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Output corpus path (one JSON record per line).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildVocabArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Directory for vocab_word/trigram/name/salutation.tsv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CorpusOutDirArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AssembleArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// File of message ids (one per line) to duplicate as hard examples.
    #[arg(long)]
    hard_ids: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding the vocabulary files the model was trained with.
    #[arg(long)]
    vocab_dir: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output scores file: message_id<TAB>p_human per line, input order.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = library default). Output is thread-invariant.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Sampling model checkpoint (ψ_s).
    #[arg(long)]
    checkpoint_s: PathBuf,
    /// Final model checkpoint (ψ_f).
    #[arg(long)]
    checkpoint_f: PathBuf,
    #[arg(long)]
    vocab_dir: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Metrics report output path (key = value lines).
    #[arg(long)]
    out: PathBuf,
    /// Optional judged-sample dump.
    #[arg(long)]
    judged_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Report output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<Config, Error> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::new(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("--set expects key=value, got `{kv}`"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &PathBuf) -> Result<Vec<mailclass_core::corpus::EmailRecord>, Error> {
    let file = read_corpus(path, DEFAULT_MAX_MALFORMED_RATE)?;
    if file.malformed_lines > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), file.malformed_lines);
    }
    Ok(file.records)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::GenCorpus(args) => {
            let mut spec = cfg.synth.0.clone();
            spec.seed = cfg.seed;
            let records = generate_corpus(&spec)?;
            write_corpus(&args.out, &records)?;
            println!("wrote {} records to {}", records.len(), args.out.display());
        }
        Cmd::BuildVocab(args) => {
            let records = read(&args.corpus)?;
            let deduped = dedup_and_cap(&records, cfg.assemble.per_day_cap);
            let vocabs = build_vocabularies(&deduped, &cfg)?;
            save_vocab_set(&vocabs, &args.out_dir)?;
            println!(
                "vocabularies: word {} trigram {} name {} salutation {} -> {}",
                vocabs.word.size(),
                vocabs.trigram.size(),
                vocabs.name.size(),
                vocabs.salutation.size(),
                args.out_dir.display()
            );
        }
        Cmd::GenLabels(args) => {
            let records = read(&args.corpus)?;
            std::fs::create_dir_all(&args.out_dir)?;
            let action = build_action_labels(&records);
            let salutation = build_salutation_labels(&records);
            write_labels(&args.out_dir.join("action_labels.tsv"), &action)?;
            write_labels(&args.out_dir.join("salutation_labels.tsv"), &salutation)?;
            println!(
                "wrote {} action labels and {} salutation labels to {}",
                action.len(),
                salutation.len(),
                args.out_dir.display()
            );
        }
        Cmd::Assemble(args) => {
            let records = read(&args.corpus)?;
            let deduped = dedup_and_cap(&records, cfg.assemble.per_day_cap);
            let hard_ids: Option<HashSet<String>> = match &args.hard_ids {
                Some(path) => Some(
                    std::fs::read_to_string(path)?
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(String::from)
                        .collect(),
                ),
                None => None,
            };
            let sets = assemble_training_sets(&deduped, &cfg, hard_ids.as_ref())?;
            write_training_sets(&sets, &args.out_dir)?;
            println!(
                "content {} action {} salutation {} sender {} -> {}",
                sets.content.len(),
                sets.action.len(),
                sets.salutation.len(),
                sets.sender.len(),
                args.out_dir.display()
            );
        }
        Cmd::Train(args) => {
            let records = read(&args.corpus)?;
            let summary = train_all(&records, &cfg, &args.out_dir)?;
            for m in &summary.models {
                println!(
                    "{}: best val loss {:.5} at epoch {}, {} steps, train accuracy {:.3} -> {}",
                    m.kind,
                    m.report.best_val_loss,
                    m.report.best_epoch,
                    m.report.steps,
                    m.train_accuracy,
                    m.path.display()
                );
            }
        }
        Cmd::Predict(args) => {
            let vocabs = load_vocab_set(&args.vocab_dir)?;
            let graph = load_model_checked(&args.checkpoint, &vocabs)?;
            let records = read(&args.corpus)?;
            let throughput =
                predict_batch(&graph, &records, &vocabs, &cfg, &args.out, args.threads)?;
            println!(
                "scored {} messages in {:.3}s ({:.0} messages/s) -> {}",
                throughput.messages,
                throughput.seconds,
                throughput.messages_per_second,
                args.out.display()
            );
        }
        Cmd::Evaluate(args) => {
            let vocabs = load_vocab_set(&args.vocab_dir)?;
            let model_s = load_model_checked(&args.checkpoint_s, &vocabs)?;
            let model_f = load_model_checked(&args.checkpoint_f, &vocabs)?;
            let records = read(&args.corpus)?;
            let report = evaluate(
                &model_s,
                &model_f,
                &records,
                &vocabs,
                &cfg,
                args.judged_out.as_deref(),
            )?;
            report.write(&args.out)?;
            print!("{}", report.to_text());
        }
        Cmd::Report(args) => {
            let records = read(&args.corpus)?;
            let report = corpus_report(&records);
            match &args.out {
                Some(path) => report.write(path)?,
                None => print!("{}", report.to_text()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
