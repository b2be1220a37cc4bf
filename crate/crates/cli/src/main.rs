use clap::{Args, Parser, Subcommand};
use plam::attention::HeadKind;
use plam::cost::{analytic_cost, to_csv};
use plam::harness::checkpoint::Checkpoint;
use plam::harness::config::RunConfig;
use plam::harness::corpus::{
    load_embeddings_bin, save_embeddings_bin, save_embeddings_text, write_cache, write_corpus,
    Dataset, Split,
};
use plam::harness::eval::{
    buckets_csv, evaluate, explain, groups_csv, match_modes, modes_report, oracle_scores, report,
};
use plam::harness::synth::{synth_generate, SynthConfig};
use plam::harness::train::{label_vectors, load_dataset, pretrain_embeddings, train};
use plam::tensor::Tensor;
use plam::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "plam", version, about = "Pseudo label-wise attention classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hierarchical corpus and label catalog.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        n_labels: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 4)]
        branching: usize,
        #[arg(long, default_value_t = 260)]
        n_docs: usize,
        #[arg(long, default_value_t = 120)]
        doc_len: usize,
        #[arg(long, default_value_t = 600)]
        vocab_size: usize,
        #[arg(long, default_value_t = 0.0)]
        zero_shot_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build the vocabulary and the tokenized document cache.
    Preprocess(RunArgs),
    /// Pre-train word vectors with skip-gram.
    PretrainEmb(RunArgs),
    /// Train a model and write the best checkpoint and the epoch log.
    Train(RunArgs),
    /// Score a split and write metrics plus group and bucket tables.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to `checkpoint.bin` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Replace model scores by the true label indicators.
        #[arg(long)]
        debug_oracle_scores: bool,
    },
    /// Head cost table over every combination of the given sizes.
    Cost {
        #[arg(long, value_delimiter = ',', default_value = "2500")]
        l_r: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "10000")]
        n: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "128")]
        m: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "128")]
        d_c: Vec<u64>,
        /// Write `cost.csv` here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attention weights per position behind chosen labels.
    Explain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated document ids.
        #[arg(long, value_delimiter = ',', required = true)]
        docs: Vec<String>,
        /// Comma-separated label codes; default: true and predicted labels.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
    },
    /// Map every label to its nearest pseudo attention mode.
    MatchModes {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        pseudo: PathBuf,
        #[arg(long)]
        labelwise: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Code prefix length defining siblings.
        #[arg(long, default_value_t = 3)]
        prefix_len: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Param(_) => 2,
        Error::Io { .. } | Error::Input(_) | Error::Load { .. } | Error::Index(_) => 3,
        Error::Numeric(_)
        | Error::EmptySupport
        | Error::AucUndefined(_)
        | Error::Shape(_)
        | Error::Contract(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("plam: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

/// Loads the config and resolves the output directory, creating it.
fn setup(args: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    let out = cfg.require("out")?.to_path_buf();
    mkdir(&out)?;
    Ok((cfg, out))
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!(
            "unknown split {other:?} (expected train, valid or test)"
        ))),
    }
}

/// Word vectors from `embeddings.bin` in the output directory when it
/// matches the vocabulary, otherwise freshly pre-trained.
fn embeddings(cfg: &RunConfig, ds: &Dataset, out: &Path) -> Result<Tensor> {
    let path = out.join("embeddings.bin");
    if path.exists() {
        let t = load_embeddings_bin(&path)?;
        if t.shape() == [ds.vocab.len(), cfg.d_e] {
            return Ok(t);
        }
    }
    pretrain_embeddings(cfg, ds)
}

fn load_model(path: &Path, ds: &Dataset) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    let c = ck.model.config();
    if c.vocab_size != ds.vocab.len() || c.n_labels != ds.catalog.len() {
        return Err(Error::Input(format!(
            "checkpoint {} was trained on {} tokens and {} labels, data has {} and {}",
            path.display(),
            c.vocab_size,
            c.n_labels,
            ds.vocab.len(),
            ds.catalog.len()
        )));
    }
    Ok(ck)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            n_labels,
            depth,
            branching,
            n_docs,
            doc_len,
            vocab_size,
            zero_shot_fraction,
            seed,
        } => {
            let cfg = SynthConfig {
                n_labels,
                depth,
                branching,
                n_docs,
                doc_len,
                vocab_size,
                zero_shot_fraction,
                seed,
            };
            let (docs, catalog) = synth_generate(&cfg)?;
            mkdir(&out)?;
            write_corpus(out.join("corpus.jsonl"), &docs)?;
            catalog.save_tsv(out.join("catalog.tsv"))?;
        }
        Command::Preprocess(args) => {
            let (cfg, out) = setup(&args)?;
            let ds = load_dataset(&cfg)?;
            ds.vocab.save_tsv(out.join("vocab.tsv"))?;
            write_cache(out.join("cache.jsonl"), &ds)?;
        }
        Command::PretrainEmb(args) => {
            let (cfg, out) = setup(&args)?;
            let ds = load_dataset(&cfg)?;
            let table = pretrain_embeddings(&cfg, &ds)?;
            save_embeddings_bin(out.join("embeddings.bin"), &table)?;
            save_embeddings_text(out.join("embeddings.vec"), &ds.vocab, &table)?;
        }
        Command::Train(args) => {
            let (cfg, out) = setup(&args)?;
            let ds = load_dataset(&cfg)?;
            let table = embeddings(&cfg, &ds, &out)?;
            let v = label_vectors(&cfg, &ds, &table)?;
            let log_path = out.join("log.jsonl");
            let mut log = Vec::new();
            let result = train(&cfg, &ds, Some(&table), v, &mut log);
            write(&log_path, &log)?;
            result?.checkpoint.save(out.join("checkpoint.bin"))?;
        }
        Command::Eval {
            run,
            checkpoint,
            split,
            debug_oracle_scores,
        } => {
            let (cfg, out) = setup(&run)?;
            let split = parse_split(&split)?;
            let ds = load_dataset(&cfg)?;
            let rep = if debug_oracle_scores {
                let docs = ds.split(split);
                report(&ds, split, &oracle_scores(docs, ds.catalog.len()), cfg.threshold)?
            } else {
                let path = checkpoint.unwrap_or_else(|| out.join("checkpoint.bin"));
                let ck = load_model(&path, &ds)?;
                evaluate(&ck.model, &ds, split, cfg.threshold)?
            };
            let json = serde_json::to_string_pretty(&rep).expect("reports serialize");
            write(&out.join("metrics.json"), json + "\n")?;
            write(&out.join("groups.csv"), groups_csv(&rep))?;
            write(&out.join("buckets.csv"), buckets_csv(&rep))?;
        }
        Command::Cost {
            l_r,
            n,
            m,
            d_c,
            out,
        } => {
            let mut rows = Vec::new();
            for &a in &l_r {
                for &b in &n {
                    for &c in &m {
                        for &d in &d_c {
                            rows.push(analytic_cost(a, b, c, d)?);
                        }
                    }
                }
            }
            let csv = to_csv(&rows);
            match out {
                Some(dir) => {
                    mkdir(&dir)?;
                    write(&dir.join("cost.csv"), csv)?;
                }
                None => print!("{csv}"),
            }
        }
        Command::Explain {
            run,
            checkpoint,
            docs,
            labels,
            top_k,
        } => {
            let (cfg, out) = setup(&run)?;
            let ds = load_dataset(&cfg)?;
            let path = checkpoint.unwrap_or_else(|| out.join("checkpoint.bin"));
            let ck = load_model(&path, &ds)?;
            let records = explain(&ck.model, &ds, &docs, labels.as_deref(), cfg.threshold, top_k)?;
            let text: String = records.iter().map(|r| r.to_json_line() + "\n").collect();
            write(&out.join("trace.jsonl"), text)?;
        }
        Command::MatchModes {
            run,
            pseudo,
            labelwise,
            split,
            prefix_len,
        } => {
            let (cfg, out) = setup(&run)?;
            let split = parse_split(&split)?;
            let ds = load_dataset(&cfg)?;
            let p = load_model(&pseudo, &ds)?;
            let l = load_model(&labelwise, &ds)?;
            if p.model.config().head != HeadKind::Pseudo || l.model.config().head != HeadKind::Labelwise {
                return Err(Error::Config(
                    "--pseudo and --labelwise must name pseudo and label-wise checkpoints".into(),
                ));
            }
            let docs = ds.split(split);
            let modes = match_modes(&p.model, &l.model, docs)?;
            let seen: Vec<bool> = ds.catalog.train_counts().iter().map(|&c| c > 0).collect();
            let rep = modes_report(&modes, &ds.catalog, &seen, docs.len(), prefix_len);
            let json = serde_json::to_string_pretty(&rep).expect("reports serialize");
            write(&out.join("modes.json"), json + "\n")?;
        }
    }
    Ok(())
}
