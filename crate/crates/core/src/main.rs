//! Command-line interface: synthetic data generation, comparison-question
//! augmentation, two-phase training, evaluation, and inspection dumps.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hopqa::augment::{augment_comparison, builtin_lexicon, MutationLexicon};
use hopqa::corpus::{generate_synthetic, load_hotpot, save_hotpot, Dataset, GenConfig};
use hopqa::encoder::{load_pretrained_embeddings, Vocab};
use hopqa::error::{Error, Result};
use hopqa::eval::{evaluate, inspect};
use hopqa::model::{register_model_params, ModelConfig};
use hopqa::params::ParameterStore;
use hopqa::trainer::{load_checkpoint, save_checkpoint, train_two_phase, TrainConfig};

#[derive(Parser)]
#[command(name = "hopqa", about = "Self-assembling modular network for multi-hop QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-hop dataset in HotpotQA-style JSON.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        bridge_ratio: f64,
        #[arg(long, default_value_t = 200)]
        vocab_size: usize,
        #[arg(long, default_value_t = 4)]
        docs_per_example: usize,
        #[arg(long, default_value_t = 0.3)]
        distractor_overlap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Expand comparison questions with polarity/antonym/entity mutations.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional lexicon file overriding the built-in one.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model with the two-phase schedule and save a checkpoint.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Flat `key = value` config file; command-line flags take priority.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write per-epoch training records as JSON lines.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Optional pretrained embedding file (`token v1 .. vn` per line).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        emb_dim: Option<usize>,
        #[arg(long)]
        t_steps: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        lambda_bridge: Option<f64>,
        #[arg(long)]
        warmup_epochs: Option<usize>,
        /// Weight of the layout-commitment term in controller updates.
        #[arg(long)]
        entropy_beta: Option<f64>,
        /// Per-step price on non-NoOp module probability in controller updates.
        #[arg(long)]
        step_cost: Option<f64>,
        /// Run controller updates on the dev set instead of a train holdout.
        #[arg(long)]
        controller_on_dev: bool,
    },
    /// Evaluate a checkpoint: EM, F1, and induced-layout statistics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the full per-example report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump per-step module distributions and attention maps for one example.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Example id; defaults to the first example.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse a flat `key = value` config file (one pair per line, `#` comments).
fn parse_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(format!(
                "{}:{}: expected key = value, got {raw:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(
    map: &mut HashMap<String, String>,
    key: &str,
    into: &mut T,
) -> Result<()> {
    if let Some(v) = map.remove(key) {
        *into = v
            .parse()
            .map_err(|_| Error::config(format!("invalid value {v:?} for key {key}")))?;
    }
    Ok(())
}

fn apply_config_file(
    path: &Path,
    model: &mut ModelConfig,
    train: &mut TrainConfig,
) -> Result<()> {
    let mut map = parse_config_file(path)?;
    take(&mut map, "hidden", &mut model.hidden)?;
    take(&mut map, "emb_dim", &mut model.emb_dim)?;
    take(&mut map, "t_steps", &mut model.t_steps)?;
    take(&mut map, "depth", &mut model.depth)?;
    take(&mut map, "share_steps", &mut model.share_steps)?;
    take(&mut map, "span_max_len", &mut model.span_max_len)?;
    take(&mut map, "lambda_bridge", &mut model.lambda_bridge)?;
    take(&mut map, "epochs", &mut train.epochs)?;
    take(&mut map, "batch_size", &mut train.batch_size)?;
    take(&mut map, "lr", &mut train.lr)?;
    take(&mut map, "clip_norm", &mut train.clip_norm)?;
    take(&mut map, "controller_holdout", &mut train.controller_holdout)?;
    take(&mut map, "controller_on_dev", &mut train.controller_on_dev)?;
    take(&mut map, "warmup_epochs", &mut train.warmup_epochs)?;
    take(&mut map, "entropy_beta", &mut train.entropy_beta)?;
    take(&mut map, "step_cost", &mut train.step_cost)?;
    take(&mut map, "seed", &mut train.seed)?;
    if let Some(key) = map.keys().next() {
        return Err(Error::config(format!(
            "unknown config key {key:?} in {}",
            path.display()
        )));
    }
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::GenData {
            out,
            n,
            bridge_ratio,
            vocab_size,
            docs_per_example,
            distractor_overlap,
            seed,
        } => {
            let cfg = GenConfig {
                n,
                bridge_ratio,
                vocab_size,
                docs_per_example,
                distractor_overlap,
            };
            let data = generate_synthetic(&cfg, seed)?;
            save_hotpot(&data, &out)?;
            let bridges = data
                .examples
                .iter()
                .filter(|e| e.qtype == hopqa::corpus::QType::Bridge)
                .count();
            println!(
                "wrote {} examples ({} bridge, {} comparison) to {}",
                data.examples.len(),
                bridges,
                data.examples.len() - bridges,
                out.display()
            );
        }
        Command::Augment {
            input,
            out,
            lexicon,
            seed,
        } => {
            let data = load_hotpot(&input)?;
            let lex = match lexicon {
                Some(p) => MutationLexicon::from_file(&p)?,
                None => builtin_lexicon(),
            };
            let result = augment_comparison(&data, &lex, seed);
            let n_new = result.dataset.examples.len();
            let mut combined = data;
            combined.examples.extend(result.dataset.examples);
            save_hotpot(&combined, &out)?;
            println!(
                "wrote {} examples ({} new) to {}; skipped {} mutation(s)",
                combined.examples.len(),
                n_new,
                out.display(),
                result.skipped.len()
            );
            for (id, reason) in &result.skipped {
                println!("  skipped {id}: {reason}");
            }
        }
        Command::Train {
            train,
            dev,
            out,
            config,
            history,
            embeddings,
            seed,
            epochs,
            batch_size,
            lr,
            hidden,
            emb_dim,
            t_steps,
            depth,
            lambda_bridge,
            warmup_epochs,
            entropy_beta,
            step_cost,
            controller_on_dev,
        } => {
            let mut model_cfg = ModelConfig::default();
            let mut train_cfg = TrainConfig::default();
            if let Some(path) = config {
                apply_config_file(&path, &mut model_cfg, &mut train_cfg)?;
            }
            if let Some(v) = seed {
                train_cfg.seed = v;
            }
            if let Some(v) = epochs {
                train_cfg.epochs = v;
            }
            if let Some(v) = batch_size {
                train_cfg.batch_size = v;
            }
            if let Some(v) = lr {
                train_cfg.lr = v;
            }
            if let Some(v) = hidden {
                model_cfg.hidden = v;
            }
            if let Some(v) = emb_dim {
                model_cfg.emb_dim = v;
            }
            if let Some(v) = t_steps {
                model_cfg.t_steps = v;
            }
            if let Some(v) = depth {
                model_cfg.depth = v;
            }
            if let Some(v) = lambda_bridge {
                model_cfg.lambda_bridge = v;
            }
            if let Some(v) = warmup_epochs {
                train_cfg.warmup_epochs = v;
            }
            if let Some(v) = entropy_beta {
                train_cfg.entropy_beta = v;
            }
            if let Some(v) = step_cost {
                train_cfg.step_cost = v;
            }
            if controller_on_dev {
                train_cfg.controller_on_dev = true;
            }

            let train_data = load_hotpot(&train)?;
            let dev_data = match &dev {
                Some(p) => load_hotpot(p)?,
                None => Dataset { examples: vec![] },
            };
            let vocab = Vocab::from_examples(&train_data.examples);
            let mut store = ParameterStore::new(train_cfg.seed);
            register_model_params(&mut store, vocab.len(), &model_cfg)?;
            if let Some(path) = embeddings {
                let coverage = load_pretrained_embeddings(&path, &mut store, &vocab)?;
                println!("pretrained embedding coverage: {:.1}%", coverage * 100.0);
            }
            let history_ref = history.as_deref();
            let records = train_two_phase(
                &mut store,
                &train_data.examples,
                &dev_data.examples,
                &vocab,
                &model_cfg,
                &train_cfg,
                history_ref,
            )?;
            for r in &records {
                println!(
                    "epoch {}: loss {:.4} (answer {:.4}, bridge {:.4}), controller loss {:.4}",
                    r.epoch, r.phase_a_loss, r.phase_a_answer, r.phase_a_bridge, r.phase_b_loss
                );
            }
            save_checkpoint(&out, &store, &vocab, &model_cfg)?;
            println!("saved checkpoint to {}", out.display());
            if !dev_data.examples.is_empty() {
                let report = evaluate(&dev_data.examples, &store, &vocab, &model_cfg)?;
                println!(
                    "dev: em {:.4} f1 {:.4} over {} examples",
                    report.em, report.f1, report.n
                );
            }
        }
        Command::Eval {
            checkpoint,
            data,
            out,
        } => {
            let (store, vocab, model_cfg) = load_checkpoint(&checkpoint)?;
            let dataset = load_hotpot(&data)?;
            let report = evaluate(&dataset.examples, &store, &vocab, &model_cfg)?;
            println!(
                "em {:.4} f1 {:.4} n {} bridge-layout {:.4} comparison-layout {:.4}",
                report.em,
                report.f1,
                report.n,
                report.bridge_layout_match,
                report.comparison_layout_match
            );
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
                println!("wrote report to {}", path.display());
            }
        }
        Command::Inspect {
            checkpoint,
            data,
            id,
            out,
        } => {
            let (store, vocab, model_cfg) = load_checkpoint(&checkpoint)?;
            let dataset = load_hotpot(&data)?;
            let example = match &id {
                Some(want) => dataset
                    .examples
                    .iter()
                    .find(|e| &e.id == want)
                    .ok_or_else(|| Error::Input(format!("no example with id {want}")))?,
                None => dataset
                    .examples
                    .first()
                    .ok_or_else(|| Error::Input("empty dataset".to_string()))?,
            };
            let bundle = inspect(example, &store, &vocab, &model_cfg)?;
            let json = serde_json::to_string_pretty(&bundle)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, json)?;
                    println!("wrote inspection bundle to {}", path.display());
                }
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
