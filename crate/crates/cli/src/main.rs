use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use pup::config::RunConfig;
use pup::decoding::Strategy;
use pup::eval::{write_evaluation, write_scores, write_sentence_scores};
use pup::pipeline;
use pup::Result;

/// Progressive unsupervised paraphrasing.
#[derive(Parser, Debug)]
#[command(name = "pup", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the vocabulary, encode the corpora, train the fluency LM and
    /// similarity embeddings.
    Preprocess {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Train the VAE on the encoded training corpus.
    TrainVae {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Train the paraphrasing policy from the VAE.
    TrainPup {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Paraphrase every line of a text file.
    Paraphrase {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Policy or VAE checkpoint; defaults to the best policy.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Compute i-BLEU, BLEU, ROUGE-1 and ROUGE-2 of outputs against a test TSV.
    Evaluate {
        /// Generated sentences, one per test pair.
        #[arg(long)]
        outputs: PathBuf,
        /// `source<TAB>ref1<TAB>ref2...` lines.
        #[arg(long)]
        pairs: PathBuf,
        /// Corpus-level CSV.
        #[arg(long)]
        out: PathBuf,
        /// Per-sentence CSV.
        #[arg(long)]
        per_sentence: Option<PathBuf>,
        #[arg(long, default_value = "pup")]
        method: String,
    },
    /// Reward breakdown for `source<TAB>candidate` lines.
    Score {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the full method and the no-transition and no-pretrain variants.
    Ablation {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Write a synthetic templated corpus with a matching config.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 600)]
        train: usize,
        #[arg(long, default_value_t = 40)]
        valid: usize,
        #[arg(long, default_value_t = 40)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(config: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::load(config)?;
    info!("config {} (work dir {})", config.display(), cfg.work_dir.display());
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess { config } => {
            let r = pipeline::preprocess(&load(&config)?)?;
            println!(
                "vocabulary {} (hash {:016x}), {} training / {} validation sentences",
                r.vocab_size, r.vocab_hash, r.train_sentences, r.valid_sentences
            );
        }
        Command::TrainVae { config } => {
            let history = pipeline::cmd_train_vae(&load(&config)?)?;
            if let Some(last) = history.last() {
                println!(
                    "VAE trained for {} epochs; final ELBO loss {:.4}, KL {:.4}",
                    history.len(),
                    last.elbo_loss,
                    last.kl
                );
            }
        }
        Command::TrainPup { config } => {
            let run = pipeline::cmd_train_pup(&load(&config)?)?;
            println!(
                "final validation reward {:.4}; best {:.4} at epoch {}",
                run.final_reward, run.best_reward, run.best_epoch
            );
        }
        Command::Paraphrase {
            config,
            input,
            output,
            checkpoint,
            strategy,
            beam_width,
            temperature,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = strategy {
                cfg.decode.strategy = s;
            }
            if let Some(b) = beam_width {
                cfg.decode.beam_width = b;
            }
            if let Some(t) = temperature {
                cfg.decode.temperature = t;
            }
            let n = pipeline::cmd_paraphrase(&cfg, checkpoint.as_deref(), &input, &output)?;
            println!("wrote {n} lines to {}", output.display());
        }
        Command::Evaluate {
            outputs,
            pairs,
            out,
            per_sentence,
            method,
        } => {
            let (row, per) = pipeline::cmd_evaluate(&method, &outputs, &pairs)?;
            pipeline::write_file(&out, |w| write_evaluation(w, std::slice::from_ref(&row)))?;
            if let Some(path) = per_sentence {
                pipeline::write_file(&path, |w| write_sentence_scores(w, &per))?;
            }
            println!(
                "{}: i-BLEU {:.2}, BLEU {:.2}, ROUGE-1 {:.2}, ROUGE-2 {:.2}",
                row.method, row.i_bleu, row.bleu, row.rouge1, row.rouge2
            );
        }
        Command::Score { config, pairs, out } => {
            let rows = pipeline::cmd_score(&load(&config)?, &pairs)?;
            pipeline::write_file(&out, |w| write_scores(w, &rows))?;
            let mean = rows.iter().map(|r| r.total).sum::<f64>() / rows.len().max(1) as f64;
            println!("scored {} pairs; mean reward {mean:.4}", rows.len());
        }
        Command::Ablation { config } => {
            let report = pipeline::cmd_ablation(&load(&config)?)?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "vae greedy {:.4}, vae stochastic {:.4}", report.vae_greedy.reward, report.vae_stochastic.reward)?;
            for v in &report.variants {
                writeln!(out, "{}: final {:.4}, best {:.4}", v.name, v.final_reward, v.best_reward)?;
            }
        }
        Command::Synth {
            out_dir,
            train,
            valid,
            test,
            seed,
        } => {
            pipeline::write_toy_dataset(&out_dir, train, valid, test, seed)?;
            println!("wrote toy corpus and toy.cfg to {}", out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

