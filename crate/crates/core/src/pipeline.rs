//! The end-to-end commands: preprocessing, model training, generation,
//! evaluation, reward scoring and the phase ablation. Every command reads
//! and writes artifacts under the configured work directory and checks the
//! vocabulary hash of everything it loads.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Artifacts, RunConfig};
use crate::decoding::decode;
use crate::embed::{load_embeddings, train_ppmi_svd};
use crate::error::{Error, Result};
use crate::eval::{evaluate, read_pairs, EvaluationRow, SentenceScores};
use crate::lm::NGramLM;
use crate::nn::checkpoint::{read_header, ModelKind};
use crate::nn::Seq2Seq;
use crate::reward::{EmbeddingSimilarity, LmFluency, RewardBreakdown, RewardFunction};
use crate::text::{
    build_vocabulary, decode_ids, encode, parse_encoded, read_corpus_file, write_encoded, EncodedSequence,
    TokenSequence, Vocabulary,
};
use crate::trainer::{evaluate_vae, train_pup, write_curve, CurveRow, RewardSummary, TrainConfig, TrainingData};
use crate::vae::{train_vae, Vae, VaeEpochStats};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::write(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::write(path, e))
}

/// Writes `path` through `body`, attaching the path to any error.
pub fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    body(&mut w).map_err(|e| match e {
        Error::Stream(source) => Error::write(path, source),
        other => other,
    })?;
    finish(w, path)
}

fn require(path: &Path, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "missing {}; run `{produced_by}` first",
            path.display()
        )))
    }
}

fn required_path<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` must be set for this command")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessReport {
    pub vocab_size: usize,
    pub vocab_hash: u64,
    pub train_sentences: usize,
    pub valid_sentences: usize,
}

/// Builds the vocabulary, encodes both corpora and trains the fluency LM
/// and the similarity embeddings.
pub fn preprocess(cfg: &RunConfig) -> Result<PreprocessReport> {
    let art = cfg.artifacts();
    let train_path = required_path(&cfg.train_corpus, "train_corpus")?;
    let valid_path = required_path(&cfg.valid_corpus, "valid_corpus")?;
    let train = read_corpus_file(train_path)?;
    if train.is_empty() {
        return Err(Error::Invalid(format!("{} contains no sentences", train_path.display())));
    }
    let valid = read_corpus_file(valid_path)?;
    if valid.is_empty() {
        return Err(Error::Invalid(format!("{} contains no sentences", valid_path.display())));
    }
    let vocab = build_vocabulary(&train, cfg.min_freq, cfg.max_vocab);
    let train_ids: Vec<EncodedSequence> = train.iter().map(|s| encode(&vocab, s)).collect();
    let valid_ids: Vec<EncodedSequence> = valid.iter().map(|s| encode(&vocab, s)).collect();
    std::fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::write(&cfg.work_dir, e))?;
    vocab.save(&art.vocab)?;
    write_file(&art.train_ids, |w| write_encoded(w, &train_ids))?;
    write_file(&art.valid_ids, |w| write_encoded(w, &valid_ids))?;
    let lm = NGramLM::train(&train_ids, vocab.len(), vocab.hash(), cfg.lm_order, cfg.lm_discount)?;
    lm.save(&art.lm)?;
    let table = train_ppmi_svd(&train, cfg.embed_dim, cfg.embed_window)?;
    table.save(&art.embeddings)?;
    info!(
        "vocabulary {} (hash {:016x}); {} training and {} validation sentences",
        vocab.len(),
        vocab.hash(),
        train_ids.len(),
        valid_ids.len()
    );
    Ok(PreprocessReport {
        vocab_size: vocab.len(),
        vocab_hash: vocab.hash(),
        train_sentences: train_ids.len(),
        valid_sentences: valid_ids.len(),
    })
}

/// Preprocessed data loaded back from the work directory.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Vec<EncodedSequence>,
    pub valid: Vec<EncodedSequence>,
}

pub fn load_prepared(art: &Artifacts) -> Result<Prepared> {
    require(&art.vocab, "preprocess")?;
    let vocab = Vocabulary::load(&art.vocab)?;
    let read = |path: &Path| -> Result<Vec<EncodedSequence>> {
        require(path, "preprocess")?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_encoded(&text, vocab.len()).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    };
    let train = read(&art.train_ids)?;
    let valid = read(&art.valid_ids)?;
    Ok(Prepared { vocab, train, valid })
}

/// Builds the reward from the saved LM and embeddings. Inverse document
/// frequencies come from the encoded training corpus.
pub fn load_reward(cfg: &RunConfig, prepared: &Prepared) -> Result<RewardFunction> {
    let art = cfg.artifacts();
    require(&art.lm, "preprocess")?;
    require(&art.embeddings, "preprocess")?;
    let lm = NGramLM::load(&art.lm, Some(prepared.vocab.hash()))?;
    let corpus: Vec<TokenSequence> = prepared
        .train
        .iter()
        .map(|x| decode_ids(&prepared.vocab, x.ids()))
        .collect::<Result<_>>()?;
    let table = load_embeddings(&art.embeddings)?.with_idf(&corpus);
    Ok(RewardFunction::new(
        EmbeddingSimilarity { table },
        LmFluency::new(lm, prepared.vocab.clone())?,
        cfg.weights,
        cfg.thresholds,
    ))
}

pub const VAE_HISTORY_HEADER: &str = "epoch,elbo_loss,recon_per_token,kl,kl_weight";

pub fn cmd_train_vae(cfg: &RunConfig) -> Result<Vec<VaeEpochStats>> {
    let art = cfg.artifacts();
    let prepared = load_prepared(&art)?;
    let dims = cfg.dims(prepared.vocab.len());
    let (vae, history) = train_vae(&prepared.train, dims, prepared.vocab.hash(), &cfg.vae)?;
    vae.save(&art.vae)?;
    write_file(&art.vae_history, |w| {
        writeln!(w, "{VAE_HISTORY_HEADER}")?;
        for h in &history {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6}",
                h.epoch, h.elbo_loss, h.recon_per_token, h.kl, h.kl_weight
            )?;
        }
        Ok(())
    })?;
    Ok(history)
}

pub fn load_vae(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Vae> {
    let art = cfg.artifacts();
    require(&art.vae, "train-vae")?;
    let vae = Vae::load(&art.vae, Some(vocab.hash()))?;
    let dims = cfg.dims(vocab.len());
    if vae.dims() != dims {
        return Err(Error::Config(format!(
            "VAE checkpoint has dimensions {:?} but the config asks for {dims:?}",
            vae.dims()
        )));
    }
    Ok(vae)
}

pub struct PupRun {
    pub curve: Vec<CurveRow>,
    pub best_reward: f64,
    pub best_epoch: usize,
    pub final_reward: f64,
}

fn training_slice<'a>(cfg: &RunConfig, train: &'a [EncodedSequence]) -> &'a [EncodedSequence] {
    match cfg.pup_max_sentences {
        0 => train,
        n => &train[..n.min(train.len())],
    }
}

/// Trains the policy with `train` settings and writes the curve and
/// checkpoints to the given paths.
fn run_pup(
    cfg: &RunConfig,
    prepared: &Prepared,
    reward: &RewardFunction,
    vae: &Vae,
    train: &TrainConfig,
    curve_path: &Path,
    policy_path: Option<(&Path, &Path)>,
) -> Result<PupRun> {
    let data = TrainingData {
        train: training_slice(cfg, &prepared.train),
        valid: &prepared.valid,
        vocab: &prepared.vocab,
        reward,
    };
    let dims = cfg.dims(prepared.vocab.len());
    let every = cfg.checkpoint_every;
    let dir = cfg.work_dir.clone();
    let out = train_pup(&data, vae, dims, train, |row, policy| {
        if every > 0 && policy_path.is_some() && (row.epoch + 1) % every == 0 {
            policy.save(&dir.join(format!("policy_epoch{:05}.bin", row.epoch + 1)))?;
        }
        Ok(())
    })?;
    write_file(curve_path, |w| write_curve(w, &out.curve))?;
    if let Some((last, best)) = policy_path {
        out.policy.save(last)?;
        out.best.save(best)?;
    }
    let final_reward = out.curve.last().map(|r| r.mean_reward).unwrap_or(out.best_reward);
    Ok(PupRun {
        curve: out.curve,
        best_reward: out.best_reward,
        best_epoch: out.best_epoch,
        final_reward,
    })
}

pub fn cmd_train_pup(cfg: &RunConfig) -> Result<PupRun> {
    let art = cfg.artifacts();
    let prepared = load_prepared(&art)?;
    let reward = load_reward(cfg, &prepared)?;
    let vae = load_vae(cfg, &prepared.vocab)?;
    run_pup(
        cfg,
        &prepared,
        &reward,
        &vae,
        &cfg.train,
        &art.curve,
        Some((&art.policy, &art.best_policy)),
    )
}

/// Any model that can paraphrase.
pub enum Paraphraser {
    Policy(Seq2Seq),
    Vae(Vae),
}

/// Loads a policy or VAE checkpoint, detected from its header.
pub fn load_paraphraser(path: &Path, vocab: &Vocabulary) -> Result<Paraphraser> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, _) = read_header(&bytes, Some(vocab.hash()))?;
    Ok(match header.kind {
        ModelKind::Seq2Seq => Paraphraser::Policy(Seq2Seq::from_bytes(&bytes, Some(vocab.hash()))?),
        ModelKind::Vae => Paraphraser::Vae(Vae::from_bytes(&bytes, Some(vocab.hash()))?),
    })
}

/// One paraphrase per input sentence; an empty input gives an empty output.
pub fn paraphrase_all(
    cfg: &RunConfig,
    model: &Paraphraser,
    vocab: &Vocabulary,
    inputs: &[TokenSequence],
) -> Result<Vec<TokenSequence>> {
    cfg.decode.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    inputs
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Ok(TokenSequence::default());
            }
            let x = encode(vocab, s);
            let hyp = match model {
                Paraphraser::Policy(p) => decode(p, p.start(&x)?, &cfg.decode, &mut rng)?,
                Paraphraser::Vae(v) => v.sample(&x, cfg.train.vae_sample_mode, &mut rng)?,
            };
            decode_ids(vocab, hyp.interior())
        })
        .collect()
}

/// Reads `input` (one sentence per line, blank lines kept) and writes one
/// paraphrase per line to `output`. Uses the best policy by default.
pub fn cmd_paraphrase(cfg: &RunConfig, checkpoint: Option<&Path>, input: &Path, output: &Path) -> Result<usize> {
    let art = cfg.artifacts();
    require(&art.vocab, "preprocess")?;
    let vocab = Vocabulary::load(&art.vocab)?;
    let ckpt = checkpoint.unwrap_or(&art.best_policy);
    require(ckpt, "train-pup")?;
    let model = load_paraphraser(ckpt, &vocab)?;
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let inputs: Vec<TokenSequence> = text.lines().map(crate::text::tokenize).collect();
    let outputs = paraphrase_all(cfg, &model, &vocab, &inputs)?;
    write_file(output, |w| {
        for o in &outputs {
            writeln!(w, "{o}")?;
        }
        Ok(())
    })?;
    Ok(outputs.len())
}

/// Scores an outputs file (one line per test pair) against a test TSV.
pub fn cmd_evaluate(method: &str, outputs: &Path, pairs: &Path) -> Result<(EvaluationRow, Vec<SentenceScores>)> {
    let pairs = read_pairs(pairs)?;
    let text = std::fs::read_to_string(outputs).map_err(|e| Error::io(outputs, e))?;
    let outs: Vec<TokenSequence> = text.lines().map(crate::text::tokenize).collect();
    evaluate(method, &outs, &pairs)
}

/// Reward breakdowns for `source<TAB>candidate` lines.
pub fn cmd_score(cfg: &RunConfig, pairs: &Path) -> Result<Vec<RewardBreakdown>> {
    let prepared = load_prepared(&cfg.artifacts())?;
    let reward = load_reward(cfg, &prepared)?;
    let pairs = read_pairs(pairs)?;
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| match p.references.as_slice() {
            [candidate] => Ok(reward.score(&p.source, candidate)),
            _ => Err(Error::parse(i + 1, "expected exactly one candidate per source")),
        })
        .collect()
}

/// Result of one ablation variant.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantResult {
    pub name: &'static str,
    pub final_reward: f64,
    pub best_reward: f64,
    /// Highest validation reward at any epoch.
    pub curve_max: f64,
    pub curve: Vec<CurveRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub vae_greedy: RewardSummary,
    pub vae_stochastic: RewardSummary,
    pub variants: Vec<VariantResult>,
}

pub const ABLATION_HEADER: &str = "variant,final_reward,best_reward,curve_max";

pub const VARIANTS: [&str; 3] = ["pup", "no_transition", "no_pretrain"];

/// Trains the full method and both phase ablations from the same VAE and
/// seed, writing `ablation_<variant>.csv` curves and `ablation.csv`.
pub fn cmd_ablation(cfg: &RunConfig) -> Result<AblationReport> {
    let art = cfg.artifacts();
    let prepared = load_prepared(&art)?;
    let reward = load_reward(cfg, &prepared)?;
    let vae = load_vae(cfg, &prepared.vocab)?;
    ablation_with(cfg, &prepared, &reward, &vae)
}

/// As [`cmd_ablation`] with the inputs already loaded.
pub fn ablation_with(cfg: &RunConfig, prepared: &Prepared, reward: &RewardFunction, vae: &Vae) -> Result<AblationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vae_greedy = RewardSummary::from_breakdowns(&evaluate_vae(
        vae,
        &prepared.valid,
        &prepared.vocab,
        reward,
        crate::vae::SampleMode::Greedy,
        &mut rng,
    )?);
    let vae_stochastic = RewardSummary::from_breakdowns(&evaluate_vae(
        vae,
        &prepared.valid,
        &prepared.vocab,
        reward,
        crate::vae::SampleMode::Stochastic,
        &mut rng,
    )?);
    let mut variants = Vec::new();
    for name in VARIANTS {
        let train = TrainConfig {
            no_pretrain: name == "no_pretrain",
            no_transition: name == "no_transition",
            ..cfg.train
        };
        let path = cfg.work_dir.join(format!("ablation_{name}.csv"));
        let run = run_pup(cfg, prepared, reward, vae, &train, &path, None)?;
        let curve_max = run.curve.iter().map(|r| r.mean_reward).fold(f64::NEG_INFINITY, f64::max);
        info!("{name}: final reward {:.4}, best {:.4}", run.final_reward, run.best_reward);
        variants.push(VariantResult {
            name,
            final_reward: run.final_reward,
            best_reward: run.best_reward,
            curve_max,
            curve: run.curve,
        });
    }
    let path = cfg.work_dir.join("ablation.csv");
    write_file(&path, |w| {
        writeln!(w, "{ABLATION_HEADER}")?;
        writeln!(w, "vae_greedy,{:.6},{:.6},{:.6}", vae_greedy.reward, vae_greedy.reward, vae_greedy.reward)?;
        writeln!(
            w,
            "vae_stochastic,{:.6},{:.6},{:.6}",
            vae_stochastic.reward, vae_stochastic.reward, vae_stochastic.reward
        )?;
        for v in &variants {
            writeln!(w, "{},{:.6},{:.6},{:.6}", v.name, v.final_reward, v.best_reward, v.curve_max)?;
        }
        Ok(())
    })?;
    Ok(AblationReport {
        vae_greedy,
        vae_stochastic,
        variants,
    })
}

/// Settings for the synthetic templated corpus: small models and the
/// optimiser settings that train them in minutes on one core.
pub const TOY_CONFIG: &str = "\
train_corpus = train.txt
valid_corpus = valid.txt
test_pairs = test.tsv
work_dir = work
min_freq = 1
max_vocab = 200
embed_dim = 32
embed_size = 64
hidden_size = 64
vae_lr = 0.01
kl_anneal_epochs = 10
word_dropout = 0.6
vae_sample_mode = greedy
main_epochs = 100
lr_transition = 0.0001
lr_pretrain = 0.01
pup_max_sentences = 200
";

/// Writes `train.txt`, `valid.txt`, `test.tsv` (two references per
/// source), `test_sources.txt` and `toy.cfg` into `dir`.
pub fn write_toy_dataset(dir: &Path, train: usize, valid: usize, test: usize, seed: u64) -> Result<()> {
    if train == 0 || valid == 0 {
        return Err(Error::Invalid("toy corpus needs training and validation sentences".into()));
    }
    let sentences = crate::synth::templated_corpus(train + valid, seed);
    let pairs = crate::synth::templated_pairs(test, 2, seed.wrapping_add(0x7e57));
    let lines = |w: &mut BufWriter<File>, items: &[String]| -> Result<()> {
        for s in items {
            writeln!(w, "{s}")?;
        }
        Ok(())
    };
    write_file(&dir.join("train.txt"), |w| lines(w, &sentences[..train]))?;
    write_file(&dir.join("valid.txt"), |w| lines(w, &sentences[train..]))?;
    write_file(&dir.join("test.tsv"), |w| {
        for (src, refs) in &pairs {
            writeln!(w, "{src}\t{}", refs.join("\t"))?;
        }
        Ok(())
    })?;
    let sources: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
    write_file(&dir.join("test_sources.txt"), |w| lines(w, &sources))?;
    write_file(&dir.join("toy.cfg"), |w| {
        write!(w, "{TOY_CONFIG}seed = {seed}\n")?;
        Ok(())
    })
}
