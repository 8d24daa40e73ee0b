//! Run configuration: a flat `key = value` text file. Every constant has a
//! default; unknown and repeated keys are rejected.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::decoding::{DecodeConfig, Strategy};
use crate::error::{Error, Result};
use crate::nn::ModelDims;
use crate::reward::{RewardThresholds, RewardWeights};
use crate::trainer::TrainConfig;
use crate::vae::{SampleMode, VaeConfig};

/// Vocabulary-size presets for the standard paraphrase datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dataset {
    Quora,
    WikiAnswers,
    Mscoco,
    Twitter,
    Custom,
}

impl Dataset {
    pub fn default_max_vocab(self) -> usize {
        match self {
            Dataset::Mscoco => 10_000,
            _ => 8_000,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dataset::Quora => "quora",
            Dataset::WikiAnswers => "wikianswers",
            Dataset::Mscoco => "mscoco",
            Dataset::Twitter => "twitter",
            Dataset::Custom => "custom",
        }
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quora" => Ok(Dataset::Quora),
            "wikianswers" => Ok(Dataset::WikiAnswers),
            "mscoco" => Ok(Dataset::Mscoco),
            "twitter" => Ok(Dataset::Twitter),
            "custom" => Ok(Dataset::Custom),
            _ => Err(Error::Config(format!("unknown dataset {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_corpus: Option<PathBuf>,
    pub valid_corpus: Option<PathBuf>,
    pub test_pairs: Option<PathBuf>,
    /// Directory holding every generated artifact.
    pub work_dir: PathBuf,
    pub dataset: Dataset,
    pub min_freq: u64,
    pub max_vocab: usize,
    pub lm_order: usize,
    pub lm_discount: f64,
    pub embed_dim: usize,
    pub embed_window: usize,
    pub weights: RewardWeights,
    pub thresholds: RewardThresholds,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
    pub vae: VaeConfig,
    pub train: TrainConfig,
    /// Train the policy on at most this many training sentences; 0 uses all.
    pub pup_max_sentences: usize,
    /// Save the policy every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub decode: DecodeConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_corpus: None,
            valid_corpus: None,
            test_pairs: None,
            work_dir: PathBuf::from("work"),
            dataset: Dataset::Custom,
            min_freq: 4,
            max_vocab: Dataset::Custom.default_max_vocab(),
            lm_order: 3,
            lm_discount: 0.75,
            embed_dim: 100,
            embed_window: 5,
            weights: RewardWeights::default(),
            thresholds: RewardThresholds::default(),
            embed_size: 300,
            hidden_size: 300,
            layers: 2,
            vae: VaeConfig::default(),
            train: TrainConfig::default(),
            pup_max_sentences: 0,
            checkpoint_every: 0,
            decode: DecodeConfig::default(),
            seed: 0,
        }
    }
}

trait CfgValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! numeric_value {
    ($($t:ty),*) => {$(
        impl CfgValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

numeric_value!(usize, u64, f64, bool);

impl CfgValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn format_value(&self) -> String {
        self.display().to_string()
    }
}

impl CfgValue for Option<PathBuf> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(Some(PathBuf::from(s)))
    }
    fn format_value(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
}

macro_rules! enum_value {
    ($t:ty, $fmt:expr) => {
        impl CfgValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn format_value(&self) -> String {
                let f: fn(&$t) -> &'static str = $fmt;
                f(self).to_string()
            }
        }
    };
}

enum_value!(Dataset, |d| d.name());
enum_value!(Strategy, |s| match s {
    Strategy::Greedy => "greedy",
    Strategy::Sample => "sample",
    Strategy::Beam => "beam",
});
enum_value!(SampleMode, |m| match m {
    SampleMode::Greedy => "greedy",
    SampleMode::Stochastic => "stochastic",
});

macro_rules! fields {
    ($($key:literal => $($field:ident).+;)*) => {
        /// Every recognised key, in the order written by [`RunConfig::to_cfg_string`].
        pub const KEYS: &[&str] = &[$($key),*];

        fn set_field(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
            match key {
                $($key => cfg.$($field).+ = CfgValue::parse_value(value)?,)*
                _ => return Err("unknown key".into()),
            }
            Ok(())
        }

        fn get_field(cfg: &RunConfig, key: &str) -> String {
            match key {
                $($key => cfg.$($field).+.format_value(),)*
                _ => String::new(),
            }
        }
    };
}

fields! {
    "train_corpus" => train_corpus;
    "valid_corpus" => valid_corpus;
    "test_pairs" => test_pairs;
    "work_dir" => work_dir;
    "dataset" => dataset;
    "min_freq" => min_freq;
    "max_vocab" => max_vocab;
    "lm_order" => lm_order;
    "lm_discount" => lm_discount;
    "embed_dim" => embed_dim;
    "embed_window" => embed_window;
    "reward_alpha" => weights.alpha;
    "reward_beta" => weights.beta;
    "reward_gamma" => weights.gamma;
    "tau_min" => thresholds.tau_min;
    "tau_max" => thresholds.tau_max;
    "lambda_min" => thresholds.lambda_min;
    "embed_size" => embed_size;
    "hidden_size" => hidden_size;
    "layers" => layers;
    "latent_size" => vae.latent;
    "vae_epochs" => vae.epochs;
    "vae_batch_size" => vae.batch_size;
    "vae_lr" => vae.lr;
    "vae_clip" => vae.clip;
    "kl_anneal_epochs" => vae.kl_anneal_epochs;
    "word_dropout" => vae.word_dropout;
    "vae_sample_mode" => train.vae_sample_mode;
    "pretrain_epochs" => train.pretrain_epochs;
    "main_epochs" => train.main_epochs;
    "lr_pretrain" => train.lr_pretrain;
    "lr_transition" => train.lr_transition;
    "lr_drl" => train.lr_drl;
    "drl_epsilon_threshold" => train.drl_epsilon_threshold;
    "batch_size" => train.batch_size;
    "clip" => train.clip;
    "slowdown" => train.slowdown;
    "kappa" => train.kappa;
    "no_pretrain" => train.no_pretrain;
    "no_transition" => train.no_transition;
    "pup_max_sentences" => pup_max_sentences;
    "checkpoint_every" => checkpoint_every;
    "decode_strategy" => decode.strategy;
    "beam_width" => decode.beam_width;
    "temperature" => decode.temperature;
    "length_penalty" => decode.length_penalty;
    "seed" => seed;
}

impl RunConfig {
    /// Parses configuration text. The `dataset` key sets the vocabulary
    /// cap unless `max_vocab` is also given.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::parse(line_no, format!("unknown key {key:?}")));
            }
            if value.is_empty() {
                return Err(Error::parse(line_no, format!("empty value for {key}")));
            }
            if let Some(first) = seen.insert(key, line_no) {
                return Err(Error::parse(line_no, format!("{key} already set on line {first}")));
            }
            entries.push((line_no, key, value));
        }
        let mut cfg = RunConfig::default();
        if let Some(&(line, _, value)) = entries.iter().find(|e| e.1 == "dataset") {
            cfg.dataset = Dataset::parse_value(value).map_err(|m| Error::parse(line, m))?;
            cfg.max_vocab = cfg.dataset.default_max_vocab();
        }
        for (line, key, value) in entries {
            set_field(&mut cfg, key, value).map_err(|m| Error::parse(line, format!("{key}: {m}")))?;
        }
        cfg.sync_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.work_dir);
        for p in [&mut cfg.train_corpus, &mut cfg.valid_corpus, &mut cfg.test_pairs]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        Ok(cfg)
    }

    fn sync_seeds(&mut self) {
        self.vae.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        if self.max_vocab < 4 {
            return Err(Error::Config("max_vocab must be at least 4".into()));
        }
        if self.lm_order == 0 || !(self.lm_discount > 0.0 && self.lm_discount < 1.0) {
            return Err(Error::Config("lm_order must be positive and lm_discount in (0, 1)".into()));
        }
        if self.embed_dim == 0 || self.embed_window == 0 {
            return Err(Error::Config("embed_dim and embed_window must be positive".into()));
        }
        self.weights.validate()?;
        self.thresholds.validate()?;
        self.dims(4).validate()?;
        self.vae.validate()?;
        self.train.validate()?;
        self.decode.validate()
    }

    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            embed: self.embed_size,
            hidden: self.hidden_size,
            layers: self.layers,
        }
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_cfg_string(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = get_field(self, key);
            if !value.is_empty() {
                let _ = writeln!(out, "{key} = {value}");
            }
        }
        out
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts::new(&self.work_dir)
    }
}

/// File names of everything the pipeline writes under the work directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifacts {
    pub vocab: PathBuf,
    pub train_ids: PathBuf,
    pub valid_ids: PathBuf,
    pub lm: PathBuf,
    pub embeddings: PathBuf,
    pub vae: PathBuf,
    pub vae_history: PathBuf,
    pub policy: PathBuf,
    pub best_policy: PathBuf,
    pub curve: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Artifacts {
            vocab: dir.join("vocab.tsv"),
            train_ids: dir.join("train.ids"),
            valid_ids: dir.join("valid.ids"),
            lm: dir.join("fluency.lm"),
            embeddings: dir.join("embeddings.txt"),
            vae: dir.join("vae.bin"),
            vae_history: dir.join("vae_history.csv"),
            policy: dir.join("policy.bin"),
            best_policy: dir.join("policy_best.bin"),
            curve: dir.join("reward_curve.csv"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_text() {
        let cfg = RunConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.lr_pretrain, 0.15);
        assert_eq!(cfg.decode.beam_width, 8);
        assert_eq!(cfg.max_vocab, 8000);
    }

    #[test]
    fn values_and_presets() {
        let cfg = RunConfig::parse("dataset = mscoco\nseed=7\nno_pretrain = true\ndecode_strategy = greedy\n").unwrap();
        assert_eq!(cfg.max_vocab, 10_000);
        assert_eq!(cfg.vae.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert!(cfg.train.no_pretrain);
        assert_eq!(cfg.decode.strategy, Strategy::Greedy);
        let cfg = RunConfig::parse("max_vocab = 50\ndataset = quora\n").unwrap();
        assert_eq!(cfg.max_vocab, 50);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "bogus = 1",
            "seed = 1\nseed = 2",
            "seed",
            "seed = ",
            "seed = -1",
            "kappa = 1.5",
            "tau_min = 0.99",
            "vae_sample_mode = sometimes",
            "hidden_size = 0",
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(err.is_validation(), "{text}: {err}");
        }
        let err = RunConfig::parse("seed = 1\n\nbogus = 2").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::parse("train_corpus = a b.txt\nlr_drl = 3e-5\nseed = 11").unwrap();
        cfg.thresholds.tau_max = 0.975;
        let again = RunConfig::parse(&cfg.to_cfg_string()).unwrap();
        assert_eq!(again, cfg);
    }
}
