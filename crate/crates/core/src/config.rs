//! Flat `key = value` configuration with flag overrides.
//!
//! Lines are `key = value`; `#` starts a comment. Every key has a desk-scale
//! default chosen to run end-to-end on commodity hardware; the `paper`
//! preset swaps in the production-scale vocabulary budgets (the sequence
//! lengths and optimizer settings are identical at both scales).

use std::path::Path;

use chrono::NaiveDate;

use crate::corpus::SynthSpec;
use crate::nn::AdamConfig;
use crate::text::SequenceSpec;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct VocabBudgets {
    pub word_n_freq: usize,
    pub word_n_chi: usize,
    pub trigram_n_freq: usize,
    pub name_n_freq: usize,
    pub salutation_n_freq: usize,
    pub salutation_n_chi: usize,
}

impl Default for VocabBudgets {
    fn default() -> Self {
        Self {
            word_n_freq: 5000,
            word_n_chi: 5000,
            trigram_n_freq: 3000,
            name_n_freq: 2000,
            salutation_n_freq: 2000,
            salutation_n_chi: 2000,
        }
    }
}

impl VocabBudgets {
    /// Production-scale budgets.
    pub fn paper_scale() -> Self {
        Self {
            word_n_freq: 400_000,
            word_n_chi: 400_000,
            trigram_n_freq: 30_000,
            name_n_freq: 200_000,
            salutation_n_freq: 200_000,
            salutation_n_chi: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochBudgets {
    pub content: usize,
    pub sender: usize,
    pub action: usize,
    pub salutation: usize,
    pub full: usize,
}

impl Default for EpochBudgets {
    fn default() -> Self {
        Self {
            content: 3,
            sender: 3,
            action: 3,
            salutation: 3,
            full: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AssembleConfig {
    pub per_day_cap: usize,
    pub action_window_days: u32,
    /// Duplication factor for hard examples listed via `--hard-ids`.
    pub hard_dup_factor: usize,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self {
            per_day_cap: 5,
            action_window_days: 3,
            hard_dup_factor: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// ψ_s cutoff splitting the population into G+/G−.
    pub cutoff: f64,
    pub m_plus: usize,
    pub m_minus: usize,
    /// Adjusted-precision targets for the recall sweep.
    pub targets: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cutoff: 0.5,
            m_plus: 400,
            m_minus: 1200,
            targets: vec![0.90, 0.96],
        }
    }
}

/// Everything the pipeline needs, with desk-scale defaults.
#[derive(Debug, Clone, Default)]
pub struct Config {
    pub seed: u64,
    pub synth: SynthDefaults,
    pub vocab: VocabBudgets,
    pub seq: SequenceSpec,
    pub train: TrainDefaults,
    pub assemble: AssembleConfig,
    pub eval: EvalConfig,
    /// Rectification threshold for the full model.
    pub q: f64,
}

/// Synth knobs without the seed (the pipeline derives it from the run seed).
#[derive(Debug, Clone)]
pub struct SynthDefaults(pub SynthSpec);

impl Default for SynthDefaults {
    fn default() -> Self {
        Self(SynthSpec::default())
    }
}

#[derive(Debug, Clone)]
pub struct TrainDefaults {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub val_fraction: f64,
    pub max_steps_per_epoch: Option<usize>,
    pub epochs: EpochBudgets,
}

impl Default for TrainDefaults {
    fn default() -> Self {
        Self {
            batch_size: 128,
            adam: AdamConfig::default(),
            val_fraction: 0.1,
            max_steps_per_epoch: None,
            epochs: EpochBudgets::default(),
        }
    }
}

impl TrainDefaults {
    pub fn to_train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs,
            adam: self.adam,
            val_fraction: self.val_fraction,
            max_steps_per_epoch: self.max_steps_per_epoch,
            seed,
        }
    }
}

impl Config {
    pub fn new() -> Self {
        Self {
            q: 0.99,
            ..Self::default_impl()
        }
    }

    fn default_impl() -> Self {
        Config {
            seed: 0,
            synth: SynthDefaults::default(),
            vocab: VocabBudgets::default(),
            seq: SequenceSpec::default(),
            train: TrainDefaults::default(),
            assemble: AssembleConfig::default(),
            eval: EvalConfig::default(),
            q: 0.99,
        }
    }

    /// Desk defaults with production-scale vocabulary budgets.
    pub fn paper_scale() -> Self {
        Self {
            vocab: VocabBudgets::paper_scale(),
            ..Self::new()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::new();
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{}: line {}: expected `key = value`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.seq.validate()?;
        self.synth.0.validate()?;
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::InvalidConfig(format!("q = {} outside [0, 1]", self.q)));
        }
        if !(10..=50).contains(&self.assemble.hard_dup_factor) {
            return Err(Error::InvalidConfig(format!(
                "hard_dup_factor {} outside [10, 50]",
                self.assemble.hard_dup_factor
            )));
        }
        if self.eval.m_plus == 0 || self.eval.m_minus == 0 {
            return Err(Error::InvalidConfig("sample counts must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidConfig(format!("bad value for {what}: needs a valid number"));
        macro_rules! parse {
            ($ty:ty, $key:expr) => {
                value.parse::<$ty>().map_err(|_| bad($key))?
            };
        }
        match key {
            "seed" => self.seed = parse!(u64, key),
            "preset" => match value {
                "desk" => {}
                "paper" => self.vocab = VocabBudgets::paper_scale(),
                _ => return Err(Error::InvalidConfig(format!("unknown preset `{value}`"))),
            },
            "q" => self.q = parse!(f64, key),

            "synth.n_messages" => self.synth.0.n_messages = parse!(usize, key),
            "synth.human_fraction" => self.synth.0.human_fraction = parse!(f64, key),
            "synth.unknown_fraction" => self.synth.0.unknown_fraction = parse!(f64, key),
            "synth.p_human_open_not_del" => self.synth.0.p_human_open_not_del = parse!(f64, key),
            "synth.p_human_del_not_open" => self.synth.0.p_human_del_not_open = parse!(f64, key),
            "synth.p_machine_open_not_del" => {
                self.synth.0.p_machine_open_not_del = parse!(f64, key)
            }
            "synth.p_machine_del_not_open" => {
                self.synth.0.p_machine_del_not_open = parse!(f64, key)
            }
            "synth.p_both" => self.synth.0.p_both = parse!(f64, key),
            "synth.salutation_rate_human" => self.synth.0.salutation_rate_human = parse!(f64, key),
            "synth.salutation_rate_machine" => {
                self.synth.0.salutation_rate_machine = parse!(f64, key)
            }
            "synth.ambiguous_text_fraction" => {
                self.synth.0.ambiguous_text_fraction = parse!(f64, key)
            }
            "synth.n_days" => self.synth.0.n_days = parse!(u32, key),
            "synth.start_day" => {
                self.synth.0.start_day = value
                    .parse::<NaiveDate>()
                    .map_err(|_| bad("synth.start_day (YYYY-MM-DD)"))?
            }

            "vocab.word_n_freq" => self.vocab.word_n_freq = parse!(usize, key),
            "vocab.word_n_chi" => self.vocab.word_n_chi = parse!(usize, key),
            "vocab.trigram_n_freq" => self.vocab.trigram_n_freq = parse!(usize, key),
            "vocab.name_n_freq" => self.vocab.name_n_freq = parse!(usize, key),
            "vocab.salutation_n_freq" => self.vocab.salutation_n_freq = parse!(usize, key),
            "vocab.salutation_n_chi" => self.vocab.salutation_n_chi = parse!(usize, key),

            "seq.subject" => self.seq.subject = parse!(usize, key),
            "seq.content_train" => self.seq.content_train = parse!(usize, key),
            "seq.content_infer" => self.seq.content_infer = parse!(usize, key),
            "seq.address" => self.seq.address = parse!(usize, key),
            "seq.name" => self.seq.name = parse!(usize, key),
            "seq.salutation" => self.seq.salutation = parse!(usize, key),

            "train.batch_size" => self.train.batch_size = parse!(usize, key),
            "train.lr" => self.train.adam.lr = parse!(f64, key),
            "train.beta1" => self.train.adam.beta1 = parse!(f64, key),
            "train.beta2" => self.train.adam.beta2 = parse!(f64, key),
            "train.epsilon" => self.train.adam.epsilon = parse!(f64, key),
            "train.val_fraction" => self.train.val_fraction = parse!(f64, key),
            "train.max_steps_per_epoch" => {
                self.train.max_steps_per_epoch = Some(parse!(usize, key))
            }
            "train.epochs.content" => self.train.epochs.content = parse!(usize, key),
            "train.epochs.sender" => self.train.epochs.sender = parse!(usize, key),
            "train.epochs.action" => self.train.epochs.action = parse!(usize, key),
            "train.epochs.salutation" => self.train.epochs.salutation = parse!(usize, key),
            "train.epochs.full" => self.train.epochs.full = parse!(usize, key),

            "assemble.per_day_cap" => self.assemble.per_day_cap = parse!(usize, key),
            "assemble.action_window_days" => self.assemble.action_window_days = parse!(u32, key),
            "assemble.hard_dup_factor" => self.assemble.hard_dup_factor = parse!(usize, key),

            "eval.cutoff" => self.eval.cutoff = parse!(f64, key),
            "eval.m_plus" => self.eval.m_plus = parse!(usize, key),
            "eval.m_minus" => self.eval.m_minus = parse!(usize, key),
            "eval.targets" => {
                let mut targets = Vec::new();
                for part in value.split(',') {
                    targets.push(
                        part.trim()
                            .parse::<f64>()
                            .map_err(|_| bad("eval.targets (comma-separated)"))?,
                    );
                }
                self.eval.targets = targets;
            }

            _ => return Err(Error::InvalidConfig(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }
}
