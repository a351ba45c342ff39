//! Run configuration: a UTF-8 `key=value` text format (one key per line,
//! `#` starts a comment), strict about unknown and duplicate keys. Every
//! key has a default, so an empty file is a valid configuration.

use std::path::Path;

use crate::model::ModelConfig;
use crate::train::{LossMode, TrainConfig};
use crate::{Error, Result};

/// All tunable keys plus optional file paths. Paths never enter the
/// config hash, so runs into different directories stay comparable.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // model
    pub in_steps: usize,
    pub out_steps: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub cheb_order: usize,
    pub target_feature: usize,
    pub use_moran: bool,
    pub use_macro: bool,
    pub use_micro: bool,
    pub macro_embed: usize,
    pub micro_hidden: usize,
    pub a0_sigma_km: f64,
    pub a0_threshold: f64,
    pub moran_k: usize,
    pub drop_missing_frac: f64,
    // training
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub rmsprop_alpha: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss_mode: String, // "fixed" | "uncertainty"
    pub lambda: f64,
    pub lr_decay: f64,
    pub max_steps: usize,
    // paths (excluded from the hash)
    pub data_dir: Option<String>,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            in_steps: 24,
            out_steps: 6,
            d_model: 64,
            heads: 2,
            blocks: 3,
            cheb_order: 3,
            target_feature: 0,
            use_moran: true,
            use_macro: true,
            use_micro: true,
            macro_embed: 16,
            micro_hidden: 16,
            a0_sigma_km: 500.0,
            a0_threshold: 0.05,
            moran_k: 8,
            drop_missing_frac: 0.5,
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 5e-4,
            rmsprop_alpha: 0.99,
            epsilon: 1e-8,
            max_epochs: 50,
            patience: 10,
            seed: 1,
            loss_mode: "fixed".into(),
            lambda: 0.5,
            lr_decay: 0.0,
            max_steps: 0,
            data_dir: None,
            out_dir: None,
        }
    }
}

/// The blend weight induced by a task variance: λ = 1/(2σ²).
pub fn lambda_from_sigma_sq(sigma_sq: f64) -> f64 {
    1.0 / (2.0 * sigma_sq)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        let mut sigma_sq: Option<f64> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{raw}'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value, &mut sigma_sq)?;
        }
        if let Some(s) = sigma_sq {
            if s <= 0.0 {
                return Err(Error::Config(format!("sigma_sq must be positive, got {s}")));
            }
            cfg.lambda = lambda_from_sigma_sq(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str, sigma_sq: &mut Option<f64>) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
        }
        match key {
            "in_steps" => self.in_steps = p(key, value)?,
            "out_steps" => self.out_steps = p(key, value)?,
            "d_model" => self.d_model = p(key, value)?,
            "heads" => self.heads = p(key, value)?,
            "blocks" => self.blocks = p(key, value)?,
            "cheb_order" => self.cheb_order = p(key, value)?,
            "target_feature" => self.target_feature = p(key, value)?,
            "use_moran" => self.use_moran = p(key, value)?,
            "use_macro" => self.use_macro = p(key, value)?,
            "use_micro" => self.use_micro = p(key, value)?,
            "macro_embed" => self.macro_embed = p(key, value)?,
            "micro_hidden" => self.micro_hidden = p(key, value)?,
            "a0_sigma_km" => self.a0_sigma_km = p(key, value)?,
            "a0_threshold" => self.a0_threshold = p(key, value)?,
            "moran_k" => self.moran_k = p(key, value)?,
            "drop_missing_frac" => self.drop_missing_frac = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "lr" => self.lr = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "rmsprop_alpha" => self.rmsprop_alpha = p(key, value)?,
            "epsilon" => self.epsilon = p(key, value)?,
            "max_epochs" => self.max_epochs = p(key, value)?,
            "patience" => self.patience = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "loss_mode" => self.loss_mode = value.to_string(),
            "lambda" => self.lambda = p(key, value)?,
            "sigma_sq" => *sigma_sq = Some(p(key, value)?),
            "lr_decay" => self.lr_decay = p(key, value)?,
            "max_steps" => self.max_steps = p(key, value)?,
            "data_dir" => self.data_dir = Some(value.to_string()),
            "out_dir" => self.out_dir = Some(value.to_string()),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.loss_mode != "fixed" && self.loss_mode != "uncertainty" {
            return Err(Error::Config(format!(
                "loss_mode must be 'fixed' or 'uncertainty', got '{}'",
                self.loss_mode
            )));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical text: every non-path key, alphabetically, one per line.
    pub fn canonical(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("a0_sigma_km", self.a0_sigma_km.to_string()),
            ("a0_threshold", self.a0_threshold.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("blocks", self.blocks.to_string()),
            ("cheb_order", self.cheb_order.to_string()),
            ("d_model", self.d_model.to_string()),
            ("drop_missing_frac", self.drop_missing_frac.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("heads", self.heads.to_string()),
            ("in_steps", self.in_steps.to_string()),
            ("lambda", self.lambda.to_string()),
            ("loss_mode", self.loss_mode.clone()),
            ("lr", self.lr.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("macro_embed", self.macro_embed.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("micro_hidden", self.micro_hidden.to_string()),
            ("moran_k", self.moran_k.to_string()),
            ("out_steps", self.out_steps.to_string()),
            ("patience", self.patience.to_string()),
            ("rmsprop_alpha", self.rmsprop_alpha.to_string()),
            ("seed", self.seed.to_string()),
            ("target_feature", self.target_feature.to_string()),
            ("use_macro", self.use_macro.to_string()),
            ("use_micro", self.use_micro.to_string()),
            ("use_moran", self.use_moran.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
        ];
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        pairs
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// FNV-1a hash of the canonical text, as 16 hex digits.
    pub fn hash(&self) -> String {
        fnv1a(self.canonical().as_bytes())
    }

    pub fn model_config(&self, n_nodes: usize, in_features: usize) -> ModelConfig {
        ModelConfig {
            n_nodes,
            in_features,
            in_steps: self.in_steps,
            out_steps: self.out_steps,
            d_model: self.d_model,
            heads: self.heads,
            blocks: self.blocks,
            cheb_order: self.cheb_order,
            target_feature: self.target_feature,
            use_moran: self.use_moran,
            use_macro: self.use_macro,
            use_micro: self.use_micro,
            macro_embed: self.macro_embed,
            micro_hidden: self.micro_hidden,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            rmsprop_alpha: self.rmsprop_alpha,
            epsilon: self.epsilon,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            loss_mode: self.loss_mode_enum(),
            lr_decay: self.lr_decay,
            max_steps: self.max_steps,
        }
    }

    pub fn loss_mode_enum(&self) -> LossMode {
        if self.loss_mode == "uncertainty" {
            LossMode::Uncertainty
        } else {
            LossMode::Fixed(self.lambda)
        }
    }

    pub fn pipeline_config(&self) -> crate::data::PipelineConfig {
        crate::data::PipelineConfig {
            t_in: self.in_steps,
            horizon: self.out_steps,
            target: self.target_feature,
            moran_k: self.moran_k,
            a0_sigma_km: self.a0_sigma_km,
            a0_threshold: self.a0_threshold,
            drop_missing_frac: self.drop_missing_frac,
        }
    }
}

/// 64-bit FNV-1a as 16 hex digits.
pub fn fnv1a(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
