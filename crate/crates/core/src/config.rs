//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, unknown keys are errors.
//! Relative paths resolve against the directory of the config file.
//!
//! ```text
//! model = DistMult
//! dim = 64
//! epochs = 200
//! data_dir = splits
//! checkpoint_dir = ckpt
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{KgeError, Result};
use crate::eval::{SettingChoice, SidePolicy};
use crate::graph::SplitRatios;
use crate::model::ModelKind;
use crate::repurpose::Reduction;
use crate::train::{L2Mode, Optimizer, TrainConfig};

const DEFAULT_LAMBDA: f64 = 1e-5;

const TRAIN_KEYS: &[&str] = &[
    "dim",
    "epochs",
    "batch_size",
    "negatives",
    "optimizer",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "l2_mode",
    "l2_lambda",
    "gamma",
    "rescal_symmetric",
    "filter_false_negatives",
    "seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    /// Trainer settings in file order, validated at parse time and applied
    /// over the model's defaults by [`RunConfig::train_config`].
    train_entries: Vec<(String, String)>,
    pub seed: u64,
    pub triples: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Save every N epochs; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    pub split: SplitRatios,
    pub setting: SettingChoice,
    pub side: SidePolicy,
    pub k: usize,
    pub drugs: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub trials: Option<PathBuf>,
    pub lenient: bool,
    pub reduction: Reduction,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            train_entries: Vec::new(),
            seed: 0,
            triples: None,
            data_dir: None,
            checkpoint_dir: None,
            checkpoint_every: 10,
            split: SplitRatios::default(),
            setting: SettingChoice::Filtered,
            side: SidePolicy::HeadOnly,
            k: 100,
            drugs: None,
            targets: None,
            relations: None,
            trials: None,
            lenient: false,
            reduction: Reduction::Max,
        }
    }
}

fn parse_value<T: FromStr>(value: &str, what: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("invalid {what} `{value}`"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("invalid boolean `{value}`")),
    }
}

/// Applies one trainer key. Returns `Ok(false)` if `key` is not a trainer key.
pub fn apply_train_key(config: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<bool, String> {
    match key {
        "dim" => config.dim = parse_value(value, "dim")?,
        "epochs" => config.epochs = parse_value(value, "epochs")?,
        "batch_size" => config.batch_size = parse_value(value, "batch_size")?,
        "negatives" => config.negatives = parse_value(value, "negatives")?,
        "optimizer" => config.optimizer = value.parse::<Optimizer>().map_err(|e| e.to_string())?,
        "learning_rate" => config.learning_rate = parse_value(value, "learning_rate")?,
        "adam_beta1" => config.adam_beta1 = parse_value(value, "adam_beta1")?,
        "adam_beta2" => config.adam_beta2 = parse_value(value, "adam_beta2")?,
        "adam_eps" => config.adam_eps = parse_value(value, "adam_eps")?,
        "l2_mode" => {
            config.l2_mode = match value {
                "none" => L2Mode::None,
                "penalty" => match config.l2_mode {
                    L2Mode::Penalty(lambda) => L2Mode::Penalty(lambda),
                    _ => L2Mode::Penalty(DEFAULT_LAMBDA),
                },
                "project_entities" => L2Mode::ProjectEntities,
                _ => return Err(format!("invalid l2_mode `{value}` (none, penalty, project_entities)")),
            }
        }
        "l2_lambda" => config.l2_mode = L2Mode::Penalty(parse_value(value, "l2_lambda")?),
        "gamma" => config.gamma = parse_value(value, "gamma")?,
        "rescal_symmetric" => config.rescal_symmetric = parse_bool(value)?,
        "filter_false_negatives" => config.filter_false_negatives = parse_bool(value)?,
        "seed" => config.seed = parse_value(value, "seed")?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// The trainer settings as ordered `key = value` pairs. Feeding them back
/// through [`apply_train_key`] reproduces `config` (threads aside).
pub fn echo_train(config: &TrainConfig) -> Vec<(String, String)> {
    let mut out = vec![
        ("model".to_string(), config.model.to_string()),
        ("dim".to_string(), config.dim.to_string()),
        ("epochs".to_string(), config.epochs.to_string()),
        ("batch_size".to_string(), config.batch_size.to_string()),
        ("negatives".to_string(), config.negatives.to_string()),
        ("optimizer".to_string(), config.optimizer.to_string()),
        ("learning_rate".to_string(), format!("{:?}", config.learning_rate)),
        ("adam_beta1".to_string(), format!("{:?}", config.adam_beta1)),
        ("adam_beta2".to_string(), format!("{:?}", config.adam_beta2)),
        ("adam_eps".to_string(), format!("{:?}", config.adam_eps)),
        ("l2_mode".to_string(), config.l2_mode.to_string()),
    ];
    if let L2Mode::Penalty(lambda) = config.l2_mode {
        out.push(("l2_lambda".to_string(), format!("{lambda:?}")));
    }
    out.extend([
        ("gamma".to_string(), format!("{:?}", config.gamma)),
        ("rescal_symmetric".to_string(), config.rescal_symmetric.to_string()),
        ("filter_false_negatives".to_string(), config.filter_false_negatives.to_string()),
        ("seed".to_string(), config.seed.to_string()),
    ]);
    out
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        // validates trainer values as they are read
        let mut scratch = TrainConfig::new(ModelKind::DistMult);
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let format = |reason: String| KgeError::Format { line: line_no, reason };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(format(format!("duplicate key `{key}`")));
            }
            seen.push(key.to_string());
            let path = || Some(base_dir.join(value));
            match key {
                "model" => config.model = Some(value.parse().map_err(|e: KgeError| format(e.to_string()))?),
                "triples" => config.triples = path(),
                "data_dir" => config.data_dir = path(),
                "checkpoint_dir" => config.checkpoint_dir = path(),
                "drugs" => config.drugs = path(),
                "targets" => config.targets = path(),
                "relations" => config.relations = path(),
                "trials" => config.trials = path(),
                "checkpoint_every" => config.checkpoint_every = parse_value(value, key).map_err(format)?,
                "split" => config.split = value.parse().map_err(|e: KgeError| format(e.to_string()))?,
                "setting" => config.setting = value.parse().map_err(|e: KgeError| format(e.to_string()))?,
                "side" => config.side = value.parse().map_err(|e: KgeError| format(e.to_string()))?,
                "k" => config.k = parse_value(value, key).map_err(format)?,
                "lenient" => config.lenient = parse_bool(value).map_err(format)?,
                "reduction" => config.reduction = value.parse().map_err(|e: KgeError| format(e.to_string()))?,
                _ if TRAIN_KEYS.contains(&key) => {
                    apply_train_key(&mut scratch, key, value).map_err(format)?;
                    if key == "seed" {
                        config.seed = scratch.seed;
                    }
                    config.train_entries.push((key.to_string(), value.to_string()));
                }
                _ => {
                    return Err(KgeError::UnknownConfigKey {
                        key: key.to_string(),
                        line: line_no,
                    })
                }
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| KgeError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base).map_err(|e| e.in_file(path))
    }

    /// The model's defaults with this file's trainer keys applied on top.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let model = self
            .model
            .ok_or_else(|| KgeError::Config("missing required key `model`".into()))?;
        let mut config = TrainConfig::new(model);
        for (key, value) in &self.train_entries {
            apply_train_key(&mut config, key, value).map_err(KgeError::Config)?;
        }
        config.seed = self.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| KgeError::Config(format!("missing required key `{key}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_paths() {
        let text = "# run\nmodel = ComplEx\ndim = 32  # small\nl2_lambda = 0.001\nseed = 9\ndata_dir = splits\nsetting = filtered\nk = 5\n";
        let config = RunConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(config.data_dir.as_deref(), Some(Path::new("/base/splits")));
        assert_eq!(config.setting, SettingChoice::Filtered);
        assert_eq!(config.k, 5);
        let train = config.train_config().unwrap();
        assert_eq!(train.model, ModelKind::ComplEx);
        assert_eq!(train.dim, 32);
        assert_eq!(train.seed, 9);
        assert_eq!(train.l2_mode, L2Mode::Penalty(0.001));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("model = DistMult\nlearning_rat = 0.1\n", Path::new(".")).unwrap_err();
        match err {
            KgeError::UnknownConfigKey { key, line } => {
                assert_eq!(key, "learning_rat");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other}"),
        }
        let err = RunConfig::parse("model = DistMult\nlearning_rat = 0.1\n", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("learning_rat"));
    }

    #[test]
    fn bad_values_and_duplicates_carry_line_numbers() {
        let err = RunConfig::parse("model = DistMult\n\ndim = many\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, KgeError::Format { line: 3, .. }), "{err}");
        let err = RunConfig::parse("k = 1\nk = 2\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, KgeError::Format { line: 2, .. }), "{err}");
        let err = RunConfig::parse("just words\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, KgeError::Format { line: 1, .. }), "{err}");
    }

    #[test]
    fn missing_model_is_reported() {
        let config = RunConfig::parse("dim = 8\n", Path::new(".")).unwrap();
        assert!(config.train_config().unwrap_err().to_string().contains("model"));
    }

    #[test]
    fn model_defaults_hold_regardless_of_key_order() {
        let config = RunConfig::parse("dim = 8\nmodel = TransE_l1\n", Path::new(".")).unwrap();
        let train = config.train_config().unwrap();
        assert_eq!(train.gamma, crate::train::default_gamma(ModelKind::TransEL1));
        assert_eq!(train.dim, 8);
    }

    #[test]
    fn echo_round_trips() {
        for kind in ModelKind::ALL {
            let mut original = TrainConfig::new(kind);
            original.dim = 12;
            original.learning_rate = 0.1 + 0.2;
            original.rescal_symmetric = true;
            let mut rebuilt = TrainConfig::new(ModelKind::DistMult);
            for (k, v) in echo_train(&original) {
                if k == "model" {
                    rebuilt.model = v.parse().unwrap();
                } else {
                    assert!(apply_train_key(&mut rebuilt, &k, &v).unwrap(), "{k}");
                }
            }
            assert_eq!(rebuilt, original);
        }
    }
}
