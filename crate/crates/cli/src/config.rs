//! Flat `key = value` run configuration with `#` comments.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use tpgn_core::model::WxMode;
use tpgn_core::train::{OptimizerKind, TrainConfig};

use crate::CliError;

const KEYS: &[&str] = &[
    "seed",
    "n_samples",
    "noise",
    "d",
    "t_max",
    "epochs",
    "lr",
    "optimizer",
    "beta1",
    "beta2",
    "eps",
    "batch_size",
    "clip",
    "wx_mode",
    "embeddings",
    "train_embeddings",
    "dataset",
    "output_dir",
];

#[derive(Clone, Debug, PartialEq)]
pub enum EmbeddingSpec {
    Synthetic,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub noise: f64,
    pub d: usize,
    pub t_max: usize,
    pub train: TrainConfig,
    pub embeddings: EmbeddingSpec,
    pub dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_samples: 500,
            noise: 0.1,
            d: 8,
            t_max: 8,
            train: TrainConfig::default(),
            embeddings: EmbeddingSpec::Synthetic,
            dataset: None,
            output_dir: None,
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> CliError {
    CliError::Config {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| parse_err(line, format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut entries: HashMap<String, (String, usize)> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| parse_err(line, format!("expected key = value, found {content:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(parse_err(line, format!("unknown key {k:?}")));
            }
            if entries.insert(k.to_string(), (v.to_string(), line)).is_some() {
                return Err(parse_err(line, format!("duplicate key {k:?}")));
            }
        }

        let mut cfg = RunConfig::default();
        let (mut beta1, mut beta2, mut eps) = (0.9, 0.999, 1e-8);
        let mut optimizer = "adam".to_string();
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (k, (v, line)) in &entries {
            let line = *line;
            match k.as_str() {
                "seed" => cfg.seed = num(k, v, line)?,
                "n_samples" => cfg.n_samples = num(k, v, line)?,
                "noise" => cfg.noise = num(k, v, line)?,
                "d" => cfg.d = num(k, v, line)?,
                "t_max" => cfg.t_max = num(k, v, line)?,
                "epochs" => cfg.train.epochs = num(k, v, line)?,
                "lr" => cfg.train.learning_rate = num(k, v, line)?,
                "optimizer" => optimizer = v.clone(),
                "beta1" => beta1 = num(k, v, line)?,
                "beta2" => beta2 = num(k, v, line)?,
                "eps" => eps = num(k, v, line)?,
                "batch_size" => cfg.train.batch_size = num(k, v, line)?,
                "clip" => {
                    cfg.train.clip = if v == "none" { None } else { Some(num(k, v, line)?) };
                }
                "wx_mode" => {
                    cfg.train.wx_mode =
                        WxMode::parse(v).map_err(|e| parse_err(line, e.to_string()))?;
                }
                "embeddings" => {
                    cfg.embeddings = if v == "synthetic" {
                        EmbeddingSpec::Synthetic
                    } else {
                        EmbeddingSpec::File(path(v))
                    };
                }
                "train_embeddings" => cfg.train.train_embeddings = num(k, v, line)?,
                "dataset" => cfg.dataset = Some(path(v)),
                "output_dir" => cfg.output_dir = Some(path(v)),
                _ => unreachable!("keys are checked above"),
            }
        }
        cfg.train.optimizer = match optimizer.as_str() {
            "adam" => OptimizerKind::Adam { beta1, beta2, eps },
            "sgd" => OptimizerKind::Sgd,
            other => {
                let line = entries["optimizer"].1;
                return Err(parse_err(line, format!("optimizer must be adam or sgd, got {other:?}")));
            }
        };
        cfg.train.seed = cfg.seed;
        if cfg.train.learning_rate <= 0.0 {
            return Err(parse_err(
                entries.get("lr").map_or(0, |e| e.1),
                "lr must be positive",
            ));
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::parse("# toy run\nseed = 7\nlr=0.05 # faster\nclip = none\nwx_mode = free\n", Path::new("/tmp")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.learning_rate, 0.05);
        assert_eq!(cfg.train.clip, None);
        assert_eq!(cfg.train.wx_mode, WxMode::Free);
        assert_eq!(cfg.d, 8);
        assert_eq!(RunConfig::parse("", Path::new(".")).unwrap(), RunConfig::default());
    }

    #[test]
    fn paths_resolve_against_base() {
        let cfg = RunConfig::parse("dataset = data.tsv\nembeddings = /abs/glove.txt\n", Path::new("/runs")).unwrap();
        assert_eq!(cfg.dataset, Some(PathBuf::from("/runs/data.tsv")));
        assert_eq!(cfg.embeddings, EmbeddingSpec::File(PathBuf::from("/abs/glove.txt")));
    }

    #[test]
    fn rejects_bad_input() {
        for (text, line) in [
            ("seed = 1\ncolour = red\n", 2),
            ("d = eight\n", 1),
            ("seed = 1\nseed = 2\n", 2),
            ("just words\n", 1),
            ("optimizer = rmsprop\n", 1),
        ] {
            match RunConfig::parse(text, Path::new(".")) {
                Err(CliError::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(RunConfig::parse("lr = 0\n", Path::new(".")).is_err());
    }
}
