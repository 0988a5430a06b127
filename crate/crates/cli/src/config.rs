use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cachenlg::model::DecoderKind;

use crate::CliError;

/// Environment variable naming the directory that relative data paths are
/// resolved against.
pub const DATA_ROOT_VAR: &str = "CACHENLG_DATA";

/// Every setting a command may read. Values come from defaults, then the
/// config file, then flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub k: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub edge_dim: usize,
    pub enc_steps: usize,
    pub beam: usize,
    pub len_reward: f64,
    pub max_words: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub decoder: DecoderKind,
    pub pairs: usize,
    pub max_concepts: usize,
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub references: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 5,
            hidden: 512,
            embed_dim: 300,
            edge_dim: 32,
            enc_steps: 5,
            beam: 5,
            len_reward: 0.0,
            max_words: 100,
            epochs: 10,
            lr: 1e-3,
            seed: 1,
            decoder: DecoderKind::Joint,
            pairs: 50,
            max_concepts: 8,
            corpus: None,
            embeddings: None,
            model: None,
            out: None,
            input: None,
            candidates: None,
            references: None,
        }
    }
}

pub const KEYS: [&str; 21] = [
    "k",
    "hidden",
    "embed-dim",
    "edge-dim",
    "enc-steps",
    "beam",
    "len-reward",
    "max-words",
    "epochs",
    "lr",
    "seed",
    "decoder",
    "pairs",
    "max-concepts",
    "corpus",
    "embeddings",
    "model",
    "out",
    "input",
    "candidates",
    "references",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key {key}", i + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one setting given as text.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| CliError::Usage(format!("{key}: cannot parse {value:?}: {e}")))
        }
        let path = || Some(PathBuf::from(value));
        match key {
            "k" => self.k = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "embed-dim" => self.embed_dim = num(key, value)?,
            "edge-dim" => self.edge_dim = num(key, value)?,
            "enc-steps" => self.enc_steps = num(key, value)?,
            "beam" => self.beam = num(key, value)?,
            "len-reward" => self.len_reward = num(key, value)?,
            "max-words" => self.max_words = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "decoder" => self.decoder = value.parse().map_err(CliError::Usage)?,
            "pairs" => self.pairs = num(key, value)?,
            "max-concepts" => self.max_concepts = num(key, value)?,
            "corpus" => self.corpus = path(),
            "embeddings" => self.embeddings = path(),
            "model" => self.model = path(),
            "out" => self.out = path(),
            "input" => self.input = path(),
            "candidates" => self.candidates = path(),
            "references" => self.references = path(),
            other => return Err(CliError::Usage(format!("unknown setting {other}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.k == 0 {
            return Err(CliError::Usage("k must be at least 1".into()));
        }
        if self.beam == 0 {
            return Err(CliError::Usage("beam must be at least 1".into()));
        }
        if self.hidden == 0 || self.embed_dim == 0 || self.edge_dim == 0 {
            return Err(CliError::Usage("dimensions must be positive".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(CliError::Usage("lr must be positive".into()));
        }
        Ok(())
    }

    /// Resolves relative data paths against the data root, if one is set.
    pub fn resolve_data_paths(&mut self, root: Option<&Path>) {
        let Some(root) = root else { return };
        for path in [
            &mut self.corpus,
            &mut self.embeddings,
            &mut self.input,
            &mut self.candidates,
            &mut self.references,
        ]
        .into_iter()
        .flatten()
        {
            if path.is_relative() {
                *path = root.join(&*path);
            }
        }
    }
}

/// The path for `name`, which must be set and exist.
pub fn existing(path: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let p = path
        .clone()
        .ok_or_else(|| CliError::Usage(format!("--{name} is required")))?;
    if !p.exists() {
        return Err(CliError::Data(format!("{}: no such file", p.display())));
    }
    Ok(p)
}

/// The path for `name`, which must be set.
pub fn required(path: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    path.clone().ok_or_else(|| CliError::Usage(format!("--{name} is required")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_then_set() {
        let file = parse_config_file("# run\nhidden = 32\nlen_reward=0.5\ndecoder=conditioned\n").unwrap();
        let mut c = RunConfig::default();
        for (k, v) in &file {
            c.set(k, v).unwrap();
        }
        c.set("hidden", "64").unwrap();
        assert_eq!(c.hidden, 64);
        assert_eq!(c.len_reward, 0.5);
        assert_eq!(c.decoder, DecoderKind::Conditioned);
    }

    #[test]
    fn bad_config() {
        assert!(parse_config_file("nonsense").is_err());
        assert!(parse_config_file("colour = red").is_err());
        let mut c = RunConfig::default();
        assert!(c.set("k", "x").is_err());
        c.k = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn data_root_applies_to_relative_data_paths() {
        let mut c = RunConfig {
            corpus: Some("train.txt".into()),
            model: Some("m.bin".into()),
            input: Some("/abs/in.txt".into()),
            ..RunConfig::default()
        };
        c.resolve_data_paths(Some(Path::new("/data")));
        assert_eq!(c.corpus.unwrap(), Path::new("/data/train.txt"));
        assert_eq!(c.model.unwrap(), Path::new("m.bin"));
        assert_eq!(c.input.unwrap(), Path::new("/abs/in.txt"));
    }
}
