//! Model configuration, parameter layout and checkpoints.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{EmbeddingTable, Vocabulary};
use crate::neural::{LstmParams, NeuralError, ParamId, ParamStore, INIT_SCALE};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecoderKind {
    Conditioned,
    Joint,
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Conditioned => "conditioned",
            DecoderKind::Joint => "joint",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conditioned" => Ok(DecoderKind::Conditioned),
            "joint" => Ok(DecoderKind::Joint),
            other => Err(format!("unknown decoder {other:?} (expected conditioned or joint)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub decoder: DecoderKind,
    /// Cache size.
    pub k: usize,
    /// Encoder and decoder recurrent state size.
    pub hidden: usize,
    /// Word and concept-label embedding size.
    pub embed_dim: usize,
    /// Edge-label embedding size.
    pub edge_dim: usize,
    /// Encoder propagation steps.
    pub enc_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            decoder: DecoderKind::Joint,
            k: 5,
            hidden: 512,
            embed_dim: 300,
            edge_dim: 32,
            enc_steps: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k == 0 {
            return Err(ModelError::Config("cache size must be at least 1".into()));
        }
        if self.hidden == 0 || self.embed_dim == 0 || self.edge_dim == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Size of an encoded concept state `[h; x]`.
    pub fn state_dim(&self) -> usize {
        self.hidden + self.embed_dim
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// An affine map `W x + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    fn new(store: &mut ParamStore, name: &str, out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: store.add_uniform(&format!("{name}.w"), &[out, inp], INIT_SCALE, rng),
            b: store.add_uniform(&format!("{name}.b"), &[out], INIT_SCALE, rng),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConditionedParams {
    pub act_ctx: Linear,
    pub act_in: Linear,
    pub act_lstm: LstmParams,
    pub act_out: Linear,
    pub u_beta: ParamId,
    pub u_eta: ParamId,
    pub eng_ctx: Linear,
    pub eng_in: Linear,
    pub eng_lstm: LstmParams,
    pub eng_out: Linear,
    pub u_r: ParamId,
    /// Pointer query before the first word.
    pub r_start: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct JointParams {
    pub act_ctx: Linear,
    pub act_in: Linear,
    pub act_lstm: LstmParams,
    pub act_out: Linear,
    pub u_beta: ParamId,
    pub u_eta: ParamId,
    pub eng_ctx: Linear,
    pub eng_in: Linear,
    pub eng_lstm: LstmParams,
    pub eng_out: Linear,
}

#[derive(Clone, Copy, Debug)]
pub enum DecoderParams {
    Conditioned(ConditionedParams),
    Joint(JointParams),
}

/// Everything but the parameter values: configuration, vocabularies and
/// the parameter layout.
#[derive(Clone, Debug)]
pub struct Net {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub relations: Vocabulary,
    pub word_emb: ParamId,
    pub rel_emb: ParamId,
    /// Stands in for sentinels, an empty stack and absent concepts.
    pub null: ParamId,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub net: Net,
    pub store: ParamStore,
}

impl Model {
    /// Fresh parameters drawn from a generator seeded with `seed`. Rows with
    /// pretrained vectors are copied from `embeddings` and frozen.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        relations: Vocabulary,
        embeddings: Option<&EmbeddingTable>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if let Some(t) = embeddings {
            if t.dim() != config.embed_dim {
                return Err(ModelError::Config(format!(
                    "embedding file has dimension {}, model expects {}",
                    t.dim(),
                    config.embed_dim
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (h, d_emb, d_edge) = (config.hidden, config.embed_dim, config.edge_dim);
        let d = config.state_dim();
        let v = vocab.len();

        let word_emb = store.add_uniform("emb.word", &[v, d_emb], INIT_SCALE, &mut rng);
        let rel_emb = store.add_uniform("emb.rel", &[relations.len(), d_edge], INIT_SCALE, &mut rng);
        let null = store.add_uniform("null", &[d], INIT_SCALE, &mut rng);
        let enc_in = d_emb + h + 2 * (h + d_emb + d_edge);
        let encoder = EncoderParams {
            w: store.add_uniform("enc.w", &[h, enc_in], INIT_SCALE, &mut rng),
            b: store.add_uniform("enc.b", &[h], INIT_SCALE, &mut rng),
        };

        let decoder = match config.decoder {
            DecoderKind::Conditioned => DecoderParams::Conditioned(ConditionedParams {
                act_ctx: Linear::new(&mut store, "act.ctx", h, 2 * d + h, &mut rng),
                act_in: Linear::new(&mut store, "act.in", h, d_emb + h, &mut rng),
                act_lstm: LstmParams::new(&mut store, "act.lstm", h, h, INIT_SCALE, &mut rng),
                act_out: Linear::new(&mut store, "act.out", 2, 2 * h, &mut rng),
                u_beta: store.add_uniform("act.u_beta", &[d, h], INIT_SCALE, &mut rng),
                u_eta: store.add_uniform("act.u_eta", &[d, h], INIT_SCALE, &mut rng),
                eng_ctx: Linear::new(&mut store, "eng.ctx", h, d, &mut rng),
                eng_in: Linear::new(&mut store, "eng.in", h, d_emb + h, &mut rng),
                eng_lstm: LstmParams::new(&mut store, "eng.lstm", h, h, INIT_SCALE, &mut rng),
                eng_out: Linear::new(&mut store, "eng.out", v, 2 * h, &mut rng),
                u_r: store.add_uniform("eng.u_r", &[d, h], INIT_SCALE, &mut rng),
                r_start: store.add_uniform("eng.r_start", &[h], INIT_SCALE, &mut rng),
            }),
            DecoderKind::Joint => {
                let row = d + 2 * d_edge;
                DecoderParams::Joint(JointParams {
                    act_ctx: Linear::new(&mut store, "act.ctx", h, 2 * d + h, &mut rng),
                    act_in: Linear::new(&mut store, "act.in", h, d_emb + h, &mut rng),
                    act_lstm: LstmParams::new(&mut store, "act.lstm", h, h, INIT_SCALE, &mut rng),
                    act_out: Linear::new(&mut store, "act.out", 2, 2 * h, &mut rng),
                    u_beta: store.add_uniform("act.u_beta", &[row, 2 * h], INIT_SCALE, &mut rng),
                    u_eta: store.add_uniform("act.u_eta", &[row, 2 * h], INIT_SCALE, &mut rng),
                    eng_ctx: Linear::new(&mut store, "eng.ctx", h, d, &mut rng),
                    eng_in: Linear::new(&mut store, "eng.in", h, d_emb + h, &mut rng),
                    eng_lstm: LstmParams::new(&mut store, "eng.lstm", h, h, INIT_SCALE, &mut rng),
                    eng_out: Linear::new(&mut store, "eng.out", v, 3 * h, &mut rng),
                })
            }
        };

        if let Some(t) = embeddings {
            let frozen: Vec<bool> = (0..v).map(|id| t.is_frozen(id)).collect();
            let data = store.value_mut(word_emb).data_mut();
            for (id, &f) in frozen.iter().enumerate() {
                if f {
                    data[id * d_emb..(id + 1) * d_emb].copy_from_slice(t.vector(id));
                }
            }
            store.set_frozen_rows(word_emb, frozen);
        }

        Ok(Model {
            net: Net {
                config,
                vocab,
                relations,
                word_emb,
                rel_emb,
                null,
                encoder,
                decoder,
            },
            store,
        })
    }

    /// Path of the text manifest written next to a checkpoint.
    pub fn manifest_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }

    /// Writes the tensor file at `path` and the manifest beside it.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let io_err = |p: &Path| {
            let p = p.display().to_string();
            move |source| ModelError::Io { path: p, source }
        };
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        self.store.write_tensors(&mut w).map_err(io_err(path))?;
        w.flush().map_err(io_err(path))?;
        let mpath = Self::manifest_path(path);
        fs::write(&mpath, self.manifest()).map_err(io_err(&mpath))
    }

    pub fn manifest(&self) -> String {
        let c = &self.net.config;
        let mut out = String::from("cachenlg-model 1\n");
        out += &format!("config decoder={}\n", c.decoder);
        out += &format!("config k={}\n", c.k);
        out += &format!("config hidden={}\n", c.hidden);
        out += &format!("config embed_dim={}\n", c.embed_dim);
        out += &format!("config edge_dim={}\n", c.edge_dim);
        out += &format!("config enc_steps={}\n", c.enc_steps);
        for t in self.net.vocab.tokens() {
            out += &format!("word {}\n", escape(t));
        }
        for t in self.net.relations.tokens() {
            out += &format!("relation {}\n", escape(t));
        }
        let frozen = &self.store.entry(self.net.word_emb).frozen_rows;
        if frozen.iter().any(|&f| f) {
            let ids: Vec<String> = (0..frozen.len()).filter(|&i| frozen[i]).map(|i| i.to_string()).collect();
            out += &format!("frozen-rows {}\n", ids.join(" "));
        }
        for e in self.store.entries() {
            let dims: Vec<String> = e.value.shape().iter().map(|d| d.to_string()).collect();
            out += &format!("tensor {} {}\n", e.name, dims.join("x"));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mpath = Self::manifest_path(path);
        let text = fs::read_to_string(&mpath).map_err(|source| ModelError::Io {
            path: mpath.display().to_string(),
            source,
        })?;
        let mut config = ModelConfig::default();
        let mut words = Vec::new();
        let mut relations = Vec::new();
        let mut frozen_ids = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: String| ModelError::Manifest { line: i + 1, reason };
            let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
            match kind {
                "cachenlg-model" => {
                    if rest != "1" {
                        return Err(bad(format!("unsupported version {rest}")));
                    }
                }
                "config" => {
                    let (key, value) = rest.split_once('=').ok_or_else(|| bad("expected key=value".into()))?;
                    let num = || value.parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
                    match key {
                        "decoder" => config.decoder = value.parse().map_err(bad)?,
                        "k" => config.k = num()?,
                        "hidden" => config.hidden = num()?,
                        "embed_dim" => config.embed_dim = num()?,
                        "edge_dim" => config.edge_dim = num()?,
                        "enc_steps" => config.enc_steps = num()?,
                        other => return Err(bad(format!("unknown key {other}"))),
                    }
                }
                "word" => words.push(unescape(rest)),
                "relation" => relations.push(unescape(rest)),
                "frozen-rows" => {
                    for id in rest.split_whitespace() {
                        frozen_ids.push(id.parse::<usize>().map_err(|e| bad(e.to_string()))?);
                    }
                }
                "tensor" | "" => {}
                other => return Err(bad(format!("unknown entry {other}"))),
            }
        }
        let bad_vocab = |what: &str| ModelError::Manifest {
            line: 0,
            reason: format!("malformed {what} vocabulary"),
        };
        let vocab = Vocabulary::from_tokens(words).ok_or_else(|| bad_vocab("word"))?;
        let relations = Vocabulary::from_tokens(relations).ok_or_else(|| bad_vocab("relation"))?;
        let mut model = Model::new(config, vocab, relations, None, 0)?;
        let tensors = {
            let file = fs::File::open(path).map_err(|source| ModelError::Io {
                path: path.display().to_string(),
                source,
            })?;
            ParamStore::read_tensors(&mut std::io::BufReader::new(file))?
        };
        model.store.load_values(tensors)?;
        if !frozen_ids.is_empty() {
            let n = model.net.vocab.len();
            let mut rows = vec![false; n];
            for id in frozen_ids {
                *rows.get_mut(id).ok_or_else(|| ModelError::Manifest {
                    line: 0,
                    reason: format!("frozen row {id} out of range"),
                })? = true;
            }
            model.store.set_frozen_rows(model.net.word_emb, rows);
        }
        Ok(model)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some(c) => out.push(c),
            None => out.push('\\'),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, parse_embeddings};

    fn small_config(decoder: DecoderKind) -> ModelConfig {
        ModelConfig {
            decoder,
            k: 3,
            hidden: 4,
            embed_dim: 3,
            edge_dim: 2,
            enc_steps: 2,
        }
    }

    fn vocabularies() -> (Vocabulary, Vocabulary) {
        let ex = parse_corpus(crate::corpus::tests::SAMPLE_BLOCK).unwrap();
        (Vocabulary::from_corpus(&ex), Vocabulary::relations_from_corpus(&ex))
    }

    #[test]
    fn same_seed_same_parameters() {
        let (v, r) = vocabularies();
        let a = Model::new(small_config(DecoderKind::Joint), v.clone(), r.clone(), None, 7).unwrap();
        let b = Model::new(small_config(DecoderKind::Joint), v.clone(), r.clone(), None, 7).unwrap();
        let c = Model::new(small_config(DecoderKind::Joint), v, r, None, 8).unwrap();
        let values = |m: &Model| m.store.entries().iter().map(|e| e.value.clone()).collect::<Vec<_>>();
        assert_eq!(values(&a), values(&b));
        assert_ne!(values(&a), values(&c));
    }

    #[test]
    fn pretrained_rows_are_copied_and_frozen() {
        let (v, r) = vocabularies();
        let table = parse_embeddings("center 1 2 3\nopen 4 5 6\n", &v).unwrap();
        let m = Model::new(small_config(DecoderKind::Conditioned), v.clone(), r, Some(&table), 1).unwrap();
        let emb = m.store.value(m.net.word_emb);
        assert_eq!(emb.row(v.id("center")), [1.0, 2.0, 3.0]);
        let frozen = &m.store.entry(m.net.word_emb).frozen_rows;
        assert_eq!(frozen.iter().filter(|&&f| f).count(), 2);
    }

    #[test]
    fn embedding_dimension_must_match() {
        let (v, r) = vocabularies();
        let table = parse_embeddings("center 1 2\n", &v).unwrap();
        assert!(Model::new(small_config(DecoderKind::Joint), v, r, Some(&table), 1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (v, r) = vocabularies();
        let table = parse_embeddings("center 1 2 3\n", &v).unwrap();
        let m = Model::new(small_config(DecoderKind::Conditioned), v, r, Some(&table), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        m.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.net.config, m.net.config);
        assert_eq!(loaded.net.vocab, m.net.vocab);
        assert_eq!(loaded.manifest(), m.manifest());
        for (a, b) in loaded.store.entries().iter().zip(m.store.entries()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn escaping_round_trips() {
        for s in ["plain", "with space", "back\\slash", "tab\there", "new\nline"] {
            assert_eq!(unescape(&escape(s)), s);
        }
    }
}
