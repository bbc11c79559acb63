//! Hyperparameters, profiles and the flat `key = value` config format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl FromStr for Profile {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(ConfigError::BadValue {
                key: "profile".into(),
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

/// Network shape. Nothing here depends on the number of inference steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub text_layers: usize,
    pub graph_layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub lemma_dim: usize,
    pub pos_dim: usize,
    pub ner_dim: usize,
    pub concept_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_out: usize,
    pub concept_ffn: usize,
    pub relation_ffn: usize,
    pub rel_heads: usize,
    pub biaffine: usize,
    /// width of the optional per-token contextual vectors; 0 disables them
    pub context_width: usize,
    /// source attention in the graph encoder also sees the BOS state
    pub source_attends_bos: bool,
    /// wrap the state-update feed-forward nets in residual + layer norm
    pub state_residual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_steps: usize,
    /// first step trained with the frequency-sorted sibling order only
    pub switch_step: usize,
    pub warmup: usize,
    /// multiplier on the inverse-square-root schedule
    pub lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub dropout: f64,
    pub mask_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// dev evaluations without improvement before stopping
    pub patience: usize,
    pub eval_interval: usize,
    pub clip_norm: f64,
    /// also push every non-gold node's edge probability toward zero
    pub edge_negatives: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// rounds of iterative inference per expansion (N)
    pub steps: usize,
    pub beam: usize,
    pub smatch_restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            d: 512,
            text_layers: 4,
            graph_layers: 2,
            heads: 8,
            ffn: 1024,
            lemma_dim: 300,
            pos_dim: 32,
            ner_dim: 16,
            concept_dim: 300,
            char_dim: 32,
            char_filters: 256,
            char_out: 128,
            concept_ffn: 1024,
            relation_ffn: 1024,
            rel_heads: 8,
            biaffine: 100,
            context_width: 0,
            source_attends_bos: true,
            state_residual: false,
        }
    }

    pub fn desk() -> Self {
        ModelConfig {
            d: 128,
            text_layers: 2,
            graph_layers: 1,
            heads: 4,
            ffn: 256,
            lemma_dim: 64,
            pos_dim: 16,
            ner_dim: 8,
            concept_dim: 64,
            char_dim: 16,
            char_filters: 64,
            char_out: 32,
            concept_ffn: 256,
            relation_ffn: 256,
            rel_heads: 4,
            biaffine: 64,
            context_width: 0,
            source_attends_bos: true,
            state_residual: false,
        }
    }

    /// A very small network for gradient checks.
    pub fn tiny(d: usize) -> Self {
        ModelConfig {
            d,
            text_layers: 1,
            graph_layers: 1,
            heads: 2,
            ffn: d,
            lemma_dim: 3,
            pos_dim: 2,
            ner_dim: 2,
            concept_dim: 3,
            char_dim: 2,
            char_filters: 3,
            char_out: 3,
            concept_ffn: d,
            relation_ffn: d,
            rel_heads: 2,
            biaffine: 3,
            context_width: 0,
            source_attends_bos: true,
            state_residual: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("heads ({}) must divide d ({})", self.heads, self.d));
        }
        if self.rel_heads == 0 || self.d % self.rel_heads != 0 {
            return bad(format!("rel_heads ({}) must divide d ({})", self.rel_heads, self.d));
        }
        Ok(())
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            max_steps: 60_000,
            switch_step: 50_000,
            warmup: 2_000,
            lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-9,
            dropout: 0.2,
            mask_rate: 0.33,
            batch_size: 16,
            seed: 1,
            patience: 10,
            eval_interval: 1_000,
            clip_norm: 1.0,
            edge_negatives: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.switch_step >= self.max_steps {
            return bad("switch_step must be below max_steps");
        }
        for (name, r) in [("dropout", self.dropout), ("mask_rate", self.mask_rate)] {
            if !(0.0..1.0).contains(&r) {
                return Err(ConfigError::Invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.batch_size == 0 || self.warmup == 0 || self.eval_interval == 0 {
            return bad("batch_size, warmup and eval_interval must be positive");
        }
        Ok(())
    }
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            steps: 4,
            beam: 8,
            smatch_restarts: 4,
        }
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let model = match profile {
            Profile::Paper => ModelConfig::paper(),
            Profile::Desk => ModelConfig::desk(),
        };
        RunConfig {
            profile,
            model,
            train: TrainConfig::paper(),
            decode: DecodeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.train.validate()?;
        if self.decode.steps == 0 || self.decode.beam == 0 || self.decode.smatch_restarts == 0 {
            return Err(ConfigError::Invalid("steps, beam and smatch_restarts must be positive".into()));
        }
        Ok(())
    }

    /// Sets one field. `key` is either `section.field` or a bare field name,
    /// which is unambiguous across sections.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let (section, field) = match key.split_once('.') {
            Some((s, f)) => (s.to_string(), f.to_string()),
            None => {
                let found = ["model", "train", "decode"]
                    .into_iter()
                    .find(|s| tree[s].get(key).is_some())
                    .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
                (found.to_string(), key.to_string())
            }
        };
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        if section == "profile" || key == "profile" {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let slot = tree
            .get_mut(&section)
            .and_then(|s| s.get_mut(&field))
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        *slot = match slot {
            Value::Bool(_) => Value::Bool(value.parse().map_err(|_| bad())?),
            Value::Number(n) if n.is_f64() => serde_json::json!(value.parse::<f64>().map_err(|_| bad())?),
            Value::Number(_) => serde_json::json!(value.parse::<u64>().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        *self = serde_json::from_value(tree).map_err(|_| bad())?;
        Ok(())
    }

    /// Applies a `key = value` file; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Reads a config file. Its `profile` line, if any, picks the base
    /// values unless `profile` overrides it; desk is the fallback.
    pub fn from_text(text: &str, profile: Option<Profile>) -> Result<Self, ConfigError> {
        let mut named = None;
        let mut rest = String::new();
        for line in text.lines() {
            match line.split_once('=') {
                Some((k, v)) if k.trim() == "profile" => named = Some(v.trim().parse::<Profile>()?),
                // kept so that syntax errors report the right line
                _ => rest.push_str(line),
            }
            rest.push('\n');
        }
        let mut config = RunConfig::for_profile(profile.or(named).unwrap_or(Profile::Desk));
        config.apply_text(&rest)?;
        Ok(config)
    }

    /// Every resolved setting as `section.field = value` lines, in a fixed
    /// order.
    pub fn to_text(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut out = format!("profile = {}\n", self.profile);
        for section in ["model", "train", "decode"] {
            if let Value::Object(fields) = &tree[section] {
                for (k, v) in fields {
                    out.push_str(&format!("{section}.{k} = {v}\n"));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_match_their_tables() {
        let p = RunConfig::for_profile(Profile::Paper);
        assert_eq!((p.model.d, p.model.text_layers, p.model.graph_layers), (512, 4, 2));
        assert_eq!(p.model.lemma_dim + p.model.pos_dim + p.model.ner_dim + p.model.char_out, 476);
        assert_eq!(p.model.concept_dim + p.model.char_out, 428);
        assert_eq!((p.decode.steps, p.decode.beam), (4, 8));
        let d = RunConfig::for_profile(Profile::Desk);
        assert_eq!((d.model.d, d.model.text_layers, d.model.graph_layers, d.model.heads), (128, 2, 1, 4));
        p.validate().unwrap();
        d.validate().unwrap();
    }

    #[test]
    fn key_value_overrides() {
        let mut c = RunConfig::for_profile(Profile::Desk);
        c.apply_text("# comment\nd = 64\ntrain.dropout = 0.1\nedge_negatives = true\n\nsteps=2").unwrap();
        assert_eq!(c.model.d, 64);
        assert_eq!(c.train.dropout, 0.1);
        assert!(c.train.edge_negatives);
        assert_eq!(c.decode.steps, 2);
        assert!(matches!(c.set("nope", "1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(c.set("d", "x"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(c.apply_text("d 3"), Err(ConfigError::Syntax { line: 1 })));
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::for_profile(Profile::Desk);
        c.set("lr_scale", "0.5").unwrap();
        let mut back = RunConfig::for_profile(Profile::Desk);
        let body: String = c.to_text().lines().skip(1).map(|l| format!("{l}\n")).collect();
        back.apply_text(&body).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn resolved_text_loads_back() {
        let mut c = RunConfig::for_profile(Profile::Paper);
        c.set("beam", "3").unwrap();
        assert_eq!(RunConfig::from_text(&c.to_text(), None).unwrap(), c);
        let desk = RunConfig::from_text("profile = paper\nbeam = 3", Some(Profile::Desk)).unwrap();
        assert_eq!(desk.model, ModelConfig::desk());
        assert!(RunConfig::from_text("profile = huge", None).is_err());
        assert!(matches!(RunConfig::from_text("\n\nd", None), Err(ConfigError::Syntax { line: 3 })));
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::for_profile(Profile::Desk);
        c.train.switch_step = c.train.max_steps;
        assert!(c.validate().is_err());
        let mut c = RunConfig::for_profile(Profile::Desk);
        c.model.heads = 3;
        assert!(c.validate().is_err());
    }
}
