//! The full network, its side tables, and checkpoint persistence.

use std::path::Path;

use dualamr_graph::{RelationFrequency, SenseTable};
use dualamr_numeric::{Checkpoint, CheckpointError, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ModelConfig, RunConfig};
use crate::corpus::{CorpusRecord, Sidecar};
use crate::encoders::{GraphEncoder, SentenceInput, TextEncoder};
use crate::solvers::Solvers;
use crate::vocab::Vocabularies;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error("vocabulary hash mismatch: checkpoint has {stored}, found {actual}")]
    VocabHash { stored: String, actual: String },
    #[error(transparent)]
    Numeric(#[from] dualamr_numeric::NumericError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone)]
pub struct Network {
    pub text: TextEncoder,
    pub graph: GraphEncoder,
    pub solvers: Solvers,
}

impl Network {
    pub fn new(store: &mut ParamStore, c: &ModelConfig, v: &Vocabularies, rng: &mut ChaCha8Rng) -> Self {
        Network {
            text: TextEncoder::new(store, c, v, rng),
            graph: GraphEncoder::new(store, c, v, rng),
            solvers: Solvers::new(store, c, v.concept.len(), v.labels.len(), rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocabs: Vocabularies,
    pub senses: SenseTable,
    pub relations: RelationFrequency,
    pub store: ParamStore,
    pub net: Network,
}

/// Everything in a checkpoint besides the tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub config: RunConfig,
    pub vocab_hash: String,
    pub vocabularies: Vocabularies,
    pub senses: String,
    pub relations: String,
    pub step: usize,
    pub dev_smatch: Option<f64>,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(
        config: ModelConfig,
        vocabs: Vocabularies,
        senses: SenseTable,
        relations: RelationFrequency,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = Network::new(&mut store, &config, &vocabs, &mut rng);
        Model {
            config,
            vocabs,
            senses,
            relations,
            store,
            net,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count()
    }

    /// Resolves a corpus record into model input, attaching contextual
    /// vectors when the model uses them.
    pub fn input(&self, rec: &CorpusRecord, sidecar: Option<&Sidecar>) -> Result<SentenceInput, ModelError> {
        let s = SentenceInput::new(&self.vocabs, &rec.tokens, &rec.lemmas, &rec.pos, &rec.ner);
        if self.config.context_width == 0 {
            return Ok(s);
        }
        let key = rec.context.as_deref().unwrap_or(&rec.id);
        let vectors = sidecar
            .and_then(|m| m.get(key))
            .ok_or_else(|| ModelError::Input(format!("record {}: no contextual vectors under `{key}`", rec.id)))?;
        if vectors.ncols() != self.config.context_width {
            return Err(ModelError::Input(format!(
                "record {}: contextual width {} but the model expects {}",
                rec.id,
                vectors.ncols(),
                self.config.context_width
            )));
        }
        s.with_context(vectors)
            .map_err(|e| ModelError::Input(format!("record {}: {e}", rec.id)))
    }

    pub fn to_checkpoint(&self, run: &RunConfig, step: usize, dev_smatch: Option<f64>) -> Checkpoint {
        let mut run = run.clone();
        run.model = self.config.clone();
        let meta = Metadata {
            config: run,
            vocab_hash: self.vocabs.hash(),
            vocabularies: self.vocabs.clone(),
            senses: self.senses.to_tsv(),
            relations: self.relations.to_tsv(),
            step,
            dev_smatch,
        };
        Checkpoint {
            metadata: serde_json::to_string_pretty(&meta).expect("metadata serializes"),
            tensors: self.store.to_tensors(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Model, Metadata), ModelError> {
        let meta: Metadata = serde_json::from_str(&ck.metadata).map_err(|e| ModelError::Metadata(e.to_string()))?;
        let actual = meta.vocabularies.hash();
        if actual != meta.vocab_hash {
            return Err(ModelError::VocabHash {
                stored: meta.vocab_hash.clone(),
                actual,
            });
        }
        meta.config
            .model
            .validate()
            .map_err(|e| ModelError::Metadata(e.to_string()))?;
        let senses = SenseTable::from_tsv(&meta.senses).map_err(ModelError::Metadata)?;
        let relations = RelationFrequency::from_tsv(&meta.relations).map_err(|e| ModelError::Metadata(e.to_string()))?;
        let mut model = Model::new(meta.config.model.clone(), meta.vocabularies.clone(), senses, relations, 0);
        model.store.load_tensors(&ck.tensors)?;
        Ok((model, meta))
    }

    pub fn save(&self, path: &Path, run: &RunConfig, step: usize, dev_smatch: Option<f64>) -> Result<(), ModelError> {
        Ok(self.to_checkpoint(run, step, dev_smatch).save(path)?)
    }

    pub fn load(path: &Path) -> Result<(Model, Metadata), ModelError> {
        Model::from_checkpoint(&Checkpoint::load(path)?)
    }
}
