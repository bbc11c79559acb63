//! Corpus preprocessing: wiki and sense removal, side tables, vocabularies.

use dualamr_graph::{remove_senses, serialize_penman, strip_wiki, AmrGraph, RelationFrequency, SenseTable};

use crate::corpus::{gold_graphs, CorpusError, CorpusRecord, Sidecar};
use crate::model::{Model, ModelError};
use crate::training::Example;
use crate::vocab::Vocabularies;

/// A processed training corpus and everything derived from it.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// records whose `amr` is the processed graph
    pub records: Vec<CorpusRecord>,
    pub graphs: Vec<AmrGraph>,
    pub senses: SenseTable,
    pub relations: RelationFrequency,
    pub vocabs: Vocabularies,
}

/// Wiki links removed, senses stripped.
pub fn process_graph(g: &AmrGraph) -> AmrGraph {
    remove_senses(&strip_wiki(g))
}

/// Processes gold graphs of `records`. The sense table is counted before
/// senses are stripped; everything else is built from processed graphs.
pub fn preprocess(records: &[CorpusRecord]) -> Result<Prepared, CorpusError> {
    let raw: Vec<AmrGraph> = gold_graphs(records)?.iter().map(strip_wiki).collect();
    let senses = SenseTable::build(&raw);
    let graphs: Vec<AmrGraph> = raw.iter().map(remove_senses).collect();
    let relations = RelationFrequency::from_graphs(&graphs);
    let vocabs = Vocabularies::build(records.iter().map(|r| r.columns()), &graphs, 1);
    let records = records
        .iter()
        .zip(&graphs)
        .map(|(r, g)| CorpusRecord {
            amr: Some(serialize_penman(g)),
            ..r.clone()
        })
        .collect();
    Ok(Prepared {
        records,
        graphs,
        senses,
        relations,
        vocabs,
    })
}

/// Training examples of records with gold graphs, which are processed
/// here; already processed graphs pass through unchanged.
pub fn examples(model: &Model, records: &[CorpusRecord], sidecar: Option<&Sidecar>) -> Result<Vec<Example>, ModelError> {
    let graphs = gold_graphs(records).map_err(|e| ModelError::Input(e.to_string()))?;
    records
        .iter()
        .zip(graphs)
        .map(|(r, g)| {
            Ok(Example {
                id: r.id.clone(),
                input: model.input(r, sidecar)?,
                graph: process_graph(&g),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;

    fn record(id: &str, amr: &str) -> String {
        format!(
            r#"{{"id":"{id}","tokens":["x"],"lemmas":["x"],"pos":["X"],"ner":["O"],"amr":{}}}"#,
            serde_json::to_string(amr).unwrap()
        )
    }

    #[test]
    fn sense_table_from_four_graphs() {
        let text = [
            record("a", "(g / go-02 :ARG0 (b / boy))"),
            record("b", "(g / go-02)"),
            record("c", "(g / go-02 :wiki \"Go\")"),
            record("d", "(g / go-01 :polarity -)"),
        ]
        .join("\n");
        let p = preprocess(&parse_corpus(&text).unwrap()).unwrap();
        assert_eq!(p.senses.lookup("go"), Some("go-02"));
        assert_eq!(p.graphs[0].node(0).label, "go");
        assert_eq!(p.graphs[2].len(), 1);
        assert_eq!(p.relations.count("wiki"), 0);
        assert_eq!(p.records[1].amr.as_deref(), Some("(v0 / go)"));
        assert!(p.vocabs.concept.get("go").is_some());
    }
}
