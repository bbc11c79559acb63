//! JSON-lines corpus records and the binary contextual-embedding sidecar.
//!
//! Sidecar layout, repeated until end of file, all integers little-endian:
//! `u32` id length, id bytes (UTF-8), `u32` token count, `u32` width, then
//! `count * width` `f32` values in row-major order.

use std::collections::{BTreeMap, HashSet};

use dualamr_graph::{parse_penman, AmrGraph};
use dualamr_numeric::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::TokenColumns;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("sidecar: {0}")]
    Sidecar(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub lemmas: Vec<String>,
    pub pos: Vec<String>,
    pub ner: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amr: Option<String>,
    /// Sidecar key of this sentence's contextual vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

impl CorpusRecord {
    pub fn columns(&self) -> TokenColumns<'_> {
        TokenColumns {
            tokens: &self.tokens,
            lemmas: &self.lemmas,
            pos: &self.pos,
            ner: &self.ner,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.tokens.is_empty() {
            return Err(format!("record {}: no tokens", self.id));
        }
        let n = self.tokens.len();
        for (name, col) in [("lemmas", &self.lemmas), ("pos", &self.pos), ("ner", &self.ner)] {
            if col.len() != n {
                return Err(format!(
                    "record {}: {name} has {} entries but there are {n} tokens",
                    self.id,
                    col.len()
                ));
            }
        }
        for col in [&self.tokens, &self.lemmas, &self.pos, &self.ner] {
            if col.iter().any(|s| s.is_empty()) {
                return Err(format!("record {}: empty token feature", self.id));
            }
        }
        if self.amr.as_deref().is_some_and(|a| a.trim().is_empty()) {
            return Err(format!("record {}: field `amr` is present but empty", self.id));
        }
        if self.context.as_deref().is_some_and(str::is_empty) {
            return Err(format!("record {}: field `context` is present but empty", self.id));
        }
        Ok(())
    }

    /// Parses the gold graph, if any.
    pub fn graph(&self) -> Option<Result<AmrGraph, String>> {
        self.amr
            .as_deref()
            .map(|a| parse_penman(a).map_err(|e| format!("record {}: {e}", self.id)))
    }
}

/// Parses a JSON-lines corpus. Blank lines are skipped; ids must be unique.
pub fn parse_corpus(text: &str) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| CorpusError::Record { line: i + 1, msg };
        let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        rec.validate().map_err(err)?;
        if !ids.insert(rec.id.clone()) {
            return Err(err(format!("duplicate id {}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_corpus(records: &[CorpusRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Gold graphs of every record; all records must carry one.
pub fn gold_graphs(records: &[CorpusRecord]) -> Result<Vec<AmrGraph>, CorpusError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let missing = || CorpusError::Record {
                line: i + 1,
                msg: format!("record {} has no gold graph", r.id),
            };
            r.graph()
                .ok_or_else(missing)?
                .map_err(|msg| CorpusError::Record { line: i + 1, msg })
        })
        .collect()
}

pub type Sidecar = BTreeMap<String, Array2<f64>>;

pub fn read_sidecar(bytes: &[u8]) -> Result<Sidecar, CorpusError> {
    let bad = |m: &str| CorpusError::Sidecar(m.to_string());
    let mut out = BTreeMap::new();
    let mut rest = bytes;
    let take = |n: usize, rest: &mut &[u8]| -> Result<Vec<u8>, CorpusError> {
        if rest.len() < n {
            return Err(bad("truncated"));
        }
        let (a, b) = rest.split_at(n);
        *rest = b;
        Ok(a.to_vec())
    };
    let u32_at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
    while !rest.is_empty() {
        let len = u32_at(take(4, &mut rest)?);
        let id = String::from_utf8(take(len, &mut rest)?).map_err(|_| bad("id is not UTF-8"))?;
        let rows = u32_at(take(4, &mut rest)?);
        let cols = u32_at(take(4, &mut rest)?);
        let raw = take(rows * cols * 4, &mut rest)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let m = Array2::from_shape_vec((rows, cols), values).expect("sized above");
        if out.insert(id.clone(), m).is_some() {
            return Err(CorpusError::Sidecar(format!("duplicate id {id}")));
        }
    }
    Ok(out)
}

/// Writes a sidecar. Values are narrowed to `f32`.
pub fn write_sidecar(entries: &Sidecar) -> Vec<u8> {
    let mut out = Vec::new();
    for (id, m) in entries {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for v in m.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"s1","tokens":["The","boy","went"],"lemmas":["the","boy","go"],"pos":["DT","NN","VBD"],"ner":["O","O","O"],"amr":"(g / go-02 :ARG0 (b / boy))"}"#;

    #[test]
    fn parses_and_round_trips() {
        let recs = parse_corpus(&format!("{LINE}\n\n")).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].graph().unwrap().unwrap().len(), 2);
        assert_eq!(parse_corpus(&write_corpus(&recs)).unwrap(), recs);
    }

    #[test]
    fn rejects_bad_records_with_line_numbers() {
        let dup = format!("{LINE}\n{LINE}");
        assert!(matches!(parse_corpus(&dup), Err(CorpusError::Record { line: 2, .. })));
        let short = LINE.replace(r#""O","O","O""#, r#""O","O""#);
        assert!(matches!(parse_corpus(&short), Err(CorpusError::Record { line: 1, .. })));
        let empty_amr = LINE.replace("(g / go-02 :ARG0 (b / boy))", " ");
        let e = parse_corpus(&empty_amr).unwrap_err().to_string();
        assert!(e.contains("`amr` is present but empty"), "{e}");
        let empty_ctx = LINE.replace(r#""amr""#, r#""context":"","amr""#);
        assert!(parse_corpus(&empty_ctx).is_err());
        assert!(parse_corpus("{not json").is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let mut s = Sidecar::new();
        s.insert("a".into(), Array2::from_shape_vec((2, 3), vec![0.5, -1.0, 2.0, 0.25, 3.0, -4.5]).unwrap());
        s.insert("b".into(), Array2::zeros((1, 3)));
        let bytes = write_sidecar(&s);
        assert_eq!(read_sidecar(&bytes).unwrap(), s);
        assert!(read_sidecar(&bytes[..bytes.len() - 1]).is_err());
    }
}
