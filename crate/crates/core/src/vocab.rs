//! Closed vocabularies with reserved sentinel entries.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use dualamr_graph::{invert_label, AmrGraph, EOG};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const BOG: &str = "<bog>";
pub const PAD: &str = "<pad>";

/// Index of UNK in every vocabulary.
pub const UNK_ID: usize = 0;
/// Index of BOS in the lemma, POS and NER vocabularies.
pub const BOS_ID: usize = 1;
/// Indices in the concept vocabulary.
pub const BOG_ID: usize = 1;
pub const EOG_ID: usize = 2;
/// Indices in the character vocabulary; padding must stay at 0.
pub const CHAR_UNK: usize = 1;
pub const CHAR_BOS: usize = 2;
pub const CHAR_BOG: usize = 3;
pub const CHAR_EOG: usize = 4;

/// An ordered list of strings with a reverse index.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items
    }
}

impl Vocab {
    pub fn from_items(items: Vec<String>) -> Self {
        let mut index = HashMap::with_capacity(items.len());
        for (i, s) in items.iter().enumerate() {
            let prev = index.insert(s.clone(), i);
            assert!(prev.is_none(), "duplicate vocabulary entry {s}");
        }
        Vocab { items, index }
    }

    /// Sentinels first, then the counted items by descending count and
    /// then alphabetically.
    fn build(sentinels: &[&str], counts: BTreeMap<String, usize>, min_count: usize) -> Self {
        let mut rest: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(s, c)| *c >= min_count && !sentinels.contains(&s.as_str()))
            .collect();
        rest.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let items = sentinels
            .iter()
            .map(|s| s.to_string())
            .chain(rest.into_iter().map(|(s, _)| s))
            .collect();
        Self::from_items(items)
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// Index of `s`, or UNK.
    pub fn id(&self, s: &str) -> usize {
        self.get(s).unwrap_or(UNK_ID)
    }

    pub fn item(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.items.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let items = Vec::<String>::deserialize(d)?;
        let mut seen = BTreeSet::new();
        if let Some(dup) = items.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(serde::de::Error::custom(format!("duplicate vocabulary entry {dup}")));
        }
        Ok(Vocab::from_items(items))
    }
}

/// Token features of one training sentence, as borrowed slices.
pub struct TokenColumns<'a> {
    pub tokens: &'a [String],
    pub lemmas: &'a [String],
    pub pos: &'a [String],
    pub ner: &'a [String],
}

/// How often a label appeared as a concept node and as an attribute value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelUse {
    pub concept: u64,
    pub attribute: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub lemma: Vocab,
    pub pos: Vocab,
    pub ner: Vocab,
    pub concept: Vocab,
    pub chars: Vocab,
    /// edge labels, forward and inverse forms
    pub labels: Vocab,
    pub label_use: BTreeMap<String, LabelUse>,
}

impl Vocabularies {
    /// Builds every vocabulary from processed training data.
    pub fn build<'a>(
        sentences: impl IntoIterator<Item = TokenColumns<'a>>,
        graphs: impl IntoIterator<Item = &'a AmrGraph>,
        min_concept_count: usize,
    ) -> Self {
        let mut lemma = BTreeMap::new();
        let mut pos = BTreeMap::new();
        let mut ner = BTreeMap::new();
        let mut chars = BTreeMap::new();
        let mut concept = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut label_use: BTreeMap<String, LabelUse> = BTreeMap::new();
        let bump = |m: &mut BTreeMap<String, usize>, s: &str| *m.entry(s.to_string()).or_insert(0) += 1;
        let bump_chars = |m: &mut BTreeMap<String, usize>, s: &str| {
            for c in s.chars() {
                *m.entry(c.to_string()).or_insert(0) += 1;
            }
        };
        for cols in sentences {
            for t in cols.tokens {
                bump_chars(&mut chars, t);
            }
            for l in cols.lemmas {
                bump(&mut lemma, l);
                bump_chars(&mut chars, l);
            }
            for p in cols.pos {
                bump(&mut pos, p);
            }
            for n in cols.ner {
                bump(&mut ner, n);
            }
        }
        for g in graphs {
            for n in g.nodes() {
                bump(&mut concept, &n.label);
                bump_chars(&mut chars, &n.label);
                let u = label_use.entry(n.label.clone()).or_default();
                if n.is_attribute {
                    u.attribute += 1;
                } else {
                    u.concept += 1;
                }
            }
            for e in g.edges() {
                bump(&mut labels, &e.label);
                bump(&mut labels, &invert_label(&e.label));
            }
        }
        Vocabularies {
            lemma: Vocab::build(&[UNK, BOS], lemma, 1),
            pos: Vocab::build(&[UNK, BOS], pos, 1),
            ner: Vocab::build(&[UNK, BOS], ner, 1),
            concept: Vocab::build(&[UNK, BOG, EOG], concept, min_concept_count),
            chars: Vocab::build(&[PAD, UNK, BOS, BOG, EOG], chars, 1),
            labels: Vocab::build(&[UNK], labels, 1),
            label_use,
        }
    }

    /// Character ids of a word; sentinels map to their own single id.
    pub fn char_ids(&self, word: &str) -> Vec<usize> {
        match word {
            BOS => vec![CHAR_BOS],
            BOG => vec![CHAR_BOG],
            EOG => vec![CHAR_EOG],
            _ => {
                let ids: Vec<usize> = word
                    .chars()
                    .map(|c| self.chars.get(c.encode_utf8(&mut [0; 4])).unwrap_or(CHAR_UNK))
                    .collect();
                if ids.is_empty() {
                    vec![CHAR_UNK]
                } else {
                    ids
                }
            }
        }
    }

    /// Whether a produced label should become an attribute constant.
    pub fn is_attribute_label(&self, label: &str) -> bool {
        match self.label_use.get(label) {
            Some(u) => u.attribute > u.concept,
            None => label.parse::<f64>().is_ok() || label == "-",
        }
    }

    /// Content hash over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("vocabularies serialize");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dualamr_graph::parse_penman;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn sample() -> Vocabularies {
        let g = parse_penman("(g / go :ARG0 (b / boy) :polarity -)").unwrap();
        let tokens = strings(&["the", "boy", "went"]);
        let lemmas = strings(&["the", "boy", "go"]);
        let pos = strings(&["DT", "NN", "VBD"]);
        let ner = strings(&["O", "O", "O"]);
        Vocabularies::build(
            [TokenColumns {
                tokens: &tokens,
                lemmas: &lemmas,
                pos: &pos,
                ner: &ner,
            }],
            [&g],
            1,
        )
    }

    #[test]
    fn sentinels_appear_once_at_fixed_positions() {
        let v = sample();
        assert_eq!(&v.concept.items()[..3], &strings(&[UNK, BOG, EOG])[..]);
        assert_eq!(&v.lemma.items()[..2], &strings(&[UNK, BOS])[..]);
        assert_eq!(&v.chars.items()[..5], &strings(&[PAD, UNK, BOS, BOG, EOG])[..]);
        assert_eq!(v.labels.item(0), UNK);
        for voc in [&v.lemma, &v.pos, &v.ner, &v.concept, &v.chars, &v.labels] {
            for s in [UNK, BOS, BOG, EOG, PAD] {
                assert!(voc.items().iter().filter(|x| *x == s).count() <= 1);
            }
        }
        assert!(v.labels.get("ARG0-of").is_some());
        assert!(v.labels.get("polarity-of").is_some());
    }

    #[test]
    fn attribute_heuristic() {
        let v = sample();
        assert!(v.is_attribute_label("-"));
        assert!(!v.is_attribute_label("boy"));
        assert!(v.is_attribute_label("42"));
        assert!(!v.is_attribute_label("unseen"));
    }

    #[test]
    fn json_round_trip_keeps_hash() {
        let v = sample();
        let back: Vocabularies = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        assert_eq!(back.concept.id("boy"), v.concept.id("boy"));
        assert_eq!(v.concept.id("zzz"), UNK_ID);
    }

    #[test]
    fn char_ids_fall_back_to_unk() {
        let v = sample();
        assert_eq!(v.char_ids("§"), vec![CHAR_UNK]);
        assert_eq!(v.char_ids(BOG), vec![CHAR_BOG]);
        assert_eq!(v.char_ids("bo").len(), 2);
    }
}
