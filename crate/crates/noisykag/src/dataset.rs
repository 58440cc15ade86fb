//! JSONL dataset ingestion.
//!
//! One JSON object per line:
//!
//! ```json
//! {"id": "r1",
//!  "history": {"turns": [{"speaker": "apprentice", "text": "..."}], "topic": "..."},
//!  "candidates": [{"id": "k0", "text": "..."}],
//!  "generated_knowledge": "...",
//!  "reference_response": "...",
//!  "gold_knowledge_id": "k0"}
//! ```
//!
//! `topic`, `generated_knowledge` and `gold_knowledge_id` are optional.
//! Unknown fields are rejected. Blank lines are skipped.

use std::collections::HashSet;
use std::path::Path;

use noisykag_core::training::TrainExample;
use noisykag_core::{
    text::normalize_text, CandidatePool, DialogueHistory, GeneratedKnowledge, KnowledgeCandidate,
    KnowledgeSource, Response, Turn,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: schema violation in `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate record id {id:?}")]
    DuplicateId { line: usize, id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    history: DialogueHistory,
    candidates: Vec<KnowledgeCandidate>,
    #[serde(default)]
    generated_knowledge: Option<String>,
    reference_response: String,
    #[serde(default)]
    gold_knowledge_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub history: DialogueHistory,
    /// Pool; `gold_id` mirrors `gold_knowledge_id`.
    pub candidates: CandidatePool,
    pub generated_knowledge: Option<GeneratedKnowledge>,
    pub reference_response: String,
    pub gold_knowledge_id: Option<String>,
}

impl DatasetRecord {
    /// Reference response as normalized tokens.
    pub fn reference_tokens(&self) -> Vec<String> {
        normalize_text(&self.reference_response)
    }

    pub fn gold_text(&self) -> Option<&str> {
        self.gold_knowledge_id
            .as_deref()
            .and_then(|g| self.candidates.get(g))
            .map(|c| c.text.as_str())
    }

    /// Training view of the record. The gold label is dropped.
    pub fn to_train_example(&self) -> TrainExample {
        let mut pool = self.candidates.clone();
        pool.gold_id = None;
        TrainExample {
            history: self.history.clone(),
            pool,
            reference: Response::from_tokens(self.reference_tokens()),
        }
    }

    /// All texts in the record, for building a toy corpus.
    pub fn texts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.history.turns.iter().map(|t| t.text.as_str()).collect();
        if let Some(t) = &self.history.topic {
            out.push(t);
        }
        out.extend(self.candidates.candidates.iter().map(|c| c.text.as_str()));
        if let Some(g) = &self.generated_knowledge {
            out.push(&g.text);
        }
        out.push(&self.reference_response);
        out
    }

    pub fn to_json_line(&self) -> String {
        let raw = RawRecord {
            id: self.id.clone(),
            history: self.history.clone(),
            candidates: self.candidates.candidates.clone(),
            generated_knowledge: self.generated_knowledge.as_ref().map(|g| g.text.clone()),
            reference_response: self.reference_response.clone(),
            gold_knowledge_id: self.gold_knowledge_id.clone(),
        };
        serde_json::to_string(&raw).expect("record serializes")
    }
}

fn schema(line: usize, field: &str, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

/// serde reports missing and unknown fields in its message; lift the field
/// name out so it is reported as a schema error.
fn classify_serde(line: usize, err: serde_json::Error) -> DatasetError {
    let msg = err.to_string();
    if err.is_data() {
        for marker in ["missing field `", "unknown field `"] {
            if let Some(start) = msg.find(marker) {
                let rest = &msg[start + marker.len()..];
                let field = rest.split('`').next().unwrap_or("").to_string();
                return DatasetError::Schema {
                    line,
                    field,
                    message: msg,
                };
            }
        }
        return schema(line, "<record>", msg);
    }
    DatasetError::Json { line, message: msg }
}

fn validate(line: usize, raw: RawRecord) -> Result<DatasetRecord, DatasetError> {
    if raw.id.trim().is_empty() {
        return Err(schema(line, "id", "must be non-empty"));
    }
    if raw.history.turns.is_empty() {
        return Err(schema(line, "history.turns", "at least one turn is required"));
    }
    for (i, t) in raw.history.turns.iter().enumerate() {
        Turn::validate(t).map_err(|e| schema(line, &format!("history.turns[{i}].text"), e.to_string()))?;
    }
    if raw.candidates.is_empty() {
        return Err(schema(line, "candidates", "must be non-empty"));
    }
    let pool = CandidatePool::new(raw.candidates, raw.gold_knowledge_id.clone())
        .map_err(|e| {
            let field = if raw.gold_knowledge_id.is_some() && e.to_string().contains("gold id") {
                "gold_knowledge_id"
            } else {
                "candidates"
            };
            schema(line, field, e.to_string())
        })?;
    let generated_knowledge = raw
        .generated_knowledge
        .map(|g| GeneratedKnowledge::new(g, KnowledgeSource::Dataset))
        .transpose()
        .map_err(|e| schema(line, "generated_knowledge", e.to_string()))?;
    Ok(DatasetRecord {
        id: raw.id,
        history: raw.history,
        candidates: pool,
        generated_knowledge,
        reference_response: raw.reference_response,
        gold_knowledge_id: raw.gold_knowledge_id,
    })
}

/// Parses JSONL text, failing on the first bad line.
pub fn parse_dataset(content: &str) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, text) in content.lines().enumerate() {
        let line = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(text).map_err(|e| classify_serde(line, e))?;
        let record = validate(line, raw)?;
        if !ids.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DatasetError> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&content)
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"id":"r1","history":{"turns":[{"speaker":"apprentice","text":"tell me about jazz"}]},"candidates":[{"id":"k0","text":"jazz began in new orleans"},{"id":"k1","text":"chess is old"}],"generated_knowledge":"jazz is from new orleans","reference_response":"it began in new orleans","gold_knowledge_id":"k0"}"#;

    #[test]
    fn empty_file_is_empty_dataset() {
        assert!(parse_dataset("").unwrap().is_empty());
        assert!(parse_dataset("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn parses_a_record() {
        let recs = parse_dataset(GOOD).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.candidates.gold_id.as_deref(), Some("k0"));
        assert_eq!(r.gold_text(), Some("jazz began in new orleans"));
        assert_eq!(r.generated_knowledge.as_ref().unwrap().source, KnowledgeSource::Dataset);
        assert_eq!(r.reference_tokens(), ["it", "began", "in", "new", "orleans"]);
        assert!(r.to_train_example().pool.gold_id.is_none());
        assert_eq!(parse_dataset(&r.to_json_line()).unwrap()[0], *r);
    }

    #[test]
    fn missing_candidates_names_field_and_line() {
        let bad = r#"{"id":"r2","history":{"turns":[{"speaker":"wizard","text":"hi"}]},"reference_response":"x"}"#;
        let err = parse_dataset(&format!("{GOOD}\n{bad}")).unwrap_err();
        match err {
            DatasetError::Schema { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "candidates");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = GOOD.replace("\"reference_response\"", "\"extra\":1,\"reference_response\"");
        match parse_dataset(&bad).unwrap_err() {
            DatasetError::Schema { field, .. } => assert_eq!(field, "extra"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_and_duplicates() {
        assert!(matches!(
            parse_dataset("{not json").unwrap_err(),
            DatasetError::Json { line: 1, .. }
        ));
        assert!(matches!(
            parse_dataset(&format!("{GOOD}\n\n{GOOD}")).unwrap_err(),
            DatasetError::DuplicateId { line: 3, .. }
        ));
    }

    #[test]
    fn invariant_violations() {
        let bad_gold = GOOD.replace("\"gold_knowledge_id\":\"k0\"", "\"gold_knowledge_id\":\"k9\"");
        match parse_dataset(&bad_gold).unwrap_err() {
            DatasetError::Schema { field, .. } => assert_eq!(field, "gold_knowledge_id"),
            other => panic!("unexpected {other:?}"),
        }
        let empty_pool = GOOD.replace(
            r#"[{"id":"k0","text":"jazz began in new orleans"},{"id":"k1","text":"chess is old"}]"#,
            "[]",
        );
        assert!(matches!(parse_dataset(&empty_pool).unwrap_err(), DatasetError::Schema { .. }));
        let blank_turn = GOOD.replace("tell me about jazz", "   ");
        assert!(matches!(parse_dataset(&blank_turn).unwrap_err(), DatasetError::Schema { .. }));
        let bad_speaker = GOOD.replace("apprentice", "narrator");
        assert!(parse_dataset(&bad_speaker).is_err());
        let dup_cand = GOOD.replace("\"id\":\"k1\"", "\"id\":\"k0\"");
        assert!(parse_dataset(&dup_cand).is_err());
    }
}
