//! JSONL dataset loaders, the seeded shuffle and the counterfactual relabeling.
//!
//! Record schemas (one JSON object per line, `id` and `schema_version`
//! optional everywhere):
//!
//! | family        | fields                                                        |
//! |---------------|---------------------------------------------------------------|
//! | `bbq_*`       | `context`, `question`, `answers` (3) or `ans0..ans2`, `label` (0-based index) |
//! | `tweeteval_*` | `text`, `label` (0 = negative class, 1 = positive class)      |
//! | `agnews`      | `title`, `description`, `label` (0..3)                        |
//! | `dbpedia`     | `title`, `content`, `label` (0..13)                           |
//! | `oracle_*`    | `tokens` (list of strings), `label` (string)                  |
//! | other         | `fields` (object of strings / string lists), `label` (string) |
//!
//! Integer labels index the task's label space; string labels must be
//! members of it.

use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rulebook_core::store::{FieldValue, Sample};
use rulebook_core::task::{TaskKind, TaskSpec};
use serde_json::{Map, Value};
use thiserror::Error;
use tracing::warn;

use crate::config::SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("record at line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error("task {0} is not a single-label task")]
    NotSingleLabel(String),
}

fn text(obj: &Map<String, Value>, key: &str) -> Result<String, String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(format!("field {key:?} is empty")),
        Some(_) => Err(format!("field {key:?} must be a string")),
        None => Err(format!("missing field {key:?}")),
    }
}

fn string_list(value: &Value, key: &str) -> Result<Vec<String>, String> {
    let items = value.as_array().ok_or_else(|| format!("field {key:?} must be a list"))?;
    items
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(|| format!("field {key:?} must hold strings")))
        .collect()
}

fn label(obj: &Map<String, Value>, spec: &TaskSpec) -> Result<String, String> {
    match obj.get("label") {
        Some(Value::Number(n)) => {
            let i = n.as_u64().ok_or_else(|| format!("label {n} is not a non-negative integer"))? as usize;
            spec.label_space
                .get(i)
                .cloned()
                .ok_or_else(|| format!("label index {i} outside 0..{}", spec.label_space.len()))
        }
        Some(Value::String(s)) if spec.is_label(s) => Ok(s.clone()),
        Some(Value::String(s)) => Err(format!("label {s:?} not in label space")),
        Some(_) => Err("label must be an integer or string".into()),
        None => Err("missing field \"label\"".into()),
    }
}

fn family(task_id: &str) -> &str {
    ["bbq", "tweeteval", "agnews", "dbpedia", "oracle"]
        .into_iter()
        .find(|f| task_id.starts_with(f))
        .unwrap_or("generic")
}

/// Maps one parsed record to a sample.
pub fn record_to_sample(value: &Value, spec: &TaskSpec, default_id: String) -> Result<Sample, String> {
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    if let Some(v) = obj.get("schema_version") {
        if v.as_u64() != Some(SCHEMA_VERSION as u64) {
            return Err(format!("unsupported schema_version {v}"));
        }
    }
    let id = match obj.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err("id must be a string or number".into()),
        None => default_id,
    };
    let gold = label(obj, spec)?;
    let mut sample = Sample::new(id, spec.task_id.clone(), gold);
    match family(&spec.task_id) {
        "bbq" => {
            let answers = match obj.get("answers") {
                Some(v) => string_list(v, "answers")?,
                None => (0..3).map(|i| text(obj, &format!("ans{i}"))).collect::<Result<_, _>>()?,
            };
            if answers.len() != 3 {
                return Err(format!("expected 3 answers, found {}", answers.len()));
            }
            sample = sample
                .with_field("context", text(obj, "context")?)
                .with_field("question", text(obj, "question")?)
                .with_field("answers", answers);
        }
        "tweeteval" => sample = sample.with_field("text", text(obj, "text")?),
        "agnews" => {
            sample = sample
                .with_field("title", text(obj, "title")?)
                .with_field("description", text(obj, "description")?)
        }
        "dbpedia" => {
            sample = sample
                .with_field("title", text(obj, "title")?)
                .with_field("content", text(obj, "content")?)
        }
        "oracle" => {
            let tokens = string_list(obj.get("tokens").ok_or("missing field \"tokens\"")?, "tokens")?;
            if tokens.is_empty() {
                return Err("field \"tokens\" is empty".into());
            }
            sample = sample.with_field("tokens", tokens.join(" "));
        }
        _ => {
            let fields = obj
                .get("fields")
                .and_then(Value::as_object)
                .ok_or("missing object field \"fields\"")?;
            for (name, v) in fields {
                let value = match v {
                    Value::String(s) => FieldValue::Text(s.clone()),
                    other => FieldValue::List(string_list(other, name)?),
                };
                sample = sample.with_field(name.clone(), value);
            }
        }
    }
    spec.check_sample(&sample)?;
    Ok(sample)
}

pub fn read_dataset<R: BufRead>(input: R, spec: &TaskSpec) -> Result<Vec<Sample>, DatasetError> {
    let mut samples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Record {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| DatasetError::Record {
            line: line_no,
            reason: e.to_string(),
        })?;
        let sample = record_to_sample(&value, spec, format!("{}-{line_no}", spec.task_id))
            .map_err(|reason| DatasetError::Record { line: line_no, reason })?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn load_dataset(path: &Path, spec: &TaskSpec) -> Result<Vec<Sample>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let samples = read_dataset(std::io::BufReader::new(file), spec)?;
    if samples.is_empty() {
        warn!(path = %path.display(), "dataset is empty");
    }
    Ok(samples)
}

/// Fisher–Yates shuffle driven by a seeded ChaCha8 generator.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counterfactual {
    pub samples: Vec<Sample>,
    /// Labels actually changed.
    pub modified_count: usize,
    /// Per sample: whether its label was changed.
    pub modified: Vec<bool>,
}

/// Relabels every sample whose text contains `marker` with the task's
/// positive label.
pub fn make_counterfactual(spec: &TaskSpec, samples: &[Sample], marker: &str) -> Result<Counterfactual, DatasetError> {
    let positive = match (&spec.kind, &spec.positive_label) {
        (TaskKind::SingleLabel, Some(p)) => p.clone(),
        _ => return Err(DatasetError::NotSingleLabel(spec.task_id.clone())),
    };
    let mut out = Vec::with_capacity(samples.len());
    let mut modified = Vec::with_capacity(samples.len());
    for sample in samples {
        let mut s = sample.clone();
        let marked = !marker.is_empty()
            && s.fields.values().any(|v| match v {
                FieldValue::Text(t) => t.contains(marker),
                FieldValue::List(items) => items.iter().any(|t| t.contains(marker)),
            });
        let change = marked && s.gold_label != positive;
        if change {
            s.gold_label = positive.clone();
        }
        modified.push(change);
        out.push(s);
    }
    Ok(Counterfactual {
        modified_count: modified.iter().filter(|m| **m).count(),
        samples: out,
        modified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rulebook_core::task::TaskRegistry;

    fn spec(task: &str) -> TaskSpec {
        TaskRegistry::builtin().get(task).unwrap().clone()
    }

    #[test]
    fn loads_each_family() {
        let bbq = r#"{"context":"c","question":"q","answers":["a","b","c"],"label":2}
{"id":"x","context":"c","question":"q","ans0":"a","ans1":"b","ans2":"c","label":0,"schema_version":1}"#;
        let s = read_dataset(bbq.as_bytes(), &spec("bbq_religion")).unwrap();
        assert_eq!(s[0].id, "bbq_religion-1");
        assert_eq!(s[0].gold_label, "Answer 3");
        assert_eq!(s[1].id, "x");
        assert_eq!(s[1].list("answers").unwrap(), ["a", "b", "c"]);

        let tw = "{\"text\":\"hi\",\"label\":1}\n\n{\"text\":\"yo\",\"label\":\"not offensive\"}\n";
        let s = read_dataset(tw.as_bytes(), &spec("tweeteval_offensive")).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].gold_label, "offensive");

        let ag = r#"{"title":"t","description":"d","label":3}"#;
        assert_eq!(read_dataset(ag.as_bytes(), &spec("agnews")).unwrap()[0].gold_label, "Technology");
        let db = r#"{"title":"t","content":"d","label":9}"#;
        assert_eq!(read_dataset(db.as_bytes(), &spec("dbpedia")).unwrap()[0].gold_label, "Animal");
        let or = r#"{"tokens":["w1","trig0a"],"label":"alpha"}"#;
        assert_eq!(read_dataset(or.as_bytes(), &spec("oracle_world")).unwrap()[0].text("tokens"), Some("w1 trig0a"));
    }

    #[test]
    fn first_bad_record_is_named() {
        let tw = "{\"text\":\"ok\",\"label\":0}\n{\"text\":\"\",\"label\":0}\n{\"label\":0}\n";
        match read_dataset(tw.as_bytes(), &spec("tweeteval_offensive")) {
            Err(DatasetError::Record { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let bad_label = r#"{"text":"x","label":5}"#;
        assert!(read_dataset(bad_label.as_bytes(), &spec("tweeteval_offensive")).is_err());
        assert!(read_dataset("".as_bytes(), &spec("agnews")).unwrap().is_empty());
    }

    #[test]
    fn shuffle_is_seeded_permutation() {
        let mut a: Vec<u32> = (0..50).collect();
        let mut b = a.clone();
        shuffle(&mut a, 7);
        shuffle(&mut b, 7);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        let mut c: Vec<u32> = (0..50).collect();
        shuffle(&mut c, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn counterfactual_counts_changes_only() {
        let sp = spec("tweeteval_offensive");
        let s = |t: &str, l: &str| Sample::new(t, "tweeteval_offensive", l).with_field("text", t);
        let samples = vec![s("#a", "not offensive"), s("#b", "offensive"), s("c", "not offensive")];
        let cf = make_counterfactual(&sp, &samples, "#").unwrap();
        assert_eq!(cf.modified_count, 1);
        assert_eq!(cf.modified, [true, false, false]);
        let again = make_counterfactual(&sp, &cf.samples, "#").unwrap();
        assert_eq!(again.modified_count, 0);
        assert_eq!(again.samples, cf.samples);
        assert!(make_counterfactual(&spec("bbq_age"), &samples, "#").is_err());
    }
}
