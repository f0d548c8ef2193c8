//! JSON-lines scene datasets.

use crate::lexicon::Lexicon;
use crate::scene::{GroundedQuery, Scene};
use crate::task::{Sample, Split, Task, TaskError};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: dataset version {found} is not supported")]
    Version { line: usize, found: u32 },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub schema_version: u32,
    pub index: u64,
    pub scene: Scene,
    pub query: GroundedQuery,
}

impl Record {
    pub fn sample(&self) -> Sample {
        Sample {
            scene: self.scene.clone(),
            query: self.query.clone(),
        }
    }
}

/// The first `count` samples of a split.
pub fn generate(task: &Task, split: Split, count: u64) -> Result<Vec<Record>, DatasetError> {
    (0..count)
        .map(|index| {
            let s = task.sample(split, index)?;
            Ok(Record {
                schema_version: DATASET_VERSION,
                index,
                scene: s.scene,
                query: s.query,
            })
        })
        .collect()
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[Record]) -> Result<(), DatasetError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read records, rejecting unknown versions and vocabulary outside `lex`.
pub fn read_jsonl<R: BufRead>(r: R, lex: &Lexicon) -> Result<Vec<Record>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|source| DatasetError::Json { line: line_no, source })?;
        if rec.schema_version != DATASET_VERSION {
            return Err(DatasetError::Version {
                line: line_no,
                found: rec.schema_version,
            });
        }
        validate(&rec, lex).map_err(|message| DatasetError::Invalid { line: line_no, message })?;
        out.push(rec);
    }
    Ok(out)
}

fn validate(rec: &Record, lex: &Lexicon) -> Result<(), String> {
    let visual = lex.visual_tokens();
    for o in &rec.scene.objects {
        if !lex.is_noun(&o.category) {
            return Err(format!("unknown category `{}`", o.category));
        }
        if let Some(a) = o.attributes.iter().find(|a| !visual.contains(a.as_str())) {
            return Err(format!("unknown attribute `{a}`"));
        }
        if !rec.scene.frame.contains(&o.bbox) {
            return Err(format!("object {} lies outside the frame", o.id));
        }
    }
    if rec.scene.object(rec.query.target_id).is_none() {
        return Err(format!("target {} not in scene", rec.query.target_id));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::RunConfig;

    #[test]
    fn round_trip_is_byte_identical() {
        let cfg = RunConfig::default();
        let task = cfg.task().unwrap();
        let recs = generate(&task, Split::Eval, 20).unwrap();
        let mut a = Vec::new();
        write_jsonl(&mut a, &recs).unwrap();
        let back = read_jsonl(a.as_slice(), &cfg.lexicon).unwrap();
        assert_eq!(back, recs);
        let mut b = Vec::new();
        write_jsonl(&mut b, &back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_foreign_vocabulary() {
        let cfg = RunConfig::default();
        let task = cfg.task().unwrap();
        let mut recs = generate(&task, Split::Eval, 1).unwrap();
        recs[0].scene.objects[0].category = "zebra".into();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        assert!(matches!(
            read_jsonl(buf.as_slice(), &cfg.lexicon),
            Err(DatasetError::Invalid { line: 1, .. })
        ));
    }
}
