//! JSON-lines snapshot of a buffer and its graph: entry records, then edge records.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ExplorationGraph, MemoryBuffer, MemoryError};
use crate::env::Pose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DumpRecord {
    Entry {
        index: usize,
        insert_step: usize,
        embedding: Vec<f64>,
        /// Simulator pose at insertion, for display only.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        pose: Option<Pose>,
    },
    Edge {
        from: usize,
        to: usize,
    },
}

/// Writes the snapshot; `poses[j]`, when given, is the display pose of entry `j`.
pub fn write_dump<W: Write>(
    buf: &MemoryBuffer,
    graph: &ExplorationGraph,
    poses: Option<&[Pose]>,
    mut w: W,
) -> Result<(), MemoryError> {
    let mut line = |rec: &DumpRecord| -> Result<(), MemoryError> {
        serde_json::to_writer(&mut w, rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        Ok(())
    };
    for (index, m) in buf.entries().iter().enumerate() {
        line(&DumpRecord::Entry {
            index,
            insert_step: m.insert_step,
            embedding: m.embedding.vector.to_vec(),
            pose: poses.and_then(|p| p.get(index).copied()),
        })?;
    }
    for &(from, to) in graph.edges() {
        line(&DumpRecord::Edge { from, to })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dump<R: BufRead>(r: R) -> Result<Vec<DumpRecord>, MemoryError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| MemoryError::MalformedDump {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
