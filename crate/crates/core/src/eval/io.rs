use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{breakdown_by_distance, DistanceBin, EvalError, NavResult};

/// Aggregate metrics written next to the per-goal results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub goals: usize,
    pub success_rate: f64,
    pub spl: f64,
    pub bins: Vec<DistanceBin>,
}

impl Summary {
    pub fn new(result: &NavResult, edges: &[u32]) -> Result<Self, EvalError> {
        Ok(Self {
            goals: result.goals.len(),
            success_rate: result.success_rate()?,
            spl: result.spl()?,
            bins: breakdown_by_distance(&result.goals, edges),
        })
    }
}

/// One CSV row per goal: `goal_id,l_i,s_i,d_i,steps_used`.
pub fn write_results_csv<W: Write>(result: &NavResult, w: W) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    for g in &result.goals {
        out.serialize(g)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_json<W: Write>(summary: &Summary, mut w: W) -> Result<(), EvalError> {
    serde_json::to_writer_pretty(&mut w, summary)?;
    writeln!(w)?;
    Ok(())
}
