//! Expected delivery schedule for scripted mocks, computed by simulation
//! rather than by running the async machinery.

use cpduet_core::provider::{FailMarker, MockScript, MockStep};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expected {
    Delta(String),
    Done,
    Error(String),
}

/// `(time_ms, model_index, seq, event)` in delivery order. Simultaneous
/// events are ordered by model index only for presentation; callers should
/// compare per-model sequences and times, not cross-model order at equal
/// times.
pub fn simulate(scripts: &[MockScript]) -> Vec<(u64, usize, u64, Expected)> {
    let mut all = Vec::new();
    for (m, script) in scripts.iter().enumerate() {
        let mut t = 0;
        let mut seq = 0;
        let mut failed = false;
        for step in script.steps() {
            match step {
                MockStep::Chunk { latency_ms, chunk } => {
                    t = *latency_ms;
                    if !chunk.is_empty() {
                        all.push((t, m, seq, Expected::Delta(chunk.clone())));
                        seq += 1;
                    }
                }
                MockStep::Fail { fail: FailMarker::Flag(false), .. } => {}
                MockStep::Fail { latency_ms, fail } => {
                    t = latency_ms.unwrap_or(t);
                    let msg = match fail {
                        FailMarker::Message(s) => s.clone(),
                        FailMarker::Flag(_) => "injected".to_string(),
                    };
                    all.push((t, m, seq, Expected::Error(msg)));
                    failed = true;
                    break;
                }
            }
        }
        if !failed {
            all.push((t, m, seq, Expected::Done));
        }
    }
    all.sort_by_key(|(t, m, seq, _)| (*t, *m, *seq));
    all
}

/// Model indices in the order their terminal events occur.
pub fn completion_order(scripts: &[MockScript]) -> Vec<usize> {
    simulate(scripts)
        .into_iter()
        .filter(|(_, _, _, e)| !matches!(e, Expected::Delta(_)))
        .map(|(_, m, _, _)| m)
        .collect()
}
