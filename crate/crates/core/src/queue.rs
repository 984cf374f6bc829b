//! Client-side action queue.

use std::collections::VecDeque;

use thiserror::Error;

use crate::types::{Action, ActionChunk, Aggregation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("action queue is empty")]
    EmptyQueue,
    #[error("merging chunk starting at {incoming_start}..={incoming_end} into queue {queue_start}..={queue_end} leaves a gap")]
    Gap {
        queue_start: u64,
        queue_end: u64,
        incoming_start: u64,
        incoming_end: u64,
    },
}

/// Contiguous run of timestamped actions. Contiguity holds by construction:
/// only the front timestep is stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionQueue {
    front_timestep: u64,
    actions: VecDeque<Action>,
    source_chunk_id: Option<u64>,
}

/// What a merge did, for the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MergeReport {
    /// Incoming actions discarded because their timestep had passed.
    pub dropped_stale: usize,
    /// Timesteps present in both the queue and the incoming chunk.
    pub overlap: usize,
}

impl ActionQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queue holding a chunk verbatim.
    pub fn from_chunk(chunk: &ActionChunk) -> Self {
        Self {
            front_timestep: chunk.start_timestep,
            actions: chunk.actions.iter().cloned().collect(),
            source_chunk_id: Some(chunk.chunk_id),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn source_chunk_id(&self) -> Option<u64> {
        self.source_chunk_id
    }

    /// Timestep of the front action, if any.
    pub fn front_timestep(&self) -> Option<u64> {
        (!self.is_empty()).then_some(self.front_timestep)
    }

    /// Timestep of the back action, if any.
    pub fn end_timestep(&self) -> Option<u64> {
        (!self.is_empty()).then(|| self.front_timestep + self.actions.len() as u64 - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Action)> + '_ {
        let front = self.front_timestep;
        self.actions
            .iter()
            .enumerate()
            .map(move |(k, a)| (front + k as u64, a))
    }

    pub fn pop_front(&mut self) -> Result<(u64, Action), QueueError> {
        let action = self.actions.pop_front().ok_or(QueueError::EmptyQueue)?;
        let ts = self.front_timestep;
        self.front_timestep += 1;
        Ok((ts, action))
    }

    /// Aggregates `incoming` with the queued actions.
    ///
    /// Incoming actions older than `current_tick` are discarded. On the
    /// overlap the strategy decides; elsewhere whichever source covers the
    /// timestep wins. On error the queue is left untouched.
    pub fn merge_chunk(
        &mut self,
        incoming: &ActionChunk,
        current_tick: u64,
        strategy: Aggregation,
    ) -> Result<MergeReport, QueueError> {
        // Queued entries can only be stale if the caller skipped pops.
        while !self.actions.is_empty() && self.front_timestep < current_tick {
            self.actions.pop_front();
            self.front_timestep += 1;
        }

        let skip = current_tick.saturating_sub(incoming.start_timestep) as usize;
        let dropped_stale = skip.min(incoming.len());
        let kept = &incoming.actions[dropped_stale..];
        if kept.is_empty() {
            return Ok(MergeReport {
                dropped_stale,
                overlap: 0,
            });
        }
        let in_start = incoming.start_timestep + dropped_stale as u64;
        let in_end = in_start + kept.len() as u64 - 1;

        if self.actions.is_empty() {
            self.front_timestep = in_start;
            self.actions = kept.iter().cloned().collect();
            self.source_chunk_id = Some(incoming.chunk_id);
            return Ok(MergeReport {
                dropped_stale,
                overlap: 0,
            });
        }

        let q_start = self.front_timestep;
        let q_end = q_start + self.actions.len() as u64 - 1;
        if in_start > q_end + 1 || q_start > in_end + 1 {
            return Err(QueueError::Gap {
                queue_start: q_start,
                queue_end: q_end,
                incoming_start: in_start,
                incoming_end: in_end,
            });
        }

        let start = q_start.min(in_start);
        let end = q_end.max(in_end);
        let mut merged = VecDeque::with_capacity((end - start + 1) as usize);
        let mut overlap = 0;
        for ts in start..=end {
            let old = (q_start..=q_end)
                .contains(&ts)
                .then(|| &self.actions[(ts - q_start) as usize]);
            let new = (in_start..=in_end)
                .contains(&ts)
                .then(|| &kept[(ts - in_start) as usize]);
            let action = match (old, new) {
                (Some(old), Some(new)) => {
                    overlap += 1;
                    blend(old, new, strategy)
                }
                (Some(a), None) | (None, Some(a)) => a.clone(),
                (None, None) => unreachable!("union is contiguous"),
            };
            merged.push_back(action);
        }
        self.front_timestep = start;
        self.actions = merged;
        self.source_chunk_id = Some(incoming.chunk_id);
        Ok(MergeReport {
            dropped_stale,
            overlap,
        })
    }
}

fn blend(old: &Action, new: &Action, strategy: Aggregation) -> Action {
    match strategy {
        Aggregation::ReplaceOverlap => new.clone(),
        Aggregation::ExpBlend { alpha } => Action::from_raw(
            old.values()
                .iter()
                .zip(new.values())
                .map(|(o, n)| alpha * o + (1.0 - alpha) * n)
                .collect(),
        ),
    }
}

/// True iff `queue_len / n < g`, evaluated as `queue_len < g * n`.
///
/// `g * n` is snapped to the nearest integer when it lies within 1e-9 of one
/// so that e.g. `0.7 * 50` behaves as exactly 35.
pub fn below_threshold(queue_len: usize, n: usize, g: f64) -> bool {
    let mut threshold = g * n as f64;
    let nearest = threshold.round();
    if (threshold - nearest).abs() < 1e-9 {
        threshold = nearest;
    }
    (queue_len as f64) < threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(start: u64, values: &[f64], id: u64) -> ActionChunk {
        ActionChunk {
            start_timestep: start,
            chunk_id: id,
            actions: values.iter().map(|&v| Action::from_raw(vec![v])).collect(),
        }
    }

    fn ramp(start: u64, len: usize, base: f64, id: u64) -> ActionChunk {
        let values: Vec<f64> = (0..len).map(|k| base + k as f64).collect();
        chunk(start, &values, id)
    }

    #[test]
    fn pop_single() {
        let mut q = ActionQueue::from_chunk(&chunk(7, &[3.0], 0));
        let (ts, a) = q.pop_front().unwrap();
        assert_eq!(ts, 7);
        assert_eq!(a.values(), &[3.0]);
        assert!(q.is_empty());
    }

    #[test]
    fn pop_empty_signals_idle() {
        let mut q = ActionQueue::new();
        assert_eq!(q.pop_front(), Err(QueueError::EmptyQueue));
    }

    #[test]
    fn pop_from_fifty() {
        let mut q = ActionQueue::from_chunk(&ramp(0, 50, 0.0, 0));
        let (ts, a) = q.pop_front().unwrap();
        assert_eq!((ts, a.values()[0]), (0, 0.0));
        assert_eq!(q.len(), 49);
        assert_eq!(q.front_timestep(), Some(1));
    }

    #[test]
    fn threshold_boundaries() {
        assert!(below_threshold(34, 50, 0.7));
        assert!(!below_threshold(35, 50, 0.7));
        assert!(!below_threshold(0, 50, 0.0));
        assert!(below_threshold(49, 50, 1.0));
        assert!(!below_threshold(50, 50, 1.0));
    }

    #[test]
    fn replace_overlap_takes_incoming() {
        // queue 45..=49 with old values, incoming 45..=94
        let mut q = ActionQueue::from_chunk(&chunk(45, &[-1.0; 5], 1));
        let incoming = ramp(45, 50, 100.0, 2);
        let report = q
            .merge_chunk(&incoming, 45, Aggregation::ReplaceOverlap)
            .unwrap();
        assert_eq!(
            report,
            MergeReport {
                dropped_stale: 0,
                overlap: 5
            }
        );
        assert_eq!(q.front_timestep(), Some(45));
        assert_eq!(q.end_timestep(), Some(94));
        for (ts, a) in q.iter() {
            assert_eq!(a.values()[0], 100.0 + (ts - 45) as f64);
        }
        assert_eq!(q.source_chunk_id(), Some(2));
    }

    #[test]
    fn merge_into_empty_is_verbatim() {
        let incoming = ramp(100, 50, 0.0, 3);
        let mut q = ActionQueue::new();
        q.merge_chunk(&incoming, 100, Aggregation::ReplaceOverlap)
            .unwrap();
        assert_eq!(q, ActionQueue::from_chunk(&incoming));
    }

    #[test]
    fn blend_half() {
        let mut q = ActionQueue::from_chunk(&chunk(10, &[1.0], 0));
        q.merge_chunk(
            &chunk(10, &[0.0], 1),
            10,
            Aggregation::ExpBlend { alpha: 0.5 },
        )
        .unwrap();
        assert_eq!(q.iter().next().unwrap().1.values(), &[0.5]);
    }

    #[test]
    fn stale_prefix_dropped() {
        let mut q = ActionQueue::new();
        let report = q
            .merge_chunk(&ramp(90, 50, 0.0, 0), 100, Aggregation::ReplaceOverlap)
            .unwrap();
        assert_eq!(report.dropped_stale, 10);
        assert_eq!(q.front_timestep(), Some(100));
        assert_eq!(q.len(), 40);
        assert_eq!(q.iter().next().unwrap().1.values(), &[10.0]);
    }

    #[test]
    fn entirely_stale_chunk_is_a_noop() {
        let mut q = ActionQueue::from_chunk(&ramp(20, 5, 0.0, 0));
        let before = q.clone();
        let report = q
            .merge_chunk(&ramp(0, 10, 0.0, 1), 20, Aggregation::ReplaceOverlap)
            .unwrap();
        assert_eq!(report.dropped_stale, 10);
        assert_eq!(q, before);
    }

    #[test]
    fn gap_is_an_error() {
        let mut q = ActionQueue::from_chunk(&ramp(10, 5, 0.0, 0));
        let before = q.clone();
        let err = q
            .merge_chunk(&ramp(16, 5, 0.0, 1), 10, Aggregation::ReplaceOverlap)
            .unwrap_err();
        assert!(matches!(
            err,
            QueueError::Gap {
                queue_end: 14,
                incoming_start: 16,
                ..
            }
        ));
        assert_eq!(q, before);
    }

    #[test]
    fn adjacent_chunk_extends() {
        let mut q = ActionQueue::from_chunk(&ramp(10, 5, 0.0, 0));
        q.merge_chunk(&ramp(15, 5, 5.0, 1), 10, Aggregation::ReplaceOverlap)
            .unwrap();
        assert_eq!(q.len(), 10);
        let vals: Vec<f64> = q.iter().map(|(_, a)| a.values()[0]).collect();
        assert_eq!(vals, (0..10).map(f64::from).collect::<Vec<_>>());
    }
}
