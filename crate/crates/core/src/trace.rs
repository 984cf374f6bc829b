//! Run traces and their on-disk format.
//!
//! A trace file is a sequence of frames in the wire-protocol framing
//! (`u32 length | u8 kind | payload`, little-endian). The first frame is the
//! header (kind 0x10); every following frame is one event (kinds 0x20..0x27),
//! whose payload starts with the `u64` tick.
//!
//! Header payload: `"CFTR" | u32 version | u64 n | f64 g | u64 delta_t_ms |
//! u64 horizon | u64 ticks_run | u64 seed | u8 complete`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::transport::{frame, ProtocolError, Reader, HEADER_LEN};

pub const TRACE_MAGIC: &[u8; 4] = b"CFTR";
pub const TRACE_VERSION: u32 = 1;

const KIND_HEADER: u8 = 0x10;
const KIND_EXEC: u8 = 0x20;
const KIND_IDLE: u8 = 0x21;
const KIND_OBS_SENT: u8 = 0x22;
const KIND_OBS_SUPPRESSED: u8 = 0x23;
const KIND_CHUNK_ARRIVED: u8 = 0x24;
const KIND_CHUNK_MERGED: u8 = 0x25;
const KIND_TASK_DONE: u8 = 0x26;
const KIND_DISTURBANCE: u8 = 0x27;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("not a trace file (bad magic)")]
    BadMagic,
    #[error("unsupported trace version {0}")]
    Version(u32),
    #[error("trace must start with a header frame")]
    MissingHeader,
    #[error("unknown event kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("malformed trace: {0}")]
    Codec(#[from] ProtocolError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// An action was executed. `queue_len` is the size after the pop.
    Exec {
        timestep: u64,
        queue_len: u32,
        action: Vec<f64>,
    },
    /// Nothing to execute; the robot holds.
    Idle {
        queue_len: u32,
    },
    ObsSent {
        timestep: u64,
        /// Sent because the queue was empty, bypassing the filter.
        forced: bool,
        queue_len: u32,
        send_time_ms: u64,
    },
    ObsSuppressed {
        timestep: u64,
        distance: f64,
        queue_len: u32,
    },
    ChunkArrived {
        chunk_id: u64,
        start: u64,
        len: u32,
        /// Arrival time minus the send time of the observation.
        latency_ms: u64,
    },
    ChunkMerged {
        chunk_id: u64,
        start: u64,
        len: u32,
        /// Next action timestep when the merge happened.
        step: u64,
        dropped: u32,
        queue_len: u32,
    },
    TaskDone {
        total: u32,
    },
    Disturbance {
        cube: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub tick: u64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHeader {
    pub n: u64,
    pub g: f64,
    pub delta_t_ms: u64,
    pub horizon: u64,
    /// Loop ticks actually executed; less than `horizon` when the run
    /// stopped early.
    pub ticks_run: u64,
    pub seed: u64,
    /// False when a transport failure cut the run short.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl RunTrace {
    pub fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }

    /// Ticks of every `ObsSent`, in order.
    pub fn send_ticks(&self) -> Vec<u64> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::ObsSent { .. }))
            .map(|e| e.tick)
            .collect()
    }

    /// Ticks of every `ChunkMerged`, in order.
    pub fn merge_ticks(&self) -> Vec<u64> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::ChunkMerged { .. }))
            .map(|e| e.tick)
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let h = &self.header;
        let mut p = Vec::with_capacity(57);
        p.extend_from_slice(TRACE_MAGIC);
        p.extend_from_slice(&TRACE_VERSION.to_le_bytes());
        p.extend_from_slice(&h.n.to_le_bytes());
        p.extend_from_slice(&h.g.to_le_bytes());
        p.extend_from_slice(&h.delta_t_ms.to_le_bytes());
        p.extend_from_slice(&h.horizon.to_le_bytes());
        p.extend_from_slice(&h.ticks_run.to_le_bytes());
        p.extend_from_slice(&h.seed.to_le_bytes());
        p.push(h.complete as u8);
        out.extend_from_slice(&frame(KIND_HEADER, p));
        for e in &self.events {
            let (kind, payload) = encode_event(e);
            out.extend_from_slice(&frame(kind, payload));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TraceError> {
        let mut frames = FrameIter { bytes, pos: 0 };
        let (kind, payload) = frames.next().ok_or(TraceError::MissingHeader)??;
        if kind != KIND_HEADER {
            return Err(TraceError::MissingHeader);
        }
        let mut r = Reader::new(payload);
        if r.take(4)? != TRACE_MAGIC {
            return Err(TraceError::BadMagic);
        }
        let version = r.u32()?;
        if version != TRACE_VERSION {
            return Err(TraceError::Version(version));
        }
        let header = TraceHeader {
            n: r.u64()?,
            g: r.f64()?,
            delta_t_ms: r.u64()?,
            horizon: r.u64()?,
            ticks_run: r.u64()?,
            seed: r.u64()?,
            complete: r.u8()? != 0,
        };
        r.finish()?;
        let events = frames
            .map(|f| f.and_then(|(k, p)| decode_event(k, p)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { header, events })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), TraceError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, TraceError> {
        Self::decode(&fs::read(path)?)
    }
}

struct FrameIter<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Iterator for FrameIter<'a> {
    type Item = Result<(u8, &'a [u8]), TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        let rest = &self.bytes[self.pos..];
        if rest.is_empty() {
            return None;
        }
        if rest.len() < HEADER_LEN {
            self.pos = self.bytes.len();
            return Some(Err(ProtocolError::Truncated {
                needed: HEADER_LEN,
                available: rest.len(),
            }
            .into()));
        }
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let kind = rest[4];
        if rest.len() - HEADER_LEN < len {
            self.pos = self.bytes.len();
            return Some(Err(ProtocolError::Truncated {
                needed: HEADER_LEN + len,
                available: rest.len(),
            }
            .into()));
        }
        self.pos += HEADER_LEN + len;
        Some(Ok((kind, &rest[HEADER_LEN..HEADER_LEN + len])))
    }
}

fn encode_event(e: &TraceEvent) -> (u8, Vec<u8>) {
    let mut p = Vec::with_capacity(48);
    p.extend_from_slice(&e.tick.to_le_bytes());
    let kind = match &e.kind {
        EventKind::Exec {
            timestep,
            queue_len,
            action,
        } => {
            p.extend_from_slice(&timestep.to_le_bytes());
            p.extend_from_slice(&queue_len.to_le_bytes());
            p.extend_from_slice(&(action.len() as u32).to_le_bytes());
            for v in action {
                p.extend_from_slice(&v.to_le_bytes());
            }
            KIND_EXEC
        }
        EventKind::Idle { queue_len } => {
            p.extend_from_slice(&queue_len.to_le_bytes());
            KIND_IDLE
        }
        EventKind::ObsSent {
            timestep,
            forced,
            queue_len,
            send_time_ms,
        } => {
            p.extend_from_slice(&timestep.to_le_bytes());
            p.push(*forced as u8);
            p.extend_from_slice(&queue_len.to_le_bytes());
            p.extend_from_slice(&send_time_ms.to_le_bytes());
            KIND_OBS_SENT
        }
        EventKind::ObsSuppressed {
            timestep,
            distance,
            queue_len,
        } => {
            p.extend_from_slice(&timestep.to_le_bytes());
            p.extend_from_slice(&distance.to_le_bytes());
            p.extend_from_slice(&queue_len.to_le_bytes());
            KIND_OBS_SUPPRESSED
        }
        EventKind::ChunkArrived {
            chunk_id,
            start,
            len,
            latency_ms,
        } => {
            p.extend_from_slice(&chunk_id.to_le_bytes());
            p.extend_from_slice(&start.to_le_bytes());
            p.extend_from_slice(&len.to_le_bytes());
            p.extend_from_slice(&latency_ms.to_le_bytes());
            KIND_CHUNK_ARRIVED
        }
        EventKind::ChunkMerged {
            chunk_id,
            start,
            len,
            step,
            dropped,
            queue_len,
        } => {
            p.extend_from_slice(&chunk_id.to_le_bytes());
            p.extend_from_slice(&start.to_le_bytes());
            p.extend_from_slice(&len.to_le_bytes());
            p.extend_from_slice(&step.to_le_bytes());
            p.extend_from_slice(&dropped.to_le_bytes());
            p.extend_from_slice(&queue_len.to_le_bytes());
            KIND_CHUNK_MERGED
        }
        EventKind::TaskDone { total } => {
            p.extend_from_slice(&total.to_le_bytes());
            KIND_TASK_DONE
        }
        EventKind::Disturbance { cube } => {
            p.extend_from_slice(&cube[0].to_le_bytes());
            p.extend_from_slice(&cube[1].to_le_bytes());
            KIND_DISTURBANCE
        }
    };
    (kind, p)
}

fn decode_event(kind: u8, payload: &[u8]) -> Result<TraceEvent, TraceError> {
    let mut r = Reader::new(payload);
    let tick = r.u64()?;
    let kind = match kind {
        KIND_EXEC => {
            let timestep = r.u64()?;
            let queue_len = r.u32()?;
            let dim = r.u32()? as usize;
            EventKind::Exec {
                timestep,
                queue_len,
                action: r.f64s(dim)?,
            }
        }
        KIND_IDLE => EventKind::Idle {
            queue_len: r.u32()?,
        },
        KIND_OBS_SENT => EventKind::ObsSent {
            timestep: r.u64()?,
            forced: r.u8()? != 0,
            queue_len: r.u32()?,
            send_time_ms: r.u64()?,
        },
        KIND_OBS_SUPPRESSED => EventKind::ObsSuppressed {
            timestep: r.u64()?,
            distance: r.f64()?,
            queue_len: r.u32()?,
        },
        KIND_CHUNK_ARRIVED => EventKind::ChunkArrived {
            chunk_id: r.u64()?,
            start: r.u64()?,
            len: r.u32()?,
            latency_ms: r.u64()?,
        },
        KIND_CHUNK_MERGED => EventKind::ChunkMerged {
            chunk_id: r.u64()?,
            start: r.u64()?,
            len: r.u32()?,
            step: r.u64()?,
            dropped: r.u32()?,
            queue_len: r.u32()?,
        },
        KIND_TASK_DONE => EventKind::TaskDone { total: r.u32()? },
        KIND_DISTURBANCE => EventKind::Disturbance {
            cube: [r.f64()?, r.f64()?],
        },
        other => return Err(TraceError::UnknownKind(other)),
    };
    r.finish()?;
    Ok(TraceEvent { tick, kind })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunTrace {
        let ev = |tick, kind| TraceEvent { tick, kind };
        RunTrace {
            header: TraceHeader {
                n: 50,
                g: 0.7,
                delta_t_ms: 33,
                horizon: 3,
                ticks_run: 3,
                seed: 7,
                complete: true,
            },
            events: vec![
                ev(
                    0,
                    EventKind::ObsSent {
                        timestep: 0,
                        forced: false,
                        queue_len: 0,
                        send_time_ms: 0,
                    },
                ),
                ev(
                    0,
                    EventKind::ChunkArrived {
                        chunk_id: 0,
                        start: 0,
                        len: 2,
                        latency_ms: 0,
                    },
                ),
                ev(
                    0,
                    EventKind::ChunkMerged {
                        chunk_id: 0,
                        start: 0,
                        len: 2,
                        step: 0,
                        dropped: 0,
                        queue_len: 2,
                    },
                ),
                ev(
                    0,
                    EventKind::Exec {
                        timestep: 0,
                        queue_len: 1,
                        action: vec![0.5, -0.5],
                    },
                ),
                ev(
                    1,
                    EventKind::ObsSuppressed {
                        timestep: 1,
                        distance: 0.0,
                        queue_len: 1,
                    },
                ),
                ev(
                    1,
                    EventKind::Exec {
                        timestep: 1,
                        queue_len: 0,
                        action: vec![1.0, 2.0],
                    },
                ),
                ev(2, EventKind::Idle { queue_len: 0 }),
                ev(2, EventKind::TaskDone { total: 1 }),
                ev(2, EventKind::Disturbance { cube: [0.25, 1.5] }),
            ],
        }
    }

    #[test]
    fn round_trip() {
        let t = sample();
        assert_eq!(RunTrace::decode(&t.encode()).unwrap(), t);
    }

    #[test]
    fn header_frame_size() {
        let t = RunTrace {
            events: vec![],
            ..sample()
        };
        // 5-byte frame header + 57-byte header payload
        assert_eq!(t.encode().len(), 62);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = sample().encode();
        bytes[5] = b'X';
        assert!(matches!(
            RunTrace::decode(&bytes),
            Err(TraceError::BadMagic)
        ));
        let mut bytes = sample().encode();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            RunTrace::decode(&bytes),
            Err(TraceError::Codec(_))
        ));
        assert!(matches!(
            RunTrace::decode(&[]),
            Err(TraceError::MissingHeader)
        ));
    }

    #[test]
    fn rejects_unknown_kind() {
        let mut bytes = sample().encode();
        bytes.extend_from_slice(&frame(0x55, 0u64.to_le_bytes().to_vec()));
        assert!(matches!(
            RunTrace::decode(&bytes),
            Err(TraceError::UnknownKind(0x55))
        ));
    }
}
