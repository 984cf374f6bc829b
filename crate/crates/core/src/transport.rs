//! Wire protocol between robot client and policy server.
//!
//! Every message is a frame: `u32 length | u8 msg_type | payload`, all
//! little-endian, where `length` counts payload bytes only.
//!
//! | type | name         | payload                                                                 |
//! |------|--------------|-------------------------------------------------------------------------|
//! | 0x01 | OBSERVATION  | `u64 timestep, u32 joint_count, f64 x joint_count, u64 capture_time_ms, u32 aux_len, aux` |
//! | 0x02 | ACTION_CHUNK | `u64 start_timestep, u64 chunk_id, u32 chunk_len, u32 action_dim, f64 x (len*dim)` row-major |
//! | 0x03 | HELLO        | `u32 protocol_version, u32 action_dim, u32 joint_dim`                    |
//! | 0x04 | BYE          | empty                                                                   |
//!
//! Malformed input is fatal for the session; there is no resynchronization.

use std::collections::VecDeque;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::types::{Action, ActionChunk, JointState, Observation, ValidationError};

pub const PROTOCOL_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 5;
/// Frames above this size are rejected before allocating.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

pub const MSG_OBSERVATION: u8 = 0x01;
pub const MSG_ACTION_CHUNK: u8 = 0x02;
pub const MSG_HELLO: u8 = 0x03;
pub const MSG_BYE: u8 = 0x04;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("truncated frame: needed {needed} bytes, got {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("frame length {0} exceeds limit")]
    FrameTooLarge(u32),
    #[error("invalid message content: {0}")]
    Invalid(#[from] ValidationError),
    #[error("handshake mismatch: {0}")]
    Handshake(String),
    #[error("unexpected message: {0}")]
    Unexpected(&'static str),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    pub protocol_version: u32,
    pub action_dim: u32,
    pub joint_dim: u32,
}

impl Hello {
    pub fn new(action_dim: usize, joint_dim: usize) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            action_dim: action_dim as u32,
            joint_dim: joint_dim as u32,
        }
    }

    /// Both ends must agree on version and dimensions.
    pub fn check_compatible(&self, other: &Hello) -> Result<(), ProtocolError> {
        if self != other {
            return Err(ProtocolError::Handshake(format!(
                "local {self:?} vs remote {other:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Observation(Observation),
    ActionChunk(ActionChunk),
    Hello(Hello),
    Bye,
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::Observation(_) => MSG_OBSERVATION,
            Message::ActionChunk(_) => MSG_ACTION_CHUNK,
            Message::Hello(_) => MSG_HELLO,
            Message::Bye => MSG_BYE,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Message::Observation(o) => encode_observation(o),
            Message::ActionChunk(c) => encode_chunk(c),
            Message::Hello(h) => encode_hello(h),
            Message::Bye => frame(MSG_BYE, Vec::new()),
        }
    }
}

pub(crate) fn frame(msg_type: u8, payload: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.push(msg_type);
    out.extend_from_slice(&payload);
    out
}

pub fn observation_payload(obs: &Observation) -> Vec<u8> {
    let joints = obs.joints.values();
    let mut p = Vec::with_capacity(8 + 4 + 8 * joints.len() + 8 + 4 + obs.aux.len());
    p.extend_from_slice(&obs.timestep.to_le_bytes());
    p.extend_from_slice(&(joints.len() as u32).to_le_bytes());
    for v in joints {
        p.extend_from_slice(&v.to_le_bytes());
    }
    p.extend_from_slice(&obs.capture_time_ms.to_le_bytes());
    p.extend_from_slice(&(obs.aux.len() as u32).to_le_bytes());
    p.extend_from_slice(&obs.aux);
    p
}

pub fn chunk_payload(chunk: &ActionChunk) -> Vec<u8> {
    let dim = chunk.actions.first().map_or(0, Action::dim);
    let mut p = Vec::with_capacity(24 + 8 * dim * chunk.len());
    p.extend_from_slice(&chunk.start_timestep.to_le_bytes());
    p.extend_from_slice(&chunk.chunk_id.to_le_bytes());
    p.extend_from_slice(&(chunk.len() as u32).to_le_bytes());
    p.extend_from_slice(&(dim as u32).to_le_bytes());
    for a in &chunk.actions {
        debug_assert_eq!(a.dim(), dim, "ragged chunk reached the encoder");
        for v in a.values() {
            p.extend_from_slice(&v.to_le_bytes());
        }
    }
    p
}

pub fn encode_observation(obs: &Observation) -> Vec<u8> {
    frame(MSG_OBSERVATION, observation_payload(obs))
}

pub fn encode_chunk(chunk: &ActionChunk) -> Vec<u8> {
    frame(MSG_ACTION_CHUNK, chunk_payload(chunk))
}

pub fn encode_hello(hello: &Hello) -> Vec<u8> {
    let mut p = Vec::with_capacity(12);
    p.extend_from_slice(&hello.protocol_version.to_le_bytes());
    p.extend_from_slice(&hello.action_dim.to_le_bytes());
    p.extend_from_slice(&hello.joint_dim.to_le_bytes());
    frame(MSG_HELLO, p)
}

/// Little-endian cursor over a payload.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(ProtocolError::Truncated {
                needed: self.pos + n,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>, ProtocolError> {
        let bytes = self.take(count.checked_mul(8).ok_or(ProtocolError::Truncated {
            needed: usize::MAX,
            available: self.buf.len(),
        })?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<(), ProtocolError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(ProtocolError::TrailingBytes(extra)),
        }
    }
}

/// Decodes the payload of a frame whose header has already been parsed.
pub fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<Message, ProtocolError> {
    let mut r = Reader::new(payload);
    let msg = match msg_type {
        MSG_OBSERVATION => {
            let timestep = r.u64()?;
            let joint_count = r.u32()? as usize;
            let joints = JointState::new(r.f64s(joint_count)?)?;
            let capture_time_ms = r.u64()?;
            let aux_len = r.u32()? as usize;
            let aux = r.take(aux_len)?.to_vec();
            Message::Observation(Observation {
                timestep,
                joints,
                aux,
                capture_time_ms,
            })
        }
        MSG_ACTION_CHUNK => {
            let start_timestep = r.u64()?;
            let chunk_id = r.u64()?;
            let len = r.u32()? as usize;
            let dim = r.u32()? as usize;
            if len == 0 {
                return Err(ValidationError::EmptyChunk.into());
            }
            if dim == 0 {
                return Err(ValidationError::ZeroDim.into());
            }
            let flat = r.f64s(len.saturating_mul(dim))?;
            let actions = flat
                .chunks_exact(dim)
                .map(|row| Action::new(row.to_vec()))
                .collect::<Result<Vec<_>, _>>()?;
            Message::ActionChunk(ActionChunk {
                start_timestep,
                chunk_id,
                actions,
            })
        }
        MSG_HELLO => Message::Hello(Hello {
            protocol_version: r.u32()?,
            action_dim: r.u32()?,
            joint_dim: r.u32()?,
        }),
        MSG_BYE => Message::Bye,
        other => return Err(ProtocolError::UnknownType(other)),
    };
    r.finish()?;
    Ok(msg)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let length = u32::from_le_bytes(bytes[..4].try_into().unwrap());
    let msg_type = bytes[4];
    if !(MSG_OBSERVATION..=MSG_BYE).contains(&msg_type) {
        return Err(ProtocolError::UnknownType(msg_type));
    }
    let body = &bytes[HEADER_LEN..];
    let length = length as usize;
    if body.len() < length {
        return Err(ProtocolError::Truncated {
            needed: HEADER_LEN + length,
            available: bytes.len(),
        });
    }
    if body.len() > length {
        return Err(ProtocolError::TrailingBytes(body.len() - length));
    }
    decode_payload(msg_type, body)
}

/// Reads one raw frame `(msg_type, payload)`. Returns `Ok(None)` on a clean
/// end of stream at a frame boundary.
pub fn read_raw_frame<R: Read>(r: &mut R) -> Result<Option<(u8, Vec<u8>)>, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(ProtocolError::Truncated {
                    needed: HEADER_LEN,
                    available: filled,
                })
            }
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let length = u32::from_le_bytes(header[..4].try_into().unwrap());
    if length > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(length));
    }
    let mut payload = vec![0u8; length as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Truncated {
            needed: HEADER_LEN + length as usize,
            available: HEADER_LEN,
        },
        _ => ProtocolError::Io(e),
    })?;
    Ok(Some((header[4], payload)))
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, ProtocolError> {
    match read_raw_frame(r)? {
        Some((t, payload)) => decode_payload(t, &payload).map(Some),
        None => Ok(None),
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), ProtocolError> {
    w.write_all(&msg.encode())?;
    w.flush()?;
    Ok(())
}

/// In-process carrier: an ordered, reliable queue of encoded frames, each
/// with a delivery time in virtual milliseconds.
///
/// Delivery times are made non-decreasing so FIFO order survives random
/// per-message latencies.
#[derive(Debug, Default)]
pub struct InProcessLink {
    frames: VecDeque<(u64, Vec<u8>)>,
    last_delivery_ms: u64,
}

impl InProcessLink {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enqueues `msg`, returning its delivery time.
    pub fn send(&mut self, now_ms: u64, latency_ms: u64, msg: &Message) -> u64 {
        let at = (now_ms + latency_ms).max(self.last_delivery_ms);
        self.last_delivery_ms = at;
        self.frames.push_back((at, msg.encode()));
        at
    }

    pub fn next_delivery_ms(&self) -> Option<u64> {
        self.frames.front().map(|(at, _)| *at)
    }

    /// Pops the head frame if it is due at `now_ms`.
    pub fn recv_due(&mut self, now_ms: u64) -> Option<Result<Message, ProtocolError>> {
        match self.frames.front() {
            Some((at, _)) if *at <= now_ms => {
                let (_, bytes) = self.frames.pop_front().unwrap();
                Some(decode_frame(&bytes))
            }
            _ => None,
        }
    }

    pub fn in_flight(&self) -> usize {
        self.frames.len()
    }
}
