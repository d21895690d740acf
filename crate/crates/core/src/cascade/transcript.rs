//! Classical messages exchanged during reconciliation.
//!
//! Wire format, one frame per message:
//!
//! ```text
//! type: u8 | len: u32 LE | payload: [u8; len]
//! ```
//!
//! | type | message        | payload                                       |
//! |------|----------------|-----------------------------------------------|
//! | 0x01 | parity request | pass u8, start u32 LE, end u32 LE             |
//! | 0x02 | parity reply   | parity u8 (0 or 1)                            |
//! | 0x03 | shuffle seed   | pass u8, seed u64 LE                          |
//! | 0x04 | verify hash    | seed u64 LE, n_bits u8, hash u64 LE           |
//!
//! A parity request names the half-open range `[start, end)` of positions
//! in the pass's permuted order. Pass 0 uses the identity order; every later
//! pass is announced by a shuffle-seed message before its first request.

use crate::error::{QkdError, Result};

pub const TYPE_PARITY_REQUEST: u8 = 0x01;
pub const TYPE_PARITY_REPLY: u8 = 0x02;
pub const TYPE_SHUFFLE_SEED: u8 = 0x03;
pub const TYPE_VERIFY_HASH: u8 = 0x04;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Message {
    ParityRequest { pass: u8, start: u32, end: u32 },
    ParityReply { parity: bool },
    ShuffleSeed { pass: u8, seed: u64 },
    VerifyHash { seed: u64, n_bits: u8, hash: u64 },
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::ParityRequest { .. } => TYPE_PARITY_REQUEST,
            Message::ParityReply { .. } => TYPE_PARITY_REPLY,
            Message::ShuffleSeed { .. } => TYPE_SHUFFLE_SEED,
            Message::VerifyHash { .. } => TYPE_VERIFY_HASH,
        }
    }

    /// Key bits this message reveals to an eavesdropper.
    pub fn leaked_bits(&self) -> u64 {
        match self {
            Message::ParityReply { .. } => 1,
            Message::VerifyHash { n_bits, .. } => u64::from(*n_bits),
            _ => 0,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match *self {
            Message::ParityRequest { pass, start, end } => {
                p.push(pass);
                p.extend_from_slice(&start.to_le_bytes());
                p.extend_from_slice(&end.to_le_bytes());
            }
            Message::ParityReply { parity } => p.push(u8::from(parity)),
            Message::ShuffleSeed { pass, seed } => {
                p.push(pass);
                p.extend_from_slice(&seed.to_le_bytes());
            }
            Message::VerifyHash { seed, n_bits, hash } => {
                p.extend_from_slice(&seed.to_le_bytes());
                p.push(n_bits);
                p.extend_from_slice(&hash.to_le_bytes());
            }
        }
        p
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let payload = self.payload();
        out.push(self.type_byte());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
    }

    fn decode(kind: u8, p: &[u8]) -> Result<Self> {
        let want = match kind {
            TYPE_PARITY_REQUEST => 9,
            TYPE_PARITY_REPLY => 1,
            TYPE_SHUFFLE_SEED => 9,
            TYPE_VERIFY_HASH => 17,
            other => {
                return Err(QkdError::Transcript(format!(
                    "unknown message type 0x{other:02x}"
                )))
            }
        };
        if p.len() != want {
            return Err(QkdError::Transcript(format!(
                "message type 0x{kind:02x} needs {want} payload bytes, got {}",
                p.len()
            )));
        }
        let u32_at = |i: usize| u32::from_le_bytes(p[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(p[i..i + 8].try_into().unwrap());
        Ok(match kind {
            TYPE_PARITY_REQUEST => Message::ParityRequest {
                pass: p[0],
                start: u32_at(1),
                end: u32_at(5),
            },
            TYPE_PARITY_REPLY => match p[0] {
                0 | 1 => Message::ParityReply { parity: p[0] == 1 },
                b => {
                    return Err(QkdError::Transcript(format!(
                        "parity byte {b} is not 0 or 1"
                    )))
                }
            },
            TYPE_SHUFFLE_SEED => Message::ShuffleSeed {
                pass: p[0],
                seed: u64_at(1),
            },
            _ => Message::VerifyHash {
                seed: u64_at(0),
                n_bits: p[8],
                hash: u64_at(9),
            },
        })
    }
}

/// Ordered log of every message sent in either direction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn push(&mut self, msg: Message) {
        self.messages.push(msg);
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn count(&self, type_byte: u8) -> usize {
        self.messages
            .iter()
            .filter(|m| m.type_byte() == type_byte)
            .count()
    }

    pub fn leaked_bits(&self) -> u64 {
        self.messages.iter().map(Message::leaked_bits).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for m in &self.messages {
            m.encode_into(&mut out);
        }
        out
    }

    pub fn decode(mut bytes: &[u8]) -> Result<Self> {
        let mut messages = Vec::new();
        while !bytes.is_empty() {
            if bytes.len() < 5 {
                return Err(QkdError::Transcript("truncated frame header".into()));
            }
            let kind = bytes[0];
            let len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
            let rest = &bytes[5..];
            if rest.len() < len {
                return Err(QkdError::Transcript(format!(
                    "frame declares {len} payload bytes, {} remain",
                    rest.len()
                )));
            }
            messages.push(Message::decode(kind, &rest[..len])?);
            bytes = &rest[len..];
        }
        Ok(Transcript { messages })
    }
}
