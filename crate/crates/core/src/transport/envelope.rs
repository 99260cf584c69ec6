//! Wire layout of a message. All integers little-endian:
//!
//! ```text
//! magic u32 | msg_type u32 | tag u64 | src u32 | dst u32 | payload_len u64 | payload
//! ```
//!
//! `payload_len` counts bytes; the payload is a run of 32-bit floats. On TCP
//! each envelope travels as one record prefixed by its total length (`u32`).

use super::TransportError;

/// `b"VINF"` read as a little-endian `u32`.
pub const ENVELOPE_MAGIC: u32 = u32::from_le_bytes(*b"VINF");
pub const HEADER_LEN: usize = 32;
/// Source/destination id used by the coordinator process.
pub const COORDINATOR: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[repr(u32)]
pub enum MsgType {
    HaloFwd = 1,
    HaloBwd = 2,
    Gather = 3,
    Control = 4,
}

impl MsgType {
    pub fn from_u32(v: u32) -> Option<Self> {
        Some(match v {
            1 => Self::HaloFwd,
            2 => Self::HaloBwd,
            3 => Self::Gather,
            4 => Self::Control,
            _ => return None,
        })
    }
}

/// Packs the position of a message in the run: denoising step, layer
/// index within the step and a sub-index (ring round or layer digest).
/// Later positions always compare greater.
pub fn make_tag(step: u32, layer: u16, sub: u16) -> u64 {
    (step as u64) << 32 | (layer as u64) << 16 | sub as u64
}

pub fn split_tag(tag: u64) -> (u32, u16, u16) {
    ((tag >> 32) as u32, (tag >> 16) as u16, tag as u16)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub msg_type: MsgType,
    pub tag: u64,
    pub src: u32,
    pub dst: u32,
    pub payload: Vec<f32>,
}

impl Envelope {
    pub fn new(msg_type: MsgType, tag: u64, src: u32, dst: u32, payload: Vec<f32>) -> Self {
        Self {
            msg_type,
            tag,
            src,
            dst,
            payload,
        }
    }

    pub fn payload_len(&self) -> u64 {
        (self.payload.len() * 4) as u64
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() * 4
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&ENVELOPE_MAGIC.to_le_bytes());
        out.extend_from_slice(&(self.msg_type as u32).to_le_bytes());
        out.extend_from_slice(&self.tag.to_le_bytes());
        out.extend_from_slice(&self.src.to_le_bytes());
        out.extend_from_slice(&self.dst.to_le_bytes());
        out.extend_from_slice(&self.payload_len().to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TransportError> {
        if bytes.len() < HEADER_LEN {
            return Err(TransportError::Wire(format!(
                "{} bytes is shorter than a header",
                bytes.len()
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let magic = u32_at(0);
        if magic != ENVELOPE_MAGIC {
            return Err(TransportError::Wire(format!("bad magic {magic:#010x}")));
        }
        let msg_type = MsgType::from_u32(u32_at(4))
            .ok_or_else(|| TransportError::Wire(format!("unknown msg_type {}", u32_at(4))))?;
        let payload_len = u64_at(24);
        let body = &bytes[HEADER_LEN..];
        if payload_len != body.len() as u64 || payload_len % 4 != 0 {
            return Err(TransportError::Wire(format!(
                "payload_len {payload_len} disagrees with {} body bytes",
                body.len()
            )));
        }
        Ok(Self {
            msg_type,
            tag: u64_at(8),
            src: u32_at(16),
            dst: u32_at(20),
            payload: body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }
}

/// Carries raw bytes in a float payload: a length word, then the bytes
/// packed four to a word. Bit patterns are preserved exactly.
pub fn pack_bytes(bytes: &[u8]) -> Vec<f32> {
    let mut out = vec![f32::from_bits(bytes.len() as u32)];
    out.extend(bytes.chunks(4).map(|c| {
        let mut w = [0u8; 4];
        w[..c.len()].copy_from_slice(c);
        f32::from_bits(u32::from_le_bytes(w))
    }));
    out
}

pub fn unpack_bytes(words: &[f32]) -> Result<Vec<u8>, TransportError> {
    let (len, rest) = words
        .split_first()
        .ok_or_else(|| TransportError::Wire("empty byte payload".into()))?;
    let len = len.to_bits() as usize;
    if rest.len() != len.div_ceil(4) {
        return Err(TransportError::Wire("byte payload length mismatch".into()));
    }
    let mut out: Vec<u8> = rest.iter().flat_map(|w| w.to_bits().to_le_bytes()).collect();
    out.truncate(len);
    Ok(out)
}

pub fn words(values: &[u32]) -> Vec<f32> {
    values.iter().map(|&v| f32::from_bits(v)).collect()
}

pub fn unwords(payload: &[f32]) -> Vec<u32> {
    payload.iter().map(|v| v.to_bits()).collect()
}
