//! Length-prefixed frame protocol between split-inference client and server.
//!
//! Frame layout, all little-endian:
//! magic `SPLT` (4 bytes), version (1), message type (1),
//! payload length (u64), payload.
//!
//! The activation payload carries only the noised split activation and its
//! noise telemetry; there is no field that could hold the raw input, which
//! keeps the privacy boundary visible in the schema itself.

use std::io::{Read, Write};

use crate::binio::{
    read_f32, read_string, read_tensor, read_u64, read_u8, write_f32, write_string, write_tensor,
    write_u64,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SPLT";
pub const VERSION: u8 = 1;

/// Hard ceiling on accepted payload sizes (1 GiB).
pub const MAX_PAYLOAD: u64 = 1 << 30;

const TYPE_HELLO: u8 = 0;
const TYPE_ACTIVATION_REQUEST: u8 = 1;
const TYPE_PREDICTION_RESPONSE: u8 = 2;
const TYPE_ERROR: u8 = 3;

/// The noised split activation with its calibration telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPayload {
    pub model_id: String,
    pub tensor: Tensor,
    pub sigma: f32,
    pub achieved_dfil: f32,
    pub request_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Hello { info: String },
    ActivationRequest(ActivationPayload),
    PredictionResponse { request_id: u64, output: Tensor },
    Error { message: String },
}

impl WireMessage {
    fn msg_type(&self) -> u8 {
        match self {
            WireMessage::Hello { .. } => TYPE_HELLO,
            WireMessage::ActivationRequest(_) => TYPE_ACTIVATION_REQUEST,
            WireMessage::PredictionResponse { .. } => TYPE_PREDICTION_RESPONSE,
            WireMessage::Error { .. } => TYPE_ERROR,
        }
    }
}

fn encode_payload(msg: &WireMessage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    match msg {
        WireMessage::Hello { info } => write_string(&mut buf, info)?,
        WireMessage::ActivationRequest(p) => {
            write_string(&mut buf, &p.model_id)?;
            write_tensor(&mut buf, &p.tensor)?;
            write_f32(&mut buf, p.sigma)?;
            write_f32(&mut buf, p.achieved_dfil)?;
            write_u64(&mut buf, p.request_id)?;
        }
        WireMessage::PredictionResponse { request_id, output } => {
            write_u64(&mut buf, *request_id)?;
            write_tensor(&mut buf, output)?;
        }
        WireMessage::Error { message } => write_string(&mut buf, message)?,
    }
    Ok(buf)
}

fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<WireMessage> {
    let mut r = payload;
    let msg = match msg_type {
        TYPE_HELLO => WireMessage::Hello {
            info: read_string(&mut r, MAX_PAYLOAD as usize)?,
        },
        TYPE_ACTIVATION_REQUEST => WireMessage::ActivationRequest(ActivationPayload {
            model_id: read_string(&mut r, 4096)?,
            tensor: read_tensor(&mut r)?,
            sigma: read_f32(&mut r)?,
            achieved_dfil: read_f32(&mut r)?,
            request_id: read_u64(&mut r)?,
        }),
        TYPE_PREDICTION_RESPONSE => WireMessage::PredictionResponse {
            request_id: read_u64(&mut r)?,
            output: read_tensor(&mut r)?,
        },
        TYPE_ERROR => WireMessage::Error {
            message: read_string(&mut r, MAX_PAYLOAD as usize)?,
        },
        other => return Err(Error::Protocol(format!("unknown message type {other}"))),
    };
    if !r.is_empty() {
        return Err(Error::Protocol(format!(
            "{} trailing bytes in payload",
            r.len()
        )));
    }
    Ok(msg)
}

/// Encode a full frame (header + payload).
pub fn encode(msg: &WireMessage) -> Result<Vec<u8>> {
    let payload = encode_payload(msg)?;
    let mut frame = Vec::with_capacity(14 + payload.len());
    frame.extend_from_slice(&MAGIC);
    frame.push(VERSION);
    frame.push(msg.msg_type());
    frame.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Decode one full frame from a byte slice.
pub fn decode(bytes: &[u8]) -> Result<WireMessage> {
    let mut r = bytes;
    let msg = read_frame(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Protocol(format!(
            "{} trailing bytes after frame",
            r.len()
        )));
    }
    Ok(msg)
}

pub fn write_frame<W: Write>(w: &mut W, msg: &WireMessage) -> Result<()> {
    let frame = encode(msg)?;
    w.write_all(&frame)?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<WireMessage> {
    read_frame_or_eof(r)?.ok_or_else(|| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            "stream closed before a frame",
        ))
    })
}

/// Like [`read_frame`], but a clean end-of-stream at a frame boundary is
/// `Ok(None)` rather than an error. End-of-stream inside a frame is still a
/// truncation error.
pub fn read_frame_or_eof<R: Read>(r: &mut R) -> Result<Option<WireMessage>> {
    let mut magic = [0u8; 4];
    let mut filled = 0;
    while filled < magic.len() {
        let n = r.read(&mut magic[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(Error::Protocol(format!(
                "stream ended {filled} bytes into a frame header"
            )));
        }
        filled += n;
    }
    if magic != MAGIC {
        return Err(Error::Protocol(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u8(r)?;
    if version != VERSION {
        return Err(Error::Protocol(format!("unsupported version {version}")));
    }
    let msg_type = read_u8(r)?;
    let len = read_u64(r)?;
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!(
            "payload length {len} exceeds {MAX_PAYLOAD}"
        )));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    decode_payload(msg_type, &payload).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_payload() -> ActivationPayload {
        ActivationPayload {
            model_id: "cnn-middle".into(),
            tensor: Tensor::new(vec![2, 3], vec![1.5, -2.0, 0.25, 0.0, -0.0, 3.75]).unwrap(),
            sigma: 0.73,
            achieved_dfil: 10.0,
            request_id: 0xdead_beef_1234,
        }
    }

    #[test]
    fn all_message_types_roundtrip() {
        let msgs = vec![
            WireMessage::Hello {
                info: "client v1".into(),
            },
            WireMessage::ActivationRequest(sample_payload()),
            WireMessage::PredictionResponse {
                request_id: 7,
                output: Tensor::from_vec(vec![0.1, 0.9]),
            },
            WireMessage::Error {
                message: "unknown model".into(),
            },
        ];
        for msg in msgs {
            let bytes = encode(&msg).unwrap();
            assert_eq!(decode(&bytes).unwrap(), msg);
        }
    }

    #[test]
    fn truncated_frame_is_an_error_not_a_panic() {
        let bytes = encode(&WireMessage::ActivationRequest(sample_payload())).unwrap();
        for cut in [0, 3, 5, 13, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut} must fail");
        }
    }

    #[test]
    fn unknown_version_and_type_rejected() {
        let mut bytes = encode(&WireMessage::Hello { info: "x".into() }).unwrap();
        bytes[4] = 99;
        assert!(decode(&bytes).is_err());
        let mut bytes = encode(&WireMessage::Hello { info: "x".into() }).unwrap();
        bytes[5] = 42;
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn absurd_payload_length_rejected() {
        let mut bytes = encode(&WireMessage::Hello { info: "x".into() }).unwrap();
        bytes[6..14].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }
}
