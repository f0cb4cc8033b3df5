use std::fmt;
use std::io::{Read, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"MAGE";
pub const PROTOCOL_VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 10;
pub const DIGEST_LEN: usize = 32;
/// Bytes a frame adds around its payload.
pub const FRAME_OVERHEAD: usize = HEADER_LEN + DIGEST_LEN;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MsgType {
    Dispatch = 0x01,
    DispatchAck = 0x02,
    Return = 0x03,
    ReturnAck = 0x04,
    PullRequest = 0x05,
    Error = 0x06,
    Ping = 0x07,
    Pong = 0x08,
}

impl MsgType {
    pub const ALL: [MsgType; 8] = [
        MsgType::Dispatch,
        MsgType::DispatchAck,
        MsgType::Return,
        MsgType::ReturnAck,
        MsgType::PullRequest,
        MsgType::Error,
        MsgType::Ping,
        MsgType::Pong,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        MsgType::ALL.into_iter().find(|t| *t as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Dispatch => "DISPATCH",
            MsgType::DispatchAck => "DISPATCH_ACK",
            MsgType::Return => "RETURN",
            MsgType::ReturnAck => "RETURN_ACK",
            MsgType::PullRequest => "PULL_REQUEST",
            MsgType::Error => "ERROR",
            MsgType::Ping => "PING",
            MsgType::Pong => "PONG",
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("BAD_MAGIC")]
    BadMagic,
    #[error("BAD_VERSION: {0:#04x}")]
    BadVersion(u8),
    #[error("UNKNOWN_TYPE: {0:#04x}")]
    UnknownType(u8),
    #[error("OVERSIZE: payload of {0} bytes")]
    Oversize(usize),
    #[error("TRUNCATED")]
    Truncated,
    #[error("TRAILING: {0} bytes after frame")]
    Trailing(usize),
    #[error("BAD_DIGEST")]
    BadDigest,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl FrameError {
    pub fn code(&self) -> &'static str {
        match self {
            FrameError::BadMagic => "BAD_MAGIC",
            FrameError::BadVersion(_) => "BAD_VERSION",
            FrameError::UnknownType(_) => "UNKNOWN_TYPE",
            FrameError::Oversize(_) => "OVERSIZE",
            FrameError::Truncated => "TRUNCATED",
            FrameError::Trailing(_) => "TRAILING",
            FrameError::BadDigest => "BAD_DIGEST",
            FrameError::Io(_) => "IO",
        }
    }
}

/// `MAGE | version | type | len (u32 BE) | payload | SHA-256(payload)`.
pub fn frame_encode(msg_type: MsgType, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::Oversize(payload.len()));
    }
    let mut out = Vec::with_capacity(FRAME_OVERHEAD + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(PROTOCOL_VERSION);
    out.push(msg_type as u8);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(Sha256::digest(payload).as_slice());
    Ok(out)
}

/// Validates the fixed header and returns the message type and payload length.
pub fn parse_header(header: &[u8]) -> Result<(MsgType, usize), FrameError> {
    if header.len() < HEADER_LEN {
        return Err(FrameError::Truncated);
    }
    if header[..4] != MAGIC {
        return Err(FrameError::BadMagic);
    }
    if header[4] != PROTOCOL_VERSION {
        return Err(FrameError::BadVersion(header[4]));
    }
    let msg_type = MsgType::from_byte(header[5]).ok_or(FrameError::UnknownType(header[5]))?;
    let len = u32::from_be_bytes([header[6], header[7], header[8], header[9]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::Oversize(len));
    }
    Ok((msg_type, len))
}

fn verify(payload: &[u8], digest: &[u8]) -> Result<(), FrameError> {
    if Sha256::digest(payload).as_slice() != digest {
        return Err(FrameError::BadDigest);
    }
    Ok(())
}

/// Decodes exactly one frame; leftover bytes are an error.
pub fn frame_decode(bytes: &[u8]) -> Result<(MsgType, Vec<u8>), FrameError> {
    let (msg_type, len) = parse_header(bytes)?;
    let total = FRAME_OVERHEAD + len;
    if bytes.len() < total {
        return Err(FrameError::Truncated);
    }
    if bytes.len() > total {
        return Err(FrameError::Trailing(bytes.len() - total));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
    verify(payload, &bytes[HEADER_LEN + len..])?;
    Ok((msg_type, payload.to_vec()))
}

/// Reads one frame from a byte stream.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<(MsgType, Vec<u8>), FrameError> {
    let mut header = [0u8; HEADER_LEN];
    read_exact(reader, &mut header)?;
    let (msg_type, len) = parse_header(&header)?;
    let mut rest = vec![0u8; len + DIGEST_LEN];
    read_exact(reader, &mut rest)?;
    verify(&rest[..len], &rest[len..])?;
    rest.truncate(len);
    Ok((msg_type, rest))
}

fn read_exact<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<(), FrameError> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => FrameError::Truncated,
        _ => FrameError::Io(e),
    })
}

pub fn write_frame<W: Write>(writer: &mut W, frame: &[u8]) -> Result<(), FrameError> {
    writer.write_all(frame)?;
    writer.flush()?;
    Ok(())
}
