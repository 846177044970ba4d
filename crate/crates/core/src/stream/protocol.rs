//! Wire format. Every message is a 12-byte frame header followed by a body;
//! all integers and floats are little-endian.
//!
//! ```text
//! frame header   magic "SHDC" | version u8 | type u8 | reserved u16 | body_len u32
//!
//! 0x01 BatchRequest (36 bytes)
//!   request_id u32 | seed u64 | count u32 | width u32 | height u32
//!   mix_mode u8 | mix_n u8 | encoding u8 | reserved u8 | alpha f64
//!
//! 0x02 BatchResponse
//!   status u16 | reserved u16 | request_id u32 | image_count u32
//!   message_len u32 | message [utf-8]
//!   image_count × {
//!     source_count u16 | reserved u16
//!     source_count × {
//!       id_len u16 | flags u8 | reserved u8 | id [utf-8]
//!       t f64 | weight f64 | rect_x u32 | rect_y u32 | rect_w u32 | rect_h u32
//!     }
//!     payload_len u32 | payload
//!   }
//!
//! 0x03 StatsQuery (empty)
//!
//! 0x04 StatsReply (32 bytes)
//!   images_served u64 | requests u64 | uptime_secs f64 | images_per_sec f64
//! ```
//!
//! Source flags: bit 0 means `weight` is meaningful, bit 1 means the rect
//! is. Unused fields are zero.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::image::Resolution;
use crate::mix::{MixMode, MixSpec, Rect, SourceRef};

pub const MAGIC: [u8; 4] = *b"SHDC";
pub const PROTOCOL_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;
pub const REQUEST_BODY_LEN: usize = 36;
pub const RESPONSE_HEADER_LEN: usize = 16;
pub const STATS_BODY_LEN: usize = 32;
/// Fixed bytes per image record, excluding sources and payload.
pub const IMAGE_OVERHEAD: usize = 8;
/// Fixed bytes per source record, excluding the id.
pub const SOURCE_OVERHEAD: usize = 36;

const FLAG_WEIGHT: u8 = 1;
const FLAG_RECT: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    BatchRequest = 0x01,
    BatchResponse = 0x02,
    StatsQuery = 0x03,
    StatsReply = 0x04,
}

impl MessageType {
    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0x01 => Some(Self::BatchRequest),
            0x02 => Some(Self::BatchResponse),
            0x03 => Some(Self::StatsQuery),
            0x04 => Some(Self::StatsReply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Status {
    Ok = 0,
    BadRequest = 1,
    VersionMismatch = 2,
    Busy = 3,
    Internal = 4,
    UnknownMessage = 5,
}

impl Status {
    pub fn from_code(c: u16) -> Option<Self> {
        match c {
            0 => Some(Self::Ok),
            1 => Some(Self::BadRequest),
            2 => Some(Self::VersionMismatch),
            3 => Some(Self::Busy),
            4 => Some(Self::Internal),
            5 => Some(Self::UnknownMessage),
            _ => None,
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::BadRequest => "bad-request",
            Status::VersionMismatch => "version-mismatch",
            Status::Busy => "busy",
            Status::Internal => "internal",
            Status::UnknownMessage => "unknown-message",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Encoding {
    RawRgb8 = 0,
    Jpeg = 1,
}

impl Encoding {
    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Self::RawRgb8),
            1 => Some(Self::Jpeg),
            _ => None,
        }
    }
}

impl std::str::FromStr for Encoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" | "raw_rgb8" | "raw-rgb8" => Ok(Self::RawRgb8),
            "jpeg" | "jpg" => Ok(Self::Jpeg),
            other => Err(format!("unknown encoding `{other}` (expected raw_rgb8 or jpeg)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("message body of {len} bytes exceeds the {limit}-byte limit")]
    TooLarge { len: usize, limit: usize },
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn malformed(what: &'static str, detail: impl Into<String>) -> ProtocolError {
    ProtocolError::Malformed { what, detail: detail.into() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub version: u8,
    pub kind: u8,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(kind: MessageType, body: Vec<u8>) -> Self {
        Self { version: PROTOCOL_VERSION, kind: kind as u8, body }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.push(self.kind);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.body.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.body);
        out
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

/// Read one frame. `Ok(None)` on a clean end of stream before any header byte.
pub fn read_frame(r: &mut impl Read, max_body: usize) -> Result<Option<Frame>, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let magic: [u8; 4] = header[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    let len = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    if len > max_body {
        return Err(ProtocolError::TooLarge { len, limit: max_body });
    }
    let mut body = Vec::new();
    r.take(len as u64).read_to_end(&mut body)?;
    if body.len() != len {
        return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
    }
    Ok(Some(Frame { version: header[4], kind: header[5], body }))
}

/// Bounds-checked little-endian reader over a message body.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() - self.pos < n {
            return Err(malformed(self.what, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn string(&mut self, n: usize) -> Result<String, ProtocolError> {
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| malformed(self.what, e.to_string()))
    }

    fn finish(self) -> Result<(), ProtocolError> {
        if self.pos != self.buf.len() {
            return Err(malformed(self.what, format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// A batch request as it appears on the wire. Fields are kept raw so that
/// out-of-range values can be answered in-band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRequest {
    pub request_id: u32,
    pub seed: u64,
    pub count: u32,
    pub width: u32,
    pub height: u32,
    pub mix_mode: u8,
    pub mix_n: u8,
    pub encoding: u8,
    pub alpha: f64,
}

/// A request whose fields have been checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchParams {
    pub count: usize,
    pub resolution: Resolution,
    pub spec: MixSpec,
    pub encoding: Encoding,
}

impl BatchRequest {
    pub fn new(seed: u64, count: u32, resolution: Resolution, spec: MixSpec, encoding: Encoding) -> Self {
        Self {
            request_id: 0,
            seed,
            count,
            width: resolution.width,
            height: resolution.height,
            mix_mode: spec.mode.code(),
            mix_n: spec.n.min(u8::MAX as usize) as u8,
            encoding: encoding as u8,
            alpha: spec.alpha,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(REQUEST_BODY_LEN);
        b.extend_from_slice(&self.request_id.to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&self.count.to_le_bytes());
        b.extend_from_slice(&self.width.to_le_bytes());
        b.extend_from_slice(&self.height.to_le_bytes());
        b.extend_from_slice(&[self.mix_mode, self.mix_n, self.encoding, 0]);
        b.extend_from_slice(&self.alpha.to_le_bytes());
        b
    }

    pub fn decode(body: &[u8]) -> Result<Self, ProtocolError> {
        let mut c = Cursor::new(body, "batch request");
        let req = Self {
            request_id: c.u32()?,
            seed: c.u64()?,
            count: c.u32()?,
            width: c.u32()?,
            height: c.u32()?,
            mix_mode: c.u8()?,
            mix_n: c.u8()?,
            encoding: c.u8()?,
            alpha: {
                c.u8()?;
                c.f64()?
            },
        };
        c.finish()?;
        Ok(req)
    }

    pub fn params(&self) -> Result<BatchParams, String> {
        if self.count == 0 {
            return Err("count must be at least 1".into());
        }
        let resolution = Resolution::new(self.width, self.height).map_err(|e| e.to_string())?;
        let mode = MixMode::from_code(self.mix_mode).ok_or_else(|| format!("unknown mix mode {}", self.mix_mode))?;
        let encoding = Encoding::from_code(self.encoding).ok_or_else(|| format!("unknown encoding {}", self.encoding))?;
        let spec = MixSpec { mode, n: self.mix_n as usize, alpha: self.alpha, seed: self.seed };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(BatchParams { count: self.count as usize, resolution, spec, encoding })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    pub sources: Vec<SourceRef>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResponse {
    pub status: Status,
    pub request_id: u32,
    pub message: String,
    pub images: Vec<EncodedImage>,
}

impl BatchResponse {
    pub fn error(status: Status, request_id: u32, message: impl Into<String>) -> Self {
        Self { status, request_id, message: message.into(), images: Vec::new() }
    }

    pub fn payload_bytes(&self) -> usize {
        self.images.iter().map(|i| i.payload.len()).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(RESPONSE_HEADER_LEN + self.message.len() + self.payload_bytes());
        b.extend_from_slice(&(self.status as u16).to_le_bytes());
        b.extend_from_slice(&0u16.to_le_bytes());
        b.extend_from_slice(&self.request_id.to_le_bytes());
        b.extend_from_slice(&(self.images.len() as u32).to_le_bytes());
        b.extend_from_slice(&(self.message.len() as u32).to_le_bytes());
        b.extend_from_slice(self.message.as_bytes());
        for img in &self.images {
            b.extend_from_slice(&(img.sources.len() as u16).to_le_bytes());
            b.extend_from_slice(&0u16.to_le_bytes());
            for s in &img.sources {
                let flags = if s.weight.is_some() { FLAG_WEIGHT } else { 0 } | if s.rect.is_some() { FLAG_RECT } else { 0 };
                b.extend_from_slice(&(s.shader_id.len() as u16).to_le_bytes());
                b.extend_from_slice(&[flags, 0]);
                b.extend_from_slice(s.shader_id.as_bytes());
                b.extend_from_slice(&s.t.to_le_bytes());
                b.extend_from_slice(&s.weight.unwrap_or(0.0).to_le_bytes());
                let r = s.rect.unwrap_or(Rect { x: 0, y: 0, width: 0, height: 0 });
                for v in [r.x, r.y, r.width, r.height] {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
            b.extend_from_slice(&(img.payload.len() as u32).to_le_bytes());
            b.extend_from_slice(&img.payload);
        }
        b
    }

    pub fn decode(body: &[u8]) -> Result<Self, ProtocolError> {
        let mut c = Cursor::new(body, "batch response");
        let code = c.u16()?;
        let status = Status::from_code(code).ok_or_else(|| malformed("batch response", format!("status {code}")))?;
        c.u16()?;
        let request_id = c.u32()?;
        let count = c.u32()? as usize;
        let message_len = c.u32()? as usize;
        let message = c.string(message_len)?;
        let mut images = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = c.u16()? as usize;
            c.u16()?;
            let mut sources = Vec::with_capacity(n);
            for _ in 0..n {
                let id_len = c.u16()? as usize;
                let flags = c.u8()?;
                c.u8()?;
                let shader_id = c.string(id_len)?;
                let t = c.f64()?;
                let weight = c.f64()?;
                let rect = Rect { x: c.u32()?, y: c.u32()?, width: c.u32()?, height: c.u32()? };
                sources.push(SourceRef {
                    shader_id,
                    t,
                    weight: (flags & FLAG_WEIGHT != 0).then_some(weight),
                    rect: (flags & FLAG_RECT != 0).then_some(rect),
                });
            }
            let len = c.u32()? as usize;
            let payload = c.take(len)?.to_vec();
            images.push(EncodedImage { sources, payload });
        }
        c.finish()?;
        Ok(Self { status, request_id, message, images })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerStats {
    pub images_served: u64,
    pub requests: u64,
    pub uptime_secs: f64,
    pub images_per_sec: f64,
}

impl ServerStats {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(STATS_BODY_LEN);
        b.extend_from_slice(&self.images_served.to_le_bytes());
        b.extend_from_slice(&self.requests.to_le_bytes());
        b.extend_from_slice(&self.uptime_secs.to_le_bytes());
        b.extend_from_slice(&self.images_per_sec.to_le_bytes());
        b
    }

    pub fn decode(body: &[u8]) -> Result<Self, ProtocolError> {
        let mut c = Cursor::new(body, "stats reply");
        let s = Self { images_served: c.u64()?, requests: c.u64()?, uptime_secs: c.f64()?, images_per_sec: c.f64()? };
        c.finish()?;
        Ok(s)
    }
}

/// Encoded size of a successful response body, excluding the frame header.
pub fn response_body_len(response: &BatchResponse) -> usize {
    RESPONSE_HEADER_LEN
        + response.message.len()
        + response
            .images
            .iter()
            .map(|i| {
                IMAGE_OVERHEAD
                    + i.payload.len()
                    + i.sources.iter().map(|s| SOURCE_OVERHEAD + s.shader_id.len()).sum::<usize>()
            })
            .sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trip() {
        let spec = MixSpec { mode: MixMode::Cutmix, n: 3, alpha: 0.5, seed: 9 };
        let mut req = BatchRequest::new(9, 8, Resolution::new(64, 32).unwrap(), spec, Encoding::Jpeg);
        req.request_id = 77;
        let body = req.encode();
        assert_eq!(body.len(), REQUEST_BODY_LEN);
        let back = BatchRequest::decode(&body).unwrap();
        assert_eq!(back, req);
        let p = back.params().unwrap();
        assert_eq!(p.spec, spec);
        assert_eq!(p.encoding, Encoding::Jpeg);
        assert!(BatchRequest::decode(&body[..35]).is_err());
    }

    #[test]
    fn zero_count_is_rejected() {
        let req = BatchRequest::new(0, 0, Resolution::square(8).unwrap(), MixSpec::default(), Encoding::RawRgb8);
        assert!(req.params().is_err());
    }

    #[test]
    fn response_round_trip_and_length() {
        let resp = BatchResponse {
            status: Status::Ok,
            request_id: 3,
            message: String::new(),
            images: vec![EncodedImage {
                sources: vec![
                    SourceRef { shader_id: "abc".into(), t: 0.1, weight: Some(0.25), rect: None },
                    SourceRef { shader_id: "de".into(), t: 1.3, weight: None, rect: Some(Rect { x: 1, y: 2, width: 3, height: 4 }) },
                ],
                payload: vec![7; 10],
            }],
        };
        let body = resp.encode();
        assert_eq!(body.len(), response_body_len(&resp));
        assert_eq!(body.len(), 16 + 8 + 10 + 2 * 36 + 5);
        assert_eq!(BatchResponse::decode(&body).unwrap(), resp);
    }

    #[test]
    fn frame_round_trip() {
        let f = Frame::new(MessageType::StatsQuery, vec![]);
        let bytes = f.encode();
        assert_eq!(bytes, [b'S', b'H', b'D', b'C', 1, 3, 0, 0, 0, 0, 0, 0]);
        let back = read_frame(&mut &bytes[..], 16).unwrap().unwrap();
        assert_eq!(back, f);
        assert!(read_frame(&mut &[][..], 16).unwrap().is_none());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_frame(&mut &bad[..], 16), Err(ProtocolError::BadMagic(_))));
    }
}
