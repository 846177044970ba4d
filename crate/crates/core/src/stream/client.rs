use std::io::{self, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};

use thiserror::Error;

use super::protocol::{
    read_frame, BatchRequest, BatchResponse, Frame, MessageType, ProtocolError, ServerStats, Status, PROTOCOL_VERSION,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("protocol version mismatch: client {client}, server {server}")]
    VersionMismatch { client: u8, server: u8 },
    #[error("connection lost: {0}")]
    ConnectionLost(io::Error),
    #[error("server error {status}: {message}")]
    ServerError { status: Status, message: String },
    #[error(transparent)]
    Protocol(ProtocolError),
}

impl From<ProtocolError> for ClientError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Io(e) => ClientError::ConnectionLost(e),
            other => ClientError::Protocol(other),
        }
    }
}

/// Blocking client holding one connection.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    version: u8,
    next_id: u32,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).map_err(ClientError::ConnectionLost)?;
        let _ = stream.set_nodelay(true);
        let writer = stream.try_clone().map_err(ClientError::ConnectionLost)?;
        Ok(Self { reader: BufReader::new(stream), writer, version: PROTOCOL_VERSION, next_id: 0 })
    }

    /// Speak a different protocol version; only useful for testing servers.
    pub fn with_version(mut self, version: u8) -> Self {
        self.version = version;
        self
    }

    fn send(&mut self, kind: MessageType, body: Vec<u8>) -> Result<(), ClientError> {
        let frame = Frame { version: self.version, kind: kind as u8, body };
        self.writer.write_all(&frame.encode()).and_then(|_| self.writer.flush()).map_err(ClientError::ConnectionLost)
    }

    fn receive(&mut self) -> Result<Frame, ClientError> {
        let frame = read_frame(&mut self.reader, u32::MAX as usize)?
            .ok_or_else(|| ClientError::ConnectionLost(io::ErrorKind::UnexpectedEof.into()))?;
        if frame.version != self.version {
            return Err(ClientError::VersionMismatch { client: self.version, server: frame.version });
        }
        Ok(frame)
    }

    /// Send `request` and return the encoded response body of a successful
    /// reply. A request id of 0 is replaced by the connection's next id.
    pub fn request_batch_raw(&mut self, request: &BatchRequest) -> Result<Vec<u8>, ClientError> {
        let mut req = *request;
        if req.request_id == 0 {
            self.next_id = self.next_id.wrapping_add(1).max(1);
            req.request_id = self.next_id;
        }
        self.send(MessageType::BatchRequest, req.encode())?;
        loop {
            let frame = self.receive()?;
            if frame.kind != MessageType::BatchResponse as u8 {
                continue;
            }
            let resp = BatchResponse::decode(&frame.body)?;
            if resp.status == Status::VersionMismatch {
                return Err(ClientError::VersionMismatch { client: self.version, server: PROTOCOL_VERSION });
            }
            if resp.request_id != req.request_id && resp.status == Status::Ok {
                continue;
            }
            if resp.status != Status::Ok {
                return Err(ClientError::ServerError { status: resp.status, message: resp.message });
            }
            return Ok(frame.body);
        }
    }

    pub fn request_batch(&mut self, request: &BatchRequest) -> Result<BatchResponse, ClientError> {
        let body = self.request_batch_raw(request)?;
        Ok(BatchResponse::decode(&body)?)
    }

    pub fn query_stats(&mut self) -> Result<ServerStats, ClientError> {
        self.send(MessageType::StatsQuery, Vec::new())?;
        loop {
            let frame = self.receive()?;
            match MessageType::from_code(frame.kind) {
                Some(MessageType::StatsReply) => return Ok(ServerStats::decode(&frame.body)?),
                Some(MessageType::BatchResponse) => {
                    let resp = BatchResponse::decode(&frame.body)?;
                    if resp.status != Status::Ok {
                        return Err(ClientError::ServerError { status: resp.status, message: resp.message });
                    }
                }
                _ => {}
            }
        }
    }
}
