use std::io::{BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use rayon::prelude::*;

use super::protocol::{
    read_frame, BatchRequest, BatchResponse, EncodedImage, Encoding, Frame, MessageType, ProtocolError, ServerStats,
    Status, PROTOCOL_VERSION,
};
use super::StreamError;
use crate::corpus::CorpusManifest;
use crate::metrics::DEFAULT_JPEG_QUALITY;
use crate::mix::dataset::{generate, Program, Sampler};
use crate::render::pool::{PoolOptions, RenderPool};

/// Requests larger than this are answered with BadRequest and the
/// connection is closed.
const MAX_REQUEST_BODY: usize = 64 * 1024;

#[derive(Debug, Clone, Copy)]
pub struct ServerOptions {
    pub pool: PoolOptions,
    pub max_in_flight: usize,
    pub jpeg_quality: u8,
    /// Upper bound on the raw pixel bytes of one batch.
    pub max_batch_bytes: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { pool: PoolOptions::default(), max_in_flight: 2, jpeg_quality: DEFAULT_JPEG_QUALITY, max_batch_bytes: 1 << 30 }
    }
}

struct Shared {
    programs: Vec<Program>,
    pool: RenderPool,
    opts: ServerOptions,
    started: Instant,
    images_served: AtomicU64,
    requests: AtomicU64,
    stopping: AtomicBool,
    connections: Mutex<Vec<TcpStream>>,
}

/// A running server. Dropping the handle shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> ServerStats {
        self.shared.stats()
    }

    /// Block until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
        for c in self.shared.connections.lock().expect("connection list").drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop();
        }
    }
}

/// Serve the manifest's unique programs on `bind` with `workers` render workers.
pub fn serve(manifest: &CorpusManifest, bind: impl ToSocketAddrs, workers: usize) -> Result<ServerHandle, StreamError> {
    let mut opts = ServerOptions::default();
    opts.pool.workers = workers;
    serve_with(manifest, bind, opts)
}

pub fn serve_with(manifest: &CorpusManifest, bind: impl ToSocketAddrs, opts: ServerOptions) -> Result<ServerHandle, StreamError> {
    let programs: Vec<Program> = manifest
        .unique_programs()
        .into_iter()
        .map(|r| Program { id: r.id.clone(), glsl: r.glsl.as_str().into() })
        .collect();
    if programs.is_empty() {
        return Err(StreamError::NoPrograms);
    }
    if opts.max_in_flight == 0 {
        return Err(StreamError::BadParameter("max_in_flight must be at least 1".into()));
    }
    let listener = TcpListener::bind(bind).map_err(StreamError::Bind)?;
    let addr = listener.local_addr().map_err(StreamError::Bind)?;
    let pool = RenderPool::new(opts.pool)?;
    let shared = Arc::new(Shared {
        programs,
        pool,
        opts,
        started: Instant::now(),
        images_served: AtomicU64::new(0),
        requests: AtomicU64::new(0),
        stopping: AtomicBool::new(false),
        connections: Mutex::new(Vec::new()),
    });
    let s = shared.clone();
    let accept = std::thread::Builder::new()
        .name("stream-accept".into())
        .spawn(move || accept_loop(listener, s))
        .map_err(StreamError::Bind)?;
    Ok(ServerHandle { addr, shared, accept: Some(accept) })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        if let Ok(c) = stream.try_clone() {
            let mut conns = shared.connections.lock().expect("connection list");
            conns.retain(|c| c.peer_addr().is_ok());
            conns.push(c);
        }
        let s = shared.clone();
        let _ = std::thread::Builder::new().name("stream-conn".into()).spawn(move || connection(stream, s));
    }
}

type Writer = Arc<Mutex<TcpStream>>;

fn send(writer: &Writer, kind: MessageType, body: Vec<u8>) -> bool {
    let bytes = Frame::new(kind, body).encode();
    let mut w = writer.lock().expect("connection writer");
    w.write_all(&bytes).and_then(|_| w.flush()).is_ok()
}

fn send_status(writer: &Writer, status: Status, request_id: u32, message: impl Into<String>) -> bool {
    send(writer, MessageType::BatchResponse, BatchResponse::error(status, request_id, message).encode())
}

fn leading_request_id(body: &[u8]) -> u32 {
    body.get(..4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes"))).unwrap_or(0)
}

fn connection(stream: TcpStream, shared: Arc<Shared>) {
    let Ok(w) = stream.try_clone() else { return };
    let writer: Writer = Arc::new(Mutex::new(w));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let mut reader = BufReader::new(stream);
    loop {
        let frame = match read_frame(&mut reader, MAX_REQUEST_BODY) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e @ ProtocolError::TooLarge { .. }) => {
                send_status(&writer, Status::BadRequest, 0, e.to_string());
                break;
            }
            Err(_) => break,
        };
        if frame.version != PROTOCOL_VERSION {
            let msg = format!("server speaks version {PROTOCOL_VERSION}, got {}", frame.version);
            if !send_status(&writer, Status::VersionMismatch, leading_request_id(&frame.body), msg) {
                break;
            }
            continue;
        }
        let ok = match MessageType::from_code(frame.kind) {
            Some(MessageType::BatchRequest) => {
                shared.requests.fetch_add(1, Ordering::Relaxed);
                match BatchRequest::decode(&frame.body) {
                    Err(e) => send_status(&writer, Status::BadRequest, leading_request_id(&frame.body), e.to_string()),
                    Ok(req) => {
                        if in_flight.fetch_add(1, Ordering::SeqCst) >= shared.opts.max_in_flight {
                            in_flight.fetch_sub(1, Ordering::SeqCst);
                            send_status(&writer, Status::Busy, req.request_id, "too many requests in flight")
                        } else {
                            let (s, w, f) = (shared.clone(), writer.clone(), in_flight.clone());
                            std::thread::spawn(move || {
                                let resp = s.answer(&req);
                                send(&w, MessageType::BatchResponse, resp.encode());
                                f.fetch_sub(1, Ordering::SeqCst);
                            });
                            true
                        }
                    }
                }
            }
            Some(MessageType::StatsQuery) => send(&writer, MessageType::StatsReply, shared.stats().encode()),
            _ => send_status(&writer, Status::UnknownMessage, 0, format!("unknown message type {:#04x}", frame.kind)),
        };
        if !ok {
            break;
        }
    }
}

impl Shared {
    fn stats(&self) -> ServerStats {
        let images_served = self.images_served.load(Ordering::Relaxed);
        let uptime_secs = self.started.elapsed().as_secs_f64();
        ServerStats {
            images_served,
            requests: self.requests.load(Ordering::Relaxed),
            uptime_secs,
            images_per_sec: if uptime_secs > 0.0 { images_served as f64 / uptime_secs } else { 0.0 },
        }
    }

    fn answer(&self, req: &BatchRequest) -> BatchResponse {
        let id = req.request_id;
        let p = match req.params() {
            Ok(p) => p,
            Err(m) => return BatchResponse::error(Status::BadRequest, id, m),
        };
        let raw = p.count as u128 * p.resolution.byte_len() as u128;
        if raw > self.opts.max_batch_bytes as u128 {
            let m = format!("batch of {raw} raw bytes exceeds the {}-byte limit", self.opts.max_batch_bytes);
            return BatchResponse::error(Status::BadRequest, id, m);
        }
        let mut sampler = match Sampler::new(self.programs.clone(), p.spec, p.resolution) {
            Ok(s) => s,
            Err(e) => return BatchResponse::error(Status::BadRequest, id, e.to_string()),
        };
        let samples = match generate(&mut sampler, p.count, &self.pool) {
            Ok(s) => s,
            Err(e) => return BatchResponse::error(Status::Internal, id, e.to_string()),
        };
        let images: Result<Vec<EncodedImage>, String> = samples
            .into_par_iter()
            .map(|(_, s)| {
                let payload = match p.encoding {
                    Encoding::RawRgb8 => s.image.pixels,
                    Encoding::Jpeg => s.image.encode_jpeg(self.opts.jpeg_quality).map_err(|e| e.to_string())?,
                };
                Ok(EncodedImage { sources: s.sources, payload })
            })
            .collect();
        match images {
            Ok(images) => {
                self.images_served.fetch_add(images.len() as u64, Ordering::Relaxed);
                BatchResponse { status: Status::Ok, request_id: id, message: String::new(), images }
            }
            Err(m) => BatchResponse::error(Status::Internal, id, m),
        }
    }
}
