mod common;

use std::io::{BufReader, Write};
use std::net::TcpStream;

use shadercorpus::mix::{MixMode, MixSpec};
use shadercorpus::stream::protocol::{read_frame, BatchResponse, Frame, MessageType, Status};
use shadercorpus::stream::{serve_with, BatchRequest, Client, ClientError, Encoding, ServerHandle, ServerOptions};

fn server(max_in_flight: usize) -> ServerHandle {
    let pool = common::pool();
    let m = common::small_corpus(&pool);
    drop(pool);
    serve_with(&m, "127.0.0.1:0", ServerOptions { max_in_flight, ..Default::default() }).unwrap()
}

fn request(seed: u64, count: u32, side: u32) -> BatchRequest {
    let spec = MixSpec { mode: MixMode::Mixup, n: 3, alpha: 1.0, seed };
    BatchRequest::new(seed, count, common::res(side), spec, Encoding::RawRgb8)
}

fn raw_frames(stream: &TcpStream, n: usize) -> Vec<Frame> {
    let mut r = BufReader::new(stream.try_clone().unwrap());
    (0..n).map(|_| read_frame(&mut r, usize::MAX).unwrap().unwrap()).collect()
}

#[test]
fn repeated_requests_are_byte_identical() {
    let s = server(2);
    let mut c = Client::connect(s.addr()).unwrap();
    let req = BatchRequest { request_id: 7, ..request(11, 4, 16) };
    let a = c.request_batch_raw(&req).unwrap();
    let b = Client::connect(s.addr()).unwrap().request_batch_raw(&req).unwrap();
    assert_eq!(a, b);
    let other = c.request_batch_raw(&BatchRequest { request_id: 7, ..request(12, 4, 16) }).unwrap();
    assert_ne!(a, other);
    let resp = BatchResponse::decode(&a).unwrap();
    assert_eq!(resp.images.len(), 4);
    assert!(resp.images.iter().all(|i| i.payload.len() == 16 * 16 * 3 && i.sources.len() == 3));
}

#[test]
fn jpeg_and_cutmix_batches() {
    let s = server(2);
    let mut c = Client::connect(s.addr()).unwrap();
    let spec = MixSpec { mode: MixMode::Cutmix, n: 2, alpha: 1.0, seed: 3 };
    let resp = c.request_batch(&BatchRequest::new(3, 2, common::res(32), spec, Encoding::Jpeg)).unwrap();
    for img in &resp.images {
        assert_eq!(&img.payload[..2], &[0xff, 0xd8]);
        assert!(img.sources[0].rect.is_none() && img.sources[1].rect.is_some());
    }
}

#[test]
fn third_pipelined_request_is_busy() {
    let s = server(2);
    let mut stream = TcpStream::connect(s.addr()).unwrap();
    let mut bytes = Vec::new();
    for id in 1..=3 {
        let req = BatchRequest { request_id: id, ..request(id as u64, 16, 96) };
        bytes.extend(Frame::new(MessageType::BatchRequest, req.encode()).encode());
    }
    stream.write_all(&bytes).unwrap();
    let mut statuses: Vec<(u32, Status)> = raw_frames(&stream, 3)
        .iter()
        .map(|f| {
            let r = BatchResponse::decode(&f.body).unwrap();
            (r.request_id, r.status)
        })
        .collect();
    statuses.sort_by_key(|s| s.0);
    assert_eq!(statuses, vec![(1, Status::Ok), (2, Status::Ok), (3, Status::Busy)]);
}

#[test]
fn stats_count_served_images() {
    let s = server(2);
    let mut c = Client::connect(s.addr()).unwrap();
    c.request_batch(&request(1, 3, 8)).unwrap();
    c.request_batch(&request(2, 2, 8)).unwrap();
    let st = c.query_stats().unwrap();
    assert_eq!(st.images_served, 5);
    assert_eq!(st.requests, 2);
    assert!(st.uptime_secs > 0.0 && st.images_per_sec > 0.0);
}

#[test]
fn unknown_message_and_bad_request() {
    let s = server(2);
    let mut stream = TcpStream::connect(s.addr()).unwrap();
    stream.write_all(&Frame { version: 1, kind: 0x7f, body: vec![] }.encode()).unwrap();
    let bad = BatchRequest { request_id: 9, count: 0, ..request(1, 1, 8) };
    stream.write_all(&Frame::new(MessageType::BatchRequest, bad.encode()).encode()).unwrap();
    let frames = raw_frames(&stream, 2);
    let unknown = BatchResponse::decode(&frames[0].body).unwrap();
    assert_eq!(unknown.status, Status::UnknownMessage);
    let rejected = BatchResponse::decode(&frames[1].body).unwrap();
    assert_eq!((rejected.status, rejected.request_id), (Status::BadRequest, 9));
    assert!(!rejected.message.is_empty());
}

#[test]
fn version_mismatch_is_rejected_before_images() {
    let s = server(2);
    let mut stream = TcpStream::connect(s.addr()).unwrap();
    let req = BatchRequest { request_id: 5, ..request(1, 8, 64) };
    stream.write_all(&Frame { version: 2, kind: MessageType::BatchRequest as u8, body: req.encode() }.encode()).unwrap();
    let frame = raw_frames(&stream, 1).remove(0);
    assert_eq!(frame.version, 1);
    let resp = BatchResponse::decode(&frame.body).unwrap();
    assert_eq!((resp.status, resp.request_id, resp.images.len()), (Status::VersionMismatch, 5, 0));
    assert_eq!(frame.body.len(), 16 + resp.message.len());

    let mut c = Client::connect(s.addr()).unwrap().with_version(2);
    assert!(matches!(c.request_batch(&req), Err(ClientError::VersionMismatch { .. })));
}

#[test]
fn concurrent_clients_get_their_own_batches() {
    let s = server(2);
    let addr = s.addr();
    let handles: Vec<_> = (0..4u64)
        .map(|seed| {
            std::thread::spawn(move || {
                let mut c = Client::connect(addr).unwrap();
                c.request_batch_raw(&BatchRequest { request_id: 1, ..request(seed, 2, 16) }).unwrap()
            })
        })
        .collect();
    let bodies: Vec<Vec<u8>> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    for (seed, body) in bodies.iter().enumerate() {
        let again = Client::connect(addr).unwrap().request_batch_raw(&BatchRequest { request_id: 1, ..request(seed as u64, 2, 16) }).unwrap();
        assert_eq!(body, &again);
    }
    assert_ne!(bodies[0], bodies[1]);
}
