//! Batch streaming over TCP. Each response is a pure function of the
//! served manifest and the request, so consumers control freshness through
//! their seed schedule.

pub mod client;
pub mod protocol;
pub mod server;

use thiserror::Error;

use crate::render::RenderError;

pub use client::{Client, ClientError};
pub use protocol::{BatchRequest, BatchResponse, EncodedImage, Encoding, ServerStats, Status, PROTOCOL_VERSION};
pub use server::{serve, serve_with, ServerHandle, ServerOptions};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bind failed: {0}")]
    Bind(std::io::Error),
    #[error("manifest has no unique compiled programs")]
    NoPrograms,
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusManifest, Dialect};
    use crate::image::Resolution;
    use crate::mix::{MixMode, MixSpec};
    use crate::render::pool::PoolOptions;

    fn pruned_manifest(pool: &crate::render::pool::RenderPool) -> CorpusManifest {
        let mut m = CorpusManifest::new();
        for (i, body) in ["o=vec4(FC.x/r.x,t,0,1);", "o=vec4(0,FC.y/r.y,fract(t),1);", "o=vec4(sin(t),.5,FC.x/r.x,1);"]
            .iter()
            .enumerate()
        {
            m.ingest_snippet(body, Dialect::Twigl, &format!("s{i}")).unwrap();
        }
        let res = Resolution::square(8).unwrap();
        crate::corpus::validate_manifest(&mut m, pool, false).unwrap();
        crate::dedup::remove_static(&mut m, crate::dedup::StaticSettings { resolution: res, ..Default::default() }, pool).unwrap();
        crate::dedup::remove_duplicates(&mut m, crate::dedup::DuplicateSettings { t0: 0.0, resolution: res }, pool).unwrap();
        m
    }

    #[test]
    fn serves_batches_and_stats() {
        let opts = ServerOptions { pool: PoolOptions { workers: 1, ..PoolOptions::default() }, ..Default::default() };
        assert!(matches!(serve_with(&CorpusManifest::new(), "127.0.0.1:0", opts), Err(StreamError::NoPrograms)));
        let m = pruned_manifest(&crate::render::pool::RenderPool::new(opts.pool).unwrap());
        assert_eq!(m.unique_programs().len(), 3);
        let server = serve_with(&m, "127.0.0.1:0", opts).unwrap();
        let mut c = Client::connect(server.addr()).unwrap();
        let spec = MixSpec { mode: MixMode::Mixup, n: 2, alpha: 1.0, seed: 1 };
        let res = Resolution::square(8).unwrap();
        let resp = c.request_batch(&BatchRequest::new(1, 3, res, spec, Encoding::RawRgb8)).unwrap();
        assert_eq!(resp.images.len(), 3);
        assert_eq!(resp.payload_bytes(), 3 * 8 * 8 * 3);
        let err = c.request_batch(&BatchRequest::new(1, 0, res, spec, Encoding::RawRgb8)).unwrap_err();
        assert!(matches!(err, ClientError::ServerError { status: Status::BadRequest, .. }));
        let stats = c.query_stats().unwrap();
        assert_eq!(stats.images_served, 3);
        assert_eq!(stats.requests, 2);
        server.shutdown();
    }
}
