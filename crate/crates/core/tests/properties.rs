use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use shadercorpus::corpus::{CorpusManifest, DedupState, Dialect, ProgramRecord, Status};
use shadercorpus::image::{Image, Resolution};
use shadercorpus::metrics::{nearest_rank, self_similarity, DownsampledMad, MetricSummary};
use shadercorpus::mix::{cutmix, cutmix_rects, mixup, sample_dirichlet, MixMode, MixSpec, Rect, SourceRef};
use shadercorpus::render::{sample_timesteps, timestep_at};
use shadercorpus::stream::protocol::{BatchResponse, EncodedImage, Frame, ServerStats, Status as WireStatus};
use shadercorpus::stream::BatchRequest;

fn image_strategy(w: u32, h: u32) -> impl Strategy<Value = Image> {
    prop::collection::vec(any::<u8>(), (w * h * 3) as usize).prop_map(move |p| Image::new(w, h, p, "x", 0.0))
}

fn images(n: usize) -> impl Strategy<Value = Vec<Image>> {
    prop::collection::vec(image_strategy(5, 4), n)
}

proptest! {
    #[test]
    fn mixup_is_permutation_equivariant(imgs in images(4), seed in any::<u64>(), shuffle in any::<u64>()) {
        let w = sample_dirichlet(4, 1.0, seed).unwrap();
        let mut order: Vec<usize> = (0..4).collect();
        order.shuffle(&mut rand::rngs::StdRng::seed_from_u64(shuffle));
        let pi: Vec<Image> = order.iter().map(|&i| imgs[i].clone()).collect();
        let pw: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        prop_assert_eq!(mixup(&imgs, &w).unwrap().pixels, mixup(&pi, &pw).unwrap().pixels);
    }

    #[test]
    fn mixup_one_hot_is_identity(imgs in images(3), k in 0usize..3) {
        let mut w = vec![0.0; 3];
        w[k] = 1.0;
        prop_assert_eq!(mixup(&imgs, &w).unwrap().pixels, imgs[k].pixels.clone());
    }

    #[test]
    fn mixup_stays_within_channel_bounds(imgs in images(3), seed in any::<u64>()) {
        let w = sample_dirichlet(3, 0.7, seed).unwrap();
        let m = mixup(&imgs, &w).unwrap();
        for (i, &p) in m.pixels.iter().enumerate() {
            let lo = imgs.iter().map(|im| im.pixels[i]).min().unwrap();
            let hi = imgs.iter().map(|im| im.pixels[i]).max().unwrap();
            prop_assert!(lo <= p && p <= hi);
        }
    }

    #[test]
    fn dirichlet_is_on_the_simplex(n in 1usize..12, alpha in 0.01f64..10.0, seed in any::<u64>()) {
        let w = sample_dirichlet(n, alpha, seed).unwrap();
        prop_assert_eq!(w.len(), n);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cutmix_rects_fit_the_canvas(w in 1u32..200, h in 1u32..200, donors in 0usize..8, seed in any::<u64>()) {
        let res = Resolution::new(w, h).unwrap();
        let rects = cutmix_rects(res, donors, seed);
        prop_assert_eq!(rects.len(), donors);
        prop_assert!(rects.iter().all(|r| r.fits(res)));
    }

    #[test]
    fn cutmix_replays_from_recorded_rects(imgs in images(4), seed in any::<u64>()) {
        let out = cutmix(&imgs, seed).unwrap();
        let mut expect = imgs[0].clone();
        for (donor, src) in imgs.iter().zip(&out.sources).skip(1) {
            let r = src.rect.unwrap();
            for y in r.y..r.y + r.height {
                for x in r.x..r.x + r.width {
                    let o = expect.offset(x, y);
                    expect.pixels[o..o + 3].copy_from_slice(&donor.pixel(x, y));
                }
            }
        }
        prop_assert_eq!(out.image.pixels, expect.pixels);
        prop_assert!(out.sources[0].rect.is_none());
    }

    #[test]
    fn nearest_rank_matches_sort_oracle(values in prop::collection::vec(-1e6f64..1e6, 1..300), q in 0.0f64..=1.0) {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = (1..=n).find(|&k| k as f64 >= q * n as f64 - 1e-9).unwrap_or(n);
        prop_assert_eq!(nearest_rank(&sorted, q), sorted[rank - 1]);
    }

    #[test]
    fn summary_of_a_constant_sample(v in -1e6f64..1e6, n in 1usize..50) {
        let s = MetricSummary::of(&vec![v; n]);
        prop_assert_eq!(s.q5, v);
        prop_assert_eq!(s.q95, v);
        prop_assert!((s.avg - v).abs() <= v.abs() * 1e-12);
    }

    #[test]
    fn self_similarity_ignores_constant_shifts(img in image_strategy(16, 16), shift in 0u8..64, seed in any::<u64>()) {
        let clipped = Image::new(16, 16, img.pixels.iter().map(|p| p / 2).collect(), "a", 0.0);
        let shifted = Image::new(16, 16, clipped.pixels.iter().map(|p| p + shift).collect(), "b", 0.0);
        let d = DownsampledMad { grid: 4 };
        let a = self_similarity(&clipped, 8, 0.25, &d, seed).unwrap();
        let b = self_similarity(&shifted, 8, 0.25, &d, seed).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn timesteps_stay_in_their_slots(seed in any::<u64>(), k in 0u64..10_000) {
        let (offset, t) = timestep_at(seed, 4.0, k);
        prop_assert!((0.0..0.25).contains(&offset));
        prop_assert!(t >= k as f64 / 4.0 && t < k as f64 / 4.0 + 0.25);
        let plan = sample_timesteps(8, seed).unwrap();
        prop_assert!(plan.values.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn batch_request_round_trips(
        request_id in any::<u32>(), seed in any::<u64>(), count in any::<u32>(), width in any::<u32>(),
        height in any::<u32>(), mix_mode in any::<u8>(), mix_n in any::<u8>(), encoding in any::<u8>(),
        alpha in any::<f64>().prop_filter("not NaN", |a| !a.is_nan()),
    ) {
        let req = BatchRequest { request_id, seed, count, width, height, mix_mode, mix_n, encoding, alpha };
        let body = req.encode();
        prop_assert_eq!(body.len(), 36);
        prop_assert_eq!(BatchRequest::decode(&body).unwrap(), req);
    }

    #[test]
    fn batch_response_round_trips(
        request_id in any::<u32>(),
        message in "[a-z ]{0,20}",
        sources in prop::collection::vec(("[a-z0-9_]{1,12}", any::<f64>(), prop::option::of(0.0f64..1.0), prop::option::of(any::<[u32; 4]>())), 0..4),
        payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 0..4),
    ) {
        prop_assume!(sources.iter().all(|s| !s.1.is_nan()));
        let srcs: Vec<SourceRef> = sources
            .iter()
            .map(|(id, t, w, r)| SourceRef {
                shader_id: id.clone(),
                t: *t,
                weight: *w,
                rect: r.map(|[x, y, width, height]| Rect { x, y, width, height }),
            })
            .collect();
        let images: Vec<EncodedImage> =
            payloads.into_iter().map(|payload| EncodedImage { sources: srcs.clone(), payload }).collect();
        let resp = BatchResponse { status: WireStatus::Ok, request_id, message, images };
        let body = resp.encode();
        let id_bytes: usize = srcs.iter().map(|s| s.shader_id.len()).sum();
        let expect = 16 + resp.message.len()
            + resp.images.iter().map(|i| 8 + 36 * srcs.len() + id_bytes + i.payload.len()).sum::<usize>();
        prop_assert_eq!(body.len(), expect);
        prop_assert_eq!(BatchResponse::decode(&body).unwrap(), resp);
    }

    #[test]
    fn stats_and_frames_round_trip(a in any::<u64>(), b in any::<u64>(), c in 0.0f64..1e9, d in 0.0f64..1e9, kind in any::<u8>()) {
        let s = ServerStats { images_served: a, requests: b, uptime_secs: c, images_per_sec: d };
        prop_assert_eq!(ServerStats::decode(&s.encode()).unwrap(), s);
        let frame = Frame { version: 1, kind, body: s.encode() };
        let bytes = frame.encode();
        prop_assert_eq!(&bytes[..4], b"SHDC");
        prop_assert_eq!(bytes.len(), 12 + 32);
        let back = shadercorpus::stream::protocol::read_frame(&mut &bytes[..], 1 << 20).unwrap().unwrap();
        prop_assert_eq!(back.body, frame.body);
        prop_assert_eq!(back.kind, kind);
    }

    #[test]
    fn reconcile_is_order_independent_and_idempotent(
        groups in prop::collection::vec((0u8..6, prop::option::of(0u8..4)), 1..40),
        threshold in prop::option::of(0u8..3),
        shuffle in any::<u64>(),
    ) {
        let build = |order: &[usize]| {
            let mut m = CorpusManifest::new();
            m.header.duplicates = Some(shadercorpus::dedup::DuplicateSettings {
                t0: 0.0,
                resolution: Resolution::square(8).unwrap(),
            });
            m.header.statics = threshold.map(|threshold| shadercorpus::dedup::StaticSettings {
                k_probes: 4,
                threshold,
                probe_seed: 0,
                resolution: Resolution::square(8).unwrap(),
            });
            for &i in order {
                let (fp, spread) = groups[i];
                let mut r = ProgramRecord::new(&format!("s{i:03}"), "o=vec4(1);", Dialect::Twigl).unwrap();
                r.status = Status::Compiled;
                r.fingerprint = Some(format!("fp{fp}"));
                r.probe_spread = spread.or(threshold.map(|_| 9));
                m.push(r).unwrap();
            }
            m.reconcile();
            m
        };
        let forward: Vec<usize> = (0..groups.len()).collect();
        let mut shuffled = forward.clone();
        shuffled.shuffle(&mut rand::rngs::StdRng::seed_from_u64(shuffle));
        let a = build(&forward);
        let b = build(&shuffled);
        let state = |m: &CorpusManifest, id: &str| m.get(id).unwrap().dedup.clone();
        for r in a.records() {
            prop_assert_eq!(state(&a, &r.id), state(&b, &r.id));
            match &r.dedup {
                Some(DedupState::DuplicateOf(k)) => {
                    prop_assert!(k < &r.id);
                    prop_assert_eq!(state(&a, k), Some(DedupState::Unique));
                    prop_assert_eq!(&a.get(k).unwrap().fingerprint, &r.fingerprint);
                }
                Some(_) => {}
                None => prop_assert!(false, "no state for {}", r.id),
            }
        }
        let mut again = a.clone();
        again.reconcile();
        prop_assert_eq!(again.records(), a.records());
        let uniques: std::collections::HashSet<_> = a.unique_programs().iter().map(|r| r.fingerprint.clone()).collect();
        prop_assert_eq!(uniques.len(), a.unique_programs().len());
    }
}

#[test]
fn mix_spec_rejects_bad_parameters() {
    let bad = [
        MixSpec { n: 0, ..Default::default() },
        MixSpec { alpha: 0.0, ..Default::default() },
        MixSpec { alpha: f64::NAN, ..Default::default() },
        MixSpec { mode: MixMode::None, n: 2, ..Default::default() },
    ];
    for spec in bad {
        assert!(spec.validate().is_err(), "{spec:?}");
    }
    assert!(MixSpec { mode: MixMode::None, n: 1, ..Default::default() }.validate().is_ok());
}
