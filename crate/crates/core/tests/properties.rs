mod common;

use std::time::Duration;

use canqa_core::eval::{parse_answer, EvalRecord, EvalSummary, Strategy as PromptStrategy};
use canqa_core::frame::{normalize_stream, write_csv};
use canqa_core::stats::percentile;
use canqa_core::store::{DatasetManifest, ManifestContext};
use canqa_core::{
    build_baseline, extract_features, parse_log, render_context, segment, AttackLabel, CanFrame, Error, Flag,
    FormatHint, FrameStream, QaFormat, Thresholds, Timestamp, Window,
};
use proptest::prelude::*;

fn arb_frame(max_id: u32) -> impl Strategy<Value = CanFrame> {
    (0u64..20_000_000, 0..max_id, 0u8..=8, any::<[u8; 8]>(), any::<bool>()).prop_map(|(ts, id, dlc, mut p, attack)| {
        p[usize::from(dlc)..].fill(0);
        CanFrame::new(Timestamp::from_micros(ts), id, dlc, p, if attack { Flag::Attack } else { Flag::Normal })
    })
}

fn arb_stream(max_id: u32, len: std::ops::Range<usize>) -> impl Strategy<Value = FrameStream> {
    prop::collection::vec(arb_frame(max_id), len)
        .prop_map(|frames| normalize_stream(FrameStream::new(frames, AttackLabel::Fuzzy)))
}

fn normal_only(mut s: FrameStream) -> FrameStream {
    s.frames.iter_mut().for_each(|f| f.flag = Flag::Normal);
    s
}

fn arb_items() -> impl Strategy<Value = Vec<canqa_core::QaItem>> {
    prop::collection::vec((0usize..4, 0usize..50, any::<bool>()), 0..40).prop_map(|specs| {
        let mut seen = std::collections::BTreeSet::new();
        specs
            .into_iter()
            .filter(|s| seen.insert(*s))
            .map(|(l, w, tf)| common::stub_item(AttackLabel::ALL[l], w, if tf { QaFormat::Tf } else { QaFormat::Mcq }))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn csv_round_trip_is_identity(stream in arb_stream(0x800, 1..200)) {
        let mut out = Vec::new();
        write_csv(&stream, &mut out).unwrap();
        let back = parse_log(out.as_slice(), FormatHint::Auto, stream.source_label, "rt").unwrap();
        prop_assert_eq!(back.frames, stream.frames);
        prop_assert_eq!(back.rejected_count, 0);
    }

    #[test]
    fn every_line_is_a_frame_or_a_rejection(
        stream in arb_stream(0x800, 1..40),
        junk in prop::collection::vec("[a-z0-9,. ]{0,30}", 0..20),
    ) {
        let mut text = Vec::new();
        write_csv(&stream, &mut text).unwrap();
        let mut lines: Vec<String> = String::from_utf8(text).unwrap().lines().map(str::to_string).collect();
        for (i, j) in junk.iter().enumerate() {
            let at = 1 + (i * 7) % lines.len();
            lines.insert(at, j.clone());
        }
        let body = lines.join("\n");
        let parsed = parse_log(body.as_bytes(), FormatHint::Auto, AttackLabel::Gear, "mixed").unwrap();
        let counted = lines.iter().filter(|l| !l.trim().is_empty()).count();
        prop_assert_eq!(parsed.frames.len() + parsed.rejected_count + parsed.header_lines, counted);
    }

    #[test]
    fn normalize_is_idempotent(frames in prop::collection::vec(arb_frame(0x800), 0..100)) {
        let once = normalize_stream(FrameStream::new(frames, AttackLabel::Rpm));
        prop_assert!(once.frames.windows(2).all(|p| p[0].timestamp <= p[1].timestamp));
        let twice = normalize_stream(once.clone());
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn windows_tile_a_prefix(stream in arb_stream(0x800, 0..400), w in 20usize..60) {
        let windows = segment(&stream, w).unwrap();
        prop_assert_eq!(windows.len(), stream.frames.len() / w);
        let joined: Vec<CanFrame> = windows.iter().flat_map(|x| x.frames.clone()).collect();
        prop_assert_eq!(&joined[..], &stream.frames[..windows.len() * w]);
        prop_assert!(windows.iter().enumerate().all(|(i, x)| x.index == i && x.len() == w));
    }

    #[test]
    fn render_and_mask(frames in prop::collection::vec(arb_frame(0x800), 1..60), pick in any::<prop::sample::Index>()) {
        let w = Window::new(AttackLabel::Dos, 0, frames);
        let plain = render_context(&w, None).unwrap().text;
        prop_assert_eq!(&plain, &render_context(&w, None).unwrap().text);
        let i = pick.index(w.len());
        let masked = render_context(&w, Some(i)).unwrap().text;
        prop_assert_eq!(masked.matches("FLAG=?").count(), 1);
        for (n, (a, b)) in plain.lines().zip(masked.lines()).enumerate() {
            if n == i {
                prop_assert!(b.ends_with("FLAG=?"));
                prop_assert_eq!(&a[..a.len() - 1], &b[..b.len() - 1]);
            } else {
                prop_assert_eq!(a, b);
            }
        }
        prop_assert!(render_context(&w, Some(w.len())).is_err());
    }

    #[test]
    fn feature_counts_are_consistent(
        base in arb_stream(0x20, 400..600).prop_map(normal_only),
        frames in prop::collection::vec(arb_frame(0x30), 20),
    ) {
        let b = build_baseline(&base, 20, &Thresholds::default()).unwrap();
        let mut frames = frames;
        frames.sort_by_key(|f| f.timestamp);
        let w = Window::new(AttackLabel::Fuzzy, 0, frames);
        let f = extract_features(&w, &b).unwrap();
        prop_assert_eq!(f.per_id_count.values().sum::<usize>(), 20);
        prop_assert_eq!(f.distinct_id_count, f.per_id_count.len());
        let max = *f.per_id_count.values().max().unwrap();
        prop_assert_eq!(f.max_id_share, max as f64 / 20.0);
        prop_assert_eq!(f.gaps_us.len(), 19);
        prop_assert_eq!(f.timestamp_buckets.values().sum::<usize>(), 20);
        for share in [f.single_appearance_share, f.high_dlc_share, f.rare_id_share, f.max_bucket_share] {
            prop_assert!((0.0..=1.0).contains(&share));
        }
        prop_assert!(f.signal_count <= 5);
    }

    #[test]
    fn percentile_bounds(values in prop::collection::vec(-1e6f64..1e6, 1..80), p in 0f64..=100.0) {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let got = percentile(&values, p).unwrap();
        prop_assert!(min <= got && got <= max);
        prop_assert_eq!(percentile(&values, 0.0).unwrap(), min);
        prop_assert_eq!(percentile(&values, 100.0).unwrap(), max);
        prop_assert!(percentile(&values, (p / 2.0).floor()).unwrap() <= got);
        prop_assert!(values.contains(&got));
    }

    #[test]
    fn baseline_refuses_attack_frames(stream in arb_stream(0x40, 200..300), at in any::<prop::sample::Index>()) {
        let mut stream = normal_only(stream);
        let i = at.index(stream.frames.len());
        stream.frames[i].flag = Flag::Attack;
        let refused = matches!(build_baseline(&stream, 20, &Thresholds::default()), Err(Error::Contamination { attack_frames: 1 }));
        prop_assert!(refused);
    }

    #[test]
    fn byte_ranges_are_ordered(stream in arb_stream(0x40, 200..300).prop_map(normal_only)) {
        let b = build_baseline(&stream, 20, &Thresholds::default()).unwrap();
        for ranges in b.payload_byte_range.values() {
            prop_assert!(ranges.iter().all(|r| r.min <= r.max));
        }
        for f in &stream.frames {
            prop_assert!((0..8).all(|i| b.byte_in_range(f.can_id, i, f.payload[i])));
        }
    }

    #[test]
    fn manifest_counts_agree(items in arb_items()) {
        let m = DatasetManifest::summarize(&items, &ManifestContext::default(), String::new());
        prop_assert!(m.is_consistent());
        prop_assert_eq!(m.total_items, items.len());
    }

    #[test]
    fn summary_ignores_record_order(
        items in arb_items(),
        replies in prop::collection::vec(prop::sample::select(vec!["True", "False", "A", "B", "C", "D", "??"]), 40),
        seed in any::<u64>(),
    ) {
        let records: Vec<EvalRecord> = items
            .iter()
            .zip(replies.iter().cycle())
            .map(|(i, r)| EvalRecord::score(i, r.to_string(), PromptStrategy::ZeroShot, Duration::ZERO, 1))
            .collect();
        let mut shuffled = records.clone();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(EvalSummary::from_records(&records), EvalSummary::from_records(&shuffled));
    }

    #[test]
    fn canonical_labels_parse_to_themselves(
        label in prop::sample::select(vec!["True", "False", "A", "B", "C", "D"]),
        pre in "[ \n]{0,3}",
        post in prop::sample::select(vec!["", ".", "\n", " ", "**"]),
    ) {
        let format = if label.len() > 1 { QaFormat::Tf } else { QaFormat::Mcq };
        let got = parse_answer(&format!("{pre}{label}{post}"), format);
        prop_assert_eq!(got.as_deref(), Some(label));
    }
}
