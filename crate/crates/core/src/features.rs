//! Per-window measurements consumed by the question templates.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Write};

use serde::{Serialize, Serializer};

use crate::baseline::{BaselineStats, TransitionKey};
use crate::error::{Error, Result};
use crate::frame::{AttackLabel, CanFrame, Timestamp};
use crate::ids::{serialize_id_list, serialize_id_map};
use crate::stats::payload_variance;
use crate::window::Window;

/// Frames per second over a window, or an overflow marker when every frame
/// shares one timestamp. Overflow compares above any finite threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameRate {
    Finite(f64),
    Overflow,
}

impl FrameRate {
    pub fn finite(self) -> Option<f64> {
        match self {
            FrameRate::Finite(r) => Some(r),
            FrameRate::Overflow => None,
        }
    }

    /// Strictly above `threshold`.
    pub fn exceeds(self, threshold: f64) -> bool {
        match self {
            FrameRate::Finite(r) => r > threshold,
            FrameRate::Overflow => true,
        }
    }
}

impl Serialize for FrameRate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FrameRate::Finite(r) => serializer.serialize_f64(*r),
            FrameRate::Overflow => serializer.serialize_str("overflow"),
        }
    }
}

/// Inter-arrival intervals per second: `(W - 1) / duration`.
pub fn window_frame_rate(window: &Window) -> FrameRate {
    let intervals = window.len().saturating_sub(1);
    match window.duration_us() {
        0 if intervals > 0 => FrameRate::Overflow,
        0 => FrameRate::Finite(0.0),
        d => FrameRate::Finite(intervals as f64 * 1e6 / d as f64),
    }
}

/// Half-up rounding of a timestamp to 0.01 s, as whole centiseconds.
pub fn rounded_bucket(ts: Timestamp) -> u64 {
    rounded_bucket_width(ts, 10_000)
}

/// Half-up rounding of a timestamp to a multiple of `width_us`, returned as
/// the multiple's index.
pub fn rounded_bucket_width(ts: Timestamp, width_us: u64) -> u64 {
    (2 * ts.as_micros() + width_us) / (2 * width_us)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowFeatures {
    pub window_id: String,
    pub attack_label: AttackLabel,
    pub window_len: usize,
    pub distinct_id_count: usize,
    #[serde(serialize_with = "serialize_id_map")]
    pub per_id_count: BTreeMap<u32, usize>,
    pub max_id_share: f64,
    pub single_appearance_share: f64,
    /// Distinct identifiers absent from the baseline's expected set.
    pub unexpected_id_count: usize,
    pub frame_rate: FrameRate,
    /// `W - 1` inter-arrival gaps in microseconds.
    pub gaps_us: Vec<u64>,
    pub has_gap_over: bool,
    pub has_gap_under: bool,
    pub all_gaps_under: bool,
    pub high_dlc_share: f64,
    pub any_attack_flag: bool,
    #[serde(serialize_with = "serialize_id_map")]
    pub per_id_payload_variance: BTreeMap<u32, f64>,
    pub min_payload_variance: f64,
    pub payload_out_of_range: bool,
    pub rare_transition_count: usize,
    pub missing_expected_id: bool,
    pub rare_id_share: f64,
    #[serde(serialize_with = "serialize_id_map")]
    pub critical_id_counts: BTreeMap<u32, usize>,
    pub critical_id_attack_flag: bool,
    pub timestamp_buckets: BTreeMap<u64, usize>,
    pub max_bucket_share: f64,
    pub duplicate_frame_count: usize,
    /// Identifiers with at least two frames whose payloads are all identical.
    #[serde(serialize_with = "serialize_id_list")]
    pub constant_payload_ids: Vec<u32>,
    pub signal_count: usize,
}

impl WindowFeatures {
    pub fn gap_secs(&self) -> impl Iterator<Item = f64> + '_ {
        self.gaps_us.iter().map(|g| *g as f64 / 1e6)
    }

    pub fn max_critical_count(&self) -> usize {
        self.critical_id_counts.values().copied().max().unwrap_or(0)
    }
}

/// Measure one window against a baseline built with the same window length.
pub fn extract_features(window: &Window, baseline: &BaselineStats) -> Result<WindowFeatures> {
    let w = window.len();
    if w != baseline.window_len() {
        return Err(Error::Incompatible(format!(
            "window {} has {w} frames but the baseline was built for windows of {}",
            window.window_id,
            baseline.window_len()
        )));
    }
    if w < 2 {
        return Err(Error::Argument(format!("window {} needs at least two frames", window.window_id)));
    }
    let t = baseline.thresholds();
    let frames = &window.frames;
    let wf = w as f64;

    let mut by_id: BTreeMap<u32, Vec<&CanFrame>> = BTreeMap::new();
    for frame in frames {
        by_id.entry(frame.can_id).or_default().push(frame);
    }
    let per_id_count: BTreeMap<u32, usize> = by_id.iter().map(|(id, g)| (*id, g.len())).collect();
    let distinct_id_count = per_id_count.len();
    let max_count = per_id_count.values().copied().max().unwrap_or(0);
    let singles = per_id_count.values().filter(|c| **c == 1).count();
    let unexpected_id_count = per_id_count.keys().filter(|id| !baseline.expected_ids.contains(id)).count();

    let gaps_us: Vec<u64> = frames.windows(2).map(|p| p[1].timestamp.saturating_sub(p[0].timestamp)).collect();
    let (over, under) = (t.gap_over_us(), t.gap_under_us());
    let has_gap_over = gaps_us.iter().any(|g| *g > over);
    let has_gap_under = gaps_us.iter().any(|g| *g < under);
    let all_gaps_under = gaps_us.iter().all(|g| *g < under);

    let high_dlc = frames.iter().filter(|f| f.dlc >= t.high_dlc).count();
    let any_attack_flag = frames.iter().any(|f| f.flag.is_attack());

    let per_id_payload_variance: BTreeMap<u32, f64> =
        by_id.iter().map(|(id, g)| (*id, payload_variance(g.iter().copied()))).collect();
    let min_payload_variance = per_id_payload_variance.values().copied().fold(f64::INFINITY, f64::min);

    let payload_out_of_range =
        frames.iter().any(|f| f.payload.iter().enumerate().any(|(i, b)| !baseline.byte_in_range(f.can_id, i, *b)));

    let rare_transition_count = by_id
        .iter()
        .flat_map(|(id, g)| {
            g.windows(2).map(move |p| TransitionKey { can_id: *id, from: p[0].payload, to: p[1].payload })
        })
        .filter(|k| baseline.is_rare_transition(k))
        .count();

    let missing_expected_id = baseline.per_window_expected_ids.iter().any(|id| !per_id_count.contains_key(id));
    let rare_frames = frames.iter().filter(|f| baseline.is_rare_id(f.can_id)).count();

    let critical_id_counts: BTreeMap<u32, usize> =
        baseline.top3_critical_ids.iter().map(|id| (*id, per_id_count.get(id).copied().unwrap_or(0))).collect();
    let critical_id_attack_flag =
        frames.iter().any(|f| f.flag.is_attack() && critical_id_counts.contains_key(&f.can_id));

    let mut timestamp_buckets: BTreeMap<u64, usize> = BTreeMap::new();
    for frame in frames {
        *timestamp_buckets.entry(rounded_bucket_width(frame.timestamp, t.bucket_us())).or_default() += 1;
    }
    let max_bucket = timestamp_buckets.values().copied().max().unwrap_or(0);

    let mut seen = HashSet::with_capacity(w);
    let duplicate_frame_count = frames.iter().filter(|f| !seen.insert(f.content_key())).count();

    let constant_payload_ids = by_id
        .iter()
        .filter(|(_, g)| g.len() >= 2 && g.iter().all(|f| f.payload == g[0].payload))
        .map(|(id, _)| *id)
        .collect();

    let high_dlc_share = high_dlc as f64 / wf;
    let rare_id_share = rare_frames as f64 / wf;
    let signal_count = [
        any_attack_flag,
        missing_expected_id,
        rare_id_share > t.rare_id_share,
        high_dlc_share > t.high_dlc_share,
        has_gap_over,
    ]
    .into_iter()
    .filter(|s| *s)
    .count();

    Ok(WindowFeatures {
        window_id: window.window_id.clone(),
        attack_label: window.attack_label,
        window_len: w,
        distinct_id_count,
        per_id_count,
        max_id_share: max_count as f64 / wf,
        single_appearance_share: singles as f64 / distinct_id_count as f64,
        unexpected_id_count,
        frame_rate: window_frame_rate(window),
        gaps_us,
        has_gap_over,
        has_gap_under,
        all_gaps_under,
        high_dlc_share,
        any_attack_flag,
        per_id_payload_variance,
        min_payload_variance,
        payload_out_of_range,
        rare_transition_count,
        missing_expected_id,
        rare_id_share,
        critical_id_counts,
        critical_id_attack_flag,
        timestamp_buckets,
        max_bucket_share: max_bucket as f64 / wf,
        duplicate_frame_count,
        constant_payload_ids,
        signal_count,
    })
}

/// Feature dump: one JSON object per window.
pub fn write_features_jsonl<W: Write>(features: &[WindowFeatures], mut out: W) -> io::Result<()> {
    for f in features {
        serde_json::to_writer(&mut out, f)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::build_baseline;
    use crate::config::Thresholds;
    use crate::frame::{Flag, FrameStream};

    fn frame(t: u64, id: u32, payload: [u8; 8]) -> CanFrame {
        CanFrame::new(Timestamp::from_micros(t), id, 8, payload, Flag::Normal)
    }

    /// Baseline over IDs 0x10..0x14 cycling every 400 us with a byte counter.
    fn baseline(window_len: usize) -> BaselineStats {
        let frames = (0..window_len * 20)
            .map(|i| frame(i as u64 * 400, 0x10 + (i % 5) as u32, [(i / 5 % 4) as u8, 1, 0, 0, 0, 0, 0, 0]))
            .collect();
        build_baseline(&FrameStream::new(frames, AttackLabel::Normal), window_len, &Thresholds::default()).unwrap()
    }

    fn window(frames: Vec<CanFrame>) -> Window {
        Window::new(AttackLabel::Dos, 0, frames)
    }

    #[test]
    fn rounding_is_half_up_to_centiseconds() {
        assert_eq!(rounded_bucket(Timestamp::from_micros(1_234_000)), 123);
        assert_eq!(rounded_bucket(Timestamp::from_micros(1_235_000)), 124);
        assert_eq!(rounded_bucket(Timestamp::ZERO), 0);
        assert_eq!(rounded_bucket(Timestamp::from_micros(4_999)), 0);
        assert_eq!(rounded_bucket(Timestamp::from_micros(5_000)), 1);
    }

    #[test]
    fn single_repeated_id() {
        let b = baseline(100);
        let w = window((0..100).map(|i| frame(i * 300, 0x10, [0; 8])).collect());
        let f = extract_features(&w, &b).unwrap();
        assert_eq!(f.max_id_share, 1.0);
        assert_eq!(f.distinct_id_count, 1);
        assert_eq!(f.single_appearance_share, 0.0);
        assert_eq!(f.constant_payload_ids, vec![0x10]);
        assert_eq!(f.per_id_count.values().sum::<usize>(), 100);
        assert_eq!(f.timestamp_buckets.values().sum::<usize>(), 100);
    }

    #[test]
    fn tight_spacing_is_all_under() {
        let b = baseline(100);
        let w = window((0..100).map(|i| frame(i * 100, 0x10 + (i % 5) as u32, [0; 8])).collect());
        let f = extract_features(&w, &b).unwrap();
        assert!(f.all_gaps_under);
        assert!(!f.has_gap_over);
        assert_eq!(f.frame_rate, FrameRate::Finite(10_000.0));
        assert_eq!(f.gaps_us.len(), 99);
    }

    #[test]
    fn hand_counted_thirty_frame_window() {
        let b = baseline(30);
        let mut frames = Vec::new();
        for i in 0..30u64 {
            let id = match i % 6 {
                0..=2 => 0xA,
                3 | 4 => 0xB,
                _ => 0xC,
            };
            frames.push(frame(i * 1000, id, [i as u8, 0, 0, 0, 0, 0, 0, 0]));
        }
        let f = extract_features(&window(frames), &b).unwrap();
        assert_eq!(f.per_id_count, BTreeMap::from([(0xA, 15), (0xB, 10), (0xC, 5)]));
        assert_eq!(f.max_id_share, 0.5);
        assert_eq!(f.single_appearance_share, 0.0);
        assert_eq!(f.unexpected_id_count, 3);
        assert!(f.missing_expected_id);
        assert_eq!(f.rare_id_share, 1.0);
        // Gaps are exactly 1000 us: not over 0.001 s, not under 0.0005 s.
        assert!(!f.has_gap_over && !f.has_gap_under && !f.all_gaps_under);
        assert!(f.payload_out_of_range);
        assert_eq!(f.critical_id_counts.values().sum::<usize>(), 0);
        // Missing expected ID, rare-ID share and high-DLC share.
        assert_eq!(f.high_dlc_share, 1.0);
        assert_eq!(f.signal_count, 3);
    }

    #[test]
    fn equal_timestamps_overflow_the_rate() {
        let b = baseline(20);
        let f = extract_features(&window((0..20).map(|i| frame(0, 0x10 + i % 3, [0; 8])).collect()), &b).unwrap();
        assert_eq!(f.frame_rate, FrameRate::Overflow);
        assert!(f.frame_rate.exceeds(f64::MAX));
        assert_eq!(f.max_bucket_share, 1.0);
        assert_eq!(f.duplicate_frame_count, 17);
    }

    #[test]
    fn clean_baseline_window_has_no_surprises() {
        let b = baseline(20);
        let frames: Vec<CanFrame> = (0..20)
            .map(|i| frame(i as u64 * 400, 0x10 + (i % 5) as u32, [(i / 5 % 4) as u8, 1, 0, 0, 0, 0, 0, 0]))
            .collect();
        let f = extract_features(&window(frames), &b).unwrap();
        assert_eq!(f.unexpected_id_count, 0);
        assert!(!f.any_attack_flag);
        assert!(!f.payload_out_of_range);
        assert!(!f.missing_expected_id);
        assert_eq!(f.rare_transition_count, 0);
        assert_eq!(f.critical_id_counts.len(), 3);
    }

    #[test]
    fn window_length_mismatch_is_incompatible() {
        let b = baseline(20);
        let w = window((0..25).map(|i| frame(i * 10, 0x10, [0; 8])).collect());
        assert!(matches!(extract_features(&w, &b), Err(Error::Incompatible(_))));
    }
}
