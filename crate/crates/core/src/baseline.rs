//! Baseline statistics learned from attack-free traffic.
//!
//! Every percentile- or expectation-relative question compares a window against
//! these numbers: frame-rate and payload-variance percentiles over baseline
//! windows, the expected identifier sets, per-byte payload ranges and the
//! payload transition table.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{GroundTruthConfig, Thresholds};
use crate::digest::json_digest;
use crate::error::{Error, Result};
use crate::features::window_frame_rate;
use crate::frame::{frames_digest, CanFrame, FrameStream};
use crate::ids::{deserialize_id_list, deserialize_id_map, id_key, parse_id_key, serialize_id_list, serialize_id_map};
use crate::stats::{payload_variance, percentile};
use crate::window::segment;

/// Minimum number of full windows a baseline trace must provide.
pub const MIN_BASELINE_WINDOWS: usize = 10;

/// Ordered pair of consecutive full payloads of one identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransitionKey {
    pub can_id: u32,
    pub from: [u8; 8],
    pub to: [u8; 8],
}

impl fmt::Display for TransitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}->{}", id_key(self.can_id), hex::encode(self.from), hex::encode(self.to))
    }
}

/// Relative frequencies of payload transitions per identifier.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionTable {
    /// Count of the transition over all transitions of its identifier.
    pub freq: BTreeMap<TransitionKey, f64>,
    /// Percentile of all observed frequencies (the rarity cut-off).
    pub cutoff: f64,
}

impl TransitionTable {
    /// Frequency of a transition; unseen transitions have frequency zero.
    pub fn frequency(&self, key: &TransitionKey) -> f64 {
        self.freq.get(key).copied().unwrap_or(0.0)
    }
}

/// Count consecutive payload pairs per identifier over a chronological stream.
///
/// Identifiers with fewer than two frames contribute nothing. The cut-off is
/// the `percentile_rank` percentile of all observed frequencies (zero when no
/// transition exists).
pub fn transition_table(frames: &[CanFrame], percentile_rank: f64) -> Result<TransitionTable> {
    let mut last: HashMap<u32, [u8; 8]> = HashMap::new();
    let mut counts: BTreeMap<TransitionKey, u64> = BTreeMap::new();
    let mut totals: HashMap<u32, u64> = HashMap::new();
    for frame in frames {
        if let Some(prev) = last.insert(frame.can_id, frame.payload) {
            let key = TransitionKey { can_id: frame.can_id, from: prev, to: frame.payload };
            *counts.entry(key).or_default() += 1;
            *totals.entry(frame.can_id).or_default() += 1;
        }
    }
    let freq: BTreeMap<TransitionKey, f64> =
        counts.into_iter().map(|(k, c)| (k, c as f64 / totals[&k.can_id] as f64)).collect();
    let cutoff = if freq.is_empty() {
        0.0
    } else {
        let values: Vec<f64> = freq.values().copied().collect();
        percentile(&values, percentile_rank)?
    };
    Ok(TransitionTable { freq, cutoff })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteRange {
    pub min: u8,
    pub max: u8,
}

impl ByteRange {
    pub fn contains(self, value: u8) -> bool {
        (self.min..=self.max).contains(&value)
    }
}

/// Provenance block stored with every serialized baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub window_len: usize,
    pub thresholds: Thresholds,
    /// Digest of the normalized baseline frames.
    pub source_digest: String,
    pub frame_count: usize,
    pub window_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineStats {
    pub expected_ids: BTreeSet<u32>,
    pub per_window_expected_ids: BTreeSet<u32>,
    /// Most frequent identifiers, by count descending then identifier ascending.
    pub top3_critical_ids: Vec<u32>,
    pub id_share: BTreeMap<u32, f64>,
    pub frame_rate_p95: f64,
    pub payload_var_p10: f64,
    pub payload_byte_range: BTreeMap<u32, [ByteRange; 8]>,
    pub transitions: TransitionTable,
    pub rare_id_threshold: f64,
    pub config: BaselineConfig,
}

impl BaselineStats {
    pub fn window_len(&self) -> usize {
        self.config.window_len
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.config.thresholds
    }

    pub fn ground_truth(&self) -> GroundTruthConfig {
        GroundTruthConfig { window_len: self.config.window_len, thresholds: self.config.thresholds.clone() }
    }

    pub fn transition_freq_p5(&self) -> f64 {
        self.transitions.cutoff
    }

    /// Rare identifiers: baseline share below the rarity threshold, or unseen.
    pub fn is_rare_id(&self, can_id: u32) -> bool {
        self.id_share.get(&can_id).is_none_or(|s| *s < self.rare_id_threshold)
    }

    /// Identifiers without a learned range are out of range for every value.
    pub fn byte_in_range(&self, can_id: u32, index: usize, value: u8) -> bool {
        self.payload_byte_range.get(&can_id).is_some_and(|r| r[index].contains(value))
    }

    pub fn is_rare_transition(&self, key: &TransitionKey) -> bool {
        self.transitions.frequency(key) < self.transitions.cutoff
    }

    /// Digest of the serialized baseline document.
    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("baseline serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("baseline", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// Learn baseline statistics from an attack-free stream.
///
/// Fails on any attack-flagged frame and on traces shorter than
/// [`MIN_BASELINE_WINDOWS`] windows.
pub fn build_baseline(stream: &FrameStream, window_len: usize, thresholds: &Thresholds) -> Result<BaselineStats> {
    thresholds.validate()?;
    let attack_frames = stream.attack_frame_count();
    if attack_frames > 0 {
        return Err(Error::Contamination { attack_frames });
    }
    let required = MIN_BASELINE_WINDOWS * window_len;
    if stream.frames.len() < required {
        return Err(Error::InsufficientBaseline { frames: stream.frames.len(), required });
    }
    let windows = segment(stream, window_len)?;
    let frames = &stream.frames;

    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for frame in frames {
        *counts.entry(frame.can_id).or_default() += 1;
    }
    let total = frames.len() as f64;
    let id_share: BTreeMap<u32, f64> = counts.iter().map(|(id, c)| (*id, *c as f64 / total)).collect();
    let expected_ids: BTreeSet<u32> = counts.keys().copied().collect();

    let mut ranked: Vec<(u32, usize)> = counts.iter().map(|(id, c)| (*id, *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let top3_critical_ids: Vec<u32> = ranked.iter().take(thresholds.critical_top_n).map(|(id, _)| *id).collect();

    let mut presence: BTreeMap<u32, usize> = BTreeMap::new();
    let mut rates = Vec::with_capacity(windows.len());
    let mut variances = Vec::new();
    for window in &windows {
        let mut by_id: BTreeMap<u32, Vec<&CanFrame>> = BTreeMap::new();
        for frame in &window.frames {
            by_id.entry(frame.can_id).or_default().push(frame);
        }
        for (id, group) in &by_id {
            *presence.entry(*id).or_default() += 1;
            variances.push(payload_variance(group.iter().copied()));
        }
        if let Some(rate) = window_frame_rate(window).finite() {
            rates.push(rate);
        }
    }
    let n_windows = windows.len() as f64;
    let per_window_expected_ids = presence
        .iter()
        .filter(|(_, c)| **c as f64 / n_windows >= thresholds.expected_presence)
        .map(|(id, _)| *id)
        .collect();
    if rates.is_empty() {
        return Err(Error::InsufficientBaseline { frames: frames.len(), required });
    }
    let frame_rate_p95 = percentile(&rates, thresholds.frame_rate_percentile)?;
    let payload_var_p10 = percentile(&variances, thresholds.payload_variance_percentile)?;

    let mut payload_byte_range: BTreeMap<u32, [ByteRange; 8]> = BTreeMap::new();
    for frame in frames {
        let ranges = payload_byte_range.entry(frame.can_id).or_insert([ByteRange { min: u8::MAX, max: u8::MIN }; 8]);
        for (r, &b) in ranges.iter_mut().zip(&frame.payload) {
            r.min = r.min.min(b);
            r.max = r.max.max(b);
        }
    }

    let transitions = transition_table(frames, thresholds.transition_percentile)?;

    Ok(BaselineStats {
        expected_ids,
        per_window_expected_ids,
        top3_critical_ids,
        id_share,
        frame_rate_p95,
        payload_var_p10,
        payload_byte_range,
        transitions,
        rare_id_threshold: thresholds.rare_id_baseline_share,
        config: BaselineConfig {
            window_len,
            thresholds: thresholds.clone(),
            source_digest: frames_digest(frames),
            frame_count: frames.len(),
            window_count: windows.len(),
        },
    })
}

// Serialized form: identifier keys as hex strings, payloads as 16 hex digits,
// transitions as a sorted list.

#[derive(Serialize, Deserialize)]
struct TransitionEntry {
    id: String,
    from: String,
    to: String,
    freq: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineDocument {
    config: BaselineConfig,
    #[serde(serialize_with = "serialize_id_list", deserialize_with = "deserialize_id_list")]
    expected_ids: Vec<u32>,
    #[serde(serialize_with = "serialize_id_list", deserialize_with = "deserialize_id_list")]
    per_window_expected_ids: Vec<u32>,
    #[serde(serialize_with = "serialize_id_list", deserialize_with = "deserialize_id_list")]
    top3_critical_ids: Vec<u32>,
    #[serde(serialize_with = "serialize_id_map", deserialize_with = "deserialize_id_map")]
    id_share: BTreeMap<u32, f64>,
    frame_rate_p95: f64,
    payload_var_p10: f64,
    #[serde(serialize_with = "serialize_id_map", deserialize_with = "deserialize_id_map")]
    payload_byte_range: BTreeMap<u32, [[u8; 2]; 8]>,
    transition_freq: Vec<TransitionEntry>,
    transition_freq_p5: f64,
    rare_id_threshold: f64,
}

fn decode_payload(text: &str) -> std::result::Result<[u8; 8], String> {
    let bytes = hex::decode(text).map_err(|e| format!("payload {text:?}: {e}"))?;
    bytes.try_into().map_err(|_| format!("payload {text:?} is not 8 bytes"))
}

impl Serialize for BaselineStats {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        BaselineDocument {
            config: self.config.clone(),
            expected_ids: self.expected_ids.iter().copied().collect(),
            per_window_expected_ids: self.per_window_expected_ids.iter().copied().collect(),
            top3_critical_ids: self.top3_critical_ids.clone(),
            id_share: self.id_share.clone(),
            frame_rate_p95: self.frame_rate_p95,
            payload_var_p10: self.payload_var_p10,
            payload_byte_range: self
                .payload_byte_range
                .iter()
                .map(|(id, r)| (*id, r.map(|b| [b.min, b.max])))
                .collect(),
            transition_freq: self
                .transitions
                .freq
                .iter()
                .map(|(k, f)| TransitionEntry {
                    id: id_key(k.can_id),
                    from: hex::encode(k.from),
                    to: hex::encode(k.to),
                    freq: *f,
                })
                .collect(),
            transition_freq_p5: self.transitions.cutoff,
            rare_id_threshold: self.rare_id_threshold,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BaselineStats {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = BaselineDocument::deserialize(deserializer)?;
        let mut freq = BTreeMap::new();
        for e in doc.transition_freq {
            let can_id = parse_id_key(&e.id).ok_or_else(|| D::Error::custom(format!("invalid id {:?}", e.id)))?;
            let key = TransitionKey {
                can_id,
                from: decode_payload(&e.from).map_err(D::Error::custom)?,
                to: decode_payload(&e.to).map_err(D::Error::custom)?,
            };
            freq.insert(key, e.freq);
        }
        for (id, ranges) in &doc.payload_byte_range {
            if ranges.iter().any(|[lo, hi]| lo > hi) {
                return Err(D::Error::custom(format!("inverted byte range for id {}", id_key(*id))));
            }
        }
        Ok(BaselineStats {
            expected_ids: doc.expected_ids.into_iter().collect(),
            per_window_expected_ids: doc.per_window_expected_ids.into_iter().collect(),
            top3_critical_ids: doc.top3_critical_ids,
            id_share: doc.id_share,
            frame_rate_p95: doc.frame_rate_p95,
            payload_var_p10: doc.payload_var_p10,
            payload_byte_range: doc
                .payload_byte_range
                .into_iter()
                .map(|(id, r)| (id, r.map(|[min, max]| ByteRange { min, max })))
                .collect(),
            transitions: TransitionTable { freq, cutoff: doc.transition_freq_p5 },
            rare_id_threshold: doc.rare_id_threshold,
            config: doc.config,
        })
    }
}
