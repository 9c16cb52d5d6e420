use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineStats;
use crate::config::Thresholds;
use crate::error::Error;
use crate::features::WindowFeatures;
use crate::ids::id_key;
use crate::window::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QaFormat {
    #[serde(rename = "TF")]
    Tf,
    #[serde(rename = "MCQ")]
    Mcq,
}

impl QaFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            QaFormat::Tf => "TF",
            QaFormat::Mcq => "MCQ",
        }
    }

    pub fn labels(self) -> &'static [&'static str] {
        match self {
            QaFormat::Tf => &["True", "False"],
            QaFormat::Mcq => &["A", "B", "C", "D"],
        }
    }
}

impl fmt::Display for QaFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for QaFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_uppercase().as_str() {
            "TF" => Ok(QaFormat::Tf),
            "MCQ" => Ok(QaFormat::Mcq),
            _ => Err(Error::Argument(format!("unknown question format {s:?}"))),
        }
    }
}

pub const MCQ_LABELS: [char; 4] = ['A', 'B', 'C', 'D'];

/// Question families. Each has one category and one format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Template {
    HiddenFlag,
    DistinctIds,
    FrameRate,
    PayloadVariance,
    ConstantPayload,
    CriticalIds,
    TimestampBuckets,
    IdentityStructure,
    TrafficDistribution,
    Timing,
    FrameFormat,
    PayloadDynamics,
    AttackSignals,
}

/// One multiple-choice option in canonical position.
#[derive(Debug, Clone)]
pub struct OptionRule {
    pub label: char,
    pub text: String,
    pub condition: fn(&WindowFeatures, &Thresholds) -> bool,
}

/// Everything a template reads when it is instantiated for one window.
#[derive(Debug, Clone, Copy)]
pub struct TemplateInput<'a> {
    pub window: &'a Window,
    pub features: &'a WindowFeatures,
    pub baseline: &'a BaselineStats,
    pub masked_index: Option<usize>,
}

/// Decimal text with no trailing zeros: `0.30 -> "0.3"`, `30.0 -> "30"`.
pub(crate) fn fmt_num(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn pct(share: f64) -> String {
    format!("{}%", fmt_num(share * 100.0))
}

fn ordinal(p: f64) -> String {
    let text = fmt_num(p);
    let suffix = match (p.fract() == 0.0).then_some(p as u64) {
        Some(n) if (11..=13).contains(&(n % 100)) => "th",
        Some(n) if n % 10 == 1 => "st",
        Some(n) if n % 10 == 2 => "nd",
        Some(n) if n % 10 == 3 => "rd",
        _ => "th",
    };
    format!("{text}{suffix}")
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn id_list(ids: impl IntoIterator<Item = u32>) -> String {
    let list: Vec<String> = ids.into_iter().map(id_key).collect();
    if list.is_empty() {
        "none".to_string()
    } else {
        list.join(", ")
    }
}

impl Template {
    pub const ALL: [Template; 13] = [
        Template::HiddenFlag,
        Template::DistinctIds,
        Template::FrameRate,
        Template::PayloadVariance,
        Template::ConstantPayload,
        Template::CriticalIds,
        Template::TimestampBuckets,
        Template::IdentityStructure,
        Template::TrafficDistribution,
        Template::Timing,
        Template::FrameFormat,
        Template::PayloadDynamics,
        Template::AttackSignals,
    ];

    pub const DEFAULT_TF: [Template; 5] = [
        Template::HiddenFlag,
        Template::FrameRate,
        Template::PayloadVariance,
        Template::CriticalIds,
        Template::TimestampBuckets,
    ];

    pub const DEFAULT_MCQ: [Template; 5] = [
        Template::IdentityStructure,
        Template::Timing,
        Template::FrameFormat,
        Template::PayloadDynamics,
        Template::AttackSignals,
    ];

    /// Templates rotated through for `format`, ordered by category.
    pub fn rotation(format: QaFormat, both_formats: bool) -> Vec<Template> {
        let mut list: Vec<Template> = Template::ALL.into_iter().filter(|t| t.format() == format).collect();
        if !both_formats {
            list.retain(|t| !t.is_additional());
        }
        list.sort_by_key(|t| (t.category(), *t));
        list
    }

    /// The template used when a category is requested in a format without
    /// naming a template.
    pub fn for_category(category: u8, format: QaFormat) -> Option<Template> {
        Template::ALL
            .into_iter()
            .filter(|t| t.category() == category && t.format() == format)
            .min_by_key(|t| t.is_additional())
    }

    pub fn is_additional(self) -> bool {
        matches!(self, Template::DistinctIds | Template::ConstantPayload | Template::TrafficDistribution)
    }

    pub fn name(self) -> &'static str {
        match self {
            Template::HiddenFlag => "hidden_flag",
            Template::DistinctIds => "distinct_ids",
            Template::FrameRate => "frame_rate",
            Template::PayloadVariance => "payload_variance",
            Template::ConstantPayload => "constant_payload",
            Template::CriticalIds => "critical_ids",
            Template::TimestampBuckets => "timestamp_buckets",
            Template::IdentityStructure => "identity_structure",
            Template::TrafficDistribution => "traffic_distribution",
            Template::Timing => "timing",
            Template::FrameFormat => "frame_format",
            Template::PayloadDynamics => "payload_dynamics",
            Template::AttackSignals => "attack_signals",
        }
    }

    pub fn category(self) -> u8 {
        match self {
            Template::HiddenFlag => 1,
            Template::DistinctIds | Template::IdentityStructure => 2,
            Template::FrameRate | Template::TrafficDistribution => 3,
            Template::Timing => 4,
            Template::PayloadVariance | Template::ConstantPayload => 5,
            Template::FrameFormat => 6,
            Template::CriticalIds => 7,
            Template::PayloadDynamics => 8,
            Template::TimestampBuckets => 9,
            Template::AttackSignals => 10,
        }
    }

    pub fn format(self) -> QaFormat {
        match self {
            Template::HiddenFlag
            | Template::DistinctIds
            | Template::FrameRate
            | Template::PayloadVariance
            | Template::ConstantPayload
            | Template::CriticalIds
            | Template::TimestampBuckets => QaFormat::Tf,
            _ => QaFormat::Mcq,
        }
    }

    pub fn masks_flag(self) -> bool {
        self == Template::HiddenFlag
    }

    pub fn question(self, t: &Thresholds) -> String {
        match self {
            Template::HiddenFlag => "Given a window where one randomly chosen frame's Flag is hidden, is the hidden frame labeled as an attack with a non-zero Flag?".to_string(),
            Template::DistinctIds => format!("The number of distinct CAN IDs exceeds {}.", t.distinct_id_count),
            Template::FrameRate => format!(
                "Is the window's frame rate (frames per second) above the {} percentile of the dataset baseline?",
                ordinal(t.frame_rate_percentile)
            ),
            Template::PayloadVariance => format!(
                "For any ID, is payload variability (variance across payload bytes) below the {} percentile of the dataset baseline?",
                ordinal(t.payload_variance_percentile)
            ),
            Template::ConstantPayload => "Some CAN ID transmits an identical payload across the entire window.".to_string(),
            Template::CriticalIds => format!(
                "Does any critical-control ID, defined as one of the {} most frequent baseline IDs, appear more than {} times or have any frame labeled as an attack with a non-zero Flag?",
                t.critical_top_n, t.critical_count
            ),
            Template::TimestampBuckets => format!(
                "Do many frames share the same rounded timestamp when times are rounded to {} seconds, with at least {} of frames in one bucket?",
                fmt_num(t.bucket_secs),
                pct(t.bucket_share)
            ),
            Template::IdentityStructure => "What best explains the presence of many single-appearance CAN IDs in this window?".to_string(),
            Template::TrafficDistribution => "Which traffic pattern best describes how frames are distributed across CAN IDs?".to_string(),
            Template::Timing => "Which timing pattern is most consistent with this window?".to_string(),
            Template::FrameFormat => format!(
                "What is the most plausible protocol-level explanation for this window, where high DLC means DLC {} or higher and the share exceeds {}?",
                t.high_dlc,
                pct(t.high_dlc_share)
            ),
            Template::PayloadDynamics => format!(
                "What does the presence of rare payload transitions most strongly indicate, where rare means baseline occurrence frequency below the {} percentile?",
                ordinal(t.transition_percentile)
            ),
            Template::AttackSignals => format!(
                "How should multiple independent anomaly signals in this window be interpreted, where signals include non-zero Flag presence, missing expected ID, rare-ID share above {}, high DLC share above {}, or a gap above {} seconds?",
                pct(t.rare_id_share),
                pct(t.high_dlc_share),
                fmt_num(t.gap_over_secs)
            ),
        }
    }

    /// Truth value of a TF template. `None` for MCQ templates.
    pub fn tf_truth(self, input: &TemplateInput<'_>) -> Option<bool> {
        let f = input.features;
        let b = input.baseline;
        let t = b.thresholds();
        Some(match self {
            Template::HiddenFlag => {
                let i = input.masked_index?;
                input.window.frames.get(i)?.flag.is_attack()
            }
            Template::DistinctIds => f.distinct_id_count > t.distinct_id_count,
            Template::FrameRate => f.frame_rate.exceeds(b.frame_rate_p95),
            Template::PayloadVariance => f.min_payload_variance < b.payload_var_p10,
            Template::ConstantPayload => !f.constant_payload_ids.is_empty(),
            Template::CriticalIds => f.max_critical_count() > t.critical_count || f.critical_id_attack_flag,
            Template::TimestampBuckets => f.max_bucket_share >= t.bucket_share,
            _ => return None,
        })
    }

    /// The four options in canonical order. Empty for TF templates.
    pub fn option_rules(self, t: &Thresholds) -> Vec<OptionRule> {
        let rule = |label: char, text: String, condition: fn(&WindowFeatures, &Thresholds) -> bool| OptionRule {
            label,
            text,
            condition,
        };
        let s = pct(t.single_appearance_share);
        let m = pct(t.dominant_id_share);
        let e = pct(t.even_id_share);
        let over = fmt_num(t.gap_over_secs);
        let under = fmt_num(t.gap_under_secs);
        let h = pct(t.high_dlc_share);
        let k = t.min_signals;
        match self {
            Template::IdentityStructure => vec![
                rule('A', format!("Possible fuzzing or probing behavior (the single-appearance share exceeds {s} and unexpected ID count is greater than 0)."),
                    |f, t| f.single_appearance_share > t.single_appearance_share && f.unexpected_id_count > 0),
                rule('B', format!("Normal background variation (the single-appearance share is at most {s})."),
                    |f, t| f.single_appearance_share <= t.single_appearance_share),
                rule('C', format!("Logging truncation or window boundary effects (the single-appearance share exceeds {s} and unexpected ID count is 0 and the max ID share is below {m})."),
                    |f, t| f.single_appearance_share > t.single_appearance_share && f.unexpected_id_count == 0 && f.max_id_share < t.dominant_id_share),
                rule('D', format!("A single dominant ID masking others (the single-appearance share exceeds {s} and the max ID share is at least {m})."),
                    |f, t| f.single_appearance_share > t.single_appearance_share && f.max_id_share >= t.dominant_id_share),
            ],
            Template::TrafficDistribution => vec![
                rule('A', format!("Highly variable with no clear pattern (the single-appearance share exceeds {s} and the max ID share is at most {m})."),
                    |f, t| f.single_appearance_share > t.single_appearance_share && f.max_id_share <= t.dominant_id_share),
                rule('B', format!("Strongly dominated by a single ID (the max ID share exceeds {m})."),
                    |f, t| f.max_id_share > t.dominant_id_share),
                rule('C', format!("Evenly distributed across many IDs (the max ID share is at most {e})."),
                    |f, t| f.max_id_share <= t.even_id_share),
                rule('D', format!("Moderately skewed toward a few IDs (the max ID share is above {e} and at most {m})."),
                    |f, t| f.max_id_share > t.even_id_share && f.max_id_share <= t.dominant_id_share),
            ],
            Template::Timing => vec![
                rule('A', format!("Suppression-like behavior (at least one gap exceeds {over} seconds and no gap is below {under} seconds)."),
                    |f, _| f.has_gap_over && !f.has_gap_under),
                rule('B', format!("Flooding-like behavior (all gaps are below {under} seconds)."),
                    |f, _| f.all_gaps_under),
                rule('C', format!("Mixed or ambiguous timing signals (at least one gap exceeds {over} seconds and at least one gap is below {under} seconds)."),
                    |f, _| f.has_gap_over && f.has_gap_under),
                rule('D', format!("Normal periodic traffic (no gap exceeds {over} seconds and not all gaps are below {under} seconds)."),
                    |f, _| !f.has_gap_over && !f.all_gaps_under),
            ],
            Template::FrameFormat => vec![
                rule('A', format!("CAN arbitration effects (the high-DLC share exceeds {h} and no non-zero Flag is present and at least one payload byte is outside its baseline range)."),
                    |f, t| f.high_dlc_share > t.high_dlc_share && !f.any_attack_flag && f.payload_out_of_range),
                rule('B', format!("Normal change in driving conditions (the high-DLC share does not exceed {h})."),
                    |f, t| f.high_dlc_share <= t.high_dlc_share),
                rule('C', format!("Abnormal frame composition consistent with injected or altered traffic (the high-DLC share exceeds {h} and any non-zero Flag is present)."),
                    |f, t| f.high_dlc_share > t.high_dlc_share && f.any_attack_flag),
                rule('D', format!("Payload value scaling differences (the high-DLC share exceeds {h} and no payload byte is outside its baseline range)."),
                    |f, t| f.high_dlc_share > t.high_dlc_share && !f.payload_out_of_range),
            ],
            Template::PayloadDynamics => vec![
                rule('A', "Definitive proof of attack (a rare transition occurs and any non-zero Flag is present).".to_string(),
                    |f, _| f.rare_transition_count >= 1 && f.any_attack_flag),
                rule('B', "Baseline modeling artifact unless repeated (a rare transition occurs only once).".to_string(),
                    |f, _| f.rare_transition_count == 1),
                rule('C', "Implausible state transitions requiring investigation (a rare transition occurs more than once).".to_string(),
                    |f, _| f.rare_transition_count > 1),
                rule('D', "Normal but infrequent behavior (no rare transition occurs).".to_string(),
                    |f, _| f.rare_transition_count == 0),
            ],
            Template::AttackSignals => vec![
                rule('A', "As weak but notable concern (exactly one signal is present).".to_string(),
                    |f, _| f.signal_count == 1),
                rule('B', format!("As coordinated anomalous behavior (at least {k} signals are present and no non-zero Flag is present)."),
                    |f, t| f.signal_count >= t.min_signals && !f.any_attack_flag),
                rule('C', format!("As definitive proof of attack (at least {k} signals are present and a non-zero Flag is present)."),
                    |f, t| f.signal_count >= t.min_signals && f.any_attack_flag),
                rule('D', "As unrelated coincidences (zero signals are present).".to_string(),
                    |f, _| f.signal_count == 0),
            ],
            _ => Vec::new(),
        }
    }

    /// Canonical labels whose condition holds for `features`.
    pub fn satisfied_options(self, features: &WindowFeatures, t: &Thresholds) -> Vec<char> {
        self.option_rules(t).iter().filter(|r| (r.condition)(features, t)).map(|r| r.label).collect()
    }

    /// The measured values a template's answer follows from, as one sentence.
    pub fn evidence(self, input: &TemplateInput<'_>) -> String {
        let f = input.features;
        let b = input.baseline;
        let t = b.thresholds();
        match self {
            Template::HiddenFlag => match input.masked_index.and_then(|i| input.window.frames.get(i).map(|fr| (i, fr)))
            {
                Some((i, fr)) => format!(
                    "The hidden frame is line {} (ID {}); in the source log it is {}.",
                    i + 1,
                    fr.id_hex,
                    if fr.flag.is_attack() { "an injected attack frame" } else { "a normal frame" }
                ),
                None => "No frame is hidden.".to_string(),
            },
            Template::DistinctIds => format!("The window contains {} distinct CAN IDs.", f.distinct_id_count),
            Template::FrameRate => match f.frame_rate.finite() {
                Some(r) => format!(
                    "The window rate is {r:.1} frames/s against a baseline percentile of {:.1} frames/s.",
                    b.frame_rate_p95
                ),
                None => format!(
                    "All frames share one timestamp, so the rate exceeds the baseline percentile of {:.1} frames/s.",
                    b.frame_rate_p95
                ),
            },
            Template::PayloadVariance => format!(
                "The lowest per-ID payload variance is {:.2} against a baseline percentile of {:.2}.",
                f.min_payload_variance, b.payload_var_p10
            ),
            Template::ConstantPayload => format!(
                "IDs with an unchanged payload over at least two frames: {}.",
                id_list(f.constant_payload_ids.iter().copied())
            ),
            Template::CriticalIds => {
                let counts: Vec<String> =
                    f.critical_id_counts.iter().map(|(id, n)| format!("{} x{n}", id_key(*id))).collect();
                format!(
                    "Critical IDs appear as [{}] with limit {}; attack flag on a critical ID: {}.",
                    counts.join(", "),
                    t.critical_count,
                    yes_no(f.critical_id_attack_flag)
                )
            }
            Template::TimestampBuckets => {
                format!("The fullest rounded-timestamp bucket holds {:.1}% of frames.", f.max_bucket_share * 100.0)
            }
            Template::IdentityStructure => format!(
                "Single-appearance share is {:.2}, unexpected ID count is {}, max ID share is {:.2}.",
                f.single_appearance_share, f.unexpected_id_count, f.max_id_share
            ),
            Template::TrafficDistribution => format!(
                "Single-appearance share is {:.2} and max ID share is {:.2}.",
                f.single_appearance_share, f.max_id_share
            ),
            Template::Timing => {
                let max = f.gaps_us.iter().max().copied().unwrap_or(0);
                let min = f.gaps_us.iter().min().copied().unwrap_or(0);
                format!(
                    "The largest gap is {} s and the smallest gap is {} s.",
                    fmt_num(max as f64 / 1e6),
                    fmt_num(min as f64 / 1e6)
                )
            }
            Template::FrameFormat => format!(
                "High-DLC share is {:.2}; attack flag present: {}; payload byte outside baseline range: {}.",
                f.high_dlc_share,
                yes_no(f.any_attack_flag),
                yes_no(f.payload_out_of_range)
            ),
            Template::PayloadDynamics => format!(
                "Rare transitions observed: {}; attack flag present: {}.",
                f.rare_transition_count,
                yes_no(f.any_attack_flag)
            ),
            Template::AttackSignals => {
                let names = [
                    (f.any_attack_flag, "attack flag"),
                    (f.missing_expected_id, "missing expected ID"),
                    (f.rare_id_share > t.rare_id_share, "rare-ID share"),
                    (f.high_dlc_share > t.high_dlc_share, "high-DLC share"),
                    (f.has_gap_over, "long gap"),
                ];
                let present: Vec<&str> = names.iter().filter(|(on, _)| *on).map(|(_, n)| *n).collect();
                format!(
                    "Signals present: {} ({} total); attack flag present: {}.",
                    if present.is_empty() { "none".to_string() } else { present.join(", ") },
                    f.signal_count,
                    yes_no(f.any_attack_flag)
                )
            }
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown template {s:?}")))
    }
}
