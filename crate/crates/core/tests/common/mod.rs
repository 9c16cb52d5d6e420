//! Independent reference implementation used by the integration tests.
//!
//! Everything here is recomputed from raw frames with integer or exact
//! rational arithmetic. Nothing calls into the feature extractor or the
//! template predicates of the library.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use canqa_core::frame::{AttackLabel, CanFrame, Flag, Timestamp};
use canqa_core::qa::{QaItem, Template};
use canqa_core::window::Window;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sample_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sample")
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Non-negative fraction `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den > 0);
        Ratio { num, den }
    }

    pub fn cmp(&self, other: &Ratio) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }

    pub fn lt(&self, other: &Ratio) -> bool {
        self.cmp(other) == Ordering::Less
    }
}

/// One-based nearest rank for an integer percentile.
pub fn nearest_rank(n: usize, p: usize) -> usize {
    ((p * n).div_ceil(100)).clamp(1, n)
}

/// Population variance of all payload bytes of `frames`, exactly.
pub fn variance(frames: &[&CanFrame]) -> Ratio {
    let bytes: Vec<u128> = frames.iter().flat_map(|f| f.payload.iter().map(|b| u128::from(*b))).collect();
    let n = bytes.len() as u128;
    let sum: u128 = bytes.iter().sum();
    let sum_sq: u128 = bytes.iter().map(|b| b * b).sum();
    Ratio::new(n * sum_sq - sum * sum, n * n)
}

fn group(frames: &[CanFrame]) -> BTreeMap<u32, Vec<&CanFrame>> {
    let mut m: BTreeMap<u32, Vec<&CanFrame>> = BTreeMap::new();
    for f in frames {
        m.entry(f.can_id).or_default().push(f);
    }
    m
}

/// (id, from payload, to payload).
pub type Transition = (u32, [u8; 8], [u8; 8]);

/// Baseline recomputed from attack-free frames with the default
/// thresholds.
pub struct RefBaseline {
    pub w: usize,
    pub expected: BTreeSet<u32>,
    pub per_window_expected: BTreeSet<u32>,
    pub counts: BTreeMap<u32, usize>,
    pub total: usize,
    pub top: Vec<u32>,
    pub ranges: BTreeMap<u32, [(u8, u8); 8]>,
    pub transitions: HashMap<Transition, (u128, u128)>,
    pub transition_cutoff: Ratio,
    /// Window duration (us) at the 95th rate percentile; a window is faster
    /// than that percentile exactly when its duration is shorter.
    pub rate_cut_duration: u64,
    pub var_p10: Ratio,
}

impl RefBaseline {
    pub fn build(frames: &[CanFrame], w: usize) -> Self {
        let windows: Vec<&[CanFrame]> = frames.chunks_exact(w).collect();
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for f in frames {
            *counts.entry(f.can_id).or_default() += 1;
        }
        let expected: BTreeSet<u32> = counts.keys().copied().collect();
        let mut by_count: Vec<(u32, usize)> = counts.iter().map(|(k, v)| (*k, *v)).collect();
        by_count.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let top = by_count.iter().take(3).map(|(id, _)| *id).collect();

        let mut presence: BTreeMap<u32, usize> = BTreeMap::new();
        let mut durations = Vec::new();
        let mut variances = Vec::new();
        for win in &windows {
            for (id, g) in group(win) {
                *presence.entry(id).or_default() += 1;
                variances.push(variance(&g));
            }
            let d = win[w - 1].timestamp.as_micros() - win[0].timestamp.as_micros();
            if d > 0 {
                durations.push(d);
            }
        }
        let per_window_expected =
            presence.iter().filter(|(_, c)| **c * 100 >= 99 * windows.len()).map(|(id, _)| *id).collect();

        // Rates ascending is durations descending.
        durations.sort_unstable_by(|a, b| b.cmp(a));
        let rate_cut_duration = durations[nearest_rank(durations.len(), 95) - 1];
        variances.sort_by(|a, b| a.cmp(b));
        let var_p10 = variances[nearest_rank(variances.len(), 10) - 1];

        let mut ranges: BTreeMap<u32, [(u8, u8); 8]> = BTreeMap::new();
        for f in frames {
            let r = ranges.entry(f.can_id).or_insert([(255, 0); 8]);
            for (i, b) in f.payload.iter().enumerate() {
                r[i].0 = r[i].0.min(*b);
                r[i].1 = r[i].1.max(*b);
            }
        }

        let mut pair_counts: HashMap<(u32, [u8; 8], [u8; 8]), u128> = HashMap::new();
        let mut per_id: HashMap<u32, u128> = HashMap::new();
        for (id, g) in group(frames) {
            for p in g.windows(2) {
                *pair_counts.entry((id, p[0].payload, p[1].payload)).or_default() += 1;
                *per_id.entry(id).or_default() += 1;
            }
        }
        let transitions: HashMap<_, _> = pair_counts.into_iter().map(|(k, c)| (k, (c, per_id[&k.0]))).collect();
        let mut freqs: Vec<Ratio> = transitions.values().map(|(c, t)| Ratio::new(*c, *t)).collect();
        freqs.sort_by(|a, b| a.cmp(b));
        let transition_cutoff = freqs[nearest_rank(freqs.len(), 5) - 1];

        RefBaseline {
            w,
            expected,
            per_window_expected,
            counts,
            total: frames.len(),
            top,
            ranges,
            transitions,
            transition_cutoff,
            rate_cut_duration,
            var_p10,
        }
    }

    fn is_rare_id(&self, id: u32) -> bool {
        self.counts.get(&id).is_none_or(|c| c * 100 < self.total)
    }

    fn in_range(&self, f: &CanFrame) -> bool {
        self.ranges.get(&f.can_id).is_some_and(|r| f.payload.iter().zip(r).all(|(b, (lo, hi))| lo <= b && b <= hi))
    }

    fn is_rare_transition(&self, id: u32, from: [u8; 8], to: [u8; 8]) -> bool {
        let freq = match self.transitions.get(&(id, from, to)) {
            Some((c, t)) => Ratio::new(*c, *t),
            None => Ratio::new(0, 1),
        };
        freq.lt(&self.transition_cutoff)
    }
}

/// Window facts recomputed from raw frames.
#[derive(Debug, Clone)]
pub struct Facts {
    pub w: usize,
    pub distinct: usize,
    pub singles: usize,
    pub max_count: usize,
    pub unexpected: usize,
    pub duration_us: u64,
    pub gap_over: bool,
    pub gap_under: bool,
    pub all_under: bool,
    pub high_dlc: usize,
    pub attack: bool,
    pub out_of_range: bool,
    pub rare_transitions: usize,
    pub missing_expected: bool,
    pub rare_frames: usize,
    pub max_critical: usize,
    pub critical_attack: bool,
    pub max_bucket: usize,
    pub low_variance: bool,
    pub constant_id: bool,
}

impl Facts {
    pub fn of(frames: &[CanFrame], b: &RefBaseline) -> Self {
        let w = frames.len();
        let groups = group(frames);
        let gaps: Vec<u64> =
            frames.windows(2).map(|p| p[1].timestamp.as_micros() - p[0].timestamp.as_micros()).collect();
        let mut buckets: BTreeMap<u64, usize> = BTreeMap::new();
        for f in frames {
            *buckets.entry((f.timestamp.as_micros() + 5_000) / 10_000).or_default() += 1;
        }
        let rare_transitions = groups
            .iter()
            .map(|(id, g)| g.windows(2).filter(|p| b.is_rare_transition(*id, p[0].payload, p[1].payload)).count())
            .sum();
        Facts {
            w,
            distinct: groups.len(),
            singles: groups.values().filter(|g| g.len() == 1).count(),
            max_count: groups.values().map(Vec::len).max().unwrap_or(0),
            unexpected: groups.keys().filter(|id| !b.expected.contains(id)).count(),
            duration_us: frames[w - 1].timestamp.as_micros() - frames[0].timestamp.as_micros(),
            gap_over: gaps.iter().any(|g| *g > 1_000),
            gap_under: gaps.iter().any(|g| *g < 500),
            all_under: gaps.iter().all(|g| *g < 500),
            high_dlc: frames.iter().filter(|f| f.dlc >= 8).count(),
            attack: frames.iter().any(|f| f.flag == Flag::Attack),
            out_of_range: frames.iter().any(|f| !b.in_range(f)),
            rare_transitions,
            missing_expected: b.per_window_expected.iter().any(|id| !groups.contains_key(id)),
            rare_frames: frames.iter().filter(|f| b.is_rare_id(f.can_id)).count(),
            max_critical: b.top.iter().map(|id| groups.get(id).map_or(0, Vec::len)).max().unwrap_or(0),
            critical_attack: frames.iter().any(|f| f.flag == Flag::Attack && b.top.contains(&f.can_id)),
            max_bucket: buckets.values().copied().max().unwrap_or(0),
            low_variance: groups.values().any(|g| variance(g).lt(&b.var_p10)),
            constant_id: groups.values().any(|g| g.len() >= 2 && g.iter().all(|f| f.payload == g[0].payload)),
        }
    }

    /// Single-appearance share above 30%.
    fn many_singles(&self) -> bool {
        10 * self.singles > 3 * self.distinct
    }

    fn high_share(&self) -> bool {
        2 * self.high_dlc > self.w
    }

    pub fn signals(&self) -> usize {
        [self.attack, self.missing_expected, 10 * self.rare_frames > 3 * self.w, self.high_share(), self.gap_over]
            .iter()
            .filter(|s| **s)
            .count()
    }

    pub fn tf(&self, template: Template, b: &RefBaseline) -> bool {
        match template {
            Template::DistinctIds => self.distinct > 30,
            Template::FrameRate => self.duration_us == 0 || self.duration_us < b.rate_cut_duration,
            Template::PayloadVariance => self.low_variance,
            Template::ConstantPayload => self.constant_id,
            Template::CriticalIds => self.max_critical > 15 || self.critical_attack,
            Template::TimestampBuckets => 20 * self.max_bucket >= self.w,
            other => panic!("{other} has no frame-only truth"),
        }
    }

    /// Canonical labels whose printed condition holds.
    pub fn options(&self, template: Template) -> Vec<char> {
        let s = self.many_singles();
        let (m2, w) = (2 * self.max_count, self.w);
        let h = self.high_share();
        let r = self.rare_transitions;
        let n = self.signals();
        let conds: [bool; 4] = match template {
            Template::IdentityStructure => {
                [s && self.unexpected > 0, !s, s && self.unexpected == 0 && m2 < w, s && m2 >= w]
            }
            Template::TrafficDistribution => {
                [s && m2 <= w, m2 > w, 5 * self.max_count <= w, 5 * self.max_count > w && m2 <= w]
            }
            Template::Timing => [
                self.gap_over && !self.gap_under,
                self.all_under,
                self.gap_over && self.gap_under,
                !self.gap_over && !self.all_under,
            ],
            Template::FrameFormat => {
                [h && !self.attack && self.out_of_range, !h, h && self.attack, h && !self.out_of_range]
            }
            Template::PayloadDynamics => [r >= 1 && self.attack, r == 1, r > 1, r == 0],
            Template::AttackSignals => [n == 1, n >= 2 && !self.attack, n >= 2 && self.attack, n == 0],
            other => panic!("{other} has no options"),
        };
        ['A', 'B', 'C', 'D'].into_iter().zip(conds).filter(|(_, c)| *c).map(|(l, _)| l).collect()
    }
}

/// Leading words of each canonical option, as printed in the category boxes.
pub fn option_heads(template: Template) -> [&'static str; 4] {
    match template {
        Template::IdentityStructure => [
            "Possible fuzzing or probing behavior",
            "Normal background variation",
            "Logging truncation or window boundary effects",
            "A single dominant ID masking others",
        ],
        Template::TrafficDistribution => [
            "Highly variable with no clear pattern",
            "Strongly dominated by a single ID",
            "Evenly distributed across many IDs",
            "Moderately skewed toward a few IDs",
        ],
        Template::Timing => [
            "Suppression-like behavior",
            "Flooding-like behavior",
            "Mixed or ambiguous timing signals",
            "Normal periodic traffic",
        ],
        Template::FrameFormat => [
            "CAN arbitration effects",
            "Normal change in driving conditions",
            "Abnormal frame composition",
            "Payload value scaling differences",
        ],
        Template::PayloadDynamics => [
            "Definitive proof of attack",
            "Baseline modeling artifact",
            "Implausible state transitions",
            "Normal but infrequent behavior",
        ],
        Template::AttackSignals => [
            "As weak but notable concern",
            "As coordinated anomalous behavior",
            "As definitive proof of attack",
            "As unrelated coincidences",
        ],
        other => panic!("{other} has no options"),
    }
}

/// Canonical label of an emitted MCQ item, read from the option text shown
/// under its answer letter.
pub fn shown_canonical(item: &QaItem, template: Template) -> Option<char> {
    let letter = item.answer.chars().next()?;
    let pos = ['A', 'B', 'C', 'D'].iter().position(|l| *l == letter)?;
    let text = item.options.as_ref()?.get(pos)?;
    let body = text.strip_prefix(&format!("{letter}. "))?;
    let heads = option_heads(template);
    let hits: Vec<usize> = (0..4).filter(|i| body.starts_with(heads[*i])).collect();
    match hits.as_slice() {
        [i] => Some(['A', 'B', 'C', 'D'][*i]),
        _ => None,
    }
}

/// Ground truth of a hidden-flag item read from its rendered context: the
/// raw flag of the one line shown as `?`.
pub fn hidden_flag_truth(item: &QaItem, frames: &[CanFrame]) -> Option<bool> {
    let masked: Vec<usize> =
        item.context.lines().enumerate().filter(|(_, l)| l.ends_with("FLAG=?")).map(|(i, _)| i).collect();
    match masked.as_slice() {
        [i] => Some(frames[*i].flag == Flag::Attack),
        _ => None,
    }
}

/// The expected answer of any template for a window, or the satisfied set of
/// an MCQ template that is not exclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expected {
    Tf(bool),
    Mcq(char),
    Skip(Vec<char>),
}

pub fn expected(template: Template, facts: &Facts, b: &RefBaseline) -> Expected {
    if template.format() == canqa_core::QaFormat::Tf {
        return Expected::Tf(facts.tf(template, b));
    }
    match facts.options(template).as_slice() {
        [one] => Expected::Mcq(*one),
        many => Expected::Skip(many.to_vec()),
    }
}

/// Randomized window generator that reaches both sides of every threshold.
pub struct WindowGen<'a> {
    rng: ChaCha8Rng,
    baseline_frames: &'a [CanFrame],
    ids: Vec<u32>,
    by_id: BTreeMap<u32, Vec<[u8; 8]>>,
}

const GAP_CHOICES: [u64; 10] = [0, 100, 499, 500, 501, 999, 1_000, 1_001, 2_000, 12_000];

impl<'a> WindowGen<'a> {
    pub fn new(seed: u64, baseline_frames: &'a [CanFrame]) -> Self {
        let mut by_id: BTreeMap<u32, Vec<[u8; 8]>> = BTreeMap::new();
        for f in baseline_frames {
            by_id.entry(f.can_id).or_default().push(f.payload);
        }
        let ids = by_id.keys().copied().collect();
        WindowGen { rng: ChaCha8Rng::seed_from_u64(seed), baseline_frames, ids, by_id }
    }

    fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        xs[self.rng.random_range(0..xs.len())]
    }

    /// A window of `w` chronological frames labelled `label:index`.
    pub fn window(&mut self, w: usize, label: AttackLabel, index: usize) -> Window {
        // A verbatim baseline window now and then pins equality cases.
        if self.rng.random_bool(0.1) {
            let chunks = self.baseline_frames.len() / w;
            let start = self.rng.random_range(0..chunks) * w;
            let mut frames = self.baseline_frames[start..start + w].to_vec();
            if self.rng.random_bool(0.5) {
                let i = self.rng.random_range(0..w);
                frames[i].flag = Flag::Attack;
            }
            return Window::new(label, index, frames);
        }

        let distinct_target = self.pick(&[1usize, 2, 3, 5, 8, 12, 20, 26, 31, 40, 60]).min(w);
        let foreign_share = self.pick(&[0.0, 0.0, 0.05, 0.2, 0.5, 1.0]);
        let dominant = self.pick(&[0.0, 0.0, 0.2, 0.35, 0.5, 0.51, 0.8]);
        let high_dlc = self.pick(&[1.0, 1.0, 0.9, 0.5, 0.3, 0.0]);
        let attack = self.pick(&[0.0, 0.0, 0.01, 0.2, 1.0]);
        let random_payload = self.pick(&[0.0, 0.0, 0.02, 0.3, 1.0]);
        let constant = self.rng.random_bool(0.2);
        let gap_mode = self.rng.random_range(0..4);
        let fixed_gap = self.pick(&GAP_CHOICES);

        let mut pool: Vec<u32> = Vec::new();
        while pool.len() < distinct_target {
            let id = if self.rng.random_bool(foreign_share) {
                self.rng.random_range(0x700..=0x7ff)
            } else {
                self.pick(&self.ids.clone())
            };
            if !pool.contains(&id) {
                pool.push(id);
            }
            if pool.len() < distinct_target && pool.len() >= self.ids.len() && foreign_share == 0.0 {
                break;
            }
        }
        let mut ts = self.rng.random_range(0..10_000_000u64);
        let mut cursor: BTreeMap<u32, usize> = BTreeMap::new();
        let mut frames = Vec::with_capacity(w);
        for i in 0..w {
            let id = if i < pool.len() {
                pool[i]
            } else if self.rng.random_bool(dominant) {
                pool[0]
            } else {
                self.pick(&pool)
            };
            let dlc = if self.rng.random_bool(high_dlc) { 8 } else { self.rng.random_range(0..8) };
            let payload = match self.by_id.get(&id) {
                Some(seq) if !self.rng.random_bool(random_payload) => {
                    let start = match cursor.get(&id) {
                        Some(c) => *c,
                        None => self.rng.random_range(0..seq.len()),
                    };
                    let k = if constant { 0 } else { start };
                    cursor.insert(id, start + 1);
                    seq[k % seq.len()]
                }
                _ => {
                    let mut p = [0u8; 8];
                    self.rng.fill(&mut p);
                    p
                }
            };
            let flag = if self.rng.random_bool(attack) { Flag::Attack } else { Flag::Normal };
            frames.push(CanFrame::new(Timestamp::from_micros(ts), id, dlc, payload, flag));
            ts += match gap_mode {
                0 => fixed_gap,
                1 => self.pick(&GAP_CHOICES),
                2 => self.rng.random_range(0..1_500),
                _ => {
                    let other = self.pick(&GAP_CHOICES);
                    self.pick(&[fixed_gap, fixed_gap, fixed_gap, other])
                }
            };
        }
        Window::new(label, index, frames)
    }
}

/// Minimal structurally valid item for split and prompt tests.
pub fn stub_item(label: AttackLabel, window: usize, format: canqa_core::QaFormat) -> QaItem {
    use canqa_core::qa::{qa_id, Provenance};
    use canqa_core::QaFormat;
    let window_id = format!("{label}:{window}");
    let (category, options, answer) = match format {
        QaFormat::Tf => (3, None, "True".to_string()),
        QaFormat::Mcq => (
            4,
            Some(vec!["A. a".to_string(), "B. b".to_string(), "C. c".to_string(), "D. d".to_string()]),
            "B".to_string(),
        ),
    };
    QaItem {
        qa_id: qa_id(&window_id, category, format),
        category,
        format,
        context: format!("t=0.{window:06} ID=0316 DLC=8 DATA=00 00 00 00 00 00 00 00 FLAG=R"),
        question: "q".to_string(),
        options,
        answer,
        meta: Provenance {
            window_id,
            attack_label: label,
            window_index: window,
            template: "frame_rate".to_string(),
            seed: 0,
            feature_digest: String::new(),
            masked_index: None,
            option_order: None,
            rationale: "r".to_string(),
        },
    }
}

/// Attack-free reference traffic for the replay: 16 identifiers in strict
/// rotation every millisecond, each alternating between two payloads.
pub fn replay_frames(n: usize) -> Vec<CanFrame> {
    (0..n)
        .map(|i| {
            let k = (i % 16) as u8;
            let occurrence = i / 16;
            let payload =
                if occurrence % 2 == 0 { [0x10, k, 0x20, 0, 0, 0, 0, 0x01] } else { [0x11, k, 0x22, 0, 0, 0, 0, 0x02] };
            CanFrame::new(Timestamp::from_micros(i as u64 * 1_000), 0x100 + u32::from(k), 8, payload, Flag::Normal)
        })
        .collect()
}
