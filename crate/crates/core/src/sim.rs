//! Synthetic in-vehicle traffic shaped like the Car Hacking captures.
//!
//! Normal traffic is a set of periodic identifiers with jitter, alive
//! counters and slowly drifting signals. Attack traces overlay injected
//! frames (flag `T`) during alternating on/off phases.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::digest::derive_seed;
use crate::frame::{AttackLabel, CanFrame, Flag, FrameStream, Timestamp};

/// Capture start used for absolute timestamps, in microseconds.
pub const EPOCH_US: u64 = 1_478_198_376_389_427;

/// (id, period in us, dlc)
const NORMAL_IDS: [(u32, u64, u8); 26] = [
    (0x0002, 10_000, 8),
    (0x00a0, 100_000, 8),
    (0x00a1, 100_000, 8),
    (0x0130, 10_000, 8),
    (0x0131, 10_000, 8),
    (0x0140, 10_000, 8),
    (0x0153, 10_000, 8),
    (0x018f, 10_000, 8),
    (0x01f1, 20_000, 8),
    (0x0260, 10_000, 8),
    (0x02a0, 10_000, 8),
    (0x02b0, 10_000, 5),
    (0x02c0, 20_000, 8),
    (0x0316, 10_000, 8),
    (0x0329, 10_000, 8),
    (0x0350, 20_000, 8),
    (0x0370, 10_000, 8),
    (0x043f, 10_000, 8),
    (0x0440, 10_000, 8),
    (0x04b1, 20_000, 8),
    (0x04f0, 20_000, 8),
    (0x0545, 10_000, 8),
    (0x05a0, 100_000, 8),
    (0x05f0, 20_000, 2),
    (0x0690, 100_000, 8),
    (0x07d0, 200_000, 6),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub frames: usize,
    /// `Normal` produces attack-free traffic.
    pub label: AttackLabel,
    pub seed: u64,
    /// Injection phase length.
    pub attack_on_us: u64,
    /// Quiet phase length between injections.
    pub attack_off_us: u64,
}

impl SimConfig {
    pub fn new(label: AttackLabel, frames: usize, seed: u64) -> Self {
        Self { frames, label, seed, attack_on_us: 200_000, attack_off_us: 300_000 }
    }
}

#[derive(Debug, Clone)]
enum Source {
    Periodic { id: u32, period: u64, dlc: u8, counter: u8, signal: u16 },
    Attack { label: AttackLabel, interval: u64 },
}

fn attack_interval(label: AttackLabel) -> u64 {
    match label {
        AttackLabel::Dos => 300,
        AttackLabel::Fuzzy => 500,
        AttackLabel::Gear | AttackLabel::Rpm => 1_000,
        AttackLabel::Normal => u64::MAX,
    }
}

fn periodic_payload(id: u32, counter: u8, signal: u16, rng: &mut ChaCha8Rng) -> [u8; 8] {
    let mut p = [0u8; 8];
    let [hi, lo] = signal.to_be_bytes();
    match id {
        0x0316 => {
            p = [0x05, 0x21, lo, hi, 0x21, 0x1e, 0x00, 0x6f];
        }
        0x043f => {
            p = [0x10, 0x40, 0x60, 0xff, 0x7e, 0x5a, 0x08, 0x00];
        }
        0x0002 | 0x0130 | 0x0131 | 0x0140 => {
            p[0] = hi;
            p[1] = lo;
            p[6] = counter & 0x0f;
            p[7] = (id as u8).wrapping_add(counter);
        }
        _ if id.is_multiple_of(3) => {
            p[2] = (signal >> 4) as u8;
            p[3] = 0x80;
            p[7] = counter & 0x0f;
        }
        _ if id % 3 == 1 => {
            p[0] = (id >> 4) as u8;
            p[1] = (id & 0xff) as u8;
            if rng.random_bool(0.05) {
                p[4] = rng.random_range(0..4);
            }
        }
        _ => {
            p[0] = lo;
            p[5] = 0x3f;
        }
    }
    p
}

fn attack_frame(label: AttackLabel, ts: u64, rng: &mut ChaCha8Rng) -> CanFrame {
    let (id, dlc, payload) = match label {
        AttackLabel::Dos => (0x0000, 8, [0u8; 8]),
        AttackLabel::Fuzzy => {
            let mut p = [0u8; 8];
            rng.fill(&mut p);
            (rng.random_range(0..=0x7ff), 8, p)
        }
        AttackLabel::Gear => (0x043f, 8, [0x01, 0x45, 0x60, 0xff, 0x65, 0x00, 0x00, 0x00]),
        AttackLabel::Rpm => (0x0316, 8, [0x45, 0x29, 0x24, 0xff, 0x29, 0x24, 0x00, 0xff]),
        AttackLabel::Normal => unreachable!("normal traces have no attack source"),
    };
    CanFrame::new(Timestamp::from_micros(ts), id, dlc, payload, Flag::Attack)
}

/// Start of the next injection phase at or after `t`.
fn next_attack_time(t: u64, on: u64, off: u64) -> u64 {
    let cycle = on + off;
    let phase = t % cycle;
    if phase >= off {
        t
    } else {
        t - phase + off
    }
}

/// Generate a trace of exactly `cfg.frames` frames, rebased to zero with the
/// capture epoch kept in the stream.
pub fn simulate(cfg: &SimConfig) -> FrameStream {
    let mut rng = ChaCha8Rng::from_seed(derive_seed(cfg.seed, &["sim", cfg.label.as_str()]));
    let mut sources: Vec<Source> = NORMAL_IDS
        .iter()
        .map(|&(id, period, dlc)| Source::Periodic { id, period, dlc, counter: 0, signal: 0x0800 })
        .collect();
    let mut queue: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    for (i, src) in sources.iter().enumerate() {
        if let Source::Periodic { period, .. } = src {
            queue.push(Reverse((rng.random_range(0..*period), i)));
        }
    }
    if cfg.label != AttackLabel::Normal {
        sources.push(Source::Attack { label: cfg.label, interval: attack_interval(cfg.label) });
        let start = next_attack_time(0, cfg.attack_on_us, cfg.attack_off_us);
        queue.push(Reverse((start, sources.len() - 1)));
    }

    let mut frames = Vec::with_capacity(cfg.frames);
    while frames.len() < cfg.frames {
        let Reverse((t, i)) = queue.pop().expect("sources never run dry");
        match &mut sources[i] {
            Source::Periodic { id, period, dlc, counter, signal } => {
                *counter = counter.wrapping_add(1);
                *signal = signal.wrapping_add(rng.random_range(0..3)).wrapping_sub(1).clamp(0x0400, 0x1400);
                let payload = periodic_payload(*id, *counter, *signal, &mut rng);
                frames.push(CanFrame::new(Timestamp::from_micros(EPOCH_US + t), *id, *dlc, payload, Flag::Normal));
                let jitter = rng.random_range(0..=*period / 20);
                queue.push(Reverse((t + *period - *period / 40 + jitter, i)));
            }
            Source::Attack { label, interval } => {
                frames.push(attack_frame(*label, EPOCH_US + t, &mut rng));
                let next = t + *interval + rng.random_range(0..=*interval / 10);
                queue.push(Reverse((next_attack_time(next, cfg.attack_on_us, cfg.attack_off_us), i)));
            }
        }
    }
    let mut stream = FrameStream::new(frames, cfg.label);
    stream.source = format!("simulated-{}", cfg.label.as_str().to_ascii_lowercase());
    stream
}
