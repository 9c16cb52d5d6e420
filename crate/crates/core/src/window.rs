//! Fixed-length windows over a frame stream and their textual rendering.

use std::fmt::Write as _;
use std::io::{self, Write};

use log::warn;
use serde::Serialize;

use crate::config::MIN_WINDOW_LEN;
use crate::error::{Error, Result};
use crate::frame::{AttackLabel, CanFrame, FrameRecord, FrameStream};

/// A contiguous run of exactly `W` frames from one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `<source_label>:<index>`
    pub window_id: String,
    pub index: usize,
    pub attack_label: AttackLabel,
    pub frames: Vec<CanFrame>,
}

impl Window {
    pub fn new(attack_label: AttackLabel, index: usize, frames: Vec<CanFrame>) -> Self {
        Window { window_id: format!("{attack_label}:{index}"), index, attack_label, frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_us(&self) -> u64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(first), Some(last)) => last.timestamp.saturating_sub(first.timestamp),
            _ => 0,
        }
    }

    /// Last timestamp minus first timestamp, in seconds.
    pub fn duration(&self) -> f64 {
        self.duration_us() as f64 / 1e6
    }
}

/// Split a stream into consecutive, non-overlapping windows of `window_len`
/// frames. A trailing partial window is dropped.
pub fn segment(stream: &FrameStream, window_len: usize) -> Result<Vec<Window>> {
    if window_len < MIN_WINDOW_LEN {
        return Err(Error::Config(format!("window length {window_len} is below the minimum of {MIN_WINDOW_LEN}")));
    }
    if stream.frames.len() < window_len {
        warn!(
            "{}: {} frames is shorter than one window of {window_len}; no windows emitted",
            stream.source,
            stream.frames.len()
        );
    }
    Ok(stream
        .frames
        .chunks_exact(window_len)
        .enumerate()
        .map(|(i, chunk)| Window::new(stream.source_label, i, chunk.to_vec()))
        .collect())
}

/// Window text handed to models: one line per frame in chronological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedContext {
    pub text: String,
    /// Frame whose flag is shown as `?`.
    pub masked_index: Option<usize>,
}

/// One frame as a labeled line:
/// `t=<ts> ID=<hex> DLC=<d> DATA=<b0 .. b7> FLAG=<R|T|?>`.
pub fn render_frame(frame: &CanFrame, masked: bool, out: &mut String) {
    let _ = write!(out, "t={} ID={} DLC={} DATA=", frame.timestamp, frame.id_hex, frame.dlc);
    for (i, b) in frame.payload.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{b:02x}");
    }
    out.push_str(" FLAG=");
    out.push(if masked { '?' } else { frame.flag.letter() });
}

pub fn render_context(window: &Window, masked_index: Option<usize>) -> Result<RenderedContext> {
    if let Some(i) = masked_index {
        if i >= window.len() {
            return Err(Error::Argument(format!(
                "masked index {i} out of range for window of {} frames",
                window.len()
            )));
        }
    }
    let mut text = String::with_capacity(window.len() * 64);
    for (i, frame) in window.frames.iter().enumerate() {
        if i > 0 {
            text.push('\n');
        }
        render_frame(frame, masked_index == Some(i), &mut text);
    }
    Ok(RenderedContext { text, masked_index })
}

#[derive(Serialize)]
struct WindowRecord<'a> {
    window_id: &'a str,
    attack_label: AttackLabel,
    frames: Vec<FrameRecord>,
    context: String,
}

/// Window dump: one JSON object per window with its frames and rendered context.
pub fn write_windows_jsonl<W: Write>(windows: &[Window], mut out: W) -> io::Result<()> {
    for window in windows {
        let context = render_context(window, None).expect("unmasked render is infallible").text;
        let record = WindowRecord {
            window_id: &window.window_id,
            attack_label: window.attack_label,
            frames: window.frames.iter().map(FrameRecord::from).collect(),
            context,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
