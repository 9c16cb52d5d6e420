//! Frame ingest: parse raw CAN logs into a unified, chronologically ordered
//! frame stream.
//!
//! Two textual layouts of the Car Hacking dataset are understood:
//!
//! ```text
//! 1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R          car-hacking-csv
//! Timestamp: 1479121434.850202  ID: 0350  000  DLC: 8  05 28 84 66 6d 00 00 a2   car-hacking-txt
//! ```
//!
//! The CSV layout is `timestamp, id-hex, dlc, <dlc data-hex columns>, flag`
//! where the flag is `R` (normal) or `T` (injected). The text layout carries
//! no flag and is always normal traffic. Malformed lines are dropped and
//! counted, never repaired. Files ending in `.gz` are decompressed
//! transparently.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::MAX_EXTENDED_ID;

/// Microseconds since some origin; trace start once a stream is normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_micros(us: u64) -> Self {
        Timestamp(us)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Nearest microsecond of a finite, non-negative number of seconds.
    pub fn from_secs_f64(secs: f64) -> Option<Self> {
        if secs.is_finite() && (0.0..1.8e13).contains(&secs) {
            Some(Timestamp((secs * 1e6).round() as u64))
        } else {
            None
        }
    }

    /// Parse a plain decimal number of seconds (`1478198376.389427`).
    ///
    /// Digits past the sixth decimal are rounded half-up. Signs, exponents and
    /// anything but ASCII digits and one `.` are rejected.
    pub fn parse(text: &str) -> Option<Self> {
        let (int_part, frac_part) = match text.split_once('.') {
            Some((i, f)) => (i, f),
            None => (text, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        let mut micros: u64 = 0;
        for b in int_part.bytes() {
            micros = micros.checked_mul(10)?.checked_add(u64::from(b - b'0'))?;
        }
        micros = micros.checked_mul(1_000_000)?;
        let frac = frac_part.as_bytes();
        let mut scale = 100_000u64;
        for &b in frac.iter().take(6) {
            micros = micros.checked_add(u64::from(b - b'0') * scale)?;
            scale /= 10;
        }
        if frac.len() > 6 && frac[6] >= b'5' {
            micros = micros.checked_add(1)?;
        }
        Some(Timestamp(micros))
    }

    pub fn saturating_sub(self, other: Timestamp) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Flag {
    Normal,
    Attack,
}

impl Flag {
    pub fn letter(self) -> char {
        match self {
            Flag::Normal => 'R',
            Flag::Attack => 'T',
        }
    }

    pub fn from_letter(text: &str) -> Option<Self> {
        match text {
            "R" => Some(Flag::Normal),
            "T" => Some(Flag::Attack),
            _ => None,
        }
    }

    pub fn is_attack(self) -> bool {
        self == Flag::Attack
    }
}

/// Which trace a stream (and every window cut from it) came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackLabel {
    #[serde(rename = "DoS")]
    Dos,
    Fuzzy,
    Gear,
    #[serde(rename = "RPM")]
    Rpm,
    Normal,
}

impl AttackLabel {
    pub const ALL: [AttackLabel; 5] =
        [AttackLabel::Dos, AttackLabel::Fuzzy, AttackLabel::Gear, AttackLabel::Rpm, AttackLabel::Normal];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackLabel::Dos => "DoS",
            AttackLabel::Fuzzy => "Fuzzy",
            AttackLabel::Gear => "Gear",
            AttackLabel::Rpm => "RPM",
            AttackLabel::Normal => "Normal",
        }
    }

    /// Infer the label from a Car Hacking style file name
    /// (`DoS_dataset.csv`, `gear_dataset.csv`, `normal_run_data.txt`, ...).
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        [
            ("dos", AttackLabel::Dos),
            ("fuzzy", AttackLabel::Fuzzy),
            ("gear", AttackLabel::Gear),
            ("rpm", AttackLabel::Rpm),
            ("normal", AttackLabel::Normal),
        ]
        .into_iter()
        .find(|(needle, _)| name.contains(needle))
        .map(|(_, label)| label)
    }
}

impl fmt::Display for AttackLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for AttackLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown attack label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FormatHint {
    CarHackingCsv,
    CarHackingTxt,
    #[default]
    Auto,
}

impl FromStr for FormatHint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "car-hacking-csv" | "csv" => Ok(FormatHint::CarHackingCsv),
            "car-hacking-txt" | "txt" => Ok(FormatHint::CarHackingTxt),
            "auto" => Ok(FormatHint::Auto),
            other => Err(Error::Argument(format!("unknown log format {other:?}"))),
        }
    }
}

/// One normalized bus frame.
///
/// Payload bytes at index `>= dlc` are zero padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanFrame {
    pub timestamp: Timestamp,
    pub can_id: u32,
    /// Identifier exactly as written in the source log, used for rendering.
    pub id_hex: String,
    pub dlc: u8,
    pub payload: [u8; 8],
    pub flag: Flag,
}

impl CanFrame {
    /// Builds a frame, zeroing bytes beyond `dlc`.
    ///
    /// Panics if `dlc > 8` or the identifier exceeds 29 bits.
    pub fn new(timestamp: Timestamp, can_id: u32, dlc: u8, payload: [u8; 8], flag: Flag) -> Self {
        assert!(dlc <= 8, "classic CAN DLC must be at most 8");
        assert!(can_id <= MAX_EXTENDED_ID, "CAN identifier exceeds 29 bits");
        let mut payload = payload;
        payload[usize::from(dlc)..].fill(0);
        let id_hex = if can_id <= 0xFFFF { format!("{can_id:04x}") } else { format!("{can_id:08x}") };
        CanFrame { timestamp, can_id, id_hex, dlc, payload, flag }
    }

    /// Bytes actually carried on the bus.
    pub fn data(&self) -> &[u8] {
        &self.payload[..usize::from(self.dlc)]
    }

    /// Number of zero-padding bytes appended to reach eight.
    pub fn padding(&self) -> usize {
        8 - usize::from(self.dlc)
    }

    /// Content identity used for duplicate detection: everything but the flag.
    pub fn content_key(&self) -> (Timestamp, u32, u8, [u8; 8]) {
        (self.timestamp, self.can_id, self.dlc, self.payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    FieldCount { expected: usize, found: usize },
    Timestamp,
    Identifier,
    Dlc,
    DataByte,
    Flag,
    Encoding,
    Layout,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::FieldCount { expected, found } => {
                write!(f, "expected {expected} fields, found {found}")
            }
            RejectReason::Timestamp => f.write_str("invalid timestamp"),
            RejectReason::Identifier => f.write_str("invalid identifier"),
            RejectReason::Dlc => f.write_str("invalid DLC"),
            RejectReason::DataByte => f.write_str("invalid data byte"),
            RejectReason::Flag => f.write_str("invalid flag"),
            RejectReason::Encoding => f.write_str("line is not valid UTF-8"),
            RejectReason::Layout => f.write_str("line does not match the log layout"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based physical line number.
    pub line: usize,
    pub reason: RejectReason,
}

/// Chronologically ordered frames from one source trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    pub frames: Vec<CanFrame>,
    pub source_label: AttackLabel,
    pub rejected_count: usize,
    pub rejections: Vec<Rejection>,
    pub header_lines: usize,
    /// Original timestamp of the first frame; frame timestamps are relative to it.
    pub epoch: Timestamp,
    /// File name or other description of the source.
    pub source: String,
}

impl FrameStream {
    pub fn new(frames: Vec<CanFrame>, source_label: AttackLabel) -> Self {
        normalize_stream(FrameStream {
            frames,
            source_label,
            rejected_count: 0,
            rejections: Vec::new(),
            header_lines: 0,
            epoch: Timestamp::ZERO,
            source: String::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn attack_frame_count(&self) -> usize {
        self.frames.iter().filter(|f| f.flag.is_attack()).count()
    }

    /// The normal-flagged subset of this trace, relabeled as normal traffic.
    pub fn normal_subset(&self) -> FrameStream {
        FrameStream {
            frames: self.frames.iter().filter(|f| !f.flag.is_attack()).cloned().collect(),
            source_label: AttackLabel::Normal,
            rejected_count: self.rejected_count,
            rejections: self.rejections.clone(),
            header_lines: self.header_lines,
            epoch: self.epoch,
            source: self.source.clone(),
        }
    }
}

/// Stable-sort frames by timestamp and rebase so the first frame sits at zero.
///
/// Identical consecutive records are kept. The function is idempotent.
pub fn normalize_stream(mut stream: FrameStream) -> FrameStream {
    stream.frames.sort_by_key(|f| f.timestamp);
    if let Some(origin) = stream.frames.first().map(|f| f.timestamp) {
        if origin != Timestamp::ZERO {
            for frame in &mut stream.frames {
                frame.timestamp = Timestamp(frame.timestamp.0 - origin.0);
            }
            stream.epoch = Timestamp(stream.epoch.0 + origin.0);
        }
    }
    stream
}

/// Digest over the exact content of a frame sequence, including flags.
pub fn frames_digest(frames: &[CanFrame]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for f in frames {
        hasher.update(f.timestamp.as_micros().to_le_bytes());
        hasher.update(f.can_id.to_le_bytes());
        hasher.update([f.dlc]);
        hasher.update(f.payload);
        hasher.update([f.flag.letter() as u8]);
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Csv,
    Txt,
}

fn parse_hex_id(text: &str) -> Option<u32> {
    if text.is_empty() || text.len() > 8 || !text.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    u32::from_str_radix(text, 16).ok().filter(|id| *id <= MAX_EXTENDED_ID)
}

fn parse_hex_byte(text: &str) -> Option<u8> {
    if text.is_empty() || text.len() > 2 || !text.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    u8::from_str_radix(text, 16).ok()
}

fn parse_dlc(text: &str) -> Option<u8> {
    if text.is_empty() || text.len() > 2 || !text.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    text.parse::<u8>().ok().filter(|d| *d <= 8)
}

type LineResult = std::result::Result<CanFrame, RejectReason>;

fn parse_csv_line(line: &str) -> LineResult {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 4 {
        return Err(RejectReason::FieldCount { expected: 4, found: fields.len() });
    }
    let timestamp = Timestamp::parse(fields[0]).ok_or(RejectReason::Timestamp)?;
    let can_id = parse_hex_id(fields[1]).ok_or(RejectReason::Identifier)?;
    let dlc = parse_dlc(fields[2]).ok_or(RejectReason::Dlc)?;
    let expected = 4 + usize::from(dlc);
    if fields.len() != expected {
        return Err(RejectReason::FieldCount { expected, found: fields.len() });
    }
    let mut payload = [0u8; 8];
    for (slot, text) in payload.iter_mut().zip(&fields[3..3 + usize::from(dlc)]) {
        *slot = parse_hex_byte(text).ok_or(RejectReason::DataByte)?;
    }
    let flag = Flag::from_letter(fields[expected - 1]).ok_or(RejectReason::Flag)?;
    Ok(CanFrame { timestamp, can_id, id_hex: fields[1].to_string(), dlc, payload, flag })
}

fn parse_txt_line(line: &str) -> LineResult {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    // Timestamp: <ts> ID: <id> <flags> DLC: <dlc> <bytes...>
    if tokens.len() < 7 || tokens[0] != "Timestamp:" || tokens[2] != "ID:" || tokens[5] != "DLC:" {
        return Err(RejectReason::Layout);
    }
    let timestamp = Timestamp::parse(tokens[1]).ok_or(RejectReason::Timestamp)?;
    let can_id = parse_hex_id(tokens[3]).ok_or(RejectReason::Identifier)?;
    let dlc = parse_dlc(tokens[6]).ok_or(RejectReason::Dlc)?;
    let expected = 7 + usize::from(dlc);
    if tokens.len() != expected {
        return Err(RejectReason::FieldCount { expected, found: tokens.len() });
    }
    let mut payload = [0u8; 8];
    for (slot, text) in payload.iter_mut().zip(&tokens[7..]) {
        *slot = parse_hex_byte(text).ok_or(RejectReason::DataByte)?;
    }
    Ok(CanFrame { timestamp, can_id, id_hex: tokens[3].to_string(), dlc, payload, flag: Flag::Normal })
}

fn parse_line(layout: Layout, line: &str) -> LineResult {
    match layout {
        Layout::Csv => parse_csv_line(line),
        Layout::Txt => parse_txt_line(line),
    }
}

fn looks_like_csv_header(line: &str) -> bool {
    let first = line.split(',').next().unwrap_or("").trim();
    line.contains(',') && Timestamp::parse(first).is_none() && first.bytes().any(|b| b.is_ascii_alphabetic())
}

fn detect_layout(line: &str) -> Option<Layout> {
    if line.trim_start().starts_with("Timestamp:") {
        return Some(Layout::Txt);
    }
    let mut fields = line.split(',');
    let first = fields.next().unwrap_or("").trim();
    if fields.count() >= 3 && Timestamp::parse(first).is_some() {
        return Some(Layout::Csv);
    }
    None
}

/// Parse a raw log into a normalized [`FrameStream`].
///
/// `source` names the input in diagnostics. Blank lines are ignored; a leading
/// CSV header is skipped and counted in `header_lines`. Every other line is
/// either a frame or a counted rejection.
pub fn parse_log<R: BufRead>(mut reader: R, hint: FormatHint, label: AttackLabel, source: &str) -> Result<FrameStream> {
    let mut layout = match hint {
        FormatHint::CarHackingCsv => Some(Layout::Csv),
        FormatHint::CarHackingTxt => Some(Layout::Txt),
        FormatHint::Auto => None,
    };
    let mut frames = Vec::new();
    let mut rejections = Vec::new();
    let mut header_lines = 0;
    let mut seen_content = false;
    let mut buf = Vec::with_capacity(128);
    let mut line_no = 0usize;

    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(source, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let Ok(text) = std::str::from_utf8(&buf) else {
            seen_content = true;
            warn!("{source}:{line_no}: rejected ({})", RejectReason::Encoding);
            rejections.push(Rejection { line: line_no, reason: RejectReason::Encoding });
            continue;
        };
        let line = text.trim_end_matches(['\n', '\r']).trim();
        if line.is_empty() {
            continue;
        }
        if !seen_content {
            seen_content = true;
            if layout != Some(Layout::Txt) && looks_like_csv_header(line) {
                header_lines += 1;
                continue;
            }
        }
        let active = match layout {
            Some(l) => l,
            None => match detect_layout(line) {
                Some(l) => {
                    debug!("{source}: detected {l:?} layout at line {line_no}");
                    layout = Some(l);
                    l
                }
                None => {
                    return Err(Error::FormatDetection { line: line_no, text: line.to_string() });
                }
            },
        };
        match parse_line(active, line) {
            Ok(frame) => frames.push(frame),
            Err(reason) => {
                warn!("{source}:{line_no}: rejected ({reason})");
                rejections.push(Rejection { line: line_no, reason });
            }
        }
    }

    if frames.is_empty() {
        return Err(Error::EmptyStream(source.to_string()));
    }
    let rejected_count = rejections.len();
    Ok(normalize_stream(FrameStream {
        frames,
        source_label: label,
        rejected_count,
        rejections,
        header_lines,
        epoch: Timestamp::ZERO,
        source: source.to_string(),
    }))
}

/// Open a log file, decompressing `.gz` transparently.
pub fn open_log(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    Ok(if gz { Box::new(BufReader::new(MultiGzDecoder::new(file))) } else { Box::new(BufReader::new(file)) })
}

/// Parse a log file; the label is inferred from the file name unless given.
pub fn parse_log_file(path: &Path, hint: FormatHint, label: Option<AttackLabel>) -> Result<FrameStream> {
    let reader = open_log(path)?;
    let label = match label.or_else(|| AttackLabel::from_path(path)) {
        Some(l) => l,
        None => {
            return Err(Error::Argument(format!(
                "cannot infer attack label from {}; pass it explicitly",
                path.display()
            )))
        }
    };
    let name = path.display().to_string();
    if is_frames_dump(path) {
        return read_frames_jsonl(reader, label, &name);
    }
    parse_log(reader, hint, label, &name)
}

/// `*.jsonl` / `*.jsonl.gz` inputs are normalized-frame dumps, not raw logs.
pub fn is_frames_dump(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".jsonl") || name.ends_with(".jsonl.gz")
}

/// Write frames back in the Car Hacking CSV layout with their original
/// (epoch-relative) timestamps.
pub fn write_csv<W: Write>(stream: &FrameStream, mut out: W) -> io::Result<()> {
    for frame in &stream.frames {
        let ts = Timestamp(stream.epoch.0 + frame.timestamp.0);
        write!(out, "{ts},{},{}", frame.id_hex, frame.dlc)?;
        for b in frame.data() {
            write!(out, ",{b:02x}")?;
        }
        writeln!(out, ",{}", frame.flag.letter())?;
    }
    Ok(())
}

/// JSONL shape of one normalized frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub ts: f64,
    pub id_hex: String,
    pub dlc: u8,
    pub data: Vec<String>,
    pub flag: String,
}

impl From<&CanFrame> for FrameRecord {
    fn from(frame: &CanFrame) -> Self {
        FrameRecord {
            ts: frame.timestamp.as_secs_f64(),
            id_hex: frame.id_hex.clone(),
            dlc: frame.dlc,
            data: frame.payload.iter().map(|b| format!("{b:02x}")).collect(),
            flag: frame.flag.letter().to_string(),
        }
    }
}

impl TryFrom<FrameRecord> for CanFrame {
    type Error = RejectReason;

    fn try_from(rec: FrameRecord) -> std::result::Result<Self, RejectReason> {
        let timestamp = Timestamp::from_secs_f64(rec.ts).ok_or(RejectReason::Timestamp)?;
        let can_id = parse_hex_id(&rec.id_hex).ok_or(RejectReason::Identifier)?;
        if rec.dlc > 8 {
            return Err(RejectReason::Dlc);
        }
        if rec.data.len() != 8 {
            return Err(RejectReason::FieldCount { expected: 8, found: rec.data.len() });
        }
        let mut payload = [0u8; 8];
        for (i, (slot, text)) in payload.iter_mut().zip(&rec.data).enumerate() {
            *slot = parse_hex_byte(text).ok_or(RejectReason::DataByte)?;
            if i >= usize::from(rec.dlc) && *slot != 0 {
                return Err(RejectReason::DataByte);
            }
        }
        let flag = Flag::from_letter(&rec.flag).ok_or(RejectReason::Flag)?;
        Ok(CanFrame { timestamp, can_id, id_hex: rec.id_hex, dlc: rec.dlc, payload, flag })
    }
}

pub fn write_frames_jsonl<W: Write>(frames: &[CanFrame], mut out: W) -> io::Result<()> {
    for frame in frames {
        serde_json::to_writer(&mut out, &FrameRecord::from(frame))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a normalized-frame JSONL dump back into a stream.
pub fn read_frames_jsonl<R: Read>(reader: R, label: AttackLabel, source: &str) -> Result<FrameStream> {
    let mut frames = Vec::new();
    let mut rejections = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed =
            serde_json::from_str::<FrameRecord>(&line).map_err(|_| RejectReason::Layout).and_then(CanFrame::try_from);
        match parsed {
            Ok(frame) => frames.push(frame),
            Err(reason) => {
                warn!("{source}:{}: rejected ({reason})", i + 1);
                rejections.push(Rejection { line: i + 1, reason });
            }
        }
    }
    if frames.is_empty() {
        return Err(Error::EmptyStream(source.to_string()));
    }
    Ok(normalize_stream(FrameStream {
        frames,
        source_label: label,
        rejected_count: rejections.len(),
        rejections,
        header_lines: 0,
        epoch: Timestamp::ZERO,
        source: source.to_string(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(text: &str) -> Result<FrameStream> {
        parse_log(text.as_bytes(), FormatHint::Auto, AttackLabel::Dos, "test")
    }

    #[test]
    fn timestamp_parsing() {
        assert_eq!(Timestamp::parse("1478198376.389427").unwrap().as_micros(), 1_478_198_376_389_427);
        assert_eq!(Timestamp::parse("1.5").unwrap().as_micros(), 1_500_000);
        assert_eq!(Timestamp::parse("2").unwrap().as_micros(), 2_000_000);
        assert_eq!(Timestamp::parse("0.0000015").unwrap().as_micros(), 2);
        assert_eq!(Timestamp::parse("0.0000014").unwrap().as_micros(), 1);
        for bad in ["", ".", "-1.0", "1e3", "1.2.3", "abc", " 1"] {
            assert!(Timestamp::parse(bad).is_none(), "{bad:?}");
        }
        assert_eq!(Timestamp::from_micros(1_234_567).to_string(), "1.234567");
        assert_eq!(Timestamp::from_micros(5).to_string(), "0.000005");
    }

    #[test]
    fn decodes_reference_line_field_by_field() {
        let s = parse_str("1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R\n").unwrap();
        let f = &s.frames[0];
        assert_eq!(f.can_id, 0x0316);
        assert_eq!(f.id_hex, "0316");
        assert_eq!(f.dlc, 8);
        assert_eq!(f.payload, [0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0x6f]);
        assert_eq!(f.flag, Flag::Normal);
        assert_eq!(f.timestamp, Timestamp::ZERO);
        assert_eq!(s.epoch.as_micros(), 1_478_198_376_389_427);
    }

    #[test]
    fn short_dlc_is_zero_padded() {
        let s = parse_str("0.5,0002,2,AB,cd,T\n").unwrap();
        let f = &s.frames[0];
        assert_eq!(f.payload, [0xab, 0xcd, 0, 0, 0, 0, 0, 0]);
        assert_eq!(f.padding(), 6);
        assert_eq!(f.data(), &[0xab, 0xcd]);
        assert_eq!(f.flag, Flag::Attack);
    }

    #[test]
    fn malformed_lines_are_counted_and_skipped() {
        let text = "0.1,0316,8,05,21,68,09,21,21,00,6f,R\n\
                    0.2,zz16,8,05,21,68,09,21,21,00,6f,R\n\
                    0.3,0316,2,05,R\n\
                    0.4,0316,2,05,21,X\n\
                    0.5,0316,9,05,21,68,09,21,21,00,6f,00,R\n\
                    0.6,0316,1,1ff,R\n\
                    0.7,0316,1,11,R\n";
        let s = parse_str(text).unwrap();
        assert_eq!(s.frames.len(), 2);
        assert_eq!(s.rejected_count, 5);
        let lines: Vec<usize> = s.rejections.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![2, 3, 4, 5, 6]);
        assert_eq!(s.rejections[0].reason, RejectReason::Identifier);
        assert_eq!(s.rejections[2].reason, RejectReason::Flag);
        assert_eq!(s.rejections[3].reason, RejectReason::Dlc);
    }

    #[test]
    fn header_is_skipped_and_not_rejected() {
        let s = parse_str("Timestamp,ID,DLC,Data,Flag\n0.1,0316,1,11,R\n\n").unwrap();
        assert_eq!(s.header_lines, 1);
        assert_eq!(s.rejected_count, 0);
        assert_eq!(s.frames.len(), 1);
    }

    #[test]
    fn txt_layout_is_detected() {
        let text = "Timestamp: 1479121434.850202        ID: 0350    000    DLC: 8    05 28 84 66 6d 00 00 a2\n\
                    Timestamp: 1479121434.850423        ID: 02c0    000    DLC: 4    14 00 00 00\n";
        let s = parse_str(text).unwrap();
        assert_eq!(s.frames.len(), 2);
        assert_eq!(s.frames[1].can_id, 0x2c0);
        assert_eq!(s.frames[1].timestamp.as_micros(), 221);
        assert!(s.frames.iter().all(|f| f.flag == Flag::Normal));
    }

    #[test]
    fn unknown_layout_names_first_offending_line() {
        match parse_str("\n(1735270496.916858) can0 110#00112233\n") {
            Err(Error::FormatDetection { line, text }) => {
                assert_eq!(line, 2);
                assert!(text.contains("can0"));
            }
            other => panic!("expected detection error, got {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_str(""), Err(Error::EmptyStream(_))));
        let forced = parse_log("x,y\n".as_bytes(), FormatHint::CarHackingCsv, AttackLabel::Dos, "t");
        assert!(matches!(forced, Err(Error::EmptyStream(_))));
    }

    #[test]
    fn out_of_order_lines_are_sorted_stably() {
        let s = parse_str("0.1,0001,0,R\n0.3,0002,0,R\n0.2,0003,0,R\n0.2,0004,0,R\n").unwrap();
        let ids: Vec<u32> = s.frames.iter().map(|f| f.can_id).collect();
        assert_eq!(ids, vec![1, 3, 4, 2]);
        let ts: Vec<u64> = s.frames.iter().map(|f| f.timestamp.as_micros()).collect();
        assert_eq!(ts, vec![0, 100_000, 100_000, 200_000]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let s = parse_str("5.1,0001,0,R\n5.3,0002,0,R\n5.2,0003,0,R\n").unwrap();
        let again = normalize_stream(s.clone());
        assert_eq!(s, again);
    }

    #[test]
    fn equal_timestamps_keep_relative_order_on_shuffled_input() {
        // Ten frames over three distinct timestamps, shuffled; the stable-sort
        // oracle is a bucket pass in input order.
        let input: Vec<(u64, u32)> =
            vec![(3, 0), (1, 1), (2, 2), (1, 3), (3, 4), (2, 5), (1, 6), (3, 7), (2, 8), (1, 9)];
        let frames: Vec<CanFrame> = input
            .iter()
            .map(|&(t, id)| CanFrame::new(Timestamp::from_micros(t), id, 0, [0; 8], Flag::Normal))
            .collect();
        let stream = FrameStream::new(frames, AttackLabel::Normal);
        let mut expected = Vec::new();
        for t in 1..=3 {
            expected.extend(input.iter().filter(|(ts, _)| *ts == t).map(|(_, id)| *id));
        }
        let got: Vec<u32> = stream.frames.iter().map(|f| f.can_id).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn csv_writer_round_trips() {
        let text = "1478198376.389427,0316,8,05,21,68,09,21,21,00,6F,R\n1478198376.389627,018F,2,fe,5b,T\n";
        let s = parse_str(text).unwrap();
        let mut out = Vec::new();
        write_csv(&s, &mut out).unwrap();
        let again = parse_str(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(s.frames, again.frames);
        assert_eq!(s.epoch, again.epoch);
    }

    #[test]
    fn jsonl_dump_round_trips() {
        let s = parse_str("10.000001,0316,3,01,02,03,T\n10.5,1abcdef0,0,R\n").unwrap();
        let mut out = Vec::new();
        write_frames_jsonl(&s.frames, &mut out).unwrap();
        let first = std::str::from_utf8(&out).unwrap().lines().next().unwrap().to_string();
        assert_eq!(
            first,
            r#"{"ts":0.0,"id_hex":"0316","dlc":3,"data":["01","02","03","00","00","00","00","00"],"flag":"T"}"#
        );
        let back = read_frames_jsonl(out.as_slice(), AttackLabel::Dos, "dump").unwrap();
        assert_eq!(back.frames, s.frames);
    }

    #[test]
    fn labels_from_file_names() {
        assert_eq!(AttackLabel::from_path(Path::new("/d/DoS_dataset.csv")), Some(AttackLabel::Dos));
        assert_eq!(AttackLabel::from_path(Path::new("gear_dataset.csv.gz")), Some(AttackLabel::Gear));
        assert_eq!(AttackLabel::from_path(Path::new("RPM_dataset.csv")), Some(AttackLabel::Rpm));
        assert_eq!(AttackLabel::from_path(Path::new("normal_run_data.txt")), Some(AttackLabel::Normal));
        assert_eq!(AttackLabel::from_path(Path::new("trace.csv")), None);
        assert_eq!("rpm".parse::<AttackLabel>().unwrap(), AttackLabel::Rpm);
    }
}
