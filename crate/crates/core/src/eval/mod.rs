//! Prompting, querying and scoring models on a generated dataset.

mod endpoint;
mod parse;
mod prompt;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use endpoint::{
    is_local_url, ChatEndpoint, ChatMessage, EndpointConfig, EndpointError, HttpEndpoint, MockEndpoint, MockMode,
};
pub use parse::{parse_answer, parse_answer_cot, parse_answer_with};
pub use prompt::{
    answer_line, build_prompt, item_block, select_shots, PromptBundle, Strategy, COT_INSTRUCTION, SYSTEM_MCQ, SYSTEM_TF,
};

use crate::error::{Error, Result};
use crate::frame::AttackLabel;
use crate::qa::{QaFormat, QaItem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qa_id: String,
    pub category: u8,
    pub format: QaFormat,
    pub attack_label: AttackLabel,
    pub raw_model_output: String,
    /// `None` when the reply could not be parsed.
    pub parsed_answer: Option<String>,
    pub correct: bool,
    pub latency_secs: f64,
    pub attempts: u32,
}

impl EvalRecord {
    pub fn score(item: &QaItem, raw: String, strategy: Strategy, latency: Duration, attempts: u32) -> Self {
        let parsed = parse_answer_with(&raw, item.format, strategy.uses_reasoning());
        EvalRecord {
            qa_id: item.qa_id.clone(),
            category: item.category,
            format: item.format,
            attack_label: item.meta.attack_label,
            correct: parsed.as_deref() == Some(item.answer.as_str()),
            raw_model_output: raw,
            parsed_answer: parsed,
            latency_secs: latency.as_secs_f64(),
            attempts,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl Slice {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
    }

    fn finish(&mut self) {
        self.accuracy = if self.total == 0 { 0.0 } else { self.correct as f64 / self.total as f64 };
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub overall: Slice,
    pub unparseable: usize,
    pub unparseable_rate: f64,
    pub per_category: BTreeMap<u8, Slice>,
    pub per_attack: BTreeMap<AttackLabel, Slice>,
    pub per_format: BTreeMap<QaFormat, Slice>,
    /// Keyed `<category>:<format>`, ordered by category then format.
    pub per_category_format: BTreeMap<String, Slice>,
}

fn category_format_key(category: u8, format: QaFormat) -> String {
    format!("{category:02}:{format}")
}

impl EvalSummary {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> Self {
        let mut s = EvalSummary::default();
        for r in records {
            s.overall.add(r.correct);
            s.unparseable += usize::from(r.parsed_answer.is_none());
            s.per_category.entry(r.category).or_default().add(r.correct);
            s.per_attack.entry(r.attack_label).or_default().add(r.correct);
            s.per_format.entry(r.format).or_default().add(r.correct);
            s.per_category_format.entry(category_format_key(r.category, r.format)).or_default().add(r.correct);
        }
        s.overall.finish();
        s.unparseable_rate = if s.overall.total == 0 { 0.0 } else { s.unparseable as f64 / s.overall.total as f64 };
        s.per_category.values_mut().chain(s.per_attack.values_mut()).for_each(Slice::finish);
        s.per_format.values_mut().chain(s.per_category_format.values_mut()).for_each(Slice::finish);
        s
    }

    /// Plain-text accuracy table by category and format.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:<6} {:>7} {:>8} {:>9}", "category", "format", "total", "correct", "accuracy");
        for (key, slice) in &self.per_category_format {
            let (cat, fmt) = key.split_once(':').unwrap_or((key, ""));
            let _ = writeln!(
                out,
                "{:<10} {:<6} {:>7} {:>8} {:>9.3}",
                cat.trim_start_matches('0'),
                fmt,
                slice.total,
                slice.correct,
                slice.accuracy
            );
        }
        for (format, slice) in &self.per_format {
            let _ = writeln!(
                out,
                "{:<10} {:<6} {:>7} {:>8} {:>9.3}",
                "all", format, slice.total, slice.correct, slice.accuracy
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:<6} {:>7} {:>8} {:>9.3}",
            "all", "all", self.overall.total, self.overall.correct, self.overall.accuracy
        );
        let _ = writeln!(out, "unparseable: {} ({:.3})", self.unparseable, self.unparseable_rate);
        out
    }

    /// `category,format,total,correct,accuracy`, one row per category and format.
    pub fn csv(&self) -> String {
        let mut out = String::from("category,format,total,correct,accuracy\n");
        for (key, slice) in &self.per_category_format {
            let (cat, fmt) = key.split_once(':').unwrap_or((key, ""));
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                cat.trim_start_matches('0'),
                fmt,
                slice.total,
                slice.correct,
                slice.accuracy
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions<'a> {
    pub strategy: Strategy,
    /// Concurrent requests; at least 1.
    pub parallelism: usize,
    /// Examples per prompt for few-shot strategies.
    pub shots: usize,
    /// Items examples are drawn from; must not share windows with the eval set.
    pub pool: &'a [QaItem],
    pub seed: u64,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self {
            strategy: Strategy::ZeroShot,
            parallelism: 1,
            shots: 5,
            pool: &[],
            seed: 0,
            max_retries: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    /// One record per item, in item order.
    pub records: Vec<EvalRecord>,
    pub summary: EvalSummary,
    /// Records taken from an earlier run.
    pub resumed: usize,
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EvalRecord>(&line) {
            Ok(r) => records.push(r),
            // A torn final line from an interrupted run is dropped and redone.
            Err(e) => warn!("{}:{}: skipping unreadable record: {e}", path.display(), n + 1),
        }
    }
    Ok(records)
}

/// Prompts for every item, built before any request is sent so leakage and
/// pool errors surface up front.
pub fn build_prompts(items: &[QaItem], opts: &EvalOptions<'_>) -> Result<Vec<PromptBundle>> {
    let pool_windows: HashSet<&str> = opts.pool.iter().map(QaItem::window_id).collect();
    items
        .iter()
        .map(|item| {
            if opts.strategy.uses_shots() {
                if pool_windows.contains(item.window_id()) {
                    return Err(Error::Leakage { qa_id: item.qa_id.clone(), window_id: item.window_id().to_string() });
                }
                let shots: Vec<QaItem> =
                    select_shots(item, opts.pool, opts.shots, opts.seed)?.into_iter().cloned().collect();
                build_prompt(item, opts.strategy, &shots)
            } else {
                build_prompt(item, opts.strategy, &[])
            }
        })
        .collect()
}

fn query_with_retries(
    endpoint: &dyn ChatEndpoint,
    messages: &[ChatMessage],
    opts: &EvalOptions<'_>,
) -> std::result::Result<(String, u32), EndpointError> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match endpoint.complete(messages) {
            Ok(text) => return Ok((text, attempt)),
            Err(EndpointError::Transient(msg)) if attempt <= opts.max_retries => {
                let delay = opts.backoff.saturating_mul(1 << (attempt - 1).min(16));
                warn!("transient endpoint failure ({msg}); retry {attempt} in {delay:?}");
                std::thread::sleep(delay);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Query `endpoint` for every item and score the replies.
///
/// With `records_path`, records already there are reused by question id and
/// new ones are appended as they complete, so an interrupted run resumes.
/// A persistent endpoint failure stops the run with [`Error::Aborted`];
/// records written so far stay on disk.
pub fn run_eval(
    items: &[QaItem],
    endpoint: &dyn ChatEndpoint,
    opts: &EvalOptions<'_>,
    records_path: Option<&Path>,
) -> Result<EvalOutcome> {
    if opts.parallelism == 0 {
        return Err(Error::Config("evaluation parallelism must be at least 1".to_string()));
    }
    let wanted: HashSet<&str> = items.iter().map(|i| i.qa_id.as_str()).collect();
    let mut done: BTreeMap<String, EvalRecord> = BTreeMap::new();
    if let Some(path) = records_path.filter(|p| p.exists()) {
        for r in read_records(path)? {
            if wanted.contains(r.qa_id.as_str()) {
                done.insert(r.qa_id.clone(), r);
            }
        }
    }
    let resumed = done.len();
    let pending: Vec<&QaItem> = items.iter().filter(|i| !done.contains_key(&i.qa_id)).collect();
    let pending_items: Vec<QaItem> = pending.iter().map(|i| (*i).clone()).collect();
    let prompts = build_prompts(&pending_items, opts)?;
    info!("evaluating {} items ({resumed} resumed) with {}", pending.len(), opts.strategy);

    let mut sink = match records_path {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
            Some((path, BufWriter::new(file)))
        }
        None => None,
    };

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<std::result::Result<EvalRecord, EndpointError>>();
    let mut failure: Option<EndpointError> = None;
    let mut write_error: Option<Error> = None;

    std::thread::scope(|scope| {
        for _ in 0..opts.parallelism.min(pending.len().max(1)) {
            let tx = tx.clone();
            let (next, stop, pending, prompts) = (&next, &stop, &pending, &prompts);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = pending.get(i) else { break };
                let bundle = &prompts[i];
                let messages =
                    [ChatMessage::system(bundle.system_text.clone()), ChatMessage::user(bundle.user_text.clone())];
                let started = Instant::now();
                let result = query_with_retries(endpoint, &messages, opts)
                    .map(|(raw, attempts)| EvalRecord::score(item, raw, opts.strategy, started.elapsed(), attempts));
                if result.is_err() {
                    stop.store(true, Ordering::SeqCst);
                }
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for result in rx {
            match result {
                Ok(record) => {
                    if let Some((path, out)) = sink.as_mut() {
                        let written = serde_json::to_writer(&mut *out, &record)
                            .map_err(io_from_json)
                            .and_then(|_| out.write_all(b"\n"))
                            .and_then(|_| out.flush());
                        if let Err(e) = written {
                            write_error.get_or_insert(Error::io(*path, e));
                            stop.store(true, Ordering::SeqCst);
                        }
                    }
                    done.insert(record.qa_id.clone(), record);
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
    });

    if let Some(e) = write_error {
        return Err(e);
    }
    match failure {
        Some(EndpointError::Auth(msg)) => {
            return Err(Error::Auth(format!("{msg}; check the endpoint credential configuration")))
        }
        Some(e) => {
            return Err(Error::Aborted { completed: done.len(), total: items.len(), reason: e.to_string() });
        }
        None => {}
    }

    let records: Vec<EvalRecord> = items.iter().filter_map(|i| done.remove(&i.qa_id)).collect();
    let summary = EvalSummary::from_records(&records);
    Ok(EvalOutcome { records, summary, resumed })
}

fn io_from_json(e: serde_json::Error) -> std::io::Error {
    std::io::Error::other(e)
}
