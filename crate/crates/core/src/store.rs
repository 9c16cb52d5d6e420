//! Dataset persistence and the window-disjoint few-shot split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::{derive_seed, sha256_hex};
use crate::error::{Error, Result};
use crate::frame::AttackLabel;
use crate::qa::{FormatCounts, QaFormat, QaItem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub total_items: usize,
    pub per_format: FormatCounts,
    pub per_attack: BTreeMap<AttackLabel, usize>,
    pub per_category: BTreeMap<u8, usize>,
    pub seed: Option<u64>,
    pub window_len: Option<usize>,
    /// Digest of window length and thresholds.
    pub config_digest: Option<String>,
    pub baseline_digest: Option<String>,
    /// sha256 of the dataset JSONL bytes.
    pub dataset_digest: String,
}

/// Provenance copied into a manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManifestContext {
    pub seed: Option<u64>,
    pub window_len: Option<usize>,
    pub config_digest: Option<String>,
    pub baseline_digest: Option<String>,
}

impl DatasetManifest {
    pub fn summarize(items: &[QaItem], ctx: &ManifestContext, dataset_digest: String) -> Self {
        let mut per_format = FormatCounts::default();
        let mut per_attack = BTreeMap::new();
        let mut per_category = BTreeMap::new();
        for item in items {
            match item.format {
                QaFormat::Tf => per_format.tf += 1,
                QaFormat::Mcq => per_format.mcq += 1,
            }
            *per_attack.entry(item.meta.attack_label).or_default() += 1;
            *per_category.entry(item.category).or_default() += 1;
        }
        DatasetManifest {
            total_items: items.len(),
            per_format,
            per_attack,
            per_category,
            seed: ctx.seed,
            window_len: ctx.window_len,
            config_digest: ctx.config_digest.clone(),
            baseline_digest: ctx.baseline_digest.clone(),
            dataset_digest,
        }
    }

    /// Breakdown sums equal the total.
    pub fn is_consistent(&self) -> bool {
        let n = self.total_items;
        self.per_format.tf + self.per_format.mcq == n
            && self.per_attack.values().sum::<usize>() == n
            && self.per_category.values().sum::<usize>() == n
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// `data/qa.jsonl` -> `data/qa.manifest.json`.
pub fn manifest_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    dataset.with_file_name(format!("{stem}.manifest.json"))
}

/// Serialize items as JSONL bytes, one object per line.
pub fn dataset_bytes(items: &[QaItem]) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(items.len() * 4096);
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| Error::json(&item.qa_id, e))?;
        buf.push(b'\n');
    }
    Ok(buf)
}

fn check_unique(items: &[QaItem]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for item in items {
        if !seen.insert(item.qa_id.as_str()) {
            return Err(Error::Integrity(format!("duplicate question id {}", item.qa_id)));
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

/// Write the dataset JSONL and its manifest next to it.
pub fn write_dataset(items: &[QaItem], path: &Path, ctx: &ManifestContext) -> Result<DatasetManifest> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_unique(items)?;
    let bytes = dataset_bytes(items)?;
    let manifest = DatasetManifest::summarize(items, ctx, sha256_hex(&bytes));
    write_file(path, &bytes)?;
    let mut manifest_json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    manifest_json.push(b'\n');
    write_file(&manifest_path(path), &manifest_json)?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<Vec<QaItem>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: QaItem =
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        items.push(item);
    }
    check_unique(&items)?;
    Ok(items)
}

/// Split items into an evaluation set and a few-shot pool with no window in
/// common.
///
/// Windows are visited in seeded random order. The first window that the
/// pool can do without stays in the evaluation set; the others join the pool
/// while they add a format that is still short of `k` items. `k = 0` leaves
/// the pool empty.
pub fn split_eval_fewshot(items: &[QaItem], k: usize, seed: u64) -> Result<(Vec<QaItem>, Vec<QaItem>)> {
    if k == 0 {
        return Ok((items.to_vec(), Vec::new()));
    }
    let formats: BTreeSet<QaFormat> = items.iter().map(|i| i.format).collect();
    let mut by_window: BTreeMap<&str, BTreeMap<QaFormat, usize>> = BTreeMap::new();
    let mut supply: BTreeMap<QaFormat, usize> = BTreeMap::new();
    for item in items {
        *by_window.entry(item.window_id()).or_default().entry(item.format).or_default() += 1;
        *supply.entry(item.format).or_default() += 1;
    }
    let mut order: Vec<&str> = by_window.keys().copied().collect();
    let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, &["fewshot-split"]));
    order.shuffle(&mut rng);

    // Feasible exactly when some window can be left out of the pool.
    let spare = order
        .iter()
        .copied()
        .find(|w| formats.iter().all(|f| supply[f] - by_window[w].get(f).copied().unwrap_or(0) >= k));
    let Some(spare) = spare else {
        return Err(Error::Split(format!(
            "{} windows cannot supply {k} examples per format and still leave an evaluation set",
            by_window.len()
        )));
    };

    let mut pool_windows = BTreeSet::new();
    let mut have: BTreeMap<QaFormat, usize> = BTreeMap::new();
    let short = |have: &BTreeMap<QaFormat, usize>, f: &QaFormat| have.get(f).copied().unwrap_or(0) < k;
    for window in order {
        if window == spare {
            continue;
        }
        if formats.iter().all(|f| !short(&have, f)) {
            break;
        }
        if by_window[window].keys().any(|f| short(&have, f)) {
            pool_windows.insert(window);
            for (f, n) in &by_window[window] {
                *have.entry(*f).or_default() += n;
            }
        }
    }
    let (pool, eval): (Vec<QaItem>, Vec<QaItem>) =
        items.iter().cloned().partition(|i| pool_windows.contains(i.window_id()));
    Ok((eval, pool))
}
