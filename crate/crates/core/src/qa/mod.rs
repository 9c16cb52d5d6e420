//! Question generation: templates instantiated per window with ground truth
//! computed from window features.

mod template;

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use template::{OptionRule, QaFormat, Template, TemplateInput, MCQ_LABELS};

use crate::baseline::BaselineStats;
use crate::digest::{derive_seed, json_digest};
use crate::error::{Error, Result};
use crate::features::{extract_features, WindowFeatures};
use crate::frame::AttackLabel;
use crate::window::{render_context, Window};

pub use crate::config::PlanConfig as Plan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub window_id: String,
    pub attack_label: AttackLabel,
    pub window_index: usize,
    pub template: String,
    pub seed: u64,
    pub feature_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_index: Option<usize>,
    /// Canonical option labels in presented order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_order: Option<Vec<char>>,
    /// Measured evidence followed by the conclusion, used as a worked example.
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    /// `<window_id>:<category>:<format>`
    pub qa_id: String,
    pub category: u8,
    pub format: QaFormat,
    pub context: String,
    pub question: String,
    /// `"A. <text>"` lines in presented order; `None` for TF.
    pub options: Option<Vec<String>>,
    /// `"True"`/`"False"` or `"A"`..`"D"`.
    pub answer: String,
    pub meta: Provenance,
}

impl QaItem {
    pub fn window_id(&self) -> &str {
        &self.meta.window_id
    }

    pub fn template(&self) -> Result<Template> {
        self.meta.template.parse()
    }

    /// Canonical label of the correct option, undoing the shuffle.
    pub fn canonical_answer(&self) -> Option<char> {
        let order = self.meta.option_order.as_ref()?;
        let pos = MCQ_LABELS.iter().position(|l| self.answer.starts_with(*l))?;
        order.get(pos).copied()
    }

    /// Option text without its label prefix, by presented label.
    pub fn option_text(&self, label: char) -> Option<&str> {
        let pos = MCQ_LABELS.iter().position(|l| *l == label)?;
        self.options.as_ref()?.get(pos).map(|o| o.get(3..).unwrap_or(""))
    }

    /// Structural checks: option count by format and answer in the label set.
    pub fn validate(&self) -> Result<()> {
        let ok_options = match (self.format, &self.options) {
            (QaFormat::Tf, None) => true,
            (QaFormat::Mcq, Some(o)) => o.len() == 4,
            _ => false,
        };
        if !ok_options || !self.format.labels().contains(&self.answer.as_str()) {
            return Err(Error::Integrity(format!("malformed item {}", self.qa_id)));
        }
        Ok(())
    }
}

pub fn qa_id(window_id: &str, category: u8, format: QaFormat) -> String {
    format!("{window_id}:{category}:{format}")
}

/// Frame index whose flag a hidden-flag question masks. Depends only on the
/// seed and the window id.
pub fn masked_index(seed: u64, window_id: &str, window_len: usize) -> usize {
    let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, &["mask", window_id]));
    rng.random_range(0..window_len)
}

/// Instantiate one template for one window.
///
/// MCQ templates whose conditions are not satisfied by exactly one option
/// fail with [`Error::Exclusivity`].
pub fn generate_item(
    template: Template,
    window: &Window,
    features: &WindowFeatures,
    baseline: &BaselineStats,
    seed: u64,
) -> Result<QaItem> {
    let thresholds = baseline.thresholds();
    let masked = template.masks_flag().then(|| masked_index(seed, &window.window_id, window.len()));
    let input = TemplateInput { window, features, baseline, masked_index: masked };
    let evidence = template.evidence(&input);

    let (options, answer, option_order, conclusion) = match template.format() {
        QaFormat::Tf => {
            let truth = template.tf_truth(&input).expect("TF template has a truth value");
            let answer = if truth { "True" } else { "False" };
            (None, answer.to_string(), None, format!("So the statement is {answer}."))
        }
        QaFormat::Mcq => {
            let mut rules = template.option_rules(thresholds);
            let satisfied: Vec<char> =
                rules.iter().filter(|r| (r.condition)(features, thresholds)).map(|r| r.label).collect();
            if satisfied.len() != 1 {
                return Err(Error::Exclusivity {
                    template: template.name().to_string(),
                    window_id: window.window_id.clone(),
                    satisfied,
                });
            }
            let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, &["options", &window.window_id, template.name()]));
            rules.shuffle(&mut rng);
            let pos = rules.iter().position(|r| r.label == satisfied[0]).expect("satisfied rule present");
            let answer = MCQ_LABELS[pos];
            let options = rules.iter().zip(MCQ_LABELS).map(|(r, l)| format!("{l}. {}", r.text)).collect();
            let order = rules.iter().map(|r| r.label).collect();
            (
                Some(options),
                answer.to_string(),
                Some(order),
                format!("Only option {answer} matches, so the answer is {answer}."),
            )
        }
    };

    let context = render_context(window, masked)?.text;
    Ok(QaItem {
        qa_id: qa_id(&window.window_id, template.category(), template.format()),
        category: template.category(),
        format: template.format(),
        context,
        question: template.question(thresholds),
        options,
        answer,
        meta: Provenance {
            window_id: window.window_id.clone(),
            attack_label: window.attack_label,
            window_index: window.index,
            template: template.name().to_string(),
            seed,
            feature_digest: json_digest(features),
            masked_index: masked,
            option_order,
            rationale: format!("{evidence} {conclusion}"),
        },
    })
}

fn generate_for_category(
    format: QaFormat,
    window: &Window,
    features: &WindowFeatures,
    baseline: &BaselineStats,
    category: u8,
    seed: u64,
) -> Result<QaItem> {
    let template = Template::for_category(category, format)
        .ok_or_else(|| Error::Argument(format!("category {category} has no {format} template")))?;
    generate_item(template, window, features, baseline, seed)
}

/// True/False question for `category` (1 to 10).
pub fn generate_tf(
    window: &Window,
    features: &WindowFeatures,
    baseline: &BaselineStats,
    category: u8,
    seed: u64,
) -> Result<QaItem> {
    generate_for_category(QaFormat::Tf, window, features, baseline, category, seed)
}

/// Multiple-choice question for `category` (1 to 10).
pub fn generate_mcq(
    window: &Window,
    features: &WindowFeatures,
    baseline: &BaselineStats,
    category: u8,
    seed: u64,
) -> Result<QaItem> {
    generate_for_category(QaFormat::Mcq, window, features, baseline, category, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub window_id: String,
    pub template: String,
    /// Canonical labels whose condition held (zero or several).
    pub satisfied: Vec<char>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FormatCounts {
    #[serde(rename = "TF")]
    pub tf: usize,
    #[serde(rename = "MCQ")]
    pub mcq: usize,
}

impl FormatCounts {
    fn add(&mut self, format: QaFormat) {
        match format {
            QaFormat::Tf => self.tf += 1,
            QaFormat::Mcq => self.mcq += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub windows: usize,
    pub items: usize,
    pub per_format: FormatCounts,
    pub per_attack: BTreeMap<AttackLabel, FormatCounts>,
    pub per_category: BTreeMap<u8, FormatCounts>,
    pub per_template: BTreeMap<String, usize>,
    pub skip_counts: BTreeMap<String, usize>,
    pub skips: Vec<SkipRecord>,
    /// Items removed so every attack label has equal TF and MCQ counts.
    pub dropped_for_balance: Vec<String>,
}

struct WindowOutput {
    items: Vec<QaItem>,
    skips: Vec<SkipRecord>,
}

fn generate_window(
    window: &Window,
    baseline: &BaselineStats,
    plan: &Plan,
    seed: u64,
    rotations: &[(QaFormat, Vec<Template>)],
) -> Result<WindowOutput> {
    let features = extract_features(window, baseline)?;
    let mut out = WindowOutput { items: Vec::new(), skips: Vec::new() };
    for (_, rotation) in rotations {
        let mut used = BTreeSet::new();
        for slot in 0..plan.per_window {
            let start = (window.index * plan.per_window + slot) % rotation.len();
            for step in 0..rotation.len() {
                let template = rotation[(start + step) % rotation.len()];
                if used.contains(&template.category()) {
                    continue;
                }
                match generate_item(template, window, &features, baseline, seed) {
                    Ok(item) => {
                        used.insert(template.category());
                        out.items.push(item);
                        break;
                    }
                    Err(Error::Exclusivity { template, window_id, satisfied }) => {
                        debug!("{window_id}: {template} skipped, satisfied options {satisfied:?}");
                        out.skips.push(SkipRecord { window_id, template, satisfied });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(out)
}

fn item_order(item: &QaItem) -> (AttackLabel, usize, u8, QaFormat) {
    (item.meta.attack_label, item.meta.window_index, item.category, item.format)
}

/// Generate the dataset for `windows`.
///
/// Each window gets `plan.per_window` questions per format. Templates rotate
/// by window index; an MCQ template that is not exclusive for a window is
/// recorded as a skip and the next template in the rotation is tried. Output
/// order is (attack label, window index, category, format) for any thread
/// count.
pub fn generate_dataset(
    windows: &[Window],
    baseline: &BaselineStats,
    plan: &Plan,
    seed: u64,
) -> Result<(Vec<QaItem>, GenerationReport)> {
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if plan.per_window == 0 {
        return Err(Error::Config("plan.per_window must be at least 1".to_string()));
    }
    let rotations: Vec<(QaFormat, Vec<Template>)> =
        [QaFormat::Tf, QaFormat::Mcq].into_iter().map(|f| (f, Template::rotation(f, plan.both_formats))).collect();

    let run = || -> Result<Vec<WindowOutput>> {
        windows.par_iter().map(|w| generate_window(w, baseline, plan, seed, &rotations)).collect()
    };
    let outputs = if plan.parallelism == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(plan.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(run)?
    };

    let mut report = GenerationReport { windows: windows.len(), ..Default::default() };
    let mut items = Vec::new();
    for out in outputs {
        items.extend(out.items);
        report.skips.extend(out.skips);
    }
    items.sort_by_key(item_order);
    report.skips.sort_by(|a, b| (&a.window_id, &a.template).cmp(&(&b.window_id, &b.template)));

    let mut seen = BTreeSet::new();
    if let Some(dup) = items.iter().find(|i| !seen.insert(i.qa_id.as_str())) {
        return Err(Error::Integrity(format!("duplicate question id {}", dup.qa_id)));
    }

    let items = balance(items, &mut report.dropped_for_balance);

    for skip in &report.skips {
        *report.skip_counts.entry(skip.template.clone()).or_default() += 1;
    }
    for item in &items {
        report.per_format.add(item.format);
        report.per_attack.entry(item.meta.attack_label).or_default().add(item.format);
        report.per_category.entry(item.category).or_default().add(item.format);
        *report.per_template.entry(item.meta.template.clone()).or_default() += 1;
    }
    report.items = items.len();
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((items, report))
}

/// Drop trailing items of the larger format per attack label until TF and
/// MCQ counts match.
fn balance(items: Vec<QaItem>, dropped: &mut Vec<String>) -> Vec<QaItem> {
    let mut counts: BTreeMap<AttackLabel, FormatCounts> = BTreeMap::new();
    for item in &items {
        counts.entry(item.meta.attack_label).or_default().add(item.format);
    }
    let mut excess: BTreeMap<(AttackLabel, QaFormat), usize> = BTreeMap::new();
    for (label, c) in &counts {
        if c.tf > c.mcq {
            excess.insert((*label, QaFormat::Tf), c.tf - c.mcq);
        } else if c.mcq > c.tf {
            excess.insert((*label, QaFormat::Mcq), c.mcq - c.tf);
        }
    }
    if excess.is_empty() {
        return items;
    }
    let mut keep = vec![true; items.len()];
    for (i, item) in items.iter().enumerate().rev() {
        if let Some(n) = excess.get_mut(&(item.meta.attack_label, item.format)) {
            if *n > 0 {
                *n -= 1;
                keep[i] = false;
                dropped.push(item.qa_id.clone());
            }
        }
    }
    dropped.reverse();
    items.into_iter().zip(keep).filter_map(|(item, k)| k.then_some(item)).collect()
}
