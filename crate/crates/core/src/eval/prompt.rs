use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::qa::{QaFormat, QaItem};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    ZeroShot,
    FewShot,
    Cot,
    FewShotCot,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::ZeroShot, Strategy::FewShot, Strategy::Cot, Strategy::FewShotCot];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::FewShot => "few_shot",
            Strategy::Cot => "cot",
            Strategy::FewShotCot => "few_shot_cot",
        }
    }

    pub fn uses_shots(self) -> bool {
        matches!(self, Strategy::FewShot | Strategy::FewShotCot)
    }

    pub fn uses_reasoning(self) -> bool {
        matches!(self, Strategy::Cot | Strategy::FewShotCot)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '+', ' '], "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == key)
            .ok_or_else(|| Error::Argument(format!("unknown strategy {s:?} (zero_shot, few_shot, cot, few_shot_cot)")))
    }
}

pub const SYSTEM_TF: &str = "You are a CAN bus intrusion-detection analyst. Study timestamp ordering, ID frequency, payload stability, byte ranges, and gaps between frames. Use those characteristics together with the statement to determine whether it is true or false. Respond with True or False only.";

pub const SYSTEM_MCQ: &str = "You are a CAN bus intrusion-detection analyst. Study timestamp ordering, ID frequency, payload stability, byte ranges, and gaps between frames. Use those characteristics together with the question to choose the single best option. Respond with A, B, C, or D only.";

pub const COT_INSTRUCTION: &str = "Explain your reasoning step by step before giving the final answer.";

/// Starts every rendered window block; the last occurrence in a user prompt
/// begins the target item.
pub const WINDOW_MARKER: &str = "CAN window:\n";

fn preamble(format: QaFormat) -> &'static str {
    match format {
        QaFormat::Tf => "Below is a CAN bus time window. Review the sequence carefully, note anomalies or missing identifiers, and reason about the statement.",
        QaFormat::Mcq => "Below is a CAN bus time window. Review the sequence carefully, note anomalies or missing identifiers, and reason about the question.",
    }
}

pub fn answer_line(format: QaFormat) -> &'static str {
    match format {
        QaFormat::Tf => "Answer: True or False",
        QaFormat::Mcq => "Answer: A, B, C, or D",
    }
}

/// Window, question and options of one item, without the answer line.
pub fn item_block(item: &QaItem) -> String {
    let mut s = String::with_capacity(item.context.len() + 512);
    s.push_str(WINDOW_MARKER);
    s.push_str(&item.context);
    match item.format {
        QaFormat::Tf => {
            s.push_str("\n\nStatement:\n");
            s.push_str(&item.question);
        }
        QaFormat::Mcq => {
            s.push_str("\n\nQuestion:\n");
            s.push_str(&item.question);
            s.push_str("\n\nOptions:");
            for option in item.options.iter().flatten() {
                s.push('\n');
                s.push_str(option);
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub strategy: Strategy,
    /// Question ids of the embedded examples.
    pub shots: Vec<String>,
}

/// Assemble the prompt for `item`.
///
/// Few-shot strategies embed every shot given; shots must come from windows
/// other than the item's.
pub fn build_prompt(item: &QaItem, strategy: Strategy, shots: &[QaItem]) -> Result<PromptBundle> {
    if let Some(shot) = shots.iter().find(|s| s.window_id() == item.window_id()) {
        return Err(Error::Leakage { qa_id: shot.qa_id.clone(), window_id: shot.window_id().to_string() });
    }
    if !strategy.uses_shots() && !shots.is_empty() {
        return Err(Error::Argument(format!("strategy {strategy} takes no examples")));
    }
    let system_text = match item.format {
        QaFormat::Tf => SYSTEM_TF,
        QaFormat::Mcq => SYSTEM_MCQ,
    };

    let mut user = String::new();
    user.push_str(preamble(item.format));
    for (i, shot) in shots.iter().enumerate() {
        user.push_str(&format!("\n\nExample {}:\n", i + 1));
        user.push_str(&item_block(shot));
        if strategy == Strategy::FewShotCot {
            user.push_str("\n\nReasoning: ");
            user.push_str(&shot.meta.rationale);
        }
        user.push_str("\n\nAnswer: ");
        user.push_str(&shot.answer);
    }
    if !shots.is_empty() {
        user.push_str("\n\nNow the target window.");
    }
    user.push_str("\n\n");
    user.push_str(&item_block(item));
    user.push_str("\n\n");
    user.push_str(answer_line(item.format));
    if strategy.uses_reasoning() {
        user.push('\n');
        user.push_str(COT_INSTRUCTION);
    }

    Ok(PromptBundle {
        system_text: system_text.to_string(),
        user_text: user,
        strategy,
        shots: shots.iter().map(|s| s.qa_id.clone()).collect(),
    })
}

/// Seeded choice of `k` examples of the item's format from windows other
/// than the item's.
pub fn select_shots<'a>(item: &QaItem, pool: &'a [QaItem], k: usize, seed: u64) -> Result<Vec<&'a QaItem>> {
    let candidates: Vec<&QaItem> =
        pool.iter().filter(|p| p.format == item.format && p.window_id() != item.window_id()).collect();
    if candidates.len() < k {
        return Err(Error::Split(format!(
            "few-shot pool has {} {} examples usable for {}, need {k}",
            candidates.len(),
            item.format,
            item.qa_id
        )));
    }
    let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, &["shots", &item.qa_id]));
    Ok(candidates.choose_multiple(&mut rng, k).copied().collect())
}
