//! CAN traffic question-answering benchmark toolchain.
//!
//! The pipeline turns raw Controller Area Network logs into a reproducible
//! question-answering dataset and scores language models against it:
//!
//! 1. [`frame`] parses Car Hacking style logs into a chronologically ordered
//!    [`frame::FrameStream`].
//! 2. [`window`] cuts streams into fixed-length [`window::Window`]s and renders
//!    them as text contexts.
//! 3. [`baseline`] learns percentile thresholds and expectation sets from
//!    attack-free traffic.
//! 4. [`features`] measures every per-window quantity the question templates
//!    consume.
//! 5. [`qa`] instantiates the ten category templates into True/False and
//!    multiple-choice items with computed ground truth.
//! 6. [`store`] persists datasets, manifests and few-shot splits.
//! 7. [`eval`] builds prompts, talks to a chat-completion endpoint, parses
//!    answers and aggregates accuracy.
//!
//! [`pipeline`] wires the stages together the way the `canqa` binary runs them.

pub mod baseline;
pub mod config;
pub mod digest;
pub mod error;
pub mod eval;
pub mod features;
pub mod frame;
pub mod ids;
pub mod pipeline;
pub mod qa;
pub mod sim;
pub mod stats;
pub mod store;
pub mod window;

pub use baseline::{build_baseline, BaselineStats};
pub use config::{RunConfig, Thresholds};
pub use error::{Error, Result};
pub use features::{extract_features, WindowFeatures};
pub use frame::{parse_log, AttackLabel, CanFrame, Flag, FormatHint, FrameStream, Timestamp};
pub use qa::{generate_dataset, Plan, QaFormat, QaItem, Template};
pub use window::{render_context, segment, Window};
