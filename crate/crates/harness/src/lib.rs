//! OTB-style benchmark harness for the `mfst-core` tracker: sequence
//! ingestion, one-pass evaluation, precision/success metrics, result files,
//! synthetic datasets and the fusion-strategy ablation grid.

pub mod ablation;
pub mod emit;
mod error;
pub mod metrics;
pub mod ope;
pub mod sequence;
pub mod synth;

pub use ablation::{run_ablation, AblationReport, AblationRow};
pub use emit::emit_results;
pub use error::{HarnessError, Result};
pub use metrics::{frame_metrics, precision_curve, success_curve, EvalResult};
pub use ope::{
    run_ope, run_ope_entries, track_sequence, Aggregate, OpeConfig, OpeReport, SequenceOutcome,
};
pub use sequence::{load_dataset, load_frame, load_sequence, SequenceRecord};
pub use synth::{SyntheticSequence, SyntheticSpec};
