use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::train::RunRecord;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("unsupported rate: cannot decimate {from} Hz to {to} Hz by an integer factor")]
    UnsupportedRate { from: f64, to: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("class {class} has {count} windows; at least {required} are needed")]
    Stratification {
        class: usize,
        count: usize,
        required: usize,
    },
    #[error("misuse: {0}")]
    Misuse(String),
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("repeat {failed_run} failed after {} completed run(s): {source}", completed.len())]
    RepeatAborted {
        failed_run: usize,
        completed: Vec<RunRecord>,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}
