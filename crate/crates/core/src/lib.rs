//! Validation, repair and execution of LLM-written planning scripts for
//! modular visual question answering.
//!
//! A planning script is a line-oriented program such as
//!
//! ```text
//! BOX0=LOC(image=IMAGE,object='grass')
//! IMAGE0=CROP(image=IMAGE,box=BOX0)
//! ANSWER0=VQA(image=IMAGE0,question='Is the grass tall?')
//! ANSWER1=EVAL(expr='not {ANSWER0}')
//! FINAL_ANSWER=RESULT(var=ANSWER1)
//! ```
//!
//! [`planner`] asks an LLM for one, [`ssparser`] checks and repairs it,
//! [`executor`] runs it against the model backends in [`gateway`], and
//! [`verifier`] cross-checks the answer against an image caption.

pub mod bench;
pub mod config;
pub mod executor;
pub mod expr;
pub mod gateway;
pub mod lexicon;
pub mod pipeline;
pub mod planner;
pub mod report;
pub mod script;
pub mod ssparser;
pub mod task;
pub mod value;
pub mod verifier;

pub use script::{parse_script, parse_step, render_script, ArgValue, Instruction, Script};
pub use task::TaskKind;
pub use value::{BBox, Env, ImageRef, Value};
