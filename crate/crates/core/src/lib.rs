//! Causal-CoG decoding: sample image-description contexts from a multimodal
//! model, keep them only when their indirect effect on the answer exceeds the
//! image's direct effect, and aggregate context-conditioned answers with a
//! TIE^c-weighted top-k vote.

pub mod aggregation;
pub mod backend;
pub mod effects;
pub mod error;
pub mod harness;
pub mod pipeline;
pub mod prompt;
pub mod scoring;

pub use aggregation::{aggregate, AggregationConfig, AggregationResult, Candidate, Strategy};
pub use backend::{open_backend, Backend, BackendDescriptor, BackendKind, SamplingParams};
pub use effects::{jsd, AnswerDistribution, CausalEffects, FilterDecision, Verdict};
pub use error::{Error, Result};
pub use harness::{diagnose, evaluate, load_dataset, EvalReport, Sample};
pub use pipeline::{Engine, Method, ModeUsed, PipelineConfig, SampleOutcome};
pub use prompt::{Prompt, PromptBuilder, PromptLibrary, PromptTemplate};
pub use scoring::{OptionSet, TokenScore};
