//! LLM provider abstraction and the context, judging, feedback and
//! meta-summarization steps built on it.

pub mod context;
pub mod feedback;
pub mod hardware;
pub mod meta;
pub mod provider;

pub use context::{assemble_context, AgentContext, ContextError, Document};
pub use feedback::{cascade_feedback, judge, parse_feedback, Feedback, FeedbackLevel};
pub use hardware::{extract_hardware_context, ArchTable, HardwareContext, HarnessProfile, Placement};
pub use meta::{meta_summarize, CandidateDigest, MetaRecommendations};
pub use provider::{
    complete_with_retry, AgentProvider, MockProvider, MockScript, ProviderError, RemoteConfig, RemoteProvider, Request,
    RetryPolicy, Role, ScriptRule,
};
