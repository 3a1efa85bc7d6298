use serde::{Deserialize, Serialize};

use super::context::AgentContext;
use super::provider::{complete_with_retry, AgentProvider, ProviderError, Request, RetryPolicy, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackLevel {
    Compile,
    Verify,
    Benchmark,
}

impl FeedbackLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackLevel::Compile => "compile",
            FeedbackLevel::Verify => "verify",
            FeedbackLevel::Benchmark => "benchmark",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub level: FeedbackLevel,
    pub strategy_summary: String,
    pub top_improvement: String,
    pub root_cause: Option<String>,
}

impl Feedback {
    pub fn render(&self) -> String {
        let mut s = format!(
            "level: {}\nstrategy: {}\nimprovement: {}\n",
            self.level.as_str(),
            self.strategy_summary,
            self.top_improvement
        );
        if let Some(rc) = &self.root_cause {
            s += &format!("root_cause: {rc}\n");
        }
        s
    }
}

/// Parse a `strategy:` / `improvement:` / `root_cause:` response. Unlabeled
/// responses fall back to the first nonblank line as the improvement.
pub fn parse_feedback(text: &str, level: FeedbackLevel, has_diagnostics: bool) -> Feedback {
    let field = |keys: &[&str]| {
        text.lines().find_map(|l| {
            let l = l.trim().trim_start_matches(['-', '*']).trim();
            let (k, v) = l.split_once(':')?;
            let k = k.trim().to_ascii_lowercase().replace([' ', '-'], "_");
            keys.contains(&k.as_str())
                .then(|| v.trim().to_string())
                .filter(|v| !v.is_empty())
        })
    };
    let first_line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_string();
    let strategy_summary = field(&["strategy", "strategy_summary"]).unwrap_or_default();
    let top_improvement = field(&["improvement", "top_improvement"]).unwrap_or(first_line);
    let root_cause = if has_diagnostics {
        field(&["root_cause", "cause"])
    } else {
        None
    };
    Feedback {
        level,
        strategy_summary,
        top_improvement,
        root_cause,
    }
}

fn prompt(source: &str, diagnostics: &str, level: FeedbackLevel, ctx: &AgentContext, purpose: &str) -> String {
    let mut p = format!("{purpose}\nEvaluation level: {}\n\n", level.as_str());
    p += "Correctness rules:\n";
    for r in &ctx.correctness_rules {
        p += &format!("- {r}\n");
    }
    p += &format!("\nDiagnostics:\n{diagnostics}\n");
    p += &format!("\nCandidate source:\n{source}\n");
    p += "\nReply with lines `strategy: ...`, `improvement: ...` (one suggestion) and `root_cause: ...`.\n";
    p
}

/// Diagnose a failed (or benchmarked) candidate.
pub fn judge(
    source: &str,
    diagnostics: &str,
    level: FeedbackLevel,
    ctx: &AgentContext,
    provider: &dyn AgentProvider,
    channel: &str,
    retry: RetryPolicy,
) -> Result<Feedback, ProviderError> {
    call(
        Role::Judge,
        "Identify the root cause of this failure and give corrective feedback.",
        source,
        diagnostics,
        level,
        ctx,
        provider,
        channel,
        retry,
    )
}

/// Cascade feedback: summarize the strategy and the single highest-impact
/// improvement at whichever level evaluation stopped.
#[allow(clippy::too_many_arguments)]
pub fn cascade_feedback(
    source: &str,
    diagnostics: &str,
    level: FeedbackLevel,
    ctx: &AgentContext,
    provider: &dyn AgentProvider,
    channel: &str,
    retry: RetryPolicy,
) -> Result<Feedback, ProviderError> {
    call(
        Role::Feedback,
        "Summarize this candidate's strategy and its single highest-impact improvement.",
        source,
        diagnostics,
        level,
        ctx,
        provider,
        channel,
        retry,
    )
}

#[allow(clippy::too_many_arguments)]
fn call(
    role: Role,
    purpose: &str,
    source: &str,
    diagnostics: &str,
    level: FeedbackLevel,
    ctx: &AgentContext,
    provider: &dyn AgentProvider,
    channel: &str,
    retry: RetryPolicy,
) -> Result<Feedback, ProviderError> {
    let text = prompt(source, diagnostics, level, ctx, purpose);
    let req = Request {
        role,
        channel,
        prompt: &text,
        temperature: 0.0,
    };
    let resp = complete_with_retry(provider, &req, retry)?;
    Ok(parse_feedback(&resp, level, !diagnostics.trim().is_empty()))
}
