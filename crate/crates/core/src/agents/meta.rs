//! Periodic cross-generation summarizer: digest, scratchpad update, ranked
//! recommendations. Each step is a separate provider call that sees the
//! previous step's output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::provider::{complete_with_retry, AgentProvider, ProviderError, Request, RetryPolicy, Role};
use crate::program::MutationForm;

/// Compact view of one evaluated candidate for summarization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDigest {
    pub id: String,
    pub generation: u32,
    pub island: u32,
    pub form: Option<MutationForm>,
    pub level: String,
    pub score: f64,
    pub backend: String,
    pub issuer: String,
    pub placement: String,
    pub strategy: String,
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaRecommendations {
    pub digest: String,
    pub scratchpad: String,
    pub recommendations: Vec<String>,
}

impl MetaRecommendations {
    pub fn render(&self) -> String {
        if self.recommendations.is_empty() {
            return String::new();
        }
        let mut s = String::from("Recommended directions (ranked):\n");
        for (i, r) in self.recommendations.iter().enumerate() {
            s += &format!("{}. {r}\n", i + 1);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormStats {
    pub count: usize,
    pub viable: usize,
    pub mean_score: f64,
    pub max_score: f64,
}

pub fn form_stats(recent: &[CandidateDigest]) -> BTreeMap<MutationForm, FormStats> {
    let mut out: BTreeMap<MutationForm, FormStats> = BTreeMap::new();
    for c in recent {
        let Some(form) = c.form else { continue };
        let s = out.entry(form).or_insert(FormStats {
            count: 0,
            viable: 0,
            mean_score: 0.0,
            max_score: 0.0,
        });
        s.mean_score = (s.mean_score * s.count as f64 + c.score) / (s.count + 1) as f64;
        s.count += 1;
        s.viable += usize::from(c.score > 0.0);
        s.max_score = s.max_score.max(c.score);
    }
    out
}

/// Statistics header computed locally and prefixed to the digest prompt.
pub fn batch_statistics(recent: &[CandidateDigest]) -> String {
    let mut s = format!("candidates: {}\n", recent.len());
    if recent.is_empty() {
        return s;
    }
    let best = recent.iter().map(|c| c.score).fold(0.0, f64::max);
    let viable = recent.iter().filter(|c| c.score > 0.0).count();
    s += &format!("viable: {viable}\nbest score: {best:.4}\n");
    let stats = form_stats(recent);
    for (form, st) in &stats {
        s += &format!(
            "form {form}: n={} viable={} mean={:.4} max={:.4}\n",
            st.count, st.viable, st.mean_score, st.max_score
        );
    }
    if let Some((form, _)) = stats
        .iter()
        .max_by(|a, b| a.1.mean_score.total_cmp(&b.1.mean_score).then(b.0.cmp(a.0)))
    {
        s += &format!("best form: {form}\n");
    }
    s
}

fn batch_table(recent: &[CandidateDigest]) -> String {
    let mut s = String::new();
    for c in recent {
        s += &format!(
            "- {} g{} i{} form={} level={} score={:.4} {}/{} placement=\"{}\" strategy={}",
            c.id,
            c.generation,
            c.island,
            c.form.map_or("seed", |f| f.as_str()),
            c.level,
            c.score,
            c.backend,
            c.issuer,
            c.placement,
            c.strategy
        );
        if let Some(f) = &c.feedback {
            s += &format!(" feedback=\"{}\"", f.replace('\n', " "));
        }
        s.push('\n');
    }
    s
}

/// Numbered (`1.`, `2)`) or bulleted lines, in order.
pub fn parse_recommendations(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| {
            let l = l.trim();
            let rest = if let Some(r) = l.strip_prefix(['-', '*']) {
                r
            } else {
                let digits = l.len() - l.trim_start_matches(|c: char| c.is_ascii_digit()).len();
                if digits == 0 {
                    return None;
                }
                l[digits..].strip_prefix(['.', ')'])?
            };
            let rest = rest.trim();
            (!rest.is_empty()).then(|| rest.to_string())
        })
        .collect()
}

pub fn meta_summarize(
    recent: &[CandidateDigest],
    scratchpad: &str,
    provider: &dyn AgentProvider,
    retry: RetryPolicy,
) -> Result<MetaRecommendations, ProviderError> {
    let stats = batch_statistics(recent);
    if recent.is_empty() {
        return Ok(MetaRecommendations {
            digest: format!("No candidates in this batch.\n{stats}"),
            scratchpad: scratchpad.to_string(),
            recommendations: Vec::new(),
        });
    }
    let ask = |role: Role, prompt: String| {
        complete_with_retry(
            provider,
            &Request {
                role,
                channel: "meta",
                prompt: &prompt,
                temperature: 0.0,
            },
            retry,
        )
    };
    let summary = ask(
        Role::MetaSummarize,
        format!(
            "Summarize this batch of evaluated candidates: scores, mutation forms, architectural choices, feedback.\n\nStatistics:\n{stats}\nCandidates:\n{}",
            batch_table(recent)
        ),
    )?;
    let digest = format!("{stats}\n{}", summary.trim_end());
    let update = ask(
        Role::MetaUpdate,
        format!("Current scratchpad:\n{scratchpad}\n\nNew digest:\n{digest}\n\nWrite the scratchpad update: persistent patterns worth keeping."),
    )?;
    let mut pad = scratchpad.trim_end().to_string();
    if !pad.is_empty() {
        pad.push_str("\n\n");
    }
    pad.push_str(update.trim());
    pad.push('\n');
    let recs = ask(
        Role::MetaRecommend,
        format!("Scratchpad:\n{pad}\nDigest:\n{digest}\n\nList concrete optimization directions, best first, one per numbered line."),
    )?;
    Ok(MetaRecommendations {
        digest,
        scratchpad: pad,
        recommendations: parse_recommendations(&recs),
    })
}
