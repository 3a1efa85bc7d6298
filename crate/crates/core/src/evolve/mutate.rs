use std::sync::Arc;

use super::diff::{apply_diff, looks_like_patch};
use super::params::Phase;
use super::EvolveError;
use crate::agents::{
    complete_with_retry, AgentContext, AgentProvider, MetaRecommendations, Request, RetryPolicy, Role,
};
use crate::blocks::{block_bodies, find_blocks, frozen_skeleton, START_MARKER};
use crate::directive::{contains_directive, parse_directive, render_directive, OptimizationDirective};
use crate::program::MutationForm;
use crate::store::Candidate;

/// Everything a mutation prompt is built from.
pub struct MutationContext<'a> {
    pub parent: &'a Candidate,
    pub inspirations: &'a [Arc<Candidate>],
    pub neighbours: &'a [(Arc<Candidate>, f64)],
    pub meta: Option<&'a MetaRecommendations>,
    pub ctx: &'a AgentContext,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Offspring {
    pub source: String,
    pub directive: OptimizationDirective,
    pub form: MutationForm,
}

fn form_instructions(form: MutationForm) -> &'static str {
    match form {
        MutationForm::Diff => {
            "Make a small, localized edit. Reply with an edit script (`@@ replace a-b`, `@@ insert n`, `@@ delete a-b`, `@@ block i` or SEARCH/REPLACE hunks) using the parent's line numbers."
        }
        MutationForm::Rewrite => {
            "Restructure the code inside the evolve blocks. Reply with the complete program; text outside the blocks must stay byte-identical."
        }
        MutationForm::Crossover => {
            "Combine the strongest ideas of the parent and the inspiration programs. Reply with the complete program; text outside the blocks must stay byte-identical."
        }
    }
}

fn metrics(c: &Candidate) -> String {
    let r = &c.result;
    let mut s = format!("level: {}\nscore: {:.4}\n", r.level_reached.as_str(), r.score);
    if let (Some(b), Some(m)) = (r.best_ms, r.median_ms) {
        s += &format!("best latency: {b:.3} ms\nmedian latency: {m:.3} ms\n");
    }
    if !r.diagnostics.is_empty() {
        s += &format!("diagnostics:\n{}\n", r.diagnostics.trim_end());
    }
    s
}

fn numbered(src: &str) -> String {
    src.lines()
        .enumerate()
        .map(|(i, l)| format!("{:>4}| {l}\n", i + 1))
        .collect()
}

pub fn mutation_prompt(form: MutationForm, phase: Phase, g: u32, total: u32, mc: &MutationContext<'_>) -> String {
    let p = mc.parent;
    let d = &p.directive;
    let mut s = format!(
        "form: {form}\nphase: {} (generation {g} of {total})\n{}\n\n",
        phase.as_str(),
        form_instructions(form)
    );
    s += &format!(
        "parent backend: {}\nparent issuer: {}\nparent placement: {}\nparent sync_scope: {}\nparent chunk_size: {}\n\n",
        d.backend,
        d.issuer,
        d.placement(),
        d.sync_scope(),
        d.chunk_size()
    );
    s += &format!("Parent program {}:\n```\n{}```\n\n", p.id, numbered(&p.source));
    s += &format!("Parent metrics:\n{}\n", metrics(p));
    if let Some(f) = &p.feedback {
        s += &format!("Parent feedback:\n{}\n", f.render());
    }
    if !mc.inspirations.is_empty() {
        s += "Inspiration programs:\n";
        for c in mc.inspirations {
            s += &format!(
                "--- {} (score {:.4})\n{}```\n{}```\n",
                c.id,
                c.score(),
                render_directive(&c.directive),
                c.source
            );
        }
        s += "\n";
    }
    if !mc.neighbours.is_empty() {
        s += "Similar stored candidates:\n";
        for (c, sim) in mc.neighbours {
            s += &format!(
                "- {} similarity {sim:.3} score {:.4} placement `{}`\n",
                c.id,
                c.score(),
                c.directive.placement()
            );
        }
        s += "\n";
    }
    if let Some(m) = mc.meta {
        s += &m.render();
        s += "\n";
    }
    s += &mc.ctx.render();
    s += "\nState the offspring's optimization_directive in a ```yaml block before the code. Omit it to keep the parent's.\n";
    s
}

/// Fenced blocks as (info string, body).
pub(crate) fn fences(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut cur: Option<(String, String)> = None;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if let Some(info) = t.strip_prefix("```") {
            match cur.take() {
                Some(done) => out.push(done),
                None => cur = Some((info.trim().to_lowercase(), String::new())),
            }
        } else if let Some((_, body)) = cur.as_mut() {
            body.push_str(line);
        }
    }
    out
}

fn directive_text(response: &str, fenced: &[(String, String)]) -> Option<String> {
    if let Some((_, body)) = fenced.iter().find(|(_, b)| contains_directive(b)) {
        return Some(body.clone());
    }
    if !contains_directive(response) {
        return None;
    }
    // Unfenced: from the root key to the first blank line.
    let mut out = String::new();
    let mut on = false;
    for line in response.lines() {
        if !on && line.trim() == format!("{}:", crate::directive::ROOT_KEY) {
            on = true;
        }
        if on {
            if line.trim().is_empty() {
                break;
            }
            out += line;
            out.push('\n');
        }
    }
    Some(out)
}

/// Turn a mutation response into an offspring program and directive,
/// enforcing the block structure of `parent`.
pub fn parse_offspring(
    parent: &str,
    parent_directive: &OptimizationDirective,
    response: &str,
) -> Result<(String, OptimizationDirective), EvolveError> {
    let fenced = fences(response);
    let directive = match directive_text(response, &fenced) {
        Some(t) => parse_directive(&t).map_err(|e| EvolveError::MutationRejected(format!("directive: {e}")))?,
        None => parent_directive.clone(),
    };
    let code: Vec<&String> = fenced
        .iter()
        .filter(|(info, body)| !contains_directive(body) && info != "yaml")
        .map(|(_, b)| b)
        .collect();
    let payload = match code.as_slice() {
        [] => response.to_string(),
        [one, ..] => (*one).clone(),
    };
    let source = if looks_like_patch(&payload) {
        apply_diff(parent, &payload).map_err(|e| EvolveError::MutationRejected(e.to_string()))?
    } else if payload.contains(START_MARKER) {
        let before = frozen_skeleton(parent).map_err(|e| EvolveError::MutationRejected(e.to_string()))?;
        let after = frozen_skeleton(&payload).map_err(|e| EvolveError::MutationRejected(e.to_string()))?;
        if before != after {
            return Err(EvolveError::MutationRejected("edit touches frozen code".into()));
        }
        payload
    } else if code.is_empty() && directive != *parent_directive {
        // Directive-only response.
        parent.to_string()
    } else {
        return Err(EvolveError::MutationRejected(
            "response holds neither an edit script nor a marked program".into(),
        ));
    };
    find_blocks(&source).map_err(|e| EvolveError::MutationRejected(e.to_string()))?;
    Ok((source, directive))
}

/// Text the novelty filter embeds: the mutable regions plus the directive.
pub fn embedding_text(source: &str, directive: &OptimizationDirective) -> String {
    let mut s = block_bodies(source)
        .map(|b| b.concat())
        .unwrap_or_else(|_| source.to_string());
    s.push('\n');
    s += &render_directive(directive);
    s
}

#[allow(clippy::too_many_arguments)]
pub fn llm_mutate(
    mc: &MutationContext<'_>,
    form: MutationForm,
    phase: Phase,
    g: u32,
    total: u32,
    temperature: f64,
    provider: &dyn AgentProvider,
    channel: &str,
    retry: RetryPolicy,
) -> Result<Offspring, EvolveError> {
    let prompt = mutation_prompt(form, phase, g, total, mc);
    let response = complete_with_retry(
        provider,
        &Request {
            role: Role::Mutate,
            channel,
            prompt: &prompt,
            temperature,
        },
        retry,
    )?;
    let (source, directive) = parse_offspring(&mc.parent.source, &mc.parent.directive, &response)?;
    Ok(Offspring {
        source,
        directive,
        form,
    })
}
