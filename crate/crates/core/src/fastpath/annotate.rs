use super::stages::extract_code;
use super::{FastpathConfig, FastpathError, FASTPATH_CHANNEL};
use crate::agents::{complete_with_retry, AgentProvider, Request, Role};
use crate::analyzer::{render_graph, scan_source, CommGraph, ConstructKind};
use crate::blocks::{find_blocks, fixup_markers, is_marker_line, split_lines, strip_markers, wrap_regions};
use crate::source::{has_identifier, MaskedSource};

/// What must stay outside every evolve block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenRules {
    /// Functions whose name starts with one of these are frozen.
    pub function_prefixes: Vec<String>,
    /// Lines calling one of these are frozen.
    pub io_calls: Vec<String>,
}

impl Default for FrozenRules {
    fn default() -> Self {
        Self {
            function_prefixes: ["verify", "check", "print", "main"].map(String::from).to_vec(),
            io_calls: [
                "printf",
                "fprintf",
                "puts",
                "cout",
                "cerr",
                "fopen",
                "fwrite",
                "fread",
                "fclose",
                "write_output",
                "read_input",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

impl FrozenRules {
    pub fn frozen_function(&self, name: &str) -> bool {
        let lower = name.to_ascii_lowercase();
        self.function_prefixes.iter().any(|p| lower.starts_with(p.as_str()))
    }

    pub fn io_line(&self, line: &str) -> bool {
        self.io_calls.iter().any(|c| has_identifier(line, c))
    }
}

const DEVICE_COMM_TOKENS: &[&str] = &["ncclGin", "ncclGetLsaPointer", "ncclLsaBarrierSession"];
const DEVICE_COMM_CALLS: &[&str] = &[".put(", ".waitSignal(", ".flush(", ".signal("];

fn has_device_comm(masked: &str) -> bool {
    DEVICE_COMM_TOKENS.iter().any(|t| has_identifier(masked, t)) || DEVICE_COMM_CALLS.iter().any(|t| masked.contains(t))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub source: String,
    /// Inclusive 1-based line ranges of the unannotated source.
    pub regions: Vec<(usize, usize)>,
    pub llm_regions: usize,
    /// Unmatched markers were dropped from the LLM output.
    pub repaired: bool,
}

/// Frozen 1-based lines: denylisted function spans and I/O lines.
fn frozen_lines(src: &str, rules: &FrozenRules) -> Vec<bool> {
    let m = MaskedSource::new(src);
    let n = m.line_count();
    let mut frozen = vec![false; n + 2];
    for f in m.functions().iter().filter(|f| rules.frozen_function(&f.name)) {
        let start = m.line_of(f.signature.start);
        let end = f.end_line.min(n);
        if start <= end {
            frozen[start..=end].fill(true);
        }
    }
    for (i, line) in m.masked().lines().enumerate() {
        if rules.io_line(line) {
            frozen[i + 1] = true;
        }
    }
    frozen
}

/// Pattern pass: the body of every device function with communication
/// call sites, and each host run of kernel launches that includes a
/// launch of such a function.
pub fn heuristic_regions(src: &str, rules: &FrozenRules) -> Vec<(usize, usize)> {
    let m = MaskedSource::new(src);
    let masked = m.masked();
    let frozen = frozen_lines(src, rules);
    let funcs = m.functions();
    let comm_kernels: Vec<&str> = funcs
        .iter()
        .filter(|f| f.device && has_device_comm(&masked[f.body.clone()]))
        .map(|f| f.name.as_str())
        .collect();
    let mut regions = Vec::new();
    for f in funcs.iter().filter(|f| comm_kernels.contains(&f.name.as_str())) {
        let (s, e) = (m.line_of(f.body.start) + 1, m.line_of(f.body.end - 1) - 1);
        if s <= e && !(s..=e).any(|l| frozen[l]) {
            regions.push((s, e));
        }
    }
    let launches: Vec<_> = scan_source(src)
        .unwrap_or_default()
        .into_iter()
        .filter(|c| c.kind == ConstructKind::KernelLaunch)
        .collect();
    for f in funcs.iter().filter(|f| !f.device && !rules.frozen_function(&f.name)) {
        let mine: Vec<_> = launches
            .iter()
            .filter(|c| c.function.as_deref() == Some(f.name.as_str()))
            .collect();
        let mut run: Vec<&crate::analyzer::SourceConstruct> = Vec::new();
        let mut flush = |run: &mut Vec<&crate::analyzer::SourceConstruct>| {
            if run.iter().any(|c| comm_kernels.contains(&c.name.as_str())) {
                regions.push((run[0].start_line, run[run.len() - 1].line));
            }
            run.clear();
        };
        for c in mine {
            if frozen[c.start_line..=c.line].iter().any(|&x| x) {
                flush(&mut run);
                continue;
            }
            if let Some(prev) = run.last() {
                if (prev.line + 1..c.start_line).any(|l| frozen[l]) {
                    flush(&mut run);
                }
            }
            run.push(c);
        }
        flush(&mut run);
    }
    regions.sort_unstable();
    regions
}

/// Block ranges of a marked program, in the line numbering of the same
/// program with markers removed.
fn regions_of(marked: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut n = 0;
    let mut start = None;
    for line in split_lines(marked) {
        if is_marker_line(line) {
            match start.take() {
                None => start = Some(n + 1),
                Some(s) => {
                    if s <= n {
                        out.push((s, n));
                    }
                }
            }
        } else {
            n += 1;
        }
    }
    out
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

fn llm_pass(
    src: &str,
    graph: &CommGraph,
    provider: &dyn AgentProvider,
    cfg: &FastpathConfig,
) -> Option<(Vec<(usize, usize)>, bool)> {
    let prompt = format!(
        "Mark the regions of this verified program whose communication or compute structure admits optimization. \
         Wrap each region in a `// EVOLVE-BLOCK-START` / `// EVOLVE-BLOCK-END` line pair. \
         Leave initialization, verification and output code unmarked and change nothing else.\n\n\
         Communication graph:\n{}\nProgram:\n```\n{src}```\nReply with the marked program in one fenced block.\n",
        render_graph(graph)
    );
    let response = match complete_with_retry(
        provider,
        &Request {
            role: Role::Annotate,
            channel: FASTPATH_CHANNEL,
            prompt: &prompt,
            temperature: 0.0,
        },
        cfg.retry,
    ) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("annotation agent failed ({e}); using pattern regions only");
            return None;
        }
    };
    let marked = extract_code(&response);
    if strip_markers(&marked) != src {
        log::warn!("annotation agent changed program text; using pattern regions only");
        return None;
    }
    let (marked, repaired) = match find_blocks(&marked) {
        Ok(_) => (marked, false),
        Err(e) => {
            log::warn!("annotation markers invalid ({e}); repairing");
            (fixup_markers(&marked), true)
        }
    };
    Some((regions_of(&marked), repaired))
}

pub fn annotate_evolve_blocks(
    src: &str,
    graph: &CommGraph,
    provider: &dyn AgentProvider,
    cfg: &FastpathConfig,
) -> Result<Annotation, FastpathError> {
    let src = &strip_markers(src);
    let frozen = frozen_lines(src, &cfg.frozen);
    let (llm, repaired) = llm_pass(src, graph, provider, cfg).unwrap_or_default();
    let mut regions: Vec<(usize, usize)> = llm
        .into_iter()
        .filter(|&(s, e)| !(s..=e).any(|l| frozen.get(l).copied().unwrap_or(false)))
        .collect();
    let llm_regions = regions.len();
    for h in heuristic_regions(src, &cfg.frozen) {
        if !regions.iter().any(|&r| overlaps(r, h)) {
            regions.push(h);
        }
    }
    regions.sort_unstable();
    if regions.is_empty() {
        return Err(FastpathError::AnnotationInvalid(
            "no region with device communication call sites to mark".into(),
        ));
    }
    let source = wrap_regions(src, &regions);
    find_blocks(&source).map_err(|e| FastpathError::AnnotationInvalid(e.to_string()))?;
    Ok(Annotation {
        source,
        regions,
        llm_regions,
        repaired,
    })
}
