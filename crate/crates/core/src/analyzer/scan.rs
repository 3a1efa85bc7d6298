use super::{AnalyzerError, ConstructKind, SourceConstruct};
use crate::source::MaskedSource;

/// Collective operation names recognised after a library prefix.
const COLLECTIVE_OPS: &[&str] = &[
    "AllReduce",
    "Broadcast",
    "Bcast",
    "Reduce",
    "AllGather",
    "ReduceScatter",
    "AlltoAll",
    "AllToAll",
    "AlltoAllv",
    "Gather",
    "Scatter",
];

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub collective_prefixes: Vec<String>,
    pub allocators: Vec<String>,
    pub sync_calls: Vec<String>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            collective_prefixes: vec!["nccl".into()],
            allocators: ["cudaMalloc", "cudaMallocAsync", "cudaMallocManaged", "ncclMemAlloc"]
                .map(String::from)
                .to_vec(),
            sync_calls: ["cudaStreamSynchronize", "cudaDeviceSynchronize", "cudaEventSynchronize"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl ScanOptions {
    fn classify(&self, name: &str) -> Option<ConstructKind> {
        if name == "ncclSend" || name == "ncclRecv" {
            return Some(ConstructKind::SendRecvCall);
        }
        if name == "ncclGroupStart" || name == "ncclGroupEnd" {
            return Some(ConstructKind::GroupBoundary);
        }
        if self.allocators.iter().any(|a| a == name) {
            return Some(ConstructKind::Allocation);
        }
        if self.sync_calls.iter().any(|s| s == name) {
            return Some(ConstructKind::StreamSync);
        }
        let is_collective = self.collective_prefixes.iter().any(|p| {
            name.strip_prefix(p.as_str())
                .is_some_and(|op| COLLECTIVE_OPS.contains(&op))
        });
        is_collective.then_some(ConstructKind::CollectiveCall)
    }
}

pub fn scan_source(src: &str) -> Result<Vec<SourceConstruct>, AnalyzerError> {
    scan_source_with(src, &ScanOptions::default())
}

pub fn scan_source_with(src: &str, opts: &ScanOptions) -> Result<Vec<SourceConstruct>, AnalyzerError> {
    let m = MaskedSource::new(src);
    let functions = m.functions();
    let masked = m.masked();
    let bytes = masked.as_bytes();
    let mut out = Vec::new();

    for (pos, word) in m.identifiers() {
        if is_member_access(masked, pos) {
            continue;
        }
        let after = pos + word.len();
        let enclosing = || functions.iter().find(|f| f.contains(pos)).map(|f| f.name.clone());

        if let Some((cfg_open, cfg_close, after_cfg)) = launch_config(masked, after) {
            let open = skip_ws(bytes, after_cfg);
            if bytes.get(open) != Some(&b'(') {
                continue;
            }
            let close = m
                .matching_close(open)
                .ok_or(AnalyzerError::UnbalancedCall(m.line_of(pos)))?;
            out.push(SourceConstruct {
                kind: ConstructKind::KernelLaunch,
                name: word.to_string(),
                line: m.line_of(close),
                start_line: m.line_of(pos),
                args: m.split_args(open, close),
                launch_config: split_config(src, cfg_open, cfg_close),
                function: enclosing(),
                conditional: m.is_conditional(pos),
            });
            continue;
        }

        let Some(kind) = opts.classify(word) else {
            continue;
        };
        let open = skip_ws(bytes, after);
        if bytes.get(open) != Some(&b'(') {
            continue;
        }
        let close = m
            .matching_close(open)
            .ok_or(AnalyzerError::UnbalancedCall(m.line_of(pos)))?;
        out.push(SourceConstruct {
            kind,
            name: word.to_string(),
            line: m.line_of(close),
            start_line: m.line_of(pos),
            args: m.split_args(open, close),
            launch_config: Vec::new(),
            function: enclosing(),
            conditional: m.is_conditional(pos),
        });
    }
    Ok(out)
}

fn skip_ws(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

fn is_member_access(masked: &str, pos: usize) -> bool {
    let before = masked[..pos].trim_end();
    before.ends_with('.') || before.ends_with("->")
}

/// For `name<<<cfg>>>` (optionally `name<T><<<cfg>>>`) starting right after
/// the name, returns the offsets of the `<<<` start, the `>>>` start and
/// the byte after `>>>`.
fn launch_config(masked: &str, after_name: usize) -> Option<(usize, usize, usize)> {
    let bytes = masked.as_bytes();
    let mut i = skip_ws(bytes, after_name);
    if bytes.get(i) == Some(&b'<') && !masked[i..].starts_with("<<<") {
        let mut depth = 0i32;
        while i < bytes.len() {
            match bytes[i] {
                b'<' => depth += 1,
                b'>' => {
                    depth -= 1;
                    if depth == 0 {
                        i += 1;
                        break;
                    }
                }
                b';' | b'{' | b'}' => return None,
                _ => {}
            }
            i += 1;
        }
        i = skip_ws(bytes, i);
    }
    if !masked[i..].starts_with("<<<") {
        return None;
    }
    let close = masked[i + 3..].find(">>>")? + i + 3;
    Some((i, close, close + 3))
}

fn split_config(src: &str, open: usize, close: usize) -> Vec<String> {
    src[open + 3..close]
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MOE: &str = include_str!("../../tests/fixtures/moe_host.cu");

    #[test]
    fn empty_source() {
        assert!(scan_source("").unwrap().is_empty());
    }

    #[test]
    fn single_allgather() {
        let cs = scan_source("ncclAllGather(a, b, n, ncclFloat, comm, s);").unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].kind, ConstructKind::CollectiveCall);
        assert_eq!(cs[0].args, vec!["a", "b", "n", "ncclFloat", "comm", "s"]);
        assert!(cs.iter().all(|c| c.kind != ConstructKind::KernelLaunch));
    }

    #[test]
    fn listing_constructs() {
        let cs = scan_source(MOE).unwrap();
        let lines_of = |kind| {
            cs.iter()
                .filter(|c| c.kind == kind)
                .map(|c| (c.name.as_str(), c.line))
                .collect::<Vec<_>>()
        };
        assert_eq!(
            lines_of(ConstructKind::CollectiveCall),
            vec![("ncclAlltoAll", 19), ("ncclAlltoAll", 34)]
        );
        assert_eq!(
            lines_of(ConstructKind::Allocation),
            vec![
                ("cudaMalloc", 8),
                ("cudaMalloc", 9),
                ("cudaMalloc", 10),
                ("cudaMalloc", 11)
            ]
        );
        assert_eq!(
            lines_of(ConstructKind::KernelLaunch),
            vec![
                ("quantize", 15),
                ("dequantize", 24),
                ("gemm", 26),
                ("swiGLU", 28),
                ("gemm", 30)
            ]
        );
        assert_eq!(lines_of(ConstructKind::StreamSync).len(), 2);
        assert!(cs.iter().all(|c| c.function.as_deref() == Some("run_moe")));
        let launch = cs.iter().find(|c| c.name == "quantize").unwrap();
        assert_eq!(launch.launch_config, vec!["grid", "block", "0", "stream"]);
        assert_eq!(launch.start_line, 14);
    }

    #[test]
    fn name_token_on_start_line() {
        let cs = scan_source(MOE).unwrap();
        let lines: Vec<&str> = MOE.lines().collect();
        for c in cs {
            assert!(lines[c.start_line - 1].contains(&c.name), "{c:?}");
            assert!(c.start_line <= c.line && c.line <= lines.len());
        }
    }

    #[test]
    fn comments_and_members_ignored() {
        let src = "// ncclAllReduce(a, b, n, t, op, c, s);\n\
                   auto s = \"ncclAllReduce(\";\n\
                   gin.put(team, peer);\n\
                   obj->ncclAllReduce(x);\n";
        assert!(scan_source(src).unwrap().is_empty());
    }

    #[test]
    fn unbalanced_call() {
        let src = "void f() {\n  ncclAllReduce(a, b,\n    n, t;\n";
        assert_eq!(scan_source(src), Err(AnalyzerError::UnbalancedCall(2)));
    }

    #[test]
    fn custom_prefix() {
        let opts = ScanOptions {
            collective_prefixes: vec!["rccl".into()],
            ..ScanOptions::default()
        };
        let cs = scan_source_with("rcclAllReduce(a,b,n,t,op,c,s); ncclAllReduce(a,b,n,t,op,c,s);", &opts).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].name, "rcclAllReduce");
    }

    #[test]
    fn templated_launch() {
        let cs = scan_source("k<float><<<g, b>>>(x, y);").unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].name, "k");
        assert_eq!(cs[0].args, vec!["x", "y"]);
    }
}
