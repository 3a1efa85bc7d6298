use std::collections::BTreeSet;

use super::{
    AllocSite, BufferInfo, CommGraph, CommNode, ConstructKind, ExecutionStep, KernelRef, P2pDirection, P2pOp,
    SourceConstruct, StepRole, GROUPED_P2P,
};
use crate::source::{has_identifier, identifiers};

#[derive(Debug, Clone)]
pub struct GraphOptions {
    /// Allocators whose buffers must be migrated before device-initiated use.
    pub incompatible_allocators: Vec<String>,
    pub collective_prefixes: Vec<String>,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            incompatible_allocators: vec!["cudaMalloc".into()],
            collective_prefixes: vec!["nccl".into()],
        }
    }
}

pub fn build_comm_graph(constructs: &[SourceConstruct]) -> CommGraph {
    build_comm_graph_with(constructs, &GraphOptions::default())
}

/// Index of a construct in the input plus the node built from it.
struct Pending {
    position: usize,
    node: CommNode,
}

pub fn build_comm_graph_with(constructs: &[SourceConstruct], opts: &GraphOptions) -> CommGraph {
    let mut warnings = Vec::new();
    let mut pending: Vec<Pending> = Vec::new();
    let mut steps: Vec<(usize, ExecutionStep)> = Vec::new();
    let mut group: Option<Vec<(usize, &SourceConstruct)>> = None;

    for (pos, c) in constructs.iter().enumerate() {
        match c.kind {
            ConstructKind::KernelLaunch => steps.push((
                pos,
                ExecutionStep {
                    name: format!("{}<<<...>>>", c.name),
                    role: StepRole::Compute,
                    line: c.line,
                    function: c.function.clone(),
                    node: None,
                },
            )),
            ConstructKind::CollectiveCall => {
                let node = collective_node(c, opts, &mut warnings);
                pending.push(Pending { position: pos, node });
            }
            ConstructKind::GroupBoundary if c.name == "ncclGroupStart" => {
                group = Some(Vec::new());
            }
            ConstructKind::GroupBoundary => {
                if let Some(members) = group.take() {
                    if !members.is_empty() {
                        let position = members[0].0;
                        let node = grouped_node(&members, &mut warnings);
                        pending.push(Pending { position, node });
                    }
                }
            }
            ConstructKind::SendRecvCall => match group.as_mut() {
                Some(members) => members.push((pos, c)),
                None => {
                    let node = grouped_node(&[(pos, c)], &mut warnings);
                    pending.push(Pending { position: pos, node });
                }
            },
            ConstructKind::Allocation | ConstructKind::StreamSync => {}
        }
    }
    if let Some(members) = group.take() {
        if !members.is_empty() {
            warnings.push(format!(
                "ncclGroupStart without matching ncclGroupEnd (line {})",
                members[0].1.line
            ));
            let position = members[0].0;
            let node = grouped_node(&members, &mut warnings);
            pending.push(Pending { position, node });
        }
    }
    pending.sort_by_key(|p| p.position);

    for p in &mut pending {
        let function = p.node.function.clone();
        let position = p.position;
        for buf in p.node.send.iter_mut().chain(p.node.recv.iter_mut()) {
            resolve_buffer(buf, position, function.as_deref(), constructs, opts, &mut warnings);
        }
    }

    for (i, p) in pending.iter().enumerate() {
        steps.push((
            p.position,
            ExecutionStep {
                name: p.node.op.clone(),
                role: StepRole::Communicate,
                line: p.node.line,
                function: p.node.function.clone(),
                node: Some(i),
            },
        ));
    }
    steps.sort_by_key(|(pos, _)| *pos);

    let nodes: Vec<CommNode> = pending.into_iter().map(|p| p.node).collect();
    let mut edges = BTreeSet::new();
    for i in 1..nodes.len() {
        edges.insert((i - 1, i));
    }
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let shares = nodes[i].buffers().any(|a| nodes[j].buffers().any(|b| a.name == b.name));
            if shares {
                edges.insert((i, j));
            }
        }
    }

    CommGraph {
        nodes,
        execution_order: steps.into_iter().map(|(_, s)| s).collect(),
        ordering_edges: edges.into_iter().collect(),
        warnings,
    }
}

fn empty_buffer(name: String) -> BufferInfo {
    BufferInfo {
        name,
        alloc_site: None,
        needs_migration: false,
        producers: Vec::new(),
        consumers: Vec::new(),
    }
}

/// Reduce a buffer operand expression to its base identifier, stripping
/// casts and address-of. Pointer arithmetic is reported, not resolved.
fn operand_name(expr: &str, line: usize, warnings: &mut Vec<String>) -> String {
    let mut e = expr.trim();
    loop {
        let t = e.trim_start();
        if let Some(rest) = t.strip_prefix('&') {
            e = rest;
        } else if t.starts_with('(') {
            match t.find(')') {
                Some(close) if t[1..close].chars().all(|c| c.is_alphanumeric() || "_* ".contains(c)) => {
                    e = &t[close + 1..];
                }
                _ => break,
            }
        } else {
            e = t;
            break;
        }
    }
    let e = e.trim();
    let plain = !e.is_empty() && e.chars().all(|c| c.is_alphanumeric() || c == '_');
    if plain {
        return e.to_string();
    }
    let base = identifiers(e).next().map(|(_, w)| w.to_string()).unwrap_or_default();
    warnings.push(format!(
        "line {line}: buffer operand `{expr}` treated as `{base}` (aliasing not resolved)"
    ));
    base
}

fn arg(c: &SourceConstruct, i: usize) -> String {
    c.args.get(i).cloned().unwrap_or_default()
}

fn collective_node(c: &SourceConstruct, opts: &GraphOptions, warnings: &mut Vec<String>) -> CommNode {
    let op = short_op(&c.name, &opts.collective_prefixes);
    let (send_i, recv_i, count_i, dtype_i) = match op.as_str() {
        "Bcast" => (0, 0, 1, 2),
        _ => (0, 1, 2, 3),
    };
    let dtype_i = if c.args.get(dtype_i).is_some_and(|a| a.starts_with("nccl")) {
        dtype_i
    } else {
        c.args.iter().position(|a| is_datatype(a)).unwrap_or(dtype_i)
    };
    let send = operand_name(&arg(c, send_i), c.line, warnings);
    let recv = operand_name(&arg(c, recv_i), c.line, warnings);
    if send == recv && matches!(op.as_str(), "AlltoAll" | "AllGather") {
        warnings.push(format!(
            "line {}: {} with identical send/recv buffer `{send}`",
            c.line, c.name
        ));
    }
    CommNode {
        op: c.name.clone(),
        line: c.line,
        stream: c.args.last().cloned().unwrap_or_default(),
        count_expr: arg(c, count_i),
        datatype: arg(c, dtype_i),
        send: Some(empty_buffer(send)),
        recv: Some(empty_buffer(recv)),
        p2p: Vec::new(),
        transform_hint: transform_hint(&op),
        function: c.function.clone(),
        conditional: c.conditional,
    }
}

fn grouped_node(members: &[(usize, &SourceConstruct)], warnings: &mut Vec<String>) -> CommNode {
    let first = members[0].1;
    let mut p2p = Vec::new();
    for (_, c) in members {
        let direction = if c.name == "ncclSend" {
            P2pDirection::Send
        } else {
            P2pDirection::Recv
        };
        p2p.push(P2pOp {
            direction,
            buffer: operand_name(&arg(c, 0), c.line, warnings),
            peer: arg(c, 3),
            line: c.line,
        });
    }
    let pick = |dir| {
        p2p.iter()
            .find(|m| m.direction == dir)
            .map(|m| empty_buffer(m.buffer.clone()))
    };
    let (op, hint) = if members.len() == 1 {
        (
            first.name.clone(),
            transform_hint(first.name.trim_start_matches("nccl")),
        )
    } else {
        (GROUPED_P2P.to_string(), transform_hint(GROUPED_P2P))
    };
    CommNode {
        op,
        line: first.line,
        stream: first.args.last().cloned().unwrap_or_default(),
        count_expr: arg(first, 1),
        datatype: arg(first, 2),
        send: pick(P2pDirection::Send),
        recv: pick(P2pDirection::Recv),
        p2p,
        transform_hint: hint,
        function: first.function.clone(),
        conditional: members.iter().any(|(_, c)| c.conditional),
    }
}

fn resolve_buffer(
    buf: &mut BufferInfo,
    position: usize,
    function: Option<&str>,
    constructs: &[SourceConstruct],
    opts: &GraphOptions,
    warnings: &mut Vec<String>,
) {
    let same_fn = |c: &SourceConstruct| function.is_none() || c.function.as_deref() == function;
    let alloc = constructs[..position]
        .iter()
        .rev()
        .filter(|c| c.kind == ConstructKind::Allocation && same_fn(c))
        .find(|c| {
            let mut scratch = Vec::new();
            c.args
                .first()
                .is_some_and(|a| operand_name(a, c.line, &mut scratch) == buf.name)
        });
    match alloc {
        Some(c) => {
            buf.needs_migration = opts.incompatible_allocators.contains(&c.name);
            buf.alloc_site = Some(AllocSite {
                allocator: c.name.clone(),
                line: c.line,
            });
        }
        None => warnings.push(format!("buffer `{}`: no allocation site found", buf.name)),
    }
    let references = |c: &&SourceConstruct| {
        c.kind == ConstructKind::KernelLaunch && same_fn(c) && c.args.iter().any(|a| has_identifier(a, &buf.name))
    };
    if let Some(p) = constructs[..position].iter().rev().find(references) {
        buf.producers.push(KernelRef {
            kernel: p.name.clone(),
            line: p.line,
        });
    }
    if let Some(c) = constructs[position + 1..].iter().find(references) {
        buf.consumers.push(KernelRef {
            kernel: c.name.clone(),
            line: c.line,
        });
    }
}

fn is_datatype(a: &str) -> bool {
    const TYPES: &[&str] = &[
        "ncclInt8",
        "ncclChar",
        "ncclUint8",
        "ncclInt32",
        "ncclInt",
        "ncclUint32",
        "ncclInt64",
        "ncclUint64",
        "ncclFloat16",
        "ncclHalf",
        "ncclFloat32",
        "ncclFloat",
        "ncclFloat64",
        "ncclDouble",
        "ncclBfloat16",
    ];
    TYPES.contains(&a)
}

fn short_op(name: &str, prefixes: &[String]) -> String {
    let bare = prefixes
        .iter()
        .find_map(|p| name.strip_prefix(p.as_str()))
        .unwrap_or(name);
    match bare {
        "AllToAll" => "AlltoAll".to_string(),
        other => other.to_string(),
    }
}

/// Device-side rewrite pattern for each collective.
pub(crate) fn transform_hint(op: &str) -> Vec<String> {
    let lines: &[&str] = match op {
        "AlltoAll" | "AlltoAllv" => &[
            "AlltoAll -- rank r sends sendbuf[peer*chunk]",
            "to peer's recvbuf[r*chunk] + local self-copy",
        ],
        "AllGather" => &[
            "AllGather -- rank r sends its sendbuf chunk",
            "to every peer's recvbuf[r*chunk] + local self-copy",
        ],
        "AllReduce" => &[
            "AllReduce -- reduce-scatter chunks across peers",
            "then all-gather the reduced chunks into recvbuf",
        ],
        "ReduceScatter" => &[
            "ReduceScatter -- rank r sends sendbuf[peer*chunk] to peer",
            "and reduces the received chunks into recvbuf",
        ],
        "Broadcast" | "Bcast" => &["Broadcast -- root sends sendbuf to every peer's recvbuf"],
        "Reduce" => &[
            "Reduce -- every rank sends sendbuf to root",
            "root reduces the received buffers into recvbuf",
        ],
        "Gather" => &["Gather -- every rank sends sendbuf to root's recvbuf[r*chunk]"],
        "Scatter" => &["Scatter -- root sends sendbuf[peer*chunk] to peer's recvbuf"],
        GROUPED_P2P => &[
            "Send/Recv group -- each send becomes a one-sided put to its peer",
            "each recv becomes a wait on the matching signal",
        ],
        "Send" => &["Send -- one-sided put of sendbuf into the peer's window"],
        "Recv" => &["Recv -- wait on the signal for the peer's put into recvbuf"],
        _ => &["device-initiated equivalent of the host collective"],
    };
    lines.iter().map(|s| s.to_string()).collect()
}
