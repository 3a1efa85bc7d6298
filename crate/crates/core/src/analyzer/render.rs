use std::fmt::Write;

use super::{BufferInfo, CommGraph, CommNode, P2pDirection, StepRole, COMM_ALLOCATOR};

pub fn render_graph(g: &CommGraph) -> String {
    let mut out = String::from("Communication Graph\n");
    if g.nodes.is_empty() {
        out.push_str("  (no collectives)\n\n");
    }
    for (i, node) in g.nodes.iter().enumerate() {
        render_node(&mut out, i + 1, node);
        out.push('\n');
    }
    out.push_str("Execution Order\n");
    render_order(&mut out, g);
    out
}

fn render_node(out: &mut String, index: usize, n: &CommNode) {
    let cond = if n.conditional { " [conditional]" } else { "" };
    let _ = writeln!(out, "  Node {index}: {} (line {}){cond}", n.op, n.line);
    let _ = writeln!(out, "    Stream: {}", n.stream);
    let _ = writeln!(out, "    Count: {}, Datatype: {}", n.count_expr, n.datatype);
    out.push('\n');
    if n.p2p.len() > 1 {
        for m in &n.p2p {
            let dir = match m.direction {
                P2pDirection::Send => "ncclSend",
                P2pDirection::Recv => "ncclRecv",
            };
            let _ = writeln!(out, "    Member: {dir} {} peer {} (line {})", m.buffer, m.peer, m.line);
        }
    }
    if let Some(b) = &n.send {
        render_buffer(out, "Send", b);
    }
    if let Some(b) = &n.recv {
        render_buffer(out, "Recv", b);
    }
    out.push('\n');
    out.push_str("    Device-side transformation:\n");
    let mut hint = n.transform_hint.iter();
    if let Some(first) = hint.next() {
        let _ = writeln!(out, "      Pattern: {first}");
    }
    for rest in hint {
        let _ = writeln!(out, "               {rest}");
    }
    let needing = n.buffers_needing_migration();
    let list = if needing.is_empty() {
        "none".to_string()
    } else {
        needing.join(", ")
    };
    let _ = writeln!(out, "      Buffers needing {COMM_ALLOCATOR}: {list}");
}

fn render_buffer(out: &mut String, label: &str, b: &BufferInfo) {
    let _ = writeln!(out, "    {label} buffer: {}", b.name);
    match &b.alloc_site {
        Some(site) => {
            let flag = if b.needs_migration {
                format!(" [needs {COMM_ALLOCATOR}]")
            } else {
                String::new()
            };
            let _ = writeln!(out, "      Allocated: {} (line {}){flag}", site.allocator, site.line);
        }
        None => out.push_str("      Allocated: unknown\n"),
    }
    for p in &b.producers {
        let _ = writeln!(out, "      Produced by: {}<<<...>>> (line {})", p.kernel, p.line);
    }
    for c in &b.consumers {
        let _ = writeln!(out, "      Consumed by: {}<<<...>>> (line {})", c.kernel, c.line);
    }
}

fn render_order(out: &mut String, g: &CommGraph) {
    if g.execution_order.is_empty() {
        out.push_str("  (empty)\n");
        return;
    }
    let mut current: Option<Option<&str>> = None;
    let mut indent = 0;
    for step in &g.execution_order {
        let role = match step.role {
            StepRole::Compute => "compute",
            StepRole::Communicate => "communicate",
        };
        let func = step.function.as_deref();
        if current != Some(func) {
            let head = format!("  {}: ", func.unwrap_or("<top-level>"));
            indent = head.len();
            let _ = writeln!(out, "{head}{} [{role}]", step.name);
            current = Some(func);
        } else {
            let _ = writeln!(out, "{:indent$}-> {} [{role}]", "", step.name);
        }
    }
}

/// Machine-readable graph document. Field order is fixed, so the output is
/// stable for a fixed input.
pub fn graph_to_json(g: &CommGraph) -> String {
    serde_json::to_string_pretty(g).expect("graph serializes") + "\n"
}
