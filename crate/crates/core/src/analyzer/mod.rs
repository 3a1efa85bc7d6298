//! Static analysis of host-driven GPU programs.
//!
//! [`scan_source`] lexically extracts communication-relevant constructs,
//! [`build_comm_graph`] links them into a communication dependency graph
//! and [`render_graph`] prints the human-readable report.

mod graph;
mod render;
mod scan;

pub use graph::{build_comm_graph, build_comm_graph_with, GraphOptions};
pub use render::{graph_to_json, render_graph};
pub use scan::{scan_source, scan_source_with, ScanOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allocator required for device-initiated communication buffers.
pub const COMM_ALLOCATOR: &str = "ncclMemAlloc";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyzerError {
    #[error("call at line {0} never closes its argument list")]
    UnbalancedCall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructKind {
    CollectiveCall,
    SendRecvCall,
    /// `ncclGroupStart` / `ncclGroupEnd`.
    GroupBoundary,
    Allocation,
    KernelLaunch,
    StreamSync,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceConstruct {
    pub kind: ConstructKind,
    pub name: String,
    /// Line of the statement end (closing parenthesis of the call).
    pub line: usize,
    /// Line holding the name token.
    pub start_line: usize,
    pub args: Vec<String>,
    /// `<<<...>>>` configuration for kernel launches.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub launch_config: Vec<String>,
    /// Enclosing function, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub conditional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocSite {
    pub allocator: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelRef {
    pub kernel: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferInfo {
    pub name: String,
    pub alloc_site: Option<AllocSite>,
    pub needs_migration: bool,
    pub producers: Vec<KernelRef>,
    pub consumers: Vec<KernelRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum P2pDirection {
    Send,
    Recv,
}

/// One member of a grouped send/recv node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct P2pOp {
    pub direction: P2pDirection,
    pub buffer: String,
    pub peer: String,
    pub line: usize,
}

pub const GROUPED_P2P: &str = "grouped-p2p";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommNode {
    pub op: String,
    pub line: usize,
    pub stream: String,
    pub count_expr: String,
    pub datatype: String,
    pub send: Option<BufferInfo>,
    pub recv: Option<BufferInfo>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p2p: Vec<P2pOp>,
    pub transform_hint: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub conditional: bool,
}

impl CommNode {
    pub fn buffers(&self) -> impl Iterator<Item = &BufferInfo> {
        self.send.iter().chain(self.recv.iter())
    }

    pub fn buffers_needing_migration(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for b in self.buffers() {
            if b.needs_migration && !out.contains(&b.name.as_str()) {
                out.push(&b.name);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRole {
    Compute,
    Communicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionStep {
    pub name: String,
    pub role: StepRole,
    pub line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    /// Index into `CommGraph::nodes` for communicate steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommGraph {
    pub nodes: Vec<CommNode>,
    pub execution_order: Vec<ExecutionStep>,
    /// `(i, j)`: node `i` completes before node `j`.
    pub ordering_edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CommGraph {
    pub fn migration_count(&self) -> usize {
        let mut names: Vec<&str> = self.nodes.iter().flat_map(|n| n.buffers_needing_migration()).collect();
        names.sort_unstable();
        names.dedup();
        names.len()
    }
}

/// Scan then build with default options.
pub fn analyze(src: &str) -> Result<CommGraph, AnalyzerError> {
    Ok(build_comm_graph(&scan_source(src)?))
}
