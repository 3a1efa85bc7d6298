//! Hardware-free harness: rule-based compile/verify gates and a keyword
//! cost model over the directive.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Artifact, BenchOutcome, CompileOutcome, EvalHarness, HarnessError, RunOutcome};
use crate::analyzer::{scan_source, ConstructKind};
use crate::blocks::find_blocks;
use crate::directive::{contains_directive, parse_directive, Backend, OptimizationDirective};
use crate::program::{Program, Topology};
use crate::source::{has_identifier, MaskedSource};

pub const DEFAULT_SIM_MODEL: &str = include_str!("../../data/sim_model.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementClass {
    pub name: String,
    pub keywords: Vec<String>,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkClass {
    pub name: String,
    pub keywords: Vec<String>,
    pub chunks: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncClass {
    pub name: String,
    pub keywords: Vec<String>,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileRules {
    pub gin_tokens: Vec<String>,
    pub lsa_tokens: Vec<String>,
    pub setup_tokens: Vec<String>,
    pub issuer_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRule {
    pub backend: Backend,
    pub when: String,
    pub requires: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCostModel {
    pub base_compute_ms: f64,
    pub comm_volume_ms: f64,
    pub per_chunk_sync_ms: f64,
    pub host_collective_ms: f64,
    pub rep_jitter_ms: f64,
    pub min_latency_ms: f64,
    pub default_overlap: f64,
    pub default_chunks: u32,
    pub default_sync_factor: f64,
    pub backend_factor: BTreeMap<String, f64>,
    pub issuer_factor: BTreeMap<String, f64>,
    #[serde(rename = "placement_class")]
    pub placement_classes: Vec<PlacementClass>,
    #[serde(rename = "chunk_class")]
    pub chunk_classes: Vec<ChunkClass>,
    #[serde(rename = "sync_class")]
    pub sync_classes: Vec<SyncClass>,
    pub rules: CompileRules,
    #[serde(rename = "verify_rule", default)]
    pub verify_rules: Vec<VerifyRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimModelError {
    #[error("sim model: {0}")]
    Parse(String),
    #[error("sim model: {0}")]
    Invalid(String),
}

impl Default for SimCostModel {
    fn default() -> Self {
        Self::parse(DEFAULT_SIM_MODEL).expect("shipped sim model is valid")
    }
}

impl SimCostModel {
    pub fn parse(text: &str) -> Result<Self, SimModelError> {
        let m: SimCostModel = toml::from_str(text).map_err(|e| SimModelError::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, SimModelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SimModelError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), SimModelError> {
        let bad = |m: &str| Err(SimModelError::Invalid(m.to_string()));
        if self.min_latency_ms <= 0.0 {
            return bad("min_latency_ms must be positive");
        }
        if self.base_compute_ms < 0.0 || self.comm_volume_ms < 0.0 || self.per_chunk_sync_ms < 0.0 {
            return bad("cost terms must be nonnegative");
        }
        let overlaps = self
            .placement_classes
            .iter()
            .map(|c| c.overlap)
            .chain([self.default_overlap]);
        if overlaps.into_iter().any(|o| !(0.0..=1.0).contains(&o)) {
            return bad("overlap efficiencies must lie in [0, 1]");
        }
        if self.chunk_classes.iter().any(|c| c.chunks == 0) || self.default_chunks == 0 {
            return bad("chunk counts must be at least 1");
        }
        Ok(())
    }

    fn class<'a, T>(&self, text: &str, classes: &'a [T], keywords: impl Fn(&T) -> &[String]) -> Option<&'a T> {
        let t = text.to_ascii_lowercase();
        classes
            .iter()
            .find(|c| keywords(c).iter().any(|k| t.contains(&k.to_ascii_lowercase())))
    }

    pub fn placement_class(&self, intent: &str) -> Option<&PlacementClass> {
        self.class(intent, &self.placement_classes, |c| &c.keywords)
    }

    pub fn overlap(&self, intent: &str) -> f64 {
        self.placement_class(intent).map_or(self.default_overlap, |c| c.overlap)
    }

    pub fn chunks(&self, intent: &str) -> u32 {
        self.class(intent, &self.chunk_classes, |c| &c.keywords)
            .map_or(self.default_chunks, |c| c.chunks)
    }

    pub fn sync_factor(&self, intent: &str) -> f64 {
        self.class(intent, &self.sync_classes, |c| &c.keywords)
            .map_or(self.default_sync_factor, |c| c.factor)
    }

    fn device_tokens(&self, b: Backend) -> &[String] {
        match b {
            Backend::Gin => &self.rules.gin_tokens,
            Backend::Lsa => &self.rules.lsa_tokens,
        }
    }
}

fn code_has(masked: &str, token: &str) -> bool {
    if token.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        has_identifier(masked, token)
    } else {
        masked.contains(token)
    }
}

fn balanced(masked: &str) -> Result<(), String> {
    let mut stack = Vec::new();
    for (line_no, line) in masked.lines().enumerate() {
        for c in line.chars() {
            match c {
                '(' | '[' | '{' => stack.push((c, line_no + 1)),
                ')' | ']' | '}' => {
                    let want = match c {
                        ')' => '(',
                        ']' => '[',
                        _ => '{',
                    };
                    match stack.pop() {
                        Some((open, _)) if open == want => {}
                        _ => return Err(format!("unbalanced `{c}` at line {}", line_no + 1)),
                    }
                }
                _ => {}
            }
        }
    }
    match stack.pop() {
        Some((c, line)) => Err(format!("unclosed `{c}` opened at line {line}")),
        None => Ok(()),
    }
}

/// Number of host-side collective and point-to-point calls.
pub fn host_collective_count(src: &str) -> usize {
    scan_source(src)
        .map(|cs| {
            cs.iter()
                .filter(|c| matches!(c.kind, ConstructKind::CollectiveCall | ConstructKind::SendRecvCall))
                .count()
        })
        .unwrap_or(0)
}

/// Does the source use any device-side communication token?
pub fn has_device_comm(src: &str, model: &SimCostModel) -> bool {
    let masked = MaskedSource::new(src);
    Backend::ALL
        .iter()
        .any(|&b| model.device_tokens(b).iter().any(|t| code_has(masked.masked(), t)))
}

/// Compile gate. Returns every violated rule, `[rule] message` per line.
pub fn sim_compile(src: &str, directive: &OptimizationDirective, model: &SimCostModel) -> Result<(), String> {
    let masked_src = MaskedSource::new(src);
    let masked = masked_src.masked();
    let mut diags = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim_start().starts_with("#error") {
            diags.push(format!("[error-directive] line {}: {}", i + 1, line.trim()));
        }
    }
    if let Err(e) = balanced(masked) {
        diags.push(format!("[syntax] {e}"));
    }
    if let Err(e) = find_blocks(src) {
        diags.push(format!("[markers] {e}"));
    }
    if contains_directive(src) {
        if let Err(e) = parse_directive(src) {
            diags.push(format!("[directive] {e}"));
        }
    }
    let own = model.device_tokens(directive.backend);
    let other_backend = match directive.backend {
        Backend::Gin => Backend::Lsa,
        Backend::Lsa => Backend::Gin,
    };
    for t in model.device_tokens(other_backend) {
        if code_has(masked, t) {
            diags.push(format!(
                "[backend-mismatch] `{t}` is {}-only but the directive selects {}",
                other_backend, directive.backend
            ));
        }
    }
    let uses_device = own.iter().any(|t| code_has(masked, t));
    if uses_device {
        for t in &model.rules.setup_tokens {
            if !code_has(masked, t) {
                diags.push(format!("[setup] device communication requires `{t}`"));
            }
        }
        let issuers: Vec<&String> = model
            .rules
            .issuer_tokens
            .iter()
            .filter(|t| code_has(masked, t))
            .collect();
        if !issuers.is_empty() && !issuers.iter().any(|t| t.as_str() == directive.issuer.as_str()) {
            diags.push(format!(
                "[issuer-mismatch] source uses {} but the directive selects {}",
                issuers.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
                directive.issuer
            ));
        }
    }
    if !uses_device && host_collective_count(src) == 0 {
        diags.push("[no-communication] neither host collectives nor device communication calls found".into());
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags.join("\n"))
    }
}

/// Verify gate: every triggered rule's required tokens must be present.
pub fn sim_verify(src: &str, directive: &OptimizationDirective, model: &SimCostModel) -> Result<(), String> {
    let masked_src = MaskedSource::new(src);
    let masked = masked_src.masked();
    let mut diags = Vec::new();
    for rule in model.verify_rules.iter().filter(|r| r.backend == directive.backend) {
        if !code_has(masked, &rule.when) {
            continue;
        }
        for req in &rule.requires {
            if !code_has(masked, req) {
                diags.push(format!(
                    "[verify] output mismatch vs host baseline: `{}` issued without `{req}`",
                    rule.when
                ));
            }
        }
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags.join("\n"))
    }
}

pub fn sim_latency(src: &str, directive: &OptimizationDirective, model: &SimCostModel) -> f64 {
    let device = has_device_comm(src, model);
    let (overlap, chunks) = if device {
        (
            model.overlap(directive.placement()),
            model.chunks(directive.chunk_size()),
        )
    } else {
        (0.0, 1)
    };
    let backend = model
        .backend_factor
        .get(directive.backend.as_str())
        .copied()
        .unwrap_or(1.0);
    let issuer = model
        .issuer_factor
        .get(directive.issuer.as_str())
        .copied()
        .unwrap_or(1.0);
    let t = model.base_compute_ms
        + model.comm_volume_ms * backend * issuer * (1.0 - overlap)
        + chunks as f64 * model.per_chunk_sync_ms * model.sync_factor(directive.sync_scope())
        + model.host_collective_ms * host_collective_count(src) as f64;
    t.max(model.min_latency_ms)
}

#[derive(Debug, Clone, Default)]
pub struct SimHarness {
    pub model: SimCostModel,
}

impl SimHarness {
    pub fn new(model: SimCostModel) -> Self {
        Self { model }
    }
}

impl EvalHarness for SimHarness {
    fn name(&self) -> &str {
        "sim"
    }

    fn compile(&self, program: &Program) -> Result<CompileOutcome, HarnessError> {
        Ok(match sim_compile(&program.source, &program.directive, &self.model) {
            Ok(()) => CompileOutcome::Ok(Artifact {
                source: program.source.clone(),
                directive: program.directive.clone(),
                binary: None,
            }),
            Err(d) => CompileOutcome::Failed(d),
        })
    }

    fn run_verify(&self, artifact: &Artifact, topology: &Topology) -> Result<RunOutcome, HarnessError> {
        if topology.ranks == 0 {
            return Err(HarnessError::Unavailable("topology has no ranks".into()));
        }
        Ok(match sim_verify(&artifact.source, &artifact.directive, &self.model) {
            Ok(()) => RunOutcome::Passed,
            Err(d) => RunOutcome::Failed(d),
        })
    }

    fn run_benchmark(&self, artifact: &Artifact, topology: &Topology, reps: u32) -> Result<BenchOutcome, HarnessError> {
        if topology.ranks == 0 {
            return Err(HarnessError::Unavailable("topology has no ranks".into()));
        }
        let t = sim_latency(&artifact.source, &artifact.directive, &self.model);
        Ok(BenchOutcome::Latencies(
            (0..reps).map(|i| t + self.model.rep_jitter_ms * i as f64).collect(),
        ))
    }
}
