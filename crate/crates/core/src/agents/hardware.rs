use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::Topology;

pub const DEFAULT_ARCH_TABLE: &str = include_str!("../../data/arch_table.toml");
pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.unit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchEntry {
    pub gpu_model: String,
    #[serde(default)]
    pub sm_count: Option<u32>,
    #[serde(default)]
    pub hbm_bandwidth: Option<Quantity>,
    #[serde(default)]
    pub shared_mem_capacity: Option<Quantity>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchTable(pub BTreeMap<String, ArchEntry>);

impl ArchTable {
    pub fn parse(text: &str) -> Result<Self, HardwareError> {
        let table: ArchTable = toml::from_str(text).map_err(|e| HardwareError::Table(e.to_string()))?;
        if let Some((code, _)) = table.0.iter().find(|(_, e)| e.sm_count == Some(0)) {
            return Err(HardwareError::Table(format!("{code}: sm_count must be at least 1")));
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, HardwareError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HardwareError::Table(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn shipped() -> Self {
        Self::parse(DEFAULT_ARCH_TABLE).expect("shipped arch table parses")
    }

    pub fn get(&self, code: &str) -> Option<&ArchEntry> {
        self.0.get(code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    IntraNode,
    InterNode,
    Mixed,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::IntraNode => "intra_node",
            Placement::InterNode => "inter_node",
            Placement::Mixed => "mixed",
        }
    }
}

/// Build and launch configuration the hardware context is derived from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HarnessProfile {
    #[serde(default)]
    pub compiler_flags: Vec<String>,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub toolchain_versions: BTreeMap<String, String>,
    #[serde(default)]
    pub interconnect: Option<String>,
    /// Overrides the placement derived from the host list.
    #[serde(default)]
    pub placement: Option<Placement>,
    #[serde(default)]
    pub resource_notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareContext {
    pub arch: Option<String>,
    pub gpu_model: String,
    pub sm_count: Option<u32>,
    pub hbm_bandwidth: Option<Quantity>,
    pub shared_mem_capacity: Option<Quantity>,
    pub rank_count: u32,
    pub placement: Placement,
    pub interconnect: String,
    pub toolchain_versions: BTreeMap<String, String>,
    pub resource_notes: Vec<String>,
}

impl HardwareContext {
    pub fn render(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| UNKNOWN.to_string());
        let mut out = String::from("Hardware context:\n");
        out += &format!("  arch: {}\n", opt(self.arch.clone()));
        out += &format!("  gpu_model: {}\n", self.gpu_model);
        out += &format!("  sm_count: {}\n", opt(self.sm_count.map(|n| n.to_string())));
        out += &format!(
            "  hbm_bandwidth: {}\n",
            opt(self.hbm_bandwidth.as_ref().map(|q| q.to_string()))
        );
        out += &format!(
            "  shared_mem_capacity: {}\n",
            opt(self.shared_mem_capacity.as_ref().map(|q| q.to_string()))
        );
        out += &format!("  ranks: {} ({})\n", self.rank_count, self.placement.as_str());
        out += &format!("  interconnect: {}\n", self.interconnect);
        for (k, v) in &self.toolchain_versions {
            out += &format!("  toolchain {k}: {v}\n");
        }
        for n in &self.resource_notes {
            out += &format!("  note: {n}\n");
        }
        out
    }
}

impl Default for HardwareContext {
    fn default() -> Self {
        Self {
            arch: None,
            gpu_model: UNKNOWN.into(),
            sm_count: None,
            hbm_bandwidth: None,
            shared_mem_capacity: None,
            rank_count: 1,
            placement: Placement::IntraNode,
            interconnect: UNKNOWN.into(),
            toolchain_versions: BTreeMap::new(),
            resource_notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HardwareError {
    #[error("architecture table: {0}")]
    Table(String),
    #[error("launcher topology has zero ranks")]
    NoRanks,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum HardwareWarning {
    UnknownArch(String),
    NoArchFlag,
}

impl fmt::Display for HardwareWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HardwareWarning::UnknownArch(c) => {
                write!(f, "unknown architecture code `{c}`; device properties left unknown")
            }
            HardwareWarning::NoArchFlag => {
                f.write_str("no architecture code in compiler flags; device properties left unknown")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardwareExtraction {
    pub context: HardwareContext,
    pub warnings: Vec<HardwareWarning>,
}

fn arch_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(?:sm|compute)_(\d+[a-z]?)\b").unwrap())
}

/// First architecture code in the flags, normalized to `sm_NN`.
pub fn arch_code(flags: &[String]) -> Option<String> {
    flags
        .iter()
        .find_map(|f| arch_regex().captures(f).map(|c| format!("sm_{}", &c[1])))
}

pub fn extract_hardware_context(
    profile: &HarnessProfile,
    table: &ArchTable,
) -> Result<HardwareExtraction, HardwareError> {
    if profile.topology.ranks == 0 {
        return Err(HardwareError::NoRanks);
    }
    let mut warnings = Vec::new();
    let mut ctx = HardwareContext {
        rank_count: profile.topology.ranks,
        toolchain_versions: profile.toolchain_versions.clone(),
        resource_notes: profile.resource_notes.clone(),
        interconnect: profile.interconnect.clone().unwrap_or_else(|| UNKNOWN.into()),
        ..HardwareContext::default()
    };
    ctx.placement = profile
        .placement
        .unwrap_or(if profile.topology.distinct_hosts().len() > 1 {
            Placement::InterNode
        } else {
            Placement::IntraNode
        });
    match arch_code(&profile.compiler_flags) {
        None => warnings.push(HardwareWarning::NoArchFlag),
        Some(code) => {
            match table
                .get(&code)
                .or_else(|| table.get(code.trim_end_matches(char::is_alphabetic)))
            {
                Some(e) => {
                    ctx.gpu_model = e.gpu_model.clone();
                    ctx.sm_count = e.sm_count;
                    ctx.hbm_bandwidth = e.hbm_bandwidth.clone();
                    ctx.shared_mem_capacity = e.shared_mem_capacity.clone();
                }
                None => {
                    log::warn!("unknown architecture {code}");
                    warnings.push(HardwareWarning::UnknownArch(code.clone()));
                }
            }
            ctx.arch = Some(code);
        }
    }
    Ok(HardwareExtraction { context: ctx, warnings })
}
