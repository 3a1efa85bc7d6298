use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::directive::OptimizationDirective;

/// A candidate program: source text plus the directive it claims to follow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub source: String,
    pub directive: OptimizationDirective,
}

impl Program {
    pub fn new(source: impl Into<String>, directive: OptimizationDirective) -> Self {
        Self {
            source: source.into(),
            directive,
        }
    }
}

/// Launch topology: rank count plus host entries (`name` or `name:slots`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub ranks: u32,
    #[serde(default)]
    pub hosts: Vec<String>,
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            ranks: 2,
            hosts: vec!["localhost".into()],
        }
    }
}

impl Topology {
    pub fn distinct_hosts(&self) -> BTreeSet<&str> {
        self.hosts
            .iter()
            .map(|h| h.split(':').next().unwrap_or(h).trim())
            .filter(|h| !h.is_empty())
            .collect()
    }

    /// Stable identifier of the device set, used for exclusive leases.
    pub fn lease_key(&self) -> String {
        let hosts: Vec<&str> = self.distinct_hosts().into_iter().collect();
        format!("{}@{}", self.ranks, hosts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MutationForm {
    Diff,
    Rewrite,
    Crossover,
}

impl MutationForm {
    pub const ALL: [MutationForm; 3] = [MutationForm::Diff, MutationForm::Rewrite, MutationForm::Crossover];

    pub fn as_str(self) -> &'static str {
        match self {
            MutationForm::Diff => "Diff",
            MutationForm::Rewrite => "Rewrite",
            MutationForm::Crossover => "Crossover",
        }
    }
}

impl std::fmt::Display for MutationForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
