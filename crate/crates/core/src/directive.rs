//! The five-dimensional optimization design space.
//!
//! A directive fixes one value along each dimension: two concrete API
//! choices (backend, issuer) and three free-form intents (placement,
//! synchronization scope, chunk size). Agents must emit one before any code.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROOT_KEY: &str = "optimization_directive";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DirectiveError {
    #[error("directive is missing key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid value `{value}` for `{key}`")]
    InvalidEnum { key: &'static str, value: String },
    #[error("intent `{0}` is empty")]
    EmptyIntent(&'static str),
}

/// Communication backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Backend {
    /// Network-initiated one-sided transfers.
    #[serde(rename = "GIN")]
    Gin,
    /// Load/store access to peer memory.
    #[serde(rename = "LSA")]
    Lsa,
}

impl Backend {
    pub const ALL: [Backend; 2] = [Backend::Gin, Backend::Lsa];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Gin => "GIN",
            Backend::Lsa => "LSA",
        }
    }

    /// Lowercase tag used for knowledge-base directories and config.
    pub fn tag(self) -> &'static str {
        match self {
            Backend::Gin => "gin",
            Backend::Lsa => "lsa",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = DirectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "GIN" | "gin" | "Gin" => Ok(Backend::Gin),
            "LSA" | "lsa" | "Lsa" => Ok(Backend::Lsa),
            other => Err(DirectiveError::InvalidEnum {
                key: "backend",
                value: other.to_string(),
            }),
        }
    }
}

/// Thread-group granularity that issues communication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Issuer {
    #[serde(rename = "ncclCoopThread")]
    CoopThread,
    #[serde(rename = "ncclCoopWarp")]
    CoopWarp,
    #[serde(rename = "ncclCoopCta")]
    CoopCta,
}

impl Issuer {
    pub const ALL: [Issuer; 3] = [Issuer::CoopThread, Issuer::CoopWarp, Issuer::CoopCta];

    /// The device-API identifier, e.g. `ncclCoopCta`.
    pub fn as_str(self) -> &'static str {
        match self {
            Issuer::CoopThread => "ncclCoopThread",
            Issuer::CoopWarp => "ncclCoopWarp",
            Issuer::CoopCta => "ncclCoopCta",
        }
    }
}

impl fmt::Display for Issuer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Issuer {
    type Err = DirectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bare = s.strip_prefix("nccl").unwrap_or(s);
        match bare {
            "CoopThread" => Ok(Issuer::CoopThread),
            "CoopWarp" => Ok(Issuer::CoopWarp),
            "CoopCta" => Ok(Issuer::CoopCta),
            _ => Err(DirectiveError::InvalidEnum {
                key: "issuer",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntentDimension {
    Placement,
    SyncScope,
    ChunkSize,
}

impl IntentDimension {
    pub fn key(self) -> &'static str {
        match self {
            IntentDimension::Placement => "placement",
            IntentDimension::SyncScope => "sync_scope",
            IntentDimension::ChunkSize => "chunk_size",
        }
    }
}

/// Free-form intent text along one of the three intent dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntentField {
    dimension: IntentDimension,
    text: String,
}

impl IntentField {
    pub fn new(dimension: IntentDimension, text: impl Into<String>) -> Result<Self, DirectiveError> {
        let text = text.into().trim().to_string();
        if text.is_empty() {
            return Err(DirectiveError::EmptyIntent(dimension.key()));
        }
        Ok(Self { dimension, text })
    }

    pub fn dimension(&self) -> IntentDimension {
        self.dimension
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// A complete point in the design space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OptimizationDirective {
    pub backend: Backend,
    pub issuer: Issuer,
    placement: IntentField,
    sync_scope: IntentField,
    chunk_size: IntentField,
}

impl OptimizationDirective {
    pub fn new(
        backend: Backend,
        issuer: Issuer,
        placement: &str,
        sync_scope: &str,
        chunk_size: &str,
    ) -> Result<Self, DirectiveError> {
        Ok(Self {
            backend,
            issuer,
            placement: IntentField::new(IntentDimension::Placement, placement)?,
            sync_scope: IntentField::new(IntentDimension::SyncScope, sync_scope)?,
            chunk_size: IntentField::new(IntentDimension::ChunkSize, chunk_size)?,
        })
    }

    pub fn placement(&self) -> &str {
        self.placement.text()
    }

    pub fn sync_scope(&self) -> &str {
        self.sync_scope.text()
    }

    pub fn chunk_size(&self) -> &str {
        self.chunk_size.text()
    }

    pub fn intents(&self) -> [&IntentField; 3] {
        [&self.placement, &self.sync_scope, &self.chunk_size]
    }

    /// Same intents, different concrete API choices.
    pub fn with_concrete(&self, backend: Backend, issuer: Issuer) -> Self {
        Self {
            backend,
            issuer,
            ..self.clone()
        }
    }
}

impl fmt::Display for OptimizationDirective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_directive(self))
    }
}

impl FromStr for OptimizationDirective {
    type Err = DirectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_directive(s)
    }
}

fn strip_comment(line: &str) -> &str {
    // `#` starts a comment at line start or after whitespace
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

/// Parse a directive block. Keys are order-insensitive; `#` comments and
/// prose before the root key are ignored. Without a root key the whole
/// text is scanned for `key: value` lines.
pub fn parse_directive(text: &str) -> Result<OptimizationDirective, DirectiveError> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| strip_comment(l).trim() == format!("{ROOT_KEY}:"))
        .map(|i| i + 1)
        .unwrap_or(0);

    let mut backend = None;
    let mut issuer = None;
    let mut placement = None;
    let mut sync_scope = None;
    let mut chunk_size = None;

    for raw in &lines[start..] {
        let line = strip_comment(raw).trim();
        let line = line.trim_start_matches(['-', '*']).trim();
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        let slot = match key.trim() {
            "backend" => &mut backend,
            "issuer" => &mut issuer,
            "placement" => &mut placement,
            "sync_scope" => &mut sync_scope,
            "chunk_size" => &mut chunk_size,
            _ => continue,
        };
        if slot.is_none() {
            *slot = Some(value.to_string());
        }
    }

    let backend: Backend = backend.ok_or(DirectiveError::MissingKey("backend"))?.parse()?;
    let issuer: Issuer = issuer.ok_or(DirectiveError::MissingKey("issuer"))?.parse()?;
    let placement = placement.ok_or(DirectiveError::MissingKey("placement"))?;
    let sync_scope = sync_scope.ok_or(DirectiveError::MissingKey("sync_scope"))?;
    let chunk_size = chunk_size.ok_or(DirectiveError::MissingKey("chunk_size"))?;
    OptimizationDirective::new(backend, issuer, &placement, &sync_scope, &chunk_size)
}

/// Does `text` contain a directive block header?
pub fn contains_directive(text: &str) -> bool {
    text.lines().any(|l| strip_comment(l).trim() == format!("{ROOT_KEY}:"))
}

pub fn render_directive(d: &OptimizationDirective) -> String {
    format!(
        "{ROOT_KEY}:\n  backend:    {}\n  issuer:     {}\n  placement:  {}\n  sync_scope: {}\n  chunk_size: {}\n",
        d.backend,
        d.issuer,
        d.placement(),
        d.sync_scope(),
        d.chunk_size()
    )
}

/// Every (backend, issuer) combination, backend-major.
pub fn enumerate_concrete_space() -> Vec<(Backend, Issuer)> {
    Backend::ALL
        .iter()
        .flat_map(|&b| Issuer::ALL.iter().map(move |&i| (b, i)))
        .collect()
}

pub const CONSERVATIVE_PLACEMENT: &str = "fully deferred";
pub const CONSERVATIVE_SYNC_SCOPE: &str = "global";
pub const CONSERVATIVE_CHUNK_SIZE: &str = "coarse";

/// The fixed correctness-first directive used by the fast path:
/// CTA-level issuance, fully deferred placement, global sync, coarse chunks.
pub fn conservative_directive(backend: Backend) -> OptimizationDirective {
    OptimizationDirective::new(
        backend,
        Issuer::CoopCta,
        CONSERVATIVE_PLACEMENT,
        CONSERVATIVE_SYNC_SCOPE,
        CONSERVATIVE_CHUNK_SIZE,
    )
    .expect("conservative intents are nonempty")
}
