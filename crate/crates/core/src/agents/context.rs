//! Knowledge-base loading and per-invocation agent context.
//!
//! Layout:
//!
//! ```text
//! kb/
//!   shared/strategy.md        required
//!   shared/*.md               shared API docs (optional)
//!   gin/interface.md          required, interface schema
//!   gin/rules.txt             required, one rule per line
//!   gin/reference_kernel.cu   required
//!   gin/*.md                  further API docs
//!   gin/headers/*.h           headers
//!   lsa/...                   same as gin/
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hardware::HardwareContext;
use crate::directive::Backend;

pub const INTERFACE_SECTIONS: [&str; 5] = ["Purpose", "Core API", "Sync Scope", "Invariants", "Canonical Pattern"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("missing knowledge-base document {0}")]
    MissingKnowledge(PathBuf),
    #[error("interface document {path} lacks section `{section}`")]
    InvalidInterface { path: PathBuf, section: &'static str },
    #[error("reading {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub name: String,
    /// `None` for shared material.
    pub backend: Option<Backend>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentContext {
    pub backend: Backend,
    pub api_docs: Vec<Document>,
    pub strategy_knowledge: String,
    pub correctness_rules: Vec<String>,
    pub hardware: HardwareContext,
    pub reference_kernel: String,
    pub headers: Vec<Document>,
}

impl AgentContext {
    /// Context block injected ahead of every prompt.
    pub fn render(&self) -> String {
        let mut out = format!("Backend: {}\n\n", self.backend);
        for d in &self.api_docs {
            out += &format!("=== API document: {} ===\n{}\n", d.name, d.text.trim_end());
        }
        for h in &self.headers {
            out += &format!("=== Header: {} ===\n{}\n", h.name, h.text.trim_end());
        }
        out += &format!("=== Strategy knowledge ===\n{}\n", self.strategy_knowledge.trim_end());
        out += "=== Correctness rules ===\n";
        for (i, r) in self.correctness_rules.iter().enumerate() {
            out += &format!("{}. {r}\n", i + 1);
        }
        out += &format!("=== Reference kernel ===\n{}\n", self.reference_kernel.trim_end());
        out += &self.hardware.render();
        out
    }

    /// Minimal context with no knowledge base, for tests and offline tools.
    pub fn bare(backend: Backend, hardware: HardwareContext) -> Self {
        Self {
            backend,
            api_docs: Vec::new(),
            strategy_knowledge: String::new(),
            correctness_rules: Vec::new(),
            hardware,
            reference_kernel: String::new(),
            headers: Vec::new(),
        }
    }
}

fn read(path: &Path) -> Result<String, ContextError> {
    if !path.is_file() {
        return Err(ContextError::MissingKnowledge(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| ContextError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, ContextError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let entries = fs::read_dir(dir).map_err(|e| ContextError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn validate_interface(path: &Path, text: &str) -> Result<(), ContextError> {
    for section in INTERFACE_SECTIONS {
        let found = text.lines().any(|l| {
            let l = l.trim();
            l.starts_with('#') && l.trim_start_matches('#').trim().eq_ignore_ascii_case(section)
        });
        if !found {
            return Err(ContextError::InvalidInterface {
                path: path.to_path_buf(),
                section,
            });
        }
    }
    Ok(())
}

pub fn parse_rules(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.trim_start_matches(['-', '*']).trim().to_string())
        .collect()
}

pub fn assemble_context(backend: Backend, hw: HardwareContext, kb: &Path) -> Result<AgentContext, ContextError> {
    let shared = kb.join("shared");
    let strategy_path = shared.join("strategy.md");
    let strategy_knowledge = read(&strategy_path)?;

    let dir = kb.join(backend.tag());
    let interface_path = dir.join("interface.md");
    let interface = read(&interface_path)?;
    validate_interface(&interface_path, &interface)?;
    let correctness_rules = parse_rules(&read(&dir.join("rules.txt"))?);
    let reference_kernel = read(&dir.join("reference_kernel.cu"))?;

    let mut api_docs = vec![Document {
        name: format!("{}/interface.md", backend.tag()),
        backend: Some(backend),
        text: interface,
    }];
    for p in sorted_files(&dir, "md")? {
        if p == interface_path {
            continue;
        }
        api_docs.push(Document {
            name: format!("{}/{}", backend.tag(), file_name(&p)),
            backend: Some(backend),
            text: read(&p)?,
        });
    }
    for p in sorted_files(&shared, "md")? {
        if p == strategy_path {
            continue;
        }
        api_docs.push(Document {
            name: format!("shared/{}", file_name(&p)),
            backend: None,
            text: read(&p)?,
        });
    }
    let mut headers = Vec::new();
    for p in sorted_files(&dir.join("headers"), "h")? {
        headers.push(Document {
            name: format!("{}/headers/{}", backend.tag(), file_name(&p)),
            backend: Some(backend),
            text: read(&p)?,
        });
    }
    Ok(AgentContext {
        backend,
        api_docs,
        strategy_knowledge,
        correctness_rules,
        hardware: hw,
        reference_kernel,
        headers,
    })
}
