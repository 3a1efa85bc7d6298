//! Run configuration: one TOML document, paths relative to its directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use commfuse_core::agents::{
    assemble_context, extract_hardware_context, AgentContext, AgentProvider, ArchTable, HarnessProfile, MockProvider,
    MockScript, RemoteConfig, RemoteProvider,
};
use commfuse_core::cascade::{EvalHarness, SimCostModel, SimHarness, ToolchainConfig, ToolchainHarness};
use commfuse_core::directive::Backend;
use commfuse_core::evolve::SearchParams;
use commfuse_core::store::embed::{RemoteEmbedder, RemoteEmbedderConfig};
use commfuse_core::store::{EmbeddingProvider, HashEmbedder};

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum HarnessKind {
    Sim,
    Toolchain,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessSection {
    pub kind: HarnessKind,
    /// Cost model for the sim harness; the shipped one when absent.
    #[serde(default)]
    pub sim_model: Option<PathBuf>,
    #[serde(default)]
    pub toolchain: Option<ToolchainConfig>,
    #[serde(default)]
    pub profile: HarnessProfile,
    #[serde(default)]
    pub arch_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub remote: Option<RemoteConfig>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSection {
    #[serde(default)]
    pub kind: EmbedderKind,
    #[serde(default)]
    pub remote: Option<RemoteEmbedderConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FastpathSection {
    #[serde(default)]
    pub iteration_cap: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    backend: String,
    #[serde(default)]
    knowledge_base: Option<PathBuf>,
    #[serde(default = "default_store")]
    store: PathBuf,
    #[serde(default = "default_runs")]
    runs: PathBuf,
    #[serde(default = "default_run_id")]
    run_id: String,
    #[serde(default)]
    rng_seed: Option<u64>,
    harness: HarnessSection,
    provider: ProviderSection,
    #[serde(default)]
    embedder: EmbedderSection,
    #[serde(default)]
    search: SearchParams,
    #[serde(default)]
    fastpath: FastpathSection,
}

fn default_store() -> PathBuf {
    "store".into()
}

fn default_runs() -> PathBuf {
    "runs".into()
}

fn default_run_id() -> String {
    "run".into()
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backend: Backend,
    pub knowledge_base: Option<PathBuf>,
    pub store: PathBuf,
    pub runs: PathBuf,
    pub run_id: String,
    pub harness: HarnessSection,
    pub provider: ProviderSection,
    pub embedder: EmbedderSection,
    pub search: SearchParams,
    pub fastpath: FastpathSection,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn must_exist(p: &Path, what: &str) -> Result<()> {
    if !p.exists() {
        bail!("{what} {} does not exist", p.display());
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        let backend: Backend = raw.backend.parse().map_err(|e| anyhow::anyhow!("backend: {e}"))?;
        let mut search = raw.search;
        if let Some(s) = raw.rng_seed {
            search.rng_seed = s;
        }
        search.validate()?;

        let knowledge_base = raw.knowledge_base.map(|p| resolve(base, &p));
        if let Some(kb) = &knowledge_base {
            must_exist(kb, "knowledge base")?;
        }
        let mut harness = raw.harness;
        if let Some(m) = harness.sim_model.take() {
            let m = resolve(base, &m);
            must_exist(&m, "sim model")?;
            harness.sim_model = Some(m);
        }
        if let Some(t) = harness.arch_table.take() {
            let t = resolve(base, &t);
            must_exist(&t, "architecture table")?;
            harness.arch_table = Some(t);
        }
        match (&mut harness.toolchain, harness.kind) {
            (None, HarnessKind::Toolchain) => bail!("harness.kind = \"toolchain\" needs a [harness.toolchain] table"),
            (Some(t), _) => t.work_dir = resolve(base, &t.work_dir),
            _ => {}
        }
        let mut provider = raw.provider;
        match provider.kind {
            ProviderKind::Mock => {
                let s = provider
                    .script
                    .take()
                    .context("provider.kind = \"mock\" needs provider.script")?;
                let s = resolve(base, &s);
                must_exist(&s, "mock script")?;
                provider.script = Some(s);
            }
            ProviderKind::Remote => {
                if provider.remote.is_none() {
                    bail!("provider.kind = \"remote\" needs a [provider.remote] table");
                }
            }
        }
        if raw.embedder.kind == EmbedderKind::Remote && raw.embedder.remote.is_none() {
            bail!("embedder.kind = \"remote\" needs an [embedder.remote] table");
        }
        if raw.run_id.is_empty() || raw.run_id.contains(['/', '\\']) {
            bail!("run_id must be a non-empty name without path separators");
        }
        Ok(Self {
            backend,
            knowledge_base,
            store: resolve(base, &raw.store),
            runs: resolve(base, &raw.runs),
            run_id: raw.run_id,
            harness,
            provider,
            embedder: raw.embedder,
            search,
            fastpath: raw.fastpath,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("config {}", path.display()))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs.join(&self.run_id)
    }

    pub fn harness(&self) -> Result<Box<dyn EvalHarness>> {
        Ok(match self.harness.kind {
            HarnessKind::Sim => {
                let model = match &self.harness.sim_model {
                    Some(p) => SimCostModel::load(p)?,
                    None => SimCostModel::default(),
                };
                Box::new(SimHarness::new(model))
            }
            HarnessKind::Toolchain => {
                let cfg = self.harness.toolchain.clone().expect("checked at load");
                Box::new(ToolchainHarness::new(cfg).map_err(|e| anyhow::anyhow!("{e}"))?)
            }
        })
    }

    pub fn provider(&self) -> Result<Box<dyn AgentProvider>> {
        Ok(match self.provider.kind {
            ProviderKind::Mock => {
                let path = self.provider.script.as_ref().expect("checked at load");
                Box::new(MockProvider::new(MockScript::load(path)?))
            }
            ProviderKind::Remote => Box::new(RemoteProvider::new(
                self.provider.remote.clone().expect("checked at load"),
            )?),
        })
    }

    pub fn embedder(&self) -> Box<dyn EmbeddingProvider> {
        match self.embedder.kind {
            EmbedderKind::Hash => Box::new(HashEmbedder::default()),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(
                self.embedder.remote.clone().expect("checked at load"),
            )),
        }
    }

    pub fn agent_context(&self) -> Result<AgentContext> {
        let table = match &self.harness.arch_table {
            Some(p) => ArchTable::load(p)?,
            None => ArchTable::shipped(),
        };
        let hw = extract_hardware_context(&self.harness.profile, &table)?;
        for w in &hw.warnings {
            log::warn!("{w}");
        }
        Ok(match &self.knowledge_base {
            Some(kb) => assemble_context(self.backend, hw.context, kb)?,
            None => {
                log::warn!("no knowledge base configured; prompts carry hardware context only");
                AgentContext::bare(self.backend, hw.context)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str =
        "backend = \"GIN\"\n[harness]\nkind = \"sim\"\n[provider]\nkind = \"mock\"\nscript = \"Cargo.toml\"\n";

    fn base() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
    }

    #[test]
    fn minimal_config_resolves_paths() {
        let c = RunConfig::parse(MIN, &base()).unwrap();
        assert_eq!(c.backend, Backend::Gin);
        assert_eq!(c.store, base().join("store"));
        assert_eq!(c.run_dir(), base().join("runs/run"));
        assert_eq!(c.provider.script, Some(base().join("Cargo.toml")));
    }

    #[test]
    fn bad_values_are_rejected() {
        let unknown = MIN.replace("\"GIN\"", "\"NVSHMEM\"");
        assert!(RunConfig::parse(&unknown, &base()).is_err());
        let missing = MIN.replace("Cargo.toml", "nope.toml");
        assert!(RunConfig::parse(&missing, &base()).is_err());
        let weights = format!("{MIN}[search]\nalpha = 1.5\n");
        assert!(RunConfig::parse(&weights, &base()).is_err());
        let extra = format!("{MIN}colour = 1\n");
        assert!(RunConfig::parse(&extra, &base()).is_err());
    }
}
