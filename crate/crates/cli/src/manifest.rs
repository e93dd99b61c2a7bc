use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub const RUN_MANIFEST: &str = "run.json";

/// Everything needed to repeat a run. No timestamps, so identical runs
/// write identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub subcommand: &'static str,
    pub seed: u64,
    pub threads: Option<usize>,
    pub format_versions: FormatVersions,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct FormatVersions {
    pub checkpoint: u32,
    pub dataset: u32,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, seed: u64, threads: Option<usize>, config: serde_json::Value) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            threads,
            format_versions: FormatVersions {
                checkpoint: psfcn::checkpoint::FORMAT_VERSION,
                dataset: 1,
            },
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, out: &Path) -> anyhow::Result<()> {
        let path = out.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
